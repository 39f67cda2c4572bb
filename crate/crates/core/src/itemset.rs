//! Fixed-universe bitset over item ids.

use alloc::vec;
use alloc::vec::Vec;

use crate::ids::ItemId;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ItemSet {
    words: Vec<u64>,
    universe: usize,
}

impl ItemSet {
    pub fn empty(universe: usize) -> Self {
        ItemSet { words: vec![0; universe.div_ceil(64)], universe }
    }

    pub fn full(universe: usize) -> Self {
        let mut set = Self::empty(universe);
        for w in set.words.iter_mut() {
            *w = u64::MAX;
        }
        set.clear_tail();
        set
    }

    pub fn from_items(universe: usize, items: impl IntoIterator<Item = ItemId>) -> Self {
        let mut set = Self::empty(universe);
        for item in items {
            set.insert(item);
        }
        set
    }

    fn clear_tail(&mut self) {
        let rem = self.universe % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    /// Panics if `item` is outside the universe.
    pub fn insert(&mut self, item: ItemId) -> bool {
        let i = item.index();
        assert!(i < self.universe, "item {i} outside universe {}", self.universe);
        let (w, b) = (i / 64, i % 64);
        let was = self.words[w] >> b & 1 == 1;
        self.words[w] |= 1 << b;
        !was
    }

    pub fn remove(&mut self, item: ItemId) -> bool {
        let i = item.index();
        if i >= self.universe {
            return false;
        }
        let (w, b) = (i / 64, i % 64);
        let was = self.words[w] >> b & 1 == 1;
        self.words[w] &= !(1 << b);
        was
    }

    pub fn contains(&self, item: ItemId) -> bool {
        let i = item.index();
        i < self.universe && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn intersect_with(&mut self, other: &ItemSet) {
        debug_assert_eq!(self.universe, other.universe);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= *b;
        }
    }

    pub fn subtract(&mut self, other: &ItemSet) {
        debug_assert_eq!(self.universe, other.universe);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !*b;
        }
    }

    /// `|self ∩ other|` without materializing the intersection.
    pub fn intersection_len(&self, other: &ItemSet) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn is_subset(&self, other: &ItemSet) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Ascending item ids.
    pub fn iter(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            core::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(ItemId::new(wi * 64 + b))
            })
        })
    }

    pub fn to_vec(&self) -> Vec<ItemId> {
        self.iter().collect()
    }
}
