//! Construction of the pairwise training sets: D1 (all non-interacted items),
//! D2 (non-interacted items inside the attribute-filtered candidate set) and
//! D3 (attributes of the interacted item against all other attributes).

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datasets::{candidate_items, AttributeCatalog, InteractionLog};
use crate::error::{Error, Result};
use crate::ids::{AttrId, ItemId, UserId};
use crate::itemset::ItemSet;
use crate::Rng;

/// `(u, pos, neg)` with the confirmed-attribute context `P_u` it is scored under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTriple<T> {
    pub user: UserId,
    pub pos: T,
    pub neg: T,
    pub context: BTreeSet<AttrId>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairwiseBatch<T> {
    pub triples: Vec<PairTriple<T>>,
    /// Positives for which no negative could be drawn.
    pub skipped: usize,
}

impl<T> PairwiseBatch<T> {
    pub fn new() -> Self {
        PairwiseBatch { triples: Vec::new(), skipped: 0 }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// A conversational context observed for a positive interaction, e.g. the
/// attributes a user had confirmed at some turn of a simulated dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationContext {
    pub user: UserId,
    pub item: ItemId,
    pub confirmed: BTreeSet<AttrId>,
}

/// Uniformly sized random subset of `attrs`, with at least `min_len` elements.
fn random_subset(attrs: &[AttrId], min_len: usize, rng: &mut Rng) -> BTreeSet<AttrId> {
    let len = rng.gen_range(min_len..=attrs.len());
    attrs.choose_multiple(rng, len).copied().collect()
}

/// Random non-empty subset of `P_v`, mimicking attributes revealed mid-dialogue.
pub fn simulated_context(catalog: &AttributeCatalog, item: ItemId, rng: &mut Rng) -> Result<BTreeSet<AttrId>> {
    let attrs = catalog.attrs_of(item)?;
    if attrs.is_empty() {
        return Err(Error::ItemWithoutAttributes(item));
    }
    Ok(random_subset(attrs, 1, rng))
}

/// Uniform draw from a bitset.
fn pick_from(set: &ItemSet, rng: &mut Rng) -> Option<ItemId> {
    let n = set.len();
    if n == 0 {
        return None;
    }
    set.iter().nth(rng.gen_range(0..n))
}

/// D1: for every logged `(u, v)`, `negatives` items drawn uniformly from
/// `V \ V_u⁺`. Each positive gets a random non-empty context `P_u ⊆ P_v`.
pub fn sample_d1(
    log: &InteractionLog,
    catalog: &AttributeCatalog,
    negatives: usize,
    rng: &mut Rng,
) -> Result<PairwiseBatch<ItemId>> {
    let n_items = catalog.n_items();
    let mut batch = PairwiseBatch::new();
    for &(user, pos) in log.records() {
        let positives = log.positives(user);
        if positives.len() >= n_items {
            batch.skipped += 1;
            continue;
        }
        let context = simulated_context(catalog, pos, rng)?;
        for _ in 0..negatives {
            let neg = loop {
                let cand = ItemId::new(rng.gen_range(0..n_items));
                if !positives.contains(&cand) {
                    break cand;
                }
            };
            batch.triples.push(PairTriple { user, pos, neg, context: context.clone() });
        }
    }
    Ok(batch)
}

/// D2: negatives drawn uniformly from `candidate_items(P_u) \ V_u⁺`.
///
/// `contexts` supplies `(u, v, P_u)` from dialogue histories; when `None`,
/// every logged positive gets a random non-empty `P_u ⊆ P_v`.
pub fn sample_d2(
    log: &InteractionLog,
    catalog: &AttributeCatalog,
    contexts: Option<&[ConversationContext]>,
    negatives: usize,
    rng: &mut Rng,
) -> Result<PairwiseBatch<ItemId>> {
    let mut batch = PairwiseBatch::new();
    let mut push = |user: UserId, pos: ItemId, context: BTreeSet<AttrId>, rng: &mut Rng| -> Result<()> {
        let mut pool = candidate_items(catalog, &context)?;
        for &v in log.positives(user) {
            pool.remove(v);
        }
        pool.remove(pos);
        if pool.is_empty() {
            batch.skipped += 1;
            return Ok(());
        }
        for _ in 0..negatives {
            let neg = pick_from(&pool, rng).expect("non-empty pool");
            batch.triples.push(PairTriple { user, pos, neg, context: context.clone() });
        }
        Ok(())
    };
    match contexts {
        Some(list) => {
            for c in list {
                push(c.user, c.item, c.confirmed.clone(), rng)?;
            }
        }
        None => {
            for &(user, pos) in log.records() {
                let context = simulated_context(catalog, pos, rng)?;
                push(user, pos, context, rng)?;
            }
        }
    }
    Ok(batch)
}

/// D3: for every `(u, v)` and every `p ∈ P_v`, negatives drawn uniformly from
/// `P \ P_v`, scored under a random proper subset of `P_v` that excludes `p`.
/// Items whose attribute set is all of `P` are skipped.
pub fn sample_d3(
    log: &InteractionLog,
    catalog: &AttributeCatalog,
    negatives: usize,
    rng: &mut Rng,
) -> Result<PairwiseBatch<AttrId>> {
    let n_attrs = catalog.n_attrs();
    let mut batch = PairwiseBatch::new();
    let mut others: Vec<AttrId> = Vec::new();
    for &(user, item) in log.records() {
        let pv = catalog.attrs_of(item)?;
        if pv.is_empty() {
            return Err(Error::ItemWithoutAttributes(item));
        }
        if pv.len() >= n_attrs {
            batch.skipped += 1;
            continue;
        }
        for &pos in pv {
            others.clear();
            others.extend(pv.iter().copied().filter(|&p| p != pos));
            let context = random_subset(&others, 0, rng);
            for _ in 0..negatives {
                let neg = loop {
                    let cand = AttrId::new(rng.gen_range(0..n_attrs));
                    if pv.binary_search(&cand).is_err() {
                        break cand;
                    }
                };
                batch.triples.push(PairTriple { user, pos, neg, context: context.clone() });
            }
        }
    }
    Ok(batch)
}
