//! Interaction logs, attribute catalogs, the two-level taxonomy, pruning,
//! splitting, the conjunctive candidate filter and a synthetic generator.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{AttrId, ItemId, ParentId, UserId};
use crate::itemset::ItemSet;

/// Deduplicated user-item interactions over dense ids.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionLog {
    n_users: usize,
    n_items: usize,
    records: Vec<(UserId, ItemId)>,
    user_index: Vec<BTreeSet<ItemId>>,
}

impl InteractionLog {
    /// Builds a log, dropping repeated `(user, item)` pairs (first occurrence wins).
    pub fn from_records(
        n_users: usize,
        n_items: usize,
        records: impl IntoIterator<Item = (UserId, ItemId)>,
    ) -> Result<Self> {
        let mut user_index = vec![BTreeSet::new(); n_users];
        let mut kept = Vec::new();
        for (u, v) in records {
            if u.index() >= n_users {
                return Err(Error::UnknownUser(u));
            }
            if v.index() >= n_items {
                return Err(Error::UnknownItem(v));
            }
            if user_index[u.index()].insert(v) {
                kept.push((u, v));
            }
        }
        Ok(InteractionLog { n_users, n_items, records: kept, user_index })
    }

    pub fn empty(n_users: usize, n_items: usize) -> Self {
        InteractionLog {
            n_users,
            n_items,
            records: Vec::new(),
            user_index: vec![BTreeSet::new(); n_users],
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn records(&self) -> &[(UserId, ItemId)] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `V_u⁺`; empty for unknown users.
    pub fn positives(&self, user: UserId) -> &BTreeSet<ItemId> {
        static EMPTY: BTreeSet<ItemId> = BTreeSet::new();
        self.user_index.get(user.index()).unwrap_or(&EMPTY)
    }

    pub fn contains(&self, user: UserId, item: ItemId) -> bool {
        self.positives(user).contains(&item)
    }

    /// Users with at least one interaction, ascending.
    pub fn active_users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.user_index
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .map(|(u, _)| UserId::new(u))
    }

    /// Union of two logs over the same id space.
    pub fn merged(&self, other: &InteractionLog) -> Result<InteractionLog> {
        if self.n_users != other.n_users || self.n_items != other.n_items {
            return Err(Error::invalid("merging logs over different id spaces"));
        }
        InteractionLog::from_records(
            self.n_users,
            self.n_items,
            self.records.iter().chain(&other.records).copied(),
        )
    }
}

/// Item → attribute sets `P_v`, plus the inverted index attribute → items.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeCatalog {
    n_attrs: usize,
    item_attrs: Vec<Vec<AttrId>>,
    inverted: Vec<ItemSet>,
}

impl AttributeCatalog {
    /// `item_attrs[v]` lists the attributes of item `v`. Every attribute in
    /// `0..n_attrs` must label at least one item.
    pub fn new(n_attrs: usize, item_attrs: Vec<Vec<AttrId>>) -> Result<Self> {
        let n_items = item_attrs.len();
        let mut inverted = vec![ItemSet::empty(n_items); n_attrs];
        let mut normalized = Vec::with_capacity(n_items);
        for (v, attrs) in item_attrs.into_iter().enumerate() {
            let mut attrs = attrs;
            attrs.sort_unstable();
            attrs.dedup();
            for &p in &attrs {
                if p.index() >= n_attrs {
                    return Err(Error::UnknownAttribute(p));
                }
                inverted[p.index()].insert(ItemId::new(v));
            }
            normalized.push(attrs);
        }
        if let Some(p) = inverted.iter().position(ItemSet::is_empty) {
            return Err(Error::invalid(format!("attribute {p} labels no item")));
        }
        Ok(AttributeCatalog { n_attrs, item_attrs: normalized, inverted })
    }

    pub fn n_attrs(&self) -> usize {
        self.n_attrs
    }

    pub fn n_items(&self) -> usize {
        self.item_attrs.len()
    }

    /// `P_v`, sorted ascending.
    pub fn attrs_of(&self, item: ItemId) -> Result<&[AttrId]> {
        self.item_attrs
            .get(item.index())
            .map(Vec::as_slice)
            .ok_or(Error::UnknownItem(item))
    }

    pub fn has_attr(&self, item: ItemId, attr: AttrId) -> bool {
        self.item_attrs
            .get(item.index())
            .is_some_and(|a| a.binary_search(&attr).is_ok())
    }

    /// Items carrying `attr`.
    pub fn items_with(&self, attr: AttrId) -> Result<&ItemSet> {
        self.inverted.get(attr.index()).ok_or(Error::UnknownAttribute(attr))
    }

    pub fn check_attr(&self, attr: AttrId) -> Result<()> {
        if attr.index() < self.n_attrs {
            Ok(())
        } else {
            Err(Error::UnknownAttribute(attr))
        }
    }

    /// Rebuilds `item → attributes` from the inverted index alone.
    pub fn transpose_inverted(&self) -> Vec<Vec<AttrId>> {
        let mut out = vec![Vec::new(); self.n_items()];
        for (p, items) in self.inverted.iter().enumerate() {
            for v in items.iter() {
                out[v.index()].push(AttrId::new(p));
            }
        }
        out
    }

    pub fn item_attr_lists(&self) -> &[Vec<AttrId>] {
        &self.item_attrs
    }
}

/// `{ v : confirmed ⊆ P_v }`; the empty set confirms nothing and keeps every item.
pub fn candidate_items(catalog: &AttributeCatalog, confirmed: &BTreeSet<AttrId>) -> Result<ItemSet> {
    let mut set = ItemSet::full(catalog.n_items());
    for &p in confirmed {
        set.intersect_with(catalog.items_with(p)?);
    }
    Ok(set)
}

/// Two-level attribute taxonomy used by enumerated questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    parents: Vec<Vec<AttrId>>,
    child_to_parent: Vec<Option<ParentId>>,
}

impl Taxonomy {
    /// `parents[j]` lists the children of parent `j`. A child may belong to at
    /// most one parent; attributes outside every parent are allowed.
    pub fn new(n_attrs: usize, parents: Vec<Vec<AttrId>>) -> Result<Self> {
        let mut child_to_parent = vec![None; n_attrs];
        let mut normalized = Vec::with_capacity(parents.len());
        for (j, children) in parents.into_iter().enumerate() {
            let mut children = children;
            children.sort_unstable();
            children.dedup();
            if children.is_empty() {
                return Err(Error::invalid(format!("parent {j} has no children")));
            }
            for &c in &children {
                let slot = child_to_parent
                    .get_mut(c.index())
                    .ok_or(Error::UnknownAttribute(c))?;
                if slot.is_some() {
                    return Err(Error::invalid(format!("attribute {c} has two parents")));
                }
                *slot = Some(ParentId::new(j));
            }
            normalized.push(children);
        }
        Ok(Taxonomy { parents: normalized, child_to_parent })
    }

    /// Consecutive groups of `group` attributes: ⌈n_attrs / group⌉ parents.
    pub fn chunked(n_attrs: usize, group: usize) -> Result<Self> {
        if group == 0 {
            return Err(Error::invalid("taxonomy group size must be positive"));
        }
        let parents = (0..n_attrs)
            .collect::<Vec<_>>()
            .chunks(group)
            .map(|c| c.iter().map(|&p| AttrId::new(p)).collect())
            .collect();
        Taxonomy::new(n_attrs, parents)
    }

    pub fn n_parents(&self) -> usize {
        self.parents.len()
    }

    pub fn n_attrs(&self) -> usize {
        self.child_to_parent.len()
    }

    pub fn children(&self, parent: ParentId) -> Result<&[AttrId]> {
        self.parents
            .get(parent.index())
            .map(Vec::as_slice)
            .ok_or(Error::UnknownParent(parent))
    }

    pub fn parent_of(&self, attr: AttrId) -> Option<ParentId> {
        self.child_to_parent.get(attr.index()).copied().flatten()
    }

    pub fn parents(&self) -> impl Iterator<Item = (ParentId, &[AttrId])> {
        self.parents.iter().enumerate().map(|(j, c)| (ParentId::new(j), c.as_slice()))
    }
}

/// Keeps only users with at least `min_count` interactions (inclusive).
/// The id space is unchanged, so dropped users and items simply have no records.
pub fn prune_users(log: &InteractionLog, min_count: usize) -> InteractionLog {
    let records = log
        .records
        .iter()
        .filter(|(u, _)| log.positives(*u).len() >= min_count)
        .copied();
    InteractionLog::from_records(log.n_users, log.n_items, records)
        .expect("ids already validated")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { ratios: [0.7, 0.2, 0.1], seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::invalid("split ratios must be finite and non-negative"));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` items over `ratios`.
/// Ties in the fractional part go to the earlier split.
pub fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| libm::floor(*q) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - libm::floor(quotas[a]);
        let fb = quotas[b] - libm::floor(quotas[b]);
        fb.partial_cmp(&fa).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per-user random partition into (train, valid, test).
///
/// Users with fewer interactions than there are non-empty splits keep all
/// of them in train.
pub fn split_interactions(
    log: &InteractionLog,
    spec: &SplitSpec,
) -> Result<(InteractionLog, InteractionLog, InteractionLog)> {
    spec.validate()?;
    let live_splits = spec.ratios.iter().filter(|r| **r > 0.0).count();
    let mut rng = crate::rng_from_seed(spec.seed);
    // assignment[u] maps item -> split index
    let mut assignment: Vec<alloc::collections::BTreeMap<ItemId, u8>> =
        vec![Default::default(); log.n_users];
    for u in 0..log.n_users {
        let mut items: Vec<ItemId> = log.user_index[u].iter().copied().collect();
        if items.is_empty() {
            continue;
        }
        if items.len() < live_splits {
            for v in items {
                assignment[u].insert(v, 0);
            }
            continue;
        }
        items.shuffle(&mut rng);
        let counts = largest_remainder(items.len(), &spec.ratios);
        let mut it = items.into_iter();
        for (split, &c) in counts.iter().enumerate() {
            for v in it.by_ref().take(c) {
                assignment[u].insert(v, split as u8);
            }
        }
    }
    let pick = |split: u8| {
        InteractionLog::from_records(
            log.n_users,
            log.n_items,
            log.records
                .iter()
                .filter(|(u, v)| assignment[u.index()].get(v) == Some(&split))
                .copied(),
        )
    };
    Ok((pick(0)?, pick(1)?, pick(2)?))
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub n_users: usize,
    pub n_items: usize,
    pub n_attrs: usize,
    pub attrs_per_item: usize,
    pub interactions_per_user: usize,
    /// 0 gives uniform item choice, 1 weights items purely by overlap with
    /// the user's latent preferred attributes.
    pub affinity_bias: f64,
    pub seed: u64,
    /// Zipf exponent of attribute popularity (0 = every attribute equally common).
    pub popularity_skew: f64,
    /// Size of each user's latent preferred-attribute set.
    pub preferred_attrs: usize,
    /// Exponent on the overlap fraction in the choice weight.
    pub affinity_power: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_users: 200,
            n_items: 1000,
            n_attrs: 30,
            attrs_per_item: 5,
            interactions_per_user: 50,
            affinity_bias: 0.8,
            seed: 0,
            popularity_skew: 0.0,
            preferred_attrs: 0,
            affinity_power: 1.0,
        }
    }
}

/// Attributes per taxonomy parent in synthetic data.
pub const SYNTH_PARENT_GROUP: usize = 5;

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub log: InteractionLog,
    pub catalog: AttributeCatalog,
    pub taxonomy: Taxonomy,
    /// Latent preferred attributes per user (ground truth of the generator).
    pub user_prefs: Vec<Vec<AttrId>>,
}

/// Weighted draw of one index; `None` when all weights are zero.
fn weighted_pick(rng: &mut crate::Rng, weights: &[f64]) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut x = rng.gen::<f64>() * total;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = Some(i);
        if x < w {
            return Some(i);
        }
        x -= w;
    }
    last
}

/// Generates a dataset in which user choices are driven by attribute overlap.
///
/// Every user draws a latent set of preferred attributes; items draw
/// `attrs_per_item` attributes (optionally Zipf-skewed by popularity); each
/// user then picks `interactions_per_user` distinct items with weight
/// `(1 - b) + b * overlap / |prefs|`. Attributes are grouped into parents of
/// five consecutive ids.
pub fn synth_dataset(params: &SynthParams) -> Result<SynthDataset> {
    let p = params;
    if p.n_users == 0 || p.n_items == 0 || p.n_attrs == 0 {
        return Err(Error::invalid("synthetic counts must be at least 1"));
    }
    if p.attrs_per_item == 0 || p.attrs_per_item > p.n_attrs {
        return Err(Error::invalid("attrs_per_item must be in 1..=n_attrs"));
    }
    if p.interactions_per_user == 0 || p.interactions_per_user > p.n_items {
        return Err(Error::invalid("interactions_per_user must be in 1..=n_items"));
    }
    if !(0.0..=1.0).contains(&p.affinity_bias) {
        return Err(Error::invalid("affinity_bias must lie in [0, 1]"));
    }
    if p.n_items * p.attrs_per_item < p.n_attrs {
        return Err(Error::invalid("too few item slots to cover every attribute"));
    }
    if p.popularity_skew < 0.0 || !p.popularity_skew.is_finite() {
        return Err(Error::invalid("popularity_skew must be finite and non-negative"));
    }
    if !(p.affinity_power > 0.0 && p.affinity_power.is_finite()) {
        return Err(Error::invalid("affinity_power must be finite and positive"));
    }
    let mut rng = crate::rng_from_seed(p.seed);

    // popularity rank is a random permutation of attribute ids
    let mut rank: Vec<usize> = (0..p.n_attrs).collect();
    rank.shuffle(&mut rng);
    let popularity: Vec<f64> = (0..p.n_attrs)
        .map(|a| 1.0 / libm::pow((rank[a] + 1) as f64, p.popularity_skew))
        .collect();

    let mut item_attrs: Vec<Vec<AttrId>> = vec![Vec::new(); p.n_items];
    // seed coverage: attribute a is forced onto a distinct random item slot
    let mut slots: Vec<usize> = (0..p.n_items * p.attrs_per_item).collect();
    slots.shuffle(&mut rng);
    let mut forced = vec![vec![]; p.n_items];
    for a in 0..p.n_attrs {
        forced[slots[a] / p.attrs_per_item].push(a);
    }
    for (v, attrs) in item_attrs.iter_mut().enumerate() {
        let mut w = popularity.clone();
        for &a in &forced[v] {
            attrs.push(AttrId::new(a));
            w[a] = 0.0;
        }
        while attrs.len() < p.attrs_per_item {
            let a = weighted_pick(&mut rng, &w).expect("attrs_per_item <= n_attrs");
            w[a] = 0.0;
            attrs.push(AttrId::new(a));
        }
        attrs.sort_unstable();
    }
    let catalog = AttributeCatalog::new(p.n_attrs, item_attrs)?;

    let pref_size = if p.preferred_attrs == 0 {
        p.attrs_per_item.max(2).min(p.n_attrs)
    } else {
        p.preferred_attrs.min(p.n_attrs)
    };
    let all_attrs: Vec<usize> = (0..p.n_attrs).collect();
    let mut user_prefs = Vec::with_capacity(p.n_users);
    let mut records = Vec::with_capacity(p.n_users * p.interactions_per_user);
    let mut overlap = vec![0.0f64; p.n_items];
    let mut weights = vec![0.0f64; p.n_items];
    for u in 0..p.n_users {
        let mut prefs: Vec<AttrId> = all_attrs
            .choose_multiple(&mut rng, pref_size)
            .map(|&a| AttrId::new(a))
            .collect();
        prefs.sort_unstable();
        for (v, o) in overlap.iter_mut().enumerate() {
            let attrs = &catalog.item_attrs[v];
            *o = prefs.iter().filter(|a| attrs.binary_search(a).is_ok()).count() as f64
                / pref_size as f64;
        }
        for v in 0..p.n_items {
            let affinity = if p.affinity_power == 1.0 { overlap[v] } else { libm::pow(overlap[v], p.affinity_power) };
            weights[v] = (1.0 - p.affinity_bias) + p.affinity_bias * affinity;
        }
        for _ in 0..p.interactions_per_user {
            let Some(v) = weighted_pick(&mut rng, &weights) else { break };
            weights[v] = 0.0;
            records.push((UserId::new(u), ItemId::new(v)));
        }
        user_prefs.push(prefs);
    }
    let log = InteractionLog::from_records(p.n_users, p.n_items, records)?;
    let taxonomy = Taxonomy::chunked(p.n_attrs, SYNTH_PARENT_GROUP)?;
    Ok(SynthDataset { log, catalog, taxonomy, user_prefs })
}
