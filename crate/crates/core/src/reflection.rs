//! Online correction after a rejected recommendation: rejected items become
//! explicit negatives against the user's historical positives (D4), and a few
//! epochs of batch gradient descent run on a session-local copy-on-write
//! overlay of the shared model.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{item_pair_objective, Embeddings, EmbeddingsMut, FmModel, PairTriple, ParamRow, SparseGrad};
use crate::ids::{AttrId, ItemId, UserId};
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReflectionConfig {
    pub epochs: usize,
    pub lr: f64,
    pub reg: f64,
    /// Historical positives sampled into D4 per reflection.
    pub max_positives: usize,
}

impl Default for ReflectionConfig {
    fn default() -> Self {
        ReflectionConfig { epochs: 4, lr: 0.01, reg: 0.001, max_positives: 100 }
    }
}

impl ReflectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("reflection needs at least one epoch"));
        }
        if !(self.lr > 0.0) || !(self.reg >= 0.0) {
            return Err(Error::invalid("reflection lr must be positive and reg non-negative"));
        }
        Ok(())
    }
}

/// Copy-on-write view over a shared [`FmModel`]. Only rows that were
/// written (or explicitly injected) are owned by the overlay.
#[derive(Debug, Clone)]
pub struct ModelOverlay {
    base: Arc<FmModel>,
    rows: BTreeMap<ParamRow, Vec<f64>>,
}

impl ModelOverlay {
    pub fn new(base: Arc<FmModel>) -> Self {
        ModelOverlay { base, rows: BTreeMap::new() }
    }

    pub fn base(&self) -> &Arc<FmModel> {
        &self.base
    }

    /// Injects a user row, e.g. a pseudo-user for someone without history.
    pub fn with_user_row(mut self, user: UserId, row: Vec<f64>) -> Result<Self> {
        if row.len() != self.base.dim() {
            return Err(Error::DimensionMismatch { expected: self.base.dim(), got: row.len() });
        }
        self.rows.insert(ParamRow::User(user), row);
        Ok(self)
    }

    pub fn touched_rows(&self) -> impl Iterator<Item = &ParamRow> {
        self.rows.keys()
    }

    pub fn is_pristine(&self) -> bool {
        self.rows.is_empty()
    }

    /// Drops every local row.
    pub fn reset(&mut self) {
        self.rows.clear();
    }

    /// Largest absolute difference between the overlay and its base.
    pub fn max_abs_change(&self) -> f64 {
        let mut m: f64 = 0.0;
        for (row, local) in &self.rows {
            if let Ok(base) = self.base.row(*row) {
                for (a, b) in local.iter().zip(base) {
                    m = m.max(libm::fabs(a - b));
                }
            }
        }
        m
    }

    fn lookup(&self, row: ParamRow) -> Option<&[f64]> {
        self.rows.get(&row).map(Vec::as_slice)
    }
}

impl Embeddings for ModelOverlay {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn user(&self, user: UserId) -> Result<&[f64]> {
        match self.lookup(ParamRow::User(user)) {
            Some(r) => Ok(r),
            None => self.base.user(user),
        }
    }

    fn item(&self, item: ItemId) -> Result<&[f64]> {
        match self.lookup(ParamRow::Item(item)) {
            Some(r) => Ok(r),
            None => self.base.item(item),
        }
    }

    fn attr(&self, attr: AttrId) -> Result<&[f64]> {
        match self.lookup(ParamRow::Attr(attr)) {
            Some(r) => Ok(r),
            None => self.base.attr(attr),
        }
    }

    fn item_bias(&self, item: ItemId) -> f64 {
        self.lookup(ParamRow::ItemBias(item)).map_or_else(|| self.base.item_bias(item), |r| r[0])
    }

    fn attr_bias(&self, attr: AttrId) -> f64 {
        self.lookup(ParamRow::AttrBias(attr)).map_or_else(|| self.base.attr_bias(attr), |r| r[0])
    }

    fn has_bias(&self) -> bool {
        self.base.has_bias()
    }
}

impl EmbeddingsMut for ModelOverlay {
    fn row_mut(&mut self, row: ParamRow) -> Result<&mut [f64]> {
        if !self.rows.contains_key(&row) {
            let copy = self.base.row(row)?.to_vec();
            self.rows.insert(row, copy);
        }
        Ok(self.rows.get_mut(&row).expect("inserted above"))
    }

    fn row(&self, row: ParamRow) -> Result<&[f64]> {
        match self.lookup(row) {
            Some(r) => Ok(r),
            None => self.base.row(row),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReflectionOutcome {
    /// Number of `(positive, rejected)` pairs in D4.
    pub pairs: usize,
    /// Mean D4 loss before the first epoch and after each epoch.
    pub losses: Vec<f64>,
}

impl ReflectionOutcome {
    pub fn is_noop(&self) -> bool {
        self.pairs == 0
    }
}

/// D4 = positives × rejected, dropping pairs whose two items coincide.
pub fn build_d4(
    user: UserId,
    rejected: &[ItemId],
    confirmed: &BTreeSet<AttrId>,
    positives: &[ItemId],
) -> Vec<PairTriple<ItemId>> {
    let mut out = Vec::with_capacity(positives.len() * rejected.len());
    for &pos in positives {
        for &neg in rejected {
            if pos != neg {
                out.push(PairTriple { user, pos, neg, context: confirmed.clone() });
            }
        }
    }
    out
}

/// Full-batch gradient descent on the mean BPR loss over D4.
///
/// `history_positives` beyond `cfg.max_positives` are subsampled with `rng`.
pub fn reflect<M: EmbeddingsMut>(
    model: &mut M,
    user: UserId,
    rejected: &[ItemId],
    confirmed: &BTreeSet<AttrId>,
    history_positives: &BTreeSet<ItemId>,
    cfg: &ReflectionConfig,
    rng: &mut Rng,
) -> Result<ReflectionOutcome> {
    cfg.validate()?;
    if rejected.is_empty() {
        return Err(Error::invalid("reflection needs at least one rejected item"));
    }
    let mut positives: Vec<ItemId> = history_positives.iter().copied().collect();
    if positives.len() > cfg.max_positives {
        positives.shuffle(rng);
        positives.truncate(cfg.max_positives);
        positives.sort_unstable();
    }
    let d4 = build_d4(user, rejected, confirmed, &positives);
    if d4.is_empty() {
        log::warn!("reflection for user {user} skipped: D4 is empty");
        return Ok(ReflectionOutcome::default());
    }
    let scale = 1.0 / d4.len() as f64;
    let mut grad = SparseGrad::new();
    let mut losses = vec![];
    let epoch_loss = |model: &M, grad: Option<&mut SparseGrad>| -> Result<f64> {
        let mut total = 0.0;
        match grad {
            Some(g) => {
                for t in &d4 {
                    total += item_pair_objective(model, t, cfg.reg, Some((&mut *g, scale)))?;
                }
            }
            None => {
                for t in &d4 {
                    total += item_pair_objective(model, t, cfg.reg, None)?;
                }
            }
        }
        Ok(total * scale)
    };
    for _ in 0..cfg.epochs {
        grad.clear();
        let loss = epoch_loss(model, Some(&mut grad))?;
        if losses.is_empty() {
            losses.push(loss);
        }
        if !grad.is_finite() || !loss.is_finite() {
            return Err(Error::NonFinite { stage: "reflection", detail: alloc::format!("loss {loss}") });
        }
        grad.apply(model, cfg.lr)?;
        losses.push(epoch_loss(model, None)?);
    }
    Ok(ReflectionOutcome { pairs: d4.len(), losses })
}
