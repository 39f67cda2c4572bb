//! BPR objectives with hand-derived gradients, and the SGD trainers.
//!
//! For a triple `(u, v, v′)` under context `P_u` with `q = u + Σ_{p∈P_u} p`:
//!
//! ```text
//! Δ      = qᵀv − qᵀv′ (+ b_v − b_v′)
//! loss   = −ln σ(Δ) + λ Σ_{rows touched} ‖row‖²
//! ∂/∂Δ   = −σ(−Δ) =: g
//! ∂/∂u   = g (v − v′)          ∂/∂p  = g (v − v′)   for p ∈ P_u
//! ∂/∂v   = g q                 ∂/∂v′ = −g q
//! ```
//!
//! The attribute objective is the same with `(v, v′)` replaced by `(p, p′)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{Embeddings, EmbeddingsMut, FmModel, ParamRow, SparseGrad};
use super::sampling::{sample_d1, sample_d2, sample_d3, ConversationContext, PairTriple, PairwiseBatch};
use crate::datasets::{AttributeCatalog, InteractionLog};
use crate::error::{Error, Result};
use crate::ids::{AttrId, ItemId};
use crate::math::{axpy, dot, neg_log_sigmoid, sigmoid, sq_norm};
use crate::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub dim: usize,
    pub lr_item: f64,
    pub lr_attr: f64,
    /// λ_Θ, applied to the rows each triple touches.
    pub reg: f64,
    /// Epoch cap for each task within a phase.
    pub epochs_per_phase: usize,
    pub phases: usize,
    pub negatives_per_positive: usize,
    pub batch_size: usize,
    /// Relative loss improvement below which a task counts as converged.
    pub tolerance: f64,
    pub init_scale: f64,
    pub use_bias: bool,
    /// Add the candidate-conditioned negatives (D2) to the item task.
    pub attribute_aware: bool,
    /// Alternate the attribute task with the item task.
    pub multitask: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 64,
            lr_item: 0.01,
            lr_attr: 0.001,
            reg: 0.001,
            epochs_per_phase: 30,
            phases: 2,
            negatives_per_positive: 1,
            batch_size: 1,
            tolerance: 1e-3,
            init_scale: 0.1,
            use_bias: false,
            attribute_aware: true,
            multitask: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_item > 0.0 && self.lr_attr > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(self.reg >= 0.0) {
            return Err(Error::invalid("regularization must be non-negative"));
        }
        if self.dim == 0 || self.batch_size == 0 || self.negatives_per_positive == 0 {
            return Err(Error::invalid("dim, batch_size and negatives_per_positive must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainStats {
    pub mean_loss_before: f64,
    pub mean_loss_after: f64,
    pub triples: usize,
    pub skipped: usize,
}

impl TrainStats {
    pub fn relative_improvement(&self) -> f64 {
        if self.mean_loss_before == 0.0 {
            return 0.0;
        }
        (self.mean_loss_before - self.mean_loss_after) / self.mean_loss_before
    }
}

fn reg_term<E: Embeddings + ?Sized>(model: &E, rows: &[ParamRow], reg: f64, grad: &mut Option<(&mut SparseGrad, f64)>) -> Result<f64> {
    if reg == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut seen: Vec<ParamRow> = Vec::with_capacity(rows.len());
    for &row in rows {
        if seen.contains(&row) {
            continue;
        }
        seen.push(row);
        let values: Vec<f64> = match row {
            ParamRow::User(u) => model.user(u)?.to_vec(),
            ParamRow::Item(v) => model.item(v)?.to_vec(),
            ParamRow::Attr(p) => model.attr(p)?.to_vec(),
            ParamRow::ItemBias(v) => vec![model.item_bias(v)],
            ParamRow::AttrBias(p) => vec![model.attr_bias(p)],
        };
        total += sq_norm(&values);
        if let Some((g, scale)) = grad.as_mut() {
            g.add(row, 2.0 * reg * *scale, &values);
        }
    }
    Ok(reg * total)
}

/// Loss of one item triple; when `grad` is given, adds `scale · ∇loss` to it.
pub fn item_pair_objective<E: Embeddings + ?Sized>(
    model: &E,
    triple: &PairTriple<ItemId>,
    reg: f64,
    mut grad: Option<(&mut SparseGrad, f64)>,
) -> Result<f64> {
    if triple.pos == triple.neg {
        return Err(Error::invalid("positive and negative coincide"));
    }
    let u = model.user(triple.user)?;
    let v = model.item(triple.pos)?;
    let vn = model.item(triple.neg)?;
    let mut q = u.to_vec();
    for &p in &triple.context {
        axpy(1.0, model.attr(p)?, &mut q);
    }
    let delta = dot(&q, v) - dot(&q, vn) + model.item_bias(triple.pos) - model.item_bias(triple.neg);
    let loss = neg_log_sigmoid(delta);
    if let Some((g, scale)) = grad.as_mut() {
        let gd = -sigmoid(-delta) * *scale;
        let diff: Vec<f64> = v.iter().zip(vn).map(|(a, b)| a - b).collect();
        g.add(ParamRow::User(triple.user), gd, &diff);
        g.add(ParamRow::Item(triple.pos), gd, &q);
        g.add(ParamRow::Item(triple.neg), -gd, &q);
        for &p in &triple.context {
            g.add(ParamRow::Attr(p), gd, &diff);
        }
        if model.has_bias() {
            g.add_scalar(ParamRow::ItemBias(triple.pos), gd);
            g.add_scalar(ParamRow::ItemBias(triple.neg), -gd);
        }
    }
    let mut rows = vec![ParamRow::User(triple.user), ParamRow::Item(triple.pos), ParamRow::Item(triple.neg)];
    rows.extend(triple.context.iter().map(|&p| ParamRow::Attr(p)));
    if model.has_bias() {
        rows.push(ParamRow::ItemBias(triple.pos));
        rows.push(ParamRow::ItemBias(triple.neg));
    }
    Ok(loss + reg_term(model, &rows, reg, &mut grad)?)
}

/// Loss of one attribute triple `(u, p, p′)`; the context must exclude both.
pub fn attr_pair_objective<E: Embeddings + ?Sized>(
    model: &E,
    triple: &PairTriple<AttrId>,
    reg: f64,
    mut grad: Option<(&mut SparseGrad, f64)>,
) -> Result<f64> {
    if triple.pos == triple.neg {
        return Err(Error::invalid("positive and negative coincide"));
    }
    if triple.context.contains(&triple.pos) || triple.context.contains(&triple.neg) {
        return Err(Error::invalid("attribute context contains a scored attribute"));
    }
    let u = model.user(triple.user)?;
    let p = model.attr(triple.pos)?;
    let pn = model.attr(triple.neg)?;
    let mut q = u.to_vec();
    for &c in &triple.context {
        axpy(1.0, model.attr(c)?, &mut q);
    }
    let delta = dot(&q, p) - dot(&q, pn) + model.attr_bias(triple.pos) - model.attr_bias(triple.neg);
    let loss = neg_log_sigmoid(delta);
    if let Some((g, scale)) = grad.as_mut() {
        let gd = -sigmoid(-delta) * *scale;
        let diff: Vec<f64> = p.iter().zip(pn).map(|(a, b)| a - b).collect();
        g.add(ParamRow::User(triple.user), gd, &diff);
        g.add(ParamRow::Attr(triple.pos), gd, &q);
        g.add(ParamRow::Attr(triple.neg), -gd, &q);
        for &c in &triple.context {
            g.add(ParamRow::Attr(c), gd, &diff);
        }
        if model.has_bias() {
            g.add_scalar(ParamRow::AttrBias(triple.pos), gd);
            g.add_scalar(ParamRow::AttrBias(triple.neg), -gd);
        }
    }
    let mut rows = vec![ParamRow::User(triple.user), ParamRow::Attr(triple.pos), ParamRow::Attr(triple.neg)];
    rows.extend(triple.context.iter().map(|&c| ParamRow::Attr(c)));
    if model.has_bias() {
        rows.push(ParamRow::AttrBias(triple.pos));
        rows.push(ParamRow::AttrBias(triple.neg));
    }
    Ok(loss + reg_term(model, &rows, reg, &mut grad)?)
}

type Objective<M, T> = fn(&M, &PairTriple<T>, f64, Option<(&mut SparseGrad, f64)>) -> Result<f64>;

/// Mean loss over `triples` (0 for an empty set).
pub fn mean_loss<M: Embeddings, T>(model: &M, triples: &[&PairTriple<T>], reg: f64, objective: Objective<M, T>) -> Result<f64> {
    if triples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for t in triples {
        total += objective(model, t, reg, None)?;
    }
    let mean = total / triples.len() as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite { stage: "loss", detail: format!("mean loss {mean}") });
    }
    Ok(mean)
}

/// One shuffled pass of mini-batch SGD (batch gradient = mean of triple gradients).
fn sgd_pass<M: EmbeddingsMut, T>(
    model: &mut M,
    triples: &[&PairTriple<T>],
    lr: f64,
    reg: f64,
    batch_size: usize,
    objective: Objective<M, T>,
    rng: &mut Rng,
) -> Result<()> {
    let mut order: Vec<usize> = (0..triples.len()).collect();
    order.shuffle(rng);
    let mut grad = SparseGrad::new();
    for chunk in order.chunks(batch_size) {
        grad.clear();
        let scale = 1.0 / chunk.len() as f64;
        for &i in chunk {
            let loss = objective(model, triples[i], reg, Some((&mut grad, scale)))?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { stage: "sgd", detail: format!("triple {i} loss {loss}") });
            }
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite { stage: "sgd", detail: "gradient".into() });
        }
        grad.apply(model, lr)?;
    }
    Ok(())
}

fn run_pass<M: EmbeddingsMut, T>(
    model: &mut M,
    triples: &[&PairTriple<T>],
    skipped: usize,
    lr: f64,
    reg: f64,
    batch_size: usize,
    objective: Objective<M, T>,
    rng: &mut Rng,
) -> Result<TrainStats> {
    let before = mean_loss(model, triples, reg, objective)?;
    sgd_pass(model, triples, lr, reg, batch_size, objective, rng)?;
    let after = mean_loss(model, triples, reg, objective)?;
    Ok(TrainStats { mean_loss_before: before, mean_loss_after: after, triples: triples.len(), skipped })
}

/// One SGD epoch of `L_item` over `D1 ∪ D2`.
pub fn train_item_task<M: EmbeddingsMut>(
    model: &mut M,
    d1: &PairwiseBatch<ItemId>,
    d2: &PairwiseBatch<ItemId>,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainStats> {
    let triples: Vec<&PairTriple<ItemId>> = d1.triples.iter().chain(&d2.triples).collect();
    run_pass(model, &triples, d1.skipped + d2.skipped, config.lr_item, config.reg, config.batch_size, item_pair_objective::<M>, rng)
}

/// One SGD epoch of `L_attr` over `D3`.
pub fn train_attr_task<M: EmbeddingsMut>(
    model: &mut M,
    d3: &PairwiseBatch<AttrId>,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainStats> {
    let triples: Vec<&PairTriple<AttrId>> = d3.triples.iter().collect();
    run_pass(model, &triples, d3.skipped, config.lr_attr, config.reg, config.batch_size, attr_pair_objective::<M>, rng)
}

/// What the offline trainer sees.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub log: &'a InteractionLog,
    pub catalog: &'a AttributeCatalog,
    /// Dialogue-history contexts for D2; random subsets of `P_v` when absent.
    pub contexts: Option<&'a [ConversationContext]>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseReport {
    pub item_epochs: Vec<TrainStats>,
    pub attr_epochs: Vec<TrainStats>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MultitaskReport {
    pub phases: Vec<PhaseReport>,
}

/// Fresh model shaped for `data`, initialized under `config`.
pub fn init_model(n_users: usize, data: &TrainingData<'_>, config: &TrainConfig, rng: &mut Rng) -> FmModel {
    FmModel::random(
        n_users,
        data.catalog.n_items(),
        data.catalog.n_attrs(),
        config.dim,
        config.init_scale,
        config.use_bias,
        rng,
    )
}

/// Alternating multi-task schedule: the item task until convergence, then the
/// attribute task until convergence, repeated `phases` times. Negatives are
/// re-drawn every epoch.
pub fn train_multitask<M: EmbeddingsMut>(
    model: &mut M,
    data: &TrainingData<'_>,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<MultitaskReport> {
    config.validate()?;
    let mut report = MultitaskReport::default();
    let empty = PairwiseBatch::new();
    for _ in 0..config.phases {
        let mut phase = PhaseReport::default();
        for _ in 0..config.epochs_per_phase {
            let d1 = sample_d1(data.log, data.catalog, config.negatives_per_positive, rng)?;
            let d2 = if config.attribute_aware {
                sample_d2(data.log, data.catalog, data.contexts, config.negatives_per_positive, rng)?
            } else {
                PairwiseBatch::new()
            };
            let stats = train_item_task(model, &d1, if config.attribute_aware { &d2 } else { &empty }, config, rng)?;
            phase.item_epochs.push(stats);
            if stats.relative_improvement() < config.tolerance {
                break;
            }
        }
        if config.multitask {
            for _ in 0..config.epochs_per_phase {
                let d3 = sample_d3(data.log, data.catalog, config.negatives_per_positive, rng)?;
                let stats = train_attr_task(model, &d3, config, rng)?;
                phase.attr_epochs.push(stats);
                if stats.relative_improvement() < config.tolerance {
                    break;
                }
            }
        }
        report.phases.push(phase);
    }
    Ok(report)
}
