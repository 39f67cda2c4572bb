//! Session metrics, offline AUC and significance tests.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datasets::{candidate_items, AttributeCatalog, InteractionLog};
use crate::error::{Error, Result};
use crate::estimation::{score_attribute, score_item, simulated_context, Embeddings};
use crate::ids::{AttrId, ItemId, UserId};
use crate::itemset::ItemSet;
use crate::simulator::{SessionStatus, SessionTranscript};
use crate::Rng;

/// Negatives kept per AUC case.
pub const AUC_MAX_NEGATIVES: usize = 100;

/// Fraction of sessions that succeeded at or before turn `t`.
pub fn success_rate_at(transcripts: &[SessionTranscript], t: usize) -> f64 {
    if transcripts.is_empty() {
        return 0.0;
    }
    let hits = transcripts
        .iter()
        .filter(|s| s.status == SessionStatus::Success && s.success_turn.is_some_and(|x| x <= t))
        .count();
    hits as f64 / transcripts.len() as f64
}

/// `SR@1 … SR@max_turns`.
pub fn success_curve(transcripts: &[SessionTranscript], max_turns: usize) -> Vec<f64> {
    (1..=max_turns).map(|t| success_rate_at(transcripts, t)).collect()
}

/// Mean terminal turn; failed sessions count `max_turns`.
pub fn average_turns(transcripts: &[SessionTranscript], max_turns: usize) -> f64 {
    if transcripts.is_empty() {
        return 0.0;
    }
    transcripts.iter().map(|s| s.terminal_turn(max_turns) as f64).sum::<f64>() / transcripts.len() as f64
}

/// Fraction of negatives scored below the positive, ties counting one half.
pub fn auc(positive: f64, negatives: &[f64]) -> Option<f64> {
    if negatives.is_empty() {
        return None;
    }
    let mut credit = 0.0;
    for &n in negatives {
        if positive > n {
            credit += 1.0;
        } else if positive == n {
            credit += 0.5;
        }
    }
    Some(credit / negatives.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucTask {
    /// Target against any unseen item.
    ItemGeneral,
    /// Target against unseen items that carry the context attributes.
    ItemCandidate,
    /// A held-out target attribute against attributes the target lacks.
    Attribute,
}

impl AucTask {
    pub const ALL: [AucTask; 3] = [AucTask::ItemGeneral, AucTask::ItemCandidate, AucTask::Attribute];
}

/// One held-out `(user, item)` pair with sampled negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucCase {
    pub user: UserId,
    pub context: BTreeSet<AttrId>,
    pub positive: u32,
    pub negatives: Vec<u32>,
}

fn sample_negatives(pool: Vec<u32>, rng: &mut Rng) -> Vec<u32> {
    let mut pool = pool;
    if pool.len() > AUC_MAX_NEGATIVES {
        pool.shuffle(rng);
        pool.truncate(AUC_MAX_NEGATIVES);
        pool.sort_unstable();
    }
    pool
}

/// Builds evaluation cases for `task` from held-out interactions.
/// `known` holds every positive of each user (all splits) and is excluded
/// from item negatives. Pairs without any valid negative are skipped.
pub fn build_auc_cases(
    task: AucTask,
    heldout: &InteractionLog,
    known: &InteractionLog,
    catalog: &AttributeCatalog,
    rng: &mut Rng,
) -> Result<Vec<AucCase>> {
    let mut out = Vec::new();
    for &(u, v) in heldout.records() {
        let attrs = catalog.attrs_of(v)?;
        if attrs.is_empty() {
            continue;
        }
        match task {
            AucTask::ItemGeneral | AucTask::ItemCandidate => {
                let context = simulated_context(catalog, v, rng)?;
                let pool: ItemSet = if task == AucTask::ItemGeneral {
                    ItemSet::full(catalog.n_items())
                } else {
                    candidate_items(catalog, &context)?
                };
                let seen = known.positives(u);
                let negs: Vec<u32> = pool.iter().filter(|x| *x != v && !seen.contains(x)).map(|x| x.0).collect();
                if negs.is_empty() {
                    continue;
                }
                out.push(AucCase { user: u, context, positive: v.0, negatives: sample_negatives(negs, rng) });
            }
            AucTask::Attribute => {
                let mut shuffled = attrs.to_vec();
                shuffled.shuffle(rng);
                let p = shuffled[0];
                let ctx_len = rng.gen_range(0..shuffled.len());
                let context: BTreeSet<AttrId> = shuffled[1..1 + ctx_len].iter().copied().collect();
                let negs: Vec<u32> = (0..catalog.n_attrs() as u32)
                    .filter(|&a| !catalog.has_attr(v, AttrId(a)))
                    .collect();
                if negs.is_empty() {
                    continue;
                }
                out.push(AucCase { user: u, context, positive: p.0, negatives: sample_negatives(negs, rng) });
            }
        }
    }
    Ok(out)
}

fn case_auc<E: Embeddings + ?Sized>(model: &E, task: AucTask, case: &AucCase) -> Result<f64> {
    let score = |x: u32| -> Result<f64> {
        match task {
            AucTask::Attribute => score_attribute(model, case.user, AttrId(x), &case.context),
            _ => score_item(model, case.user, ItemId(x), &case.context),
        }
    };
    let pos = score(case.positive)?;
    let negs = case.negatives.iter().map(|&n| score(n)).collect::<Result<Vec<f64>>>()?;
    auc(pos, &negs).ok_or_else(|| Error::invalid("AUC case without negatives"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub task: AucTask,
    pub mean: f64,
    pub cases: usize,
}

pub fn mean_auc<E: Embeddings + ?Sized>(model: &E, task: AucTask, cases: &[AucCase]) -> Result<AucReport> {
    if cases.is_empty() {
        return Err(Error::invalid("no AUC cases"));
    }
    let mut total = 0.0;
    for c in cases {
        total += case_auc(model, task, c)?;
    }
    Ok(AucReport { task, mean: total / cases.len() as f64, cases: cases.len() })
}

/// Mean AUC per user.
pub fn per_user_auc<E: Embeddings + ?Sized>(model: &E, task: AucTask, cases: &[AucCase]) -> Result<BTreeMap<UserId, f64>> {
    let mut acc: BTreeMap<UserId, (f64, usize)> = BTreeMap::new();
    for c in cases {
        let a = case_auc(model, task, c)?;
        let e = acc.entry(c.user).or_insert((0.0, 0));
        e.0 += a;
        e.1 += 1;
    }
    Ok(acc.into_iter().map(|(u, (s, n))| (u, s / n as f64)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadUpdateBucket {
    pub auc_lo: f64,
    pub auc_hi: f64,
    pub reflections: usize,
    pub bad: usize,
}

impl BadUpdateBucket {
    pub fn rate(&self) -> Option<f64> {
        (self.reflections > 0).then(|| self.bad as f64 / self.reflections as f64)
    }
}

/// Bad-update counts per user-AUC decile. Reflections of users without an
/// AUC estimate, or without rank information, are ignored.
pub fn bad_update_histogram(transcripts: &[SessionTranscript], user_auc: &BTreeMap<UserId, f64>, buckets: usize) -> Vec<BadUpdateBucket> {
    let buckets = buckets.max(1);
    let mut out: Vec<BadUpdateBucket> = (0..buckets)
        .map(|b| BadUpdateBucket {
            auc_lo: b as f64 / buckets as f64,
            auc_hi: (b + 1) as f64 / buckets as f64,
            reflections: 0,
            bad: 0,
        })
        .collect();
    for s in transcripts {
        let Some(&a) = user_auc.get(&s.user) else { continue };
        let b = ((a * buckets as f64) as usize).min(buckets - 1);
        for r in s.reflections() {
            if r.target_rank_before.is_none() || r.target_rank_after.is_none() {
                continue;
            }
            out[b].reflections += 1;
            out[b].bad += usize::from(r.is_bad_update());
        }
    }
    out
}

/// Reflection-count weighted Pearson correlation between bucket midpoint and
/// bad-update rate; `None` with fewer than two populated buckets.
pub fn bad_update_trend(buckets: &[BadUpdateBucket]) -> Option<f64> {
    let pts: Vec<(f64, f64, f64)> = buckets
        .iter()
        .filter_map(|b| b.rate().map(|r| ((b.auc_lo + b.auc_hi) / 2.0, r, b.reflections as f64)))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let w: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.0 * p.2).sum::<f64>() / w;
    let my = pts.iter().map(|p| p.1 * p.2).sum::<f64>() / w;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y, wi) in &pts {
        sxy += wi * (x - mx) * (y - my);
        sxx += wi * (x - mx) * (x - mx);
        syy += wi * (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Some(0.0);
    }
    Some(sxy / libm::sqrt(sxx * syy))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub mean_diff: f64,
    pub lo: f64,
    pub hi: f64,
    pub resamples: usize,
}

/// Percentile 95% interval of `mean(a − b)` under paired resampling.
pub fn paired_bootstrap(a: &[f64], b: &[f64], resamples: usize, rng: &mut Rng) -> Result<BootstrapCi> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    if a.is_empty() || resamples == 0 {
        return Err(Error::invalid("bootstrap needs data and at least one resample"));
    }
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean_diff = d.iter().sum::<f64>() / n as f64;
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut s = 0.0;
        for _ in 0..n {
            s += d[rng.gen_range(0..n)];
        }
        means.push(s / n as f64);
    }
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[(libm::round(p * (resamples - 1) as f64) as usize).min(resamples - 1)];
    Ok(BootstrapCi { mean_diff, lo: q(0.025), hi: q(0.975), resamples })
}

/// Paired t statistic of `a − b` and its degrees of freedom.
pub fn paired_t_statistic(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let df = (n - 1) as f64;
    if var == 0.0 {
        let t = if mean == 0.0 { 0.0 } else { f64::INFINITY.copysign(mean) };
        return Ok((t, df));
    }
    Ok((mean / libm::sqrt(var / n as f64), df))
}
