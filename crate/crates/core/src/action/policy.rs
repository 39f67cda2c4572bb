use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Rng;

/// Two fully connected layers with a ReLU in between and a masked softmax on
/// top. Parameters live in one flat buffer laid out as `[W1, b1, W2, b2]`,
/// `W1` being `hidden × input` and `W2` `actions × hidden`, both row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    input: usize,
    hidden: usize,
    actions: usize,
    params: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl PolicyNet {
    pub fn param_count(input: usize, hidden: usize, actions: usize) -> usize {
        hidden * input + hidden + actions * hidden + actions
    }

    pub fn zeros(input: usize, hidden: usize, actions: usize) -> Self {
        PolicyNet { input, hidden, actions, params: vec![0.0; Self::param_count(input, hidden, actions)] }
    }

    /// Uniform `±sqrt(6 / fan_in)` weights, zero biases.
    pub fn new(input: usize, hidden: usize, actions: usize, rng: &mut Rng) -> Self {
        let mut net = Self::zeros(input, hidden, actions);
        let l1 = libm::sqrt(6.0 / input.max(1) as f64);
        let l2 = libm::sqrt(6.0 / hidden.max(1) as f64);
        let (w1, w2) = (net.w1_range(), net.w2_range());
        for x in &mut net.params[w1] {
            *x = rng.gen_range(-l1..=l1);
        }
        for x in &mut net.params[w2] {
            *x = rng.gen_range(-l2..=l2) * 0.1;
        }
        net
    }

    pub fn from_params(input: usize, hidden: usize, actions: usize, params: Vec<f64>) -> Result<Self> {
        let expected = Self::param_count(input, hidden, actions);
        if params.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: params.len() });
        }
        Ok(PolicyNet { input, hidden, actions, params })
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn w1_range(&self) -> core::ops::Range<usize> {
        0..self.hidden * self.input
    }

    fn b1_range(&self) -> core::ops::Range<usize> {
        let s = self.hidden * self.input;
        s..s + self.hidden
    }

    fn w2_range(&self) -> core::ops::Range<usize> {
        let s = self.b1_range().end;
        s..s + self.actions * self.hidden
    }

    fn b2_range(&self) -> core::ops::Range<usize> {
        let s = self.w2_range().end;
        s..s + self.actions
    }

    pub fn forward(&self, state: &[f64], mask: &[bool]) -> Result<Forward> {
        if state.len() != self.input {
            return Err(Error::DimensionMismatch { expected: self.input, got: state.len() });
        }
        if mask.len() != self.actions {
            return Err(Error::DimensionMismatch { expected: self.actions, got: mask.len() });
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::AllActionsMasked);
        }
        let w1 = &self.params[self.w1_range()];
        let b1 = &self.params[self.b1_range()];
        let w2 = &self.params[self.w2_range()];
        let b2 = &self.params[self.b2_range()];
        let mut hidden_pre = b1.to_vec();
        for (k, h) in hidden_pre.iter_mut().enumerate() {
            *h += crate::math::dot(&w1[k * self.input..(k + 1) * self.input], state);
        }
        let hidden: Vec<f64> = hidden_pre.iter().map(|&x| x.max(0.0)).collect();
        let mut logits = b2.to_vec();
        for (j, l) in logits.iter_mut().enumerate() {
            *l += crate::math::dot(&w2[j * self.hidden..(j + 1) * self.hidden], &hidden);
        }
        let probs = masked_softmax(&logits, mask);
        if !crate::math::all_finite(&probs) {
            return Err(Error::NonFinite { stage: "policy forward", detail: format!("logits {:?}", &logits[..logits.len().min(4)]) });
        }
        Ok(Forward { hidden_pre, hidden, logits, probs })
    }

    /// Probability vector; masked entries are exactly 0.
    pub fn distribution(&self, state: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
        Ok(self.forward(state, mask)?.probs)
    }

    /// Adds `scale · ∇_θ log π(action | state)` into `grad`.
    pub fn accumulate_log_prob_grad(
        &self,
        state: &[f64],
        mask: &[bool],
        action: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        if action >= self.actions {
            return Err(Error::InvalidAction { action, size: self.actions });
        }
        if !mask[action] {
            return Err(Error::invalid(format!("action {action} is masked")));
        }
        let fw = self.forward(state, mask)?;
        let dlogit: Vec<f64> = fw
            .probs
            .iter()
            .enumerate()
            .map(|(j, &p)| if j == action { 1.0 - p } else { -p })
            .collect();
        let w2 = &self.params[self.w2_range()];
        let (w1r, b1r, w2r, b2r) = (self.w1_range(), self.b1_range(), self.w2_range(), self.b2_range());
        let mut dhidden = vec![0.0; self.hidden];
        for (j, &dl) in dlogit.iter().enumerate() {
            if dl == 0.0 {
                continue;
            }
            let row = &w2[j * self.hidden..(j + 1) * self.hidden];
            let g = &mut grad[w2r.start + j * self.hidden..w2r.start + (j + 1) * self.hidden];
            for k in 0..self.hidden {
                g[k] += scale * dl * fw.hidden[k];
                dhidden[k] += dl * row[k];
            }
            grad[b2r.start + j] += scale * dl;
        }
        for k in 0..self.hidden {
            if fw.hidden_pre[k] <= 0.0 {
                continue;
            }
            let d = scale * dhidden[k];
            let g = &mut grad[w1r.start + k * self.input..w1r.start + (k + 1) * self.input];
            crate::math::axpy(d, state, g);
            grad[b1r.start + k] += d;
        }
        Ok(libm::log(fw.probs[action]))
    }

    /// `θ ← θ + step · direction`.
    pub fn step(&mut self, direction: &[f64], step: f64) -> Result<()> {
        if !crate::math::all_finite(direction) {
            return Err(Error::NonFinite { stage: "policy update", detail: "gradient".into() });
        }
        crate::math::axpy(step, direction, &mut self.params);
        Ok(())
    }
}

/// Softmax over unmasked logits; masked entries get probability 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { libm::exp(l - max) } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    Sample,
    Greedy,
}

/// Draws from `dist`, or takes its argmax (ties to the lowest id).
pub fn select_action(dist: &[f64], mode: SelectMode, rng: &mut Rng) -> usize {
    match mode {
        SelectMode::Greedy => {
            let mut best = 0;
            for (i, &p) in dist.iter().enumerate() {
                if p > dist[best] {
                    best = i;
                }
            }
            best
        }
        SelectMode::Sample => {
            let x: f64 = rng.gen();
            let mut acc = 0.0;
            let mut last = 0;
            for (i, &p) in dist.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                acc += p;
                last = i;
                if x < acc {
                    return i;
                }
            }
            last
        }
    }
}
