use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::policy::PolicyNet;
use crate::error::{Error, Result};
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub r_suc: f64,
    pub r_ask: f64,
    pub r_quit: f64,
    pub r_prev: f64,
    pub gamma: f64,
    /// Policy-gradient step size α.
    pub alpha: f64,
    pub update_rule: UpdateRule,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            r_suc: 1.0,
            r_ask: 0.1,
            r_quit: -0.3,
            r_prev: -0.1,
            gamma: 0.7,
            alpha: 0.001,
            update_rule: UpdateRule::Standard,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma must lie in [0, 1]"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::invalid("alpha must be positive"));
        }
        Ok(())
    }
}

/// How returns are discounted and which way the policy step goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// `R_t = Σ_{t′≥t} γ^{t′−t} r_{t′}`, ascent on `Σ log π · R`.
    #[default]
    Standard,
    /// `R_t = Σ_{t′≥t} γ^{T−t′} r_{t′}` and `θ ← θ − α ∇log π · R`, kept for comparison.
    Literal,
}

/// What happened at one turn, as far as the reward is concerned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnOutcome {
    AskAccepted,
    AskRejected,
    RecommendAccepted,
    RecommendRejected,
    /// Turn limit reached without success.
    Quit,
}

pub fn step_reward(outcome: TurnOutcome, cfg: &RewardConfig) -> f64 {
    match outcome {
        TurnOutcome::RecommendAccepted => cfg.r_suc + cfg.r_prev,
        TurnOutcome::AskAccepted => cfg.r_ask + cfg.r_prev,
        TurnOutcome::AskRejected | TurnOutcome::RecommendRejected => cfg.r_prev,
        TurnOutcome::Quit => cfg.r_quit + cfg.r_prev,
    }
}

/// Discounted returns, `R_t = r_t + γ R_{t+1}` with `R_{n} = 0`.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// `R_t = Σ_{t′=t}^{T} γ^{T−t′} r_{t′}`, with T the last step.
pub fn compute_returns_literal(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        acc += libm::pow(gamma, (n - 1 - t) as f64) * rewards[t];
        out[t] = acc;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn returns(&self, cfg: &RewardConfig) -> Vec<f64> {
        match cfg.update_rule {
            UpdateRule::Standard => compute_returns(&self.rewards(), cfg.gamma),
            UpdateRule::Literal => compute_returns_literal(&self.rewards(), cfg.gamma),
        }
    }
}

/// `Σ_t R_t ∇_θ log π(a_t | s_t)` over a trajectory.
pub fn policy_gradient(net: &PolicyNet, traj: &Trajectory, returns: &[f64]) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; net.params().len()];
    for (step, &ret) in traj.steps.iter().zip(returns) {
        if ret == 0.0 {
            continue;
        }
        net.accumulate_log_prob_grad(&step.state, &step.mask, step.action, ret, &mut grad)?;
    }
    Ok(grad)
}

/// One REINFORCE update from a complete trajectory.
pub fn reinforce_update(net: &mut PolicyNet, traj: &Trajectory, cfg: &RewardConfig) -> Result<()> {
    let returns = traj.returns(cfg);
    let grad = policy_gradient(net, traj, &returns)?;
    let sign = match cfg.update_rule {
        UpdateRule::Standard => 1.0,
        UpdateRule::Literal => -1.0,
    };
    net.step(&grad, sign * cfg.alpha)
}

/// A `(state, rule action)` pair for imitation pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImitationExample {
    pub state: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epochs: usize,
    pub train_size: usize,
    pub heldout_size: usize,
    pub final_train_loss: f64,
    /// Greedy-action agreement on the held-out tenth.
    pub heldout_accuracy: f64,
}

fn greedy_accuracy(net: &PolicyNet, examples: &[&ImitationExample]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(1.0);
    }
    let mut hits = 0usize;
    for ex in examples {
        let p = net.distribution(&ex.state, &ex.mask)?;
        let a = super::policy::select_action(&p, super::policy::SelectMode::Greedy, &mut crate::rng_from_seed(0));
        hits += usize::from(a == ex.action);
    }
    Ok(hits as f64 / examples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
    /// Adam with β = (0.9, 0.999), ε = 1e-8.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImitationConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub optimizer: Optimizer,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    dir: Vec<f64>,
}

impl AdamState {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0, dir: vec![0.0; n] }
    }

    fn direction(&mut self, grad: &[f64]) -> &[f64] {
        self.t += 1;
        let c1 = 1.0 - libm::pow(Self::B1, self.t as f64);
        let c2 = 1.0 - libm::pow(Self::B2, self.t as f64);
        for i in 0..grad.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            self.dir[i] = (self.m[i] / c1) / (libm::sqrt(self.v[i] / c2) + Self::EPS);
        }
        &self.dir
    }
}

/// Cross-entropy imitation of rule-based actions with mini-batches of
/// `cfg.batch` examples. The last 10% of a seeded shuffle is held out.
pub fn pretrain_policy(
    net: &mut PolicyNet,
    corpus: &[ImitationExample],
    cfg: &ImitationConfig,
    rng: &mut Rng,
) -> Result<PretrainReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.shuffle(rng);
    let held = if corpus.len() >= 10 { corpus.len() / 10 } else { 0 };
    let (train_idx, held_idx) = idx.split_at(corpus.len() - held);
    let mut train: Vec<&ImitationExample> = train_idx.iter().map(|&i| &corpus[i]).collect();
    let heldout: Vec<&ImitationExample> = held_idx.iter().map(|&i| &corpus[i]).collect();
    let batch = cfg.batch.max(1);
    let mut grad = vec![0.0; net.params().len()];
    let mut adam = match cfg.optimizer {
        Optimizer::Adam => Some(AdamState::new(grad.len())),
        Optimizer::Sgd => None,
    };
    let mut last_loss = f64::NAN;
    for _ in 0..cfg.epochs {
        train.shuffle(rng);
        let mut total = 0.0;
        for chunk in train.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            for ex in chunk {
                let lp = net.accumulate_log_prob_grad(&ex.state, &ex.mask, ex.action, scale, &mut grad)?;
                total -= lp;
            }
            // ascent on log-likelihood
            match adam.as_mut() {
                Some(a) => net.step(a.direction(&grad), cfg.lr)?,
                None => net.step(&grad, cfg.lr)?,
            }
        }
        last_loss = total / train.len().max(1) as f64;
    }
    Ok(PretrainReport {
        epochs: cfg.epochs,
        train_size: train.len(),
        heldout_size: heldout.len(),
        final_train_loss: last_loss,
        heldout_accuracy: greedy_accuracy(net, &heldout)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_composition() {
        let cfg = RewardConfig::default();
        assert!((step_reward(TurnOutcome::RecommendAccepted, &cfg) - 0.9).abs() < 1e-12);
        assert!(step_reward(TurnOutcome::AskAccepted, &cfg).abs() < 1e-12);
        assert!((step_reward(TurnOutcome::Quit, &cfg) + 0.4).abs() < 1e-12);
        assert!((step_reward(TurnOutcome::AskRejected, &cfg) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn returns_examples() {
        assert_eq!(compute_returns(&[0.3, -1.0, 2.0], 0.0), vec![0.3, -1.0, 2.0]);
        assert_eq!(compute_returns(&[0.0, 1.0], 0.5), vec![0.5, 1.0]);
        assert_eq!(compute_returns(&[1.0, 1.0, 1.0], 1.0), vec![3.0, 2.0, 1.0]);
        // γ^{T−t′}: the last reward is undiscounted at every t
        assert_eq!(compute_returns_literal(&[1.0, 1.0], 0.5), vec![1.5, 1.0]);
    }

    #[test]
    fn zero_returns_leave_weights() {
        let mut net = PolicyNet::new(3, 4, 2, &mut crate::rng_from_seed(1));
        let before = net.clone();
        let traj = Trajectory {
            steps: vec![TrajectoryStep { state: vec![1.0, 0.0, 1.0], mask: vec![true, true], action: 1, reward: 0.0 }],
        };
        reinforce_update(&mut net, &traj, &RewardConfig::default()).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn positive_return_raises_probability() {
        let mut net = PolicyNet::new(3, 4, 3, &mut crate::rng_from_seed(2));
        let s = vec![0.5, -0.2, 1.0];
        let mask = vec![true; 3];
        let p0 = net.distribution(&s, &mask).unwrap()[2];
        let traj = Trajectory { steps: vec![TrajectoryStep { state: s.clone(), mask: mask.clone(), action: 2, reward: 1.0 }] };
        reinforce_update(&mut net, &traj, &RewardConfig::default()).unwrap();
        assert!(net.distribution(&s, &mask).unwrap()[2] > p0);
    }

    #[test]
    fn pretrain_memorizes_and_noops() {
        let ex = ImitationExample { state: vec![1.0, 0.0, -1.0], mask: vec![true; 4], action: 2 };
        let corpus = vec![ex.clone(); 40];
        let mut net = PolicyNet::new(3, 8, 4, &mut crate::rng_from_seed(3));
        let before = net.clone();
        let mut cfg = ImitationConfig { epochs: 0, lr: 0.1, batch: 1, optimizer: Optimizer::Sgd };
        let rep = pretrain_policy(&mut net, &corpus, &cfg, &mut crate::rng_from_seed(0)).unwrap();
        assert_eq!(rep.epochs, 0);
        assert_eq!(net, before);
        cfg.epochs = 200;
        pretrain_policy(&mut net, &corpus, &cfg, &mut crate::rng_from_seed(0)).unwrap();
        assert!(net.distribution(&ex.state, &ex.mask).unwrap()[2] > 0.99);
        assert_eq!(pretrain_policy(&mut net, &[], &cfg, &mut crate::rng_from_seed(0)), Err(Error::EmptyCorpus));
    }

    #[test]
    fn adam_fits_tiny_corpus() {
        let a = ImitationExample { state: vec![1.0, 0.0], mask: vec![true; 3], action: 0 };
        let b = ImitationExample { state: vec![0.0, 1.0], mask: vec![true; 3], action: 1 };
        let corpus: Vec<_> = (0..30).flat_map(|_| [a.clone(), b.clone()]).collect();
        let mut net = PolicyNet::new(2, 8, 3, &mut crate::rng_from_seed(4));
        let cfg = ImitationConfig { epochs: 50, lr: 0.01, batch: 8, optimizer: Optimizer::Adam };
        let rep = pretrain_policy(&mut net, &corpus, &cfg, &mut crate::rng_from_seed(0)).unwrap();
        assert_eq!(rep.heldout_accuracy, 1.0);
        assert!(rep.final_train_loss < 0.05, "{}", rep.final_train_loss);
    }
}
