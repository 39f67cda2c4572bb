//! The conversation component: state encoding, the policy network, rewards
//! and policy-gradient training.

mod policy;
mod reinforce;
mod state;

pub use policy::{masked_softmax, select_action, Forward, PolicyNet, SelectMode};
pub use reinforce::{
    compute_returns, compute_returns_literal, policy_gradient, pretrain_policy, reinforce_update,
    step_reward, ImitationConfig, ImitationExample, Optimizer, PretrainReport, RewardConfig, Trajectory, TrajectoryStep,
    TurnOutcome, UpdateRule,
};
pub use state::{
    attribute_entropy, attribute_signals, build_state, length_bin, parent_action, parent_signals,
    question_count, StateVector, LEN_BINS,
};
