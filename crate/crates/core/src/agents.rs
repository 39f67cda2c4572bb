//! Conversational agents: the learned policy and the rule baselines.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::IteratorRandom;
use rand::Rng as _;

use crate::action::{build_state, select_action, PolicyNet, SelectMode, Trajectory, TrajectoryStep, TurnOutcome};
use crate::error::{Error, Result};
use crate::estimation::{rank_candidates, Embeddings, FmModel};
use crate::ids::{AttrId, ItemId, ParentId};
use crate::math::binary_entropy;
use crate::reflection::{reflect, ModelOverlay, ReflectionConfig, ReflectionOutcome};
use crate::simulator::{Action, Env, QuestionMode, Session};
use crate::Rng;

pub trait Agent {
    /// Called once before the first turn of a session.
    fn begin(&mut self, _session: &Session, _env: &Env<'_>) -> Result<()> {
        Ok(())
    }

    fn decide(&mut self, session: &Session, env: &Env<'_>) -> Result<Action>;

    /// Called after every applied turn.
    fn observe(&mut self, _session: &Session, _outcome: TurnOutcome) -> Result<()> {
        Ok(())
    }

    /// Called after a rejected recommendation while the session is still live.
    fn on_reject(&mut self, _session: &Session, _rejected: &[ItemId], _env: &Env<'_>) -> Result<Option<ReflectionOutcome>> {
        Ok(None)
    }

    /// The scores the agent currently ranks items with.
    fn scorer(&self) -> Option<&dyn Embeddings> {
        None
    }
}

fn recommend<E: Embeddings + ?Sized>(model: &E, session: &Session) -> Result<Action> {
    let items = rank_candidates(model, session.user(), session.confirmed(), session.candidates(), session.list_len())?;
    if items.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    Ok(Action::Recommend(items))
}

/// Binary-entropy argmax over open questions, ties to the lowest id.
/// Parents score the sum of their open children.
pub fn max_entropy_question(session: &Session, env: &Env<'_>) -> Result<Option<Action>> {
    let cands = session.candidates();
    if cands.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let total = cands.len() as f64;
    let entropy = |p: AttrId| -> Result<f64> {
        if session.attr_is_dead(p) {
            return Ok(0.0);
        }
        Ok(binary_entropy(cands.intersection_len(env.catalog.items_with(p)?) as f64 / total))
    };
    let mut best: Option<(usize, f64)> = None;
    let mut consider = |i: usize, h: f64| {
        if best.map_or(true, |(_, b)| h > b) {
            best = Some((i, h));
        }
    };
    match session.mode() {
        QuestionMode::Binary => {
            for i in 0..env.catalog.n_attrs() {
                let p = AttrId::new(i);
                if !session.attr_is_dead(p) {
                    consider(i, entropy(p)?);
                }
            }
            Ok(best.map(|(i, _)| Action::Ask(AttrId::new(i))))
        }
        QuestionMode::Enumerated => {
            let tax = env.taxonomy.ok_or_else(|| Error::invalid("enumerated mode needs a taxonomy"))?;
            for (j, children) in tax.parents() {
                if session.parent_asked(j) {
                    continue;
                }
                let mut h = 0.0;
                for &c in children {
                    h += entropy(c)?;
                }
                consider(j.index(), h);
            }
            Ok(best.map(|(j, _)| Action::AskParent(ParentId::new(j))))
        }
    }
}

fn action_from_index(index: usize, questions: usize, session: &Session, model: &ModelOverlay) -> Result<Action> {
    if index == questions {
        return recommend(model, session);
    }
    if index > questions {
        return Err(Error::InvalidAction { action: index, size: questions + 1 });
    }
    Ok(match session.mode() {
        QuestionMode::Binary => Action::Ask(AttrId::new(index)),
        QuestionMode::Enumerated => Action::AskParent(ParentId::new(index)),
    })
}

/// Policy-driven agent with optional reflection on rejections.
#[derive(Debug, Clone)]
pub struct EarAgent {
    policy: Arc<PolicyNet>,
    initial: ModelOverlay,
    overlay: ModelOverlay,
    reflection: Option<ReflectionConfig>,
    select: SelectMode,
    rng: Rng,
    record: bool,
    trajectory: Trajectory,
    pending: Option<(Vec<f64>, Vec<bool>, usize)>,
}

impl EarAgent {
    pub fn new(policy: Arc<PolicyNet>, model: ModelOverlay, reflection: Option<ReflectionConfig>, select: SelectMode, rng: Rng) -> Self {
        EarAgent {
            policy,
            overlay: model.clone(),
            initial: model,
            reflection,
            select,
            rng,
            record: false,
            trajectory: Trajectory::default(),
            pending: None,
        }
    }

    /// Keeps `(state, mask, action, reward)` for every turn.
    pub fn recording(mut self, on: bool) -> Self {
        self.record = on;
        self
    }

    pub fn set_policy(&mut self, policy: Arc<PolicyNet>) {
        self.policy = policy;
    }

    pub fn set_rng(&mut self, rng: Rng) {
        self.rng = rng;
    }

    pub fn policy(&self) -> &Arc<PolicyNet> {
        &self.policy
    }

    pub fn model(&self) -> &ModelOverlay {
        &self.overlay
    }

    pub fn take_trajectory(&mut self) -> Trajectory {
        core::mem::take(&mut self.trajectory)
    }
}

impl Agent for EarAgent {
    fn begin(&mut self, _session: &Session, _env: &Env<'_>) -> Result<()> {
        self.overlay = self.initial.clone();
        self.trajectory = Trajectory::default();
        self.pending = None;
        Ok(())
    }

    fn decide(&mut self, session: &Session, env: &Env<'_>) -> Result<Action> {
        let questions = env.questions()?;
        let state = build_state(session, &self.overlay, env.catalog, env.taxonomy)?.into_values();
        let mask = session.action_mask(questions);
        let dist = self.policy.distribution(&state, &mask)?;
        let a = select_action(&dist, self.select, &mut self.rng);
        let action = action_from_index(a, questions, session, &self.overlay)?;
        if self.record {
            self.pending = Some((state, mask, a));
        }
        Ok(action)
    }

    fn observe(&mut self, session: &Session, _outcome: TurnOutcome) -> Result<()> {
        if let Some((state, mask, action)) = self.pending.take() {
            let reward = session.transcript().turns.last().map_or(0.0, |t| t.reward);
            self.trajectory.steps.push(TrajectoryStep { state, mask, action, reward });
        }
        Ok(())
    }

    fn on_reject(&mut self, session: &Session, rejected: &[ItemId], env: &Env<'_>) -> Result<Option<ReflectionOutcome>> {
        let Some(cfg) = self.reflection else { return Ok(None) };
        let out = reflect(
            &mut self.overlay,
            session.user(),
            rejected,
            session.confirmed(),
            env.history.positives(session.user()),
            &cfg,
            &mut self.rng,
        )?;
        Ok(Some(out))
    }

    fn scorer(&self) -> Option<&dyn Embeddings> {
        Some(&self.overlay)
    }
}

/// Asks the highest-entropy question until at most `k` candidates remain.
#[derive(Debug, Clone)]
pub struct MaxEntropyAgent {
    model: ModelOverlay,
}

impl MaxEntropyAgent {
    pub fn new(model: ModelOverlay) -> Self {
        MaxEntropyAgent { model }
    }

    pub fn from_model(model: Arc<FmModel>) -> Self {
        Self::new(ModelOverlay::new(model))
    }
}

impl Agent for MaxEntropyAgent {
    fn decide(&mut self, session: &Session, env: &Env<'_>) -> Result<Action> {
        if session.candidates().len() <= session.list_len() {
            return recommend(&self.model, session);
        }
        match max_entropy_question(session, env)? {
            Some(q) => Ok(q),
            None => recommend(&self.model, session),
        }
    }

    fn scorer(&self) -> Option<&dyn Embeddings> {
        Some(&self.model)
    }
}

/// Recommends every turn, optionally reflecting after each rejection.
#[derive(Debug, Clone)]
pub struct AbsGreedyAgent {
    initial: ModelOverlay,
    overlay: ModelOverlay,
    reflection: Option<ReflectionConfig>,
    rng: Rng,
}

impl AbsGreedyAgent {
    pub fn new(model: ModelOverlay, reflection: Option<ReflectionConfig>, rng: Rng) -> Self {
        AbsGreedyAgent { overlay: model.clone(), initial: model, reflection, rng }
    }
}

impl Agent for AbsGreedyAgent {
    fn begin(&mut self, _session: &Session, _env: &Env<'_>) -> Result<()> {
        self.overlay = self.initial.clone();
        Ok(())
    }

    fn decide(&mut self, session: &Session, _env: &Env<'_>) -> Result<Action> {
        recommend(&self.overlay, session)
    }

    fn on_reject(&mut self, session: &Session, rejected: &[ItemId], env: &Env<'_>) -> Result<Option<ReflectionOutcome>> {
        let Some(cfg) = self.reflection else { return Ok(None) };
        let out = reflect(
            &mut self.overlay,
            session.user(),
            rejected,
            session.confirmed(),
            env.history.positives(session.user()),
            &cfg,
            &mut self.rng,
        )?;
        Ok(Some(out))
    }

    fn scorer(&self) -> Option<&dyn Embeddings> {
        Some(&self.overlay)
    }
}

/// Uniform over allowed actions; recommendations are random candidates.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    rng: Rng,
}

impl RandomAgent {
    pub fn new(rng: Rng) -> Self {
        RandomAgent { rng }
    }
}

impl Agent for RandomAgent {
    fn decide(&mut self, session: &Session, env: &Env<'_>) -> Result<Action> {
        let questions = env.questions()?;
        let mask = session.action_mask(questions);
        let allowed: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let a = allowed[self.rng.gen_range(0..allowed.len())];
        if a < questions {
            return Ok(match session.mode() {
                QuestionMode::Binary => Action::Ask(AttrId::new(a)),
                QuestionMode::Enumerated => Action::AskParent(ParentId::new(a)),
            });
        }
        let mut items = session.candidates().iter().choose_multiple(&mut self.rng, session.list_len());
        items.sort_unstable();
        Ok(Action::Recommend(items))
    }
}

/// The imitation teacher: recommends with probability `k / |V_cand|`
/// (always once `|V_cand| ≤ k`), otherwise asks the max-entropy question.
#[derive(Debug, Clone)]
pub struct RuleBasedAgent {
    model: ModelOverlay,
    rng: Rng,
}

impl RuleBasedAgent {
    pub fn new(model: ModelOverlay, rng: Rng) -> Self {
        RuleBasedAgent { model, rng }
    }

    pub fn set_rng(&mut self, rng: Rng) {
        self.rng = rng;
    }
}

impl Agent for RuleBasedAgent {
    fn decide(&mut self, session: &Session, env: &Env<'_>) -> Result<Action> {
        let n = session.candidates().len();
        let k = session.list_len();
        let p_rec = if n == 0 { 1.0 } else { (k as f64 / n as f64).min(1.0) };
        if self.rng.gen::<f64>() < p_rec {
            return recommend(&self.model, session);
        }
        match max_entropy_question(session, env)? {
            Some(q) => Ok(q),
            None => recommend(&self.model, session),
        }
    }

    fn scorer(&self) -> Option<&dyn Embeddings> {
        Some(&self.model)
    }
}
