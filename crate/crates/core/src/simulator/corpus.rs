use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{run_session, session_rngs, Action, Env, Session, SessionStatus, SimUser};
use crate::action::{build_state, ImitationExample};
use crate::agents::{Agent, RuleBasedAgent};
use crate::error::{Error, Result};
use crate::estimation::{ConversationContext, Embeddings};
use crate::ids::{AttrId, ItemId, UserId};
use crate::reflection::ModelOverlay;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub sessions: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { sessions: 2000, seed: 0 }
    }
}

/// Rule-agent dialogue logs: imitation pairs plus the attribute contexts
/// seen while talking about each target.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Corpus {
    pub examples: Vec<ImitationExample>,
    pub contexts: Vec<ConversationContext>,
    pub sessions: usize,
    pub successes: usize,
    /// Best greedy agreement any policy can reach on these examples: the
    /// rule agent recommends at random, so each turn contributes
    /// `max(p_rec, 1 − p_rec)`.
    pub teacher_bound: f64,
}

struct Recorder<'c> {
    rule: RuleBasedAgent,
    examples: &'c mut Vec<ImitationExample>,
    certainty: &'c mut f64,
    contexts: BTreeSet<BTreeSet<AttrId>>,
}

impl Agent for Recorder<'_> {
    fn decide(&mut self, session: &Session, env: &Env<'_>) -> Result<Action> {
        let questions = env.questions()?;
        let model = self.rule.scorer().ok_or_else(|| Error::invalid("rule agent has no scorer"))?;
        let state = build_state(session, model, env.catalog, env.taxonomy)?.into_values();
        let mask = session.action_mask(questions);
        let action = self.rule.decide(session, env)?;
        let n = session.candidates().len();
        let can_ask = mask[..questions].iter().any(|&m| m);
        let p_rec = if n == 0 || !can_ask { 1.0 } else { (session.list_len() as f64 / n as f64).min(1.0) };
        *self.certainty += p_rec.max(1.0 - p_rec);
        self.examples.push(ImitationExample { state, mask, action: action.index(questions) });
        self.contexts.insert(session.confirmed().clone());
        Ok(action)
    }

    fn scorer(&self) -> Option<&dyn Embeddings> {
        self.rule.scorer()
    }
}

/// Runs `cfg.sessions` rule-agent dialogues over `(user, item)` pairs drawn
/// uniformly with replacement from `pairs`.
pub fn generate_pretraining_corpus(
    env: &Env<'_>,
    model: &ModelOverlay,
    pairs: &[(UserId, ItemId)],
    cfg: &CorpusConfig,
) -> Result<Corpus> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut out = Corpus::default();
    let mut certainty = 0.0;
    for i in 0..cfg.sessions {
        let (mut user_rng, agent_rng) = session_rngs(cfg.seed, i as u64);
        let (u, v) = pairs[user_rng.gen_range(0..pairs.len())];
        let sim = SimUser::new(u, v, env.catalog)?;
        let session = sim.start(env, &mut user_rng)?;
        let mut rec = Recorder {
            rule: RuleBasedAgent::new(model.clone(), agent_rng),
            examples: &mut out.examples,
            certainty: &mut certainty,
            contexts: BTreeSet::new(),
        };
        let transcript = run_session(&mut rec, &sim, session, env)?;
        out.contexts
            .extend(rec.contexts.into_iter().map(|confirmed| ConversationContext { user: u, item: v, confirmed }));
        out.sessions += 1;
        out.successes += usize::from(transcript.status == SessionStatus::Success);
    }
    out.teacher_bound = if out.examples.is_empty() { 1.0 } else { certainty / out.examples.len() as f64 };
    Ok(out)
}
