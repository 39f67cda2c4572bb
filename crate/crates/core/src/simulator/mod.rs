//! Simulated users and the turn loop around a [`Session`].

mod corpus;
mod session;

pub use corpus::{generate_pretraining_corpus, Corpus, CorpusConfig};
pub use session::{
    Action, Feedback, Opening, QuestionMode, ReflectionTrace, Session, SessionStatus, SessionTranscript, SimConfig,
    TurnRecord, TRANSCRIPT_SCHEMA_VERSION,
};

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;

use crate::action::{question_count, RewardConfig, TurnOutcome};
use crate::agents::Agent;
use crate::datasets::{AttributeCatalog, InteractionLog, Taxonomy};
use crate::error::{Error, Result};
use crate::estimation::rank_of;
use crate::ids::{AttrId, ItemId, UserId};
use crate::Rng;

/// Everything a session needs besides the agent and the user.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub catalog: &'a AttributeCatalog,
    pub taxonomy: Option<&'a Taxonomy>,
    /// Training interactions; a user's positives feed reflection.
    pub history: &'a InteractionLog,
    pub sim: SimConfig,
    pub rewards: RewardConfig,
}

impl Env<'_> {
    /// Number of ask actions in the configured mode.
    pub fn questions(&self) -> Result<usize> {
        question_count(self.sim.mode, self.catalog, self.taxonomy)
    }
}

/// Two independent streams per session: 0 drives the user, 1 the agent.
pub fn session_rngs(run_seed: u64, index: u64) -> (Rng, Rng) {
    let seed = run_seed ^ index;
    let mut user = Rng::seed_from_u64(seed);
    user.set_stream(0);
    let mut agent = Rng::seed_from_u64(seed);
    agent.set_stream(1);
    (user, agent)
}

/// A user who wants `target` and answers truthfully from its attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimUser {
    pub user: UserId,
    pub target: ItemId,
    attrs: BTreeSet<AttrId>,
}

impl SimUser {
    pub fn new(user: UserId, target: ItemId, catalog: &AttributeCatalog) -> Result<Self> {
        let attrs: BTreeSet<AttrId> = catalog.attrs_of(target)?.iter().copied().collect();
        if attrs.is_empty() {
            return Err(Error::ItemWithoutAttributes(target));
        }
        Ok(SimUser { user, target, attrs })
    }

    pub fn target_attrs(&self) -> &BTreeSet<AttrId> {
        &self.attrs
    }

    /// A uniformly drawn attribute of the target, or in enumerated mode the
    /// parent of one together with every matching child.
    pub fn opening(&self, mode: QuestionMode, taxonomy: Option<&Taxonomy>, rng: &mut Rng) -> Result<Opening> {
        let attrs: Vec<AttrId> = self.attrs.iter().copied().collect();
        let p0 = *attrs.choose(rng).ok_or(Error::ItemWithoutAttributes(self.target))?;
        match mode {
            QuestionMode::Binary => Ok(Opening::Attribute(p0)),
            QuestionMode::Enumerated => {
                let tax = taxonomy.ok_or_else(|| Error::invalid("enumerated mode needs a taxonomy"))?;
                let parent = tax.parent_of(p0).ok_or(Error::UnknownAttribute(p0))?;
                let children = tax.children(parent)?.iter().copied().filter(|c| self.attrs.contains(c)).collect();
                Ok(Opening::Parent { parent, children })
            }
        }
    }

    pub fn respond(&self, action: &Action, taxonomy: Option<&Taxonomy>) -> Result<Feedback> {
        Ok(match action {
            Action::Ask(p) => {
                if self.attrs.contains(p) {
                    Feedback::Yes
                } else {
                    Feedback::No
                }
            }
            Action::AskParent(j) => {
                let tax = taxonomy.ok_or_else(|| Error::invalid("enumerated mode needs a taxonomy"))?;
                Feedback::Children(tax.children(*j)?.iter().copied().filter(|c| self.attrs.contains(c)).collect())
            }
            Action::Recommend(items) => {
                if items.contains(&self.target) {
                    Feedback::Accept
                } else {
                    Feedback::Reject
                }
            }
        })
    }

    /// Opens a session for this user.
    pub fn start(&self, env: &Env<'_>, rng: &mut Rng) -> Result<Session> {
        let opening = self.opening(env.sim.mode, env.taxonomy, rng)?;
        let mut s = Session::start(self.user, opening, env.catalog, env.taxonomy, env.sim)?;
        s.set_target(self.target);
        Ok(s)
    }
}

/// Rank of the session's target among the open candidates under the agent's scorer.
fn target_rank<A: Agent + ?Sized>(agent: &A, session: &Session) -> Result<Option<usize>> {
    match (agent.scorer(), session.transcript().target) {
        (Some(m), Some(target)) => rank_of(m, session.user(), session.confirmed(), session.candidates(), target),
        _ => Ok(None),
    }
}

/// Applies one answered action: updates the session, lets the agent observe
/// the outcome and, after a rejection, reflect. Shared by the simulator loop
/// and the interactive service.
pub fn apply_turn<A: Agent + ?Sized>(
    agent: &mut A,
    session: &mut Session,
    action: Action,
    feedback: Feedback,
    env: &Env<'_>,
) -> Result<TurnOutcome> {
    let rejected = match &action {
        Action::Recommend(items) => items.clone(),
        _ => Vec::new(),
    };
    let outcome = session.apply(action, feedback, &env.rewards, env.catalog, env.taxonomy)?;
    agent.observe(session, outcome)?;
    if outcome == TurnOutcome::RecommendRejected && session.is_live() {
        let before = target_rank(agent, session)?;
        if let Some(out) = agent.on_reject(session, &rejected, env)? {
            let mut trace = ReflectionTrace::from_outcome(&out, session.candidates().len());
            trace.target_rank_before = before;
            trace.target_rank_after = target_rank(agent, session)?;
            session.attach_reflection(trace);
        }
    }
    Ok(outcome)
}

/// Asks the agent for its next move and checks it against the session.
pub fn next_action<A: Agent + ?Sized>(agent: &mut A, session: &Session, env: &Env<'_>) -> Result<Action> {
    let action = agent.decide(session, env)?;
    session.validate_action(&action, env.catalog, env.taxonomy)?;
    Ok(action)
}

/// Plays one full conversation. An invalid agent move aborts with an error.
pub fn run_session<A: Agent + ?Sized>(
    agent: &mut A,
    user: &SimUser,
    mut session: Session,
    env: &Env<'_>,
) -> Result<SessionTranscript> {
    agent.begin(&session, env)?;
    while session.is_live() {
        let action = next_action(agent, &session, env)?;
        let feedback = user.respond(&action, env.taxonomy)?;
        apply_turn(agent, &mut session, action, feedback, env)?;
    }
    Ok(session.into_transcript())
}
