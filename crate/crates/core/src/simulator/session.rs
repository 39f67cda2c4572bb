use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::action::{step_reward, RewardConfig, TurnOutcome};
use crate::datasets::{candidate_items, AttributeCatalog, Taxonomy};
use crate::error::{Error, Result};
use crate::ids::{AttrId, ItemId, ParentId, UserId};
use crate::itemset::ItemSet;
use crate::reflection::ReflectionOutcome;

/// Version of the transcript JSON layout.
pub const TRANSCRIPT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionMode {
    /// Yes/no questions about single attributes.
    #[default]
    Binary,
    /// One parent attribute per question; the user picks matching children.
    Enumerated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub max_turns: usize,
    pub list_len: usize,
    pub mode: QuestionMode,
    /// Drop items carrying an attribute the user said no to.
    pub filter_rejected_attrs: bool,
    /// Let the opening attribute exchange consume turn 1.
    pub initial_turn_counts: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            max_turns: 15,
            list_len: 10,
            mode: QuestionMode::Binary,
            filter_rejected_attrs: false,
            initial_turn_counts: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_turns == 0 || self.list_len == 0 {
            return Err(Error::invalid("max_turns and list_len must be at least 1"));
        }
        if self.initial_turn_counts && self.max_turns < 2 {
            return Err(Error::invalid("counting the opening turn needs max_turns >= 2"));
        }
        Ok(())
    }
}

/// A system move.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Ask(AttrId),
    AskParent(ParentId),
    Recommend(Vec<ItemId>),
}

impl Action {
    /// Index in the policy's action space: questions first, recommend last.
    pub fn index(&self, questions: usize) -> usize {
        match self {
            Action::Ask(p) => p.index(),
            Action::AskParent(j) => j.index(),
            Action::Recommend(_) => questions,
        }
    }

    pub fn is_recommend(&self) -> bool {
        matches!(self, Action::Recommend(_))
    }
}

/// A user reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    Yes,
    No,
    /// Children of the asked parent the user likes; empty means none.
    Children(BTreeSet<AttrId>),
    Accept,
    Reject,
}

/// How the session was opened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Opening {
    Attribute(AttrId),
    Parent { parent: ParentId, children: BTreeSet<AttrId> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Live,
    Success,
    Quit,
}

/// Rank of the ground-truth item around one reflection (simulated runs only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionTrace {
    pub pairs: usize,
    pub losses: Vec<f64>,
    pub candidates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_rank_before: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_rank_after: Option<usize>,
}

impl ReflectionTrace {
    pub fn from_outcome(out: &ReflectionOutcome, candidates: usize) -> Self {
        ReflectionTrace {
            pairs: out.pairs,
            losses: out.losses.clone(),
            candidates,
            target_rank_before: None,
            target_rank_after: None,
        }
    }

    /// The ground-truth item fell strictly further down the candidate ranking.
    pub fn is_bad_update(&self) -> bool {
        matches!((self.target_rank_before, self.target_rank_after), (Some(b), Some(a)) if a > b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: usize,
    pub action: Action,
    pub feedback: Feedback,
    pub outcome: TurnOutcome,
    pub reward: f64,
    /// `|V_cand|` when the action was chosen.
    pub candidates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<ReflectionTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub schema_version: u32,
    pub user: UserId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<ItemId>,
    pub mode: QuestionMode,
    /// `None` until the user has stated a first preference.
    #[serde(default)]
    pub opening: Option<Opening>,
    pub turns: Vec<TurnRecord>,
    pub status: SessionStatus,
    pub success_turn: Option<usize>,
    /// `|V_cand|` right after the opening, then after every turn.
    pub candidate_trace: Vec<usize>,
}

impl SessionTranscript {
    /// Transcript of a conversation that has not started yet.
    pub fn pending(user: UserId, mode: QuestionMode) -> Self {
        SessionTranscript {
            schema_version: TRANSCRIPT_SCHEMA_VERSION,
            user,
            target: None,
            mode,
            opening: None,
            turns: Vec::new(),
            status: SessionStatus::Live,
            success_turn: None,
            candidate_trace: Vec::new(),
        }
    }

    /// Turn of success, or `max_turns` for anything else.
    pub fn terminal_turn(&self, max_turns: usize) -> usize {
        match (self.status, self.success_turn) {
            (SessionStatus::Success, Some(t)) => t,
            _ => max_turns,
        }
    }

    pub fn reflections(&self) -> impl Iterator<Item = &ReflectionTrace> {
        self.turns.iter().filter_map(|t| t.reflection.as_ref())
    }
}

/// Live conversation state shared by the simulator and the interactive service.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    user: UserId,
    config: SimConfig,
    turn: usize,
    confirmed: BTreeSet<AttrId>,
    rejected_attrs: BTreeSet<AttrId>,
    asked_attrs: BTreeSet<AttrId>,
    asked_parents: BTreeSet<ParentId>,
    rejected_items: BTreeSet<ItemId>,
    candidates: ItemSet,
    history: Vec<i8>,
    status: SessionStatus,
    transcript: SessionTranscript,
}

impl Session {
    /// Opens a session with the user's first stated preference (turn 0).
    pub fn start(
        user: UserId,
        opening: Opening,
        catalog: &AttributeCatalog,
        taxonomy: Option<&Taxonomy>,
        config: SimConfig,
    ) -> Result<Self> {
        config.validate()?;
        let mut confirmed = BTreeSet::new();
        let mut rejected_attrs = BTreeSet::new();
        let mut asked_attrs = BTreeSet::new();
        let mut asked_parents = BTreeSet::new();
        match (&opening, config.mode) {
            (Opening::Attribute(p), _) => {
                catalog.check_attr(*p)?;
                confirmed.insert(*p);
                asked_attrs.insert(*p);
                if let (QuestionMode::Enumerated, Some(tax)) = (config.mode, taxonomy) {
                    if let Some(parent) = tax.parent_of(*p) {
                        asked_parents.insert(parent);
                    }
                }
            }
            (Opening::Parent { parent, children }, QuestionMode::Enumerated) => {
                let tax = taxonomy.ok_or_else(|| Error::invalid("enumerated mode needs a taxonomy"))?;
                let all = tax.children(*parent)?;
                if children.is_empty() {
                    return Err(Error::invalid("opening needs at least one attribute"));
                }
                for c in children {
                    if !all.contains(c) {
                        return Err(Error::invalid(format!("attribute {c} is not a child of parent {parent}")));
                    }
                }
                confirmed.extend(children.iter().copied());
                rejected_attrs.extend(all.iter().copied().filter(|c| !children.contains(c)));
                asked_attrs.extend(all.iter().copied());
                asked_parents.insert(*parent);
            }
            (Opening::Parent { .. }, QuestionMode::Binary) => {
                return Err(Error::invalid("parent opening in binary mode"));
            }
        }
        let candidates = candidate_items(catalog, &confirmed)?;
        let (turn, history) = if config.initial_turn_counts { (1, vec![1]) } else { (0, vec![]) };
        let transcript = SessionTranscript {
            schema_version: TRANSCRIPT_SCHEMA_VERSION,
            user,
            target: None,
            mode: config.mode,
            opening: Some(opening),
            turns: Vec::new(),
            status: SessionStatus::Live,
            success_turn: None,
            candidate_trace: vec![candidates.len()],
        };
        let mut s = Session {
            user,
            config,
            turn,
            confirmed,
            rejected_attrs,
            asked_attrs,
            asked_parents,
            rejected_items: BTreeSet::new(),
            candidates,
            history,
            status: SessionStatus::Live,
            transcript,
        };
        if s.candidates.is_empty() {
            s.close(SessionStatus::Quit);
        }
        Ok(s)
    }

    pub fn user(&self) -> UserId {
        self.user
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn mode(&self) -> QuestionMode {
        self.config.mode
    }

    pub fn max_turns(&self) -> usize {
        self.config.max_turns
    }

    pub fn list_len(&self) -> usize {
        self.config.list_len
    }

    /// Turns consumed so far.
    pub fn turn(&self) -> usize {
        self.turn
    }

    pub fn confirmed(&self) -> &BTreeSet<AttrId> {
        &self.confirmed
    }

    pub fn rejected_attrs(&self) -> &BTreeSet<AttrId> {
        &self.rejected_attrs
    }

    pub fn rejected_items(&self) -> &BTreeSet<ItemId> {
        &self.rejected_items
    }

    pub fn candidates(&self) -> &ItemSet {
        &self.candidates
    }

    /// Feedback codes per turn: 1 liked attribute, 0 disliked, −1 failed recommendation.
    pub fn history(&self) -> &[i8] {
        &self.history
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn is_live(&self) -> bool {
        self.status == SessionStatus::Live
    }

    pub fn transcript(&self) -> &SessionTranscript {
        &self.transcript
    }

    pub fn set_target(&mut self, target: ItemId) {
        self.transcript.target = Some(target);
    }

    /// No further information can come from asking about `attr`.
    pub fn attr_is_dead(&self, attr: AttrId) -> bool {
        self.confirmed.contains(&attr) || self.rejected_attrs.contains(&attr) || self.asked_attrs.contains(&attr)
    }

    pub fn parent_asked(&self, parent: ParentId) -> bool {
        self.asked_parents.contains(&parent)
    }

    /// `questions + 1` flags; the trailing recommend action is always allowed.
    pub fn action_mask(&self, questions: usize) -> Vec<bool> {
        let mut mask = vec![true; questions + 1];
        for (i, m) in mask.iter_mut().enumerate().take(questions) {
            *m = match self.config.mode {
                QuestionMode::Binary => !self.attr_is_dead(AttrId::new(i)),
                QuestionMode::Enumerated => !self.parent_asked(ParentId::new(i)),
            };
        }
        mask
    }

    pub fn validate_action(&self, action: &Action, catalog: &AttributeCatalog, taxonomy: Option<&Taxonomy>) -> Result<()> {
        if !self.is_live() {
            return Err(Error::SessionClosed);
        }
        match (action, self.config.mode) {
            (Action::Ask(p), QuestionMode::Binary) => {
                catalog.check_attr(*p)?;
                if self.attr_is_dead(*p) {
                    return Err(Error::invalid(format!("attribute {p} was already asked")));
                }
            }
            (Action::AskParent(j), QuestionMode::Enumerated) => {
                let tax = taxonomy.ok_or_else(|| Error::invalid("enumerated mode needs a taxonomy"))?;
                tax.children(*j)?;
                if self.parent_asked(*j) {
                    return Err(Error::invalid(format!("parent {j} was already asked")));
                }
            }
            (Action::Recommend(items), _) => {
                if items.is_empty() || items.len() > self.config.list_len {
                    return Err(Error::invalid(format!("recommendation of {} items", items.len())));
                }
                let mut seen = BTreeSet::new();
                for v in items {
                    if !self.candidates.contains(*v) || !seen.insert(*v) {
                        return Err(Error::invalid(format!("item {v} is not an open candidate")));
                    }
                }
            }
            _ => return Err(Error::invalid("question type does not match the session mode")),
        }
        Ok(())
    }

    fn close(&mut self, status: SessionStatus) {
        self.status = status;
        self.transcript.status = status;
    }

    /// Applies one `(action, feedback)` exchange and returns the reward outcome.
    pub fn apply(
        &mut self,
        action: Action,
        feedback: Feedback,
        rewards: &RewardConfig,
        catalog: &AttributeCatalog,
        taxonomy: Option<&Taxonomy>,
    ) -> Result<TurnOutcome> {
        self.validate_action(&action, catalog, taxonomy)?;
        let candidates_before = self.candidates.len();
        let (mut outcome, code) = match (&action, &feedback) {
            (Action::Ask(p), Feedback::Yes) => {
                self.asked_attrs.insert(*p);
                self.confirmed.insert(*p);
                self.candidates.intersect_with(catalog.items_with(*p)?);
                (TurnOutcome::AskAccepted, 1)
            }
            (Action::Ask(p), Feedback::No) => {
                self.asked_attrs.insert(*p);
                self.rejected_attrs.insert(*p);
                if self.config.filter_rejected_attrs {
                    self.candidates.subtract(catalog.items_with(*p)?);
                }
                (TurnOutcome::AskRejected, 0)
            }
            (Action::AskParent(j), Feedback::Children(chosen)) => {
                let tax = taxonomy.ok_or_else(|| Error::invalid("enumerated mode needs a taxonomy"))?;
                let children = tax.children(*j)?;
                if let Some(c) = chosen.iter().find(|c| !children.contains(c)) {
                    return Err(Error::invalid(format!("attribute {c} is not a child of parent {j}")));
                }
                self.asked_parents.insert(*j);
                for &c in children {
                    self.asked_attrs.insert(c);
                    if chosen.contains(&c) {
                        self.confirmed.insert(c);
                        self.candidates.intersect_with(catalog.items_with(c)?);
                    } else {
                        self.rejected_attrs.insert(c);
                        if self.config.filter_rejected_attrs {
                            self.candidates.subtract(catalog.items_with(c)?);
                        }
                    }
                }
                if chosen.is_empty() {
                    (TurnOutcome::AskRejected, 0)
                } else {
                    (TurnOutcome::AskAccepted, 1)
                }
            }
            (Action::Recommend(_), Feedback::Accept) => (TurnOutcome::RecommendAccepted, 1),
            (Action::Recommend(items), Feedback::Reject) => {
                for &v in items {
                    self.rejected_items.insert(v);
                    self.candidates.remove(v);
                }
                (TurnOutcome::RecommendRejected, -1)
            }
            _ => return Err(Error::invalid("feedback does not answer the action")),
        };
        self.turn += 1;
        self.history.push(code);
        if outcome == TurnOutcome::RecommendAccepted {
            self.transcript.success_turn = Some(self.turn);
            self.close(SessionStatus::Success);
        } else if self.turn >= self.config.max_turns || self.candidates.is_empty() {
            outcome = TurnOutcome::Quit;
            self.close(SessionStatus::Quit);
        }
        let reward = step_reward(outcome, rewards);
        self.transcript.turns.push(TurnRecord {
            turn: self.turn,
            action,
            feedback,
            outcome,
            reward,
            candidates: candidates_before,
            reflection: None,
        });
        self.transcript.candidate_trace.push(self.candidates.len());
        Ok(outcome)
    }

    /// Ends a live session on the user's request.
    pub fn quit(&mut self) {
        if self.is_live() {
            self.close(SessionStatus::Quit);
        }
    }

    pub fn attach_reflection(&mut self, trace: ReflectionTrace) {
        if let Some(last) = self.transcript.turns.last_mut() {
            last.reflection = Some(trace);
        }
    }

    pub fn into_transcript(self) -> SessionTranscript {
        self.transcript
    }
}
