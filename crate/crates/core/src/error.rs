use alloc::string::String;

use crate::ids::{AttrId, ItemId, ParentId, UserId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("user {0} out of range")]
    UnknownUser(UserId),
    #[error("item {0} out of range")]
    UnknownItem(ItemId),
    #[error("attribute {0} out of range")]
    UnknownAttribute(AttrId),
    #[error("parent attribute {0} out of range")]
    UnknownParent(ParentId),
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("item {0} has no attributes")]
    ItemWithoutAttributes(ItemId),
    #[error("every action is masked")]
    AllActionsMasked,
    #[error("invalid action {action} (action space has {size} entries)")]
    InvalidAction { action: usize, size: usize },
    #[error("non-finite value during {stage}: {detail}")]
    NonFinite { stage: &'static str, detail: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("session is not live")]
    SessionClosed,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
