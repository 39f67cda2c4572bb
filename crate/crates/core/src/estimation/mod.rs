//! The recommender component: a pruned factorization machine scoring items
//! (`ŷ`) and attributes (`ĝ`) against the user and the attributes confirmed so
//! far, trained with pairwise ranking losses.

mod model;
mod sampling;
mod train;

pub use model::{
    query_vector, rank_candidates, rank_of, score_attribute, score_candidates, score_item,
    sort_by_score, Embeddings, EmbeddingsMut, FmModel, ParamRow, SparseGrad, Table,
};
pub use sampling::{
    sample_d1, sample_d2, sample_d3, simulated_context, ConversationContext, PairTriple,
    PairwiseBatch,
};
pub use train::{
    attr_pair_objective, init_model, item_pair_objective, mean_loss, train_attr_task,
    train_item_task, train_multitask, MultitaskReport, PhaseReport, TrainConfig, TrainStats,
    TrainingData,
};
