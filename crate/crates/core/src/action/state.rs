use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datasets::{AttributeCatalog, Taxonomy};
use crate::error::{Error, Result};
use crate::estimation::{query_vector, Embeddings};
use crate::ids::{AttrId, ParentId};
use crate::itemset::ItemSet;
use crate::math::{binary_entropy, dot};
use crate::simulator::{QuestionMode, Session};

/// Number of candidate-count buckets in `s_len`.
pub const LEN_BINS: usize = 10;

/// Entropy (bits) of the indicator "carries `attr`" over `candidates`.
pub fn attribute_entropy(candidates: &ItemSet, attr: AttrId, catalog: &AttributeCatalog) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let with = candidates.intersection_len(catalog.items_with(attr)?);
    Ok(binary_entropy(with as f64 / candidates.len() as f64))
}

/// Bucket of `|V_cand|`: `[0,1], (1,2], (2,4], …, (128,256], (256,∞)`.
pub fn length_bin(n: usize) -> usize {
    if n <= 1 {
        return 0;
    }
    // smallest b with n <= 2^b
    let b = (usize::BITS - (n - 1).leading_zeros()) as usize;
    b.min(LEN_BINS - 1)
}

/// `s_ent ⊕ s_pre ⊕ s_his ⊕ s_len`, stored concatenated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    values: Vec<f64>,
    questions: usize,
    max_turns: usize,
}

impl StateVector {
    pub fn from_parts(ent: &[f64], pre: &[f64], his: &[f64], len: &[f64]) -> Result<Self> {
        if ent.len() != pre.len() {
            return Err(Error::DimensionMismatch { expected: ent.len(), got: pre.len() });
        }
        if len.len() != LEN_BINS {
            return Err(Error::DimensionMismatch { expected: LEN_BINS, got: len.len() });
        }
        let mut values = Vec::with_capacity(2 * ent.len() + his.len() + LEN_BINS);
        values.extend_from_slice(ent);
        values.extend_from_slice(pre);
        values.extend_from_slice(his);
        values.extend_from_slice(len);
        Ok(StateVector { values, questions: ent.len(), max_turns: his.len() })
    }

    /// `2·A + T + 10`.
    pub fn layout_len(questions: usize, max_turns: usize) -> usize {
        2 * questions + max_turns + LEN_BINS
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn s_ent(&self) -> &[f64] {
        &self.values[..self.questions]
    }

    pub fn s_pre(&self) -> &[f64] {
        &self.values[self.questions..2 * self.questions]
    }

    pub fn s_his(&self) -> &[f64] {
        &self.values[2 * self.questions..2 * self.questions + self.max_turns]
    }

    pub fn s_len(&self) -> &[f64] {
        &self.values[2 * self.questions + self.max_turns..]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Per-attribute entropy and preference over the session's candidates;
/// attributes already confirmed, rejected or asked contribute 0.
pub fn attribute_signals<E: Embeddings + ?Sized>(
    session: &Session,
    model: &E,
    catalog: &AttributeCatalog,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let cands = session.candidates();
    if cands.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let n = catalog.n_attrs();
    let q = query_vector(model, session.user(), session.confirmed())?;
    let total = cands.len() as f64;
    let mut ent = vec![0.0; n];
    let mut pre = vec![0.0; n];
    for i in 0..n {
        let p = AttrId::new(i);
        if session.attr_is_dead(p) {
            continue;
        }
        let with = cands.intersection_len(catalog.items_with(p)?);
        ent[i] = binary_entropy(with as f64 / total);
        pre[i] = dot(model.attr(p)?, &q) + model.attr_bias(p);
    }
    Ok((ent, pre))
}

/// Sums child signals per parent; asked parents contribute 0.
pub fn parent_signals(session: &Session, taxonomy: &Taxonomy, ent: &[f64], pre: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut pe = vec![0.0; taxonomy.n_parents()];
    let mut pp = vec![0.0; taxonomy.n_parents()];
    for (j, children) in taxonomy.parents() {
        if session.parent_asked(j) {
            continue;
        }
        for c in children {
            pe[j.index()] += ent[c.index()];
            pp[j.index()] += pre[c.index()];
        }
    }
    (pe, pp)
}

/// Builds the policy input for the session's current turn.
pub fn build_state<E: Embeddings + ?Sized>(
    session: &Session,
    model: &E,
    catalog: &AttributeCatalog,
    taxonomy: Option<&Taxonomy>,
) -> Result<StateVector> {
    let (ent, pre) = attribute_signals(session, model, catalog)?;
    let (ent, pre) = match session.mode() {
        QuestionMode::Binary => (ent, pre),
        QuestionMode::Enumerated => {
            let tax = taxonomy.ok_or_else(|| Error::invalid("enumerated mode needs a taxonomy"))?;
            parent_signals(session, tax, &ent, &pre)
        }
    };
    let mut his = vec![0.0; session.max_turns()];
    for (t, &code) in session.history().iter().enumerate().take(his.len()) {
        his[t] = f64::from(code);
    }
    let mut len = [0.0; LEN_BINS];
    len[length_bin(session.candidates().len())] = 1.0;
    StateVector::from_parts(&ent, &pre, &his, &len)
}

/// Number of ask actions in the given mode.
pub fn question_count(mode: QuestionMode, catalog: &AttributeCatalog, taxonomy: Option<&Taxonomy>) -> Result<usize> {
    match mode {
        QuestionMode::Binary => Ok(catalog.n_attrs()),
        QuestionMode::Enumerated => taxonomy
            .map(Taxonomy::n_parents)
            .ok_or_else(|| Error::invalid("enumerated mode needs a taxonomy")),
    }
}

/// Question index of a parent in enumerated mode (identity on ids).
pub fn parent_action(parent: ParentId) -> usize {
    parent.index()
}
