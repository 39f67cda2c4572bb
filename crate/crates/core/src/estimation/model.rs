use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::ids::{AttrId, ItemId, UserId};
use crate::itemset::ItemSet;
use crate::math::{axpy, dot};

/// Row-major embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Table { rows, dim, data: vec![0.0; rows * dim] }
    }

    pub fn from_data(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::DimensionMismatch { expected: rows * dim, got: data.len() });
        }
        Ok(Table { rows, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> Option<&[f64]> {
        (i < self.rows).then(|| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn row_mut(&mut self, i: usize) -> Option<&mut [f64]> {
        if i < self.rows {
            Some(&mut self.data[i * self.dim..(i + 1) * self.dim])
        } else {
            None
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Column-wise mean of all rows.
    pub fn mean_row(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if self.rows == 0 {
            return out;
        }
        for r in 0..self.rows {
            axpy(1.0, self.row(r).unwrap(), &mut out);
        }
        for x in &mut out {
            *x /= self.rows as f64;
        }
        out
    }
}

/// Read access to user, item and attribute embeddings (and optional biases).
pub trait Embeddings {
    fn dim(&self) -> usize;
    fn user(&self, user: UserId) -> Result<&[f64]>;
    fn item(&self, item: ItemId) -> Result<&[f64]>;
    fn attr(&self, attr: AttrId) -> Result<&[f64]>;
    fn item_bias(&self, _item: ItemId) -> f64 {
        0.0
    }
    fn attr_bias(&self, _attr: AttrId) -> f64 {
        0.0
    }
    fn has_bias(&self) -> bool {
        false
    }
}

/// Identifies one trainable row; biases are rows of length one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamRow {
    User(UserId),
    Item(ItemId),
    Attr(AttrId),
    ItemBias(ItemId),
    AttrBias(AttrId),
}

/// Mutable row access for gradient steps.
pub trait EmbeddingsMut: Embeddings {
    fn row_mut(&mut self, row: ParamRow) -> Result<&mut [f64]>;

    fn row(&self, row: ParamRow) -> Result<&[f64]>;
}

/// The pruned factorization machine: `u`, `v` and `p` tables of equal width.
#[derive(Debug, Clone, PartialEq)]
pub struct FmModel {
    users: Table,
    items: Table,
    attrs: Table,
    item_bias: Option<Table>,
    attr_bias: Option<Table>,
}

impl FmModel {
    pub fn zeros(n_users: usize, n_items: usize, n_attrs: usize, dim: usize, bias: bool) -> Self {
        FmModel {
            users: Table::zeros(n_users, dim),
            items: Table::zeros(n_items, dim),
            attrs: Table::zeros(n_attrs, dim),
            item_bias: bias.then(|| Table::zeros(n_items, 1)),
            attr_bias: bias.then(|| Table::zeros(n_attrs, 1)),
        }
    }

    /// Embeddings uniform in `[-scale, scale]`; biases start at zero.
    pub fn random(
        n_users: usize,
        n_items: usize,
        n_attrs: usize,
        dim: usize,
        scale: f64,
        bias: bool,
        rng: &mut crate::Rng,
    ) -> Self {
        let mut m = Self::zeros(n_users, n_items, n_attrs, dim, bias);
        for t in [&mut m.users, &mut m.items, &mut m.attrs] {
            for x in t.as_mut_slice() {
                *x = rng.gen_range(-scale..=scale);
            }
        }
        m
    }

    pub fn from_tables(
        users: Table,
        items: Table,
        attrs: Table,
        item_bias: Option<Table>,
        attr_bias: Option<Table>,
    ) -> Result<Self> {
        let d = users.dim();
        for t in [&items, &attrs] {
            if t.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: t.dim() });
            }
        }
        if item_bias.is_some() != attr_bias.is_some() {
            return Err(Error::invalid("item and attribute biases must be both present or absent"));
        }
        if let (Some(ib), Some(ab)) = (&item_bias, &attr_bias) {
            if ib.rows() != items.rows() || ab.rows() != attrs.rows() || ib.dim() != 1 || ab.dim() != 1
            {
                return Err(Error::invalid("bias table shape does not match embeddings"));
            }
        }
        Ok(FmModel { users, items, attrs, item_bias, attr_bias })
    }

    pub fn n_users(&self) -> usize {
        self.users.rows()
    }

    pub fn n_items(&self) -> usize {
        self.items.rows()
    }

    pub fn n_attrs(&self) -> usize {
        self.attrs.rows()
    }

    pub fn users(&self) -> &Table {
        &self.users
    }

    pub fn items(&self) -> &Table {
        &self.items
    }

    pub fn attrs(&self) -> &Table {
        &self.attrs
    }

    pub fn item_biases(&self) -> Option<&Table> {
        self.item_bias.as_ref()
    }

    pub fn attr_biases(&self) -> Option<&Table> {
        self.attr_bias.as_ref()
    }

    pub fn is_finite(&self) -> bool {
        let tables = [Some(&self.users), Some(&self.items), Some(&self.attrs), self.item_bias.as_ref(), self.attr_bias.as_ref()];
        tables.into_iter().flatten().all(|t| crate::math::all_finite(t.as_slice()))
    }

    pub fn rows_touched(&self) -> usize {
        self.n_users() + self.n_items() + self.n_attrs()
    }
}

impl Embeddings for FmModel {
    fn dim(&self) -> usize {
        self.users.dim()
    }

    fn user(&self, user: UserId) -> Result<&[f64]> {
        self.users.row(user.index()).ok_or(Error::UnknownUser(user))
    }

    fn item(&self, item: ItemId) -> Result<&[f64]> {
        self.items.row(item.index()).ok_or(Error::UnknownItem(item))
    }

    fn attr(&self, attr: AttrId) -> Result<&[f64]> {
        self.attrs.row(attr.index()).ok_or(Error::UnknownAttribute(attr))
    }

    fn item_bias(&self, item: ItemId) -> f64 {
        self.item_bias.as_ref().and_then(|t| t.row(item.index())).map_or(0.0, |r| r[0])
    }

    fn attr_bias(&self, attr: AttrId) -> f64 {
        self.attr_bias.as_ref().and_then(|t| t.row(attr.index())).map_or(0.0, |r| r[0])
    }

    fn has_bias(&self) -> bool {
        self.item_bias.is_some()
    }
}

impl EmbeddingsMut for FmModel {
    fn row_mut(&mut self, row: ParamRow) -> Result<&mut [f64]> {
        match row {
            ParamRow::User(u) => self.users.row_mut(u.index()).ok_or(Error::UnknownUser(u)),
            ParamRow::Item(v) => self.items.row_mut(v.index()).ok_or(Error::UnknownItem(v)),
            ParamRow::Attr(p) => self.attrs.row_mut(p.index()).ok_or(Error::UnknownAttribute(p)),
            ParamRow::ItemBias(v) => self
                .item_bias
                .as_mut()
                .and_then(|t| t.row_mut(v.index()))
                .ok_or(Error::UnknownItem(v)),
            ParamRow::AttrBias(p) => self
                .attr_bias
                .as_mut()
                .and_then(|t| t.row_mut(p.index()))
                .ok_or(Error::UnknownAttribute(p)),
        }
    }

    fn row(&self, row: ParamRow) -> Result<&[f64]> {
        match row {
            ParamRow::User(u) => self.user(u),
            ParamRow::Item(v) => self.item(v),
            ParamRow::Attr(p) => self.attr(p),
            ParamRow::ItemBias(v) => self
                .item_bias
                .as_ref()
                .and_then(|t| t.row(v.index()))
                .ok_or(Error::UnknownItem(v)),
            ParamRow::AttrBias(p) => self
                .attr_bias
                .as_ref()
                .and_then(|t| t.row(p.index()))
                .ok_or(Error::UnknownAttribute(p)),
        }
    }
}

/// Gradient over the rows a batch touched.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad {
    rows: BTreeMap<ParamRow, Vec<f64>>,
}

impl SparseGrad {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, row: ParamRow, scale: f64, values: &[f64]) {
        let entry = self.rows.entry(row).or_insert_with(|| vec![0.0; values.len()]);
        axpy(scale, values, entry);
    }

    pub fn add_scalar(&mut self, row: ParamRow, value: f64) {
        self.rows.entry(row).or_insert_with(|| vec![0.0])[0] += value;
    }

    pub fn get(&self, row: ParamRow) -> Option<&[f64]> {
        self.rows.get(&row).map(Vec::as_slice)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&ParamRow, &Vec<f64>)> {
        self.rows.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.rows.values_mut() {
            for x in v {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rows.values().all(|v| crate::math::all_finite(v))
    }

    pub fn clear(&mut self) {
        self.rows.clear();
    }

    /// `θ ← θ − lr·g` for every touched row.
    pub fn apply<M: EmbeddingsMut + ?Sized>(&self, model: &mut M, lr: f64) -> Result<()> {
        for (row, g) in &self.rows {
            axpy(-lr, g, model.row_mut(*row)?);
        }
        Ok(())
    }
}

/// `u + Σ_{p∈confirmed} p`: the query vector shared by both score forms.
pub fn query_vector<E: Embeddings + ?Sized>(
    model: &E,
    user: UserId,
    confirmed: &BTreeSet<AttrId>,
) -> Result<Vec<f64>> {
    let mut q = model.user(user)?.to_vec();
    for &p in confirmed {
        axpy(1.0, model.attr(p)?, &mut q);
    }
    Ok(q)
}

/// `ŷ(u, v, P_u) = uᵀv + Σ_{p∈P_u} vᵀp` (plus `b_v` when biases are on).
pub fn score_item<E: Embeddings + ?Sized>(
    model: &E,
    user: UserId,
    item: ItemId,
    confirmed: &BTreeSet<AttrId>,
) -> Result<f64> {
    let v = model.item(item)?;
    let mut s = dot(model.user(user)?, v);
    for &p in confirmed {
        s += dot(v, model.attr(p)?);
    }
    Ok(s + model.item_bias(item))
}

/// `ĝ(p | u, P_u) = uᵀp + Σ_{pᵢ∈P_u} pᵀpᵢ` (plus `b_p` when biases are on).
pub fn score_attribute<E: Embeddings + ?Sized>(
    model: &E,
    user: UserId,
    attr: AttrId,
    confirmed: &BTreeSet<AttrId>,
) -> Result<f64> {
    let p = model.attr(attr)?;
    let mut s = dot(model.user(user)?, p);
    for &pi in confirmed {
        s += dot(p, model.attr(pi)?);
    }
    Ok(s + model.attr_bias(attr))
}

/// Scores every candidate; returned in ascending item order.
pub fn score_candidates<E: Embeddings + ?Sized>(
    model: &E,
    user: UserId,
    confirmed: &BTreeSet<AttrId>,
    candidates: &ItemSet,
) -> Result<Vec<(ItemId, f64)>> {
    let q = query_vector(model, user, confirmed)?;
    candidates
        .iter()
        .map(|v| Ok((v, dot(model.item(v)?, &q) + model.item_bias(v))))
        .collect()
}

/// Descending score, ties to the lower id.
pub fn sort_by_score(scored: &mut [(ItemId, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// Top `min(k, |candidates|)` items by `ŷ`, ties broken by ascending id.
pub fn rank_candidates<E: Embeddings + ?Sized>(
    model: &E,
    user: UserId,
    confirmed: &BTreeSet<AttrId>,
    candidates: &ItemSet,
    k: usize,
) -> Result<Vec<ItemId>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut scored = score_candidates(model, user, confirmed, candidates)?;
    sort_by_score(&mut scored);
    Ok(scored.into_iter().take(k).map(|(v, _)| v).collect())
}

/// 0-based rank of `item` among `candidates`, or `None` if absent.
pub fn rank_of<E: Embeddings + ?Sized>(
    model: &E,
    user: UserId,
    confirmed: &BTreeSet<AttrId>,
    candidates: &ItemSet,
    item: ItemId,
) -> Result<Option<usize>> {
    if !candidates.contains(item) {
        return Ok(None);
    }
    let q = query_vector(model, user, confirmed)?;
    let target = dot(model.item(item)?, &q) + model.item_bias(item);
    let mut ahead = 0;
    for v in candidates.iter() {
        if v == item {
            continue;
        }
        let s = dot(model.item(v)?, &q) + model.item_bias(v);
        if s > target || (s == target && v < item) {
            ahead += 1;
        }
    }
    Ok(Some(ahead))
}
