//! Learnable prompt tables and the normalized self-gating fusion.
//!
//! For item `k` with prompt vector `c` (its cluster's prompt, or a
//! combination of cluster/user/session prompts):
//!
//! ```text
//! v̂ = v / ‖v‖,  ĉ = c / ‖c‖
//! g = sigmoid(w · [v̂; ĉ] + b)
//! ṽ = g v̂ + (1 − g) ĉ
//! ```
//!
//! The gate `(w, b)` is shared by all items. Combined variants sum the
//! participating normalized prompts and renormalize before one fusion.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::community::Partition;
use crate::dataset::{Instance, Session};
use crate::tensor::{axpy, dot, normalize_backward_acc, normalize_into, sigmoid, stream_rng, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("prompt table needs at least one row")]
    NoPrompts,
    #[error("embedding dimension must be at least 1")]
    ZeroDimension,
    #[error("unknown prompt variant `{0}` (expected a combination of C, U, S, or `none`)")]
    UnknownVariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Cluster,
    User,
    Session,
}

/// Which prompt sources are fused into item embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PromptVariant {
    pub cluster: bool,
    pub user: bool,
    pub session: bool,
}

impl PromptVariant {
    pub const NONE: Self = Self { cluster: false, user: false, session: false };
    pub const C: Self = Self { cluster: true, user: false, session: false };
    pub const U: Self = Self { cluster: false, user: true, session: false };
    pub const S: Self = Self { cluster: false, user: false, session: true };
    pub const CU: Self = Self { cluster: true, user: true, session: false };
    pub const CS: Self = Self { cluster: true, user: false, session: true };
    pub const US: Self = Self { cluster: false, user: true, session: true };
    pub const CUS: Self = Self { cluster: true, user: true, session: true };

    /// Ablation roster, control first.
    pub const ALL: [Self; 8] = [Self::NONE, Self::C, Self::U, Self::S, Self::CU, Self::CS, Self::US, Self::CUS];

    pub fn is_none(self) -> bool {
        self == Self::NONE
    }

    fn components(self) -> usize {
        self.cluster as usize + self.user as usize + self.session as usize
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_none() {
            return f.write_str("none");
        }
        for (on, letter) in [(self.cluster, "C"), (self.user, "U"), (self.session, "S")] {
            if on {
                f.write_str(letter)?;
            }
        }
        Ok(())
    }
}

impl FromStr for PromptVariant {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        if trimmed.eq_ignore_ascii_case("none") {
            return Ok(Self::NONE);
        }
        let mut v = Self::NONE;
        for ch in trimmed.chars() {
            let slot = match ch.to_ascii_uppercase() {
                'C' => &mut v.cluster,
                'U' => &mut v.user,
                'S' => &mut v.session,
                _ => return Err(PromptError::UnknownVariant(s.to_owned())),
            };
            if *slot {
                return Err(PromptError::UnknownVariant(s.to_owned()));
            }
            *slot = true;
        }
        if v.is_none() {
            return Err(PromptError::UnknownVariant(s.to_owned()));
        }
        Ok(v)
    }
}

impl TryFrom<String> for PromptVariant {
    type Error = PromptError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<PromptVariant> for String {
    fn from(v: PromptVariant) -> Self {
        v.to_string()
    }
}

/// One learnable vector per cluster, user or session.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTable {
    pub kind: PromptKind,
    pub vectors: Matrix,
}

impl PromptTable {
    pub fn num_prompts(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn zeros_like(&self) -> Self {
        Self { kind: self.kind, vectors: Matrix::zeros(self.vectors.rows(), self.vectors.cols()) }
    }
}

/// Xavier-uniform prompt table; rows with norm below `1e-8` are redrawn.
pub fn init_prompts<R: Rng>(
    kind: PromptKind,
    num_prompts: usize,
    d: usize,
    rng: &mut R,
) -> Result<PromptTable, PromptError> {
    if num_prompts == 0 {
        return Err(PromptError::NoPrompts);
    }
    if d == 0 {
        return Err(PromptError::ZeroDimension);
    }
    let mut vectors = Matrix::xavier(num_prompts, d, rng);
    let bound = (6.0 / (num_prompts + d) as f64).sqrt();
    for r in 0..num_prompts {
        while crate::tensor::norm(vectors.row(r)) < 1e-8 {
            vectors.row_mut(r).iter_mut().for_each(|x| *x = rng.gen_range(-bound..bound));
        }
    }
    Ok(PromptTable { kind, vectors })
}

/// Seeded convenience wrapper over [`init_prompts`].
pub fn init_prompts_seeded(
    kind: PromptKind,
    num_prompts: usize,
    d: usize,
    seed: u64,
) -> Result<PromptTable, PromptError> {
    init_prompts(kind, num_prompts, d, &mut stream_rng(seed, 0))
}

/// Shared gate over `[v̂; ĉ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// Length `2d`: item half first, prompt half second.
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl GateParams {
    pub fn init<R: Rng>(d: usize, rng: &mut R) -> Self {
        Self { weight: Matrix::xavier(1, 2 * d, rng).as_slice().to_vec(), bias: 0.0 }
    }

    pub fn zeros(d: usize) -> Self {
        Self { weight: vec![0.0; 2 * d], bias: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.weight.len() / 2
    }

    fn logit(&self, v_hat: &[f64], c_hat: &[f64]) -> f64 {
        let d = self.dim();
        dot(&self.weight[..d], v_hat) + dot(&self.weight[d..], c_hat) + self.bias
    }

    /// Gate value, kept strictly inside (0, 1) even where σ saturates.
    fn open(&self, v_hat: &[f64], c_hat: &[f64]) -> f64 {
        sigmoid(self.logit(v_hat, c_hat)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }
}

/// Fuses one item embedding with one prompt vector; returns `(ṽ, g)`.
pub fn fuse(item: &[f64], prompt: &[f64], gate: &GateParams) -> (Vec<f64>, f64) {
    let mut v_hat = vec![0.0; item.len()];
    let mut c_hat = vec![0.0; prompt.len()];
    normalize_into(item, &mut v_hat);
    normalize_into(prompt, &mut c_hat);
    let g = gate.open(&v_hat, &c_hat);
    let out = v_hat.iter().zip(&c_hat).map(|(v, c)| g * v + (1.0 - g) * c).collect();
    (out, g)
}

/// Prompt tables and gate owned by the model.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptParams {
    pub cluster: Option<PromptTable>,
    pub user: Option<PromptTable>,
    pub session: Option<PromptTable>,
    pub gate: GateParams,
}

impl PromptParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            cluster: self.cluster.as_ref().map(PromptTable::zeros_like),
            user: self.user.as_ref().map(PromptTable::zeros_like),
            session: self.session.as_ref().map(PromptTable::zeros_like),
            gate: GateParams::zeros(self.gate.dim()),
        }
    }
}

/// Per-item cluster lookup covering the whole catalog.
///
/// Items outside the partition start on the most frequent cluster and may
/// be reassigned (e.g. by the test-time overlay).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterMap {
    clusters: Vec<usize>,
    num_clusters: usize,
}

impl ClusterMap {
    pub fn from_partition(partition: &Partition, num_items: usize) -> Self {
        let clusters =
            (0..num_items).map(|i| partition.cluster_of(i).unwrap_or(partition.most_frequent_cluster())).collect();
        Self { clusters, num_clusters: partition.num_clusters().max(1) }
    }

    pub fn get(&self, item: usize) -> usize {
        self.clusters[item]
    }

    pub fn set(&mut self, item: usize, cluster: usize) {
        assert!(cluster < self.num_clusters);
        self.clusters[item] = cluster;
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn num_items(&self) -> usize {
        self.clusters.len()
    }
}

/// Maps `(user, session ordinal)` to a session-prompt row. One row per
/// training session; later ordinals reuse the user's latest earlier row.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionPromptIndex {
    rows: BTreeMap<(usize, usize), usize>,
}

impl SessionPromptIndex {
    pub fn from_train(train: &[Session]) -> Self {
        let mut keys: Vec<(usize, usize)> = train.iter().map(|s| (s.user, s.ordinal)).collect();
        keys.sort_unstable();
        keys.dedup();
        Self { rows: keys.into_iter().enumerate().map(|(row, k)| (k, row)).collect() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, user: usize, ordinal: usize) -> usize {
        if let Some((&(u, _), &row)) = self.rows.range(..=(user, ordinal)).next_back() {
            if u == user {
                return row;
            }
        }
        // no earlier session for this user: take their first, else row 0
        self.rows.range((user, 0)..).next().filter(|((u, _), _)| *u == user).map_or(0, |(_, &r)| r)
    }
}

/// Which user/session prompt applies; `None` when the variant ignores it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PromptContext {
    pub user: Option<usize>,
    pub session: Option<usize>,
}

impl PromptContext {
    pub fn for_instance(variant: PromptVariant, sessions: &SessionPromptIndex, inst: &Instance) -> Self {
        Self {
            user: variant.user.then_some(inst.user),
            session: variant.session.then(|| sessions.row(inst.user, inst.session_ordinal)),
        }
    }
}

/// Row-normalized raw item embeddings with their floored norms.
#[derive(Debug, Clone)]
pub struct NormalizedItems {
    pub hat: Matrix,
    pub norms: Vec<f64>,
}

pub fn normalize_rows(m: &Matrix) -> NormalizedItems {
    let mut hat = Matrix::zeros(m.rows(), m.cols());
    let norms = (0..m.rows()).map(|r| normalize_into(m.row(r), hat.row_mut(r))).collect();
    NormalizedItems { hat, norms }
}

/// Accumulates `∂L/∂v` from `∂L/∂v̂` for every row.
pub fn normalize_rows_backward(items: &NormalizedItems, d_hat: &Matrix, d_raw: &mut Matrix) {
    for r in 0..d_hat.rows() {
        normalize_backward_acc(items.hat.row(r), items.norms[r], d_hat.row(r), d_raw.row_mut(r));
    }
}

/// Fused embedding table for one prompt context, plus the forward cache.
#[derive(Debug, Clone)]
pub struct PromptedEmbeddings {
    pub matrix: Matrix,
    /// Per-item gate values; empty when fusion is bypassed.
    pub gates: Vec<f64>,
    variant: PromptVariant,
    context: PromptContext,
    /// Un-normalized combined prompt per combo (cluster, or a single combo).
    combo_raw: Matrix,
    combo_hat: Matrix,
    combo_norms: Vec<f64>,
    item_combo: Vec<usize>,
}

impl PromptedEmbeddings {
    pub fn variant(&self) -> PromptVariant {
        self.variant
    }

    pub fn context(&self) -> PromptContext {
        self.context
    }

    /// Normalized prompt vector entering item `k`'s fusion.
    pub fn prompt_for(&self, item: usize) -> Option<&[f64]> {
        (!self.variant.is_none()).then(|| self.combo_hat.row(self.item_combo[item]))
    }

    /// Recomputes one item's row after its cluster changed.
    pub fn refresh_item(&mut self, items: &NormalizedItems, clusters: &ClusterMap, gate: &GateParams, item: usize) {
        if self.variant.is_none() {
            return;
        }
        let combo = if self.variant.cluster { clusters.get(item) } else { 0 };
        self.item_combo[item] = combo;
        let g = fuse_row(items.hat.row(item), self.combo_hat.row(combo), gate, self.matrix.row_mut(item));
        self.gates[item] = g;
    }
}

fn fuse_row(v_hat: &[f64], c_hat: &[f64], gate: &GateParams, out: &mut [f64]) -> f64 {
    let g = gate.open(v_hat, c_hat);
    for ((o, v), c) in out.iter_mut().zip(v_hat).zip(c_hat) {
        *o = g * v + (1.0 - g) * c;
    }
    g
}

/// Source rows `(kind, row)` summed into each combined prompt.
fn combo_components(variant: PromptVariant, ctx: PromptContext, combo: usize) -> Vec<(PromptKind, usize)> {
    let mut parts = Vec::with_capacity(3);
    if variant.cluster {
        parts.push((PromptKind::Cluster, combo));
    }
    if let Some(u) = ctx.user {
        parts.push((PromptKind::User, u));
    }
    if let Some(s) = ctx.session {
        parts.push((PromptKind::Session, s));
    }
    parts
}

fn table(params: &PromptParams, kind: PromptKind) -> &PromptTable {
    let t = match kind {
        PromptKind::Cluster => &params.cluster,
        PromptKind::User => &params.user,
        PromptKind::Session => &params.session,
    };
    t.as_ref().unwrap_or_else(|| panic!("{kind:?} prompt table required by the variant is missing"))
}

fn table_mut(params: &mut PromptParams, kind: PromptKind) -> &mut PromptTable {
    let t = match kind {
        PromptKind::Cluster => &mut params.cluster,
        PromptKind::User => &mut params.user,
        PromptKind::Session => &mut params.session,
    };
    t.as_mut().unwrap_or_else(|| panic!("{kind:?} prompt gradient table is missing"))
}

/// Builds the prompted embedding table for one context.
///
/// With the empty variant the output is the row-normalized input.
pub fn prompt_all(
    items: &NormalizedItems,
    clusters: &ClusterMap,
    params: &PromptParams,
    variant: PromptVariant,
    context: PromptContext,
) -> PromptedEmbeddings {
    let (n, d) = (items.hat.rows(), items.hat.cols());
    if variant.is_none() {
        return PromptedEmbeddings {
            matrix: items.hat.clone(),
            gates: Vec::new(),
            variant,
            context,
            combo_raw: Matrix::zeros(0, d),
            combo_hat: Matrix::zeros(0, d),
            combo_norms: Vec::new(),
            item_combo: Vec::new(),
        };
    }
    let num_combos = if variant.cluster { clusters.num_clusters() } else { 1 };
    let mut combo_raw = Matrix::zeros(num_combos, d);
    let mut combo_hat = Matrix::zeros(num_combos, d);
    let mut scratch = vec![0.0; d];
    let single = variant.components() == 1;
    for m in 0..num_combos {
        for (kind, row) in combo_components(variant, context, m) {
            let src = table(params, kind).vectors.row(row);
            if single {
                combo_raw.row_mut(m).copy_from_slice(src);
            } else {
                normalize_into(src, &mut scratch);
                axpy(1.0, &scratch, combo_raw.row_mut(m));
            }
        }
    }
    let combo_norms = (0..num_combos).map(|m| normalize_into(combo_raw.row(m), combo_hat.row_mut(m))).collect();
    let item_combo: Vec<usize> = (0..n).map(|k| if variant.cluster { clusters.get(k) } else { 0 }).collect();
    let mut matrix = Matrix::zeros(n, d);
    let gates = (0..n)
        .map(|k| fuse_row(items.hat.row(k), combo_hat.row(item_combo[k]), &params.gate, matrix.row_mut(k)))
        .collect();
    PromptedEmbeddings { matrix, gates, variant, context, combo_raw, combo_hat, combo_norms, item_combo }
}

/// Backprop from `∂L/∂ṽ` into `∂L/∂v̂` (accumulated in `d_item_hat`), the
/// gate and the prompt tables (accumulated in `grads`).
pub fn prompt_backward(
    pe: &PromptedEmbeddings,
    items: &NormalizedItems,
    params: &PromptParams,
    d_prompted: &Matrix,
    d_item_hat: &mut Matrix,
    grads: &mut PromptParams,
) {
    if pe.variant.is_none() {
        axpy(1.0, d_prompted.as_slice(), d_item_hat.as_mut_slice());
        return;
    }
    let d = items.hat.cols();
    let (w_item, w_prompt) = params.gate.weight.split_at(d);
    let mut d_combo_hat = Matrix::zeros(pe.combo_hat.rows(), d);
    let mut d_gate_w = vec![0.0; 2 * d];
    let mut d_gate_b = 0.0;
    for k in 0..items.hat.rows() {
        let dy = d_prompted.row(k);
        if dy.iter().all(|&x| x == 0.0) {
            continue;
        }
        let g = pe.gates[k];
        let m = pe.item_combo[k];
        let v_hat = items.hat.row(k);
        let c_hat = pe.combo_hat.row(m);
        let dg: f64 = dy.iter().zip(v_hat.iter().zip(c_hat)).map(|(dyi, (v, c))| dyi * (v - c)).sum();
        let da = dg * g * (1.0 - g);
        let dv = d_item_hat.row_mut(k);
        axpy(g, dy, dv);
        axpy(da, w_item, dv);
        let dc = d_combo_hat.row_mut(m);
        axpy(1.0 - g, dy, dc);
        axpy(da, w_prompt, dc);
        axpy(da, v_hat, &mut d_gate_w[..d]);
        axpy(da, c_hat, &mut d_gate_w[d..]);
        d_gate_b += da;
    }
    axpy(1.0, &d_gate_w, &mut grads.gate.weight);
    grads.gate.bias += d_gate_b;

    let single = pe.variant.components() == 1;
    let mut d_raw = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    for m in 0..pe.combo_hat.rows() {
        d_raw.iter_mut().for_each(|x| *x = 0.0);
        normalize_backward_acc(pe.combo_hat.row(m), pe.combo_norms[m], d_combo_hat.row(m), &mut d_raw);
        for (kind, row) in combo_components(pe.variant, pe.context, m) {
            let target = table_mut(grads, kind).vectors.row_mut(row);
            if single {
                axpy(1.0, &d_raw, target);
            } else {
                let src = table(params, kind).vectors.row(row);
                let n = normalize_into(src, &mut scratch);
                normalize_backward_acc(&scratch, n, &d_raw, target);
            }
        }
    }
    debug_assert!(pe.combo_raw.rows() == pe.combo_hat.rows());
}
