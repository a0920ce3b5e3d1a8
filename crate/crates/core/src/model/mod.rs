//! Item embeddings, session encoders, full-catalog scoring and the
//! cross-entropy objective with hand-written gradients.

mod attn;
mod gru;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use attn::{AttnParams, AttnTrace};
pub use gru::{GruParams, GruTrace};

use crate::dataset::Instance;
use crate::prompt::{
    init_prompts, normalize_rows, normalize_rows_backward, prompt_all, prompt_backward, ClusterMap, GateParams,
    NormalizedItems, PromptContext, PromptKind, PromptParams, PromptTable, PromptVariant, PromptedEmbeddings,
    SessionPromptIndex,
};
use crate::tensor::{axpy, log_sum_exp, softmax, stream_rng, Matrix};

// Independent RNG streams derived from the master seed. Embeddings and the
// encoder use the same streams for every variant, so ablation runs start
// from identical weights.
const STREAM_EMBED: u64 = 1;
const STREAM_ENCODER: u64 = 2;
const STREAM_CLUSTER: u64 = 3;
const STREAM_USER: u64 = 4;
const STREAM_SESSION: u64 = 5;
const STREAM_GATE: u64 = 6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("catalog must contain at least one item")]
    EmptyCatalog,
    #[error("embedding dimension must be at least 1")]
    ZeroDimension,
    #[error("variant {variant} needs at least one {what}")]
    MissingPrompts { variant: PromptVariant, what: &'static str },
    #[error("session prefix is empty")]
    EmptyPrefix,
    #[error("item {item} is outside the catalog of {num_items}")]
    ItemOutOfRange { item: usize, num_items: usize },
    #[error("non-finite value in gradient of {tensor}")]
    NonFiniteGradient { tensor: String },
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("unknown encoder `{0}` (expected gru or attn)")]
    UnknownEncoder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    #[default]
    Gru,
    Attn,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Gru => "gru",
            EncoderKind::Attn => "attn",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(EncoderKind::Gru),
            "attn" => Ok(EncoderKind::Attn),
            _ => Err(ModelError::UnknownEncoder(s.to_string())),
        }
    }
}

/// Everything needed to allocate a parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub num_items: usize,
    pub d: usize,
    pub encoder: EncoderKind,
    pub variant: PromptVariant,
    pub num_clusters: usize,
    pub num_users: usize,
    pub num_session_rows: usize,
}

impl ModelShape {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_items == 0 {
            return Err(ModelError::EmptyCatalog);
        }
        if self.d == 0 {
            return Err(ModelError::ZeroDimension);
        }
        let v = self.variant;
        for (used, n, what) in [
            (v.cluster, self.num_clusters, "cluster"),
            (v.user, self.num_users, "user"),
            (v.session, self.num_session_rows, "session row"),
        ] {
            if used && n == 0 {
                return Err(ModelError::MissingPrompts { variant: v, what });
            }
        }
        Ok(())
    }
}

// one per model, so the size gap between variants costs nothing
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Gru(GruParams),
    Attn(AttnParams),
}

enum Trace {
    Gru(GruTrace),
    Attn(AttnTrace),
}

impl Encoder {
    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Gru(_) => EncoderKind::Gru,
            Encoder::Attn(_) => EncoderKind::Attn,
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            Encoder::Gru(p) => Encoder::Gru(GruParams::zeros(p.dim())),
            Encoder::Attn(p) => Encoder::Attn(AttnParams::zeros(p.dim())),
        }
    }

    fn forward(&self, prefix: &[usize], table: &Matrix) -> (Vec<f64>, Trace) {
        match self {
            Encoder::Gru(p) => {
                let (s, t) = p.forward(prefix, table);
                (s, Trace::Gru(t))
            }
            Encoder::Attn(p) => {
                let (s, t) = p.forward(prefix, table);
                (s, Trace::Attn(t))
            }
        }
    }

    fn backward(&self, trace: &Trace, table: &Matrix, d_out: &[f64], grads: &mut Encoder, d_table: &mut Matrix) {
        match (self, trace, grads) {
            (Encoder::Gru(p), Trace::Gru(t), Encoder::Gru(g)) => p.backward(t, table, d_out, g, d_table),
            (Encoder::Attn(p), Trace::Attn(t), Encoder::Attn(g)) => p.backward(t, table, d_out, g, d_table),
            _ => unreachable!("encoder, trace and gradient kinds always agree"),
        }
    }
}

/// All learnable tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub item_embeddings: Matrix,
    pub encoder: Encoder,
    pub prompts: PromptParams,
}

/// Name and shape of one tensor in [`ModelParams::tensors`] order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ModelParams {
    /// Xavier-uniform matrices and zero biases, all drawn from `seed`.
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self, ModelError> {
        shape.validate()?;
        let d = shape.d;
        let item_embeddings = Matrix::xavier(shape.num_items, d, &mut stream_rng(seed, STREAM_EMBED));
        let mut rng = stream_rng(seed, STREAM_ENCODER);
        let encoder = match shape.encoder {
            EncoderKind::Gru => Encoder::Gru(GruParams::init(d, &mut rng)),
            EncoderKind::Attn => Encoder::Attn(AttnParams::init(d, &mut rng)),
        };
        let v = shape.variant;
        let table = |used: bool, kind, n, stream| -> Result<Option<PromptTable>, ModelError> {
            if !used {
                return Ok(None);
            }
            init_prompts(kind, n, d, &mut stream_rng(seed, stream))
                .map(Some)
                .map_err(|_| ModelError::MissingPrompts { variant: v, what: "prompt" })
        };
        let prompts = PromptParams {
            cluster: table(v.cluster, PromptKind::Cluster, shape.num_clusters, STREAM_CLUSTER)?,
            user: table(v.user, PromptKind::User, shape.num_users, STREAM_USER)?,
            session: table(v.session, PromptKind::Session, shape.num_session_rows, STREAM_SESSION)?,
            gate: GateParams::init(d, &mut stream_rng(seed, STREAM_GATE)),
        };
        Ok(Self { shape, item_embeddings, encoder, prompts })
    }

    pub fn zeros(shape: ModelShape) -> Result<Self, ModelError> {
        shape.validate()?;
        let d = shape.d;
        let encoder = match shape.encoder {
            EncoderKind::Gru => Encoder::Gru(GruParams::zeros(d)),
            EncoderKind::Attn => Encoder::Attn(AttnParams::zeros(d)),
        };
        let v = shape.variant;
        let table = |used: bool, kind, n| used.then(|| PromptTable { kind, vectors: Matrix::zeros(n, d) });
        let prompts = PromptParams {
            cluster: table(v.cluster, PromptKind::Cluster, shape.num_clusters),
            user: table(v.user, PromptKind::User, shape.num_users),
            session: table(v.session, PromptKind::Session, shape.num_session_rows),
            gate: GateParams::zeros(d),
        };
        Ok(Self { shape, item_embeddings: Matrix::zeros(shape.num_items, d), encoder, prompts })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape,
            item_embeddings: Matrix::zeros(self.item_embeddings.rows(), self.item_embeddings.cols()),
            encoder: self.encoder.zeros_like(),
            prompts: self.prompts.zeros_like(),
        }
    }

    pub fn variant(&self) -> PromptVariant {
        self.shape.variant
    }

    pub fn num_items(&self) -> usize {
        self.shape.num_items
    }

    /// The raw item embedding table.
    pub fn embed(&self) -> &Matrix {
        &self.item_embeddings
    }

    /// Every learnable tensor with its name and shape, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let [n, d] = self.item_embeddings.shape();
        let mut out: Vec<(String, Vec<usize>, &[f64])> =
            vec![("item_embeddings".into(), vec![n, d], self.item_embeddings.as_slice())];
        let enc = match &self.encoder {
            Encoder::Gru(p) => p.tensors(),
            Encoder::Attn(p) => p.tensors(),
        };
        out.extend(enc.into_iter().map(|(name, shape, data)| (name.to_string(), shape, data)));
        for (name, t) in [
            ("prompt.cluster", &self.prompts.cluster),
            ("prompt.user", &self.prompts.user),
            ("prompt.session", &self.prompts.session),
        ] {
            if let Some(t) = t {
                out.push((name.into(), t.vectors.shape().to_vec(), t.vectors.as_slice()));
            }
        }
        out.push(("gate.weight".into(), vec![2 * d], &self.prompts.gate.weight));
        out.push(("gate.bias".into(), vec![1], std::slice::from_ref(&self.prompts.gate.bias)));
        out
    }

    /// Mutable views in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.item_embeddings.as_mut_slice()];
        match &mut self.encoder {
            Encoder::Gru(p) => out.extend(p.tensors_mut()),
            Encoder::Attn(p) => out.extend(p.tensors_mut()),
        }
        for t in [&mut self.prompts.cluster, &mut self.prompts.user, &mut self.prompts.session].into_iter().flatten() {
            out.push(t.vectors.as_mut_slice());
        }
        out.push(&mut self.prompts.gate.weight);
        out.push(std::slice::from_mut(&mut self.prompts.gate.bias));
        out
    }

    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        self.tensors().into_iter().map(|(name, shape, _)| TensorSpec { name, shape }).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Names the first tensor holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<(), ModelError> {
        match self.tensors().into_iter().find(|(_, _, t)| t.iter().any(|x| !x.is_finite())) {
            Some((tensor, _, _)) => Err(ModelError::NonFiniteGradient { tensor }),
            None => Ok(()),
        }
    }

    pub fn normalized_items(&self) -> NormalizedItems {
        normalize_rows(&self.item_embeddings)
    }

    /// Prompted embedding table for one context.
    pub fn prompted(
        &self,
        items: &NormalizedItems,
        clusters: &ClusterMap,
        context: PromptContext,
    ) -> PromptedEmbeddings {
        prompt_all(items, clusters, &self.prompts, self.variant(), context)
    }

    pub fn encode_session(&self, prefix: &[usize], prompted: &PromptedEmbeddings) -> Result<Vec<f64>, ModelError> {
        check_prefix(prefix, prompted.matrix.rows())?;
        Ok(self.encoder.forward(prefix, &prompted.matrix).0)
    }

    /// Logits for the next item given a prefix.
    pub fn logits(&self, prefix: &[usize], prompted: &PromptedEmbeddings) -> Result<Vec<f64>, ModelError> {
        let s = self.encode_session(prefix, prompted)?;
        Ok(score(&s, prompted))
    }

    /// Mean loss and gradients over a batch.
    ///
    /// Instances sharing a prompt context share one prompted table. Sums run
    /// in a fixed order, so results are bit-reproducible.
    pub fn loss_and_grad(
        &self,
        batch: &[&Instance],
        clusters: &ClusterMap,
        sessions: &SessionPromptIndex,
    ) -> Result<(f64, ModelParams), ModelError> {
        let mut grads = self.zeros_like();
        if batch.is_empty() {
            return Ok((0.0, grads));
        }
        let n = self.num_items();
        let d = self.shape.d;
        let scale = 1.0 / batch.len() as f64;
        let items = self.normalized_items();
        let mut groups: BTreeMap<PromptContext, Vec<&Instance>> = BTreeMap::new();
        for inst in batch {
            check_prefix(&inst.prefix, n)?;
            if inst.label >= n {
                return Err(ModelError::ItemOutOfRange { item: inst.label, num_items: n });
            }
            groups.entry(PromptContext::for_instance(self.variant(), sessions, inst)).or_default().push(inst);
        }

        let mut total = 0.0;
        let mut d_item_hat = Matrix::zeros(n, d);
        let mut d_prompted = Matrix::zeros(n, d);
        let mut d_s = vec![0.0; d];
        for (ctx, group) in groups {
            let pe = self.prompted(&items, clusters, ctx);
            d_prompted.fill(0.0);
            for inst in group {
                let (s, trace) = self.encoder.forward(&inst.prefix, &pe.matrix);
                let z = score(&s, &pe);
                let lse = log_sum_exp(&z);
                total += lse - z[inst.label];
                let mut dz = softmax(&z);
                dz[inst.label] -= 1.0;
                dz.iter_mut().for_each(|x| *x *= scale);
                d_s.iter_mut().for_each(|x| *x = 0.0);
                pe.matrix.matvec_t_acc(&dz, &mut d_s);
                for (k, &g) in dz.iter().enumerate() {
                    axpy(g, &s, d_prompted.row_mut(k));
                }
                self.encoder.backward(&trace, &pe.matrix, &d_s, &mut grads.encoder, &mut d_prompted);
            }
            prompt_backward(&pe, &items, &self.prompts, &d_prompted, &mut d_item_hat, &mut grads.prompts);
        }
        normalize_rows_backward(&items, &d_item_hat, &mut grads.item_embeddings);

        let loss = total * scale;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss);
        }
        grads.check_finite()?;
        Ok((loss, grads))
    }

    /// Mean loss only.
    pub fn loss(
        &self,
        batch: &[&Instance],
        clusters: &ClusterMap,
        sessions: &SessionPromptIndex,
    ) -> Result<f64, ModelError> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let items = self.normalized_items();
        let mut cache: BTreeMap<PromptContext, PromptedEmbeddings> = BTreeMap::new();
        let mut total = 0.0;
        for inst in batch {
            let ctx = PromptContext::for_instance(self.variant(), sessions, inst);
            let pe = cache.entry(ctx).or_insert_with(|| self.prompted(&items, clusters, ctx));
            let z = self.logits(&inst.prefix, pe)?;
            total += cross_entropy_from_logits(&z, inst.label);
        }
        Ok(total / batch.len() as f64)
    }
}

fn check_prefix(prefix: &[usize], num_items: usize) -> Result<(), ModelError> {
    if prefix.is_empty() {
        return Err(ModelError::EmptyPrefix);
    }
    match prefix.iter().find(|&&i| i >= num_items) {
        Some(&item) => Err(ModelError::ItemOutOfRange { item, num_items }),
        None => Ok(()),
    }
}

/// `z_k = s · ṽ_k` over the whole catalog.
pub fn score(session: &[f64], prompted: &PromptedEmbeddings) -> Vec<f64> {
    let mut z = vec![0.0; prompted.matrix.rows()];
    prompted.matrix.matvec(session, &mut z);
    z
}

/// Next-item distribution; max-shifted softmax.
pub fn predict(z: &[f64]) -> Vec<f64> {
    softmax(z)
}

/// `−log p[label]` from a probability vector.
pub fn loss(probs: &[f64], label: usize) -> f64 {
    -probs[label].ln()
}

/// `−log softmax(z)[label]`, computed in log space.
pub fn cross_entropy_from_logits(z: &[f64], label: usize) -> f64 {
    log_sum_exp(z) - z[label]
}
