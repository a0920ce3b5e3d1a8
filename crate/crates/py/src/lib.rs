//! Python bindings: synthetic data, preprocessing, mining, training and
//! evaluation, mirroring the command-line pipeline.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use clipsbr::config::{RunConfig, TrainConfig};
use clipsbr::dataset::{SessionDataset, Split};
use clipsbr::eval::{self, EvalReport};
use clipsbr::graph::GlobalGraph;
use clipsbr::model::EncoderKind;
use clipsbr::pipeline::{self, Mined};
use clipsbr::prompt::{PromptContext, PromptVariant, SessionPromptIndex};
use clipsbr::synth::{self, SynthConfig};
use clipsbr::training::{fit, Checkpoint, Provenance};
use clipsbr::{community, Partition};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_split(split: &str) -> PyResult<Split> {
    split.parse().map_err(value_err)
}

/// Writes `interactions.tsv` and `planted.json`; returns both paths.
#[pyfunction]
#[pyo3(signature = (out_dir, num_items=500, num_clusters=10, num_users=200, sessions_per_user=10, noise=0.2, seed=0))]
fn synthesize(
    out_dir: PathBuf,
    num_items: usize,
    num_clusters: usize,
    num_users: usize,
    sessions_per_user: usize,
    noise: f64,
    seed: u64,
) -> PyResult<(PathBuf, PathBuf)> {
    let cfg = SynthConfig { num_items, num_clusters, num_users, sessions_per_user, noise, seed, ..Default::default() };
    let files = synth::write(&cfg, &out_dir).map_err(value_err)?;
    Ok((files.interactions, files.planted))
}

/// Sessionized, filtered and chronologically split interactions.
#[pyclass(name = "Dataset", module = "clipsbr", frozen)]
struct PyDataset {
    inner: SessionDataset,
    item_ids: Vec<String>,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (path, gap_seconds=3600, min_session_len=3, min_user_sessions=5, valid_fraction=0.1, test_fraction=0.1))]
    fn from_tsv(
        path: PathBuf,
        gap_seconds: i64,
        min_session_len: usize,
        min_user_sessions: usize,
        valid_fraction: f64,
        test_fraction: f64,
    ) -> PyResult<Self> {
        let cfg = RunConfig {
            gap_seconds,
            min_session_len,
            min_user_sessions,
            valid_fraction,
            test_fraction,
            ..Default::default()
        };
        let prepared = pipeline::prepare(&path, &cfg).map_err(value_err)?;
        Ok(Self { inner: prepared.dataset, item_ids: prepared.item_ids })
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.inner.num_items
    }

    #[getter]
    fn num_seen_items(&self) -> usize {
        self.inner.num_seen_items
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.num_users
    }

    #[getter]
    fn item_ids(&self) -> Vec<String> {
        self.item_ids.clone()
    }

    /// Item index lists of every session in a split.
    fn sessions(&self, split: &str) -> PyResult<Vec<Vec<usize>>> {
        Ok(self.inner.split(parse_split(split)?).iter().map(|s| s.items.clone()).collect())
    }

    /// `(prefix, label)` pairs of a split.
    fn instances(&self, split: &str) -> PyResult<Vec<(Vec<usize>, usize)>> {
        Ok(self.inner.instances(parse_split(split)?).into_iter().map(|i| (i.prefix, i.label)).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(items={}, users={}, sessions={}/{}/{})",
            self.inner.num_items,
            self.inner.num_users,
            self.inner.train.len(),
            self.inner.valid.len(),
            self.inner.test.len()
        )
    }
}

/// Training graph plus its Leiden partition.
#[pyclass(name = "Mined", module = "clipsbr", frozen)]
struct PyMined {
    inner: Mined,
    resolution: f64,
}

#[pymethods]
impl PyMined {
    #[getter]
    fn num_clusters(&self) -> usize {
        self.inner.partition.num_clusters()
    }

    #[getter]
    fn quality(&self) -> f64 {
        self.inner.quality
    }

    #[getter]
    fn resolution(&self) -> f64 {
        self.resolution
    }

    #[getter]
    fn assignment(&self) -> Vec<usize> {
        self.inner.partition.assignment().to_vec()
    }

    /// Edge list text (`#nodes N` header, then `i j w`).
    fn edge_list(&self) -> String {
        self.inner.graph.to_edge_list()
    }
}

#[pyfunction]
#[pyo3(signature = (dataset, resolution=1.0, seed=0))]
fn mine(dataset: &PyDataset, resolution: f64, seed: u64) -> PyResult<PyMined> {
    let inner = pipeline::mine_dataset(&dataset.inner, resolution, seed).map_err(value_err)?;
    Ok(PyMined { inner, resolution })
}

fn graph_from(num_nodes: usize, edges: &[(usize, usize, u64)]) -> PyResult<GlobalGraph> {
    let mut g = GlobalGraph::new(num_nodes);
    for &(i, j, w) in edges {
        if i >= num_nodes || j >= num_nodes {
            return Err(value_err(format!("edge ({i}, {j}) outside {num_nodes} nodes")));
        }
        g.add_edge(i, j, w);
    }
    Ok(g)
}

/// Leiden partition of an undirected weighted edge list.
#[pyfunction]
#[pyo3(signature = (num_nodes, edges, resolution=1.0, seed=0))]
fn leiden(num_nodes: usize, edges: Vec<(usize, usize, u64)>, resolution: f64, seed: u64) -> PyResult<Vec<usize>> {
    let g = graph_from(num_nodes, &edges)?;
    let p = community::leiden(&g, resolution, seed).map_err(value_err)?;
    Ok(p.assignment().to_vec())
}

#[pyfunction]
#[pyo3(signature = (num_nodes, edges, assignment, resolution=1.0))]
fn modularity(
    num_nodes: usize,
    edges: Vec<(usize, usize, u64)>,
    assignment: Vec<usize>,
    resolution: f64,
) -> PyResult<f64> {
    if assignment.len() != num_nodes {
        return Err(value_err("assignment length must equal num_nodes"));
    }
    let g = graph_from(num_nodes, &edges)?;
    Ok(community::modularity(&g, &Partition::from_labels(&assignment), resolution))
}

#[pyfunction]
fn rank_of_label(scores: Vec<f64>, label: usize) -> PyResult<usize> {
    if label >= scores.len() {
        return Err(value_err("label outside the score vector"));
    }
    Ok(eval::rank_of_label(&scores, label))
}

#[pyfunction]
fn mrr_at_k(ranks: Vec<usize>, k: usize) -> PyResult<f64> {
    eval::mrr_at_k(&ranks, k).map_err(value_err)
}

#[pyfunction]
fn recall_at_k(ranks: Vec<usize>, k: usize) -> PyResult<f64> {
    eval::recall_at_k(&ranks, k).map_err(value_err)
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("split", r.split.name())?;
    out.set_item("n_instances", r.n_instances)?;
    let metrics = PyDict::new(py);
    for (k, m) in &r.metrics {
        let row = PyDict::new(py);
        row.set_item("mrr", m.mrr)?;
        row.set_item("recall", m.recall)?;
        metrics.set_item(k, row)?;
    }
    out.set_item("metrics", metrics)?;
    out.set_item("ranks", r.ranks.clone())?;
    Ok(out)
}

/// A fitted model (best checkpoint) and its epoch log.
#[pyclass(name = "Model", module = "clipsbr", frozen)]
struct PyModel {
    checkpoint: Checkpoint,
    log: Vec<(usize, f64, f64, f64)>,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn best_epoch(&self) -> usize {
        self.checkpoint.epoch
    }

    #[getter]
    fn best_valid_mrr5(&self) -> f64 {
        self.checkpoint.best_mrr5
    }

    /// `(epoch, train_loss, valid_mrr5, valid_recall5)` per epoch.
    #[getter]
    fn log(&self) -> Vec<(usize, f64, f64, f64)> {
        self.log.clone()
    }

    #[getter]
    fn variant(&self) -> String {
        self.checkpoint.params.variant().to_string()
    }

    #[pyo3(signature = (dataset, mined, split="test", ks=vec![5, 10]))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        mined: &PyMined,
        split: &str,
        ks: Vec<usize>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let report = pipeline::evaluate_split(&self.checkpoint, &dataset.inner, &mined.inner, parse_split(split)?, &ks)
            .map_err(value_err)?;
        report_dict(py, &report)
    }

    /// Top-`k` next items for a prefix of item indices.
    #[pyo3(signature = (dataset, mined, prefix, k=10, user=0, session_ordinal=0))]
    fn recommend(
        &self,
        dataset: &PyDataset,
        mined: &PyMined,
        prefix: Vec<usize>,
        k: usize,
        user: usize,
        session_ordinal: usize,
    ) -> PyResult<Vec<usize>> {
        let params = &self.checkpoint.params;
        let index = SessionPromptIndex::from_train(&dataset.inner.train);
        let inst = clipsbr::Instance { prefix, label: 0, user, session_ordinal };
        let ctx = PromptContext::for_instance(params.variant(), &index, &inst);
        let clusters = clipsbr::prompt::ClusterMap::from_partition(&mined.inner.partition, params.num_items());
        let items = params.normalized_items();
        let pe = params.prompted(&items, &clusters, ctx);
        let z = params.logits(&inst.prefix, &pe).map_err(value_err)?;
        let mut order: Vec<usize> = (0..z.len()).collect();
        order.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
        order.truncate(k);
        Ok(order)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.checkpoint.save(&path).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { checkpoint: Checkpoint::load(&path).map_err(value_err)?, log: Vec::new() })
    }
}

#[pyfunction]
#[pyo3(signature = (
    dataset, mined, encoder="gru", variant="C", d=64, epochs=100, patience=50,
    batch_size=128, lr=0.001, seed=0
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: &PyDataset,
    mined: &PyMined,
    encoder: &str,
    variant: &str,
    d: usize,
    epochs: usize,
    patience: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> PyResult<PyModel> {
    let cfg = TrainConfig {
        batch_size,
        learning_rate: lr,
        max_epochs: epochs,
        patience,
        seed,
        encoder: encoder.parse::<EncoderKind>().map_err(value_err)?,
        prompt_variant: variant.parse::<PromptVariant>().map_err(value_err)?,
        resolution: mined.resolution,
        d,
    };
    let outcome = py
        .detach(|| fit(&dataset.inner, &cfg, &mined.inner.partition, &mined.inner.graph, &Provenance::default(), None))
        .map_err(value_err)?;
    let log = outcome.log.iter().map(|r| (r.epoch, r.train_loss, r.valid_mrr5, r.valid_recall5)).collect();
    Ok(PyModel { checkpoint: outcome.best, log })
}

#[pymodule(name = "clipsbr")]
fn clipsbr_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyMined>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(mine, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(leiden, m)?)?;
    m.add_function(wrap_pyfunction!(modularity, m)?)?;
    m.add_function(wrap_pyfunction!(rank_of_label, m)?)?;
    m.add_function(wrap_pyfunction!(mrr_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add("PROMPT_VARIANTS", PromptVariant::ALL.map(|v| v.to_string()).to_vec())?;
    Ok(())
}
