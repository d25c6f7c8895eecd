//! Python bindings: tensors, the twin model, sampling, training, rotary
//! affinity, and the data-curation helpers.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use twinflow::data::{
    filter_record, gen_synthetic_pairs, ClipRecord, CombinedPrompt, CorpusOptions, Dataset, Decision, FilterPolicy,
    Segment,
};
use twinflow::model::conditioning::encode_prompt as encode;
use twinflow::model::{load_checkpoint, save_checkpoint, Modality, TwinModel, TwinModelConfig};
use twinflow::rope::{affinity_matrix, RopeConfig};
use twinflow::sampler::{GuidanceConfig, Schedule, Solver};
use twinflow::train::{train_stage, LossWeights, Stage, StageConfig, TrainOptions};
use twinflow::Error;

create_exception!(twinflow_py, TwinflowError, PyException);
create_exception!(twinflow_py, ConfigError, TwinflowError);
create_exception!(twinflow_py, NumericError, TwinflowError);
create_exception!(twinflow_py, PromptError, TwinflowError);
create_exception!(twinflow_py, RecordError, TwinflowError);

fn err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Shape { .. } | Error::Json(_) => ConfigError::new_err(msg),
        Error::Numeric { .. } => NumericError::new_err(msg),
        Error::Prompt { offset, .. } => PromptError::new_err((msg, offset)),
        Error::PromptEncode(_) => PromptError::new_err(msg),
        Error::Record { line, .. } => RecordError::new_err((msg, line)),
        Error::Io { .. } | Error::IoAt { .. } => PyOSError::new_err(msg),
        Error::Format(_) => TwinflowError::new_err(msg),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for twinflow::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| TwinflowError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Tensor", module = "twinflow_py")]
pub struct PyTensor {
    inner: twinflow::Tensor,
}

impl From<twinflow::Tensor> for PyTensor {
    fn from(inner: twinflow::Tensor) -> Self {
        Self { inner }
    }
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        Ok(twinflow::Tensor::new(&shape, data).py()?.into())
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        twinflow::Tensor::zeros(&shape).into()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(twinflow::tensor::read_tensor(path).py()?.into())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        twinflow::tensor::write_tensor(path, &self.inner).py()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn numel(&self) -> usize {
        self.inner.numel()
    }

    fn at(&self, row: usize, col: usize) -> PyResult<f64> {
        let s = self.inner.shape();
        if s.len() != 2 || row >= s[0] || col >= s[1] {
            return Err(ConfigError::new_err(format!("index ({row}, {col}) out of range for {s:?}")));
        }
        Ok(self.inner.at(row, col))
    }

    fn __eq__(&self, other: PyRef<'_, PyTensor>) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

#[pyclass(name = "AffinityMatrix", module = "twinflow_py")]
pub struct PyAffinity {
    inner: twinflow::rope::AffinityMatrix,
}

#[pymethods]
impl PyAffinity {
    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    fn argmax_row(&self, i: usize) -> usize {
        self.inner.argmax_row(i)
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn to_pgm<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_pgm())
    }

    /// Writes `<stem>.csv` and `<stem>.pgm`.
    fn export(&self, stem: PathBuf) -> PyResult<()> {
        self.inner.export(stem).py()
    }
}

#[pyclass(name = "TwinModel", module = "twinflow_py")]
pub struct PyModel {
    inner: TwinModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (preset = "toy", seed = 0))]
    fn build(preset: &str, seed: u64) -> PyResult<Self> {
        let cfg = TwinModelConfig::preset(preset).py()?;
        Ok(Self { inner: TwinModel::build(cfg, seed).py()? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_checkpoint(path).py()?.0 })
    }

    /// Saves a checkpoint directory and returns its content hash.
    #[pyo3(signature = (path, step = 0))]
    fn save(&self, path: PathBuf, step: u64) -> PyResult<String> {
        Ok(save_checkpoint(&self.inner, step, path).py()?.hash)
    }

    fn forward(&self, z_v: PyRef<'_, PyTensor>, z_a: PyRef<'_, PyTensor>, t: f64, tokens: Vec<usize>) -> PyResult<(PyTensor, PyTensor)> {
        let (v, a) = self.inner.forward(&z_v.inner, &z_a.inner, t, &tokens).py()?;
        Ok((v.into(), a.into()))
    }

    /// Per-block head-averaged audio-to-video attention, `[L_a, L_v]` each.
    fn attention_maps(&self, z_v: PyRef<'_, PyTensor>, z_a: PyRef<'_, PyTensor>, t: f64, tokens: Vec<usize>) -> PyResult<Vec<PyTensor>> {
        let maps = self.inner.attention_maps(&z_v.inner, &z_a.inner, t, &tokens).py()?;
        Ok(maps.into_iter().map(PyTensor::from).collect())
    }

    fn set_fusion(&mut self, enabled: bool) {
        self.inner.set_fusion(enabled);
    }

    #[getter]
    fn fusion_enabled(&self) -> bool {
        self.inner.config().fusion_enabled
    }

    fn param_count(&self) -> usize {
        self.inner.params().numel()
    }

    fn checkpoint_hash(&self) -> String {
        self.inner.checkpoint_hash()
    }

    /// `(video_len, audio_len, channels)`.
    fn latent_shape(&self) -> (usize, usize, usize) {
        let c = self.inner.config();
        (c.seq_len(Modality::Video), c.seq_len(Modality::Audio), c.latent_channels)
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.config())
    }

    fn __repr__(&self) -> String {
        format!("TwinModel(params={}, fusion={})", self.inner.params().numel(), self.inner.config().fusion_enabled)
    }
}

/// Scaled or unscaled rotary affinity between audio and video positions.
#[pyfunction]
#[pyo3(signature = (la = 157, lv = 31, scale = None, head_dim = 128, base = 10_000.0))]
fn affinity(la: usize, lv: usize, scale: Option<f64>, head_dim: usize, base: f64) -> PyResult<PyAffinity> {
    if la == 0 || lv == 0 {
        return Err(ConfigError::new_err("lengths must be positive"));
    }
    let audio = RopeConfig::new(head_dim, base, scale.unwrap_or(lv as f64 / la as f64)).py()?;
    let video = RopeConfig::new(head_dim, base, 1.0).py()?;
    Ok(PyAffinity { inner: affinity_matrix(la, lv, &audio, &video).py()? })
}

#[pyfunction]
fn aligned_column(i: usize, la: usize, lv: usize) -> usize {
    twinflow::rope::aligned_column(i, la, lv)
}

/// Returns `([(kind, text), ...], audio_caption)` with kind `"visual"` or `"speech"`.
#[pyfunction]
fn parse_prompt(text: &str) -> PyResult<(Vec<(String, String)>, String)> {
    let p = CombinedPrompt::parse(text).py()?;
    let segs = p
        .segments
        .into_iter()
        .map(|s| match s {
            Segment::Visual(t) => ("visual".to_string(), t),
            Segment::Speech(t) => ("speech".to_string(), t),
        })
        .collect();
    Ok((segs, p.audio_caption))
}

#[pyfunction]
fn render_prompt(segments: Vec<(String, String)>, audio_caption: String) -> PyResult<String> {
    let segments = segments
        .into_iter()
        .map(|(kind, text)| match kind.as_str() {
            "visual" => Ok(Segment::Visual(text)),
            "speech" => Ok(Segment::Speech(text)),
            other => Err(ConfigError::new_err(format!("unknown segment kind {other:?}"))),
        })
        .collect::<PyResult<_>>()?;
    CombinedPrompt { segments, audio_caption }.render().py()
}

#[pyfunction]
#[pyo3(signature = (text, vocab_size = 64))]
fn encode_prompt(text: &str, vocab_size: usize) -> PyResult<Vec<usize>> {
    Ok(encode(&CombinedPrompt::parse(text).py()?, vocab_size))
}

#[pyfunction]
#[pyo3(signature = (width, height, target_area = 518_400, rounding = 4))]
fn pack_dims(width: u32, height: u32, target_area: u64, rounding: u32) -> PyResult<(u32, u32)> {
    twinflow::data::pack_dims(width, height, target_area, rounding).py()
}

fn policy_from(json: Option<&str>) -> PyResult<FilterPolicy> {
    match json {
        Some(s) => serde_json::from_str(s).map_err(|e| ConfigError::new_err(format!("policy: {e}"))),
        None => Ok(FilterPolicy::default()),
    }
}

/// `"keep"` or the name of the first failing rule.
#[pyfunction]
#[pyo3(signature = (record, policy = None))]
fn filter_clip(record: &str, policy: Option<&str>) -> PyResult<String> {
    let rec = ClipRecord::parse_line(record, 1).py()?;
    Ok(match filter_record(rec, &policy_from(policy)?) {
        Decision::Keep => "keep".into(),
        Decision::Reject(r) => r.name().into(),
    })
}

#[pyfunction]
#[pyo3(signature = (input, output, policy = None, skip_bad = false))]
fn filter_corpus<'py>(
    py: Python<'py>,
    input: PathBuf,
    output: PathBuf,
    policy: Option<&str>,
    skip_bad: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let policy = policy_from(policy)?;
    let opts = CorpusOptions { skip_bad, stats_path: None };
    let stats = twinflow::data::run_filter_corpus(input, &policy, output, &opts).py()?;
    to_py(py, &stats)
}

#[pyfunction]
#[pyo3(signature = (loss_v, loss_a, lambda_v = 0.85, lambda_a = 0.15))]
fn joint_loss(loss_v: f64, loss_a: f64, lambda_v: f64, lambda_a: f64) -> PyResult<f64> {
    twinflow::train::joint_loss(loss_v, loss_a, &LossWeights { lambda_v, lambda_a }).py()
}

#[pyfunction]
fn fm_loss(v_pred: PyRef<'_, PyTensor>, z0: PyRef<'_, PyTensor>, z1: PyRef<'_, PyTensor>) -> PyResult<f64> {
    twinflow::train::fm_loss(&v_pred.inner, &z0.inner, &z1.inner).py()
}

/// Integrates both towers from seeded noise; returns `(video, audio, provenance)`.
#[pyfunction]
#[pyo3(signature = (model, prompt, seed = 0, solver = "unipc", steps = 32, cfg_v = 5.0, cfg_a = 5.0, guidance = true))]
#[allow(clippy::too_many_arguments)]
fn sample<'py>(
    py: Python<'py>,
    model: PyRef<'_, PyModel>,
    prompt: &str,
    seed: u64,
    solver: &str,
    steps: usize,
    cfg_v: f64,
    cfg_a: f64,
    guidance: bool,
) -> PyResult<(PyTensor, PyTensor, Bound<'py, PyAny>)> {
    let solver: Solver = solver.parse().py()?;
    let schedule = Schedule::uniform(steps).py()?;
    let g = guidance.then(|| GuidanceConfig::new(cfg_v, cfg_a));
    let (v, a, prov) = twinflow::sampler::sample(&model.inner, prompt, seed, solver, &schedule, g.as_ref()).py()?;
    Ok((v.into(), a.into(), to_py(py, &prov)?))
}

/// Writes a synthetic dataset for `stage` and returns its content hash.
#[pyfunction]
#[pyo3(signature = (path, stage = "fusion", n = 600, seed = 0, preset = "toy"))]
fn gen_data(path: PathBuf, stage: &str, n: usize, seed: u64, preset: &str) -> PyResult<String> {
    let stage: Stage = stage.parse().py()?;
    let cfg = TwinModelConfig::preset(preset).py()?;
    let ds = gen_synthetic_pairs(&twinflow::cli::synthetic_spec_for(&cfg, stage, seed), n).py()?;
    ds.save(path).py()?;
    Ok(ds.content_hash())
}

/// Trains `model` in place on saved or freshly generated synthetic data and
/// returns `{"metrics": [...], "evals": [...]}`.
#[pyfunction]
#[pyo3(signature = (model, stage, steps = None, batch_size = None, lr = None, seed = 0, data = None, n_train = 500, holdout = 100))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    mut model: PyRefMut<'_, PyModel>,
    stage: &str,
    steps: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    seed: u64,
    data: Option<PathBuf>,
    n_train: usize,
    holdout: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let stage: Stage = stage.parse().py()?;
    let mut cfg = StageConfig::toy(stage);
    cfg.steps = steps.unwrap_or(cfg.steps);
    cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
    cfg.optim.lr = lr.unwrap_or(cfg.optim.lr);
    let ds = match data {
        Some(p) => Dataset::load(p).py()?,
        None => {
            let spec = twinflow::cli::synthetic_spec_for(model.inner.config(), stage, seed);
            gen_synthetic_pairs(&spec, n_train + holdout).py()?
        }
    };
    let holdout = holdout.min(ds.len() / 2);
    let (train_set, held) = ds.split_off(holdout).py()?;
    let held = (holdout > 0).then_some(held);
    let report = train_stage(&cfg, &mut model.inner, &train_set, held.as_ref(), seed, TrainOptions::default()).py()?;
    to_py(py, &serde_json::json!({ "metrics": report.metrics, "evals": report.evals }))
}

#[pymodule]
pub fn twinflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("TwinflowError", py.get_type::<TwinflowError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("NumericError", py.get_type::<NumericError>())?;
    m.add("PromptError", py.get_type::<PromptError>())?;
    m.add("RecordError", py.get_type::<RecordError>())?;
    m.add_class::<PyTensor>()?;
    m.add_class::<PyAffinity>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(affinity, m)?)?;
    m.add_function(wrap_pyfunction!(aligned_column, m)?)?;
    m.add_function(wrap_pyfunction!(parse_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(encode_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(pack_dims, m)?)?;
    m.add_function(wrap_pyfunction!(filter_clip, m)?)?;
    m.add_function(wrap_pyfunction!(filter_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(joint_loss, m)?)?;
    m.add_function(wrap_pyfunction!(fm_loss, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
