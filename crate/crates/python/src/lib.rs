//! Python bindings: recordings, models, training, segmentation and metrics.

use std::path::PathBuf;

use blinkseg::data::{self, ChannelConfig};
use blinkseg::harness::{enumerate_grid, GridSpec};
use blinkseg::metrics;
use blinkseg::nn::{self, assemble};
use blinkseg::segment::{self, WindowPlan};
use blinkseg::synth::{self, SynthConfig};
use blinkseg::tensor::Tensor;
use blinkseg::train::{self, Checkpoint, NormalizationInfo, TrainConfig};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(blinkseg, BlinksegError, PyException);

fn err(e: blinkseg::Error) -> PyErr {
    BlinksegError::new_err(format!("{}: {e}", e.kind()))
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for blinkseg::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

/// A labelled, per-channel z-scored recording.
#[pyclass(name = "Recording", module = "blinkseg", skip_from_py_object)]
#[derive(Clone)]
struct PyRecording {
    inner: data::Recording,
}

#[pymethods]
impl PyRecording {
    #[getter]
    fn subject_id(&self) -> String {
        self.inner.subject_id.clone()
    }

    #[getter]
    fn cohort(&self) -> &'static str {
        self.inner.cohort.label()
    }

    #[getter]
    fn sample_rate_hz(&self) -> f64 {
        self.inner.sample_rate_hz
    }

    #[getter]
    fn channel_names(&self) -> Vec<String> {
        self.inner.channel_names.clone()
    }

    #[getter]
    fn channels(&self) -> Vec<Vec<f64>> {
        self.inner.channels.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<u8> {
        self.inner.labels.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Recording({:?}, {}, {} channels, {} samples)",
            self.inner.subject_id,
            self.inner.cohort,
            self.inner.channels.len(),
            self.inner.len()
        )
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        data::write_recording_csv(&path, &self.inner).py()
    }
}

/// One model configuration.
#[pyclass(name = "HyperParams", module = "blinkseg", skip_from_py_object)]
#[derive(Clone)]
struct PyHyperParams {
    inner: nn::HyperParams,
}

#[pymethods]
impl PyHyperParams {
    /// Parses the JSON form written in checkpoints and result files.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: nn::HyperParams =
            serde_json::from_str(text).map_err(|e| err(blinkseg::Error::Json(e)))?;
        inner.validate().py()?;
        Ok(PyHyperParams { inner })
    }

    /// CNN-RNN with filter 15, 2 blocks, 32 filters and 2 BiLSTM blocks of 32 units.
    #[staticmethod]
    #[pyo3(signature = (num_channels = 1))]
    fn reference_winner(num_channels: usize) -> PyResult<Self> {
        let inner = nn::HyperParams::reference_winner(num_channels);
        inner.validate().py()?;
        Ok(PyHyperParams { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("hyperparameters serialize")
    }

    #[getter]
    fn model_kind(&self) -> &'static str {
        self.inner.model_kind.label()
    }

    #[getter]
    fn num_channels(&self) -> usize {
        self.inner.num_channels
    }

    fn parameter_count(&self) -> PyResult<usize> {
        Ok(assemble(&self.inner).py()?.parameter_count())
    }

    /// Multiplies per output time step.
    fn multiply_count(&self) -> PyResult<usize> {
        Ok(assemble(&self.inner).py()?.multiply_count())
    }

    fn __repr__(&self) -> String {
        format!("HyperParams({})", self.to_json())
    }
}

fn plan(
    window_len: usize,
    stride: Option<usize>,
    offsets: Option<Vec<usize>>,
) -> PyResult<WindowPlan> {
    let offsets = offsets.unwrap_or_else(|| {
        let mut v: Vec<usize> = (0..4).map(|q| q * window_len / 4).collect();
        v.dedup();
        v
    });
    WindowPlan::new(window_len, stride.unwrap_or(window_len), offsets).py()
}

/// A trained or freshly initialized network with its checkpoint metadata.
#[pyclass(name = "Model", module = "blinkseg")]
struct PyModel {
    checkpoint: Checkpoint,
    model: nn::Model,
}

impl PyModel {
    fn channels(&self) -> PyResult<ChannelConfig> {
        if self.checkpoint.normalization.channels.is_empty() {
            ChannelConfig::standard(self.checkpoint.hyperparams.num_channels).py()
        } else {
            Ok(ChannelConfig {
                names: self.checkpoint.normalization.channels.clone(),
            })
        }
    }

    fn from_checkpoint(checkpoint: Checkpoint) -> PyResult<Self> {
        let model = checkpoint.model().py()?;
        Ok(PyModel { checkpoint, model })
    }
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (hyperparams, seed = 0))]
    fn new(hyperparams: &PyHyperParams, seed: u64) -> PyResult<Self> {
        let model = nn::Model::new(&hyperparams.inner, seed).py()?;
        let checkpoint = Checkpoint::new(
            model.clone(),
            NormalizationInfo::default(),
            &TrainConfig::default(),
        );
        Ok(PyModel { checkpoint, model })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Self::from_checkpoint(Checkpoint::load(&path).py()?)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.checkpoint.save(&path).py()
    }

    #[getter]
    fn hyperparams(&self) -> PyHyperParams {
        PyHyperParams {
            inner: self.checkpoint.hyperparams.clone(),
        }
    }

    fn parameter_count(&self) -> usize {
        self.model.parameter_count()
    }

    /// Per-sample labels for a `[channels][T]` array in one pass.
    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<u8>> {
        let rows = x.len();
        let t = x.first().map_or(0, Vec::len);
        if x.iter().any(|r| r.len() != t) {
            return Err(err(blinkseg::Error::Dimension(
                "rows differ in length".into(),
            )));
        }
        let tensor = Tensor::new(vec![rows, t], x.concat()).py()?;
        self.model.predict(&tensor).py()
    }

    /// Windowed, voted labels for a whole recording.
    #[pyo3(signature = (recording, window_len = 1024, stride = None, offsets = None))]
    fn segment(
        &self,
        recording: &PyRecording,
        window_len: usize,
        stride: Option<usize>,
        offsets: Option<Vec<usize>>,
    ) -> PyResult<Vec<u8>> {
        let plan = plan(window_len, stride, offsets)?;
        let channels = self.channels()?;
        let x = data::select_channels(&recording.inner, &channels).py()?;
        if recording.inner.len() < window_len {
            self.model.predict(&x).py()
        } else {
            segment::segment_tensor(&self.model, &x, &plan).py()
        }
    }
}

#[pyfunction]
#[pyo3(signature = (subject_id, duration_s = 60.0, noise_sd_uv = 20.0, blink_rate_per_min = 20.0, pd = false, seed = 0))]
fn synth_recording(
    subject_id: String,
    duration_s: f64,
    noise_sd_uv: f64,
    blink_rate_per_min: f64,
    pd: bool,
    seed: u64,
) -> PyResult<PyRecording> {
    let mut cfg = SynthConfig {
        subject_id,
        duration_s,
        noise_sd_uv,
        blink_rate_per_min,
        seed,
        ..SynthConfig::default()
    };
    if pd {
        cfg = cfg.with_tremor();
    }
    Ok(PyRecording {
        inner: synth::generate(&cfg).py()?.normalized(),
    })
}

#[pyfunction]
fn load_dataset(manifest: PathBuf) -> PyResult<Vec<PyRecording>> {
    Ok(data::load_dataset(&manifest)
        .py()?
        .into_iter()
        .map(|inner| PyRecording { inner })
        .collect())
}

/// Trains on whole recordings cut into windows; returns the model and the
/// per-epoch history.
#[pyfunction]
#[pyo3(signature = (
    hyperparams, recordings, search = Vec::new(), epochs = 50, batch_size = 8,
    learning_rate = 1e-3, dropout = 0.2, patience = 10, seed = 0, window_len = 1024, stride = 512
))]
#[allow(clippy::too_many_arguments)]
fn train_model<'py>(
    py: Python<'py>,
    hyperparams: &PyHyperParams,
    recordings: Vec<PyRef<'py, PyRecording>>,
    search: Vec<PyRef<'py, PyRecording>>,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    dropout: f64,
    patience: usize,
    seed: u64,
    window_len: usize,
    stride: usize,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let hp = &hyperparams.inner;
    let channels = ChannelConfig::standard(hp.num_channels).py()?;
    let mut windows = Vec::new();
    for r in &recordings {
        windows.extend(
            train::recording_example(&r.inner, &channels)
                .py()?
                .windows(window_len, stride),
        );
    }
    let search_examples = search
        .iter()
        .map(|r| train::recording_example(&r.inner, &channels))
        .collect::<blinkseg::Result<Vec<_>>>()
        .py()?;
    let cfg = TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        dropout_rate: dropout,
        patience,
        seed,
        search_window_len: window_len,
        ..TrainConfig::default()
    };
    let out = train::train(hp, &windows, &search_examples, &cfg).py()?;
    let mut ckpt = out.checkpoint;
    let refs: Vec<&data::Recording> = recordings.iter().map(|r| &r.inner).collect();
    ckpt.normalization = NormalizationInfo::from_recordings(&refs, &channels);
    let history = out
        .history
        .iter()
        .map(|h| {
            let d = PyDict::new(py);
            d.set_item("epoch", h.epoch)?;
            d.set_item("loss", h.loss)?;
            d.set_item("search_f1_micro", h.search_f1_micro)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((PyModel::from_checkpoint(ckpt)?, history))
}

#[pyfunction]
fn f1_micro(pred: Vec<u8>, truth: Vec<u8>) -> PyResult<f64> {
    metrics::f1_micro(&pred, &truth).py()
}

#[pyfunction]
#[pyo3(signature = (pred, truth, iou = 0.5))]
fn f1_macro(pred: Vec<u8>, truth: Vec<u8>, iou: f64) -> PyResult<f64> {
    Ok(metrics::f1_macro(&pred, &truth, iou).py()?.f1_macro)
}

/// Sample and event scores as a dict.
#[pyfunction]
#[pyo3(signature = (pred, truth, iou = 0.5))]
fn evaluate<'py>(
    py: Python<'py>,
    pred: Vec<u8>,
    truth: Vec<u8>,
    iou: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = metrics::evaluate(&pred, &truth, iou).py()?;
    let d = PyDict::new(py);
    d.set_item("f1_micro", r.f1_micro)?;
    d.set_item("f1_macro", r.f1_macro)?;
    d.set_item("event_precision", r.event_precision)?;
    d.set_item("event_recall", r.event_recall)?;
    d.set_item("tp", r.counts.tp)?;
    d.set_item("fp", r.counts.fp)?;
    d.set_item("fn", r.counts.fn_)?;
    d.set_item("tn", r.counts.tn)?;
    Ok(d)
}

/// Blink events as inclusive `(onset, offset)` pairs.
#[pyfunction]
fn events_from_labels(labels: Vec<u8>) -> Vec<(usize, usize)> {
    segment::events_from_labels(&labels)
        .iter()
        .map(|e| (e.onset, e.offset))
        .collect()
}

/// Configurations of a built-in grid: `table1` or `coarse`.
#[pyfunction]
#[pyo3(signature = (preset = "table1"))]
fn grid(preset: &str) -> PyResult<Vec<PyHyperParams>> {
    let spec = match preset {
        "table1" => GridSpec::table_one(),
        "coarse" => GridSpec::coarse(1),
        other => {
            return Err(err(blinkseg::Error::Config(format!(
                "unknown preset {other:?}, expected table1 or coarse"
            ))))
        }
    };
    Ok(enumerate_grid(&spec)
        .py()?
        .into_iter()
        .map(|inner| PyHyperParams { inner })
        .collect())
}

#[pymodule]
#[pyo3(name = "blinkseg")]
fn blinkseg_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BlinksegError", m.py().get_type::<BlinksegError>())?;
    m.add_class::<PyRecording>()?;
    m.add_class::<PyHyperParams>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synth_recording, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(f1_micro, m)?)?;
    m.add_function(wrap_pyfunction!(f1_macro, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(events_from_labels, m)?)?;
    m.add_function(wrap_pyfunction!(grid, m)?)?;
    Ok(())
}
