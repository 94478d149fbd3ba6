//! Python bindings: `import pyactmax`.
//!
//! Images cross the boundary as [`Tensor`] objects (shape plus flat
//! row-major `f64` data); convert with `Tensor(shape, data)` and
//! `Tensor.tolist()`.

use std::path::PathBuf;

use actmax::featureviz::{
    self, PenaltyTarget, SbfParams, TraceRecord, TransformKind, TransformSpec, VizConfig, VizError,
};
use actmax::synthdata::{self, LesionShape, LesionSpec, PhantomSpec, Split};
use actmax::training::{self, EpochMetrics, TrainConfig, TrainError};
use actmax::{Checkpoint, CheckpointError, Model, ModelError, ModelSpec, Tensor, TrainingMetadata};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn model_err(e: ModelError) -> PyErr {
    value_err(e)
}

fn checkpoint_err(e: CheckpointError) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn train_err(e: TrainError) -> PyErr {
    match e {
        TrainError::NonFiniteGradient { .. } | TrainError::NonFiniteLoss { .. } => {
            PyArithmeticError::new_err(e.to_string())
        }
        other => value_err(other),
    }
}

fn viz_err(e: VizError) -> PyErr {
    match e {
        VizError::NonFinite { .. } => PyArithmeticError::new_err(e.to_string()),
        other => value_err(other),
    }
}

/// Dense `f64` tensor.
#[pyclass(name = "Tensor", module = "pyactmax", frozen, from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: Tensor::new(shape, data).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        Self {
            inner: Tensor::zeros(&shape),
        }
    }

    #[staticmethod]
    fn full(shape: Vec<usize>, value: f64) -> Self {
        Self {
            inner: Tensor::full(&shape, value),
        }
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    /// Flat row-major values.
    fn tolist(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn sum(&self) -> f64 {
        self.inner.sum()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn min(&self) -> f64 {
        self.inner.min()
    }

    fn max(&self) -> f64 {
        self.inner.max()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

/// Five-layer lesion classifier, optionally with its training metadata.
#[pyclass(name = "Model", module = "pyactmax")]
struct PyModel {
    inner: Model,
    meta: TrainingMetadata,
}

#[pymethods]
impl PyModel {
    /// Fresh He-initialized model for `height` x `width` inputs.
    #[new]
    #[pyo3(signature = (height = 64, width = 64, seed = 0))]
    fn new(height: usize, width: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: Model::build(ModelSpec::new(height, width), seed).map_err(model_err)?,
            meta: TrainingMetadata::default(),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(checkpoint_err)?;
        Ok(Self {
            inner: ck.model,
            meta: ck.meta,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint {
            model: self.inner.clone(),
            meta: self.meta.clone(),
        }
        .save(&path)
        .map_err(checkpoint_err)
    }

    #[getter]
    fn input_shape(&self) -> (usize, usize) {
        (self.inner.spec.input_height, self.inner.spec.input_width)
    }

    #[getter]
    fn conv_filters(&self) -> Vec<usize> {
        self.inner.spec.conv_filters.to_vec()
    }

    /// Training metadata (zeros / infinities for an untrained model).
    #[getter]
    fn metadata<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("seed", self.meta.seed)?;
        d.set_item("epochs_run", self.meta.epochs_run)?;
        d.set_item("best_epoch", self.meta.best_epoch)?;
        d.set_item("best_val_loss", self.meta.best_val_loss)?;
        d.set_item("best_val_balanced_accuracy", self.meta.best_val_balanced_accuracy)?;
        Ok(d)
    }

    fn logit(&self, image: &PyTensor) -> PyResult<f64> {
        Ok(self.inner.forward_logit(&image.inner).map_err(model_err)?.0)
    }

    fn predict(&self, image: &PyTensor) -> PyResult<u8> {
        Ok(training::predict(self.logit(image)?))
    }

    /// Spatial mean of the post-ReLU map of `channel` at conv `layer` (1-based).
    fn channel_objective(&self, image: &PyTensor, layer: usize, channel: usize) -> PyResult<f64> {
        Ok(self
            .inner
            .forward_to_channel(&image.inner, layer, channel)
            .map_err(model_err)?
            .1)
    }

    /// `(objective, gradient with respect to the image)`.
    fn channel_objective_grad(
        &self,
        image: &PyTensor,
        layer: usize,
        channel: usize,
    ) -> PyResult<(f64, PyTensor)> {
        let (f, g) = self
            .inner
            .channel_objective_grad(&image.inner, layer, channel)
            .map_err(model_err)?;
        Ok((f, PyTensor { inner: g }))
    }

    fn __repr__(&self) -> String {
        let (h, w) = self.input_shape();
        format!("Model(input={h}x{w}, filters={:?})", self.inner.spec.conv_filters)
    }
}

/// Outcome of one activation-maximization run.
#[pyclass(name = "VizResult", module = "pyactmax", frozen)]
struct PyVizResult {
    #[pyo3(get)]
    image: PyTensor,
    /// `(iteration, f, R, total)` per iteration.
    #[pyo3(get)]
    trace: Vec<(usize, f64, f64, f64)>,
    #[pyo3(get, name = "final")]
    final_record: (usize, f64, f64, f64),
    table: String,
}

#[pymethods]
impl PyVizResult {
    /// The trace as tab-separated text, as written by the CLI.
    fn trace_table(&self) -> String {
        self.table.clone()
    }
}

fn record(r: &TraceRecord) -> (usize, f64, f64, f64) {
    (r.iteration, r.f, r.r, r.total)
}

fn lesion_spec(name: &str) -> PyResult<LesionSpec> {
    Ok(match name.parse::<LesionShape>().map_err(value_err)? {
        LesionShape::SharpSquare => LesionSpec::square(),
        LesionShape::GaussianCircle => LesionSpec::gaussian(),
    })
}

/// Synthetic phantom dataset in memory: `{"train": [(image, label), ...], "val": ..., "test": ...}`.
#[pyfunction]
#[pyo3(signature = (lesion = "sharp_square", height = 64, width = 64, train = 2000, val = 500, test = 500, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn generate_dataset<'py>(
    py: Python<'py>,
    lesion: &str,
    height: usize,
    width: usize,
    train: usize,
    val: usize,
    test: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let lesion = lesion_spec(lesion)?;
    let phantom = PhantomSpec::new(height, width, seed);
    let all = py
        .detach(|| synthdata::generate_dataset(&phantom, &lesion, [train, val, test], seed))
        .map_err(value_err)?;
    let d = PyDict::new(py);
    for split in Split::ALL {
        let items: Vec<(PyTensor, u8)> = all
            .iter()
            .filter(|(s, _)| *s == split)
            .map(|(_, s)| (PyTensor { inner: s.image.clone() }, s.label))
            .collect();
        d.set_item(split.name(), items)?;
    }
    Ok(d)
}

fn unwrap_samples(samples: Vec<(PyRef<'_, PyTensor>, u8)>) -> Vec<(Tensor, u8)> {
    samples.into_iter().map(|(t, l)| (t.inner.clone(), l)).collect()
}

/// Trains a model on `(image, label)` lists with Adam and early stopping.
/// Returns the best-validation-loss model and per-epoch metrics.
#[pyfunction]
#[pyo3(signature = (train, val, learning_rate = 1e-3, weight_decay = 1e-4, batch_size = 32, patience = 7, max_epochs = 30, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    train: Vec<(PyRef<'py, PyTensor>, u8)>,
    val: Vec<(PyRef<'py, PyTensor>, u8)>,
    learning_rate: f64,
    weight_decay: f64,
    batch_size: usize,
    patience: usize,
    max_epochs: usize,
    seed: u64,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let train = unwrap_samples(train);
    let val = unwrap_samples(val);
    let first = train.first().ok_or_else(|| value_err("empty training set"))?;
    let shape = first.0.shape();
    if shape.len() != 3 {
        return Err(value_err(format!("images must be [1, H, W], got {shape:?}")));
    }
    let spec = ModelSpec::new(shape[1], shape[2]);
    let cfg = TrainConfig {
        learning_rate,
        weight_decay,
        batch_size,
        patience,
        max_epochs,
        seed,
        ..TrainConfig::default()
    };
    let out = py
        .detach(|| training::train_on(&spec, &train, &val, &cfg, |_: &EpochMetrics| {}))
        .map_err(train_err)?;
    let metrics = out
        .metrics
        .iter()
        .map(|m| {
            let d = PyDict::new(py);
            d.set_item("epoch", m.epoch)?;
            d.set_item("train_loss", m.train_loss)?;
            d.set_item("val_loss", m.val_loss)?;
            d.set_item("val_balanced_accuracy", m.val_balanced_accuracy)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((
        PyModel {
            inner: out.checkpoint.model,
            meta: out.checkpoint.meta,
        },
        metrics,
    ))
}

/// Regularized gradient ascent on the input for one channel.
/// `transforms` lists transform names (`jitter`, `rotation`, `translation`,
/// `resize`, `random_resized_crop`, `sbf`, `tv_denoise`) run with default
/// parameters every `transform_every` iterations.
#[pyfunction]
#[pyo3(signature = (model, layer, channel, lam = 10.0, iterations = 200, step_size = 0.05, seed = 0,
                    transforms = Vec::new(), transform_every = 50, penalty = "input", image_size = None))]
#[allow(clippy::too_many_arguments)]
fn ascend(
    py: Python<'_>,
    model: &PyModel,
    layer: usize,
    channel: usize,
    lam: f64,
    iterations: usize,
    step_size: f64,
    seed: u64,
    transforms: Vec<String>,
    transform_every: usize,
    penalty: &str,
    image_size: Option<(usize, usize)>,
) -> PyResult<PyVizResult> {
    let extent = image_size.unwrap_or((model.inner.spec.input_height, model.inner.spec.input_width));
    let transforms = transforms
        .iter()
        .map(|t| {
            t.parse::<TransformKind>()
                .map(|k| TransformSpec::default_for(k, extent))
                .map_err(value_err)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let cfg = VizConfig {
        layer,
        channel,
        lambda: lam,
        iterations,
        step_size,
        seed,
        transform_every,
        transforms,
        penalty: penalty.parse::<PenaltyTarget>().map_err(value_err)?,
        image_size,
        ..VizConfig::default()
    };
    let m = &model.inner;
    let r = py.detach(|| featureviz::ascend(m, &cfg)).map_err(viz_err)?;
    Ok(PyVizResult {
        table: r.trace_table(),
        trace: r.trace.iter().map(record).collect(),
        final_record: record(&r.final_record),
        image: PyTensor { inner: r.image },
    })
}

/// Per-channel objectives at `layer` on `count` uniform-noise images:
/// one list per channel.
#[pyfunction]
#[pyo3(signature = (model, layer, count = 500, seed = 0, image_size = None))]
fn random_baseline(
    py: Python<'_>,
    model: &PyModel,
    layer: usize,
    count: usize,
    seed: u64,
    image_size: Option<(usize, usize)>,
) -> PyResult<Vec<Vec<f64>>> {
    let extent = image_size.unwrap_or((model.inner.spec.input_height, model.inner.spec.input_width));
    let m = &model.inner;
    py.detach(|| featureviz::random_baseline(m, layer, extent, count, seed))
        .map_err(model_err)
}

#[pyfunction]
fn percentile(values: Vec<f64>, p: f64) -> f64 {
    featureviz::percentile(&values, p)
}

#[pyfunction]
fn total_variation(image: &PyTensor) -> f64 {
    featureviz::total_variation(&image.inner)
}

#[pyfunction]
#[pyo3(signature = (image, weight = 0.1, steps = 50))]
fn tv_denoise(image: &PyTensor, weight: f64, steps: usize) -> PyResult<PyTensor> {
    TransformSpec::TvDenoise { weight, steps }
        .validate()
        .map_err(value_err)?;
    Ok(PyTensor {
        inner: featureviz::tv_denoise(&image.inner, weight, steps),
    })
}

#[pyfunction]
#[pyo3(signature = (image, window = 5, sigma_s = 1.5, sigma_r = 0.15, threshold = 0.25))]
fn switching_bilateral_filter(
    image: &PyTensor,
    window: usize,
    sigma_s: f64,
    sigma_r: f64,
    threshold: f64,
) -> PyResult<PyTensor> {
    let params = SbfParams {
        window,
        sigma_s,
        sigma_r,
        threshold,
    };
    params.validate().map_err(value_err)?;
    Ok(PyTensor {
        inner: featureviz::switching_bilateral_filter(&image.inner, &params),
    })
}

/// Applies one transform with its default parameters.
#[pyfunction]
#[pyo3(signature = (name, image, seed = 0))]
fn apply_transform(name: &str, image: &PyTensor, seed: u64) -> PyResult<PyTensor> {
    let kind: TransformKind = name.parse().map_err(value_err)?;
    let shape = image.inner.shape();
    if shape.len() != 3 || shape[0] != 1 {
        return Err(value_err(format!("images must be [1, H, W], got {shape:?}")));
    }
    let spec = TransformSpec::default_for(kind, (shape[1], shape[2]));
    Ok(PyTensor {
        inner: spec.apply(&image.inner, &mut ChaCha8Rng::seed_from_u64(seed)),
    })
}

#[pyfunction]
fn balanced_accuracy(labels: Vec<u8>, predictions: Vec<u8>) -> PyResult<f64> {
    training::balanced_accuracy(&labels, &predictions).map_err(train_err)
}

#[pymodule]
fn pyactmax(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyVizResult>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(ascend, m)?)?;
    m.add_function(wrap_pyfunction!(random_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(percentile, m)?)?;
    m.add_function(wrap_pyfunction!(total_variation, m)?)?;
    m.add_function(wrap_pyfunction!(tv_denoise, m)?)?;
    m.add_function(wrap_pyfunction!(switching_bilateral_filter, m)?)?;
    m.add_function(wrap_pyfunction!(apply_transform, m)?)?;
    m.add_function(wrap_pyfunction!(balanced_accuracy, m)?)?;
    Ok(())
}
