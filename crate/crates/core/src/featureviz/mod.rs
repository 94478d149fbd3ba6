//! Activation maximization: gradient ascent on the input image of a fixed
//! model to maximize one channel's mean activation, minus an L1 penalty,
//! with periodic image-space regularizers.

pub mod sbf;
pub mod transforms;
pub mod tv;

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{Model, ModelError};
use crate::tensor::Tensor;
use crate::training::{adam_step, AdamConfig, AdamState, TrainError};
use crate::util::{derive_rng, fmt_f64, purpose};

pub use sbf::{switching_bilateral_filter, SbfParams};
pub use transforms::{
    crop, fit_center, jitter, random_resized_crop, resize, rotate, sample_crop_window, translate,
    CropWindow, Interpolation,
};
pub use tv::{total_variation, tv_denoise, tv_energy};

#[derive(Debug, Error)]
pub enum VizError {
    #[error("invalid visualization config: {0}")]
    Config(String),
    #[error("non-finite objective at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What the L1 penalty is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PenaltyTarget {
    /// Mean absolute value of the image itself.
    #[default]
    Input,
    /// Mean activation over every channel of the target layer.
    LayerActivation,
}

impl fmt::Display for PenaltyTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PenaltyTarget::Input => "input",
            PenaltyTarget::LayerActivation => "layer_activation",
        })
    }
}

impl FromStr for PenaltyTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "input" => Ok(PenaltyTarget::Input),
            "layer_activation" => Ok(PenaltyTarget::LayerActivation),
            _ => Err(format!("unknown penalty target {s:?} (expected input or layer_activation)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Jitter,
    Rotation,
    Translation,
    Resize,
    RandomResizedCrop,
    Sbf,
    TvDenoise,
}

impl TransformKind {
    pub const ALL: [TransformKind; 7] = [
        TransformKind::Jitter,
        TransformKind::Rotation,
        TransformKind::Translation,
        TransformKind::Resize,
        TransformKind::RandomResizedCrop,
        TransformKind::Sbf,
        TransformKind::TvDenoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Jitter => "jitter",
            TransformKind::Rotation => "rotation",
            TransformKind::Translation => "translation",
            TransformKind::Resize => "resize",
            TransformKind::RandomResizedCrop => "random_resized_crop",
            TransformKind::Sbf => "sbf",
            TransformKind::TvDenoise => "tv_denoise",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = TransformKind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown transform {s:?} (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransformSpec {
    /// Multiplicative brightness factor range.
    Jitter { range: [f64; 2] },
    Rotation {
        max_degrees: f64,
        interpolation: Interpolation,
    },
    Translation { max_shift: usize },
    /// Resamples to `height × width`, then center-crops or zero-pads back to
    /// the running image's extent.
    Resize {
        height: usize,
        width: usize,
        interpolation: Interpolation,
    },
    RandomResizedCrop {
        scale: [f64; 2],
        ratio: [f64; 2],
        interpolation: Interpolation,
    },
    Sbf(SbfParams),
    TvDenoise { weight: f64, steps: usize },
}

impl TransformSpec {
    /// Default parameters for `kind`. Resize defaults to a 10% enlargement
    /// of `extent`.
    pub fn default_for(kind: TransformKind, extent: (usize, usize)) -> Self {
        match kind {
            TransformKind::Jitter => TransformSpec::Jitter { range: [0.8, 1.2] },
            TransformKind::Rotation => TransformSpec::Rotation {
                max_degrees: 10.0,
                interpolation: Interpolation::Bilinear,
            },
            TransformKind::Translation => TransformSpec::Translation { max_shift: 4 },
            TransformKind::Resize => TransformSpec::Resize {
                height: (extent.0 as f64 * 1.1).round() as usize,
                width: (extent.1 as f64 * 1.1).round() as usize,
                interpolation: Interpolation::Bilinear,
            },
            TransformKind::RandomResizedCrop => TransformSpec::RandomResizedCrop {
                scale: [0.5, 1.0],
                ratio: [0.75, 4.0 / 3.0],
                interpolation: Interpolation::Bilinear,
            },
            TransformKind::Sbf => TransformSpec::Sbf(SbfParams::default()),
            TransformKind::TvDenoise => TransformSpec::TvDenoise {
                weight: 0.1,
                steps: 50,
            },
        }
    }

    /// Parameters under which the transform is the identity map.
    pub fn identity_for(kind: TransformKind, extent: (usize, usize)) -> Self {
        match kind {
            TransformKind::Jitter => TransformSpec::Jitter { range: [1.0, 1.0] },
            TransformKind::Rotation => TransformSpec::Rotation {
                max_degrees: 0.0,
                interpolation: Interpolation::Nearest,
            },
            TransformKind::Translation => TransformSpec::Translation { max_shift: 0 },
            TransformKind::Resize => TransformSpec::Resize {
                height: extent.0,
                width: extent.1,
                interpolation: Interpolation::Nearest,
            },
            TransformKind::RandomResizedCrop => TransformSpec::RandomResizedCrop {
                scale: [1.0, 1.0],
                ratio: [1.0, 1.0],
                interpolation: Interpolation::Nearest,
            },
            // no pixel can differ from its neighbourhood median by more than 1
            TransformKind::Sbf => TransformSpec::Sbf(SbfParams {
                threshold: 1.0,
                ..SbfParams::default()
            }),
            // identity only on constant images, which are its fixed points
            TransformKind::TvDenoise => TransformSpec::TvDenoise {
                weight: 0.1,
                steps: 1,
            },
        }
    }

    pub fn kind(&self) -> TransformKind {
        match self {
            TransformSpec::Jitter { .. } => TransformKind::Jitter,
            TransformSpec::Rotation { .. } => TransformKind::Rotation,
            TransformSpec::Translation { .. } => TransformKind::Translation,
            TransformSpec::Resize { .. } => TransformKind::Resize,
            TransformSpec::RandomResizedCrop { .. } => TransformKind::RandomResizedCrop,
            TransformSpec::Sbf(_) => TransformKind::Sbf,
            TransformSpec::TvDenoise { .. } => TransformKind::TvDenoise,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        let ok = match self {
            TransformSpec::Jitter { range } => ordered(*range) && range[0] >= 0.0,
            TransformSpec::Rotation { max_degrees, .. } => {
                max_degrees.is_finite() && *max_degrees >= 0.0
            }
            TransformSpec::Translation { .. } => true,
            TransformSpec::Resize { height, width, .. } => *height >= 1 && *width >= 1,
            TransformSpec::RandomResizedCrop { scale, ratio, .. } => {
                ordered(*scale) && scale[0] > 0.0 && scale[1] <= 1.0 && ordered(*ratio) && ratio[0] > 0.0
            }
            TransformSpec::Sbf(p) => return p.validate().map_err(|e| format!("sbf: {e}")),
            TransformSpec::TvDenoise { weight, steps } => {
                weight.is_finite() && *weight > 0.0 && *steps >= 1
            }
        };
        if ok {
            Ok(())
        } else {
            Err(format!("{}: parameters out of range: {self:?}", self.kind()))
        }
    }

    /// Applies the transform; the output always has the input's shape.
    pub fn apply(&self, image: &Tensor, rng: &mut impl Rng) -> Tensor {
        match self {
            TransformSpec::Jitter { range } => jitter(image, *range, rng),
            TransformSpec::Rotation {
                max_degrees,
                interpolation,
            } => rotate(image, *max_degrees, *interpolation, rng),
            TransformSpec::Translation { max_shift } => translate(image, *max_shift, rng),
            TransformSpec::Resize {
                height,
                width,
                interpolation,
            } => {
                let s = image.shape();
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                fit_center(&resize(image, *height, *width, *interpolation), h, w)
            }
            TransformSpec::RandomResizedCrop {
                scale,
                ratio,
                interpolation,
            } => random_resized_crop(image, *scale, *ratio, *interpolation, rng),
            TransformSpec::Sbf(p) => switching_bilateral_filter(image, p),
            TransformSpec::TvDenoise { weight, steps } => tv_denoise(image, *weight, *steps),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VizConfig {
    pub layer: usize,
    pub channel: usize,
    pub lambda: f64,
    pub iterations: usize,
    /// Adam learning rate on the image.
    pub step_size: f64,
    pub seed: u64,
    pub transform_every: usize,
    pub transforms: Vec<TransformSpec>,
    pub init_range: [f64; 2],
    pub penalty: PenaltyTarget,
    /// Optimized image extent; the model's input extent when `None`.
    pub image_size: Option<(usize, usize)>,
}

pub const DEFAULT_ITERATIONS: usize = 200;
pub const DEFAULT_ITERATIONS_WITH_TRANSFORMS: usize = 256;

impl Default for VizConfig {
    fn default() -> Self {
        Self {
            layer: 1,
            channel: 0,
            lambda: 10.0,
            iterations: DEFAULT_ITERATIONS,
            step_size: 0.05,
            seed: 0,
            transform_every: 50,
            transforms: Vec::new(),
            init_range: [0.4, 0.6],
            penalty: PenaltyTarget::Input,
            image_size: None,
        }
    }
}

impl VizConfig {
    pub fn validate(&self) -> Result<(), VizError> {
        let bad = |m: String| Err(VizError::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if self.transform_every == 0 {
            return bad("transform_every must be >= 1".into());
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step_size must be > 0, got {}", self.step_size));
        }
        let [lo, hi] = self.init_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad(format!("init_range must satisfy 0 <= lo <= hi <= 1, got [{lo}, {hi}]"));
        }
        if let Some((h, w)) = self.image_size {
            if h == 0 || w == 0 {
                return bad("image_size must be non-empty".into());
            }
        }
        for t in &self.transforms {
            t.validate().map_err(VizError::Config)?;
        }
        Ok(())
    }
}

/// `mean(|x|)` and its gradient `sign(x) / N`, with `sign(0) = 0`.
pub fn l1_penalty(image: &Tensor) -> (f64, Tensor) {
    let n = image.len() as f64;
    let value = image.data().iter().map(|v| v.abs()).sum::<f64>() / n;
    let grad = image.map(|v| {
        if v > 0.0 {
            1.0 / n
        } else if v < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    });
    (value, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Channel objective.
    pub f: f64,
    /// Penalty.
    pub r: f64,
    /// `f − λ·R`.
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct VizResult {
    pub image: Tensor,
    /// Record `i` is evaluated on the image entering iteration `i`.
    pub trace: Vec<TraceRecord>,
    /// Evaluated on the returned image.
    pub final_record: TraceRecord,
    pub config: VizConfig,
    pub init_seed: u64,
}

impl VizResult {
    pub fn initial(&self) -> &TraceRecord {
        &self.trace[0]
    }

    /// Plain-text table: header, one row per iteration, and a `final` row.
    pub fn trace_table(&self) -> String {
        let mut out = String::from("iteration\tf\tR\ttotal\n");
        let row = |label: String, r: &TraceRecord| {
            format!("{label}\t{}\t{}\t{}\n", fmt_f64(r.f), fmt_f64(r.r), fmt_f64(r.total))
        };
        for r in &self.trace {
            out.push_str(&row(r.iteration.to_string(), r));
        }
        out.push_str(&row("final".into(), &self.final_record));
        out
    }
}

/// Seeded uniform noise image in `[lo, hi]`.
pub fn noise_image(h: usize, w: usize, range: [f64; 2], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(&[1, h, w], |_| {
        if range[0] == range[1] {
            range[0]
        } else {
            rng.random_range(range[0]..=range[1])
        }
    })
}

fn evaluate(model: &Model, x: &Tensor, cfg: &VizConfig) -> Result<(f64, Tensor, f64, Tensor), ModelError> {
    let (f, gf) = model.channel_objective_grad(x, cfg.layer, cfg.channel)?;
    let (r, gr) = match cfg.penalty {
        PenaltyTarget::Input => l1_penalty(x),
        PenaltyTarget::LayerActivation => model.layer_objective_grad(x, cfg.layer)?,
    };
    Ok((f, gf, r, gr))
}

/// Runs activation maximization for one channel.
pub fn ascend(model: &Model, cfg: &VizConfig) -> Result<VizResult, VizError> {
    cfg.validate()?;
    let (h, w) = cfg
        .image_size
        .unwrap_or((model.spec.input_height, model.spec.input_width));
    model.spec.with_input(h, w).check_target(cfg.layer, cfg.channel)?;
    model.spec_for_image(&Tensor::zeros(&[1, h, w]))?;

    let mut x = noise_image(h, w, cfg.init_range, &mut derive_rng(cfg.seed, purpose::VIZ_INIT, 0));
    let mut state = AdamState::new(vec!["image".into()], &[&x]);
    let adam = AdamConfig::with_lr(cfg.step_size);
    let mut trace = Vec::with_capacity(cfg.iterations);

    for i in 1..=cfg.iterations {
        let (f, gf, r, gr) = evaluate(model, &x, cfg)?;
        let total = f - cfg.lambda * r;
        if !total.is_finite() {
            return Err(VizError::NonFinite { iteration: i });
        }
        trace.push(TraceRecord {
            iteration: i,
            f,
            r,
            total,
        });
        // Adam minimizes, so hand it the gradient of −(f − λR)
        let mut descent = gf.scale(-1.0);
        descent.axpy(cfg.lambda, &gr).map_err(ModelError::from)?;
        adam_step(&mut [&mut x], &[&descent], &mut state, &adam).map_err(|e| match e {
            TrainError::NonFiniteGradient { .. } => VizError::NonFinite { iteration: i },
            other => VizError::Config(other.to_string()),
        })?;
        x = x.map(|v| v.clamp(0.0, 1.0));
        if i % cfg.transform_every == 0 && !cfg.transforms.is_empty() {
            let mut rng = derive_rng(cfg.seed, purpose::VIZ_TRANSFORM, i as u64);
            for t in &cfg.transforms {
                x = t.apply(&x, &mut rng);
            }
        }
    }

    let (f, _, r, _) = evaluate(model, &x, cfg)?;
    let total = f - cfg.lambda * r;
    if !total.is_finite() {
        return Err(VizError::NonFinite {
            iteration: cfg.iterations + 1,
        });
    }
    Ok(VizResult {
        image: x,
        trace,
        final_record: TraceRecord {
            iteration: cfg.iterations + 1,
            f,
            r,
            total,
        },
        config: cfg.clone(),
        init_seed: cfg.seed,
    })
}

/// Channel objectives at `layer` for `count` seeded uniform [0, 1] noise
/// images; element `c` holds channel `c`'s values.
pub fn random_baseline(
    model: &Model,
    layer: usize,
    extent: (usize, usize),
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, ModelError> {
    let per_image: Vec<Vec<f64>> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let x = noise_image(extent.0, extent.1, [0.0, 1.0], &mut derive_rng(seed, purpose::BASELINE, i));
            model.layer_channel_means(&x, layer)
        })
        .collect::<Result<_, _>>()?;
    let channels = per_image.first().map_or(0, Vec::len);
    Ok((0..channels)
        .map(|c| per_image.iter().map(|v| v[c]).collect())
        .collect())
}

/// Linearly interpolated percentile (`p` in [0, 100]) of `values`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty set");
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// `count` distinct channels of a layer with `channels` channels, ascending,
/// chosen by a stream derived from `(seed, layer)`.
pub fn select_channels(seed: u64, layer: usize, channels: usize, count: usize) -> Vec<usize> {
    let mut rng = derive_rng(seed, purpose::GRID, layer as u64);
    let mut picked = index::sample(&mut rng, channels, count.min(channels)).into_vec();
    picked.sort_unstable();
    picked
}

pub const MOSAIC_SEPARATOR: usize = 2;

/// Tiles equally sized `[1, H, W]` images row-major into `columns` columns
/// with zero-valued separators between tiles.
pub fn mosaic(images: &[Tensor], columns: usize) -> Tensor {
    assert!(!images.is_empty() && columns > 0, "mosaic needs images and columns");
    let shape = images[0].shape();
    assert!(images.iter().all(|i| i.shape() == shape), "mosaic tiles must share a shape");
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let cols = columns.min(images.len());
    let rows = images.len().div_ceil(cols);
    let s = MOSAIC_SEPARATOR;
    let mh = rows * h + (rows - 1) * s;
    let mw = cols * w + (cols - 1) * s;
    let mut out = vec![0.0; mh * mw];
    for (k, img) in images.iter().enumerate() {
        let (top, left) = ((k / cols) * (h + s), (k % cols) * (w + s));
        for r in 0..h {
            let dst = (top + r) * mw + left;
            out[dst..dst + w].copy_from_slice(&img.data()[r * w..(r + 1) * w]);
        }
    }
    Tensor::new(vec![1, mh, mw], out).expect("mosaic extent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::tensor::finite_diff_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model() -> Model {
        let mut m = Model::build(ModelSpec::new(16, 16), 3).unwrap();
        for c in &mut m.params.conv {
            c.bias.data_mut().fill(0.05);
        }
        m
    }

    #[test]
    fn l1_penalty_definition() {
        let (v, g) = l1_penalty(&Tensor::zeros(&[1, 3, 3]));
        assert_eq!(v, 0.0);
        assert_eq!(g.sum(), 0.0);
        let (v, g) = l1_penalty(&Tensor::full(&[1, 2, 5], 0.5));
        assert_eq!(v, 0.5);
        assert!(g.data().iter().all(|&x| x == 0.1));
    }

    #[test]
    fn l1_penalty_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::from_fn(&[1, 4, 5], |_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { v } else { -v }
        });
        let (_, g) = l1_penalty(&x);
        let fd = finite_diff_grad(|t| l1_penalty(t).0, &x, 1e-6);
        for (a, b) in g.data().iter().zip(fd.data()) {
            assert!((a - b).abs() <= 1e-6 * b.abs());
        }
    }

    #[test]
    fn ascent_without_penalty_increases_objective() {
        let m = small_model();
        let cfg = VizConfig {
            layer: 3,
            channel: 2,
            lambda: 0.0,
            iterations: 40,
            ..VizConfig::default()
        };
        let r = ascend(&m, &cfg).unwrap();
        assert_eq!(r.trace.len(), 40);
        assert!(r.final_record.f > r.initial().f);
        assert!(r.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn ascent_is_deterministic() {
        let m = small_model();
        let cfg = VizConfig {
            layer: 2,
            channel: 1,
            iterations: 30,
            transform_every: 10,
            transforms: TransformKind::ALL
                .iter()
                .map(|&k| TransformSpec::default_for(k, (16, 16)))
                .collect(),
            seed: 9,
            ..VizConfig::default()
        };
        let a = ascend(&m, &cfg).unwrap();
        let b = ascend(&m, &cfg).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.trace, b.trace);
        let c = ascend(&m, &VizConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn ascent_rejects_bad_targets() {
        let m = small_model();
        let cfg = VizConfig {
            layer: 1,
            channel: 99,
            ..VizConfig::default()
        };
        let err = ascend(&m, &cfg).unwrap_err();
        assert!(err.to_string().contains("0..=7"), "{err}");
        let cfg = VizConfig {
            layer: 6,
            ..VizConfig::default()
        };
        assert!(ascend(&m, &cfg).is_err());
    }

    #[test]
    fn ascent_at_another_extent() {
        let m = small_model();
        let cfg = VizConfig {
            layer: 5,
            channel: 0,
            iterations: 3,
            image_size: Some((20, 24)),
            ..VizConfig::default()
        };
        assert_eq!(ascend(&m, &cfg).unwrap().image.shape(), &[1, 20, 24]);
    }

    #[test]
    fn layer_activation_penalty_runs() {
        let m = small_model();
        let cfg = VizConfig {
            layer: 2,
            channel: 0,
            iterations: 5,
            penalty: PenaltyTarget::LayerActivation,
            ..VizConfig::default()
        };
        let r = ascend(&m, &cfg).unwrap();
        assert!(r.trace.iter().all(|t| t.r >= 0.0));
    }

    #[test]
    fn percentile_matches_linear_interpolation() {
        let v: Vec<f64> = (1..=5).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_eq!(percentile(&v, 95.0), 4.8);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 5.0);
    }

    #[test]
    fn baseline_has_one_series_per_channel() {
        let m = small_model();
        let b = random_baseline(&m, 2, (16, 16), 7, 1).unwrap();
        assert_eq!(b.len(), 16);
        assert!(b.iter().all(|s| s.len() == 7));
        assert_eq!(b, random_baseline(&m, 2, (16, 16), 7, 1).unwrap());
    }

    #[test]
    fn channel_selection_is_seeded_and_distinct() {
        let a = select_channels(5, 3, 32, 3);
        assert_eq!(a, select_channels(5, 3, 32, 3));
        assert_eq!(a.len(), 3);
        assert!(a.windows(2).all(|p| p[0] < p[1]));
        assert_eq!(select_channels(1, 1, 2, 5), vec![0, 1]);
    }

    #[test]
    fn mosaic_layout() {
        let tiles: Vec<Tensor> = (0..3).map(|k| Tensor::full(&[1, 2, 3], k as f64 + 1.0)).collect();
        let m = mosaic(&tiles, 3);
        assert_eq!(m.shape(), &[1, 2, 3 * 3 + 2 * 2]);
        assert_eq!(&m.data()[..13], &[1.0, 1.0, 1.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0, 0.0, 3.0, 3.0, 3.0]);
        let m = mosaic(&tiles, 2);
        assert_eq!(m.shape(), &[1, 2 * 2 + 2, 3 * 2 + 2]);
        assert_eq!(m.sum(), 6.0 + 12.0 + 18.0);
    }

    #[test]
    fn transform_names_round_trip() {
        for k in TransformKind::ALL {
            assert_eq!(k.name().parse::<TransformKind>().unwrap(), k);
            assert!(TransformSpec::default_for(k, (16, 16)).validate().is_ok());
            assert!(TransformSpec::identity_for(k, (16, 16)).validate().is_ok());
        }
        assert!("blur".parse::<TransformKind>().is_err());
    }

    #[test]
    fn identity_parameters_leave_images_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = noise_image(12, 12, [0.0, 1.0], &mut rng);
        let flat = Tensor::full(&[1, 12, 12], 0.3);
        for k in TransformKind::ALL {
            let t = TransformSpec::identity_for(k, (12, 12));
            let input = if k == TransformKind::TvDenoise { &flat } else { &x };
            assert_eq!(&t.apply(input, &mut rng), input, "{k}");
        }
    }
}
