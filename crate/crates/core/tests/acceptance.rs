//! Acceptance suite. Prints one PASS/FAIL line per criterion. Failed
//! criteria are reported but only fail the process with `ACCEPTANCE_STRICT=1`.
//!
//! `ACCEPTANCE_ONLY=1,4,5` restricts the run to the listed criteria
//! (criteria 3, 7 and 9 train the square-lesion model themselves when
//! criterion 2 is skipped, unless `ACCEPTANCE_SQUARE_CHECKPOINT` points at
//! a saved one).

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use actmax::featureviz::sbf::reference_medians;
use actmax::featureviz::tv::tv_denoise_traced;
use actmax::featureviz::{
    ascend, percentile, random_baseline, switching_bilateral_filter, total_variation,
    Interpolation, SbfParams, TransformKind, TransformSpec, VizConfig,
};
use actmax::synthdata::{generate_dataset, LesionSpec, PhantomSpec, Split};
use actmax::tensor::{
    bce_with_logits, conv2d_backward, conv2d_forward, dense_backward, dense_forward,
    finite_diff_grad, finite_diff_grad_checked, maxpool2d_backward, maxpool2d_forward, relative_error,
    relative_error_where, relu, relu_backward,
};
use actmax::training::{train_on, TrainConfig};
use actmax::{Checkpoint, Model, ModelSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_EPS: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 10;
const GRAD_MIN_SMOOTH: f64 = 0.9;
const GRAD_RUNTIME: Duration = Duration::from_secs(120);

const DESK_EXTENT: usize = 64;
const DESK_SPLIT: [usize; 3] = [2000, 500, 500];
const DESK_DATA_SEED: u64 = 1;
const SQUARE_MIN_ACC: f64 = 0.95;
const GAUSSIAN_MIN_ACC: f64 = 0.93;
const MAX_EPOCHS: usize = 30;

const ASCENT_ITERATIONS: usize = 200;
const ASCENT_LAMBDA: f64 = 10.0;
const BASELINE_IMAGES: usize = 500;
const BASELINE_PERCENTILE: f64 = 95.0;
const ASCENT_MIN_FRACTION: f64 = 0.9;

const TV_IMAGES: u64 = 100;
const TV_STEPS: usize = 50;

const SBF_IMAGES: u64 = 100;
const SBF_THRESHOLD: f64 = 0.3;
const SBF_IMPULSE_TOL: f64 = 0.05;

const LAMBDAS: [f64; 3] = [0.0, 10.0, 100.0];
const LAMBDA_SEEDS: u64 = 5;
const LAMBDA_LAYER: usize = 3;

const GRID_EXTENT: (usize, usize) = (140, 192);
const GRID_CHANNELS: usize = 3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn noise(h: usize, w: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(&[1, h, w], |_| rng.random_range(0.0..1.0))
}

fn signed(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn sum_product(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Worst relative error and smallest smooth-coordinate fraction seen.
#[derive(Default)]
struct GradStats {
    worst: f64,
    min_smooth: f64,
    checks: usize,
}

impl GradStats {
    fn new() -> Self {
        Self {
            worst: 0.0,
            min_smooth: 1.0,
            checks: 0,
        }
    }

    fn add(&mut self, err: f64, smooth: f64) {
        self.worst = self.worst.max(err);
        self.min_smooth = self.min_smooth.min(smooth);
        self.checks += 1;
    }

    fn smooth(&mut self, analytic: &Tensor, f: impl Fn(&Tensor) -> f64, x: &Tensor) {
        let fd = finite_diff_grad(f, x, GRAD_EPS);
        self.add(relative_error(analytic, &fd, 1e-10), 1.0);
    }

    fn kinked<P: PartialEq>(&mut self, analytic: &Tensor, f: impl Fn(&Tensor) -> (f64, P), x: &Tensor) {
        let (fd, keep) = finite_diff_grad_checked(f, x, GRAD_EPS);
        let frac = keep.iter().filter(|&&k| k).count() as f64 / keep.len() as f64;
        self.add(relative_error_where(analytic, &fd, &keep, 1e-10), frac);
    }
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut prim = GradStats::new();
    let mut e2e = GradStats::new();
    for seed in 0..GRAD_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x = signed(&[1, 16, 16], &mut rng);

        // conv: input, weight and bias gradients of <g, conv(x)>
        let w = signed(&[3, 1, 3, 3], &mut rng);
        let b = signed(&[3], &mut rng);
        let g = signed(&[3, 16, 16], &mut rng);
        let grads = conv2d_backward(&x, &w, &g, 1).unwrap();
        prim.smooth(&grads.grad_input, |t| sum_product(&g, &conv2d_forward(t, &w, &b, 1).unwrap()), &x);
        prim.smooth(
            grads.grad_weights.as_ref().unwrap(),
            |t| sum_product(&g, &conv2d_forward(&x, t, &b, 1).unwrap()),
            &w,
        );
        prim.smooth(
            grads.grad_bias.as_ref().unwrap(),
            |t| sum_product(&g, &conv2d_forward(&x, &w, t, 1).unwrap()),
            &b,
        );

        // relu
        let g1 = signed(&[1, 16, 16], &mut rng);
        let gr = relu_backward(&x, &g1).unwrap();
        prim.kinked(
            &gr,
            |t| {
                let signs: Vec<bool> = t.data().iter().map(|&v| v > 0.0).collect();
                (sum_product(&g1, &relu(t)), signs)
            },
            &x,
        );

        // max-pool with every configured kernel/stride
        for (k, s) in [(3, 1), (3, 2), (4, 2)] {
            let (y, map) = maxpool2d_forward(&x, k, s).unwrap();
            let gp = signed(y.shape(), &mut rng);
            let gx = maxpool2d_backward(&map, &gp, x.shape()).unwrap();
            prim.kinked(
                &gx,
                |t| {
                    let (yt, mt) = maxpool2d_forward(t, k, s).unwrap();
                    (sum_product(&gp, &yt), mt.indices)
                },
                &x,
            );
        }

        // dense head on the flattened input
        let flat = x.reshape(&[256]).unwrap();
        let dw = signed(&[1, 256], &mut rng);
        let db = signed(&[1], &mut rng);
        let gd = Tensor::full(&[1], 1.0);
        let dg = dense_backward(&flat, &dw, &gd).unwrap();
        prim.smooth(&dg.grad_input, |t| dense_forward(t, &dw, &db).unwrap().data()[0], &flat);
        prim.smooth(
            dg.grad_weights.as_ref().unwrap(),
            |t| dense_forward(&flat, t, &db).unwrap().data()[0],
            &dw,
        );
        prim.smooth(
            dg.grad_bias.as_ref().unwrap(),
            |t| dense_forward(&flat, &dw, t).unwrap().data()[0],
            &db,
        );

        // BCE on the logit
        let z = Tensor::full(&[1], rng.random_range(-4.0..4.0));
        let label = (seed % 2) as u8;
        let (_, dz) = bce_with_logits(z.data()[0], label);
        prim.smooth(&Tensor::full(&[1], dz), |t| bce_with_logits(t.data()[0], label).0, &z);

        // end-to-end channel objective at every layer
        let mut model = Model::build(ModelSpec::new(16, 16), seed).unwrap();
        for c in &mut model.params.conv {
            for v in c.bias.data_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
        let img = noise(16, 16, &mut rng);
        for layer in 1..=5 {
            let n = model.spec.conv_filters[layer - 1];
            let start_ch = rng.random_range(0..n);
            // prefer a channel that is active on this image
            let ch = (0..n)
                .map(|k| (start_ch + k) % n)
                .find(|&c| model.forward_to_channel(&img, layer, c).unwrap().1 > 0.0)
                .unwrap_or(start_ch);
            let (_, grad) = model.channel_objective_grad(&img, layer, ch).unwrap();
            e2e.kinked(
                &grad,
                |t| {
                    (
                        model.forward_to_channel(t, layer, ch).unwrap().1,
                        model.activation_pattern(t, layer, Some(ch)).unwrap(),
                    )
                },
                &img,
            );
        }
    }
    let elapsed = start.elapsed();
    let pass = prim.worst < GRAD_TOL
        && e2e.worst < GRAD_TOL
        && prim.min_smooth >= GRAD_MIN_SMOOTH
        && e2e.min_smooth >= GRAD_MIN_SMOOTH
        && elapsed < GRAD_RUNTIME;
    outcome(
        pass,
        format!(
            "{} primitive checks max rel err {:.2e}, {} channel-objective checks (layers 1-5) max rel err {:.2e}, \
             min smooth fraction {:.3}, eps {GRAD_EPS:e}, tol {GRAD_TOL:e}, {GRAD_SEEDS} seeds, {:.1}s",
            prim.checks,
            prim.worst,
            e2e.checks,
            e2e.worst,
            prim.min_smooth.min(e2e.min_smooth),
            elapsed.as_secs_f64()
        ),
    )
}

fn desk_data(lesion: &LesionSpec) -> (Vec<(Tensor, u8)>, Vec<(Tensor, u8)>) {
    let phantom = PhantomSpec::new(DESK_EXTENT, DESK_EXTENT, DESK_DATA_SEED);
    let all = generate_dataset(&phantom, lesion, DESK_SPLIT, DESK_DATA_SEED).unwrap();
    let pick = |split| {
        all.iter()
            .filter(|(s, _)| *s == split)
            .map(|(_, s)| (s.image.clone(), s.label))
            .collect::<Vec<_>>()
    };
    (pick(Split::Train), pick(Split::Val))
}

fn train_desk(lesion: &LesionSpec) -> (Checkpoint, Duration) {
    let start = Instant::now();
    let (train, val) = desk_data(lesion);
    let cfg = TrainConfig {
        max_epochs: MAX_EPOCHS,
        ..TrainConfig::default()
    };
    let out = train_on(&ModelSpec::new(DESK_EXTENT, DESK_EXTENT), &train, &val, &cfg, |m| {
        eprintln!(
            "  [{}] epoch {:>2} val_loss {:.5} val_bal_acc {:.4}",
            lesion.shape, m.epoch, m.val_loss, m.val_balanced_accuracy
        )
    })
    .unwrap();
    (out.checkpoint, start.elapsed())
}

fn criterion_training(square: &mut Option<Checkpoint>) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (lesion, min_acc) in [(LesionSpec::square(), SQUARE_MIN_ACC), (LesionSpec::gaussian(), GAUSSIAN_MIN_ACC)] {
        let (ck, took) = train_desk(&lesion);
        let acc = ck.meta.best_val_balanced_accuracy;
        pass &= acc >= min_acc && ck.meta.epochs_run <= MAX_EPOCHS;
        parts.push(format!(
            "{}: val bal acc {acc:.4} (need >= {min_acc}) at best epoch {} of {}, {:.0}s",
            lesion.shape,
            ck.meta.best_epoch,
            ck.meta.epochs_run,
            took.as_secs_f64()
        ));
        if square.is_none() {
            *square = Some(ck);
        }
    }
    outcome(pass, parts.join("; "))
}

fn square_model(cache: &mut Option<Checkpoint>) -> Model {
    if cache.is_none() {
        *cache = Some(match std::env::var_os("ACCEPTANCE_SQUARE_CHECKPOINT") {
            Some(p) => Checkpoint::load(Path::new(&p)).unwrap(),
            None => train_desk(&LesionSpec::square()).0,
        });
    }
    cache.as_ref().unwrap().model.clone()
}

fn criterion_ascent(model: &Model) -> Outcome {
    let start = Instant::now();
    let extent = (model.spec.input_height, model.spec.input_width);
    // the unpenalized run is reported alongside for context; it does not affect the verdict
    let lambdas = [ASCENT_LAMBDA, 0.0];
    let mut hits = [0usize; 2];
    let mut total = 0;
    let mut per_layer = [Vec::new(), Vec::new()];
    for layer in 1..=5 {
        let baseline = random_baseline(model, layer, extent, BASELINE_IMAGES, 1).unwrap();
        let mut layer_hits = [0usize; 2];
        for (ch, values) in baseline.iter().enumerate() {
            let p95 = percentile(values, BASELINE_PERCENTILE);
            for (k, &lambda) in lambdas.iter().enumerate() {
                let cfg = VizConfig {
                    layer,
                    channel: ch,
                    lambda,
                    iterations: ASCENT_ITERATIONS,
                    ..VizConfig::default()
                };
                if ascend(model, &cfg).unwrap().final_record.f > p95 {
                    layer_hits[k] += 1;
                }
            }
        }
        for k in 0..2 {
            per_layer[k].push(format!("L{layer} {}/{}", layer_hits[k], baseline.len()));
            hits[k] += layer_hits[k];
        }
        total += baseline.len();
    }
    let frac = hits[0] as f64 / total as f64;
    outcome(
        frac >= ASCENT_MIN_FRACTION,
        format!(
            "{}/{total} channels ({:.1}%, need >= {:.0}%) beat the p{BASELINE_PERCENTILE} of {BASELINE_IMAGES} noise images \
             after {ASCENT_ITERATIONS} iterations at lambda {ASCENT_LAMBDA} [{}]; at lambda 0: {}/{total} [{}], {:.0}s",
            hits[0],
            100.0 * frac,
            100.0 * ASCENT_MIN_FRACTION,
            per_layer[0].join(", "),
            hits[1],
            per_layer[1].join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn random_params(kind: TransformKind, extent: (usize, usize), rng: &mut impl Rng) -> TransformSpec {
    let interp = [Interpolation::Nearest, Interpolation::Bilinear, Interpolation::Bicubic][rng.random_range(0..3)];
    match kind {
        TransformKind::Jitter => {
            let lo = rng.random_range(0.0..1.5);
            TransformSpec::Jitter {
                range: [lo, lo + rng.random_range(0.0..1.0)],
            }
        }
        TransformKind::Rotation => TransformSpec::Rotation {
            max_degrees: rng.random_range(0.0..180.0),
            interpolation: interp,
        },
        TransformKind::Translation => TransformSpec::Translation {
            max_shift: rng.random_range(0..12),
        },
        TransformKind::Resize => TransformSpec::Resize {
            height: rng.random_range(1..2 * extent.0),
            width: rng.random_range(1..2 * extent.1),
            interpolation: interp,
        },
        TransformKind::RandomResizedCrop => {
            let s = rng.random_range(0.05..1.0);
            let r = rng.random_range(0.3..2.0);
            TransformSpec::RandomResizedCrop {
                scale: [s, rng.random_range(s..=1.0)],
                ratio: [r, r * rng.random_range(1.0..2.0)],
                interpolation: interp,
            }
        }
        TransformKind::Sbf => TransformSpec::Sbf(SbfParams {
            window: [3, 5, 7][rng.random_range(0..3)],
            sigma_s: rng.random_range(0.5..3.0),
            sigma_r: rng.random_range(0.05..0.5),
            threshold: rng.random_range(0.0..0.6),
        }),
        TransformKind::TvDenoise => TransformSpec::TvDenoise {
            weight: rng.random_range(0.01..1.0),
            steps: rng.random_range(1..30),
        },
    }
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn criterion_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut failures = Vec::new();
    let mut identity_checks = 0;
    let mut range_checks = 0;
    for trial in 0..25 {
        let (h, w) = if trial % 2 == 0 {
            let s = rng.random_range(8..40);
            (s, s)
        } else {
            (rng.random_range(8..40), rng.random_range(8..40))
        };
        let x = noise(h, w, &mut rng);
        let flat = Tensor::full(&[1, h, w], rng.random_range(0.0..1.0));
        for kind in TransformKind::ALL {
            // identity parameters: bit-exact
            let id = TransformSpec::identity_for(kind, (h, w));
            let input = if kind == TransformKind::TvDenoise { &flat } else { &x };
            if bits(&id.apply(input, &mut rng)) != bits(input) {
                failures.push(format!("{kind} identity at {h}x{w}"));
            }
            identity_checks += 1;
            if matches!(kind, TransformKind::Rotation | TransformKind::Resize | TransformKind::RandomResizedCrop) {
                for interp in [Interpolation::Bilinear, Interpolation::Bicubic] {
                    let spec = match id.clone() {
                        TransformSpec::Rotation { max_degrees, .. } => TransformSpec::Rotation {
                            max_degrees,
                            interpolation: interp,
                        },
                        TransformSpec::Resize { height, width, .. } => TransformSpec::Resize {
                            height,
                            width,
                            interpolation: interp,
                        },
                        TransformSpec::RandomResizedCrop { scale, ratio, .. } => {
                            TransformSpec::RandomResizedCrop {
                                scale,
                                ratio,
                                interpolation: interp,
                            }
                        }
                        other => other,
                    };
                    // square crops are the identity at every kernel; others fall back to the full frame
                    if bits(&spec.apply(&x, &mut rng)) != bits(&x) {
                        failures.push(format!("{kind} identity ({interp}) at {h}x{w}"));
                    }
                    identity_checks += 1;
                }
            }
            // range and shape preservation under default and random parameters
            for spec in [TransformSpec::default_for(kind, (h, w)), random_params(kind, (h, w), &mut rng)] {
                spec.validate().unwrap();
                let y = spec.apply(&x, &mut rng);
                if y.shape() != x.shape() || !y.data().iter().all(|v| (0.0..=1.0).contains(v)) {
                    failures.push(format!("{kind} range/shape with {spec:?}"));
                }
                range_checks += 1;
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{identity_checks} bit-exact identity checks and {range_checks} [0,1]-range checks over all 7 transforms{}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failures: {}", failures.join(", "))
            }
        ),
    )
}

fn criterion_tv() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut rises = 0;
    let mut tv_up = 0;
    let mut worst_rise: f64 = 0.0;
    for i in 0..TV_IMAGES {
        let (h, w) = (rng.random_range(8..33), rng.random_range(8..33));
        let x = if i % 2 == 0 {
            noise(h, w, &mut rng)
        } else {
            // noisy piecewise-constant image
            let split = rng.random_range(1..w);
            Tensor::from_fn(&[1, h, w], |k| {
                let base: f64 = if k % w < split { 0.3 } else { 0.7 };
                (base + rng.random_range(-0.2..0.2)).clamp(0.0, 1.0)
            })
        };
        let weight = [0.02, 0.1, 0.5][(i % 3) as usize];
        let (y, energies) = tv_denoise_traced(&x, weight, TV_STEPS);
        let image_rises = energies.windows(2).filter(|p| p[1] > p[0]).count();
        rises += image_rises;
        for p in energies.windows(2) {
            worst_rise = worst_rise.max(p[1] - p[0]);
        }
        if total_variation(&y) > total_variation(&x) {
            tv_up += 1;
        }
    }
    outcome(
        rises == 0 && tv_up == 0,
        format!(
            "{TV_IMAGES} images x {TV_STEPS} steps (weights 0.02/0.1/0.5): {rises} energy increases \
             (largest {worst_rise:.3e}), {tv_up} images with TV(out) > TV(in)"
        ),
    )
}

fn criterion_sbf() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let params = SbfParams {
        threshold: SBF_THRESHOLD,
        ..SbfParams::default()
    };
    let (mut changed_clean, mut impulses, mut bad_impulses) = (0, 0, 0);
    let mut worst: f64 = 0.0;
    for i in 0..SBF_IMAGES {
        let (h, w) = (rng.random_range(24..41), rng.random_range(24..41));
        let lo = rng.random_range(0.1..0.3);
        let hi = rng.random_range(0.7..0.9);
        let vertical = i % 2 == 0;
        let extent = if vertical { w } else { h };
        let edge = rng.random_range(extent / 4..3 * extent / 4);
        let clean = Tensor::from_fn(&[1, h, w], |k| {
            let pos = if vertical { k % w } else { k / w };
            if pos < edge { lo } else { hi }
        });
        // sparse impulses, at least 3 pixels apart in every direction
        let mut noisy = clean.clone();
        let mut placed: Vec<(usize, usize)> = Vec::new();
        for _ in 0..(h * w) / 30 {
            let (r, c) = (rng.random_range(0..h), rng.random_range(0..w));
            if placed.iter().all(|&(pr, pc)| pr.abs_diff(r) >= 3 || pc.abs_diff(c) >= 3) {
                placed.push((r, c));
                let v = clean.data()[r * w + c];
                noisy.data_mut()[r * w + c] = if v < 0.5 { 1.0 } else { 0.0 };
            }
        }
        let medians = reference_medians(&noisy, params.window);
        let out = switching_bilateral_filter(&noisy, &params);
        for k in 0..h * w {
            let below = (noisy.data()[k] - medians.data()[k]).abs() <= SBF_THRESHOLD;
            if below && out.data()[k].to_bits() != noisy.data()[k].to_bits() {
                changed_clean += 1;
            }
        }
        for &(r, c) in &placed {
            let k = r * w + c;
            let err = (out.data()[k] - clean.data()[k]).abs();
            worst = worst.max(err);
            impulses += 1;
            if err > SBF_IMPULSE_TOL {
                bad_impulses += 1;
            }
        }
    }
    outcome(
        changed_clean == 0 && bad_impulses == 0 && impulses > 0,
        format!(
            "{SBF_IMAGES} step-edge images, threshold {SBF_THRESHOLD}: {changed_clean} below-threshold pixels changed, \
             {bad_impulses}/{impulses} impulses off by > {SBF_IMPULSE_TOL} (worst {worst:.4})"
        ),
    )
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_lambda(model: &Model) -> Outcome {
    let extent = (model.spec.input_height, model.spec.input_width);
    let baseline = random_baseline(model, LAMBDA_LAYER, extent, 50, 2).unwrap();
    // first channel that responds to noise at all
    let channel = baseline
        .iter()
        .position(|v| percentile(v, 95.0) > 0.0)
        .unwrap_or(0);
    let medians: Vec<f64> = LAMBDAS
        .iter()
        .map(|&lambda| {
            let mut finals: Vec<f64> = (0..LAMBDA_SEEDS)
                .map(|seed| {
                    let cfg = VizConfig {
                        layer: LAMBDA_LAYER,
                        channel,
                        lambda,
                        seed,
                        iterations: ASCENT_ITERATIONS,
                        ..VizConfig::default()
                    };
                    let img = ascend(model, &cfg).unwrap().image;
                    img.data().iter().map(|v| v.abs()).sum::<f64>() / img.len() as f64
                })
                .collect();
            median(&mut finals)
        })
        .collect();
    let monotone = medians.windows(2).all(|p| p[1] <= p[0]);
    outcome(
        monotone,
        format!(
            "layer {LAMBDA_LAYER} channel {channel}, median final mean|x| over {LAMBDA_SEEDS} seeds: {}",
            LAMBDAS
                .iter()
                .zip(&medians)
                .map(|(l, m)| format!("lambda {l}: {m:.5}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn actmax_bin(args: &[&str]) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_actmax"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(String::from_utf8_lossy(&o.stdout).into_owned())
    } else {
        Err(format!(
            "{} exited {:?}: {}",
            args.join(" "),
            o.status.code(),
            String::from_utf8_lossy(&o.stderr).lines().last().unwrap_or("")
        ))
    }
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("run");
    let cfg_path = tmp.path().join("run.cfg");
    let cfg = format!(
        "run.seed = 11\n\
         data.root = {r}/data\ndata.train = 120\ndata.val = 40\ndata.test = 40\n\
         train.output_dir = {r}/model\ntrain.max_epochs = 3\n\
         viz.checkpoint = {r}/model/checkpoint.bin\nviz.output_dir = {r}/viz\n\
         viz.layer = 3\nviz.channel = 1\nviz.baseline_count = 100\n\
         viz.transforms = jitter, rotation, tv_denoise\nviz.iterations = 100\n",
        r = root.display()
    );
    fs::write(&cfg_path, cfg).unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let mut snaps = Vec::new();
    for _ in 0..2 {
        let _ = fs::remove_dir_all(&root);
        for cmd in ["gen-data", "train", "viz"] {
            if let Err(e) = actmax_bin(&[cmd, "--config", cfg]) {
                return outcome(false, e);
            }
        }
        snaps.push(snapshot(&root));
    }
    let differing: Vec<String> = snaps[0]
        .iter()
        .filter(|(k, v)| snaps[1].get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let same_set = snaps[0].len() == snaps[1].len();
    outcome(
        differing.is_empty() && same_set,
        format!(
            "gen-data, train, viz run twice: {} files compared, {} differ{}",
            snaps[0].len(),
            differing.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(" ({})", differing.join(", "))
            }
        ),
    )
}

fn trace_totals(path: &Path) -> Option<(f64, f64)> {
    let text = fs::read_to_string(path).ok()?;
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    let first = rows.first()?.get(3)?.parse().ok()?;
    let last = rows.iter().find(|r| r[0] == "final")?.get(3)?.parse().ok()?;
    Some((first, last))
}

fn criterion_grid(checkpoint: &Checkpoint) -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let ck = tmp.path().join("square.bin");
    checkpoint.save(&ck).unwrap();
    let out = tmp.path().join("grid");
    let result = actmax_bin(&[
        "grid",
        "--set",
        &format!("grid.checkpoint={}", ck.display()),
        "--set",
        &format!("grid.output_dir={}", out.display()),
        "--set",
        &format!("grid.channels_per_layer={GRID_CHANNELS}"),
        "--set",
        "grid.layers=1,2,3,4,5",
        "--set",
        &format!("viz.image_height={}", GRID_EXTENT.0),
        "--set",
        &format!("viz.image_width={}", GRID_EXTENT.1),
        "--set",
        &format!("viz.iterations={ASCENT_ITERATIONS}"),
    ]);
    if let Err(e) = result {
        return outcome(false, e);
    }
    let files: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    let images = files
        .iter()
        .filter(|f| f.ends_with(".pgm") && !f.contains("mosaic"))
        .count();
    let mosaics = files.iter().filter(|f| f.ends_with("_mosaic.pgm")).count();
    let traces: Vec<&String> = files.iter().filter(|f| f.ends_with("_trace.txt")).collect();
    let mut improved = 0;
    for t in &traces {
        if let Some((first, last)) = trace_totals(&out.join(t)) {
            if first.is_finite() && last.is_finite() && last > first {
                improved += 1;
            }
        }
    }
    let expected = 5 * GRID_CHANNELS;
    outcome(
        images == expected && mosaics == 5 && traces.len() == expected && improved == expected,
        format!(
            "{}x{} grid: {images} channel images, {mosaics} mosaics, {improved}/{} traces with final total > initial total, {:.0}s",
            GRID_EXTENT.0,
            GRID_EXTENT.1,
            traces.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|p| p.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));

    let mut square: Option<Checkpoint> = None;
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |n: usize, name: &'static str, f: &mut dyn FnMut(&mut Option<Checkpoint>) -> Outcome| {
        if !wanted(n) {
            return;
        }
        eprintln!("running criterion {n}: {name}");
        let r = catch_unwind(AssertUnwindSafe(|| f(&mut square)))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                outcome(false, format!("panicked: {msg}"))
            });
        println!(
            "criterion {n} [{name}]: {} : {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.detail
        );
        results.push((n, name, r));
    };

    run(1, "gradient correctness", &mut |_| criterion_gradients());
    run(4, "regularizer identity", &mut |_| criterion_identity());
    run(5, "tv energy descent", &mut |_| criterion_tv());
    run(6, "sbf switching contract", &mut |_| criterion_sbf());
    run(8, "determinism", &mut |_| criterion_determinism());
    run(2, "desk-scale training", &mut criterion_training);
    run(3, "ascent efficacy", &mut |sq| criterion_ascent(&square_model(sq)));
    run(7, "lambda monotonicity", &mut |sq| criterion_lambda(&square_model(sq)));
    run(9, "reproduction grid", &mut |sq| {
        square_model(sq);
        criterion_grid(sq.as_ref().unwrap())
    });

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        if std::env::var_os("ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
