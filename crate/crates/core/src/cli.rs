//! The `actmax` command line: `gen-data`, `train`, `viz` and `grid`.
//!
//! Every command reads a flat config file (`--config`) plus `--set key=value`
//! overrides, which win. Progress goes to stderr, results to stdout. Errors
//! print a first line `error: <category>: <detail>` and exit with 2
//! (config/validation), 3 (I/O) or 4 (numerical divergence).

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{ConfigError, RawConfig, Reader};
use crate::featureviz::{
    ascend, mosaic, percentile, random_baseline, select_channels, Interpolation, PenaltyTarget,
    SbfParams, TransformKind, TransformSpec, VizConfig, VizError, VizResult,
    DEFAULT_ITERATIONS, DEFAULT_ITERATIONS_WITH_TRANSFORMS,
};
use crate::model::{Model, ModelError, ModelSpec};
use crate::pgm;
use crate::synthdata::{
    make_dataset, read_lesion, read_phantom, DataError, DatasetManifest, LesionShape, Split,
    MANIFEST_FILE,
};
use crate::training::{metrics_table, train, TrainConfig, TrainError};
use crate::util::{fmt_f64, write_atomic};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.txt";
pub const GRID_SUMMARY_FILE: &str = "grid_summary.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Io,
    Numerical,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Io => 3,
            ErrorCategory::Numerical => 4,
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Io => "io",
            ErrorCategory::Numerical => "numerical",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub category: ErrorCategory,
    pub detail: String,
}

impl CliError {
    pub fn config(detail: impl Into<String>) -> Self {
        Self {
            category: ErrorCategory::Config,
            detail: detail.into(),
        }
    }

    pub fn io(detail: impl Into<String>) -> Self {
        Self {
            category: ErrorCategory::Io,
            detail: detail.into(),
        }
    }

    pub fn numerical(detail: impl Into<String>) -> Self {
        Self {
            category: ErrorCategory::Numerical,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for CliError {
    /// Single line, so the first output line stays machine-parseable.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error: {}: {}", self.category, self.detail.replace('\n', " "))
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => CliError::io(e.to_string()),
            _ => CliError::config(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::io(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteGradient { .. } | TrainError::NonFiniteLoss { .. } => {
                CliError::numerical(e.to_string())
            }
            TrainError::Data(d) => d.into(),
            _ => CliError::config(e.to_string()),
        }
    }
}

impl From<VizError> for CliError {
    fn from(e: VizError) -> Self {
        match e {
            VizError::NonFinite { .. } => CliError::numerical(e.to_string()),
            _ => CliError::config(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "actmax", version, about = "Synthetic lesion data, CNN training and activation maximization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset
    GenData(ConfigArgs),
    /// Train the classifier on a generated dataset
    Train(ConfigArgs),
    /// Visualize one channel by activation maximization
    Viz(ConfigArgs),
    /// Visualize random channels of several layers and tile them
    Grid(ConfigArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Config file of `section.key = value` lines
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config entry; may be repeated
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RawConfig, CliError> {
        let mut raw = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::config(format!("cannot read config {}: {e}", path.display()))
                })?;
                RawConfig::parse(&text)
                    .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
            }
            None => RawConfig::default(),
        };
        for o in &self.overrides {
            raw.set_override(o)?;
        }
        Ok(raw)
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let rendered = e.to_string();
            let first = rendered
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::config(first));
            eprint!("{rendered}");
            return ErrorCategory::Config.exit_code();
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = match &cli.command {
        Command::GenData(a) => a.load().and_then(|raw| cmd_gen_data(&raw, &mut out)),
        Command::Train(a) => a.load().and_then(|raw| cmd_train(&raw, &mut out)),
        Command::Viz(a) => a.load().and_then(|raw| cmd_viz(&raw, &mut out)),
        Command::Grid(a) => a.load().and_then(|raw| cmd_grid(&raw, &mut out)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = out.flush();
            eprintln!("{e}");
            e.category.exit_code()
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::io(format!("stdout: {e}")))
}

/// A single run config may carry every command's sections; each command
/// skips the ones owned by the others but stays strict about its own.
fn skip_foreign(r: &mut Reader<'_>, prefixes: &[&str]) {
    for p in prefixes {
        r.ignore_prefix(p);
    }
}

const VIZ_ONLY_KEYS: [&str; 4] = ["viz.checkpoint", "viz.output_dir", "viz.layer", "viz.channel"];

fn run_seed(r: &mut Reader<'_>) -> Result<u64, CliError> {
    Ok(r.or("run.seed", 0u64)?)
}

fn required_path(r: &mut Reader<'_>, key: &str) -> Result<PathBuf, CliError> {
    let p: String = r.req(key)?;
    if p.is_empty() {
        return Err(CliError::config(format!("{key}: empty path")));
    }
    Ok(PathBuf::from(p))
}

fn existing_file(r: &mut Reader<'_>, key: &str) -> Result<PathBuf, CliError> {
    let p = required_path(r, key)?;
    if !p.is_file() {
        return Err(CliError::config(format!("{key}: no such file {}", p.display())));
    }
    Ok(p)
}

fn creatable_dir(path: &Path) -> Result<(), CliError> {
    if path.exists() && !path.is_dir() {
        return Err(CliError::config(format!("{} exists and is not a directory", path.display())));
    }
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// `gen-data`: writes a dataset and manifest, prints per-split counts.
pub fn cmd_gen_data(raw: &RawConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let mut r = raw.reader();
    let seed = run_seed(&mut r)?;
    let root = required_path(&mut r, "data.root")?;
    let id: String = r.or("data.id", "dataset".to_string())?;
    let sizes = [
        r.or("data.train", 2000usize)?,
        r.or("data.val", 500usize)?,
        r.or("data.test", 500usize)?,
    ];
    let data_seed = r.or("data.seed", seed)?;
    let phantom = read_phantom(&mut r, data_seed)?;
    let lesion = read_lesion(&mut r, LesionShape::SharpSquare)?;
    skip_foreign(&mut r, &["train.", "viz.", "grid.", "transform."]);
    r.finish()?;
    phantom.validate()?;
    lesion.validate()?;
    creatable_dir(&root)?;

    eprintln!(
        "generating {} samples ({}x{}, {} lesions) into {}",
        sizes.iter().sum::<usize>(),
        phantom.height,
        phantom.width,
        lesion.shape,
        root.display()
    );
    let manifest = make_dataset(&root, &id, &phantom, &lesion, sizes, data_seed)?;
    let mut text = format!("dataset {id}: {}\n", root.join(MANIFEST_FILE).display());
    for split in Split::ALL {
        let n = manifest.split(split).count();
        let pos = manifest.split(split).filter(|s| s.label == 1).count();
        text.push_str(&format!(
            "{}\t{n} samples\t{pos} positive\t{} negative\tpositive fraction {}\n",
            split.name(),
            n - pos,
            fmt_f64(manifest.positive_fraction(split))
        ));
    }
    emit(out, &text)
}

fn read_train_config(r: &mut Reader<'_>, seed: u64) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: r.or("train.learning_rate", d.learning_rate)?,
        weight_decay: r.or("train.weight_decay", d.weight_decay)?,
        batch_size: r.or("train.batch_size", d.batch_size)?,
        patience: r.or("train.patience", d.patience)?,
        max_epochs: r.or("train.max_epochs", d.max_epochs)?,
        seed: r.or("train.seed", seed)?,
        adam_beta1: r.or("train.adam_beta1", d.adam_beta1)?,
        adam_beta2: r.or("train.adam_beta2", d.adam_beta2)?,
        adam_eps: r.or("train.adam_eps", d.adam_eps)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// `train`: trains on `data.root` and writes checkpoint plus metrics table
/// into `train.output_dir`.
pub fn cmd_train(raw: &RawConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let mut r = raw.reader();
    let seed = run_seed(&mut r)?;
    let root = required_path(&mut r, "data.root")?;
    let output = required_path(&mut r, "train.output_dir")?;
    let cfg = read_train_config(&mut r, seed)?;
    skip_foreign(&mut r, &["data.", "phantom.", "lesion.", "viz.", "grid.", "transform."]);
    r.finish()?;
    let manifest_path = root.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(CliError::config(format!(
            "data.root: no manifest at {}",
            manifest_path.display()
        )));
    }
    creatable_dir(&output)?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    let spec = ModelSpec::new(manifest.phantom.height, manifest.phantom.width);
    spec.shape_chain()?;

    eprintln!(
        "training on {} ({} train / {} val), up to {} epochs",
        manifest.id,
        manifest.split(Split::Train).count(),
        manifest.split(Split::Val).count(),
        cfg.max_epochs
    );
    let outcome = train(&spec, &root, &manifest, &cfg, |m| {
        eprintln!(
            "epoch {:>3}  train_loss {:.5}  val_loss {:.5}  val_bal_acc {:.4}",
            m.epoch, m.train_loss, m.val_loss, m.val_balanced_accuracy
        )
    })?;
    let ck_path = output.join(CHECKPOINT_FILE);
    outcome.checkpoint.save(&ck_path)?;
    let metrics_path = output.join(METRICS_FILE);
    write_atomic(&metrics_path, metrics_table(&outcome.metrics).as_bytes())
        .map_err(|e| io_err(&metrics_path, e))?;
    let meta = &outcome.checkpoint.meta;
    emit(
        out,
        &format!(
            "checkpoint {}\nepochs_run {}\nbest_epoch {}\nbest_val_loss {}\nval_balanced_accuracy {}\n",
            ck_path.display(),
            meta.epochs_run,
            meta.best_epoch,
            fmt_f64(meta.best_val_loss),
            fmt_f64(meta.best_val_balanced_accuracy)
        ),
    )
}

fn read_transform(r: &mut Reader<'_>, kind: TransformKind, extent: (usize, usize)) -> Result<TransformSpec, CliError> {
    let key = |k: &str| format!("transform.{}.{k}", kind.name());
    let spec = match TransformSpec::default_for(kind, extent) {
        TransformSpec::Jitter { range } => TransformSpec::Jitter {
            range: r.range(&key("range"), range)?,
        },
        TransformSpec::Rotation {
            max_degrees,
            interpolation,
        } => TransformSpec::Rotation {
            max_degrees: r.or(&key("max_degrees"), max_degrees)?,
            interpolation: r.or::<Interpolation>(&key("interpolation"), interpolation)?,
        },
        TransformSpec::Translation { max_shift } => TransformSpec::Translation {
            max_shift: r.or(&key("max_shift"), max_shift)?,
        },
        TransformSpec::Resize {
            height,
            width,
            interpolation,
        } => TransformSpec::Resize {
            height: r.or(&key("height"), height)?,
            width: r.or(&key("width"), width)?,
            interpolation: r.or::<Interpolation>(&key("interpolation"), interpolation)?,
        },
        TransformSpec::RandomResizedCrop {
            scale,
            ratio,
            interpolation,
        } => TransformSpec::RandomResizedCrop {
            scale: r.range(&key("scale"), scale)?,
            ratio: r.range(&key("ratio"), ratio)?,
            interpolation: r.or::<Interpolation>(&key("interpolation"), interpolation)?,
        },
        TransformSpec::Sbf(p) => TransformSpec::Sbf(SbfParams {
            window: r.or(&key("window"), p.window)?,
            sigma_s: r.or(&key("sigma_s"), p.sigma_s)?,
            sigma_r: r.or(&key("sigma_r"), p.sigma_r)?,
            threshold: r.or(&key("threshold"), p.threshold)?,
        }),
        TransformSpec::TvDenoise { weight, steps } => TransformSpec::TvDenoise {
            weight: r.or(&key("weight"), weight)?,
            steps: r.or(&key("steps"), steps)?,
        },
    };
    spec.validate()
        .map_err(|e| CliError::config(format!("transform.{}: {e}", kind.name())))?;
    Ok(spec)
}

/// Ascent settings shared by `viz` and `grid` (everything but the target).
struct VizSettings {
    base: VizConfig,
    baseline_count: usize,
    baseline_seed: u64,
}

fn read_viz_settings(r: &mut Reader<'_>, seed: u64, model: &Model) -> Result<VizSettings, CliError> {
    let d = VizConfig::default();
    let height = r.or("viz.image_height", model.spec.input_height)?;
    let width = r.or("viz.image_width", model.spec.input_width)?;
    let kinds: Vec<TransformKind> = r
        .list("viz.transforms")?
        .unwrap_or_default();
    let transforms = kinds
        .iter()
        .map(|&k| read_transform(r, k, (height, width)))
        .collect::<Result<Vec<_>, _>>()?;
    let default_iterations = if transforms.is_empty() {
        DEFAULT_ITERATIONS
    } else {
        DEFAULT_ITERATIONS_WITH_TRANSFORMS
    };
    let viz_seed = r.or("viz.seed", seed)?;
    let base = VizConfig {
        lambda: r.or("viz.lambda", d.lambda)?,
        iterations: r.or("viz.iterations", default_iterations)?,
        step_size: r.or("viz.step_size", d.step_size)?,
        seed: viz_seed,
        transform_every: r.or("viz.transform_every", d.transform_every)?,
        transforms,
        init_range: r.range("viz.init_range", d.init_range)?,
        penalty: r.or::<PenaltyTarget>("viz.penalty", d.penalty)?,
        image_size: Some((height, width)),
        ..d
    };
    base.validate()?;
    model.spec.with_input(height, width).shape_chain()?;
    let baseline_count = r.or("viz.baseline_count", 500usize)?;
    if baseline_count == 0 {
        return Err(CliError::config("viz.baseline_count: must be >= 1"));
    }
    Ok(VizSettings {
        base,
        baseline_count,
        baseline_seed: r.or("viz.baseline_seed", viz_seed)?,
    })
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    Ok(Checkpoint::load(path)?.model)
}

fn stem(layer: usize, channel: usize) -> String {
    format!("layer{layer}_channel{channel}")
}

/// Writes image, trace and summary for one ascent; returns the summary text.
fn write_viz_outputs(dir: &Path, result: &VizResult, baseline_p95: f64, baseline_count: usize) -> Result<String, CliError> {
    let c = &result.config;
    let s = stem(c.layer, c.channel);
    let img_path = dir.join(format!("{s}.pgm"));
    pgm::write(&img_path, &result.image).map_err(|e| io_err(&img_path, e))?;
    let trace_path = dir.join(format!("{s}_trace.txt"));
    write_atomic(&trace_path, result.trace_table().as_bytes()).map_err(|e| io_err(&trace_path, e))?;
    let init = result.initial();
    let fin = &result.final_record;
    let transforms: Vec<&str> = c.transforms.iter().map(|t| t.kind().name()).collect();
    let summary = format!(
        "layer = {}\nchannel = {}\nseed = {}\niterations = {}\nlambda = {}\nstep_size = {}\npenalty = {}\n\
         transforms = {}\ntransform_every = {}\nimage_height = {}\nimage_width = {}\n\
         initial_f = {}\nfinal_f = {}\ninitial_total = {}\nfinal_total = {}\nfinal_mean_abs = {}\n\
         baseline_count = {}\nbaseline_p95 = {}\nexceeds_baseline = {}\n",
        c.layer,
        c.channel,
        result.init_seed,
        c.iterations,
        fmt_f64(c.lambda),
        fmt_f64(c.step_size),
        c.penalty,
        transforms.join(","),
        c.transform_every,
        result.image.shape()[1],
        result.image.shape()[2],
        fmt_f64(init.f),
        fmt_f64(fin.f),
        fmt_f64(init.total),
        fmt_f64(fin.total),
        fmt_f64(result.image.data().iter().map(|v| v.abs()).sum::<f64>() / result.image.len() as f64),
        baseline_count,
        fmt_f64(baseline_p95),
        fin.f > baseline_p95,
    );
    let summary_path = dir.join(format!("{s}_summary.txt"));
    write_atomic(&summary_path, summary.as_bytes()).map_err(|e| io_err(&summary_path, e))?;
    Ok(summary)
}

/// `viz`: one channel, writes image, trace and summary.
pub fn cmd_viz(raw: &RawConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let mut r = raw.reader();
    let seed = run_seed(&mut r)?;
    let ck = existing_file(&mut r, "viz.checkpoint")?;
    let output = required_path(&mut r, "viz.output_dir")?;
    let layer: usize = r.req("viz.layer")?;
    let channel: usize = r.req("viz.channel")?;
    let model = load_model(&ck)?;
    let settings = read_viz_settings(&mut r, seed, &model)?;
    skip_foreign(&mut r, &["data.", "phantom.", "lesion.", "train.", "grid."]);
    r.finish()?;
    let (h, w) = settings.base.image_size.expect("set by read_viz_settings");
    model.spec.with_input(h, w).check_target(layer, channel)?;
    creatable_dir(&output)?;

    let cfg = VizConfig {
        layer,
        channel,
        ..settings.base
    };
    eprintln!("ascent on layer {layer} channel {channel}, {} iterations", cfg.iterations);
    let result = ascend(&model, &cfg)?;
    eprintln!("random baseline over {} noise images", settings.baseline_count);
    let baseline = random_baseline(&model, layer, (h, w), settings.baseline_count, settings.baseline_seed)?;
    let p95 = percentile(&baseline[channel], 95.0);
    let summary = write_viz_outputs(&output, &result, p95, settings.baseline_count)?;
    emit(out, &summary)
}

/// `grid`: seeded random channels per layer, one image each plus a mosaic
/// per layer.
pub fn cmd_grid(raw: &RawConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let mut r = raw.reader();
    let seed = run_seed(&mut r)?;
    let ck = existing_file(&mut r, "grid.checkpoint")?;
    let output = required_path(&mut r, "grid.output_dir")?;
    let layers: Vec<usize> = r.list("grid.layers")?.unwrap_or_else(|| vec![1, 2, 3, 4, 5]);
    let per_layer: usize = r.or("grid.channels_per_layer", 3)?;
    let grid_seed = r.or("grid.seed", seed)?;
    let model = load_model(&ck)?;
    let settings = read_viz_settings(&mut r, seed, &model)?;
    skip_foreign(&mut r, &["data.", "phantom.", "lesion.", "train."]);
    skip_foreign(&mut r, &VIZ_ONLY_KEYS);
    r.finish()?;
    if layers.is_empty() || per_layer == 0 {
        return Err(CliError::config("grid.layers and grid.channels_per_layer must be non-empty"));
    }
    for &l in &layers {
        model.spec.check_layer(l)?;
    }
    let (h, w) = settings.base.image_size.expect("set by read_viz_settings");
    creatable_dir(&output)?;

    let jobs: Vec<(usize, usize)> = layers
        .iter()
        .flat_map(|&l| {
            select_channels(grid_seed, l, model.spec.conv_filters[l - 1], per_layer)
                .into_iter()
                .map(move |c| (l, c))
        })
        .collect();
    eprintln!("grid: {} runs at {h}x{w}, {} iterations each", jobs.len(), settings.base.iterations);
    let results: Vec<VizResult> = jobs
        .par_iter()
        .map(|&(layer, channel)| {
            let cfg = VizConfig {
                layer,
                channel,
                ..settings.base.clone()
            };
            let res = ascend(&model, &cfg)?;
            eprintln!(
                "layer {layer} channel {channel}: total {:.6} -> {:.6}",
                res.initial().total,
                res.final_record.total
            );
            Ok(res)
        })
        .collect::<Result<_, CliError>>()?;

    let mut summary = String::from("layer\tchannel\tinitial_f\tfinal_f\tinitial_total\tfinal_total\tbaseline_p95\n");
    for &layer in &layers {
        let baseline = random_baseline(&model, layer, (h, w), settings.baseline_count, settings.baseline_seed)?;
        let mut tiles = Vec::new();
        for res in results.iter().filter(|res| res.config.layer == layer) {
            let p95 = percentile(&baseline[res.config.channel], 95.0);
            write_viz_outputs(&output, res, p95, settings.baseline_count)?;
            summary.push_str(&format!(
                "{layer}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                res.config.channel,
                fmt_f64(res.initial().f),
                fmt_f64(res.final_record.f),
                fmt_f64(res.initial().total),
                fmt_f64(res.final_record.total),
                fmt_f64(p95)
            ));
            tiles.push(res.image.clone());
        }
        let mosaic_path = output.join(format!("layer{layer}_mosaic.pgm"));
        pgm::write(&mosaic_path, &mosaic(&tiles, per_layer)).map_err(|e| io_err(&mosaic_path, e))?;
    }
    let summary_path = output.join(GRID_SUMMARY_FILE);
    write_atomic(&summary_path, summary.as_bytes()).map_err(|e| io_err(&summary_path, e))?;
    emit(out, &summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_line_format() {
        let e = CliError::config("viz.channel: out of range\nsecond line");
        assert_eq!(e.to_string(), "error: config: viz.channel: out of range second line");
        assert_eq!(e.category.exit_code(), 2);
        assert_eq!(CliError::io("x").category.exit_code(), 3);
        assert_eq!(CliError::numerical("x").category.exit_code(), 4);
    }

    #[test]
    fn error_mapping() {
        let e: CliError = TrainError::NonFiniteLoss { epoch: 1, batch: 2 }.into();
        assert_eq!(e.category, ErrorCategory::Numerical);
        let e: CliError = VizError::NonFinite { iteration: 3 }.into();
        assert_eq!(e.category, ErrorCategory::Numerical);
        let e: CliError = DataError::Io {
            path: "p".into(),
            detail: "d".into(),
        }
        .into();
        assert_eq!(e.category, ErrorCategory::Io);
        let e: CliError = ConfigError::UnknownKey("a.b".into()).into();
        assert_eq!(e.category, ErrorCategory::Config);
    }

    #[test]
    fn unknown_transform_key_is_rejected() {
        let raw = RawConfig::parse("viz.transforms = jitter\ntransform.rotation.max_degrees = 5\n").unwrap();
        let model = Model::build(ModelSpec::new(16, 16), 0).unwrap();
        let mut r = raw.reader();
        read_viz_settings(&mut r, 0, &model).unwrap();
        assert_eq!(
            r.finish().unwrap_err(),
            ConfigError::UnknownKey("transform.rotation.max_degrees".into())
        );
    }

    #[test]
    fn shared_run_config_is_accepted_but_typos_are_not() {
        let text = "data.root = /nonexistent\ntrain.max_epochs = 3\nviz.layer = 2\ngrid.layers = 1\n";
        let mut raw = RawConfig::parse(text).unwrap();
        let mut r = raw.reader();
        r.req::<String>("data.root").unwrap();
        skip_foreign(&mut r, &["train.", "viz.", "grid.", "transform."]);
        r.finish().unwrap();
        raw.set_override("trian.max_epochs=3").unwrap();
        let mut r = raw.reader();
        r.req::<String>("data.root").unwrap();
        skip_foreign(&mut r, &["train.", "viz.", "grid.", "transform."]);
        assert_eq!(r.finish().unwrap_err(), ConfigError::UnknownKey("trian.max_epochs".into()));
    }

    #[test]
    fn iteration_default_depends_on_transforms() {
        let model = Model::build(ModelSpec::new(16, 16), 0).unwrap();
        let raw = RawConfig::parse("").unwrap();
        let s = read_viz_settings(&mut raw.reader(), 0, &model).unwrap();
        assert_eq!(s.base.iterations, 200);
        let raw = RawConfig::parse("viz.transforms = jitter, tv_denoise\n").unwrap();
        let s = read_viz_settings(&mut raw.reader(), 0, &model).unwrap();
        assert_eq!(s.base.iterations, 256);
        assert_eq!(s.base.transforms.len(), 2);
    }

    #[test]
    fn clap_errors_use_config_exit_code() {
        assert_eq!(run(["actmax", "frobnicate"]), 2);
        assert_eq!(run(["actmax", "viz", "--bogus"]), 2);
    }
}
