//! Synthetic brain-like phantoms with injected lesions, written as labeled
//! dataset splits.
//!
//! Backgrounds are ellipse-masked sums of low-frequency sinusoids. Lesions are
//! either sharp-edged squares or discs with a Gaussian falloff. Every sample's
//! randomness derives only from `(seed, sample_index)`, so generation is
//! reproducible and order-independent.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, RawConfig};
use crate::pgm;
use crate::tensor::Tensor;
use crate::util::{derive_rng, fmt_f64, purpose, write_atomic};

const TEXTURE_WAVES: usize = 6;
const NOISE_AMPLITUDE: f64 = 0.3;
const INSIDE_LO: f64 = 0.1;
const INSIDE_HI: f64 = 0.9;
const PLACEMENT_ATTEMPTS: usize = 200;
pub const MANIFEST_FILE: &str = "manifest.txt";
const RECORDS_MARKER: &str = "[records]";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{field}: {detail}")]
    Invalid { field: String, detail: String },
    #[error("lesion does not fit inside the mask at {0}")]
    Placement(String),
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
    #[error("manifest: {0}")]
    Manifest(String),
}

fn invalid(field: &str, detail: impl Into<String>) -> DataError {
    DataError::Invalid {
        field: field.to_string(),
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Spatial frequency of the background texture, in cycles per image.
    pub texture_scale: f64,
    /// Fraction of each half-extent left as background around the ellipse.
    pub ellipse_margin: f64,
}

impl PhantomSpec {
    pub fn new(height: usize, width: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            seed,
            texture_scale: 3.0,
            ellipse_margin: 0.08,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.height < 32 || self.width < 32 {
            return Err(invalid(
                "phantom.height/width",
                format!("must be at least 32, got {}x{}", self.height, self.width),
            ));
        }
        if !(self.texture_scale > 0.0 && self.texture_scale.is_finite()) {
            return Err(invalid("phantom.texture_scale", "must be positive"));
        }
        if !(0.0..0.5).contains(&self.ellipse_margin) {
            return Err(invalid("phantom.ellipse_margin", "must be in [0, 0.5)"));
        }
        Ok(())
    }

    pub fn mask(&self) -> Mask {
        let (h, w) = (self.height, self.width);
        let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
        let a = cy * (1.0 - self.ellipse_margin);
        let b = cx * (1.0 - self.ellipse_margin);
        let inside = (0..h * w)
            .map(|i| {
                let y = (i / w) as f64 + 0.5 - cy;
                let x = (i % w) as f64 + 0.5 - cx;
                (y / a).powi(2) + (x / b).powi(2) <= 1.0
            })
            .collect();
        Mask {
            height: h,
            width: w,
            inside,
        }
    }
}

/// Pixels belonging to the phantom's ellipse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    inside: Vec<bool>,
}

impl Mask {
    pub fn contains(&self, row: isize, col: isize) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.height
            && (col as usize) < self.width
            && self.inside[row as usize * self.width + col as usize]
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.inside.iter().copied()
    }
}

/// Background image for `sample_index`: a masked sinusoid texture with a
/// little noise, rescaled inside the mask to [0.1, 0.9].
pub fn generate_phantom(spec: &PhantomSpec, sample_index: u64) -> Tensor {
    let (h, w) = (spec.height, spec.width);
    let mask = spec.mask();
    let mut rng = derive_rng(spec.seed, purpose::PHANTOM, sample_index);
    let waves: Vec<[f64; 4]> = (0..TEXTURE_WAVES)
        .map(|_| {
            let angle = rng.random_range(0.0..PI);
            let freq = spec.texture_scale * rng.random_range(0.5..1.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(0.5..1.0);
            [freq * angle.cos(), freq * angle.sin(), phase, amp]
        })
        .collect();
    let mut raw = vec![0.0; h * w];
    for (i, v) in raw.iter_mut().enumerate() {
        let u = (i % w) as f64 / w as f64;
        let t = (i / w) as f64 / h as f64;
        let tex: f64 = waves
            .iter()
            .map(|[fx, fy, phase, amp]| amp * (2.0 * PI * (fx * u + fy * t) + phase).sin())
            .sum();
        *v = tex + rng.random_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE);
    }
    let (lo, hi) = raw
        .iter()
        .zip(mask.iter())
        .filter(|(_, m)| *m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let data = raw
        .iter()
        .zip(mask.iter())
        .map(|(&v, inside)| match (inside, span > 0.0) {
            (false, _) => 0.0,
            (true, true) => (INSIDE_LO + (INSIDE_HI - INSIDE_LO) * (v - lo) / span)
                .clamp(INSIDE_LO, INSIDE_HI),
            (true, false) => 0.5,
        })
        .collect();
    Tensor::new(vec![1, h, w], data).expect("phantom shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LesionShape {
    GaussianCircle,
    SharpSquare,
}

impl fmt::Display for LesionShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GaussianCircle => "gaussian_circle",
            Self::SharpSquare => "sharp_square",
        })
    }
}

impl FromStr for LesionShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian_circle" | "gaussian" => Ok(Self::GaussianCircle),
            "sharp_square" | "square" => Ok(Self::SharpSquare),
            other => Err(format!(
                "unknown lesion shape {other:?} (expected gaussian_circle or sharp_square)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LesionSpec {
    pub shape: LesionShape,
    /// Radius for circles, side length for squares, in pixels.
    pub size_range: [f64; 2],
    pub intensity_delta_range: [f64; 2],
    /// Gaussian falloff width outside the disc (circles only).
    pub blur_sigma: f64,
    pub count_range: [usize; 2],
}

impl LesionSpec {
    pub fn square() -> Self {
        Self {
            shape: LesionShape::SharpSquare,
            size_range: [4.0, 8.0],
            intensity_delta_range: [0.25, 0.45],
            blur_sigma: 0.0,
            count_range: [1, 3],
        }
    }

    pub fn gaussian() -> Self {
        Self {
            shape: LesionShape::GaussianCircle,
            size_range: [2.5, 5.0],
            intensity_delta_range: [0.25, 0.45],
            blur_sigma: 1.5,
            count_range: [1, 3],
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let [lo, hi] = self.size_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(invalid(
                "lesion.size_range",
                format!("need 0 < min <= max, got [{lo}, {hi}]"),
            ));
        }
        if self.shape == LesionShape::SharpSquare && hi.round() < 1.0 {
            return Err(invalid("lesion.size_range", "square side rounds to zero"));
        }
        let [dlo, dhi] = self.intensity_delta_range;
        if !(-1.0..=1.0).contains(&dlo) || !(-1.0..=1.0).contains(&dhi) || dlo > dhi {
            return Err(invalid(
                "lesion.intensity_delta_range",
                format!("need -1 <= min <= max <= 1, got [{dlo}, {dhi}]"),
            ));
        }
        if self.shape == LesionShape::GaussianCircle
            && !(self.blur_sigma > 0.0 && self.blur_sigma.is_finite())
        {
            return Err(invalid("lesion.blur_sigma", "must be positive for circles"));
        }
        let [cmin, cmax] = self.count_range;
        if cmin == 0 || cmin > cmax {
            return Err(invalid(
                "lesion.count_range",
                format!("need 1 <= min <= max, got [{cmin}, {cmax}]"),
            ));
        }
        Ok(())
    }
}

/// Parameters of one injected lesion.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionRecord {
    pub shape: LesionShape,
    pub center_row: f64,
    pub center_col: f64,
    pub size: f64,
    pub delta: f64,
    pub blur_sigma: f64,
}

impl fmt::Display for LesionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{},{},{},{},{}",
            self.shape,
            fmt_f64(self.center_row),
            fmt_f64(self.center_col),
            fmt_f64(self.size),
            fmt_f64(self.delta),
            fmt_f64(self.blur_sigma)
        )
    }
}

impl FromStr for LesionRecord {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (shape, rest) = s.split_once(':').ok_or("missing shape")?;
        let nums: Vec<f64> = rest
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        if nums.len() != 5 {
            return Err(format!("expected 5 lesion fields, got {}", nums.len()));
        }
        Ok(Self {
            shape: shape.parse()?,
            center_row: nums[0],
            center_col: nums[1],
            size: nums[2],
            delta: nums[3],
            blur_sigma: nums[4],
        })
    }
}

/// Adds `delta` to an axis-aligned `side × side` square, clipping to [0, 1].
/// The square spans rows `row - side/2 .. row - side/2 + side`.
pub fn inject_square(
    image: &Tensor,
    mask: &Mask,
    center: (usize, usize),
    side: usize,
    delta: f64,
) -> Result<Tensor, DataError> {
    let r0 = center.0 as isize - (side / 2) as isize;
    let c0 = center.1 as isize - (side / 2) as isize;
    let side_i = side as isize;
    for r in r0..r0 + side_i {
        for c in c0..c0 + side_i {
            if !mask.contains(r, c) {
                return Err(DataError::Placement(format!(
                    "square side {side} at {center:?}"
                )));
            }
        }
    }
    let mut out = image.clone();
    let w = mask.width;
    let data = out.data_mut();
    for r in r0..r0 + side_i {
        for c in c0..c0 + side_i {
            let i = r as usize * w + c as usize;
            data[i] = (data[i] + delta).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Radial lesion profile: 1 inside `radius`, Gaussian falloff outside.
pub fn gaussian_profile(distance: f64, radius: f64, blur_sigma: f64) -> f64 {
    if distance <= radius {
        1.0
    } else {
        let t = distance - radius;
        (-t * t / (2.0 * blur_sigma * blur_sigma)).exp()
    }
}

/// Adds `delta · g(d)` around `center`, clipping to [0, 1]. The disc of
/// radius `radius + 3·blur_sigma` must lie inside the mask; the profile is
/// applied out to `radius + 2·blur_sigma`.
pub fn inject_gaussian_circle(
    image: &Tensor,
    mask: &Mask,
    center: (f64, f64),
    radius: f64,
    blur_sigma: f64,
    delta: f64,
) -> Result<Tensor, DataError> {
    let reach = radius + 3.0 * blur_sigma;
    let support = radius + 2.0 * blur_sigma;
    let (cr, cc) = center;
    let rows = (cr - reach).floor() as isize..=(cr + reach).ceil() as isize;
    let cols = (cc - reach).floor() as isize..=(cc + reach).ceil() as isize;
    for r in rows.clone() {
        for c in cols.clone() {
            let d = ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt();
            if d <= reach && !mask.contains(r, c) {
                return Err(DataError::Placement(format!(
                    "circle radius {radius} sigma {blur_sigma} at ({cr}, {cc})"
                )));
            }
        }
    }
    let mut out = image.clone();
    let w = mask.width;
    let data = out.data_mut();
    for r in rows {
        for c in cols.clone() {
            let d = ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt();
            if d <= support {
                let i = r as usize * w + c as usize;
                data[i] = (data[i] + delta * gaussian_profile(d, radius, blur_sigma)).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Draws and places `count` lesions, retrying positions that leave the mask.
pub fn add_random_lesions(
    image: &Tensor,
    mask: &Mask,
    spec: &LesionSpec,
    rng: &mut impl Rng,
) -> Result<(Tensor, Vec<LesionRecord>), DataError> {
    let count = rng.random_range(spec.count_range[0]..=spec.count_range[1]);
    let mut img = image.clone();
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let size = rng.random_range(spec.size_range[0]..=spec.size_range[1]);
        let delta = rng.random_range(spec.intensity_delta_range[0]..=spec.intensity_delta_range[1]);
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let attempt = match spec.shape {
                LesionShape::SharpSquare => {
                    let side = (size.round() as usize).max(1);
                    let r = rng.random_range(0..mask.height);
                    let c = rng.random_range(0..mask.width);
                    inject_square(&img, mask, (r, c), side, delta)
                        .map(|out| (out, r as f64, c as f64, side as f64, 0.0))
                }
                LesionShape::GaussianCircle => {
                    let r = rng.random_range(0.0..mask.height as f64);
                    let c = rng.random_range(0.0..mask.width as f64);
                    inject_gaussian_circle(&img, mask, (r, c), size, spec.blur_sigma, delta)
                        .map(|out| (out, r, c, size, spec.blur_sigma))
                }
            };
            if let Ok(ok) = attempt {
                placed = Some(ok);
                break;
            }
        }
        let (out, r, c, size, sigma) = placed.ok_or_else(|| {
            DataError::Placement(format!(
                "no valid position for a {} of size {size:.2} after {PLACEMENT_ATTEMPTS} attempts",
                spec.shape
            ))
        })?;
        img = out;
        records.push(LesionRecord {
            shape: spec.shape,
            center_row: r,
            center_col: c,
            size,
            delta,
            blur_sigma: sigma,
        });
    }
    Ok((img, records))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// Relative to the dataset root.
    pub path: PathBuf,
    pub label: u8,
    pub split: Split,
    pub lesions: Vec<LesionRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub id: String,
    pub phantom: PhantomSpec,
    pub lesion: LesionSpec,
    pub sizes: [usize; 3],
    pub seed: u64,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Fraction of lesioned samples in `split`.
    pub fn positive_fraction(&self, split: Split) -> f64 {
        let (n, pos) = self
            .split(split)
            .fold((0usize, 0usize), |(n, p), r| (n + 1, p + r.label as usize));
        if n == 0 {
            0.0
        } else {
            pos as f64 / n as f64
        }
    }

    pub fn to_text(&self) -> String {
        let mut h = RawConfig::default();
        h.insert("manifest.version", 1);
        h.insert("dataset.id", &self.id);
        h.insert("dataset.seed", self.seed);
        h.insert("dataset.train", self.sizes[0]);
        h.insert("dataset.val", self.sizes[1]);
        h.insert("dataset.test", self.sizes[2]);
        write_phantom(&mut h, &self.phantom);
        write_lesion(&mut h, &self.lesion);
        let mut out = String::from("# actmax dataset manifest\n");
        out.push_str(&h.to_text());
        out.push_str(RECORDS_MARKER);
        out.push('\n');
        for r in &self.records {
            let lesions = if r.lesions.is_empty() {
                "-".to_string()
            } else {
                r.lesions
                    .iter()
                    .map(|l| l.to_string())
                    .collect::<Vec<_>>()
                    .join(";")
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.path.display(),
                r.label,
                r.split.name(),
                lesions
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let bad = |e: ConfigError| DataError::Manifest(e.to_string());
        let (head, body) = text
            .split_once(&format!("{RECORDS_MARKER}\n"))
            .ok_or_else(|| DataError::Manifest(format!("missing {RECORDS_MARKER} section")))?;
        let raw = RawConfig::parse(head).map_err(bad)?;
        let mut r = raw.reader();
        let version: u32 = r.req("manifest.version").map_err(bad)?;
        if version != 1 {
            return Err(DataError::Manifest(format!("unsupported version {version}")));
        }
        let id = r.req("dataset.id").map_err(bad)?;
        let seed = r.req("dataset.seed").map_err(bad)?;
        let sizes = [
            r.req("dataset.train").map_err(bad)?,
            r.req("dataset.val").map_err(bad)?,
            r.req("dataset.test").map_err(bad)?,
        ];
        let phantom = read_phantom(&mut r, seed).map_err(bad)?;
        let lesion = read_lesion(&mut r, LesionShape::SharpSquare).map_err(bad)?;
        r.finish().map_err(bad)?;

        let mut records = Vec::new();
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let rec_err = |d: String| DataError::Manifest(format!("record {}: {d}", i + 1));
            if fields.len() != 4 {
                return Err(rec_err(format!("expected 4 fields, got {}", fields.len())));
            }
            let label: u8 = fields[1].parse().map_err(|_| rec_err("bad label".into()))?;
            if label > 1 {
                return Err(rec_err(format!("label {label} is not 0 or 1")));
            }
            let lesions = if fields[3] == "-" {
                Vec::new()
            } else {
                fields[3]
                    .split(';')
                    .map(|l| l.parse::<LesionRecord>())
                    .collect::<Result<_, _>>()
                    .map_err(rec_err)?
            };
            records.push(SampleRecord {
                path: PathBuf::from(fields[0]),
                label,
                split: fields[2].parse().map_err(rec_err)?,
                lesions,
            });
        }
        Ok(Self {
            id,
            phantom,
            lesion,
            sizes,
            seed,
            records,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Self::parse(&text)
    }
}

pub(crate) fn write_phantom(h: &mut RawConfig, p: &PhantomSpec) {
    h.insert("phantom.height", p.height);
    h.insert("phantom.width", p.width);
    h.insert("phantom.seed", p.seed);
    h.insert("phantom.texture_scale", fmt_f64(p.texture_scale));
    h.insert("phantom.ellipse_margin", fmt_f64(p.ellipse_margin));
}

pub(crate) fn write_lesion(h: &mut RawConfig, l: &LesionSpec) {
    h.insert("lesion.shape", l.shape);
    h.insert(
        "lesion.size_range",
        format!("{},{}", fmt_f64(l.size_range[0]), fmt_f64(l.size_range[1])),
    );
    h.insert(
        "lesion.intensity_delta_range",
        format!(
            "{},{}",
            fmt_f64(l.intensity_delta_range[0]),
            fmt_f64(l.intensity_delta_range[1])
        ),
    );
    h.insert("lesion.blur_sigma", fmt_f64(l.blur_sigma));
    h.insert(
        "lesion.count_range",
        format!("{},{}", l.count_range[0], l.count_range[1]),
    );
}

/// Reads `phantom.*` keys, falling back to defaults for absent ones.
pub(crate) fn read_phantom(
    r: &mut crate::config::Reader<'_>,
    default_seed: u64,
) -> Result<PhantomSpec, ConfigError> {
    let height = r.or("phantom.height", 64)?;
    let width = r.or("phantom.width", 64)?;
    let mut p = PhantomSpec::new(height, width, r.or("phantom.seed", default_seed)?);
    p.texture_scale = r.or("phantom.texture_scale", p.texture_scale)?;
    p.ellipse_margin = r.or("phantom.ellipse_margin", p.ellipse_margin)?;
    Ok(p)
}

/// Reads `lesion.*` keys; defaults depend on the chosen shape.
pub(crate) fn read_lesion(
    r: &mut crate::config::Reader<'_>,
    default_shape: LesionShape,
) -> Result<LesionSpec, ConfigError> {
    let shape = r.or("lesion.shape", default_shape)?;
    let mut l = match shape {
        LesionShape::SharpSquare => LesionSpec::square(),
        LesionShape::GaussianCircle => LesionSpec::gaussian(),
    };
    l.size_range = r.range("lesion.size_range", l.size_range)?;
    l.intensity_delta_range = r.range("lesion.intensity_delta_range", l.intensity_delta_range)?;
    l.blur_sigma = r.or("lesion.blur_sigma", l.blur_sigma)?;
    if let Some(v) = r.list::<usize>("lesion.count_range")? {
        match v.as_slice() {
            [lo, hi] => l.count_range = [*lo, *hi],
            [n] => l.count_range = [*n, *n],
            _ => {
                return Err(ConfigError::invalid(
                    "lesion.count_range",
                    "expected one or two values",
                ))
            }
        }
    }
    Ok(l)
}

/// One generated sample before it is written to disk.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor,
    pub label: u8,
    pub lesions: Vec<LesionRecord>,
}

/// Label assignment for a split of `n`: exactly `n / 2` positives, shuffled.
fn split_labels(seed: u64, split: Split, n: usize) -> Vec<u8> {
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n / 2)).collect();
    labels.shuffle(&mut derive_rng(seed, purpose::LABELS, split as u64));
    labels
}

/// Generates sample `index` with the given label. Pure in its arguments.
pub fn generate_sample(
    phantom: &PhantomSpec,
    mask: &Mask,
    lesion: &LesionSpec,
    seed: u64,
    index: u64,
    label: u8,
) -> Result<Sample, DataError> {
    let image = generate_phantom(phantom, index);
    if label == 0 {
        return Ok(Sample {
            image,
            label,
            lesions: Vec::new(),
        });
    }
    let mut rng = derive_rng(seed, purpose::LESION, index);
    let (image, lesions) = add_random_lesions(&image, mask, lesion, &mut rng)?;
    Ok(Sample {
        image,
        label,
        lesions,
    })
}

/// Generates all splits in memory, in manifest order.
pub fn generate_dataset(
    phantom: &PhantomSpec,
    lesion: &LesionSpec,
    sizes: [usize; 3],
    seed: u64,
) -> Result<Vec<(Split, Sample)>, DataError> {
    phantom.validate()?;
    lesion.validate()?;
    if sizes.contains(&0) {
        return Err(invalid("dataset sizes", "every split needs at least one sample"));
    }
    let mask = phantom.mask();
    let mut jobs = Vec::with_capacity(sizes.iter().sum());
    let mut index = 0u64;
    for (split, &n) in Split::ALL.iter().zip(&sizes) {
        for label in split_labels(seed, *split, n) {
            jobs.push((*split, index, label));
            index += 1;
        }
    }
    jobs.into_par_iter()
        .map(|(split, index, label)| {
            generate_sample(phantom, &mask, lesion, seed, index, label).map(|s| (split, s))
        })
        .collect()
}

/// Writes every sample as a 16-bit PGM under `root/<split>/` plus
/// `root/manifest.txt`.
pub fn make_dataset(
    root: &Path,
    id: &str,
    phantom: &PhantomSpec,
    lesion: &LesionSpec,
    sizes: [usize; 3],
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    let samples = generate_dataset(phantom, lesion, sizes, seed)?;
    let mut records = Vec::with_capacity(samples.len());
    let mut counters = [0usize; 3];
    for (split, sample) in samples {
        let n = &mut counters[split as usize];
        let rel = PathBuf::from(split.name()).join(format!("{:06}.pgm", *n));
        *n += 1;
        let path = root.join(&rel);
        pgm::write(&path, &sample.image).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        records.push(SampleRecord {
            path: rel,
            label: sample.label,
            split,
            lesions: sample.lesions,
        });
    }
    let manifest = DatasetManifest {
        id: id.to_string(),
        phantom: phantom.clone(),
        lesion: lesion.clone(),
        sizes,
        seed,
        records,
    };
    let mpath = root.join(MANIFEST_FILE);
    write_atomic(&mpath, manifest.to_text().as_bytes()).map_err(|e| DataError::Io {
        path: mpath.display().to_string(),
        detail: e.to_string(),
    })?;
    Ok(manifest)
}

/// Loads every image of `split` from disk with its label.
pub fn load_split(
    root: &Path,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<Vec<(Tensor, u8)>, DataError> {
    let recs: Vec<&SampleRecord> = manifest.split(split).collect();
    recs.par_iter()
        .map(|r| {
            let path = root.join(&r.path);
            let img = pgm::read(&path).map_err(|e| DataError::Io {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
            if img.shape() != [1, manifest.phantom.height, manifest.phantom.width] {
                return Err(DataError::Manifest(format!(
                    "{} has shape {:?}, manifest says {}x{}",
                    path.display(),
                    img.shape(),
                    manifest.phantom.height,
                    manifest.phantom.width
                )));
            }
            Ok((img, r.label))
        })
        .collect()
}
