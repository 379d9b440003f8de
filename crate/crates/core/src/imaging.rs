//! The image experiment: sets of square grayscale images are passed through
//! translation-invariant filters, and the inference rule has to tell which of
//! the two sets is the original.
//!
//! Images are stored as raster vectors (row-major, `side²` entries), one image
//! per row of a matrix. Filters act on a `side × side` torus, so every filter
//! matrix is block-circulant with circulant blocks.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Position, Result};
use crate::estimation::PairedDataset;
use crate::inference::{infer_from_samples, CausalVerdict, Decision, InferenceConfig};
use crate::random::gaussian_matrix;
use crate::seed::{derive_seed, stream_rng};
use crate::trace_core::StructureMatrix;

pub const DEFAULT_SIDE: usize = 16;
pub const DEFAULT_KERNEL_SIZE: usize = 5;
pub const DEFAULT_BLUR_SIZE: usize = 3;
pub const DEFAULT_NOISE_LEVEL: f64 = 1e-3;
pub const DEFAULT_RIDGE: f64 = 1e-3;

/// A set of `side × side` images, one raster vector per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    side: usize,
    pixels: DMatrix<f64>,
    label: Option<String>,
}

impl ImageSet {
    pub fn new(side: usize, pixels: DMatrix<f64>, label: Option<String>) -> Result<Self> {
        if side == 0 {
            return Err(Error::Dimension("image side must be ≥ 1".into()));
        }
        if pixels.ncols() != side * side {
            return Err(Error::Dimension(format!(
                "{side}×{side} images need {} pixels, rows have {}",
                side * side,
                pixels.ncols()
            )));
        }
        if pixels.nrows() == 0 {
            return Err(Error::InsufficientSamples { required: 1, got: 0 });
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("image set has non-finite pixels".into()));
        }
        Ok(Self { side, pixels, label })
    }

    pub fn from_vectors(side: usize, images: &[Vec<f64>], label: Option<String>) -> Result<Self> {
        if let Some((i, v)) = images.iter().enumerate().find(|(_, v)| v.len() != side * side) {
            return Err(Error::Dimension(format!(
                "image {i} has {} pixels, expected {}",
                v.len(),
                side * side
            )));
        }
        let flat: Vec<f64> = images.iter().flatten().copied().collect();
        Self::new(side, DMatrix::from_row_slice(images.len(), side * side, &flat), label)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.nrows() == 0
    }

    /// `N × side²` matrix of raster vectors.
    pub fn pixels(&self) -> &DMatrix<f64> {
        &self.pixels
    }

    pub fn image(&self, i: usize) -> Vec<f64> {
        self.pixels.row(i).iter().copied().collect()
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Pgm,
    Csv,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pgm" => Some(Self::Pgm),
            "csv" => Some(Self::Csv),
            _ => None,
        }
    }
}

/// Reads one file of images.
///
/// A PGM file may hold several concatenated images (P2 or P5); pixel values
/// keep their native `0..=maxval` scale. A CSV file holds one raster vector
/// per row, optionally below a single non-numeric header row. Without an
/// expected `side` it is inferred from the first image.
pub fn load_images(path: &Path, format: ImageFormat, side: Option<usize>) -> Result<ImageSet> {
    let name = path.display().to_string();
    let (side, rows) = match format {
        ImageFormat::Pgm => parse_pgm(&fs::read(path)?, &name, side)?,
        ImageFormat::Csv => parse_csv(&fs::read(path)?, &name, side)?,
    };
    ImageSet::from_vectors(side, &rows, None)
}

/// Loads a corpus directory, one class per entry, in name order: every
/// `*.csv` or `*.pgm` file is a class, and so is every subdirectory of `*.pgm`
/// files. Class labels are file stems or directory names.
pub fn load_corpus(dir: &Path, side: Option<usize>) -> Result<Vec<ImageSet>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    let mut classes = Vec::new();
    for path in entries {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if path.is_dir() {
            if let Some(set) = load_pgm_dir(&path, side)? {
                classes.push(set.with_label(label));
            }
        } else if let Some(format) = ImageFormat::from_path(&path) {
            classes.push(load_images(&path, format, side)?.with_label(label));
        }
    }
    if classes.is_empty() {
        return Err(Error::Config(format!("no images found in {}", dir.display())));
    }
    Ok(classes)
}

fn load_pgm_dir(dir: &Path, side: Option<usize>) -> Result<Option<ImageSet>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| ImageFormat::from_path(p) == Some(ImageFormat::Pgm))
        .collect();
    if files.is_empty() {
        return Ok(None);
    }
    files.sort();
    let mut side = side;
    let mut rows = Vec::new();
    for f in files {
        let (s, mut r) = parse_pgm(&fs::read(&f)?, &f.display().to_string(), side)?;
        side = Some(s);
        rows.append(&mut r);
    }
    Ok(Some(ImageSet::from_vectors(side.unwrap_or(0), &rows, None)?))
}

fn parse_error(file: &str, position: Position, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        position,
        message: message.into(),
    }
}

struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl PgmCursor<'_> {
    fn err(&self, at: usize, message: impl Into<String>) -> Error {
        parse_error(self.file, Position::Byte(at), message)
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.bytes.get(start) {
                Some(&b) => self.err(start, format!("expected {what}, found {:?}", b as char)),
                None => self.err(start, format!("expected {what}, found end of file")),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err(start, format!("{what} is out of range")))
    }
}

fn parse_pgm(bytes: &[u8], file: &str, expected_side: Option<usize>) -> Result<(usize, Vec<Vec<f64>>)> {
    let mut cur = PgmCursor { bytes, pos: 0, file };
    let mut side = expected_side;
    let mut images = Vec::new();
    loop {
        cur.skip_space();
        if cur.pos >= bytes.len() {
            break;
        }
        let magic_at = cur.pos;
        let binary = match bytes.get(magic_at..magic_at + 2) {
            Some(b"P2") => false,
            Some(b"P5") => true,
            _ => return Err(cur.err(magic_at, "expected PGM magic number P2 or P5")),
        };
        cur.pos += 2;
        cur.skip_space();
        let width_at = cur.pos;
        let width = cur.number("width")? as usize;
        let height = cur.number("height")? as usize;
        let maxval_at = cur.pos;
        let maxval = cur.number("maxval")?;
        if width == 0 || width != height {
            return Err(cur.err(width_at, format!("image is {width}×{height}; only non-empty square images are supported")));
        }
        if !(1..=65535).contains(&maxval) {
            return Err(cur.err(maxval_at, format!("maxval {maxval} outside 1..=65535")));
        }
        match side {
            Some(s) if s != width => {
                return Err(cur.err(width_at, format!("image side {width} does not match expected side {s}")));
            }
            _ => side = Some(width),
        }
        let count = width * height;
        let mut pixels = Vec::with_capacity(count);
        if binary {
            match bytes.get(cur.pos) {
                Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
                _ => return Err(cur.err(cur.pos, "expected a single whitespace byte before the raster")),
            }
            let wide = maxval > 255;
            let need = count * if wide { 2 } else { 1 };
            if bytes.len() - cur.pos < need {
                return Err(cur.err(
                    bytes.len(),
                    format!("truncated raster: expected {need} bytes, found {}", bytes.len() - cur.pos),
                ));
            }
            let raster = &bytes[cur.pos..cur.pos + need];
            for i in 0..count {
                let v = if wide {
                    u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u32
                } else {
                    raster[i] as u32
                };
                if v > maxval {
                    let at = cur.pos + if wide { 2 * i } else { i };
                    return Err(cur.err(at, format!("pixel value {v} exceeds maxval {maxval}")));
                }
                pixels.push(v as f64);
            }
            cur.pos += need;
        } else {
            for _ in 0..count {
                cur.skip_space();
                let at = cur.pos;
                let v = cur.number("pixel value")?;
                if v > maxval {
                    return Err(cur.err(at, format!("pixel value {v} exceeds maxval {maxval}")));
                }
                pixels.push(v as f64);
            }
        }
        images.push(pixels);
    }
    match side {
        Some(s) if !images.is_empty() => Ok((s, images)),
        _ => Err(cur.err(0, "file contains no images")),
    }
}

fn parse_csv(bytes: &[u8], file: &str, expected_side: Option<usize>) -> Result<(usize, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut side = expected_side;
    let mut rows = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(index + 1);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, usize> = record
            .iter()
            .enumerate()
            .map(|(j, f)| f.parse::<f64>().map_err(|_| j))
            .collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if index == 0 => continue,
            Err(j) => {
                return Err(parse_error(
                    file,
                    Position::Line(line),
                    format!("non-numeric cell {:?} in column {}", &record[j], j + 1),
                ))
            }
        };
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(parse_error(file, Position::Line(line), format!("non-finite value in column {}", j + 1)));
        }
        let s = match side {
            Some(s) => s,
            None => {
                let s = (values.len() as f64).sqrt().round() as usize;
                if s * s != values.len() || s == 0 {
                    return Err(parse_error(
                        file,
                        Position::Line(line),
                        format!("row has {} values, which is not a square raster", values.len()),
                    ));
                }
                side = Some(s);
                s
            }
        };
        if values.len() != s * s {
            return Err(parse_error(
                file,
                Position::Line(line),
                format!("row has {} values, expected {} for {s}×{s} images", values.len(), s * s),
            ));
        }
        rows.push(values);
    }
    match side {
        Some(s) if !rows.is_empty() => Ok((s, rows)),
        _ => Err(parse_error(file, Position::Line(1), "file contains no images")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Random,
    Blur,
    Custom,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Blur => "blur",
            Self::Custom => "custom",
        }
    }
}

/// Odd-sized `k × k` filter weights, centered on the middle entry.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterKernel {
    weights: DMatrix<f64>,
    kind: KernelKind,
}

fn check_odd(k: usize) -> Result<()> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::Validation(format!("kernel size must be odd and positive, got {k}")));
    }
    Ok(())
}

impl FilterKernel {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() {
            return Err(Error::Validation(format!(
                "kernel must be square, got {}×{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        check_odd(weights.nrows())?;
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("kernel has non-finite weights".into()));
        }
        Ok(Self {
            weights,
            kind: KernelKind::Custom,
        })
    }

    /// The 1×1 unit kernel.
    pub fn delta() -> Self {
        Self {
            weights: DMatrix::from_element(1, 1, 1.0),
            kind: KernelKind::Custom,
        }
    }

    pub fn k(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }
}

/// i.i.d. standard normal weights.
pub fn random_kernel(k: usize, rng: &mut impl Rng) -> Result<FilterKernel> {
    check_odd(k)?;
    Ok(FilterKernel {
        weights: gaussian_matrix(k, k, rng),
        kind: KernelKind::Random,
    })
}

/// Box blur with weights `1/k²`.
pub fn blur_kernel(k: usize) -> Result<FilterKernel> {
    check_odd(k)?;
    Ok(FilterKernel {
        weights: DMatrix::from_element(k, k, 1.0 / (k * k) as f64),
        kind: KernelKind::Blur,
    })
}

/// Matrix of circular 2-D convolution by `kernel` on a `side × side` torus:
/// `y[r, c] = Σ w[i, j] · x[r − i + h, c − j + h]` with `h = k / 2` and indices
/// taken mod `side`.
pub fn filter_matrix(kernel: &FilterKernel, side: usize) -> Result<StructureMatrix<f64>> {
    let k = kernel.k();
    if k > side {
        return Err(Error::Validation(format!("kernel size {k} exceeds image side {side}")));
    }
    let h = k / 2;
    let d = side * side;
    let mut a = DMatrix::zeros(d, d);
    // k·side keeps (r + h − i) non-negative before reduction
    let offset = k * side + h;
    for r in 0..side {
        for c in 0..side {
            for i in 0..k {
                for j in 0..k {
                    let rr = (r + offset - i) % side;
                    let cc = (c + offset - j) % side;
                    a[(r * side + c, rr * side + cc)] += kernel.weights[(i, j)];
                }
            }
        }
    }
    StructureMatrix::new(a)
}

fn pooled_std(m: &DMatrix<f64>) -> f64 {
    let count = m.len() as f64;
    let mean = m.sum() / count;
    (m.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count).sqrt()
}

fn add_noise(m: &mut DMatrix<f64>, sd: f64, rng: &mut impl Rng) {
    if sd > 0.0 {
        for v in m.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sd * z;
        }
    }
}

fn filtered(images: &ImageSet, a: &StructureMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = images.side * images.side;
    if a.rows() != d || a.cols() != d {
        return Err(Error::Dimension(format!(
            "filter is {}×{}, images have {d} pixels",
            a.rows(),
            a.cols()
        )));
    }
    Ok(&images.pixels * a.matrix().transpose())
}

fn check_noise_level(level: f64) -> Result<()> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(Error::Config(format!("noise level must be finite and ≥ 0, got {level}")));
    }
    Ok(())
}

/// `y = A x + η` for every image, with `η` i.i.d. Gaussian of standard
/// deviation `noise_level ×` the pooled pixel standard deviation of `A x`.
pub fn apply_filter(
    images: &ImageSet,
    a: &StructureMatrix<f64>,
    noise_level: f64,
    rng: &mut impl Rng,
) -> Result<ImageSet> {
    check_noise_level(noise_level)?;
    let mut y = filtered(images, a)?;
    let sd = noise_level * pooled_std(&y);
    add_noise(&mut y, sd, rng);
    ImageSet::new(images.side, y, images.label.clone())
}

/// Like [`apply_filter`], and also adds independent noise of the same
/// standard deviation to a copy of the originals. Returns
/// `(perturbed originals, processed)`.
pub fn apply_filter_paired(
    images: &ImageSet,
    a: &StructureMatrix<f64>,
    noise_level: f64,
    rng: &mut impl Rng,
) -> Result<(ImageSet, ImageSet)> {
    check_noise_level(noise_level)?;
    let mut y = filtered(images, a)?;
    let sd = noise_level * pooled_std(&y);
    add_noise(&mut y, sd, rng);
    let mut x = images.pixels.clone();
    add_noise(&mut x, sd, rng);
    Ok((
        ImageSet::new(images.side, x, images.label.clone())?,
        ImageSet::new(images.side, y, images.label.clone())?,
    ))
}

/// Verdict on "originals cause processed" for two aligned image sets.
pub fn judge_pair(originals: &ImageSet, processed: &ImageSet, config: &InferenceConfig) -> Result<CausalVerdict> {
    let data = PairedDataset::new(originals.pixels.clone(), processed.pixels.clone())?;
    infer_from_samples(&data, config)
}

/// Parameters of the synthetic texture corpus: each class is a family of
/// smoothed Gaussian random fields under a radial Gaussian envelope, with a
/// per-class smoothing scale and envelope radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub classes: usize,
    pub images_per_class: usize,
    pub side: usize,
    /// Range of the Gaussian smoothing scale, in pixels.
    pub smoothing: (f64, f64),
    /// Range of the envelope radius, in pixels.
    pub envelope: (f64, f64),
    /// Fields are smoothed on a canvas this many pixels wider on each side
    /// and then cropped, which hides the zero boundary.
    pub margin: usize,
}

impl Default for SyntheticCorpus {
    fn default() -> Self {
        Self {
            classes: 10,
            images_per_class: 600,
            side: DEFAULT_SIDE,
            smoothing: (0.4, 1.0),
            envelope: (5.0, 10.0),
            margin: 4,
        }
    }
}

/// Separable Gaussian smoothing with zero padding, truncated at 3 scales.
fn gaussian_smooth(field: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    let radius = (3.0 * scale).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * scale * scale)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    let (rows, cols) = field.shape();
    let pass = |src: &DMatrix<f64>, along_rows: bool| {
        DMatrix::from_fn(rows, cols, |r, c| {
            taps.iter()
                .enumerate()
                .filter_map(|(t, w)| {
                    let off = t as isize - radius;
                    let (rr, cc) = if along_rows {
                        (r as isize + off, c as isize)
                    } else {
                        (r as isize, c as isize + off)
                    };
                    (rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols)
                        .then(|| w * src[(rr as usize, cc as usize)])
                })
                .sum()
        })
    };
    pass(&pass(field, true), false)
}

/// Generates the corpus; class `c` draws from stream `c` of `seed`.
pub fn synthetic_corpus(spec: &SyntheticCorpus, seed: u64) -> Result<Vec<ImageSet>> {
    if spec.classes == 0 || spec.images_per_class == 0 || spec.side == 0 {
        return Err(Error::Config("synthetic corpus needs classes, images and side ≥ 1".into()));
    }
    let (s_lo, s_hi) = spec.smoothing;
    let (e_lo, e_hi) = spec.envelope;
    if !(0.0 < s_lo && s_lo <= s_hi && 0.0 < e_lo && e_lo <= e_hi) || !s_hi.is_finite() || !e_hi.is_finite() {
        return Err(Error::Config("smoothing and envelope ranges must be positive and ordered".into()));
    }
    let side = spec.side;
    let canvas = side + 2 * spec.margin;
    let center = (side as f64 - 1.0) / 2.0;
    (0..spec.classes)
        .into_par_iter()
        .map(|class| {
            let mut rng = stream_rng(seed, class as u64);
            let scale = if s_lo < s_hi { rng.random_range(s_lo..s_hi) } else { s_lo };
            let radius = if e_lo < e_hi { rng.random_range(e_lo..e_hi) } else { e_lo };
            let mut pixels = DMatrix::zeros(spec.images_per_class, side * side);
            for i in 0..spec.images_per_class {
                let field = gaussian_smooth(&gaussian_matrix(canvas, canvas, &mut rng), scale);
                for r in 0..side {
                    for c in 0..side {
                        let dist2 = (r as f64 - center).powi(2) + (c as f64 - center).powi(2);
                        let envelope = (-dist2 / (2.0 * radius * radius)).exp();
                        pixels[(i, r * side + c)] = envelope * field[(r + spec.margin, c + spec.margin)];
                    }
                }
            }
            ImageSet::new(side, pixels, Some(format!("class{class}")))
        })
        .collect()
}

/// One image set and the filter applied to it.
#[derive(Debug, Clone)]
pub struct ImageCase {
    pub images: ImageSet,
    pub kernel: FilterKernel,
}

/// How filters are assigned to classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseDesign {
    pub filters_per_class: usize,
    pub kernel_size: usize,
    /// When set, the last filter of each class is a box blur of this size.
    pub blur_size: Option<usize>,
}

impl Default for CaseDesign {
    fn default() -> Self {
        Self {
            filters_per_class: 10,
            kernel_size: DEFAULT_KERNEL_SIZE,
            blur_size: Some(DEFAULT_BLUR_SIZE),
        }
    }
}

/// Pairs every class with `filters_per_class` kernels. Random kernels for
/// class `c` come from stream `c` of `seed`.
pub fn build_cases(classes: &[ImageSet], design: &CaseDesign, seed: u64) -> Result<Vec<ImageCase>> {
    if classes.is_empty() {
        return Err(Error::Config("corpus is empty".into()));
    }
    if design.filters_per_class == 0 {
        return Err(Error::Config("filters_per_class must be ≥ 1".into()));
    }
    check_odd(design.kernel_size)?;
    let mut cases = Vec::with_capacity(classes.len() * design.filters_per_class);
    for (c, images) in classes.iter().enumerate() {
        let mut rng = stream_rng(seed, c as u64);
        for f in 0..design.filters_per_class {
            let kernel = match design.blur_size {
                Some(b) if f + 1 == design.filters_per_class => blur_kernel(b)?,
                _ => random_kernel(design.kernel_size, &mut rng)?,
            };
            cases.push(ImageCase {
                images: images.clone(),
                kernel,
            });
        }
    }
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub inference: InferenceConfig,
    pub noise_level: f64,
    /// Add noise to the originals as well as to the processed images.
    pub perturb_originals: bool,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            inference: InferenceConfig {
                ridge: DEFAULT_RIDGE,
                ..Default::default()
            },
            noise_level: DEFAULT_NOISE_LEVEL,
            perturb_originals: true,
            seed: 0,
        }
    }
}

/// One row of the per-case table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case: usize,
    pub label: String,
    pub kernel: KernelKind,
    pub kernel_size: usize,
    pub images: usize,
    pub decision: Decision,
    pub correct: bool,
    pub delta_xy: Option<f64>,
    pub delta_yx: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub cases: usize,
    pub correct: usize,
    pub wrong: usize,
    /// Includes failed cases.
    pub undecided: usize,
    pub errors: usize,
    pub noise_level: f64,
    pub epsilon: f64,
    pub ridge: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub summary: ExperimentSummary,
    pub results: Vec<CaseResult>,
}

/// CSV header written by [`ExperimentResult::write_csv`].
pub const CASES_CSV_HEADER: &str = "case,label,kernel,kernel_size,images,decision,correct,delta_xy,delta_yx,error";

impl ExperimentResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.results {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }
}

/// Filters each case, adds noise and asks which set is the original. Case
/// `i` draws its noise from stream `i` of `config.seed`, so results do not
/// depend on the number of worker threads.
pub fn originals_experiment(cases: &[ImageCase], config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.inference.validate()?;
    check_noise_level(config.noise_level)?;
    if cases.is_empty() {
        return Err(Error::Config("no cases to run".into()));
    }
    let results: Vec<CaseResult> = cases
        .par_iter()
        .enumerate()
        .map(|(i, case)| {
            let outcome = (|| -> Result<CausalVerdict> {
                let a = filter_matrix(&case.kernel, case.images.side())?;
                let mut rng = stream_rng(derive_seed(config.seed, 0), i as u64);
                let (x, y) = if config.perturb_originals {
                    apply_filter_paired(&case.images, &a, config.noise_level, &mut rng)?
                } else {
                    (case.images.clone(), apply_filter(&case.images, &a, config.noise_level, &mut rng)?)
                };
                judge_pair(&x, &y, &config.inference)
            })();
            let label = case.images.label().unwrap_or("").to_string();
            match outcome {
                Ok(v) => CaseResult {
                    case: i,
                    label,
                    kernel: case.kernel.kind(),
                    kernel_size: case.kernel.k(),
                    images: case.images.len(),
                    decision: v.decision,
                    correct: v.decision == Decision::XCausesY,
                    delta_xy: Some(v.delta_xy),
                    delta_yx: Some(v.delta_yx),
                    error: None,
                },
                Err(e) => CaseResult {
                    case: i,
                    label,
                    kernel: case.kernel.kind(),
                    kernel_size: case.kernel.k(),
                    images: case.images.len(),
                    decision: Decision::Undecided,
                    correct: false,
                    delta_xy: None,
                    delta_yx: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let count = |d: Decision| results.iter().filter(|r| r.decision == d).count();
    let summary = ExperimentSummary {
        cases: results.len(),
        correct: count(Decision::XCausesY),
        wrong: count(Decision::YCausesX),
        undecided: count(Decision::Undecided),
        errors: results.iter().filter(|r| r.error.is_some()).count(),
        noise_level: config.noise_level,
        epsilon: config.inference.epsilon,
        ridge: config.inference.ridge,
        seed: config.seed,
    };
    Ok(ExperimentResult { summary, results })
}
