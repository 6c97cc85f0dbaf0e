//! Sample files, manifests, label taxonomy and the preprocessing applied before training.
//!
//! A sample file is headerless comma-separated text: one row per time step, one
//! column per channel (36 beam sectors or 256 CSI subcarrier amplitudes). The
//! manifest is JSON Lines, one [`SampleMeta`] record per line, with sample paths
//! relative to the manifest's directory.

use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("manifest line {line}: unknown gesture label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("manifest line {line}: duplicate sample path {path}")]
    DuplicatePath { line: usize, path: PathBuf },
    #[error("{path}: expected {expected} channels for {modality}, found {found}")]
    ChannelCount { path: PathBuf, modality: Modality, expected: usize, found: usize },
    #[error("{path}: row {row}, column {col}: {msg}")]
    Cell { path: PathBuf, row: usize, col: usize, msg: String },
    #[error("{path}: {rows} time steps, need at least 2")]
    TooShort { path: PathBuf, rows: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// The ten gestures/poses, indexed 0–9 in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GestureLabel {
    E,
    RL,
    LL,
    AU,
    AW,
    P,
    RS,
    LS,
    HRL,
    HRR,
}

impl GestureLabel {
    pub const ALL: [GestureLabel; 10] = [
        Self::E,
        Self::RL,
        Self::LL,
        Self::AU,
        Self::AW,
        Self::P,
        Self::RS,
        Self::LS,
        Self::HRL,
        Self::HRR,
    ];
    pub const COUNT: usize = 10;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::E => "E",
            Self::RL => "RL",
            Self::LL => "LL",
            Self::AU => "AU",
            Self::AW => "AW",
            Self::P => "P",
            Self::RS => "RS",
            Self::LS => "LS",
            Self::HRL => "HRL",
            Self::HRR => "HRR",
        }
    }

    /// Static poses hold one position for the whole window; the rest are continuous motions.
    pub fn is_pose(self) -> bool {
        matches!(self, Self::E | Self::RL | Self::LL | Self::AU | Self::AW)
    }
}

impl fmt::Display for GestureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GestureLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|l| l.name() == s).ok_or_else(|| format!("unknown gesture label {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    #[serde(rename = "beamsnr")]
    BeamSnr,
    Csi,
}

impl Modality {
    /// 36 beam sectors or 256 subcarriers.
    pub fn channels(self) -> usize {
        match self {
            Self::BeamSnr => 36,
            Self::Csi => 256,
        }
    }

    pub fn default_input_length(self) -> usize {
        match self {
            Self::BeamSnr => 128,
            Self::Csi => 512,
        }
    }

    pub fn default_batch_size(self) -> usize {
        match self {
            Self::BeamSnr => 16,
            Self::Csi => 64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::BeamSnr => "beamsnr",
            Self::Csi => "csi",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "beamsnr" => Ok(Self::BeamSnr),
            "csi" => Ok(Self::Csi),
            _ => Err(format!("unknown modality {s:?} (expected beamsnr or csi)")),
        }
    }
}

/// One manifest record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleMeta {
    pub path: PathBuf,
    pub label: GestureLabel,
    pub person: String,
    pub environment: String,
    pub orientation_deg: i32,
    pub modality: Modality,
    pub session: String,
}

#[derive(Deserialize)]
struct RawRecord {
    path: PathBuf,
    label: String,
    person: String,
    environment: String,
    orientation_deg: i32,
    modality: Modality,
    session: String,
}

/// One gesture instance: a channels × time grid plus its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSample {
    pub values: Tensor<f32>,
    pub meta: SampleMeta,
}

impl TimeSeriesSample {
    /// Checks the channel count against the modality, the length ≥ 2 and finiteness.
    pub fn new(values: Tensor<f32>, meta: SampleMeta) -> Result<Self> {
        let (c, t) = values.dims2("sample").map_err(|e| DataError::Invalid(e.to_string()))?;
        if c != meta.modality.channels() {
            return Err(DataError::ChannelCount {
                path: meta.path.clone(),
                modality: meta.modality,
                expected: meta.modality.channels(),
                found: c,
            });
        }
        if t < 2 {
            return Err(DataError::TooShort { path: meta.path.clone(), rows: t });
        }
        if !values.all_finite() {
            return Err(DataError::Invalid(format!("{}: non-finite values", meta.path.display())));
        }
        Ok(Self { values, meta })
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads a JSON Lines manifest. Relative sample paths are resolved against the
/// manifest's directory; blank lines are skipped and unknown fields ignored.
pub fn parse_manifest(path: &Path) -> Result<Vec<SampleMeta>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| DataError::Manifest { line: line_no, msg: e.to_string() })?;
        let label = raw
            .label
            .parse::<GestureLabel>()
            .map_err(|_| DataError::UnknownLabel { line: line_no, label: raw.label.clone() })?;
        let resolved = if raw.path.is_absolute() { raw.path } else { base.join(raw.path) };
        if !seen.insert(resolved.clone()) {
            return Err(DataError::DuplicatePath { line: line_no, path: resolved });
        }
        out.push(SampleMeta {
            path: resolved,
            label,
            person: raw.person,
            environment: raw.environment,
            orientation_deg: raw.orientation_deg,
            modality: raw.modality,
            session: raw.session,
        });
    }
    Ok(out)
}

/// Writes manifest records, one JSON object per line.
pub fn write_manifest(path: &Path, records: &[SampleMeta]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| DataError::Invalid(e.to_string()))?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf).map_err(io_err(path))
}

/// Reads the sample file named by `meta`, transposing rows (time) × columns (channels)
/// into channels × time.
pub fn load_sample(meta: &SampleMeta) -> Result<TimeSeriesSample> {
    let path = &meta.path;
    let expected = meta.modality.channels();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => DataError::Io { path: path.clone(), source },
            other => DataError::Invalid(format!("{}: {other:?}", path.display())),
        })?;
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Cell { path: path.clone(), row: r + 1, col: 0, msg: e.to_string() })?;
        if record.len() != expected {
            return Err(DataError::ChannelCount {
                path: path.clone(),
                modality: meta.modality,
                expected,
                found: record.len(),
            });
        }
        let mut row = Vec::with_capacity(expected);
        for (c, cell) in record.iter().enumerate() {
            let v: f32 = cell.parse().map_err(|_| DataError::Cell {
                path: path.clone(),
                row: r + 1,
                col: c + 1,
                msg: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(DataError::Cell { path: path.clone(), row: r + 1, col: c + 1, msg: "non-finite value".into() });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(DataError::TooShort { path: path.clone(), rows: rows.len() });
    }
    let t = rows.len();
    let mut values = vec![0.0f32; expected * t];
    for (ti, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            values[c * t + ti] = v;
        }
    }
    let values = Tensor::from_vec(&[expected, t], values).map_err(|e| DataError::Invalid(e.to_string()))?;
    TimeSeriesSample::new(values, meta.clone())
}

/// Loads every sample of a manifest, in manifest order.
pub fn load_samples(metas: &[SampleMeta]) -> Result<Vec<TimeSeriesSample>> {
    metas.par_iter().map(load_sample).collect()
}

/// Writes a channels × time grid as time-major CSV.
pub fn write_sample(path: &Path, values: &Tensor<f32>) -> Result<()> {
    let (c, t) = values.dims2("write_sample").map_err(|e| DataError::Invalid(e.to_string()))?;
    let data = values.data();
    let mut out = Vec::with_capacity(c * t * 8);
    for ti in 0..t {
        for ci in 0..c {
            if ci > 0 {
                out.push(b',');
            }
            write!(out, "{}", data[ci * t + ti]).expect("write to Vec");
        }
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Per-channel linear interpolation onto `target_len` uniform points over [0, 1].
/// Endpoints are preserved exactly.
pub fn resample_linear(sample: &TimeSeriesSample, target_len: usize) -> Result<TimeSeriesSample> {
    if target_len < 2 {
        return Err(DataError::Invalid(format!("resample target length {target_len} < 2")));
    }
    let (c, t) = (sample.channels(), sample.len());
    if t < 2 {
        return Err(DataError::TooShort { path: sample.meta.path.clone(), rows: t });
    }
    let src = sample.values.data();
    let mut out = Vec::with_capacity(c * target_len);
    for ch in 0..c {
        let row = &src[ch * t..(ch + 1) * t];
        if t == target_len {
            out.extend_from_slice(row);
            continue;
        }
        for j in 0..target_len {
            let pos = j as f64 * (t - 1) as f64 / (target_len - 1) as f64;
            let lo = (pos.floor() as usize).min(t - 1);
            let hi = (lo + 1).min(t - 1);
            let frac = pos - lo as f64;
            let v = if frac == 0.0 { row[lo] as f64 } else { row[lo] as f64 * (1.0 - frac) + row[hi] as f64 * frac };
            out.push(v as f32);
        }
    }
    let values = Tensor::from_vec(&[c, target_len], out).map_err(|e| DataError::Invalid(e.to_string()))?;
    Ok(TimeSeriesSample { values, meta: sample.meta.clone() })
}

/// Lower bound on the standard deviation used as a divisor.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel mean and standard deviation pooled over every training time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    mean: Vec<f32>,
    std: Vec<f32>,
}

impl ChannelStats {
    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn std(&self) -> &[f32] {
        &self.std
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

pub fn standardize_fit(samples: &[TimeSeriesSample]) -> Result<ChannelStats> {
    let Some(first) = samples.first() else {
        return Err(DataError::Invalid("cannot fit normalization on zero samples".into()));
    };
    let c = first.channels();
    let mut sum = vec![0.0f64; c];
    let mut count = 0usize;
    for s in samples {
        if s.channels() != c {
            return Err(DataError::Invalid(format!("mixed channel counts {} and {c}", s.channels())));
        }
        let t = s.len();
        for (ch, row) in s.values.data().chunks_exact(t).enumerate() {
            sum[ch] += row.iter().map(|&v| v as f64).sum::<f64>();
        }
        count += t;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0f64; c];
    for s in samples {
        let t = s.len();
        for (ch, row) in s.values.data().chunks_exact(t).enumerate() {
            sq[ch] += row.iter().map(|&v| (v as f64 - mean[ch]).powi(2)).sum::<f64>();
        }
    }
    Ok(ChannelStats {
        mean: mean.iter().map(|&m| m as f32).collect(),
        std: sq.iter().map(|&s| (s / count as f64).sqrt() as f32).collect(),
    })
}

/// `(x − mean) / max(std, 1e-6)` per channel.
pub fn standardize_apply(sample: &TimeSeriesSample, stats: &ChannelStats) -> Result<TimeSeriesSample> {
    if sample.channels() != stats.channels() {
        return Err(DataError::Invalid(format!(
            "sample has {} channels, statistics were fitted on {}",
            sample.channels(),
            stats.channels()
        )));
    }
    let t = sample.len();
    let mut values = sample.values.clone();
    for (ch, row) in values.data_mut().chunks_exact_mut(t).enumerate() {
        let mean = stats.mean[ch] as f64;
        let inv = 1.0 / (stats.std[ch] as f64).max(STD_FLOOR);
        row.iter_mut().for_each(|v| *v = ((*v as f64 - mean) * inv) as f32);
    }
    Ok(TimeSeriesSample { values, meta: sample.meta.clone() })
}

/// Indices of a train/test partition, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split. Within each label the items are shuffled with a seeded stream and
/// the first share goes to training. Each label starts at `floor(ratio·n_label)` (at most
/// `n_label − 1`); leftover seats up to `floor(ratio·N)` go to the labels with the largest
/// fractional remainders. A label with fewer than two items goes wholly to training.
pub fn stratified_split(labels: &[GestureLabel], ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::Invalid(format!("split ratio {ratio} not in (0, 1)")));
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); GestureLabel::COUNT];
    for (i, l) in labels.iter().enumerate() {
        groups[l.index()].push(i);
    }
    let target = (ratio * labels.len() as f64).floor() as usize;
    let mut quota = vec![0usize; GestureLabel::COUNT];
    let mut remainders = Vec::new();
    for (li, g) in groups.iter().enumerate() {
        let n = g.len();
        if n == 0 {
            continue;
        }
        if n < 2 {
            log::warn!("label {} has {n} sample(s); assigning to training only", GestureLabel::ALL[li]);
            quota[li] = n;
            continue;
        }
        let exact = ratio * n as f64;
        quota[li] = (exact.floor() as usize).min(n - 1);
        remainders.push((exact - exact.floor(), li));
    }
    // Largest remainder first, ties to the lowest label index.
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut assigned: usize = quota.iter().sum();
    while assigned < target {
        let mut progressed = false;
        for &(_, li) in &remainders {
            if assigned >= target {
                break;
            }
            if quota[li] + 1 < groups[li].len() {
                quota[li] += 1;
                assigned += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(target);
    let mut test = Vec::with_capacity(labels.len() - target);
    for (li, g) in groups.iter_mut().enumerate() {
        g.shuffle(&mut rng);
        train.extend_from_slice(&g[..quota[li]]);
        test.extend_from_slice(&g[quota[li]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// [`stratified_split`] applied to samples; returns clones in original order.
pub fn split_dataset(
    samples: &[TimeSeriesSample],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<TimeSeriesSample>, Vec<TimeSeriesSample>)> {
    let labels: Vec<GestureLabel> = samples.iter().map(|s| s.meta.label).collect();
    let split = stratified_split(&labels, ratio, seed)?;
    log::info!("split {} samples into {} train / {} test", samples.len(), split.train.len(), split.test.len());
    Ok((
        split.train.iter().map(|&i| samples[i].clone()).collect(),
        split.test.iter().map(|&i| samples[i].clone()).collect(),
    ))
}
