//! Synthetic gesture data.
//!
//! Beam SNR per sector is the attenuated multipath sum
//! `B_k = (1/σ²) Σ_n α_n a_n F_k(θ_n) G_k(Φ_n)`, and CSI is the amplitude of
//! `H[k] = Σ_n α_n g_n exp(−j 2π f_k τ_n)` on a 256-subcarrier, 80 MHz grid.
//! A gesture is a blockage profile over body-frame azimuth and time; path `n`
//! is attenuated by `α_n(t) = 1 − b_n·β(φ_n, t)`.

mod dataset;

pub use dataset::{
    gen_dataset, generate, preset, EnvironmentSpec, SynthConfig, PRESET_NAMES,
};

use crate::dataio::{DataError, GestureLabel, Modality, SampleMeta, TimeSeriesSample};
use crate::tensor::Tensor;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator setting: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(SynthError::Invalid(msg.into()))
}

pub const N_SECTORS: usize = 36;
pub const N_SUBCARRIERS: usize = 256;
/// 80 MHz over 256 subcarriers.
pub const SUBCARRIER_SPACING_HZ: f64 = 312_500.0;
pub const GESTURE_SECONDS: f64 = 15.0;
pub const CSI_PACKET_RATE_HZ: f64 = 1000.0;

/// Gaussian sector lobes with centers spread uniformly over [−60°, 60°].
#[derive(Debug, Clone, PartialEq)]
pub struct BeamPatternSet {
    centers_deg: Vec<f64>,
    tx_width_deg: f64,
    rx_width_deg: f64,
}

impl BeamPatternSet {
    pub fn uniform(n_sectors: usize, tx_width_deg: f64, rx_width_deg: f64) -> Result<Self> {
        if n_sectors == 0 || !(tx_width_deg > 0.0) || !(rx_width_deg > 0.0) {
            return invalid("beam patterns need at least one sector and positive widths");
        }
        let centers_deg = if n_sectors == 1 {
            vec![0.0]
        } else {
            (0..n_sectors).map(|k| -60.0 + 120.0 * k as f64 / (n_sectors - 1) as f64).collect()
        };
        Ok(Self { centers_deg, tx_width_deg, rx_width_deg })
    }

    /// 36 narrow transmit lobes, broad receive lobes.
    pub fn standard() -> Self {
        Self::uniform(N_SECTORS, 5.0, 30.0).expect("valid constants")
    }

    pub fn n_sectors(&self) -> usize {
        self.centers_deg.len()
    }

    pub fn center_deg(&self, k: usize) -> f64 {
        self.centers_deg[k]
    }

    /// `F_k(θ)`, peak 1 at the sector center.
    pub fn tx_gain(&self, k: usize, azimuth_deg: f64) -> f64 {
        lobe(azimuth_deg - self.centers_deg[k], self.tx_width_deg)
    }

    /// `G_k(Φ)`, peak 1 at the sector center.
    pub fn rx_gain(&self, k: usize, azimuth_deg: f64) -> f64 {
        lobe(azimuth_deg - self.centers_deg[k], self.rx_width_deg)
    }
}

fn lobe(offset_deg: f64, width_deg: f64) -> f64 {
    (-0.5 * (offset_deg / width_deg).powi(2)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub azimuth_tx_deg: f64,
    pub azimuth_rx_deg: f64,
    pub amplitude: f64,
    pub blockage_sensitivity: f64,
}

/// Propagation paths; the first is line of sight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    paths: Vec<Path>,
}

impl PathSet {
    pub fn new(paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() {
            return invalid("a path set needs at least the line-of-sight path");
        }
        for (i, p) in paths.iter().enumerate() {
            if !(p.amplitude >= 0.0) || !(0.0..=1.0).contains(&p.blockage_sensitivity) {
                return invalid(format!("path {i}: amplitude must be ≥ 0 and sensitivity in [0, 1]"));
            }
        }
        Ok(Self { paths })
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Departure azimuth relative to the line of sight, where the person stands.
    pub fn body_azimuth_deg(&self, n: usize) -> f64 {
        self.paths[n].azimuth_tx_deg - self.paths[0].azimuth_tx_deg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamEnvironment {
    pub name: String,
    pub paths: PathSet,
    pub noise_variance: f64,
    pub sweep_rate_hz: f64,
    /// Standard deviation of the reported SNR around its true value, in dB.
    pub report_noise_db: f64,
}

impl BeamEnvironment {
    pub fn new(name: &str, paths: PathSet, noise_variance: f64, sweep_rate_hz: f64, report_noise_db: f64) -> Result<Self> {
        if !(noise_variance > 0.0) {
            return invalid(format!("noise variance {noise_variance} must be positive"));
        }
        if !(1.0..=10.0).contains(&sweep_rate_hz) {
            return invalid(format!("sweep rate {sweep_rate_hz} Hz outside [1, 10]"));
        }
        if !(report_noise_db >= 0.0) {
            return invalid("report noise must be non-negative");
        }
        Ok(Self { name: name.to_string(), paths, noise_variance, sweep_rate_hz, report_noise_db })
    }
}

/// Linear per-sector SNR.
pub fn beam_snr_eval(patterns: &BeamPatternSet, paths: &PathSet, attenuation: &[f64], noise_variance: f64) -> Result<Vec<f64>> {
    if attenuation.len() != paths.len() {
        return invalid(format!("{} attenuations for {} paths", attenuation.len(), paths.len()));
    }
    if !(noise_variance > 0.0) {
        return invalid(format!("noise variance {noise_variance} must be positive"));
    }
    Ok((0..patterns.n_sectors())
        .map(|k| {
            let sum: f64 = paths
                .paths()
                .iter()
                .zip(attenuation)
                .map(|(p, &a)| a * p.amplitude * patterns.tx_gain(k, p.azimuth_tx_deg) * patterns.rx_gain(k, p.azimuth_rx_deg))
                .sum();
            sum / noise_variance
        })
        .collect())
}

/// Reported SNR in dB; the unit offset keeps empty sectors at 0 dB.
pub fn snr_db(linear: f64) -> f64 {
    10.0 * (1.0 + linear).log10()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsiPath {
    /// Body-frame azimuth used for blockage.
    pub azimuth_deg: f64,
    pub delay_ns: f64,
    pub gain: Complex64,
    pub blockage_sensitivity: f64,
}

/// Baseband offset of subcarrier `k` from the channel center.
pub fn subcarrier_offset_hz(k: usize, n_subcarriers: usize) -> f64 {
    (k as f64 - (n_subcarriers / 2) as f64) * SUBCARRIER_SPACING_HZ
}

/// Noise-free complex response `H[k]`.
pub fn csi_response(n_subcarriers: usize, paths: &[CsiPath], attenuation: &[f64]) -> Result<Vec<Complex64>> {
    if n_subcarriers == 0 {
        return invalid("need at least one subcarrier");
    }
    if attenuation.len() != paths.len() {
        return invalid(format!("{} attenuations for {} paths", attenuation.len(), paths.len()));
    }
    if paths.iter().any(|p| !(p.delay_ns >= 0.0)) {
        return invalid("path delays must be non-negative");
    }
    Ok((0..n_subcarriers)
        .map(|k| {
            let f = subcarrier_offset_hz(k, n_subcarriers);
            paths
                .iter()
                .zip(attenuation)
                .map(|(p, &a)| p.gain * a * Complex64::from_polar(1.0, -2.0 * PI * f * p.delay_ns * 1e-9))
                .sum()
        })
        .collect())
}

/// Subcarrier amplitudes `|H[k] + w_k|` with circular Gaussian noise of variance `noise_variance`.
pub fn csi_eval(
    n_subcarriers: usize,
    paths: &[CsiPath],
    attenuation: &[f64],
    noise_variance: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if !(noise_variance >= 0.0) {
        return invalid(format!("noise variance {noise_variance} must be non-negative"));
    }
    let h = csi_response(n_subcarriers, paths, attenuation)?;
    if noise_variance == 0.0 {
        return Ok(h.iter().map(|z| z.norm()).collect());
    }
    let normal = Normal::new(0.0, (noise_variance / 2.0).sqrt()).expect("finite std");
    Ok(h.iter().map(|z| (z + Complex64::new(normal.sample(rng), normal.sample(rng))).norm()).collect())
}

/// Per-instance variation of a performance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub depth: f64,
    pub speed: f64,
    /// Fraction of a motion cycle.
    pub phase: f64,
    pub offset_deg: f64,
}

impl Jitter {
    pub const NONE: Self = Self { depth: 1.0, speed: 1.0, phase: 0.0, offset_deg: 0.0 };

    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            depth: rng.random_range(0.85..1.15),
            speed: rng.random_range(0.9..1.1),
            phase: rng.random_range(0.0..1.0),
            offset_deg: rng.random_range(-2.0..2.0),
        }
    }
}

/// Blockage window: centre, width and depth in body-frame degrees.
#[derive(Debug, Clone, Copy)]
struct Window {
    center: f64,
    width: f64,
    depth: f64,
}

const SWIPE_PERIOD_S: f64 = 3.0;
const SWIPE_STROKE: f64 = 0.35;
const PUSH_PERIOD_S: f64 = 2.5;
const HEAD_PERIOD_S: f64 = 3.0;

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn raised_cosine(u: f64) -> f64 {
    0.5 * (1.0 - (2.0 * PI * u).cos())
}

/// Fast stroke from 0 to 1, slower return; continuous and periodic in `u`.
fn swipe_stroke(u: f64) -> f64 {
    if u < SWIPE_STROKE {
        smoothstep(u / SWIPE_STROKE)
    } else {
        1.0 - smoothstep((u - SWIPE_STROKE) / (1.0 - SWIPE_STROKE))
    }
}

/// How one performed gesture shadows the propagation paths over time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GestureEnvelope {
    pub label: GestureLabel,
    /// Body size relative to nominal; scales window widths.
    pub person_scale: f64,
    /// 0 when facing along the link, 90 when side-on.
    pub orientation_deg: i32,
    pub jitter: Jitter,
}

impl GestureEnvelope {
    pub fn new(label: GestureLabel) -> Self {
        Self { label, person_scale: 1.0, orientation_deg: 0, jitter: Jitter::NONE }
    }

    fn cycle(&self, t: f64, period: f64) -> f64 {
        (t * self.jitter.speed / period + self.jitter.phase).rem_euclid(1.0)
    }

    fn windows(&self, t: f64) -> Vec<Window> {
        let w = |center: f64, width: f64, depth: f64| Window { center, width, depth };
        match self.label {
            GestureLabel::E => Vec::new(),
            GestureLabel::RL => vec![w(18.0, 10.0, 0.8)],
            GestureLabel::LL => vec![w(-18.0, 10.0, 0.8)],
            GestureLabel::AU => vec![w(0.0, 7.0, 0.85)],
            GestureLabel::AW => vec![w(-28.0, 12.0, 0.6), w(28.0, 12.0, 0.6)],
            GestureLabel::P => vec![w(0.0, 10.0, 0.85 * raised_cosine(self.cycle(t, PUSH_PERIOD_S)))],
            GestureLabel::RS => vec![w(-40.0 + 80.0 * swipe_stroke(self.cycle(t, SWIPE_PERIOD_S)), 9.0, 0.85)],
            GestureLabel::LS => {
                let mirrored = Self { label: GestureLabel::RS, ..*self };
                mirrored.windows(GESTURE_SECONDS - t)
            }
            GestureLabel::HRL => vec![w(-10.0 * raised_cosine(self.cycle(t, HEAD_PERIOD_S)), 6.0, 0.5)],
            GestureLabel::HRR => vec![w(10.0 * raised_cosine(self.cycle(t, HEAD_PERIOD_S)), 6.0, 0.5)],
        }
    }

    /// Fraction of a path at body-frame azimuth `azimuth_deg` that is shadowed at time `t`, in [0, 1].
    pub fn blockage(&self, azimuth_deg: f64, t: f64) -> f64 {
        // Side-on, lateral motion mostly moves along the link: windows crowd towards the LOS.
        let (squeeze, narrow, weaken) = if self.orientation_deg.rem_euclid(180) == 90 { (0.3, 0.7, 0.8) } else { (1.0, 1.0, 1.0) };
        let total: f64 = self
            .windows(t)
            .iter()
            .map(|win| {
                let center = win.center * squeeze + self.jitter.offset_deg;
                let width = win.width * narrow * self.person_scale;
                win.depth * weaken * self.jitter.depth * lobe(azimuth_deg - center, width)
            })
            .sum();
        total.clamp(0.0, 1.0)
    }

    /// `α = 1 − b·β` for a path of sensitivity `b`.
    pub fn attenuation(&self, azimuth_deg: f64, sensitivity: f64, t: f64) -> f64 {
        1.0 - sensitivity * self.blockage(azimuth_deg, t)
    }
}

/// One room: the same geometry seen by the 60 GHz pair and the 5 GHz CSI link.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthEnvironment {
    pub beam: BeamEnvironment,
    pub patterns: BeamPatternSet,
    pub csi_paths: Vec<CsiPath>,
    pub csi_noise_variance: f64,
    /// Packets per retained CSI row.
    pub csi_decimation: usize,
}

impl SynthEnvironment {
    /// Draws room geometry from `geometry_seed`: device placement, a near-LOS pair and
    /// `reflectors` off-axis paths.
    pub fn from_spec(spec: &EnvironmentSpec, csi_decimation: usize) -> Result<Self> {
        spec.validate()?;
        if csi_decimation == 0 {
            return invalid("csi_decimation must be ≥ 1");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.geometry_seed);
        let los_tx: f64 = rng.random_range(-25.0..25.0);
        let los_rx: f64 = rng.random_range(-25.0..25.0);

        // Body-frame azimuth, rx azimuth, amplitude, sensitivity, CSI delay offset.
        let mut layout = vec![(0.0, los_rx, 1.0, 1.0, 0.0)];
        for side in [-1.0, 1.0] {
            let off: f64 = rng.random_range(5.0..8.0);
            let amp = rng.random_range(0.35..0.6);
            layout.push((side * off, los_rx - 0.5 * side * off, amp, 0.9, rng.random_range(0.5..3.0)));
        }
        for _ in 0..spec.reflectors {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let off: f64 = rng.random_range(12.0..55.0);
            layout.push((
                side * off,
                rng.random_range(-55.0..55.0),
                rng.random_range(0.15..0.6),
                rng.random_range(0.6..1.0),
                rng.random_range(5.0..60.0),
            ));
        }

        let paths = PathSet::new(
            layout
                .iter()
                .map(|&(body, rx, amplitude, b, _)| Path {
                    azimuth_tx_deg: los_tx + body,
                    azimuth_rx_deg: rx,
                    amplitude,
                    blockage_sensitivity: b,
                })
                .collect(),
        )?;
        let los_delay: f64 = rng.random_range(5.0..15.0);
        let csi_paths = layout
            .iter()
            .map(|&(body, _, amplitude, b, extra_delay)| CsiPath {
                azimuth_deg: body,
                delay_ns: los_delay + extra_delay,
                gain: Complex64::from_polar(amplitude, rng.random_range(0.0..2.0 * PI)),
                blockage_sensitivity: b,
            })
            .collect();

        Ok(Self {
            beam: BeamEnvironment::new(&spec.name, paths, spec.beam_noise_variance, spec.sweep_rate_hz, spec.beam_report_noise_db)?,
            patterns: BeamPatternSet::standard(),
            csi_paths,
            csi_noise_variance: spec.csi_noise_variance,
            csi_decimation,
        })
    }

    pub fn beam_rows(&self) -> usize {
        (GESTURE_SECONDS * self.beam.sweep_rate_hz).floor() as usize
    }

    pub fn csi_rows(&self) -> usize {
        (GESTURE_SECONDS * CSI_PACKET_RATE_HZ) as usize / self.csi_decimation
    }
}

/// Stored values are rounded to 1e-4 so text files reproduce them exactly and stay small.
fn quantize(v: f64) -> f32 {
    ((v * 1e4).round() / 1e4) as f32
}

/// Renders one gesture instance. `seed` drives only the measurement noise.
pub fn gen_gesture_sample(
    env: &SynthEnvironment,
    envelope: &GestureEnvelope,
    meta: SampleMeta,
    seed: u64,
) -> Result<TimeSeriesSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (channels, rows) = match meta.modality {
        Modality::BeamSnr => (N_SECTORS, env.beam_rows()),
        Modality::Csi => (N_SUBCARRIERS, env.csi_rows()),
    };
    let mut values = vec![0.0f32; channels * rows];
    match meta.modality {
        Modality::BeamSnr => {
            let paths = &env.beam.paths;
            let noise = Normal::new(0.0, env.beam.report_noise_db).expect("finite std");
            for i in 0..rows {
                let t = i as f64 / env.beam.sweep_rate_hz;
                let alpha: Vec<f64> = paths
                    .paths()
                    .iter()
                    .enumerate()
                    .map(|(n, p)| envelope.attenuation(paths.body_azimuth_deg(n), p.blockage_sensitivity, t))
                    .collect();
                let snr = beam_snr_eval(&env.patterns, paths, &alpha, env.beam.noise_variance)?;
                for (k, b) in snr.into_iter().enumerate() {
                    let n = if env.beam.report_noise_db > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    values[k * rows + i] = quantize(snr_db(b) + n);
                }
            }
        }
        Modality::Csi => {
            for i in 0..rows {
                let t = (i * env.csi_decimation) as f64 / CSI_PACKET_RATE_HZ;
                let alpha: Vec<f64> = env
                    .csi_paths
                    .iter()
                    .map(|p| envelope.attenuation(p.azimuth_deg, p.blockage_sensitivity, t))
                    .collect();
                let amps = csi_eval(N_SUBCARRIERS, &env.csi_paths, &alpha, env.csi_noise_variance, &mut rng)?;
                for (k, a) in amps.into_iter().enumerate() {
                    values[k * rows + i] = quantize(a);
                }
            }
        }
    }
    let values = Tensor::from_vec(&[channels, rows], values).map_err(|e| SynthError::Invalid(e.to_string()))?;
    Ok(TimeSeriesSample::new(values, meta)?)
}
