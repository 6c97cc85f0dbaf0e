//! Training, evaluation and the experiment protocols.

mod report;

pub use report::{report_write, Report};

use crate::dataio::{
    resample_linear, standardize_apply, standardize_fit, stratified_split, ChannelStats, DataError, GestureLabel,
    Modality, TimeSeriesSample,
};
use crate::model::{build_model, ModelConfig, ModelError, SavedModel};
use crate::optim::{AdamConfig, AdamState, OptimError, PlateauConfig, PlateauScheduler};
use crate::tensor::{Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("not every class is present; found {}", fmt_labels(present))]
    MissingClasses { present: Vec<GestureLabel> },
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

fn fmt_labels(labels: &[GestureLabel]) -> String {
    let names: Vec<&str> = labels.iter().map(|l| l.name()).collect();
    format!("[{}]", names.join(", "))
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ExperimentError::Config(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub plateau: PlateauConfig,
    pub seed: u64,
    pub modality: Modality,
    pub input_length: usize,
    /// Training share for protocols that split a single pool.
    pub split_ratio: f64,
}

impl TrainConfig {
    /// 150 epochs, batch 16 or 64 by modality, Adam at 3e-4, plateau patience 25.
    pub fn new(modality: Modality, seed: u64) -> Self {
        Self {
            epochs: 150,
            batch_size: modality.default_batch_size(),
            adam: AdamConfig::default(),
            plateau: PlateauConfig::default(),
            seed,
            modality,
            input_length: modality.default_input_length(),
            split_ratio: 0.75,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return config_err("epochs must be ≥ 1");
        }
        if self.batch_size == 0 {
            return config_err("batch size must be ≥ 1");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return config_err(format!("split ratio {} not in (0, 1)", self.split_ratio));
        }
        if !(self.adam.lr > 0.0) {
            return config_err(format!("learning rate {} must be positive", self.adam.lr));
        }
        ModelConfig::new(self.modality.channels(), GestureLabel::COUNT, self.input_length, self.seed).validate()?;
        Ok(())
    }
}

/// Counts with rows for the true label and columns for the prediction.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; GestureLabel::COUNT]; GestureLabel::COUNT],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, truth: GestureLabel, predicted: GestureLabel) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn count(&self, truth: GestureLabel, predicted: GestureLabel) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn counts(&self) -> &[[u64; GestureLabel::COUNT]; GestureLabel::COUNT] {
        &self.counts
    }

    pub fn row_total(&self, truth: GestureLabel) -> u64 {
        self.counts[truth.index()].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..GestureLabel::COUNT).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`; `None` for an empty matrix.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.correct() as f64 / total as f64)
    }

    /// Diagonal over row sum; `None` for classes absent from the test set.
    pub fn class_accuracy(&self, label: GestureLabel) -> Option<f64> {
        let row = self.row_total(label);
        (row > 0).then(|| self.count(label, label) as f64 / row as f64)
    }

    /// Share of `truth` samples predicted as `predicted`.
    pub fn rate(&self, truth: GestureLabel, predicted: GestureLabel) -> Option<f64> {
        let row = self.row_total(truth);
        (row > 0).then(|| self.count(truth, predicted) as f64 / row as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.counts {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub const MIRROR_PAIRS: [(GestureLabel, GestureLabel); 2] =
    [(GestureLabel::RS, GestureLabel::LS), (GestureLabel::HRL, GestureLabel::HRR)];

/// Mean confusion of each mirror-pair class with its partner, and mean over the same
/// classes of their largest confusion with any other non-partner class.
pub fn mirror_confusion(cm: &ConfusionMatrix) -> (f64, f64) {
    let mut mirror = Vec::new();
    let mut other = Vec::new();
    for (a, b) in MIRROR_PAIRS {
        for (x, partner) in [(a, b), (b, a)] {
            let Some(r) = cm.rate(x, partner) else { continue };
            mirror.push(r);
            let worst = GestureLabel::ALL
                .iter()
                .filter(|&&c| c != x && c != partner)
                .filter_map(|&c| cm.rate(x, c))
                .fold(0.0, f64::max);
            other.push(worst);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    (mean(&mirror), mean(&other))
}

/// Resamples to the model grid and standardizes.
pub fn prepare_inputs(samples: &[TimeSeriesSample], input_length: usize, stats: &ChannelStats) -> Result<Vec<Tensor<f32>>> {
    samples
        .par_iter()
        .map(|s| Ok(standardize_apply(&resample_linear(s, input_length)?, stats)?.values))
        .collect()
}

fn check_modality(samples: &[TimeSeriesSample], modality: Modality) -> Result<()> {
    if let Some(s) = samples.iter().find(|s| s.meta.modality != modality) {
        return config_err(format!("{} is {} data, expected {}", s.meta.path.display(), s.meta.modality, modality));
    }
    Ok(())
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: SavedModel,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
    /// Learning rate used during each epoch.
    pub lr_history: Vec<f64>,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fits normalization on `samples`, then runs mini-batch Adam with a plateau scheduler
/// stepped on the mean epoch loss.
pub fn train(samples: &[TimeSeriesSample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(ExperimentError::Insufficient("empty training set".into()));
    }
    check_modality(samples, config.modality)?;

    let resampled: Vec<TimeSeriesSample> =
        samples.par_iter().map(|s| resample_linear(s, config.input_length)).collect::<std::result::Result<_, _>>()?;
    let stats = standardize_fit(&resampled)?;
    let inputs: Vec<Tensor<f32>> =
        resampled.par_iter().map(|s| standardize_apply(s, &stats).map(|s| s.values)).collect::<std::result::Result<_, _>>()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.meta.label.index()).collect();

    let mut model =
        build_model(ModelConfig::new(config.modality.channels(), GestureLabel::COUNT, config.input_length, config.seed))?;
    let lens: Vec<usize> = model.parameters().iter().map(|(_, t)| t.len()).collect();
    let mut adam = AdamState::<f32>::new(config.adam, &lens)?;
    let mut scheduler = PlateauScheduler::new(config.plateau, config.adam.lr)?;
    let mut loss_history = Vec::with_capacity(config.epochs);
    let mut lr_history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(config.seed, epoch)));
        adam.lr = scheduler.lr();
        let mut epoch_loss = 0.0f64;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<(f32, Vec<Vec<f32>>)> = chunk
                .par_iter()
                .map(|&i| model.loss_and_grad(&inputs[i], labels[i]))
                .collect::<std::result::Result<_, _>>()?;
            // Fixed summation order keeps runs bit-identical regardless of thread count.
            let mut iter = results.into_iter();
            let (first_loss, mut grads) = iter.next().expect("non-empty chunk");
            let mut batch_loss = first_loss as f64;
            for (loss, g) in iter {
                batch_loss += loss as f64;
                for (acc, part) in grads.iter_mut().zip(&g) {
                    for (a, p) in acc.iter_mut().zip(part) {
                        *a += p;
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(ExperimentError::Diverged { epoch: epoch + 1, batch: batch + 1, loss: batch_loss });
            }
            let scale = 1.0 / chunk.len() as f32;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            let mut params = model.parameters_mut();
            let mut slices: Vec<&mut [f32]> = params.iter_mut().map(|(_, t)| t.data_mut()).collect();
            adam.step(&mut slices, &grads).map_err(|e| match e {
                OptimError::NonFiniteGradient { .. } => {
                    ExperimentError::Diverged { epoch: epoch + 1, batch: batch + 1, loss: f64::NAN }
                }
                other => other.into(),
            })?;
            epoch_loss += batch_loss;
        }
        let mean = epoch_loss / inputs.len() as f64;
        loss_history.push(mean);
        lr_history.push(adam.lr);
        scheduler.update(mean)?;
        log::debug!("epoch {:>3}: loss {mean:.6}, lr {:.3e}", epoch + 1, adam.lr);
    }
    log::info!("trained {} epochs on {} samples, final loss {:.6}", config.epochs, inputs.len(), loss_history.last().copied().unwrap_or(f64::NAN));
    Ok(TrainOutcome { model: SavedModel { model, input_stats: Some(stats) }, loss_history, lr_history })
}

/// Predicted class per sample; ties go to the lowest index.
pub fn predict(saved: &SavedModel, samples: &[TimeSeriesSample]) -> Result<Vec<GestureLabel>> {
    let config = saved.model.config();
    let stats = saved
        .input_stats
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("model file carries no input normalization".into()))?;
    if let Some(s) = samples.iter().find(|s| s.channels() != config.in_channels) {
        return Err(ExperimentError::Tensor(TensorError::Shape {
            op: "predict",
            detail: format!("{} has {} channels, model expects {}", s.meta.path.display(), s.channels(), config.in_channels),
        }));
    }
    samples
        .par_iter()
        .map(|s| {
            let x = standardize_apply(&resample_linear(s, config.input_length)?, stats)?.values;
            let logits = saved.model.forward_sample(&x)?;
            let best = (0..logits.len()).fold(0, |b, i| if logits.data()[i] > logits.data()[b] { i } else { b });
            GestureLabel::from_index(best)
                .ok_or_else(|| ExperimentError::Config(format!("model has {} outputs", config.n_classes)))
        })
        .collect()
}

pub fn evaluate(saved: &SavedModel, samples: &[TimeSeriesSample]) -> Result<ConfusionMatrix> {
    let predictions = predict(saved, samples)?;
    let mut cm = ConfusionMatrix::new();
    for (s, p) in samples.iter().zip(predictions) {
        cm.record(s.meta.label, p);
    }
    Ok(cm)
}

fn sample_id(s: &TimeSeriesSample) -> String {
    s.meta.path.display().to_string()
}

fn select(
    samples: &[TimeSeriesSample],
    modality: Modality,
    env: Option<&str>,
    orientation: Option<i32>,
) -> Vec<TimeSeriesSample> {
    samples
        .iter()
        .filter(|s| s.meta.modality == modality)
        .filter(|s| env.is_none_or(|e| s.meta.environment == e))
        .filter(|s| orientation.is_none_or(|o| s.meta.orientation_deg == o))
        .cloned()
        .collect::<Vec<_>>()
}

fn require_all_classes(samples: &[TimeSeriesSample]) -> Result<()> {
    let present: Vec<GestureLabel> =
        GestureLabel::ALL.into_iter().filter(|l| samples.iter().any(|s| s.meta.label == *l)).collect();
    if present.len() < GestureLabel::COUNT {
        return Err(ExperimentError::MissingClasses { present });
    }
    Ok(())
}

fn run_protocol(
    protocol: &str,
    settings: serde_json::Map<String, serde_json::Value>,
    train_set: Vec<TimeSeriesSample>,
    test_set: Vec<TimeSeriesSample>,
    config: &TrainConfig,
) -> Result<Report> {
    if train_set.is_empty() || test_set.is_empty() {
        return Err(ExperimentError::Insufficient(format!(
            "{} training and {} test samples",
            train_set.len(),
            test_set.len()
        )));
    }
    let train_ids: Vec<String> = train_set.iter().map(sample_id).collect();
    let test_ids: Vec<String> = test_set.iter().map(sample_id).collect();
    let seen: HashSet<&str> = train_ids.iter().map(String::as_str).collect();
    if let Some(id) = test_ids.iter().find(|id| seen.contains(id.as_str())) {
        return config_err(format!("sample {id} is in both the training and the test set"));
    }
    log::info!("{protocol}: {} train / {} test samples", train_set.len(), test_set.len());
    let outcome = train(&train_set, config)?;
    let confusion = evaluate(&outcome.model, &test_set)?;
    Ok(Report {
        protocol: protocol.to_string(),
        settings,
        config: *config,
        train_ids,
        test_ids,
        confusion,
        loss_history: outcome.loss_history,
        lr_history: outcome.lr_history,
        model: outcome.model,
    })
}

fn settings(pairs: &[(&str, serde_json::Value)]) -> serde_json::Map<String, serde_json::Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Stratified split of one environment (or the whole pool), train, test.
pub fn run_single_env(
    samples: &[TimeSeriesSample],
    env: Option<&str>,
    orientation: Option<i32>,
    config: &TrainConfig,
) -> Result<Report> {
    config.validate()?;
    let pool = select(samples, config.modality, env, orientation);
    if pool.is_empty() {
        return Err(ExperimentError::Insufficient(format!(
            "no {} samples for environment {} and orientation {}",
            config.modality,
            env.unwrap_or("any"),
            orientation.map_or("any".to_string(), |o| o.to_string())
        )));
    }
    require_all_classes(&pool)?;
    let labels: Vec<GestureLabel> = pool.iter().map(|s| s.meta.label).collect();
    let split = stratified_split(&labels, config.split_ratio, config.seed)?;
    let train_set = split.train.iter().map(|&i| pool[i].clone()).collect();
    let test_set = split.test.iter().map(|&i| pool[i].clone()).collect();
    run_protocol(
        "single-env",
        settings(&[("environment", env.into()), ("orientation", orientation.into())]),
        train_set,
        test_set,
        config,
    )
}

/// Train on every sample of one environment, test on every sample of another.
pub fn run_cross_domain(samples: &[TimeSeriesSample], train_env: &str, test_env: &str, config: &TrainConfig) -> Result<Report> {
    run_adaptation_inner("xenv", samples, train_env, test_env, 0, config)
}

/// Like [`run_cross_domain`], plus `k` seeded instances per gesture and person from the
/// target environment in training. Test: the rest of the target environment.
pub fn run_adaptation(
    samples: &[TimeSeriesSample],
    base_env: &str,
    adapt_env: &str,
    k: usize,
    config: &TrainConfig,
) -> Result<Report> {
    run_adaptation_inner("adapt", samples, base_env, adapt_env, k, config)
}

fn run_adaptation_inner(
    protocol: &str,
    samples: &[TimeSeriesSample],
    base_env: &str,
    adapt_env: &str,
    k: usize,
    config: &TrainConfig,
) -> Result<Report> {
    config.validate()?;
    if base_env == adapt_env {
        return config_err(format!("training and test environment are both {base_env:?}"));
    }
    let base = select(samples, config.modality, Some(base_env), None);
    let target = select(samples, config.modality, Some(adapt_env), None);
    for (name, set) in [(base_env, &base), (adapt_env, &target)] {
        if set.is_empty() {
            return Err(ExperimentError::Insufficient(format!("no {} samples in environment {name:?}", config.modality)));
        }
    }

    let mut groups: BTreeMap<(usize, &str), Vec<usize>> = BTreeMap::new();
    for (i, s) in target.iter().enumerate() {
        groups.entry((s.meta.label.index(), s.meta.person.as_str())).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xada9_7a71_0000_0000);
    let mut picked = vec![false; target.len()];
    for ((label, person), members) in &mut groups {
        if members.len() < k {
            return Err(ExperimentError::Insufficient(format!(
                "{adapt_env}: {} has {} instance(s) of {}, {k} requested",
                person,
                members.len(),
                GestureLabel::ALL[*label]
            )));
        }
        members.shuffle(&mut rng);
        for &i in &members[..k] {
            picked[i] = true;
        }
    }

    let mut train_set = base;
    let mut test_set = Vec::with_capacity(target.len());
    for (s, p) in target.into_iter().zip(&picked) {
        if *p {
            train_set.push(s);
        } else {
            test_set.push(s);
        }
    }
    let mut pairs = vec![("train_env", base_env.into()), ("test_env", adapt_env.into())];
    if protocol == "adapt" {
        pairs.push(("k_per_gesture", k.into()));
    }
    run_protocol(protocol, settings(&pairs), train_set, test_set, config)
}

/// Orientation selection for [`run_orientation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrientationSel {
    Degrees(i32),
    Both,
}

impl OrientationSel {
    fn filter(self) -> Option<i32> {
        match self {
            Self::Degrees(d) => Some(d),
            Self::Both => None,
        }
    }
}

impl std::str::FromStr for OrientationSel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("both") {
            return Ok(Self::Both);
        }
        s.parse::<i32>().map(Self::Degrees).map_err(|_| format!("orientation {s:?} is not a number or \"both\""))
    }
}

impl std::fmt::Display for OrientationSel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Degrees(d) => write!(f, "{d}"),
            Self::Both => f.write_str("both"),
        }
    }
}

/// Train on one orientation, test on another. When both selections are equal the
/// selected pool is split like [`run_single_env`].
pub fn run_orientation(
    samples: &[TimeSeriesSample],
    train_orientation: OrientationSel,
    test_orientation: OrientationSel,
    env: Option<&str>,
    config: &TrainConfig,
) -> Result<Report> {
    config.validate()?;
    let pairs = [
        ("train_orientation", train_orientation.to_string().into()),
        ("test_orientation", test_orientation.to_string().into()),
        ("environment", env.into()),
    ];
    let pool_for = |sel: OrientationSel| -> Result<Vec<TimeSeriesSample>> {
        let pool = select(samples, config.modality, env, sel.filter());
        if pool.is_empty() {
            return Err(ExperimentError::Insufficient(format!("no {} samples at orientation {sel}", config.modality)));
        }
        Ok(pool)
    };
    if train_orientation == test_orientation {
        let pool = pool_for(train_orientation)?;
        let labels: Vec<GestureLabel> = pool.iter().map(|s| s.meta.label).collect();
        let split = stratified_split(&labels, config.split_ratio, config.seed)?;
        let train_set = split.train.iter().map(|&i| pool[i].clone()).collect();
        let test_set = split.test.iter().map(|&i| pool[i].clone()).collect();
        return run_protocol("orient", settings(&pairs), train_set, test_set, config);
    }
    if train_orientation == OrientationSel::Both || test_orientation == OrientationSel::Both {
        return config_err("\"both\" overlaps any single orientation; use it on both sides");
    }
    run_protocol("orient", settings(&pairs), pool_for(train_orientation)?, pool_for(test_orientation)?, config)
}

#[cfg(test)]
mod tests;
