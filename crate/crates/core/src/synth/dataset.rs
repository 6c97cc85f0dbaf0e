use super::{gen_gesture_sample, invalid, GestureEnvelope, Jitter, Result, SynthEnvironment, SynthError};
use crate::dataio::{write_manifest, write_sample, GestureLabel, Modality, SampleMeta, TimeSeriesSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const PRESET_NAMES: [&str; 3] = ["single-env", "two-env", "two-orientation"];

const PRESET_SINGLE_ENV: &str = include_str!("../../presets/single-env.json");
const PRESET_TWO_ENV: &str = include_str!("../../presets/two-env.json");
const PRESET_TWO_ORIENTATION: &str = include_str!("../../presets/two-orientation.json");

fn all_labels() -> Vec<GestureLabel> {
    GestureLabel::ALL.to_vec()
}

fn default_decimation() -> usize {
    50
}

fn default_reflectors() -> usize {
    4
}

/// One room with the people and orientations recorded in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub name: String,
    pub geometry_seed: u64,
    pub persons: Vec<String>,
    pub orientations: Vec<i32>,
    pub sweep_rate_hz: f64,
    pub beam_noise_variance: f64,
    pub beam_report_noise_db: f64,
    pub csi_noise_variance: f64,
    #[serde(default = "default_reflectors")]
    pub reflectors: usize,
}

impl EnvironmentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return invalid(format!("environment name {:?} is not a plain identifier", self.name));
        }
        if self.persons.is_empty() || self.orientations.is_empty() {
            return invalid(format!("environment {} needs at least one person and orientation", self.name));
        }
        if let Some(o) = self.orientations.iter().find(|o| **o != 0 && **o != 90) {
            return invalid(format!("orientation {o} is not 0 or 90"));
        }
        Ok(())
    }
}

/// Declarative generator input, stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    #[serde(default = "all_labels")]
    pub labels: Vec<GestureLabel>,
    pub modalities: Vec<Modality>,
    /// Per label, person, orientation and environment.
    pub instances_per_label: usize,
    #[serde(default = "default_decimation")]
    pub csi_decimation: usize,
    pub environments: Vec<EnvironmentSpec>,
}

impl SynthConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| SynthError::Invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances_per_label == 0 {
            return invalid("instances_per_label must be ≥ 1");
        }
        if self.labels.is_empty() || self.modalities.is_empty() || self.environments.is_empty() {
            return invalid("labels, modalities and environments must be non-empty");
        }
        if self.csi_decimation == 0 {
            return invalid("csi_decimation must be ≥ 1");
        }
        for (i, e) in self.environments.iter().enumerate() {
            e.validate()?;
            if self.environments[..i].iter().any(|o| o.name == e.name) {
                return invalid(format!("duplicate environment {}", e.name));
            }
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        let per_env: usize = self.environments.iter().map(|e| e.persons.len() * e.orientations.len()).sum();
        per_env * self.labels.len() * self.instances_per_label * self.modalities.len()
    }
}

/// A bundled generator configuration by name.
pub fn preset(name: &str) -> Result<SynthConfig> {
    let text = match name {
        "single-env" => PRESET_SINGLE_ENV,
        "two-env" => PRESET_TWO_ENV,
        "two-orientation" => PRESET_TWO_ORIENTATION,
        _ => return invalid(format!("unknown preset {name:?} (expected one of {})", PRESET_NAMES.join(", "))),
    };
    SynthConfig::from_json(text)
}

fn derive_seed(base: u64, key: &str) -> u64 {
    let h = key.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3));
    let mut z = base ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn person_scale(seed: u64, env: &str, person: &str) -> f64 {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("person/{env}/{person}"))).random_range(0.9..1.1)
}

struct Task<'a> {
    env: &'a SynthEnvironment,
    envelope: GestureEnvelope,
    meta: SampleMeta,
    noise_seed: u64,
}

/// Generates every sample of `config` in memory. Paths in the metadata are relative to
/// the dataset root.
pub fn generate(config: &SynthConfig) -> Result<Vec<TimeSeriesSample>> {
    config.validate()?;
    let envs: Vec<SynthEnvironment> = config
        .environments
        .iter()
        .map(|e| SynthEnvironment::from_spec(e, config.csi_decimation))
        .collect::<Result<_>>()?;

    let mut tasks = Vec::with_capacity(config.sample_count());
    for (spec, env) in config.environments.iter().zip(&envs) {
        for person in &spec.persons {
            let scale = person_scale(config.seed, &spec.name, person);
            for &orientation in &spec.orientations {
                for &label in &config.labels {
                    for idx in 0..config.instances_per_label {
                        let session = format!("{}-{person}-o{orientation}-{label}-{idx:03}", spec.name);
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("jitter/{session}")));
                        let envelope = GestureEnvelope {
                            label,
                            person_scale: scale,
                            orientation_deg: orientation,
                            jitter: Jitter::sample(&mut rng),
                        };
                        for &modality in &config.modalities {
                            let path = format!(
                                "samples/{}/{}/{label}_{person}_o{orientation}_{idx:03}.csv",
                                spec.name,
                                modality.name()
                            );
                            tasks.push(Task {
                                env,
                                envelope,
                                meta: SampleMeta {
                                    path: path.into(),
                                    label,
                                    person: person.clone(),
                                    environment: spec.name.clone(),
                                    orientation_deg: orientation,
                                    modality,
                                    session: session.clone(),
                                },
                                noise_seed: derive_seed(config.seed, &format!("noise/{}/{session}", modality.name())),
                            });
                        }
                    }
                }
            }
        }
    }
    tasks
        .into_par_iter()
        .map(|t| gen_gesture_sample(t.env, &t.envelope, t.meta, t.noise_seed))
        .collect()
}

/// Writes `manifest.jsonl`, `synth-config.json` and the sample files under `out_dir`.
/// Returns the manifest records with paths resolved against `out_dir`.
pub fn gen_dataset(config: &SynthConfig, out_dir: &Path) -> Result<Vec<SampleMeta>> {
    let samples = generate(config)?;
    let io = |p: &Path, e: std::io::Error| SynthError::Data(crate::dataio::DataError::Io { path: p.to_path_buf(), source: e });
    for dir in samples.iter().filter_map(|s| s.meta.path.parent()).collect::<std::collections::BTreeSet<_>>() {
        let full = out_dir.join(dir);
        std::fs::create_dir_all(&full).map_err(|e| io(&full, e))?;
    }
    samples.par_iter().try_for_each(|s| write_sample(&out_dir.join(&s.meta.path), &s.values))?;

    let relative: Vec<SampleMeta> = samples.iter().map(|s| s.meta.clone()).collect();
    write_manifest(&out_dir.join("manifest.jsonl"), &relative)?;
    let config_path = out_dir.join("synth-config.json");
    let mut text = serde_json::to_string_pretty(config).map_err(|e| SynthError::Invalid(e.to_string()))?;
    text.push('\n');
    std::fs::write(&config_path, text).map_err(|e| io(&config_path, e))?;
    log::info!("wrote {} samples to {}", samples.len(), out_dir.display());

    Ok(relative
        .into_iter()
        .map(|mut m| {
            m.path = out_dir.join(&m.path);
            m
        })
        .collect())
}
