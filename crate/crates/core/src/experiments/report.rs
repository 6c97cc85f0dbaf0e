use super::{ConfusionMatrix, ExperimentError, Result, TrainConfig};
use crate::dataio::GestureLabel;
use crate::model::{save_saved, SavedModel};
use std::fmt::Write as _;
use std::path::Path;

/// Everything one protocol run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub protocol: String,
    /// Protocol arguments, echoed to `config.json`.
    pub settings: serde_json::Map<String, serde_json::Value>,
    pub config: TrainConfig,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub loss_history: Vec<f64>,
    pub lr_history: Vec<f64>,
    pub model: SavedModel,
}

fn ratio(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"))
}

impl Report {
    pub fn accuracy(&self) -> Option<f64> {
        self.confusion.accuracy()
    }

    /// Plain-text summary.
    pub fn summary(&self) -> String {
        let cm = &self.confusion;
        let mut out = String::new();
        let _ = writeln!(out, "protocol: {}", self.protocol);
        for (k, v) in &self.settings {
            let _ = writeln!(out, "{k}: {}", if let Some(s) = v.as_str() { s.to_string() } else { v.to_string() });
        }
        let _ = writeln!(out, "modality: {}", self.config.modality);
        let _ = writeln!(out, "seed: {}", self.config.seed);
        let _ = writeln!(out, "train samples: {}", self.train_ids.len());
        let _ = writeln!(out, "test samples: {}", self.test_ids.len());
        let _ = writeln!(out, "overall accuracy: {} ({}/{})", ratio(cm.accuracy()), cm.correct(), cm.total());
        let _ = writeln!(out, "per-class accuracy:");
        for l in GestureLabel::ALL {
            let _ = writeln!(out, "  {:<4} {} ({}/{})", l.name(), ratio(cm.class_accuracy(l)), cm.count(l, l), cm.row_total(l));
        }
        let _ = writeln!(
            out,
            "training: {} epochs, batch {}, lr {}, input length {}",
            self.config.epochs, self.config.batch_size, self.config.adam.lr, self.config.input_length
        );
        if let (Some(first), Some(last)) = (self.loss_history.first(), self.loss_history.last()) {
            let _ = writeln!(out, "loss: {first:.6} -> {last:.6}");
        }
        out
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,loss,lr\n");
        for (i, (loss, lr)) in self.loss_history.iter().zip(&self.lr_history).enumerate() {
            let _ = writeln!(out, "{},{loss},{lr}", i + 1);
        }
        out
    }

    /// Every effective setting of the run.
    pub fn config_json(&self) -> serde_json::Value {
        serde_json::json!({
            "protocol": self.protocol,
            "settings": self.settings,
            "train": self.config,
        })
    }
}

/// Writes `report.txt`, `confusion.csv`, `loss.csv`, `model.bin` and `config.json`.
pub fn report_write(report: &Report, out_dir: &Path) -> Result<()> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let mut config = serde_json::to_string_pretty(&report.config_json()).expect("serializable");
    config.push('\n');
    for (name, text) in [
        ("report.txt", report.summary()),
        ("confusion.csv", report.confusion.to_csv()),
        ("loss.csv", report.loss_csv()),
        ("config.json", config),
    ] {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(io(&path))?;
    }
    save_saved(&report.model, &out_dir.join("model.bin"))?;
    Ok(())
}
