//! The four-row comparison: a baseline trained without depth and one network
//! per reprojection variant, all on one dataset from one initialization seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::nn::checkpoint::save_checkpoint;
use crate::nn::train::metrics_csv;
use crate::nn::{evaluate, train, EpochMetrics, LossConfig, NetworkConfig, NnError, TrainConfig};
use crate::reprojection::ReprojectionVariant;
use crate::synth::{generate_dataset, Dataset, SynthConfig, SynthError};

#[derive(thiserror::Error, Debug)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    /// Variant used by single-run commands; the experiment trains all three.
    pub variant: ReprojectionVariant,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub network: NetworkConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            variant: ReprojectionVariant::PointsAndLines,
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            network: NetworkConfig::default(),
            output_dir: PathBuf::from("experiment"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.synth.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.network.validate()?;
        let [w, h] = self.synth.image_size;
        if (w as usize, h as usize) != (self.network.input_width, self.network.input_height) {
            return Err(ExperimentError::Config(format!(
                "network input {}x{} does not match image size {w}x{h}",
                self.network.input_width, self.network.input_height
            )));
        }
        Ok(())
    }

    /// Sets the dataset and training seeds together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.train.seed = seed;
        self
    }
}

/// Row of the report. `None` is the baseline without depth supervision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Row(pub Option<ReprojectionVariant>);

impl Row {
    /// Report order: baseline, lines, points, points+lines.
    pub const ALL: [Row; 4] = [
        Row(None),
        Row(Some(ReprojectionVariant::Lines)),
        Row(Some(ReprojectionVariant::Points)),
        Row(Some(ReprojectionVariant::PointsAndLines)),
    ];

    pub fn name(self) -> &'static str {
        self.0.map_or("baseline", ReprojectionVariant::name)
    }

    fn dir_name(self) -> &'static str {
        match self.0 {
            None => "baseline",
            Some(ReprojectionVariant::Lines) => "lines",
            Some(ReprojectionVariant::Points) => "points",
            Some(ReprojectionVariant::PointsAndLines) => "points_and_lines",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub variant: String,
    pub image_accuracy: f64,
    pub sequence_accuracy: f64,
    pub epochs: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub rows: Vec<RowResult>,
    pub config: ExperimentConfig,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    pub fn row(&self, name: &str) -> Option<&RowResult> {
        self.rows.iter().find(|r| r.variant == name)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<14} {:>9} {:>9}\n", "variant", "image", "sequence");
        for r in &self.rows {
            out += &format!(
                "{:<14} {:>8.2}% {:>8.2}%\n",
                r.variant,
                100.0 * r.image_accuracy,
                100.0 * r.sequence_accuracy
            );
        }
        out
    }
}

/// Trains one row. The baseline drops the depth branch, which trains
/// identically to a zero depth-loss weight.
pub fn train_row(
    config: &ExperimentConfig,
    data: &Dataset,
    row: Row,
) -> Result<(crate::nn::Network, Vec<EpochMetrics>, RowResult), ExperimentError> {
    let (net_cfg, loss, data) = match row.0 {
        None => (
            config.network.without_aux(),
            LossConfig {
                lambda_aux: 0.0,
                ..config.loss
            },
            data.clone(),
        ),
        Some(v) => (config.network.clone(), config.loss, data.with_variant(v)?),
    };
    let (train_set, test_set) = data.labeled();
    let (net, metrics) = train(&net_cfg, &train_set, None, &loss, &config.train)?;
    let eval = evaluate(&net, &test_set)?;
    let result = RowResult {
        variant: row.name().to_string(),
        image_accuracy: eval.image_accuracy,
        sequence_accuracy: eval.sequence_accuracy,
        epochs: metrics.len(),
        final_loss: metrics.last().map_or(f64::NAN, |m| m.loss),
    };
    Ok((net, metrics, result))
}

/// Runs all four rows and writes `report.json` plus one directory per row
/// with `checkpoint.spn` and `metrics.csv` under `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    config.validate()?;
    let start = Instant::now();
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let data = generate_dataset(&config.synth)?;

    let results = crate::parallel_chunks(&Row::ALL, |rows| {
        rows.iter()
            .map(|&row| {
                let (net, metrics, result) = train_row(config, &data, row)?;
                let dir = out.join(row.dir_name());
                fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                save_checkpoint(&net, &dir.join("checkpoint.spn"))?;
                let mp = dir.join("metrics.csv");
                fs::write(&mp, metrics_csv(&metrics)).map_err(io_err(&mp))?;
                Ok(result)
            })
            .collect::<Result<Vec<_>, ExperimentError>>()
    });
    let mut rows = Vec::with_capacity(4);
    for r in results {
        rows.extend(r?);
    }
    let report = ExperimentReport {
        seed: config.train.seed,
        rows,
        config: config.clone(),
        train_sequences: data.train.len(),
        test_sequences: data.test.len(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    let rp = out.join("report.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&rp, text + "\n").map_err(io_err(&rp))?;
    Ok(report)
}
