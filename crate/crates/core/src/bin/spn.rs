//! Command-line wrapper around the `spn` library.
//!
//! Exit codes: 0 on success, 1 when the library reports an error, 2 on usage
//! errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use spn::alignment::{align_to_world, AlignOptions, ScaleReference};
use spn::context::{
    dominant_angle_hough_weighted, estimate_direction_range, filter_direction_matches,
    filter_static_matches, read_matches_csv, read_segments_csv, write_matches_csv, AngleRangeDeg,
    HoughWeighting,
};
use spn::experiment::{run_experiment, ExperimentConfig, Row};
use spn::nn::checkpoint::{load_checkpoint, save_checkpoint};
use spn::nn::evaluate;
use spn::nn::train::metrics_csv;
use spn::reprojection::{reproject, write_depth_map, write_depth_preview, ReprojectionVariant};
use spn::scene::SceneBundle;
use spn::synth::{generate_dataset, read_split, write_dataset, Dataset, SynthConfig};

type AnyError = Box<dyn std::error::Error>;

#[derive(Parser)]
#[command(
    name = "spn",
    version,
    about = "Sparse depth priors for vehicle classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for every random choice of the command.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON config; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sequences_per_class: Option<usize>,
        #[arg(long)]
        imbalanced: bool,
    },
    /// Drop static matches and matches moving against the traffic direction.
    FilterMatches {
        #[command(flatten)]
        common: Common,
        /// CSV with header ua,va,ub,vb.
        #[arg(long)]
        matches: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Minimum displacement in pixels.
        #[arg(long)]
        min_disp: Option<f64>,
        /// Valid direction range `start:end` in degrees, e.g. 320:20.
        #[arg(long, conflicts_with = "auto_range")]
        range: Option<AngleRangeDeg>,
        /// Derive the range from the dominant line orientation of --segments,
        /// widened by this many degrees on both sides.
        #[arg(long, value_name = "HALF_WIDTH_DEG", requires = "segments")]
        auto_range: Option<f64>,
        /// CSV of line segments for --auto-range.
        #[arg(long)]
        segments: Option<PathBuf>,
    },
    /// Dominant line orientation of a segment list.
    EstimateDirection {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        segments: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        bin_width: f64,
        /// Count segments instead of weighting them by length.
        #[arg(long)]
        unweighted: bool,
    },
    /// Bring a reconstruction into the common world frame.
    Align {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scale so that the reference line has unit length.
        #[arg(long)]
        line_length: bool,
    },
    /// Render an aligned scene into a sparse depth map.
    Reproject {
        #[command(flatten)]
        common: Common,
        /// Aligned scene directory, as written by `align`.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value = "both")]
        variant: ReprojectionVariant,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        png_preview: Option<PathBuf>,
    },
    /// Train one network on a dataset directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset root written by `synth`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train without depth supervision.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run the baseline / lines / points / points+lines comparison.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, AnyError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?)
        }
    }
}

#[derive(Deserialize)]
#[serde(default)]
struct FilterConfig {
    min_displacement_px: f64,
    valid_range: String,
    bin_width_deg: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_displacement_px: 50.0,
            valid_range: "320:20".into(),
            bin_width_deg: 1.0,
        }
    }
}

fn experiment_config(common: &Common) -> Result<ExperimentConfig, AnyError> {
    let mut cfg: ExperimentConfig = read_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn run(command: Command) -> Result<(), AnyError> {
    match command {
        Command::Synth {
            common,
            out,
            sequences_per_class,
            imbalanced,
        } => {
            let mut cfg: SynthConfig = read_config(common.config.as_deref())?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            cfg.sequences_per_class = sequences_per_class.unwrap_or(cfg.sequences_per_class);
            cfg.imbalanced |= imbalanced;
            let data = generate_dataset(&cfg)?;
            write_dataset(&out, &cfg, &data)?;
            println!(
                "wrote {} train and {} test sequences to {}",
                data.train.len(),
                data.test.len(),
                out.display()
            );
        }
        Command::FilterMatches {
            common,
            matches,
            out,
            min_disp,
            range,
            auto_range,
            segments,
        } => {
            let cfg: FilterConfig = read_config(common.config.as_deref())?;
            let all = read_matches_csv(&matches)?;
            let moved = filter_static_matches(&all, min_disp.unwrap_or(cfg.min_displacement_px))?;
            let range = match (range, auto_range, segments) {
                (Some(r), _, _) => r,
                (None, Some(half_width), Some(seg)) => estimate_direction_range(
                    &read_segments_csv(&seg)?,
                    &moved,
                    cfg.bin_width_deg,
                    half_width,
                )?,
                _ => cfg.valid_range.parse()?,
            };
            let kept = filter_direction_matches(&moved, &range)?;
            write_matches_csv(&out, &kept)?;
            println!(
                "kept {} of {} matches (range {}:{})",
                kept.len(),
                all.len(),
                range.start_deg(),
                range.end_deg()
            );
        }
        Command::EstimateDirection {
            common,
            segments,
            bin_width,
            unweighted,
        } => {
            let cfg: FilterConfig = read_config(common.config.as_deref())?;
            let bin = if common.config.is_some() {
                cfg.bin_width_deg
            } else {
                bin_width
            };
            let weighting = if unweighted {
                HoughWeighting::Unweighted
            } else {
                HoughWeighting::Length
            };
            let angle =
                dominant_angle_hough_weighted(&read_segments_csv(&segments)?, bin, weighting)?;
            println!("{angle}");
        }
        Command::Align {
            common,
            scene,
            out,
            line_length,
        } => {
            let mut opts: AlignOptions = read_config(common.config.as_deref())?;
            if line_length {
                opts.scale_reference = ScaleReference::LineLength;
            }
            let bundle = SceneBundle::read_dir(&scene)?;
            let aligned = align_to_world(&bundle.model, &bundle.cameras, &bundle.refline, &opts)?;
            SceneBundle {
                cameras: aligned.cameras,
                model: aligned.model,
                refline: bundle.refline,
            }
            .write_dir(&out)?;
            println!("scale {} (d1c = {})", aligned.scale, aligned.solution.d1c);
        }
        Command::Reproject {
            common: _,
            scene,
            variant,
            frame,
            out,
            png_preview,
        } => {
            let bundle = SceneBundle::read_dir(&scene)?;
            let camera = bundle.cameras.get(frame).ok_or_else(|| {
                format!(
                    "frame {frame} out of range ({} cameras)",
                    bundle.cameras.len()
                )
            })?;
            let map = reproject(&bundle.model, camera, variant)?;
            write_depth_map(&map, &out)?;
            if let Some(p) = png_preview {
                write_depth_preview(&map, &p)?;
            }
            println!("{} valid pixels", map.valid_count());
        }
        Command::Train {
            common,
            data,
            out,
            baseline,
            epochs,
        } => {
            let mut cfg = experiment_config(&common)?;
            cfg.train.max_epochs = epochs.unwrap_or(cfg.train.max_epochs);
            cfg.validate()?;
            let dataset = Dataset {
                train: read_split(&data, "train")?,
                test: Vec::new(),
            };
            let row = if baseline {
                Row(None)
            } else {
                Row(Some(cfg.variant))
            };
            let (net, metrics) = train_loaded(&cfg, &dataset, row)?;
            fs::create_dir_all(&out)?;
            save_checkpoint(&net, &out.join("checkpoint.spn"))?;
            fs::write(out.join("metrics.csv"), metrics_csv(&metrics))?;
            println!(
                "trained {} epochs, final loss {}",
                metrics.len(),
                metrics.last().map_or(f64::NAN, |m| m.loss)
            );
        }
        Command::Eval {
            common: _,
            data,
            checkpoint,
            split,
        } => {
            let net = load_checkpoint(&checkpoint)?;
            let samples: Vec<_> = read_split(&data, &split)?
                .iter()
                .map(|s| s.to_labeled())
                .collect();
            let eval = evaluate(&net, &samples)?;
            println!("{}", serde_json::to_string_pretty(&eval)?);
        }
        Command::Experiment {
            common,
            out,
            epochs,
        } => {
            let mut cfg = experiment_config(&common)?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            cfg.train.max_epochs = epochs.unwrap_or(cfg.train.max_epochs);
            let report = run_experiment(&cfg)?;
            print!("{}", report.to_table());
            println!("report: {}", cfg.output_dir.join("report.json").display());
        }
    }
    Ok(())
}

/// Training on samples read from disk, whose depth maps already hold the
/// variant they were generated with.
fn train_loaded(
    cfg: &ExperimentConfig,
    data: &Dataset,
    row: Row,
) -> Result<(spn::nn::Network, Vec<spn::nn::EpochMetrics>), AnyError> {
    let (net_cfg, loss) = match row.0 {
        None => (
            cfg.network.without_aux(),
            spn::nn::LossConfig {
                lambda_aux: 0.0,
                ..cfg.loss
            },
        ),
        Some(_) => (cfg.network.clone(), cfg.loss),
    };
    let (train_set, _) = data.labeled();
    Ok(spn::nn::train(
        &net_cfg, &train_set, None, &loss, &cfg.train,
    )?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
