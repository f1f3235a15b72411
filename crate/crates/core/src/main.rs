use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use nuclei_core::augment::{CollisionPolicy, JitterParams};
use nuclei_core::cost::CostRule;
use nuclei_core::io;
use nuclei_core::pipeline::{self, DemoParams, PipelineConfig};
use nuclei_core::postprocess::PostprocessParams;
use nuclei_core::stain::StainProfile;
use nuclei_core::{Error, ErrorKind, Result};

/// Nuclei segmentation toolkit: targets, post-processing, evaluation,
/// augmentation, stain normalization and cost matrices.
#[derive(Parser, Debug)]
#[command(name = "nuclei", version)]
struct Cli {
    /// Pipeline config JSON; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: config value or 1).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write NP and HoVer targets for every `<stem>.inst.png` in a directory.
    Targets {
        #[arg(long)]
        in_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Turn NP, HoVer and NC grid files into instance and class maps.
    Postprocess {
        #[arg(long)]
        np: PathBuf,
        #[arg(long)]
        hover: PathBuf,
        #[arg(long)]
        nc: PathBuf,
        #[arg(long)]
        out_instances: PathBuf,
        #[arg(long)]
        out_classes: PathBuf,
        #[command(flatten)]
        params: PostprocessArgs,
    },
    /// PQ, mPQ+ and r² of a prediction directory against ground truth.
    Evaluate {
        #[arg(long)]
        pred_dir: Option<PathBuf>,
        #[arg(long)]
        gt_dir: Option<PathBuf>,
        /// JSON report path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate jittered pseudo ground truth.
    Augment {
        #[arg(long)]
        in_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_translation: Option<u32>,
        #[arg(long)]
        max_rotation: Option<f64>,
        /// reject-retry or keep-earlier
        #[arg(long)]
        collision: Option<CollisionPolicy>,
    },
    /// Restain every PNG tile in a directory to a template profile.
    Normalize {
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        in_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Cost matrix from class counts (pla,neu,epi,lym,eos,con).
    CostMatrix {
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        counts: Vec<u64>,
        /// max-ratio or uniform
        #[arg(long)]
        rule: Option<CostRule>,
        /// CSV path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the stain profile of an RGB tile.
    EstimateProfile {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic end-to-end run producing a full artifact bundle.
    Demo {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        scenes: usize,
    },
}

#[derive(Args, Debug)]
struct PostprocessArgs {
    #[arg(long)]
    np_threshold: Option<f32>,
    #[arg(long)]
    marker_threshold: Option<f32>,
    #[arg(long)]
    min_area: Option<usize>,
}

impl PostprocessArgs {
    fn apply(&self, mut p: PostprocessParams) -> PostprocessParams {
        if let Some(t) = self.np_threshold {
            p.np_threshold = t;
        }
        if let Some(t) = self.marker_threshold {
            p.marker_threshold = t;
        }
        if let Some(a) = self.min_area {
            p.min_instance_area = a;
        }
        p
    }
}

fn pick(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| Error::InvalidParameter(format!("--{name} is required")))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => io::write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let workers = cli.workers.unwrap_or(config.workers);
    let paths = config.paths.clone();
    pipeline::with_workers(workers, move || match cli.command {
        Command::Targets { in_dir, out_dir } => {
            let in_dir = pick(in_dir, &paths.masks, "in-dir")?;
            let out_dir = pick(out_dir, &paths.output, "out-dir")?;
            let stems = pipeline::run_targets(&in_dir, &out_dir)?;
            info!("{} target set(s) written", stems.len());
            Ok(())
        }
        Command::Postprocess {
            np,
            hover,
            nc,
            out_instances,
            out_classes,
            params,
        } => {
            let params = params.apply(config.postprocess);
            let out = pipeline::run_postprocess(&np, &hover, &nc, &params)?;
            io::write_instance_map(&out_instances, &out.instances)?;
            io::write_class_map(&out_classes, &out.classes)
        }
        Command::Evaluate {
            pred_dir,
            gt_dir,
            out,
            csv,
        } => {
            let pred_dir = pick(pred_dir, &paths.predictions, "pred-dir")?;
            let gt_dir = pick(gt_dir, &paths.masks, "gt-dir")?;
            let report = pipeline::run_evaluate(&pred_dir, &gt_dir)?;
            emit(out.as_deref(), &pipeline::to_json(&report))?;
            if let Some(csv) = csv {
                io::write_text(&csv, &nuclei_core::metrics::report_to_csv(&report))?;
            }
            Ok(())
        }
        Command::Augment {
            in_dir,
            out_dir,
            count,
            seed,
            max_translation,
            max_rotation,
            collision,
        } => {
            let in_dir = pick(in_dir, &paths.masks, "in-dir")?;
            let out_dir = pick(out_dir, &paths.output, "out-dir")?;
            let base = config.jitter;
            let params = JitterParams {
                seed: seed.unwrap_or(base.seed),
                max_translation: max_translation.unwrap_or(base.max_translation),
                max_rotation: max_rotation.unwrap_or(base.max_rotation),
                collision_policy: collision.unwrap_or(base.collision_policy),
            };
            let summary = pipeline::run_augment(&in_dir, &out_dir, count, &params)?;
            info!("generated {} pair(s)", summary.n_generated);
            Ok(())
        }
        Command::Normalize {
            template,
            in_dir,
            out_dir,
        } => {
            let template = pick(template, &paths.template, "template")?;
            let in_dir = pick(in_dir, &paths.images, "in-dir")?;
            let out_dir = pick(out_dir, &paths.output, "out-dir")?;
            let text = io::read_text(&template)?;
            let profile: StainProfile =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", template.display())))?;
            let summary = pipeline::run_normalize(&profile, &in_dir, &out_dir)?;
            info!(
                "normalized {}, passed through {}",
                summary.normalized.len(),
                summary.passed_through.len()
            );
            Ok(())
        }
        Command::CostMatrix { counts, rule, out } => {
            let m = pipeline::run_cost_matrix(&counts, rule.unwrap_or(config.cost_rule))?;
            emit(out.as_deref(), &m.to_csv(&pipeline::report_order_names(&config.class_names)))
        }
        Command::EstimateProfile { input, out } => {
            let profile = pipeline::run_estimate_profile(&input)?;
            emit(out.as_deref(), &pipeline::to_json(&profile))
        }
        Command::Demo {
            seed,
            out_dir,
            scenes,
        } => {
            let out_dir = pick(out_dir, &paths.output, "out-dir")?;
            let params = DemoParams {
                seed,
                n_scenes: scenes,
                ..DemoParams::default()
            };
            let summary = pipeline::run_demo(&params, &out_dir)?;
            print!("{}", pipeline::to_json(&summary));
            Ok(())
        }
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Validation => 1,
                ErrorKind::Io => 2,
            })
        }
    }
}
