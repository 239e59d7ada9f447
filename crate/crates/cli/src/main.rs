//! `pad`: command-line driver for the presentation attack detection
//! pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pad_core::cache::Stage;
use pad_core::config::RunConfig;
use pad_core::eval::report::{check_same_digest, from_json, render_csv, render_json, render_text, to_json};
use pad_core::eval::{render, EvalReport, ReportFormat};
use pad_core::model::{DatasetManifest, DevSource, ProtocolMode, ProtocolSpec, Split};
use pad_core::pipeline::{export_maps, load_models, save_models, Pipeline};
use pad_core::synth::{generate_synthetic_dataset, SynthSpec};
use pad_core::{PadError, Result};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "pad", version, about = "Face presentation attack detection from intrinsic image property maps")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Treat recoverable data problems (unknown manifest keys, mis-sized
    /// depth maps) as errors.
    #[arg(long, global = true)]
    strict: bool,
    /// Recompute cached stages; let `report` merge differing configs.
    #[arg(long, global = true)]
    force: bool,
    /// Report rendering.
    #[arg(long, global = true, value_enum, default_value = "text")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Text => ReportFormat::Text,
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Intra,
    Inter,
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct ProtocolArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Protocol mode; `intra` on a single-dataset config needs no
    /// [protocol] table.
    #[arg(long, value_enum)]
    protocol: Option<Mode>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample frames from every manifest entry.
    ExtractFrames(ConfigArg),
    /// Align frames to the canonical eye positions.
    Align(ConfigArg),
    /// Estimate depth, illuminant and saliency maps.
    ComputeMaps {
        #[command(flatten)]
        config: ConfigArg,
        /// Also write the maps (PFM, illuminant PNG) under this directory.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Extract per-map feature vectors.
    ExtractFeatures(ConfigArg),
    /// Train the per-property and fusion classifiers.
    Train(ProtocolArgs),
    /// Score the test split and write reports (trains first if no matching
    /// models exist).
    Evaluate(ProtocolArgs),
    /// Render saved JSON reports together.
    Report {
        /// Report JSON files.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Generate a synthetic dataset with a ready-to-run config.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        subjects: usize,
        #[arg(long, default_value_t = 4)]
        videos: usize,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value_t = 0.5)]
        attack_fraction: f64,
    },
}

fn load_config(path: &Path, cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn pipeline(cfg: RunConfig, cli: &Cli) -> Result<Pipeline> {
    Pipeline::new(cfg, cli.strict, cli.force, cli.jobs)
}

fn run_stage(args: &ConfigArg, cli: &Cli, stage: Stage) -> Result<Pipeline> {
    let p = pipeline(load_config(&args.config, cli)?, cli)?;
    let manifests = p.load_manifests()?;
    let s = p.run_stage(&manifests, stage)?;
    println!(
        "{}: {} samples, {} frames ({} cached)",
        stage.name(),
        s.samples,
        s.frames,
        s.cached
    );
    Ok(p)
}

/// Applies `--protocol`. A single-dataset config without a [protocol] table
/// gets an intra protocol using the dev split when present, else 5 folds.
fn apply_protocol(cfg: &mut RunConfig, manifests: &[DatasetManifest], mode: Option<Mode>) -> Result<()> {
    let Some(mode) = mode else {
        return Ok(());
    };
    let wanted = match mode {
        Mode::Intra => ProtocolMode::Intra,
        Mode::Inter => ProtocolMode::Inter,
    };
    match &cfg.protocol {
        Some(p) if p.mode == wanted => Ok(()),
        Some(p) => Err(PadError::Config(format!(
            "--protocol {mode:?} conflicts with the configured protocol ({})",
            p.summary()
        ))),
        None => match (wanted, manifests) {
            (ProtocolMode::Intra, [m]) => {
                let dev = if m.has_split(Split::Dev) {
                    DevSource::DevSplit
                } else {
                    DevSource::Kfold { k: 5 }
                };
                cfg.protocol = Some(ProtocolSpec::intra(&m.dataset_name, dev));
                Ok(())
            }
            (ProtocolMode::Intra, _) => Err(PadError::Config(
                "--protocol intra without a [protocol] table needs exactly one dataset".into(),
            )),
            (ProtocolMode::Inter, _) => Err(PadError::Config(
                "--protocol inter needs a [protocol] table naming train and test datasets".into(),
            )),
        },
    }
}

fn protocol_pipeline(args: &ProtocolArgs, cli: &Cli) -> Result<(Pipeline, Vec<DatasetManifest>)> {
    let mut cfg = load_config(&args.config.config, cli)?;
    let manifests = pipeline(cfg.clone(), cli)?.load_manifests()?;
    apply_protocol(&mut cfg, &manifests, args.protocol)?;
    Ok((pipeline(cfg, cli)?, manifests))
}

fn train(p: &Pipeline, manifests: &[DatasetManifest]) -> Result<pad_core::eval::TrainedModels> {
    let (protocol, models) = p.train(manifests)?;
    let dir = p.cfg.model_dir();
    save_models(&dir, &models, &p.cfg.digest())?;
    // stdout carries the report when training happens inside `evaluate`
    eprintln!(
        "trained on {} samples ({} dev) -> {}",
        protocol.train.len(),
        protocol.dev.len(),
        dir.display()
    );
    Ok(models)
}

fn write_report(p: &Pipeline, report: &EvalReport, format: ReportFormat) -> Result<PathBuf> {
    let dir = p.cfg.report_dir();
    fs::create_dir_all(&dir).map_err(|e| PadError::io(&dir, e))?;
    let json = dir.join("report.json");
    fs::write(&json, to_json(report)).map_err(|e| PadError::io(&json, e))?;
    if format != ReportFormat::Json {
        let other = dir.join(format!("report.{}", format.extension()));
        fs::write(&other, render(report, format)).map_err(|e| PadError::io(&other, e))?;
    }
    Ok(json)
}

fn evaluate(args: &ProtocolArgs, cli: &Cli) -> Result<()> {
    let (p, manifests) = protocol_pipeline(args, cli)?;
    let digest = p.cfg.digest();
    let models = match load_models(&p.cfg.model_dir(), &digest) {
        Ok(m) if !cli.force => m,
        Ok(_) => train(&p, &manifests)?,
        Err(PadError::Io { .. } | PadError::DigestMismatch(_)) => {
            log::info!("no models for config {digest}; training");
            train(&p, &manifests)?
        }
        Err(e) => return Err(e),
    };
    let report = p.evaluate(&manifests, &models)?;
    let format = ReportFormat::from(cli.format);
    let path = write_report(&p, &report, format)?;
    print!("{}", render(&report, format));
    log::info!("report written to {}", path.display());
    Ok(())
}

fn report(paths: &[PathBuf], cli: &Cli) -> Result<()> {
    let reports = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| PadError::io(p, e))?;
            from_json(&text).map_err(|e| PadError::format(p, e.to_string()))
        })
        .collect::<Result<Vec<EvalReport>>>()?;
    check_same_digest(&reports, cli.force)?;
    let out = match ReportFormat::from(cli.format) {
        ReportFormat::Text => render_text(&reports),
        ReportFormat::Csv => render_csv(&reports),
        ReportFormat::Json => render_json(&reports),
    };
    print!("{out}");
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::ExtractFrames(a) => run_stage(a, cli, Stage::Frames).map(drop),
        Command::Align(a) => run_stage(a, cli, Stage::Align).map(drop),
        Command::ComputeMaps { config, export } => {
            let p = run_stage(config, cli, Stage::Maps)?;
            if let Some(dir) = export {
                for m in p.load_manifests()? {
                    for r in &m.records {
                        let (maps, _) = p.maps(r, m.fps_native)?;
                        export_maps(dir, &r.sample_id, &maps)?;
                    }
                }
                println!("maps exported to {}", dir.display());
            }
            Ok(())
        }
        Command::ExtractFeatures(a) => run_stage(a, cli, Stage::Features).map(drop),
        Command::Train(a) => {
            let (p, manifests) = protocol_pipeline(a, cli)?;
            train(&p, &manifests).map(drop)
        }
        Command::Evaluate(a) => evaluate(a, cli),
        Command::Report { reports } => report(reports, cli),
        Command::Synth {
            out,
            subjects,
            videos,
            frames,
            attack_fraction,
        } => {
            let spec = SynthSpec {
                n_subjects: *subjects,
                videos_per_subject: *videos,
                frames_per_video: *frames,
                seed: cli.seed.unwrap_or(0),
                attack_fraction: *attack_fraction,
            };
            let m = generate_synthetic_dataset(&spec, out)?;
            println!("{} videos written; config at {}", m.records.len(), out.join("run.toml").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(|| dispatch(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { EXIT_DATA } else { EXIT_INTERNAL })
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
