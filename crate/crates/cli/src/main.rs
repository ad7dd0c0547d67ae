use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edgesynth::augment::Origin;
use edgesynth::pipeline::commands;
use edgesynth::pipeline::config::{PipelineConfig, KEYS};
use edgesynth::pipeline::manifest::{Split, MANIFEST_FILE};
use edgesynth::Result;

#[derive(Parser)]
#[command(name = "edgesynth", version, about = "Edge-fused label synthesis and segmentation experiments")]
struct Cli {
    /// Flat `key = value` settings file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Top-level seed; overrides the config file.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Extra `key=value` setting (repeatable); overrides the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ManifestArg {
    #[arg(long, value_name = "PATH", default_value = MANIFEST_FILE)]
    manifest: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    G0,
    G1,
}

#[derive(Subcommand)]
enum Command {
    /// Render a procedural image/mask set with its manifest.
    Toygen {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Tile raw `images/` and `masks/` into blocks and split them.
    Prepare {
        #[arg(long, value_name = "DIR")]
        raw: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Detect edges and write fused three-class labels.
    Fuse(ManifestArg),
    /// Train the label-to-image generator.
    TrainGan(ManifestArg),
    /// Synthesize an augmented set from the trained generator.
    Synth {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Train the segmenter for one named run.
    TrainSeg {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, value_name = "NAME")]
        run: String,
    },
    /// Evaluate a run on the test split.
    Eval {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, value_name = "NAME")]
        run: String,
    },
    /// Rebuild the comparison tables from stored run reports.
    Report(ManifestArg),
    /// Print every setting with its default and meaning.
    Keys,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn split_summary(path: &Path) -> Result<String> {
    let m = edgesynth::pipeline::manifest::DatasetManifest::load(path)?;
    Ok(format!(
        "{}: {} train ({} real, {} g0, {} g1), {} test",
        path.display(),
        m.count(Split::Train, None),
        m.count(Split::Train, Some(Origin::Real)),
        m.count(Split::Train, Some(Origin::G0)),
        m.count(Split::Train, Some(Origin::G1)),
        m.count(Split::Test, None)
    ))
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Toygen { out } => {
            let m = commands::toygen(&cfg, out)?;
            println!("wrote {} toy samples to {}", m.records.len(), out.display());
        }
        Command::Prepare { raw, out } => {
            let (_, stats) = commands::prepare(&cfg, raw, out)?;
            println!("{}", split_summary(&out.join(MANIFEST_FILE))?);
            print!("{}", stats.to_csv());
        }
        Command::Fuse(a) => {
            commands::fuse(&cfg, &a.manifest)?;
            println!("fused labels written; {}", split_summary(&a.manifest)?);
        }
        Command::TrainGan(a) => {
            let log = commands::train_gan(&cfg, &a.manifest)?;
            if let (Some(first), Some(last)) = (log.records.first(), log.records.last()) {
                println!(
                    "{} iterations; L1 {:.4} -> {:.4}, disc {:.4} -> {:.4}",
                    log.len(),
                    first.gen_l1,
                    last.gen_l1,
                    first.disc,
                    last.disc
                );
            }
        }
        Command::Synth { manifest, mode } => {
            let origin = match mode {
                Mode::G0 => Origin::G0,
                Mode::G1 => Origin::G1,
            };
            commands::synth(&cfg, &manifest.manifest, origin)?;
            println!("{}", split_summary(&manifest.manifest)?);
        }
        Command::TrainSeg { manifest, run } => {
            let info = commands::train_seg(&cfg, &manifest.manifest, run)?;
            println!(
                "run {run} ({}): {} training pairs, class weights {:?}",
                info.augmentation, info.train_count, info.class_weights
            );
        }
        Command::Eval { manifest, run } => {
            let report = commands::eval(&cfg, &manifest.manifest, run)?;
            println!("run {run}\n{report}");
        }
        Command::Report(a) => {
            print!("{}", commands::report(&a.manifest)?.to_csv());
        }
        Command::Keys => {
            for (key, default, doc) in KEYS {
                println!("{key} = {default}\t# {doc}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
