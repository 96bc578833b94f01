use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use geofuse::checkpoint::Checkpoint;
use geofuse::config::RunConfig;
use geofuse::manifest::{load_manifest, stratified_split, Manifest};
use geofuse::metrics::{compare, parse_report_csv, parse_report_table, render_report, report_csv};
use geofuse::model::Mode;
use geofuse::synth::write_corpus;
use geofuse::train::{evaluate, train};

const CONFIG_ECHO: &str = "config.txt";

#[derive(Parser)]
#[command(
    name = "geofuse",
    version,
    about = "Mask-guided CNN + ViT power plant classifier"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run seed; overrides the config file
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config file of `key = value` lines
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a config key, e.g. --set train.epochs=5 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Log progress (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with masks and a manifest
    Synth {
        #[arg(long)]
        per_class: Option<usize>,
    },
    /// Stratified train/test split of a manifest
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Train a model and write checkpoint and loss history
    Train {
        #[arg(long)]
        mode: Option<Mode>,
        /// Training manifest; overrides data.train_manifest
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a manifest
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Per-class deltas of report b relative to report a
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

fn run_config(g: &Global) -> anyhow::Result<RunConfig> {
    let mut c = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &g.overrides {
        let (k, v) = o
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
        c.set(k.trim(), v.trim())?;
    }
    if let Some(s) = g.seed {
        c.seed = s;
    }
    Ok(c)
}

fn out_dir(g: &Global) -> anyhow::Result<&Path> {
    let out = g.out.as_deref().context("--out is required")?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    Ok(out)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

/// Keep relative paths when the output directory is the manifest's own
/// directory; otherwise store absolute paths so the copy stays loadable.
fn rebase(m: Manifest, out: &Path) -> anyhow::Result<Manifest> {
    let root = std::path::absolute(&m.root)?;
    if fs::canonicalize(out)? == fs::canonicalize(&root)? {
        return Ok(m);
    }
    let mut m = m;
    for r in &mut m.records {
        r.image_path = root.join(&r.image_path);
        r.mask_path = r.mask_path.take().map(|p| root.join(p));
    }
    Ok(m.with_root(out))
}

fn load_report(path: &Path) -> anyhow::Result<geofuse::metrics::EvalReport> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let r = if path.extension().is_some_and(|e| e == "csv") {
        parse_report_csv(&text)
    } else {
        parse_report_table(&text)
    };
    r.with_context(|| format!("{}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    let mut cfg = run_config(g)?;
    match cli.command {
        Command::Synth { per_class } => {
            if let Some(n) = per_class {
                cfg.synth.per_class = n;
            }
            let out = out_dir(g)?;
            let m = write_corpus(out, &cfg.synth, cfg.seed)?;
            cfg.save(&out.join(CONFIG_ECHO))?;
            info!("wrote {} samples to {}", m.len(), out.display());
        }
        Command::Split {
            manifest,
            test_fraction,
        } => {
            if let Some(f) = test_fraction {
                cfg.test_fraction = f;
            }
            let m = load_manifest(&manifest)?;
            let out = out_dir(g)?;
            let (tr, te) = stratified_split(&m, cfg.test_fraction, cfg.seed)?;
            let (train_path, test_path) = (out.join("train.csv"), out.join("test.csv"));
            rebase(tr, out)?.write(&train_path)?;
            rebase(te, out)?.write(&test_path)?;
            cfg.train_manifest = Some(train_path);
            cfg.test_manifest = Some(test_path);
            cfg.save(&out.join(CONFIG_ECHO))?;
        }
        Command::Train { mode, manifest } => {
            if let Some(mode) = mode {
                cfg.model.mode = mode;
            }
            if manifest.is_some() {
                cfg.train_manifest = manifest;
            }
            let path = cfg
                .train_manifest
                .clone()
                .context("no training manifest: pass --manifest or set data.train_manifest")?;
            let m = load_manifest(&path)?;
            let masks = cfg.mask_spec()?;
            let out = out_dir(g)?;
            cfg.save(&out.join(CONFIG_ECHO))?;
            let (ckpt, history) = train(&cfg.train_config(), &cfg.model, &m, &masks)?;
            ckpt.save(&out.join("checkpoint.ckpt"))?;
            write(&out.join("history.csv"), history.to_csv())?;
        }
        Command::Eval {
            checkpoint,
            manifest,
        } => {
            if manifest.is_some() {
                cfg.test_manifest = manifest;
            }
            let path = cfg
                .test_manifest
                .clone()
                .context("no test manifest: pass --manifest or set data.test_manifest")?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let m = load_manifest(&path)?;
            cfg.model = ckpt.model.config;
            cfg.seed = ckpt.seed;
            let masks = cfg.mask_spec()?;
            let out = out_dir(g)?;
            let report = evaluate(&ckpt, &m, ckpt.model.mode(), &masks)?;
            cfg.save(&out.join(CONFIG_ECHO))?;
            let text = render_report(&report);
            write(&out.join("report.txt"), &text)?;
            write(&out.join("report.csv"), report_csv(&report))?;
            print!("{text}");
        }
        Command::Compare { a, b } => {
            let (ra, rb) = (load_report(&a)?, load_report(&b)?);
            let c = compare(&ra, &rb)?;
            let out = out_dir(g)?;
            cfg.save(&out.join(CONFIG_ECHO))?;
            write(&out.join("comparison.csv"), c.to_csv())?;
            let text = c.render();
            write(&out.join("comparison.txt"), &text)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
