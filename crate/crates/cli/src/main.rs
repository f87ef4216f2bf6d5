//! `sama`: synthetic data, training, evaluation, gradient checks and
//! profiling from the command line.
//!
//! Settings come from defaults, then `--config FILE`, then flags. Exit codes:
//! 0 on success, 1 on a runtime failure, 2 on bad arguments or config.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sama_core::config::RunConfig;
use sama_core::data::{generate, load_dataset, load_mask, mask_path, save_dataset, write_pgm};
use sama_core::gradsuite::{self, Level};
use sama_core::metrics::{evaluate, mean_scores, MaskPair};
use sama_core::nn::load_checkpoint;
use sama_core::profile::profile;
use sama_core::train::{init_model, save_run, train, LOG_HEADER};

#[derive(Parser)]
#[command(name = "sama", version, about = "Segmentation network harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key = value config file applied over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic image/mask dataset.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        /// Square image size in pixels.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Train on a dataset directory and write a checkpoint with its log.
    Train {
        /// Dataset directory; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Score predictions against a dataset's masks.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Predict with this checkpoint.
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Directory of mask_NNNN.stn predictions.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Per-class report CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// NSD tolerance in pixels.
        #[arg(long)]
        tau: Option<f64>,
        /// Write one binary PGM per sample and class of the predictions here.
        #[arg(long)]
        export_pgm: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, value_enum, default_value = "ops")]
        level: LevelArg,
        #[command(flatten)]
        common: Common,
    },
    /// Print analytic parameter and MAC counts.
    Profile {
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Ops,
    Micro,
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(usage)?;
            RunConfig::from_text(&text)
                .with_context(|| format!("in {}", p.display()))
                .map_err(usage)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.data.seed = s;
    }
    Ok(cfg)
}

fn synth(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let data = generate(&cfg.data)?;
    save_dataset(&data, out).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} samples of {}x{} to {}", data.len(), data.height, data.width, out.display());
    Ok(())
}

fn run_train(cfg: &RunConfig, data: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let data = match data {
        Some(d) => load_dataset(d).with_context(|| format!("loading {}", d.display()))?,
        None => generate(&cfg.data)?,
    };
    println!("{LOG_HEADER}");
    let trained = train(cfg, &data, |row| println!("{}", row.csv_row()))?;
    fs::create_dir_all(out)?;
    save_run(out, cfg, &trained)?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn run_eval(
    cfg: &RunConfig,
    data_dir: &Path,
    checkpoint: Option<&Path>,
    predictions: Option<&Path>,
    out: Option<&Path>,
    pgm: Option<&Path>,
) -> anyhow::Result<()> {
    let data = load_dataset(data_dir).with_context(|| format!("loading {}", data_dir.display()))?;
    let (h, w) = (data.height, data.width);
    let (preds, num_classes) = match (checkpoint, predictions) {
        (Some(dir), _) => {
            let ckpt = load_checkpoint(dir)?;
            let mut model_cfg = cfg.clone();
            if let Some(text) = &ckpt.config {
                model_cfg = RunConfig::from_text(text).context("checkpoint config")?;
            }
            let (model, mut store) = init_model(&model_cfg)?;
            ckpt.apply(&mut store)?;
            let preds = (0..data.len())
                .map(|i| model.predict(&store, &data.batch(&[i]).0))
                .collect::<sama_core::error::Result<Vec<_>>>()?;
            (preds, model_cfg.model.num_classes)
        }
        (None, Some(dir)) => {
            let mut preds = Vec::new();
            for i in 0..data.len() {
                let (ph, pw, m) = load_mask(mask_path(dir, i))?;
                if (ph, pw) != (h, w) {
                    bail!("prediction {i} is {ph}x{pw}, expected {h}x{w}");
                }
                preds.push(m);
            }
            (preds, cfg.model.num_classes)
        }
        (None, None) => bail!("eval needs --checkpoint or --predictions"),
    };
    let mut csv = String::from("sample_id,class_id,dsc,nsd,flags\n");
    let mut all = Vec::new();
    for (i, (s, p)) in data.samples.iter().zip(&preds).enumerate() {
        let rows = evaluate(&MaskPair::new(&s.mask, p, h, w)?, num_classes, cfg.tau)?;
        for r in &rows {
            let flags = [r.dsc.flags(), r.nsd.flags()]
                .iter()
                .filter(|f| !f.is_empty())
                .map(|f| f.to_string())
                .collect::<Vec<_>>();
            csv.push_str(&format!("{i},{},{},{},{}\n", r.class, r.dsc.value, r.nsd.value, flags.join(";")));
        }
        all.extend(rows);
        if let Some(dir) = pgm {
            fs::create_dir_all(dir)?;
            for c in 0..num_classes as u16 {
                write_pgm(dir.join(format!("pred_{i:04}_class{c}.pgm")), p, h, w, c)?;
            }
        }
    }
    if let Some(path) = out {
        fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
    } else {
        print!("{csv}");
    }
    let (dsc, nsd) = mean_scores(&all);
    println!("mean_dsc {dsc}");
    println!("mean_nsd {nsd} (tau {})", cfg.tau);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::SynthData {
            out,
            count,
            size,
            classes,
            noise,
            common,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(c) = count {
                cfg.data.count = c;
            }
            if let Some(s) = size {
                cfg.data.height = s;
                cfg.data.width = s;
            }
            if let Some(k) = classes {
                cfg.data.num_classes = k;
            }
            if let Some(n) = noise {
                cfg.data.noise_sigma = n;
            }
            cfg.data.validate().map_err(usage)?;
            synth(&cfg, &out)?;
        }
        Command::Train {
            data,
            out,
            epochs,
            iters,
            lr,
            common,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(i) = iters {
                cfg.train.iters_per_epoch = i;
            }
            if let Some(l) = lr {
                cfg.train.lr = l;
            }
            cfg.validate().map_err(usage)?;
            run_train(&cfg, data.as_deref(), &out)?;
        }
        Command::Eval {
            data,
            checkpoint,
            predictions,
            out,
            tau,
            export_pgm,
            common,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(t) = tau {
                if !(t >= 0.0) {
                    return Err(usage(anyhow::anyhow!("--tau must be >= 0")));
                }
                cfg.tau = t;
            }
            run_eval(
                &cfg,
                &data,
                checkpoint.as_deref(),
                predictions.as_deref(),
                out.as_deref(),
                export_pgm.as_deref(),
            )?;
        }
        Command::Gradcheck { level, common } => {
            let cfg = load_config(&common)?;
            let level = match level {
                LevelArg::Ops => Level::Ops,
                LevelArg::Micro => Level::Micro,
            };
            let rows = gradsuite::run(level, cfg.seed).map_err(anyhow::Error::from)?;
            print!("{}", gradsuite::render(&rows));
            let failed = rows.iter().filter(|r| !r.passed()).count();
            if failed > 0 {
                return Err(Failure::Runtime(anyhow::anyhow!("{failed} of {} checks failed", rows.len())));
            }
            println!("all {} checks passed", rows.len());
        }
        Command::Profile { height, width, common } => {
            let cfg = load_config(&common)?;
            cfg.model.validate().map_err(usage)?;
            let h = height.unwrap_or(cfg.data.height);
            let w = width.unwrap_or(h);
            let rep = profile(&cfg.model, h, w).map_err(anyhow::Error::from)?;
            print!("{}", rep.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
