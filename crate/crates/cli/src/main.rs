use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pnsis::checkpoint::{read_model, write_model};
use pnsis::experiment::{
    ensemble_predict, export_subgraph_viz, mask_recovery_auc, multiclass_auc, predict_invariant, run_experiment,
    ExperimentConfig,
};
use pnsis::io::{fmt_real, read_dataset, write_dataset};
use pnsis::metrics::accuracy;
use pnsis::model::{extract_edge_probs, SubgraphMask};
use pnsis::objective::{fit, ClassifierTrainConfig};
use pnsis::pmp::{embed_all, PmpConfig};
use pnsis::synth::{generate_spmotif, SpmotifConfig};
use pnsis::{gsd, rng, Dataset64, Matrix64};

#[derive(Parser)]
#[command(name = "pnsis", version, about = "Invariant subgraph learning for OOD graph classification")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic motif dataset.
    GenSpmotif(GenArgs),
    /// Print structure embeddings, one line per graph.
    Embed {
        data: PathBuf,
        #[arg(long, default_value_t = 2)]
        degree_cap: usize,
    },
    /// Graph structure distance between two datasets.
    Gsd {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 2)]
        degree_cap: usize,
    },
    /// Fit a model and write a checkpoint.
    Train {
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Epoch log as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fuse invariant and spurious predictions on a dataset.
    Ensemble {
        model: PathBuf,
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Invariant-branch accuracy, AUC and mask recovery.
    Eval {
        model: PathBuf,
        data: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Full experiment; writes a JSON report.
    Run {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Export one graph's extracted subgraph as Graphviz.
    Viz {
        data: PathBuf,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
        /// Mask source: a checkpoint; the ground-truth mask when absent.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 300)]
    n: usize,
    #[arg(long, default_value_t = 0.9)]
    bias: f64,
    #[arg(long)]
    mixed: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Unbiased test split (bias 1/3).
    #[arg(long)]
    test: bool,
    #[arg(long, default_value_t = 8)]
    base_min: usize,
    #[arg(long, default_value_t = 14)]
    base_max: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        for s in &self.sets {
            let Some((k, v)) = s.split_once('=') else { bail!("--set expects KEY=VALUE, got `{s}`") };
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

fn load(path: &PathBuf) -> Result<Dataset64> {
    read_dataset(path).with_context(|| format!("reading {}", path.display()))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let result = dispatch(Cli::parse().cmd);
    eprintln!("wall-clock: {:.3}s", started.elapsed().as_secs_f64());
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::GenSpmotif(a) => {
            let cfg = SpmotifConfig {
                n_graphs: a.n,
                bias: if a.test { 1.0 / 3.0 } else { a.bias },
                base_size_range: (a.base_min, a.base_max),
                mixed: a.mixed,
                seed: a.seed,
            };
            let ds: Dataset64 = generate_spmotif(&cfg)?;
            write_dataset(&a.out, &ds)?;
        }
        Cmd::Embed { data, degree_cap } => {
            let ds = load(&data)?;
            let refs: Vec<_> = ds.graphs.iter().collect();
            for e in embed_all(&refs, PmpConfig::with_cap(degree_cap))? {
                let line: Vec<String> = e.h.iter().map(|&x| fmt_real(x)).collect();
                println!("{}", line.join(" "));
            }
        }
        Cmd::Gsd { a, b, degree_cap } => {
            let (da, db) = (load(&a)?, load(&b)?);
            let ra: Vec<_> = da.graphs.iter().collect();
            let rb: Vec<_> = db.graphs.iter().collect();
            let v = gsd::gsd(&ra, &rb, PmpConfig::with_cap(degree_cap))?;
            println!("total={} structure={} feature={}", fmt_real(v.total), fmt_real(v.structure_term), fmt_real(v.feature_term));
        }
        Cmd::Train { data, out, log, cfg } => {
            let cfg = cfg.load()?;
            let ds = load(&data)?;
            let fitted = fit(&ds, &cfg.fit)?;
            write_model(&out, &fitted.params)?;
            let lines = fitted.log_lines();
            match log {
                Some(p) => fs::write(p, lines)?,
                None => print!("{lines}"),
            }
        }
        Cmd::Ensemble { model, data, out, cfg } => {
            let cfg = cfg.load()?;
            let ds = load(&data)?;
            let mp = read_model(&model)?;
            let sp = ClassifierTrainConfig {
                epochs: cfg.spurious_epochs,
                lr: cfg.spurious_lr,
                batch_size: cfg.fit.batch_size,
                hidden: cfg.fit.classifier_hidden.clone(),
                walk_steps: cfg.fit.walk_steps,
                seed: rng::derive(cfg.fit.seed, 22),
            };
            let ens = ensemble_predict(&ds, &mp, cfg.fit.eval_samples, &sp, cfg.spurious_folds, rng::derive(cfg.fit.seed, 23))?;
            let mut body = serde_json::json!({
                "epsilon": ens.epsilon,
                "calibration_fallbacks": ens.fallbacks,
                "probs": ens.probs,
            });
            if let Some(y) = ds.labels() {
                let pred: Vec<usize> = ens.probs.iter().map(|p| argmax(p)).collect();
                body["accuracy"] = accuracy(&pred, &y).into();
            }
            let text = serde_json::to_string_pretty(&body)? + "\n";
            match out {
                Some(p) => fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        Cmd::Eval { model, data, cfg } => {
            let cfg = cfg.load()?;
            let ds = load(&data)?;
            let mp = read_model(&model)?;
            let y = ds.labels().context("evaluation needs labelled data")?;
            let probs = predict_invariant(&ds, &mp, cfg.fit.eval_samples, rng::derive(cfg.fit.seed, 21))?;
            let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
            let body = serde_json::json!({
                "accuracy": accuracy(&pred, &y),
                "auc": multiclass_auc(&probs, &y, ds.num_classes)?,
                "mask_auc": mask_recovery_auc(&ds, &mp)?,
            });
            println!("{}", serde_json::to_string_pretty(&body)?);
        }
        Cmd::Run { out, cfg } => {
            let cfg = cfg.load()?;
            let report = run_experiment::<f64>(&cfg);
            let text = report.to_json();
            match out {
                Some(p) => fs::write(p, &text)?,
                None => print!("{text}"),
            }
            if !report.ok() {
                eprintln!(
                    "run failed in stage `{}`: {}",
                    report.failed_stage.as_deref().unwrap_or("?"),
                    report.error.as_deref().unwrap_or("")
                );
            }
            return Ok(report.ok());
        }
        Cmd::Viz { data, index, out, model } => {
            let ds = load(&data)?;
            let g = ds.graphs.get(index).with_context(|| format!("no graph at index {index}"))?;
            let mask: Matrix64 = match model {
                Some(p) => {
                    let mp = read_model(&p)?;
                    extract_edge_probs(g, &mp.extractor_sf)?.probs.zip_map(&g.support(), |p, s| p * s)
                }
                None => g.gt_mask.clone().context("graph has no ground-truth mask; pass --model")?,
            };
            export_subgraph_viz(g, &SubgraphMask { mask, hard: false, temperature: 1.0 }, &out)?;
        }
    }
    Ok(true)
}

fn argmax(p: &[f64]) -> usize {
    (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b })
}
