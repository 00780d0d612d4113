use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cfrobust::artifact::{train, ModelDocument};
use cfrobust::config::{CfMode, ExperimentConfig, MetricName};
use cfrobust::data::{make_blobs, write_csv, BlobsSpec};
use cfrobust::dimstudy::{run_dimensionality_study, DimStudySpec};
use cfrobust::error::{HarnessError, Result};
use cfrobust::output::{write_experiment, write_json};
use cfrobust::theory::{theory_check, TheorySpec};
use cfrobust::{run_experiment, CfMode as Mode};
use cfrobust_core::Vector;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cfrobust", version, about = "Robustness of counterfactual explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Master seed; falls back to CFROBUST_SEED, then to the config file.
    #[arg(long, env = "CFROBUST_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit model and densities on a whole dataset and save them.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Explain one sample with a saved model.
    Explain {
        /// Model document written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated feature values.
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long)]
        target: Option<usize>,
        #[arg(long, value_enum, default_value = "closest")]
        mode: ModeArg,
        /// Distance minimised by the counterfactual.
        #[arg(long, value_enum, default_value = "l1")]
        metric: MetricName,
    },
    /// Run a cross-validated robustness experiment.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Reporting distance between counterfactuals.
        #[arg(long, value_enum)]
        metric: Option<MetricName>,
        /// Restrict to one counterfactual mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        threshold_quantile: Option<f64>,
        #[arg(long)]
        max_test_per_fold: Option<usize>,
    },
    /// Write a two-blob dataset as CSV.
    Blobs {
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 100)]
        n_per_class: usize,
        #[arg(long, default_value_t = 3.0)]
        separation: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Instability against dimension on two-blob data.
    DimStudy {
        /// Optional study spec (JSON); flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated dimensions.
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        #[arg(long)]
        max_test_per_fold: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare Monte-Carlo instability with the closed forms and bounds.
    TheoryCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        draws: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Closest,
    Plausible,
}

impl From<ModeArg> for CfMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Closest => Mode::Closest,
            ModeArg::Plausible => Mode::Plausible,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn out_dir(common: &Common, fallback: Option<&PathBuf>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| fallback.cloned())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.display().to_string(),
        source,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, common } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let doc = train(&cfg)?;
            let dir = out_dir(&common, cfg.output.as_ref());
            mkdir(&dir)?;
            let path = dir.join("model.json");
            write_json(&doc, &path)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Explain {
            model,
            x,
            target,
            mode,
            metric,
        } => {
            let doc = ModelDocument::load(&model)?;
            let values = x
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| HarnessError::Config(format!("bad --x: {e}")))?;
            let res = doc.explain(&Vector::from_vec(values), target, mode.into(), metric)?;
            println!("{}", serde_json::to_string_pretty(&res)?);
        }
        Command::Evaluate {
            config,
            common,
            metric,
            mode,
            threshold_quantile,
            max_test_per_fold,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(m) = metric {
                cfg.metric = m;
            }
            if let Some(m) = mode {
                cfg.modes = vec![m.into()];
            }
            if let Some(q) = threshold_quantile {
                cfg.threshold_quantile = q;
            }
            if max_test_per_fold.is_some() {
                cfg.max_test_per_fold = max_test_per_fold;
            }
            let res = run_experiment(&cfg)?;
            let dir = out_dir(&common, cfg.output.as_ref());
            write_experiment(&res, &dir)?;
            for a in &res.aggregates {
                let what = a.masked.map_or("noise".to_string(), |k| format!("mask:{k}"));
                match a.median {
                    Some(m) => println!("{:<10} {:<8} median {m:.4} (n={})", a.mode.name(), what, a.count),
                    None => println!("{:<10} {:<8} no results", a.mode.name(), what),
                }
            }
            eprintln!("wrote {}", dir.display());
        }
        Command::Blobs {
            d,
            n_per_class,
            separation,
            common,
        } => {
            let data = make_blobs(&BlobsSpec {
                d,
                n_per_class,
                separation,
                seed: common.seed.unwrap_or(0),
            })?;
            let path = common.out.unwrap_or_else(|| PathBuf::from("blobs.csv"));
            write_csv(&data, &path)?;
            eprintln!("wrote {}", path.display());
        }
        Command::DimStudy {
            config,
            dims,
            max_test_per_fold,
            common,
        } => {
            let mut spec: DimStudySpec = match &config {
                Some(p) => read_json(p)?,
                None => DimStudySpec::default(),
            };
            if let Some(s) = common.seed {
                spec.seed = s;
            }
            if let Some(d) = dims {
                spec.dims = d;
            }
            if max_test_per_fold.is_some() {
                spec.max_test_per_fold = max_test_per_fold;
            }
            let res = run_dimensionality_study(&spec)?;
            let dir = out_dir(&common, None);
            mkdir(&dir)?;
            write_json(&res, &dir.join("dim_study.json"))?;
            let path = dir.join("dim_study.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["d", "kind", "mode", "median", "count"])?;
            for p in &res.points {
                w.write_record([
                    p.d.to_string(),
                    serde_json::to_value(p.kind)?.as_str().unwrap_or_default().to_string(),
                    p.mode.name().to_string(),
                    p.median.map_or_else(String::new, |m| m.to_string()),
                    p.count.to_string(),
                ])?;
            }
            w.flush().map_err(|source| HarnessError::Io {
                path: path.display().to_string(),
                source,
            })?;
            for t in &res.trends {
                let kind = serde_json::to_value(t.kind)?;
                let rho = t.spearman.map_or_else(|| "n/a".to_string(), |r| format!("{r:.3}"));
                println!("{} {}: spearman {rho}", kind.as_str().unwrap_or_default(), t.mode.name());
            }
        }
        Command::TheoryCheck {
            config,
            draws,
            common,
        } => {
            let mut spec: TheorySpec = match &config {
                Some(p) => read_json(p)?,
                None => TheorySpec::default(),
            };
            if let Some(s) = common.seed {
                spec.seed = s;
            }
            if let Some(n) = draws {
                spec.draws = n;
            }
            let report = theory_check(&spec)?;
            let dir = out_dir(&common, None);
            mkdir(&dir)?;
            write_json(&report, &dir.join("theory_check.json"))?;
            for c in &report.oracle {
                let family = serde_json::to_value(c.family)?;
                let eps = c.eps.map_or_else(|| "-".to_string(), |e| e.to_string());
                println!(
                    "{} d={} eps={}: mc {:.4} ± {:.4} vs {:.4} (z {:.2}) {}",
                    family.as_str().unwrap_or_default(),
                    c.d,
                    eps,
                    c.mean,
                    c.std_err,
                    c.expected,
                    c.z,
                    if c.pass { "ok" } else { "FAIL" }
                );
            }
            println!(
                "bounds: {} general / {} linear violations over {} trials",
                report.bounds.general_violations, report.bounds.linear_violations, report.bounds.trials
            );
            for t in &report.tails {
                println!(
                    "tail d={} delta={}: {:.5} <= {:.5} {}",
                    t.d,
                    t.delta,
                    t.empirical,
                    t.bound,
                    if t.pass { "ok" } else { "FAIL" }
                );
            }
            if !report.pass {
                return Err(HarnessError::Config("theory check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
