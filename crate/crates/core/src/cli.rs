//! Command-line driver: generate, ingest, train, evaluate and ablate.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::eval::{
    ablate_order, evaluate, relevance_map, retrieval_quality_split, scale_report, write_ablation_csv, AblationReport,
    EvidenceOrder, RELATIVE_DROP_DEFINITION,
};
use crate::model::{MegModel, ModelConfig, SummaryVariant};
use crate::numeric::GradCheckConfig;
use crate::store::{Dataset, Split};
use crate::synth::{generate, GenerationConfig};
use crate::train::{train, write_history_csv, TrainConfig};
use crate::verify::{micro_gradcheck, MicroShape};

pub const METRICS_FILE: &str = "metrics.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MODEL_CONFIG_FILE: &str = "model.json";

#[derive(Debug, Parser)]
#[command(name = "meg", version, about = "Multi-evidence tampering detector")]
pub struct Cli {
    /// Seed for all randomness; overrides seeds in config files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (manifest.jsonl + audit.jsonl).
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a manifest and print its summary.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and report test metrics.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate a trained checkpoint on a split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        reverse: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train each variant and compare test AUC before and after reversing evidence order.
    AblateOrder {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "gnn,gru_seq,lstm_seq")]
        variants: Vec<SummaryVariant>,
    },
    /// Train each variant with k_train evidences and test with --k-test.
    AblateScale {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 5)]
        k_test: usize,
        #[arg(long, value_delimiter = ',', default_value = "gnn,gru_seq,lstm_seq")]
        variants: Vec<SummaryVariant>,
    },
    /// Top-k references for one package of the dataset.
    Retrieve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Finite-difference gradient check of the full model on a micro instance.
    Gradcheck {
        /// Model configuration; defaults to the micro configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Check all three summary variants instead of the configured one.
        #[arg(long)]
        all_variants: bool,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON with optional `model` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Contents of a `--config` file for training commands.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ingest(path: &Path) -> Result<Dataset> {
    Dataset::ingest(path).with_context(|| format!("ingesting {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn parse_split(s: &str) -> Result<Split> {
    Ok(match s {
        "reference" => Split::Reference,
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => bail!("unknown split {other:?}"),
    })
}

fn load_run_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg: RunConfig = match path {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn write_ablation(out: &Path, reports: &[AblationReport]) -> Result<()> {
    create_dir(out)?;
    let mut w = BufWriter::new(fs::File::create(out.join(ABLATION_FILE))?);
    write_ablation_csv(&mut w, reports)?;
    write_json(
        &out.join("ablation.json"),
        &serde_json::json!({ "relative_drop": RELATIVE_DROP_DEFINITION, "reports": reports }),
    )
}

/// Runs one parsed command; messages go to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out } => {
            let mut cfg: GenerationConfig = match config {
                Some(p) => read_json(&p)?,
                None => GenerationConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let data = generate(&cfg)?;
            data.write(&out)?;
            println!("wrote {} packages to {}", data.packages.len(), out.display());
        }
        Command::Ingest { data, out } => {
            let summary = ingest(&data)?.summary();
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if let Some(out) = out {
                create_dir(&out)?;
                write_json(&out.join("summary.json"), &summary)?;
            }
        }
        Command::Train { run } => {
            let cfg = load_run_config(run.config.as_deref(), cli.seed)?;
            let dataset = ingest(&run.data)?;
            let outcome = train(&dataset, &cfg.model, &cfg.train)?;
            create_dir(&run.out)?;
            outcome.model.save_checkpoint(&run.out.join(CHECKPOINT_FILE))?;
            write_json(&run.out.join(MODEL_CONFIG_FILE), &cfg.model)?;
            let mut w = BufWriter::new(fs::File::create(run.out.join(HISTORY_FILE))?);
            write_history_csv(&mut w, &outcome.history)?;
            let eval = evaluate(&outcome.model, &dataset, Split::Test, cfg.train.k_train, EvidenceOrder::AsRetrieved)?;
            write_json(&run.out.join(METRICS_FILE), &eval.report)?;
            println!(
                "best val AUC {:.4} at batch {}; test AUC {:.4}, accuracy {:.4}",
                outcome.best_val_auc, outcome.best_batch, eval.report.auc, eval.report.accuracy
            );
        }
        Command::Eval {
            data,
            model,
            k,
            split,
            reverse,
            out,
        } => {
            let dataset = ingest(&data)?;
            let config: ModelConfig = read_json(&model.join(MODEL_CONFIG_FILE))?;
            let net = MegModel::load_checkpoint(config, &dataset.schema, &model.join(CHECKPOINT_FILE))?;
            let order = if reverse {
                EvidenceOrder::Reversed
            } else {
                EvidenceOrder::AsRetrieved
            };
            let eval = evaluate(&net, &dataset, parse_split(&split)?, k, order)?;
            let relevance = relevance_map(&dataset, &eval.query_ids);
            let quality = retrieval_quality_split(
                &eval.retrievals,
                &relevance,
                &eval.predictions(crate::eval::DEFAULT_THRESHOLD),
                &eval.labels,
            );
            create_dir(&out)?;
            write_json(&out.join(METRICS_FILE), &eval.report)?;
            write_json(&out.join("retrieval_quality.json"), &quality)?;
            println!("{}", serde_json::to_string_pretty(&eval.report)?);
        }
        Command::AblateOrder { run, variants } => {
            let cfg = load_run_config(run.config.as_deref(), cli.seed)?;
            let dataset = ingest(&run.data)?;
            let mut reports = Vec::new();
            for v in variants {
                let outcome = train(&dataset, &cfg.model.with_variant(v), &cfg.train)?;
                reports.push(ablate_order(&outcome.model, &dataset, cfg.train.k_train)?);
            }
            write_ablation(&run.out, &reports)?;
            print_reports(&reports);
        }
        Command::AblateScale { run, k_test, variants } => {
            let cfg = load_run_config(run.config.as_deref(), cli.seed)?;
            let dataset = ingest(&run.data)?;
            let mut reports = Vec::new();
            for v in variants {
                let outcome = train(&dataset, &cfg.model.with_variant(v), &cfg.train)?;
                reports.push(scale_report(&outcome.model, &dataset, cfg.train.k_train, k_test)?);
            }
            write_ablation(&run.out, &reports)?;
            print_reports(&reports);
        }
        Command::Retrieve { data, query, k } => {
            let dataset = ingest(&data)?;
            let q = dataset.get(&query).with_context(|| format!("unknown package {query:?}"))?;
            println!("{}", serde_json::to_string_pretty(&dataset.retrieve(q, k)?)?);
        }
        Command::Gradcheck {
            config,
            all_variants,
            tolerance,
        } => {
            let base: ModelConfig = match config {
                Some(p) => read_json(&p)?,
                None => crate::verify::micro_model_config(),
            };
            let variants = if all_variants {
                SummaryVariant::ALL.to_vec()
            } else {
                vec![base.variant]
            };
            let gc = GradCheckConfig {
                tolerance,
                seed: cli.seed.unwrap_or(0),
                ..GradCheckConfig::default()
            };
            let mut failed = false;
            for v in variants {
                let r = micro_gradcheck(&base.with_variant(v), &MicroShape::default(), gc.seed, &gc)?;
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!(
                    "{status} {v}: max relative error {:.3e} over {} coordinates",
                    r.max_rel_error, r.checked
                );
                failed |= !r.passed;
            }
            if failed {
                bail!("gradient check failed");
            }
        }
    }
    Ok(())
}

fn print_reports(reports: &[AblationReport]) {
    for r in reports {
        let drop = r.relative_drop.map_or_else(|| "NA".into(), |d| format!("{:.1}%", 100.0 * d));
        println!("{}: {:.4} -> {:.4} ({drop})", r.variant, r.auc_before, r.auc_after);
    }
}

/// Parses `args` and runs the command; returns the process exit code
/// (0 success, 1 validation failure, 2 usage error).
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
