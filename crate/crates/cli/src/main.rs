//! `tpg-dnn`: generate data, train, evaluate and compare from the shell.
//!
//! Exit status is 0 on success, 1 on a runtime failure and 2 on a usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tpg_dnn::data::{generate_synthetic, read_dataset, write_dataset, Dataset};
use tpg_dnn::diagnostics::{grad_check_suite, ComponentCheck};
use tpg_dnn::eval::{
    classification_table, evaluate, policy_metrics, predict_all, regression_table, run_baseline,
    simulate_coupons, write_metrics_csv, MetricsReport, PolicyMetrics, Strategy, Variant,
};
use tpg_dnn::model::InputSpec;
use tpg_dnn::train::{train, write_history_csv, Checkpoint, RunConfig};
use tpg_dnn::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "tpg-dnn", version, about = "Multi-task funnel model with a total-probability purchase head")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write train.jsonl and test.jsonl from the synthetic funnel.
    GenerateData(Common),
    /// Train one variant and write checkpoint.json and history.csv.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// Overrides `train.variant` (tpg-dnn, mtl-equal or lr).
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Score a checkpoint on the test split and write metrics.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        checkpoint: CheckpointArg,
        /// F1 decision threshold; overrides `eval.threshold`.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Finite-difference check of every differentiable component.
    GradCheck {
        #[command(flatten)]
        common: Common,
        /// Random instances per component.
        #[arg(long, default_value_t = 5)]
        instances: usize,
    },
    /// Hand out coupons on the test split and write policy.csv.
    SimulateCoupons {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        checkpoint: CheckpointArg,
        /// Run only this strategy (random or model); both by default.
        #[arg(long)]
        strategy: Option<Strategy>,
    },
    /// Train LR, MTL-equal and TPG-DNN on one dataset and tabulate them.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`, which also seeds the synthetic population.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct DataArg {
    /// Directory holding train.jsonl and test.jsonl; generated from the
    /// config and seed when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct CheckpointArg {
    #[arg(long, default_value = "out/checkpoint.json")]
    checkpoint: PathBuf,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    /// Arguments that reproduce the run from this directory.
    args: Vec<String>,
    config: &'a RunConfig,
    outputs: Vec<&'a str>,
}

struct Context {
    config: RunConfig,
    out: PathBuf,
}

impl Context {
    fn new(common: &Common) -> Result<Self> {
        let mut config = match &common.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = common.seed {
            config.train.seed = seed;
        }
        config.validate()?;
        fs::create_dir_all(&common.out)?;
        Ok(Context {
            config,
            out: common.out.clone(),
        })
    }

    fn seed(&self) -> u64 {
        self.config.train.seed
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn data(&self, dir: &Option<PathBuf>) -> Result<(Dataset, Dataset)> {
        match dir {
            Some(dir) => Ok((read_dataset(dir.join("train.jsonl"))?, read_dataset(dir.join("test.jsonl"))?)),
            None => {
                let data = generate_synthetic(&self.config.data, self.seed())?;
                Ok((data.train, data.test))
            }
        }
    }

    /// Writes `config.toml` and `manifest.json` beside the outputs.
    fn finish(&self, command: &str, extra: Vec<String>, outputs: Vec<&str>) -> Result<()> {
        fs::write(self.path("config.toml"), self.config.to_toml()?)?;
        let mut args = vec![
            command.to_string(),
            "--config".into(),
            "config.toml".into(),
            "--seed".into(),
            self.seed().to_string(),
            "--out".into(),
            ".".into(),
        ];
        args.extend(extra);
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed(),
            args,
            config: &self.config,
            outputs,
        };
        fs::write(self.path("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

fn path_args(flag: &str, path: &Option<PathBuf>) -> Vec<String> {
    path.iter()
        .flat_map(|p| [flag.to_string(), absolute(p).display().to_string()])
        .collect()
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

fn write_tables(ctx: &Context, reports: &[MetricsReport]) -> Result<()> {
    write_metrics_csv(reports, fs::File::create(ctx.path("metrics.csv"))?)?;
    let text = format!("{}\n{}", classification_table(reports), regression_table(reports));
    print!("{text}");
    fs::write(ctx.path("table.txt"), text)?;
    Ok(())
}

fn generate_data(common: &Common) -> Result<()> {
    let ctx = Context::new(common)?;
    let data = generate_synthetic(&ctx.config.data, ctx.seed())?;
    write_dataset(&data.train, ctx.path("train.jsonl"))?;
    write_dataset(&data.test, ctx.path("test.jsonl"))?;
    println!("wrote {} train and {} test records to {}", data.train.len(), data.test.len(), ctx.out.display());
    ctx.finish("generate-data", vec![], vec!["train.jsonl", "test.jsonl"])
}

fn train_command(common: &Common, data: &DataArg, variant: Option<Variant>) -> Result<()> {
    let mut ctx = Context::new(common)?;
    if let Some(v) = variant {
        ctx.config.train.variant = v;
    }
    let (train_set, _) = ctx.data(&data.data)?;
    let input = InputSpec::from_generator(&ctx.config.data);
    let run = match train(&ctx.config, &input, &train_set) {
        Err(Error::TrainingAborted { epoch, source, checkpoint }) => {
            checkpoint.save(&ctx.path("checkpoint.json"))?;
            return Err(Error::TrainingAborted { epoch, source, checkpoint });
        }
        other => other?,
    };
    for record in &run.history {
        println!("epoch {:>3}  loss {:.5}", record.epoch, record.loss.total);
    }
    run.checkpoint.save(&ctx.path("checkpoint.json"))?;
    write_history_csv(&run.history, fs::File::create(ctx.path("history.csv"))?)?;
    ctx.finish("train", path_args("--data", &data.data), vec!["checkpoint.json", "history.csv"])
}

fn eval_command(common: &Common, data: &DataArg, checkpoint: &Path, threshold: Option<f64>) -> Result<()> {
    let mut ctx = Context::new(common)?;
    if let Some(t) = threshold {
        ctx.config.eval.threshold = t;
        ctx.config.validate()?;
    }
    let saved = Checkpoint::load(checkpoint)?;
    let model = saved.restore()?;
    let (_, test) = ctx.data(&data.data)?;
    let report = evaluate(saved.variant.label(), &model, &test, ctx.config.eval.threshold)?;
    write_tables(&ctx, &[report])?;
    let mut extra = path_args("--data", &data.data);
    extra.extend(path_args("--checkpoint", &Some(checkpoint.to_path_buf())));
    ctx.finish("eval", extra, vec!["metrics.csv", "table.txt"])
}

fn grad_check(common: &Common, instances: usize) -> Result<bool> {
    let ctx = Context::new(common)?;
    let report = grad_check_suite(ctx.seed(), instances)?;
    let mut w = csv::Writer::from_path(ctx.path("grad_check.csv")).map_err(Error::from)?;
    for check in &report {
        println!(
            "{:<32} {:.3e}  (tolerance {:.0e})  {}",
            check.component,
            check.max_relative_error,
            check.tolerance,
            if check.passed() { "ok" } else { "FAILED" }
        );
        w.serialize(check)?;
    }
    w.flush()?;
    ctx.finish("grad-check", vec!["--instances".into(), instances.to_string()], vec!["grad_check.csv"])?;
    Ok(report.iter().all(ComponentCheck::passed))
}

#[derive(Serialize)]
struct PolicyRow {
    strategy: Strategy,
    received: usize,
    verified: usize,
    verified_amount: f64,
    order_volume: f64,
    transaction_amount: f64,
    verification_rate: Option<f64>,
    cost_per_order: Option<f64>,
    roi: Option<f64>,
}

impl PolicyRow {
    fn new(strategy: Strategy, m: &PolicyMetrics) -> Self {
        PolicyRow {
            strategy,
            received: m.received,
            verified: m.verified,
            verified_amount: m.verified_amount,
            order_volume: m.order_volume,
            transaction_amount: m.transaction_amount,
            verification_rate: m.verification_rate,
            cost_per_order: m.cost_per_order,
            roi: m.roi,
        }
    }
}

fn simulate(common: &Common, data: &DataArg, checkpoint: &Path, strategy: Option<Strategy>) -> Result<()> {
    let ctx = Context::new(common)?;
    let model = Checkpoint::load(checkpoint)?.restore()?;
    let (_, test) = ctx.data(&data.data)?;
    let scores: Vec<f64> = predict_all(&model, &test)?.iter().map(|o| o.p_purchase).collect();
    let strategies = match strategy {
        Some(s) => vec![s],
        None => vec![Strategy::Random, Strategy::Model],
    };
    let mut w = csv::Writer::from_path(ctx.path("policy.csv")).map_err(Error::from)?;
    for s in strategies {
        let events = simulate_coupons(s, &scores, &test, &ctx.config.eval.coupons, ctx.seed())?;
        let metrics = policy_metrics(&events);
        let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:<7} received {:>6}  verified {:>6}  rate {}  cost/order {}  roi {}",
            format!("{s:?}").to_lowercase(),
            metrics.received,
            metrics.verified,
            show(metrics.verification_rate),
            show(metrics.cost_per_order),
            show(metrics.roi)
        );
        w.serialize(PolicyRow::new(s, &metrics))?;
    }
    w.flush()?;
    let mut extra = path_args("--data", &data.data);
    extra.extend(path_args("--checkpoint", &Some(checkpoint.to_path_buf())));
    if let Some(s) = strategy {
        extra.extend(["--strategy".to_string(), format!("{s:?}").to_lowercase()]);
    }
    ctx.finish("simulate-coupons", extra, vec!["policy.csv"])
}

fn compare(common: &Common, data: &DataArg) -> Result<()> {
    let ctx = Context::new(common)?;
    let (train_set, test) = ctx.data(&data.data)?;
    let mut reports = Vec::new();
    for variant in Variant::ALL {
        eprintln!("training {}", variant.label());
        reports.push(run_baseline(variant, &train_set, &test, &ctx.config)?.report);
    }
    write_tables(&ctx, &reports)?;
    ctx.finish("compare", path_args("--data", &data.data), vec!["metrics.csv", "table.txt"])
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::GenerateData(common) => generate_data(common)?,
        Command::Train { common, data, variant } => train_command(common, data, *variant)?,
        Command::Eval {
            common,
            data,
            checkpoint,
            threshold,
        } => eval_command(common, data, &checkpoint.checkpoint, *threshold)?,
        Command::GradCheck { common, instances } => return grad_check(common, *instances),
        Command::SimulateCoupons {
            common,
            data,
            checkpoint,
            strategy,
        } => simulate(common, data, &checkpoint.checkpoint, *strategy)?,
        Command::Compare { common, data } => compare(common, data)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check exceeded tolerance");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
