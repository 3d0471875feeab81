use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use ssfg::data::{load_dataset, save_dataset, GeneratorSpec};
use ssfg::diagnostics::{power_smooth, smoothness_report};
use ssfg::harness::{eval_with_scale, load_checkpoint, run_experiment, save_checkpoint, ExperimentConfig, MetricsRecord};

#[derive(Parser)]
#[command(name = "ssfg", version, about = "Train and inspect graph networks with stochastic feature/gradient scaling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment, writing JSON-lines metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// `key=value`, dotted keys for nested fields; repeatable.
        #[arg(long = "override")]
        overrides: Vec<String>,
        /// Metrics destination; stdout when absent.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Writes `seed<N>.json` + `seed<N>.bin` for each seed's best model.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Generate a dataset from a generator spec.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint's test split under constant test-time scales.
    SweepTestScale {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.8,0.9,1.0,1.1,1.2")]
        scales: Vec<f64>,
    },
    /// Smooth each graph's input features k times and report how they collapse.
    Diagnose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,8,16")]
        k: Vec<usize>,
    },
}

fn print_line(out: &mut dyn Write, value: &serde_json::Value) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string(value)?)?;
    Ok(())
}

fn train(config: PathBuf, overrides: Vec<String>, metrics: Option<PathBuf>, checkpoint_dir: Option<PathBuf>) -> Result<()> {
    let cfg = ExperimentConfig::load(&config, &overrides)
        .with_context(|| format!("loading config {}", config.display()))?;
    let mut out: Box<dyn Write> = match &metrics {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    };
    let result = run_experiment(&cfg, &mut |r: &MetricsRecord| {
        let line = serde_json::to_string(r).map_err(|e| ssfg::Error::Parse { record: None, message: e.to_string() })?;
        writeln!(out, "{line}")?;
        Ok(())
    })?;
    print_line(&mut out, &json!({ "summary": result.summary }))?;
    out.flush()?;
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(&dir)?;
        for run in &result.runs {
            save_checkpoint(&run.model, dir.join(format!("seed{}.json", run.seed)))?;
        }
    }
    Ok(())
}

fn gen_data(spec: PathBuf, out: PathBuf) -> Result<()> {
    let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec: GeneratorSpec = serde_json::from_str(&text).context("parsing generator spec")?;
    let data = spec.generate()?;
    save_dataset(&data, &out)?;
    Ok(())
}

fn sweep(model: PathBuf, data: PathBuf, scales: Vec<f64>) -> Result<()> {
    if scales.is_empty() {
        bail!("no scales given");
    }
    let model = load_checkpoint(&model)?;
    let data = load_dataset(&data)?;
    let mut out = io::stdout().lock();
    for row in eval_with_scale(&model, &data, &scales)? {
        print_line(&mut out, &serde_json::to_value(row)?)?;
    }
    Ok(())
}

fn diagnose(data: PathBuf, ks: Vec<usize>) -> Result<()> {
    let data = load_dataset(&data)?;
    let graphs = (0..data.graphs.len())
        .map(|i| data.graph(i).map(|g| g.add_self_loops()))
        .collect::<ssfg::Result<Vec<_>>>()?;
    let mut out = io::stdout().lock();
    for k in ks {
        let (mut dist, mut mad, mut stat, mut stat_n) = (0.0, 0.0, 0.0, 0usize);
        for g in &graphs {
            let h = power_smooth(g, g.node_features(), k)?;
            let r = smoothness_report(0, &h, g)?;
            dist += r.mean_pairwise_distance;
            mad += r.mad;
            if let Some(s) = r.distance_to_stationary {
                stat += s;
                stat_n += 1;
            }
        }
        let n = graphs.len().max(1) as f64;
        print_line(
            &mut out,
            &json!({
                "k": k,
                "mean_pairwise_distance": dist / n,
                "mad": mad / n,
                "distance_to_stationary": stat / stat_n.max(1) as f64,
            }),
        )?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, overrides, metrics, checkpoint_dir } => train(config, overrides, metrics, checkpoint_dir),
        Command::GenData { spec, out } => gen_data(spec, out),
        Command::SweepTestScale { model, data, scales } => sweep(model, data, scales),
        Command::Diagnose { data, k } => diagnose(data, k),
    }
}
