//! `streamcov` command-line driver.
//!
//! Subcommands:
//!
//! - `calibrate`: contamination parameters reaching given divergences
//! - `simulate`: write one simulated stream as CSV
//! - `run`: run the estimators on simulated replicates or an input file
//! - `bench`: time the methods over a grid of sizes
//! - `resume`: continue a saved estimator state on new observations

mod config;
mod input;
mod output;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use streamcov::experiment::{
    bench, replicate_data, run_all, run_on_dataset, summarize, summarize_with, Dataset, Method,
    RunConfig, BENCH_HEADER,
};
use streamcov::metrics::Trajectory;
use streamcov::simgen::{calibrate, write_csv, Knob, LabeledSample};
use streamcov::{NaiveState, RobustState};

use config::{Extras, RunArgs};

#[derive(Parser)]
#[command(name = "streamcov", version, about = "Robust streaming covariance estimation and outlier detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print k, l and rho1 reaching each target divergence.
    Calibrate {
        /// Target divergences KL(F0 || F1).
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 5.0, 10.0, 25.0])]
        kl: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        d: usize,
    },
    /// Write one simulated replicate as `x_1..x_d,label` CSV.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0)]
        replicate: usize,
        /// Output file, `-` for standard output.
        #[arg(long, short, default_value = "-")]
        output: PathBuf,
    },
    /// Run the selected methods and write result files to the output directory.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Observations to use instead of simulating (`-` for standard input).
        #[arg(long)]
        input: Option<PathBuf>,
        /// The last input column holds 0/1 labels even without a header.
        #[arg(long)]
        labeled: bool,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also save the final estimator states of every replicate.
        #[arg(long)]
        snapshots: bool,
    },
    /// Time the methods on clean streams for every (n, d) pair.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [10_000])]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 100])]
        d: Vec<usize>,
        /// Streaming block size (default: d).
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = ["online".to_string(), "streaming".to_string(), "naive".to_string()])]
        methods: Vec<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the table to this file.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Continue a saved state on new observations.
    Resume {
        /// Snapshot written by `run --snapshots` or a previous `resume`.
        #[arg(long)]
        snapshot: PathBuf,
        /// Observations (`-` for standard input).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        labeled: bool,
        #[arg(long, default_value = "resumed")]
        out: PathBuf,
    },
}

fn main() {
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate { kl, d } => cmd_calibrate(&kl, d),
        Command::Simulate { run, replicate, output } => cmd_simulate(&run, replicate, &output),
        Command::Run {
            run,
            input,
            labeled,
            out,
            snapshots,
        } => cmd_run(&run, input.as_deref(), labeled, out, snapshots),
        Command::Bench {
            n,
            d,
            batch,
            methods,
            seed,
            output,
        } => cmd_bench(&n, &d, batch, &methods, seed, output.as_deref()),
        Command::Resume {
            snapshot,
            input,
            labeled,
            out,
        } => cmd_resume(&snapshot, &input, labeled, &out),
    }
}

fn cmd_calibrate(targets: &[f64], d: usize) -> Result<()> {
    let mut rows = Vec::new();
    for &kl in targets {
        if !(kl >= 0.0) {
            bail!("KL target {kl} must be non-negative");
        }
        let k = calibrate(kl, Knob::K, d)?;
        let l = calibrate(kl, Knob::L, d)?;
        let rho1 = calibrate(kl, Knob::Rho1, d)?;
        rows.push(format!("{kl},{k},{l},{rho1}"));
    }
    let mut out = std::io::stdout().lock();
    writeln!(out, "kl,k,l,rho1")?;
    for r in rows {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

fn set_threads(extras: &Extras) {
    if let Some(t) = extras.threads {
        // Read by the worker pool when it first starts.
        std::env::set_var("RAYON_NUM_THREADS", t.to_string());
    }
}

fn cmd_simulate(args: &RunArgs, replicate: usize, output: &Path) -> Result<()> {
    let (config, _) = args.resolve()?;
    config.validate()?;
    let data = replicate_data(&config, replicate)?;
    let labels = data.labels.clone().unwrap_or_default();
    let samples: Vec<LabeledSample> = data
        .xs
        .into_iter()
        .zip(labels)
        .map(|(x, is_outlier)| LabeledSample { x, is_outlier })
        .collect();
    output::with_writer(output, |w| write_csv(w, &samples))
}

fn cmd_run(args: &RunArgs, input: Option<&Path>, labeled: bool, out: Option<PathBuf>, snapshots: bool) -> Result<()> {
    let (mut config, extras) = args.resolve()?;
    set_threads(&extras);
    let out = out.or(extras.out).unwrap_or_else(|| PathBuf::from("out"));

    let (outcomes, summary) = match input {
        None => {
            let outcomes = run_all(&config)?;
            let summary = summarize(&config, &outcomes);
            (outcomes, summary)
        }
        Some(path) => {
            let (xs, labels) = input::read_all(path, labeled)?;
            config.d = xs[0].len();
            config.n = xs.len();
            config.scenario = None;
            config.methods.retain(|m| *m != Method::Oracle);
            config.validate()?;
            let data = Dataset {
                xs,
                labels,
                truth: None,
            };
            let outcome = run_on_dataset(&config, 0, &data)?;
            let header = vec![
                ("input".to_string(), path.display().to_string()),
                ("d".to_string(), config.d.to_string()),
                ("n".to_string(), config.n.to_string()),
                ("labeled".to_string(), data.labels.is_some().to_string()),
            ];
            let outcomes = vec![outcome];
            let summary = summarize_with(&header, &outcomes);
            (outcomes, summary)
        }
    };

    output::write_run(&out, &outcomes, &summary)?;
    if snapshots {
        output::write_snapshots(&out, &outcomes)?;
    }
    eprintln!("wrote results to {}", out.display());
    Ok(())
}

fn cmd_bench(
    ns: &[usize],
    ds: &[usize],
    batch: Option<usize>,
    methods: &[String],
    seed: u64,
    output: Option<&Path>,
) -> Result<()> {
    let methods: Vec<Method> = methods
        .iter()
        .map(|m| m.parse())
        .collect::<std::result::Result<_, _>>()
        .context("methods")?;
    let base = RunConfig {
        r: 0.0,
        seed,
        ..RunConfig::default()
    };
    let mut lines = vec![BENCH_HEADER.to_string()];
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{BENCH_HEADER}")?;
    for &n in ns {
        for &d in ds {
            for row in bench(&base, n, d, batch, &methods)? {
                writeln!(stdout, "{}", row.csv())?;
                lines.push(row.csv());
            }
        }
    }
    if let Some(path) = output {
        output::write_file(path, &(lines.join("\n") + "\n"))?;
    }
    Ok(())
}

enum Saved {
    Robust(Box<RobustState>),
    Naive(Box<NaiveState>),
}

fn cmd_resume(snapshot: &Path, input: &Path, labeled: bool, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(snapshot).with_context(|| format!("reading {}", snapshot.display()))?;
    let mut state = match RobustState::from_snapshot(&text) {
        Ok(s) => Saved::Robust(Box::new(s)),
        Err(robust_err) => match NaiveState::from_snapshot(&text) {
            Ok(s) => Saved::Naive(Box::new(s)),
            Err(_) => return Err(robust_err).with_context(|| format!("loading {}", snapshot.display())),
        },
    };
    let method = match &state {
        Saved::Robust(s) if s.config.mode == streamcov::Mode::Online => Method::Online,
        Saved::Robust(_) => Method::Streaming,
        Saved::Naive(_) => Method::Naive,
    };
    let block = match &state {
        Saved::Robust(s) => match s.config.mode {
            streamcov::Mode::Streaming { batch } => batch,
            streamcov::Mode::Online => 1,
        },
        Saved::Naive(_) => 1,
    };

    let mut trajectory = Trajectory::new(method.name(), u64::MAX);
    let mut records = Vec::new();
    let mut pending: Vec<(Vec<f64>, Option<bool>)> = Vec::with_capacity(block);
    let mut flush = |pending: &mut Vec<(Vec<f64>, Option<bool>)>, state: &mut Saved| -> Result<()> {
        if pending.is_empty() {
            return Ok(());
        }
        let xs: Vec<&[f64]> = pending.iter().map(|(x, _)| x.as_slice()).collect();
        let recs = match state {
            Saved::Robust(s) => s.process(&xs)?,
            Saved::Naive(s) => s.process(&xs)?,
        };
        for (mut r, (_, label)) in recs.into_iter().zip(pending.drain(..)) {
            r.truth = label;
            trajectory.observe(&r);
            records.push(r);
        }
        Ok(())
    };
    for row in input::RowReader::open(input, labeled)? {
        let row = row?;
        pending.push((row.x, row.label));
        if pending.len() == block {
            flush(&mut pending, &mut state)?;
        }
    }
    flush(&mut pending, &mut state)?;

    let (snapshot_text, log10_det) = match &state {
        Saved::Robust(s) => (s.to_snapshot()?, s.log10_determinant()),
        Saved::Naive(s) => (s.to_snapshot()?, s.log10_determinant()),
    };
    trajectory.checkpoint(None, log10_det);
    output::write_resume(out, method, &records, &trajectory, &snapshot_text)?;
    eprintln!("processed {} observations; wrote {}", records.len(), out.display());
    Ok(())
}
