use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use koopflow::extensions::ExtensionVariant;
use koopflow::gridsim::{
    fault_schedule, generate_dataset, GridModel, Split, DEFAULT_DT, DEFAULT_SUSCEPTANCE, DEFAULT_T_END,
};
use koopflow::pipeline::{
    ablate, compare, compare_csv, compare_text, evaluate_run, plotdata, plotdata_csv, run_training, EvalOptions,
    ExperimentConfig,
};
use koopflow::{Error, Result};

#[derive(Parser)]
#[command(
    name = "koopflow",
    version,
    about = "Koopman models with invertible encoders on grid frequency data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate faulted trajectories and write a dataset directory.
    Generate {
        /// `14` or `ieee14` for the IEEE 14-bus graph, `ring:N` for an N-bus ring.
        #[arg(long, default_value = "14")]
        buses: Topology,
        #[arg(long, default_value_t = 11)]
        faults: usize,
        #[arg(long, default_value_t = DEFAULT_DT)]
        dt: f64,
        #[arg(long, default_value_t = DEFAULT_T_END)]
        t_end: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// `a:b` ratio or train fraction.
        #[arg(long, default_value = "9:2")]
        split: String,
    },
    /// Train a model described by a JSON config and write its run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-evaluate a finished run and print its report as JSON.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        /// Re-encode the true state every k steps instead of a free rollout.
        #[arg(long)]
        teacher_forcing_interval: Option<usize>,
    },
    /// Identity encoder plus an optional extension, `K` fitted by EDMD.
    Ablate {
        /// Extension variant or `none`.
        #[arg(long, default_value = "none")]
        extension: String,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 4)]
        delay: usize,
        #[arg(long)]
        extension_dim: Option<usize>,
        #[arg(long, default_value_t = 1e-8)]
        ridge: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the CSV row to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate reports from run directories (or directories of runs).
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Write the table as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Ground truth and rollout prediction for one bus of one trajectory.
    Plotdata {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        trajectory: String,
        /// Zero-based bus index.
        #[arg(long)]
        bus: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy)]
enum Topology {
    Ieee14,
    Ring(usize),
}

impl FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "14" | "ieee14" => Ok(Topology::Ieee14),
            _ => match s.strip_prefix("ring:").map(str::parse::<usize>) {
                Some(Ok(n)) if n >= 3 => Ok(Topology::Ring(n)),
                _ => Err(format!("unknown topology {s:?}; use 14, ieee14 or ring:N with N >= 3")),
            },
        }
    }
}

impl Topology {
    fn build(self, seed: u64) -> GridModel {
        match self {
            Topology::Ieee14 => GridModel::ieee14(seed),
            Topology::Ring(n) => {
                let edges: Vec<(usize, usize)> = (1..=n).map(|i| (i, i % n + 1)).collect();
                GridModel::from_edges(n, &edges, DEFAULT_SUSCEPTANCE, seed)
            }
        }
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate {
            buses,
            faults,
            dt,
            t_end,
            seed,
            out,
            split,
        } => {
            let split: Split = split.parse()?;
            let model = buses.build(seed);
            let schedule = fault_schedule(model.n_bus(), faults, seed);
            let ds = generate_dataset(&model, &schedule, seed, dt, t_end, split)?;
            ds.save(&out)?;
            println!(
                "wrote {} train and {} test trajectories to {}",
                ds.train.len(),
                ds.test.len(),
                out.display()
            );
        }
        Command::Train { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = run_training(&cfg)?;
            println!("run directory: {}", out.dir.display());
            print!("{}", out.report.csv());
        }
        Command::Evaluate {
            run,
            teacher_forcing_interval,
        } => {
            if teacher_forcing_interval == Some(0) {
                return Err(Error::InvalidArgument("teacher forcing interval must be >= 1".into()));
            }
            let opts = teacher_forcing_interval.map(|k| EvalOptions {
                teacher_forcing_interval: Some(k),
            });
            let report = evaluate_run(&run, opts)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Ablate {
            extension,
            dataset,
            delay,
            extension_dim,
            ridge,
            seed,
            out,
        } => {
            let mut cfg = ExperimentConfig::new(dataset);
            cfg.extension = match extension.as_str() {
                "none" => None,
                name => Some(name.parse::<ExtensionVariant>()?),
            };
            cfg.delay = delay;
            cfg.extension_dim = extension_dim;
            cfg.ridge = ridge;
            cfg.seed = seed;
            cfg.validate()?;
            let report = ablate(&cfg)?;
            print!("{}", report.csv());
            if let Some(p) = out {
                write_or_print(Some(&p), &report.csv())?;
            }
        }
        Command::Compare { runs, csv } => {
            let rows = compare(&runs)?;
            print!("{}", compare_text(&rows));
            if let Some(p) = csv {
                write_or_print(Some(&p), &compare_csv(&rows))?;
            }
        }
        Command::Plotdata {
            run,
            trajectory,
            bus,
            out,
        } => {
            let rows = plotdata(&run, &trajectory, bus)?;
            write_or_print(out.as_deref(), &plotdata_csv(&rows))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
