use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use neural_gail::envs;
use neural_gail::experiment::{self, ExperimentSpec, Overrides, RunCheckpoint, OUTPUT_ROOT_ENV};
use neural_gail::GailError;

#[derive(Parser)]
#[command(name = "gail", version, about = "Neural GAIL experiments on finite embedded MDPs")]
struct Cli {
    /// Log at info level (RUST_LOG takes precedence).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (or a seed sweep) and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; relative paths go under $GAIL_OUTPUT_ROOT if set.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "T")]
        t: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long = "N")]
        n: Option<usize>,
        /// Inclusive seed range, e.g. `seeds=1..5`.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Recompute R-distances for a saved run.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Linearization gap of the two-layer network as a function of width.
    ProbeLinearization {
        #[arg(long = "m-list", value_delimiter = ',', default_value = "64,256,1024,4096")]
        m_list: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 200)]
        inputs: usize,
        /// Bundled environment whose embedded pairs are the probe inputs.
        #[arg(long, default_value = "grid3x3")]
        env: String,
    },
}

fn output_root() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from)
}

fn run(config: &Path, overrides: Overrides, sweep: Option<&str>) -> Result<(), GailError> {
    let mut spec = ExperimentSpec::load(config)?;
    overrides.apply(&mut spec);
    let dir = experiment::resolve_output_dir(&spec, output_root().as_deref());
    match sweep {
        None => {
            let out = experiment::run_experiment(&spec, &dir)?;
            let s = &out.summary;
            println!(
                "{}: gap first/last quarter {:.4} / {:.4}, R-distance {:.4} (initial {:.4}) -> {}",
                s.name,
                s.convergence.first_quarter_mean,
                s.convergence.last_quarter_mean,
                s.r_distance_mixed,
                s.r_distance_initial,
                dir.display()
            );
            Ok(())
        }
        Some(arg) => {
            let seeds = experiment::parse_sweep(arg)?;
            // Validate once up front so a bad config fails before any run starts.
            experiment::prepare(&spec)?;
            let mut first_err = None;
            for (seed, res) in experiment::run_sweep(&spec, &seeds, &dir) {
                match res {
                    Ok(s) => println!("seed {seed}: gap ratio {:.4}, R-distance {:.4}", s.gap_ratio, s.r_distance_mixed),
                    Err(e) => {
                        eprintln!("seed {seed}: {e}");
                        first_err.get_or_insert(e);
                    }
                }
            }
            first_err.map_or(Ok(()), Err)
        }
    }
}

fn eval(checkpoint: &Path, config: &Path, out: Option<&Path>) -> Result<(), GailError> {
    let spec = ExperimentSpec::load(config)?;
    let ck = RunCheckpoint::load(checkpoint)?;
    let report = experiment::eval_checkpoint(&spec, &ck)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn probe(m_list: &[usize], radius: f64, seeds: usize, inputs: usize, env: &str) -> Result<(), GailError> {
    if m_list.is_empty() {
        return Err(GailError::Config("--m-list is empty".into()));
    }
    let mdp = envs::by_name(env)?;
    let points = mdp.embedded_points();
    let rows = experiment::probe_scaling(&points, mdp.dim(), m_list, radius, seeds, inputs, 0)?;
    println!("m,mean_gap,std_err");
    for r in rows {
        println!("{},{},{}", r.m, r.mean_gap, r.std_err);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            t,
            m,
            n,
            sweep,
        } => run(&config, Overrides { seed, t, m, n, out }, sweep.as_deref()),
        Command::Eval { checkpoint, config, out } => eval(&checkpoint, &config, out.as_deref()),
        Command::ProbeLinearization {
            m_list,
            radius,
            seeds,
            inputs,
            env,
        } => probe(&m_list, radius, seeds, inputs, &env),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
