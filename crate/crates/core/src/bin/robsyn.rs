use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robsyn::algorithm::{analyze, certify, run_dynamic_inner_approximation, RunConfig};
use robsyn::problem::Problem;
use robsyn::report::{self, write_report};

#[derive(Parser)]
#[command(name = "robsyn", version, about = "Parametric robust structured H-infinity synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Problem file (JSON).
    problem: PathBuf,
    /// Relative stopping tolerance of the outer loop.
    #[arg(long)]
    eps: Option<f64>,
    /// Random interior starts of the worst-case searches.
    #[arg(long)]
    starts: Option<usize>,
    /// Grid points per axis for certification.
    #[arg(long)]
    grid: Option<usize>,
    /// Seed for the multistart draws.
    #[arg(long)]
    seed: Option<u64>,
    /// Outer iteration limit.
    #[arg(long = "max-outer")]
    max_outer: Option<usize>,
}

#[derive(Args)]
struct Gains {
    /// Controller parameters, comma separated. Defaults to the problem's
    /// initial controller.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "from_report")]
    kappa: Option<Vec<f64>>,
    /// Take the controller parameters from a synthesis report.
    #[arg(long = "from-report")]
    from_report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the dynamic inner approximation.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Directory for report.json and the CSV tables; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record wall-clock timings in the report.
        #[arg(long)]
        timings: bool,
    },
    /// Worst-case programs at a fixed controller.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        gains: Gains,
    },
    /// Grid check plus stability and performance radii.
    Certify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        gains: Gains,
    },
    /// Per-start solver traces of the worst-case searches.
    Trace {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        gains: Gains,
    },
}

fn load(c: &Common) -> robsyn::Result<Problem> {
    let mut p = Problem::load(&c.problem)?;
    let o = &mut p.options;
    o.eps = c.eps.unwrap_or(o.eps);
    o.starts = c.starts.unwrap_or(o.starts);
    o.grid = c.grid.unwrap_or(o.grid);
    o.seed = c.seed.unwrap_or(o.seed);
    o.max_outer = c.max_outer.unwrap_or(o.max_outer);
    Ok(p)
}

fn kappa(p: &Problem, g: &Gains) -> robsyn::Result<Vec<f64>> {
    if let Some(k) = &g.kappa {
        return Ok(k.clone());
    }
    if let Some(path) = &g.from_report {
        let s = std::fs::read_to_string(path).map_err(|e| robsyn::Error::Io(format!("{}: {e}", path.display())))?;
        return Ok(report::from_json(&s)?.kappa);
    }
    Ok(p.initial_kappa())
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

fn run(cli: Cli) -> robsyn::Result<i32> {
    match cli.command {
        Command::Synth { common, out, timings } => {
            let p = load(&common)?;
            let mut config = RunConfig::from_options(&p.options);
            config.record_timings = timings;
            let r = run_dynamic_inner_approximation(&p, &config);
            match out {
                Some(dir) => {
                    for f in write_report(&r, Some(&p), &dir)? {
                        eprintln!("wrote {}", f.display());
                    }
                }
                None => println!("{}", report::to_json(&r)?),
            }
            eprintln!("termination: {}", r.termination);
            if let Some(m) = &r.message {
                eprintln!("{m}");
            }
            Ok(r.exit_code())
        }
        Command::Analyze { common, gains } => {
            let p = load(&common)?;
            let k = kappa(&p, &gains)?;
            let a = analyze(&p, &k, &RunConfig::from_options(&p.options))?;
            println!("{}", json(&a));
            Ok(if a.stability.flagged { 2 } else { 0 })
        }
        Command::Certify { common, gains } => {
            let p = load(&common)?;
            let k = kappa(&p, &gains)?;
            let c = certify(&p, &k, p.options.grid, &RunConfig::from_options(&p.options))?;
            println!("{}", json(&c));
            Ok(c.exit_code())
        }
        Command::Trace { common, gains } => {
            let p = load(&common)?;
            let k = kappa(&p, &gains)?;
            let a = analyze(&p, &k, &RunConfig::from_options(&p.options))?;
            let traces = serde_json::json!({
                "stability": a.stability.per_start,
                "performance": a.performance.map(|r| r.per_start),
            });
            println!("{}", json(&traces));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
