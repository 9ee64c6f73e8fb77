use std::path::PathBuf;
use std::process::ExitCode;

use benignadv::experiment::{
    ntk_sweep, render_conditions, report_conditions, run_experiment, tradeoff_curve,
    ExperimentConfig, ResultsTable, Scenario, TradeoffSummary,
};
use benignadv::Error;
use clap::{Args, Parser, Subcommand};

/// Standard and adversarial risk sweeps for ridge and NTK regression.
#[derive(Parser)]
#[command(name = "benignadv", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a builtin scenario (example1, example2, ntk_example).
    Repro {
        scenario: Scenario,
        #[command(flatten)]
        o: Overrides,
    },
    /// λ-sweep of a linear scenario from a TOML config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        o: Overrides,
    },
    /// Check the scenario's conditions along its n-grid.
    Conditions {
        #[arg(long)]
        config: PathBuf,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        o: Overrides,
    },
    /// NTK fixed-point sweep from a TOML config.
    NtkSweep {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        o: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    /// Comma-separated regularization values.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV path; the JSON goes next to it.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Abort on the first numerical failure instead of writing error rows.
    #[arg(long)]
    strict: bool,
}

impl Overrides {
    fn apply(self, c: &mut ExperimentConfig) -> benignadv::Result<()> {
        if let Some(v) = self.n_grid {
            c.n_grid = v;
        }
        if let Some(v) = self.lambda_grid {
            c.lambda_grid = Some(v);
        }
        if let Some(v) = self.budget {
            c.budget = v;
        }
        if let Some(v) = self.trials {
            c.trials = v;
        }
        if let Some(v) = self.replicates {
            c.replicates = v;
        }
        if let Some(v) = self.seed {
            c.master_seed = v;
        }
        if let Some(v) = self.output {
            c.output = Some(v);
        }
        c.strict |= self.strict;
        c.validate()
    }
}

fn load(path: &PathBuf, o: Overrides) -> benignadv::Result<ExperimentConfig> {
    let mut c = ExperimentConfig::from_file(path)?;
    o.apply(&mut c)?;
    Ok(c)
}

fn print_table(c: &ExperimentConfig, t: &ResultsTable) {
    let failed = t.rows.iter().filter(|r| r.error.is_some()).count();
    println!("{} rows ({failed} failed)", t.rows.len());
    if let Some(p) = &c.output {
        println!("wrote {} and {}", p.display(), p.with_extension("json").display());
    }
}

fn print_summary(s: &[TradeoffSummary]) {
    println!("{:>8}  {:>12}  {:>12}", "n", "objective", "argmin λ");
    for r in s {
        let arg = benignadv::experiment::median(&r.argmin_lambda);
        println!("{:>8}  {:>12.5e}  {:>12.4e}", r.n, r.objective_min, arg);
        for w in &r.warnings {
            println!("          warning: {w}");
        }
    }
}

fn linear(c: &ExperimentConfig) -> benignadv::Result<()> {
    if c.budget > 0.0 {
        let (t, s) = tradeoff_curve(c)?;
        print_table(c, &t);
        print_summary(&s);
    } else {
        let t = run_experiment(c)?;
        print_table(c, &t);
    }
    Ok(())
}

fn run(cli: Cli) -> benignadv::Result<()> {
    match cli.cmd {
        Cmd::Repro { scenario, o } => {
            let mut c = ExperimentConfig::builtin(scenario)?;
            o.apply(&mut c)?;
            if c.scenario.is_ntk() {
                print_table(&c, &ntk_sweep(&c)?);
                Ok(())
            } else {
                linear(&c)
            }
        }
        Cmd::Sweep { config, o } => {
            let c = load(&config, o)?;
            if c.scenario.is_ntk() {
                return Err(Error::Config {
                    path: "scenario".into(),
                    reason: "sweep needs a linear scenario; use ntk-sweep".into(),
                });
            }
            linear(&c)
        }
        Cmd::Conditions { config, json, o } => {
            let c = load(&config, o)?;
            let r = report_conditions(&c)?;
            if json {
                let s = serde_json::to_string_pretty(&r).map_err(|e| Error::Parse(e.to_string()))?;
                println!("{s}");
            } else {
                print!("{}", render_conditions(&r));
            }
            Ok(())
        }
        Cmd::NtkSweep { config, o } => {
            let c = load(&config, o)?;
            print_table(&c, &ntk_sweep(&c)?);
            Ok(())
        }
    }
}

/// 2 for configuration and parse errors, 1 for I/O, 3 for numerical failures.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Parse(_) => 2,
        Error::Io(_) => 1,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
