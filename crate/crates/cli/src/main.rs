//! `psdsf`: run allocation mechanisms, verify and audit allocations, and
//! simulate the distributed procedure from JSON scenario files.
//!
//! Exit status: 0 on success, 1 when a verification or property check
//! fails, 2 on bad input.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use psdsf::kernel::{gamma_matrix, verify_psdsf_rdm, verify_psdsf_tdm};
use psdsf::mechanism::{Mechanism, Outcome};
use psdsf::properties::{
    check_bottleneck_fairness, check_envy_freeness, check_pareto, check_sharing_incentive,
    check_single_resource_fairness, strategy_harness, PropertyReport,
};
use psdsf::report::{alloc_csv, fmt_num, parse_alloc_csv, table_csv, trace_csv};
use psdsf::scenario::{sim_config_from_path, Scenario};
use psdsf::sim::{run_simulation, sample_feasible};
use psdsf::{Allocation, Mode, Verdict};

#[derive(Parser)]
#[command(
    name = "psdsf",
    version,
    about = "Per-server dominant-share fair allocation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one mechanism and write its allocation as CSV.
    Allocate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_parser = parse_mechanism)]
        mechanism: Mechanism,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check an allocation against a PS-DSF characterization.
    Verify {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        alloc: PathBuf,
        /// 1: resource division, 2: time division.
        #[arg(long, value_enum)]
        theorem: Theorem,
    },
    /// Audit an allocation for the sharing properties.
    Properties {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        alloc: PathBuf,
        /// Mechanism that produced the allocation; enables the misreport
        /// harness and fixes the sharing mode.
        #[arg(long, value_parser = parse_mechanism)]
        mechanism: Option<Mechanism>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Simulate the cluster over time and write utilization as CSV.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several mechanisms and tabulate task totals.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', value_parser = parse_mechanism, required = true)]
        mechanisms: Vec<Mechanism>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Theorem {
    #[value(name = "1")]
    Rdm,
    #[value(name = "2")]
    Tdm,
}

fn parse_mechanism(s: &str) -> Result<Mechanism, String> {
    s.parse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
}

fn load(path: &Path) -> Result<Scenario> {
    Scenario::from_path(path).with_context(|| format!("reading scenario {}", path.display()))
}

fn load_alloc(scenario: &Scenario, path: &Path) -> Result<Allocation> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_alloc_csv(scenario, &text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_mechanism(scenario: &Scenario, m: Mechanism) -> Result<Outcome> {
    m.run(&scenario.spec)
        .with_context(|| format!("running {m}"))
}

fn print_verdict(scenario: &Scenario, label: &str, verdict: &Verdict) -> Status {
    if verdict.passed() {
        println!("{label}: pass");
        Status::Pass
    } else {
        println!("{label}: FAIL");
        for v in verdict.violations() {
            let mut line = format!("  {}", scenario.describe(v));
            if v.measured.is_finite() {
                line += &format!(" (measured {}", fmt_num(v.measured));
                if v.threshold.is_finite() {
                    line += &format!(", threshold {}", fmt_num(v.threshold));
                }
                line.push(')');
            }
            println!("{line}");
        }
        Status::Fail
    }
}

fn print_property(scenario: &Scenario, label: &str, report: &PropertyReport) -> Status {
    if !report.applicable {
        let why = report.witness.as_ref().map_or("", |w| w.note.as_str());
        println!("{label}: not applicable ({why})");
        return Status::Pass;
    }
    let status = print_verdict(scenario, label, &report.verdict);
    if let Some(w) = report.witness.as_ref().filter(|_| status == Status::Fail) {
        let users: Vec<&str> = w
            .users
            .iter()
            .map(|&n| scenario.user_ids[n].as_str())
            .collect();
        let values: Vec<String> = w.values.iter().map(|v| fmt_num(*v)).collect();
        println!(
            "  witness: users [{}] values [{}] {}",
            users.join(" "),
            values.join(" "),
            w.note
        );
    }
    status
}

fn execute(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Allocate {
            scenario,
            mechanism,
            out,
        } => {
            let scenario = load(&scenario)?;
            let outcome = run_mechanism(&scenario, mechanism)?;
            let text = match &outcome.allocation {
                Some(alloc) => alloc_csv(&scenario, alloc, outcome.converged),
                None => totals_only(&scenario, &outcome),
            };
            emit(out.as_deref(), &text)?;
            if !outcome.converged {
                eprintln!("warning: {mechanism} did not converge within its budget");
            }
            Ok(Status::Pass)
        }
        Command::Verify {
            scenario,
            alloc,
            theorem,
        } => {
            let scenario = load(&scenario)?;
            let alloc = load_alloc(&scenario, &alloc)?;
            let gamma = gamma_matrix(&scenario.spec);
            let (label, verdict) = match theorem {
                Theorem::Rdm => (
                    "theorem 1 (resource division)",
                    verify_psdsf_rdm(&scenario.spec, &gamma, &alloc),
                ),
                Theorem::Tdm => (
                    "theorem 2 (time division)",
                    verify_psdsf_tdm(&scenario.spec, &gamma, &alloc),
                ),
            };
            Ok(print_verdict(&scenario, label, &verdict))
        }
        Command::Properties {
            scenario,
            alloc,
            mechanism,
            trials,
            seed,
        } => {
            let scenario = load(&scenario)?;
            let alloc = load_alloc(&scenario, &alloc)?;
            let spec = &scenario.spec;
            let gamma = gamma_matrix(spec);
            let mode = match mechanism {
                Some(m) => m.mode(spec),
                None if spec.gamma_override.is_some() => Mode::Tdm,
                None => Mode::Rdm,
            };
            println!("mode: {}", mode.as_str());
            let mut reports: Vec<(String, PropertyReport)> = [
                check_sharing_incentive(spec, &gamma, &alloc.totals()),
                check_envy_freeness(spec, &gamma, &alloc),
                check_pareto(spec, &gamma, &alloc, mode),
                check_bottleneck_fairness(spec, &gamma, &alloc, mode),
                check_single_resource_fairness(spec, &gamma, &alloc, mode),
            ]
            .into_iter()
            .map(|r| (r.property.to_string(), r))
            .collect();
            if let Some(m) = mechanism {
                for (n, id) in scenario.user_ids.iter().enumerate() {
                    let r = strategy_harness(spec, m, n, trials, seed);
                    reports.push((format!("{} {id}", r.property), r));
                }
            }
            let mut status = Status::Pass;
            for (label, r) in &reports {
                if print_property(&scenario, label, r) == Status::Fail {
                    status = Status::Fail;
                }
            }
            Ok(status)
        }
        Command::Simulate {
            scenario,
            config,
            out,
        } => {
            let scenario = load(&scenario)?;
            let config = sim_config_from_path(&config)
                .with_context(|| format!("reading config {}", config.display()))?;
            let trace = run_simulation(&scenario.spec, &scenario.events, &config)?;
            emit(out.as_deref(), &trace_csv(&scenario, &trace))?;
            let infeasible = trace
                .samples
                .iter()
                .filter(|s| !sample_feasible(&scenario.spec, trace.mode, s))
                .count();
            let unconverged = trace.samples.iter().filter(|s| !s.converged).count();
            eprintln!(
                "{} samples ({} mode), {infeasible} infeasible, {unconverged} unconverged",
                trace.samples.len(),
                trace.mode.as_str()
            );
            Ok(if infeasible == 0 {
                Status::Pass
            } else {
                Status::Fail
            })
        }
        Command::Compare {
            scenario,
            mechanisms,
            out,
        } => {
            let scenario = load(&scenario)?;
            let mut rows = Vec::with_capacity(mechanisms.len());
            for m in mechanisms {
                rows.push((m.name().to_string(), run_mechanism(&scenario, m)?));
            }
            emit(out.as_deref(), &table_csv(&scenario, &rows))?;
            Ok(Status::Pass)
        }
    }
}

/// alloc.csv for mechanisms that only determine task totals.
fn totals_only(scenario: &Scenario, outcome: &Outcome) -> String {
    let mut text = String::from("user,server,tasks\n");
    for (id, x) in scenario.user_ids.iter().zip(&outcome.totals) {
        text.push_str(&format!("#totals,{id},{}\n", fmt_num(*x)));
    }
    text.push_str(&format!("#converged,{}\n", outcome.converged));
    text
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(Status::Pass) => ExitCode::SUCCESS,
        Ok(Status::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_mechanism_is_a_parse_error() {
        let args = [
            "psdsf",
            "allocate",
            "--scenario",
            "x.json",
            "--mechanism",
            "drf",
        ];
        assert!(Cli::try_parse_from(args).is_err());
        let args = [
            "psdsf",
            "compare",
            "--scenario",
            "x.json",
            "--mechanisms",
            "tsf,cdrfh",
        ];
        assert!(Cli::try_parse_from(args).is_ok());
    }
}
