use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use vaxledger::chain::Stats;
use vaxledger::scenario::{self, RunOptions, RunReport, Scenario};

/// Runs scripted vaccine-passport protocol scenarios against the simulated chain.
#[derive(Parser)]
#[command(name = "vaxledger", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file. The transcript goes to stdout unless --log-dir is set.
    Run {
        file: PathBuf,
        #[command(flatten)]
        opts: RunFlags,
    },
    /// Run every *.json scenario in a directory, in parallel.
    Batch {
        dir: PathBuf,
        #[command(flatten)]
        opts: RunFlags,
    },
    /// Print the statistics recorded at the end of a transcript.
    Stats { transcript: PathBuf },
}

#[derive(Args, Clone)]
struct RunFlags {
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write each transcript to <DIR>/<scenario>.jsonl.
    #[arg(long, value_name = "DIR")]
    log_dir: Option<PathBuf>,
    /// Stop a run at the first invariant violation.
    #[arg(long)]
    strict: bool,
}

impl RunFlags {
    fn options(&self) -> RunOptions {
        RunOptions { seed: self.seed, strict: self.strict }
    }
}

const EXIT_PARSE: u8 = 2;

enum Outcome {
    Ran(Box<RunReport>),
    Unparsable(String),
}

impl Outcome {
    fn code(&self) -> u8 {
        match self {
            Outcome::Ran(r) => r.exit_code() as u8,
            Outcome::Unparsable(_) => EXIT_PARSE,
        }
    }
}

fn run_file(path: &Path, flags: &RunFlags) -> Outcome {
    let scenario = match Scenario::load(path) {
        Ok(s) => s,
        Err(e) => return Outcome::Unparsable(format!("{}: {e}", path.display())),
    };
    match scenario::run(&scenario, flags.options()) {
        Ok(report) => Outcome::Ran(Box::new(report)),
        Err(e) => Outcome::Unparsable(format!("{}: {e}", path.display())),
    }
}

fn summarize(report: &RunReport, err: &mut dyn Write) {
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    let s = &report.stats;
    let _ = writeln!(
        err,
        "{}: {verdict} (seed {}, vaccinated {}/{}, passports {}, verifications {}/{})",
        report.scenario.name, report.seed, s.vaccinated, s.tokened, s.vp_issued, s.verifications_passed, s.verifications
    );
    for v in &report.violations {
        let _ = match v.step {
            Some(i) => writeln!(err, "  invariant violation at step {i}: {}", v.message),
            None => writeln!(err, "  invariant violation at end of run: {}", v.message),
        };
    }
    for f in &report.expectation_failures {
        let _ = writeln!(err, "  expectation failed at step {}: {}", f.step.unwrap_or_default(), f.message);
    }
}

fn write_log(dir: &Path, report: &RunReport) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{}.jsonl", report.scenario.name));
    fs::write(&path, report.transcript()).with_context(|| format!("writing {}", path.display()))
}

fn emit(outcome: &Outcome, flags: &RunFlags, to_stdout: bool, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    match outcome {
        Outcome::Unparsable(msg) => {
            let _ = writeln!(err, "{msg}");
        }
        Outcome::Ran(report) => {
            match &flags.log_dir {
                Some(dir) => {
                    if let Err(e) = write_log(dir, report) {
                        let _ = writeln!(err, "{e:#}");
                        return 1;
                    }
                }
                None if to_stdout => {
                    let _ = write!(out, "{}", report.transcript());
                }
                None => {}
            }
            summarize(report, err);
        }
    }
    outcome.code()
}

fn scenario_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

fn print_stats(stats: &Stats, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "tokened            {}", stats.tokened)?;
    writeln!(out, "vaccinated         {}", stats.vaccinated)?;
    writeln!(out, "vp_issued          {}", stats.vp_issued)?;
    writeln!(out, "verifications      {}", stats.verifications)?;
    writeln!(out, "verifications_ok   {}", stats.verifications_passed)?;
    writeln!(out, "vaccinated_share   {:.3}", stats.vaccinated_fraction)?;
    for vc in &stats.vcs {
        writeln!(
            out,
            "{:<18} stock {} doses {} earned {}",
            vc.vc_id.to_string(),
            vc.vials_in_stock,
            vc.doses_administered,
            vc.money_earned
        )?;
    }
    Ok(())
}

/// Executes one command line, writing to `out` and `err`, and returns the
/// process exit code.
fn run_cli(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    match cli.command {
        Command::Run { file, opts } => emit(&run_file(&file, &opts), &opts, true, out, err),
        Command::Batch { dir, opts } => match scenario_files(&dir) {
            Err(e) => {
                let _ = writeln!(err, "{e:#}");
                EXIT_PARSE
            }
            Ok(files) => {
                let outcomes: Vec<Outcome> = files.par_iter().map(|f| run_file(f, &opts)).collect();
                let codes: Vec<u8> = outcomes.iter().map(|o| emit(o, &opts, false, out, err)).collect();
                let failed = codes.iter().filter(|&&c| c != 0).count();
                let _ = writeln!(err, "{} scenarios, {} failed", codes.len(), failed);
                codes.into_iter().max().unwrap_or(0)
            }
        },
        Command::Stats { transcript } => {
            let stats = fs::read_to_string(&transcript)
                .map_err(|e| e.to_string())
                .and_then(|text| scenario::stats_from_transcript(&text).map_err(|e| e.to_string()));
            match stats {
                Ok(stats) => match print_stats(&stats, out) {
                    Ok(()) => 0,
                    Err(_) => 1,
                },
                Err(e) => {
                    let _ = writeln!(err, "{}: {e}", transcript.display());
                    EXIT_PARSE
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = run_cli(cli, &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    ExitCode::from(code)
}
