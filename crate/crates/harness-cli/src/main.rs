use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use harness_cli::{
    export_trace, load_scenario, read_trace, run_scenario, sweep, verify_trace, HarnessError,
    Report, SweepReport,
};

/// Directory reports land in when `--out` is not given.
const OUT_ENV: &str = "MEMDOS_OUT";

#[derive(Parser)]
#[command(name = "memdos-harness", version, about = "Memory-contention scenario harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write <name>.report.json.
    Run {
        /// Scenario file (TOML).
        scenario: PathBuf,
        /// Replace the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to $MEMDOS_OUT, then the working directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write <name>.trace.jsonl with every record.
        #[arg(long)]
        trace: bool,
        /// Permit oracle-built workloads and ground-truth probe checks.
        #[arg(long)]
        oracle: bool,
    },
    /// Run one scenario over a seed range and write <name>.sweep.json.
    Sweep {
        /// Scenario file (TOML).
        scenario: PathBuf,
        /// Half-open seed range, e.g. 0..20.
        #[arg(long)]
        seeds: String,
        /// Output directory (defaults to $MEMDOS_OUT, then the working directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a trace file: ordering, decision replay, record counts.
    Report {
        /// Trace file (line-delimited JSON).
        trace: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run { scenario, seed, out, trace, oracle } => {
            let mut config = load_scenario(&scenario)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            if oracle {
                config.oracle_checks = true;
            }
            let report = run_scenario(&config)?;
            print_report(&report);
            let dir = out_dir(out)?;
            let report_path = dir.join(format!("{}.report.json", report.scenario));
            write_json(&report_path, &report)?;
            println!("wrote {}", report_path.display());
            if trace {
                let trace_path = dir.join(format!("{}.trace.jsonl", report.scenario));
                export_trace(&report, &trace_path)?;
                println!("wrote {}", trace_path.display());
            }
            Ok(())
        }
        Command::Sweep { scenario, seeds, out } => {
            let config = load_scenario(&scenario)?;
            let seeds = parse_seed_range(&seeds)?;
            let report = sweep(&config, &seeds)?;
            print_sweep(&report);
            let dir = out_dir(out)?;
            let path = dir.join(format!("{}.sweep.json", report.scenario));
            write_json(&path, &report)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Report { trace } => {
            let records = read_trace(&trace)?;
            let summary = verify_trace(&records)?;
            println!(
                "trace {}: {} records ({} counter samples, {} ks decisions, \
                 {} phase changes, {} duty changes, {} probe results)",
                trace.display(),
                summary.records,
                summary.counter_samples,
                summary.ks_decisions,
                summary.phase_changes,
                summary.duty_changes,
                summary.probe_results,
            );
            println!("replayed {} decisions: all match", summary.replayed);
            Ok(())
        }
    }
}

fn out_dir(cli: Option<PathBuf>) -> Result<PathBuf, HarnessError> {
    let dir = cli
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|source| HarnessError::Io { path: dir.display().to_string(), source })?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), HarnessError> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| HarnessError::Internal(format!("report encoding: {e}")))?;
    std::fs::write(path, body)
        .map_err(|source| HarnessError::Io { path: path.display().to_string(), source })
}

/// Parses `A..B` (half-open) or `A..=B` (inclusive) into the seed list.
fn parse_seed_range(text: &str) -> Result<Vec<u64>, HarnessError> {
    let bad = |message: &str| HarnessError::Config {
        field: "seeds".into(),
        message: format!("{message} (expected a range like 0..20, got \"{text}\")"),
    };
    let (lo, hi, inclusive) = if let Some((lo, hi)) = text.split_once("..=") {
        (lo, hi, true)
    } else if let Some((lo, hi)) = text.split_once("..") {
        (lo, hi, false)
    } else {
        return Err(bad("not a range"));
    };
    let lo: u64 = lo.trim().parse().map_err(|_| bad("bad start"))?;
    let hi: u64 = hi.trim().parse().map_err(|_| bad("bad end"))?;
    let hi = if inclusive { hi + 1 } else { hi };
    if lo >= hi {
        return Err(bad("empty range"));
    }
    Ok((lo..hi).collect())
}

fn print_report(report: &Report) {
    println!(
        "scenario {} seed {}: measured {:.0}..{:.0} ms",
        report.scenario, report.seed, report.measured_from_ms, report.measured_to_ms
    );
    for vm in &report.vms {
        let mut line = format!(
            "  vm {} ({:?}): {} ops, {:.2} ops/ms",
            vm.vm_id,
            vm.role,
            vm.completed_ops,
            vm.throughput_ops_per_ms
        );
        if let Some(s) = vm.slowdown {
            line.push_str(&format!(", slowdown {s:.3}"));
        }
        if let Some(o) = vm.overhead {
            line.push_str(&format!(", overhead {:.2}%", o * 100.0));
        }
        println!("{line}");
    }
    if let Some(d) = &report.detection {
        let stamp = |t: Option<f64>| t.map_or("-".into(), |t| format!("{t:.0} ms"));
        println!(
            "  detection: suspected {}, identified {}, mitigated {}; final phase {:?}",
            stamp(d.suspected_ms),
            stamp(d.identified_ms),
            stamp(d.mitigated_ms),
            d.final_phase
        );
        println!(
            "  identified {:?} vs ground truth {:?} ({} fp, {} fn)",
            d.identified,
            d.ground_truth,
            d.false_positives.len(),
            d.false_negatives.len()
        );
    }
}

fn print_sweep(report: &SweepReport) {
    println!("sweep {} over {} seeds", report.scenario, report.seeds.len());
    if let Some(tp) = report.true_positive_rate {
        println!("  true positive rate {tp:.3}");
    }
    println!(
        "  false positive rate {:.3} (single-test {:.3})",
        report.false_positive_rate, report.single_test_positive_rate
    );
    for vm in &report.vms {
        let mut line = format!("  vm {} ({:?})", vm.vm_id, vm.role);
        if let (Some(m), Some(s)) = (vm.mean_slowdown, vm.stddev_slowdown) {
            line.push_str(&format!(": mean slowdown {m:.3} (stddev {s:.3})"));
        }
        if let Some(o) = vm.mean_overhead {
            line.push_str(&format!(", mean overhead {:.2}%", o * 100.0));
        }
        println!("{line}");
    }
}
