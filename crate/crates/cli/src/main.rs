//! `czlab` — config-driven experiment runner.
//!
//! Subcommands map onto the core studies; every run writes a JSON summary
//! (and CSV details where applicable) embedding the fully resolved scenario,
//! so a report can be replayed from itself. Exit codes: 0 clean, 2 usage or
//! config error, 3 one or more asserted invariants failed.

use clap::{Parser, Subcommand};
use czlab_core::lab::{self, Scenario};
use czlab_core::real::Arith;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "czlab",
    version,
    about = "Dyadic testbed for local testing conditions on upper doubling measures"
)]
struct Cli {
    /// Scenario file (TOML). Flags below override its fields.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for batched subtasks (default: all cores).
    /// Falls back to the CZLAB_THREADS environment variable.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_parser = ["rational", "float"])]
    arith: Option<String>,
    /// Output directory for reports (default ".")
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the upper-doubling axioms and kernel constants of a scenario.
    VerifyMeasure,
    /// Monte-Carlo badness statistics over a range of r values.
    GridStats {
        /// r values, comma separated
        #[arg(long, default_value = "2,4,6,8")]
        r: String,
        #[arg(long)]
        samples: Option<u32>,
        /// cube level the statistics are collected at
        #[arg(long, default_value_t = -12, allow_hyphen_values = true)]
        level: i32,
    },
    /// Build stopping trees over random functions; sparseness and
    /// quasi-orthogonality reports.
    Corona {
        #[arg(long, default_value_t = 100)]
        trials: u32,
    },
    /// The full bilinear-form ledger with every identity checked.
    Decompose,
    /// Testing constant against the operator norm across cantor-third levels.
    T1Study {
        /// inclusive level range, e.g. 4..8
        #[arg(long, default_value = "4..8")]
        levels: String,
    },
    /// Decay tables for the stopping/error/separated terms.
    Decay,
    /// Off-diagonal estimate and ancestor-containment sampling.
    OffDiag {
        #[arg(long, default_value_t = 200)]
        budget: usize,
    },
}

fn load_scenario(cli: &Cli) -> Result<Scenario, String> {
    let mut sc: Scenario = match &cli.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("scenario {}: {e}", path.display()))?;
            toml::from_str(&text).map_err(|e| format!("scenario: {e}"))?
        }
        None => Scenario::default(),
    };
    if let Some(seed) = cli.seed {
        sc.seed = seed;
    }
    if let Some(arith) = &cli.arith {
        sc.arith = arith.parse::<Arith>().map_err(|e| e.to_string())?;
    }
    sc.validate().map_err(|e| e.to_string())?;
    Ok(sc)
}

fn write_file(out_dir: &Path, name: &str, content: &str) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(name);
    std::fs::write(&path, content)?;
    Ok(path)
}

fn finish<T: serde::Serialize>(
    out_dir: &Path,
    name: &str,
    report: &T,
    checks: &[lab::Check],
    extra_csv: Option<(&str, String)>,
) -> ExitCode {
    let json = serde_json::to_string_pretty(report).expect("serializable report");
    match write_file(out_dir, name, &json) {
        Ok(path) => eprintln!("report: {}", path.display()),
        Err(e) => {
            eprintln!("error writing report: {e}");
            return ExitCode::from(3);
        }
    }
    if let Some((csv_name, csv)) = extra_csv {
        if let Err(e) = write_file(out_dir, csv_name, &csv) {
            eprintln!("error writing csv: {e}");
            return ExitCode::from(3);
        }
        eprintln!("csv: {}", out_dir.join(csv_name).display());
    }
    let mut any_fail = false;
    for c in checks {
        let detail = if c.detail.is_empty() {
            String::new()
        } else {
            format!(": {}", c.detail)
        };
        eprintln!("[{}] {}{}", if c.pass { "ok" } else { "FAIL" }, c.name, detail);
        any_fail |= !c.pass;
    }
    if any_fail {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let sc = match load_scenario(&cli) {
        Ok(sc) => sc,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let threads = cli
        .threads
        .or_else(|| std::env::var("CZLAB_THREADS").ok().and_then(|v| v.parse().ok()));
    let run = || -> Result<ExitCode, czlab_core::CzError> {
        Ok(match &cli.command {
            Command::VerifyMeasure => {
                let rep = lab::run_verify_measure(&sc)?;
                finish(&out_dir, "verify-measure.json", &rep, &rep.checks, None)
            }
            Command::GridStats { r, samples, level } => {
                let mut sc = sc.clone();
                if let Some(s) = samples {
                    sc.samples = *s;
                }
                let rs: Vec<u32> = r
                    .split(',')
                    .map(|v| v.trim().parse::<u32>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| czlab_core::CzError::Parse(format!("--r: {e}")))?;
                let rep = lab::run_grid_stats(&sc, &rs, *level)?;
                let csv = czlab_core::goodness::stats_csv(&rep.stats);
                finish(
                    &out_dir,
                    "grid-stats.json",
                    &rep,
                    &rep.checks,
                    Some(("grid-stats.csv", csv)),
                )
            }
            Command::Corona { trials } => {
                let rep = lab::run_corona(&sc, *trials)?;
                let dump = rep.tree_dump.clone();
                finish(
                    &out_dir,
                    "corona.json",
                    &rep,
                    &rep.checks,
                    Some(("corona-tree.txt", dump)),
                )
            }
            Command::Decompose => {
                let rep = lab::run_decompose(&sc)?;
                let csv = rep.pairs_csv.clone();
                finish(
                    &out_dir,
                    "decompose.json",
                    &rep,
                    &rep.checks,
                    Some(("decompose-pairs.csv", csv)),
                )
            }
            Command::T1Study { levels } => {
                let (lo, hi) = levels
                    .split_once("..")
                    .ok_or_else(|| czlab_core::CzError::Parse("--levels wants lo..hi".into()))?;
                let lo: u32 = lo
                    .trim()
                    .parse()
                    .map_err(|_| czlab_core::CzError::Parse(format!("bad level {lo:?}")))?;
                let hi: u32 = hi
                    .trim()
                    .parse()
                    .map_err(|_| czlab_core::CzError::Parse(format!("bad level {hi:?}")))?;
                let rep = lab::run_t1_study(&sc, lo..=hi, threads)?;
                let mut csv =
                    String::from("level,atoms,t_loc,wbp,norm_lower_p2,norm_upper_p2,ratio\n");
                for row in &rep.rows {
                    csv.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        row.level,
                        row.atoms,
                        row.t_loc,
                        row.wbp,
                        row.norm_lower_p2,
                        row.norm_upper_p2,
                        row.ratio
                    ));
                }
                finish(&out_dir, "t1-study.json", &rep, &rep.checks, Some(("t1-study.csv", csv)))
            }
            Command::Decay => {
                let rep = lab::run_decompose(&sc)?;
                let mut csv = String::from("kind,t_or_u,m,abs_sum,count,envelope\n");
                for (t, v, c, env) in &rep.decay.stop_by_t {
                    csv.push_str(&format!("stop,{t},,{v},{c},{env}\n"));
                }
                for (t, v, c, env) in &rep.decay.error_by_t {
                    csv.push_str(&format!("error,{t},,{v},{c},{env}\n"));
                }
                for (u, m, v, c, env) in &rep.decay.separated_by_um {
                    csv.push_str(&format!("separated,{u},{m},{v},{c},{env}\n"));
                }
                finish(&out_dir, "decay.json", &rep, &rep.checks, Some(("decay.csv", csv)))
            }
            Command::OffDiag { budget } => {
                let rep = lab::run_offdiag(&sc, *budget)?;
                finish(&out_dir, "offdiag.json", &rep, &rep.checks, None)
            }
        })
    };
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
