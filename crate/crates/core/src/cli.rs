//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 verification failure, 2 config or usage error,
//! 3 numeric or solver error. Errors go to stderr as one JSON object.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::config::{ConstantKind, MmsDomain, MmsEquation, RunConfig};
use crate::domain::{build_domain, generate_grid};
use crate::error::{Error, Result};
use crate::inequalities::{self, ConstantName, EstimatorOptions};
use crate::mms;
use crate::run;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cuspflow", version, about = "Axisymmetric slip flow on staircase cusp domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulation and write its artifacts.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Manufactured-solution convergence table as CSV on stdout.
    Mms {
        #[arg(long)]
        equation: MmsEquation,
        /// Comma-separated refinement list.
        #[arg(long, value_delimiter = ',')]
        p: Vec<u32>,
        #[arg(long, default_value = "rect")]
        domain: MmsDomain,
    },
    /// Constant-estimation sweep as CSV on stdout.
    Constants {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated list of poincare, s0, s0_zero_column_mean, cs.
        #[arg(long, value_delimiter = ',')]
        which: Option<Vec<ConstantKind>>,
        #[arg(long, value_delimiter = ',')]
        m: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        beta: Option<Vec<f64>>,
        #[arg(long)]
        p: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-check a finished run from its files.
    Verify {
        #[arg(long)]
        run: PathBuf,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Usage(_) | Error::Io { .. } | Error::DomainParameter(_) => EXIT_CONFIG,
        Error::Solver { .. } | Error::StepSize { .. } | Error::Numeric(_) | Error::Resource(_) => EXIT_NUMERIC,
    }
}

fn error_json(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

/// Parses `argv` (program name first), runs the subcommand, and returns the
/// exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            let _ = writeln!(err, "{}", error_json("usage", e.to_string().trim()));
            return EXIT_CONFIG;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "{}", error_json(e.kind(), &e.to_string()));
            exit_code(&e)
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Simulate { config, out: dir } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if let Some(d) = dir {
                cfg.out_dir = d;
            }
            let summary = run::simulate(&cfg)?;
            let c = &summary.certificate;
            emit(
                out,
                &format!(
                    "{}\n",
                    serde_json::json!({
                        "out_dir": summary.out_dir.display().to_string(),
                        "steps": c.steps,
                        "dt": c.dt,
                        "energy_monotone": c.energy_monotone,
                        "energy_balance_ok": c.energy_balance_ok,
                        "gamma_steps_ok": c.gamma_steps_ok,
                        "growth_ok": c.bound.growth_ok,
                        "c_star_proxy": c.bound.c_star,
                        "measured_rate": c.bound.measured_rate,
                    })
                ),
            )?;
            Ok(EXIT_OK)
        }
        Command::Mms { equation, p, domain } => {
            if p.is_empty() {
                return Err(Error::Usage("--p needs at least one refinement".into()));
            }
            match equation {
                MmsEquation::Vr | MmsEquation::V3 => emit(out, &mms::elliptic_study(equation, domain, &p)?.to_csv())?,
                MmsEquation::H | MmsEquation::Omega => {
                    let space = mms::parabolic_space_study(equation, domain, &p)?;
                    let finest = *p.iter().max().expect("nonempty");
                    let time = mms::parabolic_time_study(equation, domain, finest, &[4, 8, 16, 32])?;
                    let time_csv = time.to_csv();
                    let body = time_csv.split_once('\n').map_or("", |(_, b)| b);
                    emit(out, &format!("{}{}", space.to_csv(), body))?;
                }
            }
            Ok(EXIT_OK)
        }
        Command::Constants { config, which, m, beta, p, seed } => {
            let mut cfg = match config {
                Some(path) => RunConfig::from_file(&path)?,
                None => RunConfig::default(),
            };
            let c = &mut cfg.constants;
            if let Some(w) = which {
                c.which = w;
            }
            if let Some(m) = m {
                c.m_list = m;
            }
            if let Some(b) = beta {
                c.beta_list = b;
            }
            if let Some(p) = p {
                c.refinement = p;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            emit(out, &constants_sweep(&cfg)?)?;
            Ok(EXIT_OK)
        }
        Command::Verify { run: dir } => {
            let report = run::verify(&dir)?;
            let text = serde_json::to_string_pretty(&report).expect("report serialises");
            emit(out, &format!("{text}\n"))?;
            Ok(if report.ok() { EXIT_OK } else { EXIT_VERIFY })
        }
    }
}

/// CSV `name,m,beta,refinement,estimate,iterations`. The slab row reports
/// `max_j C(H_j) / H_j`, whose exact value is `1/pi`, with `n` in the
/// refinement column.
pub fn constants_sweep(cfg: &RunConfig) -> Result<String> {
    let c = &cfg.constants;
    let mut s = String::from("name,m,beta,refinement,estimate,iterations\n");
    for &beta in &c.beta_list {
        for &m in &c.m_list {
            let domain = build_domain(m, beta)?;
            let mut grid = None;
            for kind in &c.which {
                if *kind == ConstantKind::Poincare {
                    let mut worst = 0.0f64;
                    for rect in &domain.rects {
                        worst = worst.max(inequalities::estimate_poincare(rect.height, c.poincare_n)? / rect.height);
                    }
                    s.push_str(&format!("{},{m},{beta},{},{worst:.12e},0\n", ConstantName::PoincareSlab, c.poincare_n));
                    continue;
                }
                let g = match &grid {
                    Some(g) => Arc::clone(g),
                    None => {
                        let g = Arc::new(generate_grid(&domain, c.refinement)?);
                        grid = Some(Arc::clone(&g));
                        g
                    }
                };
                let opts = EstimatorOptions { starts: c.starts, seed: cfg.seed, ..Default::default() };
                let (label, est) = match kind {
                    ConstantKind::SobolevS0(con) => {
                        (format!("sobolev_s0[{con}]"), inequalities::estimate_sobolev_s0(&domain, &g, *con, &opts)?)
                    }
                    _ => (ConstantName::WeightedSobolevCs.to_string(), inequalities::estimate_weighted_sobolev_cs(&domain, &g, &opts)?),
                };
                s.push_str(&format!("{label},{m},{beta},{},{:.12e},{}\n", c.refinement, est.value, est.iterations));
            }
        }
    }
    Ok(s)
}
