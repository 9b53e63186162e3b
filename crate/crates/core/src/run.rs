//! A full simulation run and the re-check of its artifacts.
//!
//! Output tree: `config.echo`, `diagnostics.csv`, `certificate.json`,
//! `snapshots/{field}_{step}.csv`, and `manifest.json` listing every file with
//! its SHA-256. A failed run still writes everything it produced, together
//! with a manifest whose status is `failed`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DtChoice, RunConfig};
use crate::diagnostics::{self, BoundCertificate, DiagnosticsRecord};
use crate::domain::{build_domain, generate_grid_with, GridOptions};
use crate::elliptic::BiotSavartSolver;
use crate::error::{Error, Result};
use crate::evolve::{auto_dt, FlowState, InitialCondition, StepOptions, Stepper};

/// Per-step energy slack relative to `E(0)`.
pub const ENERGY_STEP_TOL: f64 = 1e-6;
/// Allowed excess in `E(T) + int D <= E(0)`.
pub const ENERGY_BALANCE_SLACK: f64 = 1e-2;
/// Slack of the Gamma step check relative to `sup |Gamma|`, covering the
/// inexact elliptic solves.
pub const GAMMA_STEP_RTOL: f64 = 1e-9;

/// Everything `verify` needs beyond the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCertificate {
    pub bound: BoundCertificate,
    pub steps: usize,
    pub dt: f64,
    pub t_end: f64,
    pub output_stride: usize,
    /// `sum dt D(t_n)` over every step (right-endpoint rule).
    pub dissipation_integral: f64,
    pub energy_monotone: bool,
    pub energy_balance_ok: bool,
    /// Interior maximum principle for Gamma held on every step.
    pub gamma_steps_ok: bool,
    pub picard_warnings: usize,
    pub max_picard_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: String,
    pub error: Option<String>,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub records: Vec<DiagnosticsRecord>,
    pub certificate: RunCertificate,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_manifest(out: &Path, written: &[String], error: Option<&Error>) -> Result<()> {
    let mut files = Vec::new();
    for rel in written {
        let path = out.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        files.push(ManifestEntry { path: rel.clone(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
    }
    let manifest = Manifest {
        status: if error.is_some() { "failed".into() } else { "complete".into() },
        error: error.map(|e| e.to_string()),
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    write(&out.join("manifest.json"), text.as_bytes())
}

/// Runs the configured simulation and writes its artifacts.
pub fn simulate(cfg: &RunConfig) -> Result<RunSummary> {
    let out = cfg.out_dir.clone();
    fs::create_dir_all(out.join("snapshots")).map_err(|e| Error::io(&out, e))?;
    let mut written = Vec::new();
    let mut records = Vec::new();
    let result = simulate_into(cfg, &out, &mut written, &mut records);
    match result {
        Ok(certificate) => {
            write_manifest(&out, &written, None)?;
            Ok(RunSummary { out_dir: out, records, certificate })
        }
        Err(e) => {
            if !written.iter().any(|w| w == "diagnostics.csv") && !records.is_empty() {
                let _ = write(&out.join("diagnostics.csv"), diagnostics::write_csv(&records).as_bytes());
                written.push("diagnostics.csv".into());
            }
            let _ = write_manifest(&out, &written, Some(&e));
            Err(e)
        }
    }
}

fn snapshot(out: &Path, state: &FlowState, step: usize, written: &mut Vec<String>) -> Result<()> {
    for (name, f) in [("h", &state.h), ("omega", &state.omega), ("v_r", &state.v_r), ("v_3", &state.v_3)] {
        let rel = format!("snapshots/{name}_{step:06}.csv");
        let mut buf = Vec::new();
        f.write_csv(&mut buf).map_err(|e| Error::io(out.join(&rel), e))?;
        write(&out.join(&rel), &buf)?;
        written.push(rel);
    }
    Ok(())
}

fn simulate_into(
    cfg: &RunConfig,
    out: &Path,
    written: &mut Vec<String>,
    records: &mut Vec<DiagnosticsRecord>,
) -> Result<RunCertificate> {
    write(&out.join("config.echo"), cfg.echo().as_bytes())?;
    written.push("config.echo".into());

    let domain = build_domain(cfg.m, cfg.beta)?;
    let opts = GridOptions { snap_refinement: cfg.snap_p, ..Default::default() };
    let grid = Arc::new(generate_grid_with(&domain, cfg.refinement_p, &opts)?);
    let ic = InitialCondition::new(cfg.ic_kind, cfg.ic_amplitude, &domain).fitted_to(&grid);
    let mut state = ic.initial_state(&BiotSavartSolver::new(&grid, cfg.solver_tol))?;

    let (dt, steps) = match cfg.dt {
        DtChoice::Auto => auto_dt(&grid, state.max_velocity(), cfg.cfl, cfg.t_end),
        DtChoice::Fixed(dt) if cfg.t_end > 0.0 => {
            let steps = (cfg.t_end / dt - 1e-9).ceil().max(1.0) as usize;
            (cfg.t_end / steps as f64, steps)
        }
        DtChoice::Fixed(dt) => (dt, 0),
    };
    log::info!("m = {}, p = {}, {} nodes, dt = {dt:.4e}, {steps} steps", cfg.m, cfg.refinement_p, grid.active().len());
    let stepper = Stepper::new(
        &grid,
        dt,
        StepOptions { cfl: cfg.cfl, solver_tol: cfg.solver_tol, picard_max: cfg.picard_max, picard_tol: cfg.picard_tol },
    )?;

    let first = diagnostics::record(&state);
    let initial = state.clone();
    records.push(first);
    if cfg.snapshot_stride > 0 {
        snapshot(out, &state, 0, written)?;
    }
    let e0 = first.energy;
    let mut e_prev = e0;
    let mut energy_monotone = true;
    let mut dissipation_integral = 0.0;
    let mut gamma_steps_ok = true;
    let mut gamma_boundary_sup = diagnostics::boundary_gamma_sup(&state);
    let mut picard_warnings = 0;
    let mut max_picard_factor = 0.0f64;
    for step in 1..=steps {
        let (next, report) = stepper.advance(&state)?;
        let rec = diagnostics::record(&next);
        if !rec.all_finite() {
            return Err(Error::Numeric(format!("non-finite diagnostics at step {step}")));
        }
        dissipation_integral += dt * rec.dissipation;
        energy_monotone &= rec.energy <= e_prev + ENERGY_STEP_TOL * e0;
        e_prev = rec.energy;
        let check = diagnostics::gamma_step_check(&state, &next, GAMMA_STEP_RTOL * rec.sup_gamma);
        gamma_steps_ok &= check.ok;
        gamma_boundary_sup = gamma_boundary_sup.max(diagnostics::boundary_gamma_sup(&next));
        let factor = report.factors.last().copied().unwrap_or(0.0);
        max_picard_factor = max_picard_factor.max(factor);
        if !report.converged && factor > 1.0 {
            picard_warnings += 1;
        }
        if step % cfg.output_stride == 0 || step == steps {
            records.push(rec);
        }
        if cfg.snapshot_stride > 0 && step % cfg.snapshot_stride == 0 {
            snapshot(out, &next, step, written)?;
        }
        state = next;
    }

    write(&out.join("diagnostics.csv"), diagnostics::write_csv(records).as_bytes())?;
    written.push("diagnostics.csv".into());
    let bound = diagnostics::certify(records, cfg.beta, &initial, gamma_boundary_sup)?;
    let energy_balance_ok = e_prev + dissipation_integral <= e0 * (1.0 + ENERGY_BALANCE_SLACK);
    let certificate = RunCertificate {
        bound,
        steps,
        dt,
        t_end: cfg.t_end,
        output_stride: cfg.output_stride,
        dissipation_integral,
        energy_monotone,
        energy_balance_ok,
        gamma_steps_ok,
        picard_warnings,
        max_picard_factor,
    };
    let text = serde_json::to_string_pretty(&certificate).expect("certificate serialises");
    write(&out.join("certificate.json"), text.as_bytes())?;
    written.push("certificate.json".into());
    Ok(certificate)
}

/// One re-checked property.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Re-checks a finished run from its emitted files only; no field is
/// recomputed. I/O and parse problems are errors, failed properties are not.
pub fn verify(dir: &Path) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let mut push = |name: &'static str, ok: bool, detail: String| checks.push(Check { name, ok, detail });

    let manifest: Manifest = serde_json::from_str(&read_text(&dir.join("manifest.json"))?)
        .map_err(|e| Error::Usage(format!("manifest.json: {e}")))?;
    push("manifest_status", manifest.status == "complete", format!("status `{}`", manifest.status));
    let mut bad = Vec::new();
    for entry in &manifest.files {
        let path = dir.join(&entry.path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != entry.sha256 || bytes.len() as u64 != entry.bytes {
            bad.push(entry.path.clone());
        }
    }
    push("checksums", bad.is_empty(), if bad.is_empty() { format!("{} files", manifest.files.len()) } else { format!("mismatch: {}", bad.join(", ")) });

    let records = diagnostics::parse_csv(&read_text(&dir.join("diagnostics.csv"))?)?;
    let cert: RunCertificate = serde_json::from_str(&read_text(&dir.join("certificate.json"))?)
        .map_err(|e| Error::Usage(format!("certificate.json: {e}")))?;
    let Some(first) = records.first() else {
        push("nonempty", false, "no diagnostics rows".into());
        return Ok(VerifyReport { checks });
    };

    let finite = records.iter().all(|r| {
        r.all_finite()
            && r.energy >= 0.0
            && r.dissipation >= 0.0
            && [r.sup_gamma, r.sup_vtheta, r.l2_omega, r.l2_j, r.l6_vr_over_r, r.div_res, r.line_int_max].iter().all(|&x| x >= 0.0)
    });
    push("finite_nonnegative", finite, format!("{} rows", records.len()));

    let e0 = first.energy;
    let worst = records.windows(2).map(|w| w[1].energy - w[0].energy).fold(f64::NEG_INFINITY, f64::max);
    let monotone = records.len() < 2 || worst <= ENERGY_STEP_TOL * e0;
    push("energy_nonincreasing", monotone && cert.energy_monotone, format!("largest increase {worst:.3e}, E0 = {e0:.6e}"));

    let last = records.last().expect("nonempty");
    let mut balance_integral = cert.dissipation_integral;
    if cert.output_stride == 1 && cert.steps > 0 {
        balance_integral = records[1..].iter().map(|r| cert.dt * r.dissipation).sum();
    }
    let rhs = e0 * (1.0 + ENERGY_BALANCE_SLACK);
    push(
        "energy_balance",
        last.energy + balance_integral <= rhs && cert.energy_balance_ok,
        format!("E(T) + int D = {:.6e}, bound {rhs:.6e}", last.energy + balance_integral),
    );

    push(
        "initial_energy",
        cert.bound.initial_energy == e0,
        format!("certificate {:.17e}, csv {:.17e}", cert.bound.initial_energy, e0),
    );

    let sup_gamma = records.iter().fold(0.0f64, |m, r| m.max(r.sup_gamma));
    let gamma_limit = 1.05 * (first.sup_gamma + cert.bound.gamma_boundary_sup);
    push(
        "gamma_bound",
        sup_gamma <= gamma_limit && cert.gamma_steps_ok,
        format!("sup Gamma {sup_gamma:.6e}, limit {gamma_limit:.6e}, per-step check {}", cert.gamma_steps_ok),
    );

    let (j0, lambda0) = diagnostics::compute_j0_lambda0(sup_gamma, cert.bound.beta)?;
    let (growth_ok, rate) = diagnostics::check_growth(&records, lambda0)?;
    push(
        "growth_bound",
        growth_ok && j0 == cert.bound.j0 && lambda0 == cert.bound.lambda0,
        format!("j0 = {j0}, lambda0 = {lambda0:.6e}, measured rate {rate:.6e}"),
    );
    Ok(VerifyReport { checks })
}
