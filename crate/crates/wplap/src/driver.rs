//! Command dispatch: validate the config, run the requested computation,
//! and emit report.json plus the command's CSV series and optional SVG
//! charts into the output directory.
//!
//! Exit code contract: 0 on success, 1 on any validation or execution
//! error (nothing is written for a malformed config), 2 on numerical
//! nonconvergence with the report still written so the failed run can be
//! inspected. Nonconvergence means: the eigensolver missed its tolerance,
//! a below-lambda1 scan point failed, or an admissibility verdict rests
//! on an inconclusive integral. Inequality violations are findings, not
//! failures; they land in `warnings` with exit 0.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use crate::amp::{scan_amp, AmpError};
use crate::config::{CommandKind, ConfigError, ExperimentConfig};
use crate::eigen::{linear_oracle, minimize_rayleigh, EigenError, SolverOptions};
use crate::fem::{DiscreteFunction, FemError};
use crate::ineq::{check_ckn, check_embedding, check_picone, CknVariant, IneqError, TrialFamily};
use crate::quad::Verdict;
use crate::report::{svg_from_csv, write_csv, write_report, Provenance, Report, SCHEMA_VERSION};
use crate::shooting::{integrate_ivp, shoot_eigenvalue, verify_asymptotics, ShootError};
use crate::weights::{check_admissibility, embedding_constant, AdmissibilityVerdict, WeightError};

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Run(String),
}

macro_rules! run_error_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for DriverError {
            fn from(e: $ty) -> Self {
                DriverError::Run(e.to_string())
            }
        }
    )*};
}
run_error_from!(EigenError, AmpError, ShootError, IneqError, WeightError, FemError);

pub struct RunSummary {
    pub exit_code: i32,
    pub report_path: PathBuf,
}

/// Validate, dispatch, write artifacts. `Err` is the exit-1 path; an
/// `Ok` summary carries exit 0 or 2 and the written report's location.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary, DriverError> {
    let command = config
        .command
        .ok_or_else(|| DriverError::Run("no command selected".into()))?;
    config.validate()?;
    let out_dir = PathBuf::from(&config.out);
    fs::create_dir_all(&out_dir)?;

    let started = Instant::now();
    let mut warnings = Vec::new();
    let (results, converged) = match command {
        CommandKind::CheckWeights => run_check_weights(config, &mut warnings)?,
        CommandKind::Eigen => run_eigen(config, &out_dir, &mut warnings)?,
        CommandKind::AmpScan => run_amp_scan(config, &out_dir, &mut warnings)?,
        CommandKind::Shoot => run_shoot(config, &out_dir, &mut warnings)?,
        CommandKind::VerifyInequalities => run_inequalities(config, &mut warnings)?,
    };

    let report = Report {
        schema_version: SCHEMA_VERSION.into(),
        command: command.to_string(),
        config: serde_json::to_value(config).map_err(|e| DriverError::Run(e.to_string()))?,
        results,
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            timing_ms: started.elapsed().as_secs_f64() * 1e3,
        },
        warnings,
    };
    let report_path = write_report(&out_dir, &report)?;
    Ok(RunSummary { exit_code: if converged { 0 } else { 2 }, report_path })
}

fn to_value<T: serde::Serialize>(x: &T) -> Result<Value, DriverError> {
    serde_json::to_value(x).map_err(|e| DriverError::Run(e.to_string()))
}

/// A failed chart never kills a finished computation.
fn emit_svg(
    enabled: bool,
    dir: &Path,
    name: &str,
    title: &str,
    csv: &str,
    x_col: usize,
    y_cols: &[usize],
    warnings: &mut Vec<String>,
) -> Result<(), DriverError> {
    if !enabled {
        return Ok(());
    }
    match svg_from_csv(title, csv, x_col, y_cols) {
        Ok(svg) => fs::write(dir.join(name), svg)?,
        Err(e) => warnings.push(format!("svg {name}: {e}")),
    }
    Ok(())
}

fn run_check_weights(
    config: &ExperimentConfig,
    warnings: &mut Vec<String>,
) -> Result<(Value, bool), DriverError> {
    let spec = config.problem_spec()?;
    let report = check_admissibility(&spec, config.grid_size)?;
    warnings.extend(report.warnings.iter().cloned());
    if let AdmissibilityVerdict::Inadmissible(reason) = report.verdict {
        warnings.push(format!("weights inadmissible: {reason}"));
    }
    let conclusive = report.embedding.quad.verdict != Verdict::Inconclusive;
    if !conclusive {
        warnings.push("embedding integral inconclusive at the requested tolerance".into());
    }
    Ok((to_value(&report)?, conclusive))
}

fn run_eigen(
    config: &ExperimentConfig,
    out_dir: &Path,
    warnings: &mut Vec<String>,
) -> Result<(Value, bool), DriverError> {
    let spec = config.problem_spec()?;
    let mesh = config.radial_mesh()?;
    let opts = SolverOptions { tol: config.tol, max_iter: config.max_iter, polish: true };
    let res = minimize_rayleigh(&mesh, &spec, &opts)?;

    let (oracle_lambda1, oracle_rel_gap) = if (spec.p - 2.0).abs() <= 1e-12 {
        let oracle = linear_oracle(&mesh, &spec)?;
        let gap = (res.lambda1 - oracle.lambda1).abs() / oracle.lambda1.abs().max(1e-300);
        (Some(oracle.lambda1), Some(gap))
    } else {
        (None, None)
    };

    let mut csv = Vec::new();
    res.u.write_csv(&mesh, &mut csv)?;
    let csv = String::from_utf8(csv).expect("ascii csv");
    fs::write(out_dir.join("eigenfunction.csv"), &csv)?;
    emit_svg(
        config.svg,
        out_dir,
        "eigenfunction.svg",
        "principal eigenfunction",
        &csv,
        0,
        &[1],
        warnings,
    )?;

    if !res.converged {
        warnings.push(format!(
            "eigensolver stopped at residual {} after {} iterations without meeting tol {}",
            res.residual, res.iterations, config.tol
        ));
    }
    let min_free = res
        .u
        .values
        .iter()
        .take(res.u.values.len() - usize::from(res.u.dirichlet_at_big_r))
        .fold(f64::INFINITY, |a, &b| a.min(b));
    let results = json!({
        "lambda1": res.lambda1,
        "residual": res.residual,
        "iterations": res.iterations,
        "converged": res.converged,
        "min_free_value": min_free,
        "mesh_elements": mesh.num_elements(),
        "oracle_lambda1": oracle_lambda1,
        "oracle_rel_gap": oracle_rel_gap,
    });
    Ok((results, res.converged))
}

fn run_amp_scan(
    config: &ExperimentConfig,
    out_dir: &Path,
    warnings: &mut Vec<String>,
) -> Result<(Value, bool), DriverError> {
    let spec = config.problem_spec()?;
    let mesh = config.radial_mesh()?;
    let load = config.load_spec()?;
    let opts = SolverOptions { tol: config.tol, max_iter: config.max_iter, polish: true };
    // The window is configured in multiples of lambda1, so resolve the
    // eigenvalue first; the scan recomputes it deterministically.
    let eig = minimize_rayleigh(&mesh, &spec, &opts)?;
    if !eig.converged {
        warnings.push("lambda1 solve did not converge; scan window is unreliable".into());
    }
    let window = (config.window.0 * eig.lambda1, config.window.1 * eig.lambda1);
    let scan = scan_amp(&mesh, &spec, &load, window, config.steps, config.region, config.tol)?;

    let mut csv = Vec::new();
    write_csv(
        &mut csv,
        "lambda,converged,min_on_e,max_on_e,min_global,max_global",
        scan.per_lambda.iter().map(|r| {
            vec![
                r.lambda,
                f64::from(u8::from(r.converged)),
                r.min_on_e.unwrap_or(f64::NAN),
                r.max_on_e.unwrap_or(f64::NAN),
                r.min_global.unwrap_or(f64::NAN),
                r.max_global.unwrap_or(f64::NAN),
            ]
        }),
    )?;
    let csv = String::from_utf8(csv).expect("ascii csv");
    fs::write(out_dir.join("scan.csv"), &csv)?;
    emit_svg(
        config.svg,
        out_dir,
        "scan.svg",
        "solution extrema per lambda",
        &csv,
        0,
        &[4, 5],
        warnings,
    )?;

    let unconverged_below =
        scan.per_lambda.iter().filter(|r| r.lambda < scan.lambda1 && !r.converged).count();
    if unconverged_below > 0 {
        warnings.push(format!("{unconverged_below} below-lambda1 grid points did not converge"));
    }
    let unconverged_above =
        scan.per_lambda.iter().filter(|r| r.lambda > scan.lambda1 && !r.converged).count();
    if unconverged_above > 0 {
        warnings.push(format!(
            "{unconverged_above} above-lambda1 grid points did not converge (expected near the window edge)"
        ));
    }
    if config.window.0 > 1.0 && scan.delta_global == 0.0 {
        warnings.push("no antimaximum window detected at the first grid point".into());
    }

    let converged = eig.converged && unconverged_below == 0;
    let results = json!({
        "lambda1": scan.lambda1,
        "window": [window.0, window.1],
        "scan": to_value(&scan)?,
    });
    Ok((results, converged))
}

fn run_shoot(
    config: &ExperimentConfig,
    out_dir: &Path,
    warnings: &mut Vec<String>,
) -> Result<(Value, bool), DriverError> {
    let spec = config.problem_spec()?;
    let l = |r: f64| spec.weight_l.eval(r);
    let k = |r: f64| spec.weight_k.eval(r);
    let lambda =
        shoot_eigenvalue(l, k, spec.eps, spec.big_r, config.bracket, config.ivp_steps)?;
    let traj = integrate_ivp(l, k, lambda, spec.eps, spec.big_r, config.ivp_steps)?;
    let asymptotics = verify_asymptotics(&traj, l, k, config.tol)?;

    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    let csv = String::from_utf8(csv).expect("ascii csv");
    fs::write(out_dir.join("trajectory.csv"), &csv)?;
    emit_svg(
        config.svg,
        out_dir,
        "trajectory.svg",
        "shot trajectory",
        &csv,
        0,
        &[1, 2],
        warnings,
    )?;

    if !asymptotics.f_hypothesis_ok {
        warnings.push("F integrability hypothesis fails; representation residual skipped".into());
    }
    if !asymptotics.bound_value.is_finite() {
        warnings.push("boundedness integral not convergent; no bound asserted".into());
    }
    let results = json!({
        "lambda1": lambda,
        "eps": spec.eps,
        "big_r": spec.big_r,
        "ivp_steps": config.ivp_steps,
        "crossing_radius": traj.first_nonpositive_radius(),
        "asymptotics": to_value(&asymptotics)?,
    });
    Ok((results, true))
}

fn run_inequalities(
    config: &ExperimentConfig,
    warnings: &mut Vec<String>,
) -> Result<(Value, bool), DriverError> {
    let spec = config.problem_spec()?;
    let family = config.trial_family()?;

    let basic = check_ckn(&family, &spec, CknVariant::Basic)?;

    let denom = spec.dim as f64 - spec.p - spec.p * spec.alpha;
    let generalized = if denom > 0.0 {
        Some(check_ckn(&family, &spec, CknVariant::Generalized)?)
    } else {
        warnings.push(format!(
            "companion inequality skipped: N - p - p*alpha = {denom} is not positive"
        ));
        None
    };

    // Constants stay sharp even when the solver tolerance is loosened.
    let wtol = config.tol.min(1e-8);
    let emb = embedding_constant(&spec, wtol)?;
    let (embedding, embedding_c) = if emb.quad.is_convergent() {
        (Some(check_embedding(&family, &spec, emb.quad.value)?), Some(emb.quad.value))
    } else {
        warnings.push("embedding constant not convergent; embedding check skipped".into());
        (None, None)
    };

    // Picone pairs: u from the configured family, v from bumps whose
    // support ends past big_r so v stays positive on the mesh; v keeps
    // m = 0 so its minimum never drowns in the r^m factor at eps.
    let mesh = config.radial_mesh()?;
    let us = family.trials();
    let vs = TrialFamily::new(
        (1.05 * spec.big_r, 4.0 * spec.big_r),
        config.trial_k,
        (0.0, 0.0),
        config.trial_samples,
        config.seed.wrapping_add(1),
    )?
    .trials();
    let mut picone_min = f64::INFINITY;
    for (tu, tv) in us.iter().zip(vs.iter()) {
        let u = DiscreteFunction::from_fn(&mesh, |r| tu.eval(r), false);
        let v = DiscreteFunction::from_fn(&mesh, |r| tv.eval(r), false);
        picone_min = picone_min.min(check_picone(&mesh, &u, &v, spec.p)?);
    }

    for report in [Some(&basic), generalized.as_ref(), embedding.as_ref()].into_iter().flatten() {
        if !report.violations.is_empty() {
            warnings.push(format!(
                "{}: {} trial(s) violated the declared bound",
                report.inequality,
                report.violations.len()
            ));
        }
    }

    let results = json!({
        "basic": to_value(&basic)?,
        "generalized": generalized.as_ref().map(to_value).transpose()?,
        "embedding": embedding.as_ref().map(to_value).transpose()?,
        "embedding_constant": embedding_c,
        "picone_min": picone_min,
        "picone_pairs": us.len().min(vs.len()),
    });
    Ok((results, true))
}
