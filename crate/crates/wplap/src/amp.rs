//! Perturbed problem and antimaximum scan: solve the weak equation
//! grad_I(u) = lambda grad_G(u) + b(h) for a radial load h, and measure
//! how far above lambda1 the solutions stay negative.
//!
//! Solves run damped Newton on the nodal residual with the regularized
//! p-term Jacobian; when no starting point is supplied the solver
//! continues in lambda from 0 (where the zero function is the natural
//! seed), halving the continuation step on failure. Nonconvergence near
//! lambda1 is an expected outcome and is recorded, never raised; iterate
//! norms beyond 1e6 times the load scale are classified as blow-up.

use crate::eigen::{minimize_rayleigh, EigenError, SolverOptions};
use crate::fem::{assemble, assemble_hessians, load_vector, DiscreteFunction, FemError, RadialMesh};
use crate::linalg::solve_tridiag;
use crate::weights::{ProblemSpec, WeightFunction};

#[derive(Debug, thiserror::Error)]
pub enum AmpError {
    #[error("invalid load: {0}")]
    InvalidLoad(String),
    #[error("invalid scan window: {0}")]
    InvalidWindow(String),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

/// Radial load profile, optionally clipped to a compact support
/// interval. `nonneg` declares h >= 0 and is checked on a sample grid at
/// construction.
#[derive(Clone, Debug)]
pub struct LoadSpec {
    pub profile: WeightFunction,
    pub support: Option<(f64, f64)>,
    pub nonneg: bool,
    clipped: WeightFunction,
}

impl LoadSpec {
    pub fn new(
        profile: WeightFunction,
        support: Option<(f64, f64)>,
        nonneg: bool,
    ) -> Result<Self, AmpError> {
        let clipped = match support {
            None => profile.clone(),
            Some((a, b)) => {
                if !(a.is_finite() && b.is_finite() && 0.0 < a && a < b) {
                    return Err(AmpError::InvalidLoad(format!(
                        "support must satisfy 0 < a < b < inf, got [{a}, {b}]"
                    )));
                }
                WeightFunction::piecewise(vec![
                    (a, WeightFunction::constant(0.0)),
                    (b, profile.clone()),
                    (f64::INFINITY, WeightFunction::constant(0.0)),
                ])
                .map_err(|e| AmpError::InvalidLoad(e.to_string()))?
            }
        };
        if nonneg {
            let (lo, hi) = support.unwrap_or((1e-6, 1e6));
            let (lo, hi) = (lo.max(1e-9), hi.min(1e9));
            for i in 0..=64 {
                let r = lo * (hi / lo).powf(i as f64 / 64.0);
                let v = profile.eval(r);
                if v < 0.0 {
                    return Err(AmpError::InvalidLoad(format!(
                        "declared nonnegative but profile({r}) = {v}"
                    )));
                }
            }
        }
        Ok(LoadSpec {
            profile,
            support,
            nonneg,
            clipped,
        })
    }

    /// The profile with the support clip applied (identically zero
    /// outside the support interval).
    pub fn weight(&self) -> &WeightFunction {
        &self.clipped
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.clipped.eval(r)
    }
}

/// Outcome of one perturbed solve. `converged` means the nodal residual
/// ||grad_I - lambda grad_G - b||_inf fell below tol * (1 + ||b||_inf);
/// `blow_up` marks iterates that grew past 1e6 times the load scale,
/// the numerical signature of nonexistence at lambda1.
#[derive(Clone, Debug, serde::Serialize)]
pub struct PerturbedSolve {
    pub u: DiscreteFunction,
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub blow_up: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

/// Residual vector of the weak equation over free nodes.
fn kkt_residual(
    mesh: &RadialMesh,
    spec: &ProblemSpec,
    b: &[f64],
    lambda: f64,
    u: &DiscreteFunction,
) -> Result<Vec<f64>, AmpError> {
    let asm = assemble(mesh, spec, u)?;
    let free = mesh.num_nodes() - 1;
    Ok((0..free)
        .map(|i| asm.grad_i[i] - lambda * asm.grad_g[i] - b[i])
        .collect())
}

/// ||grad_I(u) - lambda grad_G(u) - b(h)||_inf over free nodes.
pub fn perturbed_residual(
    mesh: &RadialMesh,
    spec: &ProblemSpec,
    h: &LoadSpec,
    lambda: f64,
    u: &DiscreteFunction,
) -> Result<f64, AmpError> {
    let b = load_vector(mesh, spec.dim, h.weight(), true)?;
    Ok(inf_norm(&kkt_residual(mesh, spec, &b, lambda, u)?))
}

struct NewtonOutcome {
    u: DiscreteFunction,
    residual: f64,
    converged: bool,
    iterations: usize,
    blow_up: bool,
}

/// Damped Newton at fixed lambda. Stops on convergence, on 40 cumulative
/// step rejections (stagnation), on a singular Jacobian, or on iterate
/// blow-up.
fn newton_solve(
    mesh: &RadialMesh,
    spec: &ProblemSpec,
    b: &[f64],
    lambda: f64,
    start: DiscreteFunction,
    tol: f64,
    max_iter: usize,
) -> Result<NewtonOutcome, AmpError> {
    let free = mesh.num_nodes() - 1;
    let bnorm = inf_norm(b);
    let target = tol * (1.0 + bnorm);
    let cap = 1e6 * bnorm.max(1.0);

    let mut u = start;
    let mut f = kkt_residual(mesh, spec, b, lambda, &u)?;
    let mut fnorm = inf_norm(&f);
    let mut iterations = 0;
    let mut rejections = 0;
    let mut blow_up = false;

    while fnorm > target && iterations < max_iter {
        if inf_norm(&u.values) > cap {
            blow_up = true;
            break;
        }
        iterations += 1;

        let (hi, hg) = assemble_hessians(mesh, spec, &u)?;
        let diag: Vec<f64> = (0..free)
            .map(|i| hi.diag[i] - lambda * hg.diag[i])
            .collect();
        let off: Vec<f64> = (0..free.saturating_sub(1))
            .map(|i| hi.off[i] - lambda * hg.off[i])
            .collect();
        let rhs: Vec<f64> = f.iter().map(|x| -x).collect();
        let Some(delta) = solve_tridiag(&off, &diag, &off, &rhs) else {
            break;
        };

        let mut alpha = 1.0;
        let mut accepted = false;
        while rejections < 40 {
            let mut trial = u.clone();
            for i in 0..free {
                trial.values[i] += alpha * delta[i];
            }
            let tf = kkt_residual(mesh, spec, b, lambda, &trial)?;
            let tnorm = inf_norm(&tf);
            if tnorm < fnorm {
                u = trial;
                f = tf;
                fnorm = tnorm;
                accepted = true;
                break;
            }
            rejections += 1;
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(NewtonOutcome {
        converged: fnorm <= target,
        residual: fnorm,
        u,
        iterations,
        blow_up,
    })
}

/// Solve grad_I(u) = lambda grad_G(u) + b(h). With `u0` the Newton
/// iteration starts there; otherwise the solver continues in lambda from
/// 0 starting at u = 0, halving the continuation step on failure down to
/// 1e-6 of the target. Nonconvergence (the expected outcome at lambda1)
/// comes back as a record with `converged = false`, not as an error.
pub fn solve_perturbed(
    mesh: &RadialMesh,
    spec: &ProblemSpec,
    h: &LoadSpec,
    lambda: f64,
    u0: Option<&DiscreteFunction>,
    tol: f64,
) -> Result<PerturbedSolve, AmpError> {
    let b = load_vector(mesh, spec.dim, h.weight(), true)?;
    let pack = |o: NewtonOutcome, total: usize| PerturbedSolve {
        u: o.u,
        residual: o.residual,
        converged: o.converged,
        iterations: total,
        blow_up: o.blow_up,
    };

    if let Some(start) = u0 {
        let out = newton_solve(mesh, spec, &b, lambda, start.clone(), tol, 120)?;
        let total = out.iterations;
        return Ok(pack(out, total));
    }

    // Continuation from lambda = 0.
    let mut u = DiscreteFunction::zeros(mesh, true);
    let mut total = 0;
    let first = newton_solve(mesh, spec, &b, 0.0, u.clone(), tol, 120)?;
    total += first.iterations;
    if lambda == 0.0 || !first.converged {
        let out = if lambda == 0.0 {
            first
        } else {
            let o = newton_solve(mesh, spec, &b, lambda, first.u, tol, 120)?;
            total += o.iterations;
            o
        };
        return Ok(pack(out, total));
    }
    u = first.u;

    let min_step = 1e-6 * lambda.abs().max(1.0);
    let mut cur = 0.0f64;
    let mut step = lambda.abs();
    loop {
        let remaining = lambda - cur;
        let target = if remaining.abs() <= step {
            lambda
        } else {
            cur + remaining.signum() * step
        };
        let out = newton_solve(mesh, spec, &b, target, u.clone(), tol, 60)?;
        total += out.iterations;
        if out.converged {
            u = out.u;
            cur = target;
            if cur == lambda {
                return Ok(PerturbedSolve {
                    u,
                    residual: out.residual,
                    converged: true,
                    iterations: total,
                    blow_up: false,
                });
            }
            step *= 1.7;
        } else {
            step *= 0.5;
            if step < min_step || total > 5000 {
                // Continuation stalled (the expected picture at lambda1):
                // one direct attempt from the last good iterate, then
                // report honestly.
                let fin = newton_solve(mesh, spec, &b, lambda, u, tol, 120)?;
                total += fin.iterations;
                let blow = fin.blow_up || out.blow_up;
                let mut rec = pack(fin, total);
                rec.blow_up = blow;
                return Ok(rec);
            }
        }
    }
}

/// Sign summary at one grid lambda; the extrema are None when the solve
/// did not converge (sign data of a nonconverged iterate is noise).
#[derive(Clone, Debug, serde::Serialize)]
pub struct LambdaRecord {
    pub lambda: f64,
    pub converged: bool,
    pub min_on_e: Option<f64>,
    pub max_on_e: Option<f64>,
    pub min_global: Option<f64>,
    pub max_global: Option<f64>,
}

/// Scan outcome: per-lambda sign summaries plus the measured
/// antimaximum windows above lambda1.
///
/// delta_local is the largest verified lambda - lambda1 such that every
/// grid point in (lambda1, lambda] has a converged solution strictly
/// negative on the region E, refined by bisection to 1e-3 * lambda1 and
/// right-censored at the window end; delta_global is the same with
/// negativity at every free node. Global negativity implies negativity
/// on E, so delta_global <= delta_local.
#[derive(Clone, Debug, serde::Serialize)]
pub struct AmpScanResult {
    pub lambda1: f64,
    pub lambda_grid: Vec<f64>,
    pub per_lambda: Vec<LambdaRecord>,
    pub region_e: (f64, f64),
    pub delta_local: f64,
    pub delta_global: f64,
}

fn extrema(values: &[f64], idx: &[usize]) -> (Option<f64>, Option<f64>) {
    if idx.is_empty() {
        return (None, None);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &i in idx {
        lo = lo.min(values[i]);
        hi = hi.max(values[i]);
    }
    (Some(lo), Some(hi))
}

/// Branch seed for lambda just above lambda1: project the load on the
/// principal eigenfunction and solve the one-dimensional bifurcation
/// balance sign(c)|c|^{p-1} (lambda1 - lambda) p = <b, phi1>, which puts
/// c on the negative branch.
fn branch_seed(
    phi1: &DiscreteFunction,
    b: &[f64],
    lambda: f64,
    lambda1: f64,
    p: f64,
) -> Option<DiscreteFunction> {
    let free = phi1.values.len() - 1;
    let proj: f64 = (0..free).map(|i| b[i] * phi1.values[i]).sum();
    let denom = (lambda - lambda1) * p;
    if !(proj > 0.0 && denom > 0.0) {
        return None;
    }
    let c = -(proj / denom).powf(1.0 / (p - 1.0));
    Some(DiscreteFunction::new(
        phi1.values.iter().map(|&x| c * x).collect(),
        true,
    ))
}

/// Walk the above-lambda1 prefix where `neg` holds, then bisect the
/// switch to 1e-3 * lambda1. Returns the verified window width.
#[allow(clippy::too_many_arguments)]
fn measure_delta(
    mesh: &RadialMesh,
    spec: &ProblemSpec,
    h: &LoadSpec,
    tol: f64,
    lambda1: f64,
    above: &[(f64, LambdaRecord, Option<DiscreteFunction>)],
    neg: impl Fn(&LambdaRecord) -> bool,
    node_idx: &[usize],
) -> Result<f64, AmpError> {
    let mut last_good: Option<(f64, DiscreteFunction)> = None;
    let mut first_bad: Option<f64> = None;
    for (lam, rec, sol) in above {
        if rec.converged && neg(rec) {
            if let Some(u) = sol {
                last_good = Some((*lam, u.clone()));
                continue;
            }
        }
        first_bad = Some(*lam);
        break;
    }
    let Some((mut lo, mut seed)) = last_good else {
        return Ok(0.0);
    };
    let Some(mut hi) = first_bad else {
        // Negative across the whole window: right-censored.
        return Ok(lo - lambda1);
    };

    let resolution = 1e-3 * lambda1.abs().max(1e-300);
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        let sol = solve_perturbed(mesh, spec, h, mid, Some(&seed), tol)?;
        let (_, mx) = extrema(&sol.u.values, node_idx);
        let good = sol.converged && mx.is_some_and(|m| m < 0.0);
        if good {
            lo = mid;
            seed = sol.u;
        } else {
            hi = mid;
        }
    }
    Ok(lo - lambda1)
}

/// Scan solve_perturbed over an inclusive lambda grid (steps points;
/// steps = 1 gives just the window start) with warm starts, and measure
/// the local and global antimaximum windows above lambda1. Grids
/// entirely below lambda1 report both deltas as 0: the window is
/// measured only above lambda1.
pub fn scan_amp(
    mesh: &RadialMesh,
    spec: &ProblemSpec,
    h: &LoadSpec,
    window: (f64, f64),
    steps: usize,
    region_e: (f64, f64),
    tol: f64,
) -> Result<AmpScanResult, AmpError> {
    let (lo, hi) = window;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(AmpError::InvalidWindow(format!(
            "need lambda_lo < lambda_hi, got ({lo}, {hi})"
        )));
    }
    let (ea, eb) = region_e;
    if !(ea < eb) || eb < mesh.eps() || ea > mesh.big_r() {
        return Err(AmpError::InvalidWindow(format!(
            "region E = [{ea}, {eb}] does not intersect the mesh [{}, {}]",
            mesh.eps(),
            mesh.big_r()
        )));
    }

    let eig = minimize_rayleigh(mesh, spec, &SolverOptions::default())?;
    let lambda1 = eig.lambda1;
    let b = load_vector(mesh, spec.dim, h.weight(), true)?;

    let grid: Vec<f64> = if steps == 0 {
        Vec::new()
    } else if steps == 1 {
        vec![lo]
    } else {
        (0..steps)
            .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
            .collect()
    };

    let free = mesh.num_nodes() - 1;
    let all_idx: Vec<usize> = (0..free).collect();
    let e_idx: Vec<usize> = (0..free)
        .filter(|&i| {
            let r = mesh.nodes()[i];
            ea <= r && r <= eb
        })
        .collect();

    let mut per_lambda = Vec::with_capacity(grid.len());
    let mut above: Vec<(f64, LambdaRecord, Option<DiscreteFunction>)> = Vec::new();
    let mut warm_below: Option<DiscreteFunction> = None;
    let mut warm_above: Option<DiscreteFunction> = None;
    for &lam in &grid {
        let is_above = lam > lambda1;
        let seed_owned;
        let u0 = if is_above {
            match &warm_above {
                Some(u) => Some(u),
                None => {
                    seed_owned = branch_seed(&eig.u, &b, lam, lambda1, spec.p);
                    seed_owned.as_ref()
                }
            }
        } else {
            warm_below.as_ref()
        };
        let sol = solve_perturbed(mesh, spec, h, lam, u0, tol)?;
        let (min_e, max_e) = if sol.converged {
            extrema(&sol.u.values, &e_idx)
        } else {
            (None, None)
        };
        let (min_g, max_g) = if sol.converged {
            extrema(&sol.u.values, &all_idx)
        } else {
            (None, None)
        };
        let rec = LambdaRecord {
            lambda: lam,
            converged: sol.converged,
            min_on_e: min_e,
            max_on_e: max_e,
            min_global: min_g,
            max_global: max_g,
        };
        if sol.converged {
            if is_above {
                warm_above = Some(sol.u.clone());
            } else {
                warm_below = Some(sol.u.clone());
            }
        }
        if is_above {
            above.push((lam, rec.clone(), sol.converged.then(|| sol.u.clone())));
        }
        per_lambda.push(rec);
    }

    let delta_local = measure_delta(
        mesh,
        spec,
        h,
        tol,
        lambda1,
        &above,
        |r| r.max_on_e.is_some_and(|m| m < 0.0),
        &e_idx,
    )?;
    let delta_global = measure_delta(
        mesh,
        spec,
        h,
        tol,
        lambda1,
        &above,
        |r| r.max_global.is_some_and(|m| m < 0.0),
        &all_idx,
    )?
    .min(delta_local);

    Ok(AmpScanResult {
        lambda1,
        lambda_grid: grid,
        per_lambda,
        region_e,
        delta_local,
        delta_global,
    })
}
