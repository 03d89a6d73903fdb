//! Property harness for the functional inequalities the eigenvalue theory
//! leans on: the weighted Hardy inequality between pure power weights, its
//! companion bound with the structural gradient weight L and the companion
//! exponent p*, the pointwise Picone expression, and the embedding bound
//! whose constant comes out of [`crate::weights::embedding_constant`].
//!
//! Trial functions are compactly supported radial bumps
//! u(r) = max(0, 1 - (r/rho)^2)^k * r^m with k >= 1 and m >= 0, drawn
//! deterministically from a seeded generator so every run sees the same
//! family and enlarging the sample count extends the family by a prefix.
//! All checks are radially reduced to one-dimensional quadrature. For the
//! two-sided power-weight and embedding ratios the sphere factor cancels;
//! for the companion inequality it is dropped on both sides and absorbed
//! into the empirical constant, which is only ever reported as a lower
//! bound, never asserted against.
//!
//! The sharp power-weight constant at p = 2 is (2/(N-2-2alpha))^2. We do
//! not take that on faith: an independent one-dimensional Rayleigh-quotient
//! minimization over two-power cutoff trials (r^s inside the unit radius,
//! r^{-t} outside, both integrals in closed form) must reproduce it before
//! it is used as a bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fem::{DiscreteFunction, RadialMesh};
use crate::quad::{integrate, QuadError, QuadratureResult};
use crate::weights::ProblemSpec;

/// Relative slack granted on every declared constant before a trial ratio
/// counts as a violation; covers quadrature noise, nothing else.
pub const RATIO_SLACK: f64 = 1e-10;

const QUAD_TOL: f64 = 1e-11;

#[derive(Debug, thiserror::Error)]
pub enum IneqError {
    /// The companion exponent p* = Np/(N - p - p*alpha) is not positive.
    #[error(
        "invalid exponent regime: N - p - p*alpha = {denom} gives p* = {p_star}; \
         the companion inequality needs p* > 0"
    )]
    ExponentRegime { denom: f64, p_star: f64 },
    /// The independent two-power search failed to reproduce the closed-form
    /// sharp constant, so the oracle is refused rather than trusted.
    #[error("two-power search gives {searched}, closed form gives {closed}; oracle refused")]
    OracleMismatch { searched: f64, closed: f64 },
    #[error("invalid trial family: {0}")]
    InvalidFamily(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

// ---------------------------------------------------------------------------
// Trial functions
// ---------------------------------------------------------------------------

/// One bump u(r) = max(0, 1 - (r/rho)^2)^k * r^m.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Trial {
    pub rho: f64,
    pub k: f64,
    pub m: f64,
}

impl Trial {
    pub fn eval(&self, r: f64) -> f64 {
        if !(r > 0.0) || r >= self.rho {
            return 0.0;
        }
        let x = r / self.rho;
        (1.0 - x * x).powf(self.k) * r.powf(self.m)
    }

    /// Exact derivative on (0, rho); zero outside the support. The m-term
    /// is skipped at m = 0 so no r^{-1} is ever formed.
    pub fn deriv(&self, r: f64) -> f64 {
        if !(r > 0.0) || r >= self.rho {
            return 0.0;
        }
        let x2 = (r / self.rho) * (r / self.rho);
        let core = (1.0 - x2).powf(self.k - 1.0);
        let inner = if self.m == 0.0 {
            0.0
        } else {
            self.m * r.powf(self.m - 1.0) * (1.0 - x2)
        };
        core * (inner - 2.0 * self.k * r.powf(self.m + 1.0) / (self.rho * self.rho))
    }
}

/// Seeded generator of bump trials. rho is drawn log-uniformly, k and m
/// uniformly; draws are sequential, so a family with a larger `samples`
/// and the same seed starts with exactly the trials of the smaller one.
#[derive(Clone, Debug, serde::Serialize)]
pub struct TrialFamily {
    pub rho_range: (f64, f64),
    pub k_range: (f64, f64),
    pub m_range: (f64, f64),
    pub samples: usize,
    pub seed: u64,
}

impl TrialFamily {
    pub fn new(
        rho_range: (f64, f64),
        k_range: (f64, f64),
        m_range: (f64, f64),
        samples: usize,
        seed: u64,
    ) -> Result<Self, IneqError> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ordered(rho_range) || !(rho_range.0 > 0.0) {
            return Err(IneqError::InvalidFamily(format!(
                "rho range must satisfy 0 < lo <= hi < inf, got {rho_range:?}"
            )));
        }
        if !ordered(k_range) || !(k_range.0 >= 1.0) {
            return Err(IneqError::InvalidFamily(format!(
                "k range must satisfy 1 <= lo <= hi < inf, got {k_range:?}"
            )));
        }
        if !ordered(m_range) || !(m_range.0 >= 0.0) {
            return Err(IneqError::InvalidFamily(format!(
                "m range must satisfy 0 <= lo <= hi < inf, got {m_range:?}"
            )));
        }
        if samples == 0 {
            return Err(IneqError::InvalidFamily("sample count must be positive".into()));
        }
        Ok(Self { rho_range, k_range, m_range, samples, seed })
    }

    pub fn trials(&self) -> Vec<Trial> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.samples)
            .map(|_| {
                let rho = rng.gen_range(self.rho_range.0.ln()..=self.rho_range.1.ln()).exp();
                let k = rng.gen_range(self.k_range.0..=self.k_range.1);
                let m = rng.gen_range(self.m_range.0..=self.m_range.1);
                Trial { rho, k, m }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// A trial whose ratio breached the declared bound (or failed to be finite
/// when no bound is declared).
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct Violation {
    pub trial: Trial,
    pub ratio: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct InequalityReport {
    pub inequality: &'static str,
    /// Supremum of lhs/rhs over the family; a lower bound for the true
    /// constant, and at most the declared one when a bound is present.
    pub max_ratio: f64,
    pub attaining: Option<Trial>,
    pub violations: Vec<Violation>,
    pub oracle_constant: Option<f64>,
    pub p_star: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CknVariant {
    Basic,
    Generalized,
}

// ---------------------------------------------------------------------------
// Ratio plumbing
// ---------------------------------------------------------------------------

fn convergent_value(q: &QuadratureResult) -> f64 {
    if q.is_convergent() {
        q.value
    } else {
        f64::NAN
    }
}

/// lhs/rhs with 0/0 = 0; anything non-finite or with a vanishing rhs and a
/// live lhs becomes a non-finite ratio and shows up as a violation.
fn ratio_of(lhs: f64, rhs: f64) -> f64 {
    if !lhs.is_finite() || !rhs.is_finite() {
        return f64::NAN;
    }
    if !(rhs > 0.0) {
        return if lhs.abs() <= f64::MIN_POSITIVE { 0.0 } else { f64::INFINITY };
    }
    lhs / rhs
}

fn scan_family(
    inequality: &'static str,
    trials: Vec<Trial>,
    bound: Option<f64>,
    p_star: Option<f64>,
    ratio: impl Fn(&Trial) -> Result<f64, IneqError>,
) -> Result<InequalityReport, IneqError> {
    let mut max_ratio = 0.0_f64;
    let mut attaining = None;
    let mut violations = Vec::new();
    for t in trials {
        let r = ratio(&t)?;
        if attaining.is_none() || r > max_ratio {
            max_ratio = r;
            attaining = Some(t);
        }
        let breached = match bound {
            Some(c) => !(r <= c * (1.0 + RATIO_SLACK)),
            None => !r.is_finite(),
        };
        if breached {
            violations.push(Violation { trial: t, ratio: r, bound: bound.unwrap_or(f64::INFINITY) });
        }
    }
    Ok(InequalityReport { inequality, max_ratio, attaining, violations, oracle_constant: bound, p_star })
}

// ---------------------------------------------------------------------------
// Power-weight inequality (basic and companion variants)
// ---------------------------------------------------------------------------

/// Independent search for the sharp p = 2 power-weight constant with weight
/// exponent gamma = N - 1 - 2*alpha on the gradient side. Trials are
/// u = r^s on (0, 1], r^{-t} beyond; both Rayleigh integrals are closed
/// forms, and the quotient is minimized over a grid of (s, t) that crowds
/// the critical outer exponent t -> (gamma-1)/2 from above. The minimum
/// approaches ((gamma-1)/2)^2 from above, so the returned constant
/// approaches the sharp one from below.
fn two_power_sharp_constant(gamma: f64) -> f64 {
    assert!(gamma > 1.0);
    let half = 0.5 * (gamma - 1.0);
    let mut best = f64::INFINITY;
    for i in 0..24 {
        let s = half * 10f64.powf(-4.0 + 4.0 * i as f64 / 23.0);
        for j in 0..36 {
            let t = half * (1.0 + 10f64.powf(-7.0 + 7.0 * j as f64 / 35.0));
            let a = 1.0 / (gamma - 1.0 + 2.0 * s);
            let b = 1.0 / (2.0 * t - gamma + 1.0);
            let q = (s * s * a + t * t * b) / (a + b);
            if q < best {
                best = q;
            }
        }
    }
    1.0 / best
}

/// Checks sup over the family of
///
/// basic:      int r^{N-1-p*beta} u^p dr  /  int r^{N-1-p*alpha} |u'|^p dr
/// companion:  (int r^{N-1} u^{p*} dr)^{p/p*}  /  int r^{N-1} L |u'|^p dr
///
/// For the basic variant at p = 2 the sharp constant is known in closed
/// form and is enforced as a bound, but only after the independent
/// two-power search reproduces it to 1e-4 relative. The companion constant
/// is unknown in general: no bound is enforced, the empirical sup is
/// recorded as a lower bound, and only finiteness is demanded.
pub fn check_ckn(
    family: &TrialFamily,
    spec: &ProblemSpec,
    variant: CknVariant,
) -> Result<InequalityReport, IneqError> {
    let n = spec.dim as f64;
    let p = spec.p;
    match variant {
        CknVariant::Basic => {
            let oracle = if (p - 2.0).abs() <= 1e-12 {
                let closed = (2.0 / (n - 2.0 - 2.0 * spec.alpha)).powi(2);
                let searched = two_power_sharp_constant(n - 1.0 - 2.0 * spec.alpha);
                if !((searched - closed).abs() <= 1e-4 * closed) {
                    return Err(IneqError::OracleMismatch { searched, closed });
                }
                Some(closed)
            } else {
                None
            };
            let wk = n - 1.0 - p * spec.beta();
            let wl = n - 1.0 - p * spec.alpha;
            scan_family("ckn-basic", family.trials(), oracle, None, |t| {
                let lhs = integrate(|r| r.powf(wk) * t.eval(r).powf(p), 0.0, t.rho, QUAD_TOL, true)?;
                let rhs =
                    integrate(|r| r.powf(wl) * t.deriv(r).abs().powf(p), 0.0, t.rho, QUAD_TOL, true)?;
                Ok(ratio_of(convergent_value(&lhs), convergent_value(&rhs)))
            })
        }
        CknVariant::Generalized => {
            let denom = n - p - p * spec.alpha;
            let p_star = n * p / denom;
            if !(denom > 0.0) {
                return Err(IneqError::ExponentRegime { denom, p_star });
            }
            let l = spec.weight_l.clone();
            scan_family("ckn-generalized", family.trials(), None, Some(p_star), move |t| {
                let lhs =
                    integrate(|r| r.powf(n - 1.0) * t.eval(r).powf(p_star), 0.0, t.rho, QUAD_TOL, true)?;
                let rhs = integrate(
                    |r| r.powf(n - 1.0) * l.eval(r) * t.deriv(r).abs().powf(p),
                    0.0,
                    t.rho,
                    QUAD_TOL,
                    true,
                )?;
                let lv = convergent_value(&lhs);
                let num = if lv.is_nan() { f64::NAN } else { lv.max(0.0).powf(p / p_star) };
                Ok(ratio_of(num, convergent_value(&rhs)))
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Picone expression
// ---------------------------------------------------------------------------

/// |u'|^p - |v'|^{p-2} v' (u^p / v^{p-1})' at one quadrature point, with the
/// quotient rule expanded in t = u/v and tau = u'/v':
///
///   |v'|^p * ( |tau|^p - p t^{p-1} tau + (p-1) t^p )
///
/// The bracket is a Young inequality in (tau, t) and vanishes exactly at
/// tau = t, which is returned as a literal zero so proportional pairs with
/// an exactly representable constant evaluate to 0.0.
fn picone_pointwise(uq: f64, vq: f64, du: f64, dv: f64, p: f64) -> f64 {
    if dv == 0.0 {
        return du.abs().powf(p);
    }
    let t = uq / vq;
    let tau = du / dv;
    if tau == t {
        return 0.0;
    }
    dv.abs().powf(p) * (tau.abs().powf(p) - p * t.powf(p - 1.0) * tau + (p - 1.0) * t.powf(p))
}

/// Global minimum of the Picone expression over two Gauss points per
/// element, with exact piecewise-linear derivatives. Nonnegative up to
/// rounding for admissible pairs; zero exactly on u = c v.
pub fn check_picone(
    mesh: &RadialMesh,
    u: &DiscreteFunction,
    v: &DiscreteFunction,
    p: f64,
) -> Result<f64, IneqError> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(IneqError::Precondition(format!("p must be a finite number > 1, got {p}")));
    }
    let n = mesh.num_nodes();
    if u.values.len() != n || v.values.len() != n {
        return Err(IneqError::Precondition("node counts do not match the mesh".into()));
    }
    if let Some(&bad) = u.values.iter().find(|&&x| !(x >= 0.0)) {
        return Err(IneqError::Precondition(format!("u must be nonnegative, found {bad}")));
    }
    let vmax = v.values.iter().fold(0.0_f64, |a, &b| a.max(b));
    let vmin = v.values.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    // The quotient expansion divides by v; demand a positive relative floor.
    if !(vmin > 0.0) || vmin < 1e-12 * vmax {
        return Err(IneqError::Precondition(format!(
            "v must be bounded below by a positive margin, min {vmin}, max {vmax}"
        )));
    }

    let gauss = [-(1.0 / 3.0_f64).sqrt(), (1.0 / 3.0_f64).sqrt()];
    let nodes = mesh.nodes();
    let mut min_expr = f64::INFINITY;
    for i in 0..n - 1 {
        let h = nodes[i + 1] - nodes[i];
        let du = (u.values[i + 1] - u.values[i]) / h;
        let dv = (v.values[i + 1] - v.values[i]) / h;
        for &xi in &gauss {
            let w = 0.5 * (1.0 + xi);
            let uq = u.values[i] + w * (u.values[i + 1] - u.values[i]);
            let vq = v.values[i] + w * (v.values[i + 1] - v.values[i]);
            let e = picone_pointwise(uq, vq, du, dv, p);
            if e < min_expr {
                min_expr = e;
            }
        }
    }
    Ok(min_expr)
}

// ---------------------------------------------------------------------------
// Embedding bound
// ---------------------------------------------------------------------------

/// Asserts int r^{N-1} |K| u^p <= C int r^{N-1} L |u'|^p for every trial.
/// C must come from a convergent embedding-constant computation; the sphere
/// factor cancels in the ratio.
pub fn check_embedding(
    family: &TrialFamily,
    spec: &ProblemSpec,
    c: f64,
) -> Result<InequalityReport, IneqError> {
    if !(c.is_finite() && c > 0.0) {
        return Err(IneqError::Precondition(format!(
            "embedding constant must be positive and finite, got {c}"
        )));
    }
    let n = spec.dim as f64;
    let p = spec.p;
    let k = spec.weight_k.clone();
    let l = spec.weight_l.clone();
    scan_family("embedding", family.trials(), Some(c), None, move |t| {
        let lhs = integrate(
            |r| r.powf(n - 1.0) * k.eval(r).abs() * t.eval(r).powf(p),
            0.0,
            t.rho,
            QUAD_TOL,
            true,
        )?;
        let rhs = integrate(
            |r| r.powf(n - 1.0) * l.eval(r) * t.deriv(r).abs().powf(p),
            0.0,
            t.rho,
            QUAD_TOL,
            true,
        )?;
        Ok(ratio_of(convergent_value(&lhs), convergent_value(&rhs)))
    })
}
