//! Radial weight functions and the admissibility conditions of the
//! weighted eigenvalue problem.
//!
//! A weight is a positive or sign-changing function of the radius given in
//! a small grammar: pure powers `c r^e`, scaled powers `c r^a (1 + r^z)`,
//! piecewise glue, and log-log interpolated tables. Everything in scope is
//! asymptotically power-law, which the quadrature backbone and the
//! divergence detector both rely on.
//!
//! The two admissibility conditions are checked numerically:
//!
//! * pointwise bounds on a log-spaced grid (plus asymptotic exponent
//!   comparison at the endpoints where the form allows it):
//!   `v(r) > r^{-p alpha}`, `0 < w(r) < r^{-p beta}`, `L >= v`,
//!   `|K| <= w`, all strict checks carrying a relative margin of 1e-12
//!   with isolated equality downgraded to a warning;
//! * convergence of the embedding constant
//!   `C = int_0^inf r^{N-1} w(r) G(r) dr` where
//!   `G(r) = (int_r^inf t^{(1-N)/(p-1)} v(t)^{-1/(p-1)} dt)^{p-1}`
//!   (the outer exponent p/p' equals p-1).
//!
//! Also here: `F(r) = int_0^r ds/(s L(s))` and the boundedness integral
//! `int_0^inf s F(s)^2 K(s) ds` used by the radial asymptotics checks.

use crate::quad::{integrate, QuadError, QuadratureResult, Verdict};

/// Declared sign information. `StrictlyPositive` is a claim the
/// constructors make only when it holds structurally (positive
/// coefficients everywhere); admissibility re-checks it on a grid.
#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sign {
    StrictlyPositive,
    SignChanging,
}

#[derive(Clone, Debug, PartialEq)]
enum Form {
    /// coeff * r^exponent
    Power { coeff: f64, exponent: f64 },
    /// coeff * r^exponent * (1 + r^zeta)
    ProductPower { coeff: f64, exponent: f64, zeta: f64 },
    /// (upper breakpoint, form) pieces; breakpoints strictly increasing,
    /// the last one +infinity. A radius belongs to the first piece whose
    /// breakpoint is >= r.
    Piecewise(Vec<(f64, Form)>),
    /// Log-log linear interpolation through (radii, values), extrapolated
    /// by the boundary power law.
    Table { radii: Vec<f64>, values: Vec<f64> },
}

/// A radial weight function.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightFunction {
    form: Form,
    sign: Sign,
}

#[derive(Debug, thiserror::Error)]
pub enum WeightError {
    #[error("invalid weight: {0}")]
    Invalid(String),
    #[error("{role} must be strictly positive, but evaluates to {value} at r = {r}")]
    NotPositive { role: &'static str, value: f64, r: f64 },
    #[error("invalid problem parameters: {0}")]
    InvalidSpec(String),
    #[error("hypothesis failed: (r L(r))^{{-1}} \u{2208} L^1(0, \u{221e}) (F diverges at the origin)")]
    FluxHypothesis,
    #[error("weight expression parse error at byte {at}: {msg}")]
    Parse { at: usize, msg: String },
    #[error("admissibility grid must have at least 16 points, got {0}")]
    GridTooSmall(usize),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

fn finite(x: f64, what: &str) -> Result<(), WeightError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(WeightError::Invalid(format!("{what} must be finite, got {x}")))
    }
}

impl WeightFunction {
    /// `coeff * r^exponent`.
    pub fn power(coeff: f64, exponent: f64) -> Self {
        let sign = if coeff > 0.0 {
            Sign::StrictlyPositive
        } else {
            Sign::SignChanging
        };
        WeightFunction {
            form: Form::Power { coeff, exponent },
            sign,
        }
    }

    /// `coeff * r^exponent * (1 + r^zeta)`; the bracket is > 1 for r > 0,
    /// so the sign is the sign of `coeff`.
    pub fn product_power(coeff: f64, exponent: f64, zeta: f64) -> Self {
        let sign = if coeff > 0.0 {
            Sign::StrictlyPositive
        } else {
            Sign::SignChanging
        };
        WeightFunction {
            form: Form::ProductPower {
                coeff,
                exponent,
                zeta,
            },
            sign,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::power(c, 0.0)
    }

    /// Glue pieces at strictly increasing breakpoints; the last breakpoint
    /// must be `f64::INFINITY` so the function is total on (0, inf).
    pub fn piecewise(pieces: Vec<(f64, WeightFunction)>) -> Result<Self, WeightError> {
        if pieces.is_empty() {
            return Err(WeightError::Invalid("piecewise weight needs pieces".into()));
        }
        let mut prev = 0.0;
        for (b, _) in &pieces {
            if !(*b > prev) {
                return Err(WeightError::Invalid(format!(
                    "piecewise breakpoints must be strictly increasing and positive, got {b} after {prev}"
                )));
            }
            prev = *b;
        }
        if pieces.last().unwrap().0 != f64::INFINITY {
            return Err(WeightError::Invalid(
                "last piecewise breakpoint must be inf".into(),
            ));
        }
        let sign = if pieces.iter().all(|(_, w)| w.sign == Sign::StrictlyPositive) {
            Sign::StrictlyPositive
        } else {
            Sign::SignChanging
        };
        Ok(WeightFunction {
            form: Form::Piecewise(pieces.into_iter().map(|(b, w)| (b, w.form)).collect()),
            sign,
        })
    }

    /// Tabulated weight: strictly positive values over strictly increasing
    /// radii, interpolated linearly in log-log coordinates and extrapolated
    /// by the boundary power law.
    pub fn table(radii: Vec<f64>, values: Vec<f64>) -> Result<Self, WeightError> {
        if radii.len() < 2 || radii.len() != values.len() {
            return Err(WeightError::Invalid(
                "table needs at least two (radius, value) pairs of equal length".into(),
            ));
        }
        let mut prev = 0.0;
        for &r in &radii {
            finite(r, "table radius")?;
            if !(r > prev) {
                return Err(WeightError::Invalid(
                    "table radii must be strictly increasing and positive".into(),
                ));
            }
            prev = r;
        }
        for (&r, &v) in radii.iter().zip(&values) {
            finite(v, "table value")?;
            if !(v > 0.0) {
                return Err(WeightError::NotPositive {
                    role: "table value",
                    value: v,
                    r,
                });
            }
        }
        Ok(WeightFunction {
            form: Form::Table { radii, values },
            sign: Sign::StrictlyPositive,
        })
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.sign == Sign::StrictlyPositive
    }

    /// Evaluate at radius r > 0.
    pub fn eval(&self, r: f64) -> f64 {
        eval_form(&self.form, r)
    }

    /// Asymptotic power behaviour `f(r) ~ coeff * r^exponent` at an
    /// endpoint, when the representation exposes it.
    pub fn exponent_at(&self, end: Endpoint) -> Option<(f64, f64)> {
        exponent_of(&self.form, end)
    }

    /// Radii where the expression changes analytic form (piecewise glue
    /// points and table knots). Quadrature splits at these so kinks and
    /// jumps never sit inside a Gauss panel.
    pub fn breakpoints(&self) -> Vec<f64> {
        fn collect(form: &Form, out: &mut Vec<f64>) {
            match form {
                Form::Power { .. } | Form::ProductPower { .. } => {}
                Form::Piecewise(pieces) => {
                    for (b, f) in pieces {
                        if b.is_finite() {
                            out.push(*b);
                        }
                        collect(f, out);
                    }
                }
                Form::Table { radii, .. } => out.extend(radii.iter().copied()),
            }
        }
        let mut out = Vec::new();
        collect(&self.form, &mut out);
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

fn eval_form(form: &Form, r: f64) -> f64 {
    match form {
        Form::Power { coeff, exponent } => coeff * r.powf(*exponent),
        Form::ProductPower {
            coeff,
            exponent,
            zeta,
        } => coeff * r.powf(*exponent) * (1.0 + r.powf(*zeta)),
        Form::Piecewise(pieces) => {
            for (b, f) in pieces {
                if r <= *b {
                    return eval_form(f, r);
                }
            }
            eval_form(&pieces.last().unwrap().1, r)
        }
        Form::Table { radii, values } => {
            let x = r.ln();
            let xs: &[f64] = radii;
            // Segment index for interpolation; clamp for extrapolation.
            let i = match xs.partition_point(|&t| t < r) {
                0 => 0,
                j if j >= xs.len() => xs.len() - 2,
                j => j - 1,
            };
            let (x0, x1) = (xs[i].ln(), xs[i + 1].ln());
            let (y0, y1) = (values[i].ln(), values[i + 1].ln());
            let t = (x - x0) / (x1 - x0);
            (y0 + t * (y1 - y0)).exp()
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Zero,
    Infinity,
}

fn exponent_of(form: &Form, end: Endpoint) -> Option<(f64, f64)> {
    match form {
        Form::Power { coeff, exponent } => Some((*coeff, *exponent)),
        Form::ProductPower {
            coeff,
            exponent,
            zeta,
        } => {
            let bracket_exp = match end {
                Endpoint::Zero => {
                    if *zeta > 0.0 {
                        0.0
                    } else if *zeta < 0.0 {
                        *zeta
                    } else {
                        return Some((2.0 * coeff, *exponent));
                    }
                }
                Endpoint::Infinity => {
                    if *zeta > 0.0 {
                        *zeta
                    } else if *zeta < 0.0 {
                        0.0
                    } else {
                        return Some((2.0 * coeff, *exponent));
                    }
                }
            };
            Some((*coeff, exponent + bracket_exp))
        }
        Form::Piecewise(pieces) => match end {
            Endpoint::Zero => exponent_of(&pieces[0].1, end),
            Endpoint::Infinity => exponent_of(&pieces.last().unwrap().1, end),
        },
        Form::Table { radii, values } => {
            let n = radii.len();
            let (i, j) = match end {
                Endpoint::Zero => (0, 1),
                Endpoint::Infinity => (n - 2, n - 1),
            };
            let e = (values[j].ln() - values[i].ln()) / (radii[j].ln() - radii[i].ln());
            let c = values[i] / radii[i].powf(e);
            Some((c, e))
        }
    }
}

// ---------------------------------------------------------------------------
// Compact expression grammar (the CLI config format)
//
//   pow(c,e)        c * r^e
//   ppow(c,a,z)     c * r^a * (1 + r^z)
//   pw(b1: E1, ..., inf: En)
//   table(r1: v1, r2: v2, ...)
//   <number>        shorthand for pow(<number>, 0)
// ---------------------------------------------------------------------------

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, WeightError> {
        Err(WeightError::Parse {
            at: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src.as_bytes()[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.as_bytes().get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), WeightError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected '{}'", c as char))
        }
    }

    fn ident(&mut self) -> &'a str {
        self.skip_ws();
        let start = self.pos;
        while self
            .src
            .as_bytes()
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_alphabetic())
        {
            self.pos += 1;
        }
        &self.src[start..self.pos]
    }

    /// A pw breakpoint: a finite number or the keyword `inf`.
    fn breakpoint(&mut self) -> Result<f64, WeightError> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        if let Some(tail) = rest.strip_prefix("inf").or_else(|| rest.strip_prefix("+inf")) {
            self.pos = self.src.len() - tail.len();
            return Ok(f64::INFINITY);
        }
        self.number()
    }

    fn number(&mut self) -> Result<f64, WeightError> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.src.as_bytes();
        while let Some(&b) = bytes.get(self.pos) {
            // Sign characters only belong to the number at its start or
            // right after an exponent marker.
            let sign_ok = self.pos == start || matches!(bytes[self.pos - 1], b'e' | b'E');
            let part = b.is_ascii_digit()
                || b == b'.'
                || b == b'e'
                || b == b'E'
                || ((b == b'+' || b == b'-') && sign_ok);
            if !part {
                break;
            }
            self.pos += 1;
        }
        let text = &self.src[start..self.pos];
        match text.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            Ok(x) => {
                self.pos = start;
                self.err(format!("number must be finite, got {x}"))
            }
            Err(_) => {
                self.pos = start;
                self.err(format!("expected a number, found {:?}", truncate(text)))
            }
        }
    }

    fn expr(&mut self, depth: usize) -> Result<WeightFunction, WeightError> {
        if depth > 8 {
            return self.err("weight expression nested too deeply");
        }
        match self.peek() {
            Some(b) if b.is_ascii_alphabetic() => {}
            _ => return Ok(WeightFunction::power(self.number()?, 0.0)),
        }
        let name = self.ident();
        match name {
            "pow" => {
                self.expect(b'(')?;
                let c = self.number()?;
                self.expect(b',')?;
                let e = self.number()?;
                self.expect(b')')?;
                Ok(WeightFunction::power(c, e))
            }
            "ppow" => {
                self.expect(b'(')?;
                let c = self.number()?;
                self.expect(b',')?;
                let a = self.number()?;
                self.expect(b',')?;
                let z = self.number()?;
                self.expect(b')')?;
                Ok(WeightFunction::product_power(c, a, z))
            }
            "pw" => {
                self.expect(b'(')?;
                let mut pieces = Vec::new();
                loop {
                    let b = self.breakpoint()?;
                    self.expect(b':')?;
                    let w = self.expr(depth + 1)?;
                    pieces.push((b, w));
                    match self.peek() {
                        Some(b',') => {
                            self.pos += 1;
                        }
                        Some(b')') => {
                            self.pos += 1;
                            break;
                        }
                        _ => return self.err("expected ',' or ')' in pw(...)"),
                    }
                }
                WeightFunction::piecewise(pieces)
            }
            "table" => {
                self.expect(b'(')?;
                let mut radii = Vec::new();
                let mut values = Vec::new();
                loop {
                    radii.push(self.number()?);
                    self.expect(b':')?;
                    values.push(self.number()?);
                    match self.peek() {
                        Some(b',') => {
                            self.pos += 1;
                        }
                        Some(b')') => {
                            self.pos += 1;
                            break;
                        }
                        _ => return self.err("expected ',' or ')' in table(...)"),
                    }
                }
                WeightFunction::table(radii, values)
            }
            "inf" => self.err("'inf' is only valid as a pw breakpoint"),
            "" => self.err("expected a weight expression"),
            other => self.err(format!(
                "unknown weight constructor {other:?} (expected pow, ppow, pw or table)"
            )),
        }
    }
}

fn truncate(s: &str) -> &str {
    &s[..s.len().min(24)]
}

impl std::str::FromStr for WeightFunction {
    type Err = WeightError;

    fn from_str(s: &str) -> Result<Self, WeightError> {
        let mut p = Parser { src: s, pos: 0 };
        let w = p.expr(0)?;
        p.skip_ws();
        if p.pos != s.len() {
            return p.err("trailing input after weight expression");
        }
        Ok(w)
    }
}

fn fmt_form(form: &Form, out: &mut String) {
    use std::fmt::Write;
    match form {
        Form::Power { coeff, exponent } => {
            let _ = write!(out, "pow({coeff},{exponent})");
        }
        Form::ProductPower {
            coeff,
            exponent,
            zeta,
        } => {
            let _ = write!(out, "ppow({coeff},{exponent},{zeta})");
        }
        Form::Piecewise(pieces) => {
            out.push_str("pw(");
            for (i, (b, f)) in pieces.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                if b.is_infinite() {
                    out.push_str("inf");
                } else {
                    let _ = write!(out, "{b}");
                }
                out.push(':');
                fmt_form(f, out);
            }
            out.push(')');
        }
        Form::Table { radii, values } => {
            out.push_str("table(");
            for (i, (r, v)) in radii.iter().zip(values).enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{r}:{v}");
            }
            out.push(')');
        }
    }
}

impl std::fmt::Display for WeightFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut s = String::new();
        fmt_form(&self.form, &mut s);
        f.write_str(&s)
    }
}

// ---------------------------------------------------------------------------
// Problem specification
// ---------------------------------------------------------------------------

/// The full eigenvalue problem: dimension, exponents, the two problem
/// weights L (diffusion) and K (constraint), the comparison pair (v, w)
/// used by the admissibility conditions, and the truncation window.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub dim: u32,
    pub p: f64,
    pub alpha: f64,
    pub weight_l: WeightFunction,
    pub weight_k: WeightFunction,
    pub lower_v: WeightFunction,
    pub upper_w: WeightFunction,
    pub eps: f64,
    pub big_r: f64,
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: u32,
        p: f64,
        alpha: f64,
        weight_l: WeightFunction,
        weight_k: WeightFunction,
        lower_v: WeightFunction,
        upper_w: WeightFunction,
        eps: f64,
        big_r: f64,
    ) -> Result<Self, WeightError> {
        if dim < 2 {
            return Err(WeightError::InvalidSpec(format!("dimension must be >= 2, got {dim}")));
        }
        if !(p > 1.0) || !p.is_finite() {
            return Err(WeightError::InvalidSpec(format!("p must be > 1, got {p}")));
        }
        if !(alpha > -1.0 && alpha < 0.0) {
            return Err(WeightError::InvalidSpec(format!(
                "alpha must lie in (-1, 0), got {alpha}"
            )));
        }
        if !(eps > 0.0 && big_r > eps) || !big_r.is_finite() {
            return Err(WeightError::InvalidSpec(format!(
                "truncation must satisfy 0 < eps < R < inf, got eps = {eps}, R = {big_r}"
            )));
        }
        if !weight_l.is_strictly_positive() {
            return Err(WeightError::InvalidSpec(
                "L must be declared strictly positive".into(),
            ));
        }
        Ok(ProblemSpec {
            dim,
            p,
            alpha,
            weight_l,
            weight_k,
            lower_v,
            upper_w,
            eps,
            big_r,
        })
    }

    /// beta = alpha + 1.
    pub fn beta(&self) -> f64 {
        self.alpha + 1.0
    }

    /// Conjugate exponent p' = p/(p-1).
    pub fn p_conj(&self) -> f64 {
        self.p / (self.p - 1.0)
    }
}

// ---------------------------------------------------------------------------
// Derived quantities
// ---------------------------------------------------------------------------

fn sample_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// G(r) = (int_r^inf t^{(1-N)/(p-1)} v(t)^{-1/(p-1)} dt)^{p-1}.
pub fn compute_g(spec: &ProblemSpec, r: f64, tol: f64) -> Result<QuadratureResult, WeightError> {
    if !(r > 0.0) {
        return Err(WeightError::InvalidSpec(format!("radius must be > 0, got {r}")));
    }
    for t in sample_grid(r, r * 1e6, 24) {
        let v = spec.lower_v.eval(t);
        if !(v > 0.0) {
            return Err(WeightError::NotPositive {
                role: "v",
                value: v,
                r: t,
            });
        }
    }
    let n = spec.dim as f64;
    let p = spec.p;
    let e1 = (1.0 - n) / (p - 1.0);
    let e2 = -1.0 / (p - 1.0);
    let v = spec.lower_v.clone();
    let integrand = move |t: f64| t.powf(e1) * v.eval(t).powf(e2);
    let mut inner = integrate(&integrand, r, f64::INFINITY, tol / 8.0, false)?;
    if inner.verdict == Verdict::Divergent {
        return Ok(inner);
    }
    // The outer power p/p' = p - 1 scales the error by
    // (p-1) inner^{p-2}, which is large when p < 2 and the inner value is
    // small; re-run tighter when the first pass cannot cover it.
    let budget = |q: &QuadratureResult| {
        let value = q.value.powf(p - 1.0);
        let deriv = (p - 1.0) * q.value.powf(p - 2.0);
        tol * value.abs().max(1.0) / deriv.abs().max(f64::MIN_POSITIVE)
    };
    let need = budget(&inner);
    if inner.error_estimate > need && need.is_finite() && need > 0.0 {
        let retry = integrate(&integrand, r, f64::INFINITY, (need / 2.0).max(1e-14), false)?;
        inner = QuadratureResult {
            evaluations: retry.evaluations + inner.evaluations,
            ..retry
        };
        if inner.verdict == Verdict::Divergent {
            return Ok(inner);
        }
    }
    let value = inner.value.powf(p - 1.0);
    let deriv = (p - 1.0) * inner.value.powf(p - 2.0);
    let error_estimate = (deriv * inner.error_estimate).abs();
    let verdict = if inner.verdict != Verdict::Inconclusive
        && error_estimate <= tol * value.abs().max(1.0)
    {
        Verdict::Convergent
    } else {
        Verdict::Inconclusive
    };
    Ok(QuadratureResult {
        value,
        error_estimate,
        verdict,
        evaluations: inner.evaluations,
    })
}

/// Embedding constant plus, when divergent, which endpoint is to blame.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct EmbeddingResult {
    pub quad: QuadratureResult,
    pub divergent_at: Option<Endpoint>,
}

/// C = int_0^inf r^{N-1} w(r) G(r) dr, split at r = 1 so a divergence is
/// attributed to the endpoint that caused it.
pub fn embedding_constant(spec: &ProblemSpec, tol: f64) -> Result<EmbeddingResult, WeightError> {
    for r in sample_grid(1e-6, 1e6, 25) {
        let w = spec.upper_w.eval(r);
        if !(w > 0.0) {
            return Err(WeightError::NotPositive {
                role: "w",
                value: w,
                r,
            });
        }
    }
    // If G itself is divergent (the inner integral has a fat tail), every
    // G(r) is infinite; report as a tail divergence.
    let probe = compute_g(spec, 1.0, tol.max(1e-8))?;
    if probe.verdict == Verdict::Divergent {
        return Ok(EmbeddingResult {
            quad: QuadratureResult {
                value: f64::NAN,
                error_estimate: f64::INFINITY,
                verdict: Verdict::Divergent,
                evaluations: probe.evaluations,
            },
            divergent_at: Some(Endpoint::Infinity),
        });
    }

    let inner_tol = (tol * 1e-2).max(1e-13);
    let evals = std::cell::Cell::new(probe.evaluations);
    let integrand = |r: f64| {
        let g = match compute_g(spec, r, inner_tol) {
            Ok(q) => {
                evals.set(evals.get() + q.evaluations);
                q
            }
            Err(_) => return f64::NAN,
        };
        if g.verdict == Verdict::Divergent {
            return f64::NAN;
        }
        let n1 = spec.dim as f64 - 1.0;
        r.powf(n1) * spec.upper_w.eval(r) * g.value
    };

    let head = integrate(&integrand, 0.0, 1.0, tol, true)?;
    if head.verdict == Verdict::Divergent {
        return Ok(EmbeddingResult {
            quad: QuadratureResult {
                evaluations: head.evaluations + evals.get(),
                ..head
            },
            divergent_at: Some(Endpoint::Zero),
        });
    }
    let tail = integrate(&integrand, 1.0, f64::INFINITY, tol, false)?;
    if tail.verdict == Verdict::Divergent {
        return Ok(EmbeddingResult {
            quad: QuadratureResult {
                evaluations: head.evaluations + tail.evaluations + evals.get(),
                ..tail
            },
            divergent_at: Some(Endpoint::Infinity),
        });
    }
    let verdict = if head.verdict == Verdict::Convergent && tail.verdict == Verdict::Convergent {
        Verdict::Convergent
    } else {
        Verdict::Inconclusive
    };
    Ok(EmbeddingResult {
        quad: QuadratureResult {
            value: head.value + tail.value,
            // The inner quadratures run at inner_tol relative; fold their
            // contribution into the outer estimate.
            error_estimate: head.error_estimate
                + tail.error_estimate
                + inner_tol * (head.value + tail.value).abs(),
            verdict,
            evaluations: head.evaluations + tail.evaluations + evals.get(),
        },
        divergent_at: None,
    })
}

/// F(r) = int_0^r ds / (s L(s)). L is any positive function of the
/// radius, not just a grammar weight, so reference cases with
/// non-power-law L stay expressible.
pub fn compute_f<L: Fn(f64) -> f64>(
    l: L,
    r: f64,
    tol: f64,
) -> Result<QuadratureResult, WeightError> {
    if !(r > 0.0) {
        return Err(WeightError::InvalidSpec(format!("radius must be > 0, got {r}")));
    }
    for s in sample_grid(r * 1e-9, r, 24) {
        let lv = l(s);
        if !(lv > 0.0) {
            return Err(WeightError::NotPositive {
                role: "L",
                value: lv,
                r: s,
            });
        }
    }
    Ok(integrate(move |s| 1.0 / (s * l(s)), 0.0, r, tol, true)?)
}

/// int_0^inf s F(s)^2 K(s) ds. Errors if K takes negative values on the
/// sample grid or if F already diverges at the origin (the integral's
/// hypothesis); a fat tail is reported through the divergent verdict.
pub fn boundedness_integral<K, L>(k: K, l: L, tol: f64) -> Result<QuadratureResult, WeightError>
where
    K: Fn(f64) -> f64,
    L: Fn(f64) -> f64,
{
    for r in sample_grid(1e-8, 1e8, 33) {
        let kv = k(r);
        if kv < 0.0 {
            return Err(WeightError::Invalid(format!(
                "K must be nonnegative for the boundedness integral, but K({r}) = {kv}"
            )));
        }
    }
    let hypothesis = compute_f(&l, 1.0, tol.max(1e-9))?;
    if hypothesis.verdict == Verdict::Divergent {
        return Err(WeightError::FluxHypothesis);
    }

    let inner_tol = (tol * 1e-2).max(1e-13);
    let inner_evals = std::cell::Cell::new(hypothesis.evaluations);
    let integrand = |s: f64| {
        let kv = k(s);
        if kv == 0.0 {
            // Avoid the nested F solve where the weight kills the term.
            return 0.0;
        }
        match compute_f(&l, s, inner_tol) {
            Ok(f) if f.verdict != Verdict::Divergent => {
                inner_evals.set(inner_evals.get() + f.evaluations);
                s * f.value * f.value * kv
            }
            _ => f64::NAN,
        }
    };
    let res = integrate(&integrand, 0.0, f64::INFINITY, tol, false)?;
    Ok(QuadratureResult {
        error_estimate: if res.verdict == Verdict::Divergent {
            res.error_estimate
        } else {
            res.error_estimate + 2.0 * inner_tol * res.value.abs()
        },
        evaluations: res.evaluations + inner_evals.get(),
        ..res
    })
}

// ---------------------------------------------------------------------------
// Admissibility
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    VLowerBound,
    WUpperBound,
    WPositive,
    LDominatesV,
    KBoundedByW,
}

impl CheckKind {
    fn describe(self) -> &'static str {
        match self {
            CheckKind::VLowerBound => "v(r) > r^{-p alpha}",
            CheckKind::WUpperBound => "w(r) < r^{-p beta}",
            CheckKind::WPositive => "w(r) > 0",
            CheckKind::LDominatesV => "L(r) >= v(r)",
            CheckKind::KBoundedByW => "|K(r)| <= w(r)",
        }
    }
}

/// One pointwise violation; `r` is 0 or infinity for failures found by the
/// asymptotic exponent comparison rather than on the grid.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct ViolationRecord {
    pub check: CheckKind,
    pub r: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize)]
#[serde(rename_all = "lowercase", tag = "verdict", content = "reason")]
pub enum AdmissibilityVerdict {
    Admissible,
    Inadmissible(&'static str),
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct AdmissibilityReport {
    pub c1_holds: bool,
    pub v_bound_holds: bool,
    pub w_bound_holds: bool,
    pub l_dominates_v: bool,
    pub k_bounded_by_w: bool,
    pub worst_violation: Option<ViolationRecord>,
    pub g_curve: Vec<(f64, f64)>,
    pub embedding: EmbeddingResult,
    pub verdict: AdmissibilityVerdict,
    pub warnings: Vec<String>,
}

struct BoundCheck {
    kind: CheckKind,
    holds: bool,
    equalities: usize,
    worst: Option<ViolationRecord>,
}

impl BoundCheck {
    fn new(kind: CheckKind) -> Self {
        BoundCheck {
            kind,
            holds: true,
            equalities: 0,
            worst: None,
        }
    }

    /// Record one strict comparison lhs > rhs (relative margin 1e-12).
    fn strict_gt(&mut self, r: f64, lhs: f64, rhs: f64) {
        let scale = rhs.abs().max(lhs.abs()).max(f64::MIN_POSITIVE);
        if lhs - rhs > 1e-12 * scale {
            return;
        }
        if (lhs - rhs).abs() <= 1e-12 * scale {
            self.equalities += 1;
            return;
        }
        self.fail(r, lhs, rhs);
    }

    /// Non-strict lhs >= rhs with the same relative margin.
    fn ge(&mut self, r: f64, lhs: f64, rhs: f64) {
        let scale = rhs.abs().max(lhs.abs()).max(f64::MIN_POSITIVE);
        if lhs - rhs >= -1e-12 * scale {
            return;
        }
        self.fail(r, lhs, rhs);
    }

    fn fail(&mut self, r: f64, lhs: f64, rhs: f64) {
        self.holds = false;
        let breach = |v: &ViolationRecord| {
            (v.rhs - v.lhs) / v.rhs.abs().max(v.lhs.abs()).max(f64::MIN_POSITIVE)
        };
        let cand = ViolationRecord {
            check: self.kind,
            r,
            lhs,
            rhs,
        };
        if self.worst.map_or(true, |w| breach(&cand) > breach(&w)) {
            self.worst = Some(cand);
        }
    }

    /// Fold the equality count into the verdict: a couple of grid points
    /// sitting exactly on the bound is a warning; more means the weight
    /// runs along the bound and the strict inequality fails.
    fn finish(&mut self, warnings: &mut Vec<String>) {
        if self.equalities == 0 {
            return;
        }
        if self.equalities <= 2 && self.holds {
            warnings.push(format!(
                "{}: equality (within margin 1e-12) at {} isolated grid point(s)",
                self.kind.describe(),
                self.equalities
            ));
        } else {
            self.holds = false;
            warnings.push(format!(
                "{}: strict inequality fails, equality on {} grid points",
                self.kind.describe(),
                self.equalities
            ));
        }
    }
}

/// Compare asymptotic power laws lhs ~ cl r^el vs rhs ~ cr r^er at an
/// endpoint; returns Some(true) when lhs > rhs near the endpoint,
/// Some(false) when lhs < rhs, None when they match to first order.
fn asymptotically_greater(
    lhs: (f64, f64),
    rhs: (f64, f64),
    end: Endpoint,
) -> Option<bool> {
    let (cl, el) = lhs;
    let (cr, er) = rhs;
    if el == er {
        if cl == cr {
            return None;
        }
        return Some(cl > cr);
    }
    // Near 0 a smaller exponent dominates; near infinity a larger one does.
    match end {
        Endpoint::Zero => Some(el < er),
        Endpoint::Infinity => Some(el > er),
    }
}

/// Check the pointwise conditions on a log grid over [eps/10, 10 R], plus
/// asymptotic exponent comparison at both endpoints where the weight
/// forms expose power behaviour, plus convergence of the embedding
/// constant. Violations are report content, never errors.
pub fn check_admissibility(
    spec: &ProblemSpec,
    grid_size: usize,
) -> Result<AdmissibilityReport, WeightError> {
    if grid_size < 16 {
        return Err(WeightError::GridTooSmall(grid_size));
    }
    let grid = sample_grid(spec.eps / 10.0, spec.big_r * 10.0, grid_size);
    let mut warnings = Vec::new();

    let p = spec.p;
    let (alpha, beta) = (spec.alpha, spec.beta());
    let mut v_check = BoundCheck::new(CheckKind::VLowerBound);
    let mut w_upper = BoundCheck::new(CheckKind::WUpperBound);
    let mut w_pos = BoundCheck::new(CheckKind::WPositive);
    let mut l_dom = BoundCheck::new(CheckKind::LDominatesV);
    let mut k_bound = BoundCheck::new(CheckKind::KBoundedByW);

    for &r in &grid {
        let v = spec.lower_v.eval(r);
        let w = spec.upper_w.eval(r);
        let l = spec.weight_l.eval(r);
        let k = spec.weight_k.eval(r);
        v_check.strict_gt(r, v, r.powf(-p * alpha));
        w_upper.strict_gt(r, r.powf(-p * beta), w);
        w_pos.strict_gt(r, w, 0.0);
        l_dom.ge(r, l, v);
        k_bound.ge(r, w, k.abs());
    }

    // Endpoint analysis: the grid cannot see beyond [eps/10, 10R], but the
    // integrals can.
    for end in [Endpoint::Zero, Endpoint::Infinity] {
        let r_sentinel = match end {
            Endpoint::Zero => 0.0,
            Endpoint::Infinity => f64::INFINITY,
        };
        let bound_v = (1.0, -p * alpha);
        let bound_w = (1.0, -p * beta);
        if let Some(ve) = spec.lower_v.exponent_at(end) {
            if asymptotically_greater(ve, bound_v, end) == Some(false) {
                v_check.fail(r_sentinel, ve.0, bound_v.0);
                warnings.push(format!(
                    "v falls below r^{{-p alpha}} asymptotically at {end:?}"
                ));
            }
            if let Some(le) = spec.weight_l.exponent_at(end) {
                if asymptotically_greater(le, ve, end) == Some(false) {
                    l_dom.fail(r_sentinel, le.0, ve.0);
                    warnings.push(format!("L falls below v asymptotically at {end:?}"));
                }
            }
        }
        if let Some(we) = spec.upper_w.exponent_at(end) {
            if asymptotically_greater(we, bound_w, end) == Some(true) {
                w_upper.fail(r_sentinel, bound_w.0, we.0);
                warnings.push(format!(
                    "w exceeds r^{{-p beta}} asymptotically at {end:?}"
                ));
            }
            if let Some(ke) = spec.weight_k.exponent_at(end) {
                if asymptotically_greater((ke.0.abs(), ke.1), we, end) == Some(true) {
                    k_bound.fail(r_sentinel, ke.0.abs(), we.0);
                    warnings.push(format!("|K| exceeds w asymptotically at {end:?}"));
                }
            }
        }
    }

    v_check.finish(&mut warnings);
    w_upper.finish(&mut warnings);
    w_pos.finish(&mut warnings);
    l_dom.finish(&mut warnings);
    k_bound.finish(&mut warnings);

    // A sign defect in v or w is report content (the pointwise checks
    // above already flag it), not an error, so the embedding integral is
    // only attempted when it is well-posed.
    let unevaluated = EmbeddingResult {
        quad: QuadratureResult {
            value: f64::NAN,
            error_estimate: f64::INFINITY,
            verdict: Verdict::Inconclusive,
            evaluations: 0,
        },
        divergent_at: None,
    };
    let embedding = if w_pos.holds {
        match embedding_constant(spec, 1e-8) {
            Ok(e) => e,
            Err(WeightError::NotPositive { role, value, r }) => {
                warnings.push(format!(
                    "embedding integral skipped: {role}({r}) = {value} is not positive"
                ));
                unevaluated
            }
            Err(e) => return Err(e),
        }
    } else {
        warnings.push("embedding integral skipped: w is not positive".into());
        unevaluated
    };

    let g_curve: Vec<(f64, f64)> = sample_grid(spec.eps, spec.big_r, grid_size.min(17))
        .into_iter()
        .filter_map(|r| {
            compute_g(spec, r, 1e-8)
                .ok()
                .filter(|g| g.verdict != Verdict::Divergent)
                .map(|g| (r, g.value))
        })
        .collect();

    let checks = [&v_check, &w_upper, &w_pos, &l_dom, &k_bound];
    let c1 = checks.iter().all(|c| c.holds);
    let worst = checks
        .iter()
        .filter_map(|c| c.worst)
        .max_by(|a, b| {
            let breach = |v: &ViolationRecord| {
                (v.rhs - v.lhs) / v.rhs.abs().max(v.lhs.abs()).max(f64::MIN_POSITIVE)
            };
            breach(a).total_cmp(&breach(b))
        });

    let verdict = if !c1 {
        AdmissibilityVerdict::Inadmissible("a pointwise comparison-weight bound fails")
    } else if embedding.quad.verdict == Verdict::Divergent {
        AdmissibilityVerdict::Inadmissible("the embedding integral diverges")
    } else if embedding.quad.verdict == Verdict::Inconclusive {
        AdmissibilityVerdict::Inadmissible("the embedding integral could not be certified")
    } else {
        AdmissibilityVerdict::Admissible
    };

    Ok(AdmissibilityReport {
        c1_holds: c1,
        v_bound_holds: v_check.holds,
        w_bound_holds: w_upper.holds && w_pos.holds,
        l_dominates_v: l_dom.holds,
        k_bounded_by_w: k_bound.holds,
        worst_violation: worst,
        g_curve,
        embedding,
        verdict,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Reference families
// ---------------------------------------------------------------------------

/// A fully admissible demonstration family at p = 2, N = 2, alpha = -1/2:
/// L = v = r(1+r), w = r^{-1/2}/2 on (0,1] glued to r^{-2}/2, K = w/2.
pub fn demo_admissible_spec(eps: f64, big_r: f64) -> ProblemSpec {
    let v = WeightFunction::product_power(1.0, 1.0, 1.0);
    let w = WeightFunction::piecewise(vec![
        (1.0, WeightFunction::power(0.5, -0.5)),
        (f64::INFINITY, WeightFunction::power(0.5, -2.0)),
    ])
    .expect("static family");
    let k = WeightFunction::piecewise(vec![
        (1.0, WeightFunction::power(0.25, -0.5)),
        (f64::INFINITY, WeightFunction::power(0.25, -2.0)),
    ])
    .expect("static family");
    ProblemSpec::new(2, 2.0, -0.5, v.clone(), k, v, w, eps, big_r).expect("static family")
}

/// The power-law comparison family with surplus decay zeta:
/// v = r^{-p alpha + zeta}, w = r^{-(p beta - beta)} on (0,1] glued to
/// r^{-(p beta + 1)}.
///
/// This is the strictly positive reading of a reciprocal-form family
/// whose literal expression 1/(r^{p beta} - beta) is negative near the
/// origin and has a pole, so it cannot be a weight; the power-law reading
/// keeps the intended growth rates. For zeta > 1 the family is still
/// inadmissible: v dips below r^{-p alpha} on r < 1 and the embedding
/// integral diverges at the origin. Kept as a regression sentinel.
pub fn surplus_power_family(p: f64, alpha: f64, zeta: f64) -> (WeightFunction, WeightFunction) {
    let beta = alpha + 1.0;
    let v = WeightFunction::power(1.0, -p * alpha + zeta);
    let w = WeightFunction::piecewise(vec![
        (1.0, WeightFunction::power(1.0, -(p * beta - beta))),
        (f64::INFINITY, WeightFunction::power(1.0, -(p * beta + 1.0))),
    ])
    .expect("static family");
    (v, w)
}
