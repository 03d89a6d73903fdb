//! P1 finite elements on a truncated radial domain [eps, R].
//!
//! The truncation models the whole space: Dirichlet at R (compactly
//! supported functions are dense in the energy space), natural value at
//! eps. Elements are piecewise linear, so |u'| is element-constant and
//! |u'|^{p-2} is exactly representable; the energy needs no regularized
//! quadrature and the gradients are analytic. For p < 2 the Newton
//! Hessians regularize |.|^{p-2} as (.^2 + eps_reg^2)^{(p-2)/2}; the
//! energy itself is never regularized.
//!
//! Element loops run sequentially in index order; the summation order is
//! part of the reproducibility contract.

use crate::linalg::SymTridiag;
use crate::weights::{ProblemSpec, WeightFunction};

#[derive(Debug, thiserror::Error)]
pub enum FemError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("weight evaluation produced {value} at r = {r} in element {element}")]
    NonFiniteWeight { element: usize, r: f64, value: f64 },
    #[error("nodal vector has length {got}, mesh has {expected} nodes")]
    SizeMismatch { expected: usize, got: usize },
}

/// Strictly increasing positive nodes; at least two.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialMesh {
    nodes: Vec<f64>,
}

impl RadialMesh {
    /// Geometric node spacing refined toward eps: with gap ratio
    /// `grading` >= 1, node i sits at eps + (R-eps)(g^i - 1)/(g^M - 1)
    /// (uniform when grading = 1). Endpoints are exact.
    pub fn build_mesh(eps: f64, big_r: f64, m: usize, grading: f64) -> Result<Self, FemError> {
        if !(eps > 0.0 && big_r > eps && big_r.is_finite()) {
            return Err(FemError::InvalidMesh(format!(
                "need 0 < eps < R, got eps = {eps}, R = {big_r}"
            )));
        }
        if m < 2 {
            return Err(FemError::InvalidMesh(format!("need at least 2 elements, got {m}")));
        }
        if !(grading >= 1.0) || !grading.is_finite() {
            return Err(FemError::InvalidMesh(format!("grading must be >= 1, got {grading}")));
        }
        let mut nodes = Vec::with_capacity(m + 1);
        for i in 0..=m {
            let t = if grading == 1.0 {
                i as f64 / m as f64
            } else {
                (grading.powi(i as i32) - 1.0) / (grading.powi(m as i32) - 1.0)
            };
            nodes.push(eps + (big_r - eps) * t);
        }
        nodes[0] = eps;
        nodes[m] = big_r;
        Self::from_nodes(nodes)
    }

    /// Nodes in geometric progression from eps to R; a natural choice
    /// when the weights are power-like, since element widths then track
    /// the local scale. The node count grows with log(R/eps) at fixed
    /// per-decade resolution.
    pub fn log_spaced(eps: f64, big_r: f64, m: usize) -> Result<Self, FemError> {
        if !(eps > 0.0 && big_r > eps && big_r.is_finite()) {
            return Err(FemError::InvalidMesh(format!(
                "need 0 < eps < R, got eps = {eps}, R = {big_r}"
            )));
        }
        if m < 2 {
            return Err(FemError::InvalidMesh(format!("need at least 2 elements, got {m}")));
        }
        let ratio = (big_r / eps).ln();
        let mut nodes: Vec<f64> = (0..=m)
            .map(|i| eps * (ratio * i as f64 / m as f64).exp())
            .collect();
        nodes[0] = eps;
        nodes[m] = big_r;
        Self::from_nodes(nodes)
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self, FemError> {
        if nodes.len() < 2 {
            return Err(FemError::InvalidMesh("need at least 2 nodes".into()));
        }
        let mut prev = 0.0;
        for &r in &nodes {
            if !r.is_finite() || !(r > prev) {
                return Err(FemError::InvalidMesh(format!(
                    "nodes must be strictly increasing and positive, got {r} after {prev}"
                )));
            }
            prev = r;
        }
        Ok(RadialMesh { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn eps(&self) -> f64 {
        self.nodes[0]
    }

    pub fn big_r(&self) -> f64 {
        *self.nodes.last().unwrap()
    }
}

/// Surface measure of the unit sphere in R^N: 2 pi^{N/2} / Gamma(N/2).
pub fn surface_measure(dim: u32) -> f64 {
    assert!(dim >= 1);
    let n = dim as f64;
    // Gamma at half-integers by the recurrence from Gamma(1) and
    // Gamma(1/2).
    let mut gamma = if dim % 2 == 0 {
        1.0
    } else {
        std::f64::consts::PI.sqrt()
    };
    let mut arg = if dim % 2 == 0 { 1.0 } else { 0.5 };
    while arg + 1.0 <= n / 2.0 + 0.25 {
        gamma *= arg;
        arg += 1.0;
    }
    2.0 * std::f64::consts::PI.powf(n / 2.0) / gamma
}

/// Nodal values on a mesh. With `dirichlet_at_big_r` the last nodal value
/// is pinned to zero (the constructor enforces it).
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct DiscreteFunction {
    pub values: Vec<f64>,
    pub dirichlet_at_big_r: bool,
}

impl DiscreteFunction {
    pub fn new(mut values: Vec<f64>, dirichlet_at_big_r: bool) -> Self {
        if dirichlet_at_big_r {
            if let Some(last) = values.last_mut() {
                *last = 0.0;
            }
        }
        DiscreteFunction {
            values,
            dirichlet_at_big_r,
        }
    }

    pub fn from_fn(mesh: &RadialMesh, f: impl Fn(f64) -> f64, dirichlet_at_big_r: bool) -> Self {
        Self::new(mesh.nodes().iter().map(|&r| f(r)).collect(), dirichlet_at_big_r)
    }

    pub fn zeros(mesh: &RadialMesh, dirichlet_at_big_r: bool) -> Self {
        Self::new(vec![0.0; mesh.num_nodes()], dirichlet_at_big_r)
    }

    /// Linear interpolation between nodes (clamped outside the mesh).
    pub fn eval(&self, mesh: &RadialMesh, r: f64) -> f64 {
        let nodes = mesh.nodes();
        let i = match nodes.partition_point(|&t| t < r) {
            0 => return self.values[0],
            j if j >= nodes.len() => return *self.values.last().unwrap(),
            j => j - 1,
        };
        let t = (r - nodes[i]) / (nodes[i + 1] - nodes[i]);
        self.values[i] + t * (self.values[i + 1] - self.values[i])
    }

    /// Two-column CSV (r, u), one row per node.
    pub fn write_csv<W: std::io::Write>(
        &self,
        mesh: &RadialMesh,
        mut out: W,
    ) -> std::io::Result<()> {
        writeln!(out, "r,u")?;
        for (r, v) in mesh.nodes().iter().zip(&self.values) {
            writeln!(out, "{r:.16e},{v:.16e}")?;
        }
        Ok(())
    }
}

fn check_len(mesh: &RadialMesh, values: &[f64]) -> Result<(), FemError> {
    if values.len() != mesh.num_nodes() {
        return Err(FemError::SizeMismatch {
            expected: mesh.num_nodes(),
            got: values.len(),
        });
    }
    Ok(())
}

/// Two-point Gauss rule on [a, b]: exact through cubics.
fn gauss2(a: f64, b: f64) -> [(f64, f64); 2] {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let off = half / 3.0f64.sqrt();
    [(mid - off, half), (mid + off, half)]
}

/// Three-point Gauss rule on [a, b]: exact through quintics.
fn gauss3(a: f64, b: f64) -> [(f64, f64); 3] {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let off = half * (3.0f64 / 5.0).sqrt();
    [
        (mid, half * 8.0 / 9.0),
        (mid - off, half * 5.0 / 9.0),
        (mid + off, half * 5.0 / 9.0),
    ]
}

/// sign(x) |x|^{p-1}, the derivative of |x|^p / p; 0 at x = 0 since p > 1.
fn phi(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(p - 1.0)
    }
}

/// Discrete energy I, constraint G and their exact nodal gradients.
#[derive(Clone, Debug)]
pub struct AssembledFunctionals {
    pub i_val: f64,
    pub g_val: f64,
    pub grad_i: Vec<f64>,
    pub grad_g: Vec<f64>,
}

/// I(u) = omega_{N-1} sum_e |u'_e|^p int_e L r^{N-1} dr and
/// G(u) = omega_{N-1} sum_e int_e K |u|^p r^{N-1} dr, both with two-point
/// Gauss per element; the gradients are the exact derivatives of these
/// discrete sums.
pub fn assemble(
    mesh: &RadialMesh,
    spec: &ProblemSpec,
    u: &DiscreteFunction,
) -> Result<AssembledFunctionals, FemError> {
    check_len(mesh, &u.values)?;
    let omega = surface_measure(spec.dim);
    let nd = spec.dim as f64 - 1.0;
    let p = spec.p;
    let nodes = mesh.nodes();
    let n = nodes.len();

    let mut i_val = 0.0;
    let mut g_val = 0.0;
    let mut grad_i = vec![0.0; n];
    let mut grad_g = vec![0.0; n];

    for e in 0..n - 1 {
        let (a, b) = (nodes[e], nodes[e + 1]);
        let h = b - a;
        let du = (u.values[e + 1] - u.values[e]) / h;

        let mut l_int = 0.0;
        for (r, wq) in gauss2(a, b) {
            let lv = spec.weight_l.eval(r);
            if !lv.is_finite() {
                return Err(FemError::NonFiniteWeight {
                    element: e,
                    r,
                    value: lv,
                });
            }
            l_int += wq * lv * r.powf(nd);
        }
        i_val += du.abs().powf(p) * l_int;
        let dflux = p * phi(du, p) * l_int / h;
        grad_i[e] -= dflux;
        grad_i[e + 1] += dflux;

        for (r, wq) in gauss2(a, b) {
            let kv = spec.weight_k.eval(r);
            if !kv.is_finite() {
                return Err(FemError::NonFiniteWeight {
                    element: e,
                    r,
                    value: kv,
                });
            }
            let t = (r - a) / h;
            let uq = u.values[e] * (1.0 - t) + u.values[e + 1] * t;
            let common = wq * kv * r.powf(nd);
            g_val += common * uq.abs().powf(p);
            let dg = common * p * phi(uq, p);
            grad_g[e] += dg * (1.0 - t);
            grad_g[e + 1] += dg * t;
        }
    }

    i_val *= omega;
    g_val *= omega;
    for x in grad_i.iter_mut().chain(grad_g.iter_mut()) {
        *x *= omega;
    }
    if u.dirichlet_at_big_r {
        grad_i[n - 1] = 0.0;
        grad_g[n - 1] = 0.0;
    }
    Ok(AssembledFunctionals {
        i_val,
        g_val,
        grad_i,
        grad_g,
    })
}

/// b_i = omega_{N-1} int h(r) phi_i(r) r^{N-1} dr over the mesh, with
/// three-point Gauss per element split at the breakpoints of h (so
/// piecewise forms such as indicators integrate exactly for N <= 5).
/// The entry at the Dirichlet node is set to 0.
pub fn load_vector(
    mesh: &RadialMesh,
    dim: u32,
    h: &WeightFunction,
    dirichlet_at_big_r: bool,
) -> Result<Vec<f64>, FemError> {
    let omega = surface_measure(dim);
    let nd = dim as f64 - 1.0;
    let nodes = mesh.nodes();
    let n = nodes.len();
    let mut b = vec![0.0; n];
    let cuts = h.breakpoints();

    for e in 0..n - 1 {
        let (a, bb) = (nodes[e], nodes[e + 1]);
        let hw = bb - a;
        let mut edges = vec![a];
        for &c in &cuts {
            if c > a && c < bb {
                edges.push(c);
            }
        }
        edges.push(bb);
        for seg in edges.windows(2) {
            for (r, wq) in gauss3(seg[0], seg[1]) {
                let hv = h.eval(r);
                if !hv.is_finite() {
                    return Err(FemError::NonFiniteWeight {
                        element: e,
                        r,
                        value: hv,
                    });
                }
                let t = (r - a) / hw;
                let common = omega * wq * hv * r.powf(nd);
                b[e] += common * (1.0 - t);
                b[e + 1] += common * t;
            }
        }
    }
    if dirichlet_at_big_r {
        b[n - 1] = 0.0;
    }
    Ok(b)
}

/// Newton Hessians of I and G as symmetric tridiagonal forms. The
/// factor |.|^{p-2} is regularized as (.^2 + eps_reg^2)^{(p-2)/2} with
/// eps_reg = 1e-8 times the scale of the argument (fallback 1), which is
/// exact at p = 2 and keeps Jacobians nonsingular at both the p < 2
/// singularity and the p > 2 degeneracy; the energy in `assemble` never
/// sees this. Rows of Dirichlet-constrained nodes are replaced by
/// identity rows.
pub fn assemble_hessians(
    mesh: &RadialMesh,
    spec: &ProblemSpec,
    u: &DiscreteFunction,
) -> Result<(SymTridiag, SymTridiag), FemError> {
    check_len(mesh, &u.values)?;
    let omega = surface_measure(spec.dim);
    let nd = spec.dim as f64 - 1.0;
    let p = spec.p;
    let nodes = mesh.nodes();
    let n = nodes.len();

    let du_scale = (0..n - 1)
        .map(|e| ((u.values[e + 1] - u.values[e]) / (nodes[e + 1] - nodes[e])).abs())
        .fold(0.0f64, f64::max);
    let u_scale = u.values.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let reg = |x: f64, scale: f64| -> f64 {
        // (x^2 + e^2)^{(p-2)/2}: exact at p = 2 (zero exponent), keeps
        // the Jacobian nonsingular where the p-term is singular (p < 2,
        // x -> 0) or degenerate (p > 2, x = 0, e.g. a zero Newton start).
        let e = 1e-8 * if scale > 0.0 { scale } else { 1.0 };
        (x * x + e * e).powf((p - 2.0) / 2.0)
    };

    let mut h_i = SymTridiag::zeros(n);
    let mut h_g = SymTridiag::zeros(n);

    for e in 0..n - 1 {
        let (a, b) = (nodes[e], nodes[e + 1]);
        let h = b - a;
        let du = (u.values[e + 1] - u.values[e]) / h;

        let mut l_int = 0.0;
        for (r, wq) in gauss2(a, b) {
            let lv = spec.weight_l.eval(r);
            if !lv.is_finite() {
                return Err(FemError::NonFiniteWeight {
                    element: e,
                    r,
                    value: lv,
                });
            }
            l_int += wq * lv * r.powf(nd);
        }
        let stiff = omega * p * (p - 1.0) * reg(du, du_scale) * l_int / (h * h);
        h_i.diag[e] += stiff;
        h_i.diag[e + 1] += stiff;
        h_i.off[e] -= stiff;

        for (r, wq) in gauss2(a, b) {
            let kv = spec.weight_k.eval(r);
            if !kv.is_finite() {
                return Err(FemError::NonFiniteWeight {
                    element: e,
                    r,
                    value: kv,
                });
            }
            let t = (r - a) / h;
            let uq = u.values[e] * (1.0 - t) + u.values[e + 1] * t;
            let mass = omega * wq * kv * r.powf(nd) * p * (p - 1.0) * reg(uq, u_scale);
            h_g.diag[e] += mass * (1.0 - t) * (1.0 - t);
            h_g.diag[e + 1] += mass * t * t;
            h_g.off[e] += mass * t * (1.0 - t);
        }
    }

    if u.dirichlet_at_big_r {
        h_i.diag[n - 1] = 1.0;
        h_i.off[n - 2] = 0.0;
        h_g.diag[n - 1] = 1.0;
        h_g.off[n - 2] = 0.0;
    }
    Ok((h_i, h_g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::WeightFunction as W;
    use rand::{Rng, SeedableRng};

    fn unit_spec(p: f64, dim: u32) -> ProblemSpec {
        ProblemSpec::new(
            dim,
            p,
            -0.5,
            W::constant(1.0),
            W::constant(1.0),
            W::constant(1.0),
            W::constant(1.0),
            1e-3,
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn mesh_construction_properties() {
        let m = RadialMesh::build_mesh(1e-4, 10.0, 8, 2.0).unwrap();
        assert_eq!(m.num_nodes(), 9);
        assert_eq!(m.eps(), 1e-4);
        assert_eq!(m.big_r(), 10.0);
        let gaps: Vec<f64> = m.nodes().windows(2).map(|w| w[1] - w[0]).collect();
        for pair in gaps.windows(2) {
            assert!(pair[0] < pair[1], "gaps must grow away from eps");
        }
        assert_eq!(
            gaps.iter().cloned().fold(f64::INFINITY, f64::min),
            gaps[0],
            "first gap smallest"
        );

        let u = RadialMesh::build_mesh(1.0, 2.0, 4, 1.0).unwrap();
        let gaps: Vec<f64> = u.nodes().windows(2).map(|w| w[1] - w[0]).collect();
        for g in &gaps {
            assert!((g - 0.25).abs() < 1e-12);
        }

        let two = RadialMesh::build_mesh(1.0, 3.0, 2, 1.0).unwrap();
        assert_eq!(two.nodes(), &[1.0, 2.0, 3.0]);

        assert!(RadialMesh::build_mesh(0.0, 1.0, 4, 1.0).is_err());
        assert!(RadialMesh::build_mesh(1.0, 0.5, 4, 1.0).is_err());
        assert!(RadialMesh::build_mesh(1.0, 2.0, 1, 1.0).is_err());
        assert!(RadialMesh::build_mesh(1.0, 2.0, 4, 0.5).is_err());
        assert!(RadialMesh::from_nodes(vec![1.0]).is_err());
        assert!(RadialMesh::from_nodes(vec![1.0, 1.0]).is_err());

        let ls = RadialMesh::log_spaced(1e-3, 1e3, 6).unwrap();
        for w in ls.nodes().windows(2) {
            assert!((w[1] / w[0] - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn surface_measure_reference_values() {
        assert!((surface_measure(2) - 2.0 * std::f64::consts::PI).abs() < 1e-14);
        assert!((surface_measure(3) - 4.0 * std::f64::consts::PI).abs() < 1e-13);
        let two_pi_sq = 2.0 * std::f64::consts::PI.powi(2);
        assert!((surface_measure(4) - two_pi_sq).abs() < 1e-13);
        // N = 5: 8 pi^2 / 3.
        assert!((surface_measure(5) - 8.0 * std::f64::consts::PI.powi(2) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_element_hand_computation() {
        // u falls linearly from 1 at eps to 0 at R; L = K = 1, p = 2,
        // N = 2. I = 2 pi (R+eps)/(R-eps) ... hand-integrated below.
        let (eps, big_r) = (0.5, 2.0);
        let mesh = RadialMesh::build_mesh(eps, big_r, 2, 1.0).unwrap();
        let spec = unit_spec(2.0, 2);
        let u = DiscreteFunction::from_fn(&mesh, |r| (big_r - r) / (big_r - eps), true);
        let asm = assemble(&mesh, &spec, &u).unwrap();

        let tau = std::f64::consts::TAU;
        // I = 2 pi |u'|^2 int_eps^R r dr with u' = -1/(R-eps).
        let i_exact = tau / (big_r - eps).powi(2) * 0.5 * (big_r * big_r - eps * eps);
        // G = 2 pi int_eps^R ((R-r)/(R-eps))^2 r dr; the antiderivative of
        // (R-r)^2 r is R^2 r^2/2 - 2R r^3/3 + r^4/4.
        let anti = |r: f64| {
            big_r * big_r * r * r / 2.0 - 2.0 * big_r * r * r * r / 3.0 + r.powi(4) / 4.0
        };
        let g_exact = tau / (big_r - eps).powi(2) * (anti(big_r) - anti(eps));

        assert!((asm.i_val - i_exact).abs() <= 1e-13 * i_exact, "{}", asm.i_val);
        assert!((asm.g_val - g_exact).abs() <= 1e-13 * g_exact, "{}", asm.g_val);
    }

    #[test]
    fn zero_function_assembles_to_zero() {
        let mesh = RadialMesh::build_mesh(0.1, 5.0, 7, 1.3).unwrap();
        let spec = unit_spec(2.5, 3);
        let u = DiscreteFunction::zeros(&mesh, true);
        let asm = assemble(&mesh, &spec, &u).unwrap();
        assert_eq!(asm.i_val, 0.0);
        assert_eq!(asm.g_val, 0.0);
        assert!(asm.grad_i.iter().all(|&x| x == 0.0));
        assert!(asm.grad_g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn energy_is_p_homogeneous() {
        let mesh = RadialMesh::log_spaced(0.01, 20.0, 12).unwrap();
        for &p in &[1.5, 2.0, 3.0] {
            let spec = unit_spec(p, 2);
            let u = DiscreteFunction::from_fn(&mesh, |r| (1.0 + r).recip(), true);
            let base = assemble(&mesh, &spec, &u).unwrap();
            for &c in &[-2.0f64, 0.5, 3.0] {
                let cu = DiscreteFunction::new(
                    u.values.iter().map(|v| c * v).collect(),
                    true,
                );
                let scaled = assemble(&mesh, &spec, &cu).unwrap();
                let f = c.abs().powf(p);
                assert!((scaled.i_val - f * base.i_val).abs() <= 1e-12 * f * base.i_val);
                assert!((scaled.g_val - f * base.g_val).abs() <= 1e-12 * f * base.g_val.abs());
            }
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mesh = RadialMesh::build_mesh(0.2, 4.0, 6, 1.4).unwrap();
        for &p in &[1.5, 2.0, 3.0] {
            for trial in 0..6 {
                // Random positive weights; random u with element slopes
                // bounded away from 0 so the p = 1.5 energy is smooth.
                let spec = ProblemSpec::new(
                    2 + (trial % 2) as u32,
                    p,
                    -0.5,
                    W::power(rng.gen_range(0.5..2.0), rng.gen_range(-1.0..1.0)),
                    W::power(rng.gen_range(0.5..2.0), rng.gen_range(-1.0..1.0)),
                    W::constant(1.0),
                    W::constant(1.0),
                    1e-3,
                    10.0,
                )
                .unwrap();
                let mut values = vec![rng.gen_range(-1.0..1.0)];
                for _ in 0..mesh.num_elements() {
                    let step: f64 = rng.gen_range(0.3..1.0);
                    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    let last = *values.last().unwrap();
                    values.push(last + sign * step);
                }
                let u = DiscreteFunction::new(values, false);
                let asm = assemble(&mesh, &spec, &u).unwrap();
                for i in 0..mesh.num_nodes() {
                    let h = 1e-6 * u.values[i].abs().max(1.0);
                    let mut up = u.clone();
                    up.values[i] += h;
                    let mut dn = u.clone();
                    dn.values[i] -= h;
                    let ap = assemble(&mesh, &spec, &up).unwrap();
                    let an = assemble(&mesh, &spec, &dn).unwrap();
                    let fd_i = (ap.i_val - an.i_val) / (2.0 * h);
                    let fd_g = (ap.g_val - an.g_val) / (2.0 * h);
                    let si = asm.grad_i.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
                    let sg = asm.grad_g.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
                    assert!(
                        (asm.grad_i[i] - fd_i).abs() <= 1e-6 * si.max(1.0),
                        "p={p} trial={trial} node={i}: {} vs {fd_i}",
                        asm.grad_i[i]
                    );
                    assert!(
                        (asm.grad_g[i] - fd_g).abs() <= 1e-6 * sg.max(1.0),
                        "p={p} trial={trial} node={i}: {} vs {fd_g}",
                        asm.grad_g[i]
                    );
                }
            }
        }
    }

    #[test]
    fn hessians_match_gradient_differences() {
        let mesh = RadialMesh::build_mesh(0.3, 3.0, 5, 1.2).unwrap();
        for &p in &[1.5, 2.0, 3.0] {
            let spec = unit_spec(p, 2);
            let u = DiscreteFunction::from_fn(&mesh, |r| 1.0 / (1.0 + r), false);
            let (hi, hg) = assemble_hessians(&mesh, &spec, &u).unwrap();
            for i in 0..mesh.num_nodes() {
                let h = 1e-6;
                let mut up = u.clone();
                up.values[i] += h;
                let mut dn = u.clone();
                dn.values[i] -= h;
                let ap = assemble(&mesh, &spec, &up).unwrap();
                let an = assemble(&mesh, &spec, &dn).unwrap();
                for j in 0..mesh.num_nodes() {
                    let fd = (ap.grad_i[j] - an.grad_i[j]) / (2.0 * h);
                    let entry = if i == j {
                        hi.diag[i]
                    } else if j + 1 == i {
                        hi.off[j]
                    } else if i + 1 == j {
                        hi.off[i]
                    } else {
                        0.0
                    };
                    let scale = hi.diag.iter().fold(1.0f64, |a, &x| a.max(x.abs()));
                    assert!(
                        (entry - fd).abs() <= 2e-4 * scale,
                        "p={p} H_I[{i},{j}]: {entry} vs {fd}"
                    );
                    let fdg = (ap.grad_g[j] - an.grad_g[j]) / (2.0 * h);
                    let entry_g = if i == j {
                        hg.diag[i]
                    } else if j + 1 == i {
                        hg.off[j]
                    } else if i + 1 == j {
                        hg.off[i]
                    } else {
                        0.0
                    };
                    let scale_g = hg.diag.iter().fold(1.0f64, |a, &x| a.max(x.abs()));
                    assert!(
                        (entry_g - fdg).abs() <= 2e-4 * scale_g,
                        "p={p} H_G[{i},{j}]: {entry_g} vs {fdg}"
                    );
                }
            }
        }
    }

    #[test]
    fn refinement_is_second_order() {
        // Smooth u = sin(r) on [0.5, 2], L = K = 1, p = 2, N = 2:
        // I converges to 2 pi int cos^2(r) r dr at O(h^2).
        let spec = unit_spec(2.0, 2);
        let exact = {
            let q = crate::quad::integrate(
                |r| r * r.cos() * r.cos(),
                0.5,
                2.0,
                1e-13,
                false,
            )
            .unwrap();
            assert!(q.is_convergent());
            std::f64::consts::TAU * q.value
        };
        let errs: Vec<f64> = [32usize, 64, 128]
            .iter()
            .map(|&m| {
                let mesh = RadialMesh::build_mesh(0.5, 2.0, m, 1.0).unwrap();
                let u = DiscreteFunction::from_fn(&mesh, f64::sin, false);
                (assemble(&mesh, &spec, &u).unwrap().i_val - exact).abs()
            })
            .collect();
        for pair in errs.windows(2) {
            let rate = pair[0] / pair[1];
            assert!(
                (3.3..4.7).contains(&rate),
                "expected ~4x error drop per refinement, got {rate} ({errs:?})"
            );
        }
    }

    #[test]
    fn constraint_positive_for_positive_k() {
        let mesh = RadialMesh::log_spaced(0.05, 8.0, 9).unwrap();
        let spec = unit_spec(2.5, 3);
        let u = DiscreteFunction::from_fn(&mesh, |r| (2.0 - r).max(0.0), true);
        let asm = assemble(&mesh, &spec, &u).unwrap();
        assert!(asm.g_val > 0.0);
    }

    #[test]
    fn load_vector_basics_and_indicator_overlap() {
        let mesh = RadialMesh::build_mesh(0.5, 2.5, 4, 1.0).unwrap();

        let zero = load_vector(&mesh, 2, &W::constant(0.0), true).unwrap();
        assert!(zero.iter().all(|&x| x == 0.0));

        let pos = load_vector(&mesh, 3, &W::power(2.0, -0.5), false).unwrap();
        assert!(pos.iter().all(|&x| x >= 0.0));
        assert!(pos.iter().any(|&x| x > 0.0));

        // h = indicator of [1.2, 1.7] inside elements 1 and 2 (nodes at
        // 0.5, 1.0, 1.5, 2.0, 2.5). Overlap integrals of the hats against
        // r^{N-1} = r, computed from the closed-form antiderivatives.
        let ind: WeightFunction = "pw(1.2:pow(0,0),1.7:pow(1,0),inf:pow(0,0))".parse().unwrap();
        let b = load_vector(&mesh, 2, &ind, false).unwrap();
        let omega = std::f64::consts::TAU;
        // Hat centered at node i: rises on [r_{i-1}, r_i], falls on
        // [r_i, r_{i+1}], element width 0.5.
        let rise = |c: f64, lo: f64, hi: f64| {
            // int (r - c)/0.5 * r dr from lo to hi
            let f = |r: f64| (r * r * r / 3.0 - c * r * r / 2.0) / 0.5;
            f(hi) - f(lo)
        };
        let fall = |c: f64, lo: f64, hi: f64| {
            // int (c - r)/0.5 * r dr from lo to hi
            let f = |r: f64| (c * r * r / 2.0 - r * r * r / 3.0) / 0.5;
            f(hi) - f(lo)
        };
        // Node 1 at 1.0: support [0.5, 1.5], overlap [1.2, 1.5] (falling).
        let b1 = omega * fall(1.5, 1.2, 1.5);
        // Node 2 at 1.5: rising overlap [1.2, 1.5], falling [1.5, 1.7].
        let b2 = omega * (rise(1.0, 1.2, 1.5) + fall(2.0, 1.5, 1.7));
        // Node 3 at 2.0: rising overlap [1.5, 1.7].
        let b3 = omega * rise(1.5, 1.5, 1.7);
        assert!(b[0].abs() < 1e-14);
        assert!((b[1] - b1).abs() <= 1e-13 * b1, "{} vs {b1}", b[1]);
        assert!((b[2] - b2).abs() <= 1e-13 * b2, "{} vs {b2}", b[2]);
        assert!((b[3] - b3).abs() <= 1e-13 * b3, "{} vs {b3}", b[3]);
        assert!(b[4].abs() < 1e-14);

        let dir = load_vector(&mesh, 2, &W::constant(1.0), true).unwrap();
        assert_eq!(*dir.last().unwrap(), 0.0);
    }

    #[test]
    fn csv_round_trip_format() {
        let mesh = RadialMesh::build_mesh(1.0, 2.0, 2, 1.0).unwrap();
        let u = DiscreteFunction::from_fn(&mesh, |r| r * r, false);
        let mut buf = Vec::new();
        u.write_csv(&mesh, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("r,u"));
        for (line, (&r, &v)) in lines.zip(mesh.nodes().iter().zip(&u.values)) {
            let mut cols = line.split(',');
            let rr: f64 = cols.next().unwrap().parse().unwrap();
            let vv: f64 = cols.next().unwrap().parse().unwrap();
            assert_eq!(rr, r);
            assert_eq!(vv, v);
        }
    }

    #[test]
    fn dirichlet_flag_pins_last_node() {
        let mesh = RadialMesh::build_mesh(1.0, 2.0, 3, 1.0).unwrap();
        let u = DiscreteFunction::new(vec![1.0, 2.0, 3.0, 4.0], true);
        assert_eq!(*u.values.last().unwrap(), 0.0);
        let spec = unit_spec(2.0, 2);
        let asm = assemble(&mesh, &spec, &u).unwrap();
        assert_eq!(*asm.grad_i.last().unwrap(), 0.0);
        assert_eq!(*asm.grad_g.last().unwrap(), 0.0);
    }

    #[test]
    fn size_mismatch_and_bad_weight_are_reported() {
        let mesh = RadialMesh::build_mesh(1.0, 2.0, 3, 1.0).unwrap();
        let spec = unit_spec(2.0, 2);
        let short = DiscreteFunction {
            values: vec![1.0, 2.0],
            dirichlet_at_big_r: false,
        };
        assert!(matches!(
            assemble(&mesh, &spec, &short),
            Err(FemError::SizeMismatch { .. })
        ));

        // A weight that overflows to infinity inside the first element.
        let bad = ProblemSpec::new(
            2,
            2.0,
            -0.5,
            W::power(1e308, -700.0),
            W::constant(1.0),
            W::constant(1.0),
            W::constant(1.0),
            1e-3,
            10.0,
        )
        .unwrap();
        let mesh2 = RadialMesh::build_mesh(1e-2, 2.0, 3, 1.0).unwrap();
        let u = DiscreteFunction::from_fn(&mesh2, |r| r, false);
        let err = assemble(&mesh2, &bad, &u).unwrap_err();
        match err {
            FemError::NonFiniteWeight { element, .. } => assert_eq!(element, 0),
            other => panic!("expected NonFiniteWeight, got {other:?}"),
        }
    }
}
