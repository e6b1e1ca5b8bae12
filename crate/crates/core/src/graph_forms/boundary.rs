//! Boundary forms E^(0) on R^{V_0}.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::SolveError;

/// Orthonormal basis of the sum-zero plane in R^3. The first vector is the
/// reference direction (1,0,0) - mean, normalized.
pub const E1: [f64; 3] = [
    0.816_496_580_927_726,
    -0.408_248_290_463_863,
    -0.408_248_290_463_863,
];
pub const E2: [f64; 3] = [0.0, std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2];

/// Weighted complete-graph form sum c_{qq'} |u_q - u_q'|^p.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphForm {
    boundary_size: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl GraphForm {
    pub fn new(boundary_size: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self, SolveError> {
        for &(a, b, c) in &edges {
            if a >= boundary_size || b >= boundary_size || a == b {
                return Err(SolveError::Invalid(format!("bad boundary edge ({a},{b})")));
            }
            if !(c >= 0.0 && c.is_finite()) {
                return Err(SolveError::Invalid(format!("edge weight {c} must be >= 0")));
            }
        }
        Ok(GraphForm {
            boundary_size,
            edges,
        })
    }

    /// All pairs with weight c.
    pub fn complete(boundary_size: usize, c: f64) -> Self {
        let mut edges = Vec::new();
        for a in 0..boundary_size {
            for b in a + 1..boundary_size {
                edges.push((a, b, c));
            }
        }
        GraphForm {
            boundary_size,
            edges,
        }
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn boundary_size(&self) -> usize {
        self.boundary_size
    }

    pub fn value(&self, p: f64, u: &[f64]) -> f64 {
        self.edges
            .iter()
            .map(|&(a, b, c)| c * (u[a] - u[b]).abs().powf(p))
            .sum()
    }

    /// (1/p) d/dt E(u + t v) at t = 0.
    pub fn two(&self, p: f64, u: &[f64], v: &[f64]) -> f64 {
        self.edges
            .iter()
            .map(|&(a, b, c)| c * signed_pow(u[a] - u[b], p - 1.0) * (v[a] - v[b]))
            .sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        GraphForm {
            boundary_size: self.boundary_size,
            edges: self.edges.iter().map(|&(a, b, c)| (a, b, c * s)).collect(),
        }
    }
}

/// sgn(t) |t|^e
pub fn signed_pow(t: f64, e: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t.signum() * t.abs().powf(e)
    }
}

/// A form on R^3 / constants stored by its values on M equally spaced unit
/// directions of the sum-zero circle; off-grid values come from a periodic
/// cubic spline of log E, extended p-homogeneously in the radius.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledForm {
    values: Vec<f64>,
    logs: Vec<f64>,
    curvature: Vec<f64>,
}

impl SampledForm {
    pub fn from_values(values: Vec<f64>) -> Result<Self, SolveError> {
        if values.len() < 6 {
            return Err(SolveError::Invalid("sampled form needs at least 6 directions".into()));
        }
        if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(SolveError::Invalid(
                "sampled form must be positive off constants".into(),
            ));
        }
        let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        let curvature = periodic_spline_curvature(&logs, 2.0 * PI / values.len() as f64);
        Ok(SampledForm {
            values,
            logs,
            curvature,
        })
    }

    /// Sample a form given as a function on R^3 at the grid directions.
    pub fn from_fn(m: usize, f: impl Fn(&[f64; 3]) -> f64) -> Result<Self, SolveError> {
        Self::from_values((0..m).map(|k| f(&grid_direction(m, k))).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_values(self.values.iter().map(|v| v * s).collect()).expect("positive scale")
    }

    /// log G and its first two derivatives at angle theta.
    fn log_profile(&self, theta: f64) -> (f64, f64, f64) {
        let m = self.values.len();
        let h = 2.0 * PI / m as f64;
        let t = theta.rem_euclid(2.0 * PI) / h;
        let k = (t.floor() as usize).min(m - 1);
        let s = (t - k as f64) * h;
        let k1 = (k + 1) % m;
        let (y0, y1) = (self.logs[k], self.logs[k1]);
        let (c0, c1) = (self.curvature[k], self.curvature[k1]);
        let a = h - s;
        let val = c0 * a * a * a / (6.0 * h)
            + c1 * s * s * s / (6.0 * h)
            + (y0 / h - c0 * h / 6.0) * a
            + (y1 / h - c1 * h / 6.0) * s;
        let d1 = -c0 * a * a / (2.0 * h) + c1 * s * s / (2.0 * h) - (y0 / h - c0 * h / 6.0)
            + (y1 / h - c1 * h / 6.0);
        let d2 = c0 * a / h + c1 * s / h;
        (val, d1, d2)
    }

    /// Angular profile G(theta) = E(cos theta e1 + sin theta e2).
    pub fn profile(&self, theta: f64) -> f64 {
        self.log_profile(theta).0.exp()
    }

    fn polar(u: &[f64]) -> (f64, f64, f64, f64) {
        let a = u[0] * E1[0] + u[1] * E1[1] + u[2] * E1[2];
        let b = u[1] * E2[1] + u[2] * E2[2];
        let r = a.hypot(b);
        (a, b, r, b.atan2(a))
    }

    pub fn value(&self, p: f64, u: &[f64]) -> f64 {
        let (_, _, r, th) = Self::polar(u);
        if r == 0.0 {
            return 0.0;
        }
        r.powf(p) * self.profile(th)
    }

    pub fn grad(&self, p: f64, u: &[f64]) -> [f64; 3] {
        let (_, _, r, th) = Self::polar(u);
        if r == 0.0 {
            return [0.0; 3];
        }
        let (l, l1, _) = self.log_profile(th);
        let g = l.exp();
        let (c, s) = (th.cos(), th.sin());
        // dE/dr = p r^{p-1} G, (1/r) dE/dtheta = r^{p-1} G'
        let er = p * r.powf(p - 1.0) * g;
        let et = r.powf(p - 1.0) * g * l1;
        let ga = er * c - et * s;
        let gb = er * s + et * c;
        [
            ga * E1[0] + gb * E2[0],
            ga * E1[1] + gb * E2[1],
            ga * E1[2] + gb * E2[2],
        ]
    }

    /// Hessian in R^3. The radius is floored at `r_floor` in the singular factor
    /// r^{p-2} so the matrix stays finite at constants.
    pub fn hess(&self, p: f64, u: &[f64], r_floor: f64) -> [[f64; 3]; 3] {
        let (_, _, r, th) = Self::polar(u);
        let (l, l1, l2) = self.log_profile(th);
        let g = l.exp();
        let g1 = g * l1;
        let g2 = g * (l2 + l1 * l1);
        let f = r.max(r_floor).powf(p - 2.0);
        let (c, s) = (th.cos(), th.sin());
        let rhat = [c, s];
        let that = [-s, c];
        let hrr = p * (p - 1.0) * g;
        let htt = p * g + g2;
        let hrt = (p - 1.0) * g1;
        let mut h2 = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                h2[i][j] = f
                    * (hrr * rhat[i] * rhat[j]
                        + htt * that[i] * that[j]
                        + hrt * (rhat[i] * that[j] + that[i] * rhat[j]));
            }
        }
        let basis = [E1, E2];
        let mut out = [[0.0; 3]; 3];
        for (a, row) in out.iter_mut().enumerate() {
            for (b, slot) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        acc += basis[i][a] * h2[i][j] * basis[j][b];
                    }
                }
                *slot = acc;
            }
        }
        out
    }

    pub fn two(&self, p: f64, u: &[f64], v: &[f64]) -> f64 {
        let g = self.grad(p, u);
        (g[0] * v[0] + g[1] * v[1] + g[2] * v[2]) / p
    }
}

/// Angle of the k-th grid direction.
pub fn grid_angle(m: usize, k: usize) -> f64 {
    2.0 * PI * k as f64 / m as f64
}

/// Unit direction cos(theta_k) e1 + sin(theta_k) e2 in R^3.
pub fn grid_direction(m: usize, k: usize) -> [f64; 3] {
    let th = grid_angle(m, k);
    let (c, s) = (th.cos(), th.sin());
    [
        c * E1[0] + s * E2[0],
        c * E1[1] + s * E2[1],
        c * E1[2] + s * E2[2],
    ]
}

/// Second derivatives of the periodic cubic spline through equally spaced values.
fn periodic_spline_curvature(y: &[f64], h: f64) -> Vec<f64> {
    let m = y.len();
    let rhs: Vec<f64> = (0..m)
        .map(|k| 6.0 * (y[(k + 1) % m] - 2.0 * y[k] + y[(k + m - 1) % m]) / (h * h))
        .collect();
    // cyclic system c_{k-1} + 4 c_k + c_{k+1} = rhs_k; strictly diagonally dominant,
    // Gauss-Seidel contracts by at least 1/2 per sweep
    let mut c = vec![0.0; m];
    for _ in 0..200 {
        let mut delta: f64 = 0.0;
        for k in 0..m {
            let new = (rhs[k] - c[(k + m - 1) % m] - c[(k + 1) % m]) / 4.0;
            delta = delta.max((new - c[k]).abs());
            c[k] = new;
        }
        let scale = c.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if delta <= 1e-16 * scale {
            break;
        }
    }
    c
}

/// The boundary form of an energy model.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryForm {
    Graph(GraphForm),
    Sampled(SampledForm),
}

impl BoundaryForm {
    pub fn unit_triangle() -> Self {
        BoundaryForm::Graph(GraphForm::complete(3, 1.0))
    }

    pub fn boundary_size(&self) -> usize {
        match self {
            BoundaryForm::Graph(g) => g.boundary_size(),
            BoundaryForm::Sampled(_) => 3,
        }
    }

    pub fn value(&self, p: f64, u: &[f64]) -> f64 {
        match self {
            BoundaryForm::Graph(g) => g.value(p, u),
            BoundaryForm::Sampled(s) => s.value(p, u),
        }
    }

    pub fn two(&self, p: f64, u: &[f64], v: &[f64]) -> f64 {
        match self {
            BoundaryForm::Graph(g) => g.two(p, u, v),
            BoundaryForm::Sampled(s) => s.two(p, u, v),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        match self {
            BoundaryForm::Graph(g) => BoundaryForm::Graph(g.scaled(c)),
            BoundaryForm::Sampled(s) => BoundaryForm::Sampled(s.scaled(c)),
        }
    }

    /// Values on the M grid directions (B = 3 only).
    pub fn on_grid(&self, p: f64, m: usize) -> Vec<f64> {
        (0..m)
            .map(|k| self.value(p, &grid_direction(m, k)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_orthonormal_and_sum_zero() {
        let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        assert!((dot(&E1, &E1) - 1.0).abs() < 1e-15);
        assert!((dot(&E2, &E2) - 1.0).abs() < 1e-15);
        assert!(dot(&E1, &E2).abs() < 1e-15);
        assert!((E1.iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn triangle_values() {
        let t = GraphForm::complete(3, 1.0);
        assert_eq!(t.value(2.0, &[1.0, 0.0, 0.0]), 2.0);
        assert_eq!(t.value(3.0, &[1.0, 0.0, 0.0]), 2.0);
    }

    #[test]
    fn sampled_reproduces_quadratic_triangle() {
        let t = GraphForm::complete(3, 1.0);
        let s = SampledForm::from_fn(720, |u| t.value(2.0, u)).unwrap();
        for u in [[1.0, 0.0, 0.0], [0.3, -1.2, 2.0], [0.0, 0.5, 0.25]] {
            assert!((s.value(2.0, &u) - t.value(2.0, &u)).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_gradient_and_hessian_match_differences() {
        let t = GraphForm::complete(3, 1.0);
        let p = 3.0;
        let s = SampledForm::from_fn(720, |u| t.value(p, u)).unwrap();
        let u = [0.7, -0.2, 0.4];
        let g = s.grad(p, &u);
        let h = s.hess(p, &u, 0.0);
        let step = 1e-6;
        for i in 0..3 {
            let mut up = u;
            let mut dn = u;
            up[i] += step;
            dn[i] -= step;
            let fd = (s.value(p, &up) - s.value(p, &dn)) / (2.0 * step);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()), "grad {i}");
            let gu = s.grad(p, &up);
            let gd = s.grad(p, &dn);
            for j in 0..3 {
                let fd2 = (gu[j] - gd[j]) / (2.0 * step);
                assert!((fd2 - h[i][j]).abs() < 1e-5 * (1.0 + h[i][j].abs()), "hess {i}{j}");
            }
        }
        // interpolation of the exact cubic form stays close off the grid
        assert!((s.value(p, &u) - t.value(p, &u)).abs() < 1e-8);
    }
}
