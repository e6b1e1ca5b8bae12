//! Renormalization (trace) of boundary forms, the p-eigenform fixed point and the
//! derived exponents.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SolveError;
use crate::graph_forms::boundary::{grid_angle, grid_direction, BoundaryForm, GraphForm, SampledForm};
use crate::graph_forms::solver::{minimize, Problem, SolverOptions, Terms};
use crate::structure::{stream_rng, PcfStructure};

/// Default number of circle directions for sampled forms.
pub const DEFAULT_GRID: usize = 720;

/// Level-1 problem sum_i rho_i E0(v o F_i).
fn level1_problem(structure: &PcfStructure, p: f64, rho: &[f64], form: &BoundaryForm) -> Problem {
    let table = structure.table(1);
    let terms = match form {
        BoundaryForm::Graph(g) => {
            let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
            for (w, &r) in rho.iter().enumerate() {
                let cell = table.cell(w);
                for &(q, q2, cw) in g.edges() {
                    if cw > 0.0 {
                        a.push(cell[q]);
                        b.push(cell[q2]);
                        c.push(r * cw);
                    }
                }
            }
            Terms::Edges { a, b, c }
        }
        BoundaryForm::Sampled(s) => Terms::Cells {
            corners: (0..rho.len()).flat_map(|w| table.cell(w).to_vec()).collect(),
            weights: rho.to_vec(),
            form: s.clone(),
        },
    };
    Problem {
        n: table.vertex_count(),
        p,
        terms,
    }
}

/// Evaluates Lambda(E0)(u) = inf { sum_i rho_i E0(v o F_i) : v|V_0 = u } for many u.
struct TraceEvaluator {
    problem: Problem,
    quad: Problem,
    boundary: usize,
    options: SolverOptions,
}

impl TraceEvaluator {
    fn new(structure: &PcfStructure, p: f64, rho: &[f64], form: &BoundaryForm) -> Self {
        let b = structure.boundary_size();
        TraceEvaluator {
            problem: level1_problem(structure, p, rho, form),
            quad: level1_problem(structure, 2.0, rho, &BoundaryForm::Graph(GraphForm::complete(b, 1.0))),
            boundary: b,
            options: SolverOptions::default(),
        }
    }

    fn eval(&self, u: &[f64]) -> Result<f64, SolveError> {
        let n = self.problem.n;
        let mut free = vec![true; n];
        let mut x = vec![u.iter().sum::<f64>() / u.len() as f64; n];
        for q in 0..self.boundary {
            free[q] = false;
            x[q] = u[q];
        }
        if u.iter().all(|&v| v == u[0]) {
            return Ok(0.0);
        }
        let x = minimize(&self.quad, x, &free, &self.options)?.0;
        let (_, rep) = minimize(&self.problem, x, &free, &self.options)?;
        Ok(rep.objective)
    }
}

/// Trace of E0 with weights rho, evaluated on `m` circle directions (B = 3) and
/// returned as a sampled form. For other boundary sizes see [`trace_graph`].
pub fn trace(
    structure: &PcfStructure,
    p: f64,
    rho: &[f64],
    form: &BoundaryForm,
    m: usize,
) -> Result<SampledForm, SolveError> {
    let values = trace_on_grid(structure, p, rho, form, m)?;
    if values.iter().all(|&v| v == 0.0) {
        return Err(SolveError::Invalid("trace of the zero form is zero".into()));
    }
    SampledForm::from_values(values)
}

/// Raw values of the trace on the grid directions (zero forms allowed).
pub fn trace_on_grid(
    structure: &PcfStructure,
    p: f64,
    rho: &[f64],
    form: &BoundaryForm,
    m: usize,
) -> Result<Vec<f64>, SolveError> {
    if structure.boundary_size() != 3 {
        return Err(SolveError::Invalid(
            "circle-sampled traces need exactly 3 boundary vertices".into(),
        ));
    }
    if let BoundaryForm::Graph(g) = form {
        if g.edges().iter().all(|e| e.2 == 0.0) {
            return Ok(vec![0.0; m]);
        }
    }
    let ev = TraceEvaluator::new(structure, p, rho, form);
    (0..m)
        .into_par_iter()
        .map(|k| {
            ev.eval(&grid_direction(m, k))
                .map_err(|e| SolveError::Direction {
                    direction: k,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Result of the eigenform iteration.
#[derive(Clone, Debug)]
pub struct Eigenform {
    pub form: BoundaryForm,
    pub rho: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// True for the graph-form ansatz used when #V_0 != 3.
    pub reduced_fidelity: bool,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EigenformOptions {
    pub grid: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Start from the symmetric unit form; otherwise from a fixed asymmetric graph form.
    pub symmetric: bool,
}

impl Default for EigenformOptions {
    fn default() -> Self {
        EigenformOptions {
            grid: DEFAULT_GRID,
            max_iter: 500,
            tol: 1e-8,
            symmetric: true,
        }
    }
}

fn initial_graph_form(b: usize, symmetric: bool) -> GraphForm {
    if symmetric {
        GraphForm::complete(b, 1.0)
    } else {
        let mut edges = Vec::new();
        let mut k = 0;
        for a in 0..b {
            for c in a + 1..b {
                edges.push((a, c, [1.0, 1.3, 0.8, 1.1, 0.9, 1.2][k % 6]));
                k += 1;
            }
        }
        GraphForm::new(b, edges).expect("valid initializer")
    }
}

/// Iterate E_{k+1} = Lambda_1(E_k) / lambda_k, normalizing at the reference direction.
pub fn eigenform_solve(
    structure: &PcfStructure,
    p: f64,
    opts: &EigenformOptions,
) -> Result<Eigenform, SolveError> {
    if structure.boundary_size() != 3 {
        return graph_eigenform(structure, p, opts);
    }
    let m = opts.grid;
    let init = BoundaryForm::Graph(initial_graph_form(3, opts.symmetric));
    let mut current = SampledForm::from_values(init.on_grid(p, m))?;
    let ones = vec![1.0; structure.alphabet_size()];
    let mut best: Option<Eigenform> = None;
    for it in 1..=opts.max_iter {
        let t = trace_on_grid(structure, p, &ones, &BoundaryForm::Sampled(current.clone()), m)?;
        let e = current.values();
        let lambda = t[0] / e[0];
        let residual = t
            .iter()
            .zip(e)
            .map(|(a, b)| (a / lambda - b).abs() / b)
            .fold(0.0f64, f64::max);
        let candidate = Eigenform {
            form: BoundaryForm::Sampled(current.clone()),
            rho: 1.0 / lambda,
            residual,
            iterations: it,
            converged: residual < opts.tol,
            reduced_fidelity: false,
        };
        if candidate.converged {
            return Ok(candidate);
        }
        if best.as_ref().map_or(true, |b| residual < b.residual) {
            best = Some(candidate);
        }
        current = SampledForm::from_values(t.iter().map(|v| v / lambda).collect())?;
    }
    Ok(best.expect("at least one iteration"))
}

/// Deterministic test directions in the sum-zero subspace of R^B.
fn probe_directions(b: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for q in 0..b {
        let mut u = vec![-1.0 / b as f64; b];
        u[q] += 1.0;
        dirs.push(u);
    }
    for a in 0..b {
        for c in a + 1..b {
            let mut u = vec![0.0; b];
            u[a] = 1.0;
            u[c] = -1.0;
            dirs.push(u);
        }
    }
    let mut rng = stream_rng(0x5eed, 0);
    for _ in 0..8 * b {
        let mut u: Vec<f64> = (0..b).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mean = u.iter().sum::<f64>() / b as f64;
        u.iter_mut().for_each(|v| *v -= mean);
        dirs.push(u);
    }
    dirs
}

/// Trace of a graph form approximated by the best graph form (least squares over
/// probe directions). Exact when p = 2 or when the trace is itself a graph form.
pub fn trace_graph(
    structure: &PcfStructure,
    p: f64,
    rho: &[f64],
    form: &GraphForm,
) -> Result<(GraphForm, f64), SolveError> {
    let b = structure.boundary_size();
    let ev = TraceEvaluator::new(structure, p, rho, &BoundaryForm::Graph(form.clone()));
    let dirs = probe_directions(b);
    let values: Vec<f64> = dirs
        .par_iter()
        .map(|u| ev.eval(u))
        .collect::<Result<_, _>>()?;
    let pairs: Vec<(usize, usize)> = (0..b)
        .flat_map(|a| (a + 1..b).map(move |c| (a, c)))
        .collect();
    let design = nalgebra::DMatrix::from_fn(dirs.len(), pairs.len(), |i, j| {
        (dirs[i][pairs[j].0] - dirs[i][pairs[j].1]).abs().powf(p)
    });
    let rhs = nalgebra::DVector::from_vec(values.clone());
    let svd = design.clone().svd(true, true);
    let c = svd
        .solve(&rhs, 1e-13)
        .map_err(|e| SolveError::Invalid(e.to_string()))?;
    let fitted = GraphForm::new(
        b,
        pairs
            .iter()
            .zip(c.iter())
            .map(|(&(a, d), &w)| (a, d, w.max(0.0)))
            .collect(),
    )?;
    let misfit = dirs
        .iter()
        .zip(&values)
        .map(|(u, &v)| (fitted.value(p, u) - v).abs() / v.max(1e-300))
        .fold(0.0f64, f64::max);
    Ok((fitted, misfit))
}

fn graph_eigenform(
    structure: &PcfStructure,
    p: f64,
    opts: &EigenformOptions,
) -> Result<Eigenform, SolveError> {
    let b = structure.boundary_size();
    let ones = vec![1.0; structure.alphabet_size()];
    let mut reference = vec![-1.0 / b as f64; b];
    reference[0] += 1.0;
    let probes = probe_directions(b);
    let mut current = initial_graph_form(b, opts.symmetric);
    let mut best: Option<Eigenform> = None;
    for it in 1..=opts.max_iter {
        let (t, _) = trace_graph(structure, p, &ones, &current)?;
        let lambda = t.value(p, &reference) / current.value(p, &reference);
        let residual = probes
            .iter()
            .map(|u| {
                let e = current.value(p, u);
                (t.value(p, u) / lambda - e).abs() / e
            })
            .fold(0.0f64, f64::max);
        let candidate = Eigenform {
            form: BoundaryForm::Graph(current.clone()),
            rho: 1.0 / lambda,
            residual,
            iterations: it,
            converged: residual < opts.tol,
            reduced_fidelity: p != 2.0,
        };
        if candidate.converged {
            return Ok(candidate);
        }
        if best.as_ref().map_or(true, |b| residual < b.residual) {
            best = Some(candidate);
        }
        current = t.scaled(1.0 / lambda);
    }
    Ok(best.expect("at least one iteration"))
}

/// Eigenform CSV (angle, value).
pub fn eigenform_csv(form: &SampledForm) -> String {
    let m = form.len();
    let mut s = String::from("angle,value\n");
    for (k, v) in form.values().iter().enumerate() {
        s.push_str(&format!("{},{}\n", grid_angle(m, k), v));
    }
    s
}

/// Exponents derived from the renormalization weights and the geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentSheet {
    pub p: f64,
    pub d_f: f64,
    pub d_fp: f64,
    pub sigma_p: f64,
    pub d_wp: f64,
    pub s_p_partition: f64,
    pub s_p_resistance: f64,
    pub r_star: f64,
}

/// Solve sum_i b_i^d = 1 for d, b_i in (0,1).
pub fn similarity_dimension(bases: &[f64]) -> Result<f64, SolveError> {
    if bases.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
        return Err(SolveError::Invalid("bases must lie in (0,1)".into()));
    }
    let h = |d: f64| bases.iter().map(|b| b.powf(d)).sum::<f64>() - 1.0;
    let dh = |d: f64| bases.iter().map(|b| b.powf(d) * b.ln()).sum::<f64>();
    // h is decreasing; bracket the root
    let (mut lo, mut hi) = (0.0, 1.0);
    while h(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(SolveError::Invalid("dimension out of range".into()));
        }
    }
    let mut d = 0.5 * (lo + hi);
    for _ in 0..200 {
        let v = h(d);
        if v.abs() < 1e-15 {
            break;
        }
        if v > 0.0 {
            lo = d;
        } else {
            hi = d;
        }
        let step = d - v / dh(d);
        d = if step > lo && step < hi {
            step
        } else {
            0.5 * (lo + hi)
        };
    }
    if h(d).abs() > 1e-12 {
        return Err(SolveError::NonConvergence {
            residual: h(d).abs(),
            iterations: 200,
        });
    }
    Ok(d)
}

pub fn exponents(
    structure: &PcfStructure,
    p: f64,
    rho: &[f64],
    r_star: f64,
) -> Result<ExponentSheet, SolveError> {
    if rho.iter().any(|&r| !(r > 1.0)) {
        return Err(SolveError::Invalid("rho_p must exceed 1".into()));
    }
    if !(r_star > 0.0 && r_star < 1.0) {
        return Err(SolveError::Invalid("r_star must lie in (0,1)".into()));
    }
    let n = structure.alphabet_size();
    let ratios: Vec<f64> = (0..n)
        .map(|i| {
            structure
                .contraction_ratio(i)
                .unwrap_or_else(|| r_star.powi(structure.contraction_levels()[i] as i32))
        })
        .collect();
    let d_f = similarity_dimension(&ratios)?;
    let d_fp = similarity_dimension(
        &rho.iter()
            .map(|r| r.powf(-1.0 / (p - 1.0)))
            .collect::<Vec<_>>(),
    )?;
    let levels = structure.contraction_levels();
    let sigma_p = (rho
        .iter()
        .zip(levels)
        .map(|(r, &j)| r.ln() / j as f64)
        .sum::<f64>()
        / n as f64)
        .exp();
    let d_wp = d_f + sigma_p.ln() / (1.0 / r_star).ln();
    Ok(ExponentSheet {
        p,
        d_f,
        d_fp,
        sigma_p,
        d_wp,
        s_p_partition: d_wp / p,
        s_p_resistance: (d_fp + p - 1.0) / p,
        r_star,
    })
}

/// The sheet re-expressed with the resistance metric R_p^{1/(p-1)} as ambient metric:
/// d_f becomes d_fp and the cell scaling becomes sigma_p^{-1/(p-1)}.
pub fn resistance_configuration(sheet: &ExponentSheet) -> ExponentSheet {
    let p = sheet.p;
    let r_star = sheet.sigma_p.powf(-1.0 / (p - 1.0));
    let d_wp = sheet.d_fp + sheet.sigma_p.ln() / (1.0 / r_star).ln();
    ExponentSheet {
        d_f: sheet.d_fp,
        d_wp,
        s_p_partition: d_wp / p,
        r_star,
        ..*sheet
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_weights_are_powers_of_two() {
        let iv = PcfStructure::interval();
        for p in [1.5, 2.0, 3.0] {
            let e = eigenform_solve(&iv, p, &EigenformOptions::default()).unwrap();
            assert!(e.converged);
            assert!((e.rho - 2f64.powf(p - 1.0)).abs() < 1e-9, "p={p} rho={}", e.rho);
        }
    }

    #[test]
    fn tetrahedron_p2_weight() {
        let t = PcfStructure::tetrahedron();
        let e = eigenform_solve(&t, 2.0, &EigenformOptions::default()).unwrap();
        assert!(e.converged);
        assert!((e.rho - 1.5).abs() < 1e-9);
        assert!(!e.reduced_fidelity);
    }

    #[test]
    fn dimension_closed_form() {
        let d = similarity_dimension(&[0.5; 3]).unwrap();
        assert!((d - 3f64.ln() / 2f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn zero_form_traces_to_zero() {
        let sg = PcfStructure::sierpinski();
        let z = BoundaryForm::Graph(GraphForm::complete(3, 0.0));
        let v = trace_on_grid(&sg, 2.0, &[1.0; 3], &z, 36).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }
}
