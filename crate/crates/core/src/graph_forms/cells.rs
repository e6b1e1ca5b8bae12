//! Functions on cells: averaging operators, cell-graph energies, neighbor
//! disparity and conductance constants, and the W^p seminorm profile.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::solver::{minimize_graph_energy, SolverOptions};
use super::{DiscreteFunction, EnergyModel};
use crate::error::SolveError;
use crate::structure::{cell_adjacency, stream_rng, CellGraph, PcfStructure, SelfSimilarMeasure};

/// Real values indexed by level-n words (lexicographic order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFunction {
    pub level: usize,
    pub values: Vec<f64>,
}

/// Corner average of a vertex function on each cell of its level.
pub fn vertex_to_cells(structure: &PcfStructure, f: &DiscreteFunction) -> CellFunction {
    let table = structure.table(f.level);
    let b = table.boundary_size() as f64;
    CellFunction {
        level: f.level,
        values: (0..table.cell_count())
            .map(|w| table.cell(w).iter().map(|&v| f.values[v as usize]).sum::<f64>() / b)
            .collect(),
    }
}

/// (P_{n,k} f)(w): m-weighted mean of f over the descendants S^k(w).
pub fn average_project(
    measure: &SelfSimilarMeasure,
    f: &CellFunction,
    n: usize,
) -> Result<CellFunction, SolveError> {
    if n > f.level {
        return Err(SolveError::Invalid(format!(
            "cannot project level {} to finer level {n}",
            f.level
        )));
    }
    let big_n = measure.weights().len();
    let k = f.level - n;
    let block = big_n.pow(k as u32);
    let masses = measure.level_masses(f.level);
    let values = (0..big_n.pow(n as u32))
        .map(|w| {
            let range = w * block..(w + 1) * block;
            let (mut num, mut den) = (0.0, 0.0);
            for v in range {
                num += masses[v] * f.values[v];
                den += masses[v];
            }
            num / den
        })
        .collect();
    Ok(CellFunction { level: n, values })
}

/// E^n_{p,A}(f) = sum over cell-graph edges inside A of |f(u) - f(v)|^p; `inside`
/// = None means A = T_n.
pub fn cell_graph_energy(p: f64, graph: &CellGraph, f: &[f64], inside: Option<&[bool]>) -> f64 {
    graph
        .edges
        .iter()
        .filter(|(a, b)| inside.map_or(true, |s| s[*a as usize] && s[*b as usize]))
        .map(|&(a, b)| (f[a as usize] - f[b as usize]).abs().powf(p))
        .sum()
}

/// Outcome of a disparity computation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DisparityEstimate {
    pub value: f64,
    pub certified: bool,
    /// Fine cells S^k(A) in increasing order.
    pub fine_cells: Vec<u32>,
    /// Best function found, aligned with `fine_cells`.
    pub maximizer: Vec<f64>,
    /// Ratio of the quadratic maximizer under the requested p (equals `value` at p = 2).
    pub quadratic_warm_start: f64,
}

struct DisparityProblem {
    p: f64,
    coarse_edges: Vec<(usize, usize)>,
    fine_edges: Vec<(usize, usize)>,
    /// per coarse cell: (fine local index, weight) pairs
    proj: Vec<Vec<(usize, f64)>>,
    fine_count: usize,
}

impl DisparityProblem {
    fn project(&self, f: &[f64]) -> Vec<f64> {
        self.proj
            .iter()
            .map(|row| row.iter().map(|&(i, w)| w * f[i]).sum())
            .collect()
    }

    fn num(&self, f: &[f64]) -> f64 {
        let pf = self.project(f);
        self.coarse_edges
            .iter()
            .map(|&(a, b)| (pf[a] - pf[b]).abs().powf(self.p))
            .sum()
    }

    fn den(&self, f: &[f64]) -> f64 {
        self.fine_edges
            .iter()
            .map(|&(a, b)| (f[a] - f[b]).abs().powf(self.p))
            .sum()
    }

    fn ratio(&self, f: &[f64]) -> f64 {
        let d = self.den(f);
        if d <= 0.0 {
            0.0
        } else {
            self.num(f) / d
        }
    }

    /// Gradient of log(num) - log(den).
    fn log_ratio_grad(&self, f: &[f64]) -> Vec<f64> {
        let p = self.p;
        let pf = self.project(f);
        let num = self.num(f);
        let den = self.den(f);
        let mut gc = vec![0.0; pf.len()];
        for &(a, b) in &self.coarse_edges {
            let d = pf[a] - pf[b];
            let s = p * super::boundary::signed_pow(d, p - 1.0);
            gc[a] += s;
            gc[b] -= s;
        }
        let mut g = vec![0.0; self.fine_count];
        for (a, row) in self.proj.iter().enumerate() {
            for &(i, w) in row {
                g[i] += w * gc[a] / num;
            }
        }
        for &(a, b) in &self.fine_edges {
            let d = f[a] - f[b];
            let s = p * super::boundary::signed_pow(d, p - 1.0) / den;
            g[a] -= s;
            g[b] += s;
        }
        g
    }

    /// Quadratic (p = 2) matrices N = P^T L_A P and D = L_F.
    fn quadratic_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let nf = self.fine_count;
        let nc = self.proj.len();
        let mut pm = DMatrix::<f64>::zeros(nc, nf);
        for (a, row) in self.proj.iter().enumerate() {
            for &(i, w) in row {
                pm[(a, i)] = w;
            }
        }
        let mut la = DMatrix::<f64>::zeros(nc, nc);
        for &(a, b) in &self.coarse_edges {
            la[(a, a)] += 1.0;
            la[(b, b)] += 1.0;
            la[(a, b)] -= 1.0;
            la[(b, a)] -= 1.0;
        }
        let mut lf = DMatrix::<f64>::zeros(nf, nf);
        for &(a, b) in &self.fine_edges {
            lf[(a, a)] += 1.0;
            lf[(b, b)] += 1.0;
            lf[(a, b)] -= 1.0;
            lf[(b, a)] -= 1.0;
        }
        (pm.transpose() * la * pm, lf)
    }
}

/// sigma_{p,k}(A) for a connected cell set A at level n.
pub fn disparity_constant(
    structure: &PcfStructure,
    measure: &SelfSimilarMeasure,
    p: f64,
    n: usize,
    a: &[u32],
    k: usize,
    seed: u64,
) -> Result<DisparityEstimate, SolveError> {
    let coarse = cell_adjacency(structure, n);
    let mut a_sorted = a.to_vec();
    a_sorted.sort_unstable();
    a_sorted.dedup();
    if a_sorted.is_empty() || !coarse.is_connected_subset(&a_sorted) {
        return Err(SolveError::Invalid("A must be a nonempty connected cell set".into()));
    }
    let big_n = structure.alphabet_size();
    let block = big_n.pow(k as u32);
    let fine_graph = cell_adjacency(structure, n + k);
    let fine_cells: Vec<u32> = a_sorted
        .iter()
        .flat_map(|&w| (w as usize * block..(w as usize + 1) * block).map(|v| v as u32))
        .collect();
    let mut local = vec![usize::MAX; fine_graph.cells];
    for (i, &c) in fine_cells.iter().enumerate() {
        local[c as usize] = i;
    }
    let mut coarse_local = vec![usize::MAX; coarse.cells];
    for (i, &c) in a_sorted.iter().enumerate() {
        coarse_local[c as usize] = i;
    }
    let masses = measure.level_masses(n + k);
    let proj = a_sorted
        .iter()
        .map(|&w| {
            let range = w as usize * block..(w as usize + 1) * block;
            let total: f64 = range.clone().map(|v| masses[v]).sum();
            range.map(|v| (local[v], masses[v] / total)).collect()
        })
        .collect();
    let problem = DisparityProblem {
        p,
        coarse_edges: coarse
            .edges
            .iter()
            .filter(|(x, y)| coarse_local[*x as usize] != usize::MAX && coarse_local[*y as usize] != usize::MAX)
            .map(|&(x, y)| (coarse_local[x as usize], coarse_local[y as usize]))
            .collect(),
        fine_edges: fine_graph
            .edges
            .iter()
            .filter(|(x, y)| local[*x as usize] != usize::MAX && local[*y as usize] != usize::MAX)
            .map(|&(x, y)| (local[x as usize], local[y as usize]))
            .collect(),
        proj,
        fine_count: fine_cells.len(),
    };
    if problem.coarse_edges.is_empty() {
        return Ok(DisparityEstimate {
            value: 0.0,
            certified: true,
            fine_cells,
            maximizer: vec![0.0; problem.fine_count],
            quadratic_warm_start: 0.0,
        });
    }
    let (lambda, quad_max) = quadratic_disparity(&problem)?;
    if p == 2.0 {
        return Ok(DisparityEstimate {
            value: lambda,
            certified: true,
            fine_cells,
            quadratic_warm_start: lambda,
            maximizer: quad_max,
        });
    }
    let warm_ratio = problem.ratio(&quad_max);
    let starts: Vec<Vec<f64>> = std::iter::once(quad_max.clone())
        .chain((0..20u64).map(|r| {
            let mut rng = stream_rng(seed, r);
            (0..problem.fine_count)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        }))
        .collect();
    let results: Vec<(f64, Vec<f64>)> = starts
        .into_par_iter()
        .map(|f0| ascend(&problem, f0))
        .collect();
    let (value, maximizer) = results
        .into_iter()
        .fold((f64::NEG_INFINITY, Vec::new()), |best, cur| {
            if cur.0 > best.0 {
                cur
            } else {
                best
            }
        });
    Ok(DisparityEstimate {
        value,
        certified: false,
        fine_cells,
        maximizer,
        quadratic_warm_start: warm_ratio,
    })
}

fn quadratic_disparity(problem: &DisparityProblem) -> Result<(f64, Vec<f64>), SolveError> {
    let (nm, dm) = problem.quadratic_matrices();
    let nf = problem.fine_count;
    let shifted = &dm + DMatrix::<f64>::from_element(nf, nf, 1.0);
    let chol = shifted
        .cholesky()
        .ok_or_else(|| SolveError::Invalid("fine cell set S^k(A) is not connected".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| SolveError::Invalid("singular Cholesky factor".into()))?;
    let m = &linv * nm * linv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let (mut best, mut idx) = (f64::NEG_INFINITY, 0);
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if v > best {
            best = v;
            idx = i;
        }
    }
    let y = eig.eigenvectors.column(idx).into_owned();
    let f = linv.transpose() * y;
    Ok((best.max(0.0), f.iter().copied().collect()))
}

fn ascend(problem: &DisparityProblem, mut f: Vec<f64>) -> (f64, Vec<f64>) {
    let normalize = |f: &mut Vec<f64>| {
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        f.iter_mut().for_each(|v| *v -= mean);
        let d = problem.den(f);
        if d > 0.0 {
            let s = d.powf(-1.0 / problem.p);
            f.iter_mut().for_each(|v| *v *= s);
        }
    };
    normalize(&mut f);
    let mut r = problem.ratio(&f);
    if !(r > 0.0) {
        return (r.max(0.0), f);
    }
    let mut step = 0.1;
    for _ in 0..3000 {
        let g = problem.log_ratio_grad(&f);
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(gn > 1e-14) {
            break;
        }
        let mut improved = false;
        for _ in 0..50 {
            let mut trial: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + step * b / gn).collect();
            normalize(&mut trial);
            let rt = problem.ratio(&trial);
            if rt > r {
                let gain = (rt - r) / r;
                f = trial;
                r = rt;
                improved = gain > 1e-13;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (r, f)
}

/// Conductance constant computed over the cells of levels 0..=max_level.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConductanceResult {
    pub m: usize,
    pub k: usize,
    pub p: f64,
    /// sup over all levels, None if no cell is separated from anything.
    pub value: Option<f64>,
    pub per_level: Vec<Option<f64>>,
    /// (level, cell index) of the maximizing cell.
    pub argmax: Option<(usize, u32)>,
}

/// E_{M,p,k} restricted to words of length <= max_level. Cells whose neighborhood
/// Gamma_M(w) is everything impose no separation (the constant 0 is admissible)
/// and are skipped.
pub fn conductance_constant(
    structure: &PcfStructure,
    p: f64,
    m: usize,
    k: usize,
    max_level: usize,
) -> Result<ConductanceResult, SolveError> {
    let big_n = structure.alphabet_size();
    let block = big_n.pow(k as u32);
    let opts = SolverOptions::default();
    let mut per_level = Vec::new();
    let mut best: Option<(f64, usize, u32)> = None;
    for level in 0..=max_level {
        let coarse = cell_adjacency(structure, level);
        let fine = cell_adjacency(structure, level + k);
        let edges: Vec<(u32, u32, f64)> = fine.edges.iter().map(|&(a, b)| (a, b, 1.0)).collect();
        let caps: Vec<Result<Option<f64>, SolveError>> = (0..coarse.cells)
            .into_par_iter()
            .map(|w| {
                let ball = coarse.ball(w, m);
                if ball.len() == coarse.cells {
                    return Ok(None);
                }
                let mut in_ball = vec![false; coarse.cells];
                for &c in &ball {
                    in_ball[c as usize] = true;
                }
                let mut fixed = Vec::new();
                for c in 0..coarse.cells {
                    let v = if c == w {
                        0.0
                    } else if !in_ball[c] {
                        1.0
                    } else {
                        continue;
                    };
                    fixed.extend((c * block..(c + 1) * block).map(|f| (f, v)));
                }
                let (_, rep) = minimize_graph_energy(fine.cells, p, &edges, &fixed, &opts)?;
                Ok(Some(rep.objective))
            })
            .collect();
        let mut level_best: Option<f64> = None;
        for (w, c) in caps.into_iter().enumerate() {
            if let Some(v) = c? {
                if level_best.map_or(true, |b| v > b) {
                    level_best = Some(v);
                }
                if best.map_or(true, |b| v > b.0) {
                    best = Some((v, level, w as u32));
                }
            }
        }
        per_level.push(level_best);
    }
    Ok(ConductanceResult {
        m,
        k,
        p,
        value: best.map(|b| b.0),
        per_level,
        argmax: best.map(|b| (b.1, b.2)),
    })
}

/// Profile sigma^n E^n(P_n f) of a function given by level-n_max vertex values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeminormProfile {
    pub levels: Vec<usize>,
    pub values: Vec<f64>,
    pub max: f64,
    pub argmax: usize,
    /// True when the maximum sits at the finest level computed, so the supremum
    /// may lie beyond the range.
    pub max_at_finest: bool,
    /// max over k < l of value_k / value_l (weak-monotonicity constant on the range).
    pub fitted_c: f64,
}

pub fn wp_seminorm(
    model: &EnergyModel,
    measure: &SelfSimilarMeasure,
    f: &DiscreteFunction,
    levels: &[usize],
) -> Result<SeminormProfile, SolveError> {
    let sigma = model
        .sigma_p()
        .ok_or_else(|| SolveError::Invalid("sigma_p is not set on the model".into()))?;
    if levels.is_empty() || levels.iter().any(|&n| n > f.level) {
        return Err(SolveError::Invalid("levels must be nonempty and <= n_max".into()));
    }
    let structure = model.structure();
    let cells = vertex_to_cells(structure, f);
    let mut values = Vec::with_capacity(levels.len());
    for &n in levels {
        let pf = average_project(measure, &cells, n)?;
        let g = cell_adjacency(structure, n);
        values.push(sigma.powi(n as i32) * cell_graph_energy(model.p(), &g, &pf.values, None));
    }
    let (mut max, mut argmax) = (f64::NEG_INFINITY, 0);
    for (i, &v) in values.iter().enumerate() {
        if v > max {
            max = v;
            argmax = i;
        }
    }
    let mut fitted_c: f64 = 1.0;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            if values[j] > 0.0 {
                fitted_c = fitted_c.max(values[i] / values[j]);
            } else if values[i] > 0.0 {
                fitted_c = f64::INFINITY;
            }
        }
    }
    Ok(SeminormProfile {
        levels: levels.to_vec(),
        max_at_finest: argmax + 1 == values.len() && values.len() > 1,
        values,
        max,
        argmax,
        fitted_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_of_constant_and_mean() {
        let m = SelfSimilarMeasure::uniform(3);
        let f = CellFunction {
            level: 1,
            values: vec![0.0, 1.0, 1.0],
        };
        let p = average_project(&m, &f, 0).unwrap();
        assert!((p.values[0] - 2.0 / 3.0).abs() < 1e-15);
        let c = CellFunction {
            level: 3,
            values: vec![4.0; 27],
        };
        assert!(average_project(&m, &c, 1)
            .unwrap()
            .values
            .iter()
            .all(|&v| (v - 4.0).abs() < 1e-14));
    }

    #[test]
    fn disparity_k0_is_one() {
        let sg = PcfStructure::sierpinski();
        let m = SelfSimilarMeasure::uniform(3);
        let d = disparity_constant(&sg, &m, 2.0, 2, &[1, 3], 0, 1).unwrap();
        assert!((d.value - 1.0).abs() < 1e-10);
    }
}
