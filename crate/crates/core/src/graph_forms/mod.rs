//! Discrete p-energies on level-n vertex sets, their two-variable versions and
//! constrained minimization (harmonic extension, capacities).

pub mod boundary;
pub mod cells;
pub mod solver;

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

pub use boundary::{BoundaryForm, GraphForm, SampledForm};
pub use cells::{
    average_project, cell_graph_energy, conductance_constant, disparity_constant, vertex_to_cells,
    wp_seminorm, CellFunction, ConductanceResult, DisparityEstimate, SeminormProfile,
};
pub use solver::{minimize_graph_energy, SolveReport, SolverOptions};

use crate::error::SolveError;
use crate::structure::{PcfStructure, VertexTable};
use solver::{minimize, Problem, Terms};

/// A self-similar p-energy: exponent, renormalization weights and boundary form.
#[derive(Clone, Debug)]
pub struct EnergyModel {
    structure: PcfStructure,
    p: f64,
    rho: Vec<f64>,
    form: BoundaryForm,
    sigma_p: Option<f64>,
    options: SolverOptions,
    weights: Arc<Mutex<Vec<Arc<Vec<f64>>>>>,
}

impl EnergyModel {
    pub fn new(
        structure: PcfStructure,
        p: f64,
        rho: Vec<f64>,
        form: BoundaryForm,
    ) -> Result<Self, SolveError> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(SolveError::Invalid(format!("p = {p} must exceed 1")));
        }
        if rho.len() != structure.alphabet_size() {
            return Err(SolveError::Invalid(format!(
                "{} weights for {} letters",
                rho.len(),
                structure.alphabet_size()
            )));
        }
        if rho.iter().any(|&r| !(r > 1.0 && r.is_finite())) {
            return Err(SolveError::Invalid("all rho_i must exceed 1".into()));
        }
        if form.boundary_size() != structure.boundary_size() {
            return Err(SolveError::Invalid(format!(
                "boundary form on {} vertices, structure has {}",
                form.boundary_size(),
                structure.boundary_size()
            )));
        }
        Ok(EnergyModel {
            structure,
            p,
            rho,
            form,
            sigma_p: None,
            options: SolverOptions::default(),
            weights: Arc::new(Mutex::new(vec![Arc::new(vec![1.0])])),
        })
    }

    /// The standard energy on the gasket: unit triangle, p = 2, rho = 5/3.
    pub fn sierpinski_p2() -> Self {
        EnergyModel::new(
            PcfStructure::sierpinski(),
            2.0,
            vec![5.0 / 3.0; 3],
            BoundaryForm::unit_triangle(),
        )
        .expect("valid model")
        .with_sigma(5.0 / 3.0)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma_p = Some(sigma);
        self
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    pub fn structure(&self) -> &PcfStructure {
        &self.structure
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn form(&self) -> &BoundaryForm {
        &self.form
    }

    pub fn sigma_p(&self) -> Option<f64> {
        self.sigma_p
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    pub fn table(&self, n: usize) -> Arc<VertexTable> {
        self.structure.table(n)
    }

    /// rho_w for every level-n word, lexicographic order.
    pub fn cell_weights(&self, n: usize) -> Arc<Vec<f64>> {
        let mut cache = self.weights.lock().expect("weight cache poisoned");
        while cache.len() <= n {
            let prev = cache.last().cloned().expect("nonempty");
            let next: Vec<f64> = prev
                .iter()
                .flat_map(|&w| self.rho.iter().map(move |&r| w * r))
                .collect();
            cache.push(Arc::new(next));
        }
        cache[n].clone()
    }

    /// rho_w for a single word.
    pub fn word_weight(&self, w: &[u8]) -> f64 {
        w.iter().map(|&l| self.rho[l as usize]).product()
    }

    /// Same structure and form with different weights (used by negative controls).
    pub fn with_rho(&self, rho: Vec<f64>) -> Result<Self, SolveError> {
        let mut m = EnergyModel::new(self.structure.clone(), self.p, rho, self.form.clone())?;
        m.sigma_p = self.sigma_p;
        m.options = self.options;
        Ok(m)
    }

    pub(crate) fn problem(&self, n: usize) -> Problem {
        let table = self.table(n);
        let weights = self.cell_weights(n);
        let terms = match &self.form {
            BoundaryForm::Graph(g) => {
                let m = table.cell_count() * g.edges().len();
                let (mut a, mut b, mut c) =
                    (Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m));
                for w in 0..table.cell_count() {
                    let cell = table.cell(w);
                    for &(q, q2, cw) in g.edges() {
                        if cw > 0.0 {
                            a.push(cell[q]);
                            b.push(cell[q2]);
                            c.push(weights[w] * cw);
                        }
                    }
                }
                Terms::Edges { a, b, c }
            }
            BoundaryForm::Sampled(s) => Terms::Cells {
                corners: (0..table.cell_count())
                    .flat_map(|w| table.cell(w).to_vec())
                    .collect(),
                weights: weights.to_vec(),
                form: s.clone(),
            },
        };
        Problem {
            n: table.vertex_count(),
            p: self.p,
            terms,
        }
    }

    fn check(&self, f: &DiscreteFunction) -> Result<Arc<VertexTable>, SolveError> {
        let table = self.table(f.level);
        if f.values.len() != table.vertex_count() {
            return Err(SolveError::SizeMismatch {
                expected: table.vertex_count(),
                found: f.values.len(),
            });
        }
        Ok(table)
    }
}

/// Values on the identified vertex set V_n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteFunction {
    pub level: usize,
    pub values: Vec<f64>,
}

impl DiscreteFunction {
    pub fn new(level: usize, values: Vec<f64>) -> Self {
        DiscreteFunction { level, values }
    }

    pub fn constant(table: &VertexTable, c: f64) -> Self {
        DiscreteFunction {
            level: table.level(),
            values: vec![c; table.vertex_count()],
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        DiscreteFunction {
            level: self.level,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.level, other.level);
        DiscreteFunction {
            level: self.level,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Restriction to the coarser vertex set V_m (ids are level-consistent).
    pub fn restrict(&self, structure: &PcfStructure, m: usize) -> Self {
        assert!(m <= self.level);
        let count = structure.table(m).vertex_count();
        DiscreteFunction {
            level: m,
            values: self.values[..count].to_vec(),
        }
    }

    /// CSV export with columns vertex, value.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("vertex,value\n");
        for (i, v) in self.values.iter().enumerate() {
            s.push_str(&format!("{i},{v}\n"));
        }
        s
    }

    pub fn from_csv(level: usize, text: &str) -> Result<Self, crate::error::IoError> {
        let mut values = Vec::new();
        for (line_no, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let (id, v) = line.split_once(',').ok_or(crate::error::IoError::Parse {
                line: line_no + 1,
                message: "expected `vertex,value`".into(),
            })?;
            let id: usize = id.trim().parse().map_err(|_| crate::error::IoError::Parse {
                line: line_no + 1,
                message: format!("bad vertex id `{id}`"),
            })?;
            let v: f64 = v.trim().parse().map_err(|_| crate::error::IoError::Parse {
                line: line_no + 1,
                message: format!("bad value `{v}`"),
            })?;
            if id != values.len() {
                return Err(crate::error::IoError::Parse {
                    line: line_no + 1,
                    message: format!("vertex ids must be consecutive, got {id}"),
                });
            }
            values.push(v);
        }
        Ok(DiscreteFunction { level, values })
    }
}

fn corner_values(f: &DiscreteFunction, cell: &[u32]) -> Vec<f64> {
    cell.iter().map(|&v| f.values[v as usize]).collect()
}

/// E(f) = sum_w rho_w E0(f o F_w).
pub fn energy(model: &EnergyModel, f: &DiscreteFunction) -> Result<f64, SolveError> {
    Ok(cell_energies(model, f)?.iter().sum())
}

/// Per-cell terms rho_w E0(f o F_w) at the level of f.
pub fn cell_energies(model: &EnergyModel, f: &DiscreteFunction) -> Result<Vec<f64>, SolveError> {
    let table = model.check(f)?;
    let weights = model.cell_weights(f.level);
    Ok((0..table.cell_count())
        .map(|w| weights[w] * model.form.value(model.p, &corner_values(f, table.cell(w))))
        .collect())
}

/// E(f; g) = (1/p) d/dt E(f + t g) at t = 0.
pub fn energy_two(
    model: &EnergyModel,
    f: &DiscreteFunction,
    g: &DiscreteFunction,
) -> Result<f64, SolveError> {
    Ok(cell_energies_two(model, f, g)?.iter().sum())
}

pub fn cell_energies_two(
    model: &EnergyModel,
    f: &DiscreteFunction,
    g: &DiscreteFunction,
) -> Result<Vec<f64>, SolveError> {
    if f.level != g.level {
        return Err(SolveError::LevelMismatch {
            expected: f.level,
            found: g.level,
        });
    }
    let table = model.check(f)?;
    model.check(g)?;
    let weights = model.cell_weights(f.level);
    Ok((0..table.cell_count())
        .map(|w| {
            let cell = table.cell(w);
            weights[w]
                * model
                    .form
                    .two(model.p, &corner_values(f, cell), &corner_values(g, cell))
        })
        .collect())
}

/// Minimizer of E at level n subject to the given vertex values.
pub fn dirichlet_solve(
    model: &EnergyModel,
    n: usize,
    constraints: &[(usize, f64)],
) -> Result<DiscreteFunction, SolveError> {
    dirichlet_solve_report(model, n, constraints).map(|r| r.0)
}

pub fn dirichlet_solve_report(
    model: &EnergyModel,
    n: usize,
    constraints: &[(usize, f64)],
) -> Result<(DiscreteFunction, SolveReport), SolveError> {
    if constraints.is_empty() {
        return Err(SolveError::Invalid("constraint set is empty".into()));
    }
    let problem = model.problem(n);
    let count = problem.n;
    let mut free = vec![true; count];
    let mut x = vec![0.0; count];
    for &(i, _) in constraints {
        if i >= count {
            return Err(SolveError::VertexOutOfRange { id: i, count });
        }
    }
    let lo = constraints.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let hi = constraints
        .iter()
        .map(|c| c.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let mean = constraints.iter().map(|c| c.1).sum::<f64>() / constraints.len() as f64;
    x.iter_mut().for_each(|v| *v = mean);
    for &(i, v) in constraints {
        free[i] = false;
        x[i] = v;
    }
    if lo == hi {
        let f = DiscreteFunction::new(n, vec![lo; count]);
        return Ok((
            f,
            SolveReport {
                iterations: 0,
                residual: 0.0,
                objective: 0.0,
            },
        ));
    }
    if model.p != 2.0 || matches!(model.form, BoundaryForm::Sampled(_)) {
        // warm start from the quadratic problem on the same cells
        let quad = EnergyModel::new(
            model.structure.clone(),
            2.0,
            model.rho.clone(),
            BoundaryForm::Graph(GraphForm::complete(model.structure.boundary_size(), 1.0)),
        )?;
        x = minimize(&quad.problem(n), x, &free, &model.options)?.0;
    }
    let (x, report) = minimize(&problem, x, &free, &model.options)?;
    Ok((DiscreteFunction::new(n, x), report))
}

/// Harmonic extension of boundary data on V_0 to level n.
pub fn harmonic_extend(
    model: &EnergyModel,
    boundary: &[f64],
    n: usize,
) -> Result<DiscreteFunction, SolveError> {
    if boundary.len() != model.structure.boundary_size() {
        return Err(SolveError::SizeMismatch {
            expected: model.structure.boundary_size(),
            found: boundary.len(),
        });
    }
    let constraints: Vec<(usize, f64)> = boundary.iter().copied().enumerate().collect();
    dirichlet_solve(model, n, &constraints)
}

/// cap(A0, A1) at level n: minimal energy with f = 0 on A0 and f = 1 on A1.
pub fn capacity(model: &EnergyModel, n: usize, a0: &[usize], a1: &[usize]) -> Result<f64, SolveError> {
    capacity_potential(model, n, a0, a1).map(|r| r.1)
}

/// The capacity minimizer together with its energy.
pub fn capacity_potential(
    model: &EnergyModel,
    n: usize,
    a0: &[usize],
    a1: &[usize],
) -> Result<(DiscreteFunction, f64), SolveError> {
    if a0.is_empty() || a1.is_empty() {
        return Err(SolveError::Invalid("capacity needs nonempty sets".into()));
    }
    if let Some(&v) = a0.iter().find(|v| a1.contains(v)) {
        return Err(SolveError::Overlap(v));
    }
    let constraints: Vec<(usize, f64)> = a0
        .iter()
        .map(|&v| (v, 0.0))
        .chain(a1.iter().map(|&v| (v, 1.0)))
        .collect();
    let f = dirichlet_solve(model, n, &constraints)?;
    let e = energy(model, &f)?;
    Ok((f, e))
}
