//! p-energy measures of cells and the identities they satisfy.

use serde::Serialize;

use crate::error::SolveError;
use crate::graph_forms::{
    cell_energies, cell_energies_two, energy, energy_two, harmonic_extend, DiscreteFunction,
    EnergyModel,
};
use crate::structure::{address_string, Word};

/// Nonnegative mass per level-n cell (lexicographic word order).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellMeasure {
    pub level: usize,
    pub mass: Vec<f64>,
}

/// Real-valued mass per level-n cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignedCellMeasure {
    pub level: usize,
    pub mass: Vec<f64>,
}

fn chunk_sums(fine: &[f64], cells: usize) -> Vec<f64> {
    let k = fine.len() / cells;
    fine.chunks(k).map(|c| c.iter().sum()).collect()
}

fn masses_csv(level: usize, alphabet: usize, mass: &[f64]) -> String {
    let mut s = String::from("word,mass\n");
    for (i, m) in mass.iter().enumerate() {
        s.push_str(&format!(
            "{},{}\n",
            Word::from_index(i, level, alphabet),
            m
        ));
    }
    s
}

fn depth_ok(depth: usize, n: usize) -> Result<(), SolveError> {
    if n + 2 > depth {
        return Err(SolveError::InsufficientDepth {
            depth,
            level: n,
            margin: 2,
        });
    }
    Ok(())
}

impl CellMeasure {
    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Masses of the level-m ancestors, m <= level.
    pub fn coarsen(&self, alphabet: usize, m: usize) -> CellMeasure {
        CellMeasure {
            level: m,
            mass: chunk_sums(&self.mass, alphabet.pow(m as u32)),
        }
    }

    pub fn to_csv(&self, alphabet: usize) -> String {
        masses_csv(self.level, alphabet, &self.mass)
    }
}

impl SignedCellMeasure {
    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn to_csv(&self, alphabet: usize) -> String {
        masses_csv(self.level, alphabet, &self.mass)
    }
}

/// Gamma<u>(K_w) for |w| = n, with u given at a deeper level.
pub fn cell_energy_measure(
    model: &EnergyModel,
    u: &DiscreteFunction,
    n: usize,
) -> Result<CellMeasure, SolveError> {
    depth_ok(u.level, n)?;
    let fine = cell_energies(model, u)?;
    Ok(CellMeasure {
        level: n,
        mass: chunk_sums(&fine, model.structure().cell_count(n)),
    })
}

/// Gamma<u; v>(K_w) for |w| = n.
pub fn two_variable_measure(
    model: &EnergyModel,
    u: &DiscreteFunction,
    v: &DiscreteFunction,
    n: usize,
) -> Result<SignedCellMeasure, SolveError> {
    depth_ok(u.level, n)?;
    let fine = cell_energies_two(model, u, v)?;
    Ok(SignedCellMeasure {
        level: n,
        mass: chunk_sums(&fine, model.structure().cell_count(n)),
    })
}

/// Psi(u; phi) = E(u; u phi) - ((p-1)/p)^{p-1} E(|u|^{p/(p-1)}; phi).
pub fn psi_functional(
    model: &EnergyModel,
    u: &DiscreteFunction,
    phi: &DiscreteFunction,
) -> Result<f64, SolveError> {
    let p = model.p();
    let uphi = u.zip(phi, |a, b| a * b);
    let upow = u.map(|a| a.abs().powf(p / (p - 1.0)));
    Ok(energy_two(model, u, &uphi)?
        - ((p - 1.0) / p).powf(p - 1.0) * energy_two(model, &upow, phi)?)
}

/// Bump function of a set of level-m cells: 1 on the set, sum of boundary-harmonic
/// pieces psi_q on cells touching it, 0 elsewhere. Returned at level `depth`.
pub fn bump_function(
    model: &EnergyModel,
    cells: &[usize],
    m: usize,
    depth: usize,
) -> Result<DiscreteFunction, SolveError> {
    if depth < m {
        return Err(SolveError::InsufficientDepth {
            depth,
            level: m,
            margin: 0,
        });
    }
    let s = model.structure();
    let b = s.boundary_size();
    let coarse = s.table(m);
    let fine = s.table(depth);
    let local = s.table(depth - m);
    let sub = local.cell_count();
    let mut inside = vec![false; coarse.vertex_count()];
    let mut member = vec![false; coarse.cell_count()];
    for &w in cells {
        member[w] = true;
        for &v in coarse.cell(w) {
            inside[v as usize] = true;
        }
    }
    let psi: Vec<DiscreteFunction> = (0..b)
        .map(|q| {
            let mut e = vec![0.0; b];
            e[q] = 1.0;
            harmonic_extend(model, &e, depth - m)
        })
        .collect::<Result<_, _>>()?;
    let mut values = vec![0.0; fine.vertex_count()];
    for tau in 0..coarse.cell_count() {
        let corners = coarse.cell(tau);
        let touching: Vec<usize> = (0..b).filter(|&q| inside[corners[q] as usize]).collect();
        if touching.is_empty() {
            continue;
        }
        for v in 0..sub {
            let lc = local.cell(v);
            let gc = fine.cell(tau * sub + v);
            for q in 0..b {
                let val = if member[tau] {
                    1.0
                } else {
                    touching
                        .iter()
                        .map(|&t| psi[t].values[lc[q] as usize])
                        .sum()
                };
                values[gc[q] as usize] = val;
            }
        }
    }
    Ok(DiscreteFunction::new(depth, values))
}

/// Soft indicator of K_w: bump of all level-m descendants of w.
pub fn soft_indicator(
    model: &EnergyModel,
    w: &Word,
    m: usize,
    depth: usize,
) -> Result<DiscreteFunction, SolveError> {
    let n = model.structure().alphabet_size();
    let k = m - w.len();
    let first = w.index(n) * n.pow(k as u32);
    let cells: Vec<usize> = (first..first + n.pow(k as u32)).collect();
    bump_function(model, &cells, m, depth)
}

#[derive(Clone, Debug, Serialize)]
pub struct PsiComparison {
    pub word: String,
    pub depth: usize,
    pub psi: f64,
    pub mass: f64,
    pub relative_gap: f64,
}

/// Psi(u; soft indicator of K_w) against Gamma<u>(K_w), with u the harmonic extension
/// of `boundary` at `depth` and the indicator transition at level depth - 2.
pub fn psi_cell_comparison(
    model: &EnergyModel,
    boundary: &[f64],
    w: &Word,
    depth: usize,
) -> Result<PsiComparison, SolveError> {
    depth_ok(depth, w.len())?;
    let u = harmonic_extend(model, boundary, depth)?;
    let phi = soft_indicator(model, w, depth - 2, depth)?;
    let psi = psi_functional(model, &u, &phi)?;
    let mass = cell_energy_measure(model, &u, w.len())?.mass[w.index(model.structure().alphabet_size())];
    Ok(PsiComparison {
        word: w.to_string(),
        depth,
        psi,
        mass,
        relative_gap: (psi - mass).abs() / mass.abs().max(f64::MIN_POSITIVE),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainRuleReport {
    pub level: usize,
    pub depth: usize,
    pub errors: Vec<f64>,
    pub max_error: f64,
}

/// Compare Gamma<Phi(u)>(K_w) with the integral of |Phi'(u)|^p dGamma<u> over K_w,
/// the latter discretized on the cells of u's level using corner means of u.
pub fn chain_rule_check(
    model: &EnergyModel,
    u: &DiscreteFunction,
    phi: impl Fn(f64) -> f64,
    dphi: impl Fn(f64) -> f64,
    n: usize,
) -> Result<ChainRuleReport, SolveError> {
    depth_ok(u.level, n)?;
    let p = model.p();
    let lhs = cell_energy_measure(model, &u.map(&phi), n)?;
    let fine = cell_energies(model, u)?;
    let table = model.table(u.level);
    let b = table.boundary_size() as f64;
    let weighted: Vec<f64> = fine
        .iter()
        .enumerate()
        .map(|(v, &e)| {
            let mean = table
                .cell(v)
                .iter()
                .map(|&x| u.values[x as usize])
                .sum::<f64>()
                / b;
            dphi(mean).abs().powf(p) * e
        })
        .collect();
    let rhs = chunk_sums(&weighted, lhs.mass.len());
    let errors: Vec<f64> = lhs
        .mass
        .iter()
        .zip(&rhs)
        .map(|(&l, &r)| {
            if l == r {
                0.0
            } else {
                (l - r).abs() / r.abs().max(f64::MIN_POSITIVE)
            }
        })
        .collect();
    let max_error = errors.iter().cloned().fold(0.0, f64::max);
    Ok(ChainRuleReport {
        level: n,
        depth: u.level,
        errors,
        max_error,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalityItem {
    pub item: &'static str,
    pub cells_checked: usize,
    pub cells_skipped: usize,
    pub max_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalityReport {
    pub level: usize,
    pub depth: usize,
    pub items: Vec<LocalityItem>,
    pub notes: Vec<String>,
    pub passed: bool,
}

const LOCALITY_TOL: f64 = 1e-9;

/// Strong locality items (a)-(d) on every level-n cell where the hypotheses hold at
/// the resolution of the inputs (each fine cell constant for the relevant function).
pub fn strong_locality_check(
    model: &EnergyModel,
    u1: &DiscreteFunction,
    u2: &DiscreteFunction,
    v: &DiscreteFunction,
    n: usize,
) -> Result<LocalityReport, SolveError> {
    depth_ok(u1.level, n)?;
    let depth = u1.level;
    let table = model.table(depth);
    let s = model.structure();
    let per = table.cell_count() / s.cell_count(n);
    let constant_on = |f: &DiscreteFunction, fine: usize| {
        let c = table.cell(fine);
        let a = f.values[c[0] as usize];
        let scale = f.sup_norm().max(1.0);
        c.iter()
            .all(|&x| (f.values[x as usize] - a).abs() <= 1e-12 * scale)
    };
    let all_fine = |w: usize, pred: &dyn Fn(usize) -> bool| (w * per..(w + 1) * per).all(pred);
    let diff = u1.zip(u2, |a, b| a - b);
    let sum12v = u1.zip(u2, |a, b| a + b).zip(v, |a, b| a + b);
    let sum1v = u1.zip(v, |a, b| a + b);
    let sum2v = u2.zip(v, |a, b| a + b);
    let sum12 = u1.zip(u2, |a, b| a + b);
    let g = |f: &DiscreteFunction| cell_energy_measure(model, f, n).map(|m| m.mass);
    let g2 = |f: &DiscreteFunction, h: &DiscreteFunction| {
        two_variable_measure(model, f, h, n).map(|m| m.mass)
    };
    let (gu1, gu2) = (g(u1)?, g(u2)?);
    let (g12v, gv, g1v, g2v) = (g(&sum12v)?, g(v)?, g(&sum1v)?, g(&sum2v)?);
    let (t12, t1, t2) = (g2(&sum12, v)?, g2(u1, v)?, g2(u2, v)?);
    let (s1, s2, r1, r2) = (g2(u1, v)?, g2(u2, v)?, g2(v, u1)?, g2(v, u2)?);
    let scale = [
        energy(model, u1)?,
        energy(model, u2)?,
        energy(model, v)?,
        energy(model, &sum12v)?,
    ]
    .iter()
    .cloned()
    .fold(0.0, f64::max)
    .max(f64::MIN_POSITIVE);

    let cells = s.cell_count(n);
    let mut items = Vec::new();
    let mut notes = Vec::new();
    let mut run = |item: &'static str, hyp: &dyn Fn(usize) -> bool, err: &dyn Fn(usize) -> f64| {
        let mut it = LocalityItem {
            item,
            cells_checked: 0,
            cells_skipped: 0,
            max_error: 0.0,
        };
        for w in 0..cells {
            if hyp(w) {
                it.cells_checked += 1;
                it.max_error = it.max_error.max(err(w) / scale);
            } else {
                it.cells_skipped += 1;
            }
        }
        if it.cells_checked == 0 {
            notes.push(format!("({item}) hypothesis holds on no level-{n} cell"));
        }
        items.push(it);
    };
    run(
        "a",
        &|w| all_fine(w, &|f| constant_on(u1, f)),
        &|w| gu1[w].abs(),
    );
    run(
        "b",
        &|w| all_fine(w, &|f| constant_on(&diff, f)),
        &|w| (gu1[w] - gu2[w]).abs(),
    );
    run(
        "c",
        &|w| all_fine(w, &|f| constant_on(u1, f) || constant_on(u2, f)),
        &|w| {
            ((g12v[w] + gv[w]) - (g1v[w] + g2v[w]))
                .abs()
                .max((t12[w] - t1[w] - t2[w]).abs())
        },
    );
    run(
        "d",
        &|w| all_fine(w, &|f| constant_on(&diff, f) || constant_on(v, f)),
        &|w| (s1[w] - s2[w]).abs().max((r1[w] - r2[w]).abs()),
    );
    let passed = items.iter().all(|i| i.max_error <= LOCALITY_TOL);
    Ok(LocalityReport {
        level: n,
        depth,
        items,
        notes,
        passed,
    })
}

/// Word labels of level-n cells, for exports.
pub fn cell_labels(alphabet: usize, n: usize) -> Vec<String> {
    (0..alphabet.pow(n as u32))
        .map(|i| address_string(Word::from_index(i, n, alphabet).letters()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_masses_at_level_one() {
        let m = EnergyModel::sierpinski_p2();
        let u = harmonic_extend(&m, &[1.0, 0.0, 0.0], 3).unwrap();
        let mu = cell_energy_measure(&m, &u, 1).unwrap();
        let e = energy(&m, &u).unwrap();
        assert!((mu.total() - e).abs() < 1e-12);
        assert!(mu.mass[0] > mu.mass[1] && mu.mass[0] > mu.mass[2]);
        assert!(cell_energy_measure(&m, &u, 2).is_err());
    }

    #[test]
    fn psi_with_unit_test_function_is_energy() {
        let m = EnergyModel::sierpinski_p2();
        let u = harmonic_extend(&m, &[0.2, -1.0, 0.7], 3).unwrap();
        let one = DiscreteFunction::constant(&m.table(3), 1.0);
        let e = energy(&m, &u).unwrap();
        assert!((psi_functional(&m, &u, &one).unwrap() - e).abs() < 1e-12 * e);
    }

    #[test]
    fn bump_is_one_on_its_cell_and_zero_far_away() {
        let m = EnergyModel::sierpinski_p2();
        let f = bump_function(&m, &[0], 2, 4).unwrap();
        let t = m.table(4);
        for &x in t.cell(0) {
            assert_eq!(f.values[x as usize], 1.0);
        }
        // cell 22.. is disjoint from K_00 and its neighbours
        for &x in t.cell(t.cell_count() - 1) {
            assert_eq!(f.values[x as usize], 0.0);
        }
    }
}
