//! p-resistance metric and the geometry checks built on it.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::SolveError;
use crate::graph_forms::solver::Terms;
use crate::graph_forms::{capacity, energy, cell_energies, BoundaryForm, DiscreteFunction, EnergyModel};
use crate::measures::bump_function;
use crate::renorm::similarity_dimension;
use crate::structure::{partition_scale, scale_prefix_len, stream_rng, SelfSimilarMeasure, Word};

/// Largest vertex set for which dense tables are built by pairwise solves.
pub const DENSE_PAIRWISE_LIMIT: usize = 400;

/// R(x, y) = 1 / cap({x}, {y}) at level n.
pub fn resistance(model: &EnergyModel, n: usize, x: usize, y: usize) -> Result<f64, SolveError> {
    if x == y {
        return Ok(0.0);
    }
    Ok(1.0 / capacity(model, n, &[x], &[y])?)
}

/// Dense all-pairs resistances on V_n.
#[derive(Clone, Debug)]
pub struct ResistanceTable {
    pub level: usize,
    pub p: f64,
    pub count: usize,
    values: Vec<f64>,
}

impl ResistanceTable {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.count + y]
    }

    pub fn r_hat(&self, x: usize, y: usize) -> f64 {
        self.get(x, y).powf(1.0 / (self.p - 1.0))
    }

    /// R_hat(x, .) for every vertex.
    pub fn r_hat_row(&self, x: usize) -> Vec<f64> {
        self.values[x * self.count..(x + 1) * self.count]
            .iter()
            .map(|r| r.powf(1.0 / (self.p - 1.0)))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id_x,id_y,R,R_hat\n");
        for x in 0..self.count {
            for y in x + 1..self.count {
                s.push_str(&format!("{},{},{},{}\n", x, y, self.get(x, y), self.r_hat(x, y)));
            }
        }
        s
    }

    /// Largest R_hat(x,z) - R_hat(x,y) - R_hat(y,z) over random triples.
    pub fn triangle_violation(&self, triples: usize, seed: u64) -> TriangleReport {
        let chunk = 1024;
        let batches = triples.div_ceil(chunk);
        let results: Vec<(f64, [usize; 3])> = (0..batches)
            .into_par_iter()
            .map(|b| {
                let mut rng = stream_rng(seed, b as u64);
                let mut worst = (f64::NEG_INFINITY, [0; 3]);
                for _ in 0..chunk.min(triples - b * chunk) {
                    let t = [
                        rng.gen_range(0..self.count),
                        rng.gen_range(0..self.count),
                        rng.gen_range(0..self.count),
                    ];
                    let v = self.r_hat(t[0], t[2]) - self.r_hat(t[0], t[1]) - self.r_hat(t[1], t[2]);
                    if v > worst.0 {
                        worst = (v, t);
                    }
                }
                worst
            })
            .collect();
        let worst = results
            .into_iter()
            .fold((f64::NEG_INFINITY, [0; 3]), |a, b| if b.0 > a.0 { b } else { a });
        TriangleReport {
            triples,
            seed,
            max_violation: worst.0.max(0.0),
            witness: worst.1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TriangleReport {
    pub triples: usize,
    pub seed: u64,
    pub max_violation: f64,
    pub witness: [usize; 3],
}

/// All-pairs table at level n. Quadratic graph forms use the Laplacian
/// pseudo-inverse; otherwise pairwise capacity solves, limited to small vertex sets.
pub fn resistance_table(model: &EnergyModel, n: usize) -> Result<ResistanceTable, SolveError> {
    let count = model.table(n).vertex_count();
    if model.p() == 2.0 {
        if let BoundaryForm::Graph(_) = model.form() {
            return laplacian_table(model, n);
        }
    }
    if count > DENSE_PAIRWISE_LIMIT {
        return Err(SolveError::Invalid(format!(
            "{count} vertices exceed the dense pairwise limit {DENSE_PAIRWISE_LIMIT}"
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..count)
        .flat_map(|x| (x + 1..count).map(move |y| (x, y)))
        .collect();
    let rs: Vec<f64> = pairs
        .par_iter()
        .map(|&(x, y)| resistance(model, n, x, y))
        .collect::<Result<_, _>>()?;
    let mut values = vec![0.0; count * count];
    for (&(x, y), r) in pairs.iter().zip(rs) {
        values[x * count + y] = r;
        values[y * count + x] = r;
    }
    Ok(ResistanceTable {
        level: n,
        p: model.p(),
        count,
        values,
    })
}

fn laplacian_table(model: &EnergyModel, n: usize) -> Result<ResistanceTable, SolveError> {
    let problem = model.problem(n);
    let count = problem.n;
    let shift = 1.0 / count as f64;
    let mut l = DMatrix::from_element(count, count, shift);
    if let Terms::Edges { a, b, c } = &problem.terms {
        for k in 0..a.len() {
            let (i, j, w) = (a[k] as usize, b[k] as usize, c[k]);
            l[(i, i)] += w;
            l[(j, j)] += w;
            l[(i, j)] -= w;
            l[(j, i)] -= w;
        }
    }
    let g = l
        .cholesky()
        .ok_or_else(|| SolveError::Invalid("Laplacian is not connected".into()))?
        .inverse();
    let mut values = vec![0.0; count * count];
    for x in 0..count {
        for y in x + 1..count {
            let r = (g[(x, x)] + g[(y, y)] - 2.0 * g[(x, y)]).max(0.0);
            values[x * count + y] = r;
            values[y * count + x] = r;
        }
    }
    Ok(ResistanceTable {
        level: n,
        p: 2.0,
        count,
        values,
    })
}

/// Level-n ids of the level-(n-k) vertices mapped by F_w, |w| = k.
pub fn image_ids(model: &EnergyModel, w: &Word, n: usize) -> Vec<usize> {
    let s = model.structure();
    let k = w.len();
    let local = s.table(n - k);
    let global = s.table(n);
    let sub = local.cell_count();
    let base = w.index(s.alphabet_size()) * sub;
    let mut map = vec![usize::MAX; local.vertex_count()];
    for v in 0..sub {
        for (&l, &g) in local.cell(v).iter().zip(global.cell(base + v)) {
            map[l as usize] = g as usize;
        }
    }
    map
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingWitness {
    pub word: String,
    pub x: usize,
    pub y: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingReport {
    pub pairs_checked: usize,
    pub max_violation: f64,
    pub witness: Option<ScalingWitness>,
}

/// R(F_w x, F_w y) <= rho_w^{-1} R(x, y) for every word of length 1..=k_max and
/// sampled pairs of V_{n-|w|}, both sides read from one level-n table.
pub fn scaling_check(
    model: &EnergyModel,
    table: &ResistanceTable,
    k_max: usize,
    pairs_per_word: usize,
    seed: u64,
) -> ScalingReport {
    let s = model.structure();
    let n = table.level;
    let mut report = ScalingReport {
        pairs_checked: 0,
        max_violation: 0.0,
        witness: None,
    };
    let mut worst = f64::NEG_INFINITY;
    let mut stream = 0u64;
    for k in 1..=k_max.min(n) {
        let local_count = s.table(n - k).vertex_count();
        for wi in 0..s.cell_count(k) {
            let w = Word::from_index(wi, k, s.alphabet_size());
            let map = image_ids(model, &w, n);
            let rho_w = model.word_weight(w.letters());
            let mut rng = stream_rng(seed, stream);
            stream += 1;
            let mut pairs: Vec<(usize, usize)> = (0..s.boundary_size())
                .flat_map(|a| (a + 1..s.boundary_size()).map(move |b| (a, b)))
                .collect();
            for _ in 0..pairs_per_word {
                let x = rng.gen_range(0..local_count);
                let y = rng.gen_range(0..local_count);
                if x != y {
                    pairs.push((x, y));
                }
            }
            for (x, y) in pairs {
                let lhs = table.get(map[x], map[y]);
                let rhs = table.get(x, y) / rho_w;
                report.pairs_checked += 1;
                let v = lhs - rhs;
                if v > worst {
                    worst = v;
                    report.witness = Some(ScalingWitness {
                        word: w.to_string(),
                        x,
                        y,
                        lhs,
                        rhs,
                    });
                }
            }
        }
    }
    report.max_violation = worst.max(0.0);
    report
}

#[derive(Clone, Debug, Serialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_band: f64,
    pub pairs: usize,
    pub decades: f64,
}

/// Least-squares line through (log x, log y).
pub fn log_log_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let band = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).abs())
        .fold(0.0, f64::max);
    (slope, intercept, band)
}

/// Pairs of corners of level-j cells for j = 0..n (up to `per_level` cells each).
pub fn stratified_corner_pairs(
    model: &EnergyModel,
    n: usize,
    per_level: usize,
    seed: u64,
) -> Vec<(usize, usize)> {
    let s = model.structure();
    let b = s.boundary_size();
    let mut pairs = Vec::new();
    for j in 0..=n {
        let t = s.table(j);
        let mut rng = stream_rng(seed, j as u64);
        let cells: Vec<usize> = if t.cell_count() <= per_level {
            (0..t.cell_count()).collect()
        } else {
            (0..per_level).map(|_| rng.gen_range(0..t.cell_count())).collect()
        };
        for w in cells {
            let a = rng.gen_range(0..b);
            let c = (a + 1 + rng.gen_range(0..b - 1)) % b;
            pairs.push((t.cell(w)[a] as usize, t.cell(w)[c] as usize));
        }
    }
    pairs
}

/// Slope of log R against log of the Euclidean distance over the given pairs.
pub fn metric_exponent_fit(
    model: &EnergyModel,
    n: usize,
    pairs: &[(usize, usize)],
    table: Option<&ResistanceTable>,
) -> Result<ExponentFit, SolveError> {
    let t = model.table(n);
    let coords = t
        .coords()
        .ok_or_else(|| SolveError::Invalid("structure has no geometry".into()))?;
    let dist = |x: usize, y: usize| {
        let (a, b) = (coords[x], coords[y]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    };
    let ds: Vec<f64> = pairs.iter().map(|&(x, y)| dist(x, y)).collect();
    let (lo, hi) = ds
        .iter()
        .fold((f64::INFINITY, 0.0f64), |a, &d| (a.0.min(d), a.1.max(d)));
    let decades = (hi / lo).log10();
    if !(decades >= 1.5) {
        return Err(SolveError::Invalid(format!(
            "pairs span {decades:.2} decades of distance, need at least 1.5"
        )));
    }
    let rs: Vec<f64> = match table {
        Some(tab) => pairs.iter().map(|&(x, y)| tab.get(x, y)).collect(),
        None => pairs
            .par_iter()
            .map(|&(x, y)| resistance(model, n, x, y))
            .collect::<Result<_, _>>()?,
    };
    let pts: Vec<(f64, f64)> = ds.into_iter().zip(rs).collect();
    let (slope, intercept, residual_band) = log_log_fit(&pts);
    Ok(ExponentFit {
        slope,
        intercept,
        residual_band,
        pairs: pairs.len(),
        decades,
    })
}

/// d_{f,p} from the model weights.
pub fn resistance_dimension(model: &EnergyModel) -> Result<f64, SolveError> {
    let p = model.p();
    similarity_dimension(
        &model
            .rho()
            .iter()
            .map(|r| r.powf(-1.0 / (p - 1.0)))
            .collect::<Vec<_>>(),
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct AhlforsRow {
    pub center: usize,
    pub s: f64,
    pub mass: f64,
    pub ratio: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AhlforsReport {
    pub d_fp: f64,
    pub resolution: f64,
    pub rows: Vec<AhlforsRow>,
    pub band_min: f64,
    pub band_max: f64,
    pub band_ratio: f64,
}

/// Mass of R_hat balls from a dense table: level-n cells weighted by the fraction
/// of their corners inside the ball.
pub fn ahlfors_check(
    model: &EnergyModel,
    table: &ResistanceTable,
    measure: &SelfSimilarMeasure,
    centers: usize,
    s_grid: &[f64],
    seed: u64,
) -> Result<AhlforsReport, SolveError> {
    let d_fp = resistance_dimension(model)?;
    let n = table.level;
    let t = model.table(n);
    let masses = measure.level_masses(n);
    let resolution = (0..t.cell_count())
        .map(|w| {
            let c = t.cell(w);
            let mut m: f64 = 0.0;
            for i in 0..c.len() {
                for j in i + 1..c.len() {
                    m = m.max(table.r_hat(c[i] as usize, c[j] as usize));
                }
            }
            m
        })
        .fold(0.0, f64::max);
    let mut rng = stream_rng(seed, 0);
    let picks: Vec<usize> = (0..centers).map(|_| rng.gen_range(0..table.count)).collect();
    let b = t.boundary_size() as f64;
    let mut rows = Vec::new();
    for &x in &picks {
        let row = table.r_hat_row(x);
        for &s in s_grid {
            let mass: f64 = (0..t.cell_count())
                .map(|w| {
                    let inside = t.cell(w).iter().filter(|&&v| row[v as usize] < s).count();
                    masses[w] * inside as f64 / b
                })
                .sum();
            rows.push(AhlforsRow {
                center: x,
                s,
                mass,
                ratio: mass / s.powf(d_fp),
                flagged: s < 2.0 * resolution,
            });
        }
    }
    let ok: Vec<f64> = rows.iter().filter(|r| !r.flagged).map(|r| r.ratio).collect();
    let band_min = ok.iter().cloned().fold(f64::INFINITY, f64::min);
    let band_max = ok.iter().cloned().fold(0.0, f64::max);
    Ok(AhlforsReport {
        d_fp,
        resolution,
        rows,
        band_min,
        band_max,
        band_ratio: band_max / band_min,
    })
}

/// Level-n cells making up U_1(x, s): the cells of Lambda_s meeting the cell of
/// Lambda_s that contains the address x.
pub fn neighborhood_cells(
    model: &EnergyModel,
    address: &[u8],
    s: f64,
    n: usize,
) -> Result<Vec<bool>, SolveError> {
    let st = model.structure();
    let (rho, p) = (model.rho(), model.p());
    let k = scale_prefix_len(rho, p, s, address)
        .ok_or_else(|| SolveError::Invalid("address too short for scale".into()))?;
    if k > n {
        return Err(SolveError::InsufficientDepth {
            depth: n,
            level: k,
            margin: 0,
        });
    }
    let t = model.table(n);
    let alphabet = st.alphabet_size();
    let span = |len: usize| alphabet.pow((n - len) as u32);
    let home = Word::new(address[..k].to_vec(), alphabet).map_err(|e| SolveError::Invalid(e.to_string()))?;
    let first = home.index(alphabet) * span(k);
    let mut touch = vec![false; t.vertex_count()];
    for v in first..first + span(k) {
        for &x in t.cell(v) {
            touch[x as usize] = true;
        }
    }
    let mut out = vec![false; t.cell_count()];
    for w in partition_scale(rho, p, s) {
        if w.len() > n {
            return Err(SolveError::InsufficientDepth {
                depth: n,
                level: w.len(),
                margin: 0,
            });
        }
        let start = w.index(alphabet) * span(w.len());
        let range = start..start + span(w.len());
        if range
            .clone()
            .any(|v| t.cell(v).iter().any(|&x| touch[x as usize]))
        {
            range.for_each(|v| out[v] = true);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct CapacityProfile {
    pub s: Vec<f64>,
    pub levels: Vec<usize>,
    pub energies: Vec<f64>,
    pub fitted_exponent: f64,
}

/// Energy of the max-of-bumps cutoff around the vertex F_w(q_corner), over the
/// cells of Lambda_s containing it; the cutoff is built on the level of the cells.
pub fn capacity_profile(
    model: &EnergyModel,
    w: &Word,
    corner: usize,
    s_grid: &[f64],
) -> Result<CapacityProfile, SolveError> {
    let st = model.structure();
    let (rho, p) = (model.rho(), model.p());
    let top = w.len();
    let ttop = st.table(top);
    let x = ttop.id(w.letters(), corner);
    let incident = &ttop.incidence()[x];
    let alphabet = st.alphabet_size();
    let (mut levels, mut energies) = (Vec::new(), Vec::new());
    for &s in s_grid {
        let k = scale_prefix_len(rho, p, s, w.letters()).ok_or_else(|| {
            SolveError::Invalid(format!("scale {s} is finer than the word {w}"))
        })?;
        let span = alphabet.pow((top - k) as u32);
        let mut cells: Vec<usize> = incident.iter().map(|&c| c as usize / span).collect();
        cells.sort_unstable();
        cells.dedup();
        let mut phi: Option<DiscreteFunction> = None;
        for c in cells {
            let b = bump_function(model, &[c], k, k)?;
            phi = Some(match phi {
                None => b,
                Some(f) => f.zip(&b, f64::max),
            });
        }
        let phi = phi.expect("vertex lies in a cell");
        levels.push(k);
        energies.push(energy(model, &phi)?);
    }
    // the global cutoff at scale >= 1 is constant and carries no energy
    let pts: Vec<(f64, f64)> = s_grid
        .iter()
        .cloned()
        .zip(energies.iter().cloned())
        .filter(|p| p.1 > 0.0)
        .collect();
    let fitted_exponent = if pts.len() >= 2 { log_log_fit(&pts).0 } else { f64::NAN };
    Ok(CapacityProfile {
        s: s_grid.to_vec(),
        levels,
        energies,
        fitted_exponent,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PoincareReport {
    pub level: usize,
    pub inflation: f64,
    pub balls: usize,
    pub skipped: usize,
    pub sup_ratio: f64,
    pub argmax: Option<(usize, usize)>,
}

/// A ball of the Poincare check: centre address and radius.
#[derive(Clone, Debug)]
pub struct Ball {
    pub address: Vec<u8>,
    pub s: f64,
}

/// Random balls whose Lambda_s cells sit between levels `k_min` and `k_max`.
pub fn sample_balls(model: &EnergyModel, count: usize, k_min: usize, k_max: usize, seed: u64) -> Vec<Ball> {
    let alphabet = model.structure().alphabet_size();
    let p = model.p();
    let g = model.rho().iter().map(|r| r.powf(-1.0 / (p - 1.0))).fold(0.0, f64::max);
    let mut rng = stream_rng(seed, 0);
    (0..count)
        .map(|_| {
            let address: Vec<u8> = (0..64).map(|_| rng.gen_range(0..alphabet) as u8).collect();
            let k = rng.gen_range(k_min..=k_max) as f64;
            let s = g.powf(k + rng.gen_range(0.0..1.0));
            Ball { address, s }
        })
        .collect()
}

/// sup over (u, ball) of int_B |u - u_B|^p dm / (s^{d_fp + p - 1} Gamma<u>(U_1(x, A s))),
/// with balls replaced by Lambda_s neighbourhoods at level `n`.
pub fn poincare_check(
    model: &EnergyModel,
    measure: &SelfSimilarMeasure,
    us: &[DiscreteFunction],
    balls: &[Ball],
    inflation: f64,
) -> Result<PoincareReport, SolveError> {
    let p = model.p();
    let d_fp = resistance_dimension(model)?;
    let n = us
        .first()
        .map(|u| u.level)
        .ok_or_else(|| SolveError::Invalid("no test functions".into()))?;
    let t = model.table(n);
    let masses = measure.level_masses(n);
    let b = t.boundary_size() as f64;
    let cell_energy: Vec<Vec<f64>> = us
        .iter()
        .map(|u| cell_energies(model, u))
        .collect::<Result<_, _>>()?;
    let means: Vec<Vec<f64>> = us
        .iter()
        .map(|u| {
            (0..t.cell_count())
                .map(|w| t.cell(w).iter().map(|&x| u.values[x as usize]).sum::<f64>() / b)
                .collect()
        })
        .collect();
    let mut report = PoincareReport {
        level: n,
        inflation,
        balls: balls.len(),
        skipped: 0,
        sup_ratio: 0.0,
        argmax: None,
    };
    for (bi, ball) in balls.iter().enumerate() {
        let inner = neighborhood_cells(model, &ball.address, ball.s, n)?;
        let outer = neighborhood_cells(model, &ball.address, inflation * ball.s, n)?;
        let mb: f64 = (0..inner.len()).filter(|&w| inner[w]).map(|w| masses[w]).sum();
        for ui in 0..us.len() {
            let avg: f64 = (0..inner.len())
                .filter(|&w| inner[w])
                .map(|w| masses[w] * means[ui][w])
                .sum::<f64>()
                / mb;
            let var: f64 = (0..inner.len())
                .filter(|&w| inner[w])
                .map(|w| masses[w] * (means[ui][w] - avg).abs().powf(p))
                .sum();
            let gamma: f64 = (0..outer.len())
                .filter(|&w| outer[w])
                .map(|w| cell_energy[ui][w])
                .sum();
            if gamma == 0.0 {
                if var == 0.0 {
                    report.skipped += 1;
                    continue;
                }
                report.sup_ratio = f64::INFINITY;
                report.argmax = Some((ui, bi));
                continue;
            }
            let ratio = var / (ball.s.powf(d_fp + p - 1.0) * gamma);
            if ratio > report.sup_ratio {
                report.sup_ratio = ratio;
                report.argmax = Some((ui, bi));
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct Sandwich {
    pub alpha1: f64,
    pub alpha2: f64,
}

/// Measured constants with B(x, alpha1 s) inside U_1(x, s) inside B(x, alpha2 s),
/// for x the vertex F_w(q0) of each ball's home cell.
pub fn neighborhood_sandwich(
    model: &EnergyModel,
    table: &ResistanceTable,
    balls: &[Ball],
) -> Result<Sandwich, SolveError> {
    let n = table.level;
    let t = model.table(n);
    let alphabet = model.structure().alphabet_size();
    let (mut a1, mut a2) = (f64::INFINITY, 0.0f64);
    for ball in balls {
        let cells = neighborhood_cells(model, &ball.address, ball.s, n)?;
        let x = t.cell(Word::new(ball.address[..n].to_vec(), alphabet)
            .map_err(|e| SolveError::Invalid(e.to_string()))?
            .index(alphabet))[0] as usize;
        let row = table.r_hat_row(x);
        let mut inside = vec![false; t.vertex_count()];
        for (w, &c) in cells.iter().enumerate() {
            if c {
                t.cell(w).iter().for_each(|&v| inside[v as usize] = true);
            }
        }
        for (v, &r) in row.iter().enumerate() {
            if inside[v] {
                a2 = a2.max(r / ball.s);
            } else {
                a1 = a1.min(r / ball.s);
            }
        }
    }
    Ok(Sandwich {
        alpha1: a1,
        alpha2: a2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_resistance_is_two_thirds() {
        let m = EnergyModel::sierpinski_p2();
        assert!((resistance(&m, 0, 0, 1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((resistance(&m, 1, 0, 1).unwrap() - 2.0 / 3.0).abs() < 1e-8);
        assert_eq!(resistance(&m, 1, 2, 2).unwrap(), 0.0);
    }

    #[test]
    fn laplacian_table_matches_capacity() {
        let m = EnergyModel::sierpinski_p2();
        let t = resistance_table(&m, 2).unwrap();
        for (x, y) in [(0, 1), (3, 7), (5, 14)] {
            let r = resistance(&m, 2, x, y).unwrap();
            assert!((t.get(x, y) - r).abs() < 1e-9 * r);
        }
    }
}
