//! Monte Carlo Besov functionals J_{p,r}^k(f) = int int |f(x) - f(y)|^p k_r(x, y) dm dm.
//!
//! Pairs (x, y) are drawn with x from a sample cloud and y from m restricted to
//! B_d(x, r); the ball-mass normalization of the ball kernels then cancels. All
//! functions and exponents evaluated on one [`PairSet`] share the same pairs, so
//! pointwise kernel inequalities hold exactly for the estimates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::SolveError;
use crate::graph_forms::boundary::signed_pow;
use crate::graph_forms::{dirichlet_solve, harmonic_extend, DiscreteFunction, EnergyModel};
use crate::metric::{log_log_fit, ResistanceTable};
use crate::structure::{stream_rng, word_index, PcfStructure, SampleCloud, SelfSimilarMeasure};

/// Number of batches used for sampling streams and batch-means standard errors.
pub const BATCHES: usize = 20;

/// A point given by its address, with planar coordinates when available.
#[derive(Clone, Debug)]
pub struct Located {
    pub address: Vec<u8>,
    pub xy: Option<[f64; 2]>,
}

pub trait BesovMetric: Sync {
    fn name(&self) -> &'static str;
    fn locate(&self, address: &[u8]) -> Located;
    fn distance(&self, a: &Located, b: &Located) -> f64;
    /// Lower and upper bounds of d(x, y) over y in K_w.
    fn cell_bounds(&self, x: &Located, w: &[u8]) -> (f64, f64);
    /// Upper bound on the diameter of K_w.
    fn cell_diameter(&self, w: &[u8]) -> f64;
}

/// Planar Euclidean distance; cells are bounded by discs around F_w(centroid).
#[derive(Clone, Debug)]
pub struct EuclideanMetric {
    structure: PcfStructure,
    ratios: Vec<f64>,
    radius: f64,
}

impl EuclideanMetric {
    pub fn new(structure: &PcfStructure) -> Result<Self, SolveError> {
        let bc = structure
            .boundary_coords()
            .ok_or_else(|| SolveError::Invalid("Euclidean metric needs geometry".into()))?;
        let k = bc.len() as f64;
        let c = [
            bc.iter().map(|p| p[0]).sum::<f64>() / k,
            bc.iter().map(|p| p[1]).sum::<f64>() / k,
        ];
        let radius = bc
            .iter()
            .map(|p| (p[0] - c[0]).hypot(p[1] - c[1]))
            .fold(0.0, f64::max);
        let ratios = (0..structure.alphabet_size())
            .map(|i| structure.contraction_ratio(i).expect("geometry present"))
            .collect();
        Ok(EuclideanMetric {
            structure: structure.clone(),
            ratios,
            radius,
        })
    }

    fn ratio(&self, w: &[u8]) -> f64 {
        w.iter().map(|&l| self.ratios[l as usize]).product()
    }
}

impl BesovMetric for EuclideanMetric {
    fn name(&self) -> &'static str {
        "euclidean"
    }

    fn locate(&self, address: &[u8]) -> Located {
        Located {
            address: address.to_vec(),
            xy: self.structure.address_point(address),
        }
    }

    fn distance(&self, a: &Located, b: &Located) -> f64 {
        let (p, q) = (a.xy.expect("located"), b.xy.expect("located"));
        (p[0] - q[0]).hypot(p[1] - q[1])
    }

    fn cell_bounds(&self, x: &Located, w: &[u8]) -> (f64, f64) {
        let c = self.structure.address_point(w).expect("geometry present");
        let p = x.xy.expect("located");
        let d = (p[0] - c[0]).hypot(p[1] - c[1]);
        let rad = self.radius * self.ratio(w);
        ((d - rad).max(0.0), d + rad)
    }

    fn cell_diameter(&self, w: &[u8]) -> f64 {
        2.0 * self.radius * self.ratio(w)
    }
}

/// Approximate R_hat_p metric: self-similar scaling inside a common cell, and a
/// level-n table lookup between the corners nearest to each point.
#[derive(Clone, Debug)]
pub struct ResistanceMetric {
    structure: PcfStructure,
    scale: Vec<f64>,
    table: ResistanceTable,
    corner_of_letter: Vec<usize>,
    diameter: f64,
}

impl ResistanceMetric {
    pub fn new(model: &EnergyModel, table: ResistanceTable) -> Self {
        let p = model.p();
        let s = model.structure();
        let diameter = (0..table.count)
            .flat_map(|x| (0..table.count).map(move |y| (x, y)))
            .map(|(x, y)| table.r_hat(x, y))
            .fold(0.0, f64::max);
        ResistanceMetric {
            structure: s.clone(),
            scale: model.rho().iter().map(|r| r.powf(-1.0 / (p - 1.0))).collect(),
            corner_of_letter: (0..s.alphabet_size()).map(|i| s.corner_for_letter(i)).collect(),
            table,
            diameter,
        }
    }

    pub fn level(&self) -> usize {
        self.table.level
    }

    fn vertex(&self, a: &[u8]) -> usize {
        let n = self.table.level;
        let t = self.structure.table(n);
        let cell = word_index(&a[..n], self.structure.alphabet_size());
        let q = a.get(n).map_or(0, |&l| self.corner_of_letter[l as usize]);
        t.cell(cell)[q] as usize
    }

    fn dist_addr(&self, a: &[u8], b: &[u8]) -> f64 {
        let n = self.table.level;
        let k = a.iter().zip(b).take_while(|(x, y)| x == y).count();
        if k == a.len().min(b.len()) {
            return 0.0;
        }
        if k >= n {
            let sc: f64 = a[..k].iter().map(|&l| self.scale[l as usize]).product();
            return sc * self.dist_addr(&a[k..], &b[k..]);
        }
        // finite addresses stand for the 0-corner of their cell
        let pad = |x: &[u8]| {
            let mut v = x.to_vec();
            v.resize(v.len().max(2 * n + 1), 0);
            v
        };
        let (a, b) = (pad(a), pad(b));
        // shortest route through the corners of the two level-n cells
        let t = self.structure.table(n);
        let alphabet = self.structure.alphabet_size();
        let ca = t.cell(word_index(&a[..n], alphabet));
        let cb = t.cell(word_index(&b[..n], alphabet));
        let sa: f64 = a[..n].iter().map(|&l| self.scale[l as usize]).product();
        let sb: f64 = b[..n].iter().map(|&l| self.scale[l as usize]).product();
        let (va, vb) = (self.vertex(&a[n..]), self.vertex(&b[n..]));
        let mut best = f64::INFINITY;
        for (q, &x) in ca.iter().enumerate() {
            let da = sa * self.table.r_hat(va, q);
            for (q2, &y) in cb.iter().enumerate() {
                let d = da + self.table.r_hat(x as usize, y as usize) + sb * self.table.r_hat(vb, q2);
                best = best.min(d);
            }
        }
        best
    }

    fn corner_address(&self, w: &[u8]) -> Vec<u8> {
        let mut a = w.to_vec();
        a.extend(std::iter::repeat(0u8).take(self.table.level + 1));
        a
    }
}

impl BesovMetric for ResistanceMetric {
    fn name(&self) -> &'static str {
        "resistance"
    }

    fn locate(&self, address: &[u8]) -> Located {
        Located {
            address: address.to_vec(),
            xy: None,
        }
    }

    fn distance(&self, a: &Located, b: &Located) -> f64 {
        self.dist_addr(&a.address, &b.address)
    }

    fn cell_bounds(&self, x: &Located, w: &[u8]) -> (f64, f64) {
        let diam = self.cell_diameter(w);
        if x.address.starts_with(w) {
            return (0.0, diam);
        }
        // corner routes overestimate, so the lower bound keeps a wide margin
        let d = self.dist_addr(&x.address, &self.corner_address(w));
        ((d - 3.0 * diam).max(0.0), d + diam)
    }

    fn cell_diameter(&self, w: &[u8]) -> f64 {
        w.iter().map(|&l| self.scale[l as usize]).product::<f64>() * self.diameter
    }
}

/// A function that can be evaluated at (truncated) addresses.
pub trait Evaluable: Sync {
    fn eval(&self, address: &[u8]) -> f64;
}

/// Closed-form function of planar coordinates.
pub struct PointFunction<F: Fn([f64; 2]) -> f64 + Sync> {
    structure: PcfStructure,
    f: F,
}

impl<F: Fn([f64; 2]) -> f64 + Sync> PointFunction<F> {
    pub fn new(structure: &PcfStructure, f: F) -> Self {
        PointFunction {
            structure: structure.clone(),
            f,
        }
    }
}

impl<F: Fn([f64; 2]) -> f64 + Sync> Evaluable for PointFunction<F> {
    fn eval(&self, address: &[u8]) -> f64 {
        (self.f)(self.structure.address_point(address).expect("geometry present"))
    }
}

/// A DiscreteFunction extended to arbitrary addresses by harmonic fill-in. For
/// p = 2 the fill-in is the linear level-1 harmonic map applied along the address;
/// otherwise it is a p-harmonic solve down to a fixed fill level, and points take
/// the corner mean of their cell at that level.
#[derive(Clone, Debug)]
pub struct HarmonicFill {
    structure: PcfStructure,
    level: usize,
    values: Vec<f64>,
    maps: Option<Vec<Vec<f64>>>,
}

impl HarmonicFill {
    pub fn new(model: &EnergyModel, f: &DiscreteFunction, fill_level: usize) -> Result<Self, SolveError> {
        let s = model.structure();
        let b = s.boundary_size();
        if model.p() == 2.0 {
            let ext: Vec<DiscreteFunction> = (0..b)
                .map(|q| {
                    let mut e = vec![0.0; b];
                    e[q] = 1.0;
                    harmonic_extend(model, &e, 1)
                })
                .collect::<Result<_, _>>()?;
            let maps = (0..s.alphabet_size())
                .map(|i| {
                    let mut a = vec![0.0; b * b];
                    for q in 0..b {
                        let id = s.level1_id(i, q);
                        for (q2, e) in ext.iter().enumerate() {
                            a[q * b + q2] = e.values[id];
                        }
                    }
                    a
                })
                .collect();
            return Ok(HarmonicFill {
                structure: s.clone(),
                level: f.level,
                values: f.values.clone(),
                maps: Some(maps),
            });
        }
        let level = fill_level.max(f.level);
        let constraints: Vec<(usize, f64)> = f.values.iter().copied().enumerate().collect();
        let filled = dirichlet_solve(model, level, &constraints)?;
        Ok(HarmonicFill {
            structure: s.clone(),
            level,
            values: filled.values,
            maps: None,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }
}

impl Evaluable for HarmonicFill {
    fn eval(&self, address: &[u8]) -> f64 {
        let n = self.level.min(address.len());
        let t = self.structure.table(n);
        let b = t.boundary_size();
        let mut c: Vec<f64> = t
            .cell(word_index(&address[..n], self.structure.alphabet_size()))
            .iter()
            .map(|&v| self.values[v as usize])
            .collect();
        if let Some(maps) = &self.maps {
            let mut next = vec![0.0; b];
            for &l in &address[n..] {
                let a = &maps[l as usize];
                for q in 0..b {
                    next[q] = (0..b).map(|q2| a[q * b + q2] * c[q2]).sum();
                }
                std::mem::swap(&mut c, &mut next);
            }
        }
        c.iter().sum::<f64>() / b as f64
    }
}

/// Pairs (x_i, y_i) with y_i ~ m restricted to B_d(x_i, r).
#[derive(Clone, Debug)]
pub struct PairSet {
    pub r: f64,
    pub depth: usize,
    pub metric: &'static str,
    pub xs: Vec<u32>,
    ys: Vec<u8>,
    pub dists: Vec<f64>,
    pub ball_mass: Option<Vec<f64>>,
    pub batch_ends: Vec<usize>,
    pub rejections: u64,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn y(&self, i: usize) -> &[u8] {
        &self.ys[i * self.depth..(i + 1) * self.depth]
    }
}

/// Pair and ball-mass sampling for one metric and measure.
pub struct PairSampler<'a, M: BesovMetric> {
    pub structure: &'a PcfStructure,
    pub measure: &'a SelfSimilarMeasure,
    pub metric: &'a M,
    /// Extra levels below the candidate scale used for straddling cells in ball masses.
    pub mass_levels: u32,
    /// Monte Carlo points per straddling cell.
    pub mass_points: usize,
}

impl<'a, M: BesovMetric> PairSampler<'a, M> {
    pub fn new(structure: &'a PcfStructure, measure: &'a SelfSimilarMeasure, metric: &'a M) -> Self {
        PairSampler {
            structure,
            measure,
            metric,
            mass_levels: 3,
            mass_points: 16,
        }
    }

    fn candidates(&self, x: &Located, r: f64, depth: usize) -> Vec<(Vec<u8>, f64)> {
        let n = self.structure.alphabet_size() as u8;
        let mut out = Vec::new();
        let mut stack = vec![Vec::new()];
        while let Some(w) = stack.pop() {
            let (lo, _) = self.metric.cell_bounds(x, &w);
            if lo >= r {
                continue;
            }
            if self.metric.cell_diameter(&w) < 0.25 * r || w.len() + 1 >= depth {
                let m = self.measure.cell_mass(&w);
                out.push((w, m));
            } else {
                for l in (0..n).rev() {
                    let mut c = w.clone();
                    c.push(l);
                    stack.push(c);
                }
            }
        }
        out
    }

    fn extend(&self, w: &[u8], depth: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
        let mut a = w.to_vec();
        let weights = self.measure.weights();
        while a.len() < depth {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut letter = weights.len() - 1;
            for (i, &t) in weights.iter().enumerate() {
                acc += t;
                if u < acc {
                    letter = i;
                    break;
                }
            }
            a.push(letter as u8);
        }
        a
    }

    /// m(B_d(x, r)): cells inside the ball counted exactly, straddling cells at
    /// `mass_levels` below the candidate scale estimated by Monte Carlo.
    pub fn ball_mass(&self, x: &Located, r: f64, depth: usize, rng: &mut ChaCha8Rng) -> f64 {
        let n = self.structure.alphabet_size() as u8;
        let stop = 0.25 * r / 2f64.powi(self.mass_levels as i32);
        let mut total = 0.0;
        let mut stack = vec![Vec::new()];
        while let Some(w) = stack.pop() {
            let (lo, hi) = self.metric.cell_bounds(x, &w);
            if lo >= r {
                continue;
            }
            let m = self.measure.cell_mass(&w);
            if hi < r {
                total += m;
            } else if self.metric.cell_diameter(&w) < stop || w.len() + 1 >= depth {
                let inside = (0..self.mass_points)
                    .filter(|_| {
                        let y = self.metric.locate(&self.extend(&w, depth, rng));
                        self.metric.distance(x, &y) < r
                    })
                    .count();
                total += m * inside as f64 / self.mass_points as f64;
            } else {
                for l in (0..n).rev() {
                    let mut c = w.clone();
                    c.push(l);
                    stack.push(c);
                }
            }
        }
        total
    }

    /// `count` pairs at radius r; pair i uses cloud point i mod |cloud|.
    pub fn pairs(&self, cloud: &SampleCloud, r: f64, count: usize, seed: u64, with_mass: bool) -> PairSet {
        let depth = cloud.depth();
        let ends: Vec<usize> = (1..=BATCHES).map(|b| b * count / BATCHES).collect();
        let stream_seed = seed ^ r.to_bits().rotate_left(17);
        type Batch = (Vec<u32>, Vec<u8>, Vec<f64>, Vec<f64>, u64);
        let batches: Vec<Batch> = (0..BATCHES)
            .into_par_iter()
            .map(|b| {
                let start = if b == 0 { 0 } else { ends[b - 1] };
                let mut rng = stream_rng(stream_seed, b as u64);
                let mut out: Batch = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), 0);
                for i in start..ends[b] {
                    let xi = i % cloud.len();
                    let x = self.metric.locate(cloud.address(xi));
                    let cands = self.candidates(&x, r, depth);
                    let total: f64 = cands.iter().map(|c| c.1).sum();
                    loop {
                        let mut u = rng.gen::<f64>() * total;
                        let mut pick = &cands[cands.len() - 1].0;
                        for (w, m) in &cands {
                            if u < *m {
                                pick = w;
                                break;
                            }
                            u -= m;
                        }
                        let ya = self.extend(pick, depth, &mut rng);
                        let y = self.metric.locate(&ya);
                        let d = self.metric.distance(&x, &y);
                        if d < r && d > 0.0 {
                            out.0.push(xi as u32);
                            out.1.extend_from_slice(&ya);
                            out.2.push(d);
                            break;
                        }
                        out.4 += 1;
                    }
                    if with_mass {
                        out.3.push(self.ball_mass(&x, r, depth, &mut rng));
                    }
                }
                out
            })
            .collect();
        let mut set = PairSet {
            r,
            depth,
            metric: self.metric.name(),
            xs: Vec::with_capacity(count),
            ys: Vec::with_capacity(count * depth),
            dists: Vec::with_capacity(count),
            ball_mass: if with_mass { Some(Vec::with_capacity(count)) } else { None },
            batch_ends: ends,
            rejections: 0,
        };
        for (xs, ys, ds, ms, rej) in batches {
            set.xs.extend(xs);
            set.ys.extend(ys);
            set.dists.extend(ds);
            if let Some(m) = set.ball_mass.as_mut() {
                m.extend(ms);
            }
            set.rejections += rej;
        }
        set
    }
}

/// f at both ends of every pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairValues {
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
}

impl PairValues {
    pub fn of(f: &dyn Evaluable, cloud: &SampleCloud, pairs: &PairSet) -> PairValues {
        let fx = pairs
            .xs
            .par_iter()
            .map(|&i| f.eval(cloud.address(i as usize)))
            .collect();
        let fy = (0..pairs.len()).into_par_iter().map(|i| f.eval(pairs.y(i))).collect();
        PairValues { fx, fy }
    }

    /// a f + b g, pointwise.
    pub fn combine(&self, a: f64, other: &PairValues, b: f64) -> PairValues {
        PairValues {
            fx: self.fx.iter().zip(&other.fx).map(|(x, y)| a * x + b * y).collect(),
            fy: self.fy.iter().zip(&other.fy).map(|(x, y)| a * x + b * y).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> PairValues {
        PairValues {
            fx: self.fx.iter().map(|&x| f(x)).collect(),
            fy: self.fy.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip(&self, other: &PairValues, f: impl Fn(f64, f64) -> f64) -> PairValues {
        PairValues {
            fx: self.fx.iter().zip(&other.fx).map(|(&x, &y)| f(x, y)).collect(),
            fy: self.fy.iter().zip(&other.fy).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    fn diff(&self, i: usize) -> f64 {
        self.fx[i] - self.fy[i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum KernelSpec {
    /// 1{d < r} / (r^{ps} m(B(x, r)))
    BallPower { s: f64 },
    /// 1{d < r} / (d^{p s_p} m(B(x, r)))
    DistancePower { s_p: f64 },
    /// Word-averaged kernel of depth n built from r^{-ps-d_f} 1{d < r}.
    Averaged { n: usize, s: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FunctionalEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    pub r: f64,
    /// Set when the pair set is empty (radius below resolution).
    pub flagged: bool,
}

fn batch_mean(terms: &[f64], ends: &[usize], r: f64) -> FunctionalEstimate {
    if terms.is_empty() {
        return FunctionalEstimate {
            value: 0.0,
            std_error: 0.0,
            samples: 0,
            r,
            flagged: true,
        };
    }
    let mut means = Vec::with_capacity(ends.len());
    let mut start = 0;
    for &e in ends {
        if e > start {
            means.push(terms[start..e].iter().sum::<f64>() / (e - start) as f64);
        }
        start = e;
    }
    let value = terms.iter().sum::<f64>() / terms.len() as f64;
    let k = means.len() as f64;
    let std_error = if means.len() > 1 {
        let mm = means.iter().sum::<f64>() / k;
        (means.iter().map(|m| (m - mm).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
    } else {
        0.0
    };
    FunctionalEstimate {
        value,
        std_error,
        samples: terms.len(),
        r,
        flagged: false,
    }
}

fn kernel_weight(kernel: &KernelSpec, p: f64, r: f64, d: f64) -> Result<f64, SolveError> {
    match *kernel {
        KernelSpec::BallPower { s } => Ok(r.powf(-p * s)),
        KernelSpec::DistancePower { s_p } => Ok(d.powf(-p * s_p)),
        KernelSpec::Averaged { .. } => Err(SolveError::Invalid(
            "averaged kernels are evaluated with eval_averaged".into(),
        )),
    }
}

/// J_{p,r}^k(f) from precomputed pair values.
pub fn estimate_j(
    kernel: &KernelSpec,
    p: f64,
    f: &PairValues,
    pairs: &PairSet,
) -> Result<FunctionalEstimate, SolveError> {
    let terms: Vec<f64> = (0..pairs.len())
        .map(|i| Ok(f.diff(i).abs().powf(p) * kernel_weight(kernel, p, pairs.r, pairs.dists[i])?))
        .collect::<Result<_, SolveError>>()?;
    Ok(batch_mean(&terms, &pairs.batch_ends, pairs.r))
}

/// Two-variable functional: int int gamma_p(f(x) - f(y)) (g(x) - g(y)) k_r dm dm.
pub fn estimate_j_two(
    kernel: &KernelSpec,
    p: f64,
    f: &PairValues,
    g: &PairValues,
    pairs: &PairSet,
) -> Result<FunctionalEstimate, SolveError> {
    let terms: Vec<f64> = (0..pairs.len())
        .map(|i| {
            Ok(signed_pow(f.diff(i), p - 1.0)
                * g.diff(i)
                * kernel_weight(kernel, p, pairs.r, pairs.dists[i])?)
        })
        .collect::<Result<_, SolveError>>()?;
    let mut e = batch_mean(&terms, &pairs.batch_ends, pairs.r);
    e.value = terms.iter().sum::<f64>() / terms.len().max(1) as f64;
    Ok(e)
}

pub fn eval_j(
    kernel: &KernelSpec,
    p: f64,
    f: &dyn Evaluable,
    cloud: &SampleCloud,
    pairs: &PairSet,
) -> Result<FunctionalEstimate, SolveError> {
    estimate_j(kernel, p, &PairValues::of(f, cloud, pairs), pairs)
}

pub fn eval_j_two(
    kernel: &KernelSpec,
    p: f64,
    f: &dyn Evaluable,
    g: &dyn Evaluable,
    cloud: &SampleCloud,
    pairs: &PairSet,
) -> Result<f64, SolveError> {
    Ok(estimate_j_two(
        kernel,
        p,
        &PairValues::of(f, cloud, pairs),
        &PairValues::of(g, cloud, pairs),
        pairs,
    )?
    .value)
}

/// Geometry needed by the word-averaged kernel.
#[derive(Clone, Debug)]
pub struct AveragingGeometry {
    pub d_f: f64,
    pub r_star: f64,
    pub levels: Vec<u32>,
}

/// J for the word-averaged kernel through
/// (1/(n+1)) sum_{l<=n} sum_{|w|=l} r_*^{j(w)(d_f - ps)} J(f o F_w),
/// the inner sum estimated by drawing w with probability m(K_w).
#[allow(clippy::too_many_arguments)]
pub fn eval_averaged(
    n: usize,
    s: f64,
    p: f64,
    f: &dyn Evaluable,
    cloud: &SampleCloud,
    pairs: &PairSet,
    measure: &SelfSimilarMeasure,
    geom: &AveragingGeometry,
    seed: u64,
) -> Result<FunctionalEstimate, SolveError> {
    let masses = pairs
        .ball_mass
        .as_ref()
        .ok_or_else(|| SolveError::Invalid("averaged kernel needs ball masses".into()))?;
    let r = pairs.r;
    let base = r.powf(-p * s - geom.d_f);
    let weights = measure.weights();
    let mut total = 0.0;
    let mut var = 0.0;
    for l in 0..=n {
        let ends = &pairs.batch_ends;
        let terms: Vec<f64> = (0..BATCHES)
            .into_par_iter()
            .flat_map_iter(|b| {
                let start = if b == 0 { 0 } else { ends[b - 1] };
                let mut rng = stream_rng(seed ^ (l as u64).rotate_left(40), b as u64);
                (start..ends[b])
                    .map(|i| {
                        let mut w = Vec::with_capacity(l);
                        let mut theta = 1.0;
                        let mut j = 0u32;
                        for _ in 0..l {
                            let u: f64 = rng.gen();
                            let mut acc = 0.0;
                            let mut letter = weights.len() - 1;
                            for (k, &t) in weights.iter().enumerate() {
                                acc += t;
                                if u < acc {
                                    letter = k;
                                    break;
                                }
                            }
                            w.push(letter as u8);
                            theta *= weights[letter];
                            j += geom.levels[letter];
                        }
                        let mut ax = w.clone();
                        ax.extend_from_slice(cloud.address(pairs.xs[i] as usize));
                        let mut ay = w.clone();
                        ay.extend_from_slice(pairs.y(i));
                        let c = geom.r_star.powf(j as f64 * (geom.d_f - p * s));
                        c / theta * masses[i] * base * (f.eval(&ax) - f.eval(&ay)).abs().powf(p)
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let e = batch_mean(&terms, ends, r);
        total += e.value;
        var += e.std_error * e.std_error;
    }
    let k = (n + 1) as f64;
    Ok(FunctionalEstimate {
        value: total / k,
        std_error: var.sqrt() / k,
        samples: pairs.len(),
        r,
        flagged: pairs.is_empty(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct WmReport {
    pub ratio: f64,
    pub profile: Vec<FunctionalEstimate>,
}

/// max over the grid divided by the min over the three smallest radii.
pub fn wm_ratio(profile: &[FunctionalEstimate]) -> Result<WmReport, SolveError> {
    if profile.len() < 4 {
        return Err(SolveError::Invalid("weak monotonicity needs at least 4 radii".into()));
    }
    let mut by_r = profile.to_vec();
    by_r.sort_by(|a, b| a.r.partial_cmp(&b.r).expect("finite radii"));
    let max = by_r.iter().map(|e| e.value).fold(0.0, f64::max);
    let min_small = by_r[..3].iter().map(|e| e.value).fold(f64::INFINITY, f64::min);
    let ratio = if max == 0.0 { 1.0 } else { max / min_small };
    Ok(WmReport {
        ratio,
        profile: profile.to_vec(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct KsLimit {
    /// Value at the smallest radius: an estimate along a fixed sequence.
    pub estimate: f64,
    pub std_error: f64,
    /// Largest successive relative change over the last three radii.
    pub max_relative_change: f64,
}

pub fn ks_limit_estimate(profile: &[FunctionalEstimate]) -> Result<KsLimit, SolveError> {
    if profile.len() < 2 {
        return Err(SolveError::Invalid("need at least two radii".into()));
    }
    if profile.windows(2).any(|w| w[1].r >= w[0].r) {
        return Err(SolveError::Invalid("radii must be decreasing".into()));
    }
    let last = profile[profile.len() - 1];
    let tail = &profile[profile.len().saturating_sub(3)..];
    let max_relative_change = tail
        .windows(2)
        .map(|w| {
            if w[0].value == 0.0 && w[1].value == 0.0 {
                0.0
            } else {
                (w[1].value - w[0].value).abs() / w[0].value.abs().max(w[1].value.abs())
            }
        })
        .fold(0.0, f64::max);
    Ok(KsLimit {
        estimate: last.value,
        std_error: last.std_error,
        max_relative_change,
    })
}

/// mean |f(x) - f(y)|^p per pair set, the s-independent part of J.
pub fn mean_increment(p: f64, f: &PairValues) -> f64 {
    let n = f.fx.len().max(1) as f64;
    (0..f.fx.len()).map(|i| f.diff(i).abs().powf(p)).sum::<f64>() / n
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanReport {
    pub s_grid: Vec<f64>,
    /// max over functions of the log-log slope of J_r^s in r, per s.
    pub best_slopes: Vec<f64>,
    pub increment_slopes: Vec<f64>,
    pub estimate: f64,
    pub bracket: Option<(f64, f64)>,
}

/// `values[f][k]` are the pair values of function f on pair set k.
pub fn critical_exponent_scan(
    p: f64,
    values: &[Vec<PairValues>],
    pairs: &[PairSet],
    s_grid: &[f64],
) -> Result<ScanReport, SolveError> {
    if values.is_empty() {
        return Err(SolveError::Invalid("empty function set".into()));
    }
    let mut increment_slopes = Vec::new();
    for fv in values {
        let pts: Vec<(f64, f64)> = pairs
            .iter()
            .zip(fv)
            .map(|(ps, v)| (ps.r, mean_increment(p, v)))
            .collect();
        if pts.iter().any(|q| q.1 == 0.0) {
            return Err(SolveError::Invalid("scan functions must be nonconstant".into()));
        }
        increment_slopes.push(log_log_fit(&pts).0);
    }
    let best = increment_slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let best_slopes: Vec<f64> = s_grid.iter().map(|s| best - p * s).collect();
    let bracket = s_grid
        .windows(2)
        .zip(best_slopes.windows(2))
        .find(|(_, b)| b[0] >= 0.0 && b[1] <= 0.0)
        .map(|(s, _)| (s[0], s[1]));
    Ok(ScanReport {
        s_grid: s_grid.to_vec(),
        best_slopes,
        increment_slopes,
        estimate: best / p,
        bracket,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparability {
    pub r: Vec<f64>,
    pub ratios: Vec<f64>,
    /// max_r J^# / min_r J^{s_p}
    pub fitted_c: f64,
    /// J^# >= J^{s_p} held for every pair term.
    pub dominated: bool,
}

pub fn kernel_comparability(
    p: f64,
    s_p: f64,
    values: &[PairValues],
    pairs: &[PairSet],
) -> Result<Comparability, SolveError> {
    let mut r = Vec::new();
    let mut ratios = Vec::new();
    let mut sharp_max: f64 = 0.0;
    let mut ball_min = f64::INFINITY;
    let mut dominated = true;
    for (v, ps) in values.iter().zip(pairs) {
        let a = estimate_j(&KernelSpec::DistancePower { s_p }, p, v, ps)?;
        let b = estimate_j(&KernelSpec::BallPower { s: s_p }, p, v, ps)?;
        for i in 0..ps.len() {
            let t = v.diff(i).abs().powf(p);
            if t * ps.dists[i].powf(-p * s_p) < t * ps.r.powf(-p * s_p) {
                dominated = false;
            }
        }
        r.push(ps.r);
        ratios.push(if b.value == 0.0 { 1.0 } else { a.value / b.value });
        sharp_max = sharp_max.max(a.value);
        ball_min = ball_min.min(b.value);
    }
    let fitted_c = if sharp_max == 0.0 { 1.0 } else { sharp_max / ball_min };
    Ok(Comparability {
        r,
        ratios,
        fitted_c,
        dominated,
    })
}

/// CSV (r, value, std_error).
pub fn profile_csv(profile: &[FunctionalEstimate]) -> String {
    let mut s = String::from("r,value,std_error\n");
    for e in profile {
        s.push_str(&format!("{},{},{}\n", e.r, e.value, e.std_error));
    }
    s
}

/// Default radii 2^{-j}, j = 2..=9.
pub fn default_r_grid() -> Vec<f64> {
    (2..=9).map(|j| 2f64.powi(-j)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::sample_measure;

    #[test]
    fn constant_and_shifted_functions() {
        let sg = PcfStructure::sierpinski();
        let m = SelfSimilarMeasure::uniform(3);
        let metric = EuclideanMetric::new(&sg).unwrap();
        let cloud = sample_measure(&sg, &m, 400, 20, 1).unwrap();
        let pairs = PairSampler::new(&sg, &m, &metric).pairs(&cloud, 0.125, 400, 2, false);
        assert!(pairs.dists.iter().all(|&d| d < 0.125 && d > 0.0));
        let f = PointFunction::new(&sg, |x| x[0] + 2.0 * x[1]);
        let k = KernelSpec::BallPower { s: 1.0 };
        let v = PairValues::of(&f, &cloud, &pairs);
        let zero = estimate_j(&k, 2.0, &v.map(|_| 3.0), &pairs).unwrap();
        assert_eq!((zero.value, zero.std_error), (0.0, 0.0));
        let a = estimate_j(&k, 2.0, &v, &pairs).unwrap();
        let b = estimate_j(&k, 2.0, &v.map(|x| x + 10.0), &pairs).unwrap();
        assert!((a.value - b.value).abs() < 1e-9 * a.value);
    }

    #[test]
    fn linear_fill_reproduces_vertex_values() {
        let model = EnergyModel::sierpinski_p2();
        let f = harmonic_extend(&model, &[1.0, 0.0, 0.0], 3).unwrap();
        let fill = HarmonicFill::new(&model, &harmonic_extend(&model, &[1.0, 0.0, 0.0], 0).unwrap(), 0)
            .unwrap();
        let t = model.table(3);
        // the corner mean of a level-3 cell equals the mean of the level-3 values
        for w in [0usize, 7, 20] {
            let addr = crate::structure::Word::from_index(w, 3, 3);
            let mean: f64 = t.cell(w).iter().map(|&v| f.values[v as usize]).sum::<f64>() / 3.0;
            assert!((fill.eval(addr.letters()) - mean).abs() < 1e-12);
        }
    }
}
