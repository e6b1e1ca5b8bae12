//! Generalized p-contraction battery for any p-energy form given as an oracle
//! on value vectors.
//!
//! Functions are plain value vectors and all maps act pointwise, so the same code
//! serves graph energies (vertex values), fixed-cell energy measures, and Monte
//! Carlo Besov estimators (the concatenated values at both ends of shared pairs).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::besov::{estimate_j, estimate_j_two, KernelSpec, PairSet, PairValues};
use crate::graph_forms::{energy, energy_two, harmonic_extend, DiscreteFunction, EnergyModel};
use crate::measures::{cell_energy_measure, two_variable_measure};
use crate::structure::stream_rng;

pub trait FormOracle: Sync {
    fn p(&self) -> f64;
    fn energy(&self, f: &[f64]) -> f64;
    /// E(f; g) = (1/p) d/dt E(f + t g) at t = 0, when available.
    fn energy_two(&self, _f: &[f64], _g: &[f64]) -> Option<f64> {
        None
    }
}

pub trait FunctionSampler: Sync {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
}

/// Graph energy E^n on a fixed level.
pub struct GraphOracle<'a> {
    pub model: &'a EnergyModel,
    pub level: usize,
}

impl FormOracle for GraphOracle<'_> {
    fn p(&self) -> f64 {
        self.model.p()
    }

    fn energy(&self, f: &[f64]) -> f64 {
        energy(self.model, &DiscreteFunction::new(self.level, f.to_vec())).expect("sized by sampler")
    }

    fn energy_two(&self, f: &[f64], g: &[f64]) -> Option<f64> {
        energy_two(
            self.model,
            &DiscreteFunction::new(self.level, f.to_vec()),
            &DiscreteFunction::new(self.level, g.to_vec()),
        )
        .ok()
    }
}

/// Gamma<f>(K_w) for one fixed cell w of level `cell_level`.
pub struct CellOracle<'a> {
    pub model: &'a EnergyModel,
    pub level: usize,
    pub cell_level: usize,
    pub cell: usize,
}

impl FormOracle for CellOracle<'_> {
    fn p(&self) -> f64 {
        self.model.p()
    }

    fn energy(&self, f: &[f64]) -> f64 {
        let u = DiscreteFunction::new(self.level, f.to_vec());
        cell_energy_measure(self.model, &u, self.cell_level).expect("deep enough").mass[self.cell]
    }

    fn energy_two(&self, f: &[f64], g: &[f64]) -> Option<f64> {
        let u = DiscreteFunction::new(self.level, f.to_vec());
        let v = DiscreteFunction::new(self.level, g.to_vec());
        two_variable_measure(self.model, &u, &v, self.cell_level)
            .ok()
            .map(|m| m.mass[self.cell])
    }
}

/// Monte Carlo Besov functional on one shared pair set; a function is the
/// concatenation of its values at the x and y ends of every pair.
pub struct BesovOracle<'a> {
    pub kernel: KernelSpec,
    pub p: f64,
    pub pairs: &'a PairSet,
}

fn split(f: &[f64]) -> PairValues {
    let h = f.len() / 2;
    PairValues {
        fx: f[..h].to_vec(),
        fy: f[h..].to_vec(),
    }
}

impl FormOracle for BesovOracle<'_> {
    fn p(&self) -> f64 {
        self.p
    }

    fn energy(&self, f: &[f64]) -> f64 {
        estimate_j(&self.kernel, self.p, &split(f), self.pairs).expect("ball kernel").value
    }

    fn energy_two(&self, f: &[f64], g: &[f64]) -> Option<f64> {
        estimate_j_two(&self.kernel, self.p, &split(f), &split(g), self.pairs)
            .ok()
            .map(|e| e.value)
    }
}

/// An oracle that reports a different exponent than the one it computes with.
pub struct Mislabelled<O: FormOracle> {
    pub inner: O,
    pub claimed_p: f64,
}

impl<O: FormOracle> FormOracle for Mislabelled<O> {
    fn p(&self) -> f64 {
        self.claimed_p
    }

    fn energy(&self, f: &[f64]) -> f64 {
        self.inner.energy(f)
    }

    fn energy_two(&self, f: &[f64], g: &[f64]) -> Option<f64> {
        self.inner.energy_two(f, g)
    }
}

/// Half of the draws are harmonic extensions of standard normal boundary data,
/// the other half i.i.d. normal vertex values.
pub struct GraphSampler<'a> {
    pub model: &'a EnergyModel,
    pub level: usize,
}

impl FunctionSampler for GraphSampler<'_> {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let count = self.model.table(self.level).vertex_count();
        if rng.gen_bool(0.5) {
            let b = self.model.structure().boundary_size();
            let data: Vec<f64> = (0..b).map(|_| rng.sample(StandardNormal)).collect();
            harmonic_extend(self.model, &data, self.level)
                .expect("harmonic extension")
                .values
        } else {
            (0..count).map(|_| rng.sample(StandardNormal)).collect()
        }
    }
}

/// Draws from a fixed pool of functions, combined with random normal coefficients.
pub struct PoolSampler {
    pub pool: Vec<Vec<f64>>,
}

impl FunctionSampler for PoolSampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut out = vec![0.0; self.pool[0].len()];
        for f in &self.pool {
            let c: f64 = rng.sample(StandardNormal);
            for (o, x) in out.iter_mut().zip(f) {
                *o += c * x;
            }
        }
        out
    }
}

/// Replays one trial: the inputs are regenerated from `stream_rng(seed, trial)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub seed: u64,
    pub trial: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub name: &'static str,
    pub trials: usize,
    pub max_violation: f64,
    pub violations: usize,
    pub witness_seed: Option<Witness>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GcReport {
    pub p: f64,
    pub tolerance: f64,
    pub checks: Vec<CheckReport>,
    pub passed: bool,
}

impl GcReport {
    pub fn check(&self, name: &str) -> Option<&CheckReport> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn rel(lhs: f64, rhs: f64) -> f64 {
    let scale = lhs.abs().max(rhs.abs());
    if scale == 0.0 {
        0.0
    } else {
        ((lhs - rhs) / scale).max(0.0)
    }
}

fn sup(f: &[f64]) -> f64 {
    f.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn zip(f: &[f64], g: &[f64], op: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    f.iter().zip(g).map(|(&a, &b)| op(a, b)).collect()
}

/// The constant in |E(f1;g) - E(f2;g)| <= C max E(fi)^{(p-2)+/p} E(f1-f2)^{((p-1)^1)/p} E(g)^{1/p}
/// that follows from scalar bounds on gamma_p for forms that are weighted sums of |.|^p.
pub fn explicit_holder_constant(p: f64) -> f64 {
    if p <= 2.0 {
        2f64.powf(2.0 - p)
    } else {
        2.0 * (p - 1.0)
    }
}

fn holder_rhs(o: &dyn FormOracle, f1: &[f64], f2: &[f64], g: &[f64]) -> f64 {
    let p = o.p();
    let e_max = o.energy(f1).max(o.energy(f2));
    let d = o.energy(&zip(f1, f2, |a, b| a - b));
    e_max.powf((p - 2.0).max(0.0) / p) * d.powf((p - 1.0).min(1.0) / p) * o.energy(g).powf(1.0 / p)
}

type Trial<'a> = dyn Fn(&dyn FormOracle, &mut ChaCha8Rng) -> f64 + Sync + 'a;

fn run_check(
    name: &'static str,
    oracle: &dyn FormOracle,
    trials: usize,
    seed: u64,
    tol: f64,
    body: &Trial<'_>,
) -> CheckReport {
    let salt = name.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    let stream = seed ^ salt;
    let v: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| body(oracle, &mut stream_rng(stream, t as u64)))
        .collect();
    let mut report = CheckReport {
        name,
        trials,
        max_violation: 0.0,
        violations: 0,
        witness_seed: None,
    };
    for (t, &x) in v.iter().enumerate() {
        if x > tol {
            report.violations += 1;
        }
        if x > report.max_violation {
            report.max_violation = x;
            report.witness_seed = Some(Witness {
                seed: stream,
                trial: t as u64,
            });
        }
    }
    report
}

/// Runs the battery; each check draws its inputs from its own seeded streams.
pub fn gc_battery(
    oracle: &dyn FormOracle,
    sampler: &dyn FunctionSampler,
    trials: usize,
    seed: u64,
    tol: f64,
) -> GcReport {
    let p = oracle.p();
    let mut checks = Vec::new();
    let mut add = |name, body: &Trial<'_>| checks.push(run_check(name, oracle, trials, seed, tol, body));

    add("homogeneity", &|o, rng| {
        let f = sampler.sample(rng);
        let l = rng.gen_range(-3.0..3.0);
        let lhs = o.energy(&f.iter().map(|x| l * x).collect::<Vec<_>>());
        let rhs = l.abs().powf(o.p()) * o.energy(&f);
        rel(lhs, rhs).max(rel(rhs, lhs))
    });
    add("triangle", &|o, rng| {
        let (f, g) = (sampler.sample(rng), sampler.sample(rng));
        let pp = o.p();
        let lhs = o.energy(&zip(&f, &g, |a, b| a + b)).powf(1.0 / pp);
        rel(lhs, o.energy(&f).powf(1.0 / pp) + o.energy(&g).powf(1.0 / pp))
    });
    add("unit_contraction", &|o, rng| {
        let f = sampler.sample(rng);
        let c: Vec<f64> = f.iter().map(|x| x.clamp(0.0, 1.0)).collect();
        rel(o.energy(&c), o.energy(&f))
    });
    add("lattice", &|o, rng| {
        let (f, g) = (sampler.sample(rng), sampler.sample(rng));
        let lhs = o.energy(&zip(&f, &g, f64::max)) + o.energy(&zip(&f, &g, f64::min));
        rel(lhs, o.energy(&f) + o.energy(&g))
    });
    add("leibniz", &|o, rng| {
        let (f, g) = (sampler.sample(rng), sampler.sample(rng));
        let pp = o.p();
        let lhs = o.energy(&zip(&f, &g, |a, b| a * b)).powf(1.0 / pp);
        let rhs = sup(&g) * o.energy(&f).powf(1.0 / pp) + sup(&f) * o.energy(&g).powf(1.0 / pp);
        rel(lhs, rhs)
    });
    add("clarkson", &|o, rng| {
        let (f, g) = (sampler.sample(rng), sampler.sample(rng));
        let pp = o.p();
        let (ef, eg) = (o.energy(&f), o.energy(&g));
        let mid = o.energy(&zip(&f, &g, |a, b| a + b)) + o.energy(&zip(&f, &g, |a, b| a - b));
        let outer = 2.0 * (ef.powf(1.0 / (pp - 1.0)) + eg.powf(1.0 / (pp - 1.0))).powf(pp - 1.0);
        let inner = 2.0 * (ef + eg);
        let mut v: f64 = 0.0;
        if pp <= 2.0 {
            v = v.max(rel(outer, mid)).max(rel(mid, inner));
        }
        if pp >= 2.0 {
            v = v.max(rel(mid, outer)).max(rel(inner, mid));
        }
        v
    });
    add("t_map", &|o, rng| {
        // T(x1, x2) = (x1 ^ x2, x1 v x2) with q1 = q2 = p
        let (f, g) = (sampler.sample(rng), sampler.sample(rng));
        let pp = o.p();
        let lhs = (o.energy(&zip(&f, &g, f64::min)) + o.energy(&zip(&f, &g, f64::max))).powf(1.0 / pp);
        rel(lhs, (o.energy(&f) + o.energy(&g)).powf(1.0 / pp))
    });
    if probe_two(oracle, sampler) {
        let c = explicit_holder_constant(p);
        add("holder", &|o, rng| {
            let (f1, f2, g) = (sampler.sample(rng), sampler.sample(rng), sampler.sample(rng));
            let lhs = (o.energy_two(&f1, &g).unwrap() - o.energy_two(&f2, &g).unwrap()).abs();
            rel(lhs, c * holder_rhs(o, &f1, &f2, &g))
        });
    }
    let passed = checks.iter().all(|c| c.violations == 0);
    GcReport {
        p,
        tolerance: tol,
        checks,
        passed,
    }
}

fn probe_two(oracle: &dyn FormOracle, sampler: &dyn FunctionSampler) -> bool {
    let f = sampler.sample(&mut stream_rng(0, 0));
    oracle.energy_two(&f, &f).is_some()
}

#[derive(Clone, Debug, Serialize)]
pub struct HolderFit {
    pub p: f64,
    pub trials: usize,
    pub fitted_c: f64,
    pub witness_seed: Option<Witness>,
}

/// Largest ratio |E(f1;g) - E(f2;g)| / (RHS with C = 1) over random triples.
pub fn nonlinear_holder_fit(
    oracle: &dyn FormOracle,
    sampler: &dyn FunctionSampler,
    trials: usize,
    seed: u64,
) -> Option<HolderFit> {
    if !probe_two(oracle, sampler) {
        return None;
    }
    let ratios: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t as u64);
            let (f1, f2, g) = (sampler.sample(&mut rng), sampler.sample(&mut rng), sampler.sample(&mut rng));
            holder_ratio(oracle, &f1, &f2, &g)
        })
        .collect();
    let mut fit = HolderFit {
        p: oracle.p(),
        trials,
        fitted_c: 0.0,
        witness_seed: None,
    };
    for (t, &r) in ratios.iter().enumerate() {
        if r > fit.fitted_c {
            fit.fitted_c = r;
            fit.witness_seed = Some(Witness { seed, trial: t as u64 });
        }
    }
    Some(fit)
}

/// |E(f1;g) - E(f2;g)| over the Hölder right-hand side with C = 1; 0 when both vanish.
pub fn holder_ratio(o: &dyn FormOracle, f1: &[f64], f2: &[f64], g: &[f64]) -> f64 {
    let lhs = (o.energy_two(f1, g).unwrap() - o.energy_two(f2, g).unwrap()).abs();
    let rhs = holder_rhs(o, f1, f2, g);
    if lhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Lp(f64);
    impl FormOracle for Lp {
        fn p(&self) -> f64 {
            self.0
        }
        fn energy(&self, f: &[f64]) -> f64 {
            f.windows(2).map(|w| (w[0] - w[1]).abs().powf(self.0)).sum()
        }
    }

    #[test]
    fn zero_functions_pass() {
        let s = PoolSampler { pool: vec![vec![0.0; 6]] };
        let r = gc_battery(&Lp(3.0), &s, 10, 1, 1e-9);
        assert!(r.passed);
        assert!(r.checks.iter().all(|c| c.max_violation == 0.0));
    }

    #[test]
    fn path_energy_is_gc() {
        let s = PoolSampler {
            pool: (0..5).map(|k| (0..8).map(|i| ((i * (k + 1)) as f64).sin()).collect()).collect(),
        };
        for p in [1.3, 2.0, 4.0] {
            assert!(gc_battery(&Lp(p), &s, 50, 2, 1e-9).passed);
        }
    }
}
