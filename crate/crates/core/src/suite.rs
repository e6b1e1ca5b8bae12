//! The acceptance run: every criterion computed from one configuration, with
//! artifacts returned in memory so callers decide where they go.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::besov::{
    critical_exponent_scan, estimate_j, kernel_comparability, wm_ratio, profile_csv, EuclideanMetric, HarmonicFill,
    KernelSpec, PairSampler, PairSet, PairValues,
};
use crate::config::Config;
use crate::error::{ConfigError, RunError};
use crate::graph_forms::{energy, harmonic_extend, BoundaryForm, DiscreteFunction, EnergyModel};
use crate::measures::{cell_energy_measure, chain_rule_check};
use crate::metric::{
    log_log_fit, metric_exponent_fit, poincare_check, resistance_table, sample_balls, scaling_check,
    stratified_corner_pairs,
};
use crate::properties::{gc_battery, GraphOracle, GraphSampler, Mislabelled};
use crate::renorm::{eigenform_csv, eigenform_solve, exponents, Eigenform, EigenformOptions};
use crate::structure::{sample_measure, stream_rng, PcfStructure, SelfSimilarMeasure};

#[derive(Clone, Debug, Serialize)]
pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub values: Value,
}

#[derive(Clone, Debug)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Clone, Debug, Default)]
pub struct SuiteOutcome {
    pub criteria: Vec<Criterion>,
    pub artifacts: Vec<Artifact>,
    /// Wall-clock seconds per criterion; kept out of the artifacts.
    pub timings: Vec<(u8, f64)>,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    fn push(&mut self, id: u8, name: &'static str, passed: bool, values: Value, secs: f64) {
        self.criteria.push(Criterion {
            id,
            name,
            passed,
            values,
        });
        self.timings.push((id, secs));
    }

    fn artifact(&mut self, name: impl Into<String>, contents: String) {
        self.artifacts.push(Artifact {
            name: name.into(),
            contents,
        });
    }

    pub fn summary_json(&self) -> String {
        let v = json!({ "passed": self.passed(), "criteria": self.criteria });
        serde_json::to_string_pretty(&v).expect("serializable")
    }
}

pub fn pretty(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

/// The p-energy model on the preset structure: the exact graph eigenform for
/// p = 2, otherwise the numerically solved eigenform.
pub fn preset_model(cfg: &Config, p: f64) -> Result<(EnergyModel, Option<Eigenform>), RunError> {
    let structure = PcfStructure::preset(&cfg.preset)
        .ok_or_else(|| ConfigError::Invalid {
            path: "preset".into(),
            message: format!("unknown preset `{}`", cfg.preset),
        })?;
    if p == 2.0 && cfg.preset == "sg" {
        return Ok((EnergyModel::sierpinski_p2(), None));
    }
    let e = eigenform_solve(&structure, p, &eigen_options(cfg))?;
    let rho = vec![e.rho; structure.alphabet_size()];
    let model = EnergyModel::new(structure, p, rho, e.form.clone())?;
    Ok((model, Some(e)))
}

pub fn eigen_options(cfg: &Config) -> EigenformOptions {
    EigenformOptions {
        grid: cfg.eigenform.grid,
        max_iter: cfg.eigenform.max_iter,
        tol: cfg.eigenform.tol,
        ..EigenformOptions::default()
    }
}

fn rough(model: &EnergyModel, level: usize, seed: u64, trial: u64) -> DiscreteFunction {
    let mut rng = stream_rng(seed, trial);
    let n = model.table(level).vertex_count();
    DiscreteFunction::new(level, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Runs criteria 1 to 12 for the SG preset at p = 2. Determinism (13) needs
/// two runs and is checked by the caller.
pub fn run_suite(cfg: &Config) -> Result<SuiteOutcome, RunError> {
    if cfg.preset != "sg" || cfg.p != 2.0 {
        return Err(ConfigError::Invalid {
            path: "p".into(),
            message: "the acceptance suite is defined for preset sg at p = 2".into(),
        }
        .into());
    }
    let mut out = SuiteOutcome::default();
    let seed = cfg.seed;
    let sg = PcfStructure::sierpinski();
    let m2 = EnergyModel::sierpinski_p2();

    // 1. harmonic extension at level 1
    let t = Instant::now();
    let h = harmonic_extend(&m2, &[1.0, 0.0, 0.0], 1)?;
    let got = [
        h.values[sg.level1_id(0, 1)],
        h.values[sg.level1_id(0, 2)],
        h.values[sg.level1_id(1, 2)],
    ];
    let want = [0.4, 0.4, 0.2];
    let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    out.push(1, "harmonic extension exactness", err < 1e-10, json!({ "values": got, "max_error": err }), t.elapsed().as_secs_f64());

    // 2. eigenforms
    let mut eig = Vec::new();
    let mut rhos = Vec::new();
    let mut models = vec![(2.0, m2.clone())];
    for p in [1.5, 2.0, 3.0] {
        let t = Instant::now();
        let e = eigenform_solve(&sg, p, &eigen_options(cfg))?;
        let secs = t.elapsed().as_secs_f64();
        out.timings.push((2, secs));
        if let BoundaryForm::Sampled(s) = &e.form {
            out.artifact(format!("eigenform_p{p}.csv"), eigenform_csv(s));
        }
        rhos.push(e.rho);
        eig.push(json!({ "p": p, "rho": e.rho, "residual": e.residual, "iterations": e.iterations, "converged": e.converged }));
        out.artifact(format!("eigenform_p{p}.json"), pretty(&eig[eig.len() - 1]));
        if p != 2.0 {
            models.push((p, EnergyModel::new(sg.clone(), p, vec![e.rho; 3], e.form.clone())?));
        }
    }
    let residual = |i: usize| eig[i]["residual"].as_f64().unwrap_or(f64::INFINITY);
    let ok2 = (rhos[1] - 5.0 / 3.0).abs() < 1e-6
        && residual(1) < 1e-8
        && residual(0) < 1e-5
        && residual(2) < 1e-5
        && rhos[0] < rhos[1]
        && rhos[1] < rhos[2];
    out.criteria.push(Criterion {
        id: 2,
        name: "eigenform fixed point",
        passed: ok2,
        values: json!(eig),
    });

    // 3. exponent sheet
    let t = Instant::now();
    let sheet = exponents(&sg, 2.0, &[rhos[1]; 3], 0.5)?;
    let l2 = 2f64.ln();
    let oracle = [
        ("d_f", sheet.d_f, 3f64.ln() / l2),
        ("sigma_p", sheet.sigma_p, 5.0 / 3.0),
        ("d_wp", sheet.d_wp, 5f64.ln() / l2),
        ("d_fp", sheet.d_fp, 3f64.ln() / (5f64 / 3.0).ln()),
    ];
    let worst = oracle.iter().map(|(_, a, b)| (a - b).abs()).fold(0.0, f64::max);
    out.artifact("exponents_p2.json", pretty(&sheet));
    out.push(3, "exponent sheet", worst < 1e-6, json!({ "sheet": sheet, "max_error": worst }), t.elapsed().as_secs_f64());

    // 4. level consistency of harmonic extensions
    let t = Instant::now();
    let mut spread: f64 = 0.0;
    let mut rows = Vec::new();
    for b in [[1.0, 0.0, 0.0], [0.3, -1.2, 0.5]] {
        let e: Vec<f64> = (0..=6)
            .map(|n| energy(&m2, &harmonic_extend(&m2, &b, n)?))
            .collect::<Result<_, _>>()?;
        spread = e.iter().fold(spread, |s, x| s.max(rel(*x, e[0])));
        rows.push(json!({ "boundary": b, "energies": e }));
    }
    out.push(4, "trace and level consistency", spread < 1e-8, json!({ "rows": rows, "max_relative_spread": spread }), t.elapsed().as_secs_f64());

    // 5. energy measure additivity
    let t = Instant::now();
    let mut worst5: f64 = 0.0;
    for (_, model) in &models {
        for n in 0..=4 {
            for trial in 0..20u64 {
                let u = rough(model, n + 2, seed ^ 0x5, trial + 100 * n as u64);
                let total = cell_energy_measure(model, &u, n)?.total();
                worst5 = worst5.max(rel(total, energy(model, &u)?));
            }
        }
    }
    out.push(5, "energy measure additivity", worst5 < 1e-8, json!({ "max_relative_error": worst5 }), t.elapsed().as_secs_f64());

    // 6. GC battery
    let t = Instant::now();
    let mut reports = Vec::new();
    let mut ok6 = true;
    for (i, p) in [1.5, 2.0, 3.0].into_iter().enumerate() {
        let model = EnergyModel::new(sg.clone(), p, vec![rhos[i]; 3], BoundaryForm::unit_triangle())?;
        let oracle = GraphOracle { model: &model, level: cfg.gc.level };
        let sampler = GraphSampler { model: &model, level: cfg.gc.level };
        let rep = gc_battery(&oracle, &sampler, cfg.gc.trials, seed, cfg.gc.tolerance);
        ok6 &= rep.passed;
        reports.push(rep);
    }
    let squares = EnergyModel::new(sg.clone(), 2.0, vec![rhos[1]; 3], BoundaryForm::unit_triangle())?;
    let neg_a = gc_battery(
        &Mislabelled { inner: GraphOracle { model: &squares, level: cfg.gc.level }, claimed_p: 3.0 },
        &GraphSampler { model: &squares, level: cfg.gc.level },
        100,
        seed,
        cfg.gc.tolerance,
    );
    let cubes = EnergyModel::new(sg.clone(), 3.0, vec![rhos[2]; 3], BoundaryForm::unit_triangle())?;
    let neg_b = gc_battery(
        &Mislabelled { inner: GraphOracle { model: &cubes, level: cfg.gc.level }, claimed_p: 1.5 },
        &GraphSampler { model: &cubes, level: cfg.gc.level },
        100,
        seed,
        cfg.gc.tolerance,
    );
    let detected = |r: &crate::properties::GcReport, name: &str| r.check(name).is_some_and(|c| c.violations > 0);
    let controls = detected(&neg_a, "homogeneity") && detected(&neg_b, "clarkson");
    let gc_json = json!({ "forms": reports, "negative_controls": { "squares_as_p3": neg_a, "cubes_as_p1.5": neg_b } });
    out.artifact("gc_report.json", pretty(&gc_json));
    let max_v = reports
        .iter()
        .flat_map(|r| r.checks.iter().map(|c| c.max_violation))
        .fold(0.0, f64::max);
    out.push(6, "generalized p-contraction battery", ok6 && controls, json!({ "max_violation": max_v, "controls_detected": controls }), t.elapsed().as_secs_f64());

    // 7. chain rule
    let t = Instant::now();
    let [d0, d1] = cfg.chain.depths;
    let mut errs = Vec::new();
    for d in d0..=d1 {
        let u = harmonic_extend(&m2, &[1.0, 0.0, 0.0], d)?;
        errs.push(chain_rule_check(&m2, &u, |x| x * x, |x| 2.0 * x, cfg.chain.cell_level)?.max_error);
    }
    let bumps = errs.windows(2).filter(|w| w[1] >= w[0]).count();
    let ok7 = bumps <= 1 && errs[errs.len() - 1] < 0.15;
    out.push(7, "chain rule convergence", ok7, json!({ "depths": [d0, d1], "max_errors": errs }), t.elapsed().as_secs_f64());

    // 8, 9, 11. Besov functionals on shared pairs
    let t = Instant::now();
    let measure = SelfSimilarMeasure::uniform(3);
    let cloud = sample_measure(&sg, &measure, cfg.besov.cloud, cfg.besov.cloud_depth, seed)?;
    let metric = EuclideanMetric::new(&sg)?;
    let sampler = PairSampler::new(&sg, &measure, &metric);
    let grid = cfg.r_grid();
    let pairs: Vec<PairSet> = grid
        .iter()
        .map(|&r| sampler.pairs(&cloud, r, cfg.besov.samples, seed, false))
        .collect();
    let fs = [[1.0, 0.0, 0.0], [0.0, 1.0, -1.0], [0.3, -0.7, 1.1]];
    let values: Vec<Vec<PairValues>> = fs
        .iter()
        .map(|b| {
            let u = HarmonicFill::new(&m2, &harmonic_extend(&m2, b, 0)?, 0)?;
            Ok(pairs.iter().map(|ps| PairValues::of(&u, &cloud, ps)).collect())
        })
        .collect::<Result<_, RunError>>()?;
    let s_p = sheet.s_p_partition;
    let profile = |s: f64| -> Result<Vec<_>, RunError> {
        Ok(values[0]
            .iter()
            .zip(&pairs)
            .map(|(v, ps)| estimate_j(&KernelSpec::BallPower { s }, 2.0, v, ps))
            .collect::<Result<Vec<_>, _>>()?)
    };
    let at_sp = profile(s_p)?;
    let wm = wm_ratio(&at_sp)?;
    let steep = profile(s_p + 0.3)?;
    let slope = log_log_fit(&steep.iter().map(|e| (e.r, e.value)).collect::<Vec<_>>()).0;
    out.artifact("wm_profile.csv", profile_csv(&at_sp));
    out.artifact("wm_profile_steep.csv", profile_csv(&steep));
    let ok8 = wm.ratio <= 30.0 && slope <= -0.3 * 2.0 + 0.15;
    let rejections: u64 = pairs.iter().map(|p| p.rejections).sum();
    out.push(8, "weak monotonicity band", ok8, json!({ "s_p": s_p, "ratio": wm.ratio, "divergence_slope": slope, "rejections": rejections }), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let [a, b, step] = cfg.besov.scan;
    let steps = ((b - a) / step).round() as usize;
    let s_grid: Vec<f64> = (0..=steps).map(|k| a + step * k as f64).collect();
    let scan = critical_exponent_scan(2.0, &values, &pairs, &s_grid)?;
    let target9 = 5f64.ln() / (2.0 * l2);
    out.artifact("scan.json", pretty(&scan));
    out.push(9, "critical exponent scan", (scan.estimate - target9).abs() <= 0.1, json!({ "estimate": scan.estimate, "bracket": scan.bracket, "target": target9 }), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let keep: Vec<usize> = (0..grid.len()).filter(|&i| grid[i] >= 2f64.powi(-8) * 0.999).collect();
    let cmp = kernel_comparability(
        2.0,
        s_p,
        &keep.iter().map(|&i| values[0][i].clone()).collect::<Vec<_>>(),
        &keep.iter().map(|&i| pairs[i].clone()).collect::<Vec<_>>(),
    )?;
    out.artifact("comparability.json", pretty(&cmp));
    out.push(11, "kernel comparability", cmp.dominated && cmp.fitted_c <= 20.0, json!({ "dominated": cmp.dominated, "fitted_c": cmp.fitted_c, "ratios": cmp.ratios }), t.elapsed().as_secs_f64());

    // 10. resistance geometry
    let t = Instant::now();
    let table = resistance_table(&m2, cfg.metric.level)?;
    let tri = table.triangle_violation(cfg.metric.triples, seed);
    let scal = scaling_check(&m2, &table, 2, 20, seed);
    let fine = resistance_table(&m2, cfg.metric.fit_level)?;
    let fit = metric_exponent_fit(
        &m2,
        cfg.metric.fit_level,
        &stratified_corner_pairs(&m2, cfg.metric.fit_level, cfg.metric.pairs_per_level, seed),
        Some(&fine),
    )?;
    let target10 = (5f64 / 3.0).ln() / l2;
    let ok10 = tri.max_violation <= 1e-9 && scal.max_violation <= 1e-9 && (fit.slope - target10).abs() <= 0.15;
    let v10 = json!({ "triangle": tri, "scaling": scal, "fit": fit, "target_slope": target10 });
    out.artifact("resistance.json", pretty(&v10));
    out.push(10, "resistance geometry", ok10, v10, t.elapsed().as_secs_f64());

    // 12. Poincaré stability
    let t = Instant::now();
    let balls = sample_balls(&m2, cfg.metric.balls, 1, 3, seed);
    let mut sups = Vec::new();
    for n in [5, 6] {
        let us: Vec<DiscreteFunction> = [[1.0, 0.0, 0.0], [0.3, -1.0, 0.8]]
            .iter()
            .map(|b| harmonic_extend(&m2, b, n))
            .collect::<Result<_, _>>()?;
        sups.push(poincare_check(&m2, &measure, &us, &balls, cfg.metric.inflation)?.sup_ratio);
    }
    let ratio = (sups[0] / sups[1]).max(sups[1] / sups[0]);
    out.push(12, "Poincare stability", ratio < 2.0 && sups.iter().all(|s| s.is_finite() && *s > 0.0), json!({ "sup_ratio": sups, "change_factor": ratio, "inflation": cfg.metric.inflation }), t.elapsed().as_secs_f64());

    out.criteria.sort_by_key(|c| c.id);
    Ok(out)
}
