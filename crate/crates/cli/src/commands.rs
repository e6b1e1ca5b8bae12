use fractalp_core::besov::{
    critical_exponent_scan, estimate_j, eval_averaged, kernel_comparability, profile_csv, wm_ratio,
    AveragingGeometry, BesovMetric, EuclideanMetric, HarmonicFill, KernelSpec, PairSampler, PairSet, PairValues,
    ResistanceMetric,
};
use fractalp_core::config::{Config, MetricKind};
use fractalp_core::measures::{bump_function, cell_energy_measure, cell_labels, chain_rule_check, strong_locality_check};
use fractalp_core::metric::{
    ahlfors_check, metric_exponent_fit, neighborhood_sandwich, poincare_check, resistance_table, sample_balls,
    scaling_check, stratified_corner_pairs,
};
use fractalp_core::properties::{gc_battery, GraphOracle, GraphSampler};
use fractalp_core::renorm::{eigenform_csv, eigenform_solve, exponents as exponent_sheet, ExponentSheet};
use fractalp_core::structure::{sample_measure, stream_rng, SampleCloud};
use fractalp_core::suite::{eigen_options, preset_model, run_suite};
use fractalp_core::{
    dirichlet_solve, energy, harmonic_extend, BoundaryForm, ConfigError, DiscreteFunction, EnergyModel,
    PcfStructure, RunError, SelfSimilarMeasure, SolveError,
};
use rand::Rng;
use serde_json::json;

use crate::output::Sink;
use crate::{BesovAction, MeasuresAction, MetricAction, Status};

type Outcome = Result<Status, RunError>;

fn structure_of(cfg: &Config) -> Result<PcfStructure, RunError> {
    PcfStructure::preset(&cfg.preset).ok_or_else(|| {
        ConfigError::Invalid {
            path: "preset".into(),
            message: format!("unknown preset `{}`", cfg.preset),
        }
        .into()
    })
}

fn bad_flag(flag: &str, message: impl Into<String>) -> RunError {
    ConfigError::Invalid {
        path: flag.into(),
        message: message.into(),
    }
    .into()
}

pub fn structure(cfg: &Config, sink: &mut Sink) -> Outcome {
    let s = structure_of(cfg)?;
    let levels: Vec<_> = (0..=cfg.level)
        .map(|n| {
            let t = s.table(n);
            json!({ "level": n, "vertices": t.vertex_count(), "cells": t.cell_count() })
        })
        .collect();
    let t = s.table(cfg.level);
    let mut vertices = String::from("id,x,y\n");
    for v in 0..t.vertex_count() {
        match t.coords() {
            Some(c) => vertices.push_str(&format!("{v},{},{}\n", c[v][0], c[v][1])),
            None => vertices.push_str(&format!("{v},,\n")),
        }
    }
    let labels = cell_labels(s.alphabet_size(), cfg.level);
    let mut cells = String::from("cell,word,vertices\n");
    for (i, w) in labels.iter().enumerate() {
        let ids: Vec<String> = t.cell(i).iter().map(|v| v.to_string()).collect();
        cells.push_str(&format!("{i},{w},{}\n", ids.join(" ")));
    }
    sink.add(format!("vertices_L{}.csv", cfg.level), vertices);
    sink.add(format!("cells_L{}.csv", cfg.level), cells);
    let report = json!({
        "preset": cfg.preset,
        "alphabet_size": s.alphabet_size(),
        "boundary_size": s.boundary_size(),
        "levels": levels,
    });
    println!("{}", sink.json("structure.json", &report));
    Ok(Status::Ok)
}

fn parse_fix(items: &[String]) -> Result<Vec<(usize, f64)>, RunError> {
    items
        .iter()
        .map(|it| {
            let (id, v) = it
                .split_once('=')
                .ok_or_else(|| bad_flag("--fix", format!("expected id=value, got `{it}`")))?;
            let id = id.trim().parse().map_err(|_| bad_flag("--fix", format!("bad vertex id `{id}`")))?;
            let v = v.trim().parse().map_err(|_| bad_flag("--fix", format!("bad value `{v}`")))?;
            Ok((id, v))
        })
        .collect()
}

pub fn solve(cfg: &Config, boundary: Option<&[f64]>, fix: Option<&[String]>, sink: &mut Sink) -> Outcome {
    let (model, _) = preset_model(cfg, cfg.p)?;
    let (kind, u) = match fix {
        Some(items) => ("dirichlet", dirichlet_solve(&model, cfg.level, &parse_fix(items)?)?),
        None => {
            let b = boundary.map(<[f64]>::to_vec).unwrap_or_else(|| {
                let mut b = vec![0.0; model.structure().boundary_size()];
                b[0] = 1.0;
                b
            });
            if b.len() != model.structure().boundary_size() {
                return Err(bad_flag("--boundary", format!("expected {} values", model.structure().boundary_size())));
            }
            ("harmonic", harmonic_extend(&model, &b, cfg.level)?)
        }
    };
    let e = energy(&model, &u)?;
    sink.add(format!("{kind}_L{}.csv", cfg.level), u.to_csv());
    let report = json!({ "kind": kind, "p": cfg.p, "level": cfg.level, "energy": e });
    println!("{}", sink.json(&format!("{kind}.json"), &report));
    Ok(Status::Ok)
}

pub fn eigenform(cfg: &Config, sink: &mut Sink) -> Outcome {
    let s = structure_of(cfg)?;
    let e = eigenform_solve(&s, cfg.p, &eigen_options(cfg))?;
    if let BoundaryForm::Sampled(f) = &e.form {
        sink.add("eigenform.csv", eigenform_csv(f));
    }
    let report = json!({
        "p": cfg.p,
        "rho": e.rho,
        "residual": e.residual,
        "iterations": e.iterations,
        "converged": e.converged,
        "reduced_fidelity": e.reduced_fidelity,
        "grid": cfg.eigenform.grid,
    });
    println!("{}", sink.json("eigenform.json", &report));
    if !e.converged {
        return Err(SolveError::NonConvergence {
            residual: e.residual,
            iterations: e.iterations,
        }
        .into());
    }
    Ok(Status::Ok)
}

fn sheet_for(cfg: &Config, model: &EnergyModel) -> Result<ExponentSheet, RunError> {
    let s = model.structure();
    let r_star = s.contraction_ratio(0).unwrap_or(0.5);
    Ok(exponent_sheet(s, cfg.p, model.rho(), r_star)?)
}

pub fn exponents(cfg: &Config, sink: &mut Sink) -> Outcome {
    let (model, _) = preset_model(cfg, cfg.p)?;
    let sheet = sheet_for(cfg, &model)?;
    println!("{}", sink.json("exponents.json", &sheet));
    Ok(Status::Ok)
}

fn sample_all<M: BesovMetric>(
    structure: &PcfStructure,
    measure: &SelfSimilarMeasure,
    metric: &M,
    cloud: &SampleCloud,
    grid: &[f64],
    cfg: &Config,
    with_mass: bool,
) -> Vec<PairSet> {
    let sampler = PairSampler::new(structure, measure, metric);
    grid.iter()
        .map(|&r| sampler.pairs(cloud, r, cfg.besov.samples, cfg.seed, with_mass))
        .collect()
}

const TEST_BOUNDARIES: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, -1.0], [0.3, -0.7, 1.1]];

pub fn besov(cfg: &Config, action: BesovAction, s: Option<f64>, r: Option<f64>, sink: &mut Sink) -> Outcome {
    let (model, _) = preset_model(cfg, cfg.p)?;
    let structure = model.structure().clone();
    if structure.boundary_size() != 3 {
        return Err(bad_flag("preset", "Besov runs use the three-point test boundary data"));
    }
    let p = cfg.p;
    let sheet = sheet_for(cfg, &model)?;
    let s_p = match cfg.besov.metric {
        MetricKind::Euclidean => sheet.s_p_partition,
        MetricKind::Resistance => sheet.s_p_resistance,
    };
    let measure = SelfSimilarMeasure::uniform(structure.alphabet_size());
    let cloud = sample_measure(&structure, &measure, cfg.besov.cloud, cfg.besov.cloud_depth, cfg.seed)?;
    let grid = match (action, r) {
        (BesovAction::Eval, Some(r)) => vec![r],
        (BesovAction::Eval, None) => vec![cfg.r_grid()[0]],
        _ => cfg.r_grid(),
    };
    let with_mass = matches!(action, BesovAction::Eval);
    let pairs = match cfg.besov.metric {
        MetricKind::Euclidean => {
            let m = EuclideanMetric::new(&structure)?;
            sample_all(&structure, &measure, &m, &cloud, &grid, cfg, with_mass)
        }
        MetricKind::Resistance => {
            let m = ResistanceMetric::new(&model, resistance_table(&model, cfg.besov.resistance_level)?);
            sample_all(&structure, &measure, &m, &cloud, &grid, cfg, with_mass)
        }
    };
    let fills: Vec<HarmonicFill> = TEST_BOUNDARIES
        .iter()
        .map(|b| HarmonicFill::new(&model, &harmonic_extend(&model, b, 0)?, cfg.level))
        .collect::<Result<_, SolveError>>()?;
    let values: Vec<Vec<PairValues>> = fills
        .iter()
        .map(|u| pairs.iter().map(|ps| PairValues::of(u, &cloud, ps)).collect())
        .collect();
    let s = s.unwrap_or(s_p);
    let metric_name = pairs[0].metric;
    match action {
        BesovAction::Eval => {
            let ball = estimate_j(&KernelSpec::BallPower { s }, p, &values[0][0], &pairs[0])?;
            let sharp = estimate_j(&KernelSpec::DistancePower { s_p }, p, &values[0][0], &pairs[0])?;
            let geom = AveragingGeometry {
                d_f: sheet.d_f,
                r_star: sheet.r_star,
                levels: vec![1; structure.alphabet_size()],
            };
            let averaged = eval_averaged(2, s, p, &fills[0], &cloud, &pairs[0], &measure, &geom, cfg.seed)?;
            let report = json!({
                "metric": metric_name, "p": p, "s": s, "s_p": s_p, "r": pairs[0].r,
                "ball_power": ball, "distance_power": sharp, "averaged_n2": averaged,
            });
            println!("{}", sink.json("besov_eval.json", &report));
        }
        BesovAction::Wm => {
            let prof: Vec<_> = values[0]
                .iter()
                .zip(&pairs)
                .map(|(v, ps)| estimate_j(&KernelSpec::BallPower { s }, p, v, ps))
                .collect::<Result<_, _>>()?;
            let wm = wm_ratio(&prof)?;
            sink.add("wm_profile.csv", profile_csv(&prof));
            let report = json!({ "metric": metric_name, "p": p, "s": s, "ratio": wm.ratio });
            println!("{}", sink.json("wm.json", &report));
        }
        BesovAction::Scan => {
            let [a, b, step] = cfg.besov.scan;
            let n = ((b - a) / step).round() as usize;
            let s_grid: Vec<f64> = (0..=n).map(|k| a + step * k as f64).collect();
            let scan = critical_exponent_scan(p, &values, &pairs, &s_grid)?;
            let report = json!({ "metric": metric_name, "p": p, "s_p_sheet": s_p, "scan": scan });
            println!("{}", sink.json("scan.json", &report));
        }
        BesovAction::Compare => {
            let cmp = kernel_comparability(p, s_p, &values[0], &pairs)?;
            let report = json!({ "metric": metric_name, "p": p, "s_p": s_p, "comparability": cmp });
            println!("{}", sink.json("comparability.json", &report));
        }
    }
    Ok(Status::Ok)
}

fn rough(model: &EnergyModel, level: usize, seed: u64) -> DiscreteFunction {
    let mut rng = stream_rng(seed, 0);
    let n = model.table(level).vertex_count();
    DiscreteFunction::new(level, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

pub fn measures(cfg: &Config, action: MeasuresAction, sink: &mut Sink) -> Outcome {
    let (model, _) = preset_model(cfg, cfg.p)?;
    let b = model.structure().boundary_size();
    let mut data = vec![0.0; b];
    data[0] = 1.0;
    let u = harmonic_extend(&model, &data, cfg.depth)?;
    match action {
        MeasuresAction::Cells => {
            let mu = cell_energy_measure(&model, &u, cfg.level)?;
            sink.add(format!("cells_L{}.csv", cfg.level), mu.to_csv(model.structure().alphabet_size()));
            let report = json!({ "level": cfg.level, "depth": cfg.depth, "total": mu.total(), "energy": energy(&model, &u)? });
            println!("{}", sink.json("cells.json", &report));
            Ok(Status::Ok)
        }
        MeasuresAction::Chain => {
            let rep = chain_rule_check(&model, &u, |t| t * t, |t| 2.0 * t, cfg.level)?;
            println!("{}", sink.json("chain.json", &rep));
            Ok(Status::Ok)
        }
        MeasuresAction::Locality => {
            let last = model.structure().cell_count(cfg.level) - 1;
            let f1 = bump_function(&model, &[0], cfg.level, cfg.depth)?;
            let f2 = bump_function(&model, &[last], cfg.level, cfg.depth)?;
            let v = rough(&model, cfg.depth, cfg.seed);
            let n = cfg.level.saturating_sub(1);
            let rep = strong_locality_check(&model, &f1, &f2, &v, n)?;
            println!("{}", sink.json("locality.json", &rep));
            Ok(if rep.passed { Status::Ok } else { Status::ChecksFailed })
        }
    }
}

pub fn metric(cfg: &Config, action: MetricAction, sink: &mut Sink) -> Outcome {
    let (model, _) = preset_model(cfg, cfg.p)?;
    let measure = SelfSimilarMeasure::uniform(model.structure().alphabet_size());
    match action {
        MetricAction::Resistance => {
            let t = resistance_table(&model, cfg.metric.level)?;
            let tri = t.triangle_violation(cfg.metric.triples, cfg.seed);
            let scal = scaling_check(&model, &t, 2, 20, cfg.seed);
            sink.add(format!("resistance_L{}.csv", cfg.metric.level), t.to_csv());
            let report = json!({ "level": cfg.metric.level, "triangle": tri, "scaling": scal });
            println!("{}", sink.json("resistance.json", &report));
            let ok = tri.max_violation <= 1e-9 && scal.max_violation <= 1e-9;
            Ok(if ok { Status::Ok } else { Status::ChecksFailed })
        }
        MetricAction::Fits => {
            let n = cfg.metric.fit_level;
            let table = if cfg.p == 2.0 { Some(resistance_table(&model, n)?) } else { None };
            let pairs = stratified_corner_pairs(&model, n, cfg.metric.pairs_per_level, cfg.seed);
            let fit = metric_exponent_fit(&model, n, &pairs, table.as_ref())?;
            let t = resistance_table(&model, cfg.metric.level)?;
            let s_grid: Vec<f64> = (0..9).map(|k| 0.6f64.powf(k as f64 * 0.5 + 0.5) * 1.2).collect();
            let ahl = ahlfors_check(&model, &t, &measure, 20, &s_grid, cfg.seed)?;
            let report = json!({ "level": n, "fit": fit, "ahlfors": ahl });
            println!("{}", sink.json("fits.json", &report));
            Ok(Status::Ok)
        }
        MetricAction::Poincare => {
            let balls = sample_balls(&model, cfg.metric.balls, 1, 3, cfg.seed);
            let us: Vec<DiscreteFunction> = [[1.0, 0.0, 0.0], [0.3, -1.0, 0.8]]
                .iter()
                .map(|b| harmonic_extend(&model, b, cfg.level))
                .collect::<Result<_, _>>()?;
            let rep = poincare_check(&model, &measure, &us, &balls, cfg.metric.inflation)?;
            let t = resistance_table(&model, cfg.level.min(cfg.metric.level))?;
            let sandwich = neighborhood_sandwich(&model, &t, &balls)?;
            let report = json!({ "poincare": rep, "sandwich": sandwich });
            println!("{}", sink.json("poincare.json", &report));
            Ok(Status::Ok)
        }
    }
}

pub fn gc(cfg: &Config, sink: &mut Sink) -> Outcome {
    let (model, _) = preset_model(cfg, cfg.p)?;
    let graph = EnergyModel::new(
        model.structure().clone(),
        cfg.p,
        model.rho().to_vec(),
        BoundaryForm::unit_triangle(),
    )?;
    let rep = gc_battery(
        &GraphOracle { model: &graph, level: cfg.gc.level },
        &GraphSampler { model: &graph, level: cfg.gc.level },
        cfg.gc.trials,
        cfg.seed,
        cfg.gc.tolerance,
    );
    println!("{}", sink.json("gc_report.json", &rep));
    Ok(if rep.passed { Status::Ok } else { Status::ChecksFailed })
}

pub fn suite(cfg: &Config, sink: &mut Sink) -> Outcome {
    let out = run_suite(cfg)?;
    for a in &out.artifacts {
        sink.add(a.name.clone(), a.contents.clone());
    }
    sink.add("suite.json", out.summary_json());
    for c in &out.criteria {
        println!("criterion {:>2} {:<36} {}", c.id, c.name, if c.passed { "PASS" } else { "FAIL" });
    }
    for (id, secs) in &out.timings {
        eprintln!("timing criterion={id} seconds={secs:.3}");
    }
    Ok(if out.passed() { Status::Ok } else { Status::ChecksFailed })
}
