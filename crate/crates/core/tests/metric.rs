use fractalp_core::metric::{
    ahlfors_check, capacity_profile, metric_exponent_fit, neighborhood_sandwich, poincare_check,
    resistance, resistance_table, sample_balls, scaling_check, stratified_corner_pairs,
};
use fractalp_core::renorm::{eigenform_solve, EigenformOptions};
use fractalp_core::structure::{SelfSimilarMeasure, Word};
use fractalp_core::{
    capacity_potential, energy, harmonic_extend, BoundaryForm, DiscreteFunction, EnergyModel,
    PcfStructure,
};

fn sg2() -> EnergyModel {
    EnergyModel::sierpinski_p2()
}

#[test]
fn r_hat_triangle_inequality_level5() {
    let t = resistance_table(&sg2(), 5).unwrap();
    let rep = t.triangle_violation(10_000, 3);
    assert!(rep.max_violation <= 1e-9, "{rep:?}");
}

#[test]
fn resistance_is_level_consistent_for_the_eigenform() {
    let m = sg2();
    let r: Vec<f64> = (0..=4).map(|n| resistance(&m, n, 0, 2).unwrap()).collect();
    for v in &r {
        assert!((v - 2.0 / 3.0).abs() < 1e-8);
    }
}

#[test]
fn resistance_table_is_symmetric_with_zero_diagonal() {
    let t = resistance_table(&sg2(), 3).unwrap();
    for x in 0..t.count {
        assert_eq!(t.get(x, x), 0.0);
        for y in 0..t.count {
            assert_eq!(t.get(x, y), t.get(y, x));
        }
    }
}

#[test]
fn scaling_inequality_holds_and_injection_is_caught() {
    let m = sg2();
    let t = resistance_table(&m, 5).unwrap();
    let rep = scaling_check(&m, &t, 2, 20, 1);
    assert!(rep.max_violation <= 1e-9, "{rep:?}");
    let wrong = m.with_rho(vec![3.0; 3]).unwrap();
    let tw = resistance_table(&wrong, 5).unwrap();
    let bad = scaling_check(&wrong, &tw, 2, 20, 1);
    assert!(bad.max_violation > 1e-3);
    assert!(bad.witness.is_some());
}

#[test]
fn child_pair_resistance_bound() {
    let m = sg2();
    let t = resistance_table(&m, 4).unwrap();
    // level-1 ids are valid at every finer level
    let tab = m.table(1);
    let (a, b) = (tab.id(&[0], 0), tab.id(&[0], 1));
    assert!(t.get(a, b) <= 2.0 / 3.0 * 0.6 + 1e-12);
}

#[test]
fn euclidean_slope_p2() {
    let m = sg2();
    let t = resistance_table(&m, 6).unwrap();
    let pairs = stratified_corner_pairs(&m, 6, 40, 5);
    let fit = metric_exponent_fit(&m, 6, &pairs, Some(&t)).unwrap();
    let target = (5.0f64 / 3.0).ln() / 2f64.ln();
    println!("{fit:?}");
    assert!((fit.slope - target).abs() < 0.15);
}

#[test]
fn exponent_fit_rejects_single_scale() {
    let m = sg2();
    let pairs = vec![(0, 1), (1, 2), (0, 2)];
    assert!(metric_exponent_fit(&m, 2, &pairs, None).is_err());
}

#[test]
fn p3_slope_is_stable_across_levels() {
    let sg = PcfStructure::sierpinski();
    let e = eigenform_solve(&sg, 3.0, &EigenformOptions { grid: 360, ..Default::default() }).unwrap();
    let m = EnergyModel::new(sg, 3.0, vec![e.rho; 3], e.form).unwrap();
    let s5 = metric_exponent_fit(&m, 5, &stratified_corner_pairs(&m, 5, 6, 2), None).unwrap();
    let s6 = metric_exponent_fit(&m, 6, &stratified_corner_pairs(&m, 6, 6, 2), None).unwrap();
    println!("{} {}", s5.slope, s6.slope);
    assert!(s5.slope > 0.0 && (s5.slope - s6.slope).abs() < 0.1);
}

#[test]
fn hoelder_bound_from_resistance() {
    use rand::{Rng, SeedableRng};
    let m = EnergyModel::new(PcfStructure::sierpinski(), 3.0, vec![2.5; 3], BoundaryForm::unit_triangle()).unwrap();
    let n = 3;
    let (x, y) = (4, 9);
    let (pot, cap) = capacity_potential(&m, n, &[x], &[y]).unwrap();
    let r = 1.0 / cap;
    let d = (pot.values[x] - pot.values[y]).abs().powf(3.0);
    assert!((d - r * energy(&m, &pot).unwrap()).abs() < 1e-8);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let count = m.table(n).vertex_count();
    for _ in 0..100 {
        let u = DiscreteFunction::new(n, (0..count).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let lhs = (u.values[x] - u.values[y]).abs().powf(3.0);
        assert!(lhs <= r * energy(&m, &u).unwrap() * (1.0 + 1e-9));
    }
}

#[test]
fn ahlfors_band() {
    let m = sg2();
    let t = resistance_table(&m, 6).unwrap();
    let s_grid: Vec<f64> = (0..9).map(|k| 0.6f64.powf(k as f64 * 0.5 + 0.5) * 1.2).collect();
    let rep = ahlfors_check(&m, &t, &SelfSimilarMeasure::uniform(3), 20, &s_grid, 8).unwrap();
    println!("band {} {} {} res {}", rep.band_min, rep.band_max, rep.band_ratio, rep.resolution);
    assert!(rep.band_ratio <= 50.0);
    let big = ahlfors_check(&m, &t, &SelfSimilarMeasure::uniform(3), 2, &[10.0], 8).unwrap();
    assert!((big.rows[0].mass - 1.0).abs() < 1e-12);
}

#[test]
fn capacity_profile_exponent() {
    let m = sg2();
    let w = Word::new(vec![0, 1, 2, 1, 0, 2, 1, 0, 1, 2], 3).unwrap();
    let s: Vec<f64> = (0..=9).map(|k| 0.6f64.powi(k)).collect();
    let prof = capacity_profile(&m, &w, 1, &s).unwrap();
    println!("{prof:?}");
    assert!((prof.fitted_exponent + 1.0).abs() < 0.2);
    for k in 1..prof.energies.len() {
        assert!(prof.energies[k] >= prof.energies[k - 1] - 1e-12);
    }
}

#[test]
fn poincare_ratio_is_stable_between_levels() {
    let m = sg2();
    let balls = sample_balls(&m, 50, 1, 3, 21);
    let measure = SelfSimilarMeasure::uniform(3);
    let sup = |n: usize, a: f64| {
        let us: Vec<DiscreteFunction> = [[1.0, 0.0, 0.0], [0.3, -1.0, 0.8]]
            .iter()
            .map(|b| harmonic_extend(&m, b, n).unwrap())
            .collect();
        poincare_check(&m, &measure, &us, &balls, a).unwrap().sup_ratio
    };
    for a in [2.0, 3.0, 5.0] {
        let (r5, r6) = (sup(5, a), sup(6, a));
        println!("A={a}: {r5} {r6}");
        assert!(r5.is_finite() && r5 > 0.0);
        assert!((r5 / r6).max(r6 / r5) < 2.0);
    }
    let c = vec![DiscreteFunction::constant(&m.table(5), 1.0)];
    let rep = poincare_check(&m, &measure, &c, &balls, 3.0).unwrap();
    assert_eq!(rep.sup_ratio, 0.0);
    assert_eq!(rep.skipped, 50);
    let t = resistance_table(&m, 5).unwrap();
    let sw = neighborhood_sandwich(&m, &t, &balls).unwrap();
    println!("{sw:?}");
    assert!(sw.alpha1 > 0.0 && sw.alpha2.is_finite());
}
