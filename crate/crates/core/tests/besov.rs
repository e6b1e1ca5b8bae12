use fractalp_core::besov::{
    critical_exponent_scan, default_r_grid, estimate_j, estimate_j_two, eval_averaged, kernel_comparability,
    ks_limit_estimate, wm_ratio, AveragingGeometry, EuclideanMetric, Evaluable, HarmonicFill, KernelSpec,
    PairSampler, PairSet, PairValues, ResistanceMetric,
};
use fractalp_core::metric::resistance_table;
use fractalp_core::structure::{sample_measure, SampleCloud, SelfSimilarMeasure};
use fractalp_core::{harmonic_extend, DiscreteFunction, EnergyModel};
use proptest::prelude::*;

const S_P: f64 = 1.160_964_047_443_681; // log 5 / (2 log 2)

struct Setup {
    model: EnergyModel,
    measure: SelfSimilarMeasure,
    cloud: SampleCloud,
}

fn setup(points: usize, seed: u64) -> Setup {
    let model = EnergyModel::sierpinski_p2();
    let measure = SelfSimilarMeasure::uniform(3);
    let cloud = sample_measure(model.structure(), &measure, points, 24, seed).unwrap();
    Setup { model, measure, cloud }
}

fn harmonic(m: &EnergyModel, b: [f64; 3]) -> HarmonicFill {
    HarmonicFill::new(m, &harmonic_extend(m, &b, 0).unwrap(), 0).unwrap()
}

fn euclidean_pairs(s: &Setup, grid: &[f64], count: usize, seed: u64) -> Vec<PairSet> {
    let metric = EuclideanMetric::new(s.model.structure()).unwrap();
    let sampler = PairSampler::new(s.model.structure(), &s.measure, &metric);
    grid.iter().map(|&r| sampler.pairs(&s.cloud, r, count, seed, false)).collect()
}

#[test]
fn weak_monotonicity_band_and_divergence() {
    let s = setup(4000, 1);
    let grid = default_r_grid();
    let pairs = euclidean_pairs(&s, &grid, 20_000, 2);
    let u = harmonic(&s.model, [1.0, 0.0, 0.0]);
    let vals: Vec<PairValues> = pairs.iter().map(|ps| PairValues::of(&u, &s.cloud, ps)).collect();
    let prof = |sm: f64| -> Vec<_> {
        vals.iter()
            .zip(&pairs)
            .map(|(v, ps)| estimate_j(&KernelSpec::BallPower { s: sm }, 2.0, v, ps).unwrap())
            .collect()
    };
    let wm = wm_ratio(&prof(S_P)).unwrap();
    println!("wm ratio {}", wm.ratio);
    assert!(wm.ratio <= 30.0);
    let steep = prof(S_P + 0.3);
    let pts: Vec<(f64, f64)> = steep.iter().map(|e| (e.r, e.value)).collect();
    let slope = fractalp_core::metric::log_log_fit(&pts).0;
    println!("divergence slope {slope}");
    assert!(slope <= -0.3 * 2.0 + 0.15);
    let flat = prof(S_P - 0.4);
    let pts: Vec<(f64, f64)> = flat.iter().map(|e| (e.r, e.value)).collect();
    assert!(fractalp_core::metric::log_log_fit(&pts).0 > 0.0);
}

#[test]
fn critical_exponent_scan_recovers_half_walk_dimension() {
    let s = setup(4000, 3);
    let grid = default_r_grid();
    let pairs = euclidean_pairs(&s, &grid, 20_000, 4);
    let fs = [[1.0, 0.0, 0.0], [0.0, 1.0, -1.0], [0.3, -0.7, 1.1]];
    let values: Vec<Vec<PairValues>> = fs
        .iter()
        .map(|b| {
            let u = harmonic(&s.model, *b);
            pairs.iter().map(|ps| PairValues::of(&u, &s.cloud, ps)).collect()
        })
        .collect();
    let s_grid: Vec<f64> = (0..=20).map(|k| 0.8 + 0.04 * k as f64).collect();
    let scan = critical_exponent_scan(2.0, &values, &pairs, &s_grid).unwrap();
    println!("scan {} {:?}", scan.estimate, scan.bracket);
    assert!((scan.estimate - S_P).abs() <= 0.1);
    let (lo, hi) = scan.bracket.unwrap();
    assert!(lo <= scan.estimate && scan.estimate <= hi);
    let constant = vec![values[0].iter().map(|v| v.map(|_| 2.0)).collect::<Vec<_>>()];
    assert!(critical_exponent_scan(2.0, &constant, &pairs, &s_grid).is_err());
}

#[test]
fn sharp_kernel_dominates_and_is_comparable() {
    let s = setup(4000, 5);
    let grid: Vec<f64> = (2..=8).map(|j| 2f64.powi(-j)).collect();
    let pairs = euclidean_pairs(&s, &grid, 20_000, 6);
    let u = harmonic(&s.model, [1.0, -0.4, 0.2]);
    let vals: Vec<PairValues> = pairs.iter().map(|ps| PairValues::of(&u, &s.cloud, ps)).collect();
    let c = kernel_comparability(2.0, S_P, &vals, &pairs).unwrap();
    println!("C' {} {:?}", c.fitted_c, c.ratios);
    assert!(c.dominated);
    assert!(c.ratios.iter().all(|&x| x >= 1.0));
    assert!(c.fitted_c <= 20.0);
    let consts: Vec<PairValues> = vals.iter().map(|v| v.map(|_| 1.0)).collect();
    assert_eq!(kernel_comparability(2.0, S_P, &consts, &pairs).unwrap().fitted_c, 1.0);
}

#[test]
fn two_variable_functional_matches_finite_difference() {
    let s = setup(2000, 7);
    let pairs = euclidean_pairs(&s, &[0.1], 5000, 8).remove(0);
    let f = PairValues::of(&harmonic(&s.model, [1.0, 0.0, 0.0]), &s.cloud, &pairs);
    let g = PairValues::of(&harmonic(&s.model, [0.0, 0.5, -1.0]), &s.cloud, &pairs);
    for p in [1.5, 2.0, 3.0] {
        let k = KernelSpec::BallPower { s: 1.0 };
        let two = estimate_j_two(&k, p, &f, &g, &pairs).unwrap().value;
        let h = 1e-5;
        let jp = estimate_j(&k, p, &f.combine(1.0, &g, h), &pairs).unwrap().value;
        let jm = estimate_j(&k, p, &f.combine(1.0, &g, -h), &pairs).unwrap().value;
        let fd = (jp - jm) / (2.0 * h * p);
        assert!((fd - two).abs() <= 1e-6 * two.abs(), "p={p}: {fd} vs {two}");
        let diag = estimate_j_two(&k, p, &f, &f, &pairs).unwrap().value;
        let j = estimate_j(&k, p, &f, &pairs).unwrap();
        assert!((diag - j.value).abs() <= 1e-12 * j.value);
        let zero = estimate_j_two(&k, p, &f, &g.map(|_| 4.0), &pairs).unwrap().value;
        assert_eq!(zero, 0.0);
    }
}

#[test]
fn ball_mass_matches_refined_enumeration() {
    let s = setup(30, 9);
    let sg = s.model.structure();
    let metric = EuclideanMetric::new(sg).unwrap();
    let coarse = PairSampler::new(sg, &s.measure, &metric);
    let mut fine = PairSampler::new(sg, &s.measure, &metric);
    fine.mass_levels = 7;
    fine.mass_points = 64;
    let mut worst: f64 = 0.0;
    for j in [2, 4, 6, 8] {
        let r = 2f64.powi(-j);
        let a = coarse.pairs(&s.cloud, r, 30, 1, true).ball_mass.unwrap();
        let b = fine.pairs(&s.cloud, r, 30, 1, true).ball_mass.unwrap();
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs() / y);
        }
    }
    println!("ball mass worst relative gap {worst}");
    assert!(worst < 0.02);
    let whole = coarse.pairs(&s.cloud, 4.0, 20, 1, true).ball_mass.unwrap();
    assert!(whole.iter().all(|&m| (m - 1.0).abs() < 1e-12));
}

#[test]
fn doubling_samples_stays_within_pooled_error() {
    let s = setup(3000, 11);
    let metric = EuclideanMetric::new(s.model.structure()).unwrap();
    let sampler = PairSampler::new(s.model.structure(), &s.measure, &metric);
    let u = harmonic(&s.model, [1.0, 0.2, -0.5]);
    let k = KernelSpec::BallPower { s: S_P };
    let trials = 20;
    let mut ok = 0;
    for t in 0..trials {
        let r = 2f64.powi(-(2 + (t % 6)));
        let a = sampler.pairs(&s.cloud, r, 2000, 100 + t as u64, false);
        let b = sampler.pairs(&s.cloud, r, 4000, 900 + t as u64, false);
        let ea = estimate_j(&k, 2.0, &PairValues::of(&u, &s.cloud, &a), &a).unwrap();
        let eb = estimate_j(&k, 2.0, &PairValues::of(&u, &s.cloud, &b), &b).unwrap();
        if (ea.value - eb.value).abs() <= 3.0 * ea.std_error.hypot(eb.std_error) {
            ok += 1;
        }
    }
    println!("{ok}/{trials}");
    assert!(ok as f64 >= 0.95 * trials as f64);
}

#[test]
fn ks_limit_diagnostics() {
    let s = setup(4000, 13);
    let grid = default_r_grid();
    let pairs = euclidean_pairs(&s, &grid, 20_000, 14);
    let k = KernelSpec::BallPower { s: S_P };
    let data = {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = s.model.table(2).vertex_count();
        DiscreteFunction::new(2, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };
    let u = HarmonicFill::new(&s.model, &data, 2).unwrap();
    let prof: Vec<_> = pairs
        .iter()
        .map(|ps| estimate_j(&k, 2.0, &PairValues::of(&u, &s.cloud, ps), ps).unwrap())
        .collect();
    let ks = ks_limit_estimate(&prof).unwrap();
    println!("{ks:?}");
    assert!(ks.max_relative_change < 0.1);
    let c: Vec<_> = pairs
        .iter()
        .map(|ps| estimate_j(&k, 2.0, &PairValues::of(&u, &s.cloud, ps).map(|_| 1.0), ps).unwrap())
        .collect();
    assert_eq!(ks_limit_estimate(&c).unwrap().estimate, 0.0);
    let mut rev = prof.clone();
    rev.reverse();
    assert!(ks_limit_estimate(&rev).is_err());
}

#[test]
fn averaged_kernel_of_constants_vanishes_and_is_positive_otherwise() {
    let s = setup(500, 15);
    let metric = EuclideanMetric::new(s.model.structure()).unwrap();
    let pairs = PairSampler::new(s.model.structure(), &s.measure, &metric).pairs(&s.cloud, 0.2, 2000, 1, true);
    let geom = AveragingGeometry {
        d_f: 3f64.ln() / 2f64.ln(),
        r_star: 0.5,
        levels: vec![1; 3],
    };
    struct Const;
    impl Evaluable for Const {
        fn eval(&self, _: &[u8]) -> f64 {
            3.0
        }
    }
    let z = eval_averaged(2, S_P, 2.0, &Const, &s.cloud, &pairs, &s.measure, &geom, 4).unwrap();
    assert_eq!(z.value, 0.0);
    let u = harmonic(&s.model, [1.0, 0.0, 0.0]);
    let e = eval_averaged(2, S_P, 2.0, &u, &s.cloud, &pairs, &s.measure, &geom, 4).unwrap();
    assert!(e.value > 0.0 && e.std_error >= 0.0);
}

#[test]
fn resistance_mode_scan_tracks_resistance_exponent() {
    let s = setup(2000, 17);
    let table = resistance_table(&s.model, 5).unwrap();
    let metric = ResistanceMetric::new(&s.model, table);
    let sampler = PairSampler::new(s.model.structure(), &s.measure, &metric);
    let grid: Vec<f64> = (1..=7).map(|j| 0.6f64.powi(j)).collect();
    let pairs: Vec<PairSet> = grid.iter().map(|&r| sampler.pairs(&s.cloud, r, 10_000, 5, false)).collect();
    let u = harmonic(&s.model, [1.0, 0.0, 0.0]);
    let values = vec![pairs.iter().map(|ps| PairValues::of(&u, &s.cloud, ps)).collect::<Vec<_>>()];
    let s_grid: Vec<f64> = (0..=20).map(|k| 1.2 + 0.04 * k as f64).collect();
    let scan = critical_exponent_scan(2.0, &values, &pairs, &s_grid).unwrap();
    let d_fp = 3f64.ln() / (5f64 / 3.0).ln();
    let target = (d_fp + 1.0) / 2.0;
    println!("resistance scan {} target {target}", scan.estimate);
    assert!((scan.estimate - target).abs() <= 0.15);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 20, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn unit_contraction_never_increases_the_estimate(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let s = setup(200, seed);
        let pairs = euclidean_pairs(&s, &[0.25], 400, seed).remove(0);
        let u = PairValues::of(&harmonic(&s.model, [a, b, 1.0]), &s.cloud, &pairs);
        let v = u.map(|x| x.clamp(0.0, 1.0));
        for p in [1.5, 2.0, 3.0] {
            let k = KernelSpec::DistancePower { s_p: S_P };
            let ju = estimate_j(&k, p, &u, &pairs).unwrap().value;
            let jv = estimate_j(&k, p, &v, &pairs).unwrap().value;
            prop_assert!(jv <= ju);
        }
    }

    #[test]
    fn sharp_kernel_dominates_on_every_sample(seed in 0u64..1000, j in 2i32..8) {
        let s = setup(200, seed);
        let pairs = euclidean_pairs(&s, &[2f64.powi(-j)], 300, seed).remove(0);
        let u = PairValues::of(&harmonic(&s.model, [1.0, 0.0, 0.0]), &s.cloud, &pairs);
        let sharp = estimate_j(&KernelSpec::DistancePower { s_p: S_P }, 2.0, &u, &pairs).unwrap();
        let ball = estimate_j(&KernelSpec::BallPower { s: S_P }, 2.0, &u, &pairs).unwrap();
        prop_assert!(sharp.value >= ball.value);
    }
}
