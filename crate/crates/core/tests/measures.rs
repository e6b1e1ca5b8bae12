use fractalp_core::measures::{
    bump_function, cell_energy_measure, chain_rule_check, psi_cell_comparison, psi_functional,
    strong_locality_check, two_variable_measure,
};
use fractalp_core::structure::Word;
use fractalp_core::{energy, energy_two, harmonic_extend, BoundaryForm, DiscreteFunction, EnergyModel, PcfStructure};
use proptest::prelude::*;

fn model(p: f64, rho: f64) -> EnergyModel {
    EnergyModel::new(PcfStructure::sierpinski(), p, vec![rho; 3], BoundaryForm::unit_triangle()).unwrap()
}

fn rough(level: usize, seed: u64) -> DiscreteFunction {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = PcfStructure::sierpinski().table(level).vertex_count();
    DiscreteFunction::new(level, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

#[test]
fn constant_function_has_zero_measure() {
    let m = model(3.0, 2.0);
    let c = DiscreteFunction::constant(&m.table(4), 2.5);
    assert!(cell_energy_measure(&m, &c, 2).unwrap().mass.iter().all(|&x| x == 0.0));
}

#[test]
fn measures_refine_consistently() {
    let m = model(2.5, 1.9);
    let u = rough(5, 3);
    let fine = cell_energy_measure(&m, &u, 3).unwrap();
    let coarse = cell_energy_measure(&m, &u, 1).unwrap();
    let agg = fine.coarsen(3, 1);
    for (a, b) in agg.mass.iter().zip(&coarse.mass) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn two_variable_measure_matches_finite_differences() {
    let p = 2.5;
    let m = model(p, 2.2);
    let u = rough(4, 11);
    let v = rough(4, 12);
    let two = two_variable_measure(&m, &u, &v, 2).unwrap();
    let h = 1e-5;
    let plus = cell_energy_measure(&m, &u.zip(&v, |a, b| a + h * b), 2).unwrap();
    let minus = cell_energy_measure(&m, &u.zip(&v, |a, b| a - h * b), 2).unwrap();
    for w in 0..two.mass.len() {
        let fd = (plus.mass[w] - minus.mass[w]) / (2.0 * h * p);
        let scale = two.mass[w].abs().max(1e-3 * plus.mass[w]);
        assert!((fd - two.mass[w]).abs() / scale < 1e-6, "cell {w}: {fd} vs {}", two.mass[w]);
    }
    let total = energy_two(&m, &u, &v).unwrap();
    assert!((two.total() - total).abs() < 1e-10 * total.abs().max(1.0));
}

#[test]
fn two_variable_measure_diagonal_and_constant() {
    let m = model(3.0, 2.0);
    let u = rough(4, 5);
    let d = two_variable_measure(&m, &u, &u, 2).unwrap();
    let g = cell_energy_measure(&m, &u, 2).unwrap();
    for (a, b) in d.mass.iter().zip(&g.mass) {
        assert!((a - b).abs() <= 1e-12 * b);
    }
    let c = DiscreteFunction::constant(&m.table(4), -1.0);
    assert!(two_variable_measure(&m, &u, &c, 2).unwrap().mass.iter().all(|&x| x == 0.0));
}

#[test]
fn chain_rule_linear_maps_are_exact() {
    let m = EnergyModel::sierpinski_p2();
    let u = harmonic_extend(&m, &[1.0, 0.0, 0.0], 5).unwrap();
    let id = chain_rule_check(&m, &u, |t| t, |_| 1.0, 2).unwrap();
    assert!(id.max_error < 1e-12);
    let lin = chain_rule_check(&m, &u, |t| -3.0 * t, |_| -3.0, 2).unwrap();
    assert!(lin.max_error < 1e-12);
}

#[test]
fn chain_rule_square_converges() {
    let m = EnergyModel::sierpinski_p2();
    let errs: Vec<f64> = (5..=7)
        .map(|d| {
            let u = harmonic_extend(&m, &[1.0, 0.0, 0.0], d).unwrap();
            chain_rule_check(&m, &u, |t| t * t, |t| 2.0 * t, 2).unwrap().max_error
        })
        .collect();
    println!("{errs:?}");
    assert!(errs[0] > errs[1] && errs[1] > errs[2]);
}

#[test]
fn psi_is_nonnegative_for_nonnegative_test_functions() {
    for p in [1.5, 2.0, 3.0] {
        let m = model(p, 2f64.powf(p - 1.0) * 1.2);
        let u = rough(4, 7);
        let phi = bump_function(&m, &[1, 5], 2, 4).unwrap();
        let v = psi_functional(&m, &u, &phi).unwrap();
        assert!(v >= -1e-9, "p={p}: {v}");
    }
}

#[test]
fn psi_of_soft_indicator_approaches_cell_mass() {
    let m = EnergyModel::sierpinski_p2();
    let w = Word::new(vec![0, 1], 3).unwrap();
    let gaps: Vec<f64> = (4..=6)
        .map(|d| psi_cell_comparison(&m, &[1.0, -0.3, 0.2], &w, d).unwrap().relative_gap)
        .collect();
    println!("{gaps:?}");
    assert!(gaps[2] < gaps[0]);
}

#[test]
fn strong_locality_with_disjoint_bumps() {
    for p in [1.5, 2.0, 3.0] {
        let m = model(p, 2.0);
        let depth = 5;
        // K_00 and K_11 with their neighbours do not overlap
        let f1 = bump_function(&m, &[0], 2, depth).unwrap();
        let f2 = bump_function(&m, &[4], 2, depth).unwrap();
        let v = rough(depth, 9);
        let rep = strong_locality_check(&m, &f1, &f2, &v, 1).unwrap();
        assert!(rep.passed, "{rep:?}");
        let c = rep.items.iter().find(|i| i.item == "c").unwrap();
        assert!(c.cells_checked > 0);
        let shifted = f1.map(|x| x + 4.0);
        let rep2 = strong_locality_check(&m, &f1, &shifted, &v, 2).unwrap();
        let b = rep2.items.iter().find(|i| i.item == "b").unwrap();
        assert_eq!(b.cells_skipped, 0);
        assert!(rep2.passed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 20, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn total_mass_is_energy(seed in 0u64..1000, pi in 0usize..3, n in 0usize..=2) {
        let p = [1.5, 2.0, 3.0][pi];
        let m = model(p, 1.7);
        let u = rough(n + 2, seed);
        let mu = cell_energy_measure(&m, &u, n).unwrap();
        let e = energy(&m, &u).unwrap();
        prop_assert!((mu.total() - e).abs() / e < 1e-12);
    }

    #[test]
    fn per_cell_holder_and_triangle(seed in 0u64..1000, pi in 0usize..3) {
        let p = [1.5, 2.0, 3.0][pi];
        let m = model(p, 1.7);
        let u = rough(4, seed);
        let v = rough(4, seed + 5000);
        let gu = cell_energy_measure(&m, &u, 2).unwrap();
        let gv = cell_energy_measure(&m, &v, 2).unwrap();
        let guv = two_variable_measure(&m, &u, &v, 2).unwrap();
        let gs = cell_energy_measure(&m, &u.zip(&v, |a, b| a + b), 2).unwrap();
        for w in 0..gu.mass.len() {
            let bound = gu.mass[w].powf((p - 1.0) / p) * gv.mass[w].powf(1.0 / p);
            prop_assert!(guv.mass[w].abs() <= bound + 1e-9);
            let lhs = gs.mass[w].powf(1.0 / p);
            prop_assert!(lhs <= gu.mass[w].powf(1.0 / p) + gv.mass[w].powf(1.0 / p) + 1e-9);
        }
    }

    #[test]
    fn unit_contraction_shrinks_every_cell(seed in 0u64..1000, pi in 0usize..3) {
        let p = [1.5, 2.0, 3.0][pi];
        let m = model(p, 1.7);
        let u = rough(4, seed).map(|x| 1.5 * x);
        let c = u.map(|x| x.clamp(0.0, 1.0));
        let gu = cell_energy_measure(&m, &u, 2).unwrap();
        let gc = cell_energy_measure(&m, &c, 2).unwrap();
        for w in 0..gu.mass.len() {
            prop_assert!(gc.mass[w] <= gu.mass[w] + 1e-12);
        }
    }
}
