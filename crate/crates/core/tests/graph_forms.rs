use fractalp_core::{
    dirichlet_solve, energy, harmonic_extend, BoundaryForm, DiscreteFunction, EnergyModel, PcfStructure,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn triangle_model(p: f64, rho: f64) -> EnergyModel {
    EnergyModel::new(PcfStructure::sierpinski(), p, vec![rho; 3], BoundaryForm::unit_triangle()).unwrap()
}

// sum over cells of rho^n * sum_{i<j} |f_i - f_j|^p, written out directly
fn energy_by_hand(m: &EnergyModel, f: &DiscreteFunction, rho: f64) -> f64 {
    let t = m.structure().table(f.level);
    let mut total = 0.0;
    for w in 0..t.cell_count() {
        let c = t.cell(w);
        for i in 0..3 {
            for j in i + 1..3 {
                total += (f.values[c[i] as usize] - f.values[c[j] as usize]).abs().powf(m.p());
            }
        }
    }
    rho.powi(f.level as i32) * total
}

// harmonic extension at p = 2 by a dense solve of the graph Laplacian
fn laplacian_harmonic(n: usize, boundary: &[f64]) -> Vec<f64> {
    let sg = PcfStructure::sierpinski();
    let t = sg.table(n);
    let nv = t.vertex_count();
    let mut l = DMatrix::<f64>::zeros(nv, nv);
    for w in 0..t.cell_count() {
        let c = t.cell(w);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    let (a, b) = (c[i] as usize, c[j] as usize);
                    l[(a, a)] += 1.0;
                    l[(a, b)] -= 1.0;
                }
            }
        }
    }
    let k = nv - 3;
    let lii = l.view((3, 3), (k, k)).into_owned();
    let lib = l.view((3, 0), (k, 3)).into_owned();
    let rhs = -(lib * DVector::from_column_slice(boundary));
    let interior = lii.lu().solve(&rhs).unwrap();
    boundary.iter().copied().chain(interior.iter().copied()).collect()
}

#[test]
fn p2_harmonic_extension_matches_dense_laplacian() {
    let m = EnergyModel::sierpinski_p2();
    for b in [[1.0, 0.0, 0.0], [0.2, -1.3, 0.7]] {
        for n in 1..5 {
            let u = harmonic_extend(&m, &b, n).unwrap();
            let oracle = laplacian_harmonic(n, &b);
            let err = u.values.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "level {n}: {err}");
        }
    }
}

#[test]
fn energy_matches_direct_cell_sum() {
    for p in [1.5, 2.0, 3.0] {
        let rho = 2f64.powf(p - 1.0) * 1.1;
        let m = triangle_model(p, rho);
        let t = m.structure().table(3);
        let f = DiscreteFunction::new(3, (0..t.vertex_count()).map(|v| ((v * 7919) % 13) as f64 / 13.0).collect());
        let e = energy(&m, &f).unwrap();
        let oracle = energy_by_hand(&m, &f, rho);
        assert!((e - oracle).abs() <= 1e-12 * oracle, "p={p}");
    }
}

#[test]
fn dirichlet_with_boundary_constraints_is_the_harmonic_extension() {
    let m = triangle_model(3.0, 3.456);
    let b = [0.4, -0.2, 1.0];
    let h = harmonic_extend(&m, &b, 3).unwrap();
    let d = dirichlet_solve(&m, 3, &[(0, 0.4), (1, -0.2), (2, 1.0)]).unwrap();
    assert_eq!(h, d);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, rng_algorithm: proptest::test_runner::RngAlgorithm::ChaCha, ..ProptestConfig::default() })]

    #[test]
    fn harmonic_extensions_obey_the_maximum_principle(
        b in prop::array::uniform3(-2.0f64..2.0),
        pi in 0usize..3,
    ) {
        let p = [1.5, 2.0, 3.0][pi];
        let m = triangle_model(p, 2f64.powf(p - 1.0) * 1.2);
        let u = harmonic_extend(&m, &b, 3).unwrap();
        let (lo, hi) = (b[0].min(b[1]).min(b[2]), b[0].max(b[1]).max(b[2]));
        for &v in &u.values {
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }

    #[test]
    fn harmonic_extension_minimizes_energy(
        b in prop::array::uniform3(-1.0f64..1.0),
        bump in prop::collection::vec(-0.05f64..0.05, 12),
        pi in 0usize..3,
    ) {
        let p = [1.5, 2.0, 3.0][pi];
        let m = triangle_model(p, 2f64.powf(p - 1.0) * 1.2);
        let u = harmonic_extend(&m, &b, 2).unwrap();
        let mut v = u.clone();
        for (i, d) in bump.iter().enumerate().take(v.values.len() - 3) {
            v.values[i + 3] += d;
        }
        let (eu, ev) = (energy(&m, &u).unwrap(), energy(&m, &v).unwrap());
        prop_assert!(ev >= eu - 1e-10 * (1.0 + eu));
    }

    #[test]
    fn energy_is_p_homogeneous_and_shift_invariant(
        vals in prop::collection::vec(-1.0f64..1.0, 15),
        lambda in -3.0f64..3.0,
        c in -5.0f64..5.0,
    ) {
        let m = triangle_model(3.0, 4.4);
        let f = DiscreteFunction::new(2, vals);
        let e = energy(&m, &f).unwrap();
        let scaled = energy(&m, &f.map(|x| lambda * x + c)).unwrap();
        prop_assert!((scaled - lambda.abs().powi(3) * e).abs() <= 1e-10 * (1.0 + scaled));
    }
}
