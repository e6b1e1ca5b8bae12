use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use fractalp_bench::BesovFixture;
use fractalp_core::besov::{estimate_j, KernelSpec, PairValues};
use fractalp_core::{energy, harmonic_extend, BoundaryForm, EnergyModel, PcfStructure};

fn graph_energy(c: &mut Criterion) {
    let model = EnergyModel::sierpinski_p2();
    let mut g = c.benchmark_group("energy");
    for level in [4, 6] {
        let u = harmonic_extend(&model, &[1.0, 0.0, 0.3], level).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(level), &u, |b, u| {
            b.iter(|| energy(&model, black_box(u)).unwrap())
        });
    }
    g.finish();
}

fn harmonic(c: &mut Criterion) {
    let mut g = c.benchmark_group("harmonic_extend");
    g.sample_size(10);
    for p in [2.0, 3.0] {
        let model = EnergyModel::new(PcfStructure::sierpinski(), p, vec![2f64.powf(p - 1.0) * 1.2; 3], BoundaryForm::unit_triangle()).unwrap();
        g.bench_with_input(BenchmarkId::new("level4", p), &model, |b, m| {
            b.iter(|| harmonic_extend(m, black_box(&[1.0, 0.0, -0.5]), 4).unwrap())
        });
    }
    g.finish();
}

fn besov(c: &mut Criterion) {
    let fx = BesovFixture::sierpinski(2000);
    let mut g = c.benchmark_group("besov");
    g.sample_size(10);
    g.bench_function("pairs_r2^-5_n5000", |b| b.iter(|| fx.pairs(black_box(1.0 / 32.0), 5000)));
    let pairs = fx.pairs(1.0 / 32.0, 20_000);
    let u = fx.harmonic(&[1.0, 0.0, 0.0]);
    let values = PairValues::of(&u, &fx.cloud, &pairs);
    g.bench_function("estimate_j_n20000", |b| {
        b.iter(|| estimate_j(&KernelSpec::BallPower { s: 1.16 }, 2.0, black_box(&values), &pairs).unwrap())
    });
    g.finish();
}

criterion_group!(benches, graph_energy, harmonic, besov);
criterion_main!(benches);
