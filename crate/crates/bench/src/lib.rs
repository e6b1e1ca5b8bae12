//! Shared fixtures for the benchmarks.

use fractalp_core::besov::{EuclideanMetric, HarmonicFill, PairSampler, PairSet};
use fractalp_core::structure::{sample_measure, SampleCloud};
use fractalp_core::{harmonic_extend, EnergyModel, SelfSimilarMeasure};

pub struct BesovFixture {
    pub model: EnergyModel,
    pub measure: SelfSimilarMeasure,
    pub metric: EuclideanMetric,
    pub cloud: SampleCloud,
}

impl BesovFixture {
    pub fn sierpinski(cloud: usize) -> Self {
        let model = EnergyModel::sierpinski_p2();
        let measure = SelfSimilarMeasure::uniform(3);
        let metric = EuclideanMetric::new(model.structure()).expect("planar preset");
        let cloud = sample_measure(model.structure(), &measure, cloud, 24, 7).expect("cloud");
        BesovFixture { model, measure, metric, cloud }
    }

    pub fn pairs(&self, r: f64, count: usize) -> PairSet {
        PairSampler::new(self.model.structure(), &self.measure, &self.metric).pairs(&self.cloud, r, count, 7, false)
    }

    pub fn harmonic(&self, boundary: &[f64]) -> HarmonicFill {
        let u = harmonic_extend(&self.model, boundary, 0).expect("harmonic");
        HarmonicFill::new(&self.model, &u, 6).expect("fill")
    }
}
