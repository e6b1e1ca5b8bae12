//! Run configuration: a TOML document, or a built-in preset, with flag overrides.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub preset: String,
    pub p: f64,
    pub seed: u64,
    /// Level for solve/structure/measures outputs.
    pub level: usize,
    /// Fine level used by measures (cell energies are read at `level`).
    pub depth: usize,
    pub eigenform: EigenformConfig,
    pub besov: BesovConfig,
    pub metric: MetricConfig,
    pub gc: GcConfig,
    pub chain: ChainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigenformConfig {
    pub grid: usize,
    pub max_iter: usize,
    pub tol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Euclidean,
    Resistance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BesovConfig {
    /// Pairs per radius.
    pub samples: usize,
    pub cloud: usize,
    pub cloud_depth: usize,
    /// Radii 2^{-j} for j in r_exponents[0]..=r_exponents[1].
    pub r_exponents: [i32; 2],
    pub metric: MetricKind,
    /// Level of the resistance table behind the resistance metric.
    pub resistance_level: usize,
    pub scan: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub level: usize,
    pub triples: usize,
    pub fit_level: usize,
    pub pairs_per_level: usize,
    pub balls: usize,
    pub inflation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GcConfig {
    pub trials: usize,
    pub level: usize,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    pub cell_level: usize,
    pub depths: [usize; 2],
}

impl Default for Config {
    fn default() -> Self {
        Config {
            preset: "sg".into(),
            p: 2.0,
            seed: 7,
            level: 5,
            depth: 7,
            eigenform: EigenformConfig::default(),
            besov: BesovConfig::default(),
            metric: MetricConfig::default(),
            gc: GcConfig::default(),
            chain: ChainConfig::default(),
        }
    }
}

impl Default for EigenformConfig {
    fn default() -> Self {
        EigenformConfig {
            grid: 720,
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

impl Default for BesovConfig {
    fn default() -> Self {
        BesovConfig {
            samples: 200_000,
            cloud: 20_000,
            cloud_depth: 24,
            r_exponents: [2, 9],
            metric: MetricKind::Euclidean,
            resistance_level: 6,
            scan: [0.8, 1.6, 0.02],
        }
    }
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            level: 5,
            triples: 10_000,
            fit_level: 6,
            pairs_per_level: 40,
            balls: 50,
            inflation: 3.0,
        }
    }
}

impl Default for GcConfig {
    fn default() -> Self {
        GcConfig {
            trials: 1000,
            level: 3,
            tolerance: 1e-9,
        }
    }
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            cell_level: 2,
            depths: [5, 8],
        }
    }
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

impl Config {
    pub fn preset(name: &str) -> Option<Config> {
        match name {
            "sg" => Some(Config::default()),
            _ => None,
        }
    }

    /// Parses a TOML document. A `preset` key selects the base values that the
    /// remaining keys override.
    pub fn from_toml(text: &str) -> Result<Config, ConfigError> {
        let raw: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let base_name = raw
            .get("preset")
            .and_then(|v| v.as_str())
            .unwrap_or("sg")
            .to_string();
        let base = Config::preset(&base_name).ok_or_else(|| invalid("preset", format!("unknown preset `{base_name}`")))?;
        let mut merged = toml::Value::try_from(&base).expect("config serializes");
        merge(&mut merged, raw);
        let cfg: Config = merged
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(invalid("p", "must be a finite number above 1"));
        }
        if self.depth < self.level + 2 {
            return Err(invalid("depth", "must be at least level + 2"));
        }
        if self.eigenform.grid < 12 {
            return Err(invalid("eigenform.grid", "needs at least 12 directions"));
        }
        let b = &self.besov;
        if b.samples < crate::besov::BATCHES {
            return Err(invalid("besov.samples", "needs at least one pair per batch"));
        }
        if b.cloud == 0 || b.cloud_depth == 0 {
            return Err(invalid("besov.cloud", "cloud size and depth must be positive"));
        }
        if b.r_exponents[1] < b.r_exponents[0] + 3 {
            return Err(invalid("besov.r_exponents", "need at least four radii"));
        }
        if !(b.scan[2] > 0.0 && b.scan[1] > b.scan[0]) {
            return Err(invalid("besov.scan", "expected [start, end, step] with end > start"));
        }
        if self.chain.depths[1] < self.chain.depths[0] || self.chain.depths[0] < self.chain.cell_level + 2 {
            return Err(invalid("chain.depths", "need cell_level + 2 <= first <= last"));
        }
        if self.gc.trials == 0 {
            return Err(invalid("gc.trials", "must be positive"));
        }
        Ok(())
    }

    pub fn r_grid(&self) -> Vec<f64> {
        let [a, b] = self.besov.r_exponents;
        (a..=b).map(|j| 2f64.powi(-j)).collect()
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_on_top_of_preset() {
        let c = Config::from_toml("p = 3.0\n[besov]\nsamples = 1000\n").unwrap();
        assert_eq!(c.p, 3.0);
        assert_eq!(c.besov.samples, 1000);
        assert_eq!(c.besov.cloud, 20_000);
    }

    #[test]
    fn schema_errors_name_the_key() {
        let e = Config::from_toml("[besov]\nsampels = 3\n").unwrap_err();
        assert!(e.to_string().contains("sampels"), "{e}");
        let e = Config::from_toml("[gc]\ntrials = 0\n").unwrap_err();
        assert!(e.to_string().contains("gc.trials"));
        assert!(Config::from_toml("p = [").is_err());
    }
}
