//! TOML experiment configuration and its eager, field-addressed validation.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_sim::{BundleShock, FeatureSource, MarketInstance};
use crate::policies::{BenchmarkMode, PolicyKind, PolicySettings, RefitSchedule};
use crate::pricing_oracle::PriceBox;
use crate::shock_dist::{ShockDistribution, ShockRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub benchmark_mode: BenchmarkMode,
    pub policies: Vec<PolicyKind>,
    pub horizons: Vec<usize>,
    pub seeds: SeedSpec,
    /// Feature draws used to estimate `q*` and the fixed-best mechanism.
    #[serde(default = "default_q_star_samples")]
    pub q_star_samples: usize,
    /// Write one CSV per episode.
    #[serde(default = "default_true")]
    pub record_episodes: bool,
    #[serde(default)]
    pub settings: PolicySettings,
    pub instance: InstanceConfig,
}

fn default_q_star_samples() -> usize {
    10_000
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range { count: u64, #[serde(default)] first: u64 },
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range { count, first } => (*first..first + count).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub dim: usize,
    /// Either both vectors, or `generator_seed` to draw them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_f: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_seed: Option<u64>,
    pub theta_bar: f64,
    pub price_box: [f64; 2],
    pub features: FeatureConfig,
    pub focal: ShockRecord,
    pub ancillary: ShockRecord,
    /// A shock law, or `{ kind = "convolution", params = [] }`.
    pub bundle: ShockRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FeatureConfig {
    IidUnitBall,
    IidGaussianNormalized,
    /// Path relative to the config file.
    FixedSequence { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<FieldError>),
}

impl ConfigError {
    pub fn fields(&self) -> &[FieldError] {
        match self {
            ConfigError::Validation(v) => v,
            ConfigError::Parse { .. } => &[],
        }
    }
}

/// A config that passed validation, with its instance built.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub instance: MarketInstance,
}

/// Reads and validates a config; relative paths resolve against its directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<LoadedConfig, ConfigError> {
    let path = path.as_ref();
    let parse_err = |message: String| ConfigError::Parse { path: path.to_path_buf(), message };
    let text = std::fs::read_to_string(path).map_err(|e| parse_err(e.to_string()))?;
    let config: ExperimentConfig = toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let instance = validate(&config, base)?;
    Ok(LoadedConfig { config, instance })
}

pub fn to_toml(config: &ExperimentConfig) -> String {
    toml::to_string(config).expect("config serializes")
}

/// Checks every field and reports all problems at once.
pub fn validate(config: &ExperimentConfig, base: &Path) -> Result<MarketInstance, ConfigError> {
    let mut errs = Vec::new();
    let mut err = |field: &str, message: String| errs.push(FieldError { field: field.to_string(), message });

    if config.policies.is_empty() {
        err("policies", "at least one policy is required".into());
    }
    if config.horizons.is_empty() || config.horizons.contains(&0) {
        err("horizons", "need at least one horizon, all positive".into());
    }
    let seeds = config.seeds.seeds();
    if seeds.is_empty() {
        err("seeds", "at least one seed is required".into());
    }
    if config.q_star_samples == 0 {
        err("q_star_samples", "must be positive".into());
    }
    let s = &config.settings;
    if !(s.lambda >= 1.0) {
        err("settings.lambda", format!("must be at least 1, got {}", s.lambda));
    }
    if !(s.radius_scale > 0.0 && s.radius_scale.is_finite()) {
        err("settings.radius_scale", format!("must be positive, got {}", s.radius_scale));
    }
    if s.refit == RefitSchedule::Doubling {
        log::warn!("settings.refit = doubling: estimators are refit only at powers of two");
    }

    let inst = &config.instance;
    if inst.dim == 0 {
        err("instance.dim", "must be positive".into());
    }
    if !(inst.theta_bar > 0.0 && inst.theta_bar.is_finite()) {
        err("instance.theta_bar", format!("must be positive, got {}", inst.theta_bar));
    }
    let price_box = match PriceBox::new(inst.price_box[0], inst.price_box[1]) {
        Ok(b) => Some(b),
        Err(e) => {
            err("instance.price_box", e.to_string());
            None
        }
    };
    let thetas = match (&inst.theta_f, &inst.theta_a, inst.generator_seed) {
        (Some(f), Some(a), None) => {
            let mut ok = true;
            for (name, th) in [("instance.theta_f", f), ("instance.theta_a", a)] {
                if th.len() != inst.dim {
                    err(name, format!("has {} entries, dim is {}", th.len(), inst.dim));
                    ok = false;
                } else if norm(th) > inst.theta_bar + 1e-12 {
                    err(name, format!("norm {} exceeds theta_bar = {} (parameters must lie in the theta_bar ball)", norm(th), inst.theta_bar));
                    ok = false;
                }
            }
            if ok {
                let sum: Vec<f64> = f.iter().zip(a).map(|(x, y)| x + y).collect();
                if norm(&sum) > inst.theta_bar + 1e-12 {
                    err(
                        "instance.theta_f",
                        format!(
                            "theta_f + theta_a has norm {} > theta_bar = {} (the bundle parameter must lie in the theta_bar ball)",
                            norm(&sum),
                            inst.theta_bar
                        ),
                    );
                    ok = false;
                }
            }
            ok.then(|| (f.clone(), a.clone()))
        }
        (None, None, Some(seed)) if inst.dim > 0 && inst.theta_bar > 0.0 => Some(generate_thetas(inst.dim, inst.theta_bar, seed)),
        (None, None, Some(_)) => None,
        _ => {
            err("instance.theta_f", "give both theta_f and theta_a, or generator_seed alone".into());
            None
        }
    };
    let mut shock = |field: &str, rec: &ShockRecord| match ShockDistribution::try_from(rec) {
        Ok(d) => Some(d),
        Err(e) => {
            err(field, e.to_string());
            None
        }
    };
    let focal = shock("instance.focal", &inst.focal);
    let ancillary = shock("instance.ancillary", &inst.ancillary);
    let bundle = if inst.bundle.kind.eq_ignore_ascii_case("convolution") {
        if !inst.bundle.params.is_empty() {
            err("instance.bundle", "convolution takes no parameters".into());
        }
        Some(BundleShock::Convolution)
    } else {
        shock("instance.bundle", &inst.bundle).map(BundleShock::Explicit)
    };
    let features = match &inst.features {
        FeatureConfig::IidUnitBall => Some(FeatureSource::IidUnitBall),
        FeatureConfig::IidGaussianNormalized => Some(FeatureSource::IidGaussianNormalized),
        FeatureConfig::FixedSequence { path } => match FeatureSource::fixed_sequence(base.join(path), inst.dim) {
            Ok(src) => {
                if let FeatureSource::FixedSequence { rows, .. } = &src {
                    if let Some(&t) = config.horizons.iter().max() {
                        if rows.len() < t {
                            err("instance.features.path", format!("{} rows, but the longest horizon is {t}", rows.len()));
                        }
                    }
                }
                Some(src)
            }
            Err(e) => {
                err("instance.features.path", e.to_string());
                None
            }
        },
    };
    if !errs.is_empty() {
        return Err(ConfigError::Validation(errs));
    }
    let (theta_f, theta_a) = thetas.expect("validated");
    MarketInstance::new(
        theta_f,
        theta_a,
        focal.expect("validated"),
        ancillary.expect("validated"),
        bundle.expect("validated"),
        price_box.expect("validated"),
        inst.theta_bar,
        features.expect("validated"),
    )
    .map_err(|e| ConfigError::Validation(vec![FieldError { field: "instance".into(), message: e.to_string() }]))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Draws `theta_f` and `theta_a` uniformly from the ball of radius
/// `theta_bar / 2`, so their sum stays in the `theta_bar` ball.
pub fn generate_thetas(dim: usize, theta_bar: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || {
        let x = crate::market_sim::gen_feature(&FeatureSource::IidUnitBall, dim, 1, &mut rng).expect("iid source");
        x.into_iter().map(|v| v * theta_bar / 2.0).collect::<Vec<_>>()
    };
    let f = draw();
    let a = draw();
    (f, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_config() -> ExperimentConfig {
        ExperimentConfig {
            name: "standard".into(),
            output_dir: "out".into(),
            benchmark_mode: BenchmarkMode::PureUnbundle,
            policies: vec![PolicyKind::Alg1, PolicyKind::Oracle],
            horizons: vec![100, 200],
            seeds: SeedSpec::Range { count: 2, first: 0 },
            q_star_samples: 1000,
            record_episodes: true,
            settings: PolicySettings::default(),
            instance: InstanceConfig {
                dim: 2,
                theta_f: Some(vec![0.3, -0.2]),
                theta_a: Some(vec![0.1, 0.25]),
                generator_seed: None,
                theta_bar: 0.5,
                price_box: [0.1, 1.0],
                features: FeatureConfig::IidUnitBall,
                focal: ShockRecord { kind: "uniform".into(), params: vec![-2.0, 2.0] },
                ancillary: ShockRecord { kind: "uniform".into(), params: vec![-2.0, 2.0] },
                bundle: ShockRecord { kind: "uniform".into(), params: vec![-2.0, 2.0] },
            },
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = sample_config();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, to_toml(&cfg)).unwrap();
        assert_eq!(load_config(&p).unwrap().config, cfg);
    }

    #[test]
    fn missing_file_names_the_path() {
        let e = load_config("/no/such/file.toml").unwrap_err();
        assert!(matches!(&e, ConfigError::Parse { path, .. } if path.ends_with("file.toml")));
        assert!(e.to_string().contains("/no/such/file.toml"));
    }

    #[test]
    fn validation_names_fields() {
        let mut cfg = sample_config();
        cfg.instance.theta_f = Some(vec![0.6, 0.0]);
        let e = validate(&cfg, Path::new(".")).unwrap_err();
        assert_eq!(e.fields()[0].field, "instance.theta_f");
        assert!(e.fields()[0].message.contains("theta_bar ball"));

        let mut cfg = sample_config();
        cfg.instance.theta_f = Some(vec![0.4, 0.0]);
        cfg.instance.theta_a = Some(vec![0.3, 0.0]);
        assert!(validate(&cfg, Path::new(".")).unwrap_err().fields()[0].message.contains("theta_f + theta_a"));

        let mut cfg = sample_config();
        cfg.horizons.clear();
        cfg.instance.focal.kind = "cauchy".into();
        cfg.settings.lambda = 0.5;
        let fields: Vec<_> = validate(&cfg, Path::new(".")).unwrap_err().fields().iter().map(|f| f.field.clone()).collect();
        assert_eq!(fields, ["horizons", "settings.lambda", "instance.focal"]);
    }

    #[test]
    fn generated_thetas_are_in_the_ball() {
        for seed in 0..50 {
            let (f, a) = generate_thetas(3, 0.5, seed);
            let sum: Vec<f64> = f.iter().zip(&a).map(|(x, y)| x + y).collect();
            assert!(norm(&f) <= 0.25 && norm(&a) <= 0.25 && norm(&sum) <= 0.5);
            assert_eq!((f.clone(), a.clone()), generate_thetas(3, 0.5, seed));
        }
    }
}
