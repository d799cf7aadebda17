//! Experiment configuration: schema, defaults, validation, TOML I/O and
//! path-addressed overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Area;
use crate::latency::LatencyModelParams;
use crate::localization::LocalizationConfig;
use crate::mobility::MobilityParams;
use crate::model::{default_service_catalog, ServiceProfile, ServiceTypeId};
use crate::orchestration::{OrchestrationConfig, PlacementMetric, Policy};
use crate::segmentation::{ClusteringMode, KmeansConfig, Layering, RadialConfig, SegmentationParams};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<FieldError>),
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("cannot apply override `{path}`: {reason}")]
    Override { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub fn fields(&self) -> &[FieldError] {
        match self {
            ConfigError::InvalidConfig(f) => f,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    /// Share of users that are vehicles.
    pub high_mobility_fraction: f64,
    /// User technology shares, ordered WiFi, 5G, Bluetooth.
    pub user_tech_shares: [f64; 3],
    /// Edge device technology shares, ordered WiFi, 5G, Bluetooth.
    pub device_tech_shares: [f64; 3],
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            high_mobility_fraction: 0.3,
            user_tech_shares: [0.45, 0.45, 0.10],
            device_tech_shares: [0.5, 0.5, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfrastructureConfig {
    pub vm_slots_total: u32,
    pub vm_mips: f64,
    /// Payload transfer rate; payload kb divided by this gives seconds.
    pub bandwidth_kbps: f64,
}

impl Default for InfrastructureConfig {
    fn default() -> Self {
        Self {
            vm_slots_total: 4,
            vm_mips: 4000.0,
            bandwidth_kbps: 10_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rng_seed: u64,
    pub policy: Policy,
    pub clustering_mode: ClusteringMode,
    pub placement: PlacementMetric,
    /// Width and height of the area in meters.
    pub area_m: [f64; 2],
    pub n_devices: usize,
    /// Users in a single run.
    pub n_users: usize,
    /// User counts visited by a sweep.
    pub device_counts_sweep: Vec<usize>,
    pub n_repetitions: usize,
    pub sim_duration_s: f64,
    pub warmup_s: f64,
    pub tick_s: f64,
    pub speed_threshold_mps: f64,
    pub churn_threshold: f64,
    pub population: PopulationConfig,
    pub infrastructure: InfrastructureConfig,
    pub kmeans: KmeansConfig,
    pub radial: RadialConfig,
    pub latency: LatencyModelParams,
    pub localization: LocalizationConfig,
    pub mobility: MobilityParams,
    pub orchestration: OrchestrationConfig,
    pub services: Vec<ServiceProfile>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rng_seed: 42,
            policy: Policy::DualLayer,
            clustering_mode: ClusteringMode::Lax,
            placement: PlacementMetric::Latency,
            area_m: [1000.0, 1000.0],
            n_devices: 30,
            n_users: 300,
            device_counts_sweep: vec![100, 200, 300, 400, 500, 600],
            n_repetitions: 25,
            sim_duration_s: 600.0,
            warmup_s: 60.0,
            tick_s: 1.0,
            speed_threshold_mps: 3.0,
            churn_threshold: 0.3,
            population: PopulationConfig::default(),
            infrastructure: InfrastructureConfig::default(),
            kmeans: KmeansConfig::default(),
            radial: RadialConfig::default(),
            latency: LatencyModelParams::default(),
            localization: LocalizationConfig::default(),
            mobility: MobilityParams::default(),
            orchestration: OrchestrationConfig::default(),
            services: default_service_catalog(),
        }
    }
}

struct Checker(Vec<FieldError>);

impl Checker {
    fn check(&mut self, ok: bool, field: &str, message: impl Into<String>) {
        if !ok {
            self.0.push(FieldError {
                field: field.to_string(),
                message: message.into(),
            });
        }
    }

    fn count(&mut self, v: usize, field: &str) {
        self.check(v >= 1, field, format!("must be >= 1, got {v}"));
    }

    fn positive(&mut self, v: f64, field: &str) {
        self.check(v.is_finite() && v > 0.0, field, format!("must be > 0, got {v}"));
    }

    fn non_negative(&mut self, v: f64, field: &str) {
        self.check(v.is_finite() && v >= 0.0, field, format!("must be >= 0, got {v}"));
    }

    fn shares(&mut self, v: &[f64], field: &str) {
        let ok = v.iter().all(|s| s.is_finite() && *s >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        self.check(ok, field, format!("shares must be non-negative and sum to 1, got {v:?}"));
    }

    fn pairs(&mut self, v: Vec<(String, String)>) {
        for (field, message) in v {
            self.0.push(FieldError { field, message });
        }
    }
}

impl ExperimentConfig {
    pub fn area(&self) -> Area {
        Area::new(self.area_m[0], self.area_m[1])
    }

    pub fn service(&self, id: ServiceTypeId) -> &ServiceProfile {
        self.services
            .iter()
            .find(|p| p.id == id)
            .expect("validated config has every service")
    }

    pub fn segmentation_params(&self) -> SegmentationParams {
        SegmentationParams {
            layering: match self.policy {
                Policy::DualLayer => Layering::Dual,
                _ => Layering::Single,
            },
            mode: self.clustering_mode,
            speed_threshold_mps: self.speed_threshold_mps,
            churn_threshold: self.churn_threshold,
            kmeans: self.kmeans.clone(),
            radial: self.radial.clone(),
        }
    }

    /// Every violated invariant, or `Ok` with the config unchanged.
    pub fn validate(self) -> Result<Self, ConfigError> {
        let mut c = Checker(Vec::new());
        c.positive(self.area_m[0], "area_m[0]");
        c.positive(self.area_m[1], "area_m[1]");
        c.check(self.n_devices >= 3, "n_devices", format!("must be >= 3, got {}", self.n_devices));
        c.count(self.n_repetitions, "n_repetitions");
        c.check(!self.device_counts_sweep.is_empty(), "device_counts_sweep", "must list at least one count");
        for (i, &n) in self.device_counts_sweep.iter().enumerate() {
            c.count(n, &format!("device_counts_sweep[{i}]"));
        }
        c.positive(self.sim_duration_s, "sim_duration_s");
        c.positive(self.tick_s, "tick_s");
        c.non_negative(self.warmup_s, "warmup_s");
        c.check(
            self.warmup_s < self.sim_duration_s,
            "warmup_s",
            format!("must be < sim_duration_s ({}), got {}", self.sim_duration_s, self.warmup_s),
        );
        c.non_negative(self.speed_threshold_mps, "speed_threshold_mps");
        c.non_negative(self.churn_threshold, "churn_threshold");

        let p = &self.population;
        c.check(
            (0.0..=1.0).contains(&p.high_mobility_fraction),
            "population.high_mobility_fraction",
            "must lie in [0, 1]",
        );
        c.shares(&p.user_tech_shares, "population.user_tech_shares");
        c.shares(&p.device_tech_shares, "population.device_tech_shares");

        let inf = &self.infrastructure;
        c.check(inf.vm_slots_total >= 1, "infrastructure.vm_slots_total", "must be >= 1");
        c.positive(inf.vm_mips, "infrastructure.vm_mips");
        c.positive(inf.bandwidth_kbps, "infrastructure.bandwidth_kbps");

        c.count(self.kmeans.target_cluster_size, "kmeans.target_cluster_size");
        c.count(self.kmeans.max_iter, "kmeans.max_iter");
        c.count(self.kmeans.n_init, "kmeans.n_init");
        c.non_negative(self.kmeans.outlier_radius, "kmeans.outlier_radius");
        c.non_negative(self.kmeans.padding_fraction, "kmeans.padding_fraction");
        c.positive(self.radial.radius, "radial.radius");
        c.non_negative(self.radial.padding_fraction, "radial.padding_fraction");
        c.count(self.radial.min_members, "radial.min_members");

        c.pairs(self.latency.violations());
        c.count(self.localization.max_iter, "localization.max_iter");
        c.count(self.localization.user_max_iter, "localization.user_max_iter");
        c.non_negative(self.localization.tol, "localization.tol");
        c.non_negative(self.localization.user_tol, "localization.user_tol");

        let m = &self.mobility;
        for (name, r) in [
            ("mobility.pedestrian_speed_mps", m.pedestrian_speed_mps),
            ("mobility.pedestrian_pause_s", m.pedestrian_pause_s),
            ("mobility.vehicle_speed_mps", m.vehicle_speed_mps),
        ] {
            c.check(
                r[0].is_finite() && r[0] >= 0.0 && r[1] >= r[0],
                name,
                format!("must be a range [min, max] with 0 <= min <= max, got {r:?}"),
            );
        }
        c.non_negative(m.heading_sd_rad, "mobility.heading_sd_rad");
        c.positive(self.orchestration.coverage_latency_ms, "orchestration.coverage_latency_ms");

        c.check(self.services.len() == 4, "services", format!("need exactly 4 profiles, got {}", self.services.len()));
        for id in ServiceTypeId::ALL {
            let n = self.services.iter().filter(|s| s.id == id).count();
            c.check(n == 1, "services", format!("{id:?} appears {n} times"));
        }
        for s in &self.services {
            c.pairs(s.violations());
        }
        let share: f64 = self.services.iter().map(|s| s.usage_share).sum();
        c.check((share - 1.0).abs() < 1e-9, "services", format!("usage shares sum to {share}, need 1"));

        if c.0.is_empty() {
            Ok(self)
        } else {
            Err(ConfigError::InvalidConfig(c.0))
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Set the field at dotted `path` (e.g. `radial.padding_fraction`) from a
    /// TOML literal. Bare words that are not valid TOML are taken as strings,
    /// so `policy=monolithic` works without quotes.
    pub fn apply_override(&mut self, path: &str, literal: &str) -> Result<(), ConfigError> {
        let fail = |reason: String| ConfigError::Override {
            path: path.to_string(),
            reason,
        };
        let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {literal}")) {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(literal.to_string()),
        };
        let mut root = toml::Value::try_from(&*self).map_err(|e| fail(e.to_string()))?;
        let mut slot = &mut root;
        for key in path.split('.') {
            slot = match slot {
                toml::Value::Table(t) => t.get_mut(key).ok_or_else(|| fail(format!("no field `{key}`")))?,
                toml::Value::Array(a) => {
                    let i: usize = key.parse().map_err(|_| fail(format!("`{key}` is not an index")))?;
                    let len = a.len();
                    a.get_mut(i).ok_or_else(|| fail(format!("index {i} out of range ({len})")))?
                }
                _ => return Err(fail(format!("`{key}` descends into a scalar"))),
            };
        }
        // Integers are accepted where floats are expected.
        *slot = match (&*slot, value) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        *self = root.try_into().map_err(|e: toml::de::Error| fail(e.to_string()))?;
        Ok(())
    }
}

/// Spec-style free function form of [`ExperimentConfig::validate`].
pub fn validate_config(cfg: ExperimentConfig) -> Result<ExperimentConfig, ConfigError> {
    cfg.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn warmup_equal_to_duration_is_rejected() {
        let cfg = ExperimentConfig {
            warmup_s: 600.0,
            ..Default::default()
        };
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.fields().len(), 1);
        assert_eq!(err.fields()[0].field, "warmup_s");
    }

    #[test]
    fn negative_padding_is_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.radial.padding_fraction = -0.1;
        let err = cfg.validate().unwrap_err();
        assert!(err.fields().iter().any(|f| f.field == "radial.padding_fraction"));
    }

    #[test]
    fn every_violation_is_listed() {
        let mut cfg = ExperimentConfig {
            n_repetitions: 0,
            tick_s: 0.0,
            ..Default::default()
        };
        cfg.radial.padding_fraction = -1.0;
        cfg.services.pop();
        let err = cfg.validate().unwrap_err();
        let fields: Vec<&str> = err.fields().iter().map(|f| f.field.as_str()).collect();
        for want in ["n_repetitions", "tick_s", "radial.padding_fraction", "services"] {
            assert!(fields.contains(&want), "{fields:?}");
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut text = ExperimentConfig::default().to_toml_string();
        text.insert_str(0, "bogus = 1\n");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn overrides_by_path() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_override("radial.padding_fraction", "0.5").unwrap();
        cfg.apply_override("n_users", "123").unwrap();
        cfg.apply_override("policy", "monolithic").unwrap();
        cfg.apply_override("sim_duration_s", "90").unwrap();
        cfg.apply_override("services.1.max_delay_ms", "75.5").unwrap();
        cfg.apply_override("device_counts_sweep", "[10, 20]").unwrap();
        assert_eq!(cfg.radial.padding_fraction, 0.5);
        assert_eq!(cfg.n_users, 123);
        assert_eq!(cfg.policy, Policy::Monolithic);
        assert_eq!(cfg.sim_duration_s, 90.0);
        assert_eq!(cfg.services[1].max_delay_ms, 75.5);
        assert_eq!(cfg.device_counts_sweep, vec![10, 20]);
        assert!(cfg.apply_override("radial.nope", "1").is_err());
        assert!(cfg.apply_override("policy", "sideways").is_err());
    }
}
