//! User-count sweeps: paired-seed repetitions of every variant, CSV tables
//! and per-figure aggregates.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::engine::{run_variants, MetricsReport, Variant};
use crate::orchestration::{PlacementMetric, Policy};
use crate::seed;
use crate::segmentation::ClusteringMode;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("result table is empty")]
    EmptyTable,
    #[error("{file}: missing series {series}")]
    MissingSeries { file: String, series: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub user_counts: Vec<usize>,
    pub repetitions: usize,
    pub variants: Vec<Variant>,
    pub base_seed: u64,
}

impl Default for SweepSpec {
    /// 100..=600 step 100, 25 repetitions, the three policies in lax mode
    /// with latency-map placement.
    fn default() -> Self {
        Self {
            user_counts: (1..=6).map(|i| i * 100).collect(),
            repetitions: 25,
            variants: Policy::ALL
                .iter()
                .map(|&p| Variant::new(p, ClusteringMode::Lax, PlacementMetric::Latency))
                .collect(),
            base_seed: 42,
        }
    }
}

impl SweepSpec {
    /// Counts, repetitions and seed from the config; variants as in
    /// [`SweepSpec::default`].
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            user_counts: cfg.device_counts_sweep.clone(),
            repetitions: cfg.n_repetitions,
            base_seed: cfg.rng_seed,
            ..Self::default()
        }
    }

    /// Adds strict-mode segmented variants and geographic monolithic
    /// placement, covering every figure file.
    pub fn with_all_series(mut self) -> Self {
        for v in [
            Variant::new(Policy::Monolithic, ClusteringMode::Lax, PlacementMetric::Geographic),
            Variant::new(Policy::SingleLayer, ClusteringMode::Strict, PlacementMetric::Latency),
            Variant::new(Policy::DualLayer, ClusteringMode::Strict, PlacementMetric::Latency),
        ] {
            if !self.variants.contains(&v) {
                self.variants.push(v);
            }
        }
        self
    }

    /// Seed shared by every variant of repetition `rep` at `count` users.
    /// Kept within `i64` so it survives a TOML round trip.
    pub fn seed_for(&self, count: usize, rep: usize) -> u64 {
        seed::derive_seed(self.base_seed, "sweep", &[count as u64, rep as u64]) & (i64::MAX as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: Variant,
    pub n_users: usize,
    pub repetition: usize,
    pub seed: u64,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

/// Run every (count, repetition) cell on `jobs` worker threads (0 means
/// one per hardware thread). Cell failures are recorded, not propagated.
pub fn run_sweep(spec: &SweepSpec, cfg: &ExperimentConfig, jobs: usize) -> Result<SweepTable, SweepError> {
    let cfg = cfg.clone().validate()?;
    let cells: Vec<(usize, usize)> = spec
        .user_counts
        .iter()
        .flat_map(|&c| (0..spec.repetitions).map(move |r| (c, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        cells
            .par_iter()
            .flat_map_iter(|&(count, rep)| {
                let seed = spec.seed_for(count, rep);
                let cell = ExperimentConfig {
                    n_users: count,
                    rng_seed: seed,
                    ..cfg.clone()
                };
                let outcome = run_variants(cell, &spec.variants);
                let row = |variant, report, error| SweepRow {
                    variant,
                    n_users: count,
                    repetition: rep,
                    seed,
                    report,
                    error,
                };
                match outcome {
                    Ok(reports) => reports
                        .into_iter()
                        .map(|r| row(r.variant, Some(r), None))
                        .collect::<Vec<_>>(),
                    Err(e) => spec.variants.iter().map(|&v| row(v, None, Some(e.to_string()))).collect(),
                }
            })
            .collect()
    });
    rows.sort_by_key(|r| (r.variant, r.n_users, r.repetition));
    Ok(SweepTable { rows })
}

/// Column order of the raw table.
pub const RAW_COLUMNS: &[&str] = &[
    "policy",
    "mode",
    "placement",
    "n_users",
    "repetition",
    "seed",
    "total_generated",
    "generated",
    "completed",
    "failed_mobility",
    "failed_capacity",
    "in_flight",
    "mean_delay_ms",
    "p50_delay_ms",
    "p95_delay_ms",
    "deadline_misses",
    "mobility_failure_rate",
    "capacity_failure_rate",
    "mean_churn",
    "mean_nomad_fraction",
    "mean_subspaces",
    "resegmentations",
    "map_stress",
    "rates_defined",
    "error",
];

fn mode_str(m: ClusteringMode) -> &'static str {
    match m {
        ClusteringMode::Lax => "lax",
        ClusteringMode::Strict => "strict",
    }
}

/// Metric columns in table order, as `(name, value)`.
pub fn metric_values(r: &MetricsReport) -> [(&'static str, f64); 17] {
    [
        ("total_generated", r.total_generated as f64),
        ("generated", r.generated as f64),
        ("completed", r.completed as f64),
        ("failed_mobility", r.failed_mobility as f64),
        ("failed_capacity", r.failed_capacity as f64),
        ("in_flight", r.in_flight as f64),
        ("mean_delay_ms", r.mean_delay_ms),
        ("p50_delay_ms", r.p50_delay_ms),
        ("p95_delay_ms", r.p95_delay_ms),
        ("deadline_misses", r.deadline_misses as f64),
        ("mobility_failure_rate", r.mobility_failure_rate),
        ("capacity_failure_rate", r.capacity_failure_rate),
        ("mean_churn", r.mean_churn),
        ("mean_nomad_fraction", r.mean_nomad_fraction),
        ("mean_subspaces", r.mean_subspaces),
        ("resegmentations", r.resegmentations as f64),
        ("map_stress", r.map_stress),
    ]
}

/// Write the raw table. Floats use the shortest representation that parses
/// back to the same value, so output is byte-stable and lossless.
pub fn emit_csv(table: &SweepTable, path: impl AsRef<Path>) -> Result<(), SweepError> {
    if table.rows.is_empty() {
        return Err(SweepError::EmptyTable);
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RAW_COLUMNS)?;
    for row in &table.rows {
        let mut rec = vec![
            row.variant.policy.as_str().to_string(),
            mode_str(row.variant.mode).to_string(),
            row.variant.placement.as_str().to_string(),
            row.n_users.to_string(),
            row.repetition.to_string(),
            row.seed.to_string(),
        ];
        match &row.report {
            Some(r) => {
                rec.extend(metric_values(r).iter().map(|(_, v)| v.to_string()));
                rec.push(r.rates_defined.to_string());
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 18)),
        }
        rec.push(row.error.clone().unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary::default();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Summary { mean, sd, n }
}

impl SweepTable {
    pub fn variants(&self) -> Vec<Variant> {
        let mut v: Vec<Variant> = self.rows.iter().map(|r| r.variant).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn user_counts(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.rows.iter().map(|r| r.n_users).collect();
        c.sort();
        c.dedup();
        c
    }

    /// Successful reports of one variant at one count, by repetition.
    pub fn reports(&self, variant: Variant, n_users: usize) -> Vec<&MetricsReport> {
        self.rows
            .iter()
            .filter(|r| r.variant == variant && r.n_users == n_users)
            .filter_map(|r| r.report.as_ref())
            .collect()
    }

    /// Summary of one metric for one variant at one count.
    pub fn summary(&self, variant: Variant, n_users: usize, metric: impl Fn(&MetricsReport) -> f64) -> Summary {
        let v: Vec<f64> = self.reports(variant, n_users).into_iter().map(metric).collect();
        summarize(&v)
    }

    pub fn error_count(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Mean and standard deviation of every metric per (variant, count).
pub fn emit_aggregate_csv(table: &SweepTable, path: impl AsRef<Path>) -> Result<(), SweepError> {
    if table.rows.is_empty() {
        return Err(SweepError::EmptyTable);
    }
    let mut w = csv::Writer::from_path(path)?;
    let probe = metric_values(&MetricsReport {
        variant: table.rows[0].variant,
        n_users: 0,
        seed: 0,
        total_generated: 0,
        generated: 0,
        completed: 0,
        failed_mobility: 0,
        failed_capacity: 0,
        in_flight: 0,
        mean_delay_ms: 0.0,
        p50_delay_ms: 0.0,
        p95_delay_ms: 0.0,
        deadline_misses: 0,
        mobility_failure_rate: 0.0,
        capacity_failure_rate: 0.0,
        mean_churn: 0.0,
        mean_nomad_fraction: 0.0,
        mean_subspaces: 0.0,
        resegmentations: 0,
        map_stress: 0.0,
        rates_defined: false,
    });
    let mut header = vec!["policy".to_string(), "mode".into(), "placement".into(), "n_users".into(), "reps".into(), "errors".into()];
    for (name, _) in probe {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_sd"));
    }
    w.write_record(&header)?;
    for v in table.variants() {
        for c in table.user_counts() {
            let rows: Vec<&SweepRow> = table.rows.iter().filter(|r| r.variant == v && r.n_users == c).collect();
            if rows.is_empty() {
                continue;
            }
            let reports: Vec<&MetricsReport> = rows.iter().filter_map(|r| r.report.as_ref()).collect();
            let mut rec = vec![
                v.policy.as_str().to_string(),
                mode_str(v.mode).to_string(),
                v.placement.as_str().to_string(),
                c.to_string(),
                reports.len().to_string(),
                (rows.len() - reports.len()).to_string(),
            ];
            for (i, _) in probe.iter().enumerate() {
                let vals: Vec<f64> = reports.iter().map(|r| metric_values(r)[i].1).collect();
                let s = summarize(&vals);
                rec.push(s.mean.to_string());
                rec.push(s.sd.to_string());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One figure-ready file: a metric plotted against user count for a set
/// of series.
pub struct FigureSpec {
    pub file: &'static str,
    pub metric: &'static str,
    pub series: Vec<Variant>,
    pub value: fn(&MetricsReport) -> f64,
}

fn lax(p: Policy) -> Variant {
    Variant::new(p, ClusteringMode::Lax, PlacementMetric::Latency)
}

/// The five comparison files.
pub fn figure_specs() -> Vec<FigureSpec> {
    let geo = Variant::new(Policy::Monolithic, ClusteringMode::Lax, PlacementMetric::Geographic);
    let three = vec![lax(Policy::Monolithic), lax(Policy::SingleLayer), lax(Policy::DualLayer)];
    vec![
        FigureSpec {
            file: "delay_vs_users.csv",
            metric: "mean_delay_ms",
            series: vec![geo, lax(Policy::Monolithic), lax(Policy::SingleLayer), lax(Policy::DualLayer)],
            value: |r| r.mean_delay_ms,
        },
        FigureSpec {
            file: "capacity_failure_vs_users.csv",
            metric: "capacity_failure_rate",
            series: three.clone(),
            value: |r| r.capacity_failure_rate,
        },
        FigureSpec {
            file: "mobility_failure_vs_users.csv",
            metric: "mobility_failure_rate",
            series: three,
            value: |r| r.mobility_failure_rate,
        },
        FigureSpec {
            file: "churn_vs_users.csv",
            metric: "mean_churn",
            series: vec![lax(Policy::SingleLayer), lax(Policy::DualLayer)],
            value: |r| r.mean_churn,
        },
        FigureSpec {
            file: "churn_lax_vs_strict.csv",
            metric: "mean_churn",
            series: vec![
                lax(Policy::DualLayer),
                Variant::new(Policy::DualLayer, ClusteringMode::Strict, PlacementMetric::Latency),
            ],
            value: |r| r.mean_churn,
        },
    ]
}

#[derive(Debug, Default)]
pub struct FigureOutput {
    pub written: Vec<PathBuf>,
    /// Files skipped because a required series is absent.
    pub missing: Vec<SweepError>,
}

/// Write every figure file whose series are all present. Files with a
/// missing series are reported in [`FigureOutput::missing`] and skipped.
pub fn emit_figures_data(table: &SweepTable, outdir: impl AsRef<Path>) -> Result<FigureOutput, SweepError> {
    if table.rows.is_empty() {
        return Err(SweepError::EmptyTable);
    }
    let outdir = outdir.as_ref();
    fs::create_dir_all(outdir)?;
    let present = table.variants();
    let counts = table.user_counts();
    let mut out = FigureOutput::default();
    for fig in figure_specs() {
        if let Some(v) = fig.series.iter().find(|v| !present.contains(v)) {
            out.missing.push(SweepError::MissingSeries {
                file: fig.file.to_string(),
                series: v.label(),
            });
            continue;
        }
        let path = outdir.join(fig.file);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["n_users", "series", "metric", "mean", "sd", "reps"])?;
        let mut by_series: BTreeMap<String, Vec<(usize, Summary)>> = BTreeMap::new();
        for v in &fig.series {
            for &c in &counts {
                let s = table.summary(*v, c, fig.value);
                by_series.entry(v.label()).or_default().push((c, s));
            }
        }
        for &c in &counts {
            for v in &fig.series {
                let s = by_series[&v.label()].iter().find(|(x, _)| *x == c).expect("filled").1;
                w.write_record([
                    c.to_string(),
                    v.label(),
                    fig.metric.to_string(),
                    s.mean.to_string(),
                    s.sd.to_string(),
                    s.n.to_string(),
                ])?;
            }
        }
        w.flush()?;
        out.written.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_shape() {
        let s = SweepSpec::default();
        assert_eq!(s.user_counts, vec![100, 200, 300, 400, 500, 600]);
        assert_eq!(s.repetitions, 25);
        assert_eq!(s.variants.len(), 3);
        assert_eq!(s.with_all_series().variants.len(), 6);
    }

    #[test]
    fn seeds_are_paired_and_distinct() {
        let s = SweepSpec::default();
        assert_eq!(s.seed_for(100, 0), s.seed_for(100, 0));
        assert_ne!(s.seed_for(100, 0), s.seed_for(100, 1));
        assert_ne!(s.seed_for(100, 0), s.seed_for(200, 0));
        assert!(s.seed_for(600, 24) <= i64::MAX as u64);
    }

    #[test]
    fn summary_of_known_values() {
        let s = summarize(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.mean, 5.0);
        assert!((s.sd - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(summarize(&[3.0]).sd, 0.0);
        assert_eq!(summarize(&[]).n, 0);
    }

    #[test]
    fn empty_table_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = SweepTable::default();
        assert!(matches!(emit_csv(&t, dir.path().join("a.csv")), Err(SweepError::EmptyTable)));
        assert!(matches!(emit_figures_data(&t, dir.path()), Err(SweepError::EmptyTable)));
    }
}
