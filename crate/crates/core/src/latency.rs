//! Ground-truth latency model.
//!
//! A latency between two endpoints is a per-technology base cost plus a
//! distance term plus zero-mean Gaussian jitter. Bluetooth endpoints are
//! unreachable beyond their radio range and report the ceiling value instead.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Matrix, Point};
use crate::model::{CommTech, EdgeDevice, EndUser};
use crate::seed;

/// Lowest latency the model ever reports. Keeps every entry strictly positive
/// when jitter would otherwise push a short link below zero.
pub const MIN_LATENCY_MS: f64 = 0.01;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LatencyError {
    #[error("need at least 3 edge devices to build a latency map, got {0}")]
    TooFewAnchors(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModelParams {
    /// Base latency per technology pair, rows/columns ordered
    /// WiFi, 5G, Bluetooth.
    pub tech_base_ms: [[f64; 3]; 3],
    pub per_meter_ms: f64,
    pub jitter_sd_ms: f64,
    pub ceiling_ms: f64,
    pub bluetooth_range_m: f64,
}

impl Default for LatencyModelParams {
    fn default() -> Self {
        Self {
            tech_base_ms: [[2.0, 12.0, 6.0], [12.0, 5.0, 14.0], [6.0, 14.0, 3.0]],
            per_meter_ms: 0.05,
            jitter_sd_ms: 0.2,
            ceiling_ms: 1000.0,
            bluetooth_range_m: 250.0,
        }
    }
}

impl LatencyModelParams {
    pub fn base(&self, a: CommTech, b: CommTech) -> f64 {
        self.tech_base_ms[a.index()][b.index()]
    }

    pub fn violations(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (i, row) in self.tech_base_ms.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    out.push((format!("latency.tech_base_ms[{i}][{j}]"), format!("must be >= 0, got {v}")));
                }
                if v != self.tech_base_ms[j][i] {
                    out.push((
                        format!("latency.tech_base_ms[{i}][{j}]"),
                        "technology table must be symmetric".to_string(),
                    ));
                }
            }
        }
        for (field, v) in [
            ("latency.per_meter_ms", self.per_meter_ms),
            ("latency.jitter_sd_ms", self.jitter_sd_ms),
            ("latency.bluetooth_range_m", self.bluetooth_range_m),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                out.push((field.to_string(), format!("must be >= 0, got {v}")));
            }
        }
        if !(self.ceiling_ms.is_finite() && self.ceiling_ms > 0.0) {
            out.push(("latency.ceiling_ms".into(), format!("must be > 0, got {}", self.ceiling_ms)));
        }
        out
    }
}

/// One latency sample between two endpoints.
pub fn pairwise_latency<R: Rng + ?Sized>(
    a_pos: Point,
    a_tech: CommTech,
    b_pos: Point,
    b_tech: CommTech,
    params: &LatencyModelParams,
    rng: &mut R,
) -> f64 {
    // Always consume one draw so a pair's stream position does not depend on
    // whether it happened to be out of range.
    let z: f64 = rng.sample(StandardNormal);
    let d = a_pos.dist(b_pos);
    let bluetooth = a_tech == CommTech::Bluetooth || b_tech == CommTech::Bluetooth;
    if bluetooth && d > params.bluetooth_range_m {
        return params.ceiling_ms;
    }
    let raw = params.base(a_tech, b_tech) + params.per_meter_ms * d + params.jitter_sd_ms * z;
    raw.clamp(MIN_LATENCY_MS, params.ceiling_ms)
}

/// Measured latencies at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyMatrix {
    /// `n_d x n_d`, symmetric, zero diagonal.
    pub device_device: Matrix,
    /// `n_u x n_d`.
    pub user_device: Matrix,
    pub measured_at: f64,
    pub ceiling_ms: f64,
}

impl LatencyMatrix {
    pub fn n_devices(&self) -> usize {
        self.device_device.rows()
    }

    pub fn n_users(&self) -> usize {
        self.user_device.rows()
    }

    pub fn is_ceiling(&self, v: f64) -> bool {
        v >= self.ceiling_ms
    }
}

/// Measure every device-device and user-device latency at `measured_at`.
///
/// Each endpoint row draws from its own substream keyed by
/// `(seed, entity id, measurement index)`, so rows can be filled in any order
/// and adding a user leaves every other row untouched. The device block is
/// symmetrized by averaging the two directional draws.
pub fn build_latency_matrix(
    users: &[EndUser],
    devices: &[EdgeDevice],
    params: &LatencyModelParams,
    seed: u64,
    measured_at: f64,
) -> Result<LatencyMatrix, LatencyError> {
    if devices.len() < 3 {
        return Err(LatencyError::TooFewAnchors(devices.len()));
    }
    let stamp = measured_at.to_bits();
    let n_d = devices.len();

    let mut directional = Matrix::zeros(n_d, n_d);
    for a in devices {
        let mut rng = seed::substream(seed, "latency/device", &[u64::from(a.id.0), stamp]);
        for b in devices {
            let v = pairwise_latency(a.physical_pos, a.comm_tech, b.physical_pos, b.comm_tech, params, &mut rng);
            directional.set(a.id.index(), b.id.index(), v);
        }
    }
    let mut device_device = Matrix::zeros(n_d, n_d);
    for i in 0..n_d {
        for j in 0..i {
            let (x, y) = (directional.get(i, j), directional.get(j, i));
            // Unreachable in either direction stays unreachable.
            let v = if x >= params.ceiling_ms || y >= params.ceiling_ms {
                params.ceiling_ms
            } else {
                0.5 * (x + y)
            };
            device_device.set(i, j, v);
            device_device.set(j, i, v);
        }
    }

    let mut user_device = Matrix::zeros(users.len(), n_d);
    for u in users {
        fill_user_row(u, devices, params, seed, measured_at, user_device.row_mut(u.id.index()));
    }

    Ok(LatencyMatrix {
        device_device,
        user_device,
        measured_at,
        ceiling_ms: params.ceiling_ms,
    })
}

/// Fill one user's latency row from that user's substream.
pub fn fill_user_row(
    user: &EndUser,
    devices: &[EdgeDevice],
    params: &LatencyModelParams,
    seed: u64,
    measured_at: f64,
    row: &mut [f64],
) {
    let mut rng = seed::substream(seed, "latency/user", &[u64::from(user.id.0), measured_at.to_bits()]);
    for (slot, d) in row.iter_mut().zip(devices) {
        *slot = pairwise_latency(user.physical_pos, user.comm_tech, d.physical_pos, d.comm_tech, params, &mut rng);
    }
}
