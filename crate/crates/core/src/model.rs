//! Core domain types and the default service catalog.
//!
//! Identifiers are dense: a `UserId(i)` names the `i`-th user of a run and a
//! `DeviceId(j)` the `j`-th edge device, which is also their row/column in
//! every [`LatencyMatrix`](crate::latency::LatencyMatrix).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeviceId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubspaceId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId(pub u64);

impl UserId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl DeviceId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}", self.0)
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

impl fmt::Display for SubspaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MobilityClass {
    LowMobility,
    HighMobility,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommTech {
    WiFi,
    Cellular5G,
    Bluetooth,
}

impl CommTech {
    pub const ALL: [CommTech; 3] = [CommTech::WiFi, CommTech::Cellular5G, CommTech::Bluetooth];

    /// Row/column of this technology in the base-latency table.
    pub fn index(self) -> usize {
        match self {
            CommTech::WiFi => 0,
            CommTech::Cellular5G => 1,
            CommTech::Bluetooth => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ServiceTypeId {
    #[serde(rename = "ar")]
    AR,
    EHealth,
    Gaming,
    Infotainment,
}

impl ServiceTypeId {
    pub const ALL: [ServiceTypeId; 4] = [
        ServiceTypeId::AR,
        ServiceTypeId::EHealth,
        ServiceTypeId::Gaming,
        ServiceTypeId::Infotainment,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndUser {
    pub id: UserId,
    pub physical_pos: Point,
    /// Nominal speed in m/s.
    pub speed: f64,
    pub heading: f64,
    pub mobility_class: MobilityClass,
    pub comm_tech: CommTech,
    pub service: ServiceTypeId,
    /// Latency-map coordinate; `None` while the user cannot be localized
    /// (fewer than three reachable anchors).
    pub map_pos: Option<Point>,
    /// Current subspace, `None` for nomads.
    pub subspace: Option<SubspaceId>,
}

impl EndUser {
    /// Mobility class implied by `speed` under the given threshold.
    pub fn classify(speed: f64, threshold_mps: f64) -> MobilityClass {
        if speed > threshold_mps {
            MobilityClass::HighMobility
        } else {
            MobilityClass::LowMobility
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeDevice {
    pub id: DeviceId,
    pub physical_pos: Point,
    pub vm_slots_total: u32,
    pub vm_slots_free: u32,
    /// Million instructions per second, per VM slot.
    pub vm_mips: f64,
    pub comm_tech: CommTech,
    /// Anchor coordinate in the latency map.
    pub map_pos: Option<Point>,
}

impl EdgeDevice {
    pub fn busy_slots(&self) -> u32 {
        self.vm_slots_total - self.vm_slots_free
    }
}

/// One application class with its workload attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceProfile {
    pub id: ServiceTypeId,
    pub usage_share: f64,
    pub active_period_s: f64,
    pub idle_period_s: f64,
    pub mean_interarrival_s: f64,
    pub upload_kb: f64,
    pub download_kb: f64,
    pub task_length_mi: f64,
    pub required_cores: u32,
    pub vm_utilization_pct: f64,
    pub delay_sensitivity: f64,
    pub cloud_offload_prob: f64,
    pub max_delay_ms: f64,
}

impl ServiceProfile {
    /// Field-level violations, each as `(field, message)`.
    pub fn violations(&self) -> Vec<(String, String)> {
        let name = format!("{:?}", self.id);
        let mut out = Vec::new();
        let positive = [
            ("usage_share", self.usage_share),
            ("active_period_s", self.active_period_s),
            ("idle_period_s", self.idle_period_s),
            ("mean_interarrival_s", self.mean_interarrival_s),
            ("upload_kb", self.upload_kb),
            ("download_kb", self.download_kb),
            ("task_length_mi", self.task_length_mi),
            ("required_cores", f64::from(self.required_cores)),
            ("vm_utilization_pct", self.vm_utilization_pct),
            ("max_delay_ms", self.max_delay_ms),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                out.push((format!("services[{name}].{field}"), format!("must be > 0, got {v}")));
            }
        }
        for (field, v) in [
            ("delay_sensitivity", self.delay_sensitivity),
            ("cloud_offload_prob", self.cloud_offload_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                out.push((format!("services[{name}].{field}"), format!("must lie in [0, 1], got {v}")));
            }
        }
        out
    }

    /// Seconds of VM time one task of this service occupies on a slot of
    /// `vm_mips`. Cores stretch the duration instead of taking more slots.
    pub fn processing_time_s(&self, vm_mips: f64) -> f64 {
        self.task_length_mi / vm_mips * f64::from(self.required_cores)
    }
}

/// The four built-in service types.
///
/// | service      | share | active/idle s | interarrival s | up/down kb | length MI | cores | max delay ms |
/// |--------------|-------|---------------|----------------|------------|-----------|-------|--------------|
/// | AR           | 0.30  | 40 / 20       | 10             | 300 / 50   | 32000     | 1     | 60           |
/// | E-health     | 0.20  | 45 / 90       | 8              | 20 / 40    | 24000     | 1     | 150          |
/// | Gaming       | 0.20  | 60 / 120      | 20             | 100 / 200  | 48000     | 2     | 100          |
/// | Infotainment | 0.30  | 30 / 45       | 15             | 25 / 1000  | 64000     | 1     | 400          |
pub fn default_service_catalog() -> Vec<ServiceProfile> {
    vec![
        ServiceProfile {
            id: ServiceTypeId::AR,
            usage_share: 0.30,
            active_period_s: 40.0,
            idle_period_s: 20.0,
            mean_interarrival_s: 10.0,
            upload_kb: 300.0,
            download_kb: 50.0,
            task_length_mi: 32000.0,
            required_cores: 1,
            vm_utilization_pct: 6.0,
            delay_sensitivity: 0.9,
            cloud_offload_prob: 0.0,
            max_delay_ms: 60.0,
        },
        ServiceProfile {
            id: ServiceTypeId::EHealth,
            usage_share: 0.20,
            active_period_s: 45.0,
            idle_period_s: 90.0,
            mean_interarrival_s: 8.0,
            upload_kb: 20.0,
            download_kb: 40.0,
            task_length_mi: 24000.0,
            required_cores: 1,
            vm_utilization_pct: 2.0,
            delay_sensitivity: 0.7,
            cloud_offload_prob: 0.0,
            max_delay_ms: 150.0,
        },
        ServiceProfile {
            id: ServiceTypeId::Gaming,
            usage_share: 0.20,
            active_period_s: 60.0,
            idle_period_s: 120.0,
            mean_interarrival_s: 20.0,
            upload_kb: 100.0,
            download_kb: 200.0,
            task_length_mi: 48000.0,
            required_cores: 2,
            vm_utilization_pct: 30.0,
            delay_sensitivity: 0.8,
            cloud_offload_prob: 0.0,
            max_delay_ms: 100.0,
        },
        ServiceProfile {
            id: ServiceTypeId::Infotainment,
            usage_share: 0.30,
            active_period_s: 30.0,
            idle_period_s: 45.0,
            mean_interarrival_s: 15.0,
            upload_kb: 25.0,
            download_kb: 1000.0,
            task_length_mi: 64000.0,
            required_cores: 1,
            vm_utilization_pct: 10.0,
            delay_sensitivity: 0.3,
            cloud_offload_prob: 0.0,
            max_delay_ms: 400.0,
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskState {
    Pending,
    Running,
    Completed,
    FailedMobility,
    FailedCapacity,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("illegal task transition {from:?} -> {to:?}")]
pub struct IllegalTransition {
    pub from: TaskState,
    pub to: TaskState,
}

impl TaskState {
    pub fn can_become(self, next: TaskState) -> bool {
        use TaskState::*;
        matches!(
            (self, next),
            (Pending, Running) | (Pending, FailedCapacity) | (Running, Completed) | (Running, FailedMobility)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            TaskState::Completed | TaskState::FailedMobility | TaskState::FailedCapacity
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: TaskId,
    pub owner: UserId,
    pub service: ServiceTypeId,
    pub created_at: f64,
    pub length_mi: f64,
    pub upload_kb: f64,
    pub download_kb: f64,
    pub required_cores: u32,
    pub state: TaskState,
    pub assigned_device: Option<DeviceId>,
    pub finish_at: Option<f64>,
}

impl Task {
    pub fn transition(&mut self, next: TaskState) -> Result<(), IllegalTransition> {
        if self.state.can_become(next) {
            self.state = next;
            Ok(())
        } else {
            Err(IllegalTransition {
                from: self.state,
                to: next,
            })
        }
    }
}
