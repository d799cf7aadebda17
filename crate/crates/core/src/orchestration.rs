//! Greedy task placement over a candidate pool and VM-slot accounting.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;
use crate::latency::LatencyMatrix;
use crate::model::{DeviceId, EdgeDevice, EndUser, SubspaceId, TaskId};
use crate::segmentation::Segmentation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// One orchestrator over every device.
    Monolithic,
    /// Subspaces built without mobility segregation.
    SingleLayer,
    /// Separate low and high mobility layers.
    DualLayer,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Monolithic, Policy::SingleLayer, Policy::DualLayer];

    pub fn is_segmented(self) -> bool {
        self != Policy::Monolithic
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Monolithic => "monolithic",
            Policy::SingleLayer => "single-layer",
            Policy::DualLayer => "dual-layer",
        }
    }
}

/// What "closest" means when choosing among free candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementMetric {
    /// Lowest measured user-device latency.
    Latency,
    /// Smallest physical distance, ignoring measured latency.
    Geographic,
}

impl PlacementMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            PlacementMetric::Latency => "latency",
            PlacementMetric::Geographic => "geographic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrchestrationConfig {
    /// A user whose latency to its serving device exceeds this has left
    /// coverage (monolithic and nomad tasks).
    pub coverage_latency_ms: f64,
}

impl Default for OrchestrationConfig {
    fn default() -> Self {
        Self {
            coverage_latency_ms: 40.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OrchestrationError {
    #[error("task {0:?} holds no VM slot (never placed or already released)")]
    DoubleRelease(TaskId),
    #[error("task {0:?} already holds a VM slot")]
    AlreadyPlaced(TaskId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlacementOutcome {
    PlacedEdge,
    FailedCapacity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementDecision {
    pub task: TaskId,
    pub device: Option<DeviceId>,
    pub outcome: PlacementOutcome,
    pub candidate_count: usize,
    pub est_latency_ms: f64,
}

/// Devices the orchestrator may consider for a user's task.
///
/// Segmented policies use the user's subspace; nomads borrow the devices of
/// the subspace whose center is nearest in the map, and fall back to every
/// device when the user is unlocalized or no subspace exists.
pub fn candidate_pool(
    user: &EndUser,
    segmentation: Option<&Segmentation>,
    devices: &[EdgeDevice],
    policy: Policy,
) -> Vec<DeviceId> {
    let all = || devices.iter().map(|d| d.id).collect();
    if !policy.is_segmented() {
        return all();
    }
    let Some(seg) = segmentation else {
        return all();
    };
    if let Some(s) = seg.subspace_of(user.id) {
        return s.devices.iter().copied().collect();
    }
    user.map_pos
        .and_then(|p| seg.nearest_subspace(p))
        .map_or_else(all, |s| s.devices.iter().copied().collect())
}

/// Tracks which task holds which VM slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CapacityLedger {
    holdings: HashMap<TaskId, DeviceId>,
}

impl CapacityLedger {
    pub fn len(&self) -> usize {
        self.holdings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.holdings.is_empty()
    }

    pub fn holder(&self, task: TaskId) -> Option<DeviceId> {
        self.holdings.get(&task).copied()
    }

    /// `true` when held slots per device match the devices' free counters.
    pub fn consistent_with(&self, devices: &[EdgeDevice]) -> bool {
        let mut held = vec![0u32; devices.len()];
        for d in self.holdings.values() {
            held[d.index()] += 1;
        }
        devices
            .iter()
            .all(|d| d.vm_slots_free <= d.vm_slots_total && d.busy_slots() == held[d.id.index()])
    }
}

/// Place one task on the closest candidate with a free slot.
///
/// Devices the user cannot reach (latency at the ceiling) are skipped. Ties
/// on the metric prefer more free slots, then the lower device id. The chosen
/// device loses one free slot, recorded against the task in `ledger`.
pub fn place_task(
    task: TaskId,
    user: &EndUser,
    pool: &[DeviceId],
    devices: &mut [EdgeDevice],
    ledger: &mut CapacityLedger,
    latency: &LatencyMatrix,
    metric: PlacementMetric,
) -> Result<PlacementDecision, OrchestrationError> {
    if ledger.holdings.contains_key(&task) {
        return Err(OrchestrationError::AlreadyPlaced(task));
    }
    let row = latency.user_device.row(user.id.index());
    let key = |d: &EdgeDevice| match metric {
        PlacementMetric::Latency => row[d.id.index()],
        PlacementMetric::Geographic => user.physical_pos.dist(d.physical_pos),
    };
    let mut best: Option<(f64, u32, DeviceId)> = None;
    for &id in pool {
        let d = &devices[id.index()];
        if d.vm_slots_free == 0 || latency.is_ceiling(row[id.index()]) {
            continue;
        }
        let k = key(d);
        let better = match best {
            None => true,
            Some((bk, bfree, bid)) => {
                k < bk || (k == bk && (d.vm_slots_free > bfree || (d.vm_slots_free == bfree && id < bid)))
            }
        };
        if better {
            best = Some((k, d.vm_slots_free, id));
        }
    }
    Ok(match best {
        Some((_, _, id)) => {
            devices[id.index()].vm_slots_free -= 1;
            ledger.holdings.insert(task, id);
            PlacementDecision {
                task,
                device: Some(id),
                outcome: PlacementOutcome::PlacedEdge,
                candidate_count: pool.len(),
                est_latency_ms: row[id.index()],
            }
        }
        None => PlacementDecision {
            task,
            device: None,
            outcome: PlacementOutcome::FailedCapacity,
            candidate_count: pool.len(),
            est_latency_ms: f64::NAN,
        },
    })
}

/// Return a task's VM slot to its device.
pub fn release(task: TaskId, devices: &mut [EdgeDevice], ledger: &mut CapacityLedger) -> Result<DeviceId, OrchestrationError> {
    let id = ledger
        .holdings
        .remove(&task)
        .ok_or(OrchestrationError::DoubleRelease(task))?;
    let d = &mut devices[id.index()];
    debug_assert!(d.vm_slots_free < d.vm_slots_total);
    d.vm_slots_free += 1;
    Ok(id)
}

/// Where a running task's user must stay for the task to survive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServingScope {
    /// Inside the padded boundary of the subspace that held the user at
    /// placement time.
    Subspace {
        id: SubspaceId,
        center: Point,
        boundary: f64,
    },
    /// Within coverage latency of the serving device.
    Coverage,
}

/// Whether a running task is lost to user mobility.
pub fn check_mobility_failure(
    scope: &ServingScope,
    user_map_pos: Option<Point>,
    serving_latency_ms: f64,
    coverage_latency_ms: f64,
) -> bool {
    match scope {
        ServingScope::Subspace { center, boundary, .. } => match user_map_pos {
            Some(p) => p.dist(*center) > *boundary,
            None => true,
        },
        ServingScope::Coverage => serving_latency_ms > coverage_latency_ms,
    }
}
