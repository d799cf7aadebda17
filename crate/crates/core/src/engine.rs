//! Fixed-increment simulation loop.
//!
//! Each tick of length `tick_s` ending at time `T` runs, in order:
//!
//! 1. mobility steps for every user,
//! 2. a fresh latency measurement,
//! 3. a latency-map refresh,
//! 4. segmentation membership refresh and the re-segmentation gate,
//! 5. mobility-failure checks on tasks still running at `T`,
//! 6. completion of tasks whose finish time is at or before `T`,
//! 7. generation of the tasks that arrived during the tick and their
//!    placement, in creation-time then task-id order.
//!
//! Steps 1-3 and task generation do not depend on the orchestration policy,
//! so an [`Environment`] computes them once and any number of policy
//! [`Variant`]s consume the same stream in lockstep. Completions land on the
//! first tick boundary at or after their finish time, so reported lifetimes
//! are accurate to within one tick.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::geometry::Point;
use crate::latency::{build_latency_matrix, LatencyError, LatencyMatrix};
use crate::localization::{refresh_map, LatencyMap, LocalizationError};
use crate::mobility::{step_pedestrian, step_vehicle, MobilityState};
use crate::model::{
    CommTech, DeviceId, EdgeDevice, EndUser, ServiceProfile, ServiceTypeId, Task, TaskId,
    TaskState, UserId,
};
use crate::orchestration::{
    candidate_pool, check_mobility_failure, place_task, release, CapacityLedger, OrchestrationError,
    PlacementMetric, PlacementOutcome, Policy, ServingScope,
};
use crate::segmentation::{
    build_segmentation, maybe_resegment, ClusteringMode, Segmentation, SegmentationError, SegmentationParams,
};
use crate::seed::{self, Stream};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Latency(#[from] LatencyError),
    #[error(transparent)]
    Localization(#[from] LocalizationError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Orchestration(#[from] OrchestrationError),
    #[error("invariant violated at t={time}s: {what}")]
    Invariant { time: f64, what: String },
}

/// One orchestration setup compared within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Variant {
    pub policy: Policy,
    pub mode: ClusteringMode,
    pub placement: PlacementMetric,
}

impl Variant {
    pub fn new(policy: Policy, mode: ClusteringMode, placement: PlacementMetric) -> Self {
        Self { policy, mode, placement }
    }

    pub fn of(cfg: &ExperimentConfig) -> Self {
        Self::new(cfg.policy, cfg.clustering_mode, cfg.placement)
    }

    /// Stable label such as `dual-layer/lax/latency`.
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}",
            self.policy.as_str(),
            match self.mode {
                ClusteringMode::Lax => "lax",
                ClusteringMode::Strict => "strict",
            },
            self.placement.as_str()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimClock {
    pub now_s: f64,
    pub tick_s: f64,
    pub end_s: f64,
    pub warmup_s: f64,
}

impl SimClock {
    pub fn finished(&self) -> bool {
        self.now_s >= self.end_s - 1e-9
    }
}

/// Round trip plus payload transfer, in milliseconds.
pub fn task_delay_ms(latency_ms: f64, upload_kb: f64, download_kb: f64, bandwidth_kbps: f64) -> f64 {
    2.0 * latency_ms + (upload_kb + download_kb) / bandwidth_kbps * 1000.0
}

/// Per-user task source alternating active and idle phases, with Poisson
/// arrivals during active phases.
///
/// Arrivals are drawn on the user's accumulated active time and mapped back
/// to wall time, so idle phases simply stretch the gaps.
#[derive(Debug, Clone)]
pub struct TaskGenerator {
    rng: Stream,
    offset_s: f64,
    active_s: f64,
    cycle_s: f64,
    gap: Exp<f64>,
    next_active_time: f64,
    offload_prob: f64,
}

impl TaskGenerator {
    pub fn new(profile: &ServiceProfile, mut rng: Stream) -> Self {
        let cycle_s = profile.active_period_s + profile.idle_period_s;
        let offset_s = rng.random::<f64>() * cycle_s;
        let gap = Exp::new(1.0 / profile.mean_interarrival_s).expect("positive interarrival");
        let mut g = Self {
            rng,
            offset_s,
            active_s: profile.active_period_s,
            cycle_s,
            gap,
            next_active_time: 0.0,
            offload_prob: profile.cloud_offload_prob,
        };
        let start = g.active_time_at(0.0);
        g.next_active_time = start + g.gap.sample(&mut g.rng);
        g
    }

    fn active_time_at(&self, t: f64) -> f64 {
        let s = t + self.offset_s;
        let k = (s / self.cycle_s).floor();
        k * self.active_s + (s - k * self.cycle_s).min(self.active_s)
    }

    fn wall_time_of(&self, a: f64) -> f64 {
        let k = (a / self.active_s).floor();
        k * self.cycle_s + (a - k * self.active_s) - self.offset_s
    }

    pub fn is_active(&self, t: f64) -> bool {
        (t + self.offset_s).rem_euclid(self.cycle_s) < self.active_s
    }

    /// Arrivals in `[from, to)` as `(time, offloaded)` pairs.
    pub fn arrivals(&mut self, from: f64, to: f64) -> Vec<(f64, bool)> {
        let mut out = Vec::new();
        loop {
            let t = self.wall_time_of(self.next_active_time);
            if t >= to {
                break;
            }
            let offloaded = self.offload_prob > 0.0 && self.rng.random::<f64>() < self.offload_prob;
            if t >= from {
                out.push((t, offloaded));
            }
            self.next_active_time += self.gap.sample(&mut self.rng);
        }
        out
    }
}

/// New tasks one user issues during `[from, to)`, numbered from `next_id`.
pub fn generate_tasks(
    user: &EndUser,
    profile: &ServiceProfile,
    generator: &mut TaskGenerator,
    from: f64,
    to: f64,
    next_id: &mut u64,
) -> Vec<Task> {
    generator
        .arrivals(from, to)
        .into_iter()
        .filter(|&(_, offloaded)| !offloaded)
        .map(|(t, _)| {
            let id = TaskId(*next_id);
            *next_id += 1;
            Task {
                id,
                owner: user.id,
                service: profile.id,
                created_at: t,
                length_mi: profile.task_length_mi,
                upload_kb: profile.upload_kb,
                download_kb: profile.download_kb,
                required_cores: profile.required_cores,
                state: TaskState::Pending,
                assigned_device: None,
                finish_at: None,
            }
        })
        .collect()
}

fn pick_share<R: Rng>(rng: &mut R, shares: &[f64]) -> usize {
    let mut x = rng.random::<f64>();
    for (i, &s) in shares.iter().enumerate() {
        if x < s {
            return i;
        }
        x -= s;
    }
    shares.iter().rposition(|&s| s > 0.0).unwrap_or(0)
}

/// Devices on a jittered grid covering the area.
fn make_devices(cfg: &ExperimentConfig) -> Vec<EdgeDevice> {
    let [w, h] = cfg.area_m;
    let n = cfg.n_devices;
    let cols = ((n as f64 * w / h).sqrt().ceil() as usize).max(1);
    let rows = n.div_ceil(cols);
    let (cw, ch) = (w / cols as f64, h / rows as f64);
    (0..n)
        .map(|i| {
            let mut rng = seed::substream(cfg.rng_seed, "device", &[i as u64]);
            let (c, r) = (i % cols, i / cols);
            let x = (c as f64 + 0.5 + (rng.random::<f64>() - 0.5) * 0.5) * cw;
            let y = (r as f64 + 0.5 + (rng.random::<f64>() - 0.5) * 0.5) * ch;
            let tech = CommTech::ALL[pick_share(&mut rng, &cfg.population.device_tech_shares)];
            EdgeDevice {
                id: DeviceId(i as u32),
                physical_pos: Point::new(x, y),
                vm_slots_total: cfg.infrastructure.vm_slots_total,
                vm_slots_free: cfg.infrastructure.vm_slots_total,
                vm_mips: cfg.infrastructure.vm_mips,
                comm_tech: tech,
                map_pos: None,
            }
        })
        .collect()
}

struct UserAgent {
    state: MobilityState,
    rng: Stream,
    generator: TaskGenerator,
    vehicle: bool,
}

fn make_user(cfg: &ExperimentConfig, i: usize) -> (EndUser, UserAgent) {
    let area = cfg.area();
    let mut rng = seed::substream(cfg.rng_seed, "user", &[i as u64]);
    let pos = Point::new(rng.random::<f64>() * area.width, rng.random::<f64>() * area.height);
    let vehicle = rng.random::<f64>() < cfg.population.high_mobility_fraction;
    let tech = CommTech::ALL[pick_share(&mut rng, &cfg.population.user_tech_shares)];
    let shares: Vec<f64> = ServiceTypeId::ALL.iter().map(|&s| cfg.service(s).usage_share).collect();
    let service = ServiceTypeId::ALL[pick_share(&mut rng, &shares)];
    let mut move_rng = seed::substream(cfg.rng_seed, "mobility", &[i as u64]);
    let state = if vehicle {
        MobilityState::new_vehicle(&mut move_rng, &cfg.mobility)
    } else {
        MobilityState::new_pedestrian(&mut move_rng, &area, &cfg.mobility)
    };
    let generator = TaskGenerator::new(cfg.service(service), seed::substream(cfg.rng_seed, "tasks", &[i as u64]));
    let user = EndUser {
        id: UserId(i as u32),
        physical_pos: pos,
        speed: state.speed,
        heading: state.heading,
        mobility_class: EndUser::classify(state.speed, cfg.speed_threshold_mps),
        comm_tech: tech,
        service,
        map_pos: None,
        subspace: None,
    };
    (
        user,
        UserAgent {
            state,
            rng: move_rng,
            generator,
            vehicle,
        },
    )
}

/// Everything in a run that does not depend on the orchestration policy.
pub struct Environment {
    cfg: ExperimentConfig,
    clock: SimClock,
    users: Vec<EndUser>,
    agents: Vec<UserAgent>,
    devices: Vec<EdgeDevice>,
    latency: Option<LatencyMatrix>,
    map: Option<LatencyMap>,
    next_task_id: u64,
}

impl Environment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, SimulationError> {
        let cfg = cfg.validate()?;
        let devices = make_devices(&cfg);
        let (users, agents) = (0..cfg.n_users).map(|i| make_user(&cfg, i)).unzip();
        let clock = SimClock {
            now_s: 0.0,
            tick_s: cfg.tick_s,
            end_s: cfg.sim_duration_s,
            warmup_s: cfg.warmup_s,
        };
        Ok(Self {
            cfg,
            clock,
            users,
            agents,
            devices,
            latency: None,
            map: None,
            next_task_id: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    pub fn users(&self) -> &[EndUser] {
        &self.users
    }

    pub fn devices(&self) -> &[EdgeDevice] {
        &self.devices
    }

    pub fn latency(&self) -> Option<&LatencyMatrix> {
        self.latency.as_ref()
    }

    pub fn map(&self) -> Option<&LatencyMap> {
        self.map.as_ref()
    }

    pub fn anchors(&self) -> Vec<(DeviceId, Point)> {
        self.devices
            .iter()
            .filter_map(|d| d.map_pos.map(|p| (d.id, p)))
            .collect()
    }

    /// Steps 1-3 plus task generation for the tick ending at the returned
    /// time. Tasks come back sorted by creation time, then id.
    pub fn advance(&mut self) -> Result<(f64, Vec<Task>), SimulationError> {
        let from = self.clock.now_s;
        let dt = self.clock.tick_s.min(self.clock.end_s - from);
        let to = from + dt;
        let area = self.cfg.area();
        let mp = &self.cfg.mobility;
        for (u, a) in self.users.iter_mut().zip(&mut self.agents) {
            u.physical_pos = if a.vehicle {
                step_vehicle(u.physical_pos, &mut a.state, dt, &area, mp, &mut a.rng)
            } else {
                step_pedestrian(u.physical_pos, &mut a.state, from, dt, &area, mp, &mut a.rng)
            };
            u.speed = a.state.speed;
            u.heading = a.state.heading;
            u.mobility_class = EndUser::classify(u.speed, self.cfg.speed_threshold_mps);
        }

        let matrix = build_latency_matrix(&self.users, &self.devices, &self.cfg.latency, self.cfg.rng_seed, to)?;
        let ids: Vec<DeviceId> = self.devices.iter().map(|d| d.id).collect();
        let map = refresh_map(&matrix, &ids, self.map.as_ref(), &self.cfg.localization, self.cfg.rng_seed)?;
        for (d, p) in self.devices.iter_mut().zip(&map.anchor_coords) {
            d.map_pos = Some(*p);
        }
        for (u, p) in self.users.iter_mut().zip(&map.user_coords) {
            u.map_pos = *p;
        }
        self.latency = Some(matrix);
        self.map = Some(map);

        let mut tasks = Vec::new();
        let mut scratch_id = 0u64;
        for (u, a) in self.users.iter().zip(&mut self.agents) {
            let profile = self.cfg.service(u.service);
            tasks.extend(generate_tasks(u, profile, &mut a.generator, from, to, &mut scratch_id));
        }
        tasks.sort_by(|a, b| a.created_at.total_cmp(&b.created_at).then(a.owner.cmp(&b.owner)));
        for t in &mut tasks {
            t.id = TaskId(self.next_task_id);
            self.next_task_id += 1;
        }
        self.clock.now_s = to;
        Ok((to, tasks))
    }
}

/// Task counts. `generated == completed + failed_mobility + failed_capacity
/// + in_flight` holds after every tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskLedger {
    pub generated: u64,
    pub completed: u64,
    pub failed_mobility: u64,
    pub failed_capacity: u64,
    pub in_flight: u64,
}

impl TaskLedger {
    pub fn balanced(&self) -> bool {
        self.generated == self.completed + self.failed_mobility + self.failed_capacity + self.in_flight
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub id: TaskId,
    pub owner: UserId,
    pub created_at: f64,
    pub state: TaskState,
    pub device: Option<DeviceId>,
    /// Network delay of the placement; `None` for capacity failures.
    pub delay_ms: Option<f64>,
}

#[derive(Debug, Clone)]
struct RunningTask {
    record: usize,
    task: Task,
    device: DeviceId,
    finish_at: f64,
    delay_ms: f64,
    scope: ServingScope,
}

/// Scalar outcome of one run of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: Variant,
    pub n_users: usize,
    pub seed: u64,
    /// Tasks generated over the whole run, warm-up included.
    pub total_generated: u64,
    pub generated: u64,
    pub completed: u64,
    pub failed_mobility: u64,
    pub failed_capacity: u64,
    pub in_flight: u64,
    pub mean_delay_ms: f64,
    pub p50_delay_ms: f64,
    pub p95_delay_ms: f64,
    pub deadline_misses: u64,
    pub mobility_failure_rate: f64,
    pub capacity_failure_rate: f64,
    /// Mean over post-warm-up ticks of the mean subspace churn (fraction).
    pub mean_churn: f64,
    pub mean_nomad_fraction: f64,
    pub mean_subspaces: f64,
    pub resegmentations: u64,
    pub map_stress: f64,
    /// `false` when no task was generated after warm-up; rates are then 0.
    pub rates_defined: bool,
}

/// One policy variant's state during a run.
pub struct PolicyRun {
    variant: Variant,
    params: SegmentationParams,
    devices: Vec<EdgeDevice>,
    capacity: CapacityLedger,
    segmentation: Option<Segmentation>,
    running: Vec<RunningTask>,
    ledger: TaskLedger,
    records: Vec<TaskRecord>,
    delays: Vec<f64>,
    deadline_misses: u64,
    churn_samples: Vec<f64>,
    nomad_samples: Vec<f64>,
    subspace_samples: Vec<f64>,
    resegmentations: u64,
}

impl PolicyRun {
    fn new(env: &Environment, variant: Variant) -> Self {
        let mut cfg = env.cfg.clone();
        cfg.policy = variant.policy;
        cfg.clustering_mode = variant.mode;
        Self {
            variant,
            params: cfg.segmentation_params(),
            devices: env.devices.clone(),
            capacity: CapacityLedger::default(),
            segmentation: None,
            running: Vec::new(),
            ledger: TaskLedger::default(),
            records: Vec::new(),
            delays: Vec::new(),
            deadline_misses: 0,
            churn_samples: Vec::new(),
            nomad_samples: Vec::new(),
            subspace_samples: Vec::new(),
            resegmentations: 0,
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn ledger(&self) -> TaskLedger {
        self.ledger
    }

    pub fn records(&self) -> &[TaskRecord] {
        &self.records
    }

    pub fn devices(&self) -> &[EdgeDevice] {
        &self.devices
    }

    pub fn segmentation(&self) -> Option<&Segmentation> {
        self.segmentation.as_ref()
    }

    pub fn running_count(&self) -> usize {
        self.running.len()
    }

    /// Task conservation and capacity-ledger consistency.
    pub fn check_invariants(&self, time: f64) -> Result<(), SimulationError> {
        let fail = |what: String| Err(SimulationError::Invariant { time, what });
        if !self.ledger.balanced() {
            return fail(format!("task ledger unbalanced: {:?}", self.ledger));
        }
        if self.ledger.in_flight as usize != self.running.len() {
            return fail("in-flight count differs from running tasks".into());
        }
        let busy: u32 = self.devices.iter().map(EdgeDevice::busy_slots).sum();
        if busy as usize != self.running.len() || !self.capacity.consistent_with(&self.devices) {
            return fail(format!("{busy} busy slots for {} running tasks", self.running.len()));
        }
        Ok(())
    }

    fn close(&mut self, i: usize, state: TaskState) -> Result<RunningTask, SimulationError> {
        let mut rt = self.running.swap_remove(i);
        rt.task.transition(state).map_err(|e| SimulationError::Invariant {
            time: rt.finish_at,
            what: e.to_string(),
        })?;
        release(rt.task.id, &mut self.devices, &mut self.capacity)?;
        self.ledger.in_flight -= 1;
        self.records[rt.record].state = state;
        Ok(rt)
    }

    fn tick(&mut self, env: &Environment, now: f64, tasks: &[Task]) -> Result<(), SimulationError> {
        let cfg = &env.cfg;
        let users = &env.users;
        let latency = env.latency.as_ref().expect("environment advanced");
        let warm = now >= cfg.warmup_s;

        // 4. segmentation
        if self.variant.policy.is_segmented() {
            let anchors = env.anchors();
            let seg_seed = seed::derive_seed(cfg.rng_seed, "segmentation", &[now.to_bits()]);
            let churn = match &self.segmentation {
                None => {
                    self.segmentation = Some(build_segmentation(users, &anchors, &self.params, seg_seed, now, 0)?);
                    0.0
                }
                Some(seg) => {
                    let out = maybe_resegment(seg, users, &anchors, &self.params, seg_seed, now)?;
                    if out.resegmented && warm {
                        self.resegmentations += 1;
                    }
                    self.segmentation = Some(out.segmentation);
                    out.mean_churn
                }
            };
            if warm {
                let seg = self.segmentation.as_ref().expect("just built");
                self.churn_samples.push(churn);
                self.nomad_samples.push(if users.is_empty() {
                    0.0
                } else {
                    seg.nomads.len() as f64 / users.len() as f64
                });
                self.subspace_samples.push(seg.subspaces.len() as f64);
            }
        }

        // 5. mobility failures among tasks still running after `now`
        let coverage = cfg.orchestration.coverage_latency_ms;
        let mut i = 0;
        while i < self.running.len() {
            let rt = &self.running[i];
            let user = &users[rt.task.owner.index()];
            let lat = latency.user_device.get(user.id.index(), rt.device.index());
            if rt.finish_at > now && check_mobility_failure(&rt.scope, user.map_pos, lat, coverage) {
                self.close(i, TaskState::FailedMobility)?;
                self.ledger.failed_mobility += 1;
            } else {
                i += 1;
            }
        }

        // 6. completions
        let mut i = 0;
        while i < self.running.len() {
            if self.running[i].finish_at <= now {
                let rt = self.close(i, TaskState::Completed)?;
                self.ledger.completed += 1;
                if rt.task.created_at >= cfg.warmup_s {
                    self.delays.push(rt.delay_ms);
                    if rt.delay_ms > cfg.service(rt.task.service).max_delay_ms {
                        self.deadline_misses += 1;
                    }
                }
            } else {
                i += 1;
            }
        }

        // 7. placement of this tick's arrivals
        for task in tasks {
            let mut task = task.clone();
            let user = &users[task.owner.index()];
            let pool = candidate_pool(user, self.segmentation.as_ref(), &self.devices, self.variant.policy);
            let decision = place_task(
                task.id,
                user,
                &pool,
                &mut self.devices,
                &mut self.capacity,
                latency,
                self.variant.placement,
            )?;
            self.ledger.generated += 1;
            let record = self.records.len();
            self.records.push(TaskRecord {
                id: task.id,
                owner: task.owner,
                created_at: task.created_at,
                state: TaskState::Pending,
                device: decision.device,
                delay_ms: None,
            });
            match decision.outcome {
                PlacementOutcome::FailedCapacity => {
                    task.transition(TaskState::FailedCapacity).expect("pending task");
                    self.ledger.failed_capacity += 1;
                    self.records[record].state = TaskState::FailedCapacity;
                }
                PlacementOutcome::PlacedEdge => {
                    let device = decision.device.expect("placed");
                    let d = &self.devices[device.index()];
                    let profile = cfg.service(task.service);
                    let delay_ms = task_delay_ms(
                        decision.est_latency_ms,
                        task.upload_kb,
                        task.download_kb,
                        cfg.infrastructure.bandwidth_kbps,
                    );
                    let finish_at = task.created_at + profile.processing_time_s(d.vm_mips) + delay_ms / 1000.0;
                    task.transition(TaskState::Running).expect("pending task");
                    task.assigned_device = Some(device);
                    task.finish_at = Some(finish_at);
                    let scope = match self.segmentation.as_ref().and_then(|s| s.subspace_of(user.id)) {
                        Some(s) if self.variant.policy.is_segmented() => ServingScope::Subspace {
                            id: s.id,
                            center: s.center,
                            boundary: s.boundary(),
                        },
                        _ => ServingScope::Coverage,
                    };
                    self.ledger.in_flight += 1;
                    self.records[record].state = TaskState::Running;
                    self.records[record].delay_ms = Some(delay_ms);
                    self.running.push(RunningTask {
                        record,
                        task,
                        device,
                        finish_at,
                        delay_ms,
                        scope,
                    });
                }
            }
        }
        self.check_invariants(now)
    }

    fn report(&self, env: &Environment) -> MetricsReport {
        let cfg = &env.cfg;
        let post: Vec<&TaskRecord> = self.records.iter().filter(|r| r.created_at >= cfg.warmup_s).collect();
        let count = |s: TaskState| post.iter().filter(|r| r.state == s).count() as u64;
        let generated = post.len() as u64;
        let failed_mobility = count(TaskState::FailedMobility);
        let failed_capacity = count(TaskState::FailedCapacity);
        let rate = |n: u64| if generated == 0 { 0.0 } else { n as f64 / generated as f64 };
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let mut sorted = self.delays.clone();
        sorted.sort_by(f64::total_cmp);
        let pct = |q: f64| {
            if sorted.is_empty() {
                0.0
            } else {
                let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
                sorted[rank - 1]
            }
        };
        MetricsReport {
            variant: self.variant,
            n_users: cfg.n_users,
            seed: cfg.rng_seed,
            total_generated: self.ledger.generated,
            generated,
            completed: count(TaskState::Completed),
            failed_mobility,
            failed_capacity,
            in_flight: count(TaskState::Running),
            mean_delay_ms: mean(&self.delays),
            p50_delay_ms: pct(0.5),
            p95_delay_ms: pct(0.95),
            deadline_misses: self.deadline_misses,
            mobility_failure_rate: rate(failed_mobility),
            capacity_failure_rate: rate(failed_capacity),
            mean_churn: mean(&self.churn_samples),
            mean_nomad_fraction: mean(&self.nomad_samples),
            mean_subspaces: mean(&self.subspace_samples),
            resegmentations: self.resegmentations,
            map_stress: env.map.as_ref().map_or(0.0, |m| m.stress_value),
            rates_defined: generated > 0,
        }
    }
}

/// A run of one or more variants over a shared environment.
pub struct Simulation {
    env: Environment,
    runs: Vec<PolicyRun>,
}

impl Simulation {
    pub fn new(cfg: ExperimentConfig, variants: &[Variant]) -> Result<Self, SimulationError> {
        let env = Environment::new(cfg)?;
        let runs = variants.iter().map(|&v| PolicyRun::new(&env, v)).collect();
        Ok(Self { env, runs })
    }

    pub fn environment(&self) -> &Environment {
        &self.env
    }

    pub fn runs(&self) -> &[PolicyRun] {
        &self.runs
    }

    pub fn is_finished(&self) -> bool {
        self.env.clock.finished()
    }

    /// Advance one tick. Returns the time at the end of the tick.
    pub fn step(&mut self) -> Result<f64, SimulationError> {
        let (now, tasks) = self.env.advance()?;
        for run in &mut self.runs {
            run.tick(&self.env, now, &tasks)?;
        }
        Ok(now)
    }

    pub fn run_to_end(mut self) -> Result<Vec<MetricsReport>, SimulationError> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(self.reports())
    }

    pub fn reports(&self) -> Vec<MetricsReport> {
        self.runs.iter().map(|r| r.report(&self.env)).collect()
    }
}

/// Run the configured policy from 0 to `sim_duration_s`.
pub fn run(cfg: ExperimentConfig) -> Result<MetricsReport, SimulationError> {
    let v = Variant::of(&cfg);
    Ok(run_variants(cfg, &[v])?.remove(0))
}

/// Run several variants against one shared environment.
pub fn run_variants(cfg: ExperimentConfig, variants: &[Variant]) -> Result<Vec<MetricsReport>, SimulationError> {
    Simulation::new(cfg, variants)?.run_to_end()
}

impl Segmentation {
    /// Copy subspace membership into the users' `subspace` fields.
    pub fn annotate(&self, users: &mut [EndUser]) {
        for u in users {
            u.subspace = self.subspace_of(u.id).map(|s| s.id);
        }
    }
}
