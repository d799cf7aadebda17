//! Mobility segregation and lax clustering of the latency map into
//! subspaces.
//!
//! Low-mobility users are clustered with k-means followed by outlier
//! rejection; high-mobility users with greedy densest-first radial clusters
//! whose membership boundary carries extra padding. Users that fit no cluster
//! stay nomadic. Every subspace shares all edge devices inside its boundary.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;
use crate::model::{DeviceId, EndUser, MobilityClass, SubspaceId, UserId};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SegmentationError {
    #[error("k-means needs at least one point")]
    EmptyInput,
    #[error("cluster health is undefined for an empty roster")]
    EmptyRoster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layer {
    Low,
    High,
    /// Users of both classes clustered together (no segregation).
    Combined,
}

impl Layer {
    pub fn accepts(self, class: MobilityClass) -> bool {
        match self {
            Layer::Combined => true,
            Layer::Low => class == MobilityClass::LowMobility,
            Layer::High => class == MobilityClass::HighMobility,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Low => "low",
            Layer::High => "high",
            Layer::Combined => "combined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusteringMode {
    /// Users outside every cluster boundary stay nomadic.
    Lax,
    /// Every localized user belongs to its nearest cluster.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layering {
    /// All users clustered as one population with k-means.
    Single,
    /// Low and high mobility layers clustered separately.
    Dual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KmeansConfig {
    pub target_cluster_size: usize,
    /// Map units (ms).
    pub outlier_radius: f64,
    pub max_iter: usize,
    /// Independent k-means++ initializations; the lowest objective wins.
    pub n_init: usize,
    /// Boundary padding applied to k-means subspaces.
    pub padding_fraction: f64,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self {
            target_cluster_size: 60,
            outlier_radius: 20.0,
            max_iter: 100,
            n_init: 3,
            padding_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialConfig {
    /// Map units (ms).
    pub radius: f64,
    pub padding_fraction: f64,
    pub min_members: usize,
}

impl Default for RadialConfig {
    fn default() -> Self {
        Self {
            radius: 24.0,
            padding_fraction: 0.25,
            min_members: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationParams {
    pub layering: Layering,
    pub mode: ClusteringMode,
    pub speed_threshold_mps: f64,
    pub churn_threshold: f64,
    pub kmeans: KmeansConfig,
    pub radial: RadialConfig,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MobilityLayers {
    pub low: BTreeSet<UserId>,
    pub high: BTreeSet<UserId>,
}

/// Split localized users by speed: strictly above the threshold is high
/// mobility.
pub fn segregate(users: &[EndUser], speed_threshold_mps: f64) -> MobilityLayers {
    let mut layers = MobilityLayers::default();
    for u in users.iter().filter(|u| u.map_pos.is_some()) {
        match EndUser::classify(u.speed, speed_threshold_mps) {
            MobilityClass::LowMobility => layers.low.insert(u.id),
            MobilityClass::HighMobility => layers.high.insert(u.id),
        };
    }
    layers
}

/// Number of k-means clusters for `n_points`, rounding half up.
pub fn select_k(n_points: usize, target_cluster_size: usize) -> usize {
    if n_points == 0 {
        return 1;
    }
    let k = (n_points as f64 / target_cluster_size.max(1) as f64 + 0.5).floor() as usize;
    k.clamp(1, n_points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterPoint {
    pub id: UserId,
    pub pos: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub center: Point,
    pub radius: f64,
    pub padding_fraction: f64,
    pub members: Vec<UserId>,
}

impl Cluster {
    pub fn boundary(&self) -> f64 {
        self.radius * (1.0 + self.padding_fraction)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Clustering {
    pub clusters: Vec<Cluster>,
    pub nomads: Vec<UserId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaxKmeans {
    pub k: usize,
    pub outlier_radius: f64,
    pub max_iter: usize,
    pub n_init: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansOutcome {
    pub clustering: Clustering,
    /// Within-cluster sum of squares of the Lloyd fixpoint, before outliers
    /// are removed.
    pub wcss: f64,
    /// Objective after every Lloyd iteration of the winning initialization.
    pub trace: Vec<f64>,
}

fn nearest(p: Point, centers: &[Point]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = p.dist_sq(*c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn kmeans_pp_init<R: Rng>(points: &[ClusterPoint], k: usize, rng: &mut R) -> Vec<Point> {
    let mut centers = vec![points[rng.random_range(0..points.len())].pos];
    let mut d2: Vec<f64> = points.iter().map(|p| p.pos.dist_sq(centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].pos;
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(p.pos.dist_sq(c));
        }
    }
    centers
}

fn lloyd(points: &[ClusterPoint], mut centers: Vec<Point>, max_iter: usize) -> (Vec<Point>, Vec<usize>, Vec<f64>) {
    let k = centers.len();
    let mut assign: Vec<usize> = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let (c, _) = nearest(p.pos, &centers);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        let mut sums = vec![(Point::ORIGIN, 0usize); k];
        for (&a, p) in assign.iter().zip(points) {
            sums[a].0 = sums[a].0 + p.pos;
            sums[a].1 += 1;
        }
        for (c, (s, n)) in centers.iter_mut().zip(&sums) {
            // Empty clusters keep their previous center.
            if *n > 0 {
                *c = *s * (1.0 / *n as f64);
            }
        }
        let wcss: f64 = assign.iter().zip(points).map(|(&a, p)| p.pos.dist_sq(centers[a])).sum();
        trace.push(wcss);
        if !changed {
            break;
        }
    }
    (centers, assign, trace)
}

/// Single-point (Hartigan) moves from a Lloyd fixpoint: a point moves when
/// that strictly lowers the total within-cluster sum of squares. Escapes
/// many of the local minima Lloyd stops in on small inputs.
fn hartigan(points: &[ClusterPoint], centers: &mut [Point], assign: &mut [usize], trace: &mut Vec<f64>, max_pass: usize) {
    let k = centers.len();
    let mut sums = vec![Point::ORIGIN; k];
    let mut counts = vec![0usize; k];
    for (&a, p) in assign.iter().zip(points) {
        sums[a] = sums[a] + p.pos;
        counts[a] += 1;
    }
    for _ in 0..max_pass.max(1) {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let a = assign[i];
            if counts[a] <= 1 {
                continue;
            }
            let na = counts[a] as f64;
            let gain = na / (na - 1.0) * p.pos.dist_sq(centers[a]);
            let mut best: Option<(usize, f64)> = None;
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let cost = if counts[b] == 0 { 0.0 } else { nb / (nb + 1.0) * p.pos.dist_sq(centers[b]) };
                if best.is_none_or(|(_, c)| cost < c) {
                    best = Some((b, cost));
                }
            }
            let Some((b, cost)) = best else { continue };
            if cost < gain * (1.0 - 1e-12) {
                sums[a] = sums[a] - p.pos;
                counts[a] -= 1;
                sums[b] = sums[b] + p.pos;
                counts[b] += 1;
                centers[a] = sums[a] * (1.0 / counts[a] as f64);
                centers[b] = sums[b] * (1.0 / counts[b] as f64);
                assign[i] = b;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        trace.push(assign.iter().zip(points).map(|(&a, p)| p.pos.dist_sq(centers[a])).sum());
    }
}

/// Lloyd k-means from seeded k-means++ starts, refined by single-point
/// moves, then outlier rejection.
///
/// After convergence every point farther than `outlier_radius` from its
/// centroid becomes a nomad. Centroids are not recomputed afterwards; a
/// cluster's radius is the largest remaining member distance and clusters
/// left empty are dropped.
pub fn kmeans_lax(points: &[ClusterPoint], params: &LaxKmeans, seed: u64) -> Result<KmeansOutcome, SegmentationError> {
    if points.is_empty() {
        return Err(SegmentationError::EmptyInput);
    }
    let k = params.k.clamp(1, points.len());
    let mut best: Option<(Vec<Point>, Vec<usize>, Vec<f64>)> = None;
    for init in 0..params.n_init.max(1) {
        let mut rng = seed::substream(seed, "kmeans", &[init as u64]);
        let centers = kmeans_pp_init(points, k, &mut rng);
        let mut run = lloyd(points, centers, params.max_iter);
        hartigan(points, &mut run.0, &mut run.1, &mut run.2, params.max_iter);
        let better = match &best {
            None => true,
            Some(b) => run.2.last() < b.2.last(),
        };
        if better {
            best = Some(run);
        }
    }
    let (centers, assign, trace) = best.expect("n_init >= 1");
    let wcss = *trace.last().expect("at least one iteration");

    let mut clusters: Vec<Cluster> = centers
        .iter()
        .map(|&center| Cluster {
            center,
            radius: 0.0,
            padding_fraction: 0.0,
            members: Vec::new(),
        })
        .collect();
    let mut nomads = Vec::new();
    for (&a, p) in assign.iter().zip(points) {
        let d = p.pos.dist(centers[a]);
        if d > params.outlier_radius {
            nomads.push(p.id);
        } else {
            let c = &mut clusters[a];
            c.radius = c.radius.max(d);
            c.members.push(p.id);
        }
    }
    clusters.retain(|c| !c.members.is_empty());
    Ok(KmeansOutcome {
        clustering: Clustering { clusters, nomads },
        wcss,
        trace,
    })
}

/// Greedy densest-first radial clustering.
///
/// Repeatedly takes the unclaimed point with the most unclaimed points within
/// `radius` (itself included; ties go to the lowest user id) and claims that
/// neighborhood as a cluster centered on it. Stops once the best
/// neighborhood has fewer than `min_members` points; the rest are nomads.
pub fn radial_cluster(points: &[ClusterPoint], radius: f64, padding_fraction: f64, min_members: usize) -> Clustering {
    let n = points.len();
    let r2 = radius * radius;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| points[i].pos.dist_sq(points[j].pos) <= r2).collect())
        .collect();
    let mut claimed = vec![false; n];
    let mut clusters = Vec::new();
    loop {
        let mut best: Option<(usize, usize)> = None;
        for i in (0..n).filter(|&i| !claimed[i]) {
            let count = neighbors[i].iter().filter(|&&j| !claimed[j]).count();
            let better = match best {
                None => true,
                Some((b, bc)) => count > bc || (count == bc && points[i].id < points[b].id),
            };
            if better {
                best = Some((i, count));
            }
        }
        let Some((seed_point, count)) = best else { break };
        if count < min_members.max(1) {
            break;
        }
        let mut members: Vec<UserId> = Vec::with_capacity(count);
        for &j in &neighbors[seed_point] {
            if !claimed[j] {
                claimed[j] = true;
                members.push(points[j].id);
            }
        }
        members.sort();
        clusters.push(Cluster {
            center: points[seed_point].pos,
            radius,
            padding_fraction,
            members,
        });
    }
    let mut nomads: Vec<UserId> = (0..n).filter(|&i| !claimed[i]).map(|i| points[i].id).collect();
    nomads.sort();
    Clustering { clusters, nomads }
}

/// Devices whose anchors fall inside the padded boundary of a cluster; the
/// single nearest anchor when none does.
pub fn attach_devices(center: Point, boundary: f64, anchors: &[(DeviceId, Point)]) -> BTreeSet<DeviceId> {
    let mut inside: BTreeSet<DeviceId> = anchors
        .iter()
        .filter(|(_, a)| a.dist(center) <= boundary)
        .map(|(id, _)| *id)
        .collect();
    if inside.is_empty() {
        if let Some((id, _)) = anchors
            .iter()
            .min_by(|a, b| a.1.dist_sq(center).total_cmp(&b.1.dist_sq(center)).then(a.0.cmp(&b.0)))
        {
            inside.insert(*id);
        }
    }
    inside
}

/// Assign every point to the nearest center; ties go to the lower id.
pub fn strict_cluster(points: &[ClusterPoint], centers: &[(SubspaceId, Point)]) -> Vec<(UserId, SubspaceId)> {
    points
        .iter()
        .filter_map(|p| nearest_center(p.pos, centers.iter().copied()).map(|s| (p.id, s)))
        .collect()
}

fn nearest_center(p: Point, centers: impl Iterator<Item = (SubspaceId, Point)>) -> Option<SubspaceId> {
    let mut best: Option<(SubspaceId, f64)> = None;
    for (id, c) in centers {
        let d = p.dist_sq(c);
        let better = match best {
            None => true,
            Some((bid, bd)) => d < bd || (d == bd && id < bid),
        };
        if better {
            best = Some((id, d));
        }
    }
    best.map(|(id, _)| id)
}

/// Fraction of the creation-time roster that churned: members lost plus
/// members gained, over the roster size. Not clamped.
pub fn cluster_health(roster_at_creation: &BTreeSet<UserId>, current: &BTreeSet<UserId>) -> Result<f64, SegmentationError> {
    if roster_at_creation.is_empty() {
        return Err(SegmentationError::EmptyRoster);
    }
    let lost = roster_at_creation.difference(current).count();
    let added = current.difference(roster_at_creation).count();
    Ok((lost + added) as f64 / roster_at_creation.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    pub id: SubspaceId,
    pub layer: Layer,
    pub center: Point,
    pub radius: f64,
    pub padding_fraction: f64,
    pub members: BTreeSet<UserId>,
    pub devices: BTreeSet<DeviceId>,
    pub roster_at_creation: BTreeSet<UserId>,
    pub created_at: f64,
}

impl Subspace {
    pub fn boundary(&self) -> f64 {
        self.radius * (1.0 + self.padding_fraction)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.dist(self.center) <= self.boundary()
    }

    pub fn churn(&self) -> f64 {
        cluster_health(&self.roster_at_creation, &self.members).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub subspaces: Vec<Subspace>,
    pub nomads: BTreeSet<UserId>,
    pub created_at: f64,
    pub mode: ClusteringMode,
    /// Index into `subspaces` for each user id; `None` for nomads.
    member_of: Vec<Option<usize>>,
}

impl Segmentation {
    pub fn empty(n_users: usize, mode: ClusteringMode, created_at: f64) -> Self {
        Self {
            subspaces: Vec::new(),
            nomads: (0..n_users as u32).map(UserId).collect(),
            created_at,
            mode,
            member_of: vec![None; n_users],
        }
    }

    pub fn subspace_of(&self, user: UserId) -> Option<&Subspace> {
        self.member_of
            .get(user.index())
            .copied()
            .flatten()
            .map(|i| &self.subspaces[i])
    }

    pub fn get(&self, id: SubspaceId) -> Option<&Subspace> {
        self.subspaces.iter().find(|s| s.id == id)
    }

    /// Subspace whose center is nearest to `p` in map space.
    pub fn nearest_subspace(&self, p: Point) -> Option<&Subspace> {
        nearest_center(p, self.subspaces.iter().map(|s| (s.id, s.center))).and_then(|id| self.get(id))
    }

    pub fn next_id(&self) -> u32 {
        self.subspaces.iter().map(|s| s.id.0 + 1).max().unwrap_or(0)
    }

    /// Mean churn over all subspaces; zero when there are none.
    pub fn mean_churn(&self) -> f64 {
        if self.subspaces.is_empty() {
            return 0.0;
        }
        self.subspaces.iter().map(Subspace::churn).sum::<f64>() / self.subspaces.len() as f64
    }

    fn reindex(&mut self, n_users: usize) {
        self.member_of = vec![None; n_users];
        for (i, s) in self.subspaces.iter().enumerate() {
            for m in &s.members {
                self.member_of[m.index()] = Some(i);
            }
        }
        self.nomads = (0..n_users as u32)
            .map(UserId)
            .filter(|u| self.member_of[u.index()].is_none())
            .collect();
    }
}

fn layer_points(users: &[EndUser], filter: impl Fn(&EndUser) -> bool) -> Vec<ClusterPoint> {
    users
        .iter()
        .filter(|u| filter(u))
        .filter_map(|u| u.map_pos.map(|pos| ClusterPoint { id: u.id, pos }))
        .collect()
}

/// Segment the localized population into subspaces.
///
/// Users need `map_pos` set; unlocalized users become nomads. Subspace ids
/// start at `first_id` so ids stay unique across rebuilds.
pub fn build_segmentation(
    users: &[EndUser],
    anchors: &[(DeviceId, Point)],
    params: &SegmentationParams,
    seed: u64,
    now: f64,
    first_id: u32,
) -> Result<Segmentation, SegmentationError> {
    let mut layered: Vec<(Layer, Vec<ClusterPoint>, Clustering)> = Vec::new();
    let kmeans_layer = |layer: Layer, pts: Vec<ClusterPoint>| -> Result<(Layer, Vec<ClusterPoint>, Clustering), SegmentationError> {
        if pts.is_empty() {
            return Ok((layer, pts, Clustering::default()));
        }
        // Strict mode covers everyone, so no point is rejected as an outlier.
        let outlier_radius = match params.mode {
            ClusteringMode::Lax => params.kmeans.outlier_radius,
            ClusteringMode::Strict => f64::INFINITY,
        };
        let lax = LaxKmeans {
            k: select_k(pts.len(), params.kmeans.target_cluster_size),
            outlier_radius,
            max_iter: params.kmeans.max_iter,
            n_init: params.kmeans.n_init,
        };
        let mut out = kmeans_lax(&pts, &lax, seed::derive_seed(seed, "segment", &[layer as u64]))?;
        for c in &mut out.clustering.clusters {
            c.padding_fraction = params.kmeans.padding_fraction;
        }
        Ok((layer, pts, out.clustering))
    };
    match params.layering {
        Layering::Single => {
            layered.push(kmeans_layer(Layer::Combined, layer_points(users, |_| true))?);
        }
        Layering::Dual => {
            let layers = segregate(users, params.speed_threshold_mps);
            let low = layer_points(users, |u| layers.low.contains(&u.id));
            let high = layer_points(users, |u| layers.high.contains(&u.id));
            layered.push(kmeans_layer(Layer::Low, low)?);
            let r = &params.radial;
            let min_members = match params.mode {
                ClusteringMode::Lax => r.min_members,
                ClusteringMode::Strict => 1,
            };
            let radial = radial_cluster(&high, r.radius, r.padding_fraction, min_members);
            layered.push((Layer::High, high, radial));
        }
    }

    let mut subspaces = Vec::new();
    let mut next = first_id;
    for (layer, pts, clustering) in layered {
        let base = subspaces.len();
        for c in clustering.clusters {
            subspaces.push(Subspace {
                id: SubspaceId(next),
                layer,
                center: c.center,
                radius: c.radius,
                padding_fraction: c.padding_fraction,
                members: c.members.iter().copied().collect(),
                devices: BTreeSet::new(),
                roster_at_creation: BTreeSet::new(),
                created_at: now,
            });
            next += 1;
        }
        if params.mode == ClusteringMode::Strict && subspaces.len() > base {
            let centers: Vec<(SubspaceId, Point)> = subspaces[base..].iter().map(|s| (s.id, s.center)).collect();
            for s in &mut subspaces[base..] {
                s.members.clear();
            }
            let positions: std::collections::HashMap<UserId, Point> = pts.iter().map(|p| (p.id, p.pos)).collect();
            let first = subspaces[base].id.0;
            for (user, sid) in strict_cluster(&pts, &centers) {
                let s = &mut subspaces[base + (sid.0 - first) as usize];
                s.members.insert(user);
                let needed = positions[&user].dist(s.center) / (1.0 + s.padding_fraction);
                s.radius = s.radius.max(needed);
            }
        }
    }
    subspaces.retain(|s| !s.members.is_empty());
    for s in &mut subspaces {
        s.devices = attach_devices(s.center, s.boundary(), anchors);
    }

    let mut seg = Segmentation {
        subspaces,
        nomads: BTreeSet::new(),
        created_at: now,
        mode: params.mode,
        member_of: Vec::new(),
    };
    seg.reindex(users.len());
    if params.mode == ClusteringMode::Lax {
        // Nomads already inside a padded boundary join now, so the roster
        // matches what the first refresh would see.
        seg = refresh_membership(&seg, users, params.speed_threshold_mps);
    }
    for s in &mut seg.subspaces {
        s.roster_at_creation = s.members.clone();
    }
    Ok(seg)
}

/// Recompute membership from current map positions without moving any
/// subspace. Rosters are kept so churn accumulates.
///
/// Lax: a member stays while inside its subspace's padded boundary; anyone
/// else joins the nearest layer-compatible subspace whose boundary holds
/// them, or becomes a nomad. Strict: everyone joins the nearest
/// layer-compatible center.
pub fn refresh_membership(seg: &Segmentation, users: &[EndUser], speed_threshold_mps: f64) -> Segmentation {
    let mut members: Vec<BTreeSet<UserId>> = vec![BTreeSet::new(); seg.subspaces.len()];
    for u in users {
        let Some(pos) = u.map_pos else { continue };
        let class = EndUser::classify(u.speed, speed_threshold_mps);
        let compatible = seg
            .subspaces
            .iter()
            .enumerate()
            .filter(|(_, s)| s.layer.accepts(class));
        let target = match seg.mode {
            ClusteringMode::Lax => {
                let current = seg
                    .member_of
                    .get(u.id.index())
                    .copied()
                    .flatten()
                    .filter(|&i| seg.subspaces[i].layer.accepts(class) && seg.subspaces[i].contains(pos));
                current.or_else(|| {
                    let candidates = compatible.filter(|(_, s)| s.contains(pos));
                    nearest_index(pos, candidates)
                })
            }
            ClusteringMode::Strict => nearest_index(pos, compatible),
        };
        if let Some(i) = target {
            members[i].insert(u.id);
        }
    }
    let mut out = seg.clone();
    for (s, m) in out.subspaces.iter_mut().zip(members) {
        s.members = m;
    }
    out.reindex(users.len());
    out
}

fn nearest_index<'a>(p: Point, candidates: impl Iterator<Item = (usize, &'a Subspace)>) -> Option<usize> {
    let mut best: Option<(usize, SubspaceId, f64)> = None;
    for (i, s) in candidates {
        let d = p.dist_sq(s.center);
        let better = match best {
            None => true,
            Some((_, bid, bd)) => d < bd || (d == bd && s.id < bid),
        };
        if better {
            best = Some((i, s.id, d));
        }
    }
    best.map(|(i, _, _)| i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResegmentOutcome {
    pub segmentation: Segmentation,
    pub resegmented: bool,
    /// Mean churn measured on the refreshed membership, before any rebuild.
    pub mean_churn: f64,
}

/// Refresh membership and rebuild only when mean churn strictly exceeds the
/// threshold.
pub fn maybe_resegment(
    seg: &Segmentation,
    users: &[EndUser],
    anchors: &[(DeviceId, Point)],
    params: &SegmentationParams,
    seed: u64,
    now: f64,
) -> Result<ResegmentOutcome, SegmentationError> {
    let refreshed = refresh_membership(seg, users, params.speed_threshold_mps);
    let mean_churn = refreshed.mean_churn();
    if mean_churn > params.churn_threshold {
        let rebuilt = build_segmentation(users, anchors, params, seed, now, refreshed.next_id())?;
        Ok(ResegmentOutcome {
            segmentation: rebuilt,
            resegmented: true,
            mean_churn,
        })
    } else {
        Ok(ResegmentOutcome {
            segmentation: refreshed,
            resegmented: false,
            mean_churn,
        })
    }
}

/// Append one row per subspace:
/// `time,subspace,layer,center_x,center_y,radius,members,devices,churn`.
pub fn write_segmentation_rows<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    time: f64,
    seg: &Segmentation,
) -> csv::Result<()> {
    for s in &seg.subspaces {
        w.write_record([
            time.to_string(),
            s.id.0.to_string(),
            s.layer.as_str().to_string(),
            s.center.x.to_string(),
            s.center.y.to_string(),
            s.radius.to_string(),
            s.members.len().to_string(),
            s.devices.len().to_string(),
            s.churn().to_string(),
        ])?;
    }
    Ok(())
}

pub const SEGMENTATION_CSV_HEADER: [&str; 9] = [
    "time_s", "subspace", "layer", "center_x", "center_y", "radius", "members", "devices", "churn",
];
