//! Virtual localization: embed edge devices into a 2-D latency map, then place
//! every user against those fixed anchors.
//!
//! Map units are milliseconds, so map distances approximate measured
//! latencies and cluster radii read directly as latency budgets.
//!
//! Anchors are embedded by weighted stress majorization (the Guttman transform
//! iterated from seeded random starts). Users are placed one at a time by a
//! damped Gauss-Newton fit of their distances to the anchors.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Matrix, Point};
use crate::latency::{LatencyMatrix, MIN_LATENCY_MS};
use crate::model::DeviceId;
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalizationError {
    #[error("need at least 3 anchors, got {0}")]
    TooFewAnchors(usize),
    #[error("latency matrix is degenerate: {0}")]
    DegenerateMatrix(String),
    #[error("latency matrix is not symmetric")]
    Asymmetric,
    #[error("only {0} anchors are reachable, need 3")]
    InsufficientAnchors(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationConfig {
    /// Majorization iterations per start when embedding anchors.
    pub max_iter: usize,
    /// Relative stress improvement below which embedding stops.
    pub tol: f64,
    /// Extra seeded random starts for the anchor embedding.
    pub restarts: usize,
    pub user_max_iter: usize,
    pub user_tol: f64,
    /// Extra seeded random starts for user placement.
    pub user_restarts: usize,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-10,
            restarts: 4,
            user_max_iter: 30,
            user_tol: 1e-9,
            user_restarts: 0,
        }
    }
}

impl LocalizationConfig {
    pub fn embed_options(&self) -> EmbedOptions {
        EmbedOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            restarts: self.restarts,
        }
    }

    pub fn place_options(&self) -> PlaceOptions {
        PlaceOptions {
            max_iter: self.user_max_iter,
            tol: self.user_tol,
            restarts: self.user_restarts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        LocalizationConfig::default().embed_options()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaceOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for PlaceOptions {
    fn default() -> Self {
        PlaceOptions {
            max_iter: 100,
            tol: 1e-12,
            restarts: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// Centered so the centroid sits at the origin.
    pub coords: Vec<Point>,
    pub stress: f64,
    /// Normalized stress after every majorization step of the winning start,
    /// starting with the initial configuration.
    pub trace: Vec<f64>,
}

fn stress_weights(delta: &Matrix, ceiling_ms: f64) -> Matrix {
    let n = delta.rows();
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && delta.get(i, j) < ceiling_ms {
                w.set(i, j, 1.0);
            }
        }
    }
    w
}

/// Normalized stress of `coords` against target distances `delta`; ceiling
/// entries carry zero weight.
pub fn normalized_stress(coords: &[Point], delta: &Matrix, ceiling_ms: f64) -> f64 {
    let w = stress_weights(delta, ceiling_ms);
    weighted_stress(coords, delta, &w)
}

fn weighted_stress(coords: &[Point], delta: &Matrix, w: &Matrix) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..coords.len() {
        for j in 0..i {
            let wij = w.get(i, j);
            if wij == 0.0 {
                continue;
            }
            let dij = delta.get(i, j);
            let r = coords[i].dist(coords[j]) - dij;
            num += wij * r * r;
            den += wij * dij * dij;
        }
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

fn is_connected(w: &Matrix) -> bool {
    let n = w.rows();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for (j, s) in seen.iter_mut().enumerate() {
            if !*s && w.get(i, j) > 0.0 {
                *s = true;
                stack.push(j);
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// Moore-Penrose inverse of the weighted Laplacian of a connected graph.
fn laplacian_pinv(w: &Matrix) -> DMatrix<f64> {
    let n = w.rows();
    let nf = n as f64;
    let shifted = DMatrix::from_fn(n, n, |i, j| {
        let lap = if i == j {
            (0..n).map(|k| w.get(i, k)).sum::<f64>()
        } else {
            -w.get(i, j)
        };
        lap + 1.0 / nf
    });
    let inv = shifted
        .try_inverse()
        .expect("shifted Laplacian of a connected graph is invertible");
    inv.map(|v| v - 1.0 / nf)
}

fn guttman_step(x: &[Point], delta: &Matrix, w: &Matrix, pinv: &DMatrix<f64>) -> Vec<Point> {
    let n = x.len();
    // B(X) X, accumulated row by row.
    let mut bx = vec![Point::ORIGIN; n];
    for i in 0..n {
        let mut acc = Point::ORIGIN;
        for j in 0..n {
            if i == j || w.get(i, j) == 0.0 {
                continue;
            }
            let d = x[i].dist(x[j]);
            if d > 0.0 {
                let b = w.get(i, j) * delta.get(i, j) / d;
                acc = acc + (x[i] - x[j]) * b;
            }
        }
        bx[i] = acc;
    }
    (0..n)
        .map(|i| {
            (0..n).fold(Point::ORIGIN, |acc, j| acc + bx[j] * pinv[(i, j)])
        })
        .collect()
}

/// Embed devices into two dimensions from their pairwise latencies.
///
/// Runs `1 + restarts` majorization descents from seeded random
/// configurations in the unit square scaled by the mean latency and keeps the
/// lowest-stress result, translated to a zero centroid.
pub fn embed_devices(
    delta: &Matrix,
    ceiling_ms: f64,
    seed: u64,
    opts: &EmbedOptions,
) -> Result<Embedding, LocalizationError> {
    let n = delta.rows();
    if n < 3 {
        return Err(LocalizationError::TooFewAnchors(n));
    }
    if !delta.is_symmetric() {
        return Err(LocalizationError::Asymmetric);
    }
    let w = stress_weights(delta, ceiling_ms);
    let pairs: Vec<f64> = (0..n)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .filter(|&(i, j)| w.get(i, j) > 0.0)
        .map(|(i, j)| delta.get(i, j))
        .collect();
    if pairs.is_empty() {
        return Err(LocalizationError::DegenerateMatrix(
            "every off-diagonal entry is unreachable".into(),
        ));
    }
    if !is_connected(&w) {
        return Err(LocalizationError::DegenerateMatrix(
            "reachable pairs do not connect all anchors".into(),
        ));
    }
    let mean = pairs.iter().sum::<f64>() / pairs.len() as f64;
    let pinv = laplacian_pinv(&w);

    let mut best: Option<Embedding> = None;
    for start in 0..=opts.restarts {
        let mut rng = seed::substream(seed, "embed", &[start as u64]);
        let mut x: Vec<Point> = (0..n)
            .map(|_| Point::new(rng.random::<f64>() * mean, rng.random::<f64>() * mean))
            .collect();
        let mut stress = weighted_stress(&x, delta, &w);
        let mut trace = vec![stress];
        for _ in 0..opts.max_iter {
            let next = guttman_step(&x, delta, &w, &pinv);
            let next_stress = weighted_stress(&next, delta, &w);
            let improvement = stress - next_stress;
            x = next;
            trace.push(next_stress);
            let done = stress == 0.0 || improvement <= opts.tol * stress;
            stress = next_stress;
            if done {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| stress < b.stress) {
            best = Some(Embedding {
                coords: x,
                stress,
                trace,
            });
        }
    }
    let mut best = best.expect("at least one start");
    let c = crate::geometry::centroid(&best.coords);
    for p in &mut best.coords {
        *p = *p - c;
    }
    Ok(best)
}

/// Least-squares objective minimized by [`place_user`].
pub fn placement_objective(x: Point, latencies: &[f64], anchors: &[Point], ceiling_ms: f64) -> f64 {
    latencies
        .iter()
        .zip(anchors)
        .filter(|(&l, _)| l < ceiling_ms)
        .map(|(&l, &a)| {
            let r = x.dist(a) - l;
            r * r
        })
        .sum()
}

fn refine(mut x: Point, latencies: &[f64], anchors: &[Point], ceiling_ms: f64, opts: &PlaceOptions) -> (Point, f64) {
    let mut f = placement_objective(x, latencies, anchors, ceiling_ms);
    let mut lambda = 1e-3;
    for _ in 0..opts.max_iter {
        // Normal equations of the linearized residuals.
        let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&l, &a) in latencies.iter().zip(anchors) {
            if l >= ceiling_ms {
                continue;
            }
            let d = x.dist(a);
            if d == 0.0 {
                continue;
            }
            let (jx, jy) = ((x.x - a.x) / d, (x.y - a.y) / d);
            let r = d - l;
            a11 += jx * jx;
            a12 += jx * jy;
            a22 += jy * jy;
            g1 += jx * r;
            g2 += jy * r;
        }
        let mut accepted = None;
        for _ in 0..12 {
            let m11 = a11 * (1.0 + lambda) + 1e-12;
            let m22 = a22 * (1.0 + lambda) + 1e-12;
            let det = m11 * m22 - a12 * a12;
            if det <= 0.0 || !det.is_finite() {
                lambda *= 10.0;
                continue;
            }
            let sx = -(m22 * g1 - a12 * g2) / det;
            let sy = -(m11 * g2 - a12 * g1) / det;
            let cand = Point::new(x.x + sx, x.y + sy);
            let fc = placement_objective(cand, latencies, anchors, ceiling_ms);
            if fc < f {
                lambda = (lambda * 0.1).max(1e-12);
                accepted = Some((cand, fc, sx.hypot(sy)));
                break;
            }
            lambda *= 10.0;
        }
        let Some((cand, fc, step)) = accepted else {
            break;
        };
        let gain = f - fc;
        x = cand;
        f = fc;
        if gain <= opts.tol * f.max(1e-300) || step <= opts.tol {
            break;
        }
    }
    (x, f)
}

/// Locate a user in the map from its latencies to the anchors.
///
/// The primary start is the inverse-latency weighted centroid of the three
/// closest reachable anchors; `opts.restarts` further starts are drawn
/// uniformly from the anchors' bounding box grown by the largest latency.
pub fn place_user(
    latencies: &[f64],
    anchors: &[Point],
    ceiling_ms: f64,
    seed: u64,
    opts: &PlaceOptions,
) -> Result<Point, LocalizationError> {
    debug_assert_eq!(latencies.len(), anchors.len());
    let mut reachable: Vec<usize> = (0..latencies.len())
        .filter(|&j| latencies[j] < ceiling_ms)
        .collect();
    if reachable.len() < 3 {
        return Err(LocalizationError::InsufficientAnchors(reachable.len()));
    }
    reachable.sort_by(|&a, &b| latencies[a].total_cmp(&latencies[b]).then(a.cmp(&b)));

    let (mut sum, mut wsum) = (Point::ORIGIN, 0.0);
    for &j in &reachable[..3] {
        let w = 1.0 / latencies[j].max(MIN_LATENCY_MS);
        sum = sum + anchors[j] * w;
        wsum += w;
    }
    let primary = sum * (1.0 / wsum);
    let (mut best, mut best_f) = refine(primary, latencies, anchors, ceiling_ms, opts);

    if opts.restarts > 0 {
        let grow = reachable.iter().map(|&j| latencies[j]).fold(0.0, f64::max);
        let (mut lo, mut hi) = (anchors[reachable[0]], anchors[reachable[0]]);
        for &j in &reachable {
            lo = Point::new(lo.x.min(anchors[j].x), lo.y.min(anchors[j].y));
            hi = Point::new(hi.x.max(anchors[j].x), hi.y.max(anchors[j].y));
        }
        let mut rng = seed::substream(seed, "place", &[]);
        for _ in 0..opts.restarts {
            let start = Point::new(
                lo.x - grow + rng.random::<f64>() * (hi.x - lo.x + 2.0 * grow),
                lo.y - grow + rng.random::<f64>() * (hi.y - lo.y + 2.0 * grow),
            );
            let (x, f) = refine(start, latencies, anchors, ceiling_ms, opts);
            if f < best_f {
                best = x;
                best_f = f;
            }
        }
    }
    Ok(best)
}

/// A 2-D latency map: anchors for every device plus one coordinate per
/// localized user.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyMap {
    pub anchor_ids: Vec<DeviceId>,
    pub anchor_coords: Vec<Point>,
    /// Indexed by user id; `None` for users that could not be localized.
    pub user_coords: Vec<Option<Point>>,
    pub stress_value: f64,
    pub embedded_at: f64,
}

/// Bring the map up to date with a fresh measurement.
///
/// Anchors are re-embedded only when there is no previous map or the device
/// set changed; user coordinates are recomputed on every call.
pub fn refresh_map(
    matrix: &LatencyMatrix,
    device_ids: &[DeviceId],
    previous: Option<&LatencyMap>,
    cfg: &LocalizationConfig,
    seed: u64,
) -> Result<LatencyMap, LocalizationError> {
    let (anchor_coords, embedded_at) = match previous {
        Some(prev) if prev.anchor_ids == device_ids => (prev.anchor_coords.clone(), prev.embedded_at),
        _ => {
            let emb = embed_devices(
                &matrix.device_device,
                matrix.ceiling_ms,
                seed::derive_seed(seed, "anchors", &[]),
                &cfg.embed_options(),
            )?;
            (emb.coords, matrix.measured_at)
        }
    };
    let stress_value = normalized_stress(&anchor_coords, &matrix.device_device, matrix.ceiling_ms);
    let opts = cfg.place_options();
    let stamp = matrix.measured_at.to_bits();
    let user_coords = (0..matrix.n_users())
        .map(|u| {
            place_user(
                matrix.user_device.row(u),
                &anchor_coords,
                matrix.ceiling_ms,
                seed::derive_seed(seed, "user-place", &[u as u64, stamp]),
                &opts,
            )
            .ok()
        })
        .collect();
    Ok(LatencyMap {
        anchor_ids: device_ids.to_vec(),
        anchor_coords,
        user_coords,
        stress_value,
        embedded_at,
    })
}

/// Write the map as CSV rows `kind,id,x,y,stress`.
pub fn write_map_csv<W: std::io::Write>(map: &LatencyMap, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "id", "x", "y", "stress"])?;
    let stress = map.stress_value.to_string();
    for (id, p) in map.anchor_ids.iter().zip(&map.anchor_coords) {
        w.write_record(["device", &id.0.to_string(), &p.x.to_string(), &p.y.to_string(), &stress])?;
    }
    for (u, p) in map.user_coords.iter().enumerate() {
        let (x, y) = p.map_or((String::new(), String::new()), |p| (p.x.to_string(), p.y.to_string()));
        w.write_record(["user", &u.to_string(), &x, &y, &stress])?;
    }
    w.flush()?;
    Ok(())
}
