//! Physical movement: random-waypoint pedestrians and heading-persistent
//! vehicles that reflect off the area boundary.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Area, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilityParams {
    /// `[min, max]` m/s, drawn per waypoint leg.
    pub pedestrian_speed_mps: [f64; 2],
    /// `[min, max]` seconds of pause at each waypoint.
    pub pedestrian_pause_s: [f64; 2],
    /// `[min, max]` m/s, drawn once per vehicle.
    pub vehicle_speed_mps: [f64; 2],
    /// Standard deviation of the per-step heading perturbation.
    pub heading_sd_rad: f64,
}

impl Default for MobilityParams {
    fn default() -> Self {
        Self {
            pedestrian_speed_mps: [0.5, 2.0],
            pedestrian_pause_s: [0.0, 60.0],
            vehicle_speed_mps: [8.0, 20.0],
            heading_sd_rad: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityState {
    pub waypoint: Point,
    pub heading: f64,
    pub speed: f64,
    /// Pedestrians pause at a reached waypoint until this time.
    pub dwell_until: f64,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..=range[1])
    } else {
        range[0]
    }
}

fn random_point<R: Rng + ?Sized>(rng: &mut R, area: &Area) -> Point {
    Point::new(rng.random::<f64>() * area.width, rng.random::<f64>() * area.height)
}

impl MobilityState {
    pub fn new_pedestrian<R: Rng + ?Sized>(rng: &mut R, area: &Area, params: &MobilityParams) -> Self {
        Self {
            waypoint: random_point(rng, area),
            heading: 0.0,
            speed: uniform(rng, params.pedestrian_speed_mps),
            dwell_until: 0.0,
        }
    }

    pub fn new_vehicle<R: Rng + ?Sized>(rng: &mut R, params: &MobilityParams) -> Self {
        Self {
            waypoint: Point::ORIGIN,
            heading: rng.random::<f64>() * std::f64::consts::TAU,
            speed: uniform(rng, params.vehicle_speed_mps),
            dwell_until: 0.0,
        }
    }
}

/// Advance a pedestrian by `dt_s` seconds ending at `now + dt_s`.
///
/// Walks straight toward the waypoint; on arrival pauses for a uniform
/// time, then draws a new waypoint and leg speed.
pub fn step_pedestrian<R: Rng + ?Sized>(
    pos: Point,
    state: &mut MobilityState,
    now: f64,
    dt_s: f64,
    area: &Area,
    params: &MobilityParams,
    rng: &mut R,
) -> Point {
    if dt_s <= 0.0 {
        return pos;
    }
    let end = now + dt_s;
    let mut t = now.max(state.dwell_until.min(end));
    let mut p = pos;
    // Bounded: each pass either consumes the remaining time or reaches a
    // waypoint and schedules a pause.
    for _ in 0..16 {
        if t >= end {
            break;
        }
        let to_go = p.dist(state.waypoint);
        let reach = state.speed * (end - t);
        if reach < to_go {
            p = p + (state.waypoint - p) * (reach / to_go);
            break;
        }
        p = state.waypoint;
        if state.speed > 0.0 {
            t += to_go / state.speed;
        }
        state.dwell_until = t + uniform(rng, params.pedestrian_pause_s);
        state.waypoint = random_point(rng, area);
        state.speed = uniform(rng, params.pedestrian_speed_mps);
        t = state.dwell_until;
    }
    area.clamp(p)
}

/// Advance a vehicle by `dt_s` seconds along its perturbed heading,
/// reflecting off the area boundary.
pub fn step_vehicle<R: Rng + ?Sized>(
    pos: Point,
    state: &mut MobilityState,
    dt_s: f64,
    area: &Area,
    params: &MobilityParams,
    rng: &mut R,
) -> Point {
    if dt_s <= 0.0 {
        return pos;
    }
    if params.heading_sd_rad > 0.0 {
        let n = Normal::new(0.0, params.heading_sd_rad).expect("finite sd");
        state.heading += n.sample(rng);
    }
    let step = state.speed * dt_s;
    let (mut x, mut y) = (pos.x + step * state.heading.cos(), pos.y + step * state.heading.sin());
    let (mut hx, mut hy) = (state.heading.cos(), state.heading.sin());
    // A single reflection per axis suffices while step < area size.
    if x < 0.0 {
        x = -x;
        hx = -hx;
    } else if x > area.width {
        x = 2.0 * area.width - x;
        hx = -hx;
    }
    if y < 0.0 {
        y = -y;
        hy = -hy;
    } else if y > area.height {
        y = 2.0 * area.height - y;
        hy = -hy;
    }
    state.heading = hy.atan2(hx);
    area.clamp(Point::new(x, y))
}
