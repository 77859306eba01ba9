//! AP and STA placement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::DeploymentError;
use crate::params::SimParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Rotates by `quarter_turns` × 90° counter-clockwise about `center`.
    pub fn rotate_about(self, center: Point, quarter_turns: u32) -> Point {
        let (mut dx, mut dy) = (self.x - center.x, self.y - center.y);
        for _ in 0..quarter_turns % 4 {
            (dx, dy) = (-dy, dx);
        }
        Point::new(center.x + dx, center.y + dy)
    }
}

/// A static multi-BSS layout. STA `i` is served by AP `association[i]`;
/// STAs of the same AP are stored contiguously, AP by AP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub ap_positions: Vec<Point>,
    pub sta_positions: Vec<Point>,
    pub association: Vec<usize>,
    /// Seed used for random placement; `None` for hand-built layouts.
    pub rng_seed: Option<u64>,
}

impl Deployment {
    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn num_stas(&self) -> usize {
        self.sta_positions.len()
    }

    pub fn stas_of(&self, ap: usize) -> impl Iterator<Item = usize> + '_ {
        self.association.iter().enumerate().filter(move |(_, &a)| a == ap).map(|(s, _)| s)
    }

    /// Distance from AP `ap` to STA `sta`, meters.
    pub fn ap_sta_distance(&self, ap: usize, sta: usize) -> f64 {
        self.ap_positions[ap].distance(self.sta_positions[sta])
    }

    pub fn ap_ap_distance(&self, a: usize, b: usize) -> f64 {
        self.ap_positions[a].distance(self.ap_positions[b])
    }

    pub fn center(&self) -> Point {
        let n = self.ap_positions.len() as f64;
        let (sx, sy) = self.ap_positions.iter().fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
        Point::new(sx / n, sy / n)
    }
}

/// AP layout: a single AP at the origin, two APs on the x axis, or four APs
/// on the corners of an axis-aligned square of side `inter_ap_distance`.
pub fn ap_layout(params: &SimParams) -> Result<Vec<Point>, DeploymentError> {
    let d = params.inter_ap_distance;
    match params.num_bss {
        1 => Ok(vec![Point::new(0.0, 0.0)]),
        2 => Ok(vec![Point::new(0.0, 0.0), Point::new(d, 0.0)]),
        4 => Ok(vec![Point::new(0.0, 0.0), Point::new(d, 0.0), Point::new(0.0, d), Point::new(d, d)]),
        k => Err(DeploymentError::UnsupportedTopology(k)),
    }
}

/// Places every STA at a uniformly drawn distance within the AP-STA range
/// and a uniform angle around its AP. Pure in `(params, seed)`.
pub fn generate_deployment(params: &SimParams, seed: u64) -> Result<Deployment, DeploymentError> {
    let aps = ap_layout(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = params.ap_sta_distance_range;
    let mut sta_positions = Vec::with_capacity(params.num_pairs());
    let mut association = Vec::with_capacity(params.num_pairs());
    for (ap, pos) in aps.iter().enumerate() {
        for _ in 0..params.stas_per_bss {
            let r = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            sta_positions.push(Point::new(pos.x + r * theta.cos(), pos.y + r * theta.sin()));
            association.push(ap);
        }
    }
    Ok(Deployment { ap_positions: aps, sta_positions, association, rng_seed: Some(seed) })
}

/// Builds a layout where every AP holds the same STA pattern, rotated with
/// the AP about the scenario center. `offsets` are given for AP 0 (the
/// origin corner); the result is invariant under 90° rotations.
pub fn make_symmetric_deployment(params: &SimParams, offsets: &[(f64, f64)]) -> Result<Deployment, DeploymentError> {
    if offsets.len() != params.stas_per_bss {
        return Err(DeploymentError::OffsetCount { expected: params.stas_per_bss, got: offsets.len() });
    }
    let [lo, hi] = params.ap_sta_distance_range;
    for (index, &(dx, dy)) in offsets.iter().enumerate() {
        let distance = dx.hypot(dy);
        if distance < lo - 1e-12 || distance > hi + 1e-12 {
            return Err(DeploymentError::OffsetOutOfRange { index, distance, min: lo, max: hi });
        }
    }
    let aps = ap_layout(params)?;
    let n = aps.len() as f64;
    let (sx, sy) = aps.iter().fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
    let center = Point::new(sx / n, sy / n);
    // Quarter turns mapping AP 0 onto each AP.
    let turns: &[u32] = match aps.len() {
        4 => &[0, 1, 3, 2],
        2 => &[0, 2],
        _ => &[0],
    };
    let base = aps[0];
    let mut sta_positions = Vec::new();
    let mut association = Vec::new();
    for (ap, &t) in turns.iter().enumerate() {
        for &(dx, dy) in offsets {
            sta_positions.push(Point::new(base.x + dx, base.y + dy).rotate_about(center, t));
            association.push(ap);
        }
    }
    Ok(Deployment { ap_positions: aps, sta_positions, association, rng_seed: None })
}
