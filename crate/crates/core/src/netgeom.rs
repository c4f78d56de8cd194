//! Random network geometry and large-scale fading.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Point {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Distance-based path loss `c * max(d, r0)^-alpha` with optional shadowing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathLoss {
    pub exponent: f64,
    pub constant: f64,
    pub min_distance: f64,
}

impl PathLoss {
    pub fn from_config(cfg: &SimConfig) -> PathLoss {
        PathLoss {
            exponent: cfg.pathloss_exponent,
            constant: cfg.pathloss_constant,
            min_distance: cfg.min_access_distance_m,
        }
    }

    pub fn gain(&self, distance: f64, shadow_db: f64) -> Result<f64> {
        large_scale_gain(
            distance.max(self.min_distance),
            self.exponent,
            self.constant,
            shadow_db,
        )
    }
}

/// `c * d^-alpha * 10^(shadow_db / 10)` for an already clamped distance.
pub fn large_scale_gain(distance: f64, exponent: f64, constant: f64, shadow_db: f64) -> Result<f64> {
    let g = constant * distance.powf(-exponent) * 10f64.powf(shadow_db / 10.0);
    if g.is_finite() && g > 0.0 {
        Ok(g)
    } else {
        Err(Error::Config(format!(
            "large-scale gain is not a positive finite number at distance {distance} m"
        )))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkLayout {
    pub ap_positions: Vec<Point>,
    pub seu_positions: Vec<Point>,
    pub ue_positions: Vec<Point>,
    pub ap_to_seu: Vec<usize>,
    pub seu_sizes: Vec<usize>,
    /// Large-scale gains lambda_{m,k}, APs along rows and UEs along columns.
    pub gains: DMatrix<f64>,
}

fn uniform_in_disk<R: Rng>(rng: &mut R, radius: f64, count: usize) -> Vec<Point> {
    (0..count)
        .map(|_| {
            let r = radius * rng.random::<f64>().sqrt();
            let theta = std::f64::consts::TAU * rng.random::<f64>();
            Point::new(r * theta.cos(), r * theta.sin())
        })
        .collect()
}

/// Index of the closest SEU; ties go to the lowest index.
pub fn nearest_seu(ap: Point, seus: &[Point]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (l, &s) in seus.iter().enumerate() {
        let d = ap.distance(s);
        if d < best_d {
            best = l;
            best_d = d;
        }
    }
    best
}

/// Places APs, SEUs and UEs uniformly in the disk and fills the gain matrix.
///
/// Each entity class draws from its own sub-stream of `seed`, so changing
/// the number of SEUs leaves AP and UE positions untouched.
pub fn generate_layout(cfg: &SimConfig, seed: u64) -> Result<NetworkLayout> {
    cfg.validate()?;
    let radius = cfg.area_radius_m;
    let ap_positions = uniform_in_disk(&mut stream(seed, Stream::ApPositions, 0), radius, cfg.num_aps);
    let seu_positions = uniform_in_disk(&mut stream(seed, Stream::SeuPositions, 0), radius, cfg.num_seus);
    let ue_positions = uniform_in_disk(&mut stream(seed, Stream::UePositions, 0), radius, cfg.num_ues);

    let ap_to_seu: Vec<usize> = ap_positions
        .iter()
        .map(|&ap| nearest_seu(ap, &seu_positions))
        .collect();

    let path_loss = PathLoss::from_config(cfg);
    let mut shadow_rng = stream(seed, Stream::Shadowing, 0);
    let mut gains = DMatrix::zeros(cfg.num_aps, cfg.num_ues);
    for (m, &ap) in ap_positions.iter().enumerate() {
        for (k, &ue) in ue_positions.iter().enumerate() {
            let shadow_db = if cfg.shadowing_sigma_db > 0.0 {
                cfg.shadowing_sigma_db * shadow_rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            gains[(m, k)] = path_loss.gain(ap.distance(ue), shadow_db)?;
        }
    }

    Ok(NetworkLayout::new(ap_positions, seu_positions, ue_positions, ap_to_seu, gains))
}

impl NetworkLayout {
    pub fn new(
        ap_positions: Vec<Point>,
        seu_positions: Vec<Point>,
        ue_positions: Vec<Point>,
        ap_to_seu: Vec<usize>,
        gains: DMatrix<f64>,
    ) -> NetworkLayout {
        let mut seu_sizes = vec![0; seu_positions.len()];
        for &l in &ap_to_seu {
            seu_sizes[l] += 1;
        }
        NetworkLayout {
            ap_positions,
            seu_positions,
            ue_positions,
            ap_to_seu,
            seu_sizes,
            gains,
        }
    }

    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn num_seus(&self) -> usize {
        self.seu_positions.len()
    }

    pub fn num_ues(&self) -> usize {
        self.ue_positions.len()
    }

    /// Global AP indices under each SEU, in increasing order.
    pub fn seu_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.num_seus()];
        for (m, &l) in self.ap_to_seu.iter().enumerate() {
            members[l].push(m);
        }
        members
    }

    /// Same geometry with every AP acting as its own processing unit.
    pub fn one_seu_per_ap(&self) -> NetworkLayout {
        NetworkLayout::new(
            self.ap_positions.clone(),
            self.ap_positions.clone(),
            self.ue_positions.clone(),
            (0..self.num_aps()).collect(),
            self.gains.clone(),
        )
    }
}
