//! Orthogonal pilot assignment.
//!
//! Pilot sequences are orthonormal, so the projection of the received pilot
//! block onto pilot `t` is the sum of the channels of the UEs in cohort `t`.
//! The sequences themselves are never materialized.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgeom::Point;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotPolicy {
    /// `t_k = k mod tau`
    #[default]
    RoundRobin,
    /// Balanced cohorts with a random UE-to-pilot permutation.
    Random,
    /// Greedy: each UE joins the pilot whose current cohort is farthest away.
    FarthestFirst,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PilotPlan {
    pub pilot_of: Vec<usize>,
    pub cohorts: Vec<Vec<usize>>,
}

impl PilotPlan {
    pub fn from_assignment(pilot_of: Vec<usize>, num_pilots: usize) -> PilotPlan {
        let mut cohorts = vec![Vec::new(); num_pilots];
        for (k, &t) in pilot_of.iter().enumerate() {
            cohorts[t].push(k);
        }
        PilotPlan { pilot_of, cohorts }
    }

    pub fn num_pilots(&self) -> usize {
        self.cohorts.len()
    }

    /// P_{t_k}: every UE sharing UE `k`'s pilot, `k` included.
    pub fn cohort_of(&self, k: usize) -> &[usize] {
        &self.cohorts[self.pilot_of[k]]
    }

    #[inline]
    pub fn shares_pilot(&self, a: usize, b: usize) -> bool {
        self.pilot_of[a] == self.pilot_of[b]
    }

    /// Smallest distance between two UEs that share a pilot (infinite when
    /// every cohort is a singleton).
    pub fn min_cohort_distance(&self, positions: &[Point]) -> f64 {
        let mut best = f64::INFINITY;
        for cohort in &self.cohorts {
            for (a, &i) in cohort.iter().enumerate() {
                for &j in &cohort[a + 1..] {
                    best = best.min(positions[i].distance(positions[j]));
                }
            }
        }
        best
    }
}

pub fn assign_pilots<R: Rng + ?Sized>(
    num_ues: usize,
    num_pilots: usize,
    policy: PilotPolicy,
    positions: &[Point],
    rng: &mut R,
) -> Result<PilotPlan> {
    if num_pilots == 0 || num_pilots > num_ues {
        return Err(Error::Config(format!(
            "need 1 <= pilots <= UEs, got {num_pilots} pilots for {num_ues} UEs"
        )));
    }
    let round_robin: Vec<usize> = (0..num_ues).map(|k| k % num_pilots).collect();
    let pilot_of = match policy {
        PilotPolicy::RoundRobin => round_robin,
        PilotPolicy::Random => {
            let mut p = round_robin;
            p.shuffle(rng);
            p
        }
        PilotPolicy::FarthestFirst => {
            assert_eq!(positions.len(), num_ues, "one position per UE");
            farthest_first(positions, num_pilots)
        }
    };
    Ok(PilotPlan::from_assignment(pilot_of, num_pilots))
}

fn farthest_first(positions: &[Point], num_pilots: usize) -> Vec<usize> {
    let capacity = positions.len().div_ceil(num_pilots);
    let mut cohorts: Vec<Vec<usize>> = vec![Vec::new(); num_pilots];
    let mut pilot_of = vec![0; positions.len()];
    for (k, &p) in positions.iter().enumerate() {
        let mut best = None;
        let mut best_d = f64::NEG_INFINITY;
        for (t, cohort) in cohorts.iter().enumerate() {
            if cohort.len() >= capacity {
                continue;
            }
            let d = cohort
                .iter()
                .map(|&i| positions[i].distance(p))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = Some(t);
            }
        }
        let t = best.expect("total capacity covers every UE");
        cohorts[t].push(k);
        pilot_of[k] = t;
    }
    pilot_of
}
