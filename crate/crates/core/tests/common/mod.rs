#![allow(dead_code)]

use cellfree::channel::SignalModel;
use cellfree::clustering::derive_plan;
use cellfree::config::Powers;
use cellfree::netgeom::{NetworkLayout, Point};
use cellfree::pilots::PilotPlan;
use cellfree::Deployment;
use nalgebra::DMatrix;

/// Hand-built deployment.
///
/// `gains[m][k]` are the large-scale gains, `serve[m][k]` the selection
/// (every link when `None`), `pilot_of[k]` the pilot index of each UE.
pub struct Micro {
    pub gains: Vec<Vec<f64>>,
    pub serve: Option<Vec<Vec<bool>>>,
    pub ap_to_seu: Vec<usize>,
    pub pilot_of: Vec<usize>,
    pub antennas: usize,
    pub rho: f64,
    pub rho_p: f64,
    pub noise: f64,
    pub noise_p: f64,
    pub signal: SignalModel,
}

impl Micro {
    pub fn new(gains: Vec<Vec<f64>>, ap_to_seu: Vec<usize>, pilot_of: Vec<usize>, antennas: usize) -> Micro {
        Micro {
            gains,
            serve: None,
            ap_to_seu,
            pilot_of,
            antennas,
            rho: 1.0,
            rho_p: 1.0,
            noise: 1.0,
            noise_p: 1.0,
            signal: SignalModel::ServedLinks,
        }
    }

    pub fn build(&self) -> Deployment {
        let m = self.gains.len();
        let k = self.gains[0].len();
        let l = self.ap_to_seu.iter().max().unwrap() + 1;
        let gains = DMatrix::from_fn(m, k, |a, u| self.gains[a][u]);
        let omega = DMatrix::from_fn(m, k, |a, u| self.serve.as_ref().is_none_or(|s| s[a][u]));
        let layout = NetworkLayout::new(
            (0..m).map(|i| Point::new(i as f64, 0.0)).collect(),
            (0..l).map(|i| Point::new(i as f64, 1.0)).collect(),
            (0..k).map(|i| Point::new(i as f64, 2.0)).collect(),
            self.ap_to_seu.clone(),
            gains,
        );
        let plan = derive_plan(&omega, &self.ap_to_seu, l).unwrap();
        let tau = self.pilot_of.iter().max().unwrap() + 1;
        let pilots = PilotPlan::from_assignment(self.pilot_of.clone(), tau);
        let powers = Powers {
            ul: vec![self.rho; k],
            pilot: self.rho_p,
            noise_ul: vec![self.noise; l],
            noise_pilot: self.noise_p,
        };
        Deployment::new(layout, plan, pilots, powers, self.antennas, self.signal).unwrap()
    }
}
