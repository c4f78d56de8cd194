//! Small-scale fading draws and per-SEU MMSE channel estimation.
//!
//! Per-SEU blocks stack the `N` antennas of each subordinate AP, so row
//! `r * N + n` of a block is antenna `n` of the `r`-th AP under that SEU.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterPlan;
use crate::config::Powers;
use crate::netgeom::NetworkLayout;
use crate::pilots::PilotPlan;
use crate::rng::complex_normal;

/// Which part of each UE's channel reaches the SEU combiners.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalModel {
    /// Each SEU receives UE `i` only through the APs that serve `i`
    /// (the masked `g`, split as estimate plus error).
    #[default]
    ServedLinks,
    /// Every UE reaches every antenna of every SEU.
    FullChannel,
}

/// `beta = lambda / sqrt(cohort_sum + 1 / gamma_p)`.
///
/// `cohort_sum` includes `lambda` itself. An infinite `gamma_p` models
/// noiseless training.
pub fn compute_beta(lambda: f64, cohort_sum: f64, gamma_p: f64) -> f64 {
    lambda / (cohort_sum + gamma_p.recip()).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationStats {
    /// beta_{m,k}, APs along rows. The SEU index is implied by the AP.
    pub beta: DMatrix<f64>,
    /// eta = lambda - beta^2
    pub eta: DMatrix<f64>,
    /// kappa = upsilon * beta
    pub kappa: DMatrix<f64>,
    /// Sum of lambda_{m,i} over the pilot cohort of UE k.
    pub cohort_gain: DMatrix<f64>,
    pub gamma_p: f64,
}

pub fn build_estimation_stats(
    layout: &NetworkLayout,
    plan: &ClusterPlan,
    pilots: &PilotPlan,
    powers: &Powers,
) -> EstimationStats {
    let gains = &layout.gains;
    let (m_count, k_count) = gains.shape();
    let gamma_p = powers.training_snr();
    let cohort_gain = DMatrix::from_fn(m_count, k_count, |m, k| {
        pilots.cohort_of(k).iter().map(|&i| gains[(m, i)]).sum()
    });
    let beta = DMatrix::from_fn(m_count, k_count, |m, k| {
        compute_beta(gains[(m, k)], cohort_gain[(m, k)], gamma_p)
    });
    // Guard the subtraction against rounding when beta^2 ~ lambda.
    let eta = DMatrix::from_fn(m_count, k_count, |m, k| (gains[(m, k)] - beta[(m, k)].powi(2)).max(0.0));
    let kappa = DMatrix::from_fn(m_count, k_count, |m, k| {
        if plan.serves(m, k) {
            beta[(m, k)]
        } else {
            0.0
        }
    });
    EstimationStats { beta, eta, kappa, cohort_gain, gamma_p }
}

/// One small-scale fading realization as seen by one SEU. Every matrix is
/// `(M_l N) x K`.
#[derive(Clone, Debug)]
pub struct SeuDraw {
    pub true_h: DMatrix<Complex64>,
    pub true_g: DMatrix<Complex64>,
    /// Unit-variance normalized pilot observation; identical across a cohort.
    pub h_hat: DMatrix<Complex64>,
    /// beta * h_hat on every link, served or not.
    pub est_full: DMatrix<Complex64>,
    /// upsilon * beta * h_hat
    pub est: DMatrix<Complex64>,
    /// upsilon * g - est
    pub err: DMatrix<Complex64>,
}

impl SeuDraw {
    /// The estimate and error parts of the signal each UE delivers to this
    /// SEU under `model`. They always sum to the received channel.
    pub fn signal_parts(&self, model: SignalModel) -> (&DMatrix<Complex64>, DMatrix<Complex64>) {
        match model {
            SignalModel::ServedLinks => (&self.est, self.err.clone()),
            SignalModel::FullChannel => (&self.est_full, &self.true_g - &self.est_full),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChannelDraw {
    pub seus: Vec<SeuDraw>,
}

/// Draws `h`, simulates the pilot projection and forms the MMSE estimates.
///
/// Random numbers are consumed in global AP order (all fading, then all
/// pilot noise), so a realization does not depend on how APs are grouped
/// into SEUs.
#[allow(clippy::too_many_arguments)]
pub fn draw_channel<R: Rng + ?Sized>(
    layout: &NetworkLayout,
    plan: &ClusterPlan,
    stats: &EstimationStats,
    pilots: &PilotPlan,
    powers: &Powers,
    antennas: usize,
    rng: &mut R,
) -> ChannelDraw {
    let (m_count, k_count) = layout.gains.shape();
    let n = antennas;
    let tau = pilots.num_pilots();

    let mut h = vec![Complex64::default(); m_count * k_count * n];
    for x in h.iter_mut() {
        *x = complex_normal(rng, 1.0);
    }
    let h_at = |m: usize, k: usize, a: usize| h[(m * k_count + k) * n + a];

    let sqrt_rho_p = powers.pilot.sqrt();
    let mut observed = vec![Complex64::default(); m_count * tau * n];
    for m in 0..m_count {
        for t in 0..tau {
            for a in 0..n {
                let signal: Complex64 = pilots.cohorts[t]
                    .iter()
                    .map(|&i| h_at(m, i, a) * layout.gains[(m, i)].sqrt())
                    .sum();
                observed[(m * tau + t) * n + a] = signal * sqrt_rho_p;
            }
        }
    }
    for y in observed.iter_mut() {
        *y += complex_normal(rng, powers.noise_pilot);
    }

    let seus = plan
        .seu_members
        .iter()
        .map(|members| {
            let rows = members.len() * n;
            let mut d = SeuDraw {
                true_h: DMatrix::zeros(rows, k_count),
                true_g: DMatrix::zeros(rows, k_count),
                h_hat: DMatrix::zeros(rows, k_count),
                est_full: DMatrix::zeros(rows, k_count),
                est: DMatrix::zeros(rows, k_count),
                err: DMatrix::zeros(rows, k_count),
            };
            for (r, &m) in members.iter().enumerate() {
                for k in 0..k_count {
                    let lambda = layout.gains[(m, k)];
                    let norm = (powers.pilot * stats.cohort_gain[(m, k)] + powers.noise_pilot).sqrt();
                    let beta = stats.beta[(m, k)];
                    let served = plan.serves(m, k);
                    for a in 0..n {
                        let row = r * n + a;
                        let hv = h_at(m, k, a);
                        let g = hv * lambda.sqrt();
                        let hh = observed[(m * tau + pilots.pilot_of[k]) * n + a] / norm;
                        d.true_h[(row, k)] = hv;
                        d.true_g[(row, k)] = g;
                        d.h_hat[(row, k)] = hh;
                        d.est_full[(row, k)] = hh * beta;
                        if served {
                            d.est[(row, k)] = hh * beta;
                            d.err[(row, k)] = g - hh * beta;
                        }
                    }
                }
            }
            d
        })
        .collect();
    ChannelDraw { seus }
}
