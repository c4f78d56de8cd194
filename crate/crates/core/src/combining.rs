//! SEU combiners, local symbol estimates, LSFD weights and CPU fusion.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelDraw, SignalModel};
use crate::clustering::ClusterPlan;
use crate::config::Powers;
use crate::deployment::Deployment;
use crate::error::{Error, Result};
use crate::par::{map_chunks, CHUNK};
use crate::rng::{complex_normal, stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Receiver {
    Mrc,
    Zf,
}

impl Receiver {
    pub const ALL: [Receiver; 2] = [Receiver::Mrc, Receiver::Zf];

    pub fn as_str(self) -> &'static str {
        match self {
            Receiver::Mrc => "mrc",
            Receiver::Zf => "zf",
        }
    }
}

impl fmt::Display for Receiver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Receiver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Receiver> {
        match s.to_ascii_lowercase().as_str() {
            "mrc" => Ok(Receiver::Mrc),
            "zf" => Ok(Receiver::Zf),
            _ => Err(Error::Config(format!("unknown receiver '{s}' (expected mrc or zf)"))),
        }
    }
}

/// Combining vectors for one channel draw: `vectors[l]` is `(M_l N) x K` with
/// column `k` equal to `w_{l,k}` (zero when SEU `l` does not serve UE `k`).
#[derive(Clone, Debug)]
pub struct CombinerSet {
    pub receiver: Receiver,
    pub vectors: Vec<DMatrix<Complex64>>,
}

pub fn mrc_combiners(draw: &ChannelDraw) -> CombinerSet {
    CombinerSet {
        receiver: Receiver::Mrc,
        vectors: draw.seus.iter().map(|d| d.est.clone()).collect(),
    }
}

/// Normalized diagonal of R below which the served estimate matrix is
/// treated as rank deficient.
const RANK_TOL: f64 = 1e-10;
const ORTHO_REFINE_TOL: f64 = 1e-12;
const ORTHO_TOL: f64 = 1e-10;

/// Zero-forcing columns of `G (G^H G)^-1` over each SEU's served UEs.
///
/// The pseudo-inverse is formed from a QR factorization of the
/// column-normalized estimate matrix, `B = Q R^-H S^-1`, followed by one
/// step of iterative refinement when `G^H B` drifts from the identity.
pub fn zf_combiners(draw: &ChannelDraw, plan: &ClusterPlan) -> Result<CombinerSet> {
    let mut vectors = Vec::with_capacity(draw.seus.len());
    for (l, d) in draw.seus.iter().enumerate() {
        let served = &plan.served_sets[l];
        let rows = d.est.nrows();
        let mut w = DMatrix::zeros(rows, d.est.ncols());
        if !served.is_empty() {
            let b = zf_block(&d.est.select_columns(served.iter()), l)?;
            for (j, &k) in served.iter().enumerate() {
                w.set_column(k, &b.column(j));
            }
        }
        vectors.push(w);
    }
    Ok(CombinerSet { receiver: Receiver::Zf, vectors })
}

fn zf_block(g: &DMatrix<Complex64>, seu: usize) -> Result<DMatrix<Complex64>> {
    let (rows, cols) = g.shape();
    if cols > rows {
        return Err(Error::Dimension {
            seu,
            reason: format!("{cols} served UEs exceed {rows} receive dimensions"),
        });
    }
    let scales: Vec<f64> = g.column_iter().map(|c| c.norm()).collect();
    if scales.iter().any(|&s| s == 0.0 || !s.is_finite()) {
        return Err(Error::Dimension { seu, reason: "served UE with an all-zero estimate".into() });
    }
    let mut normalized = g.clone();
    for (j, &s) in scales.iter().enumerate() {
        normalized.column_mut(j).unscale_mut(s);
    }
    let qr = normalized.qr();
    let r = qr.r();
    let min_diag = (0..cols).map(|i| r[(i, i)].norm()).fold(f64::INFINITY, f64::min);
    if min_diag < RANK_TOL {
        return Err(Error::Dimension {
            seu,
            reason: format!("estimate matrix is rank deficient (min |R_ii| = {min_diag:.3e})"),
        });
    }
    let q = qr.q();
    let b_adj = r
        .solve_upper_triangular(&q.adjoint())
        .ok_or_else(|| Error::Dimension { seu, reason: "triangular solve failed".into() })?;
    let mut b = b_adj.adjoint();
    for (j, &s) in scales.iter().enumerate() {
        b.column_mut(j).unscale_mut(s);
    }

    let mut residual = g.ad_mul(&b);
    for i in 0..cols {
        residual[(i, i)] -= Complex64::new(1.0, 0.0);
    }
    if max_abs(&residual) > ORTHO_REFINE_TOL {
        b -= &b * &residual;
        residual = g.ad_mul(&b);
        for i in 0..cols {
            residual[(i, i)] -= Complex64::new(1.0, 0.0);
        }
    }
    let err = max_abs(&residual);
    if err.is_nan() || err > ORTHO_TOL {
        return Err(Error::Dimension {
            seu,
            reason: format!("zero-forcing residual {err:.3e} exceeds {ORTHO_TOL:e}"),
        });
    }
    Ok(b)
}

fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn build_combiners(receiver: Receiver, draw: &ChannelDraw, plan: &ClusterPlan) -> Result<CombinerSet> {
    match receiver {
        Receiver::Mrc => Ok(mrc_combiners(draw)),
        Receiver::Zf => zf_combiners(draw, plan),
    }
}

/// Largest `|w_{l,k}^H gbar_{l,k'} - delta_{kk'}|` over SEUs and served pairs.
pub fn zf_orthogonality_error(set: &CombinerSet, draw: &ChannelDraw, plan: &ClusterPlan) -> f64 {
    let mut worst = 0.0f64;
    for (l, (w, d)) in set.vectors.iter().zip(&draw.seus).enumerate() {
        for &k in &plan.served_sets[l] {
            for &kp in &plan.served_sets[l] {
                let ip = w.column(k).dotc(&d.est.column(kp));
                let target = if k == kp { 1.0 } else { 0.0 };
                worst = worst.max((ip - target).norm());
            }
        }
    }
    worst
}

/// Inner products of the combiners with the received channel parts.
///
/// `est[l][(k, i)] = w_{l,k}^H a_{l,i}` and `err[l][(k, i)] = w_{l,k}^H e_{l,i}`
/// where `a + e` is the channel of UE `i` as received at SEU `l`.
#[derive(Clone, Debug)]
pub struct Projections {
    pub est: Vec<DMatrix<Complex64>>,
    pub err: Vec<DMatrix<Complex64>>,
    /// `wnorm2[l][k] = ||w_{l,k}||^2`
    pub wnorm2: Vec<Vec<f64>>,
}

impl Projections {
    /// z_{ki} at SEU `l`
    #[inline]
    pub fn total(&self, l: usize, k: usize, i: usize) -> Complex64 {
        self.est[l][(k, i)] + self.err[l][(k, i)]
    }
}

pub fn project(set: &CombinerSet, draw: &ChannelDraw, model: SignalModel) -> Projections {
    let mut est = Vec::with_capacity(draw.seus.len());
    let mut err = Vec::with_capacity(draw.seus.len());
    let mut wnorm2 = Vec::with_capacity(draw.seus.len());
    for (w, d) in set.vectors.iter().zip(&draw.seus) {
        let (a, e) = d.signal_parts(model);
        est.push(w.ad_mul(a));
        err.push(w.ad_mul(&e));
        wnorm2.push(w.column_iter().map(|c| c.norm_squared()).collect());
    }
    Projections { est, err, wnorm2 }
}

/// Receiver noise at every SEU for one symbol period.
pub fn draw_noise<R: Rng + ?Sized>(deployment: &Deployment, rng: &mut R) -> Vec<DVector<Complex64>> {
    (0..deployment.num_seus())
        .map(|l| {
            let var = deployment.powers.noise_ul[l];
            DVector::from_fn(deployment.seu_dim(l), |_, _| complex_normal(rng, var))
        })
        .collect()
}

/// `x_hat[(l, k)] = w_{l,k}^H (sum_i sqrt(rho_i) s_{l,i} x_i + n_l)` for a
/// given noise realization; `s_{l,i}` is UE `i`'s channel under `model`.
pub fn local_estimates_with_noise(
    set: &CombinerSet,
    draw: &ChannelDraw,
    symbols: &[Complex64],
    powers: &Powers,
    model: SignalModel,
    noise: &[DVector<Complex64>],
) -> DMatrix<Complex64> {
    let k_count = symbols.len();
    let scaled = DVector::from_fn(k_count, |i, _| symbols[i] * powers.ul[i].sqrt());
    let mut out = DMatrix::zeros(set.vectors.len(), k_count);
    for (l, (w, d)) in set.vectors.iter().zip(&draw.seus).enumerate() {
        let (a, e) = d.signal_parts(model);
        let received = (a + e) * &scaled + &noise[l];
        let local = w.ad_mul(&received);
        for k in 0..k_count {
            out[(l, k)] = local[k];
        }
    }
    out
}

pub fn local_estimates<R: Rng + ?Sized>(
    set: &CombinerSet,
    draw: &ChannelDraw,
    symbols: &[Complex64],
    deployment: &Deployment,
    noise_rng: &mut R,
) -> DMatrix<Complex64> {
    let noise = draw_noise(deployment, noise_rng);
    local_estimates_with_noise(set, draw, symbols, &deployment.powers, deployment.signal, &noise)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentSource {
    MonteCarlo { samples: usize },
    PlugInMrc,
    Fixed,
}

/// LSFD weights; `mu[k][l]` weights SEU `l`'s estimate of UE `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LsfdWeights {
    pub mu: Vec<Vec<Complex64>>,
    pub source: MomentSource,
}

impl LsfdWeights {
    /// Unit weight on every serving SEU.
    pub fn uniform(plan: &ClusterPlan) -> LsfdWeights {
        let one = Complex64::new(1.0, 0.0);
        let mu = plan
            .lsfd_mask
            .iter()
            .map(|mask| mask.iter().map(|&off| if off { Complex64::default() } else { one }).collect())
            .collect();
        LsfdWeights { mu, source: MomentSource::Fixed }
    }
}

/// Second-order statistics entering the LSFD system of every UE.
#[derive(Clone, Debug)]
pub struct LsfdMoments {
    /// `sum_{i in S_k} rho_i E[z_ki z_ki^H]` (L x L) per UE.
    pub gram: Vec<DMatrix<Complex64>>,
    /// `E[z_kk]` per UE.
    pub desired: Vec<DVector<Complex64>>,
    /// `E ||w_{l,k}||^2`, indexed `[k][l]`.
    pub wnorm2: Vec<Vec<f64>>,
}

impl LsfdMoments {
    fn zeros(k_count: usize, l_count: usize) -> LsfdMoments {
        LsfdMoments {
            gram: vec![DMatrix::zeros(l_count, l_count); k_count],
            desired: vec![DVector::zeros(l_count); k_count],
            wnorm2: vec![vec![0.0; l_count]; k_count],
        }
    }

    fn add_assign(&mut self, other: &LsfdMoments) {
        for (a, b) in self.gram.iter_mut().zip(&other.gram) {
            *a += b;
        }
        for (a, b) in self.desired.iter_mut().zip(&other.desired) {
            *a += b;
        }
        for (a, b) in self.wnorm2.iter_mut().zip(&other.wnorm2) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for g in &mut self.gram {
            g.scale_mut(s);
        }
        for d in &mut self.desired {
            d.scale_mut(s);
        }
        for w in self.wnorm2.iter_mut().flatten() {
            *w *= s;
        }
    }
}

/// Sample averages of the LSFD moments over `samples` dedicated channel draws.
pub fn estimate_moments(deployment: &Deployment, receiver: Receiver, samples: usize, seed: u64) -> Result<LsfdMoments> {
    if samples == 0 {
        return Err(Error::Config("LSFD moment estimation needs at least one sample".into()));
    }
    let k_count = deployment.num_ues();
    let l_count = deployment.num_seus();
    let plan = &deployment.plan;
    let rho = &deployment.powers.ul;

    let partials = map_chunks(samples, CHUNK, |range| -> Result<LsfdMoments> {
        let mut acc = LsfdMoments::zeros(k_count, l_count);
        let mut z = DVector::<Complex64>::zeros(l_count);
        for d in range {
            let draw = deployment.draw(&mut stream(seed, Stream::MomentDraws, d as u64));
            let set = build_combiners(receiver, &draw, plan)?;
            let proj = project(&set, &draw, deployment.signal);
            for k in 0..k_count {
                for &i in &plan.overlap_sets[k] {
                    for l in 0..l_count {
                        z[l] = proj.total(l, k, i);
                    }
                    acc.gram[k].gerc(Complex64::new(rho[i], 0.0), &z, &z, Complex64::new(1.0, 0.0));
                }
                for l in 0..l_count {
                    acc.desired[k][l] += proj.total(l, k, k);
                    acc.wnorm2[k][l] += proj.wnorm2[l][k];
                }
            }
        }
        Ok(acc)
    });

    let mut total = LsfdMoments::zeros(k_count, l_count);
    for part in partials {
        total.add_assign(&part?);
    }
    total.scale(1.0 / samples as f64);
    Ok(total)
}

/// Exact LSFD moments for MRC from the estimation statistics.
///
/// With `w = gbar_k`, SEU `l` sees `z_ki = sum_m a_m hhat_m^H g_{m,i}` where
/// `a_m = upsilon_{m,k} v_{m,i} beta_{m,k}` and `v` marks visible links.
/// Splitting `g_{m,i}` into its projection on `hhat_m` (coefficient
/// `beta_{m,i}` for co-pilot UEs, zero otherwise) plus an independent part
/// gives `E z = N sum a_m c_m` and `Var z = N sum a_m^2 lambda_{m,i}`.
/// Different SEUs own disjoint APs, so cross-SEU terms factor into means.
pub fn plug_in_mrc_moments(deployment: &Deployment) -> LsfdMoments {
    let k_count = deployment.num_ues();
    let l_count = deployment.num_seus();
    let plan = &deployment.plan;
    let stats = &deployment.stats;
    let gains = &deployment.layout.gains;
    let n = deployment.antennas as f64;
    let rho = &deployment.powers.ul;
    let mut out = LsfdMoments::zeros(k_count, l_count);

    let mut mean = DVector::<Complex64>::zeros(l_count);
    for k in 0..k_count {
        for &i in &plan.overlap_sets[k] {
            let copilot = deployment.pilots.shares_pilot(k, i);
            let mut var = vec![0.0; l_count];
            for l in 0..l_count {
                let mut m_sum = 0.0;
                let mut v_sum = 0.0;
                for &m in &plan.seu_members[l] {
                    if !plan.serves(m, k) || !deployment.link_visible(m, i) {
                        continue;
                    }
                    let a = stats.beta[(m, k)];
                    if copilot {
                        m_sum += a * stats.beta[(m, i)];
                    }
                    v_sum += a * a * gains[(m, i)];
                }
                mean[l] = Complex64::new(n * m_sum, 0.0);
                var[l] = n * v_sum;
            }
            let g = &mut out.gram[k];
            for a in 0..l_count {
                for b in 0..l_count {
                    g[(a, b)] += mean[a] * mean[b].conj() * rho[i];
                }
                g[(a, a)] += var[a] * rho[i];
            }
        }
        for l in 0..l_count {
            let s: f64 = plan.seu_members[l]
                .iter()
                .filter(|&&m| plan.serves(m, k))
                .map(|&m| stats.beta[(m, k)].powi(2))
                .sum();
            out.desired[k][l] = Complex64::new(n * s, 0.0);
            out.wnorm2[k][l] = n * s;
        }
    }
    out
}

/// Solves `mu_k = rho_k (G_k + W_k + D_k)^-1 E[z_kk]` for every UE.
///
/// Rows and columns of SEUs that do not serve UE `k` hold only the unit
/// diagonal of `D_k` and a zero right-hand side, so the system is solved on
/// the serving sub-block and the remaining weights are exactly zero.
pub fn solve_lsfd(deployment: &Deployment, moments: &LsfdMoments) -> Result<Vec<Vec<Complex64>>> {
    let l_count = deployment.num_seus();
    (0..deployment.num_ues())
        .map(|k| {
            let serving = deployment.plan.serving_seus(k);
            let s = serving.len();
            let mut a = DMatrix::<Complex64>::zeros(s, s);
            let mut rhs = DVector::<Complex64>::zeros(s);
            for (p, &lp) in serving.iter().enumerate() {
                for (q, &lq) in serving.iter().enumerate() {
                    a[(p, q)] = moments.gram[k][(lp, lq)];
                }
                a[(p, p)] += deployment.powers.noise_ul[lp] * moments.wnorm2[k][lp];
                rhs[p] = moments.desired[k][lp] * deployment.powers.ul[k];
            }
            let x = a.lu().solve(&rhs).ok_or(Error::SingularLsfd { ue: k })?;
            if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::SingularLsfd { ue: k });
            }
            let mut mu = vec![Complex64::default(); l_count];
            for (p, &l) in serving.iter().enumerate() {
                mu[l] = x[p];
            }
            Ok(mu)
        })
        .collect()
}

pub fn lsfd_weights(deployment: &Deployment, receiver: Receiver, samples: usize, seed: u64) -> Result<LsfdWeights> {
    let moments = estimate_moments(deployment, receiver, samples, seed)?;
    Ok(LsfdWeights {
        mu: solve_lsfd(deployment, &moments)?,
        source: MomentSource::MonteCarlo { samples },
    })
}

pub fn lsfd_weights_plug_in_mrc(deployment: &Deployment) -> Result<LsfdWeights> {
    Ok(LsfdWeights {
        mu: solve_lsfd(deployment, &plug_in_mrc_moments(deployment))?,
        source: MomentSource::PlugInMrc,
    })
}

/// `x_hat_k = sum_l conj(mu_{l,k}) x_hat_{l,k}`
pub fn cpu_fuse(weights: &LsfdWeights, locals: &DMatrix<Complex64>) -> Vec<Complex64> {
    (0..locals.ncols())
        .map(|k| {
            weights.mu[k]
                .iter()
                .enumerate()
                .map(|(l, mu)| mu.conj() * locals[(l, k)])
                .sum()
        })
        .collect()
}
