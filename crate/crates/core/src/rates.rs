//! Achievable uplink rates: Monte Carlo SINR averaging and the Gamma
//! moment-matched closed forms for MRC and ZF.

use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::combining::{build_combiners, project, zf_orthogonality_error, LsfdWeights, Projections, Receiver};
use crate::deployment::Deployment;
use crate::error::{Error, Result};
use crate::par::{map_chunks, CHUNK};
use crate::rng::{stream, Stream};

/// SINR values above this are clipped before taking the logarithm.
pub const SINR_CAP: f64 = 1e12;

static CAP_WARNED: AtomicBool = AtomicBool::new(false);

/// `log2(1 + min(sinr, SINR_CAP))`
pub fn rate_from_sinr(sinr: f64) -> f64 {
    let s = if sinr.is_nan() || sinr > SINR_CAP {
        if !CAP_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("SINR {sinr:e} clipped to {SINR_CAP:e}");
        }
        SINR_CAP
    } else {
        sinr.max(0.0)
    };
    (1.0 + s).log2()
}

/// Gamma distribution matched to the first two moments of a weighted sum of
/// chi-square variables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub scale: f64,
}

impl GammaParams {
    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn variance(&self) -> f64 {
        self.shape * self.scale * self.scale
    }

    pub fn second_moment(&self) -> f64 {
        self.shape * (self.shape + 1.0) * self.scale * self.scale
    }
}

/// Matches `sum_m w_m ||x_m||^2` with `x_m` i.i.d. standard complex Gaussian
/// `N`-vectors: shape `N (sum w)^2 / sum w^2`, scale `sum w^2 / sum w`.
pub fn gamma_match(weights: impl IntoIterator<Item = f64>, antennas: usize) -> Result<GammaParams> {
    let (s1, s2) = weights.into_iter().fold((0.0, 0.0), |(a, b), w| (a + w, b + w * w));
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(Error::EmptyGammaMask);
    }
    Ok(GammaParams {
        shape: antennas as f64 * s1 * s1 / s2,
        scale: s2 / s1,
    })
}

/// Gamma approximation of `||gbar||^2` for one SEU from the served mask and
/// `beta^2` of its APs.
pub fn gamma_match_estimate(mask: &[bool], beta_sq: &[f64], antennas: usize) -> Result<GammaParams> {
    gamma_match(
        mask.iter().zip(beta_sq).map(|(&u, &b)| if u { b } else { 0.0 }),
        antennas,
    )
}

/// `shape * scale` of [`gamma_match`], or zero when every weight vanishes.
fn matched_mean(weights: impl IntoIterator<Item = f64>, antennas: usize) -> f64 {
    gamma_match(weights, antennas).map(|g| g.mean()).unwrap_or(0.0)
}

/// Which coefficient convention the closed forms use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfVariant {
    /// Every term evaluated from the same second-moment calculus, with
    /// interferer masks following the signal model.
    #[default]
    Consistent,
    /// One factor of N on the desired and co-pilot terms and none on the
    /// others, with every interferer visible to the combiner.
    Literal,
}

/// How the per-SEU terms combine into one SINR in the Monte Carlo evaluator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinrForm {
    /// `sum_l |mu_l|^2 (...)` for signal and for each interference term.
    #[default]
    PerSeu,
    /// `|sum_l conj(mu_l) (...)|^2`
    Coherent,
}

/// Whether interferer `i` at AP `m` enters the closed forms.
fn visible(dep: &Deployment, variant: CfVariant, m: usize, i: usize) -> f64 {
    match variant {
        CfVariant::Literal => 1.0,
        CfVariant::Consistent => {
            if dep.link_visible(m, i) {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn ratio_to_rate(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        rate_from_sinr(num / den)
    } else {
        rate_from_sinr(f64::INFINITY)
    }
}

fn check_weights(dep: &Deployment, mu: &LsfdWeights) -> Result<()> {
    if mu.mu.len() != dep.num_ues() || mu.mu.iter().any(|m| m.len() != dep.num_seus()) {
        return Err(Error::Config("LSFD weights do not match the deployment".into()));
    }
    Ok(())
}

/// Per-SEU terms of a closed-form SINR before LSFD weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SeuTerms {
    pub desired: f64,
    /// Co-pilot interference (MRC only).
    pub copilot: f64,
    /// Non-co-pilot interference (MRC only).
    pub other: f64,
    /// Estimation-error leakage; the whole interference term for ZF.
    pub leakage: f64,
    pub noise: f64,
}

impl SeuTerms {
    pub fn interference_plus_noise(&self) -> f64 {
        self.copilot + self.other + self.leakage + self.noise
    }
}

/// MRC terms of UE `k` at serving SEU `l`.
pub fn mrc_terms(dep: &Deployment, k: usize, l: usize, variant: CfVariant) -> Result<SeuTerms> {
    let plan = &dep.plan;
    let stats = &dep.stats;
    let n = dep.antennas as f64;
    let rho = &dep.powers.ul;
    let members = &plan.seu_members[l];
    let served: Vec<usize> = members.iter().copied().filter(|&m| plan.serves(m, k)).collect();
    let mask: Vec<bool> = members.iter().map(|&m| plan.serves(m, k)).collect();
    let bk2: Vec<f64> = members.iter().map(|&m| stats.beta[(m, k)].powi(2)).collect();
    let gamma = gamma_match_estimate(&mask, &bk2, dep.antennas)?;
    let sum_b2 = gamma.mean() / n;

    let mut t = SeuTerms::default();
    for i in 0..dep.num_ues() {
        let vis = |m: usize| visible(dep, variant, m, i);
        let cross: f64 = served.iter().map(|&m| vis(m) * stats.beta[(m, k)] * stats.beta[(m, i)]).sum();
        let leak_b: f64 = served
            .iter()
            .map(|&m| vis(m) * stats.beta[(m, k)].powi(2) * stats.beta[(m, i)].powi(2))
            .sum();
        let leak_e: f64 = served.iter().map(|&m| vis(m) * stats.beta[(m, k)].powi(2) * stats.eta[(m, i)]).sum();
        let copilot = dep.pilots.shares_pilot(k, i);
        match variant {
            CfVariant::Consistent => {
                if copilot && i != k {
                    t.copilot += rho[i] * (n * cross).powi(2);
                }
                if !copilot {
                    t.other += rho[i] * n * leak_b;
                }
                t.leakage += rho[i] * n * leak_e;
            }
            CfVariant::Literal => {
                if copilot && i != k {
                    t.copilot += rho[i] * n * cross.powi(2);
                }
                if !copilot {
                    t.other += rho[i] * leak_b;
                }
                t.leakage += rho[i] * leak_e;
            }
        }
    }
    t.desired = match variant {
        CfVariant::Consistent => rho[k] * (n * sum_b2).powi(2),
        CfVariant::Literal => rho[k] * n * sum_b2.powi(2),
    };
    t.noise = dep.powers.noise_ul[l] * gamma.mean();
    Ok(t)
}

/// ZF terms of UE `k` at serving SEU `l`.
pub fn zf_terms(dep: &Deployment, k: usize, l: usize, variant: CfVariant) -> Result<SeuTerms> {
    let plan = &dep.plan;
    let stats = &dep.stats;
    let rho = &dep.powers.ul;
    let members = &plan.seu_members[l];
    let dim = dep.seu_dim(l) as f64;
    let k_l = plan.served_count(l) as f64;
    if k_l > dim {
        return Err(Error::Dimension {
            seu: l,
            reason: format!("{k_l} served UEs exceed {dim} receive dimensions"),
        });
    }
    let mask: Vec<bool> = members.iter().map(|&m| plan.serves(m, k)).collect();
    let bk2: Vec<f64> = members.iter().map(|&m| stats.beta[(m, k)].powi(2)).collect();
    let gamma = gamma_match_estimate(&mask, &bk2, dep.antennas)?;

    let leakage = plan.served_sets[l]
        .iter()
        .map(|&kp| {
            let weights = members.iter().map(|&m| {
                let on = match variant {
                    CfVariant::Consistent => dep.link_visible(m, kp),
                    CfVariant::Literal => plan.serves(m, k),
                };
                if on {
                    stats.eta[(m, kp)]
                } else {
                    0.0
                }
            });
            rho[kp] / dim * matched_mean(weights, dep.antennas)
        })
        .sum();
    Ok(SeuTerms {
        desired: rho[k] * (dim - k_l + 1.0) / dim * gamma.mean(),
        leakage,
        noise: dep.powers.noise_ul[l],
        ..SeuTerms::default()
    })
}

fn closed_form(
    dep: &Deployment,
    mu: &LsfdWeights,
    terms: impl Fn(usize, usize) -> Result<SeuTerms>,
) -> Result<Vec<f64>> {
    check_weights(dep, mu)?;
    (0..dep.num_ues())
        .map(|k| {
            let mut num = 0.0;
            let mut den = 0.0;
            for l in dep.plan.serving_seus(k) {
                let t = terms(k, l)?;
                let weight = mu.mu[k][l].norm_sqr();
                num += weight * t.desired;
                den += weight * t.interference_plus_noise();
            }
            Ok(ratio_to_rate(num, den))
        })
        .collect()
}

/// Closed-form MRC rate per UE.
pub fn rate_mrc_closed_form(dep: &Deployment, mu: &LsfdWeights, variant: CfVariant) -> Result<Vec<f64>> {
    closed_form(dep, mu, |k, l| mrc_terms(dep, k, l, variant))
}

/// Closed-form ZF rate per UE. Fails when any SEU serves more UEs than it
/// has receive dimensions.
pub fn rate_zf_closed_form(dep: &Deployment, mu: &LsfdWeights, variant: CfVariant) -> Result<Vec<f64>> {
    for l in 0..dep.num_seus() {
        let dim = dep.seu_dim(l);
        if dep.plan.served_count(l) > dim {
            return Err(Error::Dimension {
                seu: l,
                reason: format!("{} served UEs exceed {dim} receive dimensions", dep.plan.served_count(l)),
            });
        }
    }
    closed_form(dep, mu, |k, l| zf_terms(dep, k, l, variant))
}

pub fn rate_closed_form(dep: &Deployment, receiver: Receiver, mu: &LsfdWeights, variant: CfVariant) -> Result<Vec<f64>> {
    match receiver {
        Receiver::Mrc => rate_mrc_closed_form(dep, mu, variant),
        Receiver::Zf => rate_zf_closed_form(dep, mu, variant),
    }
}

/// Instantaneous SINR of every UE for one draw.
pub fn instantaneous_sinr(dep: &Deployment, proj: &Projections, mu: &LsfdWeights, form: SinrForm) -> Vec<f64> {
    let k_count = dep.num_ues();
    let rho = &dep.powers.ul;
    let noise = &dep.powers.noise_ul;
    (0..k_count)
        .map(|k| {
            let serving = dep.plan.serving_seus(k);
            let mu_k = &mu.mu[k];
            match form {
                SinrForm::PerSeu => {
                    let (mut num, mut den) = (0.0, 0.0);
                    for &l in &serving {
                        let a = mu_k[l].norm_sqr();
                        let est = &proj.est[l];
                        let err = &proj.err[l];
                        let mut interference = noise[l] * proj.wnorm2[l][k];
                        for i in 0..k_count {
                            if i != k {
                                interference += rho[i] * est[(k, i)].norm_sqr();
                            }
                            interference += rho[i] * err[(k, i)].norm_sqr();
                        }
                        num += a * rho[k] * est[(k, k)].norm_sqr();
                        den += a * interference;
                    }
                    num / den
                }
                SinrForm::Coherent => {
                    let fused = |parts: &[DMatrix<Complex64>], i: usize| -> Complex64 {
                        serving.iter().map(|&l| mu_k[l].conj() * parts[l][(k, i)]).sum()
                    };
                    let num = rho[k] * fused(&proj.est, k).norm_sqr();
                    let mut den: f64 = serving
                        .iter()
                        .map(|&l| mu_k[l].norm_sqr() * noise[l] * proj.wnorm2[l][k])
                        .sum();
                    for i in 0..k_count {
                        if i != k {
                            den += rho[i] * fused(&proj.est, i).norm_sqr();
                        }
                        den += rho[i] * fused(&proj.err, i).norm_sqr();
                    }
                    num / den
                }
            }
        })
        .collect()
}

/// Per-draw rates (`draws x K`) for draw indices `range` of stream `seed`.
pub fn per_draw_rates(
    dep: &Deployment,
    receiver: Receiver,
    mu: &LsfdWeights,
    range: std::ops::Range<usize>,
    seed: u64,
    form: SinrForm,
) -> Result<Vec<Vec<f64>>> {
    check_weights(dep, mu)?;
    range
        .map(|d| {
            let draw = dep.draw(&mut stream(seed, Stream::RateDraws, d as u64));
            let set = build_combiners(receiver, &draw, &dep.plan)?;
            let proj = project(&set, &draw, dep.signal);
            Ok(instantaneous_sinr(dep, &proj, mu, form).into_iter().map(rate_from_sinr).collect())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct McRates {
    pub mean: Vec<f64>,
    /// Standard error of each mean.
    pub std_err: Vec<f64>,
    /// Worst ZF orthogonality residual over all draws (0 for MRC).
    pub max_zf_residual: f64,
    pub draws: usize,
}

/// Averages `log2(1 + SINR)` over `draws` independent channel draws.
pub fn rate_monte_carlo(
    dep: &Deployment,
    receiver: Receiver,
    mu: &LsfdWeights,
    draws: usize,
    seed: u64,
    form: SinrForm,
) -> Result<McRates> {
    if draws == 0 {
        return Err(Error::Config("Monte Carlo evaluation needs at least one draw".into()));
    }
    check_weights(dep, mu)?;
    let k_count = dep.num_ues();
    let partials = map_chunks(draws, CHUNK, |range| -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let mut sum = vec![0.0; k_count];
        let mut sum_sq = vec![0.0; k_count];
        let mut worst = 0.0f64;
        for d in range {
            let draw = dep.draw(&mut stream(seed, Stream::RateDraws, d as u64));
            let set = build_combiners(receiver, &draw, &dep.plan)?;
            if receiver == Receiver::Zf {
                worst = worst.max(zf_orthogonality_error(&set, &draw, &dep.plan));
            }
            let proj = project(&set, &draw, dep.signal);
            for (k, sinr) in instantaneous_sinr(dep, &proj, mu, form).into_iter().enumerate() {
                let r = rate_from_sinr(sinr);
                sum[k] += r;
                sum_sq[k] += r * r;
            }
        }
        Ok((sum, sum_sq, worst))
    });

    let mut sum = vec![0.0; k_count];
    let mut sum_sq = vec![0.0; k_count];
    let mut worst = 0.0f64;
    for part in partials {
        let (s, q, w) = part?;
        for k in 0..k_count {
            sum[k] += s[k];
            sum_sq[k] += q[k];
        }
        worst = worst.max(w);
    }
    let n = draws as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_err = if draws > 1 {
        mean.iter()
            .zip(&sum_sq)
            .map(|(m, q)| ((q / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
            .collect()
    } else {
        vec![f64::NAN; k_count]
    };
    Ok(McRates { mean, std_err, max_zf_residual: worst, draws })
}

/// Analytic MRC combiner statistics at each SEU, indexed `[l][(k, i)]`.
#[derive(Clone, Debug)]
pub struct MrcMoments {
    /// `E[gbar_k^H gbar_i]`; nonzero only for co-pilot pairs.
    pub mean: Vec<DMatrix<f64>>,
    /// `(N sum upsilon_k upsilon_i beta_k beta_i)^2` for co-pilot pairs.
    pub second_of_mean: Vec<DMatrix<f64>>,
    /// Exact `E|gbar_k^H gbar_i|^2`.
    pub second_exact: Vec<DMatrix<f64>>,
    /// `E|gbar_k^H e_i|^2 = N sum upsilon_k upsilon_i beta_k^2 eta_i`.
    pub error_leakage: Vec<DMatrix<f64>>,
}

/// Closed-form first and second moments of the MRC combiner outputs.
///
/// All entries derive from `||hhat||^2 ~ Gamma(N, 1)` per AP and the
/// independence of `hhat` from the estimation errors.
pub fn mrc_combiner_moments(dep: &Deployment, receiver: Receiver) -> Result<MrcMoments> {
    if receiver != Receiver::Mrc {
        return Err(Error::Unsupported("combiner moment formulas are only available for MRC"));
    }
    let plan = &dep.plan;
    let stats = &dep.stats;
    let n = dep.antennas as f64;
    let k_count = dep.num_ues();
    let blank = || vec![DMatrix::zeros(k_count, k_count); dep.num_seus()];
    let mut out = MrcMoments {
        mean: blank(),
        second_of_mean: blank(),
        second_exact: blank(),
        error_leakage: blank(),
    };
    for (l, members) in plan.seu_members.iter().enumerate() {
        for k in 0..k_count {
            for i in 0..k_count {
                let (mut cross, mut cross_sq, mut leak_b, mut leak_e) = (0.0, 0.0, 0.0, 0.0);
                for &m in members {
                    if !(plan.serves(m, k) && plan.serves(m, i)) {
                        continue;
                    }
                    let (bk, bi) = (stats.beta[(m, k)], stats.beta[(m, i)]);
                    cross += bk * bi;
                    cross_sq += (bk * bi).powi(2);
                    leak_b += bk * bk * bi * bi;
                    leak_e += bk * bk * stats.eta[(m, i)];
                }
                let copilot = dep.pilots.shares_pilot(k, i);
                if copilot {
                    out.mean[l][(k, i)] = n * cross;
                    out.second_of_mean[l][(k, i)] = (n * cross).powi(2);
                    out.second_exact[l][(k, i)] = (n * cross).powi(2) + n * cross_sq;
                } else {
                    out.second_exact[l][(k, i)] = n * leak_b;
                }
                out.error_leakage[l][(k, i)] = n * leak_e;
            }
        }
    }
    Ok(out)
}

/// Per-UE rates of one layout together with their provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub per_ue_rate_mc: Vec<f64>,
    pub per_ue_rate_cf: Vec<f64>,
    pub receiver: Receiver,
    pub draw_count: usize,
    pub seed: u64,
    pub config_fingerprint: String,
}

impl RateReport {
    pub const HEADER: [&'static str; 6] = ["ue_index", "rate_mc", "rate_cf", "receiver", "draws", "seed"];

    pub fn write_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for (k, (mc, cf)) in self.per_ue_rate_mc.iter().zip(&self.per_ue_rate_cf).enumerate() {
            w.write_record([
                k.to_string(),
                format!("{mc:.12e}"),
                format!("{cf:.12e}"),
                self.receiver.to_string(),
                self.draw_count.to_string(),
                self.seed.to_string(),
            ])?;
        }
        Ok(())
    }

    /// Writes the header and every report's rows.
    pub fn write_csv<W: Write>(reports: &[RateReport], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::HEADER)?;
        for r in reports {
            r.write_rows(&mut w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        let ok = self
            .per_ue_rate_mc
            .iter()
            .chain(&self.per_ue_rate_cf)
            .all(|r| r.is_finite() && *r >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Invariant(format!("non-finite or negative rate in layout {}", self.seed)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn identical_terms_collapse() {
        let g = gamma_match_estimate(&[true; 5], &[0.3; 5], 4).unwrap();
        assert_relative_eq!(g.shape, 20.0, max_relative = 1e-14);
        assert_relative_eq!(g.scale, 0.3, max_relative = 1e-14);
    }

    #[test]
    fn single_served_ap() {
        let g = gamma_match_estimate(&[false, true, false], &[9.0, 2.5, 7.0], 3).unwrap();
        assert_eq!(g.shape, 3.0);
        assert_eq!(g.scale, 2.5);
    }

    #[test]
    fn two_term_example() {
        let g = gamma_match_estimate(&[true, true], &[1.0, 4.0], 2).unwrap();
        assert_relative_eq!(g.shape, 50.0 / 17.0, max_relative = 1e-14);
        assert_relative_eq!(g.scale, 3.4, max_relative = 1e-14);
        assert_relative_eq!(g.mean(), 10.0, max_relative = 1e-14);
    }

    #[test]
    fn empty_mask_is_an_error() {
        assert!(matches!(gamma_match_estimate(&[false, false], &[1.0, 2.0], 2), Err(Error::EmptyGammaMask)));
    }

    #[test]
    fn gamma_moments_match_weighted_chi_square() {
        // sum_m w_m ||x_m||^2: mean N sum w, variance N sum w^2
        let w = [0.5, 2.0, 1.5];
        let g = gamma_match(w, 3).unwrap();
        assert_relative_eq!(g.mean(), 3.0 * 4.0, max_relative = 1e-14);
        assert_relative_eq!(g.variance(), 3.0 * (0.25 + 4.0 + 2.25), max_relative = 1e-14);
    }

    #[test]
    fn rate_cap() {
        assert_relative_eq!(rate_from_sinr(f64::INFINITY), (1.0 + SINR_CAP).log2());
        assert_eq!(rate_from_sinr(0.0), 0.0);
        assert_eq!(rate_from_sinr(3.0), 2.0);
    }

    proptest! {
        #[test]
        fn mean_identity(mask in proptest::collection::vec(any::<bool>(), 1..40),
                         seed in proptest::collection::vec(1e-12f64..1e-4, 40),
                         n in 1usize..16) {
            prop_assume!(mask.iter().any(|&u| u));
            let b2 = &seed[..mask.len()];
            let g = gamma_match_estimate(&mask, b2, n).unwrap();
            let direct: f64 = n as f64 * mask.iter().zip(b2).filter(|(u, _)| **u).map(|(_, b)| b).sum::<f64>();
            prop_assert!((g.mean() - direct).abs() <= 4.0 * f64::EPSILON * direct);
        }
    }
}
