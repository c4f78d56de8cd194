mod common;

use approx::assert_relative_eq;
use cellfree::combining::{lsfd_weights, LsfdWeights};
use cellfree::rates::{
    mrc_combiner_moments, gamma_match, mrc_terms, per_draw_rates, rate_closed_form, rate_monte_carlo,
    rate_zf_closed_form, zf_terms, RateReport, SINR_CAP,
};
use cellfree::rng::complex_normal;
use cellfree::{CfVariant, Deployment, Error, Receiver, SinrForm};
use common::Micro;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `E log2(1 + a X)` for `X ~ Gamma(n, 1)` by composite Simpson quadrature.
fn expected_log_gamma(a: f64, n: usize) -> f64 {
    let fact: f64 = (1..n).map(|i| i as f64).product();
    let f = |x: f64| (1.0 + a * x).log2() * x.powi(n as i32 - 1) * (-x).exp() / fact;
    let (upper, steps) = (80.0, 80_000);
    let h = upper / steps as f64;
    let mut s = f(0.0) + f(upper);
    for i in 1..steps {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn single_link(n: usize) -> Deployment {
    let mut m = Micro::new(vec![vec![0.3]], vec![0], vec![0], n);
    m.rho = 2.0;
    m.noise = 0.5;
    m.noise_p = 0.0;
    m.build()
}

#[test]
fn single_link_closed_forms_reduce_to_the_snr() {
    let dep = single_link(4);
    let mu = LsfdWeights::uniform(&dep.plan);
    let snr: f64 = 2.0 * 4.0 * 0.3 / 0.5;
    for rx in Receiver::ALL {
        let r = rate_closed_form(&dep, rx, &mu, CfVariant::Consistent).unwrap();
        assert_relative_eq!(r[0], (1.0 + snr).log2(), max_relative = 1e-14);
    }
    // The literal MRC coefficients drop one factor of N from the signal.
    let literal = rate_closed_form(&dep, Receiver::Mrc, &mu, CfVariant::Literal).unwrap();
    assert_relative_eq!(literal[0], (1.0 + snr / 4.0).log2(), max_relative = 1e-14);
}

#[test]
fn single_link_monte_carlo_matches_quadrature() {
    for n in [1, 4] {
        let dep = single_link(n);
        let mu = LsfdWeights::uniform(&dep.plan);
        let exact = expected_log_gamma(2.0 * 0.3 / 0.5, n);
        for rx in Receiver::ALL {
            let mc = rate_monte_carlo(&dep, rx, &mu, 40_000, 31, SinrForm::PerSeu).unwrap();
            let dev = (mc.mean[0] - exact).abs();
            assert!(dev < 4.0 * mc.std_err[0], "{rx} N={n}: {} vs {exact} (se {})", mc.mean[0], mc.std_err[0]);
        }
    }
}

#[test]
fn vanishing_noise_saturates_at_the_cap() {
    let mut m = Micro::new(vec![vec![0.3]], vec![0], vec![0], 2);
    m.noise = 0.0;
    m.noise_p = 0.0;
    let dep = m.build();
    let mu = LsfdWeights::uniform(&dep.plan);
    let r = rate_closed_form(&dep, Receiver::Mrc, &mu, CfVariant::Consistent).unwrap();
    assert_relative_eq!(r[0], (1.0 + SINR_CAP).log2(), max_relative = 1e-15);
}

#[test]
fn symmetric_copilot_interference_mirrors_the_other_ues_signal() {
    let mut m = Micro::new(vec![vec![0.6, 0.6]], vec![0], vec![0, 0], 3);
    m.noise_p = 0.2;
    let mut dep = m.build();
    dep.powers.ul = vec![1.0, 3.0];
    let t0 = mrc_terms(&dep, 0, 0, CfVariant::Consistent).unwrap();
    let t1 = mrc_terms(&dep, 1, 0, CfVariant::Consistent).unwrap();
    assert_relative_eq!(t0.copilot, t1.desired, max_relative = 1e-14);
    assert_relative_eq!(t1.copilot, t0.desired, max_relative = 1e-14);
    assert_eq!(t0.other, 0.0);
}

#[test]
fn silent_interferers_leave_only_self_leakage() {
    let mut m = Micro::new(vec![vec![0.9, 0.4, 0.7], vec![0.2, 0.8, 0.5]], vec![0, 0], vec![0, 1, 0], 2);
    m.noise_p = 0.5;
    let mut dep = m.build();
    dep.powers.ul = vec![1.5, 0.0, 0.0];
    let t = mrc_terms(&dep, 0, 0, CfVariant::Consistent).unwrap();
    assert_eq!(t.copilot, 0.0);
    assert_eq!(t.other, 0.0);
    let s = &dep.stats;
    let self_leak = 1.5 * 2.0 * (0..2).map(|m| s.beta[(m, 0)].powi(2) * s.eta[(m, 0)]).sum::<f64>();
    assert_relative_eq!(t.leakage, self_leak, max_relative = 1e-14);
}

#[test]
fn zf_with_perfect_training_has_no_leakage() {
    let mut m = Micro::new(vec![vec![0.9, 0.4, 0.7], vec![0.2, 0.8, 0.5]], vec![0, 0], vec![0, 1, 2], 2);
    m.noise_p = 0.0;
    m.noise = 0.1;
    let dep = m.build();
    let s = &dep.stats;
    for k in 0..3 {
        let t = zf_terms(&dep, k, 0, CfVariant::Consistent).unwrap();
        assert!(t.leakage < 1e-14 * t.desired, "leakage {}", t.leakage);
        let phi_theta = 2.0 * (s.beta[(0, k)].powi(2) + s.beta[(1, k)].powi(2));
        // Four receive dimensions, three served UEs.
        assert_relative_eq!(t.desired, 2.0 / 4.0 * phi_theta, max_relative = 1e-14);
        assert_eq!(t.noise, 0.1);
    }
}

#[test]
fn zf_with_as_many_ues_as_dimensions_keeps_one_over_dim() {
    let dep = Micro::new(vec![vec![0.9, 0.4], vec![0.2, 0.8]], vec![0, 0], vec![0, 1], 1).build();
    let s = &dep.stats;
    let t = zf_terms(&dep, 1, 0, CfVariant::Consistent).unwrap();
    let phi_theta = s.beta[(0, 1)].powi(2) + s.beta[(1, 1)].powi(2);
    assert_relative_eq!(t.desired, phi_theta / 2.0, max_relative = 1e-14);
}

#[test]
fn zf_closed_form_rejects_overloaded_units() {
    let dep = Micro::new(vec![vec![0.9, 0.4, 0.3]], vec![0], vec![0, 1, 2], 2).build();
    let err = rate_zf_closed_form(&dep, &LsfdWeights::uniform(&dep.plan), CfVariant::Consistent).unwrap_err();
    assert!(matches!(err, Error::Dimension { seu: 0, .. }), "{err}");
}

#[test]
fn doubling_the_draw_count_keeps_the_first_draws() {
    let dep = Micro::new(vec![vec![0.9, 0.4], vec![0.2, 0.8]], vec![0, 1], vec![0, 0], 2).build();
    let mu = LsfdWeights::uniform(&dep.plan);
    let short = per_draw_rates(&dep, Receiver::Mrc, &mu, 0..50, 41, SinrForm::PerSeu).unwrap();
    let long = per_draw_rates(&dep, Receiver::Mrc, &mu, 0..100, 41, SinrForm::PerSeu).unwrap();
    assert_eq!(short[..], long[..50]);
    let tail = per_draw_rates(&dep, Receiver::Mrc, &mu, 50..100, 41, SinrForm::PerSeu).unwrap();
    assert_eq!(tail[..], long[50..]);
    let again = rate_monte_carlo(&dep, Receiver::Mrc, &mu, 100, 41, SinrForm::PerSeu).unwrap();
    let mean0 = long.iter().map(|r| r[0]).sum::<f64>() / 100.0;
    assert_relative_eq!(again.mean[0], mean0, max_relative = 1e-13);
}

#[test]
fn standard_error_shrinks_with_the_square_root_of_draws() {
    let dep = Micro::new(vec![vec![0.9, 0.4], vec![0.2, 0.8]], vec![0, 0], vec![0, 1], 2).build();
    let mu = LsfdWeights::uniform(&dep.plan);
    let small = rate_monte_carlo(&dep, Receiver::Mrc, &mu, 1_000, 42, SinrForm::PerSeu).unwrap();
    let large = rate_monte_carlo(&dep, Receiver::Mrc, &mu, 10_000, 42, SinrForm::PerSeu).unwrap();
    for k in 0..2 {
        let ratio = small.std_err[k] / large.std_err[k];
        assert!((ratio / 10f64.sqrt() - 1.0).abs() < 0.15, "UE {k}: ratio {ratio}");
    }
}

#[test]
fn matched_gamma_reproduces_two_moments_of_the_weighted_sum() {
    let weights = [0.7, 0.05, 1.3, 0.2];
    let n = 3;
    let gamma = gamma_match(weights, n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let trials = 200_000;
    let (mut m1, mut m2) = (0.0, 0.0);
    for _ in 0..trials {
        let x: f64 = weights
            .iter()
            .map(|w| w * (0..n).map(|_| complex_normal(&mut rng, 1.0).norm_sqr()).sum::<f64>())
            .sum();
        m1 += x;
        m2 += x * x;
    }
    assert_relative_eq!(m1 / trials as f64, gamma.mean(), max_relative = 0.01);
    assert_relative_eq!(m2 / trials as f64, gamma.second_moment(), max_relative = 0.01);
}

fn hardened(pilot_of: Vec<usize>) -> Deployment {
    let mut m = Micro::new(vec![vec![0.9, 0.4, 0.6], vec![0.3, 0.8, 0.5]], vec![0, 0], pilot_of, 64);
    m.noise = 5.0;
    m.noise_p = 0.5;
    m.build()
}

fn cf_and_mc(dep: &Deployment, rx: Receiver) -> (Vec<f64>, Vec<f64>) {
    let mu = lsfd_weights(dep, rx, 500, 44).unwrap();
    let cf = rate_closed_form(dep, rx, &mu, CfVariant::Consistent).unwrap();
    let mc = rate_monte_carlo(dep, rx, &mu, 2_000, 44, SinrForm::PerSeu).unwrap();
    (cf, mc.mean)
}

#[test]
fn closed_form_tracks_monte_carlo_under_channel_hardening() {
    // With many antennas the combiner outputs concentrate around their
    // means and the two evaluations converge.
    for pilot_of in [vec![0, 1, 2], vec![0, 1, 0]] {
        let dep = hardened(pilot_of.clone());
        let receivers: &[Receiver] = if pilot_of == [0, 1, 2] { &Receiver::ALL } else { &[Receiver::Mrc] };
        for &rx in receivers {
            let (cf, mc) = cf_and_mc(&dep, rx);
            for k in 0..3 {
                assert_relative_eq!(cf[k], mc[k], max_relative = 0.03);
            }
        }
    }
}

#[test]
fn zf_closed_form_is_optimistic_for_contaminated_pairs() {
    // Co-pilot estimates at one AP are parallel, so ZF can only separate
    // them through the differing gain ratios across APs. The closed form
    // treats the estimate columns as independent and overstates the rate.
    let dep = hardened(vec![0, 1, 0]);
    let (cf, mc) = cf_and_mc(&dep, Receiver::Zf);
    for k in [0, 2] {
        assert!(cf[k] > 1.5 * mc[k], "UE {k}: cf {} mc {}", cf[k], mc[k]);
    }
    assert_relative_eq!(cf[1], mc[1], max_relative = 0.03);
}

#[test]
fn combiner_moments_are_mrc_only() {
    let dep = single_link(2);
    assert!(matches!(mrc_combiner_moments(&dep, Receiver::Zf), Err(Error::Unsupported(_))));
    let m = mrc_combiner_moments(&dep, Receiver::Mrc).unwrap();
    assert_relative_eq!(m.mean[0][(0, 0)], 2.0 * 0.3, max_relative = 1e-14);
}

#[test]
fn report_csv_has_the_documented_columns() {
    let report = RateReport {
        per_ue_rate_mc: vec![1.5, 2.25],
        per_ue_rate_cf: vec![1.25, 2.0],
        receiver: Receiver::Zf,
        draw_count: 10,
        seed: 7,
        config_fingerprint: "x".into(),
    };
    let mut buf = Vec::new();
    RateReport::write_csv(&[report], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("ue_index,rate_mc,rate_cf,receiver,draws,seed"));
    assert_eq!(lines.next(), Some("0,1.500000000000e0,1.250000000000e0,zf,10,7"));
    assert_eq!(lines.count(), 1);
}

/// Evaluates the closed-form SINR expression with every expectation replaced
/// by its sample mean over `draws` channel draws, next to the ergodic rate.
fn sampled_expectation_rates(dep: &Deployment, mu: &LsfdWeights, draws: usize) -> (Vec<f64>, Vec<f64>) {
    use cellfree::combining::{mrc_combiners, project};
    use cellfree::rates::instantaneous_sinr;
    use cellfree::rng::{stream, Stream};
    use num_complex::Complex64;

    let (k_count, l_count) = (dep.num_ues(), dep.num_seus());
    let mut desired = vec![vec![Complex64::default(); l_count]; k_count];
    let mut power = vec![vec![vec![0.0; k_count]; l_count]; k_count];
    let mut leak = vec![vec![vec![0.0; k_count]; l_count]; k_count];
    let mut wn = vec![vec![0.0; l_count]; k_count];
    let mut ergodic = vec![0.0; k_count];
    for d in 0..draws {
        let draw = dep.draw(&mut stream(45, Stream::RateDraws, d as u64));
        let proj = project(&mrc_combiners(&draw), &draw, dep.signal);
        for (k, s) in instantaneous_sinr(dep, &proj, mu, SinrForm::PerSeu).into_iter().enumerate() {
            ergodic[k] += (1.0 + s).log2();
        }
        for k in 0..k_count {
            for l in 0..l_count {
                desired[k][l] += proj.est[l][(k, k)];
                wn[k][l] += proj.wnorm2[l][k];
                for i in 0..k_count {
                    power[k][l][i] += proj.est[l][(k, i)].norm_sqr();
                    leak[k][l][i] += proj.err[l][(k, i)].norm_sqr();
                }
            }
        }
    }
    let n = draws as f64;
    let rho = &dep.powers.ul;
    let expectation = (0..k_count)
        .map(|k| {
            let (mut num, mut den) = (0.0, 0.0);
            for l in dep.plan.serving_seus(k) {
                let a = mu.mu[k][l].norm_sqr();
                num += a * rho[k] * (desired[k][l] / n).norm_sqr();
                let mut d = dep.powers.noise_ul[l] * wn[k][l] / n;
                for i in 0..k_count {
                    if i != k {
                        d += rho[i] * power[k][l][i] / n;
                    }
                    d += rho[i] * leak[k][l][i] / n;
                }
                den += a * d;
            }
            (1.0 + num / den).log2()
        })
        .collect();
    (expectation, ergodic.iter().map(|r| r / n).collect())
}

#[test]
fn mrc_closed_form_is_the_ratio_of_expectations() {
    // The closed form evaluates log2(1 + E[signal] / E[interference]); the
    // Monte Carlo rate is E[log2(1 + signal / interference)]. Estimating
    // each expectation from the same draws reproduces the closed form,
    // leaving the gap to the ergodic rate to the order of log and mean.
    let mut cfg = cellfree::SimConfig::desk();
    cfg.antennas_per_ap = 4;
    let dep = Deployment::generate(&cfg, 3, Default::default()).unwrap();
    let mu = lsfd_weights(&dep, Receiver::Mrc, 1000, 45).unwrap();
    let cf = rate_closed_form(&dep, Receiver::Mrc, &mu, CfVariant::Consistent).unwrap();
    let (expectation, ergodic) = sampled_expectation_rates(&dep, &mu, 4000);
    let mut ergodic_gap = 0.0f64;
    for k in 0..dep.num_ues() {
        assert_relative_eq!(cf[k], expectation[k], max_relative = 0.02);
        ergodic_gap = ergodic_gap.max((ergodic[k] - cf[k]).abs() / ergodic[k]);
    }
    assert!(ergodic_gap > 0.05, "ergodic gap {ergodic_gap}");
}

#[test]
fn noiseless_single_ue_zf_draws_hit_the_cap() {
    let mut m = Micro::new(vec![vec![0.3], vec![0.7]], vec![0, 0], vec![0], 2);
    m.noise = 0.0;
    m.noise_p = 0.0;
    let dep = m.build();
    let mu = LsfdWeights::uniform(&dep.plan);
    let mc = rate_monte_carlo(&dep, Receiver::Zf, &mu, 20, 46, SinrForm::PerSeu).unwrap();
    assert_relative_eq!(mc.mean[0], (1.0 + SINR_CAP).log2(), max_relative = 1e-15);
}
