mod common;

use approx::assert_relative_eq;
use cellfree::rng::complex_normal;
use common::Micro;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// beta from an explicit pilot transmission with orthonormal DFT sequences,
/// estimated as `E[g conj(y)] / sqrt(E|y|^2)` where `y` is the received
/// pilot block projected on the UE's sequence.
#[test]
fn beta_matches_a_simulated_pilot_phase() {
    let gains = [0.9, 0.25, 0.4];
    let pilot_of = [0usize, 1, 0];
    let tau = 2;
    let (rho_p, noise_p) = (2.0, 0.3);
    let mut m = Micro::new(vec![gains.to_vec()], vec![0], pilot_of.to_vec(), 1);
    m.rho_p = rho_p;
    m.noise_p = noise_p;
    let dep = m.build();

    let phi = DMatrix::from_fn(tau, tau, |t, s| {
        Complex64::from_polar(1.0 / (tau as f64).sqrt(), 2.0 * PI * (t * s) as f64 / tau as f64)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let trials = 200_000;
    let mut cross = [Complex64::default(); 3];
    let mut power = [0.0; 3];
    for _ in 0..trials {
        let g: Vec<Complex64> = gains.iter().map(|&l| complex_normal(&mut rng, l)).collect();
        // Received 1 x tau pilot block.
        let mut y = DMatrix::<Complex64>::zeros(1, tau);
        for s in 0..tau {
            y[(0, s)] = complex_normal(&mut rng, noise_p);
            for (i, gi) in g.iter().enumerate() {
                y[(0, s)] += gi * phi[(s, pilot_of[i])].conj() * rho_p.sqrt();
            }
        }
        for k in 0..3 {
            let proj: Complex64 = (0..tau).map(|s| y[(0, s)] * phi[(s, pilot_of[k])]).sum();
            cross[k] += g[k] * proj.conj();
            power[k] += proj.norm_sqr();
        }
    }
    for k in 0..3 {
        let n = trials as f64;
        let empirical = (cross[k] / n).re / (power[k] / n).sqrt();
        assert_relative_eq!(empirical, dep.stats.beta[(0, k)], max_relative = 0.02);
    }
}

#[test]
fn drawn_estimates_have_the_predicted_statistics() {
    let mut m = Micro::new(vec![vec![0.8, 0.5], vec![0.3, 1.2]], vec![0, 0], vec![0, 0], 2);
    m.noise_p = 0.4;
    let dep = m.build();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let trials = 50_000;
    let dim = dep.seu_dim(0);
    let mut hh = DMatrix::<Complex64>::zeros(dim, dim);
    let mut g_hhat = DMatrix::<Complex64>::zeros(dim, 2);
    for _ in 0..trials {
        let d = &dep.draw(&mut rng).seus[0];
        for k in 0..2 {
            let h = d.h_hat.column(k);
            if k == 0 {
                hh += h * h.adjoint();
            }
            for r in 0..dim {
                g_hhat[(r, k)] += d.true_g[(r, k)] * d.h_hat[(r, k)].conj();
            }
        }
    }
    let n = trials as f64;
    for r in 0..dim {
        for s in 0..dim {
            let target = if r == s { 1.0 } else { 0.0 };
            assert!((hh[(r, s)] / n - target).norm() < 0.03, "E[hhat hhat^H] ({r},{s})");
        }
        let m_ap = r / dep.antennas;
        for k in 0..2 {
            assert_relative_eq!((g_hhat[(r, k)] / n).re, dep.stats.beta[(m_ap, k)], max_relative = 0.03);
        }
    }
}

#[test]
fn cohort_members_share_the_normalized_observation() {
    let dep = Micro::new(vec![vec![0.8, 0.5, 0.2]], vec![0], vec![0, 1, 0], 3).build();
    let d = &dep.draw(&mut ChaCha8Rng::seed_from_u64(23)).seus[0];
    assert_eq!(d.h_hat.column(0), d.h_hat.column(2));
    assert_ne!(d.h_hat.column(0), d.h_hat.column(1));
}
