//! Gumbel-Softmax categorical sampling.
//!
//! The hard sampler perturbs log-probabilities with Gumbel noise and takes the
//! argmax; the relaxed sampler replaces the argmax with a temperature-scaled
//! softmax. A hard/relaxed pair drawn from the same noise forms a
//! straight-through estimator: the forward value is the argmax of the relaxed
//! vector and the backward pass uses the relaxed Jacobian.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::Stream;

/// One Gumbel(0, 1) variate per class: `g = -ln(-ln U)`.
pub fn sample_gumbel(k: usize, rng: &mut Stream) -> Vec<f64> {
    (0..k)
        .map(|_| {
            let u: f64 = rng.random::<f64>().clamp(1e-300, 1.0 - 1e-16);
            -(-u.ln()).ln()
        })
        .collect()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Hard categorical sample: `argmax_k(log p_k + g_k)`.
///
/// Log-probabilities must be finite; represent impossible classes with a very
/// negative value such as `-1e30`.
pub fn gumbel_sample_hard(log_probs: &[f64], rng: &mut Stream) -> usize {
    let noise = sample_gumbel(log_probs.len(), rng);
    gumbel_hard_with_noise(log_probs, &noise)
}

/// Deterministic part of [`gumbel_sample_hard`] given the noise vector.
pub fn gumbel_hard_with_noise(log_probs: &[f64], noise: &[f64]) -> usize {
    debug_assert_eq!(log_probs.len(), noise.len());
    let perturbed: Vec<f64> = log_probs.iter().zip(noise).map(|(lp, g)| lp + g).collect();
    argmax(&perturbed)
}

/// Relaxed sample `P̃_k = softmax((log p_k + g_k) / τ)`.
pub fn gumbel_softmax_relax(log_probs: &[f64], tau: f64, rng: &mut Stream) -> Result<Vec<f64>> {
    if tau <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let noise = sample_gumbel(log_probs.len(), rng);
    Ok(gumbel_relax_with_noise(log_probs, tau, &noise))
}

/// Deterministic part of [`gumbel_softmax_relax`] given the noise vector.
pub fn gumbel_relax_with_noise(log_probs: &[f64], tau: f64, noise: &[f64]) -> Vec<f64> {
    debug_assert!(tau > 0.0);
    debug_assert_eq!(log_probs.len(), noise.len());
    let scaled: Vec<f64> = log_probs
        .iter()
        .zip(noise)
        .map(|(lp, g)| (lp + g) / tau)
        .collect();
    softmax(&scaled)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Jacobian of the relaxed sample with respect to the log-probabilities at
/// fixed noise: `∂P̃_k/∂ℓ_j = P̃_k (δ_kj - P̃_j) / τ`.
pub fn gumbel_relax_jacobian(log_probs: &[f64], tau: f64, noise: &[f64]) -> Vec<Vec<f64>> {
    let p = gumbel_relax_with_noise(log_probs, tau, noise);
    let k = p.len();
    let mut jac = vec![vec![0.0; k]; k];
    for (row, jr) in jac.iter_mut().enumerate() {
        for (col, v) in jr.iter_mut().enumerate() {
            let delta = if row == col { 1.0 } else { 0.0 };
            *v = p[row] * (delta - p[col]) / tau;
        }
    }
    jac
}

/// A hard sample paired with its relaxed vector from the same noise draw.
///
/// `hard` always equals the argmax of `relaxed`, for any temperature.
#[derive(Debug, Clone)]
pub struct StraightThroughDraw {
    pub hard: usize,
    pub relaxed: Vec<f64>,
    pub noise: Vec<f64>,
}

pub fn sample_straight_through(
    log_probs: &[f64],
    tau: f64,
    rng: &mut Stream,
) -> Result<StraightThroughDraw> {
    if tau <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let noise = sample_gumbel(log_probs.len(), rng);
    let hard = gumbel_hard_with_noise(log_probs, &noise);
    let relaxed = gumbel_relax_with_noise(log_probs, tau, &noise);
    Ok(StraightThroughDraw {
        hard,
        relaxed,
        noise,
    })
}

/// Numerically stable `log(sigmoid(x))`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    // Upper critical values of chi-square at alpha = 0.01, dof 1..=7.
    pub(crate) const CHI2_CRIT_001: [f64; 7] = [
        6.634897, 9.210340, 11.344867, 13.276704, 15.086272, 16.811894, 18.475307,
    ];

    pub(crate) fn chi_square_stat(counts: &[u64], probs: &[f64], n: u64) -> f64 {
        counts
            .iter()
            .zip(probs)
            .map(|(&o, &p)| {
                let e = p * n as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum()
    }

    #[test]
    fn degenerate_distribution_always_picks_support() {
        let log_probs = [0.0, -1e30, -1e30];
        let mut rng = substream(11, 0);
        for _ in 0..10_000 {
            assert_eq!(gumbel_sample_hard(&log_probs, &mut rng), 0);
        }
    }

    // Oracle: Monte-Carlo frequency for a fair coin.
    #[test]
    fn fair_coin_frequency() {
        let log_probs = [0.5f64.ln(), 0.5f64.ln()];
        let mut rng = substream(12, 0);
        let n = 1_000_000;
        let zeros = (0..n)
            .filter(|_| gumbel_sample_hard(&log_probs, &mut rng) == 0)
            .count();
        let freq = zeros as f64 / n as f64;
        assert!((0.49..=0.51).contains(&freq), "freq = {freq}");
    }

    // Oracle: chi-square goodness of fit against the target categorical.
    #[test]
    fn chi_square_accepts_target_distribution() {
        let probs = [0.2, 0.3, 0.5];
        let log_probs: Vec<f64> = probs.iter().map(|p: &f64| p.ln()).collect();
        let mut rng = substream(13, 0);
        let n = 100_000u64;
        let mut counts = [0u64; 3];
        for _ in 0..n {
            counts[gumbel_sample_hard(&log_probs, &mut rng)] += 1;
        }
        let stat = chi_square_stat(&counts, &probs, n);
        assert!(stat < CHI2_CRIT_001[1], "chi2 = {stat}");
    }

    #[test]
    fn relaxed_sample_normalizes() {
        let mut rng = substream(14, 0);
        for _ in 0..100 {
            let k = 2 + (rand::Rng::random::<u32>(&mut rng) % 7) as usize;
            let log_probs: Vec<f64> = (0..k)
                .map(|_| rand::Rng::random::<f64>(&mut rng) * 6.0 - 3.0)
                .collect();
            let p = gumbel_softmax_relax(&log_probs, 1.0, &mut rng).unwrap();
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn low_temperature_matches_hard_sample() {
        let mut rng = substream(15, 0);
        let mut sharp_checked = 0;
        for _ in 0..50 {
            let log_probs: Vec<f64> = (0..5)
                .map(|_| rand::Rng::random::<f64>(&mut rng) * 4.0 - 2.0)
                .collect();
            let noise = sample_gumbel(5, &mut rng);
            let relaxed = gumbel_relax_with_noise(&log_probs, 0.01, &noise);
            let hard = gumbel_hard_with_noise(&log_probs, &noise);
            let max_idx = relaxed
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(max_idx, hard);

            // Sharpness requires a generic gap between the top two perturbed
            // logits; near-ties stay soft at any finite temperature.
            let mut perturbed: Vec<f64> =
                log_probs.iter().zip(&noise).map(|(l, g)| l + g).collect();
            perturbed.sort_by(|a, b| b.total_cmp(a));
            if perturbed[0] - perturbed[1] > 0.1 {
                assert!(relaxed[max_idx] > 0.999);
                sharp_checked += 1;
            }
        }
        assert!(sharp_checked > 20);
    }

    // Oracle: central finite differences of the relaxed sample.
    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = substream(16, 0);
        let h = 1e-6;
        for _ in 0..50 {
            let k = 2 + (rand::Rng::random::<u32>(&mut rng) % 7) as usize;
            let log_probs: Vec<f64> = (0..k)
                .map(|_| rand::Rng::random::<f64>(&mut rng) * 4.0 - 2.0)
                .collect();
            let noise = sample_gumbel(k, &mut rng);
            let jac = gumbel_relax_jacobian(&log_probs, 1.0, &noise);

            let mut num = 0.0f64;
            let mut den = 0.0f64;
            for j in 0..k {
                let mut plus = log_probs.clone();
                let mut minus = log_probs.clone();
                plus[j] += h;
                minus[j] -= h;
                let pp = gumbel_relax_with_noise(&plus, 1.0, &noise);
                let pm = gumbel_relax_with_noise(&minus, 1.0, &noise);
                for row in 0..k {
                    let fd = (pp[row] - pm[row]) / (2.0 * h);
                    num += (jac[row][j] - fd).powi(2);
                    den += jac[row][j].powi(2);
                }
            }
            let rel = (num / den.max(1e-300)).sqrt();
            assert!(rel < 1e-4, "relative error {rel}");
        }
    }

    #[test]
    fn annealing_keeps_argmax_and_sharpens() {
        let mut rng = substream(17, 0);
        for _ in 0..100 {
            let k = 2 + (rand::Rng::random::<u32>(&mut rng) % 7) as usize;
            let log_probs: Vec<f64> = (0..k)
                .map(|_| rand::Rng::random::<f64>(&mut rng) * 4.0 - 2.0)
                .collect();
            let noise = sample_gumbel(k, &mut rng);
            let mut last_max = 0.0;
            let mut argmax0 = None;
            for tau in [1.0, 0.5, 0.1, 0.01] {
                let p = gumbel_relax_with_noise(&log_probs, tau, &noise);
                let (idx, &max) = p
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap();
                assert!(max >= last_max - 1e-12);
                last_max = max;
                match argmax0 {
                    None => argmax0 = Some(idx),
                    Some(a) => assert_eq!(a, idx),
                }
            }
        }
    }

    // Straight-through contract: hard value is the argmax of the relaxed
    // vector, and the relaxed Jacobian backs a composite scalar loss whose
    // finite differences agree.
    #[test]
    fn straight_through_composite_gradient() {
        let mut rng = substream(18, 0);
        let weights = [0.3, -1.2, 2.0, 0.7];
        let loss = |p: &[f64]| -> f64 {
            let s: f64 = p.iter().zip(&weights).map(|(a, b)| a * b).sum();
            s * s
        };
        for _ in 0..20 {
            let log_probs: Vec<f64> = (0..4)
                .map(|_| rand::Rng::random::<f64>(&mut rng) * 2.0 - 1.0)
                .collect();
            let draw = sample_straight_through(&log_probs, 1.0, &mut rng).unwrap();
            let max_idx = draw
                .relaxed
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(draw.hard, max_idx);

            let jac = gumbel_relax_jacobian(&log_probs, 1.0, &draw.noise);
            let p = &draw.relaxed;
            let s: f64 = p.iter().zip(&weights).map(|(a, b)| a * b).sum();
            // dL/dlp_j = 2 s * sum_k w_k J[k][j]
            let h = 1e-6;
            for j in 0..4 {
                let an: f64 = 2.0
                    * s
                    * (0..4).map(|k| weights[k] * jac[k][j]).sum::<f64>();
                let mut plus = log_probs.clone();
                let mut minus = log_probs.clone();
                plus[j] += h;
                minus[j] -= h;
                let fd = (loss(&gumbel_relax_with_noise(&plus, 1.0, &draw.noise))
                    - loss(&gumbel_relax_with_noise(&minus, 1.0, &draw.noise)))
                    / (2.0 * h);
                let rel = (an - fd).abs() / fd.abs().max(1e-9);
                assert!(rel < 1e-3, "an {an} fd {fd}");
            }
        }
    }
}
