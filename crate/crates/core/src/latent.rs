//! Mean-latent estimation and the soft-update mean latent state.
//!
//! Training keeps two 512-dim codes: a fixed `target` and an `online` code
//! that contracts toward it by a factor `tau` every iteration,
//!
//!   online <- tau * online + (1 - tau) * target .
//!
//! Once the two codes agree within a tolerance the target is resampled from
//! a fresh batch of mapped latents, so the code the fidelity loss pulls
//! toward keeps fluctuating inside the generator's style distribution
//! instead of freezing at one static mean. With `tau = 0` the online code
//! equals the target after every update (the static-mean limit, except that
//! the tolerance rule then re-draws the target whenever they coincide).
//!
//! The state stores the difference `delta = online - target` rather than the
//! online code itself: the update then reduces to `delta <- tau * delta`,
//! one multiply per coordinate, which keeps the geometric contraction
//! accurate to a few ulps at any step count. Storing `online` absolutely
//! would lose all relative accuracy as soon as the distance falls near the
//! rounding floor of the target's own coordinates.

use alloc::vec::Vec;

#[allow(unused_imports)] // sqrt/powi are trait methods in no_std builds
use num_traits::Float;

use crate::error::reject;
use crate::generator::LATENT_DIM;
use crate::rng::{derive_seed, normal_vec, stream_rng, Stream};
use crate::Result;

/// Soft-update mean latent state. A plain value object: updates return new
/// states, nothing is mutated in place.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanLatentState {
    /// The target code `w_t`.
    pub target: Vec<f64>,
    /// `online - target`; the online code is `target + delta`.
    pub delta: Vec<f64>,
    /// Contraction factor per update, in [0, 1).
    pub tau: f64,
    /// L2 distance below which the target is considered reached.
    pub tolerance: f64,
    /// Sample count used for (re)estimating targets.
    pub sample_count: usize,
    /// Base seed for target resampling.
    pub rng_seed: u64,
    /// Number of resamples performed so far (also the seed counter).
    pub resamples: u64,
}

impl MeanLatentState {
    /// Sample both codes from the mapper (independent draws).
    pub fn init<M>(
        mut mapping: M,
        sample_count: usize,
        tau: f64,
        tolerance: f64,
        seed: u64,
    ) -> Result<MeanLatentState>
    where
        M: FnMut(&[Vec<f64>]) -> Vec<Vec<f64>>,
    {
        if !(0.0..1.0).contains(&tau) {
            return reject("tau must lie in [0, 1)");
        }
        if tolerance <= 0.0 {
            return reject("tolerance must be positive");
        }
        let online = estimate_mean_latent(
            &mut mapping,
            sample_count,
            derive_seed(seed, Stream::Resample, u64::MAX),
        )?;
        let target = estimate_mean_latent(
            &mut mapping,
            sample_count,
            derive_seed(seed, Stream::Resample, 0),
        )?;
        Ok(MeanLatentState::from_codes(
            online,
            target,
            tau,
            tolerance,
            sample_count,
            seed,
            1,
        ))
    }

    /// Build a state from explicit online/target codes.
    pub fn from_codes(
        online: Vec<f64>,
        target: Vec<f64>,
        tau: f64,
        tolerance: f64,
        sample_count: usize,
        rng_seed: u64,
        resamples: u64,
    ) -> MeanLatentState {
        assert_eq!(online.len(), LATENT_DIM);
        assert_eq!(target.len(), LATENT_DIM);
        let delta = online.iter().zip(&target).map(|(o, t)| o - t).collect();
        MeanLatentState {
            target,
            delta,
            tau,
            tolerance,
            sample_count,
            rng_seed,
            resamples,
        }
    }

    /// The online code `target + delta`.
    pub fn online(&self) -> Vec<f64> {
        self.target.iter().zip(&self.delta).map(|(t, d)| t + d).collect()
    }

    /// L2 distance between the online and target codes.
    pub fn distance(&self) -> f64 {
        self.delta.iter().map(|d| d * d).sum::<f64>().sqrt()
    }
}

/// Arithmetic mean of `mapping` over `n` standard-normal latent draws.
///
/// The mapper is called on batches for efficiency; the draw sequence and
/// therefore the result depend only on `(n, seed)`.
pub fn estimate_mean_latent<M>(mut mapping: M, n: usize, seed: u64) -> Result<Vec<f64>>
where
    M: FnMut(&[Vec<f64>]) -> Vec<Vec<f64>>,
{
    if n == 0 {
        return reject("mean latent estimation needs at least one sample");
    }
    let mut rng = stream_rng(seed, Stream::LatentSamples, 0);
    let mut acc = alloc::vec![0.0f64; LATENT_DIM];
    let mut remaining = n;
    while remaining > 0 {
        let batch = remaining.min(256);
        let zs: Vec<Vec<f64>> = (0..batch).map(|_| normal_vec(&mut rng, LATENT_DIM)).collect();
        let ws = mapping(&zs);
        assert_eq!(ws.len(), batch, "mapper must preserve the batch size");
        for w in &ws {
            assert_eq!(w.len(), LATENT_DIM, "mapper must return 512-dim vectors");
            for (a, v) in acc.iter_mut().zip(w) {
                *a += v;
            }
        }
        remaining -= batch;
    }
    for a in &mut acc {
        *a /= n as f64;
    }
    Ok(acc)
}

/// One soft update: the online code moves toward the target by the factor
/// `tau` (`delta <- tau * delta`); the target is untouched.
pub fn soft_update(state: &MeanLatentState) -> MeanLatentState {
    let delta = state.delta.iter().map(|d| state.tau * d).collect();
    MeanLatentState {
        delta,
        ..state.clone()
    }
}

/// Resample the target when the online code has reached it.
///
/// `resampler` receives a derived seed and must return the fresh target
/// (typically [`estimate_mean_latent`] over the generator's mapper). The
/// online code is never touched. Returns the new state and whether a
/// resample happened.
pub fn maybe_resample<F>(state: &MeanLatentState, resampler: F) -> (MeanLatentState, bool)
where
    F: FnOnce(u64) -> Vec<f64>,
{
    if state.distance() > state.tolerance {
        return (state.clone(), false);
    }
    let seed = derive_seed(state.rng_seed, Stream::Resample, state.resamples);
    let target = resampler(seed);
    assert_eq!(target.len(), LATENT_DIM, "resampler must return a 512-dim vector");
    let online = state.online();
    let delta = online.iter().zip(&target).map(|(o, t)| o - t).collect();
    (
        MeanLatentState {
            target,
            delta,
            resamples: state.resamples + 1,
            ..state.clone()
        },
        true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_mapping(zs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        zs.to_vec()
    }

    fn state(tau: f64, tolerance: f64) -> MeanLatentState {
        let mut rng = stream_rng(5, Stream::LatentSamples, 7);
        MeanLatentState::from_codes(
            normal_vec(&mut rng, LATENT_DIM),
            normal_vec(&mut rng, LATENT_DIM),
            tau,
            tolerance,
            16,
            5,
            0,
        )
    }

    #[test]
    fn constant_mapping_returns_the_constant() {
        let c: Vec<f64> = (0..LATENT_DIM).map(|i| i as f64 * 0.01).collect();
        let mean = estimate_mean_latent(|zs| alloc::vec![c.clone(); zs.len()], 37, 3).unwrap();
        for (m, v) in mean.iter().zip(&c) {
            // mean of n identical values; exact up to the final accumulate/divide rounding
            assert!((m - v).abs() <= 1e-14 * v.abs().max(1.0), "{m} vs {v}");
        }
    }

    #[test]
    fn single_sample_returns_that_sample() {
        let mean = estimate_mean_latent(identity_mapping, 1, 9).unwrap();
        let mut rng = stream_rng(9, Stream::LatentSamples, 0);
        let z: Vec<f64> = normal_vec(&mut rng, LATENT_DIM);
        assert_eq!(mean, z);
        assert!(estimate_mean_latent(identity_mapping, 0, 9).is_err());
    }

    #[test]
    fn identity_mean_obeys_law_of_large_numbers() {
        let n = 10_000;
        let mean = estimate_mean_latent(identity_mapping, n, 11).unwrap();
        let rms = (mean.iter().map(|v| v * v).sum::<f64>() / LATENT_DIM as f64).sqrt();
        assert!(rms <= 3.0 / (n as f64).sqrt(), "rms {rms}");
    }

    #[test]
    fn estimation_is_order_invariant_up_to_rounding() {
        // Same sample multiset, different accumulation order.
        let a = estimate_mean_latent(identity_mapping, 1000, 13).unwrap();
        let mut rng = stream_rng(13, Stream::LatentSamples, 0);
        let mut acc = alloc::vec![0.0f64; LATENT_DIM];
        let mut samples: Vec<Vec<f64>> =
            (0..1000).map(|_| normal_vec(&mut rng, LATENT_DIM)).collect();
        samples.reverse();
        for s in &samples {
            for (x, v) in acc.iter_mut().zip(s) {
                *x += v;
            }
        }
        for x in &mut acc {
            *x /= 1000.0;
        }
        for (x, y) in a.iter().zip(&acc) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_update_contracts_and_preserves_target() {
        let s0 = state(0.5, 1e-9);
        let s1 = soft_update(&s0);
        assert_eq!(s1.target, s0.target);
        // scalar analogue: online 0, target 1, tau 0.5 -> 0.5
        let toy = MeanLatentState::from_codes(
            alloc::vec![0.0; LATENT_DIM],
            alloc::vec![1.0; LATENT_DIM],
            0.5,
            1e-9,
            16,
            5,
            0,
        );
        let t1 = soft_update(&toy);
        assert!(t1.online().iter().all(|v| *v == 0.5));

        // per-coordinate contraction by exactly tau
        for (d1, d0) in s1.delta.iter().zip(&s0.delta) {
            assert_eq!(*d1, 0.5 * d0);
        }
    }

    #[test]
    fn geometric_contraction_over_many_steps() {
        for &tau in &[0.0f64, 0.5, 0.9, 0.99] {
            let mut s = state(tau, 1e-300);
            let d0 = s.distance();
            for k in 1..=200usize {
                s = soft_update(&s);
                let expected = num_traits::Float::powi(tau, k as i32) * d0;
                let got = s.distance();
                if expected > 0.0 {
                    assert!(
                        ((got - expected) / expected).abs() < 1e-6,
                        "tau {tau} k {k}: {got} vs {expected}"
                    );
                } else {
                    assert_eq!(got, 0.0, "tau 0 must pin online to target");
                }
            }
        }
    }

    #[test]
    fn tau_zero_is_the_static_limit() {
        let s = state(0.0, 1e-9);
        let s1 = soft_update(&s);
        assert_eq!(s1.online(), s1.target);
    }

    #[test]
    fn resample_triggers_only_on_convergence_and_keeps_online() {
        let far = state(0.9, 1e-3);
        let (same, fired) = maybe_resample(&far, |_| alloc::vec![0.0; LATENT_DIM]);
        assert!(!fired);
        assert_eq!(same, far);

        let mut converged = far.clone();
        converged.delta = alloc::vec![0.0; LATENT_DIM];
        let (next, fired) = maybe_resample(&converged, |seed| {
            let mut rng = stream_rng(seed, Stream::LatentSamples, 0);
            normal_vec(&mut rng, LATENT_DIM)
        });
        assert!(fired);
        // Re-basing delta onto the new target costs at most one rounding per
        // coordinate; the online code itself must not be reset or shifted.
        for (a, b) in next.online().iter().zip(converged.online()) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0), "online moved: {a} vs {b}");
        }
        assert_ne!(next.target, converged.target);
        assert_eq!(next.resamples, converged.resamples + 1);
    }

    #[test]
    fn first_resample_happens_at_the_analytic_step() {
        let tau = 0.9f64;
        let tol = 1e-3;
        let mut s = state(tau, tol);
        // normalize the starting distance to exactly 1
        let d0 = s.distance();
        for d in &mut s.delta {
            *d /= d0;
        }
        let d0 = s.distance();
        let predicted = (1..)
            .find(|k| num_traits::Float::powi(tau, *k) * d0 <= tol)
            .unwrap() as usize;

        let mut fired_at = None;
        for step in 1..=1000usize {
            s = soft_update(&s);
            let (next, fired) = maybe_resample(&s, |seed| {
                let mut rng = stream_rng(seed, Stream::LatentSamples, 0);
                normal_vec(&mut rng, LATENT_DIM)
            });
            s = next;
            if fired {
                fired_at = Some(step);
                break;
            }
        }
        assert_eq!(fired_at, Some(predicted));
    }
}
