//! Sample-level Monte Carlo of the receiver's energy detector.
//!
//! For each bit `D`, the receiver sees `N_s` samples
//! `y[i] = a_sr x[i] + D mu a_st a_tr x[i] + n0[i] + n1[i]`, where the ambient
//! signal `x` is circular complex Gaussian with power `P_t`, the noises are
//! circular complex Gaussian with variances `delta0_sq` and `delta1_sq`, and
//! the channel coefficients are real: `a_sr = a_st = sqrt(g)`, `a_tr = sqrt(h)`.
//! The statistic `Z = mean |y[i]|^2` is compared with the midpoint of its two
//! conditional means.
//!
//! Because the coefficients share a phase, the conditional mean under `D = 1`
//! carries the cross term `2 mu g sqrt(h) P_t`, and the ambient signal adds its
//! own fluctuation to `Z`. The closed-form BER in [`SystemParams::ber`] omits
//! both, so the two only agree approximately and only in some regimes.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{stream, SimRng, DETECTOR_STREAM_BASE};
use crate::system::SystemParams;

/// Bits simulated per generator stream.
pub const CHUNK_BITS: usize = 4096;
pub const MIN_BITS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Source-to-tag gain `g`; the source-to-receiver gain is taken equal.
    pub gain: f64,
    /// Supplies `mu`, `n_s`, `p_t`, `h`, `delta0_sq`, `delta1_sq`.
    pub params: SystemParams,
    pub bits: usize,
    pub seed: u64,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        if p.n_s == 0 {
            return Err(Error::InvalidParam {
                key: "n_s",
                reason: "must be a positive integer".into(),
            });
        }
        if self.bits < MIN_BITS {
            return Err(Error::InvalidParam {
                key: "bits",
                reason: format!("need at least {MIN_BITS} trials"),
            });
        }
        if !(p.mu.is_finite() && p.mu >= 0.0) {
            return Err(Error::InvalidParam {
                key: "mu",
                reason: format!("{} must be >= 0", p.mu),
            });
        }
        for (key, v) in [("gain", self.gain), ("h", p.h)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParam {
                    key,
                    reason: format!("{v} must be >= 0"),
                });
            }
        }
        for (key, v) in [
            ("p_t", p.p_t),
            ("delta0_sq", p.delta0_sq),
            ("delta1_sq", p.delta1_sq),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParam {
                    key,
                    reason: format!("{v} must be > 0"),
                });
            }
        }
        Ok(())
    }

    /// Amplitude of the combined path for bit `d`.
    fn path_amplitude(&self, d: bool) -> f64 {
        let g = self.gain.sqrt();
        if d {
            g + self.params.mu * g * self.params.h.sqrt()
        } else {
            g
        }
    }

    /// `E[Z | D = d] = P_t |a_sr + d mu a_st a_tr|^2 + N0 + N1`.
    pub fn conditional_mean(&self, d: bool) -> f64 {
        let c = self.path_amplitude(d);
        self.params.p_t * c * c + self.params.delta0_sq + self.params.delta1_sq
    }

    pub fn threshold(&self) -> f64 {
        0.5 * (self.conditional_mean(false) + self.conditional_mean(true))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorEstimate {
    pub bits: usize,
    pub errors: usize,
    pub ber: f64,
    /// Binomial standard error of `ber`.
    pub stderr: f64,
    /// Trials with `D = 0` and `D = 1`.
    pub counts: [usize; 2],
    /// Empirical mean of `Z` given `D`.
    pub z_mean: [f64; 2],
    /// Empirical (unbiased) variance of `Z` given `D`.
    pub z_var: [f64; 2],
}

#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    errors: usize,
    counts: [usize; 2],
    sum: [f64; 2],
    sum_sq: [f64; 2],
}

fn complex_gaussian(rng: &mut SimRng, variance: f64) -> (f64, f64) {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    (s * re, s * im)
}

fn run_chunk(config: &DetectorConfig, chunk: usize, bits: usize) -> Tally {
    let p = &config.params;
    let mut rng = stream(config.seed, DETECTOR_STREAM_BASE + chunk as u64);
    let amp = [config.path_amplitude(false), config.path_amplitude(true)];
    let threshold = config.threshold();
    let mut tally = Tally::default();
    for _ in 0..bits {
        let d: bool = rng.random();
        let c = amp[usize::from(d)];
        let mut energy = 0.0;
        for _ in 0..p.n_s {
            let (xr, xi) = complex_gaussian(&mut rng, p.p_t);
            let (n0r, n0i) = complex_gaussian(&mut rng, p.delta0_sq);
            let (n1r, n1i) = complex_gaussian(&mut rng, p.delta1_sq);
            let yr = c * xr + n0r + n1r;
            let yi = c * xi + n0i + n1i;
            energy += yr * yr + yi * yi;
        }
        let z = energy / f64::from(p.n_s);
        let decided = z > threshold;
        let k = usize::from(d);
        tally.errors += usize::from(decided != d);
        tally.counts[k] += 1;
        tally.sum[k] += z;
        tally.sum_sq[k] += z * z;
    }
    tally
}

/// Estimates the detector BER from `config.bits` independent trials.
///
/// Bits are split into chunks of [`CHUNK_BITS`], each with its own stream of
/// the seed, and chunks run in parallel; tallies are merged in chunk order
/// so the estimate depends only on the seed.
pub fn detector_ber_mc(config: &DetectorConfig) -> Result<DetectorEstimate> {
    config.validate()?;
    let n_chunks = config.bits.div_ceil(CHUNK_BITS);
    let tallies: Vec<Tally> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let bits = CHUNK_BITS.min(config.bits - c * CHUNK_BITS);
            run_chunk(config, c, bits)
        })
        .collect();
    let total = tallies.iter().fold(Tally::default(), |mut acc, t| {
        acc.errors += t.errors;
        for k in 0..2 {
            acc.counts[k] += t.counts[k];
            acc.sum[k] += t.sum[k];
            acc.sum_sq[k] += t.sum_sq[k];
        }
        acc
    });
    let n = config.bits as f64;
    let ber = total.errors as f64 / n;
    let moments = |k: usize| {
        let m = total.counts[k] as f64;
        if m < 2.0 {
            return (f64::NAN, f64::NAN);
        }
        let mean = total.sum[k] / m;
        let var = (total.sum_sq[k] - m * mean * mean) / (m - 1.0);
        (mean, var.max(0.0))
    };
    let (m0, v0) = moments(0);
    let (m1, v1) = moments(1);
    Ok(DetectorEstimate {
        bits: config.bits,
        errors: total.errors,
        ber,
        stderr: (ber * (1.0 - ber) / n).sqrt(),
        counts: total.counts,
        z_mean: [m0, m1],
        z_var: [v0, v1],
    })
}
