//! Monte Carlo oracle: simulate the jump SDE driven by an isotropic
//! alpha-stable process with drift r*b and estimate transition densities by
//! kernel density estimation, independently of the deterministic quadrature
//! pipeline.
//!
//! The process with transition density p-tilde has generator
//! Delta^{alpha/2} + r b . grad, so the Euler scheme steps
//! X_{k+1} = X_k + r b(X_k) h + h^{1/alpha} S_k with fresh standard
//! isotropic stable increments S_k. At r = 0 the scheme is exact at any step
//! size (stable increments convolve to stable increments).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::quad::Estimate;
use crate::stable_kernel::StableParams;

/// Bandwidth rule for [`kde_density`].
#[derive(Clone, Copy, Debug)]
pub struct KdeBandwidth {
    /// Multiplier on the plug-in (Silverman) per-axis bandwidth.
    pub scale: f64,
    /// Fixed per-axis bandwidth overriding the plug-in rule (needed for
    /// degenerate samples with zero spread).
    pub fixed: Option<f64>,
    /// Quantile of |x_i - median_i| defining the reliable radius per axis;
    /// estimates outside it are refused rather than fabricated.
    pub quantile_radius: f64,
    /// Bootstrap replicates for the standard-error field.
    pub bootstrap: usize,
}

impl Default for KdeBandwidth {
    fn default() -> Self {
        KdeBandwidth {
            scale: 1.0,
            fixed: None,
            quantile_radius: 0.99,
            bootstrap: 32,
        }
    }
}

/// Simulation parameters.
#[derive(Clone, Debug)]
pub struct MCConfig {
    pub n_paths: usize,
    /// Step size; the horizon is partitioned into round(t/h) equal steps.
    pub h: f64,
    pub t: f64,
    pub seed: u64,
    /// |b| is clipped at this value near the singular set.
    pub drift_cap: f64,
    pub bandwidth: KdeBandwidth,
}

impl MCConfig {
    pub fn new(n_paths: usize, t: f64, seed: u64) -> Self {
        MCConfig {
            n_paths,
            h: t / 512.0,
            t,
            seed,
            drift_cap: 1e3,
            bandwidth: KdeBandwidth::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || !(self.h > 0.0) || !(self.t >= self.h) || !(self.drift_cap > 0.0)
        {
            return Err(Error::Config(
                "MC config requires n_paths >= 1, 0 < h <= t, drift_cap > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Positive beta-stable sample with Laplace transform e^{-lambda^beta}
/// (Kanter's representation): A = (a(U)/W)^{(1-beta)/beta} with U uniform on
/// (0, pi), W standard exponential, and
/// a(u) = sin(beta u)^{beta/(1-beta)} sin((1-beta) u) / sin(u)^{1/(1-beta)}.
pub fn sample_positive_stable<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> f64 {
    assert!(beta > 0.0 && beta < 1.0, "beta must be in (0,1)");
    let u = std::f64::consts::PI * rng.gen_range(f64::EPSILON..1.0);
    let w: f64 = -(1.0f64 - rng.gen::<f64>()).ln();
    let ln_a = beta / (1.0 - beta) * (beta * u).sin().ln() + ((1.0 - beta) * u).sin().ln()
        - (u.sin().ln()) / (1.0 - beta);
    ((1.0 - beta) / beta * (ln_a - w.ln())).exp()
}

/// Standard isotropic alpha-stable vector with characteristic function
/// e^{-|xi|^alpha}, by Gaussian subordination X = sqrt(2 A) Z with A a
/// positive (alpha/2)-stable variable; alpha = 2 reduces to sqrt(2) Z.
pub fn sample_isotropic_stable<R: Rng + ?Sized>(alpha: f64, dim: usize, rng: &mut R) -> Vec<f64> {
    assert!(alpha > 0.0 && alpha <= 2.0, "alpha must be in (0,2]");
    let s = if alpha == 2.0 {
        std::f64::consts::SQRT_2
    } else {
        (2.0 * sample_positive_stable(0.5 * alpha, rng)).sqrt()
    };
    (0..dim)
        .map(|_| s * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Euler endpoints of the SDE with generator Delta^{alpha/2} + r b . grad:
/// X_{k+1} = X_k + r b_cap(X_k) h + h^{1/alpha} S_k. Each path draws from its
/// own counter-based RNG stream, so the result is independent of how paths
/// are partitioned across workers.
pub fn simulate_endpoints(
    params: &StableParams,
    drift: &DriftSpec,
    x0: &[f64],
    cfg: &MCConfig,
) -> Result<Vec<Vec<f64>>> {
    params.require_series_range()?;
    cfg.validate()?;
    let d = params.dim();
    if x0.len() != d || drift.dim != d {
        return Err(Error::DimMismatch {
            got: x0.len().min(drift.dim),
            expected: d,
        });
    }
    let n_steps = (cfg.t / cfg.h).round().max(1.0) as usize;
    let h = cfg.t / n_steps as f64;
    let jump = h.powf(1.0 / params.alpha());
    let alpha = params.alpha();
    let r = drift.r;
    Ok((0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(path + 1);
            let mut x = x0.to_vec();
            for _ in 0..n_steps {
                if r != 0.0 {
                    let mut b = drift.eval(&x);
                    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if nb > cfg.drift_cap {
                        let s = cfg.drift_cap / nb;
                        for v in &mut b {
                            *v *= s;
                        }
                    }
                    for (xi, bi) in x.iter_mut().zip(&b) {
                        *xi += r * bi * h;
                    }
                }
                let s = sample_isotropic_stable(alpha, d, &mut rng);
                for (xi, si) in x.iter_mut().zip(&s) {
                    *xi += jump * si;
                }
            }
            x
        })
        .collect())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

/// Product-Gaussian-kernel density estimate at y with a per-axis plug-in
/// bandwidth (robust scale times the Silverman factor) and a bootstrap
/// standard error. Heavy tails are respected twice: the scale uses
/// min(standard deviation, IQR/1.349), and targets outside the configured
/// quantile radius of the sample are refused.
pub fn kde_density(samples: &[Vec<f64>], y: &[f64], bw: &KdeBandwidth) -> Result<Estimate> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = samples.len();
    let d = samples[0].len();
    if y.len() != d {
        return Err(Error::DimMismatch {
            got: y.len(),
            expected: d,
        });
    }
    let mut h = vec![0.0f64; d];
    let silverman = (4.0 / ((d as f64 + 2.0) * n as f64)).powf(1.0 / (d as f64 + 4.0));
    for i in 0..d {
        let mut col: Vec<f64> = samples.iter().map(|s| s[i]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = quantile(&col, 0.5);
        let mut dev: Vec<f64> = col.iter().map(|v| (v - med).abs()).collect();
        dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let radius = quantile(&dev, bw.quantile_radius);
        if (y[i] - med).abs() > radius {
            return Err(Error::Config(format!(
                "KDE target coordinate {i} ({:.3}) outside the reliable radius {radius:.3} of the sample",
                y[i]
            )));
        }
        h[i] = match bw.fixed {
            Some(f) => f,
            None => {
                let mean = col.iter().sum::<f64>() / n as f64;
                let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (n - 1).max(1) as f64)
                    .sqrt();
                let iqr = quantile(&col, 0.75) - quantile(&col, 0.25);
                let scale = if iqr > 0.0 {
                    sd.min(iqr / 1.349)
                } else {
                    sd
                };
                if scale == 0.0 {
                    return Err(Error::Config(
                        "degenerate sample: zero spread and no fixed bandwidth".into(),
                    ));
                }
                bw.scale * scale * silverman
            }
        };
    }
    let norm: f64 = h
        .iter()
        .map(|hi| 1.0 / (hi * (2.0 * std::f64::consts::PI).sqrt()))
        .product();
    let kernels: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let q: f64 = s
                .iter()
                .zip(y)
                .zip(&h)
                .map(|((si, yi), hi)| {
                    let u = (yi - si) / hi;
                    u * u
                })
                .sum();
            norm * (-0.5 * q).exp()
        })
        .collect();
    let value = kernels.iter().sum::<f64>() / n as f64;
    let error = if bw.bootstrap == 0 {
        let var = kernels.iter().map(|k| (k - value) * (k - value)).sum::<f64>()
            / (n - 1).max(1) as f64;
        (var / n as f64).sqrt()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6b64655f73656564);
        let means: Vec<f64> = (0..bw.bootstrap)
            .map(|_| {
                let mut acc = 0.0;
                for _ in 0..n {
                    acc += kernels[rng.gen_range(0..n)];
                }
                acc / n as f64
            })
            .collect();
        let m = means.iter().sum::<f64>() / bw.bootstrap as f64;
        (means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (bw.bootstrap - 1).max(1) as f64)
            .sqrt()
    };
    Ok(Estimate::new(value, error))
}
