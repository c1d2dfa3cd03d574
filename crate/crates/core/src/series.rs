//! Perturbation series for the drift-corrected fractional heat kernel.
//!
//! The fundamental solution of the drift-perturbed equation is expanded as
//! p-tilde = sum of terms p_n, where p_0 is the unperturbed kernel and each
//! p_n integrates p_{n-1} against b . grad p over a time simplex. The first
//! two terms have direct evaluators ([`p1`], [`p2`]) built on singularity-
//! graded quadrature; higher terms come from the Picard fixed point
//! ([`duhamel_solve`]) iterated on ratio fields p_n / p_0 over scaled
//! space-time grids. Term growth is budgeted by Motzkin numbers, which also
//! yield the two-sided comparability envelope for p-tilde / p.

use rayon::prelude::*;

use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::quad::{gauss_legendre, integrate_graded, Estimate, KahanSum};
use crate::stable_kernel::{density_radial, kappa, ScaledDensity, ScaledMixed, StableParams};

/// Knobs for the singular-weight quadratures used across the series and
/// drift diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct QuadConfig {
    /// Base node count for the graded time quadrature (doubled until the
    /// estimate settles).
    pub time_nodes: usize,
    /// Radius of the scaled spatial domain, in units of t^{1/alpha}.
    pub space_extent: f64,
    /// Tensor-grid resolution per axis for grid-based sweeps.
    pub space_res: usize,
    /// Exclusion radius around drift singularities where quadrature applies
    /// a shrinking-ball convergence check.
    pub exclusion_radius: f64,
    /// Target relative tolerance.
    pub tol: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            time_nodes: 16,
            space_extent: 40.0,
            space_res: 57,
            exclusion_radius: 1e-3,
            tol: 5e-3,
        }
    }
}

impl QuadConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.time_nodes == 0 || self.space_res == 0 || !(self.tol > 0.0) {
            return Err(crate::Error::Config(
                "quadrature config requires positive node counts and tolerance".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Small vector helpers (dim <= 2 throughout the series machinery)
// ---------------------------------------------------------------------------

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

fn validate_inputs(
    params: &StableParams,
    drift: &DriftSpec,
    t: f64,
    x: &[f64],
    y: &[f64],
    cfg: &QuadConfig,
) -> Result<()> {
    params.require_series_range()?;
    cfg.validate()?;
    if params.dim() > 2 {
        return Err(Error::Config(
            "series quadrature is implemented for dim <= 2".into(),
        ));
    }
    if t <= 0.0 {
        return Err(Error::NonpositiveTime(t));
    }
    for p in [x, y] {
        if p.len() != params.dim() {
            return Err(Error::DimMismatch {
                got: p.len(),
                expected: params.dim(),
            });
        }
    }
    if drift.dim != params.dim() {
        return Err(Error::DimMismatch {
            got: drift.dim,
            expected: params.dim(),
        });
    }
    if drift.r != 0.0 && !drift.claimed_divergence_free {
        return Err(Error::NotDivergenceFree(f64::NAN));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Spike-scaled spatial quadrature
// ---------------------------------------------------------------------------

/// Radial nodes (rho, weight) covering (0, rmax) in spike-scaled units:
/// Gauss-Legendre on the core (0, 4) plus a log-mapped panel out to rmax
/// whose node count grows with the panel's logarithmic width. Log spacing
/// resolves the kernels' polynomial tails at any aspect ratio.
fn radial_nodes(n_core: usize, rmax: f64) -> Vec<(f64, f64)> {
    let (xs, ws) = gauss_legendre(n_core);
    let mut out: Vec<(f64, f64)> = xs
        .iter()
        .zip(ws)
        .map(|(x, w)| (2.0 * (1.0 + x), 2.0 * w))
        .collect();
    if rmax > 4.0 {
        let span = (rmax / 4.0).ln();
        let n_log = ((n_core as f64 * span / 3.0).ceil() as usize).clamp(n_core, 96);
        let (xs, ws) = gauss_legendre(n_log);
        for (x, w) in xs.iter().zip(ws) {
            let rho = 4.0 * (span * 0.5 * (1.0 + x)).exp();
            out.push((rho, 0.5 * w * span * rho));
        }
    }
    out
}

/// Integrate f over R^d (d = 1, 2) in coordinates scaled about a kernel
/// spike: z = center + lam * w, |w| < rmax. `other_lam` is the length scale
/// of the smoothest other factor in the integrand; the angular rule is
/// refined with radius so features it produces on distant rings stay
/// resolved. Rings use an even node count so antipodal pairs cancel odd
/// moments exactly (this makes the rule safe for near-derivative kernels).
fn spike_integral(
    dim: usize,
    center: &[f64],
    lam: f64,
    other_lam: f64,
    rmax: f64,
    n_r: usize,
    n_th: usize,
    f: &mut dyn FnMut(&[f64]) -> f64,
) -> f64 {
    let mut acc = KahanSum::new();
    let mut z = [0.0f64; 2];
    if dim == 1 {
        for (rho, wr) in radial_nodes(n_r, rmax) {
            z[0] = center[0] + lam * rho;
            let plus = f(&z[..1]);
            z[0] = center[0] - lam * rho;
            let minus = f(&z[..1]);
            acc.add(wr * (plus + minus));
        }
        return acc.value() * lam;
    }
    let ratio = (lam / other_lam).min(1.0);
    for (rho, wr) in radial_nodes(n_r, rmax) {
        let mut n = (n_th + (6.0 * rho * ratio) as usize).min(192);
        n += n % 2;
        let dth = std::f64::consts::TAU / n as f64;
        let mut ring = KahanSum::new();
        for k in 0..n {
            let th = dth * (k as f64 + 0.5);
            z[0] = center[0] + lam * rho * th.cos();
            z[1] = center[1] + lam * rho * th.sin();
            ring.add(f(&z[..2]));
        }
        acc.add(wr * rho * dth * ring.value());
    }
    acc.value() * lam * lam
}

/// Graded product nodes on (a, b): the interval is split at the midpoint and
/// each half mapped by a power of exponent qa (left) / qb (right), giving
/// 2 * n_half nodes concentrated toward singular endpoints.
fn graded_nodes(a: f64, b: f64, qa: f64, qb: f64, n_half: usize) -> Vec<(f64, f64)> {
    let mid = 0.5 * (a + b);
    let (la, lb) = (mid - a, b - mid);
    let (xs, ws) = gauss_legendre(n_half);
    let mut out = Vec::with_capacity(2 * n_half);
    for (x, w) in xs.iter().zip(ws) {
        let v = 0.5 * (1.0 + x);
        let wv = 0.5 * w;
        out.push((a + la * v.powf(qa), la * qa * v.powf(qa - 1.0) * wv));
        out.push((b - lb * v.powf(qb), lb * qb * v.powf(qb - 1.0) * wv));
    }
    out
}

// ---------------------------------------------------------------------------
// First- and second-order terms
// ---------------------------------------------------------------------------

/// Which factor carries the spatial gradient in the inner integral
/// `int p(a, z - xa) b(z) . grad p(c, z - yc) dz`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradSide {
    /// Put the gradient on the larger-time (smoother) factor.
    Auto,
    /// Gradient on the `a` factor (the divergence-free moved form; carries
    /// the sign flip from integration by parts).
    Left,
    /// Gradient on the `c` factor, as in the raw Duhamel integrand.
    Right,
}

fn pb_sizes(cfg: &QuadConfig) -> (usize, usize) {
    ((cfg.space_res / 4).max(10), (cfg.space_res / 2).max(16))
}

#[allow(clippy::too_many_arguments)]
fn pb_grad_p_sized(
    params: &StableParams,
    drift: &DriftSpec,
    a: f64,
    xa: &[f64],
    c: f64,
    yc: &[f64],
    side: GradSide,
    extent: f64,
    n_r: usize,
    n_th: usize,
) -> f64 {
    let alpha = params.alpha();
    let d = params.dim();
    let inv = 1.0 / alpha;
    let grad_left = match side {
        GradSide::Auto => a >= c,
        GradSide::Left => true,
        GradSide::Right => false,
    };
    // Polar/axial coordinates about the sharper factor; the domain reaches
    // past the other factor's own spread so no mass is truncated.
    let (ctr, lam, other_lam) = if a <= c {
        (xa, a.powf(inv), c.powf(inv))
    } else {
        (yc, c.powf(inv), a.powf(inv))
    };
    let rmax = extent.max((dist(xa, yc) + extent * other_lam) / lam);
    let mut vx = [0.0f64; 2];
    let mut vy = [0.0f64; 2];
    // Pre-scale both factors: the gradient side uses the (d+2)-dimensional
    // shifted profile, the plain side the d-dimensional one.
    let k = kappa();
    let sd_a = ScaledDensity::new(alpha, if grad_left { d + 2 } else { d }, a);
    let sd_c = ScaledDensity::new(alpha, if grad_left { d } else { d + 2 }, c);
    spike_integral(d, ctr, lam, other_lam, rmax, n_r, n_th, &mut |z| {
        let b = drift.eval(z);
        if b.iter().all(|v| *v == 0.0) {
            return 0.0;
        }
        for i in 0..d {
            vx[i] = z[i] - xa[i];
            vy[i] = z[i] - yc[i];
        }
        let (vx, vy) = (&vx[..d], &vy[..d]);
        if grad_left {
            k * sd_a.value(norm(vx)) * dot(vx, &b) * sd_c.value(norm(vy))
        } else {
            -k * sd_a.value(norm(vx)) * sd_c.value(norm(vy)) * dot(&b, vy)
        }
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|u| u * u).sum::<f64>().sqrt()
}

/// Inner spatial integral `int p(a, z - xa) b(z) . grad_z p(c, z - yc) dz`
/// of the Duhamel recursion, with the gradient placed per `side`. Left and
/// Right agree for divergence-free b; exposing both makes the moved form
/// testable.
#[allow(clippy::too_many_arguments)]
pub fn pb_grad_p(
    params: &StableParams,
    drift: &DriftSpec,
    a: f64,
    xa: &[f64],
    c: f64,
    yc: &[f64],
    side: GradSide,
    cfg: &QuadConfig,
) -> Result<f64> {
    validate_inputs(params, drift, a.min(c), xa, yc, cfg)?;
    let (n_r, n_th) = pb_sizes(cfg);
    Ok(pb_grad_p_sized(
        params,
        drift,
        a,
        xa,
        c,
        yc,
        side,
        cfg.space_extent,
        n_r,
        n_th,
    ))
}

/// First perturbation term
/// `p1(t,x,y) = r int_0^t int p(t-s,x,z) b(z) . grad_z p(s,z,y) dz ds`.
/// On (0, t/2) the gradient is moved onto the x-side factor (valid for
/// divergence-free b), absorbing the s -> 0 endpoint weight; both halves use
/// power-graded nodes for the s^{1/alpha - 1} behavior.
pub fn p1(
    params: &StableParams,
    drift: &DriftSpec,
    t: f64,
    x: &[f64],
    y: &[f64],
    cfg: &QuadConfig,
) -> Result<Estimate> {
    validate_inputs(params, drift, t, x, y, cfg)?;
    if drift.r == 0.0 {
        return Ok(Estimate::exact(0.0));
    }
    let ga = 1.0 / params.alpha();
    let (n_r, n_th) = pb_sizes(cfg);
    let e = cfg.space_extent;
    let mut lo_f = |s: f64| {
        pb_grad_p_sized(params, drift, t - s, x, s, y, GradSide::Left, e, n_r, n_th)
    };
    let lo = integrate_graded(&mut lo_f, 0.0, 0.5 * t, ga, 1.0, cfg.tol, cfg.time_nodes.max(8))?;
    let mut hi_f = |s: f64| {
        pb_grad_p_sized(params, drift, t - s, x, s, y, GradSide::Right, e, n_r, n_th)
    };
    let hi = integrate_graded(&mut hi_f, 0.5 * t, t, 1.0, ga, cfg.tol, cfg.time_nodes.max(8))?;
    let value = drift.r * (lo.value + hi.value);
    let error = drift.r.abs() * (lo.error + hi.error) + cfg.tol * value.abs();
    Ok(Estimate::new(value, error))
}

/// Second perturbation term over the simplex 0 < s1 < s2 < t, decomposed
/// into the triangle s2 < t/2 (gradient moved onto the x-side factor), its
/// adjoint image (the same triangle for the reversed field with x and y
/// swapped), and the crossing rectangle s1 < t/2 < s2 evaluated through the
/// mixed second-derivative kernel.
pub fn p2(
    params: &StableParams,
    drift: &DriftSpec,
    t: f64,
    x: &[f64],
    y: &[f64],
    cfg: &QuadConfig,
) -> Result<Estimate> {
    validate_inputs(params, drift, t, x, y, cfg)?;
    if drift.r == 0.0 {
        return Ok(Estimate::exact(0.0));
    }
    let n_half = (cfg.time_nodes / 2).max(6);
    let n_coarse = (n_half / 2).max(4);
    let rev = drift.reversed();
    let fine = region_a(params, drift, t, x, y, cfg, n_half)
        + region_a(params, &rev, t, y, x, cfg, n_half)
        + region_c(params, drift, t, x, y, cfg, n_half);
    let coarse = region_a(params, drift, t, x, y, cfg, n_coarse)
        + region_a(params, &rev, t, y, x, cfg, n_coarse)
        + region_c(params, drift, t, x, y, cfg, n_coarse);
    let r2 = drift.r * drift.r;
    let value = r2 * fine;
    let error = r2 * (fine - coarse).abs() + cfg.tol * value.abs();
    Ok(Estimate::new(value, error))
}

/// Triangle 0 < s1 < s2 < t/2 of the order-2 simplex: both gradients sit on
/// factors whose times are bounded below, the outer one moved onto the
/// (t - s2)-factor. Mapped to the unit square via s2 = (t/2) v, s1 = s2 u.
fn region_a(
    params: &StableParams,
    drift: &DriftSpec,
    t: f64,
    x: &[f64],
    y: &[f64],
    cfg: &QuadConfig,
    n_half: usize,
) -> f64 {
    let alpha = params.alpha();
    let q0 = (6.0 * alpha).ceil();
    let vn = graded_nodes(0.0, 1.0, q0, 1.0, n_half);
    let un = graded_nodes(0.0, 1.0, q0, 4.0, n_half);
    let mut pairs = Vec::with_capacity(vn.len() * un.len());
    for &(v, wv) in &vn {
        for &(u, wu) in &un {
            let s2 = 0.5 * t * v;
            let s1 = s2 * u;
            pairs.push((s1, s2, wv * wu * 0.5 * t * s2));
        }
    }
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(s1, s2, w)| {
            if s1 <= 0.0 || s2 - s1 <= 0.0 {
                return 0.0;
            }
            w * region_a_term(params, drift, t, x, y, s1, s2, cfg)
        })
        .collect();
    let mut acc = KahanSum::new();
    for v in vals {
        acc.add(v);
    }
    acc.value()
}

fn region_a_term(
    params: &StableParams,
    drift: &DriftSpec,
    t: f64,
    x: &[f64],
    y: &[f64],
    s1: f64,
    s2: f64,
    cfg: &QuadConfig,
) -> f64 {
    let alpha = params.alpha();
    let d = params.dim();
    let inv = 1.0 / alpha;
    let tau = s2 - s1;
    let lam = s2.powf(inv);
    let other = (t - s2).powf(inv);
    let e = cfg.space_extent;
    let rmax = e.max((dist(x, y) + e * other) / lam);
    let n_ro = (cfg.space_res / 6).max(8);
    let n_tho = (cfg.space_res / 4).max(12);
    let n_ri = (cfg.space_res / 7).max(8);
    let n_thi = (cfg.space_res / 5).max(12);
    let mut wx = [0.0f64; 2];
    let k = kappa();
    let sd_out = ScaledDensity::new(alpha, d + 2, t - s2);
    spike_integral(d, y, lam, other, rmax, n_ro, n_tho, &mut |w| {
        let bw = drift.eval(w);
        if bw.iter().all(|v| *v == 0.0) {
            return 0.0;
        }
        for i in 0..d {
            wx[i] = w[i] - x[i];
        }
        let wx = &wx[..d];
        let lead = k * sd_out.value(norm(wx)) * dot(wx, &bw);
        if lead == 0.0 {
            return 0.0;
        }
        lead * pb_grad_p_sized(params, drift, tau, w, s1, y, GradSide::Auto, e, n_ri, n_thi)
    })
}

/// Crossing rectangle s1 < t/2 < s2: both outer kernels are spikes (at y and
/// x), so both gradients are moved onto the middle kernel, which becomes the
/// mixed second-derivative kernel. The corner s1, s2 -> t/2 carries the
/// integrable (s2 - s1)^{-2/alpha} weight and is power-graded from both
/// sides.
fn region_c(
    params: &StableParams,
    drift: &DriftSpec,
    t: f64,
    x: &[f64],
    y: &[f64],
    cfg: &QuadConfig,
    n_half: usize,
) -> f64 {
    let alpha = params.alpha();
    let q0 = (6.0 * alpha).ceil();
    let qc = 8.0;
    let s1n = graded_nodes(0.0, 0.5 * t, q0, qc, n_half);
    let s2n = graded_nodes(0.5 * t, t, qc, q0, n_half);
    let mut pairs = Vec::with_capacity(s1n.len() * s2n.len());
    for &(s1, w1) in &s1n {
        for &(s2, w2) in &s2n {
            pairs.push((s1, s2, w1 * w2));
        }
    }
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(s1, s2, w)| {
            if s1 <= 0.0 || t - s2 <= 0.0 {
                return 0.0;
            }
            w * region_c_term(params, drift, t, x, y, s1, s2, cfg)
        })
        .collect();
    let mut acc = KahanSum::new();
    for v in vals {
        acc.add(v);
    }
    acc.value()
}

fn region_c_term(
    params: &StableParams,
    drift: &DriftSpec,
    t: f64,
    x: &[f64],
    y: &[f64],
    s1: f64,
    s2: f64,
    cfg: &QuadConfig,
) -> f64 {
    let alpha = params.alpha();
    let d = params.dim();
    let inv = 1.0 / alpha;
    // Extreme corner nodes lose relative precision in s2 - s1 to rounding;
    // their weight is negligible, only positivity matters.
    let tau = (s2 - s1).max(1e-14 * t);
    let ta = t - s2;
    let lam_z = s1.powf(inv);
    let oth = tau.max(ta).powf(inv);
    let e = cfg.space_extent;
    let rmax = e.max((dist(x, y) + e * oth) / lam_z);
    let n_ro = (cfg.space_res / 6).max(8);
    let n_tho = (cfg.space_res / 4).max(12);
    let mut zy = [0.0f64; 2];
    let sd_z = ScaledDensity::new(alpha, d, s1);
    -spike_integral(d, y, lam_z, oth, rmax, n_ro, n_tho, &mut |z| {
        let bz = drift.eval(z);
        if bz.iter().all(|v| *v == 0.0) {
            return 0.0;
        }
        for i in 0..d {
            zy[i] = z[i] - y[i];
        }
        let pz = sd_z.value(norm(&zy[..d]));
        if pz == 0.0 {
            return 0.0;
        }
        pz * crossing_inner(params, drift, ta, x, tau, z, &bz, cfg)
    })
}

/// `int p(ta, w - x) * K(tau, w - z; b(w), b(z)) dw` where K is the mixed
/// second-derivative kernel. K integrates to zero over the whole space for
/// frozen coefficients, so the same rule's sum of the frozen kernel is
/// subtracted as a control variate; this removes the tau^{-2/alpha}
/// zeroth-moment amplification near the corner and leaves only the benign
/// curvature term.
#[allow(clippy::too_many_arguments)]
fn crossing_inner(
    params: &StableParams,
    drift: &DriftSpec,
    ta: f64,
    x: &[f64],
    tau: f64,
    z: &[f64],
    bz: &[f64],
    cfg: &QuadConfig,
) -> f64 {
    let alpha = params.alpha();
    let d = params.dim();
    let inv = 1.0 / alpha;
    let (ctr, lam, other_lam) = if tau <= ta {
        (z, tau.powf(inv), ta.powf(inv))
    } else {
        (x, ta.powf(inv), tau.powf(inv))
    };
    let e = cfg.space_extent;
    let big = tau.max(ta).powf(inv);
    let rmax = e.max((dist(x, z) + e * big) / lam);
    let n_ri = (cfg.space_res / 7).max(8);
    let n_thi = (cfg.space_res / 5).max(12);
    let sd_g = ScaledDensity::new(alpha, d, ta);
    let mixed = ScaledMixed::new(alpha, d, tau);
    let gz = sd_g.value(dist(z, x));
    let mut wz = [0.0f64; 2];
    let mut wx = [0.0f64; 2];
    spike_integral(d, ctr, lam, other_lam, rmax, n_ri, n_thi, &mut |w| {
        for i in 0..d {
            wz[i] = w[i] - z[i];
            wx[i] = w[i] - x[i];
        }
        let (wz, wx) = (&wz[..d], &wx[..d]);
        let bw = drift.eval(w);
        let g = sd_g.value(norm(wx));
        g * mixed.eval(wz, &bw, bz) - gz * mixed.eval(wz, bz, bz)
    })
}

// ---------------------------------------------------------------------------
// Motzkin budget and comparability envelope
// ---------------------------------------------------------------------------

/// Threshold (sqrt(5) - 1) / 4 below which eta = r * C gives a two-sided
/// comparability envelope (the lower coefficient stays positive).
pub fn eta_threshold() -> f64 {
    (5.0f64.sqrt() - 1.0) / 4.0
}

/// Exact n-th Motzkin number via the integer recurrence
/// (n + 2) M_n = (2n + 1) M_{n-1} + 3 (n - 1) M_{n-2}.
pub fn motzkin(n: usize) -> Result<u128> {
    let mut prev: u128 = 1;
    let mut cur: u128 = 1;
    if n <= 1 {
        return Ok(1);
    }
    for k in 2..=n {
        let kk = k as u128;
        let a = (2 * kk + 1)
            .checked_mul(cur)
            .ok_or(Error::MotzkinOverflow(k))?;
        let b = (3 * (kk - 1))
            .checked_mul(prev)
            .ok_or(Error::MotzkinOverflow(k))?;
        let num = a.checked_add(b).ok_or(Error::MotzkinOverflow(k))?;
        debug_assert_eq!(num % (kk + 2), 0);
        prev = cur;
        cur = num / (kk + 2);
    }
    Ok(cur)
}

/// Motzkin numbers in floating point via the same recurrence; exact until
/// well past the u128 overflow point and monotone thereafter.
pub fn motzkin_f64(n: usize) -> f64 {
    let mut prev = 1.0f64;
    let mut cur = 1.0f64;
    if n <= 1 {
        return 1.0;
    }
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * cur + 3.0 * (kf - 1.0) * prev) / (kf + 2.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Motzkin generating function sum M_n x^n = (1 - x - sqrt(1-2x-3x^2)) / (2x^2)
/// on its disc of convergence |x| < 1/3, evaluated through the rationalized
/// form 2 / (1 - x + sqrt(1-2x-3x^2)) that is free of cancellation for every
/// admissible argument.
pub fn motzkin_gf(x: f64) -> Result<f64> {
    if !(x.abs() < 1.0 / 3.0) {
        return Err(Error::EtaOutOfRange(x));
    }
    let disc = 1.0 - 2.0 * x - 3.0 * x * x;
    Ok(2.0 / (1.0 - x + disc.sqrt()))
}

/// Upper bound on the series tail sum_{n > big_n} M_n eta^n, using
/// M_{m+1} <= 3 M_m: tail <= M_{N+1} eta^{N+1} / (1 - 3 eta).
pub fn tail_bound(eta: f64, big_n: usize) -> Result<f64> {
    if !(0.0..1.0 / 3.0).contains(&eta) {
        return Err(Error::EtaOutOfRange(eta));
    }
    Ok(motzkin_f64(big_n + 1) * eta.powi(big_n as i32 + 1) / (1.0 - 3.0 * eta))
}

/// Two-sided comparability coefficients (lower, upper) with
/// lower * p <= p-tilde <= upper * p: upper = (1 - eta - sqrt(1-2eta-3eta^2))
/// / (2 eta^2) (the Motzkin generating function) and lower = 2 - upper,
/// positive exactly for eta < (sqrt(5)-1)/4.
pub fn comparability_envelope(eta: f64) -> Result<(f64, f64)> {
    if !(0.0..eta_threshold()).contains(&eta) {
        return Err(Error::EnvelopeOutOfRange(eta));
    }
    let upper = motzkin_gf(eta).expect("threshold < 1/3");
    let lower = 2.0 - upper;
    debug_assert!(lower > 0.0);
    Ok((lower, upper))
}

// ---------------------------------------------------------------------------
// Picard iteration on scaled ratio fields
// ---------------------------------------------------------------------------

/// The perturbed kernel seeded at a fixed source point: per-term ratio
/// fields v_n(tau, zhat) = p_n(tau, x, x + tau^{1/alpha} zhat) / p(tau, .)
/// stored on a sinh-stretched grid over log-spaced time levels. Evaluation
/// anywhere in (0, t] x R^d interpolates bilinearly in space, linearly in
/// log time; below the lowest level the self-similar scaling of the terms
/// extends the bottom field.
pub struct PerturbedKernel {
    pub alpha: f64,
    pub dim: usize,
    pub x: Vec<f64>,
    pub t: f64,
    pub r: f64,
    levels: Vec<f64>,
    extent: f64,
    stretch: f64,
    n: usize,
    homogeneous: bool,
    term_fields: Vec<Vec<Vec<f64>>>,
}

impl PerturbedKernel {
    fn coord(&self, i: usize) -> f64 {
        let u = -1.0 + 2.0 * i as f64 / (self.n - 1) as f64;
        self.extent * (self.stretch * u).sinh() / self.stretch.sinh()
    }

    fn frac_index(&self, zh: f64) -> f64 {
        let u = (zh * self.stretch.sinh() / self.extent).asinh() / self.stretch;
        (0.5 * (u + 1.0) * (self.n - 1) as f64).clamp(0.0, (self.n - 1) as f64)
    }

    fn interp(&self, field: &[f64], zh: &[f64]) -> f64 {
        let fi = self.frac_index(zh[0]);
        let i = (fi as usize).min(self.n - 2);
        let fx = fi - i as f64;
        if self.dim == 1 {
            return field[i] * (1.0 - fx) + field[i + 1] * fx;
        }
        let fj = self.frac_index(zh[1]);
        let j = (fj as usize).min(self.n - 2);
        let fy = fj - j as f64;
        let at = |a: usize, b: usize| field[a * self.n + b];
        at(i, j) * (1.0 - fx) * (1.0 - fy)
            + at(i + 1, j) * fx * (1.0 - fy)
            + at(i, j + 1) * (1.0 - fx) * fy
            + at(i + 1, j + 1) * fx * fy
    }

    /// Number of stored terms (including the constant order-0 field).
    pub fn n_terms(&self) -> usize {
        self.term_fields.len()
    }

    /// Ratio p_k(tau, x, z) / p(tau, x, z) of a single term.
    pub fn ratio_term(&self, k: usize, tau: f64, z: &[f64]) -> f64 {
        if k == 0 {
            return 1.0;
        }
        let lam = tau.powf(1.0 / self.alpha);
        let mut zh = [0.0f64; 2];
        for i in 0..self.dim {
            zh[i] = (z[i] - self.x[i]) / lam;
        }
        let zh = &zh[..self.dim];
        let fields = &self.term_fields[k];
        let lo = self.levels[0];
        if tau <= lo {
            let base = self.interp(&fields[0], zh);
            if self.homogeneous {
                return base;
            }
            // Bounded drift: each term carries tau^{k (1 - 1/alpha)}.
            return base * (tau / lo).powf(k as f64 * (1.0 - 1.0 / self.alpha));
        }
        let last = *self.levels.last().unwrap();
        if tau >= last {
            return self.interp(fields.last().unwrap(), zh);
        }
        let j = self
            .levels
            .partition_point(|&l| l <= tau)
            .min(self.levels.len() - 1)
            - 1;
        let w = (tau / self.levels[j]).ln() / (self.levels[j + 1] / self.levels[j]).ln();
        self.interp(&fields[j], zh) * (1.0 - w) + self.interp(&fields[j + 1], zh) * w
    }

    fn term_grad(&self, k: usize, tau: f64, z: &[f64]) -> [f64; 2] {
        let mut g = [0.0f64; 2];
        if k == 0 {
            return g;
        }
        let h = 0.15 * tau.powf(1.0 / self.alpha);
        let mut p = [0.0f64; 2];
        p[..self.dim].copy_from_slice(&z[..self.dim]);
        for i in 0..self.dim {
            p[i] = z[i] + h;
            let hi = self.ratio_term(k, tau, &p[..self.dim]);
            p[i] = z[i] - h;
            let lo = self.ratio_term(k, tau, &p[..self.dim]);
            p[i] = z[i];
            g[i] = (hi - lo) / (2.0 * h);
        }
        g
    }

    /// Partial-sum ratio p-tilde / p through the stored terms.
    pub fn ratio(&self, tau: f64, z: &[f64]) -> f64 {
        (0..self.term_fields.len())
            .map(|k| self.ratio_term(k, tau, z))
            .sum()
    }

    /// Perturbed kernel value p-tilde(tau, x, z) (partial sum).
    pub fn eval(&self, tau: f64, z: &[f64]) -> f64 {
        let rho = dist(z, &self.x);
        self.ratio(tau, z) * density_radial(self.alpha, self.dim, tau, rho)
    }
}

/// One Duhamel update: p_{k+1}(tau, x, y) = r int_0^tau int p_k(tau - s, x, z)
/// b(z) . grad_z p(s, z, y) dz ds, evaluated with the spike of each half of
/// the time interval resolved in its own scaled coordinates; on (0, tau/2)
/// the gradient is moved onto p_k = v_k p, whose two-product derivative uses
/// the grid gradient of v_k.
fn picard_value(
    params: &StableParams,
    drift: &DriftSpec,
    kern: &PerturbedKernel,
    k: usize,
    tau: f64,
    y_t: &[f64],
    cfg: &QuadConfig,
) -> f64 {
    let alpha = params.alpha();
    let d = params.dim();
    let inv = 1.0 / alpha;
    let x = &kern.x;
    let e = cfg.space_extent;
    let n_r = (cfg.space_res / 8).max(7);
    let n_th = (cfg.space_res / 5).max(10);
    let nt = (cfg.time_nodes / 4).max(4);
    let dxy = dist(x, y_t);
    let mut acc = KahanSum::new();
    let mut zx = [0.0f64; 2];
    let mut zy = [0.0f64; 2];
    // s in (tau/2, tau): spike of p_k at x.
    for (s, w) in graded_nodes(0.5 * tau, tau, 1.0, 4.0, nt) {
        let sig = tau - s;
        if sig <= 0.0 {
            continue;
        }
        let lam = sig.powf(inv);
        let other = s.powf(inv);
        let rmax = e.max((dxy + e * other) / lam);
        let kap = kappa();
        let sd_sig = ScaledDensity::new(alpha, d, sig);
        let sd_grad = ScaledDensity::new(alpha, d + 2, s);
        let val = spike_integral(d, x, lam, other, rmax, n_r, n_th, &mut |z| {
            let b = drift.eval(z);
            if b.iter().all(|v| *v == 0.0) {
                return 0.0;
            }
            for i in 0..d {
                zx[i] = z[i] - x[i];
                zy[i] = z[i] - y_t[i];
            }
            let (zx, zy) = (&zx[..d], &zy[..d]);
            -kap * kern.ratio_term(k, sig, z)
                * sd_sig.value(norm(zx))
                * sd_grad.value(norm(zy))
                * dot(&b, zy)
        });
        acc.add(w * val);
    }
    // s in (0, tau/2): spike of grad p at y; gradient moved onto v_k p.
    for (s, w) in graded_nodes(0.0, 0.5 * tau, 4.0, 1.0, nt) {
        let sig = tau - s;
        if s <= 0.0 {
            continue;
        }
        let lam = s.powf(inv);
        let other = sig.powf(inv);
        let rmax = e.max((dxy + e * other) / lam);
        let kap = kappa();
        let sd_sig = ScaledDensity::new(alpha, d, sig);
        let sd_sig_grad = ScaledDensity::new(alpha, d + 2, sig);
        let sd_s = ScaledDensity::new(alpha, d, s);
        let val = spike_integral(d, y_t, lam, other, rmax, n_r, n_th, &mut |z| {
            let b = drift.eval(z);
            if b.iter().all(|v| *v == 0.0) {
                return 0.0;
            }
            for i in 0..d {
                zx[i] = z[i] - x[i];
                zy[i] = z[i] - y_t[i];
            }
            let (zx, zy) = (&zx[..d], &zy[..d]);
            let rho = norm(zx);
            let v = kern.ratio_term(k, sig, z);
            let gv = kern.term_grad(k, sig, z);
            let moved = sd_sig.value(rho) * dot(&gv[..d], &b)
                - kap * v * sd_sig_grad.value(rho) * dot(zx, &b);
            -moved * sd_s.value(norm(zy))
        });
        acc.add(w * val);
    }
    drift.r * acc.value()
}

/// Result of the series evaluation at a list of targets.
pub struct SeriesResult {
    /// terms[n][i]: p_n(t, x, y_i) with a heuristic error estimate;
    /// terms[0] is the unperturbed kernel.
    pub terms: Vec<Vec<Estimate>>,
    /// eta = |r| * C-hat.
    pub eta: f64,
    /// Bound on the omitted tail sum_{n > N} M_n eta^n (relative to p).
    pub tail_bound: f64,
    /// Comparability coefficients (lower, upper) when eta is below the
    /// two-sided threshold.
    pub envelope: Option<(f64, f64)>,
    /// eta < (sqrt(5) - 1) / 4.
    pub converged: bool,
    /// The full space-time field, for kernel-level checks.
    pub kernel: PerturbedKernel,
}

impl SeriesResult {
    /// Partial sum with the tail bound folded into the error.
    pub fn p_tilde(&self, i: usize) -> Estimate {
        let mut value = 0.0;
        let mut error = 0.0;
        for term in &self.terms {
            value += term[i].value;
            error += term[i].error;
        }
        Estimate::new(value, error + self.tail_bound * self.terms[0][i].value)
    }

    /// Ratio p-tilde / p at target i.
    pub fn ratio(&self, i: usize) -> f64 {
        self.p_tilde(i).value / self.terms[0][i].value
    }
}

/// Solve the Duhamel fixed point by Picard iteration, keeping each term's
/// ratio field p_n / p on a log-spaced ladder of time levels. `c_hat` skips
/// the (expensive) internal calibration when the constant is already known.
#[allow(clippy::too_many_arguments)]
pub fn duhamel_solve(
    params: &StableParams,
    drift: &DriftSpec,
    t: f64,
    x: &[f64],
    y_list: &[Vec<f64>],
    n_terms: usize,
    c_hat: Option<f64>,
    cfg: &QuadConfig,
) -> Result<SeriesResult> {
    let probe = y_list.first().cloned().unwrap_or_else(|| x.to_vec());
    validate_inputs(params, drift, t, x, &probe, cfg)?;
    let alpha = params.alpha();
    let d = params.dim();
    let inv = 1.0 / alpha;
    let n = cfg.space_res;
    let n_levels = 12;
    let levels: Vec<f64> = (0..n_levels)
        .map(|j| t * 1e-3f64.powf((n_levels - 1 - j) as f64 / (n_levels - 1) as f64))
        .collect();
    let ngrid = n.pow(d as u32);
    let mut kern = PerturbedKernel {
        alpha,
        dim: d,
        x: x.to_vec(),
        t,
        r: drift.r,
        levels,
        extent: cfg.space_extent,
        stretch: 5.0,
        n,
        homogeneous: drift.scaling_homogeneous,
        term_fields: vec![vec![vec![1.0; ngrid]; n_levels]],
    };
    let mut maxima = vec![1.0f64];
    for k in 0..n_terms {
        let mut new_fields = Vec::with_capacity(n_levels);
        for j in 0..n_levels {
            let tau = kern.levels[j];
            let lam = tau.powf(inv);
            let vals: Vec<f64> = (0..ngrid)
                .into_par_iter()
                .map(|idx| {
                    if drift.r == 0.0 {
                        return 0.0;
                    }
                    let (i, jj) = (idx / n, idx % n);
                    let mut y_t = [0.0f64; 2];
                    if d == 1 {
                        y_t[0] = x[0] + lam * kern.coord(idx);
                    } else {
                        y_t[0] = x[0] + lam * kern.coord(i);
                        y_t[1] = x[1] + lam * kern.coord(jj);
                    }
                    let y_t = &y_t[..d];
                    let p0 = density_radial(alpha, d, tau, dist(y_t, x));
                    picard_value(params, drift, &kern, k, tau, y_t, cfg) / p0
                })
                .collect();
            new_fields.push(vals);
        }
        let m = new_fields
            .iter()
            .flatten()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        kern.term_fields.push(new_fields);
        maxima.push(m);
        if k >= 1 && m > maxima[k] && maxima[k] > maxima[k - 1] {
            return Err(Error::IterationDiverged(m));
        }
    }
    let c_hat = match c_hat {
        Some(c) => c,
        None if drift.r == 0.0 => 0.0,
        None => {
            let far = probe.clone();
            let sample = vec![(t, x.to_vec(), far)];
            calibrate_c(params, drift, &sample, cfg)?
        }
    };
    let eta = drift.r.abs() * c_hat;
    let terms: Vec<Vec<Estimate>> = (0..=n_terms)
        .map(|k| {
            y_list
                .iter()
                .map(|y| {
                    let p0 = density_radial(alpha, d, t, dist(y, x));
                    if k == 0 {
                        return Estimate::new(p0, 1e-9 * p0);
                    }
                    let v = kern.ratio_term(k, t, y) * p0;
                    // Heuristic: interpolation + quadrature at a few percent
                    // per term order.
                    Estimate::new(v, 0.03 * v.abs() + 1e-10 * p0)
                })
                .collect()
        })
        .collect();
    let tb = if eta < 1.0 / 3.0 {
        tail_bound(eta, n_terms).expect("checked range")
    } else {
        f64::INFINITY
    };
    Ok(SeriesResult {
        terms,
        eta,
        tail_bound: tb,
        envelope: comparability_envelope(eta).ok(),
        converged: eta < eta_threshold(),
        kernel: kern,
    })
}

/// Empirical perturbation constant: C-hat = max over the sample of
/// |p1| / p and sqrt(|p2| / (M_2 p)) with the drift strength normalized to
/// r = 1. A lower estimate of the true constant; doubles as the eta = r *
/// C-hat calibration input.
pub fn calibrate_c(
    params: &StableParams,
    drift: &DriftSpec,
    sample: &[(f64, Vec<f64>, Vec<f64>)],
    cfg: &QuadConfig,
) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let unit = drift.clone().with_r(1.0);
    let mut c = 0.0f64;
    for (t, x, y) in sample {
        let p0 = density_radial(params.alpha(), params.dim(), *t, dist(x, y));
        let v1 = p1(params, &unit, *t, x, y, cfg)?;
        let v2 = p2(params, &unit, *t, x, y, cfg)?;
        c = c
            .max(v1.value.abs() / p0)
            .max((v2.value.abs() / (2.0 * p0)).sqrt());
    }
    Ok(c)
}
