//! End-to-end acceptance checks: every numbered criterion prints one
//! PASS line on success; a failed assertion names the criterion.
//!
//! The heavy perturbation-series state (criteria 8-11) is computed once and
//! shared through a `OnceLock`, so the suite stays inside its time budget on
//! a single core.

use std::sync::OnceLock;

use stableheat::drift::{
    divergence_residual_weak, drift_kernel_bound, kato_modulus, rotational_field, DriftSpec,
};
use stableheat::mc_oracle::{kde_density, simulate_endpoints, MCConfig};
use stableheat::quad::{adaptive_1d, halton};
use stableheat::series::{
    comparability_envelope, duhamel_solve, motzkin, motzkin_f64, motzkin_gf, p1, p2, tail_bound,
    QuadConfig, SeriesResult,
};
use stableheat::stable_kernel::{
    density, gradient, kappa, profile, reference_density, second_mixed_kernel, TestFunction,
};
use stableheat::verify::{
    check_3p, check_aux1, check_aux2, check_chapman_kolmogorov, check_grad_bound, check_mass,
    check_mc_agreement, check_two_sided, check_weak_solution, grad_ratio, three_p_ratio,
    FracLapGrid, SampleSpec,
};
use stableheat::{Estimate, StableParams};

fn log_map(u: f64, lo: f64, hi: f64) -> f64 {
    lo * (hi / lo).powf(u)
}

/// Deterministic sweep point: time log-scaled, radius log-scaled, direction
/// from a further Halton coordinate.
fn sweep(i: usize, dim: usize, t_rng: (f64, f64), rho_rng: (f64, f64)) -> (f64, Vec<f64>) {
    let t = log_map(halton(i + 1, 2), t_rng.0, t_rng.1);
    let rho = log_map(halton(i + 1, 3), rho_rng.0, rho_rng.1);
    let x = match dim {
        1 => vec![if halton(i + 1, 5) < 0.5 { -rho } else { rho }],
        _ => {
            let th = 2.0 * std::f64::consts::PI * halton(i + 1, 5);
            vec![rho * th.cos(), rho * th.sin()]
        }
    };
    (t, x)
}

/// m-dimensional radial density from the shared profile tables.
fn density_m(alpha: f64, m: usize, t: f64, rho: f64) -> f64 {
    let lam = t.powf(1.0 / alpha);
    profile(alpha, m).value(rho / lam) / lam.powi(m as i32)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn passed(n: u32, what: &str) {
    println!("criterion {n:2}: PASS  ({what})");
}

// ---------------------------------------------------------------------------
// 1. Closed-form oracles
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_closed_form_oracles() {
    for (alpha, dim) in [(1.0, 1), (1.0, 2), (2.0, 1), (2.0, 2)] {
        let params = StableParams::new(alpha, dim).unwrap();
        for i in 0..50 {
            let t = log_map(halton(i + 1, 2), 0.1, 10.0);
            let lam = t.powf(1.0 / alpha);
            // scaled radius up to 20, inside the fitted profile's core range
            let rho = 20.0 * halton(i + 1, 3) * lam;
            let x = match dim {
                1 => vec![rho],
                _ => {
                    let th = 2.0 * std::f64::consts::PI * halton(i + 1, 5);
                    vec![rho * th.cos(), rho * th.sin()]
                }
            };
            let got = density(&params, t, &x).unwrap();
            let want = reference_density(&params, t, &x).unwrap();
            assert!(
                (got - want).abs() <= 1e-6 * want,
                "criterion 1: alpha={alpha} d={dim} t={t} x={x:?}: {got} vs {want}"
            );
        }
    }
    passed(1, "Cauchy and Gaussian closed forms, 50 points each, rel err <= 1e-6");
}

// ---------------------------------------------------------------------------
// 2. Scaling identity
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_scaling_identity() {
    for alpha in [1.2, 1.5, 1.8] {
        for dim in [1usize, 2] {
            let params = StableParams::new(alpha, dim).unwrap();
            for i in 0..100 {
                let (t, x) = sweep(i, dim, (1e-2, 1e2), (1e-3, 1e2));
                let lhs = density(&params, t, &x).unwrap();
                let lam = t.powf(1.0 / alpha);
                let xs: Vec<f64> = x.iter().map(|v| v / lam).collect();
                let rhs = density(&params, 1.0, &xs).unwrap() / lam.powi(dim as i32);
                assert!(
                    (lhs - rhs).abs() <= 1e-8 * rhs,
                    "criterion 2: alpha={alpha} d={dim} t={t} x={x:?}: {lhs} vs {rhs}"
                );
            }
        }
    }
    passed(2, "space-time scaling identity, 100 points, rel err <= 1e-8");
}

// ---------------------------------------------------------------------------
// 3. Gradient identity vs finite differences; kappa constancy
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_gradient_identity() {
    for dim in [1usize, 2] {
        let alpha = 1.5;
        let params = StableParams::new(alpha, dim).unwrap();
        let mut kappas: Vec<f64> = Vec::new();
        for i in 0..100 {
            // moderate radii so the gradient is well away from zero
            let (t, x) = sweep(i, dim, (0.1, 10.0), (0.2, 8.0));
            let lam = t.powf(1.0 / alpha);
            let x: Vec<f64> = x.iter().map(|v| v * lam).collect();
            let g = gradient(&params, t, &x).unwrap();
            let h = 1e-5 * (lam + norm(&x));
            let mut fd = vec![0.0; dim];
            for k in 0..dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                fd[k] = (density(&params, t, &xp).unwrap()
                    - density(&params, t, &xm).unwrap())
                    / (2.0 * h);
            }
            let gn = norm(&g);
            for k in 0..dim {
                assert!(
                    (g[k] - fd[k]).abs() <= 1e-4 * gn,
                    "criterion 3: d={dim} t={t} x={x:?} axis {k}: {} vs FD {}",
                    g[k],
                    fd[k]
                );
            }
            // recover the gradient constant from the FD derivative alone
            let dot: f64 = fd.iter().zip(&x).map(|(a, b)| a * b).sum();
            let rho = norm(&x);
            let k_hat = -dot / (rho * rho * density_m(alpha, dim + 2, t, rho));
            kappas.push(k_hat);
        }
        let k = kappa();
        for k_hat in &kappas {
            assert!(
                (k_hat - k).abs() <= 1e-4 * k,
                "criterion 3: kappa estimate {k_hat} vs {k}"
            );
        }
    }
    passed(3, "gradient identity vs FD and kappa constancy, rel err <= 1e-4");
}

// ---------------------------------------------------------------------------
// 4. Second-mixed-kernel formula vs nested finite differences
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_second_mixed_kernel() {
    for dim in [1usize, 2] {
        let alpha = 1.5;
        let params = StableParams::new(alpha, dim).unwrap();
        let mut accepted = 0usize;
        let mut i = 0usize;
        while accepted < 30 {
            i += 1;
            let t = log_map(halton(i, 2), 0.5, 2.0);
            let lam = t.powf(1.0 / alpha);
            let rho = log_map(halton(i, 3), 0.3, 5.0) * lam;
            let (z, w, u, v): (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) = match dim {
                1 => (vec![rho], vec![0.0], vec![1.0], vec![1.0]),
                _ => {
                    let th = 2.0 * std::f64::consts::PI * halton(i, 5);
                    let a1 = 2.0 * std::f64::consts::PI * halton(i, 7);
                    let a2 = 2.0 * std::f64::consts::PI * halton(i, 11);
                    (
                        vec![rho * th.cos(), rho * th.sin()],
                        vec![0.0, 0.0],
                        vec![a1.cos(), a1.sin()],
                        vec![a2.cos(), a2.sin()],
                    )
                }
            };
            let smk = second_mixed_kernel(&params, t, &z, &w, &u, &v).unwrap();
            // skip sign-change neighborhoods where a relative target is
            // meaningless
            let zw: Vec<f64> = z.iter().zip(&w).map(|(a, b)| a - b).collect();
            let scale = kappa() * density_m(alpha, dim + 2, t, norm(&zw));
            if smk.abs() < 1e-2 * scale {
                continue;
            }
            accepted += 1;
            // mixed FD of F(a, b) = p(t, (z - w) + a u - b v) at (0, 0)
            let h = 3e-4 * (lam + norm(&zw));
            let f = |a: f64, b: f64| -> f64 {
                let arg: Vec<f64> = zw
                    .iter()
                    .zip(u.iter().zip(&v))
                    .map(|(c, (ui, vi))| c + a * ui - b * vi)
                    .collect();
                density(&params, t, &arg).unwrap()
            };
            let fd = -(f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
            assert!(
                (smk - fd).abs() <= 1e-3 * smk.abs(),
                "criterion 4: d={dim} t={t} z={z:?} u={u:?} v={v:?}: {smk} vs FD {fd}"
            );
        }
    }
    passed(4, "second-mixed kernel vs nested FD, 30 points, rel err <= 1e-3");
}

// ---------------------------------------------------------------------------
// 5. Inequality sweeps and the Gaussian negative controls
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_inequality_sweeps() {
    let spec = SampleSpec::default();
    for dim in [1usize, 2] {
        let params = StableParams::new(1.5, dim).unwrap();
        for rep in [
            check_two_sided(&params, &spec).unwrap(),
            check_3p(&params, &spec).unwrap(),
            check_grad_bound(&params, &spec).unwrap(),
        ] {
            assert!(
                rep.value.is_finite() && rep.value > 0.0,
                "criterion 5: {} not finite",
                rep.name
            );
            assert!(
                rep.stable_under_refinement,
                "criterion 5: {} moved >= 5% on sample doubling ({})",
                rep.name, rep.value
            );
        }
    }
    // the mixed-kernel constant needs the (two-dimensional) singular field
    let params = StableParams::new(1.5, 2).unwrap();
    let drift = rotational_field(1.5).unwrap();
    let rep = check_aux1(&params, &drift, &spec).unwrap();
    assert!(rep.value.is_finite() && rep.stable_under_refinement, "criterion 5: C4");

    // Gaussian negative controls: both suprema diverge at alpha = 2
    let g1 = StableParams::new(2.0, 1).unwrap();
    let mut last = 0.0;
    for sep in [2.0, 6.0, 12.0] {
        let r = three_p_ratio(&g1, 1.0, 1.0, &[-sep / 2.0], &[sep / 2.0], &[0.0]).unwrap();
        assert!(r > 2.0 * last, "criterion 5: no 3P growth at separation {sep}");
        last = r;
    }
    assert!(last > 1e6, "criterion 5: Gaussian 3P ratio should explode, got {last}");
    let mut last = 0.0;
    for xhat in [1.0, 6.0, 20.0] {
        let r = grad_ratio(&g1, 1.0, &[xhat]).unwrap();
        assert!(r > last, "criterion 5: no gradient-ratio growth at {xhat}");
        last = r;
    }
    assert!(last > 9.0, "criterion 5: Gaussian gradient ratio should grow linearly");
    passed(5, "C1-C4 refinement-stable; alpha=2 negative controls detected");
}

// ---------------------------------------------------------------------------
// 6. Time-kernel integral is t-invariant
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_time_kernel_invariance() {
    for alpha in [1.2, 1.5, 1.8] {
        let rep = check_aux2(alpha, &[0.5, 1.0, 10.0, 100.0]).unwrap();
        let spread = rep.worst_case[1];
        assert!(
            rep.value.is_finite() && rep.value > 0.0,
            "criterion 6: alpha={alpha} value {}",
            rep.value
        );
        assert!(
            spread <= 5e-3,
            "criterion 6: alpha={alpha} relative spread {spread} over t in [0.5, 100]"
        );
    }
    passed(6, "time-kernel integral t-invariant within 0.5%");
}

// ---------------------------------------------------------------------------
// 7. Motzkin recurrence, generating function, and tail bound
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_motzkin() {
    assert_eq!(motzkin(4).unwrap(), 9, "criterion 7: M_4");
    assert_eq!(motzkin(10).unwrap(), 2188, "criterion 7: M_10");
    let partial = |x: f64, n: usize| -> f64 {
        (0..=n).map(|k| motzkin_f64(k) * x.powi(k as i32)).sum()
    };
    for x in [0.05, 0.1, 0.25] {
        let gf = motzkin_gf(x).unwrap();
        let sum = partial(x, 220);
        assert!(
            (gf - sum).abs() <= 1e-10 * gf,
            "criterion 7: GF at {x}: {gf} vs partial {sum}"
        );
    }
    for i in 0..20 {
        let eta = 0.01 + 0.30 * halton(i + 1, 2);
        let n = 1 + (halton(i + 1, 3) * 10.0) as usize;
        let remainder = motzkin_gf(eta).unwrap() - partial(eta, n);
        let bound = tail_bound(eta, n).unwrap();
        assert!(
            bound >= remainder - 1e-14,
            "criterion 7: eta={eta} N={n}: bound {bound} < remainder {remainder}"
        );
    }
    passed(7, "Motzkin values, GF agreement to 1e-10, tail bound dominates");
}

// ---------------------------------------------------------------------------
// Shared perturbation-series state for criteria 8-11
// ---------------------------------------------------------------------------

struct SharedSeries {
    params: StableParams,
    drift: DriftSpec,
    r: f64,
    c_hat: f64,
    cfg: QuadConfig,
    /// 5x5 spatial grid of targets.
    targets: Vec<Vec<f64>>,
    /// direct split-evaluator values at unit drift strength
    v1: Vec<Estimate>,
    v2: Vec<Estimate>,
    res: SeriesResult,
}

const T_HORIZON: f64 = 1.0;
const X_SRC: [f64; 2] = [0.3, 0.0];
const ETA_TARGET: f64 = 0.05;

fn shared() -> &'static SharedSeries {
    static S: OnceLock<SharedSeries> = OnceLock::new();
    S.get_or_init(|| {
        let params = StableParams::new(1.5, 2).unwrap();
        let unit = rotational_field(1.5).unwrap(); // r = 1
        let cfg = QuadConfig {
            time_nodes: 12,
            space_res: 57,
            space_extent: 40.0,
            ..QuadConfig::default()
        };
        let mut targets = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                targets.push(vec![-1.0 + 0.5 * i as f64, -1.0 + 0.5 * j as f64]);
            }
        }
        // Direct first/second terms at every grid point at unit strength;
        // both the agreement check and the calibration reuse them.
        let mut v1 = Vec::new();
        let mut v2 = Vec::new();
        let mut c_hat = 0.0f64;
        for y in &targets {
            let a = p1(&params, &unit, T_HORIZON, &X_SRC, y, &cfg).unwrap();
            let b = p2(&params, &unit, T_HORIZON, &X_SRC, y, &cfg).unwrap();
            let p0 = density(&params, T_HORIZON, &diff(y, &X_SRC)).unwrap();
            c_hat = c_hat
                .max(a.value.abs() / p0)
                .max((b.value.abs() / (2.0 * p0)).sqrt());
            v1.push(a);
            v2.push(b);
        }
        let r = ETA_TARGET / c_hat;
        let drift = unit.with_r(r);
        let res = duhamel_solve(
            &params,
            &drift,
            T_HORIZON,
            &X_SRC,
            &targets,
            3,
            Some(c_hat),
            &cfg,
        )
        .unwrap();
        SharedSeries {
            params,
            drift,
            r,
            c_hat,
            cfg,
            targets,
            v1,
            v2,
            res,
        }
    })
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

// ---------------------------------------------------------------------------
// 8. Series self-consistency
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_series_terms() {
    let s = shared();
    assert!(
        (s.res.eta - ETA_TARGET).abs() < 1e-12,
        "criterion 8: eta = {}",
        s.res.eta
    );
    let motzkin = [1.0, 1.0, 2.0, 4.0];
    for (i, y) in s.targets.iter().enumerate() {
        let p0 = s.res.terms[0][i].value;
        // Picard iterate differences vs the direct split evaluators
        let d1 = s.r * s.v1[i].value;
        let g1 = s.res.terms[1][i].value;
        assert!(
            (g1 - d1).abs() <= 0.01 * d1.abs() + s.r * s.v1[i].error,
            "criterion 8: p1 at {y:?}: picard {g1} vs direct {d1}"
        );
        let d2 = s.r * s.r * s.v2[i].value;
        let g2 = s.res.terms[2][i].value;
        assert!(
            (g2 - d2).abs() <= 0.01 * d2.abs() + s.r * s.r * s.v2[i].error,
            "criterion 8: p2 at {y:?}: picard {g2} vs direct {d2}"
        );
        // term-size bound |p_n| <= M_n (C r)^n p for n <= 3
        for n in 1..=3usize {
            let bound = motzkin[n] * (s.c_hat * s.r).powi(n as i32) * p0;
            let term = s.res.terms[n][i].value.abs();
            assert!(
                term <= bound * (1.0 + 1e-9) + s.res.terms[n][i].error,
                "criterion 8: |p_{n}| = {term} > {bound} at {y:?}"
            );
        }
    }
    passed(8, "split evaluators vs Picard within 1%; Motzkin term bounds on the grid");
}

// ---------------------------------------------------------------------------
// 9. Comparability envelope
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_envelope() {
    let s = shared();
    let (lo, hi) = s.res.envelope.expect("criterion 9: envelope exists at eta = 0.05");
    // closed-form coefficients at eta = 0.05
    assert!((hi - 1.0559).abs() < 1e-3, "criterion 9: upper {hi}");
    assert!((lo - 0.9441).abs() < 1e-3, "criterion 9: lower {lo}");
    let tol = 0.01;
    for i in 0..s.targets.len() {
        let r = s.res.ratio(i);
        assert!(
            r >= 0.9441 - tol && r <= 1.0559 + tol,
            "criterion 9: ratio {r} at {:?} outside envelope",
            s.targets[i]
        );
    }
    // zero drift strength: the ratio is exactly one
    let lean = QuadConfig {
        time_nodes: 8,
        space_res: 25,
        space_extent: 30.0,
        ..QuadConfig::default()
    };
    let zero = s.drift.clone().with_r(0.0);
    let ys = vec![vec![0.5, 0.0], vec![-0.4, 0.5]];
    let res0 = duhamel_solve(&s.params, &zero, T_HORIZON, &X_SRC, &ys, 2, None, &lean).unwrap();
    for i in 0..ys.len() {
        assert_eq!(res0.ratio(i), 1.0, "criterion 9: ratio at r = 0 must be exactly 1");
    }
    passed(9, "ratio inside the comparability envelope; exactly 1 at zero strength");
}

// ---------------------------------------------------------------------------
// 10. Weak equation, Chapman-Kolmogorov, and mass residuals
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_kernel_identities() {
    let s = shared();
    let eta = s.res.eta;

    // -- weak formulation ---------------------------------------------------
    let space = TestFunction::gaussian(2);
    let phi = TestFunction::separable_in_time(space, 0.3, 1.5);
    let grid = FracLapGrid::new(
        1.5,
        &|z: &[f64]| (-z.iter().map(|v| v * v).sum::<f64>()).exp(),
        2,
        24.0,
        256,
    )
    .unwrap();
    let (mid, half) = (0.9, 0.6);
    let psi = move |t: f64| -> f64 {
        let q = ((t - mid) / half).powi(2);
        if q >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - q)).exp()
        }
    };
    let flp = move |u: f64, z: &[f64]| psi(u) * grid.eval(z);
    let s0 = 0.5;
    let mut kernel = |tau: f64, z: &[f64]| -> f64 {
        let p0 = density(&s.params, tau, &diff(z, &X_SRC)).unwrap();
        let ratio: f64 = (0..=3).map(|k| s.res.kernel.ratio_term(k, tau, z)).sum();
        p0 * ratio
    };
    let weak = check_weak_solution(
        &mut kernel,
        &s.params,
        &s.drift,
        &phi,
        &flp,
        s0,
        &X_SRC,
        1e-6,
    )
    .unwrap();
    // quadrature floor, measured with the exact unperturbed pipeline
    let zero = s.drift.clone().with_r(0.0);
    let mut kernel0 =
        |tau: f64, z: &[f64]| density(&s.params, tau, &diff(z, &X_SRC)).unwrap();
    let floor = check_weak_solution(
        &mut kernel0,
        &s.params,
        &zero,
        &phi,
        &flp,
        s0,
        &X_SRC,
        1e-6,
    )
    .unwrap();
    // combined error: the quadrature floor plus the series' own per-term
    // error estimate propagated through the pairing (phi is O(1))
    let weak_budget = floor + 0.03 * eta;
    assert!(
        weak < 5.0 * weak_budget,
        "criterion 10: weak residual {weak} vs floor {floor}"
    );

    // -- Chapman-Kolmogorov --------------------------------------------------
    // The two-argument kernel is rebuilt to first order from the direct
    // evaluator (the Picard field is anchored at one source); its own CK
    // defect is the quadratic term eta^2 M_2, which the budget carries.
    let ck_cfg = QuadConfig {
        time_nodes: 8,
        space_res: 25,
        space_extent: 30.0,
        ..QuadConfig::default()
    };
    let mut k1 = |tau: f64, a: &[f64], b: &[f64]| -> f64 {
        density(&s.params, tau, &diff(b, a)).unwrap()
            + p1(&s.params, &s.drift, tau, a, b, &ck_cfg).map_or(0.0, |e| e.value)
    };
    let ck = check_chapman_kolmogorov(&mut k1, &s.params, 0.4, 0.6, &X_SRC, &[-0.2, 0.4], 1e-6)
        .unwrap();
    let mut k0 =
        |tau: f64, a: &[f64], b: &[f64]| density(&s.params, tau, &diff(b, a)).unwrap();
    let ck_floor =
        check_chapman_kolmogorov(&mut k0, &s.params, 0.4, 0.6, &X_SRC, &[-0.2, 0.4], 1e-6)
            .unwrap();
    let ck_budget = ck_floor + 2.0 * eta * eta;
    assert!(
        ck < 5.0 * ck_budget,
        "criterion 10: CK residual {ck} vs floor {ck_floor} + order bound {:.1e}",
        2.0 * eta * eta
    );

    // -- mass ----------------------------------------------------------------
    let (_, hi) = s.res.envelope.unwrap();
    let mut mk = |y: &[f64]| -> f64 {
        let p0 = density(&s.params, T_HORIZON, &diff(y, &X_SRC)).unwrap();
        let ratio: f64 = (0..=3).map(|k| s.res.kernel.ratio_term(k, T_HORIZON, y)).sum();
        p0 * ratio
    };
    let mass = check_mass(&mut mk, &s.params, T_HORIZON, &X_SRC, 30.0, hi, 1e-6).unwrap();
    let mut mk0 = |y: &[f64]| density(&s.params, T_HORIZON, &diff(y, &X_SRC)).unwrap();
    let mass_floor =
        check_mass(&mut mk0, &s.params, T_HORIZON, &X_SRC, 30.0, 1.0, 1e-6).unwrap();
    let mass_budget = mass_floor + 0.03 * eta;
    assert!(
        mass < 5.0 * mass_budget,
        "criterion 10: mass residual {mass} vs floor {mass_floor}"
    );
    println!(
        "criterion 10 residuals: weak {weak:.2e} (floor {floor:.2e}), ck {ck:.2e} (floor {ck_floor:.2e}), mass {mass:.2e} (floor {mass_floor:.2e})"
    );
    passed(10, "weak / Chapman-Kolmogorov / mass residuals within 5x combined error");
}

// ---------------------------------------------------------------------------
// 11. Monte Carlo cross-validation
// ---------------------------------------------------------------------------

/// Two-sided KS statistic of a sorted sample against a CDF.
fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

#[test]
fn criterion_11_monte_carlo() {
    let s = shared();
    // KDE of Euler endpoints vs the series at five interior targets
    let mc_points: [usize; 5] = {
        // indices of (0,0), (0.5,0), (0,0.5), (-0.5,-0.5), (0.5,0.5)
        let want = [
            vec![0.0, 0.0],
            vec![0.5, 0.0],
            vec![0.0, 0.5],
            vec![-0.5, -0.5],
            vec![0.5, 0.5],
        ];
        let mut idx = [0usize; 5];
        for (k, w) in want.iter().enumerate() {
            idx[k] = s.targets.iter().position(|t| t == w).unwrap();
        }
        idx
    };
    let mc = MCConfig::new(1_000_000, T_HORIZON, 42);
    let endpoints = simulate_endpoints(&s.params, &s.drift, &X_SRC, &mc).unwrap();
    let mut series_vals = Vec::new();
    let mut kde_vals = Vec::new();
    let mut bias = Vec::new();
    for &i in &mc_points {
        let y = &s.targets[i];
        series_vals.push(s.res.p_tilde(i));
        kde_vals.push(kde_density(&endpoints, y, &mc.bandwidth).unwrap());
        // KDE smoothing bias allowance: 0.5 h^2 |laplacian p|, with the
        // bandwidth bounded by 0.2 for this sample size and the Laplacian
        // taken from the unperturbed kernel by finite differences
        let h = 0.05;
        let mut lap = 0.0;
        for k in 0..2 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[k] += h;
            ym[k] -= h;
            lap += (density(&s.params, T_HORIZON, &diff(&yp, &X_SRC)).unwrap()
                - 2.0 * density(&s.params, T_HORIZON, &diff(y, &X_SRC)).unwrap()
                + density(&s.params, T_HORIZON, &diff(&ym, &X_SRC)).unwrap())
                / (h * h);
        }
        bias.push(0.5 * 0.2_f64.powi(2) * lap.abs());
    }
    let outcome = check_mc_agreement(&series_vals, &kde_vals, &bias);
    assert!(outcome.pass, "criterion 11: {}", outcome.details);

    // zero drift, one Euler step: the endpoint law is exactly stable;
    // KS test on the first coordinate at level 0.01
    let zero = s.drift.clone().with_r(0.0);
    let mut mc1 = MCConfig::new(4000, T_HORIZON, 7);
    mc1.h = T_HORIZON;
    let one_step = simulate_endpoints(&s.params, &zero, &[0.0, 0.0], &mc1).unwrap();
    let mut xs: Vec<f64> = one_step.iter().map(|e| e[0]).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // marginal of the isotropic vector: the one-dimensional stable law
    let p1d = StableParams::new(s.params.alpha(), 1).unwrap();
    let mut dens = |u: f64| density(&p1d, T_HORIZON, &[u]).unwrap();
    let mut cum = Vec::with_capacity(xs.len());
    let mut acc = 0.5 + adaptive_1d(&mut dens, 0.0, xs[0], &[(0.0, 1.0)], 1e-9, 1e-12, 2000).value;
    cum.push(acc);
    for w in 1..xs.len() {
        acc += adaptive_1d(&mut dens, xs[w - 1], xs[w], &[(xs[w - 1], 1.0)], 1e-9, 1e-12, 500)
            .value;
        cum.push(acc);
    }
    let d = {
        let n = xs.len() as f64;
        let mut d = 0.0f64;
        for (i, f) in cum.iter().enumerate() {
            d = d.max((f - i as f64 / n).abs());
            d = d.max(((i + 1) as f64 / n - f).abs());
        }
        d
    };
    let crit = 1.628 / (xs.len() as f64).sqrt(); // level 0.01
    assert!(d < crit, "criterion 11: KS statistic {d} vs critical {crit}");
    let _ = ks_statistic(&[], |_| 0.0);
    passed(11, "KDE within 3 sigma at 5 points; one-step law passes KS at 0.01");
}

// ---------------------------------------------------------------------------
// 12. Drift module
// ---------------------------------------------------------------------------

#[test]
fn criterion_12_drift() {
    let alpha = 1.5;
    let params = StableParams::new(alpha, 2).unwrap();
    let mut drift = rotational_field(alpha).unwrap();
    let cfg = QuadConfig::default();
    let phi = TestFunction::bump(2, 2.0, vec![0.3, -0.2]);
    let resid = divergence_residual_weak(&drift, &phi, &cfg).unwrap();
    assert!(resid < 1e-6, "criterion 12: divergence residual {resid}");
    let kato = kato_modulus(&drift, &params, 1.0, &[0.0, 0.0], &cfg).unwrap();
    assert!(
        !kato.is_finite(),
        "criterion 12: Kato modulus must diverge at the field singularity"
    );
    // drift_kernel_bound enforces <= 1% spread across times internally
    let cb = drift_kernel_bound(&mut drift, &params, &[0.5, 1.0, 2.0], &cfg).unwrap();
    assert!(cb.is_finite() && cb > 0.0, "criterion 12: C_b = {cb}");
    passed(12, "divergence-free field, Kato divergence, t-invariant drift bound");
}

// silence unused-import warnings for items used only in some cfgs
#[allow(dead_code)]
fn _typecheck() {
    let _ = comparability_envelope(0.05);
}
