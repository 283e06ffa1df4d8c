use std::f64::consts::PI;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};
use resinv::testfns::*;

fn cfg(cases: u32) -> Config {
    Config { cases, rng_seed: RngSeed::Fixed(0x5eed_0002), failure_persistence: None, ..Config::default() }
}

fn standard() -> TestFunctionPair<f64> {
    build_pair(BumpSpec::default(), 12).unwrap()
}

/// The bump on (1, 3), written out independently.
fn bump(t: f64) -> f64 {
    let u = t.abs() - 2.0;
    if u.abs() >= 1.0 { 0.0 } else { (-1.0 / (1.0 - u * u)).exp() }
}

/// Trapezoid over the support; spectrally accurate since every derivative of
/// the bump vanishes at both ends.
fn trapezoid(w: impl Fn(f64) -> f64) -> f64 {
    let n = 20_000;
    let h = 2.0 / n as f64;
    (1..n).map(|i| {
        let t = 1.0 + h * i as f64;
        bump(t) * w(t)
    }).sum::<f64>() * h
}

#[test]
fn ghat_at_bump_center() {
    assert!((standard().ghat(2.0) - (-1.0f64).exp()).abs() < 1e-16);
}

#[test]
fn f_and_g_agree_at_origin() {
    let p = standard();
    let g0 = p.g(0.0).unwrap();
    assert!((p.f(0.0).unwrap() - g0).abs() < 1e-14);
    assert!((g0 - trapezoid(|_| 1.0) / PI).abs() < 1e-13);
}

#[test]
fn g_decay_at_ten() {
    // The bump transform decays like exp(−√(2τ)), so g(10) is about 2e-3,
    // not below 1e-8. Checked against the trapezoid oracle and against the
    // two-fold integration by parts bound |g(τ)| ≤ ∫|ĝ″|/(πτ²).
    let p = standard();
    let g10 = p.g(10.0).unwrap();
    let oracle = trapezoid(|t| (10.0 * t).cos()) / PI;
    assert!((g10 - oracle).abs() < 1e-13, "g(10) = {g10}, oracle {oracle}");
    let h = 1e-4;
    let n = 20_000;
    let step = 2.0 / n as f64;
    let second: f64 = (1..n)
        .map(|i| {
            let t = 1.0 + step * i as f64;
            ((bump(t + h) - 2.0 * bump(t) + bump(t - h)) / (h * h)).abs()
        })
        .sum::<f64>()
        * step;
    assert!(g10.abs() <= second / (PI * 100.0));
    assert!(g10.abs() > 1e-8, "g(10) = {g10}");
}

#[test]
fn gaussian_identity() {
    for n in [1usize, 3] {
        let p = gaussian_pair::<f64>(12);
        for k in n..=10 {
            let exact = if k % 2 == 0 { 1.0 } else { -1.0 } * PI.powf(n as f64 / 2.0);
            let c = p.momentum_integral(k, n).unwrap();
            assert!((c - exact).abs() < 1e-10, "k = {k}, n = {n}: {c}");
            let radial = p.momentum_integral_radial(k, n).unwrap();
            assert!((radial - exact).abs() < 1e-10, "k = {k}, n = {n}: {radial}");
        }
    }
    let c = gaussian_pair::<f64>(4).momentum_integral(1, 1).unwrap();
    assert!((c + 1.77245385).abs() < 1e-8);
}

#[test]
fn calibration_matches_closed_form() {
    for n in [1usize, 3] {
        for k in n..=12 {
            let a = calibration_constant::<f64>(k, n).unwrap();
            let b = calibration_constant_closed::<f64>(k, n);
            assert!((a / b - 1.0).abs() < 1e-10, "k = {k}, n = {n}");
        }
    }
}

#[test]
fn lemma_nonvanishing_on_the_standard_bump() {
    let p = standard();
    for n in [1usize, 3] {
        for k in n..=12 {
            let c = p.momentum_integral(k, n).unwrap();
            let radial = p.momentum_integral_radial(k, n).unwrap();
            let fourier = p.momentum_integral_fourier(k, n).unwrap();
            assert!(c != 0.0 && c.is_finite());
            assert!((radial / fourier - 1.0).abs() < 1e-6, "k = {k}, n = {n}");
        }
    }
}

#[test]
fn bump_k1_golden_value() {
    // Fourier route by hand: C = A·(−1/2)∫₀^∞ t ĝ(t) dt
    let c = standard().momentum_integral(1, 1).unwrap();
    let j = -0.5 * trapezoid(|t| t);
    let a = calibration_constant_closed::<f64>(1, 1);
    assert!((c - a * j).abs() < 1e-10 * c.abs());
    assert!(c < 0.0);
    // fixed after the first run
    assert!((c + 0.4439938161680794).abs() < 1e-12, "C_1,1 = {c:.16}");
}

#[test]
fn momentum_integral_requires_k_at_least_n() {
    assert!(standard().momentum_integral(2, 3).is_err());
}

#[test]
fn invalid_specs_rejected() {
    assert!(BumpSpec::new(0.0, 3.0).is_err());
    assert!(BumpSpec::new(2.0, 2.0).is_err());
    assert!(build_pair::<f64>(BumpSpec::default(), 2).is_err());
}

#[test]
fn scale_one_is_identity() {
    let p = standard();
    let q = p.scale(1.0);
    for s in [0.0, 0.3, 2.0, 7.5] {
        assert_eq!(p.f_derivs(s, 4).unwrap(), q.f_derivs(s, 4).unwrap());
    }
}

#[test]
fn momentum_integral_scaling() {
    let p = standard();
    for (k, n) in [(1usize, 1usize), (3, 1), (3, 3), (5, 3)] {
        for lam in [2.0, 5.0] {
            let a = p.momentum_integral(k, n).unwrap();
            let b = p.scale(lam).momentum_integral(k, n).unwrap();
            let expect = lam.powf(n as f64 / 2.0 - k as f64);
            assert!((b / a / expect - 1.0).abs() < 1e-8, "k = {k}, n = {n}, λ = {lam}");
        }
    }
}

#[test]
fn odd_derivatives_vanish_at_origin() {
    let d = standard().g_derivs(0.0, 9).unwrap();
    for j in (1..=9).step_by(2) {
        assert!(d[j].abs() < 1e-14, "g^({j})(0) = {}", d[j]);
    }
}

#[test]
fn f_near_zero_matches_even_series_of_g() {
    // g(τ) = Σ g^{(2k)}(0) τ^{2k}/(2k)!, so f^{(k)}(0) = k!·g^{(2k)}(0)/(2k)!
    let p = standard();
    let gd = p.g_derivs(0.0, 12).unwrap();
    let fd = p.f_derivs(0.0, 6).unwrap();
    for k in 0..=6 {
        let mut ratio = 1.0;
        for j in (k + 1)..=(2 * k) {
            ratio /= j as f64;
        }
        let expect = gd[2 * k] * ratio;
        assert!((fd[k] - expect).abs() <= 1e-10 * expect.abs().max(1e-12), "k = {k}");
    }
}

#[test]
fn fast_table_matches_quadrature() {
    let p = standard();
    for s in [0.0, 0.5, 3.0, 20.0, 150.0] {
        let fast = p.f_fast(s);
        let slow = p.f_derivs(s, 3).unwrap();
        for k in 0..=3 {
            assert!((fast[k] - slow[k]).abs() < 1e-12, "σ = {s}, k = {k}");
        }
    }
}

proptest! {
    #![proptest_config(cfg(48))]

    #[test]
    fn g_is_even(tau in 0.0f64..40.0) {
        let p = standard();
        prop_assert!((p.g(tau).unwrap() - p.g(-tau).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ghat_admissible(t in -5.0f64..5.0, t0 in 0.2f64..2.0, w in 0.5f64..3.0) {
        let p = build_pair::<f64>(BumpSpec::new(t0, t0 + w).unwrap(), 3).unwrap();
        let v = p.ghat(t);
        prop_assert!(v >= 0.0);
        prop_assert_eq!(v, p.ghat(-t));
        if t.abs() <= t0 || t.abs() >= t0 + w {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn f_of_square_is_g(tau in 0.0f64..30.0) {
        let p = standard();
        prop_assert!((p.f(tau * tau).unwrap() - p.g(tau).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn derivatives_match_finite_differences(s in 0.5f64..60.0) {
        let p = standard();
        let h = 1e-3 * s.max(1.0);
        let d = p.f_derivs(s, 4).unwrap();
        let up = p.f_derivs(s + h, 3).unwrap();
        let dn = p.f_derivs(s - h, 3).unwrap();
        for k in 0..3 {
            let fd = (up[k] - dn[k]) / (2.0 * h);
            let scale = d[k + 1].abs().max(1e-3 * d[1..].iter().fold(0.0f64, |m, v| m.max(v.abs())));
            // central difference error is h²/6·|f'''|
            let tol = 1e-6 * scale + h * h * d[(k + 3).min(4)].abs();
            prop_assert!((fd - d[k + 1]).abs() <= tol, "k={} fd={} exact={}", k, fd, d[k + 1]);
        }
        let gd = p.g_derivs(s.sqrt(), 2).unwrap();
        let tau = s.sqrt();
        let g_up = p.g(tau + 1e-4).unwrap();
        let g_dn = p.g(tau - 1e-4).unwrap();
        prop_assert!(((g_up - g_dn) / 2e-4 - gd[1]).abs() <= 1e-6 * gd[1].abs().max(1e-4));
    }

    #[test]
    fn scaled_derivatives_follow_chain_rule(s in 0.0f64..20.0, lam in 1.0f64..10.0) {
        let p = standard();
        let a = p.scale(lam).f_derivs(s, 4).unwrap();
        let b = p.f_derivs(s / lam, 4).unwrap();
        for k in 0..=4 {
            let expect = b[k] / lam.powi(k as i32);
            prop_assert!((a[k] - expect).abs() <= 1e-10 * b[0].abs().max(expect.abs()));
        }
    }
}
