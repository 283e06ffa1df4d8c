//! Dormand–Prince 5(4) with adaptive step control.
//!
//! The state is any [`QuadValue`], so the same stepper drives complex
//! Riccati systems and real flowline equations.

use crate::quadrature::QuadValue;
use crate::scalar::{lit, Real};

#[derive(Clone, Debug, PartialEq)]
pub enum OdeError {
    StepUnderflow { at: f64 },
    NonFinite { at: f64 },
    TooManySteps { at: f64 },
}

#[derive(Clone, Debug)]
pub struct Dopri5<T> {
    pub rtol: T,
    pub atol: T,
    pub max_steps: usize,
}

/// What the caller wants after an accepted step.
pub enum Control<S> {
    Continue,
    /// Replace the state (e.g. a change of variables) and keep going.
    Replace(S),
    Stop,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn comb<T: Real, S: QuadValue<T>>(y: &S, h: T, terms: &[(f64, &S)]) -> S {
    let mut out = y.clone();
    for (c, k) in terms {
        if *c != 0.0 {
            out.axpy(h * lit::<T>(*c), k);
        }
    }
    out
}

impl<T: Real> Dopri5<T> {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self { rtol: lit(rtol), atol: lit(atol), max_steps: 2_000_000 }
    }

    /// Integrates from `x0` to `x1` (either direction). `after_step` sees each
    /// accepted `(x, y)`. Returns the final state.
    pub fn solve<S, F, G>(
        &self,
        mut f: F,
        x0: T,
        x1: T,
        y0: S,
        h0: Option<T>,
        mut after_step: G,
    ) -> Result<(T, S), OdeError>
    where
        S: QuadValue<T>,
        F: FnMut(T, &S) -> S,
        G: FnMut(T, &S) -> Control<S>,
    {
        let span = x1 - x0;
        if span == T::zero() {
            return Ok((x0, y0));
        }
        let dir = span.signum();
        let mut x = x0;
        let mut y = y0;
        let mut h = h0.unwrap_or(span.abs() / lit(100.0)).abs().min(span.abs()) * dir;
        let mut k1 = f(x, &y);
        let min_h = span.abs() * T::epsilon() * lit(16.0);
        for _ in 0..self.max_steps {
            if (x1 - x) * dir <= T::zero() {
                return Ok((x, y));
            }
            if (x + h - x1) * dir > T::zero() {
                h = x1 - x;
            }
            let k2 = f(x + h * lit(C2), &comb(&y, h, &[(A21, &k1)]));
            let k3 = f(x + h * lit(C3), &comb(&y, h, &[(A31, &k1), (A32, &k2)]));
            let k4 = f(x + h * lit(C4), &comb(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
            let k5 = f(
                x + h * lit(C5),
                &comb(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            );
            let k6 = f(
                x + h,
                &comb(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
            );
            let y_new = comb(&y, h, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
            let k7 = f(x + h, &y_new);
            let zero = y.zero_like();
            let err_vec = comb(
                &zero,
                h,
                &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)],
            );
            let scale = self.atol + self.rtol * y.magnitude().max(y_new.magnitude());
            let err = err_vec.magnitude() / scale;
            if !err.is_finite() || !y_new.magnitude().is_finite() {
                // treat as a rejected step
                h = h * lit(0.25);
                if h.abs() < min_h {
                    return Err(OdeError::NonFinite { at: crate::scalar::to_f64(x) });
                }
                continue;
            }
            if err <= T::one() {
                x = x + h;
                y = y_new;
                k1 = k7;
                match after_step(x, &y) {
                    Control::Continue => {}
                    Control::Replace(s) => {
                        y = s;
                        k1 = f(x, &y);
                    }
                    Control::Stop => return Ok((x, y)),
                }
                let fac = if err == T::zero() {
                    lit(5.0)
                } else {
                    (lit::<T>(0.9) * err.powf(lit(-0.2))).min(lit(5.0))
                };
                h = h * fac;
            } else {
                let fac = (lit::<T>(0.9) * err.powf(lit(-0.25))).max(lit(0.1));
                h = h * fac;
                if h.abs() < min_h {
                    return Err(OdeError::StepUnderflow { at: crate::scalar::to_f64(x) });
                }
            }
        }
        Err(OdeError::TooManySteps { at: crate::scalar::to_f64(x) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn harmonic_oscillator() {
        let ode = Dopri5::<f64>::new(1e-12, 1e-14);
        let (_, y) = ode
            .solve(|_, y: &Vec<f64>| vec![y[1], -y[0]], 0.0, 10.0, vec![1.0, 0.0], None, |_, _| {
                Control::Continue
            })
            .unwrap();
        assert!((y[0] - 10f64.cos()).abs() < 1e-10);
    }

    #[test]
    fn complex_exponential_backwards() {
        let k = Complex64::new(2.0, -0.5);
        let ode = Dopri5::<f64>::new(1e-12, 1e-14);
        let i = Complex64::i();
        let (_, y) = ode
            .solve(|_, y: &Complex64| i * k * y, 3.0, 0.0, (i * k * 3.0).exp(), None, |_, _| {
                Control::Continue
            })
            .unwrap();
        assert!((y - Complex64::new(1.0, 0.0)).norm() < 1e-10);
    }
}
