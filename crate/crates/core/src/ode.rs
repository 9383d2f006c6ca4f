//! Embedded Dormand–Prince 5(4) integrator with step-size control.
//!
//! The right-hand side may refuse to evaluate (returns `None`), e.g. when a
//! trial stage lands on the wrong side of a singular curve. Such a step is
//! rejected and retried with a smaller step.

#[derive(Debug, Clone, Copy)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step magnitude; zero picks one from the cap.
    pub h_init: f64,
    /// Below this step magnitude the integration reports `StepUnderflow`.
    pub h_min: f64,
    /// Adds `h_min_rel * |t|` to the underflow threshold.
    pub h_min_rel: f64,
    /// Step cap is `h_max_abs.min(h_max_rel * |t|)` (relative part ignored
    /// when zero).
    pub h_max_abs: f64,
    pub h_max_rel: f64,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: 0.0,
            h_min: 1e-14,
            h_min_rel: 0.0,
            h_max_abs: f64::INFINITY,
            h_max_rel: 0.0,
        }
    }
}

/// What the observer wants after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome<const N: usize> {
    Finished { t: f64, y: [f64; N] },
    Stopped { t: f64, y: [f64; N] },
    StepUnderflow { t: f64, y: [f64; N], h: f64 },
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

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        *o += h * acc;
    }
    out
}

/// Integrates `y' = f(t, y)` from `t0` towards `t_end` (either direction).
/// `observer` sees every accepted point, including the initial one.
pub fn integrate<const N: usize, F, O>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    opts: &Dopri5Options,
    mut observer: O,
) -> Outcome<N>
where
    F: FnMut(f64, &[f64; N]) -> Option<[f64; N]>,
    O: FnMut(f64, &[f64; N]) -> Control,
{
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let cap = |t: f64| {
        let rel = if opts.h_max_rel > 0.0 {
            opts.h_max_rel * t.abs()
        } else {
            f64::INFINITY
        };
        opts.h_max_abs.min(rel).max(opts.h_min)
    };
    let h_floor = |t: f64| opts.h_min.max(opts.h_min_rel * t.abs());
    let mut t = t0;
    let mut y = y0;
    if observer(t, &y) == Control::Stop {
        return Outcome::Stopped { t, y };
    }
    let Some(mut k1) = f(t, &y) else {
        return Outcome::StepUnderflow { t, y, h: 0.0 };
    };
    let mut h = if opts.h_init > 0.0 {
        opts.h_init.min(cap(t))
    } else {
        (1e-3 * (t_end - t0).abs()).min(cap(t))
    };
    let mut fac_max = 5.0;

    loop {
        let remaining = (t_end - t) * dir;
        if remaining <= 1e-14 * t_end.abs().max(1.0) {
            return Outcome::Finished { t, y };
        }
        h = h.min(cap(t)).min(remaining);
        if h < h_floor(t) && h < remaining {
            return Outcome::StepUnderflow { t, y, h };
        }
        let hs = h * dir;

        let trial = (|| {
            let k2 = f(t + C2 * hs, &axpy(&y, hs, &[(A21, &k1)]))?;
            let k3 = f(t + C3 * hs, &axpy(&y, hs, &[(A31, &k1), (A32, &k2)]))?;
            let k4 = f(
                t + C4 * hs,
                &axpy(&y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
            )?;
            let k5 = f(
                t + C5 * hs,
                &axpy(&y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            )?;
            let k6 = f(
                t + hs,
                &axpy(
                    &y,
                    hs,
                    &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                ),
            )?;
            let y_new = axpy(
                &y,
                hs,
                &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
            );
            let k7 = f(t + hs, &y_new)?;
            let err = axpy(
                &[0.0; N],
                hs,
                &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)],
            );
            Some((y_new, k7, err))
        })();

        let Some((y_new, k7, err)) = trial else {
            h *= 0.25;
            fac_max = 1.0;
            continue;
        };

        let mut norm = 0.0;
        for i in 0..N {
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            norm += (err[i] / sc).powi(2);
        }
        let norm = (norm / N as f64).sqrt();
        if !norm.is_finite() {
            h *= 0.25;
            fac_max = 1.0;
            continue;
        }

        if norm <= 1.0 {
            t += hs;
            y = y_new;
            k1 = k7;
            if observer(t, &y) == Control::Stop {
                return Outcome::Stopped { t, y };
            }
            let fac = if norm == 0.0 {
                fac_max
            } else {
                (0.9 * norm.powf(-0.2)).clamp(0.2, fac_max)
            };
            h *= fac;
            fac_max = 5.0;
        } else {
            h *= (0.9 * norm.powf(-0.2)).clamp(0.1, 1.0);
            fac_max = 1.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let opts = Dopri5Options::default();
        let out = integrate(|_, y| Some([-y[0]]), 0.0, [1.0], 5.0, &opts, |_, _| {
            Control::Continue
        });
        match out {
            Outcome::Finished { t, y } => {
                assert!((t - 5.0).abs() < 1e-12);
                assert!((y[0] - (-5.0f64).exp()).abs() < 1e-10);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn backward_harmonic_oscillator() {
        let opts = Dopri5Options::default();
        let out = integrate(
            |_, y| Some([y[1], -y[0]]),
            3.0,
            [3.0f64.sin(), 3.0f64.cos()],
            0.0,
            &opts,
            |_, _| Control::Continue,
        );
        let Outcome::Finished { y, .. } = out else {
            panic!()
        };
        assert!(y[0].abs() < 1e-9 && (y[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn observer_can_stop() {
        let opts = Dopri5Options {
            h_max_abs: 0.01,
            ..Default::default()
        };
        let out = integrate(|_, _| Some([1.0]), 0.0, [0.0], 10.0, &opts, |_, y| {
            if y[0] > 1.0 {
                Control::Stop
            } else {
                Control::Continue
            }
        });
        let Outcome::Stopped { t, .. } = out else {
            panic!()
        };
        assert!(t > 1.0 && t < 1.02);
    }

    #[test]
    fn rejected_evaluations_shrink_the_step() {
        // rhs refuses to evaluate past t = 1; the solver must creep up to it
        let opts = Dopri5Options {
            h_min: 1e-9,
            ..Default::default()
        };
        let out = integrate(
            |t, _| if t > 1.0 { None } else { Some([1.0]) },
            0.0,
            [0.0],
            2.0,
            &opts,
            |_, _| Control::Continue,
        );
        let Outcome::StepUnderflow { t, .. } = out else {
            panic!("{out:?}")
        };
        assert!((t - 1.0).abs() < 1e-6);
    }
}
