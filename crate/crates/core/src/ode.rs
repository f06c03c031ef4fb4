// SPDX-License-Identifier: Apache-2.0

//! Dormand–Prince 5(4) for planar systems, with the standard quartic dense
//! output and PI step-size control.
//!
//! Error control is mixed: each component is scaled by `tol·(1 + |y|)`.
//! Stage evaluations may fail (a node of the wavefunction, a point outside
//! the box); such steps are rejected and retried with half the step.

use crate::error::{Error, Result};

pub type State = [f64; 2];

/// Right-hand side of `dy/dt = f(t, y)`.
pub trait Field<const N: usize = 2> {
    fn eval(&self, t: f64, y: [f64; N]) -> Result<[f64; N]>;

    /// Maps an accepted state back into the admissible set, or reports that
    /// it left it for good.
    fn admit(&self, _t: f64, y: [f64; N]) -> Result<[f64; N]> {
        Ok(y)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_steps: usize,
    pub max_rejections: usize,
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, max_steps: 2_000_000, max_rejections: 40 }
    }
}

/// One accepted step with its continuous extension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenseStep<const N: usize = 2> {
    pub t_old: f64,
    pub h: f64,
    pub coeffs: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    pub fn t_new(&self) -> f64 {
        self.t_old + self.h
    }

    /// Interpolated state at `t`, meaningful for `t` within the step.
    pub fn eval(&self, t: f64) -> [f64; N] {
        let theta = (t - self.t_old) / self.h;
        let c = &self.coeffs;
        let mut y = [0.0; N];
        for i in 0..N {
            y[i] = c[0][i] + theta * (c[1][i] + theta * (c[2][i] + theta * (c[3][i] + theta * c[4][i])));
        }
        y
    }
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
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension: y(t_old + θh) = y_old + h Σ_i k_i Σ_j P[i][j] θ^(j+1),
// rows for k1, k3, k4, k5, k6, k7 (k2 has zero weight).
const P: [[f64; 4]; 6] = [
    [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0, -12715105075.0 / 11282082432.0],
    [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0, 87487479700.0 / 32700410799.0],
    [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0, -10690763975.0 / 1880347072.0],
    [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0, 701980252875.0 / 199316789632.0],
    [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0, -1453857185.0 / 822651844.0],
    [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0, 69997945.0 / 29380423.0],
];

const SAFE: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;

#[inline]
fn comb<const N: usize>(y: [f64; N], terms: &[(f64, &[f64; N])], h: f64) -> [f64; N] {
    let mut out = y;
    for &(a, k) in terms {
        for i in 0..N {
            out[i] += h * a * k[i];
        }
    }
    out
}

#[inline]
fn scale(tol: f64, a: f64, b: f64) -> f64 {
    tol + tol * a.abs().max(b.abs())
}

/// Leading two components, used to locate failures in the plane.
fn head<const N: usize>(y: &[f64; N]) -> State {
    [y.first().copied().unwrap_or(f64::NAN), y.get(1).copied().unwrap_or(f64::NAN)]
}

fn rms<const N: usize>(f: impl Fn(usize) -> f64) -> f64 {
    ((0..N).map(|i| f(i).powi(2)).sum::<f64>() / N as f64).sqrt()
}

fn initial_step<const N: usize, F: Field<N>>(f: &F, t0: f64, y0: [f64; N], f0: [f64; N], span: f64, tol: f64) -> f64 {
    let sk: [f64; N] = std::array::from_fn(|i| scale(tol, y0[i], 0.0));
    let d0 = rms::<N>(|i| y0[i] / sk[i]);
    let d1 = rms::<N>(|i| f0[i] / sk[i]);
    let mut h = if d0 <= 1e-5 || d1 <= 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(span.abs());
    let dir = span.signum();
    let y1: [f64; N] = std::array::from_fn(|i| y0[i] + dir * h * f0[i]);
    let Ok(f1) = f.eval(t0 + dir * h, y1) else {
        return h * 1e-3;
    };
    let d2 = rms::<N>(|i| (f1[i] - f0[i]) / sk[i]) / h;
    let der12 = d2.max(d1);
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    (100.0 * h).min(h1).min(span.abs())
}

/// Integrates from `(t0, y0)` to `t1` (either direction), calling `on_step`
/// after every accepted step. Returns the state at `t1`.
pub fn integrate<const N: usize, F, S>(f: &F, t0: f64, y0: [f64; N], t1: f64, opts: &SolverOptions, mut on_step: S) -> Result<[f64; N]>
where
    F: Field<N>,
    S: FnMut(&DenseStep<N>),
{
    if !(t0.is_finite() && t1.is_finite()) {
        return Err(Error::Domain(format!("integration interval [{t0}, {t1}] not finite")));
    }
    if !(opts.tol.is_finite() && opts.tol > 0.0) {
        return Err(Error::config(format!("tolerance must be > 0, got {}", opts.tol)));
    }
    let y0 = f.admit(t0, y0)?;
    if t1 == t0 {
        return Ok(y0);
    }
    let tol = opts.tol;
    let span = t1 - t0;
    let dir = span.signum();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f.eval(t, y)?;
    let mut h = dir * initial_step(f, t, y, k1, span, tol);
    let mut facold: f64 = 1e-4;
    let mut rejections = 0usize;
    let mut last_failure: Option<Error> = None;
    let mut prev_rejected = false;
    let mut steps = 0usize;

    loop {
        if steps >= opts.max_steps {
            return Err(Error::IntegrationFailure {
                t,
                x: head(&y),
                reason: format!("exceeded {} steps", opts.max_steps),
            });
        }
        if rejections > opts.max_rejections {
            return Err(match last_failure {
                Some(e @ Error::Integrity { .. }) => e,
                Some(e) => Error::IntegrationFailure {
                    t,
                    x: head(&y),
                    reason: format!("{} consecutive rejected steps; last: {e}", rejections - 1),
                },
                None => Error::IntegrationFailure {
                    t,
                    x: head(&y),
                    reason: format!("{} consecutive rejected steps", rejections - 1),
                },
            });
        }
        if h.abs() <= 1e-14 * t.abs().max(span.abs()) {
            return Err(Error::IntegrationFailure { t, x: head(&y), reason: "step size underflow".into() });
        }
        steps += 1;
        let mut last = false;
        if (t + h - t1) * dir >= 0.0 {
            h = t1 - t;
            last = true;
        }

        let stages = (|| -> Result<([f64; N], [[f64; N]; 5])> {
            let k2 = f.eval(t + C2 * h, comb(y, &[(A21, &k1)], h))?;
            let k3 = f.eval(t + C3 * h, comb(y, &[(A31, &k1), (A32, &k2)], h))?;
            let k4 = f.eval(t + C4 * h, comb(y, &[(A41, &k1), (A42, &k2), (A43, &k3)], h))?;
            let k5 = f.eval(
                t + C5 * h,
                comb(y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], h),
            )?;
            let k6 = f.eval(
                t + h,
                comb(y, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h),
            )?;
            let y_new = comb(y, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)], h);
            let k7 = f.eval(t + h, y_new)?;
            Ok((y_new, [k3, k4, k5, k6, k7]))
        })();

        let (y_new, [k3, k4, k5, k6, k7]) = match stages {
            Ok(v) => v,
            Err(e) => {
                rejections += 1;
                last_failure = Some(e);
                prev_rejected = true;
                h *= 0.5;
                continue;
            }
        };

        let err = rms::<N>(|i| {
            h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
                / scale(tol, y[i], y_new[i])
        });
        let fac11 = err.powf(EXPO1);

        if err <= 1.0 {
            let y_adm = match f.admit(t + h, y_new) {
                Ok(v) => v,
                Err(e) => {
                    rejections += 1;
                    last_failure = Some(e);
                    prev_rejected = true;
                    h *= 0.5;
                    continue;
                }
            };
            let mut coeffs = [[0.0; N]; 5];
            let ks = [&k1, &k3, &k4, &k5, &k6, &k7];
            for i in 0..N {
                coeffs[0][i] = y[i];
                for j in 0..4 {
                    coeffs[j + 1][i] = h * ks.iter().zip(&P).map(|(k, p)| k[i] * p[j]).sum::<f64>();
                }
            }
            on_step(&DenseStep { t_old: t, h, coeffs });

            t = if last { t1 } else { t + h };
            y = y_adm;
            k1 = k7;
            rejections = 0;
            last_failure = None;
            if last {
                return Ok(y);
            }
            let fac = (fac11 / facold.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            facold = err.max(1e-4);
            let mut h_new = h / fac;
            if prev_rejected {
                h_new = dir * h_new.abs().min(h.abs());
            }
            prev_rejected = false;
            h = h_new;
        } else {
            rejections += 1;
            prev_rejected = true;
            h /= (fac11 / SAFE).min(1.0 / FAC_MIN);
        }
    }
}
