// SPDX-License-Identifier: Apache-2.0

//! Expansion kinematics, the guidance field, and trajectory integration in
//! the expanding box and in its static companion box.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::ode::{self, DenseStep, Field, SolverOptions, State};
use crate::wavefunction::{PhysParams, Superposition};

/// Relative distance from a wall within which positions are pulled back in.
pub const WALL_CLAMP: f64 = 1e-12;

/// `|ψ|/(2/L)` below which the guidance field is treated as singular.
pub const NODE_FLOOR: f64 = 1e-12;

/// Per-step local error tolerance as a fraction of the requested `tol`.
///
/// The guidance flow amplifies local errors, so `tol` bounds the per-step
/// error with this margin; round trips then typically return within `tol`.
pub const LOCAL_TOL_FACTOR: f64 = 1e-2;

pub(crate) fn solver_options(tol: f64) -> SolverOptions {
    SolverOptions::with_tol(tol * LOCAL_TOL_FACTOR)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Expansion {
    pub params: PhysParams,
}

impl Expansion {
    pub fn new(params: PhysParams) -> Self {
        Self { params }
    }

    pub fn scale_factor(&self, t: f64) -> Result<f64> {
        check_nonneg(t)?;
        Ok(self.params.scale(t))
    }

    /// `τ(t) = t/s(t) = L0 t/L(t)`.
    pub fn retarded_time(&self, t: f64) -> Result<f64> {
        check_nonneg(t)?;
        Ok(self.params.tau(t))
    }

    /// `lim τ(t)` as `t → ∞`; infinite for a static box.
    pub fn tau_limit(&self) -> f64 {
        if self.params.v_expand > 0.0 {
            self.params.l0 / self.params.v_expand
        } else {
            f64::INFINITY
        }
    }
}

fn check_nonneg(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("time {t} must be finite and >= 0")))
    }
}

/// Reflects coordinates that overshoot a wall by at most `WALL_CLAMP·side`.
#[inline]
fn clamp_into(t: f64, x: State, side: f64) -> Result<State> {
    let slack = WALL_CLAMP * side;
    let mut out = x;
    for c in out.iter_mut() {
        if !c.is_finite() {
            return Err(Error::Integrity { t, x });
        }
        if *c < 0.0 {
            if *c < -slack {
                return Err(Error::Integrity { t, x });
            }
            *c = -*c;
        } else if *c > side {
            if *c > side + slack {
                return Err(Error::Integrity { t, x });
            }
            *c = 2.0 * side - *c;
        }
    }
    Ok(out)
}

#[inline]
fn guidance(sup: &Superposition, tau: f64, t: f64, x: State, side: f64) -> Result<State> {
    let sums = sup.sums(tau, PI * x[0] / side, PI * x[1] / side);
    if sums.s.norm() < NODE_FLOOR {
        return Err(Error::Singular { t, x });
    }
    let p = sup.params();
    let k = p.hbar / p.mass * PI / side;
    Ok([k * (sums.d1 / sums.s).im, k * (sums.d2 / sums.s).im])
}

/// Guidance velocity in the expanding box.
pub fn velocity(sup: &Superposition, t: f64, x: State) -> Result<State> {
    check_nonneg(t)?;
    let p = sup.params();
    let side = p.side(t);
    if !x.iter().all(|&c| c > 0.0 && c < side) {
        return Err(Error::Domain(format!("position ({}, {}) not inside the box at t={t}", x[0], x[1])));
    }
    let q = guidance(sup, p.tau(t), t, x, side)?;
    let drift = p.v_expand / side;
    Ok([x[0] * drift + q[0], x[1] * drift + q[1]])
}

/// `∇·v` of the guidance field in the expanding box.
///
/// The density of any ensemble obeys `d ln ρ/dt = -∇·v` along trajectories.
pub fn velocity_divergence(sup: &Superposition, t: f64, x: State) -> Result<f64> {
    check_nonneg(t)?;
    let p = sup.params();
    let side = p.side(t);
    if !x.iter().all(|&c| c > 0.0 && c < side) {
        return Err(Error::Domain(format!("position ({}, {}) not inside the box at t={t}", x[0], x[1])));
    }
    Ok(velocity_and_divergence(sup, t, x, side)?.2)
}

/// Velocity components and `∇·v` from one evaluation of the mode sums.
#[inline]
fn velocity_and_divergence(sup: &Superposition, t: f64, x: State, side: f64) -> Result<(f64, f64, f64)> {
    let p = sup.params();
    let m = sup.sums(p.tau(t), PI * x[0] / side, PI * x[1] / side);
    if m.s.norm() < NODE_FLOOR {
        return Err(Error::Singular { t, x });
    }
    let k = PI / side;
    let c = p.hbar / p.mass * k;
    let drift = p.v_expand / side;
    let r1 = m.d1 / m.s;
    let r2 = m.d2 / m.s;
    // Im(∇²S/S - (∇S/S)²) with ∇ → (π/L)·(d1, d2) and ∇² → -(π/L)²·lap
    let q = -(m.lap / m.s) - r1 * r1 - r2 * r2;
    Ok((x[0] * drift + c * r1.im, x[1] * drift + c * r2.im, 2.0 * drift + c * k * q.im))
}

/// Guidance velocity in the static companion box of side `L0`.
pub fn fixed_velocity(sup: &Superposition, tau: f64, y: State) -> Result<State> {
    let l0 = sup.params().l0;
    if !tau.is_finite() || !y.iter().all(|&c| c > 0.0 && c < l0) {
        return Err(Error::Domain(format!("companion point ({}, {}) at τ={tau} outside the box", y[0], y[1])));
    }
    guidance(sup, tau, tau, y, l0)
}

struct ExpandingField<'a>(&'a Superposition);

impl Field for ExpandingField<'_> {
    #[inline]
    fn eval(&self, t: f64, x: State) -> Result<State> {
        let p = self.0.params();
        if t < 0.0 {
            return Err(Error::Domain(format!("time {t} before the expansion starts")));
        }
        let side = p.side(t);
        let x = clamp_into(t, x, side)?;
        let q = guidance(self.0, p.tau(t), t, x, side)?;
        let drift = p.v_expand / side;
        Ok([x[0] * drift + q[0], x[1] * drift + q[1]])
    }

    fn admit(&self, t: f64, x: State) -> Result<State> {
        clamp_into(t, x, self.0.params().side(t))
    }
}

/// Position plus `ln ρ`, which changes at rate `-∇·v` along the flow.
struct DensityField<'a>(&'a Superposition);

impl Field<3> for DensityField<'_> {
    #[inline]
    fn eval(&self, t: f64, z: [f64; 3]) -> Result<[f64; 3]> {
        if t < 0.0 {
            return Err(Error::Domain(format!("time {t} before the expansion starts")));
        }
        let side = self.0.params().side(t);
        let x = clamp_into(t, [z[0], z[1]], side)?;
        let (v1, v2, div) = velocity_and_divergence(self.0, t, x, side)?;
        Ok([v1, v2, -div])
    }

    fn admit(&self, t: f64, z: [f64; 3]) -> Result<[f64; 3]> {
        let x = clamp_into(t, [z[0], z[1]], self.0.params().side(t))?;
        Ok([x[0], x[1], z[2]])
    }
}

struct FixedField<'a>(&'a Superposition);

impl Field for FixedField<'_> {
    #[inline]
    fn eval(&self, tau: f64, y: State) -> Result<State> {
        let l0 = self.0.params().l0;
        let y = clamp_into(tau, y, l0)?;
        guidance(self.0, tau, tau, y, l0)
    }

    fn admit(&self, tau: f64, y: State) -> Result<State> {
        clamp_into(tau, y, self.0.params().l0)
    }
}

/// A solved trajectory: accepted nodes plus the per-step interpolants.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPath {
    pub t_start: f64,
    pub t_end: f64,
    /// `(t, x)` at the start and after every accepted step.
    pub nodes: Vec<(f64, State)>,
    steps: Vec<DenseStep>,
}

impl TrajectoryPath {
    pub fn is_forward(&self) -> bool {
        self.t_end >= self.t_start
    }

    pub fn final_position(&self) -> State {
        self.nodes.last().map(|n| n.1).expect("path has a start node")
    }

    pub fn steps(&self) -> &[DenseStep] {
        &self.steps
    }

    /// Position at any time between `t_start` and `t_end`.
    pub fn position_at(&self, t: f64) -> Result<State> {
        let (lo, hi) = if self.is_forward() { (self.t_start, self.t_end) } else { (self.t_end, self.t_start) };
        if !(lo..=hi).contains(&t) {
            return Err(Error::Domain(format!("time {t} outside trajectory span [{lo}, {hi}]")));
        }
        if self.steps.is_empty() {
            return Ok(self.nodes[0].1);
        }
        if t == self.t_end {
            return Ok(self.final_position());
        }
        let fwd = self.is_forward();
        // first step whose far end lies at or beyond t in the direction of travel
        let i = self.steps.partition_point(|s| if fwd { s.t_new() < t } else { s.t_new() > t });
        let s = &self.steps[i.min(self.steps.len() - 1)];
        Ok(s.eval(t))
    }

    /// CSV with header `t,x1,x2`, one row per node.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "x1", "x2"])?;
        for (t, x) in &self.nodes {
            wr.write_record([t.to_string(), x[0].to_string(), x[1].to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn solve_path<F: Field>(field: &F, x0: State, t0: f64, t1: f64, tol: f64) -> Result<TrajectoryPath> {
    let mut steps = Vec::new();
    let mut nodes = Vec::new();
    let start = field.admit(t0, x0)?;
    nodes.push((t0, start));
    let end = ode::integrate(field, t0, start, t1, &solver_options(tol), |s| {
        steps.push(*s);
    })?;
    for s in &steps {
        nodes.push((s.t_new(), s.eval(s.t_new())));
    }
    if let Some(n) = nodes.last_mut() {
        n.0 = t1;
        n.1 = end;
    }
    Ok(TrajectoryPath { t_start: t0, t_end: t1, nodes, steps })
}

fn check_start(sup: &Superposition, x0: State, t0: f64, t1: f64) -> Result<()> {
    check_nonneg(t0)?;
    check_nonneg(t1)?;
    let side = sup.params().side(t0);
    if !x0.iter().all(|&c| c > 0.0 && c < side) {
        return Err(Error::Domain(format!("start ({}, {}) not inside the box at t={t0}", x0[0], x0[1])));
    }
    Ok(())
}

/// Solves the guidance equation from `(t0, x0)` to `t1`; `t1 < t0` runs backward.
pub fn integrate_trajectory(sup: &Superposition, x0: State, t0: f64, t1: f64, tol: f64) -> Result<TrajectoryPath> {
    check_start(sup, x0, t0, t1)?;
    solve_path(&ExpandingField(sup), x0, t0, t1, tol)
}

/// Endpoint of the flow from `(t0, x0)` to `t1` without recording the path.
pub fn flow_to(sup: &Superposition, x0: State, t0: f64, t1: f64, tol: f64) -> Result<State> {
    check_start(sup, x0, t0, t1)?;
    ode::integrate(&ExpandingField(sup), t0, x0, t1, &solver_options(tol), |_| {})
}

/// Flows from `(t0, x0)` forward and reports the state at each of `times`
/// (which must be sorted, within `[t0, t_end]`).
pub fn flow_sampled(sup: &Superposition, x0: State, t0: f64, times: &[f64], tol: f64) -> Result<Vec<State>> {
    let Some(&t_end) = times.last() else { return Ok(Vec::new()) };
    check_start(sup, x0, t0, t_end)?;
    let field = ExpandingField(sup);
    let mut out = Vec::with_capacity(times.len());
    let mut next = 0;
    while next < times.len() && times[next] <= t0 {
        out.push(field.admit(t0, x0)?);
        next += 1;
    }
    let end = ode::integrate(&field, t0, x0, t_end, &solver_options(tol), |s| {
        while next < times.len() && times[next] < s.t_new() {
            out.push(s.eval(times[next]));
            next += 1;
        }
    })?;
    while out.len() < times.len() {
        out.push(end);
    }
    Ok(out)
}

/// Flows `(t0, x0)` to `t1` carrying a log-density along: returns the
/// endpoint and `ln ρ(t1) - ln ρ(t0) = -∫ ∇·v dt`, integrated together with
/// the position under the same error control.
pub fn flow_with_log_density(sup: &Superposition, x0: State, t0: f64, t1: f64, tol: f64) -> Result<(State, f64)> {
    check_start(sup, x0, t0, t1)?;
    let z = ode::integrate(&DensityField(sup), t0, [x0[0], x0[1], 0.0], t1, &solver_options(tol), |_| {})?;
    Ok(([z[0], z[1]], z[2]))
}

/// As [`integrate_trajectory`] for the static box of side `L0` in companion time.
pub fn integrate_fixed_trajectory(sup: &Superposition, y0: State, tau0: f64, tau1: f64, tol: f64) -> Result<TrajectoryPath> {
    check_fixed_start(sup, y0, tau0, tau1)?;
    solve_path(&FixedField(sup), y0, tau0, tau1, tol)
}

pub fn fixed_flow_to(sup: &Superposition, y0: State, tau0: f64, tau1: f64, tol: f64) -> Result<State> {
    check_fixed_start(sup, y0, tau0, tau1)?;
    ode::integrate(&FixedField(sup), tau0, y0, tau1, &solver_options(tol), |_| {})
}

fn check_fixed_start(sup: &Superposition, y0: State, tau0: f64, tau1: f64) -> Result<()> {
    if !(tau0.is_finite() && tau1.is_finite()) {
        return Err(Error::Domain("companion times must be finite".into()));
    }
    let l0 = sup.params().l0;
    if !y0.iter().all(|&c| c > 0.0 && c < l0) {
        return Err(Error::Domain(format!("start ({}, {}) not inside the static box", y0[0], y0[1])));
    }
    Ok(())
}
