// SPDX-License-Identifier: Apache-2.0

//! Exact modes of the uniformly expanding square box and their superpositions.
//!
//! A mode `(n1, n2)` on the box `[0, L(t)]²`, `L(t) = L0 + v t`, is
//!
//! ```text
//! (2/L) exp(-i E τ/ħ) exp(i m v |x|²/(2 ħ L)) sin(n1 π x1/L) sin(n2 π x2/L)
//! ```
//!
//! with `τ = t/s(t)`, `s = L/L0` and `E = ħ²π²(n1²+n2²)/(2 m L0²)`. The
//! companion system is the static box of side `L0` evolving in `τ`, whose
//! eigenstates drop the chirp factor and use `2/L0`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest quantum number accepted for a single direction.
pub const MAX_QUANTUM: u32 = 64;

/// `(n1, n2, φ/2π)` rows of the ten-mode reference wavefunction.
pub const APPENDIX_TABLE: [(u32, u32, f64); 10] = [
    (1, 1, 0.5007885937046778),
    (1, 2, 0.2563559569433025),
    (2, 1, 0.0577194737040234),
    (2, 2, 0.5942444602612857),
    (1, 3, 0.9461819879073565),
    (3, 1, 0.5466682505848018),
    (2, 3, 0.1652644360494799),
    (3, 2, 0.3915951186360821),
    (1, 4, 0.9067195609839858),
    (4, 1, 0.4541288770927727),
];

/// Physical constants and box geometry in simulation units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    pub hbar: f64,
    pub mass: f64,
    /// Initial side length.
    pub l0: f64,
    /// Wall speed. Zero gives the static box.
    pub v_expand: f64,
}

impl PhysParams {
    pub fn new(hbar: f64, mass: f64, l0: f64, v_expand: f64) -> Result<Self> {
        let mut bad = Vec::new();
        for (name, v) in [("hbar", hbar), ("mass", mass), ("l0", l0)] {
            if !(v.is_finite() && v > 0.0) {
                bad.push(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if !(v_expand.is_finite() && v_expand >= 0.0) {
            bad.push(format!("v_expand must be finite and >= 0, got {v_expand}"));
        }
        if bad.is_empty() {
            Ok(Self { hbar, mass, l0, v_expand })
        } else {
            Err(Error::Config(bad))
        }
    }

    /// `ħ = m = L0 = 1` with the given wall speed.
    pub fn natural(v_expand: f64) -> Self {
        Self { hbar: 1.0, mass: 1.0, l0: 1.0, v_expand }
    }

    pub fn with_v_expand(self, v_expand: f64) -> Result<Self> {
        Self::new(self.hbar, self.mass, self.l0, v_expand)
    }

    /// Side length `L(t)`.
    #[inline]
    pub fn side(&self, t: f64) -> f64 {
        self.l0 + self.v_expand * t
    }

    /// `s(t) = L(t)/L0`.
    #[inline]
    pub fn scale(&self, t: f64) -> f64 {
        1.0 + self.v_expand * t / self.l0
    }

    /// `τ(t) = t/s(t)`.
    #[inline]
    pub fn tau(&self, t: f64) -> f64 {
        t / self.scale(t)
    }

    /// `ħ²π²/(2 m L0²)`; mode energies are integer multiples of this.
    #[inline]
    pub fn energy_unit(&self) -> f64 {
        self.hbar * self.hbar * PI * PI / (2.0 * self.mass * self.l0 * self.l0)
    }
}

impl Default for PhysParams {
    fn default() -> Self {
        Self::natural(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mode {
    pub n1: u32,
    pub n2: u32,
}

impl Mode {
    pub fn new(n1: u32, n2: u32) -> Result<Self> {
        if n1 == 0 || n2 == 0 || n1 > MAX_QUANTUM || n2 > MAX_QUANTUM {
            return Err(Error::Domain(format!(
                "mode ({n1}, {n2}): quantum numbers must lie in 1..={MAX_QUANTUM}"
            )));
        }
        Ok(Self { n1, n2 })
    }

    /// `n1² + n2²`, the energy in units of [`PhysParams::energy_unit`].
    #[inline]
    pub fn shell(&self) -> u32 {
        self.n1 * self.n1 + self.n2 * self.n2
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.n1, self.n2)
    }
}

pub fn mode_energy(mode: Mode, params: &PhysParams) -> f64 {
    params.energy_unit() * mode.shell() as f64
}

/// The first `n` modes in order of increasing energy.
///
/// Complete shells are included whole, in lexicographic `(n1, n2)` order. If
/// the last shell only partly fits, its members are drawn uniformly without
/// replacement from `rng` and kept in lexicographic order.
pub fn order_modes<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Mode> {
    let mut out = Vec::with_capacity(n);
    let mut shell = 2u32;
    while out.len() < n {
        let members = shell_members(shell);
        let room = n - out.len();
        if members.len() <= room {
            out.extend(members);
        } else {
            let mut picked = index::sample(rng, members.len(), room).into_vec();
            picked.sort_unstable();
            out.extend(picked.into_iter().map(|i| members[i]));
        }
        shell += 1;
    }
    out
}

fn shell_members(shell: u32) -> Vec<Mode> {
    let mut v = Vec::new();
    let mut n1 = 1u32;
    while n1 * n1 < shell {
        let rest = shell - n1 * n1;
        let n2 = (rest as f64).sqrt().round() as u32;
        if n2 >= 1 && n2 * n2 == rest && n1 <= MAX_QUANTUM && n2 <= MAX_QUANTUM {
            v.push(Mode { n1, n2 });
        }
        n1 += 1;
    }
    v
}

/// Sums over modes shared by the wavefunction and the guidance field.
///
/// With `a_n = e^{iφ_n} e^{-iE_n τ/ħ}/√N` and `θ_k = π x_k/L`:
/// `s = Σ a_n sin(n1 θ1) sin(n2 θ2)`, `d1 = Σ a_n n1 cos(n1 θ1) sin(n2 θ2)`,
/// `d2 = Σ a_n n2 sin(n1 θ1) cos(n2 θ2)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ModeSums {
    pub s: Complex64,
    pub d1: Complex64,
    pub d2: Complex64,
    /// `Σ a_n (n1² + n2²) sin sin`, giving the Laplacian.
    pub lap: Complex64,
}

/// An equal-weight superposition of distinct modes with fixed phases.
#[derive(Clone, Debug, PartialEq)]
pub struct Superposition {
    modes: Vec<Mode>,
    /// Phases as fractions of a full turn, in `[0, 1)`.
    turns: Vec<f64>,
    params: PhysParams,
    amps: Vec<Complex64>,
    n_max: u32,
    max_shell: u32,
}

impl Superposition {
    /// Phases are given as `φ/2π` and reduced into `[0, 1)`.
    pub fn new(modes: Vec<Mode>, phase_turns: Vec<f64>, params: PhysParams) -> Result<Self> {
        let mut bad = Vec::new();
        if modes.is_empty() {
            bad.push("superposition needs at least one mode".to_string());
        }
        if modes.len() != phase_turns.len() {
            bad.push(format!(
                "{} modes but {} phases",
                modes.len(),
                phase_turns.len()
            ));
        }
        let mut sorted = modes.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            bad.push("modes must be pairwise distinct".to_string());
        }
        if let Some(p) = phase_turns.iter().find(|p| !p.is_finite()) {
            bad.push(format!("non-finite phase {p}"));
        }
        for m in &modes {
            if let Err(e) = Mode::new(m.n1, m.n2) {
                bad.push(e.to_string());
            }
        }
        if !bad.is_empty() {
            return Err(Error::Config(bad));
        }
        let turns: Vec<f64> = phase_turns
            .into_iter()
            .map(|p| if (0.0..1.0).contains(&p) { p } else { p.rem_euclid(1.0) })
            .collect();
        let norm = 1.0 / (modes.len() as f64).sqrt();
        let amps = turns
            .iter()
            .map(|&p| Complex64::from_polar(norm, 2.0 * PI * p))
            .collect();
        let n_max = modes.iter().map(|m| m.n1.max(m.n2)).max().unwrap_or(1);
        let max_shell = modes.iter().map(Mode::shell).max().unwrap_or(2);
        Ok(Self { modes, turns, params, amps, n_max, max_shell })
    }

    /// The ten-mode reference wavefunction.
    pub fn appendix(params: PhysParams) -> Self {
        let modes = APPENDIX_TABLE.iter().map(|&(a, b, _)| Mode { n1: a, n2: b }).collect();
        let turns = APPENDIX_TABLE.iter().map(|&(_, _, p)| p).collect();
        Self::new(modes, turns, params).expect("reference table is valid")
    }

    /// First `n` modes (see [`order_modes`]) with uniformly random phases.
    pub fn random<R: Rng + ?Sized>(n: usize, params: PhysParams, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("superposition needs at least one mode"));
        }
        let modes = order_modes(n, rng);
        let turns = (0..n).map(|_| rng.gen::<f64>()).collect();
        Self::new(modes, turns, params)
    }

    pub fn single(mode: Mode, params: PhysParams) -> Self {
        Self::new(vec![mode], vec![0.0], params).expect("single mode is valid")
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Phases `φ/2π`.
    pub fn phase_turns(&self) -> &[f64] {
        &self.turns
    }

    /// Phases in radians, `[0, 2π)`.
    pub fn phases(&self) -> Vec<f64> {
        self.turns.iter().map(|p| 2.0 * PI * p).collect()
    }

    pub fn params(&self) -> &PhysParams {
        &self.params
    }

    /// Same modes and phases under different physical parameters.
    pub fn with_params(&self, params: PhysParams) -> Self {
        Self { params, ..self.clone() }
    }

    /// Rows `n,n1,n2,phase_over_2pi`, one per mode.
    pub fn to_table(&self) -> String {
        let mut s = String::from("n,n1,n2,phase_over_2pi\n");
        for (i, (m, p)) in self.modes.iter().zip(&self.turns).enumerate() {
            let _ = writeln!(s, "{},{},{},{}", i + 1, m.n1, m.n2, p);
        }
        s
    }

    pub fn from_table(text: &str, params: PhysParams) -> Result<Self> {
        let mut modes = Vec::new();
        let mut turns = Vec::new();
        let mut rows = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        match rows.next() {
            Some(h) if h.replace(' ', "") == "n,n1,n2,phase_over_2pi" => {}
            other => {
                return Err(Error::Parse(format!(
                    "expected header `n,n1,n2,phase_over_2pi`, got {other:?}"
                )))
            }
        }
        for (i, row) in rows.enumerate() {
            let cols: Vec<&str> = row.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(Error::Parse(format!("row {}: expected 4 columns: {row}", i + 1)));
            }
            let parse_u = |s: &str| {
                s.parse::<u32>()
                    .map_err(|e| Error::Parse(format!("row {}: {s:?}: {e}", i + 1)))
            };
            let n1 = parse_u(cols[1])?;
            let n2 = parse_u(cols[2])?;
            let p = cols[3]
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {}: {:?}: {e}", i + 1, cols[3])))?;
            modes.push(Mode::new(n1, n2)?);
            turns.push(p);
        }
        Self::new(modes, turns, params)
    }

    /// Mode sums at time `tau` (companion time) and angles `θ_k = π x_k/L`.
    #[inline]
    pub(crate) fn sums(&self, tau: f64, th1: f64, th2: f64) -> ModeSums {
        match self.n_max {
            0..=4 => self.sums_with::<5>(tau, th1, th2),
            5..=8 => self.sums_with::<9>(tau, th1, th2),
            9..=16 => self.sums_with::<17>(tau, th1, th2),
            _ => self.sums_with::<65>(tau, th1, th2),
        }
    }

    #[inline]
    fn sums_with<const M: usize>(&self, tau: f64, th1: f64, th2: f64) -> ModeSums {
        let n = self.n_max as usize;
        let mut t1 = [Complex64::new(1.0, 0.0); M];
        let mut t2 = [Complex64::new(1.0, 0.0); M];
        let (s1, c1) = th1.sin_cos();
        let (s2, c2) = th2.sin_cos();
        let w1 = Complex64::new(c1, s1);
        let w2 = Complex64::new(c2, s2);
        for k in 1..=n {
            t1[k] = t1[k - 1] * w1;
            t2[k] = t2[k - 1] * w2;
        }
        let omega = self.params.energy_unit() / self.params.hbar * tau;
        // time factors e^{-iωkτ} for every shell k up to 32 by repeated products
        let mut shells = [Complex64::new(1.0, 0.0); 33];
        let table = self.max_shell <= 32;
        if table {
            let (sn, cs) = (-omega).sin_cos();
            let z = Complex64::new(cs, sn);
            for k in 1..=self.max_shell as usize {
                shells[k] = shells[k - 1] * z;
            }
        }
        let mut s = Complex64::new(0.0, 0.0);
        let mut d1 = s;
        let mut d2 = s;
        let mut lap = s;
        for (m, a) in self.modes.iter().zip(&self.amps) {
            let tf = if table {
                shells[m.shell() as usize]
            } else {
                let (sn, cs) = (-omega * m.shell() as f64).sin_cos();
                Complex64::new(cs, sn)
            };
            let a = a * tf;
            let (k1, k2) = (m.n1 as usize, m.n2 as usize);
            let (sin1, cos1) = (t1[k1].im, t1[k1].re);
            let (sin2, cos2) = (t2[k2].im, t2[k2].re);
            let ss = a * (sin1 * sin2);
            s += ss;
            lap += ss * m.shell() as f64;
            d1 += a * (m.n1 as f64 * cos1 * sin2);
            d2 += a * (m.n2 as f64 * sin1 * cos2);
        }
        ModeSums { s, d1, d2, lap }
    }

    /// `Σ a_n sin sin` only, for density evaluation.
    #[inline]
    pub(crate) fn amplitude_sum(&self, tau: f64, th1: f64, th2: f64) -> Complex64 {
        self.sums(tau, th1, th2).s
    }
}

fn check_box(x: [f64; 2], side: f64, what: &str) -> Result<()> {
    if x.iter().all(|&c| (0.0..=side).contains(&c)) {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{what} ({}, {}) outside [0, {side}]²",
            x[0], x[1]
        )))
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("time {t} must be finite and >= 0")))
    }
}

/// Chirp factor `exp(i m v |x|²/(2 ħ L))` carried by every expanding mode.
#[inline]
fn chirp(params: &PhysParams, x: [f64; 2], side: f64) -> Complex64 {
    let arg = params.mass * params.v_expand * (x[0] * x[0] + x[1] * x[1])
        / (2.0 * params.hbar * side);
    Complex64::from_polar(1.0, arg)
}

pub fn eval_mode(mode: Mode, t: f64, x: [f64; 2], params: &PhysParams) -> Result<Complex64> {
    check_time(t)?;
    let side = params.side(t);
    check_box(x, side, "position")?;
    let tau = params.tau(t);
    let phase = Complex64::from_polar(1.0, -mode_energy(mode, params) * tau / params.hbar);
    let spatial = (mode.n1 as f64 * PI * x[0] / side).sin() * (mode.n2 as f64 * PI * x[1] / side).sin();
    Ok(phase * chirp(params, x, side) * (2.0 / side * spatial))
}

pub fn eval_psi(sup: &Superposition, t: f64, x: [f64; 2]) -> Result<Complex64> {
    check_time(t)?;
    let p = sup.params();
    let side = p.side(t);
    check_box(x, side, "position")?;
    let s = sup.amplitude_sum(p.tau(t), PI * x[0] / side, PI * x[1] / side);
    Ok(chirp(p, x, side) * s * (2.0 / side))
}

/// `|ψ(t, x)|²`.
pub fn psi_density(sup: &Superposition, t: f64, x: [f64; 2]) -> Result<f64> {
    check_time(t)?;
    let p = sup.params();
    let side = p.side(t);
    check_box(x, side, "position")?;
    let s = sup.amplitude_sum(p.tau(t), PI * x[0] / side, PI * x[1] / side);
    Ok(s.norm_sqr() * (2.0 / side) * (2.0 / side))
}

/// The static-box companion wavefunction at companion time `tau`.
pub fn eval_fixed_psi(sup: &Superposition, tau: f64, y: [f64; 2]) -> Result<Complex64> {
    if !tau.is_finite() {
        return Err(Error::Domain(format!("companion time {tau} not finite")));
    }
    let l0 = sup.params().l0;
    check_box(y, l0, "companion position")?;
    let s = sup.amplitude_sum(tau, PI * y[0] / l0, PI * y[1] / l0);
    Ok(s * (2.0 / l0))
}

/// `|ψ'(τ, y)|²` in the static companion box.
pub fn fixed_psi_density(sup: &Superposition, tau: f64, y: [f64; 2]) -> Result<f64> {
    Ok(eval_fixed_psi(sup, tau, y)?.norm_sqr())
}
