// SPDX-License-Identifier: Apache-2.0

//! Initial non-equilibrium densities, sampling, and Liouville transport.
//!
//! Along every trajectory `ρ/|ψ|²` is conserved, so the density at `(t, x)`
//! is `|ψ(t, x)|²` times the initial ratio at the back-tracked point.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cells::CellArray;
use crate::dynamics;
use crate::ode::State;
use crate::error::{Error, Result};
use crate::quad;
use crate::wavefunction::{psi_density, Superposition};

/// Initial ratio is refused when `|ψ(t0)|²` drops below this times `4/L0²`.
pub const RATIO_FLOOR: f64 = 1e-24;

/// Particles drawn per random stream; streams are keyed by chunk index.
pub const SAMPLE_CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub enum DistKind {
    /// `|ψ(t0, x)|²`.
    Equilibrium,
    /// `(4/L²) sin²(π x1/L) sin²(π x2/L)`, the ground-state density.
    Rho0,
    /// Cell averages of `|ψ(t0)|²` on cells of side `cg_length`.
    Rho1 { cg_length: f64, cells: CellArray },
    /// `(1 - w)|ψ(t0)|² + w ρ0`.
    Rho2 { mix_weight: f64 },
    /// Piecewise-constant density given per cell.
    Grid { values: CellArray, cell_length: f64 },
}

impl DistKind {
    pub fn name(&self) -> &'static str {
        match self {
            DistKind::Equilibrium => "equilibrium",
            DistKind::Rho0 => "rho0",
            DistKind::Rho1 { .. } => "rho1",
            DistKind::Rho2 { .. } => "rho2",
            DistKind::Grid { .. } => "grid",
        }
    }
}

/// A density on the box at `t0`, tied to the wavefunction it is compared with.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialDistribution {
    pub kind: DistKind,
    pub t0: f64,
    pub sup: Superposition,
}

fn check_t0(t0: f64) -> Result<()> {
    if t0.is_finite() && t0 >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("initial time must be finite and >= 0, got {t0}")))
    }
}

/// `C` with `C · cell = side`, if `cell` divides the side.
fn cells_per_side(side: f64, cell: f64) -> Result<usize> {
    if !(cell.is_finite() && cell > 0.0) {
        return Err(Error::config(format!("cell length must be > 0, got {cell}")));
    }
    let c = (side / cell).round();
    if c < 1.0 || ((c * cell - side) / side).abs() > 1e-12 {
        return Err(Error::config(format!(
            "cell length {cell} does not divide the box side {side}"
        )));
    }
    Ok(c as usize)
}

impl InitialDistribution {
    pub fn equilibrium(sup: Superposition, t0: f64) -> Result<Self> {
        check_t0(t0)?;
        Ok(Self { kind: DistKind::Equilibrium, t0, sup })
    }

    pub fn rho0(sup: Superposition, t0: f64) -> Result<Self> {
        check_t0(t0)?;
        Ok(Self { kind: DistKind::Rho0, t0, sup })
    }

    pub fn rho2(sup: Superposition, t0: f64, mix_weight: f64) -> Result<Self> {
        check_t0(t0)?;
        if !(0.0..=1.0).contains(&mix_weight) {
            return Err(Error::config(format!("mix_weight must lie in [0, 1], got {mix_weight}")));
        }
        Ok(Self { kind: DistKind::Rho2 { mix_weight }, t0, sup })
    }

    /// Piecewise-constant density; `values` are rescaled to unit mass.
    pub fn grid(sup: Superposition, t0: f64, values: CellArray, cell_length: f64) -> Result<Self> {
        check_t0(t0)?;
        let side = sup.params().side(t0);
        let c = cells_per_side(side, cell_length)?;
        if values.side() != c {
            return Err(Error::config(format!(
                "grid has {} cells per side but cell length {cell_length} needs {c}",
                values.side()
            )));
        }
        if values.values().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("grid values must be finite and nonnegative"));
        }
        let mass = values.sum() * cell_length * cell_length;
        if mass <= 0.0 {
            return Err(Error::config("grid density has zero mass"));
        }
        let values = values.map(|v| v / mass);
        Ok(Self { kind: DistKind::Grid { values, cell_length }, t0, sup })
    }

    pub fn side(&self) -> f64 {
        self.sup.params().side(self.t0)
    }
}

/// Coarse-grains `|ψ(t0)|²` on cells of side `cg_length` by per-cell quadrature.
pub fn build_rho1(sup: &Superposition, t0: f64, cg_length: f64) -> Result<InitialDistribution> {
    check_t0(t0)?;
    let side = sup.params().side(t0);
    let c = cells_per_side(side, cg_length)?;
    // |ψ|² has wavenumbers up to 2 n_max π/L; 24 nodes per cell per direction
    // resolve it far below 1e-12 for the cell sizes of interest
    let rule = quad::gauss_legendre(24);
    let mut cells = CellArray::filled(c, 0.0);
    for a in 0..c {
        for b in 0..c {
            let xa = (a as f64 * cg_length, ((a + 1) as f64 * cg_length).min(side));
            let xb = (b as f64 * cg_length, ((b + 1) as f64 * cg_length).min(side));
            let integral = quad::integrate_rect(&rule, xa, xb, |x1, x2| {
                psi_density(sup, t0, [x1, x2]).unwrap_or(0.0)
            });
            cells.set(a, b, integral / (cg_length * cg_length));
        }
    }
    Ok(InitialDistribution { kind: DistKind::Rho1 { cg_length, cells }, t0, sup: sup.clone() })
}

fn rho0_value(x: State, side: f64) -> f64 {
    let s1 = (PI * x[0] / side).sin();
    let s2 = (PI * x[1] / side).sin();
    4.0 / (side * side) * s1 * s1 * s2 * s2
}

fn cell_value(cells: &CellArray, cell: f64, x: State) -> f64 {
    let c = cells.side();
    let a = ((x[0] / cell) as usize).min(c - 1);
    let b = ((x[1] / cell) as usize).min(c - 1);
    cells.get(a, b)
}

pub fn eval_initial_density(dist: &InitialDistribution, x: State) -> Result<f64> {
    let side = dist.side();
    if !x.iter().all(|&c| (0.0..=side).contains(&c)) {
        return Err(Error::Domain(format!(
            "({}, {}) outside the initial box [0, {side}]²",
            x[0], x[1]
        )));
    }
    Ok(match &dist.kind {
        DistKind::Equilibrium => psi_density(&dist.sup, dist.t0, x)?,
        DistKind::Rho0 => rho0_value(x, side),
        DistKind::Rho1 { cg_length, cells } => cell_value(cells, *cg_length, x),
        DistKind::Rho2 { mix_weight } => {
            (1.0 - mix_weight) * psi_density(&dist.sup, dist.t0, x)? + mix_weight * rho0_value(x, side)
        }
        DistKind::Grid { values, cell_length } => cell_value(values, *cell_length, x),
    })
}

/// `ρ(t0, x)/|ψ(t0, x)|²`, the quantity carried unchanged along trajectories.
pub fn initial_ratio(dist: &InitialDistribution, x: State) -> Result<f64> {
    let psi_sq = psi_density(&dist.sup, dist.t0, x)?;
    let l0 = dist.sup.params().l0;
    if psi_sq < RATIO_FLOOR * 4.0 / (l0 * l0) {
        return Err(Error::SingularRatio { x, psi_sq });
    }
    let rho = match &dist.kind {
        DistKind::Equilibrium => return Ok(1.0),
        _ => eval_initial_density(dist, x)?,
    };
    Ok(rho / psi_sq)
}

/// Density at `(t, x)` obtained by tracking `x` back to `t0`.
pub fn transport_density(dist: &InitialDistribution, t: f64, x: State, tol: f64) -> Result<f64> {
    let sup = &dist.sup;
    let side = sup.params().side(t);
    if !(t.is_finite() && t >= 0.0) || !x.iter().all(|&c| c > 0.0 && c < side) {
        return Err(Error::Domain(format!("({}, {}) not inside the box at t={t}", x[0], x[1])));
    }
    if t == dist.t0 {
        return eval_initial_density(dist, x);
    }
    let back = dynamics::flow_to(sup, x, t, dist.t0, tol)?;
    Ok(psi_density(sup, t, x)? * initial_ratio(dist, back)?)
}

/// Sampled positions at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet {
    pub positions: Vec<State>,
    pub t: f64,
    pub seed: u64,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// CSV `x1,x2`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x1", "x2"])?;
        for x in &self.positions {
            wr.write_record([x[0].to_string(), x[1].to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R, t: f64, seed: u64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut positions = Vec::new();
        for rec in rd.deserialize::<(f64, f64)>() {
            let (a, b) = rec?;
            positions.push([a, b]);
        }
        Ok(Self { positions, t, seed })
    }
}

/// Upper bound on the density: grid scan, then compass refinement of the
/// best few candidates.
pub fn density_maximum(dist: &InitialDistribution) -> Result<f64> {
    match &dist.kind {
        DistKind::Rho1 { cells, .. } | DistKind::Grid { values: cells, .. } => {
            return Ok(cells.values().iter().cloned().fold(0.0, f64::max));
        }
        DistKind::Rho0 => {
            let side = dist.side();
            return Ok(4.0 / (side * side));
        }
        _ => {}
    }
    let side = dist.side();
    let n = 128;
    let h = side / n as f64;
    let mut cand: Vec<(f64, State)> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let x = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
            cand.push((eval_initial_density(dist, x)?, x));
        }
    }
    cand.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = cand[0].0;
    for &(v0, x0) in cand.iter().take(8) {
        let (mut v, mut x, mut step) = (v0, x0, h / 2.0);
        while step > 1e-9 * side {
            let mut moved = false;
            for d in [[step, 0.0], [-step, 0.0], [0.0, step], [0.0, -step]] {
                let y = [(x[0] + d[0]).clamp(0.0, side), (x[1] + d[1]).clamp(0.0, side)];
                let vy = eval_initial_density(dist, y)?;
                if vy > v {
                    (v, x, moved) = (vy, y, true);
                }
            }
            if !moved {
                step /= 2.0;
            }
        }
        best = best.max(v);
    }
    Ok(best)
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

/// Draws `count` points from `dist` with the random stream of `chunk`.
pub(crate) fn sample_chunk(dist: &InitialDistribution, bound: f64, seed: u64, chunk: usize, count: usize) -> Result<Vec<State>> {
    let side = dist.side();
    let mut rng = chunk_rng(seed, chunk);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = [side * rng.gen::<f64>(), side * rng.gen::<f64>()];
        let u: f64 = rng.gen();
        if x[0] == 0.0 || x[1] == 0.0 {
            continue;
        }
        let v = eval_initial_density(dist, x)?;
        if v > bound {
            return Err(Error::Envelope { value: v, bound });
        }
        if u * bound < v {
            out.push(x);
        }
    }
    Ok(out)
}

/// Rejection sampling with a uniform proposal and envelope `1.05 × max ρ`.
///
/// Chunk `k` of [`SAMPLE_CHUNK`] particles always uses stream `k` of the
/// seeded generator, so the result does not depend on the thread count.
pub fn sample(dist: &InitialDistribution, count: usize, seed: u64) -> Result<ParticleSet> {
    if count == 0 {
        return Err(Error::config("sample size must be >= 1"));
    }
    let bound = 1.05 * density_maximum(dist)?;
    let chunks = count.div_ceil(SAMPLE_CHUNK);
    let parts: Vec<Vec<State>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let n = SAMPLE_CHUNK.min(count - k * SAMPLE_CHUNK);
            sample_chunk(dist, bound, seed, k, n)
        })
        .collect::<Result<_>>()?;
    Ok(ParticleSet { positions: parts.concat(), t: dist.t0, seed })
}

/// Reads a grid density: header `cells=<C> length=<cell_length>` followed by
/// `C` rows of `C` whitespace- or comma-separated values, row index `a` (x1).
pub fn read_grid<R: BufRead>(r: R) -> Result<(CellArray, f64)> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty grid file".into()))??;
    let mut cells = None;
    let mut length = None;
    for tok in header.split_whitespace() {
        match tok.split_once('=') {
            Some(("cells", v)) => cells = v.parse::<usize>().ok(),
            Some(("length", v)) => length = v.parse::<f64>().ok(),
            _ => return Err(Error::Parse(format!("unexpected header token {tok:?}"))),
        }
    }
    let (Some(c), Some(len)) = (cells, length) else {
        return Err(Error::Parse(format!("header must read `cells=<C> length=<L>`, got {header:?}")));
    };
    let mut values = Vec::with_capacity(c * c);
    for line in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for tok in line.split(|ch: char| ch == ',' || ch.is_whitespace()).filter(|s| !s.is_empty()) {
            values.push(tok.parse::<f64>().map_err(|e| Error::Parse(format!("{tok:?}: {e}")))?);
        }
    }
    let arr = CellArray::from_values(c, values)
        .ok_or_else(|| Error::Parse(format!("expected {} values for {c}×{c} cells", c * c)))?;
    Ok((arr, len))
}

pub fn load_grid(path: &Path, sup: Superposition, t0: f64) -> Result<InitialDistribution> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let (values, len) = read_grid(std::io::BufReader::new(f))?;
    InitialDistribution::grid(sup, t0, values, len)
}

pub fn write_grid<W: Write>(mut w: W, values: &CellArray, cell_length: f64) -> Result<()> {
    writeln!(w, "cells={} length={}", values.side(), cell_length)?;
    for a in 0..values.side() {
        let row: Vec<String> = (0..values.side()).map(|b| values.get(a, b).to_string()).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}
