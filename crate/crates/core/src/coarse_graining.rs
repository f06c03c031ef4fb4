// SPDX-License-Identifier: Apache-2.0

//! Coarse-graining cells, lattice averages, and the H-function estimators.

use rayon::prelude::*;

use crate::cells::CellArray;
use crate::dynamics;
use crate::ensembles::{initial_ratio, DistKind, InitialDistribution, ParticleSet};
use crate::error::{Error, Result};
use crate::ode::State;
use crate::wavefunction::{fixed_psi_density, psi_density, PhysParams, Superposition};

/// Guard inside the logarithm of `h̄`.
pub const LOG_GUARD: f64 = 1e-300;

/// Cells whose equilibrium mass `ε²·|ψ|²̄` is below this are left out of `f̄`.
pub const EQ_MASS_FLOOR: f64 = 1e-12;

/// Largest tolerated fraction of failed lattice points or particles.
pub const FAIL_SOFT_FRACTION: f64 = 1e-3;

/// `C × C` cells of side `eps` covering a box of side `side`, each carrying
/// `D × D` lattice points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CGGrid {
    eps: f64,
    cells: usize,
    per_cell: usize,
    side: f64,
}

impl CGGrid {
    pub fn new(eps: f64, per_cell: usize, side: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0 && side.is_finite() && side > 0.0) {
            return Err(Error::config(format!("cell length {eps} and side {side} must be > 0")));
        }
        if per_cell == 0 {
            return Err(Error::config("lattice points per cell must be >= 1"));
        }
        let c = (side / eps).round();
        if c < 1.0 || ((c * eps - side) / side).abs() > 1e-12 {
            return Err(Error::config(format!("cell length {eps} does not tile a box of side {side}")));
        }
        Ok(Self { eps, cells: c as usize, per_cell, side })
    }

    /// Grid on the box at time `t`.
    pub fn at_time(eps: f64, per_cell: usize, params: &PhysParams, t: f64) -> Result<Self> {
        Self::new(eps, per_cell, params.side(t))
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn per_cell(&self) -> usize {
        self.per_cell
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    /// `K = C·D` lattice points per side.
    pub fn lattice_size(&self) -> usize {
        self.cells * self.per_cell
    }

    pub fn spacing(&self) -> f64 {
        self.side / self.lattice_size() as f64
    }

    /// Zero-based lattice point `(k, l)` at `((k + ½)δ, (l + ½)δ)`.
    pub fn lattice_point(&self, k: usize, l: usize) -> State {
        let d = self.spacing();
        [(k as f64 + 0.5) * d, (l as f64 + 0.5) * d]
    }

    /// Lattice points ordered cell by cell, then by point within the cell.
    pub fn lattice_points(&self) -> Vec<State> {
        let (c, d) = (self.cells, self.per_cell);
        let mut out = Vec::with_capacity(self.lattice_size().pow(2));
        for a in 0..c {
            for b in 0..c {
                for i in 0..d {
                    for j in 0..d {
                        out.push(self.lattice_point(a * d + i, b * d + j));
                    }
                }
            }
        }
        out
    }

    pub fn cell_of(&self, x: State) -> Option<(usize, usize)> {
        if !x.iter().all(|&c| (0.0..=self.side).contains(&c)) {
            return None;
        }
        let idx = |c: f64| ((c / self.eps) as usize).min(self.cells - 1);
        Some((idx(x[0]), idx(x[1])))
    }
}

/// `t_n = n ε / v_e` for `n = 0..=n_max`.
pub fn sample_times(eps: f64, v_expand: f64, n_max: usize) -> Result<Vec<f64>> {
    if !(eps > 0.0 && v_expand > 0.0) {
        return Err(Error::config("sample times need eps > 0 and v_expand > 0"));
    }
    Ok((0..=n_max).map(|n| n as f64 * eps / v_expand).collect())
}

/// Per-cell means of lattice values ordered as [`CGGrid::lattice_points`];
/// `None` entries are skipped. Also returns the number of skipped points.
fn reduce_cells(grid: &CGGrid, values: &[Option<f64>]) -> (CellArray, usize) {
    let c = grid.cells;
    let block = grid.per_cell * grid.per_cell;
    let mut out = CellArray::filled(c, 0.0);
    let mut skipped = 0;
    for (cell, chunk) in values.chunks(block).enumerate() {
        let (mut sum, mut used) = (0.0, 0usize);
        for v in chunk {
            match v {
                Some(v) => {
                    sum += v;
                    used += 1;
                }
                None => skipped += 1,
            }
        }
        out.set(cell / c, cell % c, if used > 0 { sum / used as f64 } else { 0.0 });
    }
    (out, skipped)
}

/// Mean of `field` over the lattice points of each cell.
pub fn cg_average<F>(grid: &CGGrid, field: F) -> Result<CellArray>
where
    F: Fn(State) -> Result<f64> + Sync,
{
    let values: Vec<Option<f64>> = grid
        .lattice_points()
        .into_par_iter()
        .map(|x| field(x).map(Some))
        .collect::<Result<_>>()?;
    Ok(reduce_cells(grid, &values).0)
}

// lattice sums of |ψ|² miss unit mass slightly on coarse lattices
fn unit_mass(grid: &CGGrid, cells: CellArray) -> CellArray {
    let mass = grid.eps * grid.eps * cells.sum();
    cells.map(|v| v / mass)
}

/// Lattice averages of `|ψ(t)|²`, scaled to unit mass.
pub fn eq_cells(sup: &Superposition, t: f64, grid: &CGGrid) -> Result<CellArray> {
    Ok(unit_mass(grid, cg_average(grid, |x| psi_density(sup, t, x))?))
}

fn check_shapes(rho: &CellArray, eq: &CellArray) {
    assert_eq!(rho.side(), eq.side(), "cell arrays differ in shape");
}

/// `h̄ = ε² Σ ρ̄ ln(ρ̄/|ψ|²̄)` with `0·ln 0 = 0`.
pub fn h_bar(rho: &CellArray, eq: &CellArray, eps: f64) -> f64 {
    check_shapes(rho, eq);
    let s: f64 = rho
        .values()
        .iter()
        .zip(eq.values())
        .filter(|(r, _)| **r > 0.0)
        .map(|(r, e)| r * (r / e.max(LOG_GUARD)).ln())
        .sum();
    eps * eps * s
}

/// `ḡ = ε² Σ |ρ̄ - |ψ|²̄|`.
pub fn g_bar(rho: &CellArray, eq: &CellArray, eps: f64) -> f64 {
    check_shapes(rho, eq);
    let s: f64 = rho.values().iter().zip(eq.values()).map(|(r, e)| (r - e).abs()).sum();
    eps * eps * s
}

/// Mean of `|ρ̄ - |ψ|²̄|/|ψ|²̄` over cells above the equilibrium floor, and
/// the number of cells left out.
pub fn f_bar(rho: &CellArray, eq: &CellArray, eps: f64) -> (f64, usize) {
    check_shapes(rho, eq);
    let (mut sum, mut used, mut excluded) = (0.0, 0usize, 0usize);
    for (r, e) in rho.values().iter().zip(eq.values()) {
        if eps * eps * e < EQ_MASS_FLOOR {
            excluded += 1;
        } else {
            sum += (r - e).abs() / e;
            used += 1;
        }
    }
    (if used > 0 { sum / used as f64 } else { 0.0 }, excluded)
}

/// Cell densities from one estimator, with the three measures.
#[derive(Clone, Debug, PartialEq)]
pub struct CellEstimate {
    pub rho_cells: CellArray,
    pub h: f64,
    pub g: f64,
    pub f: f64,
    /// `ε² Σ ρ̄` before renormalization (1 for counting estimates).
    pub raw_mass: f64,
    /// Lattice points or particles that failed and were left out.
    pub excluded_points: usize,
    /// Cells left out of `f̄`.
    pub excluded_cells: usize,
}

impl CellEstimate {
    fn from_cells(rho_cells: CellArray, eq: &CellArray, eps: f64, raw_mass: f64, excluded_points: usize) -> Self {
        let h = h_bar(&rho_cells, eq, eps);
        let g = g_bar(&rho_cells, eq, eps);
        let (f, excluded_cells) = f_bar(&rho_cells, eq, eps);
        Self { rho_cells, h, g, f, raw_mass, excluded_points, excluded_cells }
    }
}

/// Both estimators at one sample time.
#[derive(Clone, Debug, PartialEq)]
pub struct CGReport {
    pub n: usize,
    pub t: f64,
    pub grid: CGGrid,
    pub eq_cells: CellArray,
    pub back: Option<CellEstimate>,
    pub forward: Option<CellEstimate>,
}

impl CGReport {
    pub fn h_back(&self) -> Option<f64> {
        self.back.as_ref().map(|e| e.h)
    }

    pub fn h_forward(&self) -> Option<f64> {
        self.forward.as_ref().map(|e| e.h)
    }

    /// Preferred estimate for `ḡ` and `f̄`: back-tracking when present.
    fn primary(&self) -> Option<&CellEstimate> {
        self.back.as_ref().or(self.forward.as_ref())
    }

    pub fn g(&self) -> Option<f64> {
        self.primary().map(|e| e.g)
    }

    pub fn f(&self) -> Option<f64> {
        self.primary().map(|e| e.f)
    }

    pub fn excluded_points(&self) -> usize {
        self.back.as_ref().map_or(0, |e| e.excluded_points) + self.forward.as_ref().map_or(0, |e| e.excluded_points)
    }
}

fn check_failures(failed: usize, total: usize) -> Result<()> {
    if failed as f64 > FAIL_SOFT_FRACTION * total as f64 {
        Err(Error::LatticeFailures { failed, total })
    } else {
        Ok(())
    }
}

/// Lattice points at time `t` with their `|ψ|²` and their positions pulled
/// back to `t0`. One pull-back serves any initial distribution at `t0`.
#[derive(Clone, Debug)]
pub struct PulledBackLattice {
    grid: CGGrid,
    t0: f64,
    sup: Superposition,
    psi_sq: Vec<f64>,
    back: Vec<Option<State>>,
    eq_cells: CellArray,
    pulled: bool,
}

impl PulledBackLattice {
    /// Pulls the lattice of `grid` at time `t` back to `t0` in the expanding box.
    pub fn compute(sup: &Superposition, t0: f64, t: f64, grid: CGGrid, tol: f64) -> Result<Self> {
        if t < t0 {
            return Err(Error::config(format!("sample time {t} precedes the initial time {t0}")));
        }
        let side = sup.params().side(t);
        if ((grid.side - side) / side).abs() > 1e-12 {
            return Err(Error::config(format!("grid side {} differs from L({t}) = {side}", grid.side)));
        }
        let points = grid.lattice_points();
        let psi_sq: Vec<f64> = points.par_iter().map(|&x| psi_density(sup, t, x)).collect::<Result<_>>()?;
        let back: Vec<Option<State>> = if t == t0 {
            points.iter().map(|&x| Some(x)).collect()
        } else {
            points.par_iter().map(|&x| dynamics::flow_to(sup, x, t, t0, tol).ok()).collect()
        };
        Self::assemble(grid, t0, sup, psi_sq, back)
    }

    /// Same construction in the static companion box at companion time `tau`;
    /// `grid` must cover `[0, L0]²`. Back positions are mapped into the
    /// expanding box at `t0`, so ratios come from the usual distributions.
    pub fn compute_fixed(sup: &Superposition, t0: f64, tau: f64, grid: CGGrid, tol: f64) -> Result<Self> {
        let p = sup.params();
        let tau0 = p.tau(t0);
        if tau < tau0 {
            return Err(Error::config(format!("companion time {tau} precedes tau(t0) = {tau0}")));
        }
        if ((grid.side - p.l0) / p.l0).abs() > 1e-12 {
            return Err(Error::config("companion grid must cover the static box"));
        }
        let s0 = p.scale(t0);
        let points = grid.lattice_points();
        let psi_sq: Vec<f64> = points.par_iter().map(|&y| fixed_psi_density(sup, tau, y)).collect::<Result<_>>()?;
        let back: Vec<Option<State>> = points
            .par_iter()
            .map(|&y| {
                let yb = if tau == tau0 { Ok(y) } else { dynamics::fixed_flow_to(sup, y, tau, tau0, tol) };
                yb.ok().map(|yb| [s0 * yb[0], s0 * yb[1]])
            })
            .collect();
        Self::assemble(grid, t0, sup, psi_sq, back)
    }

    /// Lattice at `t` without back positions. Only equilibrium estimates,
    /// whose ratio is identically 1, can be made from it.
    pub fn equilibrium_only(sup: &Superposition, t0: f64, t: f64, grid: CGGrid) -> Result<Self> {
        let points = grid.lattice_points();
        let psi_sq: Vec<f64> = points.par_iter().map(|&x| psi_density(sup, t, x)).collect::<Result<_>>()?;
        let mut lat = Self::assemble(grid, t0, sup, psi_sq, Vec::new())?;
        lat.pulled = false;
        Ok(lat)
    }

    fn assemble(grid: CGGrid, t0: f64, sup: &Superposition, psi_sq: Vec<f64>, back: Vec<Option<State>>) -> Result<Self> {
        let failed = back.iter().filter(|b| b.is_none()).count();
        check_failures(failed, back.len())?;
        let eq: Vec<Option<f64>> = psi_sq.iter().map(|&v| Some(v)).collect();
        let eq_cells = unit_mass(&grid, reduce_cells(&grid, &eq).0);
        Ok(Self { grid, t0, sup: sup.clone(), psi_sq, back, eq_cells, pulled: true })
    }

    pub fn grid(&self) -> &CGGrid {
        &self.grid
    }

    pub fn eq_cells(&self) -> &CellArray {
        &self.eq_cells
    }

    /// Lattice points whose backward integration failed.
    pub fn failed_points(&self) -> usize {
        self.back.iter().filter(|b| b.is_none()).count()
    }

    /// Back-tracking estimate for `dist`: `ρ = |ψ|²·ρ0/|ψ0|²` at each lattice
    /// point, averaged per cell, then renormalized to unit mass.
    pub fn estimate(&self, dist: &InitialDistribution) -> Result<CellEstimate> {
        if dist.sup != self.sup || dist.t0 != self.t0 {
            return Err(Error::config("distribution does not match the pulled-back lattice"));
        }
        let values: Vec<Option<f64>> = if matches!(dist.kind, DistKind::Equilibrium) {
            self.psi_sq.iter().map(|&v| Some(v)).collect()
        } else if !self.pulled {
            return Err(Error::config("lattice was built without back-tracking"));
        } else {
            self.psi_sq
                .iter()
                .zip(&self.back)
                .map(|(&p, b)| b.and_then(|xb| initial_ratio(dist, xb).ok()).map(|r| p * r))
                .collect()
        };
        let (rho, skipped) = reduce_cells(&self.grid, &values);
        check_failures(skipped, values.len())?;
        let eps = self.grid.eps;
        let raw_mass = eps * eps * rho.sum();
        if raw_mass.is_nan() || raw_mass <= 0.0 {
            return Err(Error::config("back-tracked density has no mass"));
        }
        let rho = rho.map(|v| v / raw_mass);
        Ok(CellEstimate::from_cells(rho, &self.eq_cells, eps, raw_mass, skipped))
    }
}

/// Back-tracking report at `t` on `grid`.
pub fn backtrack_estimate(dist: &InitialDistribution, n: usize, t: f64, grid: CGGrid, tol: f64) -> Result<CGReport> {
    let lat = PulledBackLattice::compute(&dist.sup, dist.t0, t, grid, tol)?;
    let back = lat.estimate(dist)?;
    Ok(CGReport { n, t, grid, eq_cells: lat.eq_cells, back: Some(back), forward: None })
}

/// Cell counts of a forward-tracked ensemble at several times.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCounts {
    pub times: Vec<f64>,
    pub grids: Vec<CGGrid>,
    pub counts: Vec<Vec<u64>>,
    pub failed: usize,
    pub total: usize,
}

const FORWARD_CHUNK: usize = 2048;

/// Flows every particle once through all `times` (sorted, `>= particles.t`)
/// and bins it on the matching grid.
pub fn forward_counts(sup: &Superposition, particles: &ParticleSet, times: &[f64], grids: &[CGGrid], tol: f64) -> Result<ForwardCounts> {
    if times.len() != grids.len() {
        return Err(Error::config("need one grid per sample time"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < particles.t) {
        return Err(Error::config("sample times must be sorted and not precede the ensemble"));
    }
    let zero = || (grids.iter().map(|g| vec![0u64; g.cells * g.cells]).collect::<Vec<_>>(), 0usize);
    let (counts, failed) = particles
        .positions
        .par_chunks(FORWARD_CHUNK)
        .map(|chunk| {
            let (mut acc, mut failed) = zero();
            for &x0 in chunk {
                match dynamics::flow_sampled(sup, x0, particles.t, times, tol) {
                    Ok(xs) => {
                        for (i, x) in xs.iter().enumerate() {
                            if let Some((a, b)) = grids[i].cell_of(*x) {
                                acc[i][a * grids[i].cells + b] += 1;
                            }
                        }
                    }
                    Err(_) => failed += 1,
                }
            }
            (acc, failed)
        })
        .reduce(zero, |(mut a, fa), (b, fb)| {
            for (ra, rb) in a.iter_mut().zip(b) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    *x += y;
                }
            }
            (a, fa + fb)
        });
    check_failures(failed, particles.len())?;
    Ok(ForwardCounts { times: times.to_vec(), grids: grids.to_vec(), counts, failed, total: particles.len() })
}

impl ForwardCounts {
    /// `ρ̄ = count/(P_eff ε²)` at sample `i`, compared with `eq`.
    pub fn estimate(&self, i: usize, eq: &CellArray) -> CellEstimate {
        let g = &self.grids[i];
        let p_eff = (self.total - self.failed) as f64;
        let vals = self.counts[i].iter().map(|&c| c as f64 / (p_eff * g.eps * g.eps)).collect();
        let rho = CellArray::from_values(g.cells, vals).expect("count array matches grid");
        CellEstimate::from_cells(rho, eq, g.eps, 1.0, self.failed)
    }
}

/// Forward-tracking report at `t`: samples `count` particles with `seed`.
pub fn forward_estimate(dist: &InitialDistribution, n: usize, t: f64, grid: CGGrid, count: usize, seed: u64, tol: f64) -> Result<CGReport> {
    let particles = crate::ensembles::sample(dist, count, seed)?;
    let fc = forward_counts(&dist.sup, &particles, &[t], &[grid], tol)?;
    let eq_cells = eq_cells(&dist.sup, t, &grid)?;
    let forward = fc.estimate(0, &eq_cells);
    Ok(CGReport { n, t, grid, eq_cells, back: None, forward: Some(forward) })
}

/// Grid with cell length `s(t)·eps0`, so the cell count stays `L0/eps0`.
pub fn tilde_grid(params: &PhysParams, t: f64, eps0: f64, per_cell: usize) -> Result<CGGrid> {
    let g0 = CGGrid::new(eps0, per_cell, params.l0)?;
    let s = params.scale(t);
    Ok(CGGrid { eps: s * eps0, cells: g0.cells, per_cell, side: params.side(t) })
}

/// `h̃(t)`: back-tracked `h̄` with the time-dependent cell length.
pub fn h_tilde(dist: &InitialDistribution, t: f64, eps0: f64, per_cell: usize, tol: f64) -> Result<f64> {
    let grid = tilde_grid(dist.sup.params(), t, eps0, per_cell)?;
    Ok(PulledBackLattice::compute(&dist.sup, dist.t0, t, grid, tol)?.estimate(dist)?.h)
}

/// `h̄′(τ)` of the static companion box with cell length `eps0`.
pub fn fixed_box_h(dist: &InitialDistribution, tau: f64, eps0: f64, per_cell: usize, tol: f64) -> Result<f64> {
    let grid = CGGrid::new(eps0, per_cell, dist.sup.params().l0)?;
    Ok(PulledBackLattice::compute_fixed(&dist.sup, dist.t0, tau, grid, tol)?.estimate(dist)?.h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::build_rho1;

    fn cells(n: usize, v: &[f64]) -> CellArray {
        CellArray::from_values(n, v.to_vec()).unwrap()
    }

    #[test]
    fn hand_example() {
        let eq = CellArray::filled(2, 1.0);
        let rho = cells(2, &[2.0, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]);
        let want_h = 0.25 * (2.0 * 2f64.ln() + 3.0 * (2.0 / 3.0) * (2.0f64 / 3.0).ln());
        assert!((h_bar(&rho, &eq, 0.5) - want_h).abs() < 1e-15);
        assert!((h_bar(&rho, &eq, 0.5) - 0.14384).abs() < 1e-5);
        assert!((g_bar(&rho, &eq, 0.5) - 0.5).abs() < 1e-15);
        let (f, excl) = f_bar(&rho, &eq, 0.5);
        assert!((f - 0.5).abs() < 1e-15 && excl == 0);
    }

    #[test]
    fn equal_arrays_give_zero() {
        let a = cells(2, &[1.5, 0.5, 0.25, 1.75]);
        assert_eq!(h_bar(&a, &a, 0.5), 0.0);
        assert_eq!(g_bar(&a, &a, 0.5), 0.0);
        assert_eq!(f_bar(&a, &a, 0.5).0, 0.0);
    }

    #[test]
    fn empty_cells_and_floor() {
        let eq = cells(2, &[2.0, 2.0, 0.0, 0.0]);
        let rho = cells(2, &[4.0, 0.0, 0.0, 0.0]);
        assert!((h_bar(&rho, &eq, 0.5) - 2f64.ln()).abs() < 1e-15);
        let (f, excl) = f_bar(&rho, &eq, 0.5);
        assert_eq!(excl, 2);
        assert!((f - 1.0).abs() < 1e-15);
    }

    #[test]
    fn grid_geometry() {
        let g = CGGrid::new(0.25, 5, 1.0).unwrap();
        assert_eq!((g.cells(), g.lattice_size()), (4, 20));
        assert!((g.spacing() - 0.05).abs() < 1e-15);
        let p = g.lattice_point(0, 19);
        assert!((p[0] - 0.025).abs() < 1e-15 && (p[1] - 0.975).abs() < 1e-15);
        assert_eq!(g.cell_of([0.3, 0.99]), Some((1, 3)));
        assert_eq!(g.cell_of([1.0, 1.0]), Some((3, 3)));
        assert_eq!(g.cell_of([1.1, 0.5]), None);
        assert!(CGGrid::new(0.3, 4, 1.0).is_err());
        let pts = g.lattice_points();
        assert_eq!(pts.len(), 400);
        assert!(pts[..25].iter().all(|&x| g.cell_of(x) == Some((0, 0))));
    }

    #[test]
    fn sample_times_and_cell_counts() {
        let ts = sample_times(0.05, 1.0, 20).unwrap();
        assert_eq!(ts.len(), 21);
        assert_eq!(ts[0], 0.0);
        assert!((ts[20] - 1.0).abs() < 1e-15);
        let p = PhysParams::natural(1.0);
        for (n, &t) in ts.iter().enumerate() {
            assert_eq!(CGGrid::at_time(0.05, 2, &p, t).unwrap().cells(), 20 + n);
        }
    }

    #[test]
    fn cg_average_of_simple_fields() {
        let g = CGGrid::new(0.25, 4, 1.0).unwrap();
        let c = cg_average(&g, |_| Ok(3.0)).unwrap();
        assert!(c.values().iter().all(|&v| v == 3.0));
        let lin = cg_average(&g, |x| Ok(x[0])).unwrap();
        for (a, _, v) in lin.iter_cells() {
            assert!((v - (a as f64 + 0.5) * 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn equilibrium_back_estimate_vanishes() {
        let sup = Superposition::appendix(PhysParams::natural(1.0));
        let d = InitialDistribution::equilibrium(sup, 0.0).unwrap();
        let r = backtrack_estimate(&d, 2, 0.1, CGGrid::new(0.1, 2, 1.1).unwrap(), 1e-6).unwrap();
        assert!(r.h_back().unwrap().abs() < 1e-12);
        assert!((r.eq_cells.sum() * 0.01 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_cell_tilde_is_zero() {
        let sup = Superposition::appendix(PhysParams::natural(1.0));
        let d = build_rho1(&sup, 0.0, 0.25).unwrap();
        let h = h_tilde(&d, 0.3, 1.0, 3, 1e-6).unwrap();
        assert!(h.abs() < 1e-14);
    }
}
