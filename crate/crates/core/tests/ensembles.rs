// SPDX-License-Identifier: Apache-2.0

use std::f64::consts::PI;

use expbox::cells::CellArray;
use expbox::coarse_graining::{CGGrid, PulledBackLattice};
use expbox::dynamics::flow_to;
use expbox::ensembles::{build_rho1, eval_initial_density, sample, transport_density, DistKind, InitialDistribution};
use expbox::quad::{gauss_legendre, integrate_rect};
use expbox::wavefunction::{psi_density, Mode, PhysParams, Superposition};

fn appendix() -> Superposition {
    Superposition::appendix(PhysParams::natural(1.0))
}

#[test]
fn rho1_cells_match_quadrature_and_differ_from_psi() {
    let sup = appendix();
    let eps = 1.0 / 16.0;
    let dist = build_rho1(&sup, 0.0, eps).unwrap();
    let DistKind::Rho1 { cells, .. } = &dist.kind else { panic!() };
    let rule = gauss_legendre(40);
    for (a, b) in [(0, 0), (3, 7), (8, 8), (15, 2)] {
        let (xa, xb) = ((a as f64 * eps, (a + 1) as f64 * eps), (b as f64 * eps, (b + 1) as f64 * eps));
        let want = integrate_rect(&rule, xa, xb, |x1, x2| psi_density(&sup, 0.0, [x1, x2]).unwrap()) / (eps * eps);
        assert!((cells.get(a, b) - want).abs() < 1e-8, "cell ({a},{b})");
    }
    assert!((cells.sum() * eps * eps - 1.0).abs() < 1e-10);
    let x = [0.31, 0.47];
    let gap = (eval_initial_density(&dist, x).unwrap() - psi_density(&sup, 0.0, x).unwrap()).abs();
    assert!(gap > 1e-3);
}

fn sin2_integral(a: f64, b: f64) -> f64 {
    (b - a) - ((2.0 * PI * b).sin() - (2.0 * PI * a).sin()) / (2.0 * PI)
}

#[test]
fn rho0_samples_follow_the_ground_state() {
    let dist = InitialDistribution::rho0(appendix(), 0.0).unwrap();
    let n = 200_000;
    let ps = sample(&dist, n, 11).unwrap();
    let c = 4;
    let mut counts = vec![0usize; c * c];
    for x in &ps.positions {
        let a = ((x[0] * c as f64) as usize).min(c - 1);
        let b = ((x[1] * c as f64) as usize).min(c - 1);
        counts[a * c + b] += 1;
    }
    let h = 1.0 / c as f64;
    for a in 0..c {
        for b in 0..c {
            let p = sin2_integral(a as f64 * h, (a + 1) as f64 * h) * sin2_integral(b as f64 * h, (b + 1) as f64 * h);
            let got = counts[a * c + b] as f64 / n as f64;
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((got - p).abs() < 4.0 * sd, "cell ({a},{b}): {got} vs {p}");
        }
    }
}

#[test]
fn uniform_grid_passes_chi_square() {
    let dist = InitialDistribution::grid(appendix(), 0.0, CellArray::filled(4, 3.0), 0.25).unwrap();
    let n = 64_000;
    let ps = sample(&dist, n, 5).unwrap();
    let c = 8;
    let mut counts = vec![0f64; c * c];
    for x in &ps.positions {
        let a = ((x[0] * c as f64) as usize).min(c - 1);
        let b = ((x[1] * c as f64) as usize).min(c - 1);
        counts[a * c + b] += 1.0;
    }
    let expect = n as f64 / (c * c) as f64;
    let chi2: f64 = counts.iter().map(|k| (k - expect).powi(2) / expect).sum();
    // 63 degrees of freedom: mean 63, sd ~11.2
    assert!(chi2 < 63.0 + 5.0 * 11.2, "chi2 = {chi2}");
}

#[test]
fn equilibrium_is_carried_to_equilibrium() {
    let sup = appendix();
    let dist = InitialDistribution::equilibrium(sup.clone(), 0.0).unwrap();
    for (t, x) in [(0.4, [0.3, 0.9]), (1.0, [1.2, 0.5]), (2.5, [3.0, 1.1])] {
        let got = transport_density(&dist, t, x, 1e-8).unwrap();
        let want = psi_density(&sup, t, x).unwrap();
        assert!((got - want).abs() < 1e-9 * want.max(1.0), "t={t}");
    }
}

#[test]
fn transport_conserves_mass() {
    // two modes whose relative phase stays away from 0 and π up to t: no
    // interior nodes, so ρ0/|ψ|² stays bounded and the lattice sum converges
    let modes = vec![Mode::new(1, 1).unwrap(), Mode::new(1, 2).unwrap()];
    let sup = Superposition::new(modes, vec![0.0, 0.25], PhysParams::natural(1.0)).unwrap();
    let t = 0.1;
    let grid = CGGrid::at_time(sup.params().side(t) / 8.0, 6, sup.params(), t).unwrap();
    let lattice = PulledBackLattice::compute(&sup, 0.0, t, grid, 1e-8).unwrap();
    let est = lattice.estimate(&InitialDistribution::rho0(sup.clone(), 0.0).unwrap()).unwrap();
    assert!((est.raw_mass - 1.0).abs() < 1e-3, "mass {}", est.raw_mass);
}

#[test]
fn tighter_tolerance_converges_monotonically() {
    let sup = appendix();
    let x0 = [0.37, 0.61];
    let reference = flow_to(&sup, x0, 0.0, 2.0, 1e-13).unwrap();
    let mut last = f64::INFINITY;
    for tol in [1e-6, 1e-8, 1e-10] {
        let x = flow_to(&sup, x0, 0.0, 2.0, tol).unwrap();
        let err = ((x[0] - reference[0]).powi(2) + (x[1] - reference[1]).powi(2)).sqrt();
        assert!(err < last, "tol {tol}: {err} after {last}");
        last = err;
    }
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let dist = InitialDistribution::rho2(appendix(), 0.0, 0.1).unwrap();
    let a = sample(&dist, 3000, 42).unwrap();
    let b = sample(&dist, 3000, 42).unwrap();
    let c = sample(&dist, 3000, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.positions, c.positions);
    let mut buf = Vec::new();
    a.write_csv(&mut buf).unwrap();
    let back = expbox::ensembles::ParticleSet::read_csv(&buf[..], a.t, a.seed).unwrap();
    assert_eq!(back, a);
}
