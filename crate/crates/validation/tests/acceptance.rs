// SPDX-License-Identifier: Apache-2.0

//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Takes roughly half an hour on one core.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use expbox::coarse_graining::{self, fixed_box_h, h_bar, h_tilde};
use expbox::dynamics::{self, Expansion};
use expbox::ensembles::{self, InitialDistribution};
use expbox::experiments::{run_experiment, ConfigFile, ExperimentConfig, ExperimentOutcome, Overrides, Session};
use expbox::quad;
use expbox::wavefunction::{eval_mode, psi_density, Mode, PhysParams, Superposition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `0.25 (2 ln 2 + 3 (2/3) ln(2/3)) = ½ ln(4/3)`, evaluated independently
/// with mpmath at 30 digits.
const HAND_H: f64 = 0.143_841_036_225_890_45;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn scratch_root() -> PathBuf {
    std::env::temp_dir().join(format!("expbox-acceptance-{}", std::process::id()))
}

fn out_dir(tag: &str) -> PathBuf {
    scratch_root().join(tag)
}

fn config(preset: &str, est: &[&str], tweak: impl FnOnce(&mut ConfigFile)) -> ExperimentConfig {
    config_in(preset, preset, est, tweak)
}

fn config_in(tag: &str, preset: &str, est: &[&str], tweak: impl FnOnce(&mut ConfigFile)) -> ExperimentConfig {
    let mut file = ConfigFile { preset: Some(preset.into()), ..Default::default() };
    tweak(&mut file);
    let ov = Overrides {
        outputs: Some(out_dir(tag)),
        estimators: Some(est.iter().map(|s| s.to_string()).collect()),
        ..Default::default()
    };
    ExperimentConfig::resolve(file, &ov, std::path::Path::new(".")).expect("preset resolves")
}

fn appendix() -> Superposition {
    Superposition::appendix(PhysParams::natural(1.0))
}

fn random_points(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.gen_range(0.01..0.99), rng.gen_range(0.01..0.99)]).collect()
}

fn c1_equivariance(session: &mut Session) -> Verdict {
    let p = 200_000;
    let clock = Instant::now();
    let cfg = config("equilibrium", &["back", "forward"], |f| f.run.p = Some(p));
    let out = match run_experiment(&cfg, session) {
        Ok(o) => o,
        Err(e) => return verdict(false, format!("run failed: {e}")),
    };
    let mut worst_back: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    let mut ok = out.manifest.failures.is_empty();
    for r in &out.reports {
        let (Some(hb), Some(hf)) = (r.h_back(), r.h_forward()) else {
            ok = false;
            continue;
        };
        let c = r.grid.cells() as f64;
        let bound = 3.0 * c * c / (2.0 * p as f64);
        worst_back = worst_back.max(hb.abs());
        worst_ratio = worst_ratio.max(hf / bound);
        ok &= hb.abs() <= 1e-10 && hf < bound;
    }
    let secs = clock.elapsed().as_secs_f64();
    verdict(
        ok && out.reports.len() == 21 && secs <= 600.0,
        format!("max |h_back| = {worst_back:.2e} (<= 1e-10); max h_forward / (3 C²/2P) = {worst_ratio:.3} (< 1); {secs:.0}s (<= 600)"),
    )
}

fn c2_example1(out: &ExperimentOutcome) -> Verdict {
    let h0 = out.reports[0].h_back();
    let h20 = out.reports[20].h_back();
    let (Some(h0), Some(h20)) = (h0, h20) else {
        return verdict(false, "missing back-tracking values");
    };
    let inc = out.h_back_relative_increase().unwrap_or(f64::NAN);
    let band = if (0.01..=0.15).contains(&inc) {
        "inside the 1%..15% band around 5%"
    } else {
        "OUTSIDE the 1%..15% band around 5% (flagged, not failed)"
    };
    let secs: f64 = out.manifest.stages.iter().map(|s| s.1).sum();
    verdict(
        h20 > h0 && secs <= 1800.0,
        format!(
            "h_back(t0) = {h0:.6}, h_back(t20) = {h20:.6}, increase {:.2}% recorded in manifest; {band}; run {secs:.0}s (<= 1800)",
            100.0 * inc
        ),
    )
}

fn c3_examples23(ex2: &ExperimentOutcome, ex3: &ExperimentOutcome) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, o) in [("rho1", ex2), ("rho2", ex3)] {
        let (a, b) = (&o.reports[0], &o.reports[20]);
        let pairs = [("h", a.h_back(), b.h_back()), ("g", a.g(), b.g()), ("f", a.f(), b.f())];
        for (m, v0, v1) in pairs {
            match (v0, v1) {
                (Some(v0), Some(v1)) => {
                    ok &= v1 > v0;
                    parts.push(format!("{name} {m}: {v0:.4} -> {v1:.4}"));
                }
                _ => {
                    ok = false;
                    parts.push(format!("{name} {m}: missing"));
                }
            }
        }
    }
    verdict(ok, parts.join("; "))
}

fn c4_rescaling_identity() -> Verdict {
    let d = InitialDistribution::rho0(appendix(), 0.0).unwrap();
    let p = PhysParams::natural(1.0);
    let (eps0, per_cell, tol) = (0.05, 16, 1e-9);
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [5usize, 10, 20] {
        let t = n as f64 * 0.05;
        let tau = p.tau(t);
        match (h_tilde(&d, t, eps0, per_cell, tol), fixed_box_h(&d, tau, eps0, per_cell, tol)) {
            (Ok(a), Ok(b)) => {
                ok &= (a - b).abs() < 1e-3;
                parts.push(format!("n={n}: h_tilde {a:.6}, h'(tau) {b:.6}, diff {:.1e}", (a - b).abs()));
            }
            (a, b) => {
                ok = false;
                parts.push(format!("n={n}: {:?} / {:?}", a.err(), b.err()));
            }
        }
    }
    verdict(ok, parts.join("; "))
}

fn c5_trajectory_equivalence() -> Verdict {
    let sup = appendix();
    let p = *sup.params();
    let tol = 1e-10;
    let clock = Instant::now();
    let mut worst: f64 = 0.0;
    for x0 in random_points(100, 5) {
        let (x, y) = match (
            dynamics::integrate_trajectory(&sup, x0, 0.0, 1.0, tol),
            dynamics::integrate_fixed_trajectory(&sup, x0, 0.0, p.tau(1.0), tol),
        ) {
            (Ok(x), Ok(y)) => (x, y),
            (a, b) => return verdict(false, format!("integration failed from {x0:?}: {:?} {:?}", a.err(), b.err())),
        };
        for i in 0..=200 {
            let t = i as f64 / 200.0;
            let xt = x.position_at(t).unwrap();
            let yt = y.position_at(p.tau(t).min(y.t_end)).unwrap();
            let s = p.scale(t);
            worst = worst.max((xt[0] / s - yt[0]).abs().max((xt[1] / s - yt[1]).abs()));
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    verdict(worst < 1e-6 && secs <= 60.0, format!("max |x/s - y(tau)| = {worst:.2e} (< 1e-6) in {secs:.1}s"))
}

fn c6_ratio_conservation() -> Verdict {
    let d = InitialDistribution::rho0(appendix(), 0.0).unwrap();
    let sup = &d.sup;
    let mut ok = true;
    let mut parts = Vec::new();
    for tol in [1e-6, 1e-8, 1e-10] {
        let mut worst: f64 = 0.0;
        let mut worst_back: f64 = 0.0;
        for x0 in random_points(100, 6) {
            let r0 = ensembles::initial_ratio(&d, x0).unwrap();
            let Ok((x1, dlog)) = dynamics::flow_with_log_density(sup, x0, 0.0, 1.0, tol) else {
                ok = false;
                continue;
            };
            let rho1 = ensembles::eval_initial_density(&d, x0).unwrap() * dlog.exp();
            let r1 = rho1 / psi_density(sup, 1.0, x1).unwrap();
            worst = worst.max((r1 / r0 - 1.0).abs());
            if let Ok(b) = ensembles::transport_density(&d, 1.0, x1, tol) {
                worst_back = worst_back.max((b / psi_density(sup, 1.0, x1).unwrap() / r0 - 1.0).abs());
            }
        }
        ok &= worst < 10.0 * tol;
        parts.push(format!("tol {tol:.0e}: max rel change {worst:.2e} ({:.2} tol); via back-tracking {worst_back:.1e}", worst / tol));
    }
    verdict(ok, parts.join("; "))
}

fn c7_estimator_crosscheck(ex1: &ExperimentOutcome) -> Verdict {
    let r20 = &ex1.reports[20];
    let Some(hb) = r20.h_back() else {
        return verdict(false, "missing back-tracking value at t20");
    };
    let d = InitialDistribution::rho0(appendix(), 0.0).unwrap();
    let mut hs = Vec::new();
    for seed in 1..=8u64 {
        let run = ensembles::sample(&d, 100_000, seed)
            .and_then(|ps| coarse_graining::forward_counts(&d.sup, &ps, &[r20.t], &[r20.grid], 1e-6));
        match run {
            Ok(fc) => hs.push(fc.estimate(0, &r20.eq_cells).h),
            Err(e) => return verdict(false, format!("forward run {seed} failed: {e}")),
        }
    }
    let n = hs.len() as f64;
    let mean = hs.iter().sum::<f64>() / n;
    let sd = (hs.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    let diff = (mean - hb).abs();
    verdict(
        diff <= 3.0 * se,
        format!("h_back {hb:.5}, mean h_forward {mean:.5} over 8 seeds, |diff| {diff:.2e} vs 3 se {:.2e}", 3.0 * se),
    )
}

fn c8_oracles() -> Verdict {
    let p = PhysParams::natural(1.0);
    let t = 0.3;
    let side = p.side(t);
    let rule = quad::gauss_legendre(128);
    let modes = appendix().modes().to_vec();
    let mut worst: f64 = 0.0;
    for (i, &a) in modes.iter().enumerate() {
        for &b in &modes[i..] {
            let (mut re, mut im) = (0.0, 0.0);
            for (x, wx) in rule.0.iter().zip(&rule.1) {
                for (y, wy) in rule.0.iter().zip(&rule.1) {
                    let pt = [0.5 * side * (x + 1.0), 0.5 * side * (y + 1.0)];
                    let v = eval_mode(a, t, pt, &p).unwrap() * eval_mode(b, t, pt, &p).unwrap().conj();
                    re += wx * wy * v.re;
                    im += wx * wy * v.im;
                }
            }
            let j = 0.25 * side * side;
            let want = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((j * re - want).abs()).max((j * im).abs());
        }
    }
    let ortho = worst < 1e-8;

    let eq = expbox::cells::CellArray::filled(2, 1.0);
    let rho = expbox::cells::CellArray::from_values(2, vec![2.0, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]).unwrap();
    let h = h_bar(&rho, &eq, 0.5);
    let g = coarse_graining::g_bar(&rho, &eq, 0.5);
    let (f, _) = coarse_graining::f_bar(&rho, &eq, 0.5);
    let hand = (h - HAND_H).abs() < 1e-10 && (g - 0.5).abs() < 1e-10 && (f - 0.5).abs() < 1e-10;

    let single = Superposition::single(Mode::new(3, 2).unwrap(), p);
    let mut comoving: f64 = 0.0;
    for x0 in random_points(10, 8) {
        let path = dynamics::integrate_trajectory(&single, x0, 0.0, 1.0, 1e-10).unwrap();
        for &(t, x) in &path.nodes {
            let s = p.scale(t);
            comoving = comoving.max((x[0] - x0[0] * s).abs()).max((x[1] - x0[1] * s).abs());
        }
    }
    let exp = Expansion::new(p);
    let tau1 = exp.retarded_time(1.0).unwrap();
    let tau_big = exp.retarded_time(1e9).unwrap();
    let tau_ok = (tau1 - 0.5).abs() < 1e-15 && exp.tau_limit() == 1.0 && tau_big < 1.0 && 1.0 - tau_big < 1e-8;

    verdict(
        ortho && hand && comoving < 1e-9 && tau_ok,
        format!(
            "orthonormality {worst:.1e}; hand h/g/f {h:.11}/{g}/{f}; comoving {comoving:.1e}; tau(1) = {tau1}, tau(1e9) = {tau_big}, limit {}",
            exp.tau_limit()
        ),
    )
}

fn c9_tilde_inequality(outs: &[(&str, &ExperimentOutcome)]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, o) in outs {
        let mut worst = f64::NEG_INFINITY;
        for (r, t) in o.reports.iter().zip(&o.tilde).skip(1) {
            match (t.h_tilde, r.h_back()) {
                (Some(ht), Some(hb)) => worst = worst.max(ht - hb),
                _ => ok = false,
            }
        }
        ok &= worst <= 0.0;
        parts.push(format!("{name}: max(h_tilde - h_bar) = {worst:.4}"));
    }
    verdict(ok, parts.join("; "))
}

fn main() -> ExitCode {
    let names = [
        "1 equivariance",
        "2 example 1 growth",
        "3 examples 2 and 3 growth",
        "4 rescaling identity",
        "5 trajectory equivalence",
        "6 ratio conservation",
        "7 estimator cross-check",
        "8 analytic oracles",
        "9 tilde inequality",
    ];
    let mut results: Vec<Option<(Verdict, f64)>> = (0..9).map(|_| None).collect();
    let mut timed = |i: usize, f: &mut dyn FnMut() -> Verdict| {
        let clock = Instant::now();
        let v = f();
        let secs = clock.elapsed().as_secs_f64();
        println!("[{}] {} ({secs:.0}s): {}", if v.pass { "PASS" } else { "FAIL" }, names[i], v.detail);
        results[i] = Some((v, secs));
    };

    timed(7, &mut c8_oracles);
    timed(4, &mut c5_trajectory_equivalence);
    timed(5, &mut c6_ratio_conservation);

    let mut session = Session::caching();
    timed(0, &mut || c1_equivariance(&mut session));

    let clock = Instant::now();
    let runs: Vec<_> = ["example1", "example2", "example3"]
        .iter()
        .map(|&name| {
            let cfg = config(name, &["back", "tilde"], |_| {});
            (name, run_experiment(&cfg, &mut session))
        })
        .collect();
    println!("       desk-scale runs of examples 1-3 took {:.0}s", clock.elapsed().as_secs_f64());
    let failed: Vec<String> = runs
        .iter()
        .filter_map(|(n, r)| match r {
            Err(e) => Some(format!("{n}: {e}")),
            Ok(o) if !o.manifest.failures.is_empty() => Some(format!("{n}: {:?}", o.manifest.failures)),
            _ => None,
        })
        .collect();
    if failed.is_empty() {
        let outs: Vec<(&str, &ExperimentOutcome)> = runs.iter().map(|(n, r)| (*n, r.as_ref().unwrap())).collect();
        timed(1, &mut || c2_example1(outs[0].1));
        timed(2, &mut || c3_examples23(outs[1].1, outs[2].1));
        timed(8, &mut || c9_tilde_inequality(&outs));
        timed(6, &mut || c7_estimator_crosscheck(outs[0].1));
    } else {
        for i in [1, 2, 8, 6] {
            timed(i, &mut || verdict(false, format!("example runs failed: {}", failed.join("; "))));
        }
    }

    // the same examples with m = 1e-30 kg, L0 = 1 m, v_e = 1 m/s and SI ħ;
    // informational only
    let si: Vec<_> = ["example1", "example2", "example3"]
        .iter()
        .map(|&name| {
            let cfg = config_in(&format!("{name}-si"), name, &["back", "tilde"], |f| {
                f.params.units = Some("si".into());
                f.params.hbar = Some(1.054_571_817e-34);
                f.params.mass = Some(1e-30);
                f.params.l0 = Some(1.0);
                f.params.v_expand = Some(1.0);
            });
            (name, run_experiment(&cfg, &mut session))
        })
        .collect();
    if si.iter().all(|(_, r)| r.as_ref().is_ok_and(|o| o.manifest.failures.is_empty())) {
        let outs: Vec<(&str, &ExperimentOutcome)> = si.iter().map(|(n, r)| (*n, r.as_ref().unwrap())).collect();
        let tag = |v: Verdict| format!("{} {}", if v.pass { "holds" } else { "fails" }, v.detail);
        println!("       info, SI parameters, criterion 2: {}", tag(c2_example1(outs[0].1)));
        println!("       info, SI parameters, criterion 3: {}", tag(c3_examples23(outs[1].1, outs[2].1)));
        println!("       info, SI parameters, criterion 9: {}", tag(c9_tilde_inequality(&outs)));
    } else {
        println!("       info, SI parameters: runs failed");
    }
    drop(session);
    timed(3, &mut c4_rescaling_identity);

    println!();
    let mut all = true;
    for (i, r) in results.iter().enumerate() {
        let (v, secs) = r.as_ref().expect("every criterion ran");
        all &= v.pass;
        println!("criterion {}: {} ({secs:.0}s)", names[i], if v.pass { "PASS" } else { "FAIL" });
    }
    let _ = std::fs::remove_dir_all(scratch_root());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
