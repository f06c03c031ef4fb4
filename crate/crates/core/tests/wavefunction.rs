// SPDX-License-Identifier: Apache-2.0

use expbox::quad::{gauss_legendre, integrate_rect};
use expbox::wavefunction::{eval_mode, fixed_psi_density, psi_density, Mode, PhysParams, Superposition};

fn appendix(v: f64) -> Superposition {
    Superposition::appendix(PhysParams::natural(v))
}

#[test]
fn modes_stay_orthonormal_while_the_box_grows() {
    let p = PhysParams::natural(1.0);
    let rule = gauss_legendre(64);
    let modes = [Mode::new(1, 1).unwrap(), Mode::new(2, 1).unwrap(), Mode::new(3, 2).unwrap()];
    for t in [0.0, 0.5, 1.0] {
        let l = p.side(t);
        for &a in &modes {
            for &b in &modes {
                let re = integrate_rect(&rule, (0.0, l), (0.0, l), |x1, x2| {
                    let za = eval_mode(a, t, [x1, x2], &p).unwrap();
                    let zb = eval_mode(b, t, [x1, x2], &p).unwrap();
                    (za.conj() * zb).re
                });
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((re - want).abs() < 1e-6, "<{a}|{b}> at t={t}: {re}");
            }
        }
    }
}

#[test]
fn superposition_is_normalized() {
    let sup = appendix(1.0);
    let rule = gauss_legendre(64);
    for t in [0.0, 0.5, 1.0] {
        let l = sup.params().side(t);
        let m = integrate_rect(&rule, (0.0, l), (0.0, l), |x1, x2| psi_density(&sup, t, [x1, x2]).unwrap());
        assert!((m - 1.0).abs() < 1e-6, "t={t}: {m}");
    }
    for tau in [0.0, 0.3, 2.0] {
        let m = integrate_rect(&rule, (0.0, 1.0), (0.0, 1.0), |y1, y2| {
            fixed_psi_density(&sup, tau, [y1, y2]).unwrap()
        });
        assert!((m - 1.0).abs() < 1e-6, "tau={tau}: {m}");
    }
}

#[test]
fn contracting_boxes_are_rejected() {
    assert!(PhysParams::new(1.0, 1.0, 1.0, -0.1).is_err());
    assert!(PhysParams::new(0.0, 1.0, 1.0, 0.1).is_err());
    assert!(Mode::new(0, 1).is_err());
}
