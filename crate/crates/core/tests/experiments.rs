// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};

use expbox::experiments::{run_experiment, ConfigFile, ExperimentConfig, Overrides, Session};

fn scratch(tag: &str) -> PathBuf {
    std::env::temp_dir().join(format!("expbox-it-{}-{tag}", std::process::id()))
}

fn small(out: &Path, n_max: usize) -> ExperimentConfig {
    let mut file = ConfigFile { preset: Some("example1".into()), ..Default::default() };
    file.run.n_max = Some(n_max);
    file.run.d = Some(2);
    file.run.p = Some(4000);
    let ov = Overrides {
        outputs: Some(out.to_path_buf()),
        estimators: Some(vec!["back".into(), "forward".into(), "tilde".into()]),
        ..Default::default()
    };
    ExperimentConfig::resolve(file, &ov, Path::new(".")).unwrap()
}

#[test]
fn runs_are_byte_identical() {
    let (a, b) = (scratch("a"), scratch("b"));
    let ra = run_experiment(&small(&a, 2), &mut Session::new()).unwrap();
    let rb = run_experiment(&small(&b, 2), &mut Session::new()).unwrap();
    assert_eq!(ra.reports.len(), 3);
    assert!(ra.manifest.failures.is_empty(), "{:?}", ra.manifest.failures);
    for name in ["reports.csv", "tilde.csv", "superposition.csv"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
    let hashes = |m: &expbox::experiments::Manifest| m.files.iter().map(|f| (f.path.clone(), f.sha256.clone())).collect::<Vec<_>>();
    assert_eq!(hashes(&ra.manifest), hashes(&rb.manifest));
    assert!(a.join("manifest.json").exists());
    std::fs::remove_dir_all(a).ok();
    std::fs::remove_dir_all(b).ok();
}

#[test]
fn zero_steps_reports_only_the_initial_time() {
    let out = scratch("zero");
    let r = run_experiment(&small(&out, 0), &mut Session::new()).unwrap();
    assert_eq!(r.reports.len(), 1);
    assert_eq!(r.reports[0].n, 0);
    assert_eq!(r.reports[0].t, 0.0);
    assert!(r.h_back_relative_increase().is_none());
    let csv = std::fs::read_to_string(out.join("reports.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    std::fs::remove_dir_all(out).ok();
}
