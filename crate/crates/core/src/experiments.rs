// SPDX-License-Identifier: Apache-2.0

//! Config-driven runs: H-function series, trajectory dumps, and `τ(t)` tables.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cells::CellArray;
use crate::coarse_graining::{self, CGGrid, CGReport, CellEstimate, PulledBackLattice};
use crate::dynamics;
use crate::ensembles::{self, DistKind, InitialDistribution};
use crate::error::{Error, Result};
use crate::wavefunction::{PhysParams, Superposition};

/// CODATA 2018 reduced Planck constant in J·s.
pub const HBAR_SI: f64 = 1.054_571_817e-34;

pub const DESK_PER_CELL: usize = 8;
pub const DESK_PARTICLES: usize = 100_000;
pub const FULL_PER_CELL: usize = 32;
pub const FULL_PARTICLES: usize = 4_000_000;

// ---------------------------------------------------------------- raw file

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub units: Option<String>,
    pub hbar: Option<f64>,
    pub mass: Option<f64>,
    pub l0: Option<f64>,
    pub v_expand: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperpositionSection {
    /// Only `"appendix"` is built in.
    pub preset: Option<String>,
    /// Path to a `n,n1,n2,phase_over_2pi` table.
    pub table: Option<String>,
    /// Inline rows `[n1, n2, phase_over_2pi]`.
    pub modes: Option<Vec<(u32, u32, f64)>>,
    /// Number of modes drawn by energy order with random phases.
    pub random: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSection {
    pub kind: Option<String>,
    pub cg_length: Option<f64>,
    pub mix_weight: Option<f64>,
    pub grid_file: Option<String>,
    pub t0: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub eps: Option<f64>,
    pub d: Option<usize>,
    pub p: Option<usize>,
    pub n_max: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub estimators: Option<Vec<String>>,
    pub outputs: Option<String>,
    pub full_scale: Option<bool>,
    pub write_cells: Option<bool>,
    /// Also evaluate `h̄′(τ(t_n))` in the static companion box.
    pub fixed_box: Option<bool>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySection {
    pub name: Option<String>,
    pub x0: [f64; 2],
    pub v_expand: Option<f64>,
    pub t0: Option<f64>,
    pub t_final: f64,
    pub tol: Option<f64>,
    pub round_trip: Option<bool>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauSection {
    pub t_max: f64,
    pub steps: usize,
}

/// A config file as written, before presets and defaults are applied.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<String>,
    #[serde(default)]
    pub params: ParamsSection,
    #[serde(default)]
    pub superposition: SuperpositionSection,
    #[serde(default)]
    pub distribution: DistributionSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub trajectory: Vec<TrajectorySection>,
    pub tau: Option<TauSection>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Fills every field left unset from `base`.
    fn over(self, base: ConfigFile) -> ConfigFile {
        let (p, b) = (self.params, base.params);
        let (s, bs) = (self.superposition, base.superposition);
        let (d, bd) = (self.distribution, base.distribution);
        let (r, br) = (self.run, base.run);
        ConfigFile {
            preset: self.preset,
            params: ParamsSection {
                units: p.units.or(b.units),
                hbar: p.hbar.or(b.hbar),
                mass: p.mass.or(b.mass),
                l0: p.l0.or(b.l0),
                v_expand: p.v_expand.or(b.v_expand),
            },
            superposition: if s.preset.is_some() || s.table.is_some() || s.modes.is_some() || s.random.is_some() {
                s
            } else {
                bs
            },
            distribution: DistributionSection {
                kind: d.kind.or(bd.kind),
                cg_length: d.cg_length.or(bd.cg_length),
                mix_weight: d.mix_weight.or(bd.mix_weight),
                grid_file: d.grid_file.or(bd.grid_file),
                t0: d.t0.or(bd.t0),
            },
            run: RunSection {
                eps: r.eps.or(br.eps),
                d: r.d.or(br.d),
                p: r.p.or(br.p),
                n_max: r.n_max.or(br.n_max),
                tol: r.tol.or(br.tol),
                seed: r.seed.or(br.seed),
                estimators: r.estimators.or(br.estimators),
                outputs: r.outputs.or(br.outputs),
                full_scale: r.full_scale.or(br.full_scale),
                write_cells: r.write_cells.or(br.write_cells),
                fixed_box: r.fixed_box.or(br.fixed_box),
            },
            trajectory: if self.trajectory.is_empty() { base.trajectory } else { self.trajectory },
            tau: self.tau.or(base.tau),
        }
    }
}

// ---------------------------------------------------------------- presets

pub const PRESETS: [(&str, &str); 5] = [
    ("example1", "appendix wavefunction, ground-state density rho0"),
    ("example2", "appendix wavefunction, rho1 coarse-grained on cells of 1/16"),
    ("example3", "appendix wavefunction, rho2 = 0.9 |psi|^2 + 0.1 rho0"),
    ("equilibrium", "appendix wavefunction, |psi|^2 (equivariance check)"),
    ("fig1", "three trajectories from one point with v_e t_f = 1"),
];

fn example_base(kind: &str) -> ConfigFile {
    ConfigFile {
        preset: None,
        params: ParamsSection {
            units: Some("natural".into()),
            hbar: Some(1.0),
            mass: Some(1.0),
            l0: Some(1.0),
            v_expand: Some(1.0),
        },
        superposition: SuperpositionSection { preset: Some("appendix".into()), ..Default::default() },
        distribution: DistributionSection { kind: Some(kind.into()), t0: Some(0.0), ..Default::default() },
        run: RunSection {
            eps: Some(0.05),
            n_max: Some(20),
            tol: Some(1e-6),
            seed: Some(1),
            estimators: Some(vec!["back".into(), "forward".into(), "tilde".into()]),
            ..Default::default()
        },
        trajectory: Vec::new(),
        tau: Some(TauSection { t_max: 10.0, steps: 200 }),
    }
}

/// The named preset as a config file.
pub fn preset(name: &str) -> Option<ConfigFile> {
    let mut c = match name {
        "example1" => example_base("rho0"),
        "example2" => example_base("rho1"),
        "example3" => example_base("rho2"),
        "equilibrium" => example_base("equilibrium"),
        "fig1" => {
            let mut c = example_base("equilibrium");
            c.trajectory = [0.1, 1.0, 10.0]
                .iter()
                .map(|&v| TrajectorySection {
                    name: Some(format!("v{v}")),
                    x0: [0.3, 0.4],
                    v_expand: Some(v),
                    t0: Some(0.0),
                    t_final: 1.0 / v,
                    tol: Some(1e-8),
                    round_trip: Some(true),
                })
                .collect();
            c
        }
        _ => return None,
    };
    match name {
        "example2" => c.distribution.cg_length = Some(1.0 / 16.0),
        "example3" => c.distribution.mix_weight = Some(0.1),
        _ => {}
    }
    c.run.outputs = Some(format!("out/{name}"));
    Some(c)
}

/// A config file rendered back to TOML.
pub fn to_toml(file: &ConfigFile) -> Result<String> {
    toml::to_string(file).map_err(|e| Error::Parse(e.to_string()))
}

// ---------------------------------------------------------------- resolved

/// Conversion between config units and the internal system with `ħ`, `m`
/// and `L0` as units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Units {
    pub name: &'static str,
    /// Config length per internal length unit.
    pub length: f64,
    /// Config time per internal time unit.
    pub time: f64,
}

impl Units {
    const IDENTITY: Units = Units { name: "natural", length: 1.0, time: 1.0 };
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum SuperpositionSpec {
    Appendix,
    Table(PathBuf),
    Inline(Vec<(u32, u32, f64)>),
    Random(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum DistributionSpec {
    Equilibrium,
    Rho0,
    Rho1 { cg_length: f64 },
    Rho2 { mix_weight: f64 },
    Grid(PathBuf),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Estimators {
    pub back: bool,
    pub forward: bool,
    pub tilde: bool,
}

impl Estimators {
    pub fn parse(names: &[String]) -> Result<Self> {
        let mut e = Estimators::default();
        let mut bad = Vec::new();
        for n in names {
            match n.trim() {
                "back" | "backward" => e.back = true,
                "forward" => e.forward = true,
                "tilde" => e.tilde = true,
                other => bad.push(format!("unknown estimator {other:?} (expected back, forward, tilde)")),
            }
        }
        if bad.is_empty() {
            Ok(e)
        } else {
            Err(Error::Config(bad))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryCase {
    pub name: String,
    /// Internal units from here on.
    pub x0: [f64; 2],
    pub v_expand: f64,
    pub t0: f64,
    pub t_final: f64,
    pub tol: f64,
    pub round_trip: bool,
}

/// A validated experiment in internal units.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub units: Units,
    pub params: PhysParams,
    pub superposition: SuperpositionSpec,
    pub distribution: DistributionSpec,
    pub t0: f64,
    pub eps: f64,
    pub per_cell: usize,
    pub particles: usize,
    pub n_max: usize,
    pub tol: f64,
    pub seed: u64,
    pub estimators: Estimators,
    pub fixed_box: bool,
    pub write_cells: bool,
    pub outputs: PathBuf,
    pub trajectories: Vec<TrajectoryCase>,
    pub tau: Option<(f64, usize)>,
    /// Directory relative paths in the file are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub outputs: Option<PathBuf>,
    pub full_scale: bool,
    pub estimators: Option<Vec<String>>,
}

fn positive(errs: &mut Vec<String>, name: &str, v: Option<f64>) -> f64 {
    match v {
        Some(v) if v.is_finite() && v > 0.0 => v,
        Some(v) => {
            errs.push(format!("{name} must be finite and > 0, got {v}"));
            f64::NAN
        }
        None => {
            errs.push(format!("{name} is required"));
            f64::NAN
        }
    }
}

impl ExperimentConfig {
    /// Applies the preset, defaults and overrides, and checks everything,
    /// reporting all problems at once.
    pub fn resolve(file: ConfigFile, overrides: &Overrides, base_dir: &Path) -> Result<Self> {
        let mut errs = Vec::new();
        let name = file.preset.clone();
        let file = match name.as_deref() {
            None => file,
            Some(n) => match preset(n) {
                Some(base) => file.over(base),
                None => return Err(Error::Config(vec![format!("unknown preset {n:?}")])),
            },
        };

        let p = &file.params;
        let unit_name = p.units.as_deref().unwrap_or("natural");
        let (units, params) = match unit_name {
            "natural" => {
                let hbar = positive(&mut errs, "params.hbar", p.hbar.or(Some(1.0)));
                let mass = positive(&mut errs, "params.mass", p.mass.or(Some(1.0)));
                let l0 = positive(&mut errs, "params.l0", p.l0.or(Some(1.0)));
                let v = p.v_expand.unwrap_or(1.0);
                (Units::IDENTITY, PhysParams::new(hbar, mass, l0, v))
            }
            "si" => {
                let hbar = positive(&mut errs, "params.hbar", p.hbar.or(Some(HBAR_SI)));
                let mass = positive(&mut errs, "params.mass", p.mass);
                let l0 = positive(&mut errs, "params.l0", p.l0);
                let v = p.v_expand.unwrap_or(f64::NAN);
                if p.v_expand.is_none() {
                    errs.push("params.v_expand is required with si units".into());
                }
                let time = mass * l0 * l0 / hbar;
                let units = Units { name: "si", length: l0, time };
                (units, PhysParams::new(1.0, 1.0, 1.0, v * time / l0))
            }
            other => {
                errs.push(format!("params.units must be \"natural\" or \"si\", got {other:?}"));
                (Units::IDENTITY, PhysParams::new(1.0, 1.0, 1.0, 1.0))
            }
        };
        let params = match params {
            Ok(p) => p,
            Err(e) => {
                errs.push(format!("params: {e}"));
                PhysParams::natural(1.0)
            }
        };
        let (lu, tu) = (units.length, units.time);

        let s = &file.superposition;
        let given = [s.preset.is_some(), s.table.is_some(), s.modes.is_some(), s.random.is_some()];
        if given.iter().filter(|g| **g).count() > 1 {
            errs.push("superposition: give only one of preset, table, modes, random".into());
        }
        let superposition = if let Some(t) = &s.table {
            SuperpositionSpec::Table(PathBuf::from(t))
        } else if let Some(m) = &s.modes {
            SuperpositionSpec::Inline(m.clone())
        } else if let Some(n) = s.random {
            if n == 0 {
                errs.push("superposition.random must be >= 1".into());
            }
            SuperpositionSpec::Random(n)
        } else {
            match s.preset.as_deref() {
                None | Some("appendix") => SuperpositionSpec::Appendix,
                Some(o) => {
                    errs.push(format!("superposition.preset {o:?} unknown (only \"appendix\")"));
                    SuperpositionSpec::Appendix
                }
            }
        };

        let d = &file.distribution;
        let t0 = d.t0.unwrap_or(0.0) / tu;
        if !(t0.is_finite() && t0 >= 0.0) {
            errs.push(format!("distribution.t0 must be >= 0, got {}", d.t0.unwrap_or(0.0)));
        }
        let distribution = match d.kind.as_deref() {
            Some("equilibrium") => DistributionSpec::Equilibrium,
            Some("rho0") => DistributionSpec::Rho0,
            Some("rho1") => {
                let c = positive(&mut errs, "distribution.cg_length", d.cg_length) / lu;
                if c.is_finite() {
                    let side = params.side(t0);
                    let k = (side / c).round();
                    if k < 1.0 || ((k * c - side) / side).abs() > 1e-12 {
                        errs.push(format!("distribution.cg_length must divide the initial side ({})", side * lu));
                    }
                }
                DistributionSpec::Rho1 { cg_length: c }
            }
            Some("rho2") => {
                let w = d.mix_weight.unwrap_or(0.1);
                if !(0.0..=1.0).contains(&w) {
                    errs.push(format!("distribution.mix_weight must lie in [0, 1], got {w}"));
                }
                DistributionSpec::Rho2 { mix_weight: w }
            }
            Some("grid") => match &d.grid_file {
                Some(f) => DistributionSpec::Grid(PathBuf::from(f)),
                None => {
                    errs.push("distribution.grid_file is required for kind = \"grid\"".into());
                    DistributionSpec::Equilibrium
                }
            },
            Some(o) => {
                errs.push(format!("distribution.kind {o:?} unknown (equilibrium, rho0, rho1, rho2, grid)"));
                DistributionSpec::Equilibrium
            }
            None => {
                if file.trajectory.is_empty() && file.tau.is_none() {
                    errs.push("distribution.kind is required".into());
                }
                DistributionSpec::Equilibrium
            }
        };

        let r = &file.run;
        let full = overrides.full_scale || r.full_scale.unwrap_or(false);
        let per_cell = r.d.unwrap_or(if full { FULL_PER_CELL } else { DESK_PER_CELL });
        let particles = r.p.unwrap_or(if full { FULL_PARTICLES } else { DESK_PARTICLES });
        let n_max = r.n_max.unwrap_or(20);
        let tol = r.tol.unwrap_or(1e-6);
        let seed = overrides.seed.or(r.seed).unwrap_or(0);
        let est_names = overrides
            .estimators
            .clone()
            .or_else(|| r.estimators.clone())
            .unwrap_or_else(|| vec!["back".into(), "forward".into()]);
        let estimators = match Estimators::parse(&est_names) {
            Ok(e) => e,
            Err(Error::Config(v)) => {
                errs.extend(v);
                Estimators::default()
            }
            Err(e) => return Err(e),
        };
        let runs_series = d.kind.is_some();
        let mut eps = f64::NAN;
        if runs_series {
            eps = positive(&mut errs, "run.eps", r.eps) / lu;
            if eps.is_finite() {
                let side = params.side(t0);
                let k = (side / eps).round();
                if k < 1.0 || ((k * eps - side) / side).abs() > 1e-12 {
                    errs.push(format!("run.eps must divide the initial side ({})", side * lu));
                }
            }
            if params.v_expand <= 0.0 {
                errs.push("sample times t_n = n eps / v_expand need v_expand > 0".into());
            }
            if per_cell == 0 {
                errs.push("run.d must be >= 1".into());
            }
            if estimators.forward && particles == 0 {
                errs.push("run.p must be >= 1 when the forward estimator is selected".into());
            }
        }
        if !(tol.is_finite() && tol > 0.0 && tol < 1.0) {
            errs.push(format!("run.tol must lie in (0, 1), got {tol}"));
        }
        let outputs = overrides
            .outputs
            .clone()
            .or_else(|| r.outputs.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));

        let mut trajectories = Vec::new();
        for (i, c) in file.trajectory.iter().enumerate() {
            let v = c.v_expand.map(|v| v * tu / lu).unwrap_or(params.v_expand);
            let case = TrajectoryCase {
                name: c.name.clone().unwrap_or_else(|| format!("case{}", i + 1)),
                x0: [c.x0[0] / lu, c.x0[1] / lu],
                v_expand: v,
                t0: c.t0.unwrap_or(0.0) / tu,
                t_final: c.t_final / tu,
                tol: c.tol.unwrap_or(tol),
                round_trip: c.round_trip.unwrap_or(false),
            };
            if !(v.is_finite() && v >= 0.0) {
                errs.push(format!("trajectory {}: v_expand must be >= 0", case.name));
            }
            if !(case.t0 >= 0.0 && case.t_final.is_finite() && case.t_final >= 0.0) {
                errs.push(format!("trajectory {}: times must be >= 0", case.name));
            }
            let side = params.l0 + v.max(0.0) * case.t0.max(0.0);
            if !case.x0.iter().all(|&c| c > 0.0 && c < side) {
                errs.push(format!("trajectory {}: x0 must lie strictly inside the box", case.name));
            }
            if case.name.contains(['/', '\\']) {
                errs.push(format!("trajectory {}: name must not contain path separators", case.name));
            }
            trajectories.push(case);
        }
        let tau = match &file.tau {
            Some(t) => {
                if !(t.t_max.is_finite() && t.t_max > 0.0) || t.steps == 0 {
                    errs.push("tau: t_max must be > 0 and steps >= 1".into());
                }
                Some((t.t_max / tu, t.steps))
            }
            None => None,
        };

        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        Ok(Self {
            preset: name,
            units,
            params,
            superposition,
            distribution,
            t0,
            eps,
            per_cell,
            particles,
            n_max,
            tol,
            seed,
            estimators,
            fixed_box: r.fixed_box.unwrap_or(false),
            write_cells: r.write_cells.unwrap_or(false),
            outputs,
            trajectories,
            tau,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn from_file(path: &Path, overrides: &Overrides) -> Result<Self> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::resolve(ConfigFile::load(path)?, overrides, &base)
    }

    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn build_superposition(&self) -> Result<Superposition> {
        match &self.superposition {
            SuperpositionSpec::Appendix => Ok(Superposition::appendix(self.params)),
            SuperpositionSpec::Table(p) => {
                let p = self.path(p);
                let text = fs::read_to_string(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
                Superposition::from_table(&text, self.params)
            }
            SuperpositionSpec::Inline(rows) => {
                let mut modes = Vec::with_capacity(rows.len());
                for &(a, b, _) in rows {
                    modes.push(crate::wavefunction::Mode::new(a, b)?);
                }
                Superposition::new(modes, rows.iter().map(|r| r.2).collect(), self.params)
            }
            SuperpositionSpec::Random(n) => {
                // a stream of its own, apart from the sampling streams
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(u64::MAX);
                Superposition::random(*n, self.params, &mut rng)
            }
        }
    }

    pub fn build_distribution(&self, sup: &Superposition) -> Result<InitialDistribution> {
        let sup = sup.clone();
        match &self.distribution {
            DistributionSpec::Equilibrium => InitialDistribution::equilibrium(sup, self.t0),
            DistributionSpec::Rho0 => InitialDistribution::rho0(sup, self.t0),
            DistributionSpec::Rho1 { cg_length } => ensembles::build_rho1(&sup, self.t0, *cg_length),
            DistributionSpec::Rho2 { mix_weight } => InitialDistribution::rho2(sup, self.t0, *mix_weight),
            DistributionSpec::Grid(p) => {
                let p = self.path(p);
                let f = fs::File::open(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
                let (vals, len) = ensembles::read_grid(std::io::BufReader::new(f))?;
                InitialDistribution::grid(sup, self.t0, vals, len / self.units.length)
            }
        }
    }

    /// `t_n = t0 + n ε/v_e` in internal units.
    pub fn sample_times(&self) -> Result<Vec<f64>> {
        let ts = coarse_graining::sample_times(self.eps, self.params.v_expand, self.n_max)?;
        Ok(ts.into_iter().map(|t| self.t0 + t).collect())
    }
}

// ---------------------------------------------------------------- session

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct LatticeKey {
    fixed: bool,
    sup: String,
    params: [u64; 4],
    t0: u64,
    t: u64,
    eps: u64,
    per_cell: usize,
    tol: u64,
}

impl LatticeKey {
    fn new(fixed: bool, sup: &Superposition, t0: f64, t: f64, grid: &CGGrid, tol: f64) -> Self {
        let p = sup.params();
        Self {
            fixed,
            sup: sup.to_table(),
            params: [p.hbar.to_bits(), p.mass.to_bits(), p.l0.to_bits(), p.v_expand.to_bits()],
            t0: t0.to_bits(),
            t: t.to_bits(),
            eps: grid.eps().to_bits(),
            per_cell: grid.per_cell(),
            tol: tol.to_bits(),
        }
    }
}

/// Holds pulled-back lattices between runs. Lattices depend only on the
/// wavefunction, the grid, the times and `tol`, so runs that differ only
/// in the initial distribution share them.
#[derive(Default)]
pub struct Session {
    cache: Option<HashMap<LatticeKey, Arc<PulledBackLattice>>>,
}

impl Session {
    /// No caching; every run computes its own lattices.
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn caching() -> Self {
        Self { cache: Some(HashMap::new()) }
    }

    /// Lattice for estimates of `dist` at `t`; equilibrium skips the pull-back.
    fn expanding(&mut self, dist: &InitialDistribution, t: f64, grid: CGGrid, tol: f64) -> Result<Arc<PulledBackLattice>> {
        if matches!(dist.kind, DistKind::Equilibrium) {
            PulledBackLattice::equilibrium_only(&dist.sup, dist.t0, t, grid).map(Arc::new)
        } else {
            self.lattice(false, &dist.sup, dist.t0, t, grid, tol)
        }
    }

    fn lattice(&mut self, fixed: bool, sup: &Superposition, t0: f64, t: f64, grid: CGGrid, tol: f64) -> Result<Arc<PulledBackLattice>> {
        let key = LatticeKey::new(fixed, sup, t0, t, &grid, tol);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(hit.clone());
        }
        let lat = Arc::new(if fixed {
            PulledBackLattice::compute_fixed(sup, t0, t, grid, tol)?
        } else {
            PulledBackLattice::compute(sup, t0, t, grid, tol)?
        });
        if let Some(c) = self.cache.as_mut() {
            c.insert(key, lat.clone());
        }
        Ok(lat)
    }
}

// ---------------------------------------------------------------- runs

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TildeRow {
    pub n: usize,
    pub t: f64,
    pub tau: f64,
    pub h_tilde: Option<f64>,
    pub h_fixed: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageFailure {
    pub stage: String,
    pub n: Option<usize>,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub stages: Vec<(String, f64)>,
    pub failures: Vec<StageFailure>,
    pub files: Vec<OutputFile>,
    /// `h̄_back(t_last)/h̄_back(t_0) - 1`.
    pub h_back_relative_increase: Option<f64>,
    pub notes: Vec<String>,
}

pub struct ExperimentOutcome {
    pub reports: Vec<CGReport>,
    pub tilde: Vec<TildeRow>,
    pub manifest: Manifest,
}

impl ExperimentOutcome {
    pub fn h_back_relative_increase(&self) -> Option<f64> {
        self.manifest.h_back_relative_increase
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

struct Writer {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&p, bytes).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
        self.files.push(OutputFile { path: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }
}

fn reports_csv(reports: &[CGReport], units: &Units) -> String {
    let mut s = String::from("n,t,h_back,h_forward,g,f,excluded_points\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.n,
            r.t * units.time,
            opt(r.h_back()),
            opt(r.h_forward()),
            opt(r.g()),
            opt(r.f()),
            r.excluded_points()
        );
    }
    s
}

fn tilde_csv(rows: &[TildeRow], units: &Units) -> String {
    let mut s = String::from("n,t,tau,h_tilde,h_fixed\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.n, r.t * units.time, r.tau * units.time, opt(r.h_tilde), opt(r.h_fixed));
    }
    s
}

fn cells_csv(est: &CellEstimate, eq: &CellArray, units: &Units) -> String {
    let k = 1.0 / (units.length * units.length);
    let mut s = String::from("a,b,rho_bar,eq_bar\n");
    for (a, b, v) in est.rho_cells.iter_cells() {
        let _ = writeln!(s, "{a},{b},{},{}", v * k, eq.get(a, b) * k);
    }
    s
}

/// Runs the selected estimators at every `t_n` and writes the outputs.
///
/// Estimator failures at single sample times leave empty CSV fields and are
/// listed in the manifest; setup failures are returned as errors.
pub fn run_experiment(cfg: &ExperimentConfig, session: &mut Session) -> Result<ExperimentOutcome> {
    let mut stages = Vec::new();
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    let clock = Instant::now();
    let sup = cfg.build_superposition()?;
    let dist = cfg.build_distribution(&sup)?;
    let times = cfg.sample_times()?;
    let grids: Vec<CGGrid> = times
        .iter()
        .map(|&t| CGGrid::at_time(cfg.eps, cfg.per_cell, &cfg.params, t))
        .collect::<Result<_>>()?;
    stages.push(("setup".to_string(), clock.elapsed().as_secs_f64()));

    let forward = if cfg.estimators.forward {
        let clock = Instant::now();
        let result = ensembles::sample(&dist, cfg.particles, cfg.seed)
            .and_then(|ps| coarse_graining::forward_counts(&sup, &ps, &times, &grids, cfg.tol));
        stages.push(("forward".to_string(), clock.elapsed().as_secs_f64()));
        match result {
            Ok(fc) => Some(fc),
            Err(e) => {
                failures.push(StageFailure { stage: "forward".into(), n: None, error: e.to_string() });
                None
            }
        }
    } else {
        None
    };

    let clock = Instant::now();
    let mut reports = Vec::with_capacity(times.len());
    for (n, (&t, &grid)) in times.iter().zip(&grids).enumerate() {
        let mut eq_cells = None;
        let mut back = None;
        if cfg.estimators.back {
            match session.expanding(&dist, t, grid, cfg.tol).and_then(|lat| {
                let est = lat.estimate(&dist)?;
                Ok((lat.eq_cells().clone(), est))
            }) {
                Ok((eq, est)) => {
                    eq_cells = Some(eq);
                    back = Some(est);
                }
                Err(e) => failures.push(StageFailure { stage: "back".into(), n: Some(n), error: e.to_string() }),
            }
        }
        let eq_cells = match eq_cells {
            Some(eq) => eq,
            None => coarse_graining::eq_cells(&sup, t, &grid)?,
        };
        let fwd = forward.as_ref().map(|fc| fc.estimate(n, &eq_cells));
        reports.push(CGReport { n, t, grid, eq_cells, back, forward: fwd });
    }
    stages.push(("back".to_string(), clock.elapsed().as_secs_f64()));

    let mut tilde = Vec::new();
    if cfg.estimators.tilde {
        let clock = Instant::now();
        for (n, &t) in times.iter().enumerate() {
            let tau = cfg.params.tau(t);
            let h_tilde = coarse_graining::tilde_grid(&cfg.params, t, cfg.eps, cfg.per_cell)
                .and_then(|g| session.expanding(&dist, t, g, cfg.tol))
                .and_then(|lat| lat.estimate(&dist))
                .map(|e| e.h);
            let h_fixed = if cfg.fixed_box {
                Some(
                    CGGrid::new(cfg.eps, cfg.per_cell, cfg.params.l0)
                        .and_then(|g| session.lattice(true, &sup, cfg.t0, tau, g, cfg.tol))
                        .and_then(|lat| lat.estimate(&dist))
                        .map(|e| e.h),
                )
            } else {
                None
            };
            let mut take = |r: Result<f64>, stage: &str| match r {
                Ok(v) => Some(v),
                Err(e) => {
                    failures.push(StageFailure { stage: stage.into(), n: Some(n), error: e.to_string() });
                    None
                }
            };
            let h_tilde = take(h_tilde, "tilde");
            let h_fixed = h_fixed.and_then(|r| take(r, "fixed_box"));
            tilde.push(TildeRow { n, t, tau, h_tilde, h_fixed });
        }
        stages.push(("tilde".to_string(), clock.elapsed().as_secs_f64()));
    }

    let increase = match (reports.first().and_then(CGReport::h_back), reports.last().and_then(CGReport::h_back)) {
        (Some(h0), Some(h1)) if reports.len() > 1 && h0 > 0.0 => Some(h1 / h0 - 1.0),
        _ => None,
    };
    if let Some(inc) = increase {
        notes.push(format!("h_back grows by {:.3}% from t_0 to t_{}", 100.0 * inc, times.len() - 1));
    }

    let mut w = Writer::new(&cfg.outputs)?;
    w.put("superposition.csv", sup.to_table().as_bytes())?;
    w.put("reports.csv", reports_csv(&reports, &cfg.units).as_bytes())?;
    if cfg.estimators.tilde {
        w.put("tilde.csv", tilde_csv(&tilde, &cfg.units).as_bytes())?;
    }
    if cfg.write_cells {
        for r in &reports {
            for (tag, est) in [("back", &r.back), ("forward", &r.forward)] {
                if let Some(est) = est {
                    w.put(&format!("cells/{tag}_n{:02}.csv", r.n), cells_csv(est, &r.eq_cells, &cfg.units).as_bytes())?;
                }
            }
        }
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        stages,
        failures,
        files: w.files.clone(),
        h_back_relative_increase: increase,
        notes,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(cfg.outputs.join("manifest.json"), json)?;
    Ok(ExperimentOutcome { reports, tilde, manifest })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryResult {
    pub name: String,
    pub file: Option<String>,
    pub final_side: f64,
    pub final_position: Option<[f64; 2]>,
    /// Distance from `x0` after integrating back, when requested.
    pub round_trip_error: Option<f64>,
    pub error: Option<String>,
}

/// Writes `trajectory_<name>.csv` (`t,x1,x2`, accepted steps, in config
/// units) for each case; round trips append the return leg.
pub fn run_trajectories(cfg: &ExperimentConfig) -> Result<Vec<TrajectoryResult>> {
    let mut w = Writer::new(&cfg.outputs)?;
    let mut out = Vec::new();
    for case in &cfg.trajectories {
        let params = cfg.params.with_v_expand(case.v_expand)?;
        let sup = cfg.build_superposition()?.with_params(params);
        let final_side = params.side(case.t_final) * cfg.units.length;
        let fwd = match dynamics::integrate_trajectory(&sup, case.x0, case.t0, case.t_final, case.tol) {
            Ok(p) => p,
            Err(e) => {
                out.push(TrajectoryResult {
                    name: case.name.clone(),
                    file: None,
                    final_side,
                    final_position: None,
                    round_trip_error: None,
                    error: Some(e.to_string()),
                });
                continue;
            }
        };
        let mut rows = fwd.nodes.clone();
        let mut rt_err = None;
        let mut error = None;
        if case.round_trip {
            match dynamics::integrate_trajectory(&sup, fwd.final_position(), case.t_final, case.t0, case.tol) {
                Ok(back) => {
                    let e = back.final_position();
                    rt_err = Some(((e[0] - case.x0[0]).powi(2) + (e[1] - case.x0[1]).powi(2)).sqrt() * cfg.units.length);
                    rows.extend(back.nodes.into_iter().skip(1));
                }
                Err(e) => error = Some(format!("return leg: {e}")),
            }
        }
        let (lu, tu) = (cfg.units.length, cfg.units.time);
        let mut csv = String::from("t,x1,x2\n");
        for (t, x) in rows {
            let _ = writeln!(csv, "{},{},{}", t * tu, x[0] * lu, x[1] * lu);
        }
        let name = format!("trajectory_{}.csv", case.name);
        w.put(&name, csv.as_bytes())?;
        let f = fwd.final_position();
        out.push(TrajectoryResult {
            name: case.name.clone(),
            file: Some(name),
            final_side,
            final_position: Some([f[0] * lu, f[1] * lu]),
            round_trip_error: rt_err,
            error,
        });
    }
    let summary = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "cases": out,
        "files": w.files,
    });
    fs::write(cfg.outputs.join("trajectories.json"), serde_json::to_string_pretty(&summary).unwrap())?;
    Ok(out)
}

/// `(t, τ(t))` at `steps + 1` evenly spaced times in `[0, t_max]`, in config units.
pub fn tau_table(params: &PhysParams, units: &Units, t_max: f64, steps: usize) -> Result<Vec<(f64, f64)>> {
    if !(t_max.is_finite() && t_max > 0.0) || steps == 0 {
        return Err(Error::config("tau table needs t_max > 0 and steps >= 1"));
    }
    Ok((0..=steps)
        .map(|i| {
            let t = t_max * i as f64 / steps as f64;
            (t * units.time, params.tau(t) * units.time)
        })
        .collect())
}

/// Writes `tau.csv` with header `t,tau`.
pub fn run_tau_table(cfg: &ExperimentConfig) -> Result<Vec<(f64, f64)>> {
    let (t_max, steps) = cfg.tau.ok_or_else(|| Error::config("config has no [tau] section"))?;
    let rows = tau_table(&cfg.params, &cfg.units, t_max, steps)?;
    let mut csv = String::from("t,tau\n");
    for (t, tau) in &rows {
        let _ = writeln!(csv, "{t},{tau}");
    }
    let mut w = Writer::new(&cfg.outputs)?;
    w.put("tau.csv", csv.as_bytes())?;
    Ok(rows)
}
