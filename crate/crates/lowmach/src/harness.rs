//! Scenario driver: plain-text configuration, named presets, the stepping
//! loop with observers (snapshots, spectra, checkpoints), refinement
//! studies, and a machine-readable run summary.
//!
//! Config grammar (documented here, no external schema):
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! Sections and keys are case-sensitive; values are free-form strings
//! interpreted per key. Serialization emits sections and keys in sorted
//! order, so `serialize(parse(text))` is idempotent. All quantities are in
//! CGS units.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

use rustfft::FftPlanner;
use serde::Serialize;

use crate::advection::AdvectionScheme;
use crate::analysis;
use crate::error::{Error, Result};
use crate::grid::{BcKind, BcSpec, CellField, FaceField, Grid, WallVelocity};
use crate::integrators::{
    self, inertial_step_diag, overdamped_step_diag, project_initial_velocity, Scheme, StepParams,
};
use crate::mixture::{CoefficientModel, Coefficients, FluidState, MixtureModel, OsmoticModel};

// ---------------------------------------------------------------------------
// Sectioned key = value configuration
// ---------------------------------------------------------------------------

/// Parsed configuration text: section -> key -> value.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {}: unterminated section header", lineno + 1))
                })?;
                section = name.trim().to_string();
                cfg.sections.entry(section.clone()).or_default();
            } else if let Some((key, value)) = line.split_once('=') {
                cfg.sections
                    .entry(section.clone())
                    .or_default()
                    .insert(key.trim().to_string(), value.trim().to_string());
            } else {
                return Err(Error::Config(format!(
                    "line {}: expected `[section]` or `key = value`, got `{line}`",
                    lineno + 1
                )));
            }
        }
        Ok(cfg)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (name, entries) in &self.sections {
            if !out.is_empty() {
                out.push('\n');
            }
            let _ = writeln!(out, "[{name}]");
            for (k, v) in entries {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|s| s.as_str())
    }

    fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key)
            .ok_or_else(|| Error::Config(format!("missing {section}.{key}")))
    }

    fn get_f64(&self, section: &str, key: &str) -> Result<f64> {
        let v = self.require(section, key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("{section}.{key}: `{v}` is not a number")))
    }

    fn get_u64(&self, section: &str, key: &str) -> Result<u64> {
        let v = self.require(section, key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("{section}.{key}: `{v}` is not an integer")))
    }

    fn get_usize(&self, section: &str, key: &str) -> Result<usize> {
        Ok(self.get_u64(section, key)? as usize)
    }

    fn get_bool(&self, section: &str, key: &str) -> Result<bool> {
        match self.require(section, key)? {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(Error::Config(format!("{section}.{key}: `{v}` is not a boolean"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

/// Initial concentration profile. The velocity always starts at rest and is
/// then projected onto the divergence constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialCondition {
    Uniform { c: f64 },
    /// Lower half c_bottom, upper half c_top, sharp interface at ly/2.
    TwoLayer { c_bottom: f64, c_top: f64 },
    /// Linear profile from c_bottom at y = 0 to c_top at y = ly; with
    /// no-flux walls this is a quasi-steady gradient (decay time
    /// ly^2 / (pi^2 chi), far longer than any run here).
    LinearRamp { c_bottom: f64, c_top: f64 },
    /// c = exp(-decay r^2) with r measured from the domain center.
    GaussianBump { decay: f64 },
    /// Centered square of side lx/2 at c_in, surrounded by c_out.
    SquareBubble { c_in: f64, c_out: f64 },
}

/// Moving-wall drive on the y walls (x walls always stationary).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WallDrive {
    None,
    /// The lid-driven cavity profile on both y walls, opposite signs.
    CavityLids,
    /// Uniform tangential speed +s on the top wall, -s on the bottom.
    ShearLids { speed: f64 },
}

/// Everything needed to reproduce a run. Parses from / serializes to the
/// sectioned key = value format.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    /// Out-of-plane thickness; sets the cell volume and thus the noise
    /// amplitude per cell.
    pub dz: f64,
    pub periodic_x: bool,
    pub periodic_y: bool,

    pub rho1_pure: f64,
    pub rho2_pure: f64,
    pub eta: CoefficientModel,
    pub chi: CoefficientModel,
    pub osmotic: OsmoticModel,
    pub kt: f64,

    pub initial: InitialCondition,

    pub scheme: Scheme,
    pub advection: AdvectionScheme,
    pub limited: bool,
    pub dt: f64,
    pub n_steps: u64,
    pub gravity: [f64; 2],
    pub wall_drive: WallDrive,
    /// Deterministic runs only: cap the advective CFL at this value by
    /// shrinking dt. Zero disables.
    pub adaptive_cfl: f64,

    pub stochastic: bool,
    /// With noise on, include the stochastic mass flux (as opposed to
    /// stress noise only).
    pub stochastic_mass: bool,
    pub seed: u64,

    pub output_dir: PathBuf,
    /// Observer cadences in steps; zero disables.
    pub snapshot_stride: u64,
    pub spectrum_stride: u64,
    pub checkpoint_stride: u64,
    /// Steps to discard before spectrum accumulation begins.
    pub equilibration_steps: u64,

    pub stokes_tol: f64,
}

pub const PRESET_NAMES: &[&str] =
    &["equilibrium", "cavity-2d", "square-bubble", "water-glycerol", "kh-demo"];

impl ScenarioConfig {
    /// A named preset at its full advertised scale.
    pub fn preset(name: &str) -> Result<ScenarioConfig> {
        let base = ScenarioConfig {
            name: name.to_string(),
            nx: 64,
            ny: 64,
            lx: 1.0,
            ly: 1.0,
            dz: 1.0,
            periodic_x: false,
            periodic_y: false,
            rho1_pure: 2.0,
            rho2_pure: 1.0,
            eta: CoefficientModel::Linear { f0: 0.1, f1: 1.0 },
            chi: CoefficientModel::Linear { f0: 1e-4, f1: 1e-3 },
            osmotic: OsmoticModel::Constant(0.0),
            kt: 0.0,
            initial: InitialCondition::Uniform { c: 0.5 },
            scheme: Scheme::Inertial,
            advection: AdvectionScheme::Centered,
            limited: true,
            dt: 5e-3,
            n_steps: 400,
            gravity: [0.0, 0.0],
            wall_drive: WallDrive::None,
            adaptive_cfl: 0.0,
            stochastic: false,
            stochastic_mass: true,
            seed: 0,
            output_dir: PathBuf::from("out"),
            snapshot_stride: 0,
            spectrum_stride: 0,
            checkpoint_stride: 0,
            equilibration_steps: 0,
            stokes_tol: 1e-9,
        };
        match name {
            // Thermal equilibrium in a periodic box; large cell volume keeps
            // the relative fluctuations small.
            "equilibrium" => Ok(ScenarioConfig {
                nx: 32,
                ny: 32,
                lx: 32.0,
                ly: 32.0,
                dz: 1e6,
                periodic_x: true,
                periodic_y: true,
                rho1_pure: 2.0 / 3.0,
                rho2_pure: 2.0,
                eta: CoefficientModel::Linear { f0: 1.0, f1: 10.0 },
                chi: CoefficientModel::Constant(1.0),
                osmotic: OsmoticModel::IdealMasses { m1: 1.0, m2: 2.0 },
                kt: 1.0,
                initial: InitialCondition::Uniform { c: 0.5 },
                dt: 0.1,
                n_steps: 1000,
                stochastic: true,
                spectrum_stride: 1,
                equilibration_steps: 200,
                ..base
            }),
            // Deterministic lid-driven cavity with a Gaussian concentration
            // bump; the standard smooth-convergence scenario.
            "cavity-2d" => Ok(ScenarioConfig {
                initial: InitialCondition::GaussianBump { decay: 75.0 },
                wall_drive: WallDrive::CavityLids,
                ..base
            }),
            // Sharp square interface advected in the cavity flow with
            // gravity; limited quadratic reconstruction, no diffusion.
            "square-bubble" => Ok(ScenarioConfig {
                nx: 256,
                ny: 256,
                chi: CoefficientModel::Constant(0.0),
                initial: InitialCondition::SquareBubble { c_in: 1.0, c_out: 0.0 },
                advection: AdvectionScheme::BdsQuadratic,
                limited: true,
                dt: 2.5e-3,
                n_steps: 1600,
                gravity: [0.0, -5.0],
                wall_drive: WallDrive::CavityLids,
                ..base
            }),
            // Giant concentration fluctuations during diffusive mixing of
            // water and glycerol; stress noise only, microgravity,
            // overdamped dynamics.
            "water-glycerol" => {
                let m = MixtureModel::water_glycerol(0.0);
                Ok(ScenarioConfig {
                    nx: 256,
                    ny: 256,
                    lx: 1.132,
                    ly: 1.132,
                    periodic_x: true,
                    rho1_pure: m.rho1_pure,
                    rho2_pure: m.rho2_pure,
                    eta: m.eta,
                    chi: m.chi,
                    osmotic: m.osmotic,
                    kt: 1.3806503e-16 * 300.0,
                    initial: InitialCondition::TwoLayer { c_bottom: 0.39, c_top: 0.0 },
                    scheme: Scheme::Overdamped,
                    dt: 0.22,
                    n_steps: 95_550,
                    stochastic: true,
                    stochastic_mass: false,
                    snapshot_stride: 1,
                    spectrum_stride: 1,
                    equilibration_steps: 500,
                    ..base
                })
            }
            // Visual shear-layer demo (excluded from quantitative checks):
            // counter-moving y walls over a two-layer mixture.
            "kh-demo" => Ok(ScenarioConfig {
                periodic_x: true,
                initial: InitialCondition::TwoLayer { c_bottom: 1.0, c_top: 0.0 },
                wall_drive: WallDrive::ShearLids { speed: 1.0 },
                adaptive_cfl: 0.9,
                dt: 5e-3,
                n_steps: 2000,
                snapshot_stride: 100,
                ..base
            }),
            other => Err(Error::Config(format!(
                "unknown preset `{other}`; available: {}",
                PRESET_NAMES.join(", ")
            ))),
        }
    }

    /// Shrink a paper-scale preset to desktop size: resolution capped at
    /// 64^2 (deterministic runs rescale dt to keep dt/dx fixed) and the
    /// horizon capped at 10^4 steps.
    pub fn desk_scale(&mut self) {
        while self.nx > 64 && self.ny > 64 {
            self.nx /= 2;
            self.ny /= 2;
            if !self.stochastic {
                self.dt *= 2.0;
                self.n_steps = self.n_steps.div_ceil(2);
            }
        }
        self.n_steps = self.n_steps.min(10_000);
    }

    /// Every configuration problem at once, or Ok.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.nx < 4 || self.ny < 4 {
            problems.push(format!("grid {}x{} is below the 4x4 minimum", self.nx, self.ny));
        }
        if !(self.lx > 0.0 && self.ly > 0.0 && self.dz > 0.0) {
            problems.push("domain extents and thickness must be positive".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            problems.push(format!("dt = {} must be positive and finite", self.dt));
        }
        if self.n_steps == 0 {
            problems.push("n_steps must be at least 1".into());
        }
        if !(self.rho1_pure > 0.0 && self.rho2_pure > 0.0) {
            problems.push("pure-component densities must be positive".into());
        }
        // Coefficient fits need only be positive on the concentration range
        // the run can reach (advection cannot create new extrema and
        // diffusion contracts the range).
        let (c_lo, c_hi) = self.initial_c_range();
        for k in 0..=8 {
            let c = c_lo + (c_hi - c_lo) * k as f64 / 8.0;
            if self.eta.eval(c) <= 0.0 {
                problems.push(format!("eta({c}) = {} is not positive", self.eta.eval(c)));
                break;
            }
        }
        for k in 0..=8 {
            let c = c_lo + (c_hi - c_lo) * k as f64 / 8.0;
            if self.chi.eval(c) < 0.0 {
                problems.push(format!("chi({c}) = {} is negative", self.chi.eval(c)));
                break;
            }
        }
        if self.kt < 0.0 {
            problems.push(format!("kT = {} is negative", self.kt));
        }
        let cs: &[f64] = match self.initial {
            InitialCondition::Uniform { c } => &[c],
            InitialCondition::TwoLayer { c_bottom, c_top }
            | InitialCondition::LinearRamp { c_bottom, c_top } => &[c_bottom, c_top],
            InitialCondition::GaussianBump { decay } => {
                if decay <= 0.0 {
                    problems.push("gaussian-bump decay must be positive".into());
                }
                &[]
            }
            InitialCondition::SquareBubble { c_in, c_out } => &[c_in, c_out],
        };
        for &c in cs {
            if !(0.0..=1.0).contains(&c) {
                problems.push(format!("initial concentration {c} is outside [0, 1]"));
            }
        }
        if self.wall_drive != WallDrive::None && self.periodic_y {
            problems.push("wall drive requires walls in y, but y is periodic".into());
        }
        if self.adaptive_cfl != 0.0 && self.stochastic {
            problems.push("adaptive dt control is deterministic-only".into());
        }
        if !(self.stokes_tol > 0.0 && self.stokes_tol < 1.0) {
            problems.push(format!("stokes_tol = {} must be in (0, 1)", self.stokes_tol));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Concentration range spanned by the initial condition.
    fn initial_c_range(&self) -> (f64, f64) {
        match self.initial {
            InitialCondition::Uniform { c } => (c, c),
            InitialCondition::TwoLayer { c_bottom, c_top }
            | InitialCondition::LinearRamp { c_bottom, c_top } => {
                (c_bottom.min(c_top), c_bottom.max(c_top))
            }
            InitialCondition::GaussianBump { .. } => (0.0, 1.0),
            InitialCondition::SquareBubble { c_in, c_out } => (c_in.min(c_out), c_in.max(c_out)),
        }
    }

    pub fn grid(&self) -> Grid {
        let bx = if self.periodic_x { BcKind::Periodic } else { BcKind::Wall };
        let by = if self.periodic_y { BcKind::Periodic } else { BcKind::Wall };
        Grid::new(
            self.nx,
            self.ny,
            self.lx / self.nx as f64,
            self.ly / self.ny as f64,
            self.dz,
            bx,
            by,
        )
    }

    pub fn model(&self) -> MixtureModel {
        MixtureModel {
            rho1_pure: self.rho1_pure,
            rho2_pure: self.rho2_pure,
            eta: self.eta.clone(),
            chi: self.chi.clone(),
            osmotic: self.osmotic.clone(),
            kt: self.kt,
            avg_rule: crate::ops::AvgRule::Arithmetic,
        }
    }

    pub fn initial_state(&self, grid: &Grid, model: &MixtureModel) -> FluidState {
        let (lx, ly) = (self.lx, self.ly);
        let c = match self.initial {
            InitialCondition::Uniform { c } => CellField::constant(grid, c),
            InitialCondition::TwoLayer { c_bottom, c_top } => CellField::from_fn(grid, |_, y| {
                if y < 0.5 * ly {
                    c_bottom
                } else {
                    c_top
                }
            }),
            InitialCondition::LinearRamp { c_bottom, c_top } => {
                CellField::from_fn(grid, |_, y| c_bottom + (c_top - c_bottom) * y / ly)
            }
            InitialCondition::GaussianBump { decay } => CellField::from_fn(grid, |x, y| {
                let (rx, ry) = (x - 0.5 * lx, y - 0.5 * ly);
                (-decay * (rx * rx + ry * ry)).exp()
            }),
            InitialCondition::SquareBubble { c_in, c_out } => CellField::from_fn(grid, |x, y| {
                if (x - 0.5 * lx).abs() < 0.25 * lx && (y - 0.5 * ly).abs() < 0.25 * ly {
                    c_in
                } else {
                    c_out
                }
            }),
        };
        FluidState::from_concentration(grid, model, &c)
    }

    pub fn step_params(&self) -> StepParams {
        let mut p = StepParams::new(self.dt);
        p.scheme = self.scheme;
        p.advection = self.advection;
        p.limited = self.limited;
        p.gravity = self.gravity;
        p.stochastic = self.stochastic;
        p.stochastic_mass = self.stochastic_mass;
        p.master_seed = self.seed;
        p.stokes.tol = self.stokes_tol;
        p.adaptive_cfl = if self.adaptive_cfl > 0.0 { Some(self.adaptive_cfl) } else { None };
        p.bc = match self.wall_drive {
            WallDrive::None => BcSpec::default(),
            WallDrive::CavityLids => BcSpec {
                y_hi: WallVelocity::CavityLid { sign: 1.0 },
                y_lo: WallVelocity::CavityLid { sign: -1.0 },
                ..BcSpec::default()
            },
            WallDrive::ShearLids { speed } => BcSpec {
                y_hi: WallVelocity::Uniform(speed),
                y_lo: WallVelocity::Uniform(-speed),
                ..BcSpec::default()
            },
        };
        p
    }

    /// Validate and construct the full problem setup.
    pub fn build(&self) -> Result<(Grid, MixtureModel, FluidState, StepParams)> {
        self.validate()?;
        let grid = self.grid();
        let model = self.model();
        let state = self.initial_state(&grid, &model);
        Ok((grid, model, state, self.step_params()))
    }

    pub fn to_config(&self) -> Config {
        let mut c = Config::default();
        c.set("scenario", "name", &self.name);
        c.set("grid", "nx", self.nx);
        c.set("grid", "ny", self.ny);
        c.set("grid", "lx", self.lx);
        c.set("grid", "ly", self.ly);
        c.set("grid", "dz", self.dz);
        c.set("grid", "periodic_x", self.periodic_x);
        c.set("grid", "periodic_y", self.periodic_y);
        c.set("mixture", "rho1_pure", self.rho1_pure);
        c.set("mixture", "rho2_pure", self.rho2_pure);
        c.set("mixture", "eta", coefficient_to_string(&self.eta));
        c.set("mixture", "chi", coefficient_to_string(&self.chi));
        c.set("mixture", "osmotic", osmotic_to_string(&self.osmotic));
        c.set("mixture", "kt", self.kt);
        let init = match self.initial {
            InitialCondition::Uniform { c } => format!("uniform {c}"),
            InitialCondition::TwoLayer { c_bottom, c_top } => {
                format!("two-layer {c_bottom} {c_top}")
            }
            InitialCondition::LinearRamp { c_bottom, c_top } => {
                format!("linear-ramp {c_bottom} {c_top}")
            }
            InitialCondition::GaussianBump { decay } => format!("gaussian-bump {decay}"),
            InitialCondition::SquareBubble { c_in, c_out } => {
                format!("square-bubble {c_in} {c_out}")
            }
        };
        c.set("initial", "condition", init);
        c.set(
            "dynamics",
            "scheme",
            match self.scheme {
                Scheme::Inertial => "inertial",
                Scheme::Overdamped => "overdamped",
            },
        );
        c.set(
            "dynamics",
            "advection",
            match self.advection {
                AdvectionScheme::Centered => "centered",
                AdvectionScheme::BdsBilinear => "bds-bilinear",
                AdvectionScheme::BdsQuadratic => "bds-quadratic",
            },
        );
        c.set("dynamics", "limited", self.limited);
        c.set("dynamics", "dt", self.dt);
        c.set("dynamics", "n_steps", self.n_steps);
        c.set("dynamics", "gravity_x", self.gravity[0]);
        c.set("dynamics", "gravity_y", self.gravity[1]);
        let drive = match self.wall_drive {
            WallDrive::None => "none".to_string(),
            WallDrive::CavityLids => "cavity".to_string(),
            WallDrive::ShearLids { speed } => format!("shear {speed}"),
        };
        c.set("dynamics", "wall_drive", drive);
        c.set("dynamics", "adaptive_cfl", self.adaptive_cfl);
        c.set("noise", "stochastic", self.stochastic);
        c.set("noise", "stochastic_mass", self.stochastic_mass);
        c.set("noise", "seed", self.seed);
        c.set("output", "dir", self.output_dir.display());
        c.set("output", "snapshot_stride", self.snapshot_stride);
        c.set("output", "spectrum_stride", self.spectrum_stride);
        c.set("output", "checkpoint_stride", self.checkpoint_stride);
        c.set("output", "equilibration_steps", self.equilibration_steps);
        c.set("solver", "stokes_tol", self.stokes_tol);
        c
    }

    pub fn from_config(c: &Config) -> Result<ScenarioConfig> {
        let initial = parse_initial(c.require("initial", "condition")?)?;
        let scheme = match c.require("dynamics", "scheme")? {
            "inertial" => Scheme::Inertial,
            "overdamped" => Scheme::Overdamped,
            other => return Err(Error::Config(format!("unknown scheme `{other}`"))),
        };
        let advection = match c.require("dynamics", "advection")? {
            "centered" => AdvectionScheme::Centered,
            "bds-bilinear" => AdvectionScheme::BdsBilinear,
            "bds-quadratic" => AdvectionScheme::BdsQuadratic,
            other => return Err(Error::Config(format!("unknown advection scheme `{other}`"))),
        };
        let wall_drive = {
            let v = c.require("dynamics", "wall_drive")?;
            let mut it = v.split_whitespace();
            match it.next() {
                Some("none") => WallDrive::None,
                Some("cavity") => WallDrive::CavityLids,
                Some("shear") => WallDrive::ShearLids {
                    speed: it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Config("shear drive needs a speed".into()))?,
                },
                _ => return Err(Error::Config(format!("unknown wall drive `{v}`"))),
            }
        };
        Ok(ScenarioConfig {
            name: c.require("scenario", "name")?.to_string(),
            nx: c.get_usize("grid", "nx")?,
            ny: c.get_usize("grid", "ny")?,
            lx: c.get_f64("grid", "lx")?,
            ly: c.get_f64("grid", "ly")?,
            dz: c.get_f64("grid", "dz")?,
            periodic_x: c.get_bool("grid", "periodic_x")?,
            periodic_y: c.get_bool("grid", "periodic_y")?,
            rho1_pure: c.get_f64("mixture", "rho1_pure")?,
            rho2_pure: c.get_f64("mixture", "rho2_pure")?,
            eta: parse_coefficient(c.require("mixture", "eta")?)?,
            chi: parse_coefficient(c.require("mixture", "chi")?)?,
            osmotic: parse_osmotic(c.require("mixture", "osmotic")?)?,
            kt: c.get_f64("mixture", "kt")?,
            initial,
            scheme,
            advection,
            limited: c.get_bool("dynamics", "limited")?,
            dt: c.get_f64("dynamics", "dt")?,
            n_steps: c.get_u64("dynamics", "n_steps")?,
            gravity: [c.get_f64("dynamics", "gravity_x")?, c.get_f64("dynamics", "gravity_y")?],
            wall_drive,
            adaptive_cfl: c.get_f64("dynamics", "adaptive_cfl")?,
            stochastic: c.get_bool("noise", "stochastic")?,
            stochastic_mass: c.get_bool("noise", "stochastic_mass")?,
            seed: c.get_u64("noise", "seed")?,
            output_dir: PathBuf::from(c.require("output", "dir")?),
            snapshot_stride: c.get_u64("output", "snapshot_stride")?,
            spectrum_stride: c.get_u64("output", "spectrum_stride")?,
            checkpoint_stride: c.get_u64("output", "checkpoint_stride")?,
            equilibration_steps: c.get_u64("output", "equilibration_steps")?,
            stokes_tol: c.get_f64("solver", "stokes_tol")?,
        })
    }

    pub fn to_text(&self) -> String {
        self.to_config().serialize()
    }

    pub fn from_text(text: &str) -> Result<ScenarioConfig> {
        Self::from_config(&Config::parse(text)?)
    }
}

fn coefficient_to_string(m: &CoefficientModel) -> String {
    match m {
        CoefficientModel::Constant(v) => format!("constant {v}"),
        CoefficientModel::Linear { f0, f1 } => format!("linear {f0} {f1}"),
        CoefficientModel::Rational { a, b, d, scale } => format!("rational {a} {b} {d} {scale}"),
    }
}

fn parse_numbers(items: &mut std::str::SplitWhitespace, n: usize, what: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = items.filter_map(|s| s.parse().ok()).collect();
    if vals.len() != n {
        return Err(Error::Config(format!("{what}: expected {n} numeric parameters")));
    }
    Ok(vals)
}

fn parse_coefficient(s: &str) -> Result<CoefficientModel> {
    let mut it = s.split_whitespace();
    match it.next() {
        Some("constant") => {
            let v = parse_numbers(&mut it, 1, s)?;
            Ok(CoefficientModel::Constant(v[0]))
        }
        Some("linear") => {
            let v = parse_numbers(&mut it, 2, s)?;
            Ok(CoefficientModel::Linear { f0: v[0], f1: v[1] })
        }
        Some("rational") => {
            let v = parse_numbers(&mut it, 4, s)?;
            Ok(CoefficientModel::Rational { a: v[0], b: v[1], d: v[2], scale: v[3] })
        }
        _ => Err(Error::Config(format!("unknown coefficient model `{s}`"))),
    }
}

fn osmotic_to_string(m: &OsmoticModel) -> String {
    match m {
        OsmoticModel::IdealMasses { m1, m2 } => format!("masses {m1} {m2}"),
        OsmoticModel::Constant(v) => format!("constant {v}"),
    }
}

fn parse_osmotic(s: &str) -> Result<OsmoticModel> {
    let mut it = s.split_whitespace();
    match it.next() {
        Some("masses") => {
            let v = parse_numbers(&mut it, 2, s)?;
            Ok(OsmoticModel::IdealMasses { m1: v[0], m2: v[1] })
        }
        Some("constant") => {
            let v = parse_numbers(&mut it, 1, s)?;
            Ok(OsmoticModel::Constant(v[0]))
        }
        _ => Err(Error::Config(format!("unknown osmotic model `{s}`"))),
    }
}

fn parse_initial(s: &str) -> Result<InitialCondition> {
    let mut it = s.split_whitespace();
    match it.next() {
        Some("uniform") => {
            let v = parse_numbers(&mut it, 1, s)?;
            Ok(InitialCondition::Uniform { c: v[0] })
        }
        Some("two-layer") => {
            let v = parse_numbers(&mut it, 2, s)?;
            Ok(InitialCondition::TwoLayer { c_bottom: v[0], c_top: v[1] })
        }
        Some("linear-ramp") => {
            let v = parse_numbers(&mut it, 2, s)?;
            Ok(InitialCondition::LinearRamp { c_bottom: v[0], c_top: v[1] })
        }
        Some("gaussian-bump") => {
            let v = parse_numbers(&mut it, 1, s)?;
            Ok(InitialCondition::GaussianBump { decay: v[0] })
        }
        Some("square-bubble") => {
            let v = parse_numbers(&mut it, 2, s)?;
            Ok(InitialCondition::SquareBubble { c_in: v[0], c_out: v[1] })
        }
        _ => Err(Error::Config(format!("unknown initial condition `{s}`"))),
    }
}

// ---------------------------------------------------------------------------
// Binary checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: u32 = 0x4C4D_4331; // "LMC1"
const CHECKPOINT_VERSION: u32 = 1;

fn push_f64s(buf: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format("checkpoint file truncated".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, out: &mut [f64]) -> Result<()> {
        for o in out.iter_mut() {
            *o = self.f64()?;
        }
        Ok(())
    }
}

/// Write the full state (densities, velocity, pressure, time) plus the step
/// counter and master seed, which together position the counter-based RNG.
pub fn write_checkpoint(path: &Path, state: &FluidState, step: u64, seed: u64) -> Result<()> {
    let g = state.rho.grid;
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC.to_le_bytes());
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(g.nx as u64).to_le_bytes());
    buf.extend_from_slice(&(g.ny as u64).to_le_bytes());
    buf.push(if g.bc_x == BcKind::Periodic { 0 } else { 1 });
    buf.push(if g.bc_y == BcKind::Periodic { 0 } else { 1 });
    buf.extend_from_slice(&[0u8; 6]);
    push_f64s(&mut buf, &[g.dx, g.dy, g.dz_thickness, state.time]);
    buf.extend_from_slice(&step.to_le_bytes());
    buf.extend_from_slice(&seed.to_le_bytes());
    push_f64s(&mut buf, state.rho1.data());
    push_f64s(&mut buf, state.rho.data());
    push_f64s(&mut buf, state.pressure.data());
    push_f64s(&mut buf, state.vel.xs());
    push_f64s(&mut buf, state.vel.ys());
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read a checkpoint back; returns (state, step, seed) with the grid
/// reconstructed from the header.
pub fn read_checkpoint(path: &Path) -> Result<(FluidState, u64, u64)> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    let mut r = ByteReader { data: &data, pos: 0 };
    if r.u32()? != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{}: not a checkpoint file", path.display())));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let nx = r.u64()? as usize;
    let ny = r.u64()? as usize;
    let flags = r.take(8)?;
    let bc_x = if flags[0] == 0 { BcKind::Periodic } else { BcKind::Wall };
    let bc_y = if flags[1] == 0 { BcKind::Periodic } else { BcKind::Wall };
    let dx = r.f64()?;
    let dy = r.f64()?;
    let dz = r.f64()?;
    let time = r.f64()?;
    let step = r.u64()?;
    let seed = r.u64()?;
    let g = Grid::new(nx, ny, dx, dy, dz, bc_x, bc_y);
    let mut state = FluidState::new(&g);
    state.time = time;
    r.f64s(state.rho1.data_mut())?;
    r.f64s(state.rho.data_mut())?;
    r.f64s(state.pressure.data_mut())?;
    r.f64s(state.vel.xs_mut())?;
    r.f64s(state.vel.ys_mut())?;
    if r.pos != data.len() {
        return Err(Error::Format("checkpoint has trailing bytes".into()));
    }
    Ok((state, step, seed))
}

// ---------------------------------------------------------------------------
// Scenario driver
// ---------------------------------------------------------------------------

/// Machine-readable run record, also written as summary.json.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub nx: usize,
    pub ny: usize,
    pub steps: u64,
    pub final_time: f64,
    /// Relative drift of total rho1 and total rho over the run.
    pub rho1_drift_rel: f64,
    pub rho_drift_rel: f64,
    /// Max pointwise EOS residual seen after any step, before the periodic
    /// re-projection, and the final (post-projection) value.
    pub eos_residual_running_max: f64,
    pub eos_residual_final: f64,
    pub max_predictor_iters: usize,
    pub max_corrector_iters: usize,
    pub advective_cfl_max: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub spectrum_samples: u64,
    pub spectrum_average: Option<f64>,
    pub wall_seconds: f64,
}

/// Run a scenario to completion, writing snapshots, spectra, checkpoints,
/// column means, and summary.json into the configured output directory. On
/// a step failure the last good state is checkpointed as abort.bin before
/// the error propagates.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunSummary> {
    let (grid, model, state, params) = cfg.build()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let t0 = std::time::Instant::now();

    let mut state = state;
    project_initial_velocity(&mut state, &model, &params, 0)?;

    let vol = grid.cell_volume();
    let rho1_total0 = state.rho1.sum() * vol;
    let rho_total0 = state.rho.sum() * vol;

    let mut planner = FftPlanner::new();
    let mut spectrum = analysis::empty_spectrum(&grid, 0.0, 0.0);
    let mut column_log: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut eos_running_max = 0.0_f64;
    let mut cfl_max = 0.0_f64;
    let mut max_pred = 0;
    let mut max_corr = 0;
    let mut c_min = f64::INFINITY;
    let mut c_max = f64::NEG_INFINITY;

    for k in 0..cfg.n_steps {
        let mut p = params.clone();
        if let Some(target) = params.adaptive_cfl {
            let vmax = state.vel.max_abs();
            let h = grid.dx.min(grid.dy);
            if vmax > 0.0 {
                p.dt = (target * h / vmax).min(params.dt);
            }
        }
        let result = match params.scheme {
            Scheme::Inertial => inertial_step_diag(&state, &model, &p, k),
            Scheme::Overdamped => overdamped_step_diag(&state, &model, &p, k),
        };
        let (next, diag) = match result {
            Ok(v) => v,
            Err(e) => {
                write_checkpoint(&cfg.output_dir.join("abort.bin"), &state, k, cfg.seed)?;
                return Err(e);
            }
        };
        state = next;
        max_pred = max_pred.max(diag.predictor_iters);
        max_corr = max_corr.max(diag.corrector_iters);
        cfl_max = cfl_max.max(state.vel.max_abs() * p.dt / grid.dx.min(grid.dy));
        eos_running_max = eos_running_max.max(state.eos_residual_max(&model));
        state.project_to_eos(&model);
        for (r1, r) in state.rho1.data().iter().zip(state.rho.data()) {
            let c = r1 / r;
            c_min = c_min.min(c);
            c_max = c_max.max(c);
        }

        let done = k + 1;
        if cfg.spectrum_stride > 0 && done > cfg.equilibration_steps && done % cfg.spectrum_stride == 0 {
            if spectrum.samples == 0 {
                spectrum = analysis::empty_spectrum(&grid, state.time, state.time);
            }
            spectrum.t_end = state.time;
            analysis::accumulate_spectrum(&mut spectrum, &state.rho, &mut planner)?;
        }
        if cfg.snapshot_stride > 0 && done % cfg.snapshot_stride == 0 {
            let name = format!("snap_{done:08}.bin");
            write_checkpoint(&cfg.output_dir.join(name), &state, done, cfg.seed)?;
            column_log.push((state.time, analysis::vertical_average(&state.concentration())));
        }
        if cfg.checkpoint_stride > 0 && done % cfg.checkpoint_stride == 0 {
            write_checkpoint(&cfg.output_dir.join("checkpoint.bin"), &state, done, cfg.seed)?;
        }
    }

    if spectrum.samples >= 2 {
        fs::write(cfg.output_dir.join("spectrum.csv"), spectrum.to_csv())?;
    }
    if !column_log.is_empty() {
        let mut out = String::from("time,columns...\n");
        for (t, cols) in &column_log {
            let _ = write!(out, "{t:.9e}");
            for v in cols {
                let _ = write!(out, ",{v:.12e}");
            }
            out.push('\n');
        }
        fs::write(cfg.output_dir.join("column_means.csv"), out)?;
    }

    let summary = RunSummary {
        scenario: cfg.name.clone(),
        nx: cfg.nx,
        ny: cfg.ny,
        steps: cfg.n_steps,
        final_time: state.time,
        rho1_drift_rel: (state.rho1.sum() * vol - rho1_total0).abs() / rho1_total0.abs().max(1e-300),
        rho_drift_rel: (state.rho.sum() * vol - rho_total0).abs() / rho_total0.abs().max(1e-300),
        eos_residual_running_max: eos_running_max,
        eos_residual_final: state.eos_residual_max(&model),
        max_predictor_iters: max_pred,
        max_corrector_iters: max_corr,
        advective_cfl_max: cfl_max,
        c_min,
        c_max,
        spectrum_samples: spectrum.samples as u64,
        spectrum_average: if spectrum.samples >= 2 { Some(spectrum.average()) } else { None },
        wall_seconds: t0.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Format(format!("summary serialization: {e}")))?;
    fs::write(cfg.output_dir.join("summary.json"), json)?;
    Ok(summary)
}

/// Run a scenario with no file output and return the final state; used by
/// refinement studies.
pub fn run_to_final(cfg: &ScenarioConfig) -> Result<FluidState> {
    let (_, model, mut state, params) = cfg.build()?;
    project_initial_velocity(&mut state, &model, &params, 0)?;
    integrators::run(state, &model, &params, cfg.n_steps, 0, &mut [])
}

// ---------------------------------------------------------------------------
// Refinement studies
// ---------------------------------------------------------------------------

/// Restrict a cell field to a grid with half the resolution by averaging
/// 2x2 blocks.
pub fn coarsen_cell(fine: &CellField, coarse: &Grid) -> Result<CellField> {
    let fg = fine.grid;
    if fg.nx != 2 * coarse.nx || fg.ny != 2 * coarse.ny || fg.bc_x != coarse.bc_x || fg.bc_y != coarse.bc_y
    {
        return Err(Error::Incompatible("coarse grid is not a factor-2 restriction".into()));
    }
    let mut out = CellField::zeros(coarse);
    for j in 0..coarse.ny {
        for i in 0..coarse.nx {
            let (fi, fj) = (2 * i as isize, 2 * j as isize);
            let v = 0.25
                * (fine.at(fi, fj) + fine.at(fi + 1, fj) + fine.at(fi, fj + 1) + fine.at(fi + 1, fj + 1));
            out.data_mut()[coarse.cell_idx(i, j)] = v;
        }
    }
    Ok(out)
}

/// Restrict a face field: each coarse face is the mean of the two fine
/// faces lying on the same line.
pub fn coarsen_face(fine: &FaceField, coarse: &Grid) -> Result<FaceField> {
    let fg = fine.grid;
    if fg.nx != 2 * coarse.nx || fg.ny != 2 * coarse.ny || fg.bc_x != coarse.bc_x || fg.bc_y != coarse.bc_y
    {
        return Err(Error::Incompatible("coarse grid is not a factor-2 restriction".into()));
    }
    let mut out = FaceField::zeros(coarse);
    out.for_each_x(|i, j, v| {
        let (fi, fj) = (2 * i as isize, 2 * j as isize);
        *v = 0.5 * (fine.x(fi, fj) + fine.x(fi, fj + 1));
    });
    out.for_each_y(|i, j, v| {
        let (fi, fj) = (2 * i as isize, 2 * j as isize);
        *v = 0.5 * (fine.y(fi, fj) + fine.y(fi + 1, fj));
    });
    Ok(out)
}

fn norms(diff: &[f64]) -> [f64; 3] {
    let n = diff.len().max(1) as f64;
    let linf = diff.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let l1 = diff.iter().map(|v| v.abs()).sum::<f64>() / n;
    let l2 = (diff.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    [linf, l1, l2]
}

/// Errors between a fine and a coarse solution of the same problem:
/// [L_inf, L1, L2] for each of u, v, c, measured on the coarse grid after
/// averaging the fine solution down.
pub fn level_errors(fine: &FluidState, coarse: &FluidState) -> Result<Vec<[f64; 3]>> {
    let cg = coarse.rho.grid;
    let vel_c = coarsen_face(&fine.vel, &cg)?;
    let c_c = coarsen_cell(&fine.concentration(), &cg)?;
    let du: Vec<f64> =
        vel_c.xs().iter().zip(coarse.vel.xs()).map(|(a, b)| a - b).collect();
    let dv: Vec<f64> =
        vel_c.ys().iter().zip(coarse.vel.ys()).map(|(a, b)| a - b).collect();
    let dc: Vec<f64> =
        c_c.data().iter().zip(coarse.concentration().data()).map(|(a, b)| a - b).collect();
    Ok(vec![norms(&du), norms(&dv), norms(&dc)])
}

/// Successive-refinement error table; orders are log2 of error ratios
/// between adjacent level pairs.
#[derive(Debug, Clone, Serialize)]
pub struct OrderTable {
    pub levels: Vec<usize>,
    pub variables: Vec<String>,
    /// errors[pair][variable][norm], norms ordered L_inf, L1, L2.
    pub errors: Vec<Vec<[f64; 3]>>,
    /// orders[pair-1][variable][norm].
    pub orders: Vec<Vec<[f64; 3]>>,
}

impl OrderTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "pair,variable,linf,l1,l2,order_linf,order_l1,order_l2\n",
        );
        for (p, row) in self.errors.iter().enumerate() {
            for (v, e) in row.iter().enumerate() {
                let ord = if p > 0 { Some(self.orders[p - 1][v]) } else { None };
                let _ = write!(
                    out,
                    "{}-{},{},{:.6e},{:.6e},{:.6e}",
                    self.levels[p], self.levels[p + 1], self.variables[v], e[0], e[1], e[2]
                );
                match ord {
                    Some(o) => {
                        let _ = writeln!(out, ",{:.4},{:.4},{:.4}", o[0], o[1], o[2]);
                    }
                    None => {
                        let _ = writeln!(out, ",,,");
                    }
                }
            }
        }
        out
    }
}

/// Build the order table from already-computed solutions, one per level,
/// finest last.
pub fn order_table_from_states(states: &[FluidState], levels: &[usize]) -> Result<OrderTable> {
    if states.len() != levels.len() || states.len() < 3 {
        return Err(Error::Config("need at least 3 refinement levels".into()));
    }
    for w in levels.windows(2) {
        if w[1] != 2 * w[0] {
            return Err(Error::Config(format!(
                "levels must refine by factor 2, got {} -> {}",
                w[0], w[1]
            )));
        }
    }
    let mut errors = Vec::new();
    for pair in states.windows(2) {
        errors.push(level_errors(&pair[1], &pair[0])?);
    }
    let nvars = errors[0].len();
    let mut orders = Vec::new();
    for p in 1..errors.len() {
        let mut row = Vec::with_capacity(nvars);
        for v in 0..nvars {
            let mut o = [0.0; 3];
            for nm in 0..3 {
                o[nm] = (errors[p - 1][v][nm] / errors[p][v][nm]).log2();
            }
            row.push(o);
        }
        orders.push(row);
    }
    Ok(OrderTable {
        levels: levels.to_vec(),
        variables: vec!["u".into(), "v".into(), "c".into()],
        errors,
        orders,
    })
}

/// Joint space-time refinement study: re-run the scenario at each level
/// with dt scaled inversely with resolution and compare successive levels.
pub fn convergence_study(base: &ScenarioConfig, levels: &[usize]) -> Result<OrderTable> {
    if levels.len() < 3 {
        return Err(Error::Config("need at least 3 refinement levels".into()));
    }
    let mut states = Vec::with_capacity(levels.len());
    for &n in levels {
        let mut cfg = base.clone();
        let scale = n as f64 / base.nx as f64;
        cfg.nx = n;
        cfg.ny = base.ny * n / base.nx;
        cfg.dt = base.dt / scale;
        cfg.n_steps = (base.n_steps as f64 * scale).round() as u64;
        cfg.snapshot_stride = 0;
        cfg.spectrum_stride = 0;
        cfg.checkpoint_stride = 0;
        states.push(run_to_final(&cfg)?);
    }
    order_table_from_states(&states, levels)
}

// ---------------------------------------------------------------------------
// Dimensionless diagnostics
// ---------------------------------------------------------------------------

/// Cell-scale dimensionless numbers for a state: the advective velocity
/// against the viscous and diffusive scales at the grid spacing.
#[derive(Debug, Clone, Serialize)]
pub struct DimensionlessReport {
    pub u_max: f64,
    /// U dx / nu with the smallest kinematic viscosity in the domain.
    pub re_cell: f64,
    /// U dx / chi with the smallest diffusivity in the domain.
    pub pe_cell: f64,
    /// Largest pointwise Schmidt number nu / chi.
    pub schmidt_max: f64,
    pub advective_cfl: f64,
    /// Centered advection is expected to oscillate when the cell Peclet
    /// number exceeds 2; prefer the characteristic-tracing schemes then.
    pub prefer_tracing: bool,
}

pub fn dimensionless_report(state: &FluidState, model: &MixtureModel, dt: f64) -> DimensionlessReport {
    let g = state.rho.grid;
    let coefs = Coefficients::evaluate(model, state);
    let u = state.vel.max_abs();
    let mut nu_min = f64::INFINITY;
    let mut chi_min = f64::INFINITY;
    let mut sc_max = 0.0_f64;
    for ((eta, chi), rho) in
        coefs.eta_cell.data().iter().zip(coefs.chi_cell.data()).zip(state.rho.data())
    {
        let nu = eta / rho;
        nu_min = nu_min.min(nu);
        chi_min = chi_min.min(*chi);
        sc_max = sc_max.max(if *chi > 0.0 { nu / chi } else { f64::INFINITY });
    }
    let dx = g.dx.min(g.dy);
    let safe_div = |num: f64, den: f64| if num == 0.0 { 0.0 } else { num / den };
    let pe = safe_div(u * dx, chi_min);
    DimensionlessReport {
        u_max: u,
        re_cell: safe_div(u * dx, nu_min),
        pe_cell: pe,
        schmidt_max: sc_max,
        advective_cfl: u * dt / dx,
        prefer_tracing: pe > 2.0,
    }
}
