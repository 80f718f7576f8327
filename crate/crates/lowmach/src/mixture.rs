//! Binary-mixture thermodynamics: the density equation of state, transport
//! coefficient models, and the evolved fluid state.
//!
//! The mixture obeys rho1/rho1_pure + rho2/rho2_pure = 1, i.e. volumes are
//! additive on mixing. The solenoidal constraint on the velocity follows
//! from this together with the species balance; the coefficient
//! beta = rho * (1/rho2_pure - 1/rho1_pure) controls how strongly diffusive
//! fluxes force dilation.

use crate::error::{Error, Result};
use crate::grid::{CellField, FaceField, Grid};
use crate::ops::{self, AvgRule};

/// Transport-coefficient closures as functions of mass concentration c.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientModel {
    /// Constant value.
    Constant(f64),
    /// Linear interpolation between the pure-component values:
    /// f(c) = f0 + (f1 - f0) * c.
    Linear { f0: f64, f1: f64 },
    /// Rational fit (a + b c) / (1 + d c) * scale.
    Rational { a: f64, b: f64, d: f64, scale: f64 },
}

impl CoefficientModel {
    pub fn eval(&self, c: f64) -> f64 {
        match self {
            CoefficientModel::Constant(v) => *v,
            CoefficientModel::Linear { f0, f1 } => f0 + (f1 - f0) * c,
            CoefficientModel::Rational { a, b, d, scale } => (a + b * c) / (1.0 + d * c) * scale,
        }
    }
}

/// Model for the inverse chemical-potential derivative times k_B T,
/// mu_c_inv_kt = k_B T / (d mu / d c); this is the prefactor of the
/// concentration noise and also the equilibrium spectrum amplitude per
/// unit volume (times rho).
#[derive(Debug, Clone, PartialEq)]
pub enum OsmoticModel {
    /// Ideal solution of molecules with masses m1, m2 (grams):
    /// k_B T / mu_c = rho c (1-c) [ c m2 + (1-c) m1 ] / rho ... expressed
    /// here per unit mass so that the noise prefactor is
    /// rho * value; concretely value = c(1-c)[c m2 + (1-c) m1].
    IdealMasses { m1: f64, m2: f64 },
    /// Directly prescribed constant value of k_B T / (d mu/d c).
    Constant(f64),
}

impl OsmoticModel {
    /// k_B T * (d mu / d c)^{-1} as a function of concentration. The
    /// temperature dependence is already folded in; callers must not
    /// multiply by k_B T again.
    pub fn mu_c_inv_kt(&self, c: f64) -> f64 {
        match self {
            OsmoticModel::IdealMasses { m1, m2 } => {
                let c = c.clamp(0.0, 1.0);
                c * (1.0 - c) * (c * m2 + (1.0 - c) * m1)
            }
            OsmoticModel::Constant(v) => *v,
        }
    }
}

/// Complete fluid model: pure-component densities, transport closures, and
/// thermodynamic inputs (all CGS).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    /// Pure-component mass densities (g/cm^3).
    pub rho1_pure: f64,
    pub rho2_pure: f64,
    /// Shear viscosity model (poise).
    pub eta: CoefficientModel,
    /// Mass diffusion coefficient model (cm^2/s).
    pub chi: CoefficientModel,
    /// Osmotic susceptibility model (k_B T per d mu/d c).
    pub osmotic: OsmoticModel,
    /// k_B * T (erg). Scales the fluctuation amplitudes; zero disables
    /// thermal noise entirely.
    pub kt: f64,
    /// Averaging rule for viscosity at nodes and for rho, chi at faces.
    pub avg_rule: AvgRule,
}

impl MixtureModel {
    /// Equal-temperature ideal-mixture preset used by the equilibrium
    /// benchmark: rho1_pure = 2/3, rho2_pure = 2 so a 50/50 mixture has
    /// rho = 1 and beta = -1.
    pub fn equilibrium_benchmark(kt: f64, eta: f64, chi: f64, m1: f64, m2: f64) -> Self {
        MixtureModel {
            rho1_pure: 2.0 / 3.0,
            rho2_pure: 2.0,
            eta: CoefficientModel::Constant(eta),
            chi: CoefficientModel::Constant(chi),
            osmotic: OsmoticModel::IdealMasses { m1, m2 },
            kt,
            avg_rule: AvgRule::Arithmetic,
        }
    }

    /// Water (component 2) and glycerol (component 1) at 300 K with
    /// rational-fit viscosity and diffusivity in CGS units.
    pub fn water_glycerol(kt: f64) -> Self {
        MixtureModel {
            rho1_pure: 1.29,
            rho2_pure: 1.0,
            eta: CoefficientModel::Rational { a: 1.009, b: 1.1262, d: -1.5326, scale: 1e-2 },
            chi: CoefficientModel::Rational { a: 1.024, b: -1.002, d: 0.663, scale: 1e-5 },
            osmotic: OsmoticModel::IdealMasses { m1: 1.52923e-22, m2: 2.99146e-23 },
            kt,
            avg_rule: AvgRule::Arithmetic,
        }
    }

    /// Mixture density at concentration c from additive volumes.
    pub fn density_of_concentration(&self, c: f64) -> f64 {
        1.0 / (c / self.rho1_pure + (1.0 - c) / self.rho2_pure)
    }

    /// Solutal expansion: beta = rho (1/rho2_pure - 1/rho1_pure). Note
    /// beta / rho is a material constant for this equation of state.
    pub fn beta(&self, rho: f64) -> f64 {
        rho * (1.0 / self.rho2_pure - 1.0 / self.rho1_pure)
    }

    pub fn beta_over_rho(&self) -> f64 {
        1.0 / self.rho2_pure - 1.0 / self.rho1_pure
    }

    /// Pointwise equation-of-state residual rho1/r1 + rho2/r2 - 1.
    pub fn eos_residual(&self, rho1: f64, rho: f64) -> f64 {
        let rho2 = rho - rho1;
        rho1 / self.rho1_pure + rho2 / self.rho2_pure - 1.0
    }

    /// Orthogonally project (rho1, rho2) onto the constraint line
    /// rho1/r1 + rho2/r2 = 1, returning the corrected pair.
    pub fn project_pair(&self, rho1: f64, rho2: f64) -> (f64, f64) {
        let (a, b) = (1.0 / self.rho1_pure, 1.0 / self.rho2_pure);
        let lambda = (a * rho1 + b * rho2 - 1.0) / (a * a + b * b);
        (rho1 - lambda * a, rho2 - lambda * b)
    }
}

/// Evolved state: partial density of species 1 and total density at cells,
/// velocity at faces, pressure (Lagrange multiplier) at cells.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    pub rho1: CellField,
    pub rho: CellField,
    pub vel: FaceField,
    pub pressure: CellField,
    pub time: f64,
}

impl FluidState {
    pub fn new(grid: &Grid) -> Self {
        FluidState {
            rho1: CellField::zeros(grid),
            rho: CellField::zeros(grid),
            vel: FaceField::zeros(grid),
            pressure: CellField::zeros(grid),
            time: 0.0,
        }
    }

    /// Initialize from a concentration field using the equation of state.
    pub fn from_concentration(grid: &Grid, model: &MixtureModel, c: &CellField) -> Self {
        let rho = c.map(|cv| model.density_of_concentration(cv));
        let rho1 = rho.zip_with(c, |r, cv| r * cv);
        FluidState { rho1, rho, vel: FaceField::zeros(grid), pressure: CellField::zeros(grid), time: 0.0 }
    }

    pub fn concentration(&self) -> CellField {
        self.rho1.zip_with(&self.rho, |r1, r| r1 / r)
    }

    /// Max-norm equation-of-state residual over all cells.
    pub fn eos_residual_max(&self, model: &MixtureModel) -> f64 {
        self.rho1
            .data()
            .iter()
            .zip(self.rho.data())
            .fold(0.0_f64, |m, (&r1, &r)| m.max(model.eos_residual(r1, r).abs()))
    }

    /// Project every cell back onto the equation of state.
    pub fn project_to_eos(&mut self, model: &MixtureModel) {
        for (r1, r) in self.rho1.data_mut().iter_mut().zip(self.rho.data_mut().iter_mut()) {
            let (p1, p2) = model.project_pair(*r1, *r - *r1);
            *r1 = p1;
            *r = p1 + p2;
        }
    }

    pub fn check_finite(&self, stage: &str) -> Result<()> {
        if self.rho1.is_finite() && self.rho.is_finite() && self.vel.is_finite() && self.pressure.is_finite() {
            Ok(())
        } else {
            Err(Error::NanDetected { stage: stage.to_string() })
        }
    }
}

/// Spatially varying coefficients evaluated from a state: viscosity at
/// cells and nodes, and the diffusive/noise coefficients at cells.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub eta_cell: CellField,
    pub eta_node: crate::grid::NodeField,
    pub chi_cell: CellField,
    /// rho * chi at cells (Fickian flux prefactor before multiplying the
    /// concentration gradient).
    pub rho_chi_cell: CellField,
    /// rho * chi * k_B T / (d mu/d c) at cells: concentration-noise
    /// covariance prefactor (before the 2/dt/dV factors).
    pub noise_mass_cell: CellField,
}

impl Coefficients {
    pub fn evaluate(model: &MixtureModel, state: &FluidState) -> Self {
        let c = state.concentration();
        let eta_cell = c.map(|cv| model.eta.eval(cv));
        let eta_node = ops::cell_to_node(&eta_cell, model.avg_rule);
        let chi_cell = c.map(|cv| model.chi.eval(cv));
        let rho_chi_cell = state.rho.zip_with(&chi_cell, |r, x| r * x);
        let noise_mass_cell = rho_chi_cell.zip_with(&c, |rx, cv| rx * model.osmotic.mu_c_inv_kt(cv));
        Coefficients { eta_cell, eta_node, chi_cell, rho_chi_cell, noise_mass_cell }
    }
}
