//! Temporal integrators: the semi-implicit trapezoidal scheme for the
//! inertial equations and the implicit-midpoint scheme for the overdamped
//! limit. Both advance the conserved pair (rho1, rho) first, then the
//! velocity through a coupled Stokes solve whose divergence constraint is
//! built from the same diffusive fluxes, which keeps the mixture on the
//! equation of state.

use crate::advection::{self, AdvectionScheme, BdsOptions, Reconstruction};
use crate::error::{Error, Result};
use crate::grid::{BcSpec, CellField, FaceField, Grid};
use crate::mixture::{Coefficients, FluidState, MixtureModel};
use crate::ops;
use crate::stochastic::{self, NoiseRealization, Stream};
use crate::stokes::{solve_stokes, SolverOptions, StokesProblem, StokesSolution, TolMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Inertial,
    Overdamped,
}

/// Corrector-stage advective flux form for centered advection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdvectiveForm {
    #[default]
    Trapezoidal,
    Midpoint,
}

/// Which viscosity the inertial corrector Stokes solve uses implicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ViscositySource {
    #[default]
    Corrected,
    Predictor,
}

#[derive(Debug, Clone)]
pub struct StepParams {
    pub dt: f64,
    pub scheme: Scheme,
    pub advection: AdvectionScheme,
    /// Limit BDS reconstructions to suppress new extrema.
    pub limited: bool,
    /// Project traced/averaged face density pairs onto the EOS before
    /// forming advective fluxes.
    pub eos_face_projection: bool,
    pub corrector_advective_form: AdvectiveForm,
    pub corrector_viscosity_source: ViscositySource,
    pub gravity: [f64; 2],
    pub bc: BcSpec,
    /// Enable the stochastic fluxes.
    pub stochastic: bool,
    /// With `stochastic` on, also include the stochastic mass flux. Turning
    /// this off leaves only the stochastic stress, for regimes where
    /// concentration fluctuations come entirely from velocity coupling.
    pub stochastic_mass: bool,
    pub master_seed: u64,
    /// Amplify off-diagonal stress noise on wall nodes by sqrt(2).
    pub wall_node_sqrt2: bool,
    pub stokes: SolverOptions,
    /// Error (rather than proceed) when the advective CFL exceeds one.
    pub strict_cfl: bool,
    /// Re-project the cell densities onto the EOS every this many steps.
    pub eos_projection_stride: Option<u64>,
    /// Deterministic runs only: choose dt each step so the advective CFL
    /// stays at this target (dt is capped by `dt` above).
    pub adaptive_cfl: Option<f64>,
}

impl StepParams {
    pub fn new(dt: f64) -> Self {
        StepParams {
            dt,
            scheme: Scheme::Inertial,
            advection: AdvectionScheme::Centered,
            limited: true,
            eos_face_projection: true,
            corrector_advective_form: AdvectiveForm::Trapezoidal,
            corrector_viscosity_source: ViscositySource::Corrected,
            gravity: [0.0, 0.0],
            bc: BcSpec::default(),
            stochastic: false,
            stochastic_mass: true,
            master_seed: 0,
            wall_node_sqrt2: true,
            stokes: SolverOptions::default(),
            strict_cfl: false,
            eos_projection_stride: None,
            adaptive_cfl: None,
        }
    }

    fn bds_options(&self) -> BdsOptions {
        BdsOptions {
            reconstruction: match self.advection {
                AdvectionScheme::BdsQuadratic => Reconstruction::Quadratic,
                _ => Reconstruction::Bilinear,
            },
            limited: self.limited,
            eos_face_projection: self.eos_face_projection,
        }
    }
}

/// Stability numbers for the explicit pieces of a step.
#[derive(Debug, Clone, Copy)]
pub struct Advisories {
    /// max |v| dt / dx.
    pub advective_cfl: f64,
    /// max chi dt / dx^2; stable range is < 1/(2 d) = 1/4 in 2D.
    pub mass_diffusive: f64,
    /// max nu dt / dx^2 (reported; viscosity is treated implicitly).
    pub viscous: f64,
}

pub fn advisories(state: &FluidState, model: &MixtureModel, params: &StepParams) -> Advisories {
    let g = state.rho.grid;
    let h = g.dx.min(g.dy);
    let coefs = Coefficients::evaluate(model, state);
    let vmax = state.vel.max_abs();
    let chi_max = coefs.chi_cell.data().iter().fold(0.0_f64, |m, &v| m.max(v));
    let mut nu_max = 0.0_f64;
    for (e, r) in coefs.eta_cell.data().iter().zip(state.rho.data()) {
        nu_max = nu_max.max(e / r);
    }
    Advisories {
        advective_cfl: vmax * params.dt / h,
        mass_diffusive: chi_max * params.dt / (h * h),
        viscous: nu_max * params.dt / (h * h),
    }
}

/// Record of the noise draws a step consumed, for wiring tests.
#[derive(Debug, Clone, Default)]
pub struct StepDiagnostics {
    pub noise_draws: Vec<(u64, Stream, &'static str)>,
    pub predictor_iters: usize,
    pub corrector_iters: usize,
}

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

fn face_mul(a: &FaceField, b: &FaceField) -> FaceField {
    let mut out = a.clone();
    out.for_each_x(|i, j, v| *v *= b.x(i as isize, j as isize));
    out.for_each_y(|i, j, v| *v *= b.y(i as isize, j as isize));
    out
}

fn gravity_force(rho_face: &FaceField, g: [f64; 2]) -> FaceField {
    let mut out = rho_face.clone();
    out.for_each_x(|_, _, v| *v *= g[0]);
    out.for_each_y(|_, _, v| *v *= g[1]);
    out
}

/// Deterministic plus (optional) stochastic diffusive flux of species 1.
/// `dt_noise` is the time interval in the noise amplitude denominator.
fn species_flux(
    coefs: &Coefficients,
    c: &CellField,
    model: &MixtureModel,
    stochastic: bool,
    dt_noise: f64,
    mass_noise: &FaceField,
) -> Result<FaceField> {
    let grad_c = ops::gradient(c);
    let rho_chi_face = ops::average_cell_to_face(&coefs.rho_chi_cell, model.avg_rule)?;
    let mut flux = face_mul(&rho_chi_face, &grad_c);
    if stochastic {
        let noise = stochastic::stochastic_mass_flux(&coefs.noise_mass_cell, dt_noise, mass_noise)?;
        flux.axpy(1.0, &noise);
    }
    Ok(flux)
}

/// Advective fluxes of (rho1, rho) for one stage.
#[allow(clippy::too_many_arguments)]
fn pair_fluxes(
    params: &StepParams,
    model: &MixtureModel,
    rho1: &CellField,
    rho: &CellField,
    v: &FaceField,
    div_flux: &CellField,
    dt: f64,
) -> Result<(FaceField, FaceField)> {
    match params.advection {
        AdvectionScheme::Centered => Ok(advection::centered_pair_fluxes(
            rho1,
            rho,
            v,
            params.eos_face_projection,
            model,
        )),
        _ => {
            let zero = CellField::zeros(&rho.grid);
            advection::bds_pair_fluxes(rho1, rho, v, div_flux, &zero, dt, params.bds_options(), model)
        }
    }
}

fn scalar_update(
    rho1_n: &CellField,
    rho_n: &CellField,
    div_flux: &CellField,
    flux1: &FaceField,
    flux_rho: &FaceField,
    dt_diff: f64,
    dt_adv: f64,
) -> (CellField, CellField) {
    let d1 = ops::divergence(flux1);
    let dr = ops::divergence(flux_rho);
    let mut rho1 = rho1_n.clone();
    rho1.axpy(dt_diff, div_flux);
    rho1.axpy(-dt_adv, &d1);
    let mut rho = rho_n.clone();
    rho.axpy(-dt_adv, &dr);
    (rho1, rho)
}

fn constraint_rhs(model: &MixtureModel, flux: &FaceField) -> CellField {
    // div v = -div(beta rho^{-1} F); beta/rho is a material constant, so
    // the right-hand side is that constant times div F.
    let mut h = ops::divergence(flux);
    h.scale(-model.beta_over_rho());
    h
}

fn check_cfl(v: &FaceField, dt: f64, strict: bool) -> Result<()> {
    let g = v.grid;
    let cfl = v.max_abs() * dt / g.dx.min(g.dy);
    if strict && cfl > 1.0 {
        return Err(Error::CflExceeded { cfl });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Inertial scheme
// ---------------------------------------------------------------------------

pub fn inertial_step(
    state: &FluidState,
    model: &MixtureModel,
    params: &StepParams,
    step_index: u64,
) -> Result<FluidState> {
    inertial_step_diag(state, model, params, step_index).map(|(s, _)| s)
}

pub fn inertial_step_diag(
    state: &FluidState,
    model: &MixtureModel,
    params: &StepParams,
    step_index: u64,
) -> Result<(FluidState, StepDiagnostics)> {
    let g = state.rho.grid;
    let dt = params.dt;
    let mut diag = StepDiagnostics::default();
    check_cfl(&state.vel, dt, params.strict_cfl)?;

    let noise_n = sample(&g, params, step_index, Stream::A, &mut diag, "step n");
    let coefs_n = Coefficients::evaluate(model, state);
    let c_n = state.concentration();

    // Stage 1: predictor fluxes F^n.
    let flux_n = species_flux(&coefs_n, &c_n, model, params.stochastic && params.stochastic_mass, dt, &noise_n.w_mass)?;
    let div_flux_n = ops::divergence(&flux_n);

    // Stage 2: forward-Euler predictor for the densities.
    let (adv1, advr) = pair_fluxes(params, model, &state.rho1, &state.rho, &state.vel, &div_flux_n, dt)?;
    let (rho1_p, rho_p) = scalar_update(&state.rho1, &state.rho, &div_flux_n, &adv1, &advr, dt, dt);
    let pred_scalars = FluidState {
        rho1: rho1_p,
        rho: rho_p,
        vel: state.vel.clone(),
        pressure: state.pressure.clone(),
        time: state.time + dt,
    };
    pred_scalars.check_finite("inertial predictor scalars")?;

    // Stage 3: corrector fluxes F^{*,n+1} reusing the same noise.
    let coefs_p = Coefficients::evaluate(model, &pred_scalars);
    let c_p = pred_scalars.concentration();
    let flux_p = species_flux(&coefs_p, &c_p, model, params.stochastic && params.stochastic_mass, dt, &noise_n.w_mass)?;

    // Stage 4: Crank-Nicolson predictor Stokes solve for v^{*,n+1}.
    let rho_n_face = ops::average_cell_to_face(&state.rho, ops::AvgRule::Arithmetic)?;
    let rho_p_face = ops::average_cell_to_face(&pred_scalars.rho, ops::AvgRule::Arithmetic)?;
    let m_n = face_mul(&rho_n_face, &state.vel);
    let adv_n = advection::centered_momentum_advection(&m_n, &state.vel);
    let walls_n = ops::WallTangential::from_bc(&g, &params.bc, state.time);
    let visc_n = ops::viscous_operator(&state.vel, &coefs_n.eta_cell, &coefs_n.eta_node, &walls_n, params.bc.wall_stencil);
    let sqrt_eta_n_cell = coefs_n.eta_cell.map(f64::sqrt);
    let sqrt_eta_n_node = coefs_n.eta_node.map(f64::sqrt);
    let stoch_n = if params.stochastic {
        stochastic::stochastic_stress_divergence(
            &sqrt_eta_n_cell,
            &sqrt_eta_n_node,
            model.kt,
            dt,
            false,
            &noise_n,
            params.wall_node_sqrt2,
        )
    } else {
        FaceField::zeros(&g)
    };

    let mut f_pred = face_mul(&rho_n_face, &state.vel);
    f_pred.scale(1.0 / dt);
    f_pred.axpy(-1.0, &adv_n);
    f_pred.axpy(1.0, &gravity_force(&rho_n_face, params.gravity));
    f_pred.axpy(0.5, &visc_n);
    f_pred.axpy(1.0, &stoch_n);

    let mut eta_half_cell = coefs_p.eta_cell.clone();
    eta_half_cell.scale(0.5);
    let mut eta_half_node = coefs_p.eta_node.clone();
    eta_half_node.scale(0.5);
    let pred_problem = StokesProblem {
        theta: 1.0 / dt,
        rho_face: rho_p_face.clone(),
        eta_cell: eta_half_cell,
        eta_node: eta_half_node,
        f: f_pred,
        h: constraint_rhs(model, &flux_p),
        bc: params.bc,
        time: state.time + dt,
        reference: Some((state.vel.clone(), state.pressure.clone())),
    };
    let pred_sol = solve_stokes(&pred_problem, &params.stokes)?;
    diag.predictor_iters = pred_sol.iterations;
    pred_sol.v.is_finite().then_some(()).ok_or(Error::NanDetected {
        stage: "inertial predictor Stokes".into(),
    })?;

    // Stage 5: scalar corrector with midpoint fluxes and velocity.
    let mut flux_mid = flux_n.clone();
    flux_mid.axpy(1.0, &flux_p);
    flux_mid.scale(0.5);
    let div_flux_mid = ops::divergence(&flux_mid);
    let mut v_mid = state.vel.clone();
    v_mid.axpy(1.0, &pred_sol.v);
    v_mid.scale(0.5);

    let (cadv1, cadvr) = match (params.advection, params.corrector_advective_form) {
        (AdvectionScheme::Centered, AdvectiveForm::Trapezoidal) => {
            let (mut a1, mut ar) = advection::centered_pair_fluxes(
                &state.rho1,
                &state.rho,
                &state.vel,
                params.eos_face_projection,
                model,
            );
            let (b1, br) = advection::centered_pair_fluxes(
                &pred_scalars.rho1,
                &pred_scalars.rho,
                &pred_sol.v,
                params.eos_face_projection,
                model,
            );
            a1.axpy(1.0, &b1);
            ar.axpy(1.0, &br);
            a1.scale(0.5);
            ar.scale(0.5);
            (a1, ar)
        }
        (AdvectionScheme::Centered, AdvectiveForm::Midpoint) => {
            let mut r1 = state.rho1.clone();
            r1.axpy(1.0, &pred_scalars.rho1);
            r1.scale(0.5);
            let mut rr = state.rho.clone();
            rr.axpy(1.0, &pred_scalars.rho);
            rr.scale(0.5);
            advection::centered_pair_fluxes(&r1, &rr, &v_mid, params.eos_face_projection, model)
        }
        _ => pair_fluxes(params, model, &state.rho1, &state.rho, &v_mid, &div_flux_mid, dt)?,
    };
    let (rho1_new, rho_new) =
        scalar_update(&state.rho1, &state.rho, &div_flux_mid, &cadv1, &cadvr, dt, dt);
    let corr_scalars = FluidState {
        rho1: rho1_new,
        rho: rho_new,
        vel: state.vel.clone(),
        pressure: state.pressure.clone(),
        time: state.time + dt,
    };
    corr_scalars.check_finite("inertial corrector scalars")?;

    // Stage 6a: fresh fluxes F^{n+1}; the same noise is consumed as F^n of
    // the next step so the velocity constraint stays consistent.
    let noise_next = sample(&g, params, step_index + 1, Stream::A, &mut diag, "step n+1 mass");
    let coefs_new = Coefficients::evaluate(model, &corr_scalars);
    let c_new = corr_scalars.concentration();
    let flux_new = species_flux(&coefs_new, &c_new, model, params.stochastic && params.stochastic_mass, dt, &noise_next.w_mass)?;

    // Stage 6b: corrector Stokes solve for v^{n+1}.
    let (eta_corr_cell, eta_corr_node) = match params.corrector_viscosity_source {
        ViscositySource::Corrected => (coefs_new.eta_cell.clone(), coefs_new.eta_node.clone()),
        ViscositySource::Predictor => (coefs_p.eta_cell.clone(), coefs_p.eta_node.clone()),
    };
    let rho_new_face = ops::average_cell_to_face(&corr_scalars.rho, ops::AvgRule::Arithmetic)?;
    let m_p = face_mul(&rho_p_face, &pred_sol.v);
    let adv_p = advection::centered_momentum_advection(&m_p, &pred_sol.v);

    let stoch_corr = if params.stochastic {
        let mut sc = sqrt_eta_n_cell.clone();
        let se = eta_corr_cell.map(f64::sqrt);
        sc.axpy(1.0, &se);
        sc.scale(0.5);
        let mut sn = sqrt_eta_n_node.clone();
        let sen = eta_corr_node.map(f64::sqrt);
        sn.axpy(1.0, &sen);
        sn.scale(0.5);
        stochastic::stochastic_stress_divergence(
            &sc,
            &sn,
            model.kt,
            dt,
            false,
            &noise_n,
            params.wall_node_sqrt2,
        )
    } else {
        FaceField::zeros(&g)
    };

    let mut f_corr = face_mul(&rho_n_face, &state.vel);
    f_corr.scale(1.0 / dt);
    f_corr.axpy(-0.5, &adv_n);
    f_corr.axpy(-0.5, &adv_p);
    let mut rho_avg_face = rho_n_face.clone();
    rho_avg_face.axpy(1.0, &rho_new_face);
    rho_avg_face.scale(0.5);
    f_corr.axpy(1.0, &gravity_force(&rho_avg_face, params.gravity));
    f_corr.axpy(0.5, &visc_n);
    f_corr.axpy(1.0, &stoch_corr);

    let mut eta_half_cell = eta_corr_cell;
    eta_half_cell.scale(0.5);
    let mut eta_half_node = eta_corr_node;
    eta_half_node.scale(0.5);
    let corr_problem = StokesProblem {
        theta: 1.0 / dt,
        rho_face: rho_new_face,
        eta_cell: eta_half_cell,
        eta_node: eta_half_node,
        f: f_corr,
        h: constraint_rhs(model, &flux_new),
        bc: params.bc,
        time: state.time + dt,
        reference: Some((pred_sol.v.clone(), pred_sol.pi.clone())),
    };
    let corr_sol = solve_corrector(&corr_problem, &params.stokes, &pred_sol)?;
    diag.corrector_iters = corr_sol.iterations;

    let out = FluidState {
        rho1: corr_scalars.rho1,
        rho: corr_scalars.rho,
        vel: corr_sol.v,
        pressure: corr_sol.pi,
        time: state.time + dt,
    };
    out.check_finite("inertial corrector")?;
    Ok((out, diag))
}

/// Corrector solves reuse the predictor's achieved absolute residual as an
/// absolute tolerance so both stages leave comparable defects.
fn solve_corrector(
    problem: &StokesProblem,
    opts: &SolverOptions,
    pred: &StokesSolution,
) -> Result<StokesSolution> {
    let mut o = *opts;
    if pred.achieved_absolute > 0.0 {
        o.tol_mode = TolMode::Absolute;
        o.tol = pred.achieved_absolute.max(1e-300);
    }
    solve_stokes(problem, &o)
}

fn sample(
    g: &Grid,
    params: &StepParams,
    step: u64,
    stream: Stream,
    diag: &mut StepDiagnostics,
    label: &'static str,
) -> NoiseRealization {
    diag.noise_draws.push((step, stream, label));
    stochastic::sample_noise(g, params.master_seed, step, stream)
}

// ---------------------------------------------------------------------------
// Overdamped scheme
// ---------------------------------------------------------------------------

pub fn overdamped_step(
    state: &FluidState,
    model: &MixtureModel,
    params: &StepParams,
    step_index: u64,
) -> Result<FluidState> {
    overdamped_step_diag(state, model, params, step_index).map(|(s, _)| s)
}

pub fn overdamped_step_diag(
    state: &FluidState,
    model: &MixtureModel,
    params: &StepParams,
    step_index: u64,
) -> Result<(FluidState, StepDiagnostics)> {
    let g = state.rho.grid;
    let dt = params.dt;
    let mut diag = StepDiagnostics::default();

    let noise_a = sample(&g, params, step_index, Stream::A, &mut diag, "stream A");
    let coefs_n = Coefficients::evaluate(model, state);
    let c_n = state.concentration();

    // Stage 1: predictor fluxes with half-step noise scaling.
    let flux_n = species_flux(&coefs_n, &c_n, model, params.stochastic && params.stochastic_mass, 0.5 * dt, &noise_a.w_mass)?;
    let div_flux_n = ops::divergence(&flux_n);

    // Stage 2: random advection velocity from a steady Stokes solve.
    let rho_n_face = ops::average_cell_to_face(&state.rho, ops::AvgRule::Arithmetic)?;
    let sqrt_eta_n_cell = coefs_n.eta_cell.map(f64::sqrt);
    let sqrt_eta_n_node = coefs_n.eta_node.map(f64::sqrt);
    let stoch_n = if params.stochastic {
        stochastic::stochastic_stress_divergence(
            &sqrt_eta_n_cell,
            &sqrt_eta_n_node,
            model.kt,
            dt,
            true,
            &noise_a,
            params.wall_node_sqrt2,
        )
    } else {
        FaceField::zeros(&g)
    };
    let mut f_pred = gravity_force(&rho_n_face, params.gravity);
    f_pred.axpy(1.0, &stoch_n);
    let pred_problem = StokesProblem {
        theta: 0.0,
        rho_face: rho_n_face,
        eta_cell: coefs_n.eta_cell.clone(),
        eta_node: coefs_n.eta_node.clone(),
        f: f_pred,
        h: constraint_rhs(model, &flux_n),
        bc: params.bc,
        time: state.time,
        reference: Some((state.vel.clone(), state.pressure.clone())),
    };
    let pred_sol = solve_stokes(&pred_problem, &params.stokes)?;
    diag.predictor_iters = pred_sol.iterations;
    check_cfl(&pred_sol.v, dt, params.strict_cfl)?;

    // Stage 3: midpoint Euler predictor for the densities.
    let (adv1, advr) =
        pair_fluxes(params, model, &state.rho1, &state.rho, &pred_sol.v, &div_flux_n, 0.5 * dt)?;
    let (rho1_h, rho_h) =
        scalar_update(&state.rho1, &state.rho, &div_flux_n, &adv1, &advr, 0.5 * dt, 0.5 * dt);
    let mid_scalars = FluidState {
        rho1: rho1_h,
        rho: rho_h,
        vel: pred_sol.v.clone(),
        pressure: pred_sol.pi.clone(),
        time: state.time + 0.5 * dt,
    };
    mid_scalars.check_finite("overdamped midpoint scalars")?;

    // Stage 4: corrector fluxes with the combined noise at full-step
    // scaling.
    let noise_b = sample(&g, params, step_index, Stream::B, &mut diag, "stream B");
    let noise_ab = NoiseRealization::mean_sqrt2(&noise_a, &noise_b);
    let coefs_h = Coefficients::evaluate(model, &mid_scalars);
    let c_h = mid_scalars.concentration();
    let flux_h = species_flux(&coefs_h, &c_h, model, params.stochastic && params.stochastic_mass, dt, &noise_ab.w_mass)?;
    let div_flux_h = ops::divergence(&flux_h);

    // Stage 5: corrected steady Stokes solve for v^{*,n+1/2}.
    let rho_h_face = ops::average_cell_to_face(&mid_scalars.rho, ops::AvgRule::Arithmetic)?;
    let stoch_h = if params.stochastic {
        let sc = coefs_h.eta_cell.map(f64::sqrt);
        let sn = coefs_h.eta_node.map(f64::sqrt);
        stochastic::stochastic_stress_divergence(
            &sc,
            &sn,
            model.kt,
            dt,
            false,
            &noise_ab,
            params.wall_node_sqrt2,
        )
    } else {
        FaceField::zeros(&g)
    };
    let mut f_corr = gravity_force(&rho_h_face, params.gravity);
    f_corr.axpy(1.0, &stoch_h);
    let corr_problem = StokesProblem {
        theta: 0.0,
        rho_face: rho_h_face,
        eta_cell: coefs_h.eta_cell.clone(),
        eta_node: coefs_h.eta_node.clone(),
        f: f_corr,
        h: constraint_rhs(model, &flux_h),
        bc: params.bc,
        time: state.time + 0.5 * dt,
        reference: Some((pred_sol.v.clone(), pred_sol.pi.clone())),
    };
    let corr_sol = solve_corrector(&corr_problem, &params.stokes, &pred_sol)?;
    diag.corrector_iters = corr_sol.iterations;
    check_cfl(&corr_sol.v, dt, params.strict_cfl)?;

    // Stage 6: full-step corrector for the densities.
    let (cadv1, cadvr) = match params.advection {
        AdvectionScheme::Centered => Ok(advection::centered_pair_fluxes(
            &mid_scalars.rho1,
            &mid_scalars.rho,
            &corr_sol.v,
            params.eos_face_projection,
            model,
        )),
        _ => pair_fluxes(params, model, &state.rho1, &state.rho, &corr_sol.v, &div_flux_h, dt),
    }?;
    let (rho1_new, rho_new) =
        scalar_update(&state.rho1, &state.rho, &div_flux_h, &cadv1, &cadvr, dt, dt);

    let out = FluidState {
        rho1: rho1_new,
        rho: rho_new,
        vel: corr_sol.v,
        pressure: corr_sol.pi,
        time: state.time + dt,
    };
    out.check_finite("overdamped corrector")?;
    Ok((out, diag))
}

// ---------------------------------------------------------------------------
// Stepping driver
// ---------------------------------------------------------------------------

pub fn step(
    state: &FluidState,
    model: &MixtureModel,
    params: &StepParams,
    step_index: u64,
) -> Result<FluidState> {
    match params.scheme {
        Scheme::Inertial => inertial_step(state, model, params, step_index),
        Scheme::Overdamped => overdamped_step(state, model, params, step_index),
    }
}

/// Make the initial velocity satisfy the divergence constraint built from
/// the step-0 fluxes; without this the first inertial predictor drifts off
/// the EOS by O(dt * div F).
pub fn project_initial_velocity(
    state: &mut FluidState,
    model: &MixtureModel,
    params: &StepParams,
    start_step: u64,
) -> Result<()> {
    let g = state.rho.grid;
    let coefs = Coefficients::evaluate(model, state);
    let c = state.concentration();
    let noise = stochastic::sample_noise(&g, params.master_seed, start_step, Stream::A);
    let flux = species_flux(&coefs, &c, model, params.stochastic && params.stochastic_mass, params.dt, &noise.w_mass)?;
    let rho_face = ops::average_cell_to_face(&state.rho, ops::AvgRule::Arithmetic)?;
    // Density-weighted Hodge projection: theta = 1 with zero viscosity gives
    // rho (v' - v) + grad pi = 0 subject to the constraint, so the result
    // does not depend on dt (only the flux right-hand side does, through
    // the noise amplitude).
    let f = face_mul(&rho_face, &state.vel);
    let problem = StokesProblem {
        theta: 1.0,
        rho_face,
        eta_cell: CellField::zeros(&g),
        eta_node: crate::grid::NodeField::zeros(&g),
        f,
        h: constraint_rhs(model, &flux),
        bc: params.bc,
        time: state.time,
        reference: Some((state.vel.clone(), state.pressure.clone())),
    };
    let sol = solve_stokes(&problem, &params.stokes)?;
    state.vel = sol.v;
    state.pressure = sol.pi;
    Ok(())
}

pub trait Observer {
    /// Called after every completed step with the new state.
    fn observe(&mut self, step_index: u64, state: &FluidState) -> Result<()>;
}

impl<F: FnMut(u64, &FluidState) -> Result<()>> Observer for F {
    fn observe(&mut self, step_index: u64, state: &FluidState) -> Result<()> {
        self(step_index, state)
    }
}

/// Advance `n_steps` steps from `state`, starting at absolute step index
/// `start_step` (which seeds the per-step noise counters, so restarted
/// runs reproduce uninterrupted ones bit for bit).
pub fn run(
    state: FluidState,
    model: &MixtureModel,
    params: &StepParams,
    n_steps: u64,
    start_step: u64,
    observers: &mut [&mut dyn Observer],
) -> Result<FluidState> {
    let mut s = state;
    let mut p = params.clone();
    for k in 0..n_steps {
        let idx = start_step + k;
        if let Some(target) = params.adaptive_cfl {
            if !params.stochastic {
                let vmax = s.vel.max_abs();
                let h = s.rho.grid.dx.min(s.rho.grid.dy);
                let dt_cfl = if vmax > 0.0 { target * h / vmax } else { params.dt };
                p.dt = dt_cfl.min(params.dt);
            }
        }
        s = step(&s, model, &p, idx)?;
        if let Some(stride) = params.eos_projection_stride {
            if stride > 0 && (idx + 1) % stride == 0 {
                s.project_to_eos(model);
            }
        }
        for obs in observers.iter_mut() {
            obs.observe(idx, &s)?;
        }
    }
    Ok(s)
}
