//! End-to-end acceptance suite. Every numbered criterion below runs a real
//! simulation (or a synthetic oracle) and prints a single PASS/FAIL line;
//! the test fails if any criterion fails.
//!
//! Sampling lengths for the statistical criteria are sized for a single
//! core: tolerances on fluctuation averages are expressed through standard
//! errors computed from block averages of the actual run, so shorter
//! sampling widens the tolerance honestly instead of weakening the check.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use lowmach::advection::{centered_scalar_flux, AdvectionScheme};
use lowmach::analysis::{self, FitModel, TheoryParams};
use lowmach::grid::{CellField, FaceField, Grid};
use lowmach::harness::{
    self, convergence_study, order_table_from_states, run_scenario, InitialCondition,
    ScenarioConfig,
};
use lowmach::integrators::{self, Scheme, StepParams};
use lowmach::mixture::{CoefficientModel, FluidState, MixtureModel};
use lowmach::ops::{self, AvgRule};
use lowmach::stokes::{solve_stokes, SolverOptions, StokesProblem};

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
struct EosTrack {
    /// Max pointwise EOS residual right after a step, before re-projection.
    running: f64,
    /// Max residual after re-projection.
    post: f64,
}

/// Advance `n` steps with per-step EOS tracking and re-projection, calling
/// `obs` after each completed step.
fn advance(
    mut state: FluidState,
    model: &MixtureModel,
    params: &StepParams,
    n: u64,
    start: u64,
    eos: &mut EosTrack,
    mut obs: impl FnMut(u64, &FluidState),
) -> FluidState {
    for k in 0..n {
        let idx = start + k;
        state = integrators::step(&state, model, params, idx)
            .unwrap_or_else(|e| panic!("step {idx} failed: {e}"));
        eos.running = eos.running.max(state.eos_residual_max(model));
        state.project_to_eos(model);
        eos.post = eos.post.max(state.eos_residual_max(model));
        obs(idx, &state);
    }
    state
}

fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Weighted least squares line y = a + b x; returns (a, b).
fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let sx: f64 = x.iter().zip(w).map(|(x, w)| x * w).sum();
    let sy: f64 = y.iter().zip(w).map(|(y, w)| y * w).sum();
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| x * x * w).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((x, y), w)| x * y * w).sum();
    let denom = sw * sxx - sx * sx;
    let b = (sw * sxy - sx * sy) / denom;
    let a = (sy - b * sx) / sw;
    (a, b)
}

struct Criterion {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn check(list: &mut Vec<(bool, String)>, ok: bool, msg: String) {
    list.push((ok, msg));
}

fn summarize(id: usize, name: &'static str, checks: Vec<(bool, String)>) -> Criterion {
    let passed = checks.iter().all(|(ok, _)| *ok);
    let mut detail = String::new();
    for (ok, msg) in &checks {
        let _ = write!(detail, "[{}] {}; ", if *ok { "ok" } else { "FAIL" }, msg);
    }
    Criterion { id, name, passed, detail }
}

// ---------------------------------------------------------------------------
// Criterion 1: equilibrium static structure factor
// ---------------------------------------------------------------------------

/// Mode-averaged stationary S_rho predicted for our trapezoidal (inertial)
/// and midpoint (overdamped) discretizations of the per-mode
/// Ornstein-Uhlenbeck dynamics with rate chi k_eff^2. This is an
/// independent closed-form recurrence analysis, used as a cross-check
/// alongside the tabulated reference values.
fn recurrence_s_rho(scheme: Scheme, dt: f64) -> f64 {
    let n = 32usize;
    let mut tot = 0.0;
    let mut cnt = 0usize;
    for m in 0..n {
        for q in 0..n {
            if m == 0 && q == 0 {
                continue;
            }
            let lam = 4.0 * (PI * m as f64 / n as f64).sin().powi(2)
                + 4.0 * (PI * q as f64 / n as f64).sin().powi(2);
            let z = lam * dt;
            let r = 1.0 - z + z * z / 2.0;
            let ratio = match scheme {
                // Trapezoidal predictor-corrector, noise reused in the
                // corrector: stationary variance 2 z (1 - z/2)^2 / (1 - R^2).
                Scheme::Inertial => 2.0 * z * (1.0 - z / 2.0).powi(2) / (1.0 - r * r),
                // Explicit midpoint with fresh half-step noise:
                // z [(1 - z)^2 + 1] / (1 - R^2).
                Scheme::Overdamped => z * ((1.0 - z).powi(2) + 1.0) / (1.0 - r * r),
            };
            tot += ratio;
            cnt += 1;
        }
    }
    0.375 * tot / cnt as f64
}

fn equilibrium_s_rho(
    scheme: Scheme,
    eta: CoefficientModel,
    dt: f64,
    seed: u64,
    eos: &mut EosTrack,
) -> (f64, f64) {
    let mut cfg = ScenarioConfig::preset("equilibrium").unwrap();
    cfg.scheme = scheme;
    cfg.eta = eta;
    cfg.dt = dt;
    cfg.seed = seed;
    let (grid, model, mut state, params) = cfg.build().unwrap();
    integrators::project_initial_velocity(&mut state, &model, &params, 0).unwrap();
    let n_equil = (100.0 / dt).round() as u64;
    let blocks = 8usize;
    let block_steps = (50.0 / dt).round() as u64;
    state = advance(state, &model, &params, n_equil, 0, eos, |_, _| {});
    let mut planner = FftPlanner::new();
    let mut block_means = Vec::with_capacity(blocks);
    let mut start = n_equil;
    for _ in 0..blocks {
        let mut series = analysis::empty_spectrum(&grid, 0.0, 0.0);
        state = advance(state, &model, &params, block_steps, start, eos, |_, s| {
            analysis::accumulate_spectrum(&mut series, &s.rho, &mut planner).unwrap();
        });
        start += block_steps;
        block_means.push(series.average());
    }
    mean_and_se(&block_means)
}

fn criterion_1(eos_log: &mut Vec<(String, EosTrack, f64)>) -> Criterion {
    let dts = [0.1, 0.05, 0.025];
    let mut checks = Vec::new();
    let mut measured = Vec::new(); // (scheme, dt, s, se)
    for (scheme, eta, f1) in [
        (Scheme::Inertial, CoefficientModel::Linear { f0: 1.0, f1: 10.0 }, 10.0),
        (Scheme::Overdamped, CoefficientModel::Linear { f0: 1.0, f1: 100.0 }, 100.0),
    ] {
        let _ = f1;
        for (i, &dt) in dts.iter().enumerate() {
            let mut eos = EosTrack::default();
            let seed = 1000 + 10 * i as u64 + if scheme == Scheme::Inertial { 0 } else { 1 };
            let (s, se) = equilibrium_s_rho(scheme, eta.clone(), dt, seed, &mut eos);
            eos_log.push((format!("equilibrium {scheme:?} dt={dt}"), eos, 1e-9));
            measured.push((scheme, dt, s, se));
        }
    }
    // Reference comparison at the tabulated points. The tolerance is three
    // standard errors plus the rounding half-ulp of the 4-digit reference.
    for (scheme, dt_ref, target) in
        [(Scheme::Inertial, 0.1, 0.3201), (Scheme::Overdamped, 0.025, 0.3755)]
    {
        let &(_, _, s, se) =
            measured.iter().find(|(sc, dt, _, _)| *sc == scheme && *dt == dt_ref).unwrap();
        let tol = 3.0 * (se * se + 5e-5f64 * 5e-5).sqrt();
        let pred = recurrence_s_rho(scheme, dt_ref);
        check(
            &mut checks,
            (s - target).abs() <= tol,
            format!(
                "{scheme:?} dt={dt_ref}: S_rho = {s:.4} +- {se:.1e} vs reference {target} \
                 (tol {tol:.1e}; independent recurrence analysis of this scheme predicts {pred:.4})"
            ),
        );
    }
    // Temporal orders from the measured deviations off the exact 0.375,
    // dropping points indistinguishable from the noise floor.
    let order_of = |scheme: Scheme| -> (f64, usize) {
        let pts: Vec<(f64, f64)> = measured
            .iter()
            .filter(|(sc, _, s, se)| *sc == scheme && (s - 0.375).abs() > 2.0 * se)
            .map(|&(_, dt, s, _)| (dt.ln(), (s - 0.375).abs().ln()))
            .collect();
        if pts.len() < 2 {
            return (f64::NAN, pts.len());
        }
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let w = vec![1.0; x.len()];
        (weighted_line(&x, &y, &w).1, pts.len())
    };
    let (o_in, n_in) = order_of(Scheme::Inertial);
    check(
        &mut checks,
        (1.6..=2.6).contains(&o_in),
        format!("inertial dt-order {o_in:.2} over {n_in} resolvable points (want 1.6..2.6)"),
    );
    let (o_od, n_od) = order_of(Scheme::Overdamped);
    check(
        &mut checks,
        (2.4..=4.0).contains(&o_od),
        format!("overdamped dt-order {o_od:.2} over {n_od} resolvable points (want 2.4..4.0)"),
    );
    summarize(1, "equilibrium static structure factor", checks)
}

// ---------------------------------------------------------------------------
// Criterion 2: deterministic lid-driven cavity convergence
// ---------------------------------------------------------------------------

fn criterion_2() -> Criterion {
    let mut checks = Vec::new();
    let variants: [(&str, AdvectionScheme, bool, Option<CoefficientModel>); 4] = [
        ("centered", AdvectionScheme::Centered, true, None),
        ("bds-bilinear", AdvectionScheme::BdsBilinear, false, None),
        ("bds-quadratic", AdvectionScheme::BdsQuadratic, false, None),
        ("bds-bilinear chi=0", AdvectionScheme::BdsBilinear, false, Some(CoefficientModel::Constant(0.0))),
    ];
    for (label, adv, limited, chi) in variants {
        let mut cfg = ScenarioConfig::preset("cavity-2d").unwrap();
        cfg.advection = adv;
        cfg.limited = limited;
        if let Some(c) = chi.clone() {
            cfg.chi = c;
        }
        let table = convergence_study(&cfg, &[32, 64, 128]).unwrap();
        for (v, var) in table.variables.iter().enumerate() {
            let o = table.orders[0][v][0];
            check(
                &mut checks,
                (1.7..=2.3).contains(&o),
                format!("{label}: {var} Linf order {o:.2}"),
            );
        }
        if label == "centered" {
            // 64 -> 128 errors against the reference study, within 20%.
            for (v, reference) in [(0usize, 1.93e-3), (1usize, 8.69e-4)] {
                let e = table.errors[1][v][0];
                check(
                    &mut checks,
                    (e / reference - 1.0).abs() <= 0.20,
                    format!(
                        "centered 64->128 {} Linf error {e:.3e} vs reference {reference:.3e}",
                        table.variables[v]
                    ),
                );
            }
        }
    }
    summarize(2, "lid-driven cavity convergence", checks)
}

// ---------------------------------------------------------------------------
// Criterion 4: sharp-interface square bubble
// ---------------------------------------------------------------------------

fn criterion_4(eos_log: &mut Vec<(String, EosTrack, f64)>) -> Criterion {
    let mut checks = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::preset("square-bubble").unwrap();
    cfg.nx = 128;
    cfg.ny = 128;
    cfg.dt = 5e-3;
    cfg.n_steps = 800; // t = 4
    cfg.output_dir = dir.path().to_path_buf();
    let summary = run_scenario(&cfg).unwrap();
    eos_log.push((
        "square-bubble 128^2".into(),
        EosTrack { running: summary.eos_residual_running_max, post: summary.eos_residual_final },
        cfg.stokes_tol,
    ));
    check(
        &mut checks,
        summary.c_min >= -1e-12 && summary.c_max <= 1.0 + 1e-12,
        format!("c stays in [-1e-12, 1+1e-12]: range [{:.3e}, {:.12}]", summary.c_min, summary.c_max),
    );
    check(
        &mut checks,
        summary.rho1_drift_rel <= 1e-12,
        format!("relative rho1 drift {:.3e} <= 1e-12", summary.rho1_drift_rel),
    );
    check(
        &mut checks,
        summary.final_time > 3.999,
        format!("reached t = {:.3} without NaN", summary.final_time),
    );
    summarize(4, "sharp-interface square bubble", checks)
}

// ---------------------------------------------------------------------------
// Criterion 5: Stokes solver gates
// ---------------------------------------------------------------------------

/// Smooth periodic exact solution with variable eta; the continuum forcing
/// is evaluated with high-order numerical derivatives of the analytic
/// fields (error ~1e-10, far below the discretization error probed here).
fn manufactured_stokes(n: usize, theta: f64) -> (StokesProblem, FaceField) {
    let g = Grid::periodic(n, n, 1.0 / n as f64, 1.0 / n as f64, 1.0);
    let psi = |x: f64, y: f64| (2.0 * PI * x).sin() * (2.0 * PI * y).sin() / (2.0 * PI);
    let mut vex = FaceField::zeros(&g);
    vex.for_each_x(|i, j, v| {
        let x = i as f64 * g.dx;
        let y0 = j as f64 * g.dy;
        *v = (psi(x, y0 + g.dy) - psi(x, y0)) / g.dy;
    });
    vex.for_each_y(|i, j, v| {
        let x0 = i as f64 * g.dx;
        let y = j as f64 * g.dy;
        *v = -(psi(x0 + g.dx, y) - psi(x0, y)) / g.dx;
    });
    let eta_cell = CellField::from_fn(&g, |x, y| 0.55 + 0.405 * (2.0 * PI * (x + 2.0 * y)).sin());
    let eta_node = ops::cell_to_node(&eta_cell, AvgRule::Arithmetic);
    let rho_face = FaceField::constant(&g, 1.3, 1.3);
    let u = |x: f64, y: f64| (2.0 * PI * x).sin() * (2.0 * PI * y).cos();
    let vv = |x: f64, y: f64| -(2.0 * PI * x).cos() * (2.0 * PI * y).sin();
    let eta_f = |x: f64, y: f64| 0.55 + 0.405 * (2.0 * PI * (x + 2.0 * y)).sin();
    let hh = 1e-5;
    let d = move |f: &dyn Fn(f64, f64) -> f64, x: f64, y: f64, dx: bool| {
        if dx {
            (f(x + hh, y) - f(x - hh, y)) / (2.0 * hh)
        } else {
            (f(x, y + hh) - f(x, y - hh)) / (2.0 * hh)
        }
    };
    let mut f = FaceField::zeros(&g);
    f.for_each_x(|i, j, val| {
        let x = i as f64 * g.dx;
        let y = (j as f64 + 0.5) * g.dy;
        let txx = |xx: f64, yy: f64| 2.0 * eta_f(xx, yy) * d(&u, xx, yy, true);
        let txy = |xx: f64, yy: f64| eta_f(xx, yy) * (d(&u, xx, yy, false) + d(&vv, xx, yy, true));
        let visc = d(&txx, x, y, true) + d(&txy, x, y, false);
        let dpdx = -2.0 * PI * (2.0 * PI * x).sin() * (2.0 * PI * y).sin();
        *val = theta * 1.3 * u(x, y) - visc + dpdx;
    });
    f.for_each_y(|i, j, val| {
        let x = (i as f64 + 0.5) * g.dx;
        let y = j as f64 * g.dy;
        let tyy = |xx: f64, yy: f64| 2.0 * eta_f(xx, yy) * d(&vv, xx, yy, false);
        let txy = |xx: f64, yy: f64| eta_f(xx, yy) * (d(&u, xx, yy, false) + d(&vv, xx, yy, true));
        let visc = d(&txy, x, y, true) + d(&tyy, x, y, false);
        let dpdy = 2.0 * PI * (2.0 * PI * x).cos() * (2.0 * PI * y).cos();
        *val = theta * 1.3 * vv(x, y) - visc + dpdy;
    });
    let problem = StokesProblem {
        theta,
        rho_face,
        eta_cell,
        eta_node,
        f,
        h: CellField::zeros(&g),
        bc: Default::default(),
        time: 0.0,
        reference: None,
    };
    (problem, vex)
}

fn criterion_5() -> Criterion {
    let mut checks = Vec::new();
    let mut errs = Vec::new();
    let mut iters = Vec::new();
    for n in [32usize, 64, 128, 256] {
        let (p, vex) = manufactured_stokes(n, 2.0);
        let opts = SolverOptions { tol: 1e-9, ..Default::default() };
        let sol = solve_stokes(&p, &opts).unwrap();
        let mut err = 0.0f64;
        for (a, b) in sol.v.xs().iter().zip(vex.xs()) {
            err = err.max((a - b).abs());
        }
        for (a, b) in sol.v.ys().iter().zip(vex.ys()) {
            err = err.max((a - b).abs());
        }
        errs.push(err);
        iters.push(sol.iterations);
        check(&mut checks, sol.iterations <= 100, format!("{n}^2: {} GMRES iters", sol.iterations));
    }
    for pair in 0..2 {
        let o = (errs[pair] / errs[pair + 1]).log2();
        check(
            &mut checks,
            (1.8..=2.2).contains(&o),
            format!("Linf order {o:.2} between levels {} and {}", 32 << pair, 64 << pair),
        );
    }
    check(
        &mut checks,
        iters[3] <= 2 * iters[0].max(1),
        format!("iteration growth {} -> {} within 2x", iters[0], iters[3]),
    );
    // Trivial problem: zero data must return exactly zero in zero iterations.
    let (mut p, _) = manufactured_stokes(32, 1.0);
    p.f = FaceField::zeros(&p.h.grid);
    let sol = solve_stokes(&p, &SolverOptions::default()).unwrap();
    check(
        &mut checks,
        sol.v.max_abs() == 0.0 && sol.pi.max_abs() == 0.0,
        format!("trivial problem exactly zero ({} iters)", sol.iterations),
    );
    summarize(5, "coupled Stokes solver gates", checks)
}

// ---------------------------------------------------------------------------
// Criterion 6: giant fluctuation spectra
// ---------------------------------------------------------------------------

/// Water-glycerol nonequilibrium run collecting column-mean concentration
/// snapshots every step after equilibration. Returns (correlation set with
/// lag-0 spectrum, mean concentration at the domain midline).
fn glycerol_columns(
    cfg: &ScenarioConfig,
    n_equil: u64,
    n_sample: u64,
    eos: &mut EosTrack,
) -> analysis::CorrelationSet {
    let (grid, model, mut state, params) = cfg.build().unwrap();
    integrators::project_initial_velocity(&mut state, &model, &params, 0).unwrap();
    state = advance(state, &model, &params, n_equil, 0, eos, |_, _| {});
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n_sample as usize);
    let _ = advance(state, &model, &params, n_sample, n_equil, eos, |_, s| {
        columns.push(analysis::vertical_average(&s.concentration()));
    });
    analysis::time_correlation(&columns, grid.lx(), grid.dx, cfg.dt, 1).unwrap()
}

fn glycerol_cfg() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::preset("water-glycerol").unwrap();
    cfg.nx = 64;
    cfg.ny = 64;
    // A linear background gradient is quasi-steady between no-flux walls
    // (decay time ly^2 / (pi^2 chi) ~ 2e4 s), so the uniform-gradient
    // theory applies from t = 0 without waiting for the two-layer profile
    // to diffuse into a smooth one.
    cfg.initial = InitialCondition::LinearRamp { c_bottom: 0.39, c_top: 0.0 };
    cfg
}

/// Theory inputs evaluated at the midline concentration.
fn glycerol_theory(cfg: &ScenarioConfig, g_mag: f64) -> TheoryParams {
    let model = cfg.model();
    let (lo, hi) = match cfg.initial {
        InitialCondition::LinearRamp { c_bottom, c_top } => (c_top, c_bottom),
        _ => unreachable!(),
    };
    let c_mid = 0.5 * (lo + hi);
    let rho = model.density_of_concentration(c_mid);
    TheoryParams {
        eta: model.eta.eval(c_mid),
        chi: model.chi.eval(c_mid),
        rho,
        beta: model.beta(rho),
        g: g_mag,
        h: (hi - lo) / cfg.ly,
        kt: model.kt,
    }
}

fn criterion_6(eos_log: &mut Vec<(String, EosTrack, f64)>) -> Criterion {
    let mut checks = Vec::new();

    // Microgravity run: k^-4 spectrum over the upper wavenumber decade.
    let cfg = glycerol_cfg();
    let mut eos = EosTrack::default();
    let n_equil = (500.0 / cfg.dt).round() as u64;
    let n_sample = (1500.0 / cfg.dt).round() as u64;
    let corr = glycerol_columns(&cfg, n_equil, n_sample, &mut eos);
    eos_log.push(("water-glycerol microgravity 64^2".into(), eos, cfg.stokes_tol));
    let th0 = glycerol_theory(&cfg, 0.0);
    let t_sample = 1500.0;
    let k_top = *corr.k_eff.last().unwrap();
    let (mut xs, mut ys, mut ws) = (Vec::new(), Vec::new(), Vec::new());
    for m in 0..corr.k.len() {
        let ke = corr.k_eff[m];
        if ke >= 0.1 * k_top && corr.s0[m] > 0.0 {
            let tau = 1.0 / (th0.chi * ke * ke);
            xs.push(ke.ln());
            ys.push(corr.s0[m].ln());
            // Effective number of independent samples sets the variance of
            // the log-spectrum estimate per mode.
            ws.push((t_sample / (2.0 * tau)).min(n_sample as f64));
        }
    }
    let (_, slope) = weighted_line(&xs, &ys, &ws);
    check(
        &mut checks,
        (-4.6..=-3.4).contains(&slope),
        format!("microgravity log-log slope {slope:.2} over {} modes (want -4.6..-3.4)", xs.len()),
    );

    // Earth gravity: rollover at k_c. The full 1.132 cm box puts k_c above
    // the 64^2 modified Nyquist, so the rollover run uses a half-width box
    // at the same dx (same k_eff ceiling, doubled smallest k) with the
    // same background gradient.
    let mut cfg_g = glycerol_cfg();
    cfg_g.lx = 0.566;
    cfg_g.ly = 0.566;
    cfg_g.initial = InitialCondition::LinearRamp { c_bottom: 0.2925, c_top: 0.0975 };
    cfg_g.gravity = [0.0, -981.0];
    // Fastest suppressed mode relaxes at ~chi k_c^4 / k_min^2 ~ 37/s; the
    // explicit concentration update needs lambda dt of order one.
    cfg_g.dt = 0.03;
    let mut eos_g = EosTrack::default();
    let corr_g = glycerol_columns(&cfg_g, 400, 1334, &mut eos_g);
    eos_log.push(("water-glycerol Earth gravity 64^2".into(), eos_g, cfg_g.stokes_tol));
    let th = glycerol_theory(&cfg_g, 981.0);
    let kc_theory = th.k_c().unwrap();
    // Weighted linear fit of 1/S against k_eff^4: S = A / (k^4 + k_c^4)
    // gives k_c^4 = intercept / slope. Mode 1 is skipped: its relaxation
    // is faster than the time step and its variance is distorted.
    let t_sample_g = 1334.0 * cfg_g.dt;
    let (mut xs, mut ys, mut ws) = (Vec::new(), Vec::new(), Vec::new());
    for m in 1..corr_g.k.len() {
        let ke = corr_g.k_eff[m];
        if corr_g.s0[m] <= 0.0 {
            continue;
        }
        let tau = th.tau_overdamped(ke).unwrap();
        let n_eff = (t_sample_g / (2.0 * tau)).min(1334.0).max(1.0);
        xs.push(ke.powi(4));
        ys.push(1.0 / corr_g.s0[m]);
        // var(1/S) ~ (1/S)^2 / n_eff.
        ws.push(n_eff / ys.last().unwrap().powi(2));
    }
    let (intercept, slope_g) = weighted_line(&xs, &ys, &ws);
    let kc_fit = (intercept / slope_g).abs().powf(0.25);
    check(
        &mut checks,
        kc_fit / kc_theory <= 2.0 && kc_fit / kc_theory >= 0.5,
        format!("rollover k_c fit {kc_fit:.0} vs theory {kc_theory:.0} (want within 2x)"),
    );
    // Suppression at the smallest resolved wavenumber relative to the
    // k^-4 extrapolation from the fitted high-k amplitude A = 1/slope.
    let k1 = corr_g.k_eff[0];
    let extrapolated = 1.0 / (slope_g * k1.powi(4));
    let suppression = extrapolated / corr_g.s0[0];
    check(
        &mut checks,
        suppression >= 3.0,
        format!("smallest-k suppression {suppression:.1}x below k^-4 extrapolation (want >= 3x)"),
    );
    summarize(6, "giant fluctuation spectra", checks)
}

// ---------------------------------------------------------------------------
// Criterion 7: propagative modes
// ---------------------------------------------------------------------------

fn criterion_7(eos_log: &mut Vec<(String, EosTrack, f64)>) -> Criterion {
    let mut checks = Vec::new();
    let mut cfg = glycerol_cfg();
    cfg.nx = 32;
    cfg.ny = 32;
    cfg.scheme = Scheme::Inertial;
    cfg.gravity = [0.0, -981.0];
    cfg.dt = 0.01375;
    let (grid, model, mut state, params) = cfg.build().unwrap();
    integrators::project_initial_velocity(&mut state, &model, &params, 0).unwrap();
    let mut eos = EosTrack::default();
    let n_equil = 2000u64;
    let n_sample = 20000u64;
    let stride = 4u64;
    state = advance(state, &model, &params, n_equil, 0, &mut eos, |_, _| {});
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let _ = advance(state, &model, &params, n_sample, n_equil, &mut eos, |idx, s| {
        if (idx + 1) % stride == 0 {
            columns.push(analysis::vertical_average(&s.concentration()));
        }
    });
    eos_log.push(("water-glycerol inertial gravity 32^2".into(), eos, cfg.stokes_tol));
    let dt_snap = stride as f64 * cfg.dt;
    let corr = analysis::time_correlation(&columns, grid.lx(), grid.dx, dt_snap, 40).unwrap();

    let th = glycerol_theory(&cfg, 981.0);
    let k1 = corr.k[0];
    let kp = th.k_p().unwrap();
    check(&mut checks, k1 < kp, format!("smallest k {k1:.2} < k_p {kp:.2}"));
    let (root, _) = th.tau_complex(k1).unwrap();
    check(&mut checks, root.im != 0.0, format!("theory predicts a complex pair at k = {k1:.2}"));
    let period_theory = 2.0 * PI / root.im.abs();
    let data = &corr.corr[0];
    let osc = analysis::fit_correlation(data, dt_snap, FitModel::Oscillatory).unwrap();
    let dexp = analysis::fit_correlation(data, dt_snap, FitModel::DoubleExp).unwrap();
    check(
        &mut checks,
        osc.gof < dexp.gof,
        format!("oscillatory fit rms {:.3e} beats double-exponential {:.3e}", osc.gof, dexp.gof),
    );
    let period_fit = osc.params[2].abs();
    check(
        &mut checks,
        (period_fit / period_theory - 1.0).abs() <= 0.30,
        format!("fitted period {period_fit:.3} s vs theory {period_theory:.3} s (want within 30%)"),
    );
    summarize(7, "propagative modes under gravity", checks)
}

// ---------------------------------------------------------------------------
// Criterion 8: synthetic oracle suite
// ---------------------------------------------------------------------------

fn criterion_8() -> Criterion {
    let started = Instant::now();
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(42);

    // Divergence/gradient adjointness on random fields (MAC summation by
    // parts on a periodic grid).
    let g = Grid::periodic(24, 20, 0.3, 0.45, 2.0);
    let mut f = FaceField::zeros(&g);
    f.for_each_x(|_, _, v| *v = rng.gen::<f64>() - 0.5);
    f.for_each_y(|_, _, v| *v = rng.gen::<f64>() - 0.5);
    let mut p = CellField::zeros(&g);
    for v in p.data_mut() {
        *v = rng.gen::<f64>() - 0.5;
    }
    let div = ops::divergence(&f);
    let grad = ops::gradient(&p);
    let mut pairing = div.dot(&p);
    for (a, b) in f.xs().iter().zip(grad.xs()) {
        pairing += a * b;
    }
    for (a, b) in f.ys().iter().zip(grad.ys()) {
        pairing += a * b;
    }
    check(&mut checks, pairing.abs() < 1e-11, format!("div/grad adjointness defect {pairing:.1e}"));

    // Skew-adjointness of centered advection: <c, div(v c_face)> = 0 for a
    // discretely divergence-free velocity.
    let psi = CellField::from_fn(&g, |x, y| (2.0 * PI * x / g.lx()).sin() * (2.0 * PI * y / g.ly()).cos());
    let mut v = FaceField::zeros(&g);
    v.for_each_x(|i, j, val| {
        let (ii, jj) = (i as isize, j as isize);
        *val = (psi.at(ii, jj) - psi.at(ii - 1, jj)) / g.dy;
    });
    v.for_each_y(|i, j, val| {
        let (ii, jj) = (i as isize, j as isize);
        *val = -(psi.at(ii, jj) - psi.at(ii, jj - 1)) / g.dx;
    });
    // Rotated differences of a cell field are exactly divergence-free on
    // the MAC grid only when built from node values; accept the small
    // defect and check skewness against it.
    let c = CellField::from_fn(&g, |x, y| 0.3 + 0.1 * (2.0 * PI * (x / g.lx() + y / g.ly())).cos());
    let divv = ops::divergence(&v).max_abs();
    let skew = ops::divergence(&centered_scalar_flux(&c, &v)).dot(&c);
    check(
        &mut checks,
        skew.abs() <= 10.0 * divv.max(1e-13),
        format!("centered advection skewness defect {skew:.1e} (div v residual {divv:.1e})"),
    );

    // White-noise fields give a flat spectrum equal to sigma^2 dV.
    let gs = Grid::periodic(32, 32, 1.0, 1.0, 2.0);
    let sigma = 0.8f64;
    let samples: Vec<CellField> = (0..300)
        .map(|_| {
            let mut field = CellField::zeros(&gs);
            for v in field.data_mut() {
                *v = sigma * rng.sample::<f64, _>(StandardNormal);
            }
            field
        })
        .collect();
    let spec = analysis::static_structure_factor(&samples, 0.0, 1.0).unwrap();
    let expect = sigma * sigma * gs.cell_volume();
    let avg = spec.average();
    check(
        &mut checks,
        (avg / expect - 1.0).abs() < 0.05,
        format!("white-noise spectrum average {avg:.3} vs {expect:.3}"),
    );
    let s = spec.spectrum();
    let worst = spec
        .modes
        .iter()
        .zip(&s)
        .filter(|((kx, ky), _)| *kx != 0 || *ky != 0)
        .map(|(_, v)| (v / expect - 1.0).abs())
        .fold(0.0f64, f64::max);
    check(&mut checks, worst < 0.5, format!("flatness: worst mode deviation {worst:.2}"));

    // Ornstein-Uhlenbeck relaxation time recovered from the fitted
    // autocorrelation.
    let tau = 2.0f64;
    let dt = 0.25f64;
    let rho_ou = (-dt / tau).exp();
    let n = 60000usize;
    let mut series = vec![0.0f64; n];
    for t in 1..n {
        let gauss: f64 = rng.sample(StandardNormal);
        series[t] = rho_ou * series[t - 1] + (1.0 - rho_ou * rho_ou).sqrt() * gauss;
    }
    let max_lag = 24usize;
    let mut corr = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let mut acc = 0.0;
        for t in 0..n - lag {
            acc += series[t] * series[t + lag];
        }
        corr.push(acc / (n - lag) as f64);
    }
    let c0 = corr[0];
    for v in &mut corr {
        *v /= c0;
    }
    let fit = analysis::fit_correlation(&corr, dt, FitModel::SingleExpOffset).unwrap();
    check(
        &mut checks,
        (fit.tau / tau - 1.0).abs() < 0.10,
        format!("OU tau {:.3} vs {tau} (want within 10%)", fit.tau),
    );

    // Planted h^2 error measures order exactly two.
    let levels = [16usize, 32, 64];
    let mut states = Vec::new();
    for &nl in &levels {
        let hl = 1.0 / nl as f64;
        let gl = Grid::periodic(nl, nl, hl, hl, 1.0);
        let mut st = FluidState::new(&gl);
        st.rho = CellField::constant(&gl, 1.0);
        st.rho1 = CellField::from_fn(&gl, |x, y| 0.4 + 0.1 * x - 0.05 * y + 0.2 * x * y + hl * hl * 2.5);
        st.vel = FaceField::constant(&gl, 0.3 + hl * hl * 1.75, -0.2 + hl * hl * 0.6);
        states.push(st);
    }
    let table = order_table_from_states(&states, &levels).unwrap();
    let mut worst_dev = 0.0f64;
    for row in &table.orders {
        for o in row {
            for nm in 0..3 {
                worst_dev = worst_dev.max((o[nm] - 2.0).abs());
            }
        }
    }
    check(&mut checks, worst_dev < 1e-3, format!("planted-order worst deviation {worst_dev:.1e}"));

    // Checkpoint round trip reproduces an uninterrupted stochastic run bit
    // for bit.
    let mut cfg = ScenarioConfig::preset("equilibrium").unwrap();
    cfg.nx = 16;
    cfg.ny = 16;
    cfg.lx = 16.0;
    cfg.ly = 16.0;
    cfg.seed = 7;
    let (_, model, mut state, params) = cfg.build().unwrap();
    integrators::project_initial_velocity(&mut state, &model, &params, 0).unwrap();
    let direct = integrators::run(state.clone(), &model, &params, 12, 0, &mut []).unwrap();
    let half = integrators::run(state, &model, &params, 6, 0, &mut []).unwrap();
    let file = tempfile::NamedTempFile::new().unwrap();
    harness::write_checkpoint(file.path(), &half, 6, cfg.seed).unwrap();
    let (reloaded, step, seed) = harness::read_checkpoint(file.path()).unwrap();
    assert_eq!((step, seed), (6, 7));
    let resumed = integrators::run(reloaded, &model, &params, 6, step, &mut []).unwrap();
    let identical = resumed.rho1.data() == direct.rho1.data()
        && resumed.rho.data() == direct.rho.data()
        && resumed.vel.xs() == direct.vel.xs()
        && resumed.vel.ys() == direct.vel.ys();
    check(&mut checks, identical, "checkpoint restart bit-identical to direct run".into());

    let elapsed = started.elapsed().as_secs_f64();
    check(&mut checks, elapsed < 300.0, format!("synthetic suite ran in {elapsed:.0} s (< 300 s)"));
    summarize(8, "synthetic oracle suite", checks)
}

// ---------------------------------------------------------------------------
// Criterion 3 is assembled from the EOS tracking of the other runs.
// ---------------------------------------------------------------------------

fn criterion_3(eos_log: &[(String, EosTrack, f64)]) -> Criterion {
    let mut checks = Vec::new();
    for (label, eos, tol) in eos_log {
        check(
            &mut checks,
            eos.running <= 10.0 * tol && eos.post <= 1e-13,
            format!("{label}: post-step {:.1e} (<= {:.0e}), post-projection {:.1e}", eos.running, 10.0 * tol, eos.post),
        );
    }
    summarize(3, "equation-of-state preservation", checks)
}

#[test]
fn acceptance_criteria() {
    let mut eos_log: Vec<(String, EosTrack, f64)> = Vec::new();
    let mut results = Vec::new();
    results.push(criterion_8());
    results.push(criterion_5());
    results.push(criterion_2());
    results.push(criterion_4(&mut eos_log));
    results.push(criterion_1(&mut eos_log));
    results.push(criterion_6(&mut eos_log));
    results.push(criterion_7(&mut eos_log));
    results.push(criterion_3(&eos_log));
    results.sort_by_key(|c| c.id);
    let mut failed = Vec::new();
    for c in &results {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status} criterion {}: {} — {}", c.id, c.name, c.detail);
        if !c.passed {
            failed.push(format!("criterion {} ({}): {}", c.id, c.name, c.detail));
        }
    }
    assert!(failed.is_empty(), "failed acceptance criteria:\n{}", failed.join("\n"));
}
