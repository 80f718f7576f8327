//! Coupled velocity-pressure solver for steady and unsteady
//! variable-coefficient Stokes systems:
//!
//!   theta rho v - div(eta gradbar v) + grad pi = f,   div v = h,
//!
//! where gradbar v = grad v + (grad v)^T. The saddle system is solved by
//! right-preconditioned restarted GMRES; the preconditioner is a block
//! lower-triangular approximate factorization with geometric-multigrid
//! V-cycles on the velocity (Helmholtz) block and a viscosity-weighted
//! identity plus density-weighted Poisson approximation of the Schur
//! complement. Inhomogeneous boundary data is handled in
//! residual-correction form: the Krylov iteration always solves a
//! homogeneous-boundary problem for an increment over a reference state
//! that carries the boundary values.

use crate::error::{Error, Result};
use crate::grid::{BcKind, BcSpec, CellField, FaceField, Grid, NodeField, WallStencil};
use crate::ops::{self, WallTangential};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TolMode {
    #[default]
    Relative,
    Absolute,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub tol_mode: TolMode,
    pub restart: usize,
    pub max_iters: usize,
    pub mg_nu1: usize,
    pub mg_nu2: usize,
    pub mg_cycles_precond: usize,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            tol_mode: TolMode::Relative,
            restart: 30,
            max_iters: 100,
            mg_nu1: 2,
            mg_nu2: 2,
            mg_cycles_precond: 1,
            verbose: false,
        }
    }
}

/// One Stokes system. `time` is used to evaluate wall velocity data.
#[derive(Debug, Clone)]
pub struct StokesProblem {
    pub theta: f64,
    pub rho_face: FaceField,
    pub eta_cell: CellField,
    pub eta_node: NodeField,
    pub f: FaceField,
    pub h: CellField,
    pub bc: BcSpec,
    pub time: f64,
    /// Reference state (v, pi) carrying the boundary values; when absent a
    /// zero velocity with prescribed (zero) wall-normal faces is used.
    pub reference: Option<(FaceField, CellField)>,
}

#[derive(Debug, Clone)]
pub struct StokesSolution {
    pub v: FaceField,
    pub pi: CellField,
    pub iterations: usize,
    pub final_residual: f64,
    /// Absolute residual norm achieved, for reuse as a corrector-stage
    /// absolute tolerance.
    pub achieved_absolute: f64,
}

/// Momentum+divergence residual of the full (inhomogeneous-wall) operator.
/// Momentum entries on wall-normal boundary faces are reported as zero
/// (those velocities are prescribed, not solved for).
pub fn apply_stokes_operator(
    p: &StokesProblem,
    v: &FaceField,
    pi: &CellField,
) -> (FaceField, CellField) {
    let walls = WallTangential::from_bc(&v.grid, &p.bc, p.time);
    apply_operator_inner(p, v, pi, &walls)
}

fn apply_operator_inner(
    p: &StokesProblem,
    v: &FaceField,
    pi: &CellField,
    walls: &WallTangential,
) -> (FaceField, CellField) {
    let visc = ops::viscous_operator(v, &p.eta_cell, &p.eta_node, walls, p.bc.wall_stencil);
    let gp = ops::gradient(pi);
    let mut mom = FaceField::zeros(&v.grid);
    mom.for_each_x(|i, j, o| {
        if mom_is_boundary_x(&v.grid, i) {
            *o = 0.0;
        } else {
            let (ii, jj) = (i as isize, j as isize);
            *o = p.theta * p.rho_face.x(ii, jj) * v.x(ii, jj) - visc.x(ii, jj) + gp.x(ii, jj)
                - p.f.x(ii, jj);
        }
    });
    mom.for_each_y(|i, j, o| {
        if mom_is_boundary_y(&v.grid, j) {
            *o = 0.0;
        } else {
            let (ii, jj) = (i as isize, j as isize);
            *o = p.theta * p.rho_face.y(ii, jj) * v.y(ii, jj) - visc.y(ii, jj) + gp.y(ii, jj)
                - p.f.y(ii, jj);
        }
    });
    let mut divr = ops::divergence(v);
    divr.axpy(-1.0, &p.h);
    (mom, divr)
}

#[inline]
fn mom_is_boundary_x(g: &Grid, i: usize) -> bool {
    g.bc_x == BcKind::Wall && (i == 0 || i == g.nx)
}

#[inline]
fn mom_is_boundary_y(g: &Grid, j: usize) -> bool {
    g.bc_y == BcKind::Wall && (j == 0 || j == g.ny)
}

// ---------------------------------------------------------------------------
// Geometric multigrid: cell Poisson
// ---------------------------------------------------------------------------

fn can_coarsen(g: &Grid) -> bool {
    g.nx % 2 == 0 && g.ny % 2 == 0 && g.nx > 4 && g.ny > 4
}

fn coarse_grid(g: &Grid) -> Grid {
    Grid::new(g.nx / 2, g.ny / 2, g.dx * 2.0, g.dy * 2.0, g.dz_thickness, g.bc_x, g.bc_y)
}

/// Variable-coefficient cell Poisson hierarchy for div(beta grad p) = rhs
/// with homogeneous Neumann walls (zero boundary flux) / periodic wrap.
pub struct PoissonMg {
    levels: Vec<PoissonLevel>,
    nu1: usize,
    nu2: usize,
}

struct PoissonLevel {
    grid: Grid,
    beta: FaceField,
}

impl PoissonLevel {
    fn apply(&self, p: &CellField) -> CellField {
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        // Flux form: each face gradient computed once.
        let mut fx = vec![0.0; (nx + 1) * ny];
        for j in 0..ny {
            let jj = j as isize;
            for i in 0..=nx {
                let ii = i as isize;
                fx[j * (nx + 1) + i] = if mom_is_boundary_x(&g, i) {
                    0.0
                } else {
                    self.beta.x(ii, jj) * (p.at(ii, jj) - p.at(ii - 1, jj))
                };
            }
        }
        let mut fy = vec![0.0; nx * (ny + 1)];
        for j in 0..=ny {
            let jj = j as isize;
            for i in 0..nx {
                let ii = i as isize;
                fy[j * nx + i] = if mom_is_boundary_y(&g, j) {
                    0.0
                } else {
                    self.beta.y(ii, jj) * (p.at(ii, jj) - p.at(ii, jj - 1))
                };
            }
        }
        let (dx2, dy2) = (g.dx * g.dx, g.dy * g.dy);
        let mut out = CellField::zeros(&g);
        let data = out.data_mut();
        for j in 0..ny {
            for i in 0..nx {
                data[j * nx + i] = (fx[j * (nx + 1) + i + 1] - fx[j * (nx + 1) + i]) / dx2
                    + (fy[(j + 1) * nx + i] - fy[j * nx + i]) / dy2;
            }
        }
        out
    }

    /// Red-black Gauss-Seidel sweeps.
    fn smooth(&self, p: &mut CellField, rhs: &CellField, sweeps: usize) {
        let g = self.grid;
        let (dx2, dy2) = (g.dx * g.dx, g.dy * g.dy);
        for _ in 0..sweeps {
            for color in 0..2 {
                for j in 0..g.ny {
                    for i in ((color + j) % 2..g.nx).step_by(2) {
                        let (ii, jj) = (i as isize, j as isize);
                        let be = if mom_is_boundary_x(&g, i + 1) { 0.0 } else { self.beta.x(ii + 1, jj) };
                        let bw = if mom_is_boundary_x(&g, i) { 0.0 } else { self.beta.x(ii, jj) };
                        let bn = if mom_is_boundary_y(&g, j + 1) { 0.0 } else { self.beta.y(ii, jj + 1) };
                        let bs = if mom_is_boundary_y(&g, j) { 0.0 } else { self.beta.y(ii, jj) };
                        let diag = -(be + bw) / dx2 - (bn + bs) / dy2;
                        if diag == 0.0 {
                            continue;
                        }
                        let term = |b: f64, pi: isize, pj: isize, h2: f64| {
                            if b == 0.0 { 0.0 } else { b * p.at(pi, pj) / h2 }
                        };
                        let off = term(be, ii + 1, jj, dx2)
                            + term(bw, ii - 1, jj, dx2)
                            + term(bn, ii, jj + 1, dy2)
                            + term(bs, ii, jj - 1, dy2);
                        p[(i, j)] = (rhs[(i, j)] - off) / diag;
                    }
                }
            }
        }
    }
}

fn restrict_cell(fine: &CellField, gc: &Grid) -> CellField {
    let mut out = CellField::zeros(gc);
    for j in 0..gc.ny {
        for i in 0..gc.nx {
            out[(i, j)] = 0.25
                * (fine[(2 * i, 2 * j)]
                    + fine[(2 * i + 1, 2 * j)]
                    + fine[(2 * i, 2 * j + 1)]
                    + fine[(2 * i + 1, 2 * j + 1)]);
        }
    }
    out
}

/// Bilinear prolongation of a coarse cell correction to the fine grid.
fn prolong_cell(coarse: &CellField, gf: &Grid) -> CellField {
    let gc = coarse.grid;
    let mut out = CellField::zeros(gf);
    let sample = |i: isize, j: isize| -> f64 {
        let ci = match gc.bc_x {
            BcKind::Periodic => i.rem_euclid(gc.nx as isize),
            BcKind::Wall => i.clamp(0, gc.nx as isize - 1),
        };
        let cj = match gc.bc_y {
            BcKind::Periodic => j.rem_euclid(gc.ny as isize),
            BcKind::Wall => j.clamp(0, gc.ny as isize - 1),
        };
        coarse.at(ci, cj)
    };
    for j in 0..gf.ny {
        for i in 0..gf.nx {
            let ci = (i / 2) as isize;
            let cj = (j / 2) as isize;
            let sx: isize = if i % 2 == 0 { -1 } else { 1 };
            let sy: isize = if j % 2 == 0 { -1 } else { 1 };
            out[(i, j)] = (9.0 * sample(ci, cj)
                + 3.0 * sample(ci + sx, cj)
                + 3.0 * sample(ci, cj + sy)
                + sample(ci + sx, cj + sy))
                / 16.0;
        }
    }
    out
}

fn restrict_beta(fine: &FaceField, gc: &Grid) -> FaceField {
    let mut out = FaceField::zeros(gc);
    out.for_each_x(|i, j, v| {
        let fi = (2 * i) as isize;
        *v = 0.5 * (fine.x(fi, (2 * j) as isize) + fine.x(fi, (2 * j + 1) as isize));
    });
    out.for_each_y(|i, j, v| {
        let fj = (2 * j) as isize;
        *v = 0.5 * (fine.y((2 * i) as isize, fj) + fine.y((2 * i + 1) as isize, fj));
    });
    out
}

impl PoissonMg {
    pub fn new(beta: &FaceField, nu1: usize, nu2: usize) -> Self {
        let mut levels = vec![PoissonLevel { grid: beta.grid, beta: beta.clone() }];
        while can_coarsen(&levels.last().unwrap().grid) {
            let gc = coarse_grid(&levels.last().unwrap().grid);
            let bc = restrict_beta(&levels.last().unwrap().beta, &gc);
            levels.push(PoissonLevel { grid: gc, beta: bc });
        }
        PoissonMg { levels, nu1, nu2 }
    }

    fn vcycle_level(&self, lvl: usize, p: &mut CellField, rhs: &CellField) {
        let level = &self.levels[lvl];
        if lvl + 1 == self.levels.len() {
            level.smooth(p, rhs, 30);
            return;
        }
        level.smooth(p, rhs, self.nu1);
        let mut res = level.apply(p);
        res.scale(-1.0);
        res.axpy(1.0, rhs);
        let gc = self.levels[lvl + 1].grid;
        let coarse_rhs = restrict_cell(&res, &gc);
        let mut coarse_p = CellField::zeros(&gc);
        self.vcycle_level(lvl + 1, &mut coarse_p, &coarse_rhs);
        let corr = prolong_cell(&coarse_p, &level.grid);
        p.axpy(1.0, &corr);
        level.smooth(p, rhs, self.nu2);
    }

    /// Run `cycles` V-cycles from a zero initial guess; the result is
    /// mean-zero (the all-Neumann/periodic gauge).
    pub fn solve(&self, rhs: &CellField, cycles: usize) -> CellField {
        let mut p = CellField::zeros(&rhs.grid);
        for _ in 0..cycles {
            self.vcycle_level(0, &mut p, rhs);
        }
        p.subtract_mean();
        p
    }

    pub fn residual(&self, p: &CellField, rhs: &CellField) -> CellField {
        let mut r = self.levels[0].apply(p);
        r.scale(-1.0);
        r.axpy(1.0, rhs);
        r
    }
}

/// Approximate solution of div(beta grad p) = rhs.
pub fn multigrid_poisson(beta: &FaceField, rhs: &CellField, cycles: usize) -> CellField {
    PoissonMg::new(beta, 2, 2).solve(rhs, cycles)
}

// ---------------------------------------------------------------------------
// Geometric multigrid: face Helmholtz (theta rho - div eta gradbar)
// ---------------------------------------------------------------------------

pub struct HelmholtzMg {
    levels: Vec<HelmholtzLevel>,
    nu1: usize,
    nu2: usize,
    stencil: WallStencil,
}

struct HelmholtzLevel {
    grid: Grid,
    theta_rho: FaceField,
    eta_cell: CellField,
    eta_node: NodeField,
    /// Jacobi diagonal of the operator for each face unknown.
    diag: FaceField,
}

impl HelmholtzLevel {
    fn new(grid: Grid, theta_rho: FaceField, eta_cell: CellField, eta_node: NodeField, stencil: WallStencil) -> Self {
        let g = grid;
        let mut diag = FaceField::zeros(&g);
        let (dx2, dy2) = (g.dx * g.dx, g.dy * g.dy);
        // Coefficient of u(i,j) in the one-sided wall tangential gradient
        // times the node-to-face divergence weight.
        let wall_coef = match stencil {
            WallStencil::Linear => 2.0,
            WallStencil::HigherOrder => 3.0,
        };
        diag.for_each_x(|i, j, d| {
            if mom_is_boundary_x(&g, i) {
                *d = 1.0;
                return;
            }
            let (ii, jj) = (i as isize, j as isize);
            let cells = 2.0 * (eta_cell.at(ii, jj) + eta_cell.at(ii - 1, jj)) / dx2;
            let cn = if mom_is_boundary_y(&g, j + 1) { wall_coef } else { 1.0 };
            let cs = if mom_is_boundary_y(&g, j) { wall_coef } else { 1.0 };
            let nodes = (cn * eta_node.at(ii, jj + 1) + cs * eta_node.at(ii, jj)) / dy2;
            *d = theta_rho.x(ii, jj) + cells + nodes;
        });
        diag.for_each_y(|i, j, d| {
            if mom_is_boundary_y(&g, j) {
                *d = 1.0;
                return;
            }
            let (ii, jj) = (i as isize, j as isize);
            let cells = 2.0 * (eta_cell.at(ii, jj) + eta_cell.at(ii, jj - 1)) / dy2;
            let ce = if mom_is_boundary_x(&g, i + 1) { wall_coef } else { 1.0 };
            let cw = if mom_is_boundary_x(&g, i) { wall_coef } else { 1.0 };
            let nodes = (ce * eta_node.at(ii + 1, jj) + cw * eta_node.at(ii, jj)) / dx2;
            *d = theta_rho.y(ii, jj) + cells + nodes;
        });
        HelmholtzLevel { grid, theta_rho, eta_cell, eta_node, diag }
    }

    /// Block-diagonal (componentwise) part of the velocity operator:
    /// theta rho u - d/dx(2 eta du/dx) - d/dy(eta du/dy) and likewise for
    /// the second component. The cross-component coupling of the symmetric
    /// gradient is dropped; the result stays within a factor of two of the
    /// full operator spectrally, which is all the preconditioner needs,
    /// and point smoothers plus standard transfers are provably sound for
    /// this anisotropic scalar form.
    fn apply(&self, v: &FaceField, stencil: WallStencil) -> FaceField {
        let g = self.grid;
        let wall_y = g.bc_y == BcKind::Wall;
        let wall_x = g.bc_x == BcKind::Wall;
        let (nx, ny) = (g.nx, g.ny);
        let mut out = FaceField::zeros(&g);

        // x-component: compute each flux once, then difference.
        // txx over cells, tau = eta_n du/dy over node rows 0..=ny.
        let mut txx = vec![0.0; nx * ny];
        for j in 0..ny {
            let jj = j as isize;
            for i in 0..nx {
                let ii = i as isize;
                txx[j * nx + i] =
                    2.0 * self.eta_cell.at(ii, jj) * (v.x(ii + 1, jj) - v.x(ii, jj)) / g.dx;
            }
        }
        let nxu = g.nxu();
        let mut tau = vec![0.0; nxu * (ny + 1)];
        for j in 0..=ny {
            let jn = j as isize;
            for i in 0..nxu {
                let ii = i as isize;
                let grad = if wall_y && j == 0 {
                    match stencil {
                        WallStencil::Linear => 2.0 * v.x(ii, 0) / g.dy,
                        WallStencil::HigherOrder => (3.0 * v.x(ii, 0) - v.x(ii, 1) / 3.0) / g.dy,
                    }
                } else if wall_y && j == ny {
                    let jt = ny as isize - 1;
                    match stencil {
                        WallStencil::Linear => -2.0 * v.x(ii, jt) / g.dy,
                        WallStencil::HigherOrder => {
                            -(3.0 * v.x(ii, jt) - v.x(ii, jt - 1) / 3.0) / g.dy
                        }
                    }
                } else {
                    (v.x(ii, jn) - v.x(ii, jn - 1)) / g.dy
                };
                tau[j * nxu + i] = self.eta_node.at(ii, jn) * grad;
            }
        }
        out.for_each_x(|i, j, o| {
            if mom_is_boundary_x(&g, i) {
                *o = 0.0;
                return;
            }
            let im1 = if i == 0 { nx - 1 } else { i - 1 };
            *o = self.theta_rho.x(i as isize, j as isize) * v.x(i as isize, j as isize)
                - (txx[j * nx + i] - txx[j * nx + im1]) / g.dx
                - (tau[(j + 1) * nxu + i] - tau[j * nxu + i]) / g.dy;
        });

        // y-component mirrors the x-component with axes swapped.
        let mut tyy = vec![0.0; nx * ny];
        for j in 0..ny {
            let jj = j as isize;
            for i in 0..nx {
                let ii = i as isize;
                tyy[j * nx + i] =
                    2.0 * self.eta_cell.at(ii, jj) * (v.y(ii, jj + 1) - v.y(ii, jj)) / g.dy;
            }
        }
        let nyv = g.nyv();
        let mut tau2 = vec![0.0; (nx + 1) * nyv];
        for j in 0..nyv {
            let jj = j as isize;
            for i in 0..=nx {
                let inx = i as isize;
                let grad = if wall_x && i == 0 {
                    match stencil {
                        WallStencil::Linear => 2.0 * v.y(0, jj) / g.dx,
                        WallStencil::HigherOrder => (3.0 * v.y(0, jj) - v.y(1, jj) / 3.0) / g.dx,
                    }
                } else if wall_x && i == nx {
                    let it = nx as isize - 1;
                    match stencil {
                        WallStencil::Linear => -2.0 * v.y(it, jj) / g.dx,
                        WallStencil::HigherOrder => {
                            -(3.0 * v.y(it, jj) - v.y(it - 1, jj) / 3.0) / g.dx
                        }
                    }
                } else {
                    (v.y(inx, jj) - v.y(inx - 1, jj)) / g.dx
                };
                tau2[j * (nx + 1) + i] = self.eta_node.at(inx, jj) * grad;
            }
        }
        out.for_each_y(|i, j, o| {
            if mom_is_boundary_y(&g, j) {
                *o = 0.0;
                return;
            }
            let jm1 = if j == 0 { ny - 1 } else { j - 1 };
            *o = self.theta_rho.y(i as isize, j as isize) * v.y(i as isize, j as isize)
                - (tyy[j * nx + i] - tyy[jm1 * nx + i]) / g.dy
                - (tau2[j * (nx + 1) + i + 1] - tau2[j * (nx + 1) + i]) / g.dx;
        });
        out
    }

    fn smooth(&self, v: &mut FaceField, rhs: &FaceField, sweeps: usize, stencil: WallStencil) {
        let omega = 0.8;
        for _ in 0..sweeps {
            let av = self.apply(v, stencil);
            let g = self.grid;
            v.for_each_x(|i, j, val| {
                if mom_is_boundary_x(&g, i) {
                    *val = 0.0;
                    return;
                }
                let (ii, jj) = (i as isize, j as isize);
                *val += omega * (rhs.x(ii, jj) - av.x(ii, jj)) / self.diag.x(ii, jj);
            });
            v.for_each_y(|i, j, val| {
                if mom_is_boundary_y(&g, j) {
                    *val = 0.0;
                    return;
                }
                let (ii, jj) = (i as isize, j as isize);
                *val += omega * (rhs.y(ii, jj) - av.y(ii, jj)) / self.diag.y(ii, jj);
            });
        }
    }
}

/// Full-weighting restriction of a face residual: (1/4, 1/2, 1/4) across
/// the normal direction and an average over the two transverse fine faces.
fn restrict_face(fine: &FaceField, gc: &Grid) -> FaceField {
    let gf = fine.grid;
    let mut out = FaceField::zeros(gc);
    out.for_each_x(|i, j, v| {
        if mom_is_boundary_x(gc, i) {
            *v = 0.0;
            return;
        }
        let fi = (2 * i) as isize;
        let mut acc = 0.0;
        for fj in [(2 * j) as isize, (2 * j + 1) as isize] {
            let left = if mom_is_boundary_x(&gf, (fi - 1).max(0) as usize) { fine.x(fi, fj) } else { fine.x(fi - 1, fj) };
            let right = if mom_is_boundary_x(&gf, (fi + 1) as usize) { fine.x(fi, fj) } else { fine.x(fi + 1, fj) };
            acc += 0.25 * left + 0.5 * fine.x(fi, fj) + 0.25 * right;
        }
        *v = 0.5 * acc;
    });
    out.for_each_y(|i, j, v| {
        if mom_is_boundary_y(gc, j) {
            *v = 0.0;
            return;
        }
        let fj = (2 * j) as isize;
        let mut acc = 0.0;
        for fi in [(2 * i) as isize, (2 * i + 1) as isize] {
            let lo = if mom_is_boundary_y(&gf, (fj - 1).max(0) as usize) { fine.y(fi, fj) } else { fine.y(fi, fj - 1) };
            let hi = if mom_is_boundary_y(&gf, (fj + 1) as usize) { fine.y(fi, fj) } else { fine.y(fi, fj + 1) };
            acc += 0.25 * lo + 0.5 * fine.y(fi, fj) + 0.25 * hi;
        }
        *v = 0.5 * acc;
    });
    out
}

/// Prolong a coarse face correction: coincident fine faces copy, the
/// mid-cell fine faces average the two bracketing coarse faces; constant
/// in the transverse direction.
fn prolong_face(coarse: &FaceField, gf: &Grid) -> FaceField {
    let mut out = FaceField::zeros(gf);
    out.for_each_x(|i, j, v| {
        if mom_is_boundary_x(gf, i) {
            *v = 0.0;
            return;
        }
        let cj = (j / 2) as isize;
        *v = if i % 2 == 0 {
            coarse.x((i / 2) as isize, cj)
        } else {
            let ci = (i / 2) as isize;
            0.5 * (coarse.x(ci, cj) + coarse.x(ci + 1, cj))
        };
    });
    out.for_each_y(|i, j, v| {
        if mom_is_boundary_y(gf, j) {
            *v = 0.0;
            return;
        }
        let ci = (i / 2) as isize;
        *v = if j % 2 == 0 {
            coarse.y(ci, (j / 2) as isize)
        } else {
            let cj = (j / 2) as isize;
            0.5 * (coarse.y(ci, cj) + coarse.y(ci, cj + 1))
        };
    });
    out
}

fn restrict_node(fine: &NodeField, gc: &Grid) -> NodeField {
    let mut out = NodeField::zeros(gc);
    for j in 0..gc.ny_node() {
        for i in 0..gc.nx_node() {
            out.set(i, j, fine.at((2 * i) as isize, (2 * j) as isize));
        }
    }
    out
}

impl HelmholtzMg {
    pub fn new(
        theta_rho: &FaceField,
        eta_cell: &CellField,
        eta_node: &NodeField,
        stencil: WallStencil,
        nu1: usize,
        nu2: usize,
    ) -> Self {
        let mut levels = vec![HelmholtzLevel::new(
            theta_rho.grid,
            theta_rho.clone(),
            eta_cell.clone(),
            eta_node.clone(),
            stencil,
        )];
        while can_coarsen(&levels.last().unwrap().grid) {
            let last = levels.last().unwrap();
            let gc = coarse_grid(&last.grid);
            let tr = restrict_face(&last.theta_rho, &gc);
            let ec = restrict_cell(&last.eta_cell, &gc);
            let en = restrict_node(&last.eta_node, &gc);
            levels.push(HelmholtzLevel::new(gc, tr, ec, en, stencil));
        }
        HelmholtzMg { levels, nu1, nu2, stencil }
    }

    fn vcycle_level(&self, lvl: usize, v: &mut FaceField, rhs: &FaceField) {
        let level = &self.levels[lvl];
        if lvl + 1 == self.levels.len() {
            level.smooth(v, rhs, 40, self.stencil);
            return;
        }
        level.smooth(v, rhs, self.nu1, self.stencil);
        let mut res = level.apply(v, self.stencil);
        res.scale(-1.0);
        res.axpy(1.0, rhs);
        let gc = self.levels[lvl + 1].grid;
        let coarse_rhs = restrict_face(&res, &gc);
        let mut coarse_v = FaceField::zeros(&gc);
        self.vcycle_level(lvl + 1, &mut coarse_v, &coarse_rhs);
        let corr = prolong_face(&coarse_v, &level.grid);
        v.axpy(1.0, &corr);
        level.smooth(v, rhs, self.nu2, self.stencil);
    }

    pub fn solve(&self, rhs: &FaceField, cycles: usize) -> FaceField {
        let mut v = FaceField::zeros(&rhs.grid);
        for _ in 0..cycles {
            self.vcycle_level(0, &mut v, rhs);
        }
        v
    }

    pub fn apply_operator(&self, v: &FaceField) -> FaceField {
        self.levels[0].apply(v, self.stencil)
    }
}

/// Approximate componentwise solve of the velocity block (see
/// [`HelmholtzLevel::apply`]) with homogeneous wall data; used as the
/// velocity part of the saddle-point preconditioner.
pub fn multigrid_helmholtz(
    theta_rho: &FaceField,
    eta_cell: &CellField,
    eta_node: &NodeField,
    rhs: &FaceField,
    cycles: usize,
    stencil: WallStencil,
) -> FaceField {
    HelmholtzMg::new(theta_rho, eta_cell, eta_node, stencil, 2, 2).solve(rhs, cycles)
}

// ---------------------------------------------------------------------------
// Packed vectors for GMRES
// ---------------------------------------------------------------------------

struct Packing {
    grid: Grid,
    n_vx: usize,
    n_vy: usize,
    n_p: usize,
}

impl Packing {
    fn new(g: &Grid) -> Self {
        let n_vx = match g.bc_x {
            BcKind::Periodic => g.nx * g.ny,
            BcKind::Wall => (g.nx - 1) * g.ny,
        };
        let n_vy = match g.bc_y {
            BcKind::Periodic => g.nx * g.ny,
            BcKind::Wall => g.nx * (g.ny - 1),
        };
        Packing { grid: *g, n_vx, n_vy, n_p: g.nx * g.ny }
    }

    fn len(&self) -> usize {
        self.n_vx + self.n_vy + self.n_p
    }

    fn pack(&self, v: &FaceField, p: &CellField, out: &mut [f64]) {
        let g = self.grid;
        let mut k = 0;
        for j in 0..g.ny {
            for i in 0..g.nxu() {
                if mom_is_boundary_x(&g, i) {
                    continue;
                }
                out[k] = v.x(i as isize, j as isize);
                k += 1;
            }
        }
        for j in 0..g.nyv() {
            if mom_is_boundary_y(&g, j) {
                continue;
            }
            for i in 0..g.nx {
                out[k] = v.y(i as isize, j as isize);
                k += 1;
            }
        }
        out[k..k + self.n_p].copy_from_slice(p.data());
    }

    fn unpack(&self, x: &[f64]) -> (FaceField, CellField) {
        let g = self.grid;
        let mut v = FaceField::zeros(&g);
        let mut k = 0;
        for j in 0..g.ny {
            for i in 0..g.nxu() {
                if mom_is_boundary_x(&g, i) {
                    continue;
                }
                v.set_x(i, j, x[k]);
                k += 1;
            }
        }
        for j in 0..g.nyv() {
            if mom_is_boundary_y(&g, j) {
                continue;
            }
            for i in 0..g.nx {
                v.set_y(i, j, x[k]);
                k += 1;
            }
        }
        let mut p = CellField::zeros(&g);
        p.data_mut().copy_from_slice(&x[k..k + self.n_p]);
        (v, p)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

// ---------------------------------------------------------------------------
// The coupled solve
// ---------------------------------------------------------------------------

pub fn solve_stokes(p: &StokesProblem, opts: &SolverOptions) -> Result<StokesSolution> {
    let g = p.rho_face.grid;
    // Compatibility: the divergence data must integrate to the prescribed
    // net boundary inflow, which is zero for impenetrable walls/periodic.
    let h_mean = p.h.mean();
    let h_scale = p.h.max_abs();
    if h_mean.abs() > 1e-9 * h_scale + 1e-300 {
        return Err(Error::Incompatible(format!(
            "divergence data has nonzero mean {h_mean:.3e} (scale {h_scale:.3e})"
        )));
    }

    // Reference state carrying the boundary values.
    let (vbar, pibar) = match &p.reference {
        Some((v, pi)) => (v.clone(), pi.clone()),
        None => (FaceField::zeros(&g), CellField::zeros(&g)),
    };
    let walls = WallTangential::from_bc(&g, &p.bc, p.time);
    let (mom_ref, div_ref) = apply_operator_inner(p, &vbar, &pibar, &walls);
    // Homogeneous-boundary increment system: A dx = -residual(reference).
    let packing = Packing::new(&g);
    let n = packing.len();
    let mut b = vec![0.0; n];
    {
        let mut mres = mom_ref;
        mres.scale(-1.0);
        let mut dres = div_ref;
        dres.scale(-1.0);
        packing.pack(&mres, &dres, &mut b);
    }

    let b_norm = norm(&b);
    let target = match opts.tol_mode {
        TolMode::Relative => opts.tol * b_norm.max(1e-300),
        TolMode::Absolute => opts.tol,
    };
    if b_norm <= target || b_norm == 0.0 {
        // The reference already satisfies the system.
        return Ok(StokesSolution {
            v: vbar,
            pi: pibar,
            iterations: 0,
            final_residual: b_norm,
            achieved_absolute: b_norm,
        });
    }

    // Preconditioner pieces.
    let mut theta_rho = p.rho_face.clone();
    theta_rho.scale(p.theta);
    let helm = HelmholtzMg::new(&theta_rho, &p.eta_cell, &p.eta_node, p.bc.wall_stencil, opts.mg_nu1, opts.mg_nu2);
    let poisson = if p.theta > 0.0 {
        let mut beta = FaceField::zeros(&g);
        beta.for_each_x(|i, j, v| {
            *v = if mom_is_boundary_x(&g, i) { 0.0 } else { 1.0 / p.rho_face.x(i as isize, j as isize) };
        });
        beta.for_each_y(|i, j, v| {
            *v = if mom_is_boundary_y(&g, j) { 0.0 } else { 1.0 / p.rho_face.y(i as isize, j as isize) };
        });
        Some(PoissonMg::new(&beta, opts.mg_nu1, opts.mg_nu2))
    } else {
        None
    };
    let hom_walls = WallTangential::homogeneous(&g);

    let apply_a = |x: &[f64]| -> Vec<f64> {
        let (v, pi) = packing.unpack(x);
        let visc = ops::viscous_operator(&v, &p.eta_cell, &p.eta_node, &hom_walls, p.bc.wall_stencil);
        let gp = ops::gradient(&pi);
        let mut mom = FaceField::zeros(&g);
        mom.for_each_x(|i, j, o| {
            if !mom_is_boundary_x(&g, i) {
                let (ii, jj) = (i as isize, j as isize);
                *o = p.theta * p.rho_face.x(ii, jj) * v.x(ii, jj) - visc.x(ii, jj) + gp.x(ii, jj);
            }
        });
        mom.for_each_y(|i, j, o| {
            if !mom_is_boundary_y(&g, j) {
                let (ii, jj) = (i as isize, j as isize);
                *o = p.theta * p.rho_face.y(ii, jj) * v.y(ii, jj) - visc.y(ii, jj) + gp.y(ii, jj);
            }
        });
        let dv = ops::divergence(&v);
        let mut out = vec![0.0; n];
        packing.pack(&mom, &dv, &mut out);
        out
    };

    let apply_m = |r: &[f64]| -> Vec<f64> {
        let (rv, rp) = packing.unpack(r);
        // Velocity block: multigrid V-cycle(s).
        let vhat = helm.solve(&rv, opts.mg_cycles_precond);
        // Schur block on the updated pressure residual.
        let mut psi = ops::divergence(&vhat);
        psi.scale(-1.0);
        psi.axpy(1.0, &rp);
        // Schur inverse approximation: S = -D A^{-1} G acts like
        // k^2/(theta rho + 2 eta k^2) on Fourier modes (the symmetric
        // gradient doubles the viscosity seen by gradient modes), so
        // S^{-1} ~= 2 eta I - theta L_{1/rho}^{-1}.
        let mut phat = psi.zip_with(&p.eta_cell, |s, e| 2.0 * e * s);
        if let Some(mg) = &poisson {
            let mut psi0 = psi.clone();
            psi0.subtract_mean();
            let q = mg.solve(&psi0, opts.mg_cycles_precond);
            phat.axpy(-p.theta, &q);
        }
        phat.subtract_mean();
        let mut out = vec![0.0; n];
        packing.pack(&vhat, &phat, &mut out);
        out
    };

    // Right-preconditioned restarted GMRES with modified Gram-Schmidt.
    let mut x = vec![0.0; n];
    let mut total_iters = 0usize;
    let mut res_norm;
    'outer: while total_iters < opts.max_iters {
        // r = b - A x
        let ax = apply_a(&x);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        res_norm = norm(&r);
        if res_norm <= target {
            break;
        }
        let m = opts.restart.min(opts.max_iters - total_iters);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        let mut hess = vec![vec![0.0f64; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut gvec = vec![0.0f64; m + 1];
        gvec[0] = res_norm;
        for ri in r.iter_mut() {
            *ri /= res_norm;
        }
        basis.push(r);
        let mut k_used = 0;
        for k in 0..m {
            total_iters += 1;
            let z = apply_m(&basis[k]);
            let mut w = apply_a(&z);
            for i in 0..=k {
                let hik = dot(&w, &basis[i]);
                hess[i][k] = hik;
                for (wj, bj) in w.iter_mut().zip(&basis[i]) {
                    *wj -= hik * bj;
                }
            }
            let wn = norm(&w);
            hess[k + 1][k] = wn;
            // Givens rotations to maintain the QR of H.
            for i in 0..k {
                let t = cs[i] * hess[i][k] + sn[i] * hess[i + 1][k];
                hess[i + 1][k] = -sn[i] * hess[i][k] + cs[i] * hess[i + 1][k];
                hess[i][k] = t;
            }
            let denom = (hess[k][k] * hess[k][k] + wn * wn).sqrt();
            if denom == 0.0 {
                k_used = k + 1;
                break;
            }
            cs[k] = hess[k][k] / denom;
            sn[k] = wn / denom;
            hess[k][k] = denom;
            gvec[k + 1] = -sn[k] * gvec[k];
            gvec[k] *= cs[k];
            res_norm = gvec[k + 1].abs();
            k_used = k + 1;
            if opts.verbose {
                eprintln!("gmres iter {total_iters}: residual {res_norm:.3e}");
            }
            if res_norm <= target || wn == 0.0 {
                break;
            }
            for wj in w.iter_mut() {
                *wj /= wn;
            }
            basis.push(w);
        }
        // Solve the triangular system and update x += M^{-1} V y.
        let mut y = vec![0.0f64; k_used];
        for i in (0..k_used).rev() {
            let mut s = gvec[i];
            for jj in i + 1..k_used {
                s -= hess[i][jj] * y[jj];
            }
            y[i] = s / hess[i][i];
        }
        let mut update = vec![0.0f64; n];
        for (i, yi) in y.iter().enumerate() {
            for (uj, bj) in update.iter_mut().zip(&basis[i]) {
                *uj += yi * bj;
            }
        }
        let z = apply_m(&update);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
        if res_norm <= target {
            break 'outer;
        }
    }

    // True residual, recomputed from the operator (never trusted from the
    // Givens recurrence).
    let ax = apply_a(&x);
    let true_res = norm(&b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect::<Vec<_>>());
    if true_res > target * 1.05 {
        return Err(Error::SolverDiverged {
            context: format!("stokes gmres (target {target:.3e})"),
            residual: true_res,
            iterations: total_iters,
        });
    }

    let (dv, dpi) = packing.unpack(&x);
    let mut v = vbar;
    v.axpy(1.0, &dv);
    let mut pi = pibar;
    pi.axpy(1.0, &dpi);
    pi.subtract_mean();
    Ok(StokesSolution {
        v,
        pi,
        iterations: total_iters,
        final_residual: true_res,
        achieved_absolute: true_res,
    })
}
