//! Advective flux construction.
//!
//! Two families are provided: centered (skew-adjoint, energy-conserving,
//! the right choice when fluctuations must satisfy discrete
//! fluctuation-dissipation balance) and an unsplit characteristic-traced
//! scheme with bilinear or biquadratic reconstruction (the right choice
//! for sharp fronts at cell Peclet numbers above ~2). Momentum advection
//! is always centered.

use crate::error::{Error, Result};
use crate::grid::{BcKind, CellField, FaceField};
use crate::mixture::MixtureModel;
use crate::ops::{self, Padded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reconstruction {
    #[default]
    Bilinear,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BdsOptions {
    pub reconstruction: Reconstruction,
    pub limited: bool,
    /// Project traced face values of the density pair onto the equation of
    /// state before forming fluxes.
    pub eos_face_projection: bool,
}

impl Default for BdsOptions {
    fn default() -> Self {
        BdsOptions { reconstruction: Reconstruction::Bilinear, limited: true, eos_face_projection: true }
    }
}

/// Which advection scheme a scenario uses for the scalars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdvectionScheme {
    #[default]
    Centered,
    BdsBilinear,
    BdsQuadratic,
}

/// Face flux (avg of phi) * v with two-point arithmetic averaging. Linear
/// in phi, so equation-of-state-consistent inputs stay consistent.
pub fn centered_scalar_flux(phi: &CellField, v: &FaceField) -> FaceField {
    let g = phi.grid;
    let mut out = FaceField::zeros(&g);
    out.for_each_x(|i, j, f| {
        let (ii, jj) = (i as isize, j as isize);
        let avg = if g.bc_x == BcKind::Wall && (i == 0 || i == g.nx) {
            phi.at(ii.clamp(0, g.nx as isize - 1).min(ii - (i == g.nx) as isize), jj)
        } else {
            0.5 * (phi.at(ii - 1, jj) + phi.at(ii, jj))
        };
        *f = avg * v.x(ii, jj);
    });
    out.for_each_y(|i, j, f| {
        let (ii, jj) = (i as isize, j as isize);
        let avg = if g.bc_y == BcKind::Wall && (j == 0 || j == g.ny) {
            phi.at(ii, jj.clamp(0, g.ny as isize - 1).min(jj - (j == g.ny) as isize))
        } else {
            0.5 * (phi.at(ii, jj - 1) + phi.at(ii, jj))
        };
        *f = avg * v.y(ii, jj);
    });
    out
}

/// Orthogonal projection of a traced (rho1, rho2) face pair onto the
/// constraint line rho1/r1 + rho2/r2 = 1.
pub fn project_face_pair_to_eos(model: &MixtureModel, rho1: f64, rho2: f64) -> (f64, f64) {
    model.project_pair(rho1, rho2)
}

/// Per-cell reconstruction coefficients about the cell center:
/// p(x, y) = c0 + cx x + cy y + cxx x^2 + cyy y^2 + cxy x y.
/// Bilinear reconstructions have cxx = cyy = 0.
#[derive(Debug, Clone, Copy, Default)]
struct Poly {
    c0: f64,
    cx: f64,
    cy: f64,
    cxx: f64,
    cyy: f64,
    cxy: f64,
}

impl Poly {
    #[inline]
    fn eval(&self, x: f64, y: f64) -> f64 {
        self.c0 + self.cx * x + self.cy * y + self.cxx * x * x + self.cyy * y * y + self.cxy * x * y
    }

    /// Average over the triangle (p1, p2, p3) by the edge-midpoint rule,
    /// exact for quadratics.
    fn triangle_average(&self, p1: (f64, f64), p2: (f64, f64), p3: (f64, f64)) -> f64 {
        let m = |a: (f64, f64), b: (f64, f64)| ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
        let (a, b, c) = (m(p1, p2), m(p2, p3), m(p1, p3));
        (self.eval(a.0, a.1) + self.eval(b.0, b.1) + self.eval(c.0, c.1)) / 3.0
    }
}

/// Four-point interpolation weights for corner values.
const CW: [f64; 4] = [-1.0 / 12.0, 7.0 / 12.0, 7.0 / 12.0, -1.0 / 12.0];

/// Corner value of phi at node (i-1/2, j-1/2) from the 4x4 cell block.
fn corner_value(p: &Padded, i: isize, j: isize) -> f64 {
    let mut acc = 0.0;
    for (bi, wy) in CW.iter().enumerate() {
        let jj = j + bi as isize - 2;
        let mut row = 0.0;
        for (ai, wx) in CW.iter().enumerate() {
            row += wx * p.at(i + ai as isize - 2, jj);
        }
        acc += wy * row;
    }
    acc
}

/// Limit the four corner values of one cell: clamp each to the range of
/// the four cells sharing it, then redistribute so the corner mean matches
/// the cell average (which pins the bilinear surface's corner values to
/// the clamped ones).
fn limit_corners(p: &Padded, i: isize, j: isize, s: f64, corners: &mut [f64; 4]) {
    // corners order: LB, RB, LT, RT at offsets (di, dj) in {0,1}^2 meaning
    // node (i+di-1/2, j+dj-1/2).
    let offs = [(0, 0), (1, 0), (0, 1), (1, 1)];
    for (k, &(di, dj)) in offs.iter().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for a in -1..=0 {
            for b in -1..=0 {
                let v = p.at(i + di + a, j + dj + b);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        corners[k] = corners[k].clamp(lo, hi);
    }
    let eps = 1e-12 * (1.0 + s.abs());
    for _ in 0..3 {
        let mean = 0.25 * corners.iter().sum::<f64>();
        let excess = (mean - s) * 4.0;
        if excess.abs() <= eps {
            break;
        }
        let sgn = excess.signum();
        let offending: Vec<usize> =
            (0..4).filter(|&k| (corners[k] - s) * sgn > eps).collect();
        if offending.is_empty() {
            break;
        }
        let share = excess / offending.len() as f64;
        for &k in &offending {
            // Never move a corner past the cell average.
            let cap = corners[k] - s;
            let delta = if share.abs() <= cap.abs() { share } else { cap };
            corners[k] -= delta;
        }
    }
}

/// Build the per-cell reconstruction polynomials over the padded array
/// (one extra ring of cells is reconstructed so transverse triangles can
/// reach into neighbors of boundary cells).
fn build_polys(p: &Padded, nx: usize, ny: usize, hx: f64, hy: f64, opts: BdsOptions) -> Vec<Poly> {
    // Reconstruct for cells in [-1, nx] x [-1, ny].
    let w = nx + 2;
    let mut polys = vec![Poly::default(); w * (ny + 2)];
    let idx = |i: isize, j: isize| ((j + 1) as usize) * w + (i + 1) as usize;
    for j in -1..=(ny as isize) {
        for i in -1..=(nx as isize) {
            let s = p.at(i, j);
            let poly = match opts.reconstruction {
                Reconstruction::Bilinear => {
                    let mut corners = [
                        corner_value(p, i, j),
                        corner_value(p, i + 1, j),
                        corner_value(p, i, j + 1),
                        corner_value(p, i + 1, j + 1),
                    ];
                    if opts.limited {
                        limit_corners(p, i, j, s, &mut corners);
                    }
                    let [lb, rb, lt, rt] = corners;
                    Poly {
                        c0: s,
                        cx: (rt + rb - lt - lb) / (2.0 * hx),
                        cy: (rt + lt - rb - lb) / (2.0 * hy),
                        cxx: 0.0,
                        cyy: 0.0,
                        cxy: (rt - lt - rb + lb) / (hx * hy),
                    }
                }
                Reconstruction::Quadratic => {
                    let cxx = (p.at(i + 1, j) - 2.0 * s + p.at(i - 1, j)) / (2.0 * hx * hx);
                    let cyy = (p.at(i, j + 1) - 2.0 * s + p.at(i, j - 1)) / (2.0 * hy * hy);
                    let cx = (p.at(i + 1, j) - p.at(i - 1, j)) / (2.0 * hx);
                    let cy = (p.at(i, j + 1) - p.at(i, j - 1)) / (2.0 * hy);
                    let cxy = (p.at(i + 1, j + 1) - p.at(i + 1, j - 1) - p.at(i - 1, j + 1)
                        + p.at(i - 1, j - 1))
                        / (4.0 * hx * hy);
                    // c0 chosen so the cell average of p equals s.
                    let c0 = s - cxx * hx * hx / 12.0 - cyy * hy * hy / 12.0;
                    let mut poly = Poly { c0, cx, cy, cxx, cyy, cxy };
                    if opts.limited {
                        // Scale deviations from the cell average so sampled
                        // values stay within the 3x3 neighborhood range.
                        let mut lo = f64::INFINITY;
                        let mut hi = f64::NEG_INFINITY;
                        for b in -1..=1 {
                            for a in -1..=1 {
                                let v = p.at(i + a, j + b);
                                lo = lo.min(v);
                                hi = hi.max(v);
                            }
                        }
                        let mut theta: f64 = 1.0;
                        for &(sx, sy) in &[
                            (-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5),
                            (0.0, -0.5), (0.0, 0.5), (-0.5, 0.0), (0.5, 0.0), (0.0, 0.0),
                        ] {
                            let v = poly.eval(sx * hx, sy * hy);
                            let d = v - s;
                            if d > 1e-300 && v > hi {
                                theta = theta.min((hi - s) / d);
                            } else if d < -1e-300 && v < lo {
                                theta = theta.min((lo - s) / d);
                            }
                        }
                        let theta = theta.clamp(0.0, 1.0);
                        poly = Poly {
                            c0: s + theta * (poly.c0 - s),
                            cx: theta * poly.cx,
                            cy: theta * poly.cy,
                            cxx: theta * poly.cxx,
                            cyy: theta * poly.cyy,
                            cxy: theta * poly.cxy,
                        };
                    }
                    poly
                }
            };
            polys[idx(i, j)] = poly;
        }
    }
    polys
}

/// Time-averaged face values of phi traced along characteristics of v,
/// with source term q (both held fixed over the step).
pub fn bds_edge_states(
    phi: &CellField,
    v: &FaceField,
    q: &CellField,
    dt: f64,
    opts: BdsOptions,
) -> Result<FaceField> {
    let g = phi.grid;
    let (hx, hy) = (g.dx, g.dy);
    let cfl = {
        let mut m = 0.0_f64;
        for &u in v.xs() {
            m = m.max(u.abs() * dt / hx);
        }
        for &w in v.ys() {
            m = m.max(w.abs() * dt / hy);
        }
        m
    };
    if cfl > 1.0 {
        return Err(Error::CflExceeded { cfl });
    }

    let p = ops::padded_cell(phi, 3);
    let polys = build_polys(&p, g.nx, g.ny, hx, hy, opts);
    let w = g.nx + 2;
    let poly = |i: isize, j: isize| -> &Poly { &polys[((j + 1) as usize) * w + (i + 1) as usize] };

    // Range clamp for traced values when limiting is on: the 3x3
    // neighborhood of the upwind cell bounds everything the trace touched.
    let clamp_range = |i: isize, j: isize, val: f64| -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for b in -1..=1 {
            for a in -1..=1 {
                let pv = p.at(i + a, j + b);
                lo = lo.min(pv);
                hi = hi.max(pv);
            }
        }
        val.clamp(lo, hi)
    };

    let mut out = FaceField::zeros(&g);

    // x-faces: face index i sits between cells i-1 and i.
    out.for_each_x(|fi, fj, edge| {
        let (fi, fj) = (fi as isize, fj as isize);
        let u = v.x(fi, fj);
        if g.bc_x == BcKind::Wall && (fi == 0 || fi == g.nx as isize) {
            // impenetrable wall: value is irrelevant (u = 0); use the cell.
            *edge = p.at(fi.min(g.nx as isize - 1).max(0) - (fi == g.nx as isize) as isize, fj);
            return;
        }
        // Upwind cell and which of its faces this is.
        let (ic, isign) = if u >= 0.0 { (fi - 1, 1.0) } else { (fi, -1.0) };
        let pl = poly(ic, fj);

        // Normal-direction average over the swept band.
        let xbar = isign * hx / 2.0 - u * dt / 2.0;
        let wband = u.abs() * dt;
        let stem = pl.c0
            + pl.cx * xbar
            + pl.cxx * (xbar * xbar + wband * wband / 12.0)
            + pl.cyy * hy * hy / 12.0;

        // Compression correction from the normal velocity divergence of
        // the upwind cell.
        let ue = v.x(ic + 1, fj);
        let uw = v.x(ic, fj);
        let vaddif = stem * 0.5 * dt * (ue - uw) / hx;

        // Transverse corrections: triangles swept through the top and
        // bottom edges of the upwind cell.
        let vt = v.y(ic, fj + 1);
        let vb = v.y(ic, fj);
        let mut vdif = 0.0;
        for (edge_v, top) in [(vt, true), (vb, false)] {
            if edge_v == 0.0 {
                continue;
            }
            let (jsign, joff) = match (top, edge_v > 0.0) {
                (true, true) => (1.0, 0_isize),
                (true, false) => (-1.0, 1),
                (false, true) => (1.0, -1),
                (false, false) => (-1.0, 0),
            };
            // Inflow from beyond a wall cannot happen with impenetrable
            // walls; skip rather than index outside the domain.
            if g.bc_y == BcKind::Wall && (fj + joff < 0 || fj + joff >= g.ny as isize) {
                continue;
            }
            // Normal velocity at the matching face of the offset cell;
            // zeroed if it opposes u (the characteristic cone collapses).
            let un = v.x(fi, fj + joff);
            let uu = if u * un > 0.0 { un } else { 0.0 };
            let ptri = poly(ic, fj + joff);
            let p1 = (isign * hx / 2.0, jsign * hy / 2.0);
            let p2 = (isign * hx / 2.0 - u * dt, jsign * hy / 2.0);
            let p3 = (isign * hx / 2.0 - uu * dt, jsign * hy / 2.0 - edge_v * dt);
            let gamma = ptri.triangle_average(p1, p2, p3);
            let signed = if top { edge_v * gamma } else { -edge_v * gamma };
            vdif += 0.5 * dt * signed / hy;
        }

        let mut val = stem - vdif - vaddif + 0.5 * dt * q.at(ic, fj);
        if opts.limited {
            val = clamp_range(ic, fj, val);
        }
        *edge = val;
    });

    // y-faces: symmetric with roles of x and y swapped.
    out.for_each_y(|fi, fj, edge| {
        let (fi, fj) = (fi as isize, fj as isize);
        let wv = v.y(fi, fj);
        if g.bc_y == BcKind::Wall && (fj == 0 || fj == g.ny as isize) {
            *edge = p.at(fi, fj.min(g.ny as isize - 1).max(0) - (fj == g.ny as isize) as isize);
            return;
        }
        let (jc, jsign) = if wv >= 0.0 { (fj - 1, 1.0) } else { (fj, -1.0) };
        let pl = poly(fi, jc);

        let ybar = jsign * hy / 2.0 - wv * dt / 2.0;
        let wband = wv.abs() * dt;
        let stem = pl.c0
            + pl.cy * ybar
            + pl.cyy * (ybar * ybar + wband * wband / 12.0)
            + pl.cxx * hx * hx / 12.0;

        let vn = v.y(fi, jc + 1);
        let vs = v.y(fi, jc);
        let vaddif = stem * 0.5 * dt * (vn - vs) / hy;

        let ur = v.x(fi + 1, jc);
        let ul = v.x(fi, jc);
        let mut vdif = 0.0;
        for (edge_u, right) in [(ur, true), (ul, false)] {
            if edge_u == 0.0 {
                continue;
            }
            let (isign, ioff) = match (right, edge_u > 0.0) {
                (true, true) => (1.0, 0_isize),
                (true, false) => (-1.0, 1),
                (false, true) => (1.0, -1),
                (false, false) => (-1.0, 0),
            };
            if g.bc_x == BcKind::Wall && (fi + ioff < 0 || fi + ioff >= g.nx as isize) {
                continue;
            }
            let wn = v.y(fi + ioff, fj);
            let ww = if wv * wn > 0.0 { wn } else { 0.0 };
            let ptri = poly(fi + ioff, jc);
            let p1 = (isign * hx / 2.0, jsign * hy / 2.0);
            let p2 = (isign * hx / 2.0, jsign * hy / 2.0 - wv * dt);
            let p3 = (isign * hx / 2.0 - edge_u * dt, jsign * hy / 2.0 - ww * dt);
            let gamma = ptri.triangle_average(p1, p2, p3);
            let signed = if right { edge_u * gamma } else { -edge_u * gamma };
            vdif += 0.5 * dt * signed / hx;
        }

        let mut val = stem - vdif - vaddif + 0.5 * dt * q.at(fi, jc);
        if opts.limited {
            val = clamp_range(fi, jc, val);
        }
        *edge = val;
    });

    Ok(out)
}

/// Characteristic-traced face fluxes phi_face * v_face.
pub fn bds_flux(
    phi: &CellField,
    v: &FaceField,
    q: &CellField,
    dt: f64,
    opts: BdsOptions,
) -> Result<FaceField> {
    let mut edge = bds_edge_states(phi, v, q, dt, opts)?;
    multiply_by_velocity(&mut edge, v);
    Ok(edge)
}

fn multiply_by_velocity(edge: &mut FaceField, v: &FaceField) {
    edge.for_each_x(|i, j, e| *e *= v.x(i as isize, j as isize));
    edge.for_each_y(|i, j, e| *e *= v.y(i as isize, j as isize));
}

/// Traced fluxes for the density pair (rho1, rho), with the traced face
/// values of (rho1, rho2) optionally projected onto the equation of state
/// before multiplication by the face velocity.
pub fn bds_pair_fluxes(
    rho1: &CellField,
    rho: &CellField,
    v: &FaceField,
    q1: &CellField,
    q: &CellField,
    dt: f64,
    opts: BdsOptions,
    model: &MixtureModel,
) -> Result<(FaceField, FaceField)> {
    let mut e1 = bds_edge_states(rho1, v, q1, dt, opts)?;
    let mut e = bds_edge_states(rho, v, q, dt, opts)?;
    if opts.eos_face_projection {
        let project = |a: &mut f64, b: &mut f64| {
            let (p1, p2) = model.project_pair(*a, *b - *a);
            *a = p1;
            *b = p1 + p2;
        };
        let (xs1, xs) = (e1.xs_mut(), e.xs_mut());
        for (a, b) in xs1.iter_mut().zip(xs.iter_mut()) {
            project(a, b);
        }
        let (ys1, ys) = (e1.ys_mut(), e.ys_mut());
        for (a, b) in ys1.iter_mut().zip(ys.iter_mut()) {
            project(a, b);
        }
    }
    multiply_by_velocity(&mut e1, v);
    multiply_by_velocity(&mut e, v);
    Ok((e1, e))
}

/// Centered fluxes for the density pair with the same face projection.
pub fn centered_pair_fluxes(
    rho1: &CellField,
    rho: &CellField,
    v: &FaceField,
    eos_face_projection: bool,
    model: &MixtureModel,
) -> (FaceField, FaceField) {
    let mut e1 = centered_edge_states(rho1);
    let mut e = centered_edge_states(rho);
    if eos_face_projection {
        let project = |a: &mut f64, b: &mut f64| {
            let (p1, p2) = model.project_pair(*a, *b - *a);
            *a = p1;
            *b = p1 + p2;
        };
        for (a, b) in e1.xs_mut().iter_mut().zip(e.xs_mut().iter_mut()) {
            project(a, b);
        }
        for (a, b) in e1.ys_mut().iter_mut().zip(e.ys_mut().iter_mut()) {
            project(a, b);
        }
    }
    multiply_by_velocity(&mut e1, v);
    multiply_by_velocity(&mut e, v);
    (e1, e)
}

fn centered_edge_states(phi: &CellField) -> FaceField {
    let g = phi.grid;
    let mut out = FaceField::zeros(&g);
    out.for_each_x(|i, j, f| {
        let (ii, jj) = (i as isize, j as isize);
        *f = if g.bc_x == BcKind::Wall && (i == 0 || i == g.nx) {
            phi.at(ii.min(g.nx as isize - 1).max(0) - (i == g.nx) as isize, jj)
        } else {
            0.5 * (phi.at(ii - 1, jj) + phi.at(ii, jj))
        };
    });
    out.for_each_y(|i, j, f| {
        let (ii, jj) = (i as isize, j as isize);
        *f = if g.bc_y == BcKind::Wall && (j == 0 || j == g.ny) {
            phi.at(ii, jj.min(g.ny as isize - 1).max(0) - (j == g.ny) as isize)
        } else {
            0.5 * (phi.at(ii, jj - 1) + phi.at(ii, jj))
        };
    });
    out
}

/// Face-centered divergence of the advective momentum flux m v^T using
/// centered averages: normal fluxes at cell centers, transverse fluxes at
/// nodes. Returns div(m v^T); the momentum tendency is its negation.
/// Wall-normal boundary faces get zero (they are prescribed).
pub fn centered_momentum_advection(m: &FaceField, v: &FaceField) -> FaceField {
    let g = m.grid;
    let mut out = FaceField::zeros(&g);
    out.for_each_x(|i, j, o| {
        if g.bc_x == BcKind::Wall && (i == 0 || i == g.nx) {
            *o = 0.0;
            return;
        }
        let (ii, jj) = (i as isize, j as isize);
        // x-fluxes at the centers of cells ii-1 and ii.
        let fc = |c: isize| {
            0.25 * (m.x(c, jj) + m.x(c + 1, jj)) * (v.x(c, jj) + v.x(c + 1, jj))
        };
        // y-fluxes at the nodes below and above this face. At wall nodes
        // the normal velocity vanishes, so the flux is zero by
        // construction.
        let fn_ = |n: isize| {
            0.25 * (m.x(ii, n - 1) + m.x(ii, n)) * (v.y(ii - 1, n) + v.y(ii, n))
        };
        let fnode = |n: isize| {
            if g.bc_y == BcKind::Wall && (n == 0 || n == g.ny as isize) {
                0.0
            } else {
                fn_(n)
            }
        };
        *o = (fc(ii) - fc(ii - 1)) / g.dx + (fnode(jj + 1) - fnode(jj)) / g.dy;
    });
    out.for_each_y(|i, j, o| {
        if g.bc_y == BcKind::Wall && (j == 0 || j == g.ny) {
            *o = 0.0;
            return;
        }
        let (ii, jj) = (i as isize, j as isize);
        let fc = |c: isize| {
            0.25 * (m.y(ii, c) + m.y(ii, c + 1)) * (v.y(ii, c) + v.y(ii, c + 1))
        };
        let fn_ = |n: isize| {
            0.25 * (m.y(n - 1, jj) + m.y(n, jj)) * (v.x(n, jj - 1) + v.x(n, jj))
        };
        let fnode = |n: isize| {
            if g.bc_x == BcKind::Wall && (n == 0 || n == g.nx as isize) {
                0.0
            } else {
                fn_(n)
            }
        };
        *o = (fc(jj) - fc(jj - 1)) / g.dy + (fnode(ii + 1) - fnode(ii)) / g.dx;
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::ops::divergence;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Discretely divergence-free velocity from a random streamfunction
    /// at nodes: u = d psi / dy, v = -d psi / dx.
    fn div_free_velocity(g: &Grid, rng: &mut ChaCha8Rng) -> FaceField {
        let psi: Vec<f64> = (0..g.nx * g.ny).map(|_| rng.gen::<f64>() - 0.5).collect();
        let at = |i: isize, j: isize| {
            let i = i.rem_euclid(g.nx as isize) as usize;
            let j = j.rem_euclid(g.ny as isize) as usize;
            psi[j * g.nx + i]
        };
        let mut v = FaceField::zeros(g);
        v.for_each_x(|i, j, u| {
            *u = (at(i as isize, j as isize + 1) - at(i as isize, j as isize)) / g.dy;
        });
        v.for_each_y(|i, j, w| {
            *w = -(at(i as isize + 1, j as isize) - at(i as isize, j as isize)) / g.dx;
        });
        assert!(divergence(&v).max_abs() < 1e-12);
        v
    }

    #[test]
    fn centered_flux_constant_phi_divfree_v() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Grid::periodic(8, 8, 0.5, 0.5, 1.0);
        let v = div_free_velocity(&g, &mut rng);
        let phi = CellField::constant(&g, 3.0);
        let d = divergence(&centered_scalar_flux(&phi, &v));
        assert!(d.max_abs() < 1e-12);
    }

    #[test]
    fn centered_flux_skew_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid::periodic(12, 10, 0.3, 0.4, 1.0);
        for _ in 0..5 {
            let v = div_free_velocity(&g, &mut rng);
            let mut phi = CellField::zeros(&g);
            for p in phi.data_mut() {
                *p = rng.gen::<f64>();
            }
            let d = divergence(&centered_scalar_flux(&phi, &v));
            let e = ops::cell_inner(&phi, &d);
            let scale = phi.norm2() * d.norm2() * g.cell_volume();
            assert!(e.abs() < 1e-12 * scale.max(1.0), "e = {e}");
        }
    }

    fn uniform_q(g: &Grid) -> CellField {
        CellField::zeros(g)
    }

    #[test]
    fn bds_uniform_phi_gives_exact_flux() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Grid::periodic(8, 8, 0.5, 0.5, 1.0);
        let v = div_free_velocity(&g, &mut rng);
        let phi = CellField::constant(&g, 2.5);
        for recon in [Reconstruction::Bilinear, Reconstruction::Quadratic] {
            let opts = BdsOptions { reconstruction: recon, limited: false, eos_face_projection: false };
            let f = bds_flux(&phi, &v, &uniform_q(&g), 0.05, opts).unwrap();
            // flux must equal phi * v on every face
            let mut err = 0.0_f64;
            f.clone().for_each_x(|i, j, val| {
                err = err.max((*val - 2.5 * v.x(i as isize, j as isize)).abs());
            });
            f.clone().for_each_y(|i, j, val| {
                err = err.max((*val - 2.5 * v.y(i as isize, j as isize)).abs());
            });
            assert!(err < 1e-12, "err = {err} for {recon:?}");
        }
    }

    #[test]
    fn bds_1d_linear_profile_exact_face_average() {
        // 1D translation at CFL 0.5 of a linear profile: the face state
        // equals phi(x_face - u dt/2).
        let g = Grid::new(16, 4, 0.25, 0.25, 1.0, BcKind::Wall, BcKind::Periodic);
        let a = 1.7;
        let phi = CellField::from_fn(&g, |x, _| a * x);
        let u = 0.5 * g.dx / 0.1; // CFL 0.5 at dt = 0.1
        let dt = 0.1;
        let mut v = FaceField::constant(&g, u, 0.0);
        v.zero_wall_normal();
        let opts = BdsOptions { reconstruction: Reconstruction::Bilinear, limited: false, eos_face_projection: false };
        let e = bds_edge_states(&phi, &v, &uniform_q(&g), dt, opts).unwrap();
        // interior faces away from the wall-extrapolation stencil
        for i in 4..=12 {
            let xf = i as f64 * g.dx;
            let expect = a * (xf - u * dt / 2.0);
            assert_abs_diff_eq!(e.x(i, 1), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn bds_cfl_violation_is_an_error() {
        let g = Grid::periodic(8, 8, 0.1, 0.1, 1.0);
        let v = FaceField::constant(&g, 5.0, 0.0);
        let phi = CellField::constant(&g, 1.0);
        let r = bds_flux(&phi, &v, &uniform_q(&g), 1.0, BdsOptions::default());
        assert!(matches!(r, Err(Error::CflExceeded { .. })));
    }

    #[test]
    fn bds_smooth_advection_second_order() {
        // Uniform diagonal translation on a periodic domain; compare the
        // numerical solution after time T with the exact translate.
        let mut orders = Vec::new();
        let mut prev_err: Option<f64> = None;
        for n in [64_usize, 128, 256] {
            let h = 1.0 / n as f64;
            let g = Grid::periodic(n, n, h, h, 1.0);
            let (u0, v0) = (1.0, 0.5);
            let v = FaceField::constant(&g, u0, v0);
            let f0 = |x: f64, y: f64| {
                (2.0 * std::f64::consts::PI * x).sin() * (2.0 * std::f64::consts::PI * y).cos()
            };
            let mut phi = CellField::from_fn(&g, f0);
            let dt = 0.4 * h / u0;
            let steps = (0.25 / dt).ceil() as usize;
            let dt = 0.25 / steps as f64;
            let opts = BdsOptions { reconstruction: Reconstruction::Bilinear, limited: false, eos_face_projection: false };
            for _ in 0..steps {
                let f = bds_flux(&phi, &v, &uniform_q(&g), dt, opts).unwrap();
                let d = divergence(&f);
                phi.axpy(-dt, &d);
            }
            let exact = CellField::from_fn(&g, |x, y| f0(x - u0 * 0.25, y - v0 * 0.25));
            let err = phi
                .data()
                .iter()
                .zip(exact.data())
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            if let Some(pe) = prev_err {
                orders.push((pe / err).log2());
            }
            prev_err = Some(err);
        }
        for o in &orders {
            assert!((1.8..=2.6).contains(o), "orders = {orders:?}");
        }
    }

    #[test]
    fn bds_limited_monotone_binary_data() {
        // Advect a 0/1 block pattern with a div-free velocity field; the
        // limited scheme must not create new extrema.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 32;
        let g = Grid::periodic(n, n, 1.0 / n as f64, 1.0 / n as f64, 1.0);
        let mut v = div_free_velocity(&g, &mut rng);
        // moderate speeds
        let m = v.max_abs();
        v.scale(1.0 / m);
        let mut phi = CellField::from_fn(&g, |x, y| {
            if (x - 0.5).abs() < 0.2 && (y - 0.5).abs() < 0.2 { 1.0 } else { 0.0 }
        });
        let dt = 0.4 / (n as f64); // CFL 0.4
        for recon in [Reconstruction::Bilinear, Reconstruction::Quadratic] {
            let opts = BdsOptions { reconstruction: recon, limited: true, eos_face_projection: false };
            let mut p = phi.clone();
            for _ in 0..40 {
                let f = bds_flux(&p, &v, &uniform_q(&g), dt, opts).unwrap();
                let d = divergence(&f);
                p.axpy(-dt, &d);
            }
            let lo = p.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = p.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo >= -1e-12 && hi <= 1.0 + 1e-12, "{recon:?}: range [{lo}, {hi}]");
            // conservation on periodic
            assert!((p.sum() - phi.sum()).abs() < 1e-10 * phi.sum().abs().max(1.0));
        }
        phi.scale(1.0);
    }

    #[test]
    fn face_pair_projection_oracle() {
        // Closed-form projection agrees with a dense search along the
        // constraint line for distance minimization.
        let m = MixtureModel::water_glycerol(4.14e-14);
        let (r1b, r2b) = (0.31, 0.94);
        let (p1, p2) = project_face_pair_to_eos(&m, r1b, r2b);
        assert!(m.eos_residual(p1, p1 + p2).abs() < 1e-14);
        // Parametrize the line as rho1 = t, rho2 = r2bar (1 - t/r1bar).
        let mut best = f64::INFINITY;
        let mut best_t = 0.0;
        for k in 0..200_001 {
            let t = -1.0 + 3.0 * k as f64 / 200_000.0;
            let r2 = m.rho2_pure * (1.0 - t / m.rho1_pure);
            let d = (t - r1b).powi(2) + (r2 - r2b).powi(2);
            if d < best {
                best = d;
                best_t = t;
            }
        }
        assert!((p1 - best_t).abs() < 2e-5, "p1 = {p1}, search = {best_t}");
        // Already-consistent input is unchanged.
        let rho = m.density_of_concentration(0.4);
        let (q1, q2) = project_face_pair_to_eos(&m, 0.4 * rho, 0.6 * rho);
        assert_abs_diff_eq!(q1, 0.4 * rho, epsilon = 1e-14);
        assert_abs_diff_eq!(q2, 0.6 * rho, epsilon = 1e-14);
    }

    #[test]
    fn momentum_advection_trivial_cases() {
        let g = Grid::periodic(8, 8, 0.5, 0.5, 1.0);
        let zero = FaceField::zeros(&g);
        let m = FaceField::constant(&g, 1.0, 2.0);
        assert_eq!(centered_momentum_advection(&m, &zero).max_abs(), 0.0);
        // uniform v and uniform m: constant flux, zero divergence
        let v = FaceField::constant(&g, 0.7, -0.3);
        assert!(centered_momentum_advection(&m, &v).max_abs() < 1e-13);
    }

    #[test]
    fn momentum_advection_skew_adjoint() {
        // For div-free v and m = v (uniform density), kinetic energy is
        // conserved: <v, div(v v^T)> = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Grid::periodic(16, 12, 0.3, 0.25, 1.0);
        for _ in 0..5 {
            let v = div_free_velocity(&g, &mut rng);
            let adv = centered_momentum_advection(&v, &v);
            let e = ops::face_inner(&v, &adv);
            let scale = ops::face_inner(&v, &v).max(1.0) * adv.max_abs().max(1.0);
            assert!(e.abs() < 1e-12 * scale, "e = {e}");
        }
    }

    #[test]
    fn bds_pair_fluxes_preserve_eos() {
        // Advecting an EOS-consistent pair with face projection keeps the
        // updated pair on the EOS when div v = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = Grid::periodic(16, 16, 1.0 / 16.0, 1.0 / 16.0, 1.0);
        let model = MixtureModel::water_glycerol(4.14e-14);
        let mut v = div_free_velocity(&g, &mut rng);
        let s = v.max_abs();
        v.scale(1.0 / s);
        let c = CellField::from_fn(&g, |x, y| {
            0.39 * 0.5 * (1.0 + ((x + y) * std::f64::consts::TAU).sin())
        });
        let rho = c.map(|cv| model.density_of_concentration(cv));
        let rho1 = rho.zip_with(&c, |r, cv| r * cv);
        let dt = 0.4 / 16.0;
        let q = CellField::zeros(&g);
        let opts = BdsOptions { reconstruction: Reconstruction::Bilinear, limited: true, eos_face_projection: true };
        let (f1, f) = bds_pair_fluxes(&rho1, &rho, &v, &q, &q, dt, opts, &model).unwrap();
        let mut r1n = rho1.clone();
        r1n.axpy(-dt, &divergence(&f1));
        let mut rn = rho.clone();
        rn.axpy(-dt, &divergence(&f));
        let mut worst = 0.0_f64;
        for (a, b) in r1n.data().iter().zip(rn.data()) {
            worst = worst.max(model.eos_residual(*a, *b).abs());
        }
        assert!(worst < 1e-12, "eos residual {worst}");
    }
}
