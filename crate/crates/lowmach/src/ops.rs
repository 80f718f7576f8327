//! Discrete differential operators on the staggered grid: divergence,
//! gradient, cell-to-face and cell-to-node averaging, the variable
//! coefficient viscous operator, and ghost-cell fills.

use crate::error::{Error, Result};
use crate::grid::{BcKind, BcSpec, CellField, FaceField, Grid, NodeField, WallStencil};

/// Tangential wall velocity samples at a fixed time: `y_lo`/`y_hi` carry
/// the u-component at x-face abscissae (length nxu), `x_lo`/`x_hi` the
/// v-component at y-face ordinates (length nyv).
#[derive(Debug, Clone)]
pub struct WallTangential {
    pub y_lo: Vec<f64>,
    pub y_hi: Vec<f64>,
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
}

impl WallTangential {
    pub fn homogeneous(grid: &Grid) -> Self {
        WallTangential {
            y_lo: vec![0.0; grid.nxu()],
            y_hi: vec![0.0; grid.nxu()],
            x_lo: vec![0.0; grid.nyv()],
            x_hi: vec![0.0; grid.nyv()],
        }
    }

    pub fn from_bc(grid: &Grid, bc: &BcSpec, t: f64) -> Self {
        let mut w = Self::homogeneous(grid);
        if grid.bc_y == BcKind::Wall {
            for i in 0..grid.nxu() {
                let x = i as f64 * grid.dx / grid.lx();
                w.y_lo[i] = bc.y_lo.eval(x, t);
                w.y_hi[i] = bc.y_hi.eval(x, t);
            }
        }
        if grid.bc_x == BcKind::Wall {
            for j in 0..grid.nyv() {
                let y = j as f64 * grid.dy / grid.ly();
                w.x_lo[j] = bc.x_lo.eval(y, t);
                w.x_hi[j] = bc.x_hi.eval(y, t);
            }
        }
        w
    }
}

/// Cell divergence of a face field: (F_{i+1/2}-F_{i-1/2})/dx + ...
pub fn divergence(f: &FaceField) -> CellField {
    let g = f.grid;
    let mut out = CellField::zeros(&g);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let (i, j) = (i as isize, j as isize);
            out[(i as usize, j as usize)] = (f.x(i + 1, j) - f.x(i, j)) / g.dx
                + (f.y(i, j + 1) - f.y(i, j)) / g.dy;
        }
    }
    out
}

/// Face gradient of a cell scalar. On wall boundary faces the normal
/// gradient is set to zero (homogeneous Neumann scalars).
pub fn gradient(s: &CellField) -> FaceField {
    let g = s.grid;
    let mut out = FaceField::zeros(&g);
    out.for_each_x(|i, j, v| {
        *v = if g.bc_x == BcKind::Wall && (i == 0 || i == g.nx) {
            0.0
        } else {
            (s.at(i as isize, j as isize) - s.at(i as isize - 1, j as isize)) / g.dx
        };
    });
    out.for_each_y(|i, j, v| {
        *v = if g.bc_y == BcKind::Wall && (j == 0 || j == g.ny) {
            0.0
        } else {
            (s.at(i as isize, j as isize) - s.at(i as isize, j as isize - 1)) / g.dy
        };
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AvgRule {
    #[default]
    Arithmetic,
    Harmonic,
}

/// Two-point average of a cell scalar to faces. Wall boundary faces take
/// the adjacent interior cell value.
pub fn average_cell_to_face(s: &CellField, rule: AvgRule) -> Result<FaceField> {
    let g = s.grid;
    if rule == AvgRule::Harmonic && s.data().iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain("harmonic cell-to-face average requires positive input".into()));
    }
    let avg = |a: f64, b: f64| match rule {
        AvgRule::Arithmetic => 0.5 * (a + b),
        AvgRule::Harmonic => 2.0 / (1.0 / a + 1.0 / b),
    };
    let mut out = FaceField::zeros(&g);
    out.for_each_x(|i, j, v| {
        *v = if g.bc_x == BcKind::Wall && i == 0 {
            s.at(0, j as isize)
        } else if g.bc_x == BcKind::Wall && i == g.nx {
            s.at(g.nx as isize - 1, j as isize)
        } else {
            avg(s.at(i as isize - 1, j as isize), s.at(i as isize, j as isize))
        };
    });
    out.for_each_y(|i, j, v| {
        *v = if g.bc_y == BcKind::Wall && j == 0 {
            s.at(i as isize, 0)
        } else if g.bc_y == BcKind::Wall && j == g.ny {
            s.at(i as isize, g.ny as isize - 1)
        } else {
            avg(s.at(i as isize, j as isize - 1), s.at(i as isize, j as isize))
        };
    });
    Ok(out)
}

/// Average a cell scalar to nodes (4-point, fewer at walls/corners).
pub fn cell_to_node(s: &CellField, rule: AvgRule) -> NodeField {
    let g = s.grid;
    let mut out = NodeField::zeros(&g);
    for j in 0..g.ny_node() {
        for i in 0..g.nx_node() {
            let mut vals: Vec<f64> = Vec::with_capacity(4);
            for dj in [-1_isize, 0] {
                for di in [-1_isize, 0] {
                    let ci = i as isize + di;
                    let cj = j as isize + dj;
                    let ok_x = g.bc_x == BcKind::Periodic || (ci >= 0 && ci < g.nx as isize);
                    let ok_y = g.bc_y == BcKind::Periodic || (cj >= 0 && cj < g.ny as isize);
                    if ok_x && ok_y {
                        vals.push(s.at(ci, cj));
                    }
                }
            }
            let n = vals.len() as f64;
            let v = match rule {
                AvgRule::Arithmetic => vals.iter().sum::<f64>() / n,
                AvgRule::Harmonic => n / vals.iter().map(|v| 1.0 / v).sum::<f64>(),
            };
            out.set(i, j, v);
        }
    }
    out
}

/// Symmetric-gradient stress components of a MAC velocity field:
/// tau_xx = 2 eta du/dx and tau_yy = 2 eta dv/dy at cells,
/// tau_xy = eta (du/dy + dv/dx) at nodes. No-slip walls use one-sided
/// differences against the prescribed tangential wall velocity.
pub fn stress_components(
    v: &FaceField,
    eta_cell: &CellField,
    eta_node: &NodeField,
    walls: &WallTangential,
    stencil: WallStencil,
) -> (CellField, CellField, NodeField) {
    let g = v.grid;
    let mut txx = CellField::zeros(&g);
    let mut tyy = CellField::zeros(&g);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let (ii, jj) = (i as isize, j as isize);
            let dudx = (v.x(ii + 1, jj) - v.x(ii, jj)) / g.dx;
            let dvdy = (v.y(ii, jj + 1) - v.y(ii, jj)) / g.dy;
            txx[(i, j)] = 2.0 * eta_cell[(i, j)] * dudx;
            tyy[(i, j)] = 2.0 * eta_cell[(i, j)] * dvdy;
        }
    }

    let one_sided = |interior1: f64, interior2: f64, wall: f64, h: f64, sign: f64| -> f64 {
        // Derivative toward the interior at the wall, then flipped by sign
        // for high walls.
        let d = match stencil {
            WallStencil::Linear => (interior1 - wall) / (0.5 * h),
            WallStencil::HigherOrder => {
                (-8.0 / 3.0 * wall + 3.0 * interior1 - interior2 / 3.0) / h
            }
        };
        sign * d
    };

    let mut txy = NodeField::zeros(&g);
    for j in 0..g.ny_node() {
        for i in 0..g.nx_node() {
            let (ii, jj) = (i as isize, j as isize);
            let x_wall = eta_node.is_x_boundary(i);
            let y_wall = eta_node.is_y_boundary(j);
            let dudy = if y_wall {
                let (row1, row2, wall_u, sign) = if j == 0 {
                    (0, 1, walls.y_lo[i], 1.0)
                } else {
                    ((g.ny - 1) as isize, (g.ny - 2) as isize, walls.y_hi[i], -1.0)
                };
                one_sided(v.x(ii, row1), v.x(ii, row2), wall_u, g.dy, sign)
            } else {
                (v.x(ii, jj) - v.x(ii, jj - 1)) / g.dy
            };
            let dvdx = if x_wall {
                let (col1, col2, wall_v, sign) = if i == 0 {
                    (0, 1, walls.x_lo[j], 1.0)
                } else {
                    ((g.nx - 1) as isize, (g.nx - 2) as isize, walls.x_hi[j], -1.0)
                };
                one_sided(v.y(col1, jj), v.y(col2, jj), wall_v, g.dx, sign)
            } else {
                (v.y(ii, jj) - v.y(ii - 1, jj)) / g.dx
            };
            txy.set(i, j, eta_node.at(ii, jj) * (dudy + dvdx));
        }
    }
    (txx, tyy, txy)
}

/// Face divergence of a staggered stress tensor (diagonal at cells,
/// off-diagonal at nodes). Wall-normal boundary faces get zero.
pub fn stress_divergence(txx: &CellField, tyy: &CellField, txy: &NodeField) -> FaceField {
    let g = txx.grid;
    let mut out = FaceField::zeros(&g);
    out.for_each_x(|i, j, v| {
        if g.bc_x == BcKind::Wall && (i == 0 || i == g.nx) {
            *v = 0.0;
        } else {
            let (ii, jj) = (i as isize, j as isize);
            *v = (txx.at(ii, jj) - txx.at(ii - 1, jj)) / g.dx
                + (txy.at(ii, jj + 1) - txy.at(ii, jj)) / g.dy;
        }
    });
    out.for_each_y(|i, j, v| {
        if g.bc_y == BcKind::Wall && (j == 0 || j == g.ny) {
            *v = 0.0;
        } else {
            let (ii, jj) = (i as isize, j as isize);
            *v = (tyy.at(ii, jj) - tyy.at(ii, jj - 1)) / g.dy
                + (txy.at(ii + 1, jj) - txy.at(ii, jj)) / g.dx;
        }
    });
    out
}

/// Divergence of the deterministic viscous stress eta (grad v + grad v^T).
pub fn viscous_operator(
    v: &FaceField,
    eta_cell: &CellField,
    eta_node: &NodeField,
    walls: &WallTangential,
    stencil: WallStencil,
) -> FaceField {
    let (txx, tyy, txy) = stress_components(v, eta_cell, eta_node, walls, stencil);
    stress_divergence(&txx, &tyy, &txy)
}

/// Padded copy of a cell field with `ng` ghost layers. Periodic axes wrap;
/// wall axes fill ghosts by cubic extrapolation with zero normal
/// derivative at the wall (the scalar boundary condition).
pub struct Padded {
    pub ng: usize,
    pub stride: usize,
    pub data: Vec<f64>,
}

impl Padded {
    #[inline]
    pub fn at(&self, i: isize, j: isize) -> f64 {
        let ii = (i + self.ng as isize) as usize;
        let jj = (j + self.ng as isize) as usize;
        self.data[jj * self.stride + ii]
    }

    #[inline]
    pub fn set(&mut self, i: isize, j: isize, v: f64) {
        let ii = (i + self.ng as isize) as usize;
        let jj = (j + self.ng as isize) as usize;
        self.data[jj * self.stride + ii] = v;
    }
}

/// Ghost values behind a wall from three interior samples, via a cubic
/// with zero slope at the wall. Returns [g1, g2, g3], nearest first.
pub fn neumann_cubic_ghosts(f1: f64, f2: f64, f3: f64) -> [f64; 3] {
    let w = (f3 - 3.0 * f2 + 2.0 * f1) / 46.0;
    [f1 - 2.0 * w, f2 - 54.0 * w, f3 - 250.0 * w]
}

pub fn padded_cell(s: &CellField, ng: usize) -> Padded {
    assert!(ng <= 3, "at most 3 ghost layers supported");
    let g = s.grid;
    let stride = g.nx + 2 * ng;
    let mut p = Padded { ng, stride, data: vec![0.0; stride * (g.ny + 2 * ng)] };
    for j in 0..g.ny {
        for i in 0..g.nx {
            p.set(i as isize, j as isize, s[(i, j)]);
        }
    }
    let (nx, ny) = (g.nx as isize, g.ny as isize);
    // x-direction ghosts (interior rows only, then corners via y pass)
    for j in 0..ny {
        match g.bc_x {
            BcKind::Periodic => {
                for k in 1..=ng as isize {
                    p.set(-k, j, s.at(nx - k, j));
                    p.set(nx - 1 + k, j, s.at(k - 1, j));
                }
            }
            BcKind::Wall => {
                let lo = neumann_cubic_ghosts(s.at(0, j), s.at(1, j), s.at(2, j));
                let hi = neumann_cubic_ghosts(s.at(nx - 1, j), s.at(nx - 2, j), s.at(nx - 3, j));
                for k in 1..=ng {
                    p.set(-(k as isize), j, lo[k - 1]);
                    p.set(nx - 1 + k as isize, j, hi[k - 1]);
                }
            }
        }
    }
    // y-direction ghosts, including the corner regions (operate on the
    // already-filled padded rows so corners get consistent values).
    let ngi = ng as isize;
    for i in -ngi..nx + ngi {
        match g.bc_y {
            BcKind::Periodic => {
                for k in 1..=ngi {
                    let v_lo = p.at(i, ny - k);
                    p.set(i, -k, v_lo);
                    let v_hi = p.at(i, k - 1);
                    p.set(i, ny - 1 + k, v_hi);
                }
            }
            BcKind::Wall => {
                let lo = neumann_cubic_ghosts(p.at(i, 0), p.at(i, 1), p.at(i, 2));
                let hi = neumann_cubic_ghosts(p.at(i, ny - 1), p.at(i, ny - 2), p.at(i, ny - 3));
                for k in 1..=ng {
                    p.set(i, -(k as isize), lo[k - 1]);
                    p.set(i, ny - 1 + k as isize, hi[k - 1]);
                }
            }
        }
    }
    p
}

/// Volume-weighted inner product of two cell fields.
pub fn cell_inner(a: &CellField, b: &CellField) -> f64 {
    a.dot(b) * a.grid.cell_volume()
}

/// Volume-weighted inner product of two face fields (each face weighted by
/// a cell volume; boundary faces on wall axes get half weight).
pub fn face_inner(a: &FaceField, b: &FaceField) -> f64 {
    let g = a.grid;
    let dv = g.cell_volume();
    let mut acc = 0.0;
    let nxu = g.nxu();
    for j in 0..g.ny {
        for i in 0..nxu {
            let w = if g.bc_x == BcKind::Wall && (i == 0 || i == g.nx) { 0.5 } else { 1.0 };
            acc += w * a.xs()[j * nxu + i] * b.xs()[j * nxu + i];
        }
    }
    for j in 0..g.nyv() {
        for i in 0..g.nx {
            let w = if g.bc_y == BcKind::Wall && (j == 0 || j == g.ny) { 0.5 } else { 1.0 };
            acc += w * a.ys()[j * g.nx + i] * b.ys()[j * g.nx + i];
        }
    }
    acc * dv
}
