//! Uniform 2D staggered (MAC) grid and field containers.
//!
//! Cell centers hold scalars, x/y faces hold the components of vector
//! fields, and nodes (cell corners) hold off-diagonal stress entries.
//! Periodic axes store one value per unique face/node; wall axes store
//! the boundary faces/nodes explicitly.

/// Boundary kind along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcKind {
    Periodic,
    Wall,
}

/// Prescribed tangential velocity on a no-slip wall, as a function of the
/// tangential coordinate and time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WallVelocity {
    Stationary,
    /// Constant tangential speed.
    Uniform(f64),
    /// The lid-driven cavity profile: tapers to zero at the corners and
    /// ramps up smoothly in time, reaching steady amplitude at t = 1/2.
    /// `sign` selects the direction (+1 top lid, -1 bottom lid).
    CavityLid { sign: f64 },
}

impl WallVelocity {
    /// Evaluate at tangential coordinate `s` (in units of domain length
    /// along the wall) and time `t`.
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        match self {
            WallVelocity::Stationary => 0.0,
            WallVelocity::Uniform(u) => *u,
            WallVelocity::CavityLid { sign } => {
                use std::f64::consts::PI;
                let sx = 1.0 + (2.0 * PI * s - PI / 2.0).sin();
                let st = if t < 0.5 {
                    0.5 * (1.0 + (2.0 * PI * t - PI / 2.0).sin())
                } else {
                    1.0
                };
                sign * 0.5 * sx * st
            }
        }
    }
}

/// One-sided stencil used for the tangential velocity gradient at no-slip
/// walls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WallStencil {
    #[default]
    Linear,
    /// Quadratic one-sided difference; same order of accuracy for the
    /// scheme overall but smaller error constants.
    HigherOrder,
}

/// Boundary condition bookkeeping: velocity data per wall plus the scalar
/// rule (zero normal mass flux, ghost fill by cubic extrapolation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcSpec {
    /// Tangential velocity (v-component) on the x-low / x-high walls.
    pub x_lo: WallVelocity,
    pub x_hi: WallVelocity,
    /// Tangential velocity (u-component) on the y-low / y-high walls.
    pub y_lo: WallVelocity,
    pub y_hi: WallVelocity,
    pub wall_stencil: WallStencil,
}

impl Default for BcSpec {
    fn default() -> Self {
        BcSpec {
            x_lo: WallVelocity::Stationary,
            x_hi: WallVelocity::Stationary,
            y_lo: WallVelocity::Stationary,
            y_hi: WallVelocity::Stationary,
            wall_stencil: WallStencil::Linear,
        }
    }
}

/// Uniform 2D staggered grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    /// Out-of-plane thickness; enters only through the cell volume.
    pub dz_thickness: f64,
    pub bc_x: BcKind,
    pub bc_y: BcKind,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, dz: f64, bc_x: BcKind, bc_y: BcKind) -> Self {
        assert!(nx >= 4 && ny >= 4, "grid must be at least 4x4");
        assert!(dx > 0.0 && dy > 0.0 && dz > 0.0, "grid spacings must be positive");
        Grid { nx, ny, dx, dy, dz_thickness: dz, bc_x, bc_y }
    }

    pub fn periodic(nx: usize, ny: usize, dx: f64, dy: f64, dz: f64) -> Self {
        Self::new(nx, ny, dx, dy, dz, BcKind::Periodic, BcKind::Periodic)
    }

    /// Cell volume dx*dy*dz.
    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy * self.dz_thickness
    }

    pub fn lx(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn ly(&self) -> f64 {
        self.ny as f64 * self.dy
    }

    /// Number of stored x-face columns: nx for periodic x, nx+1 for walls.
    pub fn nxu(&self) -> usize {
        match self.bc_x {
            BcKind::Periodic => self.nx,
            BcKind::Wall => self.nx + 1,
        }
    }

    /// Number of stored y-face rows.
    pub fn nyv(&self) -> usize {
        match self.bc_y {
            BcKind::Periodic => self.ny,
            BcKind::Wall => self.ny + 1,
        }
    }

    /// Stored node counts per axis.
    pub fn nx_node(&self) -> usize {
        self.nxu()
    }

    pub fn ny_node(&self) -> usize {
        self.nyv()
    }

    pub fn cell_x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx
    }

    pub fn cell_y(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dy
    }

    pub fn all_periodic(&self) -> bool {
        self.bc_x == BcKind::Periodic && self.bc_y == BcKind::Periodic
    }

    pub fn cell_idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    /// Wrap a (possibly out-of-range) cell index along x. Panics for wall
    /// axes when out of range.
    #[inline(always)]
    pub fn wrap_x(&self, i: isize) -> usize {
        match self.bc_x {
            BcKind::Periodic => periodic_wrap(i, self.nx),
            BcKind::Wall => {
                debug_assert!(i >= 0 && (i as usize) < self.nx);
                i as usize
            }
        }
    }

    #[inline(always)]
    pub fn wrap_y(&self, j: isize) -> usize {
        match self.bc_y {
            BcKind::Periodic => periodic_wrap(j, self.ny),
            BcKind::Wall => {
                debug_assert!(j >= 0 && (j as usize) < self.ny);
                j as usize
            }
        }
    }
}

/// Periodic index wrap with a fast path for the in-range case (almost all
/// stencil accesses), avoiding the integer division in rem_euclid.
#[inline(always)]
fn periodic_wrap(i: isize, n: usize) -> usize {
    let n = n as isize;
    if (0..n).contains(&i) {
        i as usize
    } else {
        i.rem_euclid(n) as usize
    }
}

/// Cell-centered scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    pub grid: Grid,
    data: Vec<f64>,
}

impl CellField {
    pub fn zeros(grid: &Grid) -> Self {
        CellField { grid: *grid, data: vec![0.0; grid.nx * grid.ny] }
    }

    pub fn constant(grid: &Grid, v: f64) -> Self {
        CellField { grid: *grid, data: vec![v; grid.nx * grid.ny] }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                out[(i, j)] = f(grid.cell_x(i), grid.cell_y(j));
            }
        }
        out
    }

    #[inline]
    pub fn at(&self, i: isize, j: isize) -> f64 {
        let i = self.grid.wrap_x(i);
        let j = self.grid.wrap_y(j);
        self.data[j * self.grid.nx + i]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn subtract_mean(&mut self) {
        let m = self.mean();
        for v in &mut self.data {
            *v -= m;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &CellField) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn axpy(&mut self, alpha: f64, x: &CellField) {
        for (a, b) in self.data.iter_mut().zip(&x.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> CellField {
        CellField { grid: self.grid, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Zip two fields pointwise.
    pub fn zip_with(&self, other: &CellField, f: impl Fn(f64, f64) -> f64) -> CellField {
        CellField {
            grid: self.grid,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

impl std::ops::Index<(usize, usize)> for CellField {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[j * self.grid.nx + i]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CellField {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[j * self.grid.nx + i]
    }
}

/// MAC vector field: x-components on x-faces, y-components on y-faces.
///
/// For a periodic axis only the nx (ny) unique faces are stored and
/// accessors wrap; for wall axes the boundary faces are stored explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    pub grid: Grid,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl FaceField {
    pub fn zeros(grid: &Grid) -> Self {
        FaceField {
            grid: *grid,
            xs: vec![0.0; grid.nxu() * grid.ny],
            ys: vec![0.0; grid.nx * grid.nyv()],
        }
    }

    pub fn constant(grid: &Grid, u: f64, v: f64) -> Self {
        FaceField {
            grid: *grid,
            xs: vec![u; grid.nxu() * grid.ny],
            ys: vec![v; grid.nx * grid.nyv()],
        }
    }

    /// x-face `i` sits between cells `i-1` and `i`; `i` runs 0..=nx with
    /// wrap-around for periodic x.
    #[inline]
    pub fn x(&self, i: isize, j: isize) -> f64 {
        let nxu = self.grid.nxu();
        let i = match self.grid.bc_x {
            BcKind::Periodic => periodic_wrap(i, self.grid.nx),
            BcKind::Wall => {
                debug_assert!(i >= 0 && (i as usize) <= self.grid.nx);
                i as usize
            }
        };
        let j = self.grid.wrap_y(j);
        self.xs[j * nxu + i]
    }

    #[inline]
    pub fn y(&self, i: isize, j: isize) -> f64 {
        let i = self.grid.wrap_x(i);
        let j = match self.grid.bc_y {
            BcKind::Periodic => periodic_wrap(j, self.grid.ny),
            BcKind::Wall => {
                debug_assert!(j >= 0 && (j as usize) <= self.grid.ny);
                j as usize
            }
        };
        self.ys[j * self.grid.nx + i]
    }

    #[inline]
    pub fn set_x(&mut self, i: usize, j: usize, v: f64) {
        let nxu = self.grid.nxu();
        let i = if self.grid.bc_x == BcKind::Periodic { i % self.grid.nx } else { i };
        self.xs[j * nxu + i] = v;
    }

    #[inline]
    pub fn set_y(&mut self, i: usize, j: usize, v: f64) {
        let j = if self.grid.bc_y == BcKind::Periodic { j % self.grid.ny } else { j };
        self.ys[j * self.grid.nx + i] = v;
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn xs_mut(&mut self) -> &mut [f64] {
        &mut self.xs
    }

    pub fn ys_mut(&mut self) -> &mut [f64] {
        &mut self.ys
    }

    /// True if the x-face at stored column `i` lies on an x-wall.
    #[inline]
    pub fn is_x_boundary(&self, i: usize) -> bool {
        self.grid.bc_x == BcKind::Wall && (i == 0 || i == self.grid.nx)
    }

    #[inline]
    pub fn is_y_boundary(&self, j: usize) -> bool {
        self.grid.bc_y == BcKind::Wall && (j == 0 || j == self.grid.ny)
    }

    pub fn max_abs(&self) -> f64 {
        let a = self.xs.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        self.ys.iter().fold(a, |a, v| a.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.xs.iter().chain(self.ys.iter()).all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &FaceField) -> f64 {
        let a: f64 = self.xs.iter().zip(&other.xs).map(|(a, b)| a * b).sum();
        let b: f64 = self.ys.iter().zip(&other.ys).map(|(a, b)| a * b).sum();
        a + b
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn axpy(&mut self, alpha: f64, x: &FaceField) {
        for (a, b) in self.xs.iter_mut().zip(&x.xs) {
            *a += alpha * b;
        }
        for (a, b) in self.ys.iter_mut().zip(&x.ys) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in self.xs.iter_mut().chain(self.ys.iter_mut()) {
            *a *= alpha;
        }
    }

    pub fn fill(&mut self, u: f64, v: f64) {
        self.xs.fill(u);
        self.ys.fill(v);
    }

    /// Apply `f(stored_i, j, value)` over every stored x-face.
    pub fn for_each_x(&mut self, mut f: impl FnMut(usize, usize, &mut f64)) {
        let nxu = self.grid.nxu();
        for j in 0..self.grid.ny {
            for i in 0..nxu {
                f(i, j, &mut self.xs[j * nxu + i]);
            }
        }
    }

    pub fn for_each_y(&mut self, mut f: impl FnMut(usize, usize, &mut f64)) {
        let nx = self.grid.nx;
        for j in 0..self.grid.nyv() {
            for i in 0..nx {
                f(i, j, &mut self.ys[j * nx + i]);
            }
        }
    }

    /// Zero the normal components on wall boundary faces.
    pub fn zero_wall_normal(&mut self) {
        if self.grid.bc_x == BcKind::Wall {
            let nxu = self.grid.nxu();
            for j in 0..self.grid.ny {
                self.xs[j * nxu] = 0.0;
                self.xs[j * nxu + self.grid.nx] = 0.0;
            }
        }
        if self.grid.bc_y == BcKind::Wall {
            let nx = self.grid.nx;
            for i in 0..nx {
                self.ys[i] = 0.0;
                self.ys[self.grid.ny * nx + i] = 0.0;
            }
        }
    }

    /// Set wall-normal boundary faces to prescribed values (impenetrable
    /// walls prescribe zero).
    pub fn set_wall_normal(&mut self, value: f64) {
        if self.grid.bc_x == BcKind::Wall {
            let nxu = self.grid.nxu();
            for j in 0..self.grid.ny {
                self.xs[j * nxu] = value;
                self.xs[j * nxu + self.grid.nx] = value;
            }
        }
        if self.grid.bc_y == BcKind::Wall {
            let nx = self.grid.nx;
            for i in 0..nx {
                self.ys[i] = value;
                self.ys[self.grid.ny * nx + i] = value;
            }
        }
    }
}

/// Node-centered (cell corner) scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    pub grid: Grid,
    data: Vec<f64>,
}

impl NodeField {
    pub fn zeros(grid: &Grid) -> Self {
        NodeField { grid: *grid, data: vec![0.0; grid.nx_node() * grid.ny_node()] }
    }

    pub fn constant(grid: &Grid, v: f64) -> Self {
        NodeField { grid: *grid, data: vec![v; grid.nx_node() * grid.ny_node()] }
    }

    /// Node `(i, j)` sits at the corner shared by cells `(i-1..i, j-1..j)`;
    /// indices wrap on periodic axes.
    #[inline]
    pub fn at(&self, i: isize, j: isize) -> f64 {
        let nxn = self.grid.nx_node();
        let i = match self.grid.bc_x {
            BcKind::Periodic => periodic_wrap(i, self.grid.nx),
            BcKind::Wall => i as usize,
        };
        let j = match self.grid.bc_y {
            BcKind::Periodic => periodic_wrap(j, self.grid.ny),
            BcKind::Wall => j as usize,
        };
        self.data[j * nxn + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let nxn = self.grid.nx_node();
        let i = if self.grid.bc_x == BcKind::Periodic { i % self.grid.nx } else { i };
        let j = if self.grid.bc_y == BcKind::Periodic { j % self.grid.ny } else { j };
        self.data[j * nxn + i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> NodeField {
        NodeField { grid: self.grid, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn axpy(&mut self, alpha: f64, x: &NodeField) {
        for (a, b) in self.data.iter_mut().zip(&x.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in self.data.iter_mut() {
            *a *= alpha;
        }
    }

    /// True if node row/column lies on a wall.
    #[inline]
    pub fn is_x_boundary(&self, i: usize) -> bool {
        self.grid.bc_x == BcKind::Wall && (i == 0 || i == self.grid.nx)
    }

    #[inline]
    pub fn is_y_boundary(&self, j: usize) -> bool {
        self.grid.bc_y == BcKind::Wall && (j == 0 || j == self.grid.ny)
    }
}
