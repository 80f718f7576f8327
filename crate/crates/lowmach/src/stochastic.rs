//! Discretized stochastic momentum and mass fluxes.
//!
//! Raw standard-normal fields are generated counter-based: every draw is
//! keyed by (master seed, step index, stream, field, flat index), so a
//! realization can be regenerated bit-identically regardless of evaluation
//! order or thread count. The continuum covariances are realized by the
//! deterministic scalings applied when fluxes are assembled: a cell-volume
//! factor dV^{-1/2} and a time-step factor dt^{-1/2} convert white noise
//! densities to finite-volume averages.

use crate::error::{Error, Result};
use crate::grid::{CellField, FaceField, Grid, NodeField};
use crate::ops;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Independent noise streams within one time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    A,
    B,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::A => 0,
            Stream::B => 1,
        }
    }
}

/// One realization of the raw (unit-variance) noise fields: the diagonal
/// stress entries at cells, the off-diagonal entry at nodes, and the mass
/// flux components at faces. Symmetrization factors (2 on the diagonal,
/// sqrt(2) off-diagonal) are applied at assembly time, not here.
#[derive(Debug, Clone)]
pub struct NoiseRealization {
    pub w_xx: CellField,
    pub w_yy: CellField,
    pub w_xy: NodeField,
    pub w_mass: FaceField,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn field_rng(master_seed: u64, step: u64, stream: Stream, field: u64) -> ChaCha8Rng {
    let mut s = splitmix64(master_seed);
    s = splitmix64(s ^ step);
    s = splitmix64(s ^ (stream.id().wrapping_mul(0x517c_c1b7_2722_0a95)));
    s = splitmix64(s ^ field);
    ChaCha8Rng::seed_from_u64(s)
}

fn fill_normal(data: &mut [f64], rng: &mut ChaCha8Rng) {
    for v in data {
        *v = rng.sample(StandardNormal);
    }
}

/// Draw a fresh realization for the given step and stream. Deterministic
/// in (master_seed, step, stream).
pub fn sample_noise(grid: &Grid, master_seed: u64, step: u64, stream: Stream) -> NoiseRealization {
    let mut w_xx = CellField::zeros(grid);
    let mut w_yy = CellField::zeros(grid);
    let mut w_xy = NodeField::zeros(grid);
    let mut w_mass = FaceField::zeros(grid);
    fill_normal(w_xx.data_mut(), &mut field_rng(master_seed, step, stream, 0));
    fill_normal(w_yy.data_mut(), &mut field_rng(master_seed, step, stream, 1));
    fill_normal(w_xy.data_mut(), &mut field_rng(master_seed, step, stream, 2));
    fill_normal(w_mass.xs_mut(), &mut field_rng(master_seed, step, stream, 3));
    fill_normal(w_mass.ys_mut(), &mut field_rng(master_seed, step, stream, 4));
    NoiseRealization { w_xx, w_yy, w_xy, w_mass }
}

impl NoiseRealization {
    /// (a + b)/sqrt(2): unit-variance combination of two independent
    /// realizations, used by the midpoint corrector.
    pub fn mean_sqrt2(a: &NoiseRealization, b: &NoiseRealization) -> NoiseRealization {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let comb_cell = |x: &CellField, y: &CellField| x.zip_with(y, |p, q| s * (p + q));
        let mut w_xy = a.w_xy.clone();
        for (v, w) in w_xy.data_mut().iter_mut().zip(b.w_xy.data()) {
            *v = s * (*v + w);
        }
        let mut w_mass = a.w_mass.clone();
        for (v, w) in w_mass.xs_mut().iter_mut().zip(b.w_mass.xs()) {
            *v = s * (*v + w);
        }
        for (v, w) in w_mass.ys_mut().iter_mut().zip(b.w_mass.ys()) {
            *v = s * (*v + w);
        }
        NoiseRealization {
            w_xx: comb_cell(&a.w_xx, &b.w_xx),
            w_yy: comb_cell(&a.w_yy, &b.w_yy),
            w_xy,
            w_mass,
        }
    }
}

/// Stochastic mass flux sqrt(2 rho chi k_B T mu_c^{-1} / (dt dV)) W at
/// faces. `coef_cell` must hold the product rho * chi * k_B T / (d mu/dc)
/// at cells; it is averaged arithmetically to faces. Wall-normal boundary
/// faces carry no flux.
pub fn stochastic_mass_flux(
    coef_cell: &CellField,
    dt: f64,
    noise: &FaceField,
) -> Result<FaceField> {
    let g = coef_cell.grid;
    let dv = g.cell_volume();
    if coef_cell.data().iter().any(|&v| v < 0.0) {
        return Err(Error::Domain(
            "stochastic mass flux coefficient rho*chi*kT/mu_c' is negative".into(),
        ));
    }
    let coef_face = ops::average_cell_to_face(coef_cell, ops::AvgRule::Arithmetic)?;
    let mut out = FaceField::zeros(&g);
    out.for_each_x(|i, j, v| {
        *v = if out_of_wall_x(&g, i) {
            0.0
        } else {
            (2.0 * coef_face.x(i as isize, j as isize) / (dt * dv)).sqrt()
                * noise.x(i as isize, j as isize)
        };
    });
    out.for_each_y(|i, j, v| {
        *v = if out_of_wall_y(&g, j) {
            0.0
        } else {
            (2.0 * coef_face.y(i as isize, j as isize) / (dt * dv)).sqrt()
                * noise.y(i as isize, j as isize)
        };
    });
    Ok(out)
}

#[inline]
fn out_of_wall_x(g: &Grid, i: usize) -> bool {
    g.bc_x == crate::grid::BcKind::Wall && (i == 0 || i == g.nx)
}

#[inline]
fn out_of_wall_y(g: &Grid, j: usize) -> bool {
    g.bc_y == crate::grid::BcKind::Wall && (j == 0 || j == g.ny)
}

/// Divergence of the symmetrized stochastic stress
/// sqrt(eta k_B T / (dt_eff dV)) (W + W^T). `sqrt_eta_cell` and
/// `sqrt_eta_node` carry the square-root viscosity amplitude (so a
/// corrector can pass the average of old and new sqrt(eta)).
/// `halfstep_scaling` uses dt/2 in the denominator. On wall nodes the
/// off-diagonal noise is optionally amplified by sqrt(2) to keep the
/// fluctuation-dissipation balance with the one-sided wall stencil.
pub fn stochastic_stress_divergence(
    sqrt_eta_cell: &CellField,
    sqrt_eta_node: &NodeField,
    kt: f64,
    dt: f64,
    halfstep_scaling: bool,
    noise: &NoiseRealization,
    wall_node_sqrt2: bool,
) -> FaceField {
    let g = sqrt_eta_cell.grid;
    if kt == 0.0 {
        return FaceField::zeros(&g);
    }
    let dt_eff = if halfstep_scaling { 0.5 * dt } else { dt };
    let amp = (kt / (dt_eff * g.cell_volume())).sqrt();
    // W-bar = W + W^T: diagonal entries are 2 * N(0,1), off-diagonal is
    // the sum of two independent draws, i.e. sqrt(2) * N(0,1).
    let txx = sqrt_eta_cell.zip_with(&noise.w_xx, |e, w| amp * e * 2.0 * w);
    let tyy = sqrt_eta_cell.zip_with(&noise.w_yy, |e, w| amp * e * 2.0 * w);
    let mut txy = NodeField::zeros(&g);
    let sqrt2 = std::f64::consts::SQRT_2;
    for j in 0..g.ny_node() {
        for i in 0..g.nx_node() {
            let wall = txy.is_x_boundary(i) || txy.is_y_boundary(j);
            let boost = if wall && wall_node_sqrt2 { sqrt2 } else { 1.0 };
            let v = amp
                * sqrt_eta_node.at(i as isize, j as isize)
                * sqrt2
                * boost
                * noise.w_xy.at(i as isize, j as isize);
            txy.set(i, j, v);
        }
    }
    ops::stress_divergence(&txx, &tyy, &txy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BcKind, Grid};

    #[test]
    fn determinism_and_stream_independence() {
        let g = Grid::periodic(8, 8, 1.0, 1.0, 1.0);
        let a1 = sample_noise(&g, 42, 7, Stream::A);
        let a2 = sample_noise(&g, 42, 7, Stream::A);
        assert_eq!(a1.w_xx.data(), a2.w_xx.data());
        assert_eq!(a1.w_mass.xs(), a2.w_mass.xs());
        let b = sample_noise(&g, 42, 7, Stream::B);
        assert_ne!(a1.w_xx.data(), b.w_xx.data());
        let other_step = sample_noise(&g, 42, 8, Stream::A);
        assert_ne!(a1.w_xx.data(), other_step.w_xx.data());
        // Streams are uncorrelated: empirical correlation is CLT-small.
        let n = a1.w_xx.data().len() as f64;
        let corr: f64 = a1.w_xx.dot(&b.w_xx) / n;
        assert!(corr.abs() < 4.0 / n.sqrt());
    }

    #[test]
    fn draws_are_standard_normal() {
        // Pool draws across steps: 1e6 samples total.
        let g = Grid::periodic(32, 32, 1.0, 1.0, 1.0);
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut count = 0_usize;
        for step in 0..977 {
            let r = sample_noise(&g, 1234, step, Stream::A);
            for &v in r.w_xx.data() {
                sum += v;
                sum2 += v * v;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let var = sum2 / count as f64 - mean * mean;
        assert!(mean.abs() < 4e-3, "mean = {mean}");
        assert!((var - 1.0).abs() < 6e-3, "var = {var}");
    }

    #[test]
    fn mass_flux_variance_matches_covariance() {
        // var = 2 * coef / (dt * dV) per face entry.
        let g = Grid::periodic(4, 4, 0.5, 0.25, 2.0);
        let coef = CellField::constant(&g, 0.375);
        let dt = 0.1;
        let expect = 2.0 * 0.375 / (dt * g.cell_volume());
        let mut sum2 = 0.0;
        let mut count = 0_usize;
        for step in 0..20_000 {
            let r = sample_noise(&g, 99, step, Stream::A);
            let f = stochastic_mass_flux(&coef, dt, &r.w_mass).unwrap();
            for &v in f.xs().iter().chain(f.ys()) {
                sum2 += v * v;
                count += 1;
            }
        }
        let var = sum2 / count as f64;
        assert!(
            (var / expect - 1.0).abs() < 0.03,
            "var = {var}, expect = {expect}"
        );
    }

    #[test]
    fn mass_flux_zero_cases() {
        let g = Grid::new(8, 8, 1.0, 1.0, 1.0, BcKind::Periodic, BcKind::Wall);
        let r = sample_noise(&g, 5, 0, Stream::A);
        // Zero coefficient (pure component) -> zero flux.
        let zero = CellField::zeros(&g);
        let f = stochastic_mass_flux(&zero, 0.1, &r.w_mass).unwrap();
        assert_eq!(f.max_abs(), 0.0);
        // Wall-normal faces carry no flux.
        let coef = CellField::constant(&g, 1.0);
        let f = stochastic_mass_flux(&coef, 0.1, &r.w_mass).unwrap();
        for i in 0..g.nx {
            assert_eq!(f.y(i as isize, 0), 0.0);
            assert_eq!(f.y(i as isize, g.ny as isize), 0.0);
        }
        // Negative coefficient -> domain error.
        let bad = CellField::constant(&g, -1.0);
        assert!(stochastic_mass_flux(&bad, 0.1, &r.w_mass).is_err());
    }

    #[test]
    fn stress_divergence_conserves_momentum_periodic() {
        let g = Grid::periodic(16, 16, 0.3, 0.3, 1.0);
        let sec = CellField::constant(&g, 1.3_f64.sqrt());
        let sen = ops::cell_to_node(&sec, ops::AvgRule::Arithmetic);
        let r = sample_noise(&g, 11, 3, Stream::B);
        let f = stochastic_stress_divergence(&sec, &sen, 2.0, 0.05, false, &r, true);
        let sx: f64 = f.xs().iter().sum();
        let sy: f64 = f.ys().iter().sum();
        assert!(sx.abs() < 1e-9 * f.max_abs().max(1.0), "sx = {sx}");
        assert!(sy.abs() < 1e-9 * f.max_abs().max(1.0), "sy = {sy}");
    }

    #[test]
    fn stress_divergence_zero_without_noise_amplitude() {
        let g = Grid::periodic(8, 8, 1.0, 1.0, 1.0);
        let sec = CellField::constant(&g, 1.0);
        let sen = ops::cell_to_node(&sec, ops::AvgRule::Arithmetic);
        let r = sample_noise(&g, 0, 0, Stream::A);
        let f = stochastic_stress_divergence(&sec, &sen, 0.0, 0.1, false, &r, false);
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn halfstep_scaling_is_sqrt2_larger() {
        let g = Grid::periodic(8, 8, 1.0, 1.0, 1.0);
        let sec = CellField::constant(&g, 1.0);
        let sen = ops::cell_to_node(&sec, ops::AvgRule::Arithmetic);
        let r = sample_noise(&g, 3, 1, Stream::A);
        let f1 = stochastic_stress_divergence(&sec, &sen, 1.0, 0.1, false, &r, false);
        let f2 = stochastic_stress_divergence(&sec, &sen, 1.0, 0.1, true, &r, false);
        let ratio = f2.xs()[5] / f1.xs()[5];
        assert!((ratio - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn mean_sqrt2_preserves_variance() {
        let g = Grid::periodic(16, 16, 1.0, 1.0, 1.0);
        let mut sum2 = 0.0;
        let mut count = 0_usize;
        for step in 0..2000 {
            let a = sample_noise(&g, 77, step, Stream::A);
            let b = sample_noise(&g, 77, step, Stream::B);
            let c = NoiseRealization::mean_sqrt2(&a, &b);
            for &v in c.w_xx.data() {
                sum2 += v * v;
                count += 1;
            }
        }
        let var = sum2 / count as f64;
        assert!((var - 1.0).abs() < 0.01, "var = {var}");
    }
}
