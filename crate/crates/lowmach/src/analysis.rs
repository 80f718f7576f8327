//! Spectral diagnostics: static structure factors, vertically averaged
//! concentration spectra, time-correlation functions with relaxation-time
//! fits, and the closed-form theory curves they are compared against.
//!
//! Conventions: the forward DFT carries a 1/N normalization, and structure
//! factor accumulators store |coef|^2 * N * dV, so a white-noise field of
//! variance sigma^2 gives a flat spectrum equal to dV * sigma^2 and the
//! sum over all modes equals dV * N * variance (Parseval).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{CellField, Grid};

// ---------------------------------------------------------------------------
// Static structure factors
// ---------------------------------------------------------------------------

/// Accumulated static spectrum of a cell field over a set of snapshots.
/// Entries are sorted by wavenumber modulus (integer mode pair as a
/// tiebreak), so merging series from independent runs lines up mode by
/// mode.
#[derive(Debug, Clone)]
pub struct SpectrumSeries {
    /// Integer mode pair (kappa_x, kappa_y) per entry, signed convention
    /// kappa in (-n/2, n/2].
    pub modes: Vec<(i64, i64)>,
    /// Wavenumber modulus 2 pi |kappa| / L per entry.
    pub k: Vec<f64>,
    /// Effective (modified) wavenumber modulus per entry.
    pub k_eff: Vec<f64>,
    /// Per-mode accumulator of |coef|^2 * N * dV summed over samples.
    pub accum: Vec<f64>,
    /// Per-mode accumulator of the raw coefficient, used to subtract the
    /// time-mean field so a steady profile contributes nothing.
    pub mean_accum: Vec<Complex<f64>>,
    /// N * dV normalization constant of the grid the series was built on.
    pub nvol: f64,
    pub samples: usize,
    pub t_start: f64,
    pub t_end: f64,
}

impl SpectrumSeries {
    /// Mean fluctuation spectrum per mode: second moment minus the squared
    /// mean coefficient, so identical snapshots give exactly zero.
    pub fn spectrum(&self) -> Vec<f64> {
        let n = self.samples.max(1) as f64;
        let scale = self.nvol;
        self.accum
            .iter()
            .zip(&self.mean_accum)
            .map(|(a, m)| a / n - (*m / n).norm_sqr() * scale)
            .collect()
    }

    /// Average of S over all modes excluding the zero wavevector.
    pub fn average(&self) -> f64 {
        let s = self.spectrum();
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, &(kx, ky)) in self.modes.iter().enumerate() {
            if kx != 0 || ky != 0 {
                sum += s[i];
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Fold another accumulator from an independent run into this one.
    /// Associative and commutative; both series must describe the same
    /// mode set.
    pub fn merge(&mut self, other: &SpectrumSeries) -> Result<()> {
        if self.modes != other.modes {
            return Err(Error::Domain(
                "cannot merge spectra with different mode sets".into(),
            ));
        }
        for (a, b) in self.accum.iter_mut().zip(&other.accum) {
            *a += b;
        }
        for (a, b) in self.mean_accum.iter_mut().zip(&other.mean_accum) {
            *a += b;
        }
        self.samples += other.samples;
        self.t_start = self.t_start.min(other.t_start);
        self.t_end = self.t_end.max(other.t_end);
        Ok(())
    }

    /// Plain-text CSV: k_index, kappa_x, kappa_y, k, k_eff, S.
    pub fn to_csv(&self) -> String {
        let s = self.spectrum();
        let mut out = String::from("k_index,kappa_x,kappa_y,k,k_eff,S\n");
        for i in 0..self.modes.len() {
            let (kx, ky) = self.modes[i];
            let _ = writeln!(
                out,
                "{i},{kx},{ky},{:.12e},{:.12e},{:.12e}",
                self.k[i], self.k_eff[i], s[i]
            );
        }
        out
    }
}

fn signed_mode(idx: usize, n: usize) -> i64 {
    if idx <= n / 2 {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

/// 2D forward DFT with 1/N normalization, rows then columns.
fn dft2(data: &[f64], nx: usize, ny: usize, planner: &mut FftPlanner<f64>) -> Vec<Complex<f64>> {
    let fx: Arc<dyn Fft<f64>> = planner.plan_fft_forward(nx);
    let fy: Arc<dyn Fft<f64>> = planner.plan_fft_forward(ny);
    let mut buf: Vec<Complex<f64>> = data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in buf.chunks_exact_mut(nx) {
        fx.process(row);
    }
    let mut col = vec![Complex::default(); ny];
    for i in 0..nx {
        for j in 0..ny {
            col[j] = buf[j * nx + i];
        }
        fy.process(&mut col);
        for j in 0..ny {
            buf[j * nx + i] = col[j];
        }
    }
    let norm = 1.0 / (nx * ny) as f64;
    for v in &mut buf {
        *v *= norm;
    }
    buf
}

/// Static structure factor of a sequence of cell-field snapshots: per-mode
/// S(k) = dV * <|delta phi_k|^2> * N with the spatial mean subtracted from
/// each snapshot. Needs at least two samples.
pub fn static_structure_factor(samples: &[CellField], t_start: f64, t_end: f64) -> Result<SpectrumSeries> {
    if samples.len() < 2 {
        return Err(Error::Domain(
            "static structure factor needs at least 2 samples".into(),
        ));
    }
    let g = samples[0].grid;
    let mut series = empty_spectrum(&g, t_start, t_end);
    let mut planner = FftPlanner::new();
    for s in samples {
        accumulate_spectrum(&mut series, s, &mut planner)?;
    }
    Ok(series)
}

/// Spectrum accumulator with zeroed sums for the given grid, for
/// incremental (observer-driven) use.
pub fn empty_spectrum(g: &Grid, t_start: f64, t_end: f64) -> SpectrumSeries {
    let (nx, ny) = (g.nx, g.ny);
    let mut order: Vec<usize> = (0..nx * ny).collect();
    let key = |idx: usize| {
        let kx = signed_mode(idx % nx, nx);
        let ky = signed_mode(idx / nx, ny);
        let k = ((2.0 * PI * kx as f64 / g.lx()).powi(2)
            + (2.0 * PI * ky as f64 / g.ly()).powi(2))
        .sqrt();
        (k, kx, ky)
    };
    order.sort_by(|&a, &b| {
        let (ka, xa, ya) = key(a);
        let (kb, xb, yb) = key(b);
        ka.partial_cmp(&kb).unwrap().then(xa.cmp(&xb)).then(ya.cmp(&yb))
    });
    let mut modes = Vec::with_capacity(nx * ny);
    let mut k = Vec::with_capacity(nx * ny);
    let mut k_eff = Vec::with_capacity(nx * ny);
    for &idx in &order {
        let kx = signed_mode(idx % nx, nx);
        let ky = signed_mode(idx / nx, ny);
        let kxv = 2.0 * PI * kx as f64 / g.lx();
        let kyv = 2.0 * PI * ky as f64 / g.ly();
        modes.push((kx, ky));
        k.push((kxv * kxv + kyv * kyv).sqrt());
        let ex = effective_wavenumber(kxv, g.dx);
        let ey = effective_wavenumber(kyv, g.dy);
        k_eff.push((ex * ex + ey * ey).sqrt());
    }
    SpectrumSeries {
        modes,
        k,
        k_eff,
        accum: vec![0.0; nx * ny],
        mean_accum: vec![Complex::default(); nx * ny],
        nvol: (nx * ny) as f64 * g.cell_volume(),
        samples: 0,
        t_start,
        t_end,
    }
}

/// Add one snapshot to a spectrum accumulator created by
/// [`empty_spectrum`] on the same grid.
pub fn accumulate_spectrum(
    series: &mut SpectrumSeries,
    field: &CellField,
    planner: &mut FftPlanner<f64>,
) -> Result<()> {
    let g = field.grid;
    let n = g.nx * g.ny;
    if series.modes.len() != n {
        return Err(Error::Domain("snapshot grid does not match spectrum".into()));
    }
    let coefs = dft2(field.data(), g.nx, g.ny, &mut *planner);
    let scale = n as f64 * g.cell_volume();
    // coefs are in row-major (unsorted) layout; walk the sorted mode list.
    for (slot, &(kx, ky)) in series.modes.iter().enumerate() {
        let i = kx.rem_euclid(g.nx as i64) as usize;
        let j = ky.rem_euclid(g.ny as i64) as usize;
        let c = coefs[j * g.nx + i];
        series.accum[slot] += c.norm_sqr() * scale;
        series.mean_accum[slot] += c;
    }
    series.samples += 1;
    Ok(())
}

/// Modified wavenumber of the centered difference operator:
/// k sin(k dx / 2) / (k dx / 2), with the k -> 0 limit handled.
pub fn effective_wavenumber(k: f64, dx: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else {
        let half = 0.5 * k.abs() * dx;
        k.abs() * half.sin() / half * k.signum()
    }
}

/// Column mean of a cell field over y: one value per x-column.
pub fn vertical_average(c: &CellField) -> Vec<f64> {
    let g = c.grid;
    let mut out = vec![0.0; g.nx];
    for j in 0..g.ny {
        for (i, o) in out.iter_mut().enumerate() {
            *o += c.at(i as isize, j as isize);
        }
    }
    for o in &mut out {
        *o /= g.ny as f64;
    }
    out
}

// ---------------------------------------------------------------------------
// Time correlations
// ---------------------------------------------------------------------------

/// Per-wavenumber normalized time correlations of the Fourier modes of a
/// sequence of 1D column means.
#[derive(Debug, Clone)]
pub struct CorrelationSet {
    /// Positive wavenumbers 2 pi m / L for m = 1 .. n/2.
    pub k: Vec<f64>,
    pub k_eff: Vec<f64>,
    /// corr[m][lag] with corr[m][0] = 1 by normalization.
    pub corr: Vec<Vec<f64>>,
    /// Spacing of the snapshot times.
    pub dt_snap: f64,
    /// Lag-0 covariance per mode (the static spectrum of the column mean,
    /// in |coef|^2 units).
    pub s0: Vec<f64>,
}

impl CorrelationSet {
    /// Plain-text CSV: mode, k, k_eff, lag_time, C.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,k,k_eff,lag_time,C\n");
        for (m, series) in self.corr.iter().enumerate() {
            for (l, c) in series.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{:.12e},{:.12e},{:.12e},{:.12e}",
                    m + 1,
                    self.k[m],
                    self.k_eff[m],
                    l as f64 * self.dt_snap,
                    c
                );
            }
        }
        out
    }
}

/// Lagged covariance of the Fourier coefficients of mean-subtracted column
/// profiles, normalized per mode by the lag-0 value. `lx` and `dx` describe
/// the column geometry; snapshots must be equally spaced `dt_snap` apart,
/// and the window must cover at least `max_lag + 1` snapshots.
pub fn time_correlation(
    snapshots: &[Vec<f64>],
    lx: f64,
    dx: f64,
    dt_snap: f64,
    max_lag: usize,
) -> Result<CorrelationSet> {
    let m = snapshots.len();
    if m == 0 || snapshots[0].is_empty() {
        return Err(Error::Domain("time correlation needs snapshots".into()));
    }
    if m <= max_lag {
        return Err(Error::Domain(format!(
            "window of {m} snapshots is shorter than max lag {max_lag}"
        )));
    }
    let n = snapshots[0].len();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let nmodes = n / 2;
    // coefs[t][mode]
    let mut coefs = vec![vec![Complex::default(); nmodes]; m];
    for (t, snap) in snapshots.iter().enumerate() {
        if snap.len() != n {
            return Err(Error::Domain("snapshot lengths differ".into()));
        }
        let mean = snap.iter().sum::<f64>() / n as f64;
        let mut buf: Vec<Complex<f64>> =
            snap.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
        fft.process(&mut buf);
        for md in 0..nmodes {
            coefs[t][md] = buf[md + 1] / n as f64;
        }
    }
    // Subtract the window-mean coefficient per mode so slow drifts do not
    // masquerade as correlation.
    for md in 0..nmodes {
        let mean = coefs.iter().map(|c| c[md]).sum::<Complex<f64>>() / m as f64;
        for c in coefs.iter_mut() {
            c[md] -= mean;
        }
    }
    let mut corr = Vec::with_capacity(nmodes);
    let mut s0 = Vec::with_capacity(nmodes);
    for md in 0..nmodes {
        let mut series = Vec::with_capacity(max_lag + 1);
        for lag in 0..=max_lag {
            let mut acc = 0.0;
            for t in 0..m - lag {
                acc += (coefs[t + lag][md] * coefs[t][md].conj()).re;
            }
            series.push(acc / (m - lag) as f64);
        }
        let c0 = series[0];
        s0.push(c0);
        if c0 > 0.0 {
            for v in &mut series {
                *v /= c0;
            }
        }
        corr.push(series);
    }
    let k: Vec<f64> = (1..=nmodes).map(|mm| 2.0 * PI * mm as f64 / lx).collect();
    let k_eff = k.iter().map(|&kk| effective_wavenumber(kk, dx)).collect();
    Ok(CorrelationSet { k, k_eff, corr, dt_snap, s0 })
}

// ---------------------------------------------------------------------------
// Correlation fits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitModel {
    /// (1 - b) exp(-t/tau) + b.
    SingleExpOffset,
    /// alpha exp(-t/tau1) + (1 - alpha) exp(-t/tau2).
    DoubleExp,
    /// exp(-t/tau) (A sin(2 pi t / T) + cos(2 pi t / T)).
    Oscillatory,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: FitModel,
    /// Model parameters in declaration order (see [`FitModel`]).
    pub params: Vec<f64>,
    /// Reported decay time: the 1/e crossing of the fitted curve.
    pub tau: f64,
    /// Root-mean-square residual of the fit.
    pub gof: f64,
    pub converged: bool,
}

fn model_eval(model: FitModel, p: &[f64], t: f64) -> f64 {
    match model {
        FitModel::SingleExpOffset => (1.0 - p[1]) * (-t / p[0].abs()).exp() + p[1],
        FitModel::DoubleExp => {
            let a = p[0].clamp(0.0, 1.0);
            a * (-t / p[1].abs()).exp() + (1.0 - a) * (-t / p[2].abs()).exp()
        }
        FitModel::Oscillatory => {
            let w = 2.0 * PI * t / p[2].abs();
            (-t / p[0].abs()).exp() * (p[1] * w.sin() + w.cos())
        }
    }
}

/// 1/e crossing time of the model curve by bisection on [0, t_max].
fn one_over_e_crossing(model: FitModel, p: &[f64], t_max: f64) -> f64 {
    let target = (-1.0f64).exp();
    let f = |t: f64| model_eval(model, p, t) - target;
    let mut lo = 0.0;
    let mut hi = t_max;
    // Walk out until the curve is below 1/e (it starts at 1 > 1/e).
    let mut guard = 0;
    while f(hi) > 0.0 && guard < 60 {
        hi *= 2.0;
        guard += 1;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Discrete 1/e crossing of the data, used to initialize fits.
fn discrete_crossing(data: &[f64], dt: f64) -> f64 {
    let target = (-1.0f64).exp();
    for i in 1..data.len() {
        if data[i] <= target {
            let f0 = data[i - 1];
            let f1 = data[i];
            let frac = if (f0 - f1).abs() > 1e-30 { (f0 - target) / (f0 - f1) } else { 0.5 };
            return dt * ((i - 1) as f64 + frac);
        }
    }
    dt * data.len() as f64
}

/// First zero crossing of the data (oscillation half-period estimate).
fn first_zero(data: &[f64], dt: f64) -> Option<f64> {
    for i in 1..data.len() {
        if data[i] <= 0.0 {
            return Some(dt * i as f64);
        }
    }
    None
}

/// Nonlinear least squares on a normalized correlation series via
/// Levenberg-damped Gauss-Newton with a numerical Jacobian. Data points
/// are (i * dt, data[i]). A non-convergent fit is returned flagged, never
/// raised as an error.
pub fn fit_correlation(data: &[f64], dt: f64, model: FitModel) -> Result<FitResult> {
    if data.len() < 10 {
        return Err(Error::Domain("correlation fit needs at least 10 lags".into()));
    }
    if (data[0] - 1.0).abs() > 1e-9 {
        return Err(Error::Domain("correlation series must be normalized to C(0)=1".into()));
    }
    let tau0 = discrete_crossing(data, dt).max(dt * 0.5);
    let mut p: Vec<f64> = match model {
        FitModel::SingleExpOffset => vec![tau0, 0.0],
        FitModel::DoubleExp => vec![0.5, tau0, 0.5 * tau0],
        FitModel::Oscillatory => {
            let t0 = first_zero(data, dt).map(|z| 4.0 * z).unwrap_or(4.0 * tau0);
            vec![tau0, 0.0, t0]
        }
    };
    let residual = |p: &[f64]| -> Vec<f64> {
        data.iter()
            .enumerate()
            .map(|(i, &y)| model_eval(model, p, i as f64 * dt) - y)
            .collect()
    };
    let cost = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut r = residual(&p);
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    let np = p.len();
    let mut converged = false;
    for _ in 0..200 {
        // Numerical Jacobian.
        let mut jac = vec![vec![0.0; r.len()]; np];
        for a in 0..np {
            let h = 1e-6 * p[a].abs().max(1e-6);
            let mut pp = p.clone();
            pp[a] += h;
            let rp = residual(&pp);
            for (ji, (rp_i, r_i)) in jac[a].iter_mut().zip(rp.iter().zip(&r)) {
                *ji = (rp_i - r_i) / h;
            }
        }
        // Normal equations with Levenberg damping.
        let mut ata = vec![vec![0.0; np]; np];
        let mut atb = vec![0.0; np];
        for a in 0..np {
            for b in a..np {
                let dot: f64 = jac[a].iter().zip(&jac[b]).map(|(x, y)| x * y).sum();
                ata[a][b] = dot;
                ata[b][a] = dot;
            }
            atb[a] = -jac[a].iter().zip(&r).map(|(x, y)| x * y).sum::<f64>();
        }
        let mut improved = false;
        for _ in 0..12 {
            let mut m = ata.clone();
            for (a, row) in m.iter_mut().enumerate() {
                row[a] += lambda * ata[a][a].max(1e-12);
            }
            if let Some(dp) = solve_dense(&m, &atb) {
                let pt: Vec<f64> = p.iter().zip(&dp).map(|(a, b)| a + b).collect();
                let rt = residual(&pt);
                let ct = cost(&rt);
                if ct < c {
                    let rel = (c - ct) / c.max(1e-300);
                    p = pt;
                    r = rt;
                    c = ct;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = true;
                    if rel < 1e-14 {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            converged = c < 1e-18 || converged;
            break;
        }
        if converged {
            break;
        }
    }
    // Canonicalize parameters.
    match model {
        FitModel::SingleExpOffset => p[0] = p[0].abs(),
        FitModel::DoubleExp => {
            p[0] = p[0].clamp(0.0, 1.0);
            p[1] = p[1].abs();
            p[2] = p[2].abs();
        }
        FitModel::Oscillatory => {
            p[0] = p[0].abs();
            p[2] = p[2].abs();
        }
    }
    let t_max = dt * data.len() as f64;
    let tau = one_over_e_crossing(model, &p, t_max);
    let gof = (c / data.len() as f64).sqrt();
    Ok(FitResult { model, params: p, tau, gof, converged: converged || gof < 1e-6 })
}

/// Gaussian elimination with partial pivoting for the small fit systems.
fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().cloned().collect();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        x.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        for k in col + 1..n {
            x[col] -= m[col][k] * x[k];
        }
        x[col] /= m[col][col];
    }
    Some(x)
}

// ---------------------------------------------------------------------------
// Theory curves
// ---------------------------------------------------------------------------

/// Physical parameters of the nonequilibrium (giant fluctuation) theory.
#[derive(Debug, Clone, Copy)]
pub struct TheoryParams {
    pub eta: f64,
    pub chi: f64,
    pub rho: f64,
    pub beta: f64,
    /// Gravity component along the stratification axis (signed).
    pub g: f64,
    /// Imposed background concentration gradient magnitude.
    pub h: f64,
    pub kt: f64,
}

impl TheoryParams {
    fn check(&self) -> Result<()> {
        if self.eta <= 0.0 || self.chi <= 0.0 || self.rho <= 0.0 {
            return Err(Error::Domain("theory parameters must have eta, chi, rho > 0".into()));
        }
        Ok(())
    }

    /// Nonequilibrium concentration spectrum
    /// S(k) = kT h^2 / (eta chi k^4 - rho beta g h). The second return is
    /// false when the denominator is non-positive (unstable
    /// stratification); the signed value is still returned.
    pub fn s_of_k(&self, k: f64) -> Result<(f64, bool)> {
        self.check()?;
        let denom = self.eta * self.chi * k.powi(4) - self.rho * self.beta * self.g * self.h;
        Ok((self.kt * self.h * self.h / denom, denom > 0.0))
    }

    /// Overdamped relaxation rate 1/tau_k = chi k^2 [1 + rho beta g h /
    /// (eta chi k^4)].
    pub fn tau_overdamped(&self, k: f64) -> Result<f64> {
        self.check()?;
        let rate = self.chi
            * k
            * k
            * (1.0 + self.rho * self.beta * self.g * self.h / (self.eta * self.chi * k.powi(4)));
        Ok(1.0 / rate)
    }

    /// Roots of the inertial dispersion relation:
    /// 1/tau_{1,2} = (nu + chi) k^2 / 2 +- sqrt(k^4 (nu - chi)^2 - 4 beta g h) / 2.
    /// Complex pair (propagative modes) when the discriminant is negative.
    pub fn tau_complex(&self, k: f64) -> Result<(Complex<f64>, Complex<f64>)> {
        self.check()?;
        let nu = self.eta / self.rho;
        let half_sum = 0.5 * (nu + self.chi) * k * k;
        let disc = k.powi(4) * (nu - self.chi).powi(2) - 4.0 * self.beta * self.g * self.h;
        if disc >= 0.0 {
            let s = 0.5 * disc.sqrt();
            Ok((
                Complex::new(half_sum + s, 0.0),
                Complex::new(half_sum - s, 0.0),
            ))
        } else {
            let s = 0.5 * (-disc).sqrt();
            Ok((
                Complex::new(half_sum, s),
                Complex::new(half_sum, -s),
            ))
        }
    }

    /// Gravity rollover wavenumber, k_c^4 = rho beta g h / (eta chi).
    pub fn k_c(&self) -> Result<f64> {
        self.check()?;
        Ok((self.rho * self.beta * self.g * self.h / (self.eta * self.chi)).powf(0.25))
    }

    /// Propagative-mode threshold, k_p = (4 beta g h / nu^2)^{1/4}.
    pub fn k_p(&self) -> Result<f64> {
        self.check()?;
        let nu = self.eta / self.rho;
        Ok((4.0 * self.beta * self.g * self.h / (nu * nu)).powf(0.25))
    }
}
