//! Periodic grids, continuum-normalised Fourier transforms and multipliers.
//!
//! The real line is truncated to the box `[-L/2, L/2)` with `n` uniformly
//! spaced nodes. Spectral coefficients approximate the continuum transform
//! `F[f](ξ) = (2π)^{-1/2} ∫ e^{-ixξ} f(x) dx`, so every Sobolev norm computed
//! here is directly comparable with its continuum counterpart.
//!
//! Coefficients are stored in FFT order: index `k` holds the signed mode
//! `k` for `k < n/2` and `k - n` otherwise, so the single Nyquist mode is
//! `-n/2`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Default relative tolerance on the zero mode for inverse-power symbols.
pub const MEAN_TOL: f64 = 1e-10;

/// Default tolerance on imaginary parts of fields tagged real.
pub const REAL_TOL: f64 = 1e-9;

pub(crate) const SQRT_2PI: f64 = 2.506_628_274_631_000_2;

pub(crate) type Plan = Arc<dyn Fft<f64>>;

/// Process-wide plan cache. Plans are immutable and `Sync`; scratch space
/// is allocated per call so concurrent transforms never share buffers.
pub(crate) fn plans(n: usize) -> (Plan, Plan) {
    static CACHE: OnceLock<Mutex<(FftPlanner<f64>, HashMap<usize, (Plan, Plan)>)>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    let (planner, map) = &mut *guard;
    if let Some(p) = map.get(&n) {
        return p.clone();
    }
    let p = (planner.plan_fft_forward(n), planner.plan_fft_inverse(n));
    map.insert(n, p.clone());
    p
}

struct GridInner {
    n: usize,
    length: f64,
    xs: Vec<f64>,
    xis: Vec<f64>,
    fwd: Plan,
    inv: Plan,
}

/// Uniform periodic grid on `[-L/2, L/2)`.
#[derive(Clone)]
pub struct Grid(Arc<GridInner>);

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n", &self.0.n)
            .field("length", &self.0.length)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.n == other.0.n && self.0.length == other.0.length)
    }
}

impl Grid {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "grid size {n} is not a power of two >= 2"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "box length {length} must be positive"
            )));
        }
        let dx = length / n as f64;
        let xs = (0..n).map(|j| -0.5 * length + j as f64 * dx).collect();
        let xis = (0..n)
            .map(|k| 2.0 * PI * signed_mode(k, n) as f64 / length)
            .collect();
        let (fwd, inv) = plans(n);
        Ok(Grid(Arc::new(GridInner {
            n,
            length,
            xs,
            xis,
            fwd,
            inv,
        })))
    }

    pub fn n(&self) -> usize {
        self.0.n
    }

    pub fn length(&self) -> f64 {
        self.0.length
    }

    pub fn dx(&self) -> f64 {
        self.0.length / self.0.n as f64
    }

    /// Frequency spacing `2π/L`.
    pub fn dxi(&self) -> f64 {
        2.0 * PI / self.0.length
    }

    /// Node coordinates `x_j = -L/2 + j·dx`.
    pub fn xs(&self) -> &[f64] {
        &self.0.xs
    }

    /// Frequencies `ξ_k` in FFT order.
    pub fn xis(&self) -> &[f64] {
        &self.0.xis
    }

    /// Largest resolved frequency magnitude (the Nyquist frequency).
    pub fn xi_max(&self) -> f64 {
        PI * self.0.n as f64 / self.0.length
    }

    /// Smallest nonzero frequency magnitude.
    pub fn xi_min(&self) -> f64 {
        self.dxi()
    }

    /// Index of the node nearest to `x` (no periodic wrap).
    pub fn nearest_index(&self, x: f64) -> usize {
        let j = ((x + 0.5 * self.length()) / self.dx()).round();
        (j.max(0.0) as usize).min(self.n() - 1)
    }

    /// Same number of nodes on the box `[-L/(2λ), L/(2λ))`.
    pub fn rescaled(&self, lambda: f64) -> Result<Grid> {
        Grid::new(self.n(), self.length() / lambda)
    }

    /// Same box with `factor` times as many nodes.
    pub fn refined(&self, factor: usize) -> Result<Grid> {
        Grid::new(self.n() * factor, self.length())
    }

    fn forward_raw(&self, buf: &mut [Complex64]) {
        self.0.fwd.process(buf);
    }

    fn inverse_raw(&self, buf: &mut [Complex64]) {
        self.0.inv.process(buf);
    }
}

/// Signed mode number of FFT slot `k` on an `n`-point grid.
#[inline]
pub fn signed_mode(k: usize, n: usize) -> i64 {
    if k < n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// FFT slot of signed mode `m` on an `n`-point grid.
#[inline]
pub fn slot(m: i64, n: usize) -> usize {
    m.rem_euclid(n as i64) as usize
}

#[inline]
fn parity(m: i64) -> f64 {
    if m & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Real,
    Complex,
}

/// Samples of a function on a [`Grid`].
#[derive(Clone, Debug)]
pub struct Field {
    grid: Grid,
    values: Vec<Complex64>,
    kind: Kind,
}

impl Field {
    pub fn zeros(grid: &Grid, kind: Kind) -> Self {
        Field {
            grid: grid.clone(),
            values: vec![Complex64::new(0.0, 0.0); grid.n()],
            kind,
        }
    }

    pub fn from_real(grid: &Grid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.n(), "sample count must match grid");
        Field {
            grid: grid.clone(),
            values: values.into_iter().map(|v| Complex64::new(v, 0.0)).collect(),
            kind: Kind::Real,
        }
    }

    pub fn from_complex(grid: &Grid, values: Vec<Complex64>) -> Self {
        assert_eq!(values.len(), grid.n(), "sample count must match grid");
        Field {
            grid: grid.clone(),
            values,
            kind: Kind::Complex,
        }
    }

    /// Tag complex samples as real after checking the imaginary parts.
    pub fn real_checked(grid: &Grid, values: Vec<Complex64>, tol: f64) -> Result<Self> {
        let imag = values.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
        if imag > tol {
            return Err(Error::NotReal { imag });
        }
        Ok(Field::from_real(grid, values.into_iter().map(|v| v.re).collect()))
    }

    pub fn from_fn_real(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        Field::from_real(grid, grid.xs().iter().map(|&x| f(x)).collect())
    }

    pub fn from_fn_complex(grid: &Grid, f: impl Fn(f64) -> Complex64) -> Self {
        Field::from_complex(grid, grid.xs().iter().map(|&x| f(x)).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn is_real(&self) -> bool {
        self.kind == Kind::Real
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// Real parts of the samples.
    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    /// Drop imaginary parts and tag the result real.
    pub fn real_part(&self) -> Field {
        Field::from_real(&self.grid, self.re())
    }

    pub fn as_complex(&self) -> Field {
        Field {
            kind: Kind::Complex,
            ..self.clone()
        }
    }

    pub fn conj(&self) -> Field {
        Field {
            values: self.values.iter().map(|v| v.conj()).collect(),
            ..self.clone()
        }
    }

    pub fn scale(&self, a: f64) -> Field {
        Field {
            values: self.values.iter().map(|v| v * a).collect(),
            ..self.clone()
        }
    }

    pub fn scale_complex(&self, a: Complex64) -> Field {
        Field {
            values: self.values.iter().map(|v| v * a).collect(),
            kind: Kind::Complex,
            grid: self.grid.clone(),
        }
    }

    fn zip_with(&self, other: &Field, f: impl Fn(Complex64, Complex64) -> Complex64) -> Field {
        assert_eq!(self.grid, other.grid, "operands live on different grids");
        let kind = if self.is_real() && other.is_real() {
            Kind::Real
        } else {
            Kind::Complex
        };
        Field {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            kind,
        }
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_with(other, |a, b| a - b)
    }

    /// Grid-pointwise product.
    pub fn mul(&self, other: &Field) -> Field {
        self.zip_with(other, |a, b| a * b)
    }

    /// Multiply by a real weight `w(x)` evaluated at the nodes.
    pub fn weighted(&self, w: impl Fn(f64) -> f64) -> Field {
        Field {
            values: self
                .values
                .iter()
                .zip(self.grid.xs())
                .map(|(v, &x)| v * w(x))
                .collect(),
            ..self.clone()
        }
    }

    /// Multiply by a complex weight `w(x)`; the result is tagged complex.
    pub fn weighted_complex(&self, w: impl Fn(f64) -> Complex64) -> Field {
        Field {
            values: self
                .values
                .iter()
                .zip(self.grid.xs())
                .map(|(v, &x)| v * w(x))
                .collect(),
            kind: Kind::Complex,
            grid: self.grid.clone(),
        }
    }

    pub fn powi(&self, p: i32) -> Field {
        Field {
            values: self.values.iter().map(|v| v.powi(p)).collect(),
            ..self.clone()
        }
    }

    /// `(Σ |f_j|² dx)^{1/2}`.
    pub fn norm_l2(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.dx()).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `Σ f_j dx`.
    pub fn integral(&self) -> Complex64 {
        self.values.iter().sum::<Complex64>() * self.grid.dx()
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        assert_eq!(self.grid, other.grid, "operands live on different grids");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Evaluate the trigonometric interpolant at an arbitrary point `x`.
    pub fn interpolate(&self, x: f64) -> Complex64 {
        forward_transform(self).eval_at(x)
    }
}

/// Continuum-normalised Fourier coefficients `ĉ_k ≈ F[f](ξ_k)`.
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: Grid,
    coeffs: Vec<Complex64>,
    kind: Kind,
}

impl SpectralField {
    pub fn new(grid: &Grid, coeffs: Vec<Complex64>, kind: Kind) -> Self {
        assert_eq!(coeffs.len(), grid.n(), "coefficient count must match grid");
        SpectralField {
            grid: grid.clone(),
            coeffs,
            kind,
        }
    }

    /// Sample a continuum transform `ĝ(ξ)` at the grid frequencies.
    pub fn from_fn(grid: &Grid, kind: Kind, g: impl Fn(f64) -> Complex64) -> Self {
        SpectralField::new(grid, grid.xis().iter().map(|&xi| g(xi)).collect(), kind)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    /// The `ξ = 0` coefficient.
    pub fn mean_coeff(&self) -> Complex64 {
        self.coeffs[0]
    }

    /// `Σ w(ξ_k) |ĉ_k|² dξ`.
    pub fn weighted_sum(&self, w: impl Fn(f64) -> f64) -> f64 {
        self.coeffs
            .iter()
            .zip(self.grid.xis())
            .map(|(c, &xi)| w(xi) * c.norm_sqr())
            .sum::<f64>()
            * self.grid.dxi()
    }

    pub fn norm_l2(&self) -> f64 {
        self.weighted_sum(|_| 1.0).sqrt()
    }

    /// `‖⟨ξ⟩^s ĉ‖`.
    pub fn norm_hs(&self, s: f64) -> f64 {
        self.weighted_sum(|xi| (1.0 + xi * xi).powf(s)).sqrt()
    }

    /// `‖|ξ|^s ĉ‖` with the zero mode excluded.
    pub fn norm_hdot(&self, s: f64) -> f64 {
        self.weighted_sum(|xi| if xi == 0.0 { 0.0 } else { xi.abs().powf(2.0 * s) })
            .sqrt()
    }

    /// Check `|ĉ_0| ≤ tol · ‖f‖_{L²}`.
    pub fn check_zero_mean(&self, tol: f64) -> Result<()> {
        let mean = self.coeffs[0].norm();
        let limit = tol * self.norm_l2();
        if mean > limit {
            return Err(Error::MeanNotZero { mean, limit });
        }
        Ok(())
    }

    /// Evaluate `(2π)^{-1/2} Σ_k ĉ_k e^{ixξ_k} dξ` at any `x`.
    pub fn eval_at(&self, x: f64) -> Complex64 {
        let scale = self.grid.dxi() / SQRT_2PI;
        let n = self.grid.n();
        let sum: Complex64 = self
            .coeffs
            .iter()
            .zip(self.grid.xis())
            .enumerate()
            .filter(|&(k, _)| signed_mode(k, n) != -(n as i64) / 2)
            .map(|(_, (c, &xi))| c * Complex64::from_polar(1.0, x * xi))
            .sum();
        let v = sum * scale;
        if self.kind == Kind::Real {
            Complex64::new(v.re, 0.0)
        } else {
            v
        }
    }
}

pub fn forward_transform(f: &Field) -> SpectralField {
    let grid = f.grid();
    let n = grid.n();
    let mut buf = f.values().to_vec();
    grid.forward_raw(&mut buf);
    let scale = grid.dx() / SQRT_2PI;
    for (k, c) in buf.iter_mut().enumerate() {
        *c *= scale * parity(signed_mode(k, n));
    }
    SpectralField {
        grid: grid.clone(),
        coeffs: buf,
        kind: f.kind(),
    }
}

pub fn inverse_transform(fh: &SpectralField) -> Field {
    let grid = fh.grid();
    let n = grid.n();
    let scale = grid.dxi() / SQRT_2PI;
    let mut buf: Vec<Complex64> = fh
        .coeffs()
        .iter()
        .enumerate()
        .map(|(k, c)| c * (scale * parity(signed_mode(k, n))))
        .collect();
    grid.inverse_raw(&mut buf);
    match fh.kind() {
        Kind::Real => Field::from_real(grid, buf.into_iter().map(|v| v.re).collect()),
        Kind::Complex => Field::from_complex(grid, buf),
    }
}

/// Fourier symbol with an explicit value at `ξ = 0`.
///
/// `real_preserving` asserts `m(-ξ) = conj(m(ξ))`; only such symbols keep a
/// real field real.
pub struct Symbol<F> {
    pub at_zero: Complex64,
    pub eval: F,
    pub real_preserving: bool,
}

impl<F: Fn(f64) -> Complex64> Symbol<F> {
    pub fn real_preserving(at_zero: Complex64, eval: F) -> Self {
        Symbol {
            at_zero,
            eval,
            real_preserving: true,
        }
    }

    pub fn general(at_zero: Complex64, eval: F) -> Self {
        Symbol {
            at_zero,
            eval,
            real_preserving: false,
        }
    }

    #[inline]
    fn at(&self, xi: f64) -> Complex64 {
        if xi == 0.0 {
            self.at_zero
        } else {
            (self.eval)(xi)
        }
    }
}

/// `ĉ_k ↦ m(ξ_k) ĉ_k`.
pub fn apply_multiplier<F: Fn(f64) -> Complex64>(
    fh: &SpectralField,
    m: &Symbol<F>,
) -> Result<SpectralField> {
    let peak = fh.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let populated = 1e-14 * peak;
    let mut coeffs = Vec::with_capacity(fh.coeffs.len());
    for (c, &xi) in fh.coeffs.iter().zip(fh.grid.xis()) {
        let v = m.at(xi);
        if v.re.is_finite() && v.im.is_finite() {
            coeffs.push(c * v);
        } else if c.norm() > populated {
            return Err(Error::NonFiniteSymbol { xi });
        } else {
            coeffs.push(Complex64::new(0.0, 0.0));
        }
    }
    let kind = if fh.kind == Kind::Real && m.real_preserving {
        Kind::Real
    } else {
        Kind::Complex
    };
    Ok(SpectralField {
        grid: fh.grid.clone(),
        coeffs,
        kind,
    })
}

/// Apply a symbol that is finite everywhere, field to field.
pub fn apply_symbol<F: Fn(f64) -> Complex64>(f: &Field, m: &Symbol<F>) -> Result<Field> {
    Ok(inverse_transform(&apply_multiplier(&forward_transform(f), m)?))
}

fn i_xi(xi: f64) -> Complex64 {
    Complex64::new(0.0, xi)
}

/// Spectral derivative `F⁻¹[iξ F f]`.
pub fn derivative(f: &Field) -> Field {
    let m = Symbol::real_preserving(Complex64::new(0.0, 0.0), i_xi);
    apply_symbol(f, &m).expect("iξ is finite on the grid")
}

/// `∂ₓ⁻¹ = F⁻¹ (iξ)⁻¹ F` with the zero mode set to 0.
pub fn antiderivative(f: &Field, mean_tol: f64) -> Result<Field> {
    let fh = forward_transform(f);
    fh.check_zero_mean(mean_tol)?;
    Ok(inverse_transform(&antiderivative_spectral(&fh)))
}

pub(crate) fn antiderivative_spectral(fh: &SpectralField) -> SpectralField {
    let m = Symbol::real_preserving(Complex64::new(0.0, 0.0), |xi: f64| {
        Complex64::new(0.0, -1.0 / xi)
    });
    apply_multiplier(fh, &m).expect("1/(iξ) is finite away from ξ = 0")
}

/// Symbol `e^{t/(iξ)} = e^{-it/ξ}` of the free short-pulse flow.
pub fn propagator_symbol(t: f64) -> Symbol<impl Fn(f64) -> Complex64> {
    Symbol::real_preserving(Complex64::new(1.0, 0.0), move |xi: f64| {
        Complex64::from_polar(1.0, -t / xi)
    })
}

/// Exact free evolution `e^{t∂ₓ⁻¹} f`.
pub fn free_propagate(f: &Field, t: f64, mean_tol: f64) -> Result<Field> {
    let fh = forward_transform(f);
    fh.check_zero_mean(mean_tol)?;
    if t == 0.0 {
        return Ok(f.clone());
    }
    Ok(inverse_transform(&apply_multiplier(
        &fh,
        &propagator_symbol(t),
    )?))
}

/// Smooth weight equal to 1 inside the box and ramping to 0 over the
/// outer `fraction` of the box length at each end.
pub fn edge_taper(length: f64, fraction: f64) -> impl Fn(f64) -> f64 + Send + Sync {
    let half = 0.5 * length;
    let width = fraction * length;
    move |x: f64| {
        if width <= 0.0 {
            return 1.0;
        }
        let d = half - x.abs();
        crate::smooth::smoothstep(d / width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn grid_rejects_bad_sizes() {
        assert!(Grid::new(100, 1.0).is_err());
        assert!(Grid::new(64, 0.0).is_err());
        assert!(Grid::new(64, f64::NAN).is_err());
        let g = Grid::new(64, 10.0).unwrap();
        assert_eq!(g.dx() * 64.0, 10.0);
        assert_eq!(g.xis()[0], 0.0);
        assert_eq!(g.xs()[0], -5.0);
        assert!((g.xis()[32] + g.xi_max()).abs() < 1e-12);
    }

    #[test]
    fn zero_field_transforms_to_zero() {
        let g = Grid::new(128, 20.0).unwrap();
        let fh = forward_transform(&Field::zeros(&g, Kind::Real));
        assert!(fh.coeffs().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn single_mode_has_single_coefficient() {
        let n = 256;
        let length = 40.0;
        let g = Grid::new(n, length).unwrap();
        for m in [1i64, 5, -7, 100] {
            let xi = 2.0 * PI * m as f64 / length;
            let f = Field::from_fn_complex(&g, |x| Complex64::from_polar(1.0, xi * x));
            let fh = forward_transform(&f);
            let expected = length / SQRT_2PI;
            for (k, co) in fh.coeffs().iter().enumerate() {
                let want = if signed_mode(k, n) == m { expected } else { 0.0 };
                assert!((co - c(want, 0.0)).norm() < 1e-11, "m={m} k={k}");
            }
        }
    }

    #[test]
    fn gaussian_transform_matches_closed_form() {
        let g = Grid::new(1 << 12, 64.0).unwrap();
        let f = Field::from_fn_real(&g, |x| (-0.5 * x * x).exp());
        let fh = forward_transform(&f);
        let err = fh
            .coeffs()
            .iter()
            .zip(g.xis())
            .map(|(co, &xi)| (co - c((-0.5 * xi * xi).exp(), 0.0)).norm())
            .fold(0.0, f64::max);
        assert!(err <= 1e-10, "err = {err:e}");
    }

    #[test]
    fn identity_and_inverse_symbols() {
        let g = Grid::new(256, 30.0).unwrap();
        let f = Field::from_fn_real(&g, |x| (-x * x / 4.0).exp() * (2.0 * x).sin());
        let one = Symbol::real_preserving(c(1.0, 0.0), |_| c(1.0, 0.0));
        let same = apply_symbol(&f, &one).unwrap();
        assert!(same.max_abs_diff(&f) < 1e-14);

        let s = 2.5;
        let up = Symbol::real_preserving(c(1.0, 0.0), move |xi: f64| {
            c((1.0 + xi * xi).powf(s / 2.0), 0.0)
        });
        let down = Symbol::real_preserving(c(1.0, 0.0), move |xi: f64| {
            c((1.0 + xi * xi).powf(-s / 2.0), 0.0)
        });
        let back = apply_symbol(&apply_symbol(&f, &up).unwrap(), &down).unwrap();
        assert!(back.max_abs_diff(&f) < 1e-12);
    }

    #[test]
    fn derivative_of_sine() {
        let g = Grid::new(1 << 10, 32.0 * PI).unwrap();
        let f = Field::from_fn_real(&g, f64::sin);
        let d = derivative(&f);
        let want = Field::from_fn_real(&g, f64::cos);
        assert!(d.max_abs_diff(&want) < 1e-10);
        assert!(d.is_real());
    }

    #[test]
    fn non_finite_symbol_is_rejected_only_where_populated() {
        let g = Grid::new(64, 2.0 * PI).unwrap();
        let f = Field::from_fn_real(&g, |x| (3.0 * x).cos());
        let bad = Symbol::general(c(0.0, 0.0), |xi: f64| {
            if (xi - 3.0).abs() < 1e-9 {
                c(f64::INFINITY, 0.0)
            } else {
                c(1.0, 0.0)
            }
        });
        assert!(matches!(
            apply_multiplier(&forward_transform(&f), &bad),
            Err(Error::NonFiniteSymbol { .. })
        ));
        let elsewhere = Symbol::general(c(0.0, 0.0), |xi: f64| {
            if (xi - 7.0).abs() < 1e-9 {
                c(f64::NAN, 0.0)
            } else {
                c(1.0, 0.0)
            }
        });
        assert!(apply_multiplier(&forward_transform(&f), &elsewhere).is_ok());
    }

    #[test]
    fn antiderivative_cases() {
        let g = Grid::new(1 << 10, 32.0 * PI).unwrap();
        let f = Field::from_fn_real(&g, f64::cos);
        let a = antiderivative(&f, MEAN_TOL).unwrap();
        assert!(a.max_abs_diff(&Field::from_fn_real(&g, f64::sin)) < 1e-10);

        let one = Field::from_fn_real(&g, |_| 1.0);
        assert!(matches!(
            antiderivative(&one, MEAN_TOL),
            Err(Error::MeanNotZero { .. })
        ));

        let length = 64.0;
        let g = Grid::new(1 << 12, length).unwrap();
        let f = Field::from_fn_real(&g, |x| -2.0 * x * (-x * x).exp());
        let a = antiderivative(&f, MEAN_TOL).unwrap();
        // The zero mode is removed, so the discrete mean of e^{-x²} comes off.
        let mean = PI.sqrt() / length;
        let want = Field::from_fn_real(&g, |x| (-x * x).exp() - mean);
        assert!(a.max_abs_diff(&want) < 1e-8);
        let back = derivative(&a);
        assert!(back.max_abs_diff(&f) < 1e-10);
    }

    #[test]
    fn propagator_single_mode_and_identity() {
        let g = Grid::new(256, 16.0 * PI).unwrap();
        let f = Field::from_fn_complex(&g, |x| Complex64::from_polar(1.0, x));
        let u = free_propagate(&f, PI, MEAN_TOL).unwrap();
        assert!(u.max_abs_diff(&f.scale(-1.0)) < 1e-12);
        let same = free_propagate(&f, 0.0, MEAN_TOL).unwrap();
        assert!(same.max_abs_diff(&f) == 0.0);
        let one = Field::from_fn_real(&g, |_| 1.0);
        assert!(free_propagate(&one, 1.0, MEAN_TOL).is_err());
    }

    #[test]
    fn free_wave_packet_moves_left() {
        // zero-mean packet at frequency ≈ 1: derivative of a modulated Gaussian
        let g = Grid::new(1 << 13, 1024.0).unwrap();
        let raw = Field::from_fn_real(&g, |x| x.sin() * (-x * x / 50.0).exp());
        let f = derivative(&raw);
        let u = free_propagate(&f, 100.0, MEAN_TOL).unwrap();
        let right = u
            .values()
            .iter()
            .zip(g.xs())
            .filter(|(_, &x)| x > 10.0)
            .map(|(v, _)| v.norm())
            .fold(0.0, f64::max);
        let left = u
            .values()
            .iter()
            .zip(g.xs())
            .filter(|(_, &x)| x < 0.0)
            .map(|(v, _)| v.norm())
            .fold(0.0, f64::max);
        assert!(right / left <= 0.05, "ratio = {}", right / left);
    }

    #[test]
    fn interpolation_reproduces_band_limited_function() {
        let g = Grid::new(128, 2.0 * PI).unwrap();
        let f = Field::from_fn_real(&g, |x| (3.0 * x).sin() + 0.5 * (x).cos());
        for x in [0.123, -1.7, 2.9] {
            let v = f.interpolate(x);
            let want = (3.0 * x).sin() + 0.5 * x.cos();
            assert!((v.re - want).abs() < 1e-12 && v.im == 0.0);
        }
    }

    #[test]
    fn taper_profile() {
        let w = edge_taper(100.0, 0.02);
        assert_eq!(w(0.0), 1.0);
        assert_eq!(w(47.9), 1.0);
        assert_eq!(w(-50.0), 0.0);
        assert!(w(49.0) > 0.0 && w(49.0) < 1.0);
    }

    fn band_limited(seed: &[f64], g: &Grid) -> Field {
        Field::from_fn_real(g, |x| {
            seed.iter()
                .enumerate()
                .map(|(m, a)| a * ((m + 1) as f64 * x * 2.0 * PI / g.length() + a).sin())
                .sum()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn round_trip_and_parseval(seed in proptest::collection::vec(-1.0f64..1.0, 1..20)) {
            let g = Grid::new(128, 17.0).unwrap();
            let f = band_limited(&seed, &g);
            let fh = forward_transform(&f);
            let back = inverse_transform(&fh);
            let scale = f.norm_inf().max(1e-300);
            prop_assert!(back.max_abs_diff(&f) <= 1e-12 * scale);
            let l2 = f.norm_l2();
            prop_assert!((l2 - fh.norm_l2()).abs() <= 1e-12 * l2.max(1e-300));
            // Hermitian symmetry of a real field
            let n = g.n();
            for k in 1..n / 2 {
                let a = fh.coeffs()[k];
                let b = fh.coeffs()[n - k];
                prop_assert!((a - b.conj()).norm() <= 1e-12 * scale);
            }
        }

        #[test]
        fn propagator_is_unitary_group(seed in proptest::collection::vec(-1.0f64..1.0, 1..20),
                                      s in -50.0f64..50.0, t in -50.0f64..50.0) {
            let g = Grid::new(128, 17.0).unwrap();
            let f = band_limited(&seed, &g);
            let us = free_propagate(&f, s, MEAN_TOL).unwrap();
            let ust = free_propagate(&us, t, MEAN_TOL).unwrap();
            let direct = free_propagate(&f, s + t, MEAN_TOL).unwrap();
            let l2 = f.norm_l2();
            prop_assert!((us.norm_l2() - l2).abs() <= 1e-12 * l2);
            prop_assert!(ust.max_abs_diff(&direct) <= 1e-11 * f.norm_inf());
        }
    }

    #[test]
    fn vector_field_conjugation() {
        // Spectrum concentrated near |ξ| = 4 so nothing reaches the seam.
        let g = Grid::new(1 << 11, 64.0).unwrap();
        let fh = SpectralField::from_fn(&g, Kind::Real, |xi| {
            let b = |z: f64| (-(z - 4.0) * (z - 4.0) / (2.0 * 0.16)).exp();
            c(b(xi) + b(-xi), 0.0)
        });
        let f = inverse_transform(&fh);
        for t in [0.5, 2.0, 10.0] {
            let u = free_propagate(&f, t, MEAN_TOL).unwrap();
            let d2 = antiderivative(&antiderivative(&u, MEAN_TOL).unwrap(), MEAN_TOL).unwrap();
            let ju = u.weighted(|x| x).sub(&d2.scale(t));
            let xf = f.weighted(|x| x);
            let rhs = free_propagate(&xf, t, MEAN_TOL).unwrap();
            let err = ju.max_abs_diff(&rhs) / rhs.norm_inf();
            assert!(err < 1e-10, "t={t} err={err:e}");
        }
    }
}
