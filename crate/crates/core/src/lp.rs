//! Scaled dyadic Littlewood–Paley projections and the space-time
//! hyperbolic/elliptic split of the positive-frequency part.
//!
//! Scales live on the lattice `2^{δℤ}`. The profile `σ` is even, equal to 1
//! on `|ξ| ≤ 1` and to 0 on `|ξ| ≥ 2^δ`; every derived symbol is a
//! difference of dilates of `σ`, so telescoping identities hold exactly.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::smooth::smoothstep;
use crate::spectral::{
    apply_multiplier, forward_transform, inverse_transform, Field, Grid, Kind, SpectralField,
    Symbol,
};

type Profile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Cutoff profile `σ` together with its scale parameter `δ`.
#[derive(Clone)]
pub struct CutoffSpec {
    delta: f64,
    outer: f64,
    profile: Option<Profile>,
}

impl fmt::Debug for CutoffSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CutoffSpec")
            .field("delta", &self.delta)
            .field("custom_profile", &self.profile.is_some())
            .finish()
    }
}

/// Build the exp-glue cutoff for scale parameter `δ > 0`.
pub fn build_cutoff(delta: f64) -> Result<CutoffSpec> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cutoff scale delta = {delta} must be positive"
        )));
    }
    Ok(CutoffSpec {
        delta,
        outer: 2f64.powf(delta),
        profile: None,
    })
}

impl CutoffSpec {
    /// Replace the profile; used to exercise invariant checks.
    pub fn with_profile(mut self, profile: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.profile = Some(Arc::new(profile));
        self
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `2^δ`, the outer edge of the transition annulus.
    pub fn ratio(&self) -> f64 {
        self.outer
    }

    /// Lattice point `2^{δm}`.
    pub fn scale(&self, m: i64) -> f64 {
        2f64.powf(self.delta * m as f64)
    }

    /// Lattice index of the scaled dyadic number nearest to `x > 0` in log scale.
    pub fn nearest_index(&self, x: f64) -> i64 {
        (x.log2() / self.delta).round() as i64
    }

    pub fn nearest(&self, x: f64) -> f64 {
        self.scale(self.nearest_index(x))
    }

    pub fn sigma(&self, xi: f64) -> f64 {
        if let Some(p) = &self.profile {
            return p(xi);
        }
        let a = xi.abs();
        if a <= 1.0 {
            1.0
        } else if a >= self.outer {
            0.0
        } else {
            1.0 - smoothstep((a - 1.0) / (self.outer - 1.0))
        }
    }

    /// `σ_{≤R}(ξ) = σ(ξ/R)`.
    pub fn le(&self, r: f64, xi: f64) -> f64 {
        self.sigma(xi / r)
    }

    /// `σ_{>R} = 1 - σ_{≤R}`.
    pub fn gt(&self, r: f64, xi: f64) -> f64 {
        1.0 - self.le(r, xi)
    }

    /// `σ_R(ξ) = σ(ξ/R) - σ(2^δ ξ/R)`.
    pub fn band(&self, r: f64, xi: f64) -> f64 {
        self.sigma(xi / r) - self.sigma(self.outer * xi / r)
    }

    /// `σ_{<R} = σ_{≤R} - σ_R`, i.e. `σ(2^δ ξ/R)`.
    pub fn lt(&self, r: f64, xi: f64) -> f64 {
        self.sigma(self.outer * xi / r)
    }

    /// `σ_{R₁≤·≤R₂} = σ_{≤R₂} - σ_{<R₁}`.
    pub fn between(&self, r1: f64, r2: f64, xi: f64) -> f64 {
        self.le(r2, xi) - self.lt(r1, xi)
    }

    /// Lattice indices whose bands jointly cover every nonzero grid frequency.
    pub fn covering_indices(&self, grid: &Grid) -> Vec<i64> {
        let lo = (grid.xi_min().log2() / self.delta).floor() as i64;
        let hi = (grid.xi_max().log2() / self.delta).ceil() as i64;
        (lo..=hi).collect()
    }

    /// Sanity check of the defining properties on a sample of points.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if (self.sigma(0.0) - 1.0).abs() > 0.0 {
            return Err(format!("sigma(0) = {} != 1", self.sigma(0.0)));
        }
        for i in 0..=400 {
            let xi = i as f64 * self.outer * 1.25 / 400.0;
            let s = self.sigma(xi);
            if !(0.0..=1.0).contains(&s) {
                return Err(format!("sigma({xi}) = {s} outside [0, 1]"));
            }
            if s != self.sigma(-xi) {
                return Err(format!("sigma not even at {xi}"));
            }
            if xi <= 1.0 && s != 1.0 {
                return Err(format!("sigma({xi}) = {s} != 1 on |xi| <= 1"));
            }
            if xi >= self.outer && s != 0.0 {
                return Err(format!("sigma({xi}) = {s} != 0 beyond 2^delta"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn keeps(self, xi: f64) -> bool {
        match self {
            Sign::Plus => xi > 0.0,
            Sign::Minus => xi < 0.0,
        }
    }
}

fn real_symbol(w: impl Fn(f64) -> f64) -> Symbol<impl Fn(f64) -> Complex64> {
    Symbol::real_preserving(Complex64::new(w(0.0), 0.0), move |xi| {
        Complex64::new(w(xi), 0.0)
    })
}

fn project_spectral(uh: &SpectralField, w: impl Fn(f64) -> f64, sign: Option<Sign>) -> SpectralField {
    match sign {
        None => apply_multiplier(uh, &real_symbol(w)),
        Some(s) => {
            let m = Symbol::general(Complex64::new(0.0, 0.0), move |xi: f64| {
                if s.keeps(xi) {
                    Complex64::new(w(xi), 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            });
            apply_multiplier(uh, &m)
        }
    }
    .expect("cutoff symbols are bounded")
}

/// `P_N u`.
pub fn project_band(u: &Field, n: f64, spec: &CutoffSpec) -> Field {
    let uh = forward_transform(u);
    inverse_transform(&project_spectral(&uh, |xi| spec.band(n, xi), None))
}

/// `P^± u`; the zero mode is removed.
pub fn project_sign(u: &Field, sign: Sign) -> Field {
    let uh = forward_transform(u);
    inverse_transform(&project_spectral(&uh, |_| 1.0, Some(sign)))
}

/// `P_N^± u`.
pub fn project_band_sign(u: &Field, n: f64, sign: Sign, spec: &CutoffSpec) -> Field {
    let uh = forward_transform(u);
    inverse_transform(&project_spectral(&uh, |xi| spec.band(n, xi), Some(sign)))
}

/// `P^+_{N₁≤·≤N₂} u`.
pub fn project_annulus_plus(u: &Field, n1: f64, n2: f64, spec: &CutoffSpec) -> Field {
    let uh = forward_transform(u);
    inverse_transform(&project_spectral(
        &uh,
        |xi| spec.between(n1, n2, xi),
        Some(Sign::Plus),
    ))
}

/// Spatial window `σ^hyp_N(t,x) = σ_{t/(3N²) ≤ · ≤ 3t/N²}(x) 1_{x<0}`.
pub fn hyp_window(spec: &CutoffSpec, t: f64, n: f64, x: f64) -> f64 {
    if x >= 0.0 {
        return 0.0;
    }
    let r = t / (n * n);
    spec.between(r / 3.0, 3.0 * r, x)
}

#[derive(Clone, Debug)]
pub struct BandParts {
    pub index: i64,
    pub scale: f64,
    /// `u_N^+`.
    pub plus: Field,
    /// `u_N^{hyp,+}`; zero for `N > t`.
    pub hyp: Field,
    /// `u_N^{ell,+} = u_N^+ - u_N^{hyp,+}`.
    pub ell: Field,
    /// `σ_N^hyp(t, x_j)`, all zeros for `N > t`.
    pub window: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DecompositionResult {
    pub t: f64,
    pub bands: Vec<BandParts>,
    /// `u^+ = P^+ u`.
    pub plus: Field,
    pub hyp: Field,
    pub ell: Field,
}

impl DecompositionResult {
    /// `u^{ell} := 2 Re u^{ell,+}`, the real elliptic part.
    pub fn ell_real(&self) -> Field {
        self.ell.real_part().scale(2.0)
    }
}

/// Band-by-band hyperbolic/elliptic split of `u^+` at time `t ≥ 1`.
pub fn hyp_ell_decompose(
    u: &Field,
    t: f64,
    spec: &CutoffSpec,
    exec: Exec,
) -> Result<DecompositionResult> {
    if !(t >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "hyperbolic/elliptic split needs t >= 1, got {t}"
        )));
    }
    let grid = u.grid().clone();
    let uh = forward_transform(u);
    let plus = inverse_transform(&project_spectral(&uh, |_| 1.0, Some(Sign::Plus)));
    let indices = spec.covering_indices(&grid);
    let bands = exec.map(&indices, |&m| {
        let scale = spec.scale(m);
        let plus_n = inverse_transform(&project_spectral(
            &uh,
            |xi| spec.band(scale, xi),
            Some(Sign::Plus),
        ));
        let window: Vec<f64> = if scale <= t {
            grid.xs().iter().map(|&x| hyp_window(spec, t, scale, x)).collect()
        } else {
            vec![0.0; grid.n()]
        };
        let hyp = Field::from_complex(
            &grid,
            plus_n
                .values()
                .iter()
                .zip(&window)
                .map(|(v, w)| v * w)
                .collect(),
        );
        let ell = plus_n.sub(&hyp);
        BandParts {
            index: m,
            scale,
            plus: plus_n,
            hyp,
            ell,
            window,
        }
    });
    let mut hyp = Field::zeros(&grid, Kind::Complex);
    for b in &bands {
        hyp = hyp.add(&b.hyp);
    }
    let ell = plus.sub(&hyp);
    Ok(DecompositionResult {
        t,
        bands,
        plus,
        hyp,
        ell,
    })
}

/// Number of lattice scales `N ≤ t` whose hyperbolic window is nonzero at `(t, x)`.
pub fn active_hyp_bands(spec: &CutoffSpec, t: f64, x: f64) -> usize {
    if x >= 0.0 {
        return 0;
    }
    // σ^hyp_N(t,x) ≠ 0 needs t/(3·2^δ N²) < |x| < 3·2^δ t/N²
    let span = 3.0 * spec.ratio();
    let lo = (t / (span * x.abs())).sqrt();
    let hi = (span * t / x.abs()).sqrt().min(t);
    if hi < lo {
        return 0;
    }
    let m_lo = (lo.log2() / spec.delta()).floor() as i64 - 1;
    let m_hi = (hi.log2() / spec.delta()).ceil() as i64 + 1;
    (m_lo..=m_hi)
        .map(|m| spec.scale(m))
        .filter(|&n| n <= t && hyp_window(spec, t, n, x) != 0.0)
        .count()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalizationRatio {
    pub ratio: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// Set when `P_N^+ u` vanishes and the ratio is reported as 0.
    pub degenerate: bool,
}

/// Parameters of a frequency/space localisation measurement.
#[derive(Clone, Copy, Debug)]
pub struct LocalizationParams {
    pub n: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub r: f64,
}

/// `‖(1-P^+_{N/2^δ≤·≤2^δN}) |∂ₓ|^a (|x|^b σ_R P_N^+ u)‖ / (N^{-c} R^{-a+b-c} ‖P_N^+ u‖)`.
pub fn localization_check(
    u: &Field,
    params: LocalizationParams,
    spec: &CutoffSpec,
) -> Result<LocalizationRatio> {
    let LocalizationParams { n, a, b, c, r } = params;
    if a < 0.0 || a + c < 0.0 || b < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "localization needs a >= 0, a + c >= 0, b >= 0 (a={a}, b={b}, c={c})"
        )));
    }
    let pn = project_band_sign(u, n, Sign::Plus, spec);
    let denom_norm = pn.norm_l2();
    if denom_norm == 0.0 {
        return Ok(LocalizationRatio {
            ratio: 0.0,
            numerator: 0.0,
            denominator: 0.0,
            degenerate: true,
        });
    }
    let weighted = pn.weighted(|x| {
        let ax = x.abs();
        let pow = if b == 0.0 { 1.0 } else { ax.powf(b) };
        pow * spec.band(r, x)
    });
    let wh = forward_transform(&weighted);
    let ratio_edge = spec.ratio();
    let outside = Symbol::general(Complex64::new(0.0, 0.0), move |xi: f64| {
        let keep = if xi > 0.0 {
            spec.between(n / ratio_edge, ratio_edge * n, xi)
        } else {
            0.0
        };
        let mag = if a == 0.0 { 1.0 } else { xi.abs().powf(a) };
        Complex64::new((1.0 - keep) * mag, 0.0)
    });
    let numer = apply_multiplier(&wh, &outside)?.norm_l2();
    let denominator = n.powf(-c) * r.powf(-a + b - c) * denom_norm;
    Ok(LocalizationRatio {
        ratio: numer / denominator,
        numerator: numer,
        denominator,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn spec1() -> CutoffSpec {
        build_cutoff(1.0).unwrap()
    }

    #[test]
    fn cutoff_basics() {
        assert!(build_cutoff(0.0).is_err());
        assert!(build_cutoff(-1.0).is_err());
        for delta in [1.0, 0.5, 0.25] {
            let s = build_cutoff(delta).unwrap();
            assert_eq!(s.sigma(0.0), 1.0);
            assert_eq!(s.sigma(s.ratio() * 1.01), 0.0);
            for i in 0..50 {
                let xi = i as f64 * 0.05;
                assert_eq!(s.sigma(xi), s.sigma(-xi));
            }
            s.validate().unwrap();
        }
    }

    #[test]
    fn corrupted_profile_fails_validation() {
        let s = spec1().with_profile(|xi: f64| if xi == 0.0 { 0.9 } else { 1.0 });
        assert!(s.validate().unwrap_err().contains("sigma(0)"));
    }

    #[test]
    fn band_sum_telescopes() {
        // Oracle: explicit summation of σ_N over N ∈ [2^-10, 2^10].
        let s = spec1();
        let xs: Vec<f64> = (0..4000)
            .map(|i| 2f64.powf(-9.0 + 18.0 * i as f64 / 3999.0))
            .collect();
        for &xi in &xs {
            let total: f64 = (-10..=10).map(|m| s.band(s.scale(m), xi)).sum();
            assert!((total - 1.0).abs() <= 1e-12, "xi={xi} total={total}");
            let total_neg: f64 = (-10..=10).map(|m| s.band(s.scale(m), -xi)).sum();
            assert!((total_neg - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn telescoping_annulus_identity() {
        let s = build_cutoff(0.5).unwrap();
        for i in 0..500 {
            let xi = i as f64 * 0.02;
            let (r1, r2) = (0.7, 3.1);
            let lhs = s.le(r2, xi) - s.lt(r1, xi);
            assert_eq!(lhs, s.between(r1, r2, xi));
            assert_eq!(s.lt(r1, xi), s.le(r1, xi) - s.band(r1, xi));
        }
    }

    #[test]
    fn band_projection_of_single_modes() {
        let g = Grid::new(256, 16.0 * PI).unwrap();
        let s = spec1();
        let f = Field::from_fn_real(&g, |x| x.cos());
        // σ_2(1) = σ(1/2) - σ(1) = 0 ... use N with σ_N(1) = 1: N = 1 gives σ(1) - σ(2) = 1
        let kept = project_band(&f, 1.0, &s);
        assert!(kept.max_abs_diff(&f) < 1e-12);
        let gone = project_band(&f, 8.0, &s);
        assert!(gone.norm_inf() < 1e-12);
    }

    #[test]
    fn sign_projection() {
        let g = Grid::new(256, 16.0 * PI).unwrap();
        let f = Field::from_fn_real(&g, |x| x.cos());
        let p = project_sign(&f, Sign::Plus);
        let want = Field::from_fn_complex(&g, |x| Complex64::from_polar(0.5, x));
        assert!(p.max_abs_diff(&want) < 1e-12);
        let z = project_sign(&Field::zeros(&g, Kind::Real), Sign::Plus);
        assert_eq!(z.norm_inf(), 0.0);
    }

    #[test]
    fn sign_projection_splits_mass_evenly() {
        let g = Grid::new(1 << 11, 64.0).unwrap();
        let f = crate::spectral::derivative(&Field::from_fn_real(&g, |x| {
            (-(x - 1.0) * (x - 1.0)).exp() * (1.0 + 0.3 * x)
        }));
        let p = project_sign(&f, Sign::Plus);
        let m = project_sign(&f, Sign::Minus);
        let l2 = f.norm_l2();
        assert!((p.norm_l2() - l2 / 2f64.sqrt()).abs() < 1e-12 * l2);
        assert!((m.norm_l2() - l2 / 2f64.sqrt()).abs() < 1e-12 * l2);
        assert!(p.max_abs_diff(&m.conj()) < 1e-13);
        let rebuilt = p.real_part().scale(2.0);
        assert!(rebuilt.max_abs_diff(&f) < 1e-13);
    }

    #[test]
    fn almost_orthogonality_on_random_data() {
        let g = Grid::new(1 << 10, 50.0).unwrap();
        let s = spec1();
        let mut state = 12345u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for _ in 0..5 {
            let coeffs: Vec<(f64, f64)> = (0..40).map(|_| (rnd(), rnd())).collect();
            let f = Field::from_fn_real(&g, |x| {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(m, (a, b))| {
                        let xi = 2.0 * PI * (m + 1) as f64 * 3.0 / g.length();
                        a * (xi * x).cos() + b * (xi * x).sin()
                    })
                    .sum()
            });
            let total: f64 = s
                .covering_indices(&g)
                .iter()
                .map(|&m| project_band(&f, s.scale(m), &s).norm_l2().powi(2))
                .sum();
            let ratio = f.norm_l2().powi(2) / total;
            assert!((1.0 / 3.0..=3.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn partition_of_unity_on_grid() {
        let g = Grid::new(1 << 12, 80.0).unwrap();
        let s = spec1();
        let f = crate::spectral::derivative(&Field::from_fn_real(&g, |x| (-x * x).exp()));
        let mut sum = Field::zeros(&g, Kind::Real);
        for m in s.covering_indices(&g) {
            sum = sum.add(&project_band(&f, s.scale(m), &s));
        }
        assert!(sum.max_abs_diff(&f) < 1e-10);
    }

    #[test]
    fn decomposition_invariants() {
        let g = Grid::new(1 << 12, 400.0).unwrap();
        let s = spec1();
        let u0 = crate::spectral::derivative(&Field::from_fn_real(&g, |x| (-x * x).exp()));
        let u = crate::spectral::free_propagate(&u0, 20.0, 1e-10).unwrap();
        let d = hyp_ell_decompose(&u, 20.0, &s, Exec::Parallel).unwrap();
        let mut hyp_sum = Field::zeros(&g, Kind::Complex);
        for b in &d.bands {
            let peak = b.plus.norm_inf();
            assert!(b.hyp.add(&b.ell).max_abs_diff(&b.plus) <= f64::EPSILON * peak);
            for ((v, &x), w) in b.hyp.values().iter().zip(g.xs()).zip(&b.window) {
                if x >= 0.0 {
                    assert_eq!(v.norm(), 0.0);
                }
                if *w != 0.0 {
                    let r = 20.0 / (b.scale * b.scale);
                    assert!(x.abs() > r / (3.0 * s.ratio()) && x.abs() < 3.0 * s.ratio() * r);
                }
            }
            if b.scale > 20.0 {
                assert_eq!(b.hyp.norm_inf(), 0.0);
            }
            hyp_sum = hyp_sum.add(&b.hyp);
        }
        assert_eq!(hyp_sum.max_abs_diff(&d.hyp), 0.0);
        assert!(d.hyp.add(&d.ell).max_abs_diff(&d.plus) < 1e-15);
        assert!(d.hyp.norm_l2() > 0.5 * d.plus.norm_l2());

        let seq = hyp_ell_decompose(&u, 20.0, &s, Exec::Sequential).unwrap();
        assert_eq!(seq.hyp.max_abs_diff(&d.hyp), 0.0);

        let z = hyp_ell_decompose(&Field::zeros(&g, Kind::Real), 5.0, &s, Exec::Parallel).unwrap();
        assert_eq!(z.hyp.norm_inf() + z.ell.norm_inf(), 0.0);
        assert!(hyp_ell_decompose(&u, 0.5, &s, Exec::Parallel).is_err());
    }

    #[test]
    fn active_band_count_is_bounded() {
        for delta in [1.0, 0.5, 0.25] {
            let s = build_cutoff(delta).unwrap();
            let bound = (5.0 / delta).ceil() as usize;
            for i in 0..60 {
                let t = 2f64.powf(i as f64 * 0.25);
                for j in 0..120 {
                    let x = -2f64.powf(-10.0 + j as f64 * 0.25);
                    if -x * t >= 1.0 / (3.0 * s.ratio()) {
                        let count = active_hyp_bands(&s, t, x);
                        assert!(count <= bound, "delta={delta} t={t} x={x} count={count}");
                    }
                }
            }
        }
    }

    #[test]
    fn localization_cases() {
        let g = Grid::new(1 << 11, 100.0).unwrap();
        let s = spec1();
        let zero = Field::zeros(&g, Kind::Real);
        let p = LocalizationParams { n: 1.0, a: 0.0, b: 0.0, c: 0.0, r: 1.0 };
        let r = localization_check(&zero, p, &s).unwrap();
        assert!(r.degenerate && r.ratio == 0.0);

        let u = crate::spectral::derivative(&Field::from_fn_real(&g, |x| (-x * x / 4.0).exp()));
        let big = LocalizationParams { r: 1e6, ..p };
        let r = localization_check(&u, big, &s).unwrap();
        assert!(r.numerator < 1e-12);
        assert!(localization_check(&u, LocalizationParams { a: -1.0, ..p }, &s).is_err());
    }
}
