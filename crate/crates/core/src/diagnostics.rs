//! Norms, vector fields and trend fits evaluated on snapshots.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{nonlinearity, Dealias, Snapshot, SolverConfig};
use crate::exec::Exec;
use crate::lp::{self, CutoffSpec};
use crate::spectral::{
    antiderivative_spectral, derivative, edge_taper, forward_transform, inverse_transform, Field,
    Grid,
};

/// Fraction of the box at each end over which `x·(·)` is ramped to zero.
pub const SEAM_TAPER: f64 = 0.02;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub t: f64,
    pub l2: f64,
    pub hs: f64,
    pub hm1: f64,
    pub jdx_l2: f64,
    pub xs: f64,
    pub linf: f64,
    pub ux_linf: f64,
    pub su_l2: f64,
    pub wrapfrac: f64,
}

impl NormRecord {
    pub const COLUMNS: [&'static str; 10] = [
        "t", "L2", "Hs", "Hm1", "JdxL2", "Xs", "Linf", "uxLinf", "SuL2", "wrapfrac",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.t,
            self.l2,
            self.hs,
            self.hm1,
            self.jdx_l2,
            self.xs,
            self.linf,
            self.ux_linf,
            self.su_l2,
            self.wrapfrac,
        ]
    }
}

/// `x·f` with the seam taper applied.
pub fn x_times(f: &Field) -> Field {
    let taper = edge_taper(f.grid().length(), SEAM_TAPER);
    f.weighted(|x| x * taper(x))
}

fn jdx_from_parts(t: f64, ux: &Field, antideriv: &Field) -> Field {
    let xu = x_times(ux);
    if t == 0.0 {
        xu
    } else {
        xu.sub(&antideriv.scale(t))
    }
}

/// `J∂ₓu = x·u_x - t·∂ₓ⁻¹u` for a zero-mean field.
pub fn j_dx(u: &Field, t: f64, mean_tol: f64) -> Result<Field> {
    let uh = forward_transform(u);
    uh.check_zero_mean(mean_tol)?;
    let ux = derivative(u);
    let anti = inverse_transform(&antiderivative_spectral(&uh));
    Ok(jdx_from_parts(t, &ux, &anti))
}

/// `J∂ₓu` from the cached fields of a snapshot.
pub fn j_field(s: &Snapshot) -> Field {
    jdx_from_parts(s.t, &s.ux, &s.antideriv)
}

/// `J₊ f = √|x| f - i√t ∂ₓ⁻¹ f` for a zero-mean (possibly complex) field.
pub fn jplus_field(t: f64, target: &Field, mean_tol: f64) -> Result<Field> {
    let fh = forward_transform(target);
    fh.check_zero_mean(mean_tol)?;
    let root = target.weighted(|x| x.abs().sqrt());
    if t == 0.0 {
        return Ok(root);
    }
    let anti = inverse_transform(&antiderivative_spectral(&fh));
    Ok(root.sub(&anti.scale_complex(Complex64::new(0.0, t.sqrt()))))
}

/// `Su = -t ∂ₓ(u^p) + J∂ₓu - u`, using the equation to trade `t∂ₜ` for the flux.
pub fn s_field(s: &Snapshot, p: u32) -> Field {
    let ju = j_field(s).sub(&s.u);
    if s.t == 0.0 {
        return ju;
    }
    let flux = nonlinearity(&s.u, p, Dealias::Pad2x);
    ju.sub(&flux.scale(s.t))
}

/// Share of `∫|u|²` lying within `edge·L` of either end of the box.
pub fn wrap_fraction(u: &Field, edge: f64) -> f64 {
    let grid = u.grid();
    let inner = (0.5 - edge) * grid.length();
    let (mut outer, mut total) = (0.0, 0.0);
    for (v, &x) in u.values().iter().zip(grid.xs()) {
        let m = v.norm_sqr();
        total += m;
        if x.abs() >= inner {
            outer += m;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        outer / total
    }
}

/// `sup |f|` of the trigonometric interpolant, not just of its samples.
///
/// The few largest local maxima of the samples are refined by golden-section
/// search on the spectral interpolant within one cell on either side.
pub fn sup_norm(f: &Field) -> f64 {
    const CANDIDATES: usize = 3;
    const ITERS: usize = 48;
    let vals = f.values();
    let n = vals.len();
    let mut peaks: Vec<(f64, usize)> = (0..n)
        .filter(|&j| {
            let m = vals[j].norm();
            m > 0.0 && m >= vals[(j + n - 1) % n].norm() && m >= vals[(j + 1) % n].norm()
        })
        .map(|j| (vals[j].norm(), j))
        .collect();
    if peaks.is_empty() {
        return 0.0;
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0));
    peaks.truncate(CANDIDATES);
    let fh = forward_transform(f);
    let grid = f.grid();
    let dx = grid.dx();
    let at = |x: f64| fh.eval_at(x).norm();
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    peaks
        .iter()
        .map(|&(m, j)| {
            let x0 = grid.xs()[j];
            let (mut a, mut b) = (x0 - dx, x0 + dx);
            let (mut c, mut d) = (b - phi * (b - a), a + phi * (b - a));
            let (mut fc, mut fd) = (at(c), at(d));
            for _ in 0..ITERS {
                if fc > fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - phi * (b - a);
                    fc = at(c);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + phi * (b - a);
                    fd = at(d);
                }
            }
            m.max(fc).max(fd)
        })
        .fold(0.0, f64::max)
}

fn xs_from_parts(hs: f64, hm1: f64, jdx: f64) -> f64 {
    (hs * hs + hm1 * hm1 + jdx * jdx).sqrt()
}

/// `‖u‖_{X^s}` of an arbitrary zero-mean real field at time `t`.
pub fn xs_norm(u: &Field, t: f64, s: f64, mean_tol: f64) -> Result<f64> {
    let uh = forward_transform(u);
    let jdx = j_dx(u, t, mean_tol)?.norm_l2();
    Ok(xs_from_parts(uh.norm_hs(s), uh.norm_hdot(-1.0), jdx))
}

pub fn norm_record(s: &Snapshot, cfg: &SolverConfig) -> Result<NormRecord> {
    let uh = forward_transform(&s.u);
    let hs = uh.norm_hs(cfg.sobolev_s);
    let hm1 = uh.norm_hdot(-1.0);
    let jdx = j_field(s).norm_l2();
    Ok(NormRecord {
        t: s.t,
        l2: uh.norm_l2(),
        hs,
        hm1,
        jdx_l2: jdx,
        xs: xs_from_parts(hs, hm1, jdx),
        linf: sup_norm(&s.u),
        ux_linf: sup_norm(&s.ux),
        su_l2: s_field(s, cfg.exponent).norm_l2(),
        wrapfrac: wrap_fraction(&s.u, cfg.wrap_edge),
    })
}

/// Least-squares line through `(log t, log y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit in log space.
    pub residual: f64,
    pub samples: usize,
}

pub const MIN_FIT_SAMPLES: usize = 8;

/// Fit `log y = slope · log t + intercept` over `t ∈ [t1, t2]`.
pub fn decay_fit(series: &[(f64, f64)], window: (f64, f64)) -> Result<DecayFit> {
    let (t1, t2) = window;
    let slack = 1e-9;
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= t1 * (1.0 - slack) && *t <= t2 * (1.0 + slack))
        .copied()
        .collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_SAMPLES,
            got: pts.len(),
        });
    }
    if let Some((t, y)) = pts.iter().find(|(t, y)| !(*t > 0.0 && *y > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "log-log fit needs positive samples, got ({t}, {y})"
        )));
    }
    let logs: Vec<(f64, f64)> = pts.iter().map(|(t, y)| (t.ln(), y.ln())).collect();
    let (slope, intercept) = least_squares(&logs);
    let residual = (logs
        .iter()
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum::<f64>()
        / logs.len() as f64)
        .sqrt();
    Ok(DecayFit {
        slope,
        intercept,
        residual,
        samples: logs.len(),
    })
}

/// Ordinary least squares `y = a x + b`.
pub fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    (slope, my - slope * mx)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingCheck {
    pub lambda: f64,
    pub ratio: f64,
    pub degenerate: bool,
}

/// `t^{1/2}‖u_x‖∞ / (‖u‖_{Ḣ⁴}^{1/2} ‖J∂ₓu‖^{1/2})`, or `None` when undefined.
pub fn scale_invariant(u: &Field, t: f64, mean_tol: f64) -> Result<Option<f64>> {
    let uh = forward_transform(u);
    let num = t.sqrt() * derivative(u).norm_inf();
    let den = (uh.norm_hdot(4.0) * j_dx(u, t, mean_tol)?.norm_l2()).sqrt();
    Ok(if den > 0.0 && num > 0.0 {
        Some(num / den)
    } else {
        None
    })
}

/// Compare the invariant quotient of `u` at `t` with that of
/// `u_λ(x) = λ⁻¹u(λx)` at `λt` on the grid shrunk by `λ`.
pub fn scaling_selftest(u: &Field, t: f64, lambda: f64, mean_tol: f64) -> Result<ScalingCheck> {
    if !(lambda > 0.0 && lambda.log2().fract() == 0.0) {
        return Err(Error::InvalidParameter(format!(
            "scaling factor {lambda} is not a power of two"
        )));
    }
    let small: Grid = u.grid().rescaled(lambda)?;
    let ul = Field::from_real(&small, u.re().iter().map(|v| v / lambda).collect());
    let a = scale_invariant(u, t, mean_tol)?;
    let b = scale_invariant(&ul, lambda * t, mean_tol)?;
    Ok(match (a, b) {
        (Some(a), Some(b)) => ScalingCheck {
            lambda,
            ratio: a / b,
            degenerate: false,
        },
        _ => ScalingCheck {
            lambda,
            ratio: f64::NAN,
            degenerate: true,
        },
    })
}

/// `(Σ_N ‖P_N u‖²_{X^s})^{1/2} / ‖u‖_{X^s}` over bands covering the grid.
pub fn band_xs_ratio(
    u: &Field,
    t: f64,
    s: f64,
    spec: &CutoffSpec,
    mean_tol: f64,
    exec: Exec,
) -> Result<f64> {
    let whole = xs_norm(u, t, s, mean_tol)?;
    let indices = spec.covering_indices(u.grid());
    let parts = exec.try_map(&indices, |&m| {
        let pn = lp::project_band(u, spec.scale(m), spec);
        xs_norm(&pn, t, s, mean_tol).map(|v| v * v)
    })?;
    Ok(parts.iter().sum::<f64>().sqrt() / whole)
}

/// Empirical constants of the pointwise and weighted hyperbolic/elliptic bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitorRecord {
    pub t: f64,
    pub hyp: f64,
    pub hyp_x: f64,
    pub ell: f64,
    pub ell_x: f64,
    pub weighted: f64,
}

impl MonitorRecord {
    pub const COLUMNS: [&'static str; 5] = ["mon_hyp", "mon_hyp_x", "mon_ell", "mon_ell_x", "mon_weighted"];

    pub fn values(&self) -> [f64; 5] {
        [self.hyp, self.hyp_x, self.ell, self.ell_x, self.weighted]
    }
}

fn sup_ratio(f: &Field, weight: impl Fn(f64) -> f64) -> f64 {
    f.values()
        .iter()
        .zip(f.grid().xs())
        .filter(|(v, _)| v.norm() > 0.0)
        .map(|(v, &x)| v.norm() / weight(x))
        .fold(0.0, f64::max)
}

/// Ratios of the hyperbolic/elliptic parts to their predicted bounds at `t ≥ 1`.
pub fn monitor_record(
    s: &Snapshot,
    sobolev: f64,
    spec: &CutoffSpec,
    mean_tol: f64,
    exec: Exec,
) -> Result<MonitorRecord> {
    let t = s.t;
    let xs = s.norms.xs;
    if xs == 0.0 {
        return Ok(MonitorRecord {
            t,
            ..MonitorRecord::default()
        });
    }
    let dec = lp::hyp_ell_decompose(&s.u, t, spec, exec)?;
    let hyp_x = derivative(&dec.hyp);
    let ell = dec.ell_real();
    let ell_x = derivative(&ell);
    let scale = t.powf(-0.5) * xs;
    let hyp_bound = |lo: f64, hi: f64| {
        move |x: f64| {
            let r = x.abs() / t;
            scale * r.powf(lo).min(r.powf(hi))
        }
    };
    let log = 1.0 + t.ln();
    let ell_rate = (2.0 * sobolev - 1.0) / (2.0 * sobolev + 2.0);
    let ellx_rate = (2.0 * sobolev - 3.0) / (2.0 * sobolev + 2.0);
    let jp = jplus_field(t, &hyp_x, mean_tol)?;
    Ok(MonitorRecord {
        t,
        hyp: sup_ratio(&dec.hyp, hyp_bound(sobolev / 4.0 - 0.5, -0.75)),
        hyp_x: sup_ratio(&hyp_x, hyp_bound(sobolev / 4.0 - 1.0, -1.25)),
        ell: ell.norm_inf() / (t.powf(-ell_rate) * log * xs),
        ell_x: ell_x.norm_inf() / (t.powf(-ellx_rate) * log * xs),
        weighted: jp.weighted(|x| x.abs().sqrt()).norm_l2() / xs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::gaussian_derivative;
    use crate::smooth::Bump;
    use crate::spectral::Kind;
    use crate::spectral::free_propagate;

    #[test]
    fn sup_norm_finds_off_grid_peaks() {
        let g = Grid::new(256, 64.0).unwrap();
        let shift = 0.37 * g.dx();
        let k = 2.0 * std::f64::consts::PI * 5.0 / 64.0;
        let f = Field::from_fn_real(&g, |x| 1.5 * (k * (x - shift)).cos());
        assert!(f.norm_inf() < 1.5 - 1e-6);
        assert!((sup_norm(&f) - 1.5).abs() < 1e-12, "{}", sup_norm(&f));
        assert_eq!(sup_norm(&Field::zeros(&g, Kind::Real)), 0.0);
    }

    fn band_data(grid: &Grid) -> Field {
        // Spectrum concentrated near |ξ| = 3, built as a derivative so the mean is zero.
        let f = Field::from_fn_real(grid, |x| (-x * x / 32.0).exp() * (3.0 * x).cos());
        derivative(&f)
    }

    #[test]
    fn j_at_time_zero_is_x_times_derivative() {
        let g = Grid::new(1024, 64.0).unwrap();
        let u = gaussian_derivative(&g, 0.1, 1.0);
        let j = j_dx(&u, 0.0, 1e-10).unwrap();
        let want = derivative(&u).weighted(|x| x);
        assert!(j.max_abs_diff(&want) < 1e-12);
        let z = j_dx(&Field::zeros(&g, Kind::Real), 3.0, 1e-10).unwrap();
        assert_eq!(z.norm_inf(), 0.0);
    }

    #[test]
    fn j_on_free_solution_matches_conjugated_weight() {
        // J∂ₓ e^{t∂ₓ⁻¹}u₀ = e^{t∂ₓ⁻¹}(x ∂ₓu₀)
        let g = Grid::new(4096, 256.0).unwrap();
        let u0 = band_data(&g);
        let t = 10.0;
        let u = free_propagate(&u0, t, 1e-10).unwrap();
        let lhs = j_dx(&u, t, 1e-10).unwrap();
        let rhs = free_propagate(&derivative(&u0).weighted(|x| x), t, 1e-8).unwrap();
        let err = lhs.max_abs_diff(&rhs) / rhs.norm_inf();
        assert!(err < 1e-8, "err = {err:e}");
        let norm_oracle = derivative(&u0).weighted(|x| x).norm_l2();
        assert!((lhs.norm_l2() - norm_oracle).abs() < 1e-8 * norm_oracle);
    }

    #[test]
    fn jplus_trivial_cases() {
        let g = Grid::new(256, 32.0).unwrap();
        assert_eq!(
            jplus_field(2.0, &Field::zeros(&g, Kind::Complex), 1e-10)
                .unwrap()
                .norm_inf(),
            0.0
        );
        let f = derivative(&Field::from_fn_real(&g, |x| (-x * x).exp()));
        let j = jplus_field(0.0, &f, 1e-10).unwrap();
        assert!(j.max_abs_diff(&f.weighted(|x| x.abs().sqrt())) < 1e-15);
    }

    #[test]
    fn jplus_factorises_the_phase_derivative() {
        // For w = ∂ₓ(e^{iφ}h) = e^{iφ}g: ∂ₓg = |x|^{-1/2} e^{-iφ} J₊∂ₓw on x < 0.
        let t = 1.0f64;
        let g = Grid::new(4096, 64.0).unwrap();
        let bump = Bump::unit(2.0);
        let phi = |x: f64| -2.0 * (t * x.abs()).sqrt();
        let phi_x = |x: f64| (t / x.abs()).sqrt();
        let h = |x: f64| bump.eval(x + 4.0);
        let hx = |x: f64| bump.deriv(x + 4.0);
        let gfun = |x: f64| Complex64::new(hx(x), phi_x(x) * h(x));
        let w = Field::from_fn_complex(&g, |x| {
            if x < -1.0 {
                Complex64::from_polar(1.0, phi(x)) * gfun(x)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let g_field = Field::from_fn_complex(&g, |x| if x < -1.0 { gfun(x) } else { 0.0.into() });
        let lhs = derivative(&g_field);
        let jp = jplus_field(t, &derivative(&w), 1e-10).unwrap();
        let mut err = 0.0f64;
        for (j, &x) in g.xs().iter().enumerate() {
            if (-6.0..-2.0).contains(&x) {
                let rhs = jp.values()[j] * Complex64::from_polar(1.0, -phi(x)) / x.abs().sqrt();
                err = err.max((rhs - lhs.values()[j]).norm());
            }
        }
        let scale = lhs.norm_inf();
        assert!(err < 1e-6 * scale, "err = {err:e}");
    }

    #[test]
    fn decay_fit_recovers_power_laws() {
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|k| {
                let t = 2f64.powf(k as f64 / 4.0);
                (t, t.powf(-0.5))
            })
            .collect();
        let fit = decay_fit(&pts, (1.0, 100.0)).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = pts.iter().map(|&(t, _)| (t, 3.0)).collect();
        assert!(decay_fit(&flat, (1.0, 100.0)).unwrap().slope.abs() < 1e-12);
        assert!(matches!(
            decay_fit(&pts[..5], (1.0, 100.0)),
            Err(Error::InsufficientData { needed: 8, got: 5 })
        ));
    }

    #[test]
    fn scaling_quotient_is_invariant() {
        let g = Grid::new(2048, 128.0).unwrap();
        let u = gaussian_derivative(&g, 0.1, 1.0);
        for lambda in [2.0, 4.0] {
            let r = scaling_selftest(&u, 3.0, lambda, 1e-10).unwrap();
            assert!(!r.degenerate);
            assert!((r.ratio - 1.0).abs() < 1e-10, "λ={lambda}: {}", r.ratio);
        }
        let z = scaling_selftest(&Field::zeros(&g, Kind::Real), 3.0, 2.0, 1e-10).unwrap();
        assert!(z.degenerate);
        assert!(scaling_selftest(&u, 3.0, 3.0, 1e-10).is_err());
    }

    #[test]
    fn xs_components_and_band_equivalence() {
        let g = Grid::new(2048, 128.0).unwrap();
        let u = gaussian_derivative(&g, 0.1, 1.0);
        let uh = forward_transform(&u);
        let x = xs_norm(&u, 2.0, 4.5, 1e-10).unwrap();
        let j = j_dx(&u, 2.0, 1e-10).unwrap().norm_l2();
        let direct = uh.norm_hs(4.5).powi(2) + uh.norm_hdot(-1.0).powi(2) + j * j;
        assert!((x * x - direct).abs() <= 1e-12 * direct);
        let spec = lp::build_cutoff(1.0).unwrap();
        let r = band_xs_ratio(&u, 2.0, 4.5, &spec, 1e-10, Exec::Sequential).unwrap();
        assert!((1.0 / 3.0..=3.0).contains(&r), "ratio {r}");
    }

    #[test]
    fn wrap_fraction_counts_edge_mass() {
        let g = Grid::new(1000usize.next_power_of_two(), 100.0).unwrap();
        let inside = Field::from_fn_real(&g, |x| (-x * x).exp());
        assert!(wrap_fraction(&inside, 0.05) < 1e-30);
        let edge = Field::from_fn_real(&g, |x| if x.abs() > 48.0 { 1.0 } else { 0.0 });
        assert_eq!(wrap_fraction(&edge, 0.05), 1.0);
        assert_eq!(wrap_fraction(&Field::zeros(&g, Kind::Real), 0.05), 0.0);
    }

    #[test]
    fn s_field_at_time_zero() {
        let cfg = SolverConfig {
            n: 1024,
            length: 64.0,
            ..SolverConfig::default()
        };
        let g = cfg.grid().unwrap();
        let u = gaussian_derivative(&g, 0.1, 1.0);
        let snap = Snapshot::from_field(u.clone(), 0.0, &cfg).unwrap();
        let su = s_field(&snap, 3);
        let want = derivative(&u).weighted(|x| x).sub(&u);
        assert!(su.max_abs_diff(&want) < 1e-12);
    }
}
