//! Fourier-side evaluation of the explicit family `φ = F⁻¹[χ((·-2N)/N)]`
//! on which the weighted decay inequality with index `(2-2ρ)/(1-2ρ)` fails,
//! and the corrected index `(4-2ρ)/(1-2ρ)` under which it holds.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diagnostics::least_squares;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::smooth::Bump;
use crate::spectral::SQRT_2PI;

/// Relative change allowed when the quadrature resolution is doubled.
pub const QUAD_TOL: f64 = 1e-8;
const START_PANELS: usize = 256;
const MAX_PANELS: usize = 1 << 18;
/// Number of `x` samples used for the supremum in [`lhs`].
pub const LHS_SAMPLES: usize = 1 << 12;

#[derive(Clone, Copy, Debug)]
pub struct CounterexampleCase {
    pub n: f64,
    pub rho: f64,
    /// `log t = (2 + 1/(2ρ)) log N`; `t` itself may overflow for small `ρ`.
    pub log_t: f64,
    pub chi: Bump,
}

impl CounterexampleCase {
    pub fn new(n: f64, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 0.5) {
            return Err(Error::InvalidParameter(format!("rho = {rho} must lie in (0, 1/2)")));
        }
        if !(n >= 1.0) {
            return Err(Error::InvalidParameter(format!("N = {n} must be at least 1")));
        }
        Ok(CounterexampleCase {
            n,
            rho,
            log_t: (2.0 + 1.0 / (2.0 * rho)) * n.ln(),
            chi: Bump::unit(1.0),
        })
    }

    pub fn t(&self) -> f64 {
        self.log_t.exp()
    }

    /// `χ̃(ξ) = χ((ξ - 2N)/N)`, supported on `[N, 3N]`.
    pub fn chi_tilde(&self, xi: f64) -> f64 {
        self.chi.eval((xi - 2.0 * self.n) / self.n)
    }

    /// `(ξ/N) χ'((ξ - 2N)/N)`.
    fn chi_tilde_dilation(&self, xi: f64) -> f64 {
        xi / self.n * self.chi.deriv((xi - 2.0 * self.n) / self.n)
    }

    /// Interior trapezoid nodes on `[N, 3N]` with `m` panels and the panel width.
    fn nodes(&self, m: usize) -> (Vec<f64>, f64) {
        let h = 2.0 * self.n / m as f64;
        ((1..m).map(|j| self.n + j as f64 * h).collect(), h)
    }
}

/// `log Σ exp(l_j)` without overflow.
fn log_sum_exp(ls: impl Iterator<Item = f64> + Clone) -> f64 {
    let peak = ls.clone().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return peak;
    }
    peak + ls.map(|l| (l - peak).exp()).sum::<f64>().ln()
}

/// Repeat `eval(m)` with doubled panels until two successive values agree.
fn converge(mut eval: impl FnMut(usize) -> f64, log_scale: bool) -> Result<f64> {
    let mut m = START_PANELS;
    let mut prev = eval(m);
    loop {
        m *= 2;
        let next = eval(m);
        let change = if log_scale {
            (next - prev).exp_m1().abs()
        } else if next == 0.0 {
            (next - prev).abs()
        } else {
            ((next - prev) / next).abs()
        };
        if change <= QUAD_TOL {
            return Ok(next);
        }
        if m >= MAX_PANELS {
            return Err(Error::QuadratureUnderResolved { change });
        }
        prev = next;
    }
}

/// `log ‖φ‖_{H^s}` with `‖φ‖²_{H^s} = ∫⟨ξ⟩^{2s} χ̃² dξ`.
pub fn log_hs_norm(case: &CounterexampleCase, s: f64) -> Result<f64> {
    converge(
        |m| {
            let (xs, h) = case.nodes(m);
            let terms = xs.iter().filter_map(|&xi| {
                let c = case.chi_tilde(xi);
                (c > 0.0).then(|| s * (1.0 + xi * xi).ln() + 2.0 * c.ln())
            });
            0.5 * (log_sum_exp(terms) + h.ln())
        },
        true,
    )
}

/// Same norm computed from `U(-t)φ`, whose transform carries the unit phase `e^{it/ξ}`.
pub fn log_hs_norm_evolved(case: &CounterexampleCase, s: f64) -> Result<f64> {
    let t = case.t();
    converge(
        |m| {
            let (xs, h) = case.nodes(m);
            let terms = xs.iter().filter_map(|&xi| {
                let c = Complex64::from_polar(case.chi_tilde(xi), t / xi).norm();
                (c > 0.0).then(|| s * (1.0 + xi * xi).ln() + 2.0 * c.ln())
            });
            0.5 * (log_sum_exp(terms) + h.ln())
        },
        true,
    )
}

/// `log ‖x∂ₓU(-t)φ‖_{L²}`.
pub fn log_weighted_norm(case: &CounterexampleCase) -> Result<f64> {
    // ∫[(χ̃ + (ξ/N)χ')² + (t/ξ)² χ̃²] = t² ∫[((χ̃ + (ξ/N)χ')/t)² + χ̃²/ξ²]
    let inv_t = (-case.log_t).exp();
    let rest = converge(
        |m| {
            let (xs, h) = case.nodes(m);
            xs.iter()
                .map(|&xi| {
                    let c = case.chi_tilde(xi);
                    let a = (c + case.chi_tilde_dilation(xi)) * inv_t;
                    a * a + (c / xi) * (c / xi)
                })
                .sum::<f64>()
                * h
        },
        false,
    )?;
    Ok(case.log_t + 0.5 * rest.ln())
}

/// `‖∂ₓφ‖_{L∞}`, the supremum over `|x| ≤ 10/N` of
/// `|(2π)^{-1/2} ∫ iξ χ̃(ξ) e^{ixξ} dξ|`.
pub fn lhs(case: &CounterexampleCase) -> Result<f64> {
    lhs_over(case, 10.0 / case.n)
}

pub fn lhs_over(case: &CounterexampleCase, extent: f64) -> Result<f64> {
    let xs: Vec<f64> = (0..=LHS_SAMPLES)
        .map(|j| -extent + 2.0 * extent * j as f64 / LHS_SAMPLES as f64)
        .collect();
    converge(
        |m| {
            let (nodes, h) = case.nodes(m);
            let weights: Vec<f64> = nodes.iter().map(|&xi| xi * case.chi_tilde(xi)).collect();
            xs.iter()
                .map(|&x| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (&xi, &w) in nodes.iter().zip(&weights) {
                        if w != 0.0 {
                            acc += Complex64::from_polar(w, x * xi);
                        }
                    }
                    acc.norm()
                })
                .fold(0.0, f64::max)
                * h
                / SQRT_2PI
        },
        false,
    )
}

/// `(2-2ρ)/(1-2ρ)`.
pub fn original_index(rho: f64) -> f64 {
    (2.0 - 2.0 * rho) / (1.0 - 2.0 * rho)
}

/// `(4-2ρ)/(1-2ρ)`.
pub fn corrected_index(rho: f64) -> f64 {
    (4.0 - 2.0 * rho) / (1.0 - 2.0 * rho)
}

/// `t^{-1/2} A^{1/2+ρ} ‖φ‖_{H^σ}^{1/2-ρ} + t^{-1/2} ‖φ‖_{H^{5/2}}` for Sobolev index `σ`.
pub fn rhs_with_index(case: &CounterexampleCase, sigma: f64) -> Result<f64> {
    let rho = case.rho;
    let log_a = log_weighted_norm(case)?;
    let first =
        -0.5 * case.log_t + (0.5 + rho) * log_a + (0.5 - rho) * log_hs_norm(case, sigma)?;
    let second = -0.5 * case.log_t + log_hs_norm(case, 2.5)?;
    Ok(log_sum_exp([first, second].into_iter()).exp())
}

pub fn rhs_original(case: &CounterexampleCase) -> Result<f64> {
    rhs_with_index(case, original_index(case.rho))
}

pub fn rhs_corrected(case: &CounterexampleCase) -> Result<f64> {
    rhs_with_index(case, corrected_index(case.rho))
}

/// Growth exponent of `lhs/rhs_original` predicted from the two terms of the bound:
/// `lhs ∼ N²`, first term `∼ N^{3/2}`, second term `∼ N^{2-1/(4ρ)}`.
pub fn predicted_exponent(rho: f64) -> f64 {
    2.0 - 1.5f64.max(2.0 - 1.0 / (4.0 * rho))
}

/// The two right-hand terms grow at nearly the same rate.
pub fn near_degenerate(rho: f64) -> bool {
    ((2.0 - 1.0 / (4.0 * rho)) - 1.5).abs() < 0.05
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub n: f64,
    pub rho: f64,
    pub t: f64,
    pub lhs: f64,
    pub rhs_orig: f64,
    pub rhs_corr: f64,
    pub ratio_orig: f64,
    pub ratio_corr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub rho: f64,
    pub rows: Vec<ScanRow>,
    pub original_exponent: f64,
    pub corrected_exponent: f64,
    pub predicted_exponent: f64,
    /// Smallest scanned `N` from which `lhs/rhs_original > 1` for every larger `N`.
    pub crossing: Option<f64>,
    pub original_unbounded: bool,
    pub near_degenerate: bool,
}

pub fn evaluate(case: &CounterexampleCase) -> Result<ScanRow> {
    let l = lhs(case)?;
    let ro = rhs_original(case)?;
    let rc = rhs_corrected(case)?;
    Ok(ScanRow {
        n: case.n,
        rho: case.rho,
        t: case.t(),
        lhs: l,
        rhs_orig: ro,
        rhs_corr: rc,
        ratio_orig: l / ro,
        ratio_corr: l / rc,
    })
}

/// Exponent above which the ratio counts as growing.
pub const UNBOUNDED_EXPONENT: f64 = 0.1;

/// Evaluate `N = 2^k` for `N_min ≤ N ≤ N_max`.
pub fn failure_scan(rho: f64, n_min: f64, n_max: f64, exec: Exec) -> Result<ScanResult> {
    if !(rho > 0.0 && rho < 0.5) {
        return Err(Error::InvalidParameter(format!("rho = {rho} must lie in (0, 1/2)")));
    }
    if !(n_min >= 1.0 && n_max >= n_min) {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= N_min <= N_max, got [{n_min}, {n_max}]"
        )));
    }
    let k0 = n_min.log2().ceil() as i32;
    let k1 = n_max.log2().floor() as i32;
    let ks: Vec<i32> = (k0..=k1).collect();
    if ks.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: ks.len(),
        });
    }
    let rows = exec.try_map(&ks, |&k| {
        evaluate(&CounterexampleCase::new(2f64.powi(k), rho)?)
    })?;
    let fit = |f: fn(&ScanRow) -> f64| {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.n.ln(), f(r).ln())).collect();
        least_squares(&pts).0
    };
    let original_exponent = fit(|r| r.ratio_orig);
    let corrected_exponent = fit(|r| r.ratio_corr);
    let crossing = rows
        .iter()
        .rposition(|r| r.ratio_orig <= 1.0)
        .map_or(Some(0), |i| (i + 1 < rows.len()).then_some(i + 1))
        .map(|i| rows[i].n);
    Ok(ScanResult {
        rho,
        original_unbounded: original_exponent > UNBOUNDED_EXPONENT && crossing.is_some(),
        rows,
        original_exponent,
        corrected_exponent,
        predicted_exponent: predicted_exponent(rho),
        crossing,
        near_degenerate: near_degenerate(rho),
    })
}
