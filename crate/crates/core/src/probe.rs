//! Wave-packet testing: the amplitude `γ(t,v)` along rays `x = vt`, its
//! limit ODE, the modified final state `W` and the asymptotic profile.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{decay_fit, least_squares, DecayFit};
use crate::error::{Error, Result};
use crate::evolution::Snapshot;
use crate::exec::Exec;
use crate::smooth::Bump;
use crate::lp;
use crate::spectral::{forward_transform, inverse_transform, Field, Grid, Kind, SpectralField};

/// Default pairing window: full weight on `[ξ_v/√2, √2 ξ_v]`, none outside
/// `[ξ_v/2, 2ξ_v]`.
pub const DEFAULT_BAND_LOG2: f64 = 0.5;

/// Step of the default velocity lattice `-2^{k/4}` in `log2 |v|`.
const DEFAULT_V_STEP: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct PacketParams {
    pub delta_p: f64,
    pub chi: Bump,
    pub velocities: Vec<f64>,
    pub alpha: f64,
    /// Ratio between consecutive probe times.
    pub cadence_ratio: f64,
    /// Lattice parameter used to report `N_v`.
    pub lattice_delta: f64,
    /// Half-width in `log2 ξ` of the positive-frequency window applied to
    /// `u` before pairing; `None` pairs the raw field.
    pub band_log2: Option<f64>,
}

impl PacketParams {
    pub fn new(delta_p: f64, velocities: Vec<f64>, alpha: f64, cadence_ratio: f64) -> Result<Self> {
        if !(delta_p > 0.0) {
            return Err(Error::InvalidParameter(format!("delta_p = {delta_p} must be positive")));
        }
        if velocities.is_empty() || velocities.iter().any(|&v| !(v < 0.0)) {
            return Err(Error::InvalidParameter("probe velocities must be negative".into()));
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} must be positive")));
        }
        if !(cadence_ratio > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "cadence ratio {cadence_ratio} must exceed 1"
            )));
        }
        let mut velocities = velocities;
        velocities.sort_by(f64::total_cmp);
        velocities.dedup();
        Ok(PacketParams {
            delta_p,
            chi: Bump::normalized(1.0 - 2f64.powf(-delta_p)),
            velocities,
            alpha,
            cadence_ratio,
            lattice_delta: 1.0,
            band_log2: Some(DEFAULT_BAND_LOG2),
        })
    }

    /// `{-2^{k/4} : k = -8..8}`.
    pub fn default_velocities() -> Vec<f64> {
        (-8..=8).map(|k| -(2f64.powf(k as f64 * DEFAULT_V_STEP))).collect()
    }

    pub fn half_width(&self) -> f64 {
        self.chi.half_width()
    }

    /// Support of `Ψ_v(t,·)`.
    pub fn support(&self, t: f64, v: f64) -> (f64, f64) {
        let w = self.half_width() * t.sqrt() * v.abs().powf(0.75);
        (v * t - w, v * t + w)
    }

    /// `h` in `t_{m+1} = t_m e^h`.
    pub fn log_step(&self) -> f64 {
        self.cadence_ratio.ln()
    }
}

impl Default for PacketParams {
    fn default() -> Self {
        PacketParams::new(1.0, Self::default_velocities(), 0.04, 2f64.powf(0.125))
            .expect("default parameters are valid")
    }
}

/// `α* = min{2/45, 2/(2s+1), 2(s-4)/(3(s+1))}`.
pub fn alpha_star(s: f64) -> f64 {
    (2.0f64 / 45.0)
        .min(2.0 / (2.0 * s + 1.0))
        .min(2.0 * (s - 4.0) / (3.0 * (s + 1.0)))
}

/// `φ(t,x) = -2√(t|x|)`.
pub fn phase(t: f64, x: f64) -> f64 {
    -2.0 * (t * x.abs()).sqrt()
}

/// `t^{-α} ≤ -v ≤ t^α`.
pub fn in_window(t: f64, v: f64, alpha: f64) -> bool {
    let s = -v;
    s >= t.powf(-alpha) && s <= t.powf(alpha)
}

/// Nearest lattice point `2^{δk}` to `ξ` on a log scale.
pub fn nearest_dyadic(xi: f64, delta: f64) -> f64 {
    2f64.powf(delta * (xi.log2() / delta).round())
}

/// Node range `[lo, hi)` covering the packet support, after the validity checks.
fn packet_nodes(grid: &Grid, t: f64, v: f64, params: &PacketParams) -> Result<(usize, usize)> {
    if !(t >= 1.0) {
        return Err(Error::InvalidParameter(format!("packets need t >= 1, got {t}")));
    }
    if !(v < 0.0) {
        return Err(Error::InvalidParameter(format!("packets need v < 0, got {v}")));
    }
    let limit = std::f64::consts::PI * v.abs().sqrt() / 4.0;
    if grid.dx() > limit {
        return Err(Error::UnderResolved {
            dx: grid.dx(),
            limit,
        });
    }
    let (lo, hi) = params.support(t, v);
    let half = 0.5 * grid.length();
    if lo <= -half || hi >= half {
        return Err(Error::OutOfBox { lo, hi });
    }
    let first = ((lo + half) / grid.dx()).floor().max(0.0) as usize;
    let last = (((hi + half) / grid.dx()).ceil() as usize + 1).min(grid.n());
    Ok((first, last))
}

fn packet_value(t: f64, v: f64, x: f64, params: &PacketParams) -> Complex64 {
    let av = v.abs();
    let y = (x - v * t) / (t.sqrt() * av.powf(0.75));
    let amp = av.powf(-0.75) * params.chi.eval(y);
    if amp == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::from_polar(amp, phase(t, x))
}

/// `Ψ_v(t,x) = |v|^{-3/4} χ((x-vt)/(t^{1/2}|v|^{3/4})) e^{iφ(t,x)}` on the grid.
pub fn packet(t: f64, v: f64, params: &PacketParams, grid: &Grid) -> Result<Field> {
    let (first, last) = packet_nodes(grid, t, v, params)?;
    let xs = grid.xs();
    let mut values = vec![Complex64::new(0.0, 0.0); grid.n()];
    for j in first..last {
        values[j] = packet_value(t, v, xs[j], params);
    }
    Ok(Field::from_complex(grid, values))
}

/// `γ(t,v) = Σ_j u(x_j) conj(Ψ_v(t,x_j)) dx`.
pub fn gamma(u: &Field, t: f64, v: f64, params: &PacketParams) -> Result<Complex64> {
    let grid = u.grid();
    let (first, last) = packet_nodes(grid, t, v, params)?;
    let xs = grid.xs();
    let vals = u.values();
    let mut acc = Complex64::new(0.0, 0.0);
    for j in first..last {
        acc += vals[j] * packet_value(t, v, xs[j], params).conj();
    }
    Ok(acc * grid.dx())
}

/// `W = γ exp(-3i|v|^{-1/2}|γ|² log t)`.
pub fn extract_w(t: f64, v: f64, gamma: Complex64) -> Complex64 {
    let rot = -3.0 * v.abs().powf(-0.5) * gamma.norm_sqr() * t.ln();
    gamma * Complex64::from_polar(1.0, rot)
}

/// `3i t^{-1}|v|^{-1/2}|γ|²γ`, the right side of the limit ODE.
pub fn ode_rhs(t: f64, v: f64, gamma: Complex64) -> Complex64 {
    Complex64::new(0.0, 3.0 / t * v.abs().powf(-0.5) * gamma.norm_sqr()) * gamma
}

/// Residual `γ̇ - 3it^{-1}|v|^{-1/2}|γ|²γ` at the interior points of a
/// time series, with `γ̇` from a three-point difference in `log t`.
pub fn ode_residual(series: &[(f64, Complex64)], v: f64) -> Result<Vec<(f64, Complex64)>> {
    if series.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: series.len(),
        });
    }
    Ok(series
        .windows(3)
        .map(|w| {
            let (s0, s1, s2) = (w[0].0.ln(), w[1].0.ln(), w[2].0.ln());
            let (h1, h2) = (s1 - s0, s2 - s1);
            let d = (w[2].1 * (h1 * h1) - w[0].1 * (h2 * h2) + w[1].1 * (h2 * h2 - h1 * h1))
                / (h1 * h2 * (h1 + h2));
            let t = w[1].0;
            (t, d / t - ode_rhs(t, v, w[1].1))
        })
        .collect())
}

/// Pointwise error of the two leading-order ray approximations at `x = vt`.
pub fn ray_errors(uh: &SpectralField, uxh: &SpectralField, t: f64, v: f64, gamma: Complex64) -> (f64, f64) {
    let x = v * t;
    let carrier = Complex64::from_polar(1.0, phase(t, x)) * gamma;
    let lead_u = 2.0 / t.sqrt() * carrier.re;
    let lead_ux = 2.0 / t.sqrt() * v.abs().powf(-0.5) * (Complex64::i() * carrier).re;
    (
        (uh.eval_at(x).re - lead_u).abs(),
        (uxh.eval_at(x).re - lead_ux).abs(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub t: f64,
    pub v: f64,
    pub xi_v: f64,
    pub n_v: f64,
    pub gamma: Complex64,
    pub w: Complex64,
    /// Filled in once neighbouring probe times are available.
    pub ode_residual: Option<Complex64>,
    pub err_u: f64,
    pub err_ux: f64,
    pub in_window: bool,
}

/// Probe outcome at one `(t, v)`: a record, or the reason it was skipped.
#[derive(Clone, Debug)]
pub enum ProbeOutcome {
    Record(ProbeRecord),
    Skipped { t: f64, v: f64, reason: String },
}

/// `P^+_{[ξ_v 2^{-w}, ξ_v 2^w]} u`, the part of `u` a packet at `v` can see.
///
/// Only frequencies near `ξ_v = |v|^{-1/2}` contribute to `γ(t,v)` at leading
/// order; dropping the rest removes the cross term with `conj(u⁺)` and any
/// low-frequency content that has crossed the periodic seam.
pub fn localize(uh: &SpectralField, v: f64, half_width: f64) -> Result<Field> {
    let spec = lp::build_cutoff(half_width)?;
    let xi_v = v.abs().powf(-0.5);
    let (lo, hi) = (xi_v * 2f64.powf(-half_width), xi_v * 2f64.powf(half_width));
    let coeffs = uh
        .coeffs()
        .iter()
        .zip(uh.grid().xis())
        .map(|(c, &xi)| if xi > 0.0 { c * spec.between(lo, hi, xi) } else { Complex64::new(0.0, 0.0) })
        .collect();
    Ok(inverse_transform(&SpectralField::new(uh.grid(), coeffs, Kind::Complex)))
}

/// `γ(t,v)` with the pairing window of `params` applied.
pub fn gamma_windowed(uh: &SpectralField, u: &Field, t: f64, v: f64, params: &PacketParams) -> Result<Complex64> {
    match params.band_log2 {
        Some(w) => gamma(&localize(uh, v, w)?, t, v, params),
        None => gamma(u, t, v, params),
    }
}

/// Evaluate every probe velocity on one snapshot.
pub fn probe_snapshot(s: &Snapshot, params: &PacketParams, exec: Exec) -> Vec<ProbeOutcome> {
    let t = s.t;
    let uh = forward_transform(&s.u);
    let uxh = forward_transform(&s.ux);
    exec.map(&params.velocities, |&v| match gamma_windowed(&uh, &s.u, t, v, params) {
        Ok(g) => {
            let (err_u, err_ux) = ray_errors(&uh, &uxh, t, v, g);
            let xi_v = v.abs().powf(-0.5);
            ProbeOutcome::Record(ProbeRecord {
                t,
                v,
                xi_v,
                n_v: nearest_dyadic(xi_v, params.lattice_delta),
                gamma: g,
                w: extract_w(t, v, g),
                ode_residual: None,
                err_u,
                err_ux,
                in_window: in_window(t, v, params.alpha),
            })
        }
        Err(e) => ProbeOutcome::Skipped {
            t,
            v,
            reason: e.to_string(),
        },
    })
}

/// Probe records grouped by velocity, each series in increasing time.
#[derive(Clone, Debug, Default)]
pub struct ProbeTable {
    pub series: BTreeMap<VelocityKey, Vec<ProbeRecord>>,
    pub skipped: usize,
}

/// Total-order key for velocities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityKey(pub f64);

impl Eq for VelocityKey {}

impl PartialOrd for VelocityKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for VelocityKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl ProbeTable {
    /// Probe all snapshots at `t ≥ 1` and attach ODE residuals.
    pub fn build(snapshots: &[&Snapshot], params: &PacketParams, exec: Exec) -> ProbeTable {
        let mut table = ProbeTable::default();
        for s in snapshots.iter().filter(|s| s.t >= 1.0) {
            for out in probe_snapshot(s, params, exec) {
                match out {
                    ProbeOutcome::Record(r) => {
                        table.series.entry(VelocityKey(r.v)).or_default().push(r)
                    }
                    ProbeOutcome::Skipped { .. } => table.skipped += 1,
                }
            }
        }
        for (key, recs) in table.series.iter_mut() {
            recs.sort_by(|a, b| a.t.total_cmp(&b.t));
            let pts: Vec<(f64, Complex64)> = recs.iter().map(|r| (r.t, r.gamma)).collect();
            if let Ok(res) = ode_residual(&pts, key.0) {
                for (rec, (_, r)) in recs[1..].iter_mut().zip(res) {
                    rec.ode_residual = Some(r);
                }
            }
        }
        table
    }

    pub fn records(&self) -> impl Iterator<Item = &ProbeRecord> {
        self.series.values().flatten()
    }

    /// Records ordered by `(t, v)` for tabular output.
    pub fn rows(&self) -> Vec<ProbeRecord> {
        let mut rows: Vec<ProbeRecord> = self.records().copied().collect();
        rows.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.v.total_cmp(&b.v)));
        rows
    }

    pub fn velocity(&self, v: f64) -> Option<&[ProbeRecord]> {
        self.series.get(&VelocityKey(v)).map(Vec::as_slice)
    }

    /// Whether every `γ` vanishes (e.g. a zero trajectory).
    pub fn all_zero(&self) -> bool {
        self.records().all(|r| r.gamma.norm() == 0.0)
    }

    /// `W` at the latest probe time for every velocity that was probed there.
    pub fn final_w(&self) -> Option<WSampler> {
        let t_last = self.records().map(|r| r.t).fold(f64::NEG_INFINITY, f64::max);
        let pts: Vec<(f64, Complex64)> = self
            .records()
            .filter(|r| r.t == t_last)
            .map(|r| (r.v, r.w))
            .collect();
        WSampler::new(pts).ok()
    }
}

/// Linear interpolation of `W` in `v` over the probed velocities.
#[derive(Clone, Debug)]
pub struct WSampler {
    points: Vec<(f64, Complex64)>,
}

impl WSampler {
    pub fn new(mut points: Vec<(f64, Complex64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(WSampler { points })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.points[0].0, self.points[self.points.len() - 1].0)
    }

    pub fn sample(&self, v: f64) -> Result<Complex64> {
        let (lo, hi) = self.range();
        if !(v >= lo && v <= hi) {
            return Err(Error::Extrapolation { v, lo, hi });
        }
        let k = self.points.partition_point(|p| p.0 < v);
        if self.points[k].0 == v {
            return Ok(self.points[k].1);
        }
        let (v0, w0) = self.points[k - 1];
        let (v1, w1) = self.points[k];
        let s = (v - v0) / (v1 - v0);
        Ok(w0 * (1.0 - s) + w1 * s)
    }
}

/// `(2/√t) 1_{x<0} Re{W(x/t) exp(-2i√(t|x|) + 3i√(t/|x|)|W|² log t)}`.
pub fn asymptotic_profile(t: f64, x: f64, w: &WSampler) -> Result<f64> {
    if x >= 0.0 {
        return Ok(0.0);
    }
    let wv = w.sample(x / t)?;
    let arg = -2.0 * (t * x.abs()).sqrt() + 3.0 * (t / x.abs()).sqrt() * wv.norm_sqr() * t.ln();
    Ok(2.0 / t.sqrt() * (wv * Complex64::from_polar(1.0, arg)).re)
}

/// Unwrap a phase sequence so consecutive jumps stay below π.
pub fn unwrap_phase(args: &[f64]) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    let mut out = Vec::with_capacity(args.len());
    let mut offset = 0.0f64;
    for (k, &a) in args.iter().enumerate() {
        if k > 0 {
            let d: f64 = a + offset - out[k - 1];
            offset -= tau * (d / tau).round();
        }
        out.push(a + offset);
    }
    out
}

/// Measured phase rotation against the limit-ODE prediction on one ray.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseDrift {
    pub v: f64,
    /// Fitted `d(arg γ)/d(log t)`.
    pub measured: f64,
    /// `3|v|^{-1/2}` times the window mean of `|γ|²`.
    pub predicted: f64,
    pub relerr: f64,
    /// Relative change of `|γ|` per decade of `t` from a log-log fit.
    pub modulus_per_decade: f64,
}

fn window(recs: &[ProbeRecord], win: (f64, f64)) -> Vec<&ProbeRecord> {
    recs.iter()
        .filter(|r| r.t >= win.0 * (1.0 - 1e-9) && r.t <= win.1 * (1.0 + 1e-9))
        .collect()
}

pub fn phase_drift(recs: &[ProbeRecord], win: (f64, f64)) -> Result<PhaseDrift> {
    let pts = window(recs, win);
    if pts.len() < crate::diagnostics::MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData {
            needed: crate::diagnostics::MIN_FIT_SAMPLES,
            got: pts.len(),
        });
    }
    let v = pts[0].v;
    let args = unwrap_phase(&pts.iter().map(|r| r.gamma.arg()).collect::<Vec<_>>());
    let logt: Vec<f64> = pts.iter().map(|r| r.t.ln()).collect();
    let (measured, _) = least_squares(&logt.iter().copied().zip(args).collect::<Vec<_>>());
    let mean_sq = pts.iter().map(|r| r.gamma.norm_sqr()).sum::<f64>() / pts.len() as f64;
    let predicted = 3.0 * v.abs().powf(-0.5) * mean_sq;
    let relerr = if predicted == 0.0 {
        f64::NAN
    } else {
        (measured - predicted).abs() / predicted
    };
    let logmod: Vec<(f64, f64)> = pts.iter().map(|r| (r.t.log10(), r.gamma.norm().ln())).collect();
    let (per_decade, _) = least_squares(&logmod);
    let modulus_per_decade = (per_decade.exp() - 1.0).abs();
    Ok(PhaseDrift {
        v,
        measured,
        predicted,
        relerr,
        modulus_per_decade,
    })
}

/// `log|r|` against `log t` on one ray.
pub fn residual_fit(recs: &[ProbeRecord], win: (f64, f64)) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = recs
        .iter()
        .filter_map(|r| r.ode_residual.map(|res| (r.t, res.norm())))
        .collect();
    decay_fit(&pts, win)
}

/// `max_v |W(t,v) - W(2t,v)|` over velocities in `Ω_α(t) ∩ Ω_α(2t)`.
pub fn w_stability_series(table: &ProbeTable) -> Vec<(f64, f64)> {
    let mut by_time: BTreeMap<u64, f64> = BTreeMap::new();
    let mut times = BTreeMap::new();
    for recs in table.series.values() {
        for (i, a) in recs.iter().enumerate() {
            let Some(b) = recs[i..]
                .iter()
                .find(|b| (b.t / a.t - 2.0).abs() < 1e-9)
            else {
                continue;
            };
            if !(a.in_window && b.in_window) {
                continue;
            }
            let key = a.t.to_bits();
            let d = (a.w - b.w).norm();
            let e = by_time.entry(key).or_insert(0.0);
            *e = e.max(d);
            times.insert(key, a.t);
        }
    }
    let mut out: Vec<(f64, f64)> = by_time.into_iter().map(|(k, d)| (times[&k], d)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// `t^{1/2} sup_v |u(t,vt) - profile(t,vt)|` over in-window probes at `t`.
pub fn profile_remainder(
    s: &Snapshot,
    table: &ProbeTable,
    sampler: &WSampler,
) -> Option<f64> {
    let uh = forward_transform(&s.u);
    let mut worst: Option<f64> = None;
    for recs in table.series.values() {
        let Some(r) = recs.iter().find(|r| r.t == s.t) else {
            continue;
        };
        if !r.in_window {
            continue;
        }
        let x = r.v * r.t;
        let Ok(p) = asymptotic_profile(s.t, x, sampler) else {
            continue;
        };
        let d = (uh.eval_at(x).re - p).abs() * s.t.sqrt();
        worst = Some(worst.map_or(d, |w: f64| w.max(d)));
    }
    worst
}
