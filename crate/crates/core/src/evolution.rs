//! Time integration of `u_t = ∂ₓ⁻¹u + ∂ₓ(u^p)`.
//!
//! The linear part is advanced exactly with the symbol `e^{-it/ξ}`; the
//! nonlinear flux is handled either by an integrating-factor RK4 (Lawson)
//! or by Cox–Matthews ETDRK4. Products are dealiased by zero padding.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, NormRecord};
use crate::error::{Error, Result};
use crate::spectral::{
    self, forward_transform, inverse_transform, plans, signed_mode, slot, Field, Grid, Kind,
    Plan, SpectralField, SQRT_2PI,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Ifrk4,
    Etdrk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Dealias {
    #[default]
    #[serde(rename = "pad2x")]
    Pad2x,
    #[serde(rename = "two-thirds")]
    TwoThirds,
}

/// Geometric snapshot cadence `t_m = t0 · 2^{m·h}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cadence {
    pub t0: f64,
    pub log2_step: f64,
}

impl Default for Cadence {
    fn default() -> Self {
        Cadence {
            t0: 1.0,
            log2_step: 0.125,
        }
    }
}

impl Cadence {
    pub fn time(&self, m: i64) -> f64 {
        self.t0 * 2f64.powf(m as f64 * self.log2_step)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub n: usize,
    pub length: f64,
    pub dt: f64,
    pub t_final: f64,
    pub integrator: Integrator,
    pub dealias: Dealias,
    pub mean_tol: f64,
    pub cadence: Cadence,
    pub exponent: u32,
    /// When false the flux term is dropped (pure linear flow).
    pub nonlinear: bool,
    /// Sobolev index of the `X^s` norm recorded per snapshot.
    pub sobolev_s: f64,
    pub max_halvings: u32,
    /// Fraction of the box at each end watched by the wrap-around monitor.
    pub wrap_edge: f64,
    pub wrap_threshold: f64,
    /// Evaluate the `Ḣ¹` identity at each snapshot.
    pub energy_check: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            n: 1 << 15,
            length: 800.0,
            dt: 0.01,
            t_final: 200.0,
            integrator: Integrator::Ifrk4,
            dealias: Dealias::Pad2x,
            mean_tol: spectral::MEAN_TOL,
            cadence: Cadence::default(),
            exponent: 3,
            nonlinear: true,
            sobolev_s: 4.5,
            max_halvings: 4,
            wrap_edge: 0.05,
            wrap_threshold: 0.005,
            energy_check: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt = {} must be positive", self.dt));
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return bad(format!("T = {} must be non-negative", self.t_final));
        }
        if !(self.cadence.t0 > 0.0 && self.cadence.log2_step > 0.0) {
            return bad("cadence needs t0 > 0 and a positive step".into());
        }
        if !(2..=4).contains(&self.exponent) {
            return bad(format!("exponent p = {} must be 2, 3 or 4", self.exponent));
        }
        if !(self.mean_tol > 0.0) {
            return bad("mean_tol must be positive".into());
        }
        if !(0.0..0.5).contains(&self.wrap_edge) {
            return bad("wrap_edge must lie in [0, 0.5)".into());
        }
        Grid::new(self.n, self.length)?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n, self.length)
    }

    /// `{0} ∪ {t_m ≤ T} ∪ {T}`, strictly increasing.
    pub fn snapshot_times(&self) -> Vec<f64> {
        let mut times = vec![0.0];
        let mut m = 0i64;
        loop {
            let t = self.cadence.time(m);
            if t > self.t_final * (1.0 + 1e-12) {
                break;
            }
            if t > 0.0 {
                times.push(t);
            }
            m += 1;
        }
        if let Some(&last) = times.last() {
            if self.t_final > last * (1.0 + 1e-12) {
                times.push(self.t_final);
            }
        }
        times
    }
}

/// Padded size for alias-free products of degree `p`.
fn padded_len(n: usize, p: u32, dealias: Dealias) -> usize {
    match dealias {
        Dealias::TwoThirds => n,
        Dealias::Pad2x => {
            let needed = (n * (p as usize + 1)).div_ceil(2);
            needed.next_power_of_two()
        }
    }
}

/// Dealiased flux `∂ₓ(u^p)` evaluated on continuum coefficients.
struct Flux {
    n: usize,
    m: usize,
    p: i32,
    fwd: Plan,
    inv: Plan,
    into_fine: Vec<Complex64>,
    out_factor: Vec<Complex64>,
    mask: Vec<bool>,
    buf: Vec<Complex64>,
}

impl Flux {
    fn new(grid: &Grid, p: u32, dealias: Dealias) -> Self {
        let n = grid.n();
        let m = padded_len(n, p, dealias);
        let (fwd, inv) = plans(m);
        let dx_fine = grid.length() / m as f64;
        let cutoff = match dealias {
            Dealias::Pad2x => n as i64 / 2 - 1,
            Dealias::TwoThirds => n as i64 / 3,
        };
        let mut into_fine = vec![Complex64::new(0.0, 0.0); n];
        let mut out_factor = vec![Complex64::new(0.0, 0.0); n];
        let mut mask = vec![false; n];
        for k in 0..n {
            let mode = signed_mode(k, n);
            let par = if mode & 1 == 0 { 1.0 } else { -1.0 };
            let keep = mode.abs() <= cutoff;
            mask[k] = keep;
            if keep {
                into_fine[k] = Complex64::new(grid.dxi() / SQRT_2PI * par, 0.0);
                out_factor[k] = Complex64::new(0.0, grid.xis()[k] * dx_fine / SQRT_2PI * par);
            }
        }
        Flux {
            n,
            m,
            p: p as i32,
            fwd,
            inv,
            into_fine,
            out_factor,
            mask,
            buf: vec![Complex64::new(0.0, 0.0); m],
        }
    }

    fn eval(&mut self, uh: &[Complex64], out: &mut [Complex64]) {
        let zero = Complex64::new(0.0, 0.0);
        self.buf.iter_mut().for_each(|b| *b = zero);
        for k in 0..self.n {
            if self.mask[k] {
                let mode = signed_mode(k, self.n);
                self.buf[slot(mode, self.m)] = uh[k] * self.into_fine[k];
            }
        }
        self.inv.process(&mut self.buf);
        let p = self.p;
        for b in self.buf.iter_mut() {
            *b = Complex64::new(b.re.powi(p), 0.0);
        }
        self.fwd.process(&mut self.buf);
        for k in 0..self.n {
            out[k] = if self.mask[k] {
                let mode = signed_mode(k, self.n);
                self.buf[slot(mode, self.m)] * self.out_factor[k]
            } else {
                zero
            };
        }
    }
}

/// `∂ₓ(u^p)` with dealiased products. The result has zero mean exactly.
pub fn nonlinearity(u: &Field, p: u32, dealias: Dealias) -> Field {
    let grid = u.grid();
    let uh = forward_transform(u);
    let mut flux = Flux::new(grid, p, dealias);
    let mut out = vec![Complex64::new(0.0, 0.0); grid.n()];
    flux.eval(uh.coeffs(), &mut out);
    inverse_transform(&SpectralField::new(grid, out, Kind::Real))
}

/// Contour-averaged φ-function coefficients for ETDRK4.
struct EtdCoeffs {
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
}

impl EtdCoeffs {
    fn new(xis: &[f64], h: f64) -> Self {
        const POINTS: usize = 32;
        let roots: Vec<Complex64> = (0..POINTS)
            .map(|j| {
                Complex64::from_polar(1.0, std::f64::consts::PI * (j as f64 + 0.5) / POINTS as f64)
            })
            .collect();
        let mut c = EtdCoeffs {
            e: Vec::with_capacity(xis.len()),
            e2: Vec::with_capacity(xis.len()),
            q: Vec::with_capacity(xis.len()),
            f1: Vec::with_capacity(xis.len()),
            f2: Vec::with_capacity(xis.len()),
            f3: Vec::with_capacity(xis.len()),
        };
        for &xi in xis {
            let lh = if xi == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, -h / xi)
            };
            c.e.push(lh.exp());
            c.e2.push((lh * 0.5).exp());
            let (mut q, mut f1, mut f2, mut f3) = (
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
            );
            // Conjugate pairs of contour points keep the averages exact for
            // real arguments; upper half plus mirrored lower half.
            for r0 in roots.iter().flat_map(|r| [*r, r.conj()]) {
                let r = lh + r0;
                let er = r.exp();
                let r3 = r * r * r;
                q += ((r * 0.5).exp() - 1.0) / r;
                f1 += (-4.0 - r + er * (4.0 - 3.0 * r + r * r)) / r3;
                f2 += (2.0 + r + er * (r - 2.0)) / r3;
                f3 += (-4.0 - 3.0 * r - r * r + er * (4.0 - r)) / r3;
            }
            let w = h / (2 * POINTS) as f64;
            c.q.push(q * w);
            c.f1.push(f1 * w);
            c.f2.push(f2 * w);
            c.f3.push(f3 * w);
        }
        c
    }
}

/// Reusable single-trajectory stepper.
pub struct Stepper {
    grid: Grid,
    integrator: Integrator,
    nonlinear: bool,
    flux: Flux,
    cached_h: f64,
    e_half: Vec<Complex64>,
    e_full: Vec<Complex64>,
    etd: Option<EtdCoeffs>,
    k: [Vec<Complex64>; 4],
    tmp: Vec<Complex64>,
}

impl Stepper {
    pub fn new(grid: &Grid, cfg: &SolverConfig) -> Self {
        let n = grid.n();
        let zeros = || vec![Complex64::new(0.0, 0.0); n];
        Stepper {
            grid: grid.clone(),
            integrator: cfg.integrator,
            nonlinear: cfg.nonlinear,
            flux: Flux::new(grid, cfg.exponent, cfg.dealias),
            cached_h: f64::NAN,
            e_half: zeros(),
            e_full: zeros(),
            etd: None,
            k: [zeros(), zeros(), zeros(), zeros()],
            tmp: zeros(),
        }
    }

    fn prepare(&mut self, h: f64) {
        if self.cached_h == h {
            return;
        }
        let xis = self.grid.xis();
        let sym = |t: f64, xi: f64| {
            if xi == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(1.0, -t / xi)
            }
        };
        for (k, &xi) in xis.iter().enumerate() {
            self.e_half[k] = sym(0.5 * h, xi);
            self.e_full[k] = sym(h, xi);
        }
        self.etd = match self.integrator {
            Integrator::Etdrk4 => Some(EtdCoeffs::new(xis, h)),
            Integrator::Ifrk4 => None,
        };
        self.cached_h = h;
    }

    fn rhs(&mut self, uh: &[Complex64], out_slot: usize) {
        let mut out = std::mem::take(&mut self.k[out_slot]);
        if self.nonlinear {
            self.flux.eval(uh, &mut out);
        } else {
            out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        }
        self.k[out_slot] = out;
    }

    /// Advance continuum coefficients by `h` (which may be negative).
    pub fn advance(&mut self, uh: &[Complex64], h: f64) -> Vec<Complex64> {
        if h == 0.0 {
            return uh.to_vec();
        }
        self.prepare(h);
        match self.integrator {
            Integrator::Ifrk4 => self.lawson_rk4(uh, h),
            Integrator::Etdrk4 => self.etdrk4(uh),
        }
    }

    fn lawson_rk4(&mut self, u: &[Complex64], h: f64) -> Vec<Complex64> {
        let n = u.len();
        self.rhs(u, 0);
        for i in 0..n {
            self.tmp[i] = self.e_half[i] * (u[i] + self.k[0][i] * (0.5 * h));
        }
        let a = std::mem::take(&mut self.tmp);
        self.rhs(&a, 1);
        self.tmp = a;
        for i in 0..n {
            self.tmp[i] = self.e_half[i] * u[i] + self.k[1][i] * (0.5 * h);
        }
        let b = std::mem::take(&mut self.tmp);
        self.rhs(&b, 2);
        self.tmp = b;
        for i in 0..n {
            self.tmp[i] = self.e_full[i] * u[i] + self.e_half[i] * self.k[2][i] * h;
        }
        let c = std::mem::take(&mut self.tmp);
        self.rhs(&c, 3);
        self.tmp = c;
        (0..n)
            .map(|i| {
                self.e_full[i] * u[i]
                    + (self.e_full[i] * self.k[0][i]
                        + self.e_half[i] * (self.k[1][i] + self.k[2][i]) * 2.0
                        + self.k[3][i])
                        * (h / 6.0)
            })
            .collect()
    }

    fn etdrk4(&mut self, u: &[Complex64]) -> Vec<Complex64> {
        let n = u.len();
        let etd = self.etd.take().expect("coefficients prepared");
        self.rhs(u, 0);
        let a: Vec<Complex64> = (0..n)
            .map(|i| etd.e2[i] * u[i] + etd.q[i] * self.k[0][i])
            .collect();
        self.rhs(&a, 1);
        let b: Vec<Complex64> = (0..n)
            .map(|i| etd.e2[i] * u[i] + etd.q[i] * self.k[1][i])
            .collect();
        self.rhs(&b, 2);
        let c: Vec<Complex64> = (0..n)
            .map(|i| etd.e2[i] * a[i] + etd.q[i] * (self.k[2][i] * 2.0 - self.k[0][i]))
            .collect();
        self.rhs(&c, 3);
        let out = (0..n)
            .map(|i| {
                etd.e[i] * u[i]
                    + self.k[0][i] * etd.f1[i]
                    + (self.k[1][i] + self.k[2][i]) * etd.f2[i] * 2.0
                    + self.k[3][i] * etd.f3[i]
            })
            .collect();
        self.etd = Some(etd);
        out
    }
}

/// Real samples of the trigonometric interpolant on `m ≥ n` equispaced nodes.
fn refine(grid: &Grid, uh: &[Complex64], m: usize) -> Vec<f64> {
    let n = grid.n();
    let (_, inv) = plans(m);
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for (k, c) in uh.iter().enumerate() {
        let mode = signed_mode(k, n);
        if mode == -(n as i64) / 2 {
            continue;
        }
        let par = if mode & 1 == 0 { 1.0 } else { -1.0 };
        buf[slot(mode, m)] = c * (grid.dxi() / SQRT_2PI * par);
    }
    inv.process(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

fn h1_norm(grid: &Grid, uh: &[Complex64]) -> f64 {
    (uh.iter()
        .zip(grid.xis())
        .map(|(c, &xi)| (1.0 + xi * xi) * c.norm_sqr())
        .sum::<f64>()
        * grid.dxi())
    .sqrt()
}

/// One checked step: rejects non-finite states and `H¹` jumps above 10%.
pub fn step(stepper: &mut Stepper, uh: &[Complex64], t: f64, h: f64) -> Result<Vec<Complex64>> {
    let next = stepper.advance(uh, h);
    if next.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
        return Err(Error::StepRejected {
            t,
            reason: "non-finite state".into(),
        });
    }
    let before = h1_norm(&stepper.grid, uh);
    let after = h1_norm(&stepper.grid, &next);
    if before > 0.0 && after > 1.1 * before {
        return Err(Error::StepRejected {
            t,
            reason: format!("H1 norm grew from {before:e} to {after:e}"),
        });
    }
    Ok(next)
}

/// Centered-difference check of `d/dt ‖u_x‖² = 6∫ u u_x³`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyCheck {
    pub h: f64,
    /// `(‖u_x(t+h)‖² - ‖u_x(t-h)‖²) / (2h)`.
    pub centered: f64,
    /// `6 ∫ u u_x³ dx`.
    pub flux: f64,
    /// `6 ∫ |u u_x³| dx`, the cancellation-free magnitude of the integrand.
    pub scale: f64,
}

impl EnergyCheck {
    pub fn relative_error(&self) -> f64 {
        if self.scale == 0.0 {
            (self.centered - self.flux).abs()
        } else {
            (self.centered - self.flux).abs() / self.scale
        }
    }
}

fn hdot1_sq(grid: &Grid, uh: &[Complex64]) -> f64 {
    uh.iter()
        .zip(grid.xis())
        .map(|(c, &xi)| xi * xi * c.norm_sqr())
        .sum::<f64>()
        * grid.dxi()
}

/// Solution at one time with cached derived fields.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub u: Field,
    pub ux: Field,
    /// `∂ₓ⁻¹u`.
    pub antideriv: Field,
    pub norms: NormRecord,
    pub energy: Option<EnergyCheck>,
}

impl Snapshot {
    /// Build a snapshot from real samples, filling the caches.
    pub fn from_field(u: Field, t: f64, cfg: &SolverConfig) -> Result<Snapshot> {
        let uh = forward_transform(&u);
        Snapshot::from_spectral(&uh, t, cfg, None)
    }

    fn from_spectral(
        uh: &SpectralField,
        t: f64,
        cfg: &SolverConfig,
        energy: Option<EnergyCheck>,
    ) -> Result<Snapshot> {
        uh.check_zero_mean(cfg.mean_tol)
            .map_err(|_| Error::MeanDrift {
                t,
                mean: uh.mean_coeff().norm(),
            })?;
        let u = inverse_transform(uh);
        let ux = spectral::derivative(&u);
        let antideriv = inverse_transform(&spectral::antiderivative_spectral(uh));
        let mut snap = Snapshot {
            t,
            u,
            ux,
            antideriv,
            norms: NormRecord::default(),
            energy,
        };
        snap.norms = diagnostics::norm_record(&snap, cfg)?;
        Ok(snap)
    }

    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub code_version: String,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub config: SolverConfig,
    pub provenance: Provenance,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    /// Snapshot whose time matches `t` to relative `1e-9`.
    pub fn at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots
            .iter()
            .find(|s| (s.t - t).abs() <= 1e-9 * t.abs().max(1.0))
    }
}

/// Observer invoked on every emitted snapshot; an error aborts the run.
pub trait SnapshotMonitor {
    fn observe(&mut self, snap: &Snapshot) -> Result<()>;
}

/// Hash of the solver settings, used when no outer config hash is supplied.
pub fn solver_hash(cfg: &SolverConfig) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_string(cfg).expect("solver config serialises");
    hex::encode(Sha256::digest(json.as_bytes()))
}

struct Driver<'a> {
    cfg: &'a SolverConfig,
    grid: Grid,
    stepper: Stepper,
    h1_initial: f64,
}

impl Driver<'_> {
    /// Advance by `span` using substeps of at most `cfg.dt`, halving on rejection.
    fn advance(&mut self, uh: Vec<Complex64>, t: f64, span: f64) -> Result<Vec<Complex64>> {
        let mut state = uh;
        let mut now = t;
        let end = t + span;
        let mut dt = self.cfg.dt;
        let mut halvings = 0;
        while now < end - 1e-12 * end.abs().max(1.0) {
            let h = dt.min(end - now);
            match step(&mut self.stepper, &state, now, h) {
                Ok(next) => {
                    state = next;
                    now += h;
                }
                Err(e @ Error::StepRejected { .. }) => {
                    if halvings >= self.cfg.max_halvings {
                        return Err(e);
                    }
                    halvings += 1;
                    dt *= 0.5;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(state)
    }

    fn energy_check(&mut self, uh: &[Complex64]) -> EnergyCheck {
        let h = self.cfg.dt;
        let plus = self.stepper.advance(uh, h);
        let minus = self.stepper.advance(uh, -h);
        let centered = (hdot1_sq(&self.grid, &plus) - hdot1_sq(&self.grid, &minus)) / (2.0 * h);
        // The quartic integrand is summed on a grid fine enough to be alias-free.
        let m = padded_len(self.grid.n(), 4, Dealias::Pad2x);
        let dx = self.grid.length() / m as f64;
        let uxh: Vec<Complex64> = uh
            .iter()
            .zip(self.grid.xis())
            .map(|(c, &xi)| c * Complex64::new(0.0, xi))
            .collect();
        let u = refine(&self.grid, uh, m);
        let ux = refine(&self.grid, &uxh, m);
        let (mut flux, mut scale) = (0.0, 0.0);
        for (a, b) in u.iter().zip(&ux) {
            let term = a * b.powi(3);
            flux += term;
            scale += term.abs();
        }
        EnergyCheck {
            h,
            centered,
            flux: 6.0 * flux * dx,
            scale: 6.0 * scale * dx,
        }
    }

    fn snapshot(&mut self, uh: &[Complex64], t: f64) -> Result<Snapshot> {
        let spec = SpectralField::new(&self.grid, uh.to_vec(), Kind::Real);
        let mut snap = Snapshot::from_spectral(&spec, t, self.cfg, None)?;
        if self.cfg.energy_check && self.cfg.exponent == 3 {
            snap.energy = Some(self.energy_check(uh));
        }
        let h1 = h1_norm(&self.grid, uh);
        if self.h1_initial > 0.0 && h1 > 2.0 * self.h1_initial {
            return Err(Error::BlowUp {
                t,
                norm: h1,
                initial: self.h1_initial,
            });
        }
        if snap.norms.wrapfrac >= self.cfg.wrap_threshold && snap.norms.l2 > 0.0 {
            return Err(Error::WrapAround {
                t,
                fraction: snap.norms.wrapfrac,
            });
        }
        Ok(snap)
    }
}

/// Evolve real zero-mean data from `t = 0` to `cfg.t_final`.
pub fn evolve(
    u0: &Field,
    cfg: &SolverConfig,
    monitors: &mut [&mut dyn SnapshotMonitor],
) -> Result<Trajectory> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    if *u0.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let u0 = if u0.is_real() {
        u0.clone()
    } else {
        Field::real_checked(&grid, u0.values().to_vec(), spectral::REAL_TOL)?
    };
    let mut coeffs = forward_transform(&u0).into_coeffs();
    // The Nyquist mode has no real-valued partner; it is kept at zero.
    coeffs[grid.n() / 2] = Complex64::new(0.0, 0.0);
    let uh0 = SpectralField::new(&grid, coeffs, Kind::Real);
    uh0.check_zero_mean(cfg.mean_tol)?;

    let mut driver = Driver {
        cfg,
        grid: grid.clone(),
        stepper: Stepper::new(&grid, cfg),
        h1_initial: h1_norm(&grid, uh0.coeffs()),
    };
    let times = cfg.snapshot_times();
    let mut state = uh0.into_coeffs();
    let mut now = 0.0;
    let mut snapshots = Vec::with_capacity(times.len());
    for &t in &times {
        state = driver.advance(state, now, t - now)?;
        now = t;
        let snap = driver.snapshot(&state, t)?;
        for m in monitors.iter_mut() {
            m.observe(&snap)?;
        }
        snapshots.push(snap);
    }
    Ok(Trajectory {
        config: cfg.clone(),
        provenance: Provenance {
            config_hash: solver_hash(cfg),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        snapshots,
    })
}

/// `u0(x) = ε · d/dx exp(-(x/w)²)`.
pub fn gaussian_derivative(grid: &Grid, epsilon: f64, width: f64) -> Field {
    Field::from_fn_real(grid, |x| {
        let z = x / width;
        -2.0 * epsilon * z / width * (-z * z).exp()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SolverConfig {
        SolverConfig {
            n: 512,
            length: 100.0,
            dt: 0.05,
            t_final: 1.0,
            energy_check: false,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn snapshot_times_are_increasing_and_include_endpoints() {
        let cfg = SolverConfig {
            t_final: 3.0,
            ..small_cfg()
        };
        let times = cfg.snapshot_times();
        assert_eq!(times[0], 0.0);
        assert_eq!(times[1], 1.0);
        assert_eq!(*times.last().unwrap(), 3.0);
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(times.len(), 2 + 13);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig { dt: 0.0, ..small_cfg() }.validate().is_err());
        assert!(SolverConfig { exponent: 5, ..small_cfg() }.validate().is_err());
        assert!(SolverConfig { n: 500, ..small_cfg() }.validate().is_err());
        assert!(small_cfg().validate().is_ok());
    }

    #[test]
    fn flux_of_zero_is_zero() {
        let g = Grid::new(64, 10.0).unwrap();
        let f = nonlinearity(&Field::zeros(&g, Kind::Real), 3, Dealias::Pad2x);
        assert_eq!(f.norm_inf(), 0.0);
    }

    #[test]
    fn cubic_of_single_mode_is_exact_with_padding() {
        // cos(x)^3 = (3 cos x + cos 3x)/4, so ∂ₓ(cos³) = -(3 sin x + 3 sin 3x)/4
        let g = Grid::new(32, 2.0 * std::f64::consts::PI).unwrap();
        let u = Field::from_fn_real(&g, f64::cos);
        let f = nonlinearity(&u, 3, Dealias::Pad2x);
        let want = Field::from_fn_real(&g, |x| -0.75 * (x.sin() + (3.0 * x).sin()));
        assert!(f.max_abs_diff(&want) < 1e-13);
        let fh = forward_transform(&f);
        assert!(fh.mean_coeff().norm() < 1e-15);
    }

    #[test]
    fn padded_flux_matches_high_resolution_product() {
        // Oracle: exact product on a 4x finer grid, truncated to the base modes.
        let n = 128;
        let g = Grid::new(n, 30.0).unwrap();
        let mut state = 7u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n];
        for m in 1..(n as i64 / 2) {
            let c = Complex64::new(rnd(), rnd()) * (-(m as f64) / 20.0).exp();
            coeffs[slot(m, n)] = c;
            coeffs[slot(-m, n)] = c.conj();
        }
        let uh = SpectralField::new(&g, coeffs.clone(), Kind::Real);
        let u = inverse_transform(&uh);
        let got = nonlinearity(&u, 3, Dealias::Pad2x);

        let fine = g.refined(4).unwrap();
        let mut fc = vec![Complex64::new(0.0, 0.0); fine.n()];
        for k in 0..n {
            let m = signed_mode(k, n);
            fc[slot(m, fine.n())] = coeffs[k];
        }
        let uf = inverse_transform(&SpectralField::new(&fine, fc, Kind::Real));
        let cube = forward_transform(&uf.powi(3));
        let mut trunc = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..n {
            let m = signed_mode(k, n);
            if m != -(n as i64) / 2 {
                trunc[k] = cube.coeffs()[slot(m, fine.n())] * Complex64::new(0.0, g.xis()[k]);
            }
        }
        let want = inverse_transform(&SpectralField::new(&g, trunc, Kind::Real));
        let err = got.max_abs_diff(&want);
        assert!(err <= 1e-11, "err = {err:e}");
    }

    #[test]
    fn linear_step_is_free_flow_and_reversible() {
        let cfg = SolverConfig {
            nonlinear: false,
            ..small_cfg()
        };
        let g = cfg.grid().unwrap();
        let u0 = gaussian_derivative(&g, 0.3, 1.0);
        let uh = forward_transform(&u0);
        for integrator in [Integrator::Ifrk4, Integrator::Etdrk4] {
            let cfg = SolverConfig { integrator, ..cfg.clone() };
            let mut st = Stepper::new(&g, &cfg);
            let next = st.advance(uh.coeffs(), 0.37);
            let u1 = inverse_transform(&SpectralField::new(&g, next.clone(), Kind::Real));
            let free = spectral::free_propagate(&u0, 0.37, 1e-10).unwrap();
            assert!(u1.max_abs_diff(&free) < 1e-12, "{integrator:?}");
            let back = st.advance(&next, -0.37);
            let u2 = inverse_transform(&SpectralField::new(&g, back, Kind::Real));
            assert!(u2.max_abs_diff(&u0) < 1e-12);
            assert_eq!(st.advance(uh.coeffs(), 0.0), uh.coeffs().to_vec());
        }
    }

    #[test]
    fn integrators_agree_on_nonlinear_step() {
        let cfg = small_cfg();
        let g = cfg.grid().unwrap();
        let uh = forward_transform(&gaussian_derivative(&g, 0.3, 1.0));
        let run = |integrator| {
            let cfg = SolverConfig { integrator, ..cfg.clone() };
            let mut st = Stepper::new(&g, &cfg);
            let mut s = uh.coeffs().to_vec();
            for _ in 0..20 {
                s = st.advance(&s, 0.05);
            }
            inverse_transform(&SpectralField::new(&g, s, Kind::Real))
        };
        let a = run(Integrator::Ifrk4);
        let b = run(Integrator::Etdrk4);
        assert!(a.max_abs_diff(&b) < 1e-7, "{}", a.max_abs_diff(&b));
    }

    #[test]
    fn zero_data_stays_zero() {
        let cfg = small_cfg();
        let g = cfg.grid().unwrap();
        let traj = evolve(&Field::zeros(&g, Kind::Real), &cfg, &mut []).unwrap();
        assert!(traj.snapshots.iter().all(|s| s.u.norm_inf() == 0.0));
        assert_eq!(traj.snapshots.len(), 2);
    }

    #[test]
    fn evolve_rejects_non_zero_mean() {
        let cfg = small_cfg();
        let g = cfg.grid().unwrap();
        let u0 = Field::from_fn_real(&g, |x| (-x * x).exp());
        assert!(matches!(
            evolve(&u0, &cfg, &mut []),
            Err(Error::MeanNotZero { .. })
        ));
    }

    #[test]
    fn wrap_around_is_detected() {
        // Data sitting at the box edge trips the monitor immediately.
        let cfg = small_cfg();
        let g = cfg.grid().unwrap();
        let edge = 0.5 * cfg.length - 1.0;
        let u0 = spectral::derivative(&Field::from_fn_real(&g, |x| {
            (-(x - edge) * (x - edge)).exp()
        }));
        assert!(matches!(
            evolve(&u0, &cfg, &mut []),
            Err(Error::WrapAround { .. })
        ));
    }

    #[test]
    fn large_steps_are_rejected_and_halved() {
        let cfg = SolverConfig {
            dt: 0.5,
            max_halvings: 0,
            ..small_cfg()
        };
        let g = cfg.grid().unwrap();
        let u0 = gaussian_derivative(&g, 3.0, 1.0);
        assert!(matches!(
            evolve(&u0, &cfg, &mut []),
            Err(Error::StepRejected { .. }) | Err(Error::BlowUp { .. })
        ));
    }

    struct Counter(usize);
    impl SnapshotMonitor for Counter {
        fn observe(&mut self, _: &Snapshot) -> Result<()> {
            self.0 += 1;
            Ok(())
        }
    }

    #[test]
    fn monitors_see_every_snapshot_and_mass_is_conserved() {
        let cfg = SolverConfig {
            t_final: 2.0,
            dt: 0.01,
            energy_check: true,
            ..small_cfg()
        };
        let g = cfg.grid().unwrap();
        let u0 = gaussian_derivative(&g, 0.2, 1.0);
        let mut counter = Counter(0);
        let traj = evolve(&u0, &cfg, &mut [&mut counter]).unwrap();
        assert_eq!(counter.0, traj.snapshots.len());
        let m0 = traj.snapshots[0].norms.l2;
        for s in &traj.snapshots {
            assert!((s.norms.l2 - m0).abs() <= 1e-10 * m0);
            let e = s.energy.unwrap();
            assert!(e.relative_error() < 1e-4, "t={} {:?}", s.t, e);
        }
    }
}
