//! The four commands behind the CLI: simulate, scatter, appendix, selftest.
//!
//! Each command writes its files under an output directory and returns a
//! serialisable summary; the binary prints that summary as the final JSON
//! line on standard output and maps errors to exit codes.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Serialize;

use crate::appendix::{self, ScanResult};
use crate::config::{AppendixSection, ExperimentConfig, Format, InitialKind};
use crate::diagnostics::{self, decay_fit, MonitorRecord, NormRecord};
use crate::error::{Error, Result};
use crate::evolution::{self, Snapshot, SnapshotMonitor, SolverConfig};
use crate::exec::Exec;
use crate::io::{self, fmt_num, CsvTable, Manifest, SnapshotEntry};
use crate::lp::{self, CutoffSpec};
use crate::probe::{self, PacketParams, ProbeTable};
use crate::selftest::{self, Fault};
use crate::spectral::{Field, Grid};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_monitor_violation() {
        2
    } else {
        1
    }
}

/// Initial data on `grid` as described by the `[initial]` section.
pub fn initial_data(cfg: &ExperimentConfig, grid: &Grid) -> Result<Field> {
    let init = &cfg.initial;
    match init.kind {
        InitialKind::GaussianDerivative => {
            Ok(evolution::gaussian_derivative(grid, init.epsilon, init.width))
        }
        InitialKind::File => {
            let path = init.path.as_ref().expect("validated");
            let (_, values) = io::read_field(path)?;
            if values.len() != grid.n() {
                return Err(Error::Config(format!(
                    "{}: {} samples but solver.n = {}",
                    path.display(),
                    values.len(),
                    grid.n()
                )));
            }
            Ok(Field::from_real(grid, values))
        }
    }
}

/// Collects one CSV row per snapshot while the solver runs.
struct RowCollector<'a> {
    cfg: &'a SolverConfig,
    spec: Option<CutoffSpec>,
    exec: Exec,
    table: CsvTable,
    stats: RunStats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub snapshots: usize,
    pub t_last: f64,
    pub l2_initial: f64,
    pub l2_max_drift: f64,
    pub energy_max_relerr: Option<f64>,
    pub wrapfrac_max: f64,
    /// `max_t t^{1/2}(‖u‖∞ + ‖u_x‖∞)` over `t ≥ 1`.
    pub decay_constant: f64,
}

fn norms_header() -> Vec<&'static str> {
    let mut h: Vec<&str> = NormRecord::COLUMNS.to_vec();
    h.extend(["energy_centered", "energy_flux", "energy_relerr"]);
    h.extend(MonitorRecord::COLUMNS);
    h
}

impl<'a> RowCollector<'a> {
    fn new(cfg: &'a SolverConfig, spec: Option<CutoffSpec>, exec: Exec) -> Self {
        RowCollector {
            cfg,
            spec,
            exec,
            table: CsvTable::new(&norms_header()),
            stats: RunStats::default(),
        }
    }
}

impl SnapshotMonitor for RowCollector<'_> {
    fn observe(&mut self, s: &Snapshot) -> Result<()> {
        let n = &s.norms;
        let st = &mut self.stats;
        if st.snapshots == 0 {
            st.l2_initial = n.l2;
        }
        st.snapshots += 1;
        st.t_last = s.t;
        if st.l2_initial > 0.0 {
            st.l2_max_drift = st.l2_max_drift.max((n.l2 - st.l2_initial).abs() / st.l2_initial);
        }
        st.wrapfrac_max = st.wrapfrac_max.max(n.wrapfrac);
        if s.t >= 1.0 {
            st.decay_constant = st.decay_constant.max(s.t.sqrt() * (n.linf + n.ux_linf));
        }
        let mut row: Vec<f64> = n.values().to_vec();
        match s.energy {
            Some(e) => {
                let r = e.relative_error();
                if r.is_finite() {
                    st.energy_max_relerr = Some(st.energy_max_relerr.map_or(r, |m| m.max(r)));
                }
                row.extend([e.centered, e.flux, r]);
            }
            None => row.extend([f64::NAN; 3]),
        }
        let mon = match &self.spec {
            Some(spec) if s.t >= 1.0 => {
                diagnostics::monitor_record(s, self.cfg.sobolev_s, spec, self.cfg.mean_tol, self.exec)?
                    .values()
            }
            _ => [f64::NAN; 5],
        };
        row.extend(mon);
        self.table.push_nums(row);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulateSummary {
    pub command: &'static str,
    pub config_hash: String,
    pub trajectory_hash: String,
    pub epsilon: f64,
    #[serde(flatten)]
    pub stats: RunStats,
    pub out_dir: PathBuf,
}

pub const NORMS_CSV: &str = "norms.csv";

fn snapshot_file(i: usize) -> String {
    format!("snap_{i:04}.bin")
}

/// Evolve, then write snapshots, the manifest and the norms table.
///
/// On a monitor violation the rows gathered so far are still written before
/// the error is returned.
pub fn simulate(cfg: &ExperimentConfig, out: &Path, exec: Exec) -> Result<SimulateSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let solver = cfg.solver_config();
    let grid = solver.grid()?;
    let u0 = initial_data(cfg, &grid)?;
    let spec = cfg
        .decomposition
        .monitors
        .then(|| lp::build_cutoff(cfg.decomposition.delta))
        .transpose()?;
    let hash = cfg.hash();
    let mut rows = RowCollector::new(&solver, spec, exec);
    let result = evolution::evolve(&u0, &solver, &mut [&mut rows]);
    if cfg.output.wants(Format::Csv) {
        rows.table.write(&out.join(NORMS_CSV), &hash)?;
    }
    let traj = result?;

    let mut entries = Vec::with_capacity(traj.snapshots.len());
    for (i, s) in traj.snapshots.iter().enumerate() {
        let file = snapshot_file(i);
        if cfg.output.wants(Format::Bin) {
            io::write_field(&out.join(&file), s.t, &s.u.re())?;
        }
        entries.push(SnapshotEntry { t: s.t, file });
    }
    if cfg.output.wants(Format::Bin) || cfg.output.wants(Format::Json) {
        Manifest {
            config: cfg.clone(),
            config_hash: hash.clone(),
            trajectory_hash: cfg.trajectory_hash(),
            code_version: CODE_VERSION.to_string(),
            snapshots: entries,
        }
        .write(out)?;
    }
    let summary = SimulateSummary {
        command: "simulate",
        config_hash: hash,
        trajectory_hash: cfg.trajectory_hash(),
        epsilon: cfg.initial.epsilon,
        stats: rows.stats,
        out_dir: out.to_path_buf(),
    };
    if cfg.output.wants(Format::Json) {
        io::write_json(&out.join("simulate.json"), &summary)?;
    }
    Ok(summary)
}

/// Probe velocities singled out for the limit-ODE and phase fits.
pub fn key_velocities() -> [f64; 3] {
    [-1.0, -std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::SQRT_2]
}

/// Fit windows, clipped to the final time of the trajectory.
pub const DECAY_WINDOW: (f64, f64) = (10.0, 200.0);
pub const PROBE_WINDOW: (f64, f64) = (20.0, 200.0);
pub const W_WINDOW: (f64, f64) = (1.0, 200.0);

/// Probe times `r^m ∈ [1, T]` (plus `T`) implied by the probe cadence.
pub fn probe_times(cadence_ratio: f64, t_final: f64) -> Vec<f64> {
    let mut times = Vec::new();
    let mut m = 0;
    loop {
        let t = cadence_ratio.powi(m);
        if t > t_final * (1.0 + 1e-12) {
            break;
        }
        times.push(t);
        m += 1;
    }
    if t_final >= 1.0 && times.last().is_some_and(|&t| t < t_final * (1.0 - 1e-12)) {
        times.push(t_final);
    }
    times
}

fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

/// Snapshots at the probe cadence, re-read from a trajectory directory.
pub fn load_probe_snapshots(
    dir: &Path,
    manifest: &Manifest,
    solver: &SolverConfig,
    cadence_ratio: f64,
) -> Result<Vec<Snapshot>> {
    let t_final = manifest.snapshots.last().map_or(0.0, |e| e.t);
    let grid = solver.grid()?;
    let mut out = Vec::new();
    for t in probe_times(cadence_ratio, t_final) {
        let entry = manifest
            .snapshots
            .iter()
            .find(|e| same_time(e.t, t))
            .ok_or(Error::MissingSnapshots { t })?;
        let path = dir.join(&entry.file);
        if !path.exists() {
            return Err(Error::MissingSnapshots { t });
        }
        let (tf, values) = io::read_field(&path)?;
        if values.len() != grid.n() || !same_time(tf, entry.t) {
            return Err(Error::Format(format!(
                "{}: header does not match the manifest",
                path.display()
            )));
        }
        out.push(Snapshot::from_field(Field::from_real(&grid, values), tf, solver)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VelocityFit {
    pub v: f64,
    pub ode_residual_slope: Option<f64>,
    pub phase_measured: Option<f64>,
    pub phase_predicted: Option<f64>,
    pub phase_drift_relerr: Option<f64>,
    pub modulus_per_decade: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ScatterSummary {
    pub command: &'static str,
    pub config_hash: String,
    pub trajectory_hash: String,
    pub linf_slope: Option<f64>,
    /// Worst (largest) slope over the key velocities.
    pub ode_residual_slope: Option<f64>,
    #[serde(rename = "W_stability_slope")]
    pub w_stability_slope: Option<f64>,
    /// Worst relative error over the key velocities.
    pub phase_drift_relerr: Option<f64>,
    pub modulus_per_decade: Option<f64>,
    pub profile_remainder_slope: Option<f64>,
    /// Fields that could not be fitted, with the reason.
    pub degenerate: Vec<(String, String)>,
    pub velocities: Vec<VelocityFit>,
    pub probes: usize,
    pub skipped: usize,
    pub forced: bool,
}

impl ScatterSummary {
    fn fit<T>(&mut self, name: &str, r: Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.degenerate.push((name.to_string(), e.to_string()));
                None
            }
        }
    }
}

fn clip(win: (f64, f64), t_final: f64) -> (f64, f64) {
    (win.0, win.1.min(t_final))
}

fn worst<I: IntoIterator<Item = Option<f64>>>(it: I) -> Option<f64> {
    let vals: Option<Vec<f64>> = it.into_iter().collect();
    vals.and_then(|v| v.into_iter().reduce(f64::max))
}

/// Fit summary over probed snapshots.
pub fn scatter_fits(
    snaps: &[Snapshot],
    table: &ProbeTable,
    params: &PacketParams,
) -> ScatterSummary {
    let mut sum = ScatterSummary {
        command: "scatter",
        probes: table.records().count(),
        skipped: table.skipped,
        ..ScatterSummary::default()
    };
    let t_final = snaps.last().map_or(0.0, |s| s.t);
    let zero = table.all_zero();

    let series: Vec<(f64, f64)> = snaps
        .iter()
        .map(|s| (s.t, s.norms.linf + s.norms.ux_linf))
        .collect();
    sum.linf_slope = sum
        .fit("linf_slope", decay_fit(&series, clip(DECAY_WINDOW, t_final)))
        .map(|f| f.slope);

    let win = clip(PROBE_WINDOW, t_final);
    for v in key_velocities() {
        let mut vf = VelocityFit {
            v,
            ..VelocityFit::default()
        };
        let key = params.velocities.iter().copied().find(|&p| (p - v).abs() < 1e-12);
        let recs = key.and_then(|k| table.velocity(k));
        let Some(recs) = recs else {
            sum.degenerate.push((format!("v={v}"), "velocity not probed".into()));
            sum.velocities.push(vf);
            continue;
        };
        if zero {
            sum.velocities.push(vf);
            continue;
        }
        vf.ode_residual_slope = sum
            .fit(&format!("ode_residual_slope[v={v}]"), probe::residual_fit(recs, win))
            .map(|f| f.slope);
        if let Some(d) = sum.fit(&format!("phase_drift[v={v}]"), probe::phase_drift(recs, win)) {
            vf.phase_measured = Some(d.measured);
            vf.phase_predicted = Some(d.predicted);
            vf.phase_drift_relerr = Some(d.relerr).filter(|r| r.is_finite());
            vf.modulus_per_decade = Some(d.modulus_per_decade).filter(|r| r.is_finite());
        }
        sum.velocities.push(vf);
    }
    if zero {
        for name in [
            "ode_residual_slope",
            "phase_drift_relerr",
            "W_stability_slope",
            "profile_remainder_slope",
        ] {
            sum.degenerate.push((name.into(), "every gamma vanishes".into()));
        }
    } else {
        sum.ode_residual_slope = worst(sum.velocities.iter().map(|v| v.ode_residual_slope));
        sum.phase_drift_relerr = worst(sum.velocities.iter().map(|v| v.phase_drift_relerr));
        sum.modulus_per_decade = worst(sum.velocities.iter().map(|v| v.modulus_per_decade));

        let ws = probe::w_stability_series(table);
        sum.w_stability_slope = sum
            .fit("W_stability_slope", decay_fit(&ws, clip(W_WINDOW, t_final)))
            .map(|f| f.slope);

        let pr = table
            .final_w()
            .map(|w| {
                snaps
                    .iter()
                    .filter_map(|s| probe::profile_remainder(s, table, &w).map(|r| (s.t, r)))
                    .collect::<Vec<_>>()
            })
            .unwrap_or_default();
        sum.profile_remainder_slope = sum
            .fit("profile_remainder_slope", decay_fit(&pr, win))
            .map(|f| f.slope);
    }
    sum
}

fn c_cells(z: Complex64) -> [String; 2] {
    [fmt_num(z.re), fmt_num(z.im)]
}

fn probe_csv(table: &ProbeTable) -> CsvTable {
    let mut csv = CsvTable::new(&[
        "t", "v", "xi_v", "N_v", "gamma_re", "gamma_im", "W_re", "W_im", "ode_res_re",
        "ode_res_im", "err_u", "err_ux", "in_window",
    ]);
    for r in table.rows() {
        let mut row = vec![fmt_num(r.t), fmt_num(r.v), fmt_num(r.xi_v), fmt_num(r.n_v)];
        row.extend(c_cells(r.gamma));
        row.extend(c_cells(r.w));
        match r.ode_residual {
            Some(z) => row.extend(c_cells(z)),
            None => row.extend(["nan".to_string(), "nan".to_string()]),
        }
        row.extend([fmt_num(r.err_u), fmt_num(r.err_ux), (r.in_window as u8).to_string()]);
        csv.push(row);
    }
    csv
}

fn w_csv(table: &ProbeTable) -> CsvTable {
    let mut csv = CsvTable::new(&["t", "v", "W_re", "W_im", "W_abs"]);
    let t_last = table.records().map(|r| r.t).fold(f64::NEG_INFINITY, f64::max);
    for r in table.rows().into_iter().filter(|r| r.t == t_last) {
        csv.push_nums([r.t, r.v, r.w.re, r.w.im, r.w.norm()]);
    }
    csv
}

/// Probe a stored trajectory and fit the scattering diagnostics.
pub fn scatter(
    cfg: &ExperimentConfig,
    traj_dir: &Path,
    out: &Path,
    force: bool,
    exec: Exec,
) -> Result<ScatterSummary> {
    cfg.validate()?;
    let manifest = Manifest::read(traj_dir)?;
    let expected = cfg.trajectory_hash();
    if manifest.trajectory_hash != expected && !force {
        return Err(Error::HashMismatch {
            expected,
            found: manifest.trajectory_hash.clone(),
        });
    }
    let solver = manifest.config.solver_config();
    let params = cfg.packet_params()?;
    let snaps = load_probe_snapshots(traj_dir, &manifest, &solver, params.cadence_ratio)?;
    let refs: Vec<&Snapshot> = snaps.iter().collect();
    let table = ProbeTable::build(&refs, &params, exec);

    let mut sum = scatter_fits(&snaps, &table, &params);
    sum.config_hash = cfg.hash();
    sum.trajectory_hash = manifest.trajectory_hash.clone();
    sum.forced = force && manifest.trajectory_hash != expected;

    std::fs::create_dir_all(out)?;
    if cfg.output.wants(Format::Csv) {
        probe_csv(&table).write(&out.join("probes.csv"), &sum.config_hash)?;
        w_csv(&table).write(&out.join("w_table.csv"), &sum.config_hash)?;
    }
    if cfg.output.wants(Format::Json) {
        io::write_json(&out.join("scatter.json"), &sum)?;
    }
    Ok(sum)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AppendixVerdict {
    pub command: &'static str,
    pub config_hash: String,
    pub rho: f64,
    pub original_exponent: f64,
    pub corrected_exponent: f64,
    pub predicted_exponent: f64,
    pub original_unbounded: bool,
    pub near_degenerate: bool,
    pub crossing: Option<f64>,
}

pub fn scan_csv(scan: &ScanResult) -> CsvTable {
    let mut csv = CsvTable::new(&[
        "N", "rho", "t", "lhs", "rhs_orig", "rhs_corr", "ratio_orig", "ratio_corr",
    ]);
    for r in &scan.rows {
        csv.push_nums([r.n, r.rho, r.t, r.lhs, r.rhs_orig, r.rhs_corr, r.ratio_orig, r.ratio_corr]);
    }
    csv
}

/// Run the counterexample scan described by `section`.
pub fn appendix_cmd(
    cfg: &ExperimentConfig,
    section: &AppendixSection,
    out: &Path,
    exec: Exec,
) -> Result<AppendixVerdict> {
    if !(section.rho > 0.0 && section.rho < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "rho = {} must lie in (0, 1/2)",
            section.rho
        )));
    }
    let scan = appendix::failure_scan(section.rho, section.n_min, section.n_max, exec)?;
    let mut c = cfg.clone();
    c.appendix = section.clone();
    let hash = c.hash();
    let verdict = AppendixVerdict {
        command: "appendix",
        config_hash: hash.clone(),
        rho: scan.rho,
        original_exponent: scan.original_exponent,
        corrected_exponent: scan.corrected_exponent,
        predicted_exponent: scan.predicted_exponent,
        original_unbounded: scan.original_unbounded,
        near_degenerate: scan.near_degenerate,
        crossing: scan.crossing,
    };
    std::fs::create_dir_all(out)?;
    if c.output.wants(Format::Csv) {
        scan_csv(&scan).write(&out.join("appendix_scan.csv"), &hash)?;
    }
    if c.output.wants(Format::Json) {
        io::write_json(&out.join("appendix.json"), &verdict)?;
    }
    Ok(verdict)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelftestSummary {
    pub command: &'static str,
    pub passed: bool,
    pub checks: usize,
    pub failed: Vec<&'static str>,
}

/// Run the identity suite; the rendered report is deterministic.
pub fn selftest_cmd(fault: Option<Fault>) -> (selftest::Report, SelftestSummary) {
    let report = selftest::run(fault);
    let summary = SelftestSummary {
        command: "selftest",
        passed: report.passed(),
        checks: report.checks.len(),
        failed: report.failures().map(|c| c.name).collect(),
    };
    (report, summary)
}
