//! Experiment configuration read from TOML.
//!
//! Every section is optional and falls back to the desk defaults; unknown
//! keys are rejected so that typos fail loudly instead of being ignored.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evolution::{Cadence, Dealias, Integrator, SolverConfig};
use crate::lp;
use crate::probe::PacketParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub n: usize,
    #[serde(rename = "L")]
    pub length: f64,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub integrator: Integrator,
    pub dealias: Dealias,
    pub mean_tol: f64,
    /// First positive snapshot time.
    pub t0: f64,
    /// Snapshot spacing in `log2 t`.
    pub cadence_log2: f64,
    pub p: u32,
    pub max_halvings: u32,
    pub wrap_edge: f64,
    pub wrap_threshold: f64,
    pub energy_check: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSection {
            n: d.n,
            length: d.length,
            dt: d.dt,
            t_final: d.t_final,
            integrator: d.integrator,
            dealias: d.dealias,
            mean_tol: d.mean_tol,
            t0: d.cadence.t0,
            cadence_log2: d.cadence.log2_step,
            p: d.exponent,
            max_halvings: d.max_halvings,
            wrap_edge: d.wrap_edge,
            wrap_threshold: d.wrap_threshold,
            energy_check: d.energy_check,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    #[default]
    GaussianDerivative,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub kind: InitialKind,
    pub epsilon: f64,
    pub width: f64,
    /// SPFLD01 file for `kind = "file"`, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            kind: InitialKind::GaussianDerivative,
            epsilon: 0.1,
            width: 1.0,
            path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormsSection {
    pub s: f64,
}

impl Default for NormsSection {
    fn default() -> Self {
        NormsSection { s: 4.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecompositionSection {
    pub delta: f64,
    /// Record the hyperbolic/elliptic bound monitors with every snapshot.
    pub monitors: bool,
}

impl Default for DecompositionSection {
    fn default() -> Self {
        DecompositionSection {
            delta: 1.0,
            monitors: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub delta_p: f64,
    pub alpha: f64,
    pub velocities: Vec<f64>,
    pub cadence_ratio: f64,
    /// Half-width in `log2 ξ` of the pairing window; `0` pairs the raw field.
    pub band_log2: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let d = PacketParams::default();
        ProbeSection {
            delta_p: d.delta_p,
            alpha: d.alpha,
            velocities: d.velocities,
            cadence_ratio: d.cadence_ratio,
            band_log2: d.band_log2.unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppendixSection {
    pub rho: f64,
    #[serde(rename = "N_min")]
    pub n_min: f64,
    #[serde(rename = "N_max")]
    pub n_max: f64,
}

impl Default for AppendixSection {
    fn default() -> Self {
        AppendixSection {
            rho: 0.25,
            n_min: 32.0,
            n_max: 1024.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Bin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json, Format::Bin],
        }
    }
}

impl OutputSection {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub solver: SolverSection,
    pub initial: InitialSection,
    pub norms: NormsSection,
    pub decomposition: DecompositionSection,
    pub probe: ProbeSection,
    pub appendix: AppendixSection,
    pub output: OutputSection,
}

fn sha256_json<T: Serialize>(value: &T) -> String {
    // serde_json emits struct fields in declaration order, which is stable.
    let json = serde_json::to_string(value).expect("config serialises");
    hex::encode(Sha256::digest(json.as_bytes()))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load and validate; a relative initial-data path is resolved against
    /// the directory of the config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(p) = cfg.initial.path.as_mut() {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Check every module precondition that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.solver_config().validate().map_err(wrap)?;
        let init = &self.initial;
        if !(init.epsilon.is_finite() && init.epsilon >= 0.0) {
            return Err(Error::Config(format!("initial.epsilon = {} must be >= 0", init.epsilon)));
        }
        match init.kind {
            InitialKind::GaussianDerivative if !(init.width > 0.0) => {
                return Err(Error::Config(format!("initial.width = {} must be positive", init.width)));
            }
            InitialKind::File if init.path.is_none() => {
                return Err(Error::Config("initial.kind = \"file\" needs initial.path".into()));
            }
            _ => {}
        }
        if !(self.norms.s > 4.0) {
            return Err(Error::Config(format!("norms.s = {} must exceed 4", self.norms.s)));
        }
        lp::build_cutoff(self.decomposition.delta).map_err(wrap)?;
        self.packet_params().map_err(wrap)?;
        let a = &self.appendix;
        if !(a.rho > 0.0 && a.rho < 0.5) {
            return Err(Error::Config(format!("appendix.rho = {} must lie in (0, 1/2)", a.rho)));
        }
        if !(a.n_min >= 16.0 && a.n_max >= a.n_min) {
            return Err(Error::Config(format!(
                "appendix needs 16 <= N_min <= N_max, got {} and {}",
                a.n_min, a.n_max
            )));
        }
        if self.output.formats.is_empty() {
            return Err(Error::Config("output.formats must not be empty".into()));
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            n: s.n,
            length: s.length,
            dt: s.dt,
            t_final: s.t_final,
            integrator: s.integrator,
            dealias: s.dealias,
            mean_tol: s.mean_tol,
            cadence: Cadence {
                t0: s.t0,
                log2_step: s.cadence_log2,
            },
            exponent: s.p,
            nonlinear: true,
            sobolev_s: self.norms.s,
            max_halvings: s.max_halvings,
            wrap_edge: s.wrap_edge,
            wrap_threshold: s.wrap_threshold,
            energy_check: s.energy_check,
        }
    }

    pub fn packet_params(&self) -> Result<PacketParams> {
        let p = &self.probe;
        let mut params = PacketParams::new(p.delta_p, p.velocities.clone(), p.alpha, p.cadence_ratio)?;
        params.lattice_delta = self.decomposition.delta;
        params.band_log2 = match p.band_log2 {
            w if w > 0.0 => Some(w),
            w if w == 0.0 => None,
            w => return Err(Error::InvalidParameter(format!("band_log2 = {w} must be >= 0"))),
        };
        Ok(params)
    }

    /// Hash of everything except the output section.
    pub fn hash(&self) -> String {
        sha256_json(&(
            &self.solver,
            &self.initial,
            &self.norms,
            &self.decomposition,
            &self.probe,
            &self.appendix,
        ))
    }

    /// Hash of the settings that determine a trajectory; post-processing
    /// sections may change without invalidating stored snapshots.
    pub fn trajectory_hash(&self) -> String {
        sha256_json(&(&self.solver, &self.initial, &self.norms))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_desk_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.solver.n, 1 << 15);
        assert_eq!(cfg.solver.length, 800.0);
        assert_eq!(cfg.initial.epsilon, 0.1);
        assert_eq!(cfg.solver_config(), SolverConfig::default());
    }

    #[test]
    fn round_trip_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.solver.integrator = Integrator::Etdrk4;
        cfg.solver.dealias = Dealias::TwoThirds;
        cfg.probe.velocities = vec![-2.0, -1.0];
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::from_toml("[solver]\nnn = 4\n").unwrap_err();
        assert!(err.to_string().contains("nn"), "{err}");
        let err = ExperimentConfig::from_toml("[solvr]\n").unwrap_err();
        assert!(err.to_string().contains("solvr"), "{err}");
    }

    #[test]
    fn spec_key_names() {
        let cfg = ExperimentConfig::from_toml(
            "[solver]\nL = 100.0\nT = 2.0\nn = 512\nintegrator = \"etdrk4\"\ndealias = \"two-thirds\"\n\
             [appendix]\nN_min = 32.0\nN_max = 64.0\n",
        )
        .unwrap();
        assert_eq!(cfg.solver.length, 100.0);
        assert_eq!(cfg.solver.t_final, 2.0);
        assert_eq!(cfg.solver.integrator, Integrator::Etdrk4);
        assert_eq!(cfg.appendix.n_max, 64.0);
    }

    #[test]
    fn preconditions_checked_at_load() {
        for bad in [
            "[solver]\nn = 1000\n",
            "[solver]\ndt = -1.0\n",
            "[solver]\np = 5\n",
            "[appendix]\nrho = 0.6\n",
            "[norms]\ns = 3.0\n",
            "[decomposition]\ndelta = 0.0\n",
            "[probe]\nvelocities = [1.0]\n",
            "[initial]\nkind = \"file\"\n",
        ] {
            assert!(ExperimentConfig::from_toml(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn hashes_separate_trajectory_from_post_processing() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.probe.alpha = 0.03;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.trajectory_hash(), b.trajectory_hash());
        b.output.dir = PathBuf::from("elsewhere");
        b.probe.alpha = a.probe.alpha;
        assert_eq!(a.hash(), b.hash());
        b.solver.dt = 0.005;
        assert_ne!(a.trajectory_hash(), b.trajectory_hash());
    }
}
