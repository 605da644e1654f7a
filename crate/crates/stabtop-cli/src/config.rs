//! Run configuration: strict TOML schema (unknown keys are fatal) covering
//! the problem geometry, filter, optimizer, analysis and output sections.

use anyhow::{bail, Context};
use serde::Deserialize;
use std::path::Path;

use stabtop::fem::SolverOptions;
use stabtop::linalg::EigenOptions;
use stabtop::model::{build_grid_mesh, Dof, LoadSpec, Model, SupportSpec, SymmetrySpec};
use stabtop::optimizer::OptimizationConfig;
use stabtop::stability::PseudoMassParams;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub filter: FilterSection,
    #[serde(default)]
    pub optimizer: Option<OptimizerSection>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub verify: Option<VerifySection>,
    #[serde(default)]
    pub output: OutputSection,
    /// Worker threads for element-parallel loops (0 = all cores).
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub nx: usize,
    pub ny: usize,
    pub elem_size: f64,
    pub youngs: f64,
    pub poisson: f64,
    #[serde(default = "default_thickness")]
    pub thickness: f64,
    pub supports: Vec<SupportEntry>,
    pub loads: Vec<LoadEntry>,
}

fn default_thickness() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportEntry {
    /// Grid node indices [ix, iy].
    pub at: [usize; 2],
    /// Fixed components: "x", "y" or "xy".
    pub dirs: String,
    #[serde(default)]
    pub value: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadEntry {
    pub at: [usize; 2],
    pub dir: String,
    pub magnitude: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub r_min: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default)]
    pub lambda_hat: Option<f64>,
    pub v_f: f64,
    #[serde(default = "default_m_clusters")]
    pub m_clusters: usize,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_mma_move")]
    pub mma_move: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_true")]
    pub continuation: bool,
    #[serde(default = "default_gamma")]
    pub gamma_target: f64,
    #[serde(default)]
    pub symmetry: Symmetry,
    #[serde(default = "default_mult_tol")]
    pub multiplicity_tol: f64,
}

fn default_m_clusters() -> usize {
    6
}
fn default_theta() -> f64 {
    0.04
}
fn default_mma_move() -> f64 {
    0.3
}
fn default_max_outer() -> usize {
    800
}
fn default_true() -> bool {
    true
}
fn default_gamma() -> f64 {
    1.0
}
fn default_mult_tol() -> f64 {
    1e-8
}

#[derive(Debug, Deserialize, Clone, Copy, Default, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Symmetry {
    #[default]
    None,
    HalfX,
    Quarter,
    Eighth,
}

impl From<Symmetry> for SymmetrySpec {
    fn from(s: Symmetry) -> Self {
        match s {
            Symmetry::None => SymmetrySpec::None,
            Symmetry::HalfX => SymmetrySpec::HalfX,
            Symmetry::Quarter => SymmetrySpec::Quarter,
            Symmetry::Eighth => SymmetrySpec::Eighth,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Arc-length step for path tracing; omitted = scaled automatically
    /// from the linear response at the target load.
    #[serde(default)]
    pub ell: Option<f64>,
    /// Branch-switch perturbation divisor τ.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// BCC cylinder radius as a fraction of ‖u_cr‖.
    #[serde(default = "default_r_factor")]
    pub r_factor: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Monitored node [ix, iy] for path exports (defaults to the first
    /// loaded node).
    #[serde(default)]
    pub monitor: Option<[usize; 2]>,
    #[serde(default = "default_monitor_dir")]
    pub monitor_dir: String,
    #[serde(default)]
    pub gamma_stop: Option<f64>,
    #[serde(default = "default_max_points")]
    pub max_points: usize,
}

fn default_tau() -> f64 {
    100.0
}
fn default_r_factor() -> f64 {
    0.1
}
fn default_seed() -> u64 {
    42
}
fn default_monitor_dir() -> String {
    "y".into()
}
fn default_max_points() -> usize {
    400
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            ell: None,
            tau: default_tau(),
            r_factor: default_r_factor(),
            seed: default_seed(),
            monitor: None,
            monitor_dir: default_monitor_dir(),
            gamma_stop: None,
            max_points: default_max_points(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_n_eigs")]
    pub n_eigs: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Pass/fail threshold on the worst relative error.
    #[serde(default = "default_max_rel_err")]
    pub max_rel_err: f64,
    /// Density range of the seeded random field.
    #[serde(default = "default_rho_range")]
    pub rho_range: [f64; 2],
}

fn default_h() -> f64 {
    1e-5
}
fn default_n_eigs() -> usize {
    6
}
fn default_max_rel_err() -> f64 {
    1e-3
}
fn default_rho_range() -> [f64; 2] {
    [0.3, 1.0]
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<String>,
    /// Density snapshot cadence in iterations (0 = final field only).
    #[serde(default)]
    pub snapshot_every: usize,
}

fn parse_dir(s: &str) -> anyhow::Result<Dof> {
    match s {
        "x" => Ok(Dof::X),
        "y" => Ok(Dof::Y),
        other => bail!("direction must be \"x\" or \"y\", got \"{other}\""),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.problem.nx == 0 || self.problem.ny == 0 {
            bail!("problem.nx and problem.ny must be at least 1");
        }
        if self.problem.elem_size <= 0.0 {
            bail!("problem.elem_size must be positive");
        }
        if self.filter.r_min <= 0.0 {
            bail!("filter.r_min must be positive");
        }
        if let Some(opt) = &self.optimizer {
            if !(0.0 < opt.v_f && opt.v_f < 1.0) {
                bail!("optimizer.v_f must lie in (0, 1)");
            }
            if opt.theta > 0.1 {
                bail!("optimizer.theta must satisfy theta <= 0.1");
            }
        }
        Ok(())
    }

    /// Builds the model from the problem section.
    pub fn build_model(&self) -> anyhow::Result<Model> {
        let p = &self.problem;
        let node = |at: [usize; 2]| -> anyhow::Result<usize> {
            if at[0] > p.nx || at[1] > p.ny {
                bail!(
                    "node [{}, {}] outside the ({} x {}) grid",
                    at[0],
                    at[1],
                    p.nx,
                    p.ny
                );
            }
            Ok(at[0] * (p.ny + 1) + at[1])
        };
        let mut supports = Vec::new();
        for s in &p.supports {
            let n = node(s.at)?;
            match s.dirs.as_str() {
                "xy" | "yx" => {
                    supports.push(SupportSpec { node: n, comp: Dof::X, value: s.value });
                    supports.push(SupportSpec { node: n, comp: Dof::Y, value: s.value });
                }
                d => supports.push(SupportSpec { node: n, comp: parse_dir(d)?, value: s.value }),
            }
        }
        let mut loads = Vec::new();
        for l in &p.loads {
            loads.push(LoadSpec {
                node: node(l.at)?,
                comp: parse_dir(&l.dir)?,
                magnitude: l.magnitude,
            });
        }
        let mut model = build_grid_mesh(p.nx, p.ny, p.elem_size, &supports, &loads)?;
        model.youngs = p.youngs;
        model.poisson = p.poisson;
        model.thickness = p.thickness;
        Ok(model)
    }

    /// Monitored DOF for path exports.
    pub fn monitor_dof(&self, model: &Model) -> anyhow::Result<usize> {
        let dir = parse_dir(&self.analysis.monitor_dir)?;
        if let Some(at) = self.analysis.monitor {
            if at[0] > self.problem.nx || at[1] > self.problem.ny {
                bail!("analysis.monitor outside the grid");
            }
            return Ok(2 * (at[0] * (self.problem.ny + 1) + at[1]) + dir.index());
        }
        // default: first loaded DOF
        for d in 0..model.n_dofs() {
            if model.load[d] != 0.0 {
                return Ok(d);
            }
        }
        bail!("no load to monitor; set analysis.monitor");
    }

    pub fn optimization_config(&self) -> anyhow::Result<OptimizationConfig> {
        let Some(opt) = &self.optimizer else {
            bail!("config has no [optimizer] section");
        };
        Ok(OptimizationConfig {
            lambda_hat: opt.lambda_hat,
            v_f: opt.v_f,
            m_clusters: opt.m_clusters,
            theta: opt.theta,
            mma_move: opt.mma_move,
            max_outer: opt.max_outer,
            continuation: opt.continuation,
            gamma_target: opt.gamma_target,
            tol_mult: opt.multiplicity_tol,
            pseudo_mass: PseudoMassParams::default(),
            eig_opts: EigenOptions::default(),
            solver: SolverOptions::default(),
            ..Default::default()
        })
    }
}
