//! Result files: density grids (CSV source of truth + PGM view), trace
//! logs, run summaries, eigenmode tables and path exports.

use anyhow::{bail, Context};
use std::fmt::Write as _;
use std::path::Path;

use stabtop::continuation::EquilibriumPath;
use stabtop::model::Model;
use stabtop::optimizer::IterationRecord;
use stabtop::stability::EigenSolution;

/// A density field on a structured grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub nx: usize,
    pub ny: usize,
    pub elem_size: f64,
    /// Element values with iy fastest (model element ordering).
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn from_model(model: &Model, rho: &[f64]) -> Self {
        Self {
            nx: model.nx,
            ny: model.ny,
            elem_size: model.elem_size,
            values: rho.to_vec(),
        }
    }

    /// CSV layout: `nx,ny,elem_size` header pair, then one line per mesh row
    /// (iy ascending), each line ix = 0..nx−1.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("nx,ny,elem_size\n");
        let _ = writeln!(s, "{},{},{}", self.nx, self.ny, self.elem_size);
        for iy in 0..self.ny {
            let row: Vec<String> = (0..self.nx)
                .map(|ix| format!("{}", self.values[ix * self.ny + iy]))
                .collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }

    pub fn from_csv(text: &str) -> anyhow::Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().context("empty density file")?;
        if header.trim() != "nx,ny,elem_size" {
            bail!("unexpected density header: {header:?}");
        }
        let dims = lines.next().context("missing dimension line")?;
        let parts: Vec<&str> = dims.split(',').collect();
        if parts.len() != 3 {
            bail!("dimension line must have nx,ny,elem_size");
        }
        let nx: usize = parts[0].trim().parse().context("parsing nx")?;
        let ny: usize = parts[1].trim().parse().context("parsing ny")?;
        let elem_size: f64 = parts[2].trim().parse().context("parsing elem_size")?;
        let mut values = vec![0.0; nx * ny];
        for (iy, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if iy >= ny {
                bail!("too many rows in density file");
            }
            let row: Vec<&str> = line.split(',').collect();
            if row.len() != nx {
                bail!("row {iy} has {} entries, expected {nx}", row.len());
            }
            for (ix, v) in row.iter().enumerate() {
                values[ix * ny + iy] = v.trim().parse().context("parsing density value")?;
            }
        }
        Ok(Self { nx, ny, elem_size, values })
    }

    pub fn write_csv(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, self.to_csv())
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn read_csv(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        Self::from_csv(&text)
    }

    /// Portable graymap view, pixel = 1 − ρ, top mesh row first.
    pub fn to_pgm(&self) -> String {
        let mut s = format!("P2\n{} {}\n255\n", self.nx, self.ny);
        for iy in (0..self.ny).rev() {
            let row: Vec<String> = (0..self.nx)
                .map(|ix| {
                    let v = self.values[ix * self.ny + iy].clamp(0.0, 1.0);
                    format!("{}", ((1.0 - v) * 255.0).round() as u8)
                })
                .collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn write_pgm(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, self.to_pgm())
            .with_context(|| format!("writing {}", path.display()))
    }
}

/// One trace-log line per iteration (tab-separated; lists joined by ';').
pub fn trace_line(r: &IterationRecord) -> String {
    let lambdas: Vec<String> = r.eigenvalues.iter().map(|v| format!("{v:e}")).collect();
    let mult: Vec<String> = r.multiplicities.iter().map(|v| v.to_string()).collect();
    format!(
        "{}\t{:e}\t{:e}\t{}\t{}\t{}\t{}",
        r.iteration,
        r.f0,
        r.f1,
        r.cutoff_updates,
        if r.inner_active { 1 } else { 0 },
        mult.join(";"),
        lambdas.join(";"),
    )
}

pub const TRACE_HEADER: &str = "iteration\tf0\tf1\tcutoff_updates\tinner\tmultiplicities\tlambdas";

/// Eigen report: eigenvalues with cluster multiplicities, plus per-node mode
/// components.
pub fn eigen_report(model: &Model, eig: &EigenSolution) -> (String, String) {
    let mut summary = String::from("index\tlambda\tcluster\tmultiplicity\n");
    for (c_idx, c) in eig.clusters.iter().enumerate() {
        for q in c.start..c.start + c.len {
            let _ = writeln!(summary, "{q}\t{:e}\t{c_idx}\t{}", eig.values[q], c.len);
        }
    }
    let m_bar = eig.m_bar().min(eig.vectors.len());
    let mut modes = String::from("node");
    for q in 0..m_bar {
        let _ = write!(modes, "\tphi{q}_x\tphi{q}_y");
    }
    modes.push('\n');
    for node in 0..model.n_nodes() {
        let _ = write!(modes, "{node}");
        for v in eig.vectors.iter().take(m_bar) {
            let _ = write!(modes, "\t{:e}\t{:e}", v[2 * node], v[2 * node + 1]);
        }
        modes.push('\n');
    }
    (summary, modes)
}

/// Path export: branch id, step, γ, monitored displacement, λ₁, stable flag,
/// critical marker.
pub fn paths_csv(paths: &[&EquilibriumPath], monitor_dof: usize) -> String {
    let mut s = String::from("branch,step,gamma,monitor_disp,lambda1,stable,critical\n");
    for path in paths {
        for (i, p) in path.points.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                path.branch_id,
                i,
                p.gamma,
                p.u[monitor_dof],
                p.lambda1,
                u8::from(p.stable),
                u8::from(p.critical),
            );
        }
    }
    s
}
