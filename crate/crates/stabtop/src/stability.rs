//! Nonlinear stability analysis: pseudo-mass matrix construction,
//! generalized eigenanalysis of the tangent stiffness, eigenvalue
//! clustering, and critical-point classification.
//!
//! The eigenproblem (K_T − λ S_M)φ = 0 uses a diagonal pseudo-mass S_M that
//! carries unit weight on DOFs attached to solid elements and a tiny weight
//! on void-only DOFs, so spurious buckling modes of the void fictitious
//! domain are scaled out of the low end of the spectrum. On all-solid
//! designs S_M degenerates to the identity.

use nalgebra::{DVector, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::fem::{assemble, InterpState};
use crate::linalg::{fix_sign, lowest_eigenpairs, BandedSym, EigenOptions};
use crate::model::Model;

/// Parameters of the nodal pseudo-mass interpolation, with the cubic
/// transition coefficients derived from the C¹ conditions at both cutoffs.
#[derive(Debug, Clone)]
pub struct PseudoMassParams {
    /// p-norm power for the nodal pseudo-density.
    pub q: f64,
    /// Floor ε̂ of the pseudo-mass.
    pub eps_hat: f64,
    /// Penalization power of the low branch.
    pub p_m: f64,
    /// Lower cutoff ϖ_L.
    pub omega_l: f64,
    /// Upper cutoff ϖ_H.
    pub omega_h: f64,
    coeffs: [f64; 4],
}

impl PseudoMassParams {
    pub fn new(q: f64, eps_hat: f64, p_m: f64, omega_l: f64, omega_h: f64) -> Result<Self> {
        if !(0.0 < omega_l && omega_l < omega_h && omega_h <= 1.0) || eps_hat <= 0.0 {
            return Err(Error::Invalid(format!(
                "invalid pseudo-mass cutoffs/floor: w_L={omega_l}, w_H={omega_h}, eps={eps_hat}"
            )));
        }
        let (wl, wh) = (omega_l, omega_h);
        let a = Matrix4::new(
            1.0,
            wl,
            wl * wl,
            wl * wl * wl,
            0.0,
            1.0,
            2.0 * wl,
            3.0 * wl * wl,
            1.0,
            wh,
            wh * wh,
            wh * wh * wh,
            0.0,
            1.0,
            2.0 * wh,
            3.0 * wh * wh,
        );
        let b = Vector4::new(
            eps_hat + (1.0 - eps_hat) * wl.powf(p_m),
            p_m * (1.0 - eps_hat) * wl.powf(p_m - 1.0),
            1.0,
            0.0,
        );
        let lu = a.lu();
        let mut coeffs = lu
            .solve(&b)
            .ok_or_else(|| Error::Invalid("singular pseudo-mass coefficient system".into()))?;
        // one step of iterative refinement for the small first component
        if let Some(corr) = lu.solve(&(b - a * coeffs)) {
            coeffs += corr;
        }
        // residual check of the 4x4 system
        let res = (a * coeffs - b).norm();
        if res > 1e-12 * b.norm().max(1.0) {
            return Err(Error::Invalid(format!(
                "pseudo-mass coefficient residual {res:.3e}"
            )));
        }
        Ok(Self {
            q,
            eps_hat,
            p_m,
            omega_l,
            omega_h,
            coeffs: [coeffs[0], coeffs[1], coeffs[2], coeffs[3]],
        })
    }

    /// Same parameters with a different penalization power (continuation).
    pub fn with_p_m(&self, p_m: f64) -> Result<Self> {
        Self::new(self.q, self.eps_hat, p_m, self.omega_l, self.omega_h)
    }

    pub fn coeffs(&self) -> [f64; 4] {
        self.coeffs
    }

    /// Nodal pseudo-mass m̃(ϖ): three-branch interpolation, C¹ at both cutoffs.
    pub fn value(&self, omega: f64) -> f64 {
        if omega <= self.omega_l {
            self.eps_hat + (1.0 - self.eps_hat) * omega.powf(self.p_m)
        } else if omega < self.omega_h {
            let [a0, a1, a2, a3] = self.coeffs;
            a0 + omega * (a1 + omega * (a2 + omega * a3))
        } else {
            1.0
        }
    }

    /// dm̃/dϖ.
    pub fn derivative(&self, omega: f64) -> f64 {
        if omega <= self.omega_l {
            if omega == 0.0 && self.p_m < 1.0 {
                return 0.0;
            }
            self.p_m * (1.0 - self.eps_hat) * omega.powf(self.p_m - 1.0)
        } else if omega < self.omega_h {
            let [_, a1, a2, a3] = self.coeffs;
            a1 + omega * (2.0 * a2 + omega * 3.0 * a3)
        } else {
            0.0
        }
    }
}

impl Default for PseudoMassParams {
    fn default() -> Self {
        Self::new(15.0, 1e-9, 6.0, 0.1, 0.2).expect("default parameters are valid")
    }
}

/// Nodal pseudo-density ϖ_i = (Σ_{r∈ℬ_i} ρ_r^q)^{1/q}; a smooth upper
/// approximation of the maximum adjacent element density.
pub fn nodal_pseudo_density(rho: &[f64], node_elems: &[Vec<usize>], q: f64) -> Vec<f64> {
    node_elems
        .iter()
        .map(|elems| {
            let s: f64 = elems.iter().map(|&e| rho[e].powf(q)).sum();
            s.powf(1.0 / q)
        })
        .collect()
}

/// ∂ϖ_i/∂ρ_r for r ∈ ℬ_i: (Σ ρ^q)^{1/q − 1} ρ_r^{q−1}.
pub fn nodal_pseudo_density_derivative(rho: &[f64], elems: &[usize], q: f64) -> Vec<f64> {
    let s: f64 = elems.iter().map(|&e| rho[e].powf(q)).sum();
    if s <= 0.0 {
        return vec![0.0; elems.len()];
    }
    let outer = s.powf(1.0 / q - 1.0);
    elems.iter().map(|&e| outer * rho[e].powf(q - 1.0)).collect()
}

/// Diagonal of the pseudo-mass matrix S_M over all DOFs (m̃_i repeated per
/// displacement component). Fixed DOFs carry unit diagonal, matching the
/// boundary-condition treatment of K_T.
pub fn assemble_pseudo_mass(model: &Model, rho: &[f64], params: &PseudoMassParams) -> Vec<f64> {
    let omega = nodal_pseudo_density(rho, &model.node_elems, params.q);
    let mut diag = vec![0.0; model.n_dofs()];
    for (i, &w) in omega.iter().enumerate() {
        let m = params.value(w);
        diag[2 * i] = m;
        diag[2 * i + 1] = m;
    }
    for &(dof, _) in &model.fixed {
        diag[dof] = 1.0;
    }
    diag
}

/// A maximal group of eigenvalues within the multiplicity tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cluster {
    /// Index of the first member in the eigenvalue list.
    pub start: usize,
    /// Multiplicity N_r.
    pub len: usize,
}

/// Lowest eigenpairs of (K_T, S_M) grouped into clusters.
#[derive(Debug, Clone)]
pub struct EigenSolution {
    /// Ascending eigenvalues (enough to cover the requested clusters, plus
    /// the first member of the next cluster when one exists).
    pub values: Vec<f64>,
    /// S_M-orthonormal eigenvectors, same length as `values`.
    pub vectors: Vec<DVector<f64>>,
    /// The first m clusters.
    pub clusters: Vec<Cluster>,
    /// Absolute multiplicity tolerance used.
    pub tol_mult: f64,
}

impl EigenSolution {
    /// Number of eigenvalues covered by the clusters (m̄ = Σ N_r).
    pub fn m_bar(&self) -> usize {
        self.clusters.iter().map(|c| c.len).sum()
    }

    pub fn multiplicities(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.len).collect()
    }

    pub fn has_repeated(&self) -> bool {
        self.clusters.iter().any(|c| c.len > 1)
    }

    /// Members (indices into `values`) of one cluster.
    pub fn cluster_members(&self, c: &Cluster) -> std::ops::Range<usize> {
        c.start..c.start + c.len
    }
}

/// Chain clustering: adjacent eigenvalues belong to one cluster when their
/// gap is below the absolute tolerance.
pub fn cluster_eigenvalues(values: &[f64], tol: f64) -> Vec<Cluster> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || values[i] - values[i - 1] >= tol {
            out.push(Cluster { start, len: i - start });
            start = i;
        }
    }
    out
}

/// Smallest eigenpairs of (K_T, S_M) with S_M diagonal positive, covering `m`
/// clusters. Extends the solve window until the (m+1)-th cluster begins (or
/// the spectrum is exhausted). Eigenvectors are S_M-orthonormalized with a
/// deterministic sign.
pub fn eigen_lowest(
    k_t: &BandedSym,
    s_diag: &[f64],
    m: usize,
    tol_mult: f64,
    opts: &EigenOptions,
) -> Result<EigenSolution> {
    let n = k_t.n();
    if s_diag.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: s_diag.len(),
            context: "pseudo-mass diagonal",
        });
    }
    if s_diag.iter().any(|&s| s <= 0.0) {
        return Err(Error::Invalid("pseudo-mass diagonal must be positive".into()));
    }
    // standard form A = S^{-1/2} K S^{-1/2}
    let inv_sqrt: Vec<f64> = s_diag.iter().map(|&s| 1.0 / s.sqrt()).collect();
    let mut a = k_t.clone();
    a.scale_sym(&inv_sqrt);

    let mut want = (m + 2).min(n);
    loop {
        let pairs = lowest_eigenpairs(&a, want, opts)?;
        let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let clusters = cluster_eigenvalues(&values, tol_mult);
        let enough = clusters.len() > m || values.len() == n;
        if !enough {
            want = (want * 2).min(n).max(want + 2);
            continue;
        }
        let kept: Vec<Cluster> = clusters.into_iter().take(m).collect();
        let m_bar: usize = kept.iter().map(|c| c.len).sum();
        // keep one sentinel value past the clusters when available
        let keep_n = (m_bar + 1).min(values.len());

        let mut vectors: Vec<DVector<f64>> = Vec::with_capacity(keep_n);
        for (_, v) in pairs.into_iter().take(keep_n) {
            // back-transform and S-orthonormalize
            let mut phi = DVector::from_fn(n, |i, _| v[i] * inv_sqrt[i]);
            for prev in vectors.iter().rev().take(8) {
                let c = s_dot(s_diag, prev, &phi);
                phi.axpy(-c, prev, 1.0);
            }
            let nrm = s_dot(s_diag, &phi, &phi).sqrt();
            if nrm <= 0.0 {
                return Err(Error::EigenNonConvergence(
                    "degenerate eigenvector after orthonormalization".into(),
                ));
            }
            phi /= nrm;
            fix_sign(&mut phi);
            vectors.push(phi);
        }
        let values: Vec<f64> = values.into_iter().take(keep_n).collect();

        // residual certification; the floor term covers the roundoff of
        // evaluating K φ itself when ‖Kφ‖ ≪ ‖|K||φ|‖
        let mut kphi = vec![0.0; n];
        for (i, phi) in vectors.iter().enumerate() {
            k_t.mul_vec(phi.as_slice(), &mut kphi);
            let mut num = 0.0;
            let mut den = 0.0;
            for d in 0..n {
                let r = kphi[d] - values[i] * s_diag[d] * phi[d];
                num += r * r;
                den += kphi[d] * kphi[d];
            }
            let floor = 32.0 * f64::EPSILON * k_t.mul_abs_norm(phi.as_slice());
            if num.sqrt() > 1e-8 * den.sqrt().max(1e-300) + floor {
                return Err(Error::EigenNonConvergence(format!(
                    "eigenpair {i} residual {:.3e}",
                    num.sqrt() / den.sqrt().max(1e-300)
                )));
            }
        }
        return Ok(EigenSolution {
            values,
            vectors,
            clusters: kept,
            tol_mult,
        });
    }
}

fn s_dot(s: &[f64], a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .zip(s.iter())
        .map(|((x, y), w)| x * y * w)
        .sum()
}

/// Free (unconstrained) DOF indices of a model.
pub fn free_indices(model: &Model) -> Vec<usize> {
    (0..model.n_dofs()).filter(|&d| !model.is_fixed(d)).collect()
}

/// Free-free submatrix of a banded matrix.
pub fn extract_free(banded: &BandedSym, free: &[usize]) -> BandedSym {
    let n = free.len();
    let bw = banded.bandwidth().min(n.saturating_sub(1));
    let mut out = BandedSym::zeros(n, bw);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate().skip(a) {
            if j - i > banded.bandwidth() {
                break;
            }
            let v = banded.get(j, i);
            if v != 0.0 {
                out.set(b, a, v);
            }
        }
    }
    out
}

/// Scatters a free-DOF vector back to the full DOF space (zeros elsewhere).
pub fn embed_free(v: &DVector<f64>, free: &[usize], n_dofs: usize) -> DVector<f64> {
    let mut out = DVector::zeros(n_dofs);
    for (a, &d) in free.iter().enumerate() {
        out[d] = v[a];
    }
    out
}

/// Stability eigenanalysis at a converged state: assembles K_T and S_M,
/// reduces to free DOFs, solves the generalized problem and re-embeds the
/// modes over the full DOF space.
#[allow(clippy::too_many_arguments)]
pub fn analyze_stability(
    model: &Model,
    u: &DVector<f64>,
    rho: &[f64],
    st: InterpState,
    params: Option<&PseudoMassParams>,
    m: usize,
    tol_mult: f64,
    opts: &EigenOptions,
) -> Result<EigenSolution> {
    let asm = assemble(model, u, rho, 0.0, st)?;
    let s_full = match params {
        Some(p) => assemble_pseudo_mass(model, rho, p),
        None => vec![1.0; model.n_dofs()],
    };
    let free = free_indices(model);
    let k_ff = extract_free(&asm.stiffness, &free);
    let s_ff: Vec<f64> = free.iter().map(|&d| s_full[d]).collect();
    let sol = eigen_lowest(&k_ff, &s_ff, m, tol_mult, opts)?;
    Ok(EigenSolution {
        vectors: sol
            .vectors
            .iter()
            .map(|v| embed_free(v, &free, model.n_dofs()))
            .collect(),
        values: sol.values,
        clusters: sol.clusters,
        tol_mult: sol.tol_mult,
    })
}

/// Kind of a critical point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticalKind {
    Bifurcation,
    Limit,
}

impl std::fmt::Display for CriticalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CriticalKind::Bifurcation => f.write_str("bifurcation"),
            CriticalKind::Limit => f.write_str("limit"),
        }
    }
}

/// Classifies a critical point by the work of the critical mode on the load:
/// |φᵀP̂|/(‖φ‖‖P̂‖) < tol ⇒ bifurcation, otherwise limit point.
pub fn classify_critical_point(
    phi_c: &DVector<f64>,
    load: &DVector<f64>,
    tol_cls: f64,
) -> CriticalKind {
    let denom = phi_c.norm() * load.norm();
    if denom == 0.0 {
        return CriticalKind::Bifurcation;
    }
    if phi_c.dot(load).abs() / denom < tol_cls {
        CriticalKind::Bifurcation
    } else {
        CriticalKind::Limit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_grid_mesh, Dof, LoadSpec, SupportSpec};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn pseudo_density_examples() {
        let adjacency = vec![vec![0usize]];
        let w = nodal_pseudo_density(&[0.6], &adjacency, 15.0);
        assert_relative_eq!(w[0], 0.6, max_relative = 1e-14);

        // p-norm upper-approximates the max of the surrounding densities
        let adjacency = vec![vec![0usize, 1, 2, 3]];
        let w = nodal_pseudo_density(&[0.6, 0.3, 0.1, 0.2], &adjacency, 15.0);
        assert!(w[0] >= 0.6 && (w[0] - 0.6).abs() < 1e-3, "got {}", w[0]);

        let w = nodal_pseudo_density(&[1.0, 1.0, 1.0, 1.0], &adjacency, 15.0);
        assert_relative_eq!(w[0], 4f64.powf(1.0 / 15.0), max_relative = 1e-14);
        assert!((w[0] - 1.0968).abs() < 1e-4);
    }

    #[test]
    fn pseudo_density_derivative_matches_fd() {
        let elems = vec![0usize, 1, 2];
        let rho = vec![0.4, 0.7, 0.2];
        let d = nodal_pseudo_density_derivative(&rho, &elems, 15.0);
        let adjacency = vec![elems.clone()];
        // h large enough that the tiny ρ^{q−1} components rise above
        // subtractive cancellation in ϖ ≈ 0.7
        let h = 1e-5;
        for r in 0..3 {
            let mut rp = rho.clone();
            let mut rm = rho.clone();
            rp[r] += h;
            rm[r] -= h;
            let fd = (nodal_pseudo_density(&rp, &adjacency, 15.0)[0]
                - nodal_pseudo_density(&rm, &adjacency, 15.0)[0])
                / (2.0 * h);
            assert_relative_eq!(d[r], fd, max_relative = 1e-3, epsilon = 1e-12);
        }
        // all-void guard
        let d0 = nodal_pseudo_density_derivative(&[0.0, 0.0, 0.0], &elems, 15.0);
        assert!(d0.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pseudo_mass_branches_and_coefficients() {
        let pm = PseudoMassParams::new(15.0, 1e-9, 6.0, 0.1, 0.2).unwrap();
        assert_eq!(pm.value(0.2), 1.0);
        assert_eq!(pm.value(0.25), 1.0);
        assert_relative_eq!(pm.value(0.0), 1e-9);
        // the defining C¹ conditions are the oracle for the cubic
        let [a0, a1, a2, a3] = pm.coeffs();
        let cubic = |w: f64| a0 + a1 * w + a2 * w * w + a3 * w * w * w;
        let dcubic = |w: f64| a1 + 2.0 * a2 * w + 3.0 * a3 * w * w;
        let low = |w: f64| 1e-9 + (1.0 - 1e-9) * w.powf(6.0);
        let dlow = |w: f64| 6.0 * (1.0 - 1e-9) * w.powf(5.0);
        assert_relative_eq!(cubic(0.1), low(0.1), epsilon = 1e-12);
        assert_relative_eq!(dcubic(0.1), dlow(0.1), epsilon = 1e-11);
        assert_relative_eq!(cubic(0.2), 1.0, max_relative = 1e-12);
        assert!(dcubic(0.2).abs() < 1e-10);
        // spot value inside the transition comes from the polynomial
        assert_relative_eq!(pm.value(0.15), cubic(0.15), max_relative = 1e-14);
    }

    #[test]
    fn pseudo_mass_is_c1_at_cutoffs() {
        let pm = PseudoMassParams::default();
        for w in [pm.omega_l, pm.omega_h] {
            let dm = pm.derivative(w - 1e-12);
            let dp = pm.derivative(w + 1e-12);
            assert!((dm - dp).abs() <= 1e-9, "kink at {w}: {dm} vs {dp}");
        }
        // value continuity
        for w in [pm.omega_l, pm.omega_h] {
            let vm = pm.value(w - 1e-14);
            let vp = pm.value(w + 1e-14);
            assert!((vm - vp).abs() <= 1e-12);
        }
        // derivative matches FD inside each branch
        for w in [0.05, 0.15, 0.5] {
            let h = 1e-8;
            let fd = (pm.value(w + h) - pm.value(w - h)) / (2.0 * h);
            assert_relative_eq!(pm.derivative(w), fd, max_relative = 1e-5, epsilon = 1e-8);
        }
    }

    fn column_model(void_pad: usize, solid_cols: usize, ny: usize) -> (Model, Vec<f64>) {
        let nx = solid_cols + 2 * void_pad;
        let mid_ix = nx / 2;
        let mut supports = Vec::new();
        let bottom = |ix: usize| ix * (ny + 1);
        let top = |ix: usize| ix * (ny + 1) + ny;
        for ix in [mid_ix - 1, mid_ix, mid_ix + 1] {
            supports.extend(SupportSpec::pin(bottom(ix)));
            supports.push(SupportSpec::roller_x(top(ix)));
        }
        let loads: Vec<LoadSpec> = [mid_ix - 1, mid_ix, mid_ix + 1]
            .iter()
            .map(|&ix| LoadSpec { node: top(ix), comp: Dof::Y, magnitude: -1.0 / 3.0 })
            .collect();
        let mut m = build_grid_mesh(nx, ny, 10.0, &supports, &loads).unwrap();
        m.youngs = 3000.0;
        m.poisson = 0.4;
        let mut rho = vec![0.0; m.n_elems()];
        for ix in void_pad..void_pad + solid_cols {
            for iy in 0..ny {
                rho[m.elem_id(ix, iy)] = 1.0;
            }
        }
        (m, rho)
    }

    #[test]
    fn pseudo_mass_matrix_degenerate_cases() {
        let (m, _) = column_model(2, 4, 6);
        let pm = PseudoMassParams::default();
        let all_solid = vec![1.0; m.n_elems()];
        let s = assemble_pseudo_mass(&m, &all_solid, &pm);
        assert!(s.iter().all(|&v| v == 1.0));
        let all_void = vec![0.0; m.n_elems()];
        let s = assemble_pseudo_mass(&m, &all_void, &pm);
        for d in 0..m.n_dofs() {
            if m.is_fixed(d) {
                assert_eq!(s[d], 1.0);
            } else {
                assert_relative_eq!(s[d], 1e-9);
            }
        }
    }

    #[test]
    fn pseudo_mass_partitions_by_solid_adjacency() {
        let (m, rho) = column_model(2, 4, 6);
        let pm = PseudoMassParams::default();
        let s = assemble_pseudo_mass(&m, &rho, &pm);
        for node in 0..m.n_nodes() {
            let solid_adjacent = m.node_elems[node].iter().any(|&e| rho[e] >= 0.5);
            for d in [2 * node, 2 * node + 1] {
                if m.is_fixed(d) {
                    continue;
                }
                if solid_adjacent {
                    assert_eq!(s[d], 1.0);
                } else {
                    assert!(s[d] <= 1e-8, "void-only dof {d} got {}", s[d]);
                }
            }
        }
    }

    #[test]
    fn eigen_lowest_diagonal_examples() {
        let k = BandedSym::from_dense(&DMatrix::from_diagonal(&nalgebra::dvector![2.0, 5.0]));
        let sol = eigen_lowest(&k, &[1.0, 1.0], 2, 1e-8, &EigenOptions::default()).unwrap();
        assert_relative_eq!(sol.values[0], 2.0);
        assert_relative_eq!(sol.values[1], 5.0);

        let sol = eigen_lowest(&k, &[4.0, 1.0], 2, 1e-8, &EigenOptions::default()).unwrap();
        assert_relative_eq!(sol.values[0], 0.5);
        assert_relative_eq!(sol.values[1], 5.0);
        // S-orthonormal
        for (i, vi) in sol.vectors.iter().enumerate() {
            for (j, vj) in sol.vectors.iter().enumerate() {
                let d = s_dot(&[4.0, 1.0], vi, vj);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(d, expect, epsilon = 1e-8);
            }
        }

        let k = BandedSym::from_dense(&DMatrix::from_diagonal(&nalgebra::dvector![3.0, 3.0, 7.0]));
        let sol = eigen_lowest(&k, &[1.0; 3], 2, 1e-8, &EigenOptions::default()).unwrap();
        assert_eq!(sol.multiplicities(), vec![2, 1]);
    }

    #[test]
    fn classify_examples() {
        let p = nalgebra::dvector![0.0, 1.0, 0.0, 0.0];
        let phi_orth = nalgebra::dvector![1.0, 0.0, 0.0, 0.0];
        assert_eq!(
            classify_critical_point(&phi_orth, &p, 1e-6),
            CriticalKind::Bifurcation
        );
        let phi_par = &p / p.norm();
        assert_eq!(
            classify_critical_point(&phi_par, &p, 1e-6),
            CriticalKind::Limit
        );
    }

    /// Conforming-vs-fictitious equivalence on a small pinned column, plus
    /// spurious-mode suppression (miniature of the acceptance experiment).
    #[test]
    fn fictitious_domain_equivalence_miniature() {
        let ny = 20;
        let (conf_model, conf_rho) = column_model(0, 4, ny);
        let (fict_model, fict_rho) = column_model(4, 4, ny);
        let st = InterpState::of(&conf_model);
        let opts = EigenOptions::default();

        let gamma = 60.0;
        let conf_state =
            crate::fem::solve_equilibrium(&conf_model, &conf_rho, gamma, &Default::default())
                .unwrap();
        let fict_state =
            crate::fem::solve_equilibrium(&fict_model, &fict_rho, gamma, &Default::default())
                .unwrap();

        let conf = analyze_stability(
            &conf_model, &conf_state.u, &conf_rho, st, None, 6, 1e-8, &opts,
        )
        .unwrap();
        let pm = PseudoMassParams::default();
        let fict = analyze_stability(
            &fict_model, &fict_state.u, &fict_rho, st, Some(&pm), 6, 1e-8, &opts,
        )
        .unwrap();
        for q in 0..6 {
            assert_relative_eq!(conf.values[q], fict.values[q], max_relative = 1e-5);
        }

        // without the pseudo-mass the low spectrum is spurious void modes
        let fict_plain = analyze_stability(
            &fict_model, &fict_state.u, &fict_rho, st, None, 6, 1e-8, &opts,
        )
        .unwrap();
        let void_dofs: Vec<usize> = (0..fict_model.n_nodes())
            .filter(|&n| fict_model.node_elems[n].iter().all(|&e| fict_rho[e] < 0.5))
            .flat_map(|n| [2 * n, 2 * n + 1])
            .collect();
        for q in 0..6 {
            assert!(fict_plain.values[q] <= 1e-6 * conf.values[1].abs());
            let v = &fict_plain.vectors[q];
            let void_norm2: f64 = void_dofs.iter().map(|&d| v[d] * v[d]).sum();
            assert!(void_norm2 / v.norm_squared() > 0.99);
        }
        // with the pseudo-mass the retained modes carry essentially no
        // weight on void-only DOFs in the norm the modes are normalized in
        // (the raw components there are the harmonic halo of the solid mode)
        let s_full = assemble_pseudo_mass(&fict_model, &fict_rho, &pm);
        for v in fict.vectors.iter().take(6) {
            let void_s: f64 = void_dofs.iter().map(|&d| s_full[d] * v[d] * v[d]).sum();
            let tot_s: f64 = v.iter().enumerate().map(|(d, x)| s_full[d] * x * x).sum();
            assert!(void_s / tot_s < 0.01);
        }
        // and restricted to the solid member they are the conforming modes
        let solid_dofs: Vec<(usize, usize)> = (0..conf_model.n_nodes())
            .flat_map(|n| {
                let (ix, iy) = (n / (ny + 1), n % (ny + 1));
                let fict_node = (ix + 4) * (ny + 1) + iy;
                [(2 * n, 2 * fict_node), (2 * n + 1, 2 * fict_node + 1)]
            })
            .collect();
        for q in 0..6 {
            let a = &conf.vectors[q];
            let b = &fict.vectors[q];
            let dot: f64 = solid_dofs.iter().map(|&(c, f)| a[c] * b[f]).sum();
            let na: f64 = solid_dofs.iter().map(|&(c, _)| a[c] * a[c]).sum::<f64>().sqrt();
            let nb: f64 = solid_dofs.iter().map(|&(_, f)| b[f] * b[f]).sum::<f64>().sqrt();
            assert!(
                dot.abs() / (na * nb) > 1.0 - 1e-6,
                "mode {q} differs on the solid member"
            );
        }
    }

    #[test]
    fn blurred_column_smaller_eigenvalues_no_spurious_modes() {
        // bands of intermediate density around the solid core
        let ny = 20;
        let (model, mut rho) = column_model(6, 4, ny);
        // solid columns at ix = 6..10; blur with 0.8 / 0.6 / 0.3 / 0.1 bands
        for (offset, val) in [(1usize, 0.8), (2, 0.6), (3, 0.3), (4, 0.1)] {
            for iy in 0..ny {
                rho[model.elem_id(6 - offset, iy)] = val;
                rho[model.elem_id(9 + offset, iy)] = val;
            }
        }
        for r in rho.iter_mut() {
            if *r == 0.0 {
                *r = 0.001;
            }
        }
        let st = InterpState::of(&model);
        let gamma = 60.0;
        let state =
            crate::fem::solve_equilibrium(&model, &rho, gamma, &Default::default()).unwrap();
        let pm = PseudoMassParams::default();
        let blurred = analyze_stability(
            &model, &state.u, &rho, st, Some(&pm), 6, 1e-8, &EigenOptions::default(),
        )
        .unwrap();

        let (conf_model, conf_rho) = column_model(0, 4, ny);
        let conf_state =
            crate::fem::solve_equilibrium(&conf_model, &conf_rho, gamma, &Default::default())
                .unwrap();
        let conf = analyze_stability(
            &conf_model, &conf_state.u, &conf_rho, st, None, 6, 1e-8, &EigenOptions::default(),
        )
        .unwrap();
        // penalized intermediate densities soften the structure
        for q in 0..6 {
            assert!(
                blurred.values[q] < conf.values[q],
                "lambda {q}: blurred {} vs conforming {}",
                blurred.values[q],
                conf.values[q]
            );
        }
        // no spurious modes: each retained mode carries essentially no
        // pseudo-mass weight on the far-field void DOFs
        let s_full = assemble_pseudo_mass(&model, &rho, &pm);
        let void_dofs: Vec<usize> = (0..model.n_nodes())
            .filter(|&n| model.node_elems[n].iter().all(|&e| rho[e] <= 0.001))
            .flat_map(|n| [2 * n, 2 * n + 1])
            .collect();
        for v in blurred.vectors.iter().take(6) {
            let void_s: f64 = void_dofs.iter().map(|&d| s_full[d] * v[d] * v[d]).sum();
            let tot_s: f64 = v.iter().enumerate().map(|(d, x)| s_full[d] * x * x).sum();
            assert!(void_s / tot_s < 0.01);
        }
    }
}
