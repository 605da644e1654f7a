//! Adjoint sensitivities of end compliance and simple eigenvalues,
//! directional-derivative machinery for repeated eigenvalues, and the
//! central-difference verification harness.
//!
//! All eigenvalue kernels share one converged state: the tangent
//! factorization is reused for every adjoint solve, and the φ-fixed partial
//! derivatives are evaluated element-by-element from cached Gauss-point
//! state. For a cluster of multiplicity N, the N(N+1)/2 vectors z_sk combine
//! the explicit stiffness term, the pseudo-mass term and one adjoint solve
//! per (s, k) pair; first-order eigenvalue increments along a design
//! direction Δρ are the eigenvalues of T with T_sk = z_skᵀ Δρ.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use crate::error::{Error, Result};
use crate::fem::{
    assemble, element_caches, residual_density_derivative, solve_equilibrium, ElemVector,
    ElementKernelOutput, EquilibriumState, InterpState, ResidualDensityDerivative, SolverOptions,
};
use crate::linalg::{BandedLdlt, EigenOptions};
use crate::model::Model;
use crate::par::*;
use crate::stability::{
    analyze_stability, nodal_pseudo_density, nodal_pseudo_density_derivative, Cluster,
    EigenSolution, PseudoMassParams,
};

/// φ-independent per-Gauss-point sensitivity precomputation:
/// the ρ-derivative of the moduli at fixed eigenvectors and the
/// u-derivative of the moduli (16×8), both shared by every (s, k) pair.
struct GpSens {
    /// [∂𝔸/∂ρ|_F + ∂𝔸/∂F : ∂F/∂ρ], flattened 4×4.
    m_rho: SMatrix<f64, 4, 4>,
    /// [∂𝔸/∂u_e] = [∂𝔸/∂F][ηB], flattened 16×8.
    d_u: SMatrix<f64, 16, 8>,
}

struct ElemSens {
    gp: Vec<GpSens>,
}

fn build_elem_sens(caches: &[ElementKernelOutput]) -> Result<Vec<ElemSens>> {
    caches
        .par_iter()
        .map(|out| {
            let props = &out.props;
            let de_ratio = props.de / props.e;
            let mut gp_out = Vec::with_capacity(out.gp.len());
            for gp in &out.gp {
                let t6 = crate::material::tangent_moduli_derivative(&gp.f, props.kappa, props.mu)?;
                // ∂F/∂ρ = η' B u_e
                let dfdrho = gp.grad_u * props.deta;
                let mut m_rho = gp.a4 * de_ratio;
                let contracted = t6 * dfdrho;
                for a in 0..4 {
                    for b in 0..4 {
                        m_rho[(a, b)] += contracted[4 * a + b];
                    }
                }
                let d_u = t6 * (gp.geo.b * props.eta);
                gp_out.push(GpSens { m_rho, d_u });
            }
            Ok(ElemSens { gp: gp_out })
        })
        .collect()
}

/// Shared context for all sensitivity kernels at one converged state.
pub struct SensitivityContext<'a> {
    pub model: &'a Model,
    pub rho: &'a [f64],
    pub st: InterpState,
    caches: Vec<ElementKernelOutput>,
    sens: Vec<ElemSens>,
    dr_drho: ResidualDensityDerivative,
    factor: BandedLdlt,
    near_singular: bool,
}

impl<'a> SensitivityContext<'a> {
    pub fn new(
        model: &'a Model,
        state: &EquilibriumState,
        rho: &'a [f64],
        st: InterpState,
    ) -> Result<Self> {
        let caches = element_caches(model, &state.u, rho, st)?;
        let sens = build_elem_sens(&caches)?;
        let dr_drho = residual_density_derivative(model, &state.u, rho, st)?;
        let asm = assemble(model, &state.u, rho, state.gamma, st)?;
        let factor = asm.stiffness.factor_ldlt();
        let near_singular = factor.is_near_singular();
        Ok(Self {
            model,
            rho,
            st,
            caches,
            sens,
            dr_drho,
            factor,
            near_singular,
        })
    }

    /// Adjoint solve against the stored tangent factorization. The RHS is
    /// zeroed on fixed DOFs first.
    fn adjoint_solve(&self, mut rhs: DVector<f64>) -> Result<DVector<f64>> {
        if self.near_singular {
            return Err(Error::AdjointSolveFailure);
        }
        for &(dof, _) in &self.model.fixed {
            rhs[dof] = 0.0;
        }
        self.factor.solve_in_place(rhs.as_mut_slice());
        if !rhs.iter().all(|x| x.is_finite()) {
            return Err(Error::AdjointSolveFailure);
        }
        Ok(rhs)
    }

    /// vᵀ ∂R/∂ρ per element.
    pub fn residual_term(&self, v: &DVector<f64>) -> Vec<f64> {
        self.dr_drho.left_multiply(v)
    }

    /// Explicit term ∂(φ_sᵀ K_T φ_k)/∂ρ_e at fixed eigenvectors, per element.
    fn explicit_stiffness_term(&self, phi_s: &DVector<f64>, phi_k: &DVector<f64>) -> Vec<f64> {
        let model = self.model;
        (0..model.n_elems())
            .into_par_iter()
            .map(|e| {
                let out = &self.caches[e];
                let es = &self.sens[e];
                let props = &out.props;
                let dofs = model.elem_dofs(e);
                let mut ps = ElemVector::zeros();
                let mut pk = ElemVector::zeros();
                for (a, &d) in dofs.iter().enumerate() {
                    ps[a] = phi_s[d];
                    pk[a] = phi_k[d];
                }
                let eta = props.eta;
                let deta = props.deta;
                let lin_ratio = props.de_lin / props.e_lin;
                let mut acc = 0.0;
                for (gp, gs) in out.gp.iter().zip(&es.gp) {
                    let bs = gp.geo.b * ps;
                    let bk = gp.geo.b * pk;
                    let bls = gp.geo.bl * ps;
                    let blk = gp.geo.bl * pk;
                    let cblk = props.c_voigt * blk;
                    let nl = 2.0 * eta * deta * bs.dot(&(gp.a4 * bk))
                        + eta * eta * bs.dot(&(gs.m_rho * bk));
                    let lin = -2.0 * eta * deta * bls.dot(&cblk)
                        + (1.0 - eta * eta) * lin_ratio * bls.dot(&cblk);
                    acc += gp.geo.w * (nl + lin);
                }
                acc * model.thickness
            })
            .collect()
    }

    /// ∂(φ_sᵀ K_T φ_k)/∂u at fixed eigenvectors (global vector).
    fn stiffness_u_derivative(&self, phi_s: &DVector<f64>, phi_k: &DVector<f64>) -> DVector<f64> {
        let model = self.model;
        let per_elem: Vec<ElemVector> = (0..model.n_elems())
            .into_par_iter()
            .map(|e| {
                let out = &self.caches[e];
                let es = &self.sens[e];
                let eta = out.props.eta;
                let dofs = model.elem_dofs(e);
                let mut ps = ElemVector::zeros();
                let mut pk = ElemVector::zeros();
                for (a, &d) in dofs.iter().enumerate() {
                    ps[a] = phi_s[d];
                    pk[a] = phi_k[d];
                }
                let mut acc = ElemVector::zeros();
                for (gp, gs) in out.gp.iter().zip(&es.gp) {
                    let bs = gp.geo.b * ps;
                    let bk = gp.geo.b * pk;
                    let mut outer = SVector::<f64, 16>::zeros();
                    for a in 0..4 {
                        for b in 0..4 {
                            outer[4 * a + b] = bs[a] * bk[b];
                        }
                    }
                    acc += (gs.d_u.transpose() * outer) * (eta * eta * gp.geo.w);
                }
                acc * model.thickness
            })
            .collect();
        let mut g = DVector::zeros(model.n_dofs());
        for (e, contrib) in per_elem.iter().enumerate() {
            for (a, &d) in self.model.elem_dofs(e).iter().enumerate() {
                g[d] += contrib[a];
            }
        }
        g
    }

    /// ∂(φ_sᵀ S_M φ_k)/∂ρ_e at fixed eigenvectors, per element, through the
    /// nodal pseudo-density chain.
    fn pseudo_mass_term(
        &self,
        phi_s: &DVector<f64>,
        phi_k: &DVector<f64>,
        pm: &PseudoMassParams,
    ) -> Vec<f64> {
        let model = self.model;
        let omega = nodal_pseudo_density(self.rho, &model.node_elems, pm.q);
        let mut g = vec![0.0; model.n_elems()];
        for (i, elems) in model.node_elems.iter().enumerate() {
            let dm = pm.derivative(omega[i]);
            if dm == 0.0 {
                continue;
            }
            let mut pair = 0.0;
            for d in [2 * i, 2 * i + 1] {
                if !model.is_fixed(d) {
                    pair += phi_s[d] * phi_k[d];
                }
            }
            if pair == 0.0 {
                continue;
            }
            let domega = nodal_pseudo_density_derivative(self.rho, elems, pm.q);
            for (slot, &e) in elems.iter().enumerate() {
                g[e] += pair * dm * domega[slot];
            }
        }
        g
    }

    /// z_sk for one pair of S_M-orthonormal eigenvectors at eigenvalue λ̃:
    /// explicit stiffness term − λ̃ · pseudo-mass term + adjoint residual term.
    pub fn eigen_pair_gradient(
        &self,
        lambda: f64,
        phi_s: &DVector<f64>,
        phi_k: &DVector<f64>,
        pm: Option<&PseudoMassParams>,
    ) -> Result<Vec<f64>> {
        let mut z = self.explicit_stiffness_term(phi_s, phi_k);
        if let Some(pm) = pm {
            let s_term = self.pseudo_mass_term(phi_s, phi_k, pm);
            for (ze, se) in z.iter_mut().zip(&s_term) {
                *ze -= lambda * se;
            }
        }
        let b = self.stiffness_u_derivative(phi_s, phi_k);
        let eta_hat = self.adjoint_solve(-b)?;
        let r_term = self.residual_term(&eta_hat);
        for (ze, re) in z.iter_mut().zip(&r_term) {
            *ze += re;
        }
        Ok(z)
    }

    /// dλ_q/dρ for a simple eigenvalue. Fails when the eigenvalue is not
    /// simple within the solution's multiplicity tolerance.
    pub fn simple_eigenvalue_gradient(
        &self,
        eig: &EigenSolution,
        q: usize,
        pm: Option<&PseudoMassParams>,
    ) -> Result<Vec<f64>> {
        let lam = eig.values[q];
        let left_gap = q == 0 || (lam - eig.values[q - 1]) >= eig.tol_mult;
        let right_gap = q + 1 >= eig.values.len() || (eig.values[q + 1] - lam) >= eig.tol_mult;
        if !(left_gap && right_gap) {
            return Err(Error::RepeatedEigenvalue { index: q });
        }
        self.eigen_pair_gradient(lam, &eig.vectors[q], &eig.vectors[q], pm)
    }

    /// All z_sk vectors (s ≤ k) of one cluster.
    pub fn cluster_direction_vectors(
        &self,
        eig: &EigenSolution,
        cluster: &Cluster,
        pm: Option<&PseudoMassParams>,
    ) -> Result<ClusterSensitivity> {
        let n = cluster.len;
        let lam = eig.values[cluster.start];
        let mut z = Vec::with_capacity(n * (n + 1) / 2);
        for s in 0..n {
            for k in s..n {
                z.push(self.eigen_pair_gradient(
                    lam,
                    &eig.vectors[cluster.start + s],
                    &eig.vectors[cluster.start + k],
                    pm,
                )?);
            }
        }
        Ok(ClusterSensitivity { n, z })
    }

    /// Compliance value and gradient using the stored factorization.
    pub fn compliance_and_gradient(&self, state: &EquilibriumState) -> Result<(f64, Vec<f64>)> {
        let f_ext = &self.model.load * state.gamma;
        let f0 = f_ext.dot(&state.u);
        if state.gamma == 0.0 {
            return Ok((0.0, vec![0.0; self.model.n_elems()]));
        }
        // χᵀ = −F_extᵀ K_T⁻¹ (∂f₀/∂ρ = 0)
        let chi = self.adjoint_solve(-f_ext)?;
        Ok((f0, self.residual_term(&chi)))
    }
}

/// The z_sk vectors of a cluster, stored once per unordered pair.
#[derive(Debug, Clone)]
pub struct ClusterSensitivity {
    /// Cluster multiplicity N.
    pub n: usize,
    /// Upper-triangle row-major: (s, k) with s ≤ k at index
    /// s·N − s(s−1)/2 + (k − s).
    pub z: Vec<Vec<f64>>,
}

impl ClusterSensitivity {
    pub fn z_sk(&self, s: usize, k: usize) -> &[f64] {
        let (s, k) = if s <= k { (s, k) } else { (k, s) };
        &self.z[s * (2 * self.n - s + 1) / 2 + (k - s)]
    }

    /// Diagonal vector z_rr.
    pub fn diagonal(&self, r: usize) -> &[f64] {
        self.z_sk(r, r)
    }

    pub fn n_pairs(&self) -> usize {
        self.z.len()
    }

    /// Off-diagonal pair count N(N−1)/2 (the c_nt contribution).
    pub fn n_offdiag(&self) -> usize {
        self.n * (self.n - 1) / 2
    }
}

/// T matrix and first-order eigenvalue increments for a design direction:
/// T_sk = z_skᵀ Δρ, Δλ_r = eigenvalues of T (ascending).
pub fn directional_increments(z: &ClusterSensitivity, drho: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
    let n = z.n;
    let mut t = DMatrix::zeros(n, n);
    for s in 0..n {
        for k in s..n {
            let v: f64 = z.z_sk(s, k).iter().zip(drho).map(|(a, b)| a * b).sum();
            t[(s, k)] = v;
            t[(k, s)] = v;
        }
    }
    let mut vals: Vec<f64> = t.symmetric_eigenvalues().iter().cloned().collect();
    vals.sort_by(f64::total_cmp);
    (t, vals)
}

/// End compliance f₀ = F_extᵀu and its adjoint gradient w.r.t. ρ.
pub fn compliance_and_gradient(
    model: &Model,
    state: &EquilibriumState,
    rho: &[f64],
    st: InterpState,
) -> Result<(f64, Vec<f64>)> {
    if state.gamma == 0.0 {
        return Ok((0.0, vec![0.0; model.n_elems()]));
    }
    let ctx = SensitivityContext::new(model, state, rho, st)?;
    ctx.compliance_and_gradient(state)
}

/// One row of the central-difference verification report.
#[derive(Debug, Clone)]
pub struct CdmEntry {
    pub element: usize,
    /// 0 = compliance, q ≥ 1 = eigenvalue λ_q.
    pub kernel: usize,
    pub analytic: f64,
    pub fd: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct CdmReport {
    pub entries: Vec<CdmEntry>,
    pub max_rel_err: f64,
    /// Elements whose FD samples failed to converge (excluded with warning).
    pub skipped: Vec<usize>,
    pub h: f64,
}

impl CdmReport {
    /// Delimited text table (element id, kernel, analytic, FD, rel-err).
    pub fn to_table(&self) -> String {
        let mut s = String::from("element\tkernel\tanalytic\tfd\trel_err\n");
        for e in &self.entries {
            let kernel = if e.kernel == 0 {
                "f0".to_string()
            } else {
                format!("lambda{}", e.kernel)
            };
            s.push_str(&format!(
                "{}\t{}\t{:e}\t{:e}\t{:e}\n",
                e.element, kernel, e.analytic, e.fd, e.rel_err
            ));
        }
        s
    }
}

/// Relative error with an absolute floor tied to the gradient's own scale,
/// so near-zero entries do not divide by zero.
fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12 * scale.max(1e-300))
}

/// Central-difference verification of the compliance gradient and the first
/// `n_eigs` (simple) eigenvalue gradients: each element density is perturbed
/// by ±h with a full re-solve and re-analysis per sample.
#[allow(clippy::too_many_arguments)]
pub fn verify_sensitivities_cdm(
    model: &Model,
    rho: &[f64],
    gamma: f64,
    h: f64,
    n_eigs: usize,
    pm: Option<&PseudoMassParams>,
    solver: &SolverOptions,
    eig_opts: &EigenOptions,
) -> Result<CdmReport> {
    let state = solve_equilibrium(model, rho, gamma, solver)?;
    let st = solver.interp_state(model).with_cutoff(state.cutoff);
    let eig = analyze_stability(model, &state.u, rho, st, pm, n_eigs, 1e-8, eig_opts)?;
    for q in 0..n_eigs {
        let gap_ok =
            (q + 1 >= eig.values.len()) || (eig.values[q + 1] - eig.values[q]) >= eig.tol_mult;
        let prev_ok = q == 0 || (eig.values[q] - eig.values[q - 1]) >= eig.tol_mult;
        if !(gap_ok && prev_ok) {
            return Err(Error::RepeatedEigenvalue { index: q });
        }
    }
    let ctx = SensitivityContext::new(model, &state, rho, st)?;
    let (_, comp_grad) = ctx.compliance_and_gradient(&state)?;
    let mut eig_grads = Vec::with_capacity(n_eigs);
    for q in 0..n_eigs {
        eig_grads.push(ctx.simple_eigenvalue_gradient(&eig, q, pm)?);
    }

    // FD samples, two full analyses per element
    type Sample = std::result::Result<(f64, Vec<f64>), ()>;
    let analyze_at = |rho_mod: &[f64]| -> Sample {
        let s = solve_equilibrium(model, rho_mod, gamma, solver).map_err(|_| ())?;
        let st_s = solver.interp_state(model).with_cutoff(s.cutoff);
        let e = analyze_stability(model, &s.u, rho_mod, st_s, pm, n_eigs, 1e-8, eig_opts)
            .map_err(|_| ())?;
        let f0 = (&model.load * gamma).dot(&s.u);
        Ok((f0, e.values[..n_eigs].to_vec()))
    };
    let samples: Vec<(usize, Sample, Sample)> = (0..model.n_elems())
        .into_par_iter()
        .map(|e| {
            let mut rp = rho.to_vec();
            let mut rm = rho.to_vec();
            rp[e] += h;
            rm[e] -= h;
            (e, analyze_at(&rp), analyze_at(&rm))
        })
        .collect();

    let comp_scale = comp_grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    let eig_scales: Vec<f64> = eig_grads
        .iter()
        .map(|g| g.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
        .collect();

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    let mut max_rel_err: f64 = 0.0;
    for (e, plus, minus) in samples {
        let (Ok((f0p, lp)), Ok((f0m, lm))) = (plus, minus) else {
            skipped.push(e);
            continue;
        };
        let fd = (f0p - f0m) / (2.0 * h);
        let err = rel_err(comp_grad[e], fd, comp_scale);
        max_rel_err = max_rel_err.max(err);
        entries.push(CdmEntry { element: e, kernel: 0, analytic: comp_grad[e], fd, rel_err: err });
        for q in 0..n_eigs {
            let fd = (lp[q] - lm[q]) / (2.0 * h);
            let err = rel_err(eig_grads[q][e], fd, eig_scales[q]);
            max_rel_err = max_rel_err.max(err);
            entries.push(CdmEntry {
                element: e,
                kernel: q + 1,
                analytic: eig_grads[q][e],
                fd,
                rel_err: err,
            });
        }
    }
    Ok(CdmReport { entries, max_rel_err, skipped, h })
}

/// First-order expansion check for a repeated eigenvalue: re-solves at
/// ρ + εΔρ and compares the perturbed cluster against λ̃ + εΔλ_r.
#[derive(Debug, Clone)]
pub struct SlopeReport {
    pub eps: Vec<f64>,
    pub predicted: Vec<Vec<f64>>,
    pub measured: Vec<Vec<f64>>,
    pub max_residual: Vec<f64>,
    /// Fitted slope of log residual vs log ε.
    pub fitted_slope: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn first_order_multi_eig_check(
    model: &Model,
    rho: &[f64],
    gamma: f64,
    cluster_index: usize,
    drho: &[f64],
    eps_list: &[f64],
    pm: Option<&PseudoMassParams>,
    solver: &SolverOptions,
    eig_opts: &EigenOptions,
) -> Result<SlopeReport> {
    let state = solve_equilibrium(model, rho, gamma, solver)?;
    let st = solver.interp_state(model).with_cutoff(state.cutoff);
    let m = cluster_index + 2;
    let eig = analyze_stability(model, &state.u, rho, st, pm, m, 1e-8, eig_opts)?;
    let cluster = *eig
        .clusters
        .get(cluster_index)
        .ok_or_else(|| Error::Invalid("cluster index out of range".into()))?;
    if cluster.len < 2 {
        return Err(Error::Invalid(format!(
            "cluster {cluster_index} has multiplicity {}",
            cluster.len
        )));
    }
    let lam_tilde = eig.values[cluster.start];
    let ctx = SensitivityContext::new(model, &state, rho, st)?;
    let z = ctx.cluster_direction_vectors(&eig, &cluster, pm)?;
    let (_, dlam) = directional_increments(&z, drho);

    let mut predicted = Vec::new();
    let mut measured = Vec::new();
    let mut max_residual = Vec::new();
    for &eps in eps_list {
        let rho_p: Vec<f64> = rho.iter().zip(drho).map(|(r, d)| r + eps * d).collect();
        let s = solve_equilibrium(model, &rho_p, gamma, solver)?;
        let st_p = solver.interp_state(model).with_cutoff(s.cutoff);
        let e = analyze_stability(model, &s.u, &rho_p, st_p, pm, m, 1e-8, eig_opts)?;
        if e.values.len() < cluster.start + cluster.len {
            return Err(Error::Invalid(
                "perturbed cluster split beyond the solve window".into(),
            ));
        }
        let mut pred: Vec<f64> = dlam.iter().map(|d| lam_tilde + eps * d).collect();
        pred.sort_by(f64::total_cmp);
        let meas: Vec<f64> = e.values[cluster.start..cluster.start + cluster.len].to_vec();
        let res = pred
            .iter()
            .zip(&meas)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0_f64, f64::max);
        predicted.push(pred);
        measured.push(meas);
        max_residual.push(res);
    }
    // least-squares slope of ln(residual) against ln(eps), nonzero eps only
    let pts: Vec<(f64, f64)> = eps_list
        .iter()
        .zip(&max_residual)
        .filter(|(&e, &r)| e > 0.0 && r > 0.0)
        .map(|(&e, &r)| (e.ln(), r.ln()))
        .collect();
    let fitted_slope = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    } else {
        f64::NAN
    };
    Ok(SlopeReport { eps: eps_list.to_vec(), predicted, measured, max_residual, fitted_slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_grid_mesh, Dof, LoadSpec, SupportSpec};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Double-clamped beam: both vertical edges fully fixed, center-top load.
    fn beam_model(nx: usize, ny: usize) -> Model {
        let mut supports = Vec::new();
        for iy in 0..=ny {
            supports.extend(SupportSpec::pin(iy));
            supports.extend(SupportSpec::pin(nx * (ny + 1) + iy));
        }
        let top_mid = (nx / 2) * (ny + 1) + ny;
        let loads = vec![LoadSpec { node: top_mid, comp: Dof::Y, magnitude: -1.0 }];
        let mut m = build_grid_mesh(nx, ny, 1.0, &supports, &loads).unwrap();
        m.youngs = 3000.0;
        m.poisson = 0.4;
        m
    }

    fn random_rho(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    }

    #[test]
    fn zero_load_zero_compliance_gradient() {
        let m = beam_model(6, 3);
        let rho = vec![0.6; m.n_elems()];
        let state = solve_equilibrium(&m, &rho, 0.0, &SolverOptions::default()).unwrap();
        let (f0, g) = compliance_and_gradient(&m, &state, &rho, InterpState::of(&m)).unwrap();
        assert_eq!(f0, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn compliance_gradient_matches_fd() {
        let m = beam_model(8, 4);
        let rho = random_rho(m.n_elems(), 0.3, 1.0, 42);
        let gamma = 0.4;
        let solver = SolverOptions::default();
        let st = solver.interp_state(&m);
        let state = solve_equilibrium(&m, &rho, gamma, &solver).unwrap();
        let (_, g) = compliance_and_gradient(&m, &state, &rho, st).unwrap();
        let h = 1e-5;
        let f_at = |rho_mod: &[f64]| {
            let s = solve_equilibrium(&m, rho_mod, gamma, &solver).unwrap();
            (&m.load * gamma).dot(&s.u)
        };
        let scale = g.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        for e in (0..m.n_elems()).step_by(5) {
            let mut rp = rho.clone();
            let mut rm = rho.clone();
            rp[e] += h;
            rm[e] -= h;
            let fd = (f_at(&rp) - f_at(&rm)) / (2.0 * h);
            assert!(
                rel_err(g[e], fd, scale) <= 1e-4,
                "element {e}: adjoint {} vs fd {}",
                g[e],
                fd
            );
        }
    }

    #[test]
    fn compliance_gradient_respects_symmetry() {
        // symmetric beam + symmetric (uniform) design: gradient mirror-symmetric
        let m = beam_model(8, 4);
        let rho = vec![0.5; m.n_elems()];
        let solver = SolverOptions::default();
        let state = solve_equilibrium(&m, &rho, 0.4, &solver).unwrap();
        let (_, g) = compliance_and_gradient(&m, &state, &rho, solver.interp_state(&m)).unwrap();
        let scale = g.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        for ix in 0..m.nx {
            for iy in 0..m.ny {
                let a = g[m.elem_id(ix, iy)];
                let b = g[m.elem_id(m.nx - 1 - ix, iy)];
                assert!((a - b).abs() <= 1e-10 * scale, "asymmetry at ({ix},{iy})");
            }
        }
    }

    #[test]
    fn simple_eigenvalue_gradient_matches_fd() {
        let m = beam_model(8, 4);
        let rho = random_rho(m.n_elems(), 0.3, 1.0, 7);
        let gamma = 0.4;
        let solver = SolverOptions::default();
        let st = solver.interp_state(&m);
        let pm = PseudoMassParams::default();
        let eig_opts = EigenOptions::default();
        let n_eigs = 3;

        let state = solve_equilibrium(&m, &rho, gamma, &solver).unwrap();
        let eig =
            analyze_stability(&m, &state.u, &rho, st, Some(&pm), n_eigs, 1e-8, &eig_opts).unwrap();
        let ctx = SensitivityContext::new(&m, &state, &rho, st).unwrap();
        let h = 1e-5;
        for q in 0..n_eigs {
            let g = ctx.simple_eigenvalue_gradient(&eig, q, Some(&pm)).unwrap();
            let scale = g.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
            for e in (0..m.n_elems()).step_by(7) {
                let mut rp = rho.clone();
                let mut rm = rho.clone();
                rp[e] += h;
                rm[e] -= h;
                let lam_at = |r: &[f64]| {
                    let s = solve_equilibrium(&m, r, gamma, &solver).unwrap();
                    analyze_stability(&m, &s.u, r, st, Some(&pm), n_eigs, 1e-8, &eig_opts)
                        .unwrap()
                        .values[q]
                };
                let fd = (lam_at(&rp) - lam_at(&rm)) / (2.0 * h);
                assert!(
                    rel_err(g[e], fd, scale) <= 1e-4,
                    "lambda{q}, element {e}: adjoint {} vs fd {}",
                    g[e],
                    fd
                );
            }
        }
    }

    #[test]
    fn singleton_cluster_matches_simple_path() {
        let m = beam_model(6, 3);
        let rho = random_rho(m.n_elems(), 0.4, 1.0, 3);
        let solver = SolverOptions::default();
        let st = solver.interp_state(&m);
        let pm = PseudoMassParams::default();
        let state = solve_equilibrium(&m, &rho, 0.3, &solver).unwrap();
        let eig =
            analyze_stability(&m, &state.u, &rho, st, Some(&pm), 2, 1e-8, &Default::default())
                .unwrap();
        assert_eq!(eig.clusters[0].len, 1);
        let ctx = SensitivityContext::new(&m, &state, &rho, st).unwrap();
        let simple = ctx.simple_eigenvalue_gradient(&eig, 0, Some(&pm)).unwrap();
        let z = ctx
            .cluster_direction_vectors(&eig, &eig.clusters[0], Some(&pm))
            .unwrap();
        assert_eq!(z.n, 1);
        let scale = simple.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        for (a, b) in simple.iter().zip(z.diagonal(0)) {
            assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn directional_increment_algebra() {
        let z = ClusterSensitivity {
            n: 2,
            z: vec![vec![1.0, 0.0], vec![0.5, -0.5], vec![0.0, 2.0]],
        };
        // Δρ = 0 → T = 0, Δλ = 0
        let (t, d) = directional_increments(&z, &[0.0, 0.0]);
        assert_eq!(t.norm(), 0.0);
        assert!(d.iter().all(|&x| x == 0.0));
        // closed-form 2×2 eigenvalues
        let drho = [0.3, 0.7];
        let (t, d) = directional_increments(&z, &drho);
        let (a, b, dd) = (t[(0, 0)], t[(0, 1)], t[(1, 1)]);
        let mid = 0.5 * (a + dd);
        let rad = (0.25 * (a - dd) * (a - dd) + b * b).sqrt();
        assert_relative_eq!(d[0], mid - rad, max_relative = 1e-12);
        assert_relative_eq!(d[1], mid + rad, max_relative = 1e-12);
        // diagonal T → Δλ = diagonal sorted
        let zd = ClusterSensitivity {
            n: 2,
            z: vec![vec![2.0], vec![0.0], vec![-1.0]],
        };
        let (_, d) = directional_increments(&zd, &[1.0]);
        assert_eq!(d, vec![-1.0, 2.0]);
        // trace identity: Σ Δλ = Σ z_rr Δρ
        let (t, d) = directional_increments(&z, &[0.11, -0.37]);
        let tr = t[(0, 0)] + t[(1, 1)];
        assert!((d.iter().sum::<f64>() - tr).abs() <= 1e-12 * tr.abs().max(1.0));
    }

    #[test]
    fn z_pair_symmetry() {
        let m = beam_model(6, 3);
        let rho = random_rho(m.n_elems(), 0.4, 1.0, 5);
        let solver = SolverOptions::default();
        let st = solver.interp_state(&m);
        let pm = PseudoMassParams::default();
        let state = solve_equilibrium(&m, &rho, 0.3, &solver).unwrap();
        let eig =
            analyze_stability(&m, &state.u, &rho, st, Some(&pm), 3, 1e-8, &Default::default())
                .unwrap();
        let ctx = SensitivityContext::new(&m, &state, &rho, st).unwrap();
        // z_sk must equal z_ks when computed from swapped arguments
        let z01 = ctx
            .eigen_pair_gradient(eig.values[0], &eig.vectors[0], &eig.vectors[1], Some(&pm))
            .unwrap();
        let z10 = ctx
            .eigen_pair_gradient(eig.values[0], &eig.vectors[1], &eig.vectors[0], Some(&pm))
            .unwrap();
        let scale = z01.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        for (a, b) in z01.iter().zip(&z10) {
            assert!((a - b).abs() <= 1e-12 * scale.max(1e-300));
        }
    }

    #[test]
    fn reduced_gradient_chain_matches_fd() {
        use crate::model::{DesignField, SymmetrySpec};
        let m = beam_model(8, 4);
        let mut design = DesignField::uniform(&m, 0.5, SymmetrySpec::HalfX, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for x in design.x.iter_mut() {
            *x = rng.gen_range(0.3..0.9);
        }
        let gamma = 0.4;
        let solver = SolverOptions::default();
        let st = solver.interp_state(&m);
        let rho = design.densities();
        let state = solve_equilibrium(&m, &rho, gamma, &solver).unwrap();
        let (_, g_rho) = compliance_and_gradient(&m, &state, &rho, st).unwrap();
        let g_red = design.reduce_gradient(&g_rho);
        let h = 1e-5;
        let scale = g_red.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        for r in (0..design.x.len()).step_by(4) {
            let mut dp = design.clone();
            dp.x[r] += h;
            let mut dm = design.clone();
            dm.x[r] -= h;
            let f = |d: &DesignField| {
                let rr = d.densities();
                let s = solve_equilibrium(&m, &rr, gamma, &solver).unwrap();
                (&m.load * gamma).dot(&s.u)
            };
            let fd = (f(&dp) - f(&dm)) / (2.0 * h);
            assert!(
                rel_err(g_red[r], fd, scale) <= 1e-4,
                "reduced var {r}: {} vs {}",
                g_red[r],
                fd
            );
        }
    }
}
