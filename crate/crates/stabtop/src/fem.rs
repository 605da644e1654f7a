//! Q4 plane-strain finite elements with linear energy interpolation, global
//! assembly, Newton–Raphson equilibrium solves with adaptive stepping and
//! adaptive cutoff updates, and the residual's density derivative.
//!
//! Element energy blends the finite-strain and small-strain branches by the
//! weight η(ρ): the interpolated deformation gradient is F = I + η∇u and
//!
//!   f_e = ∫ η Bᵀ[P] dV + ∫ (1−η²) B_Lᵀ[ℂ:ε] dV
//!   k_e = ∫ η² Bᵀ[𝔸]B dV + ∫ (1−η²) B_Lᵀ[ℂ]B_L dV
//!
//! over 2×2 Gauss quadrature. When the Newton solver stalls at the minimum
//! step size the interpolation cutoff is raised (c → c + Δc), which shifts
//! low-density elements toward linear kinematics until the analysis converges.

use nalgebra::{DVector, Matrix2, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::linalg::BandedSym;
use crate::material::{flat, InterpolatedProperties, MaterialPoint, Tangent4};
use crate::model::Model;
use crate::par::*;

const GAUSS: f64 = 0.577_350_269_189_625_8;

pub type ElemVector = SVector<f64, 8>;
pub type ElemMatrix = SMatrix<f64, 8, 8>;
/// Maps element displacements to the flattened displacement gradient.
pub type BMatrix = SMatrix<f64, 4, 8>;
/// Maps element displacements to small strains [ε11, ε22, 2ε12].
pub type BlMatrix = SMatrix<f64, 3, 8>;

/// Current interpolation exponents and energy cutoff for one analysis.
#[derive(Debug, Clone, Copy)]
pub struct InterpState {
    pub p: f64,
    pub p_l: f64,
    pub c: f64,
}

impl InterpState {
    pub fn of(model: &Model) -> Self {
        Self {
            p: model.interp.p,
            p_l: model.interp.p_l,
            c: model.interp.c0,
        }
    }

    pub fn with_cutoff(self, c: f64) -> Self {
        Self { c, ..self }
    }
}

/// Interpolated properties of one element at density ρ_e.
pub fn interp_props(model: &Model, rho_e: f64, st: InterpState) -> InterpolatedProperties {
    InterpolatedProperties::at(
        rho_e,
        model.youngs,
        model.poisson,
        st.p,
        st.p_l,
        model.interp.eps,
        model.interp.beta,
        st.c,
    )
}

/// Per-Gauss-point geometry of a Q4 element.
#[derive(Debug, Clone)]
pub struct GpGeometry {
    pub b: BMatrix,
    pub bl: BlMatrix,
    /// Quadrature weight × |J| (area measure, thickness not included).
    pub w: f64,
}

/// Shape-function gradients and weights at the 2×2 Gauss points.
pub fn q4_geometry(coords: &[[f64; 2]; 4]) -> Result<[GpGeometry; 4]> {
    let pts = [
        (-GAUSS, -GAUSS),
        (GAUSS, -GAUSS),
        (GAUSS, GAUSS),
        (-GAUSS, GAUSS),
    ];
    let mut out: [GpGeometry; 4] = std::array::from_fn(|_| GpGeometry {
        b: BMatrix::zeros(),
        bl: BlMatrix::zeros(),
        w: 0.0,
    });
    for (g, &(xi, eta)) in pts.iter().enumerate() {
        // dN/dξ for the counterclockwise node order
        let dn_nat = [
            [-(1.0 - eta) / 4.0, -(1.0 - xi) / 4.0],
            [(1.0 - eta) / 4.0, -(1.0 + xi) / 4.0],
            [(1.0 + eta) / 4.0, (1.0 + xi) / 4.0],
            [-(1.0 + eta) / 4.0, (1.0 - xi) / 4.0],
        ];
        let mut jac = Matrix2::zeros();
        for a in 0..4 {
            for d in 0..2 {
                jac[(d, 0)] += dn_nat[a][d] * coords[a][0];
                jac[(d, 1)] += dn_nat[a][d] * coords[a][1];
            }
        }
        let det = jac.determinant();
        if det <= 0.0 {
            return Err(Error::Invalid(format!(
                "non-positive isoparametric Jacobian ({det:.3e})"
            )));
        }
        let jinv = jac.try_inverse().expect("checked determinant");
        let mut geo = GpGeometry {
            b: BMatrix::zeros(),
            bl: BlMatrix::zeros(),
            w: det,
        };
        for a in 0..4 {
            // dN_a/dX_j = Σ_d J⁻¹_{jd} dN_a/dξ_d
            let dx = jinv[(0, 0)] * dn_nat[a][0] + jinv[(0, 1)] * dn_nat[a][1];
            let dy = jinv[(1, 0)] * dn_nat[a][0] + jinv[(1, 1)] * dn_nat[a][1];
            for i in 0..2 {
                geo.b[(flat(i, 0), 2 * a + i)] = dx;
                geo.b[(flat(i, 1), 2 * a + i)] = dy;
            }
            geo.bl[(0, 2 * a)] = dx;
            geo.bl[(1, 2 * a + 1)] = dy;
            geo.bl[(2, 2 * a)] = dy;
            geo.bl[(2, 2 * a + 1)] = dx;
        }
        out[g] = geo;
    }
    Ok(out)
}

/// Cached Gauss-point state for sensitivity kernels.
#[derive(Debug, Clone)]
pub struct GpCache {
    pub geo: GpGeometry,
    /// Interpolated deformation gradient F = I + η∇u.
    pub f: Matrix2<f64>,
    /// First PK stress at F.
    pub p: Matrix2<f64>,
    /// Flattened in-plane tangent moduli at F.
    pub a4: Tangent4,
    /// Small strain in Voigt form.
    pub eps: Vector3<f64>,
    /// Raw displacement gradient B u_e (flattened).
    pub grad_u: SVector<f64, 4>,
}

/// Output of one element kernel evaluation.
#[derive(Debug, Clone)]
pub struct ElementKernelOutput {
    pub force: ElemVector,
    pub tangent: ElemMatrix,
    pub gp: Vec<GpCache>,
    pub props: InterpolatedProperties,
}

/// Internal force and tangent of one Q4 element, with Gauss caches.
pub fn element_force_and_tangent(
    coords: &[[f64; 2]; 4],
    u_e: &ElemVector,
    props: &InterpolatedProperties,
    thickness: f64,
) -> Result<ElementKernelOutput> {
    let geos = q4_geometry(coords)?;
    let eta = props.eta;
    let one_m_eta2 = 1.0 - eta * eta;
    let mut force = ElemVector::zeros();
    let mut tangent = ElemMatrix::zeros();
    let mut gps = Vec::with_capacity(4);
    for geo in geos {
        let w = geo.w * thickness;
        let grad_u = geo.b * u_e;
        let f = Matrix2::new(
            1.0 + eta * grad_u[flat(0, 0)],
            eta * grad_u[flat(0, 1)],
            eta * grad_u[flat(1, 0)],
            1.0 + eta * grad_u[flat(1, 1)],
        );
        let mp = MaterialPoint::new(f)?;
        let p = crate::material::pk1_stress(&f, props.kappa, props.mu)?;
        let a4 = crate::material::tangent_moduli(&f, props.kappa, props.mu)?;
        let pv = SVector::<f64, 4>::new(p[(0, 0)], p[(1, 0)], p[(0, 1)], p[(1, 1)]);
        let eps = geo.bl * u_e;

        force += (geo.b.transpose() * pv) * (eta * w);
        force += (geo.bl.transpose() * (props.c_voigt * eps)) * (one_m_eta2 * w);
        tangent += (geo.b.transpose() * a4 * geo.b) * (eta * eta * w);
        tangent += (geo.bl.transpose() * props.c_voigt * geo.bl) * (one_m_eta2 * w);

        let _ = mp;
        gps.push(GpCache {
            geo,
            f,
            p,
            a4,
            eps,
            grad_u,
        });
    }
    Ok(ElementKernelOutput {
        force,
        tangent,
        gp: gps,
        props: props.clone(),
    })
}

/// Assembled residual and tangent with boundary conditions applied by
/// symmetric row/column elimination with unit diagonal.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub residual: DVector<f64>,
    pub stiffness: BandedSym,
}

/// Half-bandwidth of the tangent for the structured grid numbering.
pub fn model_bandwidth(model: &Model) -> usize {
    let mut bw = 0;
    for e in 0..model.n_elems() {
        let dofs = model.elem_dofs(e);
        let lo = *dofs.iter().min().unwrap();
        let hi = *dofs.iter().max().unwrap();
        bw = bw.max(hi - lo);
    }
    bw
}

fn element_outputs(
    model: &Model,
    u: &DVector<f64>,
    rho: &[f64],
    st: InterpState,
) -> Result<Vec<ElementKernelOutput>> {
    if rho.len() != model.n_elems() {
        return Err(Error::DimensionMismatch {
            expected: model.n_elems(),
            got: rho.len(),
            context: "density vector",
        });
    }
    if u.len() != model.n_dofs() {
        return Err(Error::DimensionMismatch {
            expected: model.n_dofs(),
            got: u.len(),
            context: "displacement vector",
        });
    }
    (0..model.n_elems())
        .into_par_iter()
        .map(|e| {
            let coords = model.elem_coords(e);
            let dofs = model.elem_dofs(e);
            let mut u_e = ElemVector::zeros();
            for (a, &d) in dofs.iter().enumerate() {
                u_e[a] = u[d];
            }
            let props = interp_props(model, rho[e], st);
            element_force_and_tangent(&coords, &u_e, &props, model.thickness).map_err(|err| {
                match err {
                    Error::SingularConfiguration { det } => {
                        Error::ElementInversion { element: e, det }
                    }
                    other => other,
                }
            })
        })
        .collect()
}

/// Gauss caches for every element at the given state (for sensitivities).
pub fn element_caches(
    model: &Model,
    u: &DVector<f64>,
    rho: &[f64],
    st: InterpState,
) -> Result<Vec<ElementKernelOutput>> {
    element_outputs(model, u, rho, st)
}

/// Assembles R = F_int(u) − γP̂ and the tangent stiffness K_T.
pub fn assemble(
    model: &Model,
    u: &DVector<f64>,
    rho: &[f64],
    gamma: f64,
    st: InterpState,
) -> Result<Assembly> {
    let outs = element_outputs(model, u, rho, st)?;
    let n = model.n_dofs();
    let mut residual = DVector::zeros(n);
    let mut stiffness = BandedSym::zeros(n, model_bandwidth(model));
    for (e, out) in outs.iter().enumerate() {
        let dofs = model.elem_dofs(e);
        for (a, &da) in dofs.iter().enumerate() {
            residual[da] += out.force[a];
            if model.is_fixed(da) {
                continue;
            }
            for (b, &db) in dofs.iter().enumerate() {
                if db <= da && !model.is_fixed(db) {
                    stiffness.add(da, db, out.tangent[(a, b)]);
                }
            }
        }
    }
    residual.axpy(-gamma, &model.load, 1.0);
    for &(dof, _) in &model.fixed {
        residual[dof] = 0.0;
        stiffness.set(dof, dof, 1.0);
    }
    Ok(Assembly { residual, stiffness })
}

/// Convergence bookkeeping of one equilibrium solve.
#[derive(Debug, Clone, Default)]
pub struct ConvergenceRecord {
    /// Number of accepted load increments.
    pub steps: usize,
    /// Total Newton iterations.
    pub iterations: usize,
    /// Final normalized energy residual.
    pub final_energy_residual: f64,
    /// Normalized energy residuals of the last increment's iterations.
    pub last_increment_residuals: Vec<f64>,
    /// Times the cutoff was raised.
    pub cutoff_updates: usize,
}

/// A converged equilibrium state.
#[derive(Debug, Clone)]
pub struct EquilibriumState {
    pub u: DVector<f64>,
    /// Load factor the state was converged at.
    pub gamma: f64,
    /// Energy-interpolation cutoff used for the successful solve.
    pub cutoff: f64,
    pub record: ConvergenceRecord,
}

/// Options for [`solve_equilibrium`].
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Override the model's SIMP exponent (continuation).
    pub p: Option<f64>,
    /// Override the model's linear-branch exponent (continuation).
    pub p_l: Option<f64>,
    /// Override the initial cutoff c₀.
    pub c0: Option<f64>,
    pub max_newton: usize,
    /// Relative energy-residual tolerance per increment.
    pub energy_tol: f64,
    /// Smallest increment, as a fraction of the target load factor.
    pub min_step_ratio: f64,
    /// Analysis fails once c exceeds this.
    pub max_cutoff: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            p: None,
            p_l: None,
            c0: None,
            max_newton: 30,
            energy_tol: 1e-12,
            min_step_ratio: 1.0 / 64.0,
            max_cutoff: 1.0,
        }
    }
}

impl SolverOptions {
    pub fn interp_state(&self, model: &Model) -> InterpState {
        InterpState {
            p: self.p.unwrap_or(model.interp.p),
            p_l: self.p_l.unwrap_or(model.interp.p_l),
            c: self.c0.unwrap_or(model.interp.c0),
        }
    }
}

fn initial_displacement(model: &Model) -> DVector<f64> {
    let mut u = DVector::zeros(model.n_dofs());
    for &(dof, value) in &model.fixed {
        u[dof] = value;
    }
    u
}

/// Newton iteration at fixed load factor. Returns normalized residual
/// history on success, or the last residual on failure.
fn newton_at(
    model: &Model,
    rho: &[f64],
    gamma: f64,
    st: InterpState,
    u: &mut DVector<f64>,
    opts: &SolverOptions,
) -> std::result::Result<Vec<f64>, f64> {
    let mut e0 = 0.0;
    let mut last = f64::NAN;
    let mut history = Vec::new();
    for it in 0..opts.max_newton {
        let asm = match assemble(model, u, rho, gamma, st) {
            Ok(a) => a,
            Err(_) => return Err(last),
        };
        let factor = asm.stiffness.factor_ldlt();
        let mut du = -&asm.residual;
        factor.solve_in_place(du.as_mut_slice());
        if !du.iter().all(|x| x.is_finite()) {
            return Err(last);
        }
        let e = du.dot(&asm.residual).abs();
        if it == 0 {
            e0 = e.max(f64::MIN_POSITIVE);
        }
        let rel = e / e0;
        last = rel;
        history.push(rel);
        *u += du;
        if rel <= opts.energy_tol || e <= 1e-300 {
            return Ok(history);
        }
    }
    Err(last)
}

/// Solves for equilibrium at `gamma_target` with adaptive load stepping and
/// adaptive cutoff updates: on non-convergence the increment is halved; at
/// the minimum increment the cutoff is raised by Δc and the current increment
/// restarts; analysis fails once c exceeds `max_cutoff`.
pub fn solve_equilibrium(
    model: &Model,
    rho: &[f64],
    gamma_target: f64,
    opts: &SolverOptions,
) -> Result<EquilibriumState> {
    let mut st = opts.interp_state(model);
    let mut u = initial_displacement(model);
    let mut record = ConvergenceRecord::default();

    if gamma_target == 0.0 {
        return Ok(EquilibriumState {
            u,
            gamma: 0.0,
            cutoff: st.c,
            record,
        });
    }

    let mut gamma_done = 0.0_f64;
    let mut u_conv = u.clone();
    let mut dgamma = gamma_target;
    let min_step = gamma_target.abs() * opts.min_step_ratio;
    let mut last_residual;

    loop {
        let gamma_try = if (gamma_done + dgamma - gamma_target).abs() <= 1e-14 * gamma_target.abs()
            || gamma_done + dgamma > gamma_target
        {
            gamma_target
        } else {
            gamma_done + dgamma
        };
        u.copy_from(&u_conv);
        match newton_at(model, rho, gamma_try, st, &mut u, opts) {
            Ok(history) => {
                record.steps += 1;
                record.iterations += history.len();
                record.final_energy_residual = *history.last().unwrap();
                record.last_increment_residuals = history;
                gamma_done = gamma_try;
                u_conv.copy_from(&u);
                if gamma_done == gamma_target {
                    return Ok(EquilibriumState {
                        u: u_conv,
                        gamma: gamma_target,
                        cutoff: st.c,
                        record,
                    });
                }
                // grow cautiously after an easy increment
                dgamma = (dgamma * 1.5).min(gamma_target - gamma_done);
            }
            Err(res) => {
                last_residual = res;
                dgamma *= 0.5;
                if dgamma < min_step {
                    st = st.with_cutoff(st.c + model.interp.delta_c);
                    record.cutoff_updates += 1;
                    if st.c > opts.max_cutoff {
                        return Err(Error::AnalysisFailure {
                            cutoff: st.c,
                            gamma_reached: gamma_done,
                            gamma_target,
                            residual: last_residual,
                        });
                    }
                    // restart the pending increment under the softer kinematics
                    dgamma = gamma_target - gamma_done;
                }
            }
        }
    }
}

/// Columns of ∂R/∂ρ: column e is supported on the 8 DOFs of element e.
#[derive(Debug, Clone)]
pub struct ResidualDensityDerivative {
    pub cols: Vec<ElemVector>,
    pub dofs: Vec<[usize; 8]>,
}

impl ResidualDensityDerivative {
    /// vᵀ (∂R/∂ρ), one entry per element.
    pub fn left_multiply(&self, v: &DVector<f64>) -> Vec<f64> {
        self.cols
            .iter()
            .zip(&self.dofs)
            .map(|(col, dofs)| {
                dofs.iter()
                    .enumerate()
                    .map(|(a, &d)| v[d] * col[a])
                    .sum()
            })
            .collect()
    }

    /// Dense column for tests.
    pub fn column(&self, e: usize, n_dofs: usize) -> DVector<f64> {
        let mut out = DVector::zeros(n_dofs);
        for (a, &d) in self.dofs[e].iter().enumerate() {
            out[d] += self.cols[e][a];
        }
        out
    }
}

/// ∂R_e/∂ρ_e for every element at the given state. Rows of fixed DOFs are
/// zeroed, matching the eliminated residual.
pub fn residual_density_derivative(
    model: &Model,
    u: &DVector<f64>,
    rho: &[f64],
    st: InterpState,
) -> Result<ResidualDensityDerivative> {
    let caches = element_caches(model, u, rho, st)?;
    let cols: Vec<ElemVector> = caches
        .par_iter()
        .map(|out| {
            let pr = &out.props;
            let eta = pr.eta;
            let deta = pr.deta;
            let de_ratio = pr.de / pr.e;
            let de_lin_ratio = pr.de_lin / pr.e_lin;
            let mut col = ElemVector::zeros();
            for gp in &out.gp {
                let w = gp.geo.w;
                let pv =
                    SVector::<f64, 4>::new(gp.p[(0, 0)], gp.p[(1, 0)], gp.p[(0, 1)], gp.p[(1, 1)]);
                // ∂F/∂ρ = η' B u_e (flattened)
                let dfdrho = gp.grad_u * deta;
                // 𝔸 : ∂F/∂ρ
                let a_df = gp.a4 * dfdrho;
                // ∂P/∂ρ|_F = (E'/E) P
                let dp = pv * de_ratio + a_df;
                col += (gp.geo.b.transpose() * pv) * (deta * w);
                col += (gp.geo.b.transpose() * dp) * (eta * w);
                let ce = pr.c_voigt * gp.eps;
                col += (gp.geo.bl.transpose() * ce) * (-2.0 * eta * deta * w);
                col += (gp.geo.bl.transpose() * (ce * de_lin_ratio)) * ((1.0 - eta * eta) * w);
            }
            col * model.thickness
        })
        .collect();
    let mut dofs = Vec::with_capacity(model.n_elems());
    let mut cols = cols;
    for e in 0..model.n_elems() {
        let d = model.elem_dofs(e);
        for (a, &da) in d.iter().enumerate() {
            if model.is_fixed(da) {
                cols[e][a] = 0.0;
            }
        }
        dofs.push(d);
    }
    Ok(ResidualDensityDerivative { cols, dofs })
}
