//! Post-analysis path following: cylindrical arc-length tracing,
//! critical-point detection, simple-bifurcation branch switching, and
//! multiple-bifurcation branch discovery by traversing the branch
//! connecting curve (BCC).
//!
//! Every corrector here is a bordered Newton scheme around the tangent
//! factorization: the cylindrical constraint ‖u − u_c‖² = r² (and, on the
//! BCC, the auxiliary cylinder around the critical point plus the arc
//! constraint) adds one or two scalar rows solved by back-substitution
//! against one or two extra right-hand sides.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::{assemble, InterpState};
use crate::linalg::EigenOptions;
use crate::model::Model;
use crate::stability::{
    analyze_stability, classify_critical_point, CriticalKind, PseudoMassParams,
};

/// One accepted point on an equilibrium path.
#[derive(Debug, Clone)]
pub struct PathPoint {
    pub u: DVector<f64>,
    pub gamma: f64,
    /// Lowest eigenvalue of (K_T, S_M) at this point.
    pub lambda1: f64,
    pub stable: bool,
    /// Relative cylindrical-constraint residual of the accepted step.
    pub arc_residual: f64,
    /// Marks a refined critical point inserted into the path.
    pub critical: bool,
}

/// A located critical point.
#[derive(Debug, Clone)]
pub struct CriticalPoint {
    pub gamma: f64,
    pub u: DVector<f64>,
    /// Eigenvector of the (near-)zero eigenvalue.
    pub phi: DVector<f64>,
    pub kind: CriticalKind,
    pub lambda: f64,
}

/// A traced equilibrium path with stability flags and critical points.
#[derive(Debug, Clone)]
pub struct EquilibriumPath {
    pub points: Vec<PathPoint>,
    pub criticals: Vec<CriticalPoint>,
    pub branch_id: usize,
    pub parent: Option<usize>,
    /// Set when tracing stopped before its budget (with the reason).
    pub terminated: Option<String>,
}

/// Options shared by the path-following routines.
#[derive(Debug, Clone)]
pub struct PathOptions {
    /// Arc-length step ℓ.
    pub ell: f64,
    pub max_points: usize,
    /// Stop once the load factor reaches this value (exact point appended).
    pub gamma_stop: Option<f64>,
    /// Corrector force tolerance: ‖R‖/‖P̂‖ ≤ this.
    pub force_tol: f64,
    pub max_corrector: usize,
    /// Smallest step as a fraction of ℓ before the trace gives up.
    pub min_ell_ratio: f64,
    /// Pseudo-mass for density designs; `None` uses S_M = I.
    pub pseudo_mass: Option<PseudoMassParams>,
    pub eig_opts: EigenOptions,
    /// Classification tolerance for |φᵀP̂|/(‖φ‖‖P̂‖).
    pub classify_tol: f64,
    /// Whether to bisect for critical points on eigenvalue sign changes.
    pub detect_criticals: bool,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self {
            ell: 0.0,
            max_points: 200,
            gamma_stop: None,
            force_tol: 1e-10,
            max_corrector: 30,
            min_ell_ratio: 1.0 / 64.0,
            pseudo_mass: None,
            eig_opts: EigenOptions::default(),
            classify_tol: 1e-6,
            detect_criticals: true,
        }
    }
}

impl PathOptions {
    pub fn with_ell(ell: f64) -> Self {
        Self { ell, ..Default::default() }
    }
}

/// Bordered Newton corrector for {R(u, γ) = 0, ‖u − u_c‖² = r²}.
/// Returns the converged point and the constraint residual.
#[allow(clippy::too_many_arguments)]
fn corrector_cylindrical(
    model: &Model,
    rho: &[f64],
    st: InterpState,
    center: &DVector<f64>,
    radius: f64,
    u0: &DVector<f64>,
    gamma0: f64,
    opts: &PathOptions,
) -> Result<(DVector<f64>, f64)> {
    let load_norm = model.load.norm();
    let mut u = u0.clone();
    let mut gamma = gamma0;
    for _ in 0..opts.max_corrector {
        let asm = assemble(model, &u, rho, gamma, st)?;
        let r_norm = asm.residual.norm();
        let du_c = &u - center;
        let c = du_c.norm_squared() - radius * radius;
        if r_norm <= opts.force_tol * load_norm && c.abs() <= 1e-10 * radius * radius {
            return Ok((u, gamma));
        }
        let factor = asm.stiffness.factor_ldlt();
        let mut a = model.load.clone();
        for &(dof, _) in &model.fixed {
            a[dof] = 0.0;
        }
        let a = factor.solve_vec(&a);
        let b = factor.solve_vec(&(-&asm.residual));
        let denom = 2.0 * du_c.dot(&a);
        if denom.abs() < 1e-300 || !denom.is_finite() {
            return Err(Error::PathFailure("degenerate corrector direction".into()));
        }
        let dgamma = (-c - 2.0 * du_c.dot(&b)) / denom;
        let du = b + &a * dgamma;
        if !du.iter().all(|x| x.is_finite()) {
            return Err(Error::PathFailure("non-finite corrector step".into()));
        }
        u += du;
        gamma += dgamma;
    }
    Err(Error::PathFailure(format!(
        "cylindrical corrector did not converge (radius {radius:.3e})"
    )))
}

/// Newton at fixed load factor (used to land exactly on γ_stop).
fn newton_fixed_gamma(
    model: &Model,
    rho: &[f64],
    st: InterpState,
    u0: &DVector<f64>,
    gamma: f64,
    opts: &PathOptions,
) -> Result<DVector<f64>> {
    let load_norm = model.load.norm();
    let mut u = u0.clone();
    for _ in 0..opts.max_corrector {
        let asm = assemble(model, &u, rho, gamma, st)?;
        if asm.residual.norm() <= opts.force_tol * load_norm {
            return Ok(u);
        }
        let factor = asm.stiffness.factor_ldlt();
        let du = factor.solve_vec(&(-&asm.residual));
        if !du.iter().all(|x| x.is_finite()) {
            return Err(Error::PathFailure("non-finite Newton step".into()));
        }
        u += du;
    }
    Err(Error::PathFailure("fixed-load Newton did not converge".into()))
}

fn lowest_eigenpair(
    model: &Model,
    u: &DVector<f64>,
    rho: &[f64],
    st: InterpState,
    opts: &PathOptions,
) -> Result<(f64, DVector<f64>)> {
    let sol = analyze_stability(
        model,
        u,
        rho,
        st,
        opts.pseudo_mass.as_ref(),
        1,
        1e-8,
        &opts.eig_opts,
    )?;
    Ok((sol.values[0], sol.vectors[0].clone()))
}

/// Traces an equilibrium path from a converged start by the cylindrical
/// arc-length method, recording the lowest eigenvalue and stability flag at
/// every accepted point and (optionally) refining critical points where the
/// eigenvalue changes sign.
#[allow(clippy::too_many_arguments)]
pub fn arc_length_trace(
    model: &Model,
    rho: &[f64],
    st: InterpState,
    start_u: &DVector<f64>,
    start_gamma: f64,
    first_step: Option<(DVector<f64>, f64)>,
    opts: &PathOptions,
) -> Result<EquilibriumPath> {
    assert!(opts.ell > 0.0, "arc-length step must be positive");
    let mut path = EquilibriumPath {
        points: Vec::new(),
        criticals: Vec::new(),
        branch_id: 0,
        parent: None,
        terminated: None,
    };
    let (lam, _) = lowest_eigenpair(model, start_u, rho, st, opts)?;
    path.points.push(PathPoint {
        u: start_u.clone(),
        gamma: start_gamma,
        lambda1: lam,
        stable: lam > 0.0,
        arc_residual: 0.0,
        critical: false,
    });

    // first predictor direction: supplied, or the load-direction tangent
    let (mut dir_u, mut dir_g) = match first_step {
        Some((du, dg)) => (du, dg),
        None => {
            let asm = assemble(model, start_u, rho, start_gamma, st)?;
            let factor = asm.stiffness.factor_ldlt();
            let mut p = model.load.clone();
            for &(dof, _) in &model.fixed {
                p[dof] = 0.0;
            }
            let t = factor.solve_vec(&p);
            if !t.iter().all(|x| x.is_finite()) {
                return Err(Error::PathFailure("singular start tangent".into()));
            }
            // advance in the loading direction
            (t, 1.0)
        }
    };
    {
        let n = dir_u.norm();
        if n > 0.0 {
            dir_g /= n;
            dir_u /= n;
        }
    }

    let mut ell = opts.ell;
    while path.points.len() < opts.max_points {
        let last = path.points.last().unwrap().clone();
        let pred_u = &last.u + &dir_u * ell;
        let pred_g = last.gamma + dir_g * ell;
        match corrector_cylindrical(model, rho, st, &last.u, ell, &pred_u, pred_g, opts) {
            Ok((u, gamma)) => {
                let step = &u - &last.u;
                let arc_residual = (step.norm_squared() - ell * ell).abs() / (ell * ell);
                let (lam, phi) = lowest_eigenpair(model, &u, rho, st, opts)?;
                // refine a bracketed critical point before appending
                if opts.detect_criticals && lam * last.lambda1 < 0.0 {
                    let cp = refine_critical(model, rho, st, &last, &u, gamma, opts)?;
                    path.points.push(PathPoint {
                        u: cp.u.clone(),
                        gamma: cp.gamma,
                        lambda1: cp.lambda,
                        stable: cp.lambda > 0.0,
                        arc_residual: 0.0,
                        critical: true,
                    });
                    path.criticals.push(cp);
                }
                let _ = phi;
                path.points.push(PathPoint {
                    u: u.clone(),
                    gamma,
                    lambda1: lam,
                    stable: lam > 0.0,
                    arc_residual,
                    critical: false,
                });
                let step_norm = step.norm();
                dir_u = step / step_norm;
                dir_g = (gamma - last.gamma) / step_norm;
                ell = (ell * 1.3).min(opts.ell);
                if let Some(gs) = opts.gamma_stop {
                    if gamma >= gs {
                        // land exactly on the stop load
                        if let Ok(uf) = newton_fixed_gamma(model, rho, st, &u, gs, opts) {
                            let (lam, _) = lowest_eigenpair(model, &uf, rho, st, opts)?;
                            path.points.push(PathPoint {
                                u: uf,
                                gamma: gs,
                                lambda1: lam,
                                stable: lam > 0.0,
                                arc_residual: 0.0,
                                critical: false,
                            });
                        }
                        return Ok(path);
                    }
                }
            }
            Err(_) => {
                ell *= 0.5;
                if ell < opts.ell * opts.min_ell_ratio {
                    path.terminated = Some(format!(
                        "corrector kept failing at minimum step (ell = {ell:.3e})"
                    ));
                    return Ok(path);
                }
            }
        }
    }
    Ok(path)
}

/// Regula-falsi/bisection refinement of a critical point bracketed by two
/// consecutive path points (the lowest eigenvalue changes sign across the
/// segment). The search parameter is the cylinder radius around the first
/// bracket point; the zero is accepted when |λ₁| ≤ 1e-8 · diag-scale(K_T).
fn refine_critical(
    model: &Model,
    rho: &[f64],
    st: InterpState,
    a: &PathPoint,
    u_b: &DVector<f64>,
    gamma_b: f64,
    opts: &PathOptions,
) -> Result<CriticalPoint> {
    let full = (u_b - &a.u).norm();
    let mut s_lo = 0.0_f64;
    let mut s_hi = full;
    let mut lam_lo = a.lambda1;
    let mut lam_hi = {
        let (l, _) = lowest_eigenpair(model, u_b, rho, st, opts)?;
        l
    };
    if lam_lo * lam_hi >= 0.0 {
        return Err(Error::NoSignChange);
    }
    let scale = {
        let asm = assemble(model, &a.u, rho, a.gamma, st)?;
        asm.stiffness.diag_scale()
    };
    let tol = 1e-8 * scale;
    let mut best: Option<CriticalPoint> = None;
    for _ in 0..60 {
        // Illinois-style interpolation with bisection safeguard
        let mut s = (s_lo * lam_hi - s_hi * lam_lo) / (lam_hi - lam_lo);
        if !(s.is_finite() && s > s_lo + 1e-12 * full && s < s_hi - 1e-12 * full) {
            s = 0.5 * (s_lo + s_hi);
        }
        let t = s / full;
        let pred_u = &a.u * (1.0 - t) + u_b * t;
        let pred_g = a.gamma * (1.0 - t) + gamma_b * t;
        let (u, gamma) =
            corrector_cylindrical(model, rho, st, &a.u, s, &pred_u, pred_g, opts)?;
        let (lam, phi) = lowest_eigenpair(model, &u, rho, st, opts)?;
        let kind = classify_critical_point(&phi, &model.load, opts.classify_tol);
        let cp = CriticalPoint { gamma, u, phi, kind, lambda: lam };
        let better = match &best {
            Some(b) => lam.abs() < b.lambda.abs(),
            None => true,
        };
        if better {
            best = Some(cp);
        }
        if lam.abs() <= tol {
            break;
        }
        if lam * lam_lo > 0.0 {
            s_lo = s;
            lam_lo = lam;
        } else {
            s_hi = s;
            lam_hi = lam;
        }
    }
    best.ok_or_else(|| Error::PathFailure("critical refinement failed".into()))
}

/// Detects and refines the critical point on a path segment with an
/// eigenvalue sign change.
pub fn detect_critical(
    model: &Model,
    rho: &[f64],
    st: InterpState,
    a: &PathPoint,
    b: &PathPoint,
    opts: &PathOptions,
) -> Result<CriticalPoint> {
    if a.lambda1 * b.lambda1 >= 0.0 {
        return Err(Error::NoSignChange);
    }
    refine_critical(model, rho, st, a, &b.u, b.gamma, opts)
}

/// Simple-bifurcation branch switch: perturbs the critical solution along
/// the normalized critical mode, u_p = u_cr + ζ φ/‖φ‖ with ζ = ±‖u_cr‖/τ,
/// and corrects onto the secondary branch at fixed distance |ζ| from u_cr.
/// Retries with doubled ζ (up to 4 times) when the corrector falls back to
/// the primary branch.
#[allow(clippy::too_many_arguments)]
pub fn branch_switch_simple(
    model: &Model,
    rho: &[f64],
    st: InterpState,
    critical: &CriticalPoint,
    tau: f64,
    sign: f64,
    opts: &PathOptions,
) -> Result<(DVector<f64>, f64)> {
    let phi_hat = &critical.phi / critical.phi.norm();
    let mut zeta = sign.signum() * critical.u.norm() / tau;
    if zeta == 0.0 {
        return Err(Error::Invalid("zero perturbation scale".into()));
    }
    for _ in 0..4 {
        let pred = &critical.u + &phi_hat * zeta;
        if let Ok((u, gamma)) = corrector_cylindrical(
            model,
            rho,
            st,
            &critical.u,
            zeta.abs(),
            &pred,
            critical.gamma,
            opts,
        ) {
            // secondary-branch points leave u_cr along the critical mode
            let step = &u - &critical.u;
            let along = step.dot(&phi_hat).abs() / step.norm();
            if along > 0.5 {
                return Ok((u, gamma));
            }
        }
        zeta *= 2.0;
    }
    Err(Error::BranchSwitchFailure)
}

/// A γ_s = 0 crossing found on the branch connecting curve.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub u: DVector<f64>,
    pub gamma: f64,
    /// Equilibrium residual ‖F_int − γP̂‖/‖P̂‖ after refinement.
    pub residual: f64,
}

/// Builds the disturbing load: a seeded uniform(−1, 1) vector masked on
/// fixed DOFs, orthogonalized against P̂ and normalized.
pub fn disturbing_load(model: &Model, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xi = DVector::from_fn(model.n_dofs(), |_, _| rng.gen_range(-1.0..1.0));
    for &(dof, _) in &model.fixed {
        xi[dof] = 0.0;
    }
    let p = &model.load;
    let p2 = p.norm_squared();
    if p2 > 0.0 {
        let c = p.dot(&xi) / p2;
        xi.axpy(-c, p, 1.0);
    }
    let n = xi.norm();
    if n > 0.0 {
        xi /= n;
    }
    xi
}

/// Augmented corrector for the BCC system
/// {F_int − γP̂ − γ_sP̂_s = 0, ‖u − u_cr‖² = r², ‖u − u_last‖² = ℓ²}.
#[allow(clippy::too_many_arguments)]
fn corrector_bcc(
    model: &Model,
    rho: &[f64],
    st: InterpState,
    p_s: &DVector<f64>,
    u_cr: &DVector<f64>,
    radius: f64,
    u_last: &DVector<f64>,
    ell: f64,
    start: (&DVector<f64>, f64, f64),
    opts: &PathOptions,
) -> Result<(DVector<f64>, f64, f64)> {
    let load_norm = model.load.norm();
    let (mut u, mut gamma, mut gamma_s) = (start.0.clone(), start.1, start.2);
    for _ in 0..opts.max_corrector {
        let mut asm = assemble(model, &u, rho, gamma, st)?;
        asm.residual.axpy(-gamma_s, p_s, 1.0);
        for &(dof, _) in &model.fixed {
            asm.residual[dof] = 0.0;
        }
        let d_cr = &u - u_cr;
        let d_arc = &u - u_last;
        let c_aux = d_cr.norm_squared() - radius * radius;
        let c_arc = d_arc.norm_squared() - ell * ell;
        if asm.residual.norm() <= opts.force_tol * load_norm
            && c_aux.abs() <= 1e-10 * radius * radius
            && c_arc.abs() <= 1e-10 * ell * ell
        {
            return Ok((u, gamma, gamma_s));
        }
        let factor = asm.stiffness.factor_ldlt();
        let mut p1 = model.load.clone();
        let mut p2 = p_s.clone();
        for &(dof, _) in &model.fixed {
            p1[dof] = 0.0;
            p2[dof] = 0.0;
        }
        let a1 = factor.solve_vec(&p1);
        let a2 = factor.solve_vec(&p2);
        let b = factor.solve_vec(&(-&asm.residual));
        // two scalar equations for (δγ, δγ_s)
        let m11 = 2.0 * d_cr.dot(&a1);
        let m12 = 2.0 * d_cr.dot(&a2);
        let m21 = 2.0 * d_arc.dot(&a1);
        let m22 = 2.0 * d_arc.dot(&a2);
        let r1 = -c_aux - 2.0 * d_cr.dot(&b);
        let r2 = -c_arc - 2.0 * d_arc.dot(&b);
        let det = m11 * m22 - m12 * m21;
        if det.abs() < 1e-300 || !det.is_finite() {
            return Err(Error::PathFailure("degenerate BCC corrector".into()));
        }
        let dgamma = (r1 * m22 - r2 * m12) / det;
        let dgamma_s = (m11 * r2 - m21 * r1) / det;
        let du = b + &a1 * dgamma + &a2 * dgamma_s;
        if !du.iter().all(|x| x.is_finite()) {
            return Err(Error::PathFailure("non-finite BCC step".into()));
        }
        u += du;
        gamma += dgamma;
        gamma_s += dgamma_s;
    }
    Err(Error::PathFailure("BCC corrector did not converge".into()))
}

/// Traverses the branch connecting curve around a critical point and returns
/// the refined γ_s = 0 crossings — one point on every branch through the
/// cylinder ‖u − u_cr‖ = r. The traversal terminates when the curve closes
/// on its first crossing, or with a partial list once the point budget is
/// exhausted.
#[allow(clippy::too_many_arguments)]
pub fn bcc_traverse(
    model: &Model,
    rho: &[f64],
    st: InterpState,
    critical: &CriticalPoint,
    incoming_dir: &DVector<f64>,
    radius: f64,
    ell: f64,
    seed: u64,
    opts: &PathOptions,
) -> Result<(Vec<BranchPoint>, bool)> {
    let p_s = disturbing_load(model, seed);
    let u_cr = &critical.u;
    let load_norm = model.load.norm();

    // first crossing: the primary branch continued through the cylinder
    let pred = u_cr + incoming_dir * radius;
    let (u0, g0) = corrector_cylindrical(
        model,
        rho,
        st,
        u_cr,
        radius,
        &pred,
        critical.gamma,
        opts,
    )?;
    let mut crossings = vec![BranchPoint {
        residual: equilibrium_residual(model, rho, st, &u0, g0)? / load_norm,
        u: u0.clone(),
        gamma: g0,
    }];

    // tangent of the BCC at the start point: null direction of the
    // equilibrium + cylinder rows, oriented toward positive γ_s
    let asm = assemble(model, &u0, rho, g0, st)?;
    let factor = asm.stiffness.factor_ldlt();
    let mut p1 = model.load.clone();
    let mut p2 = p_s.clone();
    for &(dof, _) in &model.fixed {
        p1[dof] = 0.0;
        p2[dof] = 0.0;
    }
    let a1 = factor.solve_vec(&p1);
    let a2 = factor.solve_vec(&p2);
    let d_cr = &u0 - u_cr;
    let alpha = d_cr.dot(&a1);
    let beta = d_cr.dot(&a2);
    // t_u = γ̇ a1 + γ̇_s a2 with α γ̇ + β γ̇_s = 0
    let (mut tg, mut tgs) = (-beta, alpha);
    if tgs < 0.0 {
        tg = -tg;
        tgs = -tgs;
    }
    let mut dir_u = &a1 * tg + &a2 * tgs;
    let mut dir_g = tg;
    let mut dir_gs = tgs;
    {
        let n = dir_u.norm().max(1e-300);
        dir_u /= n;
        dir_g /= n;
        dir_gs /= n;
    }

    let mut u_last = u0.clone();
    let mut g_last = g0;
    let mut gs_last = 0.0_f64;
    let mut step = ell;
    let mut failures = 0;
    let mut closed = false;
    let budget = opts.max_points.max(64);
    for _ in 0..budget {
        let pred_u = &u_last + &dir_u * step;
        let pred_g = g_last + dir_g * step;
        let pred_gs = gs_last + dir_gs * step;
        match corrector_bcc(
            model,
            rho,
            st,
            &p_s,
            u_cr,
            radius,
            &u_last,
            step,
            (&pred_u, pred_g, pred_gs),
            opts,
        ) {
            Ok((u, g, gs)) => {
                // γ_s sign change: refine the crossing on this sub-arc
                if gs * gs_last < 0.0 {
                    let t = gs_last / (gs_last - gs);
                    let pu = &u_last * (1.0 - t) + &u * t;
                    let pg = g_last * (1.0 - t) + g * t;
                    if let Ok((uc, gc)) =
                        corrector_cylindrical(model, rho, st, u_cr, radius, &pu, pg, opts)
                    {
                        let res = equilibrium_residual(model, rho, st, &uc, gc)? / load_norm;
                        let matches_first = {
                            let d = (&uc - &crossings[0].u).norm();
                            d <= 1e-6 * crossings[0].u.norm().max(1.0)
                                && (gc - crossings[0].gamma).abs()
                                    <= 1e-6 * crossings[0].gamma.abs().max(1.0)
                        };
                        if matches_first {
                            closed = true;
                            break;
                        }
                        let duplicate = crossings.iter().any(|bp| {
                            (&bp.u - &uc).norm() <= 1e-6 * uc.norm().max(1.0)
                        });
                        if !duplicate {
                            crossings.push(BranchPoint { u: uc, gamma: gc, residual: res });
                        }
                    }
                }
                let du = &u - &u_last;
                let n = du.norm().max(1e-300);
                dir_u = du / n;
                dir_g = (g - g_last) / n;
                dir_gs = (gs - gs_last) / n;
                u_last = u;
                g_last = g;
                gs_last = gs;
                step = (step * 1.3).min(ell);
                failures = 0;
            }
            Err(_) => {
                step *= 0.5;
                failures += 1;
                if failures > 20 {
                    break;
                }
            }
        }
    }
    Ok((crossings, closed))
}

fn equilibrium_residual(
    model: &Model,
    rho: &[f64],
    st: InterpState,
    u: &DVector<f64>,
    gamma: f64,
) -> Result<f64> {
    Ok(assemble(model, u, rho, gamma, st)?.residual.norm())
}

/// Traces each discovered branch point onward with the cylindrical
/// arc-length method. Failures on individual branches are isolated.
#[allow(clippy::too_many_arguments)]
pub fn trace_post_buckling(
    model: &Model,
    rho: &[f64],
    st: InterpState,
    critical: &CriticalPoint,
    branch_points: &[BranchPoint],
    opts: &PathOptions,
) -> Vec<EquilibriumPath> {
    let mut out = Vec::new();
    for (i, bp) in branch_points.iter().enumerate() {
        let dir = &bp.u - &critical.u;
        let n = dir.norm().max(1e-300);
        let first = (dir / n, (bp.gamma - critical.gamma) / n);
        match arc_length_trace(model, rho, st, &bp.u, bp.gamma, Some(first), opts) {
            Ok(mut path) => {
                path.branch_id = i + 1;
                out.push(path);
            }
            Err(e) => out.push(EquilibriumPath {
                points: Vec::new(),
                criticals: Vec::new(),
                branch_id: i + 1,
                parent: None,
                terminated: Some(e.to_string()),
            }),
        }
    }
    out
}

/// A conforming solid submodel extracted from a thresholded density field.
#[derive(Debug, Clone)]
pub struct SolidSubmodel {
    pub model: Model,
    /// Solid-model element id → original element id.
    pub elem_map: Vec<usize>,
    /// Solid-model node id → original node id.
    pub node_map: Vec<usize>,
}

/// Thresholds a density field to the solid elements (ρ ≥ threshold), checks
/// that they form one connected region containing every support and load
/// node, and builds the renumbered conforming submodel.
pub fn extract_solid_submodel(model: &Model, rho: &[f64], threshold: f64) -> Result<SolidSubmodel> {
    let solid: Vec<usize> = (0..model.n_elems()).filter(|&e| rho[e] >= threshold).collect();
    if solid.is_empty() {
        return Err(Error::DisconnectedRegion("no solid elements".into()));
    }
    // union-find over solid elements sharing nodes
    let mut parent: Vec<usize> = (0..solid.len()).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        let mut i = i;
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut node_owner: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for (si, &e) in solid.iter().enumerate() {
        for &n in &model.conn[e] {
            if let Some(&sj) = node_owner.get(&n) {
                let (ri, rj) = (find(&mut parent, si), find(&mut parent, sj));
                if ri != rj {
                    parent[ri] = rj;
                }
            } else {
                node_owner.insert(n, si);
            }
        }
    }
    let root0 = find(&mut parent, 0);
    for si in 1..solid.len() {
        if find(&mut parent, si) != root0 {
            return Err(Error::DisconnectedRegion(format!(
                "solid region splits into multiple components (element {} disconnected)",
                solid[si]
            )));
        }
    }
    // all support and load nodes must belong to the solid region
    let mut kept_nodes: Vec<usize> = solid
        .iter()
        .flat_map(|&e| model.conn[e].iter().copied())
        .collect();
    kept_nodes.sort_unstable();
    kept_nodes.dedup();
    let node_set: std::collections::HashSet<usize> = kept_nodes.iter().copied().collect();
    for &(dof, _) in &model.fixed {
        if !node_set.contains(&(dof / 2)) {
            return Err(Error::DisconnectedRegion(format!(
                "support node {} lies outside the solid region",
                dof / 2
            )));
        }
    }
    for d in 0..model.n_dofs() {
        if model.load[d] != 0.0 && !node_set.contains(&(d / 2)) {
            return Err(Error::DisconnectedRegion(format!(
                "load node {} lies outside the solid region",
                d / 2
            )));
        }
    }

    let mut new_id = vec![usize::MAX; model.n_nodes()];
    for (i, &n) in kept_nodes.iter().enumerate() {
        new_id[n] = i;
    }
    let mut coords = Vec::with_capacity(2 * kept_nodes.len());
    for &n in &kept_nodes {
        coords.push(model.coords[2 * n]);
        coords.push(model.coords[2 * n + 1]);
    }
    let conn: Vec<[usize; 4]> = solid
        .iter()
        .map(|&e| {
            let c = model.conn[e];
            [new_id[c[0]], new_id[c[1]], new_id[c[2]], new_id[c[3]]]
        })
        .collect();
    let fixed: Vec<(usize, f64)> = model
        .fixed
        .iter()
        .map(|&(dof, v)| (2 * new_id[dof / 2] + dof % 2, v))
        .collect();
    let mut load = DVector::zeros(2 * kept_nodes.len());
    for d in 0..model.n_dofs() {
        if model.load[d] != 0.0 {
            load[2 * new_id[d / 2] + d % 2] = model.load[d];
        }
    }
    let sub = Model::from_parts(
        model.nx,
        model.ny,
        model.elem_size,
        coords,
        conn,
        fixed,
        load,
        model.youngs,
        model.poisson,
        model.interp,
        model.thickness,
    );
    Ok(SolidSubmodel { model: sub, elem_map: solid, node_map: kept_nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_grid_mesh, Dof, LoadSpec, SupportSpec};
    use approx::assert_relative_eq;

    /// Pinned slender column: bottom-center pin, top-center roller,
    /// compressive unit load at the top center.
    fn pinned_column(nx: usize, ny: usize, e: f64, nu: f64) -> Model {
        let bottom_mid = (nx / 2) * (ny + 1);
        let top_mid = (nx / 2) * (ny + 1) + ny;
        let mut supports = Vec::new();
        supports.extend(SupportSpec::pin(bottom_mid));
        supports.push(SupportSpec::roller_x(top_mid));
        let loads = vec![LoadSpec { node: top_mid, comp: Dof::Y, magnitude: -1.0 }];
        let mut m = build_grid_mesh(nx, ny, 1.0, &supports, &loads).unwrap();
        m.youngs = e;
        m.poisson = nu;
        m
    }

    #[test]
    fn single_element_axial_ray() {
        // one element, bottom edge fixed, pulled vertically: the traced path
        // is a smooth (u, γ) ray with the arc constraint satisfied stepwise
        let supports: Vec<SupportSpec> =
            [0usize, 2].iter().flat_map(|&n| SupportSpec::pin(n)).collect();
        let loads = vec![
            LoadSpec { node: 1, comp: Dof::Y, magnitude: 0.5 },
            LoadSpec { node: 3, comp: Dof::Y, magnitude: 0.5 },
        ];
        let mut m = build_grid_mesh(1, 1, 10.0, &supports, &loads).unwrap();
        m.youngs = 100.0;
        m.poisson = 0.3;
        let rho = vec![1.0; 1];
        let st = InterpState::of(&m);
        let opts = PathOptions {
            ell: 0.05,
            max_points: 12,
            ..Default::default()
        };
        let start = DVector::zeros(m.n_dofs());
        let path = arc_length_trace(&m, &rho, st, &start, 0.0, None, &opts).unwrap();
        assert!(path.points.len() >= 10);
        for p in &path.points[1..] {
            assert!(p.arc_residual <= 1e-8, "constraint residual {}", p.arc_residual);
            assert!(p.stable);
        }
        // γ grows monotonically on this stable primary path
        for w in path.points.windows(2) {
            assert!(w[1].gamma > w[0].gamma);
        }
        assert!(path.criticals.is_empty());
    }

    #[test]
    fn euler_column_critical_load_and_classification() {
        // L/w = 20, pinned-pinned: γ_cr within 15% of π²E_eff I/L³-scale
        let (nx, ny) = (4, 80);
        let e = 1000.0;
        let nu = 0.3;
        let m = pinned_column(nx, ny, e, nu);
        let rho = vec![1.0; m.n_elems()];
        let st = InterpState::of(&m);
        let opts = PathOptions {
            ell: 0.05,
            max_points: 120,
            ..Default::default()
        };
        let start = DVector::zeros(m.n_dofs());
        let path = arc_length_trace(&m, &rho, st, &start, 0.0, None, &opts).unwrap();
        assert!(
            !path.criticals.is_empty(),
            "no critical point found up to gamma {}",
            path.points.last().unwrap().gamma
        );
        let cp = &path.criticals[0];
        let e_eff = e / (1.0 - nu * nu);
        let w = nx as f64 * m.elem_size;
        let l = ny as f64 * m.elem_size;
        let inertia = w * w * w / 12.0;
        let euler = std::f64::consts::PI.powi(2) * e_eff * inertia / (l * l);
        let rel = (cp.gamma - euler).abs() / euler;
        assert!(rel <= 0.15, "critical {} vs Euler {} ({:.1}%)", cp.gamma, euler, 100.0 * rel);
        // antisymmetric mode vs symmetric load: a bifurcation
        assert_eq!(cp.kind, CriticalKind::Bifurcation);
        assert!(cp.lambda.abs() <= 1e-8 * 10.0 * e, "lambda at critical: {}", cp.lambda);
        // exactly one sign flip between consecutive non-critical points
        let flips = path
            .points
            .windows(2)
            .filter(|w| w[0].lambda1 * w[1].lambda1 < 0.0)
            .count();
        assert_eq!(flips, 1);
    }

    #[test]
    fn shallow_arch_limit_point_and_snap_through() {
        // shallow arch built by lifting a strip's y-coordinates
        let nx = 32;
        let ny = 2;
        let rise = 4.0;
        let mut supports = Vec::new();
        for iy in 0..=ny {
            supports.extend(SupportSpec::pin(iy));
            supports.extend(SupportSpec::pin(nx * (ny + 1) + iy));
        }
        let top_mid = (nx / 2) * (ny + 1) + ny;
        let loads = vec![LoadSpec { node: top_mid, comp: Dof::Y, magnitude: -1.0 }];
        let mut m = build_grid_mesh(nx, ny, 1.0, &supports, &loads).unwrap();
        m.youngs = 1000.0;
        m.poisson = 0.3;
        let span = nx as f64;
        for n in 0..m.n_nodes() {
            let x = m.coords[2 * n];
            m.coords[2 * n + 1] += rise * (std::f64::consts::PI * x / span).sin();
        }
        let rho = vec![1.0; m.n_elems()];
        let st = InterpState::of(&m);
        let opts = PathOptions {
            ell: 0.8,
            max_points: 120,
            ..Default::default()
        };
        let start = DVector::zeros(m.n_dofs());
        let path = arc_length_trace(&m, &rho, st, &start, 0.0, None, &opts).unwrap();
        assert!(!path.criticals.is_empty(), "no critical point detected");
        let cp = &path.criticals[0];
        assert_eq!(cp.kind, CriticalKind::Limit, "snap-through should be a limit point");
        // sign pattern of dγ along the path: +, −, + (snap-through)
        let dg: Vec<f64> = path.points.windows(2).map(|w| w[1].gamma - w[0].gamma).collect();
        let first_neg = dg.iter().position(|&d| d < 0.0);
        assert!(first_neg.is_some(), "gamma never decreased (no snap-through traced)");
        let fneg = first_neg.unwrap();
        assert!(dg[..fneg].iter().all(|&d| d > 0.0));
        let recover = dg[fneg..].iter().position(|&d| d > 0.0);
        assert!(recover.is_some(), "gamma never recovered after the limit point");

        // load-controlled oracle: the static solution family is
        // discontinuous at the limit load — just above it, load control
        // either diverges or lands on the far (snapped-through) branch
        let solver = crate::fem::SolverOptions {
            max_cutoff: m.interp.c0,
            ..Default::default()
        };
        let top_mid_dof = 2 * top_mid + 1;
        let below = crate::fem::solve_equilibrium(&m, &rho, cp.gamma * 0.90, &solver)
            .expect("load control below the limit load");
        match crate::fem::solve_equilibrium(&m, &rho, cp.gamma * 1.05, &solver) {
            Err(_) => {}
            Ok(above) => {
                let jump = (above.u[top_mid_dof] - below.u[top_mid_dof]).abs();
                assert!(
                    jump > rise,
                    "no snap-through jump across the limit load (jump {jump})"
                );
            }
        }
    }

    #[test]
    fn branch_switch_gives_mirror_secondary_states() {
        let (nx, ny) = (4, 40);
        let m = pinned_column(nx, ny, 1000.0, 0.3);
        let rho = vec![1.0; m.n_elems()];
        let st = InterpState::of(&m);
        let opts = PathOptions {
            ell: 0.1,
            max_points: 200,
            ..Default::default()
        };
        let start = DVector::zeros(m.n_dofs());
        let path = arc_length_trace(&m, &rho, st, &start, 0.0, None, &opts).unwrap();
        let cp = path.criticals.first().expect("column must buckle").clone();

        // predictor scale example: τ = 100, ‖u_cr‖ known
        let tau = 100.0;
        let (up, gp) = branch_switch_simple(&m, &rho, st, &cp, tau, 1.0, &opts).unwrap();
        let (um, gm) = branch_switch_simple(&m, &rho, st, &cp, tau, -1.0, &opts).unwrap();
        assert_relative_eq!(gp, gm, max_relative = 1e-6);
        // mirror image through the column axis: x-displacements negate,
        // y-displacements match after reflecting node positions
        let mirror = |u: &DVector<f64>| {
            let mut v = DVector::zeros(u.len());
            for ix in 0..=nx {
                for iy in 0..=ny {
                    let a = ix * (ny + 1) + iy;
                    let b = (nx - ix) * (ny + 1) + iy;
                    v[2 * a] = -u[2 * b];
                    v[2 * a + 1] = u[2 * b + 1];
                }
            }
            v
        };
        let um_reflected = mirror(&um);
        let scale = up.norm();
        assert!(
            (&up - &um_reflected).norm() <= 1e-6 * scale,
            "secondary states are not mirror images: dev {}",
            (&up - &um_reflected).norm() / scale
        );
        // both leave the primary branch
        let dev_p = (&up - &cp.u).norm();
        assert!(dev_p > 1e-4 * cp.u.norm());
    }

    #[test]
    fn bcc_finds_four_crossings_on_simple_bifurcation() {
        let (nx, ny) = (4, 40);
        let m = pinned_column(nx, ny, 1000.0, 0.3);
        let rho = vec![1.0; m.n_elems()];
        let st = InterpState::of(&m);
        let opts = PathOptions {
            ell: 0.1,
            max_points: 400,
            ..Default::default()
        };
        let start = DVector::zeros(m.n_dofs());
        let path = arc_length_trace(&m, &rho, st, &start, 0.0, None, &opts).unwrap();
        let cp = path.criticals.first().expect("column must buckle").clone();
        // incoming primary direction at the critical point
        let before = path
            .points
            .iter()
            .rev()
            .find(|p| !p.critical && p.gamma < cp.gamma)
            .unwrap();
        let dir = (&cp.u - &before.u) / (&cp.u - &before.u).norm();

        let radius = 0.1 * cp.u.norm();
        let bcc_opts = PathOptions {
            ell: radius * 0.35,
            max_points: 600,
            ..Default::default()
        };
        let (crossings, closed) =
            bcc_traverse(&m, &rho, st, &cp, &dir, radius, bcc_opts.ell, 7, &bcc_opts).unwrap();
        assert!(closed, "BCC did not close");
        assert_eq!(crossings.len(), 4, "crossing count");
        for bp in &crossings {
            assert!(bp.residual <= 1e-10, "branch point residual {}", bp.residual);
        }
        // a second seed finds the same crossing set
        let (crossings2, closed2) =
            bcc_traverse(&m, &rho, st, &cp, &dir, radius, bcc_opts.ell, 1234, &bcc_opts).unwrap();
        assert!(closed2);
        assert_eq!(crossings2.len(), 4);
        for bp in &crossings {
            let best = crossings2
                .iter()
                .map(|b2| (&b2.u - &bp.u).norm() / bp.u.norm().max(1e-300))
                .fold(f64::INFINITY, f64::min);
            assert!(best <= 1e-6, "crossing sets differ by {best}");
        }
    }

    #[test]
    fn post_buckled_branches_traced() {
        let (nx, ny) = (4, 40);
        let m = pinned_column(nx, ny, 1000.0, 0.3);
        let rho = vec![1.0; m.n_elems()];
        let st = InterpState::of(&m);
        let opts = PathOptions {
            ell: 0.1,
            max_points: 150,
            ..Default::default()
        };
        let start = DVector::zeros(m.n_dofs());
        let path = arc_length_trace(&m, &rho, st, &start, 0.0, None, &opts).unwrap();
        let cp = path.criticals.first().unwrap().clone();
        let (up, gp) = branch_switch_simple(&m, &rho, st, &cp, 100.0, 1.0, &opts).unwrap();
        let bp = BranchPoint {
            residual: 0.0,
            u: up,
            gamma: gp,
        };
        let trace_opts = PathOptions {
            ell: 0.2,
            max_points: 25,
            detect_criticals: false,
            ..Default::default()
        };
        let branches = trace_post_buckling(&m, &rho, st, &cp, &[bp], &trace_opts);
        assert_eq!(branches.len(), 1);
        let b = &branches[0];
        assert!(b.points.len() > 5, "branch too short: {:?}", b.terminated);
        // post-buckling of the pinned column: the load stays near-flat; the
        // branch wanders away from the critical point laterally
        let last = b.points.last().unwrap();
        assert!((last.gamma - cp.gamma).abs() <= 0.25 * cp.gamma);
        assert!((&last.u - &cp.u).norm() > (&b.points[0].u - &cp.u).norm());
    }

    #[test]
    fn solid_submodel_extraction_and_errors() {
        let (nx, ny) = (6, 4);
        let m = pinned_column(nx, ny, 1000.0, 0.3);
        // solid middle column of width 2 around the supports/load (ix 2..4)
        let mut rho = vec![0.0; m.n_elems()];
        for ix in 2..4 {
            for iy in 0..ny {
                rho[m.elem_id(ix, iy)] = 0.9;
            }
        }
        let sub = extract_solid_submodel(&m, &rho, 0.5).unwrap();
        assert_eq!(sub.model.n_elems(), 2 * ny);
        assert_eq!(sub.model.n_nodes(), 3 * (ny + 1));
        assert_eq!(sub.model.load.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(sub.model.fixed.len(), m.fixed.len());
        // threshold above the density: nothing solid
        assert!(extract_solid_submodel(&m, &rho, 0.95).is_err());
        // disconnected: two separated solid columns, load node uncovered
        let mut rho2 = vec![0.0; m.n_elems()];
        for iy in 0..ny {
            rho2[m.elem_id(0, iy)] = 1.0;
            rho2[m.elem_id(5, iy)] = 1.0;
        }
        assert!(matches!(
            extract_solid_submodel(&m, &rho2, 0.5),
            Err(Error::DisconnectedRegion(_))
        ));
    }
}
