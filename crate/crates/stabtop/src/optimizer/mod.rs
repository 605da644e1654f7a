//! Optimization driver: the outer design loop (simple eigenvalues), the
//! inner increment sub-optimization (repeated eigenvalues), continuation
//! schedules and trace bookkeeping.
//!
//! Per outer iteration the chain is: filter → equilibrium at the target load
//! → pseudo-mass eigenanalysis over the first m clusters → adjoint
//! sensitivities. Iterations where every cluster is a singleton take one MMA
//! step on the design variables; iterations with repeated eigenvalues solve
//! the linearized increment problem in Δx with per-cluster equality
//! constraints z_skᵀΔρ = 0 and apply x ← x + Δx, after which the outer MMA
//! asymptotes restart from their defaults.

pub mod mma;

pub use mma::{mma_update, MmaProblem, MmaResult, MmaState};

use crate::error::{Error, Result};
use crate::fem::{solve_equilibrium, SolverOptions};
use crate::linalg::EigenOptions;
use crate::model::{volume_constraint, volume_constraint_gradient, DesignField, Model};
use crate::sensitivity::SensitivityContext;
use crate::stability::{analyze_stability, PseudoMassParams};

/// Continuation schedule for the penalization exponents:
/// p from 1 to 3, p_L from 4 to 6, p_m from 1 to 6, each +0.1 every 5
/// iterations (1-based iteration count).
pub fn continuation_schedule(iter: usize) -> (f64, f64, f64) {
    assert!(iter >= 1);
    let ramp = 0.1 * ((iter - 1) / 5) as f64;
    (
        (1.0 + ramp).min(3.0),
        (4.0 + ramp).min(6.0),
        (1.0 + ramp).min(6.0),
    )
}

/// Configuration of one optimization run.
#[derive(Debug, Clone)]
pub struct OptimizationConfig {
    /// Stability threshold λ̂; `None` removes the stability constraints.
    pub lambda_hat: Option<f64>,
    /// Volume fraction V_f.
    pub v_f: f64,
    /// Number of eigenvalue clusters constrained.
    pub m_clusters: usize,
    /// Move limit θ of the inner sub-optimization (≤ 0.1).
    pub theta: f64,
    /// MMA move parameter of the outer loop.
    pub mma_move: f64,
    /// Outer iteration cap.
    pub max_outer: usize,
    /// Inner iteration cap.
    pub inner_max: usize,
    /// Inner relative objective-change tolerance.
    pub inner_obj_tol: f64,
    /// Inner design-change 2-norm tolerance.
    pub inner_dx_tol: f64,
    /// Absolute eigenvalue multiplicity tolerance.
    pub tol_mult: f64,
    /// Whether the p/p_L/p_m continuation schedule is applied.
    pub continuation: bool,
    /// Load factor of the final load step.
    pub gamma_target: f64,
    pub pseudo_mass: PseudoMassParams,
    pub eig_opts: EigenOptions,
    pub solver: SolverOptions,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            lambda_hat: None,
            v_f: 0.5,
            m_clusters: 6,
            theta: 0.04,
            mma_move: 0.3,
            max_outer: 800,
            inner_max: 100,
            inner_obj_tol: 1e-8,
            inner_dx_tol: 1e-4,
            tol_mult: 1e-8,
            continuation: true,
            gamma_target: 1.0,
            pseudo_mass: PseudoMassParams::default(),
            eig_opts: EigenOptions::default(),
            solver: SolverOptions::default(),
        }
    }
}

impl OptimizationConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda_hat {
            if l <= 0.0 {
                return Err(Error::Invalid("stability threshold must be positive".into()));
            }
        }
        if !(0.0 < self.v_f && self.v_f < 1.0) {
            return Err(Error::Invalid("volume fraction must be in (0, 1)".into()));
        }
        if self.theta > 0.1 {
            return Err(Error::Invalid("inner move limit must satisfy theta <= 0.1".into()));
        }
        Ok(())
    }
}

/// Everything the outer MMA step needs at the current design, with gradients
/// already chained to the reduced design space.
#[derive(Debug, Clone)]
pub struct OuterAnalysis {
    pub f0: f64,
    pub df0: Vec<f64>,
    pub f1: f64,
    pub df1: Vec<f64>,
    /// Representative eigenvalue per (singleton) cluster.
    pub lambda: Vec<f64>,
    pub dlam: Vec<Vec<f64>>,
}

/// One outer MMA update of Eq-style problem: min f₀ s.t. volume and
/// 1 − λ_q/λ̂ ≤ 0.
pub fn outer_step(
    x: &[f64],
    analysis: &OuterAnalysis,
    lambda_hat: Option<f64>,
    mma_move: f64,
    state: &mut MmaState,
) -> Result<Vec<f64>> {
    let n = x.len();
    let mut f = vec![analysis.f1];
    let mut df = vec![analysis.df1.clone()];
    if let Some(lh) = lambda_hat {
        for (lam, g) in analysis.lambda.iter().zip(&analysis.dlam) {
            f.push(1.0 - lam / lh);
            df.push(g.iter().map(|v| -v / lh).collect());
        }
    }
    let problem = MmaProblem {
        x,
        df0: &analysis.df0,
        f: &f,
        df: &df,
        xmin: &vec![0.0; n],
        xmax: &vec![1.0; n],
        move_limit: mma_move,
    };
    let r = mma_update(&problem, state)?;
    Ok(r.x)
}

/// Data of the linearized inner sub-optimization at x_n.
#[derive(Debug, Clone)]
pub struct InnerAnalysis {
    pub f0: f64,
    pub df0: Vec<f64>,
    /// Volume constraint value at x_n (exact, linear in Δx).
    pub f1: f64,
    pub df1: Vec<f64>,
    /// All m̄ eigenvalues covered by the clusters.
    pub lambda: Vec<f64>,
    /// Reduced gradient per eigenvalue (z_qq for cluster members, the simple
    /// gradient for singletons).
    pub dlam: Vec<Vec<f64>>,
    /// Reduced equality rows z_skᵀW (s > k), c_nt of them.
    pub eq_rows: Vec<Vec<f64>>,
}

/// Outcome of the inner sub-optimization.
#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub dx: Vec<f64>,
    /// True when the step fell back to zero after repeated infeasibility.
    pub fallback_zero: bool,
    /// Inner MMA iterations spent.
    pub iterations: usize,
}

/// Solves the increment problem: linearized objective, exact (linear) volume
/// constraint, eigenvalue rows 1 − (λ_q + Δλ_q)/λ̂ ≤ 0 and the c_nt equality
/// constraints z_skᵀΔρ = 0 (as inequality pairs), under the move-limit box
/// max{−x_n, −θ1} ≤ Δx ≤ min{1 − x_n, θ1}.
pub fn inner_subproblem(
    x_n: &[f64],
    analysis: &InnerAnalysis,
    lambda_hat: Option<f64>,
    cfg: &OptimizationConfig,
) -> Result<InnerOutcome> {
    let mut theta = cfg.theta;
    for attempt in 0..2 {
        let (dx, iterations) = solve_inner(x_n, analysis, lambda_hat, theta, cfg)?;
        // equality feasibility post-check
        let dx_norm = dx.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut feasible = true;
        for row in &analysis.eq_rows {
            let g: f64 = row.iter().zip(&dx).map(|(a, b)| a * b).sum();
            let row_norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if g.abs() > 1e-6 * row_norm * dx_norm.max(1e-30) && dx_norm > 0.0 {
                feasible = false;
                break;
            }
        }
        if feasible {
            return Ok(InnerOutcome { dx, fallback_zero: false, iterations });
        }
        if attempt == 0 {
            theta *= 0.5;
        } else {
            return Ok(InnerOutcome {
                dx: vec![0.0; x_n.len()],
                fallback_zero: true,
                iterations,
            });
        }
    }
    unreachable!()
}

fn solve_inner(
    x_n: &[f64],
    analysis: &InnerAnalysis,
    lambda_hat: Option<f64>,
    theta: f64,
    cfg: &OptimizationConfig,
) -> Result<(Vec<f64>, usize)> {
    let n = x_n.len();
    let lo: Vec<f64> = x_n.iter().map(|&v| (-v).max(-theta)).collect();
    let hi: Vec<f64> = x_n.iter().map(|&v| (1.0 - v).min(theta)).collect();
    let mut dx = vec![0.0; n];
    let mut state = MmaState::new();
    let mut f0_prev = f64::INFINITY;
    let f0_scale = analysis.f0.abs().max(1e-30);
    let mut iters = 0;
    for i in 0..cfg.inner_max {
        iters = i + 1;
        let f0_lin: f64 = analysis.df0.iter().zip(&dx).map(|(a, b)| a * b).sum();
        // constraint rows at the current increment
        let mut f = Vec::new();
        let mut df: Vec<Vec<f64>> = Vec::new();
        let vol: f64 =
            analysis.f1 + analysis.df1.iter().zip(&dx).map(|(a, b)| a * b).sum::<f64>();
        f.push(vol);
        df.push(analysis.df1.clone());
        if let Some(lh) = lambda_hat {
            for (lam, g) in analysis.lambda.iter().zip(&analysis.dlam) {
                let dl: f64 = g.iter().zip(&dx).map(|(a, b)| a * b).sum();
                f.push(1.0 - (lam + dl) / lh);
                df.push(g.iter().map(|v| -v / lh).collect());
            }
        }
        for row in &analysis.eq_rows {
            let g: f64 = row.iter().zip(&dx).map(|(a, b)| a * b).sum();
            f.push(g);
            df.push(row.clone());
            f.push(-g);
            df.push(row.iter().map(|v| -v).collect());
        }
        let problem = MmaProblem {
            x: &dx,
            df0: &analysis.df0,
            f: &f,
            df: &df,
            xmin: &lo,
            xmax: &hi,
            move_limit: 1.0,
        };
        let r = mma_update(&problem, &mut state)?;
        let change: f64 = r
            .x
            .iter()
            .zip(&dx)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        dx = r.x;
        let f0_new: f64 = analysis.df0.iter().zip(&dx).map(|(a, b)| a * b).sum();
        let obj_change = (f0_new - if f0_prev.is_finite() { f0_prev } else { f0_lin }).abs();
        f0_prev = f0_new;
        if obj_change / f0_scale <= cfg.inner_obj_tol || change <= cfg.inner_dx_tol {
            break;
        }
    }
    Ok((dx, iters))
}

/// Per-iteration record of the optimization trace.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub f0: f64,
    pub f1: f64,
    /// First m̄ eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Cluster multiplicities N_1..N_m.
    pub multiplicities: Vec<usize>,
    /// Cutoff raises during this iteration's equilibrium solve.
    pub cutoff_updates: usize,
    /// True when the inner increment loop ran.
    pub inner_active: bool,
    /// Exponents in effect (p, p_L, p_m).
    pub exponents: (f64, f64, f64),
}

/// Trace of a whole run.
#[derive(Debug, Clone, Default)]
pub struct OptimizationTrace {
    pub iterations: Vec<IterationRecord>,
    /// Reason the run stopped early, if it did.
    pub aborted: Option<String>,
}

impl OptimizationTrace {
    pub fn inner_ever_active(&self) -> bool {
        self.iterations.iter().any(|r| r.inner_active)
    }
}

/// Runs the optimization loop, returning the final design and the trace.
pub fn run_optimization(
    model: &Model,
    design: &DesignField,
    cfg: &OptimizationConfig,
) -> Result<(DesignField, OptimizationTrace)> {
    run_optimization_with(model, design, cfg, |_, _| {})
}

/// Like [`run_optimization`] with an observer called after every iteration
/// (trace streaming, snapshots).
pub fn run_optimization_with(
    model: &Model,
    design: &DesignField,
    cfg: &OptimizationConfig,
    mut observer: impl FnMut(&IterationRecord, &DesignField),
) -> Result<(DesignField, OptimizationTrace)> {
    cfg.validate()?;
    let mut field = design.clone();
    let mut trace = OptimizationTrace::default();
    let mut mma_state = MmaState::new();
    let v_tilde = volume_constraint_gradient(model, cfg.v_f);

    for iter in 1..=cfg.max_outer {
        let (p, p_l, p_m) = if cfg.continuation {
            continuation_schedule(iter)
        } else {
            (model.interp.p, model.interp.p_l, cfg.pseudo_mass.p_m)
        };
        let mut solver = cfg.solver.clone();
        solver.p = Some(p);
        solver.p_l = Some(p_l);
        let st = solver.interp_state(model);
        let pm = cfg.pseudo_mass.with_p_m(p_m)?;

        let rho = field.densities();
        let state = match solve_equilibrium(model, &rho, cfg.gamma_target, &solver) {
            Ok(s) => s,
            Err(e) => {
                trace.aborted = Some(format!("iteration {iter}: {e}"));
                return Ok((field, trace));
            }
        };
        // downstream operators must see the cutoff the solve converged with
        let st = st.with_cutoff(state.cutoff);
        let eig = match analyze_stability(
            model,
            &state.u,
            &rho,
            st,
            Some(&pm),
            cfg.m_clusters,
            cfg.tol_mult,
            &cfg.eig_opts,
        ) {
            Ok(e) => e,
            Err(e) => {
                trace.aborted = Some(format!("iteration {iter}: {e}"));
                return Ok((field, trace));
            }
        };
        let ctx = match SensitivityContext::new(model, &state, &rho, st) {
            Ok(c) => c,
            Err(e) => {
                trace.aborted = Some(format!("iteration {iter}: {e}"));
                return Ok((field, trace));
            }
        };
        let (f0, df0_rho) = ctx.compliance_and_gradient(&state)?;
        let df0 = field.reduce_gradient(&df0_rho);
        let f1 = volume_constraint(&rho, model, cfg.v_f);
        let df1 = field.reduce_gradient(&v_tilde);
        let m_bar = eig.m_bar();
        let multiplicities = eig.multiplicities();
        let has_repeated = cfg.lambda_hat.is_some() && eig.has_repeated();

        let record = if !has_repeated {
            // outer step on the design variables (constraints use the m
            // cluster representatives, all simple here)
            let mut lambda = Vec::new();
            let mut dlam = Vec::new();
            if cfg.lambda_hat.is_some() {
                for c in &eig.clusters {
                    let g = ctx.simple_eigenvalue_gradient(&eig, c.start, Some(&pm))?;
                    lambda.push(eig.values[c.start]);
                    dlam.push(field.reduce_gradient(&g));
                }
            }
            let analysis = OuterAnalysis {
                f0,
                df0,
                f1,
                df1,
                lambda,
                dlam,
            };
            let x_new = outer_step(&field.x, &analysis, cfg.lambda_hat, cfg.mma_move, &mut mma_state)?;
            field.x = x_new;
            IterationRecord {
                iteration: iter,
                f0,
                f1,
                eigenvalues: eig.values[..m_bar.min(eig.values.len())].to_vec(),
                multiplicities,
                cutoff_updates: state.record.cutoff_updates,
                inner_active: false,
                exponents: (p, p_l, p_m),
            }
        } else {
            // inner increment problem over all m̄ eigenvalues, with the
            // c_nt off-diagonal equality rows per repeated cluster
            let mut lambda = Vec::with_capacity(m_bar);
            let mut dlam = Vec::with_capacity(m_bar);
            let mut eq_rows = Vec::new();
            for c in &eig.clusters {
                if c.len == 1 {
                    let g = ctx.simple_eigenvalue_gradient(&eig, c.start, Some(&pm))?;
                    lambda.push(eig.values[c.start]);
                    dlam.push(field.reduce_gradient(&g));
                } else {
                    let z = ctx.cluster_direction_vectors(&eig, c, Some(&pm))?;
                    for r in 0..c.len {
                        lambda.push(eig.values[c.start + r]);
                        dlam.push(field.reduce_gradient(z.diagonal(r)));
                    }
                    for s in 0..c.len {
                        for k in (s + 1)..c.len {
                            eq_rows.push(field.reduce_gradient(z.z_sk(s, k)));
                        }
                    }
                }
            }
            let analysis = InnerAnalysis {
                f0,
                df0,
                f1,
                df1,
                lambda,
                dlam,
                eq_rows,
            };
            let outcome = inner_subproblem(&field.x, &analysis, cfg.lambda_hat, cfg)?;
            for (xj, dj) in field.x.iter_mut().zip(&outcome.dx) {
                *xj = (*xj + dj).clamp(0.0, 1.0);
            }
            // the outer asymptotes restart after an inner update
            mma_state.reset();
            IterationRecord {
                iteration: iter,
                f0,
                f1,
                eigenvalues: eig.values[..m_bar.min(eig.values.len())].to_vec(),
                multiplicities,
                cutoff_updates: state.record.cutoff_updates,
                inner_active: true,
                exponents: (p, p_l, p_m),
            }
        };
        observer(&record, &field);
        trace.iterations.push(record);
    }
    Ok((field, trace))
}
