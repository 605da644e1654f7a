//! Method of moving asymptotes with the standard primal-dual interior-point
//! subproblem solver.
//!
//! One call performs one MMA step: build the separable convex approximation
//! from the current asymptotes, solve the subproblem, and update the
//! asymptote state. Constraints are elastic (y-variables), so the subproblem
//! is always feasible; a genuinely infeasible step shows up as a large
//! constraint violation at the returned point and is reported through
//! [`MmaResult::max_violation`].

use crate::error::{Error, Result};

const ASY_INIT: f64 = 0.5;
const ASY_INCR: f64 = 1.2;
const ASY_DECR: f64 = 0.7;
const RAA0: f64 = 1e-5;

/// Asymptote memory carried between MMA iterations.
#[derive(Debug, Clone, Default)]
pub struct MmaState {
    iter: usize,
    x_prev: Vec<f64>,
    x_prev2: Vec<f64>,
    low: Vec<f64>,
    upp: Vec<f64>,
}

impl MmaState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops the asymptote history (fresh defaults on the next step).
    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// One MMA step's outcome.
#[derive(Debug, Clone)]
pub struct MmaResult {
    pub x: Vec<f64>,
    /// Constraint multipliers of the subproblem.
    pub lambda: Vec<f64>,
    /// Max elastic constraint violation at the returned point (from the
    /// subproblem's own approximation).
    pub max_violation: f64,
}

/// Input of one MMA step.
pub struct MmaProblem<'a> {
    pub x: &'a [f64],
    pub df0: &'a [f64],
    /// Constraint values f_i(x) ≤ 0.
    pub f: &'a [f64],
    /// Constraint gradient rows, one slice of length n per constraint.
    pub df: &'a [Vec<f64>],
    pub xmin: &'a [f64],
    pub xmax: &'a [f64],
    /// Per-step move bound as a fraction of (xmax − xmin).
    pub move_limit: f64,
}

/// One step of the method of moving asymptotes.
pub fn mma_update(problem: &MmaProblem, state: &mut MmaState) -> Result<MmaResult> {
    let n = problem.x.len();
    let m = problem.f.len();
    if problem.df0.len() != n || problem.df.iter().any(|r| r.len() != n) || problem.df.len() != m {
        return Err(Error::Invalid("MMA dimension mismatch".into()));
    }
    if problem
        .df0
        .iter()
        .chain(problem.df.iter().flatten())
        .any(|v| !v.is_finite())
    {
        return Err(Error::MmaInfeasible("non-finite gradient".into()));
    }
    let x = problem.x;
    let (xmin, xmax) = (problem.xmin, problem.xmax);

    state.iter += 1;
    if state.low.len() != n {
        state.low = vec![0.0; n];
        state.upp = vec![0.0; n];
        state.x_prev = x.to_vec();
        state.x_prev2 = x.to_vec();
        state.iter = 1;
    }
    let mut low = state.low.clone();
    let mut upp = state.upp.clone();
    for j in 0..n {
        let range = (xmax[j] - xmin[j]).max(1e-12);
        if state.iter <= 2 {
            low[j] = x[j] - ASY_INIT * range;
            upp[j] = x[j] + ASY_INIT * range;
        } else {
            let zzz = (x[j] - state.x_prev[j]) * (state.x_prev[j] - state.x_prev2[j]);
            let gamma = if zzz > 0.0 {
                ASY_INCR
            } else if zzz < 0.0 {
                ASY_DECR
            } else {
                1.0
            };
            low[j] = x[j] - gamma * (state.x_prev[j] - low[j]);
            upp[j] = x[j] + gamma * (upp[j] - state.x_prev[j]);
            // the near clamp is tight so oscillation damping can contract
            // the asymptotes far enough for sharp KKT points
            low[j] = low[j].max(x[j] - 10.0 * range).min(x[j] - 1e-6 * range);
            upp[j] = upp[j].min(x[j] + 10.0 * range).max(x[j] + 1e-6 * range);
        }
    }

    // bounds and approximation coefficients
    let mut alfa = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut p0 = vec![0.0; n];
    let mut q0 = vec![0.0; n];
    let mut p = vec![vec![0.0; n]; m];
    let mut q = vec![vec![0.0; n]; m];
    for j in 0..n {
        let range = (xmax[j] - xmin[j]).max(1e-12);
        alfa[j] = xmin[j]
            .max(low[j] + 0.1 * (x[j] - low[j]))
            .max(x[j] - problem.move_limit * range);
        beta[j] = xmax[j]
            .min(upp[j] - 0.1 * (upp[j] - x[j]))
            .min(x[j] + problem.move_limit * range);
        if beta[j] < alfa[j] {
            let mid = 0.5 * (alfa[j] + beta[j]);
            alfa[j] = mid;
            beta[j] = mid;
        }
        let ux = upp[j] - x[j];
        let xl = x[j] - low[j];
        let df0j = problem.df0[j];
        p0[j] = ux * ux * (df0j.max(0.0) + 0.001 * df0j.abs() + RAA0 / range);
        q0[j] = xl * xl * ((-df0j).max(0.0) + 0.001 * df0j.abs() + RAA0 / range);
        for i in 0..m {
            let dfij = problem.df[i][j];
            p[i][j] = ux * ux * dfij.max(0.0);
            q[i][j] = xl * xl * (-dfij).max(0.0);
        }
    }
    let mut b = vec![0.0; m];
    for i in 0..m {
        let mut s = 0.0;
        for j in 0..n {
            s += p[i][j] / (upp[j] - x[j]) + q[i][j] / (x[j] - low[j]);
        }
        b[i] = s - problem.f[i];
    }

    let sol = subsolv(n, m, &alfa, &beta, &low, &upp, &p0, &q0, &p, &q, &b)?;

    // approximation-space violation at the solution
    let mut max_violation: f64 = 0.0;
    for i in 0..m {
        let mut s = 0.0;
        for j in 0..n {
            s += p[i][j] / (upp[j] - sol.x[j]) + q[i][j] / (sol.x[j] - low[j]);
        }
        max_violation = max_violation.max(s - b[i]);
    }

    state.x_prev2 = std::mem::take(&mut state.x_prev);
    state.x_prev = x.to_vec();
    state.low = low;
    state.upp = upp;

    Ok(MmaResult {
        x: sol.x,
        lambda: sol.lam,
        max_violation,
    })
}

struct SubSolution {
    x: Vec<f64>,
    lam: Vec<f64>,
}

/// Primal-dual Newton solver for the MMA subproblem
///   min Σ p0/(u−x) + q0/(x−l) + a0 z + Σ(c y + ½ d y²)
///   s.t. Σ p_i/(u−x) + q_i/(x−l) − a_i z − y_i ≤ b_i, α ≤ x ≤ β.
#[allow(clippy::too_many_arguments)]
fn subsolv(
    n: usize,
    m: usize,
    alfa: &[f64],
    beta: &[f64],
    low: &[f64],
    upp: &[f64],
    p0: &[f64],
    q0: &[f64],
    p: &[Vec<f64>],
    q: &[Vec<f64>],
    b: &[f64],
) -> Result<SubSolution> {
    use nalgebra::{DMatrix, DVector};
    let a0 = 1.0;
    let a = vec![0.0; m];
    let c = vec![1000.0; m];
    let d = vec![1.0; m];

    let mut x: Vec<f64> = (0..n).map(|j| 0.5 * (alfa[j] + beta[j])).collect();
    let mut y = vec![1.0; m];
    let mut z = 1.0_f64;
    let mut lam = vec![1.0; m];
    let mut xsi: Vec<f64> = (0..n)
        .map(|j| (1.0 / (x[j] - alfa[j]).max(1e-12)).max(1.0))
        .collect();
    let mut eta: Vec<f64> = (0..n)
        .map(|j| (1.0 / (beta[j] - x[j]).max(1e-12)).max(1.0))
        .collect();
    let mut mu: Vec<f64> = c.iter().map(|&ci: &f64| (0.5 * ci).max(1.0)).collect();
    let mut zet = 1.0_f64;
    let mut s = vec![1.0; m];

    let mut epsi = 1.0_f64;
    let epsimin = 1e-9;
    while epsi > epsimin {
        for _newton in 0..200 {
            // gradients of the Lagrangian pieces
            let ux: Vec<f64> = (0..n).map(|j| upp[j] - x[j]).collect();
            let xl: Vec<f64> = (0..n).map(|j| x[j] - low[j]).collect();
            let plam: Vec<f64> = (0..n)
                .map(|j| p0[j] + (0..m).map(|i| lam[i] * p[i][j]).sum::<f64>())
                .collect();
            let qlam: Vec<f64> = (0..n)
                .map(|j| q0[j] + (0..m).map(|i| lam[i] * q[i][j]).sum::<f64>())
                .collect();
            let gvec: Vec<f64> = (0..m)
                .map(|i| (0..n).map(|j| p[i][j] / ux[j] + q[i][j] / xl[j]).sum())
                .collect();
            let dpsidx: Vec<f64> = (0..n)
                .map(|j| plam[j] / (ux[j] * ux[j]) - qlam[j] / (xl[j] * xl[j]))
                .collect();

            let rex: Vec<f64> = (0..n).map(|j| dpsidx[j] - xsi[j] + eta[j]).collect();
            let rey: Vec<f64> = (0..m).map(|i| c[i] + d[i] * y[i] - mu[i] - lam[i]).collect();
            let rez = a0 - zet - (0..m).map(|i| a[i] * lam[i]).sum::<f64>();
            let relam: Vec<f64> = (0..m)
                .map(|i| gvec[i] - a[i] * z - y[i] + s[i] - b[i])
                .collect();
            let rexsi: Vec<f64> = (0..n).map(|j| xsi[j] * (x[j] - alfa[j]) - epsi).collect();
            let reeta: Vec<f64> = (0..n).map(|j| eta[j] * (beta[j] - x[j]) - epsi).collect();
            let remu: Vec<f64> = (0..m).map(|i| mu[i] * y[i] - epsi).collect();
            let rezet = zet * z - epsi;
            let res: Vec<f64> = (0..m).map(|i| lam[i] * s[i] - epsi).collect();

            let residu_norm = rex
                .iter()
                .chain(&rey)
                .chain(std::iter::once(&rez))
                .chain(&relam)
                .chain(&rexsi)
                .chain(&reeta)
                .chain(&remu)
                .chain(std::iter::once(&rezet))
                .chain(&res)
                .fold(0.0_f64, |acc, v| acc.max(v.abs()));
            if residu_norm < 0.9 * epsi {
                break;
            }

            // Newton system, condensed onto (dx eliminated, dlam + dz)
            let delx: Vec<f64> = (0..n)
                .map(|j| {
                    dpsidx[j] - epsi / (x[j] - alfa[j]) + epsi / (beta[j] - x[j])
                })
                .collect();
            let dely: Vec<f64> = (0..m)
                .map(|i| c[i] + d[i] * y[i] - lam[i] - epsi / y[i])
                .collect();
            let delz = a0 - (0..m).map(|i| a[i] * lam[i]).sum::<f64>() - epsi / z;
            let dellam: Vec<f64> = (0..m)
                .map(|i| gvec[i] - a[i] * z - y[i] - b[i] + epsi / lam[i])
                .collect();
            let diagx: Vec<f64> = (0..n)
                .map(|j| {
                    2.0 * (plam[j] / (ux[j] * ux[j] * ux[j]) + qlam[j] / (xl[j] * xl[j] * xl[j]))
                        + xsi[j] / (x[j] - alfa[j])
                        + eta[j] / (beta[j] - x[j])
                })
                .collect();
            let diagy: Vec<f64> = (0..m).map(|i| d[i] + mu[i] / y[i]).collect();
            let diaglam: Vec<f64> = (0..m).map(|i| s[i] / lam[i]).collect();
            let diaglamyi: Vec<f64> = (0..m).map(|i| diaglam[i] + 1.0 / diagy[i]).collect();

            // G_ij = ∂g_i/∂x_j = p_ij/ux² − q_ij/xl²
            let g = |i: usize, j: usize| {
                p[i][j] / (ux[j] * ux[j]) - q[i][j] / (xl[j] * xl[j])
            };
            // (m+1)×(m+1) system in (dlam, dz)
            let mut aa = DMatrix::zeros(m + 1, m + 1);
            let mut bb = DVector::zeros(m + 1);
            for i in 0..m {
                for k in 0..m {
                    let mut v = 0.0;
                    for j in 0..n {
                        v += g(i, j) * g(k, j) / diagx[j];
                    }
                    if i == k {
                        v += diaglamyi[i];
                    }
                    aa[(i, k)] = v;
                }
                aa[(i, m)] = a[i];
                aa[(m, i)] = a[i];
                let mut rhs = dellam[i] + dely[i] / diagy[i];
                for j in 0..n {
                    rhs -= g(i, j) * delx[j] / diagx[j];
                }
                bb[i] = rhs;
            }
            aa[(m, m)] = -zet / z;
            bb[m] = delz;
            let sol = aa
                .lu()
                .solve(&bb)
                .ok_or_else(|| Error::MmaInfeasible("singular subproblem system".into()))?;
            let dlam: Vec<f64> = (0..m).map(|i| sol[i]).collect();
            let dz = sol[m];
            let dx: Vec<f64> = (0..n)
                .map(|j| {
                    let mut v = -delx[j];
                    for i in 0..m {
                        v -= g(i, j) * dlam[i];
                    }
                    v / diagx[j]
                })
                .collect();
            let dy: Vec<f64> = (0..m).map(|i| (-dely[i] + dlam[i]) / diagy[i]).collect();
            let dxsi: Vec<f64> = (0..n)
                .map(|j| -xsi[j] + (epsi - xsi[j] * dx[j]) / (x[j] - alfa[j]))
                .collect();
            let deta: Vec<f64> = (0..n)
                .map(|j| -eta[j] + (epsi + eta[j] * dx[j]) / (beta[j] - x[j]))
                .collect();
            let dmu: Vec<f64> = (0..m).map(|i| -mu[i] + (epsi - mu[i] * dy[i]) / y[i]).collect();
            let dzet = -zet + (epsi - zet * dz) / z;
            let ds: Vec<f64> = (0..m).map(|i| -s[i] + (epsi - s[i] * dlam[i]) / lam[i]).collect();

            // step length keeping all positives positive and x in (alfa, beta)
            let mut t = 1.0_f64;
            let guard = |val: f64, dval: f64, t: &mut f64| {
                if dval < 0.0 {
                    *t = t.min(-0.99 * val / dval);
                }
            };
            for i in 0..m {
                guard(y[i], dy[i], &mut t);
                guard(lam[i], dlam[i], &mut t);
                guard(mu[i], dmu[i], &mut t);
                guard(s[i], ds[i], &mut t);
            }
            guard(z, dz, &mut t);
            guard(zet, dzet, &mut t);
            for j in 0..n {
                guard(x[j] - alfa[j], dx[j], &mut t);
                guard(beta[j] - x[j], -dx[j], &mut t);
                guard(xsi[j], dxsi[j], &mut t);
                guard(eta[j], deta[j], &mut t);
            }

            // backtracking on the residual norm
            let mut accepted = false;
            for _back in 0..40 {
                let xn: Vec<f64> = (0..n).map(|j| x[j] + t * dx[j]).collect();
                let yn: Vec<f64> = (0..m).map(|i| y[i] + t * dy[i]).collect();
                let zn = z + t * dz;
                let lamn: Vec<f64> = (0..m).map(|i| lam[i] + t * dlam[i]).collect();
                let xsin: Vec<f64> = (0..n).map(|j| xsi[j] + t * dxsi[j]).collect();
                let etan: Vec<f64> = (0..n).map(|j| eta[j] + t * deta[j]).collect();
                let mun: Vec<f64> = (0..m).map(|i| mu[i] + t * dmu[i]).collect();
                let zetn = zet + t * dzet;
                let sn: Vec<f64> = (0..m).map(|i| s[i] + t * ds[i]).collect();
                let newnorm = subresidual(
                    n, m, alfa, beta, low, upp, p0, q0, p, q, b, &a, a0, &c, &d, &xn, &yn, zn,
                    &lamn, &xsin, &etan, &mun, zetn, &sn, epsi,
                );
                if newnorm < residu_norm {
                    x = xn;
                    y = yn;
                    z = zn;
                    lam = lamn;
                    xsi = xsin;
                    eta = etan;
                    mu = mun;
                    zet = zetn;
                    s = sn;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        epsi *= 0.1;
    }
    Ok(SubSolution { x, lam })
}

#[allow(clippy::too_many_arguments)]
fn subresidual(
    n: usize,
    m: usize,
    alfa: &[f64],
    beta: &[f64],
    low: &[f64],
    upp: &[f64],
    p0: &[f64],
    q0: &[f64],
    p: &[Vec<f64>],
    q: &[Vec<f64>],
    b: &[f64],
    a: &[f64],
    a0: f64,
    c: &[f64],
    d: &[f64],
    x: &[f64],
    y: &[f64],
    z: f64,
    lam: &[f64],
    xsi: &[f64],
    eta: &[f64],
    mu: &[f64],
    zet: f64,
    s: &[f64],
    epsi: f64,
) -> f64 {
    let mut worst = 0.0_f64;
    let mut take = |v: f64| worst = worst.max(v.abs());
    for j in 0..n {
        let ux = upp[j] - x[j];
        let xl = x[j] - low[j];
        let plam = p0[j] + (0..m).map(|i| lam[i] * p[i][j]).sum::<f64>();
        let qlam = q0[j] + (0..m).map(|i| lam[i] * q[i][j]).sum::<f64>();
        take(plam / (ux * ux) - qlam / (xl * xl) - xsi[j] + eta[j]);
        take(xsi[j] * (x[j] - alfa[j]) - epsi);
        take(eta[j] * (beta[j] - x[j]) - epsi);
    }
    for i in 0..m {
        let gi: f64 = (0..n)
            .map(|j| p[i][j] / (upp[j] - x[j]) + q[i][j] / (x[j] - low[j]))
            .sum();
        take(c[i] + d[i] * y[i] - mu[i] - lam[i]);
        take(gi - a[i] * z - y[i] + s[i] - b[i]);
        take(mu[i] * y[i] - epsi);
        take(lam[i] * s[i] - epsi);
    }
    take(a0 - zet - (0..m).map(|i| a[i] * lam[i]).sum::<f64>());
    take(zet * z - epsi);
    worst
}
