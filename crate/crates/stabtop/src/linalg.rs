//! Banded symmetric linear algebra: LDLᵀ factorization (indefinite-capable,
//! with inertia), a shift-invert Lanczos eigensolver for the lowest
//! eigenvalues, and a dense fallback for small systems.
//!
//! Structured-grid tangent matrices are narrow-banded, so an LDLᵀ without
//! pivoting gives fast repeated solves plus the negative-pivot count, which
//! equals the number of eigenvalues below the shift (Sylvester inertia).
//! The eigensolver uses that count to certify that no eigenvalue below the
//! reported window was missed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Symmetric banded matrix; only the lower band is stored.
///
/// Entry `(i, j)` with `j <= i <= j + bw` lives at `data[j * (bw + 1) + (i - j)]`.
#[derive(Debug, Clone)]
pub struct BandedSym {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let bw = bw.min(n.saturating_sub(1));
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i >= j && i - j <= self.bw);
        j * (self.bw + 1) + (i - j)
    }

    /// Adds `v` at `(i, j)`; the mirrored entry is implied.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(
            i - j <= self.bw,
            "entry ({i}, {j}) outside stored bandwidth {}",
            self.bw
        );
        let at = self.idx(i, j);
        self.data[at] += v;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let at = self.idx(i, j);
        self.data[at] = v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        assert_eq!(n, m.ncols());
        let mut bw = 0;
        for j in 0..n {
            for i in j..n {
                if m[(i, j)] != 0.0 {
                    bw = bw.max(i - j);
                }
            }
        }
        let mut out = Self::zeros(n, bw);
        for j in 0..n {
            for i in j..=(j + bw).min(n - 1) {
                out.set(i, j, 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for i in j..=(j + self.bw).min(self.n - 1) {
                let v = self.data[self.idx(i, j)];
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// y = A x (full symmetric product).
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.fill(0.0);
        for j in 0..self.n {
            let xj = x[j];
            let hi = (j + self.bw).min(self.n - 1);
            let base = j * (self.bw + 1);
            y[j] += self.data[base] * xj;
            for i in (j + 1)..=hi {
                let v = self.data[base + (i - j)];
                y[i] += v * xj;
                y[j] += v * x[i];
            }
        }
    }

    /// ‖ |A| |x| ‖₂ — the scale of the roundoff incurred evaluating A x,
    /// used as the attainable-accuracy floor in residual tests.
    pub fn mul_abs_norm(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let xj = x[j].abs();
            let hi = (j + self.bw).min(self.n - 1);
            let base = j * (self.bw + 1);
            y[j] += self.data[base].abs() * xj;
            for i in (j + 1)..=hi {
                let v = self.data[base + (i - j)].abs();
                y[i] += v * xj;
                y[j] += v * x[i].abs();
            }
        }
        y.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// In-place congruence A ← D A D for a diagonal matrix D.
    pub fn scale_sym(&mut self, d: &[f64]) {
        assert_eq!(d.len(), self.n);
        for j in 0..self.n {
            let hi = (j + self.bw).min(self.n - 1);
            for i in j..=hi {
                let at = self.idx(i, j);
                self.data[at] *= d[i] * d[j];
            }
        }
    }

    /// Returns A − σ B where B is diagonal (identity when `None`).
    pub fn shifted(&self, sigma: f64, diag: Option<&[f64]>) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            let b = diag.map_or(1.0, |d| d[i]);
            let at = out.idx(i, i);
            out.data[at] -= sigma * b;
        }
        out
    }

    /// Largest absolute diagonal entry; used as the matrix scale.
    pub fn diag_scale(&self) -> f64 {
        (0..self.n)
            .map(|i| self.data[self.idx(i, i)].abs())
            .fold(0.0, f64::max)
    }

    /// LDLᵀ factorization without pivoting. Works for indefinite matrices;
    /// exact zero pivots are perturbed and flagged through `min_abs_pivot`.
    pub fn factor_ldlt(&self) -> BandedLdlt {
        let n = self.n;
        let bw = self.bw;
        let w = bw + 1;
        let mut l = self.data.clone();
        let mut d = vec![0.0; n];
        let scale = self.diag_scale().max(f64::MIN_POSITIVE);
        let mut num_negative = 0;
        let mut min_abs_pivot = f64::INFINITY;

        for j in 0..n {
            let k_lo = j.saturating_sub(bw);
            let mut dj = l[j * w];
            for k in k_lo..j {
                let ljk = l[k * w + (j - k)];
                dj -= ljk * ljk * d[k];
            }
            if dj == 0.0 {
                dj = scale * 1e-300_f64.max(f64::EPSILON * f64::EPSILON);
            }
            d[j] = dj;
            if dj < 0.0 {
                num_negative += 1;
            }
            min_abs_pivot = min_abs_pivot.min(dj.abs());

            let hi = (j + bw).min(n - 1);
            for i in (j + 1)..=hi {
                let mut s = l[j * w + (i - j)];
                let k_lo_i = i.saturating_sub(bw).max(k_lo);
                for k in k_lo_i..j {
                    s -= l[k * w + (i - k)] * l[k * w + (j - k)] * d[k];
                }
                l[j * w + (i - j)] = s / dj;
            }
            l[j * w] = 1.0;
        }

        BandedLdlt {
            n,
            bw,
            l,
            d,
            num_negative,
            min_abs_pivot,
            scale,
        }
    }
}

/// Banded LDLᵀ factors.
#[derive(Debug, Clone)]
pub struct BandedLdlt {
    n: usize,
    bw: usize,
    l: Vec<f64>,
    d: Vec<f64>,
    num_negative: usize,
    min_abs_pivot: f64,
    scale: f64,
}

impl BandedLdlt {
    /// Number of negative pivots = number of eigenvalues below the shift.
    pub fn num_negative_pivots(&self) -> usize {
        self.num_negative
    }

    pub fn is_near_singular(&self) -> bool {
        self.min_abs_pivot <= 1e-14 * self.scale
    }

    pub fn min_abs_pivot(&self) -> f64 {
        self.min_abs_pivot
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        let w = self.bw + 1;
        // forward: L y = b
        for j in 0..self.n {
            let xj = x[j];
            let hi = (j + self.bw).min(self.n - 1);
            for i in (j + 1)..=hi {
                x[i] -= self.l[j * w + (i - j)] * xj;
            }
        }
        // diagonal
        for j in 0..self.n {
            x[j] /= self.d[j];
        }
        // backward: Lᵀ z = y
        for j in (0..self.n).rev() {
            let hi = (j + self.bw).min(self.n - 1);
            let mut s = x[j];
            for i in (j + 1)..=hi {
                s -= self.l[j * w + (i - j)] * x[i];
            }
            x[j] = s;
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }
}

/// Options for [`lowest_eigenpairs`].
#[derive(Debug, Clone)]
pub struct EigenOptions {
    /// Below this size the problem is solved densely.
    pub dense_threshold: usize,
    /// Relative residual ‖Ax − λx‖/‖Ax‖ accepted for an eigenpair.
    pub residual_tol: f64,
    /// Lanczos restarts before giving up.
    pub max_restarts: usize,
    /// Seed for Lanczos start vectors.
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            dense_threshold: 2000,
            residual_tol: 1e-9,
            max_restarts: 10,
            seed: 0x5eed,
        }
    }
}

/// Computes the `k` algebraically smallest eigenpairs of a symmetric banded
/// matrix, sorted ascending. Eigenvectors have unit Euclidean norm with the
/// largest-magnitude component positive.
///
/// Shift-invert Lanczos about zero is the primary path at every size; it
/// stays accurate when the matrix spans many orders of magnitude (as the
/// pseudo-mass congruence does). The dense decomposition is a fallback for
/// small systems where the iteration gives up.
pub fn lowest_eigenpairs(
    a: &BandedSym,
    k: usize,
    opts: &EigenOptions,
) -> Result<Vec<(f64, DVector<f64>)>> {
    let n = a.n();
    let k = k.min(n);
    if k == 0 {
        return Ok(Vec::new());
    }
    match shift_invert_lanczos(a, k, opts) {
        Ok(pairs) => Ok(pairs),
        Err(err) => {
            if n <= opts.dense_threshold {
                Ok(dense_refined(a, k, opts))
            } else {
                Err(err)
            }
        }
    }
}

/// Dense decomposition followed by block inverse-iteration refinement. The
/// raw dense pass loses the small eigenvalues of badly scaled matrices to
/// roundoff at the matrix norm; one or two passes through A⁻¹ restore them.
fn dense_refined(a: &BandedSym, k: usize, opts: &EigenOptions) -> Vec<(f64, DVector<f64>)> {
    let n = a.n();
    let k_aux = (k + 10).min(n);
    let mut pairs = dense_lowest(a, k_aux);
    let factor = a.factor_ldlt();
    let mut buf = vec![0.0; n];
    let mut worst = |pairs: &[(f64, DVector<f64>)]| -> f64 {
        let mut w = 0.0_f64;
        for (lam, x) in pairs.iter().take(k) {
            a.mul_vec(x.as_slice(), &mut buf);
            let ax = DVector::from_column_slice(&buf);
            let res = (&ax - x * *lam).norm();
            let floor = 32.0 * f64::EPSILON * a.mul_abs_norm(x.as_slice());
            w = w.max((res - floor) / ax.norm().max(1e-300));
        }
        w
    };
    for _ in 0..6 {
        if worst(&pairs) <= opts.residual_tol {
            break;
        }
        let vecs: Vec<DVector<f64>> = pairs.iter().map(|(_, v)| v.clone()).collect();
        match block_refine(a, &factor, &vecs) {
            Some(better) => pairs = better,
            None => break,
        }
    }
    pairs.truncate(k);
    for (_, v) in pairs.iter_mut() {
        fix_sign(v);
    }
    pairs
}

/// One block Rayleigh-Ritz pass through A⁻¹: applies the shift-inverted
/// operator to every vector, orthonormalizes, projects A onto the refreshed
/// subspace and solves the small eigenproblem. Returns ascending pairs.
fn block_refine(
    a: &BandedSym,
    factor: &BandedLdlt,
    vecs: &[DVector<f64>],
) -> Option<Vec<(f64, DVector<f64>)>> {
    let n = a.n();
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(vecs.len());
    for x in vecs {
        let mut z = factor.solve_vec(x);
        if !z.iter().all(|v| v.is_finite()) {
            return None;
        }
        orthogonalize(&mut z, q.iter());
        orthogonalize(&mut z, q.iter());
        let nz = z.norm();
        if nz < 1e-12 {
            continue;
        }
        q.push(z / nz);
    }
    let m = q.len();
    if m == 0 {
        return None;
    }
    let mut aq: Vec<DVector<f64>> = Vec::with_capacity(m);
    let mut buf = vec![0.0; n];
    for qi in &q {
        a.mul_vec(qi.as_slice(), &mut buf);
        aq.push(DVector::from_column_slice(&buf));
    }
    let mut proj = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = 0.5 * (q[i].dot(&aq[j]) + q[j].dot(&aq[i]));
            proj[(i, j)] = v;
            proj[(j, i)] = v;
        }
    }
    let pe = proj.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| pe.eigenvalues[i].total_cmp(&pe.eigenvalues[j]));
    let mut refined = Vec::with_capacity(m);
    for &i in &order {
        let mut x = DVector::zeros(n);
        for (j, qj) in q.iter().enumerate() {
            x.axpy(pe.eigenvectors[(j, i)], qj, 1.0);
        }
        let nx = x.norm();
        if nx < 1e-12 {
            return None;
        }
        x /= nx;
        fix_sign(&mut x);
        refined.push((pe.eigenvalues[i], x));
    }
    Some(refined)
}

fn dense_lowest(a: &BandedSym, k: usize) -> Vec<(f64, DVector<f64>)> {
    let m = a.to_dense();
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..a.n()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    order
        .iter()
        .take(k)
        .map(|&i| {
            let mut v: DVector<f64> = eig.eigenvectors.column(i).into();
            fix_sign(&mut v);
            (eig.eigenvalues[i], v)
        })
        .collect()
}

/// Makes the largest-magnitude component positive (deterministic sign).
pub fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0usize;
    let mut mag = 0.0;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > mag {
            mag = x.abs();
            best = i;
        }
    }
    if v[best] < 0.0 {
        *v *= -1.0;
    }
}

/// Shift-invert Lanczos about zero with full reorthogonalization, locking of
/// converged pairs across restarts, block Rayleigh-Ritz polish, and an
/// inertia certificate: the count of eigenvalues below a probe shift (from a
/// second LDLᵀ) must match the number found, otherwise the subspace is
/// enlarged.
fn shift_invert_lanczos(
    a: &BandedSym,
    k: usize,
    opts: &EigenOptions,
) -> Result<Vec<(f64, DVector<f64>)>> {
    let n = a.n();
    let factor = a.factor_ldlt();
    let total_below_zero = factor.num_negative_pivots();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut locked: Vec<(f64, DVector<f64>)> = Vec::new();
    let mut subspace = (2 * k + 30).min(n);

    for _restart in 0..opts.max_restarts {
        let mut v_prev: Option<DVector<f64>> = None;
        let mut v = random_unit(&mut rng, n);
        orthogonalize(&mut v, locked.iter().map(|(_, q)| q));
        let nrm = v.norm();
        if nrm < 1e-12 {
            v = random_unit(&mut rng, n);
        } else {
            v /= nrm;
        }

        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(subspace);
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();

        for _j in 0..subspace {
            basis.push(v.clone());
            let mut w = factor.solve_vec(&v);
            if !w.iter().all(|x| x.is_finite()) {
                return Err(Error::EigenNonConvergence(
                    "shift-invert apply produced non-finite values (singular matrix)".into(),
                ));
            }
            orthogonalize(&mut w, locked.iter().map(|(_, q)| q));
            if let Some(vp) = &v_prev {
                w.axpy(-betas[betas.len() - 1], vp, 1.0);
            }
            let alpha = v.dot(&w);
            w.axpy(-alpha, &v, 1.0);
            // two passes of full reorthogonalization
            for _ in 0..2 {
                orthogonalize(&mut w, basis.iter());
            }
            alphas.push(alpha);
            let beta = w.norm();
            if beta < 1e-13 {
                break;
            }
            betas.push(beta);
            v_prev = Some(v);
            v = w / beta;
        }

        let m = alphas.len();
        if m == 0 {
            continue;
        }
        // tridiagonal Ritz decomposition of the inverted operator
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alphas[i];
            if i + 1 < m {
                t[(i + 1, i)] = betas[i];
                t[(i, i + 1)] = betas[i];
            }
        }
        let te = t.symmetric_eigen();
        for i in 0..m {
            let theta = te.eigenvalues[i];
            if theta.abs() < 1e-300 {
                continue;
            }
            let y = te.eigenvectors.column(i);
            let tail = if m == betas.len() + 1 && !betas.is_empty() {
                (betas[m - 2] * y[m - 1]).abs()
            } else {
                0.0
            };
            // loose lock criterion; the polish pass tightens accuracy
            if tail > 1e-6 * theta.abs().max(1e-30) {
                continue;
            }
            let mut x = DVector::zeros(n);
            for (j, b) in basis.iter().enumerate() {
                x.axpy(y[j], b, 1.0);
            }
            orthogonalize(&mut x, locked.iter().map(|(_, q)| q));
            let nx = x.norm();
            if nx < 1e-8 {
                continue;
            }
            x /= nx;
            let lambda = 1.0 / theta;
            locked.push((lambda, x));
        }
        locked.sort_by(|p, q| p.0.total_cmp(&q.0));

        if locked.len() >= (k + 1).min(n) {
            if let Some(pairs) = certify_and_polish(a, &factor, &mut locked, k, total_below_zero, opts)
            {
                return Ok(pairs);
            }
        }
        subspace = (subspace + subspace / 2).min(n);
    }

    Err(Error::EigenNonConvergence(format!(
        "{} of {} requested eigenpairs after {} restarts",
        locked.len().min(k),
        k,
        opts.max_restarts
    )))
}

/// One block Rayleigh-Ritz pass through A⁻¹ over the locked vectors, then
/// residual checks and the inertia certificate for the first k eigenvalues.
fn certify_and_polish(
    a: &BandedSym,
    factor: &BandedLdlt,
    locked: &mut Vec<(f64, DVector<f64>)>,
    k: usize,
    total_below_zero: usize,
    opts: &EigenOptions,
) -> Option<Vec<(f64, DVector<f64>)>> {
    let n = a.n();
    let vecs: Vec<DVector<f64>> = locked.iter().map(|(_, v)| v.clone()).collect();
    let mut refined = block_refine(a, factor, &vecs)?;
    if refined.len() < (k + 1).min(n) {
        *locked = refined;
        return None;
    }

    // per-pair residuals; for a symmetric matrix they also bound the
    // eigenvalue error |λ − λ̂| ≤ ‖Ax − λ̂x‖
    let mut buf = vec![0.0; n];
    let mut errs = Vec::with_capacity(refined.len());
    for (lam, x) in &refined {
        a.mul_vec(x.as_slice(), &mut buf);
        let ax = DVector::from_column_slice(&buf);
        errs.push((&ax - x * *lam).norm());
    }

    // residual acceptance on the first k; the floor term is the roundoff
    // incurred just evaluating Ax when ‖Ax‖ ≪ ‖|A||x|‖
    for ((lam, x), res) in refined.iter().take(k).zip(&errs) {
        let floor = 32.0 * f64::EPSILON * a.mul_abs_norm(x.as_slice());
        if *res > opts.residual_tol * (lam.abs() * x.norm()).max(1e-300) + floor {
            *locked = refined;
            return None;
        }
    }

    // whole spectrum computed: nothing can be missing
    if k == n && refined.len() == n {
        return Some(refined);
    }

    // inertia certificate for the first k
    let vals: Vec<f64> = refined.iter().map(|p| p.0).collect();
    let Some((idx, probe)) = first_gap_probe(&vals, &errs, k) else {
        *locked = refined;
        return None;
    };
    let counted = a.shifted(probe, None).factor_ldlt().num_negative_pivots();
    let neg_found = vals.iter().take(idx + 1).filter(|&&v| v < 0.0).count();
    if counted == idx + 1 && neg_found >= total_below_zero.min(idx + 1) {
        refined.truncate(k);
        Some(refined)
    } else {
        *locked = refined;
        None
    }
}

/// Picks the first gap at or after index `k - 1` that is wide enough to place
/// a trustworthy inertia probe: the gap must dominate both the relative
/// resolution and the eigenvalue uncertainties of its two endpoints.
fn first_gap_probe(vals: &[f64], errs: &[f64], k: usize) -> Option<(usize, f64)> {
    for j in (k - 1)..vals.len() - 1 {
        let mag = vals[j].abs().max(vals[j + 1].abs()).max(1e-300);
        let need = (1e-9 * mag).max(8.0 * (errs[j] + errs[j + 1]));
        if vals[j + 1] - vals[j] > need {
            return Some((j, 0.5 * (vals[j] + vals[j + 1])));
        }
    }
    None
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let mut v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let nrm = v.norm();
    if nrm > 0.0 {
        v /= nrm;
    }
    v
}

fn orthogonalize<'a>(v: &mut DVector<f64>, basis: impl Iterator<Item = &'a DVector<f64>>) {
    for q in basis {
        let c = q.dot(v);
        if c != 0.0 {
            v.axpy(-c, q, 1.0);
        }
    }
}

/// Dense symmetric eigendecomposition, eigenvalues ascending.
pub fn dense_sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, Vec<DVector<f64>>) {
    let eig = m.clone().symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = order
        .iter()
        .map(|&i| {
            let mut v: DVector<f64> = eig.eigenvectors.column(i).into();
            fix_sign(&mut v);
            v
        })
        .collect();
    (vals, vecs)
}
