//! Regularized neo-Hookean constitutive kernels for plane strain, SIMP
//! property interpolation, and the linear-energy-interpolation weight.
//!
//! The free energy is ψ(C) = κ/2 (J−1)² + μ/2 (Ī₁ − 3) with Ī₁ = J^{-2/3} tr C.
//! Plane strain embeds the in-plane 2×2 deformation gradient into 3×3 with
//! unit out-of-plane stretch; stress and moduli are evaluated in 3D and then
//! restricted to their in-plane components.
//!
//! Flattening convention (column-major on 2×2 index pairs):
//! `(i, j) → 2 j + i`, i.e. order `[11, 21, 12, 22]`. Fourth-order moduli are
//! 4×4 matrices, the sixth-order modulus derivative is a 16×4 matrix with row
//! `4·(ij) + (kl)` and column `(pq)`.

use nalgebra::{Matrix2, Matrix3, SMatrix};

use crate::error::{Error, Result};

/// Fourth-order in-plane tensor in flattened 4×4 form.
pub type Tangent4 = SMatrix<f64, 4, 4>;
/// Sixth-order in-plane tensor in flattened 16×4 form.
pub type Tangent6 = SMatrix<f64, 16, 4>;

#[inline]
pub fn flat(i: usize, j: usize) -> usize {
    2 * j + i
}

/// Kinematic quantities at a material point.
#[derive(Debug, Clone)]
pub struct MaterialPoint {
    /// In-plane deformation gradient.
    pub f: Matrix2<f64>,
    /// Determinant of the embedded 3×3 gradient (equals det of the 2×2 block).
    pub j: f64,
    /// Right Cauchy-Green tensor of the embedded gradient.
    pub c: Matrix3<f64>,
    /// Modified first invariant Ī₁ = J^{-2/3} tr C.
    pub i1_bar: f64,
}

impl MaterialPoint {
    pub fn new(f: Matrix2<f64>) -> Result<Self> {
        let j = f.determinant();
        if j <= 0.0 {
            return Err(Error::SingularConfiguration { det: j });
        }
        let f3 = embed(&f);
        let c = f3.transpose() * f3;
        let i1_bar = j.powf(-2.0 / 3.0) * c.trace();
        Ok(Self { f, j, c, i1_bar })
    }
}

#[inline]
pub fn embed(f: &Matrix2<f64>) -> Matrix3<f64> {
    Matrix3::new(
        f[(0, 0)],
        f[(0, 1)],
        0.0,
        f[(1, 0)],
        f[(1, 1)],
        0.0,
        0.0,
        0.0,
        1.0,
    )
}

/// SIMP-interpolated Young's modulus [ε + (1−ε)ρᵖ]E.
#[inline]
pub fn simp_modulus(rho: f64, e: f64, p: f64, eps: f64) -> f64 {
    (eps + (1.0 - eps) * rho.powf(p)) * e
}

/// Derivative of [`simp_modulus`] w.r.t. ρ.
#[inline]
pub fn simp_modulus_derivative(rho: f64, e: f64, p: f64, eps: f64) -> f64 {
    if p == 1.0 {
        (1.0 - eps) * e
    } else {
        p * (1.0 - eps) * rho.powf(p - 1.0) * e
    }
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Energy-interpolation weight η = exp(βρ)/(exp(cβ) + exp(βρ)).
///
/// Evaluated in logistic form 1/(1 + exp(β(c−ρ))) so that β ≈ 120 cannot
/// overflow.
#[inline]
pub fn energy_weight(rho: f64, beta: f64, c: f64) -> f64 {
    logistic(beta * (rho - c))
}

/// dη/dρ = β η (1 − η), with both factors evaluated in their stable branch.
#[inline]
pub fn energy_weight_derivative(rho: f64, beta: f64, c: f64) -> f64 {
    let x = beta * (rho - c);
    beta * logistic(x) * logistic(-x)
}

/// Bulk modulus κ = E / (3(1 − 2ν)).
#[inline]
pub fn bulk_modulus(e: f64, nu: f64) -> f64 {
    e / (3.0 * (1.0 - 2.0 * nu))
}

/// Shear modulus μ = E / (2(1 + ν)).
#[inline]
pub fn shear_modulus(e: f64, nu: f64) -> f64 {
    e / (2.0 * (1.0 + nu))
}

/// Plane-strain isotropic moduli in Voigt order [ε11, ε22, 2ε12].
pub fn linear_moduli_voigt(e: f64, nu: f64) -> Matrix3<f64> {
    let lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let g = shear_modulus(e, nu);
    Matrix3::new(
        lam + 2.0 * g,
        lam,
        0.0,
        lam,
        lam + 2.0 * g,
        0.0,
        0.0,
        0.0,
        g,
    )
}

/// Free energy density ψ of the regularized neo-Hookean model.
pub fn strain_energy(f: &Matrix2<f64>, kappa: f64, mu: f64) -> Result<f64> {
    let mp = MaterialPoint::new(*f)?;
    Ok(0.5 * kappa * (mp.j - 1.0) * (mp.j - 1.0) + 0.5 * mu * (mp.i1_bar - 3.0))
}

struct Kinematics {
    f3: Matrix3<f64>,
    finv: Matrix3<f64>,
    j: f64,
    i1_bar: f64,
}

fn kinematics(f: &Matrix2<f64>) -> Result<Kinematics> {
    let j = f.determinant();
    if j <= 0.0 {
        return Err(Error::SingularConfiguration { det: j });
    }
    let f3 = embed(f);
    let finv = Matrix3::new(
        f[(1, 1)] / j,
        -f[(0, 1)] / j,
        0.0,
        -f[(1, 0)] / j,
        f[(0, 0)] / j,
        0.0,
        0.0,
        0.0,
        1.0,
    );
    let i1_bar = j.powf(-2.0 / 3.0) * (f3.transpose() * f3).trace();
    Ok(Kinematics { f3, finv, j, i1_bar })
}

/// First Piola-Kirchhoff stress, in-plane block.
///
/// P = κ(J−1)J F⁻ᵀ + (μ/2)(−(2/3)Ī₁ F⁻ᵀ + 2 J^{-2/3} F).
pub fn pk1_stress(f: &Matrix2<f64>, kappa: f64, mu: f64) -> Result<Matrix2<f64>> {
    let k = kinematics(f)?;
    let jm23 = k.j.powf(-2.0 / 3.0);
    let vol = kappa * (k.j - 1.0) * k.j;
    let mut p = Matrix2::zeros();
    for i in 0..2 {
        for jj in 0..2 {
            let ft = k.finv[(jj, i)];
            p[(i, jj)] = vol * ft + 0.5 * mu * (-2.0 / 3.0 * k.i1_bar * ft + 2.0 * jm23 * k.f3[(i, jj)]);
        }
    }
    Ok(p)
}

/// Tangent modulus 𝔸 = ∂²ψ/∂F∂F, restricted to in-plane components (4×4).
pub fn tangent_moduli(f: &Matrix2<f64>, kappa: f64, mu: f64) -> Result<Tangent4> {
    let k = kinematics(f)?;
    let jm23 = k.j.powf(-2.0 / 3.0);
    let mut a = Tangent4::zeros();
    // ∂Ī₁/∂F (in-plane entries needed only)
    let y = |i: usize, j: usize| -> f64 {
        -2.0 / 3.0 * k.i1_bar * k.finv[(j, i)] + 2.0 * jm23 * k.f3[(i, j)]
    };
    let c1 = kappa * (k.j - 1.0) * k.j;
    let c2 = kappa * (2.0 * k.j - 1.0) * k.j;
    for i in 0..2 {
        for j in 0..2 {
            let ft_ij = k.finv[(j, i)];
            for kk in 0..2 {
                for l in 0..2 {
                    let ft_kl = k.finv[(l, kk)];
                    // (∂F⁻ᵀ/∂F)_{ijkl} = −F⁻¹_{li} F⁻¹_{jk}
                    let dft = -k.finv[(l, i)] * k.finv[(j, kk)];
                    let i4 = if i == kk && j == l { 1.0 } else { 0.0 };
                    let val = c1 * dft + c2 * ft_ij * ft_kl
                        + 0.5
                            * mu
                            * (-2.0 / 3.0 * k.i1_bar * dft - 2.0 / 3.0 * ft_ij * y(kk, l)
                                + 2.0 * jm23 * i4
                                - 4.0 / 3.0 * jm23 * k.f3[(i, j)] * ft_kl);
                    a[(flat(i, j), flat(kk, l))] = val;
                }
            }
        }
    }
    Ok(a)
}

/// ∂𝔸/∂F restricted to in-plane components, flattened 16×4.
pub fn tangent_moduli_derivative(f: &Matrix2<f64>, kappa: f64, mu: f64) -> Result<Tangent6> {
    let k = kinematics(f)?;
    let jm23 = k.j.powf(-2.0 / 3.0);
    let fi = &k.finv;
    let ft = |i: usize, j: usize| fi[(j, i)];
    let y = |i: usize, j: usize| -2.0 / 3.0 * k.i1_bar * ft(i, j) + 2.0 * jm23 * k.f3[(i, j)];
    let dft = |i: usize, j: usize, kk: usize, l: usize| -fi[(l, i)] * fi[(j, kk)];
    // ∂²Ī₁/∂F∂F
    let y2 = |kk: usize, l: usize, p: usize, q: usize| {
        let i4 = if kk == p && l == q { 1.0 } else { 0.0 };
        -2.0 / 3.0 * ft(kk, l) * y(p, q) - 2.0 / 3.0 * k.i1_bar * dft(kk, l, p, q)
            - 4.0 / 3.0 * jm23 * k.f3[(kk, l)] * ft(p, q)
            + 2.0 * jm23 * i4
    };

    let c1 = kappa * (2.0 * k.j - 1.0) * k.j;
    let c2 = kappa * (k.j - 1.0) * k.j;
    let c3 = kappa * (4.0 * k.j - 1.0) * k.j;

    let mut out = Tangent6::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for kk in 0..2 {
                for l in 0..2 {
                    let row = 4 * flat(i, j) + flat(kk, l);
                    for p in 0..2 {
                        for q in 0..2 {
                            // second derivative of F⁻ᵀ
                            let d2ft = fi[(q, i)] * fi[(l, p)] * fi[(j, kk)]
                                + fi[(q, kk)] * fi[(j, p)] * fi[(l, i)];
                            // ∂(F⁻ᵀ ⊗ F⁻ᵀ)/∂F
                            let dww = -fi[(q, i)] * fi[(j, p)] * fi[(l, kk)]
                                - fi[(q, kk)] * fi[(l, p)] * fi[(j, i)];
                            // ∂(F ⊗ F⁻ᵀ)/∂F
                            let dfw = {
                                let d = if i == p && j == q { ft(kk, l) } else { 0.0 };
                                d - k.f3[(i, j)] * fi[(q, kk)] * fi[(l, p)]
                            };
                            let i4 = if i == kk && j == l { 1.0 } else { 0.0 };

                            let val = c1 * dft(i, j, kk, l) * ft(p, q)
                                + c2 * d2ft
                                + c3 * ft(i, j) * ft(kk, l) * ft(p, q)
                                + c1 * dww
                                - mu / 3.0 * dft(i, j, kk, l) * y(p, q)
                                - mu / 3.0 * k.i1_bar * d2ft
                                - mu / 3.0 * ft(i, j) * y2(kk, l, p, q)
                                - mu / 3.0 * dft(i, j, p, q) * y(kk, l)
                                - 2.0 / 3.0 * mu * jm23 * i4 * ft(p, q)
                                + 4.0 / 9.0 * mu * jm23 * k.f3[(i, j)] * ft(kk, l) * ft(p, q)
                                - 2.0 / 3.0 * mu * jm23 * dfw;
                            out[(row, flat(p, q))] = val;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Density-interpolated element properties for one evaluation.
#[derive(Debug, Clone)]
pub struct InterpolatedProperties {
    /// E(ρ) with exponent p (finite-strain branch).
    pub e: f64,
    pub de: f64,
    pub kappa: f64,
    pub mu: f64,
    /// E(ρ) with exponent p_L (small-strain branch).
    pub e_lin: f64,
    pub de_lin: f64,
    /// Plane-strain Voigt moduli built from `e_lin`.
    pub c_voigt: Matrix3<f64>,
    pub eta: f64,
    pub deta: f64,
}

impl InterpolatedProperties {
    /// Interpolates all element properties at density ρ.
    pub fn at(
        rho: f64,
        e0: f64,
        nu: f64,
        p: f64,
        p_l: f64,
        eps: f64,
        beta: f64,
        c: f64,
    ) -> Self {
        let e = simp_modulus(rho, e0, p, eps);
        let de = simp_modulus_derivative(rho, e0, p, eps);
        let e_lin = simp_modulus(rho, e0, p_l, eps);
        let de_lin = simp_modulus_derivative(rho, e0, p_l, eps);
        Self {
            e,
            de,
            kappa: bulk_modulus(e, nu),
            mu: shear_modulus(e, nu),
            e_lin,
            de_lin,
            c_voigt: linear_moduli_voigt(e_lin, nu),
            eta: energy_weight(rho, beta, c),
            deta: energy_weight_derivative(rho, beta, c),
        }
    }
}
