//! Dense complex linear algebra helpers shared across the crate.
//!
//! Everything here operates on small (dim ≤ ~16) matrices, so the
//! implementations favour robustness and determinism over scalability:
//! Hermitian eigendecompositions are sorted ascending with a fixed tie
//! order, matrix exponentials of Hermitian generators go through the
//! eigendecomposition (exactly unitary up to roundoff), and the operator
//! 2-norm is the square root of the largest eigenvalue of `A†A`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{CoreError, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn identity(dim: usize) -> CMat {
    CMat::identity(dim, dim)
}

/// Largest entry modulus.
pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0f64, |m, z| m.max(z.norm()))
}

pub fn max_abs_vec(v: &CVec) -> f64 {
    v.iter().fold(0.0f64, |m, z| m.max(z.norm()))
}

/// `max_abs(A - A†)`.
pub fn hermiticity_residual(a: &CMat) -> f64 {
    max_abs(&(a - a.adjoint()))
}

/// `max_abs(U†U - I)`.
pub fn unitarity_residual(u: &CMat) -> f64 {
    max_abs(&(u.adjoint() * u - identity(u.nrows())))
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

/// Operator 2-norm (largest singular value) via the Hermitian spectrum of `A†A`.
pub fn op_norm(a: &CMat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let gram = a.adjoint() * a;
    let (vals, _) = match hermitian_eigen(&gram) {
        Ok(v) => v,
        // Gram matrices of finite inputs are tame; treat a convergence
        // failure as a max-abs fallback rather than poisoning the caller.
        Err(_) => return max_abs(a) * (a.nrows() as f64),
    };
    vals.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
///
/// The input is symmetrised (`(A + A†)/2`) so callers may pass matrices that
/// are Hermitian only up to roundoff. Returns `(eigenvalues, eigenvectors)`
/// with eigenvectors in the columns, ordered like the eigenvalues.
pub fn hermitian_eigen(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    let sym = (a + a.adjoint()).scale(0.5);
    let eig = nalgebra::SymmetricEigen::try_new(sym, f64::EPSILON, 0).ok_or_else(|| {
        CoreError::Numerical("hermitian eigendecomposition did not converge".into())
    })?;
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(i));
    }
    Ok((vals, vecs))
}

/// `exp(-i s G)` for Hermitian `G`, unitary by construction.
pub fn exp_neg_i_hermitian(g: &CMat, s: f64) -> Result<CMat> {
    let (vals, vecs) = hermitian_eigen(g)?;
    let phases = CVec::from_iterator(
        vals.len(),
        vals.iter().map(|&l| Complex64::from_polar(1.0, -s * l)),
    );
    Ok(&vecs * CMat::from_diagonal(&phases) * vecs.adjoint())
}

/// Inverse of a general complex matrix (LU).
pub fn inverse(a: &CMat) -> Result<CMat> {
    a.clone()
        .try_inverse()
        .ok_or_else(|| CoreError::Numerical("singular matrix in inverse".into()))
}

/// Orthogonal projector `Σ_r |v_r><v_r|` onto the span of the given vectors.
pub fn projector_onto(vecs: &[CVec]) -> CMat {
    let dim = vecs.first().map(|v| v.len()).unwrap_or(0);
    let mut p = CMat::zeros(dim, dim);
    for v in vecs {
        p += v * v.adjoint();
    }
    p
}

pub fn inner(a: &CVec, b: &CVec) -> Complex64 {
    a.dotc(b)
}

/// Largest deviation of `<v_r|v_s>` from `δ_rs`.
pub fn orthonormality_residual(vecs: &[CVec]) -> f64 {
    let mut worst = 0.0f64;
    for (r, vr) in vecs.iter().enumerate() {
        for (s, vs) in vecs.iter().enumerate() {
            let target = if r == s { ONE } else { ZERO };
            worst = worst.max((inner(vr, vs) - target).norm());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// finite-difference stencils on matrix-valued functions
// ---------------------------------------------------------------------------

/// Fourth-order central first derivative: `(-f(+2h) + 8f(+h) - 8f(-h) + f(-2h))`
/// is the conventional numerator; written out with signs below.
pub fn fd1_central4<F>(f: F, x: f64, h: f64) -> Result<CMat>
where
    F: Fn(f64) -> Result<CMat>,
{
    let fm2 = f(x - 2.0 * h)?;
    let fm1 = f(x - h)?;
    let fp1 = f(x + h)?;
    let fp2 = f(x + 2.0 * h)?;
    Ok((fm2 - fm1.scale(8.0) + fp1.scale(8.0) - fp2).scale(1.0 / (12.0 * h)))
}

/// One-sided 4-point first derivative (third order), stepping in `sign * h`.
pub fn fd1_onesided4<F>(f: F, x: f64, h: f64, sign: f64) -> Result<CMat>
where
    F: Fn(f64) -> Result<CMat>,
{
    let s = sign.signum();
    let f0 = f(x)?;
    let f1 = f(x + s * h)?;
    let f2 = f(x + 2.0 * s * h)?;
    let f3 = f(x + 3.0 * s * h)?;
    Ok((f0.scale(-11.0) + f1.scale(18.0) - f2.scale(9.0) + f3.scale(2.0)).scale(s / (6.0 * h)))
}

/// Fourth-order central second derivative.
pub fn fd2_central4<F>(f: F, x: f64, h: f64) -> Result<CMat>
where
    F: Fn(f64) -> Result<CMat>,
{
    let fm2 = f(x - 2.0 * h)?;
    let fm1 = f(x - h)?;
    let f0 = f(x)?;
    let fp1 = f(x + h)?;
    let fp2 = f(x + 2.0 * h)?;
    Ok(
        (-fm2 + fm1.scale(16.0) - f0.scale(30.0) + fp1.scale(16.0) - fp2)
            .scale(1.0 / (12.0 * h * h)),
    )
}

/// Fourth-order first derivative of samples on a uniform grid, index `k`.
///
/// Interior points use the central stencil; the first/last two points use
/// one-sided 5-point stencils of the same order. With `periodic` set the
/// stencil wraps (samples must then satisfy `f[n-1] = f[0]`).
pub fn fd1_grid4(samples: &[CMat], h: f64, k: usize, periodic: bool) -> CMat {
    let n = samples.len();
    assert!(
        n >= 6,
        "need at least 6 samples for 4th-order grid stencils"
    );
    let at = |j: isize| -> &CMat {
        if periodic {
            // identify index n-1 with index 0
            let m = (n - 1) as isize;
            let mut t = j % m;
            if t < 0 {
                t += m;
            }
            &samples[t as usize]
        } else {
            &samples[j as usize]
        }
    };
    let kk = k as isize;
    if periodic || (k >= 2 && k + 2 < n) {
        (at(kk - 2) - at(kk - 1).scale(8.0) + at(kk + 1).scale(8.0) - at(kk + 2))
            .scale(1.0 / (12.0 * h))
    } else if k < 2 {
        // forward 5-point, 4th order
        (at(kk).scale(-25.0) + at(kk + 1).scale(48.0) - at(kk + 2).scale(36.0)
            + at(kk + 3).scale(16.0)
            - at(kk + 4).scale(3.0))
        .scale(1.0 / (12.0 * h))
    } else {
        (at(kk).scale(25.0) - at(kk - 1).scale(48.0) + at(kk - 2).scale(36.0)
            - at(kk - 3).scale(16.0)
            + at(kk - 4).scale(3.0))
        .scale(1.0 / (12.0 * h))
    }
}

// ---------------------------------------------------------------------------
// quadrature
// ---------------------------------------------------------------------------

/// Composite Simpson weights for `n` uniform nodes (`n` odd), step `h`.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 3 && n % 2 == 1, "Simpson needs an odd node count");
    let mut w = vec![0.0; n];
    for k in 0..n {
        w[k] = if k == 0 || k == n - 1 {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        } * h
            / 3.0;
    }
    w
}

pub fn simpson_scalar(samples: &[f64], h: f64) -> f64 {
    let w = simpson_weights(samples.len(), h);
    samples.iter().zip(w.iter()).map(|(f, w)| f * w).sum()
}

pub fn simpson_matrix(samples: &[CMat], h: f64) -> CMat {
    let w = simpson_weights(samples.len(), h);
    let mut acc = CMat::zeros(samples[0].nrows(), samples[0].ncols());
    for (f, w) in samples.iter().zip(w.iter()) {
        acc += f.scale(*w);
    }
    acc
}

// ---------------------------------------------------------------------------
// local polynomial interpolation on uniform grids
// ---------------------------------------------------------------------------

/// Six-point Lagrange interpolation of matrix samples on the uniform grid
/// `x_i = x0 + i h`. Exact for quintics; interpolation error decays like h^6.
pub fn lagrange6(samples: &[CMat], x0: f64, h: f64, x: f64) -> CMat {
    let n = samples.len();
    assert!(n >= 6);
    let pos = (x - x0) / h;
    let mut i0 = pos.floor() as isize - 2;
    i0 = i0.clamp(0, (n - 6) as isize);
    let i0 = i0 as usize;
    let mut out = CMat::zeros(samples[0].nrows(), samples[0].ncols());
    for j in 0..6 {
        let xj = (i0 + j) as f64;
        let mut w = 1.0;
        for m in 0..6 {
            if m != j {
                let xm = (i0 + m) as f64;
                w *= (pos - xm) / (xj - xm);
            }
        }
        out += samples[i0 + j].scale(w);
    }
    out
}

pub fn uniform_grid(n_points: usize) -> Vec<f64> {
    assert!(n_points >= 2);
    let h = 1.0 / (n_points - 1) as f64;
    (0..n_points).map(|k| k as f64 * h).collect()
}
