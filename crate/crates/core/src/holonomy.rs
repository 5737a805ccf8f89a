//! Berry phase, non-abelian holonomy and the leading-order pumped charge.
//!
//! For a simple isolated eigenvalue transported around a period, the
//! parallel eigenvector returns to itself up to the phase `e^{-iβ}`; `β` is
//! computed from that overlap and cross-checked against the connection
//! quadrature evaluated on a spectral section built directly from the
//! projector trajectory (two genuinely independent routes: one integrates
//! the transport ODE, the other only touches eigenprojectors).
//!
//! For a degenerate eigenvalue with a chosen time-dependent orthonormal
//! frame `ψ⁽ʳ⁾(t)`, the holonomy `B` solves `Ḃ = Γ B` with
//! `Γ_{sr}(t) = -<ψ⁽ˢ⁾(t)|ψ̇⁽ʳ⁾(t)>`; it relates the frame to the
//! parallel-transported one and enters the matrix elements of the pumped
//! charge over a period.
//!
//! The leading-order charge decomposition is
//! `P(0) Q(t) P(0) ≈ (1/ε)∫ ∂_α E + i W⁻¹(t) ∂_α W(t)` (restricted to
//! `ran P(0)`), with every ∂_α of a derived object taken by central finite
//! differences over deterministic re-runs at `α ± δ_α`.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::evolve::{
    charge_time_quadrature, propagate_transport, ChargeOptions, GeneratorTable, TrajectoryKind,
    UnitaryTrajectory,
};
use crate::linalg::{self, CMat, CVec};
use crate::model::{HamiltonianFamily, SpectralSelector};
use crate::spectral::{riesz_projector, ContourTracker, Projector};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut y = x % tau;
    if y <= -std::f64::consts::PI {
        y += tau;
    } else if y > std::f64::consts::PI {
        y -= tau;
    }
    y
}

/// Distance between two angles modulo 2π.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

// ---------------------------------------------------------------------------
// isolated eigenvalue
// ---------------------------------------------------------------------------

/// The eigenvalue carried by a single-eigenvalue projector:
/// `E = tr(H P) / rank`, with the structure certified by `‖HP - EP‖`.
pub fn isolated_eigenvalue(
    family: &HamiltonianFamily,
    alpha: f64,
    t: f64,
    p: &Projector,
) -> Result<f64> {
    let h = family.evaluate(t, alpha)?;
    isolated_eigenvalue_of(&h, &p.matrix, p.rank)
}

pub(crate) fn isolated_eigenvalue_of(h: &CMat, p: &CMat, rank: usize) -> Result<f64> {
    if rank == 0 {
        return Err(CoreError::Domain("projector has rank zero".into()));
    }
    let e = (h * p).trace().re / rank as f64;
    let residual = linalg::op_norm(&(h * p - p.scale(e)));
    if residual > 1e-6 {
        return Err(CoreError::Structure {
            residual,
            tol: 1e-6,
        });
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Berry phase
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct BerryPhase {
    /// Geometric phase in `(-π, π]`.
    pub beta: f64,
    /// Index of the transported eigenvalue in the sorted spectrum at `t = 0`.
    pub eigen_index: usize,
}

/// Berry phase of a simple eigenvalue over one period.
///
/// Transports `φ(t) = W(t) φ₀`, verifies `<φ|φ̇> ≈ 0` along the grid and
/// `P(1) = P(0)`, reads `β = -arg <φ₀|φ(1)>`, and cross-checks against the
/// discrete connection quadrature on the spectral section.
pub fn berry_phase(
    family: &HamiltonianFamily,
    alpha: f64,
    w: &UnitaryTrajectory,
    phi0: &CVec,
) -> Result<BerryPhase> {
    if w.kind != TrajectoryKind::Transport {
        return Err(CoreError::GridMismatch(
            "berry_phase needs a first-order transport trajectory".into(),
        ));
    }
    let table = w
        .table
        .as_ref()
        .ok_or_else(|| CoreError::GridMismatch("transport trajectory lost its table".into()))?;
    let p0 = table.projector_at_start().clone();
    let rank = p0.trace().re.round() as usize;
    if rank != 1 {
        return Err(CoreError::Degeneracy(format!(
            "berry_phase needs a simple eigenvalue, got rank {rank}"
        )));
    }
    let p_end = table.projector_at(1.0);
    let periodicity = linalg::max_abs(&(&p_end - &p0));
    if periodicity > 1e-8 {
        return Err(CoreError::Periodicity(format!(
            "P(1) differs from P(0) by {periodicity:.3e}"
        )));
    }
    let norm = phi0.norm();
    if (norm - 1.0).abs() > 1e-10 || linalg::max_abs_vec(&(&p0 * phi0 - phi0)) > 1e-8 {
        return Err(CoreError::Domain(
            "phi0 must be normalized and lie in ran P(0)".into(),
        ));
    }

    // transported eigenvector and its flatness <φ|φ̇> ≈ 0
    let transported: Vec<CVec> = w.matrices.iter().map(|m| m * phi0).collect();
    let n = transported.len();
    if n >= 6 {
        let h = w.t_grid[1] - w.t_grid[0];
        let uniform = w
            .t_grid
            .windows(2)
            .all(|win| (win[1] - win[0] - h).abs() < 1e-12);
        if uniform {
            let as_mats: Vec<CMat> = transported
                .iter()
                .map(|v| CMat::from_column_slice(v.len(), 1, v.as_slice()))
                .collect();
            let mut worst = 0.0f64;
            for k in 0..n {
                let dphi = linalg::fd1_grid4(&as_mats, h, k, false);
                let overlap: Complex64 = transported[k].dotc(&dphi.column(0).into_owned());
                worst = worst.max(overlap.norm());
            }
            if worst > 1e-6 {
                return Err(CoreError::Numerical(format!(
                    "transported eigenvector is not flat: <φ|φ̇> residual {worst:.3e}"
                )));
            }
        }
    }

    let overlap = phi0.dotc(transported.last().unwrap());
    if (overlap.norm() - 1.0).abs() > 1e-7 {
        return Err(CoreError::Numerical(format!(
            "|<φ₀|φ(1)>| = {} is not 1; the state left the eigenspace",
            overlap.norm()
        )));
    }
    let beta = wrap_angle(-overlap.arg());

    // independent route: discrete connection quadrature on the spectral
    // section aligned along the projector trajectory
    let beta_quad = berry_phase_quadrature(table, phi0)?;
    if angle_distance(beta, beta_quad) > 1e-6 {
        return Err(CoreError::Numerical(format!(
            "overlap Berry phase {beta:.9} disagrees with quadrature {beta_quad:.9}"
        )));
    }

    // locate the eigenvalue index at t = 0
    let h0 = family.evaluate(0.0, alpha)?;
    let e = isolated_eigenvalue_of(&h0, &p0, 1)?;
    let eigs = linalg::hermitian_eigen(&h0)?.0;
    let eigen_index = eigs
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| (*a - e).abs().partial_cmp(&(*b - e).abs()).unwrap())
        .map(|(k, _)| k)
        .unwrap_or(0);

    Ok(BerryPhase { beta, eigen_index })
}

/// Discrete connection quadrature for the Berry phase, using only the
/// projector trajectory: align a section `u_{k+1} ∝ P(t_{k+1}) u_k`, close
/// the loop, and refine until the phase settles.
fn berry_phase_quadrature(table: &GeneratorTable, phi0: &CVec) -> Result<f64> {
    let eval = |n: usize| -> Result<f64> {
        let h = 1.0 / n as f64;
        let mut u = phi0.clone();
        for k in 1..=n {
            let p = table.projector_at(k as f64 * h);
            let v = &p * &u;
            let norm = v.norm();
            if norm < 1e-8 {
                return Err(CoreError::Numerical(
                    "spectral section collapsed during alignment".into(),
                ));
            }
            u = v.unscale(norm);
        }
        Ok(wrap_angle(-phi0.dotc(&u).arg()))
    };
    let mut n = 2048;
    let mut prev = eval(n)?;
    loop {
        n *= 2;
        if n > 1 << 17 {
            return Err(CoreError::QuadratureNonConvergence(
                "Berry-phase quadrature still moving".into(),
            ));
        }
        let next = eval(n)?;
        if angle_distance(next, prev) < 1e-7 {
            return Ok(next);
        }
        prev = next;
    }
}

// ---------------------------------------------------------------------------
// frames and the non-abelian holonomy
// ---------------------------------------------------------------------------

/// Time-indexed orthonormal frame spanning the tracked eigenspace.
#[derive(Debug, Clone)]
pub struct FrameTrajectory {
    pub t_grid: Vec<f64>,
    /// One set of `N` frame vectors per grid node.
    pub vectors: Vec<Vec<CVec>>,
}

impl FrameTrajectory {
    pub fn from_fn<F>(t_grid: &[f64], f: F) -> Result<Self>
    where
        F: Fn(f64) -> Result<Vec<CVec>>,
    {
        let vectors: Vec<Vec<CVec>> = t_grid.iter().map(|&t| f(t)).collect::<Result<_>>()?;
        Ok(Self {
            t_grid: t_grid.to_vec(),
            vectors,
        })
    }

    /// Frame transported by a unitary trajectory: `ψ⁽ʳ⁾(t_k) = W_k ψ⁽ʳ⁾(0)`.
    pub fn transported(w: &UnitaryTrajectory, initial: &[CVec]) -> Self {
        let vectors = w
            .matrices
            .iter()
            .map(|m| initial.iter().map(|v| m * v).collect())
            .collect();
        Self {
            t_grid: w.t_grid.clone(),
            vectors,
        }
    }

    pub fn rank(&self) -> usize {
        self.vectors.first().map(|v| v.len()).unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.vectors
            .first()
            .and_then(|v| v.first())
            .map(|v| v.len())
            .unwrap_or(0)
    }

    fn as_matrices(&self) -> Vec<CMat> {
        self.vectors
            .iter()
            .map(|vs| {
                let dim = vs[0].len();
                let mut m = CMat::zeros(dim, vs.len());
                for (col, v) in vs.iter().enumerate() {
                    m.set_column(col, v);
                }
                m
            })
            .collect()
    }

    pub fn orthonormality_residual(&self) -> f64 {
        self.vectors
            .iter()
            .map(|vs| linalg::orthonormality_residual(vs))
            .fold(0.0f64, f64::max)
    }

    /// Largest end-to-start frame mismatch (`ψ(1)` vs `ψ(0)`).
    pub fn periodicity_residual(&self) -> f64 {
        let first = self.vectors.first();
        let last = self.vectors.last();
        match (first, last) {
            (Some(f), Some(l)) => f
                .iter()
                .zip(l.iter())
                .map(|(a, b)| linalg::max_abs_vec(&(a - b)))
                .fold(0.0f64, f64::max),
            _ => f64::INFINITY,
        }
    }
}

/// Non-abelian holonomy `Ḃ = Γ B`, `B(0) = I`, with `Γ` from fourth-order
/// finite differences of the frame and the ODE integrated by exponential
/// midpoint on interpolated `Γ`.
#[derive(Debug, Clone)]
pub struct HolonomyMatrix {
    /// `B(1)`, unitary `N×N` in the `ψ(0)` basis.
    pub b: CMat,
    /// The frame at `t = 0`.
    pub basis: Vec<CVec>,
    /// Sampled generator `(t_k, Γ(t_k))`.
    pub generator_trace: Vec<(f64, CMat)>,
    /// `B` at every frame node.
    pub b_trajectory: Vec<CMat>,
}

/// Compute the holonomy of a frame trajectory.
///
/// The frame must be orthonormal at every node (1e-8) and sampled on a
/// uniform grid; when projectors are supplied the frame must span them
/// (1e-7). Periodic frames get wrapped difference stencils.
pub fn holonomy_b(frame: &FrameTrajectory, projectors: Option<&[CMat]>) -> Result<HolonomyMatrix> {
    let n_nodes = frame.t_grid.len();
    if n_nodes < 6 {
        return Err(CoreError::GridMismatch(
            "holonomy needs at least 6 frame nodes".into(),
        ));
    }
    let h = frame.t_grid[1] - frame.t_grid[0];
    if frame
        .t_grid
        .windows(2)
        .any(|w| (w[1] - w[0] - h).abs() > 1e-12)
    {
        return Err(CoreError::GridMismatch(
            "holonomy needs a uniform frame grid".into(),
        ));
    }
    let ortho = frame.orthonormality_residual();
    if ortho > 1e-8 {
        return Err(CoreError::Frame(format!(
            "frame not orthonormal: residual {ortho:.3e}"
        )));
    }
    if let Some(ps) = projectors {
        if ps.len() != n_nodes {
            return Err(CoreError::GridMismatch(
                "one projector per frame node required".into(),
            ));
        }
        for (k, p) in ps.iter().enumerate() {
            let span = linalg::projector_onto(&frame.vectors[k]);
            let mismatch = linalg::op_norm(&(p - span));
            if mismatch > 1e-7 {
                return Err(CoreError::Frame(format!(
                    "frame does not span the projector at node {k}: residual {mismatch:.3e}"
                )));
            }
        }
    }

    let periodic = frame.periodicity_residual() < 1e-8;
    let mats = frame.as_matrices();
    let nr = frame.rank();

    // Γ(t_k) = -F†(t_k) Ḟ(t_k), anti-Hermitian up to FD error
    let mut gamma_samples: Vec<CMat> = Vec::with_capacity(n_nodes);
    for k in 0..n_nodes {
        let fdot = linalg::fd1_grid4(&mats, h, k, periodic);
        let g = -(mats[k].adjoint() * fdot);
        // project onto the anti-Hermitian part; the defect is FD noise
        let g = (&g - g.adjoint()).scale(0.5);
        gamma_samples.push(g);
    }

    // integrate Ḃ = Γ B by exponential midpoint with substep doubling
    let run = |m: usize| -> Result<Vec<CMat>> {
        let mut b = linalg::identity(nr);
        let mut out = Vec::with_capacity(n_nodes);
        out.push(b.clone());
        for k in 0..n_nodes - 1 {
            let h_sub = h / m as f64;
            for j in 0..m {
                let t_mid = frame.t_grid[k] + (j as f64 + 0.5) * h_sub;
                let g_mid = linalg::lagrange6(&gamma_samples, frame.t_grid[0], h, t_mid);
                // exp(h Γ) = exp(-i h (iΓ)) with iΓ Hermitian
                b = linalg::exp_neg_i_hermitian(&(g_mid * c(0.0, 1.0)), h_sub)? * b;
            }
            out.push(b.clone());
        }
        Ok(out)
    };
    let mut m = 1usize;
    let mut prev = run(m)?;
    let b_trajectory = loop {
        m *= 2;
        if m > 1 << 12 {
            return Err(CoreError::QuadratureNonConvergence(
                "holonomy integration still moving".into(),
            ));
        }
        let next = run(m)?;
        let diff = next
            .iter()
            .zip(prev.iter())
            .map(|(a, b)| linalg::max_abs(&(a - b)))
            .fold(0.0f64, f64::max);
        if diff < 1e-9 {
            break next;
        }
        prev = next;
    };

    let b = b_trajectory.last().unwrap().clone();
    if linalg::unitarity_residual(&b) > 1e-8 {
        return Err(CoreError::Numerical(
            "holonomy matrix lost unitarity".into(),
        ));
    }
    Ok(HolonomyMatrix {
        b,
        basis: frame.vectors[0].clone(),
        generator_trace: frame
            .t_grid
            .iter()
            .copied()
            .zip(gamma_samples.into_iter())
            .collect(),
        b_trajectory,
    })
}

/// Residual of `V(t) B(t) = W(t)` restricted to `ran P(0)`: max over nodes
/// of `max_abs(Σ_q ψ_q(t) B_{q,r}(t) - W(t) ψ_r(0))`.
pub fn holonomy_consistency_residual(
    frame: &FrameTrajectory,
    w: &UnitaryTrajectory,
    holo: &HolonomyMatrix,
) -> Result<f64> {
    if frame.t_grid != w.t_grid {
        return Err(CoreError::GridMismatch(
            "frame and transport grids differ".into(),
        ));
    }
    let nr = frame.rank();
    let mut worst = 0.0f64;
    for (k, vs) in frame.vectors.iter().enumerate() {
        let b = &holo.b_trajectory[k];
        for r in 0..nr {
            let mut vb = CVec::zeros(frame.dim());
            for q in 0..nr {
                vb += vs[q].scale(1.0) * b[(q, r)];
            }
            let wpsi = &w.matrices[k] * &frame.vectors[0][r];
            worst = worst.max(linalg::max_abs_vec(&(vb - wpsi)));
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// leading-order charge
// ---------------------------------------------------------------------------

/// Exact charge matrix elements against their dynamical + geometric
/// decomposition, in a fixed orthonormal basis of `ran P(0)`.
#[derive(Debug, Clone)]
pub struct ChargeReport {
    pub alpha: f64,
    pub epsilon: f64,
    /// `(1/ε) ∫ ∂_α E ds` (scalar; multiplies the identity).
    pub dynamical_term: f64,
    /// Geometric matrix elements (`N×N`).
    pub geometric_term: CMat,
    /// Exact `<b_r| Q(1) |b_s>`.
    pub exact_elements: CMat,
    /// `max_abs(exact - dynamical·I - geometric)`.
    pub residual: f64,
    /// The basis the elements refer to.
    pub basis: Vec<CVec>,
}

impl ChargeReport {
    fn assemble(
        alpha: f64,
        epsilon: f64,
        dynamical_term: f64,
        geometric_term: CMat,
        exact_elements: CMat,
        basis: Vec<CVec>,
    ) -> Self {
        let n = geometric_term.nrows();
        let formula = linalg::identity(n).scale(dynamical_term) + &geometric_term;
        let residual = linalg::max_abs(&(&exact_elements - formula));
        Self {
            alpha,
            epsilon,
            dynamical_term,
            geometric_term,
            exact_elements,
            residual,
            basis,
        }
    }

    /// JSON document with re/im arrays for the matrix fields.
    pub fn to_json(&self) -> String {
        let mat_json = |m: &CMat| -> String {
            let re: Vec<String> = (0..m.nrows())
                .map(|r| {
                    let row: Vec<String> = (0..m.ncols())
                        .map(|s| format!("{:.12e}", m[(r, s)].re))
                        .collect();
                    format!("[{}]", row.join(","))
                })
                .collect();
            let im: Vec<String> = (0..m.nrows())
                .map(|r| {
                    let row: Vec<String> = (0..m.ncols())
                        .map(|s| format!("{:.12e}", m[(r, s)].im))
                        .collect();
                    format!("[{}]", row.join(","))
                })
                .collect();
            format!("{{\"re\":[{}],\"im\":[{}]}}", re.join(","), im.join(","))
        };
        format!(
            "{{\"epsilon\":{},\"alpha\":{},\"dynamical_term\":{:.12e},\"geometric_term\":{},\"exact\":{},\"residual\":{:.6e}}}",
            self.epsilon,
            self.alpha,
            self.dynamical_term,
            mat_json(&self.geometric_term),
            mat_json(&self.exact_elements),
            self.residual
        )
    }
}

/// Matrix elements `M[r][s] = <base_r | (plus_s - minus_s) / (2δ)>` of the
/// α-derivative of a frame.
pub fn frame_alpha_overlap(base: &[CVec], plus: &[CVec], minus: &[CVec], delta: f64) -> CMat {
    let n = base.len();
    let mut m = CMat::zeros(n, n);
    for r in 0..n {
        for s in 0..n {
            let d = (&plus[s] - &minus[s]).unscale(2.0 * delta);
            m[(r, s)] = base[r].dotc(&d);
        }
    }
    m
}

/// `(1/ε) ∫_0^1 ∂_α E ds` with the eigenvalue re-solved at `α ± δ` and the
/// FD step validated by halving at sample nodes.
fn dynamical_term(
    family: &HamiltonianFamily,
    alpha: f64,
    epsilon: f64,
    table: &GeneratorTable,
    delta: f64,
) -> Result<f64> {
    let rank = table.projector_at_start().trace().re.round() as usize;
    let e_at = |t: f64, al: f64, e_base: f64| -> Result<f64> {
        let eigs = family.eigenvalues(t, al.clamp(0.0, 1.0))?;
        let (inside, _) = SpectralSelector::split(e_base, rank, &eigs)?;
        Ok(inside.iter().map(|&k| eigs[k]).sum::<f64>() / rank as f64)
    };
    let de_at = |t: f64, d: f64| -> Result<f64> {
        let h_t = family.evaluate(t, alpha)?;
        let p_t = table.projector_at(t);
        let e_base = isolated_eigenvalue_of(&h_t, &p_t, rank)?;
        if alpha - d >= 0.0 && alpha + d <= 1.0 {
            Ok((e_at(t, alpha + d, e_base)? - e_at(t, alpha - d, e_base)?) / (2.0 * d))
        } else if alpha + 2.0 * d <= 1.0 {
            Ok((-3.0 * e_base + 4.0 * e_at(t, alpha + d, e_base)?
                - e_at(t, alpha + 2.0 * d, e_base)?)
                / (2.0 * d))
        } else {
            Ok((3.0 * e_base - 4.0 * e_at(t, alpha - d, e_base)?
                + e_at(t, alpha - 2.0 * d, e_base)?)
                / (2.0 * d))
        }
    };
    // FD-step sanity at a few nodes
    for j in 0..4 {
        let t = (j as f64 + 0.41) / 4.0;
        let full = de_at(t, delta)?;
        let half = de_at(t, delta / 2.0)?;
        if (full - half).abs() > 1e-5 * (1.0 + full.abs()) {
            return Err(CoreError::FdContamination(format!(
                "∂_α E at t = {t} moves by {:.3e} under δ-halving",
                (full - half).abs()
            )));
        }
    }
    let eval = |n: usize| -> Result<f64> {
        let n = n | 1;
        let h = 1.0 / (n - 1) as f64;
        let samples: Vec<f64> = (0..n)
            .map(|k| de_at(k as f64 * h, delta))
            .collect::<Result<_>>()?;
        Ok(linalg::simpson_scalar(&samples, h))
    };
    let mut n = 129;
    let mut prev = eval(n)?;
    loop {
        n = (n - 1) * 2 + 1;
        if n > (1 << 13) + 1 {
            return Err(CoreError::QuadratureNonConvergence(
                "dynamical-term quadrature still moving".into(),
            ));
        }
        let next = eval(n)?;
        if (next - prev).abs() < 1e-9 {
            return Ok(next / epsilon);
        }
        prev = next;
    }
}

/// Transport endpoint at fixed internal substeps (finite-difference runs
/// must share the discretisation of the base run).
fn transport_endpoint_fixed(
    family: &HamiltonianFamily,
    alpha: f64,
    t_grid: &[f64],
    selector: SpectralSelector,
    epsilon: Option<f64>,
    substeps_per_interval: usize,
) -> Result<CMat> {
    let table = crate::evolve::build_generator_table(family, alpha, selector, epsilon)?;
    let mut w = linalg::identity(family.dim());
    for win in t_grid.windows(2) {
        let h_sub = (win[1] - win[0]) / substeps_per_interval as f64;
        for j in 0..substeps_per_interval {
            let t_mid = win[0] + (j as f64 + 0.5) * h_sub;
            w = linalg::exp_neg_i_hermitian(&table.generator_at(t_mid), h_sub)? * w;
        }
    }
    Ok(w)
}

/// Leading-order pumped charge for an isolated (possibly degenerate)
/// eigenvalue: dynamical term plus `P(0) i W⁻¹(1) ∂_α W(1) P(0)`, compared
/// against the exact `P(0) Q(1) P(0)`.
pub fn charge_leading_order(
    family: &HamiltonianFamily,
    alpha: f64,
    epsilon: f64,
    w: &UnitaryTrajectory,
    basis: &[CVec],
    opts: &ChargeOptions,
) -> Result<ChargeReport> {
    if w.kind != TrajectoryKind::Transport {
        return Err(CoreError::GridMismatch(
            "charge_leading_order needs a first-order transport trajectory".into(),
        ));
    }
    let table = w
        .table
        .as_ref()
        .ok_or_else(|| CoreError::GridMismatch("transport trajectory lost its table".into()))?;
    let p0 = table.projector_at_start();
    validate_basis(basis, p0)?;
    let delta = opts.delta_alpha;

    let dyn_term = dynamical_term(family, alpha, epsilon, table, delta)?;

    // ∂_α W(1) by central FD over transport runs sharing the discretisation
    let m = (w.integrator_steps / (w.t_grid.len() - 1)).max(1);
    let selector = table.selector;
    let w_end = w.endpoint();
    let dw = if alpha - delta >= 0.0 && alpha + delta <= 1.0 {
        let wp = transport_endpoint_fixed(family, alpha + delta, &w.t_grid, selector, None, m)?;
        let wm = transport_endpoint_fixed(family, alpha - delta, &w.t_grid, selector, None, m)?;
        (wp - wm).unscale(2.0 * delta)
    } else if alpha + 2.0 * delta <= 1.0 {
        let w1 = transport_endpoint_fixed(family, alpha + delta, &w.t_grid, selector, None, m)?;
        let w2 =
            transport_endpoint_fixed(family, alpha + 2.0 * delta, &w.t_grid, selector, None, m)?;
        (w_end.scale(-3.0) + w1.scale(4.0) - w2).unscale(2.0 * delta)
    } else {
        let w1 = transport_endpoint_fixed(family, alpha - delta, &w.t_grid, selector, None, m)?;
        let w2 =
            transport_endpoint_fixed(family, alpha - 2.0 * delta, &w.t_grid, selector, None, m)?;
        (w_end.scale(3.0) - w1.scale(4.0) + w2).unscale(2.0 * delta)
    };
    let geo_full = w_end.adjoint() * dw * c(0.0, 1.0);
    let geometric = elements_in_basis(&geo_full, basis);

    let q = charge_time_quadrature(family, alpha, epsilon, 1.0, opts)?;
    let exact = elements_in_basis(&q.matrix, basis);

    Ok(ChargeReport::assemble(
        alpha,
        epsilon,
        dyn_term,
        geometric,
        exact,
        basis.to_vec(),
    ))
}

fn validate_basis(basis: &[CVec], p0: &CMat) -> Result<()> {
    if basis.is_empty() {
        return Err(CoreError::Frame("empty basis".into()));
    }
    let rank = p0.trace().re.round() as usize;
    if basis.len() != rank {
        return Err(CoreError::Frame(format!(
            "basis size {} does not match projector rank {rank}",
            basis.len()
        )));
    }
    if linalg::orthonormality_residual(basis) > 1e-8 {
        return Err(CoreError::Frame("basis not orthonormal".into()));
    }
    let span = linalg::projector_onto(basis);
    if linalg::op_norm(&(p0 - span)) > 1e-7 {
        return Err(CoreError::Frame("basis does not span ran P(0)".into()));
    }
    Ok(())
}

fn elements_in_basis(op: &CMat, basis: &[CVec]) -> CMat {
    let n = basis.len();
    let mut m = CMat::zeros(n, n);
    for r in 0..n {
        let col = op * &basis[r];
        for s in 0..n {
            // m[s][r] = <b_s | Op b_r>
            m[(s, r)] = basis[s].dotc(&col);
        }
    }
    m
}

// ---------------------------------------------------------------------------
// periodic-case charge matrix elements
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeriodicCase {
    /// Simple eigenvalue: geometric term is `∂_α β`.
    Simple,
    /// Degenerate eigenvalue with parallel frames: boundary term
    /// `i <φ⁽ʳ⁾(t)|∂_α φ⁽ˢ⁾(t)>|_0^1`.
    DegenerateParallel,
    /// Degenerate eigenvalue with a periodic frame and the holonomy bracket.
    DegenerateFramed,
}

/// Supplies α-differentiable frames for the periodic-case formulas: an
/// initial frame of `ran P_α(0)` for every α, and (for the framed case) a
/// full `C¹` 1-periodic frame trajectory.
pub struct FrameProvider {
    initial: Arc<dyn Fn(f64) -> Result<Vec<CVec>> + Send + Sync>,
    trajectory: Option<Arc<dyn Fn(f64, &[f64]) -> Result<FrameTrajectory> + Send + Sync>>,
}

impl FrameProvider {
    pub fn new<F>(initial: F) -> Self
    where
        F: Fn(f64) -> Result<Vec<CVec>> + Send + Sync + 'static,
    {
        Self {
            initial: Arc::new(initial),
            trajectory: None,
        }
    }

    pub fn with_trajectory<G>(mut self, f: G) -> Self
    where
        G: Fn(f64, &[f64]) -> Result<FrameTrajectory> + Send + Sync + 'static,
    {
        self.trajectory = Some(Arc::new(f));
        self
    }

    pub fn initial(&self, alpha: f64) -> Result<Vec<CVec>> {
        (self.initial)(alpha)
    }

    pub fn trajectory(&self, alpha: f64, t_grid: &[f64]) -> Result<FrameTrajectory> {
        match &self.trajectory {
            Some(f) => f(alpha, t_grid),
            None => Err(CoreError::Frame(
                "this provider has no frame trajectory (needed for the framed case)".into(),
            )),
        }
    }
}

/// Charge matrix elements over one period against the case-appropriate
/// leading-order formula.
pub fn charge_matrix_elements_periodic(
    family: &HamiltonianFamily,
    alpha: f64,
    epsilon: f64,
    case: PeriodicCase,
    provider: &FrameProvider,
    selector: SpectralSelector,
    t_grid: &[f64],
    opts: &ChargeOptions,
) -> Result<ChargeReport> {
    let w = propagate_transport(family, alpha, t_grid, selector, None, &opts.prop)?;
    let table = w.table.as_ref().unwrap().clone();
    let p0 = table.projector_at_start();
    let periodicity = linalg::max_abs(&(table.projector_at(1.0) - p0));
    if periodicity > 1e-8 {
        return Err(CoreError::Periodicity(format!(
            "P(1) differs from P(0) by {periodicity:.3e}"
        )));
    }
    let basis = provider.initial(alpha)?;
    validate_basis(&basis, p0)?;
    let rank = basis.len();
    let delta = opts.delta_alpha;
    if alpha - delta < 0.0 || alpha + delta > 1.0 {
        return Err(CoreError::Domain(
            "periodic-case formulas need alpha ± delta inside [0, 1]".into(),
        ));
    }

    let dyn_term = dynamical_term(family, alpha, epsilon, &table, delta)?;
    let m = (w.integrator_steps / (t_grid.len() - 1)).max(1);

    let geometric: CMat = match case {
        PeriodicCase::Simple => {
            if rank != 1 {
                return Err(CoreError::Degeneracy(format!(
                    "simple case requires rank 1, got {rank}"
                )));
            }
            let beta_at = |al: f64| -> Result<f64> {
                let w_al = propagate_transport(family, al, t_grid, selector, None, &opts.prop)?;
                let phi0 = provider.initial(al)?;
                Ok(berry_phase(family, al, &w_al, &phi0[0])?.beta)
            };
            let b0 = berry_phase(family, alpha, &w, &basis[0])?.beta;
            let bp = beta_at(alpha + delta)?;
            let bm = beta_at(alpha - delta)?;
            // unwrap the stencil onto the branch of the center value
            let bp = b0 + wrap_angle(bp - b0);
            let bm = b0 + wrap_angle(bm - b0);
            CMat::from_element(1, 1, c((bp - bm) / (2.0 * delta), 0.0))
        }
        PeriodicCase::DegenerateParallel => {
            let f_base = provider.initial(alpha)?;
            let f_plus = provider.initial(alpha + delta)?;
            let f_minus = provider.initial(alpha - delta)?;
            let m0 = frame_alpha_overlap(&f_base, &f_plus, &f_minus, delta);
            let wp = transport_endpoint_fixed(family, alpha + delta, t_grid, selector, None, m)?;
            let wm = transport_endpoint_fixed(family, alpha - delta, t_grid, selector, None, m)?;
            let phi_base: Vec<CVec> = f_base.iter().map(|v| w.endpoint() * v).collect();
            let phi_plus: Vec<CVec> = f_plus.iter().map(|v| &wp * v).collect();
            let phi_minus: Vec<CVec> = f_minus.iter().map(|v| &wm * v).collect();
            let m1 = frame_alpha_overlap(&phi_base, &phi_plus, &phi_minus, delta);
            (m1 - m0) * c(0.0, 1.0)
        }
        PeriodicCase::DegenerateFramed => {
            let holo_at = |al: f64| -> Result<(FrameTrajectory, HolonomyMatrix)> {
                let frame = provider.trajectory(al, t_grid)?;
                let per = frame.periodicity_residual();
                if per > 1e-8 {
                    return Err(CoreError::Periodicity(format!(
                        "framed case needs 1-periodic frames; residual {per:.3e}"
                    )));
                }
                let holo = holonomy_b(&frame, None)?;
                Ok((frame, holo))
            };
            let (frame, holo) = holo_at(alpha)?;
            let (frame_p, holo_p) = holo_at(alpha + delta)?;
            let (frame_m, holo_m) = holo_at(alpha - delta)?;
            framed_bracket(&frame, &holo, &frame_p, &holo_p, &frame_m, &holo_m, delta)
        }
    };

    let q = charge_time_quadrature(family, alpha, epsilon, 1.0, opts)?;
    let exact = elements_in_basis(&q.matrix, &basis);

    Ok(ChargeReport::assemble(
        alpha, epsilon, dyn_term, geometric, exact, basis,
    ))
}

/// The geometric bracket of the framed case:
/// `i [B† Mψ(1) B + B† ∂_α B - Mψ(0)]` with `Mψ(t)` the frame α-overlaps
/// and `B = B(1)`.
pub fn framed_bracket(
    frame: &FrameTrajectory,
    holo: &HolonomyMatrix,
    frame_plus: &FrameTrajectory,
    holo_plus: &HolonomyMatrix,
    frame_minus: &FrameTrajectory,
    holo_minus: &HolonomyMatrix,
    delta: f64,
) -> CMat {
    let m_end = frame_alpha_overlap(
        frame.vectors.last().unwrap(),
        frame_plus.vectors.last().unwrap(),
        frame_minus.vectors.last().unwrap(),
        delta,
    );
    let m_start = frame_alpha_overlap(
        &frame.vectors[0],
        &frame_plus.vectors[0],
        &frame_minus.vectors[0],
        delta,
    );
    let db = (&holo_plus.b - &holo_minus.b).unscale(2.0 * delta);
    let b = &holo.b;
    (b.adjoint() * m_end * b + b.adjoint() * db - m_start) * c(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// the zero-order identity
// ---------------------------------------------------------------------------

/// Max over the grid of `max_abs(P ∂_α K P - i P [Ṗ, ∂_α P] P)`; both sides
/// go through the contour machinery.
pub fn proposition_zero_order_check(
    family: &HamiltonianFamily,
    alpha: f64,
    t_grid: &[f64],
    selector: SpectralSelector,
) -> Result<f64> {
    let mut tracker = ContourTracker::new(selector);
    let mut worst = 0.0f64;
    for &t in t_grid {
        let contour = tracker.contour_at(family, t, alpha)?;
        let p = riesz_projector(family, t, alpha, &contour)?;
        let dp_t = crate::spectral::projector_derivative(
            family,
            t,
            alpha,
            &contour,
            crate::spectral::DerivVar::T,
        )?;
        let dp_a = crate::spectral::projector_derivative(
            family,
            t,
            alpha,
            &contour,
            crate::spectral::DerivVar::Alpha,
        )?;
        let dp_ta = crate::spectral::projector_mixed_derivative(family, t, alpha, &contour)?;
        // ∂_α K = i[∂_α Ṗ, P] + i[Ṗ, ∂_α P]
        let dk_a = (linalg::commutator(&dp_ta, &p.matrix) + linalg::commutator(&dp_t, &dp_a))
            * c(0.0, 1.0);
        let lhs = &p.matrix * dk_a * &p.matrix;
        let rhs = &p.matrix * linalg::commutator(&dp_t, &dp_a) * &p.matrix * c(0.0, 1.0);
        worst = worst.max(linalg::max_abs(&(lhs - rhs)));
    }
    Ok(worst)
}
