//! Time- and parameter-dependent Hermitian matrix families.
//!
//! A [`HamiltonianFamily`] is a map `(t, α) ∈ [0,1]² → H` into the Hermitian
//! matrices of a fixed dimension, together with optional analytic partial
//! derivatives. When a derivative closure is absent the family falls back to
//! fourth-order central finite differences (one-sided near the domain
//! boundary, wrapped stencils for 1-periodic families).
//!
//! [`certify_gap`] eigensolves the family on a grid, tracks the user-selected
//! spectral cluster continuously, and certifies a uniform lower bound on the
//! distance between the cluster and the rest of the spectrum. Families whose
//! gap dips below the floor are rejected, not clamped.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::linalg::{self, CMat};

/// Default finite-difference step in `t` and `α`.
pub const H_FD: f64 = 1e-4;
/// Default gap floor below which certification fails.
pub const GAP_FLOOR: f64 = 1e-6;
/// Default uniform time grid: 512 steps (513 nodes, Simpson-friendly).
pub const DEFAULT_T_POINTS: usize = 513;
/// Hermiticity tolerance on family evaluations.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Hermiticity tolerance on finite-difference derivatives.
pub const DERIVATIVE_HERMITICITY_TOL: f64 = 1e-9;

type MatFn = Arc<dyn Fn(f64, f64) -> CMat + Send + Sync>;

/// A `C³`-smooth family `(t, α) → H_α(t)` of Hermitian matrices.
///
/// Immutable after construction; evaluation and derivatives are safe to call
/// concurrently.
#[derive(Clone)]
pub struct HamiltonianFamily {
    dim: usize,
    eval: MatFn,
    dt: Option<MatFn>,
    dalpha: Option<MatFn>,
    d2t: Option<MatFn>,
    dt_dalpha: Option<MatFn>,
    periodic_t: bool,
    smoothness_note: String,
}

impl fmt::Debug for HamiltonianFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianFamily")
            .field("dim", &self.dim)
            .field("analytic_dt", &self.dt.is_some())
            .field("analytic_dalpha", &self.dalpha.is_some())
            .field("periodic_t", &self.periodic_t)
            .field("smoothness_note", &self.smoothness_note)
            .finish()
    }
}

impl HamiltonianFamily {
    pub fn new<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(f64, f64) -> CMat + Send + Sync + 'static,
    {
        Self {
            dim,
            eval: Arc::new(eval),
            dt: None,
            dalpha: None,
            d2t: None,
            dt_dalpha: None,
            periodic_t: false,
            smoothness_note: String::new(),
        }
    }

    pub fn with_dt<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, f64) -> CMat + Send + Sync + 'static,
    {
        self.dt = Some(Arc::new(f));
        self
    }

    pub fn with_dalpha<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, f64) -> CMat + Send + Sync + 'static,
    {
        self.dalpha = Some(Arc::new(f));
        self
    }

    pub fn with_d2t<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, f64) -> CMat + Send + Sync + 'static,
    {
        self.d2t = Some(Arc::new(f));
        self
    }

    pub fn with_dt_dalpha<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, f64) -> CMat + Send + Sync + 'static,
    {
        self.dt_dalpha = Some(Arc::new(f));
        self
    }

    /// Declare the family 1-periodic in `t`. Periodicity is never assumed,
    /// only declared; it widens finite-difference stencils across t = 0, 1.
    pub fn with_periodic_t(mut self, periodic: bool) -> Self {
        self.periodic_t = periodic;
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.smoothness_note = note.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn periodic_t(&self) -> bool {
        self.periodic_t
    }

    pub fn smoothness_note(&self) -> &str {
        &self.smoothness_note
    }

    pub fn has_analytic_dt(&self) -> bool {
        self.dt.is_some()
    }

    pub fn has_analytic_dalpha(&self) -> bool {
        self.dalpha.is_some()
    }

    fn check_domain(t: f64, alpha: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&alpha) {
            return Err(CoreError::Domain(format!(
                "(t, alpha) = ({t}, {alpha}) outside [0,1]^2"
            )));
        }
        Ok(())
    }

    fn raw(&self, t: f64, alpha: f64) -> CMat {
        if self.periodic_t {
            (self.eval)(t - t.floor(), alpha.clamp(0.0, 1.0))
        } else {
            (self.eval)(t.clamp(0.0, 1.0), alpha.clamp(0.0, 1.0))
        }
    }

    /// `H_α(t)`, shape- and hermiticity-checked.
    pub fn evaluate(&self, t: f64, alpha: f64) -> Result<CMat> {
        Self::check_domain(t, alpha)?;
        let h = (self.eval)(t, alpha);
        if h.nrows() != self.dim || h.ncols() != self.dim {
            return Err(CoreError::Shape {
                expected: self.dim,
                got_rows: h.nrows(),
                got_cols: h.ncols(),
            });
        }
        let residual = linalg::hermiticity_residual(&h);
        if residual > HERMITICITY_TOL {
            return Err(CoreError::Hermiticity {
                residual,
                tol: HERMITICITY_TOL,
            });
        }
        Ok(h)
    }

    /// Fourth-order FD along one variable, one-sided near the boundary
    /// unless the family is periodic in that variable.
    fn fd_first<G>(&self, f: G, x: f64, wrap: bool) -> Result<CMat>
    where
        G: Fn(f64) -> CMat,
    {
        let h = H_FD;
        let wrapped = |y: f64| -> Result<CMat> { Ok(f(y)) };
        if wrap || (x >= 2.0 * h && x <= 1.0 - 2.0 * h) {
            linalg::fd1_central4(wrapped, x, h)
        } else if x < 2.0 * h {
            linalg::fd1_onesided4(wrapped, x, h, 1.0)
        } else {
            linalg::fd1_onesided4(wrapped, x, h, -1.0)
        }
    }

    fn fd_second_t(&self, t: f64, alpha: f64) -> Result<CMat> {
        let h = H_FD;
        let f = |y: f64| -> Result<CMat> { Ok(self.raw(y, alpha)) };
        if self.periodic_t || (t >= 2.0 * h && t <= 1.0 - 2.0 * h) {
            linalg::fd2_central4(f, t, h)
        } else {
            // second-order one-sided stencil at the edge
            let s = if t < 2.0 * h { 1.0 } else { -1.0 };
            let f0 = self.raw(t, alpha);
            let f1 = self.raw(t + s * h, alpha);
            let f2 = self.raw(t + 2.0 * s * h, alpha);
            let f3 = self.raw(t + 3.0 * s * h, alpha);
            Ok((f0.scale(2.0) - f1.scale(5.0) + f2.scale(4.0) - f3).scale(1.0 / (h * h)))
        }
    }

    fn check_derivative_hermiticity(m: CMat) -> Result<CMat> {
        let residual = linalg::hermiticity_residual(&m);
        if residual > DERIVATIVE_HERMITICITY_TOL {
            return Err(CoreError::Hermiticity {
                residual,
                tol: DERIVATIVE_HERMITICITY_TOL,
            });
        }
        Ok(m)
    }

    /// `∂_t H_α(t)`; analytic when provided, otherwise FD.
    pub fn derivative_t(&self, t: f64, alpha: f64) -> Result<CMat> {
        Self::check_domain(t, alpha)?;
        let m = match &self.dt {
            Some(f) => f(t, alpha),
            None => self.fd_first(|y| self.raw(y, alpha), t, self.periodic_t)?,
        };
        Self::check_derivative_hermiticity(m)
    }

    /// `∂_α H_α(t)`; analytic when provided, otherwise FD.
    pub fn derivative_alpha(&self, t: f64, alpha: f64) -> Result<CMat> {
        Self::check_domain(t, alpha)?;
        let m = match &self.dalpha {
            Some(f) => f(t, alpha),
            None => self.fd_first(|y| self.raw(t, y), alpha, false)?,
        };
        Self::check_derivative_hermiticity(m)
    }

    /// `∂²_t H_α(t)`; used by the superadiabatic generator.
    pub fn derivative_tt(&self, t: f64, alpha: f64) -> Result<CMat> {
        Self::check_domain(t, alpha)?;
        let m = match &self.d2t {
            Some(f) => f(t, alpha),
            None => self.fd_second_t(t, alpha)?,
        };
        // second FD derivatives carry more roundoff than first ones
        let residual = linalg::hermiticity_residual(&m);
        if residual > 1e-6 {
            return Err(CoreError::Hermiticity {
                residual,
                tol: 1e-6,
            });
        }
        Ok(m)
    }

    /// Mixed derivative `∂_α ∂_t H_α(t)`.
    pub fn derivative_t_alpha(&self, t: f64, alpha: f64) -> Result<CMat> {
        Self::check_domain(t, alpha)?;
        if let Some(f) = &self.dt_dalpha {
            return Self::check_derivative_hermiticity(f(t, alpha));
        }
        // FD in alpha of the (possibly analytic) t-derivative
        let dt_at = |a: f64| -> CMat {
            match &self.dt {
                Some(f) => f(t, a.clamp(0.0, 1.0)),
                None => self
                    .fd_first(|y| self.raw(y, a.clamp(0.0, 1.0)), t, self.periodic_t)
                    .expect("inner FD cannot fail"),
            }
        };
        let m = self.fd_first(dt_at, alpha, false)?;
        let residual = linalg::hermiticity_residual(&m);
        if residual > 1e-6 {
            return Err(CoreError::Hermiticity {
                residual,
                tol: 1e-6,
            });
        }
        Ok(m)
    }

    /// Real eigenvalues at `(t, α)`, ascending.
    pub fn eigenvalues(&self, t: f64, alpha: f64) -> Result<Vec<f64>> {
        let h = self.evaluate(t, alpha)?;
        Ok(linalg::hermitian_eigen(&h)?.0)
    }
}

/// How the isolated spectral part `σ_α(t)` is picked out of the spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectralSelector {
    /// The single eigenvalue nearest to `e_ref`.
    Nearest { e_ref: f64 },
    /// The contiguous cluster of `size` eigenvalues nearest to `e_ref`.
    Cluster { e_ref: f64, size: usize },
}

impl SpectralSelector {
    pub fn cluster_size(&self) -> usize {
        match self {
            SpectralSelector::Nearest { .. } => 1,
            SpectralSelector::Cluster { size, .. } => *size,
        }
    }

    pub fn e_ref(&self) -> f64 {
        match self {
            SpectralSelector::Nearest { e_ref } | SpectralSelector::Cluster { e_ref, .. } => *e_ref,
        }
    }

    /// Split ascending eigenvalues into (cluster indices, rest), taking the
    /// `size` eigenvalues nearest to `center`. The cluster is contiguous in
    /// the sorted spectrum by construction.
    pub fn split(center: f64, size: usize, eigs: &[f64]) -> Result<(Vec<usize>, Vec<usize>)> {
        let n = eigs.len();
        if size == 0 || size > n {
            return Err(CoreError::Domain(format!(
                "cluster size {size} invalid for spectrum of {n} eigenvalues"
            )));
        }
        // best contiguous window of `size` eigenvalues around `center`
        let mut best_start = 0usize;
        let mut best_cost = f64::INFINITY;
        for start in 0..=(n - size) {
            let cost = (0..size)
                .map(|j| (eigs[start + j] - center).abs())
                .fold(0.0f64, f64::max);
            if cost < best_cost {
                best_cost = cost;
                best_start = start;
            }
        }
        let inside: Vec<usize> = (best_start..best_start + size).collect();
        let outside: Vec<usize> = (0..n).filter(|k| !inside.contains(k)).collect();
        Ok((inside, outside))
    }
}

/// Certified enclosure of the isolated spectral part over a grid.
#[derive(Debug, Clone, Copy)]
pub struct GapWindow {
    /// Center of the ball enclosing `σ_α(t)` over the whole grid.
    pub sigma_center: Complex64,
    /// Radius of that ball.
    pub sigma_radius: f64,
    /// Certified distance between the ball and the rest of the spectrum.
    pub gap_lower_bound: f64,
}

/// Eigensolve on a grid, track the selected cluster, certify the gap.
///
/// `gap_floor` defaults to [`GAP_FLOOR`] when `None`.
pub fn certify_gap(
    family: &HamiltonianFamily,
    grid: &[(f64, f64)],
    selector: SpectralSelector,
    gap_floor: Option<f64>,
) -> Result<GapWindow> {
    if grid.is_empty() {
        return Err(CoreError::Domain(
            "certify_gap needs a non-empty grid".into(),
        ));
    }
    let floor = gap_floor.unwrap_or(GAP_FLOOR);
    let size = selector.cluster_size();
    let mut center = selector.e_ref();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut outside_vals: Vec<(f64, f64, f64)> = Vec::new(); // (mu, t, alpha)
    let mut pointwise_min = f64::INFINITY;
    let mut pointwise_argmin = grid[0];

    for &(t, alpha) in grid {
        let eigs = family.eigenvalues(t, alpha)?;
        let (inside, outside) = SpectralSelector::split(center, size, &eigs)?;
        let cluster: Vec<f64> = inside.iter().map(|&k| eigs[k]).collect();
        // nearest-cluster matching: follow the cluster mean along the grid
        center = cluster.iter().sum::<f64>() / size as f64;
        lo = lo.min(cluster[0]);
        hi = hi.max(cluster[size - 1]);
        let mut point_gap = f64::INFINITY;
        for &k in &outside {
            outside_vals.push((eigs[k], t, alpha));
            for &l in &cluster {
                point_gap = point_gap.min((eigs[k] - l).abs());
            }
        }
        if !outside.is_empty() && point_gap < pointwise_min {
            pointwise_min = point_gap;
            pointwise_argmin = (t, alpha);
        }
    }

    let sigma_center = 0.5 * (lo + hi);
    let sigma_radius = 0.5 * (hi - lo);
    let mut bound = f64::INFINITY;
    let mut argmin = grid[0];
    for &(mu, t, alpha) in &outside_vals {
        let d = (mu - sigma_center).abs() - sigma_radius;
        if d < bound {
            bound = d;
            argmin = (t, alpha);
        }
    }
    if outside_vals.is_empty() {
        // the cluster is the whole spectrum; no complement, no gap to certify
        return Err(CoreError::Domain(
            "selected cluster covers the entire spectrum".into(),
        ));
    }
    if pointwise_min < floor {
        return Err(CoreError::GapCollapse {
            gap: pointwise_min,
            floor,
            t: pointwise_argmin.0,
            alpha: pointwise_argmin.1,
        });
    }
    if bound < floor {
        return Err(CoreError::GapCollapse {
            gap: bound,
            floor,
            t: argmin.0,
            alpha: argmin.1,
        });
    }
    Ok(GapWindow {
        sigma_center: Complex64::new(sigma_center, 0.0),
        sigma_radius,
        gap_lower_bound: bound,
    })
}

/// Grid of `(t, alpha)` pairs with `alpha` fixed.
pub fn t_grid_at_alpha(t_grid: &[f64], alpha: f64) -> Vec<(f64, f64)> {
    t_grid.iter().map(|&t| (t, alpha)).collect()
}

// ---------------------------------------------------------------------------
// tabulated families
// ---------------------------------------------------------------------------

/// Family defined by matrices tabulated on a uniform `(t, α)` grid, with
/// bicubic (4-point Lagrange per axis) interpolation.
///
/// Text format: a header line `dim N_t N_alpha`, then `N_t · N_alpha` node
/// blocks in t-major order (`t` index outer, `α` index inner), each block
/// containing `dim · dim` whitespace-separated `re im` pairs, row-major.
pub fn family_from_grid_text(text: &str) -> Result<HamiltonianFamily> {
    let mut tokens = text.split_whitespace();
    let mut next_usize = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| CoreError::Config(format!("grid file truncated before {what}")))?
            .parse::<usize>()
            .map_err(|e| CoreError::Config(format!("bad {what}: {e}")))
    };
    let dim = next_usize("dim")?;
    let n_t = next_usize("N_t")?;
    let n_alpha = next_usize("N_alpha")?;
    if dim == 0 || n_t < 4 || n_alpha < 4 {
        return Err(CoreError::Config(
            "grid family needs dim >= 1 and at least 4 nodes per axis".into(),
        ));
    }
    let mut nodes: Vec<CMat> = Vec::with_capacity(n_t * n_alpha);
    for node in 0..n_t * n_alpha {
        let mut m = CMat::zeros(dim, dim);
        for r in 0..dim {
            for c in 0..dim {
                let re: f64 = tokens
                    .next()
                    .ok_or_else(|| {
                        CoreError::Config(format!("grid file truncated in node {node}"))
                    })?
                    .parse()
                    .map_err(|e| CoreError::Config(format!("bad entry: {e}")))?;
                let im: f64 = tokens
                    .next()
                    .ok_or_else(|| {
                        CoreError::Config(format!("grid file truncated in node {node}"))
                    })?
                    .parse()
                    .map_err(|e| CoreError::Config(format!("bad entry: {e}")))?;
                m[(r, c)] = Complex64::new(re, im);
            }
        }
        let residual = linalg::hermiticity_residual(&m);
        if residual > HERMITICITY_TOL {
            return Err(CoreError::Hermiticity {
                residual,
                tol: HERMITICITY_TOL,
            });
        }
        nodes.push(m);
    }
    let data = Arc::new((nodes, n_t, n_alpha, dim));
    let eval = move |t: f64, alpha: f64| -> CMat {
        let (nodes, n_t, n_alpha, dim) = (&data.0, data.1, data.2, data.3);
        bicubic_eval(nodes, n_t, n_alpha, dim, t, alpha)
    };
    Ok(HamiltonianFamily::new(dim, eval).with_note("tabulated grid, bicubic interpolation (C^1)"))
}

fn cubic_window(pos: f64, n: usize) -> (usize, [f64; 4]) {
    // 4-point Lagrange window [i0, i0+3] around fractional index `pos`
    let mut i0 = pos.floor() as isize - 1;
    i0 = i0.clamp(0, n as isize - 4);
    let i0 = i0 as usize;
    let mut w = [0.0f64; 4];
    for j in 0..4 {
        let xj = (i0 + j) as f64;
        let mut acc = 1.0;
        for m in 0..4 {
            if m != j {
                let xm = (i0 + m) as f64;
                acc *= (pos - xm) / (xj - xm);
            }
        }
        w[j] = acc;
    }
    (i0, w)
}

fn bicubic_eval(
    nodes: &[CMat],
    n_t: usize,
    n_alpha: usize,
    dim: usize,
    t: f64,
    alpha: f64,
) -> CMat {
    let pt = t.clamp(0.0, 1.0) * (n_t - 1) as f64;
    let pa = alpha.clamp(0.0, 1.0) * (n_alpha - 1) as f64;
    let (it, wt) = cubic_window(pt, n_t);
    let (ia, wa) = cubic_window(pa, n_alpha);
    let mut out = CMat::zeros(dim, dim);
    for (j, wtj) in wt.iter().enumerate() {
        for (k, wak) in wa.iter().enumerate() {
            let node = &nodes[(it + j) * n_alpha + (ia + k)];
            out += node.scale(wtj * wak);
        }
    }
    out
}
