//! Spectral projectors by contour integration and the transport generators
//! built from them.
//!
//! The projector onto an isolated spectral cluster is the resolvent contour
//! integral `P = -(1/2πi) ∮ (H - z)^{-1} dz` over a circle enclosing the
//! cluster only, evaluated by the equispaced trapezoid rule (spectrally
//! accurate for this analytic integrand) with node doubling until successive
//! values settle below [`QUAD_TOL`]. Derivatives of `P` and the reduced
//! resolvent use the sandwiched kernel `(1/2πi) ∮ R B R dz` on the same
//! nodes; quadrature nodes sit at half-offset angles so the node set is
//! symmetric under conjugation and every quadrature of a Hermitian kernel is
//! Hermitian to roundoff.
//!
//! On top of the projectors sit the Kato transport generator
//! `K = i[Ṗ, P]`, the superadiabatic projector of `H - εK`, its generator
//! `K⁽¹⁾ = i[Ṗ⁽¹⁾, P⁽¹⁾]`, and the block-diagonal compression used by the
//! second-order phase equation.

use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::linalg::{self, CMat};
use crate::model::{HamiltonianFamily, SpectralSelector};

/// Successive-doubling tolerance on contour quadratures.
pub const QUAD_TOL: f64 = 1e-11;
/// Initial trapezoid node count.
pub const INITIAL_NODES: usize = 64;
/// Doubling beyond this node count is a failure.
pub const MAX_NODES: usize = 4096;
/// Eigenvalues closer than `10 * QUAD_TOL` to the contour circle are a
/// contour violation.
pub const CONTOUR_MARGIN: f64 = 10.0 * QUAD_TOL;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Circle in the complex plane enclosing the selected spectral cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contour {
    pub center: Complex64,
    pub radius: f64,
    /// Initial quadrature node count (doubled as needed).
    pub nodes: usize,
}

impl Contour {
    pub fn new(center: Complex64, radius: f64) -> Result<Self> {
        if radius <= 0.0 {
            return Err(CoreError::ContourViolation(format!(
                "non-positive radius {radius}"
            )));
        }
        Ok(Self {
            center,
            radius,
            nodes: INITIAL_NODES,
        })
    }

    /// Circle centered at the cluster mean with radius halfway between the
    /// cluster spread and the distance to the rest of the spectrum.
    pub fn enclosing(cluster: &[f64], rest: &[f64]) -> Result<Self> {
        if cluster.is_empty() {
            return Err(CoreError::ContourViolation("empty cluster".into()));
        }
        let center = cluster.iter().sum::<f64>() / cluster.len() as f64;
        let spread = cluster
            .iter()
            .map(|l| (l - center).abs())
            .fold(0.0f64, f64::max);
        let dist = rest
            .iter()
            .map(|m| (m - center).abs())
            .fold(f64::INFINITY, f64::min);
        if !dist.is_finite() {
            return Err(CoreError::ContourViolation(
                "cluster covers the whole spectrum; nothing to separate".into(),
            ));
        }
        if dist - spread < 2.0 * CONTOUR_MARGIN {
            return Err(CoreError::ContourViolation(format!(
                "cluster spread {spread:.3e} reaches the complementary spectrum at {dist:.3e}"
            )));
        }
        let contour = Self::new(c(center, 0.0), 0.5 * (spread + dist))?;
        contour.validate(cluster, rest)?;
        Ok(contour)
    }

    /// Check the circle strictly separates `cluster` (inside) from `rest`.
    pub fn validate(&self, cluster: &[f64], rest: &[f64]) -> Result<()> {
        for &l in cluster {
            let d = (c(l, 0.0) - self.center).norm();
            if d >= self.radius - CONTOUR_MARGIN {
                return Err(CoreError::ContourViolation(format!(
                    "cluster eigenvalue {l} at distance {d:.6e} not strictly inside radius {:.6e}",
                    self.radius
                )));
            }
        }
        for &m in rest {
            let d = (c(m, 0.0) - self.center).norm();
            if d <= self.radius + CONTOUR_MARGIN {
                return Err(CoreError::ContourViolation(format!(
                    "complementary eigenvalue {m} at distance {d:.6e} not strictly outside radius {:.6e}",
                    self.radius
                )));
            }
        }
        Ok(())
    }

    /// Distance margins of a spectrum to the circle; used for the
    /// contour-violation check against `10 * QUAD_TOL`.
    fn min_margin(&self, eigs: &[f64]) -> f64 {
        eigs.iter()
            .map(|&l| ((c(l, 0.0) - self.center).norm() - self.radius).abs())
            .fold(f64::INFINITY, f64::min)
    }

    fn count_inside(&self, eigs: &[f64]) -> usize {
        eigs.iter()
            .filter(|&&l| (c(l, 0.0) - self.center).norm() < self.radius)
            .count()
    }
}

/// Hermitian idempotent with its contour provenance.
#[derive(Debug, Clone)]
pub struct Projector {
    pub matrix: CMat,
    pub rank: usize,
    pub contour: Contour,
}

impl Projector {
    /// Idempotency (1e-10), hermiticity (1e-12), and trace/rank (1e-8) checks.
    pub fn validate(&self) -> Result<()> {
        let p = &self.matrix;
        let idem = linalg::max_abs(&(p * p - p));
        if idem > 1e-10 {
            return Err(CoreError::Numerical(format!(
                "projector not idempotent: residual {idem:.3e}"
            )));
        }
        let herm = linalg::hermiticity_residual(p);
        if herm > 1e-12 {
            return Err(CoreError::Hermiticity {
                residual: herm,
                tol: 1e-12,
            });
        }
        let tr = p.trace();
        if (tr - c(self.rank as f64, 0.0)).norm() > 1e-8 {
            return Err(CoreError::Numerical(format!(
                "trace {tr} does not match rank {}",
                self.rank
            )));
        }
        Ok(())
    }

    /// `I - P`.
    pub fn complement(&self) -> CMat {
        linalg::identity(self.matrix.nrows()) - &self.matrix
    }
}

/// Kato transport generator `K = i[Ṗ, P]`.
#[derive(Debug, Clone)]
pub struct KatoGenerator {
    pub matrix: CMat,
}

impl KatoGenerator {
    /// Hermiticity (1e-10) and block off-diagonality (1e-8) with respect to
    /// the projector that generated it.
    pub fn validate(&self, p: &Projector) -> Result<()> {
        let herm = linalg::hermiticity_residual(&self.matrix);
        if herm > 1e-10 {
            return Err(CoreError::Hermiticity {
                residual: herm,
                tol: 1e-10,
            });
        }
        let pm = &p.matrix;
        let pbar = p.complement();
        let diag_block = linalg::max_abs(&(pm * &self.matrix * pm))
            .max(linalg::max_abs(&(&pbar * &self.matrix * &pbar)));
        if diag_block > 1e-8 {
            return Err(CoreError::Numerical(format!(
                "Kato generator has diagonal blocks: residual {diag_block:.3e}"
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// resolvent quadrature
// ---------------------------------------------------------------------------

/// Resolvents `(H - z_m)^{-1}` on the trapezoid nodes of a contour, with the
/// quadrature factors `w_m = (r/M) e^{iθ_m}` at half-offset angles
/// `θ_m = 2π (m + 1/2) / M` (conjugation-symmetric node set).
struct ResolventSet {
    weights: Vec<Complex64>,
    resolvents: Vec<CMat>,
}

impl ResolventSet {
    fn build(h: &CMat, contour: &Contour, m: usize) -> Result<Self> {
        let mut weights = Vec::with_capacity(m);
        let mut resolvents = Vec::with_capacity(m);
        let dim = h.nrows();
        for k in 0..m {
            let theta = std::f64::consts::TAU * (k as f64 + 0.5) / m as f64;
            let z = contour.center + Complex64::from_polar(contour.radius, theta);
            let shifted = h - linalg::identity(dim).scale(1.0) * z;
            let r = linalg::inverse(&shifted).map_err(|_| {
                CoreError::ContourViolation(format!("resolvent singular at node z = {z}"))
            })?;
            weights.push(Complex64::from_polar(contour.radius / m as f64, theta));
            resolvents.push(r);
        }
        Ok(Self {
            weights,
            resolvents,
        })
    }

    /// `P = -(1/2πi) ∮ R dz ≈ -Σ_m w_m R_m`.
    fn projector(&self) -> CMat {
        let dim = self.resolvents[0].nrows();
        let mut acc = CMat::zeros(dim, dim);
        for (w, r) in self.weights.iter().zip(self.resolvents.iter()) {
            acc += r * *w;
        }
        -acc
    }

    /// `(1/2πi) ∮ R B R dz ≈ Σ_m w_m R_m B R_m`.
    fn sandwich(&self, b: &CMat) -> CMat {
        let dim = self.resolvents[0].nrows();
        let mut acc = CMat::zeros(dim, dim);
        for (w, r) in self.weights.iter().zip(self.resolvents.iter()) {
            acc += (r * b * r) * *w;
        }
        acc
    }

    /// `(1/2πi) ∮ (R Ḧ R - 2 R Ḣ R Ḣ R) dz`, the second time derivative of
    /// the projector.
    fn second(&self, hd: &CMat, hdd: &CMat) -> CMat {
        let dim = self.resolvents[0].nrows();
        let mut acc = CMat::zeros(dim, dim);
        for (w, r) in self.weights.iter().zip(self.resolvents.iter()) {
            let rhd = r * hd;
            acc += (r * hdd * r - &rhd * &rhd * r * c(2.0, 0.0)) * *w;
        }
        acc
    }

    /// `(1/2πi) ∮ (R H_tα R - R H_α R H_t R - R H_t R H_α R) dz`, the mixed
    /// `∂_α ∂_t` derivative of the projector.
    fn mixed(&self, h_t: &CMat, h_a: &CMat, h_ta: &CMat) -> CMat {
        let dim = self.resolvents[0].nrows();
        let mut acc = CMat::zeros(dim, dim);
        for (w, r) in self.weights.iter().zip(self.resolvents.iter()) {
            let rt = r * h_t;
            let ra = r * h_a;
            acc += (r * h_ta * r - &ra * &rt * r - &rt * &ra * r) * *w;
        }
        acc
    }
}

/// Run a contour quadrature with node doubling until the result settles
/// below [`QUAD_TOL`]; returns the converged value and the node count used.
fn converge_quadrature<F>(h: &CMat, contour: &Contour, eval: F) -> Result<(CMat, usize)>
where
    F: Fn(&ResolventSet) -> CMat,
{
    let mut m = contour.nodes.max(16);
    let mut prev = eval(&ResolventSet::build(h, contour, m)?);
    loop {
        let m2 = 2 * m;
        if m2 > MAX_NODES {
            return Err(CoreError::QuadratureNonConvergence(format!(
                "contour quadrature still moving after {m} nodes"
            )));
        }
        let next = eval(&ResolventSet::build(h, contour, m2)?);
        let diff = linalg::max_abs(&(&next - &prev));
        if diff < QUAD_TOL {
            return Ok((next, m2));
        }
        prev = next;
        m = m2;
    }
}

fn check_contour_against(h: &CMat, contour: &Contour) -> Result<Vec<f64>> {
    let (eigs, _) = linalg::hermitian_eigen(h)?;
    let margin = contour.min_margin(&eigs);
    if margin < CONTOUR_MARGIN {
        return Err(CoreError::ContourViolation(format!(
            "eigenvalue within {margin:.3e} of the contour circle"
        )));
    }
    let inside = contour.count_inside(&eigs);
    if inside == 0 || inside == eigs.len() {
        return Err(CoreError::ContourViolation(format!(
            "contour encloses {inside} of {} eigenvalues; it must separate the spectrum",
            eigs.len()
        )));
    }
    Ok(eigs)
}

// ---------------------------------------------------------------------------
// public operations
// ---------------------------------------------------------------------------

/// Riesz projector of the family at `(t, α)` through the given contour.
pub fn riesz_projector(
    family: &HamiltonianFamily,
    t: f64,
    alpha: f64,
    contour: &Contour,
) -> Result<Projector> {
    let h = family.evaluate(t, alpha)?;
    riesz_projector_of(&h, contour)
}

/// Riesz projector of a fixed Hermitian matrix.
pub fn riesz_projector_of(h: &CMat, contour: &Contour) -> Result<Projector> {
    let eigs = check_contour_against(h, contour)?;
    let expected_rank = contour.count_inside(&eigs);
    let (p, nodes) = converge_quadrature(h, contour, |set| set.projector())?;
    let rank = p.trace().re.round() as usize;
    if rank != expected_rank {
        return Err(CoreError::ContourViolation(format!(
            "projector trace {} disagrees with {expected_rank} enclosed eigenvalues",
            p.trace().re
        )));
    }
    let projector = Projector {
        matrix: p,
        rank,
        contour: Contour { nodes, ..*contour },
    };
    projector.validate()?;
    Ok(projector)
}

/// Which variable the projector derivative is taken in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivVar {
    T,
    Alpha,
}

/// `∂P` through the sandwiched contour formula `(1/2πi) ∮ R (∂H) R dz`.
pub fn projector_derivative(
    family: &HamiltonianFamily,
    t: f64,
    alpha: f64,
    contour: &Contour,
    which: DerivVar,
) -> Result<CMat> {
    let h = family.evaluate(t, alpha)?;
    let dh = match which {
        DerivVar::T => family.derivative_t(t, alpha)?,
        DerivVar::Alpha => family.derivative_alpha(t, alpha)?,
    };
    check_contour_against(&h, contour)?;
    let (dp, _) = converge_quadrature(&h, contour, |set| set.sandwich(&dh))?;
    Ok(dp)
}

/// Mixed derivative `∂_α Ṗ` through the three-term contour kernel.
pub fn projector_mixed_derivative(
    family: &HamiltonianFamily,
    t: f64,
    alpha: f64,
    contour: &Contour,
) -> Result<CMat> {
    let h = family.evaluate(t, alpha)?;
    let h_t = family.derivative_t(t, alpha)?;
    let h_a = family.derivative_alpha(t, alpha)?;
    let h_ta = family.derivative_t_alpha(t, alpha)?;
    check_contour_against(&h, contour)?;
    let (dtap, _) = converge_quadrature(&h, contour, |set| set.mixed(&h_t, &h_a, &h_ta))?;
    Ok(dtap)
}

/// Kato generator `K = i[Ṗ, P]` at `(t, α)`.
pub fn kato_generator(
    family: &HamiltonianFamily,
    t: f64,
    alpha: f64,
    contour: &Contour,
) -> Result<KatoGenerator> {
    let p = riesz_projector(family, t, alpha, contour)?;
    let dp = projector_derivative(family, t, alpha, contour, DerivVar::T)?;
    let k = KatoGenerator {
        matrix: linalg::commutator(&dp, &p.matrix) * c(0.0, 1.0),
    };
    k.validate(&p)?;
    Ok(k)
}

/// Reduced-resolvent map `R(B) = (1/2πi) ∮ (H-z)^{-1} B (H-z)^{-1} dz`.
pub fn reduced_resolvent_map(
    family: &HamiltonianFamily,
    t: f64,
    alpha: f64,
    contour: &Contour,
    b: &CMat,
) -> Result<CMat> {
    let h = family.evaluate(t, alpha)?;
    check_contour_against(&h, contour)?;
    let (rb, _) = converge_quadrature(&h, contour, |set| set.sandwich(b))?;
    Ok(rb)
}

/// Riesz projector of `H - εK` through the same contour.
pub fn superadiabatic_projector(
    family: &HamiltonianFamily,
    t: f64,
    alpha: f64,
    epsilon: f64,
    contour: &Contour,
) -> Result<Projector> {
    let h = family.evaluate(t, alpha)?;
    let k = kato_generator(family, t, alpha, contour)?;
    let h1 = &h - k.matrix.scale(epsilon);
    riesz_projector_of(&h1, contour).map_err(|e| match e {
        CoreError::ContourViolation(msg) => CoreError::ContourViolation(format!(
            "epsilon = {epsilon} closes the gap across the contour: {msg}"
        )),
        other => other,
    })
}

/// `D(B) = P₁ B P₁ + (I - P₁) B (I - P₁)`, the block-diagonal part of `B`
/// with respect to the projector pair.
pub fn block_diagonal_part(p1: &Projector, b: &CMat) -> CMat {
    let p = &p1.matrix;
    let pbar = p1.complement();
    p * b * p + &pbar * b * &pbar
}

// ---------------------------------------------------------------------------
// cluster tracking along trajectories
// ---------------------------------------------------------------------------

/// Walks a trajectory keeping one contour per spectral cluster, re-centering
/// only when an eigenvalue approaches within 25% of the radius (hysteresis,
/// so the contour is locally constant in `(t, α)`).
#[derive(Debug, Clone)]
pub struct ContourTracker {
    selector: SpectralSelector,
    center_hint: f64,
    current: Option<Contour>,
}

impl ContourTracker {
    pub fn new(selector: SpectralSelector) -> Self {
        Self {
            selector,
            center_hint: selector.e_ref(),
            current: None,
        }
    }

    pub fn selector(&self) -> SpectralSelector {
        self.selector
    }

    pub fn cluster_size(&self) -> usize {
        self.selector.cluster_size()
    }

    /// Contour enclosing the tracked cluster at `(t, α)`.
    pub fn contour_at(
        &mut self,
        family: &HamiltonianFamily,
        t: f64,
        alpha: f64,
    ) -> Result<Contour> {
        let eigs = family.eigenvalues(t, alpha)?;
        self.contour_for_spectrum(&eigs)
    }

    /// Same, from a precomputed ascending spectrum.
    pub fn contour_for_spectrum(&mut self, eigs: &[f64]) -> Result<Contour> {
        let size = self.selector.cluster_size();
        let (inside, outside) = SpectralSelector::split(self.center_hint, size, eigs)?;
        let cluster: Vec<f64> = inside.iter().map(|&k| eigs[k]).collect();
        let rest: Vec<f64> = outside.iter().map(|&k| eigs[k]).collect();
        self.center_hint = cluster.iter().sum::<f64>() / size as f64;
        if let Some(cur) = self.current {
            let ok = cluster
                .iter()
                .all(|&l| cur.radius - (c(l, 0.0) - cur.center).norm() >= 0.25 * cur.radius)
                && rest
                    .iter()
                    .all(|&m| (c(m, 0.0) - cur.center).norm() - cur.radius >= 0.25 * cur.radius);
            if ok {
                return Ok(cur);
            }
        }
        let fresh = Contour::enclosing(&cluster, &rest)?;
        self.current = Some(fresh);
        Ok(fresh)
    }
}

// ---------------------------------------------------------------------------
// combined spectral data at a point (shared by the propagators)
// ---------------------------------------------------------------------------

/// Projector, Kato generator and (optionally) their superadiabatic
/// counterparts at one `(t, α)` point, computed off a single resolvent set
/// per operator.
#[derive(Debug, Clone)]
pub struct SpectralPoint {
    pub p: CMat,
    pub k: CMat,
    /// Superadiabatic projector of `H - εK` (when `epsilon` was given).
    pub p1: Option<CMat>,
    /// `K⁽¹⁾ = i[Ṗ⁽¹⁾, P⁽¹⁾]`.
    pub k1: Option<CMat>,
    /// `D¹(K) = P⁽¹⁾ K P⁽¹⁾ + (I-P⁽¹⁾) K (I-P⁽¹⁾)`.
    pub d1k: Option<CMat>,
    pub nodes_used: usize,
}

/// Evaluate projector and generators at `(t, α)`.
///
/// With `epsilon` present the superadiabatic objects are included; this
/// needs the second time derivative of the family (`K̇ = i[P̈, P]` feeds
/// `∂_t H⁽¹⁾`).
pub fn spectral_point(
    family: &HamiltonianFamily,
    t: f64,
    alpha: f64,
    contour: &Contour,
    epsilon: Option<f64>,
) -> Result<SpectralPoint> {
    let h = family.evaluate(t, alpha)?;
    let hd = family.derivative_t(t, alpha)?;
    check_contour_against(&h, contour)?;
    let (p, nodes) = converge_quadrature(&h, contour, |set| set.projector())?;
    let set = ResolventSet::build(&h, contour, nodes)?;
    let dp = set.sandwich(&hd);
    let k = linalg::commutator(&dp, &p) * c(0.0, 1.0);

    let (p1, k1, d1k) = if let Some(eps) = epsilon {
        let hdd = family.derivative_tt(t, alpha)?;
        let ddp = set.second(&hd, &hdd);
        let kdot = linalg::commutator(&ddp, &p) * c(0.0, 1.0);
        let h1 = &h - k.scale(eps);
        let (eigs1, _) = linalg::hermitian_eigen(&h1)?;
        if contour.min_margin(&eigs1) < CONTOUR_MARGIN {
            return Err(CoreError::ContourViolation(format!(
                "epsilon = {eps} pushes an eigenvalue onto the contour"
            )));
        }
        let (p1, nodes1) = converge_quadrature(&h1, contour, |set| set.projector())?;
        let set1 = ResolventSet::build(&h1, contour, nodes1)?;
        let hd1 = &hd - kdot.scale(eps);
        let dp1 = set1.sandwich(&hd1);
        let k1 = linalg::commutator(&dp1, &p1) * c(0.0, 1.0);
        let pbar1 = linalg::identity(h.nrows()) - &p1;
        let d1k = &p1 * &k * &p1 + &pbar1 * &k * &pbar1;
        (Some(p1), Some(k1), Some(d1k))
    } else {
        (None, None, None)
    };

    Ok(SpectralPoint {
        p,
        k,
        p1,
        k1,
        d1k,
        nodes_used: nodes,
    })
}

/// Diagnostic dump: one CSV row per grid node with the projector rank,
/// idempotency residual and pointwise spectral gap.
pub fn projector_trajectory_csv(
    family: &HamiltonianFamily,
    alpha: f64,
    t_grid: &[f64],
    selector: SpectralSelector,
) -> Result<String> {
    let mut tracker = ContourTracker::new(selector);
    let mut out = String::from("t,rank,idempotency_residual,gap\n");
    for &t in t_grid {
        let eigs = family.eigenvalues(t, alpha)?;
        let contour = tracker.contour_for_spectrum(&eigs)?;
        let proj = riesz_projector(family, t, alpha, &contour)?;
        let idem = linalg::max_abs(&(&proj.matrix * &proj.matrix - &proj.matrix));
        let inside: Vec<f64> = eigs
            .iter()
            .copied()
            .filter(|&l| (c(l, 0.0) - contour.center).norm() < contour.radius)
            .collect();
        let gap = eigs
            .iter()
            .filter(|&&m| (c(m, 0.0) - contour.center).norm() >= contour.radius)
            .flat_map(|&m| inside.iter().map(move |&l| (m - l).abs()))
            .fold(f64::INFINITY, f64::min);
        out.push_str(&format!("{t},{},{idem:.3e},{gap:.6e}\n", proj.rank));
    }
    Ok(out)
}
