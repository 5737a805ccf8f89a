//! The bordered rank-two family and its closed-form holonomies.
//!
//! `H(z) = [[E, <z|], [|z>, 0]]` on `C^{n+1}` has spectrum
//! `{(E - √(E²+4‖z‖²))/2, 0 (n-1 fold), (E + √(E²+4‖z‖²))/2}` whenever
//! `z ≠ 0`; the permanently degenerate kernel carries a non-abelian
//! holonomy that is explicit in the `n = 3` special case. For loops in the
//! real parameters `(r₀, r₁, r₂)` with `z₁, z₂` of fixed common phase, the
//! holonomy angle equals a line integral of a one-form whose curl is a unit
//! monopole field; projected to the unit sphere it is the oriented solid
//! angle swept by the loop (with cartesian axes ordered `(x, y, z) =
//! (r₁, r₂, r₀)`; the one-form's singular string is the `r₀`-axis).
//!
//! Sign and conjugation conventions follow the eigenvector pair
//!
//! `ψ₁ ∝ z̄₂ e₂ − z̄₁ e₃`,
//! `ψ₂ ∝ (z̄₁² + z̄₂²) e₁ − z̄₀ (z̄₁ e₂ + z̄₂ e₃)`
//!
//! (the kernel condition fixes the conjugations). This pair is orthonormal
//! exactly on the stratum `z̄₀ · Im(z₁ z̄₂) = 0`, which contains every loop
//! family treated here; off the stratum the connection entries are not
//! defined and the operations below refuse the input.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::linalg::{self, CMat, CVec};
use crate::model::HamiltonianFamily;
use crate::spectral::{Contour, Projector};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

// ---------------------------------------------------------------------------
// the bordered matrix and its kernel
// ---------------------------------------------------------------------------

/// Bordered matrix `[[E, <z|], [|z>, 0]]` relative to the canonical basis.
pub fn build_h(z: &[Complex64], e: f64) -> CMat {
    let n = z.len();
    let mut h = CMat::zeros(n + 1, n + 1);
    h[(0, 0)] = c(e, 0.0);
    for (j, &zj) in z.iter().enumerate() {
        h[(0, j + 1)] = zj.conj();
        h[(j + 1, 0)] = zj;
    }
    h
}

/// Nonzero eigenvalues `(E ∓ √(E² + 4‖z‖²))/2` of the bordered matrix.
pub fn bordered_extremes(e: f64, z_norm: f64) -> (f64, f64) {
    let s = (e * e + 4.0 * z_norm * z_norm).sqrt();
    (0.5 * (e - s), 0.5 * (e + s))
}

fn z_norm(z: &[Complex64]) -> f64 {
    z.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Projector onto the `(n-1)`-fold degenerate kernel of the bordered matrix:
/// block `diag(0, I - |ẑ><ẑ|)`.
pub fn kernel_projector(z: &[Complex64], e: f64) -> Result<Projector> {
    let n = z.len();
    let nz = z_norm(z);
    if nz <= 0.0 {
        return Err(CoreError::Domain(
            "kernel projector needs a nonzero border vector".into(),
        ));
    }
    let mut p = CMat::zeros(n + 1, n + 1);
    for j in 0..n {
        for k in 0..n {
            let delta = if j == k { linalg::ONE } else { linalg::ZERO };
            p[(j + 1, k + 1)] = delta - z[j] * z[k].conj() / c(nz * nz, 0.0);
        }
    }
    let (lo, hi) = bordered_extremes(e, nz);
    let gap = lo.abs().min(hi.abs());
    let contour = Contour::new(c(0.0, 0.0), 0.5 * gap)?;
    Ok(Projector {
        matrix: p,
        rank: n - 1,
        contour,
    })
}

/// Normalized kernel eigenvectors of the `n = 3` bordered matrix.
///
/// Returns `(ψ₁, ψ₂)` as 4-vectors. Valid whenever `|z₁|² + |z₂|² > 0`; the
/// second normalization degenerates only for `z₁² + z₂² = 0` together with
/// `z₀ = 0`, which is rejected. When `z₁² + z₂² = 0` with `z₀ ≠ 0` the
/// formulas remain valid (`ψ₂` keeps only its `z₀` part).
pub fn special_eigenvectors(z0: Complex64, z1: Complex64, z2: Complex64) -> Result<(CVec, CVec)> {
    let m12 = z1.norm_sqr() + z2.norm_sqr();
    if m12 <= 0.0 {
        return Err(CoreError::Domain(
            "special eigenvectors need |z1|^2 + |z2|^2 > 0".into(),
        ));
    }
    let n1 = 1.0 / m12.sqrt();
    let s = z1 * z1 + z2 * z2;
    let denom2 = s.norm_sqr() + z0.norm_sqr() * m12;
    if denom2 < 1e-14 {
        return Err(CoreError::DegenerateNormalization(format!(
            "N2 denominator {denom2:.3e} vanishes (z1^2 + z2^2 = 0 and z0 = 0)"
        )));
    }
    let n2 = 1.0 / denom2.sqrt();
    let psi1 = CVec::from_vec(vec![
        linalg::ZERO,
        linalg::ZERO,
        z2.conj() * c(n1, 0.0),
        -z1.conj() * c(n1, 0.0),
    ]);
    let psi2 = CVec::from_vec(vec![
        linalg::ZERO,
        s.conj() * c(n2, 0.0),
        -z0.conj() * z1.conj() * c(n2, 0.0),
        -z0.conj() * z2.conj() * c(n2, 0.0),
    ]);
    Ok((psi1, psi2))
}

/// Connection entries `Γ = [-<ψ_i|dψ_j>]` of the kernel frame, evaluated on
/// the parameter differentials `dz`.
///
/// The diagonal entries are exact for any complex `z`; the off-diagonal
/// closed form requires the frame to be orthonormal, i.e.
/// `z̄₀ · Im(z₁ z̄₂) = 0`, and the input is rejected otherwise.
pub fn gamma_entries(z: [Complex64; 3], dz: [Complex64; 3]) -> Result<CMat> {
    let [z0, z1, z2] = z;
    let [dz0, dz1, dz2] = dz;
    let m12 = z1.norm_sqr() + z2.norm_sqr();
    if m12 <= 0.0 {
        return Err(CoreError::Domain(
            "gamma entries need |z1|^2 + |z2|^2 > 0".into(),
        ));
    }
    let ortho_defect =
        (z0.conj() * (z1 * z2.conj() - z2 * z1.conj())).norm() / (m12 + z0.norm_sqr());
    if ortho_defect > 1e-10 {
        return Err(CoreError::Frame(format!(
            "kernel frame not orthonormal (defect {ortho_defect:.3e}); \
             gamma entries need z0 Im(z1 conj(z2)) = 0"
        )));
    }
    let s = z1 * z1 + z2 * z2;
    let n1_sq = 1.0 / m12;
    let denom2 = s.norm_sqr() + z0.norm_sqr() * m12;
    if denom2 < 1e-14 {
        return Err(CoreError::DegenerateNormalization(format!(
            "N2 denominator {denom2:.3e} vanishes"
        )));
    }
    let n2_sq = 1.0 / denom2;
    let n1 = n1_sq.sqrt();
    let n2 = n2_sq.sqrt();

    let d11 = c(0.0, n1_sq * (z1 * dz1.conj() + z2 * dz2.conj()).im);
    let inner22 = s * (z1.conj() * dz1.conj() + z2.conj() * dz2.conj()) * c(2.0, 0.0)
        + (z1 * dz1.conj() + z2 * dz2.conj()) * c(z0.norm_sqr(), 0.0)
        + z0 * dz0.conj() * c(m12, 0.0);
    let d22 = c(0.0, n2_sq * inner22.im);
    let d21 = z0 * (z2 * dz1.conj() - z1 * dz2.conj()) * c(n1 * n2, 0.0);
    let d12 = -d21.conj();

    let mut gamma = CMat::zeros(2, 2);
    gamma[(0, 0)] = -d11;
    gamma[(0, 1)] = -d12;
    gamma[(1, 0)] = -d21;
    gamma[(1, 1)] = -d22;
    Ok(gamma)
}

// ---------------------------------------------------------------------------
// loops in (r0, r1, r2) space
// ---------------------------------------------------------------------------

type PathFn = Arc<dyn Fn(f64) -> [f64; 3] + Send + Sync>;

/// Piecewise-smooth closed path `t ∈ [0,1] → (r₀, r₁, r₂)` given as smooth
/// segments, each parametrised on `[0, 1]`.
#[derive(Clone)]
pub struct ParamLoop {
    segments: Vec<PathFn>,
    pub name: String,
}

impl ParamLoop {
    pub fn from_segments(name: impl Into<String>, segments: Vec<PathFn>) -> Self {
        Self {
            segments,
            name: name.into(),
        }
    }

    pub fn from_closure<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64) -> [f64; 3] + Send + Sync + 'static,
    {
        Self::from_segments(name, vec![Arc::new(f)])
    }

    /// Latitude circle of colatitude `theta_c` about the given axis
    /// (0 = r₀, 1 = r₁, 2 = r₂), `orientation = ±1`.
    pub fn latitude(axis: usize, theta_c: f64, orientation: f64) -> Self {
        let tau = std::f64::consts::TAU;
        let s = orientation.signum();
        Self::from_closure(
            format!("latitude(axis=r{axis}, theta_c={theta_c:.4}, orient={s:+.0})"),
            move |t| {
                let phi = s * tau * t;
                let (a, b) = (theta_c.sin() * phi.cos(), theta_c.sin() * phi.sin());
                match axis {
                    0 => [theta_c.cos(), a, b],
                    1 => [b, theta_c.cos(), a],
                    _ => [a, b, theta_c.cos()],
                }
            },
        )
    }

    /// Closed polygon along great circles through unit vertices.
    pub fn great_circle_polygon(name: impl Into<String>, vertices: &[[f64; 3]]) -> Self {
        let mut segs: Vec<PathFn> = Vec::new();
        let m = vertices.len();
        for k in 0..m {
            let a = normalize3(vertices[k]);
            let b = normalize3(vertices[(k + 1) % m]);
            segs.push(Arc::new(move |s: f64| slerp(a, b, s)));
        }
        Self::from_segments(name, segs)
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn point(&self, seg: usize, s: f64) -> [f64; 3] {
        (self.segments[seg])(s)
    }

    pub fn reversed(&self) -> Self {
        let segs: Vec<PathFn> = self
            .segments
            .iter()
            .rev()
            .map(|f| {
                let f = f.clone();
                Arc::new(move |s: f64| f(1.0 - s)) as PathFn
            })
            .collect();
        Self::from_segments(format!("{}::reversed", self.name), segs)
    }

    fn closure_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let m = self.segments.len();
        for k in 0..m {
            let end = self.point(k, 1.0);
            let next = self.point((k + 1) % m, 0.0);
            worst = worst.max(dist3(end, next));
        }
        worst
    }
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn slerp(a: [f64; 3], b: [f64; 3], s: f64) -> [f64; 3] {
    let cosg = dot3(a, b).clamp(-1.0, 1.0);
    let g = cosg.acos();
    if g < 1e-12 {
        return a;
    }
    let (wa, wb) = (((1.0 - s) * g).sin() / g.sin(), (s * g).sin() / g.sin());
    [
        wa * a[0] + wb * b[0],
        wa * a[1] + wb * b[1],
        wa * a[2] + wb * b[2],
    ]
}

/// The holonomy one-form `-r₀(r₁ dr₂ - r₂ dr₁) / ((r₁²+r₂²)√(r₀²+r₁²+r₂²))`
/// evaluated at `r` on the velocity `dr`.
fn omega_one_form(r: [f64; 3], dr: [f64; 3]) -> Result<f64> {
    let perp = r[1] * r[1] + r[2] * r[2];
    if perp <= 1e-20 {
        return Err(CoreError::Domain(
            "loop touches the r0-axis (r1^2 + r2^2 = 0)".into(),
        ));
    }
    let norm = (r[0] * r[0] + perp).sqrt();
    Ok(-r[0] * (r[1] * dr[2] - r[2] * dr[1]) / (perp * norm))
}

/// Line integral of the holonomy one-form along a closed loop, by composite
/// Simpson per segment with node doubling until the value settles to 1e-8.
pub fn omega_line_integral(loop_: &ParamLoop, initial_nodes: usize) -> Result<f64> {
    let closure = loop_.closure_residual();
    if closure > 1e-10 {
        return Err(CoreError::NonClosure(closure));
    }
    let eval = |nodes_per_seg: usize| -> Result<f64> {
        let n = nodes_per_seg | 1; // odd
        let h = 1.0 / (n - 1) as f64;
        let mut total = 0.0;
        for seg in 0..loop_.n_segments() {
            let f = |s: f64| loop_.point(seg, s.clamp(0.0, 1.0));
            let mut samples = Vec::with_capacity(n);
            for k in 0..n {
                let s = k as f64 * h;
                let r = f(s);
                let dr = path_velocity(&f, s, h);
                samples.push(omega_one_form(r, dr)?);
            }
            total += linalg::simpson_scalar(&samples, h);
        }
        Ok(total)
    };
    let mut nodes = initial_nodes.max(33);
    let mut prev = eval(nodes)?;
    loop {
        nodes *= 2;
        if nodes > 1 << 20 {
            return Err(CoreError::QuadratureNonConvergence(format!(
                "omega line integral still moving at {nodes} nodes/segment"
            )));
        }
        let next = eval(nodes)?;
        if (next - prev).abs() < 1e-8 {
            return Ok(next);
        }
        prev = next;
    }
}

/// Path velocity by fourth-order finite differences (one-sided at segment
/// endpoints), with the step tied to the sampling resolution.
fn path_velocity<F: Fn(f64) -> [f64; 3]>(f: &F, s: f64, h_grid: f64) -> [f64; 3] {
    let h = (h_grid * 0.25).min(1e-4);
    let mut out = [0.0; 3];
    if s >= 2.0 * h && s <= 1.0 - 2.0 * h {
        let (fm2, fm1, fp1, fp2) = (f(s - 2.0 * h), f(s - h), f(s + h), f(s + 2.0 * h));
        for i in 0..3 {
            out[i] = (fm2[i] - 8.0 * fm1[i] + 8.0 * fp1[i] - fp2[i]) / (12.0 * h);
        }
    } else {
        let sg = if s < 0.5 { 1.0 } else { -1.0 };
        let (f0, f1, f2, f3) = (
            f(s),
            f(s + sg * h),
            f(s + 2.0 * sg * h),
            f(s + 3.0 * sg * h),
        );
        for i in 0..3 {
            out[i] = sg * (-11.0 * f0[i] + 18.0 * f1[i] - 9.0 * f2[i] + 2.0 * f3[i]) / (6.0 * h);
        }
    }
    out
}

/// Oriented solid angle of the loop's projection onto the unit sphere, with
/// the spanning region chosen as the Stokes construction for the holonomy
/// one-form dictates.
///
/// The loop is polygonalised, the area of the region to its left is computed
/// from the geodesic turning angles (Gauss-Bonnet), and one full sphere
/// turn (2π) is subtracted for each singular point of the one-form (the
/// intersections `±(r₁, r₂, r₀) = ±ẑ` of the `r₀`-axis with the sphere)
/// strictly inside the left region. This makes the result equal to
/// [`omega_line_integral`] on every simple loop that stays off the axis:
/// latitude caps away from the axis give the cap area, the equator of the
/// axis gives zero, and orientation reversal flips the sign. Singular
/// points lying on the loop itself contribute no correction. Loops that
/// self-intersect after projection are rejected (the excess formula is
/// invalid there), as are loops through the origin.
pub fn omega_solid_angle(loop_: &ParamLoop) -> Result<f64> {
    let closure = loop_.closure_residual();
    if closure > 1e-10 {
        return Err(CoreError::NonClosure(closure));
    }
    let polygon = |nodes_per_seg: usize| -> Result<Vec<[f64; 3]>> {
        let mut verts = Vec::with_capacity(nodes_per_seg * loop_.n_segments());
        for seg in 0..loop_.n_segments() {
            for k in 0..nodes_per_seg {
                let s = k as f64 / nodes_per_seg as f64;
                let r = loop_.point(seg, s);
                let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                if norm < 1e-12 {
                    return Err(CoreError::Domain(
                        "loop passes through the origin; no spherical projection".into(),
                    ));
                }
                // cartesian axes (x, y, z) = (r1, r2, r0)
                verts.push([r[1] / norm, r[2] / norm, r[0] / norm]);
            }
        }
        dedup_vertices(&mut verts);
        Ok(verts)
    };

    // self-intersection test on a moderate polygonalisation
    let coarse = polygon(256 / loop_.n_segments().max(1) + 8)?;
    if let Some(t_near) = first_self_intersection(&coarse) {
        return Err(CoreError::SelfIntersection(t_near));
    }
    let poles_inside = [1.0, -1.0]
        .iter()
        .filter(|&&sign| pole_in_left_region(&coarse, [0.0, 0.0, sign]))
        .count() as f64;

    let mut nodes = 512usize;
    let mut prev = left_area(&polygon(nodes)?)?;
    loop {
        nodes *= 2;
        if nodes * loop_.n_segments() > 1 << 20 {
            return Err(CoreError::QuadratureNonConvergence(format!(
                "spherical excess still moving at {nodes} nodes/segment"
            )));
        }
        let next = left_area(&polygon(nodes)?)?;
        if (next - prev).abs() < 1e-7 {
            return Ok(next - std::f64::consts::TAU * poles_inside);
        }
        prev = next;
    }
}

/// Is `p` strictly inside the region to the left of the polygon?
///
/// Stereographic projection from `-p` sends `p` to the origin; the left
/// region of the spherical loop maps to the left region of the planar
/// image. The origin lies in it iff the image winds `+1` around the origin,
/// or winds `0` while running clockwise (left side unbounded). Points on or
/// next to the polygon report `false`.
fn pole_in_left_region(verts: &[[f64; 3]], p: [f64; 3]) -> bool {
    let anti = [-p[0], -p[1], -p[2]];
    if verts
        .iter()
        .any(|v| dist3(*v, p) < 1e-9 || dist3(*v, anti) < 1e-9)
    {
        return false;
    }
    // orthonormal tangent frame at p
    let seed = if p[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let e1 = normalize3(cross3(p, seed));
    let e2 = cross3(p, e1);
    // stereographic image from -p: (u, v) = (x·e1, x·e2) / (1 + x·p)
    let image: Vec<(f64, f64)> = verts
        .iter()
        .map(|v| {
            let denom = 1.0 + dot3(*v, p);
            (dot3(*v, e1) / denom, dot3(*v, e2) / denom)
        })
        .collect();
    let mut winding = 0.0;
    let mut shoelace = 0.0;
    let n = image.len();
    for k in 0..n {
        let (u1, v1) = image[k];
        let (u2, v2) = image[(k + 1) % n];
        let a1 = v1.atan2(u1);
        let a2 = v2.atan2(u2);
        let mut da = a2 - a1;
        if da > std::f64::consts::PI {
            da -= std::f64::consts::TAU;
        } else if da < -std::f64::consts::PI {
            da += std::f64::consts::TAU;
        }
        winding += da;
        shoelace += u1 * v2 - u2 * v1;
    }
    let w = (winding / std::f64::consts::TAU).round() as i64;
    w == 1 || (w == 0 && shoelace < 0.0)
}

fn dedup_vertices(verts: &mut Vec<[f64; 3]>) {
    verts.dedup_by(|a, b| dist3(*a, *b) < 1e-13);
    if verts.len() > 1 && dist3(verts[0], *verts.last().unwrap()) < 1e-13 {
        verts.pop();
    }
}

/// Gauss-Bonnet area of the region to the left of the spherical polygon:
/// `2π - Σ turning angles`, in `(0, 4π)`.
fn left_area(verts: &[[f64; 3]]) -> Result<f64> {
    let n = verts.len();
    if n < 3 {
        return Err(CoreError::Domain(
            "spherical polygon needs 3+ vertices".into(),
        ));
    }
    let mut turning = 0.0;
    for k in 0..n {
        let a = verts[(k + n - 1) % n];
        let b = verts[k];
        let cc = verts[(k + 1) % n];
        let g_in = dot3(a, b).clamp(-1.0, 1.0).acos();
        let g_out = dot3(b, cc).clamp(-1.0, 1.0).acos();
        if g_in < 1e-14 || g_out < 1e-14 {
            continue;
        }
        // geodesic tangents at b: arriving from a, departing towards c
        let t_in = normalize3([
            g_in.cos() * b[0] - a[0],
            g_in.cos() * b[1] - a[1],
            g_in.cos() * b[2] - a[2],
        ]);
        let t_out = normalize3([
            cc[0] - g_out.cos() * b[0],
            cc[1] - g_out.cos() * b[1],
            cc[2] - g_out.cos() * b[2],
        ]);
        let cr = cross3(t_in, t_out);
        turning += dot3(b, cr).atan2(dot3(t_in, t_out));
    }
    Ok(std::f64::consts::TAU - turning)
}

/// First self-intersection of the spherical polygon, as an approximate
/// fractional position along the loop, if any.
fn first_self_intersection(verts: &[[f64; 3]]) -> Option<f64> {
    let n = verts.len();
    // self-touching loops: non-adjacent vertices closer than half an edge
    let max_edge = (0..n)
        .map(|k| dist3(verts[k], verts[(k + 1) % n]))
        .fold(0.0f64, f64::max);
    for i in 0..n {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if dist3(verts[i], verts[j]) < 0.5 * max_edge {
                return Some(i as f64 / n as f64);
            }
        }
    }
    let arc_contains = |a: [f64; 3], b: [f64; 3], nrm: [f64; 3], p: [f64; 3]| -> bool {
        dot3(cross3(a, p), nrm) > 1e-12 && dot3(cross3(p, b), nrm) > 1e-12
    };
    for i in 0..n {
        let (a, b) = (verts[i], verts[(i + 1) % n]);
        let n1 = cross3(a, b);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue; // adjacent through the wrap
            }
            let (cc, d) = (verts[j], verts[(j + 1) % n]);
            let n2 = cross3(cc, d);
            let dir = cross3(n1, n2);
            let len = dot3(dir, dir).sqrt();
            if len < 1e-18 {
                continue; // co-planar arcs; overlapping duplicates excluded upstream
            }
            let u = [dir[0] / len, dir[1] / len, dir[2] / len];
            for cand in [u, [-u[0], -u[1], -u[2]]] {
                if arc_contains(a, b, n1, cand) && arc_contains(cc, d, n2, cand) {
                    return Some(i as f64 / n as f64);
                }
            }
        }
    }
    None
}

/// Closed-form two-by-two holonomy for `θ₁ = θ₂ = 0` loops:
/// `[[cos Ω, sin Ω e^{-iθ₀}], [-sin Ω e^{iθ₀}, cos Ω]]`.
pub fn closed_form_b1(omega: f64, theta0: f64) -> CMat {
    let (s, co) = omega.sin_cos();
    CMat::from_row_slice(
        2,
        2,
        &[
            c(co, 0.0),
            Complex64::from_polar(s, -theta0),
            -Complex64::from_polar(s, theta0),
            c(co, 0.0),
        ],
    )
}

/// Holonomy for a connection `Γ(t) = ρ(t) [[0, -e^{-iϑ}], [e^{iϑ}, 0]]` with
/// constant phase `ϑ`: `B(t) = exp(∫ρ · M)`.
///
/// Takes samples of the off-diagonal generator entry `x(t) = ρ(t) e^{iϑ}` on
/// a uniform grid (odd length); rejects inputs whose phase is not constant.
pub fn constant_phase_b(x_samples: &[Complex64]) -> Result<CMat> {
    let n = x_samples.len();
    if n < 3 || n % 2 == 0 {
        return Err(CoreError::Domain(
            "constant_phase_b needs an odd number (>= 3) of samples".into(),
        ));
    }
    let scale = x_samples.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    if scale == 0.0 {
        return Ok(linalg::identity(2));
    }
    let anchor = x_samples
        .iter()
        .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
        .unwrap();
    let vartheta = anchor.arg();
    let mut rho = Vec::with_capacity(n);
    for z in x_samples {
        let w = z * Complex64::from_polar(1.0, -vartheta);
        if w.im.abs() > 1e-8 * scale {
            return Err(CoreError::NonConstantPhase(format!(
                "arg x(t) varies; residual {:.3e} of |x| scale",
                w.im.abs() / scale
            )));
        }
        rho.push(w.re);
    }
    let h = 1.0 / (n - 1) as f64;
    let s = linalg::simpson_scalar(&rho, h);
    Ok(rotation_exp(s, vartheta))
}

/// `exp(s M)` with `M = [[0, -e^{-iϑ}], [e^{iϑ}, 0]]`.
fn rotation_exp(s: f64, vartheta: f64) -> CMat {
    let (sn, cs) = s.sin_cos();
    CMat::from_row_slice(
        2,
        2,
        &[
            c(cs, 0.0),
            -Complex64::from_polar(sn, -vartheta),
            Complex64::from_polar(sn, vartheta),
            c(cs, 0.0),
        ],
    )
}

// ---------------------------------------------------------------------------
// ZLoop: bordered families from parameter paths
// ---------------------------------------------------------------------------

type ZFn = Arc<dyn Fn(f64, f64) -> Vec<Complex64> + Send + Sync>;
type EFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A `C³` closed path `(t, α) → z(t, α) ∈ C^n` together with the corner
/// energy `E(t, α)`, generating the bordered family `H(z(t,α), E(t,α))`.
///
/// When `phase_fixed` is set, the path is re-phased constructively so that
/// `<ẑ|dẑ/dt> ≡ 0`: `z̃ = e^{-iθ(t,α)} z` with `θ̇ = Im <z|ż> / ‖z‖²`,
/// integrated by cumulative quadrature (cached per α).
#[derive(Clone)]
pub struct ZLoop {
    pub n: usize,
    z: ZFn,
    dz_dt: Option<ZFn>,
    d2z_dt: Option<ZFn>,
    dz_dalpha: Option<ZFn>,
    e: EFn,
    de_dt: Option<EFn>,
    de_dalpha: Option<EFn>,
    pub phase_fixed: bool,
    phase_cache: Arc<RwLock<BTreeMap<u64, Arc<Vec<f64>>>>>,
}

const PHASE_TABLE_LEN: usize = 8193;

impl ZLoop {
    pub fn new<Z, E>(n: usize, z: Z, e: E) -> Self
    where
        Z: Fn(f64, f64) -> Vec<Complex64> + Send + Sync + 'static,
        E: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            n,
            z: Arc::new(z),
            dz_dt: None,
            d2z_dt: None,
            dz_dalpha: None,
            e: Arc::new(e),
            de_dt: None,
            de_dalpha: None,
            phase_fixed: false,
            phase_cache: Arc::new(RwLock::new(BTreeMap::new())),
        }
    }

    pub fn with_dz_dt<Z>(mut self, f: Z) -> Self
    where
        Z: Fn(f64, f64) -> Vec<Complex64> + Send + Sync + 'static,
    {
        self.dz_dt = Some(Arc::new(f));
        self
    }

    pub fn with_d2z_dt<Z>(mut self, f: Z) -> Self
    where
        Z: Fn(f64, f64) -> Vec<Complex64> + Send + Sync + 'static,
    {
        self.d2z_dt = Some(Arc::new(f));
        self
    }

    pub fn with_dz_dalpha<Z>(mut self, f: Z) -> Self
    where
        Z: Fn(f64, f64) -> Vec<Complex64> + Send + Sync + 'static,
    {
        self.dz_dalpha = Some(Arc::new(f));
        self
    }

    pub fn with_de_dt<E>(mut self, f: E) -> Self
    where
        E: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.de_dt = Some(Arc::new(f));
        self
    }

    pub fn with_de_dalpha<E>(mut self, f: E) -> Self
    where
        E: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.de_dalpha = Some(Arc::new(f));
        self
    }

    pub fn with_phase_fixed(mut self, fixed: bool) -> Self {
        self.phase_fixed = fixed;
        self
    }

    /// `Im <z|ż> / ‖z‖²`, the phase-fixing rate.
    fn phase_rate(&self, t: f64, alpha: f64) -> f64 {
        let z = (self.z)(t, alpha);
        let dz = match &self.dz_dt {
            Some(f) => f(t, alpha),
            None => fd_vec(&self.z, t, alpha),
        };
        let u: Complex64 = z.iter().zip(dz.iter()).map(|(a, b)| a.conj() * b).sum();
        let n2: f64 = z.iter().map(|v| v.norm_sqr()).sum();
        u.im / n2
    }

    fn phase_table(&self, alpha: f64) -> Arc<Vec<f64>> {
        let key = alpha.to_bits();
        if let Some(tab) = self.phase_cache.read().unwrap().get(&key) {
            return tab.clone();
        }
        let n = PHASE_TABLE_LEN;
        let h = 1.0 / (n - 1) as f64;
        let g: Vec<f64> = (0..n)
            .map(|k| self.phase_rate(k as f64 * h, alpha))
            .collect();
        let mut theta = vec![0.0; n];
        for k in 0..n - 1 {
            // locally cubic cumulative rule
            theta[k + 1] = theta[k]
                + if k + 2 < n {
                    h / 12.0 * (5.0 * g[k] + 8.0 * g[k + 1] - g[k + 2])
                } else {
                    h / 12.0 * (-g[k - 1] + 8.0 * g[k] + 5.0 * g[k + 1])
                };
        }
        let tab = Arc::new(theta);
        self.phase_cache.write().unwrap().insert(key, tab.clone());
        tab
    }

    fn phase_at(&self, t: f64, alpha: f64) -> f64 {
        let tab = self.phase_table(alpha);
        let h = 1.0 / (PHASE_TABLE_LEN - 1) as f64;
        lagrange6_scalar(&tab, h, t.clamp(0.0, 1.0))
    }

    /// The (possibly re-phased) path actually used to build matrices.
    pub fn z_effective(&self, t: f64, alpha: f64) -> Vec<Complex64> {
        let z = (self.z)(t, alpha);
        if !self.phase_fixed {
            return z;
        }
        let phase = Complex64::from_polar(1.0, -self.phase_at(t, alpha));
        z.into_iter().map(|v| v * phase).collect()
    }

    pub fn e_at(&self, t: f64, alpha: f64) -> f64 {
        (self.e)(t, alpha)
    }

    /// Checks `‖z‖ > 0` on the grid, and the phase-fixing identity when set.
    pub fn validate_on_grid(&self, t_grid: &[f64], alpha: f64) -> Result<()> {
        for &t in t_grid {
            let z = self.z_effective(t, alpha);
            let nz = z_norm(&z);
            if nz <= 1e-12 {
                return Err(CoreError::Domain(format!(
                    "border vector vanishes at t = {t}"
                )));
            }
            if self.phase_fixed {
                let h = 1e-5;
                let tl = (t - h).max(0.0);
                let tr = (t + h).min(1.0);
                let zl = self.z_effective(tl, alpha);
                let zr = self.z_effective(tr, alpha);
                let dz: Vec<Complex64> = zr
                    .iter()
                    .zip(zl.iter())
                    .map(|(a, b)| (a - b) / c(tr - tl, 0.0))
                    .collect();
                let zt = self.z_effective(t, alpha);
                let u: Complex64 = zt.iter().zip(dz.iter()).map(|(a, b)| a.conj() * b).sum();
                if (u.im / (nz * nz)).abs() > 1e-8 {
                    return Err(CoreError::NonConstantPhase(format!(
                        "phase fixing violated at t = {t}: <z|dz> imaginary part {:.3e}",
                        u.im / (nz * nz)
                    )));
                }
            }
        }
        Ok(())
    }

    /// The bordered Hamiltonian family generated by this path.
    pub fn family(&self) -> HamiltonianFamily {
        let dim = self.n + 1;
        let me = self.clone();
        let mut fam = HamiltonianFamily::new(dim, move |t, a| {
            build_h(&me.z_effective(t, a), me.e_at(t, a))
        })
        .with_periodic_t(true)
        .with_note("bordered rank-two family from a parameter loop");

        if self.phase_fixed {
            // re-phased time derivative: d/dt (e^{-iθ} z) = e^{-iθ}(ż - i θ̇ z)
            if self.dz_dt.is_some() {
                let me = self.clone();
                fam = fam.with_dt(move |t, a| {
                    let z = (me.z)(t, a);
                    let dz = (me.dz_dt.as_ref().unwrap())(t, a);
                    let g = me.phase_rate(t, a);
                    let phase = Complex64::from_polar(1.0, -me.phase_at(t, a));
                    let zt: Vec<Complex64> = z
                        .iter()
                        .zip(dz.iter())
                        .map(|(zv, dv)| phase * (dv - Complex64::new(0.0, g) * zv))
                        .collect();
                    let de = match &me.de_dt {
                        Some(f) => f(t, a),
                        None => 0.0,
                    };
                    build_h(&zt, de)
                });
            }
            return fam;
        }

        if let (Some(dz), Some(de)) = (self.dz_dt.clone(), self.de_dt.clone()) {
            fam = fam.with_dt(move |t, a| build_h(&dz(t, a), de(t, a)));
        }
        if self.dz_dt.is_some() {
            if let Some(d2z) = self.d2z_dt.clone() {
                fam = fam.with_d2t(move |t, a| build_h(&d2z(t, a), 0.0));
            }
        }
        if let (Some(dza), Some(dea)) = (self.dz_dalpha.clone(), self.de_dalpha.clone()) {
            fam = fam.with_dalpha(move |t, a| build_h(&dza(t, a), dea(t, a)));
        }
        fam
    }
}

fn fd_vec(f: &ZFn, t: f64, alpha: f64) -> Vec<Complex64> {
    let h = 1e-6;
    let (tl, tr) = if t < h {
        (t, t + h)
    } else if t > 1.0 - h {
        (t - h, t)
    } else {
        (t - h, t + h)
    };
    let zl = f(tl, alpha);
    let zr = f(tr, alpha);
    zr.iter()
        .zip(zl.iter())
        .map(|(a, b)| (a - b) / c(tr - tl, 0.0))
        .collect()
}

fn lagrange6_scalar(samples: &[f64], h: f64, x: f64) -> f64 {
    let n = samples.len();
    let pos = x / h;
    let i0 = ((pos.floor() as isize) - 2).clamp(0, (n - 6) as isize) as usize;
    let mut out = 0.0;
    for j in 0..6 {
        let xj = (i0 + j) as f64;
        let mut w = 1.0;
        for m in 0..6 {
            if m != j {
                let xm = (i0 + m) as f64;
                w *= (pos - xm) / (xj - xm);
            }
        }
        out += samples[i0 + j] * w;
    }
    out
}

// ---------------------------------------------------------------------------
// concrete fixtures
// ---------------------------------------------------------------------------

/// The 4x4 special-case fixture: the `(r₀, r₁, r₂)` path is a latitude loop
/// of colatitude `θ_c(α) = theta_c + theta_c_slope · α` about the `r₁`-axis
/// (so the enclosed spherical cap avoids the one-form's singular axis),
/// `z₀ = r₀ e^{iθ₀(α)}` with `θ₀(α) = theta0 + theta0_slope · α`, and
/// `z₁ = r₁, z₂ = r₂` real.
///
/// `‖z‖ ≡ 1`, the kernel eigenvalue 0 is doubly degenerate with gap
/// `(√(E²+4) - |E|)/2`, and the transported-kernel holonomy after a period
/// is the closed form `closed_form_b1(Ω, θ₀)` with `Ω` the cap solid angle.
/// The `θ₀` dependence is a gauge rotation; `theta_c_slope` deforms the loop
/// itself, so with it the dynamics at different α are not unitarily related.
#[derive(Clone, Debug)]
pub struct SpecialCaseFixture {
    pub theta_c: f64,
    pub theta_c_slope: f64,
    pub theta0: f64,
    pub theta0_slope: f64,
    pub energy: f64,
}

impl Default for SpecialCaseFixture {
    fn default() -> Self {
        Self {
            theta_c: std::f64::consts::FRAC_PI_4,
            theta_c_slope: 0.0,
            theta0: 0.7,
            theta0_slope: 0.3,
            energy: 0.0,
        }
    }
}

impl SpecialCaseFixture {
    pub fn new(theta_c: f64, theta0: f64, theta0_slope: f64, energy: f64) -> Result<Self> {
        Self {
            theta_c,
            theta_c_slope: 0.0,
            theta0,
            theta0_slope,
            energy,
        }
        .validated()
    }

    pub fn with_theta_c_slope(mut self, slope: f64) -> Result<Self> {
        self.theta_c_slope = slope;
        self.validated()
    }

    fn validated(self) -> Result<Self> {
        for alpha in [0.0, 1.0] {
            let th = self.theta_c_at(alpha);
            if !(1e-3..std::f64::consts::FRAC_PI_2).contains(&th) {
                return Err(CoreError::Config(format!(
                    "theta_c(α = {alpha}) = {th} outside (0, π/2); the loop must stay off the r0-axis"
                )));
            }
        }
        Ok(self)
    }

    pub fn theta0_at(&self, alpha: f64) -> f64 {
        self.theta0 + self.theta0_slope * alpha
    }

    pub fn theta_c_at(&self, alpha: f64) -> f64 {
        self.theta_c + self.theta_c_slope * alpha
    }

    /// `(r₀, r₁, r₂)(t, α)`: latitude of colatitude `θ_c(α)` about the
    /// r₁-axis.
    pub fn r_at(&self, t: f64, alpha: f64) -> [f64; 3] {
        let tau = std::f64::consts::TAU;
        let th = self.theta_c_at(alpha);
        [
            th.sin() * (tau * t).sin(),
            th.cos(),
            th.sin() * (tau * t).cos(),
        ]
    }

    fn dr_at(&self, t: f64, alpha: f64) -> [f64; 3] {
        let tau = std::f64::consts::TAU;
        let th = self.theta_c_at(alpha);
        [
            th.sin() * (tau * t).cos() * tau,
            0.0,
            -th.sin() * (tau * t).sin() * tau,
        ]
    }

    fn d2r_at(&self, t: f64, alpha: f64) -> [f64; 3] {
        let tau = std::f64::consts::TAU;
        let th = self.theta_c_at(alpha);
        [
            -th.sin() * (tau * t).sin() * tau * tau,
            0.0,
            -th.sin() * (tau * t).cos() * tau * tau,
        ]
    }

    fn dr_dalpha_at(&self, t: f64, alpha: f64) -> [f64; 3] {
        let tau = std::f64::consts::TAU;
        let th = self.theta_c_at(alpha);
        let s = self.theta_c_slope;
        [
            s * th.cos() * (tau * t).sin(),
            -s * th.sin(),
            s * th.cos() * (tau * t).cos(),
        ]
    }

    pub fn z_at(&self, t: f64, alpha: f64) -> [Complex64; 3] {
        let r = self.r_at(t, alpha);
        let phase = Complex64::from_polar(1.0, self.theta0_at(alpha));
        [phase * c(r[0], 0.0), c(r[1], 0.0), c(r[2], 0.0)]
    }

    pub fn zloop(&self) -> ZLoop {
        let me = self.clone();
        let me1 = self.clone();
        let me2 = self.clone();
        let me3 = self.clone();
        let e = self.energy;
        ZLoop::new(3, move |t, a| me.z_at(t, a).to_vec(), move |_t, _a| e)
            .with_dz_dt(move |t, a| {
                let dr = me1.dr_at(t, a);
                let phase = Complex64::from_polar(1.0, me1.theta0_at(a));
                vec![phase * c(dr[0], 0.0), c(dr[1], 0.0), c(dr[2], 0.0)]
            })
            .with_d2z_dt(move |t, a| {
                let ddr = me2.d2r_at(t, a);
                let phase = Complex64::from_polar(1.0, me2.theta0_at(a));
                vec![phase * c(ddr[0], 0.0), c(ddr[1], 0.0), c(ddr[2], 0.0)]
            })
            .with_dz_dalpha(move |t, a| {
                let r = me3.r_at(t, a);
                let dr = me3.dr_dalpha_at(t, a);
                let phase = Complex64::from_polar(1.0, me3.theta0_at(a));
                let dphase = phase * Complex64::new(0.0, me3.theta0_slope);
                vec![
                    dphase * c(r[0], 0.0) + phase * c(dr[0], 0.0),
                    c(dr[1], 0.0),
                    c(dr[2], 0.0),
                ]
            })
            .with_de_dt(|_t, _a| 0.0)
            .with_de_dalpha(|_t, _a| 0.0)
    }

    pub fn family(&self) -> HamiltonianFamily {
        self.zloop().family()
    }

    pub fn r_loop(&self, alpha: f64) -> ParamLoop {
        let me = self.clone();
        ParamLoop::from_closure(
            format!("special_case(theta_c={:.4})", self.theta_c_at(alpha)),
            move |t| me.r_at(t, alpha),
        )
    }

    /// Kernel frame `(ψ₁(t), ψ₂(t))`, smooth and 1-periodic in `t`.
    pub fn frame_at(&self, t: f64, alpha: f64) -> Result<(CVec, CVec)> {
        let [z0, z1, z2] = self.z_at(t, alpha);
        special_eigenvectors(z0, z1, z2)
    }

    /// Holonomy angle of the loop (the line integral of the one-form).
    pub fn omega(&self, alpha: f64) -> Result<f64> {
        omega_line_integral(&self.r_loop(alpha), 257)
    }

    /// Closed-form holonomy of the transported kernel frame after a period.
    pub fn b1_closed_form(&self, alpha: f64) -> Result<CMat> {
        Ok(closed_form_b1(self.omega(alpha)?, self.theta0_at(alpha)))
    }
}

/// Fixture for the `z₀`-variation closed form: `z₁, z₂` fixed real, and
/// `z₀(t) = t₁(t) e^{iθ₀} + t₂(t)` tracing a circle in the `(t₁, t₂)` plane.
/// The connection is diagonal and `B(1) = diag(1, e^{-iΛ})` with
/// `Λ = ∮ sin θ₀ (t₁ dt₂ - t₂ dt₁) / (r₁² + r₂² + |z₀|²)`.
#[derive(Clone, Debug)]
pub struct Z0VariationFixture {
    pub r1: f64,
    pub r2: f64,
    pub theta0: f64,
    pub center: (f64, f64),
    pub radius: f64,
    pub energy: f64,
}

impl Default for Z0VariationFixture {
    fn default() -> Self {
        Self {
            r1: 0.8,
            r2: 0.6,
            theta0: 1.1,
            center: (0.9, 0.4),
            radius: 0.5,
            energy: 0.0,
        }
    }
}

impl Z0VariationFixture {
    pub fn t12_at(&self, t: f64) -> (f64, f64) {
        let tau = std::f64::consts::TAU;
        (
            self.center.0 + self.radius * (tau * t).cos(),
            self.center.1 + self.radius * (tau * t).sin(),
        )
    }

    pub fn z_at(&self, t: f64) -> [Complex64; 3] {
        let (t1, t2) = self.t12_at(t);
        [
            Complex64::from_polar(t1, self.theta0) + c(t2, 0.0),
            c(self.r1, 0.0),
            c(self.r2, 0.0),
        ]
    }

    /// `Λ` by Simpson quadrature with node doubling.
    pub fn lambda(&self) -> Result<f64> {
        let tau = std::f64::consts::TAU;
        let eval = |n: usize| -> f64 {
            let n = n | 1;
            let h = 1.0 / (n - 1) as f64;
            let samples: Vec<f64> = (0..n)
                .map(|k| {
                    let t = k as f64 * h;
                    let (t1, t2) = self.t12_at(t);
                    let dt1 = -self.radius * (tau * t).sin() * tau;
                    let dt2 = self.radius * (tau * t).cos() * tau;
                    let z0_sq = t1 * t1 + t2 * t2 + 2.0 * t1 * t2 * self.theta0.cos();
                    self.theta0.sin() * (t1 * dt2 - t2 * dt1)
                        / (self.r1 * self.r1 + self.r2 * self.r2 + z0_sq)
                })
                .collect();
            linalg::simpson_scalar(&samples, h)
        };
        let mut n = 129;
        let mut prev = eval(n);
        loop {
            n *= 2;
            if n > 1 << 18 {
                return Err(CoreError::QuadratureNonConvergence(
                    "z0-variation lambda quadrature".into(),
                ));
            }
            let next = eval(n);
            if (next - prev).abs() < 1e-10 {
                return Ok(next);
            }
            prev = next;
        }
    }

    pub fn b1_closed_form(&self) -> Result<CMat> {
        let lam = self.lambda()?;
        let mut b = linalg::identity(2);
        b[(1, 1)] = Complex64::from_polar(1.0, -lam);
        Ok(b)
    }

    pub fn family(&self) -> HamiltonianFamily {
        let me = self.clone();
        let me1 = self.clone();
        let e = self.energy;
        let tau = std::f64::consts::TAU;
        ZLoop::new(3, move |t, _a| me.z_at(t).to_vec(), move |_t, _a| e)
            .with_dz_dt(move |t, _a| {
                let dt1 = -me1.radius * (tau * t).sin() * tau;
                let dt2 = me1.radius * (tau * t).cos() * tau;
                vec![
                    Complex64::from_polar(dt1, me1.theta0) + c(dt2, 0.0),
                    linalg::ZERO,
                    linalg::ZERO,
                ]
            })
            .with_de_dt(|_t, _a| 0.0)
            .with_de_dalpha(|_t, _a| 0.0)
            .with_dz_dalpha(|_t, _a| vec![linalg::ZERO; 3])
            .family()
    }

    pub fn frame_at(&self, t: f64) -> Result<(CVec, CVec)> {
        let [z0, z1, z2] = self.z_at(t);
        special_eigenvectors(z0, z1, z2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{inner, max_abs, max_abs_vec};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_c(rng: &mut ChaCha8Rng, scale: f64) -> Complex64 {
        c(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))
    }

    #[test]
    fn build_h_matches_the_bordered_layout() {
        let h = build_h(&[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)], 0.0);
        assert_eq!(h.nrows(), 4);
        assert_eq!(h[(0, 1)], c(1.0, 0.0));
        assert_eq!(h[(1, 0)], c(1.0, 0.0));
        assert_eq!(h[(0, 0)], c(0.0, 0.0));
        let (vals, _) = linalg::hermitian_eigen(&h).unwrap();
        let expect = [-1.0, 0.0, 0.0, 1.0];
        for (v, e) in vals.iter().zip(expect.iter()) {
            assert_relative_eq!(v, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_border_gives_full_kernel() {
        let h = build_h(&[linalg::ZERO; 3], 2.5);
        let (vals, _) = linalg::hermitian_eigen(&h).unwrap();
        assert_eq!(vals.iter().filter(|v| v.abs() < 1e-14).count(), 3);
        assert_relative_eq!(vals[3], 2.5, epsilon = 1e-14);
    }

    #[test]
    fn spectrum_law_holds_on_random_borders() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.gen_range(2..6);
            let z: Vec<Complex64> = (0..n).map(|_| rand_c(&mut rng, 1.5)).collect();
            let e: f64 = rng.gen_range(-2.0..2.0);
            if z_norm(&z) < 1e-3 {
                continue;
            }
            let h = build_h(&z, e);
            let (vals, _) = linalg::hermitian_eigen(&h).unwrap();
            let (lo, hi) = bordered_extremes(e, z_norm(&z));
            assert!((vals[0] - lo).abs() < 1e-10, "low extreme");
            assert!((vals[n] - hi).abs() < 1e-10, "high extreme");
            for k in 1..n {
                assert!(vals[k].abs() < 1e-10, "kernel eigenvalue");
            }
        }
    }

    #[test]
    fn extreme_eigenvalues_for_e3_z2() {
        let (lo, hi) = bordered_extremes(3.0, 2.0);
        assert_relative_eq!(lo, -1.0, epsilon = 1e-14);
        assert_relative_eq!(hi, 4.0, epsilon = 1e-14);
    }

    #[test]
    fn kernel_projector_block_form_and_annihilation() {
        let z = [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
        let p = kernel_projector(&z, 0.0).unwrap();
        let expect = CMat::from_diagonal(&CVec::from_vec(vec![
            linalg::ZERO,
            linalg::ZERO,
            linalg::ONE,
            linalg::ONE,
        ]));
        assert!(max_abs(&(&p.matrix - expect)) < 1e-14);
        assert_eq!(p.rank, 2);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let z: Vec<Complex64> = (0..4).map(|_| rand_c(&mut rng, 1.0)).collect();
            if z_norm(&z) < 1e-3 {
                continue;
            }
            let e: f64 = rng.gen_range(-1.0..1.0);
            let p = kernel_projector(&z, e).unwrap();
            let h = build_h(&z, e);
            assert!(max_abs(&(&p.matrix * &h)) < 1e-12, "P H = 0");
            assert!(max_abs(&(&p.matrix * &p.matrix - &p.matrix)) < 1e-12);
        }
        assert!(kernel_projector(&[linalg::ZERO; 3], 0.0).is_err());
    }

    #[test]
    fn special_eigenvectors_at_unit_z1() {
        // z = (0, 1, 0): psi1 = -e3, psi2 = e1
        let (p1, p2) = special_eigenvectors(linalg::ZERO, linalg::ONE, linalg::ZERO).unwrap();
        let e3 = CVec::from_vec(vec![linalg::ZERO, linalg::ZERO, linalg::ZERO, linalg::ONE]);
        let e1 = CVec::from_vec(vec![linalg::ZERO, linalg::ONE, linalg::ZERO, linalg::ZERO]);
        assert!(max_abs_vec(&(&p1 + e3)) < 1e-14);
        assert!(max_abs_vec(&(&p2 - e1)) < 1e-14);
    }

    #[test]
    fn special_eigenvectors_are_kernel_and_normalized_for_random_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let z0 = rand_c(&mut rng, 1.0);
            let z1 = rand_c(&mut rng, 1.0);
            let z2 = rand_c(&mut rng, 1.0);
            if z1.norm_sqr() + z2.norm_sqr() < 1e-4 {
                continue;
            }
            let (p1, p2) = special_eigenvectors(z0, z1, z2).unwrap();
            let h = build_h(&[z0, z1, z2], 0.37);
            assert!(max_abs_vec(&(&h * &p1)) < 1e-12, "H psi1 = 0");
            assert!(max_abs_vec(&(&h * &p2)) < 1e-12, "H psi2 = 0");
            assert!((inner(&p1, &p1).re - 1.0).abs() < 1e-12);
            assert!((inner(&p2, &p2).re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn special_eigenvectors_orthogonal_on_common_phase_stratum() {
        // z1, z2 sharing a phase (and arbitrary z0) keep the pair orthonormal
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..50 {
            let z0 = rand_c(&mut rng, 1.2);
            let phase = Complex64::from_polar(1.0, rng.gen_range(-3.0..3.0));
            let z1 = phase * c(rng.gen_range(-1.0..1.0), 0.0);
            let z2 = phase * c(rng.gen_range(-1.0..1.0), 0.0);
            if z1.norm_sqr() + z2.norm_sqr() < 1e-4 {
                continue;
            }
            let (p1, p2) = special_eigenvectors(z0, z1, z2).unwrap();
            assert!(inner(&p1, &p2).norm() < 1e-12, "orthogonality");
        }
    }

    #[test]
    fn special_eigenvectors_survive_isotropic_border() {
        // z1^2 + z2^2 = 0 with z0 != 0: psi2 keeps only its z0 part
        let z1 = c(0.7, 0.0);
        let z2 = c(0.0, 0.7);
        let z0 = c(0.4, -0.3);
        let (_, p2) = special_eigenvectors(z0, z1, z2).unwrap();
        assert!(p2[1].norm() < 1e-14, "e1 component vanishes");
        assert!((inner(&p2, &p2).re - 1.0).abs() < 1e-12);
        let h = build_h(&[z0, z1, z2], 0.0);
        assert!(max_abs_vec(&(&h * &p2)) < 1e-12);
        // ... and the doubly degenerate stratum is rejected
        assert!(matches!(
            special_eigenvectors(linalg::ZERO, z1, z2),
            Err(CoreError::DegenerateNormalization(_))
        ));
    }

    #[test]
    fn gamma_diagonal_vanishes_for_moduli_only_variation() {
        let z = [
            Complex64::from_polar(0.8, 0.4),
            Complex64::from_polar(0.5, 0.0),
            Complex64::from_polar(0.6, 0.0),
        ];
        let dz = [
            Complex64::from_polar(0.3, 0.4),
            Complex64::from_polar(-0.2, 0.0),
            Complex64::from_polar(0.15, 0.0),
        ];
        let g = gamma_entries(z, dz).unwrap();
        assert!(g[(0, 0)].norm() < 1e-14, "<psi1|dpsi1> = 0");
        assert!(linalg::hermiticity_residual(&(g.clone() * c(0.0, 1.0))) < 1e-10);
    }

    #[test]
    fn gamma_matches_the_closed_form_at_zero_phases() {
        let (r0, r1, r2) = (0.7, 0.5, 0.4);
        let (dr0, dr1, dr2) = (0.2, -0.3, 0.45);
        let theta0 = 0.9;
        let z = [Complex64::from_polar(r0, theta0), c(r1, 0.0), c(r2, 0.0)];
        let dz = [Complex64::from_polar(dr0, theta0), c(dr1, 0.0), c(dr2, 0.0)];
        let g = gamma_entries(z, dz).unwrap();
        let common = r0 * (r1 * dr2 - r2 * dr1)
            / ((r1 * r1 + r2 * r2) * (r0 * r0 + r1 * r1 + r2 * r2).sqrt());
        let expect_10 = Complex64::from_polar(common, theta0);
        assert!((g[(1, 0)] - expect_10).norm() < 1e-12);
        assert!((g[(0, 1)] + expect_10.conj()).norm() < 1e-12);
        assert!(g[(0, 0)].norm() < 1e-14);
        assert!(g[(1, 1)].norm() < 1e-14);
    }

    #[test]
    fn gamma_agrees_with_fd_of_the_eigenvectors() {
        // moduli-only path with common z1/z2 phase: the closed forms are the
        // exact differentials, so FD of the eigenvector formulas must agree
        let theta = [0.9, 0.35, 0.35];
        let r = |t: f64| -> [f64; 3] {
            [
                0.8 + 0.2 * (std::f64::consts::TAU * t).sin(),
                0.6 + 0.15 * (std::f64::consts::TAU * t).cos(),
                0.5 - 0.1 * (std::f64::consts::TAU * t).sin(),
            ]
        };
        let z_of = |t: f64| -> [Complex64; 3] {
            let rv = r(t);
            [
                Complex64::from_polar(rv[0], theta[0]),
                Complex64::from_polar(rv[1], theta[1]),
                Complex64::from_polar(rv[2], theta[2]),
            ]
        };
        let t0 = 0.31;
        let h = 1e-5;
        let zc = z_of(t0);
        let dz = {
            let zp = z_of(t0 + h);
            let zm = z_of(t0 - h);
            [
                (zp[0] - zm[0]) / c(2.0 * h, 0.0),
                (zp[1] - zm[1]) / c(2.0 * h, 0.0),
                (zp[2] - zm[2]) / c(2.0 * h, 0.0),
            ]
        };
        let g = gamma_entries(zc, dz).unwrap();

        let frame = |t: f64| -> (CVec, CVec) {
            let zv = z_of(t);
            special_eigenvectors(zv[0], zv[1], zv[2]).unwrap()
        };
        let (p1, p2) = frame(t0);
        let (p1p, p2p) = frame(t0 + h);
        let (p1m, p2m) = frame(t0 - h);
        let dp1 = (&p1p - &p1m) / c(2.0 * h, 0.0);
        let dp2 = (&p2p - &p2m) / c(2.0 * h, 0.0);
        assert!((g[(0, 0)] + inner(&p1, &dp1)).norm() < 1e-6);
        assert!((g[(1, 1)] + inner(&p2, &dp2)).norm() < 1e-6);
        assert!((g[(1, 0)] + inner(&p2, &dp1)).norm() < 1e-6);
        assert!((g[(0, 1)] + inner(&p1, &dp2)).norm() < 1e-6);
    }

    #[test]
    fn gamma_rejects_non_orthonormal_strata() {
        let z = [c(1.0, 0.0), c(1.0, 0.0), c(0.0, 1.0)];
        let dz = [linalg::ZERO, c(0.1, 0.0), c(0.0, 0.1)];
        assert!(matches!(gamma_entries(z, dz), Err(CoreError::Frame(_))));
    }

    #[test]
    fn omega_vanishes_for_planar_loops() {
        // r0 = 0 kills the one-form
        let planar = ParamLoop::from_closure("planar", |t| {
            let tau = std::f64::consts::TAU;
            [0.0, 1.0 + 0.3 * (tau * t).cos(), 0.5 * (tau * t).sin()]
        });
        let om = omega_line_integral(&planar, 65).unwrap();
        assert!(om.abs() < 1e-10);
    }

    #[test]
    fn omega_line_matches_cap_area_on_r1_latitudes() {
        for &theta_c in &[std::f64::consts::FRAC_PI_6, std::f64::consts::FRAC_PI_4] {
            let lat = ParamLoop::latitude(1, theta_c, 1.0);
            let om = omega_line_integral(&lat, 129).unwrap();
            let cap = std::f64::consts::TAU * (1.0 - theta_c.cos());
            assert!(
                (om.abs() - cap).abs() < 1e-7,
                "theta_c={theta_c}: |Ω|={} vs cap={cap}",
                om.abs()
            );
        }
    }

    #[test]
    fn omega_line_flips_sign_under_orientation_reversal() {
        let lat = ParamLoop::latitude(1, 0.6, 1.0);
        let om = omega_line_integral(&lat, 129).unwrap();
        let om_rev = omega_line_integral(&lat.reversed(), 129).unwrap();
        assert!((om + om_rev).abs() < 1e-8);
        assert!(om.abs() > 0.5);
    }

    #[test]
    fn omega_line_rejects_open_paths() {
        let open = ParamLoop::from_closure("open", |t| [0.3, 1.0, t]);
        assert!(matches!(
            omega_line_integral(&open, 65),
            Err(CoreError::NonClosure(_))
        ));
    }

    #[test]
    fn solid_angle_of_octant_polygon() {
        let oct = ParamLoop::great_circle_polygon(
            "octant",
            &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        );
        let om = omega_solid_angle(&oct).unwrap();
        assert!(
            (om.abs() - std::f64::consts::FRAC_PI_2).abs() < 1e-6,
            "octant excess {om}"
        );
    }

    #[test]
    fn solid_angle_agrees_with_line_integral_on_smooth_loops() {
        for &(theta_c, orient) in &[(0.5, 1.0), (1.0, -1.0)] {
            let lat = ParamLoop::latitude(1, theta_c, orient);
            let om_l = omega_line_integral(&lat, 129).unwrap();
            let om_s = omega_solid_angle(&lat).unwrap();
            assert!(
                (om_l - om_s).abs() < 1e-6,
                "theta_c={theta_c} orient={orient}: line {om_l} vs solid {om_s}"
            );
        }
        // a non-circular smooth loop away from the axis
        let wobble = ParamLoop::from_closure("wobble", |t| {
            let tau = std::f64::consts::TAU;
            let th = 0.7 + 0.15 * (2.0 * tau * t).sin();
            [
                th.sin() * (tau * t).sin(),
                th.cos(),
                th.sin() * (tau * t).cos(),
            ]
        });
        let om_l = omega_line_integral(&wobble, 257).unwrap();
        let om_s = omega_solid_angle(&wobble).unwrap();
        assert!((om_l - om_s).abs() < 1e-6, "wobble: {om_l} vs {om_s}");
    }

    #[test]
    fn axis_latitudes_and_the_equator_follow_the_string_convention() {
        // latitude about the r0-axis encloses the one-form's singular point:
        // both routes give 2π(1 - cos θ) - 2π = -2π cos θ
        for &theta_c in &[0.4, 1.0] {
            let lat = ParamLoop::latitude(0, theta_c, 1.0);
            let om_l = omega_line_integral(&lat, 129).unwrap();
            let om_s = omega_solid_angle(&lat).unwrap();
            let expect = -std::f64::consts::TAU * theta_c.cos();
            assert!((om_l - expect).abs() < 1e-7, "line {om_l} vs {expect}");
            assert!((om_s - expect).abs() < 1e-6, "solid {om_s} vs {expect}");
        }
        // planar loop winding the axis once: both vanish
        let equator = ParamLoop::from_closure("equator", |t| {
            let tau = std::f64::consts::TAU;
            [0.0, (tau * t).cos(), (tau * t).sin()]
        });
        let om_l = omega_line_integral(&equator, 129).unwrap();
        let om_s = omega_solid_angle(&equator).unwrap();
        assert!(om_l.abs() < 1e-10, "line {om_l}");
        assert!(om_s.abs() < 1e-6, "solid {om_s}");
    }

    #[test]
    fn small_loops_approach_their_planar_area() {
        let eps = 0.02;
        let small = ParamLoop::from_closure("small", move |t| {
            let tau = std::f64::consts::TAU;
            [eps * (tau * t).sin(), 1.0, eps * (tau * t).cos()]
        });
        let om = omega_solid_angle(&small).unwrap();
        let planar = std::f64::consts::PI * eps * eps;
        assert!(
            (om.abs() - planar).abs() < planar * 0.01,
            "small loop {om} vs planar {planar}"
        );
    }

    #[test]
    fn self_intersecting_projections_are_rejected() {
        let fig8 = ParamLoop::from_closure("figure-eight", |t| {
            let tau = std::f64::consts::TAU;
            [0.5 * (2.0 * tau * t).sin(), 1.0, 0.8 * (tau * t).sin()]
        });
        assert!(matches!(
            omega_solid_angle(&fig8),
            Err(CoreError::SelfIntersection(_))
        ));
    }

    #[test]
    fn closed_form_b1_special_values() {
        assert!(max_abs(&(closed_form_b1(0.0, 0.3) - linalg::identity(2))) < 1e-15);
        let b = closed_form_b1(std::f64::consts::FRAC_PI_2, 0.0);
        let expect = CMat::from_row_slice(
            2,
            2,
            &[linalg::ZERO, linalg::ONE, -linalg::ONE, linalg::ZERO],
        );
        assert!(max_abs(&(b - expect)) < 1e-15);
    }

    #[test]
    fn constant_phase_b_special_values() {
        let zeros = vec![linalg::ZERO; 65];
        assert!(max_abs(&(constant_phase_b(&zeros).unwrap() - linalg::identity(2))) < 1e-15);

        let pi = std::f64::consts::PI;
        let samples: Vec<Complex64> = (0..65).map(|_| Complex64::from_polar(pi, 0.7)).collect();
        let b = constant_phase_b(&samples).unwrap();
        assert!(
            max_abs(&(b + linalg::identity(2))) < 1e-12,
            "∫ρ = π gives -I"
        );

        let wandering: Vec<Complex64> = (0..65)
            .map(|k| Complex64::from_polar(1.0, k as f64 * 0.02))
            .collect();
        assert!(matches!(
            constant_phase_b(&wandering),
            Err(CoreError::NonConstantPhase(_))
        ));
    }

    #[test]
    fn monopole_curl_identity_by_fd() {
        // curl of -z(x dy - y dx)/((x^2+y^2) r) is r/|r|^3, axes (x,y,z) = (r1,r2,r0)
        let field = |p: [f64; 3]| -> [f64; 3] {
            let (x, y, z) = (p[0], p[1], p[2]);
            let perp = x * x + y * y;
            let r = (perp + z * z).sqrt();
            let f = -z / (perp * r);
            [f * -y, f * x, 0.0]
        };
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20 {
            let p = [
                rng.gen_range(0.4..1.2),
                rng.gen_range(0.4..1.2),
                rng.gen_range(-0.8..0.8),
            ];
            let h = 1e-5;
            let d = |i: usize, j: usize| -> f64 {
                let mut pp = p;
                let mut pm = p;
                pp[j] += h;
                pm[j] -= h;
                (field(pp)[i] - field(pm)[i]) / (2.0 * h)
            };
            let curl = [d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)];
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            for i in 0..3 {
                let expect = p[i] / (r * r * r);
                assert!(
                    (curl[i] - expect).abs() < 1e-6,
                    "component {i}: {} vs {}",
                    curl[i],
                    expect
                );
            }
        }
    }

    #[test]
    fn special_fixture_family_is_hermitian_and_unit_norm() {
        let fix = SpecialCaseFixture::default();
        let fam = fix.family();
        for k in 0..16 {
            let t = k as f64 / 16.0;
            let h = fam.evaluate(t, 0.4).unwrap();
            assert!(linalg::hermiticity_residual(&h) < 1e-14);
            let z = fix.z_at(t, 0.4);
            let nz: f64 = z.iter().map(|v| v.norm_sqr()).sum();
            assert_relative_eq!(nz, 1.0, epsilon = 1e-14);
        }
        // analytic dt against FD
        let strip = HamiltonianFamily::new(4, {
            let f = fam.clone();
            move |t, a| f.evaluate(t, a).unwrap()
        })
        .with_periodic_t(true);
        for &t in &[0.15, 0.62] {
            let d_an = fam.derivative_t(t, 0.3).unwrap();
            let d_fd = strip.derivative_t(t, 0.3).unwrap();
            assert!(max_abs(&(d_an - d_fd)) < 1e-8);
        }
    }

    #[test]
    fn special_fixture_frames_are_orthonormal_kernel_frames() {
        let fix = SpecialCaseFixture::default();
        let fam = fix.family();
        for k in 0..8 {
            let t = k as f64 / 8.0;
            let (p1, p2) = fix.frame_at(t, 0.7).unwrap();
            let h = fam.evaluate(t, 0.7).unwrap();
            assert!(max_abs_vec(&(&h * &p1)) < 1e-12);
            assert!(max_abs_vec(&(&h * &p2)) < 1e-12);
            assert!(inner(&p1, &p2).norm() < 1e-12);
        }
    }

    #[test]
    fn z0_variation_connection_is_diagonal() {
        let fix = Z0VariationFixture::default();
        let h = 1e-5;
        for &t in &[0.2, 0.55, 0.8] {
            let z = fix.z_at(t);
            let zp = fix.z_at(t + h);
            let zm = fix.z_at(t - h);
            let dz = [
                (zp[0] - zm[0]) / c(2.0 * h, 0.0),
                (zp[1] - zm[1]) / c(2.0 * h, 0.0),
                (zp[2] - zm[2]) / c(2.0 * h, 0.0),
            ];
            let g = gamma_entries(z, dz).unwrap();
            assert!(g[(0, 1)].norm() < 1e-10);
            assert!(g[(1, 0)].norm() < 1e-10);
            assert!(g[(0, 0)].norm() < 1e-10);
            assert!(g[(1, 1)].im.abs() > 1e-3, "diagonal drives the holonomy");
        }
    }

    #[test]
    fn phase_fixing_rephases_a_wandering_path() {
        // deliberately non-phase-fixed path: common rotating phase
        let loop_z = ZLoop::new(
            3,
            |t: f64, _a: f64| {
                let tau = std::f64::consts::TAU;
                let phase = Complex64::from_polar(1.0, 0.8 * (tau * t).sin());
                vec![
                    phase * c(0.6, 0.0),
                    phase * c(0.8 * (tau * t).cos(), 0.0),
                    phase * c(0.8 * (tau * t).sin(), 0.0),
                ]
            },
            |_t, _a| 0.0,
        )
        .with_phase_fixed(true);
        let grid: Vec<f64> = (0..33).map(|k| k as f64 / 32.0).collect();
        loop_z.validate_on_grid(&grid, 0.0).unwrap();
    }
}
