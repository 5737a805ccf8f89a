//! Built-in Hamiltonian families, addressable by name and parameter map.
//!
//! The registry is the single construction point shared by the test suites
//! and the CLI config loader. Every family here carries analytic first and
//! second derivatives so the spectral pipeline never has to fall back to
//! finite differences on the hot path.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::linalg::{CMat, CVec};
use crate::model::HamiltonianFamily;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Constant diagonal family `H ≡ diag(entries)`.
pub fn constant_diag(entries: &[f64]) -> HamiltonianFamily {
    let entries = entries.to_vec();
    let dim = entries.len();
    HamiltonianFamily::new(dim, move |_t, _a| {
        DMatrix::from_diagonal(&DVector::from_iterator(
            dim,
            entries.iter().map(|&e| c(e, 0.0)),
        ))
    })
    .with_dt(move |_t, _a| CMat::zeros(dim, dim))
    .with_dalpha(move |_t, _a| CMat::zeros(dim, dim))
    .with_d2t(move |_t, _a| CMat::zeros(dim, dim))
    .with_dt_dalpha(move |_t, _a| CMat::zeros(dim, dim))
    .with_periodic_t(true)
    .with_note("constant diagonal")
}

fn random_hermitian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> CMat {
    let mut m = CMat::zeros(dim, dim);
    for r in 0..dim {
        for s in r..dim {
            let x = rng.gen_range(-scale..scale);
            let y = rng.gen_range(-scale..scale);
            if r == s {
                m[(r, r)] = c(x, 0.0);
            } else {
                m[(r, s)] = c(x, y);
                m[(s, r)] = c(x, -y);
            }
        }
    }
    m
}

/// Seeded smooth gapped family: a spread-out diagonal plus a small
/// trigonometric Hermitian perturbation, 1-periodic in `t`.
///
/// `H(t, α) = D + A sin(2πt)(1 + 0.3α) + B (cos(2πt) + 0.4α)` with diagonal
/// spacing 3 and perturbations small enough that every eigenvalue stays
/// isolated for all `(t, α)`.
pub fn random_gapped(dim: usize, seed: u64) -> HamiltonianFamily {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 0.15 / (dim as f64).sqrt();
    let a = random_hermitian(&mut rng, dim, scale);
    let b = random_hermitian(&mut rng, dim, scale);
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        dim,
        (0..dim).map(|k| c(3.0 * k as f64, 0.0)),
    ));
    let tau = std::f64::consts::TAU;
    let (a1, b1) = (a.clone(), b.clone());
    let (a2, b2) = (a.clone(), b.clone());
    let (a3, b3) = (a.clone(), b.clone());
    let a4 = a.clone();
    HamiltonianFamily::new(dim, move |t, al| {
        &d + a1.scale((tau * t).sin() * (1.0 + 0.3 * al)) + b1.scale((tau * t).cos() + 0.4 * al)
    })
    .with_dt(move |t, al| {
        a2.scale(tau * (tau * t).cos() * (1.0 + 0.3 * al)) - b2.scale(tau * (tau * t).sin())
    })
    .with_dalpha(move |t, _al| a3.scale(0.3 * (tau * t).sin()) + b3.scale(0.4))
    .with_d2t(move |t, al| {
        -a.scale(tau * tau * (tau * t).sin() * (1.0 + 0.3 * al))
            - b.scale(tau * tau * (tau * t).cos())
    })
    .with_dt_dalpha(move |t, _al| a4.scale(0.3 * tau * (tau * t).cos()))
    .with_periodic_t(true)
    .with_note("seeded trigonometric perturbation of a gapped diagonal")
}

/// Parameters of the two-level fixture with a simple isolated eigenvalue.
#[derive(Debug, Clone, Copy)]
pub struct TwoLevelParams {
    /// Bloch-vector length (the spectral gap).
    pub field: f64,
    /// Colatitude of the Bloch loop: `θ(α) = theta0 + theta1 α`.
    pub theta0: f64,
    pub theta1: f64,
    /// Scalar shift `d(t, α) = d0 + d1 α sin²(πt)` (drives the dynamical term).
    pub d0: f64,
    pub d1: f64,
}

impl Default for TwoLevelParams {
    fn default() -> Self {
        Self {
            field: 1.0,
            theta0: 0.9,
            theta1: 0.3,
            d0: 0.2,
            d1: 0.4,
        }
    }
}

impl TwoLevelParams {
    pub fn theta(&self, alpha: f64) -> f64 {
        self.theta0 + self.theta1 * alpha
    }

    fn bloch(&self, t: f64, alpha: f64) -> (f64, f64, f64) {
        let th = self.theta(alpha);
        let phi = std::f64::consts::TAU * t;
        (
            self.field * th.sin() * phi.cos(),
            self.field * th.sin() * phi.sin(),
            self.field * th.cos(),
        )
    }

    /// Upper eigenvalue `E₊(t, α) = (d(t, α) + field) / 2`.
    pub fn upper_eigenvalue(&self, t: f64, alpha: f64) -> f64 {
        0.5 * (self.d0 + self.d1 * alpha * (std::f64::consts::PI * t).sin().powi(2) + self.field)
    }

    /// Smooth 1-periodic eigenvector section of the upper level:
    /// `(cos(θ/2), sin(θ/2) e^{2πit})`.
    pub fn upper_eigenvector(&self, t: f64, alpha: f64) -> CVec {
        let th = self.theta(alpha);
        let phi = std::f64::consts::TAU * t;
        CVec::from_vec(vec![
            c((th / 2.0).cos(), 0.0),
            Complex64::from_polar((th / 2.0).sin(), phi),
        ])
    }

    /// Berry phase of the upper level over one period, before wrapping to
    /// `(-π, π]`: `π (1 - cos θ(α))`.
    pub fn berry_phase_closed_form(&self, alpha: f64) -> f64 {
        std::f64::consts::PI * (1.0 - self.theta(alpha).cos())
    }
}

/// Two-level family `H = d/2 · I + b⃗(t, α)·σ⃗ / 2` whose Bloch vector traces
/// a latitude loop of colatitude `θ(α)`; the upper level is simple with gap
/// `field`.
pub fn two_level(params: TwoLevelParams) -> HamiltonianFamily {
    let p = params;
    let pi = std::f64::consts::PI;
    let tau = std::f64::consts::TAU;
    let build = move |bx: f64, by: f64, bz: f64, d: f64| -> CMat {
        CMat::from_row_slice(
            2,
            2,
            &[
                c(0.5 * (d + bz), 0.0),
                c(0.5 * bx, -0.5 * by),
                c(0.5 * bx, 0.5 * by),
                c(0.5 * (d - bz), 0.0),
            ],
        )
    };
    HamiltonianFamily::new(2, move |t, al| {
        let (bx, by, bz) = p.bloch(t, al);
        let d = p.d0 + p.d1 * al * (pi * t).sin().powi(2);
        build(bx, by, bz, d)
    })
    .with_dt(move |t, al| {
        let th = p.theta(al);
        let phi = tau * t;
        let bx = -p.field * th.sin() * phi.sin() * tau;
        let by = p.field * th.sin() * phi.cos() * tau;
        let d = p.d1 * al * 2.0 * (pi * t).sin() * (pi * t).cos() * pi;
        build(bx, by, 0.0, d)
    })
    .with_dalpha(move |t, al| {
        let th = p.theta(al);
        let phi = tau * t;
        let bx = p.field * th.cos() * phi.cos() * p.theta1;
        let by = p.field * th.cos() * phi.sin() * p.theta1;
        let bz = -p.field * th.sin() * p.theta1;
        let d = p.d1 * (pi * t).sin().powi(2);
        build(bx, by, bz, d)
    })
    .with_d2t(move |t, al| {
        let th = p.theta(al);
        let phi = tau * t;
        let bx = -p.field * th.sin() * phi.cos() * tau * tau;
        let by = -p.field * th.sin() * phi.sin() * tau * tau;
        let d = p.d1 * al * 2.0 * pi * pi * ((pi * t).cos().powi(2) - (pi * t).sin().powi(2));
        build(bx, by, 0.0, d)
    })
    .with_dt_dalpha(move |t, al| {
        let th = p.theta(al);
        let phi = tau * t;
        let bx = -p.field * th.cos() * p.theta1 * phi.sin() * tau;
        let by = p.field * th.cos() * p.theta1 * phi.cos() * tau;
        let d = p.d1 * 2.0 * (pi * t).sin() * (pi * t).cos() * pi;
        build(bx, by, 0.0, d)
    })
    .with_periodic_t(true)
    .with_note("two-level Bloch latitude loop, simple upper eigenvalue")
}

/// Parameter map for [`build_family`]: scalars and scalar lists.
pub type ParamMap = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Scalar(f64),
    List(Vec<f64>),
}

impl ParamValue {
    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            ParamValue::Scalar(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[f64]> {
        match self {
            ParamValue::List(v) => Some(v),
            _ => None,
        }
    }
}

fn scalar(params: &ParamMap, key: &str, default: f64) -> f64 {
    params
        .get(key)
        .and_then(ParamValue::as_scalar)
        .unwrap_or(default)
}

/// Construct a built-in family by name.
///
/// Names: `constant_diag` (param `entries`), `random_gapped` (`dim`, `seed`),
/// `two_level` (`field`, `theta0`, `theta1`, `d0`, `d1`), and
/// `bordered` / `special_case` (`theta_c`, `theta0`, `theta0_slope`,
/// `energy`), the 4x4 member of the bordered family.
pub fn build_family(name: &str, params: &ParamMap) -> Result<HamiltonianFamily> {
    match name {
        "constant_diag" => {
            let entries = params
                .get("entries")
                .and_then(ParamValue::as_list)
                .map(|v| v.to_vec())
                .unwrap_or_else(|| vec![1.0, -1.0]);
            Ok(constant_diag(&entries))
        }
        "random_gapped" => {
            let dim = scalar(params, "dim", 4.0) as usize;
            let seed = scalar(params, "seed", 1.0) as u64;
            if !(2..=16).contains(&dim) {
                return Err(CoreError::Config(format!(
                    "random_gapped dim {dim} outside 2..=16"
                )));
            }
            Ok(random_gapped(dim, seed))
        }
        "two_level" => {
            let d = TwoLevelParams::default();
            Ok(two_level(TwoLevelParams {
                field: scalar(params, "field", d.field),
                theta0: scalar(params, "theta0", d.theta0),
                theta1: scalar(params, "theta1", d.theta1),
                d0: scalar(params, "d0", d.d0),
                d1: scalar(params, "d1", d.d1),
            }))
        }
        "bordered" | "special_case" => {
            let d = crate::examplefam::SpecialCaseFixture::default();
            let fixture = crate::examplefam::SpecialCaseFixture::new(
                scalar(params, "theta_c", d.theta_c),
                scalar(params, "theta0", d.theta0),
                scalar(params, "theta0_slope", d.theta0_slope),
                scalar(params, "energy", d.energy),
            )?
            .with_theta_c_slope(scalar(params, "theta_c_slope", 0.0))?;
            Ok(fixture.family())
        }
        other => Err(CoreError::Config(format!("unknown family '{other}'"))),
    }
}
