//! Cross-module pipeline checks through the public API: transport
//! intertwines the projectors it was built from, the first-order pair
//! tracks the exact evolution, and the leading-order charge decomposition
//! reproduces the exact matrix elements up to the expected order.

use adiapump_core::evolve::{
    adiabatic_residual, charge_cross_check, intertwining_residual, phase_commutant_residual,
    propagate_exact, propagate_phase, propagate_transport, trajectory_csv, ChargeOptions,
    PropagationOptions,
};
use adiapump_core::examplefam::SpecialCaseFixture;
use adiapump_core::holonomy::{charge_leading_order, holonomy_b, FrameTrajectory};
use adiapump_core::linalg::{self, max_abs};
use adiapump_core::model::SpectralSelector;
use adiapump_core::registry::{random_gapped, two_level, TwoLevelParams};

#[test]
fn first_order_pipeline_on_a_random_family() {
    let fam = random_gapped(4, 77);
    let sel = SpectralSelector::Nearest { e_ref: 6.0 };
    let tg = linalg::uniform_grid(129);
    let opts = PropagationOptions::default();
    let (alpha, eps) = (0.35, 1.0 / 16.0);

    let u = propagate_exact(&fam, alpha, eps, &tg, &opts).unwrap();
    let w = propagate_transport(&fam, alpha, &tg, sel, None, &opts).unwrap();
    let phi = propagate_phase(&fam, alpha, eps, &tg, &w, &opts).unwrap();

    assert!(u.unitarity_residual() < 1e-8);
    assert!(intertwining_residual(&w).unwrap() < 1e-6);
    let p0 = w.table.as_ref().unwrap().projector_at_start().clone();
    assert!(phase_commutant_residual(&phi, &p0) < 1e-7);
    let r1 = adiabatic_residual(&u, &w, &phi).unwrap();
    assert!(r1 < 1.0, "first-order residual is O(ε), got {r1}");

    let w1 = propagate_transport(&fam, alpha, &tg, sel, Some(eps), &opts).unwrap();
    let phi1 = propagate_phase(&fam, alpha, eps, &tg, &w1, &opts).unwrap();
    let r2 = adiabatic_residual(&u, &w1, &phi1).unwrap();
    assert!(
        r2 < r1,
        "second-order pair beats the first-order one: {r2} vs {r1}"
    );

    let csv = trajectory_csv(&u, &w, &phi, &w1, &phi1).unwrap();
    assert_eq!(csv.lines().count(), tg.len() + 1);
}

#[test]
fn leading_order_charge_tracks_the_exact_elements() {
    let fix = SpecialCaseFixture::default();
    let fam = fix.family();
    let sel = SpectralSelector::Cluster {
        e_ref: 0.0,
        size: 2,
    };
    let tg = linalg::uniform_grid(257);
    let opts = ChargeOptions::default();
    let (alpha, eps) = (0.5, 1.0 / 24.0);

    let w = propagate_transport(&fam, alpha, &tg, sel, None, &opts.prop).unwrap();
    let (b1, b2) = fix.frame_at(0.0, alpha).unwrap();
    let report = charge_leading_order(&fam, alpha, eps, &w, &[b1, b2], &opts).unwrap();
    // the kernel eigenvalue is exactly zero for every α
    assert!(report.dynamical_term.abs() < 1e-8);
    assert!(
        report.residual < 10.0 * eps,
        "residual {:.3e} should be O(ε)",
        report.residual
    );
    // geometric term is the dominant content and must be sizeable
    assert!(max_abs(&report.geometric_term) > 0.05);
    assert!(report.to_json().contains("\"geometric_term\""));
}

#[test]
fn transported_kernel_frame_reproduces_the_holonomy() {
    let fix = SpecialCaseFixture::default();
    let fam = fix.family();
    let sel = SpectralSelector::Cluster {
        e_ref: 0.0,
        size: 2,
    };
    let tg = linalg::uniform_grid(513);
    let tight = PropagationOptions {
        tol: 1e-9,
        ..Default::default()
    };
    let alpha = 0.6;
    let w = propagate_transport(&fam, alpha, &tg, sel, None, &tight).unwrap();

    // holonomy from the analytic periodic frame
    let frame = FrameTrajectory::from_fn(&tg, |t| {
        let (a, b) = fix.frame_at(t, alpha)?;
        Ok(vec![a, b])
    })
    .unwrap();
    let holo = holonomy_b(&frame, None).unwrap();

    // the same matrix from fully transported vectors: B = V⁻¹ W in the
    // initial frame, so B_{q,r} = <ψ_q(1) | W(1) ψ_r(0)>
    let mut b_direct = linalg::CMat::zeros(2, 2);
    let end = frame.vectors.last().unwrap();
    for r in 0..2 {
        let wpsi = w.endpoint() * &frame.vectors[0][r];
        for q in 0..2 {
            b_direct[(q, r)] = end[q].dotc(&wpsi);
        }
    }
    assert!(
        max_abs(&(&holo.b - b_direct)) < 1e-6,
        "ODE holonomy matches the overlap route"
    );

    // and both match the closed form
    let closed = fix.b1_closed_form(alpha).unwrap();
    assert!(max_abs(&(&holo.b - closed)) < 1e-6);
}

#[test]
fn charge_routes_cross_validate_on_the_two_level_fixture() {
    let fam = two_level(TwoLevelParams::default());
    let check = charge_cross_check(&fam, 0.4, 1.0 / 12.0, 1.0, &ChargeOptions::default()).unwrap();
    assert!(
        check.pass,
        "cross-check diff {:.3e} vs tol {:.3e}",
        check.max_abs_difference, check.tolerance
    );
}

#[test]
fn framed_charge_bracket_is_gauge_invariant() {
    use adiapump_core::holonomy::{charge_matrix_elements_periodic, FrameProvider, PeriodicCase};
    use num_complex::Complex64;

    let fix = SpecialCaseFixture::default();
    let fam = fix.family();
    let sel = SpectralSelector::Cluster {
        e_ref: 0.0,
        size: 2,
    };
    let tg = linalg::uniform_grid(513);
    let opts = ChargeOptions::default();
    let (alpha, eps) = (0.5, 1.0 / 16.0);

    let base_provider = {
        let fa = fix.clone();
        let fb = fix.clone();
        FrameProvider::new(move |al| {
            let (a, b) = fa.frame_at(0.0, al)?;
            Ok(vec![a, b])
        })
        .with_trajectory(move |al, grid| {
            let f = fb.clone();
            FrameTrajectory::from_fn(grid, |t| {
                let (a, b) = f.frame_at(t, al)?;
                Ok(vec![a, b])
            })
        })
    };
    // periodic time-dependent gauge rotation of the frame, with g(0) ≠ I
    let gauge = |t: f64| -> linalg::CMat {
        let s = 0.4 + 0.3 * (std::f64::consts::TAU * t).sin();
        adiapump_core::examplefam::closed_form_b1(s, 0.8)
    };
    let rotate = move |vs: Vec<linalg::CVec>, t: f64| -> Vec<linalg::CVec> {
        let g = gauge(t);
        (0..vs.len())
            .map(|r| {
                let mut out = linalg::CVec::zeros(vs[0].len());
                for q in 0..vs.len() {
                    out += vs[q].clone() * g[(q, r)];
                }
                out
            })
            .collect()
    };
    let rotated_provider = {
        let fa = fix.clone();
        let fb = fix.clone();
        FrameProvider::new(move |al| {
            let (a, b) = fa.frame_at(0.0, al)?;
            Ok(rotate(vec![a, b], 0.0))
        })
        .with_trajectory(move |al, grid| {
            let f = fb.clone();
            FrameTrajectory::from_fn(grid, |t| {
                let (a, b) = f.frame_at(t, al)?;
                Ok(rotate(vec![a, b], t))
            })
        })
    };

    let base = charge_matrix_elements_periodic(
        &fam,
        alpha,
        eps,
        PeriodicCase::DegenerateFramed,
        &base_provider,
        sel,
        &tg,
        &opts,
    )
    .unwrap();
    let rotated = charge_matrix_elements_periodic(
        &fam,
        alpha,
        eps,
        PeriodicCase::DegenerateFramed,
        &rotated_provider,
        sel,
        &tg,
        &opts,
    )
    .unwrap();

    // the physical content is frame-independent: formula and exact elements
    // conjugate by g(0), so the residual is unchanged
    let g0 = gauge(0.0);
    let formula_base =
        linalg::identity(2) * Complex64::new(base.dynamical_term, 0.0) + &base.geometric_term;
    let formula_rot =
        linalg::identity(2) * Complex64::new(rotated.dynamical_term, 0.0) + &rotated.geometric_term;
    let conjugated = g0.adjoint() * formula_base * &g0;
    assert!(
        max_abs(&(formula_rot - conjugated)) < 1e-6,
        "the bracket conjugates under the gauge change"
    );
    // max-abs entries are basis-dependent; the operator-norm defect is not
    let defect = |r: &adiapump_core::holonomy::ChargeReport| {
        let formula =
            linalg::identity(2) * Complex64::new(r.dynamical_term, 0.0) + &r.geometric_term;
        linalg::op_norm(&(&r.exact_elements - formula))
    };
    assert!(
        (defect(&base) - defect(&rotated)).abs() < 1e-6,
        "gauge-independent defect: {:.3e} vs {:.3e}",
        defect(&base),
        defect(&rotated)
    );
}

#[test]
fn framed_bracket_degenerates_to_the_boundary_term_on_parallel_frames() {
    use adiapump_core::holonomy::{frame_alpha_overlap, framed_bracket};
    use num_complex::Complex64;

    let fix = SpecialCaseFixture::default();
    let fam = fix.family();
    let sel = SpectralSelector::Cluster { e_ref: 0.0, size: 2 };
    let tg = linalg::uniform_grid(2049);
    let tight = PropagationOptions {
        tol: 1e-9,
        ..Default::default()
    };
    let alpha = 0.45;
    let delta = 1e-4;

    let parallel_at = |al: f64| -> (FrameTrajectory, adiapump_core::holonomy::HolonomyMatrix) {
        let w = propagate_transport(&fam, al, &tg, sel, None, &tight).unwrap();
        let (f1, f2) = fix.frame_at(0.0, al).unwrap();
        let frame = FrameTrajectory::transported(&w, &[f1, f2]);
        let holo = holonomy_b(&frame, None).unwrap();
        (frame, holo)
    };
    let (frame, holo) = parallel_at(alpha);
    let (frame_p, holo_p) = parallel_at(alpha + delta);
    let (frame_m, holo_m) = parallel_at(alpha - delta);

    // with the parallel frame the holonomy is the identity and its
    // α-derivative terms vanish, so the full bracket collapses to the
    // boundary term i(M(1) - M(0))
    assert!(max_abs(&(&holo.b - linalg::identity(2))) < 1e-8, "B = I");
    let bracket = framed_bracket(&frame, &holo, &frame_p, &holo_p, &frame_m, &holo_m, delta);
    let m1 = frame_alpha_overlap(
        frame.vectors.last().unwrap(),
        frame_p.vectors.last().unwrap(),
        frame_m.vectors.last().unwrap(),
        delta,
    );
    let m0 = frame_alpha_overlap(&frame.vectors[0], &frame_p.vectors[0], &frame_m.vectors[0], delta);
    let boundary = (m1 - m0) * Complex64::new(0.0, 1.0);
    let diff = max_abs(&(bracket - boundary));
    assert!(diff < 1e-8, "bracket vs boundary term: {diff:.3e}");
}
