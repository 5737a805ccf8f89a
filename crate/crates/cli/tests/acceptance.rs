//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line with the measured values.
//!
//! Everything runs at desk scale (dims ≤ 8, grids ≤ 2^16); the heavy
//! ε-sweep is computed once and shared between the first- and second-order
//! criteria.

use std::sync::OnceLock;
use std::time::Instant;

use adiapump_cli::config::ExperimentConfig;
use adiapump_cli::experiments::{
    run_holonomy_compare, run_invariant_suite, run_omega_check, run_residual_sweep,
    ResidualSweepReport,
};
use adiapump_cli::slope::SlopeFit;
use adiapump_core::evolve::{
    charge_cross_check, propagate_exact, propagate_phase, propagate_transport, ChargeOptions,
    PropagationOptions,
};
use adiapump_core::examplefam::{self, SpecialCaseFixture};
use adiapump_core::holonomy::{
    berry_phase, charge_matrix_elements_periodic, holonomy_b, proposition_zero_order_check,
    FrameProvider, FrameTrajectory, PeriodicCase,
};
use adiapump_core::linalg::{self, CMat, CVec};
use adiapump_core::model::SpectralSelector;
use adiapump_core::registry::{constant_diag, random_gapped, two_level, TwoLevelParams};
use adiapump_core::spectral::{
    kato_generator, projector_derivative, reduced_resolvent_map, riesz_projector, ContourTracker,
    DerivVar,
};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn report(criterion: &str, pass: bool, detail: &str, started: Instant) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!(
        "[acceptance] {criterion}: {status} ({detail}; {:.1} s)",
        started.elapsed().as_secs_f64()
    );
    assert!(pass, "{criterion}: {detail}");
}

fn sweep_config() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{
        "schema_version": 1,
        "family": {"name": "special_case", "params": {"theta_c_slope": 0.25}},
        "experiment": "residual_sweep",
        "alpha_values": [0.0, 0.25, 0.5, 0.75, 1.0],
        "epsilon_values": [0.125, 0.0625, 0.03125, 0.015625, 0.0078125],
        "t_grid_size": 513
    }"#,
    )
    .unwrap()
}

static SWEEP: OnceLock<ResidualSweepReport> = OnceLock::new();

fn shared_sweep() -> &'static ResidualSweepReport {
    SWEEP.get_or_init(|| run_residual_sweep(&sweep_config()).expect("residual sweep"))
}

/// Criterion 1: projector algebra residuals on 50 random gapped families.
#[test]
fn criterion_1_projector_algebra_suite() {
    let t0 = Instant::now();
    let mut worst_pdp = 0.0f64;
    let mut worst_pkp = 0.0f64;
    let mut worst_prkp = 0.0f64;
    let mut worst_eq46 = 0.0f64;
    for seed in 0..50u64 {
        let dim = 4 + (seed % 5) as usize; // dims 4..=8
        let fam = random_gapped(dim, seed);
        let level = 3.0 * ((dim / 2) as f64);
        let mut tracker = ContourTracker::new(SpectralSelector::Nearest { e_ref: level });
        let alpha = (seed as f64) / 50.0;
        for &t in &[0.2, 0.7] {
            let contour = tracker.contour_at(&fam, t, alpha).unwrap();
            let p = riesz_projector(&fam, t, alpha, &contour).unwrap();
            let dp = projector_derivative(&fam, t, alpha, &contour, DerivVar::T).unwrap();
            worst_pdp = worst_pdp.max(linalg::max_abs(&(&p.matrix * &dp * &p.matrix)));
            let k = kato_generator(&fam, t, alpha, &contour).unwrap();
            worst_pkp = worst_pkp.max(linalg::max_abs(&(&p.matrix * &k.matrix * &p.matrix)));
            let rk = reduced_resolvent_map(&fam, t, alpha, &contour, &k.matrix).unwrap();
            worst_prkp = worst_prkp.max(linalg::max_abs(&(&p.matrix * &rk * &p.matrix)));
        }
        let eq46 = proposition_zero_order_check(
            &fam,
            alpha,
            &[0.2, 0.7],
            SpectralSelector::Nearest { e_ref: level },
        )
        .unwrap();
        worst_eq46 = worst_eq46.max(eq46);
    }
    let pass = worst_pdp < 1e-7 && worst_pkp < 1e-7 && worst_prkp < 1e-7 && worst_eq46 < 1e-7;
    report(
        "criterion 1 (projector algebra, 50 random families)",
        pass,
        &format!(
            "max residuals: P dP P {worst_pdp:.2e}, P K P {worst_pkp:.2e}, P R(K) P {worst_prkp:.2e}, zero-order identity {worst_eq46:.2e}, all < 1e-7"
        ),
        t0,
    );
}

/// Criterion 2: the two exact charge routes agree within tol_cross.
#[test]
fn criterion_2_exact_charge_cross_identity() {
    let t0 = Instant::now();
    let fixtures: Vec<(&str, adiapump_core::model::HamiltonianFamily)> = vec![
        ("special_case", SpecialCaseFixture::default().family()),
        ("random_gapped(3, 14)", random_gapped(3, 14)),
    ];
    let mut detail = String::new();
    let mut pass = true;
    for (name, fam) in &fixtures {
        for &eps in &[1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0] {
            let check = charge_cross_check(fam, 0.5, eps, 1.0, &ChargeOptions::default())
                .expect("charge cross check");
            pass &= check.pass;
            detail.push_str(&format!(
                "{name} eps=1/{:.0}: |diff| {:.2e} (tol {:.1e}); ",
                1.0 / eps,
                check.max_abs_difference,
                check.tolerance
            ));
        }
    }
    report(
        "criterion 2 (exact charge cross-identity)",
        pass,
        &detail,
        t0,
    );
}

/// Criterion 3: first-order adiabatic law with α-uniformity.
#[test]
fn criterion_3_first_order_adiabatic_law() {
    let t0 = Instant::now();
    let sweep = shared_sweep();
    let slope_ok = (sweep.fit_first.slope - 1.0).abs() <= 0.15;
    let r2_ok = sweep.fit_first.r_squared >= 0.99;
    let spread_ok = sweep.slope_spread_first < 0.2;
    report(
        "criterion 3 (first-order adiabatic law)",
        slope_ok && r2_ok && spread_ok && sweep.errors.is_empty(),
        &format!(
            "slope {:.4} in 1.0±0.15, r² {:.5} ≥ 0.99, spread over 5 α {:.4} < 0.2",
            sweep.fit_first.slope, sweep.fit_first.r_squared, sweep.slope_spread_first
        ),
        t0,
    );
}

/// Criterion 4: second-order law and the pair distance.
#[test]
fn criterion_4_second_order_adiabatic_law() {
    let t0 = Instant::now();
    let sweep = shared_sweep();
    let slope2_ok =
        (sweep.fit_second.slope - 2.0).abs() <= 0.2 && sweep.fit_second.r_squared >= 0.99;
    let pair_ok = (sweep.fit_pair.slope - 1.0).abs() <= 0.2;
    report(
        "criterion 4 (second-order law and superadiabatic pair distance)",
        slope2_ok && pair_ok && sweep.errors.is_empty(),
        &format!(
            "second-order slope {:.4} in 2.0±0.2 (r² {:.5}), pair-distance slope {:.4} in 1.0±0.2",
            sweep.fit_second.slope, sweep.fit_second.r_squared, sweep.fit_pair.slope
        ),
        t0,
    );
}

/// Criterion 5: leading-order charge formulas for the simple and framed
/// cases, and agreement of the two degenerate restatements.
#[test]
fn criterion_5_leading_order_charge_formulas() {
    let t0 = Instant::now();
    // The O(ε) remainder of the charge formulas carries boundary phases
    // e^{i g/ε} for the spectral gaps g; both fixtures have integer gaps, so
    // sampling at 1/ε = (4k+1)π/2 pins every such phase to a constant and
    // the envelope exponent becomes measurable by a log-log fit. (At
    // 1/ε ∈ 2πZ the periodic boundary terms cancel pairwise and the
    // remainder drops to O(ε²).)
    let pi = std::f64::consts::PI;
    let epsilons = [
        2.0 / (17.0 * pi),
        2.0 / (33.0 * pi),
        2.0 / (65.0 * pi),
        2.0 / (129.0 * pi),
    ];
    let t_grid = linalg::uniform_grid(513);
    let opts = ChargeOptions::default();
    let alpha = 0.5;

    // (a) simple-eigenvalue two-level fixture, case (i)
    let params = TwoLevelParams::default();
    let fam_simple = two_level(params);
    let sel_simple = SpectralSelector::Nearest {
        e_ref: params.upper_eigenvalue(0.0, alpha),
    };
    let provider_simple = FrameProvider::new(move |al| Ok(vec![params.upper_eigenvector(0.0, al)]));
    let mut res_simple = Vec::new();
    for &eps in &epsilons {
        let r = charge_matrix_elements_periodic(
            &fam_simple,
            alpha,
            eps,
            PeriodicCase::Simple,
            &provider_simple,
            sel_simple,
            &t_grid,
            &opts,
        )
        .expect("simple case");
        res_simple.push(r.residual);
    }
    let fit_simple = SlopeFit::fit(&epsilons, &res_simple, 1e-12);

    // (b) the degenerate framed fixture, case (iii), with the loop shape
    // genuinely deformed by α
    let fix = SpecialCaseFixture::default()
        .with_theta_c_slope(0.25)
        .unwrap();
    let fam_framed = fix.family();
    let sel_framed = SpectralSelector::Cluster {
        e_ref: 0.0,
        size: 2,
    };
    let fix_a = fix.clone();
    let fix_b = fix.clone();
    let provider_framed = FrameProvider::new(move |al| {
        let (a, b) = fix_a.frame_at(0.0, al)?;
        Ok(vec![a, b])
    })
    .with_trajectory(move |al, grid| {
        let f = fix_b.clone();
        FrameTrajectory::from_fn(grid, |t| {
            let (a, b) = f.frame_at(t, al)?;
            Ok(vec![a, b])
        })
    });
    let mut res_framed = Vec::new();
    let mut framed_geo_at_16: Option<CMat> = None;
    let mut dyn_at_16 = 0.0;
    for &eps in &epsilons {
        let r = charge_matrix_elements_periodic(
            &fam_framed,
            alpha,
            eps,
            PeriodicCase::DegenerateFramed,
            &provider_framed,
            sel_framed,
            &t_grid,
            &opts,
        )
        .expect("framed case");
        if (eps - epsilons[0]).abs() < 1e-15 {
            framed_geo_at_16 = Some(r.geometric_term.clone());
            dyn_at_16 = r.dynamical_term;
        }
        res_framed.push(r.residual);
    }
    let fit_framed = SlopeFit::fit(&epsilons, &res_framed, 1e-12);

    // cases (ii) and (iii) are restatements: geometric terms agree
    let parallel = charge_matrix_elements_periodic(
        &fam_framed,
        alpha,
        epsilons[0],
        PeriodicCase::DegenerateParallel,
        &provider_framed,
        sel_framed,
        &t_grid,
        &opts,
    )
    .expect("parallel case");
    let geo_diff = linalg::max_abs(&(framed_geo_at_16.unwrap() - &parallel.geometric_term))
        .max((dyn_at_16 - parallel.dynamical_term).abs());

    let pass = (fit_simple.slope - 1.0).abs() <= 0.2
        && (fit_framed.slope - 1.0).abs() <= 0.2
        && geo_diff < 1e-6;
    report(
        "criterion 5 (leading-order charge: simple and framed cases)",
        pass,
        &format!(
            "residual slopes: simple {:.4}, framed {:.4} (both in 1.0±0.2); cases (ii)/(iii) differ by {:.2e} < 1e-6",
            fit_simple.slope, fit_framed.slope, geo_diff
        ),
        t0,
    );
}

/// Criterion 6: closed-form holonomies and the bordered spectrum laws.
#[test]
fn criterion_6_bordered_closed_forms() {
    let t0 = Instant::now();
    let cfg = ExperimentConfig::from_json(
        r#"{
        "schema_version": 1,
        "family": {"name": "special_case"},
        "experiment": "holonomy_compare",
        "alpha_values": [0.4],
        "epsilon_values": [0.125],
        "t_grid_size": 513
    }"#,
    )
    .unwrap();
    let holo = run_holonomy_compare(&cfg).expect("holonomy compare");
    let holo_ok = holo.pass && holo.rows.len() == 4;

    // spectrum and kernel-projector laws on 100 random points
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_spec = 0.0f64;
    let mut worst_kernel = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..5);
        let z: Vec<Complex64> = (0..n)
            .map(|_| c(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)))
            .collect();
        let norm: f64 = z.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if norm < 0.1 {
            continue;
        }
        let e: f64 = rng.gen_range(-2.0..2.0);
        let h = examplefam::build_h(&z, e);
        let (vals, vecs) = linalg::hermitian_eigen(&h).unwrap();
        let (lo, hi) = examplefam::bordered_extremes(e, norm);
        worst_spec = worst_spec
            .max((vals[0] - lo).abs())
            .max((vals[n] - hi).abs());
        for k in 1..n {
            worst_spec = worst_spec.max(vals[k].abs());
        }
        // kernel projector vs the eigenvector-sum oracle
        let p = examplefam::kernel_projector(&z, e).unwrap();
        let mut oracle = CMat::zeros(n + 1, n + 1);
        for k in 1..n {
            let v: CVec = vecs.column(k).into_owned();
            oracle += &v * v.adjoint();
        }
        worst_kernel = worst_kernel.max(linalg::max_abs(&(&p.matrix - oracle)));
    }
    let laws_ok = worst_spec < 1e-10 && worst_kernel < 1e-10;

    report(
        "criterion 6 (closed-form holonomies and bordered laws)",
        holo_ok && laws_ok,
        &format!(
            "holonomy rows: {}; spectrum law dev {worst_spec:.2e}, kernel projector dev {worst_kernel:.2e} (both < 1e-10)",
            holo.rows
                .iter()
                .map(|r| format!("{} {:.2e}", r.name, r.max_abs_difference))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        t0,
    );
}

/// Criterion 7: the solid-angle identity with the cap-area oracle and
/// orientation antisymmetry.
#[test]
fn criterion_7_solid_angle_identity() {
    let t0 = Instant::now();
    let cfg = ExperimentConfig::from_json(
        r#"{
        "schema_version": 1,
        "family": {"name": "special_case"},
        "experiment": "omega_check",
        "alpha_values": [0.5],
        "epsilon_values": [0.125],
        "t_grid_size": 129
    }"#,
    )
    .unwrap();
    let omega = run_omega_check(&cfg).expect("omega check");
    let rows_ok = omega.pass;

    // cap-area oracle on the latitude rows
    let mut cap_ok = true;
    let mut detail = String::new();
    for theta_c in [
        std::f64::consts::FRAC_PI_6,
        std::f64::consts::FRAC_PI_4,
        std::f64::consts::FRAC_PI_3,
    ] {
        let cap = std::f64::consts::TAU * (1.0 - theta_c.cos());
        let row = omega
            .rows
            .iter()
            .find(|r| r.name.contains(&format!("theta_c={theta_c:.4}")) && r.name.contains("+1"))
            .expect("latitude row");
        let om = row.omega_line.unwrap();
        cap_ok &= (om.abs() - cap).abs() < 1e-6;
        detail.push_str(&format!(
            "|Ω|({theta_c:.3})={:.6} vs cap {:.6}; ",
            om.abs(),
            cap
        ));
    }
    // the rotated octant carries the octant excess π/2
    let oct = omega
        .rows
        .iter()
        .find(|r| r.name == "octant_rotated")
        .expect("octant row");
    let oct_ok = (oct.omega_solid.unwrap().abs() - std::f64::consts::FRAC_PI_2).abs() < 1e-6
        && oct.status == "pass";

    // orientation reversal flips the sign (the ±1 latitude pair)
    let fwd = omega
        .rows
        .iter()
        .find(|r| r.name.contains("theta_c=0.7854") && r.name.contains("+1"))
        .unwrap();
    let rev = omega
        .rows
        .iter()
        .find(|r| r.name.contains("theta_c=0.7854") && r.name.contains("-1"))
        .unwrap();
    let flip_ok = (fwd.omega_line.unwrap() + rev.omega_line.unwrap()).abs() < 1e-8
        && (fwd.omega_solid.unwrap() + rev.omega_solid.unwrap()).abs() < 1e-6;

    report(
        "criterion 7 (solid-angle identity)",
        rows_ok && cap_ok && oct_ok && flip_ok,
        &format!(
            "{detail}octant |Ω| = {:.8} ≈ π/2; orientation flip ok = {flip_ok}",
            oct.omega_solid.unwrap().abs()
        ),
        t0,
    );
}

/// Criterion 8: α-independent and constant families are trivial.
#[test]
fn criterion_8_triviality_suite() {
    let t0 = Instant::now();
    let fam = constant_diag(&[1.0, -1.0, 2.5]);
    let opts = ChargeOptions::default();
    let eps = 0.125;

    let q = adiapump_core::evolve::charge_time_quadrature(&fam, 0.5, eps, 1.0, &opts).unwrap();
    let qa = adiapump_core::evolve::charge_alpha_derivative(&fam, 0.5, eps, 1.0, &opts).unwrap();
    let charge_ok = linalg::max_abs(&q.matrix) < 1e-8 && linalg::max_abs(&qa.matrix) < 1e-8;

    let tg = linalg::uniform_grid(65);
    let sel = SpectralSelector::Nearest { e_ref: 1.0 };
    let popts = PropagationOptions::default();
    let u = propagate_exact(&fam, 0.5, eps, &tg, &popts).unwrap();
    let w = propagate_transport(&fam, 0.5, &tg, sel, None, &popts).unwrap();
    let phi = propagate_phase(&fam, 0.5, eps, &tg, &w, &popts).unwrap();
    let w_is_identity = w
        .matrices
        .iter()
        .map(|m| linalg::max_abs(&(m - linalg::identity(3))))
        .fold(0.0f64, f64::max);
    let resid = adiapump_core::evolve::adiabatic_residual(&u, &w, &phi).unwrap();

    let phi0 = CVec::from_vec(vec![linalg::ONE, linalg::ZERO, linalg::ZERO]);
    let beta = berry_phase(&fam, 0.5, &w, &phi0).unwrap().beta;

    let frame = FrameTrajectory::transported(&w, &[phi0.clone()]);
    let holo = holonomy_b(&frame, None).unwrap();
    let b_is_identity = linalg::max_abs(&(&holo.b - linalg::identity(1)));

    let pass = charge_ok
        && w_is_identity < 1e-10
        && resid < 1e-7
        && beta.abs() < 1e-8
        && b_is_identity < 1e-10;
    report(
        "criterion 8 (triviality suite)",
        pass,
        &format!(
            "charges {:.1e}/{:.1e} < 1e-8, ‖W - I‖ {w_is_identity:.1e}, residual {resid:.1e}, β {beta:.1e}, ‖B - I‖ {b_is_identity:.1e}",
            linalg::max_abs(&q.matrix),
            linalg::max_abs(&qa.matrix)
        ),
        t0,
    );
}

/// Criterion 9: two runs of the full suite produce byte-identical reports.
#[test]
fn criterion_9_determinism() {
    let t0 = Instant::now();
    let configs = [
        r#"{
            "schema_version": 1,
            "family": {"name": "special_case"},
            "experiment": "invariant_suite",
            "alpha_values": [0.3],
            "epsilon_values": [0.0625],
            "t_grid_size": 129
        }"#,
        r#"{
            "schema_version": 1,
            "family": {"name": "special_case"},
            "experiment": "omega_check",
            "alpha_values": [0.5],
            "epsilon_values": [0.125],
            "t_grid_size": 129
        }"#,
        r#"{
            "schema_version": 1,
            "family": {"name": "special_case"},
            "experiment": "holonomy_compare",
            "alpha_values": [0.4],
            "epsilon_values": [0.125],
            "t_grid_size": 513
        }"#,
        r#"{
            "schema_version": 1,
            "family": {"name": "special_case"},
            "experiment": "residual_sweep",
            "alpha_values": [0.25, 0.75],
            "epsilon_values": [0.125, 0.0625, 0.03125, 0.015625],
            "t_grid_size": 129
        }"#,
        r#"{
            "schema_version": 1,
            "family": {"name": "two_level"},
            "experiment": "charge_table",
            "alpha_values": [0.5],
            "epsilon_values": [0.125, 0.0625],
            "t_grid_size": 129
        }"#,
    ];
    let run_all = || -> Vec<(String, String)> {
        configs
            .iter()
            .map(|text| {
                let cfg = ExperimentConfig::from_json(text).unwrap();
                let outcome = adiapump_cli::experiments::run_experiment(&cfg).unwrap();
                (outcome.json, outcome.csv)
            })
            .collect()
    };
    let first = run_all();
    let second = run_all();
    let identical = first == second;
    // the invariant suite itself must pass on the reference family
    let suite = run_invariant_suite(&ExperimentConfig::from_json(configs[0]).unwrap()).unwrap();
    report(
        "criterion 9 (determinism)",
        identical && suite.errors.is_empty(),
        &format!(
            "{} experiment reports byte-identical across two runs",
            configs.len()
        ),
        t0,
    );
}
