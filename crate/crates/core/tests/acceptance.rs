//! Acceptance suite: one test per criterion, each printing a pass line.
//! Run with `cargo test --test acceptance -- --nocapture` to see them.

use clf_synth::expr::parse;
use clf_synth::field::ScalarField;
use clf_synth::field::VectorField;
use clf_synth::iiss::{build_iiss, DFunction};
use clf_synth::quad;
use clf_synth::sampling::Rng;
use clf_synth::sim::{
    iiss_trajectory_bound, integrate, lyapunov_monotonicity, simulate_closed_loop, write_csv,
    Disturbance, Method, ObservableSet, Plant,
};
use clf_synth::synthesis::{
    closed_loop_derivative, norm, SynthesisOptions, SynthesisResult, Synthesizer,
};
use clf_synth::systems::{builtin_manipulator, builtin_oscillator, FullyNonlinearSystem};
use clf_synth::verify::{gradient_crosscheck, Sampler};

fn expr_field(src: &str, n: usize, m: usize) -> ScalarField {
    ScalarField::from_expression(parse(src, n, m).unwrap())
}

fn report(name: &str) {
    println!("acceptance {name}: PASS");
}

fn margin(result: &SynthesisResult, id: &str) -> f64 {
    result
        .constraint_report
        .iter()
        .find(|c| c.id == id)
        .unwrap_or_else(|| panic!("report lacks {id}"))
        .margin
}

/// Criterion 1: reproduction of the built-in manipulator's hand-derived
/// strict Lyapunov function and bounded feedback.
#[test]
fn acceptance_1_manipulator_reproduction() {
    let m = builtin_manipulator();

    // (a) Closed-loop decay of the reference strict function dominates the
    // saturated-square sum at 1e5 seeded points in the ball of radius 10.
    let vsharpdot = closed_loop_derivative(&m.affine, &m.vsharp, &m.damping).unwrap();
    let mut worst = f64::INFINITY;
    for i in 0..100_000u64 {
        let x = Rng::at(0, 901, i).in_ball(4, 10.0);
        let lhs = vsharpdot.eval(&x).unwrap();
        let mut bound = 0.0;
        for xi in &x {
            bound += xi * xi / (2.0 * (1.0 + xi * xi).sqrt());
        }
        worst = worst.min(-0.5 * bound + 1e-9 - lhs);
    }
    assert!(worst >= 0.0, "decay margin {worst}");

    // (b) The raw-system feedback components stay within norm 1.
    let mut sup: f64 = 0.0;
    for i in 0..100_000u64 {
        let x = Rng::at(0, 902, i).in_ball(4, 10.0);
        let u = m.total_feedback.eval(&x).unwrap();
        sup = sup.max(u[0].abs()).max(u[1].abs());
    }
    assert!(sup <= 1.0, "sup feedback {sup}");

    // (c) Closed loop reaches the origin: |x(200)| <= 1e-2 with the strict
    // function never increasing by more than 1e-8 per accepted step.
    let traj = simulate_closed_loop(
        Plant::Affine(&m.affine),
        &m.damping,
        &Disturbance::Zero { dim: 2 },
        &[3.0, -2.0, 1.5, -1.0],
        200.0,
        Method::Rkf45 {
            abs_tol: 1e-9,
            rel_tol: 1e-9,
        },
        ObservableSet {
            vsharp: Some(&m.vsharp),
            ..Default::default()
        },
    )
    .unwrap();
    let final_norm = norm(traj.states.last().unwrap());
    assert!(final_norm <= 1e-2, "|x(200)| = {final_norm}");
    let inc = lyapunov_monotonicity(&traj, &m.vsharp).unwrap();
    assert!(inc <= 1e-8, "per-step increase {inc}");

    // The raw system under the total feedback matches the affine loop.
    let raw_traj = simulate_closed_loop(
        Plant::Nonlinear(&m.raw),
        &m.total_feedback,
        &Disturbance::Zero { dim: 2 },
        &[3.0, -2.0, 1.5, -1.0],
        200.0,
        Method::Rkf45 {
            abs_tol: 1e-9,
            rel_tol: 1e-9,
        },
        ObservableSet::default(),
    )
    .unwrap();
    let raw_final = norm(raw_traj.states.last().unwrap());
    assert!(raw_final <= 1e-2, "raw |x(200)| = {raw_final}");

    report("1 (manipulator reproduction)");
}

fn oscillator_synthesis(epsilon: f64, seed: u64) -> SynthesisResult {
    let o = builtin_oscillator();
    let opts = SynthesisOptions {
        epsilon,
        seed,
        ..SynthesisOptions::default()
    };
    Synthesizer::new(&o.sys, &o.v, &o.g_dir, opts)
        .unwrap()
        .run()
        .unwrap()
}

/// Criterion 2: the synthesis pipeline on the oscillator with a 0.1
/// feedback cap; fresh re-verification margins are nonnegative and the
/// feedback honors the cap.
#[test]
fn acceptance_2_oscillator_synthesis() {
    let o = builtin_oscillator();
    let result = oscillator_synthesis(0.1, 0);

    for id in [
        "7gh",
        "300",
        "6h0a",
        "6h0b",
        "ns1",
        "zs1a",
        "zs1b",
        "case1-decay",
        "case2-decay",
        "case3-decay",
    ] {
        let m = margin(&result, id);
        assert!(m >= -1e-9, "{id} margin {m}");
    }
    assert!(margin(&result, "vsharp-negdef") > 0.0, "strict decay");
    assert!(result.all_pass());

    // A second fresh re-verification with a different seed.
    let opts = SynthesisOptions {
        epsilon: 0.1,
        ..SynthesisOptions::default()
    };
    let synth = Synthesizer::new(&o.sys, &o.v, &o.g_dir, opts).unwrap();
    let fresh = synth.verify_constraints(&result, 10_000, 1).unwrap();
    for c in &fresh {
        let ok = if c.id.ends_with("negdef") {
            c.margin > 0.0
        } else {
            c.margin >= -1e-9
        };
        assert!(ok, "fresh seed: {} margin {}", c.id, c.margin);
    }

    // Recorded feedback magnitude obeys the cap.
    let mut sup: f64 = 0.0;
    for i in 0..10_000u64 {
        let x = Rng::at(2, 903, i).in_ball(2, 10.0);
        sup = sup.max(norm(&result.feedback.eval(&x).unwrap()));
    }
    assert!(sup <= 0.1, "sup|u| = {sup}");

    report("2 (oscillator synthesis pipeline)");
}

/// Criterion 3: the input-nonlinearity path. Remainder reconstruction,
/// the gain smallness condition and the guaranteed V-decay all hold.
#[test]
fn acceptance_3_fully_nonlinear() {
    let sys = FullyNonlinearSystem::new(
        vec![
            expr_field("x2", 2, 1),
            expr_field("-x1 - x2 + u1 + u1^2", 2, 1),
        ],
        2,
        1,
    )
    .unwrap();
    let v = expr_field("0.5 * (x1^2 + x2^2)", 2, 0);
    let g_dir = VectorField::new(vec![expr_field("0", 2, 0), expr_field("x1", 2, 0)]).unwrap();

    // Reconstruction F = f + g u + h u to 1e-8 at 1e3 points.
    let affine = sys.extract_affine_data().unwrap();
    for i in 0..1000u64 {
        let mut rng = Rng::at(0, 904, i);
        let x = rng.in_ball(2, 10.0);
        let u = [4.0 * rng.next_f64() - 2.0];
        let full = sys.rhs(&x, &u).unwrap();
        let f = affine.drift().eval(&x).unwrap();
        let g = affine.input_column(0).eval(&x).unwrap();
        let h = sys.remainder(&x, &u).unwrap();
        for row in 0..2 {
            let rebuilt = f[row] + (g[row] + h[row][0]) * u[0];
            assert!((full[row] - rebuilt).abs() <= 1e-8, "row {row}");
        }
    }

    let opts = SynthesisOptions::default();
    let result = {
        let synth = Synthesizer::new(&affine, &v, &g_dir, opts)
            .unwrap()
            .with_nonlinear(&sys);
        synth.run().unwrap()
    };
    assert!(margin(&result, "10m") >= 0.0, "10m margin");
    assert!(margin(&result, "11m") >= -1e-9, "11m margin");
    assert!(result.all_pass());

    report("3 (fully nonlinear path)");
}

/// Criterion 4: three-case cover. At 1e5 random nonzero points, at least
/// one of the kernel-margin cases applies — zero uncovered points, for
/// both built-ins.
#[test]
fn acceptance_4_case_cover() {
    let m = builtin_manipulator();
    let o = builtin_oscillator();
    let cases: [(&str, _, _, _); 2] = [
        ("manipulator", &m.affine, &m.v, &m.g_dir),
        ("oscillator", &o.sys, &o.v, &o.g_dir),
    ];
    for (name, sys, v, g_dir) in cases {
        let synth = Synthesizer::new(sys, v, g_dir, SynthesisOptions::default()).unwrap();
        let margins = synth.margin_functions().unwrap();
        let fields = &synth.fields;
        let n = sys.state_dim();
        let mut uncovered = 0u64;
        for i in 0..100_000u64 {
            let x = Rng::at(0, 905, i).in_ball(n, 10.0);
            let r = norm(&x);
            if r == 0.0 {
                continue;
            }
            let lgv = fields.lgv_norm.eval(&x).unwrap();
            let lfv = fields.lfv.eval(&x).unwrap();
            let lflgv = fields.lflgv_dir.eval(&x).unwrap();
            let gamma = margins.gamma.eval(r);
            let nfloor = margins.nfloor.eval(r);
            let covered = lgv >= gamma || lfv <= -nfloor || lflgv <= -nfloor;
            if !covered {
                uncovered += 1;
            }
        }
        assert_eq!(uncovered, 0, "{name}: {uncovered} uncovered points");
    }
    report("4 (three-case cover)");
}

/// Criterion 5: shape and accuracy of the constructed mixing weight.
#[test]
fn acceptance_5_delta_properties() {
    let result = oscillator_synthesis(0.1, 0);
    let delta = &result.delta;
    let cap = &result.delta_cap;
    let p_floor = &result.p_floor;
    let omega = &result.omega;
    assert_eq!(delta.eval(0.0), 0.0, "delta(0)");
    let grid: Vec<f64> = delta.knots().iter().copied().filter(|&s| s > 0.0).collect();
    assert_eq!(grid.len(), 64, "level grid size");

    let integrand = |l: f64| -> std::result::Result<f64, clf_synth::EvalError> {
        Ok(cap.eval(l) * cap.eval(2.0 * l) * omega.eval(l) / (1.0 + 4.0 * l * l))
    };
    for &s in &grid {
        let d = delta.eval(s);
        assert!(d <= cap.eval(s) + 1e-12, "delta({s}) above its cap");
        let slope = delta.deriv(s);
        let budget = omega.eval(s) + 0.5 * omega.eval(0.5 * s);
        assert!(slope.abs() <= budget + 1e-12, "slope budget at {s}");
        assert!(budget <= p_floor.eval(s) + 1e-12, "omega under P at {s}");
        // Quadrature accuracy: re-integrate at a much tighter tolerance.
        let tight = quad::integrate(&integrand, 0.5 * s, s, 1e-13).unwrap();
        assert!((d - tight).abs() <= 1e-10, "quadrature error at {s}");
    }
    // Independent oracle for the quadrature kernel: with the cap and
    // slope budget frozen at 1, the integral is arctan.
    for &s in &[0.4, 1.7, 9.0] {
        let got = quad::integrate(&|l| Ok(1.0 / (1.0 + 4.0 * l * l)), 0.5 * s, s, 1e-10).unwrap();
        let exact = ((2.0 * s).atan() - s.atan()) / 2.0;
        assert!((got - exact).abs() <= 1e-10);
    }
    report("5 (delta properties)");
}

/// Criterion 6: integral disturbance gain for the manipulator with the
/// affine gain bound `D(s) = 2(s + 2)`.
#[test]
fn acceptance_6_iiss() {
    let m = builtin_manipulator();
    let opts = SynthesisOptions::default();
    let mut result = Synthesizer::new(&m.affine, &m.v, &m.g_dir, opts.clone())
        .unwrap()
        .run()
        .unwrap();
    let d = DFunction::affine(2.0, 4.0);
    let iiss = build_iiss(&m.affine, &m.v, &m.g_dir, &d, &mut result, &opts).unwrap();
    for cert in &iiss.certificates {
        assert!(cert.is_pass(), "{}: margin {}", cert.id, cert.worst_margin);
    }
    let key3 = iiss.certificates.iter().find(|c| c.id == "key3").unwrap();
    assert!(key3.worst_margin >= 0.0, "|L_g Utilde| <= 1");
    let decay = iiss.certificates.iter().rfind(|c| c.id == "decay").unwrap();
    assert!(
        decay.worst_margin >= -1e-9,
        "decay margin {}",
        decay.worst_margin
    );
    assert!(
        iiss.alpha5
            .knots()
            .iter()
            .skip(1)
            .all(|&s| iiss.alpha5.eval(s) > 0.0),
        "alpha5 positive on its grid"
    );

    // Trajectory bounds for a finite-energy and a persistent disturbance.
    for disturbance in [
        Disturbance::DecayingExp {
            amplitude: vec![1.0, 1.0],
            rate: 1.0,
        },
        Disturbance::Constant {
            values: vec![1.0, 1.0],
        },
    ] {
        let traj = simulate_closed_loop(
            Plant::Affine(&m.affine),
            &result.feedback,
            &disturbance,
            &[1.0, -0.5, 0.5, 0.25],
            50.0,
            Method::Rkf45 {
                abs_tol: 1e-9,
                rel_tol: 1e-9,
            },
            ObservableSet {
                utilde: Some(&iiss.u_tilde),
                ..Default::default()
            },
        )
        .unwrap();
        let cert = iiss_trajectory_bound(&traj, 0).unwrap();
        assert!(
            cert.is_pass(),
            "{disturbance:?}: margin {}",
            cert.worst_margin
        );
    }
    report("6 (integral disturbance gain)");
}

/// Criterion 7: numerical hygiene — derivative cross-checks across the
/// pipeline fields, integrator order, and bit-identical artifacts for any
/// worker count.
#[test]
fn acceptance_7_numerical_hygiene() {
    // Autodiff vs finite differences for every pipeline field.
    let m = builtin_manipulator();
    let opts = SynthesisOptions::default();
    let synth = Synthesizer::new(&m.affine, &m.v, &m.g_dir, opts.clone()).unwrap();
    let mut result = synth.run().unwrap();
    let d = DFunction::affine(2.0, 4.0);
    let iiss = build_iiss(&m.affine, &m.v, &m.g_dir, &d, &mut result, &opts).unwrap();
    let delta_of_v = m.v.compose_envelope(&result.delta);
    let fields: Vec<(&str, &ScalarField)> = vec![
        ("V", &m.v),
        ("L_G V", &synth.fields.lgv_dir),
        ("L_f L_G V", &synth.fields.lflgv_dir),
        ("delta(V)", &delta_of_v),
        ("U", &result.u_field),
        ("Vsharp", &result.vsharp),
        ("Utilde", &iiss.u_tilde),
        ("u_1", &result.feedback.components()[0]),
        ("u_2", &result.feedback.components()[1]),
    ];
    let sampler = Sampler::ball(0, 10.0, 1000);
    let (worst, name, at) = gradient_crosscheck(&fields, &sampler).unwrap();
    assert!(worst <= 1e-6, "{name}: err {worst} at {at:?}");
    assert!(
        result.radial.alpha1.eval(1.0) > 0.0,
        "radial floor positive at 1"
    );

    // Integrator order on the e^{-1} reference problem.
    let rhs = |_t: f64, x: &[f64]| Ok(vec![-x[0]]);
    let run = |h: f64| -> f64 {
        let (_, states, _) = integrate(&rhs, &[1.0], 1.0, Method::Rk4 { h }).unwrap();
        (states.last().unwrap()[0] - (-1.0f64).exp()).abs()
    };
    assert!(run(0.01) <= 1e-6);
    let factor = run(0.1) / run(0.05);
    assert!((12.0..=20.0).contains(&factor), "order factor {factor}");

    // Worker-count independence: the serialized certificate and a CSV are
    // byte-identical across thread pools.
    let run_all = |threads: usize| -> (String, Vec<u8>) {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let result = oscillator_synthesis(0.1, 0);
            let cert = serde_json::to_string(&result.certificate()).unwrap();
            let o = builtin_oscillator();
            let traj = simulate_closed_loop(
                Plant::Affine(&o.sys),
                &result.feedback,
                &Disturbance::DecayingExp {
                    amplitude: vec![0.5],
                    rate: 0.7,
                },
                &[1.0, 0.0],
                10.0,
                Method::Rkf45 {
                    abs_tol: 1e-9,
                    rel_tol: 1e-9,
                },
                ObservableSet {
                    v: Some(&o.v),
                    vsharp: Some(&result.vsharp),
                    ..Default::default()
                },
            )
            .unwrap();
            let mut csv = Vec::new();
            write_csv(&traj, &mut csv).unwrap();
            (cert, csv)
        })
    };
    let (cert1, csv1) = run_all(1);
    let (cert4, csv4) = run_all(4);
    assert_eq!(cert1, cert4, "certificates differ across worker counts");
    assert_eq!(csv1, csv4, "trajectories differ across worker counts");

    report("7 (numerical hygiene)");
}

/// The envelope layer never hands back a lower bound above a fresh sample
/// (exercised on the oscillator's exact radial shape).
#[test]
fn radial_envelopes_sandwich_oscillator_exactly() {
    let o = builtin_oscillator();
    let synth = Synthesizer::new(&o.sys, &o.v, &o.g_dir, SynthesisOptions::default()).unwrap();
    let radial = synth.radial_envelopes().unwrap();
    for i in 0..200 {
        let s = 10.0 * (i as f64 + 0.5) / 200.0;
        let expect = 0.5 * s * s;
        assert!(radial.alpha1.eval(s) <= expect + 1e-9);
        assert!(radial.alpha2.eval(s) >= expect - 1e-9);
        // Exact radial symmetry: the sandwich collapses to the safety
        // factors on the grid.
        let lo = radial.alpha1.eval(s);
        let hi = radial.alpha2.eval(s);
        assert!(
            lo >= 0.9 * expect * 0.98 && hi <= 1.1 * expect * 1.02,
            "s={s} {lo} {hi}"
        );
    }
}

/// Level-set extremization against a closed form: for the oscillator the
/// level set {V = v} is the circle of radius sqrt(2v).
#[test]
fn levelset_envelope_matches_radius_map() {
    let o = builtin_oscillator();
    let synth = Synthesizer::new(&o.sys, &o.v, &o.g_dir, SynthesisOptions::default()).unwrap();
    let radial = synth.radial_envelopes().unwrap();
    let margins = synth.margin_functions().unwrap();
    let levels = synth.level_grid(radial.v_top);
    let shells = synth.shell_table(&levels, &radial).unwrap();
    let nmin = synth
        .levelset_extrema(&shells, clf_synth::synthesis::ShellMode::Min, |x| {
            Ok(margins.nfloor.eval(norm(x)))
        })
        .unwrap();
    for (j, &v) in shells.levels.iter().enumerate() {
        let exact = margins.nfloor.eval((2.0 * v).sqrt());
        // Shell tolerance 5% in V is 2.5% in radius.
        assert!(
            (nmin[j] - exact).abs() <= 0.12 * exact.max(1e-12),
            "level {v}: {} vs {exact}",
            nmin[j]
        );
    }
}
