//! Command implementations. Exit-status contract: 0 = all verdicts pass,
//! 2 = a verdict failed, 1 = operational error.

use crate::config::{build_model, BuiltModel, FeedbackChoice, RunConfig};
use clf_synth::iiss::{build_iiss, refresh_report, validate_d};
use clf_synth::sim::{
    iiss_trajectory_bound, lyapunov_monotonicity, simulate_closed_loop, simulate_sampled_hold,
    write_csv, Disturbance, ObservableSet, Plant,
};
use clf_synth::synthesis::{norm, SynthesisResult, Synthesizer};
use clf_synth::systems::FeedbackLaw;
use clf_synth::verify::{check_h1, check_h2, check_weak_kernel, Certificate, Sampler};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

pub enum Outcome {
    AllPass,
    VerdictFailed(String),
}

pub type CmdResult = Result<Outcome, String>;

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, String> {
    let dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), String> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    fs::write(&path, text + "\n").map_err(|e| format!("cannot write {}: {e}", path.display()))
}

#[derive(Serialize)]
struct StampedCertificate<'a> {
    config_hash: &'a str,
    #[serde(flatten)]
    certificate: &'a Certificate,
}

/// `check`: one certificate file per assumption; pass iff all pass.
pub fn cmd_check(cfg: &RunConfig) -> CmdResult {
    let model = build_model(cfg)?;
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    let sampler = Sampler::ball(cfg.seed, cfg.region_radius, cfg.check_samples);
    let mut all = Vec::new();

    let h1 = check_h1(&model.v, model.affine.drift(), &sampler).map_err(|e| e.to_string())?;
    write_json(
        &dir,
        "h1.json",
        &StampedCertificate {
            config_hash: &hash,
            certificate: &h1,
        },
    )?;
    all.push(h1);

    let h2 = check_h2(
        &model.v,
        &model.affine,
        &model.g_dir,
        &sampler,
        cfg.tube_tol,
    )
    .map_err(|e| e.to_string())?;
    write_json(
        &dir,
        "h2.json",
        &StampedCertificate {
            config_hash: &hash,
            certificate: &h2,
        },
    )?;
    all.push(h2);

    if let Some(depth) = cfg.jq_depth {
        let jq = check_weak_kernel(&model.v, &model.affine, depth, &sampler, cfg.zero_tol)
            .map_err(|e| e.to_string())?;
        write_json(
            &dir,
            "weak_kernel.json",
            &StampedCertificate {
                config_hash: &hash,
                certificate: &jq,
            },
        )?;
        all.push(jq);
    }
    if let Some(d) = &model.d_gain {
        let h3 = validate_d(d, &model.v, &model.affine, &sampler).map_err(|e| e.to_string())?;
        write_json(
            &dir,
            "h3.json",
            &StampedCertificate {
                config_hash: &hash,
                certificate: &h3,
            },
        )?;
        all.push(h3);
    }

    for cert in &all {
        println!(
            "{:<12} {:?}  worst margin {:+.6e}",
            cert.id, cert.verdict, cert.worst_margin
        );
    }
    match all.iter().find(|c| !c.is_pass()) {
        Some(bad) => Ok(Outcome::VerdictFailed(format!("{} failed", bad.id))),
        None => Ok(Outcome::AllPass),
    }
}

/// Preflight the standing assumptions; a failed check is a verdict
/// failure (exit 2), not an operational error.
fn preflight(cfg: &RunConfig, model: &BuiltModel, force: bool) -> Result<Option<Outcome>, String> {
    if force {
        return Ok(None);
    }
    let sampler = Sampler::ball(cfg.seed, cfg.region_radius, cfg.check_samples);
    let h1 = check_h1(&model.v, model.affine.drift(), &sampler).map_err(|e| e.to_string())?;
    if !h1.is_pass() {
        return Ok(Some(Outcome::VerdictFailed(
            "refusing to synthesize: H1 check failed (rerun with --force to override)".into(),
        )));
    }
    let h2 = check_h2(
        &model.v,
        &model.affine,
        &model.g_dir,
        &sampler,
        cfg.tube_tol,
    )
    .map_err(|e| e.to_string())?;
    if !h2.is_pass() {
        return Ok(Some(Outcome::VerdictFailed(
            "refusing to synthesize: H2 check failed (rerun with --force to override)".into(),
        )));
    }
    Ok(None)
}

fn run_synthesis(cfg: &RunConfig, model: &BuiltModel) -> Result<SynthesisResult, String> {
    let opts = cfg.synthesis_options();
    let synth =
        Synthesizer::new(&model.affine, &model.v, &model.g_dir, opts).map_err(|e| e.to_string())?;
    let synth = match &model.nonlinear {
        Some(full) => synth.with_nonlinear(full),
        None => synth,
    };
    synth.run().map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct StampedSynthesis<'a> {
    config_hash: &'a str,
    #[serde(flatten)]
    certificate: clf_synth::synthesis::SynthesisCertificate,
}

/// `synthesize`: run the constructive pipeline, write the certificate.
pub fn cmd_synthesize(cfg: &RunConfig, force: bool) -> CmdResult {
    let model = build_model(cfg)?;
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    if let Some(refusal) = preflight(cfg, &model, force)? {
        return Ok(refusal);
    }
    let result = run_synthesis(cfg, &model)?;
    write_json(
        &dir,
        "synthesis.json",
        &StampedSynthesis {
            config_hash: &hash,
            certificate: result.certificate(),
        },
    )?;
    for c in &result.constraint_report {
        println!(
            "{:<14} margin {:+.6e}  ({} samples)",
            c.id, c.margin, c.samples
        );
    }
    if result.all_pass() {
        Ok(Outcome::AllPass)
    } else {
        Ok(Outcome::VerdictFailed(
            "a synthesis constraint margin is negative".into(),
        ))
    }
}

#[derive(Serialize)]
struct SimSummary {
    config_hash: String,
    t_end: f64,
    final_state_norm: f64,
    sup_input_norm: f64,
    max_vsharp_increase: Option<f64>,
    iiss_bound: String,
    iiss_margin: Option<f64>,
    steps: u64,
    rejected_steps: u64,
}

/// `simulate`: closed loop with the synthesized or reference feedback.
pub fn cmd_simulate(cfg: &RunConfig, force: bool) -> CmdResult {
    let model = build_model(cfg)?;
    let dir = out_dir(cfg)?;
    let n = model.affine.state_dim();
    let x0 = cfg
        .x0
        .clone()
        .ok_or_else(|| "missing key `x0` for simulate".to_string())?;
    if x0.len() != n {
        return Err(format!("x0 needs {n} entries, got {}", x0.len()));
    }
    let disturbance = cfg.disturbance.clone().unwrap_or(Disturbance::Zero {
        dim: model.affine.input_dim(),
    });

    // Assemble feedback, strict function and (optionally) the integral-gain
    // observable.
    let mut utilde = None;
    let (feedback, vsharp): (FeedbackLaw, clf_synth::field::ScalarField) = match cfg.feedback {
        FeedbackChoice::Reference => {
            let reference = model.reference.as_ref().ok_or_else(|| {
                "feedback = reference requires the manipulator builtin".to_string()
            })?;
            (reference.feedback.clone(), reference.vsharp.clone())
        }
        FeedbackChoice::Synthesized => {
            if let Some(refusal) = preflight(cfg, &model, force)? {
                return Ok(refusal);
            }
            let mut result = run_synthesis(cfg, &model)?;
            if let Some(d) = &model.d_gain {
                let iiss = build_iiss(
                    &model.affine,
                    &model.v,
                    &model.g_dir,
                    d,
                    &mut result,
                    &cfg.synthesis_options(),
                )
                .map_err(|e| e.to_string())?;
                utilde = Some(iiss.u_tilde.clone());
            }
            (result.feedback.clone(), result.vsharp.clone())
        }
    };

    let plant = match (&model.nonlinear, cfg.feedback) {
        // The reference feedback was derived for the affine form.
        (_, FeedbackChoice::Reference) => Plant::Affine(&model.affine),
        (Some(full), _) => Plant::Nonlinear(full),
        (None, _) => Plant::Affine(&model.affine),
    };
    let observe = ObservableSet {
        v: Some(&model.v),
        vsharp: Some(&vsharp),
        utilde: utilde.as_ref(),
    };
    let traj = match cfg.hold {
        None => simulate_closed_loop(
            plant,
            &feedback,
            &disturbance,
            &x0,
            cfg.t_end,
            cfg.integrator,
            observe,
        ),
        Some(period) => simulate_sampled_hold(
            plant,
            &feedback,
            &disturbance,
            &x0,
            cfg.t_end,
            period,
            cfg.integrator,
            observe,
        ),
    }
    .map_err(|e| e.to_string())?;

    let csv_path = dir.join("trajectory.csv");
    let mut buf = Vec::new();
    write_csv(&traj, &mut buf).map_err(|e| e.to_string())?;
    fs::write(&csv_path, buf).map_err(|e| format!("cannot write {}: {e}", csv_path.display()))?;

    let max_inc = lyapunov_monotonicity(&traj, &vsharp).map_err(|e| e.to_string())?;
    let (iiss_bound, iiss_margin) = match traj.utilde.is_some() {
        true => {
            let cert = iiss_trajectory_bound(&traj, cfg.seed).map_err(|e| e.to_string())?;
            (
                if cert.is_pass() {
                    "pass".to_string()
                } else {
                    "fail".to_string()
                },
                Some(cert.worst_margin),
            )
        }
        false => ("not-evaluated".to_string(), None),
    };
    let summary = SimSummary {
        config_hash: cfg.hash(),
        t_end: cfg.t_end,
        final_state_norm: norm(traj.states.last().expect("nonempty trajectory")),
        sup_input_norm: traj.inputs.iter().map(|u| norm(u)).fold(0.0, f64::max),
        max_vsharp_increase: Some(max_inc),
        iiss_bound: iiss_bound.clone(),
        iiss_margin,
        steps: traj.stats.steps,
        rejected_steps: traj.stats.rejected,
    };
    write_json(&dir, "summary.json", &summary)?;
    println!(
        "t_end {}  |x(T)| {:.6e}  sup|u| {:.6e}  max dVsharp {:+.3e}  iISS {}",
        cfg.t_end, summary.final_state_norm, summary.sup_input_norm, max_inc, iiss_bound
    );
    if iiss_bound == "fail" {
        return Ok(Outcome::VerdictFailed(
            "trajectory integral bound failed".into(),
        ));
    }
    Ok(Outcome::AllPass)
}

/// `iiss`: synthesis plus the integral-gain chain and its certificates.
pub fn cmd_iiss(cfg: &RunConfig, force: bool) -> CmdResult {
    let model = build_model(cfg)?;
    let dir = out_dir(cfg)?;
    let d = model
        .d_gain
        .as_ref()
        .ok_or_else(|| "missing key `d_gain` (no gain bound configured)".to_string())?;
    if let Some(refusal) = preflight(cfg, &model, force)? {
        return Ok(refusal);
    }
    let mut result = run_synthesis(cfg, &model)?;
    let opts = cfg.synthesis_options();
    let iiss = build_iiss(&model.affine, &model.v, &model.g_dir, d, &mut result, &opts)
        .map_err(|e| e.to_string())?;
    if iiss.delta_halvings > 0 {
        refresh_report(&model.affine, &model.v, &model.g_dir, &mut result, &opts)
            .map_err(|e| e.to_string())?;
    }
    let hash = cfg.hash();
    write_json(
        &dir,
        "synthesis.json",
        &StampedSynthesis {
            config_hash: &hash,
            certificate: result.certificate(),
        },
    )?;
    #[derive(Serialize)]
    struct StampedIiss {
        config_hash: String,
        #[serde(flatten)]
        body: clf_synth::iiss::IissCertificate,
    }
    write_json(
        &dir,
        "iiss.json",
        &StampedIiss {
            config_hash: hash,
            body: iiss.certificate(d.declared_divergent()),
        },
    )?;
    for c in &iiss.certificates {
        println!(
            "{:<8} {:?}  worst margin {:+.6e}",
            c.id, c.verdict, c.worst_margin
        );
    }
    if iiss.all_pass() && result.all_pass() {
        Ok(Outcome::AllPass)
    } else {
        Ok(Outcome::VerdictFailed(
            "an integral-gain check failed".into(),
        ))
    }
}

/// `report`: flatten prior artifacts into two-column plot data.
pub fn cmd_report(cfg: &RunConfig) -> CmdResult {
    let dir = out_dir(cfg)?;
    let synthesis = dir.join("synthesis.json");
    let trajectory = dir.join("trajectory.csv");
    let mut missing = Vec::new();
    if !synthesis.exists() {
        missing.push(synthesis.display().to_string());
    }
    if !trajectory.exists() {
        missing.push(trajectory.display().to_string());
    }
    if missing.len() == 2 {
        return Err(format!(
            "no artifacts to report; missing: {}",
            missing.join(", ")
        ));
    }

    let mut written = Vec::new();
    if synthesis.exists() {
        let text = fs::read_to_string(&synthesis).map_err(|e| e.to_string())?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        for key in [
            "alpha1",
            "alpha2",
            "alpha3",
            "alpha4",
            "rho",
            "gamma",
            "nfloor",
            "delta_cap",
            "p_floor",
            "omega",
            "delta",
            "xi",
            "lgv_max",
            "big_omega",
        ] {
            let Some(table) = value.get(key) else {
                continue;
            };
            let env: clf_synth::synthesis::EnvelopeTable =
                serde_json::from_value(table.clone()).map_err(|e| e.to_string())?;
            let path = dir.join(format!("{key}.dat"));
            let mut out = String::new();
            // Emit the positive grid rows (the level/radius tables).
            for (s, v) in env.s.iter().zip(&env.v).skip(1) {
                out.push_str(&format!("{s:.16e} {v:.16e}\n"));
            }
            fs::write(&path, out).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            written.push(path.display().to_string());
        }
    }
    if trajectory.exists() {
        let text = fs::read_to_string(&trajectory).map_err(|e| e.to_string())?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
        let rows: Vec<Vec<f64>> = lines
            .map(|l| {
                l.split(',')
                    .map(|c| c.parse::<f64>().unwrap_or(f64::NAN))
                    .collect()
            })
            .collect();
        for (col, name) in header.iter().enumerate().skip(1) {
            let file = match *name {
                "V" => "v_vs_t.dat",
                "Vsharp" => "vsharp_vs_t.dat",
                "Utilde" => "utilde_vs_t.dat",
                _ => continue,
            };
            let path = dir.join(file);
            let mut out = String::new();
            for row in &rows {
                out.push_str(&format!("{:.16e} {:.16e}\n", row[0], row[col]));
            }
            fs::write(&path, out).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            written.push(path.display().to_string());
        }
    }
    for w in &written {
        println!("wrote {w}");
    }
    Ok(Outcome::AllPass)
}
