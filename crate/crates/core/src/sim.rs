//! Closed- and open-loop simulation with along-trajectory Lyapunov and
//! integral-gain bookkeeping.
//!
//! Feedback is evaluated continuously (no sample-and-hold). Divergence is
//! converted into a reported error by a blow-up guard at `|x| = 1e9`, and
//! the adaptive integrator refuses steps below `1e-12`.

use crate::error::{Error, EvalError, Result};
use crate::field::ScalarField;
use crate::synthesis::norm;
use crate::systems::{ControlAffineSystem, FeedbackLaw, FullyNonlinearSystem};
use crate::verify::{Certificate, Verdict};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    Rk4 { h: f64 },
    Rkf45 { abs_tol: f64, rel_tol: f64 },
}

impl Default for Method {
    fn default() -> Self {
        Method::Rkf45 {
            abs_tol: 1e-9,
            rel_tol: 1e-9,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub steps: u64,
    pub rejected: u64,
}

/// Time-stamped record of a closed-loop run.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub disturbances: Vec<Vec<f64>>,
    /// Cumulative disturbance energy `int_0^t |d|`.
    pub disturbance_energy: Vec<f64>,
    pub v: Option<Vec<f64>>,
    pub vsharp: Option<Vec<f64>>,
    pub utilde: Option<Vec<f64>>,
    pub stats: IntegratorStats,
}

/// Actuator-error signals; measurable and locally bounded by construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Disturbance {
    Zero {
        dim: usize,
    },
    Constant {
        values: Vec<f64>,
    },
    DecayingExp {
        amplitude: Vec<f64>,
        rate: f64,
    },
    Sinusoid {
        amplitude: Vec<f64>,
        angular_frequency: f64,
        phase: f64,
    },
    /// Zero-order hold over `times` (piecewise constant, last value held).
    Table {
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl Disturbance {
    pub fn dim(&self) -> usize {
        match self {
            Disturbance::Zero { dim } => *dim,
            Disturbance::Constant { values } => values.len(),
            Disturbance::DecayingExp { amplitude, .. } => amplitude.len(),
            Disturbance::Sinusoid { amplitude, .. } => amplitude.len(),
            Disturbance::Table { values, .. } => values.first().map(Vec::len).unwrap_or(0),
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        match self {
            Disturbance::Zero { dim } => vec![0.0; *dim],
            Disturbance::Constant { values } => values.clone(),
            Disturbance::DecayingExp { amplitude, rate } => {
                let w = (-rate * t).exp();
                amplitude.iter().map(|a| a * w).collect()
            }
            Disturbance::Sinusoid {
                amplitude,
                angular_frequency,
                phase,
            } => {
                let w = (angular_frequency * t + phase).sin();
                amplitude.iter().map(|a| a * w).collect()
            }
            Disturbance::Table { times, values } => {
                let k = times.partition_point(|&tk| tk <= t);
                if k == 0 {
                    vec![0.0; self.dim()]
                } else {
                    values[k - 1].clone()
                }
            }
        }
    }

    fn magnitude(&self, t: f64) -> f64 {
        norm(&self.eval(t))
    }
}

/// One integration step; `rhs` may depend on time through the disturbance.
type Rhs<'a> = dyn Fn(f64, &[f64]) -> std::result::Result<Vec<f64>, EvalError> + 'a;

fn guard(t: f64, x: &[f64]) -> Result<()> {
    let r = norm(x);
    if !r.is_finite() || r > 1e9 {
        return Err(Error::Blowup { t, norm: r });
    }
    Ok(())
}

fn rk4_step(rhs: &Rhs, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let k1 = rhs(t, x).map_err(Error::Eval)?;
    let mid1: Vec<f64> = x.iter().zip(&k1).map(|(xi, k)| xi + 0.5 * h * k).collect();
    let k2 = rhs(t + 0.5 * h, &mid1).map_err(Error::Eval)?;
    let mid2: Vec<f64> = x.iter().zip(&k2).map(|(xi, k)| xi + 0.5 * h * k).collect();
    let k3 = rhs(t + 0.5 * h, &mid2).map_err(Error::Eval)?;
    let end: Vec<f64> = x.iter().zip(&k3).map(|(xi, k)| xi + h * k).collect();
    let k4 = rhs(t + h, &end).map_err(Error::Eval)?;
    Ok(x.iter()
        .enumerate()
        .map(|(i, xi)| xi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

// Fehlberg 4(5) tableau.
const A: [[f64; 5]; 5] = [
    [0.25, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [
        -8.0 / 27.0,
        2.0,
        -3544.0 / 2565.0,
        1859.0 / 4104.0,
        -11.0 / 40.0,
    ],
];
const C: [f64; 6] = [0.0, 0.25, 0.375, 12.0 / 13.0, 1.0, 0.5];
const B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];
const B4: [f64; 6] = [
    25.0 / 216.0,
    0.0,
    1408.0 / 2565.0,
    2197.0 / 4104.0,
    -0.2,
    0.0,
];

struct Rkf45Step {
    /// Fifth-order solution (propagated: local extrapolation).
    y5: Vec<f64>,
    /// Scaled error estimate against the embedded fourth-order solution.
    err_ratio: f64,
}

fn rkf45_step(
    rhs: &Rhs,
    t: f64,
    x: &[f64],
    h: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Rkf45Step> {
    let n = x.len();
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(6);
    k.push(rhs(t, x).map_err(Error::Eval)?);
    for stage in 1..6 {
        let mut arg = x.to_vec();
        for (j, kj) in k.iter().enumerate() {
            let a = A[stage - 1][j];
            if a != 0.0 {
                for (ai, kji) in arg.iter_mut().zip(kj) {
                    *ai += h * a * kji;
                }
            }
        }
        k.push(rhs(t + C[stage] * h, &arg).map_err(Error::Eval)?);
    }
    let mut y5 = x.to_vec();
    let mut y4 = x.to_vec();
    for (j, kj) in k.iter().enumerate() {
        for i in 0..n {
            y5[i] += h * B5[j] * kj[i];
            y4[i] += h * B4[j] * kj[i];
        }
    }
    let mut err_ratio = 0.0f64;
    for i in 0..n {
        let scale = abs_tol + rel_tol * x[i].abs().max(y5[i].abs());
        err_ratio = err_ratio.max((y5[i] - y4[i]).abs() / scale);
    }
    Ok(Rkf45Step { y5, err_ratio })
}

/// Integrate `xdot = rhs(t, x)` from `x0` over `[0, t_end]`, recording
/// every accepted step.
pub fn integrate(
    rhs: &Rhs,
    x0: &[f64],
    t_end: f64,
    method: Method,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, IntegratorStats)> {
    if t_end <= 0.0 {
        return Err(Error::Invalid(
            "integration horizon must be positive".into(),
        ));
    }
    let mut times = vec![0.0];
    let mut states = vec![x0.to_vec()];
    let mut stats = IntegratorStats::default();
    match method {
        Method::Rk4 { h } => {
            if h <= 0.0 {
                return Err(Error::Invalid("rk4 needs a positive step".into()));
            }
            let mut t = 0.0;
            let mut x = x0.to_vec();
            while t < t_end - 1e-12 {
                let step = h.min(t_end - t);
                x = rk4_step(rhs, t, &x, step)?;
                t += step;
                guard(t, &x)?;
                stats.steps += 1;
                times.push(t);
                states.push(x.clone());
            }
        }
        Method::Rkf45 { abs_tol, rel_tol } => {
            let mut t = 0.0;
            let mut x = x0.to_vec();
            let mut h = (t_end / 100.0).clamp(1e-6, 1e-2);
            while t < t_end - 1e-12 {
                h = h.min(t_end - t);
                if h < 1e-12 {
                    return Err(Error::StepUnderflow { t, h });
                }
                let step = rkf45_step(rhs, t, &x, h, abs_tol, rel_tol)?;
                if step.err_ratio <= 1.0 {
                    t += h;
                    x = step.y5;
                    guard(t, &x)?;
                    stats.steps += 1;
                    times.push(t);
                    states.push(x.clone());
                } else {
                    stats.rejected += 1;
                }
                let factor = if step.err_ratio > 0.0 {
                    0.9 * step.err_ratio.powf(-0.2)
                } else {
                    5.0
                };
                h *= factor.clamp(0.2, 5.0);
            }
        }
    }
    Ok((times, states, stats))
}

/// The plant side of a closed loop.
#[derive(Clone, Copy)]
pub enum Plant<'a> {
    Affine(&'a ControlAffineSystem),
    Nonlinear(&'a FullyNonlinearSystem),
}

impl Plant<'_> {
    pub fn state_dim(&self) -> usize {
        match self {
            Plant::Affine(s) => s.state_dim(),
            Plant::Nonlinear(s) => s.state_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Plant::Affine(s) => s.input_dim(),
            Plant::Nonlinear(s) => s.input_dim(),
        }
    }

    fn rhs(&self, x: &[f64], u: &[f64]) -> std::result::Result<Vec<f64>, EvalError> {
        match self {
            Plant::Affine(s) => s.rhs(x, u),
            Plant::Nonlinear(s) => s.rhs(x, u),
        }
    }
}

/// Observables recorded along a run.
#[derive(Clone, Copy, Default)]
pub struct ObservableSet<'a> {
    pub v: Option<&'a ScalarField>,
    pub vsharp: Option<&'a ScalarField>,
    pub utilde: Option<&'a ScalarField>,
}

/// Simulate `xdot = plant(x, feedback(x) + d(t))` and record inputs,
/// disturbances, observables and the running disturbance energy. The
/// feedback is evaluated continuously; see [`simulate_sampled_hold`] for
/// the zero-order-hold variant.
pub fn simulate_closed_loop(
    plant: Plant,
    feedback: &FeedbackLaw,
    disturbance: &Disturbance,
    x0: &[f64],
    t_end: f64,
    method: Method,
    observe: ObservableSet,
) -> Result<Trajectory> {
    let m = plant.input_dim();
    if feedback.input_dim() != m || disturbance.dim() != m {
        return Err(Error::Dimension {
            what: "closed-loop input".into(),
            expected: m,
            got: feedback.input_dim(),
        });
    }
    let rhs = |t: f64, x: &[f64]| -> std::result::Result<Vec<f64>, EvalError> {
        let mut u = feedback.eval(x)?;
        for (uk, dk) in u.iter_mut().zip(disturbance.eval(t)) {
            *uk += dk;
        }
        plant.rhs(x, &u)
    };
    let (times, states, stats) = integrate(&rhs, x0, t_end, method)?;

    let mut traj = Trajectory {
        stats,
        ..Trajectory::default()
    };
    let mut energy = 0.0;
    let series = |field: Option<&ScalarField>, states: &[Vec<f64>]| -> Result<Option<Vec<f64>>> {
        field
            .map(|f| {
                states
                    .iter()
                    .map(|x| f.eval(x).map_err(Error::Eval))
                    .collect::<Result<Vec<f64>>>()
            })
            .transpose()
    };
    for (idx, (t, x)) in times.iter().zip(&states).enumerate() {
        let u = feedback.eval(x).map_err(Error::Eval)?;
        let d = disturbance.eval(*t);
        if idx > 0 {
            // Composite Simpson on each accepted step for int |d|.
            let (t0, t1) = (times[idx - 1], *t);
            let mid = 0.5 * (t0 + t1);
            energy += (t1 - t0) / 6.0
                * (disturbance.magnitude(t0)
                    + 4.0 * disturbance.magnitude(mid)
                    + disturbance.magnitude(t1));
        }
        traj.times.push(*t);
        traj.states.push(x.clone());
        traj.inputs.push(u);
        traj.disturbances.push(d);
        traj.disturbance_energy.push(energy);
    }
    traj.v = series(observe.v, &traj.states)?;
    traj.vsharp = series(observe.vsharp, &traj.states)?;
    traj.utilde = series(observe.utilde, &traj.states)?;
    Ok(traj)
}

/// Zero-order-hold variant: the feedback is sampled every `period`
/// seconds and held constant between samples (the disturbance stays time
/// continuous). A realism option; the construction's guarantees are for
/// the continuous law.
#[allow(clippy::too_many_arguments)]
pub fn simulate_sampled_hold(
    plant: Plant,
    feedback: &FeedbackLaw,
    disturbance: &Disturbance,
    x0: &[f64],
    t_end: f64,
    period: f64,
    method: Method,
    observe: ObservableSet,
) -> Result<Trajectory> {
    if period <= 0.0 {
        return Err(Error::Invalid("hold period must be positive".into()));
    }
    let m = plant.input_dim();
    if feedback.input_dim() != m || disturbance.dim() != m {
        return Err(Error::Dimension {
            what: "closed-loop input".into(),
            expected: m,
            got: feedback.input_dim(),
        });
    }
    let mut traj = Trajectory::default();
    let mut t0 = 0.0;
    let mut x = x0.to_vec();
    let mut energy = 0.0;
    traj.times.push(0.0);
    traj.states.push(x.clone());
    traj.inputs.push(feedback.eval(&x).map_err(Error::Eval)?);
    traj.disturbances.push(disturbance.eval(0.0));
    traj.disturbance_energy.push(0.0);
    while t0 < t_end - 1e-12 {
        let window = period.min(t_end - t0);
        let held = feedback.eval(&x).map_err(Error::Eval)?;
        let rhs = |tau: f64, x: &[f64]| -> std::result::Result<Vec<f64>, EvalError> {
            let mut u = held.clone();
            for (uk, dk) in u.iter_mut().zip(disturbance.eval(t0 + tau)) {
                *uk += dk;
            }
            plant.rhs(x, &u)
        };
        let (times, states, stats) = integrate(&rhs, &x, window, method)?;
        traj.stats.steps += stats.steps;
        traj.stats.rejected += stats.rejected;
        for (tau, xs) in times.iter().zip(&states).skip(1) {
            let t = t0 + tau;
            let prev_t = *traj.times.last().expect("nonempty");
            let mid = 0.5 * (prev_t + t);
            energy += (t - prev_t) / 6.0
                * (norm(&disturbance.eval(prev_t))
                    + 4.0 * norm(&disturbance.eval(mid))
                    + norm(&disturbance.eval(t)));
            traj.times.push(t);
            traj.states.push(xs.clone());
            traj.inputs.push(held.clone());
            traj.disturbances.push(disturbance.eval(t));
            traj.disturbance_energy.push(energy);
        }
        x = states.last().expect("nonempty").clone();
        t0 += window;
    }
    let series = |field: Option<&ScalarField>, states: &[Vec<f64>]| -> Result<Option<Vec<f64>>> {
        field
            .map(|f| {
                states
                    .iter()
                    .map(|x| f.eval(x).map_err(Error::Eval))
                    .collect::<Result<Vec<f64>>>()
            })
            .transpose()
    };
    traj.v = series(observe.v, &traj.states)?;
    traj.vsharp = series(observe.vsharp, &traj.states)?;
    traj.utilde = series(observe.utilde, &traj.states)?;
    Ok(traj)
}

/// Largest increase of `w` between consecutive recorded states; negative
/// when `w` decreases monotonically.
pub fn lyapunov_monotonicity(traj: &Trajectory, w: &ScalarField) -> Result<f64> {
    let mut max_increase = f64::NEG_INFINITY;
    let mut prev: Option<f64> = None;
    for x in &traj.states {
        let val = w.eval(x).map_err(Error::Eval)?;
        if let Some(p) = prev {
            max_increase = max_increase.max(val - p);
        }
        prev = Some(val);
    }
    Ok(if max_increase.is_finite() {
        max_increase
    } else {
        0.0
    })
}

/// Trajectory-level integral gain bound:
/// `Utilde(x(t)) <= Utilde(x(0)) + int_0^t |d| + 1e-6 (1 + t)` at every
/// recorded time.
pub fn iiss_trajectory_bound(traj: &Trajectory, seed: u64) -> Result<Certificate> {
    let utilde = traj
        .utilde
        .as_ref()
        .ok_or_else(|| Error::Invalid("trajectory carries no Utilde series".into()))?;
    let u0 = utilde[0];
    let mut worst = f64::INFINITY;
    let mut worst_at = 0.0;
    for ((t, u), energy) in traj.times.iter().zip(utilde).zip(&traj.disturbance_energy) {
        let margin = u0 + energy + 1e-6 * (1.0 + t) - u;
        if margin < worst {
            worst = margin;
            worst_at = *t;
        }
    }
    let pass = worst >= 0.0;
    Ok(Certificate {
        id: "iiss-trajectory".into(),
        verdict: if pass {
            Verdict::PassOnRegion
        } else {
            Verdict::Fail
        },
        region_radius: traj.states.iter().map(|x| norm(x)).fold(0.0, f64::max),
        samples: traj.times.len() as u64,
        seed,
        worst_margin: worst,
        witness: (!pass).then(|| vec![worst_at]),
        constraints: vec!["Utilde(x(t)) <= Utilde(x(0)) + int |d| + 1e-6 (1 + t)".into()],
        notes: Vec::new(),
    })
}

/// Write the run as CSV with 17 significant digits. Header:
/// `t,x1,...,xn,u1,...,um,d1,...,dm,V,Vsharp,Utilde`, observable columns
/// present only when recorded.
pub fn write_csv(traj: &Trajectory, out: &mut dyn Write) -> std::io::Result<()> {
    let n = traj.states.first().map(Vec::len).unwrap_or(0);
    let m = traj.inputs.first().map(Vec::len).unwrap_or(0);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend((1..=m).map(|i| format!("d{i}")));
    if traj.v.is_some() {
        header.push("V".into());
    }
    if traj.vsharp.is_some() {
        header.push("Vsharp".into());
    }
    if traj.utilde.is_some() {
        header.push("Utilde".into());
    }
    writeln!(out, "{}", header.join(","))?;
    for i in 0..traj.times.len() {
        let mut row = vec![fmt17(traj.times[i])];
        row.extend(traj.states[i].iter().map(|v| fmt17(*v)));
        row.extend(traj.inputs[i].iter().map(|v| fmt17(*v)));
        row.extend(traj.disturbances[i].iter().map(|v| fmt17(*v)));
        if let Some(v) = &traj.v {
            row.push(fmt17(v[i]));
        }
        if let Some(v) = &traj.vsharp {
            row.push(fmt17(v[i]));
        }
        if let Some(v) = &traj.utilde {
            row.push(fmt17(v[i]));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
