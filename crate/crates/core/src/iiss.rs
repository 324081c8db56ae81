//! Integral disturbance-gain machinery: the divergent gain bound `D`, the
//! rescaled Lyapunov function `Utilde = int_0^U dp / D(p)`, and the decay
//! certificate `grad Utilde . F(x, d) <= -alpha5(|x|) + |d|` under actuator
//! errors entering through the input channels.

use crate::envelope::{deflate, MonotoneEnvelope, Monotonicity};
use crate::error::{Error, EvalError, Result};
use crate::field::{ScalarField, VectorField};
use crate::quad;
use crate::sampling::{par_extremum, streams, Extremum};
use crate::scalar::{GenericField, Scalar};
use crate::synthesis::{
    closed_loop_derivative, norm, PipelineFields, SynthesisOptions, SynthesisResult, Synthesizer,
};
use crate::systems::ControlAffineSystem;
use crate::verify::{Certificate, Sampler, Verdict};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// A positive nondecreasing gain bound `D` with a declared divergent
/// integral `int_0^inf ds / D(s) = +inf`. Divergence is not decidable from
/// samples; it is recorded as declared and probed for finite consistency.
#[derive(Clone, Debug)]
pub struct DFunction {
    field: ScalarField,
    declared_divergent: bool,
}

struct AffineD {
    slope: f64,
    offset: f64,
}

impl GenericField for AffineD {
    fn dim(&self) -> usize {
        1
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        Ok(S::from_f64(self.slope) * x[0].clone() + S::from_f64(self.offset))
    }
}

struct SqrtShiftD {
    scale: f64,
}

impl GenericField for SqrtShiftD {
    fn dim(&self) -> usize {
        1
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        (S::from_f64(self.scale) * (x[0].clone() + S::one())).sqrt()
    }
}

/// `p -> D(2p) + 1`.
struct AdjustedD {
    inner: ScalarField,
}

impl GenericField for AdjustedD {
    fn dim(&self) -> usize {
        1
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        Ok(self.inner.eval_s(&[S::from_f64(2.0) * x[0].clone()])? + S::one())
    }
}

impl DFunction {
    /// `D(s) = slope s + offset` (divergent for positive slope).
    pub fn affine(slope: f64, offset: f64) -> Self {
        DFunction {
            field: ScalarField::new(Arc::new(AffineD { slope, offset })),
            declared_divergent: true,
        }
    }

    /// The gain bound suiting inverse-inertia spectra in
    /// `[lambda_min, lambda_max]`: `D(s) = sqrt(2 (lambda_max^2 /
    /// lambda_min) (s + 1))`.
    pub fn hamiltonian(lambda_min: f64, lambda_max: f64) -> Self {
        DFunction {
            field: ScalarField::new(Arc::new(SqrtShiftD {
                scale: 2.0 * lambda_max * lambda_max / lambda_min,
            })),
            declared_divergent: true,
        }
    }

    /// Wrap a one-variable field; `declared_divergent` is the caller's
    /// assertion about the integral of `1/D`.
    pub fn from_field(field: ScalarField, declared_divergent: bool) -> Result<Self> {
        if field.dim() != 1 {
            return Err(Error::Dimension {
                what: "gain bound".into(),
                expected: 1,
                got: field.dim(),
            });
        }
        Ok(DFunction {
            field,
            declared_divergent,
        })
    }

    pub fn eval(&self, s: f64) -> Result<f64> {
        self.field.eval(&[s]).map_err(Error::Eval)
    }

    pub fn declared_divergent(&self) -> bool {
        self.declared_divergent
    }

    /// `D'(p) = D(2p) + 1`, which absorbs the gap between `V` and `U`.
    pub fn adjusted_for_u(&self) -> DFunction {
        DFunction {
            field: ScalarField::new(Arc::new(AdjustedD {
                inner: self.field.clone(),
            })),
            declared_divergent: self.declared_divergent,
        }
    }
}

/// Validate a gain bound against `|L_g V| <= D(V)`: positivity and
/// monotonicity on a log grid, the sampled bound, and a finite-horizon
/// consistency probe of the declared divergence (the integral of `1/D` must
/// keep growing through `s = 1e6`).
pub fn validate_d(
    d: &DFunction,
    v: &ScalarField,
    sys: &ControlAffineSystem,
    sampler: &Sampler,
) -> Result<Certificate> {
    let constraints = vec![
        "D positive on grid".to_string(),
        "D nondecreasing on grid".to_string(),
        "|L_g V| <= D(V) at samples".to_string(),
        "divergence declared, finitely consistent".to_string(),
    ];
    let mut notes = Vec::new();

    // Positivity / monotonicity on a geometric grid.
    let grid: Vec<f64> = (0..64)
        .map(|i| 1e-6 * (1e12f64).powf(i as f64 / 63.0))
        .collect();
    let mut prev = f64::NEG_INFINITY;
    for &s in &grid {
        let val = d.eval(s)?;
        if val <= 0.0 {
            return Ok(fail_cert("H3", sampler, val, vec![s], constraints));
        }
        if val < prev * (1.0 - 1e-12) {
            return Ok(fail_cert("H3", sampler, val - prev, vec![s], constraints));
        }
        prev = val;
    }

    // Sampled gain bound.
    let fields = PipelineFields::build(sys, v, &trivial_direction(sys.state_dim()))?;
    let worst = par_extremum(
        sampler.seed,
        streams::VERIFY ^ 0x33,
        sampler.count,
        Extremum::Min,
        |_i, rng| {
            let x = rng.in_ball(v.dim(), sampler.radius);
            let lgv = fields.lgv_norm.eval(&x).map_err(Error::Eval)?;
            let vv = v.eval(&x).map_err(Error::Eval)?;
            Ok(Some((d.eval(vv)? - lgv, x)))
        },
    )?
    .expect("count > 0");
    if worst.value < 0.0 {
        return Ok(fail_cert(
            "H3",
            sampler,
            worst.value,
            worst.point,
            constraints,
        ));
    }

    // Finite-horizon divergence probe: decade increments of int 1/D.
    let mut total = 0.0;
    let mut last_increment = f64::INFINITY;
    let mut lo = 0.0;
    for k in 0..=6 {
        let hi = 10f64.powi(k);
        let inc = quad::integrate(
            &|s| {
                let val = d
                    .eval(s)
                    .map_err(|_| EvalError::NonFinite { context: None })?;
                Ok(1.0 / val)
            },
            lo,
            hi,
            1e-9,
        )?;
        total += inc;
        last_increment = inc;
        lo = hi;
    }
    if !d.declared_divergent() {
        notes.push("divergence not declared by the caller".into());
    }
    let consistent = last_increment >= 1e-4;
    notes.push(format!(
        "integral of 1/D through 1e6 is {total:.6e}; last decade adds {last_increment:.3e} ({})",
        if consistent {
            "declared, finitely consistent"
        } else {
            "apparently convergent"
        }
    ));
    let verdict_ok = d.declared_divergent() && consistent;
    let mut cert = Certificate {
        id: "H3".into(),
        verdict: if verdict_ok {
            Verdict::PassOnRegion
        } else {
            Verdict::Fail
        },
        region_radius: sampler.radius,
        samples: sampler.count,
        seed: sampler.seed,
        worst_margin: worst.value,
        witness: None,
        constraints,
        notes,
    };
    if !verdict_ok {
        cert.witness = Some(vec![1e6]);
    }
    Ok(cert)
}

fn fail_cert(
    id: &str,
    sampler: &Sampler,
    margin: f64,
    witness: Vec<f64>,
    constraints: Vec<String>,
) -> Certificate {
    Certificate {
        id: id.into(),
        verdict: Verdict::Fail,
        region_radius: sampler.radius,
        samples: sampler.count,
        seed: sampler.seed,
        worst_margin: margin,
        witness: Some(witness),
        constraints,
        notes: Vec::new(),
    }
}

fn trivial_direction(n: usize) -> VectorField {
    VectorField::new((0..n).map(|_| ScalarField::constant(0.0, n)).collect())
        .expect("constant rows share dimensions")
}

/// Output of the integral-gain construction.
#[derive(Clone, Debug)]
pub struct IissResult {
    /// Rescaled Lyapunov function `Utilde(x)`.
    pub u_tilde: ScalarField,
    /// Its table against `U`-levels (slopes are exactly `1/D'`).
    pub u_tilde_table: MonotoneEnvelope,
    /// Sphere-min envelope of the undisturbed decay `-d/dt Utilde`.
    pub alpha5: MonotoneEnvelope,
    /// Closed-loop derivative field of `Utilde` (no disturbance).
    pub decay: ScalarField,
    /// Adjusted gain table `D'(p) = D(2p) + 1` sampled on the level grid.
    pub d_adjusted_table: MonotoneEnvelope,
    /// Number of times `delta` was halved to re-secure `|L_g U| <= D'(U)`.
    pub delta_halvings: usize,
    pub certificates: Vec<Certificate>,
}

/// Serializable view of the integral-gain artifacts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IissCertificate {
    pub declared_divergent: bool,
    pub delta_halvings: usize,
    pub d_table: crate::synthesis::EnvelopeTable,
    pub u_tilde_table: crate::synthesis::EnvelopeTable,
    pub alpha5: crate::synthesis::EnvelopeTable,
    pub checks: Vec<Certificate>,
}

impl IissResult {
    pub fn certificate(&self, declared_divergent: bool) -> IissCertificate {
        IissCertificate {
            declared_divergent,
            delta_halvings: self.delta_halvings,
            d_table: crate::synthesis::EnvelopeTable::of(&self.d_adjusted_table),
            u_tilde_table: crate::synthesis::EnvelopeTable::of(&self.u_tilde_table),
            alpha5: crate::synthesis::EnvelopeTable::of(&self.alpha5),
            checks: self.certificates.clone(),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.certificates.iter().all(Certificate::is_pass)
    }
}

/// Build the integral-gain layer on top of a synthesis result.
///
/// Shrinks `delta` (halving, at most 8 times) until the sampled bound
/// `|L_g U| <= D'(U)` holds, rebuilds `U` accordingly, rescales it into
/// `Utilde` by cumulative quadrature of `1/D'`, and certifies the decay
/// inequality at sampled `(x, d)` pairs with `|d| <= 5`.
pub fn build_iiss(
    sys: &ControlAffineSystem,
    v: &ScalarField,
    g_dir: &VectorField,
    d: &DFunction,
    synth: &mut SynthesisResult,
    opts: &SynthesisOptions,
) -> Result<IissResult> {
    let n = sys.state_dim();
    let sampler = Sampler::ball(opts.seed, opts.region_radius, opts.fresh_samples);
    let mut certificates = Vec::new();
    certificates.push(validate_d(d, v, sys, &sampler)?);

    let d_adj = d.adjusted_for_u();
    let fields = PipelineFields::build(sys, v, g_dir)?;

    // Re-secure the adjusted bound by shrinking delta when necessary.
    let mut halvings = 0usize;
    loop {
        let u = v.add(&v.compose_envelope(&synth.delta).mul(&fields.lgv_dir)?)?;
        let lgu_rows: Vec<ScalarField> = sys
            .input_columns()
            .iter()
            .map(|c| u.lie_derivative(c))
            .collect::<Result<_>>()?;
        let lgu_norm = ScalarField::norm_of(lgu_rows)?;
        let worst = par_extremum(
            opts.seed,
            streams::VERIFY ^ 0x44,
            opts.fresh_samples,
            Extremum::Min,
            |_i, rng| {
                let x = rng.in_ball(n, opts.region_radius);
                let uu = u.eval(&x).map_err(Error::Eval)?;
                let lgu = lgu_norm.eval(&x).map_err(Error::Eval)?;
                Ok(Some((d_adj.eval(uu)? - lgu, x)))
            },
        )?
        .expect("count > 0");
        if worst.value >= 0.0 {
            synth.u_field = u;
            synth.vsharp = synth
                .u_field
                .add(&v.compose_envelope(&synth.big_omega_integral))?;
            let mut cert = Certificate {
                id: "key".into(),
                verdict: Verdict::PassOnRegion,
                region_radius: opts.region_radius,
                samples: opts.fresh_samples,
                seed: opts.seed,
                worst_margin: worst.value,
                witness: None,
                constraints: vec!["|L_g U| <= D'(U) at samples".into()],
                notes: Vec::new(),
            };
            if halvings > 0 {
                cert.notes.push(format!("delta halved {halvings} time(s)"));
            }
            certificates.push(cert);
            break;
        }
        if halvings >= 8 {
            return Err(Error::DGainExhausted { retries: halvings });
        }
        synth.delta = synth.delta.scaled(0.5);
        halvings += 1;
    }

    // Rescale U into Utilde over a geometric grid of U-levels.
    let u_top = {
        let hit = par_extremum(
            opts.seed,
            streams::VERIFY ^ 0x55,
            opts.fresh_samples.min(4096),
            Extremum::Max,
            |_i, rng| {
                let x = rng.in_ball(n, opts.region_radius);
                Ok(Some((synth.u_field.eval(&x).map_err(Error::Eval)?, x)))
            },
        )?
        .expect("count > 0");
        hit.value * 1.05
    };
    let inv_d = |p: f64| -> std::result::Result<f64, EvalError> {
        let val = d_adj
            .eval(p)
            .map_err(|_| EvalError::NonFinite { context: None })?;
        Ok(1.0 / val)
    };
    let mut knots = vec![0.0];
    let mut values = vec![0.0];
    let mut slopes = vec![inv_d(0.0).map_err(Error::Eval)?];
    let mut acc = 0.0;
    let mut prev = 0.0;
    let mut d_vals = vec![d_adj.eval(0.0)?];
    for i in 0..opts.levels {
        let p = u_top * 1e-6 * (1e6f64).powf(i as f64 / (opts.levels - 1) as f64);
        acc += quad::integrate(&inv_d, prev, p, opts.quad_tol)?;
        knots.push(p);
        values.push(acc);
        slopes.push(inv_d(p).map_err(Error::Eval)?);
        d_vals.push(d_adj.eval(p)?);
        prev = p;
    }
    let u_tilde_table =
        MonotoneEnvelope::with_slopes(knots.clone(), values, slopes, Monotonicity::NonDecreasing)?;
    let d_adjusted_table =
        MonotoneEnvelope::interpolating(knots, d_vals, Monotonicity::NonDecreasing)?;
    let u_tilde = synth.u_field.compose_envelope(&u_tilde_table);

    // Unit gain bound |L_g Utilde| <= 1.
    let lgut_rows: Vec<ScalarField> = sys
        .input_columns()
        .iter()
        .map(|c| u_tilde.lie_derivative(c))
        .collect::<Result<_>>()?;
    let lgut_norm = ScalarField::norm_of(lgut_rows.clone())?;
    let worst_unit = par_extremum(
        opts.seed,
        streams::VERIFY ^ 0x66,
        opts.fresh_samples,
        Extremum::Min,
        |_i, rng| {
            let x = rng.in_ball(n, opts.region_radius);
            Ok(Some((1.0 - lgut_norm.eval(&x).map_err(Error::Eval)?, x)))
        },
    )?
    .expect("count > 0");
    certificates.push(Certificate {
        id: "key3".into(),
        verdict: if worst_unit.value >= 0.0 {
            Verdict::PassOnRegion
        } else {
            Verdict::Fail
        },
        region_radius: opts.region_radius,
        samples: opts.fresh_samples,
        seed: opts.seed,
        worst_margin: worst_unit.value,
        witness: (worst_unit.value < 0.0).then_some(worst_unit.point),
        constraints: vec!["|L_g Utilde| <= 1 at samples".into()],
        notes: Vec::new(),
    });

    // Undisturbed decay field and its radial floor.
    let decay = closed_loop_derivative(sys, &u_tilde, &synth.feedback)?;
    let radii: Vec<f64> = (1..=opts.radii)
        .map(|i| opts.region_radius * i as f64 / opts.radii as f64)
        .collect();
    let mut alpha5_vals = vec![0.0];
    for (ri, &r) in radii.iter().enumerate() {
        let worst = par_extremum(
            opts.seed,
            streams::VERIFY ^ (0x77 + ((ri as u64) << 8)),
            opts.sphere_samples_per_dim * n as u64,
            Extremum::Max,
            |_i, rng| {
                let x = rng.on_sphere(n, r);
                Ok(Some((decay.eval(&x).map_err(Error::Eval)?, x)))
            },
        )?
        .expect("count > 0");
        if worst.value >= 0.0 {
            certificates.push(fail_cert(
                "decay",
                &sampler,
                -worst.value,
                worst.point,
                vec!["closed-loop Utilde derivative negative away from 0".into()],
            ));
            return finish_iiss(
                u_tilde,
                u_tilde_table,
                MonotoneEnvelope::constant(0.0),
                decay,
                d_adjusted_table,
                halvings,
                certificates,
            );
        }
        alpha5_vals.push(deflate(-worst.value));
    }
    let mut alpha5_knots = vec![0.0];
    alpha5_knots.extend(&radii);
    let alpha5 = MonotoneEnvelope::positive_definite(alpha5_knots, alpha5_vals)?;

    // Disturbance decay inequality at sampled (x, d) pairs.
    let m = sys.input_dim();
    let worst_dist = par_extremum(
        opts.seed,
        streams::DISTURBANCE,
        opts.fresh_samples,
        Extremum::Min,
        |_i, rng| {
            let x = rng.in_ball(n, opts.region_radius);
            let dvec = rng.in_ball(m, 5.0);
            let mut lhs = decay.eval(&x).map_err(Error::Eval)?;
            for (row, dk) in lgut_rows.iter().zip(&dvec) {
                lhs += row.eval(&x).map_err(Error::Eval)? * dk;
            }
            let rhs = -alpha5.eval(norm(&x)) + norm(&dvec);
            let margin = rhs - lhs + 1e-9;
            let mut witness = x;
            witness.extend(dvec);
            Ok(Some((margin, witness)))
        },
    )?
    .expect("count > 0");
    certificates.push(Certificate {
        id: "decay".into(),
        verdict: if worst_dist.value >= 0.0 {
            Verdict::PassOnRegion
        } else {
            Verdict::Fail
        },
        region_radius: opts.region_radius,
        samples: opts.fresh_samples,
        seed: opts.seed,
        worst_margin: worst_dist.value,
        witness: (worst_dist.value < 0.0).then_some(worst_dist.point),
        constraints: vec![
            "grad Utilde . F(x, d) <= -alpha5(|x|) + |d| + 1e-9 at (x, d) samples".into(),
        ],
        notes: Vec::new(),
    });

    finish_iiss(
        u_tilde,
        u_tilde_table,
        alpha5,
        decay,
        d_adjusted_table,
        halvings,
        certificates,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish_iiss(
    u_tilde: ScalarField,
    u_tilde_table: MonotoneEnvelope,
    alpha5: MonotoneEnvelope,
    decay: ScalarField,
    d_adjusted_table: MonotoneEnvelope,
    delta_halvings: usize,
    certificates: Vec<Certificate>,
) -> Result<IissResult> {
    Ok(IissResult {
        u_tilde,
        u_tilde_table,
        alpha5,
        decay,
        d_adjusted_table,
        delta_halvings,
        certificates,
    })
}

/// Re-run the synthesis constraint report after iISS adjusted `delta`
/// (every reduced-`delta` inequality is downward closed, but the report
/// should reflect the shipped numbers).
pub fn refresh_report(
    sys: &ControlAffineSystem,
    v: &ScalarField,
    g_dir: &VectorField,
    synth: &mut SynthesisResult,
    opts: &SynthesisOptions,
) -> Result<()> {
    let synthesizer = Synthesizer::new(sys, v, g_dir, opts.clone())?;
    synth.constraint_report =
        synthesizer.verify_constraints(synth, opts.fresh_samples, opts.seed)?;
    Ok(())
}
