//! The constructive pipeline: radial class-K envelopes, kernel margin
//! functions, per-level-set constraint reduction, the damping-gain and
//! `delta` constructions, the strict Lyapunov assembly and the final small
//! feedback.
//!
//! Every "for all x" requirement is reduced to per-level-set envelope
//! inequalities by sampling the shells `{ V = v }`, then re-verified on a
//! fresh sample. Certificates are regional: they record the sampled radius,
//! the counts and the seed, and never claim more.

use crate::envelope::{
    deflate, inflate, nondecreasing_lower_hull, nondecreasing_upper_hull, nonincreasing_lower_hull,
    MonotoneEnvelope, Monotonicity,
};
use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::quad;
use crate::sampling::{par_extremum, streams, Extremum, Rng};
use crate::systems::{ControlAffineSystem, FeedbackLaw, FullyNonlinearSystem};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Floor used when a constraint coefficient vanishes (the constraint is
/// then inactive).
const EPS_COEFF: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct SynthesisOptions {
    /// Sup-norm cap for the synthesized feedback.
    pub epsilon: f64,
    /// Radius of the certified region.
    pub region_radius: f64,
    /// Number of positive radii in the radial grid.
    pub radii: usize,
    /// Sphere samples per state dimension at each radius.
    pub sphere_samples_per_dim: u64,
    /// Number of positive levels in the level grid.
    pub levels: usize,
    /// Shell samples kept per level.
    pub shell_samples: u64,
    /// Relative shell thickness for rejection sampling.
    pub shell_rtol: f64,
    /// Upper bound the user imposes on the damping gain.
    pub gain_cap: f64,
    /// Absolute quadrature tolerance.
    pub quad_tol: f64,
    /// Fresh-sample count for the re-verification report.
    pub fresh_samples: u64,
    pub seed: u64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            epsilon: 1.0,
            region_radius: 10.0,
            radii: 64,
            sphere_samples_per_dim: 256,
            levels: 64,
            shell_samples: 256,
            shell_rtol: 0.05,
            gain_cap: 1.0,
            quad_tol: 1e-10,
            fresh_samples: 10_000,
            seed: 0,
        }
    }
}

/// Radial sandwich envelopes: `alpha1 <= V <= alpha2` against `|x|`, with
/// `alpha3` bounding the auxiliary directional derivative and `alpha4` the
/// gradient norm.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialEnvelopes {
    pub alpha1: MonotoneEnvelope,
    pub alpha2: MonotoneEnvelope,
    pub alpha3: MonotoneEnvelope,
    pub alpha4: MonotoneEnvelope,
    /// Largest raw sphere maximum of V observed (tops the level grid).
    pub v_top: f64,
}

/// Positive-definite kernel margins: `rho` minorizes the combined slack
/// `-S`, `gamma = rho/2` thresholds the input derivative, `nfloor = rho/4`
/// is the guaranteed decay floor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarginFunctions {
    pub rho: MonotoneEnvelope,
    pub gamma: MonotoneEnvelope,
    pub nfloor: MonotoneEnvelope,
}

/// Sampled margin for one constructed inequality.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstraintMargin {
    pub id: String,
    /// Worst (smallest) sampled margin; nonnegative up to 1e-9 means pass.
    pub margin: f64,
    pub worst_point: Vec<f64>,
    pub samples: u64,
}

/// Shell sample table: points with `V` close to each grid level.
#[derive(Clone, Debug)]
pub struct ShellTable {
    pub levels: Vec<f64>,
    pub points: Vec<Vec<Vec<f64>>>,
    /// Largest sampled radius across all shells.
    pub max_radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShellMode {
    Min,
    Max,
}

/// The synthesized bundle.
#[derive(Clone, Debug)]
pub struct SynthesisResult {
    pub radial: RadialEnvelopes,
    pub margins: MarginFunctions,
    /// Rise-fall cap `delta_a` from the constraint reduction.
    pub delta_cap: MonotoneEnvelope,
    /// Level-set floor for `1/(1 + 4 |L_G V|)`.
    pub p_floor: MonotoneEnvelope,
    /// Slope budget `omega <= min(P(s), P(2s), 1)/2`.
    pub omega: MonotoneEnvelope,
    /// The constructed mixing weight `delta` (with analytic slopes).
    pub delta: MonotoneEnvelope,
    /// Damping gain `xi` (also the cap it saturates).
    pub xi: MonotoneEnvelope,
    /// Level-set maximum of `|L_g V|`.
    pub lgv_max: MonotoneEnvelope,
    /// Input-nonlinearity correction weight (identically zero for affine
    /// systems) and its cumulative integral.
    pub big_omega: MonotoneEnvelope,
    pub big_omega_integral: MonotoneEnvelope,
    /// `U = V + delta(V) L_G V`.
    pub u_field: ScalarField,
    /// The strict control-Lyapunov function.
    pub vsharp: ScalarField,
    pub feedback: FeedbackLaw,
    pub constraint_report: Vec<ConstraintMargin>,
    pub region_radius: f64,
    pub sampled_radius: f64,
    pub seed: u64,
    pub fresh_samples: u64,
}

impl SynthesisResult {
    /// True when every reported margin clears the tolerance (strict
    /// negative-definiteness margins must be positive).
    pub fn all_pass(&self) -> bool {
        self.constraint_report.iter().all(|c| {
            if c.id.ends_with("negdef") {
                c.margin > 0.0
            } else {
                c.margin >= -1e-9
            }
        })
    }
}

/// Serializable synthesis certificate: every envelope table, the margins,
/// and the sampling provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthesisCertificate {
    pub verdict: String,
    pub region_radius: f64,
    pub sampled_radius: f64,
    pub seed: u64,
    pub fresh_samples: u64,
    pub levels: Vec<f64>,
    pub alpha1: EnvelopeTable,
    pub alpha2: EnvelopeTable,
    pub alpha3: EnvelopeTable,
    pub alpha4: EnvelopeTable,
    pub rho: EnvelopeTable,
    pub gamma: EnvelopeTable,
    pub nfloor: EnvelopeTable,
    pub delta_cap: EnvelopeTable,
    pub p_floor: EnvelopeTable,
    pub omega: EnvelopeTable,
    pub delta: EnvelopeTable,
    pub xi: EnvelopeTable,
    pub lgv_max: EnvelopeTable,
    pub big_omega: EnvelopeTable,
    pub margins: Vec<ConstraintMargin>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeTable {
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub d: Vec<f64>,
}

impl EnvelopeTable {
    pub fn of(e: &MonotoneEnvelope) -> Self {
        EnvelopeTable {
            s: e.knots().to_vec(),
            v: e.values().to_vec(),
            d: e.slopes().to_vec(),
        }
    }
}

impl SynthesisResult {
    pub fn certificate(&self) -> SynthesisCertificate {
        SynthesisCertificate {
            verdict: if self.all_pass() {
                "pass-on-region"
            } else {
                "fail"
            }
            .into(),
            region_radius: self.region_radius,
            sampled_radius: self.sampled_radius,
            seed: self.seed,
            fresh_samples: self.fresh_samples,
            levels: self.delta.knots().to_vec(),
            alpha1: EnvelopeTable::of(&self.radial.alpha1),
            alpha2: EnvelopeTable::of(&self.radial.alpha2),
            alpha3: EnvelopeTable::of(&self.radial.alpha3),
            alpha4: EnvelopeTable::of(&self.radial.alpha4),
            rho: EnvelopeTable::of(&self.margins.rho),
            gamma: EnvelopeTable::of(&self.margins.gamma),
            nfloor: EnvelopeTable::of(&self.margins.nfloor),
            delta_cap: EnvelopeTable::of(&self.delta_cap),
            p_floor: EnvelopeTable::of(&self.p_floor),
            omega: EnvelopeTable::of(&self.omega),
            delta: EnvelopeTable::of(&self.delta),
            xi: EnvelopeTable::of(&self.xi),
            lgv_max: EnvelopeTable::of(&self.lgv_max),
            big_omega: EnvelopeTable::of(&self.big_omega),
            margins: self.constraint_report.clone(),
        }
    }
}

/// Derived Lie-derivative fields shared by the pipeline stages.
#[derive(Clone, Debug)]
pub struct PipelineFields {
    pub lfv: ScalarField,
    pub lgv_rows: Vec<ScalarField>,
    pub lgv_norm: ScalarField,
    pub lgv_dir: ScalarField,
    pub lflgv_dir: ScalarField,
    pub lglgv_rows: Vec<ScalarField>,
    pub grad_norm: ScalarField,
}

impl PipelineFields {
    pub fn build(sys: &ControlAffineSystem, v: &ScalarField, g_dir: &VectorField) -> Result<Self> {
        let lfv = v.lie_derivative(sys.drift())?;
        let lgv_rows: Vec<ScalarField> = sys
            .input_columns()
            .iter()
            .map(|col| v.lie_derivative(col))
            .collect::<Result<_>>()?;
        let lgv_norm = ScalarField::norm_of(lgv_rows.clone())?;
        let lgv_dir = v.lie_derivative(g_dir)?;
        let lflgv_dir = lgv_dir.lie_derivative(sys.drift())?;
        let lglgv_rows: Vec<ScalarField> = sys
            .input_columns()
            .iter()
            .map(|col| lgv_dir.lie_derivative(col))
            .collect::<Result<_>>()?;
        Ok(PipelineFields {
            lfv,
            lgv_rows,
            lgv_norm,
            lgv_dir,
            lflgv_dir,
            lglgv_rows,
            grad_norm: v.gradient_norm(),
        })
    }

    /// Combined kernel slack `S(x) = min(0, L_f L_G V) + min(0, L_f V)
    /// - |L_g V|`; negative definite under the standing assumptions.
    pub fn kernel_slack(&self, x: &[f64]) -> Result<f64> {
        let a = self.lflgv_dir.eval(x).map_err(Error::Eval)?;
        let b = self.lfv.eval(x).map_err(Error::Eval)?;
        let c = self.lgv_norm.eval(x).map_err(Error::Eval)?;
        Ok(a.min(0.0) + b.min(0.0) - c)
    }

    /// Subgradient of the kernel slack (branch indicators for the `min`
    /// terms, safe normalization at the norm kink).
    pub fn kernel_slack_subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        let mut grad = vec![0.0; n];
        if self.lflgv_dir.eval(x).map_err(Error::Eval)? < 0.0 {
            for (g, d) in grad
                .iter_mut()
                .zip(self.lflgv_dir.gradient(x).map_err(Error::Eval)?)
            {
                *g += d;
            }
        }
        if self.lfv.eval(x).map_err(Error::Eval)? < 0.0 {
            for (g, d) in grad
                .iter_mut()
                .zip(self.lfv.gradient(x).map_err(Error::Eval)?)
            {
                *g += d;
            }
        }
        let c = self.lgv_norm.eval(x).map_err(Error::Eval)?;
        if c > 1e-12 {
            for row_field in &self.lgv_rows {
                let val = row_field.eval(x).map_err(Error::Eval)?;
                for (g, d) in grad
                    .iter_mut()
                    .zip(row_field.gradient(x).map_err(Error::Eval)?)
                {
                    *g -= val / c * d;
                }
            }
        }
        Ok(grad)
    }
}

pub struct Synthesizer<'a> {
    sys: &'a ControlAffineSystem,
    nonlinear: Option<&'a FullyNonlinearSystem>,
    v: &'a ScalarField,
    pub fields: PipelineFields,
    opts: SynthesisOptions,
}

impl<'a> Synthesizer<'a> {
    pub fn new(
        sys: &'a ControlAffineSystem,
        v: &'a ScalarField,
        g_dir: &'a VectorField,
        opts: SynthesisOptions,
    ) -> Result<Self> {
        if v.dim() != sys.state_dim() || g_dir.len() != sys.state_dim() {
            return Err(Error::Dimension {
                what: "synthesis inputs".into(),
                expected: sys.state_dim(),
                got: v.dim(),
            });
        }
        Ok(Synthesizer {
            sys,
            nonlinear: None,
            v,
            fields: PipelineFields::build(sys, v, g_dir)?,
            opts,
        })
    }

    /// Attach the fully nonlinear dynamics whose affine data `sys` is.
    pub fn with_nonlinear(mut self, sys_full: &'a FullyNonlinearSystem) -> Self {
        self.nonlinear = Some(sys_full);
        self
    }

    pub fn options(&self) -> &SynthesisOptions {
        &self.opts
    }

    fn n(&self) -> usize {
        self.sys.state_dim()
    }

    fn sphere_count(&self) -> u64 {
        self.opts.sphere_samples_per_dim * self.n() as u64
    }

    fn radius_grid(&self) -> Vec<f64> {
        (1..=self.opts.radii)
            .map(|i| self.opts.region_radius * i as f64 / self.opts.radii as f64)
            .collect()
    }

    /// Largest radius a point of `{V = v}` can have inside the certified
    /// ball: `min(alpha1^{-1}(v), R)`. Keeping the regional cap makes the
    /// radial compositions finite and matches where fresh samples live.
    fn inv_alpha1_regional(&self, radial: &RadialEnvelopes, v: f64) -> f64 {
        radial.alpha1.invert(v).min(self.opts.region_radius)
    }

    // -- Radial sandwich ------------------------------------------------------

    /// Sphere-sample the radial envelopes. Minima are deflated, maxima
    /// inflated by 10%, then hulled into class-K-infinity shape.
    pub fn radial_envelopes(&self) -> Result<RadialEnvelopes> {
        let radii = self.radius_grid();
        let count = self.sphere_count();
        let n = self.n();
        let mut min_v = Vec::with_capacity(radii.len());
        let mut max_v = Vec::with_capacity(radii.len());
        let mut max_g = Vec::with_capacity(radii.len());
        let mut max_grad = Vec::with_capacity(radii.len());
        let mut v_top = 0.0f64;
        for (ri, &r) in radii.iter().enumerate() {
            let stream = substream(streams::RADIAL, ri as u64);
            let lo = par_extremum(self.opts.seed, stream, count, Extremum::Min, |_i, rng| {
                let x = rng.on_sphere(n, r);
                let v = self.v.eval(&x).map_err(Error::Eval)?;
                Ok(Some((v, x)))
            })?
            .expect("count > 0");
            if lo.value <= 0.0 {
                return Err(Error::NotPositiveDefinite {
                    what: "V".into(),
                    value: lo.value,
                    witness: lo.point,
                });
            }
            let hi = par_extremum(self.opts.seed, stream, count, Extremum::Max, |_i, rng| {
                let x = rng.on_sphere(n, r);
                let v = self.v.eval(&x).map_err(Error::Eval)?;
                Ok(Some((v, x)))
            })?
            .expect("count > 0");
            let g = par_extremum(self.opts.seed, stream, count, Extremum::Max, |_i, rng| {
                let x = rng.on_sphere(n, r);
                let v = self.fields.lgv_dir.eval(&x).map_err(Error::Eval)?;
                Ok(Some((v.abs(), x)))
            })?
            .expect("count > 0");
            let gr = par_extremum(self.opts.seed, stream, count, Extremum::Max, |_i, rng| {
                let x = rng.on_sphere(n, r);
                let v = self.fields.grad_norm.eval(&x).map_err(Error::Eval)?;
                Ok(Some((v, x)))
            })?
            .expect("count > 0");
            v_top = v_top.max(hi.value);
            min_v.push(deflate(lo.value));
            max_v.push(inflate(hi.value));
            max_g.push(inflate(g.value));
            max_grad.push(inflate(gr.value));
        }
        let mut knots = vec![0.0];
        knots.extend(&radii);
        let with_zero = |mut v: Vec<f64>| {
            v.insert(0, 0.0);
            v
        };
        Ok(RadialEnvelopes {
            alpha1: MonotoneEnvelope::class_kinf(
                knots.clone(),
                with_zero(nondecreasing_lower_hull(&min_v)),
            )?,
            alpha2: MonotoneEnvelope::class_kinf(
                knots.clone(),
                with_zero(nondecreasing_upper_hull(&max_v)),
            )?,
            alpha3: MonotoneEnvelope::class_kinf(
                knots.clone(),
                with_zero(nondecreasing_upper_hull(&max_g)),
            )?,
            alpha4: MonotoneEnvelope::class_kinf(
                knots,
                with_zero(nondecreasing_upper_hull(&max_grad)),
            )?,
            v_top,
        })
    }

    // -- Kernel margin functions --------------------------------------------

    /// Sphere-minimize `-S` into `rho`, then `gamma = rho/2`,
    /// `nfloor = rho/4`.
    pub fn margin_functions(&self) -> Result<MarginFunctions> {
        let radii = self.radius_grid();
        let count = self.sphere_count();
        let n = self.n();
        let mut rho_vals = Vec::with_capacity(radii.len());
        for (ri, &r) in radii.iter().enumerate() {
            let stream = substream(streams::MARGIN, ri as u64);
            let worst = par_extremum(self.opts.seed, stream, count, Extremum::Min, |_i, rng| {
                let x = rng.on_sphere(n, r);
                let s = self.fields.kernel_slack(&x)?;
                Ok(Some((-s, x)))
            })?
            .expect("count > 0");
            // The slack is kinked, so random directions under-resolve its
            // sphere minima; refine by projected descent from the sampled
            // minimizer and a few extra starts.
            let mut best = worst.value;
            let mut best_point = worst.point;
            let mut starts = vec![best_point.clone()];
            for extra in 0..4u64 {
                starts.push(
                    Rng::at(
                        self.opts.seed,
                        substream(streams::DESCENT, ri as u64),
                        extra,
                    )
                    .on_sphere(n, r),
                );
            }
            for start in starts {
                let (val, point) = self.sphere_slack_min(start, r)?;
                if val < best {
                    best = val;
                    best_point = point;
                }
            }
            if best <= 0.0 {
                return Err(Error::KernelNegativityViolation {
                    value: -best,
                    witness: best_point,
                });
            }
            rho_vals.push(deflate(best));
        }
        let mut knots = vec![0.0];
        knots.extend(&radii);
        let mut values = vec![0.0];
        values.extend(&rho_vals);
        let rho = MonotoneEnvelope::positive_definite(knots, values)?;
        Ok(MarginFunctions {
            gamma: rho.scaled(0.5),
            nfloor: rho.scaled(0.25),
            rho,
        })
    }

    /// Minimize `-S` over the sphere of radius `r` by projected
    /// subgradient descent with backtracking.
    fn sphere_slack_min(&self, mut x: Vec<f64>, r: f64) -> Result<(f64, Vec<f64>)> {
        let project = |mut p: Vec<f64>| -> Vec<f64> {
            let nr = norm(&p);
            if nr > 0.0 {
                for c in &mut p {
                    *c *= r / nr;
                }
            }
            p
        };
        let mut value = -self.fields.kernel_slack(&x)?;
        for _ in 0..80 {
            // Objective is -S: its gradient is -grad S.
            let grad_s = self.fields.kernel_slack_subgradient(&x)?;
            let radial: f64 = grad_s.iter().zip(&x).map(|(g, xi)| g * xi).sum::<f64>() / (r * r);
            let tangent: Vec<f64> = grad_s
                .iter()
                .zip(&x)
                .map(|(g, xi)| -(g - radial * xi))
                .collect();
            if norm(&tangent) < 1e-13 {
                break;
            }
            let mut step = 0.5 * r / norm(&tangent).max(1e-13);
            let mut improved = false;
            for _ in 0..30 {
                let cand = project(
                    x.iter()
                        .zip(&tangent)
                        .map(|(xi, ti)| xi - step * ti)
                        .collect(),
                );
                let cand_val = -self.fields.kernel_slack(&cand)?;
                if cand_val < value - 1e-15 {
                    x = cand;
                    value = cand_val;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        Ok((value, x))
    }

    // -- Level grid and shells ---------------------------------------------

    /// Geometric level grid over `(0, v_top]`, 0 prepended; one knot snaps
    /// to exactly 1 when the range covers it (the cap changes shape there).
    pub fn level_grid(&self, v_top: f64) -> Vec<f64> {
        let k = self.opts.levels;
        let lo = v_top * 1e-6;
        let ratio = (v_top / lo).powf(1.0 / (k - 1) as f64);
        let mut grid: Vec<f64> = (0..k).map(|i| lo * ratio.powi(i as i32)).collect();
        if v_top > 1.0 && lo < 1.0 {
            let nearest = grid
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| (a.ln().abs()).total_cmp(&b.ln().abs()))
                .map(|(i, _)| i)
                .expect("nonempty");
            grid[nearest] = 1.0;
        }
        grid.dedup();
        grid
    }

    /// Rejection-sample each shell `{ |V - v| <= rtol v }` inside the
    /// annulus that the radial sandwich allows, capped at the region
    /// radius. The tolerance widens once (x4) before starving out.
    pub fn shell_table(&self, levels: &[f64], radial: &RadialEnvelopes) -> Result<ShellTable> {
        let n = self.n();
        let need = self.opts.shell_samples as usize;
        let mut points = Vec::with_capacity(levels.len());
        let mut max_radius = 0.0f64;
        for (li, &v) in levels.iter().enumerate() {
            let r_lo = radial.alpha2.invert(v).max(0.0);
            let r_hi = radial.alpha1.invert(v).min(self.opts.region_radius);
            let r_lo = r_lo.min(r_hi * 0.999_999);
            let budget: u64 = 4096 * need as u64;
            let batch: u64 = 8 * need as u64;
            let mut kept: Vec<Vec<f64>> = Vec::new();
            let mut widened = false;
            let mut tol = self.opts.shell_rtol * v;
            let mut cursor: u64 = 0;
            while kept.len() < need {
                if cursor >= budget {
                    if widened {
                        return Err(Error::ShellStarved { level: v });
                    }
                    widened = true;
                    tol *= 4.0;
                    cursor = 0;
                    kept.clear();
                }
                let stream = substream(streams::SHELL, ((li as u64) << 1) | u64::from(widened));
                let mut hits: Vec<(u64, Vec<f64>)> = (cursor..cursor + batch)
                    .into_par_iter()
                    .map(|idx| {
                        let mut rng = Rng::at(self.opts.seed, stream, idx);
                        let x = rng.in_annulus(n, r_lo, r_hi);
                        match self.v.eval(&x) {
                            Ok(val) if (val - v).abs() <= tol => Some(Ok((idx, x))),
                            Ok(_) => None,
                            Err(e) => Some(Err(Error::Eval(e))),
                        }
                    })
                    .flatten()
                    .collect::<Result<Vec<_>>>()?;
                hits.sort_by_key(|(idx, _)| *idx);
                kept.extend(hits.into_iter().map(|(_, x)| x).take(need - kept.len()));
                cursor += batch;
            }
            for x in &kept {
                max_radius = max_radius.max(norm(x));
            }
            points.push(kept);
        }
        Ok(ShellTable {
            levels: levels.to_vec(),
            points,
            max_radius,
        })
    }

    /// Extremize a state function over each stored shell.
    pub fn levelset_extrema<F>(
        &self,
        shells: &ShellTable,
        mode: ShellMode,
        f: F,
    ) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        shells
            .points
            .iter()
            .map(|pts| {
                let vals: Vec<f64> = pts.par_iter().map(|x| f(x)).collect::<Result<Vec<_>>>()?;
                let ext = match mode {
                    ShellMode::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
                    ShellMode::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                };
                if !ext.is_finite() {
                    return Err(Error::Invalid("non-finite level-set extremum".into()));
                }
                Ok(ext)
            })
            .collect()
    }

    // -- Damping gain -------------------------------------------------------

    /// Level-set maximum of `|L_g V|` (inflated, nondecreasing hull,
    /// power-law interpolation so the bound holds between grid levels).
    pub fn lgv_max_envelope(&self, shells: &ShellTable) -> Result<MonotoneEnvelope> {
        let raw = self.levelset_extrema(shells, ShellMode::Max, |x| {
            self.fields.lgv_norm.eval(x).map_err(Error::Eval)
        })?;
        let inflated: Vec<f64> = raw.iter().map(|&v| inflate(v).max(1e-150)).collect();
        let mut values = vec![0.0];
        values.extend(nondecreasing_upper_hull(&inflated));
        let mut knots = vec![0.0];
        knots.extend(&shells.levels);
        MonotoneEnvelope::class_kinf(knots, values)
    }

    /// Affine-case damping gain: the user cap intersected with the
    /// feedback-norm cap `epsilon / max |L_g V|`, hulled nonincreasing.
    pub fn gain_envelope(
        &self,
        shells: &ShellTable,
        lgv_max: &MonotoneEnvelope,
    ) -> Result<MonotoneEnvelope> {
        let raw: Vec<f64> = shells
            .levels
            .iter()
            .map(|&v| {
                let cap = self.opts.epsilon / lgv_max.eval(v).max(EPS_COEFF);
                cap.min(self.opts.gain_cap)
            })
            .collect();
        let hulled = nonincreasing_lower_hull(&raw);
        let mut values = vec![hulled[0]];
        values.extend(&hulled);
        let mut knots = vec![0.0];
        knots.extend(&shells.levels);
        MonotoneEnvelope::interpolating(knots, values, Monotonicity::NonIncreasing)
    }

    // -- The cap delta_a and the slope budget ---------------------------------

    /// Reduce every mixed constraint to a per-level cap and assemble the
    /// rise-fall `delta_a`: rational growth `c0 v/(1+v)` up to level 1,
    /// nonincreasing hull of the cap beyond, everything bounded by 1.
    pub fn delta_cap(
        &self,
        shells: &ShellTable,
        radial: &RadialEnvelopes,
        margins: &MarginFunctions,
        xi: &MonotoneEnvelope,
    ) -> Result<MonotoneEnvelope> {
        let nmin =
            self.levelset_extrema(shells, ShellMode::Min, |x| Ok(margins.nfloor.eval(norm(x))))?;
        let gam2min = self.levelset_extrema(shells, ShellMode::Min, |x| {
            let g = margins.gamma.eval(norm(x));
            Ok(g * g)
        })?;
        let lflgv_max = self.levelset_extrema(shells, ShellMode::Max, |x| {
            self.fields.lflgv_dir.eval(x).map_err(Error::Eval)
        })?;
        let lglgv2_max = self.levelset_extrema(shells, ShellMode::Max, |x| {
            let mut acc = 0.0;
            for row in &self.fields.lglgv_rows {
                let v = row.eval(x).map_err(Error::Eval)?;
                acc += v * v;
            }
            Ok(acc)
        })?;

        let mut caps = Vec::with_capacity(shells.levels.len());
        for (j, &v) in shells.levels.iter().enumerate() {
            let xi_j = xi.eval(v);
            let nmin_j = deflate(nmin[j]).max(0.0);
            let gam2_j = deflate(gam2min[j]).max(0.0);
            let lflgv_j = inflate(lflgv_max[j]).max(EPS_COEFF);
            let lglgv2_j = inflate(lglgv2_max[j]).max(EPS_COEFF);
            let c7 = radial.alpha1.eval(radial.alpha2.invert(v))
                / (1.0 + 2.0 * radial.alpha3.eval(self.inv_alpha1_regional(radial, v)));
            let candidates = [
                ("7gh", c7),
                ("6h0a", nmin_j / 8.0 / lflgv_j),
                (
                    "6h0b",
                    (nmin_j / 8.0 / (xi_j * lglgv2_j).max(EPS_COEFF)).sqrt(),
                ),
                ("ns1", nmin_j / 2.0 / (xi_j * lglgv2_j).max(EPS_COEFF)),
                ("zs1a", gam2_j / 8.0 * xi_j / lflgv_j),
                ("zs1b", (gam2_j / 8.0 / lglgv2_j).sqrt()),
            ];
            let (worst_id, cap) = candidates
                .iter()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .copied()
                .expect("nonempty");
            if cap <= 0.0 {
                return Err(Error::Infeasible {
                    constraint: worst_id.into(),
                    level: v,
                    cap,
                });
            }
            caps.push(cap);
        }

        // Rational rise coefficient from the caps at levels <= 1 (all
        // levels when the grid sits entirely above 1).
        let low: Vec<usize> = (0..shells.levels.len())
            .filter(|&j| shells.levels[j] <= 1.0)
            .collect();
        let scan: Vec<usize> = if low.is_empty() {
            (0..shells.levels.len()).collect()
        } else {
            low
        };
        let mut c0 = 2.0f64;
        for &j in &scan {
            let v = shells.levels[j];
            c0 = c0.min(caps[j] * (1.0 + v) / v);
        }
        if c0 <= 0.0 {
            return Err(Error::Infeasible {
                constraint: "delta_a rise".into(),
                level: shells.levels[0],
                cap: c0,
            });
        }

        let mut values = vec![0.0];
        let mut running = f64::INFINITY;
        for (j, &v) in shells.levels.iter().enumerate() {
            let val = if v <= 1.0 {
                let rise = c0 * v / (1.0 + v);
                running = rise.min(caps[j]).min(1.0);
                running
            } else {
                running = running.min(caps[j]).min(1.0);
                running
            };
            values.push(val);
        }
        let mut knots = vec![0.0];
        knots.extend(&shells.levels);
        MonotoneEnvelope::positive_definite(knots, values)
    }

    /// Level-set floor of `1/(1 + 4 |L_G V|)`, hulled nonincreasing.
    pub fn p_floor(&self, shells: &ShellTable) -> Result<MonotoneEnvelope> {
        let raw = self.levelset_extrema(shells, ShellMode::Min, |x| {
            let g = self.fields.lgv_dir.eval(x).map_err(Error::Eval)?;
            Ok(1.0 / (1.0 + 4.0 * g.abs()))
        })?;
        let deflated: Vec<f64> = raw.iter().map(|&v| deflate(v)).collect();
        let hulled = nonincreasing_lower_hull(&deflated);
        let mut values = vec![hulled[0].min(1.0)];
        values.extend(hulled.iter().map(|v| v.min(1.0)));
        let mut knots = vec![0.0];
        knots.extend(&shells.levels);
        MonotoneEnvelope::interpolating(knots, values, Monotonicity::NonIncreasing)
    }

    /// `omega(s) = min(P(s), P(2s), 1) / 2`, positive, nonincreasing, C1.
    pub fn build_omega(
        &self,
        p_floor: &MonotoneEnvelope,
        levels: &[f64],
    ) -> Result<MonotoneEnvelope> {
        let raw: Vec<f64> = levels
            .iter()
            .map(|&s| 0.5 * p_floor.eval(s).min(p_floor.eval(2.0 * s)).min(1.0))
            .collect();
        let hulled = nonincreasing_lower_hull(&raw);
        if hulled.iter().any(|&v| v <= 0.0) {
            return Err(Error::Invalid("slope budget lost positivity".into()));
        }
        let mut values = vec![hulled[0]];
        values.extend(&hulled);
        let mut knots = vec![0.0];
        knots.extend(levels);
        MonotoneEnvelope::interpolating(knots, values, Monotonicity::NonIncreasing)
    }

    /// The mixing weight
    /// `delta(s) = int_{s/2}^{s} delta_a(l) delta_a(2l) omega(l) / (1+4l^2) dl`,
    /// tabulated by adaptive quadrature with its analytic derivative
    /// `k(s) - k(s/2)/2` stored as Hermite slopes.
    pub fn build_delta(
        &self,
        delta_cap: &MonotoneEnvelope,
        omega: &MonotoneEnvelope,
        levels: &[f64],
    ) -> Result<MonotoneEnvelope> {
        let integrand = |l: f64| -> std::result::Result<f64, crate::error::EvalError> {
            Ok(delta_cap.eval(l) * delta_cap.eval(2.0 * l) * omega.eval(l) / (1.0 + 4.0 * l * l))
        };
        let mut knots = vec![0.0];
        let mut values = vec![0.0];
        let mut derivs = vec![0.0];
        for &s in levels {
            let val = quad::integrate(&integrand, 0.5 * s, s, self.opts.quad_tol)?;
            values.push(val);
            derivs.push(
                integrand(s).map_err(Error::Eval)?
                    - 0.5 * integrand(0.5 * s).map_err(Error::Eval)?,
            );
            knots.push(s);
        }
        MonotoneEnvelope::positive_definite_with_derivs(knots, values, &derivs)
    }

    /// `U = V + delta(V) L_G V`, with the positive-definiteness floor
    /// re-verified on fresh samples.
    pub fn build_u(
        &self,
        delta: &MonotoneEnvelope,
        radial: &RadialEnvelopes,
    ) -> Result<ScalarField> {
        let delta_of_v = self.v.compose_envelope(delta);
        let u = self.v.add(&delta_of_v.mul(&self.fields.lgv_dir)?)?;
        let n = self.n();
        let worst = par_extremum(
            self.opts.seed,
            streams::VERIFY,
            self.opts.fresh_samples,
            Extremum::Min,
            |_i, rng| {
                let x = rng.in_ball(n, self.opts.region_radius);
                let uv = u.eval(&x).map_err(Error::Eval)?;
                let vv = self.v.eval(&x).map_err(Error::Eval)?;
                let floor = 0.5 * radial.alpha1.eval(radial.alpha2.invert(vv));
                Ok(Some((uv - floor, x)))
            },
        )?
        .expect("fresh sample count > 0");
        if worst.value < 0.0 {
            return Err(Error::NotPositiveDefinite {
                what: "U (mixing weight too large)".into(),
                value: worst.value,
                witness: worst.point,
            });
        }
        Ok(u)
    }

    // -- Fully nonlinear corrections -----------------------------------------

    /// Sampled remainder-growth table `H(v, s)`:
    /// `|h(x,u) u| <= H(V(x), |u|) |u|^2`, nondecreasing in both axes.
    pub fn remainder_growth(
        &self,
        sys_full: &FullyNonlinearSystem,
        shells: &ShellTable,
        sigma_grid: &[f64],
    ) -> Result<RemainderGrowth> {
        let m = sys_full.input_dim();
        let per_cell: usize = 32;
        let mut table = vec![vec![0.0f64; sigma_grid.len()]; shells.levels.len()];
        for (j, pts) in shells.points.iter().enumerate() {
            for (k, &sigma) in sigma_grid.iter().enumerate() {
                let step = (pts.len() / per_cell).max(1);
                let sel: Vec<&Vec<f64>> = pts.iter().step_by(step).take(per_cell).collect();
                let worst = sel
                    .par_iter()
                    .enumerate()
                    .map(|(i, x)| -> Result<f64> {
                        let mut rng = Rng::at(
                            self.opts.seed,
                            streams::REMAINDER,
                            ((j as u64) << 40) | ((k as u64) << 20) | i as u64,
                        );
                        let u = rng.on_sphere(m, sigma);
                        let h = sys_full.remainder(x, &u)?;
                        let mut hu = vec![0.0; h.len()];
                        for (row, hrow) in h.iter().enumerate() {
                            hu[row] = hrow.iter().zip(&u).map(|(a, b)| a * b).sum();
                        }
                        Ok(norm(&hu) / (sigma * sigma))
                    })
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .fold(0.0f64, f64::max);
                table[j][k] = inflate(worst);
            }
        }
        // Nondecreasing hull along both axes keeps the bound safe.
        for row in &mut table {
            let h = nondecreasing_upper_hull(row);
            row.copy_from_slice(&h);
        }
        for k in 0..sigma_grid.len() {
            let col: Vec<f64> = table.iter().map(|r| r[k]).collect();
            let h = nondecreasing_upper_hull(&col);
            for (j, row) in table.iter_mut().enumerate() {
                row[k] = h[j];
            }
        }
        Ok(RemainderGrowth {
            levels: shells.levels.clone(),
            sigmas: sigma_grid.to_vec(),
            table,
        })
    }

    /// Solve per level for the largest gain with
    /// `H_*(v, xi |L_g V|) xi <= 1/2` (monotone in the gain, so bisection),
    /// intersected with the feedback-norm cap; hulled nonincreasing.
    pub fn gain_envelope_nonlinear(
        &self,
        growth: &RemainderGrowth,
        radial: &RadialEnvelopes,
        lgv_max: &MonotoneEnvelope,
        shells: &ShellTable,
    ) -> Result<MonotoneEnvelope> {
        let mut raw = Vec::with_capacity(shells.levels.len());
        for &v in &shells.levels {
            let cap = (self.opts.epsilon / lgv_max.eval(v).max(EPS_COEFF)).min(self.opts.gain_cap);
            let hstar = |xi: f64| -> f64 {
                let s = xi * lgv_max.eval(v);
                radial.alpha4.eval(self.inv_alpha1_regional(radial, v)) * growth.eval(v, s) * xi
            };
            if hstar(cap) <= 0.5 {
                raw.push(cap);
                continue;
            }
            let mut lo = 0.0f64;
            let mut hi = cap;
            if hstar(cap * 1e-9) > 0.5 {
                return Err(Error::GainInfeasible { level: v });
            }
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if hstar(mid) <= 0.5 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if lo <= 0.0 {
                return Err(Error::GainInfeasible { level: v });
            }
            // Stay strictly inside the feasible side.
            raw.push(lo * 0.999);
        }
        let hulled = nonincreasing_lower_hull(&raw);
        let mut values = vec![hulled[0]];
        values.extend(&hulled);
        let mut knots = vec![0.0];
        knots.extend(&shells.levels);
        MonotoneEnvelope::interpolating(knots, values, Monotonicity::NonIncreasing)
    }

    /// Correction weight `big_delta(v)` bounding
    /// `|grad U| H(V, xi |L_g V|) xi` per level, and `big_omega = 4 big_delta`.
    pub fn build_big_omega(
        &self,
        u_field: &ScalarField,
        growth: &RemainderGrowth,
        xi: &MonotoneEnvelope,
        shells: &ShellTable,
    ) -> Result<(MonotoneEnvelope, MonotoneEnvelope)> {
        let grad_u_norm = u_field.gradient_norm();
        let raw = self.levelset_extrema(shells, ShellMode::Max, |x| {
            let gu = grad_u_norm.eval(x).map_err(Error::Eval)?;
            let v = self.v.eval(x).map_err(Error::Eval)?;
            let lg = self.fields.lgv_norm.eval(x).map_err(Error::Eval)?;
            let xi_v = xi.eval(v);
            Ok(gu * growth.eval(v, xi_v * lg) * xi_v)
        })?;
        let inflated: Vec<f64> = raw.iter().map(|&v| inflate(v)).collect();
        let mut values = vec![0.0];
        values.extend(nondecreasing_upper_hull(&inflated));
        // The correction need not vanish at 0; keep the hull's base value.
        values[0] = values[1];
        let mut knots = vec![0.0];
        knots.extend(&shells.levels);
        let big_delta =
            MonotoneEnvelope::interpolating(knots, values, Monotonicity::NonDecreasing)?;
        let big_omega = big_delta.scaled(4.0);
        Ok((big_delta, big_omega))
    }

    /// Cumulative integral envelope of `big_omega` over the level grid,
    /// with `big_omega` itself as the exact slope.
    pub fn integrate_big_omega(
        &self,
        big_omega: &MonotoneEnvelope,
        levels: &[f64],
    ) -> Result<MonotoneEnvelope> {
        let mut knots = vec![0.0];
        let mut values = vec![0.0];
        let mut slopes = vec![big_omega.eval(0.0)];
        let mut acc = 0.0;
        let mut prev = 0.0;
        for &s in levels {
            acc += quad::integrate(&|l| Ok(big_omega.eval(l)), prev, s, self.opts.quad_tol)?;
            knots.push(s);
            values.push(acc);
            slopes.push(big_omega.eval(s));
            prev = s;
        }
        MonotoneEnvelope::with_slopes(knots, values, slopes, Monotonicity::NonDecreasing)
    }

    /// `vsharp = V + int_0^V big_omega + delta(V) L_G V`.
    pub fn build_clf(
        &self,
        u_field: &ScalarField,
        big_omega_integral: &MonotoneEnvelope,
    ) -> Result<ScalarField> {
        u_field.add(&self.v.compose_envelope(big_omega_integral))
    }

    /// Damping feedback `u_k = -xi(V) L_{g_k} V`.
    pub fn build_feedback(&self, xi: &MonotoneEnvelope) -> Result<FeedbackLaw> {
        let gain = self.v.compose_envelope(xi);
        let components = self
            .fields
            .lgv_rows
            .iter()
            .map(|row| Ok(row.mul(&gain)?.neg()))
            .collect::<Result<Vec<_>>>()?;
        FeedbackLaw::new(components)
    }

    // -- Orchestration -------------------------------------------------------

    pub fn run(&self) -> Result<SynthesisResult> {
        let radial = self.radial_envelopes()?;
        let margins = self.margin_functions()?;
        let levels = self.level_grid(radial.v_top);
        let shells = self.shell_table(&levels, &radial)?;
        let lgv_max = self.lgv_max_envelope(&shells)?;

        let (xi, growth) = if let Some(sys_full) = self.nonlinear {
            let sigma_top = self.opts.epsilon.max(1e-6);
            let sigmas: Vec<f64> = (0..8)
                .map(|k| sigma_top * (1e-3f64).powf(1.0 - k as f64 / 7.0))
                .collect();
            let growth = self.remainder_growth(sys_full, &shells, &sigmas)?;
            let xi = self.gain_envelope_nonlinear(&growth, &radial, &lgv_max, &shells)?;
            (xi, Some(growth))
        } else {
            (self.gain_envelope(&shells, &lgv_max)?, None)
        };

        let delta_cap = self.delta_cap(&shells, &radial, &margins, &xi)?;
        let p_floor = self.p_floor(&shells)?;
        let omega = self.build_omega(&p_floor, &levels)?;
        let delta = self.build_delta(&delta_cap, &omega, &levels)?;
        let u_field = self.build_u(&delta, &radial)?;

        let (big_omega, big_omega_integral) = if let Some(growth) = &growth {
            let (_, big_omega) = self.build_big_omega(&u_field, growth, &xi, &shells)?;
            let integral = self.integrate_big_omega(&big_omega, &levels)?;
            (big_omega, integral)
        } else {
            (
                MonotoneEnvelope::constant(0.0),
                MonotoneEnvelope::constant(0.0),
            )
        };

        let vsharp = self.build_clf(&u_field, &big_omega_integral)?;
        let feedback = self.build_feedback(&xi)?;

        let mut result = SynthesisResult {
            radial,
            margins,
            delta_cap,
            p_floor,
            omega,
            delta,
            xi,
            lgv_max,
            big_omega,
            big_omega_integral,
            u_field,
            vsharp,
            feedback,
            constraint_report: Vec::new(),
            region_radius: self.opts.region_radius,
            sampled_radius: shells.max_radius.max(self.opts.region_radius),
            seed: self.opts.seed,
            fresh_samples: self.opts.fresh_samples,
        };
        result.constraint_report =
            self.verify_constraints(&result, self.opts.fresh_samples, self.opts.seed)?;
        Ok(result)
    }

    /// Fresh-sample re-verification of every constructed inequality,
    /// independent of the construction grid. Margins are worst-case over
    /// the sample; conditional (per-case) margins skip samples outside
    /// their case.
    pub fn verify_constraints(
        &self,
        result: &SynthesisResult,
        samples: u64,
        seed: u64,
    ) -> Result<Vec<ConstraintMargin>> {
        let n = self.n();
        let udot = self.closed_loop_derivative(&result.u_field, &result.feedback)?;
        let vsharpdot = self.closed_loop_derivative(&result.vsharp, &result.feedback)?;
        let ids: Vec<&str> = {
            let mut v = vec![
                "alpha-sandwich",
                "rho-floor",
                "7gh",
                "300",
                "u-floor",
                "6h0a",
                "6h0b",
                "ns1",
                "zs1a",
                "zs1b",
                "case-cover",
                "case1-decay",
                "case2-decay",
                "case3-decay",
                "feedback-cap",
                "vsharp-negdef",
            ];
            if self.nonlinear.is_some() {
                v.extend(["10m", "11m", "15m"]);
            }
            v
        };

        // Per-constraint running state: worst margin, its point and sample
        // index, and how many samples the constraint applied to.
        #[derive(Clone)]
        struct Slot {
            margin: f64,
            point: Vec<f64>,
            index: u64,
            applicable: u64,
        }
        struct Acc {
            slots: Vec<Slot>,
        }
        let identity = || Acc { slots: Vec::new() };
        let merge = |mut a: Acc, b: Acc| -> Acc {
            if a.slots.is_empty() {
                return b;
            }
            if b.slots.is_empty() {
                return a;
            }
            for (ai, bi) in a.slots.iter_mut().zip(b.slots) {
                ai.applicable += bi.applicable;
                let take_b =
                    bi.margin < ai.margin || (bi.margin == ai.margin && bi.index < ai.index);
                if take_b {
                    ai.margin = bi.margin;
                    ai.point = bi.point;
                    ai.index = bi.index;
                }
            }
            a
        };

        let out = (0..samples)
            .into_par_iter()
            .map(|i| -> Result<Acc> {
                let mut rng = Rng::at(seed, streams::FRESH, i);
                let x = rng.in_ball(n, self.opts.region_radius);
                let r = norm(&x);
                let v = self.v.eval(&x).map_err(Error::Eval)?;
                let lfv = self.fields.lfv.eval(&x).map_err(Error::Eval)?;
                let lgv = self.fields.lgv_norm.eval(&x).map_err(Error::Eval)?;
                let lgv_dir = self.fields.lgv_dir.eval(&x).map_err(Error::Eval)?;
                let lflgv = self.fields.lflgv_dir.eval(&x).map_err(Error::Eval)?;
                let mut lglgv2 = 0.0;
                for row in &self.fields.lglgv_rows {
                    let t = row.eval(&x).map_err(Error::Eval)?;
                    lglgv2 += t * t;
                }
                let grad_v_norm = self.fields.grad_norm.eval(&x).map_err(Error::Eval)?;
                let delta_v = result.delta.eval(v);
                let ddelta_v = result.delta.deriv(v);
                let xi_v = result.xi.eval(v);
                let gamma_r = result.margins.gamma.eval(r);
                let nfloor_r = result.margins.nfloor.eval(r);
                let u_val = result.u_field.eval(&x).map_err(Error::Eval)?;
                let udot_val = udot.eval(&x).map_err(Error::Eval)?;
                let vsharpdot_val = vsharpdot.eval(&x).map_err(Error::Eval)?;
                let u_of_x = result.feedback.eval(&x).map_err(Error::Eval)?;
                let u_norm = norm(&u_of_x);

                let sandwich = (v - result.radial.alpha1.eval(r))
                    .min(result.radial.alpha2.eval(r) - v)
                    .min(result.radial.alpha3.eval(r) - lgv_dir.abs())
                    .min(result.radial.alpha4.eval(r) - grad_v_norm);
                let s_slack = lflgv.min(0.0) + lfv.min(0.0) - lgv;
                let rho_margin = -s_slack - result.margins.rho.eval(r);
                let c7 = result.radial.alpha1.eval(result.radial.alpha2.invert(v))
                    / (1.0
                        + 2.0
                            * result
                                .radial
                                .alpha3
                                .eval(self.inv_alpha1_regional(&result.radial, v)));
                let m_7gh = c7 - delta_v;
                let m_300 = ddelta_v * lgv_dir + 0.25;
                let u_floor =
                    u_val - 0.5 * result.radial.alpha1.eval(result.radial.alpha2.invert(v));
                let m_6h0a = nfloor_r / 8.0 - delta_v * lflgv;
                let m_6h0b = nfloor_r / 8.0 - xi_v * delta_v * delta_v * lglgv2;
                let m_ns1 = nfloor_r / 2.0 - delta_v * xi_v * lglgv2;
                let m_zs1a = gamma_r * gamma_r / 8.0 * xi_v - delta_v * lflgv;
                let m_zs1b = gamma_r * gamma_r / 8.0 - delta_v * delta_v * lglgv2;
                let cover = (lgv - gamma_r).max(-nfloor_r - lfv).max(-nfloor_r - lflgv);
                let case1 = if lgv <= gamma_r && lfv <= -nfloor_r {
                    -0.25 * nfloor_r - udot_val
                } else {
                    f64::INFINITY
                };
                let case2 = if lgv <= gamma_r && lflgv <= -nfloor_r {
                    -0.5 * delta_v * nfloor_r - udot_val
                } else {
                    f64::INFINITY
                };
                let case3 = if lgv >= gamma_r {
                    -0.25 * xi_v * gamma_r * gamma_r - udot_val
                } else {
                    f64::INFINITY
                };
                let cap = self.opts.epsilon - u_norm;
                let negdef = -vsharpdot_val;

                let mut margins = vec![
                    sandwich, rho_margin, m_7gh, m_300, u_floor, m_6h0a, m_6h0b, m_ns1, m_zs1a,
                    m_zs1b, cover, case1, case2, case3, cap, negdef,
                ];
                if let Some(sys_full) = self.nonlinear {
                    // 10m: remainder growth at the applied input size.
                    let h = sys_full.remainder(&x, &u_of_x)?;
                    let mut hu = vec![0.0; h.len()];
                    for (row, hrow) in h.iter().enumerate() {
                        hu[row] = hrow.iter().zip(&u_of_x).map(|(a, b)| a * b).sum();
                    }
                    let hmag = norm(&hu);
                    let hbound = if u_norm > 1e-12 {
                        hmag / (u_norm * u_norm)
                    } else {
                        0.0
                    };
                    let alpha4a1 = result
                        .radial
                        .alpha4
                        .eval(self.inv_alpha1_regional(&result.radial, v));
                    let m_10m = 0.5 - alpha4a1 * hbound * xi_v;
                    // 11m: closed-loop V-decay for the true dynamics.
                    let grad_v = self.v.gradient(&x).map_err(Error::Eval)?;
                    let fxu = sys_full.rhs(&x, &u_of_x).map_err(Error::Eval)?;
                    let vdot_true: f64 = grad_v.iter().zip(&fxu).map(|(a, b)| a * b).sum();
                    let m_11m = (lfv - 0.5 * xi_v * lgv * lgv) - vdot_true;
                    // 15m: U-decay bounded by -W + big_delta xi |L_g V|^2.
                    let grad_u = result.u_field.gradient(&x).map_err(Error::Eval)?;
                    let udot_true: f64 = grad_u.iter().zip(&fxu).map(|(a, b)| a * b).sum();
                    let w = -udot_val;
                    let m_15m =
                        (-w + 0.25 * result.big_omega.eval(v) * xi_v * lgv * lgv) - udot_true;
                    margins.extend([m_10m, m_11m, m_15m]);
                }
                Ok(Acc {
                    slots: margins
                        .into_iter()
                        .map(|m| Slot {
                            applicable: u64::from(m.is_finite()),
                            margin: m,
                            point: x.clone(),
                            index: i,
                        })
                        .collect(),
                })
            })
            .try_reduce(identity, |a, b| Ok(merge(a, b)))?;

        Ok(ids
            .iter()
            .zip(out.slots)
            .map(|(id, slot)| ConstraintMargin {
                id: (*id).into(),
                // A constraint that never applied holds vacuously.
                margin: if slot.applicable == 0 {
                    0.0
                } else {
                    slot.margin
                },
                worst_point: if slot.applicable == 0 {
                    Vec::new()
                } else {
                    slot.point
                },
                samples: slot.applicable,
            })
            .collect())
    }

    /// `x -> L_f W + sum_k L_{g_k} W u_k(x)` as a field.
    pub fn closed_loop_derivative(
        &self,
        w: &ScalarField,
        feedback: &FeedbackLaw,
    ) -> Result<ScalarField> {
        closed_loop_derivative(self.sys, w, feedback)
    }
}

/// Derivative of `w` along `f + g u(x)` as a composed field.
pub fn closed_loop_derivative(
    sys: &ControlAffineSystem,
    w: &ScalarField,
    feedback: &FeedbackLaw,
) -> Result<ScalarField> {
    let mut acc = w.lie_derivative(sys.drift())?;
    for (col, u_k) in sys.input_columns().iter().zip(feedback.components()) {
        let term = w.lie_derivative(col)?.mul(u_k)?;
        acc = acc.add(&term)?;
    }
    Ok(acc)
}

/// Sampled remainder-growth table, nondecreasing in both axes, evaluated
/// with flat extension outside the grid.
#[derive(Clone, Debug)]
pub struct RemainderGrowth {
    levels: Vec<f64>,
    sigmas: Vec<f64>,
    table: Vec<Vec<f64>>,
}

impl RemainderGrowth {
    pub fn eval(&self, v: f64, s: f64) -> f64 {
        let j = bracket(&self.levels, v);
        let k = bracket(&self.sigmas, s);
        // Safe side: take the upper-right cell corner.
        let jj = (j + 1).min(self.levels.len() - 1);
        let kk = (k + 1).min(self.sigmas.len() - 1);
        let j_hi = if v >= self.levels[self.levels.len() - 1] {
            self.levels.len() - 1
        } else {
            jj
        };
        let k_hi = if s >= self.sigmas[self.sigmas.len() - 1] {
            self.sigmas.len() - 1
        } else {
            kk
        };
        self.table[j_hi][k_hi]
    }
}

fn bracket(grid: &[f64], x: f64) -> usize {
    grid.partition_point(|&g| g <= x).saturating_sub(1)
}

/// Fold a salt into a stream tag; the low byte keeps streams distinct.
fn substream(stream: u64, salt: u64) -> u64 {
    stream | (salt << 8)
}

/// Euclidean norm of a state vector.
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Convenience entry point for affine systems.
pub fn synthesize_affine(
    sys: &ControlAffineSystem,
    v: &ScalarField,
    g_dir: &VectorField,
    opts: SynthesisOptions,
) -> Result<SynthesisResult> {
    Synthesizer::new(sys, v, g_dir, opts)?.run()
}

/// Convenience entry point for fully nonlinear systems (affine data is
/// extracted first, the remainder feeds the gain correction).
pub fn synthesize_nonlinear(
    sys_full: &FullyNonlinearSystem,
    v: &ScalarField,
    g_dir: &VectorField,
    opts: SynthesisOptions,
) -> Result<(ControlAffineSystem, SynthesisResult)> {
    let affine = sys_full.extract_affine_data()?;
    let result = {
        let synth = Synthesizer::new(&affine, v, g_dir, opts)?.with_nonlinear(sys_full);
        synth.run()?
    };
    Ok((affine, result))
}


#[cfg(test)]
mod stage_tests {
    use super::*;
    use crate::systems::{builtin_manipulator, builtin_oscillator};

    fn oscillator_synth() -> (crate::systems::OscillatorBundle, SynthesisOptions) {
        (
            builtin_oscillator(),
            SynthesisOptions {
                epsilon: 0.1,
                radii: 32,
                sphere_samples_per_dim: 128,
                levels: 32,
                shell_samples: 128,
                fresh_samples: 2000,
                ..SynthesisOptions::default()
            },
        )
    }

    #[test]
    fn kernel_slack_vanishes_at_origin_and_matches_hand_value() {
        let m = builtin_manipulator();
        let synth =
            Synthesizer::new(&m.affine, &m.v, &m.g_dir, SynthesisOptions::default()).unwrap();
        assert_eq!(synth.fields.kernel_slack(&[0.0; 4]).unwrap(), 0.0);
        // At (1, 0, 0, 0): L_f L_G V = -1/(2 sqrt 2), L_f V = 0, |L_g V| = 0.
        let s = synth.fields.kernel_slack(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((s + 1.0 / (2.0 * 2.0f64.sqrt())).abs() < 1e-14, "{s}");
    }

    #[test]
    fn margin_envelope_positive_on_grid() {
        let (o, opts) = oscillator_synth();
        let synth = Synthesizer::new(&o.sys, &o.v, &o.g_dir, opts).unwrap();
        let margins = synth.margin_functions().unwrap();
        assert_eq!(margins.rho.eval(0.0), 0.0);
        for &s in margins.rho.knots().iter().skip(1) {
            assert!(margins.rho.eval(s) > 0.0, "rho({s})");
        }
    }

    #[test]
    fn levelset_extrema_of_constant_field() {
        let (o, opts) = oscillator_synth();
        let synth = Synthesizer::new(&o.sys, &o.v, &o.g_dir, opts).unwrap();
        let radial = synth.radial_envelopes().unwrap();
        let levels = synth.level_grid(radial.v_top);
        let shells = synth.shell_table(&levels, &radial).unwrap();
        let vals = synth
            .levelset_extrema(&shells, ShellMode::Min, |_| Ok(2.5))
            .unwrap();
        assert!(vals.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn p_floor_approaches_one_near_zero() {
        let (o, opts) = oscillator_synth();
        let synth = Synthesizer::new(&o.sys, &o.v, &o.g_dir, opts).unwrap();
        let radial = synth.radial_envelopes().unwrap();
        let levels = synth.level_grid(radial.v_top);
        let shells = synth.shell_table(&levels, &radial).unwrap();
        let p = synth.p_floor(&shells).unwrap();
        // |L_G V| -> 0 at the origin, so the deflated floor tends to 0.9.
        let near_zero = p.eval(levels[0]);
        assert!((near_zero - 0.9).abs() < 0.05, "{near_zero}");
        assert!(p.values().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn omega_from_constant_unit_floor_is_one_half() {
        let (o, opts) = oscillator_synth();
        let synth = Synthesizer::new(&o.sys, &o.v, &o.g_dir, opts).unwrap();
        let p_one = MonotoneEnvelope::constant(1.0);
        let levels: Vec<f64> = (1..=16).map(|i| 0.5 * i as f64).collect();
        let omega = synth.build_omega(&p_one, &levels).unwrap();
        for &s in &levels {
            assert!((omega.eval(s) - 0.5).abs() < 1e-12);
        }
        assert!(omega.eval(100.0) <= 0.5 + 1e-12, "capped beyond the grid");
    }

    #[test]
    fn delta_cap_shape() {
        let (o, opts) = oscillator_synth();
        let result = synthesize_affine(&o.sys, &o.v, &o.g_dir, opts).unwrap();
        let cap = &result.delta_cap;
        assert_eq!(cap.eval(0.0), 0.0);
        let mut rising = true;
        let mut prev = 0.0;
        for &s in cap.knots().iter().skip(1) {
            let v = cap.eval(s);
            assert!(v <= 1.0 + 1e-12, "bounded by one");
            if s <= 1.0 {
                assert!(v >= prev - 1e-12, "rising up to level 1");
            } else if rising {
                rising = false;
            }
            if !rising {
                assert!(v <= prev + 1e-12, "nonincreasing after level 1");
            }
            prev = v;
        }
    }

    #[test]
    fn u_vanishes_at_origin_and_vsharp_equals_u_for_affine() {
        let (o, opts) = oscillator_synth();
        let result = synthesize_affine(&o.sys, &o.v, &o.g_dir, opts).unwrap();
        assert_eq!(result.u_field.eval(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(result.big_omega.values().iter().all(|&v| v == 0.0));
        let mut rng = Rng::at(0, 906, 0);
        for _ in 0..200 {
            let x = rng.in_ball(2, 8.0);
            let u = result.u_field.eval(&x).unwrap();
            let vs = result.vsharp.eval(&x).unwrap();
            assert!((u - vs).abs() <= 1e-14 * (1.0 + u.abs()), "{u} vs {vs}");
            assert!(vs > 0.0, "strict positivity away from 0");
        }
        assert_eq!(result.vsharp.eval(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn feedback_vanishes_where_the_input_derivative_does() {
        let (o, opts) = oscillator_synth();
        let result = synthesize_affine(&o.sys, &o.v, &o.g_dir, opts).unwrap();
        // L_g V = p: zero input on the p = 0 axis.
        let u = result.feedback.eval(&[3.0, 0.0]).unwrap();
        assert_eq!(u, vec![0.0]);
    }

    #[test]
    fn affine_remainder_gain_saturates_the_norm_cap() {
        // The shifted manipulator dynamics are affine in the input, so the
        // remainder-corrected gain must coincide with the plain cap.
        let m = builtin_manipulator();
        let opts = SynthesisOptions {
            radii: 24,
            sphere_samples_per_dim: 64,
            levels: 16,
            shell_samples: 96,
            fresh_samples: 1000,
            ..SynthesisOptions::default()
        };
        let synth = Synthesizer::new(&m.affine, &m.v, &m.g_dir, opts.clone())
            .unwrap()
            .with_nonlinear(&m.shifted);
        let radial = synth.radial_envelopes().unwrap();
        let levels = synth.level_grid(radial.v_top);
        let shells = synth.shell_table(&levels, &radial).unwrap();
        let lgv_max = synth.lgv_max_envelope(&shells).unwrap();
        let plain = synth.gain_envelope(&shells, &lgv_max).unwrap();
        let sigmas = [1e-3, 1e-2, 0.1, 1.0];
        let growth = synth
            .remainder_growth(&m.shifted, &shells, &sigmas)
            .unwrap();
        let corrected = synth
            .gain_envelope_nonlinear(&growth, &radial, &lgv_max, &shells)
            .unwrap();
        for &v in &shells.levels {
            assert!(
                (plain.eval(v) - corrected.eval(v)).abs() <= 1e-12 * (1.0 + plain.eval(v)),
                "level {v}"
            );
        }
    }

    #[test]
    fn big_omega_is_four_times_big_delta() {
        let o = builtin_oscillator();
        // Force a nonlinear route with a genuinely quadratic input term.
        let sys = crate::systems::FullyNonlinearSystem::new(
            vec![
                crate::field::ScalarField::from_expression(crate::expr::parse("x2", 2, 1).unwrap()),
                crate::field::ScalarField::from_expression(
                    crate::expr::parse("-x1 + u1 + u1^2", 2, 1).unwrap(),
                ),
            ],
            2,
            1,
        )
        .unwrap();
        let affine = sys.extract_affine_data().unwrap();
        let opts = SynthesisOptions {
            radii: 24,
            sphere_samples_per_dim: 64,
            levels: 16,
            shell_samples: 96,
            fresh_samples: 1000,
            ..SynthesisOptions::default()
        };
        let synth = Synthesizer::new(&affine, &o.v, &o.g_dir, opts)
            .unwrap()
            .with_nonlinear(&sys);
        let radial = synth.radial_envelopes().unwrap();
        let levels = synth.level_grid(radial.v_top);
        let shells = synth.shell_table(&levels, &radial).unwrap();
        let lgv_max = synth.lgv_max_envelope(&shells).unwrap();
        let sigmas = [1e-3, 1e-2, 0.1, 1.0];
        let growth = synth.remainder_growth(&sys, &shells, &sigmas).unwrap();
        let xi = synth
            .gain_envelope_nonlinear(&growth, &radial, &lgv_max, &shells)
            .unwrap();
        let margins = synth.margin_functions().unwrap();
        let cap = synth.delta_cap(&shells, &radial, &margins, &xi).unwrap();
        let p = synth.p_floor(&shells).unwrap();
        let omega = synth.build_omega(&p, &levels).unwrap();
        let delta = synth.build_delta(&cap, &omega, &levels).unwrap();
        let u = synth.build_u(&delta, &radial).unwrap();
        let (big_delta, big_omega) = synth.build_big_omega(&u, &growth, &xi, &shells).unwrap();
        for &v in &shells.levels {
            assert!((big_omega.eval(v) - 4.0 * big_delta.eval(v)).abs() <= 1e-12);
        }
        // Nondecreasing by construction.
        let vals = big_delta.values();
        assert!(vals.windows(2).all(|w| w[1] >= w[0] - 1e-15));
    }

    #[test]
    fn halved_delta_keeps_every_margin() {
        // The constraint system is downward closed in the mixing weight:
        // shrinking delta never breaks a reported inequality.
        let (o, opts) = oscillator_synth();
        let synth = Synthesizer::new(&o.sys, &o.v, &o.g_dir, opts.clone()).unwrap();
        let mut result = synth.run().unwrap();
        result.delta = result.delta.scaled(0.5);
        result.u_field =
            o.v.add(
                &o.v.compose_envelope(&result.delta)
                    .mul(&synth.fields.lgv_dir)
                    .unwrap(),
            )
            .unwrap();
        result.vsharp = result.u_field.clone();
        let report = synth.verify_constraints(&result, 2000, 3).unwrap();
        for c in &report {
            let ok = if c.id.ends_with("negdef") {
                c.margin > 0.0
            } else {
                c.margin >= -1e-9
            };
            assert!(ok, "{} margin {}", c.id, c.margin);
        }
    }
}

#[cfg(test)]
mod degenerate_tests {
    use super::*;
    use crate::expr::parse;
    use crate::field::{ScalarField, VectorField};
    use crate::systems::ControlAffineSystem;

    #[test]
    fn indefinite_candidate_is_rejected_with_witness() {
        // V dips negative off the x1 axis: the radial stage must abort
        // with a point that reproduces the violation.
        let sf = |src: &str| ScalarField::from_expression(parse(src, 2, 0).unwrap());
        let drift = VectorField::new(vec![sf("x2"), sf("-x1")]).unwrap();
        let col = VectorField::new(vec![sf("0"), sf("1")]).unwrap();
        let sys = ControlAffineSystem::new(drift, vec![col]).unwrap();
        let v = sf("x1^2 - 0.1 * x2^2");
        let g_dir = VectorField::new(vec![sf("0"), sf("x1")]).unwrap();
        let opts = SynthesisOptions {
            radii: 8,
            sphere_samples_per_dim: 64,
            ..SynthesisOptions::default()
        };
        let synth = Synthesizer::new(&sys, &v, &g_dir, opts).unwrap();
        match synth.radial_envelopes() {
            Err(Error::NotPositiveDefinite { witness, value, .. }) => {
                let check = witness[0] * witness[0] - 0.1 * witness[1] * witness[1];
                assert!(value <= 0.0 && (check - value).abs() < 1e-12);
            }
            other => panic!("expected a positive-definiteness failure, got {other:?}"),
        }
    }
}
