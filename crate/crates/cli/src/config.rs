//! Run configuration: a single JSON file is the source of truth for a run;
//! command-line flags only override scalar fields.

use clf_synth::error::Error as CoreError;
use clf_synth::expr::parse;
use clf_synth::field::{ScalarField, VectorField};
use clf_synth::iiss::DFunction;
use clf_synth::sim::{Disturbance, Method};
use clf_synth::synthesis::SynthesisOptions;
use clf_synth::systems::{
    builtin_manipulator, builtin_oscillator, ControlAffineSystem, FeedbackLaw, FullyNonlinearSystem,
};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DynamicsSpec {
    Builtin {
        name: String,
    },
    Affine {
        state_dim: usize,
        input_dim: usize,
        /// Drift components, expressions in `x1..xn`.
        f: Vec<String>,
        /// Input columns: `g[k]` lists the n entries of column k.
        g: Vec<Vec<String>>,
    },
    Nonlinear {
        state_dim: usize,
        input_dim: usize,
        /// Right-hand side components, expressions in `x1..xn, u1..um`.
        f: Vec<String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackChoice {
    #[default]
    Synthesized,
    /// The built-in manipulator's hand-derived bounded feedback.
    Reference,
}

fn default_epsilon() -> f64 {
    1.0
}
fn default_region() -> f64 {
    10.0
}
fn default_levels() -> usize {
    64
}
fn default_radii() -> usize {
    64
}
fn default_sphere() -> u64 {
    256
}
fn default_shell() -> u64 {
    256
}
fn default_fresh() -> u64 {
    10_000
}
fn default_check_samples() -> u64 {
    20_000
}
fn default_tube_tol() -> f64 {
    1e-3
}
fn default_zero_tol() -> f64 {
    1e-2
}
fn default_t_end() -> f64 {
    10.0
}
fn default_true() -> bool {
    true
}
fn default_output() -> String {
    "out".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dynamics: DynamicsSpec,
    /// Lyapunov candidate; optional for built-ins.
    #[serde(default)]
    pub v: Option<String>,
    /// Auxiliary direction field G; optional for built-ins.
    #[serde(default)]
    pub g_dir: Option<Vec<String>>,
    /// Gain bound D as an expression in `x1` (the scalar argument).
    #[serde(default)]
    pub d_gain: Option<String>,
    #[serde(default = "default_true")]
    pub d_gain_divergent: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_region")]
    pub region_radius: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_radii")]
    pub radii: usize,
    #[serde(default = "default_sphere")]
    pub sphere_samples_per_dim: u64,
    #[serde(default = "default_shell")]
    pub shell_samples: u64,
    #[serde(default = "default_fresh")]
    pub fresh_samples: u64,
    #[serde(default = "default_check_samples")]
    pub check_samples: u64,
    /// Bracket depth for the weak-kernel check; omitted = skip the check.
    #[serde(default)]
    pub jq_depth: Option<usize>,
    #[serde(default = "default_tube_tol")]
    pub tube_tol: f64,
    #[serde(default = "default_zero_tol")]
    pub zero_tol: f64,
    #[serde(default)]
    pub integrator: Method,
    #[serde(default)]
    pub feedback: FeedbackChoice,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default)]
    pub disturbance: Option<Disturbance>,
    /// Zero-order-hold period for the feedback; absent = continuous.
    #[serde(default)]
    pub hold: Option<f64>,
    #[serde(default = "default_output")]
    pub output_dir: String,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| format!("config error at `{}`: {}", e.path(), e.inner()))
    }

    pub fn synthesis_options(&self) -> SynthesisOptions {
        SynthesisOptions {
            epsilon: self.epsilon,
            region_radius: self.region_radius,
            radii: self.radii,
            sphere_samples_per_dim: self.sphere_samples_per_dim,
            levels: self.levels,
            shell_samples: self.shell_samples,
            shell_rtol: 0.05,
            gain_cap: 1.0,
            quad_tol: 1e-10,
            fresh_samples: self.fresh_samples,
            seed: self.seed,
        }
    }

    /// FNV-1a hash of the canonical serialized config, hex-encoded; ties
    /// every certificate to its exact inputs.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in canon.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// Reference artifacts available only for built-ins with a hand-derived
/// strict Lyapunov function.
pub struct ReferenceArtifacts {
    pub feedback: FeedbackLaw,
    pub vsharp: ScalarField,
}

/// A fully assembled model ready for checking, synthesis and simulation.
pub struct BuiltModel {
    pub affine: ControlAffineSystem,
    pub nonlinear: Option<FullyNonlinearSystem>,
    pub v: ScalarField,
    pub g_dir: VectorField,
    pub reference: Option<ReferenceArtifacts>,
    pub d_gain: Option<DFunction>,
}

pub fn build_model(cfg: &RunConfig) -> Result<BuiltModel, String> {
    let mut model = match &cfg.dynamics {
        DynamicsSpec::Builtin { name } => match name.as_str() {
            "two-link-manipulator" => {
                let b = builtin_manipulator();
                BuiltModel {
                    affine: b.affine,
                    nonlinear: Some(b.shifted),
                    v: b.v,
                    g_dir: b.g_dir,
                    reference: Some(ReferenceArtifacts {
                        feedback: b.damping,
                        vsharp: b.vsharp,
                    }),
                    d_gain: Some(DFunction::affine(2.0, 4.0)),
                }
            }
            "harmonic-oscillator" => {
                let b = builtin_oscillator();
                BuiltModel {
                    affine: b.sys,
                    nonlinear: None,
                    v: b.v,
                    g_dir: b.g_dir,
                    reference: None,
                    d_gain: Some(DFunction::hamiltonian(1.0, 1.0)),
                }
            }
            other => {
                return Err(format!(
                    "unknown builtin `{other}` (expected `two-link-manipulator` or `harmonic-oscillator`)"
                ))
            }
        },
        DynamicsSpec::Affine {
            state_dim,
            input_dim,
            f,
            g,
        } => {
            let (n, m) = (*state_dim, *input_dim);
            if f.len() != n {
                return Err(format!("dynamics.f needs {n} components, got {}", f.len()));
            }
            if g.len() != m || g.iter().any(|col| col.len() != n) {
                return Err(format!("dynamics.g needs {m} columns of {n} entries"));
            }
            let drift = VectorField::new(
                f.iter()
                    .map(|src| parse_state_field(src, n, "dynamics.f"))
                    .collect::<Result<_, _>>()?,
            )
            .map_err(stringify)?;
            let columns = g
                .iter()
                .map(|col| {
                    VectorField::new(
                        col.iter()
                            .map(|src| parse_state_field(src, n, "dynamics.g"))
                            .collect::<Result<_, _>>()?,
                    )
                    .map_err(stringify)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let affine = ControlAffineSystem::new(drift, columns).map_err(stringify)?;
            BuiltModel {
                affine,
                nonlinear: None,
                v: placeholder_v(),
                g_dir: placeholder_g(n),
                reference: None,
                d_gain: None,
            }
        }
        DynamicsSpec::Nonlinear {
            state_dim,
            input_dim,
            f,
        } => {
            let (n, m) = (*state_dim, *input_dim);
            if f.len() != n {
                return Err(format!("dynamics.f needs {n} components, got {}", f.len()));
            }
            let components = f
                .iter()
                .map(|src| {
                    parse(src, n, m)
                        .map(ScalarField::from_expression)
                        .map_err(|e| format!("dynamics.f: {e}"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let nonlinear = FullyNonlinearSystem::new(components, n, m).map_err(stringify)?;
            let affine = nonlinear.extract_affine_data().map_err(stringify)?;
            BuiltModel {
                affine,
                nonlinear: Some(nonlinear),
                v: placeholder_v(),
                g_dir: placeholder_g(n),
                reference: None,
                d_gain: None,
            }
        }
    };

    let n = model.affine.state_dim();
    let is_builtin = matches!(cfg.dynamics, DynamicsSpec::Builtin { .. });
    match (&cfg.v, is_builtin) {
        (Some(src), _) => {
            model.v = parse_state_field(src, n, "v")?;
        }
        (None, false) => {
            return Err(
                "missing expression for key `v` (required unless dynamics.kind = builtin)".into(),
            )
        }
        (None, true) => {}
    }
    match (&cfg.g_dir, is_builtin) {
        (Some(cols), _) => {
            if cols.len() != n {
                return Err(format!("g_dir needs {n} components, got {}", cols.len()));
            }
            model.g_dir = VectorField::new(
                cols.iter()
                    .map(|src| parse_state_field(src, n, "g_dir"))
                    .collect::<Result<_, _>>()?,
            )
            .map_err(stringify)?;
        }
        (None, false) => {
            return Err(
                "missing expressions for key `g_dir` (required unless dynamics.kind = builtin)"
                    .into(),
            )
        }
        (None, true) => {}
    }
    if let Some(src) = &cfg.d_gain {
        let field = parse(src, 1, 0)
            .map(ScalarField::from_expression)
            .map_err(|e| format!("d_gain: {e}"))?;
        model.d_gain = Some(DFunction::from_field(field, cfg.d_gain_divergent).map_err(stringify)?);
    }
    Ok(model)
}

fn parse_state_field(src: &str, n: usize, key: &str) -> Result<ScalarField, String> {
    parse(src, n, 0)
        .map(ScalarField::from_expression)
        .map_err(|e| format!("{key}: {e}"))
}

fn placeholder_v() -> ScalarField {
    ScalarField::constant(0.0, 1)
}

fn placeholder_g(n: usize) -> VectorField {
    VectorField::new((0..n).map(|_| ScalarField::constant(0.0, n)).collect())
        .expect("constant rows share dimensions")
}

fn stringify(e: CoreError) -> String {
    e.to_string()
}
