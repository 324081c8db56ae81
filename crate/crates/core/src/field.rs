//! Scalar and vector fields with exact forward-mode differentiation.
//!
//! A [`ScalarField`] wraps any evaluator — a parsed expression, a built-in
//! closed form, or a derived composition — behind one dynamically
//! dispatched surface that evaluates at every supported dual level. Lie
//! derivatives, Lie brackets and envelope compositions are themselves
//! fields, so the whole calculus closes under differentiation (up to the
//! engine's nesting cap).

use crate::envelope::MonotoneEnvelope;
use crate::error::{Error, EvalError, Result};
use crate::expr::Expression;
use crate::scalar::{Field, GenericField, Scalar};
use std::fmt;
use std::sync::Arc;

/// An immutable, thread-safe scalar field on `dim` input slots.
#[derive(Clone)]
pub struct ScalarField {
    inner: Arc<dyn Field>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarField(dim = {})", self.dim())
    }
}

impl ScalarField {
    pub fn new(inner: Arc<dyn Field>) -> Self {
        ScalarField { inner }
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub(crate) fn raw(&self) -> &dyn Field {
        self.inner.as_ref()
    }

    /// Field backed by a parsed expression; input slots are the state
    /// variables followed by the input variables.
    pub fn from_expression(expr: Expression) -> Self {
        ScalarField::new(Arc::new(ExprField { expr }))
    }

    /// The coordinate projection `x -> x[i]`.
    pub fn coordinate(i: usize, dim: usize) -> Self {
        assert!(i < dim);
        ScalarField::new(Arc::new(CoordField { i, dim }))
    }

    pub fn constant(c: f64, dim: usize) -> Self {
        ScalarField::new(Arc::new(ConstField { c, dim }))
    }

    pub fn eval(&self, x: &[f64]) -> std::result::Result<f64, EvalError> {
        self.eval_s(x)
    }

    pub fn eval_s<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        if x.len() != self.dim() {
            return Err(EvalError::DimMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        S::eval_field(self.inner.as_ref(), x)
    }

    /// Exact forward-mode gradient (machine precision, not differences).
    pub fn gradient(&self, x: &[f64]) -> std::result::Result<Vec<f64>, EvalError> {
        self.gradient_s(x)
    }

    pub fn gradient_s<S: Scalar>(&self, x: &[S]) -> std::result::Result<Vec<S>, EvalError> {
        if x.len() != self.dim() {
            return Err(EvalError::DimMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        S::gradient_of(self.inner.as_ref(), x)
    }

    /// The Lie derivative `x -> grad self(x) . f(x)`, itself differentiable.
    pub fn lie_derivative(&self, f: &VectorField) -> Result<ScalarField> {
        if f.len() != self.dim() || f.dim() != self.dim() {
            return Err(Error::Dimension {
                what: "Lie derivative".into(),
                expected: self.dim(),
                got: f.len(),
            });
        }
        Ok(ScalarField::new(Arc::new(LieDeriveField {
            v: self.clone(),
            f: f.clone(),
        })))
    }

    /// Partial derivative with respect to coordinate `coord`.
    pub fn partial(&self, coord: usize) -> ScalarField {
        assert!(coord < self.dim());
        ScalarField::new(Arc::new(PartialField {
            inner: self.clone(),
            coord,
        }))
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField> {
        self.combine(other, Combine::Add)
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        self.combine(other, Combine::Sub)
    }

    pub fn mul(&self, other: &ScalarField) -> Result<ScalarField> {
        self.combine(other, Combine::Mul)
    }

    fn combine(&self, other: &ScalarField, op: Combine) -> Result<ScalarField> {
        if other.dim() != self.dim() {
            return Err(Error::Dimension {
                what: "field combination".into(),
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(ScalarField::new(Arc::new(CombineField {
            a: self.clone(),
            b: other.clone(),
            op,
        })))
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        ScalarField::new(Arc::new(ScaleField {
            inner: self.clone(),
            c,
        }))
    }

    pub fn neg(&self) -> ScalarField {
        self.scale(-1.0)
    }

    pub fn offset(&self, c: f64) -> ScalarField {
        ScalarField::new(Arc::new(OffsetField {
            inner: self.clone(),
            c,
        }))
    }

    /// `x -> env(self(x))`; differentiates through the envelope's Hermite
    /// segments.
    pub fn compose_envelope(&self, env: &MonotoneEnvelope) -> ScalarField {
        ScalarField::new(Arc::new(EnvComposeField {
            env: env.clone(),
            inner: self.clone(),
        }))
    }

    /// `x -> |self(x)|` (as `sqrt(v^2)`; only the value part is meaningful
    /// at the kink).
    pub fn abs(&self) -> ScalarField {
        ScalarField::new(Arc::new(NormField {
            fields: vec![self.clone()],
        }))
    }

    /// Euclidean norm of several same-dimension fields.
    pub fn norm_of(fields: Vec<ScalarField>) -> Result<ScalarField> {
        let dim = fields.first().map(|f| f.dim()).unwrap_or(0);
        if fields.is_empty() || fields.iter().any(|f| f.dim() != dim) {
            return Err(Error::Invalid("norm needs same-dimension fields".into()));
        }
        Ok(ScalarField::new(Arc::new(NormField { fields })))
    }

    /// `x -> |grad self(x)|`.
    pub fn gradient_norm(&self) -> ScalarField {
        let parts = (0..self.dim()).map(|i| self.partial(i)).collect();
        ScalarField::new(Arc::new(NormField { fields: parts }))
    }

    /// Integer power of this field.
    pub fn powi_field(&self, k: i32) -> ScalarField {
        ScalarField::new(Arc::new(PowIField {
            inner: self.clone(),
            k,
        }))
    }

    /// View a field on `k` slots as a field on `total >= k` slots that only
    /// reads the leading `k` (configuration variables inside a phase
    /// space, for instance).
    pub fn embed_head(&self, total: usize) -> Result<ScalarField> {
        if total < self.dim() {
            return Err(Error::Dimension {
                what: "head embedding".into(),
                expected: self.dim(),
                got: total,
            });
        }
        Ok(ScalarField::new(Arc::new(HeadField {
            inner: self.clone(),
            total,
        })))
    }

    /// Restrict trailing slots to constants: `y -> self([y; tail])`.
    pub fn restrict_tail(&self, tail: Vec<f64>) -> Result<ScalarField> {
        if tail.len() >= self.dim() {
            return Err(Error::Invalid("restriction leaves no free slots".into()));
        }
        Ok(ScalarField::new(Arc::new(RestrictField {
            inner: self.clone(),
            tail,
        })))
    }

    /// `y -> (d self / d x_slot)([y; tail])` — used to pull input-direction
    /// derivatives out of joint state-input maps.
    pub fn tail_slot_derivative(&self, tail: Vec<f64>, slot: usize) -> Result<ScalarField> {
        let free = self.dim() - tail.len();
        if tail.len() >= self.dim() || slot < free || slot >= self.dim() {
            return Err(Error::Invalid("bad restriction/slot combination".into()));
        }
        Ok(ScalarField::new(Arc::new(TailSlotDerivField {
            inner: self.clone(),
            tail,
            slot,
        })))
    }
}

/// A vector field as componentwise scalar fields.
#[derive(Clone, Debug)]
pub struct VectorField {
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        let dim = components.first().map(|c| c.dim()).unwrap_or(0);
        if components.is_empty() || components.iter().any(|c| c.dim() != dim) {
            return Err(Error::Invalid(
                "vector field components must share one dimension".into(),
            ));
        }
        Ok(VectorField { components })
    }

    /// Input dimension.
    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// Output dimension.
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn component(&self, k: usize) -> &ScalarField {
        &self.components[k]
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn eval(&self, x: &[f64]) -> std::result::Result<Vec<f64>, EvalError> {
        self.eval_s(x)
    }

    pub fn eval_s<S: Scalar>(&self, x: &[S]) -> std::result::Result<Vec<S>, EvalError> {
        self.components.iter().map(|c| c.eval_s(x)).collect()
    }

    /// Lie bracket `[self, g](x) = Jg(x) self(x) - J(self)(x) g(x)`.
    pub fn lie_bracket(&self, g: &VectorField) -> Result<VectorField> {
        if g.len() != self.len() || g.dim() != self.dim() || self.len() != self.dim() {
            return Err(Error::Dimension {
                what: "Lie bracket".into(),
                expected: self.len(),
                got: g.len(),
            });
        }
        let components = (0..self.len())
            .map(|row| {
                ScalarField::new(Arc::new(BracketComponentField {
                    f: self.clone(),
                    g: g.clone(),
                    row,
                }) as Arc<dyn Field>)
            })
            .collect();
        VectorField::new(components)
    }

    /// Scale every component by the same scalar field.
    pub fn scale_by(&self, w: &ScalarField) -> Result<VectorField> {
        let components = self
            .components
            .iter()
            .map(|c| c.mul(w))
            .collect::<Result<Vec<_>>>()?;
        VectorField::new(components)
    }
}

/// Default bracket-depth budget: evaluating `ad_f^i g` takes `i` derivative
/// levels, and one more is reserved so the result can still be
/// differentiated once (descent, Lie derivatives).
pub const DEFAULT_AD_DEPTH: usize = 2;

/// Iterated bracket `ad_f^0 g = g`, `ad_f^i g = [f, ad_f^{i-1} g]`.
pub fn iterated_ad(f: &VectorField, g: &VectorField, i: usize) -> Result<VectorField> {
    iterated_ad_with_depth(f, g, i, DEFAULT_AD_DEPTH)
}

/// As [`iterated_ad`] with an explicit depth budget. Budgets above
/// [`DEFAULT_AD_DEPTH`] build the field, but evaluation beyond the dual
/// nesting cap fails with a depth error; deeper orders are only usable with
/// cheap-to-nest expression fields and carry a steep evaluation cost.
pub fn iterated_ad_with_depth(
    f: &VectorField,
    g: &VectorField,
    i: usize,
    budget: usize,
) -> Result<VectorField> {
    if i > budget {
        return Err(Error::Invalid(format!(
            "iterated bracket order {i} exceeds the depth budget {budget}"
        )));
    }
    let mut acc = g.clone();
    for _ in 0..i {
        acc = f.lie_bracket(&acc)?;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Field implementations
// ---------------------------------------------------------------------------

struct ExprField {
    expr: Expression,
}

impl GenericField for ExprField {
    fn dim(&self) -> usize {
        self.expr.state_dim() + self.expr.input_dim()
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        let n = self.expr.state_dim();
        self.expr.evaluate_generic(&x[..n], &x[n..])
    }
}

struct CoordField {
    i: usize,
    dim: usize,
}

impl GenericField for CoordField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        Ok(x[self.i].clone())
    }
}

struct ConstField {
    c: f64,
    dim: usize,
}

impl GenericField for ConstField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_generic<S: Scalar>(&self, _x: &[S]) -> std::result::Result<S, EvalError> {
        Ok(S::from_f64(self.c))
    }
}

#[derive(Clone, Copy)]
enum Combine {
    Add,
    Sub,
    Mul,
}

struct CombineField {
    a: ScalarField,
    b: ScalarField,
    op: Combine,
}

impl GenericField for CombineField {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        let a = self.a.eval_s(x)?;
        let b = self.b.eval_s(x)?;
        Ok(match self.op {
            Combine::Add => a + b,
            Combine::Sub => a - b,
            Combine::Mul => a * b,
        })
    }
}

struct ScaleField {
    inner: ScalarField,
    c: f64,
}

impl GenericField for ScaleField {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        Ok(self.inner.eval_s(x)? * S::from_f64(self.c))
    }
}

struct OffsetField {
    inner: ScalarField,
    c: f64,
}

impl GenericField for OffsetField {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        Ok(self.inner.eval_s(x)? + S::from_f64(self.c))
    }
}

struct LieDeriveField {
    v: ScalarField,
    f: VectorField,
}

impl GenericField for LieDeriveField {
    fn dim(&self) -> usize {
        self.v.dim()
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        let grad = S::gradient_of(self.v.raw(), x)?;
        let fx = self.f.eval_s(x)?;
        let mut acc = S::zero();
        for (g, fi) in grad.into_iter().zip(fx) {
            acc = acc + g * fi;
        }
        Ok(acc)
    }
}

struct PartialField {
    inner: ScalarField,
    coord: usize,
}

impl GenericField for PartialField {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        let grad = S::gradient_of(self.inner.raw(), x)?;
        Ok(grad[self.coord].clone())
    }
}

struct EnvComposeField {
    env: MonotoneEnvelope,
    inner: ScalarField,
}

impl GenericField for EnvComposeField {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        Ok(self.env.eval_s(self.inner.eval_s(x)?))
    }
}

struct NormField {
    fields: Vec<ScalarField>,
}

impl GenericField for NormField {
    fn dim(&self) -> usize {
        self.fields[0].dim()
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        let mut acc = S::zero();
        for f in &self.fields {
            let v = f.eval_s(x)?;
            acc = acc + v.clone() * v;
        }
        acc.sqrt()
    }
}

struct BracketComponentField {
    f: VectorField,
    g: VectorField,
    row: usize,
}

impl GenericField for BracketComponentField {
    fn dim(&self) -> usize {
        self.f.dim()
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        let grad_g = S::gradient_of(self.g.component(self.row).raw(), x)?;
        let grad_f = S::gradient_of(self.f.component(self.row).raw(), x)?;
        let fx = self.f.eval_s(x)?;
        let gx = self.g.eval_s(x)?;
        let mut acc = S::zero();
        for j in 0..fx.len() {
            acc = acc + grad_g[j].clone() * fx[j].clone() - grad_f[j].clone() * gx[j].clone();
        }
        Ok(acc)
    }
}

struct PowIField {
    inner: ScalarField,
    k: i32,
}

impl GenericField for PowIField {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        Ok(self.inner.eval_s(x)?.powi(self.k))
    }
}

struct HeadField {
    inner: ScalarField,
    total: usize,
}

impl GenericField for HeadField {
    fn dim(&self) -> usize {
        self.total
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        self.inner.eval_s(&x[..self.inner.dim()])
    }
}

struct RestrictField {
    inner: ScalarField,
    tail: Vec<f64>,
}

impl GenericField for RestrictField {
    fn dim(&self) -> usize {
        self.inner.dim() - self.tail.len()
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        let mut full: Vec<S> = x.to_vec();
        full.extend(self.tail.iter().map(|&c| S::from_f64(c)));
        self.inner.eval_s(&full)
    }
}

struct TailSlotDerivField {
    inner: ScalarField,
    tail: Vec<f64>,
    slot: usize,
}

impl GenericField for TailSlotDerivField {
    fn dim(&self) -> usize {
        self.inner.dim() - self.tail.len()
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        let mut full: Vec<S> = x.to_vec();
        full.extend(self.tail.iter().map(|&c| S::from_f64(c)));
        let grad = S::gradient_of(self.inner.raw(), &full)?;
        Ok(grad[self.slot].clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn sf(src: &str, n: usize) -> ScalarField {
        ScalarField::from_expression(parse(src, n, 0).unwrap())
    }

    fn vf(srcs: &[&str], n: usize) -> VectorField {
        VectorField::new(srcs.iter().map(|s| sf(s, n)).collect()).unwrap()
    }

    /// Central-difference oracle, step 1e-5.
    fn fd_gradient(f: &ScalarField, x: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        (0..x.len())
            .map(|i| {
                let mut hi = x.to_vec();
                let mut lo = x.to_vec();
                hi[i] += h;
                lo[i] -= h;
                (f.eval(&hi).unwrap() - f.eval(&lo).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_of_quadratic() {
        let v = sf("0.5 * (x1^2 + x2^2)", 2);
        assert_eq!(v.gradient(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn gradient_of_sqrt_matches_hand_value() {
        let v = sf("sqrt(1 + x1^2)", 1);
        let g = v.gradient(&[1.0]).unwrap();
        assert!((g[0] - 1.0 / 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn lie_derivative_of_rotation_vanishes() {
        let v = sf("0.5 * (x1^2 + x2^2)", 2);
        let f = vf(&["x2", "-x1"], 2);
        let lfv = v.lie_derivative(&f).unwrap();
        let mut rng = crate::sampling::Rng::at(0, 99, 0);
        for _ in 0..100 {
            let x = rng.in_ball(2, 5.0);
            assert!(lfv.eval(&x).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn bracket_hand_example() {
        // f = (x2, 0), g = (0, 1): [f, g] = -Jf g = (-1, 0).
        let f = vf(&["x2", "0"], 2);
        let g = vf(&["0", "1"], 2);
        let b = f.lie_bracket(&g).unwrap();
        let out = b.eval(&[0.3, -0.7]).unwrap();
        assert!((out[0] + 1.0).abs() < 1e-14);
        assert!(out[1].abs() < 1e-14);
    }

    #[test]
    fn bracket_of_field_with_itself_vanishes() {
        let f = vf(&["x2 * x1", "sin(x1)"], 2);
        let b = f.lie_bracket(&f).unwrap();
        let out = b.eval(&[0.9, 1.4]).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn oscillator_brackets() {
        // f = (p, -q) in (q, p) coordinates, g = (0, 1).
        let f = vf(&["x2", "-x1"], 2);
        let g = vf(&["0", "1"], 2);
        let ad1 = iterated_ad(&f, &g, 1).unwrap();
        let out = ad1.eval(&[0.5, 0.25]).unwrap();
        assert!((out[0] + 1.0).abs() < 1e-14 && out[1].abs() < 1e-14);
        // ad^2 = [f, (-1, 0)] = -Jf (-1,0)^T = (0, -1).
        let ad2 = iterated_ad(&f, &g, 2).unwrap();
        let out = ad2.eval(&[0.5, 0.25]).unwrap();
        assert!(out[0].abs() < 1e-14 && (out[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn iterated_ad_order_zero_and_one() {
        let f = vf(&["x2", "-x1 - x2"], 2);
        let g = vf(&["0", "1 + x1^2"], 2);
        let ad0 = iterated_ad(&f, &g, 0).unwrap();
        let ad1 = iterated_ad(&f, &g, 1).unwrap();
        let bracket = f.lie_bracket(&g).unwrap();
        let mut rng = crate::sampling::Rng::at(3, 99, 0);
        for _ in 0..100 {
            let x = rng.in_ball(2, 4.0);
            assert_eq!(ad0.eval(&x).unwrap(), g.eval(&x).unwrap());
            let a = ad1.eval(&x).unwrap();
            let b = bracket.eval(&x).unwrap();
            for (ai, bi) in a.iter().zip(&b) {
                assert!((ai - bi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn iterated_ad_depth_budget() {
        let f = vf(&["x2", "-x1"], 2);
        let g = vf(&["0", "1"], 2);
        assert!(iterated_ad(&f, &g, 3).is_err());
        assert!(iterated_ad_with_depth(&f, &g, 3, 3).is_ok());
    }

    #[test]
    fn autodiff_matches_finite_differences() {
        let fields = [
            sf("x1^2 * x2 - sin(x1 * x3)", 3),
            sf("sqrt(1 + x1^2) + exp(-x2^2) * angle(x3)", 3),
            sf("(x1 + 2 * x2)^3 / (1 + x3^2)", 3),
        ];
        let mut rng = crate::sampling::Rng::at(1, 99, 0);
        for f in &fields {
            for _ in 0..100 {
                let x = rng.in_ball(3, 5.0);
                let ad = f.gradient(&x).unwrap();
                let fd = fd_gradient(f, &x);
                for (a, b) in ad.iter().zip(&fd) {
                    let scale = a.abs().max(b.abs()).max(1e-2);
                    assert!((a - b).abs() / scale < 1e-6, "{a} vs {b} at {x:?}");
                }
            }
        }
    }

    #[test]
    fn leibniz_rule() {
        let v = sf("x1^2 + cos(x2)", 2);
        let w = sf("x2^3 - x1 * x2", 2);
        let f = vf(&["x2 - x1^2", "sin(x1)"], 2);
        let lfv = v.lie_derivative(&f).unwrap();
        let lfw = w.lie_derivative(&f).unwrap();
        let prod = v.mul(&w).unwrap();
        let lf_prod = prod.lie_derivative(&f).unwrap();
        let mut rng = crate::sampling::Rng::at(2, 99, 0);
        for _ in 0..200 {
            let x = rng.in_ball(2, 3.0);
            let lhs = lf_prod.eval(&x).unwrap();
            let rhs = v.eval(&x).unwrap() * lfw.eval(&x).unwrap()
                + w.eval(&x).unwrap() * lfv.eval(&x).unwrap();
            assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn bracket_derivative_identity() {
        // L_[f,g] V = L_f L_g V - L_g L_f V (depth-2 exercise).
        let v = sf("x1^2 * x2 + x2^2", 2);
        let f = vf(&["x2", "-x1 + x2^2"], 2);
        let g = vf(&["x1 * x2", "1"], 2);
        let bracket = f.lie_bracket(&g).unwrap();
        let lhs = v.lie_derivative(&bracket).unwrap();
        let lgv = v.lie_derivative(&g).unwrap();
        let lfv = v.lie_derivative(&f).unwrap();
        let lflgv = lgv.lie_derivative(&f).unwrap();
        let lglfv = lfv.lie_derivative(&g).unwrap();
        let mut rng = crate::sampling::Rng::at(4, 99, 0);
        for _ in 0..200 {
            let x = rng.in_ball(2, 3.0);
            let a = lhs.eval(&x).unwrap();
            let b = lflgv.eval(&x).unwrap() - lglfv.eval(&x).unwrap();
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn envelope_composition_differentiates() {
        let env = MonotoneEnvelope::interpolating(
            vec![0.0, 1.0, 2.0, 4.0],
            vec![0.0, 0.8, 1.1, 1.3],
            crate::envelope::Monotonicity::NonDecreasing,
        )
        .unwrap();
        let v = sf("x1^2", 1);
        let c = v.compose_envelope(&env);
        let x = [1.1];
        let g = c.gradient(&x).unwrap();
        let expect = env.deriv(x[0] * x[0]) * 2.0 * x[0];
        assert!((g[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn restriction_and_slot_derivative() {
        // Joint map on (x1, x2 | u1): w(x, u) = x2 + u1 + u1^2 * x1.
        let w = ScalarField::from_expression(parse("x2 + u1 + u1^2 * x1", 2, 1).unwrap());
        let at_zero = w.restrict_tail(vec![0.0]).unwrap();
        assert_eq!(at_zero.dim(), 2);
        assert_eq!(at_zero.eval(&[3.0, 4.0]).unwrap(), 4.0);
        let dw_du = w.tail_slot_derivative(vec![0.0], 2).unwrap();
        // d/du at u=0: 1 + 2*0*x1 = 1.
        assert_eq!(dw_du.eval(&[3.0, 4.0]).unwrap(), 1.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let v = sf("x1", 1);
        let f = vf(&["x1", "x2"], 2);
        assert!(v.lie_derivative(&f).is_err());
        assert!(matches!(
            v.eval(&[1.0, 2.0]).unwrap_err(),
            EvalError::DimMismatch { .. }
        ));
    }
}
