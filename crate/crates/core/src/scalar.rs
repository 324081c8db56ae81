//! Forward-mode automatic differentiation on nested dual numbers.
//!
//! A [`Dual<T>`] carries a value and a vector of tangents, one per seeded
//! direction. Nesting duals (`Dual<Dual<f64>>`, ...) raises the derivative
//! order: one level per gradient taken. The [`Scalar`] trait abstracts over
//! `f64` and the nested levels so that a field written once evaluates at any
//! supported order.
//!
//! Depth is capped at three nested levels ([`D3`]). That is enough to
//! evaluate a double Lie bracket and to drive gradient descent on functions
//! that already contain two derivative levels; requests beyond the cap fail
//! with [`EvalError::DepthExceeded`] instead of silently degrading.

use crate::error::EvalError;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// One forward-mode dual level over an inner scalar `T`.
///
/// `eps` holds the tangents. An empty tangent vector broadcasts as "all
/// tangents zero", which keeps constants allocation-free.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: Vec<T>,
}

pub type D1 = Dual<f64>;
pub type D2 = Dual<D1>;
pub type D3 = Dual<D2>;

impl<T: Scalar> Dual<T> {
    pub fn constant(re: T) -> Self {
        Dual {
            re,
            eps: Vec::new(),
        }
    }

    /// Variable seed: value `re` with a one-hot tangent in slot `slot` of `n`.
    pub fn seeded(re: T, slot: usize, n: usize) -> Self {
        let mut eps = vec![T::zero(); n];
        eps[slot] = T::one();
        Dual { re, eps }
    }

    /// Tangent in direction `i`; missing slots broadcast as zero.
    pub fn eps_at(&self, i: usize) -> T {
        self.eps.get(i).cloned().unwrap_or_else(T::zero)
    }

    fn map_eps(&self, f: impl Fn(&T) -> T) -> Vec<T> {
        self.eps.iter().map(f).collect()
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Dual<T>;
    fn add(self, rhs: Dual<T>) -> Dual<T> {
        let n = self.eps.len().max(rhs.eps.len());
        let eps = (0..n).map(|i| self.eps_at(i) + rhs.eps_at(i)).collect();
        Dual {
            re: self.re + rhs.re,
            eps,
        }
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Dual<T>;
    fn sub(self, rhs: Dual<T>) -> Dual<T> {
        let n = self.eps.len().max(rhs.eps.len());
        let eps = (0..n).map(|i| self.eps_at(i) - rhs.eps_at(i)).collect();
        Dual {
            re: self.re - rhs.re,
            eps,
        }
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Dual<T>;
    // The product rule mixes + into the tangent update.
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn mul(self, rhs: Dual<T>) -> Dual<T> {
        let n = self.eps.len().max(rhs.eps.len());
        let eps = (0..n)
            .map(|i| self.eps_at(i) * rhs.re.clone() + self.re.clone() * rhs.eps_at(i))
            .collect();
        Dual {
            re: self.re * rhs.re,
            eps,
        }
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Dual<T>;
    fn div(self, rhs: Dual<T>) -> Dual<T> {
        let inv_d2 = T::one() / (rhs.re.clone() * rhs.re.clone());
        let n = self.eps.len().max(rhs.eps.len());
        let eps = (0..n)
            .map(|i| {
                (self.eps_at(i) * rhs.re.clone() - self.re.clone() * rhs.eps_at(i)) * inv_d2.clone()
            })
            .collect();
        Dual {
            re: self.re / rhs.re,
            eps,
        }
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Dual<T>;
    fn neg(self) -> Dual<T> {
        Dual {
            re: -self.re,
            eps: self.eps.into_iter().map(|e| -e).collect(),
        }
    }
}

impl<T: Scalar> fmt::Display for Dual<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.re.value())
    }
}

/// Monomorphic evaluation surface for dynamically dispatched fields.
///
/// Implemented for free on everything that implements [`GenericField`]; the
/// four entry points let generic code re-enter `dyn Field` at its own
/// derivative level through [`Scalar::eval_field`].
pub trait Field: Send + Sync {
    /// Number of input slots the field expects.
    fn dim(&self) -> usize;
    fn eval_f64(&self, x: &[f64]) -> Result<f64, EvalError>;
    fn eval_d1(&self, x: &[D1]) -> Result<D1, EvalError>;
    fn eval_d2(&self, x: &[D2]) -> Result<D2, EvalError>;
    fn eval_d3(&self, x: &[D3]) -> Result<D3, EvalError>;
}

/// A scalar field written once, generically over the scalar level.
pub trait GenericField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> Result<S, EvalError>;
}

impl<F: GenericField> Field for F {
    fn dim(&self) -> usize {
        GenericField::dim(self)
    }
    fn eval_f64(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.eval_generic(x)
    }
    fn eval_d1(&self, x: &[D1]) -> Result<D1, EvalError> {
        self.eval_generic(x)
    }
    fn eval_d2(&self, x: &[D2]) -> Result<D2, EvalError> {
        self.eval_generic(x)
    }
    fn eval_d3(&self, x: &[D3]) -> Result<D3, EvalError> {
        self.eval_generic(x)
    }
}

/// Numeric scalar usable at every point of the pipeline: `f64` or a nested
/// dual level. Domain-restricted functions return `Result` so evaluation
/// aborts instead of propagating NaN.
pub trait Scalar:
    Clone
    + fmt::Debug
    + Send
    + Sync
    + Sized
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    /// One more derivative level on top of `Self` (saturates at the cap).
    type Lifted: Scalar;

    fn from_f64(v: f64) -> Self;
    /// Primal value, all tangent levels stripped.
    fn value(&self) -> f64;
    /// Embed as a constant of the lifted level.
    fn lift(&self) -> Self::Lifted;
    /// Evaluate a dynamically dispatched field at this scalar level.
    fn eval_field(f: &dyn Field, x: &[Self]) -> Result<Self, EvalError>;
    /// Forward-mode gradient of `f` at `x`, one level up internally.
    fn gradient_of(f: &dyn Field, x: &[Self]) -> Result<Vec<Self>, EvalError>;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn sqrt(&self) -> Result<Self, EvalError>;
    fn ln(&self) -> Result<Self, EvalError>;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;

    /// Integer power by repeated multiplication (exact product rule).
    fn powi(&self, k: i32) -> Self {
        if k == 0 {
            return Self::one();
        }
        let mut acc = self.clone();
        for _ in 1..k.unsigned_abs() {
            acc = acc * self.clone();
        }
        if k < 0 {
            Self::one() / acc
        } else {
            acc
        }
    }

    /// General power through `exp(e ln b)`; requires a positive base.
    fn powf(&self, e: &Self) -> Result<Self, EvalError> {
        Ok((e.clone() * self.ln()?).exp())
    }

    /// Branch-selected minimum (tangents follow the chosen branch).
    fn min2(self, other: Self) -> Self {
        if self.value() <= other.value() {
            self
        } else {
            other
        }
    }
    fn max2(self, other: Self) -> Self {
        if self.value() >= other.value() {
            self
        } else {
            other
        }
    }
}

impl Scalar for f64 {
    type Lifted = D1;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn lift(&self) -> D1 {
        Dual::constant(*self)
    }
    fn eval_field(f: &dyn Field, x: &[Self]) -> Result<Self, EvalError> {
        f.eval_f64(x)
    }
    fn gradient_of(f: &dyn Field, x: &[Self]) -> Result<Vec<Self>, EvalError> {
        let n = x.len();
        let seeds: Vec<D1> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual::seeded(v, i, n))
            .collect();
        let out = f.eval_d1(&seeds)?;
        Ok((0..n).map(|i| out.eps_at(i)).collect())
    }

    fn sqrt(&self) -> Result<Self, EvalError> {
        if *self < 0.0 {
            return Err(EvalError::domain("sqrt of a negative number"));
        }
        Ok(f64::sqrt(*self))
    }
    fn ln(&self) -> Result<Self, EvalError> {
        if *self <= 0.0 {
            return Err(EvalError::domain("log of a non-positive number"));
        }
        Ok(f64::ln(*self))
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn powi(&self, k: i32) -> Self {
        f64::powi(*self, k)
    }
}

macro_rules! impl_dual_scalar {
    ($ty:ty, $inner:ty, $eval:ident, $lifted:ty, $eval_lifted:ident) => {
        impl Scalar for $ty {
            type Lifted = $lifted;

            fn from_f64(v: f64) -> Self {
                Dual::constant(<$inner>::from_f64(v))
            }
            fn value(&self) -> f64 {
                self.re.value()
            }
            fn lift(&self) -> Self::Lifted {
                Dual::constant(self.clone())
            }
            fn eval_field(f: &dyn Field, x: &[Self]) -> Result<Self, EvalError> {
                f.$eval(x)
            }
            fn gradient_of(f: &dyn Field, x: &[Self]) -> Result<Vec<Self>, EvalError> {
                let n = x.len();
                let seeds: Vec<Self::Lifted> = x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| Dual::seeded(v.clone(), i, n))
                    .collect();
                let out = f.$eval_lifted(&seeds)?;
                Ok((0..n).map(|i| out.eps_at(i)).collect())
            }

            fn sqrt(&self) -> Result<Self, EvalError> {
                let root = Scalar::sqrt(&self.re)?;
                let half = <$inner>::from_f64(0.5) / root.clone();
                Ok(Dual {
                    eps: self.map_eps(|e| e.clone() * half.clone()),
                    re: root,
                })
            }
            fn ln(&self) -> Result<Self, EvalError> {
                let re = Scalar::ln(&self.re)?;
                let inv = <$inner>::one() / self.re.clone();
                Ok(Dual {
                    re,
                    eps: self.map_eps(|e| e.clone() * inv.clone()),
                })
            }
            fn sin(&self) -> Self {
                let d = Scalar::cos(&self.re);
                Dual {
                    re: Scalar::sin(&self.re),
                    eps: self.map_eps(|e| e.clone() * d.clone()),
                }
            }
            fn cos(&self) -> Self {
                let d = -Scalar::sin(&self.re);
                Dual {
                    re: Scalar::cos(&self.re),
                    eps: self.map_eps(|e| e.clone() * d.clone()),
                }
            }
            fn exp(&self) -> Self {
                let re = Scalar::exp(&self.re);
                Dual {
                    eps: self.map_eps(|e| e.clone() * re.clone()),
                    re,
                }
            }
        }
    };
}

impl_dual_scalar!(D1, f64, eval_d1, D2, eval_d2);
impl_dual_scalar!(D2, D1, eval_d2, D3, eval_d3);

// Terminal level: lifting saturates, one more gradient is a depth error.
impl Scalar for D3 {
    type Lifted = D3;

    fn from_f64(v: f64) -> Self {
        Dual::constant(D2::from_f64(v))
    }
    fn value(&self) -> f64 {
        self.re.value()
    }
    fn lift(&self) -> D3 {
        self.clone()
    }
    fn eval_field(f: &dyn Field, x: &[Self]) -> Result<Self, EvalError> {
        f.eval_d3(x)
    }
    fn gradient_of(_f: &dyn Field, _x: &[Self]) -> Result<Vec<Self>, EvalError> {
        Err(EvalError::DepthExceeded)
    }

    fn sqrt(&self) -> Result<Self, EvalError> {
        let root = self.re.sqrt()?;
        let half = D2::from_f64(0.5) / root.clone();
        Ok(Dual {
            eps: self.map_eps(|e| e.clone() * half.clone()),
            re: root,
        })
    }
    fn ln(&self) -> Result<Self, EvalError> {
        let re = self.re.ln()?;
        let inv = D2::one() / self.re.clone();
        Ok(Dual {
            re,
            eps: self.map_eps(|e| e.clone() * inv.clone()),
        })
    }
    fn sin(&self) -> Self {
        let d = self.re.cos();
        Dual {
            re: self.re.sin(),
            eps: self.map_eps(|e| e.clone() * d.clone()),
        }
    }
    fn cos(&self) -> Self {
        let d = -self.re.sin();
        Dual {
            re: self.re.cos(),
            eps: self.map_eps(|e| e.clone() * d.clone()),
        }
    }
    fn exp(&self) -> Self {
        let re = self.re.exp();
        Dual {
            eps: self.map_eps(|e| e.clone() * re.clone()),
            re,
        }
    }
}

/// `1 / (2 sqrt(1 + p^2))`, the saturation weight used by the damping
/// feedbacks and the built-in manipulator fields. Total and smooth.
pub fn angle<S: Scalar>(p: S) -> S {
    let one = S::one();
    let root = (one.clone() + p.clone() * p)
        .sqrt()
        .expect("1 + p^2 is nonnegative");
    one / (S::from_f64(2.0) * root)
}
