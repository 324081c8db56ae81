//! One-variable monotone piecewise-cubic envelopes.
//!
//! These carry every scalar bound the synthesis pipeline builds: the radial
//! class-K-infinity sandwiches, the margin functions, the damping gain
//! tables and the constructed `delta`. Interpolation is shape-preserving
//! cubic Hermite (PCHIP slopes unless explicit slopes are supplied), so
//! evaluation is C1 and never overshoots the knot values.
//!
//! Bounds that vanish at zero (class-K sandwiches, kernel margins, the
//! mixing weight) interpolate in log-log coordinates instead: power laws
//! are then reproduced exactly, which keeps a sampled lower bound below a
//! convex function near the origin where linear-space cubics overshoot.
//! Log-log envelopes continue as power laws on both sides of the grid;
//! linear-space envelopes continue linearly (flat when nonincreasing).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Monotonicity {
    NonDecreasing,
    NonIncreasing,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Scale {
    /// Hermite segments on `(s, v)`; linear tail.
    Linear,
    /// Hermite segments on `(ln s, ln v)` for positive knots; the value at
    /// `s = 0` is pinned to 0 and both tails are power laws. `slopes` hold
    /// log-log derivatives (slot 0 is the left power exponent).
    LogLog,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonotoneEnvelope {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    monotonicity: Monotonicity,
    class_kinf: bool,
    tail_slope: f64,
    scale: Scale,
}

impl MonotoneEnvelope {
    /// Interpolating envelope through `(knots, values)` with PCHIP slopes.
    /// The grid must start at 0 and increase strictly.
    pub fn interpolating(
        knots: Vec<f64>,
        values: Vec<f64>,
        monotonicity: Monotonicity,
    ) -> Result<Self> {
        validate_grid(&knots, &values)?;
        check_monotone(&values, monotonicity)?;
        let slopes = pchip_slopes(&knots, &values);
        let tail_slope = match monotonicity {
            // Nonincreasing envelopes must stay positive: continue flat.
            Monotonicity::NonIncreasing => 0.0,
            Monotonicity::NonDecreasing => slopes.last().unwrap().max(0.0),
            Monotonicity::None => *slopes.last().unwrap(),
        };
        Ok(MonotoneEnvelope {
            knots,
            values,
            slopes,
            monotonicity,
            class_kinf: false,
            tail_slope,
            scale: Scale::Linear,
        })
    }

    /// Hermite envelope with caller-supplied knot slopes (used where an
    /// analytic derivative is available, e.g. integrals of known
    /// integrands).
    pub fn with_slopes(
        knots: Vec<f64>,
        values: Vec<f64>,
        slopes: Vec<f64>,
        monotonicity: Monotonicity,
    ) -> Result<Self> {
        validate_grid(&knots, &values)?;
        if slopes.len() != knots.len() {
            return Err(Error::Dimension {
                what: "envelope slopes".into(),
                expected: knots.len(),
                got: slopes.len(),
            });
        }
        let tail_slope = match monotonicity {
            Monotonicity::NonIncreasing => 0.0,
            _ => *slopes.last().expect("nonempty"),
        };
        Ok(MonotoneEnvelope {
            knots,
            values,
            slopes,
            monotonicity,
            class_kinf: false,
            tail_slope,
            scale: Scale::Linear,
        })
    }

    /// Class-K-infinity envelope in log-log coordinates: value 0 at 0,
    /// strictly increasing positive values, power-law growth on both ends.
    pub fn class_kinf(knots: Vec<f64>, mut values: Vec<f64>) -> Result<Self> {
        validate_grid(&knots, &values)?;
        values[0] = 0.0;
        if values[1..].iter().any(|&v| v <= 0.0) {
            return Err(Error::Invalid(
                "class-K envelope needs positive values away from 0".into(),
            ));
        }
        for i in 2..values.len() {
            let floor = values[i - 1] * (1.0 + 1e-9);
            if values[i] < floor {
                values[i] = floor;
            }
        }
        let (slopes, tail) = loglog_slopes(&knots, &values);
        // Tail power: the local PCHIP slope when healthy, else the global
        // secant power (sampling noise can flatten the hull at the edge).
        let k = knots.len() - 1;
        let secant = if k > 1 {
            (values[k].ln() - values[1].ln()) / (knots[k].ln() - knots[1].ln())
        } else {
            1.0
        };
        let mut env = MonotoneEnvelope {
            knots,
            values,
            slopes,
            monotonicity: Monotonicity::NonDecreasing,
            class_kinf: true,
            tail_slope: tail.max(secant).max(1e-3),
            scale: Scale::LogLog,
        };
        env.slopes[0] = env.slopes[0].max(1e-3);
        Ok(env)
    }

    /// Positive-definite envelope (0 at 0, positive elsewhere, no
    /// monotonicity requirement) in log-log coordinates.
    pub fn positive_definite(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::positive_definite_impl(knots, values, None)
    }

    /// Positive-definite envelope with true derivatives `dv/ds` supplied at
    /// the positive knots (slot 0 ignored).
    pub fn positive_definite_with_derivs(
        knots: Vec<f64>,
        values: Vec<f64>,
        derivs: &[f64],
    ) -> Result<Self> {
        Self::positive_definite_impl(knots, values, Some(derivs))
    }

    fn positive_definite_impl(
        knots: Vec<f64>,
        values: Vec<f64>,
        derivs: Option<&[f64]>,
    ) -> Result<Self> {
        validate_grid(&knots, &values)?;
        if values[0] != 0.0 || values[1..].iter().any(|&v| v <= 0.0) {
            return Err(Error::Invalid(
                "positive-definite envelope needs value 0 at 0 and positive values elsewhere"
                    .into(),
            ));
        }
        let (mut slopes, mut tail) = loglog_slopes(&knots, &values);
        if let Some(d) = derivs {
            if d.len() != knots.len() {
                return Err(Error::Dimension {
                    what: "envelope derivatives".into(),
                    expected: knots.len(),
                    got: d.len(),
                });
            }
            // Convert dv/ds to d(ln v)/d(ln s).
            for k in 1..knots.len() {
                slopes[k] = d[k] * knots[k] / values[k];
            }
            tail = *slopes.last().unwrap();
            // Extend left of the first knot with its supplied local power.
            slopes[0] = slopes[1];
        }
        slopes[0] = slopes[0].max(1e-3);
        Ok(MonotoneEnvelope {
            knots,
            values,
            slopes,
            monotonicity: Monotonicity::None,
            class_kinf: false,
            tail_slope: tail,
            scale: Scale::LogLog,
        })
    }

    /// Envelope identically equal to `c`.
    pub fn constant(c: f64) -> Self {
        MonotoneEnvelope {
            knots: vec![0.0, 1.0],
            values: vec![c, c],
            slopes: vec![0.0, 0.0],
            monotonicity: Monotonicity::None,
            class_kinf: false,
            tail_slope: 0.0,
            scale: Scale::Linear,
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn monotonicity(&self) -> Monotonicity {
        self.monotonicity
    }

    pub fn is_class_kinf(&self) -> bool {
        self.class_kinf
    }

    fn segment(&self, s: f64) -> usize {
        let k = self.knots.partition_point(|&k| k <= s);
        k.saturating_sub(1).min(self.knots.len() - 2)
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.eval_s(s)
    }

    /// Generic evaluation: the segment is selected by the value part, then
    /// evaluated in `S` arithmetic so tangents carry the exact derivative
    /// of the interpolant.
    pub fn eval_s<S: Scalar>(&self, s: S) -> S {
        match self.scale {
            Scale::Linear => self.eval_linear(s),
            Scale::LogLog => self.eval_loglog(s),
        }
    }

    fn eval_linear<S: Scalar>(&self, s: S) -> S {
        let sv = s.value();
        let last = self.knots.len() - 1;
        if sv >= self.knots[last] {
            let v = S::from_f64(self.values[last]);
            let d = S::from_f64(self.tail_slope);
            return v + d * (s - S::from_f64(self.knots[last]));
        }
        if sv <= self.knots[0] {
            let v = S::from_f64(self.values[0]);
            let d = S::from_f64(self.slopes[0]);
            return v + d * (s - S::from_f64(self.knots[0]));
        }
        let k = self.segment(sv);
        let h = self.knots[k + 1] - self.knots[k];
        let t = (s - S::from_f64(self.knots[k])) / S::from_f64(h);
        hermite(
            t,
            self.values[k],
            h * self.slopes[k],
            self.values[k + 1],
            h * self.slopes[k + 1],
        )
    }

    fn eval_loglog<S: Scalar>(&self, s: S) -> S {
        let sv = s.value();
        if sv <= 0.0 {
            return S::zero();
        }
        let ln_s = s.ln().expect("positive by branch");
        let last = self.knots.len() - 1;
        let power_from = |anchor: usize, p: f64, ln_s: S| -> S {
            // v_a * (s / s_a)^p
            let shift = ln_s - S::from_f64(self.knots[anchor].ln());
            (S::from_f64(p) * shift + S::from_f64(self.values[anchor].ln())).exp()
        };
        if sv >= self.knots[last] {
            return power_from(last, self.tail_slope, ln_s);
        }
        if sv <= self.knots[1] {
            return power_from(1, self.slopes[0], ln_s);
        }
        let k = self.segment(sv).max(1);
        let h = self.knots[k + 1].ln() - self.knots[k].ln();
        let t = (ln_s - S::from_f64(self.knots[k].ln())) / S::from_f64(h);
        hermite(
            t,
            self.values[k].ln(),
            h * self.slopes[k],
            self.values[k + 1].ln(),
            h * self.slopes[k + 1],
        )
        .exp()
    }

    /// Derivative of the interpolant.
    pub fn deriv(&self, s: f64) -> f64 {
        match self.scale {
            Scale::Linear => {
                let last = self.knots.len() - 1;
                if s >= self.knots[last] {
                    return self.tail_slope;
                }
                if s <= self.knots[0] {
                    return self.slopes[0];
                }
                let k = self.segment(s);
                let h = self.knots[k + 1] - self.knots[k];
                let t = (s - self.knots[k]) / h;
                hermite_deriv(
                    t,
                    self.values[k],
                    self.slopes[k],
                    self.values[k + 1],
                    self.slopes[k + 1],
                    h,
                )
            }
            Scale::LogLog => {
                if s <= 0.0 {
                    return 0.0;
                }
                // dv/ds = v * dL/d(ln s) / s.
                let log_slope = {
                    let last = self.knots.len() - 1;
                    if s >= self.knots[last] {
                        self.tail_slope
                    } else if s <= self.knots[1] {
                        self.slopes[0]
                    } else {
                        let k = self.segment(s).max(1);
                        let h = self.knots[k + 1].ln() - self.knots[k].ln();
                        let t = (s.ln() - self.knots[k].ln()) / h;
                        hermite_deriv(
                            t,
                            self.values[k].ln(),
                            self.slopes[k],
                            self.values[k + 1].ln(),
                            self.slopes[k + 1],
                            h,
                        )
                    }
                };
                self.eval(s) * log_slope / s
            }
        }
    }

    /// Inverse of a nondecreasing envelope by bisection (pseudo-inverse on
    /// flat stretches: the leftmost preimage).
    pub fn invert(&self, y: f64) -> f64 {
        debug_assert!(matches!(self.monotonicity, Monotonicity::NonDecreasing));
        let last = self.knots.len() - 1;
        if y <= self.values[0] {
            return self.knots[0];
        }
        let v_last = self.values[last];
        if y >= v_last {
            return match self.scale {
                Scale::Linear => {
                    if self.tail_slope > 0.0 {
                        self.knots[last] + (y - v_last) / self.tail_slope
                    } else {
                        self.knots[last]
                    }
                }
                Scale::LogLog => {
                    // s = s_K (y / v_K)^(1/p).
                    self.knots[last] * (y / v_last).powf(1.0 / self.tail_slope)
                }
            };
        }
        let (mut lo, mut hi) = match self.scale {
            Scale::Linear => (self.knots[0], self.knots[last]),
            Scale::LogLog => {
                if y <= self.values[1] {
                    // Left power-law: s = s_1 (y / v_1)^(1/p).
                    return self.knots[1] * (y / self.values[1]).powf(1.0 / self.slopes[0]);
                }
                (self.knots[1], self.knots[last])
            }
        };
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * (1.0 + hi.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Scale all values by a positive factor.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= factor;
        }
        match out.scale {
            // Log-log slopes are scale-invariant.
            Scale::LogLog => {}
            Scale::Linear => {
                for d in &mut out.slopes {
                    *d *= factor;
                }
                out.tail_slope *= factor;
            }
        }
        out
    }

    /// Pointwise minimum with another envelope, resampled on this grid.
    pub fn min_with(&self, other: &MonotoneEnvelope) -> Result<Self> {
        let values = self
            .knots
            .iter()
            .map(|&s| self.eval(s).min(other.eval(s)))
            .collect();
        MonotoneEnvelope::interpolating(self.knots.clone(), values, Monotonicity::None)
    }
}

fn hermite<S: Scalar>(t: S, v0: f64, m0: f64, v1: f64, m1: f64) -> S {
    let t2 = t.clone() * t.clone();
    let t3 = t2.clone() * t.clone();
    let two = S::from_f64(2.0);
    let three = S::from_f64(3.0);
    let h00 = two.clone() * t3.clone() - three.clone() * t2.clone() + S::one();
    let h10 = t3.clone() - two.clone() * t2.clone() + t;
    let h01 = -(two * t3.clone()) + three * t2.clone();
    let h11 = t3 - t2;
    h00 * S::from_f64(v0) + h10 * S::from_f64(m0) + h01 * S::from_f64(v1) + h11 * S::from_f64(m1)
}

fn hermite_deriv(t: f64, v0: f64, d0: f64, v1: f64, d1: f64, h: f64) -> f64 {
    let t2 = t * t;
    let d00 = (6.0 * t2 - 6.0 * t) / h;
    let d10 = 3.0 * t2 - 4.0 * t + 1.0;
    let d01 = (-6.0 * t2 + 6.0 * t) / h;
    let d11 = 3.0 * t2 - 2.0 * t;
    d00 * v0 + d10 * d0 + d01 * v1 + d11 * d1
}

fn validate_grid(knots: &[f64], values: &[f64]) -> Result<()> {
    if knots.len() < 2 || values.len() != knots.len() {
        return Err(Error::Invalid(
            "envelope needs matching knots/values with at least two points".into(),
        ));
    }
    if knots[0] != 0.0 {
        return Err(Error::Invalid("envelope grid must start at 0".into()));
    }
    if knots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid(
            "envelope grid must increase strictly".into(),
        ));
    }
    if knots.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("envelope data must be finite".into()));
    }
    Ok(())
}

fn check_monotone(values: &[f64], m: Monotonicity) -> Result<()> {
    let ok = match m {
        Monotonicity::NonDecreasing => values.windows(2).all(|w| w[1] >= w[0]),
        Monotonicity::NonIncreasing => values.windows(2).all(|w| w[1] <= w[0]),
        Monotonicity::None => true,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "envelope values violate declared monotonicity {m:?}"
        )))
    }
}

/// PCHIP slopes in log-log coordinates over the positive knots; returns
/// `(slopes, tail)` where `slopes[0]` is the left power exponent and
/// `tail` the right one.
fn loglog_slopes(knots: &[f64], values: &[f64]) -> (Vec<f64>, f64) {
    let ls: Vec<f64> = knots[1..].iter().map(|s| f64::ln(*s)).collect();
    let lv: Vec<f64> = values[1..].iter().map(|v| f64::ln(*v)).collect();
    if ls.len() == 1 {
        // Single positive knot: assume linear growth through the origin.
        return (vec![1.0, 1.0], 1.0);
    }
    let inner = pchip_slopes(&ls, &lv);
    let mut slopes = Vec::with_capacity(knots.len());
    slopes.push(inner[0]);
    slopes.extend(&inner);
    let tail = *inner.last().unwrap();
    (slopes, tail)
}

/// Fritsch-Carlson shape-preserving slopes.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = y
        .windows(2)
        .zip(&h)
        .map(|(w, &hi)| (w[1] - w[0]) / hi)
        .collect();
    let mut d = vec![0.0; n];
    if n == 2 {
        d[0] = delta[0];
        d[1] = delta[0];
        return d;
    }
    for k in 1..n - 1 {
        let (s1, s2) = (delta[k - 1], delta[k]);
        if s1 == 0.0 || s2 == 0.0 || s1.signum() != s2.signum() {
            d[k] = 0.0;
        } else {
            let (h1, h2) = (h[k - 1], h[k]);
            let w1 = 2.0 * h2 + h1;
            let w2 = h2 + 2.0 * h1;
            d[k] = (w1 + w2) / (w1 / s1 + w2 / s2);
        }
    }
    d[0] = endpoint_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = endpoint_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn endpoint_slope(h0: f64, h1: f64, s0: f64, s1: f64) -> f64 {
    let mut d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if d.signum() != s0.signum() {
        d = 0.0;
    } else if s0.signum() != s1.signum() && d.abs() > 3.0 * s0.abs() {
        d = 3.0 * s0;
    }
    d
}

/// Running-max hull: nondecreasing and everywhere at or above the samples
/// (safe side for upper bounds).
pub fn nondecreasing_upper_hull(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    for i in 1..out.len() {
        out[i] = out[i].max(out[i - 1]);
    }
    out
}

/// Right-to-left running min: nondecreasing and everywhere at or below the
/// samples (safe side for lower bounds).
pub fn nondecreasing_lower_hull(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    for i in (0..out.len() - 1).rev() {
        out[i] = out[i].min(out[i + 1]);
    }
    out
}

/// Left-to-right running min: nonincreasing and at or below the samples.
pub fn nonincreasing_lower_hull(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    for i in 1..out.len() {
        out[i] = out[i].min(out[i - 1]);
    }
    out
}

/// Safety inflation toward larger values: +10% of magnitude.
pub fn inflate(v: f64) -> f64 {
    v + 0.1 * v.abs()
}

/// Safety deflation toward smaller values: -10% of magnitude.
pub fn deflate(v: f64) -> f64 {
    v - 0.1 * v.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{Dual, D1};

    #[test]
    fn linear_data_reproduced() {
        let e = MonotoneEnvelope::interpolating(
            vec![0.0, 1.0, 2.0],
            vec![0.0, 1.0, 2.0],
            Monotonicity::NonDecreasing,
        )
        .unwrap();
        assert!((e.eval(1.5) - 1.5).abs() < 1e-12);
        assert!((e.eval(3.0) - 3.0).abs() < 1e-12, "linear tail");
        assert!((e.deriv(0.7) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_laws_are_exact_in_class_kinf() {
        // Quadratic and square-root data on a coarse geometric grid.
        for p in [0.5, 1.0, 2.0, 3.0] {
            let knots: Vec<f64> = std::iter::once(0.0)
                .chain((0..9).map(|i| 0.01 * 3.0f64.powi(i)))
                .collect();
            let values: Vec<f64> = knots.iter().map(|s| f64::powf(*s, p)).collect();
            let e = MonotoneEnvelope::class_kinf(knots, values).unwrap();
            for &s in &[1e-4, 0.004, 0.1, 2.7, 40.0, 1e4] {
                let got = e.eval(s);
                let expect = s.powf(p);
                assert!(
                    (got - expect).abs() <= 1e-9 * expect,
                    "p={p} s={s}: {got} vs {expect}"
                );
            }
            assert_eq!(e.eval(0.0), 0.0);
        }
    }

    #[test]
    fn loglog_never_overshoots_convex_lower_bound() {
        // A deflated quadratic sampled on a uniform grid must stay below
        // the true quadratic everywhere, including near 0.
        let knots: Vec<f64> = (0..33).map(|i| 10.0 * i as f64 / 32.0).collect();
        let values: Vec<f64> = knots.iter().map(|s| 0.9 * 0.5 * s * s).collect();
        let e = MonotoneEnvelope::class_kinf(knots, values).unwrap();
        for i in 1..20000 {
            let s = 10.0 * i as f64 / 20000.0;
            assert!(
                e.eval(s) <= 0.5 * s * s + 1e-12,
                "overshoot at s = {s}: {} vs {}",
                e.eval(s),
                0.5 * s * s
            );
        }
    }

    #[test]
    fn quadratic_monotone_interpolation_stays_in_range() {
        let knots: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let values: Vec<f64> = knots.iter().map(|s| s * s).collect();
        let e =
            MonotoneEnvelope::interpolating(knots, values, Monotonicity::NonDecreasing).unwrap();
        for i in 0..80 {
            let s = 0.1 * i as f64;
            let v = e.eval(s);
            assert!(v >= s.floor().powi(2) - 1e-12 && v <= s.ceil().powi(2) + 1e-12);
        }
    }

    #[test]
    fn dual_eval_matches_deriv_linear_and_loglog() {
        let lin = MonotoneEnvelope::interpolating(
            vec![0.0, 0.5, 1.3, 2.0],
            vec![0.0, 0.3, 0.9, 1.0],
            Monotonicity::NonDecreasing,
        )
        .unwrap();
        let log = MonotoneEnvelope::class_kinf(
            vec![0.0, 0.5, 1.3, 2.0, 4.0],
            vec![0.0, 0.3, 0.9, 1.4, 3.0],
        )
        .unwrap();
        for e in [&lin, &log] {
            for &s in &[0.2, 0.6, 1.9, 2.5, 5.0] {
                let d: D1 = e.eval_s(Dual::seeded(s, 0, 1));
                assert!((d.re - e.eval(s)).abs() < 1e-13 * (1.0 + e.eval(s).abs()));
                assert!(
                    (d.eps[0] - e.deriv(s)).abs() < 1e-10 * (1.0 + e.deriv(s).abs()),
                    "s={s}: {} vs {}",
                    d.eps[0],
                    e.deriv(s)
                );
            }
        }
    }

    #[test]
    fn inversion_round_trip() {
        let knots: Vec<f64> = (0..33).map(|i| 0.25 * i as f64).collect();
        let values: Vec<f64> = knots.iter().map(|s| s * s + 0.1 * s).collect();
        let e = MonotoneEnvelope::class_kinf(knots, values).unwrap();
        for &y in &[1e-6, 0.01, 0.5, 3.0, 40.0, 100.0, 1e5] {
            let s = e.invert(y);
            assert!((e.eval(s) - y).abs() < 1e-8 * (1.0 + y), "y={y} s={s}");
        }
        assert_eq!(e.invert(0.0), 0.0);
    }

    #[test]
    fn class_kinf_requirements() {
        let e = MonotoneEnvelope::class_kinf(vec![0.0, 1.0, 2.0], vec![0.1, 1.0, 1.0]).unwrap();
        assert_eq!(e.eval(0.0), 0.0);
        assert!(e.values()[1..].windows(2).all(|w| w[1] > w[0]));
        assert!(e.eval(100.0) > e.eval(50.0), "unbounded growth");
        assert!(e.eval(1e9) > e.eval(1e6), "strictly growing tail");
    }

    #[test]
    fn positive_definite_with_derivs_matches() {
        // delta-like table: v = s^2 exp(-s) clipped positive, derivative
        // supplied exactly.
        let knots: Vec<f64> = std::iter::once(0.0)
            .chain((0..12).map(|i| 0.05 * 1.8f64.powi(i)))
            .collect();
        let f = |s: f64| s * s * (-s).exp();
        let df = |s: f64| (2.0 * s - s * s) * (-s).exp();
        let values: Vec<f64> = knots.iter().map(|&s| f(s)).collect();
        let derivs: Vec<f64> = knots.iter().map(|&s| df(s)).collect();
        let e = MonotoneEnvelope::positive_definite_with_derivs(knots.clone(), values, &derivs)
            .unwrap();
        for &s in &knots[1..] {
            assert!((e.deriv(s) - df(s)).abs() < 1e-10 * (1.0 + df(s).abs()));
        }
        // Between knots the interpolant stays close.
        for i in 1..100 {
            let s = 0.04 * i as f64;
            assert!((e.eval(s) - f(s)).abs() < 2e-2 * (1.0 + f(s)), "s={s}");
        }
    }

    #[test]
    fn hulls_are_safe_sided() {
        let v = [3.0, 1.0, 2.0, 1.5];
        assert_eq!(nondecreasing_upper_hull(&v), vec![3.0, 3.0, 3.0, 3.0]);
        assert_eq!(nondecreasing_lower_hull(&v), vec![1.0, 1.0, 1.5, 1.5]);
        assert_eq!(nonincreasing_lower_hull(&v), vec![3.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn constant_envelope() {
        let e = MonotoneEnvelope::constant(0.5);
        assert_eq!(e.eval(0.0), 0.5);
        assert_eq!(e.eval(123.0), 0.5);
    }

    #[test]
    fn scaled_preserves_shape() {
        let e = MonotoneEnvelope::class_kinf(vec![0.0, 1.0, 2.0, 4.0], vec![0.0, 0.5, 2.0, 8.0])
            .unwrap();
        let h = e.scaled(0.5);
        for &s in &[0.3, 1.0, 3.0, 10.0] {
            assert!((h.eval(s) - 0.5 * e.eval(s)).abs() < 1e-12 * (1.0 + e.eval(s)));
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(MonotoneEnvelope::interpolating(
            vec![1.0, 2.0],
            vec![0.0, 1.0],
            Monotonicity::None
        )
        .is_err());
        assert!(MonotoneEnvelope::interpolating(
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            Monotonicity::None
        )
        .is_err());
        assert!(MonotoneEnvelope::interpolating(
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            Monotonicity::NonDecreasing
        )
        .is_err());
    }
}
