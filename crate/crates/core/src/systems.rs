//! Control-system containers, affine-data extraction, mechanical
//! (Hamiltonian) construction, and the built-in benchmark systems.
//!
//! Built-ins are hard-coded closed forms, not parsed expressions: they act
//! as ground truth for the parser + autodiff path.

use crate::error::{Error, EvalError, Result};
use crate::field::{ScalarField, VectorField};
use crate::quad;
use crate::sampling::{streams, Rng};
use crate::scalar::{angle, GenericField, Scalar};
use std::sync::Arc;

/// `xdot = f(x) + sum_k g_k(x) u_k`.
#[derive(Clone, Debug)]
pub struct ControlAffineSystem {
    drift: VectorField,
    input_columns: Vec<VectorField>,
}

impl ControlAffineSystem {
    /// Validates dimensions and the equilibrium `f(0) = 0` (within 1e-12).
    pub fn new(drift: VectorField, input_columns: Vec<VectorField>) -> Result<Self> {
        let n = drift.len();
        if drift.dim() != n {
            return Err(Error::Dimension {
                what: "drift".into(),
                expected: n,
                got: drift.dim(),
            });
        }
        for col in &input_columns {
            if col.len() != n || col.dim() != n {
                return Err(Error::Dimension {
                    what: "input column".into(),
                    expected: n,
                    got: col.len(),
                });
            }
        }
        let origin = vec![0.0; n];
        let f0 = drift.eval(&origin).map_err(Error::Eval)?;
        if let Some((i, &v)) = f0.iter().enumerate().find(|(_, v)| v.abs() > 1e-12) {
            return Err(Error::Invalid(format!(
                "drift component {i} is {v:.3e} at the origin (must vanish)"
            )));
        }
        Ok(ControlAffineSystem {
            drift,
            input_columns,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.drift.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_columns.len()
    }

    pub fn drift(&self) -> &VectorField {
        &self.drift
    }

    pub fn input_column(&self, k: usize) -> &VectorField {
        &self.input_columns[k]
    }

    pub fn input_columns(&self) -> &[VectorField] {
        &self.input_columns
    }

    /// Right-hand side at `(x, u)`.
    pub fn rhs(&self, x: &[f64], u: &[f64]) -> std::result::Result<Vec<f64>, EvalError> {
        let mut out = self.drift.eval(x)?;
        for (col, &uk) in self.input_columns.iter().zip(u) {
            let g = col.eval(x)?;
            for (o, gi) in out.iter_mut().zip(g) {
                *o += gi * uk;
            }
        }
        Ok(out)
    }
}

/// `xdot = F(x, u)` with `F` C1 and C2 in `u`; component fields live on
/// `n + m` slots (state then input).
#[derive(Clone, Debug)]
pub struct FullyNonlinearSystem {
    components: Vec<ScalarField>,
    n: usize,
    m: usize,
}

impl FullyNonlinearSystem {
    pub fn new(components: Vec<ScalarField>, n: usize, m: usize) -> Result<Self> {
        if components.len() != n || components.iter().any(|c| c.dim() != n + m) {
            return Err(Error::Dimension {
                what: "dynamics components".into(),
                expected: n + m,
                got: components.first().map(|c| c.dim()).unwrap_or(0),
            });
        }
        let sys = FullyNonlinearSystem { components, n, m };
        let origin = sys.rhs(&vec![0.0; n], &vec![0.0; m]).map_err(Error::Eval)?;
        if let Some((i, &v)) = origin.iter().enumerate().find(|(_, v)| v.abs() > 1e-12) {
            return Err(Error::Invalid(format!(
                "F component {i} is {v:.3e} at (0, 0) (must vanish)"
            )));
        }
        Ok(sys)
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn rhs(&self, x: &[f64], u: &[f64]) -> std::result::Result<Vec<f64>, EvalError> {
        let joint: Vec<f64> = x.iter().chain(u).copied().collect();
        self.components.iter().map(|c| c.eval(&joint)).collect()
    }

    /// Affine data at zero input: `f(x) = F(x, 0)`,
    /// `g(x) = dF/du (x, 0)` by forward-mode differentiation in `u`.
    pub fn extract_affine_data(&self) -> Result<ControlAffineSystem> {
        let zeros = vec![0.0; self.m];
        let drift = VectorField::new(
            self.components
                .iter()
                .map(|c| c.restrict_tail(zeros.clone()))
                .collect::<Result<Vec<_>>>()?,
        )?;
        let mut columns = Vec::with_capacity(self.m);
        for k in 0..self.m {
            let col = VectorField::new(
                self.components
                    .iter()
                    .map(|c| c.tail_slot_derivative(zeros.clone(), self.n + k))
                    .collect::<Result<Vec<_>>>()?,
            )?;
            columns.push(col);
        }
        ControlAffineSystem::new(drift, columns)
    }

    /// Input-direction Jacobian `dF/du` at `(x, u)`, an `n x m` matrix in
    /// row-major nested vectors.
    pub fn input_jacobian(
        &self,
        x: &[f64],
        u: &[f64],
    ) -> std::result::Result<Vec<Vec<f64>>, EvalError> {
        let joint: Vec<f64> = x.iter().chain(u).copied().collect();
        let mut rows = Vec::with_capacity(self.n);
        for c in &self.components {
            let grad = c.gradient(&joint)?;
            rows.push(grad[self.n..].to_vec());
        }
        Ok(rows)
    }

    /// Second-order remainder matrix of the input expansion,
    /// `h(x,u) = int_0^1 [dF/du(x, l u) - dF/du(x, 0)] dl`,
    /// by adaptive Gauss-Legendre quadrature (absolute tolerance 1e-10).
    /// It satisfies `F(x,u) = f(x) + g(x) u + h(x,u) u`.
    pub fn remainder(&self, x: &[f64], u: &[f64]) -> Result<Vec<Vec<f64>>> {
        let at_zero = self
            .input_jacobian(x, &vec![0.0; self.m])
            .map_err(Error::Eval)?;
        let len = self.n * self.m;
        let flat = quad::integrate_vec(
            &|lambda: f64| {
                let scaled: Vec<f64> = u.iter().map(|ui| lambda * ui).collect();
                let jac = self.input_jacobian(x, &scaled)?;
                let mut out = Vec::with_capacity(len);
                for (row, base) in jac.iter().zip(&at_zero) {
                    for (a, b) in row.iter().zip(base) {
                        out.push(a - b);
                    }
                }
                Ok(out)
            },
            0.0,
            1.0,
            1e-10,
            len,
        )?;
        Ok(flat.chunks(self.m).map(|c| c.to_vec()).collect())
    }
}

/// Mechanical data `(M^{-1}(q), P(q))` for a Hamiltonian construction.
/// Takes the inverse inertia directly; [`invert_constant_matrix`] covers
/// the constant-`M` case. An optional `offset` c handles potentials where
/// only `P + c` is positive definite.
#[derive(Clone, Debug)]
pub struct MechanicalData {
    minv: Vec<Vec<ScalarField>>,
    potential: ScalarField,
    offset: f64,
}

impl MechanicalData {
    pub fn new(minv: Vec<Vec<ScalarField>>, potential: ScalarField) -> Result<Self> {
        Self::with_offset(minv, potential, 0.0)
    }

    pub fn with_offset(
        minv: Vec<Vec<ScalarField>>,
        potential: ScalarField,
        offset: f64,
    ) -> Result<Self> {
        let k = minv.len();
        if k == 0
            || minv.iter().any(|row| row.len() != k)
            || minv
                .iter()
                .flatten()
                .chain(std::iter::once(&potential))
                .any(|f| f.dim() != k)
        {
            return Err(Error::Invalid(
                "inverse inertia must be square over the configuration variables".into(),
            ));
        }
        Ok(MechanicalData {
            minv,
            potential,
            offset,
        })
    }

    pub fn dof(&self) -> usize {
        self.minv.len()
    }

    /// Sampled validation: symmetric positive definite `M^{-1}`, shifted
    /// potential vanishing at 0, positive definite with growing sphere
    /// minima, nonvanishing gradient away from 0.
    pub fn validate(&self, radius: f64, samples: u64, seed: u64) -> Result<()> {
        let k = self.dof();
        let origin = vec![0.0; k];
        let p0 = self.potential.eval(&origin).map_err(Error::Eval)? + self.offset;
        if p0.abs() > 1e-12 {
            return Err(Error::Invalid(format!(
                "shifted potential is {p0:.3e} at the origin (must vanish)"
            )));
        }
        let mut prev_min = 0.0;
        let shells = 8u64;
        for shell in 1..=shells {
            let r = radius * shell as f64 / shells as f64;
            let mut shell_min = f64::INFINITY;
            for i in 0..samples.max(32) / shells {
                let mut rng = Rng::at(seed, streams::SYSTEM_CHECK, shell * 1_000_000 + i);
                let q = rng.on_sphere(k, r);
                let m = self.minv_at(&q)?;
                check_spd(&m, &q)?;
                let p = self.potential.eval(&q).map_err(Error::Eval)? + self.offset;
                if p <= 0.0 {
                    return Err(Error::NotPositiveDefinite {
                        what: "shifted potential".into(),
                        value: p,
                        witness: q,
                    });
                }
                let grad = self.potential.gradient(&q).map_err(Error::Eval)?;
                let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if gnorm <= 1e-12 {
                    return Err(Error::Invalid(format!(
                        "potential gradient vanishes away from the origin at {q:?}"
                    )));
                }
                shell_min = shell_min.min(p);
            }
            if shell_min <= prev_min {
                return Err(Error::Invalid(format!(
                    "potential sphere minima stop growing at radius {r:.3e}"
                )));
            }
            prev_min = shell_min;
        }
        Ok(())
    }

    fn minv_at(&self, q: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.minv
            .iter()
            .map(|row| {
                row.iter()
                    .map(|f| f.eval(q).map_err(Error::Eval))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect()
    }
}

/// Cholesky-based symmetric positive-definiteness check.
fn check_spd(m: &[Vec<f64>], witness: &[f64]) -> Result<()> {
    let k = m.len();
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate().take(i) {
            if (v - m[j][i]).abs() > 1e-9 * (1.0 + v.abs()) {
                return Err(Error::Invalid(format!(
                    "inverse inertia asymmetric at {witness:?}"
                )));
            }
        }
    }
    let mut chol = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = m[i][j];
            for (a, b) in chol[i][..j].iter().zip(&chol[j][..j]) {
                s -= a * b;
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::NotPositiveDefinite {
                        what: "inverse inertia".into(),
                        value: s,
                        witness: witness.to_vec(),
                    });
                }
                chol[i][j] = s.sqrt();
            } else {
                chol[i][j] = s / chol[j][j];
            }
        }
    }
    Ok(())
}

/// Gaussian-elimination inverse for a constant inertia matrix.
pub fn invert_constant_matrix(m: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let k = m.len();
    if m.iter().any(|row| row.len() != k) {
        return Err(Error::Invalid("matrix must be square".into()));
    }
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&a1, &a2| a[a1][col].abs().total_cmp(&a[a2][col].abs()))
            .expect("nonempty");
        if a[pivot][col].abs() < 1e-14 {
            return Err(Error::Invalid("matrix is singular".into()));
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for j in 0..k {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for row in 0..k {
            if row != col {
                let factor = a[row][col];
                for j in 0..k {
                    a[row][j] -= factor * a[col][j];
                    inv[row][j] -= factor * inv[col][j];
                }
            }
        }
    }
    Ok(inv)
}

/// Feedback law as componentwise scalar fields `u_k(x)`.
#[derive(Clone, Debug)]
pub struct FeedbackLaw {
    components: Vec<ScalarField>,
}

impl FeedbackLaw {
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        let dim = components.first().map(|c| c.dim()).unwrap_or(0);
        if components.is_empty() || components.iter().any(|c| c.dim() != dim) {
            return Err(Error::Invalid(
                "feedback components must share a dimension".into(),
            ));
        }
        Ok(FeedbackLaw { components })
    }

    pub fn zero(state_dim: usize, input_dim: usize) -> Self {
        FeedbackLaw {
            components: (0..input_dim)
                .map(|_| ScalarField::constant(0.0, state_dim))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn eval(&self, x: &[f64]) -> std::result::Result<Vec<f64>, EvalError> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }
}

// ---------------------------------------------------------------------------
// Hamiltonian construction
// ---------------------------------------------------------------------------

/// Output of [`hamiltonian_system`]: the affine system on `x = (q, p)`, the
/// total-energy Lyapunov function, and the auxiliary direction field
/// `G = (0, grad P)`.
#[derive(Clone, Debug)]
pub struct HamiltonianBundle {
    pub sys: ControlAffineSystem,
    pub v: ScalarField,
    pub g_dir: VectorField,
}

/// Build the controlled Hamiltonian system
/// `qdot = M^{-1}(q) p`, `pdot = -dH/dq + u` with total energy
/// `V = H = p^T M^{-1}(q) p / 2 + P(q) + offset`.
pub fn hamiltonian_system(md: &MechanicalData) -> Result<HamiltonianBundle> {
    md.validate(5.0, 256, 0)?;
    let k = md.dof();
    let n = 2 * k;

    // Energy: sum over the inverse-inertia entries plus the potential.
    let mut energy = md.potential.clone().embed_head(n)?.offset(md.offset);
    for i in 0..k {
        for j in 0..k {
            let term = md.minv[i][j]
                .embed_head(n)?
                .mul(&ScalarField::coordinate(k + i, n))?
                .mul(&ScalarField::coordinate(k + j, n))?
                .scale(0.5);
            energy = energy.add(&term)?;
        }
    }

    // Velocities M^{-1}(q) p, then forces -dH/dq.
    let mut drift_rows = Vec::with_capacity(n);
    for i in 0..k {
        let mut row = ScalarField::constant(0.0, n);
        for j in 0..k {
            row = row.add(
                &md.minv[i][j]
                    .embed_head(n)?
                    .mul(&ScalarField::coordinate(k + j, n))?,
            )?;
        }
        drift_rows.push(row);
    }
    for j in 0..k {
        drift_rows.push(energy.partial(j).neg());
    }
    let drift = VectorField::new(drift_rows)?;

    let columns = (0..k)
        .map(|j| {
            VectorField::new(
                (0..n)
                    .map(|i| ScalarField::constant(f64::from(u8::from(i == k + j)), n))
                    .collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut g_rows: Vec<ScalarField> = (0..k).map(|_| ScalarField::constant(0.0, n)).collect();
    for j in 0..k {
        g_rows.push(md.potential.partial(j).embed_head(n)?);
    }
    let g_dir = VectorField::new(g_rows)?;

    Ok(HamiltonianBundle {
        sys: ControlAffineSystem::new(drift, columns)?,
        v: energy,
        g_dir,
    })
}

/// Smooth rescaling `G_N(x) = V(x)^N G(x)`; preserves the near-kernel
/// negativity property because
/// `L_f L_{G_N} V = N V^{N-1} L_f V L_G V + V^N L_f L_G V`.
pub fn smooth_g(g_dir: &VectorField, v: &ScalarField, power: u32) -> Result<VectorField> {
    if power == 0 {
        return Ok(g_dir.clone());
    }
    let weight = v.powi_field(power as i32);
    g_dir.scale_by(&weight)
}

// ---------------------------------------------------------------------------
// Built-in: planar manipulator (rotating link with a sliding gripper)
// ---------------------------------------------------------------------------

/// Closed-form fields of the built-in manipulator with unit masses and a
/// sqrt(3) link. State: `x1` link angle, `x2` its rate, `x3` gripper
/// position, `x4` its rate.
#[derive(Clone, Copy, Debug)]
enum ManipField {
    /// Raw dynamics row `i` on (x, u): inputs are the joint forces.
    Raw(usize),
    /// Raw dynamics after the gravity-like spring change of input,
    /// `u -> (-x1<x1> + u1, -x3<x3> + u2)`.
    Shifted(usize),
    /// Drift row `i` of the affine form after the change of input.
    Drift(usize),
    /// Input column entries are constants except `g1[1] = 1/(x3^2+1)`.
    GEntry(usize, usize),
    V,
    Vsharp,
    /// Closed-form directional derivative along `G = (0, x1, 0, x3)`.
    LgvDir,
    /// Closed-form `L_f` of [`ManipField::LgvDir`].
    LfLgvDir,
    /// Closed-form kernel rows of the input derivative: `[x2, x4]`.
    LgvRow(usize),
    T(usize),
    /// Damping feedback components `(-x2<x2>, -x4<x4>)`.
    Damping(usize),
    /// Spring plus damping, for the raw inputs.
    Total(usize),
}

fn manip_v<S: Scalar>(x: &[S]) -> std::result::Result<S, EvalError> {
    let one = S::one();
    let x3sq1 = x[2].clone() * x[2].clone() + one.clone();
    let r1 = (one.clone() + x[0].clone() * x[0].clone()).sqrt()?;
    let r3 = (one.clone() + x[2].clone() * x[2].clone()).sqrt()?;
    Ok(S::from_f64(0.5)
        * (x3sq1 * x[1].clone() * x[1].clone() + x[3].clone() * x[3].clone() + r1 + r3
            - S::from_f64(2.0)))
}

impl GenericField for ManipField {
    fn dim(&self) -> usize {
        match self {
            ManipField::Raw(_) | ManipField::Shifted(_) => 6,
            _ => 4,
        }
    }

    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        let one = S::one();
        let x3sq1 = || x[2].clone() * x[2].clone() + one.clone();
        match self {
            ManipField::Raw(i) => Ok(match i {
                0 => x[1].clone(),
                1 => {
                    (x[4].clone() - S::from_f64(2.0) * x[2].clone() * x[1].clone() * x[3].clone())
                        / x3sq1()
                }
                2 => x[3].clone(),
                _ => x[2].clone() * x[1].clone() * x[1].clone() + x[5].clone(),
            }),
            ManipField::Shifted(i) => Ok(match i {
                0 => x[1].clone(),
                1 => {
                    (x[4].clone()
                        - x[0].clone() * angle(x[0].clone())
                        - S::from_f64(2.0) * x[2].clone() * x[1].clone() * x[3].clone())
                        / x3sq1()
                }
                2 => x[3].clone(),
                _ => {
                    x[2].clone() * x[1].clone() * x[1].clone() - x[2].clone() * angle(x[2].clone())
                        + x[5].clone()
                }
            }),
            ManipField::Drift(i) => Ok(match i {
                0 => x[1].clone(),
                1 => {
                    (-(S::from_f64(2.0) * x[2].clone() * x[1].clone() * x[3].clone())
                        - x[0].clone() * angle(x[0].clone()))
                        / x3sq1()
                }
                2 => x[3].clone(),
                _ => {
                    x[1].clone() * x[1].clone() * x[2].clone() - x[2].clone() * angle(x[2].clone())
                }
            }),
            ManipField::GEntry(row, col) => Ok(match (row, col) {
                (1, 0) => {
                    let d = x3sq1();
                    one / d
                }
                (3, 1) => one,
                _ => S::zero(),
            }),
            ManipField::V => manip_v(x),
            ManipField::Vsharp => {
                let v = manip_v(x)?;
                let base = S::from_f64(2.0) + S::from_f64(2.0) * v;
                let lgv = x3sq1() * x[1].clone() * x[0].clone() + x[3].clone() * x[2].clone();
                Ok(S::from_f64(40.0) * base.powi(6) + lgv - S::from_f64(40.0 * 64.0))
            }
            ManipField::LgvDir => {
                Ok(x3sq1() * x[1].clone() * x[0].clone() + x[3].clone() * x[2].clone())
            }
            ManipField::LfLgvDir => {
                let two_x3sq1 = S::from_f64(2.0) * x[2].clone() * x[2].clone() + one;
                Ok(
                    x[1].clone() * x[1].clone() * two_x3sq1 + x[3].clone() * x[3].clone()
                        - x[0].clone() * x[0].clone() * angle(x[0].clone())
                        - x[2].clone() * x[2].clone() * angle(x[2].clone()),
                )
            }
            ManipField::LgvRow(k) => Ok(if *k == 0 { x[1].clone() } else { x[3].clone() }),
            ManipField::T(i) => {
                let v = manip_v(x)?;
                let pow5 = (S::from_f64(2.0) + S::from_f64(2.0) * v).powi(5);
                let half = S::from_f64(0.5);
                if *i == 0 {
                    let r1 = (one.clone() + x[0].clone() * x[0].clone()).sqrt()?;
                    let r2 = (one.clone() + x[1].clone() * x[1].clone()).sqrt()?;
                    let two_x3sq1 = S::from_f64(2.0) * x[2].clone() * x[2].clone() + one;
                    Ok(r1 - S::from_f64(480.0) * pow5 + S::from_f64(2.0) * r2 * two_x3sq1 + half)
                } else {
                    let r3 = (one.clone() + x[2].clone() * x[2].clone()).sqrt()?;
                    let r4 = (one + x[3].clone() * x[3].clone()).sqrt()?;
                    Ok(r3 - S::from_f64(480.0) * pow5 + S::from_f64(2.0) * r4 + half)
                }
            }
            ManipField::Damping(k) => {
                let p = if *k == 0 { x[1].clone() } else { x[3].clone() };
                Ok(-(p.clone() * angle(p)))
            }
            ManipField::Total(k) => {
                let (pos, vel) = if *k == 0 {
                    (x[0].clone(), x[1].clone())
                } else {
                    (x[2].clone(), x[3].clone())
                };
                Ok(-(pos.clone() * angle(pos)) - vel.clone() * angle(vel))
            }
        }
    }
}

/// Everything the built-in manipulator exposes.
#[derive(Clone, Debug)]
pub struct ManipulatorBundle {
    /// Raw dynamics; the inputs are the two joint forces.
    pub raw: FullyNonlinearSystem,
    /// Raw dynamics after the saturated spring change of input.
    pub shifted: FullyNonlinearSystem,
    /// Control-affine form of the shifted dynamics.
    pub affine: ControlAffineSystem,
    pub v: ScalarField,
    /// Auxiliary direction field `G = (0, x1, 0, x3)`.
    pub g_dir: VectorField,
    /// Closed-form `L_G V`.
    pub lgv_dir: ScalarField,
    /// Closed-form `L_f L_G V`.
    pub lf_lgv_dir: ScalarField,
    /// Closed-form input-derivative rows `[x2, x4]`.
    pub lgv_rows: Vec<ScalarField>,
    /// Reference strict Lyapunov function.
    pub vsharp: ScalarField,
    /// Slack fields whose nonpositivity certifies the reference decay.
    pub t1: ScalarField,
    pub t2: ScalarField,
    /// Damping feedback for the affine form; bounded by 1 in norm jointly
    /// with the spring terms.
    pub damping: FeedbackLaw,
    /// Spring plus damping feedback for the raw system.
    pub total_feedback: FeedbackLaw,
}

pub fn builtin_manipulator() -> ManipulatorBundle {
    let sf = |m: ManipField| ScalarField::new(Arc::new(m));
    let raw = FullyNonlinearSystem::new((0..4).map(|i| sf(ManipField::Raw(i))).collect(), 4, 2)
        .expect("raw manipulator dynamics are well-formed");
    let shifted =
        FullyNonlinearSystem::new((0..4).map(|i| sf(ManipField::Shifted(i))).collect(), 4, 2)
            .expect("shifted manipulator dynamics are well-formed");
    let drift = VectorField::new((0..4).map(|i| sf(ManipField::Drift(i))).collect())
        .expect("drift rows share dimensions");
    let columns = (0..2)
        .map(|col| {
            VectorField::new((0..4).map(|row| sf(ManipField::GEntry(row, col))).collect())
                .expect("column rows share dimensions")
        })
        .collect();
    let affine =
        ControlAffineSystem::new(drift, columns).expect("manipulator drift vanishes at the origin");
    let g_dir = VectorField::new(vec![
        ScalarField::constant(0.0, 4),
        ScalarField::coordinate(0, 4),
        ScalarField::constant(0.0, 4),
        ScalarField::coordinate(2, 4),
    ])
    .expect("direction field rows share dimensions");
    let damping = FeedbackLaw::new(vec![sf(ManipField::Damping(0)), sf(ManipField::Damping(1))])
        .expect("damping components share dimensions");
    let total_feedback = FeedbackLaw::new(vec![sf(ManipField::Total(0)), sf(ManipField::Total(1))])
        .expect("feedback components share dimensions");
    ManipulatorBundle {
        raw,
        shifted,
        affine,
        v: sf(ManipField::V),
        g_dir,
        lgv_dir: sf(ManipField::LgvDir),
        lf_lgv_dir: sf(ManipField::LfLgvDir),
        lgv_rows: vec![sf(ManipField::LgvRow(0)), sf(ManipField::LgvRow(1))],
        vsharp: sf(ManipField::Vsharp),
        t1: sf(ManipField::T(0)),
        t2: sf(ManipField::T(1)),
        damping,
        total_feedback,
    }
}

// ---------------------------------------------------------------------------
// Built-in: harmonic oscillator
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
enum OscField {
    DriftQ,
    DriftP,
    V,
}

impl GenericField for OscField {
    fn dim(&self) -> usize {
        2
    }
    fn eval_generic<S: Scalar>(&self, x: &[S]) -> std::result::Result<S, EvalError> {
        Ok(match self {
            OscField::DriftQ => x[1].clone(),
            OscField::DriftP => -x[0].clone(),
            OscField::V => {
                S::from_f64(0.5) * (x[0].clone() * x[0].clone() + x[1].clone() * x[1].clone())
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct OscillatorBundle {
    pub sys: ControlAffineSystem,
    pub v: ScalarField,
    /// `G = (0, q)`.
    pub g_dir: VectorField,
    /// The same system as mechanical data, for the derived route.
    pub mechanical: MechanicalData,
}

/// Unit-mass, unit-stiffness oscillator on `x = (q, p)` with a force input.
pub fn builtin_oscillator() -> OscillatorBundle {
    let drift = VectorField::new(vec![
        ScalarField::new(Arc::new(OscField::DriftQ)),
        ScalarField::new(Arc::new(OscField::DriftP)),
    ])
    .expect("drift rows share dimensions");
    let column = VectorField::new(vec![
        ScalarField::constant(0.0, 2),
        ScalarField::constant(1.0, 2),
    ])
    .expect("column rows share dimensions");
    let sys = ControlAffineSystem::new(drift, vec![column])
        .expect("oscillator drift vanishes at the origin");
    let g_dir = VectorField::new(vec![
        ScalarField::constant(0.0, 2),
        ScalarField::coordinate(0, 2),
    ])
    .expect("direction rows share dimensions");
    let half_q_sq = ScalarField::coordinate(0, 1)
        .mul(&ScalarField::coordinate(0, 1))
        .expect("same dimension")
        .scale(0.5);
    let mechanical = MechanicalData::new(vec![vec![ScalarField::constant(1.0, 1)]], half_q_sq)
        .expect("mechanical data is square");
    OscillatorBundle {
        sys,
        v: ScalarField::new(Arc::new(OscField::V)),
        g_dir,
        mechanical,
    }
}
