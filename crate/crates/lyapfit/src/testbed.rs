//! Reference dynamical systems with exponentially stable equilibria, noisy
//! sample generation, and independent oracles for the Lyapunov functions:
//! a closed-form quadratic oracle for linear systems (via the Lyapunov
//! matrix equation) and flow-integration oracles for V and T on any shipped
//! system.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoxRegion, DomainSpec, Region, Sphere};
use crate::lyap::{LyapError, PFunction};
use crate::vec_ops::{dist, dot, sub};
use crate::vfield::{Dataset, VectorField, VfError};

/// Fixed integrator step for the flow oracles.
pub const H_INT: f64 = 1e-3;
/// Give up if a trajectory has not contracted / crossed Γ by this time.
pub const T_MAX: f64 = 100.0;
/// Bisection tolerance (in time) for Γ-crossing events.
pub const BISECT_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum TestbedError {
    #[error("unknown reference system '{0}' (expected lin1d, linear2d, decay2d or nonlinear2d)")]
    UnknownSystem(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("matrix is not Hurwitz: eigenvalue with real part {real_part:.6}")]
    NotHurwitz { real_part: f64 },
    #[error("trajectory failed to contract to the equilibrium within t = {T_MAX}")]
    NoContraction,
    #[error("trajectory did not cross the surface within t = {T_MAX}")]
    NoCrossing,
    #[error("surface is characteristic at the crossing point: ⟨∇h, f⟩ = {derivative:.3e} ≥ 0")]
    Characteristic { derivative: f64 },
    #[error(transparent)]
    Lyap(#[from] LyapError),
    #[error(transparent)]
    Vf(#[from] VfError),
}

/// The shipped benchmark systems, all with equilibrium at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSystem {
    /// 1-D `ẋ = −x`.
    Lin1d,
    /// 2-D spiral sink `ẋ = Ax`, `A = [[−1, 2], [−3, −1]]`.
    Linear2d,
    /// 2-D uniform decay `ẋ = −x` (closed-form `T(x) = ξ_T + c̄·ln(‖x‖/R)` for
    /// a centred circle Γ of radius `R`).
    Decay2d,
    /// 2-D `ẋ₁ = −x₁ + 0.25·x₂², ẋ₂ = −x₂ + 0.25·x₁x₂` on `[−1,1]²`.
    Nonlinear2d,
}

impl ReferenceSystem {
    pub fn all() -> [ReferenceSystem; 4] {
        [
            ReferenceSystem::Lin1d,
            ReferenceSystem::Linear2d,
            ReferenceSystem::Decay2d,
            ReferenceSystem::Nonlinear2d,
        ]
    }

    pub fn from_name(name: &str) -> Result<Self, TestbedError> {
        match name {
            "lin1d" => Ok(ReferenceSystem::Lin1d),
            "linear2d" => Ok(ReferenceSystem::Linear2d),
            "decay2d" => Ok(ReferenceSystem::Decay2d),
            "nonlinear2d" => Ok(ReferenceSystem::Nonlinear2d),
            other => Err(TestbedError::UnknownSystem(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReferenceSystem::Lin1d => "lin1d",
            ReferenceSystem::Linear2d => "linear2d",
            ReferenceSystem::Decay2d => "decay2d",
            ReferenceSystem::Nonlinear2d => "nonlinear2d",
        }
    }

    pub fn xbar(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    pub fn jacobian_at_xbar(&self) -> Vec<Vec<f64>> {
        match self {
            ReferenceSystem::Lin1d => vec![vec![-1.0]],
            ReferenceSystem::Linear2d => vec![vec![-1.0, 2.0], vec![-3.0, -1.0]],
            // the nonlinear terms have zero derivative at the origin
            ReferenceSystem::Decay2d | ReferenceSystem::Nonlinear2d => {
                vec![vec![-1.0, 0.0], vec![0.0, -1.0]]
            }
        }
    }

    /// The system matrix when the field is exactly linear.
    pub fn linear_matrix(&self) -> Option<Vec<Vec<f64>>> {
        match self {
            ReferenceSystem::Nonlinear2d => None,
            _ => Some(self.jacobian_at_xbar()),
        }
    }

    /// `X = Ω = [−1,1]^d`, exclusion radius 0.1, no Γ.
    pub fn default_domain(&self) -> DomainSpec {
        let d = self.dim();
        DomainSpec {
            x_box: BoxRegion::symmetric(d, 1.0),
            omega: Region::Box(BoxRegion::symmetric(d, 1.0)),
            xbar: self.xbar(),
            eps: 0.1,
            gamma: None,
        }
    }
}

impl VectorField for ReferenceSystem {
    fn dim(&self) -> usize {
        match self {
            ReferenceSystem::Lin1d => 1,
            _ => 2,
        }
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "point dimension mismatch");
        match self {
            ReferenceSystem::Lin1d => vec![-x[0]],
            ReferenceSystem::Linear2d => {
                vec![-x[0] + 2.0 * x[1], -3.0 * x[0] - x[1]]
            }
            ReferenceSystem::Decay2d => vec![-x[0], -x[1]],
            ReferenceSystem::Nonlinear2d => {
                vec![-x[0] + 0.25 * x[1] * x[1], -x[1] + 0.25 * x[0] * x[1]]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
    Uniform,
}

/// Zero-mean noise with per-component standard deviation `sigma`
/// (the uniform family draws from `±√3·sigma`, matching the variance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub family: NoiseFamily,
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), TestbedError> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(TestbedError::InvalidParam(format!(
                "noise sigma must be non-negative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Draws `y_i = f*(x_i) + η_i` with independent per-component noise,
/// deterministic per seed. `sigma = 0` returns exact field values.
pub fn generate_data(
    sys: ReferenceSystem,
    sites: &[Vec<f64>],
    noise: &NoiseModel,
) -> Result<Dataset, TestbedError> {
    noise.validate()?;
    let mut values: Vec<Vec<f64>> = sites.iter().map(|x| sys.eval(x)).collect();
    if noise.sigma > 0.0 {
        let mut rng = ChaCha20Rng::seed_from_u64(noise.seed);
        match noise.family {
            NoiseFamily::Gaussian => {
                let dist = Normal::new(0.0, noise.sigma)
                    .expect("positive finite sigma was validated");
                for row in values.iter_mut() {
                    for v in row.iter_mut() {
                        *v += dist.sample(&mut rng);
                    }
                }
            }
            NoiseFamily::Uniform => {
                let half = 3.0f64.sqrt() * noise.sigma;
                let dist = Uniform::new_inclusive(-half, half);
                for row in values.iter_mut() {
                    for v in row.iter_mut() {
                        *v += dist.sample(&mut rng);
                    }
                }
            }
        }
    }
    Ok(Dataset::new(sites.to_vec(), values, noise.sigma)?)
}

fn to_dmatrix(m: &[Vec<f64>]) -> Result<DMatrix<f64>, TestbedError> {
    let n = m.len();
    if n == 0 || m.iter().any(|row| row.len() != n) {
        return Err(TestbedError::InvalidParam(
            "matrix must be square and non-empty".into(),
        ));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(TestbedError::InvalidParam("matrix has non-finite entries".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| m[i][j]))
}

fn require_hurwitz(a: &DMatrix<f64>) -> Result<(), TestbedError> {
    let eigs = a.clone().complex_eigenvalues();
    for e in eigs.iter() {
        if e.re >= 0.0 {
            return Err(TestbedError::NotHurwitz { real_part: e.re });
        }
    }
    Ok(())
}

/// Solves `AᵀP + PA = −Q` for the quadratic Lyapunov function `V(x) = xᵀPx`
/// of the linear system `ẋ = Ax`, via the vectorized Kronecker system.
pub fn oracle_v_quadratic(
    a: &[Vec<f64>],
    q: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, TestbedError> {
    let a_m = to_dmatrix(a)?;
    let q_m = to_dmatrix(q)?;
    let n = a_m.nrows();
    if q_m.nrows() != n {
        return Err(TestbedError::InvalidParam(
            "A and Q must have equal dimensions".into(),
        ));
    }
    require_hurwitz(&a_m)?;
    if (&q_m - q_m.transpose()).amax() > 1e-12 * q_m.amax().max(1.0)
        || Cholesky::new(q_m.clone()).is_none()
    {
        return Err(TestbedError::InvalidParam(
            "Q must be symmetric positive definite".into(),
        ));
    }

    // vec(AᵀP) = (I ⊗ Aᵀ)vec(P), vec(PA) = (Aᵀ ⊗ I)vec(P), column-major.
    let at = a_m.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let sys = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_fn(n * n, |idx, _| -q_m[(idx % n, idx / n)]);
    let p_vec = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| TestbedError::InvalidParam("Lyapunov equation is singular".into()))?;
    let mut p = DMatrix::from_fn(n, n, |i, j| p_vec[j * n + i]);
    p = (&p + p.transpose()) * 0.5;

    let resid = (at * &p + &p * &a_m + &q_m).amax();
    if resid > 1e-10 * q_m.amax() {
        return Err(TestbedError::InvalidParam(format!(
            "Lyapunov equation residual {resid:.3e} is too large"
        )));
    }
    Ok((0..n)
        .map(|i| (0..n).map(|j| p[(i, j)]).collect())
        .collect())
}

/// `xᵀ M x` for a quadratic form stored row-wise.
pub fn quad_form(m: &[Vec<f64>], x: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(i, xi)| xi * m[i].iter().zip(x).map(|(mij, xj)| mij * xj).sum::<f64>())
        .sum()
}

/// Result of the flow-integration oracle for V.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowV {
    /// `∫₀^∞ p(φ(τ, x)) dτ`, truncated integral plus tail bound.
    pub value: f64,
    /// The quadratic tail added after contraction; also the scale of the
    /// truncation error.
    pub tail: f64,
    /// Integration time to contraction.
    pub time: f64,
    pub steps: usize,
}

/// One classical Runge-Kutta step of size `h`.
pub fn rk4_step(field: &dyn VectorField, x: &[f64], h: f64) -> Vec<f64> {
    let k1 = field.eval(x);
    let mid1: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
    let k2 = field.eval(&mid1);
    let mid2: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
    let k3 = field.eval(&mid2);
    let end: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
    let k4 = field.eval(&end);
    x.iter()
        .enumerate()
        .map(|(i, a)| a + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// `V(x) = ∫₀^∞ p(φ(τ, x)) dτ` by fixed-step RK4 on the trajectory jointly
/// with the integrand, truncated once `‖x(t) − x̄‖ < tol_tail` and completed
/// with the quadratic tail `x_endᵀ P_J x_end`, where `P_J` solves the
/// Lyapunov equation for the Jacobian at `x̄` and the quadratic form of `p`.
pub fn oracle_v_flow(
    sys: ReferenceSystem,
    p: &PFunction,
    x: &[f64],
    tol_tail: f64,
) -> Result<FlowV, TestbedError> {
    let d = sys.dim();
    if x.len() != d {
        return Err(TestbedError::InvalidParam(format!(
            "point dimension {} does not match system dimension {d}",
            x.len()
        )));
    }
    p.validate(d)?;
    let xbar = sys.xbar();
    if dist(p.center(), &xbar) > 1e-12 {
        return Err(TestbedError::InvalidParam(
            "p must be centred at the system equilibrium for the tail bound".into(),
        ));
    }
    if !(tol_tail > 0.0 && tol_tail.is_finite()) {
        return Err(TestbedError::InvalidParam(format!(
            "tail tolerance must be positive, got {tol_tail}"
        )));
    }

    let jac = sys.jacobian_at_xbar();
    let q_rows: Vec<Vec<f64>> = {
        let qm = p.q_dmatrix(d);
        (0..d).map(|i| (0..d).map(|j| qm[(i, j)]).collect()).collect()
    };
    let p_tail = oracle_v_quadratic(&jac, &q_rows)?;

    // augmented state (x, ∫p): the accumulator rides inside the RK4 stages
    struct Aug<'a> {
        sys: ReferenceSystem,
        p: &'a PFunction,
    }
    impl VectorField for Aug<'_> {
        fn dim(&self) -> usize {
            self.sys.dim() + 1
        }
        fn eval(&self, y: &[f64]) -> Vec<f64> {
            let x = &y[..y.len() - 1];
            let mut out = self.sys.eval(x);
            out.push(self.p.eval(x));
            out
        }
    }
    let aug = Aug { sys, p };

    let mut state: Vec<f64> = x.iter().copied().chain(std::iter::once(0.0)).collect();
    let mut t = 0.0;
    let mut steps = 0usize;
    while dist(&state[..d], &xbar) >= tol_tail {
        if t >= T_MAX {
            return Err(TestbedError::NoContraction);
        }
        state = rk4_step(&aug, &state, H_INT);
        t += H_INT;
        steps += 1;
    }
    let dx = sub(&state[..d], &xbar);
    let tail = quad_form(&p_tail, &dx);
    Ok(FlowV {
        value: state[d] + tail,
        tail,
        time: t,
        steps,
    })
}

/// `T(x) = ξ_T + c̄·θ(x)` where `θ` is the signed time to the Γ-crossing of
/// the trajectory through `x` (negative when `x` lies inside Γ, reached by
/// backward integration). The crossing is located by RK4 stepping and
/// in-step bisection; at the hit point Γ must be non-characteristic
/// (`⟨∇h, f⟩ < 0` with `h` the sphere's level function).
pub fn oracle_t_flow(
    sys: ReferenceSystem,
    gamma: &Sphere,
    cbar: f64,
    xi_t: f64,
    x: &[f64],
) -> Result<f64, TestbedError> {
    let d = sys.dim();
    if x.len() != d || gamma.center.len() != d {
        return Err(TestbedError::InvalidParam(
            "point, surface and system dimensions must agree".into(),
        ));
    }
    gamma
        .validate()
        .map_err(|e| TestbedError::InvalidParam(e.to_string()))?;
    if !(cbar > 0.0 && cbar.is_finite()) {
        return Err(TestbedError::InvalidParam(format!(
            "cbar must be positive, got {cbar}"
        )));
    }
    if !xi_t.is_finite() {
        return Err(TestbedError::InvalidParam(format!(
            "xiT must be finite, got {xi_t}"
        )));
    }

    let noncharacteristic = |hit: &[f64]| -> Result<(), TestbedError> {
        let grad_h: Vec<f64> = hit.iter().zip(&gamma.center).map(|(a, c)| 2.0 * (a - c)).collect();
        let dh = dot(&grad_h, &sys.eval(hit));
        if dh >= 0.0 {
            return Err(TestbedError::Characteristic { derivative: dh });
        }
        Ok(())
    };

    let h0 = gamma.level(x);
    if h0 == 0.0 {
        noncharacteristic(x)?;
        return Ok(xi_t);
    }

    // integrate forward when outside Γ, backward (ẋ = −f) when inside
    let outward = h0 > 0.0;
    let reversed = FnFieldRef { sys, flip: !outward };
    let mut prev = x.to_vec();
    let mut prev_h = h0;
    let mut t = 0.0;
    loop {
        if t >= T_MAX {
            return Err(TestbedError::NoCrossing);
        }
        let next = rk4_step(&reversed, &prev, H_INT);
        let next_h = gamma.level(&next);
        if (next_h > 0.0) != (prev_h > 0.0) || next_h == 0.0 {
            // bisect the step interval on h(φ(s, prev))
            let mut lo = 0.0;
            let mut hi = H_INT;
            while hi - lo > BISECT_TOL {
                let mid = 0.5 * (lo + hi);
                let h_mid = gamma.level(&rk4_step(&reversed, &prev, mid));
                if (h_mid > 0.0) == (prev_h > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let t_cross = t + 0.5 * (lo + hi);
            let hit = rk4_step(&reversed, &prev, 0.5 * (lo + hi));
            noncharacteristic(&hit)?;
            let theta = if outward { t_cross } else { -t_cross };
            return Ok(xi_t + cbar * theta);
        }
        prev = next;
        prev_h = next_h;
        t += H_INT;
    }
}

/// System field with an optional sign flip (backward-time integration).
struct FnFieldRef {
    sys: ReferenceSystem,
    flip: bool,
}

impl VectorField for FnFieldRef {
    fn dim(&self) -> usize {
        self.sys.dim()
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.sys.eval(x);
        if self.flip {
            for vi in v.iter_mut() {
                *vi = -*vi;
            }
        }
        v
    }
}
