//! Compactly supported radial kernels of Wendland type.
//!
//! The radial profile is built by the integral recursion
//!
//! ```text
//! ψ_{l,0}(r) = (1 − r)^l_+ ,      ψ_{l,k+1}(r) = ∫_r^1 t ψ_{l,k}(t) dt ,
//! ```
//!
//! with `l = ⌊d/2⌋ + k + 1`, carried out in exact rational arithmetic;
//! floating point enters only when the resulting polynomial is evaluated.
//! The kernel on points is `K(x, y) = ψ_{l,k}(c‖x − y‖)` with scale `c > 0`,
//! so the support radius is `1/c`.
//!
//! Derivative evaluations are routed through the radial quotient functions
//!
//! ```text
//! ψ₁(r) = ψ'(r)/r = c² g₁(cr) ,      ψ₂(r) = ψ₁'(r)/r = c⁴ g₂(cr) ,
//! ```
//!
//! where `g₁ = (dψ_{l,k}/ds)/s` and `g₂ = (dg₁/ds)/s` are again polynomials
//! whenever `k ≥ 1` resp. `k ≥ 2` (the division is exact because the
//! relevant odd coefficients vanish). They give the kernel gradient
//! `∇ₓK(x,y) = ψ₁(‖x−y‖)(x−y)` and the mixed second derivative
//! `∂²K/∂x∂y = −[ψ₂(‖x−y‖)(x−y)(x−y)ᵀ + ψ₁(‖x−y‖) I]`.

use num::{BigInt, BigRational, One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vec_ops::dist;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel dimension must be at least 1")]
    InvalidDimension,
    #[error("kernel scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("radius must be finite and non-negative, got {0}")]
    InvalidRadius(f64),
    #[error("smoothness index k = {k} is insufficient: {quantity} requires k >= {min}")]
    SmoothnessInsufficient {
        k: usize,
        quantity: &'static str,
        min: usize,
    },
}

/// Univariate polynomial with exact rational coefficients, `coeffs[i] · r^i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RationalPoly {
    coeffs: Vec<BigRational>,
}

impl RationalPoly {
    pub fn new(mut coeffs: Vec<BigRational>) -> Self {
        while coeffs.len() > 1 && coeffs.last().map_or(false, |c| c.is_zero()) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(BigRational::zero());
        }
        RationalPoly { coeffs }
    }

    /// Convenience constructor from `(numerator, denominator)` pairs,
    /// lowest power first.
    pub fn from_ratios(ratios: &[(i64, i64)]) -> Self {
        Self::new(
            ratios
                .iter()
                .map(|&(n, d)| BigRational::new(BigInt::from(n), BigInt::from(d)))
                .collect(),
        )
    }

    pub fn coeffs(&self) -> &[BigRational] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, r: &BigRational) -> BigRational {
        let mut acc = BigRational::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * r + c;
        }
        acc
    }

    pub fn to_f64_coeffs(&self) -> Vec<f64> {
        self.coeffs
            .iter()
            .map(|c| c.to_f64().expect("rational coefficient out of f64 range"))
            .collect()
    }

    /// `(1 − r)^l` expanded via binomial coefficients.
    fn one_minus_r_pow(l: usize) -> Self {
        let mut coeffs = Vec::with_capacity(l + 1);
        let mut binom = BigInt::one();
        for i in 0..=l {
            let sign = if i % 2 == 0 { 1 } else { -1 };
            coeffs.push(BigRational::from_integer(&binom * sign));
            // C(l, i+1) = C(l, i) · (l − i) / (i + 1)
            binom = &binom * BigInt::from(l - i) / BigInt::from(i + 1);
        }
        Self::new(coeffs)
    }

    /// One recursion step: `p ↦ ∫_r^1 t p(t) dt`.
    fn recursion_step(&self) -> Self {
        // Antiderivative Q of t·p(t) has Q[i+2] = p[i]/(i+2) and Q[0] = Q[1] = 0,
        // so ∫_r^1 t p dt = Q(1) − Q(r).
        let q1: BigRational = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c / BigRational::from_integer(BigInt::from(i + 2)))
            .sum();
        let mut coeffs = vec![q1, BigRational::zero()];
        for (i, c) in self.coeffs.iter().enumerate() {
            coeffs.push(-c / BigRational::from_integer(BigInt::from(i + 2)));
        }
        Self::new(coeffs)
    }

    fn derivative(&self) -> Self {
        if self.coeffs.len() == 1 {
            return Self::new(vec![BigRational::zero()]);
        }
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| c * BigRational::from_integer(BigInt::from(i)))
                .collect(),
        )
    }

    /// Exact division by `r`; `None` if the constant term is nonzero.
    fn div_by_r(&self) -> Option<Self> {
        if !self.coeffs[0].is_zero() {
            return None;
        }
        if self.coeffs.len() == 1 {
            return Some(self.clone());
        }
        Some(Self::new(self.coeffs[1..].to_vec()))
    }

    /// Exact division by `(1 − r)^mult`; `None` if the root at 1 has lower
    /// multiplicity.
    fn deflate_at_one(&self, mult: usize) -> Option<Self> {
        let mut cur = self.coeffs.clone();
        for _ in 0..mult {
            let n = cur.len();
            // Synthetic division by (r − 1): the remainder is p(1) and
            // p = (r − 1)q + p(1), so p/(1 − r) = −q when p(1) = 0.
            let mut q = vec![BigRational::zero(); (n - 1).max(1)];
            let mut acc = BigRational::zero();
            for i in (1..n).rev() {
                acc += &cur[i];
                q[i - 1] = -acc.clone();
            }
            if !(&acc + &cur[0]).is_zero() {
                return None;
            }
            cur = q;
        }
        Some(Self::new(cur))
    }
}

/// Kernel parameters as they appear in serialized models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub d: usize,
    pub k: usize,
    pub c: f64,
}

/// Radial profile value and its derivative quotients at one radius, with the
/// chain-rule powers of the scale already applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialDerivatives {
    pub psi: f64,
    pub psi1: f64,
    pub psi2: f64,
}

/// A Wendland kernel `K(x,y) = ψ_{l,k}(c‖x−y‖)`, positive definite on ℝ^d
/// (and on every lower dimension).
///
/// `ψ` and its quotients vanish at the support boundary to orders `l+k`,
/// `l+k−1` and `l+k−2`; those roots are deflated exactly at construction and
/// evaluation uses the factored form `(1 − s)^m · cofactor(s)`, which stays
/// relatively accurate (and one-signed) where the monomial form would cancel
/// catastrophically.
#[derive(Debug, Clone)]
pub struct WendlandKernel {
    d: usize,
    k: usize,
    l: usize,
    c: f64,
    poly: RationalPoly,
    psi_cof: Vec<f64>,
    g1_cof: Option<Vec<f64>>,
    g2_cof: Option<Vec<f64>>,
}

/// Builds `ψ_{l,k}` for dimension `d` and smoothness `k` with unit scale.
pub fn build_wendland(d: usize, k: usize) -> Result<WendlandKernel, KernelError> {
    WendlandKernel::new(d, k, 1.0)
}

impl WendlandKernel {
    pub fn new(d: usize, k: usize, c: f64) -> Result<Self, KernelError> {
        if d == 0 {
            return Err(KernelError::InvalidDimension);
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(KernelError::InvalidScale(c));
        }
        let l = d / 2 + k + 1;
        let mut poly = RationalPoly::one_minus_r_pow(l);
        for _ in 0..k {
            poly = poly.recursion_step();
        }
        let m = l + k;
        let psi_cof = poly
            .deflate_at_one(m)
            .expect("psi_{l,k} vanishes to order l+k at 1")
            .to_f64_coeffs();
        let g1 = if k >= 1 {
            Some(
                poly.derivative()
                    .div_by_r()
                    .expect("dψ/ds has no constant term for k >= 1"),
            )
        } else {
            None
        };
        let g1_cof = g1.as_ref().map(|g| {
            g.deflate_at_one(m - 1)
                .expect("g1 vanishes to order l+k-1 at 1")
                .to_f64_coeffs()
        });
        let g2_cof = if k >= 2 {
            Some(
                g1.as_ref()
                    .expect("k >= 2 implies k >= 1")
                    .derivative()
                    .div_by_r()
                    .expect("dg1/ds has no constant term for k >= 2")
                    .deflate_at_one(m - 2)
                    .expect("g2 vanishes to order l+k-2 at 1")
                    .to_f64_coeffs(),
            )
        } else {
            None
        };
        Ok(WendlandKernel {
            d,
            k,
            l,
            c,
            poly,
            psi_cof,
            g1_cof,
            g2_cof,
        })
    }

    pub fn from_spec(spec: &KernelSpec) -> Result<Self, KernelError> {
        Self::new(spec.d, spec.k, spec.c)
    }

    pub fn spec(&self) -> KernelSpec {
        KernelSpec {
            d: self.d,
            k: self.k,
            c: self.c,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn support_radius(&self) -> f64 {
        1.0 / self.c
    }

    /// Exact rational representation of `ψ_{l,k}` on `[0, 1]`.
    pub fn poly(&self) -> &RationalPoly {
        &self.poly
    }

    /// `κ² = K(x, x) = ψ_{l,k}(0)`.
    pub fn kappa_sq(&self) -> f64 {
        self.psi_cof[0]
    }

    /// Errors unless the smoothness supports evaluation of `ψ₁` (`min_k = 1`)
    /// or `ψ₂` (`min_k = 2`) down to `r = 0`.
    pub fn require_smoothness(&self, min_k: usize) -> Result<(), KernelError> {
        if self.k < min_k {
            return Err(KernelError::SmoothnessInsufficient {
                k: self.k,
                quantity: if min_k >= 2 { "psi2" } else { "psi1" },
                min: min_k,
            });
        }
        Ok(())
    }

    /// `ψ(cr)`.
    pub fn psi(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0);
        let s = self.c * r;
        if s >= 1.0 {
            0.0
        } else {
            factored(&self.psi_cof, (self.l + self.k) as i32, s)
        }
    }

    /// `ψ₁(r) = ψ'(r)/r`, finite at `r = 0` for `k ≥ 1`.
    ///
    /// Panics if `k < 1`; gate call sites with [`Self::require_smoothness`].
    pub fn psi1(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0);
        let g1 = self
            .g1_cof
            .as_ref()
            .expect("psi1 needs smoothness k >= 1; call require_smoothness first");
        let s = self.c * r;
        if s >= 1.0 {
            0.0
        } else {
            self.c * self.c * factored(g1, (self.l + self.k - 1) as i32, s)
        }
    }

    /// `ψ₂(r) = ψ₁'(r)/r`, finite at `r = 0` for `k ≥ 2`.
    ///
    /// Panics if `k < 2`; gate call sites with [`Self::require_smoothness`].
    pub fn psi2(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0);
        let g2 = self
            .g2_cof
            .as_ref()
            .expect("psi2 needs smoothness k >= 2; call require_smoothness first");
        let s = self.c * r;
        if s >= 1.0 {
            0.0
        } else {
            self.c.powi(4) * factored(g2, (self.l + self.k - 2) as i32, s)
        }
    }

    /// All three radial quantities at once, with the preconditions checked.
    pub fn radial_derivatives(&self, r: f64) -> Result<RadialDerivatives, KernelError> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(KernelError::InvalidRadius(r));
        }
        self.require_smoothness(2)?;
        Ok(RadialDerivatives {
            psi: self.psi(r),
            psi1: self.psi1(r),
            psi2: self.psi2(r),
        })
    }

    /// `K(x, y) = ψ(c‖x − y‖)`. Points may live in any dimension up to `d`
    /// (the profile stays positive definite on lower-dimensional data).
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), y.len(), "kernel arguments must share a dimension");
        assert!(
            x.len() <= self.d,
            "point dimension {} exceeds kernel dimension {}",
            x.len(),
            self.d
        );
        self.psi(dist(x, y))
    }

    /// `∇ₓ K(x, y) = ψ₁(‖x − y‖)(x − y)`; requires `k ≥ 1`.
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), y.len(), "kernel arguments must share a dimension");
        let p1 = self.psi1(dist(x, y));
        x.iter().zip(y).map(|(a, b)| p1 * (a - b)).collect()
    }
}

fn horner(coeffs: &[f64], s: f64) -> f64 {
    let mut acc = 0.0;
    for c in coeffs.iter().rev() {
        acc = acc * s + c;
    }
    acc
}

/// Evaluates the deflated form `(1 − s)^mult · cofactor(s)`.
fn factored(cofactor: &[f64], mult: i32, s: f64) -> f64 {
    (1.0 - s).powi(mult) * horner(cofactor, s)
}
