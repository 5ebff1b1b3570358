//! Componentwise reconstruction of an unknown vector field from noisy
//! samples by regularized least squares in the native space of a Wendland
//! kernel.
//!
//! Given samples `y_i = f(x_i) + e_i` on pairwise distinct sites, each
//! component of `f` is approximated by `Σ_i a_i K(·, x_i)` where the
//! coefficients solve
//!
//! ```text
//! (D_w A + λ I) a = D_w y ,
//! ```
//!
//! with `A` the kernel Gram matrix, `D_w` the diagonal matrix of Voronoi
//! cell volumes and `λ > 0` the regularization weight. The cell volumes
//! turn the data term into a quadrature of `∫ |f̂ − f|²`, and the rule for
//! `λ` balances the noise norm against the site density.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, BoxRegion, GeometryError, Region, WeightedSites};
use crate::kernel::{KernelError, KernelSpec, WendlandKernel};

/// Relative normal-equation residual the solver must reach.
pub const NORMAL_RESIDUAL_TOL: f64 = 1e-10;

const MAX_REFINE: usize = 3;

#[derive(Debug, Error)]
pub enum VfError {
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("least-squares system is numerically singular or too ill-conditioned (1-norm condition estimate {cond:.3e}, relative normal residual {residual:.3e} > {NORMAL_RESIDUAL_TOL:e}); increase lambda or thin the sites")]
    IllConditioned { cond: f64, residual: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Anything that can be evaluated as an autonomous vector field on ℝ^d.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Vec<f64>;
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        (**self).eval(x)
    }
}

/// Adapter turning a closure into a [`VectorField`].
pub struct FnField<F: Fn(&[f64]) -> Vec<f64>> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        (self.f)(x)
    }
}

/// Raw samples `values[i] ≈ f(sites[i])` with the noise level they were
/// drawn at (`sigma = 0` means exact evaluations).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub sites: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub sigma: f64,
}

impl Dataset {
    pub fn new(sites: Vec<Vec<f64>>, values: Vec<Vec<f64>>, sigma: f64) -> Result<Self, VfError> {
        let ds = Dataset {
            sites,
            values,
            sigma,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Exact evaluations of a known field at the given sites.
    pub fn from_field(sites: Vec<Vec<f64>>, field: &dyn VectorField) -> Result<Self, VfError> {
        let values = sites.iter().map(|x| field.eval(x)).collect();
        Self::new(sites, values, 0.0)
    }

    pub fn validate(&self) -> Result<(), VfError> {
        if self.sites.is_empty() {
            return Err(VfError::InvalidData("no sample sites".into()));
        }
        if self.values.len() != self.sites.len() {
            return Err(VfError::InvalidData(format!(
                "{} sites but {} value rows",
                self.sites.len(),
                self.values.len()
            )));
        }
        let d = self.sites[0].len();
        if d == 0 {
            return Err(VfError::InvalidData("sites have dimension 0".into()));
        }
        for (i, (x, y)) in self.sites.iter().zip(&self.values).enumerate() {
            if x.len() != d || y.len() != d {
                return Err(VfError::InvalidData(format!(
                    "row {i}: expected {d} coordinates and {d} components"
                )));
            }
            if x.iter().chain(y).any(|v| !v.is_finite()) {
                return Err(VfError::InvalidData(format!("row {i}: non-finite entry")));
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(VfError::InvalidData(format!(
                "noise level must be non-negative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.sites[0].len()
    }
}

/// A dataset equipped with the geometric quantities the solver needs.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub sites: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub h_x: f64,
    pub w_norm: f64,
    pub sigma: f64,
}

impl SampleSet {
    pub fn from_parts(
        sites: Vec<Vec<f64>>,
        values: Vec<Vec<f64>>,
        weights: Vec<f64>,
        h_x: f64,
        sigma: f64,
    ) -> Result<Self, VfError> {
        Dataset {
            sites: sites.clone(),
            values: values.clone(),
            sigma,
        }
        .validate()?;
        if weights.len() != sites.len() {
            return Err(VfError::InvalidData(format!(
                "{} sites but {} weights",
                sites.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(VfError::InvalidData(
                "weights must be finite and non-negative".into(),
            ));
        }
        if !(h_x > 0.0 && h_x.is_finite()) {
            return Err(VfError::InvalidParam(format!(
                "fill distance must be positive, got {h_x}"
            )));
        }
        let w_norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        Ok(SampleSet {
            sites,
            values,
            weights,
            h_x,
            w_norm,
            sigma,
        })
    }

    /// Computes Voronoi weights and the fill distance for the dataset's
    /// sites inside `x_box`.
    pub fn from_dataset(
        ds: &Dataset,
        x_box: &BoxRegion,
        n_mc: usize,
        n_candidates: usize,
        seed: u64,
    ) -> Result<Self, VfError> {
        ds.validate()?;
        let ws = WeightedSites::build(&ds.sites, x_box, n_mc, n_candidates, seed)?;
        Ok(SampleSet {
            sites: ds.sites.clone(),
            values: ds.values.clone(),
            weights: ws.w,
            h_x: ws.h_x,
            w_norm: ws.w_norm,
            sigma: ds.sigma,
        })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sites[0].len()
    }
}

/// How a reconstruction was produced; stored inside the model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VfProvenance {
    pub w_norm: f64,
    pub h_x: f64,
    pub r: Option<f64>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
    pub solver: String,
    pub dataset_sha256: Option<String>,
    pub normal_residual_rel: f64,
}

/// Serialized form of a reconstructed vector field: one coefficient vector
/// per component over shared centers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VectorFieldModel {
    pub kernel: KernelSpec,
    pub centers: Vec<Vec<f64>>,
    pub coeffs: Vec<Vec<f64>>,
    pub lambda: f64,
    pub provenance: VfProvenance,
}

impl VectorFieldModel {
    pub fn build_kernel(&self) -> Result<WendlandKernel, KernelError> {
        WendlandKernel::from_spec(&self.kernel)
    }

    pub fn evaluator(&self) -> Result<FieldEvaluator, VfError> {
        FieldEvaluator::new(self.build_kernel()?, self.centers.clone(), self.coeffs.clone())
    }
}

/// Evaluates `f̂_k(x) = Σ_i coeffs[k][i] · K(x, centers[i])`.
#[derive(Debug, Clone)]
pub struct FieldEvaluator {
    kernel: WendlandKernel,
    centers: Vec<Vec<f64>>,
    coeffs: Vec<Vec<f64>>,
}

impl FieldEvaluator {
    pub fn new(
        kernel: WendlandKernel,
        centers: Vec<Vec<f64>>,
        coeffs: Vec<Vec<f64>>,
    ) -> Result<Self, VfError> {
        if centers.is_empty() {
            return Err(VfError::InvalidData("model has no centers".into()));
        }
        let d = centers[0].len();
        if d == 0 || d > kernel.d() || centers.iter().any(|c| c.len() != d) {
            return Err(VfError::InvalidData(
                "center dimensions are inconsistent with the kernel".into(),
            ));
        }
        if coeffs.is_empty() || coeffs.iter().any(|a| a.len() != centers.len()) {
            return Err(VfError::InvalidData(
                "need one coefficient per center and component".into(),
            ));
        }
        Ok(FieldEvaluator {
            kernel,
            centers,
            coeffs,
        })
    }

    pub fn kernel(&self) -> &WendlandKernel {
        &self.kernel
    }
}

impl VectorField for FieldEvaluator {
    fn dim(&self) -> usize {
        self.centers[0].len()
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "point dimension mismatch");
        let kvals: Vec<f64> = self.centers.iter().map(|c| self.kernel.eval(x, c)).collect();
        self.coeffs
            .iter()
            .map(|a| a.iter().zip(&kvals).map(|(ai, ki)| ai * ki).sum())
            .collect()
    }
}

/// Regularization weight `λ = (max{‖w‖₂, h_x^{2/(3−2r)}})^{2/(2r+1)}`.
///
/// `r ∈ (1/2, 1]` is the assumed smoothness exponent of the noise-vs-density
/// balance; `delta` is the confidence parameter, validated and recorded but
/// not entering the formula.
pub fn choose_lambda(w_norm: f64, h_x: f64, r: f64, delta: f64) -> Result<f64, VfError> {
    if !(w_norm >= 0.0 && w_norm.is_finite()) {
        return Err(VfError::InvalidParam(format!(
            "weight norm must be non-negative, got {w_norm}"
        )));
    }
    if !(h_x > 0.0 && h_x.is_finite()) {
        return Err(VfError::InvalidParam(format!(
            "fill distance must be positive, got {h_x}"
        )));
    }
    if !(r > 0.5 && r <= 1.0) {
        return Err(VfError::InvalidParam(format!(
            "smoothness exponent r must lie in (1/2, 1], got {r}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(VfError::InvalidParam(format!(
            "confidence delta must lie in (0, 1), got {delta}"
        )));
    }
    let base = w_norm.max(h_x.powf(2.0 / (3.0 - 2.0 * r)));
    Ok(base.powf(2.0 / (2.0 * r + 1.0)))
}

fn mat_norm1(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum())
        .fold(0.0, f64::max)
}

/// Fits one kernel expansion per field component on the sample sites.
///
/// The shared matrix `D_w A + λ I` is LU-factorized once; every component
/// solve is polished by iterative refinement until the normal-equation
/// residual `‖A[(D_w A + λI)a − D_w y]‖` drops below
/// [`NORMAL_RESIDUAL_TOL`] relative to `‖A D_w y‖`.
pub fn fit_vector_field(
    samples: &SampleSet,
    kernel: &WendlandKernel,
    lambda: f64,
) -> Result<VectorFieldModel, VfError> {
    let m = samples.len();
    let d = samples.dim();
    if d > kernel.d() {
        return Err(VfError::InvalidData(format!(
            "site dimension {d} exceeds kernel dimension {}",
            kernel.d()
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(VfError::InvalidParam(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    geometry::check_pairwise_distinct(&samples.sites)?;

    let a_mat = DMatrix::from_fn(m, m, |i, j| kernel.eval(&samples.sites[i], &samples.sites[j]));
    let mut sys = a_mat.clone();
    for i in 0..m {
        let w = samples.weights[i];
        for j in 0..m {
            sys[(i, j)] *= w;
        }
        sys[(i, i)] += lambda;
    }
    let lu = sys.clone().lu();

    let fail = |residual: f64| {
        let cond = sys
            .clone()
            .try_inverse()
            .map(|inv| mat_norm1(&sys) * mat_norm1(&inv))
            .unwrap_or(f64::INFINITY);
        VfError::IllConditioned { cond, residual }
    };

    let mut coeffs = Vec::with_capacity(d);
    let mut worst_rel = 0.0f64;
    for comp in 0..d {
        let b = DVector::from_fn(m, |i, _| samples.weights[i] * samples.values[i][comp]);
        let target = (&a_mat * &b).norm();
        let mut a = lu.solve(&b).ok_or_else(|| fail(f64::INFINITY))?;
        let mut rel = f64::INFINITY;
        for _ in 0..=MAX_REFINE {
            let resid = &b - &sys * &a;
            let normal = (&a_mat * &resid).norm();
            rel = if target > 0.0 { normal / target } else { normal };
            if rel <= NORMAL_RESIDUAL_TOL {
                break;
            }
            let delta = lu.solve(&resid).ok_or_else(|| fail(rel))?;
            a += delta;
        }
        if rel > NORMAL_RESIDUAL_TOL {
            return Err(fail(rel));
        }
        worst_rel = worst_rel.max(rel);
        coeffs.push(a.iter().copied().collect());
    }

    Ok(VectorFieldModel {
        kernel: kernel.spec(),
        centers: samples.sites.clone(),
        coeffs,
        lambda,
        provenance: VfProvenance {
            w_norm: samples.w_norm,
            h_x: samples.h_x,
            r: None,
            delta: None,
            seed: None,
            solver: "lu+iterative-refinement".into(),
            dataset_sha256: None,
            normal_residual_rel: worst_rel,
        },
    })
}

/// Same solve as [`fit_vector_field`] but on exact field evaluations at the
/// sample sites, reusing the sample geometry (weights and fill distance).
pub fn fit_noise_free(
    samples: &SampleSet,
    field: &dyn VectorField,
    kernel: &WendlandKernel,
    lambda: f64,
) -> Result<VectorFieldModel, VfError> {
    let exact = SampleSet {
        values: samples.sites.iter().map(|x| field.eval(x)).collect(),
        sigma: 0.0,
        ..samples.clone()
    };
    fit_vector_field(&exact, kernel, lambda)
}

/// Largest training misfit `max_i ‖f̂(x_i) − y_i‖₂`.
pub fn training_sup_error(model: &VectorFieldModel, samples: &SampleSet) -> Result<f64, VfError> {
    let ev = model.evaluator()?;
    Ok(samples
        .sites
        .iter()
        .zip(&samples.values)
        .map(|(x, y)| {
            let fx = ev.eval(x);
            fx.iter()
                .zip(y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max))
}

/// Fill distance of the model's centers in a region, for diagnostics.
pub fn centers_fill_distance(
    model: &VectorFieldModel,
    region: &Region,
    n_candidates: usize,
) -> Result<f64, VfError> {
    Ok(geometry::fill_distance(&model.centers, region, n_candidates)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::build_wendland;

    fn linspace(a: f64, b: f64, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| vec![a + (b - a) * i as f64 / (n - 1) as f64])
            .collect()
    }

    fn unit_weights(sites: Vec<Vec<f64>>, values: Vec<Vec<f64>>) -> SampleSet {
        let m = sites.len();
        SampleSet::from_parts(sites, values, vec![1.0; m], 0.25, 0.0).unwrap()
    }

    #[test]
    fn single_site_closed_form() {
        // ψ_{1,0}(0) = 1, one site, w = 1, λ = 1/20:
        // (1 + 1/20) a = 1  ⇒  a = 20/21, training residual 1/21.
        let ker = build_wendland(1, 0).unwrap();
        let s = SampleSet::from_parts(vec![vec![0.0]], vec![vec![1.0]], vec![1.0], 1.0, 0.0)
            .unwrap();
        let model = fit_vector_field(&s, &ker, 0.05).unwrap();
        assert!((model.coeffs[0][0] - 20.0 / 21.0).abs() < 1e-14);
        let f0 = model.evaluator().unwrap().eval(&[0.0])[0];
        assert!((f0 - 20.0 / 21.0).abs() < 1e-14);
        assert!((1.0 - f0 - 1.0 / 21.0).abs() < 1e-14);
    }

    #[test]
    fn zero_data_yields_zero_model() {
        let ker = build_wendland(1, 2).unwrap();
        let sites = linspace(-1.0, 1.0, 5);
        let s = unit_weights(sites, vec![vec![0.0]; 5]);
        let model = fit_vector_field(&s, &ker, 1e-3).unwrap();
        assert!(model.coeffs[0].iter().all(|&a| a == 0.0));
        assert_eq!(model.evaluator().unwrap().eval(&[0.37])[0], 0.0);
    }

    #[test]
    fn lambda_rule_matches_hand_values() {
        // max{0.001, 0.1²} = 0.01, exponent 2/3.
        let l = choose_lambda(0.001, 0.1, 1.0, 0.5).unwrap();
        assert!((l - 0.046415888336127789).abs() < 1e-12);
        // max{0.02, 0.02^{4/3}} = 0.02, exponent 4/5.
        let l = choose_lambda(0.02, 0.02, 0.75, 0.5).unwrap();
        assert!((l - 0.043734482957731122).abs() < 1e-12);
        // λ vanishes monotonically with the data scales.
        let mut prev = f64::INFINITY;
        for e in 1..=6 {
            let t = 10.0f64.powi(-e);
            let l = choose_lambda(t, t, 1.0, 0.5).unwrap();
            assert!(l < prev && l > 0.0);
            prev = l;
        }
    }

    #[test]
    fn lambda_rule_validates_inputs() {
        assert!(choose_lambda(0.1, 0.1, 0.5, 0.5).is_err());
        assert!(choose_lambda(0.1, 0.1, 1.2, 0.5).is_err());
        assert!(choose_lambda(0.1, 0.1, 1.0, 0.0).is_err());
        assert!(choose_lambda(0.1, 0.1, 1.0, 1.0).is_err());
        assert!(choose_lambda(-0.1, 0.1, 1.0, 0.5).is_err());
        assert!(choose_lambda(0.1, 0.0, 1.0, 0.5).is_err());
        assert!(choose_lambda(0.1, 0.1, 1.0, 0.5).is_ok());
    }

    #[test]
    fn representer_system_is_satisfied() {
        let ker = build_wendland(1, 2).unwrap();
        let sites = linspace(-1.0, 1.0, 9);
        let values: Vec<Vec<f64>> = sites.iter().map(|x| vec![(2.0 * x[0]).sin()]).collect();
        let weights: Vec<f64> = (0..9).map(|i| 0.1 + 0.05 * i as f64).collect();
        let s = SampleSet::from_parts(sites.clone(), values.clone(), weights.clone(), 0.25, 0.0)
            .unwrap();
        let lambda = 1e-3;
        let model = fit_vector_field(&s, &ker, lambda).unwrap();
        let a = &model.coeffs[0];
        for i in 0..9 {
            let mut lhs = lambda * a[i];
            for j in 0..9 {
                lhs += weights[i] * ker.eval(&sites[i], &sites[j]) * a[j];
            }
            let rhs = weights[i] * values[i][0];
            assert!((lhs - rhs).abs() <= 1e-12, "row {i}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn rkhs_member_recovered_as_lambda_vanishes() {
        let ker = build_wendland(1, 2).unwrap();
        let sites = linspace(-1.0, 1.0, 7);
        let c_true = [0.4, -0.2, 0.7, 0.1, -0.5, 0.3, 0.2];
        let fstar = |x: &[f64]| -> f64 {
            sites
                .iter()
                .zip(c_true)
                .map(|(z, c)| c * ker.eval(x, z))
                .sum()
        };
        let values: Vec<Vec<f64>> = sites.iter().map(|x| vec![fstar(x)]).collect();
        let s = unit_weights(sites.clone(), values);
        let model = fit_vector_field(&s, &ker, 1e-9).unwrap();
        let ev = model.evaluator().unwrap();
        let sup = (0..81)
            .map(|i| {
                let x = [-1.0 + 2.0 * i as f64 / 80.0];
                (ev.eval(&x)[0] - fstar(&x)).abs()
            })
            .fold(0.0, f64::max);
        assert!(sup <= 1e-3, "sup error {sup}");
    }

    #[test]
    fn shrinking_lambda_shrinks_training_error() {
        let ker = build_wendland(1, 2).unwrap();
        let sites = linspace(-1.0, 1.0, 9);
        let values: Vec<Vec<f64>> = sites.iter().map(|x| vec![-x[0] + 0.3 * x[0].cos()]).collect();
        let s = unit_weights(sites, values);
        let mut prev = f64::INFINITY;
        for lambda in [1.0, 0.1, 0.01] {
            let model = fit_vector_field(&s, &ker, lambda).unwrap();
            let err = training_sup_error(&model, &s).unwrap();
            assert!(err <= prev + 1e-14, "λ={lambda}: {err} > {prev}");
            prev = err;
        }
    }

    #[test]
    fn noise_free_path_matches_sigma_zero_fit() {
        let ker = build_wendland(1, 2).unwrap();
        let field = FnField {
            dim: 1,
            f: |x: &[f64]| vec![-x[0] + 0.1 * x[0] * x[0]],
        };
        let sites = linspace(-1.0, 1.0, 6);
        let ds = Dataset::from_field(sites, &field).unwrap();
        assert_eq!(ds.sigma, 0.0);
        let bx = BoxRegion::new(vec![-1.0], vec![1.0]).unwrap();
        let s = SampleSet::from_dataset(&ds, &bx, 1000, 201, 9).unwrap();
        let m1 = fit_vector_field(&s, &ker, 1e-2).unwrap();
        let m2 = fit_noise_free(&s, &field, &ker, 1e-2).unwrap();
        for (a, b) in m1.coeffs[0].iter().zip(&m2.coeffs[0]) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn shape_and_parameter_validation() {
        let ker = build_wendland(1, 2).unwrap();
        assert!(Dataset::new(vec![], vec![], 0.0).is_err());
        assert!(Dataset::new(vec![vec![0.0]], vec![], 0.0).is_err());
        assert!(Dataset::new(vec![vec![0.0]], vec![vec![1.0, 2.0]], 0.0).is_err());
        assert!(Dataset::new(vec![vec![0.0]], vec![vec![f64::NAN]], 0.0).is_err());
        assert!(Dataset::new(vec![vec![0.0]], vec![vec![1.0]], -1.0).is_err());
        let ok = |v: Vec<f64>, h: f64| {
            SampleSet::from_parts(vec![vec![0.0], vec![1.0]], vec![vec![1.0], vec![2.0]], v, h, 0.0)
        };
        assert!(ok(vec![1.0], 0.5).is_err());
        assert!(ok(vec![1.0, -0.5], 0.5).is_err());
        assert!(ok(vec![1.0, 1.0], 0.0).is_err());
        let s = ok(vec![1.0, 1.0], 0.5).unwrap();
        assert!(fit_vector_field(&s, &ker, 0.0).is_err());
        assert!(fit_vector_field(&s, &ker, f64::NAN).is_err());
        // duplicate sites must be rejected before factorization
        let dup = SampleSet::from_parts(
            vec![vec![0.3], vec![0.3]],
            vec![vec![1.0], vec![1.0]],
            vec![1.0, 1.0],
            0.5,
            0.0,
        )
        .unwrap();
        assert!(matches!(
            fit_vector_field(&dup, &ker, 1e-3),
            Err(VfError::Geometry(GeometryError::DuplicateSites { .. }))
        ));
    }

    #[test]
    fn model_json_roundtrip() {
        let ker = build_wendland(1, 2).unwrap();
        let sites = linspace(-1.0, 1.0, 5);
        let values: Vec<Vec<f64>> = sites.iter().map(|x| vec![-x[0]]).collect();
        let s = unit_weights(sites, values);
        let model = fit_vector_field(&s, &ker, 1e-2).unwrap();
        let text = serde_json::to_string_pretty(&model).unwrap();
        assert!(text.contains("\"w_norm\""));
        assert!(text.contains("\"solver\""));
        let back: VectorFieldModel = serde_json::from_str(&text).unwrap();
        let e1 = model.evaluator().unwrap();
        let e2 = back.evaluator().unwrap();
        for i in 0..21 {
            let x = [-1.0 + 0.1 * i as f64];
            assert_eq!(e1.eval(&x)[0], e2.eval(&x)[0]);
        }
    }

    #[test]
    fn provenance_records_solver_and_residual() {
        let ker = build_wendland(1, 2).unwrap();
        let sites = linspace(-1.0, 1.0, 5);
        let values: Vec<Vec<f64>> = sites.iter().map(|x| vec![x[0].exp()]).collect();
        let s = unit_weights(sites, values);
        let model = fit_vector_field(&s, &ker, 1e-2).unwrap();
        assert!(model.provenance.normal_residual_rel <= NORMAL_RESIDUAL_TOL);
        assert!(!model.provenance.solver.is_empty());
        assert!(model.provenance.r.is_none());
    }
}
