//! Reconstruction of Lyapunov functions from noisy samples of an unknown
//! vector field.
//!
//! The pipeline has two stages. First, each component of the right-hand side
//! of `ẋ = f(x)` is learned from samples `y_i = f(x_i) + η_i` by weighted
//! regularized least squares in the native space of a compactly supported
//! radial kernel, with Voronoi cell volumes as quadrature weights
//! ([`vfield`]). Second, a Lyapunov function candidate is constructed as the
//! generalized Hermite interpolant that matches prescribed orbital-derivative
//! values of the fitted field at collocation points — either `⟨∇V, f⟩ = −p`
//! for a positive definite rate `p` ([`lyap::fit_v`]) or `⟨∇T, f⟩ = −c̄`
//! pinned by boundary data on a surrounding hypersurface ([`lyap::fit_t`]).
//!
//! [`testbed`] ships reference systems with independent closed-form and
//! flow-integration oracles, and [`cli`] wires everything into a batch
//! command-line tool with JSON/CSV interfaces.

pub mod cli;
pub mod geometry;
pub mod io;
pub mod kernel;
pub mod lyap;
pub mod testbed;
pub mod vfield;

pub(crate) mod vec_ops {
    //! Small helpers for points represented as `&[f64]`.

    pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn norm(a: &[f64]) -> f64 {
        dot(a, a).sqrt()
    }

    pub fn dist(a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}
