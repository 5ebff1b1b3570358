//! Domain descriptions and the geometric quantities the pipeline needs:
//! Voronoi cell volumes (quadrature weights), fill distances, regular
//! collocation/verification grids, and nodes on a spherical hypersurface.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vec_ops::dist;

/// Minimum separation below which two sites count as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

const PRIMES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("sites {i} and {j} coincide (separation below {DUPLICATE_TOL:e}); cell volumes are undefined")]
    DuplicateSites { i: usize, j: usize },
    #[error("site {index} lies outside the sampling box")]
    SiteOutsideDomain { index: usize },
    #[error("site list is empty")]
    EmptySites,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error("no grid points remain in the region{}; enlarge the region or reduce the spacing", if *.excluded > 0 { " after exclusion" } else { "" })]
    EmptyGrid { excluded: usize },
    #[error("surface nodes are only implemented for dimensions 1-3, got {0}")]
    UnsupportedDimension(usize),
}

/// Axis-aligned box `[lo_1, hi_1] × … × [lo_d, hi_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GeometryError> {
        let b = BoxRegion { lo, hi };
        b.validate()?;
        Ok(b)
    }

    /// The symmetric box `[−a, a]^d`.
    pub fn symmetric(d: usize, a: f64) -> Self {
        BoxRegion {
            lo: vec![-a; d],
            hi: vec![a; d],
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(GeometryError::InvalidBox(
                "bounds must be nonempty and of equal length".into(),
            ));
        }
        for (l, h) in self.lo.iter().zip(&self.hi) {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(GeometryError::InvalidBox(format!(
                    "need finite lo < hi per axis, got [{l}, {h}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (l, h))| *x >= l - tol && *x <= h + tol)
    }
}

/// A compact region: an axis-aligned box or a closed ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Region {
    Box(BoxRegion),
    Ball { center: Vec<f64>, radius: f64 },
}

impl Region {
    pub fn validate(&self) -> Result<(), GeometryError> {
        match self {
            Region::Box(b) => b.validate(),
            Region::Ball { center, radius } => {
                if center.is_empty() {
                    return Err(GeometryError::InvalidBox("ball center is empty".into()));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(GeometryError::InvalidArg(format!(
                        "ball radius must be positive, got {radius}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Box(b) => b.dim(),
            Region::Ball { center, .. } => center.len(),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Region::Box(b) => b.diameter(),
            Region::Ball { radius, .. } => 2.0 * radius,
        }
    }

    pub fn center(&self) -> Vec<f64> {
        match self {
            Region::Box(b) => b.center(),
            Region::Ball { center, .. } => center.clone(),
        }
    }

    pub fn bounding_box(&self) -> BoxRegion {
        match self {
            Region::Box(b) => b.clone(),
            Region::Ball { center, radius } => BoxRegion {
                lo: center.iter().map(|c| c - radius).collect(),
                hi: center.iter().map(|c| c + radius).collect(),
            },
        }
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        match self {
            Region::Box(b) => b.contains(p, tol),
            Region::Ball { center, radius } => {
                p.len() == center.len() && dist(p, center) <= radius + tol
            }
        }
    }
}

/// Sphere `{x : ‖x − center‖ = radius}`, the level set `h(x) = ‖x − center‖² − radius²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Sphere {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(GeometryError::InvalidArg(format!(
                "sphere radius must be positive, got {}",
                self.radius
            )));
        }
        Ok(())
    }

    /// `h(x) = ‖x − center‖² − radius²`; negative inside, positive outside.
    pub fn level(&self, p: &[f64]) -> f64 {
        let d = dist(p, &self.center);
        d * d - self.radius * self.radius
    }
}

/// Full description of the computational domain: ambient sampling box `X`,
/// compact subdomain `Ω`, equilibrium estimate `x̄` with exclusion radius
/// `ε` (so the working set is `D = Ω \ B_ε(x̄)`), and optionally the
/// hypersurface `Γ` for boundary-pinned fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub x_box: BoxRegion,
    pub omega: Region,
    pub xbar: Vec<f64>,
    pub eps: f64,
    #[serde(default)]
    pub gamma: Option<Sphere>,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        self.x_box.validate()?;
        self.omega.validate()?;
        let d = self.x_box.dim();
        if self.omega.dim() != d {
            return Err(GeometryError::DimensionMismatch {
                expected: d,
                got: self.omega.dim(),
            });
        }
        if self.xbar.len() != d {
            return Err(GeometryError::DimensionMismatch {
                expected: d,
                got: self.xbar.len(),
            });
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(GeometryError::InvalidArg(format!(
                "exclusion radius eps must be positive, got {}",
                self.eps
            )));
        }
        let bb = self.omega.bounding_box();
        if !self.x_box.contains(&bb.lo, 1e-12) || !self.x_box.contains(&bb.hi, 1e-12) {
            return Err(GeometryError::InvalidArg(
                "omega must be contained in the sampling box".into(),
            ));
        }
        if let Some(g) = &self.gamma {
            g.validate()?;
            if g.center.len() != d {
                return Err(GeometryError::DimensionMismatch {
                    expected: d,
                    got: g.center.len(),
                });
            }
            // Γ must stay clear of the excluded ball around x̄: the closest
            // point of the sphere to x̄ is at distance |‖center − x̄‖ − radius|.
            let gap = (dist(&g.center, &self.xbar) - g.radius).abs();
            if gap <= self.eps {
                return Err(GeometryError::InvalidArg(format!(
                    "gamma sphere touches the excluded ball (closest approach {gap:.3e} <= eps {})",
                    self.eps
                )));
            }
        }
        Ok(())
    }
}

/// Sites with their quadrature weights and fill distance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedSites {
    pub x: Vec<Vec<f64>>,
    pub w: Vec<f64>,
    pub h_x: f64,
    pub w_norm: f64,
}

impl WeightedSites {
    /// Computes weights and fill distance for `x` inside `x_box`.
    pub fn build(
        x: &[Vec<f64>],
        x_box: &BoxRegion,
        n_mc: usize,
        n_candidates: usize,
        seed: u64,
    ) -> Result<Self, GeometryError> {
        let w = voronoi_weights(x, x_box, n_mc, seed)?;
        let h_x = fill_distance(x, &Region::Box(x_box.clone()), n_candidates)?;
        let w_norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(WeightedSites {
            x: x.to_vec(),
            w,
            h_x,
            w_norm,
        })
    }
}

/// Removes from `points` every entry lying within [`DUPLICATE_TOL`] of some
/// point in `others`; returns the survivors and the number removed. Used to
/// curate interior collocation sets against boundary nodes, which may not
/// coincide.
pub fn drop_coinciding(points: &[Vec<f64>], others: &[Vec<f64>]) -> (Vec<Vec<f64>>, usize) {
    let kept: Vec<Vec<f64>> = points
        .iter()
        .filter(|p| others.iter().all(|o| dist(p, o) >= DUPLICATE_TOL))
        .cloned()
        .collect();
    let removed = points.len() - kept.len();
    (kept, removed)
}

pub(crate) fn check_pairwise_distinct(x: &[Vec<f64>]) -> Result<(), GeometryError> {
    for i in 0..x.len() {
        for j in (i + 1)..x.len() {
            if dist(&x[i], &x[j]) < DUPLICATE_TOL {
                return Err(GeometryError::DuplicateSites { i, j });
            }
        }
    }
    Ok(())
}

/// Van der Corput radical inverse of `n` in the given base.
fn radical_inverse(mut n: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut x = 0.0;
    let mut f = inv;
    while n > 0 {
        x += (n % base) as f64 * f;
        n /= base;
        f *= inv;
    }
    x
}

/// Index of the site nearest to `p`; ties break to the lowest index.
pub(crate) fn nearest_site(p: &[f64], x: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d2 = f64::INFINITY;
    for (i, s) in x.iter().enumerate() {
        let d2: f64 = p.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 < best_d2 {
            best_d2 = d2;
            best = i;
        }
    }
    best
}

/// Estimates the volumes of the Voronoi cells of the sites inside `x_box`
/// by counting nearest-site assignments of a randomized low-discrepancy
/// sequence. The returned weights satisfy `Σ w_i = vol(x_box)` exactly
/// because the counts partition the sample; individual weights carry the
/// quasi-Monte-Carlo error and may round to zero for very small cells.
pub fn voronoi_weights(
    x: &[Vec<f64>],
    x_box: &BoxRegion,
    n_mc: usize,
    seed: u64,
) -> Result<Vec<f64>, GeometryError> {
    x_box.validate()?;
    let m = x.len();
    if m == 0 {
        return Err(GeometryError::EmptySites);
    }
    let d = x_box.dim();
    if d > PRIMES.len() {
        return Err(GeometryError::UnsupportedDimension(d));
    }
    for (i, s) in x.iter().enumerate() {
        if s.len() != d {
            return Err(GeometryError::DimensionMismatch {
                expected: d,
                got: s.len(),
            });
        }
        if !x_box.contains(s, 1e-12) {
            return Err(GeometryError::SiteOutsideDomain { index: i });
        }
    }
    check_pairwise_distinct(x)?;
    if n_mc < 10 * m {
        return Err(GeometryError::InvalidArg(format!(
            "n_mc = {n_mc} is too small; need at least 10 samples per site ({})",
            10 * m
        )));
    }

    // Halton sequence with a seeded Cranley-Patterson rotation: deterministic
    // per seed, low-discrepancy, and different seeds give independent shifts.
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
    let mut counts = vec![0u64; m];
    let mut p = vec![0.0; d];
    for i in 0..n_mc {
        for (j, pj) in p.iter_mut().enumerate() {
            let u = (radical_inverse(i as u64 + 1, PRIMES[j]) + shift[j]).fract();
            *pj = x_box.lo[j] + u * (x_box.hi[j] - x_box.lo[j]);
        }
        counts[nearest_site(&p, x)] += 1;
    }
    let vol = x_box.volume();
    let mut w: Vec<f64> = counts
        .iter()
        .map(|&c| vol * c as f64 / n_mc as f64)
        .collect();
    // pin the total cell volume to vol(X) exactly: the counts sum to n_mc,
    // so only the last-ulp rounding of the divisions is absorbed here
    let partial: f64 = w[..m - 1].iter().sum();
    w[m - 1] = (vol - partial).max(0.0);
    Ok(w)
}

/// Largest nearest-site distance over a deterministic candidate set covering
/// `set` (a regular grid of roughly `n_candidates` points including the
/// corners). This is a lower bound on the true fill distance that converges
/// from below as the candidate count grows.
pub fn fill_distance(
    x: &[Vec<f64>],
    set: &Region,
    n_candidates: usize,
) -> Result<f64, GeometryError> {
    if x.is_empty() {
        return Err(GeometryError::EmptySites);
    }
    set.validate()?;
    let d = set.dim();
    for s in x.iter() {
        if s.len() != d {
            return Err(GeometryError::DimensionMismatch {
                expected: d,
                got: s.len(),
            });
        }
    }
    let bb = set.bounding_box();
    let n_side = ((n_candidates as f64).powf(1.0 / d as f64).floor() as usize).max(2);
    let mut best = 0.0f64;
    let mut consider = |p: &[f64]| {
        let dmin = x
            .iter()
            .map(|s| dist(p, s))
            .fold(f64::INFINITY, f64::min);
        if dmin > best {
            best = dmin;
        }
    };
    let mut idx = vec![0usize; d];
    let mut p = vec![0.0; d];
    loop {
        for j in 0..d {
            p[j] = bb.lo[j] + idx[j] as f64 * (bb.hi[j] - bb.lo[j]) / (n_side - 1) as f64;
        }
        if set.contains(&p, 0.0) {
            consider(&p);
        }
        // odometer increment over the d-dimensional candidate grid
        let mut axis = 0;
        loop {
            if axis == d {
                break;
            }
            idx[axis] += 1;
            if idx[axis] < n_side {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
        if axis == d {
            break;
        }
    }
    if let Region::Ball { center, radius } = set {
        consider(center);
        for j in 0..d {
            for sgn in [-1.0, 1.0] {
                let mut q = center.clone();
                q[j] += sgn * radius;
                consider(&q);
            }
        }
    }
    Ok(best)
}

/// Fill distance of nodes on a sphere, with candidates placed on the sphere
/// itself (two endpoints in 1-D, uniform angles in 2-D, a Fibonacci lattice
/// in 3-D).
pub fn fill_distance_on_sphere(
    x: &[Vec<f64>],
    sphere: &Sphere,
    n_candidates: usize,
) -> Result<f64, GeometryError> {
    if x.is_empty() {
        return Err(GeometryError::EmptySites);
    }
    let candidates = sphere_nodes(sphere, n_candidates.max(2))?;
    Ok(candidates
        .iter()
        .map(|p| {
            x.iter()
                .map(|s| dist(p, s))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max))
}

/// Regular grid over a region, anchored at the region's center so symmetric
/// regions produce symmetric grids.
pub fn make_grid(region: &Region, spacing: f64) -> Result<Vec<Vec<f64>>, GeometryError> {
    make_grid_impl(region, spacing, None)
}

/// [`make_grid`] with the open ball `B_eps(center)` removed (points at
/// distance exactly `eps` are kept).
pub fn make_grid_excluding(
    region: &Region,
    spacing: f64,
    center: &[f64],
    eps: f64,
) -> Result<Vec<Vec<f64>>, GeometryError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(GeometryError::InvalidArg(format!(
            "exclusion radius must be positive, got {eps}"
        )));
    }
    make_grid_impl(region, spacing, Some((center, eps)))
}

fn make_grid_impl(
    region: &Region,
    spacing: f64,
    exclude: Option<(&[f64], f64)>,
) -> Result<Vec<Vec<f64>>, GeometryError> {
    region.validate()?;
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(GeometryError::InvalidArg(format!(
            "grid spacing must be positive, got {spacing}"
        )));
    }
    let d = region.dim();
    if let Some((c, _)) = exclude {
        if c.len() != d {
            return Err(GeometryError::DimensionMismatch {
                expected: d,
                got: c.len(),
            });
        }
    }
    let anchor = region.center();
    let bb = region.bounding_box();
    let tol = 1e-9 * spacing;
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(d);
    for j in 0..d {
        let k_lo = ((bb.lo[j] - anchor[j] - tol) / spacing).ceil() as i64;
        let k_hi = ((bb.hi[j] - anchor[j] + tol) / spacing).floor() as i64;
        axes.push((k_lo..=k_hi).map(|k| anchor[j] + k as f64 * spacing).collect());
    }
    if axes.iter().any(|a| a.is_empty()) {
        return Err(GeometryError::EmptyGrid { excluded: 0 });
    }
    let mut pts = Vec::new();
    let mut excluded = 0usize;
    let mut idx = vec![0usize; d];
    let mut p = vec![0.0; d];
    loop {
        for j in 0..d {
            p[j] = axes[j][idx[j]];
        }
        if region.contains(&p, 1e-12) {
            match exclude {
                Some((c, eps)) if dist(&p, c) < eps => excluded += 1,
                _ => pts.push(p.clone()),
            }
        }
        let mut axis = 0;
        loop {
            if axis == d {
                break;
            }
            idx[axis] += 1;
            if idx[axis] < axes[axis].len() {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
        if axis == d {
            break;
        }
    }
    if pts.is_empty() {
        return Err(GeometryError::EmptyGrid { excluded });
    }
    Ok(pts)
}

/// `n` nodes on a sphere: the two endpoints in 1-D, uniformly spaced angles
/// in 2-D, and a Fibonacci lattice in 3-D.
pub fn sphere_nodes(sphere: &Sphere, n: usize) -> Result<Vec<Vec<f64>>, GeometryError> {
    sphere.validate()?;
    if n == 0 {
        return Err(GeometryError::InvalidArg(
            "need at least one surface node".into(),
        ));
    }
    let c = &sphere.center;
    let r = sphere.radius;
    match c.len() {
        1 => Ok(vec![vec![c[0] - r], vec![c[0] + r]]),
        2 => Ok((0..n)
            .map(|i| {
                let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                vec![c[0] + r * theta.cos(), c[1] + r * theta.sin()]
            })
            .collect()),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
            Ok((0..n)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let phi = golden * i as f64;
                    vec![
                        c[0] + r * rho * phi.cos(),
                        c[1] + r * rho * phi.sin(),
                        c[2] + r * z,
                    ]
                })
                .collect())
        }
        d => Err(GeometryError::UnsupportedDimension(d)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts1(vals: &[f64]) -> Vec<Vec<f64>> {
        vals.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn symmetric_pair_splits_evenly() {
        let b = BoxRegion::new(vec![0.0], vec![1.0]).unwrap();
        let w = voronoi_weights(&pts1(&[0.25, 0.75]), &b, 20000, 1).unwrap();
        assert!((w[0] - 0.5).abs() < 0.01);
        assert!((w[1] - 0.5).abs() < 0.01);
    }

    #[test]
    fn three_sites_quarter_half_quarter() {
        let b = BoxRegion::new(vec![0.0], vec![1.0]).unwrap();
        let w = voronoi_weights(&pts1(&[0.0, 0.5, 1.0]), &b, 20000, 1).unwrap();
        assert!((w[0] - 0.25).abs() < 0.01);
        assert!((w[1] - 0.5).abs() < 0.01);
        assert!((w[2] - 0.25).abs() < 0.01);
    }

    #[test]
    fn single_site_owns_whole_box() {
        let b = BoxRegion::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let w = voronoi_weights(&[vec![0.3, 0.8]], &b, 1000, 7).unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn weights_partition_the_volume() {
        let b = BoxRegion::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let sites = vec![
            vec![-0.5, -0.5],
            vec![0.5, -0.25],
            vec![0.1, 0.9],
            vec![-0.7, 0.3],
        ];
        let w = voronoi_weights(&sites, &b, 5000, 3).unwrap();
        let sum: f64 = w.iter().sum();
        assert!((sum - b.volume()).abs() <= 1e-12 * b.volume());
        assert!(w.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn weights_are_deterministic_per_seed() {
        let b = BoxRegion::new(vec![0.0], vec![1.0]).unwrap();
        let sites = pts1(&[0.1, 0.4, 0.9]);
        let w1 = voronoi_weights(&sites, &b, 2000, 11).unwrap();
        let w2 = voronoi_weights(&sites, &b, 2000, 11).unwrap();
        assert_eq!(w1, w2);
        let w3 = voronoi_weights(&sites, &b, 2000, 12).unwrap();
        assert_ne!(w1, w3);
    }

    #[test]
    fn duplicate_sites_rejected() {
        let b = BoxRegion::new(vec![0.0], vec![1.0]).unwrap();
        let err = voronoi_weights(&pts1(&[0.5, 0.5]), &b, 1000, 0).unwrap_err();
        assert!(matches!(err, GeometryError::DuplicateSites { i: 0, j: 1 }));
    }

    #[test]
    fn site_outside_box_rejected() {
        let b = BoxRegion::new(vec![0.0], vec![1.0]).unwrap();
        let err = voronoi_weights(&pts1(&[0.5, 1.5]), &b, 1000, 0).unwrap_err();
        assert!(matches!(err, GeometryError::SiteOutsideDomain { index: 1 }));
    }

    #[test]
    fn nearest_site_ties_break_low() {
        let sites = pts1(&[0.0, 1.0]);
        assert_eq!(nearest_site(&[0.5], &sites), 0);
    }

    #[test]
    fn fill_distance_forced_by_geometry() {
        let unit = Region::Box(BoxRegion::new(vec![0.0], vec![1.0]).unwrap());
        let h = fill_distance(&pts1(&[0.5]), &unit, 201).unwrap();
        assert_eq!(h, 0.5);
        let h = fill_distance(&pts1(&[0.0]), &unit, 201).unwrap();
        assert_eq!(h, 1.0);
    }

    #[test]
    fn fill_distance_nine_point_grid() {
        let mut sites = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                sites.push(vec![0.5 * i as f64, 0.5 * j as f64]);
            }
        }
        let sq = Region::Box(BoxRegion::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap());
        let h = fill_distance(&sites, &sq, 201 * 201).unwrap();
        assert!((h - 0.125f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn fill_distance_never_grows_when_adding_sites() {
        let sq = Region::Box(BoxRegion::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap());
        let mut sites = vec![vec![0.2, 0.3], vec![0.8, 0.1], vec![0.5, 0.9]];
        let h0 = fill_distance(&sites, &sq, 2500).unwrap();
        sites.push(vec![0.6, 0.5]);
        let h1 = fill_distance(&sites, &sq, 2500).unwrap();
        assert!(h1 <= h0);
    }

    #[test]
    fn fill_distance_on_ball_region() {
        let ball = Region::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        let h = fill_distance(&[vec![0.0, 0.0]], &ball, 10000).unwrap();
        // Farthest candidates are the axis extremes at distance 1.
        assert_eq!(h, 1.0);
    }

    #[test]
    fn grid_excludes_ball_around_center() {
        let seg = Region::Box(BoxRegion::new(vec![-1.0], vec![1.0]).unwrap());
        let g = make_grid_excluding(&seg, 0.5, &[0.0], 0.3).unwrap();
        assert_eq!(g, pts1(&[-1.0, -0.5, 0.5, 1.0]));
    }

    #[test]
    fn coarse_grid_on_ball_errors_after_exclusion() {
        let ball = Region::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        let g = make_grid(&ball, 2.5).unwrap();
        assert_eq!(g, vec![vec![0.0, 0.0]]);
        let err = make_grid_excluding(&ball, 2.5, &[0.0, 0.0], 0.1).unwrap_err();
        assert!(matches!(err, GeometryError::EmptyGrid { excluded: 1 }));
    }

    #[test]
    fn grid_is_anchored_at_region_center() {
        let b = Region::Box(BoxRegion::new(vec![0.1, 0.1], vec![0.9, 0.9]).unwrap());
        let g = make_grid(&b, 0.25).unwrap();
        assert!(g.contains(&vec![0.5, 0.5]));
        assert_eq!(g.len(), 9);
    }

    #[test]
    fn sphere_nodes_uniform_angles() {
        let s = Sphere {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        let g = sphere_nodes(&s, 4).unwrap();
        let expect = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        for (p, e) in g.iter().zip(expect) {
            assert!(dist(p, &e) < 1e-15);
        }
    }

    #[test]
    fn sphere_nodes_1d_and_3d() {
        let s1 = Sphere {
            center: vec![0.5],
            radius: 0.25,
        };
        assert_eq!(sphere_nodes(&s1, 7).unwrap(), pts1(&[0.25, 0.75]));
        let s3 = Sphere {
            center: vec![0.0, 0.0, 0.0],
            radius: 2.0,
        };
        let nodes = sphere_nodes(&s3, 50).unwrap();
        assert_eq!(nodes.len(), 50);
        for p in nodes {
            assert!((dist(&p, &s3.center) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn domain_spec_validation() {
        let ok = DomainSpec {
            x_box: BoxRegion::symmetric(2, 1.0),
            omega: Region::Box(BoxRegion::symmetric(2, 1.0)),
            xbar: vec![0.0, 0.0],
            eps: 0.2,
            gamma: Some(Sphere {
                center: vec![0.0, 0.0],
                radius: 0.9,
            }),
        };
        ok.validate().unwrap();
        let mut bad = ok.clone();
        bad.gamma = Some(Sphere {
            center: vec![0.0, 0.0],
            radius: 0.15,
        });
        assert!(bad.validate().is_err());
        let mut bad2 = ok;
        bad2.eps = 0.0;
        assert!(bad2.validate().is_err());
    }

    #[test]
    fn weighted_sites_build() {
        let b = BoxRegion::new(vec![0.0], vec![1.0]).unwrap();
        let ws = WeightedSites::build(&pts1(&[0.25, 0.75]), &b, 20000, 201, 5).unwrap();
        assert!((ws.w_norm - 0.5f64.hypot(0.5)).abs() < 0.02);
        assert_eq!(ws.h_x, 0.25);
    }
}
