//! Map errors, functional values, duality gaps, transport costs and rate fits.
//!
//! Every Monte-Carlo quantity comes with its standard error.

use std::fmt::Write as _;

use crate::benchmark::BenchmarkPair;
use crate::conjugate::{conjugate_batch, ConjugateConfig};
use crate::error::{Error, Result};
use crate::nets::{Potential, TransportMap};
use crate::sampling::Sampler;
use crate::tensor::{dot, sq_dist, PointBatch};

/// Test-sample count used for map errors unless overridden.
pub const DEFAULT_TEST_SAMPLES: usize = 4096;

/// A Monte-Carlo mean with its standard error `sd / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mean = mean(values);
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / n.max(1) as f64).sqrt(),
            n,
        }
    }

    /// Sum of two independent estimates.
    pub fn plus(self, other: Estimate) -> Self {
        Self {
            mean: self.mean + other.mean,
            stderr: self.stderr.hypot(other.stderr),
            n: self.n.min(other.n),
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn nonempty(n: usize, what: &'static str) -> Result<()> {
    if n == 0 {
        Err(Error::EmptyBatch(what))
    } else {
        Ok(())
    }
}

/// `E |T_hat(x) - T*(x)|^2` under the source.
pub fn map_l2_error(
    map: &(impl TransportMap + ?Sized),
    truth: &(impl TransportMap + ?Sized),
    source: &(impl Sampler + ?Sized),
    n_test: usize,
    seed: u64,
) -> Result<Estimate> {
    nonempty(n_test, "map_l2_error needs n_test >= 1")?;
    let x = source.sample_seeded(n_test, seed)?;
    map_l2_error_on(map, truth, &x)
}

/// Map error on a given batch.
pub fn map_l2_error_on(
    map: &(impl TransportMap + ?Sized),
    truth: &(impl TransportMap + ?Sized),
    x: &PointBatch,
) -> Result<Estimate> {
    nonempty(x.rows(), "map error on an empty batch")?;
    let (a, b) = (map.apply(x)?, truth.apply(x)?);
    let d: Vec<f64> = a.iter_rows().zip(b.iter_rows()).map(|(p, q)| sq_dist(p, q)).collect();
    Ok(Estimate::from_values(&d))
}

/// Per-point terms `<x, T(x)> - phi(T(x))` and `phi(y)`.
pub(crate) fn loss_terms(
    pot: &(impl Potential + ?Sized),
    map: &(impl TransportMap + ?Sized),
    x: &PointBatch,
    y: &PointBatch,
) -> Result<(Vec<f64>, Vec<f64>)> {
    nonempty(x.rows(), "loss needs source points")?;
    nonempty(y.rows(), "loss needs target points")?;
    let t = map.apply(x)?;
    let phi_t = pot.values(&t)?;
    let inner = x
        .iter_rows()
        .zip(t.iter_rows())
        .zip(&phi_t)
        .map(|((xr, tr), p)| dot(xr, tr) - p)
        .collect();
    Ok((inner, pot.values(y)?))
}

/// Monte-Carlo estimate of `L(phi, T) = E_p[<x, T(x)> - phi(T(x))] + E_q[phi(y)]`.
pub fn functional_l(
    pot: &(impl Potential + ?Sized),
    map: &(impl TransportMap + ?Sized),
    source: &(impl Sampler + ?Sized),
    target: &(impl Sampler + ?Sized),
    n: usize,
    seed: u64,
) -> Result<Estimate> {
    nonempty(n, "functional_l needs n >= 1")?;
    let mut r = crate::random::rng(seed);
    let x = source.sample(n, &mut r)?;
    let y = target.sample(n, &mut r)?;
    let (inner, outer) = loss_terms(pot, map, &x, &y)?;
    Ok(Estimate::from_values(&inner).plus(Estimate::from_values(&outer)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapConfig {
    pub n: usize,
    pub seed: u64,
    /// Solver settings; the box radius is overridden from the data.
    pub conjugate: ConjugateConfig,
    /// Gaps may dip below zero by `tol_scale * conjugate.tol`.
    pub tol_scale: f64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_TEST_SAMPLES,
            seed: 0,
            conjugate: ConjugateConfig::default(),
            tol_scale: 10.0,
        }
    }
}

/// Duality gaps of a candidate `(phi_hat, T_hat)` against a benchmark pair.
///
/// `e1` is the inner gap `E[f_x(T_phi(x)) - f_x(T_hat(x))]` and `e2` the outer
/// gap, where `f_x(y) = <x, y> - phi_hat(y)` and `T_phi(x)` is its maximizer.
/// For a `beta`-strongly convex `phi_hat`,
/// `|T_hat - T*|^2 <= (4 / beta) (e1 + e2)` holds pointwise.
///
/// The finer split into approximation and estimation errors (inner and outer
/// terms evaluated at population optima over the network classes) has no
/// computable handle and is not reported.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub e1: Estimate,
    pub e2: Estimate,
    pub beta: f64,
    /// `(4 / beta) (e1 + e2)`.
    pub bound: f64,
    pub map_error: Estimate,
    /// Pointwise `(4 / beta) (e1_i + e2_i) - |T_hat(x_i) - T*(x_i)|^2`.
    pub slack: Estimate,
    pub samples: usize,
    pub tolerance: f64,
    pub max_iter_hits: usize,
    pub boundary_hits: usize,
    pub max_grad_norm: f64,
}

pub const GAP_CSV_HEADER: &str =
    "samples,beta,e1,e1_stderr,e2,e2_stderr,bound,map_error,map_error_stderr,boundary_hits,max_iter_hits";

impl GapReport {
    /// Both gaps are nonnegative up to the solver tolerance.
    pub fn gaps_nonnegative(&self) -> bool {
        self.e1.mean >= -self.tolerance && self.e2.mean >= -self.tolerance
    }

    /// `map_error <= bound` within three standard errors of the pointwise slack.
    pub fn bound_holds(&self) -> bool {
        self.slack.mean >= -3.0 * self.slack.stderr - self.tolerance
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.samples,
            self.beta,
            self.e1.mean,
            self.e1.stderr,
            self.e2.mean,
            self.e2.stderr,
            self.bound,
            self.map_error.mean,
            self.map_error.stderr,
            self.boundary_hits,
            self.max_iter_hits
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples      {}", self.samples);
        let _ = writeln!(s, "beta         {}", self.beta);
        let _ = writeln!(s, "E1 (inner)   {:.6e} +- {:.2e}", self.e1.mean, self.e1.stderr);
        let _ = writeln!(s, "E2 (outer)   {:.6e} +- {:.2e}", self.e2.mean, self.e2.stderr);
        let _ = writeln!(s, "map error    {:.6e} +- {:.2e}", self.map_error.mean, self.map_error.stderr);
        let _ = writeln!(
            s,
            "bound        {:.6e} ({})",
            self.bound,
            if self.bound_holds() { "holds" } else { "VIOLATED" }
        );
        if self.boundary_hits > 0 {
            let _ = writeln!(s, "warning: {} conjugate maximizers on the search box boundary", self.boundary_hits);
        }
        if self.max_iter_hits > 0 {
            let _ = writeln!(s, "warning: {} conjugate solves hit the iteration cap", self.max_iter_hits);
        }
        s
    }
}

pub fn duality_gaps(
    pot: &(impl Potential + ?Sized),
    map: &(impl TransportMap + ?Sized),
    pair: &BenchmarkPair,
    cfg: &GapConfig,
) -> Result<GapReport> {
    let beta = pot.strong_convexity();
    if !(beta > 0.0) {
        return Err(Error::Config(format!("duality gaps need a strongly convex potential, beta = {beta}")));
    }
    nonempty(cfg.n, "duality_gaps needs n >= 1")?;
    let x = pair.sample_source(cfg.n, cfg.seed)?;
    let t_hat = map.apply(&x)?;
    // q-samples as T*(x) on the same x; the target integral of phi* cancels
    let t_star = pair.apply(&x)?;
    let radius = 1.5 * t_hat.max_row_norm().max(t_star.max_row_norm()).max(1.0);
    let solver = cfg.conjugate.with_box_radius(radius);
    let conj = conjugate_batch(pot, &x, Some(&t_hat), &solver)?;
    let f = |t: &PointBatch| -> Result<Vec<f64>> {
        let phi = pot.values(t)?;
        Ok(x.iter_rows().zip(t.iter_rows()).zip(phi).map(|((a, b), p)| dot(a, b) - p).collect())
    };
    let (f_hat, f_star) = (f(&t_hat)?, f(&t_star)?);
    let e1: Vec<f64> = conj.values.iter().zip(&f_hat).map(|(c, h)| c - h).collect();
    let e2: Vec<f64> = conj.values.iter().zip(&f_star).map(|(c, s)| c - s).collect();
    let err: Vec<f64> = t_hat.iter_rows().zip(t_star.iter_rows()).map(|(a, b)| sq_dist(a, b)).collect();
    let slack: Vec<f64> = (0..cfg.n).map(|i| 4.0 / beta * (e1[i] + e2[i]) - err[i]).collect();
    let (e1, e2) = (Estimate::from_values(&e1), Estimate::from_values(&e2));
    Ok(GapReport {
        bound: 4.0 / beta * (e1.mean + e2.mean),
        e1,
        e2,
        beta,
        map_error: Estimate::from_values(&err),
        slack: Estimate::from_values(&slack),
        samples: cfg.n,
        tolerance: cfg.tol_scale * solver.tol,
        max_iter_hits: conj.max_iter_count,
        boundary_hits: conj.boundary_count,
        max_grad_norm: conj.max_grad_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    /// `|x - T(x)|^2 / 2`
    Quadratic,
    /// `-<x, T(x)>`, which has the same optimal map.
    ScalarProduct,
}

pub fn transport_cost(
    map: &(impl TransportMap + ?Sized),
    source: &(impl Sampler + ?Sized),
    n: usize,
    kind: CostKind,
    seed: u64,
) -> Result<Estimate> {
    nonempty(n, "transport_cost needs n >= 1")?;
    let x = source.sample_seeded(n, seed)?;
    let t = map.apply(&x)?;
    let c: Vec<f64> = x
        .iter_rows()
        .zip(t.iter_rows())
        .map(|(a, b)| match kind {
            CostKind::Quadratic => 0.5 * sq_dist(a, b),
            CostKind::ScalarProduct => -dot(a, b),
        })
        .collect();
    Ok(Estimate::from_values(&c))
}

/// Both sides of `|x - y|^2 / 2 = |x|^2 / 2 + |y|^2 / 2 - <x, y>` averaged over a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostDecomposition {
    pub quadratic: f64,
    pub half_sq_source: f64,
    pub half_sq_image: f64,
    pub scalar_product: f64,
}

impl CostDecomposition {
    pub fn residual(&self) -> f64 {
        (self.quadratic - (self.half_sq_source + self.half_sq_image - self.scalar_product)).abs()
    }
}

pub fn cost_decomposition(map: &(impl TransportMap + ?Sized), x: &PointBatch) -> Result<CostDecomposition> {
    nonempty(x.rows(), "cost decomposition on an empty batch")?;
    let t = map.apply(x)?;
    let pairs = || x.iter_rows().zip(t.iter_rows());
    let avg = |f: &dyn Fn(&[f64], &[f64]) -> f64| pairs().map(|(a, b)| f(a, b)).sum::<f64>() / x.rows() as f64;
    Ok(CostDecomposition {
        quadratic: avg(&|a, b| 0.5 * sq_dist(a, b)),
        half_sq_source: avg(&|a, _| 0.5 * dot(a, a)),
        half_sq_image: avg(&|_, b| 0.5 * dot(b, b)),
        scalar_product: avg(&|a, b| dot(a, b)),
    })
}

/// Least-squares line through `(log10 n, log10 error)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
    pub points: usize,
}

pub const RATE_CSV_HEADER: &str = "slope,intercept,residual_rms,points";

impl RateFit {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.slope, self.intercept, self.residual_rms, self.points)
    }

    pub fn to_text(&self) -> String {
        format!(
            "log10(error) = {:.6} * log10(n) + {:.6}  (rms residual {:.3e}, {} points)\n",
            self.slope, self.intercept, self.residual_rms, self.points
        )
    }
}

pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 2 {
        return Err(Error::Config(format!("rate fit needs >= 2 points, got {}", points.len())));
    }
    if let Some(&(n, e)) = points.iter().find(|(n, e)| !(*n > 0.0) || !(*e > 0.0)) {
        return Err(Error::Config(format!("rate fit needs positive values, got ({n}, {e})")));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.log10()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.log10()).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("rate fit needs at least two distinct sample sizes".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(RateFit {
        slope,
        intercept,
        residual_rms: (ss / xs.len() as f64).sqrt(),
        points: xs.len(),
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation, ties given average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::SizeMismatch(format!("spearman needs two equal series of length >= 2, got {} and {}", a.len(), b.len())));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}
