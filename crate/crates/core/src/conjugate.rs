//! Convex conjugate `phi*(x) = max_y <x, y> - phi(y)` over the box `[-R, R]^D`.
//!
//! For a `beta`-strongly convex `phi` the objective `f_x(y) = <x,y> - phi(y)`
//! is `beta`-strongly concave, so projected gradient ascent converges to the
//! unique maximizer. The argmax is the optimal map `T_phi(x)`.

use crate::error::{Error, Result};
use crate::nets::Potential;
use crate::random::{normal_tensor, rng};
use crate::tensor::{dot, norm, PointBatch, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `1 / L`, with `L` from power iteration on finite-difference
    /// Hessian-vector products at the start point; halved whenever a step
    /// would decrease the objective.
    Lipschitz,
    /// A constant step, halved on non-monotone steps.
    Fixed(f64),
    /// Armijo backtracking from the previous accepted step, doubled after
    /// each success.
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateConfig {
    pub max_iters: usize,
    /// Stop once the projected gradient norm is at most this.
    pub tol: f64,
    pub restarts: usize,
    pub step: StepRule,
    /// Half-width `R` of the search box.
    pub box_radius: f64,
}

impl Default for ConjugateConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-6,
            restarts: 4,
            step: StepRule::Lipschitz,
            box_radius: 10.0,
        }
    }
}

impl ConjugateConfig {
    /// Box half-width `1.5 * max |y|` over target samples.
    pub fn for_targets(targets: &PointBatch) -> Self {
        Self {
            box_radius: 1.5 * targets.max_row_norm(),
            ..Self::default()
        }
    }

    pub fn with_box_radius(mut self, r: f64) -> Self {
        self.box_radius = r;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.restarts == 0 || !(self.box_radius > 0.0) || self.max_iters == 0 {
            return Err(Error::Config(format!(
                "conjugate solver needs tol > 0, restarts >= 1, R > 0, max_iters >= 1 (got {self:?})"
            )));
        }
        if let StepRule::Fixed(s) = self.step {
            if !(s > 0.0) {
                return Err(Error::Config(format!("fixed step must be > 0, got {s}")));
            }
        }
        Ok(())
    }
}

/// Conjugate value and maximizer at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugatePoint {
    pub value: f64,
    pub argmax: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Hit `max_iters` before reaching the tolerance.
    pub max_iter_reached: bool,
    /// Some coordinate of the maximizer sits on the box boundary.
    pub on_boundary: bool,
    /// Largest distance between the maximizers found by different restarts.
    pub restart_spread: f64,
}

/// Batch results, one row per input point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateBatch {
    pub values: Vec<f64>,
    pub argmax: PointBatch,
    pub max_iter_count: usize,
    pub boundary_count: usize,
    pub max_grad_norm: f64,
    pub max_restart_spread: f64,
}

pub fn conjugate_value<P: Potential + ?Sized>(pot: &P, x: &[f64], cfg: &ConjugateConfig) -> Result<ConjugatePoint> {
    let xs = Tensor::row_vector(x);
    let batch = solve(pot, &xs, None, cfg)?;
    Ok(batch.points.into_iter().next().expect("one row"))
}

/// Conjugates of a batch. `warm` supplies the first start of every point
/// (defaults to the point itself clamped to the box); further restarts begin
/// at distinct box corners.
pub fn conjugate_batch<P: Potential + ?Sized>(
    pot: &P,
    xs: &PointBatch,
    warm: Option<&PointBatch>,
    cfg: &ConjugateConfig,
) -> Result<ConjugateBatch> {
    let solved = solve(pot, xs, warm, cfg)?;
    let mut argmax = Tensor::zeros(xs.rows(), xs.cols());
    let mut values = Vec::with_capacity(xs.rows());
    let (mut mi, mut bd, mut gn, mut sp) = (0, 0, 0.0f64, 0.0f64);
    for (i, p) in solved.points.iter().enumerate() {
        argmax.row_mut(i).copy_from_slice(&p.argmax);
        values.push(p.value);
        mi += p.max_iter_reached as usize;
        bd += p.on_boundary as usize;
        gn = gn.max(p.grad_norm);
        sp = sp.max(p.restart_spread);
    }
    Ok(ConjugateBatch {
        values,
        argmax,
        max_iter_count: mi,
        boundary_count: bd,
        max_grad_norm: gn,
        max_restart_spread: sp,
    })
}

struct Solved {
    points: Vec<ConjugatePoint>,
}

fn corner(k: usize, dim: usize, r: f64) -> Vec<f64> {
    // distinct sign patterns; k = 1 is the all-negative corner
    let pattern = (k - 1) % (1usize << dim.min(20));
    (0..dim)
        .map(|j| if (pattern >> j) & 1 == 1 { r } else { -r })
        .collect()
}

fn solve<P: Potential + ?Sized>(
    pot: &P,
    xs: &PointBatch,
    warm: Option<&PointBatch>,
    cfg: &ConjugateConfig,
) -> Result<Solved> {
    cfg.validate()?;
    crate::nets::check_dim(pot.dim(), xs)?;
    if let Some(w) = warm {
        if w.shape() != xs.shape() {
            return Err(Error::SizeMismatch(format!("warm start {:?} vs points {:?}", w.shape(), xs.shape())));
        }
    }
    let (n, dim, r) = (xs.rows(), xs.cols(), cfg.box_radius);
    let total = n * cfg.restarts;
    // row k*n + i is restart k of point i
    let mut x_all = Tensor::zeros(total, dim);
    let mut y0 = Tensor::zeros(total, dim);
    for k in 0..cfg.restarts {
        for i in 0..n {
            let row = k * n + i;
            x_all.row_mut(row).copy_from_slice(xs.row(i));
            let start: Vec<f64> = if k == 0 {
                warm.map_or(xs.row(i), |w| w.row(i)).iter().map(|v| v.clamp(-r, r)).collect()
            } else {
                corner(k, dim, r)
            };
            y0.row_mut(row).copy_from_slice(&start);
        }
    }
    let raw = ascend(pot, &x_all, y0, cfg)?;

    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let rows: Vec<usize> = (0..cfg.restarts).map(|k| k * n + i).collect();
        let best = *rows
            .iter()
            .max_by(|&&a, &&b| raw.values[a].total_cmp(&raw.values[b]))
            .expect("restarts >= 1");
        let mut spread = 0.0f64;
        for &a in &rows {
            spread = spread.max(crate::tensor::sq_dist(raw.y.row(a), raw.y.row(best)).sqrt());
        }
        let argmax = raw.y.row(best).to_vec();
        let on_boundary = argmax.iter().any(|v| v.abs() >= r * (1.0 - 1e-12));
        points.push(ConjugatePoint {
            value: raw.values[best],
            argmax,
            grad_norm: raw.grad_norms[best],
            iterations: raw.iterations[best],
            max_iter_reached: raw.grad_norms[best] > cfg.tol,
            on_boundary,
            restart_spread: spread,
        });
    }
    Ok(Solved { points })
}

struct Ascent {
    y: PointBatch,
    values: Vec<f64>,
    grad_norms: Vec<f64>,
    iterations: Vec<usize>,
}

/// Objective values and ascent directions `x - grad phi(y)` for selected rows.
fn objective(pot: &(impl Potential + ?Sized), x: &PointBatch, y: &PointBatch, rows: &[usize]) -> Result<(Vec<f64>, PointBatch)> {
    let ys = y.select_rows(rows);
    let (phi, grad) = pot.values_and_grads(&ys)?;
    let mut dir = grad;
    let mut vals = Vec::with_capacity(rows.len());
    for (k, &row) in rows.iter().enumerate() {
        let xr = x.row(row);
        vals.push(dot(xr, ys.row(k)) - phi[k]);
        dir.row_mut(k).iter_mut().zip(xr).for_each(|(g, xv)| *g = xv - *g);
    }
    Ok((vals, dir))
}

/// Projected gradient: zero the components that push out of the box.
fn projected_norm(y: &[f64], g: &[f64], r: f64) -> f64 {
    y.iter()
        .zip(g)
        .map(|(&yv, &gv)| {
            if (yv >= r && gv > 0.0) || (yv <= -r && gv < 0.0) {
                0.0
            } else {
                gv * gv
            }
        })
        .sum::<f64>()
        .sqrt()
}

fn check_finite(vals: &[f64], dir: &PointBatch, rows: &[usize], iter: usize) -> Result<()> {
    if let Some(k) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "conjugate ascent",
            format!("non-finite objective at row {} iteration {iter}", rows[k]),
        ));
    }
    if !dir.all_finite() {
        return Err(Error::numerical("conjugate ascent", format!("non-finite gradient at iteration {iter}")));
    }
    Ok(())
}

/// Power iteration on finite-difference Hessian-vector products of `phi`.
fn lipschitz_estimates(pot: &(impl Potential + ?Sized), y: &PointBatch) -> Result<Vec<f64>> {
    let (rows, dim) = y.shape();
    let mut v = normal_tensor(rows, dim, &mut rng(0x5eed));
    let (_, g0) = pot.values_and_grads(y)?;
    let mut est = vec![pot.strong_convexity().max(1e-3); rows];
    for _ in 0..8 {
        let mut probe = y.clone();
        let mut eps = vec![0.0; rows];
        for i in 0..rows {
            let nv = norm(v.row(i)).max(1e-300);
            v.row_mut(i).iter_mut().for_each(|a| *a /= nv);
            eps[i] = 1e-5 * (1.0 + norm(y.row(i)));
            let e = eps[i];
            probe.row_mut(i).iter_mut().zip(v.row(i)).for_each(|(p, d)| *p += e * d);
        }
        let (_, g1) = pot.values_and_grads(&probe)?;
        for i in 0..rows {
            let hv: Vec<f64> = g1.row(i).iter().zip(g0.row(i)).map(|(a, b)| (a - b) / eps[i]).collect();
            let l = norm(&hv);
            if l.is_finite() && l > 0.0 {
                est[i] = est[i].max(l);
                v.row_mut(i).copy_from_slice(&hv);
            }
        }
    }
    Ok(est)
}

fn ascend(pot: &(impl Potential + ?Sized), x: &PointBatch, mut y: PointBatch, cfg: &ConjugateConfig) -> Result<Ascent> {
    let total = x.rows();
    let r = cfg.box_radius;
    let all: Vec<usize> = (0..total).collect();
    let mut steps = match cfg.step {
        StepRule::Lipschitz => lipschitz_estimates(pot, &y)?.into_iter().map(|l| 1.0 / l).collect(),
        StepRule::Fixed(s) => vec![s; total],
        StepRule::Backtracking => vec![1.0; total],
    };
    let (mut values, dirs) = objective(pot, x, &y, &all)?;
    check_finite(&values, &dirs, &all, 0)?;
    let mut grad_norms: Vec<f64> = (0..total).map(|i| projected_norm(y.row(i), dirs.row(i), r)).collect();
    let mut iterations = vec![0usize; total];
    // direction rows are stored per active row position
    let mut active: Vec<usize> = all.iter().copied().filter(|&i| grad_norms[i] > cfg.tol).collect();
    let mut dir_of: Vec<Vec<f64>> = (0..total).map(|i| dirs.row(i).to_vec()).collect();
    drop(dirs);

    for iter in 1..=cfg.max_iters {
        if active.is_empty() {
            break;
        }
        let mut cand = Tensor::zeros(total, x.cols());
        for &i in &active {
            let s = steps[i];
            for (j, c) in cand.row_mut(i).iter_mut().enumerate() {
                *c = (y[(i, j)] + s * dir_of[i][j]).clamp(-r, r);
            }
        }
        let cand_rows = cand.select_rows(&active);
        let (phi, grad) = pot.values_and_grads(&cand_rows)?;
        let mut next_active = Vec::with_capacity(active.len());
        for (k, &i) in active.iter().enumerate() {
            let xr = x.row(i);
            let val = dot(xr, cand_rows.row(k)) - phi[k];
            let dir: Vec<f64> = xr.iter().zip(grad.row(k)).map(|(a, b)| a - b).collect();
            if !val.is_finite() || dir.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical(
                    "conjugate ascent",
                    format!("non-finite objective at row {i} iteration {iter}, step {:e}", steps[i]),
                ));
            }
            iterations[i] = iter;
            // sufficient-increase test along the projected step
            let moved: f64 = cand_rows.row(k).iter().zip(y.row(i)).map(|(a, b)| (a - b) * (a - b)).sum();
            let armijo = match cfg.step {
                StepRule::Backtracking => 0.5 * moved / steps[i].max(1e-300) * 0.5,
                _ => 0.0,
            };
            if val + 1e-15 * (1.0 + val.abs()) >= values[i] + armijo {
                y.row_mut(i).copy_from_slice(cand_rows.row(k));
                values[i] = val;
                grad_norms[i] = projected_norm(y.row(i), &dir, r);
                dir_of[i] = dir;
                if cfg.step == StepRule::Backtracking {
                    steps[i] *= 2.0;
                }
            } else {
                steps[i] *= 0.5;
            }
            if grad_norms[i] > cfg.tol && steps[i] > 1e-300 {
                next_active.push(i);
            }
        }
        active = next_active;
    }
    Ok(Ascent {
        y,
        values,
        grad_norms,
        iterations,
    })
}
