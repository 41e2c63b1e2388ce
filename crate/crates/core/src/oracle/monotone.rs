use crate::error::{Error, Result};

/// One-dimensional quadratic-cost OT between equal-size empirical measures:
/// the `i`-th order statistic of the source goes to the `i`-th of the
/// target, with linear interpolation in between and constant extension
/// outside the sample range.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneMap {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

fn check_sorted(v: &[f64], what: &'static str) -> Result<()> {
    if v.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Unsorted(what));
    }
    Ok(())
}

/// Builds the monotone rearrangement from sorted samples.
pub fn monotone_map_1d(sorted_x: &[f64], sorted_y: &[f64]) -> Result<MonotoneMap> {
    if sorted_x.len() != sorted_y.len() {
        return Err(Error::SizeMismatch(format!("{} vs {} samples", sorted_x.len(), sorted_y.len())));
    }
    if sorted_x.is_empty() {
        return Err(Error::EmptyBatch("monotone map"));
    }
    check_sorted(sorted_x, "source")?;
    check_sorted(sorted_y, "target")?;
    Ok(MonotoneMap {
        xs: sorted_x.to_vec(),
        ys: sorted_y.to_vec(),
    })
}

impl MonotoneMap {
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        // first index with xs[i] > x
        let hi = self.xs.partition_point(|&v| v <= x);
        let lo = hi - 1;
        let (x0, x1) = (self.xs[lo], self.xs[hi]);
        if x1 == x0 {
            return self.ys[lo];
        }
        let t = (x - x0) / (x1 - x0);
        self.ys[lo] + t * (self.ys[hi] - self.ys[lo])
    }

    /// Image of the `i`-th source order statistic.
    pub fn at_order_statistic(&self, i: usize) -> f64 {
        self.ys[i]
    }
}
