//! Sample-size and width sweeps.
//!
//! Cells run on the rayon pool; rows reach the caller in cell order, so the
//! output does not depend on scheduling.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;

use crate::benchmark::BenchmarkPair;
use crate::error::{Error, Result};
use crate::metrics::{duality_gaps, map_l2_error, rate_fit, GapConfig, RateFit, DEFAULT_TEST_SAMPLES};
use crate::minimax::{train, TrainConfig, TrainOutcome};
use crate::nets::{MapNet, MapSpec, PotentialSpec, StrongPotential};
use crate::random::derive_seed;

/// `N = M` grid of the estimation sweep.
pub const ESTIMATION_GRID: [usize; 4] = [100, 1_000, 10_000, 20_000];
/// Hidden widths of the potential in the approximation sweep.
pub const POTENTIAL_WIDTHS: [usize; 5] = [4, 8, 16, 32, 64];
/// Hidden widths of the map in the approximation sweep.
pub const MAP_WIDTHS: [usize; 4] = [1, 2, 4, 8];
/// Pool size standing in for an effectively unlimited sample.
pub const APPROXIMATION_POOL: usize = 1_000_000;
pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];

pub const ESTIMATION_SCHEMA: &str = "# OTMM-ESTIMATION1";
pub const ESTIMATION_HEADER: &str = "n,m,dim,seed,l2_error,e1,e2,runtime_s";
pub const APPROXIMATION_SCHEMA: &str = "# OTMM-APPROXIMATION1";
pub const APPROXIMATION_HEADER: &str = "h_phi,h_t,dim,seed,l2_error,e1,e2,runtime_s";

/// One trained and evaluated run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunResult {
    pub l2_error: f64,
    pub e1: f64,
    pub e2: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationRecord {
    pub n: usize,
    pub m: usize,
    pub dim: usize,
    pub seed: u64,
    pub result: RunResult,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproximationRecord {
    pub h_phi: usize,
    pub h_t: usize,
    pub dim: usize,
    pub seed: u64,
    pub result: RunResult,
}

/// Settings shared by every cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub train: TrainConfig,
    /// Hidden widths of the potential and the map.
    pub potential: PotentialSpec,
    pub map: MapSpec,
    pub n_test: usize,
    /// Duality gaps are computed only when set.
    pub gaps: Option<GapConfig>,
}

impl RunSpec {
    pub fn new(potential: PotentialSpec, map: MapSpec) -> Self {
        Self {
            train: TrainConfig::default(),
            potential,
            map,
            n_test: DEFAULT_TEST_SAMPLES,
            gaps: Some(GapConfig::default()),
        }
    }
}

/// Trains from seeded initializations and evaluates against the pair.
///
/// Initial networks, data pools and test points depend only on `seed`, so
/// runs that differ in pool size or width share them where possible.
pub fn run_once(pair: &BenchmarkPair, spec: &RunSpec, seed: u64) -> Result<(TrainOutcome, RunResult)> {
    let started = Instant::now();
    let pot = StrongPotential::init(&spec.potential, derive_seed(seed, 10))?;
    let map = MapNet::init(&spec.map, derive_seed(seed, 11))?;
    let cfg = TrainConfig {
        seed: derive_seed(seed, 12),
        ..spec.train.clone()
    };
    let out = train(&cfg, &pair.source(), &pair.target(), pot, map)?;
    let err = map_l2_error(&out.map, pair, pair.source(), spec.n_test, derive_seed(seed, 13))?;
    let (e1, e2) = match &spec.gaps {
        Some(g) => {
            let g = GapConfig {
                seed: derive_seed(seed, 14),
                ..*g
            };
            let r = duality_gaps(&out.potential, &out.map, pair, &g)?;
            (r.e1.mean, r.e2.mean)
        }
        None => (f64::NAN, f64::NAN),
    };
    let runtime_s = if cfg.record_time { started.elapsed().as_secs_f64() } else { 0.0 };
    Ok((
        out,
        RunResult {
            l2_error: err.mean,
            e1,
            e2,
            runtime_s,
        },
    ))
}

/// Runs `cells` in parallel and hands results to `emit` in index order.
/// On failure the rows finished so far are still emitted (in index order)
/// before the first error is returned.
fn run_cells<C: Sync, R: Send + Copy>(
    cells: &[C],
    run: impl Fn(&C) -> Result<R> + Sync,
    mut emit: impl FnMut(&R) + Send,
) -> Result<Vec<R>> {
    struct State<R> {
        done: BTreeMap<usize, R>,
        next: usize,
        out: Vec<R>,
    }
    let state = Mutex::new(State {
        done: BTreeMap::new(),
        next: 0,
        out: Vec::new(),
    });
    let emit = Mutex::new(&mut emit);
    let results: Vec<Result<()>> = cells
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let r = run(c)?;
            let mut guard = state.lock().expect("poisoned");
            let s = &mut *guard;
            s.done.insert(i, r);
            while let Some(r) = s.done.remove(&s.next) {
                (emit.lock().expect("poisoned"))(&r);
                s.out.push(r);
                s.next += 1;
            }
            Ok(())
        })
        .collect();
    let mut s = state.into_inner().expect("poisoned");
    let failure = results.into_iter().find_map(|r| r.err());
    // completed cells behind a failed one
    let rest: Vec<R> = std::mem::take(&mut s.done).into_values().collect();
    for r in &rest {
        (emit.lock().expect("poisoned"))(r);
    }
    s.out.extend(rest);
    match failure {
        Some(e) => Err(e),
        None => Ok(s.out),
    }
}

/// Trains with `N = M = n` for every `n` in `grid` and every seed.
pub fn sweep_estimation(
    pair: &BenchmarkPair,
    spec: &RunSpec,
    grid: &[usize],
    seeds: &[u64],
    emit: impl FnMut(&EstimationRecord) + Send,
) -> Result<Vec<EstimationRecord>> {
    if grid.is_empty() || seeds.is_empty() || grid.contains(&0) {
        return Err(Error::Config("estimation sweep needs a nonempty grid of positive sizes and seeds".into()));
    }
    let cells: Vec<(usize, u64)> = grid.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    run_cells(
        &cells,
        |&(n, seed)| {
            let cell = RunSpec {
                train: TrainConfig {
                    n_source: n,
                    n_target: n,
                    fresh_samples: false,
                    ..spec.train.clone()
                },
                ..spec.clone()
            };
            let (_, result) = run_once(pair, &cell, seed)?;
            Ok(EstimationRecord {
                n,
                m: n,
                dim: pair.dim(),
                seed,
                result,
            })
        },
        emit,
    )
}

/// Trains every `(h_phi, h_t)` width pair on one large pool per seed.
///
/// The potential gets two hidden layers of width `h_phi` and the map two of
/// width `h_t`; other architecture settings come from `spec`.
pub fn sweep_approximation(
    pair: &BenchmarkPair,
    spec: &RunSpec,
    potential_widths: &[usize],
    map_widths: &[usize],
    seeds: &[u64],
    emit: impl FnMut(&ApproximationRecord) + Send,
) -> Result<Vec<ApproximationRecord>> {
    if potential_widths.is_empty() || map_widths.is_empty() || seeds.is_empty() {
        return Err(Error::Config("approximation sweep needs widths and seeds".into()));
    }
    if potential_widths.contains(&0) || map_widths.contains(&0) {
        return Err(Error::Config("widths must be >= 1".into()));
    }
    let mut cells = Vec::new();
    for &hp in potential_widths {
        for &ht in map_widths {
            for &s in seeds {
                cells.push((hp, ht, s));
            }
        }
    }
    run_cells(
        &cells,
        |&(hp, ht, seed)| {
            let layers = |w: usize, depth: usize| vec![w; depth.max(1)];
            let cell = RunSpec {
                potential: PotentialSpec {
                    hidden: layers(hp, spec.potential.hidden.len()),
                    ..spec.potential.clone()
                },
                map: MapSpec::new(spec.map.dim, &layers(ht, spec.map.hidden.len())),
                ..spec.clone()
            };
            let (_, result) = run_once(pair, &cell, seed)?;
            Ok(ApproximationRecord {
                h_phi: hp,
                h_t: ht,
                dim: pair.dim(),
                seed,
                result,
            })
        },
        emit,
    )
}

/// Rate fit over every record of an estimation sweep.
pub fn estimation_rate(records: &[EstimationRecord]) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = records.iter().map(|r| (r.n as f64, r.result.l2_error)).collect();
    rate_fit(&pts)
}

// ---- CSV ----

fn num(v: f64) -> String {
    // shortest round-trip form
    format!("{v:?}")
}

impl EstimationRecord {
    pub fn csv_row(&self) -> String {
        let r = &self.result;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.n,
            self.m,
            self.dim,
            self.seed,
            num(r.l2_error),
            num(r.e1),
            num(r.e2),
            num(r.runtime_s)
        )
    }
}

impl ApproximationRecord {
    pub fn csv_row(&self) -> String {
        let r = &self.result;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.h_phi,
            self.h_t,
            self.dim,
            self.seed,
            num(r.l2_error),
            num(r.e1),
            num(r.e2),
            num(r.runtime_s)
        )
    }
}

/// Data rows of a sweep CSV, skipping `#` lines and checking the header.
fn csv_rows<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut rows = Vec::new();
    let mut seen = false;
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !seen {
            if line != header {
                return Err(Error::parse(i + 1, format!("expected header {header}")));
            }
            seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::parse(i + 1, "expected 8 fields"));
        }
        rows.push((i + 1, f));
    }
    if !seen {
        return Err(Error::parse(0, format!("missing header {header}")));
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::parse(line, format!("bad field {s:?}")))
}

fn result_fields(line: usize, f: &[&str]) -> Result<RunResult> {
    Ok(RunResult {
        l2_error: field(line, f[0])?,
        e1: field(line, f[1])?,
        e2: field(line, f[2])?,
        runtime_s: field(line, f[3])?,
    })
}

pub fn parse_estimation_csv(text: &str) -> Result<Vec<EstimationRecord>> {
    csv_rows(text, ESTIMATION_HEADER)?
        .into_iter()
        .map(|(l, f)| {
            Ok(EstimationRecord {
                n: field(l, f[0])?,
                m: field(l, f[1])?,
                dim: field(l, f[2])?,
                seed: field(l, f[3])?,
                result: result_fields(l, &f[4..])?,
            })
        })
        .collect()
}

pub fn parse_approximation_csv(text: &str) -> Result<Vec<ApproximationRecord>> {
    csv_rows(text, APPROXIMATION_HEADER)?
        .into_iter()
        .map(|(l, f)| {
            Ok(ApproximationRecord {
                h_phi: field(l, f[0])?,
                h_t: field(l, f[1])?,
                dim: field(l, f[2])?,
                seed: field(l, f[3])?,
                result: result_fields(l, &f[4..])?,
            })
        })
        .collect()
}

/// `# key value` lines appended after the rows of an estimation CSV.
pub fn rate_summary_lines(fit: &RateFit) -> String {
    format!(
        "# rate_fit slope {:?}\n# rate_fit intercept {:?}\n# rate_fit residual_rms {:?}\n# rate_fit points {}\n",
        fit.slope, fit.intercept, fit.residual_rms, fit.points
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let r = RunResult {
            l2_error: 0.1234567890123,
            e1: 1e-7,
            e2: f64::NAN,
            runtime_s: 0.0,
        };
        let rows = [
            EstimationRecord { n: 100, m: 100, dim: 2, seed: 0, result: r },
            EstimationRecord { n: 1000, m: 1000, dim: 2, seed: 1, result: RunResult { e2: 3.5, ..r } },
        ];
        let mut text = format!("{ESTIMATION_SCHEMA}\n{ESTIMATION_HEADER}\n");
        for row in &rows {
            text.push_str(&row.csv_row());
            text.push('\n');
        }
        let back = parse_estimation_csv(&text).unwrap();
        assert_eq!(back[1], rows[1]);
        assert!(back[0].result.e2.is_nan() && back[0].result.l2_error == r.l2_error);
        assert!(parse_estimation_csv("n,m\n1,2\n").is_err());
    }

    #[test]
    fn cells_emit_in_order_even_on_failure() {
        let cells: Vec<usize> = (0..6).collect();
        let mut seen = Vec::new();
        let out = run_cells(&cells, |&c| Ok(c * 10), |r: &usize| seen.push(*r)).unwrap();
        assert_eq!(out, vec![0, 10, 20, 30, 40, 50]);
        assert_eq!(seen, out);

        let mut seen = Vec::new();
        let res = run_cells(
            &cells,
            |&c| if c == 2 { Err(Error::numerical("cell", "boom")) } else { Ok(c) },
            |r: &usize| seen.push(*r),
        );
        assert!(res.is_err());
        assert_eq!(seen, vec![0, 1, 3, 4, 5]);
    }
}
