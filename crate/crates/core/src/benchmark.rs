//! Benchmark pairs with a known optimal map.
//!
//! Targets are pushforwards of the source through `grad psi*` for a random
//! strongly convex potential `psi*`, so the optimal map is known exactly. A
//! Gaussian special case uses the closed-form affine map instead.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nets::{Activation, Checkpoint, GradientMap, Potential, PotentialSpec, StrongPotential, TransportMap};
use crate::oracle::{gaussian_ot_map, AffineMap, QuadraticPotential};
use crate::random::{derive_seed, normal_tensor, rng, uniform_tensor, Rng};
use crate::sampling::{GaussianComponent, MixtureSpec, Sampler};
use crate::tensor::{PointBatch, Tensor};

/// Smallest strong-convexity modulus accepted for a benchmark potential.
pub const MIN_BENCH_BETA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    /// `T* = grad psi*`; targets are `T*(x)` for source draws `x`.
    Potential(StrongPotential),
    /// Affine `T*` between two Gaussians; targets are drawn from `target`.
    Gaussian { map: AffineMap, target: MixtureSpec },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPair {
    source: MixtureSpec,
    truth: GroundTruth,
    seed: u64,
}

impl BenchmarkPair {
    /// Pair with an explicit ground-truth potential.
    pub fn from_potential(source: MixtureSpec, psi: StrongPotential, seed: u64) -> Result<Self> {
        if psi.dim() != source.dim() {
            return Err(Error::Dimension {
                expected: source.dim(),
                got: psi.dim(),
            });
        }
        Ok(Self {
            source,
            truth: GroundTruth::Potential(psi),
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source(&self) -> &MixtureSpec {
        &self.source
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    /// The ground-truth potential `psi*`, when the pair was built from one.
    pub fn psi(&self) -> Option<&StrongPotential> {
        match &self.truth {
            GroundTruth::Potential(p) => Some(p),
            GroundTruth::Gaussian { .. } => None,
        }
    }

    /// Closed-form optimal dual potential `phi* = (psi*)*` for Gaussian pairs.
    pub fn dual_potential(&self) -> Option<QuadraticPotential> {
        match &self.truth {
            GroundTruth::Gaussian { map, .. } => map.conjugate_potential().ok(),
            GroundTruth::Potential(_) => None,
        }
    }

    pub fn target(&self) -> TargetSampler<'_> {
        TargetSampler(self)
    }

    pub fn sample_source(&self, n: usize, seed: u64) -> Result<PointBatch> {
        crate::sampling::sample_mixture(&self.source, n, seed)
    }

    pub fn sample_target(&self, n: usize, seed: u64) -> Result<PointBatch> {
        if n == 0 {
            return Err(Error::EmptyBatch("sample_target needs n >= 1"));
        }
        self.target().sample_seeded(n, seed)
    }

    /// `E |T*(x)|^2` under the source, by Monte Carlo on `n` draws.
    pub fn target_second_moment(&self, n: usize, seed: u64) -> Result<f64> {
        let t = self.apply(&self.sample_source(n, seed)?)?;
        Ok(t.iter_rows().map(|r| crate::tensor::dot(r, r)).sum::<f64>() / n as f64)
    }
}

impl TransportMap for BenchmarkPair {
    fn dim(&self) -> usize {
        self.source.dim()
    }

    fn apply(&self, x: &PointBatch) -> Result<PointBatch> {
        match &self.truth {
            GroundTruth::Potential(p) => GradientMap(p).apply(x),
            GroundTruth::Gaussian { map, .. } => map.apply(x),
        }
    }
}

/// Draws from `q = T*#p`.
#[derive(Clone, Copy)]
pub struct TargetSampler<'a>(&'a BenchmarkPair);

impl Sampler for TargetSampler<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn sample(&self, n: usize, rng: &mut Rng) -> Result<PointBatch> {
        match &self.0.truth {
            GroundTruth::Potential(_) => {
                let x = self.0.source.sample(n, rng)?;
                self.0.apply(&x)
            }
            GroundTruth::Gaussian { target, .. } => target.sample(n, rng),
        }
    }
}

/// Three-component source mixture used by [`make_benchmark_pair`].
///
/// Means are `N(0, 4 I)` draws; each covariance is `0.3 I + G G^T / (2D)`
/// for a standard normal `G`; weights are equal.
pub fn default_source(dim: usize, seed: u64) -> Result<MixtureSpec> {
    if dim == 0 {
        return Err(Error::Config("dimension must be >= 1".into()));
    }
    let mut r = rng(seed);
    let components = (0..3)
        .map(|_| {
            let mean = normal_tensor(1, dim, &mut r).map(|v| 2.0 * v).into_vec();
            let g = normal_tensor(dim, dim, &mut r);
            let mut cov = g.matmul(&g.transpose()).expect("square").map(|v| v / (2.0 * dim as f64));
            for i in 0..dim {
                cov[(i, i)] += 0.3;
            }
            GaussianComponent {
                weight: 1.0 / 3.0,
                mean,
                cov: crate::oracle::linalg::symmetrize(&cov),
            }
        })
        .collect::<Vec<_>>();
    let mut components = components;
    // exact unit sum
    components[2].weight = 1.0 - components[0].weight - components[1].weight;
    MixtureSpec::new(components)
}

/// Random benchmark: a three-Gaussian source and a random smooth potential
/// of architecture `arch`.
pub fn make_benchmark_pair(dim: usize, arch: &PotentialSpec, seed: u64) -> Result<BenchmarkPair> {
    if arch.dim != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: arch.dim,
        });
    }
    if arch.activation == Activation::Relu {
        return Err(Error::Config("benchmark potentials need a smooth (CELU) activation".into()));
    }
    if !(arch.beta >= MIN_BENCH_BETA) {
        return Err(Error::Config(format!(
            "benchmark potentials need beta >= {MIN_BENCH_BETA}, got {}",
            arch.beta
        )));
    }
    let source = default_source(dim, derive_seed(seed, 1))?;
    let psi = StrongPotential::init(arch, derive_seed(seed, 2))?;
    BenchmarkPair::from_potential(source, psi, seed)
}

pub fn make_gaussian_pair(mean_p: &[f64], cov_p: &Tensor, mean_q: &[f64], cov_q: &Tensor) -> Result<BenchmarkPair> {
    let source = MixtureSpec::gaussian(mean_p.to_vec(), cov_p.clone())?;
    let target = MixtureSpec::gaussian(mean_q.to_vec(), cov_q.clone())?;
    let map = gaussian_ot_map(mean_p, cov_p, mean_q, cov_q)?;
    Ok(BenchmarkPair {
        source,
        truth: GroundTruth::Gaussian { map, target },
        seed: 0,
    })
}

/// Fraction of random pairs violating `<T(x1) - T(x2), x1 - x2> >= -tol`.
pub fn monotonicity_violations(map: &impl TransportMap, pairs: usize, radius: f64, tol: f64, seed: u64) -> Result<usize> {
    let mut r = rng(seed);
    let d = map.dim();
    let a = uniform_tensor(pairs, d, -radius, radius, &mut r);
    let b = uniform_tensor(pairs, d, -radius, radius, &mut r);
    let (ta, tb) = (map.apply(&a)?, map.apply(&b)?);
    Ok((0..pairs)
        .filter(|&i| {
            let s: f64 = (0..d).map(|j| (ta[(i, j)] - tb[(i, j)]) * (a[(i, j)] - b[(i, j)])).sum();
            s < -tol
        })
        .count())
}

// ---- spec files ----

const HEADER: &str = "OTMM-BENCH1";

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.17e}")).collect::<Vec<_>>().join(" ")
}

fn write_gaussian(out: &mut String, key: &str, mean: &[f64], cov: &Tensor) {
    let _ = writeln!(out, "{key}_mean {}", fmt_vec(mean));
    let _ = writeln!(out, "{key}_cov {}", fmt_vec(cov.as_slice()));
}

impl BenchmarkPair {
    /// Text form of the pair. For potential pairs `psi_file` names the
    /// sibling checkpoint holding `psi*`.
    pub fn to_spec_text(&self, psi_file: &str) -> String {
        let mut out = format!("{HEADER}\n");
        let _ = writeln!(out, "dim {}", self.dim());
        let _ = writeln!(out, "seed {}", self.seed);
        match &self.truth {
            GroundTruth::Potential(psi) => {
                let spec = psi.spec();
                out.push_str("kind potential\n");
                for c in self.source.components() {
                    let _ = writeln!(out, "component {:.17e}", c.weight);
                    write_gaussian(&mut out, "source", &c.mean, &c.cov);
                }
                let hidden: Vec<String> = spec.hidden.iter().map(|h| h.to_string()).collect();
                let _ = writeln!(out, "psi_hidden {}", hidden.join(" "));
                let _ = writeln!(
                    out,
                    "psi_activation {}",
                    match spec.activation {
                        Activation::Relu => "relu".to_string(),
                        Activation::Celu(n) => format!("celu {n:.17e}"),
                    }
                );
                let _ = writeln!(out, "psi_beta {:.17e}", spec.beta);
                let _ = writeln!(out, "psi_checkpoint {psi_file}");
            }
            GroundTruth::Gaussian { target, .. } => {
                out.push_str("kind gaussian\n");
                let (p, q) = (&self.source.components()[0], &target.components()[0]);
                write_gaussian(&mut out, "source", &p.mean, &p.cov);
                write_gaussian(&mut out, "target", &q.mean, &q.cov);
            }
        }
        out
    }

    /// Writes `benchmark.txt` (and `psi.otmm` for potential pairs) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let spec_path = dir.join("benchmark.txt");
        if let Some(psi) = self.psi() {
            Checkpoint::with_potential(psi.clone()).save(&dir.join("psi.otmm"))?;
        }
        std::fs::write(&spec_path, self.to_spec_text("psi.otmm")).map_err(|e| Error::io(&spec_path, e))?;
        Ok(spec_path)
    }

    /// Reads a spec file written by [`BenchmarkPair::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_spec_text(&text, |name| {
            let ck = Checkpoint::load(&base.join(name))?;
            ck.potential
                .ok_or_else(|| Error::Config(format!("checkpoint {name} holds no potential")))
        })
    }

    pub fn from_spec_text(
        text: &str,
        load_psi: impl FnOnce(&str) -> Result<StrongPotential>,
    ) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == HEADER => {}
            _ => return Err(Error::parse(1, format!("expected header {HEADER}"))),
        }
        let mut dim = None;
        let mut seed = 0u64;
        let mut kind = None;
        let mut weights = Vec::new();
        let mut means: Vec<(String, Vec<f64>)> = Vec::new();
        let mut covs: Vec<(String, Vec<f64>)> = Vec::new();
        let mut psi_hidden = None;
        let mut psi_act = None;
        let mut psi_beta = None;
        let mut psi_file = None;
        for (i, line) in lines {
            let lineno = i + 1;
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.collect();
            let nums = || -> Result<Vec<f64>> {
                rest.iter()
                    .map(|s| s.parse::<f64>().map_err(|_| Error::parse(lineno, format!("bad number {s:?}"))))
                    .collect()
            };
            let single = || -> Result<&str> {
                match rest.as_slice() {
                    [v] => Ok(v),
                    _ => Err(Error::parse(lineno, format!("{key} takes one value"))),
                }
            };
            match key {
                "dim" => dim = Some(single()?.parse::<usize>().map_err(|_| Error::parse(lineno, "bad dim"))?),
                "seed" => seed = single()?.parse().map_err(|_| Error::parse(lineno, "bad seed"))?,
                "kind" => kind = Some(single()?.to_string()),
                "component" => weights.push(nums()?.first().copied().ok_or_else(|| Error::parse(lineno, "missing weight"))?),
                "source_mean" | "target_mean" => means.push((key.to_string(), nums()?)),
                "source_cov" | "target_cov" => covs.push((key.to_string(), nums()?)),
                "psi_hidden" => {
                    psi_hidden = Some(
                        rest.iter()
                            .map(|s| s.parse::<usize>().map_err(|_| Error::parse(lineno, "bad width")))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "psi_activation" => {
                    psi_act = Some(match rest.as_slice() {
                        ["relu"] => Activation::Relu,
                        ["celu", n] => Activation::Celu(n.parse().map_err(|_| Error::parse(lineno, "bad celu"))?),
                        _ => return Err(Error::parse(lineno, "activation must be relu or celu <n>")),
                    })
                }
                "psi_beta" => psi_beta = Some(single()?.parse::<f64>().map_err(|_| Error::parse(lineno, "bad beta"))?),
                "psi_checkpoint" => psi_file = Some(single()?.to_string()),
                other => return Err(Error::parse(lineno, format!("unknown key {other:?}"))),
            }
        }
        let dim = dim.ok_or_else(|| Error::parse(0, "missing dim"))?;
        if dim == 0 {
            return Err(Error::Config("dimension must be >= 1".into()));
        }
        let gaussian = |mean: &[f64], cov: &[f64]| -> Result<(Vec<f64>, Tensor)> {
            if mean.len() != dim || cov.len() != dim * dim {
                return Err(Error::SizeMismatch(format!("gaussian parameters do not have dimension {dim}")));
            }
            Ok((mean.to_vec(), Tensor::from_vec(dim, dim, cov.to_vec())?))
        };
        let pick = |list: &[(String, Vec<f64>)], key: &str| -> Vec<Vec<f64>> {
            list.iter().filter(|(k, _)| k == key).map(|(_, v)| v.clone()).collect()
        };
        match kind.as_deref() {
            Some("potential") => {
                let (ms, cs) = (pick(&means, "source_mean"), pick(&covs, "source_cov"));
                if ms.len() != weights.len() || cs.len() != weights.len() || weights.is_empty() {
                    return Err(Error::parse(0, "each component needs a weight, mean and covariance"));
                }
                let components = weights
                    .iter()
                    .zip(ms.iter().zip(&cs))
                    .map(|(&weight, (m, c))| {
                        let (mean, cov) = gaussian(m, c)?;
                        Ok(GaussianComponent { weight, mean, cov })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let source = MixtureSpec::new(components)?;
                let file = psi_file.ok_or_else(|| Error::parse(0, "missing psi_checkpoint"))?;
                let psi = load_psi(&file)?;
                let expect = PotentialSpec {
                    dim,
                    hidden: psi_hidden.ok_or_else(|| Error::parse(0, "missing psi_hidden"))?,
                    activation: psi_act.ok_or_else(|| Error::parse(0, "missing psi_activation"))?,
                    skip: psi.spec().skip,
                    beta: psi_beta.ok_or_else(|| Error::parse(0, "missing psi_beta"))?,
                };
                if psi.spec() != expect {
                    return Err(Error::Config(format!("checkpoint {file} does not match the listed architecture")));
                }
                Self::from_potential(source, psi, seed)
            }
            Some("gaussian") => {
                let one = |list: &[(String, Vec<f64>)], key: &str| -> Result<Vec<f64>> {
                    match pick(list, key).as_slice() {
                        [v] => Ok(v.clone()),
                        _ => Err(Error::parse(0, format!("expected exactly one {key}"))),
                    }
                };
                let (mp, cp) = gaussian(&one(&means, "source_mean")?, &one(&covs, "source_cov")?)?;
                let (mq, cq) = gaussian(&one(&means, "target_mean")?, &one(&covs, "target_cov")?)?;
                let mut pair = make_gaussian_pair(&mp, &cp, &mq, &cq)?;
                pair.seed = seed;
                Ok(pair)
            }
            _ => Err(Error::parse(0, "kind must be potential or gaussian")),
        }
    }
}
