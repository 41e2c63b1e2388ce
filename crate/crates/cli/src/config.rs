//! Flat `key = value` run configuration.
//!
//! ```text
//! # OTMM-CONFIG1
//! steps = 10000
//! map_hidden = 32,32
//! benchmark = out/bench/benchmark.txt
//! ```
//!
//! Blank lines and `#` comments are ignored. Unknown keys are an error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use otmm::experiment::{APPROXIMATION_POOL, DEFAULT_SEEDS, ESTIMATION_GRID, MAP_WIDTHS, POTENTIAL_WIDTHS};
use otmm::metrics::DEFAULT_TEST_SAMPLES;
use otmm::minimax::TrainConfig;
use otmm::nets::{Activation, MapSpec, PotentialSpec, SkipKind};
use otmm::{make_gaussian_pair, BenchmarkPair, Error, Result, Tensor};

pub const CONFIG_SCHEMA: &str = "# OTMM-CONFIG1";

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean_p: Vec<f64>,
    pub cov_p: Vec<f64>,
    pub mean_q: Vec<f64>,
    pub cov_q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub benchmark: Option<PathBuf>,
    pub gaussian: Option<GaussianParams>,
    /// Hidden widths of the map (`H_T` per layer).
    pub map_hidden: Vec<usize>,
    /// Hidden widths of the potential (`H_phi` per layer).
    pub potential_hidden: Vec<usize>,
    pub activation: Activation,
    pub skip: SkipKind,
    pub beta: f64,
    pub out_dir: PathBuf,
    pub n_test: usize,
    pub gaps: bool,
    pub seeds: Vec<u64>,
    pub grid: Vec<usize>,
    pub potential_widths: Vec<usize>,
    pub map_widths: Vec<usize>,
    pub pool: usize,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                record_time: false,
                ..TrainConfig::default()
            },
            benchmark: None,
            gaussian: None,
            map_hidden: vec![32, 32],
            potential_hidden: vec![32, 32],
            activation: Activation::Celu(1.0),
            skip: SkipKind::Quadratic,
            beta: 0.1,
            out_dir: PathBuf::from("out"),
            n_test: DEFAULT_TEST_SAMPLES,
            gaps: true,
            seeds: DEFAULT_SEEDS.to_vec(),
            grid: ESTIMATION_GRID.to_vec(),
            potential_widths: POTENTIAL_WIDTHS.to_vec(),
            map_widths: MAP_WIDTHS.to_vec(),
            pool: APPROXIMATION_POOL,
            threads: None,
        }
    }
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("{key}: bad list entry {s:?}"))))
        .collect()
}

fn one<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("{key}: bad value {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

pub fn parse_activation(v: &str) -> Result<Activation> {
    let v = v.trim();
    if v == "relu" {
        return Ok(Activation::Relu);
    }
    let n = match v.strip_prefix("celu") {
        Some("") => 1.0,
        Some(rest) => one::<f64>("activation", rest.trim_start_matches([':', ' ']))?,
        None => return Err(Error::Config(format!("activation must be relu, celu or celu:<n>, got {v:?}"))),
    };
    Ok(Activation::Celu(n))
}

pub fn parse_skip(v: &str) -> Result<SkipKind> {
    match v.trim() {
        "linear" => Ok(SkipKind::Linear),
        "quadratic" => Ok(SkipKind::Quadratic),
        other => Err(Error::Config(format!("skip must be linear or quadratic, got {other:?}"))),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "steps" => t.steps = one(key, value)?,
            "inner_steps" => t.inner_steps = one(key, value)?,
            "batch_cap" => t.batch_cap = one(key, value)?,
            "lr" => t.adam.lr = one(key, value)?,
            "adam_beta1" => t.adam.beta1 = one(key, value)?,
            "adam_beta2" => t.adam.beta2 = one(key, value)?,
            "adam_eps" => t.adam.eps = one(key, value)?,
            "seed" => t.seed = one(key, value)?,
            "n_source" => t.n_source = one(key, value)?,
            "n_target" => t.n_target = one(key, value)?,
            "fresh_samples" => t.fresh_samples = flag(key, value)?,
            "eval_every" => t.eval_every = one(key, value)?,
            "eval_size" => t.eval_size = one(key, value)?,
            "record_time" => t.record_time = flag(key, value)?,
            "checkpoint_every" => t.checkpoint_every = Some(one(key, value)?),
            "benchmark" => self.benchmark = Some(PathBuf::from(value.trim())),
            "gaussian_mean_p" => self.gaussian_mut().mean_p = list(key, value)?,
            "gaussian_cov_p" => self.gaussian_mut().cov_p = list(key, value)?,
            "gaussian_mean_q" => self.gaussian_mut().mean_q = list(key, value)?,
            "gaussian_cov_q" => self.gaussian_mut().cov_q = list(key, value)?,
            "map_hidden" => self.map_hidden = list(key, value)?,
            "potential_hidden" => self.potential_hidden = list(key, value)?,
            "activation" => self.activation = parse_activation(value)?,
            "skip" => self.skip = parse_skip(value)?,
            "beta" => self.beta = one(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "n_test" => self.n_test = one(key, value)?,
            "gaps" => self.gaps = flag(key, value)?,
            "seeds" => self.seeds = list(key, value)?,
            "grid" => self.grid = list(key, value)?,
            "potential_widths" => self.potential_widths = list(key, value)?,
            "map_widths" => self.map_widths = list(key, value)?,
            "pool" => self.pool = one(key, value)?,
            "threads" => self.threads = Some(one(key, value)?),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    fn gaussian_mut(&mut self) -> &mut GaussianParams {
        self.gaussian.get_or_insert_with(|| GaussianParams {
            mean_p: Vec::new(),
            cov_p: Vec::new(),
            mean_q: Vec::new(),
            cov_q: Vec::new(),
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", i + 1)));
            };
            cfg.set(k.trim(), v).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // relative benchmark paths resolve against the config file
        if let (Some(b), Some(dir)) = (&cfg.benchmark, path.parent()) {
            if b.is_relative() && !b.exists() {
                cfg.benchmark = Some(dir.join(b));
            }
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = format!("{CONFIG_SCHEMA}\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("steps", t.steps.to_string());
        kv("inner_steps", t.inner_steps.to_string());
        kv("batch_cap", t.batch_cap.to_string());
        kv("lr", format!("{:?}", t.adam.lr));
        kv("adam_beta1", format!("{:?}", t.adam.beta1));
        kv("adam_beta2", format!("{:?}", t.adam.beta2));
        kv("adam_eps", format!("{:?}", t.adam.eps));
        kv("seed", t.seed.to_string());
        kv("n_source", t.n_source.to_string());
        kv("n_target", t.n_target.to_string());
        kv("fresh_samples", t.fresh_samples.to_string());
        kv("eval_every", t.eval_every.to_string());
        kv("eval_size", t.eval_size.to_string());
        kv("record_time", t.record_time.to_string());
        if let Some(c) = t.checkpoint_every {
            kv("checkpoint_every", c.to_string());
        }
        if let Some(b) = &self.benchmark {
            kv("benchmark", b.display().to_string());
        }
        if let Some(g) = &self.gaussian {
            kv("gaussian_mean_p", join(&g.mean_p));
            kv("gaussian_cov_p", join(&g.cov_p));
            kv("gaussian_mean_q", join(&g.mean_q));
            kv("gaussian_cov_q", join(&g.cov_q));
        }
        kv("map_hidden", join(&self.map_hidden));
        kv("potential_hidden", join(&self.potential_hidden));
        kv(
            "activation",
            match self.activation {
                Activation::Relu => "relu".into(),
                Activation::Celu(n) => format!("celu:{n:?}"),
            },
        );
        kv(
            "skip",
            match self.skip {
                SkipKind::Linear => "linear".into(),
                SkipKind::Quadratic => "quadratic".into(),
            },
        );
        kv("beta", format!("{:?}", self.beta));
        kv("out_dir", self.out_dir.display().to_string());
        kv("n_test", self.n_test.to_string());
        kv("gaps", self.gaps.to_string());
        kv("seeds", join(&self.seeds));
        kv("grid", join(&self.grid));
        kv("potential_widths", join(&self.potential_widths));
        kv("map_widths", join(&self.map_widths));
        kv("pool", self.pool.to_string());
        if let Some(n) = self.threads {
            kv("threads", n.to_string());
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.map_hidden.contains(&0) || self.potential_hidden.contains(&0) {
            return Err(Error::Config("widths must be >= 1".into()));
        }
        if self.n_test == 0 || self.pool == 0 {
            return Err(Error::Config("n_test and pool must be >= 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        if let Some(b) = &self.benchmark {
            if !b.exists() {
                return Err(Error::Config(format!("benchmark {} does not exist", b.display())));
            }
        }
        Ok(())
    }

    /// The pair named by `benchmark`, or built from the inline Gaussian parameters.
    pub fn pair(&self) -> Result<BenchmarkPair> {
        match (&self.benchmark, &self.gaussian) {
            (Some(path), None) => BenchmarkPair::load(path),
            (None, Some(g)) => {
                let d = g.mean_p.len();
                let mat = |v: &[f64], what: &str| {
                    if v.len() != d * d {
                        return Err(Error::Config(format!("{what} needs {} entries, got {}", d * d, v.len())));
                    }
                    Tensor::from_vec(d, d, v.to_vec())
                };
                if d == 0 || g.mean_q.len() != d {
                    return Err(Error::Config("gaussian means must share a dimension >= 1".into()));
                }
                make_gaussian_pair(&g.mean_p, &mat(&g.cov_p, "gaussian_cov_p")?, &g.mean_q, &mat(&g.cov_q, "gaussian_cov_q")?)
            }
            (Some(_), Some(_)) => Err(Error::Config("set either benchmark or gaussian_* parameters, not both".into())),
            (None, None) => Err(Error::Config("no benchmark given (benchmark = <path> or gaussian_* parameters)".into())),
        }
    }

    pub fn potential_spec(&self, dim: usize) -> PotentialSpec {
        PotentialSpec {
            dim,
            hidden: self.potential_hidden.clone(),
            activation: self.activation,
            skip: self.skip,
            beta: self.beta,
        }
    }

    pub fn map_spec(&self, dim: usize) -> MapSpec {
        MapSpec::new(dim, &self.map_hidden)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("steps", "123").unwrap();
        cfg.set("gaussian_mean_p", "0,0").unwrap();
        cfg.set("activation", "celu:2.5").unwrap();
        cfg.set("checkpoint_every", "7").unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn bad_keys_and_values() {
        assert!(RunConfig::parse("nope = 1").is_err());
        assert!(RunConfig::parse("steps = many").is_err());
        assert!(RunConfig::parse("steps").is_err());
        assert!(RunConfig::parse("skip = cubic").is_err());
        assert_eq!(RunConfig::parse("# c\n\nsteps = 5\n").unwrap().train.steps, 5);
    }
}
