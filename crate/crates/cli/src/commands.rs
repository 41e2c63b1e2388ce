use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use otmm::experiment::{
    parse_estimation_csv, rate_summary_lines, sweep_approximation, sweep_estimation, ApproximationRecord,
    EstimationRecord, RunSpec, APPROXIMATION_HEADER, APPROXIMATION_SCHEMA, ESTIMATION_HEADER, ESTIMATION_SCHEMA,
};
use otmm::metrics::{duality_gaps, map_l2_error, rate_fit, GapConfig, RateFit, RATE_CSV_HEADER};
use otmm::minimax::train_monitored;
use otmm::nets::{Checkpoint, GradientMap};
use otmm::rademacher::{
    empirical_rademacher, representativeness, ClassKind, FunctionClassSpec, COMPLEXITY_CSV_HEADER,
};
use otmm::random::derive_seed;
use otmm::{make_benchmark_pair, Error, MapNet, PotentialSpec, Result, Sampler, StrongPotential, TransportMap};

use crate::config::{parse_skip, RunConfig};
use crate::plot::{Chart, Series};

pub const EVAL_SCHEMA: &str = "# OTMM-EVAL1";
pub const EVAL_HEADER: &str = "metric,value";
pub const RATE_SCHEMA: &str = "# OTMM-RATE1";
pub const RADEMACHER_SCHEMA: &str = "# OTMM-RADEMACHER1";

#[derive(Debug, Parser)]
#[command(name = "otmm", version, about = "Minimax semi-dual optimal transport: benchmarks, training and error sweeps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a benchmark pair (spec file plus frozen ground-truth potential).
    GenBenchmark(GenArgs),
    /// Train a potential and a map on one benchmark.
    Train(RunArgs),
    /// Map error and duality gaps of a checkpoint against a benchmark.
    Eval(EvalArgs),
    /// Error against sample size N = M.
    SweepEstimation(RunArgs),
    /// Error against hidden widths on a large sample pool.
    SweepApproximation(RunArgs),
    /// Log-log slope of an estimation CSV.
    RateFit(RateArgs),
    /// Empirical Rademacher complexity of the potential or composite class.
    Rademacher(RademacherArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hidden widths of the ground-truth potential.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    /// CELU smoothness parameter.
    #[arg(long, default_value_t = 1.0)]
    pub celu: f64,
    #[arg(long, default_value = "quadratic")]
    pub skip: String,
    #[arg(long, default_value = "bench")]
    pub out: PathBuf,
}

/// Shared run settings. Flags override the config file.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub map_hidden: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub potential_hidden: Option<Vec<usize>>,
    /// Record wall-clock times (output is then no longer byte-reproducible).
    #[arg(long)]
    pub timing: bool,
    /// Any config key, as `key=value`; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV report path (default `<out>/eval.csv`).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    /// Estimation sweep CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ClassArg {
    /// Potentials `phi`, evaluated on target samples.
    F,
    /// `<x, T(x)> - phi(T(x))`, evaluated on source samples.
    H,
}

#[derive(Debug, Args)]
pub struct RademacherArgs {
    #[arg(long, value_enum, default_value = "f")]
    pub class: ClassArg,
    #[arg(long, value_delimiter = ',', default_value = "100,200,400,800")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub draws: usize,
    /// Ascent steps per restart.
    #[arg(long, default_value_t = 200)]
    pub opt_steps: usize,
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1.0)]
    pub weight_bound: f64,
    /// Also estimate representativeness against fresh reference samples.
    #[arg(long)]
    pub representativeness: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenBenchmark(a) => gen_benchmark(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::SweepEstimation(a) => estimation(&a),
        Command::SweepApproximation(a) => approximation(&a),
        Command::RateFit(a) => rate(&a),
        Command::Rademacher(a) => rademacher(&a),
    }
}

/// Exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.into(), source })?;
    }
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.into(), source })
}

fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let join = |v: &[usize]| v.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",");
    let mut over: Vec<(String, String)> = Vec::new();
    if let Some(b) = &args.benchmark {
        cfg.benchmark = Some(b.clone());
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = args.steps {
        over.push(("steps".into(), s.to_string()));
    }
    if let Some(s) = args.seed {
        over.push(("seed".into(), s.to_string()));
    }
    if let Some(s) = &args.seeds {
        over.push(("seeds".into(), s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")));
    }
    if let Some(h) = &args.map_hidden {
        over.push(("map_hidden".into(), join(h)));
    }
    if let Some(h) = &args.potential_hidden {
        over.push(("potential_hidden".into(), join(h)));
    }
    if args.timing {
        over.push(("record_time".into(), "true".into()));
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        over.push((k.trim().into(), v.into()));
    }
    for (k, v) in over {
        cfg.set(&k, &v)?;
    }
    cfg.validate()?;
    init_threads(cfg.threads)?;
    Ok(cfg)
}

/// Sizes the global pool from `threads` capped by `OTMM_THREADS`.
fn init_threads(threads: Option<usize>) -> Result<()> {
    let env = match std::env::var("OTMM_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("OTMM_THREADS must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => None,
    };
    let n = match (threads, env) {
        (Some(a), Some(b)) => a.min(b),
        (a, b) => match a.or(b) {
            Some(n) => n,
            None => return Ok(()),
        },
    };
    // already initialized when several commands run in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn run_spec(cfg: &RunConfig, dim: usize) -> RunSpec {
    RunSpec {
        train: cfg.train.clone(),
        potential: cfg.potential_spec(dim),
        map: cfg.map_spec(dim),
        n_test: cfg.n_test,
        gaps: cfg.gaps.then(GapConfig::default),
    }
}

fn gen_benchmark(a: &GenArgs) -> Result<()> {
    if a.dim == 0 {
        return Err(Error::Config("--dim must be >= 1".into()));
    }
    if !(a.celu > 0.0) {
        return Err(Error::Config(format!("--celu must be > 0, got {}", a.celu)));
    }
    let arch = PotentialSpec::new(a.dim, &a.hidden)
        .with_activation(otmm::nets::Activation::Celu(a.celu))
        .with_skip(parse_skip(&a.skip)?)
        .with_beta(a.beta);
    let pair = make_benchmark_pair(a.dim, &arch, a.seed)?;
    let path = pair.save(&a.out)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn train(a: &RunArgs) -> Result<()> {
    let mut cfg = resolve(a)?;
    let pair = cfg.pair()?;
    let seed = cfg.train.seed;
    if cfg.train.checkpoint_every.is_some() {
        cfg.train.checkpoint_dir = Some(cfg.out_dir.join("checkpoints"));
    }
    let spec = run_spec(&cfg, pair.dim());
    let pot = StrongPotential::init(&spec.potential, derive_seed(seed, 10))?;
    let map = MapNet::init(&spec.map, derive_seed(seed, 11))?;
    let train_cfg = otmm::minimax::TrainConfig {
        seed: derive_seed(seed, 12),
        ..cfg.train.clone()
    };
    write_file(&cfg.out_dir.join("config.txt"), &cfg.to_text())?;
    let out = match train_monitored(&train_cfg, &pair.source(), &pair.target(), pot, map, Some(&pair)) {
        Ok(o) => o,
        Err(Error::Diverged { step, loss, last_good }) => {
            let path = cfg.out_dir.join("last_good.otmm");
            last_good.save(&path)?;
            eprintln!("last finite networks saved to {}", path.display());
            return Err(Error::Diverged { step, loss, last_good });
        }
        Err(e) => return Err(e),
    };
    let ck = Checkpoint {
        potential: Some(out.potential.clone()),
        map: Some(out.map.clone()),
    };
    ck.save(&cfg.out_dir.join("model.otmm"))?;
    write_file(&cfg.out_dir.join("history.csv"), &out.history.to_csv())?;
    let series = |label: &str, f: &dyn Fn(&otmm::minimax::TrainRecord) -> Option<f64>| Series {
        label: label.into(),
        points: out.history.records.iter().filter_map(|r| Some((r.step as f64, f(r)?))).collect(),
    };
    let chart = Chart {
        title: "training".into(),
        x_label: "step".into(),
        y_label: "value".into(),
        log_x: false,
        log_y: false,
        series: vec![
            series("loss", &|r| Some(r.loss)),
            series("holdout loss", &|r| Some(r.holdout_loss)),
            series("map error", &|r| r.map_error),
        ],
    };
    write_file(&cfg.out_dir.join("history.svg"), &chart.to_svg())?;
    let err = map_l2_error(&out.map, &pair, pair.source(), cfg.n_test, derive_seed(seed, 13))?;
    println!("map L2 error {:e} +- {:.2e} ({} test points)", err.mean, err.stderr, err.n);
    println!("wrote {}", cfg.out_dir.join("model.otmm").display());
    Ok(())
}

/// `metric,value` rows of an eval CSV.
pub fn parse_eval_csv(text: &str) -> Result<Vec<(String, f64)>> {
    let mut rows = Vec::new();
    let mut seen = false;
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !seen {
            if line != EVAL_HEADER {
                return Err(Error::Parse { line: i + 1, msg: format!("expected header {EVAL_HEADER}") });
            }
            seen = true;
            continue;
        }
        let (k, v) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse { line: i + 1, msg: "expected metric,value".into() })?;
        let v = v
            .parse()
            .map_err(|_| Error::Parse { line: i + 1, msg: format!("bad value {v:?}") })?;
        rows.push((k.to_string(), v));
    }
    Ok(rows)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let cfg = resolve(&a.run)?;
    let pair = cfg.pair()?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let seed = cfg.train.seed;
    let mut rows: Vec<(&str, f64)> = Vec::new();
    let map: Box<dyn TransportMap + '_> = match (&ck.map, &ck.potential) {
        (Some(m), _) => Box::new(m),
        (None, Some(p)) => Box::new(GradientMap(p)),
        (None, None) => return Err(Error::Config("checkpoint holds no networks".into())),
    };
    if map.dim() != pair.dim() {
        return Err(Error::Dimension { expected: pair.dim(), got: map.dim() });
    }
    let err = map_l2_error(map.as_ref(), &pair, pair.source(), cfg.n_test, derive_seed(seed, 13))?;
    println!("map L2 error {:.6e} +- {:.2e} ({} test points)", err.mean, err.stderr, err.n);
    rows.extend([("n_test", err.n as f64), ("l2_error", err.mean), ("l2_error_stderr", err.stderr)]);
    match (&ck.map, &ck.potential) {
        (Some(_), Some(pot)) if cfg.gaps => {
            if pot.spec().dim != pair.dim() {
                return Err(Error::Dimension { expected: pair.dim(), got: pot.spec().dim });
            }
            let g = GapConfig {
                n: cfg.n_test,
                seed: derive_seed(seed, 14),
                ..GapConfig::default()
            };
            let r = duality_gaps(pot, map.as_ref(), &pair, &g)?;
            print!("{}", r.to_text());
            rows.extend([
                ("beta", r.beta),
                ("e1", r.e1.mean),
                ("e1_stderr", r.e1.stderr),
                ("e2", r.e2.mean),
                ("e2_stderr", r.e2.stderr),
                ("bound", r.bound),
                ("bound_holds", if r.bound_holds() { 1.0 } else { 0.0 }),
                ("boundary_hits", r.boundary_hits as f64),
                ("max_iter_hits", r.max_iter_hits as f64),
            ]);
        }
        (None, Some(_)) => println!("potential-only checkpoint: map is its gradient, no duality gaps"),
        _ => {}
    }
    let mut csv = format!("{EVAL_SCHEMA}\n{EVAL_HEADER}\n");
    for (k, v) in rows {
        csv.push_str(&format!("{k},{v:?}\n"));
    }
    let path = a.csv.clone().unwrap_or_else(|| cfg.out_dir.join("eval.csv"));
    write_file(&path, &csv)
}

/// Opens a sweep CSV and returns a row writer that flushes every line.
fn csv_writer(path: &Path, schema: &str, header: &str) -> Result<impl FnMut(&str) + Send> {
    let io = |source| Error::Io { path: path.into(), source };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.into(), source })?;
    }
    let mut f = File::create(path).map_err(io)?;
    writeln!(f, "{schema}\n{header}").map_err(io)?;
    let shown = path.to_path_buf();
    Ok(move |row: &str| {
        if writeln!(f, "{row}").and_then(|_| f.flush()).is_err() {
            eprintln!("warning: failed to write a row to {}", shown.display());
        }
    })
}

fn append(path: &Path, text: &str) -> Result<()> {
    let io = |source| Error::Io { path: path.into(), source };
    let mut f = std::fs::OpenOptions::new().append(true).open(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)
}

fn mean_by<K: Ord + Copy>(rows: impl Iterator<Item = (K, f64)>) -> Vec<(K, f64)> {
    let mut m: std::collections::BTreeMap<K, (f64, usize)> = Default::default();
    for (k, v) in rows {
        let e = m.entry(k).or_default();
        e.0 += v;
        e.1 += 1;
    }
    m.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

fn estimation(a: &RunArgs) -> Result<()> {
    let cfg = resolve(a)?;
    let pair = cfg.pair()?;
    let spec = run_spec(&cfg, pair.dim());
    let path = cfg.out_dir.join("estimation.csv");
    write_file(&cfg.out_dir.join("config.txt"), &cfg.to_text())?;
    let mut row = csv_writer(&path, ESTIMATION_SCHEMA, ESTIMATION_HEADER)?;
    let records = sweep_estimation(&pair, &spec, &cfg.grid, &cfg.seeds, |r: &EstimationRecord| {
        eprintln!("n = {:>6}  seed {}  error {:.4e}", r.n, r.seed, r.result.l2_error);
        row(&r.csv_row());
    })?;
    drop(row);
    match otmm::experiment::estimation_rate(&records) {
        Ok(fit) => {
            append(&path, &rate_summary_lines(&fit))?;
            print!("{}", fit.to_text());
        }
        Err(e) => eprintln!("warning: no rate fit: {e}"),
    }
    let mut series: Vec<Series> = cfg
        .seeds
        .iter()
        .map(|&s| Series {
            label: format!("seed {s}"),
            points: records.iter().filter(|r| r.seed == s).map(|r| (r.n as f64, r.result.l2_error)).collect(),
        })
        .collect();
    series.push(Series {
        label: "mean".into(),
        points: mean_by(records.iter().map(|r| (r.n, r.result.l2_error))).into_iter().map(|(n, e)| (n as f64, e)).collect(),
    });
    let chart = Chart {
        title: "estimation error".into(),
        x_label: "N = M".into(),
        y_label: "L2 error".into(),
        log_x: true,
        log_y: true,
        series,
    };
    write_file(&cfg.out_dir.join("estimation.svg"), &chart.to_svg())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn approximation(a: &RunArgs) -> Result<()> {
    let mut cfg = resolve(a)?;
    let pair = cfg.pair()?;
    cfg.train.n_source = cfg.pool;
    cfg.train.n_target = cfg.pool;
    let spec = run_spec(&cfg, pair.dim());
    let path = cfg.out_dir.join("approximation.csv");
    write_file(&cfg.out_dir.join("config.txt"), &cfg.to_text())?;
    let mut row = csv_writer(&path, APPROXIMATION_SCHEMA, APPROXIMATION_HEADER)?;
    let records = sweep_approximation(
        &pair,
        &spec,
        &cfg.potential_widths,
        &cfg.map_widths,
        &cfg.seeds,
        |r: &ApproximationRecord| {
            eprintln!("h_phi {:>3}  h_t {:>2}  seed {}  error {:.4e}", r.h_phi, r.h_t, r.seed, r.result.l2_error);
            row(&r.csv_row());
        },
    )?;
    let series = cfg
        .potential_widths
        .iter()
        .map(|&hp| Series {
            label: format!("H_phi {hp}"),
            points: mean_by(records.iter().filter(|r| r.h_phi == hp).map(|r| (r.h_t, r.result.l2_error)))
                .into_iter()
                .map(|(h, e)| (h as f64, e))
                .collect(),
        })
        .collect();
    let chart = Chart {
        title: "approximation error".into(),
        x_label: "H_T".into(),
        y_label: "L2 error".into(),
        log_x: true,
        log_y: true,
        series,
    };
    write_file(&cfg.out_dir.join("approximation.svg"), &chart.to_svg())?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Reads the single row of a rate CSV.
pub fn parse_rate_csv(text: &str) -> Result<RateFit> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l == RATE_CSV_HEADER => {}
        _ => return Err(Error::Parse { line: 1, msg: format!("expected header {RATE_CSV_HEADER}") }),
    }
    let (i, l) = lines.next().ok_or(Error::Parse { line: 2, msg: "missing row".into() })?;
    let bad = || Error::Parse { line: i + 1, msg: "expected slope,intercept,residual_rms,points".into() };
    let f: Vec<&str> = l.split(',').collect();
    if f.len() != 4 {
        return Err(bad());
    }
    Ok(RateFit {
        slope: f[0].parse().map_err(|_| bad())?,
        intercept: f[1].parse().map_err(|_| bad())?,
        residual_rms: f[2].parse().map_err(|_| bad())?,
        points: f[3].parse().map_err(|_| bad())?,
    })
}

fn rate(a: &RateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input).map_err(|source| Error::Io { path: a.input.clone(), source })?;
    let records = parse_estimation_csv(&text)?;
    let fit = otmm::experiment::estimation_rate(&records)?;
    print!("{}", fit.to_text());
    if let Some(out) = &a.out {
        let f = &fit;
        let row = format!("{:?},{:?},{:?},{}", f.slope, f.intercept, f.residual_rms, f.points);
        write_file(out, &format!("{RATE_SCHEMA}\n{RATE_CSV_HEADER}\n{row}\n"))?;
    }
    Ok(())
}

fn rademacher(a: &RademacherArgs) -> Result<()> {
    let cfg = resolve(&a.run)?;
    let pair = cfg.pair()?;
    let dim = pair.dim();
    let kind = match a.class {
        ClassArg::F => ClassKind::Potential(cfg.potential_spec(dim)),
        ClassArg::H => ClassKind::Composite(cfg.potential_spec(dim), cfg.map_spec(dim)),
    };
    let spec = FunctionClassSpec {
        weight_bound: a.weight_bound,
        steps: a.opt_steps,
        restarts: a.restarts,
        ..FunctionClassSpec::new(kind)
    };
    let target = pair.target();
    let sampler: &dyn Sampler = match a.class {
        ClassArg::F => &target,
        ClassArg::H => pair.source(),
    };
    if a.sizes.is_empty() || a.sizes.contains(&0) {
        return Err(Error::Config("--sizes needs positive sample sizes".into()));
    }
    let seed = cfg.train.seed;
    let path = cfg.out_dir.join("rademacher.csv");
    let header = if a.representativeness {
        format!("{COMPLEXITY_CSV_HEADER},representativeness")
    } else {
        COMPLEXITY_CSV_HEADER.to_string()
    };
    let mut row = csv_writer(&path, RADEMACHER_SCHEMA, &header)?;
    let mut points = Vec::new();
    for (i, &m) in a.sizes.iter().enumerate() {
        let sample = sampler.sample_seeded(m, derive_seed(seed, 20 + i as u64))?;
        let est = empirical_rademacher(&spec, &sample, a.draws, derive_seed(seed, 40 + i as u64))?;
        let mut line = est.csv_row(spec.label());
        if a.representativeness {
            let r = representativeness(&spec, &sample, sampler, None, derive_seed(seed, 60 + i as u64))?;
            line.push_str(&format!(",{r}"));
        }
        eprintln!("M = {m:>6}  R = {:.4e} +- {:.1e}", est.estimate, est.stderr);
        row(&line);
        points.push((m as f64, est.estimate));
    }
    drop(row);
    append(&path, "# estimate (lower bound): best value found by restarted ascent\n")?;
    if let Ok(fit) = rate_fit(&points) {
        append(&path, &format!("# log_slope {:?}\n", fit.slope))?;
        println!("log-log slope in M: {:.3}", fit.slope);
    }
    println!("wrote {}", path.display());
    Ok(())
}
