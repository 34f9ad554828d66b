//! `fourier-sdr` command line: `fit`, `sweep`, `verify`, `plot`.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical abort.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::driver::{run_alternating, RadiusSpec, RunConfig};
use crate::error::{Result, SdrError};
use crate::experiments::{ackley_indicator_target, ackley_subspace, emit_chart, run_sweep, SweepSpec, SweepTable};
use crate::fourier::{verify_suite, DEFAULT_HALF_WIDTH, DEFAULT_POINTS};
use crate::model::Activation;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "fourier-sdr", version, about = "Sufficient dimension reduction by penalized alternating ridge fitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the alternating scheme on the Ackley-plus-indicator target.
    Fit(FitArgs),
    /// Sweep dimension, C and λ on the Ackley target and write a CSV table.
    Sweep(SweepArgs),
    /// Run the grid Fourier checks and print their residuals.
    Verify(VerifyArgs),
    /// Convert a sweep CSV to an SVG chart.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    Paper,
    Desk,
}

/// Run parameters shared by `fit` and `sweep`. Unset flags fall back to the
/// config file, then to the preset.
#[derive(Args, Debug, Default)]
struct RunFlags {
    #[arg(long)]
    lambda: Option<f64>,
    /// Cutoff steepness; `inf` for the hard ball.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, conflicts_with = "quantile_p")]
    radius: Option<f64>,
    /// Set R so that P[|x| > R] = p under the Gaussian input density.
    #[arg(long)]
    quantile_p: Option<f64>,
    /// Outer iterations N.
    #[arg(long)]
    iters: Option<usize>,
    /// Ridge units M.
    #[arg(long)]
    units: Option<usize>,
    /// Gaussian sample count K.
    #[arg(long)]
    gauss_samples: Option<usize>,
    /// Cutoff sample count L.
    #[arg(long)]
    cutoff_samples: Option<usize>,
    /// Adam steps per outer iteration.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_parser = parse_activation)]
    activation: Option<Activation>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Flat `key = value` file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for the parallel reductions; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Height of the indicator bump added to the Ackley function.
    #[arg(long)]
    c: Option<f64>,
    #[command(flatten)]
    run: RunFlags,
    /// Result JSON.
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration CSV trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Final model in its text format.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [4usize])]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = crate::experiments::DEFAULT_C_VALUES)]
    c_values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = crate::experiments::DEFAULT_LAMBDAS)]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
    seeds: Vec<u64>,
    #[command(flatten)]
    run: RunFlags,
    /// Result CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the chart here.
    #[arg(long)]
    chart: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Directory to export the 1-D test grids and their transforms as CSV.
    #[arg(long)]
    export_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Sweep CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_activation(s: &str) -> std::result::Result<Activation, String> {
    s.parse().map_err(|e: SdrError| e.to_string())
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(SdrError),
}

impl From<SdrError> for Failure {
    fn from(e: SdrError) -> Self {
        Failure::Run(e)
    }
}

/// Parse `argv` (including the program name) and dispatch.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}

fn dispatch(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Fit(args) => {
            let threads = args.run.threads;
            with_threads(threads, || fit(args))
        }
        Command::Sweep(args) => {
            let threads = args.run.threads;
            with_threads(threads, || sweep(args))
        }
        Command::Verify(args) => verify(args),
        Command::Plot(args) => plot(args),
    }
}

fn with_threads<T>(
    threads: Option<usize>,
    job: impl FnOnce() -> std::result::Result<T, Failure> + Send,
) -> std::result::Result<T, Failure>
where
    T: Send,
{
    match threads {
        None => job(),
        Some(0) => Err(Failure::Usage("--threads must be ≥ 1".into())),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Failure::Usage(format!("cannot start thread pool: {e}")))?;
            pool.install(job)
        }
    }
}

/// Flat `key = value` settings with `#` comments.
fn read_config_file(path: &Path) -> std::result::Result<BTreeMap<String, String>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

const CONFIG_KEYS: [&str; 17] = [
    "n",
    "k",
    "seed",
    "c",
    "lambda",
    "gamma",
    "radius",
    "quantile_p",
    "iters",
    "units",
    "gauss_samples",
    "cutoff_samples",
    "steps",
    "lr",
    "activation",
    "preset",
    "warm_start",
];

fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| SdrError::Parse { line: idx + 1, msg };
        let (key, value) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
        let key = key.trim().replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(err(format!("unknown key `{key}`")));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

struct Settings<'a> {
    file: BTreeMap<String, String>,
    flags: &'a RunFlags,
}

impl Settings<'_> {
    fn pick<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> std::result::Result<Option<T>, Failure>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.file
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Failure::Usage(format!("config key `{key}`: invalid value `{v}`: {e}")))
            })
            .transpose()
    }

    fn preset(&self) -> std::result::Result<Preset, Failure> {
        if let Some(p) = self.flags.preset {
            return Ok(p);
        }
        match self.file.get("preset").map(String::as_str) {
            None | Some("paper") => Ok(Preset::Paper),
            Some("desk") => Ok(Preset::Desk),
            Some(other) => Err(Failure::Usage(format!("unknown preset `{other}`"))),
        }
    }

    /// Builds the run configuration for dimension `n` and subspace rank `k`.
    fn config(&self, n: usize, k: usize, seed: u64) -> std::result::Result<RunConfig, Failure> {
        let f = self.flags;
        let mut cfg = match self.preset()? {
            Preset::Paper => RunConfig::paper(n, k),
            Preset::Desk => RunConfig::desk(n, k),
        };
        cfg.seed = seed;
        if let Some(v) = self.pick(f.lambda, "lambda")? {
            cfg.lambda = v;
        }
        if let Some(v) = self.pick(f.gamma, "gamma")? {
            cfg.gamma = v;
        }
        cfg.radius = match (f.radius, f.quantile_p) {
            (Some(r), _) => RadiusSpec::Fixed(r),
            (_, Some(p)) => RadiusSpec::Quantile(p),
            _ => match (self.pick::<f64>(None, "radius")?, self.pick::<f64>(None, "quantile_p")?) {
                (Some(_), Some(_)) => {
                    return Err(Failure::Usage("config sets both `radius` and `quantile_p`".into()))
                }
                (Some(r), None) => RadiusSpec::Fixed(r),
                (None, Some(p)) => RadiusSpec::Quantile(p),
                (None, None) => cfg.radius,
            },
        };
        if let Some(v) = self.pick(f.iters, "iters")? {
            cfg.iterations = v;
        }
        if let Some(v) = self.pick(f.units, "units")? {
            cfg.units = v;
        }
        if let Some(v) = self.pick(f.gauss_samples, "gauss_samples")? {
            cfg.gauss_samples = v;
        }
        if let Some(v) = self.pick(f.cutoff_samples, "cutoff_samples")? {
            cfg.cutoff_samples = v;
        }
        if let Some(v) = self.pick(f.steps, "steps")? {
            cfg.optimizer.step_count = v;
        }
        if let Some(v) = self.pick(f.lr, "lr")? {
            cfg.optimizer.learning_rate = v;
        }
        if let Some(v) = self.pick::<bool>(None, "warm_start")? {
            cfg.optimizer.warm_start = v;
        }
        if let Some(v) = self.pick(f.activation, "activation")? {
            cfg.activation = v;
        }
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn settings(flags: &RunFlags) -> std::result::Result<Settings<'_>, Failure> {
    let file = match &flags.config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };
    Ok(Settings { file, flags })
}

fn write(path: &Path, contents: &str) -> std::result::Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Run(SdrError::Io(e)))
}

fn fit(args: FitArgs) -> std::result::Result<(), Failure> {
    let s = settings(&args.run)?;
    let missing = |name: &str| Failure::Usage(format!("missing required value --{name} (flag or config file)"));
    let n = s.pick(args.n, "n")?.ok_or_else(|| missing("n"))?;
    let k = s.pick(args.k, "k")?.ok_or_else(|| missing("k"))?;
    let seed = s.pick(args.seed, "seed")?.unwrap_or(0);
    let c = s.pick(args.c, "c")?.unwrap_or(0.0);
    let cfg = s.config(n, k, seed)?;

    let target = ackley_indicator_target(n, c).map_err(|e| Failure::Usage(e.to_string()))?;
    let p_true = ackley_subspace(n)?;
    let res = run_alternating(&cfg, &target, Some(&p_true))?;

    write(&args.out, &res.to_json()?)?;
    if let Some(path) = &args.trace {
        write(path, &res.trace_csv()?)?;
    }
    if let Some(path) = &args.model_out {
        write(path, &res.model.to_text())?;
    }
    match res.trace.last() {
        Some(last) => println!(
            "n={n} k={k} lambda={} seed={seed} iterations={} phi1={:e} phi2={:e} gap={:e} acc={}",
            cfg.lambda,
            res.trace.len(),
            last.phi1,
            last.phi2,
            last.gap,
            last.acc.map_or("-".into(), |a| format!("{a:.6}"))
        ),
        None => println!("n={n} k={k} iterations=0"),
    }
    let t = res.timings;
    eprintln!(
        "timings: sampling {:.3}s optimize {:.3}s spectral {:.3}s",
        t.sampling.as_secs_f64(),
        t.optimize.as_secs_f64(),
        t.spectral.as_secs_f64()
    );
    Ok(())
}

fn sweep(args: SweepArgs) -> std::result::Result<(), Failure> {
    let s = settings(&args.run)?;
    let first_n = *args.dims.first().ok_or_else(|| Failure::Usage("--dims must not be empty".into()))?;
    let base = s.config(first_n, 2, 0)?;
    let spec = SweepSpec {
        dims: args.dims,
        c_values: args.c_values,
        lambdas: args.lambdas,
        seeds: args.seeds,
        base,
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let table = run_sweep(&spec)?;
    write(&args.out, &table.to_csv())?;
    if let Some(path) = &args.chart {
        write(path, &emit_chart(&table)?)?;
    }
    let failed = table.rows.iter().filter(|r| r.failed()).count();
    println!("{} rows, {failed} failed", table.rows.len());
    for curve in table.mean_curves() {
        let pts: Vec<String> = curve.points.iter().map(|(l, a)| format!("{l}:{a:.4}")).collect();
        println!("n={} C={} mean acc by lambda {}", curve.n, curve.c, pts.join(" "));
    }
    Ok(())
}

fn verify(args: VerifyArgs) -> std::result::Result<(), Failure> {
    let report = verify_suite()?;
    for (name, check) in &report.convolution {
        println!(
            "convolution {name}: residual {:.3e} scale {:.12}{}",
            check.residual,
            check.scale_ratio,
            if check.unresolved { " (unresolved at boundary)" } else { "" }
        );
    }
    println!("weierstrass gaussian: sup error {:.3e}", report.weierstrass_sup_error);
    for (name, fraction) in &report.support {
        println!("support {name}: fraction {fraction:.6}");
    }
    if let Some(dir) = &args.export_dir {
        fs::create_dir_all(dir).map_err(|e| Failure::Run(SdrError::Io(e)))?;
        for (name, g) in crate::fourier::convolution_cases(DEFAULT_POINTS, DEFAULT_HALF_WIDTH) {
            write(&dir.join(format!("{name}.csv")), &g.to_csv())?;
            write(
                &dir.join(format!("{name}_fourier.csv")),
                &crate::fourier::grid_fourier(&g).to_csv(),
            )?;
        }
    }
    Ok(())
}

fn plot(args: PlotArgs) -> std::result::Result<(), Failure> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", args.input.display())))?;
    let table = SweepTable::from_csv(&text).map_err(|e| Failure::Usage(format!("{}: {e}", args.input.display())))?;
    let svg = emit_chart(&table).map_err(|e| Failure::Usage(e.to_string()))?;
    write(&args.out, &svg)
}
