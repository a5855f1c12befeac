//! `maxscore` command-line tool.
//!
//! Single results are printed as JSON, curves as CSV preceded by a
//! `# schema: ...` line. With `--out`, output goes to the file and a run
//! manifest is written next to it as `<out>.manifest.json`.
//!
//! Exit status: 0 on success, 1 on invalid input or usage, 2 on I/O failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use maxscore::inference::{identified_set_2d, invert_test, power_report, DrawMode};
use maxscore::instruments::{build_instruments_2d, instruments_from_cells};
use maxscore::lrt::{calibrate, least_favorable, lrt_power, lrt_reject, Calibration, LrtDecision};
use maxscore::montecarlo::{Design, DgpSpec, McConfig, DEFAULT_DF, DEFAULT_LRT_DRAWS};
use maxscore::teststat::{run_test, simulate_quantile, Side};
use maxscore::{
    enumerate_cells, load_covariates, load_probs, load_sample, Covariates, Error, InstrumentSets,
    LrtSpec, NullDist, ParamPoint, Result, Sample, TestConfig, ThetaGrid, DEFAULT_EPSILON,
};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "maxscore", version, about = "Finite-sample inference for binary response models")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test H0: beta = b on observed data.
    Test(TestArgs),
    /// Invert the test over a grid b = s * (1, theta).
    Invert(InvertArgs),
    /// Identified-set membership over a grid, from known probabilities.
    Idset(IdsetArgs),
    /// Violation measure and power bounds at b.
    Power(PowerArgs),
    /// Likelihood ratio test of b against known alternative probabilities.
    Lrt(LrtArgs),
    /// Simulation experiment over a theta grid.
    Mc(McArgs),
    /// Cells of the hyperplane arrangement of the covariate rows.
    Cells(CovArgs),
    /// Instrument directions with side tags.
    Instruments(CovArgs),
}

#[derive(Args, Debug, Serialize)]
struct OutArg {
    /// Write output here instead of stdout (a manifest is written alongside).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct TestArgs {
    /// CSV with columns y, x1..xK.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated parameter vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    b: Vec<f64>,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    eps: f64,
    #[arg(long, default_value_t = 500)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Include per-direction moments in the output.
    #[arg(long)]
    diagnostics: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug, Serialize)]
struct GridArgs {
    /// Sign of the first coefficient.
    #[arg(long, default_value_t = 1, allow_negative_numbers = true)]
    s: i8,
    #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
    grid_lo: f64,
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    grid_hi: f64,
    #[arg(long, default_value_t = 601)]
    grid_points: usize,
}

impl GridArgs {
    fn grid(&self) -> Result<ThetaGrid> {
        ThetaGrid::linspace(self.s, self.grid_lo, self.grid_hi, self.grid_points)
    }
}

#[derive(Args, Debug, Serialize)]
struct InvertArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    eps: f64,
    #[arg(long, default_value_t = 500)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fresh Rademacher draws at every grid point instead of one shared set.
    #[arg(long)]
    independent_draws: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug, Serialize)]
#[group(required = true, multiple = false)]
struct CovSource {
    /// CSV with covariate columns x1..xK.
    #[arg(long)]
    x: Option<PathBuf>,
    /// CSV with columns y, x1..xK (y is ignored where not needed).
    #[arg(long)]
    data: Option<PathBuf>,
}

impl CovSource {
    fn load(&self) -> Result<Covariates> {
        match (&self.x, &self.data) {
            (Some(p), _) => load_covariates(p),
            (_, Some(p)) => Ok(load_sample(p)?.x().clone()),
            _ => unreachable!("clap enforces one source"),
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct IdsetArgs {
    /// CSV with a column p of conditional probabilities.
    #[arg(long)]
    p: PathBuf,
    #[command(flatten)]
    cov: CovSource,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug, Serialize)]
struct PowerArgs {
    #[arg(long)]
    p: PathBuf,
    #[command(flatten)]
    cov: CovSource,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    b: Vec<f64>,
    /// Critical value; simulated from --draws and --seed when omitted.
    #[arg(long)]
    q: Option<f64>,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    eps: f64,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 500)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum LrtMode {
    Randomized,
    Nonrandomized,
}

#[derive(Args, Debug, Serialize)]
struct LrtArgs {
    /// CSV with a column p of alternative probabilities.
    #[arg(long)]
    p_alt: PathBuf,
    #[command(flatten)]
    cov: CovSource,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    b: Vec<f64>,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = LrtMode::Nonrandomized)]
    mode: LrtMode,
    /// Monte Carlo draws when the null law cannot be enumerated.
    #[arg(long, default_value_t = DEFAULT_LRT_DRAWS)]
    lrt_draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug, Serialize)]
struct McArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    design: u8,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    theta0: f64,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// Defaults to theta0 - 3.
    #[arg(long, allow_negative_numbers = true)]
    grid_lo: Option<f64>,
    /// Defaults to theta0 + 3.
    #[arg(long, allow_negative_numbers = true)]
    grid_hi: Option<f64>,
    #[arg(long, default_value_t = 601)]
    grid_points: usize,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    eps: f64,
    #[arg(long, default_value_t = 500)]
    draws: usize,
    #[arg(long, default_value_t = DEFAULT_LRT_DRAWS)]
    lrt_draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Degrees of freedom for design 3.
    #[arg(long, default_value_t = DEFAULT_DF)]
    df: u32,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug, Serialize)]
struct CovArgs {
    #[command(flatten)]
    cov: CovSource,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Serialize)]
struct Manifest<'a, A: Serialize> {
    schema_version: u32,
    subcommand: &'a str,
    version: &'a str,
    argv: Vec<String>,
    threads: usize,
    args: &'a A,
    seeds: Vec<u64>,
    duration_secs: f64,
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Sends `body` to stdout or to `out`, writing the manifest in the latter case.
fn emit<A: Serialize>(
    name: &str,
    args: &A,
    out: &OutArg,
    seeds: Vec<u64>,
    threads: usize,
    started: Instant,
    body: &[u8],
) -> Result<()> {
    let Some(path) = &out.out else {
        let mut stdout = std::io::stdout().lock();
        stdout.write_all(body)?;
        return Ok(stdout.flush()?);
    };
    std::fs::write(path, body)?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        subcommand: name,
        version: env!("CARGO_PKG_VERSION"),
        argv: std::env::args().collect(),
        threads,
        args,
        seeds,
        duration_secs: started.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(json_err)?;
    std::fs::write(manifest_path(path), text + "\n")?;
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value).map_err(json_err)?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn instruments_for(x: &Covariates) -> Result<InstrumentSets> {
    if x.k() == 2 {
        build_instruments_2d(x)
    } else {
        instruments_from_cells(x)
    }
}

fn csv_text(schema: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut s = format!("# schema: {schema}\n{}\n", header.join(","));
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s.into_bytes()
}

#[derive(Serialize)]
struct TestJson {
    schema_version: u32,
    t_stat: f64,
    q: f64,
    reject: bool,
    argmax_side: Option<Side>,
    argmax_v: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostics: Option<Vec<maxscore::teststat::MomentRecord>>,
}

fn cmd_test(a: &TestArgs) -> Result<Vec<u8>> {
    let config = TestConfig::new(a.alpha, a.eps, a.draws, a.seed)?;
    let sample = load_sample(&a.data)?;
    let b = ParamPoint::new(a.b.clone())?;
    let inst = instruments_for(sample.x())?;
    let o = run_test(&sample, b.as_slice(), &inst, &config)?;
    to_json(&TestJson {
        schema_version: SCHEMA_VERSION,
        t_stat: o.t_stat,
        q: o.q,
        reject: o.reject,
        argmax_side: o.argmax_side,
        argmax_v: o.argmax_v,
        diagnostics: a.diagnostics.then_some(o.diagnostics),
    })
}

fn cmd_invert(a: &InvertArgs) -> Result<Vec<u8>> {
    let config = TestConfig::new(a.alpha, a.eps, a.draws, a.seed)?;
    let sample: Sample = load_sample(&a.data)?;
    let mode = if a.independent_draws {
        DrawMode::Independent
    } else {
        DrawMode::Shared
    };
    let inv = invert_test(&sample, &a.grid.grid()?, &config, mode)?;
    Ok(csv_text(
        "maxscore-invert/1",
        &["s", "theta", "t_stat", "q", "reject"],
        inv.rows.iter().map(|r| {
            vec![
                r.s.to_string(),
                r.theta.to_string(),
                r.t_stat.to_string(),
                r.q.to_string(),
                u8::from(r.reject).to_string(),
            ]
        }),
    ))
}

fn cmd_idset(a: &IdsetArgs) -> Result<Vec<u8>> {
    let grid = a.grid.grid()?;
    let x = a.cov.load()?;
    let p = load_probs(&a.p)?;
    let member = identified_set_2d(&p, &x, &grid)?;
    Ok(csv_text(
        "maxscore-idset/1",
        &["s", "theta", "member"],
        grid.thetas().iter().zip(&member).map(|(t, &m)| {
            vec![grid.sign().to_string(), t.to_string(), u8::from(m).to_string()]
        }),
    ))
}

fn cmd_power(a: &PowerArgs) -> Result<Vec<u8>> {
    let x = a.cov.load()?;
    let p = load_probs(&a.p)?;
    let b = ParamPoint::new(a.b.clone())?;
    let inst = instruments_for(&x)?;
    let q = match a.q {
        Some(q) if q.is_finite() && q >= 0.0 => q,
        Some(_) => return Err(Error::Validation("q must be finite and nonnegative".into())),
        None => {
            let config = TestConfig::new(a.alpha, a.eps, a.draws, a.seed)?;
            simulate_quantile(&x, b.as_slice(), &inst, &config)?.q
        }
    };
    to_json(&power_report(&p, &x, b.as_slice(), &inst, q, a.eps, a.gamma)?)
}

#[derive(Serialize)]
struct LrtJson {
    schema_version: u32,
    mode: LrtMode,
    k_log: f64,
    xi: f64,
    size: f64,
    power: f64,
    n_bar: usize,
    exact_null: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    decision: Option<LrtDecision>,
}

fn cmd_lrt(a: &LrtArgs) -> Result<Vec<u8>> {
    let (x, y) = match (&a.cov.x, &a.cov.data) {
        (_, Some(p)) => {
            let s = load_sample(p)?;
            (s.x().clone(), Some(s.y().to_vec()))
        }
        _ => (a.cov.load()?, None),
    };
    let p_alt = load_probs(&a.p_alt)?;
    let b = ParamPoint::new(a.b.clone())?;
    let p_null = least_favorable(&p_alt, &x, b.as_slice())?;
    let n_bar = (0..x.n())
        .filter(|&i| p_null.as_slice()[i] != p_alt.as_slice()[i])
        .count();
    let spec = LrtSpec::new(
        p_null,
        p_alt.clone(),
        a.alpha,
        matches!(a.mode, LrtMode::Randomized),
        NullDist::auto(n_bar, a.lrt_draws, a.seed),
    )?;
    let cal: Calibration = calibrate(&spec)?;
    let power = lrt_power(&p_alt, &spec, &cal, a.lrt_draws, a.seed.wrapping_add(1))?;
    let decision = match y {
        Some(y) => Some(lrt_reject(&y, &spec, &cal, a.seed.wrapping_add(2))?),
        None => None,
    };
    to_json(&LrtJson {
        schema_version: SCHEMA_VERSION,
        mode: a.mode,
        k_log: cal.k_log,
        xi: cal.xi,
        size: cal.size,
        power,
        n_bar,
        exact_null: cal.exact,
        decision,
    })
}

fn cmd_mc(a: &McArgs) -> Result<Vec<u8>> {
    let design = Design::from_number(a.design, a.df)?;
    let dgp = DgpSpec::new(design, a.theta0, a.n, a.seed)?;
    let grid = ThetaGrid::linspace(
        1,
        a.grid_lo.unwrap_or(a.theta0 - 3.0),
        a.grid_hi.unwrap_or(a.theta0 + 3.0),
        a.grid_points,
    )?;
    let config = McConfig {
        alpha: a.alpha,
        epsilon: a.eps,
        draws: a.draws,
        seed: a.seed,
        lrt_draws: a.lrt_draws,
    };
    let result = maxscore::montecarlo::run_experiment(&dgp, &grid, a.reps, &config)?;
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    Ok(buf)
}

fn cmd_cells(a: &CovArgs) -> Result<Vec<u8>> {
    let x = a.cov.load()?;
    let cells = enumerate_cells(&x)?;
    let header: Vec<String> = (1..=x.k()).map(|j| format!("v{j}")).collect();
    let mut out = format!("# schema: maxscore-cells/1\n# count: {}\n", cells.len()).into_bytes();
    let body = csv_text("", &header.iter().map(String::as_str).collect::<Vec<_>>(), cells.iter().map(|v| {
        v.iter().map(f64::to_string).collect()
    }));
    // drop the empty schema line of the generic writer
    out.extend(body.splitn(2, |&c| c == b'\n').nth(1).unwrap_or_default());
    Ok(out)
}

fn cmd_instruments(a: &CovArgs) -> Result<Vec<u8>> {
    let x = a.cov.load()?;
    let inst = instruments_for(&x)?;
    let mut header = vec!["side".to_string()];
    header.extend((1..=x.k()).map(|j| format!("v{j}")));
    let tagged = |tag: &'static str, vs: &[Vec<f64>]| -> Vec<Vec<String>> {
        vs.iter()
            .map(|v| {
                std::iter::once(tag.to_string())
                    .chain(v.iter().map(f64::to_string))
                    .collect()
            })
            .collect()
    };
    let mut rows = tagged("u", inst.upper());
    rows.extend(tagged("l", inst.lower()));
    Ok(csv_text(
        "maxscore-instruments/1",
        &header.iter().map(String::as_str).collect::<Vec<_>>(),
        rows,
    ))
}

fn run(cli: &Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Validation(format!("cannot start thread pool: {e}")))?;
    }
    let started = Instant::now();
    let t = cli.threads;
    match &cli.command {
        Command::Test(a) => emit("test", a, &a.out, vec![a.seed], t, started, &cmd_test(a)?),
        Command::Invert(a) => emit("invert", a, &a.out, vec![a.seed], t, started, &cmd_invert(a)?),
        Command::Idset(a) => emit("idset", a, &a.out, vec![], t, started, &cmd_idset(a)?),
        Command::Power(a) => emit("power", a, &a.out, vec![a.seed], t, started, &cmd_power(a)?),
        Command::Lrt(a) => emit("lrt", a, &a.out, vec![a.seed], t, started, &cmd_lrt(a)?),
        Command::Mc(a) => emit("mc", a, &a.out, vec![a.seed], t, started, &cmd_mc(a)?),
        Command::Cells(a) => emit("cells", a, &a.out, vec![], t, started, &cmd_cells(a)?),
        Command::Instruments(a) => {
            emit("instruments", a, &a.out, vec![], t, started, &cmd_instruments(a)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
