use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pairsim::io::{read_tags, PairsimConfig, TagWriter};
use pairsim::sweep::{car_svg, run_sweep, singles_svg, write_csv, SweepInput, SweepMode};
use pairsim::tia::{build_histogram, estimate_car, IntervalExtractor};
use pairsim::{model, simulator, Engine, Error};

/// Monte Carlo simulation and CAR analysis of pulsed photon-pair sources.
#[derive(Debug, Parser)]
#[command(name = "pairsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form rate predictions.
    Model {
        #[command(subcommand)]
        query: ModelQuery,
    },
    /// Generate detector time tags and write a PTAG file.
    Simulate(SimulateArgs),
    /// Run the start/stop analyzer over a PTAG file and estimate CAR.
    Analyze(AnalyzeArgs),
    /// Sweep pump power, analytically or by Monte Carlo.
    Sweep(SweepArgs),
    /// Pair mean that maximises CAR, and the CAR there.
    OptimalMu(Common),
}

#[derive(Debug, Subcommand)]
enum ModelQuery {
    /// Coincidence rate, accidental rate and CAR.
    Car(Common),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EngineArg {
    Direct,
    Thinned,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Analytic,
    Montecarlo,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; missing sections take the default preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mean pairs per pulse.
    #[arg(long, conflicts_with = "power_uw")]
    mu: Option<f64>,
    /// Pump power in microwatts, converted through the power map.
    #[arg(long)]
    power_uw: Option<f64>,
    /// Coincidence window.
    #[arg(long)]
    window_ps: Option<u64>,
}

#[derive(Debug, Args)]
struct Parallel {
    /// Worker threads (default: all cores).
    #[arg(long, env = "PAIRSIM_THREADS", value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    parallel: Parallel,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pulses: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// PTAG file to analyze.
    input: PathBuf,
    /// Configuration supplying the `tia` and `car` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    window_ps: Option<u64>,
    #[arg(long)]
    slot_ps: Option<u64>,
    #[arg(long)]
    n_accidental: Option<usize>,
    /// Restrict the peak centre to LO,HI.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    peak_search_ps: Option<(i64, i64)>,
    #[arg(long)]
    stop_delay_ps: Option<u64>,
    #[arg(long)]
    start_dead_time_ps: Option<u64>,
    #[arg(long)]
    max_interval_ps: Option<u64>,
    /// Use the signal detector as start.
    #[arg(long)]
    swap_channels: bool,
    /// Write the interval histogram here as CSV.
    #[arg(long)]
    histogram_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    bin_ps: u64,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    parallel: Parallel,
    #[arg(long)]
    out: PathBuf,
    /// Write PREFIX_singles.svg and PREFIX_car.svg.
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Pulse budget per point in Monte Carlo mode.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pulses: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
}

fn parse_range(s: &str) -> Result<(i64, i64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo = lo.trim().parse::<i64>().map_err(|e| e.to_string())?;
    let hi = hi.trim().parse::<i64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Direct => Engine::Direct,
            EngineArg::Thinned => Engine::Thinned,
        }
    }
}

type CliResult<T> = Result<T, Error>;

fn load(path: Option<&Path>) -> CliResult<PairsimConfig> {
    match path {
        Some(p) => PairsimConfig::load(p),
        None => Ok(PairsimConfig::default()),
    }
}

fn resolve(common: &Common) -> CliResult<PairsimConfig> {
    let mut cfg = load(common.config.as_deref())?;
    if let Some(mu) = common.mu {
        cfg.source.mu = mu;
    }
    if let Some(p) = common.power_uw {
        cfg.source = cfg.power_map.source_at(p * 1e-6, &cfg.source)?;
    }
    if let Some(w) = common.window_ps {
        cfg.window.width_ps = w;
    }
    Ok(cfg)
}

/// Every run reports the parameters it actually used on stderr.
fn report<T: Serialize>(what: &str, value: &T) {
    let text = serde_json::to_string_pretty(value).unwrap_or_default();
    eprintln!("resolved {what}:\n{text}");
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn init_threads(p: &Parallel) -> CliResult<()> {
    if let Some(n) = p.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn with_path(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn model_car(common: &Common) -> CliResult<()> {
    let cfg = resolve(common)?;
    report("configuration", &cfg);
    cfg.validate()?;
    let d = &cfg.detectors;
    let prediction = model::predict(&cfg.source, &d.signal, &d.idler, &cfg.window)?;
    print_json(&prediction)
}

#[derive(Serialize)]
struct Optimum {
    mu_star: f64,
    car: f64,
    power_w: Option<f64>,
}

fn optimal_mu(common: &Common) -> CliResult<()> {
    let cfg = resolve(common)?;
    report("configuration", &cfg);
    cfg.validate()?;
    let d = &cfg.detectors;
    let mu_star = model::optimal_mu_for(&cfg.source, &d.signal, &d.idler, &cfg.window)?;
    let at = pairsim::SourceParams {
        mu: mu_star,
        ..cfg.source
    };
    let car = model::car(&at, &d.signal, &d.idler, &cfg.window)?;
    let power_w = (cfg.power_map.mu_per_watt > 0.0).then(|| mu_star / cfg.power_map.mu_per_watt);
    print_json(&Optimum { mu_star, car, power_w })
}

fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut cfg = resolve(&args.common)?;
    if let Some(n) = args.pulses {
        cfg.train.n_pulses = n;
    }
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(e) = args.engine {
        cfg.run.engine = e.into();
    }
    report("configuration", &cfg);
    cfg.validate()?;
    init_threads(&args.parallel)?;

    let path = &args.out;
    let mut writer = TagWriter::new(create(path)?, &cfg.tag_header())?;
    let mut failure = None;
    let d = &cfg.detectors;
    let diagnostics = simulator::simulate_stream(
        &cfg.source,
        &d.signal,
        &d.idler,
        &cfg.train,
        &cfg.run.run_config(),
        &mut |tag| {
            if failure.is_none() {
                if let Err(e) = writer.push(tag) {
                    failure = Some(e);
                }
            }
        },
    )?;
    if let Some(e) = failure {
        return Err(match e {
            Error::Stream(io) => with_path(path)(io),
            other => other,
        });
    }
    writer.finish().map_err(|e| match e {
        Error::Stream(io) => with_path(path)(io),
        other => other,
    })?;
    print_json(&diagnostics)
}

fn analyze(args: &AnalyzeArgs) -> CliResult<()> {
    let cfg = load(args.config.as_deref())?;
    let mut tia = cfg.tia;
    let mut car = cfg.car;
    if let Some(v) = args.window_ps {
        car.window_ps = v;
    }
    if let Some(v) = args.slot_ps {
        car.slot_spacing_ps = v;
    }
    if let Some(v) = args.n_accidental {
        car.n_accidental = v;
    }
    if args.peak_search_ps.is_some() {
        car.peak_search_ps = args.peak_search_ps;
    }
    if let Some(v) = args.stop_delay_ps {
        tia.stop_delay_ps = v;
    }
    if let Some(v) = args.start_dead_time_ps {
        tia.start_dead_time_ps = v;
    }
    if let Some(v) = args.max_interval_ps {
        tia.max_interval_ps = v;
    }
    if args.swap_channels {
        tia.swap_channels = true;
    }
    report("tia", &tia);
    report("car", &car);
    car.validate()?;

    let (header, reader) = read_tags(&args.input)?;
    report("file header", &header);
    let mut extractor = IntervalExtractor::new(tia)?;
    let mut intervals = Vec::new();
    for tag in reader {
        let tag = tag.map_err(|e| match e {
            Error::Stream(io) => with_path(&args.input)(io),
            other => other,
        })?;
        extractor.push(tag, &mut |r| intervals.push(r));
    }
    eprintln!(
        "{} starts accepted, {} intervals recorded, {} out of range",
        extractor.accepted_starts(),
        intervals.len(),
        extractor.out_of_range()
    );

    if let Some(path) = &args.histogram_csv {
        let max = tia.max_interval_ps as i64;
        let bin = args.bin_ps as i64;
        let origin = (-max).div_euclid(bin) * bin;
        let n_bins = ((max - origin) / bin + 1) as usize;
        let h = build_histogram(&intervals, args.bin_ps, origin, n_bins)?;
        let mut w = create(path)?;
        h.write_csv(&mut w).and_then(|_| w.flush()).map_err(with_path(path))?;
    }
    let estimate = estimate_car(&intervals, &car)?;
    print_json(&estimate)
}

fn sweep(args: &SweepArgs) -> CliResult<()> {
    let mut cfg = load(args.config.as_deref())?;
    if let Some(m) = args.mode {
        cfg.sweep.mode = match m {
            ModeArg::Analytic => SweepMode::Analytic,
            ModeArg::Montecarlo => SweepMode::MonteCarlo,
        };
    }
    if let Some(n) = args.pulses {
        cfg.sweep.n_pulses_per_point = n;
    }
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(e) = args.engine {
        cfg.run.engine = e.into();
    }
    report("configuration", &cfg);
    cfg.validate()?;
    init_threads(&args.parallel)?;

    let grid: &[SweepInput] = &cfg.sweep.points;
    let mc = cfg.monte_carlo();
    let points = run_sweep(grid, &cfg.sweep_setup(), cfg.sweep.mode, Some(&mc))?;

    let mut w = create(&args.out)?;
    write_csv(&points, &mut w)
        .and_then(|_| w.flush())
        .map_err(with_path(&args.out))?;
    if let Some(prefix) = &args.svg {
        for (suffix, svg) in [("singles", singles_svg(&points)), ("car", car_svg(&points))] {
            let mut name = prefix.as_os_str().to_owned();
            name.push(format!("_{suffix}.svg"));
            let path = PathBuf::from(name);
            std::fs::write(&path, svg).map_err(with_path(&path))?;
        }
    }
    print_json(&points)
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Model {
            query: ModelQuery::Car(c),
        } => model_car(c),
        Command::OptimalMu(c) => optimal_mu(c),
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
