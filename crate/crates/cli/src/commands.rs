use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mfm_nhpp::assess::{self, MetricsReport};
use mfm_nhpp::geo::{self, ColumnMap, FrameKind, GridCounts, PointPattern};
use mfm_nhpp::sampler::{run_chain, PosteriorDraws, ScanOrder};
use mfm_nhpp::sim::{self, FitSettings, Layout, ScenarioSpec};
use mfm_nhpp::summary::{self, FitSummary};
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad input, configuration or I/O; exit code 2.
    Input(String),
    /// Numerical failure inside the model; exit code 3.
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<mfm_nhpp::Error> for CliError {
    fn from(e: mfm_nhpp::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn input_err(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "mfm-nhpp", version, about = "Intensity clustering for spatial Poisson point patterns")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic counts grid with known clusters.
    Simulate(SimulateArgs),
    /// Fit the model to a counts grid or a raw event catalog.
    Fit(FitArgs),
    /// Recompute the posterior summary of an existing fit.
    Summarize(SummarizeArgs),
    /// Compute MAE, LPML and (optionally) the Rand index of fitted runs.
    Evaluate(EvaluateArgs),
    /// Replicated simulation study.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Gamma prior shape.
    #[arg(long)]
    a: Option<f64>,
    /// Gamma prior rate.
    #[arg(long)]
    b: Option<f64>,
    /// Total MCMC sweeps.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k_init: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long, value_enum)]
    scan: Option<ScanArg>,
    /// Largest grid (in cells) for which the co-clustering matrix is built.
    #[arg(long)]
    dahl_max_cells: Option<usize>,
    /// Use every n-th draw for the Dahl summary.
    #[arg(long)]
    dahl_thin: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScanArg {
    Fixed,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FrameArg {
    Global,
    BoundingBox,
}

impl ModelArgs {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref()).map_err(CliError::Input)?;
        macro_rules! set {
            ($field:expr, $flag:expr) => {
                if let Some(v) = $flag {
                    $field = v;
                }
            };
        }
        set!(cfg.model.gamma, self.gamma);
        set!(cfg.model.a, self.a);
        set!(cfg.model.b, self.b);
        set!(cfg.chain.total_iters, self.iters);
        set!(cfg.chain.burnin, self.burnin);
        set!(cfg.chain.seed, self.seed);
        set!(cfg.chain.k_init, self.k_init);
        set!(cfg.chain.thin, self.thin);
        set!(cfg.dahl.max_cells, self.dahl_max_cells);
        set!(cfg.dahl.thin, self.dahl_thin);
        if let Some(scan) = self.scan {
            cfg.chain.scan = match scan {
                ScanArg::Fixed => ScanOrder::Fixed,
                ScanArg::Random => ScanOrder::Random,
            };
        }
        cfg.model.validate()?;
        cfg.chain.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Built-in scenario: 1 = bands-3 (0.2, 10, 20); 2 = blocks-6 (0.2, 5, 20, 40, 80, 200).
    #[arg(long)]
    scenario: Option<u8>,
    /// Named layout (bands-3, blocks-6).
    #[arg(long)]
    layout: Option<String>,
    /// Grid CSV of 1-based true labels.
    #[arg(long)]
    layout_file: Option<PathBuf>,
    /// Comma-separated true intensities.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long)]
    resolution: Option<usize>,
}

fn build_scenario(args: &ScenarioArgs, cfg: &RunConfig, seed: u64) -> CliResult<ScenarioSpec> {
    let sc = &cfg.scenario;
    let preset = args.scenario.or(sc.preset);
    let (default_layout, default_lambdas) = match preset {
        None => (None, None),
        Some(1) => (Some(Layout::Bands3), Some(vec![0.2, 10.0, 20.0])),
        Some(2) => (Some(Layout::Blocks6), Some(vec![0.2, 5.0, 20.0, 40.0, 80.0, 200.0])),
        Some(p) => return Err(input_err(format!("unknown scenario {p} (expected 1 or 2)"))),
    };
    let resolution = args.resolution.unwrap_or(sc.resolution);
    let layout_file = args.layout_file.clone().or_else(|| sc.layout_file.as_ref().map(PathBuf::from));
    let layout = if let Some(path) = layout_file {
        let (r, labels): (usize, Vec<u32>) = geo::read_grid(open(&path)?)?;
        if r != resolution {
            return Err(input_err(format!("layout file {} has resolution {r}, expected {resolution}", path.display())));
        }
        if labels.contains(&0) {
            return Err(input_err(format!("layout file {} must use 1-based labels", path.display())));
        }
        Layout::Matrix(labels.into_iter().map(|l| l - 1).collect())
    } else if let Some(name) = args.layout.as_deref().or(sc.layout.as_deref()) {
        Layout::parse(name)?
    } else {
        default_layout.ok_or_else(|| input_err("give --scenario, --layout or --layout-file"))?
    };
    let lambdas = args
        .lambdas
        .clone()
        .or_else(|| sc.lambdas.clone())
        .or(default_lambdas)
        .ok_or_else(|| input_err("give --lambdas or --scenario"))?;
    Ok(ScenarioSpec::new(resolution, &layout, lambdas, seed)?)
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also scatter uniform event locations inside each cell.
    #[arg(long)]
    points: bool,
    /// Existing directory for counts.csv, truth.csv and points.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Counts grid CSV or an event catalog CSV.
    #[arg(long)]
    input: PathBuf,
    /// Grid resolution for catalog input.
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long, value_enum, default_value = "global")]
    frame: FrameArg,
    /// Drop catalog events below this magnitude.
    #[arg(long)]
    min_mag: Option<f64>,
    #[arg(long, default_value = "longitude")]
    lon_column: String,
    #[arg(long, default_value = "latitude")]
    lat_column: String,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Directory holding draws.ndjson.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    dahl_max_cells: Option<usize>,
    #[arg(long)]
    dahl_thin: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Fit output directory (repeatable); each must hold draws.ndjson and counts.csv.
    #[arg(long)]
    run: Vec<PathBuf>,
    /// Draws file, used together with --counts instead of --run.
    #[arg(long, requires = "counts")]
    draws: Option<PathBuf>,
    #[arg(long, requires = "draws")]
    counts: Option<PathBuf>,
    /// Grid CSV of 1-based true labels; adds the Rand index of the Dahl clustering.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Point CSV (`x,y` in the unit square) for per-point CPO terms.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Write per-point CPO terms here (requires --points).
    #[arg(long, requires = "points")]
    cpo_csv: Option<PathBuf>,
    #[arg(long)]
    dahl_max_cells: Option<usize>,
    #[arg(long)]
    dahl_thin: Option<usize>,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, env = "MFM_NHPP_WORKERS")]
    workers: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| input_err(format!("cannot open {}: {e}", path.display())))
}

fn require_dir(path: &Path) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(input_err(format!("output directory {} does not exist", path.display())))
    }
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> mfm_nhpp::Result<()>) -> CliResult<()> {
    let file = File::create(path).map_err(|e| input_err(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    body(&mut w)?;
    w.flush().map_err(|e| input_err(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn write_points(path: &Path, pattern: &PointPattern) -> CliResult<()> {
    write_file(path, |w| geo::write_points_csv(w, pattern))
}

fn read_points(path: &Path) -> CliResult<PointPattern> {
    geo::read_points_csv(open(path)?).map_err(|e| input_err(format!("invalid points file {}: {e}", path.display())))
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    require_dir(&args.out_dir)?;
    let cfg = RunConfig::load(args.config.as_deref()).map_err(CliError::Input)?;
    let seed = args.seed.unwrap_or(cfg.scenario.seed);
    let spec = build_scenario(&args.scenario, &cfg, seed)?;
    let mut rng = sim::replicate_rng(seed, 0);
    let (counts, truth) = sim::generate_counts(&spec, &mut rng)?;
    write_file(&args.out_dir.join("counts.csv"), |w| counts.write_csv(w))?;
    let labels: Vec<u32> = truth.iter().map(|z| z + 1).collect();
    write_file(&args.out_dir.join("truth.csv"), |w| geo::write_grid(w, spec.resolution, &labels))?;
    let intensity: Vec<f64> = truth.iter().map(|&z| spec.true_lambdas[z as usize]).collect();
    write_file(&args.out_dir.join("true_intensity.csv"), |w| geo::write_grid(w, spec.resolution, &intensity))?;
    if args.points {
        let pattern = sim::scatter_points(&counts, &mut rng);
        write_points(&args.out_dir.join("points.csv"), &pattern)?;
    }
    Ok(())
}

/// Loads a counts grid, or ingests a catalog and bins it.
fn load_grid(args: &FitArgs) -> CliResult<(GridCounts, Option<PointPattern>)> {
    let bytes = std::fs::read(&args.input).map_err(|e| input_err(format!("cannot read {}: {e}", args.input.display())))?;
    if bytes.starts_with(b"resolution,") {
        let grid = GridCounts::read_csv(bytes.as_slice())
            .map_err(|e| input_err(format!("invalid counts file {}: {e}", args.input.display())))?;
        if args.resolution.is_some_and(|r| r != grid.resolution()) {
            return Err(input_err(format!(
                "{} has resolution {}, but --resolution {} was given",
                args.input.display(),
                grid.resolution(),
                args.resolution.unwrap_or_default()
            )));
        }
        return Ok((grid, None));
    }
    let resolution = args
        .resolution
        .ok_or_else(|| input_err("catalog input needs --resolution"))?;
    let columns = ColumnMap { longitude: args.lon_column.clone(), latitude: args.lat_column.clone(), ..Default::default() };
    let catalog = geo::parse_usgs_csv(bytes.as_slice(), &columns)?;
    if !catalog.skipped.is_empty() {
        eprintln!("skipped {} catalog rows (first: row {}: {})", catalog.skipped.len(), catalog.skipped[0].row, catalog.skipped[0].reason);
    }
    let events = match args.min_mag {
        Some(m) => geo::filter_min_magnitude(catalog.events, m),
        None => catalog.events,
    };
    let frame = match args.frame {
        FrameArg::Global => FrameKind::Global,
        FrameArg::BoundingBox => FrameKind::BoundingBox,
    };
    let pattern = geo::to_unit_square(&events, frame);
    let grid = geo::bin_counts(&pattern, resolution)?;
    Ok((grid, Some(pattern)))
}

fn write_summary(dir: &Path, draws: &PosteriorDraws, dahl: &summary::DahlOptions) -> CliResult<FitSummary> {
    let s = summary::summarize(draws, dahl)?;
    let r = draws.resolution;
    write_json(&dir.join("summary.json"), &s)?;
    write_file(&dir.join("mean_intensity.csv"), |w| geo::write_grid(w, r, &s.mean_intensity))?;
    write_file(&dir.join("mean_intensity_per_area.csv"), |w| geo::write_grid(w, r, &s.mean_intensity_per_area))?;
    write_file(&dir.join("dahl_intensity.csv"), |w| geo::write_grid(w, r, &s.dahl_intensity()))?;
    write_file(&dir.join("dahl_labels.csv"), |w| geo::write_grid(w, r, &s.dahl_z))?;
    Ok(s)
}

fn check_dahl_capacity(n: usize, dahl: &summary::DahlOptions) -> CliResult<()> {
    if n > dahl.max_cells {
        return Err(input_err(format!(
            "grid has {n} cells, above the Dahl limit of {}; lower the resolution or raise --dahl-max-cells \
             (the co-clustering matrix takes about 2·n² bytes; --dahl-thin shortens the search but not the matrix)",
            dahl.max_cells
        )));
    }
    Ok(())
}

fn cmd_fit(args: FitArgs) -> CliResult<()> {
    require_dir(&args.out_dir)?;
    let cfg = args.model.resolve()?;
    let (grid, pattern) = load_grid(&args)?;
    check_dahl_capacity(grid.n_cells(), &cfg.dahl)?;
    write_file(&args.out_dir.join("counts.csv"), |w| grid.write_csv(w))?;
    if let Some(p) = &pattern {
        write_points(&args.out_dir.join("points.csv"), p)?;
    }
    let draws = run_chain(&grid, &cfg.model, &cfg.chain)?;
    write_file(&args.out_dir.join("draws.ndjson"), |w| draws.write_ndjson(w))?;
    write_summary(&args.out_dir, &draws, &cfg.dahl)?;
    Ok(())
}

fn read_draws(path: &Path) -> CliResult<PosteriorDraws> {
    PosteriorDraws::read_ndjson(std::io::BufReader::new(open(path)?))
        .map_err(|e| input_err(format!("invalid draws file {}: {e}", path.display())))
}

fn read_counts(path: &Path) -> CliResult<GridCounts> {
    GridCounts::read_csv(open(path)?).map_err(|e| input_err(format!("invalid counts file {}: {e}", path.display())))
}

fn dahl_options(max_cells: Option<usize>, thin: Option<usize>) -> summary::DahlOptions {
    let mut d = summary::DahlOptions::default();
    if let Some(m) = max_cells {
        d.max_cells = m;
    }
    if let Some(t) = thin {
        d.thin = t;
    }
    d
}

fn cmd_summarize(args: SummarizeArgs) -> CliResult<()> {
    let draws = read_draws(&args.run.join("draws.ndjson"))?;
    let dahl = dahl_options(args.dahl_max_cells, args.dahl_thin);
    check_dahl_capacity(draws.n, &dahl)?;
    write_summary(&args.run, &draws, &dahl)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunMetrics {
    run: String,
    resolution: usize,
    #[serde(flatten)]
    metrics: MetricsReport,
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    runs: Vec<RunMetrics>,
    /// Run with the largest LPML.
    best_by_lpml: String,
    /// Run labels from smallest to largest LPML.
    lpml_ascending: Vec<String>,
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult<()> {
    let mut inputs: Vec<(String, PathBuf, PathBuf, Option<PathBuf>)> = args
        .run
        .iter()
        .map(|d| (d.display().to_string(), d.join("draws.ndjson"), d.join("counts.csv"), Some(d.join("summary.json"))))
        .collect();
    if let (Some(d), Some(c)) = (&args.draws, &args.counts) {
        inputs.push((d.display().to_string(), d.clone(), c.clone(), None));
    }
    if inputs.is_empty() {
        return Err(input_err("give at least one --run, or --draws with --counts"));
    }
    if inputs.len() > 1 && (args.truth.is_some() || args.points.is_some()) {
        return Err(input_err("--truth and --points apply to a single run"));
    }
    let truth = match &args.truth {
        Some(p) => Some(geo::read_grid::<_, u32>(open(p)?).map_err(|e| input_err(format!("invalid truth file {}: {e}", p.display())))?),
        None => None,
    };
    let dahl = dahl_options(args.dahl_max_cells, args.dahl_thin);

    let mut runs = Vec::new();
    for (label, draws_path, counts_path, summary_path) in inputs {
        let draws = read_draws(&draws_path)?;
        let grid = read_counts(&counts_path)?;
        if draws.resolution != grid.resolution() {
            return Err(input_err(format!(
                "{label}: draws fitted at resolution {} but counts have resolution {}",
                draws.resolution,
                grid.resolution()
            )));
        }
        let mean = summary::posterior_mean_intensity(&draws)?;
        let mae = assess::mae(&mean, &grid)?;
        let mut per_point_cpo = None;
        let lpml = if let Some(points_path) = &args.points {
            let pattern = read_points(points_path)?;
            if geo::bin_counts(&pattern, grid.resolution())? != grid {
                return Err(input_err(format!("{} does not bin to the run's counts", points_path.display())));
            }
            let (l, cpo) = assess::lpml(&pattern, &draws, &grid)?;
            if let Some(path) = &args.cpo_csv {
                write_file(path, |w| {
                    writeln!(w, "point,cpo")?;
                    for (j, c) in cpo.iter().enumerate() {
                        writeln!(w, "{j},{c}")?;
                    }
                    Ok(())
                })?;
            }
            per_point_cpo = Some(cpo);
            l.lpml
        } else {
            assess::lpml_from_counts(&draws, &grid)?.lpml
        };
        let rand_index = match &truth {
            None => None,
            Some((r, labels)) => {
                if *r != grid.resolution() {
                    return Err(input_err(format!("truth resolution {r} differs from run resolution {}", grid.resolution())));
                }
                let dahl_z = match summary_path.as_ref().filter(|p| p.exists()) {
                    Some(p) => {
                        let s: FitSummary = serde_json::from_reader(open(p)?)
                            .map_err(|e| input_err(format!("invalid summary {}: {e}", p.display())))?;
                        s.dahl_z
                    }
                    None => {
                        check_dahl_capacity(draws.n, &dahl)?;
                        summary::summarize(&draws, &dahl)?.dahl_z
                    }
                };
                Some(assess::rand_index(&dahl_z, labels)?)
            }
        };
        runs.push(RunMetrics {
            run: label,
            resolution: grid.resolution(),
            metrics: MetricsReport { mae, lpml, rand_index, per_point_cpo },
        });
    }

    let mut order: Vec<&RunMetrics> = runs.iter().collect();
    order.sort_by(|a, b| a.metrics.lpml.total_cmp(&b.metrics.lpml));
    let report = EvaluationReport {
        best_by_lpml: order.last().map(|r| r.run.clone()).unwrap_or_default(),
        lpml_ascending: order.iter().map(|r| r.run.clone()).collect(),
        runs,
    };
    match &args.out {
        Some(path) => write_json(path, &report),
        None => {
            let text = serde_json::to_string_pretty(&report).map_err(|e| input_err(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_bench(args: BenchArgs) -> CliResult<()> {
    require_dir(&args.out_dir)?;
    let cfg = args.model.resolve()?;
    let seed = args.model.seed.unwrap_or(cfg.scenario.seed);
    let spec = build_scenario(&args.scenario, &cfg, seed)?;
    let fit = FitSettings { model: cfg.model.clone(), chain: cfg.chain.clone(), dahl: cfg.dahl };
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let report = sim::run_replicates(&spec, args.replicates, &fit, workers)?;
    write_json(&args.out_dir.join("bench_summary.json"), &report.summary)?;
    write_file(&args.out_dir.join("replicates.csv"), |w| sim::write_replicates_csv(w, &report.replicates))?;
    Ok(())
}
