use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relucell_core::analysis::{self, accuracy_eval, subcell_histogram, task_time_stats};
use relucell_core::engine::pool::VisibilityTimeout;
use relucell_core::engine::remote::{run_worker, Master, WorkerOptions};
use relucell_core::engine::{read_task_times, write_outputs};
use relucell_core::format::{self, Dataset, Report};
use relucell_core::network::CellConstraints;
use relucell_core::witness::find_witness;
use relucell_core::{
    layerwise_serial, par_layerwise1, BoundedDomain, Init, Mlp, NetworkSignVector, PoolOptions, SignVector, Subroutine,
};

const EXIT_USAGE: u8 = 2;
const EXIT_VERIFY: u8 = 3;
const EXIT_SOLVER: u8 = 4;

#[derive(Parser)]
#[command(
    name = "relucell",
    version,
    about = "Enumerate the activation regions of a ReLU network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate every activation region inside the domain.
    Enumerate(EnumerateArgs),
    /// Serve tasks to remote workers (same as `enumerate --mode master`).
    Master(EnumerateArgs),
    /// Work for a master (same as `enumerate --mode worker`).
    Worker(EnumerateArgs),
    /// Check a report by sampling and by re-witnessing every region.
    Verify(VerifyArgs),
    /// Write plot-ready tables from finished reports.
    Analyze(AnalyzeArgs),
    /// Write a random model with the given widths.
    Generate(GenerateArgs),
    /// Write a random labeled dataset.
    MakeDataset(DatasetArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Serial,
    Parallel,
    Master,
    Worker,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Serial => "serial",
            Mode::Parallel => "parallel",
            Mode::Master => "master",
            Mode::Worker => "worker",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Layer1 {
    Exh,
    Inc,
}

#[derive(Args)]
struct EnumerateArgs {
    #[arg(long)]
    model: PathBuf,
    /// `unit-box` or a domain JSON file.
    #[arg(long, default_value = "unit-box")]
    domain: String,
    #[arg(long, value_enum, default_value = "serial")]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output directory (not used by workers).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "exh")]
    layer1: Layer1,
    /// Continue from the manifest in the output directory.
    #[arg(long)]
    resume: bool,
    /// Enumeration is deterministic; the seed is echoed for fixture bookkeeping.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Master address for master and worker modes.
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
    /// Fixed lease timeout in seconds instead of the adaptive default.
    #[arg(long)]
    visibility_timeout: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Report directory or report file.
    #[arg(long)]
    report: PathBuf,
    /// Defaults to `model.json` next to the report.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Defaults to `domain.json` next to the report.
    #[arg(long)]
    domain: Option<String>,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Analysis {
    Counts,
    Dims,
    Times,
    Decay,
    Accuracy,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(value_enum)]
    which: Analysis,
    /// One or more report directories.
    #[arg(long, required = true, num_args = 1..)]
    report: Vec<PathBuf>,
    /// Labeled CSV for `accuracy`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Directory for the tables; defaults to the first report directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    He,
    Anchored,
    SharedAnchor,
}

#[derive(Args)]
struct GenerateArgs {
    /// `n0,n1,...,nL,m`.
    #[arg(long, value_delimiter = ',', required = true)]
    widths: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "anchored")]
    init: InitArg,
    /// `.bin` selects the binary container.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Failure carrying its exit code.
#[derive(Debug)]
struct Exit(u8, anyhow::Error);

impl From<anyhow::Error> for Exit {
    fn from(e: anyhow::Error) -> Self {
        let code = match e.downcast_ref::<relucell_core::Error>() {
            Some(relucell_core::Error::Solver(_)) => EXIT_SOLVER,
            Some(
                relucell_core::Error::Usage(_)
                | relucell_core::Error::Format { .. }
                | relucell_core::Error::DimensionMismatch { .. }
                | relucell_core::Error::DegenerateHyperplane,
            ) => EXIT_USAGE,
            _ => 1,
        };
        Exit(code, e)
    }
}

impl From<relucell_core::Error> for Exit {
    fn from(e: relucell_core::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Enumerate(a) => cmd_enumerate(a),
        Command::Master(a) => cmd_enumerate(EnumerateArgs {
            mode: Mode::Master,
            ..a
        }),
        Command::Worker(a) => cmd_enumerate(EnumerateArgs {
            mode: Mode::Worker,
            ..a
        }),
        Command::Verify(a) => cmd_verify(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Generate(a) => cmd_generate(a),
        Command::MakeDataset(a) => cmd_make_dataset(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn usage(msg: impl Into<String>) -> Exit {
    Exit(EXIT_USAGE, anyhow!(msg.into()))
}

fn load_inputs(model: &Path, domain: &str) -> Result<(Mlp, BoundedDomain), Exit> {
    let mlp = format::load_weights(model).with_context(|| format!("loading model {}", model.display()))?;
    let dom = format::load_domain(domain, mlp.input_dim()).with_context(|| format!("loading domain {domain}"))?;
    Ok((mlp, dom))
}

fn cmd_enumerate(a: EnumerateArgs) -> Result<(), Exit> {
    let (mlp, dom) = load_inputs(&a.model, &a.domain)?;
    if a.mode == Mode::Worker {
        let n = run_worker(&mlp, &dom, &a.addr, &WorkerOptions::default())?;
        log::info!("worker finished after {n} tasks");
        return Ok(());
    }
    let out = a.out.clone().ok_or_else(|| usage("--out is required"))?;
    if a.workers == 0 {
        return Err(usage("--workers must be positive"));
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut opts = PoolOptions::new(a.workers);
    opts.checkpoint = Some(out.clone());
    opts.resume = a.resume;
    if let Some(t) = a.visibility_timeout {
        if !(t > 0.0 && t.is_finite()) {
            return Err(usage("--visibility-timeout must be a positive number of seconds"));
        }
        opts.timeout = VisibilityTimeout::Fixed(Duration::from_secs_f64(t));
    }
    let report = match a.mode {
        Mode::Serial => {
            if a.resume {
                log::warn!("serial mode keeps no checkpoint; --resume has no effect");
            }
            let sub = match a.layer1 {
                Layer1::Exh => Subroutine::Exh,
                Layer1::Inc => Subroutine::Inc,
            };
            layerwise_serial(&mlp, &dom, sub)?
        }
        Mode::Parallel => par_layerwise1(&mlp, &dom, &opts)?,
        Mode::Master => {
            let master = Master::bind(a.addr.as_str())?;
            let addr = master.local_addr()?;
            fs::write(out.join("master.addr"), format!("{addr}\n")).context("writing master.addr")?;
            log::info!("master listening on {addr}");
            master.run(&mlp, &dom, &opts)?
        }
        Mode::Worker => unreachable!(),
    };
    fs::write(out.join("model.json"), format::weights_to_json(&mlp)).context("writing model.json")?;
    // Copy the domain file verbatim: reloading must reproduce the same hash.
    let domain_text = if a.domain == "unit-box" {
        format::domain_to_json(&dom)
    } else {
        fs::read_to_string(&a.domain).with_context(|| format!("reading {}", a.domain))?
    };
    fs::write(out.join("domain.json"), domain_text).context("writing domain.json")?;
    write_outputs(&out, &report, a.mode.name())?;
    log::info!(
        "{} regions (per layer {:?}) in {:.3}s, {} LPs",
        report.report.sign_vectors.len(),
        report.report.layer_cells,
        report.wall_time,
        report.lp_calls
    );
    Ok(())
}

fn report_paths(p: &Path) -> (PathBuf, PathBuf) {
    if p.is_dir() {
        (p.join("report.txt"), p.to_path_buf())
    } else {
        (
            p.to_path_buf(),
            p.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
        )
    }
}

/// Uniform points strictly inside the domain, by rejection from its
/// bounding box.
fn sample_interior(dom: &BoundedDomain, n: usize, seed: u64) -> Result<Vec<Vec<f64>>, Exit> {
    let bounds = dom.axis_bounds();
    if bounds
        .iter()
        .any(|(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo >= hi)
    {
        return Err(usage("sampling needs a domain with finite per-coordinate bounds"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut tries = 0usize;
    while out.len() < n {
        tries += 1;
        if tries > 1000 * n.max(1) {
            return Err(usage("domain interior is too thin to sample"));
        }
        let p: Vec<f64> = bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect();
        if dom.halfspaces().iter().all(|h| h.eval(&p) > 0.0) {
            out.push(p);
        }
    }
    Ok(out)
}

fn cmd_verify(a: VerifyArgs) -> Result<(), Exit> {
    let (report_file, dir) = report_paths(&a.report);
    let text = fs::read_to_string(&report_file).with_context(|| format!("reading {}", report_file.display()))?;
    let (report, declared) = Report::parse_unchecked(&text)?;
    let model = a.model.unwrap_or_else(|| dir.join("model.json"));
    let domain = a
        .domain
        .unwrap_or_else(|| dir.join("domain.json").to_string_lossy().into_owned());
    let (mlp, dom) = load_inputs(&model, &domain)?;
    if report.model_sha256 != format::model_sha256(&mlp) || report.domain_sha256 != format::domain_sha256(&dom) {
        return Err(usage("report was produced for a different model or domain"));
    }
    let known: HashSet<&NetworkSignVector> = report.sign_vectors.iter().collect();
    let mut problems = Vec::new();

    let mut missing: Vec<NetworkSignVector> = Vec::new();
    let mut ties = 0usize;
    for p in sample_interior(&dom, a.samples, a.seed)? {
        let v = mlp.network_sign_vector(&p)?;
        if known.contains(&v) {
            continue;
        }
        let pre = mlp.pre_activations(&p)?;
        if pre
            .iter()
            .flatten()
            .any(|x| x.abs() <= relucell_core::geometry::ON_PLANE_TOL)
        {
            ties += 1;
        } else if !missing.contains(&v) {
            missing.push(v);
        }
    }
    for v in &missing {
        problems.push(format!("missing {v}"));
    }

    let mut fabricated = 0usize;
    for v in &report.sign_vectors {
        let ok = match mlp.cell_constraints(v) {
            Ok(CellConstraints::Constraints(c)) => match find_witness(&c, &dom)?.into_point() {
                Some(w) => mlp.network_sign_vector(&w)? == *v,
                None => false,
            },
            Ok(CellConstraints::Contradiction { .. }) | Err(_) => false,
        };
        if !ok {
            fabricated += 1;
            problems.push(format!("no witness for {v}"));
        }
    }
    if declared != report.sign_vectors.len() {
        problems.push(format!(
            "header declares {declared} regions, found {}",
            report.sign_vectors.len()
        ));
    }
    let mut distinct = report.sign_vectors.clone();
    distinct.dedup();
    if distinct.len() != report.sign_vectors.len() || !report.sign_vectors.is_sorted() {
        problems.push("report lines are not sorted and distinct".into());
    }

    eprintln!(
        "checked {} samples ({} unmatched on a region boundary) and {} regions",
        a.samples,
        ties,
        report.sign_vectors.len()
    );
    if problems.is_empty() {
        println!("ok");
        return Ok(());
    }
    for p in problems.iter().take(50) {
        println!("{p}");
    }
    if problems.len() > 50 {
        println!("... and {} more", problems.len() - 50);
    }
    Err(Exit(
        EXIT_VERIFY,
        anyhow!(
            "verification failed: {} missing, {fabricated} without witness",
            missing.len()
        ),
    ))
}

fn write_table(dir: &Path, name: &str, body: &str) -> Result<(), Exit> {
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    print!("{body}");
    Ok(())
}

fn run_json(dir: &Path) -> Result<serde_json::Value, Exit> {
    let path = dir.join("run.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), Exit> {
    let out = a.out.clone().unwrap_or_else(|| a.report[0].clone());
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let load = |d: &Path| -> Result<Report, Exit> { Ok(Report::load(&d.join("report.txt"))?) };
    match a.which {
        Analysis::Counts => {
            let mut csv = String::from("run,widths,layer_cells,cells,wall_time,lp_calls\n");
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for d in &a.report {
                let r = load(d)?;
                let run = run_json(d)?;
                let wall = run["wall_time"]
                    .as_f64()
                    .ok_or_else(|| usage("run.json lacks wall_time"))?;
                let lps = run["lp_calls"].as_u64().unwrap_or(0);
                let join = |v: Vec<String>| v.join(";");
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    d.display(),
                    join(r.widths.iter().map(|w| w.to_string()).collect()),
                    join(r.layer_cells.iter().map(|w| w.to_string()).collect()),
                    r.sign_vectors.len(),
                    wall,
                    lps
                );
                xs.push(r.sign_vectors.len() as f64);
                ys.push(wall);
            }
            write_table(&out, "counts.csv", &csv)?;
            if let Ok(f) = analysis::linear_fit(&xs, &ys) {
                write_table(
                    &out,
                    "counts_fit.csv",
                    &format!(
                        "slope,intercept,r_squared\n{},{},{}\n",
                        f.slope, f.intercept, f.r_squared
                    ),
                )?;
            }
        }
        Analysis::Dims => {
            let d = &a.report[0];
            let r = load(d)?;
            let n1 = r.widths.get(1).copied().unwrap_or(0);
            let times: HashMap<SignVector, f64> = match read_task_times(&d.join("tasks.csv")) {
                Ok(rows) => rows
                    .into_iter()
                    .map(|(id, _, t)| (SignVector::from_index(id, n1), t))
                    .collect(),
                Err(_) => HashMap::new(),
            };
            let stats = subcell_histogram(&r, Some(&times));
            if stats.single_layer {
                log::warn!("single hidden layer: no layer-2 subcells to count");
            }
            write_table(&out, "dims.csv", &stats.to_csv())?;
        }
        Analysis::Times => {
            let d = &a.report[0];
            let times: Vec<f64> = read_task_times(&d.join("tasks.csv"))?
                .into_iter()
                .map(|r| r.2)
                .collect();
            let s = task_time_stats(&times)?;
            write_table(
                &out,
                "times.csv",
                &format!(
                    "tasks,mean,std,skew,zero_variance\n{},{},{},{},{}\n",
                    times.len(),
                    s.mean,
                    s.std,
                    s.skew,
                    s.zero_variance
                ),
            )?;
            let mut hist = String::from("lower,upper,count\n");
            for (lo, hi, c) in analysis::time_histogram(&times, 20) {
                let _ = writeln!(hist, "{lo},{hi},{c}");
            }
            fs::write(out.join("times_hist.csv"), hist).context("writing times_hist.csv")?;
        }
        Analysis::Decay => {
            let mut csv = String::from("run,layer,width,ratio\n");
            let mut points = Vec::new();
            for d in &a.report {
                for (l, n, ratio) in analysis::decay_ratios(&load(d)?) {
                    let _ = writeln!(csv, "{},{l},{n},{ratio}", d.display());
                    if l == 2 {
                        points.push((n as f64, ratio));
                    }
                }
            }
            fs::write(out.join("decay_points.csv"), &csv).context("writing decay_points.csv")?;
            let fit = analysis::fit_decay(&points)?;
            let worst = fit.residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            write_table(
                &out,
                "decay.csv",
                &format!(
                    "amplitude,rate,max_abs_residual\n{},{},{}\n",
                    fit.amplitude, fit.rate, worst
                ),
            )?;
        }
        Analysis::Accuracy => {
            let ds_path = a.dataset.as_ref().ok_or_else(|| usage("accuracy needs --dataset"))?;
            let ds = format::load_dataset(ds_path)?;
            let mut csv = String::from("run,cells,accuracy\n");
            for d in &a.report {
                let r = load(d)?;
                let mlp = format::load_weights(&d.join("model.json"))?;
                let acc = accuracy_eval(&mlp, &ds)?;
                let _ = writeln!(csv, "{},{},{}", d.display(), r.sign_vectors.len(), acc);
            }
            write_table(&out, "accuracy.csv", &csv)?;
        }
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<(), Exit> {
    let init = match a.init {
        InitArg::He => Init::He,
        InitArg::Anchored => Init::Anchored,
        InitArg::SharedAnchor => Init::SharedAnchor,
    };
    let mlp = Mlp::random(&a.widths, init, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    format::save_weights(&mlp, &a.out)?;
    Ok(())
}

fn cmd_make_dataset(a: DatasetArgs) -> Result<(), Exit> {
    if a.dim == 0 || a.classes == 0 {
        return Err(usage("--dim and --classes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let ds = Dataset {
        labels: (0..a.samples).map(|_| rng.random_range(0..a.classes)).collect(),
        inputs: (0..a.samples)
            .map(|_| (0..a.dim).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect(),
    };
    fs::write(&a.out, format::dataset_to_csv(&ds)).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}
