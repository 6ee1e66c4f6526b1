use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use intractl::controller::{write_decision_log, write_running_errors, ErrorBase};
use intractl::encoder_sim::{read_trace, write_trace, CostSource};
use intractl::frame_model::{
    frame_weights, load_frame, read_weight_csv, weights_for_frame, write_weight_csv, WeightRow,
};
use intractl::harness::{
    mean_te_pct, parse_targets, sweep, write_summaries, write_sweep, BudgetSpec, ControlSetup,
    RunSummary, SweepConfig,
};
use intractl::tc_model::{fit, log_rmse, DEFAULT_BETA_BOUNDS};
use intractl::{
    Catalog, CtuWeight, Error, FitSample, FrameReport, Result, SimBackend, SimParams, TcModel,
    TraceBackend,
};

#[derive(Parser)]
#[command(
    name = "intractl",
    version,
    about = "Picture-level intra encoding time control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute per-CTU SA8D weights of a raw 4:2:0 or Y4M video.
    Analyze(AnalyzeArgs),
    /// Fit the time model on preset-0 rows of a trace.
    Fit(FitArgs),
    /// Run the control loop over one picture.
    Control(ControlArgs),
    /// Sweep target ratios over seeded simulated pictures.
    Sweep(SweepArgs),
    /// Write a simulated trace CSV.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct VideoArgs {
    /// Raw planar 4:2:0 (8-bit) or Y4M file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Luma width; ignored for Y4M.
    #[arg(long, default_value_t = 0)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    height: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    video: VideoArgs,
    /// First frame to analyze.
    #[arg(long, default_value_t = 0)]
    frame: usize,
    #[arg(long, default_value_t = 1)]
    frames: usize,
    /// Weight CSV destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Preset whose rows are used.
    #[arg(long, default_value_t = 0)]
    preset: u8,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ControlKnobs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Preset catalog CSV (built-in table when absent).
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, default_value_t = intractl::controller::DEFAULT_WINDOW_CAP)]
    window_cap: usize,
    /// Running error driving the feedback: budget or allocated.
    #[arg(long, default_value = "budget")]
    error_base: String,
    /// Simulator settings (`[sim]` section of a key = value file).
    #[arg(long)]
    sim_config: Option<PathBuf>,
    /// Overrides the simulator seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ControlKnobs {
    fn setup(&self) -> Result<ControlSetup> {
        let path = self
            .model
            .as_deref()
            .ok_or_else(|| Error::Config("a model file is required (--model)".into()))?;
        let mut setup = ControlSetup::new(TcModel::read(path)?);
        if let Some(c) = &self.catalog {
            setup.catalog = Catalog::load(c)?;
        }
        if self.window_cap == 0 {
            return Err(Error::Config("window cap must be at least 1".into()));
        }
        setup.window_cap = self.window_cap;
        setup.error_base = self.error_base.parse::<ErrorBase>()?;
        Ok(setup)
    }

    fn sim_params(&self, weights: Option<&[CtuWeight]>) -> Result<SimParams> {
        sim_params(self.sim_config.as_deref(), self.seed, weights)
    }
}

#[derive(Args)]
struct ControlArgs {
    #[command(flatten)]
    knobs: ControlKnobs,
    #[command(flatten)]
    video: VideoArgs,
    /// Weight CSV from `analyze`.
    #[arg(long, conflicts_with = "input")]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    /// Replay this trace instead of simulating.
    #[arg(long, conflicts_with = "sim_config")]
    trace: Option<PathBuf>,
    #[arg(long, conflicts_with = "budget_ratio")]
    budget_ms: Option<f64>,
    /// Budget as a fraction of the baseline time.
    #[arg(long)]
    budget_ratio: Option<f64>,
    /// Unaccelerated picture time; taken from the backend when absent.
    #[arg(long)]
    baseline_ms: Option<f64>,
    /// Directory for decisions.csv, running_error.csv and summary.csv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    knobs: ControlKnobs,
    /// `0.3,0.5` or percent `start:stop:step`.
    #[arg(long, default_value = "30:90:10")]
    targets: String,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    /// Directory for sweep.csv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    video: VideoArgs,
    #[arg(long)]
    sim_config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    preset: u8,
    #[arg(long, default_value_t = 1)]
    frames: usize,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Analyze(a) => analyze(&a),
        Command::Fit(a) => fit_cmd(&a),
        Command::Control(a) => control(&a),
        Command::Sweep(a) => sweep_cmd(&a),
        Command::Simulate(a) => simulate(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("intractl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn picture_weights(video: &VideoArgs, frame: usize) -> Result<Option<Vec<CtuWeight>>> {
    let Some(input) = &video.input else {
        return Ok(None);
    };
    let plane = load_frame(input, video.width, video.height, frame)?;
    Ok(Some(
        frame_weights(&plane)?.into_iter().map(|(_, w)| w).collect(),
    ))
}

/// Simulator settings with external picture weights attached.
///
/// A frame-derived cost source takes its costs from the weights. A
/// lognormal source only borrows their CTU count.
fn sim_params(
    config: Option<&Path>,
    seed: Option<u64>,
    weights: Option<&[CtuWeight]>,
) -> Result<SimParams> {
    let mut p = match config {
        Some(path) => SimParams::read(path)?,
        None => SimParams::default(),
    };
    if let Some(s) = seed {
        p.seed = s;
    }
    match (&mut p.cost_source, weights) {
        (CostSource::FrameDerived { weights: w, .. }, Some(ext)) => {
            *w = ext.iter().map(|c| c.weight).collect();
        }
        (CostSource::FrameDerived { .. }, None) => {
            return Err(Error::Config(
                "cost_mode = frame needs picture weights (--input or --weights)".into(),
            ))
        }
        (CostSource::LogNormal { .. }, Some(ext)) => p.ctus = ext.len(),
        (CostSource::LogNormal { .. }, None) => {}
    }
    p.validate()?;
    Ok(p)
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let input = a
        .video
        .input
        .as_deref()
        .ok_or_else(|| Error::Argument("--input is required".into()))?;
    if a.frames == 0 {
        return Err(Error::Argument("--frames must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for f in a.frame..a.frame + a.frames {
        let plane = load_frame(input, a.video.width, a.video.height, f)?;
        rows.extend(
            frame_weights(&plane)?
                .iter()
                .map(|(g, w)| WeightRow::new(f, g, w)),
        );
    }
    match &a.out {
        Some(path) => write_weight_csv(create(path)?, &rows),
        None => write_weight_csv(std::io::stdout().lock(), &rows),
    }
}

fn fit_cmd(a: &FitArgs) -> Result<()> {
    let samples = read_trace(&a.trace)?
        .iter()
        .filter(|r| r.preset_id == a.preset)
        .map(|r| FitSample::new(r.planar_cost, r.luma_time_ms))
        .collect::<Result<Vec<_>>>()?;
    let model = fit(&samples)?;
    if !model.beta_within(&DEFAULT_BETA_BOUNDS) {
        return Err(Error::DegenerateFit(format!(
            "beta {} outside {:?}",
            model.beta(),
            DEFAULT_BETA_BOUNDS
        )));
    }
    model.write(&a.out)?;
    println!(
        "{model} samples={} log_rmse={:.6}",
        samples.len(),
        log_rmse(&model, &samples)
    );
    Ok(())
}

fn print_summary(s: &RunSummary, report: &FrameReport) {
    let hist = report
        .preset_histogram()
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join("/");
    print!(
        "budget {:.3} ms  real {:.3} ms  TE {:.2}%",
        s.pic_budget_ms, s.total_real_ms, s.te_pct
    );
    if let Some(ts) = s.ts_luma_pct {
        print!("  TS(luma) {ts:.2}%");
    }
    println!(
        "  presets {hist}  r_cpu {:.4}{}",
        s.r_cpu,
        if s.saturated { "  SATURATED" } else { "" }
    );
}

fn control(a: &ControlArgs) -> Result<()> {
    let setup = a.knobs.setup()?;
    let external = match &a.weights {
        Some(path) => Some(weights_for_frame(
            &read_weight_csv(open(path)?, &path.display().to_string())?,
            a.frame,
        )?),
        None => picture_weights(&a.video, a.frame)?,
    };

    let budget_for = |backend_baseline: f64| -> Result<(BudgetSpec, f64)> {
        let baseline = a.baseline_ms.unwrap_or(backend_baseline);
        let spec = match (a.budget_ms, a.budget_ratio) {
            (Some(ms), None) => BudgetSpec::AbsoluteMs(ms),
            (None, Some(ratio)) => BudgetSpec::Ratio {
                ratio,
                baseline_ms: baseline,
            },
            _ => {
                return Err(Error::Argument(
                    "give exactly one of --budget-ms or --budget-ratio".into(),
                ))
            }
        };
        Ok((spec, baseline))
    };
    let check_count = |weights: &[CtuWeight], ctus: usize| {
        if weights.len() != ctus {
            return Err(Error::Config(format!(
                "{} picture weights for {ctus} backend CTUs",
                weights.len()
            )));
        }
        Ok(())
    };

    let (report, summary) = match &a.trace {
        Some(path) => {
            let backend = TraceBackend::new(&read_trace(path)?, a.frame, setup.catalog.clone())?;
            let weights = external.unwrap_or_else(|| backend.cost_weights());
            check_count(&weights, backend.ctu_count())?;
            let (budget, baseline) = budget_for(backend.baseline_total_ms())?;
            setup.run(&weights, backend, &budget, Some(baseline))?
        }
        None => {
            let params = a.knobs.sim_params(external.as_deref())?;
            let backend = SimBackend::for_frame(params, a.frame)?;
            let weights = external.unwrap_or_else(|| backend.weights());
            check_count(&weights, backend.ctu_count())?;
            let (budget, baseline) = budget_for(backend.baseline_total_ms(&setup.catalog))?;
            setup.run(&weights, backend, &budget, Some(baseline))?
        }
    };

    print_summary(&summary, &report);
    if let Some(dir) = &a.out_dir {
        out_dir(dir)?;
        write_decision_log(create(&dir.join("decisions.csv"))?, &report.records)?;
        write_running_errors(
            create(&dir.join("running_error.csv"))?,
            &report.running_errors(),
        )?;
        write_summaries(create(&dir.join("summary.csv"))?, &[summary])?;
    }
    Ok(())
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let params = a.knobs.sim_params(None)?;
    let cfg = SweepConfig {
        targets: parse_targets(&a.targets)?,
        repeats: a.repeats,
        base_seed: params.seed,
        params,
        setup: a.knobs.setup()?,
    };
    let rows = sweep(&cfg)?;
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "target%   TS(luma)%   TE%    TEmax%  saturated");
    for r in &rows {
        let _ = writeln!(
            stdout,
            "{:>7.1} {:>10.2} {:>6.2} {:>8.2} {:>6}/{}",
            r.target_ratio_pct, r.ts_luma_pct, r.te_pct, r.te_max_pct, r.saturated_runs, r.repeats
        );
    }
    let _ = writeln!(stdout, "mean TE {:.2}%", mean_te_pct(&rows));
    if let Some(dir) = &a.out_dir {
        out_dir(dir)?;
        write_sweep(create(&dir.join("sweep.csv"))?, &rows)?;
    }
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    if a.frames == 0 {
        return Err(Error::Argument("--frames must be at least 1".into()));
    }
    let catalog = match &a.catalog {
        Some(c) => Catalog::load(c)?,
        None => Catalog::default(),
    };
    let preset = *catalog
        .get(a.preset)
        .ok_or_else(|| Error::Argument(format!("no preset {} in the catalog", a.preset)))?;
    let mut rows = Vec::new();
    for f in 0..a.frames {
        let weights = picture_weights(&a.video, f)?;
        let params = sim_params(a.sim_config.as_deref(), a.seed, weights.as_deref())?;
        rows.extend(SimBackend::for_frame(params, f)?.trace_rows(&preset));
    }
    write_trace(create(&a.out)?, &rows)
}
