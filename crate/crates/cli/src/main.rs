use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;
use memsample::analytic::optimal_threshold;
use memsample::sim::{simulate, PolicySpec, SimConfig, DEFAULT_BATCHES};
use memsample::solver::{
    extract_threshold, relative_value_iteration, ExtractedThreshold, GridSpec,
};
use memsample::ModelParams;
use memsample_cli::figures::{self, FigureId};
use memsample_cli::verify::{self, VerifyPlan};
use memsample_cli::{CliError, RunManifest};

/// Optimal sampling of a shared memory by a reader that pays per read.
#[derive(Debug, Parser)]
#[command(name = "memsample", version)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the optimal threshold, its average cost and the lower bound.
    ClosedForm(ClosedFormArgs),
    /// Solve the average-cost problem numerically by relative value iteration.
    Solve(SolveArgs),
    /// Simulate a reader policy and report batch-means statistics.
    Simulate(SimulateArgs),
    /// Write figure data tables as CSV.
    Figures(FiguresArgs),
    /// Run the cross-oracle and structural verification suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct ParamArgs {
    /// Per-slot write probability, in (0, 1].
    #[arg(long = "p")]
    p: f64,
    /// Cost per read, >= 0.
    #[arg(long = "c")]
    c: f64,
}

impl ParamArgs {
    fn params(&self) -> Result<ModelParams, CliError> {
        Ok(ModelParams::new(self.p, self.c)?)
    }
}

#[derive(Debug, Args)]
struct ClosedFormArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Also write a single-row CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Span tolerance for relative value iteration.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Age cap for both axes; must be at least 8 * Y0*. Sized automatically when omitted.
    #[arg(long)]
    ymax: Option<u64>,
    /// Iteration budget.
    #[arg(long, default_value_t = memsample::solver::DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// CSV destination for the x,y,action,f table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// threshold:<int> | always | never | periodic:<int>
    #[arg(long)]
    policy: String,
    #[arg(long, default_value_t = 1_000_000)]
    slots: u64,
    #[arg(long, default_value_t = 10_000)]
    warmup: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of batches; must divide slots - warmup.
    #[arg(long, default_value_t = DEFAULT_BATCHES)]
    batches: u64,
    /// Also write the CSV row here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FiguresArgs {
    /// fig2, fig3, fig4 or all.
    #[arg(long, default_value = "all")]
    figure: String,
    /// Output directory, created if missing.
    #[arg(long, default_value = "figures")]
    out: PathBuf,
    /// Write probability for fig2.
    #[arg(long = "p", default_value_t = 0.5)]
    p: f64,
    /// Read cost for fig2.
    #[arg(long = "c", default_value_t = 80.0)]
    c: f64,
    /// Read costs tabulated in fig3 and fig4.
    #[arg(long, value_delimiter = ',', default_value = "1,5,20,80")]
    c_grid: Vec<f64>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9")]
    p_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,5,20,80")]
    c_grid: Vec<f64>,
    /// Slots per simulation spot check.
    #[arg(long, default_value_t = 1_000_000)]
    slots: u64,
    #[arg(long, default_value_t = 10_000)]
    warmup: u64,
    /// Episodes per first-passage Monte Carlo check.
    #[arg(long, default_value_t = 200_000)]
    episodes: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Machine-readable check,case,passed,detail CSV destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    let result = match cli.command {
        Command::ClosedForm(args) => closed_form(args),
        Command::Solve(args) => solve(args),
        Command::Simulate(args) => simulate_cmd(args),
        Command::Figures(args) => figures_cmd(args),
        Command::Verify(args) => verify_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("memsample: {e}");
            ExitCode::from(&e)
        }
    }
}

fn closed_form(args: ClosedFormArgs) -> Result<(), CliError> {
    let params = args.params.params()?;
    let r = optimal_threshold(&params);
    let fields = [
        ("p", params.p().to_string()),
        ("c", params.c().to_string()),
        ("Y_prime", r.y_prime.to_string()),
        ("Y0_star", r.y0_star.to_string()),
        ("g_star", r.g_star.to_string()),
        ("lower_bound", r.lower_bound.to_string()),
        ("Y0_tilde", r.y0_tilde.to_string()),
        ("tie", r.tie.to_string()),
    ];
    let mut stdout = io::stdout().lock();
    for (k, v) in &fields {
        writeln!(stdout, "{k}={v}")?;
    }
    if let Some(path) = args.out {
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(fields.iter().map(|(k, _)| *k))?;
        w.write_record(fields.iter().map(|(_, v)| v.as_str()))?;
        w.flush()?;
        RunManifest::new("closed-form")
            .param("p", params.p())
            .param("c", params.c())
            .write_for(&path)?;
    }
    Ok(())
}

fn solve(args: SolveArgs) -> Result<(), CliError> {
    let params = args.params.params()?;
    let grid = match args.ymax {
        Some(cap) => GridSpec::checked(&params, cap, cap)?,
        None => GridSpec::for_params(&params),
    };
    log::info!(
        "solving {params} on a {}x{} grid",
        grid.x_max(),
        grid.y_max()
    );
    let sol = relative_value_iteration(&params, grid, args.tol, args.max_iters)?;
    let threshold = match extract_threshold(&sol.policy) {
        ExtractedThreshold::Threshold(t) => t.to_string(),
        ExtractedThreshold::NotThreshold => "none".to_string(),
    };

    if let Some(path) = &args.out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "action", "f"])?;
        for (x, y) in grid.states() {
            w.write_record([
                x.to_string(),
                y.to_string(),
                sol.policy.get(x, y).to_string(),
                sol.f.get(x, y).to_string(),
            ])?;
        }
        w.flush()?;
        RunManifest::new("solve")
            .param("p", params.p())
            .param("c", params.c())
            .param("tol", args.tol)
            .param("max_iters", args.max_iters)
            .param("x_max", grid.x_max())
            .param("y_max", grid.y_max())
            .param("g", sol.g)
            .param("threshold", &threshold)
            .param("iterations", sol.iterations)
            .param("span_at_stop", sol.span_at_stop)
            .param("converged", sol.converged)
            .write_for(path)?;
    }
    println!(
        "g={:.6} threshold={threshold} iterations={} converged={}",
        sol.g, sol.iterations, sol.converged
    );
    if sol.converged {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!(
            "span {:e} above tolerance {:e} after {} iterations",
            sol.span_at_stop, args.tol, sol.iterations
        )))
    }
}

fn simulate_cmd(args: SimulateArgs) -> Result<(), CliError> {
    let params = args.params.params()?;
    let policy: PolicySpec = args.policy.parse()?;
    let config = SimConfig::new(args.slots, args.warmup, args.seed, args.batches)?;
    let est = simulate(&params, &policy, &config);
    let header = [
        "p",
        "c",
        "policy",
        "slots",
        "seed",
        "mean_cost",
        "ci_halfwidth",
        "mean_age",
        "sample_rate",
    ];
    let row = [
        params.p().to_string(),
        params.c().to_string(),
        policy.to_string(),
        args.slots.to_string(),
        args.seed.to_string(),
        est.mean_cost.to_string(),
        est.ci_halfwidth.to_string(),
        est.mean_age.to_string(),
        est.sample_rate.to_string(),
    ];
    let write = |out: &mut dyn Write| -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header)?;
        w.write_record(&row)?;
        w.flush()?;
        Ok(())
    };
    write(&mut io::stdout().lock())?;
    if let Some(path) = &args.out {
        write(&mut fs::File::create(path)?)?;
        RunManifest::new("simulate")
            .param("p", params.p())
            .param("c", params.c())
            .param("policy", &policy)
            .param("slots", args.slots)
            .param("warmup", args.warmup)
            .param("batches", args.batches)
            .seed(args.seed)
            .write_for(path)?;
    }
    Ok(())
}

fn figures_cmd(args: FiguresArgs) -> Result<(), CliError> {
    let ids: Vec<FigureId> = if args.figure == "all" {
        FigureId::ALL.to_vec()
    } else {
        vec![args.figure.parse()?]
    };
    let fig2_params = ModelParams::new(args.p, args.c)?;
    if args.c_grid.is_empty() {
        return Err(CliError::Usage("--c-grid is empty".into()));
    }
    for &c in &args.c_grid {
        ModelParams::new(0.5, c)?;
    }
    fs::create_dir_all(&args.out)?;
    let mut violations = Vec::new();
    for id in ids {
        let output = figures::emit(id, &args.out, &fig2_params, &args.c_grid)?;
        let c_grid: Vec<String> = args.c_grid.iter().map(f64::to_string).collect();
        let mut manifest = RunManifest::new("figures").param("figure", id);
        manifest = match id {
            FigureId::Fig2 => manifest.param("p", args.p).param("c", args.c),
            FigureId::Fig3 | FigureId::Fig4 => manifest.param("c_grid", c_grid.join(",")),
        };
        manifest = manifest.param("properties_hold", output.check.is_ok());
        manifest.write_for(&output.path)?;
        println!("{}", output.path.display());
        if let Err(msg) = output.check {
            violations.push(msg);
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(violations.join("; ")))
    }
}

fn verify_cmd(args: VerifyArgs) -> Result<(), CliError> {
    let plan = VerifyPlan {
        p_grid: args.p_grid.clone(),
        c_grid: args.c_grid.clone(),
        sim_slots: args.slots,
        sim_warmup: args.warmup,
        first_passage_episodes: args.episodes,
        seed: args.seed,
        ..VerifyPlan::default()
    };
    if plan.first_passage_episodes == 0 {
        return Err(CliError::Usage("--episodes must be at least 1".into()));
    }
    let report = verify::run(&plan)?;
    let mut stdout = io::stdout().lock();
    report.write_table(&mut stdout)?;
    writeln!(stdout, "{}", report.summary_line())?;
    if let Some(path) = &args.out {
        report.write_csv(fs::File::create(path)?)?;
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        RunManifest::new("verify")
            .param("p_grid", join(&args.p_grid))
            .param("c_grid", join(&args.c_grid))
            .param("slots", args.slots)
            .param("warmup", args.warmup)
            .param("episodes", args.episodes)
            .param("passed", report.passed())
            .seed(args.seed)
            .write_for(path)?;
    }
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<String> = report
            .failures()
            .map(|c| format!("{} [{}]", c.name, c.case))
            .collect();
        Err(CliError::Verification(names.join(", ")))
    }
}
