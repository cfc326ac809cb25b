use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use comod_core::equilibrium::evaluate_exact;
use comod_core::mc::{validate_state, SimConfig};
use comod_core::optimizer::algorithm::{best_of, multistart, Method};
use comod_core::optimizer::{relative_spread, OptReport, StartPoint};
use comod_core::scenario::benchmark::run_benchmarks;
use comod_core::scenario::report::{
    benchmark_report, emit_reports, runs_table, state_report, sweep_report, validation_table, Manifest, ReportSet,
};
use comod_core::scenario::sweep::sweep;
use comod_core::scenario::{sf11, toy, ScenarioSpec};
use comod_core::Error;

#[derive(Parser)]
#[command(name = "comod", version, about = "Pricing and equilibrium of an integrated ride and parcel platform")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file, or `sf11` / `toy` for a built-in scenario.
    #[arg(long, global = true, default_value = "sf11")]
    scenario: String,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for start points and simulation; defaults to the scenario's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of random start points; defaults to the scenario's.
    #[arg(long, global = true)]
    starts: Option<usize>,
    /// Demand level; defaults to the scenario's ratio.
    #[arg(long, global = true)]
    level: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the equilibrium at the default start point and dump it.
    Eval,
    /// Multistart profit maximization.
    Optimize {
        /// Also run the direct formulation from the same starts.
        #[arg(long)]
        compare_direct: bool,
    },
    /// Optimize at every level of the scenario's sweep.
    Sweep,
    /// Compare the integrated platform with the benchmark market structures.
    Benchmark,
    /// Check analytic chain quantities against Monte Carlo simulation.
    Validate {
        /// Walks or events per replication.
        #[arg(long, default_value_t = 20_000)]
        samples: u64,
        #[arg(long, default_value_t = 5)]
        replications: usize,
        /// Origin zone (1-based) of the passage and delivery checks.
        #[arg(long, default_value_t = 1)]
        origin: usize,
    },
    /// Sweep plus benchmarks in one output directory.
    Report,
}

fn load(common: &Common) -> anyhow::Result<ScenarioSpec> {
    let path = Path::new(&common.scenario);
    let mut spec = if path.exists() {
        ScenarioSpec::load(path).with_context(|| format!("loading {}", path.display()))?
    } else {
        match common.scenario.as_str() {
            "sf11" => sf11(),
            "toy" => toy(),
            other => bail!("scenario file {other} not found"),
        }
    };
    if let Some(seed) = common.seed {
        spec.solver.seed = seed;
    }
    if let Some(starts) = common.starts {
        spec.solver.starts = starts;
    }
    if let Some(level) = common.level {
        spec.ratio = level;
    }
    spec.validate()?;
    Ok(spec)
}

fn write(set: &ReportSet, command: &str, spec: &ScenarioSpec, out: &Path) -> anyhow::Result<()> {
    let manifest = Manifest::new(command, spec)?;
    let files = emit_reports(set, &manifest, out)?;
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

fn summarize(label: &str, runs: &[comod_core::Result<OptReport>]) {
    let ok: Vec<&OptReport> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
    let profits: Vec<f64> = ok.iter().map(|r| r.profit).collect();
    let feasible = ok.iter().filter(|r| r.converged).count();
    println!("{label}: {} of {} runs finished, {feasible} within residual tolerance", ok.len(), runs.len());
    if !profits.is_empty() {
        println!("{label}: best profit {:.4} $/min, spread {:.4}%", profits.iter().cloned().fold(f64::MIN, f64::max), 100.0 * relative_spread(&profits));
    }
    let mut times: Vec<f64> = ok.iter().map(|r| r.wall_time).collect();
    times.sort_by(f64::total_cmp);
    if let Some(t) = times.get(times.len() / 2) {
        eprintln!("{label}: median wall time {t:.2}s");
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = &cli.common;
    let spec = load(common)?;
    let cfg = &spec.solver;
    match cli.command {
        Command::Eval => {
            let market = spec.market()?;
            let st = StartPoint::default_for(&market);
            let state = evaluate_exact(&market, &st.r_r, &st.c_df, &st.n_idle)?;
            println!("profit {:.4} $/min, drivers {:.1}, wage {:.2} $/hr", state.profit, state.required_drivers, state.q);
            write(&state_report(&market, &state), "eval", &spec, &common.out)?;
        }
        Command::Optimize { compare_direct } => {
            let market = spec.market()?;
            let t0 = Instant::now();
            let runs = multistart(&market, cfg, Method::Algorithm1);
            eprintln!("algorithm1: {:.2}s total", t0.elapsed().as_secs_f64());
            summarize("algorithm1", &runs);
            let mut set = ReportSet::default();
            set.tables.push(runs_table("runs", &runs));
            if compare_direct {
                let t0 = Instant::now();
                let direct = multistart(&market, cfg, Method::Direct);
                eprintln!("direct: {:.2}s total", t0.elapsed().as_secs_f64());
                summarize("direct", &direct);
                set.tables.push(runs_table("runs_direct", &direct));
            }
            let Some(best) = best_of(&runs) else {
                let err = runs.into_iter().find_map(|r| r.err()).unwrap_or(Error::NoFeasibleStart("no runs".into()));
                return Err(err.into());
            };
            if let Some(state) = &best.state {
                set.extend(state_report(&market, state));
            }
            write(&set, "optimize", &spec, &common.out)?;
        }
        Command::Sweep => {
            let res = sweep(&spec, &spec.sweep, cfg)?;
            for r in &res.rows {
                println!("level {:.2}: profit {:.4} drivers {:.1}", r.level, r.profit, r.drivers);
            }
            println!("{:?}", res.trends());
            write(&sweep_report(&res)?, "sweep", &spec, &common.out)?;
        }
        Command::Benchmark => {
            let b = run_benchmarks(&spec, spec.ratio, cfg)?;
            println!(
                "integrated {:.4}, separate {:.4}, on-demand only {:.4}, ride only {:.4} $/min",
                b.integrated.profit,
                b.separate.profit(),
                b.ondemand_only.profit,
                b.ride_only.profit
            );
            if b.separate.warning {
                eprintln!("warning: separate-platform best responses did not settle; reporting the average of the last two");
            }
            write(&benchmark_report(&b), "benchmark", &spec, &common.out)?;
        }
        Command::Validate { samples, replications, origin } => {
            if origin == 0 {
                bail!("zones are numbered from 1");
            }
            let market = spec.market()?;
            let st = StartPoint::default_for(&market);
            let state = evaluate_exact(&market, &st.r_r, &st.c_df, &st.n_idle)?;
            let sim = SimConfig { seed: cfg.seed, samples, replications, ..SimConfig::default() };
            let rows = validate_state(&market, &state, origin - 1, &sim)?;
            let failed = rows.iter().filter(|r| !r.pass).count();
            println!("{} comparisons, {failed} failed", rows.len());
            let set = ReportSet { tables: vec![validation_table(&rows)], charts: vec![] };
            write(&set, "validate", &spec, &common.out)?;
        }
        Command::Report => {
            let res = sweep(&spec, &spec.sweep, cfg)?;
            let mut set = sweep_report(&res)?;
            set.extend(benchmark_report(&run_benchmarks(&spec, spec.ratio, cfg)?));
            write(&set, "report", &spec, &common.out)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InfeasibleSupply { .. } | Error::InfeasibleRegion { .. } | Error::NoFeasibleStart(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
