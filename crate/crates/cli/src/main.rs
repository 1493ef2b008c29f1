use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hazard_core::congestion::ErrorCostModel;
use hazard_core::ingest::{
    fit_two_state_chain, load_scenario, read_labeled_sequences, scenario_hash, stationary,
};
use hazard_core::planner::{exploration_threshold, Planner, PlannerConfig, ThresholdSlice};
use hazard_core::poa::{bound_from_k, char_poa, empirical_poa, write_poa_csv, write_poa_long};
use hazard_core::presets::{preset, threshold_slice};
use hazard_core::scenario::Scenario;
use hazard_core::sim::{
    monte_carlo_checkpoints, run_episode, write_summary_csv, write_trace_csv, CharEvaluator, Policy,
    PolicyKind, PolicyOptions,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "hazard",
    version,
    about = "Congestion games with crowd-sourced hazard learning"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one policy and write a trace of the first replication plus a summary.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "myopic")]
        policy: String,
    },
    /// Run several policies on paired seeds and tabulate costs per horizon.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated policy names.
        #[arg(long, value_delimiter = ',', default_value = "myopic,hiding,char,optimal")]
        policies: Vec<String>,
        /// Extra horizons reported along with `--T`.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Vec<usize>,
    },
    /// Empirical price of anarchy of a policy against a reference policy.
    Poa {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "myopic")]
        policy: String,
        #[arg(long, default_value = "optimal")]
        reference: String,
    },
    /// Closed-form price-of-anarchy values.
    Bounds {
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long = "M")]
        m: Option<usize>,
        #[arg(long = "N")]
        n: Option<f64>,
        #[arg(long)]
        v0: Option<f64>,
    },
    /// Fit two-state chains to labelled sequences (CSV: road,timestamp_index,label).
    Fit {
        input: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        interval_minutes: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Belief threshold above which the social optimum out-explores myopic routing.
    Threshold {
        #[command(flatten)]
        src: ScenarioArgs,
        #[command(flatten)]
        planner: PlannerArgs,
        #[arg(long, default_value_t = 50)]
        points: usize,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Replace the error-cost scale of the scenario.
        #[arg(long)]
        v0: Option<f64>,
        #[command(flatten)]
        slice: SliceArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

/// Overrides for the state slice the threshold is read from.
#[derive(Args)]
struct SliceArgs {
    #[arg(long)]
    prev_latency: Option<f64>,
    #[arg(long)]
    prev_flow: Option<f64>,
    #[arg(long)]
    users: Option<f64>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    scenario: Option<PathBuf>,
    /// Built-in scenario name.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct PlannerArgs {
    /// Points per axis of the planner grid.
    #[arg(long, default_value_t = 101)]
    grid: usize,
    /// Flow step of the optimal policy.
    #[arg(long)]
    resolution: Option<f64>,
    /// Rank CHAR candidates by a rollout of this depth instead of the planner values.
    #[arg(long)]
    char_rollout: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    src: ScenarioArgs,
    #[command(flatten)]
    planner: PlannerArgs,
    #[arg(long = "T", default_value_t = 600)]
    horizon: usize,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
    /// Worker threads for replications.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

/// Bad flags or files; reported with exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
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

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<hazard_core::Error>() {
            return if err.is_config() { 2 } else { 3 };
        }
    }
    3
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Simulate { run, policy } => simulate(&run, &policy),
        Cmd::Compare {
            run,
            policies,
            checkpoints,
        } => compare(&run, &policies, &checkpoints),
        Cmd::Poa {
            run,
            policy,
            reference,
        } => poa(&run, &policy, &reference),
        Cmd::Bounds { rho, k, m, n, v0 } => bounds(rho, k, m, n, v0),
        Cmd::Fit {
            input,
            interval_minutes,
            out,
            force,
        } => fit(&input, interval_minutes, out.as_deref(), force),
        Cmd::Threshold {
            src,
            planner,
            points,
            tol,
            v0,
            slice,
            out,
            force,
        } => threshold(&src, &planner, points, tol, v0, &slice, out.as_deref(), force),
    }
}

fn load(src: &ScenarioArgs) -> Result<Scenario> {
    match (&src.scenario, &src.preset) {
        (Some(path), _) => {
            if !path.is_file() {
                return Err(usage(format!("scenario file {} not found", path.display())));
            }
            Ok(load_scenario(path).with_context(|| format!("loading {}", path.display()))?)
        }
        (None, Some(name)) => Ok(preset(name)?),
        (None, None) => Err(usage("give --scenario or --preset")),
    }
}

fn options(args: &PlannerArgs) -> Result<PolicyOptions> {
    if args.grid < 2 {
        return Err(usage("--grid must be at least 2"));
    }
    Ok(PolicyOptions {
        planner: PlannerConfig {
            belief_points: args.grid,
            latency_points: args.grid,
            ..PlannerConfig::default()
        },
        char_evaluator: match args.char_rollout {
            Some(depth) => CharEvaluator::Rollout { depth },
            None => CharEvaluator::Planner,
        },
        solved: None,
        optimal_resolution: args.resolution,
    })
}

/// Prepares the named policies, solving the planner at most once.
fn prepare(names: &[String], s: &Scenario, opts: &PolicyOptions) -> Result<Vec<Policy>> {
    let kinds = names
        .iter()
        .map(|n| PolicyKind::parse(n))
        .collect::<hazard_core::Result<Vec<_>>>()?;
    let mut opts = opts.clone();
    if kinds.iter().any(|k| k.needs_planner()) {
        opts.solved = Some(Arc::new(Planner::solve(s, &opts.planner)?));
    }
    let mut out = Vec::with_capacity(kinds.len());
    for k in kinds {
        let p = Policy::prepare(k, s, &opts)?;
        for note in &p.notes {
            eprintln!("note: {note}");
        }
        out.push(p);
    }
    Ok(out)
}

fn header(s: Option<&Scenario>, seed: Option<u64>) -> String {
    let flags: Vec<String> = std::env::args().skip(1).collect();
    format!(
        "# hazard {VERSION}, scenario {}, seed {}, flags {}\n",
        s.map(scenario_hash).unwrap_or_else(|| "-".into()),
        seed.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
        flags.join(" ")
    )
}

/// Resolves output paths and refuses to clobber existing files without `--force`.
fn targets(dir: &Path, names: &[&str], force: bool) -> Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(usage(format!(
                "{} exists; pass --force to overwrite",
                p.display()
            )));
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(paths)
}

fn create(path: &Path, head: &str) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    w.write_all(head.as_bytes())?;
    Ok(w)
}

fn simulate(run: &RunArgs, policy: &str) -> Result<()> {
    let s = load(&run.src)?;
    let p = prepare(&[policy.to_string()], &s, &options(&run.planner)?)?.remove(0);
    let files = targets(&run.out, &["trace.csv", "summary.csv"], run.force)?;
    let head = header(Some(&s), Some(run.seed));

    let trace = run_episode(
        &s,
        &p,
        run.horizon,
        hazard_core::rng::replication_seed(run.seed, 0),
    )?;
    let mut w = create(&files[0], &head)?;
    write_trace_csv(&trace, &s, &mut w)?;
    w.flush()?;

    let summary = monte_carlo_checkpoints(&s, &p, &[run.horizon], run.reps, run.seed, run.jobs)?;
    let mut w = create(&files[1], &head)?;
    write_summary_csv(&summary, &mut w)?;
    w.flush()?;
    let m = &summary[0];
    println!(
        "{}: {:.4} +- {:.4} (T={}, reps={}, seed={})",
        m.policy, m.mean, m.stderr, m.horizon, m.replications, m.seed
    );
    Ok(())
}

fn compare(run: &RunArgs, names: &[String], extra: &[usize]) -> Result<()> {
    if names.is_empty() {
        return Err(usage("--policies is empty"));
    }
    let s = load(&run.src)?;
    let policies = prepare(names, &s, &options(&run.planner)?)?;
    let mut cps: Vec<usize> = extra.iter().copied().chain([run.horizon]).collect();
    cps.sort_unstable();
    cps.dedup();
    if cps.first() == Some(&0) {
        return Err(usage("horizons must be >= 1"));
    }
    let files = targets(&run.out, &["compare.csv"], run.force)?;
    let mut w = create(&files[0], &header(Some(&s), Some(run.seed)))?;
    writeln!(w, "policy,T,mean,stderr,replications,seed")?;
    for p in &policies {
        for m in monte_carlo_checkpoints(&s, p, &cps, run.reps, run.seed, run.jobs)? {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                m.policy, m.horizon, m.mean, m.stderr, m.replications, m.seed
            )?;
            println!(
                "{:<18} T={:<5} {:.4} +- {:.4}",
                m.policy, m.horizon, m.mean, m.stderr
            );
        }
    }
    w.flush()?;
    Ok(())
}

fn poa(run: &RunArgs, policy: &str, reference: &str) -> Result<()> {
    let s = load(&run.src)?;
    let mut ps = prepare(
        &[policy.to_string(), reference.to_string()],
        &s,
        &options(&run.planner)?,
    )?;
    let r_ref = ps.pop().expect("two policies");
    let r_pol = ps.pop().expect("two policies");
    let files = targets(&run.out, &["poa.csv", "poa_long.csv"], run.force)?;
    let mut report = empirical_poa(&s, &r_pol, &r_ref, run.horizon, run.reps, run.seed, run.jobs)?;
    if r_pol.kind == PolicyKind::Myopic {
        report = report.with_myopic_bound(&s);
    }
    let head = header(Some(&s), Some(run.seed));
    let mut w = create(&files[0], &head)?;
    write_poa_csv(std::slice::from_ref(&report), &mut w)?;
    w.flush()?;
    let mut w = create(&files[1], &head)?;
    write_poa_long(std::slice::from_ref(&report), &mut w)?;
    w.flush()?;
    println!(
        "{} / {}: {:.4} +- {:.4}",
        report.policy, report.reference, report.ratio, report.ratio_stderr
    );
    if let (Some(b), Some(k)) = (report.bound, report.k) {
        println!("myopic lower bound {b:.4} at k={k:.4}");
    }
    Ok(())
}

fn bounds(rho: Option<f64>, k: Option<f64>, m: Option<usize>, n: Option<f64>, v0: Option<f64>) -> Result<()> {
    let mut printed = false;
    match (rho, k) {
        (Some(rho), Some(k)) => {
            if !(rho > 0.0 && rho < 1.0) || !(k >= 1.0) {
                return Err(usage("--rho must lie in (0, 1) and --k must be >= 1"));
            }
            println!(
                "myopic lower bound (rho={rho}, k={k}): {:.4}",
                bound_from_k(rho, k)
            );
            printed = true;
        }
        (None, None) => {}
        _ => return Err(usage("--rho and --k go together")),
    }
    if m.is_some() || n.is_some() || v0.is_some() {
        let (Some(m), Some(n)) = (m, n) else {
            return Err(usage("--M and --N are both required for the CHAR value"));
        };
        let err = ErrorCostModel {
            v0: v0.unwrap_or(0.0),
        };
        if m == 0 || !(n > 0.0) {
            return Err(usage("--M must be >= 1 and --N > 0"));
        }
        err.validate()?;
        println!(
            "CHAR price of anarchy (M={m}, N={n}, v0={}): {:.4}",
            err.v0,
            char_poa(m, n, &err)
        );
        printed = true;
    }
    if !printed {
        return Err(usage("give --rho and --k, or --M and --N (with --v0)"));
    }
    Ok(())
}

fn fit(input: &Path, interval: f64, out: Option<&Path>, force: bool) -> Result<()> {
    let file = File::open(input).map_err(|e| usage(format!("cannot open {}: {e}", input.display())))?;
    let seqs = read_labeled_sequences(file, interval)?;
    let mut rows = Vec::new();
    for seq in &seqs {
        let f = fit_two_state_chain(&seq.labels)?;
        for w in &f.warnings {
            eprintln!("warning: {}: {w}", seq.road);
        }
        let x = stationary(&f.chain).ok();
        println!(
            "{}: p_LH={} p_HL={} stationary={}",
            seq.road,
            f.chain.p_lh,
            f.chain.p_hl,
            x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "undefined".into())
        );
        rows.push((seq.road.clone(), seq.labels.len(), f.chain, x));
    }
    if let Some(dir) = out {
        let files = targets(dir, &["fit.csv", "paths.json"], force)?;
        let head = header(None, None);
        let mut w = create(&files[0], &head)?;
        writeln!(w, "road,steps,p_LH,p_HL,stationary")?;
        for (road, len, c, x) in &rows {
            writeln!(
                w,
                "{road},{len},{},{},{}",
                c.p_lh,
                c.p_hl,
                x.map(|v| v.to_string()).unwrap_or_default()
            )?;
        }
        w.flush()?;
        let paths: Vec<serde_json::Value> = rows
            .iter()
            .map(|(road, _, c, x)| {
                serde_json::json!({
                    "name": road,
                    "chain": {"p_LH": c.p_lh, "p_HL": c.p_hl},
                    "initial_belief": x.unwrap_or(0.5),
                    "initial_exp_latency": 0.0,
                })
            })
            .collect();
        let doc = serde_json::json!({
            "generated_by": head.trim_start_matches("# ").trim_end(),
            "paths": paths,
        });
        fs::write(&files[1], serde_json::to_string_pretty(&doc)? + "\n")?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn threshold(
    src: &ScenarioArgs,
    planner: &PlannerArgs,
    points: usize,
    tol: f64,
    v0: Option<f64>,
    over: &SliceArgs,
    out: Option<&Path>,
    force: bool,
) -> Result<()> {
    if points < 2 || !(tol > 0.0) {
        return Err(usage("--points must be >= 2 and --tol > 0"));
    }
    let mut s = load(src)?;
    if let Some(v0) = v0 {
        s.err = ErrorCostModel { v0 };
        s.err.validate()?;
    }
    let files = out.map(|d| targets(d, &["threshold.csv"], force)).transpose()?;
    let opts = options(planner)?;
    let pl = Planner::solve(&s, &opts.planner)?;
    let mut slice = if src.preset.as_deref() == Some("threshold") {
        threshold_slice()
    } else {
        ThresholdSlice::default_for(&s)
    };
    slice.prev_latency = over.prev_latency.unwrap_or(slice.prev_latency);
    slice.prev_flow = over.prev_flow.unwrap_or(slice.prev_flow);
    slice.users = over.users.unwrap_or(slice.users);
    if !(slice.prev_latency >= 0.0 && slice.prev_flow >= 0.0 && slice.users > 0.0) {
        return Err(usage("slice latency and flow must be >= 0 and users > 0"));
    }
    let th = exploration_threshold(&pl, &slice, points, tol);
    println!(
        "x_th = {:.4}{} (sign changes: {}, slice latency {:.4}, flow {:.4}, users {:.4})",
        th.x_th,
        if th.no_crossing { " [no crossing]" } else { "" },
        th.sign_changes,
        slice.prev_latency,
        slice.prev_flow,
        slice.users
    );
    if let Some(files) = files {
        let mut w = create(&files[0], &header(Some(&s), None))?;
        writeln!(w, "belief,flow_gap")?;
        for (x, g) in &th.sweep {
            writeln!(w, "{x},{g}")?;
        }
        w.flush()?;
    }
    Ok(())
}
