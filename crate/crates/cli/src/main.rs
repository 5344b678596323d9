//! `prefix-sls`: scenario-driven synthesis, simulation, comparison and
//! self-checks.
//!
//! Exit codes: 0 success, 1 failed self-check or output error, 2 invalid
//! configuration, 3 solver failure, 4 solution does not match the scenario.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use prefix_sls::invariants::{self, dims_of};
use prefix_sls::scenario::{Resolved, Scenario};
use prefix_sls::sim::{monte_carlo, simulate, worst_case_state_norm, CampaignOptions, RNG_ALGORITHM};
use prefix_sls::synth::{
    memoryless_l1, nominal_h2, synth_h2, synth_l1, MemorylessOptions, ProblemKind, SolutionExport, SynthesisSolution,
};
use prefix_sls::{build_prefix_tree, BoundedNoise, Campaign, Error, NoiseSpec, PrefixController, SystemResponse};
use serde_json::json;

use output::{write_json, ControllerRun};

#[derive(Parser, Debug)]
#[command(name = "prefix-sls", version, about = "Prefix-based controller synthesis for switched linear systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the scenario's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario run count.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the scenario's H2 or L1 problem and write `solution.json`.
    Synth(Common),
    /// Monte-Carlo campaign for a synthesized solution.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        solution: PathBuf,
    },
    /// Prefix-based controller against the baseline, simulated on common noise.
    Compare(Common),
    /// Randomized invariant suite on instances with the scenario's dimensions.
    Check(Common),
    /// Write the per-node gains of a solution.
    ExportController {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        solution: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Solver(String),
    Mismatch(String),
    Output(String),
    Check(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Mismatch(_) => 4,
            Failure::Output(_) | Failure::Check(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Config(_) => "config",
            Failure::Solver(_) => "solver",
            Failure::Mismatch(_) => "mismatch",
            Failure::Output(_) => "output",
            Failure::Check(_) => "check",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Config(m) | Failure::Solver(m) | Failure::Mismatch(m) | Failure::Output(m) => m.clone(),
            Failure::Check(n) => format!("{n} invariant check(s) failed"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) | Error::Model(_) | Error::Language(_) | Error::Dimension(_) | Error::OutOfRange(_) => {
                Failure::Config(msg)
            }
            Error::Infeasible(_)
            | Error::Unbounded(_)
            | Error::BadProblem(_)
            | Error::Solver(_)
            | Error::Consistency { .. } => Failure::Solver(msg),
            Error::UnknownSignal(_) | Error::Structure(_) => Failure::Mismatch(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Output(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Output(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

struct Loaded {
    scenario: Scenario,
    resolved: Resolved,
    out: PathBuf,
    campaign: CampaignOptions,
}

fn load(common: &Common) -> CliResult<Loaded> {
    let mut scenario = Scenario::load(&common.config)?;
    if let Some(seed) = common.seed {
        scenario.seed = seed;
    }
    if let Some(runs) = common.runs {
        scenario.runs = runs;
    }
    let resolved = scenario.resolve()?;
    let out = common.out.clone().unwrap_or_else(|| scenario.output_dir.clone());
    std::fs::create_dir_all(&out)?;
    let campaign = CampaignOptions {
        runs: scenario.runs,
        seed: scenario.seed,
        sampling: scenario.sampling,
        keep_traces: true,
        ..CampaignOptions::default()
    };
    Ok(Loaded { scenario, resolved, out, campaign })
}

fn solve(r: &Resolved, problem: ProblemKind) -> CliResult<SynthesisSolution> {
    Ok(match problem {
        ProblemKind::H2 => synth_h2(
            &r.model,
            &r.language,
            &r.noise,
            r.cost.as_ref().expect("validated h2 scenario has a cost"),
            &r.options,
        )?,
        ProblemKind::L1 => synth_l1(&r.model, &r.language, &r.noise, &r.options)?,
    })
}

fn read_solution(path: &Path, scenario: &Scenario) -> CliResult<SolutionExport> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let sol: SolutionExport =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let expected = scenario.config_hash();
    if sol.config_hash.as_deref() != Some(expected.as_str()) {
        return Err(Failure::Mismatch(format!(
            "solution hash {} does not match scenario hash {expected}",
            sol.config_hash.as_deref().unwrap_or("<none>")
        )));
    }
    Ok(sol)
}

fn cmd_synth(common: &Common) -> CliResult<()> {
    let ld = load(common)?;
    let sol = solve(&ld.resolved, ld.scenario.problem)?;
    let mut export = SolutionExport::new(&sol, &ld.resolved.language);
    export.config_hash = Some(ld.scenario.config_hash());
    write_json(&ld.out.join("solution.json"), &export)?;
    write_json(&ld.out.join("diagnostics.json"), &sol.diagnostics)?;
    println!(
        "{} objective {:.10e} ({} signals, {} tree nodes, {:.2}s){}",
        problem_label(ld.scenario.problem),
        sol.objective,
        ld.resolved.language.len(),
        sol.diagnostics.tree_nodes,
        sol.diagnostics.wall_time_s,
        export.worst_signal.as_ref().map(|s| format!(", worst signal {s}")).unwrap_or_default()
    );
    Ok(())
}

fn problem_label(problem: ProblemKind) -> &'static str {
    match problem {
        ProblemKind::H2 => "h2",
        ProblemKind::L1 => "l1",
    }
}

fn cmd_simulate(common: &Common, solution: &Path) -> CliResult<()> {
    let ld = load(common)?;
    let sol = read_solution(solution, &ld.scenario)?;
    let r = &ld.resolved;
    let tree = build_prefix_tree(&r.language, r.options.delay)?;
    let controller = sol.controller(&tree)?;
    let campaign = monte_carlo(&r.model, &r.language, &controller, &r.noise, r.cost.as_ref(), &ld.campaign)?;
    let run = ControllerRun { label: "prefix", campaign: &campaign };
    let files = output::write_campaign(&ld.out, common.format, &[run], r.cost.as_ref(), &r.language)?;
    let manifest = json!({
        "command": "simulate",
        "rng": RNG_ALGORITHM,
        "seed": ld.scenario.seed,
        "runs": ld.scenario.runs,
        "sampling": ld.scenario.sampling,
        "config_hash": ld.scenario.config_hash(),
        "problem": sol.problem,
        "objective": sol.objective,
        "worst_signal": sol.worst_signal,
        "files": files,
        "statistics": { "prefix": output::campaign_summary(&campaign) },
    });
    write_json(&ld.out.join("manifest.json"), &manifest)?;
    println!("simulated {} runs x {} signals into {}", ld.scenario.runs, r.language.len(), ld.out.display());
    Ok(())
}

fn cmd_compare(common: &Common) -> CliResult<()> {
    let ld = load(common)?;
    let r = &ld.resolved;
    let sol = solve(r, ld.scenario.problem)?;
    let (baseline_label, baseline) = match ld.scenario.problem {
        ProblemKind::H2 => {
            ("nominal", nominal_h2(&r.model, &r.language, &r.noise, r.cost.as_ref().expect("validated"), &r.options)?)
        }
        ProblemKind::L1 => {
            let bounds = bounds_of(r)?;
            let opts = MemorylessOptions { delay: r.options.delay, ..MemorylessOptions::default() };
            ("memoryless", memoryless_l1(&r.model, &r.language, &bounds, &opts)?)
        }
    };
    let prefix_campaign = monte_carlo(&r.model, &r.language, &sol.controller, &r.noise, r.cost.as_ref(), &ld.campaign)?;
    let base_campaign =
        monte_carlo(&r.model, &r.language, &baseline.controller, &r.noise, r.cost.as_ref(), &ld.campaign)?;
    let runs = [
        ControllerRun { label: "prefix", campaign: &prefix_campaign },
        ControllerRun { label: baseline_label, campaign: &base_campaign },
    ];
    let files = output::write_campaign(&ld.out, common.format, &runs, r.cost.as_ref(), &r.language)?;

    let mut summary = json!({
        "command": "compare",
        "rng": RNG_ALGORITHM,
        "seed": ld.scenario.seed,
        "runs": ld.scenario.runs,
        "config_hash": ld.scenario.config_hash(),
        "problem": ld.scenario.problem,
        "objectives": { "prefix": sol.objective, baseline_label: baseline.objective },
        "baseline": { "label": baseline_label, "sweeps": baseline.sweeps, "converged": baseline.converged },
        "files": files,
        "statistics": {
            "prefix": output::campaign_summary(&prefix_campaign),
            baseline_label: output::campaign_summary(&base_campaign),
        },
    });
    if ld.scenario.problem == ProblemKind::L1 {
        let bounds = bounds_of(r)?;
        let bound = sol.objective;
        let peak = |ctrl: &PrefixController, responses: &[SystemResponse]| -> CliResult<f64> {
            let mut peak = 0.0f64;
            for (s, phi) in responses.iter().enumerate() {
                let wc = worst_case_state_norm(phi, &bounds);
                let tr = simulate(&r.model, r.language.signal(s), ctrl, &wc.witness)?;
                peak = tr.state_inf_norms().into_iter().fold(peak, f64::max);
            }
            Ok(peak)
        };
        let prefix_peak = peak(&sol.controller, &sol.responses)?;
        let base_peak = peak(&baseline.controller, &baseline.responses)?;
        let mc_max = |c: &Campaign| c.mixture.state_inf_norm_max.iter().copied().fold(0.0, f64::max);
        summary["certificate"] = json!({
            "bound": bound,
            "prefix_witness_peak": prefix_peak,
            "baseline_witness_peak": base_peak,
            "prefix_simulated_max": mc_max(&prefix_campaign),
            "baseline_simulated_max": mc_max(&base_campaign),
            "prefix_within_bound": prefix_peak <= bound + 1e-6 && mc_max(&prefix_campaign) <= bound + 1e-6,
            "baseline_exceeds_bound": base_peak > bound + 1e-6,
        });
    }
    write_json(&ld.out.join("summary.json"), &summary)?;
    println!("prefix objective {:.10e}, {baseline_label} objective {:.10e}", sol.objective, baseline.objective);
    Ok(())
}

fn bounds_of(r: &Resolved) -> CliResult<BoundedNoise> {
    match &r.noise {
        NoiseSpec::Bounded(b) => Ok(*b),
        NoiseSpec::Gaussian(_) => Err(Failure::Config("l1 needs bounded noise".into())),
    }
}

fn cmd_check(common: &Common) -> CliResult<()> {
    let ld = load(common)?;
    let instances = common.runs.unwrap_or(50);
    let dims = dims_of(&ld.resolved.model, 5);
    let report = invariants::run_suite(instances, ld.scenario.seed, dims, Some(&ld.scenario));
    let failures = report.iter().filter(|c| !c.passed()).count();
    for c in &report {
        println!(
            "{} {} ({} instances, worst {:.3e}, tolerance {:.0e}){}",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.instances,
            c.worst,
            c.tolerance,
            if c.detail.is_empty() { String::new() } else { format!(": {}", c.detail) }
        );
    }
    write_json(
        &ld.out.join("check.json"),
        &json!({ "seed": ld.scenario.seed, "instances": instances, "dims": dims, "checks": report }),
    )?;
    if failures > 0 {
        return Err(Failure::Check(failures));
    }
    Ok(())
}

fn cmd_export(common: &Common, solution: &Path) -> CliResult<()> {
    let ld = load(common)?;
    let sol = read_solution(solution, &ld.scenario)?;
    // rebuilding the controller validates the gains against the scenario's tree
    let tree = build_prefix_tree(&ld.resolved.language, ld.resolved.options.delay)?;
    sol.controller(&tree)?;
    let path = output::write_controller(&ld.out, common.format, &sol)?;
    println!("wrote {} node gains to {}", sol.nodes.len(), path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(c) => cmd_synth(c),
        Command::Simulate { common, solution } => cmd_simulate(common, solution),
        Command::Compare(c) => cmd_compare(c),
        Command::Check(c) => cmd_check(c),
        Command::ExportController { common, solution } => cmd_export(common, solution),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind(), "message": f.message(), "exit_code": f.code() }));
            ExitCode::from(f.code())
        }
    }
}
