//! Implementations of the non-verification subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;

use maas_core::bundle::BundleObjective;
use maas_core::demand::{BookingMode, DemandConfig, PackageLengthMode};
use maas_core::market::UserRequest;
use maas_core::offline::{
    build_columns, solve_offline_ip, solve_offline_lp, OfflineSolution, PriceMode,
    ServiceWindowPolicy, DEFAULT_NODE_LIMIT,
};
use maas_core::online::{Mechanism, SlotOutcome};
use maas_core::pricing::PriceParams;
use maas_core::rolling::{HorizonConfig, RunTrace, SolverKind};
use maas_core::scenario::{write_event_log, RunSummary, Scenario};

use crate::{CliPackageMode, CompareArgs, GenArgs, OracleArgs, RatioArgs, SimulateArgs};

/// Resolves an output path: an explicit `--out` wins, otherwise the default
/// file name lands in `MAAS_OUT_DIR` (or the working directory).
pub(crate) fn resolve_out(explicit: Option<PathBuf>, default_name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let dir = std::env::var("MAAS_OUT_DIR").unwrap_or_else(|_| ".".to_string());
        Path::new(&dir).join(default_name)
    })
}

/// Serializes `value` as pretty JSON with a trailing newline.
pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Prints one line to stdout. A broken pipe (downstream closed early, e.g.
/// `head`) exits with the conventional 141 instead of panicking; file
/// outputs are always written before stdout, so artifacts survive.
pub(crate) fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(err) = writeln!(out, "{text}") {
        if err.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(141);
        }
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

fn mechanism_name(mechanism: Mechanism) -> &'static str {
    match mechanism {
        Mechanism::Payg => "payg",
        Mechanism::Paap => "paap",
    }
}

fn solver_name(solver: SolverKind) -> &'static str {
    match solver {
        SolverKind::OnlineAlgorithm => "online-alg",
        SolverKind::OnlineMilp => "online-milp",
        SolverKind::OfflineMilp => "offline-milp",
    }
}

pub(crate) fn gen(args: GenArgs) -> anyhow::Result<u8> {
    let mechanism: Mechanism = args.mechanism.into();
    let mut config = match mechanism {
        Mechanism::Payg => DemandConfig::payg_default(args.horizon.unwrap_or(120), args.seed),
        Mechanism::Paap => DemandConfig::paap_default(args.horizon.unwrap_or(100), args.seed),
    };
    if let Some(c) = args.capacity {
        config.capacity = c;
    }
    config.b_min = args.b_min;
    config.b_max = args.b_max;
    if let Some(d) = args.distance_min {
        config.distance_range.0 = d;
    }
    if let Some(d) = args.distance_max {
        config.distance_range.1 = d;
    }
    if let Some(n) = args.bids_min {
        config.bids_per_user.0 = n;
    }
    if let Some(n) = args.bids_max {
        config.bids_per_user.1 = n;
    }
    if let Some(mode) = args.package {
        if mechanism != Mechanism::Paap {
            bail!("--package applies to the paap mechanism only");
        }
        config.package_length = match mode {
            CliPackageMode::Uniform => PackageLengthMode::Uniform {
                lo: args.package_min,
                hi: args.package_max,
            },
            CliPackageMode::WeekSchedule => PackageLengthMode::WeekSchedule,
        };
    }
    if let Some(width) = args.booking_width {
        config.booking = BookingMode::Flexible { width };
    }
    let price = PriceParams::new(args.price.into(), config.capacity, config.b_min, config.b_max)?;
    let scenario = Scenario::from_demand(&config, price)?;
    let path = resolve_out(
        args.out,
        &format!("scenario-{}-{}.json", mechanism_name(mechanism), args.seed),
    );
    scenario
        .save_json(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    emit(&format!(
        "wrote {} ({} users, horizon {}, capacity {})",
        path.display(),
        scenario.users.len(),
        scenario.horizon,
        scenario.capacity
    ));
    Ok(0)
}

fn build_run_config(scenario: &Scenario, args: &SimulateArgs) -> HorizonConfig {
    let step = args.step.clamp(1, scenario.horizon.max(1));
    let window = args.window.unwrap_or(step).max(step);
    HorizonConfig {
        mechanism: scenario.mechanism,
        solver: args.solver.into(),
        step,
        window,
        booking_horizon: args.booking_horizon,
        objective: args.objective.into(),
        payment_rule: args.payment.into(),
        node_limit: args.node_limit.unwrap_or(DEFAULT_NODE_LIMIT),
    }
}

pub(crate) fn simulate(args: SimulateArgs) -> anyhow::Result<u8> {
    let scenario = Scenario::load_json(&args.scenario)
        .with_context(|| format!("loading {}", args.scenario.display()))?;
    let config = build_run_config(&scenario, &args);
    let (trace, runtime) = scenario.run(&config)?;
    let summary = RunSummary::from_trace(&scenario, &config, &trace, runtime);
    if let Some(path) = &args.out {
        summary
            .save_json(path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.trace {
        write_event_log(&trace, path).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.csv {
        write_series_csv(&summary, path)?;
    }
    emit(&serde_json::to_string_pretty(&summary)?);
    Ok(0)
}

/// One CSV row per slot: welfare booked there, acceptance among its
/// departures, posted unit price (empty when none was posted), and
/// availability when its block opened.
fn write_series_csv(summary: &RunSummary, path: &Path) -> anyhow::Result<()> {
    let mut writer =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    writer.write_record(["slot", "welfare", "acceptance_ratio", "unit_price", "availability"])?;
    for slot in 0..summary.horizon {
        let price = summary.price_series[slot]
            .map(|p| p.to_string())
            .unwrap_or_default();
        writer.write_record([
            slot.to_string(),
            summary.welfare_series[slot].to_string(),
            summary.acceptance_series[slot].to_string(),
            price,
            summary.availability_series[slot].to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct OracleAllocation {
    user_id: usize,
    bid_id: usize,
    slot: usize,
    fraction: f64,
    resources: f64,
    price: f64,
}

#[derive(Serialize)]
struct OracleReport {
    mechanism: Mechanism,
    relaxation: bool,
    objective: f64,
    proven: bool,
    nodes: usize,
    columns: usize,
    allocations: Vec<OracleAllocation>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    slot_duals: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    user_duals: Vec<f64>,
}

pub(crate) fn oracle(args: OracleArgs) -> anyhow::Result<u8> {
    let scenario = Scenario::load_json(&args.scenario)
        .with_context(|| format!("loading {}", args.scenario.display()))?;
    let refs: Vec<&UserRequest> = scenario.users.iter().collect();
    let columns = build_columns(
        &refs,
        &scenario.catalog,
        BundleObjective::MinInconvenience,
        ServiceWindowPolicy::Booked {
            booking_horizon: args.booking_horizon,
        },
        PriceMode::Ungated,
        scenario.horizon,
    )?;
    let availability = vec![scenario.capacity; scenario.horizon];
    let relaxation = args.relax || scenario.mechanism == Mechanism::Paap;
    let solution = if relaxation {
        solve_offline_lp(&columns, &availability, scenario.users.len())?
    } else {
        solve_offline_ip(
            &columns,
            &availability,
            scenario.users.len(),
            args.node_limit.unwrap_or(DEFAULT_NODE_LIMIT),
        )?
    };
    let mut allocations: Vec<OracleAllocation> = columns
        .iter()
        .zip(&solution.x)
        .filter(|(_, &x)| x > 1e-9)
        .map(|(col, &x)| OracleAllocation {
            user_id: col.user_id,
            bid_id: col.bid_id,
            slot: col.slot,
            fraction: x,
            resources: col.resources,
            price: col.price,
        })
        .collect();
    allocations.sort_by(|a, b| {
        (a.user_id, a.bid_id, a.slot).cmp(&(b.user_id, b.bid_id, b.slot))
    });
    let report = OracleReport {
        mechanism: scenario.mechanism,
        relaxation,
        objective: solution.objective,
        proven: solution.proven,
        nodes: solution.nodes,
        columns: columns.len(),
        allocations,
        slot_duals: solution.slot_duals.clone(),
        user_duals: solution.user_duals.clone(),
    };
    if let Some(path) = &args.out {
        write_json(&report, path)?;
    }
    emit(&serde_json::to_string_pretty(&report)?);
    Ok(0)
}

/// Solves the pure offline problem for the scenario: IP under payg, LP under
/// paap, departures served exactly at their slot.
pub(crate) fn offline_optimum(scenario: &Scenario) -> anyhow::Result<OfflineSolution> {
    let refs: Vec<&UserRequest> = scenario.users.iter().collect();
    let columns = build_columns(
        &refs,
        &scenario.catalog,
        BundleObjective::MinInconvenience,
        ServiceWindowPolicy::default(),
        PriceMode::Ungated,
        scenario.horizon,
    )?;
    let availability = vec![scenario.capacity; scenario.horizon];
    let solution = match scenario.mechanism {
        Mechanism::Payg => solve_offline_ip(
            &columns,
            &availability,
            scenario.users.len(),
            DEFAULT_NODE_LIMIT,
        )?,
        Mechanism::Paap => solve_offline_lp(&columns, &availability, scenario.users.len())?,
    };
    Ok(solution)
}

pub(crate) fn collect_outcomes(trace: &RunTrace) -> Vec<SlotOutcome> {
    trace
        .iterations
        .iter()
        .flat_map(|it| it.slot_outcomes.iter().cloned())
        .collect()
}

#[derive(Serialize)]
struct RatioOutput {
    online_welfare: f64,
    offline_objective: f64,
    offline_proven: bool,
    offline_nodes: usize,
    report: maas_core::analysis::RatioReport,
}

pub(crate) fn ratio(args: RatioArgs) -> anyhow::Result<u8> {
    let scenario = Scenario::load_json(&args.scenario)
        .with_context(|| format!("loading {}", args.scenario.display()))?;
    let config = HorizonConfig::online(scenario.mechanism, SolverKind::OnlineAlgorithm);
    let (trace, _) = scenario.run(&config)?;
    let outcomes = collect_outcomes(&trace);
    let offline = offline_optimum(&scenario)?;
    let report = maas_core::analysis::ratio_report(
        scenario.mechanism,
        &outcomes,
        trace.total_welfare,
        offline.objective,
    )?;
    let output = RatioOutput {
        online_welfare: trace.total_welfare,
        offline_objective: offline.objective,
        offline_proven: offline.proven,
        offline_nodes: offline.nodes,
        report,
    };
    if let Some(path) = &args.out {
        write_json(&output, path)?;
    }
    emit(&serde_json::to_string_pretty(&output)?);
    Ok(0)
}

#[derive(Serialize)]
pub(crate) struct CompareRow {
    pub label: String,
    pub solver: SolverKind,
    pub step: usize,
    pub window: usize,
    pub total_welfare: f64,
    pub users_seen: usize,
    pub users_accepted: usize,
    pub acceptance_ratio: f64,
    pub runtime_seconds: f64,
}

fn compare_table(rows: &[CompareRow]) -> String {
    let mut table = format!(
        "{:<18} {:<13} {:>5} {:>6} {:>14} {:>9} {:>8} {:>10}",
        "configuration", "solver", "step", "window", "welfare", "accepted", "ratio", "runtime_s"
    );
    for row in rows {
        let accepted = format!("{}/{}", row.users_accepted, row.users_seen);
        table.push_str(&format!(
            "\n{:<18} {:<13} {:>5} {:>6} {:>14.4} {:>9} {:>8.4} {:>10.4}",
            row.label,
            solver_name(row.solver),
            row.step,
            row.window,
            row.total_welfare,
            accepted,
            row.acceptance_ratio,
            row.runtime_seconds
        ));
    }
    table
}

pub(crate) fn compare(args: CompareArgs) -> anyhow::Result<u8> {
    let scenario = Scenario::load_json(&args.scenario)
        .with_context(|| format!("loading {}", args.scenario.display()))?;
    let horizon = scenario.horizon;
    let mechanism = scenario.mechanism;
    let window = args
        .window
        .unwrap_or_else(|| horizon.min(240))
        .clamp(1, horizon.max(1));
    let step = args.step.clamp(1, window);

    let mut online_alg = HorizonConfig::online(mechanism, SolverKind::OnlineAlgorithm);
    online_alg.window = window;
    let mut online_milp = HorizonConfig::online(mechanism, SolverKind::OnlineMilp);
    online_milp.window = window;
    let mut configs = vec![
        ("rha-online-alg".to_string(), online_alg),
        ("rha-online-milp".to_string(), online_milp),
        (
            "rha-offline-milp".to_string(),
            HorizonConfig::windowed(mechanism, step, window),
        ),
        ("sha".to_string(), HorizonConfig::one_shot(mechanism, horizon)),
    ];
    if let Some(limit) = args.node_limit {
        for (_, config) in &mut configs {
            config.node_limit = limit;
        }
    }

    let mut rows = Vec::new();
    for (label, config) in configs {
        let (trace, runtime) = scenario.run(&config)?;
        rows.push(CompareRow {
            label,
            solver: config.solver,
            step: config.step,
            window: config.window,
            total_welfare: trace.total_welfare,
            users_seen: trace.users_seen,
            users_accepted: trace.users_accepted,
            acceptance_ratio: trace.acceptance_ratio,
            runtime_seconds: runtime,
        });
    }
    if let Some(path) = &args.out {
        write_json(&rows, path)?;
    }
    emit(&compare_table(&rows));
    Ok(0)
}
