//! Command implementations.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use mmalora::analytical::AnalyticalModel;
use mmalora::experiment::{
    compare_algorithms, mean_ci95, run_pipeline, validate_case, Algorithm, CompareConfig, ComparisonRow, SfPolicy,
    ValidationCase, ValidationRow,
};
use mmalora::maac::{env::ee_scale, save_checkpoint, train, Checkpoint, CurvePoint, MaacConfig};
use mmalora::matching::{init_matching, run_matching, Matching, SwapMatcher};
use mmalora::model::{
    assignment_records, distance_based_assignment, generate_scenario, load_assignment, load_scenario,
    scenario_to_string, Assignment, ChannelPlan, NetworkScenario, PlacementRules, SpreadingFactor,
};
use mmalora::simulator::{horizon_for_packets, SimConfig, Simulator};
use mmalora::{Error, Result};

use crate::config::{Cli, Command, ExperimentConfig, Sweep};
use crate::output::Output;

#[derive(Serialize)]
struct Resolved<'a> {
    command: &'a Command,
    config: &'a ExperimentConfig,
}

pub fn run(cli: Cli) -> Result<()> {
    let base = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let cfg = base.resolve(&cli)?;
    if let Some(w) = cli.workers {
        // a second initialisation only happens in tests that call run twice
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w as usize).build_global();
    }
    let out = Output::new(
        &cfg.out,
        cfg.format,
        cli.command.name(),
        &Resolved { command: &cli.command, config: &cfg },
        &cfg.seeds,
    )?;
    match &cli.command {
        Command::Generate(a) => generate(&cfg, &out, a),
        Command::Analyze(a) => analyze(&cfg, &out, a.assignment.as_deref()),
        Command::Simulate(a) => simulate(&cfg, &out, a),
        Command::Match(_) => match_channels(&cfg, &out),
        Command::Train(a) => train_cmd(&cfg, &out, a.matching.as_deref()),
        Command::Optimize(a) => optimize(&cfg, &out, a.sim_packets),
        Command::Compare(a) => compare(&cfg, &out, a),
        Command::Validate(a) => validate(&cfg, &out, a),
    }
}

fn scenario(cfg: &ExperimentConfig) -> Result<NetworkScenario> {
    match &cfg.scenario {
        Some(path) => load_scenario(path),
        None => Err(Error::InvalidParameter("no scenario given; pass --scenario or set it in the config".into())),
    }
}

fn assignment_or_default(
    path: Option<&std::path::Path>,
    s: &NetworkScenario,
    plan: &ChannelPlan,
) -> Result<Assignment> {
    let a = match path {
        Some(p) => load_assignment(p)?,
        None => distance_based_assignment(s, plan)?,
    };
    a.validate(s, plan)?;
    Ok(a)
}

#[derive(Serialize)]
struct PositionRow {
    kind: &'static str,
    index: usize,
    x_m: f64,
    y_m: f64,
}

fn generate(cfg: &ExperimentConfig, out: &Output, a: &crate::config::GenerateArgs) -> Result<()> {
    let defaults = PlacementRules::default();
    let rules = PlacementRules {
        area_m: a.area.unwrap_or(defaults.area_m),
        min_gateway_spacing_m: a.spacing.unwrap_or(defaults.min_gateway_spacing_m),
        cell_radius_m: a.radius.unwrap_or(defaults.cell_radius_m),
        ..defaults
    };
    let s = generate_scenario(cfg.first_seed(), a.gws as usize, a.eds, &rules)?;
    out.file("scenario.toml", &scenario_to_string(&s)?, json!({ "placement": rules }))?;
    let rows: Vec<PositionRow> = s
        .geometry
        .gateways
        .iter()
        .enumerate()
        .map(|(i, p)| PositionRow { kind: "gateway", index: i, x_m: p.x, y_m: p.y })
        .chain(s.geometry.devices.iter().enumerate().map(|(i, p)| PositionRow {
            kind: "device",
            index: i,
            x_m: p.x,
            y_m: p.y,
        }))
        .collect();
    out.table("positions", &rows, Value::Null)?;
    Ok(())
}

#[derive(Serialize)]
struct DeviceRow {
    device: usize,
    channel: usize,
    sf: u8,
    tp_dbm: f64,
    pdr: f64,
    ee_bits_per_joule: f64,
}

#[derive(Serialize)]
struct GatewayRow {
    device: usize,
    gateway: usize,
    pdr: f64,
}

fn analyze(cfg: &ExperimentConfig, out: &Output, assignment: Option<&std::path::Path>) -> Result<()> {
    let s = scenario(cfg)?;
    let plan = cfg.plan.build(s.device_count())?;
    let a = assignment_or_default(assignment, &s, &plan)?;
    let ev = AnalyticalModel::new(&s, &plan)?.with_fading(cfg.fading).evaluate(&a)?;
    let rows: Vec<DeviceRow> = assignment_records(&a)
        .into_iter()
        .map(|r| DeviceRow {
            device: r.device,
            channel: r.channel,
            sf: r.sf,
            tp_dbm: r.tp_dbm,
            pdr: ev.pdr.per_device[r.device],
            ee_bits_per_joule: ev.ee.per_device[r.device],
        })
        .collect();
    let summary = json!({
        "fading": cfg.fading,
        "system_ee": ev.ee.system,
        "mean_pdr": ev.pdr.mean(),
        "channel_ee": ev.ee.per_channel,
    });
    out.table("analyze", &rows, summary)?;
    let per_gw: Vec<GatewayRow> = (0..a.len())
        .flat_map(|i| (0..ev.pdr.gateways).map(move |k| (i, k)))
        .map(|(i, k)| GatewayRow { device: i, gateway: k, pdr: ev.pdr.at(i, k) })
        .collect();
    out.table("analyze_gateways", &per_gw, Value::Null)?;
    Ok(())
}

#[derive(Serialize)]
struct SimRow {
    device: usize,
    sent: u64,
    delivered: u64,
    pdr: f64,
    analytical_pdr: f64,
    ee_bits_per_joule: f64,
}

fn simulate(cfg: &ExperimentConfig, out: &Output, a: &crate::config::SimulateArgs) -> Result<()> {
    let s = scenario(cfg)?;
    let plan = cfg.plan.build(s.device_count())?;
    let asg = assignment_or_default(a.assignment.as_deref(), &s, &plan)?;
    let analytical = AnalyticalModel::new(&s, &plan)?.with_fading(cfg.fading).evaluate(&asg)?;
    let horizon = horizon_for_packets(&s, &plan, &asg, a.packets)?;
    let stats = Simulator::new(&s, &plan)?
        .run(&asg, &SimConfig { horizon_s: horizon, replications: a.replications.max(1), seed: cfg.first_seed() })?;
    if stats.undersampled {
        log::warn!("some devices sent fewer than 100 packets; raise --packets");
    }
    let rows: Vec<SimRow> = (0..asg.len())
        .map(|i| SimRow {
            device: i,
            sent: stats.sent[i],
            delivered: stats.delivered[i],
            pdr: stats.pdr[i],
            analytical_pdr: analytical.pdr.per_device[i],
            ee_bits_per_joule: stats.ee[i],
        })
        .collect();
    let summary = json!({
        "horizon_s": stats.horizon_s,
        "replications": stats.replications,
        "undersampled": stats.undersampled,
        "mean_pdr": stats.mean_pdr(),
        "system_ee": stats.system_ee(),
        "mae": mmalora::analytical::mae(&analytical.pdr.per_device, &stats.pdr)?,
    });
    out.table("simulate", &rows, summary)?;
    Ok(())
}

#[derive(Serialize)]
struct SwapRow {
    iteration: usize,
    i: usize,
    i_prime: usize,
    c: usize,
    c_prime: usize,
    system_ee_before: f64,
    system_ee_after: f64,
}

fn match_channels(cfg: &ExperimentConfig, out: &Output) -> Result<()> {
    let s = scenario(cfg)?;
    let plan = cfg.plan.build(s.device_count())?;
    let matcher = SwapMatcher::new(&s, &plan)?;
    let outcome = matcher.run(&plan, cfg.first_seed())?;
    let a = matcher.stage_one_assignment(&outcome.matching)?;
    let summary = json!({
        "scans": outcome.scans,
        "swaps": outcome.swaps.len(),
        "converged": outcome.converged,
        "two_sided_exchange_stable": matcher.verify_2es(&outcome.matching),
        "initial_system_ee": outcome.initial_system_ee,
        "final_system_ee": outcome.final_system_ee,
    });
    out.table("match_assignment", &assignment_records(&a), summary)?;
    let swaps: Vec<SwapRow> = outcome
        .swaps
        .iter()
        .map(|w| SwapRow {
            iteration: w.iteration,
            i: w.i,
            i_prime: w.i_prime,
            c: w.c,
            c_prime: w.c_prime,
            system_ee_before: w.system_ee_before,
            system_ee_after: w.system_ee_after,
        })
        .collect();
    out.table("match_swaps", &swaps, Value::Null)?;
    Ok(())
}

fn learning_details(cfg: &MaacConfig, s: &NetworkScenario, plan: &ChannelPlan) -> Result<Value> {
    let model = AnalyticalModel::new(s, plan)?;
    let scales: Vec<f64> = plan.bandwidths().iter().map(|&bw| ee_scale(&model, bw)).collect();
    Ok(json!({
        "hyperparameters": cfg,
        "observation": {
            "pdr": "previous-slot PDR",
            "ee": "previous-slot EE divided by ee_scale",
            "ee_scale_bits_per_joule": scales,
            "distances": "distance to each gateway divided by cell_radius_m, capped at 1",
            "cell_radius_m": s.geometry.cell_radius_m,
        },
    }))
}

fn train_cmd(cfg: &ExperimentConfig, out: &Output, matching: Option<&std::path::Path>) -> Result<()> {
    let s = scenario(cfg)?;
    let plan = cfg.plan.build(s.device_count())?;
    let seed = cfg.first_seed();
    let m = match matching {
        Some(path) => {
            let a = load_assignment(path)?;
            Matching::from_channels(a.channel, plan.channel_count(), plan.quota())?
        }
        None => run_matching(&s, &plan, seed)?.matching,
    };
    let outcome = train(&s, &plan, &m, &cfg.maac, seed)?;
    let details = learning_details(&cfg.maac, &s, &plan)?;
    let checkpoint = Checkpoint::new(cfg.maac.clone(), outcome.policies());
    let path = out.path("train_checkpoint.json");
    save_checkpoint(&checkpoint, &path)?;
    out.sidecar(&path, details.clone())?;
    out.table("train_curve", &outcome.curve, details)?;
    out.table("train_assignment", &assignment_records(&outcome.assignment), Value::Null)?;
    Ok(())
}

#[derive(Serialize)]
struct EvaluationRow {
    device: usize,
    channel: usize,
    sf: u8,
    tp_dbm: f64,
    analytical_pdr: f64,
    analytical_ee: f64,
    simulated_pdr: Option<f64>,
    simulated_ee: Option<f64>,
    below_threshold: bool,
}

fn optimize(cfg: &ExperimentConfig, out: &Output, sim_packets: f64) -> Result<()> {
    let s = scenario(cfg)?;
    let plan = cfg.plan.build(s.device_count())?;
    let seed = cfg.first_seed();
    let (assignment, curve, stage_log, details) = match (cfg.stages.matching, cfg.stages.allocation) {
        (true, true) => {
            let p = run_pipeline(&s, &plan, &cfg.maac, seed)?;
            let log = json!(p.stage_log);
            let matching = json!({
                "scans": p.matching.scans,
                "swaps": p.matching.swaps.len(),
                "final_system_ee": p.matching.final_system_ee,
            });
            (p.assignment, p.training.curve, log, matching)
        }
        (matching_on, allocation_on) => {
            let m = if matching_on {
                run_matching(&s, &plan, seed).map_err(|e| e.in_stage("matching"))?.matching
            } else {
                init_matching(s.device_count(), &plan, seed)?
            };
            if allocation_on {
                let t = train(&s, &plan, &m, &cfg.maac, seed).map_err(|e| e.in_stage("allocation"))?;
                (t.assignment, t.curve, Value::Null, Value::Null)
            } else {
                let a = SwapMatcher::new(&s, &plan)?.stage_one_assignment(&m)?;
                (a, Vec::<CurvePoint>::new(), Value::Null, Value::Null)
            }
        }
    };
    let ev = AnalyticalModel::new(&s, &plan)?.with_fading(cfg.fading).evaluate(&assignment)?;
    let sim = if sim_packets > 0.0 {
        let horizon = horizon_for_packets(&s, &plan, &assignment, sim_packets)?;
        Some(Simulator::new(&s, &plan)?.run(&assignment, &SimConfig { horizon_s: horizon, replications: 1, seed })?)
    } else {
        None
    };
    let rows: Vec<EvaluationRow> = assignment_records(&assignment)
        .into_iter()
        .map(|r| EvaluationRow {
            device: r.device,
            channel: r.channel,
            sf: r.sf,
            tp_dbm: r.tp_dbm,
            analytical_pdr: ev.pdr.per_device[r.device],
            analytical_ee: ev.ee.per_device[r.device],
            simulated_pdr: sim.as_ref().map(|x| x.pdr[r.device]),
            simulated_ee: sim.as_ref().map(|x| x.ee[r.device]),
            below_threshold: ev.pdr.per_device[r.device] < cfg.maac.pdr_threshold,
        })
        .collect();
    let summary = json!({
        "stage_log": stage_log,
        "stages": cfg.stages,
        "matching": details,
        "system_ee": ev.ee.system,
        "mean_pdr": ev.pdr.mean(),
        "simulated_mean_pdr": sim.as_ref().map(|x| x.mean_pdr()),
        "simulated_system_ee": sim.as_ref().map(|x| x.system_ee()),
    });
    out.table("optimize_assignment", &assignment_records(&assignment), Value::Null)?;
    out.table("optimize_evaluation", &rows, summary)?;
    out.table("optimize_curve", &curve, learning_details(&cfg.maac, &s, &plan)?)?;
    Ok(())
}

#[derive(Serialize)]
struct CompareSummaryRow {
    gateways: usize,
    devices: usize,
    algorithm: Algorithm,
    samples: usize,
    system_ee_mean: f64,
    system_ee_ci95: Option<f64>,
    mean_pdr_mean: f64,
    mean_pdr_ci95: Option<f64>,
}

fn compare(cfg: &ExperimentConfig, out: &Output, a: &crate::config::CompareArgs) -> Result<()> {
    let compare_cfg = CompareConfig {
        maac: cfg.maac.clone(),
        adr: cfg.adr.clone(),
        greedy_max_steps: cfg.greedy_max_steps,
        sim_packets: (a.sim_packets > 0.0).then_some(a.sim_packets),
    };
    let mut jobs = Vec::new();
    for &k in &a.gws {
        for &n in &a.eds {
            for &seed in &cfg.seeds {
                jobs.push((k, n, seed));
            }
        }
    }
    let rows: Vec<ComparisonRow> = jobs
        .into_par_iter()
        .map(|(k, n, seed)| {
            let s = generate_scenario(seed, k, n, &PlacementRules::default())?;
            let plan = cfg.plan.build(n)?;
            compare_algorithms(&s, &plan, &compare_cfg, seed)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut summary = Vec::new();
    for &k in &a.gws {
        for &n in &a.eds {
            for alg in Algorithm::ALL {
                let cell: Vec<&ComparisonRow> =
                    rows.iter().filter(|r| r.gateways == k && r.devices == n && r.algorithm == alg).collect();
                let ee: Vec<f64> = cell.iter().map(|r| r.system_ee).collect();
                let pdr: Vec<f64> = cell.iter().map(|r| r.mean_pdr).collect();
                summary.push(CompareSummaryRow {
                    gateways: k,
                    devices: n,
                    algorithm: alg,
                    samples: cell.len(),
                    system_ee_mean: mmalora::experiment::mean(&ee),
                    system_ee_ci95: mean_ci95(&ee).map(|(_, h)| h),
                    mean_pdr_mean: mmalora::experiment::mean(&pdr),
                    mean_pdr_ci95: mean_ci95(&pdr).map(|(_, h)| h),
                });
            }
        }
    }
    out.table("compare", &rows, json!({ "hyperparameters": compare_cfg }))?;
    out.table("compare_summary", &summary, json!({ "ci": "95% Student-t over seeds, omitted below two seeds" }))?;
    Ok(())
}

#[derive(Serialize)]
struct ValidateRow {
    sweep: &'static str,
    label: String,
    seed: u64,
    gateways: usize,
    devices: usize,
    mae: f64,
    analytical_mean_pdr: f64,
    simulated_mean_pdr: f64,
    min_packets: u64,
    undersampled: bool,
}

impl ValidateRow {
    fn new(sweep: &'static str, r: ValidationRow) -> Self {
        Self {
            sweep,
            label: r.label,
            seed: r.seed,
            gateways: r.gateways,
            devices: r.devices,
            mae: r.mae,
            analytical_mean_pdr: r.analytical_mean_pdr,
            simulated_mean_pdr: r.simulated_mean_pdr,
            min_packets: r.min_packets,
            undersampled: r.undersampled,
        }
    }
}

#[derive(Serialize)]
struct ValidateSummaryRow {
    sweep: &'static str,
    label: String,
    samples: usize,
    mae_mean: f64,
    mae_ci95: Option<f64>,
    undersampled: bool,
}

fn validate(cfg: &ExperimentConfig, out: &Output, a: &crate::config::ValidateArgs) -> Result<()> {
    let sf12 = SfPolicy::Fixed(SpreadingFactor::new(12)?);
    let mut cases: Vec<(&'static str, ValidationCase)> = Vec::new();
    if matches!(a.sweep, Sweep::Ed | Sweep::All) {
        for n in [60, 100, 160] {
            cases.push(("ed", ValidationCase::new(format!("N{n}"), 3, n, sf12)));
        }
    }
    if matches!(a.sweep, Sweep::Gw | Sweep::All) {
        for k in [2, 3, 4] {
            cases.push(("gw", ValidationCase::new(format!("K{k}"), k, 160, SfPolicy::Distance)));
        }
    }
    if matches!(a.sweep, Sweep::Ps | Sweep::All) {
        for c in ValidationCase::parameter_settings(3, 160) {
            cases.push(("ps", c));
        }
    }
    let rules = PlacementRules::default();
    let jobs: Vec<(usize, u64)> = (0..cases.len()).flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s))).collect();
    let rows: Vec<ValidateRow> = jobs
        .into_par_iter()
        .map(|(c, seed)| {
            let (sweep, case) = &cases[c];
            Ok(ValidateRow::new(sweep, validate_case(case, seed, a.packets, cfg.fading, &rules)?))
        })
        .collect::<Result<_>>()?;
    let summary: Vec<ValidateSummaryRow> = cases
        .iter()
        .map(|(sweep, case)| {
            let cell: Vec<&ValidateRow> = rows.iter().filter(|r| r.sweep == *sweep && r.label == case.label).collect();
            let mae: Vec<f64> = cell.iter().map(|r| r.mae).collect();
            let undersampled = cell.iter().any(|r| r.undersampled);
            if undersampled {
                log::warn!("{sweep}/{}: fewer than 100 packets for some device", case.label);
            }
            ValidateSummaryRow {
                sweep,
                label: case.label.clone(),
                samples: mae.len(),
                mae_mean: mmalora::experiment::mean(&mae),
                mae_ci95: mean_ci95(&mae).map(|(_, h)| h),
                undersampled,
            }
        })
        .collect();
    out.table("validate", &rows, json!({ "packets_per_device": a.packets, "fading": cfg.fading }))?;
    out.table("validate_summary", &summary, Value::Null)?;
    Ok(())
}
