//! Subcommand implementations.

use std::path::Path;

use gridrl_core::comms::{estimate_active_vehicles, sample_delays, DelayStats};
use gridrl_core::scenario::{load_scenario, ControllerKind};
use gridrl_core::train::{
    evaluate, train as run_training, Controller, EvalReport, IdentityHook, IterationReport,
};
use gridrl_core::verify::run_suite;
use gridrl_core::{Error, PolicySet, Scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::output::{out_dir, write_episodes, MetricsWriter, Run, COMM_HEADER, VERIFY_HEADER};
use crate::{BaselineKind, Failure};

struct Loaded {
    scenario: Scenario,
    defaulted: Vec<&'static str>,
}

fn load(path: &Path, seed: Option<u64>) -> Result<Loaded, Failure> {
    let loaded = load_scenario(path)?;
    let mut scenario = loaded.scenario;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    for key in &loaded.defaulted {
        log::info!("{key}: default (not from paper)");
    }
    Ok(Loaded {
        scenario,
        defaulted: loaded.defaulted,
    })
}

fn start(tag: &str, path: &Path, l: &Loaded) -> Result<Run, Failure> {
    let config = serde_json::to_value(&l.scenario)?;
    Run::start(
        tag,
        out_dir(Some(&l.scenario)),
        Some(path),
        config,
        l.scenario.seed,
        l.defaulted.clone(),
    )
}

fn print_report(r: &EvalReport) {
    println!(
        "{:<10} halting {:>8.3} ± {:<7.3} queue_time {:>8.3} queue_length {:>9.2} speed {:>6.2} reward {:>10.3}",
        r.controller, r.mean.halting, r.mad.halting, r.mean.queue_time, r.mean.queue_length, r.mean.speed, r.mean.reward
    );
}

pub fn train(path: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let l = load(path, seed)?;
    let exp = l.scenario.experiment()?;
    let mut run = start("train", path, &l)?;
    let checkpoint_dir = run.dir.join("checkpoint");
    let report_path = run.output("iterations.csv");
    let groups: Vec<_> = exp.policies()?.groups.iter().map(|(g, _)| *g).collect();
    let mut w = csv::Writer::from_path(&report_path)?;
    w.write_record(IterationReport::csv_header(&groups))?;
    let mut write_error = None;
    log::info!("training for {} steps", exp.train.total_steps());
    let outcome = run_training(&exp, &mut IdentityHook, Some(&checkpoint_dir), |r| {
        log::info!(
            "iteration {} steps {} reward mean {:.4} ({:.1}s)",
            r.iteration,
            r.steps,
            r.reward_mean,
            r.seconds
        );
        if write_error.is_none() {
            write_error = w
                .write_record(r.csv_row())
                .and_then(|_| w.flush().map_err(csv::Error::from))
                .err();
        }
    })?;
    if let Some(e) = write_error {
        return Err(e.into());
    }
    let last = outcome.reports.last().expect("at least one iteration");
    println!(
        "trained {} steps, final reward mean {:.4}",
        last.steps, last.reward_mean
    );
    println!("checkpoint written to {}", checkpoint_dir.display());
    let manifest = run.finish(json!({
        "steps": last.steps,
        "iterations": outcome.reports.len(),
        "final_reward_mean": last.reward_mean,
        "checkpoint": checkpoint_dir.display().to_string(),
    }))?;
    log::info!("manifest {}", manifest.display());
    Ok(())
}

fn evaluate_to_files(
    mut run: Run,
    exp: &gridrl_core::Experiment,
    controller: &Controller,
    episodes: u64,
    steps: u64,
) -> Result<(), Failure> {
    let mut metrics = MetricsWriter::create(&run.output("metrics.csv"))?;
    let report = evaluate(exp, controller, episodes, steps, |e, m| metrics.push(e, m))?;
    metrics.finish()?;
    write_episodes(&run.output("episodes.csv"), &report)?;
    print_report(&report);
    let manifest = run.finish(json!({
        "controller": report.controller,
        "episodes": episodes,
        "steps": steps,
        "mean": report.mean,
        "mad": report.mad,
        "std": report.std,
    }))?;
    log::info!("manifest {}", manifest.display());
    Ok(())
}

pub fn eval(
    path: &Path,
    checkpoint: &Path,
    seed: Option<u64>,
    episodes: Option<u64>,
    steps: Option<u64>,
) -> Result<(), Failure> {
    let l = load(path, seed)?;
    let exp = l.scenario.experiment()?;
    let mut policies = PolicySet::load(checkpoint)?;
    let env = exp.env()?;
    if let Err(e) = policies.check_compatible(env.agents(), env.observation().features().len()) {
        // Local-scope policies carry over to other grids.
        policies = policies.transfer(&exp.net, &exp.sim).map_err(|_| e)?;
        log::info!("policy re-targeted to a {0}x{0} grid", l.scenario.grid.n);
    }
    let run = start("eval", path, &l)?;
    let episodes = episodes.unwrap_or(exp.train.eval_episodes);
    let steps = steps.unwrap_or(exp.train.eval_steps);
    evaluate_to_files(
        run,
        &exp,
        &Controller::Learned(Box::new(policies)),
        episodes,
        steps,
    )
}

pub fn baseline(
    path: &Path,
    kind: BaselineKind,
    seed: Option<u64>,
    episodes: Option<u64>,
    steps: Option<u64>,
) -> Result<(), Failure> {
    let l = load(path, seed)?;
    let exp = l.scenario.experiment()?;
    let (tag, ck) = match kind {
        BaselineKind::Static => ("baseline_static", ControllerKind::Static),
        BaselineKind::Actuated => ("baseline_actuated", ControllerKind::Actuated),
    };
    let controller = l
        .scenario
        .rule_controller(ck)
        .expect("rule-based controller");
    let run = start(tag, path, &l)?;
    let episodes = episodes.unwrap_or(exp.train.eval_episodes);
    let steps = steps.unwrap_or(exp.train.eval_steps);
    evaluate_to_files(run, &exp, &controller, episodes, steps)
}

pub fn verify(seed: u64) -> Result<(), Failure> {
    let mut run = Run::start(
        "verify",
        out_dir(None),
        None,
        json!({ "seed": seed }),
        seed,
        Vec::new(),
    )?;
    let checks = run_suite(seed)?;
    let mut w = csv::Writer::from_path(run.output("checks.csv"))?;
    w.write_record(VERIFY_HEADER)?;
    for c in &checks {
        println!("{c}");
        w.write_record([
            c.name.to_string(),
            format!("{:e}", c.value),
            format!("{:e}", c.tolerance),
            if c.upper { "upper" } else { "lower" }.to_string(),
            c.passed.to_string(),
        ])?;
    }
    w.flush()?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    run.finish(json!({ "checks": checks, "failed": failed }))?;
    if failed > 0 {
        return Err(Failure::Verification(failed));
    }
    Ok(())
}

pub fn comm(
    path: &Path,
    seed: Option<u64>,
    vehicles: Option<usize>,
    steps: usize,
) -> Result<(), Failure> {
    let l = load(path, seed)?;
    let exp = l.scenario.experiment()?;
    let mut run = start("comm", path, &l)?;
    let (n_vehicles, estimate) = match vehicles {
        Some(0) => return Err(Error::InvalidArgument("--vehicles must be positive".into()).into()),
        Some(n) => (n, None),
        None => {
            let mut counts = Vec::new();
            let ctrl = l
                .scenario
                .rule_controller(ControllerKind::Actuated)
                .expect("actuated");
            evaluate(&exp, &ctrl, 1, exp.train.eval_steps, |_, m| {
                counts.push(m.vehicles)
            })?;
            let (mean, std) = estimate_active_vehicles(&counts)?;
            log::info!("active vehicles {mean:.1} ± {std:.1} under actuated control");
            ((mean.round() as usize).max(1), Some((mean, std)))
        }
    };
    let cfg = &l.scenario.comm;
    let mut rng = ChaCha8Rng::seed_from_u64(l.scenario.seed);
    let report = sample_delays(cfg, n_vehicles, steps, &mut rng)?;
    let rows: [(&str, &DelayStats, Option<f64>); 3] = [
        ("uplink", &report.uplink, None),
        ("downlink", &report.downlink, None),
        ("end_to_end", &report.end_to_end, Some(report.within_step)),
    ];
    println!("{} vehicles, {} messages", report.vehicles, report.messages);
    println!(
        "{:<11}{:>10}{:>10}{:>10}{:>10}{:>10}{:>13}",
        "link", "mean", "MAD", "p95", "p99", "max", "within_step"
    );
    let mut w = csv::Writer::from_path(run.output("delays.csv"))?;
    w.write_record(COMM_HEADER)?;
    for (name, s, within) in rows {
        let within_text = within.map_or_else(String::new, |f| format!("{f:.6}"));
        println!(
            "{name:<11}{:>10.2}{:>10.2}{:>10.2}{:>10.2}{:>10.2}{:>13}",
            s.mean, s.mad, s.p95, s.p99, s.max, within_text
        );
        w.write_record([
            name.to_string(),
            format!("{:.4}", s.mean),
            format!("{:.4}", s.mad),
            format!("{:.4}", s.p95),
            format!("{:.4}", s.p99),
            format!("{:.4}", s.max),
            within_text,
        ])?;
    }
    w.flush()?;
    let volume = gridrl_core::comms::traffic_volume(cfg, n_vehicles)?;
    println!("uplink load {volume:.0} B/s");
    run.finish(json!({
        "report": report,
        "uplink_bytes_per_second": volume,
        "active_vehicles_estimate": estimate.map(|(m, s)| json!({ "mean": m, "std": s })),
    }))?;
    Ok(())
}
