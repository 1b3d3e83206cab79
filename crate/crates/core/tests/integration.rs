use std::path::Path;

use gridrl_core::scenario::{load_scenario, parse_scenario, ControllerKind};
use gridrl_core::train::{
    evaluate, train, Controller, IdentityHook, InterEsHook, IterationReport, PolicyGroup,
    PolicyMode,
};
use gridrl_core::{Error, Experiment, PolicySet};

fn scenario_path(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn small(n: usize, mode: &str) -> Experiment {
    let text = format!(
        "seed = 3\n[grid]\nn = {n}\n[train]\nrollout_length = 150\nrollouts_per_iteration = 3\niterations = 4\n\
         policy_mode = \"{mode}\"\nscope = \"local\"\neval_every = 2\n[train.approximator]\nkind = \"tabular\"\n"
    );
    parse_scenario(&text, false)
        .unwrap()
        .scenario
        .experiment()
        .unwrap()
}

fn strip_time(reports: &[IterationReport]) -> Vec<IterationReport> {
    reports
        .iter()
        .cloned()
        .map(|mut r| {
            r.seconds = 0.0;
            r
        })
        .collect()
}

#[test]
fn bundled_scenarios_load() {
    let s = load_scenario(&scenario_path("grid5x5.toml"))
        .unwrap()
        .scenario;
    assert_eq!(s.grid.n, 5);
    assert_eq!(s.sim.inflow_rate, 360.0);
    assert_eq!(s.sim.v_max, 60.0);
    assert_eq!(s.controller.kind, ControllerKind::Learned);
    assert_eq!(s.train.total_steps(), 300_000);
    let exp = s.experiment().unwrap();
    assert_eq!(exp.env().unwrap().agents(), 25);

    let s = load_scenario(&scenario_path("grid2x2.toml"))
        .unwrap()
        .scenario;
    assert_eq!(s.grid.n, 2);
    assert_eq!(s.experiment().unwrap().env().unwrap().agents(), 4);
}

#[test]
fn report_group_means_partition_the_global_mean() {
    for mode in ["shared", "multi"] {
        let exp = small(3, mode);
        let out = train(&exp, &mut IdentityHook, None, |_| {}).unwrap();
        assert_eq!(out.reports.len(), 4);
        for (i, r) in out.reports.iter().enumerate() {
            assert_eq!(r.iteration, i as u64);
            assert_eq!(r.steps, (i as u64 + 1) * 450);
            assert!(
                r.reward_min <= r.reward_mean && r.reward_mean <= r.reward_max,
                "{r:?}"
            );
            let total: f64 = r
                .group_means
                .iter()
                .enumerate()
                .map(|(g, (_, m))| m * out.policies.group_size(g) as f64)
                .sum();
            assert!(
                (total - r.reward_mean).abs() <= 1e-9,
                "{mode}: {total} vs {}",
                r.reward_mean
            );
        }
    }
}

#[test]
fn multi_mode_splits_five_by_five_into_nine_and_sixteen() {
    let text = "[grid]\nn = 5\n[train]\npolicy_mode = \"multi\"\nscope = \"local\"\n";
    let exp = parse_scenario(text, false)
        .unwrap()
        .scenario
        .experiment()
        .unwrap();
    assert_eq!(exp.train.policy_mode, PolicyMode::Multi);
    let p = exp.policies().unwrap();
    let names: Vec<_> = p.groups.iter().map(|(g, _)| *g).collect();
    let size = |g: PolicyGroup| p.group_size(names.iter().position(|&x| x == g).unwrap());
    assert_eq!(size(PolicyGroup::Central), 9);
    assert_eq!(size(PolicyGroup::Edge), 16);
}

#[test]
fn training_is_deterministic_per_seed() {
    let exp = small(2, "multi");
    let a = train(&exp, &mut IdentityHook, None, |_| {}).unwrap();
    let b = train(&exp, &mut IdentityHook, None, |_| {}).unwrap();
    assert_eq!(strip_time(&a.reports), strip_time(&b.reports));
    assert_eq!(a.policies, b.policies);

    let mut other = exp.clone();
    other.seed += 1;
    let c = train(&other, &mut IdentityHook, None, |_| {}).unwrap();
    assert_ne!(strip_time(&a.reports), strip_time(&c.reports));
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let exp = small(2, "shared");
    let dir = tempfile::tempdir().unwrap();
    let out = train(&exp, &mut IdentityHook, Some(dir.path()), |_| {}).unwrap();
    let loaded = PolicySet::load(dir.path()).unwrap();
    assert_eq!(loaded, out.policies);

    let run = |p: PolicySet| {
        evaluate(&exp, &Controller::Learned(Box::new(p)), 2, 300, |_, _| {}).unwrap()
    };
    let a = run(out.policies.clone());
    let b = run(loaded);
    let c = run(out.policies);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

struct FaultAt(usize);

impl InterEsHook for FaultAt {
    fn adjust(&mut self, reports: &[IterationReport], multipliers: &[f64]) -> Vec<f64> {
        if reports.len() == self.0 {
            vec![f64::NAN; multipliers.len()]
        } else {
            multipliers.to_vec()
        }
    }
}

#[test]
fn numeric_fault_keeps_last_good_checkpoint() {
    let exp = small(2, "shared");
    let dir = tempfile::tempdir().unwrap();
    let mut seen = Vec::new();
    let err = train(&exp, &mut FaultAt(3), Some(dir.path()), |r| {
        seen.push(r.iteration)
    })
    .unwrap_err();
    assert!(matches!(err, Error::NumericFault(_)), "{err:?}");
    assert_eq!(seen, vec![0, 1, 2]);

    // The checkpoint from iteration 2 survives and matches a clean two-iteration run.
    let mut short = exp.clone();
    short.train.iterations = 2;
    let clean = train(&short, &mut IdentityHook, None, |_| {}).unwrap();
    assert_eq!(PolicySet::load(dir.path()).unwrap(), clean.policies);
}

#[test]
fn untrained_policy_runs_with_full_exploration() {
    let mut exp = small(2, "shared");
    exp.learn.epsilon.start = 1.0;
    exp.learn.epsilon.end = 1.0;
    exp.train.iterations = 1;
    let out = train(&exp, &mut IdentityHook, None, |_| {}).unwrap();
    let r = &out.reports[0];
    assert!(r.reward_mean.is_finite() && r.reward_mean <= 0.0);
}

#[test]
fn trained_policy_beats_static_on_two_by_two() {
    let exp = load_scenario(&scenario_path("grid2x2.toml"))
        .unwrap()
        .scenario
        .experiment()
        .unwrap();
    let out = train(&exp, &mut IdentityHook, None, |_| {}).unwrap();
    let learned = evaluate(
        &exp,
        &Controller::Learned(Box::new(out.policies)),
        2,
        1000,
        |_, _| {},
    )
    .unwrap();
    let fixed = evaluate(
        &exp,
        &Controller::Static(Default::default()),
        2,
        1000,
        |_, _| {},
    )
    .unwrap();
    assert!(
        learned.mean.reward > fixed.mean.reward,
        "{} vs {}",
        learned.mean.reward,
        fixed.mean.reward
    );
    assert!(learned.mean.halting < fixed.mean.halting);
}
