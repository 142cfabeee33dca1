//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers. Run with `cargo test --test acceptance` (add
//! `-- --nocapture` to see the lines on success).

use std::collections::HashMap;
use std::time::Instant;

use pgfn_core::env::{uniform_rollout, validate_trajectory, Environment, RewardEnv, Trajectory};
use pgfn_core::harness::config::parse_config;
use pgfn_core::harness::metrics::ModeRule;
use pgfn_core::harness::run::{run, RunState};
use pgfn_core::local_search::{refine, rollout, LocalSearchConfig};
use pgfn_core::nn::{
    adam_step, finite_difference_gradient, gradcheck_rel_err, AdamConfig, OptimizerState,
    PolicyParams,
};
use pgfn_core::objectives::{loss, loss_and_grad, ObjectiveConfig, ObjectiveKind};
use pgfn_core::oracle::{enumerate, exact_target, solve_exact_flows, tv_distance};
use pgfn_core::planner::{observe_iteration, should_switch, AvgSource, DecisionState};
use pgfn_core::policy::{encoding_dim, sample_trajectory};
use pgfn_core::region::{sample_bernoulli_region, RegionConfig, RegionMask};
use pgfn_core::rng::substream;
use pgfn_core::tasks::{
    make_bitseq, make_toytree, synth_modes, BitSeqSpec, ToyTreeReward, ToyTreeSpec,
    DEFAULT_MODE_BASIS,
};

fn run_config(body: &str) -> pgfn_core::harness::RunConfig {
    parse_config(body).expect("acceptance config parses")
}

/// Train TB on an enumerable env and measure the TV distance between 50k
/// post-training samples and the exact target law.
fn sampler_fidelity<E: RewardEnv<f64> + Clone>(
    env: E,
    label: &str,
    iterations: u64,
    seed: u64,
) -> (f64, f64) {
    // The env is handed to RunState directly; the task block below is a
    // placeholder the loop never consults.
    let cfg = run_config(&format!(
        r#"{{
            "task": {{"kind": "toytree", "branching": 2, "depth": 1}},
            "objective": {{"kind": "tb"}},
            "region": {{"p": 1.0}},
            "ls": {{"I": 0, "batch": 16}},
            "train": {{"iterations": {iterations}, "learning_rate": 0.001,
                       "seed": {seed}, "eps_uniform": 0.05, "hidden": [32, 32]}}
        }}"#
    ));
    let started = Instant::now();
    let mut state = RunState::new(env.clone(), cfg, ModeRule::Threshold { t: 0.95 }).unwrap();
    for _ in 0..iterations {
        state.training_round().unwrap();
    }
    let exact = exact_target::<f64, _>(&env, None).unwrap().prob_map(&env);
    let draws = 50_000usize;
    let mut eval_rng = substream(seed, "eval");
    let mut counts: HashMap<String, f64> = HashMap::new();
    for _ in 0..draws {
        let t = sample_trajectory(&env, &state.params, &mut eval_rng, 0.0).unwrap();
        *counts.entry(env.canonical_string(t.terminal())).or_default() += 1.0;
    }
    for v in counts.values_mut() {
        *v /= draws as f64;
    }
    let tv = tv_distance(&counts, &exact).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    println!("  {label}: tv={tv:.4} elapsed={elapsed:.1}s");
    (tv, elapsed)
}

#[test]
fn c01_sampler_fidelity() {
    let tree = make_toytree(&ToyTreeSpec {
        branching: 4,
        depth: 4,
        reward: ToyTreeReward::SumExp { scale: 0.5 },
    })
    .unwrap();
    let (tv_tree, t_tree) = sampler_fidelity(tree, "toytree(4,4)", 20_000, 11);

    let bitseq = make_bitseq(&BitSeqSpec::new(8, 4, vec!["11111111".into()])).unwrap();
    let (tv_bits, t_bits) = sampler_fidelity(bitseq, "bitseq(8,4)", 20_000, 12);

    assert!(tv_tree <= 0.08, "toytree tv {tv_tree}");
    assert!(tv_bits <= 0.08, "bitseq tv {tv_bits}");
    assert!(t_tree <= 300.0 && t_bits <= 300.0, "runtime {t_tree}/{t_bits}");
    println!(
        "ACCEPTANCE 01 sampler-fidelity: PASS (tv toytree={tv_tree:.4}, bitseq={tv_bits:.4}, \
         tolerance 0.08)"
    );
}

/// Slow opt-in check that the fidelity result is not tied to the seeds
/// baked into c01: `cargo test --test acceptance -- --ignored`.
#[test]
#[ignore]
fn c01_sampler_fidelity_alternate_seeds() {
    for seed in [101, 202] {
        let tree = make_toytree(&ToyTreeSpec {
            branching: 4,
            depth: 4,
            reward: ToyTreeReward::SumExp { scale: 0.5 },
        })
        .unwrap();
        let (tv, _) = sampler_fidelity(tree, "toytree(4,4)", 20_000, seed);
        assert!(tv <= 0.08, "seed {seed} tv {tv}");
        let bitseq = make_bitseq(&BitSeqSpec::new(8, 4, vec!["11111111".into()])).unwrap();
        let (tv, _) = sampler_fidelity(bitseq, "bitseq(8,4)", 20_000, seed);
        assert!(tv <= 0.08, "seed {seed} tv {tv}");
    }
    println!("ACCEPTANCE 01-extra alternate-seed fidelity: PASS");
}

#[test]
fn c02_exact_flows_zero_loss() {
    let tree = make_toytree(&ToyTreeSpec {
        branching: 4,
        depth: 4,
        reward: ToyTreeReward::SumExp { scale: 0.5 },
    })
    .unwrap();
    let bitseq = make_bitseq(&BitSeqSpec::new(8, 4, vec!["11111111".into()])).unwrap();
    let mut worst = 0.0f64;

    let mut check = |name: &str, losses: [(ObjectiveKind, f64); 4]| {
        for (kind, value) in losses {
            assert!(value < 1e-8, "{name} {kind:?} loss {value}");
            worst = worst.max(value);
        }
    };

    let mut rng = substream(2, "c02");
    {
        let flows = solve_exact_flows::<f64, _>(&tree).unwrap();
        let batch: Vec<_> = (0..8).map(|_| uniform_rollout(&tree, &mut rng).unwrap()).collect();
        check(
            "toytree",
            [ObjectiveKind::Fm, ObjectiveKind::Db, ObjectiveKind::Tb, ObjectiveKind::SubTb].map(
                |kind| {
                    (kind, loss(&tree, &flows, &batch, &ObjectiveConfig::new(kind)).unwrap())
                },
            ),
        );
    }
    {
        let flows = solve_exact_flows::<f64, _>(&bitseq).unwrap();
        let batch: Vec<_> = (0..8).map(|_| uniform_rollout(&bitseq, &mut rng).unwrap()).collect();
        check(
            "bitseq",
            [ObjectiveKind::Fm, ObjectiveKind::Db, ObjectiveKind::Tb, ObjectiveKind::SubTb].map(
                |kind| {
                    (kind, loss(&bitseq, &flows, &batch, &ObjectiveConfig::new(kind)).unwrap())
                },
            ),
        );
    }
    println!("ACCEPTANCE 02 exact-flow-zero-loss: PASS (worst loss {worst:.2e} < 1e-8)");
}

#[test]
fn c03_gradient_checks() {
    let bitseq = make_bitseq(&BitSeqSpec::new(8, 4, vec!["10100101".into()])).unwrap();
    let tree = make_toytree(&ToyTreeSpec {
        branching: 3,
        depth: 2,
        reward: ToyTreeReward::SumExp { scale: 0.5 },
    })
    .unwrap();

    fn instance<E: RewardEnv<f64>>(env: &E, cfg: &ObjectiveConfig, seed: u64) -> f64 {
        let mut rng = substream(seed, "c03");
        let params =
            PolicyParams::<f64>::init(encoding_dim(env), &[6], env.n_actions(), &mut rng);
        let batch: Vec<_> = (0..3).map(|_| uniform_rollout(env, &mut rng).unwrap()).collect();
        let (_, grad) = loss_and_grad(env, &params, &batch, cfg).unwrap();
        let numeric =
            finite_difference_gradient(|p| loss(env, p, &batch, cfg), &params, 1e-5).unwrap();
        gradcheck_rel_err(&grad.flatten(), &numeric)
    }

    let mut summary = Vec::new();
    for kind in [ObjectiveKind::Fm, ObjectiveKind::Db, ObjectiveKind::Tb, ObjectiveKind::SubTb] {
        let cfg = ObjectiveConfig::new(kind);
        let mut worst = 0.0f64;
        for i in 0..12u64 {
            let rel = if i % 2 == 0 {
                instance(&bitseq, &cfg, 100 + i)
            } else {
                instance(&tree, &cfg, 100 + i)
            };
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-4, "{kind:?} max rel err {worst}");
        summary.push(format!("{kind:?}={worst:.2e}"));
    }
    println!(
        "ACCEPTANCE 03 gradient-checks: PASS (12 instances each, max rel err {} <= 1e-4)",
        summary.join(" ")
    );
}

#[test]
fn c04_region_size_law() {
    let started = Instant::now();
    let env = make_toytree(&ToyTreeSpec { branching: 4, depth: 4, reward: ToyTreeReward::Uniform })
        .unwrap();
    let full = pgfn_core::oracle::depth_profile(&env, None).unwrap();
    assert_eq!(full, vec![1, 4, 16, 64, 256]);
    let masks = 50_000usize;
    let mut worst = 0.0f64;
    for (pi, p) in [0.3, 0.5, 0.8].iter().enumerate() {
        let cfg = RegionConfig { p: *p, ..RegionConfig::default() };
        let mut rng = substream(40 + pi as u64, "c04");
        let mut sums = vec![0.0f64; full.len()];
        for _ in 0..masks {
            let mask = sample_bernoulli_region(env.n_astar(), &cfg, &mut rng);
            let profile = pgfn_core::oracle::depth_profile(&env, Some(&mask)).unwrap();
            for (acc, size) in sums.iter_mut().zip(profile.iter().chain(std::iter::repeat(&0))) {
                *acc += *size as f64;
            }
        }
        for (l, total) in full.iter().enumerate() {
            let expected = p.powi(l as i32) * *total as f64;
            let mean = sums[l] / masks as f64;
            let rel = (mean - expected).abs() / expected;
            assert!(rel <= 0.05, "p={p} l={l}: mean {mean} vs {expected} (rel {rel})");
            worst = worst.max(rel);
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed <= 60.0, "took {elapsed}s");
    println!(
        "ACCEPTANCE 04 region-size-law: PASS (worst rel err {worst:.4} <= 0.05 over {masks} \
         masks, {elapsed:.1}s)"
    );
}

#[test]
fn c05_decision_branch_table() {
    fn state(step: usize, min_steps: usize, his: &[u64]) -> DecisionState {
        let mut ds = DecisionState::new(min_steps, AvgSource::Diff);
        for h in his {
            observe_iteration(&mut ds, *h);
        }
        ds.step = step;
        ds
    }

    // Below the exploration budget.
    assert!(!should_switch(&state(2, 5, &[3, 3, 6])));
    // diff=[3,0,3], avg 2: last 3 > avg, productive region, stay.
    assert!(!should_switch(&state(10, 5, &[3, 3, 6])));
    // diff=[6,0,0], avg 2: all guards silent, switch.
    assert!(should_switch(&state(10, 5, &[6, 6, 6])));
    // diff=[1,4,1], avg 2: pair guard 1+4 > 4 fires, stay.
    assert!(!should_switch(&state(10, 5, &[1, 5, 6])));
    // Boundary equalities never fire with strict comparisons:
    // diff=[2,2,2], avg 2: last == avg, last == prev, last+prev == 2*avg.
    assert!(should_switch(&state(10, 5, &[2, 4, 6])));
    // step == min_steps clears the budget guard.
    assert!(should_switch(&state(5, 5, &[2, 4, 6])));
    // diff[iter] > diff[iter-1] alone keeps exploring: diff=[0,0,1], avg 1/3.
    assert!(!should_switch(&state(10, 5, &[0, 0, 1])));
    // Too little history.
    assert!(!should_switch(&state(10, 0, &[4])));
    println!("ACCEPTANCE 05 decision-branch-table: PASS (all branch and boundary rows)");
}

#[test]
fn c06_local_search_validity_and_improvement() {
    let modes =
        synth_modes(&basis_strings(), 4, 16, &mut substream(6, "c06-modes")).unwrap();
    let env = make_bitseq(&BitSeqSpec::new(16, 4, modes)).unwrap();
    let mut rng = substream(6, "c06");
    let params =
        PolicyParams::<f64>::init(encoding_dim(&env), &[16], env.n_actions(), &mut rng);
    let region_cfg = RegionConfig { p: 0.6, ..RegionConfig::default() };
    let ls = LocalSearchConfig { refine_reps: 4, ..Default::default() };
    let k = ls.effective_k(env.max_depth());

    let mut attempts = 0usize;
    let mut accepted_count = 0usize;
    while attempts < 10_000 {
        let mask = sample_bernoulli_region(env.n_astar(), &region_cfg, &mut rng);
        let batch: Vec<Trajectory<_, f64>> = (0..16)
            .map(|_| rollout(&env, &params, &mask, &mut rng, 0.1).unwrap())
            .collect();
        let max_before =
            batch.iter().map(|t| t.reward).fold(f64::NEG_INFINITY, f64::max);
        let mut max_after = max_before;
        for original in &batch {
            let report = refine(&env, &params, &mask, original, &ls, &mut rng).unwrap();
            attempts += ls.refine_reps;
            for refined in &report.accepted {
                accepted_count += 1;
                validate_trajectory(&env, refined).unwrap();
                assert!(refined.reward > original.reward, "acceptance must strictly improve");
                for action in &refined.actions[refined.actions.len() - k..] {
                    assert!(mask.allows(action.astar), "suffix must stay in the region");
                }
                max_after = max_after.max(refined.reward);
            }
        }
        assert!(max_after >= max_before, "max batch reward decreased");
    }
    assert!(accepted_count > 0, "no refinement ever accepted");
    println!(
        "ACCEPTANCE 06 local-search-validity: PASS ({attempts} refinements, {accepted_count} \
         accepted, all valid and strictly improving)"
    );
}

fn basis_strings() -> Vec<String> {
    DEFAULT_MODE_BASIS.iter().map(|s| s.to_string()).collect()
}

#[test]
fn c07_degeneration_identity() {
    let body = r#"{
        "task": {"kind": "bitseq", "n": 8, "k": 4, "modes": ["11111111", "00001111"]},
        "objective": {"kind": "tb"},
        "region": {"p": 1.0, "selection_mode": "proportional"},
        "ls": {"I": 0, "batch": 16},
        "train": {"iterations": 100, "learning_rate": 0.001, "seed": 3,
                   "eps_uniform": 0.05, "hidden": [16]}
    }"#;
    let cfg = run_config(body);

    // Byte-identical CSV across two executions.
    let a = run(&cfg).unwrap();
    let b = run(&cfg).unwrap();
    assert_eq!(a.log.to_csv_string(), b.log.to_csv_string());

    // Trajectory-identical to a hand-rolled vanilla loop at seed parity.
    let env = make_bitseq(&BitSeqSpec::new(
        8,
        4,
        vec!["11111111".into(), "00001111".into()],
    ))
    .unwrap();
    let rule = ModeRule::Distance { modes: env.modes().to_vec(), d: env.mode_distance() };
    let mut engine = RunState::new(env.clone(), cfg.clone(), rule).unwrap();

    let mut params = PolicyParams::<f64>::init(
        encoding_dim(&env),
        &cfg.train.hidden,
        env.n_actions(),
        &mut substream(cfg.train.seed, "init"),
    );
    let mut opt = OptimizerState::new(
        params.param_count(),
        AdamConfig { lr: cfg.train.learning_rate, ..AdamConfig::default() },
    );
    let full = RegionMask::full(env.n_astar());
    let objective = cfg.objective;
    for iter in 0..100u64 {
        let baseline: Vec<Trajectory<_, f64>> = (0..16)
            .map(|j| {
                let mut rng = substream(cfg.train.seed, &format!("rollout/{iter}/{j}"));
                rollout(&env, &params, &full, &mut rng, cfg.train.eps_uniform).unwrap()
            })
            .collect();
        let outcome = engine.training_round().unwrap();
        assert_eq!(outcome.originals.len(), baseline.len());
        for (ours, theirs) in outcome.originals.iter().zip(&baseline) {
            assert_eq!(ours.actions, theirs.actions, "iteration {iter}");
            assert_eq!(ours.states, theirs.states, "iteration {iter}");
            assert_eq!(ours.reward, theirs.reward, "iteration {iter}");
        }
        assert_eq!(outcome.train_batch_size, 16);
        let (_, grads) = loss_and_grad(&env, &params, &baseline, &objective).unwrap();
        adam_step(&mut opt, &mut params, &grads);
    }
    assert_eq!(engine.params, params, "parameters diverged from the vanilla loop");
    println!(
        "ACCEPTANCE 07 degeneration-identity: PASS (CSV byte-identical; 100 iterations \
         trajectory-identical to the hand-rolled baseline)"
    );
}

#[test]
fn c08_planner_convergence() {
    let mut first_ranked = 0usize;
    let seeds = [0u64, 1, 2, 3, 4];
    for seed in seeds {
        let body = format!(
            r#"{{
                "task": {{"kind": "bitseq", "n": 16, "k": 4, "synth_count": 6}},
                "objective": {{"kind": "tb"}},
                "region": {{"p": 0.5, "selection_mode": "proportional"}},
                "ls": {{"I": 0, "batch": 16}},
                "planner": {{"min_steps": 5}},
                "train": {{"iterations": 200, "learning_rate": 0.001, "seed": {seed},
                           "eps_uniform": 0.05, "hidden": [32]}}
            }}"#
        );
        let cfg = run_config(&body);
        let modes =
            synth_modes(&basis_strings(), 6, 16, &mut substream(seed, "modes")).unwrap();
        let env = make_bitseq(&BitSeqSpec::new(16, 4, modes)).unwrap();
        let rule = ModeRule::Distance { modes: env.modes().to_vec(), d: env.mode_distance() };
        let mut state = RunState::<f64, _>::new(env, cfg, rule).unwrap();
        for _ in 0..200 {
            state.training_round().unwrap();
        }
        let top = state.table.top_astar();
        println!("  seed {seed}: top astar {top:04b} (score {:.4})", state.table.score(top));
        if top == 0b1111 {
            first_ranked += 1;
        }
    }
    assert!(first_ranked >= 4, "1111 ranked first in only {first_ranked}/5 seeds");
    println!(
        "ACCEPTANCE 08 planner-convergence: PASS (score(1111) ranked first in \
         {first_ranked}/5 seeds)"
    );
}

struct VariantResult {
    modes: Vec<u64>,
    /// Samples drawn when the final mode count was first reached.
    saturation: Vec<u64>,
}

fn pls_variant(p: f64, refine_reps: usize, seeds: &[u64], budget: u64) -> VariantResult {
    let mut modes = Vec::new();
    let mut saturation = Vec::new();
    for seed in seeds {
        let body = format!(
            r#"{{
                "task": {{"kind": "bitseq", "n": 24, "k": 4, "synth_count": 8,
                           "mode_distance": 6}},
                "objective": {{"kind": "tb"}},
                "region": {{"p": {p}, "selection_mode": "proportional"}},
                "ls": {{"I": {refine_reps}, "batch": 16}},
                "planner": {{"min_steps": 5}},
                "train": {{"iterations": 0, "learning_rate": 0.001, "seed": {seed},
                           "eps_uniform": 0.05, "hidden": [16]}}
            }}"#
        );
        let cfg = run_config(&body);
        let mode_strings =
            synth_modes(&basis_strings(), 8, 24, &mut substream(*seed, "modes")).unwrap();
        let mut spec = BitSeqSpec::new(24, 4, mode_strings);
        spec.mode_distance = 6;
        let env = make_bitseq(&spec).unwrap();
        let rule = ModeRule::Distance { modes: env.modes().to_vec(), d: env.mode_distance() };
        let mut state = RunState::<f64, _>::new(env, cfg, rule).unwrap();
        let mut final_modes = 0;
        let mut reached_at = 0;
        while state.samples_total() < budget {
            let outcome = state.training_round().unwrap();
            if outcome.row.modes_total > final_modes {
                final_modes = outcome.row.modes_total;
                reached_at = outcome.row.samples_total;
            }
        }
        modes.push(final_modes);
        saturation.push(reached_at);
    }
    VariantResult { modes, saturation }
}

fn median(values: &[u64]) -> u64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    sorted[sorted.len() / 2]
}

#[test]
fn c09_directional_pls_benefit() {
    let seeds = [0u64, 1, 2, 3, 4];
    let budget = 200_000u64;
    let started = Instant::now();
    let vanilla = pls_variant(1.0, 0, &seeds, budget);
    let partial = pls_variant(0.5, 0, &seeds, budget);
    let ls = pls_variant(1.0, 4, &seeds, budget);
    let pls = pls_variant(0.5, 4, &seeds, budget);
    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "  modes/seed: TB={:?} TB+P={:?} TB+LS={:?} TB+PLS={:?} ({elapsed:.0}s)",
        vanilla.modes, partial.modes, ls.modes, pls.modes
    );
    println!(
        "  samples to final mode count (median): TB={} TB+P={} TB+LS={} TB+PLS={}",
        median(&vanilla.saturation),
        median(&partial.saturation),
        median(&ls.saturation),
        median(&pls.saturation)
    );
    let m_vanilla = median(&vanilla.modes);
    let m_partial = median(&partial.modes);
    let m_ls = median(&ls.modes);
    let m_pls = median(&pls.modes);
    assert!(
        m_partial >= m_vanilla,
        "median TB+P {m_partial} < median TB {m_vanilla}"
    );
    assert!(m_pls >= m_ls, "median TB+PLS {m_pls} < median TB+LS {m_ls}");
    println!(
        "ACCEPTANCE 09 directional-pls-benefit: PASS (medians: TB={m_vanilla} TB+P={m_partial} \
         TB+LS={m_ls} TB+PLS={m_pls}; budget {budget} terminals/run, 5 seeds)"
    );
}

#[test]
fn c10_reproducibility() {
    let body = r#"{
        "task": {"kind": "bitseq", "n": 16, "k": 4, "synth_count": 4},
        "objective": {"kind": "tb"},
        "region": {"p": 0.6, "selection_mode": "proportional"},
        "ls": {"I": 2, "batch": 8},
        "train": {"iterations": 40, "learning_rate": 0.001, "seed": 9,
                   "eps_uniform": 0.05, "hidden": [16]}
    }"#;
    let cfg = run_config(body);
    let a = run(&cfg).unwrap();
    let b = run(&cfg).unwrap();
    assert_eq!(a.log.to_csv_string(), b.log.to_csv_string());
    assert_eq!(a.log.planner_csv_string(), b.log.planner_csv_string());
    assert_eq!(a.checkpoint_json(), b.checkpoint_json());
    println!(
        "ACCEPTANCE 10 reproducibility: PASS (CSV and checkpoint byte-identical across two \
         executions)"
    );
}

// The enumeration below keeps c01/c02 honest: both oracle environments stay
// within the enumeration budget.
#[test]
fn oracle_envs_are_enumerable() {
    let tree = make_toytree(&ToyTreeSpec { branching: 4, depth: 4, reward: ToyTreeReward::Uniform })
        .unwrap();
    let bitseq = make_bitseq(&BitSeqSpec::new(8, 4, vec!["11111111".into()])).unwrap();
    assert_eq!(enumerate(&tree, None).unwrap().terminals.len(), 256);
    assert_eq!(enumerate(&bitseq, None).unwrap().terminals.len(), 256);
}
