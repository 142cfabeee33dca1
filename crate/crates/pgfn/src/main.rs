use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use pgfn_core::env::{uniform_rollout, Environment, RewardEnv};
use pgfn_core::harness::{build_env, load_config, run, write_outputs, AnyEnv, RunConfig};
use pgfn_core::nn::{finite_difference_gradient, gradcheck_rel_err, PolicyParams};
use pgfn_core::objectives::{loss, loss_and_grad, ObjectiveConfig, ObjectiveKind};
use pgfn_core::oracle::{depth_profile, exact_target};
use pgfn_core::policy::encoding_dim;
use pgfn_core::region::{overlap_stats, sample_bernoulli_region};
use pgfn_core::rng::substream;
use pgfn_core::tasks::{make_bitseq, make_toytree, BitSeqSpec, ToyTreeReward, ToyTreeSpec};

#[derive(Parser)]
#[command(name = "pgfn", about = "Partial-region GFlowNet engine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a sampler and write log.csv, planner.csv and checkpoint.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enumerate the configured environment's terminals as CSV.
    Enumerate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare expected and Monte-Carlo region sizes per depth.
    RegionStats {
        #[arg(long)]
        config: PathBuf,
        /// Number of sampled masks.
        #[arg(long, default_value_t = 200)]
        masks: usize,
    },
    /// Check analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long)]
        objective: ObjectiveArg,
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize mode discovery from a run log.
    Modes {
        #[arg(long)]
        log: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Fm,
    Db,
    Tb,
    Subtb,
}

impl From<ObjectiveArg> for ObjectiveKind {
    fn from(a: ObjectiveArg) -> Self {
        match a {
            ObjectiveArg::Fm => ObjectiveKind::Fm,
            ObjectiveArg::Db => ObjectiveKind::Db,
            ObjectiveArg::Tb => ObjectiveKind::Tb,
            ObjectiveArg::Subtb => ObjectiveKind::SubTb,
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, out } => train(&config, &out),
        Command::Enumerate { config } => enumerate_cmd(&config),
        Command::RegionStats { config, masks } => region_stats(&config, masks),
        Command::Gradcheck { objective, instances, seed } => {
            gradcheck(objective.into(), instances, seed)
        }
        Command::Modes { log } => modes_summary(&log),
    }
}

fn train(config_path: &Path, out: &Path) -> Result<()> {
    let config = load_config(config_path).context("loading config")?;
    let output = run(&config).context("training run")?;
    write_outputs(&output, out).context("writing outputs")?;
    if let Some(last) = output.log.rows.last() {
        println!(
            "finished {} iterations: samples={} loss={:.6} modes={} r_topk={:.6}",
            last.iter + 1,
            last.samples_total,
            last.loss,
            last.modes_total,
            last.r_topk
        );
    } else {
        println!("finished 0 iterations");
    }
    println!("wrote {}", out.join("log.csv").display());
    Ok(())
}

/// Print rows to stdout, treating a closed pipe as a normal early exit.
fn emit_rows(rows: impl Iterator<Item = String>) -> Result<()> {
    use std::io::Write;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for row in rows {
        match writeln!(out, "{row}") {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn enumerate_env<E: RewardEnv<f64>>(env: &E) -> Result<()> {
    let target = exact_target::<f64, _>(env, None)?;
    let header = std::iter::once("sequence,reward,prob".to_string());
    let rows = target
        .terminals
        .iter()
        .zip(&target.probs)
        .map(|((state, reward), prob)| format!("{},{},{}", env.canonical_string(state), reward, prob))
        .collect::<Vec<_>>();
    emit_rows(header.chain(rows))
}

fn enumerate_cmd(config_path: &Path) -> Result<()> {
    let config = load_config(config_path)?;
    match build_env(&config)? {
        AnyEnv::BitSeq(env) => enumerate_env(&env),
        AnyEnv::Pamdp(env) => enumerate_env(&env),
        AnyEnv::Tree(env) => enumerate_env(&env),
    }
}

fn region_stats_env<E: Environment>(env: &E, config: &RunConfig, masks: usize) -> Result<()> {
    let full = depth_profile(env, None)?;
    let mut mc = vec![0.0f64; full.len()];
    let mut rng = substream(config.train.seed, "region-stats");
    for _ in 0..masks {
        let mask = sample_bernoulli_region(env.n_astar(), &config.region, &mut rng);
        let masked = depth_profile(env, Some(&mask))?;
        for (acc, size) in mc.iter_mut().zip(masked.iter().chain(std::iter::repeat(&0))) {
            *acc += *size as f64;
        }
    }
    let header = std::iter::once("depth,expected_size,mc_mean_size,rel_err".to_string());
    let rows = full.iter().enumerate().map(|(l, total)| {
        let expected = config.region.p.powi(l as i32) * *total as f64;
        let mean = mc[l] / masks as f64;
        let rel = (mean - expected).abs() / expected;
        format!("{l},{expected},{mean},{rel}")
    });
    emit_rows(header.chain(rows))?;

    // Overlap expectations for two fresh (uniform) selection distributions.
    let n = env.n_astar();
    let uniform = vec![1.0 / n as f64; n];
    let stats =
        overlap_stats(&uniform, &uniform, config.region.p, env.max_depth().max(1), &config.region)?;
    eprintln!(
        "overlap: expected_common={} expected_intersection={} expected_union={} indicator={}",
        stats.expected_common, stats.expected_intersection, stats.expected_union, stats.indicator
    );
    Ok(())
}

fn region_stats(config_path: &Path, masks: usize) -> Result<()> {
    let config = load_config(config_path)?;
    match build_env(&config)? {
        AnyEnv::BitSeq(env) => region_stats_env(&env, &config, masks),
        AnyEnv::Pamdp(env) => region_stats_env(&env, &config, masks),
        AnyEnv::Tree(env) => region_stats_env(&env, &config, masks),
    }
}

fn gradcheck_instance<E: RewardEnv<f64>>(
    env: &E,
    cfg: &ObjectiveConfig,
    seed: u64,
) -> Result<f64> {
    let mut rng = substream(seed, "gradcheck");
    let params = PolicyParams::<f64>::init(encoding_dim(env), &[6], env.n_actions(), &mut rng);
    let batch: Vec<_> = (0..3)
        .map(|_| uniform_rollout(env, &mut rng))
        .collect::<pgfn_core::Result<_>>()?;
    let (_, grad) = loss_and_grad(env, &params, &batch, cfg)?;
    let numeric = finite_difference_gradient(|p| loss(env, p, &batch, cfg), &params, 1e-5)?;
    Ok(gradcheck_rel_err(&grad.flatten(), &numeric))
}

fn gradcheck(kind: ObjectiveKind, instances: usize, seed: u64) -> Result<()> {
    let cfg = ObjectiveConfig::new(kind);
    let bitseq = make_bitseq(&BitSeqSpec::new(8, 4, vec!["10100101".into()]))?;
    let tree = make_toytree(&ToyTreeSpec {
        branching: 3,
        depth: 2,
        reward: ToyTreeReward::SumExp { scale: 0.5 },
    })?;
    let mut worst = 0.0f64;
    for i in 0..instances {
        let inst_seed = seed.wrapping_add(i as u64);
        let rel = if i % 2 == 0 {
            gradcheck_instance(&bitseq, &cfg, inst_seed)?
        } else {
            gradcheck_instance(&tree, &cfg, inst_seed)?
        };
        worst = worst.max(rel);
    }
    let pass = worst <= 1e-4;
    println!(
        "objective={:?} instances={} max_rel_err={:e} {}",
        kind,
        instances,
        worst,
        if pass { "pass" } else { "FAIL" }
    );
    if !pass {
        bail!("gradient check failed");
    }
    Ok(())
}

fn modes_summary(log_path: &PathBuf) -> Result<()> {
    let text = std::fs::read_to_string(log_path).context("reading log")?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != pgfn_core::harness::RUN_CSV_HEADER {
        bail!("unexpected log header: {header}");
    }
    let mut rows = 0u64;
    let mut switches = 0u64;
    let mut last: Option<Vec<String>> = None;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != 8 {
            bail!("malformed row: {line}");
        }
        rows += 1;
        if fields[7] == "1" {
            switches += 1;
        }
        last = Some(fields);
    }
    match last {
        Some(fields) => println!(
            "rows={} samples_total={} modes_total={} r_topk={} region_switches={}",
            rows, fields[1], fields[3], fields[5], switches
        ),
        None => println!("rows=0"),
    }
    Ok(())
}
