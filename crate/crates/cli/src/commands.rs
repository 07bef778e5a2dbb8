//! One function per subcommand. Each resolves its config, calls the library
//! once, and writes the library's own serializations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use rrmdp_core::actor_critic::{tabular_actor_critic, ActorCriticConfig, ActorCriticState};
use rrmdp_core::experiment::{export_results, run_alpha_sweep_with_jobs, ExportFormat, SweepConfig};
use rrmdp_core::train::saddle_certificate_for;
use rrmdp_core::{train_projected_pg, worst_case_reward_for, Checkpoint, NormOrder, PgConfig, WorstCaseReport};

use crate::config::{self, load_mdp_source, RandomMdp, SpecConfig};
use crate::error::CliError;
use crate::{Common, EvalArgs};

/// A flag that maps onto a config key, or `None` where it does not apply.
type FlagKey = Option<&'static str>;

struct FlagKeys {
    seed: FlagKey,
    alpha: FlagKey,
    p: FlagKey,
    flavor: FlagKey,
    jobs: bool,
}

fn layered(common: &Common, keys: &FlagKeys, command: &str, mut extra: Vec<(&str, Value)>) -> Result<Value, CliError> {
    let mut value = config::load_layer(common.config.as_deref())?;
    for raw in &common.overrides {
        let (key, v) = config::parse_override(raw)?;
        config::set_path(&mut value, &key, v)?;
    }
    let unsupported = |flag: &str| CliError::Config(format!("--{flag} does not apply to `{command}`"));
    if let Some(seed) = common.seed {
        extra.push((keys.seed.ok_or_else(|| unsupported("seed"))?, seed.into()));
    }
    if let Some(alpha) = common.alpha {
        let key = keys.alpha.ok_or_else(|| unsupported("alpha"))?;
        // sweeps take a grid; a single --alpha runs one column
        let v = if key == "alpha_grid" { Value::from(vec![alpha]) } else { alpha.into() };
        extra.push((key, v));
    }
    if let Some(p) = &common.p {
        let order: NormOrder = p.parse()?;
        let v = serde_json::to_value(order).map_err(|e| CliError::Config(e.to_string()))?;
        extra.push((keys.p.ok_or_else(|| unsupported("p"))?, v));
    }
    if let Some(flavor) = common.flavor {
        let key = keys.flavor.ok_or_else(|| unsupported("flavor"))?;
        let v = if key == "methods" { Value::from(vec![flavor.name()]) } else { flavor.name().into() };
        extra.push((key, v));
    }
    if common.jobs.is_some() && !keys.jobs {
        return Err(unsupported("jobs"));
    }
    for (key, v) in extra {
        config::set_path(&mut value, key, v)?;
    }
    Ok(value)
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

/// Prints to stdout, staying quiet when the reader has gone away (`| head`).
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn to_pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("in-memory values serialize")
}

#[derive(Debug, Serialize)]
struct Manifest<'a, C: Serialize> {
    toolkit: &'static str,
    version: &'static str,
    subcommand: &'a str,
    seed: Option<u64>,
    config: &'a C,
    outputs: Vec<&'a str>,
}

fn write_manifest<C: Serialize>(
    out: &Path,
    subcommand: &str,
    seed: Option<u64>,
    config: &C,
    outputs: &[&str],
) -> Result<(), CliError> {
    let manifest = Manifest {
        toolkit: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        subcommand,
        seed,
        config,
        outputs: outputs.to_vec(),
    };
    write_text(&out.join("manifest.json"), &to_pretty(&manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub mdp: PathBuf,
    pub policy: PathBuf,
    #[serde(default)]
    pub spec: SpecConfig,
}

const SPEC_FLAGS: FlagKeys = FlagKeys {
    seed: None,
    alpha: Some("spec.alpha"),
    p: Some("spec.p"),
    flavor: Some("spec.flavor"),
    jobs: false,
};

fn eval_report(args: &EvalArgs, command: &str) -> Result<(EvalConfig, WorstCaseReport), CliError> {
    let mut extra = Vec::new();
    if let Some(mdp) = &args.mdp {
        extra.push(("mdp", Value::from(mdp.to_string_lossy().into_owned())));
    }
    if let Some(policy) = &args.policy {
        extra.push(("policy", Value::from(policy.to_string_lossy().into_owned())));
    }
    let config: EvalConfig = config::resolve(layered(&args.common, &SPEC_FLAGS, command, extra)?)?;
    let mdp = config::load_mdp(&config.mdp)?;
    let policy = config::load_policy(&config.policy)?;
    let spec = config.spec.build(mdp.num_states(), mdp.num_actions())?;
    let report = worst_case_reward_for(&mdp, &policy, &spec)?;
    Ok((config, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub nominal_return: f64,
    pub robust_return: f64,
    pub regularizer_value: f64,
    pub penalty_path: PathBuf,
}

pub fn evaluate(args: &EvalArgs) -> Result<(), CliError> {
    let (config, report) = eval_report(args, "evaluate")?;
    let out = &args.common.out;
    prepare_out(out)?;
    let penalty_path = out.join("penalty.json");
    write_text(&penalty_path, &to_pretty(&report.penalty))?;
    let summary = EvaluateReport {
        nominal_return: report.nominal_return,
        robust_return: report.robust_return,
        regularizer_value: report.regularizer_value,
        penalty_path,
    };
    let text = to_pretty(&summary);
    write_text(&out.join("evaluate.json"), &text)?;
    write_manifest(out, "evaluate", None, &config, &["evaluate.json", "penalty.json"])?;
    emit(&text);
    Ok(())
}

pub fn worst_reward(args: &EvalArgs) -> Result<(), CliError> {
    let (config, report) = eval_report(args, "worst-reward")?;
    let out = &args.common.out;
    prepare_out(out)?;
    let text = to_pretty(&report);
    write_text(&out.join("worst_reward.json"), &text)?;
    write_manifest(out, "worst-reward", None, &config, &["worst_reward.json"])?;
    emit(&text);
    Ok(())
}

const RUN_FLAGS: FlagKeys = FlagKeys {
    seed: Some("seed"),
    ..SPEC_FLAGS
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Seeds the random MDP and is recorded as the training seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mdp: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_mdp: Option<RandomMdp>,
    #[serde(default)]
    pub spec: SpecConfig,
    #[serde(default)]
    pub pg: PgConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub final_robust_return: f64,
    pub final_stationarity: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best response under the policy's own worst reward minus its robust return.
    pub saddle_gap: f64,
}

pub fn train(args: &Common) -> Result<(), CliError> {
    let mut config: TrainConfig = config::resolve(layered(args, &RUN_FLAGS, "train", Vec::new())?)?;
    config.pg.seed = config.seed;
    let mdp = load_mdp_source(config.mdp.as_deref(), config.random_mdp.as_ref(), config.seed)?;
    let spec = config.spec.build(mdp.num_states(), mdp.num_actions())?;
    let outcome = train_projected_pg(&mdp, &spec, &config.pg)?;

    prepare_out(&args.out)?;
    outcome.checkpoint(&spec, config.seed).save(args.out.join("checkpoint.json"))?;
    outcome.trace.write_csv(args.out.join("trace.csv"))?;
    let summary = TrainSummary {
        final_robust_return: outcome.trace.final_robust_return,
        final_stationarity: outcome.trace.final_stationarity,
        iterations: outcome.trace.records.len(),
        converged: outcome.trace.converged,
        saddle_gap: saddle_certificate_for(&mdp, &outcome.policy, &spec)?.gap,
    };
    let text = to_pretty(&summary);
    write_text(&args.out.join("summary.json"), &text)?;
    write_manifest(
        &args.out,
        "train",
        Some(config.seed),
        &config,
        &["checkpoint.json", "trace.csv", "summary.json"],
    )?;
    emit(&text);
    Ok(())
}

const SWEEP_FLAGS: FlagKeys = FlagKeys {
    seed: Some("seed"),
    alpha: Some("alpha_grid"),
    p: Some("p"),
    flavor: Some("methods"),
    jobs: true,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: usize,
    pub failed: usize,
}

pub fn sweep(args: &Common) -> Result<(), CliError> {
    let config: SweepConfig = config::resolve(layered(args, &SWEEP_FLAGS, "sweep", Vec::new())?)?;
    let result = run_alpha_sweep_with_jobs(&config, args.jobs)?;
    prepare_out(&args.out)?;
    export_results(&result, args.out.join("sweep.csv"), ExportFormat::Csv)?;
    export_results(&result, args.out.join("sweep.json"), ExportFormat::Json)?;
    for cell in result.cells.iter().filter(|c| c.error.is_some()) {
        log::warn!(
            "cell S={} alpha={} method={} failed: {}",
            cell.num_states,
            cell.alpha,
            cell.method,
            cell.error.as_deref().unwrap_or_default()
        );
    }
    let summary = SweepSummary {
        cells: result.cells.len(),
        failed: result.cells.iter().filter(|c| c.error.is_some()).count(),
    };
    write_manifest(&args.out, "sweep", Some(config.seed), &config, &["sweep.csv", "sweep.json"])?;
    emit(&to_pretty(&summary));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mdp: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_mdp: Option<RandomMdp>,
    #[serde(default)]
    pub spec: SpecConfig,
    #[serde(default)]
    pub ac: ActorCriticConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcSummary {
    /// Exact robust return of the final policy.
    pub final_robust_return: f64,
    pub batches: usize,
}

pub fn ac(args: &Common) -> Result<(), CliError> {
    let mut config: AcConfig = config::resolve(layered(args, &RUN_FLAGS, "ac", Vec::new())?)?;
    config.ac.seed = config.seed;
    let mdp = load_mdp_source(config.mdp.as_deref(), config.random_mdp.as_ref(), config.seed)?;
    let spec = config.spec.build(mdp.num_states(), mdp.num_actions())?;
    let init = ActorCriticState::initial(mdp.num_states(), mdp.num_actions());
    let outcome = tabular_actor_critic(&mdp, &spec, init, &config.ac)?;

    prepare_out(&args.out)?;
    let checkpoint = Checkpoint {
        policy: outcome.policy.clone(),
        theta: Some(outcome.state.theta.clone()),
        spec: spec.clone(),
        seed: config.seed,
    };
    checkpoint.save(args.out.join("checkpoint.json"))?;
    write_text(&args.out.join("state.json"), &to_pretty(&outcome.state))?;
    outcome.trace.write_csv(args.out.join("trace.csv"))?;
    let summary = AcSummary {
        final_robust_return: outcome.trace.final_robust_return,
        batches: outcome.state.step,
    };
    let text = to_pretty(&summary);
    write_text(&args.out.join("summary.json"), &text)?;
    write_manifest(
        &args.out,
        "ac",
        Some(config.seed),
        &config,
        &["checkpoint.json", "state.json", "trace.csv", "summary.json"],
    )?;
    emit(&text);
    Ok(())
}
