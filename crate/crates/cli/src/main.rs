use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use dynafs::baselines::{
    compute_importance, expected_tick_costs, select_subset, train_baseline, write_selection_csv,
    ImportanceMethod, SelectionRule,
};
use dynafs::config::RunConfig;
use dynafs::data::{generate_synthetic, DatasetSplits, FeatureKind};
use dynafs::eval::{
    activation_map, activation_svg, curve_svg, write_curve_csv, ActivationMap, CurvePoint,
};
use dynafs::predictor::Predictor;
use dynafs::trainer::{
    evaluate, full_observation_loss, pretrain_predictor, retrain_predictor, run_pipeline_on,
    train_policy, write_history, PolicyFile, Pretrained,
};
use dynafs::{Error, Result};

const EXIT_CONFIG: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_DATA: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "dynafs",
    version,
    about = "Cost-bounded dynamic feature acquisition"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Flat TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the configured synthetic cohort as events and schema CSVs.
    GenData,
    /// Pre-train the predictor on fully observed data.
    TrainPredictor,
    /// Optimize the acquisition policy against a pre-trained predictor.
    TrainPolicy {
        /// Pre-trained predictor; trained from scratch when omitted.
        #[arg(long)]
        predictor: Option<PathBuf>,
    },
    /// Refit the predictor on states masked by a trained policy.
    RetrainPredictor {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        predictor: PathBuf,
    },
    /// Full pipeline: pre-train, policy, retrain, evaluate.
    Run,
    /// Static feature-selection baseline.
    Baseline {
        #[arg(long, value_enum, default_value = "permutation")]
        method: MethodArg,
        #[arg(long, value_enum, default_value = "topk")]
        selection: SelectionArg,
    },
    /// Pipeline (and optionally baseline) over a range of budgets.
    Sweep {
        /// Comma-separated budgets.
        #[arg(long, value_delimiter = ',', required = true)]
        c_max: Vec<f64>,
        /// Also run this baseline at each budget.
        #[arg(long, value_enum)]
        baseline: Option<MethodArg>,
    },
    /// Render an activation map or cost-loss curve CSV as SVG, or compute
    /// the activation map from a saved policy.
    Viz {
        /// `activation.csv` or `curve.csv` to render.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Policy file to compute a fresh activation map from.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum MethodArg {
    Permutation,
    Lasso,
    L1Logistic,
}

impl From<MethodArg> for ImportanceMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Permutation => ImportanceMethod::Permutation,
            MethodArg::Lasso => ImportanceMethod::Lasso,
            MethodArg::L1Logistic => ImportanceMethod::L1Logistic,
        }
    }
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum SelectionArg {
    Topk,
    Knapsack,
}

impl From<SelectionArg> for SelectionRule {
    fn from(s: SelectionArg) -> Self {
        match s {
            SelectionArg::Topk => SelectionRule::Topk,
            SelectionArg::Knapsack => SelectionRule::Knapsack,
        }
    }
}

enum Outcome {
    Done,
    NotConverged,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Stage { source, .. } => exit_code(source),
        Error::Config(_) => EXIT_CONFIG,
        Error::Parse { .. }
        | Error::MissingColumn { .. }
        | Error::UnknownFeature(_)
        | Error::Imputation { .. }
        | Error::Data(_)
        | Error::Csv(_) => EXIT_DATA,
        _ => 1,
    }
}

fn load_config(g: &Global) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(d) = &g.out_dir {
        cfg.out_dir = Some(d.clone());
    }
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn load_predictor(path: &Path, splits: &DatasetSplits) -> Result<Pretrained> {
    Pretrained::from_predictor(Predictor::load(path)?, splits)
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let syn = generate_synthetic(&cfg.synthetic())?;
    let data = &syn.dataset;
    let mut schema = csv::Writer::from_path(out.join("schema.csv"))?;
    schema.write_record(["name", "kind", "obs_cost"])?;
    for s in &data.specs {
        let kind = match s.kind {
            FeatureKind::Static => "static",
            FeatureKind::Dynamic => "dynamic",
        };
        schema.write_record([s.name.as_str(), kind, &s.obs_cost.to_string()])?;
    }
    schema.flush()?;
    let mut ev = csv::Writer::from_path(out.join("events.csv"))?;
    ev.write_record(["subject_id", "feature_name", "time_hours", "value"])?;
    for e in &data.episodes {
        for t in 0..e.n_ticks() {
            let time = (t as f64 * cfg.tick_hours).to_string();
            for (k, s) in data.specs.iter().enumerate() {
                if s.kind == FeatureKind::Static && t > 0 {
                    continue;
                }
                ev.write_record([
                    e.subject_id.as_str(),
                    s.name.as_str(),
                    &time,
                    &e.x.get(k, t).to_string(),
                ])?;
            }
            ev.write_record([e.subject_id.as_str(), "label", &time, &e.y[t].to_string()])?;
        }
    }
    ev.flush()?;
    let relevance: Vec<&str> = data
        .specs
        .iter()
        .zip(&syn.relevance)
        .filter(|(_, &r)| r)
        .map(|(s, _)| s.name.as_str())
        .collect();
    write_json(&out.join("relevance.json"), &relevance)?;
    info!(
        "wrote {} subjects to {}",
        data.episodes.len(),
        out.display()
    );
    Ok(Outcome::Done)
}

fn train_predictor_cmd(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let splits = cfg.load_splits()?;
    let pre = pretrain_predictor(&splits, &cfg.predictor_config())?;
    pre.predictor.save(&out.join("predictor_pretrained.json"))?;
    let val = full_observation_loss(&pre.predictor, &splits.val, splits.task)?;
    let test = full_observation_loss(&pre.predictor, &splits.test, splits.task)?;
    write_json(
        &out.join("predictor_metrics.json"),
        &serde_json::json!({ "val_loss": val, "test_loss": test }),
    )?;
    Ok(Outcome::Done)
}

fn train_policy_cmd(cfg: &RunConfig, out: &Path, predictor: Option<&Path>) -> Result<Outcome> {
    let splits = cfg.load_splits()?;
    let pre = match predictor {
        Some(p) => load_predictor(p, &splits)?,
        None => {
            let pre = pretrain_predictor(&splits, &cfg.predictor_config())?;
            pre.predictor.save(&out.join("predictor_pretrained.json"))?;
            pre
        }
    };
    let outcome = train_policy(&splits, &pre, &cfg.policy(), |r| {
        info!(
            "step {} cost {:.3} beta {} c_valid {:?}",
            r.step, r.batch_cost, r.beta, r.c_valid
        )
    })?;
    write_history(&outcome.history, &out.join("history.jsonl"))?;
    PolicyFile::new(outcome.actor.clone(), outcome.critic.clone())
        .save(&out.join("policy.json"))?;
    write_json(
        &out.join("policy_metrics.json"),
        &serde_json::json!({
            "converged": outcome.converged,
            "steps": outcome.steps,
            "c_valid": outcome.c_valid,
            "beta": outcome.beta,
        }),
    )?;
    Ok(if outcome.converged {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

fn retrain_cmd(cfg: &RunConfig, out: &Path, policy: &Path, predictor: &Path) -> Result<Outcome> {
    let splits = cfg.load_splits()?;
    let pol = PolicyFile::load(policy)?;
    let pre = Predictor::load(predictor)?;
    let p = retrain_predictor(
        &splits,
        &pol.actor,
        &pre,
        &cfg.predictor_config(),
        cfg.flags(),
        cfg.rollout_spec(),
    )?;
    p.save(&out.join("predictor.json"))?;
    let test = evaluate(
        &pol.actor,
        &p,
        &splits.test,
        &splits.specs,
        splits.task,
        cfg.cost_mode,
        cfg.rollout_spec().salted(5),
    )?;
    write_json(&out.join("retrain_metrics.json"), &test)?;
    Ok(Outcome::Done)
}

fn run_cmd(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let splits = cfg.load_splits().map_err(|e| e.in_stage("data"))?;
    let res = run_pipeline_on(cfg, splits, Some(out))?;
    std::fs::write(out.join("activation.svg"), activation_svg(&res.activation))?;
    let m = &res.metrics;
    println!(
        "test cost {:.4} loss {:.4} (pre-trained predictor {:.4}); converged: {}",
        m.test.cost, m.test.loss, m.test_pretrained_predictor.loss, m.converged
    );
    Ok(if m.converged {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

fn baseline_at(
    cfg: &RunConfig,
    splits: &DatasetSplits,
    pre: &Predictor,
    method: ImportanceMethod,
    rule: SelectionRule,
    c_max: f64,
    out: Option<&Path>,
) -> Result<CurvePoint> {
    let imp = compute_importance(method, splits, pre, cfg.seed)?;
    let mean_len = splits.mean_train_len();
    let sel = select_subset(
        rule,
        &imp.scores,
        &splits.specs,
        cfg.cost_mode,
        mean_len,
        c_max,
    );
    if let Some(dir) = out {
        let costs = expected_tick_costs(&splits.specs, cfg.cost_mode, mean_len);
        write_selection_csv(
            &dir.join("selection.csv"),
            &splits.specs,
            &imp,
            &sel,
            &costs,
        )?;
    }
    let res = train_baseline(sel, splits, &cfg.predictor_config(), cfg.cost_mode)?;
    if let Some(dir) = out {
        res.predictor.save(&dir.join("predictor_baseline.json"))?;
        write_json(
            &dir.join("baseline_metrics.json"),
            &serde_json::json!({ "val": res.val, "test": res.test }),
        )?;
    }
    Ok(CurvePoint {
        method: format!("{method:?}-{rule:?}").to_lowercase(),
        target_c_max: c_max,
        achieved_cost: res.test.cost,
        loss: res.test.loss,
        seed: cfg.seed,
    })
}

fn baseline_cmd(
    cfg: &RunConfig,
    out: &Path,
    method: ImportanceMethod,
    rule: SelectionRule,
) -> Result<Outcome> {
    let splits = cfg.load_splits()?;
    let pre = pretrain_predictor(&splits, &cfg.predictor_config())?;
    let p = baseline_at(
        cfg,
        &splits,
        &pre.predictor,
        method,
        rule,
        cfg.c_max,
        Some(out),
    )?;
    println!("test cost {:.4} loss {:.4}", p.achieved_cost, p.loss);
    Ok(Outcome::Done)
}

fn sweep_cmd(
    cfg: &RunConfig,
    out: &Path,
    budgets: &[f64],
    baseline: Option<ImportanceMethod>,
) -> Result<Outcome> {
    let splits = cfg.load_splits().map_err(|e| e.in_stage("data"))?;
    let mut points = Vec::new();
    let mut all_converged = true;
    for &c in budgets {
        let dir = out.join(format!("cmax_{c}"));
        let run_cfg = RunConfig {
            c_max: c,
            ..cfg.clone()
        };
        run_cfg.validate()?;
        let res = run_pipeline_on(&run_cfg, splits.clone(), Some(&dir))?;
        all_converged &= res.metrics.converged;
        points.push(CurvePoint {
            method: "rl".into(),
            target_c_max: c,
            achieved_cost: res.metrics.test.cost,
            loss: res.metrics.test.loss,
            seed: cfg.seed,
        });
        if let Some(m) = baseline {
            points.push(baseline_at(
                cfg,
                &splits,
                &res.pretrained.predictor,
                m,
                SelectionRule::Topk,
                c,
                None,
            )?);
        }
    }
    write_curve_csv(&points, &out.join("curve.csv"))?;
    std::fs::write(out.join("curve.svg"), curve_svg(&points))?;
    Ok(if all_converged {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

fn read_curve(path: &Path) -> Result<Vec<CurvePoint>> {
    let text = std::fs::read_to_string(path)?;
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let (method, target_c_max, achieved_cost, loss, seed): (String, f64, f64, f64, u64) =
            rec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        out.push(CurvePoint {
            method,
            target_c_max,
            achieved_cost,
            loss,
            seed,
        });
    }
    Ok(out)
}

fn viz_cmd(
    cfg: &RunConfig,
    out: &Path,
    input: Option<&Path>,
    policy: Option<&Path>,
    output: Option<&Path>,
) -> Result<Outcome> {
    let (svg, default_name) = match (input, policy) {
        (Some(p), _) if std::fs::read_to_string(p)?.starts_with("# x_axis") => {
            (curve_svg(&read_curve(p)?), "curve.svg")
        }
        (Some(p), _) => (
            activation_svg(&ActivationMap::read_csv(p)?),
            "activation.svg",
        ),
        (None, Some(p)) => {
            let splits = cfg.load_splits()?;
            let pol = PolicyFile::load(p)?;
            let names: Vec<String> = splits.specs.iter().map(|s| s.name.clone()).collect();
            let map = activation_map(
                &pol.actor,
                &splits.test,
                &names,
                cfg.t_max,
                cfg.activation_mode,
                cfg.seed,
                cfg.activation_rollouts,
            )?;
            map.write_csv(&out.join("activation.csv"))?;
            (activation_svg(&map), "activation.svg")
        }
        (None, None) => return Err(Error::Config("viz needs --input or --policy".into())),
    };
    let path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join(default_name));
    std::fs::write(&path, svg)?;
    info!("wrote {}", path.display());
    Ok(Outcome::Done)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("DYNAFS_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::Config(format!(
                "DYNAFS_THREADS must be a positive integer, got `{v}`"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    init_threads()?;
    let (cfg, out) = load_config(&cli.global)?;
    match &cli.command {
        Command::GenData => gen_data(&cfg, &out),
        Command::TrainPredictor => train_predictor_cmd(&cfg, &out),
        Command::TrainPolicy { predictor } => train_policy_cmd(&cfg, &out, predictor.as_deref()),
        Command::RetrainPredictor { policy, predictor } => {
            retrain_cmd(&cfg, &out, policy, predictor)
        }
        Command::Run => run_cmd(&cfg, &out),
        Command::Baseline { method, selection } => {
            baseline_cmd(&cfg, &out, (*method).into(), (*selection).into())
        }
        Command::Sweep { c_max, baseline } => {
            sweep_cmd(&cfg, &out, c_max, baseline.map(Into::into))
        }
        Command::Viz {
            input,
            policy,
            output,
        } => viz_cmd(
            &cfg,
            &out,
            input.as_deref(),
            policy.as_deref(),
            output.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            error!("policy did not reach the cost budget");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
