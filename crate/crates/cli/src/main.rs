use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use spa_marl_core::code::{self, CodeFamily, CodeInstance};
use spa_marl_core::eval::{self, EvalConfig, StageReport, Summary};
use spa_marl_core::hardware::HardwareConfig;
use spa_marl_core::nn::CheckpointMeta;
use spa_marl_core::par::Execution;
use spa_marl_core::pipeline;
use spa_marl_core::policy::DecoderPolicy;
use spa_marl_core::trainer::{self, TrainConfig, TrainOutcome};
use spa_marl_core::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

/// Synergy-gated two-agent decoder: training, staged evaluation and latency tables.
#[derive(Parser)]
#[command(name = "spa-marl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain and fine-tune a policy and its always-mix baseline.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one validation stage against a checkpoint.
    Eval {
        stage: Stage,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Always-mix baseline for stage 1; defaults to `qmix.json` next to the checkpoint.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Pretrain-only policy for stage 1; defaults to `pretrained.json` next to the checkpoint if present.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[arg(long, default_value_t = eval::DEFAULT_N_EVAL)]
        n_eval: usize,
        /// Run on the calling thread only.
        #[arg(long)]
        sequential: bool,
    },
    /// Write the two-QPU latency scaling table.
    Table1 {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the parameters of a code instance as JSON.
    Codeinfo {
        #[arg(long, value_enum)]
        family: Family,
        #[arg(long)]
        d: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Stage1,
    Stage2,
    Stage3,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Truebb,
    Toycss,
}

/// Distance of the only published bivariate-bicycle instance we build by name.
const GROSS_DISTANCE: usize = 12;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}

/// 2 for problems with the invocation or its inputs, 1 for runtime failures.
fn error_code(e: &Error) -> u8 {
    let usage = matches!(e, Error::Usage(_) | Error::Config(_) | Error::Io { .. } | Error::Json(_) | Error::Unsupported(_));
    if usage {
        2
    } else {
        1
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Train { config, out } => train(&config, &out),
        Command::Eval {
            stage,
            checkpoint,
            seed,
            out,
            baseline,
            pretrained,
            n_eval,
            sequential,
        } => {
            let mut cfg = EvalConfig::new(seed, n_eval);
            if sequential {
                cfg.execution = Execution::Sequential;
            }
            evaluate(stage, &checkpoint, baseline, pretrained, &cfg, &out)
        }
        Command::Table1 { out } => {
            let rows = pipeline::speedup_table(&pipeline::TABLE1_DISTANCES)?;
            eval::write_file(&out, &pipeline::table_csv(&rows))?;
            Ok(0)
        }
        Command::Codeinfo { family, d } => codeinfo(family, d),
    }
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: TrainConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    eval::write_file(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

#[derive(Serialize)]
struct RunSummary {
    best_epoch: Option<usize>,
    best_validation: f64,
    pretrain_examples: usize,
    pretrain_imitation_accuracy: f64,
    pretrain_epoch_loss: Vec<f64>,
    oracle_labels: usize,
    bp_labels: usize,
}

impl RunSummary {
    fn new(o: &TrainOutcome) -> Self {
        Self {
            best_epoch: o.best_epoch,
            best_validation: o.best_validation,
            pretrain_examples: o.pretrain.examples,
            pretrain_imitation_accuracy: o.pretrain.imitation_accuracy,
            pretrain_epoch_loss: o.pretrain.epoch_loss.clone(),
            oracle_labels: o.dataset_sources.0,
            bp_labels: o.dataset_sources.1,
        }
    }
}

#[derive(Serialize)]
struct TrainSummary {
    config: TrainConfig,
    spa: RunSummary,
    qmix: RunSummary,
}

fn train(config: &Path, out: &Path) -> Result<u8> {
    let cfg = read_config(config)?;
    let code = cfg.code.build()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let started = Instant::now();
    let spa = trainer::train_loop(&code, &cfg)?;
    eprintln!("trained in {:.1} s", started.elapsed().as_secs_f64());
    let qmix_cfg = cfg.qmix_ablation();
    let started = Instant::now();
    let qmix = trainer::train_loop(&code, &qmix_cfg)?;
    eprintln!("trained always-mix baseline in {:.1} s", started.elapsed().as_secs_f64());

    let meta = spa.metadata(&cfg, &code);
    let at_epoch = |epoch: usize| CheckpointMeta { epoch, ..meta.clone() };
    spa.policy.save(&out.join("checkpoint.json"), meta.clone())?;
    spa.pretrained.save(&out.join("pretrained.json"), at_epoch(0))?;
    spa.final_policy.save(&out.join("final.json"), at_epoch(cfg.epochs()))?;
    qmix.policy.save(&out.join("qmix.json"), qmix.metadata(&qmix_cfg, &code))?;
    eval::write_file(&out.join("curve.csv"), &trainer::curve_csv(&spa.curve))?;
    eval::write_file(&out.join("qmix_curve.csv"), &trainer::curve_csv(&qmix.curve))?;
    if !spa.snapshots.is_empty() {
        let dir = out.join("snapshots");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (epoch, policy) in &spa.snapshots {
            policy.save(&dir.join(format!("epoch_{:04}.json", epoch + 1)), at_epoch(epoch + 1))?;
        }
    }
    write_json(
        &out.join("train_summary.json"),
        &TrainSummary {
            config: cfg.clone(),
            spa: RunSummary::new(&spa),
            qmix: RunSummary::new(&qmix),
        },
    )?;
    println!(
        "best epoch {:?}, validation {:.5}; baseline validation {:.5}",
        spa.best_epoch, spa.best_validation, qmix.best_validation
    );
    Ok(0)
}

fn load_policy(path: &Path) -> Result<(DecoderPolicy, CheckpointMeta)> {
    if !path.exists() {
        return Err(Error::Usage(format!("checkpoint {} not found", path.display())));
    }
    DecoderPolicy::load(path)
}

fn code_for(meta: &CheckpointMeta) -> Result<CodeInstance> {
    match (&meta.code, meta.code_distance) {
        (Some(family), _) => family.build(),
        (None, Some(d)) => CodeFamily::ToyCss { d }.build(),
        (None, None) => Err(Error::Usage("checkpoint does not record its code".into())),
    }
}

fn sibling(checkpoint: &Path, name: &str) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new(".")).join(name)
}

fn evaluate(
    stage: Stage,
    checkpoint: &Path,
    baseline: Option<PathBuf>,
    pretrained: Option<PathBuf>,
    cfg: &EvalConfig,
    out: &Path,
) -> Result<u8> {
    let (policy, meta) = load_policy(checkpoint)?;
    let report = match stage {
        Stage::Stage1 => {
            let code = code_for(&meta)?;
            let baseline = baseline.unwrap_or_else(|| sibling(checkpoint, "qmix.json"));
            let (qmix, _) = load_policy(&baseline)?;
            let pretrained = match pretrained {
                Some(p) => Some(load_policy(&p)?.0),
                None => {
                    let p = sibling(checkpoint, "pretrained.json");
                    if p.exists() {
                        Some(load_policy(&p)?.0)
                    } else {
                        None
                    }
                }
            };
            StageReport::Stage1(eval::run_stage1(&policy, &qmix, pretrained.as_ref(), &code, cfg)?)
        }
        Stage::Stage2 => {
            let code = code_for(&meta)?;
            let platforms = HardwareConfig::presets();
            StageReport::Stage2(eval::run_stage2(&policy, &code, &platforms, &eval::SWEEP_BUDGETS_MS, cfg)?)
        }
        Stage::Stage3 => StageReport::Stage3(eval::run_stage3(&policy, meta.code_distance, &eval::TRANSFER_DISTANCES, cfg)?),
    };
    let summary = eval::emit_reports(&[report], out)?;
    print_summary(&summary);
    Ok(summary.exit_code() as u8)
}

fn print_summary(summary: &Summary) {
    for stage in &summary.stages {
        for c in &stage.checks {
            let verdict = if c.pass { "PASS" } else { "FAIL" };
            println!("{verdict} {} {}: {} (threshold {})", stage.stage, c.name, c.value, c.threshold);
        }
    }
}

#[derive(Serialize)]
struct CodeInfo {
    family: CodeFamily,
    n: usize,
    k: usize,
    distance: usize,
    x_checks: usize,
    z_checks: usize,
    nominal_syndrome_dim: usize,
    x_remote_checks: usize,
    z_remote_checks: usize,
}

fn codeinfo(family: Family, d: usize) -> Result<u8> {
    println!("{}", serde_json::to_string_pretty(&code_info(family, d)?)?);
    Ok(0)
}

fn code_info(family: Family, d: usize) -> Result<CodeInfo> {
    let code = match family {
        Family::Toycss => code::build_toy_css(d)?,
        Family::Truebb if d == GROSS_DISTANCE => code::gross_code()?,
        Family::Truebb => {
            return Err(Error::Usage(format!(
                "no named bivariate-bicycle instance of distance {d} (the gross code has d = {GROSS_DISTANCE})"
            )))
        }
    };
    let layout = code.layout();
    Ok(CodeInfo {
        family: code.family.clone(),
        n: code.n,
        k: code.k(),
        distance: d,
        x_checks: code.num_x_checks(),
        z_checks: code.num_z_checks(),
        nominal_syndrome_dim: code.nominal_syndrome_dim,
        x_remote_checks: layout.x_remote.len(),
        z_remote_checks: layout.z_remote.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    const TINY_CONFIG: &str = r#"{
      "seed": 11,
      "widths": {"embed": 3, "trunk": [6, 5], "readout": 4, "synergy": [5, 4], "mixer": 3},
      "batch_size": 16,
      "fine_tune_episodes": 64,
      "episodes_per_epoch": 16,
      "updates_per_epoch": 2,
      "checkpoint_every": 2,
      "pretrain": {"samples": 200, "epochs": 1, "batch_size": 32}
    }"#;

    fn parse(args: &[&str]) -> std::result::Result<Command, clap::Error> {
        Cli::try_parse_from(std::iter::once("spa-marl").chain(args.iter().copied())).map(|c| c.command)
    }

    fn exec(args: &[&str]) -> u8 {
        match run(parse(args).expect("valid arguments")) {
            Ok(code) => code,
            Err(e) => error_code(&e),
        }
    }

    fn s(path: &Path) -> &str {
        path.to_str().unwrap()
    }

    fn trained(dir: &Path) -> PathBuf {
        let cfg = dir.join("tiny.json");
        std::fs::write(&cfg, TINY_CONFIG).unwrap();
        let run_dir = dir.join("run");
        assert_eq!(exec(&["train", "--config", s(&cfg), "--out", s(&run_dir)]), 0);
        run_dir
    }

    #[test]
    fn train_then_evaluate_every_stage() {
        let dir = tempfile::tempdir().unwrap();
        let run_dir = trained(dir.path());
        for file in ["checkpoint.json", "pretrained.json", "final.json", "qmix.json", "curve.csv", "train_summary.json"] {
            assert!(run_dir.join(file).exists(), "{file} missing");
        }
        assert_eq!(std::fs::read_dir(run_dir.join("snapshots")).unwrap().count(), 2);
        let ck = run_dir.join("checkpoint.json");
        for stage in ["stage1", "stage2", "stage3"] {
            let dest = dir.path().join(stage);
            let code = exec(&["eval", stage, "--checkpoint", s(&ck), "--seed", "3", "--out", s(&dest), "--n-eval", "40"]);
            assert!(code <= 1, "{stage} exited {code}");
            assert!(dest.join(format!("{stage}.csv")).exists());
            let summary: Value = serde_json::from_str(&std::fs::read_to_string(dest.join("summary.json")).unwrap()).unwrap();
            assert_eq!(summary["pass"].as_bool().unwrap(), code == 0);
        }
    }

    #[test]
    fn sequential_flag_does_not_change_reports() {
        let dir = tempfile::tempdir().unwrap();
        let ck = trained(dir.path()).join("checkpoint.json");
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        exec(&["eval", "stage1", "--checkpoint", s(&ck), "--seed", "1", "--out", s(&a), "--n-eval", "200"]);
        exec(&["eval", "stage1", "--checkpoint", s(&ck), "--seed", "1", "--out", s(&b), "--n-eval", "200", "--sequential"]);
        for file in ["stage1.csv", "stage1.json", "summary.json"] {
            assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
        }
    }

    #[test]
    fn table1_writes_four_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        assert_eq!(exec(&["table1", "--out", s(&path)]), 0);
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("d,dim,single_ms,dist_ms,speedup,comm_overhead_pct,params\n"));
        assert!(text.contains("\n5,25,0.85,0.65,1.31,7.7,12.8K\n"));
    }

    #[test]
    fn codeinfo_reports_code_parameters() {
        let gross = code_info(Family::Truebb, 12).unwrap();
        assert_eq!((gross.n, gross.k, gross.x_checks), (144, 12, 72));
        let toy = code_info(Family::Toycss, 3).unwrap();
        assert_eq!((toy.n, toy.k, toy.x_checks + toy.z_checks), (9, 1, 8));
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(exec(&["codeinfo", "--family", "truebb", "--d", "7"]), 2);
        assert!(parse(&["frobnicate"]).is_err());
        assert!(parse(&["eval", "stage4", "--checkpoint", "c", "--seed", "0", "--out", "o"]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.json");
        let out = dir.path().join("o");
        assert_eq!(exec(&["eval", "stage1", "--checkpoint", s(&missing), "--seed", "0", "--out", s(&out)]), 2);
        assert_eq!(exec(&["train", "--config", s(&missing), "--out", s(&out)]), 2);
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, r#"{"batch_size": 0}"#).unwrap();
        assert_eq!(exec(&["train", "--config", s(&bad), "--out", s(&out)]), 2);
    }
}
