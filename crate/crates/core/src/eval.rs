//! Three-stage validation harness and report emission.
//!
//! Every episode draws from `rng::stream(seed, EVAL, (cell << 32) | i)`.
//! Stages 1 and 2 use `cell = rate index`, so all policies, platforms and
//! budgets see the same error on episode `i`; stage 3 uses
//! `cell = TRANSFER_CELL + d`.

use crate::code::{build_toy_css, CodeInstance};
use crate::env::{self, EpisodeConfig, Policy, RewardConfig};
use crate::error::{Error, Result};
use crate::hardware::{HardwareConfig, Platform, GATE_THRESHOLD};
use crate::par::{self, Execution};
use crate::pipeline::{self, ScalingRow, TABLE1_DISTANCES};
use crate::policy::{Action, DecoderPolicy};
use crate::rng::{self, Rng};
use crate::code::Syndrome;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Stage 1 pools equal shares of these physical error rates.
pub const STAGE1_RATES: [f64; 3] = [0.005, 0.01, 0.02];
/// Index into [`STAGE1_RATES`] of the 1% rate used for the headline comparisons.
pub const HEADLINE_RATE: usize = 1;
pub const SWEEP_BUDGETS_MS: [f64; 5] = [10.0, 5.0, 2.0, 1.0, 0.5];
pub const TRANSFER_DISTANCES: [usize; 3] = [7, 9, 11];
pub const TRANSFER_P: f64 = 0.01;
pub const DEFAULT_N_EVAL: usize = 10_000;
pub const HISTOGRAM_BINS: usize = 10;
/// λ above this counts as full coupling in the synergy fractions.
pub const FULL_COUPLING: f64 = 0.8;

pub const MIN_SUCCESS: f64 = 0.80;
pub const QMIX_TOLERANCE: f64 = 0.01;
pub const MIN_R_SQUARED: f64 = 0.5;
pub const MONOTONE_SLACK: f64 = 0.02;
pub const MIN_FLOOR_SUCCESS: f64 = 0.5;

const TRANSFER_CELL: u64 = 1 << 16;

/// Reference latency table at reporting precision.
pub const TABLE1_REFERENCE: [[&str; 7]; 4] = [
    ["5", "25", "0.85", "0.65", "1.31", "7.7", "12.8K"],
    ["7", "49", "1.33", "0.89", "1.49", "5.6", "25.1K"],
    ["9", "81", "1.97", "1.21", "1.63", "4.1", "41.5K"],
    ["11", "121", "2.77", "1.61", "1.72", "3.1", "61.9K"],
];
pub const TABLE1_REFERENCE_MEAN_SPEEDUP: &str = "1.54";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub seed: u64,
    /// Episodes per cell (per error rate in stages 1 and 2, per distance in stage 3).
    pub n_eval: usize,
    pub reward: RewardConfig,
    pub execution: Execution,
}

impl EvalConfig {
    pub fn new(seed: u64, n_eval: usize) -> Self {
        Self {
            seed,
            n_eval,
            reward: RewardConfig::default(),
            execution: Execution::default(),
        }
    }
}

/// Always halts: success exactly when the error is a stabilizer.
pub struct IdentityPolicy;

impl Policy for IdentityPolicy {
    fn synergy(&self, _code: &CodeInstance, _s: &Syndrome) -> Result<f64> {
        Ok(0.0)
    }

    fn act(&self, _code: &CodeInstance, _s: &Syndrome, _gate: bool, _eps: f64, _rng: &mut Rng) -> Result<(Action, Action)> {
        Ok((Action::Halt, Action::Halt))
    }
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    success: bool,
    lambda: f64,
    complexity: f64,
    syndrome_weight: usize,
}

fn stream_index(cell: u64, i: usize) -> u64 {
    (cell << 32) | i as u64
}

fn run_cell(
    policy: &dyn Policy,
    code: &CodeInstance,
    ep_cfg: &EpisodeConfig,
    cell: u64,
    cfg: &EvalConfig,
) -> Result<Vec<Outcome>> {
    par::map_indexed(cfg.execution, cfg.n_eval, |i| {
        let mut r = rng::stream(cfg.seed, rng::domain::EVAL, stream_index(cell, i));
        env::run_episode(policy, code, ep_cfg, &mut r).map(|ep| Outcome {
            success: ep.record.success,
            lambda: ep.record.lambda,
            complexity: ep.record.complexity,
            syndrome_weight: ep.record.initial_syndrome.weight(),
        })
    })
    .into_iter()
    .collect()
}

fn success_rate(outcomes: &[Outcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| o.success).count() as f64 / outcomes.len() as f64
}

fn episode_config(p: f64, hardware: HardwareConfig, budget_ms: Option<f64>, cfg: &EvalConfig) -> EpisodeConfig {
    EpisodeConfig {
        p,
        hardware,
        eps: 0.0,
        reward: cfg.reward,
        budget_ms,
    }
}

/// Greedy outcomes at every stage-1 rate, concatenated in rate order.
fn pooled_outcomes(
    policy: &dyn Policy,
    code: &CodeInstance,
    hardware: HardwareConfig,
    budget_ms: Option<f64>,
    cfg: &EvalConfig,
) -> Result<Vec<Vec<Outcome>>> {
    STAGE1_RATES
        .iter()
        .enumerate()
        .map(|(k, &p)| run_cell(policy, code, &episode_config(p, hardware, budget_ms, cfg), k as u64, cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRates {
    pub pooled: f64,
    /// One entry per [`STAGE1_RATES`] element.
    pub by_rate: Vec<f64>,
}

impl SuccessRates {
    fn from_cells(cells: &[Vec<Outcome>]) -> Self {
        let by_rate: Vec<f64> = cells.iter().map(|c| success_rate(c)).collect();
        let all: Vec<Outcome> = cells.iter().flatten().copied().collect();
        Self {
            pooled: success_rate(&all),
            by_rate,
        }
    }

    pub fn headline(&self) -> f64 {
        self.by_rate[HEADLINE_RATE]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynergyFractions {
    /// λ below the gate threshold.
    pub independent: f64,
    pub intermediate: f64,
    /// λ above [`FULL_COUPLING`].
    pub full: f64,
}

impl SynergyFractions {
    pub fn from_lambdas(lambdas: &[f64]) -> Self {
        if lambdas.is_empty() {
            return Self {
                independent: 0.0,
                intermediate: 0.0,
                full: 0.0,
            };
        }
        let n = lambdas.len() as f64;
        let lo = lambdas.iter().filter(|&&l| l < GATE_THRESHOLD).count() as f64;
        let hi = lambdas.iter().filter(|&&l| l > FULL_COUPLING).count() as f64;
        Self {
            independent: lo / n,
            intermediate: (n - lo - hi) / n,
            full: hi / n,
        }
    }

    pub fn all_nonempty(&self) -> bool {
        self.independent > 0.0 && self.intermediate > 0.0 && self.full > 0.0
    }
}

/// Counts over `[k/10, (k+1)/10)`, with λ = 1 in the last bin.
pub fn lambda_histogram(lambdas: &[f64]) -> Vec<usize> {
    let mut bins = vec![0usize; HISTOGRAM_BINS];
    for &l in lambdas {
        let k = ((l.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1);
        bins[k] += 1;
    }
    bins
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Squared Pearson correlation from centred sums; 0 when either side is constant.
pub fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() != ys.len() || xs.len() < 2 || is_constant(xs) || is_constant(ys) {
        return 0.0;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
}

/// Same quantity via the mean product of z-scores.
pub fn r_squared_standardized(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() != ys.len() || xs.len() < 2 || is_constant(xs) || is_constant(ys) {
        return 0.0;
    }
    let n = xs.len() as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let sx = (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n).sqrt();
    if sx <= 0.0 || sy <= 0.0 {
        return 0.0;
    }
    let r = xs.iter().zip(ys).map(|(x, y)| ((x - mx) / sx) * ((y - my) / sy)).sum::<f64>() / n;
    (r * r).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightBucket {
    pub syndrome_weight: usize,
    pub count: usize,
    pub mean_lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage1Reference {
    pub success: f64,
    pub qmix_success: f64,
    pub r_squared: f64,
    pub independent: f64,
    pub full: f64,
    pub intermediate: f64,
}

pub const STAGE1_REFERENCE: Stage1Reference = Stage1Reference {
    success: 0.958,
    qmix_success: 0.892,
    r_squared: 0.95,
    independent: 0.285,
    full: 0.243,
    intermediate: 0.472,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Report {
    pub rates: Vec<f64>,
    pub n_eval_per_rate: usize,
    pub success: SuccessRates,
    pub qmix_success: SuccessRates,
    pub pretrained_success: Option<SuccessRates>,
    pub histogram: Vec<usize>,
    pub fractions: SynergyFractions,
    pub r_squared: f64,
    pub lambda_by_syndrome_weight: Vec<WeightBucket>,
    pub reference: Stage1Reference,
}

/// Greedy success of the trained policy, the always-mix baseline and
/// optionally the pretrained policy on paired episodes, plus synergy
/// statistics over the trained policy's initial syndromes.
pub fn run_stage1(
    policy: &DecoderPolicy,
    qmix: &DecoderPolicy,
    pretrained: Option<&DecoderPolicy>,
    code: &CodeInstance,
    cfg: &EvalConfig,
) -> Result<Stage1Report> {
    for p in [Some(policy), Some(qmix), pretrained].into_iter().flatten() {
        p.check_code(code)?;
    }
    let hw = HardwareConfig::ideal();
    let cells = pooled_outcomes(policy, code, hw, None, cfg)?;
    let qmix_cells = pooled_outcomes(qmix, code, hw, None, cfg)?;
    let pretrained_success = match pretrained {
        Some(p) => Some(SuccessRates::from_cells(&pooled_outcomes(p, code, hw, None, cfg)?)),
        None => None,
    };
    let all: Vec<Outcome> = cells.iter().flatten().copied().collect();
    let lambdas: Vec<f64> = all.iter().map(|o| o.lambda).collect();
    let complexities: Vec<f64> = all.iter().map(|o| o.complexity).collect();
    let max_w = all.iter().map(|o| o.syndrome_weight).max().unwrap_or(0);
    let mut sums = vec![(0usize, 0.0f64); max_w + 1];
    for o in &all {
        sums[o.syndrome_weight].0 += 1;
        sums[o.syndrome_weight].1 += o.lambda;
    }
    let lambda_by_syndrome_weight = sums
        .into_iter()
        .enumerate()
        .filter(|(_, (c, _))| *c > 0)
        .map(|(w, (c, s))| WeightBucket {
            syndrome_weight: w,
            count: c,
            mean_lambda: s / c as f64,
        })
        .collect();
    Ok(Stage1Report {
        rates: STAGE1_RATES.to_vec(),
        n_eval_per_rate: cfg.n_eval,
        success: SuccessRates::from_cells(&cells),
        qmix_success: SuccessRates::from_cells(&qmix_cells),
        pretrained_success,
        histogram: lambda_histogram(&lambdas),
        fractions: SynergyFractions::from_lambdas(&lambdas),
        r_squared: r_squared(&lambdas, &complexities),
        lambda_by_syndrome_weight,
        reference: STAGE1_REFERENCE,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformSweep {
    pub platform: Platform,
    pub severity: f64,
    /// Success with no latency budget.
    pub unbounded: f64,
    /// One entry per budget, in sweep order.
    pub sweep: Vec<f64>,
    pub monotone: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage2Reference {
    pub ideal: f64,
    pub distributed: f64,
    pub floor: f64,
    pub robustness: f64,
}

pub const STAGE2_REFERENCE: Stage2Reference = Stage2Reference {
    ideal: 0.985,
    distributed: 0.876,
    floor: 0.65,
    robustness: 0.769,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Report {
    pub budgets_ms: Vec<f64>,
    pub n_eval_per_rate: usize,
    pub platforms: Vec<PlatformSweep>,
    /// Σ severity · mean sweep success / Σ severity.
    pub robustness: f64,
    pub reference: Stage2Reference,
}

/// True when no step down the sweep gains more than `slack`.
pub fn is_monotone_non_increasing(values: &[f64], slack: f64) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] + slack)
}

pub fn robustness(platforms: &[PlatformSweep]) -> f64 {
    let total: f64 = platforms.iter().map(|p| p.severity).sum();
    if total <= 0.0 {
        return 0.0;
    }
    platforms
        .iter()
        .map(|p| p.severity * if p.sweep.is_empty() { p.unbounded } else { mean(&p.sweep) })
        .sum::<f64>()
        / total
}

/// Success per platform and latency budget with deadline adaptation active.
pub fn run_stage2(
    policy: &DecoderPolicy,
    code: &CodeInstance,
    platforms: &[HardwareConfig],
    budgets_ms: &[f64],
    cfg: &EvalConfig,
) -> Result<Stage2Report> {
    policy.check_code(code)?;
    if budgets_ms.iter().any(|b| b.is_nan() || *b <= 0.0) || budgets_ms.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Precondition("latency budgets must be positive and strictly descending".into()));
    }
    let mut sweeps = Vec::with_capacity(platforms.len());
    for hw in platforms {
        hw.validate()?;
        let pooled = |budget: Option<f64>| -> Result<f64> {
            Ok(SuccessRates::from_cells(&pooled_outcomes(policy, code, *hw, budget, cfg)?).pooled)
        };
        let unbounded = pooled(None)?;
        let sweep = budgets_ms.iter().map(|&b| pooled(Some(b))).collect::<Result<Vec<_>>>()?;
        sweeps.push(PlatformSweep {
            platform: hw.name,
            severity: hw.severity,
            unbounded,
            monotone: is_monotone_non_increasing(&sweep, MONOTONE_SLACK),
            sweep,
        });
    }
    Ok(Stage2Report {
        budgets_ms: budgets_ms.to_vec(),
        n_eval_per_rate: cfg.n_eval,
        robustness: robustness(&sweeps),
        platforms: sweeps,
        reference: STAGE2_REFERENCE,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub distance: usize,
    pub zero_shot: f64,
    /// Always-halt baseline on the same errors.
    pub identity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage3Report {
    pub rows: Vec<ScalingRow>,
    pub mean_speedup: f64,
    pub source_distance: Option<usize>,
    pub transfer_p: f64,
    pub n_eval: usize,
    pub transfer: Vec<TransferResult>,
}

/// Analytic scaling table plus zero-shot transfer of a checkpoint to
/// larger ToyCSS distances.
pub fn run_stage3(source: &DecoderPolicy, source_distance: Option<usize>, distances: &[usize], cfg: &EvalConfig) -> Result<Stage3Report> {
    let rows = pipeline::speedup_table(&TABLE1_DISTANCES)?;
    let ep_cfg = episode_config(TRANSFER_P, HardwareConfig::ideal(), None, cfg);
    let mut transfer = Vec::with_capacity(distances.len());
    for &d in distances {
        let code = build_toy_css(d)?;
        let policy = source.transfer_init(&code, cfg.seed)?;
        let cell = TRANSFER_CELL + d as u64;
        let zero_shot = success_rate(&run_cell(&policy, &code, &ep_cfg, cell, cfg)?);
        let identity = success_rate(&run_cell(&IdentityPolicy, &code, &ep_cfg, cell, cfg)?);
        transfer.push(TransferResult {
            distance: d,
            zero_shot,
            identity,
        });
    }
    Ok(Stage3Report {
        mean_speedup: pipeline::mean_speedup(&rows),
        rows,
        source_distance,
        transfer_p: TRANSFER_P,
        n_eval: cfg.n_eval,
        transfer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value >= threshold,
        }
    }

    fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value > threshold,
        }
    }

    fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: f64::from(u8::from(ok)),
            threshold: 1.0,
            pass: ok,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageReport {
    Stage1(Stage1Report),
    Stage2(Stage2Report),
    Stage3(Stage3Report),
}

impl StageReport {
    pub fn name(&self) -> &'static str {
        match self {
            StageReport::Stage1(_) => "stage1",
            StageReport::Stage2(_) => "stage2",
            StageReport::Stage3(_) => "stage3",
        }
    }

    pub fn checks(&self) -> Vec<Check> {
        match self {
            StageReport::Stage1(r) => stage1_checks(r),
            StageReport::Stage2(r) => stage2_checks(r),
            StageReport::Stage3(r) => stage3_checks(r),
        }
    }

    pub fn csv(&self) -> String {
        match self {
            StageReport::Stage1(r) => stage1_csv(r),
            StageReport::Stage2(r) => stage2_csv(r),
            StageReport::Stage3(r) => pipeline::table_csv(&r.rows),
        }
    }

    pub fn json(&self) -> Result<String> {
        let s = match self {
            StageReport::Stage1(r) => serde_json::to_string_pretty(r)?,
            StageReport::Stage2(r) => serde_json::to_string_pretty(r)?,
            StageReport::Stage3(r) => serde_json::to_string_pretty(r)?,
        };
        Ok(s + "\n")
    }
}

fn stage1_checks(r: &Stage1Report) -> Vec<Check> {
    let s = r.success.headline();
    let mut out = vec![Check::at_least("success_at_1pct", s, MIN_SUCCESS)];
    if let Some(pre) = &r.pretrained_success {
        out.push(Check::at_least("success_minus_pretrained_at_1pct", s - pre.headline(), 0.0));
    }
    out.push(Check::at_least(
        "success_minus_qmix_at_1pct",
        s - r.qmix_success.headline(),
        -QMIX_TOLERANCE,
    ));
    out.push(Check::above("r_squared", r.r_squared, MIN_R_SQUARED));
    out.push(Check::flag("synergy_buckets_nonempty", r.fractions.all_nonempty()));
    out
}

fn stage2_checks(r: &Stage2Report) -> Vec<Check> {
    let mut out = Vec::new();
    for p in &r.platforms {
        out.push(Check::flag(format!("{}_monotone", p.platform.as_str()), p.monotone));
        if let Some(&floor) = p.sweep.last() {
            out.push(Check::at_least(format!("{}_floor_success", p.platform.as_str()), floor, MIN_FLOOR_SUCCESS));
        }
    }
    out
}

/// Cells of `rows` that differ from the published table.
pub fn table1_mismatches(rows: &[ScalingRow]) -> Vec<String> {
    let mut out = Vec::new();
    for expected in &TABLE1_REFERENCE {
        let Some(row) = rows.iter().find(|r| r.d.to_string() == expected[0]) else {
            out.push(format!("d={} missing", expected[0]));
            continue;
        };
        let got = row.formatted();
        let names = pipeline::TABLE1_HEADER.split(',');
        for ((name, g), e) in names.zip(&got).zip(expected) {
            if g != e {
                out.push(format!("d={} {name}: got {g}, expected {e}", expected[0]));
            }
        }
    }
    if rows.len() == TABLE1_REFERENCE.len() {
        let m = format!("{:.2}", pipeline::mean_speedup(rows));
        if m != TABLE1_REFERENCE_MEAN_SPEEDUP {
            out.push(format!("mean speedup: got {m}, expected {TABLE1_REFERENCE_MEAN_SPEEDUP}"));
        }
    }
    out
}

fn stage3_checks(r: &Stage3Report) -> Vec<Check> {
    let mismatches = table1_mismatches(&r.rows);
    let mut out = vec![Check {
        name: "table1_cells_matching".into(),
        value: (TABLE1_REFERENCE.len() * 7 + 1 - mismatches.len()) as f64,
        threshold: (TABLE1_REFERENCE.len() * 7 + 1) as f64,
        pass: mismatches.is_empty(),
    }];
    for t in &r.transfer {
        out.push(Check::above(
            format!("transfer_d{}_minus_identity", t.distance),
            t.zero_shot - t.identity,
            0.0,
        ));
    }
    out
}

fn stage1_csv(r: &Stage1Report) -> String {
    let mut out = String::from("p,success,qmix_success,pretrained_success\n");
    let pre = |k: Option<usize>| -> String {
        r.pretrained_success
            .as_ref()
            .map(|s| k.map_or(s.pooled, |k| s.by_rate[k]).to_string())
            .unwrap_or_default()
    };
    for (k, p) in r.rates.iter().enumerate() {
        writeln!(out, "{p},{},{},{}", r.success.by_rate[k], r.qmix_success.by_rate[k], pre(Some(k))).unwrap();
    }
    writeln!(out, "pooled,{},{},{}", r.success.pooled, r.qmix_success.pooled, pre(None)).unwrap();
    out
}

fn stage2_csv(r: &Stage2Report) -> String {
    let mut out = String::from("platform,severity,budget_ms,success\n");
    for p in &r.platforms {
        let name = p.platform.as_str();
        writeln!(out, "{name},{},inf,{}", p.severity, p.unbounded).unwrap();
        for (b, s) in r.budgets_ms.iter().zip(&p.sweep) {
            writeln!(out, "{name},{},{b},{s}", p.severity).unwrap();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub pass: bool,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub pass: bool,
    pub stages: Vec<StageSummary>,
}

impl Summary {
    pub fn from_reports(reports: &[StageReport]) -> Self {
        let stages: Vec<StageSummary> = reports
            .iter()
            .map(|r| {
                let checks = r.checks();
                StageSummary {
                    stage: r.name().into(),
                    pass: checks.iter().all(|c| c.pass),
                    checks,
                }
            })
            .collect();
        Self {
            pass: stages.iter().all(|s| s.pass),
            stages,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Write `<stage>.csv` and `<stage>.json` per report and `summary.json`.
pub fn emit_reports(reports: &[StageReport], out_dir: &Path) -> Result<Summary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for r in reports {
        write_file(&out_dir.join(format!("{}.csv", r.name())), &r.csv())?;
        write_file(&out_dir.join(format!("{}.json", r.name())), &r.json()?)?;
    }
    let summary = Summary::from_reports(reports);
    write_file(&out_dir.join("summary.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    Ok(summary)
}
