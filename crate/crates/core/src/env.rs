//! The decoding MDP: agents flip correction bits until both halt, the
//! syndrome clears, or the step cap binds. Reward follows the weighted sum
//! of decode outcome, channel fidelity, energy cost and a step penalty.

use crate::code::{CheckType, CodeInstance, PauliError, Syndrome};
use crate::decoders::MlOracle;
use crate::error::{Error, Result};
use crate::hardware::{self, ChannelSetting, HardwareConfig, HardwareFeedback};
use crate::pipeline;
use crate::policy::{Action, DecoderPolicy};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub c_energy: f64,
    pub step_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.2,
            gamma: 0.1,
            c_energy: 0.5,
            step_penalty: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_decode: f64,
    pub f_trans: f64,
    pub e_cost: f64,
    /// `step_penalty · steps`.
    pub step_cost: f64,
    pub steps: usize,
    pub total: f64,
}

/// Terminal reward `α·r_decode + β·F − γ·λ²·c_energy − step_penalty·steps`.
pub fn reward(success: bool, lambda: f64, feedback: &HardwareFeedback, steps: usize, cfg: &RewardConfig) -> RewardBreakdown {
    let r_decode = if success { 1.0 } else { -1.0 };
    let e_cost = lambda * lambda * cfg.c_energy;
    let step_cost = cfg.step_penalty * steps as f64;
    let total = cfg.alpha * r_decode + cfg.beta * feedback.f_trans - cfg.gamma * e_cost - step_cost;
    RewardBreakdown {
        r_decode,
        f_trans: feedback.f_trans,
        e_cost,
        step_cost,
        steps,
        total,
    }
}

/// `0.5·|s|/checks + 0.5·(Y count)/n`.
pub fn complexity(code: &CodeInstance, s: &Syndrome, error: &PauliError) -> f64 {
    0.5 * s.weight() as f64 / code.num_checks() as f64 + 0.5 * error.y_count() as f64 / code.n as f64
}

/// Default step cap `2n`.
pub fn default_step_cap(code: &CodeInstance) -> usize {
    2 * code.n
}

#[derive(Debug, Clone)]
pub struct EpisodeState<'a> {
    code: &'a CodeInstance,
    error: PauliError,
    correction: PauliError,
    syndrome: Syndrome,
    steps: usize,
    step_cap: usize,
    terminal: bool,
}

impl<'a> EpisodeState<'a> {
    pub fn new(code: &'a CodeInstance, error: PauliError, step_cap: usize) -> Self {
        let syndrome = code.syndrome_of(&error);
        Self {
            code,
            correction: PauliError::identity(code.n),
            error,
            syndrome,
            steps: 0,
            step_cap: step_cap.max(1),
            terminal: false,
        }
    }

    pub fn syndrome(&self) -> &Syndrome {
        &self.syndrome
    }

    pub fn correction(&self) -> &PauliError {
        &self.correction
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_cap(&self) -> usize {
        self.step_cap
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn residual(&self) -> PauliError {
        self.error.compose(&self.correction)
    }

    /// Syndrome cleared and no logical operator flipped.
    pub fn success(&self) -> bool {
        self.syndrome.is_zero() && !self.code.is_logical_failure(&self.residual()).expect("zero syndrome")
    }

    fn check_action(&self, a: Action) -> Result<()> {
        match a {
            Action::Flip(q) if q >= self.code.n => {
                Err(Error::Usage(format!("action flips qubit {q} of a {}-qubit code", self.code.n)))
            }
            _ => Ok(()),
        }
    }

    /// Apply one joint action; returns whether the episode is now terminal.
    pub fn step(&mut self, ax: Action, az: Action) -> Result<bool> {
        if self.terminal {
            return Err(Error::Precondition("step on a terminal episode".into()));
        }
        self.check_action(ax)?;
        self.check_action(az)?;
        self.steps += 1;
        if ax.is_halt() && az.is_halt() {
            self.terminal = true;
            return Ok(true);
        }
        // A Z flip toggles the X-checks on that qubit and vice versa.
        if let Action::Flip(q) = ax {
            self.correction.z.flip(q);
            for &c in self.code.checks_of_qubit(CheckType::X, q) {
                self.syndrome.sx.flip(c);
            }
        }
        if let Action::Flip(q) = az {
            self.correction.x.flip(q);
            for &c in self.code.checks_of_qubit(CheckType::Z, q) {
                self.syndrome.sz.flip(c);
            }
        }
        debug_assert_eq!(self.syndrome, self.code.syndrome_of(&self.residual()));
        self.terminal = self.syndrome.is_zero() || self.steps >= self.step_cap;
        Ok(self.terminal)
    }
}

/// Anything that can drive an episode.
pub trait Policy: Sync {
    fn synergy(&self, code: &CodeInstance, s: &Syndrome) -> Result<f64>;
    fn act(&self, code: &CodeInstance, s: &Syndrome, gate: bool, eps: f64, rng: &mut Rng) -> Result<(Action, Action)>;
}

impl Policy for DecoderPolicy {
    fn synergy(&self, _code: &CodeInstance, s: &Syndrome) -> Result<f64> {
        self.synergy_score(s)
    }

    fn act(&self, code: &CodeInstance, s: &Syndrome, gate: bool, eps: f64, rng: &mut Rng) -> Result<(Action, Action)> {
        self.select_actions(code, s, gate, eps, rng)
    }
}

/// Replays the oracle's minimum-weight correction one flip per agent per
/// step, lowest qubit first. Serves as an upper-bound harness.
pub struct OraclePolicy {
    oracle: MlOracle,
    lambda: f64,
}

impl OraclePolicy {
    pub fn new(code: &CodeInstance, w_max: usize, lambda: f64) -> Result<Self> {
        Ok(Self {
            oracle: MlOracle::new(code, w_max)?,
            lambda,
        })
    }
}

impl Policy for OraclePolicy {
    fn synergy(&self, _code: &CodeInstance, _s: &Syndrome) -> Result<f64> {
        Ok(self.lambda)
    }

    fn act(&self, _code: &CodeInstance, s: &Syndrome, _gate: bool, _eps: f64, _rng: &mut Rng) -> Result<(Action, Action)> {
        let Some(c) = self.oracle.decode(s) else {
            return Ok((Action::Halt, Action::Halt));
        };
        let first = |v: &crate::gf2::BitVector| v.ones().next().map_or(Action::Halt, Action::Flip);
        Ok((first(&c.z), first(&c.x)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub p: f64,
    pub hardware: HardwareConfig,
    pub eps: f64,
    pub reward: RewardConfig,
    /// Latency budget; `None` disables deadline adaptation.
    pub budget_ms: Option<f64>,
}

impl EpisodeConfig {
    pub fn new(p: f64, hardware: HardwareConfig) -> Self {
        Self {
            p,
            hardware,
            eps: 0.0,
            reward: RewardConfig::default(),
            budget_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Syndrome,
    pub gate: bool,
    pub ax: usize,
    pub az: usize,
    pub reward: f64,
    pub next: Syndrome,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub initial_syndrome: Syndrome,
    /// Synergy score of the initial syndrome.
    pub lambda: f64,
    /// Intensity after deadline adaptation.
    pub lambda_used: f64,
    pub gated: bool,
    pub actions: Vec<(Action, Action)>,
    pub reward: RewardBreakdown,
    pub success: bool,
    pub feedback: HardwareFeedback,
    pub latency_ms: f64,
    pub latency_budget_ms: Option<f64>,
    pub step_cap: usize,
    pub complexity: f64,
    pub error_weight: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub record: EpisodeRecord,
    pub transitions: Vec<Transition>,
}

/// Sample an error, fix λ from the initial syndrome, set the channel, and
/// roll the MDP to a terminal state. Randomness is drawn in a fixed order:
/// error, latency, then actions.
pub fn run_episode(policy: &dyn Policy, code: &CodeInstance, cfg: &EpisodeConfig, rng: &mut Rng) -> Result<Episode> {
    let error = code.sample_error(cfg.p, rng);
    run_episode_from(policy, code, error, cfg, rng)
}

pub fn run_episode_from(
    policy: &dyn Policy,
    code: &CodeInstance,
    error: PauliError,
    cfg: &EpisodeConfig,
    rng: &mut Rng,
) -> Result<Episode> {
    let s0 = code.syndrome_of(&error);
    let lambda = policy.synergy(code, &s0)?;
    let latency_ms = hardware::sample_latency(&cfg.hardware, rng);
    let (lambda_used, scale) = match cfg.budget_ms {
        Some(budget) => {
            let predicted = pipeline::latency_dist(code.nominal_syndrome_dim).total_ms + latency_ms;
            let adj = hardware::deadline_adapt(lambda, predicted, budget)?;
            (adj.lambda, adj.step_cap_scale)
        }
        None => (lambda, 1.0),
    };
    let setting = ChannelSetting {
        intensity: lambda_used.clamp(0.0, 1.0),
        gated: hardware::is_gated(lambda_used),
        latency_ms,
    };
    let step_cap = ((default_step_cap(code) as f64 * scale).floor() as usize).max(1);
    let mut state = EpisodeState::new(code, error.clone(), step_cap);
    let mut actions = Vec::new();
    let mut transitions = Vec::new();
    loop {
        let before = state.syndrome().clone();
        let (ax, az) = policy.act(code, &before, setting.gated, cfg.eps, rng)?;
        let done = state.step(ax, az)?;
        actions.push((ax, az));
        transitions.push(Transition {
            state: before,
            gate: setting.gated,
            ax: ax.index(code.n),
            az: az.index(code.n),
            reward: 0.0,
            next: state.syndrome().clone(),
            terminal: done,
        });
        if done {
            break;
        }
    }
    let success = state.success();
    let feedback = hardware::hardware_feedback(&setting);
    let breakdown = reward(success, setting.intensity, &feedback, state.steps(), &cfg.reward);
    transitions.last_mut().expect("at least one step").reward = breakdown.total;
    let record = EpisodeRecord {
        complexity: complexity(code, &s0, &error),
        error_weight: error.weight(),
        initial_syndrome: s0,
        lambda,
        lambda_used: setting.intensity,
        gated: setting.gated,
        actions,
        reward: breakdown,
        success,
        feedback,
        latency_ms,
        latency_budget_ms: cfg.budget_ms,
        step_cap,
    };
    Ok(Episode { record, transitions })
}

pub fn write_records_jsonl<W: Write>(records: &[EpisodeRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<episode log>", e))?;
    }
    Ok(())
}

pub fn read_records_jsonl<R: BufRead>(reader: R) -> Result<Vec<EpisodeRecord>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("<episode log>", e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
