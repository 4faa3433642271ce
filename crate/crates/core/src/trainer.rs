//! Two-phase training: imitation pretraining on reference corrections, then
//! TD learning on the mixed joint value with a synergy regularizer, target
//! network, replay and hardware-randomised rollouts.
//!
//! Gradients for a batch are accumulated in a fixed number of chunks and
//! summed in chunk order, so parallel and sequential runs produce the same
//! bits.

use crate::code::{CodeFamily, CodeInstance, PauliError, Syndrome};
use crate::decoders::{self, LabelSource, PretrainDataset};
use crate::env::{self, EpisodeConfig, RewardConfig, Transition};
use crate::error::{Error, Result};
use crate::hardware::{hardware_feedback, is_gated, ChannelSetting, HardwareConfig};
use crate::nn::{adam_step, check_gradient, AdamConfig, AdamState, CheckpointMeta, GradCheck};
use crate::par::{self, Execution};
use crate::policy::{argmax, Action, AgentInput, global_state, mix_formula, AgentGrads, AgentKind, DecoderPolicy, MixerGrads, PolicyGrads, Widths};
use crate::rng;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Gradient accumulation chunks per batch; fixed so results do not depend
/// on the thread count.
const GRAD_CHUNKS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub samples: usize,
    /// Error rate used to sample labelled syndromes.
    pub p: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Q-value gap by which label actions must lead every other action.
    pub margin: f64,
    /// Weight of the return-anchoring term.
    pub value_weight: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            samples: 20_000,
            p: 0.03,
            epochs: 6,
            batch_size: 96,
            learning_rate: 8e-4,
            margin: 0.1,
            value_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub code: CodeFamily,
    pub seed: u64,
    pub p: f64,
    pub widths: Widths,
    pub batch_size: usize,
    pub lr_agents: f64,
    pub lr_synergy: f64,
    pub reg_weight: f64,
    pub gamma_rl: f64,
    pub target_sync: usize,
    pub replay_capacity: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub episodes_per_epoch: usize,
    pub fine_tune_episodes: usize,
    pub updates_per_epoch: usize,
    pub validation_episodes: usize,
    pub validate_every: usize,
    /// Validation differences up to this size count as ties, which go to the
    /// later epoch.
    pub selection_tolerance: f64,
    /// Keep a snapshot of the online policy every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Weight of the imitation step on demonstrations that follows each TD
    /// update during fine-tuning; 0 disables it.
    pub demo_weight: f64,
    pub pretrain: PretrainConfig,
    pub reward: RewardConfig,
    pub hardware: HardwareConfig,
    /// Pin λ to a constant (the always-mix ablation uses 1).
    pub lambda_pin: Option<f64>,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            code: CodeFamily::ToyCss { d: 3 },
            seed: 0,
            p: 0.01,
            widths: Widths::default(),
            batch_size: 96,
            lr_agents: 8e-4,
            lr_synergy: 1.5e-3,
            reg_weight: 0.02,
            gamma_rl: 0.95,
            target_sync: 200,
            replay_capacity: 50_000,
            eps_start: 0.3,
            eps_end: 0.02,
            episodes_per_epoch: 32,
            fine_tune_episodes: 3000,
            updates_per_epoch: 8,
            validation_episodes: 2000,
            validate_every: 2,
            selection_tolerance: 1e-4,
            checkpoint_every: 25,
            demo_weight: 1.0,
            pretrain: PretrainConfig::default(),
            reward: RewardConfig::default(),
            hardware: HardwareConfig::randomized(),
            lambda_pin: None,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    /// The always-mix ablation under the same budget and seeds.
    pub fn qmix_ablation(&self) -> Self {
        Self {
            lambda_pin: Some(1.0),
            reg_weight: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("lr_agents", self.lr_agents),
            ("lr_synergy", self.lr_synergy),
            ("target_sync", self.target_sync as f64),
            ("replay_capacity", self.replay_capacity as f64),
            ("episodes_per_epoch", self.episodes_per_epoch as f64),
            ("validate_every", self.validate_every as f64),
            ("pretrain.batch_size", self.pretrain.batch_size as f64),
            ("pretrain.learning_rate", self.pretrain.learning_rate),
            ("pretrain.margin", self.pretrain.margin),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let unit = [
            ("p", self.p),
            ("pretrain.p", self.pretrain.p),
            ("eps_start", self.eps_start),
            ("eps_end", self.eps_end),
            ("gamma_rl", self.gamma_rl),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.selection_tolerance.is_nan() || self.selection_tolerance < 0.0 {
            return Err(Error::Config("selection_tolerance must be nonnegative".into()));
        }
        if self.reg_weight < 0.0 || self.pretrain.value_weight < 0.0 || self.demo_weight < 0.0 {
            return Err(Error::Config("reg_weight, demo_weight and pretrain.value_weight must be nonnegative".into()));
        }
        if let Some(l) = self.lambda_pin {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::Config("lambda_pin must lie in [0, 1]".into()));
            }
        }
        self.hardware.validate()
    }

    pub fn epochs(&self) -> usize {
        self.fine_tune_episodes.div_ceil(self.episodes_per_epoch)
    }

    /// Linear ε from `eps_start` at the first epoch to `eps_end` at the last.
    pub fn epsilon(&self, epoch: usize) -> f64 {
        let last = self.epochs().saturating_sub(1);
        if last == 0 {
            return self.eps_start;
        }
        let t = epoch.min(last) as f64 / last as f64;
        self.eps_start + (self.eps_end - self.eps_start) * t
    }
}

/// Regularizer scale: the largest syndrome any single-qubit Pauli produces.
pub fn synergy_reference_weight(code: &CodeInstance) -> usize {
    let mut best = 1;
    for q in 0..code.n {
        let mut e = PauliError::identity(code.n);
        e.x.set(q, true);
        e.z.set(q, true);
        best = best.max(code.syndrome_of(&e).weight());
    }
    best
}

/// Regularizer target for λ: syndrome weight relative to the single-qubit
/// maximum, saturating at 1.
pub fn synergy_target(s: &Syndrome, reference: usize) -> f64 {
    (s.weight() as f64 / reference as f64).min(1.0)
}

impl AgentGrads {
    fn add_assign(&mut self, o: &AgentGrads) {
        self.local_embed.add_assign(&o.local_embed);
        self.remote_embed.add_assign(&o.remote_embed);
        self.trunk.add_assign(&o.trunk);
        self.readout.add_assign(&o.readout);
    }
}

impl MixerGrads {
    fn add_assign(&mut self, o: &MixerGrads) {
        self.hyper_w1.add_assign(&o.hyper_w1);
        self.hyper_b1.add_assign(&o.hyper_b1);
        self.hyper_w2.add_assign(&o.hyper_w2);
        self.hyper_b2.add_assign(&o.hyper_b2);
    }
}

impl PolicyGrads {
    pub fn add_assign(&mut self, o: &PolicyGrads) {
        self.synergy.add_assign(&o.synergy);
        self.x_agent.add_assign(&o.x_agent);
        self.z_agent.add_assign(&o.z_agent);
        self.mixer.add_assign(&o.mixer);
    }
}

fn chunk_ranges(n: usize) -> Vec<std::ops::Range<usize>> {
    let per = n.div_ceil(GRAD_CHUNKS).max(1);
    (0..n).step_by(per).map(|a| a..(a + per).min(n)).collect()
}

/// Sum per-chunk gradient contributions in chunk order.
fn reduce_chunks<F>(policy: &DecoderPolicy, n: usize, exec: Execution, f: F) -> Result<(PolicyGrads, Vec<f64>)>
where
    F: Fn(std::ops::Range<usize>, &mut PolicyGrads) -> Result<Vec<f64>> + Sync + Send,
{
    let ranges = chunk_ranges(n);
    let parts = par::map_slice(exec, &ranges, |r| {
        let mut g = policy.zero_grads();
        f(r.clone(), &mut g).map(|stats| (g, stats))
    });
    let mut total = policy.zero_grads();
    let mut stats: Vec<f64> = Vec::new();
    for part in parts {
        let (g, s) = part?;
        total.add_assign(&g);
        if stats.is_empty() {
            stats = s;
        } else {
            for (a, b) in stats.iter_mut().zip(s) {
                *a += b;
            }
        }
    }
    Ok((total, stats))
}

/// One imitation example: a state, each agent's next label action and the
/// discounted return of the labelled episode from this step.
#[derive(Debug, Clone, PartialEq)]
pub struct ImitationExample {
    pub syndrome: Syndrome,
    pub gate: bool,
    pub target_x: usize,
    pub target_z: usize,
    pub value: f64,
}

/// Split a labelled correction into per-step flips, lowest qubit first,
/// until the syndrome clears. Values are left at zero.
pub fn decompose_label(code: &CodeInstance, s: &Syndrome, target: &PauliError, gate: bool) -> Result<Vec<ImitationExample>> {
    if target.len() != code.n {
        return Err(Error::shape("label length", code.n, target.len()));
    }
    if code.syndrome_of(target) != *s {
        return Err(Error::Precondition("label does not reproduce its syndrome".into()));
    }
    let z_flips: Vec<usize> = target.z.ones().collect();
    let x_flips: Vec<usize> = target.x.ones().collect();
    let n = code.n;
    let mut state = env::EpisodeState::new(code, target.clone(), usize::MAX);
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let ax = z_flips.get(k).copied().unwrap_or(n);
        let az = x_flips.get(k).copied().unwrap_or(n);
        out.push(ImitationExample {
            syndrome: state.syndrome().clone(),
            gate,
            target_x: ax,
            target_z: az,
            value: 0.0,
        });
        let done = state.step(Action::from_index(ax, n), Action::from_index(az, n))?;
        if done {
            break;
        }
        k += 1;
    }
    Ok(out)
}

/// Return model used to put pretrained Q-values on the reward scale: a
/// successful episode at the policy's own λ and the mean channel latency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueAnchor {
    pub reward: RewardConfig,
    pub latency_ms: f64,
    pub gamma_rl: f64,
}

impl ValueAnchor {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            reward: cfg.reward,
            latency_ms: cfg.hardware.mean_latency_ms(),
            gamma_rl: cfg.gamma_rl,
        }
    }

    /// Discounted return at step `j` of a successful `m`-step episode.
    pub fn value(&self, lambda: f64, m: usize, j: usize) -> f64 {
        let setting = ChannelSetting {
            intensity: lambda,
            gated: is_gated(lambda),
            latency_ms: self.latency_ms,
        };
        let r = env::reward(true, lambda, &hardware_feedback(&setting), m, &self.reward).total;
        self.gamma_rl.powi((m - 1 - j) as i32) * r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainMetrics {
    pub examples: usize,
    pub epoch_loss: Vec<f64>,
    /// Fraction of per-agent label actions matched by the greedy choice.
    pub imitation_accuracy: f64,
}

/// Large-margin imitation loss `max_a [q(a) + m·[a ≠ label]] − q(label)`
/// and its (sub)gradient. Zero once the label leads every other action by `m`.
fn margin_loss_grad(q: &[f64], label: usize, margin: f64) -> (f64, Vec<f64>) {
    let mut best = label;
    let mut best_v = q[label];
    for (a, &v) in q.iter().enumerate() {
        let v = if a == label { v } else { v + margin };
        if v > best_v {
            best = a;
            best_v = v;
        }
    }
    let mut g = vec![0.0; q.len()];
    if best != label {
        g[best] += 1.0;
        g[label] -= 1.0;
    }
    (best_v - q[label], g)
}

/// Per-example pretraining loss, accumulating scaled gradients into `grads`.
/// Both value branches, `qx + qz` and the mixer `f`, are pulled toward the
/// labelled return, so that λ interpolates between calibrated estimates.
fn imitation_loss(
    policy: &DecoderPolicy,
    e: &ImitationExample,
    inputs: &(AgentInput, AgentInput),
    cfg: &PretrainConfig,
    scale: f64,
    grads: Option<&mut PolicyGrads>,
) -> Result<f64> {
    let tx = policy.x_agent.forward_trace(&inputs.0)?;
    let tz = policy.z_agent.forward_trace(&inputs.1)?;
    let (lx, mut dx) = margin_loss_grad(tx.q(), e.target_x, cfg.margin);
    let (lz, mut dz) = margin_loss_grad(tz.q(), e.target_z, cfg.margin);
    let (qx, qz) = (tx.q()[e.target_x], tz.q()[e.target_z]);
    let mt = policy.mixer.forward_trace(&global_state(&e.syndrome), qx, qz)?;
    let d_sum = qx + qz - e.value;
    let d_mix = mt.value() - e.value;
    let w = cfg.value_weight;
    let loss = lx + lz + w * (d_sum * d_sum + d_mix * d_mix);
    if let Some(g) = grads {
        let (mx, mz) = policy.mixer.backward(&mt, scale * w * 2.0 * d_mix, &mut g.mixer)?;
        dx.iter_mut().for_each(|v| *v *= scale);
        dz.iter_mut().for_each(|v| *v *= scale);
        dx[e.target_x] += scale * w * 2.0 * d_sum + mx;
        dz[e.target_z] += scale * w * 2.0 * d_sum + mz;
        policy.x_agent.backward(&inputs.0, &tx, &dx, &mut g.x_agent)?;
        policy.z_agent.backward(&inputs.1, &tz, &dz, &mut g.z_agent)?;
    }
    Ok(loss)
}

/// Decomposed demonstrations with their agent inputs, built once.
#[derive(Debug, Clone)]
pub struct DemoSet {
    pub examples: Vec<ImitationExample>,
    inputs: Vec<(AgentInput, AgentInput)>,
}

impl DemoSet {
    /// Decompose every record, drawing a 50/50 gate per record and valuing
    /// each step with the policy's current λ for the record's syndrome.
    pub fn build(
        policy: &DecoderPolicy,
        code: &CodeInstance,
        dataset: &PretrainDataset,
        anchor: &ValueAnchor,
        seed: u64,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Precondition("pretraining dataset is empty".into()));
        }
        policy.check_code(code)?;
        if dataset.code_n != code.n {
            return Err(Error::shape("dataset code length", code.n, dataset.code_n));
        }
        let mut gate_rng = rng::stream(seed, rng::domain::GATE, 0);
        let mut examples = Vec::new();
        for rec in &dataset.records {
            let gate = gate_rng.random::<bool>();
            let mut steps = decompose_label(code, &rec.syndrome, &rec.target, gate)?;
            let lambda = policy.synergy_score(&rec.syndrome)?;
            let m = steps.len();
            for (j, e) in steps.iter_mut().enumerate() {
                e.value = anchor.value(lambda, m, j);
            }
            examples.extend(steps);
        }
        let inputs = examples
            .iter()
            .map(|e| {
                (
                    policy.agent_input(code, AgentKind::X, &e.syndrome, e.gate),
                    policy.agent_input(code, AgentKind::Z, &e.syndrome, e.gate),
                )
            })
            .collect();
        Ok(Self { examples, inputs })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// One Adam step on the mean imitation loss over `batch`, scaled by
    /// `weight`. Returns the summed unscaled loss.
    pub fn step(
        &self,
        policy: &mut DecoderPolicy,
        batch: &[usize],
        cfg: &PretrainConfig,
        weight: f64,
        adam: &mut AdamState,
        exec: Execution,
    ) -> Result<f64> {
        let scale = weight / batch.len() as f64;
        let snapshot = &*policy;
        let (grads, stats) = reduce_chunks(snapshot, batch.len(), exec, |range, g| {
            let mut loss = 0.0;
            for &i in &batch[range] {
                loss += imitation_loss(snapshot, &self.examples[i], &self.inputs[i], cfg, scale, Some(&mut *g))?;
            }
            Ok(vec![loss])
        })?;
        let mut params = policy.agents_mixer_params();
        adam_step(&mut params, &grads.agents_mixer(), adam)?;
        policy.load_agents_mixer_params(&params)?;
        Ok(stats[0])
    }

    /// Fraction of per-agent label actions matched by the greedy choice.
    pub fn accuracy(&self, policy: &DecoderPolicy, exec: Execution) -> f64 {
        let hits = par::map_indexed(exec, self.len(), |i| {
            let e = &self.examples[i];
            let qx = policy.x_agent.q_values(&self.inputs[i].0).expect("shape");
            let qz = policy.z_agent.q_values(&self.inputs[i].1).expect("shape");
            usize::from(argmax(&qx) == e.target_x) + usize::from(argmax(&qz) == e.target_z)
        });
        hits.iter().sum::<usize>() as f64 / (2 * self.len()) as f64
    }
}

/// Imitation of label actions: a large-margin loss per agent plus squared
/// pulls of both value branches toward the labelled episode's return. The
/// synergy net is not touched.
pub fn pretrain(
    policy: &mut DecoderPolicy,
    code: &CodeInstance,
    dataset: &PretrainDataset,
    cfg: &PretrainConfig,
    anchor: &ValueAnchor,
    seed: u64,
    exec: Execution,
) -> Result<(PretrainMetrics, DemoSet)> {
    let demos = DemoSet::build(policy, code, dataset, anchor, seed)?;
    let mut adam = AdamState::new(policy.agents_mixer_params().len(), AdamConfig::with_lr(cfg.learning_rate));
    let mut order: Vec<usize> = (0..demos.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut shuffle = rng::stream(seed, rng::domain::PRETRAIN_SHUFFLE, epoch as u64);
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            total += demos.step(policy, batch, cfg, 1.0, &mut adam, exec)?;
        }
        epoch_loss.push(total / demos.len() as f64);
    }
    let metrics = PretrainMetrics {
        examples: demos.len(),
        epoch_loss,
        imitation_accuracy: demos.accuracy(policy, exec),
    };
    Ok((metrics, demos))
}

/// Fixed-capacity ring buffer of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayStore {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayStore {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::new(),
            capacity,
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Distinct uniform indices, at most `batch` of them.
    pub fn sample_indices(&self, batch: usize, rng: &mut rng::Rng) -> Vec<usize> {
        let k = batch.min(self.items.len());
        rand::seq::index::sample(rng, self.items.len(), k).into_vec()
    }

    pub fn sample(&self, batch: usize, rng: &mut rng::Rng) -> Vec<Transition> {
        self.sample_indices(batch, rng).into_iter().map(|i| self.items[i].clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdStats {
    pub loss: f64,
    pub td_loss: f64,
    pub reg_loss: f64,
    pub skipped: bool,
}

/// Hyperparameters used inside a TD update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdParams {
    pub gamma_rl: f64,
    pub reg_weight: f64,
    pub reference_weight: usize,
}

/// Double-Q bootstrap target: online argmax, target-network evaluation.
pub fn td_target(
    online: &DecoderPolicy,
    target: &DecoderPolicy,
    code: &CodeInstance,
    t: &Transition,
    gamma_rl: f64,
) -> Result<f64> {
    if t.terminal {
        return Ok(t.reward);
    }
    let ax = argmax(&online.q_values(code, AgentKind::X, &t.next, t.gate)?);
    let az = argmax(&online.q_values(code, AgentKind::Z, &t.next, t.gate)?);
    let qx = target.q_values(code, AgentKind::X, &t.next, t.gate)?[ax];
    let qz = target.q_values(code, AgentKind::Z, &t.next, t.gate)?[az];
    Ok(t.reward + gamma_rl * target.mix_qtot(&t.next, qx, qz)?)
}

/// Loss of one transition against a fixed target, accumulating its
/// gradient (scaled by `scale`) into `grads`. Returns (TD², regularizer²).
fn transition_loss(
    policy: &DecoderPolicy,
    code: &CodeInstance,
    t: &Transition,
    y: f64,
    params: &TdParams,
    scale: f64,
    grads: Option<&mut PolicyGrads>,
) -> Result<(f64, f64)> {
    let ix = policy.agent_input(code, AgentKind::X, &t.state, t.gate);
    let iz = policy.agent_input(code, AgentKind::Z, &t.state, t.gate);
    let tx = policy.x_agent.forward_trace(&ix)?;
    let tz = policy.z_agent.forward_trace(&iz)?;
    let (qx, qz) = (tx.q()[t.ax], tz.q()[t.az]);
    let state = global_state(&t.state);
    let syn = match policy.lambda_pin {
        Some(_) => None,
        None => Some(policy.synergy.net.forward_trace(&state)?),
    };
    let lambda = policy.lambda_pin.unwrap_or_else(|| syn.as_ref().expect("trace").output()[0]);
    let mt = policy.mixer.forward_trace(&state, qx, qz)?;
    let qtot = mix_formula(lambda, qx, qz, mt.value());
    let delta = qtot - y;
    let reg_target = synergy_target(&t.state, params.reference_weight);
    let reg = if policy.lambda_pin.is_some() { 0.0 } else { (lambda - reg_target).powi(2) };
    if let Some(g) = grads {
        let dq = 2.0 * delta * scale;
        let (mx, mz) = policy.mixer.backward(&mt, lambda * dq, &mut g.mixer)?;
        let dqx = (1.0 - lambda) * dq + mx;
        let dqz = (1.0 - lambda) * dq + mz;
        let mut up = vec![0.0; policy.arch.num_actions()];
        up[t.ax] = dqx;
        policy.x_agent.backward(&ix, &tx, &up, &mut g.x_agent)?;
        let mut up = vec![0.0; policy.arch.num_actions()];
        up[t.az] = dqz;
        policy.z_agent.backward(&iz, &tz, &up, &mut g.z_agent)?;
        if let Some(trace) = &syn {
            let dlambda = dq * (mt.value() - (qx + qz)) + params.reg_weight * 2.0 * (lambda - reg_target) * scale;
            policy.synergy.net.backward(trace, &[dlambda], &mut g.synergy)?;
        }
    }
    Ok((delta * delta, reg))
}

/// Mean squared TD error plus `reg_weight ·` mean synergy regularizer, with
/// bootstrap targets held fixed.
pub fn td_loss(
    policy: &DecoderPolicy,
    code: &CodeInstance,
    batch: &[Transition],
    targets: &[f64],
    params: &TdParams,
) -> Result<TdStats> {
    let mut td = 0.0;
    let mut reg = 0.0;
    for (t, &y) in batch.iter().zip(targets) {
        let (a, b) = transition_loss(policy, code, t, y, params, 0.0, None)?;
        td += a;
        reg += b;
    }
    let n = batch.len() as f64;
    let (td, reg) = (td / n, reg / n);
    Ok(TdStats {
        loss: td + params.reg_weight * reg,
        td_loss: td,
        reg_loss: reg,
        skipped: false,
    })
}

/// Gradient of [`td_loss`] with respect to every policy parameter.
pub fn td_gradients(
    policy: &DecoderPolicy,
    code: &CodeInstance,
    batch: &[Transition],
    targets: &[f64],
    params: &TdParams,
    exec: Execution,
) -> Result<(PolicyGrads, TdStats)> {
    if batch.is_empty() || batch.len() != targets.len() {
        return Err(Error::shape("TD batch", targets.len(), batch.len()));
    }
    let scale = 1.0 / batch.len() as f64;
    let (grads, stats) = reduce_chunks(policy, batch.len(), exec, |range, g| {
        let (mut td, mut reg) = (0.0, 0.0);
        for i in range {
            let (a, b) = transition_loss(policy, code, &batch[i], targets[i], params, scale, Some(g))?;
            td += a;
            reg += b;
        }
        Ok(vec![td, reg])
    })?;
    let (td, reg) = (stats[0] * scale, stats[1] * scale);
    Ok((
        grads,
        TdStats {
            loss: td + params.reg_weight * reg,
            td_loss: td,
            reg_loss: reg,
            skipped: false,
        },
    ))
}

/// Online policy, target network and optimiser state.
#[derive(Debug, Clone)]
pub struct Learner {
    pub policy: DecoderPolicy,
    pub target: DecoderPolicy,
    pub adam_agents: AdamState,
    pub adam_synergy: AdamState,
    pub updates: usize,
    pub target_sync: usize,
    pub params: TdParams,
    pub exec: Execution,
}

impl Learner {
    pub fn new(policy: DecoderPolicy, code: &CodeInstance, cfg: &TrainConfig) -> Self {
        let n_agents = policy.agents_mixer_params().len();
        let n_syn = policy.synergy_params().len();
        Self {
            target: policy.clone(),
            policy,
            adam_agents: AdamState::new(n_agents, AdamConfig::with_lr(cfg.lr_agents)),
            adam_synergy: AdamState::new(n_syn, AdamConfig::with_lr(cfg.lr_synergy)),
            updates: 0,
            target_sync: cfg.target_sync,
            params: TdParams {
                gamma_rl: cfg.gamma_rl,
                reg_weight: cfg.reg_weight,
                reference_weight: synergy_reference_weight(code),
            },
            exec: cfg.execution,
        }
    }

    /// One gradient step on a batch. Non-finite losses or gradients skip the
    /// step and leave every parameter untouched.
    pub fn td_update(&mut self, code: &CodeInstance, batch: &[Transition]) -> Result<TdStats> {
        let targets: Vec<f64> = par::map_slice(self.exec, batch, |t| {
            td_target(&self.policy, &self.target, code, t, self.params.gamma_rl)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let (grads, mut stats) = td_gradients(&self.policy, code, batch, &targets, &self.params, self.exec)?;
        let ga = grads.agents_mixer();
        let gs = grads.synergy();
        let finite = stats.loss.is_finite() && ga.iter().chain(&gs).all(|v| v.is_finite());
        if !finite {
            stats.skipped = true;
            return Ok(stats);
        }
        let mut pa = self.policy.agents_mixer_params();
        adam_step(&mut pa, &ga, &mut self.adam_agents)?;
        self.policy.load_agents_mixer_params(&pa)?;
        if self.policy.lambda_pin.is_none() {
            let mut ps = self.policy.synergy_params();
            adam_step(&mut ps, &gs, &mut self.adam_synergy)?;
            self.policy.load_synergy_params(&ps)?;
        }
        self.updates += 1;
        if self.updates.is_multiple_of(self.target_sync) {
            self.target = self.policy.clone();
        }
        Ok(stats)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub success: f64,
    pub mean_lambda: f64,
    pub loss: f64,
    pub mean_f_trans: f64,
    pub epsilon: f64,
    /// Greedy validation success, when validated this epoch.
    pub validation: Option<f64>,
}

pub const CURVE_HEADER: &str = "epoch,success,mean_lambda,loss,mean_f_trans,epsilon,validation";

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{CURVE_HEADER}").unwrap();
    for r in rows {
        let v = r.validation.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch, r.success, r.mean_lambda, r.loss, r.mean_f_trans, r.epsilon, v
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best validated fine-tuning checkpoint; the pretrained policy when
    /// there is no fine-tuning budget.
    pub policy: DecoderPolicy,
    pub pretrained: DecoderPolicy,
    pub final_policy: DecoderPolicy,
    pub pretrain: PretrainMetrics,
    pub curve: Vec<CurveRow>,
    pub best_epoch: Option<usize>,
    pub best_validation: f64,
    pub dataset_sources: (usize, usize),
    /// `(epoch, policy)` every `checkpoint_every` epochs.
    pub snapshots: Vec<(usize, DecoderPolicy)>,
}

impl TrainOutcome {
    pub fn metadata(&self, cfg: &TrainConfig, code: &CodeInstance) -> CheckpointMeta {
        CheckpointMeta {
            code: Some(code.family.clone()),
            code_distance: code.distance(),
            seed: cfg.seed,
            epoch: self.best_epoch.map_or(0, |e| e + 1),
        }
    }
}

/// Largest enumeration used by [`validation_success`].
const MAX_ENUMERATED_ERRORS: usize = 50_000;

/// Every Pauli error of weight at most `max_weight` with its depolarizing
/// probability at rate `p`, or `None` when there are more than `limit`.
pub fn low_weight_errors(n: usize, p: f64, max_weight: usize, limit: usize) -> Option<Vec<(PauliError, f64)>> {
    let mut count = 0usize;
    let mut binom = 1usize;
    for w in 0..=max_weight.min(n) {
        if w > 0 {
            binom = binom * (n + 1 - w) / w;
        }
        count = count.saturating_add(binom.saturating_mul(3usize.saturating_pow(w as u32)));
    }
    if count > limit {
        return None;
    }
    let mut out = Vec::with_capacity(count);
    let mut stack = vec![(PauliError::identity(n), 0usize, 0usize)];
    while let Some((e, next, w)) = stack.pop() {
        let prob = (p / 3.0).powi(w as i32) * (1.0 - p).powi((n - w) as i32);
        out.push((e.clone(), prob));
        if w == max_weight {
            continue;
        }
        for q in next..n {
            for kind in 0..3 {
                let mut f = e.clone();
                f.x.set(q, kind != 2);
                f.z.set(q, kind != 0);
                stack.push((f, q + 1, w + 1));
            }
        }
    }
    Some(out)
}

/// Greedy success used for checkpoint selection. Greedy episodes are
/// deterministic given the error, so on small codes this is the exact
/// success probability conditioned on at most two faulty qubits; larger
/// codes fall back to `validation_episodes` sampled episodes.
pub fn validation_success(policy: &DecoderPolicy, code: &CodeInstance, cfg: &TrainConfig) -> Result<f64> {
    let ep_cfg = EpisodeConfig {
        p: cfg.p,
        hardware: cfg.hardware,
        eps: 0.0,
        reward: cfg.reward,
        budget_ms: None,
    };
    if let Some(errors) = low_weight_errors(code.n, cfg.p, 2, MAX_ENUMERATED_ERRORS) {
        let wins = par::map_slice(cfg.execution, &errors, |(e, prob)| {
            let mut r = rng::stream(cfg.seed, rng::domain::VALIDATION, 0);
            env::run_episode_from(policy, code, e.clone(), &ep_cfg, &mut r).map(|ep| (ep.record.success, *prob))
        });
        let (mut hit, mut mass) = (0.0, 0.0);
        for w in wins {
            let (ok, prob) = w?;
            mass += prob;
            if ok {
                hit += prob;
            }
        }
        return Ok(hit / mass);
    }
    let wins = par::map_indexed(cfg.execution, cfg.validation_episodes, |i| {
        let mut r = rng::stream(cfg.seed, rng::domain::VALIDATION, i as u64);
        env::run_episode(policy, code, &ep_cfg, &mut r).map(|e| e.record.success)
    });
    let mut count = 0;
    for w in wins {
        count += usize::from(w?);
    }
    Ok(count as f64 / cfg.validation_episodes.max(1) as f64)
}

/// Pretrain, then fine-tune with ε-greedy rollouts under randomised channel
/// latency. Returns the best validated checkpoint and the per-epoch curve.
pub fn train_loop(code: &CodeInstance, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut policy = DecoderPolicy::new(code, cfg.widths, cfg.seed);
    policy.lambda_pin = cfg.lambda_pin;
    let dataset = decoders::make_pretrain_dataset(code, cfg.pretrain.p, cfg.pretrain.samples, cfg.seed, cfg.execution)?;
    let oracle_labels = dataset.records.iter().filter(|r| r.source == LabelSource::Oracle).count();
    let (metrics, demos) = pretrain(&mut policy, code, &dataset, &cfg.pretrain, &ValueAnchor::from_config(cfg), cfg.seed, cfg.execution)?;
    // Fine-tuning keeps only the ranking term; values come from TD.
    let demo_cfg = PretrainConfig {
        value_weight: 0.0,
        ..cfg.pretrain.clone()
    };
    let mut demo_adam = AdamState::new(policy.agents_mixer_params().len(), AdamConfig::with_lr(cfg.lr_agents));
    let pretrained = policy.clone();

    let mut best = policy.clone();
    let mut best_validation = f64::NEG_INFINITY;
    let mut max_validation = f64::NEG_INFINITY;
    let mut best_epoch = None;

    let mut learner = Learner::new(policy, code, cfg);
    let mut replay = ReplayStore::new(cfg.replay_capacity);
    let mut curve = Vec::new();
    let mut snapshots = Vec::new();
    let epochs = cfg.epochs();
    let mut update_index = 0u64;
    for epoch in 0..epochs {
        let eps = cfg.epsilon(epoch);
        let ep_cfg = EpisodeConfig {
            p: cfg.p,
            hardware: cfg.hardware,
            eps,
            reward: cfg.reward,
            budget_ms: None,
        };
        let first = epoch * cfg.episodes_per_epoch;
        let count = cfg.episodes_per_epoch.min(cfg.fine_tune_episodes - first);
        let online = &learner.policy;
        let episodes = par::map_indexed(cfg.execution, count, |i| {
            let mut r = rng::stream(cfg.seed, rng::domain::ROLLOUT, (first + i) as u64);
            env::run_episode(online, code, &ep_cfg, &mut r)
        });
        let mut wins = 0usize;
        let (mut lam, mut fid) = (0.0, 0.0);
        for ep in episodes {
            let ep = ep?;
            wins += usize::from(ep.record.success);
            lam += ep.record.lambda;
            fid += ep.record.feedback.f_trans;
            for t in ep.transitions {
                replay.push(t);
            }
        }
        let mut loss = 0.0;
        let mut applied = 0usize;
        for _ in 0..cfg.updates_per_epoch {
            let mut r = rng::stream(cfg.seed, rng::domain::REPLAY, update_index);
            update_index += 1;
            let batch = replay.sample(cfg.batch_size, &mut r);
            let stats = learner.td_update(code, &batch)?;
            if !stats.skipped {
                loss += stats.loss;
                applied += 1;
            }
            if cfg.demo_weight > 0.0 {
                let idx = rand::seq::index::sample(&mut r, demos.len(), cfg.batch_size.min(demos.len())).into_vec();
                demos.step(&mut learner.policy, &idx, &demo_cfg, cfg.demo_weight, &mut demo_adam, cfg.execution)?;
            }
        }
        let validate = (epoch + 1) % cfg.validate_every == 0 || epoch + 1 == epochs;
        let validation = if validate {
            let v = validation_success(&learner.policy, code, cfg)?;
            max_validation = max_validation.max(v);
            if v >= max_validation - cfg.selection_tolerance {
                best_validation = v;
                best = learner.policy.clone();
                best_epoch = Some(epoch);
            }
            Some(v)
        } else {
            None
        };
        curve.push(CurveRow {
            epoch,
            success: wins as f64 / count as f64,
            mean_lambda: lam / count as f64,
            loss: if applied > 0 { loss / applied as f64 } else { f64::NAN },
            mean_f_trans: fid / count as f64,
            epsilon: eps,
            validation,
        });
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            snapshots.push((epoch, learner.policy.clone()));
        }
    }
    if best_epoch.is_none() {
        best_validation = validation_success(&best, code, cfg)?;
    }
    Ok(TrainOutcome {
        policy: best,
        pretrained,
        final_policy: learner.policy,
        pretrain: metrics,
        curve,
        best_epoch,
        best_validation,
        dataset_sources: (oracle_labels, dataset.len() - oracle_labels),
        snapshots,
    })
}

/// Flattened gradient in the order (agents+mixer, synergy).
pub fn flat_gradients(g: &PolicyGrads) -> Vec<f64> {
    let mut v = g.agents_mixer();
    v.extend(g.synergy());
    v
}

/// Load parameters in [`flat_gradients`] order.
pub fn load_all_params(policy: &mut DecoderPolicy, flat: &[f64]) -> Result<()> {
    let na = policy.agents_mixer_params().len();
    policy.load_agents_mixer_params(&flat[..na])?;
    policy.load_synergy_params(&flat[na..])
}

pub fn all_params(policy: &DecoderPolicy) -> Vec<f64> {
    let mut v = policy.agents_mixer_params();
    v.extend(policy.synergy_params());
    v
}

/// Transitions from high-noise, mostly random episodes; varied inputs for
/// gradient checks and benchmarks.
pub fn exploratory_batch(code: &CodeInstance, policy: &DecoderPolicy, n: usize, seed: u64) -> Result<Vec<Transition>> {
    let mut cfg = EpisodeConfig::new(0.15, HardwareConfig::edge());
    cfg.eps = 0.7;
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < n {
        let mut r = rng::stream(seed, rng::domain::ROLLOUT, i);
        out.extend(env::run_episode(policy, code, &cfg, &mut r)?.transitions);
        i += 1;
    }
    out.truncate(n);
    Ok(out)
}

/// Finite-difference check of [`td_gradients`] against [`td_loss`] over
/// every parameter, on a batch of `batch_len` exploratory transitions.
pub fn td_gradient_check(
    policy: &DecoderPolicy,
    code: &CodeInstance,
    batch_len: usize,
    seed: u64,
    tolerance: f64,
) -> Result<GradCheck> {
    // Zero-initialised biases sit ReLUs exactly on their kinks; jitter
    // every parameter off the initialisation first.
    let mut policy = policy.clone();
    let jittered: Vec<f64> = all_params(&policy)
        .iter()
        .enumerate()
        .map(|(i, v)| v + 0.05 * ((i as f64 + 1.0) * 0.618).sin())
        .collect();
    load_all_params(&mut policy, &jittered)?;
    let batch = exploratory_batch(code, &policy, batch_len, seed)?;
    let targets: Vec<f64> = (0..batch.len()).map(|i| 0.3 * i as f64 - 0.5).collect();
    let params = TdParams {
        gamma_rl: 0.95,
        reg_weight: 0.02,
        reference_weight: synergy_reference_weight(code),
    };
    let (g, _) = td_gradients(&policy, code, &batch, &targets, &params, Execution::Sequential)?;
    let analytic = flat_gradients(&g);
    let mut scratch = policy.clone();
    let mut failure = None;
    let check = check_gradient(&all_params(&policy), &analytic, tolerance, |x| {
        let r = load_all_params(&mut scratch, x).and_then(|_| td_loss(&scratch, code, &batch, &targets, &params));
        match r {
            Ok(stats) => stats.loss,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(check),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::build_toy_css;
    use crate::decoders::PretrainRecord;
    use crate::gf2::BitVector;

    fn anchor() -> ValueAnchor {
        ValueAnchor::from_config(&TrainConfig::default())
    }

    fn zero_dataset(code: &CodeInstance, n: usize) -> PretrainDataset {
        let s = code.syndrome_of(&PauliError::identity(code.n));
        PretrainDataset {
            code_n: code.n,
            code_distance: code.distance(),
            p: 0.0,
            records: (0..n)
                .map(|_| PretrainRecord {
                    syndrome: s.clone(),
                    target: PauliError::identity(code.n),
                    source: LabelSource::Oracle,
                })
                .collect(),
            discarded: 0,
        }
    }

    #[test]
    fn zero_syndromes_teach_halt() {
        let code = build_toy_css(3).unwrap();
        let mut policy = DecoderPolicy::new(&code, Widths::default(), 1);
        let before = policy.synergy.clone();
        let cfg = PretrainConfig {
            epochs: 8,
            batch_size: 16,
            ..PretrainConfig::default()
        };
        let (m, _) = pretrain(&mut policy, &code, &zero_dataset(&code, 400), &cfg, &anchor(), 1, Execution::default()).unwrap();
        assert!(m.imitation_accuracy >= 0.99, "{m:?}");
        assert_eq!(policy.synergy, before);
    }

    #[test]
    fn pretrain_rejects_bad_labels() {
        let code = build_toy_css(3).unwrap();
        let mut policy = DecoderPolicy::new(&code, Widths::tiny(), 1);
        let mut ds = zero_dataset(&code, 3);
        ds.records[1].target = PauliError {
            x: BitVector::from_indices(9, [4]),
            z: BitVector::zeros(9),
        };
        let cfg = PretrainConfig::default();
        assert!(pretrain(&mut policy, &code, &ds, &cfg, &anchor(), 1, Execution::Sequential).is_err());
        let empty = PretrainDataset {
            records: vec![],
            ..zero_dataset(&code, 1)
        };
        assert!(pretrain(&mut policy, &code, &empty, &cfg, &anchor(), 1, Execution::Sequential).is_err());
    }

    #[test]
    fn decompose_orders_flips() {
        let code = build_toy_css(3).unwrap();
        let e = PauliError {
            x: BitVector::from_indices(9, [2]),
            z: BitVector::from_indices(9, [1, 7]),
        };
        let s = code.syndrome_of(&e);
        let steps = decompose_label(&code, &s, &e, true).unwrap();
        assert_eq!(steps[0].target_x, 1);
        assert_eq!(steps[0].target_z, 2);
        assert_eq!(steps[0].syndrome, s);
        assert_eq!(steps[1].target_x, 7);
        assert_eq!(steps[1].target_z, 9);
        assert_eq!(steps.len(), 2);
    }

    #[test]
    fn single_transition_converges() {
        let code = build_toy_css(3).unwrap();
        let policy = DecoderPolicy::new(&code, Widths::default(), 2);
        let t = exploratory_batch(&code, &policy, 1, 2).unwrap().remove(0);
        let t = Transition {
            terminal: true,
            reward: 0.8,
            ..t
        };
        let batch = vec![t.clone(); 96];
        let cfg = TrainConfig {
            reg_weight: 0.0,
            ..TrainConfig::default()
        };
        let mut learner = Learner::new(policy, &code, &cfg);
        let first = learner.td_update(&code, &batch).unwrap();
        let state = t.state.clone();
        let qx = learner.policy.q_values(&code, AgentKind::X, &state, t.gate).unwrap()[t.ax];
        let qz = learner.policy.q_values(&code, AgentKind::Z, &state, t.gate).unwrap()[t.az];
        let _ = (qx, qz);
        let mut last = first.loss;
        for _ in 0..60 {
            last = learner.td_update(&code, &batch).unwrap().loss;
        }
        assert!(last < first.loss * 0.05, "{} -> {last}", first.loss);
    }

    #[test]
    fn td_loss_matches_hand_formula_on_identical_batch() {
        let code = build_toy_css(3).unwrap();
        let policy = DecoderPolicy::new(&code, Widths::default(), 3);
        let t = Transition {
            terminal: true,
            reward: 0.8,
            ..exploratory_batch(&code, &policy, 1, 3).unwrap().remove(0)
        };
        let qx = policy.q_values(&code, AgentKind::X, &t.state, t.gate).unwrap()[t.ax];
        let qz = policy.q_values(&code, AgentKind::Z, &t.state, t.gate).unwrap()[t.az];
        let qtot = policy.mix_qtot(&t.state, qx, qz).unwrap();
        let params = TdParams {
            gamma_rl: 0.95,
            reg_weight: 0.0,
            reference_weight: 4,
        };
        let batch = vec![t.clone(); 5];
        let stats = td_loss(&policy, &code, &batch, &[0.8; 5], &params).unwrap();
        assert!((stats.loss - (qtot - 0.8).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn pinned_unregularized_is_plain_qmix() {
        let code = build_toy_css(3).unwrap();
        let policy = DecoderPolicy::new(&code, Widths::default(), 4).pinned(1.0);
        let batch = exploratory_batch(&code, &policy, 40, 4).unwrap();
        let targets: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let params = TdParams {
            gamma_rl: 0.95,
            reg_weight: 0.0,
            reference_weight: 4,
        };
        let stats = td_loss(&policy, &code, &batch, &targets, &params).unwrap();
        // Independent QMIX loss: mixer output on the chosen Q-values.
        let mut qmix = 0.0;
        for (t, y) in batch.iter().zip(&targets) {
            let qx = policy.q_values(&code, AgentKind::X, &t.state, t.gate).unwrap()[t.ax];
            let qz = policy.q_values(&code, AgentKind::Z, &t.state, t.gate).unwrap()[t.az];
            let f = policy.mixer.mix(&global_state(&t.state), qx, qz).unwrap();
            qmix += (f - y).powi(2);
        }
        assert!((stats.loss - qmix / 40.0).abs() < 1e-12);
    }

    #[test]
    fn td_composite_gradient_matches_differences() {
        let code = build_toy_css(3).unwrap();
        for seed in 0..3 {
            let policy = DecoderPolicy::new(&code, Widths::tiny(), seed);
            let check = td_gradient_check(&policy, &code, 6, seed, 1e-4).unwrap();
            assert!(check.passed, "{check:?}");
        }
    }

    #[test]
    fn parallel_and_sequential_grads_agree() {
        let code = build_toy_css(3).unwrap();
        let policy = DecoderPolicy::new(&code, Widths::default(), 5);
        let batch = exploratory_batch(&code, &policy, 96, 5).unwrap();
        let targets = vec![0.5; 96];
        let params = TdParams {
            gamma_rl: 0.95,
            reg_weight: 0.02,
            reference_weight: 4,
        };
        let (a, _) = td_gradients(&policy, &code, &batch, &targets, &params, Execution::Sequential).unwrap();
        let (b, _) = td_gradients(&policy, &code, &batch, &targets, &params, Execution::Parallel).unwrap();
        assert_eq!(flat_gradients(&a), flat_gradients(&b));
    }

    #[test]
    fn target_network_syncs_on_interval() {
        let code = build_toy_css(3).unwrap();
        let policy = DecoderPolicy::new(&code, Widths::tiny(), 6);
        let batch = exploratory_batch(&code, &policy, 12, 6).unwrap();
        let cfg = TrainConfig {
            target_sync: 3,
            ..TrainConfig::default()
        };
        let mut learner = Learner::new(policy, &code, &cfg);
        let initial = learner.target.clone();
        for step in 1..=7 {
            learner.td_update(&code, &batch).unwrap();
            if step % 3 == 0 {
                assert_eq!(learner.target, learner.policy);
            } else if step < 3 {
                assert_eq!(learner.target, initial);
            } else {
                assert_ne!(learner.target, learner.policy);
            }
        }
    }

    #[test]
    fn replay_ring_and_uniformity() {
        let code = build_toy_css(3).unwrap();
        let policy = DecoderPolicy::new(&code, Widths::tiny(), 7);
        let proto = exploratory_batch(&code, &policy, 1, 7).unwrap().remove(0);
        let mut store = ReplayStore::new(50);
        for i in 0..120 {
            store.push(Transition {
                reward: i as f64,
                ..proto.clone()
            });
        }
        assert_eq!(store.len(), 50);
        let mut r = rng::stream(7, rng::domain::REPLAY, 0);
        let mut counts = vec![0usize; 50];
        let batches = 10_000;
        for _ in 0..batches {
            let idx = store.sample_indices(10, &mut r);
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 10);
            for i in idx {
                counts[i] += 1;
            }
        }
        let expected = batches as f64 * 10.0 / 50.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 49 degrees of freedom, 0.999 quantile
        assert!(chi2 < 85.35, "chi2 {chi2}");
        let rewards: Vec<f64> = store.sample(50, &mut r).iter().map(|t| t.reward).collect();
        assert!(rewards.iter().all(|&v| v >= 70.0));
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.epochs(), 94);
        assert_eq!(cfg.epsilon(0), 0.3);
        assert!((cfg.epsilon(93) - 0.02).abs() < 1e-15);
        let mid = cfg.epsilon(46);
        assert!(mid < 0.3 && mid > 0.02);
    }

    #[test]
    fn config_json_round_trip_and_validation() {
        let cfg = TrainConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), cfg);
        let partial: TrainConfig = serde_json::from_str(r#"{"seed": 9, "code": {"family": "toycss", "d": 5}}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.batch_size, 96);
        assert!(TrainConfig { lr_agents: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { p: 1.5, ..cfg }.validate().is_err());
    }

    #[test]
    fn reference_weight_d3() {
        let code = build_toy_css(3).unwrap();
        assert_eq!(synergy_reference_weight(&code), 4);
    }
}
