//! The two-agent decoding policy: synergy network, X/Z agent Q-networks over
//! factored observations, and the synergy-gated monotonic mixer.
//!
//! Each agent sees its own check channels plus, when the channel is gated
//! open, the opposite check type. Channels are cut into fixed-size groups
//! (4 for local checks, 2 for remote). Every check in a group is embedded
//! from its bit and its slot within the group by a shared layer, and the
//! embeddings are summed, so the pooled vector ignores the order in which a
//! group lists its checks. A shared per-qubit readout adds an incidence
//! score to each flip action; it carries no size-dependent weights, which
//! is what makes cross-distance transfer useful.

use crate::code::{CheckType, CodeInstance, ObservationChannels, Syndrome};
use crate::error::{Error, Result};
use crate::nn::{Activation, CheckpointMeta, ForwardTrace, LayerRecord, Mlp, MlpGrads};
use crate::pipeline;
use crate::rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const LOCAL_GROUP: usize = 4;
pub const REMOTE_GROUP: usize = 2;
pub const TRANSFER_NOISE_STD: f64 = 1e-3;
/// Per-qubit readout features: own fired, own incident, cross fired,
/// cross incident (both zero when gated off), gate.
pub const QUBIT_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    pub embed: usize,
    pub trunk: [usize; 2],
    pub readout: usize,
    pub synergy: [usize; 2],
    pub mixer: usize,
}

impl Default for Widths {
    fn default() -> Self {
        Self {
            embed: 8,
            trunk: [pipeline::REPORTED_FIRST_LAYER_WIDTH, 64],
            readout: 16,
            synergy: [64, 32],
            mixer: 32,
        }
    }
}

impl Widths {
    /// Narrow networks for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            embed: 3,
            trunk: [6, 5],
            readout: 4,
            synergy: [5, 4],
            mixer: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    X,
    Z,
}

impl AgentKind {
    pub const BOTH: [AgentKind; 2] = [AgentKind::X, AgentKind::Z];

    /// The X-agent watches X-checks (which detect Z errors) and emits Z flips.
    pub fn own_checks(self) -> CheckType {
        match self {
            AgentKind::X => CheckType::X,
            AgentKind::Z => CheckType::Z,
        }
    }

    pub fn cross_checks(self) -> CheckType {
        match self {
            AgentKind::X => CheckType::Z,
            AgentKind::Z => CheckType::X,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Flip(usize),
    Halt,
}

impl Action {
    pub fn from_index(index: usize, n: usize) -> Self {
        if index == n { Action::Halt } else { Action::Flip(index) }
    }

    pub fn index(self, n: usize) -> usize {
        match self {
            Action::Flip(q) => q,
            Action::Halt => n,
        }
    }

    pub fn is_halt(self) -> bool {
        self == Action::Halt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSizes {
    pub x_local: usize,
    pub x_remote: usize,
    pub z_local: usize,
    pub z_remote: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_qubits: usize,
    pub n_x_checks: usize,
    pub n_z_checks: usize,
    pub nominal_syndrome_dim: usize,
    pub channels: ChannelSizes,
    pub local_group: usize,
    pub remote_group: usize,
    pub widths: Widths,
    pub code_distance: Option<usize>,
}

fn groups_for(len: usize, size: usize) -> usize {
    len.div_ceil(size)
}

impl Architecture {
    pub fn for_code(code: &CodeInstance, widths: Widths) -> Self {
        let l = code.layout();
        Self {
            n_qubits: code.n,
            n_x_checks: code.num_x_checks(),
            n_z_checks: code.num_z_checks(),
            nominal_syndrome_dim: code.nominal_syndrome_dim,
            channels: ChannelSizes {
                x_local: l.x_local.len(),
                x_remote: l.x_remote.len(),
                z_local: l.z_local.len(),
                z_remote: l.z_remote.len(),
            },
            local_group: LOCAL_GROUP,
            remote_group: REMOTE_GROUP,
            widths,
            code_distance: code.distance(),
        }
    }

    pub fn num_actions(&self) -> usize {
        self.n_qubits + 1
    }

    pub fn state_dim(&self) -> usize {
        self.n_x_checks + self.n_z_checks + 2
    }

    /// Channel lengths in agent order: own local, own remote, cross local, cross remote.
    pub fn agent_channel_lens(&self, kind: AgentKind) -> [usize; 4] {
        let c = &self.channels;
        match kind {
            AgentKind::X => [c.x_local, c.x_remote, c.z_local, c.z_remote],
            AgentKind::Z => [c.z_local, c.z_remote, c.x_local, c.x_remote],
        }
    }

    fn group_size(&self, channel: usize) -> usize {
        if channel.is_multiple_of(2) { self.local_group } else { self.remote_group }
    }

    pub fn agent_groups(&self, kind: AgentKind) -> [usize; 4] {
        let lens = self.agent_channel_lens(kind);
        std::array::from_fn(|c| groups_for(lens[c], self.group_size(c)))
    }

    pub fn trunk_input_dim(&self, kind: AgentKind) -> usize {
        self.agent_groups(kind).iter().sum::<usize>() * self.widths.embed + 1
    }

    pub fn check_code(&self, code: &CodeInstance) -> Result<()> {
        let other = Architecture::for_code(code, self.widths);
        if other.n_qubits != self.n_qubits {
            return Err(Error::shape("policy qubit count", self.n_qubits, other.n_qubits));
        }
        if other.channels != self.channels || other.n_x_checks != self.n_x_checks || other.n_z_checks != self.n_z_checks {
            return Err(Error::shape("policy check count", self.state_dim() - 2, other.state_dim() - 2));
        }
        Ok(())
    }
}

/// Global syndrome state fed to the synergy net and the mixer hypernetworks:
/// the raw bits followed by the fired fraction of each check type.
pub fn global_state(s: &Syndrome) -> Vec<f64> {
    let mut v = s.to_features();
    let frac = |b: &crate::gf2::BitVector| if b.is_empty() { 0.0 } else { b.weight() as f64 / b.len() as f64 };
    v.push(frac(&s.sx));
    v.push(frac(&s.sz));
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckToken {
    pub fired: bool,
    pub slot: u8,
}

/// One agent's view of a syndrome, already grouped.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentInput {
    /// Own local, own remote, cross local, cross remote; each a list of groups.
    pub channels: [Vec<Vec<CheckToken>>; 4],
    pub gate: bool,
    pub qubit_features: Vec<[f64; QUBIT_FEATURES]>,
}

impl AgentInput {
    pub fn build(code: &CodeInstance, arch: &Architecture, kind: AgentKind, s: &Syndrome, gate: bool) -> Self {
        let obs = code.factor_observation(s);
        let (own_l, own_r, cross_l, cross_r) = match kind {
            AgentKind::X => (&obs.x_local, &obs.x_remote, &obs.z_local, &obs.z_remote),
            AgentKind::Z => (&obs.z_local, &obs.z_remote, &obs.x_local, &obs.x_remote),
        };
        let grouped = |bits: &crate::gf2::BitVector, size: usize, visible: bool| -> Vec<Vec<CheckToken>> {
            (0..groups_for(bits.len(), size))
                .map(|g| {
                    (0..size)
                        .map(|slot| {
                            let i = g * size + slot;
                            CheckToken {
                                fired: visible && i < bits.len() && bits.get(i),
                                slot: slot as u8,
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let (own_bits, cross_bits) = match kind {
            AgentKind::X => (&s.sx, &s.sz),
            AgentKind::Z => (&s.sz, &s.sx),
        };
        let g = if gate { 1.0 } else { 0.0 };
        let qubit_features = (0..code.n)
            .map(|q| {
                let own = code.checks_of_qubit(kind.own_checks(), q);
                let cross = code.checks_of_qubit(kind.cross_checks(), q);
                let own_fired = own.iter().filter(|&&c| own_bits.get(c)).count() as f64;
                let cross_fired = cross.iter().filter(|&&c| cross_bits.get(c)).count() as f64;
                [own_fired, own.len() as f64, g * cross_fired, g * cross.len() as f64, g]
            })
            .collect();
        Self {
            channels: [
                grouped(own_l, arch.local_group, true),
                grouped(own_r, arch.remote_group, true),
                grouped(cross_l, arch.local_group, gate),
                grouped(cross_r, arch.remote_group, gate),
            ],
            gate,
            qubit_features,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentGrads {
    pub local_embed: MlpGrads,
    pub remote_embed: MlpGrads,
    pub trunk: MlpGrads,
    pub readout: MlpGrads,
}

impl AgentGrads {
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        self.local_embed.flatten_into(out);
        self.remote_embed.flatten_into(out);
        self.trunk.flatten_into(out);
        self.readout.flatten_into(out);
    }
}

/// Forward-pass record of an agent, consumed by [`AgentNet::backward`].
#[derive(Debug, Clone)]
pub struct AgentTrace {
    local_table: Vec<ForwardTrace>,
    remote_table: Vec<ForwardTrace>,
    trunk: ForwardTrace,
    readout: Vec<ForwardTrace>,
    q: Vec<f64>,
}

impl AgentTrace {
    pub fn q(&self) -> &[f64] {
        &self.q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentNet {
    pub kind: AgentKind,
    pub groups: [usize; 4],
    pub local_group: usize,
    pub remote_group: usize,
    pub local_embed: Mlp,
    pub remote_embed: Mlp,
    pub trunk: Mlp,
    pub readout: Mlp,
}

fn one_hot_token(fired: bool, slot: usize, size: usize) -> Vec<f64> {
    let mut v = vec![0.0; size + 1];
    v[0] = if fired { 1.0 } else { 0.0 };
    v[1 + slot] = 1.0;
    v
}

impl AgentNet {
    pub fn random<R: Rng + ?Sized>(arch: &Architecture, kind: AgentKind, rng: &mut R) -> Self {
        let w = arch.widths;
        let relu = Activation::Relu;
        let id = Activation::Identity;
        Self {
            kind,
            groups: arch.agent_groups(kind),
            local_group: arch.local_group,
            remote_group: arch.remote_group,
            local_embed: Mlp::random(&[arch.local_group + 1, w.embed], &[relu], rng),
            remote_embed: Mlp::random(&[arch.remote_group + 1, w.embed], &[relu], rng),
            trunk: Mlp::random(
                &[arch.trunk_input_dim(kind), w.trunk[0], w.trunk[1], arch.num_actions()],
                &[relu, relu, id],
                rng,
            ),
            readout: Mlp::random(&[QUBIT_FEATURES, w.readout, 1], &[relu, id], rng),
        }
    }

    pub fn num_actions(&self) -> usize {
        self.trunk.output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.local_embed.num_params() + self.remote_embed.num_params() + self.trunk.num_params() + self.readout.num_params()
    }

    pub fn embed_dim(&self) -> usize {
        self.local_embed.output_dim()
    }

    fn group_size(&self, channel: usize) -> usize {
        if channel.is_multiple_of(2) { self.local_group } else { self.remote_group }
    }

    fn check_input(&self, input: &AgentInput) -> Result<()> {
        for (c, groups) in input.channels.iter().enumerate() {
            if groups.len() != self.groups[c] {
                return Err(Error::shape("agent channel groups", self.groups[c], groups.len()));
            }
            let size = self.group_size(c);
            for g in groups {
                if g.len() != size {
                    return Err(Error::shape("agent check group", size, g.len()));
                }
                let mut seen = 0u64;
                for t in g {
                    let s = t.slot as usize;
                    if s >= size || seen >> s & 1 == 1 {
                        return Err(Error::Usage(format!("bad slot tag {s} in group of {size}")));
                    }
                    seen |= 1 << s;
                }
            }
        }
        if input.qubit_features.len() + 1 != self.num_actions() {
            return Err(Error::shape("agent qubit features", self.num_actions() - 1, input.qubit_features.len()));
        }
        Ok(())
    }

    /// Embeddings of every (bit, slot) pair, index `fired·size + slot`.
    fn table(net: &Mlp, size: usize) -> Vec<ForwardTrace> {
        (0..2 * size)
            .map(|k| net.forward_trace(&one_hot_token(k >= size, k % size, size)).expect("embed shape"))
            .collect()
    }

    fn pool(&self, input: &AgentInput, local: &[ForwardTrace], remote: &[ForwardTrace]) -> Vec<f64> {
        let e = self.embed_dim();
        let mut out = Vec::with_capacity(self.groups.iter().sum::<usize>() * e + 1);
        for (c, groups) in input.channels.iter().enumerate() {
            let size = self.group_size(c);
            let table = if c % 2 == 0 { local } else { remote };
            for g in groups {
                // Sum in slot order so any listing of the group gives identical bits.
                let mut by_slot = [false; 64];
                for t in g {
                    by_slot[t.slot as usize] = t.fired;
                }
                let mut acc = vec![0.0; e];
                for (slot, &fired) in by_slot.iter().enumerate().take(size) {
                    let emb = table[usize::from(fired) * size + slot].output();
                    for (a, v) in acc.iter_mut().zip(emb) {
                        *a += v;
                    }
                }
                out.extend_from_slice(&acc);
            }
        }
        out.push(if input.gate { 1.0 } else { 0.0 });
        out
    }

    pub fn forward_trace(&self, input: &AgentInput) -> Result<AgentTrace> {
        self.check_input(input)?;
        let local_table = Self::table(&self.local_embed, self.local_group);
        let remote_table = Self::table(&self.remote_embed, self.remote_group);
        let pooled = self.pool(input, &local_table, &remote_table);
        let trunk = self.trunk.forward_trace(&pooled)?;
        let readout = input
            .qubit_features
            .iter()
            .map(|f| self.readout.forward_trace(f))
            .collect::<Result<Vec<_>>>()?;
        let mut q = trunk.output().to_vec();
        for (qi, r) in q.iter_mut().zip(&readout) {
            *qi += r.output()[0];
        }
        Ok(AgentTrace {
            local_table,
            remote_table,
            trunk,
            readout,
            q,
        })
    }

    pub fn q_values(&self, input: &AgentInput) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.q)
    }

    pub fn zero_grads(&self) -> AgentGrads {
        AgentGrads {
            local_embed: self.local_embed.zero_grads(),
            remote_embed: self.remote_embed.zero_grads(),
            trunk: self.trunk.zero_grads(),
            readout: self.readout.zero_grads(),
        }
    }

    /// Accumulate gradients of `dq · Q(input)` into `grads`.
    pub fn backward(&self, input: &AgentInput, trace: &AgentTrace, dq: &[f64], grads: &mut AgentGrads) -> Result<()> {
        if dq.len() != self.num_actions() {
            return Err(Error::shape("agent backward upstream", self.num_actions(), dq.len()));
        }
        for (i, &d) in dq.iter().take(trace.readout.len()).enumerate() {
            if d != 0.0 {
                self.readout.backward(&trace.readout[i], &[d], &mut grads.readout)?;
            }
        }
        let dpooled = self.trunk.backward(&trace.trunk, dq, &mut grads.trunk)?;
        let e = self.embed_dim();
        let mut d_local = vec![vec![0.0; e]; 2 * self.local_group];
        let mut d_remote = vec![vec![0.0; e]; 2 * self.remote_group];
        let mut off = 0;
        for (c, groups) in input.channels.iter().enumerate() {
            let size = self.group_size(c);
            let acc = if c % 2 == 0 { &mut d_local } else { &mut d_remote };
            for g in groups {
                let up = &dpooled[off..off + e];
                for t in g {
                    let k = usize::from(t.fired) * size + t.slot as usize;
                    for (a, u) in acc[k].iter_mut().zip(up) {
                        *a += u;
                    }
                }
                off += e;
            }
        }
        for (k, up) in d_local.iter().enumerate() {
            if up.iter().any(|&v| v != 0.0) {
                self.local_embed.backward(&trace.local_table[k], up, &mut grads.local_embed)?;
            }
        }
        for (k, up) in d_remote.iter().enumerate() {
            if up.iter().any(|&v| v != 0.0) {
                self.remote_embed.backward(&trace.remote_table[k], up, &mut grads.remote_embed)?;
            }
        }
        Ok(())
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        self.local_embed.flatten_into(out);
        self.remote_embed.flatten_into(out);
        self.trunk.flatten_into(out);
        self.readout.flatten_into(out);
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<usize> {
        let mut off = self.local_embed.load_flat(flat)?;
        off += self.remote_embed.load_flat(&flat[off..])?;
        off += self.trunk.load_flat(&flat[off..])?;
        off += self.readout.load_flat(&flat[off..])?;
        Ok(off)
    }

    fn is_finite(&self) -> bool {
        self.local_embed.is_finite() && self.remote_embed.is_finite() && self.trunk.is_finite() && self.readout.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynergyNet {
    pub net: Mlp,
}

impl SynergyNet {
    pub fn random<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let w = arch.widths.synergy;
        Self {
            net: Mlp::random(
                &[arch.state_dim(), w[0], w[1], 1],
                &[Activation::Relu, Activation::Relu, Activation::Sigmoid],
                rng,
            ),
        }
    }

    /// `σ(wᵀφ(state))`.
    pub fn score(&self, state: &[f64]) -> Result<f64> {
        Ok(self.net.forward(state)?[0])
    }

    pub fn zero_head(&mut self) {
        let head = self.net.layers.last_mut().expect("synergy head");
        head.weights.data.iter_mut().for_each(|w| *w = 0.0);
        head.bias.iter_mut().for_each(|b| *b = 0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixerGrads {
    pub hyper_w1: MlpGrads,
    pub hyper_b1: MlpGrads,
    pub hyper_w2: MlpGrads,
    pub hyper_b2: MlpGrads,
}

impl MixerGrads {
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        self.hyper_w1.flatten_into(out);
        self.hyper_b1.flatten_into(out);
        self.hyper_w2.flatten_into(out);
        self.hyper_b2.flatten_into(out);
    }
}

#[derive(Debug, Clone)]
pub struct MixerTrace {
    w1: ForwardTrace,
    b1: ForwardTrace,
    w2: ForwardTrace,
    b2: ForwardTrace,
    qx: f64,
    qz: f64,
    hidden_pre: Vec<f64>,
    f: f64,
}

impl MixerTrace {
    pub fn value(&self) -> f64 {
        self.f
    }
}

/// Monotone two-input mixer `f(qx, qz; w(s))` with hypernetwork weights
/// passed through `abs`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixerNet {
    pub hyper_w1: Mlp,
    pub hyper_b1: Mlp,
    pub hyper_w2: Mlp,
    pub hyper_b2: Mlp,
}

impl MixerNet {
    pub fn random<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let (s, h) = (arch.state_dim(), arch.widths.mixer);
        let id = Activation::Identity;
        Self {
            hyper_w1: Mlp::random(&[s, 2 * h], &[id], rng),
            hyper_b1: Mlp::random(&[s, h], &[id], rng),
            hyper_w2: Mlp::random(&[s, h], &[id], rng),
            hyper_b2: Mlp::random(&[s, h, 1], &[Activation::Relu, id], rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.hyper_b1.output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.hyper_w1.num_params() + self.hyper_b1.num_params() + self.hyper_w2.num_params() + self.hyper_b2.num_params()
    }

    /// Mixing weights after the nonnegativity map: (first layer `h×2`, second layer `h`).
    pub fn weights(&self, state: &[f64]) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
        let w1 = self.hyper_w1.forward(state)?;
        let w2 = self.hyper_w2.forward(state)?;
        Ok((w1.chunks(2).map(|c| [c[0].abs(), c[1].abs()]).collect(), w2.iter().map(|v| v.abs()).collect()))
    }

    pub fn forward_trace(&self, state: &[f64], qx: f64, qz: f64) -> Result<MixerTrace> {
        let w1 = self.hyper_w1.forward_trace(state)?;
        let b1 = self.hyper_b1.forward_trace(state)?;
        let w2 = self.hyper_w2.forward_trace(state)?;
        let b2 = self.hyper_b2.forward_trace(state)?;
        let (ow1, ob1, ow2) = (w1.output(), b1.output(), w2.output());
        let hidden_pre: Vec<f64> = (0..self.hidden())
            .map(|h| ow1[2 * h].abs() * qx + ow1[2 * h + 1].abs() * qz + ob1[h])
            .collect();
        let f = hidden_pre.iter().zip(ow2).map(|(z, w)| w.abs() * z.max(0.0)).sum::<f64>() + b2.output()[0];
        Ok(MixerTrace {
            w1,
            b1,
            w2,
            b2,
            qx,
            qz,
            hidden_pre,
            f,
        })
    }

    pub fn mix(&self, state: &[f64], qx: f64, qz: f64) -> Result<f64> {
        Ok(self.forward_trace(state, qx, qz)?.f)
    }

    pub fn zero_grads(&self) -> MixerGrads {
        MixerGrads {
            hyper_w1: self.hyper_w1.zero_grads(),
            hyper_b1: self.hyper_b1.zero_grads(),
            hyper_w2: self.hyper_w2.zero_grads(),
            hyper_b2: self.hyper_b2.zero_grads(),
        }
    }

    /// Accumulate gradients of `df · f` and return `(∂/∂qx, ∂/∂qz)` scaled by `df`.
    pub fn backward(&self, t: &MixerTrace, df: f64, grads: &mut MixerGrads) -> Result<(f64, f64)> {
        let h = self.hidden();
        let (ow1, ow2) = (t.w1.output(), t.w2.output());
        let mut d_w1 = vec![0.0; 2 * h];
        let mut d_b1 = vec![0.0; h];
        let mut d_w2 = vec![0.0; h];
        let (mut dqx, mut dqz) = (0.0, 0.0);
        for k in 0..h {
            let z = t.hidden_pre[k];
            let a = z.max(0.0);
            d_w2[k] = df * a * ow2[k].signum() * f64::from(ow2[k] != 0.0);
            if z > 0.0 {
                let dz = df * ow2[k].abs();
                d_b1[k] = dz;
                let (s0, s1) = (ow1[2 * k], ow1[2 * k + 1]);
                d_w1[2 * k] = dz * t.qx * s0.signum() * f64::from(s0 != 0.0);
                d_w1[2 * k + 1] = dz * t.qz * s1.signum() * f64::from(s1 != 0.0);
                dqx += dz * s0.abs();
                dqz += dz * s1.abs();
            }
        }
        self.hyper_w1.backward(&t.w1, &d_w1, &mut grads.hyper_w1)?;
        self.hyper_b1.backward(&t.b1, &d_b1, &mut grads.hyper_b1)?;
        self.hyper_w2.backward(&t.w2, &d_w2, &mut grads.hyper_w2)?;
        self.hyper_b2.backward(&t.b2, &[df], &mut grads.hyper_b2)?;
        Ok((dqx, dqz))
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        self.hyper_w1.flatten_into(out);
        self.hyper_b1.flatten_into(out);
        self.hyper_w2.flatten_into(out);
        self.hyper_b2.flatten_into(out);
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<usize> {
        let mut off = self.hyper_w1.load_flat(flat)?;
        off += self.hyper_b1.load_flat(&flat[off..])?;
        off += self.hyper_w2.load_flat(&flat[off..])?;
        off += self.hyper_b2.load_flat(&flat[off..])?;
        Ok(off)
    }

    fn is_finite(&self) -> bool {
        self.hyper_w1.is_finite() && self.hyper_b1.is_finite() && self.hyper_w2.is_finite() && self.hyper_b2.is_finite()
    }
}

/// `(1−λ)(qx+qz) + λ·f`.
pub fn mix_formula(lambda: f64, qx: f64, qz: f64, f: f64) -> f64 {
    (1.0 - lambda) * (qx + qz) + lambda * f
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderPolicy {
    pub arch: Architecture,
    pub synergy: SynergyNet,
    pub x_agent: AgentNet,
    pub z_agent: AgentNet,
    pub mixer: MixerNet,
    /// When set, λ is this constant and the synergy net is bypassed.
    pub lambda_pin: Option<f64>,
}

impl DecoderPolicy {
    pub fn new(code: &CodeInstance, widths: Widths, seed: u64) -> Self {
        let arch = Architecture::for_code(code, widths);
        let mut r = rng::stream(seed, rng::domain::INIT, 0);
        let synergy = SynergyNet::random(&arch, &mut r);
        let x_agent = AgentNet::random(&arch, AgentKind::X, &mut r);
        let z_agent = AgentNet::random(&arch, AgentKind::Z, &mut r);
        let mixer = MixerNet::random(&arch, &mut r);
        Self {
            arch,
            synergy,
            x_agent,
            z_agent,
            mixer,
            lambda_pin: None,
        }
    }

    /// The always-mix ablation: identical networks, λ fixed at 1.
    pub fn pinned(mut self, lambda: f64) -> Self {
        self.lambda_pin = Some(lambda);
        self
    }

    pub fn agent(&self, kind: AgentKind) -> &AgentNet {
        match kind {
            AgentKind::X => &self.x_agent,
            AgentKind::Z => &self.z_agent,
        }
    }

    pub fn check_code(&self, code: &CodeInstance) -> Result<()> {
        self.arch.check_code(code)
    }

    fn check_syndrome(&self, s: &Syndrome) -> Result<()> {
        if s.sx.len() != self.arch.n_x_checks || s.sz.len() != self.arch.n_z_checks {
            return Err(Error::shape(
                "syndrome length",
                self.arch.n_x_checks + self.arch.n_z_checks,
                s.sx.len() + s.sz.len(),
            ));
        }
        Ok(())
    }

    pub fn synergy_score(&self, s: &Syndrome) -> Result<f64> {
        self.check_syndrome(s)?;
        match self.lambda_pin {
            Some(l) => Ok(l),
            None => self.synergy.score(&global_state(s)),
        }
    }

    pub fn agent_input(&self, code: &CodeInstance, kind: AgentKind, s: &Syndrome, gate: bool) -> AgentInput {
        AgentInput::build(code, &self.arch, kind, s, gate)
    }

    pub fn q_values(&self, code: &CodeInstance, kind: AgentKind, s: &Syndrome, gate: bool) -> Result<Vec<f64>> {
        self.check_syndrome(s)?;
        self.agent(kind).q_values(&self.agent_input(code, kind, s, gate))
    }

    pub fn agent_q_values(
        &self,
        code: &CodeInstance,
        kind: AgentKind,
        obs: &ObservationChannels,
        gate: bool,
    ) -> Result<Vec<f64>> {
        let c = &self.arch.channels;
        let sizes = [
            (c.x_local, obs.x_local.len()),
            (c.x_remote, obs.x_remote.len()),
            (c.z_local, obs.z_local.len()),
            (c.z_remote, obs.z_remote.len()),
        ];
        for (want, got) in sizes {
            if want != got {
                return Err(Error::shape("observation channel", want, got));
            }
        }
        self.q_values(code, kind, &code.unfactor_observation(obs), gate)
    }

    pub fn mix_qtot(&self, s: &Syndrome, qx: f64, qz: f64) -> Result<f64> {
        let lambda = self.synergy_score(s)?;
        self.mix_with_lambda(s, lambda, qx, qz)
    }

    pub fn mix_with_lambda(&self, s: &Syndrome, lambda: f64, qx: f64, qz: f64) -> Result<f64> {
        self.check_syndrome(s)?;
        let f = self.mixer.mix(&global_state(s), qx, qz)?;
        Ok(mix_formula(lambda, qx, qz, f))
    }

    /// ε-greedy decentralised action choice, X-agent first.
    pub fn select_actions<R: Rng + ?Sized>(
        &self,
        code: &CodeInstance,
        s: &Syndrome,
        gate: bool,
        eps: f64,
        rng: &mut R,
    ) -> Result<(Action, Action)> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::Precondition(format!("exploration rate {eps} outside [0, 1]")));
        }
        let n = self.arch.n_qubits;
        let mut pick = |kind: AgentKind| -> Result<Action> {
            if eps > 0.0 && rng.random::<f64>() < eps {
                return Ok(Action::from_index(rng.random_range(0..=n), n));
            }
            Ok(Action::from_index(argmax(&self.q_values(code, kind, s, gate)?), n))
        };
        let ax = pick(AgentKind::X)?;
        let az = pick(AgentKind::Z)?;
        Ok((ax, az))
    }

    pub fn num_params(&self) -> usize {
        self.synergy.net.num_params() + self.x_agent.num_params() + self.z_agent.num_params() + self.mixer.num_params()
    }

    /// Table-I accounting: two agents' first-layer `256 × dim` matrices.
    pub fn reported_params(&self, nominal_dim: usize) -> usize {
        pipeline::param_count(nominal_dim)
    }

    pub fn is_finite(&self) -> bool {
        self.synergy.net.is_finite() && self.x_agent.is_finite() && self.z_agent.is_finite() && self.mixer.is_finite()
    }

    /// Agent and mixer parameters, in the order used by [`PolicyGrads::agents_mixer`].
    pub fn agents_mixer_params(&self) -> Vec<f64> {
        let mut v = Vec::new();
        self.x_agent.flatten_into(&mut v);
        self.z_agent.flatten_into(&mut v);
        self.mixer.flatten_into(&mut v);
        v
    }

    pub fn load_agents_mixer_params(&mut self, flat: &[f64]) -> Result<()> {
        let mut off = self.x_agent.load_flat(flat)?;
        off += self.z_agent.load_flat(&flat[off..])?;
        off += self.mixer.load_flat(&flat[off..])?;
        if off != flat.len() {
            return Err(Error::shape("agent/mixer parameter vector", off, flat.len()));
        }
        Ok(())
    }

    pub fn synergy_params(&self) -> Vec<f64> {
        self.synergy.net.flatten()
    }

    pub fn load_synergy_params(&mut self, flat: &[f64]) -> Result<()> {
        let used = self.synergy.net.load_flat(flat)?;
        if used != flat.len() {
            return Err(Error::shape("synergy parameter vector", used, flat.len()));
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> PolicyGrads {
        PolicyGrads {
            synergy: self.synergy.net.zero_grads(),
            x_agent: self.x_agent.zero_grads(),
            z_agent: self.z_agent.zero_grads(),
            mixer: self.mixer.zero_grads(),
        }
    }

    /// Re-bind to a code of another distance. Size-independent pieces are
    /// copied; rows and columns that index qubits or checks are copied where
    /// both sizes have them and filled with the source mean plus small
    /// Gaussian noise elsewhere.
    pub fn transfer_init(&self, target: &CodeInstance, seed: u64) -> Result<DecoderPolicy> {
        let arch = Architecture::for_code(target, self.arch.widths);
        if arch.local_group != self.arch.local_group || arch.remote_group != self.arch.remote_group {
            return Err(Error::Transfer("group sizes differ between source and target".into()));
        }
        if self.x_agent.local_group != self.arch.local_group || self.x_agent.remote_group != self.arch.remote_group {
            return Err(Error::Transfer("source agents do not use the shared group embedder".into()));
        }
        if arch == self.arch {
            return Ok(self.clone());
        }
        let mut r = rng::stream(seed, rng::domain::TRANSFER, 0);
        let noise = Normal::new(0.0, TRANSFER_NOISE_STD).expect("valid std");
        let mut jitter = move || noise.sample(&mut r);

        let src = &self.arch;
        let state_blocks = [
            Block::new(1, src.n_x_checks, arch.n_x_checks),
            Block::new(1, src.n_z_checks, arch.n_z_checks),
            Block::new(2, 1, 1),
        ];
        let synergy = SynergyNet {
            net: remap_first_layer(&self.synergy.net, &state_blocks, &mut jitter),
        };
        let mixer = MixerNet {
            hyper_w1: remap_first_layer(&self.mixer.hyper_w1, &state_blocks, &mut jitter),
            hyper_b1: remap_first_layer(&self.mixer.hyper_b1, &state_blocks, &mut jitter),
            hyper_w2: remap_first_layer(&self.mixer.hyper_w2, &state_blocks, &mut jitter),
            hyper_b2: remap_first_layer(&self.mixer.hyper_b2, &state_blocks, &mut jitter),
        };
        let mut agent_for = |kind: AgentKind| -> AgentNet {
            let s = self.agent(kind);
            let e = s.embed_dim();
            let (gs, gt) = (src.agent_groups(kind), arch.agent_groups(kind));
            let mut blocks: Vec<Block> = (0..4).map(|c| Block::new(e, gs[c], gt[c])).collect();
            blocks.push(Block::new(1, 1, 1));
            let mut trunk = remap_first_layer(&s.trunk, &blocks, &mut jitter);
            let head = trunk.layers.last_mut().expect("trunk head");
            let rows = [Block::new(1, src.n_qubits, arch.n_qubits), Block::new(1, 1, 1)];
            remap_rows(head, &rows, &mut jitter);
            AgentNet {
                kind,
                groups: gt,
                local_group: s.local_group,
                remote_group: s.remote_group,
                local_embed: s.local_embed.clone(),
                remote_embed: s.remote_embed.clone(),
                trunk,
                readout: s.readout.clone(),
            }
        };
        let x_agent = agent_for(AgentKind::X);
        let z_agent = agent_for(AgentKind::Z);
        Ok(DecoderPolicy {
            arch,
            synergy,
            x_agent,
            z_agent,
            mixer,
            lambda_pin: self.lambda_pin,
        })
    }

    pub fn to_checkpoint(&self, metadata: CheckpointMeta) -> PolicyCheckpoint {
        let agent = |a: &AgentNet| AgentRecord {
            local_embed: a.local_embed.to_records(),
            remote_embed: a.remote_embed.to_records(),
            trunk: a.trunk.to_records(),
            readout: a.readout.to_records(),
        };
        PolicyCheckpoint {
            architecture: self.arch.clone(),
            lambda_pin: self.lambda_pin,
            actual_params: self.num_params(),
            reported_params: self.reported_params(self.arch.nominal_syndrome_dim),
            synergy: self.synergy.net.to_records(),
            x_agent: agent(&self.x_agent),
            z_agent: agent(&self.z_agent),
            mixer: MixerRecord {
                hyper_w1: self.mixer.hyper_w1.to_records(),
                hyper_b1: self.mixer.hyper_b1.to_records(),
                hyper_w2: self.mixer.hyper_w2.to_records(),
                hyper_b2: self.mixer.hyper_b2.to_records(),
            },
            metadata,
        }
    }

    pub fn from_checkpoint(ck: &PolicyCheckpoint) -> Result<Self> {
        let arch = ck.architecture.clone();
        let agent = |kind: AgentKind, r: &AgentRecord| -> Result<AgentNet> {
            let a = AgentNet {
                kind,
                groups: arch.agent_groups(kind),
                local_group: arch.local_group,
                remote_group: arch.remote_group,
                local_embed: Mlp::from_records(&r.local_embed)?,
                remote_embed: Mlp::from_records(&r.remote_embed)?,
                trunk: Mlp::from_records(&r.trunk)?,
                readout: Mlp::from_records(&r.readout)?,
            };
            if a.trunk.input_dim() != arch.trunk_input_dim(kind) || a.num_actions() != arch.num_actions() {
                return Err(Error::shape("checkpoint agent trunk", arch.trunk_input_dim(kind), a.trunk.input_dim()));
            }
            Ok(a)
        };
        let policy = Self {
            synergy: SynergyNet {
                net: Mlp::from_records(&ck.synergy)?,
            },
            x_agent: agent(AgentKind::X, &ck.x_agent)?,
            z_agent: agent(AgentKind::Z, &ck.z_agent)?,
            mixer: MixerNet {
                hyper_w1: Mlp::from_records(&ck.mixer.hyper_w1)?,
                hyper_b1: Mlp::from_records(&ck.mixer.hyper_b1)?,
                hyper_w2: Mlp::from_records(&ck.mixer.hyper_w2)?,
                hyper_b2: Mlp::from_records(&ck.mixer.hyper_b2)?,
            },
            lambda_pin: ck.lambda_pin,
            arch,
        };
        if policy.synergy.net.input_dim() != policy.arch.state_dim() {
            return Err(Error::shape("checkpoint synergy input", policy.arch.state_dim(), policy.synergy.net.input_dim()));
        }
        if !policy.is_finite() {
            return Err(Error::Usage("checkpoint contains non-finite parameters".into()));
        }
        Ok(policy)
    }

    pub fn save(&self, path: &Path, metadata: CheckpointMeta) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint(metadata))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: PolicyCheckpoint = serde_json::from_str(&text)?;
        Ok((Self::from_checkpoint(&ck)?, ck.metadata))
    }
}

/// Gradients for every sub-network of a [`DecoderPolicy`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub synergy: MlpGrads,
    pub x_agent: AgentGrads,
    pub z_agent: AgentGrads,
    pub mixer: MixerGrads,
}

impl PolicyGrads {
    pub fn agent_mut(&mut self, kind: AgentKind) -> &mut AgentGrads {
        match kind {
            AgentKind::X => &mut self.x_agent,
            AgentKind::Z => &mut self.z_agent,
        }
    }

    pub fn agents_mixer(&self) -> Vec<f64> {
        let mut v = Vec::new();
        self.x_agent.flatten_into(&mut v);
        self.z_agent.flatten_into(&mut v);
        self.mixer.flatten_into(&mut v);
        v
    }

    pub fn synergy(&self) -> Vec<f64> {
        self.synergy.flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub local_embed: Vec<LayerRecord>,
    pub remote_embed: Vec<LayerRecord>,
    pub trunk: Vec<LayerRecord>,
    pub readout: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixerRecord {
    pub hyper_w1: Vec<LayerRecord>,
    pub hyper_b1: Vec<LayerRecord>,
    pub hyper_w2: Vec<LayerRecord>,
    pub hyper_b2: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub architecture: Architecture,
    pub lambda_pin: Option<f64>,
    /// Every weight and bias in the file.
    pub actual_params: usize,
    /// The scaling-table convention (two 256-wide first layers over the nominal syndrome).
    pub reported_params: usize,
    pub synergy: Vec<LayerRecord>,
    pub x_agent: AgentRecord,
    pub z_agent: AgentRecord,
    pub mixer: MixerRecord,
    pub metadata: CheckpointMeta,
}

/// A run of `count` equally sized units along one weight axis.
#[derive(Debug, Clone, Copy)]
struct Block {
    unit: usize,
    src: usize,
    tgt: usize,
}

impl Block {
    fn new(unit: usize, src: usize, tgt: usize) -> Self {
        Self { unit, src, tgt }
    }
}

/// Map a source index vector onto the target layout: copy shared units,
/// fill new ones with the per-offset source mean plus noise.
fn remap_axis(values: &[f64], blocks: &[Block], jitter: &mut impl FnMut() -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut off = 0;
    for b in blocks {
        let src = &values[off..off + b.unit * b.src];
        for j in 0..b.tgt {
            if j < b.src {
                out.extend_from_slice(&src[j * b.unit..(j + 1) * b.unit]);
            } else {
                for k in 0..b.unit {
                    let mean = if b.src == 0 {
                        0.0
                    } else {
                        (0..b.src).map(|i| src[i * b.unit + k]).sum::<f64>() / b.src as f64
                    };
                    out.push(mean + jitter());
                }
            }
        }
        off += b.unit * b.src;
    }
    out
}

fn remap_first_layer(net: &Mlp, blocks: &[Block], jitter: &mut impl FnMut() -> f64) -> Mlp {
    let mut net = net.clone();
    let layer = &mut net.layers[0];
    let rows = layer.weights.rows;
    let mut data = Vec::new();
    let mut cols = 0;
    for r in 0..rows {
        let row = remap_axis(layer.weights.row(r), blocks, jitter);
        cols = row.len();
        data.extend(row);
    }
    layer.weights = crate::nn::Matrix::new(rows, cols, data).expect("remapped layer is finite");
    net
}

fn remap_rows(layer: &mut crate::nn::DenseLayer, blocks: &[Block], jitter: &mut impl FnMut() -> f64) {
    let cols = layer.weights.cols;
    let src_rows = layer.weights.rows;
    let row_blocks: Vec<Block> = blocks.iter().map(|b| Block::new(b.unit * cols, b.src, b.tgt)).collect();
    let data = remap_axis(&layer.weights.data, &row_blocks, jitter);
    let bias = remap_axis(&layer.bias, blocks, jitter);
    debug_assert_eq!(src_rows, blocks.iter().map(|b| b.unit * b.src).sum::<usize>());
    layer.weights = crate::nn::Matrix::new(bias.len(), cols, data).expect("remapped head is finite");
    layer.bias = bias;
}
