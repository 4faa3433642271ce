//! Flying-qubit channel model: platform presets, synergy-to-intensity
//! mapping, feedback metrics and deadline adaptation.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Channel intensity at or above which cross-panel observations are exchanged.
pub const GATE_THRESHOLD: f64 = 0.2;
/// Fixed classical communication overhead per decode, in ms.
pub const COMM_OVERHEAD_MS: f64 = 0.05;
/// Latency normalisation used by the fidelity and phase-noise formulas.
const LATENCY_SCALE_MS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Ideal,
    Cryostat,
    Edge,
    Distributed,
    Custom,
}

impl Platform {
    pub const PRESETS: [Platform; 4] = [Platform::Ideal, Platform::Cryostat, Platform::Edge, Platform::Distributed];

    pub fn as_str(self) -> &'static str {
        match self {
            Platform::Ideal => "ideal",
            Platform::Cryostat => "cryostat",
            Platform::Edge => "edge",
            Platform::Distributed => "distributed",
            Platform::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareConfig {
    pub name: Platform,
    pub latency_lo_ms: f64,
    pub latency_hi_ms: f64,
    #[serde(default = "default_comm")]
    pub t_comm_ms: f64,
    /// Weight of this platform in the robustness score.
    pub severity: f64,
}

fn default_comm() -> f64 {
    COMM_OVERHEAD_MS
}

impl HardwareConfig {
    pub fn preset(name: Platform) -> Self {
        let (lo, hi, severity) = match name {
            Platform::Ideal => (0.05, 0.05, 1.0),
            Platform::Cryostat => (0.1, 0.2, 0.9),
            Platform::Edge => (1.0, 5.0, 0.75),
            Platform::Distributed => (5.0, 10.0, 0.6),
            Platform::Custom => (0.5, 10.0, 1.0),
        };
        Self {
            name,
            latency_lo_ms: lo,
            latency_hi_ms: hi,
            t_comm_ms: COMM_OVERHEAD_MS,
            severity,
        }
    }

    pub fn ideal() -> Self {
        Self::preset(Platform::Ideal)
    }

    pub fn cryostat() -> Self {
        Self::preset(Platform::Cryostat)
    }

    pub fn edge() -> Self {
        Self::preset(Platform::Edge)
    }

    pub fn distributed() -> Self {
        Self::preset(Platform::Distributed)
    }

    /// Domain-randomised training channel: latency uniform on 0.5–10 ms.
    pub fn randomized() -> Self {
        Self::preset(Platform::Custom)
    }

    pub fn presets() -> Vec<Self> {
        Platform::PRESETS.iter().map(|&p| Self::preset(p)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.latency_lo_ms >= 0.0
            && self.latency_lo_ms <= self.latency_hi_ms
            && self.latency_hi_ms.is_finite()
            && self.t_comm_ms >= 0.0
            && self.severity > 0.0
            && self.severity <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid hardware config {self:?}")))
        }
    }

    pub fn mean_latency_ms(&self) -> f64 {
        0.5 * (self.latency_lo_ms + self.latency_hi_ms)
    }
}

/// Transmission fidelity `0.50 + 0.49·λ − 0.05·(τ/10 ms)`, clamped to [0, 1].
pub fn fidelity(lambda: f64, tau_ms: f64) -> f64 {
    (0.50 + 0.49 * lambda - 0.05 * (tau_ms / LATENCY_SCALE_MS)).clamp(0.0, 1.0)
}

/// Uniform latency draw from the platform's range.
pub fn sample_latency<R: Rng + ?Sized>(config: &HardwareConfig, rng: &mut R) -> f64 {
    if config.latency_hi_ms <= config.latency_lo_ms {
        return config.latency_lo_ms;
    }
    rng.random_range(config.latency_lo_ms..=config.latency_hi_ms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSetting {
    pub intensity: f64,
    pub gated: bool,
    pub latency_ms: f64,
}

pub fn is_gated(lambda: f64) -> bool {
    lambda >= GATE_THRESHOLD
}

pub fn channel_setting<R: Rng + ?Sized>(lambda: f64, config: &HardwareConfig, rng: &mut R) -> ChannelSetting {
    let intensity = lambda.clamp(0.0, 1.0);
    ChannelSetting {
        intensity,
        gated: is_gated(intensity),
        latency_ms: sample_latency(config, rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareFeedback {
    pub f_trans: f64,
    pub e_entangle: f64,
    /// Radians.
    pub phi_noise: f64,
}

/// Feedback triple for a channel setting. Entanglement and phase noise are
/// proxies: intensity itself, and `0.1·(τ/10 ms)·2π`.
pub fn hardware_feedback(setting: &ChannelSetting) -> HardwareFeedback {
    HardwareFeedback {
        f_trans: fidelity(setting.intensity, setting.latency_ms),
        e_entangle: setting.intensity,
        phi_noise: 0.1 * (setting.latency_ms / LATENCY_SCALE_MS) * std::f64::consts::TAU,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeadlineAdjustment {
    pub lambda: f64,
    pub step_cap_scale: f64,
}

/// Scale synergy and step budget down when the predicted latency exceeds the budget.
pub fn deadline_adapt(lambda: f64, predicted_ms: f64, budget_ms: f64) -> Result<DeadlineAdjustment> {
    if budget_ms.is_nan() || budget_ms <= 0.0 {
        return Err(Error::Precondition(format!("latency budget must be positive (got {budget_ms})")));
    }
    if predicted_ms <= budget_ms {
        return Ok(DeadlineAdjustment {
            lambda,
            step_cap_scale: 1.0,
        });
    }
    let ratio = budget_ms / predicted_ms;
    Ok(DeadlineAdjustment {
        lambda: lambda * ratio,
        step_cap_scale: ratio.max(0.25),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fidelity_plug_ins() {
        assert_abs_diff_eq!(fidelity(1.0, 10.0), 0.94, epsilon = 1e-12);
        assert_abs_diff_eq!(fidelity(0.0, 0.0), 0.50, epsilon = 1e-12);
        assert_abs_diff_eq!(fidelity(0.5, 5.0), 0.72, epsilon = 1e-12);
    }

    #[test]
    fn fidelity_monotone_without_clamping() {
        for i in 0..=100 {
            for j in 0..=100 {
                let (l, t) = (i as f64 / 100.0, j as f64 / 10.0);
                let f = fidelity(l, t);
                assert!((0.45..=0.99).contains(&f));
                if i < 100 {
                    assert!(fidelity(l + 0.01, t) > f);
                }
                if j < 100 {
                    assert!(fidelity(l, t + 0.1) < f);
                }
            }
        }
    }

    #[test]
    fn latency_ranges() {
        let mut r = rng::stream(1, 0, 0);
        for _ in 0..100 {
            assert_eq!(sample_latency(&HardwareConfig::ideal(), &mut r), 0.05);
            let t = sample_latency(&HardwareConfig::distributed(), &mut r);
            assert!((5.0..=10.0).contains(&t));
        }
        let n = 10_000;
        let mean = (0..n).map(|_| sample_latency(&HardwareConfig::cryostat(), &mut r)).sum::<f64>() / n as f64;
        // uniform on [0.1, 0.2]: σ = 0.1/√12
        let sigma = 0.1 / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean - 0.15).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn gate_threshold_is_inclusive() {
        let mut r = rng::stream(2, 0, 0);
        let cfg = HardwareConfig::ideal();
        assert!(!channel_setting(0.05, &cfg, &mut r).gated);
        assert!(channel_setting(0.95, &cfg, &mut r).gated);
        assert!(channel_setting(0.2, &cfg, &mut r).gated);
    }

    #[test]
    fn feedback_plug_ins() {
        let fb = hardware_feedback(&ChannelSetting {
            intensity: 0.0,
            gated: false,
            latency_ms: 0.0,
        });
        assert_abs_diff_eq!(fb.f_trans, 0.5, epsilon = 1e-12);
        assert_eq!(fb.e_entangle, 0.0);
        assert_eq!(fb.phi_noise, 0.0);
        let fb = hardware_feedback(&ChannelSetting {
            intensity: 1.0,
            gated: true,
            latency_ms: 10.0,
        });
        assert_abs_diff_eq!(fb.f_trans, 0.94, epsilon = 1e-12);
        assert_eq!(fb.e_entangle, 1.0);
        assert_abs_diff_eq!(fb.phi_noise, 0.628, epsilon = 1e-3);
    }

    #[test]
    fn deadline_examples() {
        let a = deadline_adapt(0.7, 1.0, 10.0).unwrap();
        assert_eq!((a.lambda, a.step_cap_scale), (0.7, 1.0));
        let b = deadline_adapt(0.8, 2.0, 1.0).unwrap();
        assert_abs_diff_eq!(b.lambda, 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(b.step_cap_scale, 0.5, epsilon = 1e-15);
        let c = deadline_adapt(0.8, 8.0, 0.5).unwrap();
        assert_eq!(c.step_cap_scale, 0.25);
        assert!(deadline_adapt(0.5, 1.0, 0.0).is_err());
    }

    #[test]
    fn deadline_never_increases() {
        for i in 0..50 {
            for j in 1..50 {
                let lambda = i as f64 / 49.0;
                let adj = deadline_adapt(lambda, i as f64 * 0.3, j as f64 * 0.2).unwrap();
                assert!(adj.lambda <= lambda && adj.step_cap_scale <= 1.0);
            }
        }
    }

    #[test]
    fn presets_validate() {
        for cfg in HardwareConfig::presets() {
            cfg.validate().unwrap();
        }
        let bad = HardwareConfig {
            latency_lo_ms: 2.0,
            latency_hi_ms: 1.0,
            ..HardwareConfig::edge()
        };
        assert!(bad.validate().is_err());
    }
}
