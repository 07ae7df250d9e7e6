use serde::{Deserialize, Serialize};

use crate::analyzer::TICKS_PER_SECOND;

/// Debounce settings turning per-second detections into actuator triggers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerConfig {
    pub threshold: f64,
    pub consecutive_required: usize,
    pub cooldown_s: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            threshold: 0.8,
            consecutive_required: 2,
            cooldown_s: 10.0,
        }
    }
}

impl TriggerConfig {
    pub fn cooldown_ticks(&self) -> u64 {
        (self.cooldown_s * f64::from(TICKS_PER_SECOND)).round() as u64
    }
}

/// Fold state of the trigger policy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriggerPolicy {
    config: TriggerConfig,
    streak: usize,
    last_trigger: Option<u64>,
}

impl TriggerPolicy {
    pub fn new(config: TriggerConfig) -> Self {
        Self {
            config,
            streak: 0,
            last_trigger: None,
        }
    }

    pub fn config(&self) -> &TriggerConfig {
        &self.config
    }

    fn in_cooldown(&self, tick: u64) -> bool {
        self.last_trigger
            .is_some_and(|t| tick < t + self.config.cooldown_ticks())
    }

    /// Feeds one inference result; returns true when a trigger fires.
    /// A streak only counts towards a trigger outside the cooldown, and
    /// restarts after every trigger.
    pub fn observe(&mut self, tick: u64, p_drumming: f64) -> bool {
        if p_drumming < self.config.threshold {
            self.streak = 0;
            return false;
        }
        self.streak += 1;
        if self.streak >= self.config.consecutive_required && !self.in_cooldown(tick) {
            self.streak = 0;
            self.last_trigger = Some(tick);
            true
        } else {
            false
        }
    }
}

/// Pure fold over `(tick, probability)` pairs; returns trigger ticks.
pub fn trigger_policy(detections: &[(u64, f64)], config: &TriggerConfig) -> Vec<u64> {
    let mut policy = TriggerPolicy::new(*config);
    detections
        .iter()
        .filter(|&&(t, p)| policy.observe(t, p))
        .map(|&(t, _)| t)
        .collect()
}
