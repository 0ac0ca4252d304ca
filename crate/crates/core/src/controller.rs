//! Two-level lookahead control.
//!
//! The top level ratchets `max_lookahead` down whenever a resource threshold
//! is crossed. The low level is a proportional controller that steers the
//! lookahead toward a solve-time set point within `[t_clear, max_lookahead]`.

use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::float::round_half_away;
use crate::market::ParticipantId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControllerError {
    #[error("unknown resource event kind")]
    UnknownEventKind,
    #[error("max lookahead {max} is below t_clear {t_clear}")]
    InvalidBounds { max: u32, t_clear: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceSignal {
    pub cpu_fraction: f64,
    pub mem_bytes: u64,
    pub disk_bytes: u64,
    /// Seconds taken by the last solve.
    pub solve_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResourceKind {
    Cpu,
    Mem,
    Disk,
    Deadline,
    Net,
    PeerChange,
    NicChange,
}

impl ResourceKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cpu => "cpu",
            Self::Mem => "mem",
            Self::Disk => "disk",
            Self::Deadline => "deadline",
            Self::Net => "net",
            Self::PeerChange => "peer-change",
            Self::NicChange => "nic-change",
        }
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResourceKind {
    type Err = ControllerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "cpu" => Self::Cpu,
            "mem" => Self::Mem,
            "disk" => Self::Disk,
            "deadline" => Self::Deadline,
            "net" => Self::Net,
            "peer-change" => Self::PeerChange,
            "nic-change" => Self::NicChange,
            _ => return Err(ControllerError::UnknownEventKind),
        })
    }
}

/// A resource callback as delivered to the owning agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ResourceEvent {
    Cpu(ResourceSignal),
    Mem(ResourceSignal),
    Disk { bytes: u64, limit: u64 },
    /// Seconds by which the solve overran its deadline.
    Deadline { miss: f64 },
    Net,
    PeerChange { participant: ParticipantId, up: bool },
    NicChange,
}

impl ResourceEvent {
    pub fn kind(&self) -> ResourceKind {
        match self {
            Self::Cpu(_) => ResourceKind::Cpu,
            Self::Mem(_) => ResourceKind::Mem,
            Self::Disk { .. } => ResourceKind::Disk,
            Self::Deadline { .. } => ResourceKind::Deadline,
            Self::Net => ResourceKind::Net,
            Self::PeerChange { .. } => ResourceKind::PeerChange,
            Self::NicChange => ResourceKind::NicChange,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerAction {
    /// Bounds were recomputed; carries the resulting values.
    Adjust { lookahead: u32, max_lookahead: u32 },
    RotateLogs,
    RemoveTrades(ParticipantId),
    Log(ResourceKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    t_clear: u32,
    initial_max: u32,
    max_lookahead: u32,
    lookahead: u32,
    /// Intervals per second of solve-time error.
    pub kp: f64,
    /// Target solve time in seconds.
    pub setpoint: f64,
    pub cpu_threshold: f64,
    pub mem_threshold: u64,
}

impl ControllerState {
    pub const DEFAULT_KP: f64 = 2.0;
    pub const DEFAULT_SETPOINT: f64 = 0.5;
    pub const DEFAULT_CPU_THRESHOLD: f64 = 0.30;
    pub const DEFAULT_MEM_THRESHOLD: u64 = 512 * 1024 * 1024;

    /// Starts with the lookahead at its upper bound.
    pub fn new(t_clear: u32, max_lookahead: u32) -> Result<Self, ControllerError> {
        if t_clear == 0 || max_lookahead < t_clear {
            return Err(ControllerError::InvalidBounds {
                max: max_lookahead,
                t_clear,
            });
        }
        Ok(Self {
            t_clear,
            initial_max: max_lookahead,
            max_lookahead,
            lookahead: max_lookahead,
            kp: Self::DEFAULT_KP,
            setpoint: Self::DEFAULT_SETPOINT,
            cpu_threshold: Self::DEFAULT_CPU_THRESHOLD,
            mem_threshold: Self::DEFAULT_MEM_THRESHOLD,
        })
    }

    pub fn with_lookahead(mut self, lookahead: u32) -> Self {
        self.lookahead = lookahead.clamp(self.t_clear, self.max_lookahead);
        self
    }

    pub fn t_clear(&self) -> u32 {
        self.t_clear
    }

    pub fn lookahead(&self) -> u32 {
        self.lookahead
    }

    pub fn max_lookahead(&self) -> u32 {
        self.max_lookahead
    }

    /// Lowers the bound by one interval when CPU or memory is over its threshold.
    pub fn top_level_update(&mut self, signal: &ResourceSignal) -> bool {
        let over = signal.cpu_fraction > self.cpu_threshold || signal.mem_bytes > self.mem_threshold;
        if !over {
            return false;
        }
        self.max_lookahead = self.max_lookahead.saturating_sub(1).max(self.t_clear);
        self.lookahead = self.lookahead.min(self.max_lookahead);
        true
    }

    pub fn low_level_update(&mut self, solve_time: f64) -> u32 {
        if !solve_time.is_finite() {
            return self.lookahead;
        }
        let target = self.lookahead as f64 + self.kp * (self.setpoint - solve_time);
        let rounded = round_half_away(target).clamp(self.t_clear as i64, self.max_lookahead as i64);
        self.lookahead = rounded as u32;
        self.lookahead
    }

    /// Re-arms the top level at its initial bound.
    pub fn reset(&mut self) {
        self.max_lookahead = self.initial_max;
    }

    fn adjusted(&self) -> ControllerAction {
        ControllerAction::Adjust {
            lookahead: self.lookahead,
            max_lookahead: self.max_lookahead,
        }
    }

    pub fn handle_resource_event(&mut self, event: &ResourceEvent) -> ControllerAction {
        match event {
            ResourceEvent::Cpu(signal) | ResourceEvent::Mem(signal) => {
                self.top_level_update(signal);
                self.adjusted()
            }
            ResourceEvent::Disk { .. } => ControllerAction::RotateLogs,
            ResourceEvent::Deadline { miss } => {
                self.low_level_update(*miss);
                self.adjusted()
            }
            ResourceEvent::PeerChange {
                participant,
                up: false,
            } => ControllerAction::RemoveTrades(*participant),
            other => ControllerAction::Log(other.kind()),
        }
    }
}

/// Synthetic host model: solve time and memory affine in LP variable count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceModel {
    pub base_seconds: f64,
    pub seconds_per_variable: f64,
    pub base_bytes: u64,
    pub bytes_per_variable: u64,
    /// Seconds between solves; CPU load is solve time over this period.
    pub period: f64,
}

impl Default for ResourceModel {
    fn default() -> Self {
        Self {
            base_seconds: 0.05,
            seconds_per_variable: 0.002,
            base_bytes: 32 * 1024 * 1024,
            bytes_per_variable: 4096,
            period: 5.0,
        }
    }
}

impl ResourceModel {
    pub fn solve_time(&self, variables: usize) -> f64 {
        self.base_seconds + self.seconds_per_variable * variables as f64
    }

    pub fn signal(&self, variables: usize) -> ResourceSignal {
        let solve_time = self.solve_time(variables);
        let cpu = if self.period > 0.0 {
            (solve_time / self.period).clamp(0.0, 1.0)
        } else {
            1.0
        };
        ResourceSignal {
            cpu_fraction: cpu,
            mem_bytes: self
                .base_bytes
                .saturating_add(self.bytes_per_variable.saturating_mul(variables as u64)),
            disk_bytes: 0,
            solve_time,
        }
    }
}
