//! Flat TOML run configuration.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use transax_core::controller::ResourceModel;
use transax_core::sim::{AdaptiveConfig, FailureSpec, Latencies};
use transax_core::{ContractConfig, GridModel, MarketError, ParticipantId, SimConfig, SolverConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad override `{0}`; expected key=value")]
    Override(String),
    #[error("bad failure entry `{0}`; expected participant@fail_seconds[:recover_seconds]")]
    Failure(String),
    #[error("bad participant list `{0}`")]
    Participants(String),
    #[error("invalid grid: {0}")]
    Grid(#[from] MarketError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub feeders: u32,
    pub c_ext: f64,
    pub c_int: f64,
    pub delta_hours: f64,
    pub delta_hat: f64,
    pub t_clear: u32,
    pub t_predict: u32,
    pub lookahead: u32,
    pub solver_period: f64,
    pub horizon: u32,
    pub seed: u64,
    pub solvers: u32,
    pub adaptive: bool,
    pub max_lookahead: u32,
    pub kp: f64,
    pub setpoint: f64,
    pub cpu_threshold: f64,
    pub solve_base_seconds: f64,
    pub solve_seconds_per_variable: f64,
    pub confirmation_delay: f64,
    pub price_cap: f64,
    pub unit_price: f64,
    pub dso_finalizes: bool,
    pub flex_window: u32,
    /// Comma-separated participant ids with storage.
    pub flexible: String,
    /// Comma-separated `id@fail[:recover]` entries, in seconds.
    pub failures: String,
    pub detect_latency: f64,
    pub notify_latency: f64,
    pub rejoin_latency: f64,
    /// Synthetic trace shape, used when no trace file is given.
    pub homes: u32,
    pub producers: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        let lat = Latencies::default();
        let model = ResourceModel::default();
        Self {
            feeders: 11,
            c_ext: 2000.0,
            c_int: 2500.0,
            delta_hours: 0.25,
            delta_hat: 15.0,
            t_clear: 1,
            t_predict: 4,
            lookahead: 5,
            solver_period: 5.0,
            horizon: 96,
            seed: 7,
            solvers: 1,
            adaptive: false,
            max_lookahead: 10,
            kp: 2.0,
            setpoint: 0.5,
            cpu_threshold: 0.30,
            solve_base_seconds: model.base_seconds,
            solve_seconds_per_variable: model.seconds_per_variable,
            confirmation_delay: 0.0,
            price_cap: 1.0,
            unit_price: 0.12,
            dso_finalizes: true,
            flex_window: 2,
            flexible: String::new(),
            failures: String::new(),
            detect_latency: lat.detect,
            notify_latency: lat.notify,
            rejoin_latency: lat.rejoin,
            homes: 102,
            producers: 5,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::with_overrides(text, &[])
    }

    /// Parses `text` and then applies `key=value` overrides; values use TOML
    /// syntax, with bare words taken as strings.
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text)?;
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::Override(o.clone()))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Override(o.clone()));
            }
            let value = value.trim();
            let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.to_string()));
            table.insert(key.to_string(), parsed);
        }
        Ok(toml::Value::Table(table).try_into()?)
    }

    pub fn grid(&self) -> Result<GridModel, ConfigError> {
        Ok(GridModel::uniform(
            self.feeders,
            self.c_ext,
            self.c_int,
            self.delta_hours,
            self.t_clear,
        )?)
    }

    pub fn flexible_participants(&self) -> Result<Vec<ParticipantId>, ConfigError> {
        parse_ids(&self.flexible)
    }

    pub fn failure_schedule(&self) -> Result<Vec<FailureSpec>, ConfigError> {
        let mut out = Vec::new();
        for entry in self.failures.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let bad = || ConfigError::Failure(entry.to_string());
            let (id, times) = entry.split_once('@').ok_or_else(bad)?;
            let participant = ParticipantId(id.trim().parse().map_err(|_| bad())?);
            let (fail, recover) = match times.split_once(':') {
                Some((f, r)) => (f, Some(r)),
                None => (times, None),
            };
            let fail_at: f64 = fail.trim().parse().map_err(|_| bad())?;
            let recover_at = match recover {
                Some(r) => Some(r.trim().parse::<f64>().map_err(|_| bad())?),
                None => None,
            };
            out.push(FailureSpec {
                participant,
                fail_at,
                recover_at,
            });
        }
        Ok(out)
    }

    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        let grid = self.grid()?;
        let mut cfg = SimConfig::new(grid, self.horizon);
        cfg.delta_hat = self.delta_hat;
        cfg.t_predict = self.t_predict;
        cfg.solver_period = self.solver_period;
        cfg.seed = self.seed;
        cfg.solvers = self.solvers;
        cfg.solver = SolverConfig {
            lookahead: self.lookahead,
            solve_period: self.solver_period,
            price_cap: self.price_cap,
            ..SolverConfig::default()
        };
        if self.adaptive {
            let mut a = AdaptiveConfig::new(self.max_lookahead, self.solver_period);
            a.kp = self.kp;
            a.setpoint = self.setpoint;
            a.cpu_threshold = self.cpu_threshold;
            a.model.base_seconds = self.solve_base_seconds;
            a.model.seconds_per_variable = self.solve_seconds_per_variable;
            cfg.adaptive = Some(a);
        }
        cfg.contract = ContractConfig {
            price_cap: self.price_cap,
            dso_finalizes: self.dso_finalizes,
        };
        cfg.confirmation_delay = self.confirmation_delay;
        cfg.flex_window = self.flex_window;
        cfg.latencies = Latencies {
            detect: self.detect_latency,
            notify: self.notify_latency,
            rejoin: self.rejoin_latency,
        };
        cfg.failures = self.failure_schedule()?;
        Ok(cfg)
    }
}

fn parse_ids(list: &str) -> Result<Vec<ParticipantId>, ConfigError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map(ParticipantId)
                .map_err(|_| ConfigError::Participants(list.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn fields_and_overrides() {
        let c = RunConfig::with_overrides(
            "horizon = 10\nlookahead = 3\nflexible = \"1, 4\"\n",
            &["lookahead=4".into(), "failures = 2@30:90, 5@7".into(), "adaptive=true".into()],
        )
        .unwrap();
        assert_eq!(c.horizon, 10);
        assert_eq!(c.lookahead, 4);
        assert!(c.adaptive);
        assert_eq!(c.flexible_participants().unwrap(), vec![ParticipantId(1), ParticipantId(4)]);
        let f = c.failure_schedule().unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!((f[0].participant, f[0].fail_at, f[0].recover_at), (ParticipantId(2), 30.0, Some(90.0)));
        assert_eq!(f[1].recover_at, None);
        let sim = c.sim_config().unwrap();
        assert_eq!(sim.solver.lookahead, 4);
        assert!(sim.adaptive.is_some());
    }

    #[test]
    fn unknown_keys_and_bad_entries_fail() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::with_overrides("", &["novalue".into()]).is_err());
        let c = RunConfig::with_overrides("", &["failures=x@y".into()]).unwrap();
        assert!(c.failure_schedule().is_err());
        let c = RunConfig::with_overrides("", &["c_ext=-1.0".into()]).unwrap();
        assert!(c.grid().is_err());
    }
}
