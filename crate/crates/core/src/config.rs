//! TOML scenario files, dotted-key overrides and integration profiles.
//!
//! Graph paths are resolved relative to the directory holding the scenario
//! file. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funnel::{Funnel, DEFAULT_SAFETY};
use crate::graph::{Graph, NeighborhoodMode};
use crate::observer::ObserverVariant;
use crate::plant::{AgentModel, ControlLaw, DisturbanceKind, Drift, InputMap};
use crate::sim::{FunnelChoice, FunnelSpecs, InitialStates, Integrator, ScenarioSpec, TargetFunnels};

/// Samples recorded over the horizon when no interval is configured.
pub const DEFAULT_RECORDED_SAMPLES: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub k: usize,
    #[serde(default)]
    pub mode: NeighborhoodMode,
    #[serde(default)]
    pub variant: ObserverVariant,
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub integrator: Integrator,
    /// Seconds between recorded samples; `horizon / 1000` when absent.
    #[serde(default)]
    pub record_interval: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub graphs: GraphsConfig,
    pub agents: AgentsConfig,
    #[serde(default)]
    pub controller: ControlLaw,
    #[serde(default)]
    pub disturbance: DisturbanceKind,
    pub funnels: FunnelsConfig,
    #[serde(default)]
    pub estimates: EstimatesConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_dt() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphsConfig {
    pub comm: PathBuf,
    #[serde(default)]
    pub task: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentsConfig {
    pub dim: usize,
    pub drift: Drift,
    pub input_map: InputMap,
    #[serde(default)]
    pub initial: Option<InitialConfig>,
    #[serde(default)]
    pub overrides: Vec<AgentOverride>,
}

/// Changes to one agent's model; `agent` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentOverride {
    pub agent: usize,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub drift: Option<Drift>,
    #[serde(default)]
    pub input_map: Option<InputMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialConfig {
    Explicit(Vec<Vec<f64>>),
    Generated(GeneratedInitial),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratedInitial {
    Grid { half_width: f64 },
    Random { half_width: f64 },
}

/// `"auto"` or an explicit `{ rho0, rho_inf, decay }` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FunnelField {
    Keyword(String),
    Explicit(Funnel),
}

impl Default for FunnelField {
    fn default() -> Self {
        FunnelField::Keyword("auto".into())
    }
}

impl FunnelField {
    fn choice(&self, key: &str) -> Result<FunnelChoice> {
        match self {
            FunnelField::Keyword(k) if k == "auto" => Ok(FunnelChoice::Auto),
            FunnelField::Keyword(k) => Err(Error::config(format!(
                "{key}: expected \"auto\" or a table with rho0, rho_inf, decay, got {k:?}"
            ))),
            FunnelField::Explicit(f) => Ok(FunnelChoice::Explicit(*f)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunnelsConfig {
    pub delta: Funnel,
    pub theta: Funnel,
    #[serde(default)]
    pub rho: FunnelField,
    #[serde(default)]
    pub omega: FunnelField,
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default)]
    pub target: Vec<TargetFunnelConfig>,
}

fn default_safety() -> f64 {
    DEFAULT_SAFETY
}

/// Funnels for the estimators of one target agent (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetFunnelConfig {
    pub agent: usize,
    #[serde(default)]
    pub rho: Option<FunnelField>,
    #[serde(default)]
    pub omega: Option<FunnelField>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatesConfig {
    #[serde(default)]
    pub x_hat0: f64,
    #[serde(default)]
    pub g_hat0: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

/// Integration presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Explicit Euler with `dt = 1e-5`.
    Paper,
    /// Classical RK4 with `dt = 1e-4`.
    Desk,
}

impl Profile {
    pub fn integrator(self) -> Integrator {
        match self {
            Profile::Paper => Integrator::Euler,
            Profile::Desk => Integrator::Rk4,
        }
    }

    pub fn dt(self) -> f64 {
        match self {
            Profile::Paper => 1e-5,
            Profile::Desk => 1e-4,
        }
    }
}

/// A parsed scenario together with the directory its relative paths refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: ScenarioConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    /// Reads `path`, applies the profile, then every `key=value` override in
    /// order.
    pub fn load(path: &Path, profile: Option<Profile>, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let config = parse_with_overrides(&text, profile, overrides)?;
        Ok(LoadedConfig { config, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn to_spec(&self) -> Result<ScenarioSpec> {
        let c = &self.config;
        let comm = Graph::read_edge_list(self.resolve(&c.graphs.comm))?;
        let task = c
            .graphs
            .task
            .as_ref()
            .map(|p| Graph::read_edge_list(self.resolve(p)))
            .transpose()?;
        let n = comm.node_count();

        let base = AgentModel {
            dim: c.agents.dim,
            drift: c.agents.drift,
            input_map: c.agents.input_map,
        };
        let mut agents = vec![base; n];
        for o in &c.agents.overrides {
            if o.agent == 0 || o.agent > n {
                return Err(Error::config(format!("override for unknown agent {}", o.agent)));
            }
            let a = &mut agents[o.agent - 1];
            if let Some(d) = o.dim {
                a.dim = d;
            }
            if let Some(d) = o.drift {
                a.drift = d;
            }
            if let Some(m) = o.input_map {
                a.input_map = m;
            }
        }

        let initial = match &c.agents.initial {
            None => InitialStates::default(),
            Some(InitialConfig::Explicit(v)) => InitialStates::Explicit(v.clone()),
            Some(InitialConfig::Generated(GeneratedInitial::Grid { half_width })) => {
                InitialStates::Grid { half_width: *half_width }
            }
            Some(InitialConfig::Generated(GeneratedInitial::Random { half_width })) => {
                InitialStates::Random { half_width: *half_width }
            }
        };

        let mut per_target = BTreeMap::new();
        for t in &c.funnels.target {
            if t.agent == 0 || t.agent > n {
                return Err(Error::config(format!("funnels for unknown agent {}", t.agent)));
            }
            let key = format!("funnels.target[agent = {}]", t.agent);
            let entry = TargetFunnels {
                rho: t.rho.as_ref().map(|f| f.choice(&format!("{key}.rho"))).transpose()?,
                omega: t.omega.as_ref().map(|f| f.choice(&format!("{key}.omega"))).transpose()?,
            };
            if per_target.insert(t.agent - 1, entry).is_some() {
                return Err(Error::config(format!("duplicate funnels for agent {}", t.agent)));
            }
        }
        let funnels = FunnelSpecs {
            delta: c.funnels.delta,
            theta: c.funnels.theta,
            rho: c.funnels.rho.choice("funnels.rho")?,
            omega: c.funnels.omega.choice("funnels.omega")?,
            safety: c.funnels.safety,
            per_target,
        };

        if !(c.dt > 0.0 && c.dt.is_finite()) {
            return Err(Error::config(format!("dt must be positive, got {}", c.dt)));
        }
        let interval = c.record_interval.unwrap_or(c.horizon / DEFAULT_RECORDED_SAMPLES);
        if !(interval > 0.0 && interval.is_finite()) {
            return Err(Error::config(format!("record_interval must be positive, got {interval}")));
        }
        let record_every = ((interval / c.dt).round() as usize).max(1);

        Ok(ScenarioSpec {
            name: c.name.clone(),
            comm,
            task,
            k: c.k,
            mode: c.mode,
            variant: c.variant,
            agents,
            initial,
            control: c.controller,
            disturbance: c.disturbance,
            funnels,
            x_hat0: c.estimates.x_hat0,
            g_hat0: c.estimates.g_hat0,
            horizon: c.horizon,
            dt: c.dt,
            integrator: c.integrator,
            record_every,
            seed: c.seed,
        })
    }
}

/// Parses a scenario document, applying a profile and dotted overrides.
pub fn parse_with_overrides(
    text: &str,
    profile: Option<Profile>,
    overrides: &[String],
) -> Result<ScenarioConfig> {
    let mut table: toml::Table =
        toml::from_str(text).map_err(|e| Error::config(format!("invalid scenario file: {e}")))?;
    if let Some(p) = profile {
        table.insert(
            "integrator".into(),
            toml::Value::String(match p.integrator() {
                Integrator::Euler => "euler".into(),
                Integrator::Rk4 => "rk4".into(),
            }),
        );
        table.insert("dt".into(), toml::Value::Float(p.dt()));
    }
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    table
        .try_into()
        .map_err(|e| Error::config(format!("invalid scenario: {e}")))
}

/// Applies `a.b.c=value`. The value is read as a TOML value when it parses as
/// one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {assignment:?} is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(format!("override {assignment:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed table has the key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("nonempty key");
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override {key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
