//! TOML configuration in human-facing units and its conversion to the SI
//! quantities used everywhere else.
//!
//! ```toml
//! [system]
//! frame_duration_ms = 0.1
//! noise_psd_dbm_per_hz = -173.0
//! antennas = 8
//!
//! [qos]
//! e2e_delay_ms = 1.0
//! reliability_loss = 1e-7
//!
//! [topology]
//! users = 160
//!
//! [experiment]
//! frames = 1000000
//! mode = "finite"
//! ```
//!
//! Every key is optional; missing keys take the highway-scenario defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::queue_sim::Policy;
use crate::scenario::{
    build_highway_topology, dbm_to_watt, select_targets, watt_to_dbm, HighwayLayout, QosBudget,
    SystemParams, UserLink,
};
use crate::{Error, Result};

const MS: f64 = 1e-3;
const MHZ: f64 = 1e6;
const MW: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub frame_duration_ms: f64,
    pub dl_phase_ms: f64,
    pub coherence_time_ms: f64,
    pub packet_size_bytes: f64,
    pub rate_gap: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub antennas: u32,
    pub pa_efficiency: f64,
    pub circuit_per_bw_mw_per_mhz_per_antenna: f64,
    pub circuit_static_mw_per_antenna: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            frame_duration_ms: 0.1,
            dl_phase_ms: 0.05,
            coherence_time_ms: 2.0,
            packet_size_bytes: 20.0,
            rate_gap: 0.9,
            noise_psd_dbm_per_hz: -173.0,
            antennas: 8,
            pa_efficiency: 0.5,
            circuit_per_bw_mw_per_mhz_per_antenna: 72.0,
            circuit_static_mw_per_antenna: 136.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QosSection {
    pub e2e_delay_ms: f64,
    pub reliability_loss: f64,
    pub backhaul_delay_ms: f64,
    /// Overrides the queueing share `eps_D / 2` of the loss budget.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queue_violation: Option<f64>,
}

impl Default for QosSection {
    fn default() -> Self {
        Self {
            e2e_delay_ms: 1.0,
            reliability_loss: 1e-7,
            backhaul_delay_ms: 0.1,
            queue_violation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub users: usize,
    pub road_offset_m: f64,
    pub comm_range_m: f64,
    pub cell_size_m: f64,
    pub lanes: u32,
    pub lane_width_m: f64,
    pub source_rate_pps: f64,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            users: 160,
            road_offset_m: 15.0,
            comm_range_m: 100.0,
            cell_size_m: 400.0,
            lanes: 8,
            lane_width_m: 4.0,
            source_rate_pps: 20.0,
        }
    }
}

/// CLI spelling of [`Policy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Finite,
    LargeNt,
    ConstantRate,
}

impl From<Mode> for Policy {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Finite => Policy::TwoStateFinite,
            Mode::LargeNt => Policy::TwoStateLargeNt,
            Mode::ConstantRate => Policy::ConstantRate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub frames: u64,
    pub seed: u64,
    /// Users simulated out of the cell (0 = all).
    pub targets: usize,
    pub include_edge: bool,
    pub antenna_sweep: Vec<u32>,
    pub reliability_sweep: Vec<f64>,
    /// Every n-th frame goes to `power.csv` (0 disables the trace).
    pub power_subsample: u64,
    pub replications: u64,
    pub mode: Mode,
    /// Also emit per-user delay CCDFs.
    pub per_user: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            frames: 1_000_000,
            seed: 1,
            targets: 8,
            include_edge: true,
            antenna_sweep: vec![2, 4, 8, 16, 32],
            reliability_sweep: vec![1e-3, 1e-4, 1e-5, 1e-6, 1e-7],
            power_subsample: 1000,
            replications: 1,
            mode: Mode::Finite,
            per_user: false,
        }
    }
}

/// The file as written by the user.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub system: SystemSection,
    pub qos: QosSection,
    pub topology: TopologySection,
    pub experiment: ExperimentSection,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let key = e
                .span()
                .map(|s| {
                    let line = text[..s.start].lines().count().max(1);
                    format!("line {line}")
                })
                .unwrap_or_else(|| "<file>".into());
            Error::config(key, msg)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Converts to SI and validates.
    pub fn resolve(&self) -> Result<Scenario> {
        let s = &self.system;
        let n = s.antennas as f64;
        let system = SystemParams {
            frame_duration: s.frame_duration_ms * MS,
            dl_phase: s.dl_phase_ms * MS,
            coherence_time: s.coherence_time_ms * MS,
            packet_bits: s.packet_size_bytes * 8.0,
            rate_gap: s.rate_gap,
            noise_psd: dbm_to_watt(s.noise_psd_dbm_per_hz),
            antennas: s.antennas,
            pa_efficiency: s.pa_efficiency,
            circuit_per_bw: s.circuit_per_bw_mw_per_mhz_per_antenna * MW / MHZ * n,
            circuit_static: s.circuit_static_mw_per_antenna * MW * n,
        };
        system.validate().map_err(rename_key)?;
        let q = &self.qos;
        let budget = QosBudget {
            e2e_delay: q.e2e_delay_ms * MS,
            reliability_loss: q.reliability_loss,
            backhaul_delay: q.backhaul_delay_ms * MS,
            queue_violation: q.queue_violation,
        };
        let t = &self.topology;
        let layout = HighwayLayout {
            users: t.users,
            road_offset: t.road_offset_m,
            comm_range: t.comm_range_m,
            cell_size: t.cell_size_m,
            lanes: t.lanes,
            lane_width: t.lane_width_m,
        };
        layout.validate().map_err(rename_key)?;
        if !(t.source_rate_pps >= 0.0 && t.source_rate_pps.is_finite()) {
            return Err(Error::config(
                "topology.source_rate_pps",
                "must be non-negative",
            ));
        }
        let e = &self.experiment;
        if e.frames == 0 {
            return Err(Error::config("experiment.frames", "must be at least 1"));
        }
        if let Some(&bad) = e.antenna_sweep.iter().find(|&&a| a == 0) {
            return Err(Error::config(
                "experiment.antenna_sweep",
                format!("antenna count {bad} < 1"),
            ));
        }
        if let Some(bad) = e.reliability_sweep.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::config(
                "experiment.reliability_sweep",
                format!("{bad} is not in (0, 1)"),
            ));
        }
        let scenario = Scenario {
            system,
            budget,
            layout,
            source_rate: t.source_rate_pps,
            experiment: e.clone(),
        };
        // surfaces QoS budget errors now rather than mid-run
        scenario.users()?;
        Ok(scenario)
    }

    /// Inverse of [`ConfigFile::resolve`].
    pub fn from_scenario(sc: &Scenario) -> Self {
        let s = &sc.system;
        let n = s.antennas as f64;
        ConfigFile {
            system: SystemSection {
                frame_duration_ms: s.frame_duration / MS,
                dl_phase_ms: s.dl_phase / MS,
                coherence_time_ms: s.coherence_time / MS,
                packet_size_bytes: s.packet_bits / 8.0,
                rate_gap: s.rate_gap,
                noise_psd_dbm_per_hz: watt_to_dbm(s.noise_psd),
                antennas: s.antennas,
                pa_efficiency: s.pa_efficiency,
                circuit_per_bw_mw_per_mhz_per_antenna: s.circuit_per_bw / n * MHZ / MW,
                circuit_static_mw_per_antenna: s.circuit_static / n / MW,
            },
            qos: QosSection {
                e2e_delay_ms: sc.budget.e2e_delay / MS,
                reliability_loss: sc.budget.reliability_loss,
                backhaul_delay_ms: sc.budget.backhaul_delay / MS,
                queue_violation: sc.budget.queue_violation,
            },
            topology: TopologySection {
                users: sc.layout.users,
                road_offset_m: sc.layout.road_offset,
                comm_range_m: sc.layout.comm_range,
                cell_size_m: sc.layout.cell_size,
                lanes: sc.layout.lanes,
                lane_width_m: sc.layout.lane_width,
                source_rate_pps: sc.source_rate,
            },
            experiment: sc.experiment.clone(),
        }
    }
}

/// Maps internal SI key names onto the config keys the user wrote.
fn rename_key(err: Error) -> Error {
    match err {
        Error::Config { key, msg } => {
            let key = match key.as_str() {
                "system.frame_duration" => "system.frame_duration_ms",
                "system.dl_phase" => "system.dl_phase_ms",
                "system.coherence_time" => "system.coherence_time_ms",
                "system.packet_bits" => "system.packet_size_bytes",
                "system.noise_psd" => "system.noise_psd_dbm_per_hz",
                "topology.cell_size" => "topology.cell_size_m",
                other => other,
            }
            .to_string();
            Error::Config { key, msg }
        }
        other => other,
    }
}

/// Fully resolved SI-unit scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub system: SystemParams,
    pub budget: QosBudget,
    pub layout: HighwayLayout,
    /// Per-vehicle packet rate (packets/s).
    pub source_rate: f64,
    pub experiment: ExperimentSection,
}

impl Scenario {
    /// Every user of the cell.
    pub fn users(&self) -> Result<Vec<UserLink>> {
        build_highway_topology(&self.layout, &self.budget, &self.system, self.source_rate)
    }

    /// The simulated subset.
    pub fn targets(&self) -> Result<Vec<UserLink>> {
        let users = self.users()?;
        let t = select_targets(
            &users,
            self.experiment.targets,
            self.experiment.include_edge,
        );
        if t.is_empty() {
            return Err(Error::config(
                "experiment.include_edge",
                "no users left to simulate",
            ));
        }
        Ok(t)
    }

    /// Same scenario with `N_t` changed (circuit power rescaled) and the
    /// users rebuilt accordingly.
    pub fn with_antennas(&self, antennas: u32) -> Self {
        Self {
            system: self.system.with_antennas(antennas),
            ..self.clone()
        }
    }

    pub fn with_reliability(&self, reliability_loss: f64) -> Self {
        let mut out = self.clone();
        out.budget.reliability_loss = reliability_loss;
        out
    }
}
