//! System constants, per-user QoS budgets and the highway deployment.
//!
//! Everything in here is stored in SI base units (s, W, Hz, bits). Unit
//! conversion from the human-facing config lives in [`crate::config`].

use serde::Serialize;

use crate::effective_bandwidth::{effective_bandwidth_qos, qos_exponent};
use crate::{Error, Result};

/// Frame and physical-layer constants shared by every user of one BS.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemParams {
    /// Frame duration `T_f` (s); also the transmit time interval.
    pub frame_duration: f64,
    /// Downlink phase `T_D` (s) inside each frame.
    pub dl_phase: f64,
    /// Channel coherence time `T_c` (s), an integer number of frames.
    pub coherence_time: f64,
    /// Packet size `u` (bits).
    pub packet_bits: f64,
    /// Gap `Phi` between capacity and finite-blocklength rate, in (0, 1].
    pub rate_gap: f64,
    /// Single-sided noise spectral density `N_0` (W/Hz).
    pub noise_psd: f64,
    /// Transmit antennas `N_t`.
    pub antennas: u32,
    /// Power amplifier efficiency `rho`, in (0, 1].
    pub pa_efficiency: f64,
    /// Circuit power per unit bandwidth `P^cw` (W/Hz).
    pub circuit_per_bw: f64,
    /// Bandwidth-independent circuit power `P_0^c` (W).
    pub circuit_static: f64,
}

impl Default for SystemParams {
    /// Highway scenario constants with `N_t = 8`.
    fn default() -> Self {
        let antennas = 8;
        Self {
            frame_duration: 0.1e-3,
            dl_phase: 0.05e-3,
            coherence_time: 2e-3,
            packet_bits: 160.0,
            rate_gap: 0.9,
            noise_psd: dbm_to_watt(-173.0),
            antennas,
            pa_efficiency: 0.5,
            // 72 mW/MHz and 136 mW per antenna
            circuit_per_bw: 72e-3 / 1e6 * antennas as f64,
            circuit_static: 136e-3 * antennas as f64,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(
                    format!("system.{key}"),
                    format!("must be positive, got {v}"),
                ))
            }
        };
        pos("frame_duration", self.frame_duration)?;
        pos("dl_phase", self.dl_phase)?;
        pos("coherence_time", self.coherence_time)?;
        pos("packet_bits", self.packet_bits)?;
        pos("noise_psd", self.noise_psd)?;
        if self.dl_phase > self.frame_duration {
            return Err(Error::config(
                "system.dl_phase",
                "must not exceed the frame duration",
            ));
        }
        let blocks = self.coherence_time / self.frame_duration;
        if (blocks - blocks.round()).abs() > 1e-9 * blocks.max(1.0) || blocks.round() < 1.0 {
            return Err(Error::config(
                "system.coherence_time",
                "must be a positive integer multiple of the frame duration",
            ));
        }
        if !(self.rate_gap > 0.0 && self.rate_gap <= 1.0) {
            return Err(Error::config("system.rate_gap", "must lie in (0, 1]"));
        }
        if !(self.pa_efficiency > 0.0 && self.pa_efficiency <= 1.0) {
            return Err(Error::config("system.pa_efficiency", "must lie in (0, 1]"));
        }
        if self.antennas == 0 {
            return Err(Error::config("system.antennas", "must be at least 1"));
        }
        if !(self.circuit_per_bw >= 0.0 && self.circuit_static >= 0.0) {
            return Err(Error::config(
                "system.circuit",
                "circuit powers must be >= 0",
            ));
        }
        Ok(())
    }

    /// Frames per coherence block, `T_c / T_f`.
    pub fn frames_per_block(&self) -> u64 {
        (self.coherence_time / self.frame_duration).round() as u64
    }

    /// Same constants with `N_t` changed; both circuit terms scale linearly
    /// with the antenna count.
    pub fn with_antennas(&self, antennas: u32) -> Self {
        let scale = antennas as f64 / self.antennas as f64;
        Self {
            antennas,
            circuit_per_bw: self.circuit_per_bw * scale,
            circuit_static: self.circuit_static * scale,
            ..self.clone()
        }
    }

    /// Bits carried per Hz of bandwidth per unit spectral efficiency in one
    /// frame, expressed in packets: `Phi T_D / u`.
    pub(crate) fn packets_per_hz(&self) -> f64 {
        self.rate_gap * self.dl_phase / self.packet_bits
    }
}

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watt_to_dbm(watt: f64) -> f64 {
    10.0 * watt.log10() + 30.0
}

/// Queueing-delay requirement of one user plus the service rate it implies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueQoS {
    /// `D^q_max` (s).
    pub delay_bound: f64,
    /// `eps^q`.
    pub violation_prob: f64,
    /// QoS exponent; `None` until arrivals are known or when there are none.
    pub qos_exponent: Option<f64>,
    /// Effective bandwidth (packets/s); zero without arrivals.
    pub effective_bw: f64,
}

impl QueueQoS {
    /// Fills the QoS exponent and effective bandwidth for `arrival_rate`
    /// packets per frame.
    pub fn with_arrivals(mut self, arrival_rate: f64, frame: f64) -> Result<Self> {
        self.qos_exponent =
            qos_exponent(arrival_rate, frame, self.delay_bound, self.violation_prob)?.value();
        self.effective_bw =
            effective_bandwidth_qos(arrival_rate, frame, self.delay_bound, self.violation_prob)?;
        Ok(self)
    }

    /// Service target `T_f E_B` in packets per frame.
    pub fn service_per_frame(&self, frame: f64) -> f64 {
        frame * self.effective_bw
    }
}

/// End-to-end budget from which per-user queueing budgets are derived.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QosBudget {
    /// `D_max` (s).
    pub e2e_delay: f64,
    /// Overall packet loss probability `eps_D`.
    pub reliability_loss: f64,
    /// Backhaul delay `D_B` (s) for messages relayed from a neighbouring cell.
    pub backhaul_delay: f64,
    /// Queueing share of the loss budget; `eps_D / 2` when unset.
    pub queue_violation: Option<f64>,
}

impl Default for QosBudget {
    fn default() -> Self {
        Self {
            e2e_delay: 1e-3,
            reliability_loss: 1e-7,
            backhaul_delay: 0.1e-3,
            queue_violation: None,
        }
    }
}

/// Splits the end-to-end budget into the queueing requirement
/// `(D^q_max, eps^q)`. The transmission takes one frame; cell-edge users
/// additionally pay the backhaul delay.
pub fn derive_queue_qos(
    e2e_delay: f64,
    reliability_loss: f64,
    frame: f64,
    backhaul_delay: f64,
    is_edge: bool,
) -> Result<QueueQoS> {
    if !(reliability_loss > 0.0 && reliability_loss < 1.0) {
        return Err(Error::config("qos.reliability_loss", "must lie in (0, 1)"));
    }
    let backhaul = if is_edge { backhaul_delay } else { 0.0 };
    let mut delay_bound = e2e_delay - frame - backhaul;
    if !(delay_bound > 0.0) {
        return Err(Error::config(
            "qos.e2e_delay",
            format!(
                "delay budget exhausted: D_max {e2e_delay} s leaves {delay_bound} s for queueing"
            ),
        ));
    }
    // rounding must never hand out more than the end-to-end budget
    while delay_bound + frame + backhaul > e2e_delay || delay_bound + (frame + backhaul) > e2e_delay
    {
        delay_bound = delay_bound.next_down();
    }
    Ok(QueueQoS {
        delay_bound,
        violation_prob: reliability_loss / 2.0,
        qos_exponent: None,
        effective_bw: 0.0,
    })
}

/// Large-scale channel gain at distance `d` metres: the model
/// `35.3 + 37.6 log10(d)` is a path loss in dB, so the gain is its inverse.
pub fn path_loss(distance: f64) -> Result<f64> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(Error::domain(format!(
            "distance {distance} m must be positive"
        )));
    }
    let loss_db = 35.3 + 37.6 * distance.log10();
    Ok(10f64.powf(-loss_db / 10.0))
}

/// One target user served by the BS.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserLink {
    pub id: usize,
    /// BS-to-vehicle distance `d_k` (m).
    pub distance: f64,
    /// `alpha_k`.
    pub large_scale_gain: f64,
    /// Global indices of the source vehicles; indices outside `0..K` are
    /// vehicles of the neighbouring cells.
    pub nearby: Vec<i64>,
    /// Aggregated arrivals `lambda_k` (packets/frame).
    pub arrival_rate: f64,
    pub is_edge: bool,
    pub qos: QueueQoS,
}

/// Straight multi-lane highway served by roadside BSs.
///
/// The `users` vehicles of one cell are spread evenly over the cell length
/// and assigned round-robin to the lanes, so each lane holds one vehicle per
/// `lanes * cell_size / users` metres. Neighbouring cells carry identical
/// traffic. The BS sits at the cell midpoint, `road_offset` metres from the
/// nearest lane.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HighwayLayout {
    pub users: usize,
    /// Perpendicular BS-to-road distance `d_u` (m).
    pub road_offset: f64,
    /// Vehicles within this along-road distance (inclusive) are sources.
    pub comm_range: f64,
    /// Distance between neighbouring BSs (m).
    pub cell_size: f64,
    pub lanes: u32,
    pub lane_width: f64,
}

impl Default for HighwayLayout {
    fn default() -> Self {
        Self {
            users: 160,
            road_offset: 15.0,
            comm_range: 100.0,
            cell_size: 400.0,
            lanes: 8,
            lane_width: 4.0,
        }
    }
}

impl HighwayLayout {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 {
            return Err(Error::config("topology.users", "must be at least 1"));
        }
        if self.lanes == 0 {
            return Err(Error::config("topology.lanes", "must be at least 1"));
        }
        if !(self.cell_size > 0.0) {
            return Err(Error::config("topology.cell_size_m", "must be positive"));
        }
        if !(self.road_offset >= 0.0 && self.lane_width >= 0.0 && self.comm_range >= 0.0) {
            return Err(Error::config("topology", "distances must be non-negative"));
        }
        Ok(())
    }

    fn spacing(&self) -> f64 {
        self.cell_size / self.users as f64
    }

    /// Along-road position relative to the BS of global vehicle `j`.
    fn position(&self, j: i64) -> f64 {
        (j as f64 + 0.5) * self.spacing() - 0.5 * self.cell_size
    }

    fn lane_offset(&self, j: i64) -> f64 {
        let lane = j.rem_euclid(self.lanes as i64) as f64;
        self.road_offset + lane * self.lane_width
    }
}

/// Builds every user of one cell together with its source set, traffic and
/// QoS. `source_rate` is the per-vehicle upload rate in packets/s.
pub fn build_highway_topology(
    layout: &HighwayLayout,
    budget: &QosBudget,
    system: &SystemParams,
    source_rate: f64,
) -> Result<Vec<UserLink>> {
    layout.validate()?;
    if !(source_rate >= 0.0) {
        return Err(Error::config(
            "topology.source_rate_pps",
            "must be non-negative",
        ));
    }
    let k = layout.users as i64;
    let half_cell = 0.5 * layout.cell_size;
    let tol = 1e-9 * layout.cell_size;
    let reach = ((layout.comm_range + tol) / layout.spacing()).floor() as i64;

    (0..k)
        .map(|j| {
            let x = layout.position(j);
            let distance = x.hypot(layout.lane_offset(j));
            let mut nearby: Vec<i64> = (j - reach..=j + reach)
                .filter(|&i| i != j && (layout.position(i) - x).abs() <= layout.comm_range + tol)
                .collect();
            if nearby.is_empty() {
                nearby.push(j);
            }
            let is_edge = nearby.iter().any(|&i| i < 0 || i >= k);
            let arrival_rate = nearby.len() as f64 * source_rate * system.frame_duration;
            let mut qos = derive_queue_qos(
                budget.e2e_delay,
                budget.reliability_loss,
                system.frame_duration,
                budget.backhaul_delay,
                is_edge,
            )?;
            if let Some(eq) = budget.queue_violation {
                if !(eq > 0.0 && eq < 1.0) {
                    return Err(Error::config("qos.queue_violation", "must lie in (0, 1)"));
                }
                qos.violation_prob = eq;
            }
            let qos = qos.with_arrivals(arrival_rate, system.frame_duration)?;
            debug_assert!(x.abs() <= half_cell);
            Ok(UserLink {
                id: j as usize,
                distance,
                large_scale_gain: path_loss(distance)?,
                nearby,
                arrival_rate,
                is_edge,
                qos,
            })
        })
        .collect()
}

/// Picks `count` users spread evenly over the cell (all when `count` is 0
/// or exceeds the candidates). Edge users are skipped unless `include_edge`.
pub fn select_targets(users: &[UserLink], count: usize, include_edge: bool) -> Vec<UserLink> {
    let candidates: Vec<&UserLink> = users
        .iter()
        .filter(|u| include_edge || !u.is_edge)
        .collect();
    let n = candidates.len();
    if count == 0 || count >= n {
        return candidates.into_iter().cloned().collect();
    }
    (0..count)
        .map(|i| candidates[(2 * i + 1) * n / (2 * count)].clone())
        .collect()
}
