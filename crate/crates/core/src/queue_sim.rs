//! Frame-driven Monte-Carlo simulation of the per-user downlink queues.
//!
//! Each frame a user receives a Poisson number of packets whose arrival
//! instants are uniform inside the frame (so the aggregate is a Poisson
//! process in continuous time). The frame's service budget `s(n)` is
//! delivered as a fluid at constant rate `s(n) / T_f` in FIFO order; a
//! packet's queueing delay is the time from its arrival until its service
//! starts.
//!
//! Two eligibility rules exist:
//!
//! * [`Eligibility::FrameBoundary`]: packets arriving in frame `n` join the
//!   queue at the start of frame `n + 1`, giving
//!   `Q(n+1) = max{Q(n) - s(n), 0} + A(n)`. Used by the two-state policies.
//! * [`Eligibility::Immediate`]: the server works on any packet present,
//!   which turns a constant budget into an M/D/1 queue with service time
//!   `T_f / s`. Used by the constant-rate policy.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::allocator::{
    avg_power_lower_bound, closed_form_alloc, power_from_sums, ptw_ratio, required_resource_bounds,
    solve_link, LinkSolution,
};
use crate::channel::{sample_gain, user_stream, ARRIVAL_STREAM, FADING_STREAM};
use crate::scenario::{SystemParams, UserLink};
use crate::{Error, Result};

/// Allocation policy driving the per-frame service target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// `s = min{Q, T_f E_B}` with power minimized for the instantaneous
    /// fading gain.
    TwoStateFinite,
    /// `s = min{Q, T_f E_B}` with the hardened gain `g = N_t`.
    TwoStateLargeNt,
    /// `s = T_f E_B` every frame, fading gain.
    ConstantRate,
}

impl Policy {
    pub fn eligibility(self) -> Eligibility {
        match self {
            Policy::ConstantRate => Eligibility::Immediate,
            _ => Eligibility::FrameBoundary,
        }
    }

    fn uses_fading(self) -> bool {
        !matches!(self, Policy::TwoStateLargeNt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Eligibility {
    FrameBoundary,
    Immediate,
}

/// Completion times within a frame closer than this to the frame end are
/// snapped onto it (frame units).
const SNAP: f64 = 1e-9;

/// FIFO queue with fluid service.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueState {
    pub user_id: usize,
    /// Arrival instants (in frames) of packets not yet completed.
    packets: VecDeque<f64>,
    /// Served fraction of the head packet.
    head_progress: f64,
    head_started: bool,
    arrivals: u64,
    departures: u64,
}

/// Result of one frame of service.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameOutcome {
    /// Fluid amount served `b(n)` (packets).
    pub departed: f64,
    /// Packets whose service completed this frame.
    pub completed: u64,
}

impl QueueState {
    pub fn new(user_id: usize) -> Self {
        Self {
            user_id,
            packets: VecDeque::new(),
            head_progress: 0.0,
            head_started: false,
            arrivals: 0,
            departures: 0,
        }
    }

    /// `Q`: unserved packets counting the head's remaining fraction.
    pub fn backlog(&self) -> f64 {
        self.packets.len() as f64 - self.head_progress
    }

    /// Packets still resident (not completed).
    pub fn resident(&self) -> u64 {
        self.packets.len() as u64
    }

    pub fn total_arrivals(&self) -> u64 {
        self.arrivals
    }

    pub fn total_departures(&self) -> u64 {
        self.departures
    }

    fn push(&mut self, at: f64) {
        self.packets.push_back(at);
        self.arrivals += 1;
    }

    /// Serves over `[from, to)` at `rate` packets per frame; `on_start` gets
    /// the queueing delay (frames) of every packet entering service.
    fn serve<F: FnMut(f64)>(
        &mut self,
        from: f64,
        to: f64,
        rate: f64,
        out: &mut FrameOutcome,
        on_start: &mut F,
    ) {
        if rate <= 0.0 {
            return;
        }
        let mut t = from;
        while t < to {
            let Some(&arrival) = self.packets.front() else {
                break;
            };
            if !self.head_started {
                on_start((t - arrival).max(0.0));
                self.head_started = true;
            }
            let remaining = 1.0 - self.head_progress;
            let finish = t + remaining / rate;
            if finish <= to + SNAP {
                out.departed += remaining;
                out.completed += 1;
                self.departures += 1;
                self.packets.pop_front();
                self.head_progress = 0.0;
                self.head_started = false;
                t = finish.min(to);
            } else {
                let part = rate * (to - t);
                self.head_progress += part;
                out.departed += part;
                t = to;
            }
        }
    }

    /// Advances one frame: serves `service` packets' worth of work and adds
    /// the frame's `arrivals` (instants in `[frame, frame + 1)`, sorted).
    pub fn step<F: FnMut(f64)>(
        &mut self,
        service: f64,
        frame: u64,
        arrivals: &[f64],
        eligibility: Eligibility,
        mut on_start: F,
    ) -> FrameOutcome {
        let t0 = frame as f64;
        let mut out = FrameOutcome::default();
        match eligibility {
            Eligibility::FrameBoundary => {
                self.serve(t0, t0 + 1.0, service, &mut out, &mut on_start);
                for &a in arrivals {
                    self.push(a);
                }
            }
            Eligibility::Immediate => {
                let mut t = t0;
                for &a in arrivals {
                    self.serve(t, a, service, &mut out, &mut on_start);
                    self.push(a);
                    t = a;
                }
                self.serve(t, t0 + 1.0, service, &mut out, &mut on_start);
            }
        }
        out
    }
}

/// Poisson number of packets per frame.
pub fn sample_arrivals<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate)
        .map(|p| p.sample(rng) as u64)
        .unwrap_or(0)
}

/// Run parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub policy: Policy,
    pub frames: u64,
    pub seed: u64,
    /// Delay thresholds (s) at which the empirical CCDF is counted exactly.
    pub thresholds: Vec<f64>,
    /// Keep per-user delay tallies next to the pooled ones.
    pub per_user: bool,
    /// Record every `n`-th frame's totals in the power trace (0 = never).
    pub power_subsample: u64,
}

impl RunConfig {
    pub fn new(policy: Policy, frames: u64, seed: u64) -> Self {
        Self {
            policy,
            frames,
            seed,
            thresholds: Vec::new(),
            per_user: false,
            power_subsample: 0,
        }
    }
}

const HISTOGRAM_BINS: usize = 1024;
const POWER_BATCHES: u64 = 32;
const CHUNK_FRAMES: u64 = 1 << 14;

/// Delay counters for a set of packets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayTally {
    /// Packets whose queueing delay was observed.
    pub samples: u64,
    /// `exceed[i]`: delays strictly above `thresholds[i]`.
    pub exceed: Vec<u64>,
    /// Delays binned with width `T_f`; the last bin collects the overflow.
    pub histogram: Vec<u64>,
    /// Delays above the user's own `D^q_max`.
    pub violations: u64,
    pub arrivals: u64,
    pub departures: u64,
    /// Packets resident at the end of the run.
    pub backlog_end: u64,
}

impl DelayTally {
    fn new(thresholds: usize) -> Self {
        Self {
            samples: 0,
            exceed: vec![0; thresholds],
            histogram: vec![0; HISTOGRAM_BINS],
            violations: 0,
            arrivals: 0,
            departures: 0,
            backlog_end: 0,
        }
    }

    fn add(&mut self, other: &DelayTally) {
        self.samples += other.samples;
        for (a, b) in self.exceed.iter_mut().zip(&other.exceed) {
            *a += b;
        }
        for (a, b) in self.histogram.iter_mut().zip(&other.histogram) {
            *a += b;
        }
        self.violations += other.violations;
        self.arrivals += other.arrivals;
        self.departures += other.departures;
        self.backlog_end += other.backlog_end;
    }

    /// Empirical `Pr{D > threshold_i}`.
    pub fn ccdf(&self) -> Vec<f64> {
        let n = self.samples.max(1) as f64;
        self.exceed.iter().map(|&c| c as f64 / n).collect()
    }

    /// Binomial standard error of each CCDF point.
    pub fn ccdf_se(&self) -> Vec<f64> {
        let n = self.samples.max(1) as f64;
        self.ccdf()
            .iter()
            .map(|&p| (p * (1.0 - p) / n).sqrt())
            .collect()
    }
}

/// Frame-level power statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerSummary {
    /// Mean of `P_tot` (W).
    pub mean_total: f64,
    /// Standard error of `mean_total` from batch means.
    pub se_total: f64,
    pub max_total: f64,
    /// Mean and peak of `sum_k P^t_k` (W).
    pub mean_transmit: f64,
    pub max_transmit: f64,
    /// Mean and peak of `sum_k W_k` (Hz).
    pub mean_bandwidth: f64,
    pub max_bandwidth: f64,
    #[serde(skip)]
    batch_means: Vec<f64>,
}

fn batch_se(batches: &[f64]) -> f64 {
    let b = batches.len();
    if b < 2 {
        return 0.0;
    }
    let mean = batches.iter().sum::<f64>() / b as f64;
    let var = batches.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    (var / b as f64).sqrt()
}

/// Outcome of one or more merged replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayStats {
    pub frames: u64,
    /// Delay thresholds (s).
    pub thresholds: Vec<f64>,
    /// Histogram bin width (s), equal to `T_f`.
    pub bin_width: f64,
    /// All users pooled.
    pub pooled: DelayTally,
    /// Per-user tallies when requested.
    pub per_user: Vec<DelayTally>,
    pub power: PowerSummary,
    /// `(1 - eps_D) u E[sum_k a_k] / (T_D E[P_tot])` (bits/J).
    pub energy_efficiency: f64,
}

impl DelayStats {
    pub fn ccdf(&self) -> Vec<f64> {
        self.pooled.ccdf()
    }

    /// Packets per frame arriving at all simulated users.
    pub fn mean_arrivals_per_frame(&self) -> f64 {
        self.pooled.arrivals as f64 / self.frames as f64
    }
}

/// One subsampled frame of the power trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerSample {
    pub frame: u64,
    pub transmit: f64,
    pub bandwidth: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub stats: DelayStats,
    pub power_trace: Vec<PowerSample>,
    pub warnings: Vec<String>,
}

struct UserSim<'a> {
    link: &'a UserLink,
    params: &'a SystemParams,
    policy: Policy,
    queue: QueueState,
    arrival_rng: ChaCha8Rng,
    fading_rng: ChaCha8Rng,
    poisson: Option<Poisson<f64>>,
    cap: f64,
    unit: Option<LinkSolution>,
    threshold_frames: Vec<f64>,
    bound_frames: f64,
    tally: DelayTally,
    instants: Vec<f64>,
}

impl<'a> UserSim<'a> {
    fn new(
        link: &'a UserLink,
        params: &'a SystemParams,
        cfg: &RunConfig,
        seed: u64,
    ) -> Result<Self> {
        let tf = params.frame_duration;
        let poisson = if link.arrival_rate > 0.0 {
            Some(Poisson::new(link.arrival_rate).map_err(|e| Error::domain(e.to_string()))?)
        } else {
            None
        };
        let unit = if cfg.policy == Policy::TwoStateLargeNt && link.arrival_rate > 0.0 {
            let ptw = ptw_ratio(link.large_scale_gain, params.antennas, params)?;
            let a = closed_form_alloc(1.0, link.large_scale_gain, params.antennas, ptw, params);
            Some(LinkSolution {
                efficiency: 1.0 / (params.packets_per_hz() * a.bandwidth),
                power_per_packet: a.transmit_power,
                bandwidth_per_packet: a.bandwidth,
            })
        } else {
            None
        };
        Ok(Self {
            link,
            params,
            policy: cfg.policy,
            queue: QueueState::new(link.id),
            arrival_rng: user_stream(seed, link.id, ARRIVAL_STREAM),
            fading_rng: user_stream(seed, link.id, FADING_STREAM),
            poisson,
            cap: link.qos.service_per_frame(tf),
            unit,
            threshold_frames: cfg.thresholds.iter().map(|t| t / tf).collect(),
            bound_frames: link.qos.delay_bound / tf,
            tally: DelayTally::new(cfg.thresholds.len()),
            instants: Vec::new(),
        })
    }

    fn run_chunk(&mut self, start: u64, power: &mut [f64], bandwidth: &mut [f64]) -> Result<()> {
        let per_block = self.params.frames_per_block();
        for (i, (p_out, w_out)) in power.iter_mut().zip(bandwidth.iter_mut()).enumerate() {
            let frame = start + i as u64;
            if self.policy.uses_fading() && frame.is_multiple_of(per_block) {
                let g = sample_gain(self.params.antennas, &mut self.fading_rng);
                self.unit = if self.cap > 0.0 {
                    Some(solve_link(self.link.large_scale_gain, g, self.params)?)
                } else {
                    None
                };
            }
            let target = match self.policy {
                Policy::ConstantRate => self.cap,
                _ => self.queue.backlog().min(self.cap).max(0.0),
            };
            match (&self.unit, target > 0.0) {
                (Some(unit), true) => {
                    *p_out = unit.power_per_packet * target;
                    *w_out = unit.bandwidth_per_packet * target;
                }
                _ => {
                    *p_out = 0.0;
                    *w_out = 0.0;
                }
            }

            let count = match &self.poisson {
                Some(p) => p.sample(&mut self.arrival_rng) as usize,
                None => 0,
            };
            self.instants.clear();
            for _ in 0..count {
                let u: f64 = self.arrival_rng.random();
                self.instants.push(frame as f64 + u);
            }
            self.instants.sort_by(f64::total_cmp);

            let tally = &mut self.tally;
            let thresholds = &self.threshold_frames;
            let bound = self.bound_frames;
            let instants = &self.instants;
            self.queue
                .step(target, frame, instants, self.policy.eligibility(), |wait| {
                    tally.samples += 1;
                    for (c, &th) in tally.exceed.iter_mut().zip(thresholds) {
                        if wait > th {
                            *c += 1;
                        }
                    }
                    if wait > bound {
                        tally.violations += 1;
                    }
                    let bin = (wait as usize).min(HISTOGRAM_BINS - 1);
                    tally.histogram[bin] += 1;
                });
        }
        Ok(())
    }

    fn finish(mut self) -> DelayTally {
        self.tally.arrivals = self.queue.total_arrivals();
        self.tally.departures = self.queue.total_departures();
        self.tally.backlog_end = self.queue.resident();
        self.tally
    }
}

/// Simulates `cfg.frames` frames of every user in `users`.
///
/// Users evolve independently (one ChaCha stream pair per user), so the
/// result is bit-identical for any thread count.
pub fn run(
    users: &[UserLink],
    params: &SystemParams,
    reliability_loss: f64,
    cfg: &RunConfig,
) -> Result<RunOutput> {
    params.validate()?;
    if cfg.frames == 0 {
        return Err(Error::config("experiment.frames", "must be at least 1"));
    }
    let mut warnings = Vec::new();
    for u in users {
        let cap = u.qos.service_per_frame(params.frame_duration);
        if u.arrival_rate > 0.0 && u.arrival_rate >= cap {
            warnings.push(format!(
                "user {}: utilization {} >= 1, queue is unstable",
                u.id,
                u.arrival_rate / cap
            ));
        }
    }

    let mut sims = users
        .iter()
        .map(|u| UserSim::new(u, params, cfg, cfg.seed))
        .collect::<Result<Vec<_>>>()?;

    let mut sum_total = 0.0;
    let mut sum_transmit = 0.0;
    let mut sum_bandwidth = 0.0;
    let mut max_total = f64::NEG_INFINITY;
    let mut max_transmit = 0.0f64;
    let mut max_bandwidth = 0.0f64;
    let batches = POWER_BATCHES.min(cfg.frames);
    let mut batch_sums = vec![0.0; batches as usize];
    let mut batch_counts = vec![0u64; batches as usize];
    let mut trace = Vec::new();

    let mut start = 0;
    while start < cfg.frames {
        let len = CHUNK_FRAMES.min(cfg.frames - start) as usize;
        let buffers: Vec<(Vec<f64>, Vec<f64>)> = sims
            .par_iter_mut()
            .map(|sim| {
                let mut p = vec![0.0; len];
                let mut w = vec![0.0; len];
                sim.run_chunk(start, &mut p, &mut w).map(|_| (p, w))
            })
            .collect::<Result<_>>()?;
        for i in 0..len {
            let frame = start + i as u64;
            let (mut transmit, mut bandwidth) = (0.0, 0.0);
            for (p, w) in &buffers {
                transmit += p[i];
                bandwidth += w[i];
            }
            let total = power_from_sums(transmit, bandwidth, params).total;
            sum_total += total;
            sum_transmit += transmit;
            sum_bandwidth += bandwidth;
            max_total = max_total.max(total);
            max_transmit = max_transmit.max(transmit);
            max_bandwidth = max_bandwidth.max(bandwidth);
            let b = (frame * batches / cfg.frames) as usize;
            batch_sums[b] += total;
            batch_counts[b] += 1;
            if cfg.power_subsample > 0 && frame.is_multiple_of(cfg.power_subsample) {
                trace.push(PowerSample {
                    frame,
                    transmit,
                    bandwidth,
                    total,
                });
            }
        }
        start += len as u64;
    }

    let tallies: Vec<DelayTally> = sims.into_iter().map(UserSim::finish).collect();
    let mut pooled = DelayTally::new(cfg.thresholds.len());
    for t in &tallies {
        pooled.add(t);
    }
    let n = cfg.frames as f64;
    let batch_means: Vec<f64> = batch_sums
        .iter()
        .zip(&batch_counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    let power = PowerSummary {
        mean_total: sum_total / n,
        se_total: batch_se(&batch_means),
        max_total,
        mean_transmit: sum_transmit / n,
        max_transmit,
        mean_bandwidth: sum_bandwidth / n,
        max_bandwidth,
        batch_means,
    };
    let mut stats = DelayStats {
        frames: cfg.frames,
        thresholds: cfg.thresholds.clone(),
        bin_width: params.frame_duration,
        pooled,
        per_user: if cfg.per_user { tallies } else { Vec::new() },
        power,
        energy_efficiency: 0.0,
    };
    stats.energy_efficiency = energy_efficiency(&stats, params, reliability_loss);
    Ok(RunOutput {
        stats,
        power_trace: trace,
        warnings,
    })
}

fn energy_efficiency(stats: &DelayStats, params: &SystemParams, reliability_loss: f64) -> f64 {
    (1.0 - reliability_loss) * params.packet_bits * stats.mean_arrivals_per_frame()
        / (params.dl_phase * stats.power.mean_total)
}

/// Seed of replication `r`; replication 0 uses the base seed.
pub fn replication_seed(seed: u64, r: u64) -> u64 {
    seed.wrapping_add(r.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs independent replications in parallel and merges them in order.
pub fn run_replicated(
    users: &[UserLink],
    params: &SystemParams,
    reliability_loss: f64,
    cfg: &RunConfig,
    replications: u64,
) -> Result<RunOutput> {
    let replications = replications.max(1);
    let outputs: Vec<RunOutput> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let cfg = RunConfig {
                seed: replication_seed(cfg.seed, r),
                ..cfg.clone()
            };
            run(users, params, reliability_loss, &cfg)
        })
        .collect::<Result<_>>()?;
    let mut iter = outputs.into_iter();
    let mut merged = iter.next().expect("at least one replication");
    for out in iter {
        let a = &mut merged.stats;
        let b = out.stats;
        let (na, nb) = (a.frames as f64, b.frames as f64);
        let w = |x: f64, y: f64| (x * na + y * nb) / (na + nb);
        a.power.mean_total = w(a.power.mean_total, b.power.mean_total);
        a.power.mean_transmit = w(a.power.mean_transmit, b.power.mean_transmit);
        a.power.mean_bandwidth = w(a.power.mean_bandwidth, b.power.mean_bandwidth);
        a.power.max_total = a.power.max_total.max(b.power.max_total);
        a.power.max_transmit = a.power.max_transmit.max(b.power.max_transmit);
        a.power.max_bandwidth = a.power.max_bandwidth.max(b.power.max_bandwidth);
        a.power.batch_means.extend(b.power.batch_means);
        a.power.se_total = batch_se(&a.power.batch_means);
        a.frames += b.frames;
        a.pooled.add(&b.pooled);
        for (x, y) in a.per_user.iter_mut().zip(&b.per_user) {
            x.add(y);
        }
        merged.warnings.extend(out.warnings);
        // traces are kept for the first replication only
    }
    merged.stats.energy_efficiency = energy_efficiency(&merged.stats, params, reliability_loss);
    Ok(merged)
}

/// Simulated power and peak resources relative to the large-antenna
/// analytic values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalizedMetrics {
    /// `E[P_tot]` over the infinite-delay lower bound.
    pub power_ratio: f64,
    pub power_ratio_se: f64,
    /// Peak `sum P^t` over its analytic upper bound.
    pub p_req_ratio: f64,
    /// Peak `sum W` over its analytic upper bound.
    pub w_req_ratio: f64,
    pub power_bound: f64,
    pub p_req_bound: f64,
    pub w_req_bound: f64,
}

pub fn normalized_metrics(
    stats: &DelayStats,
    users: &[UserLink],
    params: &SystemParams,
    reliability_loss: f64,
) -> Result<NormalizedMetrics> {
    let power_bound = avg_power_lower_bound(users, params, reliability_loss)?;
    let req = required_resource_bounds(users, params)?;
    Ok(NormalizedMetrics {
        power_ratio: stats.power.mean_total / power_bound,
        power_ratio_se: stats.power.se_total / power_bound,
        p_req_ratio: stats.power.max_transmit / req.transmit_power,
        w_req_ratio: stats.power.max_bandwidth / req.bandwidth,
        power_bound,
        p_req_bound: req.transmit_power,
        w_req_bound: req.bandwidth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_highway_topology, select_targets, HighwayLayout, QosBudget};
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn noop(_: f64) {}

    #[test]
    fn empty_queue_only_takes_arrivals() {
        let mut q = QueueState::new(0);
        let out = q.step(0.8, 0, &[0.2, 0.7], Eligibility::FrameBoundary, noop);
        assert_eq!(out, FrameOutcome::default());
        assert_eq!(q.backlog(), 2.0);
    }

    #[test]
    fn fractional_service_hand_trace() {
        let mut q = QueueState::new(0);
        q.step(
            0.0,
            0,
            &[0.1, 0.2, 0.3, 0.4, 0.5],
            Eligibility::FrameBoundary,
            noop,
        );
        assert_eq!(q.backlog(), 5.0);
        let mut waits = Vec::new();
        let out = q.step(0.794, 1, &[], Eligibility::FrameBoundary, |w| waits.push(w));
        assert_relative_eq!(out.departed, 0.794, max_relative = 1e-12);
        assert_eq!(out.completed, 0);
        assert_relative_eq!(waits[0], 0.9, max_relative = 1e-12);
        let out = q.step(0.794, 2, &[], Eligibility::FrameBoundary, noop);
        // head needs ceil(1/0.794) = 2 frames of full-rate service
        assert_eq!(out.completed, 1);
        assert_relative_eq!(q.backlog(), 5.0 - 2.0 * 0.794, max_relative = 1e-12);
    }

    #[test]
    fn boundary_mode_follows_the_lindley_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut q = QueueState::new(0);
        let mut backlog = 0.0f64;
        for n in 0..20_000u64 {
            let k = sample_arrivals(0.4, &mut rng);
            let mut inst: Vec<f64> = (0..k).map(|_| n as f64 + rng.random::<f64>()).collect();
            inst.sort_by(f64::total_cmp);
            let s = if n % 3 == 0 { backlog.min(0.7) } else { 0.55 };
            let before = q.backlog();
            let out = q.step(s, n, &inst, Eligibility::FrameBoundary, noop);
            // b = min{Q, s} and Q(n+1) = max{Q - s, 0} + A = Q + A - b
            assert!((out.departed - before.min(s)).abs() < 1e-9);
            backlog = (backlog - s).max(0.0) + k as f64;
            assert!((q.backlog() - backlog).abs() < 1e-6, "frame {n}");
            assert!((q.backlog() - (before + k as f64 - out.departed)).abs() < 1e-9);
        }
        assert_eq!(q.total_arrivals(), q.total_departures() + q.resident());
    }

    #[test]
    fn immediate_mode_serves_new_arrivals() {
        let mut q = QueueState::new(0);
        let mut waits = Vec::new();
        let out = q.step(2.0, 0, &[0.1, 0.15], Eligibility::Immediate, |w| {
            waits.push(w)
        });
        // first starts at arrival, second waits for the first (0.5 frames of
        // work) and spills into the next frame
        assert_eq!(out.completed, 1);
        assert_relative_eq!(q.backlog(), 0.2, max_relative = 1e-9);
        assert_eq!(waits[0], 0.0);
        assert_relative_eq!(waits[1], 0.45, max_relative = 1e-12);
    }

    #[test]
    fn arrival_sampler() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(sample_arrivals(0.0, &mut rng), 0);
        let n = 10_000_000;
        let mut zeros = 0u64;
        for _ in 0..n {
            if sample_arrivals(0.16, &mut rng) == 0 {
                zeros += 1;
            }
        }
        let p0 = zeros as f64 / n as f64;
        assert!((p0 / (-0.16f64).exp() - 1.0).abs() < 1e-3, "{p0}");

        let m = 1_000_000;
        let xs: Vec<f64> = (0..m)
            .map(|_| sample_arrivals(2.5, &mut rng) as f64)
            .collect();
        let mean = xs.iter().sum::<f64>() / m as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        assert!((mean / 2.5 - 1.0).abs() < 0.01);
        assert!((var / mean - 1.0).abs() < 0.02);
    }

    fn targets(count: usize) -> (Vec<UserLink>, SystemParams) {
        let params = SystemParams::default();
        let users = build_highway_topology(
            &HighwayLayout::default(),
            &QosBudget::default(),
            &params,
            20.0,
        )
        .unwrap();
        (select_targets(&users, count, true), params)
    }

    #[test]
    fn zero_arrivals_cost_only_static_power() {
        let (mut users, params) = targets(2);
        for u in &mut users {
            u.arrival_rate = 0.0;
            u.qos.effective_bw = 0.0;
        }
        let out = run(
            &users,
            &params,
            1e-7,
            &RunConfig::new(Policy::TwoStateFinite, 500, 1),
        )
        .unwrap();
        assert_eq!(out.stats.pooled.samples, 0);
        assert_relative_eq!(
            out.stats.power.max_total,
            params.circuit_static,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            out.stats.power.mean_total,
            params.circuit_static,
            max_relative = 1e-12
        );
    }

    #[test]
    fn conservation_determinism_and_policy_caps() {
        let (users, params) = targets(3);
        let mut cfg = RunConfig::new(Policy::TwoStateFinite, 20_000, 9);
        cfg.thresholds = vec![0.0, 1e-4, 3e-4];
        cfg.per_user = true;
        cfg.power_subsample = 1000;
        let a = run(&users, &params, 1e-7, &cfg).unwrap();
        let b = run(&users, &params, 1e-7, &cfg).unwrap();
        assert_eq!(a.stats, b.stats);
        assert_eq!(a.power_trace, b.power_trace);
        assert_eq!(a.power_trace.len(), 20);
        let t = &a.stats.pooled;
        assert_eq!(t.arrivals, t.departures + t.backlog_end);
        for u in &a.stats.per_user {
            assert_eq!(u.arrivals, u.departures + u.backlog_end);
        }
        let ccdf = a.stats.ccdf();
        assert!(ccdf.windows(2).all(|w| w[1] <= w[0]));
        // peak bandwidth never exceeds every user at full rate in its worst block
        assert!(a.stats.power.max_bandwidth > 0.0);
    }

    #[test]
    fn replications_merge_counts() {
        let (users, params) = targets(2);
        let cfg = RunConfig::new(Policy::TwoStateLargeNt, 5_000, 4);
        let one = run(&users, &params, 1e-7, &cfg).unwrap();
        let two = run_replicated(&users, &params, 1e-7, &cfg, 2).unwrap();
        assert_eq!(two.stats.frames, 10_000);
        assert!(two.stats.pooled.arrivals > one.stats.pooled.arrivals);
        let t = &two.stats.pooled;
        assert_eq!(t.arrivals, t.departures + t.backlog_end);
    }
}
