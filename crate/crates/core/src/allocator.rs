//! QoS-constrained power and bandwidth minimization.
//!
//! Each user needs `s` packets in the current frame. With the transmit power
//! eliminated through the rate equation, the per-user cost
//! `P + rho P^cw W` depends only on the spectral efficiency
//! `x = log2(1 + alpha P g / (N_0 W))`:
//!
//! ```text
//! cost(x) = s u / (Phi T_D) * N_0 / (alpha g) * (2^x - 1 + c) / x,
//! c = rho P^cw alpha g / N_0.
//! ```
//!
//! The optimal `x` is independent of `s`, so the optimal power and bandwidth
//! are both linear in `s` and their ratio is constant for a fixed channel.

use serde::Serialize;

use crate::optim::{bisect_increasing, golden_section};
use crate::scenario::{SystemParams, UserLink};
use crate::{Error, Result};

const MAX_ITER: usize = 200;
const REL_TOL: f64 = 1e-10;

/// Per-user, per-frame resource decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Allocation {
    pub user_id: usize,
    /// `P^t` (W).
    pub transmit_power: f64,
    /// `W` (Hz).
    pub bandwidth: f64,
    /// Packets delivered this frame.
    pub target: f64,
}

impl Allocation {
    pub fn idle(user_id: usize) -> Self {
        Self {
            user_id,
            transmit_power: 0.0,
            bandwidth: 0.0,
            target: 0.0,
        }
    }

    pub fn with_user(self, user_id: usize) -> Self {
        Self { user_id, ..self }
    }

    /// `P + rho P^cw W`, the per-user objective.
    pub fn cost(&self, params: &SystemParams) -> f64 {
        self.transmit_power + params.pa_efficiency * params.circuit_per_bw * self.bandwidth
    }
}

/// Total BS power `P_tot = (1/rho) sum P^t + P^cw sum W + P_0^c` split into
/// its components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerBreakdown {
    pub total: f64,
    /// `sum P^t` (before the amplifier loss).
    pub transmit: f64,
    /// `P^cw sum W`.
    pub circuit_bandwidth: f64,
    pub circuit_static: f64,
}

/// Two-state service target `min{Q, T_f E_B}`.
pub fn two_state_target(backlog: f64, effective_bw: f64, frame: f64) -> f64 {
    backlog.min(frame * effective_bw).max(0.0)
}

/// Optimal operating point of one link for a unit target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSolution {
    /// Spectral efficiency `log2(1 + SNR)` at the optimum.
    pub efficiency: f64,
    /// Transmit power per delivered packet (W).
    pub power_per_packet: f64,
    /// Bandwidth per delivered packet (Hz).
    pub bandwidth_per_packet: f64,
}

impl LinkSolution {
    pub fn allocate(&self, target: f64) -> Allocation {
        if target <= 0.0 {
            return Allocation::idle(0);
        }
        Allocation {
            user_id: 0,
            transmit_power: self.power_per_packet * target,
            bandwidth: self.bandwidth_per_packet * target,
            target,
        }
    }
}

/// `2^x (x ln2 - 1) + 1`, the stationarity function of `(2^x - 1 + c) / x`;
/// the optimum satisfies `stationarity(x) = c`. Strictly increasing.
fn stationarity(x: f64) -> f64 {
    let y = x * std::f64::consts::LN_2;
    if y < 0.5 {
        // sum_{n>=2} (n-1) y^n / n!
        let mut term = y; // y^n / n! for n = 1
        let mut sum = 0.0;
        for n in 2..40 {
            term *= y / n as f64;
            let add = (n - 1) as f64 * term;
            sum += add;
            if add < 1e-18 * sum {
                break;
            }
        }
        sum
    } else {
        y.exp_m1() * (y - 1.0) + y
    }
}

/// Spectral efficiency minimizing `(2^x - 1 + c) / x`: golden-section on
/// `ln x`, then bisection on the stationarity condition.
fn optimal_efficiency(c: f64) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::domain(format!(
            "circuit-to-noise ratio {c} must be positive and finite"
        )));
    }
    const LN_MIN: f64 = -27.631_021_115_928_547; // ln 1e-12
    const LN_MAX: f64 = 6.907_755_278_982_137; // ln 1000
    let objective = |t: f64| {
        let x = t.exp();
        ((x * std::f64::consts::LN_2).exp_m1() + c) / x
    };
    let min = golden_section(objective, LN_MIN, LN_MAX, 1e-9, REL_TOL, MAX_ITER)?;
    if min.x - LN_MIN < 1e-6 || LN_MAX - min.x < 1e-6 {
        return Err(Error::NoConvergence {
            what: "spectral-efficiency bracket",
            iterations: min.iterations,
        });
    }
    let residual = |x: f64| stationarity(x) - c;
    // widen the golden bracket slightly; fall back to the full range
    let (lo, hi) = ((min.lo - 1e-3).exp(), (min.hi + 1e-3).exp());
    let (lo, hi) = if residual(lo) <= 0.0 && residual(hi) >= 0.0 {
        (lo, hi)
    } else {
        (LN_MIN.exp(), LN_MAX.exp())
    };
    bisect_increasing(residual, lo, hi, MAX_ITER)
}

/// Optimal link operating point for gains `alpha` and `g`.
pub fn solve_link(large_scale_gain: f64, gain: f64, params: &SystemParams) -> Result<LinkSolution> {
    if !(large_scale_gain > 0.0 && gain > 0.0) {
        return Err(Error::domain(format!(
            "channel gains must be positive: alpha={large_scale_gain}, g={gain}"
        )));
    }
    let noise_over_gain = params.noise_psd / (large_scale_gain * gain);
    let c = params.pa_efficiency * params.circuit_per_bw / noise_over_gain;
    let x = optimal_efficiency(c)?;
    let bandwidth_per_packet = 1.0 / (params.packets_per_hz() * x);
    let power_per_packet =
        noise_over_gain * (x * std::f64::consts::LN_2).exp_m1() * bandwidth_per_packet;
    Ok(LinkSolution {
        efficiency: x,
        power_per_packet,
        bandwidth_per_packet,
    })
}

/// Minimizes `P + rho P^cw W` subject to delivering exactly `target`
/// packets. No power or bandwidth caps apply.
pub fn min_power_alloc(
    target: f64,
    large_scale_gain: f64,
    gain: f64,
    params: &SystemParams,
) -> Result<Allocation> {
    if !(target >= 0.0) {
        return Err(Error::domain(format!("target {target} must be >= 0")));
    }
    if target == 0.0 {
        return Ok(Allocation::idle(0));
    }
    Ok(solve_link(large_scale_gain, gain, params)?.allocate(target))
}

/// Large-antenna power-to-bandwidth ratio `P^tw` (W/Hz): the minimizer of
/// `f(r) = (r/rho + P^cw) / log2(1 + alpha N_t r / N_0)`, located by
/// golden-section on `ln r` and polished with Newton steps on `f'(r) = 0`.
pub fn ptw_ratio(large_scale_gain: f64, antennas: u32, params: &SystemParams) -> Result<f64> {
    if !(large_scale_gain > 0.0) || antennas == 0 {
        return Err(Error::domain("ptw_ratio needs alpha > 0 and N_t >= 1"));
    }
    let rho = params.pa_efficiency;
    let pcw = params.circuit_per_bw;
    let k = large_scale_gain * antennas as f64 / params.noise_psd;
    let ln2 = std::f64::consts::LN_2;
    let f = |r: f64| (r / rho + pcw) / ((k * r).ln_1p() / ln2);

    let (ln_lo, ln_hi) = (1e-18f64.ln(), 1e6f64.ln());
    let min = golden_section(|t| f(t.exp()), ln_lo, ln_hi, 1e-9, REL_TOL, MAX_ITER)?;
    if min.x - ln_lo < 1e-6 || ln_hi - min.x < 1e-6 {
        return Err(Error::NoConvergence {
            what: "P^tw bracket",
            iterations: min.iterations,
        });
    }
    let (lo, hi) = (min.lo.exp(), min.hi.exp());

    // phi(r) = L(r)/rho - (r/rho + P^cw) k / ((1 + k r) ln 2), f' = phi / L^2
    let phi = |r: f64| (k * r).ln_1p() / ln2 / rho - (r / rho + pcw) * k / ((1.0 + k * r) * ln2);
    let dphi = |r: f64| (r / rho + pcw) * k * k / ((1.0 + k * r).powi(2) * ln2);
    let mut r = min.x.exp();
    for _ in 0..MAX_ITER {
        let step = phi(r) / dphi(r);
        let mut next = r - step;
        if !(next > lo * 0.5 && next < hi * 2.0) {
            next = r - step.signum() * 0.5 * r.min((hi - lo).abs());
        }
        let done = (next - r).abs() <= 4.0 * f64::EPSILON * r;
        r = next;
        if done {
            return Ok(r);
        }
    }
    Err(Error::NoConvergence {
        what: "P^tw Newton polish",
        iterations: MAX_ITER,
    })
}

fn log2_term(large_scale_gain: f64, antennas: u32, ptw: f64, params: &SystemParams) -> f64 {
    (large_scale_gain * antennas as f64 * ptw / params.noise_psd).ln_1p() / std::f64::consts::LN_2
}

/// Large-antenna optimum: `W* = u s / (Phi T_D log2(1 + alpha N_t P^tw / N_0))`
/// and `P* = P^tw W*`.
pub fn closed_form_alloc(
    target: f64,
    large_scale_gain: f64,
    antennas: u32,
    ptw: f64,
    params: &SystemParams,
) -> Allocation {
    if target <= 0.0 {
        return Allocation::idle(0);
    }
    let bandwidth =
        target / (params.packets_per_hz() * log2_term(large_scale_gain, antennas, ptw, params));
    Allocation {
        user_id: 0,
        transmit_power: ptw * bandwidth,
        bandwidth,
        target,
    }
}

pub fn total_power(allocs: &[Allocation], params: &SystemParams) -> PowerBreakdown {
    let transmit: f64 = allocs.iter().map(|a| a.transmit_power).sum();
    let bandwidth: f64 = allocs.iter().map(|a| a.bandwidth).sum();
    power_from_sums(transmit, bandwidth, params)
}

pub(crate) fn power_from_sums(
    transmit: f64,
    bandwidth: f64,
    params: &SystemParams,
) -> PowerBreakdown {
    let circuit_bandwidth = params.circuit_per_bw * bandwidth;
    PowerBreakdown {
        total: transmit / params.pa_efficiency + circuit_bandwidth + params.circuit_static,
        transmit,
        circuit_bandwidth,
        circuit_static: params.circuit_static,
    }
}

/// Average power of the large-antenna two-state policy, which is also the
/// infinite-delay lower bound:
/// `sum_k (P^tw_k / rho + P^cw) u (1 - eps_D) lambda_k / (Phi T_D log2(1 + alpha_k N_t P^tw_k / N_0)) + P_0^c`
/// with `lambda_k` in packets per frame. `params.antennas` is `N_t`.
pub fn avg_power_lower_bound(
    users: &[UserLink],
    params: &SystemParams,
    reliability_loss: f64,
) -> Result<f64> {
    let mut total = params.circuit_static;
    for user in users {
        if user.arrival_rate == 0.0 {
            continue;
        }
        let ptw = ptw_ratio(user.large_scale_gain, params.antennas, params)?;
        let served = (1.0 - reliability_loss) * user.arrival_rate;
        total += (ptw / params.pa_efficiency + params.circuit_per_bw) * served
            / (params.packets_per_hz()
                * log2_term(user.large_scale_gain, params.antennas, ptw, params));
    }
    Ok(total)
}

/// Upper bounds on the peak total transmit power and bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResourceBounds {
    /// W.
    pub transmit_power: f64,
    /// Hz.
    pub bandwidth: f64,
}

/// Peak resources when every buffer holds at least `T_f E_B` packets:
///
/// ```text
/// W_req <= sum_k u T_f ln(1/eps^q) / (Phi T_D D^q_max)
///          / ( log2(1 + alpha_k N_t P^tw_k / N_0) ln[T_f ln(1/eps^q) / (lambda_k D^q_max) + 1] )
/// ```
///
/// and the same sum weighted by `P^tw_k` for the transmit power.
pub fn required_resource_bounds(
    users: &[UserLink],
    params: &SystemParams,
) -> Result<ResourceBounds> {
    let mut bounds = ResourceBounds {
        transmit_power: 0.0,
        bandwidth: 0.0,
    };
    let tf = params.frame_duration;
    for user in users {
        if user.arrival_rate == 0.0 {
            continue;
        }
        let ptw = ptw_ratio(user.large_scale_gain, params.antennas, params)?;
        let log_inv = -user.qos.violation_prob.ln();
        let d = user.qos.delay_bound;
        let theta = (tf * log_inv / (user.arrival_rate * d)).ln_1p();
        let w = tf * log_inv
            / (params.packets_per_hz() * d)
            / (log2_term(user.large_scale_gain, params.antennas, ptw, params) * theta);
        bounds.bandwidth += w;
        bounds.transmit_power += ptw * w;
    }
    Ok(bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::achievable_packets;
    use crate::scenario::{path_loss, QueueQoS};
    use approx::assert_relative_eq;

    fn params() -> SystemParams {
        SystemParams::default()
    }

    /// Exhaustive log-grid search over W with P forced by the rate equation.
    fn grid_cost(target: f64, alpha: f64, g: f64, p: &SystemParams, centre: f64) -> f64 {
        let n = 10_000;
        (0..n)
            .map(|i| {
                let w = centre * 10f64.powf(-3.0 + 6.0 * i as f64 / (n - 1) as f64);
                let x = target / (p.packets_per_hz() * w);
                let power = p.noise_psd * w * (x * std::f64::consts::LN_2).exp_m1() / (alpha * g);
                power + p.pa_efficiency * p.circuit_per_bw * w
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn two_state_points() {
        assert_eq!(two_state_target(0.0, 7934.0, 1e-4), 0.0);
        assert_relative_eq!(
            two_state_target(5.0, 7934.0, 1e-4),
            0.7934,
            max_relative = 1e-12
        );
        assert_eq!(two_state_target(0.3, 7934.0, 1e-4), 0.3);
    }

    #[test]
    fn zero_target_is_idle() {
        let a = min_power_alloc(0.0, 1e-9, 8.0, &params()).unwrap();
        assert_eq!((a.transmit_power, a.bandwidth), (0.0, 0.0));
        let c = closed_form_alloc(0.0, 1e-9, 8, 1e-8, &params());
        assert_eq!((c.transmit_power, c.bandwidth), (0.0, 0.0));
    }

    #[test]
    fn beats_grid_search_and_meets_target() {
        let p = params();
        let alpha = path_loss(60.0).unwrap();
        for &(s, g) in &[(0.79, 8.0), (0.05, 0.3), (3.0, 20.0), (0.4, 1e-3)] {
            let a = min_power_alloc(s, alpha, g, &p).unwrap();
            let oracle = grid_cost(s, alpha, g, &p, a.bandwidth);
            assert!(a.cost(&p) <= oracle * (1.0 + 1e-6), "s={s} g={g}");
            let delivered =
                achievable_packets(a.transmit_power, a.bandwidth, alpha, g, &p).unwrap();
            assert_relative_eq!(delivered, s, max_relative = 1e-8);
        }
    }

    #[test]
    fn kkt_gradients_are_collinear() {
        let p = params();
        let (alpha, g, s) = (path_loss(80.0).unwrap(), 6.0, 0.8);
        let a = min_power_alloc(s, alpha, g, &p).unwrap();
        let rate = |pw: f64, w: f64| achievable_packets(pw, w, alpha, g, &p).unwrap();
        let (hp, hw) = (a.transmit_power * 1e-6, a.bandwidth * 1e-6);
        let ds_dp = (rate(a.transmit_power + hp, a.bandwidth)
            - rate(a.transmit_power - hp, a.bandwidth))
            / (2.0 * hp);
        let ds_dw = (rate(a.transmit_power, a.bandwidth + hw)
            - rate(a.transmit_power, a.bandwidth - hw))
            / (2.0 * hw);
        // grad cost = (1, rho P^cw) must be parallel to grad s
        let cross = ds_dw - p.pa_efficiency * p.circuit_per_bw * ds_dp;
        assert!(cross.abs() < 1e-6 * ds_dw.abs(), "{cross} vs {ds_dw}");
    }

    #[test]
    fn better_channel_costs_less() {
        let p = params();
        let alpha = path_loss(50.0).unwrap();
        let a = min_power_alloc(0.8, alpha, 2.0, &p).unwrap();
        let b = min_power_alloc(0.8, alpha, 8.0, &p).unwrap();
        assert!(b.cost(&p) < a.cost(&p));
    }

    #[test]
    fn linear_in_target() {
        let p = params();
        let alpha = path_loss(50.0).unwrap();
        let one = min_power_alloc(1.0, alpha, 3.0, &p).unwrap();
        let many = min_power_alloc(2.5, alpha, 3.0, &p).unwrap();
        assert_relative_eq!(
            many.transmit_power,
            2.5 * one.transmit_power,
            max_relative = 1e-14
        );
        assert_relative_eq!(many.bandwidth, 2.5 * one.bandwidth, max_relative = 1e-14);
    }

    #[test]
    fn ptw_is_stationary_and_matches_solver() {
        let p = params();
        for &(d, nt) in &[(20.0, 2u32), (120.0, 8), (300.0, 32)] {
            let alpha = path_loss(d).unwrap();
            let pp = p.with_antennas(nt);
            let r = ptw_ratio(alpha, nt, &pp).unwrap();
            let k = alpha * nt as f64 / pp.noise_psd;
            let ln2 = std::f64::consts::LN_2;
            let l = (k * r).ln_1p() / ln2;
            let f = (r / pp.pa_efficiency + pp.circuit_per_bw) / l;
            let phi = l / pp.pa_efficiency
                - (r / pp.pa_efficiency + pp.circuit_per_bw) * k / ((1.0 + k * r) * ln2);
            assert!((phi / (l * l)).abs() < 1e-10 * f / r);
            for &s in &[0.1, 0.79, 4.0] {
                let a = min_power_alloc(s, alpha, nt as f64, &pp).unwrap();
                assert_relative_eq!(a.transmit_power / a.bandwidth, r, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn ptw_objective_blows_up_at_both_ends() {
        let p = params();
        let alpha = path_loss(100.0).unwrap();
        let k = alpha * 8.0 / p.noise_psd;
        let f = |r: f64| {
            (r / p.pa_efficiency + p.circuit_per_bw) / ((k * r).ln_1p() / std::f64::consts::LN_2)
        };
        let r = ptw_ratio(alpha, 8, &p).unwrap();
        assert!(f(r * 1e-6) > 10.0 * f(r));
        assert!(f(r * 1e6) > 10.0 * f(r));
    }

    #[test]
    fn closed_form_matches_numerical_solver() {
        for &nt in &[2u32, 8, 64] {
            let p = params().with_antennas(nt);
            for &d in &[15.0, 90.0, 210.0] {
                let alpha = path_loss(d).unwrap();
                let ptw = ptw_ratio(alpha, nt, &p).unwrap();
                for &s in &[0.01, 0.5, 2.0] {
                    let c = closed_form_alloc(s, alpha, nt, ptw, &p);
                    let n = min_power_alloc(s, alpha, nt as f64, &p).unwrap();
                    assert_relative_eq!(c.transmit_power, n.transmit_power, max_relative = 1e-6);
                    assert_relative_eq!(c.bandwidth, n.bandwidth, max_relative = 1e-6);
                    let delivered =
                        achievable_packets(c.transmit_power, c.bandwidth, alpha, nt as f64, &p)
                            .unwrap();
                    assert_relative_eq!(delivered, s, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn total_power_reference() {
        let p = params();
        let empty = total_power(&[], &p);
        assert_relative_eq!(empty.total, 1.088, max_relative = 1e-12);
        let one = Allocation {
            user_id: 0,
            transmit_power: 1.0,
            bandwidth: 1e6,
            target: 1.0,
        };
        let b = total_power(&[one], &p);
        assert_relative_eq!(b.total, 3.664, max_relative = 1e-12);
        let doubled = Allocation {
            transmit_power: 2.0,
            ..one
        };
        let b2 = total_power(&[doubled], &p);
        assert_relative_eq!(
            b2.total - b.total,
            1.0 / p.pa_efficiency,
            max_relative = 1e-12
        );
    }

    fn user(alpha: f64, lambda: f64) -> UserLink {
        let qos = QueueQoS {
            delay_bound: 0.9e-3,
            violation_prob: 5e-8,
            qos_exponent: None,
            effective_bw: 0.0,
        }
        .with_arrivals(lambda, 1e-4)
        .unwrap();
        UserLink {
            id: 0,
            distance: 0.0,
            large_scale_gain: alpha,
            nearby: vec![1],
            arrival_rate: lambda,
            is_edge: false,
            qos,
        }
    }

    #[test]
    fn lower_bound_properties() {
        let p = params();
        let alpha = path_loss(70.0).unwrap();
        assert_eq!(
            avg_power_lower_bound(&[user(alpha, 0.0)], &p, 1e-7).unwrap(),
            p.circuit_static
        );
        let a = avg_power_lower_bound(&[user(alpha, 0.16)], &p, 1e-7).unwrap();
        let b = avg_power_lower_bound(&[user(alpha, 0.2)], &p, 1e-7).unwrap();
        assert!(b > a && a > p.circuit_static);
        // equals the closed-form allocation at the mean served load
        let ptw = ptw_ratio(alpha, 8, &p).unwrap();
        let c = closed_form_alloc((1.0 - 1e-7) * 0.16, alpha, 8, ptw, &p);
        assert_relative_eq!(a, total_power(&[c], &p).total, max_relative = 1e-12);
    }

    #[test]
    fn resource_bounds_equal_full_rate_allocation() {
        let p = params();
        let alpha = path_loss(70.0).unwrap();
        let u = user(alpha, 0.16);
        let b = required_resource_bounds(std::slice::from_ref(&u), &p).unwrap();
        let ptw = ptw_ratio(alpha, 8, &p).unwrap();
        let c = closed_form_alloc(u.qos.service_per_frame(1e-4), alpha, 8, ptw, &p);
        assert_relative_eq!(b.bandwidth, c.bandwidth, max_relative = 1e-12);
        assert_relative_eq!(b.transmit_power, c.transmit_power, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let p = params();
        assert!(min_power_alloc(-1.0, 1e-9, 1.0, &p).is_err());
        assert!(min_power_alloc(1.0, 0.0, 1.0, &p).is_err());
        let no_circuit = SystemParams {
            circuit_per_bw: 0.0,
            ..p
        };
        assert!(min_power_alloc(1.0, 1e-9, 1.0, &no_circuit).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn optimum_is_unimodal_minimum(
                s in 0.01f64..5.0,
                d in 10.0f64..400.0,
                g in 0.05f64..40.0,
            ) {
                let p = params();
                let alpha = path_loss(d).unwrap();
                let a = min_power_alloc(s, alpha, g, &p).unwrap();
                let cost = |w: f64| {
                    let x = s / (p.packets_per_hz() * w);
                    p.noise_psd * w * (x * std::f64::consts::LN_2).exp_m1() / (alpha * g)
                        + p.pa_efficiency * p.circuit_per_bw * w
                };
                // reduced cost decreases towards W* and increases after it
                let ws: Vec<f64> = (0..41).map(|i| a.bandwidth * 10f64.powf(-2.0 + 0.1 * i as f64)).collect();
                for pair in ws.windows(2) {
                    if pair[1] <= a.bandwidth {
                        prop_assert!(cost(pair[1]) <= cost(pair[0]) * (1.0 + 1e-12));
                    } else if pair[0] >= a.bandwidth {
                        prop_assert!(cost(pair[1]) >= cost(pair[0]) * (1.0 - 1e-12));
                    }
                }
                prop_assert!(a.cost(&p) <= cost(a.bandwidth * 1.001));
                prop_assert!(a.cost(&p) <= cost(a.bandwidth / 1.001));
            }
        }
    }
}
