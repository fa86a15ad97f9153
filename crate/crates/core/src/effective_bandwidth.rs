//! QoS exponent and effective bandwidth of a Poisson arrival process.
//!
//! Arrival rates are in packets per frame, effective bandwidths in packets
//! per second. A delay requirement `(D, eps)` is enforced through the upper
//! bound `exp(-theta * E_B * D) = eps` on the delay-violation probability.

use crate::{Error, Result};

/// QoS exponent for a given arrival rate and delay requirement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QosExponent {
    /// No arrivals: the delay requirement imposes no service constraint.
    Unconstrained,
    Value(f64),
}

impl QosExponent {
    pub fn value(self) -> Option<f64> {
        match self {
            QosExponent::Unconstrained => None,
            QosExponent::Value(theta) => Some(theta),
        }
    }
}

fn check_requirement(
    arrival_rate: f64,
    frame: f64,
    delay_bound: f64,
    violation_prob: f64,
) -> Result<()> {
    if !(arrival_rate >= 0.0 && arrival_rate.is_finite()) {
        return Err(Error::domain(format!(
            "arrival rate {arrival_rate} must be >= 0"
        )));
    }
    if !(frame > 0.0) {
        return Err(Error::domain(format!("frame duration {frame} must be > 0")));
    }
    if !(delay_bound > 0.0) {
        return Err(Error::domain(format!(
            "delay bound {delay_bound} must be > 0"
        )));
    }
    if !(violation_prob > 0.0 && violation_prob < 1.0) {
        return Err(Error::domain(format!(
            "violation probability {violation_prob} must lie in (0, 1)"
        )));
    }
    Ok(())
}

/// `ln(1/eps)` formed from the stored probability, never from `1/eps`.
#[inline]
pub fn log_inverse(prob: f64) -> f64 {
    -prob.ln()
}

/// Solves `exp(-theta * E_B(theta) * D) = eps` for the Poisson effective
/// bandwidth, giving `theta = ln(T_f ln(1/eps) / (lambda D) + 1)`.
pub fn qos_exponent(
    arrival_rate: f64,
    frame: f64,
    delay_bound: f64,
    violation_prob: f64,
) -> Result<QosExponent> {
    check_requirement(arrival_rate, frame, delay_bound, violation_prob)?;
    if arrival_rate == 0.0 {
        return Ok(QosExponent::Unconstrained);
    }
    let ratio = frame * log_inverse(violation_prob) / (arrival_rate * delay_bound);
    Ok(QosExponent::Value(ratio.ln_1p()))
}

/// Effective bandwidth `lambda / (T_f theta) * (e^theta - 1)` in packets/s.
pub fn effective_bandwidth_poisson(arrival_rate: f64, frame: f64, theta: f64) -> Result<f64> {
    if !(theta > 0.0) {
        return Err(Error::domain(format!("QoS exponent {theta} must be > 0")));
    }
    if !(arrival_rate >= 0.0) {
        return Err(Error::domain(format!(
            "arrival rate {arrival_rate} must be >= 0"
        )));
    }
    if !(frame > 0.0) {
        return Err(Error::domain(format!("frame duration {frame} must be > 0")));
    }
    Ok(arrival_rate / (frame * theta) * theta.exp_m1())
}

/// Effective bandwidth written directly in terms of the delay requirement.
/// Zero arrivals need zero service.
pub fn effective_bandwidth_qos(
    arrival_rate: f64,
    frame: f64,
    delay_bound: f64,
    violation_prob: f64,
) -> Result<f64> {
    match qos_exponent(arrival_rate, frame, delay_bound, violation_prob)? {
        QosExponent::Unconstrained => Ok(0.0),
        QosExponent::Value(theta) => Ok(log_inverse(violation_prob) / (delay_bound * theta)),
    }
}

/// Upper bound `exp(-theta E_B D_th)` on `Pr{D > D_th}`.
pub fn delay_violation_upper_bound(theta: f64, effective_bw: f64, threshold: f64) -> f64 {
    (-theta * effective_bw * threshold).exp()
}
