//! Discrete-state M/D/1 queue: Poisson arrivals, one packet served per
//! service slot of length `T_f / s`.
//!
//! `stationary_pmf` returns the embedded-chain queue-length distribution
//! `pi_l`. The queueing delay satisfies
//! `Pr{D > T_f l / s} = 1 - sum_{i=0}^{l} pi_i`, which is the exact
//! waiting-time CCDF of the continuous-time M/D/1 queue at multiples of the
//! service time.
//!
//! The classical closed form for `pi_l` is an alternating sum whose terms
//! grow like `e^{l gamma}`, so it is only usable for small `l` and only in
//! extended precision ([`closed_form_pmf`]). Production values come from
//! the level-crossing balance of the embedded chain,
//!
//! ```text
//! a_0 pi_{l+1} = pi_0 A_{l+1} + sum_{i=1}^{l} pi_i A_{l-i+2},   A_m = Pr{A >= m},
//! ```
//!
//! in which every term is non-negative.

use serde::Serialize;

use crate::{Error, Result};

/// Parameters of one constant-service queue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MdoneSpec {
    /// `gamma = lambda / s`.
    pub utilization: f64,
    /// Service `s` (packets/frame).
    pub service: f64,
    /// Frame duration `T_f` (s).
    pub frame: f64,
}

impl MdoneSpec {
    pub fn new(arrival_rate: f64, service: f64, frame: f64) -> Result<Self> {
        if !(service > 0.0) {
            return Err(Error::domain(format!("service {service} must be positive")));
        }
        if !(arrival_rate >= 0.0) {
            return Err(Error::domain(format!(
                "arrival rate {arrival_rate} must be >= 0"
            )));
        }
        let spec = Self {
            utilization: arrival_rate / service,
            service,
            frame,
        };
        check_stable(spec.utilization)?;
        Ok(spec)
    }

    /// Delay `T_f l / s` at which the `l`-th point of the CCDF sits.
    pub fn threshold(&self, l: usize) -> f64 {
        self.frame * l as f64 / self.service
    }
}

fn check_stable(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0) {
        return Err(Error::domain(format!("utilization {gamma} must be >= 0")));
    }
    if gamma >= 1.0 {
        return Err(Error::Unstable(gamma));
    }
    Ok(())
}

/// Embedded chain whose pmf is extended on demand.
struct Chain {
    a0: f64,
    /// `Pr{A >= m}` for `m = 0..`, truncated where it underflows.
    tails: Vec<f64>,
    pi: Vec<f64>,
}

impl Chain {
    fn new(gamma: f64) -> Self {
        // Poisson pmf until the terms vanish, summed from the far end so the
        // small tails keep full relative precision.
        let mut pmf = Vec::new();
        let mut term = (-gamma).exp();
        let mut j = 0usize;
        while term > 0.0 {
            pmf.push(term);
            j += 1;
            term *= gamma / j as f64;
        }
        let mut tails = vec![0.0; pmf.len() + 1];
        for m in (0..pmf.len()).rev() {
            tails[m] = tails[m + 1] + pmf[m];
        }
        tails[0] = 1.0;
        while tails.last() == Some(&0.0) {
            tails.pop();
        }
        Self {
            a0: (-gamma).exp(),
            tails,
            pi: vec![1.0 - gamma],
        }
    }

    fn tail(&self, m: usize) -> f64 {
        self.tails.get(m).copied().unwrap_or(0.0)
    }

    /// Extends the pmf so that `pi[len - 1]` exists.
    fn extend_to(&mut self, len: usize) {
        let width = self.tails.len();
        while self.pi.len() < len {
            let l = self.pi.len() - 1;
            let mut flow = self.pi[0] * self.tail(l + 1);
            // only terms with a non-zero tail factor contribute
            let first = (l + 3).saturating_sub(width).max(1);
            for i in first..=l {
                flow += self.pi[i] * self.tails[l - i + 2];
            }
            self.pi.push(flow / self.a0);
        }
    }
}

/// Stationary queue-length probabilities `pi_0..=pi_{l_max}`.
pub fn stationary_pmf(gamma: f64, l_max: usize) -> Result<Vec<f64>> {
    check_stable(gamma)?;
    if gamma == 0.0 {
        let mut pi = vec![0.0; l_max + 1];
        pi[0] = 1.0;
        return Ok(pi);
    }
    let mut chain = Chain::new(gamma);
    chain.extend_to(l_max + 1);
    Ok(chain.pi)
}

const MAX_STATES: usize = 1 << 22;

/// Queueing-delay CCDF `Pr{D > T_f l / s}` for `l = 0..=l_max`.
///
/// Evaluated as the tail mass `sum_{i>l} pi_i`. The pmf is extended until
/// its terms fall below `1e-18` of `pi_{l_max + 1}`; the remainder is
/// closed with the geometric continuation of the last two terms.
pub fn delay_ccdf_curve(gamma: f64, l_max: usize) -> Result<Vec<f64>> {
    check_stable(gamma)?;
    if gamma == 0.0 {
        return Ok(vec![0.0; l_max + 1]);
    }
    let mut chain = Chain::new(gamma);
    chain.extend_to(l_max + 2);
    let reference = chain.pi[l_max + 1];
    loop {
        let last = *chain.pi.last().unwrap();
        if last == 0.0 || last < 1e-18 * reference {
            break;
        }
        if chain.pi.len() >= MAX_STATES {
            return Err(Error::NoConvergence {
                what: "M/D/1 tail summation",
                iterations: chain.pi.len(),
            });
        }
        let len = chain.pi.len();
        chain.extend_to(len + len / 2 + 16);
    }
    let pi = &chain.pi;
    let n = pi.len();
    let ratio = pi[n - 1] / pi[n - 2];
    let mut tail = if ratio > 0.0 && ratio < 1.0 {
        pi[n - 1] * ratio / (1.0 - ratio)
    } else {
        0.0
    };
    let mut out = vec![0.0; l_max + 1];
    for l in (0..n - 1).rev() {
        tail += pi[l + 1];
        if l <= l_max {
            out[l] = tail;
        }
    }
    Ok(out)
}

/// `Pr{D > T_f l / s}` for one `l`.
pub fn delay_ccdf(spec: &MdoneSpec, l: usize) -> Result<f64> {
    Ok(delay_ccdf_curve(spec.utilization, l)?[l])
}

/// Smallest `L` such that the total mass beyond `L` is below `tol`.
pub fn truncation_point(gamma: f64, tol: f64) -> Result<usize> {
    check_stable(gamma)?;
    let mut l_max = 16;
    loop {
        let ccdf = delay_ccdf_curve(gamma, l_max)?;
        if let Some(l) = ccdf.iter().position(|&c| c < tol) {
            return Ok(l);
        }
        l_max *= 2;
    }
}

/// Probability that the buffer is non-empty, `1 - pi_0 = gamma`.
pub fn buffer_nonempty_prob(gamma: f64) -> Result<f64> {
    check_stable(gamma)?;
    Ok(gamma)
}

/// Closed-form `pi_l` evaluated in double-double arithmetic:
///
/// ```text
/// pi_0 = 1 - g,  pi_1 = (1 - g)(e^g - 1),
/// pi_l = (1 - g) { e^{lg} + sum_{i=1}^{l-1} e^{ig} (-1)^{l-i}
///         [ (ig)^{l-i} / (l-i)! + (ig)^{l-i-1} / (l-i-1)! ] }
/// ```
///
/// Kept as an independent cross-check of [`stationary_pmf`]; accurate to
/// about `1e-12` absolute for `l <= 40` and `g < 1`.
pub fn closed_form_pmf(gamma: f64, l: usize) -> Result<f64> {
    check_stable(gamma)?;
    let one_minus = Dd::from(1.0).sub(Dd::from(gamma));
    if l == 0 {
        return Ok(one_minus.to_f64());
    }
    let eg = Dd::exp_small(gamma);
    if l == 1 {
        return Ok(one_minus.mul(eg.sub(Dd::from(1.0))).to_f64());
    }
    let mut sum = eg.powi(l as u32);
    for i in 1..l {
        let n = l - i;
        let ig = Dd::from(i as f64).mul_f64(gamma);
        // (ig)^{n-1} / (n-1)!, then one more factor for (ig)^n / n!
        let mut lower = Dd::from(1.0);
        for k in 1..n {
            lower = lower.mul(ig).div_f64(k as f64);
        }
        let upper = lower.mul(ig).div_f64(n as f64);
        let mut term = eg.powi(i as u32).mul(upper.add(lower));
        if n % 2 == 1 {
            term = term.neg();
        }
        sum = sum.add(term);
    }
    Ok(one_minus.mul(sum).to_f64())
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl From<f64> for Dd {
    fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn neg(self) -> Self {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }

    fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    fn mul_f64(self, b: f64) -> Dd {
        let (p, e) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p, e + self.lo * b);
        Dd { hi, lo }
    }

    fn div_f64(self, b: f64) -> Dd {
        let q1 = self.hi / b;
        let r = self.sub(Dd::from(q1).mul_f64(b));
        let q2 = r.hi / b;
        let r = r.sub(Dd::from(q2).mul_f64(b));
        let q3 = r.hi / b;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo }.add(Dd::from(q3))
    }

    fn powi(self, n: u32) -> Dd {
        let mut acc = Dd::from(1.0);
        for _ in 0..n {
            acc = acc.mul(self);
        }
        acc
    }

    /// `e^x` for `0 <= x < 1` by Taylor series.
    fn exp_small(x: f64) -> Dd {
        let mut sum = Dd::from(1.0);
        let mut term = Dd::from(1.0);
        for k in 1..60 {
            term = term.mul_f64(x).div_f64(k as f64);
            sum = sum.add(term);
            if term.hi.abs() < 1e-34 {
                break;
            }
        }
        sum
    }
}
