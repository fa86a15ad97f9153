//! Block-fading MISO channel and the per-frame packet-rate equation.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scenario::SystemParams;
use crate::{Error, Result};

/// Stream identifiers keep arrivals and fading of each user on disjoint
/// ChaCha streams of the same seed.
pub(crate) fn user_stream(seed: u64, user: usize, kind: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((user as u64) << 2) | kind);
    rng
}

pub(crate) const ARRIVAL_STREAM: u64 = 0;
pub(crate) const FADING_STREAM: u64 = 1;

/// Instantaneous gain `g = h^H h` with `N_t` i.i.d. unit-variance complex
/// Gaussian entries (Gamma(N_t, 1) distributed).
pub fn sample_gain<R: Rng + ?Sized>(antennas: u32, rng: &mut R) -> f64 {
    let mut g = 0.0;
    for _ in 0..antennas {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        g += 0.5 * (re * re + im * im);
    }
    g
}

/// Packets deliverable in one frame with transmit power `power` (W) over
/// bandwidth `bandwidth` (Hz): `Phi T_D W / u * log2(1 + alpha P g / (N_0 W))`.
/// Zero bandwidth delivers nothing (the continuous extension).
pub fn achievable_packets(
    power: f64,
    bandwidth: f64,
    large_scale_gain: f64,
    gain: f64,
    params: &SystemParams,
) -> Result<f64> {
    if power < 0.0 || bandwidth < 0.0 || large_scale_gain < 0.0 || gain < 0.0 {
        return Err(Error::domain(format!(
            "negative input to the rate equation: P={power}, W={bandwidth}, alpha={large_scale_gain}, g={gain}"
        )));
    }
    if bandwidth == 0.0 || power == 0.0 {
        return Ok(0.0);
    }
    let snr = large_scale_gain * power * gain / (params.noise_psd * bandwidth);
    Ok(params.packets_per_hz() * bandwidth * snr.ln_1p() / std::f64::consts::LN_2)
}

/// Per-user fading gains sampled once per coherence block.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    /// `gains[user][block]`.
    pub gains: Vec<Vec<f64>>,
    pub frames_per_block: u64,
    pub seed: u64,
}

impl ChannelTrace {
    pub fn generate(
        users: usize,
        blocks: usize,
        antennas: u32,
        frames_per_block: u64,
        seed: u64,
    ) -> Self {
        let gains = (0..users)
            .map(|k| {
                let mut rng = user_stream(seed, k, FADING_STREAM);
                (0..blocks)
                    .map(|_| sample_gain(antennas, &mut rng))
                    .collect()
            })
            .collect();
        Self {
            gains,
            frames_per_block,
            seed,
        }
    }

    /// Gain of `user` during `frame`.
    pub fn gain(&self, user: usize, frame: u64) -> f64 {
        self.gains[user][(frame / self.frames_per_block) as usize]
    }

    /// `user,block,gain` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user", "block", "gain"])?;
        for (k, row) in self.gains.iter().enumerate() {
            for (b, g) in row.iter().enumerate() {
                w.write_record([k.to_string(), b.to_string(), format!("{g:.17e}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn moments(antennas: u32, n: usize) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..n).map(|_| sample_gain(antennas, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, var)
    }

    #[test]
    fn single_antenna_is_exponential() {
        let (mean, var) = moments(1, 1_000_000);
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn gamma_moments() {
        let (mean, var) = moments(8, 1_000_000);
        assert!((mean / 8.0 - 1.0).abs() < 0.02, "{mean}");
        assert!((var / 8.0 - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn hardening() {
        let (mean, var) = moments(256, 20_000);
        assert!((mean / 256.0 - 1.0).abs() < 0.01);
        // relative spread 1/sqrt(N_t)
        assert!((var.sqrt() / mean - 1.0 / 16.0).abs() < 0.01);
    }

    #[test]
    fn rate_equation_points() {
        let p = SystemParams {
            rate_gap: 0.9,
            dl_phase: 5e-5,
            packet_bits: 160.0,
            ..SystemParams::default()
        };
        let w = 1e6;
        // alpha P g / (N_0 W) = 1023 -> log2 = 10
        let power = 1023.0 * p.noise_psd * w;
        let s = achievable_packets(power, w, 1.0, 1.0, &p).unwrap();
        assert_relative_eq!(s, 0.9 * 5e-5 * 1e6 / 160.0 * 10.0, max_relative = 1e-12);
        assert_relative_eq!(s, 2.8125, max_relative = 1e-12);
        assert_eq!(achievable_packets(0.0, w, 1.0, 1.0, &p).unwrap(), 0.0);
        assert_eq!(achievable_packets(1.0, 0.0, 1.0, 1.0, &p).unwrap(), 0.0);
        assert!(achievable_packets(-1.0, w, 1.0, 1.0, &p).is_err());
        let tiny = achievable_packets(1e-3, 1e-3, 1e-10, 8.0, &p).unwrap();
        assert!(tiny < 1e-6);
    }

    #[test]
    fn trace_structure_and_reproducibility() {
        let a = ChannelTrace::generate(3, 5, 4, 20, 11);
        let b = ChannelTrace::generate(3, 5, 4, 20, 11);
        assert_eq!(a, b);
        assert_eq!(a.gain(1, 0), a.gain(1, 19));
        assert_ne!(a.gain(1, 19), a.gain(1, 20));
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 16);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rate_monotone_and_concave(
                p in 1e-6f64..10.0,
                w in 1e3f64..1e7,
                g in 0.01f64..50.0,
            ) {
                let params = SystemParams::default();
                let alpha = 1e-9;
                let s = |p: f64, w: f64| achievable_packets(p, w, alpha, g, &params).unwrap();
                prop_assert!(s(p * 1.01, w) > s(p, w));
                prop_assert!(achievable_packets(p, w, alpha, g * 1.01, &params).unwrap() > s(p, w));
                // midpoint concavity along a segment in (P, W)
                let (p2, w2) = (p * 3.0, w * 0.5);
                let mid = s(0.5 * (p + p2), 0.5 * (w + w2));
                prop_assert!(mid >= 0.5 * (s(p, w) + s(p2, w2)) * (1.0 - 1e-12));
            }
        }
    }
}
