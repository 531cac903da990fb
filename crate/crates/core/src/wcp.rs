//! Weak-coherent-pulse QKD: Poisson statistics, the photon-number-splitting
//! boundary, a simple secure-rate model and the direct-transmission baseline.
//!
//! The rate model credits every detection and subtracts the pulses that leak
//! the full bit to an eavesdropper splitting multi-photon pulses:
//!
//! ```text
//! R = f_rep * sift * max(0, mu t eta - P(n >= k))
//! ```
//!
//! with `k = 2` for BB84 and `k = 3` for SARG, whose sifting hides the basis
//! from two-photon pulses. Decoy-state, DPS and COW operate at `mu` between
//! 0.2 and 0.5 but have no rate model here.

use crate::error::{check_range, Result, SimError};

pub const SECONDS_PER_YEAR: f64 = 365.25 * 24.0 * 3600.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelModel {
    pub length_km: f64,
    pub attenuation_db_per_km: f64,
}

impl ChannelModel {
    pub const DEFAULT_ATTENUATION: f64 = 0.2;

    pub fn new(length_km: f64, attenuation_db_per_km: f64) -> Result<Self> {
        check_range("length_km", length_km, 0.0, f64::MAX, "length >= 0")?;
        check_range(
            "attenuation_db_per_km",
            attenuation_db_per_km,
            0.0,
            f64::MAX,
            "attenuation >= 0",
        )?;
        Ok(Self {
            length_km,
            attenuation_db_per_km,
        })
    }

    /// Telecom fiber at 0.2 dB/km.
    pub fn fiber(length_km: f64) -> Result<Self> {
        Self::new(length_km, Self::DEFAULT_ATTENUATION)
    }

    pub fn loss_db(&self) -> f64 {
        self.length_km * self.attenuation_db_per_km
    }

    pub fn transmission(&self) -> f64 {
        channel_transmission(self)
    }
}

/// `t = 10^(-a L / 10)`.
pub fn channel_transmission(channel: &ChannelModel) -> f64 {
    10f64.powf(-channel.loss_db() / 10.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WcpProtocol {
    Bb84,
    Sarg,
}

impl WcpProtocol {
    pub fn sifting_factor(self) -> f64 {
        match self {
            WcpProtocol::Bb84 => 0.5,
            WcpProtocol::Sarg => 0.25,
        }
    }

    /// Smallest photon number that gives away the key bit.
    pub fn insecure_threshold_photons(self) -> u32 {
        match self {
            WcpProtocol::Bb84 => 2,
            WcpProtocol::Sarg => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WcpProtocol::Bb84 => "BB84",
            WcpProtocol::Sarg => "SARG",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoissonStats {
    pub p_vacuum: f64,
    pub p_single: f64,
    pub p_multi: f64,
    pub p_multi_given_nonempty: f64,
}

pub fn poisson_stats(mu: f64) -> Result<PoissonStats> {
    check_range("mu", mu, 0.0, f64::MAX, "mu >= 0")?;
    let p_vacuum = (-mu).exp();
    let p_single = mu * p_vacuum;
    // -expm1 keeps precision for small mu
    let p_nonempty = -(-mu).exp_m1();
    let p_multi = (p_nonempty - p_single).max(0.0);
    let p_multi_given_nonempty = if mu == 0.0 { 0.0 } else { p_multi / p_nonempty };
    Ok(PoissonStats {
        p_vacuum,
        p_single,
        p_multi,
        p_multi_given_nonempty,
    })
}

/// `P(n >= k)` for a Poisson distribution of mean `mu`.
pub fn poisson_tail(mu: f64, k: u32) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let mut term = (-mu).exp();
    if mu < 1.0 {
        // direct series avoids cancellation in 1 - sum
        for n in 0..k {
            term *= mu / (n + 1) as f64;
        }
        let mut tail = 0.0;
        let mut n = k;
        while term > tail * 1e-17 && n < k + 200 {
            tail += term;
            n += 1;
            term *= mu / n as f64;
        }
        return tail;
    }
    let mut below = 0.0;
    for n in 0..k {
        below += term;
        term *= mu / (n + 1) as f64;
    }
    (1.0 - below).max(0.0)
}

/// Secure against photon-number splitting when the channel transmits at least
/// the multi-photon fraction of non-empty pulses.
pub fn pns_secure(mu: f64, transmission: f64) -> Result<bool> {
    check_range("transmission", transmission, f64::MIN_POSITIVE, 1.0, "0 < t <= 1")?;
    Ok(transmission >= poisson_stats(mu)?.p_multi_given_nonempty)
}

pub fn secure_rate(
    protocol: WcpProtocol,
    mu: f64,
    channel: &ChannelModel,
    detector_efficiency: f64,
    rep_rate: f64,
) -> Result<f64> {
    check_range("detector_efficiency", detector_efficiency, 0.0, 1.0, "0 <= eta <= 1")?;
    check_range("rep_rate", rep_rate, f64::MIN_POSITIVE, f64::MAX, "rep_rate > 0")?;
    check_range("mu", mu, 0.0, f64::MAX, "mu >= 0")?;
    Ok(rate_per_pulse(protocol, mu, channel.transmission() * detector_efficiency) * rep_rate)
}

fn rate_per_pulse(protocol: WcpProtocol, mu: f64, t_eta: f64) -> f64 {
    let signal = mu * t_eta;
    let insecure = poisson_tail(mu, protocol.insecure_threshold_photons());
    protocol.sifting_factor() * (signal - insecure).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimalMu {
    pub mu: f64,
    /// Secure bits per pulse at `mu`.
    pub rate_per_pulse: f64,
    /// No `mu` in the search domain yields a positive rate.
    pub zero_rate: bool,
    /// The optimum sits on the upper end of the search domain.
    pub at_boundary: bool,
}

pub const MU_GRID_STEP: f64 = 1e-4;
pub const MU_TOLERANCE: f64 = 1e-6;

/// Brute-force grid over `mu` in `(0, 1]` followed by golden-section refinement.
pub fn optimal_mu(protocol: WcpProtocol, channel: &ChannelModel, detector_efficiency: f64) -> Result<OptimalMu> {
    check_range("detector_efficiency", detector_efficiency, 0.0, 1.0, "0 <= eta <= 1")?;
    let t_eta = channel.transmission() * detector_efficiency;
    let f = |mu: f64| rate_per_pulse(protocol, mu, t_eta);

    let steps = (1.0 / MU_GRID_STEP).round() as usize;
    let mut best_i = 1;
    let mut best = f(MU_GRID_STEP);
    for i in 2..=steps {
        let r = f(i as f64 * MU_GRID_STEP);
        if r > best {
            best = r;
            best_i = i;
        }
    }
    if best <= 0.0 {
        return Ok(OptimalMu {
            mu: 0.0,
            rate_per_pulse: 0.0,
            zero_rate: true,
            at_boundary: false,
        });
    }
    if best_i == steps {
        return Ok(OptimalMu {
            mu: 1.0,
            rate_per_pulse: best,
            zero_rate: false,
            at_boundary: true,
        });
    }

    let mut lo = (best_i - 1) as f64 * MU_GRID_STEP;
    let mut hi = (best_i + 1) as f64 * MU_GRID_STEP;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > MU_TOLERANCE {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    let mu = 0.5 * (lo + hi);
    Ok(OptimalMu {
        mu,
        rate_per_pulse: f(mu),
        zero_rate: false,
        at_boundary: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectTransmission {
    pub states_per_second: f64,
    pub mean_wait_seconds: f64,
}

impl DirectTransmission {
    pub fn mean_wait_years(&self) -> f64 {
        self.mean_wait_seconds / SECONDS_PER_YEAR
    }
}

pub fn direct_transmission_rate(rep_rate: f64, channel: &ChannelModel) -> Result<DirectTransmission> {
    if !(rep_rate.is_finite() && rep_rate > 0.0) {
        return Err(SimError::OutOfRange {
            name: "rep_rate",
            value: rep_rate,
            expected: "rep_rate > 0",
        });
    }
    let states_per_second = rep_rate * channel.transmission();
    Ok(DirectTransmission {
        states_per_second,
        mean_wait_seconds: 1.0 / states_per_second,
    })
}
