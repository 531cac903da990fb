//! Rates of nested entanglement-swapping repeater chains.
//!
//! A chain of `N = 2^n` elementary links covers `L`, each link of length
//! `L0 = L / N` with a central heralding station. Links are established
//! independently, neighbours are swapped level by level, and two parallel
//! chains are finally projected onto a polarization-entangled pair.
//!
//! Model constants:
//!
//! | quantity | value |
//! |---|---|
//! | waiting-time factor per level | [`WAIT_FACTOR`] = 3/2 |
//! | swap success, vacuum weight `q` | `q e (1 - q e / 2)`, `e = eta_m eta_d` |
//! | vacuum weight after a swap | `q / (2 - q e)` |
//! | final two-chain projection | `(q e)^2 / 2` |
//! | DLCZ error | `c N^2 p` |
//! | single-photon-source error | `c' N^2 p2 / p1` |
//!
//! `q` is the weight of the single-excitation part of a link state; the rest
//! is vacuum that later swaps and the final projection filter out. DLCZ links
//! start at `q = 1`, so their last step costs `eta_m^2 eta_d^2 / 2`.
//! Memories are assumed not to decohere.

use crate::error::{check_range, Result, SimError};
use crate::wcp::ChannelModel;

pub const WAIT_FACTOR: f64 = 1.5;
pub const DEFAULT_FIBER_SPEED_KM_S: f64 = 2e5;
/// Grid used to pick the single-photon-source beamsplitter ratio.
pub const BETA_STEPS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct RepeaterConfig {
    pub total_length_km: f64,
    pub link_count: u32,
    pub attenuation_db_per_km: f64,
    pub fiber_speed_km_s: f64,
    pub detector_eff: f64,
    pub memory_eff: f64,
    pub fidelity_target: f64,
    /// Multi-pair error constant `c` of DLCZ links.
    pub dlcz_error_constant: f64,
    /// Two-photon error constant `c'` of single-photon-source links.
    pub sps_error_constant: f64,
}

impl Default for RepeaterConfig {
    fn default() -> Self {
        Self {
            total_length_km: 1000.0,
            link_count: 16,
            attenuation_db_per_km: ChannelModel::DEFAULT_ATTENUATION,
            fiber_speed_km_s: DEFAULT_FIBER_SPEED_KM_S,
            detector_eff: 0.9,
            memory_eff: 0.9,
            fidelity_target: 0.9,
            dlcz_error_constant: 1.0,
            sps_error_constant: 1.0,
        }
    }
}

impl RepeaterConfig {
    pub fn validate(&self) -> Result<()> {
        check_range(
            "total_length_km",
            self.total_length_km,
            f64::MIN_POSITIVE,
            f64::MAX,
            "L > 0",
        )?;
        if self.link_count == 0 || !self.link_count.is_power_of_two() {
            return Err(SimError::OutOfRange {
                name: "link_count",
                value: self.link_count as f64,
                expected: "a power of two >= 1",
            });
        }
        check_range(
            "attenuation_db_per_km",
            self.attenuation_db_per_km,
            0.0,
            f64::MAX,
            "a >= 0",
        )?;
        check_range(
            "fiber_speed_km_s",
            self.fiber_speed_km_s,
            f64::MIN_POSITIVE,
            f64::MAX,
            "v > 0",
        )?;
        check_range("detector_eff", self.detector_eff, 0.0, 1.0, "0 <= eta_d <= 1")?;
        check_range("memory_eff", self.memory_eff, 0.0, 1.0, "0 <= eta_m <= 1")?;
        check_range("fidelity_target", self.fidelity_target, 0.0, 1.0, "0 <= F <= 1")?;
        check_range(
            "dlcz_error_constant",
            self.dlcz_error_constant,
            f64::MIN_POSITIVE,
            f64::MAX,
            "c > 0",
        )?;
        check_range(
            "sps_error_constant",
            self.sps_error_constant,
            f64::MIN_POSITIVE,
            f64::MAX,
            "c' > 0",
        )
    }

    pub fn link_length_km(&self) -> f64 {
        self.total_length_km / self.link_count as f64
    }

    pub fn nesting_levels(&self) -> u32 {
        self.link_count.trailing_zeros()
    }

    /// Transmission of one elementary link, `eta_t`.
    pub fn link_transmission(&self) -> f64 {
        10f64.powf(-self.attenuation_db_per_km * self.link_length_km() / 10.0)
    }

    /// Transmission from a node to its link's central station.
    pub fn half_link_transmission(&self) -> f64 {
        10f64.powf(-self.attenuation_db_per_km * self.link_length_km() / 20.0)
    }

    fn swap_efficiency(&self) -> f64 {
        self.memory_eff * self.detector_eff
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LinkArchitecture {
    /// Two-mode squeezing in atomic ensembles with pair probability `p`.
    Dlcz { p: f64 },
    /// Single photons (`p1` one-photon, `p2` two-photon probability) split on a
    /// beamsplitter sending a fraction `beta` to the station.
    Sps { p1: f64, p2: f64, beta: f64 },
}

impl LinkArchitecture {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LinkArchitecture::Dlcz { p } => check_range("p", p, 0.0, 1.0, "0 <= p <= 1"),
            LinkArchitecture::Sps { p1, p2, beta } => {
                check_range("p1", p1, 0.0, 1.0, "0 <= p1 <= 1")?;
                check_range("p2", p2, 0.0, 1.0 - p1, "0 <= p2 <= 1 - p1")?;
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(SimError::OutOfRange {
                        name: "beta",
                        value: beta,
                        expected: "0 < beta < 1",
                    });
                }
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LinkArchitecture::Dlcz { .. } => "dlcz",
            LinkArchitecture::Sps { .. } => "sps",
        }
    }

    /// Emission probability reported in tables: `p` for DLCZ, `p1` otherwise.
    pub fn emission_probability(&self) -> f64 {
        match *self {
            LinkArchitecture::Dlcz { p } => p,
            LinkArchitecture::Sps { p1, .. } => p1,
        }
    }
}

/// Largest DLCZ pair probability keeping `c N^2 p <= 1 - F`.
pub fn max_allowed_pair_prob(link_count: u32, fidelity_target: f64, c: f64) -> Result<f64> {
    if link_count == 0 {
        return Err(SimError::OutOfRange {
            name: "link_count",
            value: 0.0,
            expected: "N >= 1",
        });
    }
    if !(fidelity_target > 0.0 && fidelity_target < 1.0) {
        return Err(SimError::OutOfRange {
            name: "fidelity_target",
            value: fidelity_target,
            expected: "0 < F < 1",
        });
    }
    check_range("c", c, f64::MIN_POSITIVE, f64::MAX, "c > 0")?;
    let n = link_count as f64;
    Ok((1.0 - fidelity_target) / (c * n * n))
}

/// Heralding statistics of one elementary link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkSuccess {
    pub probability: f64,
    /// Single-excitation weight of the heralded state.
    pub single_excitation_weight: f64,
    /// First-order heralded-state error `N^2` times the per-link term.
    pub error: f64,
}

/// `P0` of one link with `eta = eta_d eta_half`. DLCZ: `2 p eta`.
/// Single-photon sources: `2 p1 beta eta (1 - p1 beta eta)`, a single click;
/// the fraction `p1 (1 - beta) / (1 - p1 beta eta)` of those heralds leaves one
/// excitation in the link.
pub fn link_success_probability(arch: &LinkArchitecture, config: &RepeaterConfig) -> Result<LinkSuccess> {
    arch.validate()?;
    config.validate()?;
    let eta = config.detector_eff * config.half_link_transmission();
    let n2 = (config.link_count as f64).powi(2);
    Ok(match *arch {
        LinkArchitecture::Dlcz { p } => LinkSuccess {
            probability: 2.0 * p * eta,
            single_excitation_weight: 1.0,
            error: config.dlcz_error_constant * n2 * p,
        },
        LinkArchitecture::Sps { p1, p2, beta } => {
            let sent = p1 * beta;
            // one photon detected; the other memory keeps its excitation, holds
            // nothing, or lost a transmitted photon on the way
            let probability = 2.0 * sent * eta * (1.0 - sent * eta);
            let good = 2.0 * sent * eta * p1 * (1.0 - beta);
            let q = if probability > 0.0 { good / probability } else { 0.0 };
            LinkSuccess {
                probability,
                single_excitation_weight: q,
                error: if p1 > 0.0 {
                    config.sps_error_constant * n2 * p2 / p1
                } else {
                    f64::INFINITY
                },
            }
        }
    })
}

/// Swap success probabilities per nesting level, and the single-excitation
/// weight left after the last level.
pub fn swap_successes(q0: f64, config: &RepeaterConfig) -> (Vec<f64>, f64) {
    let e = config.swap_efficiency();
    let mut q = q0;
    let mut levels = Vec::with_capacity(config.nesting_levels() as usize);
    for _ in 0..config.nesting_levels() {
        levels.push(q * e * (1.0 - q * e / 2.0));
        q /= 2.0 - q * e;
    }
    (levels, q)
}

/// `T0 = (L0 / v) / P0`, then `T_{k+1} = (3/2) T_k / P_swap,k`.
pub fn chain_waiting_time(p0: f64, config: &RepeaterConfig, swap_successes: &[f64]) -> Result<f64> {
    config.validate()?;
    if !(p0 > 0.0 && p0 <= 1.0) {
        return Err(SimError::OutOfRange {
            name: "P0",
            value: p0,
            expected: "0 < P0 <= 1",
        });
    }
    if swap_successes.len() != config.nesting_levels() as usize {
        return Err(SimError::OutcomeArity {
            expected: config.nesting_levels() as usize,
            got: swap_successes.len(),
        });
    }
    let mut t = config.link_length_km() / config.fiber_speed_km_s / p0;
    for &p in swap_successes {
        if !(p > 0.0 && p <= 1.0) {
            return Err(SimError::OutOfRange {
                name: "P_swap",
                value: p,
                expected: "0 < P_swap <= 1",
            });
        }
        t *= WAIT_FACTOR / p;
    }
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RepeaterRate {
    pub rate_hz: f64,
    pub fidelity: f64,
}

/// Rate of polarization-entangled pairs across the chain and the first-order
/// fidelity estimate `1 - error`.
pub fn repeater_rate(arch: &LinkArchitecture, config: &RepeaterConfig) -> Result<RepeaterRate> {
    let link = link_success_probability(arch, config)?;
    let budget = 1.0 - config.fidelity_target;
    let infeasible = match *arch {
        LinkArchitecture::Dlcz { p } => {
            let p_max = max_allowed_pair_prob(config.link_count, config.fidelity_target, config.dlcz_error_constant)?;
            (p > p_max * (1.0 + 1e-12)).then(|| format!("DLCZ p = {p:e} exceeds p_max = {p_max:e}"))
        }
        LinkArchitecture::Sps { .. } => (link.error > budget * (1.0 + 1e-12))
            .then(|| format!("two-photon error {:.3e} exceeds 1 - F = {budget:.3e}", link.error)),
    };
    if let Some(msg) = infeasible {
        return Err(SimError::Infeasible(msg));
    }
    if link.probability <= 0.0 {
        return Err(SimError::DegenerateParameters("link never heralds".into()));
    }
    let (levels, q) = swap_successes(link.single_excitation_weight, config);
    let t_chain = chain_waiting_time(link.probability, config, &levels)?;
    let projection = (q * config.swap_efficiency()).powi(2) / 2.0;
    if projection <= 0.0 {
        return Err(SimError::DegenerateParameters("final projection never succeeds".into()));
    }
    Ok(RepeaterRate {
        rate_hz: projection / (WAIT_FACTOR * t_chain),
        fidelity: 1.0 - link.error,
    })
}

/// Rate of a single elementary link, `N = 1`, over `link_length_km`.
pub fn link_rate(arch: &LinkArchitecture, config: &RepeaterConfig) -> Result<RepeaterRate> {
    let single = RepeaterConfig {
        total_length_km: config.link_length_km(),
        link_count: 1,
        ..config.clone()
    };
    repeater_rate(arch, &single)
}

/// Best beamsplitter ratio on the grid `beta = i / BETA_STEPS`; ties keep
/// the smaller `beta`.
pub fn optimize_sps_beta(p1: f64, p2: f64, config: &RepeaterConfig) -> Result<(f64, RepeaterRate)> {
    let mut best: Option<(f64, RepeaterRate)> = None;
    for i in 1..BETA_STEPS {
        let beta = i as f64 / BETA_STEPS as f64;
        let r = repeater_rate(&LinkArchitecture::Sps { p1, p2, beta }, config)?;
        if best.is_none_or(|(_, b)| r.rate_hz > b.rate_hz) {
            best = Some((beta, r));
        }
    }
    Ok(best.expect("non-empty grid"))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArchitectureComparison {
    pub p1: f64,
    pub p2: f64,
    pub beta: f64,
    pub sps: RepeaterRate,
    pub dlcz_p: f64,
    pub dlcz: RepeaterRate,
    pub ratio: f64,
}

/// SPS/DLCZ rate ratio at one source efficiency, with DLCZ at `p_max` and
/// the single-photon-source beamsplitter optimized.
pub fn compare_at(p1: f64, p2: f64, config: &RepeaterConfig) -> Result<ArchitectureComparison> {
    let dlcz_p = max_allowed_pair_prob(config.link_count, config.fidelity_target, config.dlcz_error_constant)?;
    let dlcz = repeater_rate(&LinkArchitecture::Dlcz { p: dlcz_p }, config)?;
    let (beta, sps) = optimize_sps_beta(p1, p2, config)?;
    Ok(ArchitectureComparison {
        p1,
        p2,
        beta,
        sps,
        dlcz_p,
        dlcz,
        ratio: sps.rate_hz / dlcz.rate_hz,
    })
}

pub fn compare_architectures(
    config: &RepeaterConfig,
    p1_values: &[f64],
    p2: f64,
) -> Result<Vec<ArchitectureComparison>> {
    p1_values.iter().map(|&p1| compare_at(p1, p2, config)).collect()
}

/// Source efficiency at which both architectures give the same rate, by
/// bisection on `[lo, hi]`. `None` when the ratio does not cross 1 there.
pub fn crossover_efficiency(config: &RepeaterConfig, p2: f64, lo: f64, hi: f64) -> Result<Option<f64>> {
    let log_ratio = |p1: f64| -> Result<f64> { Ok(compare_at(p1, p2, config)?.ratio.ln()) };
    let (mut lo, mut hi) = (lo, hi);
    let (f_lo, f_hi) = (log_ratio(lo)?, log_ratio(hi)?);
    if f_lo.signum() == f_hi.signum() {
        return Ok(None);
    }
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if (log_ratio(mid)? < 0.0) == (f_lo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lossless() -> RepeaterConfig {
        RepeaterConfig {
            attenuation_db_per_km: 0.0,
            detector_eff: 1.0,
            memory_eff: 1.0,
            link_count: 1,
            ..Default::default()
        }
    }

    #[test]
    fn p_max_quadratic() {
        let p16 = max_allowed_pair_prob(16, 0.9, 1.0).unwrap();
        assert!((p16 - 0.1 / 256.0).abs() < 1e-15);
        let p32 = max_allowed_pair_prob(32, 0.9, 1.0).unwrap();
        assert!((p16 / p32 - 4.0).abs() < 1e-12);
        assert!(max_allowed_pair_prob(4, 1.0, 1.0).is_err());
    }

    #[test]
    fn dlcz_link_probability() {
        let s = link_success_probability(&LinkArchitecture::Dlcz { p: 0.01 }, &lossless()).unwrap();
        assert!((s.probability - 0.02).abs() < 1e-15);
        let zero = link_success_probability(&LinkArchitecture::Dlcz { p: 0.0 }, &lossless()).unwrap();
        assert_eq!(zero.probability, 0.0);
        let sps = LinkArchitecture::Sps {
            p1: 0.0,
            p2: 0.0,
            beta: 0.5,
        };
        assert_eq!(link_success_probability(&sps, &lossless()).unwrap().probability, 0.0);
    }

    #[test]
    fn halving_link_length_gains_attenuation() {
        let cfg = RepeaterConfig::default();
        let arch = LinkArchitecture::Dlcz { p: 1e-4 };
        let full = link_success_probability(&arch, &cfg).unwrap().probability;
        let doubled = RepeaterConfig {
            link_count: cfg.link_count * 2,
            ..cfg.clone()
        };
        let half = link_success_probability(&arch, &doubled).unwrap().probability;
        let l0 = cfg.link_length_km();
        let expected = 10f64.powf(cfg.attenuation_db_per_km * l0 / 40.0);
        assert!((half / full / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sps_link_with_ideal_source() {
        let cfg = lossless();
        let beta = 0.25;
        let s = link_success_probability(&LinkArchitecture::Sps { p1: 1.0, p2: 0.0, beta }, &cfg).unwrap();
        assert!((s.probability - 2.0 * beta * (1.0 - beta)).abs() < 1e-15);
        assert!((s.single_excitation_weight - 1.0).abs() < 1e-15);
        let lossy = RepeaterConfig {
            detector_eff: 0.5,
            ..cfg
        };
        let s = link_success_probability(&LinkArchitecture::Sps { p1: 0.8, p2: 0.0, beta }, &lossy).unwrap();
        let good = 2.0 * 0.8 * beta * 0.5 * 0.8 * (1.0 - beta);
        assert!((s.single_excitation_weight * s.probability - good).abs() < 1e-15);
    }

    #[test]
    fn waiting_time_recursion() {
        let cfg = RepeaterConfig {
            link_count: 2,
            ..Default::default()
        };
        let t0 = chain_waiting_time(
            0.1,
            &RepeaterConfig {
                link_count: 1,
                ..cfg.clone()
            },
            &[],
        )
        .unwrap();
        let expected_t0 = 1000.0 / 2e5 / 0.1;
        assert!((t0 - expected_t0).abs() < 1e-15);
        let t1 = chain_waiting_time(0.1, &cfg, &[1.0]).unwrap();
        let l0_time = cfg.link_length_km() / cfg.fiber_speed_km_s / 0.1;
        assert!((t1 - 1.5 * l0_time).abs() < 1e-15);
        assert!(chain_waiting_time(0.1, &cfg, &[0.0]).is_err());
        assert!(chain_waiting_time(0.0, &cfg, &[0.5]).is_err());
        assert!(chain_waiting_time(0.1, &cfg, &[]).is_err());
    }

    #[test]
    fn dlcz_last_step_is_half_eta_squared() {
        let cfg = RepeaterConfig {
            link_count: 1,
            ..Default::default()
        };
        let p = max_allowed_pair_prob(1, 0.9, 1.0).unwrap();
        let arch = LinkArchitecture::Dlcz { p };
        let r = repeater_rate(&arch, &cfg).unwrap();
        let p0 = link_success_probability(&arch, &cfg).unwrap().probability;
        let t = chain_waiting_time(p0, &cfg, &[]).unwrap();
        let e = 0.81;
        assert!((r.rate_hz - e * e / 2.0 / (1.5 * t)).abs() < 1e-12 * r.rate_hz);
        assert!((r.fidelity - 0.9).abs() < 1e-12);
    }

    #[test]
    fn link_rate_is_single_link_chain() {
        let cfg = RepeaterConfig {
            link_count: 1,
            total_length_km: 62.5,
            ..Default::default()
        };
        let arch = LinkArchitecture::Dlcz { p: 1e-3 };
        assert_eq!(link_rate(&arch, &cfg).unwrap(), repeater_rate(&arch, &cfg).unwrap());
        let chain = RepeaterConfig {
            link_count: 16,
            total_length_km: 1000.0,
            ..cfg
        };
        let dlcz = LinkArchitecture::Dlcz { p: 1e-4 };
        assert!(link_rate(&dlcz, &chain).unwrap().rate_hz > repeater_rate(&dlcz, &chain).unwrap().rate_hz);
    }

    #[test]
    fn infeasible_targets() {
        let cfg = RepeaterConfig::default();
        let too_bright = LinkArchitecture::Dlcz { p: 1e-2 };
        assert!(matches!(repeater_rate(&too_bright, &cfg), Err(SimError::Infeasible(_))));
        let noisy = LinkArchitecture::Sps {
            p1: 0.9,
            p2: 1e-2,
            beta: 0.1,
        };
        assert!(matches!(repeater_rate(&noisy, &cfg), Err(SimError::Infeasible(_))));
        let bad = RepeaterConfig {
            link_count: 3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ratio_increases_with_source_efficiency() {
        let cfg = RepeaterConfig::default();
        let rows = compare_architectures(&cfg, &[0.6, 0.7, 0.8, 0.9, 0.95, 0.999], 1e-4).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].ratio > w[0].ratio);
        }
    }
}
