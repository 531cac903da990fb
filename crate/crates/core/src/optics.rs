//! Light sources and detectors.

use num_complex::Complex64;

use crate::error::{check_range, Result, SimError};
use crate::fock::{FockState, MixedState, ModeLabel, Truncation};

/// Largest probability an emitted state may lose to truncation.
pub const MAX_EMISSION_LEAK: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectorKind {
    /// Click / no-click only.
    Threshold,
    NumberResolving,
}

/// Outcome of a single detector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectionOutcome {
    NoClick,
    Click,
    /// Registered photon count; number-resolving detectors only.
    Count(u8),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorModel {
    kind: DetectorKind,
    efficiency: f64,
    dark_prob: f64,
}

impl DetectorModel {
    pub fn new(kind: DetectorKind, efficiency: f64, dark_prob: f64) -> Result<Self> {
        check_range("efficiency", efficiency, 0.0, 1.0, "0 <= eta <= 1")?;
        if !(dark_prob.is_finite() && (0.0..1.0).contains(&dark_prob)) {
            return Err(SimError::OutOfRange {
                name: "dark_prob",
                value: dark_prob,
                expected: "0 <= d < 1",
            });
        }
        Ok(Self {
            kind,
            efficiency,
            dark_prob,
        })
    }

    /// Threshold detector without dark counts.
    ///
    /// # Panics
    /// If `efficiency` is outside `[0, 1]`.
    pub fn threshold(efficiency: f64) -> Self {
        Self::new(DetectorKind::Threshold, efficiency, 0.0).expect("efficiency in [0, 1]")
    }

    pub fn ideal() -> Self {
        Self::threshold(1.0)
    }

    pub fn with_dark_prob(self, dark_prob: f64) -> Result<Self> {
        Self::new(self.kind, self.efficiency, dark_prob)
    }

    pub fn kind(&self) -> DetectorKind {
        self.kind
    }

    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    pub fn dark_prob(&self) -> f64 {
        self.dark_prob
    }

    /// Probability of `outcome` given `n` photons reach the detector.
    pub fn outcome_probability(&self, outcome: DetectionOutcome, n: u32) -> Result<f64> {
        let eta = self.efficiency;
        let d = self.dark_prob;
        let no_click = (1.0 - d) * (1.0 - eta).powi(n as i32);
        match (self.kind, outcome) {
            (_, DetectionOutcome::NoClick) => Ok(no_click),
            (_, DetectionOutcome::Click) => Ok(1.0 - no_click),
            (DetectorKind::Threshold, DetectionOutcome::Count(_)) => Err(SimError::UnsupportedOutcome),
            (DetectorKind::NumberResolving, DetectionOutcome::Count(k)) => {
                let k = k as u32;
                let detected = |j: u32| -> f64 {
                    if j > n {
                        0.0
                    } else {
                        binomial(n, j) * eta.powi(j as i32) * (1.0 - eta).powi((n - j) as i32)
                    }
                };
                let dark = if k == 0 { 0.0 } else { d * detected(k - 1) };
                Ok((1.0 - d) * detected(k) + dark)
            }
        }
    }

    /// The outcome that heralds a single photon on this detector.
    pub fn herald_outcome(&self) -> DetectionOutcome {
        match self.kind {
            DetectorKind::Threshold => DetectionOutcome::Click,
            DetectorKind::NumberResolving => DetectionOutcome::Count(1),
        }
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0_f64, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SourceModel {
    /// Weak laser pulse with mean photon number `mu = |alpha|^2`.
    Coherent { mu: f64 },
    /// Two-mode squeezed vacuum `sqrt(1-p) sum_n p^{n/2} |n,n>`.
    SpdcPair { p: f64 },
    /// Two squeezers creating `a_h b_v` and `-a_v b_h` pairs, each with parameter `p`.
    PolarizationEntangledPair { p: f64 },
    /// SPDC pair whose idler is detected to announce the signal photon.
    HeraldedSps { p: f64, herald: DetectorModel },
    /// Phase-randomized emitter: one photon with `p1`, two with `p2`.
    OnDemandSps { p1: f64, p2: f64 },
}

impl SourceModel {
    pub fn validate(&self) -> Result<()> {
        let below_one = |name: &'static str, p: f64| {
            if p.is_finite() && (0.0..1.0).contains(&p) {
                Ok(())
            } else {
                Err(SimError::OutOfRange {
                    name,
                    value: p,
                    expected: "0 <= p < 1",
                })
            }
        };
        match *self {
            SourceModel::Coherent { mu } => check_range("mu", mu, 0.0, f64::MAX, "mu >= 0"),
            SourceModel::SpdcPair { p }
            | SourceModel::PolarizationEntangledPair { p }
            | SourceModel::HeraldedSps { p, .. } => below_one("p", p),
            SourceModel::OnDemandSps { p1, p2 } => {
                check_range("p1", p1, 0.0, 1.0, "0 <= p1 <= 1")?;
                check_range("p2", p2, 0.0, p1, "0 <= p2 <= p1")?;
                check_range("p1 + p2", p1 + p2, 0.0, 1.0, "p1 + p2 <= 1")
            }
        }
    }

    fn mode_count(&self) -> usize {
        match self {
            SourceModel::Coherent { .. } | SourceModel::HeraldedSps { .. } | SourceModel::OnDemandSps { .. } => 1,
            SourceModel::SpdcPair { .. } => 2,
            SourceModel::PolarizationEntangledPair { .. } => 4,
        }
    }
}

/// A prepared state together with the probability that preparation succeeded.
#[derive(Clone, Debug)]
pub struct Emission {
    pub state: MixedState,
    /// 1 for unconditional sources, the herald probability otherwise.
    pub probability: f64,
    /// Probability removed by truncation before renormalization.
    pub leaked: f64,
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn truncated_pure(
    modes: Vec<ModeLabel>,
    truncation: Truncation,
    amplitudes: Vec<(Vec<u8>, Complex64)>,
) -> Result<(MixedState, f64)> {
    let kept: f64 = amplitudes.iter().map(|(_, a)| a.norm_sqr()).sum();
    let leaked = (1.0 - kept).max(0.0);
    if leaked > MAX_EMISSION_LEAK {
        return Err(SimError::TruncationOverflow {
            leaked,
            limit: MAX_EMISSION_LEAK,
        });
    }
    let state = FockState::from_amplitudes(modes, truncation, amplitudes)?;
    Ok((MixedState::pure(state)?, leaked))
}

/// Prepares the output of `source` on `modes`.
///
/// Mode counts: one for coherent and single-photon sources, two for
/// [`SourceModel::SpdcPair`], four (`a_h, a_v, b_h, b_v`) for
/// [`SourceModel::PolarizationEntangledPair`].
pub fn emit(source: &SourceModel, modes: &[ModeLabel], truncation: Truncation) -> Result<Emission> {
    source.validate()?;
    if modes.len() != source.mode_count() {
        return Err(SimError::OutcomeArity {
            expected: source.mode_count(),
            got: modes.len(),
        });
    }
    let n_max = truncation.n_max();
    match *source {
        SourceModel::Coherent { mu } => {
            let amps = (0..=n_max)
                .map(|n| {
                    let log_p = -mu + n as f64 * mu.ln() - ln_factorial(n as u32);
                    let p = if n == 0 { (-mu).exp() } else { log_p.exp() };
                    (vec![n], c(p.sqrt()))
                })
                .collect();
            let (state, leaked) = truncated_pure(modes.to_vec(), truncation, amps)?;
            Ok(Emission {
                state,
                probability: 1.0,
                leaked,
            })
        }
        SourceModel::SpdcPair { p } => {
            let amps = (0..=n_max)
                .map(|n| (vec![n, n], c(((1.0 - p) * p.powi(n as i32)).sqrt())))
                .collect();
            let (state, leaked) = truncated_pure(modes.to_vec(), truncation, amps)?;
            Ok(Emission {
                state,
                probability: 1.0,
                leaked,
            })
        }
        SourceModel::PolarizationEntangledPair { p } => {
            let mut amps = Vec::new();
            for n in 0..=n_max {
                for m in 0..=n_max {
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    let amp = sign * (1.0 - p) * p.powf((n as f64 + m as f64) / 2.0);
                    amps.push((vec![n, m, m, n], c(amp)));
                }
            }
            let (state, leaked) = truncated_pure(modes.to_vec(), truncation, amps)?;
            Ok(Emission {
                state,
                probability: 1.0,
                leaked,
            })
        }
        SourceModel::OnDemandSps { p1, p2 } => {
            let weights = [(0u8, 1.0 - p1 - p2), (1, p1), (2, p2)];
            let mut branches = Vec::new();
            let mut leaked = 0.0;
            for (n, w) in weights {
                if w <= 0.0 {
                    continue;
                }
                if n > n_max {
                    leaked += w;
                    continue;
                }
                branches.push((w, FockState::basis(modes.to_vec(), truncation, &[n])?));
            }
            if leaked > MAX_EMISSION_LEAK {
                return Err(SimError::TruncationOverflow {
                    leaked,
                    limit: MAX_EMISSION_LEAK,
                });
            }
            Ok(Emission {
                state: MixedState::from_branches(branches)?,
                probability: 1.0,
                leaked,
            })
        }
        SourceModel::HeraldedSps { p, herald } => {
            let idler = ModeLabel::new(format!("{}~herald", modes[0]));
            let pair = emit(
                &SourceModel::SpdcPair { p },
                &[modes[0].clone(), idler.clone()],
                truncation,
            )?;
            let result = pair
                .state
                .measure_povm(std::slice::from_ref(&idler), &herald, &[herald.herald_outcome()])?;
            let conditional = result
                .conditional
                .ok_or_else(|| SimError::DegenerateParameters("herald detector never fires".into()))?;
            Ok(Emission {
                state: conditional.partial_trace(&[idler])?,
                probability: result.probability,
                leaked: pair.leaked,
            })
        }
    }
}

fn ln_factorial(n: u32) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Second-order autocorrelation `<n(n-1)> / <n>^2` of a single-mode state.
pub fn g2_zero(state: &MixedState) -> Result<f64> {
    if state.modes().len() != 1 {
        return Err(SimError::RegistryMismatch);
    }
    let dist = state.photon_number_distribution(&state.modes()[0])?;
    let (mean, factorial2) = dist.iter().enumerate().fold((0.0, 0.0), |(m, f), (n, p)| {
        let n = n as f64;
        (m + n * p, f + n * (n - 1.0) * p)
    });
    if mean <= 0.0 {
        return Err(SimError::UndefinedG2);
    }
    Ok(factorial2 / (mean * mean))
}
