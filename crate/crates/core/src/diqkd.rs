//! Heralded entanglement distribution for device-independent QKD.
//!
//! Alice's polarization-entangled pair source fills modes `a` and `b`; `b` runs
//! through the fiber to Bob. Bob's two single photons (h and v) enter one port
//! of a beamsplitter whose transmitted output `c` joins `b` on a +-45 degree
//! polarizing beamsplitter; the reflected output `d` stays with Bob. A click in
//! `D+` and in `D~+`, with `D-` and `D~-` silent, heralds an entangled `(a, d)`
//! pair.
//!
//! CHSH statistics use the binning where a missing click is read as `+1`.
//! Heralds that leave a side of `(a, d)` empty are binned like a missed
//! detection; heralds with several photons on a side count as white noise.

use std::f64::consts::{FRAC_PI_4, PI, SQRT_2};

use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{check_range, Result, SimError};
use crate::fock::{BellState, DualRailSectors, FockState, MixedState, ModeLabel, Truncation, TwoQubitState};
use crate::optics::{emit, DetectionOutcome, DetectorModel, SourceModel};
use crate::wcp::ChannelModel;

/// Tsirelson's bound `2 sqrt(2)`.
pub const TSIRELSON: f64 = 2.0 * SQRT_2;

/// Coarse CHSH grid spacing (2 degrees).
pub const CHSH_GRID_STEP: f64 = PI / 90.0;
/// Refinement stops once the step falls below this (radians).
pub const CHSH_REFINE_TOL: f64 = 1e-4;

/// Herald probabilities below this are treated as "never heralds".
pub const MIN_HERALD_PROBABILITY: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq)]
pub struct HeraldSchemeParams {
    /// Squeezing parameter of Alice's pair source (per polarization mode).
    pub pair_p: f64,
    /// Fraction of Bob's photons sent toward the Bell measurement.
    pub bs_transmission: f64,
    /// Fiber carrying mode `b` from Alice to Bob's station.
    pub channel: ChannelModel,
    /// Attenuation Alice may add on `b`, in dB.
    pub extra_loss_db: f64,
    /// Fiber-coupling efficiency of the modes sent to the station, `b` and `c`.
    pub coupling: f64,
    pub station_detectors: DetectorModel,
    pub repetition_rate: f64,
    /// `true`: on-demand emitters; `false`: heralded SPDC sources.
    pub on_demand: bool,
    /// Pair probability of Bob's heralded sources.
    pub sps_pair_p: f64,
    /// Single-photon probability of an on-demand emitter.
    pub on_demand_p1: f64,
    /// Two-photon probability of an on-demand emitter.
    pub on_demand_p2: f64,
}

impl Default for HeraldSchemeParams {
    fn default() -> Self {
        Self {
            pair_p: 1e-3,
            bs_transmission: 1e-2,
            channel: ChannelModel {
                length_km: 10.0,
                attenuation_db_per_km: ChannelModel::DEFAULT_ATTENUATION,
            },
            extra_loss_db: 0.0,
            coupling: 0.9,
            station_detectors: DetectorModel::threshold(0.8),
            repetition_rate: 10e9,
            on_demand: false,
            sps_pair_p: 1e-2,
            on_demand_p1: 1.0,
            on_demand_p2: 0.0,
        }
    }
}

impl HeraldSchemeParams {
    pub fn validate(&self) -> Result<()> {
        check_range("pair_p", self.pair_p, 0.0, 1.0 - f64::EPSILON, "0 <= p < 1")?;
        check_range("bs_transmission", self.bs_transmission, 0.0, 1.0, "0 <= T <= 1")?;
        check_range("extra_loss_db", self.extra_loss_db, 0.0, f64::MAX, "loss >= 0")?;
        check_range("coupling", self.coupling, 0.0, 1.0, "0 <= coupling <= 1")?;
        check_range(
            "repetition_rate",
            self.repetition_rate,
            f64::MIN_POSITIVE,
            f64::MAX,
            "rate > 0",
        )?;
        ChannelModel::new(self.channel.length_km, self.channel.attenuation_db_per_km)?;
        self.bob_source().validate()
    }

    fn bob_source(&self) -> SourceModel {
        if self.on_demand {
            SourceModel::OnDemandSps {
                p1: self.on_demand_p1,
                p2: self.on_demand_p2,
            }
        } else {
            SourceModel::HeraldedSps {
                p: self.sps_pair_p,
                herald: self.station_detectors,
            }
        }
    }

    /// Survival probability of mode `b` from source to station.
    pub fn b_transmission(&self) -> f64 {
        self.coupling * self.channel.transmission() * 10f64.powf(-self.extra_loss_db / 10.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeraldOutcome {
    /// Per-pulse probability of the `D+ / D~+` coincidence, including the
    /// herald probability of heralded sources.
    pub herald_probability: f64,
    pub conditional_state: TwoQubitState,
    /// In-subspace overlap with the closest Bell state.
    pub fidelity_to_bell: f64,
    pub bell_state: BellState,
    pub heralded_rate: f64,
    /// Photon-number sectors of the `(a, d)` modes after the herald.
    pub sectors: DualRailSectors,
    pub truncation_leak: f64,
    pub pruned_mass: f64,
}

/// Simulates one pulse of the heralding circuit in the truncated Fock space.
pub fn run_herald_circuit(params: &HeraldSchemeParams, truncation: Truncation) -> Result<HeraldOutcome> {
    params.validate()?;
    if truncation.n_max() < 2 {
        return Err(SimError::OutOfRange {
            name: "n_max",
            value: truncation.n_max() as f64,
            expected: "n_max >= 2",
        });
    }
    let (ah, av) = ModeLabel::pair("a");
    let (bh, bv) = ModeLabel::pair("b");
    let (ch, cv) = ModeLabel::pair("c");
    let (dh, dv) = ModeLabel::pair("d");

    let pair = emit(
        &SourceModel::PolarizationEntangledPair { p: params.pair_p },
        &[ah.clone(), av.clone(), bh.clone(), bv.clone()],
        truncation,
    )?;
    let source = params.bob_source();
    let photon_h = emit(&source, std::slice::from_ref(&ch), truncation)?;
    let photon_v = emit(&source, std::slice::from_ref(&cv), truncation)?;
    let idle: MixedState = FockState::vacuum(vec![dh.clone(), dv.clone()], truncation)?.into();

    let mut state = pair
        .state
        .tensor_product(&photon_h.state)?
        .tensor_product(&photon_v.state)?
        .tensor_product(&idle)?;

    let t = params.bs_transmission;
    state = state
        .apply_beamsplitter(&ch, &dh, t, 0.0)?
        .apply_beamsplitter(&cv, &dv, t, 0.0)?;
    // only the station-bound modes are coupled into fiber; a and d are
    // measured locally and see the analyzers' efficiency alone
    let eta_b = params.b_transmission();
    for (mode, eta) in [
        (&bh, eta_b),
        (&bv, eta_b),
        (&ch, params.coupling),
        (&cv, params.coupling),
    ] {
        state = state.apply_loss(mode, eta)?;
    }
    state = state.apply_pbs_rotated("b", "c")?;

    let detected = [
        ModeLabel::new("D+"),
        ModeLabel::new("Dt+"),
        ModeLabel::new("D-"),
        ModeLabel::new("Dt-"),
    ];
    use DetectionOutcome::{Click, NoClick};
    let herald = state.measure_povm(&detected, &params.station_detectors, &[Click, Click, NoClick, NoClick])?;
    let source_probability = photon_h.probability * photon_v.probability;
    let herald_probability = herald.probability * source_probability;
    let conditional = match herald.conditional {
        Some(c) if herald_probability >= MIN_HERALD_PROBABILITY => c,
        _ => {
            return Err(SimError::DegenerateParameters(format!(
                "herald probability {herald_probability:.3e} per pulse"
            )))
        }
    };
    let truncation_leak = conditional.leaked_mass() + pair.leaked + photon_h.leaked + photon_v.leaked;
    let pruned_mass = conditional.pruned_mass();
    let two_qubit = conditional.extract_two_qubit_state((&ah, &av), (&dh, &dv))?;
    let sectors = conditional.dual_rail_sectors((&ah, &av), (&dh, &dv))?;
    let (bell_state, fidelity_to_bell) = two_qubit.best_bell_fidelity();
    Ok(HeraldOutcome {
        herald_probability,
        conditional_state: two_qubit,
        fidelity_to_bell,
        bell_state,
        heralded_rate: params.repetition_rate * herald_probability,
        sectors,
        truncation_leak,
        pruned_mass,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoClickPolicy {
    AssignPlusOne,
}

/// Linear-polarization analyzer angles; the observable at angle `theta` is
/// `cos(2 theta) sigma_z + sin(2 theta) sigma_x` with `h` as the `+1` eigenstate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChshSettings {
    pub alice: [f64; 2],
    pub bob: [f64; 2],
    pub no_click: NoClickPolicy,
}

impl ChshSettings {
    pub fn new(alice: [f64; 2], bob: [f64; 2]) -> Self {
        Self {
            alice,
            bob,
            no_click: NoClickPolicy::AssignPlusOne,
        }
    }

    /// Angles reaching `2 sqrt(2)` on the singlet.
    pub fn singlet_optimal() -> Self {
        Self::new([0.0, 3.0 * FRAC_PI_4], [3.0 * PI / 8.0, 5.0 * PI / 8.0])
    }

    fn angles(&self) -> [f64; 4] {
        [self.alice[0], self.alice[1], self.bob[0], self.bob[1]]
    }

    fn from_angles(x: [f64; 4]) -> Self {
        let wrap = |a: f64| a.rem_euclid(PI);
        Self::new([wrap(x[0]), wrap(x[1])], [wrap(x[2]), wrap(x[3])])
    }
}

/// Binned correlator of two polarization analyzers,
/// `E(ta, tb) = n(ta) . J n(tb) + alpha . n(ta) + beta . n(tb) + gamma` with
/// `n(t) = (sin 2t, cos 2t)`; index 0 is the x component, 1 the z component.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BinnedCorrelations {
    pub joint: [[f64; 2]; 2],
    pub alice: [f64; 2],
    pub bob: [f64; 2],
    pub constant: f64,
}

fn pauli_x() -> Matrix2<Complex64> {
    let o = Complex64::new(0.0, 0.0);
    let l = Complex64::new(1.0, 0.0);
    Matrix2::new(o, l, l, o)
}

fn pauli_z() -> Matrix2<Complex64> {
    let o = Complex64::new(0.0, 0.0);
    let l = Complex64::new(1.0, 0.0);
    Matrix2::new(l, o, o, -l)
}

fn bloch_xz(rho: &Matrix2<Complex64>) -> [f64; 2] {
    [2.0 * rho[(0, 1)].re, (rho[(0, 0)] - rho[(1, 1)]).re]
}

impl BinnedCorrelations {
    /// Each side clicks with probability `eta`; a missing click outputs `+1`.
    pub fn from_state(state: &TwoQubitState, eta: f64) -> Self {
        let paulis = [pauli_x(), pauli_z()];
        let id = Matrix2::<Complex64>::identity();
        let kron = |a: &Matrix2<Complex64>, b: &Matrix2<Complex64>| -> Matrix4<Complex64> {
            a.kronecker(b).fixed_view::<4, 4>(0, 0).into_owned()
        };
        let mut out = Self {
            constant: (1.0 - eta) * (1.0 - eta),
            ..Default::default()
        };
        for i in 0..2 {
            out.alice[i] = eta * (1.0 - eta) * state.expectation(&kron(&paulis[i], &id));
            out.bob[i] = eta * (1.0 - eta) * state.expectation(&kron(&id, &paulis[i]));
            for j in 0..2 {
                out.joint[i][j] = eta * eta * state.expectation(&kron(&paulis[i], &paulis[j]));
            }
        }
        out
    }

    /// Statistics of a herald whose output is not confined to one photon per
    /// side. An empty side never clicks and always outputs `+1`; sectors with
    /// several photons on a side are counted as white noise.
    pub fn from_sectors(sectors: &DualRailSectors, pair: &TwoQubitState, eta: f64) -> Self {
        let mut out = Self::from_state(pair, eta).scaled(sectors.both);
        let a = bloch_xz(&sectors.a_only);
        let b = bloch_xz(&sectors.b_only);
        for i in 0..2 {
            out.alice[i] += eta * a[i];
            out.bob[i] += eta * b[i];
        }
        out.constant += (1.0 - eta) * (sectors.a_only_weight() + sectors.b_only_weight())
            + sectors.vacuum
            + sectors.multi * (1.0 - eta) * (1.0 - eta);
        out.scaled(1.0 / sectors.total())
    }

    fn scaled(mut self, w: f64) -> Self {
        for i in 0..2 {
            self.alice[i] *= w;
            self.bob[i] *= w;
            for j in 0..2 {
                self.joint[i][j] *= w;
            }
        }
        self.constant *= w;
        self
    }

    pub fn correlator(&self, theta_a: f64, theta_b: f64) -> f64 {
        let na = [(2.0 * theta_a).sin(), (2.0 * theta_a).cos()];
        let nb = [(2.0 * theta_b).sin(), (2.0 * theta_b).cos()];
        let mut e = self.constant;
        for i in 0..2 {
            e += na[i] * self.alice[i] + nb[i] * self.bob[i];
            for (j, b) in nb.iter().enumerate() {
                e += na[i] * self.joint[i][j] * b;
            }
        }
        e
    }

    fn chsh_angles(&self, x: &[f64; 4]) -> f64 {
        self.correlator(x[0], x[2]) + self.correlator(x[0], x[3]) + self.correlator(x[1], x[2])
            - self.correlator(x[1], x[3])
    }

    pub fn chsh(&self, settings: &ChshSettings) -> f64 {
        self.chsh_angles(&settings.angles())
    }

    /// Error rate of the key taken from both sides measuring at angle 0.
    pub fn qber(&self) -> f64 {
        ((1.0 - self.correlator(0.0, 0.0).abs()) / 2.0).clamp(0.0, 0.5)
    }

    /// Maximizes the CHSH value over the four analyzer angles.
    ///
    /// A 2-degree grid over `[0, pi)` is searched exhaustively (Alice's two
    /// angles decouple once Bob's are fixed), then a compass search halves its
    /// step down to [`CHSH_REFINE_TOL`]. Ties keep the first candidate in
    /// `(b1, b2, a1, a2)` index order, so the result is deterministic.
    pub fn optimize(&self) -> ChshOptimum {
        let n = (PI / CHSH_GRID_STEP).round() as usize;
        let grid: Vec<f64> = (0..n).map(|i| i as f64 * CHSH_GRID_STEP).collect();
        let table: Vec<f64> = grid
            .iter()
            .flat_map(|&a| grid.iter().map(move |&b| (a, b)))
            .map(|(a, b)| self.correlator(a, b))
            .collect();
        let e = |a: usize, b: usize| table[a * n + b];

        let mut best = f64::NEG_INFINITY;
        let mut best_idx = [0usize; 4];
        for b1 in 0..n {
            for b2 in 0..n {
                let (mut a1, mut s1) = (0, f64::NEG_INFINITY);
                let (mut a2, mut s2) = (0, f64::NEG_INFINITY);
                for a in 0..n {
                    let plus = e(a, b1) + e(a, b2);
                    if plus > s1 {
                        s1 = plus;
                        a1 = a;
                    }
                    let minus = e(a, b1) - e(a, b2);
                    if minus > s2 {
                        s2 = minus;
                        a2 = a;
                    }
                }
                if s1 + s2 > best {
                    best = s1 + s2;
                    best_idx = [a1, a2, b1, b2];
                }
            }
        }

        let mut x = best_idx.map(|i| grid[i]);
        let mut step = CHSH_GRID_STEP / 2.0;
        while step >= CHSH_REFINE_TOL {
            let mut improved = false;
            for k in 0..4 {
                for dir in [1.0, -1.0] {
                    let mut trial = x;
                    trial[k] += dir * step;
                    let s = self.chsh_angles(&trial);
                    if s > best + 1e-15 {
                        best = s;
                        x = trial;
                        improved = true;
                    }
                }
            }
            if !improved {
                step /= 2.0;
            }
        }
        ChshOptimum {
            settings: ChshSettings::from_angles(x),
            s_max: best,
        }
    }
}

/// `S = E(A1,B1) + E(A1,B2) + E(A2,B1) - E(A2,B2)` with detection efficiency
/// `eta` on both sides.
pub fn chsh_value(state: &TwoQubitState, settings: &ChshSettings, eta: f64) -> f64 {
    BinnedCorrelations::from_state(state, eta).chsh(settings)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChshOptimum {
    pub settings: ChshSettings,
    pub s_max: f64,
}

/// Maximizes the binned CHSH value; see [`BinnedCorrelations::optimize`].
pub fn optimize_chsh(state: &TwoQubitState, eta: f64) -> ChshOptimum {
    BinnedCorrelations::from_state(state, eta).optimize()
}

/// Detection efficiency at which the singlet stops violating CHSH under the
/// `+1` binning, found by bisection on [`optimize_chsh`].
pub fn detection_threshold() -> f64 {
    let singlet = TwoQubitState::singlet();
    let (mut lo, mut hi) = (0.5, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if optimize_chsh(&singlet, mid).s_max > 2.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// QBER of the z-basis key under the same `+1` binning.
pub fn qber(state: &TwoQubitState, eta: f64) -> f64 {
    BinnedCorrelations::from_state(state, eta).qber()
}

pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }
}

/// Collective-attack device-independent key rate
/// `r = f * max(0, 1 - h(Q) - h((1 + sqrt((S/2)^2 - 1)) / 2))`.
pub fn di_key_rate(s: f64, qber: f64, heralded_rate: f64) -> Result<f64> {
    if !(qber.is_finite() && (0.0..0.5).contains(&qber)) {
        return Err(SimError::OutOfRange {
            name: "qber",
            value: qber,
            expected: "0 <= qber < 0.5",
        });
    }
    check_range("heralded_rate", heralded_rate, 0.0, f64::MAX, "rate >= 0")?;
    if !s.is_finite() || s <= 2.0 {
        return Ok(0.0);
    }
    let s = s.min(TSIRELSON);
    let half = ((s / 2.0).powi(2) - 1.0).max(0.0).sqrt();
    let leak = binary_entropy((1.0 + half) / 2.0);
    Ok(heralded_rate * (1.0 - binary_entropy(qber) - leak).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SourceVariant {
    Heralded,
    OnDemand,
}

impl SourceVariant {
    pub fn name(self) -> &'static str {
        match self {
            SourceVariant::Heralded => "heralded",
            SourceVariant::OnDemand => "on-demand",
        }
    }
}

/// How detector inefficiency enters the Bell test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DetectionMode {
    /// No-clicks are binned into `+1`; efficiency `eta` degrades `S`.
    DeviceIndependent,
    /// Detectors are trusted, so rounds without a click on both sides are
    /// discarded: the Bell test sees unit efficiency and the rate pays for
    /// `eta^2` and for heralds that leave a side empty.
    TrustedDetectors,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeyRatePoint {
    pub distance_km: f64,
    pub extra_loss_db: f64,
    pub variant: SourceVariant,
    pub mode: DetectionMode,
    pub detection_eff: f64,
    pub herald_prob: f64,
    pub s: f64,
    pub qber: f64,
    pub key_rate_bits_per_s: f64,
    pub pair_p: f64,
    pub bs_transmission: f64,
    pub sps_pair_p: f64,
}

/// Key rate of one fully specified configuration. The station and herald
/// detectors use `detection_eff`, as do Alice's and Bob's analyzers.
pub fn key_rate(
    params: &HeraldSchemeParams,
    mode: DetectionMode,
    detection_eff: f64,
    truncation: Truncation,
) -> Result<KeyRatePoint> {
    let station = DetectorModel::new(
        params.station_detectors.kind(),
        detection_eff,
        params.station_detectors.dark_prob(),
    )?;
    let params = HeraldSchemeParams {
        station_detectors: station,
        ..params.clone()
    };
    let outcome = run_herald_circuit(&params, truncation)?;
    let sectors = &outcome.sectors;
    let (correlations, rate_factor) = match mode {
        DetectionMode::DeviceIndependent => (
            BinnedCorrelations::from_sectors(sectors, &outcome.conditional_state, detection_eff),
            1.0,
        ),
        DetectionMode::TrustedDetectors => {
            let clicking = sectors.both + sectors.multi;
            let effective = outcome
                .conditional_state
                .mixed_with_white_noise(sectors.both / clicking);
            (
                BinnedCorrelations::from_state(&effective, 1.0),
                detection_eff * detection_eff * clicking / sectors.total(),
            )
        }
    };
    let s = correlations.optimize().s_max;
    let q = correlations.qber();
    let rate = if q < 0.5 {
        di_key_rate(s, q, outcome.heralded_rate * rate_factor)?
    } else {
        0.0
    };
    Ok(KeyRatePoint {
        distance_km: params.channel.length_km,
        extra_loss_db: params.extra_loss_db,
        variant: if params.on_demand {
            SourceVariant::OnDemand
        } else {
            SourceVariant::Heralded
        },
        mode,
        detection_eff,
        herald_prob: outcome.herald_probability,
        s,
        qber: q,
        key_rate_bits_per_s: rate,
        pair_p: params.pair_p,
        bs_transmission: params.bs_transmission,
        sps_pair_p: params.sps_pair_p,
    })
}

/// Source and beamsplitter settings scanned when optimizing the key rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RateSearch {
    pub pair_p: Vec<f64>,
    pub bs_transmission: Vec<f64>,
    pub sps_pair_p: Vec<f64>,
    pub truncation: Truncation,
}

pub fn log_grid(start: f64, stop: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let (l0, l1) = (start.ln(), stop.ln());
            (0..steps)
                .map(|i| (l0 + (l1 - l0) * i as f64 / (steps - 1) as f64).exp())
                .collect()
        }
    }
}

impl Default for RateSearch {
    fn default() -> Self {
        Self {
            pair_p: log_grid(1e-5, 1e-2, 7),
            bs_transmission: log_grid(1e-3, 0.3, 6),
            sps_pair_p: log_grid(1e-3, 3e-2, 4),
            truncation: Truncation::default(),
        }
    }
}

/// Best key rate over `search` at the channel length in `base`.
///
/// Grid points that overflow the truncation or never herald are skipped.
pub fn optimized_key_rate(
    base: &HeraldSchemeParams,
    mode: DetectionMode,
    detection_eff: f64,
    search: &RateSearch,
) -> Result<KeyRatePoint> {
    let sps_grid: Vec<f64> = if base.on_demand {
        vec![base.sps_pair_p]
    } else {
        search.sps_pair_p.clone()
    };
    let mut candidates = Vec::new();
    for &p in &search.pair_p {
        for &t in &search.bs_transmission {
            for &q in &sps_grid {
                candidates.push(HeraldSchemeParams {
                    pair_p: p,
                    bs_transmission: t,
                    sps_pair_p: q,
                    ..base.clone()
                });
            }
        }
    }
    let results: Vec<Option<KeyRatePoint>> = candidates
        .par_iter()
        .map(|c| match key_rate(c, mode, detection_eff, search.truncation) {
            Ok(point) => Ok(Some(point)),
            Err(SimError::TruncationOverflow { .. } | SimError::DegenerateParameters(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    results
        .into_iter()
        .flatten()
        .fold(None, |best: Option<KeyRatePoint>, cur| match best {
            None => Some(cur),
            Some(b) => {
                let better = cur.key_rate_bits_per_s > b.key_rate_bits_per_s
                    || (cur.key_rate_bits_per_s == b.key_rate_bits_per_s
                        && b.key_rate_bits_per_s == 0.0
                        && cur.s > b.s);
                Some(if better { cur } else { b })
            }
        })
        .ok_or_else(|| SimError::DegenerateParameters("no grid point heralds".into()))
}

/// Key-rate curves: heralded and on-demand sources, each with a fully
/// device-independent detector (efficiency 0.95) and trusted detectors
/// (efficiency 0.8). Rows follow `distances`, then variant, then mode.
///
/// Less loss on `b` is not always better, since multi-pair heralds then grow
/// faster than good ones. Alice can always add attenuation, so each row takes
/// the best sweep point at a distance at least as long, reported with the
/// equivalent `extra_loss_db`.
pub fn rate_vs_distance(
    base: &HeraldSchemeParams,
    distances: &[f64],
    search: &RateSearch,
) -> Result<Vec<KeyRatePoint>> {
    const CURVES: [(bool, DetectionMode, f64); 4] = [
        (false, DetectionMode::DeviceIndependent, 0.95),
        (false, DetectionMode::TrustedDetectors, 0.8),
        (true, DetectionMode::DeviceIndependent, 0.95),
        (true, DetectionMode::TrustedDetectors, 0.8),
    ];
    let mut raw = Vec::with_capacity(distances.len() * CURVES.len());
    for &distance in distances {
        for (on_demand, mode, eta) in CURVES {
            let params = HeraldSchemeParams {
                channel: ChannelModel::new(distance, base.channel.attenuation_db_per_km)?,
                on_demand,
                ..base.clone()
            };
            raw.push(optimized_key_rate(&params, mode, eta, search)?);
        }
    }
    let attenuation = base.channel.attenuation_db_per_km;
    let mut rows = Vec::with_capacity(raw.len());
    for (i, &distance) in distances.iter().enumerate() {
        for c in 0..CURVES.len() {
            let mut best = raw[i * CURVES.len() + c];
            for (j, &longer) in distances.iter().enumerate() {
                let candidate = raw[j * CURVES.len() + c];
                if longer > distance && candidate.key_rate_bits_per_s > best.key_rate_bits_per_s {
                    best = KeyRatePoint {
                        distance_km: distance,
                        extra_loss_db: candidate.extra_loss_db + attenuation * (longer - distance),
                        ..candidate
                    };
                }
            }
            rows.push(best);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singlet_reaches_tsirelson_at_known_angles() {
        let s = chsh_value(&TwoQubitState::singlet(), &ChshSettings::singlet_optimal(), 1.0);
        assert!((s - TSIRELSON).abs() < 1e-9);
    }

    #[test]
    fn product_state_respects_local_bound() {
        let c = |x: f64| Complex64::new(x, 0.0);
        let hh = TwoQubitState::from_pure([c(1.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        for k in 0..50 {
            let a = k as f64 * 0.37;
            let settings = ChshSettings::new([a, 2.0 * a], [0.5 * a, a + 1.0]);
            assert!(chsh_value(&hh, &settings, 1.0).abs() <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn binned_singlet_closed_form() {
        let singlet = TwoQubitState::singlet();
        for k in 0..=20 {
            let eta = k as f64 / 20.0;
            let s = chsh_value(&singlet, &ChshSettings::singlet_optimal(), eta);
            let expected = TSIRELSON * eta * eta + 2.0 * (1.0 - eta) * (1.0 - eta);
            assert!((s - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn optimizer_finds_tsirelson() {
        let opt = optimize_chsh(&TwoQubitState::singlet(), 1.0);
        assert!((opt.s_max - TSIRELSON).abs() < 1e-4);
        let again = chsh_value(&TwoQubitState::singlet(), &opt.settings, 1.0);
        assert!((again - opt.s_max).abs() < 1e-12);
    }

    #[test]
    fn maximally_mixed_state_gives_no_violation() {
        let opt = optimize_chsh(&TwoQubitState::maximally_mixed(), 1.0);
        assert!(opt.s_max <= 2.0 + 1e-12);
        let opt = optimize_chsh(&TwoQubitState::maximally_mixed(), 0.7);
        assert!((opt.s_max - 2.0 * 0.09).abs() < 1e-9);
    }

    #[test]
    fn key_rate_edge_cases() {
        assert!((di_key_rate(TSIRELSON, 0.0, 123.0).unwrap() - 123.0).abs() < 1e-9);
        assert_eq!(di_key_rate(2.0, 0.0, 123.0).unwrap(), 0.0);
        assert!(di_key_rate(2.5, 0.6, 1.0).is_err());
        let r = di_key_rate(2.5, 0.02, 1.0).unwrap();
        let chi = binary_entropy((1.0 + (1.25f64 * 1.25 - 1.0).sqrt()) / 2.0);
        assert!((r - (1.0 - binary_entropy(0.02) - chi)).abs() < 1e-12);
        assert!(r > 0.0);
    }

    #[test]
    fn no_pair_no_herald() {
        let params = HeraldSchemeParams {
            pair_p: 0.0,
            on_demand: true,
            ..Default::default()
        };
        assert!(matches!(
            run_herald_circuit(&params, Truncation::default()),
            Err(SimError::DegenerateParameters(_))
        ));
    }

    #[test]
    fn circuit_needs_two_photon_truncation() {
        let t = Truncation::new(1).unwrap();
        assert!(matches!(
            run_herald_circuit(&HeraldSchemeParams::default(), t),
            Err(SimError::OutOfRange { name: "n_max", .. })
        ));
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-3, 1e-1, 3);
        assert!((g[0] - 1e-3).abs() < 1e-15 && (g[1] - 1e-2).abs() < 1e-14 && (g[2] - 1e-1).abs() < 1e-14);
        assert!(log_grid(1.0, 2.0, 0).is_empty());
    }
}
