//! Multimode bosonic states in a truncated photon-number basis.
//!
//! Pure states keep a sparse map from occupation tuples to amplitudes. Mixed
//! states are ensembles of pure branches, so loss and detection never build a
//! dense density operator: an eight-mode circuit at `n_max = 2` would otherwise
//! need a 6561 x 6561 matrix.
//!
//! Linear-optical elements act on creation operators. The two-mode beamsplitter
//! uses
//!
//! ```text
//! U = [[ sqrt(T),              sqrt(1-T) e^{i phi} ],
//!      [ -sqrt(1-T) e^{-i phi}, sqrt(T)            ]]
//! ```
//!
//! with input mode `j` mapped to `sum_i U[i][j] a_i^dagger`, so a photon entering
//! the first port leaves as `sqrt(T)|1,0> - sqrt(1-T) e^{-i phi}|0,1>`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use num_complex::Complex64;

use crate::error::{check_range, Result, SimError};
use crate::optics::{DetectionOutcome, DetectorModel};

/// Amplitudes below this magnitude are dropped after every transformation.
///
/// This constant affects results; `tests/fock_properties.rs` checks that halving
/// it moves herald probabilities by less than 1e-9.
pub const AMPLITUDE_PRUNE: f64 = 1e-14;

/// Ensemble branches lighter than this are dropped and counted in `pruned_mass`.
pub const BRANCH_PRUNE: f64 = 1e-12;

/// Largest probability allowed to leak out of the truncated space in one operation.
pub const MAX_TRUNCATION_LEAK: f64 = 1e-6;

/// Output mode names of [`FockState::apply_pbs_rotated`], in the order
/// `D+`, `D-`, `D~+`, `D~-`.
pub const PBS_OUTPUTS: [&str; 4] = ["D+", "D-", "Dt+", "Dt-"];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarization {
    H,
    V,
    None,
}

/// Name of an optical mode, optionally tagged with a polarization.
///
/// Polarization partners share a base name, e.g. `b_h` and `b_v`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeLabel {
    name: String,
    polarization: Polarization,
}

impl ModeLabel {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            polarization: Polarization::None,
        }
    }

    pub fn h(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            polarization: Polarization::H,
        }
    }

    pub fn v(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            polarization: Polarization::V,
        }
    }

    /// The `(h, v)` pair sharing `name`.
    pub fn pair(name: &str) -> (Self, Self) {
        (Self::h(name), Self::v(name))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn polarization(&self) -> Polarization {
        self.polarization
    }

    /// The other polarization of the same base mode, if this label is polarized.
    pub fn partner(&self) -> Option<Self> {
        match self.polarization {
            Polarization::H => Some(Self::v(self.name.clone())),
            Polarization::V => Some(Self::h(self.name.clone())),
            Polarization::None => None,
        }
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.polarization {
            Polarization::H => write!(f, "{}_h", self.name),
            Polarization::V => write!(f, "{}_v", self.name),
            Polarization::None => f.write_str(&self.name),
        }
    }
}

/// Per-mode photon-number cutoff together with the amplitude prune threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    n_max: u8,
    amplitude_prune: f64,
}

impl Truncation {
    pub fn new(n_max: u8) -> Result<Self> {
        if n_max == 0 {
            return Err(SimError::InvalidTruncation(n_max));
        }
        Ok(Self {
            n_max,
            amplitude_prune: AMPLITUDE_PRUNE,
        })
    }

    pub fn with_prune(mut self, threshold: f64) -> Self {
        self.amplitude_prune = threshold;
        self
    }

    pub fn n_max(&self) -> u8 {
        self.n_max
    }

    pub fn amplitude_prune(&self) -> f64 {
        self.amplitude_prune
    }
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            n_max: 2,
            amplitude_prune: AMPLITUDE_PRUNE,
        }
    }
}

fn check_registry(modes: &[ModeLabel]) -> Result<()> {
    for (i, m) in modes.iter().enumerate() {
        if modes[..i].contains(m) {
            return Err(SimError::DuplicateMode(m.to_string()));
        }
    }
    Ok(())
}

fn index_in(modes: &[ModeLabel], mode: &ModeLabel) -> Result<usize> {
    modes
        .iter()
        .position(|m| m == mode)
        .ok_or_else(|| SimError::UnknownMode(mode.to_string()))
}

fn sqrt_factorial(n: u32) -> f64 {
    (1..=n).fold(1.0_f64, |acc, k| acc * k as f64).sqrt()
}

fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0_f64, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Expands `prod_k (sum_i u[i][k] a_i^dag)^{n_k} / sqrt(prod n_k!)` acting on vacuum.
fn expand_creation_product(local: &[u8], u: &[Vec<Complex64>]) -> Vec<(Vec<u8>, Complex64)> {
    let k_modes = local.len();
    let mut poly: BTreeMap<Vec<u8>, Complex64> = BTreeMap::new();
    poly.insert(vec![0; k_modes], Complex64::new(1.0, 0.0));
    for (k, &count) in local.iter().enumerate() {
        for _ in 0..count {
            let mut next: BTreeMap<Vec<u8>, Complex64> = BTreeMap::new();
            for (exps, c) in &poly {
                for (i, row) in u.iter().enumerate() {
                    let coeff = row[k];
                    if coeff == ZERO {
                        continue;
                    }
                    let mut e = exps.clone();
                    e[i] += 1;
                    *next.entry(e).or_insert(ZERO) += c * coeff;
                }
            }
            poly = next;
        }
    }
    let input_norm: f64 = local.iter().map(|&n| sqrt_factorial(n as u32)).product();
    poly.into_iter()
        .map(|(m, c)| {
            let out_norm: f64 = m.iter().map(|&n| sqrt_factorial(n as u32)).product();
            (m, c * (out_norm / input_norm))
        })
        .collect()
}

/// A pure state on an ordered mode registry.
#[derive(Clone, Debug)]
pub struct FockState {
    modes: Vec<ModeLabel>,
    truncation: Truncation,
    amplitudes: BTreeMap<Vec<u8>, Complex64>,
    leaked: f64,
}

impl FockState {
    pub fn vacuum(modes: Vec<ModeLabel>, truncation: Truncation) -> Result<Self> {
        let zeros = vec![0; modes.len()];
        Self::basis(modes, truncation, &zeros)
    }

    pub fn basis(modes: Vec<ModeLabel>, truncation: Truncation, occupation: &[u8]) -> Result<Self> {
        Self::from_amplitudes(modes, truncation, [(occupation.to_vec(), Complex64::new(1.0, 0.0))])
    }

    /// Builds a state from explicit amplitudes. The result is not normalized.
    pub fn from_amplitudes<I>(modes: Vec<ModeLabel>, truncation: Truncation, amplitudes: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u8>, Complex64)>,
    {
        check_registry(&modes)?;
        let mut map = BTreeMap::new();
        for (occ, amp) in amplitudes {
            if occ.len() != modes.len() || occ.iter().any(|&n| n > truncation.n_max) {
                return Err(SimError::InvalidOccupation {
                    occupation: occ,
                    modes: modes.len(),
                    n_max: truncation.n_max,
                });
            }
            *map.entry(occ).or_insert(ZERO) += amp;
        }
        map.retain(|_, a: &mut Complex64| a.norm() >= truncation.amplitude_prune);
        Ok(Self {
            modes,
            truncation,
            amplitudes: map,
            leaked: 0.0,
        })
    }

    pub fn modes(&self) -> &[ModeLabel] {
        &self.modes
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn amplitudes(&self) -> impl Iterator<Item = (&[u8], Complex64)> {
        self.amplitudes.iter().map(|(k, v)| (k.as_slice(), *v))
    }

    pub fn amplitude(&self, occupation: &[u8]) -> Complex64 {
        self.amplitudes.get(occupation).copied().unwrap_or(ZERO)
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// Probability discarded by truncation overflow so far.
    pub fn leaked(&self) -> f64 {
        self.leaked
    }

    pub fn index_of(&self, mode: &ModeLabel) -> Result<usize> {
        index_in(&self.modes, mode)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm_sqr();
        if n <= 0.0 {
            return Err(SimError::ZeroNorm);
        }
        let s = 1.0 / n.sqrt();
        for a in self.amplitudes.values_mut() {
            *a *= s;
        }
        Ok(self)
    }

    /// `<self|other>`; both states must share the registry order.
    pub fn inner(&self, other: &FockState) -> Result<Complex64> {
        if self.modes != other.modes {
            return Err(SimError::RegistryMismatch);
        }
        let (small, large, conj_small) = if self.amplitudes.len() <= other.amplitudes.len() {
            (&self.amplitudes, &other.amplitudes, true)
        } else {
            (&other.amplitudes, &self.amplitudes, false)
        };
        let mut acc = ZERO;
        for (k, a) in small {
            if let Some(b) = large.get(k) {
                acc += if conj_small { a.conj() * b } else { b.conj() * a };
            }
        }
        Ok(acc)
    }

    pub fn tensor_product(&self, other: &FockState) -> Result<FockState> {
        if let Some(m) = self.modes.iter().find(|m| other.modes.contains(m)) {
            return Err(SimError::LabelCollision(m.to_string()));
        }
        let mut modes = self.modes.clone();
        modes.extend(other.modes.iter().cloned());
        let n_max = self.truncation.n_max.max(other.truncation.n_max);
        let prune = self.truncation.amplitude_prune.min(other.truncation.amplitude_prune);
        let mut amplitudes = BTreeMap::new();
        for (ka, a) in &self.amplitudes {
            for (kb, b) in &other.amplitudes {
                let amp = a * b;
                if amp.norm() < prune {
                    continue;
                }
                let mut key = ka.clone();
                key.extend_from_slice(kb);
                amplitudes.insert(key, amp);
            }
        }
        Ok(FockState {
            modes,
            truncation: Truncation {
                n_max,
                amplitude_prune: prune,
            },
            amplitudes,
            leaked: self.leaked + other.leaked,
        })
    }

    pub fn relabel(mut self, from: &ModeLabel, to: ModeLabel) -> Result<Self> {
        let i = self.index_of(from)?;
        if self.modes.contains(&to) && &to != from {
            return Err(SimError::LabelCollision(to.to_string()));
        }
        self.modes[i] = to;
        Ok(self)
    }

    /// Applies a passive linear-optical transformation to `modes`.
    ///
    /// Input mode `k` maps to `sum_i u[i][k] a_i^dagger` over the same list of modes.
    /// Probability pushed above `n_max` is dropped; more than
    /// [`MAX_TRUNCATION_LEAK`] raises [`SimError::TruncationOverflow`].
    pub fn apply_mode_transform(&self, modes: &[ModeLabel], u: &[Vec<Complex64>]) -> Result<FockState> {
        let idx: Vec<usize> = modes.iter().map(|m| self.index_of(m)).collect::<Result<_>>()?;
        check_registry(modes)?;
        assert!(
            u.len() == idx.len() && u.iter().all(|row| row.len() == idx.len()),
            "transform matrix must be {0}x{0}",
            idx.len()
        );

        let mut cache: HashMap<Vec<u8>, Vec<(Vec<u8>, Complex64)>> = HashMap::new();
        let mut out: BTreeMap<Vec<u8>, Complex64> = BTreeMap::new();
        for (occ, amp) in &self.amplitudes {
            let local: Vec<u8> = idx.iter().map(|&i| occ[i]).collect();
            let expansion = cache.entry(local).or_insert_with_key(|l| expand_creation_product(l, u));
            for (m, c) in expansion.iter() {
                let mut key = occ.clone();
                for (j, &i) in idx.iter().enumerate() {
                    key[i] = m[j];
                }
                *out.entry(key).or_insert(ZERO) += amp * c;
            }
        }
        self.finish_transform(out)
    }

    fn finish_transform(&self, out: BTreeMap<Vec<u8>, Complex64>) -> Result<FockState> {
        let before = self.norm_sqr();
        let n_max = self.truncation.n_max;
        let prune = self.truncation.amplitude_prune;
        let mut leak = 0.0;
        let mut kept = BTreeMap::new();
        for (k, a) in out {
            if k.iter().any(|&n| n > n_max) {
                leak += a.norm_sqr();
            } else if a.norm() >= prune {
                kept.insert(k, a);
            }
        }
        if before > 0.0 && leak / before > MAX_TRUNCATION_LEAK {
            return Err(SimError::TruncationOverflow {
                leaked: leak / before,
                limit: MAX_TRUNCATION_LEAK,
            });
        }
        let mut state = FockState {
            modes: self.modes.clone(),
            truncation: self.truncation,
            amplitudes: kept,
            leaked: self.leaked,
        };
        if leak > 0.0 {
            let after = state.norm_sqr();
            if after > 0.0 {
                let s = (before / after).sqrt();
                for a in state.amplitudes.values_mut() {
                    *a *= s;
                }
            }
            state.leaked += leak / before;
        }
        Ok(state)
    }

    pub fn apply_beamsplitter(
        &self,
        m1: &ModeLabel,
        m2: &ModeLabel,
        transmissivity: f64,
        phase: f64,
    ) -> Result<FockState> {
        check_range("transmissivity", transmissivity, 0.0, 1.0, "0 <= T <= 1")?;
        self.apply_mode_transform(&[m1.clone(), m2.clone()], &beamsplitter_matrix(transmissivity, phase))
    }

    /// Mixes the polarization pairs of `b` and `c` on a polarizing beamsplitter
    /// oriented at +-45 degrees followed by h/v analysis.
    ///
    /// The four outputs replace `c_h, c_v, b_h, b_v` in the registry and are named
    /// by [`PBS_OUTPUTS`]:
    ///
    /// ```text
    /// D+-  = (c_h + c_v +- b_h -+ b_v) / 2
    /// D~+- = (+-c_h -+ c_v + b_h + b_v) / 2
    /// ```
    pub fn apply_pbs_rotated(&self, b: &str, c: &str) -> Result<FockState> {
        let inputs = pbs_inputs(&self.modes, b, c)?;
        for name in PBS_OUTPUTS {
            let out = ModeLabel::new(name);
            if self.modes.contains(&out) {
                return Err(SimError::LabelCollision(out.to_string()));
            }
        }
        let mut state = self.apply_mode_transform(&inputs, &pbs_matrix())?;
        for (input, name) in inputs.iter().zip(PBS_OUTPUTS) {
            state = state.relabel(input, ModeLabel::new(name))?;
        }
        Ok(state)
    }
}

fn pbs_inputs(modes: &[ModeLabel], b: &str, c: &str) -> Result<Vec<ModeLabel>> {
    let inputs = vec![ModeLabel::h(c), ModeLabel::v(c), ModeLabel::h(b), ModeLabel::v(b)];
    for m in &inputs {
        if !modes.contains(m) {
            let partner = m.partner().expect("polarized label");
            return Err(if modes.contains(&partner) {
                SimError::MissingPartner(partner.to_string())
            } else {
                SimError::UnknownMode(m.to_string())
            });
        }
    }
    Ok(inputs)
}

/// The beamsplitter matrix in the convention documented at module level.
pub fn beamsplitter_matrix(transmissivity: f64, phase: f64) -> Vec<Vec<Complex64>> {
    let t = Complex64::new(transmissivity.sqrt(), 0.0);
    let r = (1.0 - transmissivity).max(0.0).sqrt();
    vec![
        vec![t, Complex64::from_polar(r, phase)],
        vec![-Complex64::from_polar(r, -phase), t],
    ]
}

/// Rows are the outputs `D+, D-, D~+, D~-`; columns the inputs `c_h, c_v, b_h, b_v`.
pub fn pbs_matrix() -> Vec<Vec<Complex64>> {
    const M: [[f64; 4]; 4] = [
        [1.0, 1.0, 1.0, -1.0],
        [1.0, 1.0, -1.0, 1.0],
        [1.0, -1.0, 1.0, 1.0],
        [-1.0, 1.0, 1.0, 1.0],
    ];
    M.iter()
        .map(|row| row.iter().map(|&x| Complex64::new(x / 2.0, 0.0)).collect())
        .collect()
}

impl fmt::Display for FockState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = self.modes.iter().map(|m| m.to_string()).collect();
        write!(f, "[{}]", labels.join(","))?;
        for (k, a) in &self.amplitudes {
            write!(f, " ({:+.6}{:+.6}i)|{:?}>", a.re, a.im, k)?;
        }
        Ok(())
    }
}

/// Ensemble `rho = sum_i w_i |psi_i><psi_i|` over a shared registry.
///
/// The branches need not be orthogonal.
#[derive(Clone, Debug)]
pub struct MixedState {
    modes: Vec<ModeLabel>,
    branches: Vec<(f64, FockState)>,
    pruned_mass: f64,
}

/// Result of a POVM element applied to a [`MixedState`].
#[derive(Clone, Debug)]
pub struct PovmResult {
    pub probability: f64,
    /// `None` when the outcome cannot occur.
    pub conditional: Option<MixedState>,
}

impl From<FockState> for MixedState {
    fn from(state: FockState) -> Self {
        MixedState::pure(state).expect("state with non-zero norm")
    }
}

impl MixedState {
    pub fn pure(state: FockState) -> Result<Self> {
        let state = state.normalized()?;
        Ok(Self {
            modes: state.modes.clone(),
            branches: vec![(1.0, state)],
            pruned_mass: 0.0,
        })
    }

    /// Builds an ensemble; weights are renormalized to sum to one.
    pub fn from_branches(branches: Vec<(f64, FockState)>) -> Result<Self> {
        let modes = branches
            .first()
            .map(|(_, s)| s.modes.clone())
            .ok_or(SimError::ZeroNorm)?;
        let mut out = Vec::with_capacity(branches.len());
        for (w, s) in branches {
            if s.modes != modes {
                return Err(SimError::RegistryMismatch);
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(SimError::OutOfRange {
                    name: "branch weight",
                    value: w,
                    expected: "finite and non-negative",
                });
            }
            if w > 0.0 {
                out.push((w, s.normalized()?));
            }
        }
        Self::assemble(modes, out, 0.0)
    }

    fn assemble(modes: Vec<ModeLabel>, raw: Vec<(f64, FockState)>, pruned: f64) -> Result<Self> {
        let total: f64 = raw.iter().map(|(w, _)| w).sum();
        if total <= 0.0 {
            return Err(SimError::ZeroNorm);
        }
        let mut pruned_mass = pruned;
        let mut branches = Vec::with_capacity(raw.len());
        for (w, s) in raw {
            let w = w / total;
            if w < BRANCH_PRUNE {
                pruned_mass += w;
            } else {
                branches.push((w, s));
            }
        }
        let kept: f64 = branches.iter().map(|(w, _)| w).sum();
        for b in &mut branches {
            b.0 /= kept;
        }
        Ok(Self {
            modes,
            branches,
            pruned_mass,
        })
    }

    pub fn modes(&self) -> &[ModeLabel] {
        &self.modes
    }

    pub fn branches(&self) -> &[(f64, FockState)] {
        &self.branches
    }

    pub fn trace(&self) -> f64 {
        self.branches.iter().map(|(w, s)| w * s.norm_sqr()).sum()
    }

    /// Ensemble weight discarded by branch pruning.
    pub fn pruned_mass(&self) -> f64 {
        self.pruned_mass
    }

    /// Weighted truncation leakage accumulated by the branches.
    pub fn leaked_mass(&self) -> f64 {
        self.branches.iter().map(|(w, s)| w * s.leaked).sum()
    }

    pub fn index_of(&self, mode: &ModeLabel) -> Result<usize> {
        index_in(&self.modes, mode)
    }

    fn map_branches<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&FockState) -> Result<FockState>,
    {
        let branches = self
            .branches
            .iter()
            .map(|(w, s)| Ok((*w, f(s)?)))
            .collect::<Result<Vec<_>>>()?;
        let modes = branches
            .first()
            .map(|(_, s): &(f64, FockState)| s.modes.clone())
            .unwrap_or_else(|| self.modes.clone());
        Ok(Self {
            modes,
            branches,
            pruned_mass: self.pruned_mass,
        })
    }

    pub fn tensor_product(&self, other: &MixedState) -> Result<Self> {
        let mut raw = Vec::with_capacity(self.branches.len() * other.branches.len());
        for (wa, a) in &self.branches {
            for (wb, b) in &other.branches {
                raw.push((wa * wb, a.tensor_product(b)?));
            }
        }
        let modes = raw[0].1.modes.clone();
        Self::assemble(modes, raw, self.pruned_mass + other.pruned_mass)
    }

    pub fn apply_mode_transform(&self, modes: &[ModeLabel], u: &[Vec<Complex64>]) -> Result<Self> {
        self.map_branches(|s| s.apply_mode_transform(modes, u))
    }

    pub fn apply_beamsplitter(&self, m1: &ModeLabel, m2: &ModeLabel, transmissivity: f64, phase: f64) -> Result<Self> {
        check_range("transmissivity", transmissivity, 0.0, 1.0, "0 <= T <= 1")?;
        self.map_branches(|s| s.apply_beamsplitter(m1, m2, transmissivity, phase))
    }

    pub fn apply_pbs_rotated(&self, b: &str, c: &str) -> Result<Self> {
        self.map_branches(|s| s.apply_pbs_rotated(b, c))
    }

    /// Sends `mode` through a beamsplitter of transmissivity `survival` whose
    /// other output is discarded. Each number of lost photons becomes a branch.
    pub fn apply_loss(&self, mode: &ModeLabel, survival: f64) -> Result<Self> {
        check_range("survival", survival, 0.0, 1.0, "0 <= eta <= 1")?;
        let i = self.index_of(mode)?;
        if survival == 1.0 {
            return Ok(self.clone());
        }
        let mut raw = Vec::new();
        for (w, s) in &self.branches {
            let mut by_lost: BTreeMap<u8, BTreeMap<Vec<u8>, Complex64>> = BTreeMap::new();
            for (occ, amp) in &s.amplitudes {
                let n = occ[i] as u32;
                for k in 0..=n {
                    let p = binomial(n, k) * survival.powi((n - k) as i32) * (1.0 - survival).powi(k as i32);
                    if p == 0.0 {
                        continue;
                    }
                    let mut key = occ.clone();
                    key[i] = (n - k) as u8;
                    *by_lost.entry(k as u8).or_default().entry(key).or_insert(ZERO) += amp * p.sqrt();
                }
            }
            for (_, amps) in by_lost {
                let branch = FockState {
                    modes: s.modes.clone(),
                    truncation: s.truncation,
                    amplitudes: amps,
                    leaked: s.leaked,
                };
                let weight = w * branch.norm_sqr();
                if weight > 0.0 {
                    raw.push((weight, branch.normalized()?));
                }
            }
        }
        Self::assemble(self.modes.clone(), raw, self.pruned_mass)
    }

    /// Applies the POVM element selected by `outcome` (one entry per mode) and
    /// returns its probability with the renormalized post-measurement ensemble.
    ///
    /// Detector elements are diagonal in photon number, so measured modes keep
    /// a definite occupation in every conditional branch.
    pub fn measure_povm(
        &self,
        modes: &[ModeLabel],
        detector: &DetectorModel,
        outcome: &[DetectionOutcome],
    ) -> Result<PovmResult> {
        if modes.len() != outcome.len() {
            return Err(SimError::OutcomeArity {
                expected: modes.len(),
                got: outcome.len(),
            });
        }
        let idx: Vec<usize> = modes.iter().map(|m| self.index_of(m)).collect::<Result<_>>()?;
        check_registry(modes)?;
        for o in outcome {
            detector.outcome_probability(*o, 0)?;
        }

        let mut raw = Vec::new();
        let mut probability = 0.0;
        for (w, s) in &self.branches {
            let mut groups: BTreeMap<Vec<u8>, BTreeMap<Vec<u8>, Complex64>> = BTreeMap::new();
            for (occ, amp) in &s.amplitudes {
                let local: Vec<u8> = idx.iter().map(|&i| occ[i]).collect();
                groups.entry(local).or_default().insert(occ.clone(), *amp);
            }
            for (local, amps) in groups {
                let mut element = 1.0;
                for (&n, &o) in local.iter().zip(outcome) {
                    element *= detector.outcome_probability(o, n as u32)?;
                }
                if element == 0.0 {
                    continue;
                }
                let branch = FockState {
                    modes: s.modes.clone(),
                    truncation: s.truncation,
                    amplitudes: amps,
                    leaked: s.leaked,
                };
                let weight = w * element * branch.norm_sqr();
                if weight > 0.0 {
                    probability += weight;
                    raw.push((weight, branch.normalized()?));
                }
            }
        }
        if probability <= 0.0 {
            return Ok(PovmResult {
                probability: 0.0,
                conditional: None,
            });
        }
        let conditional = Self::assemble(self.modes.clone(), raw, self.pruned_mass)?;
        Ok(PovmResult {
            probability,
            conditional: Some(conditional),
        })
    }

    pub fn partial_trace(&self, discard: &[ModeLabel]) -> Result<Self> {
        let drop: Vec<usize> = discard.iter().map(|m| self.index_of(m)).collect::<Result<_>>()?;
        let keep: Vec<usize> = (0..self.modes.len()).filter(|i| !drop.contains(i)).collect();
        if keep.is_empty() {
            return Err(SimError::ScalarState);
        }
        let modes: Vec<ModeLabel> = keep.iter().map(|&i| self.modes[i].clone()).collect();
        let mut raw = Vec::new();
        for (w, s) in &self.branches {
            let mut groups: BTreeMap<Vec<u8>, BTreeMap<Vec<u8>, Complex64>> = BTreeMap::new();
            for (occ, amp) in &s.amplitudes {
                let env: Vec<u8> = drop.iter().map(|&i| occ[i]).collect();
                let sys: Vec<u8> = keep.iter().map(|&i| occ[i]).collect();
                *groups.entry(env).or_default().entry(sys).or_insert(ZERO) += amp;
            }
            for (_, amps) in groups {
                let branch = FockState {
                    modes: modes.clone(),
                    truncation: s.truncation,
                    amplitudes: amps,
                    leaked: s.leaked,
                };
                let weight = w * branch.norm_sqr();
                if weight > 0.0 {
                    raw.push((weight, branch.normalized()?));
                }
            }
        }
        Self::assemble(modes, raw, self.pruned_mass)
    }

    /// `<target|rho|target>` for a normalized copy of `target`.
    pub fn fidelity(&self, target: &FockState) -> Result<f64> {
        if target.modes != self.modes {
            return Err(SimError::RegistryMismatch);
        }
        let norm = target.norm_sqr();
        if norm <= 0.0 {
            return Err(SimError::ZeroNorm);
        }
        let mut f = 0.0;
        for (w, s) in &self.branches {
            f += w * target.inner(s)?.norm_sqr();
        }
        Ok((f / norm).clamp(0.0, 1.0))
    }

    /// `Tr rho^2`.
    pub fn purity(&self) -> f64 {
        let mut p = 0.0;
        for (i, (wi, si)) in self.branches.iter().enumerate() {
            p += wi * wi * si.norm_sqr().powi(2);
            for (wj, sj) in &self.branches[..i] {
                let ov = si.inner(sj).expect("shared registry").norm_sqr();
                p += 2.0 * wi * wj * ov;
            }
        }
        p
    }

    /// Marginal photon-number distribution of `mode`, indexed by photon number.
    pub fn photon_number_distribution(&self, mode: &ModeLabel) -> Result<Vec<f64>> {
        let i = self.index_of(mode)?;
        let mut dist = Vec::new();
        for (w, s) in &self.branches {
            for (occ, amp) in &s.amplitudes {
                let n = occ[i] as usize;
                if dist.len() <= n {
                    dist.resize(n + 1, 0.0);
                }
                dist[n] += w * amp.norm_sqr();
            }
        }
        Ok(dist)
    }

    /// Projects onto exactly one photon in each of the two polarization pairs.
    ///
    /// Any other modes are traced out. The qubit basis is `{hh, hv, vh, vv}`
    /// with side A first; events outside the dual-rail subspace only lower
    /// `subspace_probability`.
    pub fn extract_two_qubit_state(
        &self,
        side_a: (&ModeLabel, &ModeLabel),
        side_b: (&ModeLabel, &ModeLabel),
    ) -> Result<TwoQubitState> {
        let ah = self.index_of(side_a.0)?;
        let av = self.index_of(side_a.1)?;
        let bh = self.index_of(side_b.0)?;
        let bv = self.index_of(side_b.1)?;
        let qubit = [ah, av, bh, bv];
        let mut rho = Matrix4::<Complex64>::zeros();
        for (w, s) in &self.branches {
            let mut groups: BTreeMap<Vec<u8>, Vector4<Complex64>> = BTreeMap::new();
            for (occ, amp) in &s.amplitudes {
                if occ[ah] + occ[av] != 1 || occ[bh] + occ[bv] != 1 {
                    continue;
                }
                let env: Vec<u8> = occ
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !qubit.contains(i))
                    .map(|(_, &n)| n)
                    .collect();
                let slot = 2 * occ[av] as usize + occ[bv] as usize;
                groups.entry(env).or_insert_with(Vector4::zeros)[slot] += amp;
            }
            for v in groups.values() {
                rho += v * v.adjoint() * Complex64::new(*w, 0.0);
            }
        }
        let p = rho.trace().re;
        if p < 1e-12 {
            return Err(SimError::DegenerateExtraction(p));
        }
        TwoQubitState::new(rho / Complex64::new(p, 0.0), p)
    }

    /// Splits the trace by photon number on two dual-rail sides. Sectors with
    /// exactly one photon on one side and none on the other keep that side's
    /// unnormalized polarization state.
    pub fn dual_rail_sectors(
        &self,
        side_a: (&ModeLabel, &ModeLabel),
        side_b: (&ModeLabel, &ModeLabel),
    ) -> Result<DualRailSectors> {
        let a = [self.index_of(side_a.0)?, self.index_of(side_a.1)?];
        let b = [self.index_of(side_b.0)?, self.index_of(side_b.1)?];
        let trace = self.trace();
        if trace <= 0.0 {
            return Err(SimError::ZeroNorm);
        }
        let mut sectors = DualRailSectors::default();
        let mut a_only = Matrix2::<Complex64>::zeros();
        let mut b_only = Matrix2::<Complex64>::zeros();
        for (w, s) in &self.branches {
            let mut groups: BTreeMap<(bool, Vec<u8>), Vector2<Complex64>> = BTreeMap::new();
            for (occ, amp) in &s.amplitudes {
                let na = occ[a[0]] + occ[a[1]];
                let nb = occ[b[0]] + occ[b[1]];
                let weight = w * amp.norm_sqr() / trace;
                match (na, nb) {
                    (0, 0) => sectors.vacuum += weight,
                    (1, 1) => sectors.both += weight,
                    (1, 0) | (0, 1) => {
                        let (side, slot) = if na == 1 { (&a, occ[a[1]]) } else { (&b, occ[b[1]]) };
                        let env: Vec<u8> = occ
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| !side.contains(i))
                            .map(|(_, &n)| n)
                            .collect();
                        groups.entry((na == 1, env)).or_insert_with(Vector2::zeros)[slot as usize] += amp;
                    }
                    _ => sectors.multi += weight,
                }
            }
            for ((is_a, _), v) in groups {
                let rho = v * v.adjoint() * Complex64::new(w / trace, 0.0);
                if is_a {
                    a_only += rho;
                } else {
                    b_only += rho;
                }
            }
        }
        sectors.a_only = a_only;
        sectors.b_only = b_only;
        Ok(sectors)
    }
}

/// Photon-number decomposition of a state on two dual-rail sides, as
/// fractions of the trace.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DualRailSectors {
    pub vacuum: f64,
    /// One photon on each side.
    pub both: f64,
    /// Unnormalized polarization state of side a when side b is empty.
    pub a_only: Matrix2<Complex64>,
    /// Unnormalized polarization state of side b when side a is empty.
    pub b_only: Matrix2<Complex64>,
    /// More than one photon on at least one side.
    pub multi: f64,
}

impl DualRailSectors {
    pub fn a_only_weight(&self) -> f64 {
        self.a_only.trace().re
    }

    pub fn b_only_weight(&self) -> f64 {
        self.b_only.trace().re
    }

    pub fn total(&self) -> f64 {
        self.vacuum + self.both + self.multi + self.a_only_weight() + self.b_only_weight()
    }
}

/// Two polarization qubits in the basis `{hh, hv, vh, vv}` (h = |0>, v = |1>).
#[derive(Clone, Debug, PartialEq)]
pub struct TwoQubitState {
    matrix: Matrix4<Complex64>,
    subspace_probability: f64,
}

impl TwoQubitState {
    pub fn new(matrix: Matrix4<Complex64>, subspace_probability: f64) -> Result<Self> {
        if (matrix - matrix.adjoint()).norm() > 1e-10 {
            return Err(SimError::InvalidDensityMatrix("not Hermitian"));
        }
        if (matrix.trace().re - 1.0).abs() > 1e-10 {
            return Err(SimError::InvalidDensityMatrix("trace differs from one"));
        }
        let eig = matrix.symmetric_eigenvalues();
        if eig.iter().any(|&e| e < -1e-9) {
            return Err(SimError::InvalidDensityMatrix("negative eigenvalue"));
        }
        check_range(
            "subspace_probability",
            subspace_probability,
            0.0,
            1.0 + 1e-9,
            "probability",
        )?;
        Ok(Self {
            matrix,
            subspace_probability: subspace_probability.min(1.0),
        })
    }

    pub fn from_pure(amplitudes: [Complex64; 4]) -> Result<Self> {
        let v = Vector4::from(amplitudes);
        let n = v.norm_squared();
        if n <= 0.0 {
            return Err(SimError::ZeroNorm);
        }
        Self::new(v * v.adjoint() / Complex64::new(n, 0.0), 1.0)
    }

    /// `(|hv> - |vh>)/sqrt(2)`.
    pub fn singlet() -> Self {
        BellState::PsiMinus.state()
    }

    /// `v |psi-><psi-| + (1 - v) I/4`.
    pub fn werner(visibility: f64) -> Result<Self> {
        check_range("visibility", visibility, 0.0, 1.0, "0 <= v <= 1")?;
        Ok(Self::singlet().mixed_with_white_noise(visibility))
    }

    pub fn maximally_mixed() -> Self {
        Self {
            matrix: Matrix4::identity() / Complex64::new(4.0, 0.0),
            subspace_probability: 1.0,
        }
    }

    /// `weight rho + (1 - weight) I/4`, keeping the subspace probability.
    pub fn mixed_with_white_noise(&self, weight: f64) -> Self {
        let w = Complex64::new(weight.clamp(0.0, 1.0), 0.0);
        Self {
            matrix: self.matrix * w + Matrix4::identity() * ((Complex64::new(1.0, 0.0) - w) / Complex64::new(4.0, 0.0)),
            subspace_probability: self.subspace_probability,
        }
    }

    pub fn matrix(&self) -> &Matrix4<Complex64> {
        &self.matrix
    }

    pub fn subspace_probability(&self) -> f64 {
        self.subspace_probability
    }

    /// `Tr(rho O)` for a Hermitian observable.
    pub fn expectation(&self, observable: &Matrix4<Complex64>) -> f64 {
        (self.matrix * observable).trace().re
    }

    pub fn fidelity_to_pure(&self, amplitudes: [Complex64; 4]) -> f64 {
        let v = Vector4::from(amplitudes);
        let n = v.norm_squared();
        ((v.adjoint() * self.matrix * v)[(0, 0)].re / n).clamp(0.0, 1.0)
    }

    /// Largest overlap with one of the four Bell states, and which one.
    pub fn best_bell_fidelity(&self) -> (BellState, f64) {
        BellState::ALL
            .iter()
            .map(|b| (*b, self.fidelity_to_pure(b.amplitudes())))
            .fold((BellState::PhiPlus, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BellState {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl BellState {
    pub const ALL: [BellState; 4] = [
        BellState::PhiPlus,
        BellState::PhiMinus,
        BellState::PsiPlus,
        BellState::PsiMinus,
    ];

    pub fn amplitudes(self) -> [Complex64; 4] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let c = |x: f64| Complex64::new(x, 0.0);
        match self {
            BellState::PhiPlus => [c(s), c(0.0), c(0.0), c(s)],
            BellState::PhiMinus => [c(s), c(0.0), c(0.0), c(-s)],
            BellState::PsiPlus => [c(0.0), c(s), c(s), c(0.0)],
            BellState::PsiMinus => [c(0.0), c(s), c(-s), c(0.0)],
        }
    }

    pub fn state(self) -> TwoQubitState {
        TwoQubitState::from_pure(self.amplitudes()).expect("normalized Bell state")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::DetectorKind;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn two_modes() -> Vec<ModeLabel> {
        vec![ModeLabel::new("a"), ModeLabel::new("b")]
    }

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn tensor_product_of_basis_states() {
        let t = Truncation::new(2).unwrap();
        let one = FockState::basis(vec![ModeLabel::new("a")], t, &[1]).unwrap();
        let zero = FockState::vacuum(vec![ModeLabel::new("b")], t).unwrap();
        let s = one.tensor_product(&zero).unwrap();
        assert_eq!(s.modes(), two_modes().as_slice());
        assert!(close(s.amplitude(&[1, 0]), c(1.0)));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn tensor_product_distributes_over_superposition() {
        let t = Truncation::new(2).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus =
            FockState::from_amplitudes(vec![ModeLabel::new("a")], t, [(vec![0], c(s)), (vec![1], c(s))]).unwrap();
        let one = FockState::basis(vec![ModeLabel::new("b")], t, &[1]).unwrap();
        let p = plus.tensor_product(&one).unwrap();
        assert!(close(p.amplitude(&[0, 1]), c(s)));
        assert!(close(p.amplitude(&[1, 1]), c(s)));
        assert!((p.norm_sqr() - 1.0).abs() < 1e-12);
        let vac = FockState::vacuum(vec![ModeLabel::new("x")], t).unwrap();
        let vac2 = FockState::vacuum(vec![ModeLabel::new("y")], t).unwrap();
        assert!(close(vac.tensor_product(&vac2).unwrap().amplitude(&[0, 0]), c(1.0)));
    }

    #[test]
    fn tensor_product_rejects_shared_labels() {
        let t = Truncation::default();
        let a = FockState::vacuum(vec![ModeLabel::new("a")], t).unwrap();
        assert_eq!(a.tensor_product(&a).unwrap_err(), SimError::LabelCollision("a".into()));
    }

    #[test]
    fn single_photon_on_balanced_beamsplitter() {
        let t = Truncation::new(2).unwrap();
        let m = two_modes();
        let s = FockState::basis(m.clone(), t, &[1, 0]).unwrap();
        let out = s.apply_beamsplitter(&m[0], &m[1], 0.5, 0.0).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(out.amplitude(&[1, 0]), c(h)));
        assert!(close(out.amplitude(&[0, 1]), c(-h)));
    }

    #[test]
    fn hong_ou_mandel_dip() {
        let t = Truncation::new(2).unwrap();
        let m = two_modes();
        let s = FockState::basis(m.clone(), t, &[1, 1]).unwrap();
        let out = s.apply_beamsplitter(&m[0], &m[1], 0.5, 0.0).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(out.amplitude(&[1, 1]).norm() < 1e-12);
        assert!(close(out.amplitude(&[2, 0]), c(h)));
        assert!(close(out.amplitude(&[0, 2]), c(-h)));
    }

    #[test]
    fn unit_transmission_is_identity() {
        let t = Truncation::new(2).unwrap();
        let m = two_modes();
        let s = FockState::from_amplitudes(
            m.clone(),
            t,
            [(vec![2, 1], Complex64::new(0.6, 0.1)), (vec![0, 1], c(0.3))],
        )
        .unwrap();
        let out = s.apply_beamsplitter(&m[0], &m[1], 1.0, 0.7).unwrap();
        for (k, a) in s.amplitudes() {
            assert!(close(out.amplitude(k), a));
        }
        assert_eq!(out.len(), s.len());
    }

    #[test]
    fn beamsplitter_overflow_is_an_error() {
        let t = Truncation::new(1).unwrap();
        let m = two_modes();
        let s = FockState::basis(m.clone(), t, &[1, 1]).unwrap();
        let err = s.apply_beamsplitter(&m[0], &m[1], 0.5, 0.0).unwrap_err();
        assert!(matches!(err, SimError::TruncationOverflow { .. }));
    }

    #[test]
    fn beamsplitter_rejects_unknown_mode_and_bad_transmissivity() {
        let t = Truncation::default();
        let m = two_modes();
        let s = FockState::vacuum(m.clone(), t).unwrap();
        assert!(matches!(
            s.apply_beamsplitter(&m[0], &ModeLabel::new("z"), 0.5, 0.0),
            Err(SimError::UnknownMode(_))
        ));
        assert!(matches!(
            s.apply_beamsplitter(&m[0], &m[1], 1.5, 0.0),
            Err(SimError::OutOfRange { .. })
        ));
    }

    fn bc_modes() -> Vec<ModeLabel> {
        let (bh, bv) = ModeLabel::pair("b");
        let (ch, cv) = ModeLabel::pair("c");
        vec![bh, bv, ch, cv]
    }

    #[test]
    fn pbs_spreads_a_single_photon_evenly() {
        let t = Truncation::new(2).unwrap();
        let s = FockState::basis(bc_modes(), t, &[0, 0, 1, 0]).unwrap();
        let out = s.apply_pbs_rotated("b", "c").unwrap();
        // registry order is b_h, b_v, c_h, c_v -> Dt+, Dt-, D+, D-
        let names: Vec<String> = out.modes().iter().map(|m| m.to_string()).collect();
        assert_eq!(names, ["Dt+", "Dt-", "D+", "D-"]);
        for occ in [[0, 0, 1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, 1, 0, 0]] {
            assert!((out.amplitude(&occ).norm() - 0.5).abs() < 1e-12);
        }
        assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pbs_outputs_follow_the_detection_forms() {
        // c_h^dag maps to (D+ + D- + D~+ - D~-)/2, b_v^dag to (-D+ + D- + D~+ + D~-)/2.
        let t = Truncation::new(2).unwrap();
        let out = FockState::basis(bc_modes(), t, &[0, 0, 1, 0])
            .unwrap()
            .apply_pbs_rotated("b", "c")
            .unwrap();
        // slots: [Dt+, Dt-, D+, D-]
        assert!(close(out.amplitude(&[0, 0, 1, 0]), c(0.5)));
        assert!(close(out.amplitude(&[0, 0, 0, 1]), c(0.5)));
        assert!(close(out.amplitude(&[1, 0, 0, 0]), c(0.5)));
        assert!(close(out.amplitude(&[0, 1, 0, 0]), c(-0.5)));
        let out = FockState::basis(bc_modes(), t, &[0, 1, 0, 0])
            .unwrap()
            .apply_pbs_rotated("b", "c")
            .unwrap();
        assert!(close(out.amplitude(&[0, 0, 1, 0]), c(-0.5)));
        assert!(close(out.amplitude(&[0, 0, 0, 1]), c(0.5)));
        assert!(close(out.amplitude(&[1, 0, 0, 0]), c(0.5)));
        assert!(close(out.amplitude(&[0, 1, 0, 0]), c(0.5)));
    }

    #[test]
    fn pbs_matrix_is_unitary() {
        let m = pbs_matrix();
        for i in 0..4 {
            for j in 0..4 {
                let dot: Complex64 = (0..4).map(|k| m[i][k] * m[j][k].conj()).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - c(expected)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn pbs_on_vacuum_and_missing_partner() {
        let t = Truncation::new(2).unwrap();
        let vac = FockState::vacuum(bc_modes(), t)
            .unwrap()
            .apply_pbs_rotated("b", "c")
            .unwrap();
        assert!(close(vac.amplitude(&[0, 0, 0, 0]), c(1.0)));
        let partial = FockState::vacuum(vec![ModeLabel::h("b"), ModeLabel::h("c"), ModeLabel::v("c")], t).unwrap();
        assert_eq!(
            partial.apply_pbs_rotated("b", "c").unwrap_err(),
            SimError::MissingPartner("b_h".into())
        );
    }

    fn single_mode(n: u8) -> MixedState {
        let t = Truncation::new(2).unwrap();
        FockState::basis(vec![ModeLabel::new("a")], t, &[n]).unwrap().into()
    }

    #[test]
    fn loss_on_single_and_two_photons() {
        let a = ModeLabel::new("a");
        let eta = 0.7;
        let out = single_mode(1).apply_loss(&a, eta).unwrap();
        let d = out.photon_number_distribution(&a).unwrap();
        assert!((d[1] - eta).abs() < 1e-12 && (d[0] - (1.0 - eta)).abs() < 1e-12);

        let d = single_mode(2)
            .apply_loss(&a, eta)
            .unwrap()
            .photon_number_distribution(&a)
            .unwrap();
        assert!((d[2] - eta * eta).abs() < 1e-12);
        assert!((d[1] - 2.0 * eta * (1.0 - eta)).abs() < 1e-12);
        assert!((d[0] - (1.0 - eta).powi(2)).abs() < 1e-12);

        let same = single_mode(2).apply_loss(&a, 1.0).unwrap();
        assert_eq!(same.branches().len(), 1);
        assert!(single_mode(1).apply_loss(&a, -0.1).is_err());
    }

    #[test]
    fn threshold_detection_probabilities() {
        let a = ModeLabel::new("a");
        let det = DetectorModel::threshold(0.8);
        let click = [DetectionOutcome::Click];
        let r = single_mode(1)
            .measure_povm(std::slice::from_ref(&a), &det, &click)
            .unwrap();
        assert!((r.probability - 0.8).abs() < 1e-12);
        let r = single_mode(0)
            .measure_povm(std::slice::from_ref(&a), &det, &click)
            .unwrap();
        assert_eq!(r.probability, 0.0);
        assert!(r.conditional.is_none());
        let r = single_mode(2)
            .measure_povm(std::slice::from_ref(&a), &det, &click)
            .unwrap();
        assert!((r.probability - (1.0 - 0.2f64.powi(2))).abs() < 1e-12);
    }

    #[test]
    fn number_resolving_requires_counts() {
        let a = ModeLabel::new("a");
        let det = DetectorModel::threshold(0.8);
        assert_eq!(
            single_mode(1)
                .measure_povm(std::slice::from_ref(&a), &det, &[DetectionOutcome::Count(1)])
                .unwrap_err(),
            SimError::UnsupportedOutcome
        );
        let nr = DetectorModel::new(DetectorKind::NumberResolving, 0.5, 0.0).unwrap();
        let r = single_mode(2)
            .measure_povm(&[a], &nr, &[DetectionOutcome::Count(1)])
            .unwrap();
        assert!((r.probability - 0.5).abs() < 1e-12);
    }

    #[test]
    fn partial_trace_of_product_and_bell_pair() {
        let t = Truncation::new(2).unwrap();
        let m = two_modes();
        let prod: MixedState = FockState::basis(m.clone(), t, &[1, 0]).unwrap().into();
        let red = prod.partial_trace(&[m[1].clone()]).unwrap();
        assert_eq!(red.modes(), &m[..1]);
        assert!((red.photon_number_distribution(&m[0]).unwrap()[1] - 1.0).abs() < 1e-12);

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let bell: MixedState = FockState::from_amplitudes(m.clone(), t, [(vec![0, 0], c(h)), (vec![1, 1], c(h))])
            .unwrap()
            .into();
        let red = bell.partial_trace(&[m[1].clone()]).unwrap();
        let d = red.photon_number_distribution(&m[0]).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-12 && (d[1] - 0.5).abs() < 1e-12);
        assert!((red.purity() - 0.5).abs() < 1e-12);
        assert_eq!(bell.partial_trace(&m).unwrap_err(), SimError::ScalarState);
    }

    #[test]
    fn fidelity_cases() {
        let t = Truncation::new(2).unwrap();
        let m = vec![ModeLabel::new("a")];
        let psi = FockState::basis(m.clone(), t, &[0]).unwrap();
        let phi = FockState::basis(m.clone(), t, &[1]).unwrap();
        let rho_psi: MixedState = psi.clone().into();
        assert!((rho_psi.fidelity(&psi).unwrap() - 1.0).abs() < 1e-12);
        assert!(rho_psi.fidelity(&phi).unwrap().abs() < 1e-12);
        let mix = MixedState::from_branches(vec![(0.5, psi.clone()), (0.5, phi)]).unwrap();
        assert!((mix.fidelity(&psi).unwrap() - 0.5).abs() < 1e-12);
        let other = FockState::vacuum(vec![ModeLabel::new("b")], t).unwrap();
        assert_eq!(mix.fidelity(&other).unwrap_err(), SimError::RegistryMismatch);
    }

    #[test]
    fn extract_singlet_photons() {
        let t = Truncation::new(2).unwrap();
        let (ah, av) = ModeLabel::pair("a");
        let (dh, dv) = ModeLabel::pair("d");
        let modes = vec![ah.clone(), av.clone(), dh.clone(), dv.clone()];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s: MixedState = FockState::from_amplitudes(modes, t, [(vec![1, 0, 0, 1], c(h)), (vec![0, 1, 1, 0], c(-h))])
            .unwrap()
            .into();
        let q = s.extract_two_qubit_state((&ah, &av), (&dh, &dv)).unwrap();
        assert!((q.subspace_probability() - 1.0).abs() < 1e-12);
        assert!((q.fidelity_to_pure(BellState::PsiMinus.amplitudes()) - 1.0).abs() < 1e-12);
        assert_eq!(q.best_bell_fidelity().0, BellState::PsiMinus);
    }

    #[test]
    fn extract_from_empty_side_is_degenerate() {
        let t = Truncation::new(2).unwrap();
        let (ah, av) = ModeLabel::pair("a");
        let (dh, dv) = ModeLabel::pair("d");
        let s: MixedState = FockState::basis(vec![ah.clone(), av.clone(), dh.clone(), dv.clone()], t, &[1, 0, 0, 0])
            .unwrap()
            .into();
        assert!(matches!(
            s.extract_two_qubit_state((&ah, &av), (&dh, &dv)),
            Err(SimError::DegenerateExtraction(_))
        ));
    }

    #[test]
    fn two_qubit_validation() {
        let mut m = Matrix4::<Complex64>::zeros();
        m[(0, 0)] = c(0.5);
        assert!(TwoQubitState::new(m, 1.0).is_err());
        m[(3, 3)] = c(0.5);
        m[(0, 3)] = c(0.1);
        assert!(TwoQubitState::new(m, 1.0).is_err());
        m[(3, 0)] = c(0.1);
        assert!(TwoQubitState::new(m, 1.0).is_ok());
        m[(0, 3)] = c(0.9);
        m[(3, 0)] = c(0.9);
        assert!(TwoQubitState::new(m, 1.0).is_err());
    }
}
