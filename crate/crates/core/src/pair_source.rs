//! Per-pulse photon-pair statistics and their transformation under loss.
//!
//! Every pair contributes exactly one photon to the signal arm and one to the
//! idler arm, so before loss the two photon numbers are identical. Loss acts
//! on each arm independently as binomial thinning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Truncation stops once the remaining tail mass drops below this.
pub const TAIL_MASS: f64 = 1e-15;
/// Largest photon number kept in a truncated pmf.
pub const MAX_PHOTONS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairLaw {
    /// Many independent spectral/temporal modes: coherent-state-like counting
    /// statistics. This is what a femtosecond-pumped source with g²(0) ≈ 1
    /// looks like.
    #[default]
    Poissonian,
    /// Single-mode thermal (Bose-Einstein) statistics.
    Thermal,
    /// Negative-binomial statistics of `modes` independent thermal modes.
    MultimodeThermal,
}

/// Photon-pair number law with mean `mean` pairs per pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairNumberDistribution {
    pub law: PairLaw,
    pub mean: f64,
    #[serde(default = "default_modes")]
    pub modes: u32,
}

fn default_modes() -> u32 {
    1
}

impl PairNumberDistribution {
    pub fn poissonian(mean: f64) -> Self {
        Self {
            law: PairLaw::Poissonian,
            mean,
            modes: 1,
        }
    }

    pub fn thermal(mean: f64) -> Self {
        Self {
            law: PairLaw::Thermal,
            mean,
            modes: 1,
        }
    }

    pub fn multimode_thermal(mean: f64, modes: u32) -> Self {
        Self {
            law: PairLaw::MultimodeThermal,
            mean,
            modes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean >= 0.0 && self.mean.is_finite()) {
            return Err(Error::invalid(
                "pair distribution",
                format!("mean must be finite and >= 0, got {}", self.mean),
            ));
        }
        if self.modes < 1 {
            return Err(Error::invalid("pair distribution", "modes must be >= 1"));
        }
        Ok(())
    }

    fn effective_modes(&self) -> f64 {
        match self.law {
            PairLaw::Poissonian => f64::INFINITY,
            PairLaw::Thermal => 1.0,
            PairLaw::MultimodeThermal => self.modes as f64,
        }
    }

    /// Probability of exactly `n` pairs in one pulse.
    pub fn pmf(&self, n: usize) -> f64 {
        let mut p = self.vacuum_probability();
        for k in 0..n {
            p *= self.ratio(k);
            if p == 0.0 {
                break;
            }
        }
        p
    }

    fn vacuum_probability(&self) -> f64 {
        let mu = self.mean;
        match self.law {
            PairLaw::Poissonian => (-mu).exp(),
            PairLaw::Thermal => 1.0 / (1.0 + mu),
            PairLaw::MultimodeThermal => {
                let m = self.modes as f64;
                (-m * (mu / m).ln_1p()).exp()
            }
        }
    }

    // p(k+1) / p(k)
    fn ratio(&self, k: usize) -> f64 {
        let mu = self.mean;
        let k = k as f64;
        match self.law {
            PairLaw::Poissonian => mu / (k + 1.0),
            PairLaw::Thermal => mu / (1.0 + mu),
            PairLaw::MultimodeThermal => {
                let m = self.modes as f64;
                let x = mu / m;
                (k + m) / (k + 1.0) * x / (1.0 + x)
            }
        }
    }

    /// Pmf truncated once the tail mass falls below [`TAIL_MASS`], capped at
    /// [`MAX_PHOTONS`].
    pub fn truncated_pmf(&self) -> PhotonNumberPmf {
        let mut probs = Vec::with_capacity(8);
        let mut p = self.vacuum_probability();
        let mut total = 0.0;
        for n in 0..=MAX_PHOTONS {
            probs.push(p);
            total += p;
            if 1.0 - total < TAIL_MASS {
                break;
            }
            p *= self.ratio(n);
        }
        PhotonNumberPmf { probs }
    }

    /// The same law after every pair member passes a channel of transmission
    /// `survival`. All three families are closed under binomial thinning.
    pub fn thinned(&self, survival: f64) -> Self {
        Self {
            mean: self.mean * survival,
            ..*self
        }
    }

    /// Normalized second-order correlation ⟨n(n−1)⟩/⟨n⟩² of the law, which is
    /// invariant under binomial loss.
    pub fn g2(&self) -> f64 {
        1.0 + 1.0 / self.effective_modes()
    }
}

impl Default for PairNumberDistribution {
    fn default() -> Self {
        Self::poissonian(0.0)
    }
}

/// A photon-number probability vector, index = photon number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonNumberPmf {
    probs: Vec<f64>,
}

impl PhotonNumberPmf {
    /// Wraps a probability vector. Entries must be finite and non-negative;
    /// normalization is checked by consumers that need it.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("pmf", "empty probability vector"));
        }
        if let Some((n, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p >= 0.0))
        {
            return Err(Error::invalid("pmf", format!("entry {n} is {p}")));
        }
        Ok(Self { probs })
    }

    /// Exactly `n` photons with certainty.
    pub fn fock(n: usize) -> Self {
        let mut probs = vec![0.0; n + 1];
        probs[n] = 1.0;
        Self { probs }
    }

    pub fn vacuum() -> Self {
        Self::fock(0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    /// Second factorial moment ⟨n(n−1)⟩.
    pub fn factorial_moment2(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .skip(2)
            .map(|(n, p)| (n * (n - 1)) as f64 * p)
            .sum()
    }

    /// Σ_{n≥k} p(n).
    pub fn at_least(&self, k: usize) -> f64 {
        self.probs.iter().skip(k).sum()
    }

    pub(crate) fn check_normalized(&self, tol: f64) -> Result<()> {
        let total = self.total();
        if (total - 1.0).abs() > tol {
            return Err(Error::invalid(
                "pmf",
                format!("probabilities sum to {total}, off by more than {tol:e}"),
            ));
        }
        Ok(())
    }

    /// Binomial thinning: each photon survives independently with
    /// probability `survival`.
    pub fn thin(&self, survival: f64) -> Self {
        let s = survival.clamp(0.0, 1.0);
        let n_max = self.probs.len();
        let mut out = vec![0.0; n_max];
        for (n, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (k, slot) in out.iter_mut().enumerate().take(n + 1) {
                *slot += p * binomial_pmf(n, k, s);
            }
        }
        Self { probs: out }
    }
}

/// C(n, k) s^k (1−s)^{n−k}.
pub(crate) fn binomial_pmf(n: usize, k: usize, s: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k_small = k.min(n - k);
    let mut c = 1.0;
    for j in 0..k_small {
        c = c * (n - j) as f64 / (j + 1) as f64;
    }
    c * s.powi(k as i32) * (1.0 - s).powi((n - k) as i32)
}

/// Loss element between two reference planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossChannel {
    pub transmission: f64,
    pub label: String,
}

impl LossChannel {
    pub fn new(transmission: f64, label: impl Into<String>) -> Result<Self> {
        if !(0.0..=1.0).contains(&transmission) {
            return Err(Error::invalid(
                "loss channel",
                format!("transmission must be in [0, 1], got {transmission}"),
            ));
        }
        Ok(Self {
            transmission,
            label: label.into(),
        })
    }

    pub fn apply(&self, pmf: &PhotonNumberPmf) -> PhotonNumberPmf {
        pmf.thin(self.transmission)
    }

    /// Series composition of two channels.
    pub fn then(&self, next: &LossChannel) -> LossChannel {
        LossChannel {
            transmission: self.transmission * next.transmission,
            label: format!("{} + {}", self.label, next.label),
        }
    }
}

/// Mean pair number per pulse from pump power; the SPDC pair rate is linear
/// in pump power.
pub fn mean_pairs_from_pump(pump_power_mw: f64, calibration_per_mw: f64) -> Result<f64> {
    if !(pump_power_mw >= 0.0) {
        return Err(Error::Domain(format!(
            "pump power must be >= 0 mW, got {pump_power_mw}"
        )));
    }
    Ok(calibration_per_mw * pump_power_mw)
}

/// Calibration constant (pairs per pulse per mW) that maps `pump_power_mw`
/// onto `mean_pairs`.
pub fn calibrate_pump(mean_pairs: f64, pump_power_mw: f64) -> Result<f64> {
    if !(pump_power_mw > 0.0) {
        return Err(Error::Domain(format!(
            "reference pump power must be > 0 mW, got {pump_power_mw}"
        )));
    }
    Ok(mean_pairs / pump_power_mw)
}
