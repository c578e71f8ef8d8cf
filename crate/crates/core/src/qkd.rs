//! Multiphoton bound on the secure QKD distance and the pump-power tradeoff.
//!
//! The bound is the necessary condition that the expected detection
//! probability at the receiver exceeds the multiphoton fraction of the
//! source; beyond that distance a photon-number-splitting attacker can in
//! principle account for every detection. It is not a key-rate formula.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{
    heralded_photon_statistics, simulate_counts, HeraldedStats, RunSpec, SetupConfig,
};
use crate::pair_source::PairNumberDistribution;

/// Distance step of the secure-distance search (km).
pub const DISTANCE_RESOLUTION_KM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    /// Fiber attenuation (dB/km).
    pub loss_db_per_km: f64,
    pub receiver_efficiency: f64,
    pub receiver_dark_per_pulse: f64,
    /// Search cap (km).
    #[serde(default = "default_cap")]
    pub max_distance_km: f64,
}

fn default_cap() -> f64 {
    500.0
}

impl ChannelSpec {
    pub fn new(
        loss_db_per_km: f64,
        receiver_efficiency: f64,
        receiver_dark_per_pulse: f64,
    ) -> Self {
        Self {
            loss_db_per_km,
            receiver_efficiency,
            receiver_dark_per_pulse,
            max_distance_km: default_cap(),
        }
    }

    /// Standard telecom fiber at 1550 nm with the idler InGaAs APD as receiver.
    pub fn telecom_fiber() -> Self {
        Self::new(0.2, 0.10, 2.5e-4)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.loss_db_per_km >= 0.0 && self.loss_db_per_km.is_finite()) {
            return Err(Error::invalid("channel", "loss_db_per_km must be >= 0"));
        }
        for (name, v) in [
            ("receiver_efficiency", self.receiver_efficiency),
            ("receiver_dark_per_pulse", self.receiver_dark_per_pulse),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(
                    "channel",
                    format!("{name} must be in [0, 1], got {v}"),
                ));
            }
        }
        if !(self.max_distance_km > 0.0 && self.max_distance_km.is_finite()) {
            return Err(Error::invalid("channel", "max_distance_km must be > 0"));
        }
        Ok(())
    }

    pub fn transmission(&self, km: f64) -> f64 {
        10f64.powf(-self.loss_db_per_km * km / 10.0)
    }

    /// Expected receiver click probability per pulse at distance `km`.
    pub fn detection_probability(&self, stats: &HeraldedStats, km: f64) -> f64 {
        let eta = self.transmission(km) * self.receiver_efficiency;
        let log_miss = (-eta).ln_1p();
        let signal: f64 = stats
            .p
            .iter()
            .enumerate()
            .skip(1)
            .map(|(n, &p)| p * -(n as f64 * log_miss).exp_m1())
            .sum();
        signal + self.receiver_dark_per_pulse
    }
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self::telecom_fiber()
    }
}

/// Σ_{n≥2} P(n).
pub fn multiphoton_fraction(stats: &HeraldedStats) -> f64 {
    stats.multiphoton()
}

/// Photon-number statistics of an attenuated laser pulse of mean `mu`.
pub fn coherent_stats(mu: f64) -> Result<HeraldedStats> {
    let d = PairNumberDistribution::poissonian(mu);
    d.validate()?;
    HeraldedStats::new(d.truncated_pmf().probs().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceStatus {
    /// The bound is crossed inside the search range.
    Bounded,
    /// The condition fails already at zero distance.
    Insecure,
    /// The condition still holds at the search cap.
    Capped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecureDistance {
    pub km: f64,
    pub status: DistanceStatus,
}

/// Largest distance on the [`DISTANCE_RESOLUTION_KM`] grid at which the
/// expected detection probability is still at least the multiphoton fraction.
pub fn max_secure_distance(stats: &HeraldedStats, channel: &ChannelSpec) -> Result<SecureDistance> {
    stats.validate()?;
    channel.validate()?;
    let p_multi = multiphoton_fraction(stats);
    let secure =
        |k: u64| channel.detection_probability(stats, k as f64 * DISTANCE_RESOLUTION_KM) >= p_multi;
    if !secure(0) {
        return Ok(SecureDistance {
            km: 0.0,
            status: DistanceStatus::Insecure,
        });
    }
    let k_cap = (channel.max_distance_km / DISTANCE_RESOLUTION_KM).floor() as u64;
    if secure(k_cap) {
        return Ok(SecureDistance {
            km: k_cap as f64 * DISTANCE_RESOLUTION_KM,
            status: DistanceStatus::Capped,
        });
    }
    // secure(lo) holds, secure(hi) fails
    let (mut lo, mut hi) = (0u64, k_cap);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if secure(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(SecureDistance {
        km: lo as f64 * DISTANCE_RESOLUTION_KM,
        status: DistanceStatus::Bounded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub mu: f64,
    pub pump_power_mw: f64,
    pub trigger_rate: f64,
    pub p1: f64,
    pub p2: f64,
    pub max_secure_km: f64,
    pub distance_status: DistanceStatus,
}

fn sweep_row(base: &SetupConfig, mu: f64, channel: &ChannelSpec) -> Result<TradeoffRow> {
    let config = base.clone().with_mu(mu);
    let run = RunSpec::analytic();
    let counts = simulate_counts(&config, &run)?;
    let stats = heralded_photon_statistics(&config, &run)?;
    let distance = max_secure_distance(&stats, channel)?;
    if !(base.pump_calibration_per_mw > 0.0) {
        return Err(Error::invalid(
            "setup",
            "pump_calibration_per_mw must be > 0 to back-compute pump power",
        ));
    }
    Ok(TradeoffRow {
        mu,
        pump_power_mw: mu / base.pump_calibration_per_mw,
        trigger_rate: counts.trigger_rate,
        p1: stats.p1(),
        p2: stats.p2(),
        max_secure_km: distance.km,
        distance_status: distance.status,
    })
}

/// Evaluates the forward model and the distance bound at each μ. Rows are
/// computed in parallel and returned in input order; a failing row keeps its
/// slot as an error.
pub fn pump_sweep(
    base: &SetupConfig,
    mu_values: &[f64],
    channel: &ChannelSpec,
) -> Result<Vec<Result<TradeoffRow>>> {
    channel.validate()?;
    if let Some(bad) = mu_values.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
        return Err(Error::invalid(
            "sweep",
            format!("mu values must be > 0, got {bad}"),
        ));
    }
    if mu_values.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid(
            "sweep",
            "mu values must be sorted ascending",
        ));
    }
    Ok(mu_values
        .par_iter()
        .map(|&mu| sweep_row(base, mu, channel))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_stats() -> HeraldedStats {
        HeraldedStats::new(vec![1.0 - 0.1871 - 2.4e-3, 0.1871, 2.4e-3]).unwrap()
    }

    #[test]
    fn single_photon_only_has_no_multiphoton() {
        let s = HeraldedStats::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(multiphoton_fraction(&s), 0.0);
        let mut ch = ChannelSpec::telecom_fiber();
        ch.receiver_dark_per_pulse = 0.0;
        let d = max_secure_distance(&s, &ch).unwrap();
        assert_eq!(d.status, DistanceStatus::Capped);
        assert!((d.km - 500.0).abs() < 1e-9);
    }

    #[test]
    fn coherent_multiphoton_fraction() {
        let s = coherent_stats(0.2375).unwrap();
        let expected = 1.0 - (-0.2375f64).exp() * (1.0 + 0.2375);
        assert!((multiphoton_fraction(&s) - expected).abs() < 1e-12);
        assert!((multiphoton_fraction(&s) - 0.024111347410917583).abs() < 1e-12);
    }

    #[test]
    fn reference_stats_distance() {
        let d = max_secure_distance(&reference_stats(), &ChannelSpec::telecom_fiber()).unwrap();
        assert_eq!(d.status, DistanceStatus::Bounded);
        let ch = ChannelSpec::telecom_fiber();
        let p_multi = 2.4e-3;
        assert!(ch.detection_probability(&reference_stats(), d.km) >= p_multi);
        assert!(
            ch.detection_probability(&reference_stats(), d.km + DISTANCE_RESOLUTION_KM) < p_multi
        );
    }

    #[test]
    fn wcp_is_insecure_sooner() {
        let ch = ChannelSpec::telecom_fiber();
        let h = max_secure_distance(&reference_stats(), &ch).unwrap();
        let w = crate::estimator::equivalent_wcp(0.1871, 2.4e-3).unwrap();
        let wcp = max_secure_distance(&coherent_stats(w.mu_coherent).unwrap(), &ch).unwrap();
        assert!(wcp.km < h.km, "{wcp:?} vs {h:?}");
    }

    #[test]
    fn sweep_rejects_unsorted() {
        let cfg = SetupConfig::reference();
        let ch = ChannelSpec::telecom_fiber();
        assert!(pump_sweep(&cfg, &[0.1, 0.05], &ch).is_err());
        assert!(pump_sweep(&cfg, &[0.0, 0.05], &ch).is_err());
    }

    #[test]
    fn sweep_doubling_mu() {
        let cfg = SetupConfig::reference();
        let rows = pump_sweep(&cfg, &[0.0829, 0.1658], &ChannelSpec::telecom_fiber()).unwrap();
        let a = rows[0].as_ref().unwrap();
        let b = rows[1].as_ref().unwrap();
        assert!((a.pump_power_mw - 240.0).abs() < 1e-9);
        assert!((b.p2 / a.p2 - 2.0).abs() < 0.3);
        assert!(b.trigger_rate < 2.0 * a.trigger_rate);
        assert!(b.trigger_rate > a.trigger_rate);
    }
}
