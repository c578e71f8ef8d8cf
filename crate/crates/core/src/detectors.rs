//! Threshold ("click") detectors and dead time of the trigger electronics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::click_given_photons;
use crate::pair_source::PhotonNumberPmf;

/// Pmfs handed to a detector must sum to one within this tolerance.
pub const PMF_NORMALIZATION_TOL: f64 = 1e-9;

/// How the detector is operated, together with the matching noise figure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DetectorMode {
    /// Biased above breakdown only inside short gates synchronized to the
    /// pump pulses; one pulse per gate.
    Gated {
        dark_prob_per_gate: f64,
        gate_width_ns: f64,
    },
    /// Always armed; dark counts arrive as a Poisson process.
    FreeRunning { dark_rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickDetectorSpec {
    pub efficiency: f64,
    #[serde(default)]
    pub afterpulse_prob: f64,
    #[serde(flatten)]
    pub mode: DetectorMode,
}

impl ClickDetectorSpec {
    pub fn gated(efficiency: f64, dark_prob_per_gate: f64, afterpulse_prob: f64) -> Self {
        Self {
            efficiency,
            afterpulse_prob,
            mode: DetectorMode::Gated {
                dark_prob_per_gate,
                gate_width_ns: 2.5,
            },
        }
    }

    pub fn free_running(efficiency: f64, dark_rate: f64) -> Self {
        Self {
            efficiency,
            afterpulse_prob: 0.0,
            mode: DetectorMode::FreeRunning { dark_rate },
        }
    }

    /// Noiseless unit-efficiency threshold detector.
    pub fn ideal() -> Self {
        Self::gated(1.0, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(
                    "detector",
                    format!("{name} must be in [0, 1], got {v}"),
                ))
            }
        };
        unit("efficiency", self.efficiency)?;
        unit("afterpulse_prob", self.afterpulse_prob)?;
        if self.afterpulse_prob >= 1.0 {
            return Err(Error::invalid("detector", "afterpulse_prob must be < 1"));
        }
        match self.mode {
            DetectorMode::Gated {
                dark_prob_per_gate,
                gate_width_ns,
            } => {
                unit("dark_prob_per_gate", dark_prob_per_gate)?;
                if !(gate_width_ns > 0.0) {
                    return Err(Error::invalid("detector", "gate_width_ns must be > 0"));
                }
            }
            DetectorMode::FreeRunning { dark_rate } => {
                if !(dark_rate >= 0.0 && dark_rate.is_finite()) {
                    return Err(Error::invalid(
                        "detector",
                        format!("dark_rate must be finite and >= 0, got {dark_rate}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Dark-click probability in one detection window. For a gated detector
    /// the window is the gate and `window_s` is ignored.
    pub fn dark_probability(&self, window_s: f64) -> f64 {
        match self.mode {
            DetectorMode::Gated {
                dark_prob_per_gate, ..
            } => dark_prob_per_gate,
            DetectorMode::FreeRunning { dark_rate } => -(-dark_rate * window_s).exp_m1(),
        }
    }
}

/// Click probability in one window for the given incident photon-number pmf:
/// `1 − (1−p_dark)·Σ pmf(n)(1−η)ⁿ`, inflated by `(1 + afterpulse_prob)`.
///
/// `window_s` is the detection window used for free-running dark counts
/// (normally one pump period).
pub fn click_probability(
    incident: &PhotonNumberPmf,
    spec: &ClickDetectorSpec,
    window_s: f64,
) -> Result<f64> {
    spec.validate()?;
    incident.check_normalized(PMF_NORMALIZATION_TOL)?;
    let dark = spec.dark_probability(window_s);
    let p: f64 = incident
        .probs()
        .iter()
        .enumerate()
        .map(|(n, &pn)| pn * click_given_photons(dark, spec.efficiency, n))
        .sum();
    Ok((p * (1.0 + spec.afterpulse_prob)).min(1.0))
}

/// Rate after afterpulses, each of which may itself trigger another one.
pub fn afterpulse_inflation(base_rate: f64, afterpulse_prob: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&afterpulse_prob) {
        return Err(Error::Domain(format!(
            "afterpulse probability must be in [0, 1), got {afterpulse_prob}"
        )));
    }
    Ok(base_rate / (1.0 - afterpulse_prob))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeadTimeModel {
    /// Every input event, accepted or not, restarts the dead interval.
    #[default]
    Paralyzable,
    /// Only accepted events open a dead interval.
    Nonparalyzable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeadTimeSpec {
    pub tau_us: f64,
    #[serde(default)]
    pub model: DeadTimeModel,
}

impl DeadTimeSpec {
    pub fn paralyzable(tau_us: f64) -> Self {
        Self {
            tau_us,
            model: DeadTimeModel::Paralyzable,
        }
    }

    pub fn nonparalyzable(tau_us: f64) -> Self {
        Self {
            tau_us,
            model: DeadTimeModel::Nonparalyzable,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_us >= 0.0 && self.tau_us.is_finite()) {
            return Err(Error::invalid(
                "dead time",
                format!("tau must be finite and >= 0, got {} us", self.tau_us),
            ));
        }
        Ok(())
    }

    /// Number of pump periods an event blocks: a later event `k` periods
    /// away is lost when `k / rep_rate < tau`.
    pub fn dead_pulses(&self, rep_rate: f64) -> u64 {
        let periods = self.tau_us * 1e-6 * rep_rate;
        // absorb representation error in products like 1e-6 * 8.2e7
        (periods - 1e-9).ceil().max(0.0) as u64
    }
}

/// Output rate of a counter with dead time for a Poisson input of rate
/// `input_rate`.
pub fn dead_time_throughput(input_rate: f64, dt: &DeadTimeSpec) -> f64 {
    let x = input_rate * dt.tau_us * 1e-6;
    if x == 0.0 {
        return input_rate;
    }
    match dt.model {
        DeadTimeModel::Paralyzable => input_rate * (-x).exp(),
        DeadTimeModel::Nonparalyzable => input_rate / (1.0 + x),
    }
}

/// Filters a sorted list of event pulse indices through the dead time,
/// returning the indices that survive.
pub fn apply_dead_time(events: &[u64], dead_pulses: u64, model: DeadTimeModel) -> Vec<u64> {
    let mut accepted = Vec::with_capacity(events.len());
    let mut last: Option<u64> = None;
    for &e in events {
        let live = match last {
            None => true,
            Some(l) => e - l >= dead_pulses,
        };
        match model {
            DeadTimeModel::Paralyzable => {
                if live {
                    accepted.push(e);
                }
                last = Some(e);
            }
            DeadTimeModel::Nonparalyzable => {
                if live {
                    accepted.push(e);
                    last = Some(e);
                }
            }
        }
    }
    accepted
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadTimeSample {
    pub n_pulses: u64,
    pub input_events: u64,
    pub accepted_events: u64,
    pub rep_rate: f64,
}

impl DeadTimeSample {
    pub fn input_rate(&self) -> f64 {
        self.rep_rate * self.input_events as f64 / self.n_pulses as f64
    }

    pub fn output_rate(&self) -> f64 {
        self.rep_rate * self.accepted_events as f64 / self.n_pulses as f64
    }

    /// One-sigma counting error on [`output_rate`](Self::output_rate).
    pub fn output_rate_sigma(&self) -> f64 {
        self.output_rate() / (self.accepted_events.max(1) as f64).sqrt()
    }
}

/// Monte Carlo pulse train: every pump pulse clicks independently with
/// `click_prob`, and the clicks then pass through the dead time.
pub fn simulate_dead_time(
    click_prob: f64,
    rep_rate: f64,
    dt: &DeadTimeSpec,
    n_pulses: u64,
    seed: u64,
) -> Result<DeadTimeSample> {
    dt.validate()?;
    if !(0.0..=1.0).contains(&click_prob) {
        return Err(Error::Domain(format!(
            "click probability must be in [0, 1], got {click_prob}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    if click_prob > 0.0 {
        // geometric gaps between successive clicking pulses
        let log_q = (-click_prob).ln_1p();
        let mut pulse: u64 = 0;
        loop {
            let gap = if click_prob >= 1.0 {
                0
            } else {
                let u: f64 = 1.0 - rng.random::<f64>();
                (u.ln() / log_q).floor() as u64
            };
            pulse = match pulse.checked_add(gap) {
                Some(p) if p < n_pulses => p,
                _ => break,
            };
            events.push(pulse);
            pulse += 1;
        }
    }
    let accepted = apply_dead_time(&events, dt.dead_pulses(rep_rate), dt.model);
    Ok(DeadTimeSample {
        n_pulses,
        input_events: events.len() as u64,
        accepted_events: accepted.len() as u64,
        rep_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pair_source::PairNumberDistribution;

    #[test]
    fn vacuum_click_is_dark_probability() {
        let apd = ClickDetectorSpec::gated(0.10, 2.5e-4, 0.0);
        let p = click_probability(&PhotonNumberPmf::vacuum(), &apd, 0.0).unwrap();
        assert!((p - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn ideal_detector_always_clicks_on_one_photon() {
        let p =
            click_probability(&PhotonNumberPmf::fock(1), &ClickDetectorSpec::ideal(), 0.0).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn idler_singles_from_delivered_mean() {
        // delivered mean 1.14e-3 with efficiency folded into the thinning
        let incident = PairNumberDistribution::poissonian(1.14e-3).truncated_pmf();
        let apd = ClickDetectorSpec::gated(1.0, 2.5e-4, 0.0);
        let p = click_probability(&incident, &apd, 0.0).unwrap();
        assert!((p - 1.39e-3).abs() < 5e-6, "{p}");
        let rate = p * 205e3;
        assert!((rate - 285.0).abs() < 1.5, "{rate}");
    }

    #[test]
    fn unnormalized_pmf_rejected() {
        let pmf = PhotonNumberPmf::new(vec![0.5, 0.4]).unwrap();
        let err = click_probability(&pmf, &ClickDetectorSpec::ideal(), 0.0).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn free_running_dark_per_window() {
        let spcm = ClickDetectorSpec::free_running(0.547, 90.0);
        let p = spcm.dark_probability(1.0 / 82e6);
        assert!((p - 90.0 / 82e6).abs() < 1e-12);
        assert!(p < 90.0 / 82e6);
    }

    #[test]
    fn throughput_closed_forms() {
        let para = dead_time_throughput(2.90e5, &DeadTimeSpec::paralyzable(1.0));
        assert!((para - 2.90e5 * (-0.29f64).exp()).abs() < 1e-6);
        assert!((para - 2.17e5).abs() / 2.17e5 < 0.002);
        let non = dead_time_throughput(2.90e5, &DeadTimeSpec::nonparalyzable(1.0));
        assert!((non - 2.248e5).abs() < 50.0, "{non}");
        assert_eq!(
            dead_time_throughput(1234.5, &DeadTimeSpec::paralyzable(0.0)),
            1234.5
        );
        assert_eq!(
            dead_time_throughput(1234.5, &DeadTimeSpec::nonparalyzable(0.0)),
            1234.5
        );
    }

    #[test]
    fn afterpulse_geometric_series() {
        assert!((afterpulse_inflation(1000.0, 0.001).unwrap() - 1001.001001001001).abs() < 1e-9);
        assert!((afterpulse_inflation(1000.0, 0.001).unwrap() - 1001.0).abs() < 0.01);
        assert_eq!(afterpulse_inflation(17.0, 0.0).unwrap(), 17.0);
        assert_eq!(afterpulse_inflation(1000.0, 0.5).unwrap(), 2000.0);
        assert!(afterpulse_inflation(1000.0, 1.0).is_err());
    }

    #[test]
    fn dead_pulses_at_82_mhz() {
        assert_eq!(DeadTimeSpec::paralyzable(1.0).dead_pulses(8.2e7), 82);
        assert_eq!(DeadTimeSpec::paralyzable(0.0).dead_pulses(8.2e7), 0);
    }

    #[test]
    fn apply_dead_time_models() {
        let events = [0, 50, 100, 130, 300];
        assert_eq!(
            apply_dead_time(&events, 82, DeadTimeModel::Paralyzable),
            vec![0, 300]
        );
        assert_eq!(
            apply_dead_time(&events, 82, DeadTimeModel::Nonparalyzable),
            vec![0, 100, 300]
        );
        assert_eq!(
            apply_dead_time(&events, 0, DeadTimeModel::Paralyzable),
            events
        );
    }

    #[test]
    fn gated_spec_roundtrips_json() {
        let apd = ClickDetectorSpec::gated(0.1, 2.5e-4, 1e-3);
        let s = serde_json::to_string(&apd).unwrap();
        assert!(s.contains(r#""mode":"gated""#), "{s}");
        let back: ClickDetectorSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, apd);
    }
}
