//! Forward model of the heralded source: pair generation, both optical arms,
//! the herald and idler detectors, the trigger dead time.
//!
//! Reference planes: the "source output" is the idler fiber after the
//! coupler, ahead of the synchronization delay fiber. Heralded photon-number
//! statistics are reported there.

mod monte_carlo;

use serde::{Deserialize, Serialize};

pub use monte_carlo::{HbtTally, MonteCarloTally};

use crate::detectors::{click_probability, dead_time_throughput, ClickDetectorSpec, DeadTimeSpec};
use crate::error::{Error, Result};
use crate::numeric::click_given_photons;
use crate::pair_source::{binomial_pmf, PairNumberDistribution, PhotonNumberPmf};

/// Heralded statistics must sum to one within this tolerance.
pub const STATS_NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupConfig {
    /// Pump pulse repetition rate (Hz).
    pub rep_rate: f64,
    /// Pair-number law per pulse; `pairs.mean` is μ.
    pub pairs: PairNumberDistribution,
    /// Pairs per pulse per mW of pump power.
    pub pump_calibration_per_mw: f64,
    /// Probability that a signal photon is in the fiber-matched mode.
    pub alpha_signal: f64,
    pub alpha_idler: f64,
    /// Bulk transmission crystal → herald detector.
    pub t_signal_optics: f64,
    /// Bulk transmission crystal → idler fiber.
    pub t_idler_optics: f64,
    /// Transmission of the synchronization delay fiber.
    pub t_delay_fiber: f64,
    pub herald: ClickDetectorSpec,
    pub idler_detector: ClickDetectorSpec,
    pub trigger_dead_time: DeadTimeSpec,
    /// Clock rate of the idler gates in a singles acquisition.
    pub gate_rate: f64,
    /// Idler gates opened per trigger.
    pub coincidence_window: u32,
}

impl SetupConfig {
    /// The 1550 nm heralded source: 82 MHz pump, μ = 0.0829 at 240 mW.
    pub fn reference() -> Self {
        Self {
            rep_rate: 8.2e7,
            pairs: PairNumberDistribution::poissonian(0.0829),
            pump_calibration_per_mw: 0.0829 / 240.0,
            alpha_signal: 0.1687,
            alpha_idler: 0.2200,
            t_signal_optics: 0.466,
            t_idler_optics: 0.817,
            t_delay_fiber: 0.765,
            herald: ClickDetectorSpec::free_running(0.547, 90.0),
            idler_detector: ClickDetectorSpec::gated(0.10, 2.5e-4, 1e-3),
            trigger_dead_time: DeadTimeSpec::paralyzable(1.0),
            gate_rate: 205e3,
            coincidence_window: 1,
        }
    }

    pub fn mu(&self) -> f64 {
        self.pairs.mean
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.pairs.mean = mu;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rep_rate > 0.0 && self.rep_rate.is_finite()) {
            return Err(Error::invalid("setup", "rep_rate must be > 0"));
        }
        self.pairs.validate()?;
        for (name, v) in [
            ("alpha_signal", self.alpha_signal),
            ("alpha_idler", self.alpha_idler),
            ("t_signal_optics", self.t_signal_optics),
            ("t_idler_optics", self.t_idler_optics),
            ("t_delay_fiber", self.t_delay_fiber),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(
                    "setup",
                    format!("{name} must be in [0, 1], got {v}"),
                ));
            }
        }
        if !(self.pump_calibration_per_mw >= 0.0) {
            return Err(Error::invalid("setup", "pump calibration must be >= 0"));
        }
        if !(self.gate_rate >= 0.0) {
            return Err(Error::invalid("setup", "gate_rate must be >= 0"));
        }
        if self.coincidence_window < 1 {
            return Err(Error::invalid(
                "setup",
                "coincidence_window must be >= 1 gate",
            ));
        }
        self.herald.validate()?;
        self.idler_detector.validate()?;
        self.trigger_dead_time.validate()?;
        Ok(())
    }

    /// Pump period, the detection window of a free-running detector.
    pub fn pulse_period(&self) -> f64 {
        1.0 / self.rep_rate
    }

    /// Survival of a signal photon up to the herald detector surface.
    pub fn herald_arm_transmission(&self) -> f64 {
        self.alpha_signal * self.t_signal_optics
    }

    /// Survival of an idler photon up to the source output.
    pub fn source_output_transmission(&self) -> f64 {
        self.alpha_idler * self.t_idler_optics
    }

    /// Survival of an idler photon up to the idler detector surface.
    pub fn idler_arm_transmission(&self) -> f64 {
        self.source_output_transmission() * self.t_delay_fiber
    }

    pub(crate) fn herald_dark(&self) -> f64 {
        self.herald.dark_probability(self.pulse_period())
    }

    pub(crate) fn idler_dark(&self) -> f64 {
        self.idler_detector.dark_probability(self.pulse_period())
    }
}

impl Default for SetupConfig {
    fn default() -> Self {
        Self::reference()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRates {
    pub signal_singles: f64,
    pub idler_singles: f64,
    pub coincidences: f64,
    pub trigger_rate: f64,
    pub gate_rate: f64,
    pub per_trigger_coincidence_prob: f64,
}

impl CountRates {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("signal_singles", self.signal_singles),
            ("idler_singles", self.idler_singles),
            ("coincidences", self.coincidences),
            ("trigger_rate", self.trigger_rate),
            ("gate_rate", self.gate_rate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(
                    "count rates",
                    format!("{name} must be finite and >= 0, got {v}"),
                ));
            }
        }
        Ok(())
    }

    /// Builds the record from the four measured rates.
    pub fn measured(
        signal_singles: f64,
        idler_singles: f64,
        gate_rate: f64,
        coincidences: f64,
        trigger_rate: f64,
    ) -> Self {
        let per_trigger = if trigger_rate > 0.0 {
            coincidences / trigger_rate
        } else {
            0.0
        };
        Self {
            signal_singles,
            idler_singles,
            coincidences,
            trigger_rate,
            gate_rate,
            per_trigger_coincidence_prob: per_trigger,
        }
    }
}

/// Photon-number distribution at the source output given a herald click.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeraldedStats {
    pub p: Vec<f64>,
}

impl HeraldedStats {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        let stats = Self { p };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.is_empty() || self.p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(
                "heralded stats",
                "entries must lie in [0, 1]",
            ));
        }
        let total: f64 = self.p.iter().sum();
        if (total - 1.0).abs() > STATS_NORMALIZATION_TOL {
            return Err(Error::invalid(
                "heralded stats",
                format!("probabilities sum to {total}"),
            ));
        }
        Ok(())
    }

    pub fn prob(&self, n: usize) -> f64 {
        self.p.get(n).copied().unwrap_or(0.0)
    }

    pub fn p0(&self) -> f64 {
        self.prob(0)
    }

    pub fn p1(&self) -> f64 {
        self.prob(1)
    }

    pub fn p2(&self) -> f64 {
        self.prob(2)
    }

    /// Σ_{n≥2} P(n).
    pub fn multiphoton(&self) -> f64 {
        self.p.iter().skip(2).sum()
    }

    pub fn mean(&self) -> f64 {
        self.p.iter().enumerate().map(|(n, v)| n as f64 * v).sum()
    }

    /// ⟨n(n−1)⟩ / ⟨n⟩².
    pub fn g2(&self) -> f64 {
        let m = self.mean();
        let fm2: f64 = self
            .p
            .iter()
            .enumerate()
            .skip(2)
            .map(|(n, v)| (n * (n - 1)) as f64 * v)
            .sum();
        fm2 / (m * m)
    }

    pub fn to_pmf(&self) -> PhotonNumberPmf {
        PhotonNumberPmf::new(self.p.clone()).expect("validated entries")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Analytic,
    MonteCarlo,
}

/// How to evaluate the forward model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub mode: Mode,
    pub n_pulses: u64,
    pub seed: Option<u64>,
}

impl RunSpec {
    pub fn analytic() -> Self {
        Self {
            mode: Mode::Analytic,
            n_pulses: 0,
            seed: None,
        }
    }

    pub fn monte_carlo(n_pulses: u64, seed: u64) -> Self {
        Self {
            mode: Mode::MonteCarlo,
            n_pulses,
            seed: Some(seed),
        }
    }

    pub(crate) fn mc_params(&self) -> Result<(u64, u64)> {
        let seed = self.seed.ok_or(Error::MissingSeed)?;
        if self.n_pulses == 0 {
            return Err(Error::invalid("run", "monte carlo needs n_pulses > 0"));
        }
        Ok((self.n_pulses, seed))
    }
}

/// Exact heralded output pmf, together with the raw per-pulse herald click
/// probability (before afterpulse inflation).
fn heralded_analytic(config: &SetupConfig) -> Result<(PhotonNumberPmf, f64)> {
    let pairs = config.pairs.truncated_pmf();
    let dark = config.herald_dark();
    let s_herald = config.herald_arm_transmission() * config.herald.efficiency;
    let s_out = config.source_output_transmission();
    let mut out = vec![0.0; pairs.len()];
    let mut p_herald = 0.0;
    for (n, &pn) in pairs.probs().iter().enumerate() {
        let w = pn * click_given_photons(dark, s_herald, n);
        if w == 0.0 {
            continue;
        }
        p_herald += w;
        for (k, slot) in out.iter_mut().enumerate().take(n + 1) {
            *slot += w * binomial_pmf(n, k, s_out);
        }
    }
    if !(p_herald > 0.0) {
        return Err(Error::CannotCondition);
    }
    for v in &mut out {
        *v /= p_herald;
    }
    Ok((PhotonNumberPmf::new(out)?, p_herald))
}

fn counts_analytic(config: &SetupConfig) -> Result<CountRates> {
    let pairs = config.pairs.truncated_pmf();
    let window = config.pulse_period();
    let p_herald = click_probability(
        &pairs.thin(config.herald_arm_transmission()),
        &config.herald,
        window,
    )?;
    let signal_singles = config.rep_rate * p_herald;
    let trigger_rate = dead_time_throughput(signal_singles, &config.trigger_dead_time);

    let p_gate = click_probability(
        &pairs.thin(config.idler_arm_transmission()),
        &config.idler_detector,
        window,
    )?;
    let idler_singles = config.gate_rate * p_gate;

    let per_trigger = if p_herald > 0.0 {
        let (heralded, _) = heralded_analytic(config)?;
        let first = click_probability(
            &heralded.thin(config.t_delay_fiber),
            &config.idler_detector,
            window,
        )?;
        let extra = config.coincidence_window - 1;
        (1.0 - (1.0 - first) * (1.0 - p_gate).powi(extra as i32)).min(1.0)
    } else {
        0.0
    };
    Ok(CountRates {
        signal_singles,
        idler_singles,
        coincidences: trigger_rate * per_trigger,
        trigger_rate,
        gate_rate: config.gate_rate,
        per_trigger_coincidence_prob: per_trigger,
    })
}

/// Observable count rates for `config`.
pub fn simulate_counts(config: &SetupConfig, run: &RunSpec) -> Result<CountRates> {
    config.validate()?;
    match run.mode {
        Mode::Analytic => counts_analytic(config),
        Mode::MonteCarlo => {
            let (n, seed) = run.mc_params()?;
            Ok(MonteCarloTally::run(config, n, seed)?.rates(config))
        }
    }
}

/// Photon-number statistics at the source output conditioned on a herald
/// click (partner photon plus any extra pairs in the same pulse).
pub fn heralded_photon_statistics(config: &SetupConfig, run: &RunSpec) -> Result<HeraldedStats> {
    config.validate()?;
    match run.mode {
        Mode::Analytic => {
            let (pmf, _) = heralded_analytic(config)?;
            Ok(HeraldedStats {
                p: pmf.probs().to_vec(),
            })
        }
        Mode::MonteCarlo => {
            let (n, seed) = run.mc_params()?;
            MonteCarloTally::run(config, n, seed)?.heralded_stats()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HbtArm {
    /// Fiber-coupled signal light without conditioning, detected by two
    /// copies of the herald detector.
    SignalUnconditioned,
    /// Heralded idler light at the source output, split onto two ideal
    /// threshold detectors.
    IdlerHeralded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Estimate {
    pub g2: f64,
    /// One-sigma statistical error; zero for analytic evaluation.
    pub std_error: f64,
}

/// Zero-delay second-order correlation on a beam-splitter (HBT) setup.
///
/// Analytic mode returns ⟨n(n−1)⟩/⟨n⟩² of the light entering the splitter,
/// independent of loss and splitting ratio. Monte Carlo mode estimates
/// `p_coincidence / (p_1 · p_2)` from same-pulse clicks.
pub fn hbt_g2(
    config: &SetupConfig,
    arm: HbtArm,
    splitter_ratio: f64,
    run: &RunSpec,
) -> Result<G2Estimate> {
    config.validate()?;
    if !(splitter_ratio > 0.0 && splitter_ratio < 1.0) {
        return Err(Error::Domain(format!(
            "splitter ratio must be in (0, 1), got {splitter_ratio}"
        )));
    }
    match run.mode {
        Mode::Analytic => {
            let g2 = match arm {
                HbtArm::SignalUnconditioned => {
                    if !(config.mu() > 0.0 && config.herald_arm_transmission() > 0.0) {
                        return Err(Error::Estimation("no signal flux".into()));
                    }
                    config.pairs.g2()
                }
                HbtArm::IdlerHeralded => {
                    let (pmf, _) = heralded_analytic(config)?;
                    let mean = pmf.mean();
                    if !(mean > 0.0) {
                        return Err(Error::Estimation("no heralded idler flux".into()));
                    }
                    pmf.factorial_moment2() / (mean * mean)
                }
            };
            Ok(G2Estimate { g2, std_error: 0.0 })
        }
        Mode::MonteCarlo => {
            let (n, seed) = run.mc_params()?;
            HbtTally::run(config, arm, splitter_ratio, n, seed)?.estimate()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn reference_counts_analytic() {
        let c = simulate_counts(&SetupConfig::reference(), &RunSpec::analytic()).unwrap();
        assert!(rel(c.signal_singles, 2.90e5) < 0.03, "{c:?}");
        assert!(rel(c.trigger_rate, 2.16e5) < 0.03, "{c:?}");
        assert!(rel(c.idler_singles, 285.0) < 0.05, "{c:?}");
        assert!((c.per_trigger_coincidence_prob - c.coincidences / c.trigger_rate).abs() < 1e-15);
    }

    #[test]
    fn vacuum_without_darks_gives_zero_rates() {
        let mut cfg = SetupConfig::reference().with_mu(0.0);
        cfg.herald = ClickDetectorSpec::free_running(0.547, 0.0);
        cfg.idler_detector = ClickDetectorSpec::gated(0.1, 0.0, 1e-3);
        let c = simulate_counts(&cfg, &RunSpec::analytic()).unwrap();
        assert_eq!(c.signal_singles, 0.0);
        assert_eq!(c.idler_singles, 0.0);
        assert_eq!(c.coincidences, 0.0);
        assert_eq!(c.trigger_rate, 0.0);
        let mc = simulate_counts(&cfg, &RunSpec::monte_carlo(1_000_000, 3)).unwrap();
        assert_eq!(mc.signal_singles, 0.0);
        assert_eq!(mc.coincidences, 0.0);
        assert!(matches!(
            heralded_photon_statistics(&cfg, &RunSpec::analytic()),
            Err(Error::CannotCondition)
        ));
    }

    #[test]
    fn reference_heralded_stats() {
        let s =
            heralded_photon_statistics(&SetupConfig::reference(), &RunSpec::analytic()).unwrap();
        s.validate().unwrap();
        assert!((s.p0() - 0.8096).abs() < 0.01);
        assert!(rel(s.p1(), 0.1871) < 0.05);
        assert!(rel(s.p2(), 2.4e-3) < 0.25);
    }

    #[test]
    fn lossless_limit_is_single_photon() {
        let mut cfg = SetupConfig::reference().with_mu(1e-6);
        cfg.alpha_idler = 1.0;
        cfg.t_idler_optics = 1.0;
        cfg.herald = ClickDetectorSpec::free_running(1.0, 0.0);
        let s = heralded_photon_statistics(&cfg, &RunSpec::analytic()).unwrap();
        assert!((s.p1() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn monte_carlo_needs_seed() {
        let run = RunSpec {
            mode: Mode::MonteCarlo,
            n_pulses: 1_000_000,
            seed: None,
        };
        assert_eq!(
            simulate_counts(&SetupConfig::reference(), &run),
            Err(Error::MissingSeed)
        );
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = SetupConfig::reference();
        cfg.t_delay_fiber = 1.5;
        assert!(simulate_counts(&cfg, &RunSpec::analytic())
            .unwrap_err()
            .is_validation());
        let mut cfg = SetupConfig::reference();
        cfg.rep_rate = 0.0;
        assert!(simulate_counts(&cfg, &RunSpec::analytic()).is_err());
    }

    #[test]
    fn g2_analytic_values() {
        let cfg = SetupConfig::reference();
        let run = RunSpec::analytic();
        let g = hbt_g2(&cfg, HbtArm::SignalUnconditioned, 0.5, &run).unwrap();
        assert_eq!(g.g2, 1.0);
        let mut thermal = cfg.clone();
        thermal.pairs = PairNumberDistribution::thermal(0.0829);
        let g = hbt_g2(&thermal, HbtArm::SignalUnconditioned, 0.5, &run).unwrap();
        assert!((g.g2 - 2.0).abs() < 1e-6);
        let h = hbt_g2(&cfg, HbtArm::IdlerHeralded, 0.5, &run).unwrap();
        assert!(rel(h.g2, 0.13) < 0.20, "{}", h.g2);
        let s = heralded_photon_statistics(&cfg, &run).unwrap();
        assert!(rel(h.g2, s.g2()) < 1e-12);
        // two-photon term alone, the n = 3 term adds about 2 %
        let approx = 2.0 * s.p2() / (s.p1() + 2.0 * s.p2()).powi(2);
        assert!(rel(h.g2, approx) < 0.03);
    }

    #[test]
    fn g2_zero_flux_is_error() {
        let cfg = SetupConfig::reference().with_mu(0.0);
        assert!(matches!(
            hbt_g2(&cfg, HbtArm::SignalUnconditioned, 0.5, &RunSpec::analytic()),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn wider_coincidence_window_adds_accidentals() {
        let mut cfg = SetupConfig::reference();
        let one = simulate_counts(&cfg, &RunSpec::analytic()).unwrap();
        cfg.coincidence_window = 3;
        let three = simulate_counts(&cfg, &RunSpec::analytic()).unwrap();
        let p_gate = one.idler_singles / one.gate_rate;
        let expected =
            1.0 - (1.0 - one.per_trigger_coincidence_prob) * (1.0 - p_gate) * (1.0 - p_gate);
        assert!((three.per_trigger_coincidence_prob - expected).abs() < 1e-15);
    }
}
