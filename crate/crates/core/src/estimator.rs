//! Recovers the mean pair number and the two mode-coupling coefficients from
//! measured singles and coincidence rates, given the bulk losses and the
//! detector parameters.

use serde::{Deserialize, Serialize};

use crate::detectors::{ClickDetectorSpec, DeadTimeSpec, DetectorMode};
use crate::error::{Error, Result};
use crate::experiment::{
    heralded_photon_statistics, CountRates, HeraldedStats, RunSpec, SetupConfig,
};
use crate::numeric::bisect;
use crate::pair_source::{PairLaw, PairNumberDistribution};

/// Everything about the setup that is known independently of the source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnownLosses {
    pub t_signal_optics: f64,
    pub t_idler_optics: f64,
    pub t_delay_fiber: f64,
    pub eta_herald: f64,
    pub eta_idler: f64,
    /// Free-running herald dark rate (cps).
    pub dark_herald_rate: f64,
    pub dark_idler_per_gate: f64,
    pub rep_rate: f64,
    #[serde(default)]
    pub afterpulse_herald: f64,
    #[serde(default)]
    pub afterpulse_idler: f64,
}

impl KnownLosses {
    pub fn from_setup(config: &SetupConfig) -> Self {
        let dark_herald_rate = match config.herald.mode {
            DetectorMode::FreeRunning { dark_rate } => dark_rate,
            DetectorMode::Gated {
                dark_prob_per_gate, ..
            } => dark_prob_per_gate * config.rep_rate,
        };
        Self {
            t_signal_optics: config.t_signal_optics,
            t_idler_optics: config.t_idler_optics,
            t_delay_fiber: config.t_delay_fiber,
            eta_herald: config.herald.efficiency,
            eta_idler: config.idler_detector.efficiency,
            dark_herald_rate,
            dark_idler_per_gate: config
                .idler_detector
                .dark_probability(config.pulse_period()),
            rep_rate: config.rep_rate,
            afterpulse_herald: config.herald.afterpulse_prob,
            afterpulse_idler: config.idler_detector.afterpulse_prob,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t_signal_optics", self.t_signal_optics),
            ("t_idler_optics", self.t_idler_optics),
            ("t_delay_fiber", self.t_delay_fiber),
            ("eta_herald", self.eta_herald),
            ("eta_idler", self.eta_idler),
            ("dark_idler_per_gate", self.dark_idler_per_gate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(
                    "known losses",
                    format!("{name} must be in [0, 1], got {v}"),
                ));
            }
        }
        for (name, v) in [
            ("afterpulse_herald", self.afterpulse_herald),
            ("afterpulse_idler", self.afterpulse_idler),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(
                    "known losses",
                    format!("{name} must be in [0, 1), got {v}"),
                ));
            }
        }
        if !(self.rep_rate > 0.0 && self.rep_rate.is_finite()) {
            return Err(Error::invalid("known losses", "rep_rate must be > 0"));
        }
        if !(self.dark_herald_rate >= 0.0 && self.dark_herald_rate.is_finite()) {
            return Err(Error::invalid(
                "known losses",
                "dark_herald_rate must be >= 0",
            ));
        }
        // products vanishing would make the inversion singular
        if self.t_signal_optics * self.eta_herald == 0.0
            || self.t_idler_optics * self.t_delay_fiber * self.eta_idler == 0.0
        {
            return Err(Error::invalid(
                "known losses",
                "an arm has zero transmission",
            ));
        }
        Ok(())
    }

    fn signal_chain(&self) -> f64 {
        self.t_signal_optics * self.eta_herald
    }

    fn idler_chain(&self) -> f64 {
        self.t_idler_optics * self.t_delay_fiber * self.eta_idler
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InversionMethod {
    /// First-order formulas, valid while multi-pair events are negligible.
    #[default]
    LowMu,
    /// Closed-form inversion of the full forward model for the chosen law.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub method: InversionMethod,
    pub subtract_dark: bool,
    pub correct_afterpulse: bool,
    pub law: PairLaw,
    pub modes: u32,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            method: InversionMethod::LowMu,
            subtract_dark: true,
            correct_afterpulse: true,
            law: PairLaw::Poissonian,
            modes: 1,
        }
    }
}

impl EstimatorOptions {
    pub fn exact() -> Self {
        Self {
            method: InversionMethod::Exact,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEstimate {
    pub mu: f64,
    /// Pairs per second, `mu · rep_rate`.
    pub pair_rate: f64,
    pub alpha_signal: f64,
    pub alpha_idler: f64,
    /// Forward model evaluated at the estimated parameters.
    pub heralded: HeraldedStats,
}

/// Observables reduced to per-window probabilities.
struct Reduced {
    /// Herald click probability per pulse.
    herald: f64,
    /// Idler click probability per gate.
    idler: f64,
    /// Idler click probability given a trigger.
    conditional: f64,
    dark_h: f64,
    dark_i: f64,
}

fn reduce(counts: &CountRates, known: &KnownLosses, opts: &EstimatorOptions) -> Result<Reduced> {
    if !(counts.gate_rate > 0.0) {
        return Err(Error::invalid("count rates", "gate_rate must be > 0"));
    }
    if !(counts.trigger_rate > 0.0) {
        return Err(Error::invalid("count rates", "trigger_rate must be > 0"));
    }
    let (ap_h, ap_i) = if opts.correct_afterpulse {
        (1.0 + known.afterpulse_herald, 1.0 + known.afterpulse_idler)
    } else {
        (1.0, 1.0)
    };
    let (dark_h, dark_i) = if opts.subtract_dark {
        (
            -(-known.dark_herald_rate / known.rep_rate).exp_m1(),
            known.dark_idler_per_gate,
        )
    } else {
        (0.0, 0.0)
    };
    let r = Reduced {
        herald: counts.signal_singles / known.rep_rate / ap_h,
        idler: counts.idler_singles / counts.gate_rate / ap_i,
        conditional: counts.coincidences / counts.trigger_rate / ap_i,
        dark_h,
        dark_i,
    };
    for (name, v) in [
        ("herald click probability per pulse", r.herald),
        ("idler click probability per gate", r.idler),
        ("coincidence probability per trigger", r.conditional),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InfeasibleCounts(format!(
                "{name} = {v} outside [0, 1]"
            )));
        }
    }
    if !(r.herald > dark_h) {
        return Err(Error::InfeasibleCounts(format!(
            "signal singles per pulse {} do not exceed the dark contribution {dark_h}",
            r.herald
        )));
    }
    if !(r.conditional > dark_i) {
        return Err(Error::InfeasibleCounts(format!(
            "coincidences per trigger {} do not exceed the accidental floor {dark_i}",
            r.conditional
        )));
    }
    if !(r.idler > dark_i) {
        return Err(Error::InfeasibleCounts(format!(
            "idler singles per gate {} do not exceed the dark floor {dark_i}",
            r.idler
        )));
    }
    Ok(r)
}

/// Inverse of the pair-law generating function `Φ(t) = E[(1 − x)ⁿ]` written
/// in terms of `t = μx`.
fn pgf_inverse(law: PairLaw, modes: u32, y: f64) -> f64 {
    match law {
        PairLaw::Poissonian => -y.ln(),
        PairLaw::Thermal => 1.0 / y - 1.0,
        PairLaw::MultimodeThermal => {
            let m = modes.max(1) as f64;
            m * (y.powf(-1.0 / m) - 1.0)
        }
    }
}

fn check_unit(name: &str, v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InfeasibleCounts(format!(
            "inferred {name} = {v} outside [0, 1]"
        )))
    }
}

/// Returns (μ, α_s, α_i).
fn invert(r: &Reduced, known: &KnownLosses, opts: &EstimatorOptions) -> Result<(f64, f64, f64)> {
    let ts = known.signal_chain();
    let ti = known.idler_chain();
    match opts.method {
        InversionMethod::LowMu => {
            let alpha_i = check_unit("alpha_idler", (r.conditional - r.dark_i) / ti)?;
            let mu_alpha_s = (r.herald - r.dark_h) / ts;
            let mu = (r.idler - r.dark_i) / (alpha_i * ti);
            let alpha_s = check_unit("alpha_signal", mu_alpha_s / mu)?;
            Ok((mu, alpha_s, alpha_i))
        }
        InversionMethod::Exact => {
            let no_h = 1.0 - r.herald;
            let no_i = 1.0 - r.idler;
            let neither = r.conditional * r.herald - 1.0 + no_h + no_i;
            let (ph, pi) = (1.0 - r.dark_h, 1.0 - r.dark_i);
            let y_u = check_unit("pair-only herald silence probability", no_h / ph)?;
            let y_v = check_unit("pair-only idler silence probability", no_i / pi)?;
            let y_w = check_unit("pair-only joint silence probability", neither / (ph * pi))?;
            let u = pgf_inverse(opts.law, opts.modes, y_u);
            let v = pgf_inverse(opts.law, opts.modes, y_v);
            let w = pgf_inverse(opts.law, opts.modes, y_w);
            // u = μa, v = μb, w = μ(a + b − ab)
            let denom = u + v - w;
            if !(denom > 0.0) {
                return Err(Error::InfeasibleCounts(format!(
                    "no pair correlation left after dark correction (u + v − w = {denom:e})"
                )));
            }
            let mu = u * v / denom;
            let alpha_s = check_unit("alpha_signal", denom / v / ts)?;
            let alpha_i = check_unit("alpha_idler", denom / u / ti)?;
            Ok((mu, alpha_s, alpha_i))
        }
    }
}

/// Estimates μ, the coupling coefficients and the heralded statistics from
/// measured rates.
pub fn estimate_source(
    counts: &CountRates,
    known: &KnownLosses,
    opts: &EstimatorOptions,
) -> Result<SourceEstimate> {
    counts.validate()?;
    known.validate()?;
    let reduced = reduce(counts, known, opts)?;
    let (mu, alpha_signal, alpha_idler) = invert(&reduced, known, opts)?;
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InfeasibleCounts(format!("inferred mu = {mu}")));
    }

    let pairs = match opts.law {
        PairLaw::Poissonian => PairNumberDistribution::poissonian(mu),
        PairLaw::Thermal => PairNumberDistribution::thermal(mu),
        PairLaw::MultimodeThermal => PairNumberDistribution::multimode_thermal(mu, opts.modes),
    };
    let mut herald = ClickDetectorSpec::free_running(known.eta_herald, known.dark_herald_rate);
    herald.afterpulse_prob = known.afterpulse_herald;
    let config = SetupConfig {
        rep_rate: known.rep_rate,
        pairs,
        pump_calibration_per_mw: 0.0,
        alpha_signal,
        alpha_idler,
        t_signal_optics: known.t_signal_optics,
        t_idler_optics: known.t_idler_optics,
        t_delay_fiber: known.t_delay_fiber,
        herald,
        idler_detector: ClickDetectorSpec::gated(
            known.eta_idler,
            known.dark_idler_per_gate,
            known.afterpulse_idler,
        ),
        trigger_dead_time: DeadTimeSpec::paralyzable(0.0),
        gate_rate: counts.gate_rate,
        coincidence_window: 1,
    };
    let heralded = heralded_photon_statistics(&config, &RunSpec::analytic())?;
    Ok(SourceEstimate {
        mu,
        pair_rate: mu * known.rep_rate,
        alpha_signal,
        alpha_idler,
        heralded,
    })
}

/// Coherent source matched to a given single-photon probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WcpComparison {
    pub mu_coherent: f64,
    pub p1_coherent: f64,
    pub p2_coherent: f64,
    /// `p2_coherent / p2_source`.
    pub suppression_ratio: f64,
}

pub const WCP_ROOT_TOL: f64 = 1e-12;

/// Mean photon number of the attenuated laser with `P(1) = p1`, taking the
/// root below one, and its two-photon probability relative to `p2_source`.
pub fn equivalent_wcp(p1: f64, p2_source: f64) -> Result<WcpComparison> {
    let e_inv = (-1.0f64).exp();
    if !(p1 > 0.0) {
        return Err(Error::Domain(format!("p1 must be > 0, got {p1}")));
    }
    if p1 > e_inv {
        return Err(Error::NoSolution(format!(
            "p1 = {p1} exceeds the coherent-state maximum 1/e"
        )));
    }
    if !(p2_source >= 0.0) {
        return Err(Error::Domain(format!(
            "p2_source must be >= 0, got {p2_source}"
        )));
    }
    let mu = bisect(|m| m * (-m).exp() - p1, 0.0, 1.0, WCP_ROOT_TOL);
    let p2 = 0.5 * mu * mu * (-mu).exp();
    Ok(WcpComparison {
        mu_coherent: mu,
        p1_coherent: mu * (-mu).exp(),
        p2_coherent: p2,
        suppression_ratio: p2 / p2_source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::simulate_counts;

    fn reference_counts() -> CountRates {
        CountRates::measured(2.90e5, 285.0, 205e3, 3053.0, 2.16e5)
    }

    #[test]
    fn low_mu_on_reference_counts() {
        let known = KnownLosses::from_setup(&SetupConfig::reference());
        let e = estimate_source(&reference_counts(), &known, &EstimatorOptions::default()).unwrap();
        assert!((e.mu / 0.0829 - 1.0).abs() < 0.05, "{e:?}");
        assert!((e.alpha_idler / 0.22 - 1.0).abs() < 0.10);
        assert!((e.alpha_signal / 0.1687 - 1.0).abs() < 0.10);
        assert!((e.pair_rate / (e.mu * 8.2e7) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_round_trip_is_tight() {
        let cfg = SetupConfig::reference();
        let counts = simulate_counts(&cfg, &RunSpec::analytic()).unwrap();
        let known = KnownLosses::from_setup(&cfg);
        let e = estimate_source(&counts, &known, &EstimatorOptions::exact()).unwrap();
        assert!((e.mu / cfg.mu() - 1.0).abs() < 1e-9, "{e:?}");
        assert!((e.alpha_signal / cfg.alpha_signal - 1.0).abs() < 1e-9);
        assert!((e.alpha_idler / cfg.alpha_idler - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exact_round_trip_thermal() {
        let mut cfg = SetupConfig::reference();
        cfg.pairs = PairNumberDistribution::multimode_thermal(0.15, 3);
        let counts = simulate_counts(&cfg, &RunSpec::analytic()).unwrap();
        let opts = EstimatorOptions {
            law: PairLaw::MultimodeThermal,
            modes: 3,
            ..EstimatorOptions::exact()
        };
        let e = estimate_source(&counts, &KnownLosses::from_setup(&cfg), &opts).unwrap();
        assert!((e.mu / 0.15 - 1.0).abs() < 1e-8, "{e:?}");
    }

    #[test]
    fn infeasible_counts_name_the_bound() {
        let known = KnownLosses::from_setup(&SetupConfig::reference());
        let counts = CountRates::measured(2.90e5, 285.0, 205e3, 3.0e5, 2.16e5);
        match estimate_source(&counts, &known, &EstimatorOptions::default()) {
            Err(Error::InfeasibleCounts(msg)) => assert!(msg.contains("per trigger"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let counts = CountRates::measured(50.0, 285.0, 205e3, 3053.0, 2.16e5);
        assert!(matches!(
            estimate_source(&counts, &known, &EstimatorOptions::default()),
            Err(Error::InfeasibleCounts(_))
        ));
    }

    #[test]
    fn wcp_root() {
        let w = equivalent_wcp(0.1871, 2.4e-3).unwrap();
        assert!((w.mu_coherent * (-w.mu_coherent).exp() - 0.1871).abs() < 1e-9);
        assert!((w.mu_coherent - 0.2371812).abs() < 1e-6);
        assert!(w.suppression_ratio > 8.3 && w.suppression_ratio < 10.3);
        assert!(matches!(
            equivalent_wcp(0.4, 1e-3),
            Err(Error::NoSolution(_))
        ));
        assert!(matches!(equivalent_wcp(0.0, 1e-3), Err(Error::Domain(_))));
    }

    #[test]
    fn wcp_small_p1_limit() {
        let p1 = 1e-6;
        let w = equivalent_wcp(p1, 1e-13).unwrap();
        let limit = p1 * p1 / 2.0 / 1e-13;
        assert!((w.suppression_ratio / limit - 1.0).abs() < 1e-5);
    }
}
