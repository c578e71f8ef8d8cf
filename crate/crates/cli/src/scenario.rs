//! Scenario files: one TOML document describing the crystal, the source, the
//! optical losses, the detectors, the trigger dead time, the QKD channel and
//! run settings. Every section is optional; a subcommand fails with a
//! validation error if one it needs is missing.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use herald_core::detectors::{ClickDetectorSpec, DeadTimeModel, DeadTimeSpec, DetectorMode};
use herald_core::estimator::{EstimatorOptions, InversionMethod, KnownLosses};
use herald_core::experiment::{Mode, RunSpec, SetupConfig};
use herald_core::pair_source::{calibrate_pump, PairLaw, PairNumberDistribution};
use herald_core::phase_matching::{BandpassFilter, CrystalSpec, SpectralGrid, WavelengthTriple};
use herald_core::qkd::ChannelSpec;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crystal: Option<CrystalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<LossesSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detectors: Option<DetectorsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dead_time: Option<DeadTimeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrystalSection {
    /// Only "bbo" is shipped.
    pub material: String,
    pub length_mm: f64,
    pub cut_angle_deg: f64,
    /// Internal angle of the pump to the optic axis for `spectrum`. Omitted:
    /// the crystal is taken as angle-tuned to the source wavelengths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning_angle_deg: Option<f64>,
    /// [start_nm, stop_nm, points]
    pub signal_grid_nm: (f64, f64, usize),
    pub idler_grid_nm: (f64, f64, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub pump_nm: f64,
    pub signal_nm: f64,
    pub pump_fwhm_nm: f64,
    pub rep_rate_hz: f64,
    #[serde(default)]
    pub law: PairLaw,
    pub mu: f64,
    #[serde(default = "one")]
    pub modes: u32,
    /// Pump power at which `mu` was calibrated.
    pub reference_pump_mw: f64,
    pub alpha_signal: f64,
    pub alpha_idler: f64,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossesSection {
    pub t_signal_optics: f64,
    pub t_idler_optics: f64,
    pub t_delay_fiber: f64,
    /// Effective spectral acceptance of the signal fiber coupling.
    pub signal_filter_center_nm: f64,
    pub signal_filter_fwhm_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorsSection {
    pub herald: HeraldDetector,
    pub idler: IdlerDetector,
    /// Idler gates opened per trigger.
    #[serde(default = "one")]
    pub coincidence_window: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeraldDetector {
    pub efficiency: f64,
    pub dark_rate_cps: f64,
    #[serde(default)]
    pub afterpulse_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdlerDetector {
    pub efficiency: f64,
    pub dark_prob_per_gate: f64,
    #[serde(default)]
    pub afterpulse_prob: f64,
    pub gate_width_ns: f64,
    pub gate_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeadTimeSection {
    pub tau_us: f64,
    #[serde(default)]
    pub model: DeadTimeModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub loss_db_per_km: f64,
    pub receiver_efficiency: f64,
    pub receiver_dark_per_pulse: f64,
    #[serde(default = "cap")]
    pub max_distance_km: f64,
}

fn cap() -> f64 {
    500.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub n_pulses: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// μ values for `sweep`.
    #[serde(default)]
    pub sweep_mu: Vec<f64>,
    #[serde(default = "half")]
    pub splitter_ratio: f64,
    #[serde(default)]
    pub estimator: InversionMethod,
    #[serde(default = "yes")]
    pub subtract_dark: bool,
    #[serde(default = "yes")]
    pub correct_afterpulse: bool,
}

fn half() -> f64 {
    0.5
}

fn yes() -> bool {
    true
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: Mode::Analytic,
            n_pulses: 0,
            seed: None,
            output_dir: None,
            sweep_mu: Vec::new(),
            splitter_ratio: half(),
            estimator: InversionMethod::LowMu,
            subtract_dark: true,
            correct_afterpulse: true,
        }
    }
}

/// Section names in file order.
pub const SECTIONS: [&str; 7] = [
    "crystal",
    "source",
    "losses",
    "detectors",
    "dead_time",
    "channel",
    "run",
];

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Sets `a.b.c = value` in a TOML table, creating intermediate tables.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::validation(format!("override `{spec}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::validation(format!(
            "override key `{path}` is malformed"
        )));
    }
    let (last, parents) = keys.split_last().expect("split yields one key");
    let mut cur = table;
    for k in parents {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            CliError::validation(format!("override `{path}`: `{k}` is not a section"))
        })?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl Scenario {
    /// Parses a scenario and applies `key=value` overrides before the typed
    /// deserialization, so an override naming an unknown key is rejected
    /// the same way a bad key in the file is.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::validation(format!("scenario: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Scenario::deserialize(table).map_err(|e| CliError::validation(format!("scenario: {e}")))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Names of the sections present in the file.
    pub fn present_sections(&self) -> BTreeSet<&'static str> {
        let flags = [
            self.crystal.is_some(),
            self.source.is_some(),
            self.losses.is_some(),
            self.detectors.is_some(),
            self.dead_time.is_some(),
            self.channel.is_some(),
            self.run.is_some(),
        ];
        SECTIONS
            .iter()
            .zip(flags)
            .filter(|(_, f)| *f)
            .map(|(s, _)| *s)
            .collect()
    }

    /// Consistency remarks that do not prevent a run.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(s) = &self.source {
            if s.law != PairLaw::MultimodeThermal && s.modes != 1 {
                out.push(format!(
                    "source.modes = {} is ignored for law {:?}",
                    s.modes, s.law
                ));
            }
        }
        if let Some(r) = &self.run {
            if r.mode == Mode::Analytic && r.n_pulses > 0 && r.seed.is_none() {
                out.push("run.n_pulses is set but no seed is given for monte carlo".into());
            }
        }
        out
    }

    fn need<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        section
            .as_ref()
            .ok_or_else(|| CliError::validation(format!("scenario has no [{name}] section")))
    }

    pub fn run_section(&self) -> RunSection {
        self.run.clone().unwrap_or_default()
    }

    pub fn crystal(&self) -> Result<CrystalSpec, CliError> {
        let c = Self::need(&self.crystal, "crystal")?;
        if !c.material.eq_ignore_ascii_case("bbo") {
            return Err(CliError::validation(format!(
                "crystal.material `{}` is not supported (only \"bbo\")",
                c.material
            )));
        }
        let mut spec = CrystalSpec::bbo().with_length(c.length_mm);
        spec.cut_angle_deg = c.cut_angle_deg;
        spec.validate()?;
        Ok(spec)
    }

    pub fn grid(&self) -> Result<SpectralGrid, CliError> {
        let c = Self::need(&self.crystal, "crystal")?;
        Ok(SpectralGrid::uniform(c.signal_grid_nm, c.idler_grid_nm))
    }

    pub fn triple(&self) -> Result<WavelengthTriple, CliError> {
        let s = Self::need(&self.source, "source")?;
        Ok(WavelengthTriple::from_pump_signal(s.pump_nm, s.signal_nm)?)
    }

    pub fn pump(&self) -> Result<(f64, f64), CliError> {
        let s = Self::need(&self.source, "source")?;
        Ok((s.pump_nm, s.pump_fwhm_nm))
    }

    pub fn signal_filter(&self) -> Result<BandpassFilter, CliError> {
        let l = Self::need(&self.losses, "losses")?;
        Ok(BandpassFilter {
            center_nm: l.signal_filter_center_nm,
            fwhm_nm: l.signal_filter_fwhm_nm,
        })
    }

    pub fn setup(&self) -> Result<SetupConfig, CliError> {
        let s = Self::need(&self.source, "source")?;
        let l = Self::need(&self.losses, "losses")?;
        let d = Self::need(&self.detectors, "detectors")?;
        let trigger_dead_time = match &self.dead_time {
            Some(dt) => DeadTimeSpec {
                tau_us: dt.tau_us,
                model: dt.model,
            },
            None => DeadTimeSpec::paralyzable(0.0),
        };
        let pairs = match s.law {
            PairLaw::Poissonian => PairNumberDistribution::poissonian(s.mu),
            PairLaw::Thermal => PairNumberDistribution::thermal(s.mu),
            PairLaw::MultimodeThermal => PairNumberDistribution::multimode_thermal(s.mu, s.modes),
        };
        let herald = ClickDetectorSpec {
            efficiency: d.herald.efficiency,
            afterpulse_prob: d.herald.afterpulse_prob,
            mode: DetectorMode::FreeRunning {
                dark_rate: d.herald.dark_rate_cps,
            },
        };
        let idler_detector = ClickDetectorSpec {
            efficiency: d.idler.efficiency,
            afterpulse_prob: d.idler.afterpulse_prob,
            mode: DetectorMode::Gated {
                dark_prob_per_gate: d.idler.dark_prob_per_gate,
                gate_width_ns: d.idler.gate_width_ns,
            },
        };
        let config = SetupConfig {
            rep_rate: s.rep_rate_hz,
            pairs,
            pump_calibration_per_mw: calibrate_pump(s.mu, s.reference_pump_mw)?,
            alpha_signal: s.alpha_signal,
            alpha_idler: s.alpha_idler,
            t_signal_optics: l.t_signal_optics,
            t_idler_optics: l.t_idler_optics,
            t_delay_fiber: l.t_delay_fiber,
            herald,
            idler_detector,
            trigger_dead_time,
            gate_rate: d.idler.gate_rate_hz,
            coincidence_window: d.coincidence_window,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn known_losses(&self) -> Result<KnownLosses, CliError> {
        Ok(KnownLosses::from_setup(&self.setup()?))
    }

    pub fn estimator_options(&self) -> Result<EstimatorOptions, CliError> {
        let s = Self::need(&self.source, "source")?;
        let r = self.run_section();
        Ok(EstimatorOptions {
            method: r.estimator,
            subtract_dark: r.subtract_dark,
            correct_afterpulse: r.correct_afterpulse,
            law: s.law,
            modes: s.modes,
        })
    }

    pub fn channel(&self) -> Result<ChannelSpec, CliError> {
        let c = Self::need(&self.channel, "channel")?;
        let spec = ChannelSpec {
            loss_db_per_km: c.loss_db_per_km,
            receiver_efficiency: c.receiver_efficiency,
            receiver_dark_per_pulse: c.receiver_dark_per_pulse,
            max_distance_km: c.max_distance_km,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn run_spec(&self) -> RunSpec {
        let r = self.run_section();
        RunSpec {
            mode: r.mode,
            n_pulses: r.n_pulses,
            seed: r.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_inserts_nested_keys() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "source.mu=0").unwrap();
        apply_override(&mut t, "run.mode = \"monte_carlo\"").unwrap();
        apply_override(&mut t, "run.output_dir=out/x").unwrap();
        assert_eq!(t["source"]["mu"], toml::Value::Integer(0));
        assert_eq!(t["run"]["mode"], toml::Value::String("monte_carlo".into()));
        assert_eq!(t["run"]["output_dir"], toml::Value::String("out/x".into()));
        assert!(apply_override(&mut t, "source").is_err());
        assert!(apply_override(&mut t, "source..mu=1").is_err());
        assert!(apply_override(&mut t, "source.mu.x=1").is_err());
    }
}
