//! Subcommand implementations. Each one reads what it needs from the
//! scenario, evaluates the core model, writes its artifacts and returns a
//! short human-readable summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use herald_core::estimator::{equivalent_wcp, estimate_source};
use herald_core::experiment::{
    hbt_g2, heralded_photon_statistics, simulate_counts, CountRates, HbtArm, Mode, MonteCarloTally,
    RunSpec,
};
use herald_core::phase_matching::{
    collinear_pm_angle, heralded_marginal_bandwidth, joint_spectral_intensity, tuning_curve,
};
use herald_core::qkd::{coherent_stats, max_secure_distance, multiphoton_fraction, pump_sweep};

use crate::error::CliError;
use crate::scenario::Scenario;

/// Output directory used when neither `--out`, the environment nor the
/// scenario names one.
pub const DEFAULT_OUT_DIR: &str = "herald-out";
/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "HERALD_OUT_DIR";

pub const SWEEP_CSV_HEADER: &str = "mu,pump_mW,trigger_cps,p1,p2,max_km";
pub const TUNING_CSV_HEADER: &str = "signal_nm,idler_nm,mismatch_per_mm";

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Simulate,
    HeraldStats,
    Estimate { counts: PathBuf },
    WcpCompare,
    Sweep,
    Phasematch,
    Spectrum,
    G2,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::HeraldStats => "herald-stats",
            Command::Estimate { .. } => "estimate",
            Command::WcpCompare => "wcp-compare",
            Command::Sweep => "sweep",
            Command::Phasematch => "phasematch",
            Command::Spectrum => "spectrum",
            Command::G2 => "g2",
        }
    }

    /// Scenario sections the subcommand reads.
    pub fn sections(&self) -> &'static [&'static str] {
        const FORWARD: &[&str] = &["source", "losses", "detectors", "dead_time", "run"];
        match self {
            Command::Simulate | Command::HeraldStats | Command::G2 => FORWARD,
            Command::Estimate { .. } => &["source", "losses", "detectors", "run"],
            Command::WcpCompare | Command::Sweep => &[
                "source",
                "losses",
                "detectors",
                "dead_time",
                "channel",
                "run",
            ],
            Command::Phasematch => &["crystal", "source", "run"],
            Command::Spectrum => &["crystal", "source", "losses", "run"],
        }
    }
}

/// Everything that identifies one invocation besides the subcommand.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub scenario: PathBuf,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub pulses: Option<u64>,
    pub out: Option<PathBuf>,
    /// Value of [`OUT_DIR_ENV`], read by the caller.
    pub env_out_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct Outcome {
    pub summary: String,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
    pub json: Value,
}

/// Measured rates handed to `estimate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuredCounts {
    pub signal_singles: f64,
    pub idler_singles: f64,
    pub gate_rate: f64,
    pub coincidences: f64,
    pub trigger_rate: f64,
}

impl From<MeasuredCounts> for CountRates {
    fn from(m: MeasuredCounts) -> Self {
        CountRates::measured(
            m.signal_singles,
            m.idler_singles,
            m.gate_rate,
            m.coincidences,
            m.trigger_rate,
        )
    }
}

fn flag_overrides(inv: &Invocation) -> Vec<String> {
    let mut all = inv.overrides.clone();
    if let Some(mode) = inv.mode {
        let name = match mode {
            Mode::Analytic => "analytic",
            Mode::MonteCarlo => "monte_carlo",
        };
        all.push(format!("run.mode=\"{name}\""));
    }
    if let Some(seed) = inv.seed {
        all.push(format!("run.seed={seed}"));
    }
    if let Some(n) = inv.pulses {
        all.push(format!("run.n_pulses={n}"));
    }
    all
}

pub fn config_hash(scenario: &Scenario) -> String {
    hex::encode(Sha256::digest(scenario.to_toml().as_bytes()))
}

fn out_dir(inv: &Invocation, scenario: &Scenario) -> PathBuf {
    inv.out
        .clone()
        .or_else(|| inv.env_out_dir.clone())
        .or_else(|| scenario.run_section().output_dir.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::io(format!("creating {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))?;
    Ok(path)
}

struct Product {
    summary: String,
    result: Value,
    /// (file name, contents) pairs besides the JSON report.
    extra: Vec<(String, Vec<u8>)>,
}

pub fn execute(cmd: &Command, inv: &Invocation) -> Result<Outcome, CliError> {
    let scenario = Scenario::load(&inv.scenario, &flag_overrides(inv))?;
    let mut warnings = scenario.warnings();
    for present in scenario.present_sections() {
        if !cmd.sections().contains(&present) {
            warnings.push(format!(
                "section [{present}] is not used by `{}`",
                cmd.name()
            ));
        }
    }

    let product = match cmd {
        Command::Simulate => simulate(&scenario)?,
        Command::HeraldStats => herald_stats(&scenario)?,
        Command::Estimate { counts } => estimate(&scenario, counts)?,
        Command::WcpCompare => wcp_compare(&scenario)?,
        Command::Sweep => sweep(&scenario, &mut warnings)?,
        Command::Phasematch => phasematch(&scenario)?,
        Command::Spectrum => spectrum(&scenario)?,
        Command::G2 => g2(&scenario)?,
    };

    let run = scenario.run_spec();
    let json = json!({
        "command": cmd.name(),
        "provenance": {
            "version": env!("CARGO_PKG_VERSION"),
            "config_sha256": config_hash(&scenario),
            "mode": run.mode,
            "seed": run.seed,
            "n_pulses": run.n_pulses,
            "overrides": flag_overrides(inv),
        },
        "warnings": warnings,
        "result": product.result,
    });

    let dir = out_dir(inv, &scenario);
    let mut files = Vec::new();
    let mut report = serde_json::to_vec_pretty(&json).expect("json serializes");
    report.push(b'\n');
    files.push(write_file(&dir, &format!("{}.json", cmd.name()), &report)?);
    for (name, contents) in &product.extra {
        files.push(write_file(&dir, name, contents)?);
    }
    Ok(Outcome {
        summary: product.summary,
        warnings,
        files,
        json,
    })
}

fn mc_params(run: &RunSpec) -> Result<(u64, u64), CliError> {
    let seed = run.seed.ok_or(herald_core::Error::MissingSeed)?;
    if run.n_pulses == 0 {
        return Err(CliError::validation("monte carlo needs run.n_pulses > 0"));
    }
    Ok((run.n_pulses, seed))
}

fn mode_label(run: &RunSpec) -> String {
    match run.mode {
        Mode::Analytic => "analytic".into(),
        Mode::MonteCarlo => format!(
            "monte carlo, {} pulses, seed {}",
            run.n_pulses,
            run.seed.map_or("-".into(), |s| s.to_string())
        ),
    }
}

fn simulate(scenario: &Scenario) -> Result<Product, CliError> {
    let config = scenario.setup()?;
    let run = scenario.run_spec();
    let (counts, sigma) = match run.mode {
        Mode::Analytic => (simulate_counts(&config, &run)?, None),
        Mode::MonteCarlo => {
            let (n, seed) = mc_params(&run)?;
            let tally = MonteCarloTally::run(&config, n, seed)?;
            (tally.rates(&config), Some(tally.sigma(&config)))
        }
    };
    let mut s = format!("count rates ({})\n", mode_label(&run));
    let rows = [
        (
            "signal singles",
            counts.signal_singles,
            sigma.map(|x| x.signal_singles),
        ),
        (
            "idler singles",
            counts.idler_singles,
            sigma.map(|x| x.idler_singles),
        ),
        (
            "trigger rate",
            counts.trigger_rate,
            sigma.map(|x| x.trigger_rate),
        ),
        (
            "coincidences",
            counts.coincidences,
            sigma.map(|x| x.coincidences),
        ),
    ];
    for (name, v, e) in rows {
        match e {
            Some(e) => writeln!(s, "  {name:<16} {v:>12.4e} ± {e:.2e} cps").unwrap(),
            None => writeln!(s, "  {name:<16} {v:>12.4e} cps").unwrap(),
        }
    }
    writeln!(
        s,
        "  {:<16} {:>12.0} Hz",
        "idler gate rate", counts.gate_rate
    )
    .unwrap();
    writeln!(
        s,
        "  {:<16} {:>12.5}",
        "C / trigger", counts.per_trigger_coincidence_prob
    )
    .unwrap();
    Ok(Product {
        summary: s,
        result: json!({ "counts": counts, "sigma": sigma }),
        extra: Vec::new(),
    })
}

fn herald_stats(scenario: &Scenario) -> Result<Product, CliError> {
    let config = scenario.setup()?;
    let run = scenario.run_spec();
    let (stats, sigma) = match run.mode {
        Mode::Analytic => (heralded_photon_statistics(&config, &run)?, None),
        Mode::MonteCarlo => {
            let (n, seed) = mc_params(&run)?;
            let tally = MonteCarloTally::run(&config, n, seed)?;
            let sig: Vec<f64> = (0..tally.heralded_hist.len())
                .map(|k| tally.heralded_sigma(k))
                .collect();
            (tally.heralded_stats()?, Some(sig))
        }
    };
    let mut s = format!(
        "heralded photon number at the source output ({})\n",
        mode_label(&run)
    );
    for k in 0..stats.p.len().min(4) {
        let p = stats.prob(k);
        match &sigma {
            Some(sig) => writeln!(s, "  P({k}) = {p:.6e} ± {:.1e}", sig[k]).unwrap(),
            None => writeln!(s, "  P({k}) = {p:.6e}").unwrap(),
        }
    }
    writeln!(s, "  P(n>=2) = {:.6e}", stats.multiphoton()).unwrap();
    writeln!(s, "  g2(0)  = {:.4}", stats.g2()).unwrap();
    Ok(Product {
        summary: s,
        result: json!({
            "p": stats.p,
            "sigma": sigma,
            "multiphoton": stats.multiphoton(),
            "mean": stats.mean(),
            "g2": stats.g2(),
        }),
        extra: Vec::new(),
    })
}

fn estimate(scenario: &Scenario, counts_path: &Path) -> Result<Product, CliError> {
    let text = fs::read_to_string(counts_path)
        .map_err(|e| CliError::io(format!("reading {}: {e}", counts_path.display())))?;
    let measured: MeasuredCounts = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("counts file: {e}")))?;
    let known = scenario.known_losses()?;
    let opts = scenario.estimator_options()?;
    let est = estimate_source(&measured.into(), &known, &opts)?;
    let mut s = format!("source estimate ({:?} inversion)\n", opts.method);
    writeln!(s, "  mu           = {:.5}", est.mu).unwrap();
    writeln!(s, "  pair rate    = {:.4e} /s", est.pair_rate).unwrap();
    writeln!(s, "  alpha_signal = {:.4}", est.alpha_signal).unwrap();
    writeln!(s, "  alpha_idler  = {:.4}", est.alpha_idler).unwrap();
    for k in 0..3 {
        writeln!(s, "  P({k}) = {:.6e}", est.heralded.prob(k)).unwrap();
    }
    Ok(Product {
        summary: s,
        result: json!({ "input": measured, "known_losses": known, "options": opts, "estimate": est }),
        extra: Vec::new(),
    })
}

fn wcp_compare(scenario: &Scenario) -> Result<Product, CliError> {
    let config = scenario.setup()?;
    let stats = heralded_photon_statistics(&config, &RunSpec::analytic())?;
    let w = equivalent_wcp(stats.p1(), stats.p2())?;
    let mut s = String::from("attenuated laser with the same P(1)\n");
    writeln!(s, "  P(1)               = {:.6}", stats.p1()).unwrap();
    writeln!(s, "  mu_coherent        = {:.6}", w.mu_coherent).unwrap();
    writeln!(s, "  P(2) heralded      = {:.4e}", stats.p2()).unwrap();
    writeln!(s, "  P(2) coherent      = {:.4e}", w.p2_coherent).unwrap();
    writeln!(s, "  suppression ratio  = {:.3}", w.suppression_ratio).unwrap();
    let mut distances = Value::Null;
    if scenario.channel.is_some() {
        let channel = scenario.channel()?;
        let coherent = coherent_stats(w.mu_coherent)?;
        let h = max_secure_distance(&stats, &channel)?;
        let c = max_secure_distance(&coherent, &channel)?;
        writeln!(
            s,
            "  multiphoton heralded / coherent = {:.4e} / {:.4e}",
            multiphoton_fraction(&stats),
            multiphoton_fraction(&coherent)
        )
        .unwrap();
        writeln!(
            s,
            "  max secure distance heralded = {:.1} km ({:?})",
            h.km, h.status
        )
        .unwrap();
        writeln!(
            s,
            "  max secure distance coherent = {:.1} km ({:?})",
            c.km, c.status
        )
        .unwrap();
        distances = json!({ "channel": channel, "heralded": h, "coherent": c });
    }
    Ok(Product {
        summary: s,
        result: json!({ "heralded": stats, "wcp": w, "secure_distance": distances }),
        extra: Vec::new(),
    })
}

fn sweep(scenario: &Scenario, warnings: &mut Vec<String>) -> Result<Product, CliError> {
    let config = scenario.setup()?;
    let channel = scenario.channel()?;
    let mus = scenario.run_section().sweep_mu;
    if mus.is_empty() {
        return Err(CliError::validation("run.sweep_mu is empty"));
    }
    let rows = pump_sweep(&config, &mus, &channel)?;
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(SWEEP_CSV_HEADER.split(','))
        .map_err(|e| CliError::io(e.to_string()))?;
    let mut s = format!("pump sweep, {} points\n  {SWEEP_CSV_HEADER}\n", mus.len());
    let mut json_rows = Vec::new();
    for (mu, row) in mus.iter().zip(&rows) {
        match row {
            Ok(r) => {
                let rec = [
                    r.mu.to_string(),
                    r.pump_power_mw.to_string(),
                    r.trigger_rate.to_string(),
                    r.p1.to_string(),
                    r.p2.to_string(),
                    r.max_secure_km.to_string(),
                ];
                csv.write_record(&rec)
                    .map_err(|e| CliError::io(e.to_string()))?;
                writeln!(
                    s,
                    "  {:.4},{:.1},{:.4e},{:.5},{:.4e},{:.1}",
                    r.mu, r.pump_power_mw, r.trigger_rate, r.p1, r.p2, r.max_secure_km
                )
                .unwrap();
                json_rows.push(json!({ "ok": r }));
            }
            Err(e) => {
                csv.write_record([
                    mu.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ])
                .map_err(|e| CliError::io(e.to_string()))?;
                warnings.push(format!("sweep row mu = {mu} failed: {e}"));
                writeln!(s, "  {mu:.4}: failed ({e})").unwrap();
                json_rows.push(json!({ "mu": mu, "error": e.to_string() }));
            }
        }
    }
    let bytes = csv.into_inner().map_err(|e| CliError::io(e.to_string()))?;
    Ok(Product {
        summary: s,
        result: json!({ "channel": channel, "rows": json_rows }),
        extra: vec![("sweep.csv".into(), bytes)],
    })
}

fn phasematch(scenario: &Scenario) -> Result<Product, CliError> {
    let crystal = scenario.crystal()?;
    let triple = scenario.triple()?;
    let theta = collinear_pm_angle(&crystal, &triple)?;
    let grid = &scenario
        .crystal
        .as_ref()
        .expect("crystal checked")
        .signal_grid_nm;
    let curve = tuning_curve(
        &crystal,
        crystal.cut_angle_deg,
        triple.pump,
        (grid.0, grid.1),
        grid.2,
    )?;
    let mut csv = String::from(TUNING_CSV_HEADER);
    csv.push('\n');
    for p in &curve {
        writeln!(csv, "{},{},{}", p.signal_nm, p.idler_nm, p.mismatch_per_mm).unwrap();
    }
    let mut s = String::from("collinear type-I phase matching\n");
    writeln!(
        s,
        "  pump / signal / idler = {:.2} / {:.2} / {:.3} nm",
        triple.pump, triple.signal, triple.idler
    )
    .unwrap();
    writeln!(
        s,
        "  phase-matching angle  = {theta:.4} deg (cut {:.2} deg)",
        crystal.cut_angle_deg
    )
    .unwrap();
    writeln!(
        s,
        "  n_o(signal) = {:.6}, n_o(idler) = {:.6}, n_e(pump, theta) = {:.6}",
        crystal.index_ordinary(triple.signal)?,
        crystal.index_ordinary(triple.idler)?,
        crystal.index_extraordinary_at_angle(theta, triple.pump)?
    )
    .unwrap();
    Ok(Product {
        summary: s,
        result: json!({ "crystal": crystal, "triple": triple, "theta_deg": theta, "tuning_curve": curve }),
        extra: vec![("tuning_curve.csv".into(), csv.into_bytes())],
    })
}

fn spectrum(scenario: &Scenario) -> Result<Product, CliError> {
    let crystal = scenario.crystal()?;
    let grid = scenario.grid()?;
    let (pump_nm, pump_fwhm) = scenario.pump()?;
    let filter = scenario.signal_filter()?;
    let theta = match scenario.crystal.as_ref().and_then(|c| c.tuning_angle_deg) {
        Some(t) => t,
        None => collinear_pm_angle(&crystal, &scenario.triple()?)?,
    };
    let jsi = joint_spectral_intensity(&crystal, theta, pump_nm, pump_fwhm, &grid)?;
    let heralded = heralded_marginal_bandwidth(&jsi, &filter)?;
    let (i, j) = jsi.peak();
    let mut csv = Vec::new();
    jsi.write_csv(&mut csv)?;
    let mut s = format!("joint spectral intensity at {theta:.4} deg\n");
    writeln!(
        s,
        "  peak at signal {:.2} nm, idler {:.2} nm",
        jsi.signal_axis[i], jsi.idler_axis[j]
    )
    .unwrap();
    writeln!(
        s,
        "  signal marginal FWHM  = {:.2} nm",
        jsi.signal_fwhm().unwrap_or(f64::NAN)
    )
    .unwrap();
    writeln!(
        s,
        "  idler marginal FWHM   = {:.2} nm",
        jsi.idler_fwhm().unwrap_or(f64::NAN)
    )
    .unwrap();
    writeln!(
        s,
        "  heralded idler FWHM   = {heralded:.2} nm (signal filter {:.1} nm at {:.1} nm)",
        filter.fwhm_nm, filter.center_nm
    )
    .unwrap();
    Ok(Product {
        summary: s,
        result: json!({
            "theta_deg": theta,
            "peak_nm": [jsi.signal_axis[i], jsi.idler_axis[j]],
            "signal_fwhm_nm": jsi.signal_fwhm(),
            "idler_fwhm_nm": jsi.idler_fwhm(),
            "heralded_idler_fwhm_nm": heralded,
            "filter": filter,
        }),
        extra: vec![("spectrum.csv".into(), csv)],
    })
}

fn g2(scenario: &Scenario) -> Result<Product, CliError> {
    let config = scenario.setup()?;
    let run = scenario.run_spec();
    let ratio = scenario.run_section().splitter_ratio;
    let signal = hbt_g2(&config, HbtArm::SignalUnconditioned, ratio, &run)?;
    let idler = hbt_g2(&config, HbtArm::IdlerHeralded, ratio, &run)?;
    let mut s = format!("HBT g2(0) ({}, splitter {ratio})\n", mode_label(&run));
    writeln!(
        s,
        "  signal, unconditioned = {:.4} ± {:.4}",
        signal.g2, signal.std_error
    )
    .unwrap();
    writeln!(
        s,
        "  idler, heralded       = {:.4} ± {:.4}",
        idler.g2, idler.std_error
    )
    .unwrap();
    Ok(Product {
        summary: s,
        result: json!({ "splitter_ratio": ratio, "signal_unconditioned": signal, "idler_heralded": idler }),
        extra: Vec::new(),
    })
}
