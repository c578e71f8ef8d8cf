//! Dispersion, collinear type-I phase matching and the joint spectral
//! intensity of the down-converted pair.
//!
//! Conventions: wavelengths in nm at the API, Sellmeier formulas in μm,
//! wave-vector mismatch in rad/mm, angles in degrees from the optic axis.
//! Type-I in a negative uniaxial crystal: extraordinary pump, ordinary signal
//! and idler.

use std::f64::consts::PI;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{bisect, fwhm};

/// Angular resolution of the phase-matching bisection.
pub const ANGLE_TOL_DEG: f64 = 1e-9;
/// Required residual |Δk| relative to k_pump at the returned angle.
pub const MISMATCH_REL_TOL: f64 = 1e-6;

/// `n² = A + B / (λ² − C) − D·λ²`, λ in μm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sellmeier {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Sellmeier {
    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    /// Refractive index at `lambda_um`; `None` where n² is not positive.
    pub fn index(&self, lambda_um: f64) -> Option<f64> {
        let l2 = lambda_um * lambda_um;
        let n2 = self.a + self.b / (l2 - self.c) - self.d * l2;
        (n2 > 0.0).then(|| n2.sqrt())
    }
}

/// β-BaB₂O₄, K. Kato (1986): ordinary ray.
pub const BBO_KATO_1986_ORDINARY: Sellmeier = Sellmeier::new(2.7359, 0.01878, 0.01822, 0.01354);
/// β-BaB₂O₄, K. Kato (1986): extraordinary ray.
pub const BBO_KATO_1986_EXTRAORDINARY: Sellmeier =
    Sellmeier::new(2.3753, 0.01224, 0.01667, 0.01516);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalSpec {
    /// Identifies the coefficient set, e.g. `"bbo-kato-1986"`.
    pub name: String,
    pub sellmeier_ordinary: Sellmeier,
    pub sellmeier_extraordinary: Sellmeier,
    pub length_mm: f64,
    pub cut_angle_deg: f64,
    /// Wavelength window (μm) in which the dispersion formulas are trusted.
    pub window_um: (f64, f64),
}

impl CrystalSpec {
    /// 5 mm BBO cut at 26.42° with the shipped Kato dispersion.
    pub fn bbo() -> Self {
        Self {
            name: "bbo-kato-1986".into(),
            sellmeier_ordinary: BBO_KATO_1986_ORDINARY,
            sellmeier_extraordinary: BBO_KATO_1986_EXTRAORDINARY,
            length_mm: 5.0,
            cut_angle_deg: 26.42,
            window_um: (0.2, 3.0),
        }
    }

    pub fn with_length(mut self, length_mm: f64) -> Self {
        self.length_mm = length_mm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_mm > 0.0) {
            return Err(Error::invalid("crystal", "length must be > 0 mm"));
        }
        if !(0.0..=90.0).contains(&self.cut_angle_deg) {
            return Err(Error::invalid(
                "crystal",
                "cut angle must be in [0, 90] degrees",
            ));
        }
        let (lo, hi) = self.window_um;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::invalid("crystal", "empty validity window"));
        }
        for i in 0..=200 {
            let l = lo + (hi - lo) * i as f64 / 200.0;
            for (ray, s) in [
                ("ordinary", &self.sellmeier_ordinary),
                ("extraordinary", &self.sellmeier_extraordinary),
            ] {
                match s.index(l) {
                    Some(n) if n > 1.0 => {}
                    other => {
                        return Err(Error::invalid(
                            "crystal",
                            format!("{ray} index {other:?} at {l:.3} um is not > 1"),
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    fn check_window(&self, wavelength_nm: f64) -> Result<f64> {
        let um = wavelength_nm * 1e-3;
        let (lo, hi) = self.window_um;
        if !(um >= lo && um <= hi) {
            return Err(Error::Domain(format!(
                "{wavelength_nm} nm is outside the dispersion window [{}, {}] nm",
                lo * 1e3,
                hi * 1e3
            )));
        }
        Ok(um)
    }

    pub fn index_ordinary(&self, wavelength_nm: f64) -> Result<f64> {
        let um = self.check_window(wavelength_nm)?;
        self.sellmeier_ordinary
            .index(um)
            .ok_or_else(|| Error::Domain(format!("ordinary index undefined at {wavelength_nm} nm")))
    }

    pub fn index_extraordinary(&self, wavelength_nm: f64) -> Result<f64> {
        let um = self.check_window(wavelength_nm)?;
        self.sellmeier_extraordinary.index(um).ok_or_else(|| {
            Error::Domain(format!(
                "extraordinary index undefined at {wavelength_nm} nm"
            ))
        })
    }

    /// Extraordinary-wave index for propagation at `theta_deg` from the optic
    /// axis: 1/n(θ)² = cos²θ/n_o² + sin²θ/n_e².
    pub fn index_extraordinary_at_angle(&self, theta_deg: f64, wavelength_nm: f64) -> Result<f64> {
        if !(0.0..=90.0).contains(&theta_deg) {
            return Err(Error::Domain(format!(
                "angle must be in [0, 90] degrees, got {theta_deg}"
            )));
        }
        let n_o = self.index_ordinary(wavelength_nm)?;
        let n_e = self.index_extraordinary(wavelength_nm)?;
        if theta_deg == 0.0 {
            return Ok(n_o);
        }
        if theta_deg == 90.0 {
            return Ok(n_e);
        }
        let (s, c) = theta_deg.to_radians().sin_cos();
        Ok(1.0 / (c * c / (n_o * n_o) + s * s / (n_e * n_e)).sqrt())
    }
}

impl Default for CrystalSpec {
    fn default() -> Self {
        Self::bbo()
    }
}

/// Pump, signal and idler wavelengths linked by energy conservation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavelengthTriple {
    pub pump: f64,
    pub signal: f64,
    pub idler: f64,
}

impl WavelengthTriple {
    pub fn new(pump: f64, signal: f64, idler: f64) -> Result<Self> {
        let t = Self {
            pump,
            signal,
            idler,
        };
        t.validate()?;
        Ok(t)
    }

    /// Idler fixed by energy conservation.
    pub fn from_pump_signal(pump: f64, signal: f64) -> Result<Self> {
        let idler = idler_wavelength(pump, signal)?;
        // order signal <= idler
        if signal <= idler {
            Self::new(pump, signal, idler)
        } else {
            Self::new(pump, idler, signal)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pump > 0.0 && self.pump < self.signal && self.signal <= self.idler) {
            return Err(Error::invalid(
                "wavelength triple",
                format!(
                    "need 0 < pump < signal <= idler, got {}/{}/{} nm",
                    self.pump, self.signal, self.idler
                ),
            ));
        }
        let lhs = 1.0 / self.pump;
        let rhs = 1.0 / self.signal + 1.0 / self.idler;
        if ((lhs - rhs) / lhs).abs() > 1e-9 {
            return Err(Error::invalid(
                "wavelength triple",
                "violates energy conservation 1/pump = 1/signal + 1/idler",
            ));
        }
        Ok(())
    }
}

/// Idler wavelength from energy conservation, 1/(1/pump − 1/signal).
pub fn idler_wavelength(pump_nm: f64, signal_nm: f64) -> Result<f64> {
    if !(pump_nm > 0.0 && signal_nm > pump_nm) {
        return Err(Error::Domain(format!(
            "signal ({signal_nm} nm) must be longer than pump ({pump_nm} nm)"
        )));
    }
    Ok(pump_nm * signal_nm / (signal_nm - pump_nm))
}

fn wavenumber_per_mm(index: f64, wavelength_nm: f64) -> f64 {
    2.0 * PI * index / (wavelength_nm * 1e-6)
}

/// Collinear mismatch Δk = k_p(θ) − k_s − k_i in rad/mm, with the pump
/// wavelength fixed by energy conservation.
pub fn phase_mismatch(
    crystal: &CrystalSpec,
    theta_deg: f64,
    signal_nm: f64,
    idler_nm: f64,
) -> Result<f64> {
    let pump_nm = 1.0 / (1.0 / signal_nm + 1.0 / idler_nm);
    let k_p = wavenumber_per_mm(
        crystal.index_extraordinary_at_angle(theta_deg, pump_nm)?,
        pump_nm,
    );
    let k_s = wavenumber_per_mm(crystal.index_ordinary(signal_nm)?, signal_nm);
    let k_i = wavenumber_per_mm(crystal.index_ordinary(idler_nm)?, idler_nm);
    Ok(k_p - k_s - k_i)
}

/// sinc²(Δk·L/2) at one (signal, idler) point.
pub fn phase_matching_intensity(
    crystal: &CrystalSpec,
    theta_deg: f64,
    signal_nm: f64,
    idler_nm: f64,
) -> Result<f64> {
    let dk = phase_mismatch(crystal, theta_deg, signal_nm, idler_nm)?;
    Ok(sinc2(0.5 * dk * crystal.length_mm))
}

fn sinc2(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0
    } else {
        let s = x.sin() / x;
        s * s
    }
}

/// Angle at which the collinear type-I process for `triple` is phase
/// matched.
pub fn collinear_pm_angle(crystal: &CrystalSpec, triple: &WavelengthTriple) -> Result<f64> {
    triple.validate()?;
    let (lo, hi) = (0.0, 90.0);
    let mismatch = |th: f64| phase_mismatch(crystal, th, triple.signal, triple.idler);
    let r_lo = mismatch(lo)?;
    let r_hi = mismatch(hi)?;
    if r_lo.signum() == r_hi.signum() {
        return Err(Error::NoPhaseMatching {
            lo_deg: lo,
            hi_deg: hi,
            residual_lo: r_lo,
            residual_hi: r_hi,
        });
    }
    // indices already checked at both ends, so the closure cannot fail inside
    let theta = bisect(|th| mismatch(th).unwrap_or(f64::NAN), lo, hi, ANGLE_TOL_DEG);
    let k_p = wavenumber_per_mm(
        crystal.index_extraordinary_at_angle(theta, triple.pump)?,
        triple.pump,
    );
    let residual = mismatch(theta)?;
    if residual.abs() >= MISMATCH_REL_TOL * k_p {
        return Err(Error::NoSolution(format!(
            "bisection converged to {theta}° with residual {residual:e} rad/mm"
        )));
    }
    Ok(theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningPoint {
    pub signal_nm: f64,
    pub idler_nm: f64,
    pub mismatch_per_mm: f64,
}

/// Mismatch across a range of signal wavelengths at a fixed crystal angle
/// and pump wavelength, sorted by signal wavelength.
pub fn tuning_curve(
    crystal: &CrystalSpec,
    theta_deg: f64,
    pump_nm: f64,
    signal_range: (f64, f64),
    n_points: usize,
) -> Result<Vec<TuningPoint>> {
    if n_points < 2 {
        return Err(Error::Domain("tuning curve needs at least 2 points".into()));
    }
    let (a, b) = signal_range;
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    (0..n_points)
        .map(|i| {
            let signal_nm = lo + (hi - lo) * i as f64 / (n_points - 1) as f64;
            let idler_nm = idler_wavelength(pump_nm, signal_nm)?;
            let pump_k = wavenumber_per_mm(
                crystal.index_extraordinary_at_angle(theta_deg, pump_nm)?,
                pump_nm,
            );
            let k_s = wavenumber_per_mm(crystal.index_ordinary(signal_nm)?, signal_nm);
            let k_i = wavenumber_per_mm(crystal.index_ordinary(idler_nm)?, idler_nm);
            Ok(TuningPoint {
                signal_nm,
                idler_nm,
                mismatch_per_mm: pump_k - k_s - k_i,
            })
        })
        .collect()
}

/// Signal and idler wavelength samples for a joint spectrum. Axes may be
/// given in either order; they are sorted ascending on evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralGrid {
    pub signal_nm: Vec<f64>,
    pub idler_nm: Vec<f64>,
}

impl SpectralGrid {
    pub fn uniform(signal: (f64, f64, usize), idler: (f64, f64, usize)) -> Self {
        let axis = |(lo, hi, n): (f64, f64, usize)| -> Vec<f64> {
            if n < 2 {
                return vec![lo];
            }
            (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect()
        };
        Self {
            signal_nm: axis(signal),
            idler_nm: axis(idler),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpectrum {
    pub signal_axis: Vec<f64>,
    pub idler_axis: Vec<f64>,
    /// Row-major: `intensity[i * idler_axis.len() + j]` at
    /// (`signal_axis[i]`, `idler_axis[j]`). Maximum is 1.
    pub intensity: Vec<f64>,
    pub pump_center: f64,
    pub pump_fwhm: f64,
}

impl JointSpectrum {
    pub fn at(&self, signal_idx: usize, idler_idx: usize) -> f64 {
        self.intensity[signal_idx * self.idler_axis.len() + idler_idx]
    }

    /// Σ over idler for each signal sample.
    pub fn signal_marginal(&self) -> Vec<f64> {
        self.intensity
            .chunks(self.idler_axis.len())
            .map(|row| row.iter().sum())
            .collect()
    }

    /// Σ over signal for each idler sample.
    pub fn idler_marginal(&self) -> Vec<f64> {
        self.weighted_idler_marginal(|_| 1.0)
    }

    fn weighted_idler_marginal(&self, weight: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.idler_axis.len()];
        for (row, &ls) in self
            .intensity
            .chunks(self.idler_axis.len())
            .zip(&self.signal_axis)
        {
            let w = weight(ls);
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(row) {
                *o += w * v;
            }
        }
        out
    }

    /// Grid indices of the brightest cell.
    pub fn peak(&self) -> (usize, usize) {
        let (k, _) = self
            .intensity
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty spectrum");
        let ni = self.idler_axis.len();
        (k / ni, k % ni)
    }

    /// FWHM of the signal marginal (nm).
    pub fn signal_fwhm(&self) -> Option<f64> {
        fwhm(&self.signal_axis, &self.signal_marginal())
    }

    /// FWHM of the unfiltered idler marginal (nm).
    pub fn idler_fwhm(&self) -> Option<f64> {
        fwhm(&self.idler_axis, &self.idler_marginal())
    }

    /// Writes `signal_nm,idler_nm,intensity` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "signal_nm,idler_nm,intensity")?;
        for (i, ls) in self.signal_axis.iter().enumerate() {
            for (j, li) in self.idler_axis.iter().enumerate() {
                writeln!(out, "{ls},{li},{}", self.at(i, j))?;
            }
        }
        Ok(())
    }
}

fn sorted(axis: &[f64]) -> Vec<f64> {
    let mut v = axis.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Half-way points between samples; the outer edges extend by half a step.
fn cell_edges(axis: &[f64]) -> Vec<f64> {
    let n = axis.len();
    if n == 1 {
        return vec![axis[0], axis[0]];
    }
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(axis[0] - 0.5 * (axis[1] - axis[0]));
    for w in axis.windows(2) {
        edges.push(0.5 * (w[0] + w[1]));
    }
    edges.push(axis[n - 1] + 0.5 * (axis[n - 1] - axis[n - 2]));
    edges
}

/// Mean of the Gaussian pump envelope (in wavenumber) over `[a, b]`.
fn pump_envelope_cell_mean(a: f64, b: f64, center: f64, fwhm: f64) -> f64 {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    if fwhm == 0.0 {
        return if center >= a && center <= b { 1.0 } else { 0.0 };
    }
    // exp(-4 ln2 x²/w²) = exp(-(x/s)²) with s = w / (2 sqrt(ln2))
    let s = fwhm / (2.0 * std::f64::consts::LN_2.sqrt());
    if b - a < 1e-6 * s {
        let x = (0.5 * (a + b) - center) / s;
        return (-x * x).exp();
    }
    let erf = statrs::function::erf::erf;
    0.5 * PI.sqrt() * s * (erf((b - center) / s) - erf((a - center) / s)) / (b - a)
}

/// Joint spectral intensity |pump envelope(ν_s + ν_i)|² · sinc²(Δk·L/2)
/// with a Gaussian pump spectrum of intensity FWHM `pump_fwhm_nm`.
///
/// The pump envelope is averaged over each idler cell, so a pump narrower
/// than the grid (down to zero bandwidth) still lands on the
/// energy-conservation ridge.
pub fn joint_spectral_intensity(
    crystal: &CrystalSpec,
    theta_deg: f64,
    pump_center_nm: f64,
    pump_fwhm_nm: f64,
    grid: &SpectralGrid,
) -> Result<JointSpectrum> {
    crystal.validate()?;
    if !(pump_center_nm > 0.0 && pump_fwhm_nm >= 0.0) {
        return Err(Error::Domain(
            "pump center must be > 0 and FWHM >= 0".into(),
        ));
    }
    let signal_axis = sorted(&grid.signal_nm);
    let idler_axis = sorted(&grid.idler_nm);
    if signal_axis.len() < 3 || idler_axis.len() < 3 {
        return Err(Error::Resolution("need at least 3 samples per axis".into()));
    }
    let idler_edges = cell_edges(&idler_axis);
    let pump_sigma0 = 1.0 / pump_center_nm;
    let pump_dsigma = pump_fwhm_nm / (pump_center_nm * pump_center_nm);

    let n_o_signal: Vec<f64> = signal_axis
        .iter()
        .map(|&l| crystal.index_ordinary(l))
        .collect::<Result<_>>()?;
    let n_o_idler: Vec<f64> = idler_axis
        .iter()
        .map(|&l| crystal.index_ordinary(l))
        .collect::<Result<_>>()?;

    let ni = idler_axis.len();
    let mut intensity = vec![0.0; signal_axis.len() * ni];
    for (i, &ls) in signal_axis.iter().enumerate() {
        let k_s = wavenumber_per_mm(n_o_signal[i], ls);
        for (j, &li) in idler_axis.iter().enumerate() {
            // wavenumber span of the pump across this idler cell
            let a = 1.0 / ls + 1.0 / idler_edges[j + 1];
            let b = 1.0 / ls + 1.0 / idler_edges[j];
            let env = pump_envelope_cell_mean(a, b, pump_sigma0, pump_dsigma);
            if env == 0.0 {
                continue;
            }
            let lp = 1.0 / (1.0 / ls + 1.0 / li);
            let k_p = wavenumber_per_mm(crystal.index_extraordinary_at_angle(theta_deg, lp)?, lp);
            let k_i = wavenumber_per_mm(n_o_idler[j], li);
            intensity[i * ni + j] = env * sinc2(0.5 * (k_p - k_s - k_i) * crystal.length_mm);
        }
    }
    let max = intensity.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::Resolution(
            "grid misses the phase-matched region entirely".into(),
        ));
    }
    for v in &mut intensity {
        *v /= max;
    }
    let spectrum = JointSpectrum {
        signal_axis,
        idler_axis,
        intensity,
        pump_center: pump_center_nm,
        pump_fwhm: pump_fwhm_nm,
    };
    check_resolution(&spectrum)?;
    Ok(spectrum)
}

fn check_resolution(spectrum: &JointSpectrum) -> Result<()> {
    for (name, axis, marginal) in [
        ("signal", &spectrum.signal_axis, spectrum.signal_marginal()),
        ("idler", &spectrum.idler_axis, spectrum.idler_marginal()),
    ] {
        let step = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
        let width = fwhm(axis, &marginal).unwrap_or(0.0);
        if width < 3.0 * step {
            return Err(Error::Resolution(format!(
                "{name} marginal FWHM {width:.4} nm spans fewer than 3 cells of {step:.4} nm"
            )));
        }
    }
    Ok(())
}

/// Gaussian bandpass in front of the herald detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandpassFilter {
    pub center_nm: f64,
    pub fwhm_nm: f64,
}

impl BandpassFilter {
    pub fn transmission(&self, wavelength_nm: f64) -> f64 {
        let x = (wavelength_nm - self.center_nm) / self.fwhm_nm;
        (-4.0 * std::f64::consts::LN_2 * x * x).exp()
    }
}

/// FWHM of the idler marginal after filtering the signal arm, i.e. the
/// spread of the heralded photon.
pub fn heralded_marginal_bandwidth(
    spectrum: &JointSpectrum,
    signal_filter: &BandpassFilter,
) -> Result<f64> {
    if !(signal_filter.fwhm_nm > 0.0) {
        return Err(Error::Domain("filter FWHM must be > 0".into()));
    }
    let unfiltered: f64 = spectrum.intensity.iter().sum();
    let marginal = spectrum.weighted_idler_marginal(|l| signal_filter.transmission(l));
    let kept: f64 = marginal.iter().sum();
    if !(kept > 1e-12 * unfiltered) {
        return Err(Error::EmptyMarginal);
    }
    fwhm(&spectrum.idler_axis, &marginal).ok_or(Error::EmptyMarginal)
}
