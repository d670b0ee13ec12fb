//! X-ray source model: tube spectrum, bowtie filtration over fan angle, anode
//! heel effect over cone angle, and the discrete helical trajectory.

mod pdf;
mod sampler;

pub use pdf::TabulatedPdf;
pub use sampler::{EmissionSampler, Photon};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transport::xs::aluminum_mu_per_cm;

/// Energy spectrum on a uniform keV grid, fluence per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub e_min_kev: f64,
    pub bin_kev: f64,
    pub fluence: Vec<f64>,
}

impl Spectrum {
    pub fn energy_at(&self, bin: usize) -> f64 {
        self.e_min_kev + bin as f64 * self.bin_kev
    }

    pub fn e_max_kev(&self) -> f64 {
        self.energy_at(self.fluence.len().saturating_sub(1))
    }

    pub fn total(&self) -> f64 {
        self.fluence.iter().sum()
    }

    /// Scale so the fluence sums to 1.
    pub fn normalized(&self) -> Spectrum {
        let t = self.total();
        Spectrum {
            e_min_kev: self.e_min_kev,
            bin_kev: self.bin_kev,
            fluence: self.fluence.iter().map(|f| f / t).collect(),
        }
    }

    /// Fluence-weighted mean energy in keV.
    pub fn mean_energy_kev(&self) -> f64 {
        let t = self.total();
        self.fluence
            .iter()
            .enumerate()
            .map(|(i, f)| self.energy_at(i) * f)
            .sum::<f64>()
            / t
    }

    pub fn validate(&self) -> Result<()> {
        if self.fluence.len() < 2 || self.bin_kev <= 0.0 {
            return Err(Error::Config("spectrum needs >= 2 bins".into()));
        }
        if self.fluence.iter().any(|&f| !(f >= 0.0)) {
            return Err(Error::Config("spectrum fluence must be non-negative".into()));
        }
        if !(self.total() > 0.0) {
            return Err(Error::Config("spectrum has zero total fluence".into()));
        }
        Ok(())
    }

    /// CSV with header `energy_keV,fluence`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("energy_keV,fluence\n");
        for (i, f) in self.fluence.iter().enumerate() {
            s.push_str(&format!("{},{}\n", self.energy_at(i), f));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Spectrum> {
        let rows = parse_two_column_csv(text, "energy_keV", "fluence")?;
        if rows.len() < 2 {
            return Err(Error::Config("spectrum csv needs >= 2 rows".into()));
        }
        let bin = rows[1].0 - rows[0].0;
        if !(bin > 0.0) {
            return Err(Error::Config("spectrum energies must increase".into()));
        }
        for w in rows.windows(2) {
            if ((w[1].0 - w[0].0) - bin).abs() > 1e-9 * bin {
                return Err(Error::Config("spectrum grid must be uniform".into()));
            }
        }
        let s = Spectrum {
            e_min_kev: rows[0].0,
            bin_kev: bin,
            fluence: rows.iter().map(|r| r.1).collect(),
        };
        s.validate()?;
        Ok(s)
    }
}

/// Inherent tube filtration in mm of aluminum.
pub const INHERENT_FILTRATION_MM_AL: f64 = 2.5;

/// Bremsstrahlung spectrum of Kramers form, hardened by the inherent
/// filtration, on a 1 keV grid from 10 keV to the tube potential. Normalized.
pub fn generate_spectrum(kvp: u32) -> Result<Spectrum> {
    if !(60..=160).contains(&kvp) {
        return Err(Error::Config(format!(
            "tube potential {kvp} kVp outside supported 60-160 kVp"
        )));
    }
    let e_min = 10.0;
    let n = (kvp as usize) - 9; // bins at 10, 11, ..., kvp
    let t_cm = INHERENT_FILTRATION_MM_AL / 10.0;
    let mut fluence = Vec::with_capacity(n);
    for i in 0..n {
        let e = e_min + i as f64;
        let kramers = (kvp as f64 - e).max(0.0);
        fluence.push(kramers * (-aluminum_mu_per_cm(e) * t_cm).exp());
    }
    let s = Spectrum {
        e_min_kev: e_min,
        bin_kev: 1.0,
        fluence,
    };
    s.validate()?;
    Ok(s.normalized())
}

/// Aluminum-equivalent bowtie thickness (mm) tabulated over fan angle (deg).
#[derive(Debug, Clone, PartialEq)]
pub struct BowtieProfile {
    pub fan_angle_deg: Vec<f64>,
    pub mm_al: Vec<f64>,
}

impl BowtieProfile {
    /// Smooth default bowl: zero on the central ray, `t_max_mm` at the edge
    /// of the fan aperture.
    pub fn default_for_aperture(polar_aperture_deg: f64, t_max_mm: f64) -> Self {
        let half = polar_aperture_deg / 2.0;
        let n = 169;
        let denom = 1.0 - half.to_radians().cos();
        let mut angles = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        for i in 0..n {
            let phi = -half + polar_aperture_deg * i as f64 / (n - 1) as f64;
            angles.push(phi);
            t.push(t_max_mm * (1.0 - phi.to_radians().cos()) / denom);
        }
        // enforce exact symmetry and an exact zero at the center
        let mid = n / 2;
        t[mid] = 0.0;
        for i in 0..mid {
            let avg = 0.5 * (t[i] + t[n - 1 - i]);
            t[i] = avg;
            t[n - 1 - i] = avg;
        }
        BowtieProfile {
            fan_angle_deg: angles,
            mm_al: t,
        }
    }

    /// No filtration anywhere (ablation and symmetry tests).
    pub fn flat(polar_aperture_deg: f64) -> Self {
        let half = polar_aperture_deg / 2.0;
        BowtieProfile {
            fan_angle_deg: vec![-half, 0.0, half],
            mm_al: vec![0.0, 0.0, 0.0],
        }
    }

    pub fn half_aperture_deg(&self) -> f64 {
        self.fan_angle_deg[self.fan_angle_deg.len() - 1]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.fan_angle_deg.len();
        if n < 2 || self.mm_al.len() != n {
            return Err(Error::Config("bowtie table needs >= 2 matched rows".into()));
        }
        for w in self.fan_angle_deg.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Config("bowtie angles must increase".into()));
            }
        }
        if self.mm_al.iter().any(|&t| !(t >= 0.0)) {
            return Err(Error::Config("bowtie thickness must be non-negative".into()));
        }
        let min = self.mm_al.iter().cloned().fold(f64::INFINITY, f64::min);
        let center = self.thickness_at(0.0)?;
        if center > min + 1e-9 {
            return Err(Error::Config("bowtie must be thinnest on the central ray".into()));
        }
        for i in 0..n {
            let phi = self.fan_angle_deg[i];
            let mirrored = self.thickness_at(-phi)?;
            if (mirrored - self.mm_al[i]).abs() > 1e-6 * (1.0 + self.mm_al[i]) {
                return Err(Error::Config("bowtie profile must be symmetric".into()));
            }
        }
        Ok(())
    }

    /// Linearly interpolated thickness; errors outside the tabulated aperture.
    pub fn thickness_at(&self, phi_deg: f64) -> Result<f64> {
        let n = self.fan_angle_deg.len();
        let (lo, hi) = (self.fan_angle_deg[0], self.fan_angle_deg[n - 1]);
        if phi_deg < lo - 1e-12 || phi_deg > hi + 1e-12 {
            return Err(Error::Config(format!(
                "fan angle {phi_deg} deg outside aperture [{lo}, {hi}]"
            )));
        }
        let phi = phi_deg.clamp(lo, hi);
        let mut i = 0;
        while i + 2 < n && self.fan_angle_deg[i + 1] <= phi {
            i += 1;
        }
        let (x0, x1) = (self.fan_angle_deg[i], self.fan_angle_deg[i + 1]);
        let t = (phi - x0) / (x1 - x0);
        Ok(self.mm_al[i] + t * (self.mm_al[i + 1] - self.mm_al[i]))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("fan_angle_deg,mmAl\n");
        for (a, t) in self.fan_angle_deg.iter().zip(&self.mm_al) {
            s.push_str(&format!("{a},{t}\n"));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = parse_two_column_csv(text, "fan_angle_deg", "mmAl")?;
        let b = BowtieProfile {
            fan_angle_deg: rows.iter().map(|r| r.0).collect(),
            mm_al: rows.iter().map(|r| r.1).collect(),
        };
        b.validate()?;
        Ok(b)
    }
}

/// Filter a spectrum through `t(phi)` mm of aluminum. Returns the
/// re-normalized hardened spectrum and the relative intensity (filtered total
/// over unfiltered total).
pub fn apply_bowtie(s: &Spectrum, phi_deg: f64, b: &BowtieProfile) -> Result<(Spectrum, f64)> {
    s.validate()?;
    let t_cm = b.thickness_at(phi_deg)? / 10.0;
    let mut filtered = s.clone();
    for (i, f) in filtered.fluence.iter_mut().enumerate() {
        let e = s.energy_at(i);
        *f *= (-aluminum_mu_per_cm(e) * t_cm).exp();
    }
    let intensity = filtered.total() / s.total();
    Ok((filtered.normalized(), intensity))
}

/// Relative intensity over cone angle (deg) modeling the anode heel effect.
#[derive(Debug, Clone, PartialEq)]
pub struct HeelModel {
    pub cone_angle_deg: Vec<f64>,
    pub intensity: Vec<f64>,
}

impl HeelModel {
    /// Default ramp: intensity falls from the cathode side (negative cone
    /// angles) to the anode side across the aperture.
    pub fn default_for_aperture(azimuthal_aperture_deg: f64) -> Self {
        let half = azimuthal_aperture_deg / 2.0;
        HeelModel {
            cone_angle_deg: vec![-half, half],
            intensity: vec![1.15, 0.85],
        }
    }

    pub fn flat(azimuthal_aperture_deg: f64) -> Self {
        let half = azimuthal_aperture_deg / 2.0;
        HeelModel {
            cone_angle_deg: vec![-half, half],
            intensity: vec![1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        TabulatedPdf::new(self.cone_angle_deg.clone(), self.intensity.clone()).map(|_| ())
    }

    /// Normalized density over the aperture.
    pub fn pdf(&self) -> Result<TabulatedPdf> {
        TabulatedPdf::new(self.cone_angle_deg.clone(), self.intensity.clone())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("cone_angle_deg,intensity\n");
        for (a, v) in self.cone_angle_deg.iter().zip(&self.intensity) {
            s.push_str(&format!("{a},{v}\n"));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = parse_two_column_csv(text, "cone_angle_deg", "intensity")?;
        let h = HeelModel {
            cone_angle_deg: rows.iter().map(|r| r.0).collect(),
            intensity: rows.iter().map(|r| r.1).collect(),
        };
        h.validate()?;
        Ok(h)
    }
}

/// Probability density of the heel model at a cone angle, normalized over the
/// aperture. Errors outside the aperture.
pub fn heel_pdf(theta_deg: f64, h: &HeelModel) -> Result<f64> {
    let pdf = h.pdf()?;
    let (lo, hi) = pdf.domain();
    if theta_deg < lo - 1e-12 || theta_deg > hi + 1e-12 {
        return Err(Error::Config(format!(
            "cone angle {theta_deg} deg outside aperture [{lo}, {hi}]"
        )));
    }
    Ok(pdf.density(theta_deg.clamp(lo, hi)))
}

/// Helical acquisition parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScannerGeometry {
    pub tube_potential_kvp: u32,
    pub z_coverage_mm: f64,
    pub pitch_factor: f64,
    pub source_to_rotation_axis_mm: f64,
    pub source_to_detector_mm: f64,
    pub vertical_translation_mm: f64,
    pub polar_aperture_deg: f64,
    pub azimuthal_aperture_deg: f64,
    pub angle_between_projections_deg: f64,
    pub views_per_rotation: u32,
    pub tube_current_mas: f64,
    pub start_angle_deg: f64,
}

impl Default for ScannerGeometry {
    /// Wide-coverage single-source helical system, 120 kVp, 24 views per
    /// rotation at 15 degrees, pitch 0.99.
    fn default() -> Self {
        ScannerGeometry {
            tube_potential_kvp: 120,
            z_coverage_mm: 80.0,
            pitch_factor: 0.99,
            source_to_rotation_axis_mm: 625.61,
            source_to_detector_mm: 1097.61,
            vertical_translation_mm: 3.3,
            polar_aperture_deg: 42.0,
            azimuthal_aperture_deg: 7.32,
            angle_between_projections_deg: 15.0,
            views_per_rotation: 24,
            tube_current_mas: 100.0,
            start_angle_deg: 0.0,
        }
    }
}

impl ScannerGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.source_to_rotation_axis_mm <= 0.0
            || self.source_to_detector_mm <= 0.0
            || self.z_coverage_mm <= 0.0
        {
            return Err(Error::Config("scanner distances must be positive".into()));
        }
        if self.polar_aperture_deg <= 0.0 || self.azimuthal_aperture_deg <= 0.0 {
            return Err(Error::Config("apertures must be positive".into()));
        }
        let full_turn = self.views_per_rotation as f64 * self.angle_between_projections_deg;
        if (full_turn - 360.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "views per rotation x angle between projections = {full_turn}, expected 360"
            )));
        }
        if !(60..=160).contains(&self.tube_potential_kvp) {
            return Err(Error::Config("tube potential outside 60-160 kVp".into()));
        }
        if self.tube_current_mas <= 0.0 || self.pitch_factor <= 0.0 {
            return Err(Error::Config("tube current and pitch must be positive".into()));
        }
        Ok(())
    }

    /// Table travel per rotation divided by beam z-coverage.
    pub fn pitch_from_motion(&self) -> f64 {
        self.views_per_rotation as f64 * self.vertical_translation_mm / self.z_coverage_mm
    }

    /// Parse from TOML text; accepts either top-level keys or a `[geometry]`
    /// section.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Wrapper {
            geometry: ScannerGeometry,
        }
        let g = if let Ok(w) = toml::from_str::<Wrapper>(text) {
            w.geometry
        } else {
            toml::from_str::<ScannerGeometry>(text)
                .map_err(|e| Error::Config(format!("geometry config: {e}")))?
        };
        g.validate()?;
        Ok(g)
    }
}

/// One discrete source position on the helix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourcePose {
    pub position_mm: [f64; 3],
    pub gantry_deg: f64,
}

/// Discrete helical trajectory covering `z_extent_mm` starting at
/// `z_start_mm`, rotating about the vertical axis through `iso_xy_mm`.
pub fn helical_poses(
    g: &ScannerGeometry,
    iso_xy_mm: [f64; 2],
    z_start_mm: f64,
    z_extent_mm: f64,
) -> Result<Vec<SourcePose>> {
    g.validate()?;
    if z_extent_mm <= 0.0 {
        return Err(Error::Config("scan z-extent must be positive".into()));
    }
    if g.vertical_translation_mm <= 0.0 {
        return Err(Error::Config(
            "vertical translation is zero with nonzero coverage".into(),
        ));
    }
    let count = (z_extent_mm / g.vertical_translation_mm).ceil().max(1.0) as usize;
    let r = g.source_to_rotation_axis_mm;
    let mut poses = Vec::with_capacity(count);
    for k in 0..count {
        let angle = (g.start_angle_deg + k as f64 * g.angle_between_projections_deg).rem_euclid(360.0);
        let a = angle.to_radians();
        poses.push(SourcePose {
            position_mm: [
                iso_xy_mm[0] + r * a.cos(),
                iso_xy_mm[1] + r * a.sin(),
                z_start_mm + k as f64 * g.vertical_translation_mm,
            ],
            gantry_deg: angle,
        });
    }
    Ok(poses)
}

/// The three source tables consumed by a simulation run.
#[derive(Debug, Clone)]
pub struct SourceModel {
    pub spectrum: Spectrum,
    pub bowtie: BowtieProfile,
    pub heel: HeelModel,
}

impl SourceModel {
    /// Default model for a geometry: generated spectrum at the tube
    /// potential, default bowtie bowl, default heel ramp.
    pub fn default_for(g: &ScannerGeometry) -> Result<Self> {
        Ok(SourceModel {
            spectrum: generate_spectrum(g.tube_potential_kvp)?,
            bowtie: BowtieProfile::default_for_aperture(g.polar_aperture_deg, 25.0),
            heel: HeelModel::default_for_aperture(g.azimuthal_aperture_deg),
        })
    }

    /// Flat bowtie and heel, for symmetry tests.
    pub fn flat_for(g: &ScannerGeometry) -> Result<Self> {
        Ok(SourceModel {
            spectrum: generate_spectrum(g.tube_potential_kvp)?,
            bowtie: BowtieProfile::flat(g.polar_aperture_deg),
            heel: HeelModel::flat(g.azimuthal_aperture_deg),
        })
    }
}

fn parse_two_column_csv(text: &str, col_a: &str, col_b: &str) -> Result<Vec<(f64, f64)>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if lineno == 0 && line.starts_with(col_a.split(',').next().unwrap_or(col_a)) {
            // header row
            let expected = format!("{col_a},{col_b}");
            if line != expected {
                return Err(Error::Config(format!(
                    "csv header '{line}' does not match '{expected}'"
                )));
            }
            continue;
        }
        let mut parts = line.split(',');
        let a = parts
            .next()
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::Config(format!("bad csv line {}", lineno + 1)))?;
        let b = parts
            .next()
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::Config(format!("bad csv line {}", lineno + 1)))?;
        rows.push((a, b));
    }
    if rows.is_empty() {
        return Err(Error::Config("csv has no data rows".into()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrum_has_no_fluence_above_kvp() {
        let s = generate_spectrum(120).unwrap();
        assert!((s.e_max_kev() - 120.0).abs() < 1e-12);
        // endpoint bin itself carries zero Kramers weight
        assert_eq!(*s.fluence.last().unwrap(), 0.0);
    }

    #[test]
    fn spectrum_mean_energy_in_expected_window() {
        // Independent oracle: brute-force weighted sum over bins.
        let s = generate_spectrum(120).unwrap();
        let total: f64 = s.fluence.iter().sum();
        let mean: f64 = s
            .fluence
            .iter()
            .enumerate()
            .map(|(i, f)| (10.0 + i as f64) * f)
            .sum::<f64>()
            / total;
        assert!((50.0..=75.0).contains(&mean), "mean energy {mean}");
        assert!((s.mean_energy_kev() - mean).abs() < 1e-9);
    }

    #[test]
    fn spectrum_normalizes_to_one() {
        for kvp in [60, 100, 120, 160] {
            let s = generate_spectrum(kvp).unwrap();
            assert!((s.total() - 1.0).abs() < 1e-12, "kvp {kvp}");
        }
    }

    #[test]
    fn spectrum_rejects_out_of_range_kvp() {
        assert!(generate_spectrum(40).is_err());
        assert!(generate_spectrum(200).is_err());
    }

    #[test]
    fn spectrum_csv_round_trip() {
        let s = generate_spectrum(80).unwrap();
        let r = Spectrum::from_csv(&s.to_csv()).unwrap();
        assert_eq!(s.fluence.len(), r.fluence.len());
        for (a, b) in s.fluence.iter().zip(&r.fluence) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bowtie_center_is_transparent() {
        let s = generate_spectrum(120).unwrap();
        let b = BowtieProfile::default_for_aperture(42.0, 25.0);
        b.validate().unwrap();
        assert_eq!(b.thickness_at(0.0).unwrap(), 0.0);
        let (filtered, intensity) = apply_bowtie(&s, 0.0, &b).unwrap();
        assert!((intensity - 1.0).abs() < 1e-12);
        for (a, b) in filtered.fluence.iter().zip(&s.fluence) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bowtie_intensity_decreases_with_thickness() {
        // Independent oracle: bin-wise exponential attenuation sums.
        let s = generate_spectrum(120).unwrap();
        let manual_intensity = |t_mm: f64| -> f64 {
            s.fluence
                .iter()
                .enumerate()
                .map(|(i, f)| f * (-aluminum_mu_per_cm(s.energy_at(i)) * t_mm / 10.0).exp())
                .sum::<f64>()
                / s.total()
        };
        // table with 5 mm and 10 mm knots on the two sides of a zero center
        let b = BowtieProfile {
            fan_angle_deg: vec![-20.0, -10.0, 0.0, 10.0, 20.0],
            mm_al: vec![10.0, 5.0, 0.0, 5.0, 10.0],
        };
        b.validate().unwrap();
        let (_, i5) = apply_bowtie(&s, 10.0, &b).unwrap();
        let (_, i10) = apply_bowtie(&s, 20.0, &b).unwrap();
        assert!(i10 < i5);
        assert!((i5 - manual_intensity(5.0)).abs() < 1e-12);
        assert!((i10 - manual_intensity(10.0)).abs() < 1e-12);
    }

    #[test]
    fn bowtie_hardens_the_beam() {
        let s = generate_spectrum(120).unwrap();
        let b = BowtieProfile::default_for_aperture(42.0, 25.0);
        let mut prev = s.mean_energy_kev();
        for phi in [3.0, 9.0, 15.0, 21.0] {
            let (f, _) = apply_bowtie(&s, phi, &b).unwrap();
            let mean = f.mean_energy_kev();
            assert!(mean >= prev - 1e-9, "mean energy fell at phi={phi}");
            prev = mean;
        }
    }

    #[test]
    fn symmetric_profile_gives_symmetric_intensity() {
        let s = generate_spectrum(120).unwrap();
        let b = BowtieProfile::default_for_aperture(42.0, 25.0);
        for phi in [3.0, 7.5, 12.0, 18.0, 21.0] {
            let (_, pos) = apply_bowtie(&s, phi, &b).unwrap();
            let (_, neg) = apply_bowtie(&s, -phi, &b).unwrap();
            assert!((pos - neg).abs() <= 1e-12 * pos, "phi {phi}: {pos} vs {neg}");
        }
    }

    #[test]
    fn bowtie_rejects_angles_outside_aperture() {
        let s = generate_spectrum(120).unwrap();
        let b = BowtieProfile::default_for_aperture(42.0, 25.0);
        assert!(apply_bowtie(&s, 30.0, &b).is_err());
    }

    #[test]
    fn heel_flat_is_uniform_density() {
        let h = HeelModel::flat(7.32);
        let d = heel_pdf(0.0, &h).unwrap();
        assert!((d - 1.0 / 7.32).abs() < 1e-12);
        assert!(heel_pdf(5.0, &h).is_err());
    }

    #[test]
    fn heel_ramp_favors_cathode_side() {
        let h = HeelModel::default_for_aperture(7.32);
        let cathode = heel_pdf(-3.0, &h).unwrap();
        let anode = heel_pdf(3.0, &h).unwrap();
        assert!(cathode > anode);
    }

    #[test]
    fn heel_pdf_integrates_to_one() {
        // Knot-aligned composite Simpson quadrature.
        let h = HeelModel::default_for_aperture(7.32);
        let pdf = h.pdf().unwrap();
        let (xs, _) = pdf.knots();
        let mut integral = 0.0;
        for w in xs.to_vec().windows(2) {
            let (a, b) = (w[0], w[1]);
            let n = 64;
            let h_step = (b - a) / n as f64;
            let mut acc = pdf.density(a) + pdf.density(b);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * pdf.density(a + i as f64 * h_step);
            }
            integral += acc * h_step / 3.0;
        }
        assert!((integral - 1.0).abs() < 1e-9, "heel integral {integral}");
    }

    #[test]
    fn helical_poses_follow_the_table() {
        let g = ScannerGeometry::default();
        let poses = helical_poses(&g, [0.0, 0.0], 0.0, 80.0).unwrap();
        assert_eq!(poses.len(), 25); // ceil(80 / 3.3)
        for (k, p) in poses.iter().enumerate() {
            let expect_angle = (15.0 * k as f64) % 360.0;
            assert!((p.gantry_deg - expect_angle).abs() < 1e-9);
            assert!((p.position_mm[2] - 3.3 * k as f64).abs() < 1e-9);
            let r = (p.position_mm[0].powi(2) + p.position_mm[1].powi(2)).sqrt();
            assert!((r - g.source_to_rotation_axis_mm).abs() < 1e-9);
        }
        // total z travel
        let travel = poses.last().unwrap().position_mm[2] - poses[0].position_mm[2];
        assert!((travel - (poses.len() - 1) as f64 * 3.3).abs() < 1e-9);
    }

    #[test]
    fn start_angle_shifts_angles_only() {
        let mut g = ScannerGeometry::default();
        let base = helical_poses(&g, [0.0, 0.0], 0.0, 80.0).unwrap();
        g.start_angle_deg = 90.0;
        let shifted = helical_poses(&g, [0.0, 0.0], 0.0, 80.0).unwrap();
        assert_eq!(base.len(), shifted.len());
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a.position_mm[2] - b.position_mm[2]).abs() < 1e-12);
            let da = (b.gantry_deg - a.gantry_deg).rem_euclid(360.0);
            assert!((da - 90.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pitch_consistency_with_table_values() {
        let g = ScannerGeometry::default();
        // 24 views x 3.3 mm = 79.2 mm per rotation over 80 mm coverage
        let pitch = g.pitch_from_motion();
        assert!((pitch - 0.99).abs() < 1e-12);
        assert!((pitch - g.pitch_factor).abs() < 0.02);
    }

    #[test]
    fn zero_translation_is_an_error() {
        let g = ScannerGeometry {
            vertical_translation_mm: 0.0,
            ..ScannerGeometry::default()
        };
        assert!(helical_poses(&g, [0.0, 0.0], 0.0, 80.0).is_err());
    }

    #[test]
    fn geometry_validation_catches_bad_view_count() {
        let g = ScannerGeometry {
            views_per_rotation: 23,
            ..ScannerGeometry::default()
        };
        assert!(g.validate().is_err());
    }

    #[test]
    fn geometry_toml_round_trip() {
        let g = ScannerGeometry::default();
        let text = toml::to_string(&g).unwrap();
        let parsed = ScannerGeometry::from_toml_str(&text).unwrap();
        assert_eq!(g, parsed);
        let sectioned = format!("[geometry]\n{text}");
        let parsed2 = ScannerGeometry::from_toml_str(&sectioned).unwrap();
        assert_eq!(g, parsed2);
    }
}
