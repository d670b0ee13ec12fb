//! Photon emission sampling: fan angle from the bowtie intensity
//! distribution, cone angle from the heel model, energy from the fan-angle
//! specific hardened spectrum. All tables are precomputed once per geometry.

use rand::Rng;

use crate::error::Result;
use crate::source::pdf::TabulatedPdf;
use crate::source::{apply_bowtie, BowtieProfile, HeelModel, ScannerGeometry, SourcePose, Spectrum};

/// A photon ready for transport.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Photon {
    pub origin_mm: [f64; 3],
    pub direction: [f64; 3],
    pub energy_kev: f64,
    pub weight: f64,
}

/// Precomputed emission tables for one geometry and source model.
#[derive(Debug, Clone)]
pub struct EmissionSampler {
    fan_pdf: TabulatedPdf,
    heel_pdf: TabulatedPdf,
    /// Fan-angle knots at which hardened spectra are precomputed.
    fan_knots: Vec<f64>,
    /// Per-knot hardened spectrum (normalized) and its sampling CDF.
    spectra: Vec<Spectrum>,
    cdfs: Vec<Vec<f64>>,
}

impl EmissionSampler {
    pub fn new(
        g: &ScannerGeometry,
        spectrum: &Spectrum,
        bowtie: &BowtieProfile,
        heel: &HeelModel,
    ) -> Result<Self> {
        g.validate()?;
        spectrum.validate()?;
        bowtie.validate()?;
        heel.validate()?;

        let half_fan = g.polar_aperture_deg / 2.0;
        // odd knot count so the central ray is an exact knot
        let mut n_phi = ((g.polar_aperture_deg / 0.5).round() as usize + 1).max(3);
        if n_phi % 2 == 0 {
            n_phi += 1;
        }
        let mut fan_knots = Vec::with_capacity(n_phi);
        let mut intensity = Vec::with_capacity(n_phi);
        let mut spectra = Vec::with_capacity(n_phi);
        let mut cdfs = Vec::with_capacity(n_phi);
        for i in 0..n_phi {
            let phi = -half_fan + g.polar_aperture_deg * i as f64 / (n_phi - 1) as f64;
            let (filtered, rel) = apply_bowtie(spectrum, phi, bowtie)?;
            let mut cdf = Vec::with_capacity(filtered.fluence.len());
            let mut acc = 0.0;
            for &f in &filtered.fluence {
                acc += f;
                cdf.push(acc);
            }
            let n = cdf.len();
            cdf[n - 1] = 1.0;
            fan_knots.push(phi);
            intensity.push(rel);
            spectra.push(filtered);
            cdfs.push(cdf);
        }
        let fan_pdf = TabulatedPdf::new(fan_knots.clone(), intensity)?;

        let heel_pdf = heel.pdf()?;
        let (lo, hi) = heel_pdf.domain();
        let half_cone = g.azimuthal_aperture_deg / 2.0;
        if lo < -half_cone - 1e-9 || hi > half_cone + 1e-9 {
            return Err(crate::error::Error::Config(format!(
                "heel table [{lo}, {hi}] exceeds azimuthal aperture +-{half_cone}"
            )));
        }

        Ok(EmissionSampler {
            fan_pdf,
            heel_pdf,
            fan_knots,
            spectra,
            cdfs,
        })
    }

    pub fn fan_pdf(&self) -> &TabulatedPdf {
        &self.fan_pdf
    }

    pub fn heel_pdf(&self) -> &TabulatedPdf {
        &self.heel_pdf
    }

    /// The hardened spectrum used for energies drawn near `phi_deg`.
    pub fn spectrum_at(&self, phi_deg: f64) -> &Spectrum {
        &self.spectra[self.nearest_knot(phi_deg)]
    }

    fn nearest_knot(&self, phi_deg: f64) -> usize {
        let n = self.fan_knots.len();
        let lo = self.fan_knots[0];
        let step = (self.fan_knots[n - 1] - lo) / (n - 1) as f64;
        (((phi_deg - lo) / step).round().clamp(0.0, (n - 1) as f64)) as usize
    }

    /// Draw an energy from the hardened spectrum nearest to `phi_deg`.
    pub fn sample_energy_at(&self, phi_deg: f64, rng: &mut impl Rng) -> f64 {
        let k = self.nearest_knot(phi_deg);
        let cdf = &self.cdfs[k];
        let u: f64 = rng.gen();
        let bin = match cdf.binary_search_by(|c| c.partial_cmp(&u).expect("finite cdf")) {
            Ok(i) => (i + 1).min(cdf.len() - 1),
            Err(i) => i.min(cdf.len() - 1),
        };
        self.spectra[k].energy_at(bin)
    }

    /// Sample one emission from a source pose: draws fan angle, cone angle,
    /// and energy, and builds the direction through the aperture toward the
    /// rotation axis. Statistical weight is 1.
    pub fn sample_emission(&self, pose: &SourcePose, rng: &mut impl Rng) -> Photon {
        let phi = self.fan_pdf.sample(rng).to_radians();
        let theta = self.heel_pdf.sample(rng).to_radians();
        let energy = self.sample_energy_at(phi.to_degrees(), rng);

        let a = pose.gantry_deg.to_radians();
        // central axis points from the source toward the rotation axis
        let axis = [-a.cos(), -a.sin(), 0.0];
        let fan = [-a.sin(), a.cos(), 0.0];
        let (cp, sp) = (phi.cos(), phi.sin());
        let (ct, st) = (theta.cos(), theta.sin());
        let direction = [
            ct * (cp * axis[0] + sp * fan[0]),
            ct * (cp * axis[1] + sp * fan[1]),
            st,
        ];
        Photon {
            origin_mm: pose.position_mm,
            direction,
            energy_kev: energy,
            weight: 1.0,
        }
    }
}
