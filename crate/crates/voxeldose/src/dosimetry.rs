//! Dose aggregation: start-angle averaging, air masking, organ dose maps,
//! mass-weighted mean organ doses, water-equivalent diameter, and the
//! evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid3;
use crate::phantom::{OrganMaskSet, Phantom, BODY_INDEX, LABEL_NAMES, T_AIR};
use crate::transport::{DoseMap, DoseUnits};

/// Mean absorbed dose per label (six organs plus body), mGy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrganDoseVector {
    /// Values in [`LABEL_NAMES`] order.
    pub values: [f64; 7],
}

impl OrganDoseVector {
    pub fn body(&self) -> f64 {
        self.values[BODY_INDEX]
    }

    pub fn validate(&self) -> Result<()> {
        for (v, name) in self.values.iter().zip(LABEL_NAMES) {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::Numeric(format!("dose for {name} is {v}")));
            }
        }
        Ok(())
    }

    pub fn csv_header() -> String {
        format!("patient_id,{}", LABEL_NAMES.join(","))
    }

    pub fn csv_row(&self, patient_id: &str) -> String {
        let vals: Vec<String> = self.values.iter().map(|v| v.to_string()).collect();
        format!("{patient_id},{}", vals.join(","))
    }
}

/// Voxel-wise arithmetic mean of dose maps from different start angles.
/// Histories metadata is summed.
pub fn average_dose_maps(maps: &[DoseMap]) -> Result<DoseMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Config("average of zero dose maps".into()))?;
    for m in maps {
        if !m.same_grid(first) {
            return Err(Error::DimMismatch("dose maps have different grids".into()));
        }
        if m.units != first.units {
            return Err(Error::UnitMismatch("dose maps have different units".into()));
        }
    }
    let n = maps.len() as f64;
    let len = first.dose.len();
    let mut dose = vec![0.0f64; len];
    let mut sq = vec![0.0f64; len];
    for m in maps {
        for i in 0..len {
            dose[i] += m.dose[i];
            sq[i] += m.sq_tally[i];
        }
    }
    for v in dose.iter_mut() {
        *v /= n;
    }
    // Scale squared sums so the SEM of the averaged map reproduces the
    // combined-variance rule sem^2 = sum(sem_i^2) / n^2 under the standard
    // estimator with the summed history count.
    let total_hist: u64 = maps.iter().map(|m| m.histories).sum();
    let nh = total_hist as f64;
    for i in 0..len {
        let mut var_combined = 0.0;
        for m in maps {
            let sem = m.sem(i);
            var_combined += sem * sem;
        }
        var_combined /= n * n;
        sq[i] = (var_combined * nh + dose[i] * dose[i]) * nh;
    }
    Ok(DoseMap {
        dims: first.dims,
        spacing: first.spacing,
        units: first.units,
        histories: total_hist,
        dose,
        sq_tally: sq,
    })
}

/// Zero out dose in voxels at or below the air threshold.
pub fn apply_body_mask(d: &DoseMap, phantom: &Phantom, t_air: f64) -> Result<DoseMap> {
    if d.dims != phantom.dims {
        return Err(Error::DimMismatch(
            "dose map and phantom dims differ".into(),
        ));
    }
    let mut out = d.clone();
    for (i, (&rho, dv)) in phantom
        .density
        .as_slice()
        .iter()
        .zip(out.dose.iter_mut())
        .enumerate()
    {
        if rho <= t_air {
            *dv = 0.0;
            out.sq_tally[i] = 0.0;
        }
    }
    Ok(out)
}

/// Elementwise product of a dose map with a binary organ mask.
pub fn organ_dose_map(d: &DoseMap, mask: &Grid3<u8>) -> Result<DoseMap> {
    if d.dims != mask.dims() {
        return Err(Error::DimMismatch("dose map and mask dims differ".into()));
    }
    let mut out = d.clone();
    for (i, (&m, dv)) in mask.as_slice().iter().zip(out.dose.iter_mut()).enumerate() {
        if m == 0 {
            *dv = 0.0;
            out.sq_tally[i] = 0.0;
        }
    }
    Ok(out)
}

/// Mass-weighted mean dose over a mask:
/// sum(D * rho * dV) / sum(rho * dV) within the mask.
pub fn mean_organ_dose(d: &DoseMap, mask: &Grid3<u8>, phantom: &Phantom) -> Result<f64> {
    if d.dims != mask.dims() || d.dims != phantom.dims {
        return Err(Error::DimMismatch(
            "dose, mask, and phantom dims differ".into(),
        ));
    }
    let mut energy = 0.0;
    let mut mass = 0.0;
    let density = phantom.density.as_slice();
    for (i, &m) in mask.as_slice().iter().enumerate() {
        if m != 0 {
            energy += d.dose[i] * density[i];
            mass += density[i];
        }
    }
    if mass <= 0.0 {
        return Err(Error::OrganAbsent(
            "mask is empty or has zero organ mass".into(),
        ));
    }
    Ok(energy / mass)
}

/// Standard error of the mass-weighted mean organ dose, assuming independent
/// per-voxel estimates.
pub fn mean_organ_dose_sem(d: &DoseMap, mask: &Grid3<u8>, phantom: &Phantom) -> Result<f64> {
    if d.dims != mask.dims() || d.dims != phantom.dims {
        return Err(Error::DimMismatch(
            "dose, mask, and phantom dims differ".into(),
        ));
    }
    let density = phantom.density.as_slice();
    let mut mass = 0.0;
    for (i, &m) in mask.as_slice().iter().enumerate() {
        if m != 0 {
            mass += density[i];
        }
    }
    if mass <= 0.0 {
        return Err(Error::OrganAbsent("mask is empty".into()));
    }
    let mut var = 0.0;
    for (i, &m) in mask.as_slice().iter().enumerate() {
        if m != 0 {
            let w = density[i] / mass;
            let sem = d.sem(i);
            var += w * w * sem * sem;
        }
    }
    Ok(var.sqrt())
}

/// Reference doses for all six organs plus the body from a calibrated,
/// body-masked dose map. Returns the dose vector and per-label SEMs.
pub fn organ_dose_vector(
    d: &DoseMap,
    masks: &OrganMaskSet,
    phantom: &Phantom,
) -> Result<(OrganDoseVector, [f64; 7])> {
    if d.units != DoseUnits::MilliGray {
        return Err(Error::UnitMismatch(
            "organ doses are reported from calibrated mGy maps".into(),
        ));
    }
    let mut values = [0.0; 7];
    let mut sems = [0.0; 7];
    for (k, organ) in masks.organs.iter().enumerate() {
        values[k] = mean_organ_dose(d, organ, phantom)?;
        sems[k] = mean_organ_dose_sem(d, organ, phantom)?;
    }
    values[BODY_INDEX] = mean_organ_dose(d, &masks.body, phantom)?;
    sems[BODY_INDEX] = mean_organ_dose_sem(d, &masks.body, phantom)?;
    let v = OrganDoseVector { values };
    v.validate()?;
    Ok((v, sems))
}

/// Water-equivalent diameter in cm: D_w = 2 sqrt(A_w / pi) per axial slice,
/// averaged over slices that intersect the scan range and contain body.
/// A_w sums density relative to water times pixel area.
pub fn water_equivalent_diameter(
    phantom: &Phantom,
    scan_range_mm: Option<(f64, f64)>,
) -> Result<f64> {
    let dims = phantom.dims;
    let (z0, z1) = scan_range_mm.unwrap_or((0.0, dims.nz as f64 * phantom.spacing.dz));
    if !(z1 > z0) {
        return Err(Error::Config("scan range must have positive extent".into()));
    }
    let pixel_cm2 = phantom.spacing.dx * phantom.spacing.dy * 0.01;
    let mut dws = Vec::new();
    for z in 0..dims.nz {
        let zc = (z as f64 + 0.5) * phantom.spacing.dz;
        if zc < z0 || zc >= z1 {
            continue;
        }
        let mut area_w = 0.0;
        let mut body = false;
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let rho = *phantom.density.get(x, y, z);
                if rho > T_AIR {
                    body = true;
                    area_w += rho * pixel_cm2;
                }
            }
        }
        if body {
            dws.push(2.0 * (area_w / std::f64::consts::PI).sqrt());
        }
    }
    if dws.is_empty() {
        return Err(Error::OrganAbsent("no body voxels in the scan range".into()));
    }
    Ok(dws.iter().sum::<f64>() / dws.len() as f64)
}

/// Dice similarity coefficient between two binary grids. Two empty masks
/// score 1 (perfect agreement that nothing is present).
pub fn dice(a: &Grid3<u8>, b: &Grid3<u8>) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch("dice masks have different dims".into()));
    }
    let mut inter = 0u64;
    let mut na = 0u64;
    let mut nb = 0u64;
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        let x = u64::from(x != 0);
        let y = u64::from(y != 0);
        inter += x & y;
        na += x;
        nb += y;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Error metrics for one reference/prediction pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairError {
    /// Relative percentage error |d - d_hat| / d * 100 per label; None when
    /// the reference dose is zero.
    pub pe_percent: [Option<f64>; 7],
    /// Root-mean-square error per label in mGy (absolute error for scalars).
    pub rmse_mgy: [f64; 7],
}

/// Metrics for one reference/prediction pair per the per-label formulas.
pub fn pair_error(reference: &OrganDoseVector, predicted: &OrganDoseVector) -> PairError {
    let mut pe = [None; 7];
    let mut rmse = [0.0; 7];
    for k in 0..7 {
        let d = reference.values[k];
        let dh = predicted.values[k];
        let err = (d - dh).abs();
        rmse[k] = (err * err).sqrt();
        if d > 0.0 {
            pe[k] = Some(err / d * 100.0);
        }
    }
    PairError {
        pe_percent: pe,
        rmse_mgy: rmse,
    }
}

/// Aggregated per-label evaluation across a fold set: mean and stdev of PE
/// and RMSE over all pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    pub labels: Vec<String>,
    pub pe_mean: [f64; 7],
    pub pe_std: [f64; 7],
    pub rmse_mean: [f64; 7],
    pub rmse_std: [f64; 7],
    /// Labels that had zero reference dose in some pair (PE undefined there).
    pub flagged: Vec<String>,
    pub pairs: usize,
}

impl ErrorReport {
    pub fn mean_pe_over_labels(&self) -> f64 {
        self.pe_mean.iter().sum::<f64>() / 7.0
    }

    pub fn mean_rmse_over_labels(&self) -> f64 {
        self.rmse_mean.iter().sum::<f64>() / 7.0
    }
}

/// Aggregate pairwise metrics over a set of reference/prediction pairs.
pub fn error_metrics(
    references: &[OrganDoseVector],
    predictions: &[OrganDoseVector],
) -> Result<ErrorReport> {
    if references.len() != predictions.len() || references.is_empty() {
        return Err(Error::Config(
            "error metrics need matched, nonempty reference/prediction sets".into(),
        ));
    }
    let mut pe_all: [Vec<f64>; 7] = Default::default();
    let mut rmse_all: [Vec<f64>; 7] = Default::default();
    let mut flagged = Vec::new();
    for (r, p) in references.iter().zip(predictions) {
        let pair = pair_error(r, p);
        for k in 0..7 {
            match pair.pe_percent[k] {
                Some(v) => pe_all[k].push(v),
                None => {
                    let name = LABEL_NAMES[k].to_string();
                    if !flagged.contains(&name) {
                        flagged.push(name);
                    }
                }
            }
            rmse_all[k].push(pair.rmse_mgy[k]);
        }
    }
    let mut report = ErrorReport {
        labels: LABEL_NAMES.iter().map(|s| s.to_string()).collect(),
        pe_mean: [0.0; 7],
        pe_std: [0.0; 7],
        rmse_mean: [0.0; 7],
        rmse_std: [0.0; 7],
        flagged,
        pairs: references.len(),
    };
    for k in 0..7 {
        let (m, s) = mean_std(&pe_all[k]);
        report.pe_mean[k] = m;
        report.pe_std[k] = s;
        let (m, s) = mean_std(&rmse_all[k]);
        report.rmse_mean[k] = m;
        report.rmse_std[k] = s;
    }
    Ok(report)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
