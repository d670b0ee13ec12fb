//! Voxel phantoms: density/material volumes, organ masks, and the synthetic
//! cohort generator.

mod synth;

pub use synth::{generate_synthetic_phantom, torso_z_interval};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Dims, Grid3, Spacing};

/// Air/body threshold in g/cc. Voxels at or below this density are air.
pub const T_AIR: f64 = 0.1;

/// Soft tissue / bone-mixture density boundary in g/cc.
pub const BONE_THRESHOLD: f64 = 1.1;

/// Material indices used throughout the transport core.
pub const MATERIAL_AIR: u8 = 0;
pub const MATERIAL_SOFT: u8 = 1;
pub const MATERIAL_BONE: u8 = 2;
pub const NUM_MATERIALS: usize = 3;

/// Organs of interest, in the fixed label order used by every report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OrganLabel {
    Lungs,
    Kidneys,
    Liver,
    Bladder,
    Spleen,
    Pancreas,
}

impl OrganLabel {
    pub const ALL: [OrganLabel; 6] = [
        OrganLabel::Lungs,
        OrganLabel::Kidneys,
        OrganLabel::Liver,
        OrganLabel::Bladder,
        OrganLabel::Spleen,
        OrganLabel::Pancreas,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OrganLabel::Lungs => "lungs",
            OrganLabel::Kidneys => "kidneys",
            OrganLabel::Liver => "liver",
            OrganLabel::Bladder => "bladder",
            OrganLabel::Spleen => "spleen",
            OrganLabel::Pancreas => "pancreas",
        }
    }

    pub fn from_name(name: &str) -> Option<OrganLabel> {
        OrganLabel::ALL.iter().copied().find(|l| l.name() == name)
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

/// Label names for the six organs plus the whole patient body, in report order.
pub const LABEL_NAMES: [&str; 7] = [
    "lungs",
    "kidneys",
    "liver",
    "bladder",
    "spleen",
    "pancreas",
    "body",
];

/// Index of the body entry in 7-element label vectors.
pub const BODY_INDEX: usize = 6;

/// Voxelized patient model: mass density plus material index per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub dims: Dims,
    pub spacing: Spacing,
    pub density: Grid3<f64>,
    pub material: Grid3<u8>,
}

impl Phantom {
    pub fn new(dims: Dims, spacing: Spacing, density: Grid3<f64>, material: Grid3<u8>) -> Result<Self> {
        let p = Phantom {
            dims,
            spacing,
            density,
            material,
        };
        p.validate()?;
        Ok(p)
    }

    /// Uniform phantom of one density; material derived from the density.
    pub fn uniform(dims: Dims, spacing: Spacing, density: f64) -> Result<Self> {
        let mat = density_to_material(density);
        Phantom::new(
            dims,
            spacing,
            Grid3::filled(dims, density),
            Grid3::filled(dims, mat),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.spacing.validate()?;
        if self.density.dims() != self.dims || self.material.dims() != self.dims {
            return Err(Error::DimMismatch("phantom grids disagree with dims".into()));
        }
        for (&d, &m) in self.density.as_slice().iter().zip(self.material.as_slice()) {
            if !(d >= 0.0) {
                return Err(Error::Invariant(format!("negative or NaN density {d}")));
            }
            if m as usize >= NUM_MATERIALS {
                return Err(Error::Invariant(format!("invalid material index {m}")));
            }
            if m == MATERIAL_AIR && d >= T_AIR {
                return Err(Error::Invariant(format!(
                    "air voxel with density {d} >= t_air"
                )));
            }
        }
        Ok(())
    }

    /// Physical extent along each axis in mm.
    pub fn extent_mm(&self) -> (f64, f64, f64) {
        (
            self.dims.nx as f64 * self.spacing.dx,
            self.dims.ny as f64 * self.spacing.dy,
            self.dims.nz as f64 * self.spacing.dz,
        )
    }

    /// Total mass in grams.
    pub fn total_mass_g(&self) -> f64 {
        let v = self.spacing.voxel_volume_cm3();
        self.density.as_slice().iter().sum::<f64>() * v
    }

    /// Binary body mask: density strictly above `T_AIR`.
    pub fn body_mask(&self) -> Grid3<u8> {
        let data = self
            .density
            .as_slice()
            .iter()
            .map(|&d| u8::from(d > T_AIR))
            .collect();
        Grid3::from_vec(self.dims, data).expect("same dims")
    }

    /// Per-voxel mass in grams.
    pub fn voxel_mass_g(&self) -> Vec<f64> {
        let v = self.spacing.voxel_volume_cm3();
        self.density.as_slice().iter().map(|&d| d * v).collect()
    }

    /// Maximum density per material index, used for transport majorants.
    pub fn max_density_per_material(&self) -> [f64; NUM_MATERIALS] {
        let mut out = [0.0; NUM_MATERIALS];
        for (&d, &m) in self.density.as_slice().iter().zip(self.material.as_slice()) {
            let m = m as usize;
            if d > out[m] {
                out[m] = d;
            }
        }
        out
    }
}

/// Per-organ binary masks plus the body mask for one phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct OrganMaskSet {
    pub organs: [Grid3<u8>; 6],
    pub body: Grid3<u8>,
}

impl OrganMaskSet {
    pub fn get(&self, label: OrganLabel) -> &Grid3<u8> {
        &self.organs[label.index()]
    }

    /// Check mask-set invariants against a phantom by exhaustive voxel scan:
    /// same dims, organs pairwise disjoint, every organ voxel inside the body.
    pub fn validate(&self, phantom: &Phantom) -> Result<()> {
        let dims = phantom.dims;
        if self.body.dims() != dims {
            return Err(Error::DimMismatch("body mask dims".into()));
        }
        for g in &self.organs {
            if g.dims() != dims {
                return Err(Error::DimMismatch("organ mask dims".into()));
            }
        }
        let body = self.body.as_slice();
        for i in 0..dims.len() {
            let mut covered = 0u8;
            for g in &self.organs {
                let v = g.as_slice()[i];
                if v > 1 {
                    return Err(Error::Invariant("mask voxel not binary".into()));
                }
                covered += v;
            }
            if covered > 1 {
                return Err(Error::Invariant(format!("organ masks overlap at voxel {i}")));
            }
            if covered == 1 && body[i] == 0 {
                return Err(Error::Invariant(format!(
                    "organ voxel {i} outside body mask"
                )));
            }
        }
        Ok(())
    }
}

/// Synthetic cohort description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    /// Number of phantoms.
    pub count: usize,
    /// Target water-equivalent-diameter interval in cm.
    pub size_range_cm: (f64, f64),
    /// Scale factor on organ position/size jitter; 0 disables jitter.
    pub shape_jitter: f64,
    /// Master seed for the whole cohort.
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            count: 64,
            size_range_cm: (21.0, 41.0),
            shape_jitter: 1.0,
            seed: 20260810,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count < 1 {
            return Err(Error::Config("cohort count must be >= 1".into()));
        }
        let (lo, hi) = self.size_range_cm;
        if !(lo < hi) {
            return Err(Error::Config(format!(
                "degenerate size range [{lo}, {hi}]"
            )));
        }
        if lo < 15.0 || hi > 50.0 {
            return Err(Error::Config(format!(
                "size range [{lo}, {hi}] outside supported [15, 50] cm"
            )));
        }
        if !(0.0..=2.0).contains(&self.shape_jitter) {
            return Err(Error::Config("shape_jitter must be in [0, 2]".into()));
        }
        Ok(())
    }
}

/// Hounsfield-to-density knots: piecewise linear through
/// (-1024, 0.0012), (-1000, 0.0012), (0, 1.0), (1000, 1.6), (3071, 2.8).
/// The flat segment keeps the conventional HU of air at air density.
const HU_KNOTS: [(f64, f64); 5] = [
    (-1024.0, 0.0012),
    (-1000.0, 0.0012),
    (0.0, 1.0),
    (1000.0, 1.6),
    (3071.0, 2.8),
];

/// Map Hounsfield units to mass density in g/cc, clamping out-of-range input.
pub fn hu_to_density(hu: f64) -> f64 {
    hu_to_density_flagged(hu).0
}

/// Like [`hu_to_density`], returning whether the input had to be clamped.
pub fn hu_to_density_flagged(hu: f64) -> (f64, bool) {
    let lo = HU_KNOTS[0].0;
    let hi = HU_KNOTS[HU_KNOTS.len() - 1].0;
    let clamped = !(lo..=hi).contains(&hu);
    let h = hu.clamp(lo, hi);
    for w in HU_KNOTS.windows(2) {
        let (h0, d0) = w[0];
        let (h1, d1) = w[1];
        if h <= h1 {
            let t = if h1 > h0 { (h - h0) / (h1 - h0) } else { 0.0 };
            return (d0 + t * (d1 - d0), clamped);
        }
    }
    (HU_KNOTS[HU_KNOTS.len() - 1].1, clamped)
}

/// Material index from density: air below `T_AIR`, bone above
/// `BONE_THRESHOLD`, soft tissue in between. Total over densities >= 0.
pub fn density_to_material(density: f64) -> u8 {
    if density < T_AIR {
        MATERIAL_AIR
    } else if density > BONE_THRESHOLD {
        MATERIAL_BONE
    } else {
        MATERIAL_SOFT
    }
}

/// Trilinear resampling of the density grid onto an isotropic target spacing;
/// the material grid is recomputed from the resampled density.
pub fn resample_phantom(p: &Phantom, target_spacing_mm: f64) -> Result<Phantom> {
    if target_spacing_mm <= 0.0 {
        return Err(Error::Config("target spacing must be positive".into()));
    }
    let (ex, ey, ez) = p.extent_mm();
    if target_spacing_mm > ex || target_spacing_mm > ey || target_spacing_mm > ez {
        return Err(Error::Config(format!(
            "target spacing {target_spacing_mm} mm exceeds phantom extent ({ex}, {ey}, {ez}) mm"
        )));
    }
    let nd = Dims::new(
        (ex / target_spacing_mm).round().max(1.0) as usize,
        (ey / target_spacing_mm).round().max(1.0) as usize,
        (ez / target_spacing_mm).round().max(1.0) as usize,
    );
    let ns = Spacing::isotropic(target_spacing_mm);

    let mut density = Grid3::filled(nd, 0.0f64);
    for z in 0..nd.nz {
        let pz = (z as f64 + 0.5) * ns.dz;
        for y in 0..nd.ny {
            let py = (y as f64 + 0.5) * ns.dy;
            for x in 0..nd.nx {
                let px = (x as f64 + 0.5) * ns.dx;
                *density.get_mut(x, y, z) = sample_trilinear(p, px, py, pz);
            }
        }
    }
    let material = Grid3::from_vec(
        nd,
        density
            .as_slice()
            .iter()
            .map(|&d| density_to_material(d))
            .collect(),
    )?;
    Phantom::new(nd, ns, density, material)
}

/// Trilinear density sample at a point in phantom mm coordinates, with
/// edge clamping (cell-centered grid).
fn sample_trilinear(p: &Phantom, px: f64, py: f64, pz: f64) -> f64 {
    let fx = px / p.spacing.dx - 0.5;
    let fy = py / p.spacing.dy - 0.5;
    let fz = pz / p.spacing.dz - 0.5;
    let (x0, tx) = split_clamped(fx, p.dims.nx);
    let (y0, ty) = split_clamped(fy, p.dims.ny);
    let (z0, tz) = split_clamped(fz, p.dims.nz);
    let x1 = (x0 + 1).min(p.dims.nx - 1);
    let y1 = (y0 + 1).min(p.dims.ny - 1);
    let z1 = (z0 + 1).min(p.dims.nz - 1);

    let c = |x: usize, y: usize, z: usize| *p.density.get(x, y, z);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let v00 = lerp(c(x0, y0, z0), c(x1, y0, z0), tx);
    let v10 = lerp(c(x0, y1, z0), c(x1, y1, z0), tx);
    let v01 = lerp(c(x0, y0, z1), c(x1, y0, z1), tx);
    let v11 = lerp(c(x0, y1, z1), c(x1, y1, z1), tx);
    let v0 = lerp(v00, v10, ty);
    let v1 = lerp(v01, v11, ty);
    lerp(v0, v1, tz)
}

fn split_clamped(f: f64, n: usize) -> (usize, f64) {
    if f <= 0.0 {
        (0, 0.0)
    } else if f >= (n - 1) as f64 {
        (n - 1, 0.0)
    } else {
        let i = f.floor();
        (i as usize, f - i)
    }
}
