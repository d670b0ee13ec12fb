//! Procedural synthetic phantoms: a superellipsoid torso with six ellipsoid
//! organs at anatomically plausible relative positions, plus a bone spine.
//!
//! Masks are the exact generating shapes voxelized at voxel centers, so organ
//! dose oracles have ground-truth segmentations with zero labeling error.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Dims, Grid3, Spacing};
use crate::phantom::{
    density_to_material, CohortSpec, OrganLabel, OrganMaskSet, Phantom, T_AIR,
};
use crate::rng::rng_for;

/// Grid spacing for generated phantoms (mm, isotropic).
const VOXEL_MM: f64 = 4.0;
/// Air density in g/cc.
const AIR_DENSITY: f64 = 0.0012;
/// Margin of air voxels around the torso, mm per side.
const MARGIN_MM: f64 = 12.0;

/// Scale on the torso cross-section area so that the scan-range mean D_w of
/// the finished phantom (end taper, low-density lungs, bone excess folded in)
/// lands on the sampled target diameter.
const AREA_CORRECTION: f64 = 1.044;

/// One axis-aligned ellipsoid in torso-relative coordinates.
struct Shape {
    // center as fractions of (a, b, length)
    fx: f64,
    fy: f64,
    fz: f64,
    // semi-axes as fractions of (a, b, length)
    sx: f64,
    sy: f64,
    sz: f64,
}

struct OrganTemplate {
    label: OrganLabel,
    density: f64,
    shapes: &'static [Shape],
}

const LUNG_SHAPES: [Shape; 2] = [
    Shape { fx: -0.42, fy: -0.10, fz: 0.83, sx: 0.26, sy: 0.30, sz: 0.11 },
    Shape { fx: 0.42, fy: -0.10, fz: 0.83, sx: 0.26, sy: 0.30, sz: 0.11 },
];
const KIDNEY_SHAPES: [Shape; 2] = [
    Shape { fx: -0.30, fy: 0.30, fz: 0.42, sx: 0.10, sy: 0.11, sz: 0.05 },
    Shape { fx: 0.30, fy: 0.30, fz: 0.42, sx: 0.10, sy: 0.11, sz: 0.05 },
];
const LIVER_SHAPES: [Shape; 1] =
    [Shape { fx: -0.28, fy: 0.05, fz: 0.59, sx: 0.36, sy: 0.42, sz: 0.075 }];
const BLADDER_SHAPES: [Shape; 1] =
    [Shape { fx: 0.0, fy: -0.15, fz: 0.10, sx: 0.13, sy: 0.14, sz: 0.05 }];
const SPLEEN_SHAPES: [Shape; 1] =
    [Shape { fx: 0.44, fy: 0.12, fz: 0.60, sx: 0.13, sy: 0.15, sz: 0.045 }];
const PANCREAS_SHAPES: [Shape; 1] =
    [Shape { fx: 0.05, fy: 0.08, fz: 0.30, sx: 0.22, sy: 0.07, sz: 0.03 }];

const ORGANS: [OrganTemplate; 6] = [
    OrganTemplate { label: OrganLabel::Lungs, density: 0.30, shapes: &LUNG_SHAPES },
    OrganTemplate { label: OrganLabel::Kidneys, density: 1.04, shapes: &KIDNEY_SHAPES },
    OrganTemplate { label: OrganLabel::Liver, density: 1.05, shapes: &LIVER_SHAPES },
    OrganTemplate { label: OrganLabel::Bladder, density: 1.01, shapes: &BLADDER_SHAPES },
    OrganTemplate { label: OrganLabel::Spleen, density: 1.05, shapes: &SPLEEN_SHAPES },
    OrganTemplate { label: OrganLabel::Pancreas, density: 1.03, shapes: &PANCREAS_SHAPES },
];

/// A fully positioned ellipsoid in phantom mm coordinates.
#[derive(Clone, Copy)]
struct PlacedEllipsoid {
    cx: f64,
    cy: f64,
    cz: f64,
    rx: f64,
    ry: f64,
    rz: f64,
}

impl PlacedEllipsoid {
    #[inline]
    fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        let u = (x - self.cx) / self.rx;
        let v = (y - self.cy) / self.ry;
        let w = (z - self.cz) / self.rz;
        u * u + v * v + w * w <= 1.0
    }
}

struct Torso {
    cx: f64,
    cy: f64,
    z0: f64,
    length: f64,
    a: f64,
    b: f64,
    p: f64,
}

impl Torso {
    /// End taper: the cross-section scale shrinks toward both torso ends.
    fn scale_at(&self, z_frac: f64) -> f64 {
        let t = z_frac.min(1.0 - z_frac);
        (0.8 + 2.2 * t).min(1.0)
    }

    fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        let zf = (z - self.z0) / self.length;
        if !(0.0..1.0).contains(&zf) {
            return false;
        }
        let m = self.scale_at(zf);
        let u = ((x - self.cx) / (self.a * m)).abs();
        let v = ((y - self.cy) / (self.b * m)).abs();
        u.powf(self.p) + v.powf(self.p) <= 1.0
    }
}

/// Area of the superellipse |x/a|^p + |y/b|^p <= 1, via Simpson quadrature of
/// 4ab * integral_0^1 (1 - t^p)^(1/p) dt.
fn superellipse_area(a: f64, b: f64, p: f64) -> f64 {
    let n = 4096;
    let h = 1.0 / n as f64;
    let f = |t: f64| (1.0 - t.powf(p)).max(0.0).powf(1.0 / p);
    let mut acc = f(0.0) + f(1.0);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    4.0 * a * b * acc * h / 3.0
}

fn jitter(rng: &mut ChaCha8Rng, amp: f64) -> f64 {
    rng.gen_range(-1.0..=1.0) * amp
}

/// Generate phantom `index` of the cohort. Deterministic in (seed, index).
pub fn generate_synthetic_phantom(
    spec: &CohortSpec,
    index: usize,
) -> Result<(Phantom, OrganMaskSet)> {
    spec.validate()?;
    if index >= spec.count {
        return Err(Error::Config(format!(
            "phantom index {index} out of range for cohort of {}",
            spec.count
        )));
    }
    let mut rng = rng_for(spec.seed, "phantom", index as u64);
    let j = spec.shape_jitter;

    // Body-scale parameters.
    let (lo, hi) = spec.size_range_cm;
    let dw_target_mm = rng.gen_range(lo..=hi) * 10.0;
    let aspect = 0.76 + jitter(&mut rng, 0.04 * j);
    let p = 2.5 + jitter(&mut rng, 0.3 * j);
    let base_density = 1.0 + jitter(&mut rng, 0.015 * j);
    let length = 460.0 + jitter(&mut rng, 20.0 * j);
    let lung_density = 0.30 + jitter(&mut rng, 0.02 * j);
    let bone_density = 1.60 + jitter(&mut rng, 0.05 * j);

    // Solve torso semi-axes for the target water-equivalent area.
    let target_area = std::f64::consts::PI * (dw_target_mm / 2.0).powi(2) * AREA_CORRECTION;
    let unit_area = superellipse_area(1.0, 1.0, p);
    let ab = target_area / unit_area;
    let a = (ab / aspect).sqrt();
    let b = aspect * a;

    let dims = Dims::new(
        ((2.0 * a + 2.0 * MARGIN_MM) / VOXEL_MM).ceil() as usize,
        ((2.0 * b + 2.0 * MARGIN_MM) / VOXEL_MM).ceil() as usize,
        ((length + 2.0 * MARGIN_MM) / VOXEL_MM).ceil() as usize,
    );
    let spacing = Spacing::isotropic(VOXEL_MM);
    let torso = Torso {
        cx: dims.nx as f64 * VOXEL_MM / 2.0,
        cy: dims.ny as f64 * VOXEL_MM / 2.0,
        z0: MARGIN_MM,
        length,
        a,
        b,
        p,
    };

    // Place organs with jitter on centers and semi-axes.
    let mut placed: Vec<(usize, f64, Vec<PlacedEllipsoid>)> = Vec::new();
    for organ in &ORGANS {
        let mut shapes = Vec::with_capacity(organ.shapes.len());
        for s in organ.shapes {
            let fx = s.fx + jitter(&mut rng, 0.02 * j);
            let fy = s.fy + jitter(&mut rng, 0.02 * j);
            let fz = s.fz + jitter(&mut rng, 0.008 * j);
            let gx = 1.0 + jitter(&mut rng, 0.06 * j);
            let gy = 1.0 + jitter(&mut rng, 0.06 * j);
            let gz = 1.0 + jitter(&mut rng, 0.06 * j);
            shapes.push(PlacedEllipsoid {
                cx: torso.cx + fx * a,
                cy: torso.cy + fy * b,
                cz: torso.z0 + fz * length,
                rx: s.sx * a * gx,
                ry: s.sy * b * gy,
                rz: s.sz * length * gz,
            });
        }
        let density = organ.density + jitter(&mut rng, 0.01 * j) + if organ.label == OrganLabel::Lungs {
            lung_density - 0.30
        } else {
            0.0
        };
        placed.push((organ.label.index(), density, shapes));
    }

    // Spine: a bone cylinder along z on the posterior midline.
    let spine_r = 12.0;
    let spine_cy = torso.cy + 0.62 * b;
    let spine_z = (torso.z0 + 0.06 * length, torso.z0 + 0.94 * length);

    let mut density = Grid3::filled(dims, AIR_DENSITY);
    let mut body = Grid3::filled(dims, 0u8);
    let mut organs: [Grid3<u8>; 6] = std::array::from_fn(|_| Grid3::filled(dims, 0u8));

    for z in 0..dims.nz {
        let pz = (z as f64 + 0.5) * VOXEL_MM;
        for y in 0..dims.ny {
            let py = (y as f64 + 0.5) * VOXEL_MM;
            for x in 0..dims.nx {
                let px = (x as f64 + 0.5) * VOXEL_MM;
                if !torso.contains(px, py, pz) {
                    continue;
                }
                *body.get_mut(x, y, z) = 1;
                let mut d = base_density;
                for (organ_idx, organ_density, shapes) in &placed {
                    if shapes.iter().any(|s| s.contains(px, py, pz)) {
                        *organs[*organ_idx].get_mut(x, y, z) = 1;
                        d = *organ_density;
                        break;
                    }
                }
                let du = px - torso.cx;
                let dv = py - spine_cy;
                if du * du + dv * dv <= spine_r * spine_r && pz >= spine_z.0 && pz < spine_z.1 {
                    d = bone_density;
                }
                *density.get_mut(x, y, z) = d;
            }
        }
    }

    let material = Grid3::from_vec(
        dims,
        density
            .as_slice()
            .iter()
            .map(|&d| density_to_material(d))
            .collect(),
    )?;
    let phantom = Phantom::new(dims, spacing, density, material)?;
    let masks = OrganMaskSet { organs, body };
    Ok((phantom, masks))
}

/// Z interval (mm) of the generated torso inside its grid; scan planning uses
/// this as the anatomical extent.
pub fn torso_z_interval(phantom: &Phantom) -> (f64, f64) {
    let dims = phantom.dims;
    let mut z_lo = dims.nz;
    let mut z_hi = 0usize;
    for z in 0..dims.nz {
        let mut any = false;
        'scan: for y in 0..dims.ny {
            for x in 0..dims.nx {
                if *phantom.density.get(x, y, z) > T_AIR {
                    any = true;
                    break 'scan;
                }
            }
        }
        if any {
            z_lo = z_lo.min(z);
            z_hi = z_hi.max(z + 1);
        }
    }
    (
        z_lo as f64 * phantom.spacing.dz,
        z_hi as f64 * phantom.spacing.dz,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::MATERIAL_BONE;

    fn small_spec() -> CohortSpec {
        CohortSpec {
            count: 4,
            size_range_cm: (21.0, 41.0),
            shape_jitter: 1.0,
            seed: 7,
        }
    }

    #[test]
    fn generation_is_bit_deterministic() {
        let spec = small_spec();
        let (p1, m1) = generate_synthetic_phantom(&spec, 0).unwrap();
        let (p2, m2) = generate_synthetic_phantom(&spec, 0).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn masks_disjoint_and_inside_body() {
        let spec = small_spec();
        for index in 0..spec.count {
            let (phantom, masks) = generate_synthetic_phantom(&spec, index).unwrap();
            masks.validate(&phantom).unwrap();
            // body equals density > t_air exactly
            let from_density = phantom.body_mask();
            assert_eq!(from_density.as_slice(), masks.body.as_slice());
        }
    }

    #[test]
    fn tissue_densities_match_contract() {
        let (phantom, masks) = generate_synthetic_phantom(&small_spec(), 1).unwrap();
        let lungs = masks.get(OrganLabel::Lungs);
        let mut lung_seen = false;
        let mut bone_seen = false;
        for i in 0..phantom.dims.len() {
            let d = phantom.density.as_slice()[i];
            if lungs.as_slice()[i] == 1 {
                lung_seen = true;
                assert!((0.2..0.4).contains(&d), "lung density {d}");
            }
            if phantom.material.as_slice()[i] == MATERIAL_BONE {
                bone_seen = true;
                assert!(d > 1.1, "bone density {d}");
            }
        }
        assert!(lung_seen && bone_seen);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small_spec();
        s.count = 0;
        assert!(generate_synthetic_phantom(&s, 0).is_err());
        let mut s = small_spec();
        s.size_range_cm = (30.0, 30.0);
        assert!(generate_synthetic_phantom(&s, 0).is_err());
        let s = small_spec();
        assert!(generate_synthetic_phantom(&s, 99).is_err());
    }
}
