//! Synthetic scout radiographs (parallel-beam line integrals) and model-input
//! composition: two scout views plus the binary scan-range channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::Phantom;
use crate::transport::CrossSectionTable;

/// Scout field size in pixels: 690 rows (z) by 530 columns (transverse).
pub const SCOUT_ROWS: usize = 690;
pub const SCOUT_COLS: usize = 530;
/// Scout pixel pitch in mm.
pub const SCOUT_PIXEL_MM: f64 = 1.0;
/// Effective mono-energy for the line integrals, keV.
pub const SCOUT_ENERGY_KEV: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoutView {
    Frontal,
    Lateral,
}

impl ScoutView {
    pub fn tag(&self) -> &'static str {
        match self {
            ScoutView::Frontal => "frontal",
            ScoutView::Lateral => "lateral",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "frontal" => Ok(ScoutView::Frontal),
            "lateral" => Ok(ScoutView::Lateral),
            other => Err(Error::Config(format!("unknown scout view '{other}'"))),
        }
    }
}

/// Mapping between scout pixel indices and phantom millimetre coordinates.
/// Row `r` spans z in `[z0 + r*pix, z0 + (r+1)*pix)`; column origins are held
/// per transverse axis so frontal (x) and lateral (y) views share one layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoutLayout {
    pub rows: usize,
    pub cols: usize,
    pub pixel_mm: f64,
    pub z0_mm: f64,
    pub x0_mm: f64,
    pub y0_mm: f64,
}

impl ScoutLayout {
    /// Standard 690x530 field with the phantom centered. Errors when the
    /// phantom does not fit, reporting how much padding would be required.
    pub fn standard_for(phantom: &Phantom) -> Result<ScoutLayout> {
        let (ex, ey, ez) = phantom.extent_mm();
        let field_z = SCOUT_ROWS as f64 * SCOUT_PIXEL_MM;
        let field_u = SCOUT_COLS as f64 * SCOUT_PIXEL_MM;
        if ez > field_z || ex > field_u || ey > field_u {
            let need_rows = ((ez - field_z) / SCOUT_PIXEL_MM).ceil().max(0.0);
            let need_cols = ((ex.max(ey) - field_u) / SCOUT_PIXEL_MM).ceil().max(0.0);
            return Err(Error::Config(format!(
                "phantom extent ({ex:.0}, {ey:.0}, {ez:.0}) mm exceeds the scout field; \
                 requires {need_rows} more rows / {need_cols} more columns"
            )));
        }
        Ok(ScoutLayout {
            rows: SCOUT_ROWS,
            cols: SCOUT_COLS,
            pixel_mm: SCOUT_PIXEL_MM,
            z0_mm: (ez - field_z) / 2.0,
            x0_mm: (ex - field_u) / 2.0,
            y0_mm: (ey - field_u) / 2.0,
        })
    }

    pub fn row_to_z_mm(&self, row: usize) -> f64 {
        self.z0_mm + row as f64 * self.pixel_mm
    }

    pub fn z_extent_mm(&self) -> (f64, f64) {
        (self.z0_mm, self.z0_mm + self.rows as f64 * self.pixel_mm)
    }
}

/// One rendered scout view: line-integral attenuation values (unitless).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoutImage {
    pub view: ScoutView,
    pub rows: usize,
    pub cols: usize,
    pub pixel_mm: f64,
    pub layout: ScoutLayout,
    pub values: Vec<f64>,
}

impl ScoutImage {
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }
}

/// Render a parallel-beam scout: line integrals of mu(60 keV) along y for the
/// frontal view or along x for the lateral view, resampled to the 1 mm scout
/// grid. Deterministic and linear in density.
pub fn render_scout(phantom: &Phantom, view: ScoutView, layout: &ScoutLayout) -> Result<ScoutImage> {
    phantom.validate()?;
    let dims = phantom.dims;
    let sp = phantom.spacing;
    let table = CrossSectionTable::standard();
    let mut mu_per_g = [0.0f64; crate::phantom::NUM_MATERIALS];
    for (m, slot) in mu_per_g.iter_mut().enumerate() {
        let (ma, _) = table.mass_atten(m as u8, SCOUT_ENERGY_KEV);
        *slot = ma.total();
    }

    // Integrate at phantom resolution: raw[z][u] with u = x (frontal) or
    // u = y (lateral).
    let (nu, du, path_cm) = match view {
        ScoutView::Frontal => (dims.nx, sp.dx, sp.dy / 10.0),
        ScoutView::Lateral => (dims.ny, sp.dy, sp.dx / 10.0),
    };
    let mut raw = vec![0.0f64; dims.nz * nu];
    for z in 0..dims.nz {
        for u in 0..nu {
            let mut acc = 0.0;
            match view {
                ScoutView::Frontal => {
                    for y in 0..dims.ny {
                        let i = dims.idx(u, y, z);
                        acc += mu_per_g[phantom.material.as_slice()[i] as usize]
                            * phantom.density.as_slice()[i];
                    }
                }
                ScoutView::Lateral => {
                    for x in 0..dims.nx {
                        let i = dims.idx(x, u, z);
                        acc += mu_per_g[phantom.material.as_slice()[i] as usize]
                            * phantom.density.as_slice()[i];
                    }
                }
            }
            raw[z * nu + u] = acc * path_cm;
        }
    }

    // Bilinear resample onto the scout grid with zero padding outside.
    let u0 = match view {
        ScoutView::Frontal => layout.x0_mm,
        ScoutView::Lateral => layout.y0_mm,
    };
    let sample = |fz: f64, fu: f64| -> f64 {
        let z0 = fz.floor();
        let u0f = fu.floor();
        let tz = fz - z0;
        let tu = fu - u0f;
        let mut acc = 0.0;
        for (dz, wz) in [(0isize, 1.0 - tz), (1, tz)] {
            let zi = z0 as isize + dz;
            if zi < 0 || zi >= dims.nz as isize || wz == 0.0 {
                continue;
            }
            for (duu, wu) in [(0isize, 1.0 - tu), (1, tu)] {
                let ui = u0f as isize + duu;
                if ui < 0 || ui >= nu as isize || wu == 0.0 {
                    continue;
                }
                acc += wz * wu * raw[zi as usize * nu + ui as usize];
            }
        }
        acc
    };
    let mut values = vec![0.0f64; layout.rows * layout.cols];
    for r in 0..layout.rows {
        let z_mm = layout.z0_mm + (r as f64 + 0.5) * layout.pixel_mm;
        let fz = z_mm / sp.dz - 0.5;
        for c in 0..layout.cols {
            let u_mm = u0 + (c as f64 + 0.5) * layout.pixel_mm;
            let fu = u_mm / du - 0.5;
            values[r * layout.cols + c] = sample(fz, fu);
        }
    }
    Ok(ScoutImage {
        view,
        rows: layout.rows,
        cols: layout.cols,
        pixel_mm: layout.pixel_mm,
        layout: *layout,
        values,
    })
}

/// Binary scan-range channel: rows covering `[z_start, z_end)` are one.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeChannel {
    pub rows: usize,
    pub cols: usize,
    pub row_start: usize,
    pub row_end: usize,
    pub values: Vec<f32>,
}

pub fn scan_range_channel(
    z_start_mm: f64,
    z_end_mm: f64,
    layout: &ScoutLayout,
) -> Result<RangeChannel> {
    if !(z_end_mm > z_start_mm) {
        return Err(Error::Config(format!(
            "scan range [{z_start_mm}, {z_end_mm}] is empty or inverted"
        )));
    }
    let (lo, hi) = layout.z_extent_mm();
    if z_start_mm < lo - 1e-9 || z_end_mm > hi + 1e-9 {
        return Err(Error::Config(format!(
            "scan range [{z_start_mm}, {z_end_mm}] outside scout extent [{lo}, {hi}]"
        )));
    }
    let r0 = (((z_start_mm - layout.z0_mm) / layout.pixel_mm).floor().max(0.0)) as usize;
    let r1 = (((z_end_mm - layout.z0_mm) / layout.pixel_mm).ceil() as usize).min(layout.rows);
    let mut values = vec![0.0f32; layout.rows * layout.cols];
    for r in r0..r1 {
        for c in 0..layout.cols {
            values[r * layout.cols + c] = 1.0;
        }
    }
    Ok(RangeChannel {
        rows: layout.rows,
        cols: layout.cols,
        row_start: r0,
        row_end: r1,
        values,
    })
}

/// Recover the z interval encoded by a range channel.
pub fn range_channel_interval(ch: &RangeChannel, layout: &ScoutLayout) -> (f64, f64) {
    (
        layout.row_to_z_mm(ch.row_start),
        layout.row_to_z_mm(ch.row_end),
    )
}

/// Cohort-level min/max used to normalize scout pixel values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoutNormBounds {
    pub min: f64,
    pub max: f64,
}

impl ScoutNormBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.max > self.min) {
            return Err(Error::Config(format!(
                "degenerate scout bounds [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.min + v * (self.max - self.min)
    }

    /// Bounds covering every pixel of the given images.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a ScoutImage>) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for img in images {
            for &v in &img.values {
                min = min.min(v);
                max = max.max(v);
            }
        }
        let b = ScoutNormBounds { min, max };
        b.validate()?;
        Ok(b)
    }
}

/// Channel indices of the composed model input.
pub const CHANNEL_LATERAL: usize = 0;
pub const CHANNEL_FRONTAL: usize = 1;
pub const CHANNEL_RANGE: usize = 2;

/// The 3-channel model input: lateral scout, frontal scout, scan range.
/// Scout channels are min-max normalized to [0, 1] with cohort-level bounds;
/// the range channel is binary.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub rows: usize,
    pub cols: usize,
    pub channels: [Vec<f32>; 3],
    pub bounds: ScoutNormBounds,
}

pub fn compose_input(
    lateral: &ScoutImage,
    frontal: &ScoutImage,
    range: &RangeChannel,
    bounds: ScoutNormBounds,
) -> Result<ModelInput> {
    bounds.validate()?;
    if lateral.view != ScoutView::Lateral || frontal.view != ScoutView::Frontal {
        return Err(Error::Config(
            "scout view tags do not match their composition slots".into(),
        ));
    }
    let (rows, cols) = (lateral.rows, lateral.cols);
    if frontal.rows != rows
        || frontal.cols != cols
        || range.rows != rows
        || range.cols != cols
    {
        return Err(Error::DimMismatch("model input channels disagree".into()));
    }
    let norm = |img: &ScoutImage| -> Vec<f32> {
        img.values.iter().map(|&v| bounds.normalize(v) as f32).collect()
    };
    Ok(ModelInput {
        rows,
        cols,
        channels: [norm(lateral), norm(frontal), range.values.clone()],
        bounds,
    })
}
