//! On-disk formats: key-value text headers followed by raw little-endian
//! voxel arrays, plus the CSV report writers.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dosimetry::OrganDoseVector;
use crate::error::{Error, Result};
use crate::grid::{Dims, Grid3, Spacing};
use crate::phantom::Phantom;
use crate::scout::{ScoutImage, ScoutLayout, ScoutView};
use crate::transport::{DoseMap, DoseUnits};

const MAGIC: &str = "voxeldose-grid 1";

struct Header {
    kind: String,
    entries: BTreeMap<String, String>,
}

impl Header {
    fn new(kind: &str) -> Self {
        Header {
            kind: kind.to_string(),
            entries: BTreeMap::new(),
        }
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    fn get(&self, path: &Path, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::parse(path, format!("missing header key '{key}'")))
    }

    fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "kind = {}", self.kind)?;
        for (k, v) in &self.entries {
            writeln!(w, "{k} = {v}")?;
        }
        writeln!(w, "end")
    }

    fn read(r: &mut impl Read, path: &Path) -> Result<Header> {
        let mut line = Vec::new();
        let mut read_line = |r: &mut dyn Read| -> Result<String> {
            line.clear();
            let mut byte = [0u8; 1];
            loop {
                let n = r.read(&mut byte).map_err(|e| Error::io(path, e))?;
                if n == 0 || byte[0] == b'\n' {
                    break;
                }
                line.push(byte[0]);
            }
            String::from_utf8(line.clone())
                .map_err(|_| Error::parse(path, "header is not utf-8"))
        };
        let magic = read_line(r)?;
        if magic != MAGIC {
            return Err(Error::parse(path, format!("bad magic '{magic}'")));
        }
        let kind_line = read_line(r)?;
        let kind = kind_line
            .strip_prefix("kind = ")
            .ok_or_else(|| Error::parse(path, "missing kind"))?
            .to_string();
        let mut entries = BTreeMap::new();
        loop {
            let l = read_line(r)?;
            if l == "end" {
                break;
            }
            if l.is_empty() {
                return Err(Error::parse(path, "unterminated header"));
            }
            let (k, v) = l
                .split_once(" = ")
                .ok_or_else(|| Error::parse(path, format!("bad header line '{l}'")))?;
            entries.insert(k.to_string(), v.to_string());
        }
        Ok(Header { kind, entries })
    }

    fn dims(&self, path: &Path) -> Result<Dims> {
        let parts: Vec<usize> = self
            .get(path, "dims")?
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, "bad dims"))?;
        if parts.len() != 3 {
            return Err(Error::parse(path, "dims needs three values"));
        }
        Ok(Dims::new(parts[0], parts[1], parts[2]))
    }

    fn spacing(&self, path: &Path) -> Result<Spacing> {
        let parts: Vec<f64> = self
            .get(path, "spacing_mm")?
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, "bad spacing"))?;
        if parts.len() != 3 {
            return Err(Error::parse(path, "spacing needs three values"));
        }
        Ok(Spacing {
            dx: parts[0],
            dy: parts[1],
            dz: parts[2],
        })
    }
}

fn open_writer(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn open_reader(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn write_f64s(w: &mut impl Write, values: &[f64], path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn write_f32s(w: &mut impl Write, values: &[f32], path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_f64s(r: &mut impl Read, n: usize, path: &Path) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn read_f32s(r: &mut impl Read, n: usize, path: &Path) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect())
}

fn read_u8s(r: &mut impl Read, n: usize, path: &Path) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

/// Phantom file: header, then the density array (f64) and material array (u8),
/// z-major.
pub fn write_phantom(path: &Path, phantom: &Phantom) -> Result<()> {
    let mut h = Header::new("phantom");
    h.set("dims", format!("{} {} {}", phantom.dims.nx, phantom.dims.ny, phantom.dims.nz));
    h.set(
        "spacing_mm",
        format!("{} {} {}", phantom.spacing.dx, phantom.spacing.dy, phantom.spacing.dz),
    );
    h.set("byte_order", "little-endian");
    h.set("fields", "density:f64 material:u8");
    let mut w = open_writer(path)?;
    h.write(&mut w).map_err(|e| Error::io(path, e))?;
    write_f64s(&mut w, phantom.density.as_slice(), path)?;
    w.write_all(phantom.material.as_slice())
        .map_err(|e| Error::io(path, e))
}

pub fn read_phantom(path: &Path) -> Result<Phantom> {
    let mut r = open_reader(path)?;
    let h = Header::read(&mut r, path)?;
    if h.kind != "phantom" {
        return Err(Error::parse(path, format!("expected phantom, got {}", h.kind)));
    }
    let dims = h.dims(path)?;
    let spacing = h.spacing(path)?;
    let density = read_f64s(&mut r, dims.len(), path)?;
    let material = read_u8s(&mut r, dims.len(), path)?;
    Phantom::new(
        dims,
        spacing,
        Grid3::from_vec(dims, density)?,
        Grid3::from_vec(dims, material)?,
    )
}

/// Mask file: one byte per voxel, same layout as the phantom.
pub fn write_mask(path: &Path, mask: &Grid3<u8>, spacing: Spacing, organ: &str) -> Result<()> {
    let d = mask.dims();
    let mut h = Header::new("mask");
    h.set("dims", format!("{} {} {}", d.nx, d.ny, d.nz));
    h.set("spacing_mm", format!("{} {} {}", spacing.dx, spacing.dy, spacing.dz));
    h.set("byte_order", "little-endian");
    h.set("organ", organ);
    h.set("fields", "mask:u8");
    let mut w = open_writer(path)?;
    h.write(&mut w).map_err(|e| Error::io(path, e))?;
    w.write_all(mask.as_slice()).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<(Grid3<u8>, String)> {
    let mut r = open_reader(path)?;
    let h = Header::read(&mut r, path)?;
    if h.kind != "mask" {
        return Err(Error::parse(path, format!("expected mask, got {}", h.kind)));
    }
    let dims = h.dims(path)?;
    let organ = h.get(path, "organ")?.to_string();
    let data = read_u8s(&mut r, dims.len(), path)?;
    Ok((Grid3::from_vec(dims, data)?, organ))
}

/// Dose file: header with units and histories, then the dose array and the
/// squared-sum tally array (both f64).
pub fn write_dose(path: &Path, dose: &DoseMap) -> Result<()> {
    let mut h = Header::new("dose");
    h.set("dims", format!("{} {} {}", dose.dims.nx, dose.dims.ny, dose.dims.nz));
    h.set(
        "spacing_mm",
        format!("{} {} {}", dose.spacing.dx, dose.spacing.dy, dose.spacing.dz),
    );
    h.set("byte_order", "little-endian");
    h.set("units", dose.units.tag());
    h.set("histories", dose.histories);
    h.set("fields", "dose:f64 sq:f64");
    let mut w = open_writer(path)?;
    h.write(&mut w).map_err(|e| Error::io(path, e))?;
    write_f64s(&mut w, &dose.dose, path)?;
    write_f64s(&mut w, &dose.sq_tally, path)
}

pub fn read_dose(path: &Path) -> Result<DoseMap> {
    let mut r = open_reader(path)?;
    let h = Header::read(&mut r, path)?;
    if h.kind != "dose" {
        return Err(Error::parse(path, format!("expected dose, got {}", h.kind)));
    }
    let dims = h.dims(path)?;
    let spacing = h.spacing(path)?;
    let units = DoseUnits::from_tag(h.get(path, "units")?)?;
    let histories: u64 = h
        .get(path, "histories")?
        .parse()
        .map_err(|_| Error::parse(path, "bad histories"))?;
    let dose = read_f64s(&mut r, dims.len(), path)?;
    let sq = read_f64s(&mut r, dims.len(), path)?;
    let map = DoseMap {
        dims,
        spacing,
        units,
        histories,
        dose,
        sq_tally: sq,
    };
    map.validate()?;
    Ok(map)
}

/// Scout file: 32-bit float raw grid with a text header carrying the view
/// tag and layout origins.
pub fn write_scout(path: &Path, img: &ScoutImage) -> Result<()> {
    let mut h = Header::new("scout");
    h.set("dims", format!("{} {} 1", img.cols, img.rows));
    h.set("spacing_mm", format!("{} {} 1", img.pixel_mm, img.pixel_mm));
    h.set("byte_order", "little-endian");
    h.set("view", img.view.tag());
    h.set("z0_mm", img.layout.z0_mm);
    h.set("x0_mm", img.layout.x0_mm);
    h.set("y0_mm", img.layout.y0_mm);
    h.set("fields", "values:f32");
    let mut w = open_writer(path)?;
    h.write(&mut w).map_err(|e| Error::io(path, e))?;
    let f32s: Vec<f32> = img.values.iter().map(|&v| v as f32).collect();
    write_f32s(&mut w, &f32s, path)
}

pub fn read_scout(path: &Path) -> Result<ScoutImage> {
    let mut r = open_reader(path)?;
    let h = Header::read(&mut r, path)?;
    if h.kind != "scout" {
        return Err(Error::parse(path, format!("expected scout, got {}", h.kind)));
    }
    let dims = h.dims(path)?;
    let (cols, rows) = (dims.nx, dims.ny);
    let pixel_mm = h.spacing(path)?.dx;
    let view = ScoutView::from_tag(h.get(path, "view")?)?;
    let parse_f64 = |key: &str| -> Result<f64> {
        h.get(path, key)?
            .parse::<f64>()
            .map_err(|_| Error::parse(path, format!("bad {key}")))
    };
    let layout = ScoutLayout {
        rows,
        cols,
        pixel_mm,
        z0_mm: parse_f64("z0_mm")?,
        x0_mm: parse_f64("x0_mm")?,
        y0_mm: parse_f64("y0_mm")?,
    };
    let values = read_f32s(&mut r, rows * cols, path)?;
    Ok(ScoutImage {
        view,
        rows,
        cols,
        pixel_mm,
        layout,
        values: values.into_iter().map(|v| v as f64).collect(),
    })
}

/// Model input file: three stacked f32 planes (lateral, frontal, range).
pub fn write_model_input(path: &Path, input: &crate::scout::ModelInput) -> Result<()> {
    let mut h = Header::new("model_input");
    h.set("dims", format!("{} {} 3", input.cols, input.rows));
    h.set("spacing_mm", "1 1 1");
    h.set("byte_order", "little-endian");
    h.set("channels", "lateral frontal range");
    h.set("bounds", format!("{} {}", input.bounds.min, input.bounds.max));
    h.set("fields", "lateral:f32 frontal:f32 range:f32");
    let mut w = open_writer(path)?;
    h.write(&mut w).map_err(|e| Error::io(path, e))?;
    for ch in &input.channels {
        write_f32s(&mut w, ch, path)?;
    }
    Ok(())
}

pub fn read_model_input(path: &Path) -> Result<crate::scout::ModelInput> {
    use crate::scout::{ModelInput, ScoutNormBounds};
    let mut r = open_reader(path)?;
    let h = Header::read(&mut r, path)?;
    if h.kind != "model_input" {
        return Err(Error::parse(path, format!("expected model_input, got {}", h.kind)));
    }
    let dims = h.dims(path)?;
    let (cols, rows) = (dims.nx, dims.ny);
    let bounds_raw = h.get(path, "bounds")?;
    let parts: Vec<f64> = bounds_raw
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(path, "bad bounds"))?;
    if parts.len() != 2 {
        return Err(Error::parse(path, "bounds needs two values"));
    }
    let mut channels = Vec::with_capacity(3);
    for _ in 0..3 {
        channels.push(read_f32s(&mut r, rows * cols, path)?);
    }
    let channels: [Vec<f32>; 3] = channels.try_into().expect("three channels");
    Ok(ModelInput {
        rows,
        cols,
        channels,
        bounds: ScoutNormBounds {
            min: parts[0],
            max: parts[1],
        },
    })
}

/// Organ dose CSV: `patient_id,lungs,...,body` in mGy.
pub fn write_organ_dose_csv(path: &Path, rows: &[(String, OrganDoseVector)]) -> Result<()> {
    let mut w = open_writer(path)?;
    writeln!(w, "{}", OrganDoseVector::csv_header()).map_err(|e| Error::io(path, e))?;
    for (id, v) in rows {
        writeln!(w, "{}", v.csv_row(id)).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(path, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_synthetic_phantom, CohortSpec};
    use crate::scout::{render_scout, ScoutLayout, ScoutView};
    use tempfile::tempdir;

    #[test]
    fn phantom_round_trip_is_bit_exact() {
        let spec = CohortSpec {
            count: 1,
            size_range_cm: (22.0, 26.0),
            shape_jitter: 1.0,
            seed: 1,
        };
        let (p, masks) = generate_synthetic_phantom(&spec, 0).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.vox");
        write_phantom(&path, &p).unwrap();
        let q = read_phantom(&path).unwrap();
        assert_eq!(p, q);

        let mpath = dir.path().join("lungs.mask");
        write_mask(&mpath, &masks.organs[0], p.spacing, "lungs").unwrap();
        let (m, organ) = read_mask(&mpath).unwrap();
        assert_eq!(organ, "lungs");
        assert_eq!(m, masks.organs[0]);
    }

    #[test]
    fn dose_round_trip_preserves_units_and_histories() {
        use crate::grid::{Dims, Spacing};
        let mut d = DoseMap::zeros(Dims::new(3, 2, 2), Spacing::isotropic(4.0), DoseUnits::MilliGray);
        d.histories = 12345;
        for (i, v) in d.dose.iter_mut().enumerate() {
            *v = i as f64 * 0.25;
        }
        d.sq_tally = d.dose.iter().map(|v| v * v).collect();
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.dose");
        write_dose(&path, &d).unwrap();
        let r = read_dose(&path).unwrap();
        assert_eq!(d, r);
    }

    #[test]
    fn scout_round_trip_keeps_layout() {
        let p = crate::phantom::Phantom::uniform(
            crate::grid::Dims::new(10, 10, 10),
            crate::grid::Spacing::isotropic(4.0),
            1.0,
        )
        .unwrap();
        let layout = ScoutLayout::standard_for(&p).unwrap();
        let img = render_scout(&p, ScoutView::Lateral, &layout).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.img");
        write_scout(&path, &img).unwrap();
        let r = read_scout(&path).unwrap();
        assert_eq!(r.view, ScoutView::Lateral);
        assert_eq!(r.layout, layout);
        for (a, b) in img.values.iter().zip(&r.values) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_wrong_kind() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.vox");
        let p = crate::phantom::Phantom::uniform(
            crate::grid::Dims::new(2, 2, 2),
            crate::grid::Spacing::isotropic(4.0),
            1.0,
        )
        .unwrap();
        write_phantom(&path, &p).unwrap();
        assert!(read_dose(&path).is_err());
    }
}
