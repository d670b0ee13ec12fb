//! Monte Carlo photon transport through voxel phantoms with Woodcock tracking
//! and energy-deposition tallying.
//!
//! Histories are split into fixed-size chunks; chunks run in parallel but the
//! per-history RNG stream is keyed by the global history index and partial
//! tallies merge in chunk order, so results are bit-identical for any worker
//! count.

pub mod physics;
pub mod xs;

pub use xs::CrossSectionTable;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Dims, Spacing};
use crate::phantom::Phantom;
use crate::source::{helical_poses, EmissionSampler, Photon, ScannerGeometry, SourceModel};
use physics::{
    advance_to_grid, compton_scatter, rayleigh_cos, rotate_direction, woodcock_step, FastMu,
    TrackState, WoodcockEvent,
};

/// Calibration constant mapping raw dose to mGy for a 100 mAs acquisition,
/// from a CTDI-phantom cross-calibration of the simulated scanner output.
pub const CALIBRATION_MGY_PER_RAW_100MAS: f64 = 1.8143;

/// Units of a dose map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DoseUnits {
    /// Raw Monte Carlo output: eV per gram per emitted photon.
    EvPerGramPerPhoton,
    /// Calibrated absorbed dose in mGy.
    MilliGray,
}

impl DoseUnits {
    pub fn tag(&self) -> &'static str {
        match self {
            DoseUnits::EvPerGramPerPhoton => "eV/g/photon",
            DoseUnits::MilliGray => "mGy",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "eV/g/photon" => Ok(DoseUnits::EvPerGramPerPhoton),
            "mGy" => Ok(DoseUnits::MilliGray),
            other => Err(Error::UnitMismatch(format!("unknown dose units '{other}'"))),
        }
    }
}

/// Absorbed-dose grid co-registered with a phantom, with per-voxel
/// squared-sum tallies for variance estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseMap {
    pub dims: Dims,
    pub spacing: Spacing,
    pub units: DoseUnits,
    pub histories: u64,
    /// Mean per-history dose contribution times histories; i.e. the dose.
    pub dose: Vec<f64>,
    /// Sum over histories of squared per-history dose contributions.
    pub sq_tally: Vec<f64>,
}

impl DoseMap {
    pub fn zeros(dims: Dims, spacing: Spacing, units: DoseUnits) -> Self {
        DoseMap {
            dims,
            spacing,
            units,
            histories: 0,
            dose: vec![0.0; dims.len()],
            sq_tally: vec![0.0; dims.len()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dose.len() != self.dims.len() || self.sq_tally.len() != self.dims.len() {
            return Err(Error::DimMismatch("dose grids disagree with dims".into()));
        }
        if self.dose.iter().any(|&d| !(d >= 0.0)) {
            return Err(Error::Invariant("negative or NaN dose".into()));
        }
        Ok(())
    }

    /// Standard error of the mean dose in voxel `i`.
    pub fn sem(&self, i: usize) -> f64 {
        if self.histories < 2 {
            return 0.0;
        }
        let n = self.histories as f64;
        let mean = self.dose[i];
        let var = (self.sq_tally[i] / n - mean * mean).max(0.0) / n;
        var.sqrt()
    }

    pub fn same_grid(&self, other: &DoseMap) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }
}

/// Transport switches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportOptions {
    /// Include coherent (Rayleigh) scattering.
    pub rayleigh: bool,
    /// Treat every real interaction as full local absorption. Turns the run
    /// into a pure attenuation measurement (no scattered field).
    pub kill_on_scatter: bool,
    /// Photons below this energy deposit locally and stop.
    pub cutoff_kev: f64,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions {
            rayleigh: true,
            kill_on_scatter: false,
            cutoff_kev: 5.0,
        }
    }
}

/// Bookkeeping for one simulation run. Energies in keV.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunStats {
    pub histories: u64,
    pub emitted_kev: f64,
    pub deposited_kev: f64,
    pub escaped_kev: f64,
    /// Deposits redirected away from zero-mass voxels.
    pub redirected_deposits: u64,
    /// Cross-section lookups clamped to the table edge.
    pub energy_clamps: u64,
}

impl RunStats {
    /// |emitted - deposited - escaped| / emitted.
    pub fn conservation_error(&self) -> f64 {
        if self.emitted_kev == 0.0 {
            return 0.0;
        }
        (self.emitted_kev - self.deposited_kev - self.escaped_kev).abs() / self.emitted_kev
    }
}

/// Histories per deterministic work chunk.
const CHUNK_HISTORIES: u64 = 32_768;

struct ChunkResult {
    sum_kev: Vec<f64>,
    sq_kev2: Vec<f64>,
    stats: RunStats,
}

/// Simulate a helical scan over the phantom. The scan range defaults to the
/// full phantom z extent; the rotation axis is the vertical line through the
/// phantom center. Returns the raw dose map in eV/g/photon and run
/// statistics. Deterministic in `seed` regardless of thread count.
pub fn simulate_scan(
    phantom: &Phantom,
    geometry: &ScannerGeometry,
    source: &SourceModel,
    scan_range_mm: Option<(f64, f64)>,
    n_histories: u64,
    seed: u64,
    options: &TransportOptions,
) -> Result<(DoseMap, RunStats)> {
    if n_histories == 0 {
        return Err(Error::Config("n_histories must be >= 1".into()));
    }
    phantom.validate()?;
    let sampler = EmissionSampler::new(geometry, &source.spectrum, &source.bowtie, &source.heel)?;
    let (ex, ey, ez) = phantom.extent_mm();
    let (z0, z1) = scan_range_mm.unwrap_or((0.0, ez));
    if !(z1 > z0) {
        return Err(Error::Config("scan range must have positive extent".into()));
    }
    let poses = helical_poses(geometry, [ex / 2.0, ey / 2.0], z0, z1 - z0)?;
    let n_poses = poses.len() as u64;
    // histories split evenly across poses by index
    let emit = move |h: u64, rng: &mut ChaCha8Rng| {
        sampler.sample_emission(&poses[(h % n_poses) as usize], rng)
    };
    run_histories(phantom, emit, n_histories, seed, options)
}

/// Mono-directional beam of identical photons; the workhorse of the
/// attenuation oracles.
pub fn run_pencil_beam(
    phantom: &Phantom,
    origin_mm: [f64; 3],
    direction: [f64; 3],
    energy_kev: f64,
    n_histories: u64,
    seed: u64,
    options: &TransportOptions,
) -> Result<(DoseMap, RunStats)> {
    if n_histories == 0 {
        return Err(Error::Config("n_histories must be >= 1".into()));
    }
    let norm = (direction[0].powi(2) + direction[1].powi(2) + direction[2].powi(2)).sqrt();
    let dir = [direction[0] / norm, direction[1] / norm, direction[2] / norm];
    let emit = move |_h: u64, _rng: &mut ChaCha8Rng| Photon {
        origin_mm,
        direction: dir,
        energy_kev,
        weight: 1.0,
    };
    run_histories(phantom, emit, n_histories, seed, options)
}

fn run_histories(
    phantom: &Phantom,
    emit: impl Fn(u64, &mut ChaCha8Rng) -> Photon + Sync,
    n_histories: u64,
    seed: u64,
    options: &TransportOptions,
) -> Result<(DoseMap, RunStats)> {
    let table = CrossSectionTable::standard();
    let fast = FastMu::new(&table, &phantom.max_density_per_material(), options.rayleigh);
    let mass_g = phantom.voxel_mass_g();
    let n_vox = phantom.dims.len();

    let n_chunks = n_histories.div_ceil(CHUNK_HISTORIES);
    let group = (rayon::current_num_threads() as u64 * 4).clamp(4, 32);

    let mut sum_kev = vec![0.0f64; n_vox];
    let mut sq_kev2 = vec![0.0f64; n_vox];
    let mut stats = RunStats::default();
    let mut first_error: Option<Error> = None;

    let mut chunk_start = 0u64;
    while chunk_start < n_chunks {
        let chunk_end = (chunk_start + group).min(n_chunks);
        let results: Vec<Result<ChunkResult>> = (chunk_start..chunk_end)
            .into_par_iter()
            .map(|c| {
                let h0 = c * CHUNK_HISTORIES;
                let h1 = ((c + 1) * CHUNK_HISTORIES).min(n_histories);
                run_chunk(phantom, &fast, &mass_g, &emit, h0, h1, seed, options)
            })
            .collect();
        for r in results {
            match r {
                Ok(chunk) => {
                    for (a, b) in sum_kev.iter_mut().zip(&chunk.sum_kev) {
                        *a += b;
                    }
                    for (a, b) in sq_kev2.iter_mut().zip(&chunk.sq_kev2) {
                        *a += b;
                    }
                    stats.histories += chunk.stats.histories;
                    stats.emitted_kev += chunk.stats.emitted_kev;
                    stats.deposited_kev += chunk.stats.deposited_kev;
                    stats.escaped_kev += chunk.stats.escaped_kev;
                    stats.redirected_deposits += chunk.stats.redirected_deposits;
                    stats.energy_clamps += chunk.stats.energy_clamps;
                }
                Err(e) => {
                    if first_error.is_none() {
                        first_error = Some(e);
                    }
                }
            }
        }
        if let Some(e) = first_error.take() {
            return Err(e);
        }
        chunk_start = chunk_end;
    }

    // raw dose: keV -> eV, per gram, per emitted photon
    let n = n_histories as f64;
    let mut dose = vec![0.0f64; n_vox];
    let mut sq = vec![0.0f64; n_vox];
    for i in 0..n_vox {
        if mass_g[i] > 0.0 {
            let scale = 1000.0 / mass_g[i];
            dose[i] = sum_kev[i] * scale / n;
            sq[i] = sq_kev2[i] * scale * scale;
        }
    }
    let map = DoseMap {
        dims: phantom.dims,
        spacing: phantom.spacing,
        units: DoseUnits::EvPerGramPerPhoton,
        histories: n_histories,
        dose,
        sq_tally: sq,
    };
    map.validate()?;
    Ok((map, stats))
}

#[allow(clippy::too_many_arguments)]
fn run_chunk(
    phantom: &Phantom,
    fast: &FastMu,
    mass_g: &[f64],
    emit: &(impl Fn(u64, &mut ChaCha8Rng) -> Photon + Sync),
    h0: u64,
    h1: u64,
    seed: u64,
    options: &TransportOptions,
) -> Result<ChunkResult> {
    let n_vox = phantom.dims.len();
    let mut sum_kev = vec![0.0f64; n_vox];
    let mut sq_kev2 = vec![0.0f64; n_vox];
    let mut stats = RunStats::default();
    let base = ChaCha8Rng::seed_from_u64(seed);
    let mut deposits: Vec<(u32, f64)> = Vec::with_capacity(32);

    for h in h0..h1 {
        let mut rng = base.clone();
        rng.set_stream(h);
        let photon = emit(h, &mut rng);
        stats.histories += 1;
        stats.emitted_kev += photon.energy_kev;
        deposits.clear();
        let escaped = transport_photon(
            photon,
            phantom,
            fast,
            options,
            &mut rng,
            &mut deposits,
            &mut stats.energy_clamps,
        )?;
        stats.escaped_kev += escaped;

        // combine per-history deposits per voxel, redirecting any that land
        // in zero-mass voxels to the nearest voxel with mass
        for d in deposits.iter_mut() {
            if mass_g[d.0 as usize] == 0.0 {
                d.0 = nearest_massive(phantom, mass_g, d.0 as usize) as u32;
                stats.redirected_deposits += 1;
            }
        }
        deposits.sort_unstable_by_key(|d| d.0);
        let mut i = 0;
        while i < deposits.len() {
            let idx = deposits[i].0 as usize;
            let mut kev = deposits[i].1;
            let mut j = i + 1;
            while j < deposits.len() && deposits[j].0 as usize == idx {
                kev += deposits[j].1;
                j += 1;
            }
            sum_kev[idx] += kev;
            sq_kev2[idx] += kev * kev;
            stats.deposited_kev += kev;
            i = j;
        }
    }
    Ok(ChunkResult {
        sum_kev,
        sq_kev2,
        stats,
    })
}

/// Track one photon to completion, pushing `(voxel, keV)` deposits.
/// Returns the energy that escaped the grid; counts cross-section lookups
/// below the tabulated range into `clamps`.
#[allow(clippy::too_many_arguments)]
fn transport_photon(
    photon: Photon,
    phantom: &Phantom,
    fast: &FastMu,
    options: &TransportOptions,
    rng: &mut ChaCha8Rng,
    deposits: &mut Vec<(u32, f64)>,
    clamps: &mut u64,
) -> Result<f64> {
    let mut state = TrackState {
        pos_mm: photon.origin_mm,
        dir: photon.direction,
    };
    let mut energy = photon.energy_kev;
    if !advance_to_grid(&mut state, phantom) {
        return Ok(energy);
    }
    let mut ctx = fast.context(energy);
    loop {
        match woodcock_step(&mut state, phantom, &ctx, rng)? {
            WoodcockEvent::Escape => return Ok(energy),
            WoodcockEvent::Virtual { .. } => continue,
            WoodcockEvent::Real { voxel } => {
                if options.kill_on_scatter {
                    deposits.push((voxel as u32, energy));
                    return Ok(0.0);
                }
                let material = phantom.material.as_slice()[voxel];
                let (pe, compton, rayleigh) = fast.channels(&ctx, material);
                let total = pe + compton + rayleigh;
                let u = rng.gen_range(0.0..total);
                if u < pe {
                    // photoelectric: full local absorption
                    deposits.push((voxel as u32, energy));
                    return Ok(0.0);
                } else if u < pe + compton {
                    let (cos_psi, e_out) = compton_scatter(energy, rng);
                    let deposit = energy - e_out;
                    if deposit > 0.0 {
                        deposits.push((voxel as u32, deposit));
                    }
                    energy = e_out;
                    state.dir = rotate_direction(state.dir, cos_psi, rng);
                    if energy < options.cutoff_kev {
                        deposits.push((voxel as u32, energy));
                        return Ok(0.0);
                    }
                    if energy < xs::XS_E_MIN_KEV {
                        *clamps += 1;
                    }
                    ctx = fast.context(energy);
                } else {
                    // coherent scatter: direction change only
                    let cos_psi = rayleigh_cos(rng);
                    state.dir = rotate_direction(state.dir, cos_psi, rng);
                }
            }
        }
    }
}

/// Nearest voxel with nonzero mass in Chebyshev distance, with a fixed
/// deterministic scan order for ties.
fn nearest_massive(phantom: &Phantom, mass_g: &[f64], idx: usize) -> usize {
    let dims = phantom.dims;
    let (x, y, z) = dims.coords(idx);
    let max_r = dims.nx.max(dims.ny).max(dims.nz);
    for r in 1..=max_r {
        let ri = r as isize;
        for dz in -ri..=ri {
            let zz = z as isize + dz;
            if zz < 0 || zz >= dims.nz as isize {
                continue;
            }
            for dy in -ri..=ri {
                let yy = y as isize + dy;
                if yy < 0 || yy >= dims.ny as isize {
                    continue;
                }
                for dx in -ri..=ri {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != ri {
                        continue;
                    }
                    let xx = x as isize + dx;
                    if xx < 0 || xx >= dims.nx as isize {
                        continue;
                    }
                    let cand = dims.idx(xx as usize, yy as usize, zz as usize);
                    if mass_g[cand] > 0.0 {
                        return cand;
                    }
                }
            }
        }
    }
    idx
}

/// Convert a raw dose map to mGy: every voxel scaled by
/// `factor * mas / 100`. Errors when the map is already calibrated.
pub fn calibrate_dose(d: &DoseMap, factor_mgy_per_raw_100mas: f64, mas: f64) -> Result<DoseMap> {
    if d.units != DoseUnits::EvPerGramPerPhoton {
        return Err(Error::UnitMismatch(
            "dose map is already calibrated to mGy".into(),
        ));
    }
    if mas <= 0.0 {
        return Err(Error::Config("tube current must be positive".into()));
    }
    let c = factor_mgy_per_raw_100mas * (mas / 100.0);
    Ok(DoseMap {
        dims: d.dims,
        spacing: d.spacing,
        units: DoseUnits::MilliGray,
        histories: d.histories,
        dose: d.dose.iter().map(|v| v * c).collect(),
        sq_tally: d.sq_tally.iter().map(|v| v * c * c).collect(),
    })
}
