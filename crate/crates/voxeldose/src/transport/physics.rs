//! Photon interaction physics and Woodcock (delta) tracking.

use rand::Rng;

use crate::error::{Error, Result};
use crate::phantom::{Phantom, NUM_MATERIALS};
use crate::transport::xs::{klein_nishina_angular, CrossSectionTable, ELECTRON_REST_KEV};

/// Fine uniform energy grid used by the transport inner loop. Nodes are
/// computed from the cross-section table once per run; between nodes the
/// coefficients are interpolated linearly. Integer-keV spectrum energies land
/// exactly on nodes.
#[derive(Debug, Clone)]
pub struct FastMu {
    e_min: f64,
    step: f64,
    n: usize,
    // [material][node], mass coefficients in cm^2/g
    pe: Vec<Vec<f64>>,
    compton: Vec<Vec<f64>>,
    rayleigh: Vec<Vec<f64>>,
    total: Vec<Vec<f64>>,
    // [node] majorant linear attenuation in 1/cm
    majorant: Vec<f64>,
    include_rayleigh: bool,
}

/// Interpolated coefficients at one photon energy.
#[derive(Debug, Clone, Copy)]
pub struct EnergyContext {
    pub energy_kev: f64,
    /// Total mass attenuation per material, cm^2/g.
    pub total_per_g: [f64; NUM_MATERIALS],
    /// Majorant linear attenuation over the phantom, 1/cm.
    pub majorant_per_cm: f64,
    cell: usize,
    frac: f64,
}

impl FastMu {
    pub fn new(
        table: &CrossSectionTable,
        rho_max: &[f64; NUM_MATERIALS],
        include_rayleigh: bool,
    ) -> Self {
        let e_min = 5.0f64;
        let e_max = 165.0f64;
        let step = 0.25f64;
        let n = ((e_max - e_min) / step).round() as usize + 1;
        let mut pe: Vec<Vec<f64>> = (0..NUM_MATERIALS).map(|_| Vec::with_capacity(n)).collect();
        let mut compton: Vec<Vec<f64>> =
            (0..NUM_MATERIALS).map(|_| Vec::with_capacity(n)).collect();
        let mut rayleigh: Vec<Vec<f64>> =
            (0..NUM_MATERIALS).map(|_| Vec::with_capacity(n)).collect();
        let mut total: Vec<Vec<f64>> =
            (0..NUM_MATERIALS).map(|_| Vec::with_capacity(n)).collect();
        let mut majorant = Vec::with_capacity(n);
        for i in 0..n {
            let e = e_min + i as f64 * step;
            let mut node_majorant = 0.0f64;
            for m in 0..NUM_MATERIALS {
                let (ma, _) = table.mass_atten(m as u8, e);
                let ray = if include_rayleigh { ma.rayleigh } else { 0.0 };
                let tot = ma.pe + ma.compton + ray;
                pe[m].push(ma.pe);
                compton[m].push(ma.compton);
                rayleigh[m].push(ray);
                total[m].push(tot);
                node_majorant = node_majorant.max(tot * rho_max[m]);
            }
            majorant.push(node_majorant * (1.0 + 1e-12));
        }
        FastMu {
            e_min,
            step,
            n,
            pe,
            compton,
            rayleigh,
            total,
            majorant,
            include_rayleigh,
        }
    }

    pub fn include_rayleigh(&self) -> bool {
        self.include_rayleigh
    }

    pub fn context(&self, energy_kev: f64) -> EnergyContext {
        let f = ((energy_kev - self.e_min) / self.step).clamp(0.0, (self.n - 1) as f64);
        let cell = (f as usize).min(self.n - 2);
        let frac = f - cell as f64;
        let mut total_per_g = [0.0; NUM_MATERIALS];
        for (m, slot) in total_per_g.iter_mut().enumerate() {
            let t = &self.total[m];
            *slot = t[cell] + (t[cell + 1] - t[cell]) * frac;
        }
        // node-wise max interpolated linearly bounds every material's
        // interpolated total times its maximum density
        let majorant_per_cm =
            self.majorant[cell] + (self.majorant[cell + 1] - self.majorant[cell]) * frac;
        EnergyContext {
            energy_kev,
            total_per_g,
            majorant_per_cm,
            cell,
            frac,
        }
    }

    /// Channel mass coefficients (pe, compton, rayleigh) for a material at
    /// the context energy.
    pub fn channels(&self, ctx: &EnergyContext, material: u8) -> (f64, f64, f64) {
        let m = material as usize;
        let lerp = |v: &[f64]| v[ctx.cell] + (v[ctx.cell + 1] - v[ctx.cell]) * ctx.frac;
        (
            lerp(&self.pe[m]),
            lerp(&self.compton[m]),
            lerp(&self.rayleigh[m]),
        )
    }
}

/// Result of one Woodcock flight step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WoodcockEvent {
    /// Real interaction accepted at the voxel (linear index).
    Real { voxel: usize },
    /// Virtual interaction (rejected); tracking continues from the new site.
    Virtual { voxel: usize },
    /// The photon left the grid.
    Escape,
}

/// Mutable tracking state of one photon.
#[derive(Debug, Clone, Copy)]
pub struct TrackState {
    pub pos_mm: [f64; 3],
    pub dir: [f64; 3],
}

/// Advance a photon from outside the grid to its entry point. Returns false
/// if the ray misses the grid entirely.
pub fn advance_to_grid(state: &mut TrackState, phantom: &Phantom) -> bool {
    let (ex, ey, ez) = phantom.extent_mm();
    let bounds = [(0.0, ex), (0.0, ey), (0.0, ez)];
    let mut t_enter = 0.0f64;
    let mut t_exit = f64::INFINITY;
    for axis in 0..3 {
        let (lo, hi) = bounds[axis];
        let o = state.pos_mm[axis];
        let d = state.dir[axis];
        if d.abs() < 1e-300 {
            if o < lo || o >= hi {
                return false;
            }
        } else {
            let t0 = (lo - o) / d;
            let t1 = (hi - o) / d;
            let (t0, t1) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
            t_enter = t_enter.max(t0);
            t_exit = t_exit.min(t1);
        }
    }
    if t_exit <= t_enter {
        return false;
    }
    if t_enter > 0.0 {
        let nudge = t_enter + 1e-9;
        for axis in 0..3 {
            state.pos_mm[axis] += state.dir[axis] * nudge;
        }
    }
    in_grid(state, phantom)
}

#[inline]
fn in_grid(state: &TrackState, phantom: &Phantom) -> bool {
    let (ex, ey, ez) = phantom.extent_mm();
    let p = &state.pos_mm;
    p[0] >= 0.0 && p[0] < ex && p[1] >= 0.0 && p[1] < ey && p[2] >= 0.0 && p[2] < ez
}

/// One Woodcock step: sample a free path against the majorant, move, and
/// classify the tentative site as real, virtual, or escaped.
///
/// The caller guarantees `ctx.majorant_per_cm` bounds the local attenuation
/// everywhere (it does when built by [`FastMu`] from the same table); a
/// violation at runtime is reported as a hard invariant error.
#[inline]
pub fn woodcock_step(
    state: &mut TrackState,
    phantom: &Phantom,
    ctx: &EnergyContext,
    rng: &mut impl Rng,
) -> Result<WoodcockEvent> {
    if ctx.majorant_per_cm <= 0.0 {
        return Ok(WoodcockEvent::Escape);
    }
    let u: f64 = rng.gen();
    let step_mm = -(1.0 - u).ln() / ctx.majorant_per_cm * 10.0;
    for axis in 0..3 {
        state.pos_mm[axis] += state.dir[axis] * step_mm;
    }
    if !in_grid(state, phantom) {
        return Ok(WoodcockEvent::Escape);
    }
    let dims = phantom.dims;
    let sp = phantom.spacing;
    let ix = ((state.pos_mm[0] / sp.dx) as usize).min(dims.nx - 1);
    let iy = ((state.pos_mm[1] / sp.dy) as usize).min(dims.ny - 1);
    let iz = ((state.pos_mm[2] / sp.dz) as usize).min(dims.nz - 1);
    let idx = dims.idx(ix, iy, iz);
    let material = phantom.material.as_slice()[idx] as usize;
    let mu_local = ctx.total_per_g[material] * phantom.density.as_slice()[idx];
    let p_real = mu_local / ctx.majorant_per_cm;
    if p_real > 1.0 + 1e-9 {
        return Err(Error::Invariant(format!(
            "woodcock majorant violated: mu_local {mu_local} > majorant {}",
            ctx.majorant_per_cm
        )));
    }
    if rng.gen::<f64>() < p_real {
        Ok(WoodcockEvent::Real { voxel: idx })
    } else {
        Ok(WoodcockEvent::Virtual { voxel: idx })
    }
}

/// Sample a Compton scattering cosine from the Klein-Nishina distribution by
/// rejection and return `(cos_psi, scattered_energy_kev)`. Energy follows
/// E' = E / (1 + (E/511)(1 - cos psi)); the deposit E - E' is exact in f64
/// at CT energies.
pub fn compton_scatter(energy_kev: f64, rng: &mut impl Rng) -> (f64, f64) {
    let cos_psi = loop {
        let c = rng.gen_range(-1.0..=1.0);
        if rng.gen::<f64>() * 2.0 <= klein_nishina_angular(energy_kev, c) {
            break c;
        }
    };
    let e_out = energy_kev / (1.0 + energy_kev / ELECTRON_REST_KEV * (1.0 - cos_psi));
    (cos_psi, e_out)
}

/// Sample a Rayleigh (coherent) scattering cosine from the Thomson angular
/// shape (1 + cos^2)/2 by rejection. No energy change.
pub fn rayleigh_cos(rng: &mut impl Rng) -> f64 {
    loop {
        let c = rng.gen_range(-1.0..=1.0);
        if rng.gen::<f64>() <= 0.5 * (1.0 + c * c) {
            return c;
        }
    }
}

/// Rotate `dir` by the polar angle with cosine `cos_psi` and uniform-random
/// azimuth drawn from `rng`; returns a unit vector.
pub fn rotate_direction(dir: [f64; 3], cos_psi: f64, rng: &mut impl Rng) -> [f64; 3] {
    let phi = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
    let sin_psi = (1.0 - cos_psi * cos_psi).max(0.0).sqrt();
    // orthonormal frame around dir
    let perp = if dir[0].abs() < 0.9 {
        cross([1.0, 0.0, 0.0], dir)
    } else {
        cross([0.0, 1.0, 0.0], dir)
    };
    let perp = normalize(perp);
    let ortho = cross(dir, perp);
    let (c, s) = (phi.cos(), phi.sin());
    normalize([
        cos_psi * dir[0] + sin_psi * (c * perp[0] + s * ortho[0]),
        cos_psi * dir[1] + sin_psi * (c * perp[1] + s * ortho[1]),
        cos_psi * dir[2] + sin_psi * (c * perp[2] + s * ortho[2]),
    ])
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Dims, Spacing};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn water_slab(nx: usize, density: f64) -> Phantom {
        Phantom::uniform(Dims::new(nx, 8, 8), Spacing::isotropic(4.0), density).unwrap()
    }

    #[test]
    fn compton_forward_scatter_keeps_energy() {
        // psi = 0 leaves the energy unchanged by the Compton relation.
        let e = 80.0;
        let e_out = e / (1.0 + e / ELECTRON_REST_KEV * (1.0 - 1.0));
        assert_eq!(e_out, e);
    }

    #[test]
    fn compton_backscatter_matches_closed_form() {
        // 100 keV at 180 degrees: 100 / (1 + 200/511) keV.
        let expected = 100.0f64 / (1.0 + 200.0 / 511.0);
        assert!((expected - 71.8706).abs() < 5e-5);
        let e_out = 100.0 / (1.0 + 100.0 / ELECTRON_REST_KEV * (1.0 - (-1.0f64)));
        assert!((e_out - expected).abs() < 1e-12);
    }

    #[test]
    fn compton_angles_match_klein_nishina_chi2() {
        // chi^2 against numerically integrated Klein-Nishina bins at 60 keV.
        let e = 60.0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let nbins = 40;
        let n = 1_000_000u64;
        let mut hist = vec![0u64; nbins];
        for _ in 0..n {
            let (c, e_out) = compton_scatter(e, &mut rng);
            assert!(e_out <= e && e_out > 0.0);
            let b = (((c + 1.0) / 2.0 * nbins as f64) as usize).min(nbins - 1);
            hist[b] += 1;
        }
        // bin probabilities by Simpson integration of the angular weight
        let simpson = |a: f64, b: f64| -> f64 {
            let m = 64;
            let h = (b - a) / m as f64;
            let mut acc = klein_nishina_angular(e, a) + klein_nishina_angular(e, b);
            for i in 1..m {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * klein_nishina_angular(e, a + i as f64 * h);
            }
            acc * h / 3.0
        };
        let total = simpson(-1.0, 1.0);
        let mut chi2 = 0.0;
        for (i, &c) in hist.iter().enumerate() {
            let a = -1.0 + 2.0 * i as f64 / nbins as f64;
            let b = a + 2.0 / nbins as f64;
            let p = simpson(a, b) / total;
            let expect = p * n as f64;
            chi2 += (c as f64 - expect).powi(2) / expect;
        }
        let crit = crate::stats::chi2_critical(nbins as f64 - 1.0, 0.01);
        assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
    }

    #[test]
    fn homogeneous_phantom_accepts_everything() {
        // mu uniform = majorant: acceptance probability 1, mean free path 1/mu.
        let phantom = water_slab(256, 1.0);
        let table = CrossSectionTable::standard();
        let fast = FastMu::new(&table, &phantom.max_density_per_material(), true);
        let ctx = fast.context(60.0);
        let mu = ctx.total_per_g[1]; // water at rho 1.0
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000u64;
        let mut acc = 0.0;
        let mut virtuals = 0u64;
        for _ in 0..n {
            let mut state = TrackState {
                pos_mm: [0.5, 16.0, 16.0],
                dir: [1.0, 0.0, 0.0],
            };
            let start = state.pos_mm[0];
            match woodcock_step(&mut state, &phantom, &ctx, &mut rng).unwrap() {
                WoodcockEvent::Real { .. } => acc += (state.pos_mm[0] - start) / 10.0,
                WoodcockEvent::Virtual { .. } => virtuals += 1,
                WoodcockEvent::Escape => {} // extremely rare at 102 cm depth
            }
        }
        assert_eq!(virtuals, 0, "uniform phantom must accept at majorant rate");
        let mean_path_cm = acc / n as f64;
        let expect = 1.0 / mu;
        let sigma = expect / (n as f64).sqrt();
        assert!(
            (mean_path_cm - expect).abs() < 3.0 * sigma,
            "mean free path {mean_path_cm} vs {expect}"
        );
    }

    #[test]
    fn vacuum_phantom_always_escapes() {
        let phantom = water_slab(16, 0.0);
        let table = CrossSectionTable::standard();
        let fast = FastMu::new(&table, &phantom.max_density_per_material(), true);
        let ctx = fast.context(60.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let mut state = TrackState {
                pos_mm: [0.5, 16.0, 16.0],
                dir: [1.0, 0.0, 0.0],
            };
            assert_eq!(
                woodcock_step(&mut state, &phantom, &ctx, &mut rng).unwrap(),
                WoodcockEvent::Escape
            );
        }
    }

    #[test]
    fn two_region_first_interaction_depth_matches_analytic_cdf() {
        // Region 1: water at 0.5 g/cc for 20 cm, region 2: water at 1.0 g/cc.
        let mut phantom = water_slab(256, 0.5);
        let dims = phantom.dims;
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 50..dims.nx {
                    *phantom.density.get_mut(x, y, z) = 1.0;
                }
            }
        }
        let table = CrossSectionTable::standard();
        let fast = FastMu::new(&table, &phantom.max_density_per_material(), true);
        let ctx = fast.context(60.0);
        let mu1 = ctx.total_per_g[1] * 0.5;
        let mu2 = ctx.total_per_g[1] * 1.0;
        let boundary_cm = 20.0;

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 200_000;
        let mut depths = Vec::with_capacity(n);
        for _ in 0..n {
            let mut state = TrackState {
                pos_mm: [0.0, 16.0, 16.0],
                dir: [1.0, 0.0, 0.0],
            };
            loop {
                match woodcock_step(&mut state, &phantom, &ctx, &mut rng).unwrap() {
                    WoodcockEvent::Real { .. } => {
                        depths.push(state.pos_mm[0] / 10.0);
                        break;
                    }
                    WoodcockEvent::Virtual { .. } => continue,
                    WoodcockEvent::Escape => break,
                }
            }
        }
        depths.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // conditional CDF given interaction inside the 102.4 cm slab
        let len_cm = 102.4;
        let p_total = 1.0
            - (-(mu1 * boundary_cm) - mu2 * (len_cm - boundary_cm)).exp();
        let cdf = |d: f64| -> f64 {
            let raw = if d <= boundary_cm {
                1.0 - (-mu1 * d).exp()
            } else {
                1.0 - (-(mu1 * boundary_cm) - mu2 * (d - boundary_cm)).exp()
            };
            raw / p_total
        };
        let m = depths.len() as f64;
        let mut d_stat = 0.0f64;
        for (i, &d) in depths.iter().enumerate() {
            let f = cdf(d);
            let e_hi = (i + 1) as f64 / m;
            let e_lo = i as f64 / m;
            d_stat = d_stat.max((f - e_hi).abs()).max((f - e_lo).abs());
        }
        let crit = 1.6276 / m.sqrt(); // KS critical value at alpha = 0.01
        assert!(d_stat < crit, "KS statistic {d_stat} >= {crit}");
    }

    #[test]
    fn acceptance_ratio_tracks_mean_local_mu() {
        // On any phantom the acceptance fraction estimates the mean of
        // mu_local / majorant over tentative sites.
        let mut phantom = water_slab(64, 0.6);
        *phantom.density.get_mut(63, 7, 7) = 1.0; // raises the majorant
        let table = CrossSectionTable::standard();
        let fast = FastMu::new(&table, &phantom.max_density_per_material(), true);
        let ctx = fast.context(60.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut tentative = 0u64;
        let mut accepted = 0u64;
        let mut expected_sum = 0.0;
        for _ in 0..300_000 {
            let mut state = TrackState {
                pos_mm: [0.0, 14.0, 14.0],
                dir: [1.0, 0.0, 0.0],
            };
            loop {
                match woodcock_step(&mut state, &phantom, &ctx, &mut rng).unwrap() {
                    WoodcockEvent::Real { voxel } => {
                        tentative += 1;
                        accepted += 1;
                        let mu = ctx.total_per_g[phantom.material.as_slice()[voxel] as usize]
                            * phantom.density.as_slice()[voxel];
                        expected_sum += mu / ctx.majorant_per_cm;
                        break;
                    }
                    WoodcockEvent::Virtual { voxel } => {
                        tentative += 1;
                        let mu = ctx.total_per_g[phantom.material.as_slice()[voxel] as usize]
                            * phantom.density.as_slice()[voxel];
                        expected_sum += mu / ctx.majorant_per_cm;
                    }
                    WoodcockEvent::Escape => break,
                }
            }
        }
        let p_hat = accepted as f64 / tentative as f64;
        let p_expect = expected_sum / tentative as f64;
        let sigma = (p_expect * (1.0 - p_expect) / tentative as f64).sqrt();
        assert!(
            (p_hat - p_expect).abs() < 3.0 * sigma,
            "acceptance {p_hat} vs mean mu ratio {p_expect}"
        );
    }

    #[test]
    fn rotation_preserves_unit_norm_and_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dir = normalize([0.3, -0.5, 0.8]);
        for _ in 0..100 {
            let cos_psi = rng.gen_range(-1.0..=1.0);
            let d = rotate_direction(dir, cos_psi, &mut rng);
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            assert!((n - 1.0).abs() < 1e-12);
            let dot = d[0] * dir[0] + d[1] * dir[1] + d[2] * dir[2];
            assert!((dot - cos_psi).abs() < 1e-10);
        }
    }
}
