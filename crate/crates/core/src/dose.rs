//! Parallel-beam primary-dose engine.
//!
//! A beam at gantry angle θ is a bundle of parallel rays in the axial plane.
//! The source sits at `(sin θ, cos θ)` from the isocentre, so 0° enters from
//! +y (anterior) and angles increase clockwise when viewed from +z. Each ray
//! deposits `μ(v) · exp(-d(v)) · ℓ(v)` in every voxel it crosses, where `d(v)`
//! is the radiological depth accumulated upstream of the voxel. Contributions
//! are scaled by the area each ray represents so the result does not depend
//! on how finely the field is sampled.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};
use crate::phantom::{GridGeometry, Phantom};
use crate::raw;

#[derive(Debug, Error)]
pub enum DoseError {
    #[error("direction must be a finite unit vector, got {0:?}")]
    NotUnitDirection([f64; 3]),
    #[error("invalid beam: {0}")]
    InvalidBeam(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error("the PTV is empty, the field cannot be sized")]
    EmptyPtv,
    #[error("dose grid is not congruent with the phantom")]
    GeometryMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed dose file: {0}")]
    Malformed(String),
}

pub type Result<T, E = DoseError> = std::result::Result<T, E>;

/// Normalises an angle into `[0, 360)`.
pub fn normalize_angle(deg: f64) -> f64 {
    let a = deg.rem_euclid(360.0);
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

/// Angle rounded to whole degrees, modulo 360. Two beams collide when their
/// keys match.
pub fn degree_key(deg: f64) -> i64 {
    (normalize_angle(deg).round() as i64).rem_euclid(360)
}

/// `(sin, cos)` with exact values at multiples of 90°.
pub fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let a = normalize_angle(deg);
    match a {
        0.0 => (0.0, 1.0),
        90.0 => (1.0, 0.0),
        180.0 => (0.0, -1.0),
        270.0 => (-1.0, 0.0),
        _ => a.to_radians().sin_cos(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamSpec {
    gantry_angle_deg: f64,
    weight: f64,
}

impl BeamSpec {
    pub fn new(gantry_angle_deg: f64, weight: f64) -> Result<Self> {
        if !gantry_angle_deg.is_finite() {
            return Err(DoseError::InvalidBeam(format!("angle {gantry_angle_deg}")));
        }
        if !(weight.is_finite() && weight > 0.0) {
            return Err(DoseError::InvalidBeam(format!("weight {weight}")));
        }
        Ok(Self {
            gantry_angle_deg: normalize_angle(gantry_angle_deg),
            weight,
        })
    }

    pub fn at(gantry_angle_deg: f64) -> Result<Self> {
        Self::new(gantry_angle_deg, 1.0)
    }

    pub fn angle_deg(&self) -> f64 {
        self.gantry_angle_deg
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    beams: Vec<BeamSpec>,
}

impl Plan {
    /// Between 1 and `max_beams` beams, pairwise distinct at 1° resolution.
    pub fn new(beams: Vec<BeamSpec>, max_beams: usize) -> Result<Self> {
        if beams.is_empty() {
            return Err(DoseError::InvalidPlan("a plan needs at least one beam".into()));
        }
        if beams.len() > max_beams {
            return Err(DoseError::InvalidPlan(format!(
                "{} beams exceed the limit of {max_beams}",
                beams.len()
            )));
        }
        let mut keys: Vec<i64> = beams.iter().map(|b| degree_key(b.angle_deg())).collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(DoseError::InvalidPlan(
                "beam angles must differ by at least 1 degree".into(),
            ));
        }
        Ok(Self { beams })
    }

    pub fn from_angles(angles: &[f64], max_beams: usize) -> Result<Self> {
        let beams = angles
            .iter()
            .map(|&a| BeamSpec::at(a))
            .collect::<Result<Vec<_>>>()?;
        Self::new(beams, max_beams)
    }

    pub fn beams(&self) -> &[BeamSpec] {
        &self.beams
    }

    pub fn angles(&self) -> Vec<f64> {
        self.beams.iter().map(|b| b.angle_deg()).collect()
    }

    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    /// Beams ordered by (angle, weight); the summation order for plan dose.
    pub fn sorted_beams(&self) -> Vec<BeamSpec> {
        let mut b = self.beams.clone();
        b.sort_by(|x, y| {
            x.angle_deg()
                .total_cmp(&y.angle_deg())
                .then(x.weight().total_cmp(&y.weight()))
        });
        b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoseGrid {
    pub geometry: GridGeometry,
    pub dose_gy: Vec<f64>,
}

impl DoseGrid {
    pub fn zeros(geometry: GridGeometry) -> Self {
        let n = geometry.voxel_count();
        Self {
            geometry,
            dose_gy: vec![0.0; n],
        }
    }

    pub fn mean_over(&self, mask: &[bool]) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (d, _) in self.dose_gy.iter().zip(mask).filter(|(_, &m)| m) {
            sum += d;
            n += 1;
        }
        (n > 0).then(|| sum / n as f64)
    }

    pub fn max(&self) -> f64 {
        self.dose_gy.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            geometry: self.geometry.clone(),
            dose_gy: self.dose_gy.iter().map(|d| d * factor).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub mu_water_per_mm: f64,
    /// Field extension beyond the projected PTV on every side.
    pub beam_margin_mm: f64,
    /// In-plane Gaussian penumbra; 0 disables the blur.
    pub penumbra_sigma_mm: f64,
    pub ray_spacing_mm: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mu_water_per_mm: 0.005,
            beam_margin_mm: 5.0,
            penumbra_sigma_mm: 3.0,
            ray_spacing_mm: 1.0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self, geometry: &GridGeometry) -> Result<()> {
        let fin = [
            self.mu_water_per_mm,
            self.beam_margin_mm,
            self.penumbra_sigma_mm,
            self.ray_spacing_mm,
        ];
        if fin.iter().any(|v| !v.is_finite()) {
            return Err(DoseError::InvalidConfig("all fields must be finite".into()));
        }
        if self.mu_water_per_mm <= 0.0 || self.ray_spacing_mm <= 0.0 {
            return Err(DoseError::InvalidConfig(
                "mu_water_per_mm and ray_spacing_mm must be positive".into(),
            ));
        }
        if self.beam_margin_mm < 0.0 || self.penumbra_sigma_mm < 0.0 {
            return Err(DoseError::InvalidConfig(
                "beam_margin_mm and penumbra_sigma_mm must be non-negative".into(),
            ));
        }
        if self.ray_spacing_mm > geometry.min_spacing() {
            return Err(DoseError::InvalidConfig(format!(
                "ray spacing {} mm exceeds the smallest voxel spacing {} mm",
                self.ray_spacing_mm,
                geometry.min_spacing()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySegment {
    pub voxel: usize,
    pub length_mm: f64,
}

fn check_unit(direction: [f64; 3]) -> Result<()> {
    let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
        return Err(DoseError::NotUnitDirection(direction));
    }
    Ok(())
}

/// Voxels crossed by the half-line `entry + t·direction`, `t ≥ 0`, in order.
pub fn trace_ray(geometry: &GridGeometry, entry_mm: [f64; 3], direction: [f64; 3]) -> Result<Vec<RaySegment>> {
    trace_segment(geometry, entry_mm, direction, f64::INFINITY)
}

/// Like [`trace_ray`] but stops after `max_length_mm`.
pub fn trace_segment(
    geometry: &GridGeometry,
    start_mm: [f64; 3],
    direction: [f64; 3],
    max_length_mm: f64,
) -> Result<Vec<RaySegment>> {
    check_unit(direction)?;
    let mut out = Vec::new();
    walk(geometry, start_mm, direction, max_length_mm, |voxel, length_mm| {
        out.push(RaySegment { voxel, length_mm })
    });
    Ok(out)
}

/// Incremental voxel traversal (Amanatides–Woo). Calls `visit` once per voxel
/// with a positive intersection length. `direction` must be unit length.
pub(crate) fn walk(
    g: &GridGeometry,
    start: [f64; 3],
    dir: [f64; 3],
    max_t: f64,
    mut visit: impl FnMut(usize, f64),
) {
    let lo = g.lower_corner();
    let hi = g.upper_corner();

    // Slab clipping against the grid box.
    let mut t0 = 0.0f64;
    let mut t1 = max_t;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if start[a] < lo[a] || start[a] >= hi[a] {
                return;
            }
        } else {
            let inv = 1.0 / dir[a];
            let (ta, tb) = ((lo[a] - start[a]) * inv, (hi[a] - start[a]) * inv);
            let (ta, tb) = if ta < tb { (ta, tb) } else { (tb, ta) };
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
    }
    if !(t1 > t0) {
        return;
    }

    // Starting voxel: locate the midpoint of the first (tiny) step inside.
    let mut idx = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    let probe_t = t0 + 1e-9 * (t1 - t0).min(1.0);
    for a in 0..3 {
        let n = g.dims[a] as i64;
        let p = start[a] + probe_t * dir[a];
        let v = ((p - lo[a]) / g.spacing_mm[a]).floor() as i64;
        idx[a] = v.clamp(0, n - 1);
        if dir[a] > 0.0 {
            step[a] = 1;
            let boundary = lo[a] + (idx[a] + 1) as f64 * g.spacing_mm[a];
            t_max[a] = (boundary - start[a]) / dir[a];
            t_delta[a] = g.spacing_mm[a] / dir[a];
        } else if dir[a] < 0.0 {
            step[a] = -1;
            let boundary = lo[a] + idx[a] as f64 * g.spacing_mm[a];
            t_max[a] = (boundary - start[a]) / dir[a];
            t_delta[a] = -g.spacing_mm[a] / dir[a];
        }
    }

    let mut t = t0;
    loop {
        let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        let t_next = t_max[axis].min(t1);
        if t_next > t {
            let voxel = g.index(idx[0] as usize, idx[1] as usize, idx[2] as usize);
            visit(voxel, t_next - t);
            t = t_next;
        }
        if t >= t1 {
            return;
        }
        idx[axis] += step[axis];
        if idx[axis] < 0 || idx[axis] >= g.dims[axis] as i64 {
            return;
        }
        t_max[axis] += t_delta[axis];
    }
}

/// Ray layout of one beam: the lateral offsets and z-slices of the field.
struct Field {
    iso: [f64; 3],
    lateral: [f64; 2],
    source_dir: [f64; 2],
    offsets: Vec<f64>,
    slices: Vec<usize>,
}

fn beam_field(phantom: &Phantom, angle_deg: f64, cfg: &EngineConfig) -> Result<Field> {
    let g = phantom.geometry();
    let ptv = phantom.ptv();
    let iso = phantom
        .centroid_mm(&ptv.mask)
        .ok_or(DoseError::EmptyPtv)?;
    let (s, c) = sin_cos_deg(angle_deg);
    let lateral = [c, -s];

    let mut lat_lo = f64::INFINITY;
    let mut lat_hi = f64::NEG_INFINITY;
    let mut k_lo = usize::MAX;
    let mut k_hi = 0usize;
    for idx in ptv.indices() {
        let [i, j, k] = g.coords(idx);
        let p = g.voxel_center(i, j, k);
        let t = (p[0] - iso[0]) * lateral[0] + (p[1] - iso[1]) * lateral[1];
        lat_lo = lat_lo.min(t);
        lat_hi = lat_hi.max(t);
        k_lo = k_lo.min(k);
        k_hi = k_hi.max(k);
    }
    if k_lo == usize::MAX {
        return Err(DoseError::EmptyPtv);
    }
    let half_voxel = 0.5 * (lateral[0].abs() * g.spacing_mm[0] + lateral[1].abs() * g.spacing_mm[1]);
    lat_lo -= half_voxel + cfg.beam_margin_mm;
    lat_hi += half_voxel + cfg.beam_margin_mm;
    let width = lat_hi - lat_lo;
    let center = 0.5 * (lat_lo + lat_hi);
    let n_rays = ((width / cfg.ray_spacing_mm) - 1e-9).ceil().max(1.0) as usize;
    let offsets = (0..n_rays)
        .map(|r| center + (r as f64 + 0.5 - 0.5 * n_rays as f64) * cfg.ray_spacing_mm)
        .collect();

    let sz = g.spacing_mm[2];
    let z_lo = g.voxel_center(0, 0, k_lo)[2] - 0.5 * sz - cfg.beam_margin_mm;
    let z_hi = g.voxel_center(0, 0, k_hi)[2] + 0.5 * sz + cfg.beam_margin_mm;
    let slices = (0..g.dims[2])
        .filter(|&k| {
            let z = g.voxel_center(0, 0, k)[2];
            z >= z_lo - 1e-9 && z <= z_hi + 1e-9
        })
        .collect();

    Ok(Field {
        iso,
        lateral,
        source_dir: [s, c],
        offsets,
        slices,
    })
}

/// Dose from a single beam. Computed at unit weight and then scaled, so the
/// result is exactly linear in `beam.weight()`.
pub fn compute_beam_dose(phantom: &Phantom, beam: &BeamSpec, cfg: &EngineConfig) -> Result<DoseGrid> {
    let unit = unit_beam_dose(phantom, beam.angle_deg(), cfg, &phantom.attenuation_map(cfg.mu_water_per_mm))?;
    if beam.weight() == 1.0 {
        Ok(unit)
    } else {
        Ok(unit.scaled(beam.weight()))
    }
}

fn unit_beam_dose(phantom: &Phantom, angle_deg: f64, cfg: &EngineConfig, mu: &[f64]) -> Result<DoseGrid> {
    let g = phantom.geometry();
    cfg.validate(g)?;
    let field = beam_field(phantom, angle_deg, cfg)?;
    let mut grid = DoseGrid::zeros(g.clone());

    let lo = g.lower_corner();
    let hi = g.upper_corner();
    let reach = (0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt() + 1.0;
    let dir = [-field.source_dir[0], -field.source_dir[1], 0.0];
    // Area represented by one ray over the voxel volume turns energy into dose.
    let per_ray = cfg.ray_spacing_mm * g.spacing_mm[2] / g.voxel_volume_mm3();

    for &k in &field.slices {
        let z = g.voxel_center(0, 0, k)[2];
        for &off in &field.offsets {
            let start = [
                field.iso[0] + off * field.lateral[0] + reach * field.source_dir[0],
                field.iso[1] + off * field.lateral[1] + reach * field.source_dir[1],
                z,
            ];
            let mut depth = 0.0f64;
            walk(g, start, dir, f64::INFINITY, |v, len| {
                let m = mu[v];
                if m > 0.0 {
                    grid.dose_gy[v] += m * (-depth).exp() * len * per_ray;
                    depth += m * len;
                }
            });
        }
    }

    if cfg.penumbra_sigma_mm > 0.0 {
        blur_in_plane(&mut grid, cfg.penumbra_sigma_mm);
    }
    Ok(grid)
}

fn gaussian_kernel(sigma_vox: f64) -> Vec<f64> {
    let radius = (3.0 * sigma_vox).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-0.5 * (x as f64 / sigma_vox).powi(2)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur along x then y, zero outside the grid.
fn blur_in_plane(grid: &mut DoseGrid, sigma_mm: f64) {
    let g = grid.geometry.clone();
    let [nx, ny, nz] = g.dims;
    let kx = gaussian_kernel(sigma_mm / g.spacing_mm[0]);
    let ky = gaussian_kernel(sigma_mm / g.spacing_mm[1]);
    let rx = (kx.len() / 2) as i64;
    let ry = (ky.len() / 2) as i64;
    let mut tmp = vec![0.0; grid.dose_gy.len()];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let mut acc = 0.0;
                for (t, w) in kx.iter().enumerate() {
                    let ii = i as i64 + t as i64 - rx;
                    if ii >= 0 && ii < nx as i64 {
                        acc += w * grid.dose_gy[g.index(ii as usize, j, k)];
                    }
                }
                tmp[g.index(i, j, k)] = acc;
            }
        }
    }
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let mut acc = 0.0;
                for (t, w) in ky.iter().enumerate() {
                    let jj = j as i64 + t as i64 - ry;
                    if jj >= 0 && jj < ny as i64 {
                        acc += w * tmp[g.index(i, jj as usize, k)];
                    }
                }
                grid.dose_gy[g.index(i, j, k)] = acc;
            }
        }
    }
}

/// Plan dose together with the scale applied to reach the prescription.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanDose {
    pub dose: DoseGrid,
    /// `None` when the PTV received no dose and no rescaling was possible.
    pub scale: Option<f64>,
}

impl PlanDose {
    pub fn is_degenerate(&self) -> bool {
        self.scale.is_none()
    }
}

/// Sum of the per-beam doses (ascending angle), rescaled so the mean PTV dose
/// equals `prescription_gy`.
pub fn compute_plan_dose(
    phantom: &Phantom,
    plan: &Plan,
    cfg: &EngineConfig,
    prescription_gy: f64,
) -> Result<PlanDose> {
    compute_plan_dose_with(phantom, plan, cfg, prescription_gy, Execution::Parallel)
}

pub fn compute_plan_dose_with(
    phantom: &Phantom,
    plan: &Plan,
    cfg: &EngineConfig,
    prescription_gy: f64,
    exec: Execution,
) -> Result<PlanDose> {
    let raw = sum_plan_dose(phantom, plan, cfg, exec)?;
    normalize_to_prescription(phantom, raw, prescription_gy)
}

/// Unnormalised plan dose.
pub fn sum_plan_dose(phantom: &Phantom, plan: &Plan, cfg: &EngineConfig, exec: Execution) -> Result<DoseGrid> {
    let beams = plan.sorted_beams();
    let mu = phantom.attenuation_map(cfg.mu_water_per_mm);
    let grids = par::map_indexed(exec, beams.len(), |b| {
        unit_beam_dose(phantom, beams[b].angle_deg(), cfg, &mu)
    });
    let mut total = DoseGrid::zeros(phantom.geometry().clone());
    for (beam, grid) in beams.iter().zip(grids) {
        accumulate(&mut total, &grid?, beam.weight());
    }
    Ok(total)
}

fn accumulate(total: &mut DoseGrid, grid: &DoseGrid, weight: f64) {
    if weight == 1.0 {
        for (t, d) in total.dose_gy.iter_mut().zip(&grid.dose_gy) {
            *t += d;
        }
    } else {
        for (t, d) in total.dose_gy.iter_mut().zip(&grid.dose_gy) {
            *t += d * weight;
        }
    }
}

pub fn normalize_to_prescription(phantom: &Phantom, raw: DoseGrid, prescription_gy: f64) -> Result<PlanDose> {
    if raw.geometry != *phantom.geometry() {
        return Err(DoseError::GeometryMismatch);
    }
    let mean = raw.mean_over(&phantom.ptv().mask).ok_or(DoseError::EmptyPtv)?;
    if mean > 0.0 && mean.is_finite() {
        let scale = prescription_gy / mean;
        let mut dose = raw;
        dose.dose_gy.iter_mut().for_each(|d| *d *= scale);
        Ok(PlanDose {
            dose,
            scale: Some(scale),
        })
    } else {
        Ok(PlanDose {
            dose: raw,
            scale: None,
        })
    }
}

/// Memoised unit-weight beam doses for one phantom and engine configuration.
/// Lookups are keyed by the exact angle bits, so cached plan doses are
/// bit-identical to [`compute_plan_dose`].
pub struct BeamDoseCache {
    phantom: Arc<Phantom>,
    cfg: EngineConfig,
    mu: Vec<f64>,
    grids: RwLock<HashMap<u64, Arc<DoseGrid>>>,
}

impl BeamDoseCache {
    pub fn new(phantom: Arc<Phantom>, cfg: EngineConfig) -> Result<Self> {
        cfg.validate(phantom.geometry())?;
        let mu = phantom.attenuation_map(cfg.mu_water_per_mm);
        Ok(Self {
            phantom,
            cfg,
            mu,
            grids: RwLock::new(HashMap::new()),
        })
    }

    pub fn phantom(&self) -> &Arc<Phantom> {
        &self.phantom
    }

    pub fn engine(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn unit_dose(&self, angle_deg: f64) -> Result<Arc<DoseGrid>> {
        let angle = normalize_angle(angle_deg);
        let key = angle.to_bits();
        if let Some(g) = self.grids.read().expect("cache lock").get(&key) {
            return Ok(Arc::clone(g));
        }
        let grid = Arc::new(unit_beam_dose(&self.phantom, angle, &self.cfg, &self.mu)?);
        let mut w = self.grids.write().expect("cache lock");
        Ok(Arc::clone(w.entry(key).or_insert(grid)))
    }

    /// Fills the cache for a set of angles.
    pub fn precompute(&self, angles: &[f64], exec: Execution) -> Result<()> {
        let results = par::map_indexed(exec, angles.len(), |i| self.unit_dose(angles[i]).map(|_| ()));
        results.into_iter().collect()
    }

    pub fn sum_plan_dose(&self, plan: &Plan) -> Result<DoseGrid> {
        let mut total = DoseGrid::zeros(self.phantom.geometry().clone());
        for beam in plan.sorted_beams() {
            let grid = self.unit_dose(beam.angle_deg())?;
            accumulate(&mut total, &grid, beam.weight());
        }
        Ok(total)
    }

    pub fn plan_dose(&self, plan: &Plan, prescription_gy: f64) -> Result<PlanDose> {
        normalize_to_prescription(&self.phantom, self.sum_plan_dose(plan)?, prescription_gy)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseManifest {
    pub format_version: u32,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub prescription_gy: f64,
    pub plan_angles_deg: Vec<f64>,
    pub dose_file: String,
}

/// Writes `manifest.json` and `dose.f32` (little-endian float32, x-fastest).
pub fn save_dose(dose: &DoseGrid, plan_angles_deg: &[f64], prescription_gy: f64, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let g = &dose.geometry;
    let manifest = DoseManifest {
        format_version: 1,
        dims: g.dims,
        spacing_mm: g.spacing_mm,
        origin_mm: g.origin_mm,
        prescription_gy,
        plan_angles_deg: plan_angles_deg.to_vec(),
        dose_file: "dose.f32".into(),
    };
    raw::write_f32_le(&dir.join(&manifest.dose_file), dose.dose_gy.iter().map(|&d| d as f32))?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| DoseError::Malformed(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

pub fn load_dose(dir: &Path) -> Result<(DoseGrid, DoseManifest)> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: DoseManifest = serde_json::from_str(&text).map_err(|e| DoseError::Malformed(e.to_string()))?;
    if manifest.format_version != 1 {
        return Err(DoseError::Malformed(format!("format_version {}", manifest.format_version)));
    }
    let geometry = GridGeometry::new(manifest.dims, manifest.spacing_mm, manifest.origin_mm)
        .map_err(|e| DoseError::Malformed(e.to_string()))?;
    let values = raw::read_f32_le(&dir.join(&manifest.dose_file))?
        .map_err(|n| DoseError::Malformed(format!("payload of {n} bytes")))?;
    if values.len() != geometry.voxel_count() {
        return Err(DoseError::Malformed(format!(
            "expected {} values, found {}",
            geometry.voxel_count(),
            values.len()
        )));
    }
    Ok((
        DoseGrid {
            geometry,
            dose_gy: values.into_iter().map(f64::from).collect(),
        },
        manifest,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_prostate_phantom, CtVolume, Structure};

    fn line_grid() -> GridGeometry {
        GridGeometry::new([10, 1, 1], [1.0; 3], [0.5, 0.5, 0.5]).unwrap()
    }

    #[test]
    fn axis_aligned_ray_crosses_each_voxel_once() {
        let g = line_grid();
        let segs = trace_ray(&g, [-5.0, 0.5, 0.5], [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(segs.len(), 10);
        for (n, s) in segs.iter().enumerate() {
            assert_eq!(s.voxel, n);
            assert!((s.length_mm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_ray_matches_chord() {
        let g = GridGeometry::new([8, 8, 1], [1.0; 3], [0.5, 0.5, 0.5]).unwrap();
        let d = std::f64::consts::FRAC_1_SQRT_2;
        let segs = trace_ray(&g, [-1.0, -0.7, 0.5], [d, d, 0.0]).unwrap();
        // Enters the x = 0 face at y = 0.3 and leaves through y = 8 at x = 7.7.
        let total: f64 = segs.iter().map(|s| s.length_mm).sum();
        let chord = (8.0f64 - 0.3) * 2f64.sqrt();
        assert!((total - chord).abs() < 1e-9 * chord, "{total} vs {chord}");
        let mut seen = std::collections::HashSet::new();
        assert!(segs.iter().all(|s| seen.insert(s.voxel)));
    }

    #[test]
    fn missing_ray_is_empty_and_bad_direction_errors() {
        let g = line_grid();
        assert!(trace_ray(&g, [-5.0, 3.0, 0.5], [1.0, 0.0, 0.0]).unwrap().is_empty());
        assert!(trace_ray(&g, [20.0, 0.5, 0.5], [1.0, 0.0, 0.0]).unwrap().is_empty());
        assert!(matches!(
            trace_ray(&g, [0.0; 3], [1.0, 1.0, 0.0]),
            Err(DoseError::NotUnitDirection(_))
        ));
    }

    #[test]
    fn beam_and_plan_invariants() {
        assert_eq!(BeamSpec::at(-90.0).unwrap().angle_deg(), 270.0);
        assert_eq!(BeamSpec::at(720.0).unwrap().angle_deg(), 0.0);
        assert!(BeamSpec::new(0.0, 0.0).is_err());
        assert!(Plan::from_angles(&[], 5).is_err());
        assert!(Plan::from_angles(&[0.0, 0.4], 5).is_err());
        assert!(Plan::from_angles(&[359.8, 0.1], 5).is_err());
        assert!(Plan::from_angles(&[0.0, 60.0, 120.0, 180.0, 240.0, 300.0], 5).is_err());
        assert!(Plan::from_angles(&[0.0, 1.0], 5).is_ok());
    }

    #[test]
    fn weight_scales_dose_exactly() {
        let p = generate_prostate_phantom([24, 24, 16], [5.0; 3], 3).unwrap();
        let cfg = EngineConfig::default();
        let one = compute_beam_dose(&p, &BeamSpec::new(40.0, 1.0).unwrap(), &cfg).unwrap();
        let two = compute_beam_dose(&p, &BeamSpec::new(40.0, 2.0).unwrap(), &cfg).unwrap();
        for (a, b) in one.dose_gy.iter().zip(&two.dose_gy) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn air_gives_zero_dose_and_degenerate_normalisation() {
        let g = GridGeometry::centered([8, 8, 4], [2.0; 3]).unwrap();
        let ct = CtVolume::filled(g.clone(), -1000.0).unwrap();
        let mut mask = vec![false; g.voxel_count()];
        mask[g.index(4, 4, 2)] = true;
        let p = Phantom::new(ct, vec![Structure::ptv("t", mask, 100.0)], "air").unwrap();
        let cfg = EngineConfig::default();
        let d = compute_beam_dose(&p, &BeamSpec::at(0.0).unwrap(), &cfg).unwrap();
        assert!(d.dose_gy.iter().all(|&x| x == 0.0));
        let plan = Plan::from_angles(&[0.0, 90.0], 5).unwrap();
        let pd = compute_plan_dose(&p, &plan, &cfg, 100.0).unwrap();
        assert!(pd.is_degenerate());
    }

    #[test]
    fn plan_dose_is_normalised_and_order_free() {
        let p = generate_prostate_phantom([24, 24, 16], [5.0; 3], 1).unwrap();
        let cfg = EngineConfig::default();
        let a = Plan::from_angles(&[10.0, 200.0, 95.0], 5).unwrap();
        let b = Plan::from_angles(&[95.0, 10.0, 200.0], 5).unwrap();
        let da = compute_plan_dose(&p, &a, &cfg, 100.0).unwrap();
        let db = compute_plan_dose_with(&p, &b, &cfg, 100.0, Execution::Sequential).unwrap();
        assert_eq!(da, db);
        let mean = da.dose.mean_over(&p.ptv().mask).unwrap();
        assert!((mean - 100.0).abs() <= 1e-9 * 100.0);

        let single = Plan::from_angles(&[33.0], 5).unwrap();
        let pd = compute_plan_dose(&p, &single, &cfg, 100.0).unwrap();
        let beam = compute_beam_dose(&p, &BeamSpec::at(33.0).unwrap(), &cfg).unwrap();
        let s = pd.scale.unwrap();
        for (x, y) in pd.dose.dose_gy.iter().zip(&beam.dose_gy) {
            assert_eq!(*x, y * s);
        }
    }

    #[test]
    fn cache_matches_direct_computation() {
        let p = Arc::new(generate_prostate_phantom([24, 24, 16], [5.0; 3], 2).unwrap());
        let cfg = EngineConfig::default();
        let cache = BeamDoseCache::new(Arc::clone(&p), cfg.clone()).unwrap();
        let plan = Plan::new(
            vec![BeamSpec::new(300.0, 1.5).unwrap(), BeamSpec::at(20.0).unwrap()],
            5,
        )
        .unwrap();
        let direct = compute_plan_dose(&p, &plan, &cfg, 100.0).unwrap();
        assert_eq!(cache.plan_dose(&plan, 100.0).unwrap(), direct);
    }

    #[test]
    fn config_validation() {
        let g = GridGeometry::centered([4, 4, 4], [2.0; 3]).unwrap();
        let mut cfg = EngineConfig::default();
        assert!(cfg.validate(&g).is_ok());
        cfg.ray_spacing_mm = 2.5;
        assert!(cfg.validate(&g).is_err());
        cfg.ray_spacing_mm = 1.0;
        cfg.mu_water_per_mm = 0.0;
        assert!(cfg.validate(&g).is_err());
    }

    #[test]
    fn dose_export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridGeometry::centered([3, 2, 1], [1.0; 3]).unwrap();
        let dose = DoseGrid {
            geometry: g,
            dose_gy: vec![0.0, 1.5, 2.25, 100.0, 3.0, 0.5],
        };
        save_dose(&dose, &[0.0, 90.0], 100.0, dir.path()).unwrap();
        let (back, m) = load_dose(dir.path()).unwrap();
        assert_eq!(back, dose);
        assert_eq!(m.plan_angles_deg, vec![0.0, 90.0]);
    }
}
