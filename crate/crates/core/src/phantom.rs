//! Voxel grids, anatomical structures and the synthetic prostate case.
//!
//! Grids are stored x-fastest: voxel `(i, j, k)` lives at
//! `i + nx * (j + ny * k)`. World coordinates are millimetres; `origin_mm`
//! is the centre of voxel `(0, 0, 0)`. The axial plane is x–y, with +y
//! anterior and +x towards the patient's left.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raw;

/// HU assigned outside the body.
pub const HU_AIR: f32 = -1000.0;
/// HU of soft tissue.
pub const HU_WATER: f32 = 0.0;
/// HU of the femoral heads.
pub const HU_BONE: f32 = 700.0;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid grid geometry: {0}")]
    InvalidGeometry(String),
    #[error("structure `{name}`: {reason}")]
    InvalidStructure { name: String, reason: String },
    #[error("structure `{0}` does not fit inside the grid")]
    StructureDoesNotFit(String),
    #[error("non-finite HU value {0}")]
    NonFiniteHu(f64),
    #[error("phantom validation failed: {0}")]
    Validation(String),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("size mismatch in `{file}`: expected {expected} values, found {found}")]
    SizeMismatch {
        file: String,
        expected: usize,
        found: usize,
    },
    #[error("unsupported phantom format version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PhantomError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
}

impl GridGeometry {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(PhantomError::InvalidGeometry(format!(
                "dims must be >= 1, got {dims:?}"
            )));
        }
        if dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .is_none()
        {
            return Err(PhantomError::InvalidGeometry(format!(
                "voxel count of {dims:?} overflows"
            )));
        }
        if spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(PhantomError::InvalidGeometry(format!(
                "spacing must be positive and finite, got {spacing_mm:?}"
            )));
        }
        if origin_mm.iter().any(|o| !o.is_finite()) {
            return Err(PhantomError::InvalidGeometry(format!(
                "origin must be finite, got {origin_mm:?}"
            )));
        }
        Ok(Self {
            dims,
            spacing_mm,
            origin_mm,
        })
    }

    /// Geometry whose centre sits at the world origin.
    pub fn centered(dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<Self> {
        let origin = [
            -0.5 * (dims[0].saturating_sub(1)) as f64 * spacing_mm[0],
            -0.5 * (dims[1].saturating_sub(1)) as f64 * spacing_mm[1],
            -0.5 * (dims[2].saturating_sub(1)) as f64 * spacing_mm[2],
        ];
        Self::new(dims, spacing_mm, origin)
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin_mm[0] + i as f64 * self.spacing_mm[0],
            self.origin_mm[1] + j as f64 * self.spacing_mm[1],
            self.origin_mm[2] + k as f64 * self.spacing_mm[2],
        ]
    }

    /// Outer corner of voxel `(0, 0, 0)`.
    pub fn lower_corner(&self) -> [f64; 3] {
        [
            self.origin_mm[0] - 0.5 * self.spacing_mm[0],
            self.origin_mm[1] - 0.5 * self.spacing_mm[1],
            self.origin_mm[2] - 0.5 * self.spacing_mm[2],
        ]
    }

    pub fn upper_corner(&self) -> [f64; 3] {
        let lo = self.lower_corner();
        [
            lo[0] + self.dims[0] as f64 * self.spacing_mm[0],
            lo[1] + self.dims[1] as f64 * self.spacing_mm[1],
            lo[2] + self.dims[2] as f64 * self.spacing_mm[2],
        ]
    }

    pub fn center(&self) -> [f64; 3] {
        let lo = self.lower_corner();
        let hi = self.upper_corner();
        [
            0.5 * (lo[0] + hi[0]),
            0.5 * (lo[1] + hi[1]),
            0.5 * (lo[2] + hi[2]),
        ]
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing_mm[0] * self.spacing_mm[1] * self.spacing_mm[2]
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing_mm.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    pub geometry: GridGeometry,
    hu: Vec<f32>,
}

impl CtVolume {
    /// Validates the payload length and clamps HU below air to -1000.
    pub fn new(geometry: GridGeometry, mut hu: Vec<f32>) -> Result<Self> {
        if hu.len() != geometry.voxel_count() {
            return Err(PhantomError::SizeMismatch {
                file: "ct".into(),
                expected: geometry.voxel_count(),
                found: hu.len(),
            });
        }
        for v in hu.iter_mut() {
            if !v.is_finite() {
                return Err(PhantomError::NonFiniteHu(f64::from(*v)));
            }
            if *v < HU_AIR {
                *v = HU_AIR;
            }
        }
        Ok(Self { geometry, hu })
    }

    pub fn filled(geometry: GridGeometry, hu: f32) -> Result<Self> {
        let n = geometry.voxel_count();
        Self::new(geometry, vec![hu; n])
    }

    pub fn values(&self) -> &[f32] {
        &self.hu
    }

    pub fn set(&mut self, index: usize, hu: f32) -> Result<()> {
        if !hu.is_finite() {
            return Err(PhantomError::NonFiniteHu(f64::from(hu)));
        }
        self.hu[index] = hu.max(HU_AIR);
        Ok(())
    }
}

/// Linear attenuation coefficient (mm⁻¹) for a HU value:
/// `mu_water * max(0, 1 + hu / 1000)`.
pub fn hu_to_attenuation(hu: f64, mu_water_per_mm: f64) -> Result<f64> {
    if !hu.is_finite() {
        return Err(PhantomError::NonFiniteHu(hu));
    }
    Ok(attenuation_unchecked(hu, mu_water_per_mm))
}

#[inline]
pub(crate) fn attenuation_unchecked(hu: f64, mu_water_per_mm: f64) -> f64 {
    mu_water_per_mm * (1.0 + hu / 1000.0).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StructureKind {
    Ptv,
    Oar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Structure {
    pub name: String,
    pub kind: StructureKind,
    pub mask: Vec<bool>,
    /// Maximum tolerated dose for an OAR.
    pub dose_limit_gy: Option<f64>,
    /// Target dose for the PTV.
    pub target_dose_gy: Option<f64>,
}

impl Structure {
    pub fn ptv(name: impl Into<String>, mask: Vec<bool>, target_dose_gy: f64) -> Self {
        Self {
            name: name.into(),
            kind: StructureKind::Ptv,
            mask,
            dose_limit_gy: None,
            target_dose_gy: Some(target_dose_gy),
        }
    }

    pub fn oar(name: impl Into<String>, mask: Vec<bool>, dose_limit_gy: f64) -> Self {
        Self {
            name: name.into(),
            kind: StructureKind::Oar,
            mask,
            dose_limit_gy: Some(dose_limit_gy),
            target_dose_gy: None,
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }

    fn validate(&self, voxel_count: usize) -> Result<()> {
        let invalid = |reason: &str| PhantomError::InvalidStructure {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.name.is_empty() {
            return Err(invalid("empty name"));
        }
        if self.mask.len() != voxel_count {
            return Err(invalid("mask is not congruent with the CT grid"));
        }
        if !self.mask.iter().any(|&m| m) {
            return Err(invalid("mask is empty"));
        }
        let positive = |v: Option<f64>| v.is_some_and(|x| x.is_finite() && x > 0.0);
        match self.kind {
            StructureKind::Ptv => {
                if !positive(self.target_dose_gy) {
                    return Err(invalid("PTV needs a positive target dose"));
                }
                if self.dose_limit_gy.is_some() {
                    return Err(invalid("PTV must not carry a dose limit"));
                }
            }
            StructureKind::Oar => {
                if !positive(self.dose_limit_gy) {
                    return Err(invalid("OAR needs a positive dose limit"));
                }
                if self.target_dose_gy.is_some() {
                    return Err(invalid("OAR must not carry a target dose"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub label: String,
    ct: CtVolume,
    structures: Vec<Structure>,
}

impl Phantom {
    pub fn new(ct: CtVolume, structures: Vec<Structure>, label: impl Into<String>) -> Result<Self> {
        let n = ct.geometry.voxel_count();
        let mut names = BTreeSet::new();
        for s in &structures {
            s.validate(n)?;
            if !names.insert(s.name.as_str()) {
                return Err(PhantomError::Validation(format!(
                    "duplicate structure name `{}`",
                    s.name
                )));
            }
        }
        let ptvs: Vec<&Structure> = structures
            .iter()
            .filter(|s| s.kind == StructureKind::Ptv)
            .collect();
        if ptvs.len() != 1 {
            return Err(PhantomError::Validation(format!(
                "expected exactly one PTV, found {}",
                ptvs.len()
            )));
        }
        let ptv = ptvs[0];
        for oar in structures.iter().filter(|s| s.kind == StructureKind::Oar) {
            if oar.mask.iter().zip(&ptv.mask).any(|(&a, &b)| a && b) {
                return Err(PhantomError::Validation(format!(
                    "OAR `{}` overlaps the PTV",
                    oar.name
                )));
            }
        }
        Ok(Self {
            label: label.into(),
            ct,
            structures,
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.ct.geometry
    }

    pub fn ct(&self) -> &CtVolume {
        &self.ct
    }

    pub fn structures(&self) -> &[Structure] {
        &self.structures
    }

    pub fn ptv(&self) -> &Structure {
        self.structures
            .iter()
            .find(|s| s.kind == StructureKind::Ptv)
            .expect("validated phantom has a PTV")
    }

    pub fn oars(&self) -> impl Iterator<Item = &Structure> {
        self.structures
            .iter()
            .filter(|s| s.kind == StructureKind::Oar)
    }

    pub fn structure(&self, name: &str) -> Option<&Structure> {
        self.structures.iter().find(|s| s.name == name)
    }

    pub fn set_dose_limit(&mut self, name: &str, limit_gy: f64) -> Result<()> {
        let s = self
            .structures
            .iter_mut()
            .find(|s| s.name == name)
            .ok_or_else(|| PhantomError::Validation(format!("no structure named `{name}`")))?;
        if s.kind != StructureKind::Oar || !(limit_gy.is_finite() && limit_gy > 0.0) {
            return Err(PhantomError::InvalidStructure {
                name: name.to_string(),
                reason: format!("cannot set dose limit {limit_gy}"),
            });
        }
        s.dose_limit_gy = Some(limit_gy);
        Ok(())
    }

    /// Mean world position of the voxel centres in `mask`.
    pub fn centroid_mm(&self, mask: &[bool]) -> Option<[f64; 3]> {
        mask_centroid(self.geometry(), mask)
    }

    pub fn ptv_centroid_mm(&self) -> [f64; 3] {
        self.centroid_mm(&self.ptv().mask)
            .expect("validated PTV is non-empty")
    }

    /// Attenuation map (mm⁻¹) for every voxel.
    pub fn attenuation_map(&self, mu_water_per_mm: f64) -> Vec<f64> {
        self.ct
            .values()
            .iter()
            .map(|&hu| attenuation_unchecked(f64::from(hu), mu_water_per_mm))
            .collect()
    }
}

pub fn mask_centroid(geometry: &GridGeometry, mask: &[bool]) -> Option<[f64; 3]> {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for (idx, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let [i, j, k] = geometry.coords(idx);
        let c = geometry.voxel_center(i, j, k);
        for a in 0..3 {
            sum[a] += c[a];
        }
        n += 1;
    }
    (n > 0).then(|| sum.map(|s| s / n as f64))
}

/// Default OAR dose limits (Gy) used by the synthetic case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OarLimits {
    pub rectum: f64,
    pub bladder: f64,
    pub femoral_heads: f64,
}

impl Default for OarLimits {
    fn default() -> Self {
        Self {
            rectum: 50.0,
            bladder: 65.0,
            femoral_heads: 45.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProstateSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub seed: u64,
    pub target_dose_gy: f64,
    pub limits: OarLimits,
}

impl Default for ProstateSpec {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            spacing_mm: [5.0, 5.0, 5.0],
            seed: 0,
            target_dose_gy: 100.0,
            limits: OarLimits::default(),
        }
    }
}

/// Body semi-axes as fractions of the grid extent (x, y).
const BODY_FRACTION: [f64; 2] = [0.46, 0.38];
/// Upper bound on the PTV centre displacement, as a fraction of the body radius.
const PTV_SHIFT_FRACTION: f64 = 0.045;
const SIZE_JITTER: f64 = 0.10;

struct Ellipsoid {
    center: [f64; 3],
    semi: [f64; 3],
}

impl Ellipsoid {
    fn sphere(center: [f64; 3], r: f64) -> Self {
        Self {
            center,
            semi: [r; 3],
        }
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.semi[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    /// True when the ellipsoid stays at least one voxel away from the grid faces.
    fn fits(&self, g: &GridGeometry) -> bool {
        let lo = g.lower_corner();
        let hi = g.upper_corner();
        (0..3).all(|a| {
            self.center[a] - self.semi[a] >= lo[a] + g.spacing_mm[a]
                && self.center[a] + self.semi[a] <= hi[a] - g.spacing_mm[a]
        })
    }
}

/// Synthetic prostate case with default limits, 100 Gy target.
pub fn generate_prostate_phantom(dims: [usize; 3], spacing_mm: [f64; 3], seed: u64) -> Result<Phantom> {
    generate_prostate(&ProstateSpec {
        dims,
        spacing_mm,
        seed,
        ..ProstateSpec::default()
    })
}

/// Water-equivalent elliptical body in air with a spherical PTV at the
/// isocentre, rectum posterior, bladder anterior and both femoral heads
/// (bone) lateral. The seed jitters centres and radii by at most 10 %.
pub fn generate_prostate(spec: &ProstateSpec) -> Result<Phantom> {
    if spec.dims.iter().any(|&d| d < 16) {
        return Err(PhantomError::InvalidGeometry(format!(
            "each dimension must be >= 16, got {:?}",
            spec.dims
        )));
    }
    let g = GridGeometry::centered(spec.dims, spec.spacing_mm)?;
    let c = g.center();
    let extent = [
        g.dims[0] as f64 * g.spacing_mm[0],
        g.dims[1] as f64 * g.spacing_mm[1],
    ];
    let body_a = BODY_FRACTION[0] * extent[0];
    let body_b = BODY_FRACTION[1] * extent[1];
    let body_r = body_a.min(body_b);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = |rng: &mut ChaCha8Rng| 1.0 + rng.gen_range(-SIZE_JITTER..=SIZE_JITTER);

    // PTV centre shift drawn uniformly from a ball.
    let shift = loop {
        let v: [f64; 3] = [
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
        ];
        if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            break v.map(|x| x * PTV_SHIFT_FRACTION * body_r);
        }
    };
    let ptv_c = [c[0] + shift[0], c[1] + shift[1], c[2] + shift[2]];
    let ptv_r = 0.28 * body_r * jitter(&mut rng);
    let gap = 0.04 * body_r;

    let rect_r = 0.15 * body_r * jitter(&mut rng);
    let rectum = Ellipsoid {
        center: [ptv_c[0], ptv_c[1] - (ptv_r + gap + rect_r), ptv_c[2]],
        semi: [rect_r, rect_r, 1.5 * ptv_r * jitter(&mut rng)],
    };
    let blad_r = 0.24 * body_r * jitter(&mut rng);
    let bladder = Ellipsoid::sphere(
        [ptv_c[0], ptv_c[1] + ptv_r + gap + blad_r, ptv_c[2] + 0.2 * ptv_r],
        blad_r,
    );
    let fem_r = 0.18 * body_r * jitter(&mut rng);
    let fem_x = 0.70 * body_a * jitter(&mut rng).min(1.0 + 0.5 * SIZE_JITTER);
    let fem_left = Ellipsoid::sphere([c[0] + fem_x, ptv_c[1], ptv_c[2]], fem_r);
    let fem_right = Ellipsoid::sphere([c[0] - fem_x, ptv_c[1], ptv_c[2]], fem_r);
    let ptv = Ellipsoid::sphere(ptv_c, ptv_r);

    for (name, shape) in [
        ("prostate", &ptv),
        ("rectum", &rectum),
        ("bladder", &bladder),
        ("femoral_heads", &fem_left),
        ("femoral_heads", &fem_right),
    ] {
        if !shape.fits(&g) {
            return Err(PhantomError::StructureDoesNotFit(name.into()));
        }
    }

    let n = g.voxel_count();
    let mut hu = vec![HU_AIR; n];
    let mut body = vec![false; n];
    let mut m_ptv = vec![false; n];
    let mut m_rect = vec![false; n];
    let mut m_blad = vec![false; n];
    let mut m_fem = vec![false; n];
    for k in 0..g.dims[2] {
        for j in 0..g.dims[1] {
            for i in 0..g.dims[0] {
                let idx = g.index(i, j, k);
                let p = g.voxel_center(i, j, k);
                let inside = ((p[0] - c[0]) / body_a).powi(2) + ((p[1] - c[1]) / body_b).powi(2) <= 1.0;
                if !inside {
                    continue;
                }
                body[idx] = true;
                hu[idx] = HU_WATER;
                if ptv.contains(p) {
                    m_ptv[idx] = true;
                    continue;
                }
                if fem_left.contains(p) || fem_right.contains(p) {
                    m_fem[idx] = true;
                    hu[idx] = HU_BONE;
                } else if rectum.contains(p) {
                    m_rect[idx] = true;
                } else if bladder.contains(p) {
                    m_blad[idx] = true;
                }
            }
        }
    }

    for (name, mask) in [
        ("prostate", &m_ptv),
        ("rectum", &m_rect),
        ("bladder", &m_blad),
        ("femoral_heads", &m_fem),
    ] {
        if !mask.iter().any(|&m| m) {
            return Err(PhantomError::StructureDoesNotFit(name.into()));
        }
    }

    let ct = CtVolume::new(g, hu)?;
    let structures = vec![
        Structure::ptv("prostate", m_ptv, spec.target_dose_gy),
        Structure::oar("rectum", m_rect, spec.limits.rectum),
        Structure::oar("bladder", m_blad, spec.limits.bladder),
        Structure::oar("femoral_heads", m_fem, spec.limits.femoral_heads),
    ];
    Phantom::new(ct, structures, format!("prostate-seed{}", spec.seed))
}

/// Radius used to express seeded displacements for a generated case.
pub fn body_radius_mm(geometry: &GridGeometry) -> f64 {
    let a = BODY_FRACTION[0] * geometry.dims[0] as f64 * geometry.spacing_mm[0];
    let b = BODY_FRACTION[1] * geometry.dims[1] as f64 * geometry.spacing_mm[1];
    a.min(b)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StructureEntry {
    name: String,
    kind: StructureKind,
    mask_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dose_limit_gy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_dose_gy: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    label: String,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    ct_file: String,
    structures: Vec<StructureEntry>,
}

fn mask_file_name(name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    format!("mask_{clean}.u8")
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `manifest.json`, `ct.f32` and one `mask_*.u8` per structure into `dir`.
pub fn save_phantom(phantom: &Phantom, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let g = phantom.geometry();
    let ct_file = "ct.f32".to_string();
    raw::write_f32_le(&dir.join(&ct_file), phantom.ct.values().iter().copied())?;
    let mut entries = Vec::new();
    for (n, s) in phantom.structures.iter().enumerate() {
        let mut mask_file = mask_file_name(&s.name);
        if entries.iter().any(|e: &StructureEntry| e.mask_file == mask_file) {
            mask_file = format!("mask_{n}.u8");
        }
        raw::write_mask(&dir.join(&mask_file), &s.mask)?;
        entries.push(StructureEntry {
            name: s.name.clone(),
            kind: s.kind,
            mask_file,
            dose_limit_gy: s.dose_limit_gy,
            target_dose_gy: s.target_dose_gy,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        label: phantom.label.clone(),
        dims: g.dims,
        spacing_mm: g.spacing_mm,
        origin_mm: g.origin_mm,
        ct_file,
        structures: entries,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| PhantomError::MalformedManifest(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
    Ok(())
}

pub fn load_phantom(dir: &Path) -> Result<Phantom> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| PhantomError::MalformedManifest(e.to_string()))?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(1) => {}
        Some(v) => return Err(PhantomError::UnsupportedVersion(v as u32)),
        None => {
            return Err(PhantomError::MalformedManifest(
                "missing integer `format_version`".into(),
            ))
        }
    }
    let manifest: Manifest =
        serde_json::from_value(value).map_err(|e| PhantomError::MalformedManifest(e.to_string()))?;
    let g = GridGeometry::new(manifest.dims, manifest.spacing_mm, manifest.origin_mm)?;
    let n = g.voxel_count();

    let hu = raw::read_f32_le(&dir.join(&manifest.ct_file))?.map_err(|bytes| {
        PhantomError::SizeMismatch {
            file: manifest.ct_file.clone(),
            expected: n,
            found: bytes / 4,
        }
    })?;
    if hu.len() != n {
        return Err(PhantomError::SizeMismatch {
            file: manifest.ct_file.clone(),
            expected: n,
            found: hu.len(),
        });
    }
    let ct = CtVolume::new(g, hu)?;

    let mut structures = Vec::with_capacity(manifest.structures.len());
    for e in manifest.structures {
        let bytes = raw::read_bytes(&dir.join(&e.mask_file))?;
        if bytes.len() != n {
            return Err(PhantomError::SizeMismatch {
                file: e.mask_file,
                expected: n,
                found: bytes.len(),
            });
        }
        let mask = bytes
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(PhantomError::MalformedManifest(format!(
                    "mask `{}` contains byte {other}",
                    e.mask_file
                ))),
            })
            .collect::<Result<Vec<bool>>>()?;
        structures.push(Structure {
            name: e.name,
            kind: e.kind,
            mask,
            dose_limit_gy: e.dose_limit_gy,
            target_dose_gy: e.target_dose_gy,
        });
    }
    Phantom::new(ct, structures, manifest.label)
}
