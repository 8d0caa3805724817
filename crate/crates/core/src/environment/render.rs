//! State renderings: the two-channel volume fed to the Q-network and the
//! annotated 2D slices attached to language-model prompts.

use std::io;
use std::path::Path;

use super::{EnvError, EnvState, Result};
use crate::phantom::{GridGeometry, StructureKind};

/// Two-channel volume, channel-major, x-fastest within each channel.
/// Stored as `f32` to keep replay buffers small.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTensor {
    pub dims: [usize; 3],
    pub data: Vec<f32>,
}

impl StateTensor {
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.dims[0] * self.dims[1] * self.dims[2];
        &self.data[c * n..(c + 1) * n]
    }
}

#[inline]
fn nearest(out: usize, out_n: usize, in_n: usize) -> usize {
    (((out as f64 + 0.5) * in_n as f64 / out_n as f64) as usize).min(in_n - 1)
}

/// Channel 0 is CT mapped by `(HU + 1000) / 2000`, channel 1 is dose over
/// twice the prescription; both clamped to `[0, 1]`. Nearest-neighbour
/// downsampling.
pub fn render_state(state: &EnvState, dims: [usize; 3]) -> Result<StateTensor> {
    let g = state.phantom.geometry();
    if (0..3).any(|a| dims[a] == 0 || dims[a] > g.dims[a]) {
        return Err(EnvError::InvalidConfig(format!(
            "render dims {dims:?} must be within 1..={:?}",
            g.dims
        )));
    }
    let n = dims[0] * dims[1] * dims[2];
    let mut data = vec![0.0f32; 2 * n];
    let hu = state.phantom.ct().values();
    let rx = state.prescription_gy;
    let mut o = 0;
    for k in 0..dims[2] {
        let kk = nearest(k, dims[2], g.dims[2]);
        for j in 0..dims[1] {
            let jj = nearest(j, dims[1], g.dims[1]);
            for i in 0..dims[0] {
                let ii = nearest(i, dims[0], g.dims[0]);
                let src = g.index(ii, jj, kk);
                data[o] = ((f64::from(hu[src]) + 1000.0) / 2000.0).clamp(0.0, 1.0) as f32;
                data[n + o] = ((state.dose.dose_gy[src] / rx).clamp(0.0, 2.0) / 2.0) as f32;
                o += 1;
            }
        }
    }
    Ok(StateTensor { dims, data })
}

pub const PROMPT_IMAGE_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlicePlane {
    Axial,
    Coronal,
    Sagittal,
}

impl SlicePlane {
    pub fn name(self) -> &'static str {
        match self {
            SlicePlane::Axial => "axial",
            SlicePlane::Coronal => "coronal",
            SlicePlane::Sagittal => "sagittal",
        }
    }
}

/// One RGB prompt image plus the dose-overlay opacity per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pub plane: SlicePlane,
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
    pub overlay_alpha: Vec<u8>,
}

impl SliceImage {
    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().expect("in-memory PNG header");
            w.write_image_data(&self.rgb).expect("in-memory PNG data");
        }
        out
    }

    pub fn file_name(&self, case: &str) -> String {
        format!("{case}_{}.png", self.plane.name())
    }

    pub fn write_png(&self, dir: &Path, case: &str) -> io::Result<std::path::PathBuf> {
        let path = dir.join(self.file_name(case));
        std::fs::write(&path, self.to_png())?;
        Ok(path)
    }
}

// Anchors of a blue-cyan-green-yellow-red ramp, evenly spaced on [0, 1].
const RAMP: [[f64; 3]; 5] = [
    [48.0, 18.0, 160.0],
    [30.0, 150.0, 230.0],
    [60.0, 200.0, 90.0],
    [250.0, 220.0, 40.0],
    [220.0, 30.0, 30.0],
];

fn ramp(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    [0, 1, 2].map(|c| RAMP[i][c] * (1.0 - f) + RAMP[i + 1][c] * f)
}

const CONTOUR_COLORS: [[u8; 3]; 5] = [
    [255, 160, 0],
    [0, 220, 255],
    [255, 0, 255],
    [120, 255, 120],
    [255, 255, 255],
];
const PTV_COLOR: [u8; 3] = [255, 0, 0];

/// Maps pixel (row, col) to a voxel of a 2D section. Rows run top-down from
/// the anterior (axial) or superior (coronal/sagittal) side.
fn section_voxel(plane: SlicePlane, g: &GridGeometry, c: [usize; 3], row: usize, col: usize, size: usize) -> usize {
    let [nx, ny, nz] = g.dims;
    match plane {
        SlicePlane::Axial => {
            let i = nearest(col, size, nx);
            let j = ny - 1 - nearest(row, size, ny);
            g.index(i, j, c[2])
        }
        SlicePlane::Coronal => {
            let i = nearest(col, size, nx);
            let k = nz - 1 - nearest(row, size, nz);
            g.index(i, c[1], k)
        }
        SlicePlane::Sagittal => {
            let j = nearest(col, size, ny);
            let k = nz - 1 - nearest(row, size, nz);
            g.index(c[0], j, k)
        }
    }
}

/// Axial, coronal and sagittal sections through the PTV centroid: grey CT,
/// dose blended with a colour ramp, structure outlines on top.
pub fn render_slices_for_prompt(state: &EnvState) -> Vec<SliceImage> {
    let p = &state.phantom;
    let g = p.geometry();
    let centroid = p.ptv_centroid_mm();
    let c: [usize; 3] = [0, 1, 2].map(|a| {
        let v = ((centroid[a] - g.origin_mm[a]) / g.spacing_mm[a]).round();
        (v.max(0.0) as usize).min(g.dims[a] - 1)
    });
    let size = PROMPT_IMAGE_SIZE;
    let hu = p.ct().values();
    let rx = state.prescription_gy;

    let mut outlines: Vec<(&[bool], [u8; 3])> = Vec::new();
    let mut oar_n = 0;
    for s in p.structures() {
        let color = match s.kind {
            StructureKind::Ptv => PTV_COLOR,
            StructureKind::Oar => {
                oar_n += 1;
                CONTOUR_COLORS[(oar_n - 1) % CONTOUR_COLORS.len()]
            }
        };
        outlines.push((&s.mask, color));
    }

    [SlicePlane::Axial, SlicePlane::Coronal, SlicePlane::Sagittal]
        .into_iter()
        .map(|plane| {
            let voxel_at = |r: usize, col: usize| section_voxel(plane, g, c, r, col, size);
            let mut rgb = vec![0u8; size * size * 3];
            let mut alpha_map = vec![0u8; size * size];
            for r in 0..size {
                for col in 0..size {
                    let v = voxel_at(r, col);
                    let grey = ((f64::from(hu[v]) + 1000.0) / 2000.0).clamp(0.0, 1.0) * 255.0;
                    let mut px = [grey; 3];
                    let rel = state.dose.dose_gy[v] / rx;
                    if rel > 0.02 {
                        let a = 0.6 * rel.min(1.0);
                        let color = ramp(rel / 1.2);
                        for ch in 0..3 {
                            px[ch] = px[ch] * (1.0 - a) + color[ch] * a;
                        }
                        alpha_map[r * size + col] = (a * 255.0).round() as u8;
                    }
                    for (mask, color) in &outlines {
                        if !mask[v] {
                            continue;
                        }
                        let edge = [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)].iter().any(|&(dr, dc)| {
                            let rr = r as i64 + dr;
                            let cc = col as i64 + dc;
                            if rr < 0 || cc < 0 || rr >= size as i64 || cc >= size as i64 {
                                return true;
                            }
                            !mask[voxel_at(rr as usize, cc as usize)]
                        });
                        if edge {
                            px = color.map(f64::from);
                        }
                    }
                    let o = (r * size + col) * 3;
                    for ch in 0..3 {
                        rgb[o + ch] = px[ch].round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
            SliceImage {
                plane,
                width: size,
                height: size,
                rgb,
                overlay_alpha: alpha_map,
            }
        })
        .collect()
}
