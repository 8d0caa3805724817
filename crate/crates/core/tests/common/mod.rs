//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use gantry::phantom::{generate_prostate, CtVolume, ProstateSpec};
use gantry::{GridGeometry, Phantom, Structure};

/// Four recorded replies from a multimodal chat model to the planning
/// prompt, replayed through the scripted client.
pub const MODEL_REPLIES: [&str; 4] = [
    include_str!("../fixtures/model_reply_1.txt"),
    include_str!("../fixtures/model_reply_2.txt"),
    include_str!("../fixtures/model_reply_3.txt"),
    include_str!("../fixtures/model_reply_4.txt"),
];

pub const MODEL_REPLY_ANGLES: [&[f64]; 4] = [
    &[10.0, 50.0, 90.0, 130.0, 170.0, 210.0, 250.0, 290.0],
    &[30.0, 80.0, 130.0, 180.0, 230.0, 280.0, 330.0],
    &[30.0, 75.0, 120.0, 165.0, 210.0, 255.0, 300.0, 345.0],
    &[30.0, 60.0, 110.0, 150.0, 210.0, 250.0, 300.0, 340.0],
];

/// The default 32³ case at 5 mm, seed 0.
pub fn standard_phantom() -> Arc<Phantom> {
    static P: OnceLock<Arc<Phantom>> = OnceLock::new();
    P.get_or_init(|| Arc::new(generate_prostate(&ProstateSpec::default()).unwrap()))
        .clone()
}

/// A homogeneous cube of `hu` with a central box PTV of half-width
/// `ptv_half` voxels and one corner OAR voxel.
pub fn uniform_cube(n: usize, spacing: f64, hu: f32, ptv_half: usize) -> Phantom {
    let g = GridGeometry::centered([n; 3], [spacing; 3]).unwrap();
    let ct = CtVolume::filled(g.clone(), hu).unwrap();
    let lo = n / 2 - ptv_half;
    let hi = n / 2 + ptv_half - usize::from(n.is_multiple_of(2));
    let mut ptv = vec![false; g.voxel_count()];
    for k in lo..=hi {
        for j in lo..=hi {
            for i in lo..=hi {
                ptv[g.index(i, j, k)] = true;
            }
        }
    }
    let mut oar = vec![false; g.voxel_count()];
    oar[0] = true;
    Phantom::new(
        ct,
        vec![Structure::ptv("ptv", ptv, 100.0), Structure::oar("corner", oar, 50.0)],
        "cube",
    )
    .unwrap()
}

pub fn temp_dir() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}
