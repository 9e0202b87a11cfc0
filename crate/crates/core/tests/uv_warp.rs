//! Distortion warped into UV space and sampled back at visible vertices.
//!
//! A vertex counts as visible when its own pixel shows its part at its
//! depth. Vertices whose UV neighborhood received no pixel at all come back
//! flagged as fallbacks; they are counted but carry no value to compare.

use nalgebra::Vector2;
use pdhmr_core::body::{build_default_body, BodyConfig};
use pdhmr_core::geometry::perspective_project;
use pdhmr_core::raster::{sample_uv, warp_to_uv, DEFAULT_UV_RESOLUTION};
use pdhmr_core::synth::{generate_scene, CameraSampleConfig, DatasetConfig};

#[test]
fn warped_distortion_matches_vertex_depths() {
    let body = build_default_body(&BodyConfig::default()).unwrap();
    let config = DatasetConfig {
        camera: CameraSampleConfig {
            seed: 31,
            distance_m: [1.0, 4.0],
            ..Default::default()
        },
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    let (mut compared, mut fallbacks) = (0, 0);
    for index in 0..8 {
        let scene = generate_scene(&config, &body, index).unwrap();
        let b = &scene.buffers;
        let t = scene.meta.translation;
        let map = warp_to_uv(&b.distortion, b, DEFAULT_UV_RESOLUTION).unwrap();
        let screen = perspective_project(&scene.vertices, &t, &scene.meta.camera.intrinsics).unwrap();
        for (k, (v, p)) in scene.vertices.iter().zip(&screen).enumerate() {
            let Some(pixel) = pixel_of(p, b.width, b.height) else {
                continue;
            };
            let depth = v.z + t.tz;
            if b.part[pixel] != body.part_id[k] || (b.depth[pixel] - depth).abs() >= 0.01 * depth {
                continue;
            }
            let sample = sample_uv(&map, &[body.uv[k]])[0];
            if sample.fallback {
                fallbacks += 1;
                continue;
            }
            let expected = t.tz / depth;
            worst = worst.max((sample.value - expected).abs() / expected);
            compared += 1;
        }
    }
    println!("{compared} vertices compared, {fallbacks} fallbacks, worst relative error {worst:.4}");
    assert!(compared > 1000);
    assert!(fallbacks * 4 < compared);
    assert!(worst < 0.05, "worst relative error {worst}");
}

fn pixel_of(p: &Vector2<f64>, w: usize, h: usize) -> Option<usize> {
    let (j, i) = (p.x.floor(), p.y.floor());
    (j >= 0.0 && i >= 0.0 && (j as usize) < w && (i as usize) < h).then(|| i as usize * w + j as usize)
}
