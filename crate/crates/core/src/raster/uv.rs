//! Warping image channels into the body's UV atlas and sampling them back.

use serde::{Deserialize, Serialize};

use super::{RasterBuffers, RasterError};

pub const DEFAULT_UV_RESOLUTION: usize = 64;

/// `R x R` grid over the unit UV square. Texel `(a, b)` covers
/// `u in [a/R, (a+1)/R)`, `v in [b/R, (b+1)/R)` and is stored at `b * R + a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UvMap {
    pub resolution: usize,
    pub values: Vec<f64>,
    pub covered: Vec<bool>,
}

impl UvMap {
    pub fn empty(resolution: usize) -> Self {
        Self {
            resolution,
            values: vec![0.0; resolution * resolution],
            covered: vec![false; resolution * resolution],
        }
    }

    pub fn covered_count(&self) -> usize {
        self.covered.iter().filter(|&&c| c).count()
    }

    fn texel_of(&self, x: f64) -> usize {
        ((x * self.resolution as f64).floor().max(0.0) as usize).min(self.resolution - 1)
    }
}

/// Splat every covered pixel's `channel` value into its nearest UV texel.
/// Where several pixels land on one texel, the nearest (smallest depth)
/// contributor wins; exact depth ties keep the earlier pixel in row-major
/// order.
pub fn warp_to_uv(channel: &[f64], buffers: &RasterBuffers, resolution: usize) -> Result<UvMap, RasterError> {
    if channel.len() != buffers.part.len() {
        return Err(RasterError::ShapeMismatch(format!(
            "channel has {} values for a {}x{} raster",
            channel.len(),
            buffers.width,
            buffers.height
        )));
    }
    let resolution = resolution.max(1);
    let mut map = UvMap::empty(resolution);
    let mut best = vec![f64::INFINITY; resolution * resolution];
    for (i, &value) in channel.iter().enumerate() {
        if !buffers.is_covered(i) {
            continue;
        }
        let [_, u, v] = buffers.iuv[i];
        let t = map.texel_of(v) * resolution + map.texel_of(u);
        if buffers.depth[i] < best[t] {
            best[t] = buffers.depth[i];
            map.values[t] = value;
            map.covered[t] = true;
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UvSample {
    pub value: f64,
    /// Set when no covered texel contributed and the value is the 1.0 fallback.
    pub fallback: bool,
}

/// Bilinear lookup restricted to covered texels (weights renormalized over
/// the covered taps). Points must lie in the unit square; coordinates are
/// clamped at the border.
pub fn sample_uv(map: &UvMap, points: &[[f64; 2]]) -> Vec<UvSample> {
    let r = map.resolution;
    let rf = r as f64;
    points
        .iter()
        .map(|&[u, v]| {
            let gx = (u * rf - 0.5).clamp(0.0, rf - 1.0);
            let gy = (v * rf - 0.5).clamp(0.0, rf - 1.0);
            let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(r - 1), (y0 + 1).min(r - 1));
            let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x1, y0, fx * (1.0 - fy)),
                (x0, y1, (1.0 - fx) * fy),
                (x1, y1, fx * fy),
            ];
            // blend offsets from the first covered tap so constant fields are
            // reproduced exactly
            let mut anchor = None;
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (x, y, w) in taps {
                let t = y * r + x;
                if w == 0.0 || !map.covered[t] {
                    continue;
                }
                let a = *anchor.get_or_insert(map.values[t]);
                acc += w * (map.values[t] - a);
                wsum += w;
            }
            match anchor {
                Some(a) => UvSample {
                    value: a + acc / wsum,
                    fallback: false,
                },
                None => UvSample {
                    value: 1.0,
                    fallback: true,
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::PART_NONE;

    fn buffers_with_uv(points: &[(usize, [f64; 2], f64)], n: usize) -> RasterBuffers {
        let mut b = RasterBuffers::background(n, 1, 1.0);
        for &(i, uv, depth) in points {
            b.part[i] = 0;
            b.iuv[i] = [0.0, uv[0], uv[1]];
            b.depth[i] = depth;
            b.distortion[i] = 1.0 / depth;
        }
        b
    }

    #[test]
    fn constant_channel_fills_covered_texels() {
        let b = buffers_with_uv(&[(0, [0.1, 0.1], 1.0), (1, [0.6, 0.9], 1.0)], 3);
        let map = warp_to_uv(&[4.0, 4.0, 9.0], &b, 8).unwrap();
        assert_eq!(map.covered_count(), 2);
        for (v, c) in map.values.iter().zip(&map.covered) {
            if *c {
                assert_eq!(*v, 4.0);
            }
        }
        let s = sample_uv(&map, &[[0.1, 0.1], [0.6, 0.9], [0.5, 0.5]]);
        assert_eq!(s[0], UvSample { value: 4.0, fallback: false });
        assert_eq!(s[1].value, 4.0);
        assert_eq!(s[2], UvSample { value: 1.0, fallback: true });
    }

    #[test]
    fn nearer_pixel_wins_the_texel() {
        let b = buffers_with_uv(&[(0, [0.5, 0.5], 2.0), (1, [0.51, 0.51], 1.0)], 2);
        let map = warp_to_uv(&[7.0, 3.0], &b, 4).unwrap();
        assert_eq!(map.covered_count(), 1);
        assert_eq!(map.values[2 * 4 + 2], 3.0);
    }

    #[test]
    fn empty_raster_gives_empty_map() {
        let b = RasterBuffers::background(4, 4, 1.0);
        assert!(b.part.iter().all(|&p| p == PART_NONE));
        let map = warp_to_uv(&b.distortion, &b, 16).unwrap();
        assert_eq!(map.covered_count(), 0);
    }

    #[test]
    fn texel_center_returns_texel_value() {
        let mut map = UvMap::empty(4);
        for t in 0..16 {
            map.values[t] = t as f64;
            map.covered[t] = true;
        }
        let s = sample_uv(&map, &[[(1.0 + 0.5) / 4.0, (2.0 + 0.5) / 4.0]]);
        assert_eq!(s[0].value, 9.0);
        // halfway between texels 9 and 10
        let s = sample_uv(&map, &[[2.0 / 4.0, 2.5 / 4.0]]);
        assert!((s[0].value - 9.5).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let b = RasterBuffers::background(2, 2, 1.0);
        assert!(warp_to_uv(&[1.0], &b, 4).is_err());
    }
}
