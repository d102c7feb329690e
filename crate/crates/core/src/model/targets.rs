//! Heatmap and corner-offset supervision on the output grid.
//!
//! Offsets are expressed in grid units relative to the cell they are stored
//! at: for cell `(row, col)` the four channels hold the continuous grid
//! coordinates of the top-left and bottom-right corners minus `(col, row)`.

use crate::geometry::{frame_to_grid, grid_point_to_frame, BBox, CropSpec};

/// Binary disc of cells whose centre lies within `radius` of the continuous
/// grid point `center = (gx, gy)`.
pub fn heatmap_disc(center: (f64, f64), radius: f64, grid: usize) -> Vec<bool> {
    let mut out = vec![false; grid * grid];
    let r2 = radius * radius;
    for row in 0..grid {
        let dy = row as f64 - center.1;
        for col in 0..grid {
            let dx = col as f64 - center.0;
            out[row * grid + col] = dx * dx + dy * dy <= r2 + 1e-9;
        }
    }
    out
}

/// Regression targets and the cells they are valid at.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetTarget {
    /// `4 x grid x grid`, defined at every cell.
    pub offsets: Vec<f32>,
    /// Positive disc around the box centre; empty when the box misses the crop.
    pub mask: Vec<bool>,
}

impl OffsetTarget {
    pub fn heat(&self) -> Vec<f32> {
        self.mask.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect()
    }
}

/// Exact corner offsets of `b` relative to cell `(row, col)`.
pub fn corner_offsets(b: &BBox, cell: (usize, usize), spec: &CropSpec, stride: usize) -> [f64; 4] {
    let (tlx, tly) = frame_to_grid((b.x_min, b.y_min), spec, stride);
    let (brx, bry) = frame_to_grid((b.x_max, b.y_max), spec, stride);
    let (c, r) = (cell.1 as f64, cell.0 as f64);
    [tlx - c, tly - r, brx - c, bry - r]
}

/// Corner offsets of `b` at every cell of the `grid x grid` output of a crop.
pub fn encode_offsets(b: &BBox, spec: &CropSpec, stride: usize, grid: usize, radius: f64) -> OffsetTarget {
    let n = grid * grid;
    let mut offsets = vec![0f32; 4 * n];
    for row in 0..grid {
        for col in 0..grid {
            let i = row * grid + col;
            let o = corner_offsets(b, (row, col), spec, stride);
            for (ch, v) in o.iter().enumerate() {
                offsets[ch * n + i] = *v as f32;
            }
        }
    }
    let mask = if b.intersection_area(&spec.region()) > 0.0 {
        heatmap_disc(frame_to_grid(b.center(), spec, stride), radius, grid)
    } else {
        vec![false; n]
    };
    OffsetTarget { offsets, mask }
}

/// Inverse of [`encode_offsets`] at a single cell `(row, col)`.
pub fn decode_offsets(cell: (usize, usize), offsets: [f64; 4], spec: &CropSpec, stride: usize) -> BBox {
    decode_offsets_at((cell.1 as f64, cell.0 as f64), offsets, spec, stride)
}

/// Decodes offsets relative to a continuous grid point `(gx, gy)`.
pub fn decode_offsets_at(point: (f64, f64), offsets: [f64; 4], spec: &CropSpec, stride: usize) -> BBox {
    let (x0, y0) = grid_point_to_frame((point.0 + offsets[0], point.1 + offsets[1]), spec, stride);
    let (x1, y1) = grid_point_to_frame((point.0 + offsets[2], point.1 + offsets[3]), spec, stride);
    BBox::new(x0, y0, x1.max(x0), y1.max(y0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn disc_of_radius_two_and_a_half_cells_has_21_cells() {
        // 10 px radius at stride 4, centred on a lattice point
        let disc = heatmap_disc((10.0, 10.0), 10.0 / 4.0, 21);
        let brute = (-3i32..=3)
            .flat_map(|dy| (-3i32..=3).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| ((dx * dx + dy * dy) as f64) <= 6.25)
            .count();
        assert_eq!(brute, 21);
        assert_eq!(disc.iter().filter(|v| **v).count(), 21);
    }

    #[test]
    fn symmetric_box_at_its_centre_cell() {
        // unit crop scale: grid units are stride pixels
        let spec = CropSpec::new((32.0, 32.0), 64.0, 64).unwrap();
        let (cx, cy) = grid_point_to_frame((7.0, 7.0), &spec, 4);
        let b = BBox::from_center_size(cx, cy, 16.0, 16.0);
        let t = encode_offsets(&b, &spec, 4, 16, 1.0);
        let i = 7 * 16 + 7;
        let n = 256;
        assert_eq!(
            [t.offsets[i], t.offsets[n + i], t.offsets[2 * n + i], t.offsets[3 * n + i]],
            [-2.0, -2.0, 2.0, 2.0]
        );
        assert!(t.mask[i]);
    }

    #[test]
    fn exact_round_trip_at_double_precision() {
        let spec = CropSpec::new((40.0, -12.5), 97.3, 64).unwrap();
        let b = BBox::new(13.25, -40.0, 61.5, 3.75);
        for cell in [(0, 0), (7, 9), (15, 15), (3, 12)] {
            let back = decode_offsets(cell, corner_offsets(&b, cell, &spec, 4), &spec, 4);
            let s = spec.scale() / 4.0;
            assert!((back.x_min - b.x_min).abs() * s < 1e-6);
            assert!((back.y_min - b.y_min).abs() * s < 1e-6);
            assert!((back.x_max - b.x_max).abs() * s < 1e-6);
            assert!((back.y_max - b.y_max).abs() * s < 1e-6);
        }
    }

    #[test]
    fn box_outside_crop_has_empty_mask() {
        let spec = CropSpec::new((0.0, 0.0), 50.0, 32).unwrap();
        let b = BBox::from_center_size(200.0, 0.0, 10.0, 10.0);
        assert!(encode_offsets(&b, &spec, 4, 8, 2.0).mask.iter().all(|m| !m));
    }

    #[test]
    fn encode_decode_round_trip_fuzz() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut worst = 0f64;
        for _ in 0..10_000 {
            let spec = CropSpec::new(
                (rng.random_range(-50.0..150.0), rng.random_range(-50.0..150.0)),
                rng.random_range(20.0..200.0),
                64,
            )
            .unwrap();
            let b = BBox::from_center_size(
                spec.center.0 + rng.random_range(-30.0..30.0),
                spec.center.1 + rng.random_range(-30.0..30.0),
                rng.random_range(1.0..80.0),
                rng.random_range(1.0..80.0),
            );
            let t = encode_offsets(&b, &spec, 4, 16, 1.5);
            let (row, col) = (rng.random_range(0..16usize), rng.random_range(0..16usize));
            let i = row * 16 + col;
            let o = [0, 1, 2, 3].map(|c| t.offsets[c * 256 + i] as f64);
            let back = decode_offsets((row, col), o, &spec, 4);
            let s = spec.scale() / 4.0; // grid units per frame pixel
            for (a, e) in [
                (back.x_min, b.x_min),
                (back.y_min, b.y_min),
                (back.x_max, b.x_max),
                (back.y_max, b.y_max),
            ] {
                worst = worst.max((a - e).abs() * s);
            }
        }
        assert!(worst < 1e-4, "max round-trip error {worst} grid units");
    }
}
