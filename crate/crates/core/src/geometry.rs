//! Boxes, crop specifications and the coordinate maps between frame space,
//! crop space and the network's output grid.
//!
//! Three coordinate systems are in play:
//!
//! * **frame**: continuous pixel coordinates of the source frame; pixel `i`
//!   covers `[i, i + 1)`.
//! * **crop**: continuous pixel coordinates of a resampled square crop of
//!   edge `out_size`.
//! * **grid**: output-cell coordinates. Cell `(row, col)` is centred on crop
//!   pixel `((col + 0.5) * stride, (row + 0.5) * stride)`, so a continuous
//!   grid point `g` corresponds to crop coordinate `(g + 0.5) * stride`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Axis-aligned bounding box in frame pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn from_center_size(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    /// Displacement normaliser `(w + h) / 2`.
    #[inline]
    pub fn size_factor(&self) -> f64 {
        (self.width() + self.height()) / 2.0
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x_max >= self.x_min
            && self.y_max >= self.y_min
            && [self.x_min, self.y_min, self.x_max, self.y_max]
                .iter()
                .all(|v| v.is_finite())
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(
            self.x_min + dx,
            self.y_min + dy,
            self.x_max + dx,
            self.y_max + dy,
        )
    }

    /// Intersection with `other`; collapses to a zero-area box when disjoint.
    pub fn clip_to(&self, other: &BBox) -> Self {
        let x_min = self.x_min.max(other.x_min).min(other.x_max);
        let y_min = self.y_min.max(other.y_min).min(other.y_max);
        let x_max = self.x_max.min(other.x_max).max(x_min);
        let y_max = self.y_max.min(other.y_max).max(y_min);
        Self::new(x_min, y_min, x_max, y_max)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Intersection over union. Zero for disjoint boxes and for a pair of
/// zero-area boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || inter <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// A square crop of the frame, resampled to `out_size x out_size` pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub center: (f64, f64),
    pub side: f64,
    pub out_size: usize,
}

impl CropSpec {
    pub fn new(center: (f64, f64), side: f64, out_size: usize) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) || out_size == 0 {
            return Err(Error::Invalid(format!(
                "crop side {side} and output size {out_size} must be positive"
            )));
        }
        Ok(Self {
            center,
            side,
            out_size,
        })
    }

    /// Crop pixels per frame pixel.
    #[inline]
    pub fn scale(&self) -> f64 {
        self.out_size as f64 / self.side
    }

    #[inline]
    pub fn frame_to_crop(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let s = self.scale();
        let half = self.out_size as f64 / 2.0;
        ((x - self.center.0) * s + half, (y - self.center.1) * s + half)
    }

    #[inline]
    pub fn crop_to_frame(&self, (u, v): (f64, f64)) -> (f64, f64) {
        let s = self.scale();
        let half = self.out_size as f64 / 2.0;
        ((u - half) / s + self.center.0, (v - half) / s + self.center.1)
    }

    pub fn box_to_crop(&self, b: &BBox) -> BBox {
        let (x0, y0) = self.frame_to_crop((b.x_min, b.y_min));
        let (x1, y1) = self.frame_to_crop((b.x_max, b.y_max));
        BBox::new(x0, y0, x1, y1)
    }

    pub fn box_from_crop(&self, b: &BBox) -> BBox {
        let (x0, y0) = self.crop_to_frame((b.x_min, b.y_min));
        let (x1, y1) = self.crop_to_frame((b.x_max, b.y_max));
        BBox::new(x0, y0, x1, y1)
    }

    /// The crop's footprint in frame coordinates.
    pub fn region(&self) -> BBox {
        BBox::from_center_size(self.center.0, self.center.1, self.side, self.side)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            center: (self.center.0 + dx, self.center.1 + dy),
            ..*self
        }
    }

    pub fn with_side(&self, side: f64) -> Self {
        Self { side, ..*self }
    }
}

/// Crop sizes shared by training, tracking and the perturbation sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropGeometry {
    /// Edge of the resampled target crop in pixels.
    pub target_size: usize,
    /// Edge of the resampled search crop (and detector frame) in pixels.
    pub search_size: usize,
    /// Search field of view relative to the target crop's.
    pub search_to_target_ratio: f64,
    /// Network stride between crop pixels and output cells.
    pub stride: usize,
}

impl CropGeometry {
    /// 127 / 255 crops with a 32 / 64 feature grid.
    pub fn full() -> Self {
        Self {
            target_size: 127,
            search_size: 255,
            search_to_target_ratio: 255.0 / 127.0,
            stride: 4,
        }
    }

    /// 64 / 128 crops.
    pub fn desk() -> Self {
        Self {
            target_size: 64,
            search_size: 128,
            search_to_target_ratio: 2.0,
            stride: 4,
        }
    }

    /// 32 / 64 crops, sized for single-core CI runs.
    pub fn compact() -> Self {
        Self {
            target_size: 32,
            search_size: 64,
            search_to_target_ratio: 2.0,
            stride: 4,
        }
    }

    /// Output grid edge for the search crop.
    pub fn grid(&self) -> usize {
        self.search_size.div_ceil(self.stride)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_size == 0 || self.search_size < self.target_size || self.stride == 0 {
            return Err(Error::Config(format!("invalid crop sizes {self:?}")));
        }
        if !(self.search_to_target_ratio >= 1.0 && self.search_to_target_ratio.is_finite()) {
            return Err(Error::Config(format!(
                "search_to_target_ratio {} must be >= 1",
                self.search_to_target_ratio
            )));
        }
        Ok(())
    }

    pub fn target_spec(&self, b: &BBox) -> Result<CropSpec> {
        make_target_crop_spec(b, self.target_size)
    }

    pub fn search_spec(&self, b: &BBox) -> Result<CropSpec> {
        make_search_crop_spec(b, self.search_size, self.search_to_target_ratio)
    }
}

impl Default for CropGeometry {
    fn default() -> Self {
        Self::desk()
    }
}

/// Side of the context-padded square around `b`: `sqrt((w + p)(h + p))`
/// with margin `p = (w + h) / 2`.
pub fn context_side(b: &BBox) -> f64 {
    let p = b.size_factor();
    ((b.width() + p) * (b.height() + p)).sqrt()
}

fn check_box(b: &BBox) -> Result<()> {
    if !b.is_valid() || b.width() <= 0.0 || b.height() <= 0.0 {
        return Err(Error::DegenerateBox(format!("{b:?}")));
    }
    Ok(())
}

pub fn make_target_crop_spec(b: &BBox, out_size: usize) -> Result<CropSpec> {
    check_box(b)?;
    CropSpec::new(b.center(), context_side(b), out_size)
}

/// Search crop: same centre as the target crop, field of view enlarged by
/// `search_to_target_ratio`.
pub fn make_search_crop_spec(
    b: &BBox,
    out_size: usize,
    search_to_target_ratio: f64,
) -> Result<CropSpec> {
    check_box(b)?;
    if !(search_to_target_ratio >= 1.0 && search_to_target_ratio.is_finite()) {
        return Err(Error::Invalid(format!(
            "search to target ratio {search_to_target_ratio} must be >= 1"
        )));
    }
    CropSpec::new(
        b.center(),
        context_side(b) * search_to_target_ratio,
        out_size,
    )
}

/// Bilinear resample of the square region described by `spec`.
///
/// Output samples whose centre falls outside the frame take `pad`; samples
/// inside the frame interpolate with edge clamping.
pub fn crop_and_resize(image: &Image, spec: &CropSpec, pad: [f32; 3]) -> Image {
    let n = spec.out_size;
    let mut out = Image::new(n, n);
    if image.is_empty() {
        for px in out.data.chunks_exact_mut(3) {
            px.copy_from_slice(&pad);
        }
        return out;
    }
    let (w, h) = (image.width as f64, image.height as f64);
    let inv = 1.0 / spec.scale();
    let half = n as f64 / 2.0;
    // sample positions per output column/row are separable
    let xs: Vec<Option<(usize, usize, f32)>> = (0..n)
        .map(|l| axis_sample((l as f64 + 0.5 - half) * inv + spec.center.0, w, image.width))
        .collect();
    let ys: Vec<Option<(usize, usize, f32)>> = (0..n)
        .map(|k| axis_sample((k as f64 + 0.5 - half) * inv + spec.center.1, h, image.height))
        .collect();
    let stride = image.width * 3;
    for (k, ys) in ys.iter().enumerate() {
        for (l, xs) in xs.iter().enumerate() {
            let o = (k * n + l) * 3;
            match (ys, xs) {
                (Some((y0, y1, wy)), Some((x0, x1, wx))) => {
                    let r0 = y0 * stride;
                    let r1 = y1 * stride;
                    for c in 0..3 {
                        let a = image.data[r0 + x0 * 3 + c];
                        let b = image.data[r0 + x1 * 3 + c];
                        let cc = image.data[r1 + x0 * 3 + c];
                        let d = image.data[r1 + x1 * 3 + c];
                        let top = a + (b - a) * wx;
                        let bot = cc + (d - cc) * wx;
                        out.data[o + c] = top + (bot - top) * wy;
                    }
                }
                _ => out.data[o..o + 3].copy_from_slice(&pad),
            }
        }
    }
    out
}

fn axis_sample(pos: f64, extent: f64, len: usize) -> Option<(usize, usize, f32)> {
    if !(0.0..extent).contains(&pos) {
        return None;
    }
    let f = (pos - 0.5).clamp(0.0, (len - 1) as f64);
    let i0 = f.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    Some((i0, i1, (f - i0 as f64) as f32))
}

/// Frame coordinates `(x, y)` of the centre of output cell `(row, col)`.
pub fn grid_to_frame(cell: (usize, usize), spec: &CropSpec, stride: usize) -> (f64, f64) {
    grid_point_to_frame((cell.1 as f64, cell.0 as f64), spec, stride)
}

/// Frame coordinates of a continuous grid point `(gx, gy)`.
pub fn grid_point_to_frame((gx, gy): (f64, f64), spec: &CropSpec, stride: usize) -> (f64, f64) {
    let s = stride as f64;
    spec.crop_to_frame(((gx + 0.5) * s, (gy + 0.5) * s))
}

/// Continuous grid point `(gx, gy)` of a frame position; inverse of
/// [`grid_point_to_frame`].
pub fn frame_to_grid(point: (f64, f64), spec: &CropSpec, stride: usize) -> (f64, f64) {
    let (u, v) = spec.frame_to_crop(point);
    let s = stride as f64;
    (u / s - 0.5, v / s - 0.5)
}

/// Nearest output cell `(row, col)` to a frame position, if it lies on a
/// `grid x grid` lattice.
pub fn frame_to_cell(point: (f64, f64), spec: &CropSpec, stride: usize, grid: usize) -> Option<(usize, usize)> {
    let (gx, gy) = frame_to_grid(point, spec, stride);
    let (c, r) = (gx.round(), gy.round());
    if c < 0.0 || r < 0.0 || c >= grid as f64 || r >= grid as f64 {
        None
    } else {
        Some((r as usize, c as usize))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Pixel-count IoU on a lattice with `res` samples per unit.
    fn raster_iou(a: &BBox, b: &BBox, lo: f64, hi: f64, res: usize) -> f64 {
        let n = ((hi - lo) * res as f64) as usize;
        let step = (hi - lo) / n as f64;
        let inside = |bx: &BBox, x: f64, y: f64| x >= bx.x_min && x < bx.x_max && y >= bx.y_min && y < bx.y_max;
        let (mut inter, mut union) = (0usize, 0usize);
        for i in 0..n {
            let y = lo + (i as f64 + 0.5) * step;
            for j in 0..n {
                let x = lo + (j as f64 + 0.5) * step;
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                inter += (ia && ib) as usize;
                union += (ia || ib) as usize;
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    #[test]
    fn iou_reference_cases() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        let b = BBox::new(5.0, 5.0, 15.0, 15.0);
        let oracle = raster_iou(&a, &b, 0.0, 15.0, 40);
        assert!(close(oracle, 25.0 / 175.0, 1e-9));
        assert!(close(iou(&a, &b), oracle, 1e-12));
    }

    #[test]
    fn iou_of_degenerate_boxes_is_zero() {
        let p = BBox::new(3.0, 3.0, 3.0, 3.0);
        assert_eq!(iou(&p, &p), 0.0);
        let line = BBox::new(0.0, 0.0, 10.0, 0.0);
        assert_eq!(iou(&line, &BBox::new(0.0, 0.0, 10.0, 10.0)), 0.0);
    }

    #[test]
    fn target_crop_side_closed_form() {
        let sq = BBox::from_center_size(50.0, 50.0, 50.0, 50.0);
        assert!(close(make_target_crop_spec(&sq, 64).unwrap().side, 100.0, 1e-12));
        let r = BBox::from_center_size(0.0, 0.0, 30.0, 10.0);
        let side = make_target_crop_spec(&r, 64).unwrap().side;
        assert!(close(side, (50.0f64 * 30.0).sqrt(), 1e-12));
        assert!(close(side, 38.7298, 1e-4));
        let flat = BBox::from_center_size(0.0, 0.0, 0.0, 0.0);
        assert!(matches!(make_target_crop_spec(&flat, 64), Err(Error::DegenerateBox(_))));
    }

    #[test]
    fn search_crop_scales_target_side() {
        let sq = BBox::from_center_size(50.0, 50.0, 50.0, 50.0);
        let s = make_search_crop_spec(&sq, 255, 255.0 / 127.0).unwrap();
        assert!(close(s.side, 200.787, 1e-3));
        let same = make_search_crop_spec(&sq, 64, 1.0).unwrap();
        assert_eq!(same, make_target_crop_spec(&sq, 64).unwrap());
        assert_eq!(make_search_crop_spec(&sq, 128, 2.0).unwrap().side, 200.0);
    }

    #[test]
    fn crop_of_constant_image_is_constant() {
        let img = Image::filled(40, 30, [0.2, 0.4, 0.6]);
        for &out in &[7usize, 40, 80] {
            let spec = CropSpec::new((20.0, 15.0), 30.0, out).unwrap();
            let c = crop_and_resize(&img, &spec, [1.0, 1.0, 1.0]);
            assert!(c.data.chunks_exact(3).all(|p| p == [0.2, 0.4, 0.6]));
        }
    }

    #[test]
    fn crop_outside_frame_is_all_pad() {
        let img = Image::filled(10, 10, [0.1, 0.1, 0.1]);
        let spec = CropSpec::new((100.0, -50.0), 20.0, 8).unwrap();
        let c = crop_and_resize(&img, &spec, [0.3, 0.5, 0.7]);
        assert!(c.data.chunks_exact(3).all(|p| p == [0.3, 0.5, 0.7]));
    }

    #[test]
    fn checkerboard_upsampled_by_two() {
        // 2x2 checkerboard: f(x, y) = x + y - 2xy under bilinear weights
        let mut img = Image::new(2, 2);
        img.set_pixel(1, 0, [1.0; 3]);
        img.set_pixel(0, 1, [1.0; 3]);
        let spec = CropSpec::new((1.0, 1.0), 2.0, 4).unwrap();
        let c = crop_and_resize(&img, &spec, [0.0; 3]);
        // sample centres map to frame x = 0.25, 0.75, 1.25, 1.75; interpolation
        // coordinate x - 0.5 clamped to [0, 1] gives 0, 0.25, 0.75, 1
        let t = [0.0, 0.25, 0.75, 1.0];
        for (k, &ty) in t.iter().enumerate() {
            for (l, &tx) in t.iter().enumerate() {
                let expected = tx + ty - 2.0 * tx * ty;
                assert!(close(c.pixel(l, k)[0] as f64, expected, 1e-6), "({k},{l})");
            }
        }
        assert!(close(c.pixel(1, 1)[0] as f64, 0.375, 1e-7));
        assert!(close(c.pixel(2, 1)[0] as f64, 0.625, 1e-7));
    }

    #[test]
    fn grid_cell_origin_maps_to_crop_pixel_two() {
        let spec = CropSpec::new((10.0, 20.0), 64.0, 64).unwrap();
        assert_eq!(spec.frame_to_crop(grid_to_frame((0, 0), &spec, 4)), (2.0, 2.0));
        assert_eq!(grid_to_frame((0, 0), &spec, 4), (10.0 - 30.0, 20.0 - 30.0));
    }

    #[test]
    fn centre_cell_of_odd_grid_maps_to_crop_centre() {
        // 36 px crop, stride 4: 9 x 9 grid with a true centre cell
        let spec = CropSpec::new((123.5, -7.25), 90.0, 36).unwrap();
        let (x, y) = grid_to_frame((4, 4), &spec, 4);
        assert!(close(x, 123.5, 1e-12) && close(y, -7.25, 1e-12));
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(
            ax in -50.0f64..50.0, ay in -50.0f64..50.0, aw in 0.1f64..40.0, ah in 0.1f64..40.0,
            bx in -50.0f64..50.0, by in -50.0f64..50.0, bw in 0.1f64..40.0, bh in 0.1f64..40.0,
        ) {
            let a = BBox::from_center_size(ax, ay, aw, ah);
            let b = BBox::from_center_size(bx, by, bw, bh);
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&b, &a));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn crop_round_trip_restores_box(
            cx in -200.0f64..400.0, cy in -200.0f64..400.0, w in 1.0f64..120.0, h in 1.0f64..120.0,
            ox in -30.0f64..30.0, oy in -30.0f64..30.0, out in 8usize..300, ratio in 1.0f64..3.0,
        ) {
            let anchor = BBox::from_center_size(cx + ox, cy + oy, w * 0.8, h * 1.1);
            let spec = make_search_crop_spec(&anchor, out, ratio).unwrap();
            let b = BBox::from_center_size(cx, cy, w, h);
            let back = spec.box_from_crop(&spec.box_to_crop(&b));
            prop_assert!((back.x_min - b.x_min).abs() < 1e-6);
            prop_assert!((back.y_min - b.y_min).abs() < 1e-6);
            prop_assert!((back.x_max - b.x_max).abs() < 1e-6);
            prop_assert!((back.y_max - b.y_max).abs() < 1e-6);
        }

        #[test]
        fn search_to_target_side_ratio_is_exact(
            w in 1.0f64..200.0, h in 1.0f64..200.0, ratio in 1.0f64..4.0, n in 1usize..400, m in 1usize..400,
        ) {
            let b = BBox::from_center_size(0.0, 0.0, w, h);
            let s = make_search_crop_spec(&b, n, ratio).unwrap().side;
            let t = make_target_crop_spec(&b, m).unwrap().side;
            prop_assert!((s / t - ratio).abs() <= 1e-12 * ratio);
        }

        #[test]
        fn grid_round_trip_within_quantisation(
            x in -100.0f64..300.0, y in -100.0f64..300.0, side in 20.0f64..300.0, grid in 4usize..40,
        ) {
            let spec = CropSpec::new((100.0, 100.0), side, grid * 4).unwrap();
            let p = (x, y);
            let (gx, gy) = frame_to_grid(p, &spec, 4);
            let cell = (gy.round().max(0.0) as usize, gx.round().max(0.0) as usize);
            if gx.round() >= 0.0 && gy.round() >= 0.0 {
                let (fx, fy) = grid_to_frame(cell, &spec, 4);
                let bound = 2.0 * side / spec.out_size as f64 + 1e-9;
                prop_assert!((fx - x).abs() <= bound && (fy - y).abs() <= bound);
            }
            let back = grid_point_to_frame((gx, gy), &spec, 4);
            prop_assert!((back.0 - x).abs() < 1e-9 && (back.1 - y).abs() < 1e-9);
        }
    }
}
