//! Per-slice patch planning and 2D position-embedding interpolation.
//!
//! Each slice keeps its own aspect ratio: it is resized so that its patch grid
//! fits the encoder's position-embedding budget `M`, and the pretrained `q x q`
//! position table is bilinearly resampled to that grid.

use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{Error, Result};
use crate::partition::{ImageSize, VitSpec};

/// Patch grid for one encoded slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct PatchGrid {
    pub cols: u32,
    pub rows: u32,
}

impl PatchGrid {
    pub fn tokens(&self) -> u32 {
        self.cols * self.rows
    }
}

/// A `rows x cols x dim` table of position embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PosEmbedGrid {
    values: Array3<f64>,
}

impl PosEmbedGrid {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        let (rows, cols, dim) = values.dim();
        if rows == 0 || cols == 0 || dim == 0 {
            return Err(Error::ShapeMismatch(format!(
                "position grid must be non-empty, got {rows}x{cols}x{dim}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("position embedding".into()));
        }
        Ok(Self { values })
    }

    pub fn rows(&self) -> usize {
        self.values.dim().0
    }

    pub fn cols(&self) -> usize {
        self.values.dim().1
    }

    pub fn dim(&self) -> usize {
        self.values.dim().2
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array3<f64> {
        self.values
    }

    /// Row-major flatten back to a `(rows*cols) x dim` sequence.
    pub fn to_sequence(&self) -> Array2<f64> {
        let (rows, cols, dim) = self.values.dim();
        self.values
            .to_owned()
            .into_shape_with_order((rows * cols, dim))
            .expect("contiguous reshape")
    }
}

/// Rounds both sides to the nearest patch multiple, halves rounding up.
///
/// Sides shorter than half a patch are clamped up to one patch.
pub fn snap_to_patch(width: u32, height: u32, patch: u32) -> (u32, u32) {
    let snap = |v: u32| {
        let q = (2 * u64::from(v) + u64::from(patch)) / (2 * u64::from(patch));
        (q.max(1) * u64::from(patch)) as u32
    };
    (snap(width), snap(height))
}

/// Log-distance between a grid's aspect ratio and the target aspect.
fn aspect_deviation(cols: u32, rows: u32, aspect: f64) -> f64 {
    ((f64::from(cols) / f64::from(rows)).ln() - aspect.ln()).abs()
}

/// Largest aspect-preserving patch grid within the budget, no upscaling.
///
/// A slice whose native patch grid (after snapping) already fits the budget
/// keeps that grid. Otherwise the ideal real grid `(sqrt(M a), sqrt(M / a))`
/// is rounded: the floor/ceil combinations that fit in `M` are scored by
/// aspect deviation, then by token count, then by column count.
pub fn fit_patch_grid(slice_w: u32, slice_h: u32, vit: VitSpec) -> Result<PatchGrid> {
    let patch = vit.patch();
    if slice_w < patch || slice_h < patch {
        return Err(Error::DegenerateSlice {
            width: slice_w,
            height: slice_h,
            patch,
        });
    }
    let budget = vit.budget();
    let (snap_w, snap_h) = snap_to_patch(slice_w, slice_h, patch);
    let native = PatchGrid {
        cols: snap_w / patch,
        rows: snap_h / patch,
    };
    if u64::from(native.cols) * u64::from(native.rows) <= u64::from(budget) {
        return Ok(native);
    }
    Ok(budget_grid(f64::from(slice_w) / f64::from(slice_h), budget))
}

fn budget_grid(aspect: f64, budget: u32) -> PatchGrid {
    let m = f64::from(budget);
    let ideal_cols = (m * aspect).sqrt();
    let ideal_rows = (m / aspect).sqrt();
    let around = |v: f64| {
        let lo = (v.floor() as u32).clamp(1, budget);
        let hi = (v.ceil() as u32).clamp(1, budget);
        [lo, hi]
    };

    let mut best = PatchGrid { cols: 1, rows: 1 };
    let mut best_key = (aspect_deviation(1, 1, aspect), 1u32, 1u32);
    for cols in around(ideal_cols) {
        for rows in around(ideal_rows) {
            let tokens = cols * rows;
            if tokens > budget {
                continue;
            }
            let dev = aspect_deviation(cols, rows, aspect);
            let better = dev < best_key.0
                || (dev == best_key.0 && (tokens, cols) > (best_key.1, best_key.2));
            if better {
                best = PatchGrid { cols, rows };
                best_key = (dev, tokens, cols);
            }
        }
    }
    best
}

/// Patch grid for the low-resolution overview of the whole image.
pub fn overview_grid(image: ImageSize, vit: VitSpec) -> Result<PatchGrid> {
    fit_patch_grid(image.width, image.height, vit)
}

/// Reshapes a `(q*q) x l` position sequence to a `q x q x l` grid, row-major.
pub fn reshape_pos_embed_1d_to_2d(seq: ArrayView2<'_, f64>, q: usize) -> Result<PosEmbedGrid> {
    let (len, dim) = seq.dim();
    if q == 0 || len != q * q {
        return Err(Error::NotSquare { len });
    }
    let values = seq
        .to_owned()
        .into_shape_with_order((q, q, dim))
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    PosEmbedGrid::new(values)
}

/// Source coordinate for each target index under the align-corners convention.
fn corner_aligned_coords(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|t| {
            let pos = if dst == 1 || src == 1 {
                0.0
            } else {
                (t as f64) * ((src - 1) as f64) / ((dst - 1) as f64)
            };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear, align-corners resampling of every channel to `target`.
pub fn interpolate_pos_embed(src: &PosEmbedGrid, target: PatchGrid) -> PosEmbedGrid {
    let (src_rows, src_cols, dim) = src.values.dim();
    let rows = corner_aligned_coords(src_rows, target.rows as usize);
    let cols = corner_aligned_coords(src_cols, target.cols as usize);
    let v = &src.values;

    let mut out = Array3::<f64>::zeros((rows.len(), cols.len(), dim));
    for (i, &(r0, r1, fy)) in rows.iter().enumerate() {
        for (j, &(c0, c1, fx)) in cols.iter().enumerate() {
            for ch in 0..dim {
                let top = v[[r0, c0, ch]] + fx * (v[[r0, c1, ch]] - v[[r0, c0, ch]]);
                let bottom = v[[r1, c0, ch]] + fx * (v[[r1, c1, ch]] - v[[r1, c0, ch]]);
                out[[i, j, ch]] = top + fy * (bottom - top);
            }
        }
    }
    PosEmbedGrid { values: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vit() -> VitSpec {
        VitSpec::clip_l14_336()
    }

    fn random_grid(rows: usize, cols: usize, dim: usize, seed: u64) -> PosEmbedGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PosEmbedGrid::new(Array3::from_shape_fn((rows, cols, dim), |_| rng.gen_range(-1.0..1.0)))
            .unwrap()
    }

    /// Independent reference for the budget rule: scans every grid inside
    /// the one-cell window around the ideal real grid.
    fn oracle_budget_grid(aspect: f64, budget: u32) -> PatchGrid {
        let x = (f64::from(budget) * aspect).sqrt();
        let y = (f64::from(budget) / aspect).sqrt();
        let mut best: Option<(f64, u32, u32)> = None;
        for c in 1..=budget {
            for r in 1..=budget / c {
                if (f64::from(c) - x).abs() >= 1.0 || (f64::from(r) - y).abs() >= 1.0 {
                    continue;
                }
                let dev = (f64::from(c) / f64::from(r) / aspect).ln().abs();
                let key = (dev, c * r, c);
                let better = match best {
                    None => true,
                    Some(b) => {
                        key.0 < b.0 - 1e-15 || ((key.0 - b.0).abs() <= 1e-15 && (key.1, key.2) > (b.1, b.2))
                    }
                };
                if better {
                    best = Some(key);
                }
            }
        }
        let (_, tokens, cols) = best.unwrap();
        PatchGrid { cols, rows: tokens / cols }
    }

    #[test]
    fn fit_examples() {
        assert_eq!(fit_patch_grid(336, 336, vit()).unwrap(), PatchGrid { cols: 24, rows: 24 });
        assert_eq!(fit_patch_grid(500, 250, vit()).unwrap(), PatchGrid { cols: 33, rows: 17 });
        assert_eq!(fit_patch_grid(14, 14, vit()).unwrap(), PatchGrid { cols: 1, rows: 1 });
        assert_eq!(
            fit_patch_grid(13, 200, vit()),
            Err(Error::DegenerateSlice { width: 13, height: 200, patch: 14 })
        );
    }

    #[test]
    fn fit_matches_window_oracle_on_examples() {
        assert_eq!(budget_grid(2.0, 576), oracle_budget_grid(2.0, 576));
        assert_eq!(budget_grid(2.0 / 3.0, 576), oracle_budget_grid(2.0 / 3.0, 576));
        assert_eq!(budget_grid(2.0 / 3.0, 576), PatchGrid { cols: 19, rows: 29 });
    }

    #[test]
    fn overview_examples() {
        let g = overview_grid(ImageSize::new(672, 1008).unwrap(), vit()).unwrap();
        assert_eq!(g, PatchGrid { cols: 19, rows: 29 });
        assert!(g.tokens() <= 576);
        let g = overview_grid(ImageSize::new(1000, 1000).unwrap(), vit()).unwrap();
        assert_eq!(g, PatchGrid { cols: 24, rows: 24 });
        let g = overview_grid(ImageSize::new(1000, 500).unwrap(), vit()).unwrap();
        assert_eq!(g, PatchGrid { cols: 33, rows: 17 });
    }

    #[test]
    fn snap_examples() {
        assert_eq!(snap_to_patch(341, 336, 14), (336, 336));
        assert_eq!(snap_to_patch(336, 336, 14), (336, 336));
        assert_eq!(snap_to_patch(343, 343, 14), (350, 350));
        assert_eq!(snap_to_patch(3, 20, 14), (14, 14));
    }

    #[test]
    fn reshape_examples() {
        let seq = Array::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = reshape_pos_embed_1d_to_2d(seq.view(), 2).unwrap();
        assert_eq!(g.values()[[0, 1, 0]], 2.0);
        assert_eq!(g.values()[[1, 0, 0]], 3.0);
        assert_eq!(g.to_sequence(), seq);

        let ok = Array2::<f64>::zeros((576, 8));
        assert!(reshape_pos_embed_1d_to_2d(ok.view(), 24).is_ok());
        let bad = Array2::<f64>::zeros((577, 8));
        assert_eq!(
            reshape_pos_embed_1d_to_2d(bad.view(), 24),
            Err(Error::NotSquare { len: 577 })
        );
    }

    #[test]
    fn reshape_indexing_is_row_major() {
        let seq = Array2::from_shape_fn((576, 3), |(i, c)| (i * 10 + c) as f64);
        let g = reshape_pos_embed_1d_to_2d(seq.view(), 24).unwrap();
        for i in 0..24 {
            for j in 0..24 {
                assert_eq!(g.values()[[i, j, 2]], seq[[i * 24 + j, 2]]);
            }
        }
    }

    #[test]
    fn identity_and_constants() {
        let src = random_grid(24, 24, 4, 3);
        let same = interpolate_pos_embed(&src, PatchGrid { cols: 24, rows: 24 });
        assert_eq!(same, src);

        let constant = PosEmbedGrid::new(Array3::from_elem((24, 24, 2), 0.375)).unwrap();
        let out = interpolate_pos_embed(&constant, PatchGrid { cols: 33, rows: 17 });
        assert!(out.values().iter().all(|&v| v == 0.375));
    }

    #[test]
    fn linear_ramp_closed_form() {
        let ramp = PosEmbedGrid::new(Array3::from_shape_fn((24, 24, 1), |(_, j, _)| j as f64)).unwrap();
        let out = interpolate_pos_embed(&ramp, PatchGrid { cols: 47, rows: 24 });
        for t in 0..47 {
            let expected = t as f64 * 23.0 / 46.0;
            for i in 0..24 {
                assert!((out.values()[[i, t, 0]] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separable_two_step() {
        let src = random_grid(24, 24, 3, 11);
        let wide = interpolate_pos_embed(&src, PatchGrid { cols: 48, rows: 24 });
        let two_step = interpolate_pos_embed(&wide, PatchGrid { cols: 48, rows: 48 });
        let direct = interpolate_pos_embed(&src, PatchGrid { cols: 48, rows: 48 });
        let worst = two_step
            .values()
            .iter()
            .zip(direct.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12, "worst {worst}");
    }

    #[test]
    fn single_cell_targets() {
        let src = random_grid(4, 4, 1, 5);
        let out = interpolate_pos_embed(&src, PatchGrid { cols: 1, rows: 1 });
        assert_eq!(out.values()[[0, 0, 0]], src.values()[[0, 0, 0]]);
    }

    proptest! {
        #[test]
        fn budget_rule_matches_oracle(aspect in 0.01f64..100.0) {
            prop_assert_eq!(budget_grid(aspect, 576), oracle_budget_grid(aspect, 576));
        }

        #[test]
        fn fitted_grids_stay_in_budget(w in 14u32..5000, h in 14u32..5000) {
            let g = fit_patch_grid(w, h, vit()).unwrap();
            prop_assert!(g.tokens() <= 576);
            prop_assert!(g.cols >= 1 && g.rows >= 1);
        }

        #[test]
        fn downscaled_grids_are_maximal(w in 14u32..5000, h in 14u32..5000) {
            let (sw, sh) = snap_to_patch(w, h, 14);
            prop_assume!((sw / 14) * (sh / 14) > 576);
            let g = fit_patch_grid(w, h, vit()).unwrap();
            let a = f64::from(w) / f64::from(h);
            let dev = aspect_deviation(g.cols, g.rows, a);
            let wider = PatchGrid { cols: g.cols + 1, rows: g.rows };
            let taller = PatchGrid { cols: g.cols, rows: g.rows + 1 };
            for next in [wider, taller] {
                prop_assert!(next.tokens() > 576 || aspect_deviation(next.cols, next.rows, a) > dev);
            }
        }

        #[test]
        fn snap_moves_at_most_half_a_patch(w in 7u32..5000, h in 7u32..5000, patch in 1u32..33) {
            prop_assume!(2 * w >= patch && 2 * h >= patch);
            let (sw, sh) = snap_to_patch(w, h, patch);
            let limit = patch.div_ceil(2);
            prop_assert!(sw.abs_diff(w) <= limit && sh.abs_diff(h) <= limit);
            prop_assert!(sw % patch == 0 && sh % patch == 0 && sw >= patch && sh >= patch);
        }

        #[test]
        fn interpolation_is_convex(rows in 1u32..40, cols in 1u32..40, seed in 0u64..1000) {
            let src = random_grid(5, 7, 2, seed);
            let out = interpolate_pos_embed(&src, PatchGrid { cols, rows });
            prop_assert_eq!(out.values().dim(), (rows as usize, cols as usize, 2));
            for ch in 0..2 {
                let channel = src.values().index_axis(ndarray::Axis(2), ch);
                let lo = channel.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = channel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for &v in out.values().index_axis(ndarray::Axis(2), ch) {
                    prop_assert!(v >= lo && v <= hi);
                }
            }
        }
    }
}
