//! Simulators for two failure modes of common visual encoders.
//!
//! * Fixed 512 px tiles placed with equal overlap when a side is not a
//!   multiple of 512. An object whose center lies in a region covered by `j`
//!   tiles is seen `j` times, so counts double in two-tile bands and
//!   quadruple where four tiles meet.
//! * Padding to a square before encoding, which wastes compute on
//!   non-square images and hides genuine grey borders.
//!
//! Scenes are plain data and render to binary PPM images so that the same
//! probes can be sent to a real model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{ImageSize, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Triangle,
    Square,
    /// `size` is the width; `aspect` is width / height.
    Rectangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    White,
    Blue,
    Black,
    /// The mean-pixel grey used as padding by pad-to-square encoders.
    Grey,
}

impl Color {
    pub fn rgb(&self) -> [u8; 3] {
        match self {
            Color::Red => [255, 0, 0],
            Color::Green => [0, 255, 0],
            Color::White => [255, 255, 255],
            Color::Blue => [0, 0, 255],
            Color::Black => [0, 0, 0],
            Color::Grey => [122, 116, 104],
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    /// Center in pixels, `[x, y]`.
    pub center: [f64; 2],
    pub size: f64,
    #[serde(default = "one")]
    pub aspect: f64,
}

impl SceneObject {
    pub fn new(shape: Shape, color: Color, x: f64, y: f64, size: f64) -> Self {
        Self {
            shape,
            color,
            center: [x, y],
            size,
            aspect: 1.0,
        }
    }

    /// Half extents of the bounding box.
    fn half_extent(&self) -> (f64, f64) {
        match self.shape {
            Shape::Rectangle => (self.size / 2.0, self.size / self.aspect / 2.0),
            _ => (self.size / 2.0, self.size / 2.0),
        }
    }

    fn contains(&self, px: f64, py: f64) -> bool {
        let (dx, dy) = (px - self.center[0], py - self.center[1]);
        let (hw, hh) = self.half_extent();
        match self.shape {
            Shape::Circle => dx * dx + dy * dy <= hw * hw,
            Shape::Square | Shape::Rectangle => dx.abs() <= hw && dy.abs() <= hh,
            Shape::Triangle => {
                // apex up, base at the bottom of the bounding box
                let depth = dy + hh;
                (0.0..=2.0 * hh).contains(&depth) && dx.abs() <= depth / 2.0
            }
        }
    }

    fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            center: [self.center[0] + dx, self.center[1] + dy],
            ..*self
        }
    }

    fn scaled(&self, s: f64) -> Self {
        Self {
            center: [self.center[0] * s, self.center[1] * s],
            size: self.size * s,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    #[serde(with = "canvas_serde")]
    pub canvas: ImageSize,
    pub background: Color,
    pub objects: Vec<SceneObject>,
}

mod canvas_serde {
    use super::ImageSize;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Canvas {
        w: u32,
        h: u32,
    }

    pub fn serialize<S: Serializer>(c: &ImageSize, s: S) -> Result<S::Ok, S::Error> {
        Canvas { w: c.width, h: c.height }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ImageSize, D::Error> {
        let c = Canvas::deserialize(d)?;
        ImageSize::new(c.w, c.h).map_err(serde::de::Error::custom)
    }
}

impl SyntheticScene {
    pub fn new(canvas: ImageSize, background: Color, objects: Vec<SceneObject>) -> Result<Self> {
        let scene = Self {
            canvas,
            background,
            objects,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.objects.iter().enumerate() {
            let [x, y] = o.center;
            let inside = (0.0..f64::from(self.canvas.width)).contains(&x)
                && (0.0..f64::from(self.canvas.height)).contains(&y);
            if !inside {
                return Err(Error::InvalidArgument(format!(
                    "object {i} center ({x}, {y}) lies outside the {} canvas",
                    self.canvas
                )));
            }
            if !(o.size > 0.0 && o.size.is_finite() && o.aspect > 0.0 && o.aspect.is_finite()) {
                return Err(Error::InvalidArgument(format!("object {i} is degenerate")));
            }
        }
        Ok(())
    }

    pub fn ground_truth(&self) -> usize {
        self.objects.len()
    }

    /// `rows x cols` identical objects centered in equal cells.
    pub fn counting_grid(
        canvas: ImageSize,
        rows: u32,
        cols: u32,
        shape: Shape,
        color: Color,
        background: Color,
    ) -> Result<Self> {
        let (w, h) = (f64::from(canvas.width), f64::from(canvas.height));
        let size = 0.5 * (w / f64::from(cols)).min(h / f64::from(rows));
        let objects = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|(r, c)| {
                let x = (f64::from(c) + 0.5) * w / f64::from(cols);
                let y = (f64::from(r) + 0.5) * h / f64::from(rows);
                SceneObject::new(shape, color, x, y, size)
            })
            .collect();
        Self::new(canvas, background, objects)
    }

    /// A centered rectangle of aspect `aspect_w:aspect_h` that spans the long
    /// side of a square grey canvas.
    pub fn padding_probe(side: u32, aspect_w: f64, aspect_h: f64, color: Color) -> Result<Self> {
        if !(aspect_w > 0.0 && aspect_h > 0.0) {
            return Err(Error::InvalidArgument("aspect must be positive".into()));
        }
        let canvas = ImageSize::new(side, side)?;
        let s = f64::from(side);
        let (w, h) = if aspect_w >= aspect_h {
            (s, s * aspect_h / aspect_w)
        } else {
            (s * aspect_w / aspect_h, s)
        };
        let rect = SceneObject {
            shape: Shape::Rectangle,
            color,
            center: [s / 2.0, s / 2.0],
            size: w,
            aspect: w / h,
        };
        Self::new(canvas, Color::Grey, vec![rect])
    }

    /// Uniformly rescales canvas and objects.
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        let dim = |v: u32| ((f64::from(v) * scale).round() as u32).max(1);
        let canvas = ImageSize::new(dim(self.canvas.width), dim(self.canvas.height))?;
        let objects = self.objects.iter().map(|o| o.scaled(scale)).collect();
        Self::new(canvas, self.background, objects)
    }
}

/// Tile placement hypothesized for a fixed-tile encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceCover {
    pub tile_px: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
    pub rects: Vec<Rect>,
    pub padded_canvas: [u32; 2],
}

pub const GPT4V_TILE: u32 = 512;

/// Tile origins along one axis: `ceil(dim / tile)` tiles spread with equal
/// overlap, or a single padded tile when the side fits.
fn axis_starts(dim: u32, tile: u32) -> Vec<u32> {
    if dim <= tile {
        return vec![0];
    }
    let k = dim.div_ceil(tile);
    let span = u64::from(dim - tile);
    let gaps = u64::from(k - 1);
    (0..u64::from(k))
        .map(|i| ((2 * i * span + gaps) / (2 * gaps)) as u32)
        .collect()
}

pub fn gpt4v_slice_cover(canvas: ImageSize, tile_px: u32) -> Result<SliceCover> {
    if tile_px == 0 {
        return Err(Error::InvalidArgument("tile size must be positive".into()));
    }
    let xs = axis_starts(canvas.width, tile_px);
    let ys = axis_starts(canvas.height, tile_px);
    let rects = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| Rect { x, y, w: tile_px, h: tile_px }))
        .collect();
    Ok(SliceCover {
        tile_px,
        tiles_x: xs.len() as u32,
        tiles_y: ys.len() as u32,
        rects,
        padded_canvas: [canvas.width.max(tile_px), canvas.height.max(tile_px)],
    })
}

impl SliceCover {
    /// Number of tiles whose half-open square contains the point.
    pub fn multiplicity(&self, x: f64, y: f64) -> u32 {
        self.rects
            .iter()
            .filter(|r| {
                let (x0, y0) = (f64::from(r.x), f64::from(r.y));
                x >= x0 && x < x0 + f64::from(r.w) && y >= y0 && y < y0 + f64::from(r.h)
            })
            .count() as u32
    }

    /// Coordinates strictly inside the canvas where the tile multiplicity
    /// changes along each axis.
    pub fn band_edges(&self, canvas: ImageSize) -> (Vec<u32>, Vec<u32>) {
        let edges = |starts: Vec<u32>, dim: u32| {
            let mut e: Vec<u32> = starts
                .iter()
                .flat_map(|&s| [s, s + self.tile_px])
                .filter(|&v| v > 0 && v < dim)
                .collect();
            e.sort_unstable();
            e.dedup();
            e
        };
        let mut xs: Vec<u32> = self.rects.iter().map(|r| r.x).collect();
        xs.sort_unstable();
        xs.dedup();
        let mut ys: Vec<u32> = self.rects.iter().map(|r| r.y).collect();
        ys.sort_unstable();
        ys.dedup();
        (edges(xs, canvas.width), edges(ys, canvas.height))
    }
}

/// Predicted count: every object counted once per tile holding its center.
pub fn simulate_count(scene: &SyntheticScene, cover: &SliceCover) -> u32 {
    scene
        .objects
        .iter()
        .map(|o| cover.multiplicity(o.center[0], o.center[1]))
        .sum()
}

/// Alternative count: every object counted once per tile that shows any
/// part of it (cut objects appear in several tiles).
pub fn visible_count(scene: &SyntheticScene, cover: &SliceCover) -> u32 {
    scene
        .objects
        .iter()
        .map(|o| {
            let (hw, hh) = o.half_extent();
            let (x0, x1) = (o.center[0] - hw, o.center[0] + hw);
            let (y0, y1) = (o.center[1] - hh, o.center[1] + hh);
            cover
                .rects
                .iter()
                .filter(|r| {
                    let (rx0, ry0) = (f64::from(r.x), f64::from(r.y));
                    let (rx1, ry1) = (rx0 + f64::from(r.w), ry0 + f64::from(r.h));
                    x0 < rx1 && x1 > rx0 && y0 < ry1 && y1 > ry0
                })
                .count() as u32
        })
        .sum()
}

/// Four objects on the corners of a small square around the origin.
pub fn four_object_template(spacing: f64, size: f64, shape: Shape, color: Color) -> Vec<SceneObject> {
    let h = spacing / 2.0;
    [(-h, -h), (h, -h), (-h, h), (h, h)]
        .into_iter()
        .map(|(x, y)| SceneObject::new(shape, color, x, y, size))
        .collect()
}

/// Predicted counts with the template anchored at each grid cell center.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub canvas: [u32; 2],
    pub step_px: u32,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `counts[row][col]` for anchor `(xs[col], ys[row])`.
    pub counts: Vec<Vec<u32>>,
}

impl Heatmap {
    pub fn distinct_values(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.counts.iter().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

fn template_fits(template: &[SceneObject], canvas: ImageSize, x: f64, y: f64) -> bool {
    template.iter().all(|o| {
        let (hw, hh) = o.half_extent();
        let (cx, cy) = (o.center[0] + x, o.center[1] + y);
        cx - hw >= 0.0
            && cy - hh >= 0.0
            && cx + hw <= f64::from(canvas.width)
            && cy + hh <= f64::from(canvas.height)
    })
}

/// Anchors sit at `step/2 + i*step`; only anchors where the whole template
/// fits inside the canvas are kept.
pub fn heatmap_probe(canvas: ImageSize, template: &[SceneObject], step_px: u32) -> Result<Heatmap> {
    if step_px == 0 || template.is_empty() {
        return Err(Error::InvalidArgument("need a positive step and a non-empty template".into()));
    }
    let cover = gpt4v_slice_cover(canvas, GPT4V_TILE)?;
    let anchors = |dim: u32| -> Vec<f64> {
        (0..dim / step_px)
            .map(|i| f64::from(step_px) * (f64::from(i) + 0.5))
            .collect()
    };
    let fits_x = |x: f64| template.iter().all(|o| {
        let (hw, _) = o.half_extent();
        o.center[0] + x - hw >= 0.0 && o.center[0] + x + hw <= f64::from(canvas.width)
    });
    let fits_y = |y: f64| template.iter().all(|o| {
        let (_, hh) = o.half_extent();
        o.center[1] + y - hh >= 0.0 && o.center[1] + y + hh <= f64::from(canvas.height)
    });
    let xs: Vec<f64> = anchors(canvas.width).into_iter().filter(|&x| fits_x(x)).collect();
    let ys: Vec<f64> = anchors(canvas.height).into_iter().filter(|&y| fits_y(y)).collect();
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "template does not fit the {canvas} canvas at step {step_px}"
        )));
    }
    let counts = ys
        .par_iter()
        .map(|&y| {
            xs.iter()
                .map(|&x| {
                    debug_assert!(template_fits(template, canvas, x, y));
                    template
                        .iter()
                        .map(|o| {
                            let p = o.translated(x, y);
                            cover.multiplicity(p.center[0], p.center[1])
                        })
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(Heatmap {
        canvas: [canvas.width, canvas.height],
        step_px,
        xs,
        ys,
        counts,
    })
}

/// Resolution regime of a fixed-tile encoder for one scene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhaseReport {
    /// 1: single tile; 2: several tiles, no object center under four tiles;
    /// 3: some object center lies where four tiles overlap.
    pub phase: u8,
    pub canvas: [u32; 2],
    pub tiles: [u32; 2],
    pub ground_truth: u32,
    pub center_count: u32,
    pub visible_count: u32,
    /// Distinct predicted answers, ascending.
    pub answers: Vec<u32>,
    /// Per-object tile multiplicity of the center, in scene order.
    pub multiplicities: Vec<u32>,
}

pub fn phase_classify(scene: &SyntheticScene, resolution_scale: f64) -> Result<PhaseReport> {
    let scene = scene.scaled(resolution_scale)?;
    let cover = gpt4v_slice_cover(scene.canvas, GPT4V_TILE)?;
    let multiplicities: Vec<u32> = scene
        .objects
        .iter()
        .map(|o| cover.multiplicity(o.center[0], o.center[1]))
        .collect();
    let center_count = multiplicities.iter().sum();
    let visible = visible_count(&scene, &cover);
    let phase = if cover.rects.len() == 1 {
        1
    } else if multiplicities.iter().any(|&m| m >= 4) {
        3
    } else {
        2
    };
    let mut answers = vec![center_count, visible];
    answers.sort_unstable();
    answers.dedup();
    Ok(PhaseReport {
        phase,
        canvas: [scene.canvas.width, scene.canvas.height],
        tiles: [cover.tiles_x, cover.tiles_y],
        ground_truth: scene.objects.len() as u32,
        center_count,
        visible_count: visible,
        answers,
        multiplicities,
    })
}

/// Fraction of a square-padded encoding spent on real content.
pub fn padding_waste(aspect_w: f64, aspect_h: f64) -> Result<f64> {
    if !(aspect_w > 0.0 && aspect_h > 0.0 && aspect_w.is_finite() && aspect_h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "aspect must be positive, got {aspect_w}:{aspect_h}"
        )));
    }
    Ok(aspect_w.min(aspect_h) / aspect_w.max(aspect_h))
}

/// Binary PPM (`P6`) rendering; later objects paint over earlier ones and
/// each pixel is sampled at its center.
pub fn render_scene(scene: &SyntheticScene) -> Vec<u8> {
    let (w, h) = (scene.canvas.width as usize, scene.canvas.height as usize);
    let header = format!("P6\n{w} {h}\n255\n");
    let mut out = Vec::with_capacity(header.len() + 3 * w * h);
    out.extend_from_slice(header.as_bytes());
    let bg = scene.background.rgb();
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let rgb = scene
                .objects
                .iter()
                .rev()
                .find(|o| o.contains(px, py))
                .map_or(bg, |o| o.color.rgb());
            out.extend_from_slice(&rgb);
        }
    }
    out
}
