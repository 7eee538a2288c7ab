//! Slice-count selection and grid choice for native-resolution images.
//!
//! An image is cut into roughly `ceil(image area / encoder area)` slices. The
//! grid is chosen among the factorizations of `N-1`, `N` and `N+1` so that
//! each slice's aspect ratio stays close to the encoder's pretraining aspect.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel dimensions of an input image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions(format!(
                "image must be non-empty, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }
}

impl std::str::FromStr for ImageSize {
    type Err = Error;

    /// Parses `WxH`, e.g. `672x1008`.
    fn from_str(s: &str) -> Result<Self> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::InvalidDimensions(format!("expected WxH, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u32>()
                .map_err(|_| Error::InvalidDimensions(format!("expected WxH, got {s:?}")))
        };
        Self::new(parse(w)?, parse(h)?)
    }
}

impl std::fmt::Display for ImageSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Pretraining geometry of the vision encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "VitSpecRepr", into = "VitSpecRepr")]
pub struct VitSpec {
    width: u32,
    height: u32,
    patch: u32,
    budget: u32,
}

#[derive(Serialize, Deserialize)]
struct VitSpecRepr {
    w: u32,
    h: u32,
    patch: u32,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    budget: Option<u32>,
}

impl TryFrom<VitSpecRepr> for VitSpec {
    type Error = Error;

    fn try_from(r: VitSpecRepr) -> Result<Self> {
        let spec = VitSpec::new(r.w, r.h, r.patch)?;
        match r.budget {
            Some(m) if m != spec.budget => Err(Error::InvalidDimensions(format!(
                "M={m} does not match {}x{} at patch {} (expected {})",
                r.w, r.h, r.patch, spec.budget
            ))),
            _ => Ok(spec),
        }
    }
}

impl From<VitSpec> for VitSpecRepr {
    fn from(v: VitSpec) -> Self {
        Self {
            w: v.width,
            h: v.height,
            patch: v.patch,
            budget: Some(v.budget),
        }
    }
}

impl VitSpec {
    /// Builds a spec; the token budget is derived from the patch grid.
    pub fn new(width: u32, height: u32, patch: u32) -> Result<Self> {
        if width == 0 || height == 0 || patch == 0 {
            return Err(Error::InvalidDimensions(format!(
                "encoder resolution and patch must be positive, got {width}x{height}/{patch}"
            )));
        }
        if width % patch != 0 || height % patch != 0 {
            return Err(Error::InvalidDimensions(format!(
                "encoder resolution {width}x{height} is not a multiple of patch {patch}"
            )));
        }
        let budget = (width / patch) * (height / patch);
        Ok(Self {
            width,
            height,
            patch,
            budget,
        })
    }

    /// CLIP ViT-L/14 at 336x336: 24x24 patches, 576 position embeddings.
    pub fn clip_l14_336() -> Self {
        Self::new(336, 336, 14).expect("static geometry is valid")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn patch(&self) -> u32 {
        self.patch
    }

    /// Number of position embeddings, `M`.
    pub fn budget(&self) -> u32 {
        self.budget
    }

    pub fn area(&self) -> f64 {
        f64::from(self.width) * f64::from(self.height)
    }

    pub fn aspect(&self) -> f64 {
        f64::from(self.width) / f64::from(self.height)
    }
}

impl Default for VitSpec {
    fn default() -> Self {
        Self::clip_l14_336()
    }
}

/// A grid of `cols` x `rows` slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SliceGrid {
    #[serde(rename = "m")]
    pub cols: u32,
    #[serde(rename = "n")]
    pub rows: u32,
}

impl SliceGrid {
    pub fn new(cols: u32, rows: u32) -> Result<Self> {
        if cols == 0 || rows == 0 {
            return Err(Error::InvalidDimensions(format!(
                "slice grid must be at least 1x1, got {cols}x{rows}"
            )));
        }
        Ok(Self { cols, rows })
    }

    pub fn count(&self) -> u32 {
        self.cols * self.rows
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// `ceil(W_I * H_I / (W_v * H_v))`, at least 1.
pub fn ideal_slice_count(image: ImageSize, vit: VitSpec) -> u32 {
    let vit_area = u64::from(vit.width) * u64::from(vit.height);
    let n = image.area().div_ceil(vit_area).max(1);
    u32::try_from(n).unwrap_or(u32::MAX)
}

/// Same as [`ideal_slice_count`] for a real-valued area ratio `image / encoder`.
pub fn ideal_slice_count_for_ratio(area_ratio: f64) -> u32 {
    // Exact integers stay on their own count: ratio 3.0 means three slices.
    (area_ratio.ceil() as u32).max(1)
}

/// Candidate grids for an ideal slice count `n`, in tie-break order.
///
/// Slice counts are visited as `N`, `N-1`, `N+1`; within one count the widest
/// grid comes first. A slice count of 0 never appears, and a single slice is
/// only offered when `N == 1`: once an image exceeds the encoder area it is
/// always split.
pub fn candidate_grids(n: u32) -> Vec<SliceGrid> {
    let n = n.max(1);
    let mut counts = vec![n];
    if n >= 2 && n - 1 >= 2 {
        counts.push(n - 1);
    }
    counts.push(n + 1);

    let mut out = Vec::new();
    for count in counts {
        for cols in (1..=count).rev() {
            if count % cols == 0 {
                out.push(SliceGrid {
                    cols,
                    rows: count / cols,
                });
            }
        }
    }
    out
}

/// Negative absolute log-deviation of the slice aspect from the encoder aspect.
///
/// Natural log; any base > 1 only rescales the score.
pub fn partition_score(image: ImageSize, vit: VitSpec, grid: SliceGrid) -> f64 {
    score_real(f64::from(image.width), f64::from(image.height), vit, grid)
}

pub(crate) fn score_real(width: f64, height: f64, vit: VitSpec, grid: SliceGrid) -> f64 {
    // |ln(x / y)| as ln(max / min) so mirrored grids score bit-identically
    let x = width * f64::from(grid.rows) * f64::from(vit.height);
    let y = height * f64::from(grid.cols) * f64::from(vit.width);
    0.0 - (x.max(y) / x.min(y)).ln()
}

/// Best grid for a real-valued image size; returns the grid, its score and `N`.
///
/// Used directly by the sweep and Monte Carlo checks, where image sizes are
/// continuous.
pub fn select_grid_real(width: f64, height: f64, vit: VitSpec) -> (SliceGrid, f64, u32) {
    let ideal = ideal_slice_count_for_ratio(width * height / vit.area());
    let (grid, score) = best_grid(width, height, ideal, vit);
    (grid, score, ideal)
}

fn best_grid(width: f64, height: f64, ideal: u32, vit: VitSpec) -> (SliceGrid, f64) {
    let mut best: Option<(SliceGrid, f64)> = None;
    for grid in candidate_grids(ideal) {
        let score = score_real(width, height, vit, grid);
        match best {
            Some((_, s)) if score <= s => {}
            _ => best = Some((grid, score)),
        }
    }
    best.expect("candidate set is never empty")
}

/// The selected slicing of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub image: ImageSize,
    pub vit: VitSpec,
    pub grid: SliceGrid,
    pub score: f64,
    pub ideal_n: u32,
    pub slice_rects: Vec<Rect>,
}

impl PartitionPlan {
    /// Builds a plan for an explicit grid, bypassing grid selection.
    ///
    /// Useful for fixed-grid baselines and for round-trip tests.
    pub fn with_grid(image: ImageSize, vit: VitSpec, grid: SliceGrid) -> Result<Self> {
        if grid.cols > image.width || grid.rows > image.height {
            return Err(Error::InvalidDimensions(format!(
                "cannot cut {image} into {}x{} slices",
                grid.cols, grid.rows
            )));
        }
        Ok(Self {
            image,
            vit,
            grid,
            score: partition_score(image, vit, grid),
            ideal_n: ideal_slice_count(image, vit),
            slice_rects: slice_rects(image, grid),
        })
    }

    pub fn slice_count(&self) -> u32 {
        self.grid.count()
    }
}

/// Maximizes the partition score over [`candidate_grids`].
///
/// Ties go to the first candidate in tie-break order (ideal count, then
/// `N-1`, then `N+1`; wider grids first).
pub fn select_partition(image: ImageSize, vit: VitSpec) -> PartitionPlan {
    let ideal_n = ideal_slice_count(image, vit);
    let (mut grid, _) = best_grid(f64::from(image.width), f64::from(image.height), ideal_n, vit);
    // Tiny images cannot be split into more columns/rows than they have pixels.
    if grid.cols > image.width || grid.rows > image.height {
        grid = SliceGrid { cols: 1, rows: 1 };
    }
    PartitionPlan {
        image,
        vit,
        grid,
        score: partition_score(image, vit, grid),
        ideal_n,
        slice_rects: slice_rects(image, grid),
    }
}

/// Splits `total` into `parts` near-equal lengths; leading parts take the remainder.
fn split_even(total: u32, parts: u32) -> impl Iterator<Item = (u32, u32)> {
    let base = total / parts;
    let rem = total % parts;
    (0..parts).scan(0u32, move |offset, i| {
        let len = base + u32::from(i < rem);
        let start = *offset;
        *offset += len;
        Some((start, len))
    })
}

/// Row-major slice rectangles tiling the image exactly.
pub fn slice_rects(image: ImageSize, grid: SliceGrid) -> Vec<Rect> {
    let cols: Vec<_> = split_even(image.width, grid.cols).collect();
    split_even(image.height, grid.rows)
        .flat_map(|(y, h)| cols.iter().map(move |&(x, w)| Rect { x, y, w, h }))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct Dims {
    w: u32,
    h: u32,
}

#[derive(Serialize, Deserialize)]
struct PlanRepr {
    image: Dims,
    vit: VitSpec,
    #[serde(rename = "ideal_N")]
    ideal_n: u32,
    grid: SliceGrid,
    score: f64,
    slices: Vec<Rect>,
}

impl Serialize for PartitionPlan {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        PlanRepr {
            image: Dims {
                w: self.image.width,
                h: self.image.height,
            },
            vit: self.vit,
            ideal_n: self.ideal_n,
            grid: self.grid,
            score: self.score,
            slices: self.slice_rects.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PartitionPlan {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let r = PlanRepr::deserialize(deserializer)?;
        let image = ImageSize::new(r.image.w, r.image.h).map_err(serde::de::Error::custom)?;
        Ok(Self {
            image,
            vit: r.vit,
            grid: r.grid,
            score: r.score,
            ideal_n: r.ideal_n,
            slice_rects: r.slices,
        })
    }
}
