//! Numerical checks of the partition rule's guarantees.
//!
//! * Every candidate set has consecutive slice log-aspects at most `2 ln 2`
//!   apart, so the best grid leaves each slice within `[1/2, 2]`.
//! * A dense sweep over image area and aspect bounds slice area and aspect.
//! * Monte Carlo and midpoint quadrature estimate the mean and variance of
//!   the slice aspect and slice area under a uniform image distribution.
//!
//! Images are parameterized by the area ratio `n = W*H / s` (with `s` the
//! encoder area) and the aspect `a = W / H`, so `W = sqrt(n s a)` and
//! `H = sqrt(n s / a)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::partition::{candidate_grids, select_grid_real, VitSpec};

/// Bound on consecutive candidate log-aspects.
pub const RATIO_GAP_BOUND: f64 = 2.0 * std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioBound {
    pub n_max: u32,
    pub holds: bool,
    /// Largest gap between neighbouring distinct `ln(rows / cols)` values of
    /// any candidate set.
    pub worst_gap: f64,
    /// Ideal count at which the worst gap occurs.
    pub worst_n: u32,
}

pub fn enumerate_ratio_bound(n_max: u32) -> Result<RatioBound> {
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    let mut worst = (0.0f64, 1u32);
    for n in 1..=n_max {
        let mut logs: Vec<f64> = candidate_grids(n)
            .iter()
            .map(|g| (f64::from(g.rows) / f64::from(g.cols)).ln())
            .collect();
        logs.sort_by(f64::total_cmp);
        logs.dedup();
        let gap = logs.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        if gap > worst.0 {
            worst = (gap, n);
        }
    }
    Ok(RatioBound {
        n_max,
        holds: worst.0 <= RATIO_GAP_BOUND + 1e-12,
        worst_gap: worst.0,
        worst_n: worst.1,
    })
}

/// Slice aspect `W n / (H m)` and area `W H / (m n s)` for one image.
pub fn slice_stats(area_ratio: f64, aspect: f64, vit: VitSpec) -> (f64, f64) {
    let s = vit.area();
    let w = (area_ratio * s * aspect).sqrt();
    let h = (area_ratio * s / aspect).sqrt();
    let (grid, _, _) = select_grid_real(w, h, vit);
    let ratio = (w * f64::from(grid.rows)) / (h * f64::from(grid.cols));
    let area = (w * h) / (f64::from(grid.count()) * s);
    (ratio, area)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepReport {
    pub points: u64,
    pub n_range: (f64, f64),
    pub aspect_range: (f64, f64),
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub min_area: f64,
    pub max_area: f64,
}

/// Midpoint grid of `density x density` points; `n` is spaced linearly over
/// the half-open `(lo, hi]` and the aspect logarithmically over `[lo, hi]`.
pub fn sweep_slice_bounds(
    density: u32,
    aspect_range: (f64, f64),
    n_range: (f64, f64),
    vit: VitSpec,
) -> Result<SweepReport> {
    if density < 1000 {
        return Err(Error::InvalidArgument(format!("density must be at least 1000, got {density}")));
    }
    check_range("aspect", aspect_range, true)?;
    check_range("area ratio", n_range, false)?;
    let d = f64::from(density);
    let (la, lb) = (aspect_range.0.ln(), aspect_range.1.ln());
    let rows: Vec<[f64; 4]> = (0..density)
        .into_par_iter()
        .map(|i| {
            let n = n_range.0 + (f64::from(i) + 0.5) * (n_range.1 - n_range.0) / d;
            let mut acc = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
            for j in 0..density {
                let a = (la + (f64::from(j) + 0.5) * (lb - la) / d).exp();
                let (r, s) = slice_stats(n, a, vit);
                acc = [acc[0].min(r), acc[1].max(r), acc[2].min(s), acc[3].max(s)];
            }
            acc
        })
        .collect();
    let fold = rows.iter().fold(
        [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY],
        |a, r| [a[0].min(r[0]), a[1].max(r[1]), a[2].min(r[2]), a[3].max(r[3])],
    );
    Ok(SweepReport {
        points: u64::from(density) * u64::from(density),
        n_range,
        aspect_range,
        min_ratio: fold[0],
        max_ratio: fold[1],
        min_area: fold[2],
        max_area: fold[3],
    })
}

fn check_range(name: &str, (lo, hi): (f64, f64), closed_positive: bool) -> Result<()> {
    let ok = lo.is_finite() && hi.is_finite() && lo < hi && if closed_positive { lo > 0.0 } else { lo >= 0.0 };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} range [{lo}, {hi}] is empty or not positive")))
    }
}

/// Uniform image distribution over area ratio and aspect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistributionSpec {
    /// Half-open `(lo, hi]`.
    pub area_ratio_range: (f64, f64),
    pub aspect_range: (f64, f64),
}

impl DistributionSpec {
    pub fn new(area_ratio_range: (f64, f64), aspect_range: (f64, f64)) -> Result<Self> {
        check_range("area ratio", area_ratio_range, false)?;
        check_range("aspect", aspect_range, true)?;
        Ok(Self {
            area_ratio_range,
            aspect_range,
        })
    }

    /// Area ratio in `(0, 20]`, aspect in `[1, 6]`.
    pub fn wide() -> Self {
        Self {
            area_ratio_range: (0.0, 20.0),
            aspect_range: (1.0, 6.0),
        }
    }

    /// Area ratio in `[1, 3]`, aspect in `[1, 2]`.
    pub fn narrow() -> Self {
        Self {
            area_ratio_range: (1.0, 3.0),
            aspect_range: (1.0, 2.0),
        }
    }

    fn point(&self, u: f64, v: f64) -> (f64, f64) {
        let (n0, n1) = self.area_ratio_range;
        let (a0, a1) = self.aspect_range;
        (n0 + u * (n1 - n0), a0 + v * (a1 - a0))
    }
}

/// Streaming mean and second central moment.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let count = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let delta = other.mean - self.mean;
        Moments {
            count,
            mean: self.mean + delta * nb / count as f64,
            m2: self.m2 + other.m2 + delta * delta * na * nb / count as f64,
        }
    }

    /// Sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count.max(1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StatReport {
    pub expectation: f64,
    pub variance: f64,
    pub samples: u64,
    pub std_error: f64,
    pub seed: u64,
}

impl StatReport {
    fn from_moments(m: &Moments, seed: u64) -> Self {
        Self {
            expectation: m.mean,
            variance: m.variance(),
            samples: m.count,
            std_error: m.std_error(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub distribution: DistributionSpec,
    pub ratio: StatReport,
    pub area: StatReport,
    /// `max(r, 1/r)`: slice aspect folded onto `[1, inf)`.
    pub folded_ratio: StatReport,
}

/// Fixed shard layout; part of the reproducibility contract.
pub const MC_SHARDS: u64 = 64;

/// Per-shard streams of one seeded ChaCha8 generator; shards are combined in
/// index order so the result is bit-identical for a given seed.
pub fn monte_carlo_expectations(
    dist: DistributionSpec,
    samples: u64,
    seed: u64,
    vit: VitSpec,
) -> Result<MonteCarloReport> {
    if samples < MC_SHARDS {
        return Err(Error::InvalidArgument(format!("need at least {MC_SHARDS} samples")));
    }
    let shards: Vec<[Moments; 3]> = (0..MC_SHARDS)
        .into_par_iter()
        .map(|shard| {
            let quota = samples / MC_SHARDS + u64::from(shard < samples % MC_SHARDS);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard);
            let mut acc = [Moments::default(); 3];
            for _ in 0..quota {
                // 1 - [0, 1) keeps the area ratio's lower end open
                let u = 1.0 - rng.gen::<f64>();
                let v = rng.gen::<f64>();
                let (n, a) = dist.point(u, v);
                let (r, s) = slice_stats(n, a, vit);
                acc[0].push(r);
                acc[1].push(s);
                acc[2].push(r.max(1.0 / r));
            }
            acc
        })
        .collect();
    let total = shards.iter().fold([Moments::default(); 3], |a, s| {
        [a[0].merge(&s[0]), a[1].merge(&s[1]), a[2].merge(&s[2])]
    });
    Ok(MonteCarloReport {
        distribution: dist,
        ratio: StatReport::from_moments(&total[0], seed),
        area: StatReport::from_moments(&total[1], seed),
        folded_ratio: StatReport::from_moments(&total[2], seed),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureEstimate {
    pub cells_per_axis: u32,
    pub ratio_mean: f64,
    pub ratio_variance: f64,
    pub area_mean: f64,
    pub area_variance: f64,
}

/// Midpoint rule over the distribution's rectangle.
pub fn quadrature(dist: DistributionSpec, cells_per_axis: u32, vit: VitSpec) -> Result<QuadratureEstimate> {
    if cells_per_axis == 0 {
        return Err(Error::InvalidArgument("need at least one cell".into()));
    }
    let c = f64::from(cells_per_axis);
    let rows: Vec<[f64; 4]> = (0..cells_per_axis)
        .into_par_iter()
        .map(|i| {
            let u = (f64::from(i) + 0.5) / c;
            let mut sums = [0.0; 4];
            for j in 0..cells_per_axis {
                let (n, a) = dist.point(u, (f64::from(j) + 0.5) / c);
                let (r, s) = slice_stats(n, a, vit);
                sums[0] += r;
                sums[1] += r * r;
                sums[2] += s;
                sums[3] += s * s;
            }
            sums
        })
        .collect();
    let mut sums = [0.0; 4];
    for row in &rows {
        for k in 0..4 {
            sums[k] += row[k];
        }
    }
    let cells = c * c;
    let [r1, r2, s1, s2] = sums.map(|v| v / cells);
    Ok(QuadratureEstimate {
        cells_per_axis,
        ratio_mean: r1,
        ratio_variance: r2 - r1 * r1,
        area_mean: s1,
        area_variance: s2 - s1 * s1,
    })
}

/// One numerical claim with its tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimCheck {
    pub name: String,
    pub expected: f64,
    pub observed: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ClaimCheck {
    pub fn new(name: impl Into<String>, expected: f64, observed: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            expected,
            observed,
            tolerance,
            pass: (observed - expected).abs() <= tolerance,
        }
    }

    pub fn at_most(name: impl Into<String>, bound: f64, observed: f64) -> Self {
        Self {
            name: name.into(),
            expected: bound,
            observed,
            tolerance: 0.0,
            pass: observed <= bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureCheck {
    pub distribution: DistributionSpec,
    pub coarse: QuadratureEstimate,
    pub fine: QuadratureEstimate,
    /// `|MC - fine| / sqrt(se_mc^2 + (fine - coarse)^2)` for the two means.
    pub ratio_z: f64,
    pub area_z: f64,
    pub pass: bool,
}

pub fn quadrature_check(
    mc: &MonteCarloReport,
    cells_per_axis: u32,
    vit: VitSpec,
) -> Result<QuadratureCheck> {
    let coarse = quadrature(mc.distribution, cells_per_axis / 2, vit)?;
    let fine = quadrature(mc.distribution, cells_per_axis, vit)?;
    let z = |mc: &StatReport, f: f64, c: f64| {
        let se = (mc.std_error.powi(2) + (f - c).powi(2)).sqrt();
        (mc.expectation - f).abs() / se
    };
    let ratio_z = z(&mc.ratio, fine.ratio_mean, coarse.ratio_mean);
    let area_z = z(&mc.area, fine.area_mean, coarse.area_mean);
    Ok(QuadratureCheck {
        distribution: mc.distribution,
        coarse,
        fine,
        ratio_z,
        area_z,
        pass: ratio_z <= 3.0 && area_z <= 3.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingCheck {
    pub samples: u64,
    pub se_single: f64,
    pub se_double: f64,
    /// Ideally `sqrt(2)`.
    pub ratio: f64,
    pub pass: bool,
}

/// Standard error should shrink by `sqrt(2)` (within 10 %) when the sample
/// count doubles.
pub fn std_error_scaling(dist: DistributionSpec, samples: u64, seed: u64, vit: VitSpec) -> Result<ScalingCheck> {
    let single = monte_carlo_expectations(dist, samples, seed, vit)?;
    let double = monte_carlo_expectations(dist, 2 * samples, seed.wrapping_add(1), vit)?;
    let ratio = single.ratio.std_error / double.ratio.std_error;
    Ok(ScalingCheck {
        samples,
        se_single: single.ratio.std_error,
        se_double: double.ratio.std_error,
        ratio,
        pass: (ratio / std::f64::consts::SQRT_2 - 1.0).abs() <= 0.1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProofOptions {
    pub n_max: u32,
    pub sweep_density: u32,
    pub samples: u64,
    pub seed: u64,
    pub quadrature_cells: u32,
}

impl Default for ProofOptions {
    fn default() -> Self {
        Self {
            n_max: 20,
            sweep_density: 1000,
            samples: 10_000_000,
            seed: 42,
            quadrature_cells: 2000,
        }
    }
}

/// Everything `verify proofs` reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProofReport {
    pub options: ProofOptions,
    pub ratio_bound: RatioBound,
    pub sweep: SweepReport,
    pub wide: MonteCarloReport,
    pub narrow: MonteCarloReport,
    pub quadrature: Vec<QuadratureCheck>,
    pub scaling: ScalingCheck,
    pub claims: Vec<ClaimCheck>,
    /// Stated sampling measure, printed next to any statistic mismatch.
    pub distribution_note: String,
    pub all_pass: bool,
}

pub const DISTRIBUTION_NOTE: &str = "area ratio n uniform on (lo, hi], aspect a = W/H uniform on [lo, hi], \
W = sqrt(n s a), H = sqrt(n s / a); slice aspect r = W n_rows / (H m_cols); slice area = n / (m_cols n_rows); \
a single slice is only a candidate when N = 1";

/// Expected values from the original derivation.
pub mod published {
    pub const AREA_MIN: f64 = 0.33;
    pub const AREA_MAX: f64 = 1.5;
    pub const WIDE_RATIO_MEAN: f64 = 1.258;
    pub const WIDE_RATIO_VAR: f64 = 0.048;
    pub const WIDE_AREA_MEAN: f64 = 1.057;
    pub const WIDE_AREA_VAR: f64 = 0.016;
    pub const NARROW_RATIO_MEAN: f64 = 1.147;
    pub const NARROW_RATIO_VAR: f64 = 0.011;
}

pub fn run_all(opts: ProofOptions, vit: VitSpec) -> Result<ProofReport> {
    use published::*;
    let ratio_bound = enumerate_ratio_bound(opts.n_max)?;
    // n <= 1 yields a single slice whose area shrinks with the image, so the
    // area bounds are only claimed above one encoder area.
    let sweep = sweep_slice_bounds(opts.sweep_density, (1.0 / 6.0, 6.0), (1.0, f64::from(opts.n_max)), vit)?;
    let wide = monte_carlo_expectations(DistributionSpec::wide(), opts.samples, opts.seed, vit)?;
    let narrow = monte_carlo_expectations(DistributionSpec::narrow(), opts.samples, opts.seed, vit)?;
    let quadrature = vec![
        quadrature_check(&wide, opts.quadrature_cells, vit)?,
        quadrature_check(&narrow, opts.quadrature_cells, vit)?,
    ];
    let scaling = std_error_scaling(DistributionSpec::wide(), (opts.samples / 10).max(1_000_000), opts.seed, vit)?;

    let claims = vec![
        ClaimCheck::at_most("ratio_bound.worst_gap", RATIO_GAP_BOUND, ratio_bound.worst_gap),
        ClaimCheck::new("sweep.min_area", AREA_MIN, sweep.min_area, 0.01),
        ClaimCheck::new("sweep.max_area", AREA_MAX, sweep.max_area, 0.01),
        ClaimCheck::at_most("sweep.max_ratio", 2.0, sweep.max_ratio),
        ClaimCheck::at_most("sweep.inverse_min_ratio", 2.0, 1.0 / sweep.min_ratio),
        ClaimCheck::new("wide.ratio.mean", WIDE_RATIO_MEAN, wide.ratio.expectation, 0.02),
        ClaimCheck::new("wide.ratio.variance", WIDE_RATIO_VAR, wide.ratio.variance, 0.01),
        ClaimCheck::new("wide.area.mean", WIDE_AREA_MEAN, wide.area.expectation, 0.02),
        ClaimCheck::new("wide.area.variance", WIDE_AREA_VAR, wide.area.variance, 0.01),
        ClaimCheck::new("narrow.ratio.mean", NARROW_RATIO_MEAN, narrow.ratio.expectation, 0.02),
        ClaimCheck::new("narrow.ratio.variance", NARROW_RATIO_VAR, narrow.ratio.variance, 0.01),
    ];
    let all_pass = ratio_bound.holds
        && claims.iter().all(|c| c.pass)
        && quadrature.iter().all(|q| q.pass)
        && scaling.pass;
    Ok(ProofReport {
        options: opts,
        ratio_bound,
        sweep,
        wide,
        narrow,
        quadrature,
        scaling,
        claims,
        distribution_note: DISTRIBUTION_NOTE.to_string(),
        all_pass,
    })
}
