//! Analysis drivers: a 2D grid scan of sampled program derivatives and a
//! (1+1) evolution strategy that looks for input pairs straddling a
//! behavioural boundary.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derivative::{cdq, pd_approx_with, DerivativeError, NeighborhoodSpec, QuotientResult};
use crate::distance::{euclidean, Compressor, DistanceFn};
use crate::sut::{check_determinism, input_from_coords, Concurrency, Sut, SutError};
use crate::values::Value;

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error(transparent)]
    Derivative(#[from] DerivativeError),
    #[error(transparent)]
    Sut(#[from] SutError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("grid geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("no boundary found within {evaluations} evaluations")]
    NoBoundaryFound { evaluations: usize },
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

/// Mixes a 64-bit value (splitmix64 finalizer).
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for an independent sub-stream `index` of `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index))
}

fn cell_seed(seed: u64, col: usize, row: usize) -> u64 {
    derive_seed(seed, ((row as u64) << 32) | col as u64)
}

// ---------------------------------------------------------------------------
// Grid scan
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridScanConfig {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Cells per axis.
    pub resolution: usize,
    /// Neighbours sampled per cell.
    pub samples: usize,
    /// Sampling half-width; half the (smaller) cell side when absent.
    pub radius: Option<f64>,
    pub compressor: Compressor,
    pub seed: u64,
}

impl Default for GridScanConfig {
    fn default() -> Self {
        GridScanConfig {
            x_range: (-2.0, 8.0),
            y_range: (-2.0, 8.0),
            resolution: 100,
            samples: 32,
            radius: None,
            compressor: Compressor::default(),
            seed: crate::DEFAULT_SEED,
        }
    }
}

impl GridScanConfig {
    pub fn validate(&self) -> Result<(), ExploreError> {
        for (name, (lo, hi)) in [("x", self.x_range), ("y", self.y_range)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(ExploreError::Config(format!(
                    "{name} range [{lo}, {hi}] is empty"
                )));
            }
        }
        if self.resolution < 2 {
            return Err(ExploreError::Config("resolution must be >= 2".into()));
        }
        if self.samples == 0 {
            return Err(ExploreError::Config("samples must be >= 1".into()));
        }
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(ExploreError::Config("radius must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            x_range: self.x_range,
            y_range: self.y_range,
            resolution: self.resolution,
        }
    }

    pub fn effective_radius(&self) -> f64 {
        self.radius.unwrap_or_else(|| {
            let g = self.geometry();
            0.5 * g.cell_width().min(g.cell_height())
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub resolution: usize,
}

impl GridGeometry {
    pub fn cell_width(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) / self.resolution as f64
    }

    pub fn cell_height(&self) -> f64 {
        (self.y_range.1 - self.y_range.0) / self.resolution as f64
    }

    pub fn x_center(&self, col: usize) -> f64 {
        self.x_range.0 + (col as f64 + 0.5) * self.cell_width()
    }

    pub fn y_center(&self, row: usize) -> f64 {
        self.y_range.0 + (row as f64 + 0.5) * self.cell_height()
    }

    /// `[x_lo, x_hi, y_lo, y_hi]` of a cell.
    pub fn cell_bounds(&self, col: usize, row: usize) -> [f64; 4] {
        let (w, h) = (self.cell_width(), self.cell_height());
        let x0 = self.x_range.0 + col as f64 * w;
        let y0 = self.y_range.0 + row as f64 * h;
        [x0, x0 + w, y0, y0 + h]
    }

    pub fn len(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn is_empty(&self) -> bool {
        self.resolution == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatCell {
    pub center: (f64, f64),
    /// `None` when no sampled neighbour gave a defined quotient.
    pub quotient: Option<f64>,
    /// The neighbour pair that produced the quotient.
    pub witness: Option<(Value, Value)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridProvenance {
    pub sut: String,
    pub config: GridScanConfig,
}

/// Quotients over a grid. Cells are stored row-major, row 0 at the low end of
/// the y range, column 0 at the low end of the x range.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatGrid {
    pub geometry: GridGeometry,
    /// Window of cell columns/rows this grid covers (full grid by default).
    pub cols: Range<usize>,
    pub rows: Range<usize>,
    pub cells: Vec<HeatCell>,
    pub provenance: GridProvenance,
}

impl HeatGrid {
    pub fn width(&self) -> usize {
        self.cols.len()
    }

    pub fn height(&self) -> usize {
        self.rows.len()
    }

    /// Cell at window-relative (col, row).
    pub fn cell(&self, col: usize, row: usize) -> &HeatCell {
        &self.cells[row * self.width() + col]
    }

    pub fn quotients(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        self.cells.iter().map(|c| c.quotient)
    }

    pub fn undefined_count(&self) -> usize {
        self.cells.iter().filter(|c| c.quotient.is_none()).count()
    }

    /// Largest defined quotient and its window-relative (col, row).
    pub fn max_cell(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for row in 0..self.height() {
            for col in 0..self.width() {
                if let Some(q) = self.cell(col, row).quotient {
                    if best.is_none_or(|(_, _, b)| q > b) {
                        best = Some((col, row, q));
                    }
                }
            }
        }
        best
    }
}

/// Scans the whole grid. `jobs` bounds the worker threads; serial-only
/// programs are always scanned on one thread.
pub fn grid_scan(
    sut: &dyn Sut,
    cfg: &GridScanConfig,
    jobs: usize,
) -> Result<HeatGrid, ExploreError> {
    grid_scan_window(sut, cfg, 0..cfg.resolution, 0..cfg.resolution, jobs)
}

/// Scans a sub-window of the grid. Seeds derive from global cell indices, so
/// a window equals the matching part of a full scan.
pub fn grid_scan_window(
    sut: &dyn Sut,
    cfg: &GridScanConfig,
    cols: Range<usize>,
    rows: Range<usize>,
    jobs: usize,
) -> Result<HeatGrid, ExploreError> {
    cfg.validate()?;
    if cols.end > cfg.resolution || rows.end > cfg.resolution || cols.is_empty() || rows.is_empty()
    {
        return Err(ExploreError::Config("scan window outside the grid".into()));
    }
    if sut.arity() != 2 || sut.domains().iter().any(|d| d.bounds().is_none()) {
        return Err(ExploreError::Config(format!(
            "grid scans need a program with two numeric inputs; {} has {}",
            sut.name(),
            sut.arity()
        )));
    }
    let geometry = cfg.geometry();
    let probe = input_from_coords(sut.domains(), &[geometry.x_center(0), geometry.y_center(0)]);
    check_determinism(sut, &probe)?;

    let radius = cfg.effective_radius();
    let d = DistanceFn::Ncd(cfg.compressor);
    let indices: Vec<(usize, usize)> = rows
        .clone()
        .flat_map(|row| cols.clone().map(move |col| (col, row)))
        .collect();
    let scan_cell = |&(col, row): &(usize, usize)| -> Result<HeatCell, ExploreError> {
        let center = (geometry.x_center(col), geometry.y_center(row));
        let a = input_from_coords(sut.domains(), &[center.0, center.1]);
        let nbhd = NeighborhoodSpec {
            samples: cfg.samples,
            radius,
            seed: cell_seed(cfg.seed, col, row),
        };
        match pd_approx_with(sut, &d, &d, &a, &nbhd, false) {
            Ok(q) => Ok(HeatCell {
                center,
                quotient: q.quotient,
                witness: Some((q.input_a, q.input_b)),
            }),
            Err(DerivativeError::NoNeighbor) => Ok(HeatCell {
                center,
                quotient: None,
                witness: None,
            }),
            Err(e) => Err(e.into()),
        }
    };

    let jobs = if sut.concurrency() == Concurrency::SerialOnly {
        1
    } else {
        jobs.max(1)
    };
    let cells = if jobs == 1 {
        indices
            .iter()
            .map(scan_cell)
            .collect::<Result<Vec<_>, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| ExploreError::Pool(e.to_string()))?;
        pool.install(|| {
            indices
                .par_iter()
                .map(scan_cell)
                .collect::<Result<Vec<_>, _>>()
        })?
    };
    Ok(HeatGrid {
        geometry,
        cols,
        rows,
        cells,
        provenance: GridProvenance {
            sut: sut.name().to_string(),
            config: *cfg,
        },
    })
}

/// Cell-wise comparison of two grids with the same geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDiff {
    pub geometry: GridGeometry,
    /// `|q1 - q2|` where both are defined, `0` where both are undefined and
    /// `None` where exactly one is undefined.
    pub cells: Vec<Option<f64>>,
    pub status_mismatches: usize,
    pub max_abs: f64,
    pub mean_abs: f64,
}

impl GridDiff {
    pub fn is_zero(&self) -> bool {
        self.status_mismatches == 0 && self.cells.iter().all(|c| *c == Some(0.0))
    }

    /// Row-major indices of the top tenth (rounded up) of cells with a
    /// positive difference, largest first; ties keep row-major order.
    pub fn top_decile(&self) -> Vec<usize> {
        let mut positive: Vec<(usize, f64)> = self
            .cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.filter(|d| *d > 0.0).map(|d| (i, d)))
            .collect();
        positive.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let keep = positive.len().div_ceil(10);
        positive.into_iter().take(keep).map(|(i, _)| i).collect()
    }
}

pub fn heatgrid_diff(g1: &HeatGrid, g2: &HeatGrid) -> Result<GridDiff, ExploreError> {
    if g1.geometry != g2.geometry || g1.cols != g2.cols || g1.rows != g2.rows {
        return Err(ExploreError::GeometryMismatch(format!(
            "{:?} {:?}x{:?} vs {:?} {:?}x{:?}",
            g1.geometry, g1.cols, g1.rows, g2.geometry, g2.cols, g2.rows
        )));
    }
    let (c1, c2) = (
        g1.provenance.config.compressor,
        g2.provenance.config.compressor,
    );
    if c1 != c2 {
        return Err(ExploreError::GeometryMismatch(format!(
            "grids use different compressors ({c1} vs {c2})"
        )));
    }
    let cells: Vec<Option<f64>> = g1
        .cells
        .iter()
        .zip(&g2.cells)
        .map(|(a, b)| match (a.quotient, b.quotient) {
            (Some(x), Some(y)) => Some((x - y).abs()),
            (None, None) => Some(0.0),
            _ => None,
        })
        .collect();
    let status_mismatches = cells.iter().filter(|c| c.is_none()).count();
    let defined: Vec<f64> = cells.iter().flatten().copied().collect();
    let max_abs = defined.iter().copied().fold(0.0, f64::max);
    let mean_abs = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(GridDiff {
        geometry: g1.geometry,
        cells,
        status_mismatches,
        max_abs,
        mean_abs,
    })
}

// ---------------------------------------------------------------------------
// Boundary search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Number of evaluated pairs (two program runs each), including the
    /// initial pair.
    pub budget: usize,
    /// Initial per-dimension Gaussian step and initial pair spread. Inputs
    /// are generated at the decimal resolution of `floor`.
    pub initial_step: f64,
    /// Step multiplier applied on every accepted candidate.
    pub decay: f64,
    /// Lower bound on the step.
    pub floor: f64,
    /// Probability that a candidate comes from contracting the pair rather
    /// than from a Gaussian mutation, in `[0, 1]`.
    pub shrink_weight: f64,
    /// Restart from a fresh random pair after this many evaluations without
    /// improvement. Zero disables restarts.
    pub restart_after: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            budget: 2000,
            initial_step: 1.0,
            decay: 0.97,
            floor: 1e-4,
            shrink_weight: 1.0 / 3.0,
            restart_after: 150,
            seed: crate::DEFAULT_SEED,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), ExploreError> {
        if self.budget < 1 {
            return Err(ExploreError::Config("budget must be >= 1".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(ExploreError::Config("decay must lie in (0, 1]".into()));
        }
        if !(self.floor > 0.0 && self.floor.is_finite()) {
            return Err(ExploreError::Config("floor must be positive".into()));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(ExploreError::Config("initial step must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.shrink_weight) {
            return Err(ExploreError::Config(
                "shrink weight must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Default output-distance floor separating validity/constraint boundaries
/// from rounding steps.
pub const MAJOR_BOUNDARY_FLOOR: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPair {
    pub input_a: String,
    pub input_b: String,
    pub output_a: String,
    pub output_b: String,
    pub d_in: f64,
    pub d_out: f64,
    pub quotient: f64,
    /// Euclidean distance between the numeric inputs.
    pub d_in_euclidean: f64,
    pub midpoint: Vec<f64>,
    /// Exactly one output is an error and `d_out` reaches the major floor.
    pub straddles_major_boundary: bool,
    pub evaluations: usize,
    pub seed: u64,
}

impl BoundaryPair {
    fn from_result(q: &QuotientResult, evaluations: usize, seed: u64, major_floor: f64) -> Self {
        let ca = q.input_a.coords().unwrap_or_default();
        let cb = q.input_b.coords().unwrap_or_default();
        let midpoint = ca.iter().zip(&cb).map(|(x, y)| 0.5 * (x + y)).collect();
        let d_in_euclidean = ca
            .iter()
            .zip(&cb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        BoundaryPair {
            input_a: q.input_a.to_string(),
            input_b: q.input_b.to_string(),
            output_a: q.output_a.to_string(),
            output_b: q.output_b.to_string(),
            d_in: q.d_in,
            d_out: q.d_out,
            quotient: q.quotient.unwrap_or(f64::NAN),
            d_in_euclidean,
            midpoint,
            straddles_major_boundary: straddles_major(q, major_floor),
            evaluations,
            seed,
        }
    }
}

/// One side errors, the other does not, and the outputs are far enough apart.
pub fn straddles_major(q: &QuotientResult, floor: f64) -> bool {
    q.output_a.is_error() != q.output_b.is_error() && q.d_out >= floor
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Best pair found, if any had a positive quotient.
    pub best: Option<QuotientResult>,
    /// Incumbent fitness after each evaluation.
    pub incumbent_fitness: Vec<f64>,
    pub evaluations: usize,
}

fn fitness(q: &QuotientResult) -> f64 {
    q.quotient.unwrap_or(f64::NEG_INFINITY)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Rounds `x` to the decimal resolution of `floor`.
fn quantize(x: f64, floor: f64) -> f64 {
    let digits = (-floor.log10().floor() as i32).clamp(0, 15) as usize;
    format!("{x:.digits$}").parse().unwrap_or(x)
}

/// Runs the (1+1)-ES and returns the full trace.
pub fn boundary_search_traced(
    sut: &dyn Sut,
    cfg: &SearchConfig,
    c: &Compressor,
) -> Result<SearchOutcome, ExploreError> {
    cfg.validate()?;
    let bounds = sut
        .domains()
        .iter()
        .map(|d| d.bounds())
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| ExploreError::Config(format!("{} has non-numeric inputs", sut.name())))?;
    let dims = bounds.len();
    // Candidates are rounded to the resolution of `floor`, then clamped to the domain.
    let clamp = |xs: Vec<f64>, floor: f64| -> Vec<f64> {
        xs.into_iter()
            .zip(&bounds)
            .map(|(x, &(lo, hi))| quantize(x, floor).clamp(lo, hi))
            .collect()
    };
    let eval = |a: &[f64], b: &[f64]| -> Result<QuotientResult, ExploreError> {
        let va = input_from_coords(sut.domains(), a);
        let vb = input_from_coords(sut.domains(), b);
        Ok(cdq(sut, c, &va, &vb)?)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gauss = |rng: &mut ChaCha8Rng, scale: f64| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        z * scale
    };

    let fresh = |rng: &mut ChaCha8Rng| -> (Vec<f64>, Vec<f64>) {
        let start: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..=hi))
            .collect();
        let a = clamp(start, cfg.floor);
        let b = clamp(
            a.iter()
                .map(|&x| x + gauss(rng, cfg.initial_step))
                .collect(),
            cfg.floor,
        );
        (a, b)
    };

    let (mut a, mut b) = fresh(&mut rng);
    let mut current = eval(&a, &b)?;
    let mut current_fit = fitness(&current);
    let mut step = cfg.initial_step;
    let mut stale = 0;
    let mut best = current.clone();
    let mut best_fit = current_fit;
    let mut trace = vec![best_fit];

    for _ in 1..cfg.budget {
        if cfg.restart_after > 0 && stale >= cfg.restart_after {
            (a, b) = fresh(&mut rng);
            current = eval(&a, &b)?;
            current_fit = fitness(&current);
            step = cfg.initial_step;
            stale = 0;
            if current_fit > best_fit {
                best_fit = current_fit;
                best = current.clone();
            }
            trace.push(best_fit);
            continue;
        }
        let gap = euclid(&a, &b);
        let sigma = if current_fit > 0.0 {
            step.min(gap)
        } else {
            step
        }
        .max(cfg.floor);
        let (na, nb): (Vec<f64>, Vec<f64>) = if rng.random::<f64>() < cfg.shrink_weight {
            // contract the pair around a random point on the segment by a
            // log-uniform factor, down to the floor
            let t: f64 = rng.random();
            let lo = (cfg.floor / gap.max(cfg.floor)).ln();
            let s = (lo * rng.random::<f64>()).exp();
            let m: Vec<f64> = (0..dims).map(|i| a[i] + (b[i] - a[i]) * t).collect();
            (
                (0..dims).map(|i| m[i] + (a[i] - m[i]) * s).collect(),
                (0..dims).map(|i| m[i] + (b[i] - m[i]) * s).collect(),
            )
        } else if rng.random::<bool>() {
            (
                (0..dims).map(|i| a[i] + gauss(&mut rng, sigma)).collect(),
                (0..dims).map(|i| b[i] + gauss(&mut rng, sigma)).collect(),
            )
        } else {
            let shift: Vec<f64> = (0..dims).map(|_| gauss(&mut rng, sigma)).collect();
            (
                (0..dims).map(|i| a[i] + shift[i]).collect(),
                (0..dims).map(|i| b[i] + shift[i]).collect(),
            )
        };
        let (na, nb) = (clamp(na, cfg.floor), clamp(nb, cfg.floor));
        let candidate = eval(&na, &nb)?;
        let f = fitness(&candidate);
        if f > current_fit {
            stale = 0;
        } else {
            stale += 1;
        }
        if f >= current_fit {
            a = na;
            b = nb;
            current_fit = f;
            current = candidate;
            step = (step * cfg.decay).max(cfg.floor);
            if f > best_fit {
                best_fit = f;
                best = current.clone();
            }
        }
        trace.push(best_fit);
    }

    let best = best.quotient.filter(|q| *q > 0.0).map(|_| best);
    Ok(SearchOutcome {
        best,
        incumbent_fitness: trace,
        evaluations: cfg.budget,
    })
}

/// Searches for an input pair maximizing the compression difference
/// quotient. Fails when no pair with a positive quotient turns up.
pub fn boundary_search(
    sut: &dyn Sut,
    cfg: &SearchConfig,
    c: &Compressor,
) -> Result<BoundaryPair, ExploreError> {
    boundary_search_with_floor(sut, cfg, c, MAJOR_BOUNDARY_FLOOR)
}

pub fn boundary_search_with_floor(
    sut: &dyn Sut,
    cfg: &SearchConfig,
    c: &Compressor,
    major_floor: f64,
) -> Result<BoundaryPair, ExploreError> {
    let outcome = boundary_search_traced(sut, cfg, c)?;
    outcome
        .best
        .map(|q| BoundaryPair::from_result(&q, outcome.evaluations, cfg.seed, major_floor))
        .ok_or(ExploreError::NoBoundaryFound {
            evaluations: outcome.evaluations,
        })
}

/// Runs `runs` independent searches with seeds derived from `cfg.seed`.
/// Per-run results are returned in run order.
pub fn search_many(
    sut: &dyn Sut,
    cfg: &SearchConfig,
    c: &Compressor,
    runs: usize,
    major_floor: f64,
    jobs: usize,
) -> Result<Vec<Result<BoundaryPair, ExploreError>>, ExploreError> {
    cfg.validate()?;
    let configs: Vec<SearchConfig> = (0..runs)
        .map(|i| SearchConfig {
            seed: derive_seed(cfg.seed, i as u64),
            ..*cfg
        })
        .collect();
    let run = |cfg: &SearchConfig| boundary_search_with_floor(sut, cfg, c, major_floor);
    let jobs = if sut.concurrency() == Concurrency::SerialOnly {
        1
    } else {
        jobs.max(1)
    };
    let results: Vec<_> = if jobs == 1 {
        configs.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| ExploreError::Pool(e.to_string()))?;
        pool.install(|| configs.par_iter().map(run).collect())
    };
    // harness failures abort the whole batch
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Err(ExploreError::NoBoundaryFound { .. }) | Ok(_) => out.push(r),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Euclidean distance between two numeric inputs, for reporting.
pub fn input_distance(a: &Value, b: &Value) -> Option<f64> {
    euclidean(a, b).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sut::builtin;

    fn small_cfg(resolution: usize) -> GridScanConfig {
        GridScanConfig {
            resolution,
            samples: 8,
            ..GridScanConfig::default()
        }
    }

    #[test]
    fn grid_geometry() {
        let g = GridScanConfig::default().geometry();
        assert!((g.cell_width() - 0.1).abs() < 1e-12);
        assert!((g.x_center(0) + 1.95).abs() < 1e-12);
        assert!((g.y_center(99) - 7.95).abs() < 1e-12);
        assert!((GridScanConfig::default().effective_radius() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg(1);
        assert!(cfg.validate().is_err());
        cfg.resolution = 4;
        cfg.x_range = (1.0, 1.0);
        assert!(cfg.validate().is_err());
        let sut = builtin("sum1").unwrap();
        assert!(matches!(
            grid_scan(sut.as_ref(), &cfg, 1),
            Err(ExploreError::Config(_))
        ));
    }

    #[test]
    fn constant_program_scans_to_zero() {
        let sut = builtin("const").unwrap();
        let g = grid_scan(sut.as_ref(), &small_cfg(10), 1).unwrap();
        assert!(g.quotients().all(|q| q == Some(0.0)));
    }

    #[test]
    fn degenerate_range_does_not_crash() {
        let sut = builtin("sum1").unwrap();
        let cfg = GridScanConfig {
            x_range: (1.0, 1.0 + 1e-15),
            y_range: (1.0, 1.0 + 1e-15),
            resolution: 2,
            ..small_cfg(2)
        };
        let g = grid_scan(sut.as_ref(), &cfg, 1).unwrap();
        assert_eq!(g.cells.len(), 4);
        assert!(g.quotients().all(|q| q.is_none() || q == Some(0.0)));
    }

    #[test]
    fn window_matches_full_scan() {
        let sut = builtin("sum1").unwrap();
        let cfg = small_cfg(12);
        let full = grid_scan(sut.as_ref(), &cfg, 1).unwrap();
        let win = grid_scan_window(sut.as_ref(), &cfg, 3..9, 5..12, 1).unwrap();
        for (r, row) in (5..12).enumerate() {
            for (c, col) in (3..9).enumerate() {
                assert_eq!(win.cell(c, r), full.cell(col, row));
            }
        }
    }

    #[test]
    fn scan_is_deterministic_across_job_counts() {
        let sut = builtin("sum2").unwrap();
        let cfg = small_cfg(10);
        let one = grid_scan(sut.as_ref(), &cfg, 1).unwrap();
        let four = grid_scan(sut.as_ref(), &cfg, 4).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn diff_properties() {
        let s1 = builtin("sum1").unwrap();
        let s2 = builtin("sum2").unwrap();
        let cfg = small_cfg(10);
        let g1 = grid_scan(s1.as_ref(), &cfg, 1).unwrap();
        let g2 = grid_scan(s2.as_ref(), &cfg, 1).unwrap();
        assert!(heatgrid_diff(&g1, &g1).unwrap().is_zero());
        let d12 = heatgrid_diff(&g1, &g2).unwrap();
        let d21 = heatgrid_diff(&g2, &g1).unwrap();
        assert_eq!(d12, d21);
        assert!(!d12.is_zero());
        let g3 = grid_scan(s1.as_ref(), &small_cfg(11), 1).unwrap();
        assert!(matches!(
            heatgrid_diff(&g1, &g3),
            Err(ExploreError::GeometryMismatch(_))
        ));
    }

    #[test]
    fn diff_counts_status_mismatch() {
        let s1 = builtin("sum1").unwrap();
        let g = grid_scan(s1.as_ref(), &small_cfg(4), 1).unwrap();
        let mut h = g.clone();
        h.cells[0].quotient = None;
        let d = heatgrid_diff(&g, &h).unwrap();
        assert_eq!(d.status_mismatches, 1);
        assert_eq!(d.cells[0], None);
        assert!(!d.is_zero());
    }

    #[test]
    fn top_decile_picks_largest() {
        let mut cells = vec![Some(0.0); 30];
        for (i, c) in cells.iter_mut().enumerate().take(20) {
            *c = Some(i as f64 + 1.0);
        }
        let d = GridDiff {
            geometry: small_cfg(2).geometry(),
            cells,
            status_mismatches: 0,
            max_abs: 20.0,
            mean_abs: 0.0,
        };
        assert_eq!(d.top_decile(), vec![19, 18]);
    }

    #[test]
    fn search_config_validation() {
        let sut = builtin("sum1").unwrap();
        let c = Compressor::default();
        for cfg in [
            SearchConfig {
                budget: 0,
                ..Default::default()
            },
            SearchConfig {
                decay: 0.0,
                ..Default::default()
            },
            SearchConfig {
                decay: 1.5,
                ..Default::default()
            },
            SearchConfig {
                floor: 0.0,
                ..Default::default()
            },
            SearchConfig {
                shrink_weight: 1.5,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                boundary_search(sut.as_ref(), &cfg, &c),
                Err(ExploreError::Config(_))
            ));
        }
    }

    #[test]
    fn search_fitness_never_decreases() {
        let sut = builtin("sum1").unwrap();
        let cfg = SearchConfig {
            budget: 400,
            seed: 3,
            ..Default::default()
        };
        let out = boundary_search_traced(sut.as_ref(), &cfg, &Compressor::default()).unwrap();
        assert_eq!(out.incumbent_fitness.len(), 400);
        assert!(out.incumbent_fitness.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn constant_program_has_no_boundary() {
        let sut = builtin("const").unwrap();
        let cfg = SearchConfig {
            budget: 200,
            ..Default::default()
        };
        assert!(matches!(
            boundary_search(sut.as_ref(), &cfg, &Compressor::default()),
            Err(ExploreError::NoBoundaryFound { evaluations: 200 })
        ));
    }

    #[test]
    fn budget_one_returns_initial_pair_or_fails() {
        let sut = builtin("sum1").unwrap();
        let c = Compressor::default();
        let mut found = 0;
        for seed in 0..40 {
            let cfg = SearchConfig {
                budget: 1,
                seed,
                ..Default::default()
            };
            let full = boundary_search_traced(sut.as_ref(), &cfg, &c).unwrap();
            match boundary_search(sut.as_ref(), &cfg, &c) {
                Ok(p) => {
                    found += 1;
                    assert_eq!(p.evaluations, 1);
                    assert_eq!(Some(p.quotient), full.best.and_then(|q| q.quotient));
                }
                Err(ExploreError::NoBoundaryFound { evaluations }) => {
                    assert_eq!(evaluations, 1);
                    assert!(full.best.is_none());
                }
                Err(e) => panic!("{e}"),
            }
        }
        assert!(found > 0);
    }

    #[test]
    fn search_is_deterministic() {
        let sut = builtin("sum1").unwrap();
        let c = Compressor::default();
        let cfg = SearchConfig {
            budget: 300,
            seed: 8,
            ..Default::default()
        };
        let a = boundary_search(sut.as_ref(), &cfg, &c).unwrap();
        let b = boundary_search(sut.as_ref(), &cfg, &c).unwrap();
        assert_eq!(a, b);
    }
}
