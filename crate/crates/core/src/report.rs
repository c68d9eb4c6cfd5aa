//! Export of analysis results: CSV and PGM heatmaps and a JSON report of
//! boundary pairs. Every file starts with a provenance block that is enough
//! to re-run the analysis that produced it.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance::Compressor;
use crate::explore::{
    derive_seed, BoundaryPair, ExploreError, GridDiff, GridGeometry, GridProvenance,
    GridScanConfig, HeatCell, HeatGrid, SearchConfig,
};

/// Version of the pairs JSON layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Gray level for cells without a defined quotient.
pub const UNDEFINED_GRAY: u8 = 128;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed grid CSV, line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("could not encode report: {0}")]
    Json(#[from] serde_json::Error),
}

/// Where a result came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub sut: String,
    pub compressor: String,
    pub level: u32,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    /// Seconds since the Unix epoch; left out for reproducible output.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timestamp: Option<u64>,
}

impl Provenance {
    pub fn for_grid(g: &HeatGrid, timestamp: Option<u64>) -> Self {
        let cfg = &g.provenance.config;
        Provenance {
            tool: "bva".into(),
            version: crate::VERSION.into(),
            sut: g.provenance.sut.clone(),
            compressor: cfg.compressor.kind.to_string(),
            level: cfg.compressor.level,
            seeds: vec![cfg.seed],
            config: serde_json::to_value(cfg).expect("grid config serializes"),
            timestamp,
        }
    }

    pub fn for_search(
        sut: &str,
        cfg: &SearchConfig,
        c: &Compressor,
        seeds: Vec<u64>,
        timestamp: Option<u64>,
    ) -> Self {
        Provenance {
            tool: "bva".into(),
            version: crate::VERSION.into(),
            sut: sut.into(),
            compressor: c.kind.to_string(),
            level: c.level,
            seeds,
            config: serde_json::to_value(cfg).expect("search config serializes"),
            timestamp,
        }
    }
}

/// Seconds since the Unix epoch.
pub fn now_timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    fs::write(path, contents).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn grid_header(g: &HeatGrid, timestamp: Option<u64>) -> Vec<String> {
    let p = &g.provenance;
    let mut lines = vec![
        format!("tool: bva {}", crate::VERSION),
        format!("sut: {}", p.sut),
        format!("compressor: {}", p.config.compressor),
        format!("seed: {}", p.config.seed),
        format!(
            "window: {}..{} {}..{}",
            g.cols.start, g.cols.end, g.rows.start, g.rows.end
        ),
        format!(
            "config: {}",
            serde_json::to_string(&p.config).expect("grid config serializes")
        ),
    ];
    if let Some(t) = timestamp {
        lines.push(format!("timestamp: {t}"));
    }
    lines
}

fn matrix_csv(
    header: &[String],
    geometry: &GridGeometry,
    cols: &Range<usize>,
    rows: &Range<usize>,
    values: &[Option<f64>],
) -> String {
    let mut out = String::new();
    for line in header {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("y\\x");
    for col in cols.clone() {
        let _ = write!(out, ",{}", geometry.x_center(col));
    }
    out.push('\n');
    let width = cols.len();
    for (r, row) in rows.clone().enumerate().rev() {
        let _ = write!(out, "{}", geometry.y_center(row));
        for v in &values[r * width..(r + 1) * width] {
            match v {
                Some(q) => {
                    let _ = write!(out, ",{q}");
                }
                None => out.push_str(",NA"),
            }
        }
        out.push('\n');
    }
    out
}

/// CSV rendering of a grid. Rows run from the largest y down, matching the
/// image; undefined cells are `NA`.
pub fn grid_csv(g: &HeatGrid, timestamp: Option<u64>) -> String {
    let values: Vec<Option<f64>> = g.quotients().collect();
    matrix_csv(
        &grid_header(g, timestamp),
        &g.geometry,
        &g.cols,
        &g.rows,
        &values,
    )
}

pub fn export_grid_csv(
    g: &HeatGrid,
    path: &Path,
    timestamp: Option<u64>,
) -> Result<(), ReportError> {
    write_file(path, &grid_csv(g, timestamp))
}

/// CSV rendering of a cell-wise difference. `NA` marks cells defined in only
/// one of the grids.
pub fn diff_csv(d: &GridDiff, g1: &HeatGrid, g2: &HeatGrid, timestamp: Option<u64>) -> String {
    let mut header = vec![
        format!("tool: bva {}", crate::VERSION),
        format!("diff: {} vs {}", g1.provenance.sut, g2.provenance.sut),
        format!("compressor: {}", g1.provenance.config.compressor),
        format!(
            "seeds: {} {}",
            g1.provenance.config.seed, g2.provenance.config.seed
        ),
        format!("status mismatches: {}", d.status_mismatches),
        format!("max abs: {}", d.max_abs),
        format!("mean abs: {}", d.mean_abs),
    ];
    if let Some(t) = timestamp {
        header.push(format!("timestamp: {t}"));
    }
    matrix_csv(&header, &d.geometry, &g1.cols, &g1.rows, &d.cells)
}

/// A grid read back from CSV. Witness pairs are not stored in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportedGrid {
    pub grid: HeatGrid,
    pub timestamp: Option<u64>,
}

fn parse_range(s: &str) -> Option<Range<usize>> {
    let (a, b) = s.split_once("..")?;
    Some(a.parse().ok()?..b.parse().ok()?)
}

pub fn import_grid_csv(text: &str) -> Result<ImportedGrid, ReportError> {
    let err = |line: usize, msg: &str| ReportError::Csv {
        line,
        msg: msg.to_string(),
    };
    let mut sut = None;
    let mut config: Option<GridScanConfig> = None;
    let mut window = None;
    let mut timestamp = None;
    let mut body = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if let Some(comment) = line.strip_prefix("# ") {
            let Some((key, value)) = comment.split_once(": ") else {
                continue;
            };
            match key {
                "sut" => sut = Some(value.to_string()),
                "config" => {
                    config = Some(
                        serde_json::from_str(value).map_err(|e| err(n, &format!("config: {e}")))?,
                    )
                }
                "window" => {
                    let (c, r) = value.split_once(' ').ok_or_else(|| err(n, "bad window"))?;
                    window = Some((
                        parse_range(c).ok_or_else(|| err(n, "bad window"))?,
                        parse_range(r).ok_or_else(|| err(n, "bad window"))?,
                    ));
                }
                "timestamp" => timestamp = value.parse().ok(),
                _ => {}
            }
        } else if !line.is_empty() {
            body.push((n, line));
        }
    }
    let sut = sut.ok_or_else(|| err(0, "missing sut line"))?;
    let config = config.ok_or_else(|| err(0, "missing config line"))?;
    let geometry = config.geometry();
    let (cols, rows) = window.unwrap_or((0..config.resolution, 0..config.resolution));
    if cols.end > config.resolution || rows.end > config.resolution {
        return Err(err(0, "window exceeds grid"));
    }
    let (&(hn, header), data) = body
        .split_first()
        .ok_or_else(|| err(0, "missing header row"))?;
    let xs: Vec<&str> = header.split(',').collect();
    if xs.len() != cols.len() + 1 {
        return Err(err(hn, "header width does not match window"));
    }
    if data.len() != rows.len() {
        return Err(err(hn, "row count does not match window"));
    }
    let width = cols.len();
    let mut cells = vec![None; width * rows.len()];
    for (k, &(n, line)) in data.iter().enumerate() {
        let r = rows.len() - 1 - k;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width + 1 {
            return Err(err(n, "row width does not match header"));
        }
        for (c, f) in fields[1..].iter().enumerate() {
            let q = match *f {
                "NA" => None,
                s => Some(
                    s.parse::<f64>()
                        .map_err(|_| err(n, &format!("bad number {s:?}")))?,
                ),
            };
            cells[r * width + c] = q;
        }
    }
    let cells = cells
        .into_iter()
        .enumerate()
        .map(|(i, quotient)| HeatCell {
            center: (
                geometry.x_center(cols.start + i % width),
                geometry.y_center(rows.start + i / width),
            ),
            quotient,
            witness: None,
        })
        .collect();
    Ok(ImportedGrid {
        grid: HeatGrid {
            geometry,
            cols,
            rows,
            cells,
            provenance: GridProvenance { sut, config },
        },
        timestamp,
    })
}

pub fn read_grid_csv(path: &Path) -> Result<ImportedGrid, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    import_grid_csv(&text)
}

/// Gray levels in image order (top row first). Larger quotients are darker.
pub fn grid_pixels(g: &HeatGrid) -> (Vec<u8>, Option<(f64, f64)>) {
    let defined: Vec<f64> = g.quotients().flatten().collect();
    let bounds = defined
        .iter()
        .copied()
        .fold(None, |acc: Option<(f64, f64)>, q| {
            Some(acc.map_or((q, q), |(lo, hi)| (lo.min(q), hi.max(q))))
        });
    let mut pixels = Vec::with_capacity(g.cells.len());
    for row in (0..g.height()).rev() {
        for col in 0..g.width() {
            let px = match (g.cell(col, row).quotient, bounds) {
                (Some(q), Some((lo, hi))) if hi > lo => {
                    let t = (q - lo) / (hi - lo);
                    255 - (255.0 * t).floor() as u8
                }
                (Some(_), _) => 255,
                (None, _) => UNDEFINED_GRAY,
            };
            pixels.push(px);
        }
    }
    (pixels, bounds)
}

/// Plain (P2) grayscale image, one pixel per cell.
pub fn grid_pgm(g: &HeatGrid, timestamp: Option<u64>) -> String {
    let (pixels, bounds) = grid_pixels(g);
    let mut out = String::from("P2\n");
    for line in grid_header(g, timestamp) {
        if !line.starts_with("config:") {
            let _ = writeln!(out, "# {line}");
        }
    }
    match bounds {
        Some((lo, hi)) => {
            let _ = writeln!(out, "# min: {lo}");
            let _ = writeln!(out, "# max: {hi}");
        }
        None => out.push_str("# warning: no cell has a defined quotient\n"),
    }
    let _ = writeln!(out, "# undefined: {UNDEFINED_GRAY}");
    let _ = writeln!(out, "{} {}", g.width(), g.height());
    out.push_str("255\n");
    for row in pixels.chunks(g.width().max(1)) {
        let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn export_grid_image(
    g: &HeatGrid,
    path: &Path,
    timestamp: Option<u64>,
) -> Result<(), ReportError> {
    write_file(path, &grid_pgm(g, timestamp))
}

/// Seeds whose search came back empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotFound {
    pub seed: u64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairsReport {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub pairs: Vec<BoundaryPair>,
    pub not_found: Vec<NotFound>,
}

impl PairsReport {
    /// Collects the per-run results of [`crate::explore::search_many`].
    /// Runs that found nothing are listed under `not_found`; any other
    /// error is returned.
    pub fn from_runs(
        sut: &str,
        cfg: &SearchConfig,
        c: &Compressor,
        results: Vec<Result<BoundaryPair, ExploreError>>,
        timestamp: Option<u64>,
    ) -> Result<Self, ExploreError> {
        let seeds: Vec<u64> = (0..results.len() as u64)
            .map(|i| derive_seed(cfg.seed, i))
            .collect();
        let mut pairs = Vec::new();
        let mut not_found = Vec::new();
        for (r, &seed) in results.into_iter().zip(&seeds) {
            match r {
                Ok(p) => pairs.push(p),
                Err(ExploreError::NoBoundaryFound { evaluations }) => {
                    not_found.push(NotFound { seed, evaluations })
                }
                Err(e) => return Err(e),
            }
        }
        Ok(PairsReport {
            schema_version: SCHEMA_VERSION,
            provenance: Provenance::for_search(sut, cfg, c, seeds, timestamp),
            pairs,
            not_found,
        })
    }
}

pub fn pairs_json(report: &PairsReport) -> Result<String, ReportError> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn export_pairs_json(report: &PairsReport, path: &Path) -> Result<(), ReportError> {
    write_file(path, &pairs_json(report)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explore::{grid_scan_window, GridProvenance};
    use crate::sut::builtin;
    use crate::values::Value;
    use proptest::prelude::*;

    fn grid_of(res: usize, qs: &[Option<f64>]) -> HeatGrid {
        let config = GridScanConfig {
            x_range: (0.0, res as f64),
            y_range: (0.0, res as f64),
            resolution: res,
            ..Default::default()
        };
        let geometry = config.geometry();
        let cells = qs
            .iter()
            .enumerate()
            .map(|(i, &quotient)| HeatCell {
                center: (geometry.x_center(i % res), geometry.y_center(i / res)),
                quotient,
                witness: None,
            })
            .collect();
        HeatGrid {
            geometry,
            cols: 0..res,
            rows: 0..res,
            cells,
            provenance: GridProvenance {
                sut: "test".into(),
                config,
            },
        }
    }

    fn body(csv: &str) -> Vec<&str> {
        csv.lines().filter(|l| !l.starts_with('#')).collect()
    }

    #[test]
    fn zero_grid_csv() {
        let g = grid_of(2, &[Some(0.0); 4]);
        let csv = grid_csv(&g, None);
        assert_eq!(body(&csv), vec!["y\\x,0.5,1.5", "1.5,0,0", "0.5,0,0"]);
        assert!(csv.contains("# config: {"));
        assert!(!csv.contains("timestamp"));
    }

    #[test]
    fn undefined_cell_is_na() {
        let g = grid_of(2, &[Some(0.5), None, Some(0.0), Some(1.0)]);
        assert_eq!(body(&grid_csv(&g, Some(7)))[2], "0.5,0.5,NA");
        assert!(grid_csv(&g, Some(7)).contains("# timestamp: 7"));
    }

    #[test]
    fn two_value_image() {
        let g = grid_of(2, &[Some(0.0), Some(1.0), Some(1.0), None]);
        let (px, bounds) = grid_pixels(&g);
        assert_eq!(bounds, Some((0.0, 1.0)));
        assert_eq!(px, vec![0, UNDEFINED_GRAY, 255, 0]);
        let pgm = grid_pgm(&g, None);
        assert!(pgm.starts_with("P2\n"));
        assert!(pgm.contains("# min: 0\n# max: 1\n"));
        assert!(pgm.ends_with("2 2\n255\n0 128\n255 0\n"));
    }

    #[test]
    fn equal_grid_is_white() {
        let g = grid_of(3, &[Some(0.25); 9]);
        assert!(grid_pixels(&g).0.iter().all(|&p| p == 255));
    }

    #[test]
    fn undefined_grid_is_gray_with_warning() {
        let g = grid_of(2, &[None; 4]);
        let (px, bounds) = grid_pixels(&g);
        assert_eq!(bounds, None);
        assert!(px.iter().all(|&p| p == UNDEFINED_GRAY));
        assert!(grid_pgm(&g, None).contains("# warning:"));
    }

    #[test]
    fn csv_argmax_is_darkest_pixel() {
        let qs = [
            Some(0.1),
            Some(0.9),
            None,
            Some(0.9),
            Some(0.3),
            Some(0.0),
            Some(0.2),
            None,
            Some(0.5),
        ];
        let g = grid_of(3, &qs);
        let csv = grid_csv(&g, None);
        let flat: Vec<Option<f64>> = body(&csv)[1..]
            .iter()
            .flat_map(|l| l.split(',').skip(1).map(|f| f.parse().ok()))
            .collect();
        let mut arg = 0;
        for (i, q) in flat.iter().enumerate() {
            if q.is_some() && q > &flat[arg] {
                arg = i;
            }
        }
        let (px, _) = grid_pixels(&g);
        let darkest = (0..px.len()).min_by_key(|&i| (px[i], i)).unwrap();
        assert_eq!(arg, darkest);
    }

    proptest! {
        #[test]
        fn csv_round_trip(
            res in 2usize..6,
            raw in proptest::collection::vec(proptest::option::of(0.0f64..1e6), 36),
            ts in proptest::option::of(any::<u64>()),
        ) {
            let g = grid_of(res, &raw[..res * res]);
            let back = import_grid_csv(&grid_csv(&g, ts)).unwrap();
            prop_assert_eq!(back.timestamp, ts);
            prop_assert_eq!(back.grid, g);
        }
    }

    #[test]
    fn embedded_config_reproduces_csv() {
        let sut = builtin("sum1").unwrap();
        let cfg = GridScanConfig {
            resolution: 20,
            samples: 8,
            ..Default::default()
        };
        let g = grid_scan_window(sut.as_ref(), &cfg, 4..9, 10..13, 1).unwrap();
        let first = grid_csv(&g, None);
        let back = import_grid_csv(&first).unwrap().grid;
        let again = grid_scan_window(
            builtin(&back.provenance.sut).unwrap().as_ref(),
            &back.provenance.config,
            back.cols.clone(),
            back.rows.clone(),
            1,
        )
        .unwrap();
        assert_eq!(grid_csv(&again, None), first);
        assert_eq!(grid_pgm(&again, None), grid_pgm(&g, None));
    }

    #[test]
    fn malformed_csv_is_rejected() {
        let g = grid_of(2, &[Some(0.0); 4]);
        let csv = grid_csv(&g, None);
        assert!(import_grid_csv(&csv.replace("1.5,0,0", "1.5,0")).is_err());
        assert!(import_grid_csv(&csv.replace("0.5,0,0", "0.5,x,0")).is_err());
        assert!(import_grid_csv("y\\x,1\n").is_err());
    }

    fn report(pairs: Vec<BoundaryPair>) -> PairsReport {
        let cfg = SearchConfig::default();
        PairsReport {
            schema_version: SCHEMA_VERSION,
            provenance: Provenance::for_search(
                "sum1",
                &cfg,
                &Compressor::default(),
                vec![1, 2],
                None,
            ),
            pairs,
            not_found: vec![NotFound {
                seed: 2,
                evaluations: 2000,
            }],
        }
    }

    #[test]
    fn empty_pairs_keep_provenance() {
        let json = pairs_json(&report(vec![])).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["pairs"], serde_json::json!([]));
        assert_eq!(v["provenance"]["compressor"], "zlib");
        assert_eq!(v["provenance"]["level"], 9);
        assert!(v["provenance"].get("timestamp").is_none());
    }

    #[test]
    fn one_pair_round_trips() {
        let pair = BoundaryPair {
            input_a: Value::reals(&[1.0, 5.0]).unwrap().to_string(),
            input_b: Value::reals(&[1.0, 5.0001]).unwrap().to_string(),
            output_a: "R:6".into(),
            output_b: Value::error("InvalidOutput", "sum out of range").to_string(),
            d_in: 0.2,
            d_out: 0.8333333333333334,
            quotient: 4.166666666666667,
            d_in_euclidean: 1e-4,
            midpoint: vec![1.0, 5.00005],
            straddles_major_boundary: true,
            evaluations: 2000,
            seed: 1,
        };
        let r = report(vec![pair]);
        let json = pairs_json(&r).unwrap();
        let back: PairsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert_eq!(pairs_json(&back).unwrap(), json);
        let keys: Vec<&str> = json
            .lines()
            .filter_map(|l| l.trim().strip_prefix('"')?.split('"').next())
            .take(3)
            .collect();
        assert_eq!(keys, ["schema_version", "provenance", "tool"]);
    }
}
