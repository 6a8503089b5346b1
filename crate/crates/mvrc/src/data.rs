//! Dataset ingestion, synthetic data generation, and the seeded RNG facility.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Named RNG stream. ChaCha is counter-based, so identical `(seed, stream_id)`
/// pairs yield identical draw sequences on every platform, and distinct
/// stream ids never interleave.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSpec {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngSpec {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngSpec { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Stream-id layout. Estimator draws, output-index draws, restart selection,
/// and data synthesis all live on separate streams; restarted runs offset by
/// `RUN_STRIDE` per run so every run sees fresh, reproducible randomness.
pub mod streams {
    pub const ESTIMATOR: u64 = 0;
    pub const OUTPUT_INDEX: u64 = 1;
    pub const RESTART_SELECT: u64 = 2;
    pub const DATA_SYNTH: u64 = 3;
    pub const INIT_POINT: u64 = 4;
    pub const RUN_STRIDE: u64 = 16;
}

/// Where a dataset came from: a file on disk or a synthesis recipe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    File(String),
    Synthetic(String),
}

/// An immutable numeric dataset with optional regression targets.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub matrix: Array2<f64>,
    pub targets: Option<Array1<f64>>,
    pub provenance: Provenance,
    /// SHA-256 over the raw numeric content; embedded in run metadata so
    /// every result row is traceable to its exact inputs.
    pub checksum: String,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    fn finalize(matrix: Array2<f64>, targets: Option<Array1<f64>>, provenance: Provenance) -> Self {
        let checksum = content_checksum(&matrix, targets.as_ref());
        Dataset {
            matrix,
            targets,
            provenance,
            checksum,
        }
    }
}

fn content_checksum(matrix: &Array2<f64>, targets: Option<&Array1<f64>>) -> String {
    let mut hasher = Sha256::new();
    hasher.update((matrix.nrows() as u64).to_le_bytes());
    hasher.update((matrix.ncols() as u64).to_le_bytes());
    for v in matrix.iter() {
        hasher.update(v.to_le_bytes());
    }
    if let Some(t) = targets {
        hasher.update((t.len() as u64).to_le_bytes());
        for v in t.iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// Expected layout of a CSV file.
#[derive(Debug, Clone, Copy, Default)]
pub struct CsvSchema {
    /// Treat the last column as the regression target.
    pub target_last_column: bool,
    /// Require exactly this many feature columns after target extraction.
    pub expect_features: Option<usize>,
}

/// Loads a strictly numeric CSV: UTF-8, one header line, comma separators,
/// '.' decimals, no missing cells. Any malformed cell is reported with its
/// row and column (1-based, counting the header as line 1).
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::data(format!("{}: empty file", path.display())))?;
    let width = header.split(',').count();
    if width == 0 {
        return Err(Error::data(format!("{}: empty header", path.display())));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width {
            return Err(Error::data(format!(
                "{}: line {line_no} has {} cells, expected {width}",
                path.display(),
                cells.len()
            )));
        }
        let mut row = Vec::with_capacity(width);
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::data(format!(
                    "{}: non-numeric cell at line {line_no}, column {} ({:?})",
                    path.display(),
                    j + 1,
                    cell.trim()
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::data(format!(
                    "{}: non-finite cell at line {line_no}, column {}",
                    path.display(),
                    j + 1
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::data(format!(
            "{}: no data rows after the header",
            path.display()
        )));
    }

    let n = rows.len();
    let (features, targets) = if schema.target_last_column {
        if width < 2 {
            return Err(Error::data(format!(
                "{}: need at least 2 columns to split off a target",
                path.display()
            )));
        }
        let mut t = Vec::with_capacity(n);
        let mut m = Vec::with_capacity(n * (width - 1));
        for row in &rows {
            m.extend_from_slice(&row[..width - 1]);
            t.push(row[width - 1]);
        }
        (
            Array2::from_shape_vec((n, width - 1), m).expect("shape"),
            Some(Array1::from(t)),
        )
    } else {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        (Array2::from_shape_vec((n, width), flat).expect("shape"), None)
    };

    if let Some(d) = schema.expect_features {
        if features.ncols() != d {
            return Err(Error::data(format!(
                "{}: expected {d} feature columns, got {}",
                path.display(),
                features.ncols()
            )));
        }
    }

    Ok(Dataset::finalize(
        features,
        targets,
        Provenance::File(path.display().to_string()),
    ))
}

/// Synthetic daily-return matrix: i.i.d. Gaussian entries with the given
/// per-asset mean and scale. Stands in for the published portfolio datasets.
pub fn synth_portfolio(n: usize, d: usize, mean: f64, scale: f64, rng_spec: RngSpec) -> Dataset {
    let mut rng = rng_spec.rng();
    let mut data = Vec::with_capacity(n * d);
    if scale == 0.0 {
        data.resize(n * d, mean);
    } else {
        let dist = Normal::new(mean, scale).expect("scale must be finite");
        for _ in 0..n * d {
            data.push(dist.sample(&mut rng));
        }
    }
    let matrix = Array2::from_shape_vec((n, d), data).expect("shape");
    Dataset::finalize(
        matrix,
        None,
        Provenance::Synthetic(format!(
            "portfolio(n={n},d={d},mean={mean},scale={scale},seed={},stream={})",
            rng_spec.seed, rng_spec.stream_id
        )),
    )
}

/// Synthetic house-price regression: `d_signal` informative Gaussian features
/// with nonzero coefficients, `d_noise` pure-noise features whose true
/// coefficients are zero, targets linear in the signal plus Gaussian noise.
pub fn synth_housing(
    n: usize,
    d_signal: usize,
    d_noise: usize,
    noise_sd: f64,
    rng_spec: RngSpec,
) -> Dataset {
    let mut rng = rng_spec.rng();
    let d = d_signal + d_noise;
    let standard = Normal::new(0.0, 1.0).unwrap();

    // fixed signal coefficients of alternating sign, O(1) magnitude
    let coef: Vec<f64> = (0..d_signal)
        .map(|j| if j % 2 == 0 { 1.0 } else { -0.5 } * (1.0 + j as f64 * 0.25))
        .collect();

    let mut data = Vec::with_capacity(n * d);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let mut y = 0.0;
        for j in 0..d {
            let v: f64 = standard.sample(&mut rng);
            if j < d_signal {
                y += coef[j] * v;
            }
            data.push(v);
        }
        if noise_sd > 0.0 {
            y += noise_sd * standard.sample(&mut rng);
        }
        targets.push(y);
    }
    let matrix = Array2::from_shape_vec((n, d), data).expect("shape");
    Dataset::finalize(
        matrix,
        Some(Array1::from(targets)),
        Provenance::Synthetic(format!(
            "housing(n={n},d_signal={d_signal},d_noise={d_noise},noise_sd={noise_sd},seed={},stream={})",
            rng_spec.seed, rng_spec.stream_id
        )),
    )
}

/// Standard-normal vector of length `d`; used for shared initialization
/// points and test fixtures.
pub fn gaussian_point(d: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let dist = Normal::new(0.0, 1.0).unwrap();
    Array1::from_iter((0..d).map(|_| scale * dist.sample(rng)))
}

/// Uniform index draws `0..n` with replacement.
pub fn draw_indices(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    (0..count).map(|_| rng.gen_range(0..n as u64)).collect()
}

/// Fresh online draw keys.
pub fn draw_keys(count: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    (0..count).map(|_| rng.gen::<u64>()).collect()
}
