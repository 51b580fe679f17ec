//! Prior association matrices, observation masks and train/val/test splits.

use super::DataError;
use crate::Mat;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

const CLASS_TOL: f64 = 1e-9;

/// Partially observed cross-network association matrix with its binary
/// observation mask and the ordered list of rating classes.
#[derive(Debug, Clone)]
pub struct PriorAssociation {
    pub h: Mat,
    pub mask: Mat,
    pub classes: Vec<f64>,
    pub observed_count: usize,
}

impl PriorAssociation {
    pub fn new(h: Mat, mask: Mat, classes: Vec<f64>) -> Result<Self, DataError> {
        if h.dim() != mask.dim() {
            return Err(DataError::Validation(format!(
                "H is {:?} but mask is {:?}",
                h.dim(),
                mask.dim()
            )));
        }
        if classes.is_empty() {
            return Err(DataError::Validation("class list is empty".into()));
        }
        let mut sorted = classes.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).any(|w| (w[0] - w[1]).abs() <= CLASS_TOL) {
            return Err(DataError::Validation("class values must be distinct".into()));
        }
        let mut observed = 0usize;
        for ((i, j), &m) in mask.indexed_iter() {
            match m {
                0.0 => {
                    if h[[i, j]] != 0.0 {
                        return Err(DataError::Validation(format!(
                            "H({i},{j}) = {} is nonzero outside the mask",
                            h[[i, j]]
                        )));
                    }
                }
                1.0 => {
                    observed += 1;
                    let v = h[[i, j]];
                    if !classes.iter().any(|&c| (c - v).abs() <= CLASS_TOL) {
                        return Err(DataError::Validation(format!(
                            "H({i},{j}) = {v} is not one of the declared classes"
                        )));
                    }
                }
                other => {
                    return Err(DataError::Validation(format!(
                        "mask({i},{j}) = {other} is not binary"
                    )));
                }
            }
        }
        Ok(Self { h, mask, classes, observed_count: observed })
    }

    pub fn n1(&self) -> usize {
        self.h.nrows()
    }

    pub fn n2(&self) -> usize {
        self.h.ncols()
    }

    pub fn density(&self) -> f64 {
        self.observed_count as f64 / (self.n1() * self.n2()) as f64
    }

    pub fn class_min(&self) -> f64 {
        self.classes.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn class_max(&self) -> f64 {
        self.classes.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the class matching `value`, if any.
    pub fn class_index(&self, value: f64) -> Option<usize> {
        self.classes.iter().position(|&c| (c - value).abs() <= CLASS_TOL)
    }

    /// All observed entries as (row, col, rating) triplets in row-major order.
    pub fn observed_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.observed_count);
        for ((i, j), &m) in self.mask.indexed_iter() {
            if m == 1.0 {
                out.push((i, j, self.h[[i, j]]));
            }
        }
        out
    }

    /// A copy keeping only entries selected by `keep` (elementwise AND with
    /// the observation mask).
    pub fn restricted_to(&self, keep: &Mat) -> Self {
        let mask = &self.mask * keep;
        let h = &self.h * &mask;
        let observed = mask.iter().filter(|&&m| m == 1.0).count();
        Self { h, mask, classes: self.classes.clone(), observed_count: observed }
    }
}

/// Disjoint binary masks partitioning (a subset of) the observed entries.
#[derive(Debug, Clone)]
pub struct RatingSplit {
    pub train_mask: Mat,
    pub val_mask: Mat,
    pub test_mask: Mat,
}

impl RatingSplit {
    /// Validates disjointness and containment in `prior`'s observation mask.
    pub fn validate(&self, prior: &PriorAssociation) -> Result<(), DataError> {
        let sum = &self.train_mask + &self.val_mask + &self.test_mask;
        for ((i, j), &s) in sum.indexed_iter() {
            if s > 1.0 {
                return Err(DataError::Validation(format!(
                    "split masks overlap at ({i},{j})"
                )));
            }
            if s == 1.0 && prior.mask[[i, j]] != 1.0 {
                return Err(DataError::Validation(format!(
                    "split references unobserved entry ({i},{j})"
                )));
            }
        }
        Ok(())
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let count = |m: &Mat| m.iter().filter(|&&x| x == 1.0).count();
        (count(&self.train_mask), count(&self.val_mask), count(&self.test_mask))
    }
}

/// Randomly partitions the observed entries by the given fractions
/// (train, val, test). Deterministic for a fixed seed.
pub fn split_ratings(
    prior: &PriorAssociation,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<RatingSplit, DataError> {
    let (ft, fv, fe) = fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 || ft + fv + fe > 1.0 + 1e-12 {
        return Err(DataError::Parameter(format!(
            "fractions must be nonnegative and sum to at most 1, got ({ft}, {fv}, {fe})"
        )));
    }
    let mut entries: Vec<(usize, usize)> = prior
        .observed_entries()
        .into_iter()
        .map(|(i, j, _)| (i, j))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    entries.shuffle(&mut rng);
    let m = entries.len();
    let n_train = (ft * m as f64).round() as usize;
    let n_val = (fv * m as f64).round() as usize;
    // When the fractions cover everything, the test set takes the rounding
    // remainder so every observation is assigned.
    let n_test = if (ft + fv + fe - 1.0).abs() <= 1e-12 {
        m.saturating_sub(n_train + n_val)
    } else {
        ((fe * m as f64).round() as usize).min(m.saturating_sub(n_train + n_val))
    };
    let shape = prior.h.raw_dim();
    let mut train = Array2::zeros(shape);
    let mut val = Array2::zeros(shape);
    let mut test = Array2::zeros(shape);
    for (idx, &(i, j)) in entries.iter().enumerate() {
        if idx < n_train {
            train[[i, j]] = 1.0;
        } else if idx < n_train + n_val {
            val[[i, j]] = 1.0;
        } else if idx < n_train + n_val + n_test {
            test[[i, j]] = 1.0;
        }
    }
    let split = RatingSplit { train_mask: train, val_mask: val, test_mask: test };
    split.validate(prior)?;
    Ok(split)
}

/// Loads an explicit test split: a CSV of `row,col` pairs designating test
/// entries. Remaining observations become training data, with `val_fraction`
/// of them carved out for validation (seeded, deterministic).
pub fn load_test_split(
    prior: &PriorAssociation,
    path: &Path,
    val_fraction: f64,
    seed: u64,
) -> Result<RatingSplit, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| DataError::Integrity(format!("{}: {e}", path.display())))?;
    let shape = prior.h.raw_dim();
    let mut test = Array2::zeros(shape);
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Parse {
            path: path.display().to_string(),
            line: line + 2,
            msg: e.to_string(),
        })?;
        let parse_idx = |field: Option<&str>, name: &str| -> Result<usize, DataError> {
            field
                .ok_or_else(|| DataError::Parse {
                    path: path.display().to_string(),
                    line: line + 2,
                    msg: format!("missing {name}"),
                })?
                .trim()
                .parse::<usize>()
                .map_err(|e| DataError::Parse {
                    path: path.display().to_string(),
                    line: line + 2,
                    msg: format!("bad {name}: {e}"),
                })
        };
        let i = parse_idx(record.get(0), "row")?;
        let j = parse_idx(record.get(1), "col")?;
        if i >= prior.n1() || j >= prior.n2() {
            return Err(DataError::Parse {
                path: path.display().to_string(),
                line: line + 2,
                msg: format!("index ({i},{j}) out of {}x{}", prior.n1(), prior.n2()),
            });
        }
        if prior.mask[[i, j]] != 1.0 {
            return Err(DataError::Validation(format!(
                "split file references unobserved entry ({i},{j})"
            )));
        }
        test[[i, j]] = 1.0;
    }
    let mut remaining: Vec<(usize, usize)> = prior
        .observed_entries()
        .into_iter()
        .map(|(i, j, _)| (i, j))
        .filter(|&(i, j)| test[[i, j]] == 0.0)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    remaining.shuffle(&mut rng);
    let n_val = (val_fraction * remaining.len() as f64).round() as usize;
    let mut train = Array2::zeros(shape);
    let mut val = Array2::zeros(shape);
    for (idx, &(i, j)) in remaining.iter().enumerate() {
        if idx < n_val {
            val[[i, j]] = 1.0;
        } else {
            train[[i, j]] = 1.0;
        }
    }
    let split = RatingSplit { train_mask: train, val_mask: val, test_mask: test };
    split.validate(prior)?;
    Ok(split)
}

/// Reads a generic rating file: CSV with header `row,col,rating`, 0-based
/// indices. Duplicate coordinates keep the last value (with a warning).
pub fn load_triplets(
    path: &Path,
    n1: usize,
    n2: usize,
    classes: &[f64],
) -> Result<PriorAssociation, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| DataError::Integrity(format!("{}: {e}", path.display())))?;
    let mut h = Array2::zeros((n1, n2));
    let mut mask = Array2::zeros((n1, n2));
    for (line, record) in reader.records().enumerate() {
        let lineno = line + 2; // header is line 1
        let record = record.map_err(|e| DataError::Parse {
            path: path.display().to_string(),
            line: lineno,
            msg: e.to_string(),
        })?;
        let field = |idx: usize, name: &str| -> Result<String, DataError> {
            record
                .get(idx)
                .map(|s| s.trim().to_string())
                .ok_or_else(|| DataError::Parse {
                    path: path.display().to_string(),
                    line: lineno,
                    msg: format!("missing {name}"),
                })
        };
        let i: usize = field(0, "row")?.parse().map_err(|e| DataError::Parse {
            path: path.display().to_string(),
            line: lineno,
            msg: format!("bad row: {e}"),
        })?;
        let j: usize = field(1, "col")?.parse().map_err(|e| DataError::Parse {
            path: path.display().to_string(),
            line: lineno,
            msg: format!("bad col: {e}"),
        })?;
        let rating: f64 = field(2, "rating")?.parse().map_err(|e| DataError::Parse {
            path: path.display().to_string(),
            line: lineno,
            msg: format!("bad rating: {e}"),
        })?;
        if i >= n1 || j >= n2 {
            return Err(DataError::Parse {
                path: path.display().to_string(),
                line: lineno,
                msg: format!("index ({i},{j}) out of {n1}x{n2}"),
            });
        }
        if !classes.iter().any(|&c| (c - rating).abs() <= CLASS_TOL) {
            return Err(DataError::Parse {
                path: path.display().to_string(),
                line: lineno,
                msg: format!("rating {rating} is not a declared class"),
            });
        }
        if mask[[i, j]] == 1.0 {
            log::warn!("{}:{lineno}: duplicate entry ({i},{j}), keeping the last value", path.display());
        }
        h[[i, j]] = rating;
        mask[[i, j]] = 1.0;
    }
    PriorAssociation::new(h, mask, classes.to_vec())
}
