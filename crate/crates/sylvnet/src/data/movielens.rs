//! Loader for the MovieLens 100K archive layout.
//!
//! Expects the standard files inside one directory:
//! `u.info` (counts), `u.data` (tab-separated `user  item  rating  timestamp`,
//! 1-based ids), `u.user` (pipe-separated user metadata) and `u.item`
//! (pipe-separated item metadata with 19 genre flags).
//!
//! Side networks are built by k-NN search over encoded metadata features:
//! users get one-hot age bucket + gender + occupation, items get their genre
//! indicator vector + a one-hot release decade.

use super::network::{knn_graph, Metric, Network};
use super::ratings::PriorAssociation;
use super::DataError;
use crate::Mat;
use ndarray::Array2;
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct MovieLens {
    pub users: Network,
    pub items: Network,
    pub prior: PriorAssociation,
}

/// Upper bounds of the age buckets used for one-hot encoding.
const AGE_BUCKETS: [u32; 6] = [17, 24, 34, 44, 49, 55];

fn age_bucket(age: u32) -> usize {
    AGE_BUCKETS.iter().position(|&hi| age <= hi).unwrap_or(AGE_BUCKETS.len())
}

fn read_lines(path: &Path) -> Result<Vec<String>, DataError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DataError::Integrity(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

/// Reads `u.info` for the declared user/item/rating counts.
fn read_info(dir: &Path) -> Result<(usize, usize, usize), DataError> {
    let path = dir.join("u.info");
    let lines = read_lines(&path)?;
    let mut users = None;
    let mut items = None;
    let mut ratings = None;
    for (idx, line) in lines.iter().enumerate() {
        let mut parts = line.split_whitespace();
        let count: usize = match parts.next() {
            Some(c) => c
                .parse()
                .map_err(|e| parse_err(&path, idx + 1, format!("bad count: {e}")))?,
            None => continue,
        };
        match parts.next() {
            Some("users") => users = Some(count),
            Some("items") => items = Some(count),
            Some("ratings") => ratings = Some(count),
            _ => {}
        }
    }
    match (users, items, ratings) {
        (Some(u), Some(i), Some(r)) => Ok((u, i, r)),
        _ => Err(DataError::Integrity(format!(
            "{}: expected 'users', 'items' and 'ratings' lines",
            path.display()
        ))),
    }
}

fn encode_users(dir: &Path, n_users: usize) -> Result<Mat, DataError> {
    let path = dir.join("u.user");
    let lines = read_lines(&path)?;
    if lines.is_empty() {
        return Err(DataError::Integrity(format!("{} is empty", path.display())));
    }
    struct UserRow {
        id: usize,
        age: u32,
        male: bool,
        occupation: String,
    }
    let mut rows = Vec::with_capacity(lines.len());
    let mut occupations = BTreeSet::new();
    for (idx, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() < 4 {
            return Err(parse_err(&path, idx + 1, "expected id|age|gender|occupation|zip"));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|e| parse_err(&path, idx + 1, format!("bad user id: {e}")))?;
        if id < 1 || id > n_users {
            return Err(parse_err(&path, idx + 1, format!("user id {id} out of 1..={n_users}")));
        }
        let age: u32 = fields[1]
            .parse()
            .map_err(|e| parse_err(&path, idx + 1, format!("bad age: {e}")))?;
        let male = match fields[2] {
            "M" => true,
            "F" => false,
            other => return Err(parse_err(&path, idx + 1, format!("bad gender '{other}'"))),
        };
        let occupation = fields[3].to_string();
        occupations.insert(occupation.clone());
        rows.push(UserRow { id, age, male, occupation });
    }
    if rows.len() != n_users {
        return Err(DataError::Integrity(format!(
            "{}: {} user rows, header declares {n_users}",
            path.display(),
            rows.len()
        )));
    }
    let occ_list: Vec<String> = occupations.into_iter().collect();
    let n_age = AGE_BUCKETS.len() + 1;
    let d = n_age + 2 + occ_list.len();
    let mut features = Array2::zeros((n_users, d));
    for row in rows {
        let u = row.id - 1;
        features[[u, age_bucket(row.age)]] = 1.0;
        features[[u, n_age + usize::from(row.male)]] = 1.0;
        let occ = occ_list.iter().position(|o| *o == row.occupation).unwrap();
        features[[u, n_age + 2 + occ]] = 1.0;
    }
    Ok(features)
}

fn encode_items(dir: &Path, n_items: usize) -> Result<Mat, DataError> {
    let path = dir.join("u.item");
    let lines = read_lines(&path)?;
    if lines.is_empty() {
        return Err(DataError::Integrity(format!("{} is empty", path.display())));
    }
    struct ItemRow {
        id: usize,
        decade: Option<i32>,
        genres: Vec<f64>,
    }
    let mut rows = Vec::with_capacity(lines.len());
    let mut decades = BTreeSet::new();
    let mut n_genres = 0usize;
    for (idx, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() < 6 {
            return Err(parse_err(&path, idx + 1, "expected id|title|date|...|genre flags"));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|e| parse_err(&path, idx + 1, format!("bad item id: {e}")))?;
        if id < 1 || id > n_items {
            return Err(parse_err(&path, idx + 1, format!("item id {id} out of 1..={n_items}")));
        }
        // Release date like "01-Jan-1995"; missing dates leave the decade
        // one-hot all zero.
        let decade = fields[1]
            .rsplit('-')
            .next()
            .and_then(|y| y.parse::<i32>().ok())
            .map(|y| y / 10);
        if let Some(dec) = decade {
            decades.insert(dec);
        }
        let genres: Vec<f64> = fields[5..]
            .iter()
            .enumerate()
            .map(|(g, f)| match f.trim() {
                "0" => Ok(0.0),
                "1" => Ok(1.0),
                other => Err(parse_err(
                    &path,
                    idx + 1,
                    format!("genre flag {g} is '{other}', expected 0 or 1"),
                )),
            })
            .collect::<Result<_, _>>()?;
        n_genres = n_genres.max(genres.len());
        rows.push(ItemRow { id, decade, genres });
    }
    if rows.len() != n_items {
        return Err(DataError::Integrity(format!(
            "{}: {} item rows, header declares {n_items}",
            path.display(),
            rows.len()
        )));
    }
    let decade_list: Vec<i32> = decades.into_iter().collect();
    let d = n_genres + decade_list.len();
    let mut features = Array2::zeros((n_items, d));
    for row in rows {
        let it = row.id - 1;
        for (g, &flag) in row.genres.iter().enumerate() {
            features[[it, g]] = flag;
        }
        if let Some(dec) = row.decade {
            let pos = decade_list.iter().position(|&x| x == dec).unwrap();
            features[[it, n_genres + pos]] = 1.0;
        }
    }
    Ok(features)
}

fn read_ratings(
    dir: &Path,
    n_users: usize,
    n_items: usize,
    expected: usize,
) -> Result<PriorAssociation, DataError> {
    let path = dir.join("u.data");
    let lines = read_lines(&path)?;
    if lines.iter().all(|l| l.trim().is_empty()) {
        return Err(DataError::Integrity(format!("{} is empty", path.display())));
    }
    let mut h = Array2::zeros((n_users, n_items));
    let mut mask = Array2::zeros((n_users, n_items));
    let mut count = 0usize;
    for (idx, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(parse_err(&path, idx + 1, "expected user\\titem\\trating\\ttimestamp"));
        }
        let user: usize = fields[0]
            .trim()
            .parse()
            .map_err(|e| parse_err(&path, idx + 1, format!("bad user id: {e}")))?;
        let item: usize = fields[1]
            .trim()
            .parse()
            .map_err(|e| parse_err(&path, idx + 1, format!("bad item id: {e}")))?;
        let rating: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|e| parse_err(&path, idx + 1, format!("bad rating: {e}")))?;
        if user < 1 || user > n_users || item < 1 || item > n_items {
            return Err(parse_err(
                &path,
                idx + 1,
                format!("ids ({user},{item}) out of 1..={n_users} x 1..={n_items}"),
            ));
        }
        if !(1.0..=5.0).contains(&rating) || rating.fract() != 0.0 {
            return Err(parse_err(&path, idx + 1, format!("rating {rating} not in {{1..5}}")));
        }
        h[[user - 1, item - 1]] = rating;
        mask[[user - 1, item - 1]] = 1.0;
        count += 1;
    }
    if count != expected {
        return Err(DataError::Integrity(format!(
            "{}: {count} ratings, header declares {expected}",
            path.display()
        )));
    }
    PriorAssociation::new(h, mask, vec![1.0, 2.0, 3.0, 4.0, 5.0])
}

/// Loads the archive and builds both side networks with `knn_k` neighbors
/// under the given metric (cosine suits the sparse categorical encodings).
pub fn load_movielens_100k(
    dir: &Path,
    knn_k: usize,
    metric: Metric,
) -> Result<MovieLens, DataError> {
    let (n_users, n_items, n_ratings) = read_info(dir)?;
    let prior = read_ratings(dir, n_users, n_items, n_ratings)?;
    let user_features = encode_users(dir, n_users)?;
    let item_features = encode_items(dir, n_items)?;
    let users = knn_graph(&user_features, knn_k, metric)?;
    let items = knn_graph(&item_features, knn_k, metric)?;
    Ok(MovieLens { users, items, prior })
}

/// Locates the ML-100K directory: `$SYLVNET_DATA_ROOT/ml-100k` when the
/// variable is set, else `./data/ml-100k`. Returns None when `u.data` is
/// absent.
pub fn find_ml100k_dir() -> Option<std::path::PathBuf> {
    let root = std::env::var("SYLVNET_DATA_ROOT")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|_| std::path::PathBuf::from("data"));
    let dir = root.join("ml-100k");
    if dir.join("u.data").exists() {
        Some(dir)
    } else {
        None
    }
}
