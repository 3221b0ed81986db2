use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fsio;
use crate::numerics::RngStream;

pub const N_COARSE: usize = 10;

pub const COARSE_NAMES: [&str; N_COARSE] = [
    "many humans",
    "few humans",
    "mammal",
    "non-mammal",
    "non-building",
    "building",
    "plant",
    "non-plant",
    "organic texture",
    "inorganic texture",
];

/// Number of fine generator categories mapped to each coarse label.
pub const STANDARD_SET_SIZES: [usize; N_COARSE] = [11, 43, 219, 171, 402, 54, 41, 35, 12, 12];

/// One-to-many map from the 10 coarse labels to fine generator categories.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryMap {
    sets: Vec<Vec<usize>>,
}

impl CategoryMap {
    pub fn new(sets: Vec<Vec<usize>>, n_fine: usize) -> Result<Self> {
        if sets.len() != N_COARSE {
            return Err(Error::invalid(format!("category map needs {N_COARSE} sets, got {}", sets.len())));
        }
        for (label, set) in sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::invalid(format!("coarse label {label} has an empty fine set")));
            }
            if let Some(bad) = set.iter().find(|&&f| f >= n_fine) {
                return Err(Error::invalid(format!(
                    "coarse label {label}: fine index {bad} >= category count {n_fine}"
                )));
            }
        }
        Ok(Self { sets })
    }

    /// The shipped map: contiguous blocks of fine indices with the standard
    /// per-label sizes, covering `0..1000` exactly once.
    pub fn standard() -> Self {
        let mut start = 0;
        let sets = STANDARD_SET_SIZES
            .iter()
            .map(|&n| {
                let set = (start..start + n).collect();
                start += n;
                set
            })
            .collect();
        Self { sets }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }

    pub fn fine_set(&self, coarse: usize) -> Result<&[usize]> {
        self.sets
            .get(coarse)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("coarse label {coarse} out of range")))
    }

    /// First coarse label whose set contains `fine`.
    pub fn coarse_of(&self, fine: usize) -> Option<usize> {
        self.sets.iter().position(|s| s.contains(&fine))
    }

    /// Uniform draw from the fine set of `coarse`.
    pub fn map_to_fine(&self, coarse: usize, rng: &mut RngStream) -> Result<usize> {
        let set = self.fine_set(coarse)?;
        Ok(set[rng.random_range(0..set.len())])
    }

    pub fn load(path: &Path, n_fine: usize) -> Result<Self> {
        let sets: Vec<Vec<usize>> = fsio::read_json(path)?;
        Self::new(sets, n_fine).map_err(|e| Error::format(path, "sets", e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_json(path, &self.sets)
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_map_has_standard_sizes_and_covers_all() {
        let m = CategoryMap::standard();
        assert_eq!(m.sizes(), STANDARD_SET_SIZES.to_vec());
        let mut all: Vec<usize> = m.sets().concat();
        all.sort();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert!(CategoryMap::new(m.sets().to_vec(), 1000).is_ok());
        assert!(CategoryMap::new(m.sets().to_vec(), 999).is_err());
    }

    #[test]
    fn empty_set_is_rejected() {
        let mut sets = vec![vec![0]; N_COARSE];
        sets[3].clear();
        assert!(CategoryMap::new(sets, 10).is_err());
    }

    #[test]
    fn singleton_always_draws_itself() {
        let mut sets = vec![vec![0]; N_COARSE];
        sets[2] = vec![42];
        let m = CategoryMap::new(sets, 100).unwrap();
        let mut rng = RngStream::new(3);
        assert!((0..100).all(|_| m.map_to_fine(2, &mut rng).unwrap() == 42));
    }

    #[test]
    fn draws_are_uniform_over_the_set() {
        let m = CategoryMap::standard();
        let mut rng = RngStream::new(99);
        let n = 10_000;
        let mut counts = [0usize; 11];
        for _ in 0..n {
            counts[m.map_to_fine(0, &mut rng).unwrap()] += 1;
        }
        let p = 1.0 / 11.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn equal_seeds_give_equal_draws() {
        let m = CategoryMap::standard();
        let a: Vec<usize> = {
            let mut r = RngStream::new(5);
            (0..50).map(|_| m.map_to_fine(4, &mut r).unwrap()).collect()
        };
        let b: Vec<usize> = {
            let mut r = RngStream::new(5);
            (0..50).map(|_| m.map_to_fine(4, &mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
    }
}
