//! Candidate sources and the sharded sample-evaluate-rank loop.
//!
//! Candidate `(iteration, slot)` is a pure function of the source and its
//! seed, so any partition of the flat index range `iteration * B + slot`
//! into shards evaluates exactly the same candidates. Each shard keeps its
//! own Top-K; [`rank_merge`] combines them under the total order
//! `(score, iteration, slot)`.

use std::cmp::Ordering;
use std::ops::Range;

use rand::Rng;

use crate::data::{CategoryMap, GrayImage, MaskConfig};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::generator::{sample_latent, Latent, LibraryStream, SyntheticGenerator};
use crate::numerics::RngStream;

use super::evaluator::Scorer;

/// An unscored candidate image and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub fine_category: usize,
    /// `None` for library entries.
    pub latent: Option<Latent>,
    pub library_id: Option<String>,
    pub image: GrayImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub proposal: Proposal,
    pub score: f64,
    pub iteration: usize,
    pub slot: usize,
}

impl Candidate {
    /// Total order used for ranking.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then(self.iteration.cmp(&other.iteration))
            .then(self.slot.cmp(&other.slot))
    }
}

pub trait CandidateSource: Sync {
    fn propose(&self, iteration: usize, slot: usize) -> Result<Proposal>;
}

/// Fine categories a generator source may draw.
#[derive(Clone, Debug, PartialEq)]
pub enum FinePrior {
    /// Uniform over all generator categories.
    Uniform,
    /// Uniform over the fine set of one coarse label.
    Coarse { label: usize, fine: Vec<usize> },
}

impl FinePrior {
    pub fn coarse(label: usize, map: &CategoryMap) -> Result<Self> {
        Ok(FinePrior::Coarse {
            label,
            fine: map.fine_set(label)?.to_vec(),
        })
    }
}

/// Fresh generator samples; candidate `(t, s)` uses its own random stream.
pub struct GeneratorSource<'a> {
    generator: &'a SyntheticGenerator,
    mask: MaskConfig,
    prior: FinePrior,
    truncation: Option<f64>,
    root: RngStream,
}

impl<'a> GeneratorSource<'a> {
    pub fn new(
        generator: &'a SyntheticGenerator,
        mask: MaskConfig,
        prior: FinePrior,
        truncation: Option<f64>,
        root: RngStream,
    ) -> Result<Self> {
        if let FinePrior::Coarse { fine, .. } = &prior {
            if let Some(&bad) = fine.iter().find(|&&c| c >= generator.n_categories()) {
                return Err(Error::invalid(format!("fine category {bad} outside the generator's range")));
            }
            if fine.is_empty() {
                return Err(Error::invalid("empty fine-category set"));
            }
        }
        Ok(Self {
            generator,
            mask,
            prior,
            truncation,
            root,
        })
    }
}

impl CandidateSource for GeneratorSource<'_> {
    fn propose(&self, iteration: usize, slot: usize) -> Result<Proposal> {
        let mut rng = self.root.child(iteration).child(slot);
        let fine_category = match &self.prior {
            FinePrior::Uniform => rng.random_range(0..self.generator.n_categories()),
            FinePrior::Coarse { fine, .. } => fine[rng.random_range(0..fine.len())],
        };
        let latent = sample_latent(&mut rng, self.truncation)?;
        let image = self.generator.generate_preprocessed(fine_category, &latent, &self.mask)?;
        Ok(Proposal {
            fine_category,
            latent: Some(latent),
            library_id: None,
            image,
        })
    }
}

/// Library entries in stored order, cycling once the epoch is exhausted.
pub struct LibrarySource<'a> {
    stream: LibraryStream<'a>,
    batch_size: usize,
}

impl<'a> LibrarySource<'a> {
    pub fn new(stream: LibraryStream<'a>, batch_size: usize) -> Self {
        Self { stream, batch_size }
    }
}

impl CandidateSource for LibrarySource<'_> {
    fn propose(&self, iteration: usize, slot: usize) -> Result<Proposal> {
        let e = self.stream.get(iteration * self.batch_size + slot);
        Ok(Proposal {
            fine_category: e.fine_category,
            latent: None,
            library_id: Some(e.id.clone()),
            image: e.image.clone(),
        })
    }
}

/// Wraps a source and substitutes a fixed proposal at one position.
pub struct PlantedSource<S> {
    pub inner: S,
    pub iteration: usize,
    pub slot: usize,
    pub proposal: Proposal,
}

impl<S: CandidateSource> CandidateSource for PlantedSource<S> {
    fn propose(&self, iteration: usize, slot: usize) -> Result<Proposal> {
        if (iteration, slot) == (self.iteration, self.slot) {
            Ok(self.proposal.clone())
        } else {
            self.inner.propose(iteration, slot)
        }
    }
}

/// Bounded best-K set under [`Candidate::rank_cmp`].
#[derive(Clone, Debug)]
pub struct TopK {
    k: usize,
    items: Vec<Candidate>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    /// Whether a candidate with this key would be kept.
    pub fn admits(&self, score: f64, iteration: usize, slot: usize) -> bool {
        self.items.len() < self.k
            || self.items.last().is_some_and(|w| {
                score
                    .total_cmp(&w.score)
                    .then(iteration.cmp(&w.iteration))
                    .then(slot.cmp(&w.slot))
                    .is_lt()
            })
    }

    pub fn push(&mut self, c: Candidate) {
        if !self.admits(c.score, c.iteration, c.slot) {
            return;
        }
        let pos = self.items.partition_point(|x| x.rank_cmp(&c).is_lt());
        self.items.insert(pos, c);
        self.items.truncate(self.k);
    }

    pub fn into_sorted(self) -> Vec<Candidate> {
        self.items
    }
}

/// Outcome of evaluating one contiguous flat-index range.
#[derive(Clone, Debug)]
pub struct ShardResult {
    pub range: Range<usize>,
    pub top: Vec<Candidate>,
    /// Lowest score seen per iteration touched by the shard.
    pub iteration_best: Vec<(usize, f64)>,
}

pub fn run_shard(
    source: &dyn CandidateSource,
    encoder: &EncoderModel,
    scorer: &Scorer,
    target: &[f64],
    batch_size: usize,
    range: Range<usize>,
    k: usize,
) -> Result<ShardResult> {
    let mut top = TopK::new(k);
    let mut iteration_best: Vec<(usize, f64)> = Vec::new();
    for flat in range.clone() {
        let (iteration, slot) = (flat / batch_size, flat % batch_size);
        let proposal = source.propose(iteration, slot)?;
        let pred = encoder.encode_concat(&proposal.image)?;
        let score = scorer.score(&pred, target)?;
        match iteration_best.last_mut() {
            Some((t, best)) if *t == iteration => *best = best.min(score),
            _ => iteration_best.push((iteration, score)),
        }
        if top.admits(score, iteration, slot) {
            top.push(Candidate {
                proposal,
                score,
                iteration,
                slot,
            });
        }
    }
    Ok(ShardResult {
        range,
        top: top.into_sorted(),
        iteration_best,
    })
}

/// Merges shard results into the Top-K and the running-best trace (one
/// entry per iteration, non-increasing). Overlapping shard ranges are
/// rejected.
pub fn rank_merge(mut shards: Vec<ShardResult>, k: usize) -> Result<(Vec<Candidate>, Vec<f64>)> {
    shards.sort_by_key(|s| (s.range.start, s.range.end));
    for pair in shards.windows(2) {
        if pair[1].range.start < pair[0].range.end {
            return Err(Error::invalid(format!(
                "shard ranges {:?} and {:?} overlap",
                pair[0].range, pair[1].range
            )));
        }
    }
    let mut top = TopK::new(k);
    let mut per_iter: Vec<f64> = Vec::new();
    for shard in shards {
        for (t, best) in shard.iteration_best {
            if per_iter.len() <= t {
                per_iter.resize(t + 1, f64::INFINITY);
            }
            per_iter[t] = per_iter[t].min(best);
        }
        for c in shard.top {
            top.push(c);
        }
    }
    let mut running = f64::INFINITY;
    let trace = per_iter
        .into_iter()
        .map(|b| {
            running = running.min(b);
            running
        })
        .collect();
    Ok((top.into_sorted(), trace))
}

/// Splits `0..total` into `workers` contiguous ranges of near-equal length.
pub fn shard_ranges(total: usize, workers: usize) -> Vec<Range<usize>> {
    let w = workers.clamp(1, total.max(1));
    (0..w).map(|i| (i * total / w)..((i + 1) * total / w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(score: f64, iteration: usize, slot: usize) -> Candidate {
        Candidate {
            proposal: Proposal {
                fine_category: 0,
                latent: None,
                library_id: None,
                image: GrayImage::filled(1, 1, 0.5).unwrap(),
            },
            score,
            iteration,
            slot,
        }
    }

    #[test]
    fn topk_keeps_best_with_tie_order() {
        let mut t = TopK::new(3);
        for (s, i, j) in [(0.5, 0, 0), (0.2, 0, 1), (0.2, 0, 2), (0.9, 1, 0), (0.2, 1, 0), (0.1, 1, 1)] {
            t.push(cand(s, i, j));
        }
        let keys: Vec<(f64, usize, usize)> = t.into_sorted().iter().map(|c| (c.score, c.iteration, c.slot)).collect();
        assert_eq!(keys, vec![(0.1, 1, 1), (0.2, 0, 1), (0.2, 0, 2)]);
    }

    #[test]
    fn shard_ranges_partition() {
        for (total, w) in [(10, 3), (7, 7), (5, 9), (1600, 4)] {
            let r = shard_ranges(total, w);
            assert_eq!(r.first().unwrap().start, 0);
            assert_eq!(r.last().unwrap().end, total);
            assert!(r.windows(2).all(|p| p[0].end == p[1].start && !p[1].is_empty()));
        }
    }

    #[test]
    fn merge_rejects_overlap_and_builds_trace() {
        let a = ShardResult {
            range: 0..4,
            top: vec![cand(0.3, 0, 1)],
            iteration_best: vec![(0, 0.3), (1, 0.6)],
        };
        let b = ShardResult {
            range: 4..8,
            top: vec![cand(0.2, 2, 0)],
            iteration_best: vec![(2, 0.2), (3, 0.4)],
        };
        let (top, trace) = rank_merge(vec![b.clone(), a.clone()], 1).unwrap();
        assert_eq!((top[0].iteration, top[0].slot), (2, 0));
        assert_eq!(trace, vec![0.3, 0.3, 0.2, 0.2]);
        let dup = ShardResult { range: 2..6, ..b };
        assert!(rank_merge(vec![a, dup], 1).is_err());
    }
}
