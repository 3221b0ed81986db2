//! Class-conditional image generator and the finite-library baseline.
//!
//! [`SyntheticGenerator`] keeps the interface a large pre-trained conditional
//! GAN would offer: a 120-D Gaussian latent split into six 20-D chunks, a
//! learned-looking category embedding concatenated to each chunk, stage-wise
//! injection of those conditioning vectors, and truncation. Its weights are a
//! seeded random parameter bank, so it is fully determined by its config.
//!
//! Rendering at resolution `S`:
//! 1. an 8x8 base field from an affine map of `(chunk_0, e_c)`;
//! 2. `log2(S / 8)` stages of bilinear x2 upsampling, each adding windowed
//!    oriented sinusoids whose parameters are affine in `(chunk_k, e_c)`;
//!    chunks not consumed by a stage add further components at the final
//!    stage;
//! 3. a pixelwise sigmoid with gain and a 3-channel tint from
//!    `(chunk_5, e_c)`.
//!
//! Every step is smooth, so images vary continuously with the latent.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{preprocess, read_pgm, write_pgm, CategoryMap, GrayImage, MaskConfig, RgbImage};
use crate::error::{Error, Result};
use crate::fsio;
use crate::numerics::RngStream;

pub const LATENT_DIM: usize = 120;
pub const N_CHUNKS: usize = 6;
pub const CHUNK_DIM: usize = LATENT_DIM / N_CHUNKS;
pub const EMBED_DIM: usize = 64;

const BASE: usize = 8;
const COMPONENTS_PER_STAGE: usize = 2;
/// theta, log-frequency, phase, amplitude, centre x, centre y, log-width
const PARAMS_PER_COMPONENT: usize = 7;
const COND_DIM: usize = CHUNK_DIM + EMBED_DIM;

/// 120 latent values, viewed as six chunks of 20.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Latent(Vec<f64>);

impl Latent {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != LATENT_DIM {
            return Err(Error::shape("latent", format!("expected {LATENT_DIM} values, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent value".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn chunk(&self, k: usize) -> &[f64] {
        &self.0[k * CHUNK_DIM..(k + 1) * CHUNK_DIM]
    }
}

impl TryFrom<Vec<f64>> for Latent {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Latent::new(v)
    }
}

impl From<Latent> for Vec<f64> {
    fn from(l: Latent) -> Self {
        l.0
    }
}

/// i.i.d. standard normal entries; with a truncation bound, any entry whose
/// magnitude exceeds it is redrawn until it falls inside.
pub fn sample_latent(rng: &mut RngStream, truncation: Option<f64>) -> Result<Latent> {
    if let Some(tau) = truncation {
        if !(tau > 0.0) {
            return Err(Error::invalid(format!("truncation must be positive, got {tau}")));
        }
    }
    let values = (0..LATENT_DIM)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            match truncation {
                Some(tau) if z.abs() > tau => continue,
                _ => break z,
            }
        })
        .collect();
    Ok(Latent(values))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_fine_categories: usize,
    pub resolution: usize,
    /// `None` means no truncation.
    pub truncation: Option<f64>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_fine_categories: 1000,
            resolution: 64,
            truncation: None,
            seed: 2019,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let s = self.resolution;
        if s < 16 || !s.is_power_of_two() {
            return Err(Error::invalid(format!("resolution {s} must be a power of two >= 16")));
        }
        if self.n_fine_categories == 0 {
            return Err(Error::invalid("generator needs at least one category"));
        }
        if let Some(tau) = self.truncation {
            if !(tau > 0.0) {
                return Err(Error::invalid(format!("truncation must be positive, got {tau}")));
            }
        }
        Ok(())
    }

    fn upsample_stages(&self) -> usize {
        (self.resolution / BASE).trailing_zeros() as usize
    }
}

/// Affine map from a conditioning vector `(chunk, embedding)`.
#[derive(Clone, Debug)]
struct CondMap {
    out: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl CondMap {
    fn random(out: usize, latent_gain: f64, embed_gain: f64, rng: &mut RngStream) -> Self {
        let ls = latent_gain / (CHUNK_DIM as f64).sqrt();
        let es = embed_gain / (EMBED_DIM as f64).sqrt();
        let mut w = Vec::with_capacity(out * COND_DIM);
        for _ in 0..out {
            for j in 0..COND_DIM {
                let z: f64 = StandardNormal.sample(rng);
                w.push(z * if j < CHUNK_DIM { ls } else { es });
            }
        }
        let b = (0..out).map(|_| 0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect::<Vec<f64>>();
        Self { out, w, b }
    }

    fn apply(&self, chunk: &[f64], embedding: &[f64]) -> Vec<f64> {
        (0..self.out)
            .map(|o| {
                let row = &self.w[o * COND_DIM..(o + 1) * COND_DIM];
                self.b[o]
                    + row[..CHUNK_DIM].iter().zip(chunk).map(|(a, b)| a * b).sum::<f64>()
                    + row[CHUNK_DIM..].iter().zip(embedding).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

/// Deterministic stand-in for a pre-trained conditional generator.
#[derive(Clone, Debug)]
pub struct SyntheticGenerator {
    config: GeneratorConfig,
    embeddings: Vec<f64>,
    base: CondMap,
    /// One map per chunk 1..=4; each yields `COMPONENTS_PER_STAGE` components.
    modulation: Vec<CondMap>,
    finish: CondMap,
}

impl SyntheticGenerator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let root = RngStream::new(config.seed).child("synthetic-generator");
        let mut rng = root.child("embeddings");
        let embeddings = (0..config.n_fine_categories * EMBED_DIM)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let base = CondMap::random(BASE * BASE, 0.8, 1.0, &mut root.child("base"));
        let modulation = (1..N_CHUNKS - 1)
            .map(|k| {
                CondMap::random(
                    COMPONENTS_PER_STAGE * PARAMS_PER_COMPONENT,
                    1.0,
                    1.0,
                    &mut root.child("stage").child(k),
                )
            })
            .collect();
        let finish = CondMap::random(4, 0.4, 1.5, &mut root.child("finish"));
        Ok(Self {
            config,
            embeddings,
            base,
            modulation,
            finish,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn resolution(&self) -> usize {
        self.config.resolution
    }

    pub fn n_categories(&self) -> usize {
        self.config.n_fine_categories
    }

    fn embedding(&self, c: usize) -> &[f64] {
        &self.embeddings[c * EMBED_DIM..(c + 1) * EMBED_DIM]
    }

    /// Chunks feeding each upsampling stage (stage index 0-based).
    fn stage_chunks(&self) -> Vec<Vec<usize>> {
        let n = self.config.upsample_stages();
        let modulated = N_CHUNKS - 2;
        let mut stages: Vec<Vec<usize>> = (0..n).map(|s| vec![s + 1]).collect();
        // leftover chunks refine the final stage
        for k in (n + 1)..=modulated {
            stages[n - 1].push(k);
        }
        stages
    }

    pub fn generate(&self, category: usize, z: &Latent) -> Result<RgbImage> {
        if category >= self.config.n_fine_categories {
            return Err(Error::invalid(format!(
                "category {category} out of range for {} categories",
                self.config.n_fine_categories
            )));
        }
        let e = self.embedding(category);
        let mut field = self.base.apply(z.chunk(0), e);
        let mut size = BASE;
        for chunks in self.stage_chunks() {
            field = upsample2(&field, size);
            size *= 2;
            let stage_amp = 0.9 * 0.6f64.powi(size.trailing_zeros() as i32 - 4);
            let base_freq = size as f64 / 8.0;
            for k in chunks {
                let p = self.modulation[k - 1].apply(z.chunk(k), e);
                for comp in p.chunks_exact(PARAMS_PER_COMPONENT) {
                    add_component(&mut field, size, comp, base_freq, stage_amp);
                }
            }
        }
        let fin = self.finish.apply(z.chunk(N_CHUNKS - 1), e);
        let gain = 1.2 * (0.3 * fin[0].tanh()).exp();
        let tint = [0.6 * fin[1].tanh(), 0.6 * fin[2].tanh(), 0.6 * fin[3].tanh()];
        let data = field
            .iter()
            .map(|&v| tint.map(|t| crate::numerics::sigmoid(gain * v + t)))
            .collect();
        RgbImage::new(size, size, data)
    }

    /// Generated image after grayscale conversion and masking.
    pub fn generate_preprocessed(&self, category: usize, z: &Latent, mask: &MaskConfig) -> Result<GrayImage> {
        preprocess(&self.generate(category, z)?, mask)
    }
}

/// Windowed oriented sinusoid:
/// `a * sin(2 pi f (x cos t + y sin t) + phi) * exp(-|p - c|^2 / (2 w^2))`
/// over centred coordinates in `[-0.5, 0.5]`.
fn add_component(field: &mut [f64], size: usize, p: &[f64], base_freq: f64, stage_amp: f64) {
    let theta = p[0];
    let freq = base_freq * (0.35 * p[1].tanh()).exp();
    let phase = 2.0 * p[2];
    let amp = stage_amp * (0.6 + 0.4 * p[3].tanh());
    let (cx, cy) = (0.3 * p[4].tanh(), 0.3 * p[5].tanh());
    let width = 0.3 * (0.4 * p[6].tanh()).exp();
    let (ct, st) = (theta.cos(), theta.sin());
    let inv2w2 = 1.0 / (2.0 * width * width);
    for y in 0..size {
        let yn = (y as f64 + 0.5) / size as f64 - 0.5;
        for x in 0..size {
            let xn = (x as f64 + 0.5) / size as f64 - 0.5;
            let arg = 2.0 * PI * freq * (xn * ct + yn * st) + phase;
            let d2 = (xn - cx).powi(2) + (yn - cy).powi(2);
            field[y * size + x] += amp * arg.sin() * (-d2 * inv2w2).exp();
        }
    }
}

/// Bilinear x2 upsampling with half-pixel centres and edge clamping.
fn upsample2(src: &[f64], n: usize) -> Vec<f64> {
    let m = 2 * n;
    let coord = |i: usize| -> (usize, usize, f64) {
        let s = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = vec![0.0; m * m];
    for y in 0..m {
        let (y0, y1, ty) = coord(y);
        for x in 0..m {
            let (x0, x1, tx) = coord(x);
            let top = src[y0 * n + x0] * (1.0 - tx) + src[y0 * n + x1] * tx;
            let bot = src[y1 * n + x0] * (1.0 - tx) + src[y1 * n + x1] * tx;
            out[y * m + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct LibraryEntry {
    pub id: String,
    pub fine_category: usize,
    pub image: GrayImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LibraryIndexEntry {
    id: String,
    fine_category: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LibraryIndex {
    generator: Option<GeneratorConfig>,
    seed: Option<u64>,
    entries: Vec<LibraryIndexEntry>,
}

/// Fixed, finite set of preprocessed images; the closed-world baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteLibrary {
    entries: Vec<LibraryEntry>,
    generator: Option<GeneratorConfig>,
    seed: Option<u64>,
}

impl FiniteLibrary {
    pub fn new(entries: Vec<LibraryEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("library must not be empty"));
        }
        Ok(Self {
            entries,
            generator: None,
            seed: None,
        })
    }

    /// `n` generator samples with uniformly drawn fine categories.
    pub fn from_generator(gen: &SyntheticGenerator, n: usize, seed: u64, mask: &MaskConfig) -> Result<Self> {
        let root = RngStream::new(seed).child("library");
        let entries = (0..n)
            .map(|i| {
                let mut rng = root.child(i);
                let fine = rng.random_range(0..gen.n_categories());
                let z = sample_latent(&mut rng, gen.config().truncation)?;
                Ok(LibraryEntry {
                    id: format!("lib{i:05}"),
                    fine_category: fine,
                    image: gen.generate_preprocessed(fine, &z, mask)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut lib = Self::new(entries)?;
        lib.generator = Some(gen.config().clone());
        lib.seed = Some(seed);
        Ok(lib)
    }

    pub fn entries(&self) -> &[LibraryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Candidate stream over the library in stored order. With a filter,
    /// only entries whose fine category belongs to the coarse label remain.
    pub fn stream(&self, filter: Option<(usize, &CategoryMap)>) -> Result<LibraryStream<'_>> {
        let indices: Vec<usize> = match filter {
            None => (0..self.entries.len()).collect(),
            Some((coarse, map)) => {
                let set = map.fine_set(coarse)?;
                (0..self.entries.len())
                    .filter(|&i| set.contains(&self.entries[i].fine_category))
                    .collect()
            }
        };
        if indices.is_empty() {
            let label = filter.map(|(c, _)| c).unwrap_or_default();
            return Err(Error::invalid(format!(
                "library has no entries for coarse label {label}"
            )));
        }
        Ok(LibraryStream { lib: self, indices })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for e in &self.entries {
            write_pgm(&dir.join("stimuli").join(format!("{}.pgm", e.id)), &e.image)?;
        }
        let index = LibraryIndex {
            generator: self.generator.clone(),
            seed: self.seed,
            entries: self
                .entries
                .iter()
                .map(|e| LibraryIndexEntry {
                    id: e.id.clone(),
                    fine_category: e.fine_category,
                })
                .collect(),
        };
        fsio::write_json(&dir.join("library.json"), &index)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index: LibraryIndex = fsio::read_json(&dir.join("library.json"))?;
        let entries = index
            .entries
            .into_iter()
            .map(|e| {
                let image = read_pgm(&dir.join("stimuli").join(format!("{}.pgm", e.id)))?;
                Ok(LibraryEntry {
                    id: e.id,
                    fine_category: e.fine_category,
                    image,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut lib = Self::new(entries)?;
        lib.generator = index.generator;
        lib.seed = index.seed;
        Ok(lib)
    }
}

/// Endless stream over a (possibly filtered) library; position `k` maps to
/// entry `k mod len`, so each epoch visits every entry once in stored order.
#[derive(Clone, Debug)]
pub struct LibraryStream<'a> {
    lib: &'a FiniteLibrary,
    indices: Vec<usize>,
}

impl<'a> LibraryStream<'a> {
    pub fn epoch_len(&self) -> usize {
        self.indices.len()
    }

    pub fn get(&self, k: usize) -> &'a LibraryEntry {
        &self.lib.entries[self.indices[k % self.indices.len()]]
    }

    pub fn epoch(&self) -> impl Iterator<Item = &'a LibraryEntry> + '_ {
        self.indices.iter().map(|&i| &self.lib.entries[i])
    }
}
