//! Run configuration: preset, then config file, then flags. The resolved
//! value is what every artifact echoes.

use std::path::{Path, PathBuf};

use bvrm_core::data::WorldConfig;
use bvrm_core::decoder::DecoderConfig;
use bvrm_core::encoder::EncoderConfig;
use bvrm_core::presets::{self, Preset};
use bvrm_core::reconstructor::{SearchConfig, SearchMode};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Bad configuration or flags; maps to exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub decoder: PathBuf,
    pub encoder: PathBuf,
    pub output: PathBuf,
    /// JSON list of fine-category sets; the built-in map when absent.
    pub category_map: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "data".into(),
            decoder: "models/decoder.json".into(),
            encoder: "models/encoder.json".into(),
            output: "out".into(),
            category_map: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LibraryOptions {
    pub size: usize,
    pub seed: u64,
}

impl Default for LibraryOptions {
    fn default() -> Self {
        Self { size: 1000, seed: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricOptions {
    /// Unrelated generator images per stimulus for the chance baseline.
    pub random_baseline: usize,
    pub baseline_seed: u64,
    /// Per-stage encoder feature correlations.
    pub perceptual: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            random_baseline: 20,
            baseline_seed: 99,
            perceptual: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// World seed; also copied into every component seed.
    pub seed: u64,
    /// Search threads. Not echoed: results do not depend on it.
    #[serde(skip_serializing)]
    pub workers: usize,
    pub paths: Paths,
    pub world: WorldConfig,
    pub decoder: DecoderConfig,
    pub encoder: EncoderConfig,
    pub search: SearchConfig,
    pub library: LibraryOptions,
    pub metrics: MetricOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_preset(presets::desk())
    }
}

/// Flag values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub mode: Option<SearchMode>,
    pub top_k: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub decoder: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_preset(p: Preset) -> Self {
        let mut cfg = Self {
            seed: 7,
            workers: 1,
            paths: Paths::default(),
            world: p.world,
            decoder: p.decoder,
            encoder: p.encoder,
            search: p.search,
            library: LibraryOptions::default(),
            metrics: MetricOptions::default(),
        };
        cfg.propagate_seed();
        cfg
    }

    /// Desk or full-scale preset, overlaid with `file` (keys present there win),
    /// then with `flags`.
    pub fn resolve(paper_scale: bool, file: Option<&Path>, flags: &Overrides) -> anyhow::Result<Self> {
        let base = Self::from_preset(if paper_scale { presets::full_scale() } else { presets::desk() });
        let mut cfg = match file {
            None => base,
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| bad(format!("config file {}: {e}", path.display())))?;
                let overlay: Value = serde_json::from_str(&text)
                    .map_err(|e| bad(format!("config file {}: {e}", path.display())))?;
                let mut merged = serde_json::to_value(&base).expect("config serializes");
                merge(&mut merged, overlay);
                serde_path_to_error::deserialize(merged)
                    .map_err(|e| bad(format!("config file {}: key `{}`: {}", path.display(), e.path(), e.inner())))?
            }
        };
        if let Some(s) = flags.seed {
            cfg.seed = s;
        }
        cfg.propagate_seed();
        if let Some(w) = flags.workers {
            cfg.workers = w;
        }
        if let Some(m) = flags.mode {
            cfg.search.mode = m;
        }
        if let Some(k) = flags.top_k {
            cfg.search.top_k = k;
        }
        let p = &mut cfg.paths;
        for (slot, value) in [
            (&mut p.dataset, &flags.dataset),
            (&mut p.output, &flags.output),
            (&mut p.decoder, &flags.decoder),
            (&mut p.encoder, &flags.encoder),
        ] {
            if let Some(v) = value {
                slot.clone_from(v);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn propagate_seed(&mut self) {
        self.decoder.seed = self.seed;
        self.encoder.seed = self.seed;
        self.search.seed = self.seed;
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.workers == 0 {
            return Err(bad("workers: must be at least 1"));
        }
        let checks = [
            ("decoder", self.decoder.validate()),
            ("encoder", self.encoder.validate()),
            ("search", self.search.validate()),
            ("world.generator", self.world.generator_config().validate()),
        ];
        for (key, r) in checks {
            r.map_err(|e| bad(format!("{key}: {e}")))?;
        }
        if self.decoder.voxels_per_node > self.world.voxels_per_roi {
            return Err(bad(format!(
                "decoder.voxels_per_node: {} exceeds world.voxels_per_roi {}",
                self.decoder.voxels_per_node, self.world.voxels_per_roi
            )));
        }
        if self.library.size == 0 {
            return Err(bad("library.size: must be positive"));
        }
        Ok(())
    }

    pub fn echo(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.echo().to_string()))
    }
}

/// Recursive object merge; non-object values in `overlay` replace.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn desk_defaults_round_trip() {
        let cfg = RunConfig::resolve(false, None, &Overrides::default()).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let back: RunConfig = serde_json::from_value(cfg.echo()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn file_then_flags_last_writer_wins() {
        let f = write_config(r#"{"seed": 3, "search": {"top_k": 4, "iterations": 2}, "workers": 2}"#);
        let flags = Overrides {
            top_k: Some(6),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(false, Some(f.path()), &flags).unwrap();
        assert_eq!((cfg.seed, cfg.search.top_k, cfg.search.iterations, cfg.workers), (3, 6, 2, 2));
        assert_eq!((cfg.decoder.seed, cfg.encoder.seed, cfg.search.seed), (3, 3, 3));
        assert_eq!(cfg.search.batch_size, 64);
    }

    #[test]
    fn file_overlays_full_scale_preset() {
        let f = write_config(r#"{"search": {"iterations": 10}}"#);
        let cfg = RunConfig::resolve(true, Some(f.path()), &Overrides::default()).unwrap();
        assert_eq!((cfg.search.batch_size, cfg.search.iterations), (256, 10));
        assert_eq!(cfg.world.resolution, 128);
    }

    #[test]
    fn unknown_key_is_named() {
        let f = write_config(r#"{"search": {"topk": 4}}"#);
        let err = RunConfig::resolve(false, Some(f.path()), &Overrides::default()).unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
        let msg = err.to_string();
        assert!(msg.contains("search.topk") || msg.contains("topk"), "{msg}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let f = write_config(r#"{"search": {"top_k": 0}}"#);
        let err = RunConfig::resolve(false, Some(f.path()), &Overrides::default()).unwrap_err();
        assert!(err.to_string().starts_with("search:"), "{err}");
        let missing = RunConfig::resolve(false, Some(Path::new("/no/such/config.json")), &Overrides::default());
        assert!(missing.unwrap_err().to_string().contains("/no/such/config.json"));
    }

    #[test]
    fn workers_do_not_change_the_echo() {
        let one = RunConfig::default();
        let four = RunConfig { workers: 4, ..RunConfig::default() };
        assert_eq!(one.echo(), four.echo());
        assert_eq!(one.hash(), four.hash());
    }
}
