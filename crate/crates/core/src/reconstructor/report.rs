//! `report.json` plus `rank_<r>.pgm` images for one reconstruction.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{read_pgm, write_pgm, GrayImage};
use crate::error::{Error, Result};
use crate::fsio;

use super::{Decoded, ReconstructionResult, SearchConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportEntry {
    pub rank: usize,
    pub fine_category: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub latent: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub library_id: Option<String>,
    pub score: f64,
    pub iteration: usize,
    pub slot: usize,
    /// Relative to the report directory.
    pub image: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionReport {
    pub target_id: String,
    pub mode: String,
    pub config: SearchConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub decoded: Option<Decoded>,
    pub evaluated: usize,
    pub best_trace: Vec<f64>,
    pub entries: Vec<ReportEntry>,
    /// Content hashes of the models and inputs used.
    pub inputs: BTreeMap<String, String>,
}

pub fn write_report(result: &ReconstructionResult, dir: &Path, inputs: BTreeMap<String, String>) -> Result<ReconstructionReport> {
    let mut entries = Vec::with_capacity(result.candidates.len());
    for (i, c) in result.candidates.iter().enumerate() {
        let image = format!("rank_{}.pgm", i + 1);
        write_pgm(&dir.join(&image), &c.proposal.image)?;
        entries.push(ReportEntry {
            rank: i + 1,
            fine_category: c.proposal.fine_category,
            latent: c.proposal.latent.as_ref().map(|z| z.values().to_vec()),
            library_id: c.proposal.library_id.clone(),
            score: c.score,
            iteration: c.iteration,
            slot: c.slot,
            image,
        });
    }
    let report = ReconstructionReport {
        target_id: result.target_id.clone(),
        mode: result.config.mode.to_string(),
        config: result.config.clone(),
        decoded: result.decoded.clone(),
        evaluated: result.evaluated,
        best_trace: result.best_trace.clone(),
        entries,
        inputs,
    };
    fsio::write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

/// Reads a report and its ranked images.
pub fn load_report(dir: &Path) -> Result<(ReconstructionReport, Vec<GrayImage>)> {
    let path = dir.join("report.json");
    let report: ReconstructionReport = fsio::read_json(&path)?;
    if report.entries.iter().enumerate().any(|(i, e)| e.rank != i + 1) {
        return Err(Error::format(&path, "entries", "ranks must run 1..K in order"));
    }
    let images = report
        .entries
        .iter()
        .map(|e| read_pgm(&dir.join(&e.image)))
        .collect::<Result<Vec<_>>>()?;
    Ok((report, images))
}
