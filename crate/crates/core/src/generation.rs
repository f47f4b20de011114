//! Image batch planning and resumable execution.
//!
//! Each final prompt gets `images_per_prompt` requests whose seeds are derived
//! from `(prompt_id, config_id, index)`. Results are recorded in an append-only
//! `manifest.jsonl` under the output directory; the latest line for a request
//! wins, and a rerun skips every request whose image is on disk with the
//! recorded digest.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{self, ArtifactError, JsonlAppender, FINAL_PROMPT_SCHEMA, MANIFEST_SCHEMA};
use crate::backend::{BackendError, ImageBackend};
use crate::refinement::ConfigId;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const IMAGE_DIR: &str = "images";
pub const DEFAULT_IMAGES_PER_PROMPT: u32 = 2;

/// A prompt ready for the image model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalPrompt {
    pub prompt_id: String,
    pub noun_id: String,
    pub config_id: ConfigId,
    pub text: String,
}

pub fn read_final_prompts(path: &Path) -> Result<Vec<FinalPrompt>, ArtifactError> {
    artifact::read_jsonl(path, FINAL_PROMPT_SCHEMA)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RequestKey {
    pub prompt_id: String,
    pub config_id: ConfigId,
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRequest {
    pub prompt_id: String,
    pub noun_id: String,
    pub config_id: ConfigId,
    pub prompt_text: String,
    pub seed: u64,
    pub index: u32,
}

impl ImageRequest {
    pub fn key(&self) -> RequestKey {
        RequestKey {
            prompt_id: self.prompt_id.clone(),
            config_id: self.config_id,
            index: self.index,
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}__{}__{}.png", self.prompt_id, self.config_id, self.index)
    }
}

/// Seed in the 32-bit range most diffusion servers accept.
pub fn derive_seed(prompt_id: &str, config_id: ConfigId, index: u32) -> u64 {
    let key = format!("{prompt_id}\u{0}{config_id}\u{0}{index}");
    let digest = artifact::sha256_hex(key.as_bytes());
    u64::from_str_radix(&digest[..8], 16).expect("hex digest")
}

pub fn plan_batch(prompts: &[FinalPrompt], images_per_prompt: u32) -> Vec<ImageRequest> {
    prompts
        .iter()
        .flat_map(|p| {
            (0..images_per_prompt).map(move |index| ImageRequest {
                prompt_id: p.prompt_id.clone(),
                noun_id: p.noun_id.clone(),
                config_id: p.config_id,
                prompt_text: p.text.clone(),
                seed: derive_seed(&p.prompt_id, p.config_id, index),
                index,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Ok,
    Failed,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub prompt_id: String,
    pub noun_id: String,
    pub config_id: ConfigId,
    pub index: u32,
    pub seed: u64,
    /// Relative to the output directory.
    pub path: Option<String>,
    pub digest: Option<String>,
    pub status: EntryStatus,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ManifestEntry {
    pub fn key(&self) -> RequestKey {
        RequestKey {
            prompt_id: self.prompt_id.clone(),
            config_id: self.config_id,
            index: self.index,
        }
    }

    /// True when the entry succeeded and its file still matches the digest.
    pub fn is_verified(&self, out_dir: &Path) -> bool {
        match (self.status, &self.path, &self.digest) {
            (EntryStatus::Ok, Some(p), Some(d)) => std::fs::read(out_dir.join(p))
                .map(|bytes| artifact::sha256_hex(&bytes) == *d)
                .unwrap_or(false),
            _ => false,
        }
    }
}

/// A successfully generated image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageArtifact {
    pub request: RequestKey,
    pub path: PathBuf,
    pub digest: String,
    pub backend: String,
}

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("manifest I/O failed: {0}")]
    Manifest(#[from] ArtifactError),
    #[error("duplicate request {0:?} in batch")]
    DuplicateRequest(RequestKey),
}

/// Latest manifest entry per request, in first-seen order.
pub fn read_manifest(out_dir: &Path) -> Result<Vec<ManifestEntry>, ArtifactError> {
    let all: Vec<ManifestEntry> =
        artifact::read_jsonl_or_empty(&out_dir.join(MANIFEST_FILE), MANIFEST_SCHEMA)?;
    let mut order: Vec<RequestKey> = Vec::new();
    let mut latest: HashMap<RequestKey, ManifestEntry> = HashMap::new();
    for e in all {
        let k = e.key();
        if latest.insert(k.clone(), e).is_none() {
            order.push(k);
        }
    }
    Ok(order
        .into_iter()
        .filter_map(|k| latest.remove(&k))
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchReport {
    pub generated: usize,
    pub skipped: usize,
    pub failed: usize,
    pub artifacts: Vec<ImageArtifact>,
}

fn generate_one(req: &ImageRequest, backend: &dyn ImageBackend, out_dir: &Path) -> ManifestEntry {
    let rel = format!("{IMAGE_DIR}/{}", req.file_name());
    let outcome = backend
        .generate(&req.prompt_text, req.seed)
        .and_then(|bytes| {
            artifact::write_atomic(&out_dir.join(&rel), &bytes)
                .map(|_| artifact::sha256_hex(&bytes))
                .map_err(|e| BackendError::Other(e.to_string()))
        });
    let (path, digest, status, error) = match outcome {
        Ok(d) => (Some(rel), Some(d), EntryStatus::Ok, None),
        Err(e) => (None, None, EntryStatus::Failed, Some(e.to_string())),
    };
    ManifestEntry {
        prompt_id: req.prompt_id.clone(),
        noun_id: req.noun_id.clone(),
        config_id: req.config_id,
        index: req.index,
        seed: req.seed,
        path,
        digest,
        status,
        backend: backend.label().to_string(),
        error,
    }
}

/// Generates every request not already completed, `parallelism` at a time.
///
/// Backend failures become `failed` manifest lines and the batch carries on;
/// only manifest I/O errors abort.
pub fn run_batch(
    requests: &[ImageRequest],
    backend: &dyn ImageBackend,
    out_dir: &Path,
    parallelism: usize,
) -> Result<BatchReport, GenerationError> {
    let mut seen = std::collections::HashSet::new();
    for r in requests {
        if !seen.insert(r.key()) {
            return Err(GenerationError::DuplicateRequest(r.key()));
        }
    }
    let existing: HashMap<RequestKey, ManifestEntry> = read_manifest(out_dir)?
        .into_iter()
        .map(|e| (e.key(), e))
        .collect();
    let mut report = BatchReport::default();
    let mut pending = Vec::new();
    for r in requests {
        match existing.get(&r.key()) {
            Some(e) if e.is_verified(out_dir) => {
                report.skipped += 1;
                report.artifacts.push(ImageArtifact {
                    request: r.key(),
                    path: out_dir.join(e.path.as_deref().unwrap_or_default()),
                    digest: e.digest.clone().unwrap_or_default(),
                    backend: e.backend.clone(),
                });
            }
            _ => pending.push(r),
        }
    }
    if pending.is_empty() {
        return Ok(report);
    }
    let mut manifest = JsonlAppender::open(&out_dir.join(MANIFEST_FILE), MANIFEST_SCHEMA)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| ArtifactError::io(out_dir, std::io::Error::other(e)))?;
    for chunk in pending.chunks(parallelism.max(1) * 4) {
        let entries: Vec<ManifestEntry> = pool.install(|| {
            chunk
                .par_iter()
                .map(|r| generate_one(r, backend, out_dir))
                .collect()
        });
        for e in entries {
            manifest.append(&e)?;
            match e.status {
                EntryStatus::Ok => {
                    report.generated += 1;
                    report.artifacts.push(ImageArtifact {
                        request: e.key(),
                        path: out_dir.join(e.path.as_deref().unwrap_or_default()),
                        digest: e.digest.clone().unwrap_or_default(),
                        backend: e.backend.clone(),
                    });
                }
                EntryStatus::Failed => {
                    log::warn!(
                        "{}/{}/{}: {}",
                        e.prompt_id,
                        e.config_id,
                        e.index,
                        e.error.as_deref().unwrap_or("")
                    );
                    report.failed += 1;
                }
            }
        }
    }
    Ok(report)
}

/// Deterministic placeholder renderer: an 8×8 grid of colors taken from the
/// digest of `(prompt, seed)`.
#[derive(Debug, Clone)]
pub struct StubImageBackend {
    width: u32,
    height: u32,
}

impl StubImageBackend {
    pub fn new(width: u32, height: u32) -> Self {
        StubImageBackend {
            width: width.max(8),
            height: height.max(8),
        }
    }
}

impl Default for StubImageBackend {
    fn default() -> Self {
        StubImageBackend::new(64, 64)
    }
}

impl ImageBackend for StubImageBackend {
    fn generate(&self, prompt: &str, seed: u64) -> Result<Vec<u8>, BackendError> {
        let digest = hex::decode(artifact::sha256_hex(
            format!("{seed}\u{0}{prompt}").as_bytes(),
        ))
        .unwrap();
        let (cw, ch) = (self.width / 8, self.height / 8);
        let img = RgbImage::from_fn(self.width, self.height, |x, y| {
            let cell = ((y / ch.max(1)).min(7) * 8 + (x / cw.max(1)).min(7)) as usize;
            let i = (cell * 3) % digest.len();
            Rgb([digest[i], digest[(i + 1) % 32], digest[(i + 2) % 32]])
        });
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png)
            .map_err(|e| BackendError::Other(e.to_string()))?;
        Ok(buf.into_inner())
    }

    fn label(&self) -> &str {
        "stub"
    }
}
