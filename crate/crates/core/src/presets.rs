//! Shipped parameter presets and custom preset loading.
//!
//! Builtins are stored as literal JSON documents so the decimal spellings of
//! the published constants survive re-emission byte for byte. Custom presets
//! are JSON files named `<label>.json` in a caller-supplied directory; their
//! raw text is preserved the same way.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dpl::DplParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A labeled, bias-free parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub label: String,
    pub k: f64,
    pub alpha: f64,
    pub q: f64,
    pub beta: f64,
    pub gamma: f64,
    pub b: f64,
}

/// Builtin preset labels, in presentation order.
pub const BUILTIN_LABELS: [&str; 4] = ["base", "medium", "large", "x-to-en"];

const BASE_JSON: &str =
    r#"{"label":"base","k":0.07,"alpha":0.20,"q":1.18,"beta":1.21,"gamma":-0.33,"b":-0.50}"#;
const MEDIUM_JSON: &str =
    r#"{"label":"medium","k":0.07,"alpha":0.25,"q":1.18,"beta":2.41,"gamma":-0.33,"b":-0.50}"#;
const LARGE_JSON: &str =
    r#"{"label":"large","k":0.07,"alpha":0.27,"q":1.18,"beta":3.43,"gamma":-0.33,"b":-0.50}"#;
const X_TO_EN_JSON: &str =
    r#"{"label":"x-to-en","k":0.07,"alpha":0.20,"q":1.18,"beta":1.21,"gamma":-0.25,"b":-0.50}"#;

/// The verbatim JSON document for a builtin label, if it exists.
pub fn builtin_json(label: &str) -> Option<&'static str> {
    match label {
        "base" => Some(BASE_JSON),
        "medium" => Some(MEDIUM_JSON),
        "large" => Some(LARGE_JSON),
        "x-to-en" => Some(X_TO_EN_JSON),
        _ => None,
    }
}

/// Parses a builtin preset.
pub fn get(label: &str) -> Result<Preset> {
    match builtin_json(label) {
        Some(json) => Preset::from_json(json),
        None => Err(Error::UnknownPreset {
            label: label.to_string(),
            available: BUILTIN_LABELS.iter().map(|s| s.to_string()).collect(),
        }),
    }
}

/// Labels resolvable through [`resolve`]: custom `<label>.json` files in
/// `preset_dir` (when given) plus the builtins, deduplicated and sorted.
pub fn available_labels(preset_dir: Option<&Path>) -> Vec<String> {
    let mut labels: Vec<String> = BUILTIN_LABELS.iter().map(|s| s.to_string()).collect();
    if let Some(dir) = preset_dir {
        if let Ok(entries) = std::fs::read_dir(dir) {
            for entry in entries.flatten() {
                let path = entry.path();
                if path.extension().and_then(|e| e.to_str()) == Some("json") {
                    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                        labels.push(stem.to_string());
                    }
                }
            }
        }
    }
    labels.sort();
    labels.dedup();
    labels
}

/// Looks a label up in `preset_dir` first, then in the builtins. Returns the
/// parsed preset together with the verbatim JSON text backing it.
pub fn resolve(label: &str, preset_dir: Option<&Path>) -> Result<(Preset, String)> {
    if let Some(dir) = preset_dir {
        let path = dir.join(format!("{label}.json"));
        if path.is_file() {
            let raw = std::fs::read_to_string(&path)?;
            let preset = Preset::from_json(&raw)?;
            if preset.label != label {
                return Err(Error::domain(format!(
                    "preset file `{}` declares label `{}`",
                    path.display(),
                    preset.label
                )));
            }
            return Ok((preset, raw.trim_end().to_string()));
        }
    }
    match builtin_json(label) {
        Some(json) => Ok((Preset::from_json(json)?, json.to_string())),
        None => Err(Error::UnknownPreset {
            label: label.to_string(),
            available: available_labels(preset_dir),
        }),
    }
}

impl Preset {
    /// Parses and validates a preset document.
    pub fn from_json(raw: &str) -> Result<Preset> {
        let preset: Preset = serde_json::from_str(raw)?;
        // Reuse the params invariants for the numeric fields.
        preset.params::<f64>().validate()?;
        Ok(preset)
    }

    /// Instantiates bias-free law parameters at the requested precision.
    pub fn params<S: Scalar>(&self) -> DplParams<S> {
        DplParams {
            k: S::from_f64c(self.k),
            alpha: S::from_f64c(self.alpha),
            q: S::from_f64c(self.q),
            beta: S::from_f64c(self.beta),
            gamma: S::from_f64c(self.gamma),
            b: S::from_f64c(self.b),
            biases: BTreeMap::new(),
        }
    }
}
