//! Plain-text `key=value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};
use moft_core::guidance::DRAG_POINT_WEIGHT;

use crate::Usage;

/// Every recognised key with its default and a one-line meaning.
const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "base seed for scenes and guidance"),
    ("net_seed", "2024", "feature network seed"),
    ("frames", "16", "frames per video"),
    ("height", "32", "latent height"),
    ("width", "32", "latent width"),
    ("latent_channels", "4", "latent channels"),
    ("octaves", "3", "texture octaves"),
    ("scenes", "8", "scenes per direction class"),
    ("q", "0.04", "fraction of channels kept as motion channels"),
    ("steps", "25", "outer guidance steps"),
    ("lr", "400", "learning rate"),
    ("inner", "1", "updates per outer step"),
    ("t1", "19", "composite schedule threshold"),
    ("t2", "18", "composite schedule threshold"),
    ("t3", "5", "last guided step"),
    ("w_c", "1", "motion loss weight"),
    ("w_p", "1", "point loss weight"),
    ("clip_frames", "8", "gradient kept on the first n frames, or all"),
    ("mode", "motion", "motion, composite or point"),
    ("denoise", "true", "smoothing stage after every step"),
    ("drag_radius", "6", "mask radius around a drag trajectory"),
    ("grid_step", "4", "tracking grid spacing"),
    ("grid_margin", "2", "tracking grid margin"),
    ("grad_points", "10", "coordinates per gradient check"),
    ("grad_step", "1e-3", "finite-difference step"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn defaults() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }

    /// Defaults with the drag-specific overrides.
    pub fn drag_defaults() -> Self {
        let mut c = Self::defaults();
        c.values.insert("mode".into(), "composite".into());
        c.values.insert("clip_frames".into(), "all".into());
        c.values.insert("w_p".into(), DRAG_POINT_WEIGHT.to_string());
        c
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(anyhow!(Usage(format!("unknown config key {key:?}")))),
        }
    }

    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!(Usage(format!("config line {}: expected key=value", n + 1))))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        self.merge_text(&text)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = &self.values[key];
        raw.parse()
            .map_err(|e| anyhow!(moft_core::MoftError::Config(format!("{key}={raw}: {e}"))))
    }

    pub fn clip_frames(&self) -> Result<Option<usize>> {
        match self.values["clip_frames"].as_str() {
            "all" | "none" => Ok(None),
            _ => self.get("clip_frames").map(Some),
        }
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.txt");
        std::fs::write(&path, self.to_text()).with_context(|| format!("writing {}", path.display()))
    }
}

pub fn describe_keys() -> String {
    KEYS.iter().map(|(k, v, d)| format!("  {k:<16}{d} (default {v})\n")).collect()
}
