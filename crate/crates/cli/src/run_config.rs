//! Flat `key = value` run configuration: data location and split settings
//! plus every training key.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mlsn_core::data::{load_csv_dataset, Dataset, WeakPairSet};
use mlsn_core::trainer::{SplitSpec, TrainConfig, TRAIN_KEYS};

use crate::Failure;

/// Keys handled here rather than by [`TrainConfig`].
pub const RUN_KEYS: [&str; 7] = [
    "dataset",
    "weak_pairs",
    "num_classes",
    "n_labeled",
    "test_fraction",
    "stratified",
    "standardize",
];

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub weak_pairs: Option<PathBuf>,
    pub num_classes: Option<usize>,
    pub split: SplitSpec,
    pub train: TrainConfig,
}

/// Parses `key = value` lines; `#` starts a comment. Later lines win.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, Vec<String>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => {
                out.push((i + 1, k.trim().to_string(), v.trim().to_string()))
            }
            _ => errors.push(format!("line {}: expected `key = value`, got `{line}`", i + 1)),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::validation(format!("cannot read config {}: {e}", path.display())))?;
        let abs = std::path::absolute(path)
            .map_err(|e| Failure::validation(format!("cannot resolve {}: {e}", path.display())))?;
        Self::from_text(&text, abs.parent().unwrap_or(Path::new("/")), overrides)
    }

    /// Applies file entries then `overrides`, collecting every error before
    /// failing, then validates the result as a whole.
    pub fn from_text(text: &str, base: &Path, overrides: &[(String, String)]) -> Result<RunConfig, Failure> {
        let mut errors = Vec::new();
        let mut entries: Vec<(String, String)> = match parse_pairs(text) {
            Ok(p) => p.into_iter().map(|(_, k, v)| (k, v)).collect(),
            Err(e) => {
                errors.extend(e);
                Vec::new()
            }
        };
        entries.extend(overrides.iter().cloned());
        let mut rc = RunConfig::default();
        for (k, v) in &entries {
            if let Err(e) = rc.set(k, v, base) {
                errors.push(format!("{k}: {e}"));
            }
        }
        errors.extend(rc.problems());
        if errors.is_empty() {
            Ok(rc)
        } else {
            Err(Failure::validation(format!(
                "config validation failed:\n  {}",
                errors.join("\n  ")
            )))
        }
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        let path = |v: &str| -> Option<PathBuf> {
            if v.is_empty() || v == "none" {
                None
            } else {
                let p = Path::new(v);
                Some(if p.is_absolute() { p.to_path_buf() } else { base.join(p) })
            }
        };
        let num = |v: &str| v.parse::<usize>().map_err(|_| format!("expected an integer, got `{v}`"));
        match key {
            "dataset" => self.dataset = path(value),
            "weak_pairs" => self.weak_pairs = path(value),
            "num_classes" => {
                self.num_classes = if value == "auto" { None } else { Some(num(value)?) }
            }
            "n_labeled" => self.split.n_labeled = num(value)?,
            "test_fraction" => {
                self.split.test_fraction = value
                    .parse()
                    .map_err(|_| format!("expected a number, got `{value}`"))?
            }
            "stratified" => self.split.stratified = parse_bool(value)?,
            "standardize" => self.split.standardize = parse_bool(value)?,
            _ if TRAIN_KEYS.contains(&key) => self.train.set(key, value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        match &self.dataset {
            None => p.push("dataset: required, path to a dataset CSV".into()),
            Some(d) if !d.is_file() => p.push(format!("dataset: file {} does not exist", d.display())),
            _ => {}
        }
        if let Some(w) = &self.weak_pairs {
            if !w.is_file() {
                p.push(format!("weak_pairs: file {} does not exist", w.display()));
            }
        }
        if self.split.n_labeled == 0 {
            p.push("n_labeled: must be positive".into());
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            p.push(format!("test_fraction: must lie in (0, 1), got {}", self.split.test_fraction));
        }
        if let Some(k) = self.num_classes {
            if k < 2 {
                p.push(format!("num_classes: must be at least 2, got {k}"));
            }
        }
        if let Err(mlsn_core::Error::Config(list)) = self.train.validate() {
            p.extend(list);
        }
        p
    }

    /// Every key with its resolved value, run keys first.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let show = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let mut m = BTreeMap::new();
        m.insert("dataset".into(), show(&self.dataset));
        m.insert("weak_pairs".into(), show(&self.weak_pairs));
        m.insert(
            "num_classes".into(),
            self.num_classes.map_or("auto".into(), |k| k.to_string()),
        );
        m.insert("n_labeled".into(), self.split.n_labeled.to_string());
        m.insert("test_fraction".into(), format!("{:?}", self.split.test_fraction));
        m.insert("stratified".into(), self.split.stratified.to_string());
        m.insert("standardize".into(), self.split.standardize.to_string());
        for (k, v) in self.train.entries() {
            m.insert(k.to_string(), v);
        }
        m
    }

    /// A config file that reproduces this configuration, with absolute paths.
    pub fn to_config_string(&self) -> String {
        let entries = self.entries();
        let mut s = String::new();
        for k in RUN_KEYS.iter().chain(TRAIN_KEYS.iter()) {
            s.push_str(&format!("{k} = {}\n", entries[*k]));
        }
        s
    }

    pub fn load_dataset(&self) -> Result<Dataset, Failure> {
        let path = self.dataset.as_ref().expect("validated");
        Ok(load_csv_dataset(path, self.num_classes)?)
    }

    pub fn load_weak_pairs(&self) -> Result<Option<WeakPairSet>, Failure> {
        match &self.weak_pairs {
            Some(p) => Ok(Some(WeakPairSet::load_csv(p)?)),
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_dataset_is_named() {
        let err = RunConfig::from_text("epochs = 3\n", Path::new("."), &[]).unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("dataset"), "{}", err.message);
    }

    #[test]
    fn every_error_is_listed() {
        let text = "dataset = /nonexistent.csv\nepochs = x\nbogus = 1\nlearning_rate = -1\n";
        let err = RunConfig::from_text(text, Path::new("."), &[]).unwrap_err();
        for needle in ["dataset", "epochs", "bogus", "learning_rate"] {
            assert!(err.message.contains(needle), "{needle}: {}", err.message);
        }
    }

    #[test]
    fn overrides_win_and_paths_resolve_against_base() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("d.csv"), "f1,label\n0,0\n").unwrap();
        let rc = RunConfig::from_text(
            "dataset = d.csv\nseed = 4\n",
            dir.path(),
            &[("seed".into(), "9".into())],
        )
        .unwrap();
        assert_eq!(rc.train.seed, 9);
        assert_eq!(rc.dataset.unwrap(), dir.path().join("d.csv"));
    }

    #[test]
    fn resolved_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("d.csv"), "f1,label\n0,0\n").unwrap();
        let rc = RunConfig::from_text("dataset = d.csv\nepochs = 7\nn_labeled = 10\n", dir.path(), &[]).unwrap();
        let again = RunConfig::from_text(&rc.to_config_string(), Path::new("/"), &[]).unwrap();
        assert_eq!(rc.entries(), again.entries());
    }
}
