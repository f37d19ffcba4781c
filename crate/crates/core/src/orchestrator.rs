//! One independently trained network per positive class, run side by side on
//! the same image.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::thread;

use serde::Serialize;

use crate::checkpoint::load_model;
use crate::detect::{detect_with_net, DetectConfig, Detection, DetectionDocument};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{DisCnn, InferenceNet};

/// A registered class model.
pub struct ClassEntry {
    /// Where the model was loaded from, if it came from disk.
    pub checkpoint: Option<PathBuf>,
    pub config: DetectConfig,
    net: InferenceNet,
}

/// Class name to model and detection settings, iterated in name order.
#[derive(Default)]
pub struct ClassRegistry {
    entries: BTreeMap<String, ClassEntry>,
}

impl ClassRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&ClassEntry> {
        self.entries.get(name)
    }

    /// Loads `checkpoint` and adds it under `name`. On any error the registry is unchanged.
    pub fn register(&mut self, name: &str, checkpoint: impl AsRef<Path>, config: DetectConfig) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::DuplicateClass(name.to_string()));
        }
        let path = checkpoint.as_ref();
        let model = load_model(path)?;
        self.insert(name, Some(path.to_path_buf()), &model, config)
    }

    /// Adds an in-memory model under `name`.
    pub fn register_model(&mut self, name: &str, model: &DisCnn, config: DetectConfig) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::DuplicateClass(name.to_string()));
        }
        self.insert(name, None, model, config)
    }

    fn insert(&mut self, name: &str, checkpoint: Option<PathBuf>, model: &DisCnn, config: DetectConfig) -> Result<()> {
        config.validate()?;
        let net = InferenceNet::new(model)?;
        self.entries.insert(
            name.to_string(),
            ClassEntry {
                checkpoint,
                config,
                net,
            },
        );
        Ok(())
    }
}

/// Runs every registered class on `image` with up to `parallelism` workers.
///
/// Class failures are reported in place and do not stop the other classes.
/// The map is identical for every `parallelism`.
pub fn detect_multi(image: &Image, registry: &ClassRegistry, parallelism: usize) -> Result<BTreeMap<String, Result<Detection>>> {
    if registry.is_empty() {
        return Err(Error::EmptyRegistry);
    }
    let entries: Vec<(&String, &ClassEntry)> = registry.entries.iter().collect();
    let workers = parallelism.clamp(1, entries.len());
    let run = |e: &ClassEntry| detect_with_net(image, &e.net, &e.config, 1);
    if workers == 1 {
        return Ok(entries.iter().map(|(n, e)| ((*n).clone(), run(e))).collect());
    }
    let results: Vec<Vec<(String, Result<Detection>)>> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|k| {
                let mine: Vec<(&String, &ClassEntry)> = entries.iter().skip(k).step_by(workers).copied().collect();
                s.spawn(move || mine.into_iter().map(|(n, e)| (n.clone(), run(e))).collect::<Vec<_>>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("class worker panicked")).collect()
    });
    Ok(results.into_iter().flatten().collect())
}

/// Per-class entry of the multi-class document.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ClassOutcome {
    Detected(DetectionDocument),
    Failed { error: String },
}

/// JSON document mapping class name to its detection document.
pub fn multi_document(image_id: &str, registry: &ClassRegistry, results: &BTreeMap<String, Result<Detection>>) -> BTreeMap<String, ClassOutcome> {
    results
        .iter()
        .map(|(name, r)| {
            let outcome = match (r, registry.get(name)) {
                (Ok(d), Some(e)) => ClassOutcome::Detected(DetectionDocument::new(image_id, &e.config, d)),
                (Err(err), _) => ClassOutcome::Failed { error: err.to_string() },
                (Ok(_), None) => ClassOutcome::Failed {
                    error: format!("class {name:?} is not registered"),
                },
            };
            (name.clone(), outcome)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::save_model;
    use crate::detect::detect;

    #[test]
    fn registry_rules() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("m.dcnn");
        save_model(&DisCnn::new(1), &good).unwrap();
        let bad = dir.path().join("bad.dcnn");
        std::fs::write(&bad, b"DCNN1 nope").unwrap();

        let mut r = ClassRegistry::new();
        let cfg = DetectConfig::new(40, 1.0);
        r.register("car", &good, cfg.clone()).unwrap();
        r.register("bird", &good, cfg.clone()).unwrap();
        assert_eq!(r.len(), 2);
        assert!(matches!(r.register("car", &good, cfg.clone()), Err(Error::DuplicateClass(_))));
        assert!(r.register("cat", &bad, cfg.clone()).is_err());
        assert!(r.register("dog", dir.path().join("missing"), cfg).is_err());
        assert_eq!(r.names().collect::<Vec<_>>(), vec!["bird", "car"]);
    }

    #[test]
    fn empty_registry_is_an_error() {
        let img = Image::new(8, 8, [0, 0, 0]).unwrap();
        assert!(matches!(detect_multi(&img, &ClassRegistry::new(), 2), Err(Error::EmptyRegistry)));
    }

    #[test]
    fn failures_stay_per_class() {
        let img = Image::new(48, 48, [3, 4, 5]).unwrap();
        let mut r = ClassRegistry::new();
        r.register_model("fine", &DisCnn::new(2), DetectConfig::new(40, 0.5)).unwrap();
        r.register_model("too_big", &DisCnn::new(3), DetectConfig::new(64, 0.5)).unwrap();
        let out = detect_multi(&img, &r, 2).unwrap();
        assert!(out["fine"].is_ok());
        assert!(out["too_big"].is_err());
        assert_eq!(
            out["fine"].as_ref().unwrap(),
            &detect(&img, &DisCnn::new(2), &DetectConfig::new(40, 0.5)).unwrap()
        );
        let doc = serde_json::to_value(multi_document("x", &r, &out)).unwrap();
        assert!(doc["too_big"]["error"].is_string());
        assert!(doc["fine"]["clusters"].is_array());
    }
}
