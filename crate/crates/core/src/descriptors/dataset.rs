//! Dataset directories.
//!
//! ```text
//! <root>/classes.json            ordered JSON list of class names
//! <root>/<class>/<sample>.tds    one descriptor grid per sample
//! <root>/masks.json              optional signal-row masks (synthetic data)
//! ```
//!
//! Samples within a class are ordered by file name.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::set::DescriptorSet;
use super::tds;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "classes.json";
pub const MASKS: &str = "masks.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub sample_ids: Vec<Vec<String>>,
    pub samples: Vec<Vec<Arc<DescriptorSet>>>,
    /// `signal_masks[class][sample][row]` is true for planted signal rows.
    pub signal_masks: Option<Vec<Vec<Vec<bool>>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MasksFile {
    pub version: u32,
    pub classes: Vec<ClassMasks>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMasks {
    pub name: String,
    pub samples: Vec<SampleMask>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMask {
    pub id: String,
    pub signal_rows: Vec<usize>,
}

fn check_class_name(name: &str) -> Result<()> {
    let bad = name.is_empty()
        || name == "."
        || name == ".."
        || name.contains(['/', '\\', '\0'])
        || name.starts_with('.');
    if bad {
        return Err(Error::format(format!("invalid class name {name:?}")));
    }
    Ok(())
}

/// Parses and validates `classes.json` contents.
pub fn parse_manifest(bytes: &[u8]) -> Result<Vec<String>> {
    let names: Vec<String> =
        serde_json::from_slice(bytes).map_err(|e| Error::format(format!("{MANIFEST}: {e}")))?;
    if names.is_empty() {
        return Err(Error::format(format!("{MANIFEST} lists no classes")));
    }
    let mut seen = std::collections::BTreeSet::new();
    for n in &names {
        check_class_name(n)?;
        if !seen.insert(n.as_str()) {
            return Err(Error::format(format!("duplicate class name {n:?}")));
        }
    }
    Ok(names)
}

/// Parses `masks.json` contents.
pub fn parse_masks(bytes: &[u8]) -> Result<MasksFile> {
    let m: MasksFile =
        serde_json::from_slice(bytes).map_err(|e| Error::format(format!("{MASKS}: {e}")))?;
    if m.version != 1 {
        return Err(Error::format(format!("unsupported masks version {}", m.version)));
    }
    Ok(m)
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Shared `(h, w, d)` of every sample.
    pub fn dims(&self) -> Option<(usize, usize, usize)> {
        self.samples
            .iter()
            .flatten()
            .next()
            .map(|s| (s.height(), s.width(), s.dim()))
    }

    pub fn signal_mask(&self, class: usize, index: usize) -> Option<&[bool]> {
        self.signal_masks
            .as_ref()
            .map(|m| m[class][index].as_slice())
    }

    /// Checks internal consistency: aligned tables and one grid shape.
    pub fn validate(&self) -> Result<()> {
        let n = self.class_names.len();
        if self.samples.len() != n || self.sample_ids.len() != n {
            return Err(Error::invalid("dataset tables are not aligned with classes"));
        }
        let dims = self.dims();
        for (c, (samples, ids)) in self.samples.iter().zip(&self.sample_ids).enumerate() {
            if samples.len() != ids.len() {
                return Err(Error::invalid(format!("class {c}: ids and samples differ in count")));
            }
            for s in samples {
                if Some((s.height(), s.width(), s.dim())) != dims {
                    return Err(Error::invalid(format!(
                        "class {:?} mixes grid shapes; every sample must share h, w, d",
                        self.class_names[c]
                    )));
                }
            }
        }
        if let Some(masks) = &self.signal_masks {
            if masks.len() != n
                || masks.iter().zip(&self.samples).any(|(m, s)| {
                    m.len() != s.len() || m.iter().zip(s).any(|(row, set)| row.len() != set.len())
                })
            {
                return Err(Error::invalid("signal masks do not match the samples"));
            }
        }
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::io(
                root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ));
        }
        let manifest_path = root.join(MANIFEST);
        let bytes = std::fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let class_names = parse_manifest(&bytes)?;
        let mut samples = Vec::with_capacity(class_names.len());
        let mut sample_ids = Vec::with_capacity(class_names.len());
        for name in &class_names {
            let dir = root.join(name);
            let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut files: Vec<(String, std::path::PathBuf)> = Vec::new();
            for entry in entries {
                let entry = entry.map_err(|e| Error::io(&dir, e))?;
                let path = entry.path();
                if path.extension().and_then(|e| e.to_str()) == Some("tds") {
                    let id = path
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .ok_or_else(|| Error::format(format!("non-UTF-8 file name in {}", dir.display())))?
                        .to_string();
                    files.push((id, path));
                }
            }
            files.sort();
            let mut sets = Vec::with_capacity(files.len());
            let mut ids = Vec::with_capacity(files.len());
            for (id, path) in files {
                sets.push(Arc::new(tds::read_file(&path)?));
                ids.push(id);
            }
            samples.push(sets);
            sample_ids.push(ids);
        }
        let masks_path = root.join(MASKS);
        let signal_masks = if masks_path.exists() {
            let bytes = std::fs::read(&masks_path).map_err(|e| Error::io(&masks_path, e))?;
            let file = parse_masks(&bytes)?;
            Some(Self::masks_from_file(&file, &class_names, &sample_ids, &samples)?)
        } else {
            None
        };
        let ds = Self {
            class_names,
            sample_ids,
            samples,
            signal_masks,
        };
        ds.validate().map_err(|e| Error::format(format!("{}: {e}", root.display())))?;
        Ok(ds)
    }

    fn masks_from_file(
        file: &MasksFile,
        names: &[String],
        ids: &[Vec<String>],
        samples: &[Vec<Arc<DescriptorSet>>],
    ) -> Result<Vec<Vec<Vec<bool>>>> {
        if file.classes.len() != names.len() {
            return Err(Error::format("masks.json class list differs from classes.json"));
        }
        let mut out = Vec::with_capacity(names.len());
        for (c, cm) in file.classes.iter().enumerate() {
            if cm.name != names[c] || cm.samples.len() != ids[c].len() {
                return Err(Error::format(format!("masks.json entry for {:?} is inconsistent", names[c])));
            }
            let mut class_masks = Vec::with_capacity(cm.samples.len());
            for (i, sm) in cm.samples.iter().enumerate() {
                if sm.id != ids[c][i] {
                    return Err(Error::format(format!("masks.json sample {:?} not found", sm.id)));
                }
                let m = samples[c][i].len();
                let mut mask = vec![false; m];
                for &r in &sm.signal_rows {
                    *mask
                        .get_mut(r)
                        .ok_or_else(|| Error::format(format!("signal row {r} outside {m} rows")))? = true;
                }
                class_masks.push(mask);
            }
            out.push(class_masks);
        }
        Ok(out)
    }

    pub fn masks_file(&self) -> Option<MasksFile> {
        let masks = self.signal_masks.as_ref()?;
        Some(MasksFile {
            version: 1,
            classes: self
                .class_names
                .iter()
                .enumerate()
                .map(|(c, name)| ClassMasks {
                    name: name.clone(),
                    samples: self.sample_ids[c]
                        .iter()
                        .zip(&masks[c])
                        .map(|(id, mask)| SampleMask {
                            id: id.clone(),
                            signal_rows: mask
                                .iter()
                                .enumerate()
                                .filter_map(|(r, &s)| s.then_some(r))
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
        })
    }

    /// Writes the directory layout under `root`, creating it if needed.
    pub fn save(&self, root: &Path) -> Result<()> {
        self.validate()?;
        for n in &self.class_names {
            check_class_name(n)?;
        }
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let manifest = serde_json::to_vec_pretty(&self.class_names).expect("strings serialize");
        let p = root.join(MANIFEST);
        std::fs::write(&p, manifest).map_err(|e| Error::io(&p, e))?;
        for (c, name) in self.class_names.iter().enumerate() {
            let dir = root.join(name);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (id, set) in self.sample_ids[c].iter().zip(&self.samples[c]) {
                tds::write_file(&dir.join(format!("{id}.tds")), set)?;
            }
        }
        if let Some(masks) = self.masks_file() {
            let p = root.join(MASKS);
            let bytes = serde_json::to_vec_pretty(&masks).expect("masks serialize");
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_validation() {
        assert_eq!(parse_manifest(br#"["a","b"]"#).unwrap(), vec!["a", "b"]);
        assert!(parse_manifest(b"[]").is_err());
        assert!(parse_manifest(br#"["a","a"]"#).is_err());
        assert!(parse_manifest(br#"["../x"]"#).is_err());
        assert!(parse_manifest(br#"[".hidden"]"#).is_err());
        assert!(parse_manifest(br#"{"a":1}"#).is_err());
        assert!(parse_manifest(b"\xff").is_err());
    }

    #[test]
    fn masks_version_checked() {
        assert!(parse_masks(br#"{"version":2,"classes":[]}"#).is_err());
        assert!(parse_masks(br#"{"version":1,"classes":[]}"#).is_ok());
    }

    #[test]
    fn missing_directory_names_path() {
        let err = Dataset::load(Path::new("/definitely/not/here")).unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here"));
    }
}
