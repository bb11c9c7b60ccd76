//! On-disk layouts.
//!
//! Dataset directory: `manifest.json` plus, per split, `<split>.x.f32`
//! (count x grid_h x grid_w little-endian f32, row-major per instance),
//! `<split>.m.f32` (count x M) and `<split>.y.u8` (0-based class index).
//!
//! Series directory (simulator output): `series.json` plus one
//! `scenario_<id>.f64` file per scenario holding n_steps x grid_h x grid_w
//! little-endian f64 pressures.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetSplit, Instance, PipelineError, WellSet};
use crate::fsutil::{f32_to_le_bytes, f64_to_le_bytes, le_bytes_to_f32, write_atomic};
use crate::leaksim::{PressureSeries, ScenarioSpec};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const SERIES_FORMAT_VERSION: u32 = 1;
const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub id: u32,
    pub leak_cell: (usize, usize),
    pub rate_class: usize,
    pub rate_value: f64,
    pub n_steps: usize,
}

impl ScenarioMeta {
    pub fn from_spec(id: u32, spec: &ScenarioSpec) -> Self {
        ScenarioMeta {
            id,
            leak_cell: spec.leak_cell,
            rate_class: spec.rate_class,
            rate_value: spec.rate_value,
            n_steps: spec.n_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub grid_h: usize,
    pub grid_w: usize,
    pub n_classes: usize,
    pub wells: Vec<(usize, usize)>,
    pub splits: BTreeMap<String, usize>,
    pub dtype: String,
    /// Source strength of each class, indexed by 0-based class.
    pub class_rates: Vec<f64>,
    pub scenarios: Vec<ScenarioMeta>,
    pub threshold: f64,
    pub fractions: (f64, f64, f64),
    pub seed: u64,
    /// Per split, `(scenario_id, step)` of every instance in payload order.
    pub index: BTreeMap<String, Vec<(u32, u32)>>,
}

impl DatasetManifest {
    pub fn n_wells(&self) -> usize {
        self.wells.len()
    }

    pub fn well_set(&self) -> Result<WellSet, PipelineError> {
        WellSet::new(self.wells.clone())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn split_items<'a>(split: &'a DatasetSplit, name: &str) -> &'a [Instance] {
    split.get(name).expect("known split name")
}

/// Persist a split. `manifest.splits`, `manifest.index` and the fraction/seed
/// fields are filled from `split`; the rest of `manifest` is taken as given.
pub fn write_dataset(
    dir: &Path,
    manifest: &DatasetManifest,
    split: &DatasetSplit,
) -> Result<DatasetManifest, PipelineError> {
    let n_cells = manifest.grid_h * manifest.grid_w;
    let n_wells = manifest.wells.len();
    let mut manifest = manifest.clone();
    manifest.format_version = DATASET_FORMAT_VERSION;
    manifest.dtype = "f32".into();
    manifest.fractions = split.fractions;
    manifest.seed = split.seed;
    manifest.splits.clear();
    manifest.index.clear();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for name in SPLITS {
        let items = split_items(split, name);
        let mut xs = Vec::with_capacity(items.len() * n_cells);
        let mut ms = Vec::with_capacity(items.len() * n_wells);
        let mut ys = Vec::with_capacity(items.len());
        let mut index = Vec::with_capacity(items.len());
        for inst in items {
            if inst.x.len() != n_cells || inst.m.len() != n_wells || inst.y.len() != manifest.n_classes {
                return Err(PipelineError::Shape(format!(
                    "instance ({}, {}) does not match the manifest dimensions",
                    inst.scenario_id, inst.step
                )));
            }
            let class = inst.class_index();
            if inst.y.iter().enumerate().any(|(j, &v)| v != if j + 1 == class { 1.0 } else { 0.0 }) {
                return Err(PipelineError::Format(format!(
                    "instance ({}, {}) label is not one-hot",
                    inst.scenario_id, inst.step
                )));
            }
            xs.extend_from_slice(&inst.x);
            ms.extend_from_slice(&inst.m);
            ys.push((class - 1) as u8);
            index.push((inst.scenario_id, inst.step));
        }
        let path = dir.join(format!("{name}.x.f32"));
        write_atomic(&path, &f32_to_le_bytes(&xs)).map_err(io_err(&path))?;
        let path = dir.join(format!("{name}.m.f32"));
        write_atomic(&path, &f32_to_le_bytes(&ms)).map_err(io_err(&path))?;
        let path = dir.join(format!("{name}.y.u8"));
        write_atomic(&path, &ys).map_err(io_err(&path))?;
        manifest.splits.insert(name.to_string(), items.len());
        manifest.index.insert(name.to_string(), index);
    }
    let path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| PipelineError::Format(e.to_string()))?;
    write_atomic(&path, &json).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, PipelineError> {
    let path = dir.join("manifest.json");
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes)
        .map_err(|e| PipelineError::Format(format!("{}: {e}", path.display())))?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(PipelineError::Format(format!(
            "unknown dataset format_version {}",
            manifest.format_version
        )));
    }
    if manifest.dtype != "f32" {
        return Err(PipelineError::Format(format!(
            "unsupported dtype {}",
            manifest.dtype
        )));
    }
    Ok(manifest)
}

fn read_f32(path: &Path, expect: usize) -> Result<Vec<f32>, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let v = le_bytes_to_f32(&bytes).ok_or_else(|| {
        PipelineError::Format(format!("{}: length not a multiple of 4", path.display()))
    })?;
    if v.len() != expect {
        return Err(PipelineError::Format(format!(
            "{}: holds {} values, manifest implies {}",
            path.display(),
            v.len(),
            expect
        )));
    }
    Ok(v)
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, DatasetSplit), PipelineError> {
    let manifest = read_manifest(dir)?;
    let n_cells = manifest.grid_h * manifest.grid_w;
    let n_wells = manifest.wells.len();
    let r = manifest.n_classes;
    let mut parts: Vec<Vec<Instance>> = Vec::new();
    for name in SPLITS {
        let count = *manifest.splits.get(name).ok_or_else(|| {
            PipelineError::Format(format!("manifest lacks a count for split `{name}`"))
        })?;
        let index = manifest.index.get(name).ok_or_else(|| {
            PipelineError::Format(format!("manifest lacks an index for split `{name}`"))
        })?;
        if index.len() != count {
            return Err(PipelineError::Format(format!(
                "split `{name}`: index has {} entries, count is {count}",
                index.len()
            )));
        }
        let xs = read_f32(&dir.join(format!("{name}.x.f32")), count * n_cells)?;
        let ms = read_f32(&dir.join(format!("{name}.m.f32")), count * n_wells)?;
        let ypath = dir.join(format!("{name}.y.u8"));
        let ys = fs::read(&ypath).map_err(io_err(&ypath))?;
        if ys.len() != count {
            return Err(PipelineError::Format(format!(
                "{}: holds {} labels, manifest count is {count}",
                ypath.display(),
                ys.len()
            )));
        }
        let mut items = Vec::with_capacity(count);
        for k in 0..count {
            let class = ys[k] as usize;
            if class >= r {
                return Err(PipelineError::Format(format!(
                    "{}: label {class} out of range for {r} classes",
                    ypath.display()
                )));
            }
            let mut y = vec![0.0; r];
            y[class] = 1.0;
            items.push(Instance {
                x: xs[k * n_cells..(k + 1) * n_cells].to_vec(),
                y,
                m: ms[k * n_wells..(k + 1) * n_wells].to_vec(),
                scenario_id: index[k].0,
                step: index[k].1,
            });
        }
        parts.push(items);
    }
    let test = parts.pop().unwrap();
    let val = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    let split = DatasetSplit {
        train,
        val,
        test,
        fractions: manifest.fractions,
        seed: manifest.seed,
    };
    Ok((manifest, split))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub id: u32,
    pub file: String,
    pub spec: ScenarioSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesManifest {
    pub format_version: u32,
    pub grid_h: usize,
    pub grid_w: usize,
    pub dtype: String,
    pub class_rates: Vec<f64>,
    /// Cells masked as shale, `(row, col)`.
    pub inactive_cells: usize,
    pub scenarios: Vec<SeriesEntry>,
    /// Free-form provenance (seed, heterogeneity parameters).
    pub meta: serde_json::Value,
}

fn series_file(id: u32) -> String {
    format!("scenario_{id:03}.f64")
}

pub fn write_series_dir(
    dir: &Path,
    series: &[PressureSeries],
    class_rates: &[f64],
    inactive_cells: usize,
    meta: serde_json::Value,
) -> Result<SeriesManifest, PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (grid_h, grid_w) = series
        .first()
        .map(|s| (s.grid_h, s.grid_w))
        .unwrap_or((0, 0));
    let mut entries = Vec::with_capacity(series.len());
    for (id, s) in series.iter().enumerate() {
        if (s.grid_h, s.grid_w) != (grid_h, grid_w) {
            return Err(PipelineError::Shape("scenarios use different grids".into()));
        }
        let id = id as u32;
        let file = series_file(id);
        let mut bytes = Vec::with_capacity(s.frames.len() * grid_h * grid_w * 8);
        for f in &s.frames {
            bytes.extend_from_slice(&f64_to_le_bytes(f));
        }
        let path = dir.join(&file);
        write_atomic(&path, &bytes).map_err(io_err(&path))?;
        entries.push(SeriesEntry {
            id,
            file,
            spec: s.spec.clone(),
        });
    }
    let manifest = SeriesManifest {
        format_version: SERIES_FORMAT_VERSION,
        grid_h,
        grid_w,
        dtype: "f64".into(),
        class_rates: class_rates.to_vec(),
        inactive_cells,
        scenarios: entries,
        meta,
    };
    let path = dir.join("series.json");
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| PipelineError::Format(e.to_string()))?;
    write_atomic(&path, &json).map_err(io_err(&path))?;
    Ok(manifest)
}

/// Series directory handle; frames are streamed one at a time.
#[derive(Debug, Clone)]
pub struct SeriesDir {
    pub root: PathBuf,
    pub manifest: SeriesManifest,
}

pub fn read_series_dir(dir: &Path) -> Result<SeriesDir, PipelineError> {
    let path = dir.join("series.json");
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let manifest: SeriesManifest = serde_json::from_slice(&bytes)
        .map_err(|e| PipelineError::Format(format!("{}: {e}", path.display())))?;
    if manifest.format_version != SERIES_FORMAT_VERSION || manifest.dtype != "f64" {
        return Err(PipelineError::Format(format!(
            "unsupported series format {} / {}",
            manifest.format_version, manifest.dtype
        )));
    }
    Ok(SeriesDir {
        root: dir.to_path_buf(),
        manifest,
    })
}

impl SeriesDir {
    /// Iterator over the frames of scenario `entry`, validated against its size.
    pub fn frames(
        &self,
        entry: &SeriesEntry,
    ) -> Result<impl Iterator<Item = Result<Vec<f64>, PipelineError>>, PipelineError> {
        let path = self.root.join(&entry.file);
        let cells = self.manifest.grid_h * self.manifest.grid_w;
        let len = fs::metadata(&path).map_err(io_err(&path))?.len() as usize;
        if len != entry.spec.n_steps * cells * 8 {
            return Err(PipelineError::Format(format!(
                "{}: {} bytes, expected {} frames of {} cells",
                path.display(),
                len,
                entry.spec.n_steps,
                cells
            )));
        }
        let mut reader = BufReader::new(fs::File::open(&path).map_err(io_err(&path))?);
        let mut buf = vec![0u8; cells * 8];
        let n = entry.spec.n_steps;
        Ok((0..n).map(move |_| {
            reader.read_exact(&mut buf).map_err(|source| PipelineError::Io {
                path: path.display().to_string(),
                source,
            })?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        }))
    }

    pub fn load(&self, entry: &SeriesEntry) -> Result<PressureSeries, PipelineError> {
        let frames = self.frames(entry)?.collect::<Result<Vec<_>, _>>()?;
        Ok(PressureSeries {
            spec: entry.spec.clone(),
            grid_h: self.manifest.grid_h,
            grid_w: self.manifest.grid_w,
            frames,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{one_hot, split};

    fn manifest(h: usize, w: usize, wells: Vec<(usize, usize)>) -> DatasetManifest {
        DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            grid_h: h,
            grid_w: w,
            n_classes: 3,
            wells,
            splits: BTreeMap::new(),
            dtype: "f32".into(),
            class_rates: vec![1.0, 2.0, 3.0],
            scenarios: vec![],
            threshold: 5.0,
            fractions: (0.0, 0.0, 0.0),
            seed: 0,
            index: BTreeMap::new(),
        }
    }

    fn instances(n: usize) -> Vec<Instance> {
        (0..n)
            .map(|k| {
                let x: Vec<f32> = (0..12).map(|j| ((k * 12 + j) as f32 * 0.173).sin()).collect();
                Instance {
                    m: vec![x[5], x[0]],
                    x,
                    y: one_hot(k % 3 + 1, 3).unwrap(),
                    scenario_id: (k / 4) as u32,
                    step: (k % 4) as u32,
                }
            })
            .collect()
    }

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = split(instances(20), (0.6, 0.2, 0.2), 4).unwrap();
        write_dataset(dir.path(), &manifest(3, 4, vec![(1, 1), (0, 0)]), &s).unwrap();
        let (m, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(back, s);
        assert_eq!(m.splits["test"], s.test.len());
    }

    #[test]
    fn empty_split_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = DatasetSplit {
            train: vec![],
            val: vec![],
            test: vec![],
            fractions: (0.64, 0.16, 0.2),
            seed: 1,
        };
        write_dataset(dir.path(), &manifest(3, 4, vec![(0, 0)]), &s).unwrap();
        let (m, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(back, s);
        assert_eq!(m.splits["train"], 0);
        assert_eq!(fs::metadata(dir.path().join("train.x.f32")).unwrap().len(), 0);
    }

    #[test]
    fn count_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let s = split(instances(10), (0.6, 0.2, 0.2), 4).unwrap();
        write_dataset(dir.path(), &manifest(3, 4, vec![(1, 1), (0, 0)]), &s).unwrap();
        let p = dir.path().join("train.y.u8");
        let mut ys = fs::read(&p).unwrap();
        ys.pop();
        fs::write(&p, ys).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(PipelineError::Format(_))));
    }

    #[test]
    fn unknown_version_and_garbage_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = split(instances(5), (0.6, 0.2, 0.2), 4).unwrap();
        write_dataset(dir.path(), &manifest(3, 4, vec![(1, 1), (0, 0)]), &s).unwrap();
        let p = dir.path().join("manifest.json");
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, text.replace("\"format_version\": 1", "\"format_version\": 99")).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(PipelineError::Format(_))));
        fs::write(&p, "{ not json").unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(PipelineError::Format(_))));
    }

    #[test]
    fn series_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ScenarioSpec {
            leak_cell: (1, 1),
            rate_class: 2,
            rate_value: 2.0,
            n_steps: 3,
            dt: 0.1,
            substeps: 1,
            diffusivity_scale: 1.0,
            cell_size: 1.0,
            initial_pressure: 10.0,
            wells: vec![(0, 0)],
            seed: 0,
        };
        let s = PressureSeries {
            spec,
            grid_h: 2,
            grid_w: 3,
            frames: vec![vec![1.0; 6], vec![1.5; 6], vec![1.0 / 3.0; 6]],
        };
        write_series_dir(dir.path(), std::slice::from_ref(&s), &[1.0, 2.0], 0, serde_json::Value::Null).unwrap();
        let sd = read_series_dir(dir.path()).unwrap();
        let back = sd.load(&sd.manifest.scenarios[0]).unwrap();
        assert_eq!(back, s);
    }
}
