//! Portable dataset directory:
//!
//! - `meta.json`: `{"num_clips", "timesteps", "feature_dim", "class_names"}`,
//!   plus optional `clip_ids` (defaults to `clip-<index>`).
//! - `features.f32`: little-endian f32, row-major `[clip][timestep][dim]`.
//! - `labels.csv`: `clip_index,class_index,value`; a missing pair is unknown.
//! - `split.csv`: `clip_index,split` with split `train` or `test`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use plab_core::{Dataset, Example, FeatureSequence, Label, LabelVector, Split};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";
pub const FEATURES_FILE: &str = "features.f32";
pub const LABELS_FILE: &str = "labels.csv";
pub const SPLIT_FILE: &str = "split.csv";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    num_clips: usize,
    timesteps: usize,
    feature_dim: usize,
    class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clip_ids: Option<Vec<String>>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn csv_reader<'a>(path: &Path, bytes: &'a [u8], header: &[&str]) -> Result<csv::Reader<&'a [u8]>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let got = rdr
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(Error::format(
            path,
            format!(
                "header is {:?}, expected {:?}",
                got.iter().collect::<Vec<_>>(),
                header
            ),
        ));
    }
    Ok(rdr)
}

fn field<T: std::str::FromStr>(
    path: &Path,
    rec: &csv::StringRecord,
    i: usize,
    name: &str,
) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    let raw = rec.get(i).unwrap_or("");
    raw.parse()
        .map_err(|_| Error::format(path, format!("line {line}: bad {name} {raw:?}")))
}

pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();

    let meta_path = root.join(META_FILE);
    let meta: Meta = serde_json::from_slice(&read(&meta_path)?)
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;
    let (n, t, d, c) = (
        meta.num_clips,
        meta.timesteps,
        meta.feature_dim,
        meta.class_names.len(),
    );
    if t == 0 || d == 0 || c == 0 {
        return Err(Error::format(
            &meta_path,
            "timesteps, feature_dim and class_names must be non-empty",
        ));
    }
    let ids = match meta.clip_ids {
        Some(ids) if ids.len() != n => {
            return Err(Error::format(
                &meta_path,
                format!("{} clip_ids for {n} clips", ids.len()),
            ))
        }
        Some(ids) => ids,
        None => (0..n).map(|i| format!("clip-{i}")).collect(),
    };

    let feat_path = root.join(FEATURES_FILE);
    let raw = read(&feat_path)?;
    let per_clip = t * d;
    if raw.len() != n * per_clip * 4 {
        return Err(Error::format(
            &feat_path,
            format!(
                "dimension mismatch: {} bytes, meta implies {n}x{t}x{d}x4 = {}",
                raw.len(),
                n * per_clip * 4
            ),
        ));
    }
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            &feat_path,
            format!(
                "non-finite feature at clip {}, timestep {}",
                i / per_clip,
                i % per_clip / d
            ),
        ));
    }

    let label_path = root.join(LABELS_FILE);
    let bytes = read(&label_path)?;
    let mut labels = vec![LabelVector::unknown(c); n];
    let mut seen = vec![false; n * c];
    for rec in csv_reader(&label_path, &bytes, &["clip_index", "class_index", "value"])?.records() {
        let rec = rec.map_err(|e| Error::format(&label_path, e.to_string()))?;
        let clip: usize = field(&label_path, &rec, 0, "clip_index")?;
        let class: usize = field(&label_path, &rec, 1, "class_index")?;
        let value: i64 = field(&label_path, &rec, 2, "value")?;
        if clip >= n || class >= c {
            return Err(Error::format(
                &label_path,
                format!("entry ({clip}, {class}) outside {n} clips x {c} classes"),
            ));
        }
        let label =
            Label::from_value(value).map_err(|e| Error::format(&label_path, e.to_string()))?;
        if std::mem::replace(&mut seen[clip * c + class], true) {
            return Err(Error::format(
                &label_path,
                format!("duplicate entry ({clip}, {class})"),
            ));
        }
        labels[clip].set(class, label);
    }

    let split_path = root.join(SPLIT_FILE);
    let bytes = read(&split_path)?;
    let mut splits: Vec<Option<Split>> = vec![None; n];
    for rec in csv_reader(&split_path, &bytes, &["clip_index", "split"])?.records() {
        let rec = rec.map_err(|e| Error::format(&split_path, e.to_string()))?;
        let clip: usize = field(&split_path, &rec, 0, "clip_index")?;
        let split = match rec.get(1) {
            Some("train") => Split::Train,
            Some("test") => Split::Test,
            other => {
                return Err(Error::format(
                    &split_path,
                    format!("clip {clip}: split {other:?} is neither train nor test"),
                ))
            }
        };
        match splits.get_mut(clip) {
            None => {
                return Err(Error::format(
                    &split_path,
                    format!("clip {clip} out of range"),
                ))
            }
            Some(Some(_)) => {
                return Err(Error::format(
                    &split_path,
                    format!("clip {clip} listed twice"),
                ))
            }
            Some(slot) => *slot = Some(split),
        }
    }
    if let Some(i) = splits.iter().position(Option::is_none) {
        return Err(Error::format(&split_path, format!("clip {i} has no split")));
    }

    let examples = ids
        .into_iter()
        .zip(labels)
        .zip(splits)
        .enumerate()
        .map(|(i, ((clip_id, labels), split))| {
            Ok(Example {
                clip_id,
                features: FeatureSequence::new(
                    t,
                    d,
                    values[i * per_clip..(i + 1) * per_clip].to_vec(),
                )?,
                labels,
                split: split.expect("checked above"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(examples, meta.class_names, d, t)?)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Write `ds` in the directory format. Features are stored as f32, so a
/// round trip is exact only for f32-representable values.
pub fn save_dataset(ds: &Dataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let meta = Meta {
        num_clips: ds.len(),
        timesteps: ds.base_timesteps(),
        feature_dim: ds.feature_dim(),
        class_names: ds.class_names().to_vec(),
        clip_ids: Some(ds.examples().iter().map(|e| e.clip_id.clone()).collect()),
    };
    let path = root.join(META_FILE);
    let mut json = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    json.push(b'\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;

    let path = root.join(FEATURES_FILE);
    let mut w = create(&path)?;
    for ex in ds.examples() {
        for &v in ex.features.as_slice() {
            w.write_all(&(v as f32).to_le_bytes())
                .map_err(|e| Error::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = root.join(LABELS_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    let csv_err = |e: csv::Error| Error::format(&path, e.to_string());
    w.write_record(["clip_index", "class_index", "value"])
        .map_err(csv_err)?;
    for (i, ex) in ds.examples().iter().enumerate() {
        for (k, l) in ex.labels.iter().enumerate() {
            if l.is_observed() {
                w.serialize((i, k, l.value())).map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = root.join(SPLIT_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    let csv_err = |e: csv::Error| Error::format(&path, e.to_string());
    w.write_record(["clip_index", "split"]).map_err(csv_err)?;
    for (i, ex) in ds.examples().iter().enumerate() {
        w.serialize((i, ex.split.as_str())).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}
