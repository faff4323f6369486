use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{default_class_names, Dataset};
use crate::error::{Error, Result};
use crate::numcore::{LabelMatrix, Matrix};

const MANIFEST_FORMAT: &str = "illab-dataset-v1";

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn csv_error(path: &Path, row: usize, e: csv::Error) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        row,
        message: e.to_string(),
    }
}

fn check_header(path: &Path, header: &csv::StringRecord, prefix: &str) -> Result<usize> {
    if header.get(0) != Some("id") {
        return Err(Error::Parse {
            file: path.display().to_string(),
            row: 0,
            message: "first column must be 'id'".into(),
        });
    }
    for (j, name) in header.iter().skip(1).enumerate() {
        if name != format!("{prefix}{j}") {
            return Err(Error::Parse {
                file: path.display().to_string(),
                row: 0,
                message: format!("column {} is '{name}', expected '{prefix}{j}'", j + 1),
            });
        }
    }
    Ok(header.len() - 1)
}

fn read_features(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>, usize)> {
    let mut rdr = csv_reader(path)?;
    let dim = check_header(path, &rdr.headers().map_err(|e| csv_error(path, 0, e))?.clone(), "f")?;
    let (mut ids, mut rows) = (Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let row_no = r + 1;
        let rec = rec.map_err(|e| csv_error(path, row_no, e))?;
        let mut vals = Vec::with_capacity(dim);
        for field in rec.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                file: path.display().to_string(),
                row: row_no,
                message: format!("'{field}' is not a real number"),
            })?;
            vals.push(v);
        }
        ids.push(rec[0].to_string());
        rows.push(vals);
    }
    Ok((ids, rows, dim))
}

fn read_labels(path: &Path) -> Result<(Vec<String>, Vec<Vec<bool>>, usize)> {
    let mut rdr = csv_reader(path)?;
    let c = check_header(path, &rdr.headers().map_err(|e| csv_error(path, 0, e))?.clone(), "l")?;
    let (mut ids, mut rows) = (Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let row_no = r + 1;
        let rec = rec.map_err(|e| csv_error(path, row_no, e))?;
        let mut vals = Vec::with_capacity(c);
        for field in rec.iter().skip(1) {
            vals.push(match field.trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse {
                        file: path.display().to_string(),
                        row: row_no,
                        message: format!("label value '{other}' is not 0 or 1"),
                    })
                }
            });
        }
        ids.push(rec[0].to_string());
        rows.push(vals);
    }
    Ok((ids, rows, c))
}

/// Reads a features CSV (`id,f0,...`) and a labels CSV (`id,l0,...`), joined
/// on id in the order of the features file.
pub fn load_dataset(features_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (f_ids, f_rows, dim) = read_features(features_path)?;
    let (l_ids, l_rows, c) = read_labels(labels_path)?;

    let by_id: HashMap<&str, usize> = l_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let feature_ids: std::collections::HashSet<&str> = f_ids.iter().map(String::as_str).collect();
    let missing_labels: Vec<&str> = f_ids.iter().map(String::as_str).filter(|id| !by_id.contains_key(id)).collect();
    let missing_features: Vec<&str> = l_ids.iter().map(String::as_str).filter(|id| !feature_ids.contains(id)).collect();
    if !missing_labels.is_empty() || !missing_features.is_empty() {
        return Err(Error::Ingestion(format!(
            "ids without labels: [{}]; ids without features: [{}]",
            missing_labels.join(", "),
            missing_features.join(", ")
        )));
    }
    if feature_ids.len() != f_ids.len() || by_id.len() != l_ids.len() {
        return Err(Error::Ingestion("duplicate sample ids".into()));
    }

    let labels: Vec<&[bool]> = f_ids.iter().map(|id| l_rows[by_id[id.as_str()]].as_slice()).collect();
    let features = if f_rows.is_empty() {
        Matrix::zeros(0, dim)
    } else {
        Matrix::from_rows(&f_rows)?
    };
    let labels = if labels.is_empty() {
        LabelMatrix::zeros(0, c)
    } else {
        LabelMatrix::from_rows(&labels)?
    };
    Dataset::new(f_ids, features, labels, default_class_names(c))
}

/// Writes the two CSV files read by [`load_dataset`]. Reals use the shortest
/// representation that parses back to the same value.
pub fn save_dataset(dataset: &Dataset, features_path: &Path, labels_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(features_path).map_err(|e| csv_error(features_path, 0, e))?;
    let mut header = vec!["id".to_string()];
    header.extend((0..dataset.feature_dim()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(|e| csv_error(features_path, 0, e))?;
    for i in 0..dataset.len() {
        let mut rec = vec![dataset.ids()[i].clone()];
        rec.extend(dataset.features().row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(features_path, i + 1, e))?;
    }
    w.flush().map_err(|e| Error::io(features_path, e))?;

    let mut w = csv::Writer::from_path(labels_path).map_err(|e| csv_error(labels_path, 0, e))?;
    let mut header = vec!["id".to_string()];
    header.extend((0..dataset.num_classes()).map(|k| format!("l{k}")));
    w.write_record(&header).map_err(|e| csv_error(labels_path, 0, e))?;
    for i in 0..dataset.len() {
        let mut rec = vec![dataset.ids()[i].clone()];
        rec.extend(dataset.labels().row(i).iter().map(|&y| if y { "1" } else { "0" }.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(labels_path, i + 1, e))?;
    }
    w.flush().map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

/// Feature and label file of one split, relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitFiles {
    pub features: String,
    pub labels: String,
}

/// Plain-text `key=value` description of a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub class_names: Vec<String>,
    pub splits: BTreeMap<String, SplitFiles>,
    pub image_dir: Option<String>,
    /// Spatial shape `(width, height)` when features are flattened images.
    pub image_shape: Option<(usize, usize)>,
}

impl Manifest {
    pub const FILE_NAME: &'static str = "manifest.txt";

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("format={MANIFEST_FORMAT}\n"));
        out.push_str(&format!("num_classes={}\n", self.num_classes));
        out.push_str(&format!("feature_dim={}\n", self.feature_dim));
        out.push_str(&format!("class_names={}\n", self.class_names.join(",")));
        for (name, files) in &self.splits {
            out.push_str(&format!("{name}.features={}\n", files.features));
            out.push_str(&format!("{name}.labels={}\n", files.labels));
        }
        if let Some(dir) = &self.image_dir {
            out.push_str(&format!("image_dir={dir}\n"));
        }
        if let Some((w, h)) = self.image_shape {
            out.push_str(&format!("image_width={w}\nimage_height={h}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let mut kv = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: Self::FILE_NAME.into(),
                row: n + 1,
                message: format!("expected key=value, found '{line}'"),
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .cloned()
                .ok_or_else(|| Error::Ingestion(format!("manifest lacks '{k}'")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Ingestion(format!("manifest key '{k}' is not a count")))
        };
        if get("format")? != MANIFEST_FORMAT {
            return Err(Error::Ingestion(format!("manifest format is not {MANIFEST_FORMAT}")));
        }
        let num_classes = num("num_classes")?;
        let feature_dim = num("feature_dim")?;
        let class_names: Vec<String> = get("class_names")?.split(',').map(|s| s.trim().to_string()).collect();
        if class_names.len() != num_classes {
            return Err(Error::Ingestion(format!(
                "manifest names {} classes but declares {num_classes}",
                class_names.len()
            )));
        }
        let mut splits = BTreeMap::new();
        for key in kv.keys() {
            if let Some(name) = key.strip_suffix(".features") {
                splits.insert(
                    name.to_string(),
                    SplitFiles {
                        features: get(key)?,
                        labels: get(&format!("{name}.labels"))?,
                    },
                );
            }
        }
        let image_shape = match (kv.get("image_width"), kv.get("image_height")) {
            (Some(_), Some(_)) => Some((num("image_width")?, num("image_height")?)),
            (None, None) => None,
            _ => return Err(Error::Ingestion("image_width and image_height go together".into())),
        };
        let known = |k: &str| {
            matches!(
                k,
                "format" | "num_classes" | "feature_dim" | "class_names" | "image_dir" | "image_width" | "image_height"
            ) || k.ends_with(".features")
                || k.ends_with(".labels")
        };
        if let Some(k) = kv.keys().find(|k| !known(k)) {
            return Err(Error::Ingestion(format!("unknown manifest key '{k}'")));
        }
        Ok(Manifest {
            num_classes,
            feature_dim,
            class_names,
            splits,
            image_dir: kv.get("image_dir").cloned(),
            image_shape,
        })
    }

    pub fn read(dir: &Path) -> Result<Manifest> {
        let path = dir.join(Self::FILE_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Manifest::parse(&text)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(Self::FILE_NAME);
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }

    /// Loads one split and checks it against the declared dimensions.
    pub fn load_split(&self, dir: &Path, split: &str) -> Result<Dataset> {
        let files = self
            .splits
            .get(split)
            .ok_or_else(|| Error::Ingestion(format!("manifest has no '{split}' split")))?;
        let ds = load_dataset(&dir.join(&files.features), &dir.join(&files.labels))?;
        if ds.num_classes() != self.num_classes || ds.feature_dim() != self.feature_dim {
            return Err(Error::Ingestion(format!(
                "split '{split}' is {}x{} (features x classes), manifest declares {}x{}",
                ds.feature_dim(),
                ds.num_classes(),
                self.feature_dim,
                self.num_classes
            )));
        }
        Dataset::new(
            ds.ids().to_vec(),
            ds.features().clone(),
            ds.labels().clone(),
            self.class_names.clone(),
        )
    }

    pub fn image_path(&self, dir: &Path, id: &str) -> Option<PathBuf> {
        self.image_dir.as_ref().map(|d| dir.join(d).join(format!("{id}.pgm")))
    }
}
