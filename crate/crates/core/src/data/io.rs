//! On-disk formats.
//!
//! Models are a JSON manifest whose weight and bias arrays are inline base64 of
//! little-endian `f64`s, so values round-trip bit for bit. Datasets are CSV with a
//! `# neurepair-dataset` version line followed by an `id,label,f0..f{d-1}` header.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, SplitKind, Splits};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, LayerSpec, Model};

pub const MODEL_FORMAT: &str = "neurepair-model";
pub const MODEL_VERSION: u32 = 1;
pub const DATASET_MAGIC: &str = "# neurepair-dataset";
pub const DATASET_VERSION: u32 = 1;

/// Where a model came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: Model,
    pub provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    input_size: usize,
    output_size: usize,
    activation: Activation,
    weights: String,
    biases: String,
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    format: String,
    version: u32,
    n_classes: usize,
    layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_f64s(text: &str) -> std::result::Result<Vec<f64>, String> {
    let bytes = B64.decode(text).map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err(format!(
            "{} bytes is not a whole number of f64 values",
            bytes.len()
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn model_to_json(model: &Model, provenance: Option<&Provenance>) -> String {
    let record = ModelRecord {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        n_classes: model.n_classes(),
        layers: model
            .layers()
            .iter()
            .map(|l| LayerRecord {
                input_size: l.spec().input_size,
                output_size: l.spec().output_size,
                activation: l.spec().activation,
                weights: encode_f64s(l.weights()),
                biases: encode_f64s(l.biases()),
            })
            .collect(),
        provenance: provenance.cloned(),
    };
    serde_json::to_string_pretty(&record).expect("model record serializes")
}

pub fn model_from_json(text: &str, origin: &Path) -> Result<ModelFile> {
    let record: ModelRecord =
        serde_json::from_str(text).map_err(|e| Error::malformed(origin, e.to_string()))?;
    if record.format != MODEL_FORMAT {
        return Err(Error::malformed(
            origin,
            format!(
                "format tag is {:?}, expected {MODEL_FORMAT:?}",
                record.format
            ),
        ));
    }
    if record.version != MODEL_VERSION {
        return Err(Error::Version {
            found: record.version,
            expected: MODEL_VERSION,
        });
    }
    let mut layers = Vec::with_capacity(record.layers.len());
    for (k, l) in record.layers.into_iter().enumerate() {
        let weights = decode_f64s(&l.weights)
            .map_err(|e| Error::malformed(origin, format!("layer {k} weights: {e}")))?;
        let biases = decode_f64s(&l.biases)
            .map_err(|e| Error::malformed(origin, format!("layer {k} biases: {e}")))?;
        let spec = LayerSpec {
            input_size: l.input_size,
            output_size: l.output_size,
            activation: l.activation,
        };
        layers.push(
            DenseLayer::new(spec, weights, biases)
                .map_err(|e| Error::malformed(origin, format!("layer {k}: {e}")))?,
        );
    }
    let model = Model::new(layers).map_err(|e| Error::malformed(origin, e.to_string()))?;
    if model.n_classes() != record.n_classes {
        return Err(Error::malformed(
            origin,
            format!(
                "manifest says {} classes but the head has {}",
                record.n_classes,
                model.n_classes()
            ),
        ));
    }
    Ok(ModelFile {
        model,
        provenance: record.provenance,
    })
}

pub fn save_model(
    model: &Model,
    provenance: Option<&Provenance>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_json(model, provenance)).map_err(|e| Error::io(path, e))
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text, path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    Ok(load_model_file(path)?.model)
}

pub fn dataset_to_csv(dataset: &Dataset) -> String {
    let mut out = format!(
        "{DATASET_MAGIC},version={DATASET_VERSION},n_classes={},rows={},classes={}\n",
        dataset.n_classes(),
        dataset.len(),
        dataset.class_names().join(";")
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..dataset.dim()).map(|d| format!("f{d}")));
    w.write_record(&header).expect("write to memory");
    for s in dataset.samples() {
        let mut row = vec![s.id.to_string(), s.label.to_string()];
        // `Display` for f64 prints the shortest string that parses back exactly
        row.extend(s.features.iter().map(|v| v.to_string()));
        w.write_record(&row).expect("write to memory");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8"));
    out
}

pub fn dataset_from_csv(text: &str, origin: &Path) -> Result<Dataset> {
    let (first, rest) = text
        .split_once('\n')
        .ok_or_else(|| Error::malformed(origin, "missing header lines"))?;
    let first = first.trim_end_matches('\r');
    let meta = first.strip_prefix(DATASET_MAGIC).ok_or_else(|| {
        Error::malformed(
            origin,
            format!("first line must start with {DATASET_MAGIC:?}"),
        )
    })?;
    if !text.ends_with('\n') {
        return Err(Error::malformed(
            origin,
            "file is truncated (no trailing newline)",
        ));
    }
    // class names come last and may themselves contain commas
    let (meta, classes) = match meta.split_once(",classes=") {
        Some((head, names)) => (
            head,
            Some(names.split(';').map(str::to_string).collect::<Vec<_>>()),
        ),
        None => (meta, None),
    };
    let (mut version, mut n_classes, mut rows) = (None, None, None);
    for field in meta.split(',').filter(|f| !f.is_empty()) {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::malformed(origin, format!("bad metadata field {field:?}")))?;
        let bad = |e: std::num::ParseIntError| Error::malformed(origin, format!("{key}: {e}"));
        match key.trim() {
            "version" => version = Some(value.parse::<u32>().map_err(bad)?),
            "n_classes" => n_classes = Some(value.parse::<usize>().map_err(bad)?),
            "rows" => rows = Some(value.parse::<usize>().map_err(bad)?),
            _ => {}
        }
    }
    let version = version.ok_or_else(|| Error::malformed(origin, "missing version"))?;
    if version != DATASET_VERSION {
        return Err(Error::Version {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let n_classes = n_classes.ok_or_else(|| Error::malformed(origin, "missing n_classes"))?;
    let class_names =
        classes.unwrap_or_else(|| (0..n_classes).map(|c| format!("class{c}")).collect());

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(rest.as_bytes());
    let header = reader.headers()?.clone();
    let dim = header
        .len()
        .checked_sub(2)
        .ok_or_else(|| Error::malformed(origin, "header too short"))?;
    if &header[0] != "id"
        || &header[1] != "label"
        || (0..dim).any(|d| header[d + 2] != format!("f{d}"))
    {
        return Err(Error::malformed(
            origin,
            "header must be id,label,f0..f{d-1}",
        ));
    }
    let mut samples = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != dim + 2 {
            return Err(Error::malformed(
                origin,
                format!("row {line} has {} fields", record.len()),
            ));
        }
        let parse_err = |what: &str| Error::malformed(origin, format!("row {line}: bad {what}"));
        let id = record[0].parse().map_err(|_| parse_err("id"))?;
        let label = record[1].parse().map_err(|_| parse_err("label"))?;
        let features = (0..dim)
            .map(|d| {
                record[d + 2]
                    .parse::<f64>()
                    .map_err(|_| parse_err("feature"))
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            id,
            features,
            label,
        });
    }
    if let Some(rows) = rows {
        if rows != samples.len() {
            return Err(Error::malformed(
                origin,
                format!("expected {rows} rows, found {}", samples.len()),
            ));
        }
    }
    Dataset::new(dim, n_classes, class_names, samples)
        .map_err(|e| Error::malformed(origin, e.to_string()))
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_to_csv(dataset)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset_from_csv(&text, path)
}

/// Writes `train.csv`, `validation.csv`, `repair.csv` and `test.csv` into `dir`.
pub fn save_splits(splits: &Splits, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (kind, data) in splits.iter() {
        save_dataset(data, dir.join(format!("{}.csv", kind.name())))?;
    }
    Ok(())
}

pub fn load_splits(dir: impl AsRef<Path>) -> Result<Splits> {
    let dir = dir.as_ref();
    let load = |k: SplitKind| load_dataset(dir.join(format!("{}.csv", k.name())));
    Ok(Splits {
        train: load(SplitKind::Train)?,
        validation: load(SplitKind::Validation)?,
        repair: load(SplitKind::Repair)?,
        test: load(SplitKind::Test)?,
    })
}
