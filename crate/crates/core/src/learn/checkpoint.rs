//! Checkpoints: `manifest.txt` (key = value) plus `tensors.csv`.

use std::fs;
use std::path::Path;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::pipeline::MessageKind;

use super::model::{LearnableModel, ModelConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &LearnableModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = model.to_config();
    manifest.set("version", CHECKPOINT_VERSION);
    manifest.set("tensors", model.params.len());
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;

    let path = dir.join("tensors.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["name", "rows", "cols", "index", "value"])?;
    for id in model.params.ids() {
        let t = model.params.tensor(id);
        let name = model.params.name(id);
        for (i, v) in t.data.iter().enumerate() {
            w.write_record([
                name,
                &t.rows.to_string(),
                &t.cols.to_string(),
                &i.to_string(),
                &v.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn required<T>(cfg: &KvConfig, key: &str) -> Result<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    cfg.parse_value(key)?
        .ok_or_else(|| Error::Checkpoint(format!("manifest lacks `{key}`")))
}

pub fn load_checkpoint(dir: &Path) -> Result<LearnableModel> {
    let manifest = KvConfig::load(dir.join("manifest.txt"))?;
    let version: u32 = required(&manifest, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let kind: MessageKind = required(&manifest, "message_fn")?;
    let config = ModelConfig {
        hidden: required(&manifest, "hidden")?,
        heads: required(&manifest, "heads")?,
        dropout: required(&manifest, "dropout")?,
        neighbor_cap: required(&manifest, "x")?,
        node_encoder: required(&manifest, "node_encoder")?,
        seed: required(&manifest, "seed")?,
    };
    let mut model = LearnableModel::new(
        kind,
        required(&manifest, "num_nodes")?,
        required(&manifest, "feature_dim")?,
        config,
    )?;
    let expected: usize = required(&manifest, "tensors")?;
    if expected != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {expected} tensors, model has {}",
            model.params.len()
        )));
    }

    let path = dir.join("tensors.csv");
    let mut reader = csv::Reader::from_path(&path)?;
    let mut seen = vec![0usize; model.params.len()];
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let id = model
            .params
            .id(field(0))
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{}`", field(0))))?;
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Checkpoint(format!("bad integer `{s}`")))
        };
        let (rows, cols, index) = (parse_usize(field(1))?, parse_usize(field(2))?, parse_usize(field(3))?);
        let value: f64 = field(4)
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad value `{}`", field(4))))?;
        let t = model.params.tensor_mut(id);
        if (rows, cols) != (t.rows, t.cols) || index >= t.data.len() {
            return Err(Error::Checkpoint(format!("shape mismatch for `{}`", field(0))));
        }
        t.data[index] = value;
        seen[id.index()] += 1;
    }
    for id in model.params.ids() {
        if seen[id.index()] != model.params.tensor(id).len() {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` is incomplete",
                model.params.name(id)
            )));
        }
    }
    Ok(model)
}
