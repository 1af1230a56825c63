use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::Params;
use crate::error::{Error, Result};
use crate::RTensor;

pub const CHECKPOINT_MAGIC: &str = "SPATEA-CKPT-v1";

/// Model configuration, parameters and optional attachments such as
/// compressed kernel chains.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Params,
    pub extra: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Doc {
    config: ModelConfig,
    params: Vec<Entry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let doc = Doc {
        config: ck.config.clone(),
        params: ck
            .params
            .iter()
            .map(|(k, v)| Entry { name: k.clone(), shape: v.shape().to_vec(), data: v.data().to_vec() })
            .collect(),
        extra: ck.extra.clone(),
    };
    let body = serde_json::to_string(&doc).map_err(|e| Error::Checkpoint(e.to_string()))?;
    // Write then rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    writeln!(f, "{CHECKPOINT_MAGIC}").and_then(|_| writeln!(f, "{body}")).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut magic = String::new();
    r.read_line(&mut magic).map_err(|e| Error::io(path, e))?;
    if magic.trim_end() != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: expected header {CHECKPOINT_MAGIC:?}, found {:?}",
            path.display(),
            magic.trim_end()
        )));
    }
    let doc: Doc = serde_json::from_reader(r).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    doc.config.validate()?;
    let mut map = BTreeMap::new();
    for e in doc.params {
        let t = RTensor::new(e.shape, e.data).map_err(|err| Error::Checkpoint(format!("parameter {}: {err}", e.name)))?;
        map.insert(e.name, t);
    }
    let params = Params::from_map(map);
    params.check(&doc.config)?;
    Ok(Checkpoint { config: doc.config, params, extra: doc.extra })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let config = ModelConfig { d: 2, chi: 2, sigma: 1, chi_t: 2, layers: 1, hidden: 4, msg_width: 3, ..Default::default() };
        let ck = Checkpoint { params: Params::init(&config, 1), config, extra: Some(serde_json::json!({"k": 1})) };
        save_checkpoint(&path, &ck).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
    }

    #[test]
    fn bad_header_and_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, "NOT-A-CKPT\n{}").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
        let config = ModelConfig { d: 2, chi: 2, sigma: 1, chi_t: 2, layers: 1, hidden: 4, msg_width: 3, ..Default::default() };
        let mut params = Params::init(&config, 1);
        *params.get_mut("embed.w").unwrap() = RTensor::zeros(&[3, 3]);
        save_checkpoint(&path, &Checkpoint { config, params, extra: None }).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(m)) if m.contains("embed.w")));
        assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
