use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
}

/// Adam with plateau-based learning-rate decay on the validation MSE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    /// Epochs without improvement before the rate is cut.
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { kind: OptimizerKind::Adam, lr: 1e-3, betas: [0.9, 0.999], eps: 1e-8, patience: 10, factor: 0.5, min_lr: 1e-6 }
    }
}

/// Which trajectories are trained and validated on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// 5/1/1 train/validation/test split.
    Holdout,
    /// Train and validate on every trajectory.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub dataset: PathBuf,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub split: SplitMode,
    /// Write elapsed seconds to metrics.csv; off gives byte-reproducible metrics.
    pub record_wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            epochs: 100,
            batch_size: 32,
            dataset: PathBuf::from("data/les5.jsonl"),
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            split: SplitMode::Holdout,
            record_wall_clock: true,
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn toml_error(text: &str, e: toml::de::Error) -> Error {
    match e.span() {
        Some(span) => Error::Config(format!("line {}: {}", line_of(text, span.start), e.message().trim())),
        None => Error::Config(e.message().trim().to_string()),
    }
}

/// Parse `value` as a TOML literal, falling back to a bare string.
fn override_value(value: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Set a dotted key such as `model.chi` in a TOML table.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parts: Vec<String> = key.split('.').map(|p| p.replace('-', "_")).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let (last, path) = parts.split_last().expect("non-empty");
    let mut t = table;
    for p in path {
        t = t
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p} is not a table")))?;
    }
    t.insert(last.clone(), override_value(value));
    Ok(())
}

impl RunConfig {
    /// Parse a TOML document and apply `key=value` overrides in order.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        // A direct parse first, so errors carry line numbers.
        let direct: RunConfig = toml::from_str(text).map_err(|e| toml_error(text, e))?;
        if overrides.is_empty() {
            return Ok(direct);
        }
        let mut table: toml::Table = toml::from_str(text).map_err(|e| toml_error(text, e))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        RunConfig::deserialize(toml::Value::Table(table)).map_err(|e| Error::Config(format!("override: {}", e.message().trim())))
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        let cfg = Self::from_toml(&text, overrides)
            .map_err(|e| match (e, path) {
                (Error::Config(m), Some(p)) => Error::Config(format!("{}: {m}", p.display())),
                (e, _) => e,
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !o.lr.is_finite() {
            return Err(Error::Config(format!("optimizer.lr must be positive, got {}", o.lr)));
        }
        if !(0.0..1.0).contains(&o.betas[0]) || !(0.0..1.0).contains(&o.betas[1]) {
            return Err(Error::Config(format!("optimizer.betas must lie in [0, 1), got {:?}", o.betas)));
        }
        if !(o.eps > 0.0) {
            return Err(Error::Config("optimizer.eps must be positive".into()));
        }
        if !(o.factor > 0.0 && o.factor < 1.0) {
            return Err(Error::Config(format!("optimizer.factor must lie in (0, 1), got {}", o.factor)));
        }
        if !(o.min_lr >= 0.0) {
            return Err(Error::Config("optimizer.min_lr must be non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::KernelMode;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_toml("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn roundtrip_through_toml() {
        let mut c = RunConfig::default();
        c.model.chi = 3;
        c.model.baseline_hidden = Some(7);
        c.split = SplitMode::All;
        assert_eq!(RunConfig::from_toml(&c.to_toml(), &[]).unwrap(), c);
    }

    #[test]
    fn overrides_apply_in_order() {
        let text = "epochs = 5\n[model]\nchi = 2\n";
        let ov = vec![
            ("model.chi".to_string(), "6".to_string()),
            ("model.kernel_mode".to_string(), "general".to_string()),
            ("optimizer.lr".to_string(), "0.01".to_string()),
            ("dataset".to_string(), "x/y.jsonl".to_string()),
            ("record-wall-clock".to_string(), "false".to_string()),
            ("epochs".to_string(), "9".to_string()),
        ];
        let c = RunConfig::from_toml(text, &ov).unwrap();
        assert_eq!((c.model.chi, c.epochs, c.optimizer.lr), (6, 9, 0.01));
        assert_eq!(c.model.kernel_mode, KernelMode::General);
        assert_eq!(c.dataset, PathBuf::from("x/y.jsonl"));
        assert!(!c.record_wall_clock);
    }

    #[test]
    fn errors_name_the_line() {
        let text = "epochs = 5\n\n[model]\nchi = \"many\"\n";
        match RunConfig::from_toml(text, &[]) {
            Err(Error::Config(m)) => assert!(m.starts_with("line 4"), "{m}"),
            other => panic!("{other:?}"),
        }
        let text = "epochs = 5\nbogus = 1\n";
        match RunConfig::from_toml(text, &[]) {
            Err(Error::Config(m)) => assert!(m.starts_with("line 2") && m.contains("bogus"), "{m}"),
            other => panic!("{other:?}"),
        }
        let bad = vec![("model.nope".to_string(), "1".to_string())];
        assert!(matches!(RunConfig::from_toml("", &bad), Err(Error::Config(_))));
    }

    #[test]
    fn validation_rejects_bad_values() {
        let c = RunConfig { epochs: 0, ..Default::default() };
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.optimizer.lr = -1.0;
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
