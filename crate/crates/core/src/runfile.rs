//! Run files: a `[run]` table with the output directory and global seed,
//! followed by one `[[spec]]` table per experiment.
//!
//! ```toml
//! [run]
//! out = "results"
//! seed = 7
//!
//! [[spec]]
//! name = "tails"
//! scenario = "tail_suite"
//! eta = [0.004, 0.008]
//! ```
//!
//! Unknown keys are rejected. Specs without `base_seed` inherit the global
//! seed when the file is resolved.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{preset, ExperimentSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_out")]
    pub out: String,
    #[serde(default)]
    pub seed: u64,
}

fn default_out() -> String {
    "results".into()
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            out: default_out(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default, rename = "spec")]
    pub specs: Vec<ExperimentSpec>,
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, col)
}

fn parse_error(text: &str, e: toml::de::Error) -> Error {
    let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
    Error::Parse {
        line,
        column,
        message: e.message().to_string(),
    }
}

impl RunFile {
    pub fn parse(text: &str) -> Result<Self> {
        let rf: RunFile = toml::from_str(text).map_err(|e| parse_error(text, e))?;
        rf.check_names()?;
        Ok(rf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("serialising run file: {e}")))
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        let p = preset(name).ok_or_else(|| Error::invalid(format!("unknown preset `{name}`")))?;
        Ok(Self {
            run: RunSection::default(),
            specs: p.specs,
        })
    }

    fn check_names(&self) -> Result<()> {
        for (i, s) in self.specs.iter().enumerate() {
            if s.name.is_empty() || s.name.contains(['/', '\\']) || s.name == "." || s.name == ".." {
                return Err(Error::invalid(format!("spec name `{}` is not a valid directory name", s.name)));
            }
            if self.specs[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::invalid(format!("duplicate spec name `{}`", s.name)));
            }
        }
        Ok(())
    }

    /// Applies `key=value` overrides. Keys are `out`, `seed`, `<field>` (all
    /// specs) or `<spec name>.<field>`. Values use TOML syntax; anything that
    /// does not parse as a TOML value is taken as a bare string.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        if overrides.is_empty() {
            return Ok(());
        }
        let mut doc = toml::Table::try_from(&*self).map_err(|e| Error::invalid(format!("run file: {e}")))?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("override `{o}` is not of the form key=value")))?;
            let (key, value) = (key.trim(), parse_value(raw.trim()));
            match key {
                "out" | "seed" => {
                    run_table(&mut doc).insert(key.into(), value);
                }
                _ => {
                    let (target, field) = match key.split_once('.') {
                        Some((s, f)) => (Some(s), f),
                        None => (None, key),
                    };
                    let specs = doc
                        .get_mut("spec")
                        .and_then(|v| v.as_array_mut())
                        .ok_or_else(|| Error::invalid("run file has no specs to override"))?;
                    let mut hit = false;
                    for s in specs.iter_mut().filter_map(|s| s.as_table_mut()) {
                        if target.is_none_or(|t| s.get("name").and_then(|n| n.as_str()) == Some(t)) {
                            s.insert(field.into(), value.clone());
                            hit = true;
                        }
                    }
                    if !hit {
                        return Err(Error::invalid(format!("override `{key}` names no spec")));
                    }
                }
            }
        }
        let text = toml::to_string(&doc).map_err(|e| Error::invalid(format!("run file: {e}")))?;
        *self = toml::from_str(&text).map_err(|e| Error::Parse {
            line: 0,
            column: 0,
            message: format!("after overrides: {}", e.message()),
        })?;
        self.check_names()
    }

    /// Specs with the global seed filled in where a spec has none.
    pub fn resolved_specs(&self) -> Vec<ExperimentSpec> {
        self.specs
            .iter()
            .map(|s| ExperimentSpec {
                base_seed: Some(s.base_seed.unwrap_or(self.run.seed)),
                ..s.clone()
            })
            .collect()
    }
}

fn run_table(doc: &mut toml::Table) -> &mut toml::Table {
    doc.entry("run")
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .expect("run is a table")
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
