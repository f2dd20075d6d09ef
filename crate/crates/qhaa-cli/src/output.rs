//! File writers. Every artifact carries the resolved config: JSON files in a
//! `config` field, CSV and Matrix Market files in a leading comment line.

use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::CliError;

pub struct OutDir {
    pub root: PathBuf,
    config: Value,
    pub written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(cfg: &RunConfig) -> Result<Self, CliError> {
        let root = PathBuf::from(&cfg.outputs.directory);
        fs::create_dir_all(&root)?;
        Ok(OutDir {
            root,
            config: cfg.to_json(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, bytes)?;
        self.written.push(p);
        Ok(())
    }

    fn comment(&self, marker: &str) -> String {
        format!("{marker} config: {}\n", self.config)
    }

    /// `{"config": ..., <key>: <value>}`.
    pub fn json<T: Serialize>(&mut self, name: &str, key: &str, value: &T) -> Result<(), CliError> {
        let v = json!({ "config": self.config, key: value });
        let mut s = serde_json::to_string_pretty(&v)?;
        s.push('\n');
        self.put(name, s.as_bytes())
    }

    /// CSV with a `# config:` first line; `body` writes header and rows.
    pub fn csv<F>(&mut self, name: &str, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<(), CliError>,
    {
        let mut buf = self.comment("#").into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            body(&mut w)?;
            w.flush()?;
        }
        self.put(name, &buf)
    }

    /// Prefixes bytes produced by a library writer with a config comment,
    /// placed after the first line when `after_first_line` is set.
    pub fn raw(&mut self, name: &str, marker: &str, bytes: &[u8], after_first_line: bool) -> Result<(), CliError> {
        let c = self.comment(marker);
        let mut out = Vec::with_capacity(bytes.len() + c.len());
        if after_first_line {
            let cut = bytes.iter().position(|b| *b == b'\n').map_or(bytes.len(), |i| i + 1);
            out.extend_from_slice(&bytes[..cut]);
            out.extend_from_slice(c.as_bytes());
            out.extend_from_slice(&bytes[cut..]);
        } else {
            out.extend_from_slice(c.as_bytes());
            out.extend_from_slice(bytes);
        }
        self.put(name, &out)
    }

    pub fn report(&self) {
        for p in &self.written {
            println!("wrote {}", p.display());
        }
    }
}

/// `step,t,node,x,u` rows.
pub fn field_rows(
    w: &mut csv::Writer<&mut Vec<u8>>,
    dt: f64,
    dx: f64,
    fields: &[Vec<f64>],
) -> Result<(), CliError> {
    w.write_record(["step", "t", "node", "x", "u"])?;
    for (s, f) in fields.iter().enumerate() {
        let t = (s as f64 * dt).to_string();
        for (i, u) in f.iter().enumerate() {
            w.write_record([s.to_string(), t.clone(), i.to_string(), (i as f64 * dx).to_string(), u.to_string()])?;
        }
    }
    Ok(())
}
