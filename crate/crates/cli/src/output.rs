use std::fs;
use std::path::{Path, PathBuf};

use bwlab_core::{Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;

/// Writes result files, each carrying the run configuration.
pub struct Sink<'a> {
    dir: Option<PathBuf>,
    config: &'a RunConfig,
    pub written: Vec<PathBuf>,
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("cannot write {}: {e}", path.display()))
}

impl<'a> Sink<'a> {
    pub fn new(dir: Option<&Path>, config: &'a RunConfig) -> Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d).map_err(|e| io(d, e))?;
        }
        Ok(Sink {
            dir: dir.map(Path::to_path_buf),
            config,
            written: Vec::new(),
        })
    }

    fn meta_line(&self) -> String {
        serde_json::to_string(self.config).expect("config serializes")
    }

    pub fn document<T: Serialize>(&self, result: &T) -> String {
        let doc = json!({ "meta": self.config, "result": result });
        serde_json::to_string_pretty(&doc).expect("result serializes")
    }

    fn put(&mut self, name: &str, body: String) -> Result<()> {
        if let Some(d) = &self.dir {
            let path = d.join(name);
            fs::write(&path, body).map_err(|e| io(&path, e))?;
            self.written.push(path);
        }
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<()> {
        let body = self.document(result) + "\n";
        self.put(name, body)
    }

    /// CSV with the configuration in leading `# ` comment lines.
    pub fn csv(&mut self, name: &str, table: &str) -> Result<()> {
        let body = format!("# bwlab {}\n# {}\n{}", self.config.version, self.meta_line(), table);
        self.put(name, body)
    }

    pub fn markdown(&mut self, name: &str, text: &str) -> Result<()> {
        let body = format!("<!-- bwlab {} {} -->\n\n{}", self.config.version, self.meta_line(), text);
        self.put(name, body)
    }
}
