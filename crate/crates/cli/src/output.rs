use std::path::{Path, PathBuf};
use std::time::Instant;

use nas_core::util::write_atomic;
use nas_core::{Error, Result};
use serde::Serialize;

/// Output directory; every file lands through a temp file and rename.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(OutDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.root.join(name)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn write_csv<I, R>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let path = self.path(name);
        write_atomic(&path, |f| {
            let mut w = csv::Writer::from_writer(f);
            let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
            w.write_record(header).map_err(csv_err)?;
            for row in rows {
                w.write_record(row).map_err(csv_err)?;
            }
            w.flush()?;
            Ok(())
        })
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).expect("value serializes");
        write_atomic(&path, |f| {
            use std::io::Write;
            f.write_all(text.as_bytes())?;
            f.write_all(b"\n")?;
            Ok(())
        })
    }
}

/// Shortest representation that parses back to the same value.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

#[derive(Serialize)]
pub struct Stage {
    pub stage: String,
    pub ms: f64,
}

#[derive(Default)]
pub struct Timings(Vec<Stage>);

impl Timings {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0.push(Stage {
            stage: stage.to_string(),
            ms: start.elapsed().as_secs_f64() * 1e3,
        });
        out
    }
}

/// Record of one invocation, written next to its outputs.
#[derive(Serialize)]
pub struct RunManifest<'a, A: Serialize> {
    pub command: &'a str,
    pub tool_version: &'a str,
    pub config: &'a A,
    pub timings: &'a [Stage],
    pub outputs: &'a [String],
}

pub fn finish<A: Serialize>(mut out: OutDir, command: &str, config: &A, timings: Timings) -> Result<()> {
    let outputs = out.written().to_vec();
    let manifest = RunManifest {
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        config,
        timings: &timings.0,
        outputs: &outputs,
    };
    out.write_json("run_manifest.json", &manifest)
}
