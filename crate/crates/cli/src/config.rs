//! Config resolution and run-directory bookkeeping.
//!
//! A run's configuration is one flat JSON object: the optional `--config`
//! file, overlaid by any flags given on the command line. The object is split
//! into the command's own keys and, where a command wraps a library config
//! (training or simulation), the remaining keys, which must all belong to it.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Environment variable naming the directory under which runs land when
/// `--out` is not given.
pub const RUN_ROOT_ENV: &str = "CRMRANK_RUN_ROOT";

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config values, or input contents. Exit code 1.
    Invalid(String),
    /// Unreadable input or unwritable output. Exit code 2.
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Io(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invalid(m) => write!(f, "invalid input: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<crmrank::Error> for Failure {
    fn from(e: crmrank::Error) -> Self {
        match e {
            crmrank::Error::Io(io) => Failure::Io(io.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

pub type Outcome<T> = Result<T, Failure>;

pub fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Invalid(msg.into())
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

pub fn open(path: &Path) -> Outcome<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| io_failure(path, e))
}

/// Re-labels a library error with the file it came from.
pub fn in_file(path: &Path) -> impl Fn(crmrank::Error) -> Failure + '_ {
    move |e| match Failure::from(e) {
        Failure::Invalid(m) => Failure::Invalid(format!("{}: {m}", path.display())),
        Failure::Io(m) => Failure::Io(format!("{}: {m}", path.display())),
    }
}

/// Merges the config file (if any) with non-null flag values.
pub fn resolve<F: Serialize>(config_file: Option<&Path>, flags: &F) -> Outcome<Map<String, Value>> {
    let mut merged = match config_file {
        Some(path) => match serde_json::from_reader(open(path)?) {
            Ok(Value::Object(map)) => map,
            Ok(_) => return Err(invalid(format!("{}: config must be a JSON object", path.display()))),
            Err(e) if e.is_io() => return Err(Failure::Io(format!("{}: {e}", path.display()))),
            Err(e) => return Err(invalid(format!("{}: {e}", path.display()))),
        },
        None => Map::new(),
    };
    let Value::Object(flag_values) = serde_json::to_value(flags).map_err(|e| invalid(e.to_string()))? else {
        unreachable!("flag structs serialize to objects");
    };
    for (k, v) in flag_values {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    Ok(merged)
}

/// Removes and returns the keys that `T::default()` serializes.
pub fn split_own<T: Serialize + Default>(map: &mut Map<String, Value>) -> Map<String, Value> {
    let Ok(Value::Object(template)) = serde_json::to_value(T::default()) else {
        unreachable!("config structs serialize to objects");
    };
    template.keys().filter_map(|k| map.remove_entry(k)).collect()
}

pub fn decode<T: DeserializeOwned>(map: Map<String, Value>) -> Outcome<T> {
    serde_json::from_value(Value::Object(map)).map_err(|e| invalid(format!("config: {e}")))
}

/// Flattens several serializable configs into one object.
pub fn combine(parts: &[Value]) -> Value {
    let mut out = Map::new();
    for part in parts {
        if let Value::Object(m) = part {
            out.extend(m.clone());
        }
    }
    Value::Object(out)
}

pub fn default_out(command: &str) -> PathBuf {
    let root = std::env::var_os(RUN_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(command)
}

/// Output directory of one run; remembers what it produced.
pub struct RunDir {
    dir: PathBuf,
    command: &'static str,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(dir: PathBuf, command: &'static str) -> Outcome<Self> {
        fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
        Ok(RunDir {
            dir,
            command,
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Opens `name` for writing and records it in the manifest.
    pub fn file(&mut self, name: &str) -> Outcome<BufWriter<File>> {
        let path = self.path(name);
        let f = File::create(&path).map_err(|e| io_failure(&path, e))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(BufWriter::new(f))
    }

    pub fn write_json(&mut self, name: &str, value: &Value) -> Outcome<()> {
        let path = self.path(name);
        let mut w = self.file(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| io_failure(&path, e))
    }

    /// Writes the resolved config and the manifest. Call last.
    pub fn finish(mut self, resolved: &Value) -> Outcome<()> {
        self.write_json("config.json", resolved)?;
        let mut files = Vec::new();
        let mut names = self.files.clone();
        names.sort();
        for name in names {
            let path = self.path(&name);
            let bytes = fs::metadata(&path).map_err(|e| io_failure(&path, e))?.len();
            files.push(serde_json::json!({ "name": name, "bytes": bytes }));
        }
        let manifest = serde_json::json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "files": files,
        });
        let path = self.path("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("json values serialize") + "\n";
        fs::write(&path, text).map_err(|e| io_failure(&path, e))
    }
}

pub fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| io_failure(path, e)
}
