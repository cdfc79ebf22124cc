//! `key = value` settings files, flag/config resolution and run manifests.
//!
//! A run manifest is itself a settings file: the block before the
//! [`ITEMS_MARKER`] line holds every effective value of the run, so passing
//! the manifest back through `--config` replays the run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context;

/// Separates the settings block from per-item records in a run manifest.
pub const ITEMS_MARKER: &str = "[items]";

pub const MANIFEST_NAME: &str = "run_manifest.txt";

/// A bad flag, config value or missing input. Maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// A value that can come from a flag or a settings file and be echoed back.
pub trait Setting: Sized {
    fn parse_setting(text: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! from_str_setting {
    ($($t:ty),*) => {$(
        impl Setting for $t {
            fn parse_setting(text: &str) -> Result<Self, String> {
                text.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

from_str_setting!(f64, u64, usize, bool, String);

impl Setting for PathBuf {
    fn parse_setting(text: &str) -> Result<Self, String> {
        if text.is_empty() {
            return Err("empty path".into());
        }
        Ok(PathBuf::from(text))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

/// `WIDTHxHEIGHT` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Size {
    pub width: usize,
    pub height: usize,
}

impl std::str::FromStr for Size {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
        let dim = |v: &str| -> Result<usize, String> {
            match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(format!("bad dimension {v:?} in {s:?}")),
            }
        };
        Ok(Size {
            width: dim(w)?,
            height: dim(h)?,
        })
    }
}

impl Setting for Size {
    fn parse_setting(text: &str) -> Result<Self, String> {
        text.parse()
    }
    fn render(&self) -> String {
        format!("{}x{}", self.width, self.height)
    }
}

/// Byte count with an optional binary `K`, `M` or `G` suffix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteSize(pub usize);

impl std::str::FromStr for ByteSize {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let t = s.trim();
        let t = t.strip_suffix(['b', 'B']).unwrap_or(t);
        let (digits, shift) = match t.chars().last() {
            Some('k' | 'K') => (&t[..t.len() - 1], 10),
            Some('m' | 'M') => (&t[..t.len() - 1], 20),
            Some('g' | 'G') => (&t[..t.len() - 1], 30),
            _ => (t, 0),
        };
        let n: usize = digits.trim().parse().map_err(|_| format!("bad byte size {s:?}"))?;
        n.checked_mul(1usize << shift)
            .map(ByteSize)
            .ok_or_else(|| format!("byte size {s:?} overflows"))
    }
}

impl Setting for ByteSize {
    fn parse_setting(text: &str) -> Result<Self, String> {
        text.parse()
    }
    fn render(&self) -> String {
        self.0.to_string()
    }
}

/// Comma-separated list of window sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaList(pub Vec<f64>);

impl std::str::FromStr for BetaList {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let values = s
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad beta {v:?} in {s:?}")))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BetaList(values))
    }
}

impl Setting for BetaList {
    fn parse_setting(text: &str) -> Result<Self, String> {
        text.parse()
    }
    fn render(&self) -> String {
        self.0.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",")
    }
}

/// Parsed settings file.
#[derive(Debug, Default)]
pub struct ConfigFile {
    origin: Option<PathBuf>,
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in config {}", path.display()))?;
        cfg.origin = Some(path.to_path_buf());
        Ok(cfg)
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line == ITEMS_MARKER {
                break;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("line {}: expected `key = value`, got {line:?}", i + 1)))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(usage(format!("line {}: empty key", i + 1)));
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(usage(format!("line {}: key {key:?} set twice", i + 1)));
            }
        }
        Ok(ConfigFile { origin: None, values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// Resolves each setting from its flag, then the config file, then a
/// default, remembering the effective values in resolution order.
pub struct Resolver {
    config: ConfigFile,
    consumed: BTreeSet<String>,
    effective: Vec<(String, String)>,
}

impl Resolver {
    pub fn new(config: ConfigFile, command: &str) -> anyhow::Result<Self> {
        if let Some(recorded) = config.get("command") {
            if recorded != command {
                return Err(usage(format!(
                    "config was recorded for `{recorded}`, not `{command}`"
                )));
            }
        }
        let mut consumed = BTreeSet::new();
        consumed.insert("command".to_string());
        Ok(Resolver {
            config,
            consumed,
            effective: vec![("command".into(), command.into())],
        })
    }

    fn config_value<T: Setting>(&mut self, key: &str) -> anyhow::Result<Option<T>> {
        self.consumed.insert(key.to_string());
        match self.config.get(key) {
            None => Ok(None),
            Some(text) => T::parse_setting(text)
                .map(Some)
                .map_err(|e| usage(format!("config key {key:?}: {e}"))),
        }
    }

    /// Flag or config value, not yet recorded; the caller records the value
    /// it finally uses.
    pub fn lookup<T: Setting>(&mut self, key: &str, flag: Option<T>) -> anyhow::Result<Option<T>> {
        let config_value = self.config_value(key)?;
        Ok(flag.or(config_value))
    }

    pub fn optional<T: Setting>(&mut self, key: &str, flag: Option<T>) -> anyhow::Result<Option<T>> {
        let value = self.lookup(key, flag)?;
        if let Some(v) = &value {
            self.record(key, v.render());
        }
        Ok(value)
    }

    pub fn with_default<T: Setting>(&mut self, key: &str, flag: Option<T>, default: T) -> anyhow::Result<T> {
        let config_value = self.config_value(key)?;
        let value = flag.or(config_value).unwrap_or(default);
        self.record(key, value.render());
        Ok(value)
    }

    pub fn required<T: Setting>(&mut self, key: &str, flag: Option<T>) -> anyhow::Result<T> {
        self.optional(key, flag)?
            .ok_or_else(|| usage(format!("missing --{key} (flag or `{key} =` config line)")))
    }

    pub fn record(&mut self, key: &str, value: String) {
        self.effective.push((key.to_string(), value));
    }

    /// Effective values; warns about config keys nothing asked for.
    pub fn finish(self) -> Vec<(String, String)> {
        for key in self.config.values.keys() {
            if !self.consumed.contains(key) {
                let origin = self
                    .config
                    .origin
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default();
                log::warn!("config {origin}: key {key:?} is not used by this command");
            }
        }
        self.effective
    }
}

/// Settings block plus tab-separated per-item records.
pub struct RunManifest {
    settings: Vec<(String, String)>,
    items: Vec<String>,
}

impl RunManifest {
    pub fn new(settings: Vec<(String, String)>) -> Self {
        RunManifest {
            settings,
            items: Vec::new(),
        }
    }

    pub fn item<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let line: Vec<String> = fields.into_iter().map(|f| f.as_ref().replace(['\t', '\n'], " ")).collect();
        self.items.push(line.join("\t"));
    }

    pub fn extend(&mut self, other: RunManifest) {
        self.items.extend(other.items);
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# fda run manifest; pass back with --config to replay\n");
        for (k, v) in &self.settings {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str(ITEMS_MARKER);
        s.push('\n');
        for line in &self.items {
            s.push_str(line);
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, self.to_text()).with_context(|| format!("writing {}", path.display()))
    }
}
