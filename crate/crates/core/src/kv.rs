//! Flat `key = value` text files with optional `[section]` headers.
//!
//! Used for the model file and the simulator config. `#` starts a comment.
//! Keys before the first header live in the root section (named `""`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDoc {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

#[derive(Debug, Clone, Copy)]
pub struct Section<'a> {
    name: &'a str,
    entries: Option<&'a BTreeMap<String, String>>,
}

impl KvDoc {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut doc = KvDoc::default();
        let mut current = String::new();
        doc.sections.entry(current.clone()).or_default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let loc = || format!("{}:{}", origin, lineno + 1);
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(loc(), "unterminated section header"))?
                    .trim();
                current = name.to_string();
                doc.sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(loc(), format!("expected `key = value`, got `{line}`"))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(loc(), "empty key"));
            }
            let section = doc.sections.entry(current.clone()).or_default();
            if section
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::parse(loc(), format!("duplicate key `{key}`")));
            }
        }
        Ok(doc)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn section(&self, name: &str) -> Section<'_> {
        let (name, entries) = match self.sections.get_key_value(name) {
            Some((k, v)) => (k.as_str(), Some(v)),
            None => ("", None),
        };
        Section { name, entries }
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.contains_key(name)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, entries) in &self.sections {
            if entries.is_empty() {
                continue;
            }
            if !name.is_empty() {
                if !out.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{name}]");
            }
            for (k, v) in entries {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }
}

impl<'a> Section<'a> {
    pub fn raw(&self, key: &str) -> Option<&'a str> {
        self.entries.and_then(|e| e.get(key)).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!(
                    "[{}] {key} = {v}: cannot parse as {}",
                    self.name,
                    std::any::type_name::<T>()
                ))
            }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing key `{key}` in [{}]", self.name)))
    }

    pub fn keys(&self) -> impl Iterator<Item = &'a str> {
        self.entries
            .into_iter()
            .flat_map(|e| e.keys().map(String::as_str))
    }
}
