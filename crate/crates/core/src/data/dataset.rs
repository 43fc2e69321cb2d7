use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RawExample;
use crate::error::{Error, Result};

/// Expected class counts of the canonical Headlines training split.
pub const REFERENCE_TRAIN_COUNTS: ClassCounts = ClassCounts {
    sarcastic: 2516,
    non_sarcastic: 2504,
};

/// Expected class counts of the canonical Headlines test split.
pub const REFERENCE_TEST_COUNTS: ClassCounts = ClassCounts {
    sarcastic: 570,
    non_sarcastic: 410,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub sarcastic: usize,
    pub non_sarcastic: usize,
}

impl ClassCounts {
    pub fn of(examples: &[RawExample]) -> Self {
        let sarcastic = examples.iter().filter(|e| e.label == 1).count();
        Self {
            sarcastic,
            non_sarcastic: examples.len() - sarcastic,
        }
    }

    pub fn total(&self) -> usize {
        self.sarcastic + self.non_sarcastic
    }
}

impl fmt::Display for ClassCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} sarcastic / {} non-sarcastic", self.sarcastic, self.non_sarcastic)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub counts: ClassCounts,
    /// Mean number of tokens per example after normalization.
    pub mean_tokens: f64,
}

impl SplitStats {
    pub fn of(examples: &[RawExample]) -> Self {
        let tokens: usize = examples.iter().map(|e| e.tokens().len()).sum();
        Self {
            counts: ClassCounts::of(examples),
            mean_tokens: if examples.is_empty() { 0.0 } else { tokens as f64 / examples.len() as f64 },
        }
    }

    /// Warning text when the counts differ from `expected`.
    pub fn mismatch(&self, expected: &ClassCounts, split: &str) -> Option<String> {
        (self.counts != *expected).then(|| {
            format!(
                "{split} split has {} but the reference Headlines {split} split has {}",
                self.counts, expected
            )
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    /// Header row with `headline` and `label` (or `is_sarcastic`) columns.
    Delimited { delimiter: u8 },
    /// One JSON object per line.
    JsonLines,
}

impl DatasetFormat {
    pub fn detect(path: &Path, contents: &str) -> Self {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("csv") => Self::Delimited { delimiter: b',' },
            Some("tsv") => Self::Delimited { delimiter: b'\t' },
            Some("json" | "jsonl" | "ndjson") => Self::JsonLines,
            _ if contents.trim_start().starts_with('{') => Self::JsonLines,
            _ => Self::Delimited { delimiter: b',' },
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub examples: Vec<RawExample>,
    pub stats: SplitStats,
}

fn parse_label(raw: &str) -> Option<usize> {
    match raw.trim() {
        "0" | "0.0" => Some(0),
        "1" | "1.0" => Some(1),
        _ => None,
    }
}

fn load_delimited(path: &Path, contents: &str, delimiter: u8) -> Result<Vec<RawExample>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .from_reader(contents.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    let col = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.contains(&h.trim().to_ascii_lowercase().as_str()))
    };
    let headline = col(&["headline"])
        .ok_or_else(|| Error::parse(path, 1, "header has no `headline` column"))?;
    let label = col(&["label", "is_sarcastic"])
        .ok_or_else(|| Error::parse(path, 1, "header has no `label` column"))?;

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let (Some(text), Some(raw_label)) = (record.get(headline), record.get(label)) else {
            return Err(Error::parse(path, line, "record is missing the headline or label field"));
        };
        let label = parse_label(raw_label)
            .ok_or_else(|| Error::parse(path, line, format!("unknown label value {raw_label:?}")))?;
        out.push(RawExample {
            headline: text.to_owned(),
            label,
        });
    }
    Ok(out)
}

fn load_json_lines(path: &Path, contents: &str) -> Result<Vec<RawExample>> {
    let mut out = Vec::new();
    for (i, line) in contents.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        let text = value
            .get("headline")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::parse(path, line_no, "record has no string `headline` field"))?;
        let raw_label = value
            .get("label")
            .or_else(|| value.get("is_sarcastic"))
            .ok_or_else(|| Error::parse(path, line_no, "record has no `label` field"))?;
        let label = match raw_label {
            serde_json::Value::Number(n) => n.as_f64().and_then(|f| parse_label(&f.to_string())),
            serde_json::Value::String(s) => parse_label(s),
            serde_json::Value::Bool(b) => Some(usize::from(*b)),
            _ => None,
        }
        .ok_or_else(|| Error::parse(path, line_no, format!("unknown label value {raw_label}")))?;
        out.push(RawExample {
            headline: text.to_owned(),
            label,
        });
    }
    Ok(out)
}

/// Reads a labelled headline file. The format is inferred from the file
/// extension (or content) unless given.
pub fn load_dataset(path: &Path, format: Option<DatasetFormat>) -> Result<LoadedDataset> {
    let contents = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if contents.trim().is_empty() {
        return Err(Error::Contract(format!("dataset {} is empty", path.display())));
    }
    let format = format.unwrap_or_else(|| DatasetFormat::detect(path, &contents));
    let examples = match format {
        DatasetFormat::Delimited { delimiter } => load_delimited(path, &contents, delimiter)?,
        DatasetFormat::JsonLines => load_json_lines(path, &contents)?,
    };
    if examples.is_empty() {
        return Err(Error::Contract(format!("dataset {} has no records", path.display())));
    }
    let stats = SplitStats::of(&examples);
    Ok(LoadedDataset { examples, stats })
}
