//! JSONL dataset files: one header object carrying metadata and splits,
//! followed by exactly `n_pairs` record lines.

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetMeta, PreferenceDataset, PreferencePair};
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "rmlab-prefs";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    n_pairs: usize,
    train: [usize; 2],
    validation: [usize; 2],
    meta: DatasetMeta,
}

pub fn write_dataset(ds: &PreferenceDataset, mut out: impl Write) -> Result<()> {
    let header = Header {
        format: FORMAT_TAG.to_string(),
        version: DATASET_FORMAT_VERSION,
        n_pairs: ds.pairs.len(),
        train: [ds.train.start, ds.train.end],
        validation: [ds.validation.start, ds.validation.end],
        meta: ds.meta.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for pair in &ds.pairs {
        serde_json::to_writer(&mut out, pair)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Parses a dataset file. Line numbers in errors are 1-based.
pub fn parse_dataset(text: &str) -> Result<PreferenceDataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;

    #[derive(Deserialize)]
    struct Probe {
        format: String,
        version: u32,
    }
    let probe: Probe = serde_json::from_str(first).map_err(|e| parse_err(1, e.to_string()))?;
    if probe.format != FORMAT_TAG {
        return Err(parse_err(
            1,
            format!("not a dataset file (format tag `{}`)", probe.format),
        ));
    }
    if probe.version != DATASET_FORMAT_VERSION {
        return Err(Error::Version {
            found: probe.version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let header: Header = serde_json::from_str(first).map_err(|e| parse_err(1, e.to_string()))?;

    let mut pairs = Vec::with_capacity(header.n_pairs);
    let mut last_line = 1;
    for (n, line) in lines {
        last_line = n;
        if line.trim().is_empty() {
            return Err(parse_err(n, "blank line"));
        }
        let pair: PreferencePair =
            serde_json::from_str(line).map_err(|e| parse_err(n, e.to_string()))?;
        check_pair(&pair, &header.meta).map_err(|msg| parse_err(n, msg))?;
        pairs.push(pair);
    }
    if pairs.len() != header.n_pairs {
        return Err(parse_err(
            last_line + 1,
            format!(
                "expected {} records, found {} (truncated file?)",
                header.n_pairs,
                pairs.len()
            ),
        ));
    }
    if !text.ends_with('\n') {
        return Err(parse_err(
            last_line,
            "missing trailing newline (truncated file?)",
        ));
    }
    let range = |r: [usize; 2]| -> Range<usize> { r[0]..r[1] };
    PreferenceDataset::new(
        pairs,
        range(header.train),
        range(header.validation),
        header.meta,
    )
}

fn check_pair(p: &PreferencePair, meta: &DatasetMeta) -> std::result::Result<(), String> {
    if p.prompt.len() != meta.prompt_len {
        return Err(format!(
            "prompt length {} != {}",
            p.prompt.len(),
            meta.prompt_len
        ));
    }
    if p.completion_a.len() != meta.completion_len || p.completion_b.len() != meta.completion_len {
        return Err(format!("completion length != {}", meta.completion_len));
    }
    let v = meta.vocab_size;
    if p.prompt
        .iter()
        .chain(&p.completion_a)
        .chain(&p.completion_b)
        .any(|&t| t >= v)
    {
        return Err(format!("token out of range for vocabulary {v}"));
    }
    if !p.gold_margin.is_finite() {
        return Err("gold_margin is not finite".into());
    }
    if (p.label != p.clean_label()) != p.flipped {
        return Err("flipped flag disagrees with label and gold_margin".into());
    }
    Ok(())
}

pub fn save_dataset(ds: &PreferenceDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<PreferenceDataset> {
    parse_dataset(&fs::read_to_string(path)?)
}
