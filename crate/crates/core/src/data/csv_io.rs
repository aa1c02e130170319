//! CSV ingestion and export.
//!
//! Datasets use the header `tokens,label` with space-separated tokens;
//! manifests use `sample_id,true_label,noisy_label`.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, Provenance, Sample, Split};
use super::noise::NoisyLabelRecord;
use crate::{Error, Result};

/// How the `tokens` column is interpreted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    /// Closed vocabulary; token `vocab[i]` maps to id `i`. When absent the
    /// column holds numeric ids.
    #[serde(default)]
    pub vocab: Option<Vec<String>>,
    #[serde(default)]
    pub num_classes: Option<usize>,
    #[serde(default)]
    pub vocab_size: Option<usize>,
}

pub fn read_csv_dataset(reader: impl Read, schema: &CsvSchema, origin: &str) -> Result<LabeledDataset> {
    let lookup: Option<HashMap<&str, u32>> = schema.vocab.as_ref().map(|v| {
        v.iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i as u32))
            .collect()
    });
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(reader);
    let mut samples = Vec::new();
    let mut unknown = BTreeSet::new();
    let mut seq_len = None;
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 1;
        let rec = rec.map_err(|e| Error::MalformedRow {
            line,
            message: e.to_string(),
        })?;
        if idx == 0 {
            if rec.len() == 2 && &rec[0] == "tokens" && &rec[1] == "label" {
                continue;
            }
            return Err(Error::MalformedRow {
                line,
                message: "expected header `tokens,label`".into(),
            });
        }
        if rec.len() != 2 {
            return Err(Error::MalformedRow {
                line,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        let label: usize = rec[1].trim().parse().map_err(|_| Error::MalformedRow {
            line,
            message: format!("bad label {:?}", &rec[1]),
        })?;
        let mut tokens = Vec::new();
        for w in rec[0].split_whitespace() {
            match &lookup {
                Some(map) => match map.get(w) {
                    Some(&id) => tokens.push(id),
                    None => {
                        unknown.insert(w.to_string());
                    }
                },
                None => tokens.push(w.parse::<u32>().map_err(|_| Error::MalformedRow {
                    line,
                    message: format!("bad token id {w:?}"),
                })?),
            }
        }
        let n = rec[0].split_whitespace().count();
        if n == 0 {
            return Err(Error::MalformedRow {
                line,
                message: "empty token list".into(),
            });
        }
        match seq_len {
            None => seq_len = Some(n),
            Some(t) if t != n => {
                return Err(Error::MalformedRow {
                    line,
                    message: format!("sequence length {n}, expected {t}"),
                })
            }
            _ => {}
        }
        samples.push(Sample { tokens, label });
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownTokens(unknown.into_iter().collect()));
    }
    let max_label = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let max_token = samples
        .iter()
        .flat_map(|s| s.tokens.iter().map(|&t| t as usize + 1))
        .max()
        .unwrap_or(0);
    let vocab_size = schema
        .vocab
        .as_ref()
        .map(Vec::len)
        .or(schema.vocab_size)
        .unwrap_or(max_token);
    let n = samples.len();
    let ds = LabeledDataset {
        samples,
        splits: vec![Split::Train; n],
        num_classes: schema.num_classes.unwrap_or(max_label.max(2)),
        vocab_size,
        seq_len: seq_len.unwrap_or(0),
        provenance: Provenance::Csv(origin.to_string()),
    };
    ds.validate()?;
    Ok(ds)
}

pub fn load_csv_dataset(path: &Path, schema: &CsvSchema) -> Result<LabeledDataset> {
    let f = std::fs::File::open(path)?;
    read_csv_dataset(f, schema, &path.display().to_string())
}

/// Writes numeric token ids, or vocabulary words when `vocab` is given.
pub fn write_csv_dataset(
    dataset: &LabeledDataset,
    writer: impl Write,
    vocab: Option<&[String]>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["tokens", "label"])?;
    for s in &dataset.samples {
        let toks: Vec<String> = s
            .tokens
            .iter()
            .map(|&t| match vocab {
                Some(v) => v[t as usize].clone(),
                None => t.to_string(),
            })
            .collect();
        w.write_record([toks.join(" "), s.label.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_manifest_csv(manifest: &[NoisyLabelRecord], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sample_id", "true_label", "noisy_label"])?;
    for r in manifest {
        w.write_record([
            r.sample_id.to_string(),
            r.true_label.to_string(),
            r.noisy_label.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
