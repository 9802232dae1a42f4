use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, Example, Label, Vocabulary, UNK_TOKEN};
use crate::error::{Error, Result};

/// One line of a corpus file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonlRecord {
    pub premise: String,
    pub hypothesis: String,
    pub label: String,
}

/// Parses a JSON-lines corpus file. Blank lines are skipped; a file without
/// records is an error.
pub fn read_jsonl_records(path: &Path) -> Result<Vec<(usize, JsonlRecord)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push((i + 1, rec));
    }
    if records.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(records)
}

fn to_example(
    path: &Path,
    line: usize,
    rec: &JsonlRecord,
    mut id_of: impl FnMut(&str) -> Result<u32>,
) -> Result<Example> {
    let parse_err = |reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let label: Label = rec.label.parse().map_err(|e: Error| parse_err(e.to_string()))?;
    let mut tokens = |s: &str, field: &str| -> Result<Vec<u32>> {
        let ids = s.split_whitespace().map(&mut id_of).collect::<Result<Vec<_>>>()?;
        if ids.is_empty() {
            return Err(parse_err(format!("empty {field}")));
        }
        Ok(ids)
    };
    let premise = tokens(&rec.premise, "premise")?;
    let hypothesis = tokens(&rec.hypothesis, "hypothesis")?;
    Example::new(premise, hypothesis, label)
}

/// Loads a corpus from three files. The vocabulary is built from the train
/// split (id 0 is `<unk>`); unseen dev/test tokens map to `<unk>`.
pub fn load_jsonl(train: &Path, dev: &Path, test: &Path) -> Result<Corpus> {
    let mut vocab = Vocabulary::new();
    vocab.add(UNK_TOKEN);
    let train_examples = read_jsonl_records(train)?
        .iter()
        .map(|(line, rec)| to_example(train, *line, rec, |t| Ok(vocab.add(t))))
        .collect::<Result<Vec<_>>>()?;
    let dev_examples = load_jsonl_with_vocab(dev, &vocab)?;
    let test_examples = load_jsonl_with_vocab(test, &vocab)?;
    Ok(Corpus {
        train: train_examples,
        dev: dev_examples,
        test: test_examples,
        vocab,
    })
}

/// Loads one corpus file against a fixed vocabulary, for evaluating a
/// trained model on another corpus.
pub fn load_jsonl_with_vocab(path: &Path, vocab: &Vocabulary) -> Result<Vec<Example>> {
    read_jsonl_records(path)?
        .iter()
        .map(|(line, rec)| {
            to_example(path, *line, rec, |t| {
                vocab.lookup(t).ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: *line,
                    reason: format!("token `{t}` not in vocabulary and no {UNK_TOKEN} entry"),
                })
            })
        })
        .collect()
}

pub fn write_jsonl(path: &Path, examples: &[Example], vocab: &Vocabulary) -> Result<()> {
    let render = |ids: &[u32]| -> Result<String> {
        ids.iter()
            .map(|&id| {
                vocab
                    .token(id)
                    .ok_or(Error::TokenOutOfRange { id, vocab: vocab.len() })
            })
            .collect::<Result<Vec<_>>>()
            .map(|t| t.join(" "))
    };
    let mut out = Vec::new();
    for ex in examples {
        let rec = JsonlRecord {
            premise: render(&ex.premise)?,
            hypothesis: render(&ex.hypothesis)?,
            label: ex.label.to_string(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
