use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;

use super::Vocabulary;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Reads a text word-vector file (`token v1 v2 ... vd` per line) into a
/// `[vocab.len(), d]` table. Vocabulary tokens absent from the file get
/// uniform values in `±1/sqrt(d)` drawn from `seed`.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, seed: u64) -> Result<Tensor> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut dim: Option<usize> = None;
    let mut found: HashMap<&str, Vec<f64>> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("line is not blank");
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("bad number `{f}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(err(format!("no values for `{token}`")));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(err(format!("expected {d} values, got {}", values.len())));
            }
            _ => {}
        }
        if vocab.id(token).is_some() {
            found.insert(token, values);
        }
    }
    let d = dim.ok_or_else(|| Error::EmptyFile(path.to_path_buf()))?;
    let mut rng = rng::stream(seed, "embeddings");
    let bound = 1.0 / (d as f64).sqrt();
    let mut data = Vec::with_capacity(vocab.len() * d);
    for token in vocab.tokens() {
        match found.get(token.as_str()) {
            Some(v) => data.extend_from_slice(v),
            None => data.extend((0..d).map(|_| rng.gen_range(-bound..=bound))),
        }
    }
    Tensor::new(vec![vocab.len(), d], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_match_file_and_missing_are_seeded() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vec.txt");
        fs::write(&p, "the 0.1 0.2 -0.3\nzzz 1 2 3\ncat 0.5 0.5 0.5\n").unwrap();
        let vocab = Vocabulary::from_tokens(vec!["cat".into(), "the".into(), "dog".into()]).unwrap();
        let t = load_embeddings(&p, &vocab, 4).unwrap();
        assert_eq!(t.shape(), &[3, 3]);
        assert_eq!(t.row(1), &[0.1, 0.2, -0.3]);
        assert_eq!(t.row(0), &[0.5, 0.5, 0.5]);
        assert!(t.row(2).iter().all(|v| v.abs() <= 1.0 / 3f64.sqrt()));
        assert_eq!(t, load_embeddings(&p, &vocab, 4).unwrap());
    }

    #[test]
    fn malformed_lines_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vec.txt");
        fs::write(&p, "a 1 2\nb 1\n").unwrap();
        let vocab = Vocabulary::from_tokens(vec!["a".into()]).unwrap();
        assert!(matches!(load_embeddings(&p, &vocab, 0), Err(Error::Parse { line: 2, .. })));
        fs::write(&p, "a 1 x\n").unwrap();
        assert!(matches!(load_embeddings(&p, &vocab, 0), Err(Error::Parse { line: 1, .. })));
        fs::write(&p, "").unwrap();
        assert!(matches!(load_embeddings(&p, &vocab, 0), Err(Error::EmptyFile(_))));
    }
}
