//! On-disk formats: atomic writes, model checkpoints, vocab files, and the
//! JSONL preference-pair interchange format.
//!
//! Checkpoints are flat binary: an 8-byte magic, three little-endian u64
//! dimensions (vocab, embed, hidden), then every parameter as a little-endian
//! f64 in the model's declared order. Round trips are bit-exact.

use std::io::Write;
use std::path::Path;

use prefloss_core::model::ToyLm;
use prefloss_core::seq::{PreferencePair, Vocab};
use prefloss_core::synth::{PairDataset, Provenance};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PFLOSS01";

/// Writes `bytes` to `path` via a temp file in the same directory plus a
/// rename, so readers never observe a half-written file and interrupted runs
/// leave the previous version intact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(dir) => tempfile::NamedTempFile::new_in(dir)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, model: &ToyLm) -> Result<(), CliError> {
    let mut bytes = Vec::with_capacity(8 + 24 + model.n_params() * 8);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    for dim in [model.vocab_size, model.embed_dim, model.hidden_dim] {
        bytes.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    for i in 0..model.n_params() {
        bytes.extend_from_slice(&model.param(i).to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<ToyLm, CliError> {
    let bytes = std::fs::read(path)?;
    let bad = |msg: &str| CliError::data(format!("{}: {msg}", path.display()));
    if bytes.len() < 32 {
        return Err(bad("checkpoint truncated before header"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a model checkpoint (bad magic)"));
    }
    let dim = |i: usize| {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&bytes[8 + 8 * i..16 + 8 * i]);
        u64::from_le_bytes(buf) as usize
    };
    let (vocab, embed, hidden) = (dim(0), dim(1), dim(2));
    if vocab == 0 || embed == 0 || hidden == 0 {
        return Err(bad("checkpoint header has a zero dimension"));
    }
    let mut model = ToyLm::zeros(vocab, embed, hidden);
    let expected = 32 + model.n_params() * 8;
    if bytes.len() != expected {
        return Err(bad(&format!(
            "checkpoint body is {} bytes, expected {}",
            bytes.len() - 32,
            expected - 32
        )));
    }
    for i in 0..model.n_params() {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&bytes[32 + 8 * i..40 + 8 * i]);
        *model.param_mut(i) = f64::from_le_bytes(buf);
    }
    Ok(model)
}

/// Vocab file: one token string per line, id = line index.
pub fn load_vocab(path: &Path) -> Result<Vocab, CliError> {
    let text = std::fs::read_to_string(path)?;
    let tokens: Vec<String> = text.lines().map(|l| l.to_string()).collect();
    Vocab::new(tokens).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn save_vocab(path: &Path, vocab: &Vocab) -> Result<(), CliError> {
    let mut out = String::new();
    for token in vocab.tokens() {
        out.push_str(token);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// One token in a JSONL pair: either an integer id or a token string looked
/// up in the vocab.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum TokenRef {
    Id(usize),
    Name(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct RawPair {
    x_pos: Vec<TokenRef>,
    y_pos: Vec<TokenRef>,
    x_neg: Vec<TokenRef>,
    y_neg: Vec<TokenRef>,
}

fn resolve_seq(refs: Vec<TokenRef>, vocab: &Vocab, line: usize) -> Result<Vec<usize>, CliError> {
    refs.into_iter()
        .map(|r| match r {
            TokenRef::Id(id) if id < vocab.size() => Ok(id),
            TokenRef::Id(id) => Err(CliError::data(format!(
                "line {line}: token id {id} out of range for vocabulary of size {}",
                vocab.size()
            ))),
            TokenRef::Name(name) => vocab
                .id(&name)
                .map_err(|_| CliError::data(format!("line {line}: unknown token {name:?}"))),
        })
        .collect()
}

/// Loads a JSONL dataset: one pair per line, keys x_pos/y_pos/x_neg/y_neg,
/// tokens given as ids or strings. Error messages carry 1-based line numbers.
pub fn load_jsonl(path: &Path, vocab: &Vocab) -> Result<PairDataset, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: RawPair = serde_json::from_str(raw)
            .map_err(|e| CliError::data(format!("line {line}: {e}")))?;
        let pair = PreferencePair {
            x_pos: resolve_seq(parsed.x_pos, vocab, line)?,
            y_pos: resolve_seq(parsed.y_pos, vocab, line)?,
            x_neg: resolve_seq(parsed.x_neg, vocab, line)?,
            y_neg: resolve_seq(parsed.y_neg, vocab, line)?,
        };
        pair.validate(vocab.size())
            .map_err(|e| CliError::data(format!("line {line}: {e}")))?;
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(CliError::data(format!("{}: empty dataset", path.display())));
    }
    PairDataset::new(
        pairs,
        vocab.clone(),
        Provenance::File(path.display().to_string()),
    )
    .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Writes a dataset as JSONL with integer token ids, one pair per line.
pub fn save_jsonl(path: &Path, dataset: &PairDataset) -> Result<(), CliError> {
    let mut out = String::new();
    for pair in &dataset.pairs {
        let raw = RawPair {
            x_pos: pair.x_pos.iter().map(|&id| TokenRef::Id(id)).collect(),
            y_pos: pair.y_pos.iter().map(|&id| TokenRef::Id(id)).collect(),
            x_neg: pair.x_neg.iter().map(|&id| TokenRef::Id(id)).collect(),
            y_neg: pair.y_neg.iter().map(|&id| TokenRef::Id(id)).collect(),
        };
        out.push_str(&serde_json::to_string(&raw).expect("pair serialization cannot fail"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use prefloss_core::model::{InitPolicy, ToyLm};
    use prefloss_core::synth::SynthSpec;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = ToyLm::new(9, 3, 5, InitPolicy::Uniform { scale: 0.7 }, 11);
        save_checkpoint(&path, &model).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.vocab_size, 9);
        assert_eq!(loaded.embed_dim, 3);
        assert_eq!(loaded.hidden_dim, 5);
        for i in 0..model.n_params() {
            assert_eq!(model.param(i).to_bits(), loaded.param(i).to_bits());
        }
    }

    #[test]
    fn checkpoint_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTMAGIC").unwrap();
        assert!(load_checkpoint(&path).is_err());
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&4u64.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("expected"));
    }

    #[test]
    fn jsonl_round_trip_preserves_pairs_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("dataset.jsonl");
        let synthesized = prefloss_core::synth::synth(&SynthSpec::high_eps(5)).unwrap();
        save_jsonl(&data, &synthesized).unwrap();
        let loaded = load_jsonl(&data, &synthesized.vocab).unwrap();
        assert_eq!(loaded.pairs, synthesized.pairs);
    }

    #[test]
    fn jsonl_accepts_token_names_and_reports_lines() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocab::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let data = dir.path().join("named.jsonl");
        std::fs::write(
            &data,
            "{\"x_pos\":[\"a\"],\"y_pos\":[\"b\",2],\"x_neg\":[],\"y_neg\":[\"c\"]}\n",
        )
        .unwrap();
        let ds = load_jsonl(&data, &vocab).unwrap();
        assert_eq!(ds.pairs[0].y_pos, vec![1, 2]);
        assert!(ds.pairs[0].x_neg.is_empty());

        std::fs::write(
            &data,
            "{\"x_pos\":[0],\"y_pos\":[1],\"x_neg\":[0],\"y_neg\":[2]}\n{\"x_pos\":[0],\"y_pos\":[\"zz\"],\"x_neg\":[0],\"y_neg\":[1]}\n",
        )
        .unwrap();
        let err = load_jsonl(&data, &vocab).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("zz"), "{msg}");
    }

    #[test]
    fn empty_jsonl_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocab::synthetic(4).unwrap();
        let data = dir.path().join("empty.jsonl");
        std::fs::write(&data, "").unwrap();
        let err = load_jsonl(&data, &vocab).unwrap_err();
        assert!(err.to_string().contains("empty dataset"));
    }

    #[test]
    fn vocab_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let vocab = Vocab::synthetic(7).unwrap();
        save_vocab(&path, &vocab).unwrap();
        assert_eq!(load_vocab(&path).unwrap(), vocab);
    }
}
