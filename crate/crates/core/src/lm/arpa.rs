//! ARPA back-off text format.
//!
//! ```text
//! \data\
//! ngram 1=<count>
//! ngram 2=<count>
//!
//! \1-grams:
//! <log10 prob>\t<w1>\t<log10 backoff>
//! ...
//! \end\
//! ```
//!
//! Probabilities and weights are printed with six decimals; entries are
//! sorted by their word strings so output is byte-stable.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::katz::{Entry, KatzModel};
use super::{Vocab, BOS, EOS, UNK};
use crate::error::{Error, Result};
use crate::io::open;

pub fn write_arpa<W: Write>(model: &KatzModel, mut out: W) -> Result<()> {
    let grams = model.grams();
    if grams.first().is_none_or(HashMap::is_empty) {
        return Err(Error::EmptyInput("refusing to write a model without unigrams".into()));
    }
    let vocab = model.vocab();
    let io_err = |e| Error::io("<arpa output>", e);
    let mut text = String::new();
    text.push_str("\n\\data\\\n");
    for (i, table) in grams.iter().enumerate() {
        text.push_str(&format!("ngram {}={}\n", i + 1, table.len()));
    }
    for (i, table) in grams.iter().enumerate() {
        text.push_str(&format!("\n\\{}-grams:\n", i + 1));
        let mut rows: Vec<(Vec<&str>, &Entry)> = table
            .iter()
            .map(|(k, e)| (k.iter().map(|&id| vocab.word(id)).collect(), e))
            .collect();
        rows.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        for (words, entry) in rows {
            text.push_str(&format!("{:.6}\t{}", entry.log_prob, words.join(" ")));
            if let Some(bow) = entry.log_bow {
                text.push_str(&format!("\t{bow:.6}"));
            }
            text.push('\n');
        }
    }
    text.push_str("\n\\end\\\n");
    out.write_all(text.as_bytes()).map_err(io_err)?;
    out.flush().map_err(io_err)
}

pub fn save_arpa(model: &KatzModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_arpa(model, BufWriter::new(file))
}

pub fn load_arpa(path: impl AsRef<Path>) -> Result<KatzModel> {
    let path = path.as_ref();
    read_arpa(BufReader::new(open(path)?), path)
}

enum Section {
    Preamble,
    Data,
    Grams(usize),
    End,
}

type ArpaRow = (Vec<String>, f64, Option<f64>);

/// Parses an ARPA file. `path` is only used in error messages.
pub fn read_arpa<R: BufRead>(reader: R, path: &Path) -> Result<KatzModel> {
    let mut declared: Vec<usize> = Vec::new();
    // Per order: (words, log10 prob, log10 back-off).
    let mut rows: Vec<Vec<ArpaRow>> = Vec::new();
    let mut section = Section::Preamble;
    let mut last_line = 0;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed == "\\data\\" {
            section = Section::Data;
            continue;
        }
        if trimmed == "\\end\\" {
            section = Section::End;
            break;
        }
        if let Some(n) = trimmed
            .strip_prefix('\\')
            .and_then(|s| s.strip_suffix("-grams:"))
        {
            let n: usize = n
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad section header `{trimmed}`")))?;
            if n != rows.len() + 1 || n > declared.len() {
                return Err(Error::parse(path, lineno, format!("unexpected section `{trimmed}`")));
            }
            rows.push(Vec::with_capacity(declared[n - 1]));
            section = Section::Grams(n);
            continue;
        }
        match section {
            Section::Preamble => {}
            Section::Data => {
                let spec = trimmed
                    .strip_prefix("ngram ")
                    .and_then(|s| s.split_once('='))
                    .ok_or_else(|| Error::parse(path, lineno, "expected `ngram N=count`"))?;
                let n: usize = spec.0.trim().parse().map_err(|_| Error::parse(path, lineno, "bad order"))?;
                let count: usize = spec.1.trim().parse().map_err(|_| Error::parse(path, lineno, "bad count"))?;
                if n != declared.len() + 1 {
                    return Err(Error::parse(path, lineno, "n-gram orders must be listed in sequence"));
                }
                declared.push(count);
            }
            Section::Grams(n) => {
                let fields: Vec<&str> = trimmed.split_whitespace().collect();
                if fields.len() != n + 1 && fields.len() != n + 2 {
                    return Err(Error::parse(path, lineno, format!("expected {n}-gram entry")));
                }
                let log_prob: f64 = fields[0]
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, "bad log probability"))?;
                let log_bow = match fields.get(n + 1) {
                    Some(f) => Some(f.parse().map_err(|_| Error::parse(path, lineno, "bad back-off weight"))?),
                    None => None,
                };
                let words = fields[1..=n].iter().map(|s| s.to_string()).collect();
                rows[n - 1].push((words, log_prob, log_bow));
            }
            Section::End => unreachable!(),
        }
    }

    if !matches!(section, Section::End) {
        return Err(Error::parse(path, last_line, "truncated ARPA file: missing \\end\\"));
    }
    if declared.is_empty() {
        return Err(Error::parse(path, last_line, "ARPA file has no \\data\\ counts"));
    }
    if rows.len() != declared.len() {
        return Err(Error::parse(
            path,
            last_line,
            format!("declared {} orders, found {} sections", declared.len(), rows.len()),
        ));
    }
    for (i, (want, got)) in declared.iter().zip(&rows).enumerate() {
        if *want != got.len() {
            return Err(Error::parse(
                path,
                last_line,
                format!("declared {want} {}-grams, found {}", i + 1, got.len()),
            ));
        }
    }

    let vocab = Vocab::from_words(rows[0].iter().map(|(w, _, _)| w[0].as_str()));
    let history_id = |w: &str| -> u32 {
        if w == BOS {
            super::BOS_ID
        } else if w == EOS {
            super::EOS_ID
        } else {
            vocab.id(w)
        }
    };
    let order = declared.len();
    let mut grams: Vec<HashMap<Vec<u32>, Entry>> = vec![HashMap::new(); order];
    for (i, table) in rows.into_iter().enumerate() {
        for (words, log_prob, log_bow) in table {
            let key: Vec<u32> = words.iter().map(|w| history_id(w)).collect();
            grams[i].insert(key, Entry { log_prob, log_bow });
        }
    }
    for reserved in [EOS, UNK] {
        let id = history_id(reserved);
        grams[0].entry(vec![id]).or_insert(Entry {
            log_prob: super::LOG_ZERO,
            log_bow: None,
        });
    }
    Ok(KatzModel::from_parts(order, vocab, grams))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{train_katz, KatzConfig, LanguageModel};
    use std::io::Cursor;

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split_whitespace().map(String::from).collect())
            .collect()
    }

    #[test]
    fn round_trip_scores() {
        let model = train_katz(&corpus(&["a b", "a c", "a b"]), KatzConfig::with_order(2)).unwrap();
        let mut buf = Vec::new();
        write_arpa(&model, &mut buf).unwrap();
        let back = read_arpa(Cursor::new(&buf), Path::new("mem")).unwrap();
        assert_eq!(back.order(), 2);
        assert_eq!(back.ngram_counts(), model.ngram_counts());
        for s in corpus(&["a b", "a c", "c a b", "b", "q a", "a a a c"]) {
            let d = model.sentence_log10_prob(&s) - back.sentence_log10_prob(&s);
            assert!(d.abs() < 1e-4, "{s:?} {d}");
        }
        let mut again = Vec::new();
        write_arpa(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let text = "\\data\\\nngram 1=3\nngram 2=5\n\n\\1-grams:\n-0.5\t</s>\n-0.5\ta\t-0.1\n-99\t<s>\t-0.2\n\n\\2-grams:\n-0.1\t<s> a\n-0.1\ta </s>\n-0.1\ta a\n-0.1\ta b\n\n\\end\\\n";
        let err = read_arpa(Cursor::new(text), Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("declared 5 2-grams, found 4"), "{err}");
    }

    #[test]
    fn truncated_file_is_an_error() {
        let text = "\\data\\\nngram 1=1\n\n\\1-grams:\n-0.5\t</s>\n";
        assert!(read_arpa(Cursor::new(text), Path::new("mem")).is_err());
    }
}
