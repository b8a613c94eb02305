use std::fs;
use std::path::Path;

use super::{ClassCounts, Label, LabeledSentence};
use crate::error::{Error, Result};

const TEXT_COLUMNS: [&str; 3] = ["text", "sentence", "sentence_text"];
const LABEL_COLUMNS: [&str; 4] = ["label", "verdict", "class", "y"];

/// Reads a labeled-sentence file.
///
/// Tab-separated files are read verbatim; comma-separated files (`.csv`)
/// follow the usual quoting rules. A header row naming a text column
/// (`text`/`sentence`) and a label column (`label`/`verdict`/`class`) is
/// detected automatically; without one every row must be `text<sep>label`.
pub fn load_cbd(path: &Path) -> Result<Vec<LabeledSentence>> {
    let raw = fs::read(path).map_err(|e| Error::file(path, e))?;
    if raw.iter().all(u8::is_ascii_whitespace) {
        return Err(Error::Input(format!("{} is empty", path.display())));
    }
    let comma = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(if comma { b',' } else { b'\t' })
        .quoting(comma)
        .has_headers(false)
        .flexible(true)
        .from_reader(raw.as_slice());

    let mut columns: Option<(usize, usize)> = None;
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(row + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(row + 1, |p| p.line() as usize);
        if record.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        if row == 0 {
            if let Some(cols) = header_columns(&record) {
                columns = Some(cols);
                continue;
            }
        }
        let (text_col, label_col) = match columns {
            Some(c) => c,
            None if record.len() == 2 => (0, 1),
            None => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected 2 columns (text, label), found {}", record.len()),
                })
            }
        };
        let (Some(text), Some(raw_label)) = (record.get(text_col), record.get(label_col)) else {
            return Err(Error::Parse {
                line,
                message: "missing text or label column".into(),
            });
        };
        let label = Label::parse(raw_label).ok_or_else(|| Error::Label {
            line,
            label: raw_label.to_owned(),
        })?;
        if text.trim().is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty sentence".into(),
            });
        }
        out.push(LabeledSentence {
            text: text.to_owned(),
            label,
            source_id: Some(format!("{}:{line}", file_name(path))),
        });
    }
    if out.is_empty() {
        return Err(Error::Input(format!("{} contains no sentences", path.display())));
    }
    Ok(out)
}

fn header_columns(record: &csv::StringRecord) -> Option<(usize, usize)> {
    let find = |names: &[&str]| {
        record
            .iter()
            .position(|c| names.contains(&c.trim().to_ascii_lowercase().as_str()))
    };
    Some((find(&TEXT_COLUMNS)?, find(&LABEL_COLUMNS)?))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Writes `text<TAB>label` rows under a header; texts are written byte for byte.
pub fn save_tsv(sentences: &[LabeledSentence], path: &Path) -> Result<()> {
    let mut out = String::from("text\tlabel\n");
    for s in sentences {
        if s.text.contains(['\t', '\n', '\r']) {
            return Err(Error::Input(format!(
                "sentence {:?} contains a tab or line break",
                s.text
            )));
        }
        out.push_str(&s.text);
        out.push('\t');
        out.push_str(s.label.as_str());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::file(path, e))
}

/// Sentences of one debate transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClefFile {
    pub name: String,
    pub sentences: Vec<LabeledSentence>,
}

/// A directory of transcripts; each file is one ranking query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClefDataset {
    pub files: Vec<ClefFile>,
}

impl ClefDataset {
    pub fn counts(&self) -> ClassCounts {
        let mut c = ClassCounts::default();
        for f in &self.files {
            let fc = ClassCounts::of(&f.sentences);
            c.ncs += fc.ncs;
            c.cfs += fc.cfs;
        }
        c
    }

    pub fn sentences(&self) -> impl Iterator<Item = &LabeledSentence> {
        self.files.iter().flat_map(|f| f.sentences.iter())
    }
}

/// Reads every `.tsv`/`.txt` transcript in `dir` (sorted by name).
///
/// Rows are `line_number<TAB>speaker<TAB>text<TAB>label` with a 0/1 label;
/// the speaker column is parsed but not used. Three-column rows without a
/// speaker are accepted as well.
pub fn load_clef(dir: &Path) -> Result<ClefDataset> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("tsv") || e.eq_ignore_ascii_case("txt"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Input(format!("no transcript files in {}", dir.display())));
    }
    let mut files = Vec::with_capacity(paths.len());
    for path in paths {
        let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        let name = file_name(&path);
        let mut sentences = Vec::new();
        for (i, row) in text.lines().enumerate() {
            let line = i + 1;
            if row.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = row.split('\t').collect();
            let (text_col, label_col) = match cols.len() {
                4 => (2, 3),
                3 => (1, 2),
                n => {
                    return Err(Error::Parse {
                        line,
                        message: format!("{name}: expected 3 or 4 tab-separated columns, found {n}"),
                    })
                }
            };
            let raw_label = cols[label_col];
            let label = match raw_label.trim() {
                "1" => Label::Cfs,
                "0" => Label::Ncs,
                _ if i == 0 && cols[label_col].trim().eq_ignore_ascii_case("label") => continue,
                other => {
                    return Err(Error::Label {
                        line,
                        label: other.to_owned(),
                    })
                }
            };
            sentences.push(LabeledSentence {
                text: cols[text_col].to_owned(),
                label,
                source_id: Some(format!("{name}:{}", cols[0].trim())),
            });
        }
        if sentences.is_empty() {
            return Err(Error::Input(format!("{name} contains no sentences")));
        }
        files.push(ClefFile { name, sentences });
    }
    Ok(ClefDataset { files })
}
