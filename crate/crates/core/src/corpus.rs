//! The bundled mini-language corpus and corpus files.

use std::io;
use std::path::Path;

/// Line that separates documents in `.mini` corpus files.
pub const DOC_SEPARATOR: &str = "#%%";

const BUNDLED: &str = include_str!("../corpus/bundled.mini");

/// Split corpus text into documents at separator lines.
pub fn split_documents(text: &str) -> Vec<&str> {
    let mut docs = Vec::new();
    let mut start = 0;
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        if line.trim_end() == DOC_SEPARATOR {
            if pos > start {
                docs.push(&text[start..pos]);
            }
            start = pos + line.len();
        }
        pos += line.len();
    }
    if pos > start && !text[start..].trim().is_empty() {
        docs.push(&text[start..]);
    }
    docs
}

/// Documents from a corpus file, or from every file of a directory (sorted
/// by name, not recursive). Each file is split on [`DOC_SEPARATOR`].
pub fn load_documents(path: &Path) -> io::Result<Vec<String>> {
    let mut files = Vec::new();
    if path.is_dir() {
        for entry in std::fs::read_dir(path)? {
            let p = entry?.path();
            if p.is_file() {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }
    let mut docs = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f)?;
        docs.extend(split_documents(&text).into_iter().map(String::from));
    }
    Ok(docs)
}

/// Documents of the bundled corpus, in file order.
pub fn bundled_corpus() -> Vec<&'static str> {
    split_documents(BUNDLED)
}
