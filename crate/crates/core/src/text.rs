//! Line-oriented UTF-8 file helpers shared by the pipeline stages.

use std::path::{Path, PathBuf};

use crate::error::{CoreError, Result};

fn file_err(path: &Path, source: std::io::Error) -> CoreError {
    CoreError::File {
        path: path.to_path_buf(),
        source,
    }
}

/// Read a whole file as lines. Rejects invalid UTF-8 with the byte offset of
/// the first bad byte. A trailing newline does not produce an empty last line.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).map_err(|e| file_err(path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| CoreError::InvalidUtf8 {
        path: path.to_path_buf(),
        offset: e.valid_up_to(),
    })?;
    Ok(split_lines(text))
}

pub fn split_lines(text: &str) -> Vec<String> {
    let mut lines: Vec<String> = text.split('\n').map(|l| l.trim_end_matches('\r').to_string()).collect();
    if lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines
}

/// Write lines with a trailing newline each.
pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut out = String::new();
    for line in lines {
        out.push_str(line.as_ref());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| file_err(path, e))
}

/// Whitespace tokenization; the corpora are assumed pre-tokenized.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

pub fn to_path(p: &str) -> PathBuf {
    PathBuf::from(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utf8_errors_carry_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, b"ok\xffrest").unwrap();
        match read_lines(&path) {
            Err(CoreError::InvalidUtf8 { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("expected utf8 error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        let lines = vec!["ein Satz .", "", "noch einer ."];
        write_lines(&path, &lines).unwrap();
        assert_eq!(read_lines(&path).unwrap(), lines);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes, b"ein Satz .\n\nnoch einer .\n");
    }
}
