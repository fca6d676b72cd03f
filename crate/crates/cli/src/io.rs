//! JSONL input and output with line-numbered diagnostics.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Lines, Write};
use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// `-` is standard input/output.
pub fn open_input(path: &Path) -> anyhow::Result<Box<dyn BufRead>> {
    if path == Path::new("-") {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Box::new(BufReader::new(file)))
}

pub fn open_output(path: &Path) -> anyhow::Result<Box<dyn Write>> {
    if path == Path::new("-") {
        return Ok(Box::new(BufWriter::new(io::stdout())));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(Box::new(BufWriter::new(file)))
}

/// A non-blank input line and its 1-based number.
#[derive(Debug, Clone)]
pub struct Line {
    pub number: usize,
    pub text: String,
}

/// Yields non-blank lines in batches of at most `size`.
pub struct Chunks {
    lines: std::iter::Enumerate<Lines<Box<dyn BufRead>>>,
    size: usize,
}

impl Chunks {
    pub fn new(reader: Box<dyn BufRead>, size: usize) -> Self {
        Chunks {
            lines: reader.lines().enumerate(),
            size: size.max(1),
        }
    }

    /// The next batch, or `None` at end of input.
    pub fn next_chunk(&mut self) -> Option<io::Result<Vec<Line>>> {
        let mut chunk = Vec::new();
        for (i, line) in self.lines.by_ref() {
            match line {
                Err(e) => return Some(Err(e)),
                Ok(text) if text.trim().is_empty() => continue,
                Ok(text) => chunk.push(Line { number: i + 1, text }),
            }
            if chunk.len() == self.size {
                break;
            }
        }
        (!chunk.is_empty()).then_some(Ok(chunk))
    }
}

pub fn parse_line<T: DeserializeOwned>(line: &Line) -> Result<T, String> {
    serde_json::from_str(&line.text).map_err(|e| format!("line {}: {e}", line.number))
}

/// Reads a whole JSONL file. The first bad line aborts with its number.
pub fn read_all<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut out = Vec::new();
    let mut chunks = Chunks::new(open_input(path)?, 4096);
    while let Some(chunk) = chunks.next_chunk() {
        for line in chunk? {
            out.push(parse_line(&line).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?);
        }
    }
    Ok(out)
}

pub fn write_json_line<T: Serialize>(out: &mut dyn Write, value: &T) -> anyhow::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_skip_blank_lines_and_keep_numbers() {
        let text = "a\n\nb\nc\n  \nd\n";
        let mut chunks = Chunks::new(Box::new(io::Cursor::new(text.to_string())), 2);
        let mut seen = Vec::new();
        while let Some(chunk) = chunks.next_chunk() {
            seen.push(chunk.unwrap().iter().map(|l| (l.number, l.text.clone())).collect::<Vec<_>>());
        }
        assert_eq!(
            seen,
            vec![
                vec![(1, "a".to_string()), (3, "b".to_string())],
                vec![(4, "c".to_string()), (6, "d".to_string())],
            ]
        );
    }
}
