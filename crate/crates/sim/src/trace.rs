//! Video trace files: one frame per line, `frame_index size_bytes deadline_seconds`.
//! Blank lines and lines starting with `#` are skipped.

use std::fs;
use std::path::Path;

use crate::scenario::LoadError;

pub fn parse_trace(text: &str, path: &Path) -> Result<Vec<(u32, u32, f64)>, LoadError> {
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| LoadError::Trace {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [index, size, deadline] = fields[..] else {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        };
        let index = index
            .parse::<u32>()
            .map_err(|e| err(format!("frame_index {index:?}: {e}")))?;
        let size = size
            .parse::<u32>()
            .map_err(|e| err(format!("size_bytes {size:?}: {e}")))?;
        let deadline = deadline
            .parse::<f64>()
            .map_err(|e| err(format!("deadline_seconds {deadline:?}: {e}")))?;
        if !(deadline.is_finite() && deadline >= 0.0) {
            return Err(err(format!("deadline {deadline} is not a non-negative time")));
        }
        records.push((index, size, deadline));
    }
    if records.is_empty() {
        return Err(LoadError::Trace {
            path: path.to_path_buf(),
            line: 0,
            message: "no frames".into(),
        });
    }
    Ok(records)
}

pub fn read_trace(path: &Path) -> Result<Vec<(u32, u32, f64)>, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trace(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records_and_skips_comments() {
        let text = "# clip\n0 1200 0.04\n\n1 900 0.08\n";
        let r = parse_trace(text, Path::new("t")).unwrap();
        assert_eq!(r, vec![(0, 1200, 0.04), (1, 900, 0.08)]);
    }

    #[test]
    fn reports_line_numbers() {
        let e = parse_trace("0 1 0.1\n1 x 0.2\n", Path::new("t")).unwrap_err();
        assert!(matches!(e, LoadError::Trace { line: 2, .. }), "{e}");
        let e = parse_trace("0 1\n", Path::new("t")).unwrap_err();
        assert!(e.to_string().contains("expected 3 fields"));
        assert!(parse_trace("# nothing\n", Path::new("t")).is_err());
    }
}
