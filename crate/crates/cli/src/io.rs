//! CSV matrix input and atomic output.

use std::io::Write;
use std::path::Path;

use hsic::nalgebra::DMatrix;

use crate::error::{CliError, CliResult};

/// Reads a comma-separated matrix of finite floats, one observation per row.
/// A first line with any non-numeric field is taken as a header.
pub fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let file =
        std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_matrix(file, &path.display().to_string())
}

pub fn parse_matrix<R: std::io::Read>(reader: R, name: &str) -> CliResult<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    let mut cols = 0;
    let mut rows = 0;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Parse(format!("{name}:{line}: {e}"))
        })?;
        let line = rec.position().map_or(k as u64 + 1, |p| p.line());
        if k == 0 && rec.iter().any(|f| f.parse::<f64>().is_err()) {
            cols = rec.len();
            continue;
        }
        if cols == 0 {
            cols = rec.len();
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::Parse(format!(
                    "{name}:{line}: column {}: '{field}' is not a number",
                    j + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Parse(format!(
                    "{name}:{line}: column {}: value '{field}' is not finite",
                    j + 1
                )));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Parse(format!("{name}: no data rows")));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// Writes `contents` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.flush().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_detected() {
        let m = parse_matrix("a,b\n1,2\n3,4\n".as_bytes(), "t").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let m = parse_matrix("1.5\n-2e3\n".as_bytes(), "t").unwrap();
        assert_eq!(m.shape(), (2, 1));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_matrix("1,2\n3,x\n".as_bytes(), "f.csv").unwrap_err();
        assert_eq!(e.category(), "parse");
        assert!(e.to_string().starts_with("f.csv:2:"), "{e}");
        let e = parse_matrix("1,2\n3\n".as_bytes(), "f.csv").unwrap_err();
        assert!(e.to_string().contains("f.csv:2"), "{e}");
        let e = parse_matrix("x\n1\nnan\n".as_bytes(), "f.csv").unwrap_err();
        assert!(e.to_string().starts_with("f.csv:3:"), "{e}");
        assert!(parse_matrix("h\n".as_bytes(), "f").is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
