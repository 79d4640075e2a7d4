//! The statement file format: UTF-8 text, one statement per line,
//! `s,r,o[,qr1,qv1,qr2,qv2,...]`, no header. Labels contain no commas.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::RawStatement;
use crate::error::{Error, Result};

/// Parses one non-empty line.
pub fn parse_line(line: &str) -> std::result::Result<RawStatement, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 3 {
        return Err(format!("expected at least 3 fields, found {}", fields.len()));
    }
    if !(fields.len() - 3).is_multiple_of(2) {
        return Err(format!(
            "qualifier fields must come in pairs, found {} field(s) after the main triple",
            fields.len() - 3
        ));
    }
    if let Some(pos) = fields.iter().position(|f| f.is_empty()) {
        return Err(format!("field {} is empty", pos + 1));
    }
    let mut st = RawStatement::new(fields[0], fields[1], fields[2]);
    for pair in fields[3..].chunks_exact(2) {
        st = st.qualifier(pair[0], pair[1]);
    }
    Ok(st)
}

pub fn format_line(st: &RawStatement) -> String {
    let mut out = format!("{},{},{}", st.subject, st.relation, st.object);
    for (qr, qv) in &st.qualifiers {
        out.push(',');
        out.push_str(qr);
        out.push(',');
        out.push_str(qv);
    }
    out
}

/// Parses statement text; blank lines are skipped. Line numbers in errors
/// are 1-based and refer to `path`.
pub fn parse_str(text: &str, path: &Path) -> Result<Vec<RawStatement>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_line(l).map_err(|message| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message,
            })
        })
        .collect()
}

pub fn read_statements(path: impl AsRef<Path>) -> Result<Vec<RawStatement>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_str(&text, path)
}

pub fn write_statements(path: impl AsRef<Path>, statements: &[RawStatement]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for st in statements {
        writeln!(w, "{}", format_line(st))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triple_only() {
        let st = parse_line("a,r,b").unwrap();
        assert_eq!(st, RawStatement::new("a", "r", "b"));
    }

    #[test]
    fn two_pairs() {
        let st = parse_line("a,r,b,q1,v1,q2,v2").unwrap();
        assert_eq!(
            st.qualifiers,
            vec![("q1".into(), "v1".into()), ("q2".into(), "v2".into())]
        );
        assert_eq!(format_line(&st), "a,r,b,q1,v1,q2,v2");
    }

    #[test]
    fn odd_field_count_reports_line() {
        let err = parse_str("a,r,b\n\na,r,b,q1\n", Path::new("x.txt")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        let sts = vec![
            RawStatement::new("a", "r", "b"),
            RawStatement::new("c", "r", "d").qualifier("q", "e"),
        ];
        write_statements(&path, &sts).unwrap();
        assert_eq!(read_statements(&path).unwrap(), sts);
    }
}
