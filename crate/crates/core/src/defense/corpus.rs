//! Detector feature corpus: `client_id,round,is_malicious,p0..,r0..,f0..,loss`.

use std::path::Path;

use super::ClientReport;
use crate::error::{Error, Result};
use crate::models::ClassMetrics;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRow {
    pub report: ClientReport,
    pub is_malicious: bool,
}

fn header(classes: usize) -> Vec<String> {
    let mut h = vec!["client_id".to_string(), "round".to_string(), "is_malicious".to_string()];
    for prefix in ["p", "r", "f"] {
        h.extend((0..classes).map(|c| format!("{prefix}{c}")));
    }
    h.push("loss".into());
    h
}

pub fn write_corpus(path: &Path, rows: &[CorpusRow]) -> Result<()> {
    let classes = rows.first().map_or(10, |r| r.report.num_classes());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header(classes)).map_err(|e| csv_error(path, e))?;
    for row in rows {
        if row.report.num_classes() != classes {
            return Err(Error::Shape("corpus rows disagree on the class count".into()));
        }
        let mut rec = vec![
            row.report.client_id.to_string(),
            row.report.round.to_string(),
            u8::from(row.is_malicious).to_string(),
        ];
        rec.extend(row.report.feature_row().iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let head = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if head.len() < 5 || (head.len() - 4) % 3 != 0 {
        return Err(Error::Format(format!(
            "{}: corpus header has {} columns",
            path.display(),
            head.len()
        )));
    }
    let classes = (head.len() - 4) / 3;
    if head.iter().ne(header(classes).iter().map(String::as_str)) {
        return Err(Error::Format(format!("{}: unexpected corpus header", path.display())));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |what: &str| Error::Format(format!("{}: record {}: bad {what}", path.display(), line + 1));
        let int = |i: usize| rec[i].trim().parse::<usize>().map_err(|_| bad(&head[i]));
        let real = |i: usize| rec[i].trim().parse::<f64>().map_err(|_| bad(&head[i]));
        let per_class = (0..classes)
            .map(|c| {
                Ok(ClassMetrics {
                    precision: real(3 + c)?,
                    recall: real(3 + classes + c)?,
                    f1: real(3 + 2 * classes + c)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(CorpusRow {
            report: ClientReport {
                client_id: int(0)?,
                round: int(1)?,
                per_class,
                loss: real(3 + 3 * classes)?,
            },
            is_malicious: match int(2)? {
                0 => false,
                1 => true,
                _ => return Err(bad("is_malicious")),
            },
        });
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Format(format!("{}: {e}", path.display()))
    }
}
