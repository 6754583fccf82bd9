//! Observation input from CSV files or standard input.
//!
//! One observation per row. A first row that does not parse as numbers is
//! taken as a header; a final header column named `label` holds 0/1 outlier
//! labels. Without a header, `--labeled` marks the last column as labels.

use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::Path;

use anyhow::{bail, Context, Result};

pub struct Row {
    pub x: Vec<f64>,
    pub label: Option<bool>,
}

/// Row-by-row reader; rows are yielded as they arrive.
pub struct RowReader {
    records: csv::StringRecordsIntoIter<Box<dyn Read>>,
    labeled: bool,
    width: Option<usize>,
    line: u64,
    pending: Option<csv::StringRecord>,
    source: String,
}

fn parse_label(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "true" | "TRUE" | "True" => Some(true),
        "0" | "false" | "FALSE" | "False" => Some(false),
        _ => None,
    }
}

impl RowReader {
    /// Opens `path`, or standard input for `-`.
    pub fn open(path: &Path, labeled: bool) -> Result<Self> {
        let source = path.display().to_string();
        let inner: Box<dyn Read> = if path == Path::new("-") {
            Box::new(io::stdin().lock())
        } else {
            Box::new(BufReader::new(
                File::open(path).with_context(|| format!("opening {source}"))?,
            ))
        };
        let mut records = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(inner)
            .into_records();
        let mut labeled = labeled;
        let mut pending = None;
        let mut line = 0;
        if let Some(first) = records.next() {
            let first = first.with_context(|| format!("reading {source}"))?;
            line = 1;
            let numeric = first.iter().all(|f| f.parse::<f64>().is_ok());
            if numeric {
                pending = Some(first);
            } else if first.iter().next_back().is_some_and(|f| f.eq_ignore_ascii_case("label")) {
                labeled = true;
            }
        }
        Ok(Self {
            records,
            labeled,
            width: None,
            line,
            pending,
            source,
        })
    }

    pub fn labeled(&self) -> bool {
        self.labeled
    }

    fn parse(&mut self, rec: &csv::StringRecord) -> Result<Row> {
        let fields: Vec<&str> = rec.iter().collect();
        let ncols = fields.len();
        match self.width {
            None => self.width = Some(ncols),
            Some(w) if w != ncols => {
                bail!("{}:{}: expected {w} columns, found {ncols}", self.source, self.line)
            }
            _ => {}
        }
        let (values, label) = if self.labeled {
            let (last, rest) = fields.split_last().context("empty row")?;
            let label = parse_label(last).with_context(|| {
                format!("{}:{}: label {last:?} is not 0 or 1", self.source, self.line)
            })?;
            (rest, Some(label))
        } else {
            (&fields[..], None)
        };
        if values.is_empty() {
            bail!("{}:{}: no values", self.source, self.line);
        }
        let x = values
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .with_context(|| format!("{}:{}: {f:?} is not a number", self.source, self.line))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Row { x, label })
    }
}

impl Iterator for RowReader {
    type Item = Result<Row>;

    fn next(&mut self) -> Option<Result<Row>> {
        let rec = match self.pending.take() {
            Some(r) => r,
            None => match self.records.next()? {
                Ok(r) => {
                    self.line += 1;
                    r
                }
                Err(e) => return Some(Err(e).with_context(|| format!("reading {}", self.source))),
            },
        };
        if rec.iter().all(str::is_empty) {
            return self.next();
        }
        Some(self.parse(&rec))
    }
}

/// Observations and, when present, their labels.
pub type Table = (Vec<Vec<f64>>, Option<Vec<bool>>);

/// Reads every row; labels are kept only if all rows carry one.
pub fn read_all(path: &Path, labeled: bool) -> Result<Table> {
    let reader = RowReader::open(path, labeled)?;
    let has_labels = reader.labeled();
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    for row in reader {
        let row = row?;
        xs.push(row.x);
        if let Some(l) = row.label {
            labels.push(l);
        }
    }
    if xs.is_empty() {
        bail!("{}: no observations", path.display());
    }
    Ok((xs, has_labels.then_some(labels)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn header_with_label() {
        let f = file("x_1,x_2,label\n1,2,0\n3.5,-1e3,1\n");
        let (xs, labels) = read_all(f.path(), false).unwrap();
        assert_eq!(xs, vec![vec![1.0, 2.0], vec![3.5, -1000.0]]);
        assert_eq!(labels, Some(vec![false, true]));
    }

    #[test]
    fn headerless_unlabeled() {
        let f = file("1,2\n3,4\n\n");
        let (xs, labels) = read_all(f.path(), false).unwrap();
        assert_eq!(xs.len(), 2);
        assert_eq!(labels, None);
    }

    #[test]
    fn headerless_labeled_flag() {
        let f = file("1,2,1\n3,4,0\n");
        let (xs, labels) = read_all(f.path(), true).unwrap();
        assert_eq!(xs[1], vec![3.0, 4.0]);
        assert_eq!(labels, Some(vec![true, false]));
    }

    #[test]
    fn ragged_rows_rejected() {
        let f = file("1,2\n3\n");
        let err = read_all(f.path(), false).unwrap_err();
        assert!(format!("{err:#}").contains(":2:"), "{err:#}");
    }

    #[test]
    fn bad_number_names_line() {
        let f = file("a,b\n1,2\n1,x\n");
        let err = read_all(f.path(), false).unwrap_err();
        assert!(format!("{err:#}").contains(":3:"), "{err:#}");
    }
}
