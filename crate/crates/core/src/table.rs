//! Reader for the numeric CSVs this crate writes.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("empty table")]
    Empty,
    #[error("line {line}: expected {expected} fields, got {got}")]
    Width {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: {value:?} is not a number")]
    Number { line: usize, value: String },
}

/// Header plus rows of numbers, all rows the header's width.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or(TableError::Empty)?
            .split(',')
            .map(|h| h.trim().to_string())
            .collect();
        let rows = lines
            .enumerate()
            .map(|(i, line)| {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != header.len() {
                    return Err(TableError::Width {
                        line: i + 2,
                        expected: header.len(),
                        got: fields.len(),
                    });
                }
                fields
                    .iter()
                    .map(|f| {
                        f.trim().parse::<f64>().map_err(|_| TableError::Number {
                            line: i + 2,
                            value: f.to_string(),
                        })
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<f64>>, _>>()?;
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// `(x, y)` pairs for two named columns.
    pub fn xy(&self, x: &str, y: &str) -> Option<Vec<(f64, f64)>> {
        Some(self.column(x)?.into_iter().zip(self.column(y)?).collect())
    }
}
