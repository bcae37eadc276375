//! Region-by-year panels of positive observations.

use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanelError {
    #[error("panel must have at least one region and one year")]
    Empty,
    #[error("row {row} has {actual} values, expected {expected}")]
    Ragged { row: usize, expected: usize, actual: usize },
    #[error("value at region `{region}`, year {year} must be positive and finite, got {value}")]
    NonPositive { region: String, year: i32, value: f64 },
    #[error("duplicate region label `{0}`")]
    DuplicateLabel(String),
    #[error("panel csv: {0}")]
    Parse(String),
}

/// `n × T` panel; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalPanel {
    labels: Vec<String>,
    years: Vec<i32>,
    /// Row-major, `values[i * T + t]`.
    values: Vec<Option<f64>>,
}

impl RegionalPanel {
    pub fn new(labels: Vec<String>, years: Vec<i32>, rows: Vec<Vec<Option<f64>>>) -> Result<Self, PanelError> {
        if labels.is_empty() || years.is_empty() {
            return Err(PanelError::Empty);
        }
        if rows.len() != labels.len() {
            return Err(PanelError::Ragged { row: rows.len(), expected: labels.len(), actual: rows.len() });
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(PanelError::DuplicateLabel(l.clone()));
            }
        }
        let t_len = years.len();
        let mut values = Vec::with_capacity(labels.len() * t_len);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != t_len {
                return Err(PanelError::Ragged { row: i + 1, expected: t_len, actual: row.len() });
            }
            for (t, v) in row.into_iter().enumerate() {
                if let Some(x) = v {
                    if !(x > 0.0) || !x.is_finite() {
                        return Err(PanelError::NonPositive { region: labels[i].clone(), year: years[t], value: x });
                    }
                }
                values.push(v);
            }
        }
        Ok(Self { labels, years, values })
    }

    /// Complete panel from row vectors with generic labels `r1..rn` and years `1..=T`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, PanelError> {
        let n = rows.len();
        let t_len = rows.first().map_or(0, Vec::len);
        let labels = (1..=n).map(|i| format!("r{i}")).collect();
        let years = (1..=t_len as i32).collect();
        Self::new(labels, years, rows.into_iter().map(|r| r.into_iter().map(Some).collect()).collect())
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn t_len(&self) -> usize {
        self.years.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn get(&self, i: usize, t: usize) -> Option<f64> {
        self.values[i * self.t_len() + t]
    }

    pub fn series(&self, i: usize) -> &[Option<f64>] {
        let t_len = self.t_len();
        &self.values[i * t_len..(i + 1) * t_len]
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    pub fn observed_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Missing cells as `(region, year-index)`, ordered by year then region.
    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for t in 0..self.t_len() {
            for i in 0..self.n() {
                if self.get(i, t).is_none() {
                    cells.push((i, t));
                }
            }
        }
        cells
    }

    /// Copy with the given cells deleted.
    pub fn with_missing(&self, cells: &[(usize, usize)]) -> Self {
        let mut out = self.clone();
        let t_len = self.t_len();
        for &(i, t) in cells {
            out.values[i * t_len + t] = None;
        }
        out
    }

    /// Reads the wide layout: header `region,<year>,...`, one row per region,
    /// empty cells missing.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, PanelError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| PanelError::Parse(e.to_string()))?.clone();
        if headers.len() < 2 || &headers[0] != "region" {
            return Err(PanelError::Parse("expected header `region,<year>,...`".into()));
        }
        let years = headers
            .iter()
            .skip(1)
            .map(|h| h.parse::<i32>().map_err(|_| PanelError::Parse(format!("`{h}` is not a year"))))
            .collect::<Result<Vec<_>, _>>()?;
        let mut labels = Vec::new();
        let mut rows = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| PanelError::Parse(e.to_string()))?;
            let label = record[0].to_string();
            let mut row = Vec::with_capacity(years.len());
            for (k, cell) in record.iter().skip(1).enumerate() {
                if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                    row.push(None);
                } else {
                    let v = cell.parse::<f64>().map_err(|_| {
                        PanelError::Parse(format!(
                            "row {}, year {}: `{cell}` is not a number",
                            line + 2,
                            years.get(k).copied().unwrap_or_default()
                        ))
                    })?;
                    row.push(Some(v));
                }
            }
            labels.push(label);
            rows.push(row);
        }
        Self::new(labels, years, rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["region".to_string()];
        header.extend(self.years.iter().map(|y| y.to_string()));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![self.labels[i].clone()];
            rec.extend(self.series(i).iter().map(|v| v.map(|x| format!("{x:?}")).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
