//! Long-format panel CSV: `unit,period,outcome[,cov_<name>...]`.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use synthpanel_core::{PanelDataset, Record};

use crate::error::{read_file, Result, Stage, StudyError};

pub const COVARIATE_PREFIX: &str = "cov_";
const REQUIRED: [&str; 3] = ["unit", "period", "outcome"];

pub fn parse_panel_csv(path: &Path) -> Result<Vec<Record>> {
    let bytes = read_file(Stage::Ingest, path)?;
    parse_panel_csv_bytes(&bytes).map_err(|e| StudyError { message: format!("{}: {}", path.display(), e.message), ..e })
}

fn invalid(message: String) -> StudyError {
    StudyError::validation(Stage::Ingest, message)
}

pub fn parse_panel_csv_bytes(data: &[u8]) -> Result<Vec<Record>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(data);
    let header = reader
        .headers()
        .map_err(|e| invalid(format!("unreadable header: {e}")))?
        .clone();

    let mut index = [usize::MAX; 3];
    let mut covariates = Vec::new();
    for (col, name) in header.iter().enumerate() {
        if let Some(pos) = REQUIRED.iter().position(|r| *r == name) {
            if index[pos] != usize::MAX {
                return Err(invalid(format!("line 1: column `{name}` appears twice")));
            }
            index[pos] = col;
        } else if let Some(cov) = name.strip_prefix(COVARIATE_PREFIX).filter(|c| !c.is_empty()) {
            covariates.push((col, cov.to_string()));
        } else {
            return Err(invalid(format!("line 1: unexpected column `{name}`")));
        }
    }
    for (pos, name) in REQUIRED.iter().enumerate() {
        if index[pos] == usize::MAX {
            return Err(invalid(format!("line 1: missing required column `{name}`")));
        }
    }
    let [unit_col, period_col, outcome_col] = index;

    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            invalid(format!("line {line}: malformed row: {e}"))
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |col: usize| row.get(col).unwrap_or("");
        let unit = field(unit_col);
        if unit.is_empty() {
            return Err(invalid(format!("line {line}: empty unit")));
        }
        let period: i32 = field(period_col)
            .parse()
            .map_err(|_| invalid(format!("line {line}: period `{}` is not an integer", field(period_col))))?;
        let number = |col: usize, what: &str| -> Result<f64> {
            let text = field(col);
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(invalid(format!("line {line}: {what} `{text}` is not a finite number"))),
            }
        };
        let mut record = Record::new(unit, period, number(outcome_col, "outcome")?);
        for (col, name) in &covariates {
            let v = number(*col, &format!("covariate {name}"))?;
            record = record.with_covariate(name.clone(), v);
        }
        if !seen.insert((unit.to_string(), period)) {
            return Err(invalid(format!("line {line}: duplicate cell ({unit}, {period})")));
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(invalid("no data rows".to_string()));
    }
    Ok(records)
}

/// Writes the panel in long format, units in panel order, periods ascending.
pub fn write_panel_csv<W: Write>(panel: &PanelDataset, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["unit".to_string(), "period".to_string(), "outcome".to_string()];
    header.extend(panel.covariates().keys().map(|k| format!("{COVARIATE_PREFIX}{k}")));
    w.write_record(&header)?;
    for record in panel.to_records() {
        let mut row = vec![record.unit.clone(), record.period.to_string(), record.outcome.to_string()];
        row.extend(record.covariates.values().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()
}

pub fn panel_to_csv_string(panel: &PanelDataset) -> String {
    let mut buf = Vec::new();
    write_panel_csv(panel, &mut buf).unwrap_or_else(|_| unreachable!("writing to memory"));
    String::from_utf8(buf).unwrap_or_else(|_| unreachable!("csv output is utf-8"))
}
