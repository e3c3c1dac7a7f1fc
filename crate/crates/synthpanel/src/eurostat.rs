//! Eurostat bulk-download TSV.
//!
//! ```text
//! freq,unit,geo\TIME_PERIOD<TAB>2015 <TAB>2016 ...
//! A,THS_PAS,AT<TAB>248917 <TAB>251003 p ...
//! ```
//!
//! The first column is a comma-separated dimension key, the remaining
//! columns are yearly values. A value may carry flag letters after a space
//! (`123.4 p`), and `:` marks a missing value (possibly flagged, `: c`).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use synthpanel_core::Record;

use crate::error::{read_file, Result, Stage, StudyError};

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub value: Option<f64>,
    pub flags: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    /// Dimension values in header order.
    pub key: Vec<String>,
    pub cells: Vec<Cell>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub dimensions: Vec<String>,
    pub periods: Vec<i32>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn dimension_index(&self, name: &str) -> Option<usize> {
        self.dimensions.iter().position(|d| d == name)
    }

    /// Looks up a single cell by its full key and period.
    pub fn cell(&self, key: &[&str], period: i32) -> Option<&Cell> {
        let col = self.periods.iter().position(|&p| p == period)?;
        self.rows
            .iter()
            .find(|r| r.key.iter().map(String::as_str).eq(key.iter().copied()))
            .map(|r| &r.cells[col])
    }
}

fn invalid(line: usize, message: impl std::fmt::Display) -> StudyError {
    StudyError::validation(Stage::Ingest, format!("line {line}: {message}"))
}

pub fn parse_cell(text: &str) -> std::result::Result<Cell, String> {
    let text = text.trim();
    if let Some(rest) = text.strip_prefix(':') {
        return Ok(Cell { value: None, flags: rest.trim().to_string() });
    }
    let (number, flags) = match text.split_once(char::is_whitespace) {
        Some((n, f)) => (n, f.trim()),
        None => {
            let split = text.trim_end_matches(|c: char| c.is_ascii_alphabetic()).len();
            (&text[..split], &text[split..])
        }
    };
    if !flags.chars().all(|c| c.is_ascii_alphabetic() || c.is_whitespace()) {
        return Err(format!("bad flags in `{text}`"));
    }
    match number.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Cell {
            value: Some(v),
            flags: flags.split_whitespace().collect(),
        }),
        _ => Err(format!("unparseable value `{text}`")),
    }
}

pub fn parse_eurostat_tsv(path: &Path) -> Result<Table> {
    let bytes = read_file(Stage::Ingest, path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| StudyError::validation(Stage::Ingest, format!("{}: not UTF-8: {e}", path.display())))?;
    parse_eurostat_str(text).map_err(|e| StudyError { message: format!("{}: {}", path.display(), e.message), ..e })
}

pub fn parse_eurostat_str(text: &str) -> Result<Table> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (_, header) = lines.next().ok_or_else(|| invalid(1, "empty file"))?;
    let mut columns = header.split('\t');
    let key_header = columns.next().unwrap_or_default();
    let (dims, _time) = key_header
        .split_once('\\')
        .ok_or_else(|| invalid(1, format!("dimension header `{key_header}` lacks `\\TIME_PERIOD`")))?;
    let dimensions: Vec<String> = dims.split(',').map(|d| d.trim().to_string()).collect();
    if dimensions.iter().any(String::is_empty) {
        return Err(invalid(1, format!("empty dimension name in `{key_header}`")));
    }
    let periods = columns
        .map(|c| c.trim().parse::<i32>().map_err(|_| invalid(1, format!("period `{}` is not a year", c.trim()))))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (line, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let mut fields = raw.split('\t');
        let key_text = fields.next().unwrap_or_default();
        let key: Vec<String> = key_text.split(',').map(|k| k.trim().to_string()).collect();
        if key.len() != dimensions.len() || key.iter().any(String::is_empty) {
            return Err(invalid(
                line,
                format!("unparseable dimension key `{key_text}` (expected {} parts)", dimensions.len()),
            ));
        }
        let cells = fields
            .map(|f| parse_cell(f).map_err(|m| invalid(line, m)))
            .collect::<Result<Vec<_>>>()?;
        if cells.len() != periods.len() {
            return Err(invalid(line, format!("{} values for {} periods", cells.len(), periods.len())));
        }
        rows.push(Row { key, cells, line });
    }
    Ok(Table { dimensions, periods, rows })
}

fn default_geo() -> String {
    "geo".to_string()
}

/// Which series to keep and how to balance them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EurostatFilter {
    /// Fixed dimension values, e.g. `unit = "THS_PAS"`.
    #[serde(default)]
    pub dimensions: BTreeMap<String, String>,
    #[serde(default = "default_geo")]
    pub geo_dimension: String,
    pub start: i32,
    pub end: i32,
    /// Keep a country only if every year in the window exceeds this.
    #[serde(default)]
    pub min_value: Option<f64>,
    /// Drop aggregates such as `EU27_2020`; countries have two-letter codes.
    #[serde(default = "yes")]
    pub countries_only: bool,
    #[serde(default)]
    pub exclude: Vec<String>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub records: Vec<Record>,
    /// (geo, reason) for every series that did not make it.
    pub dropped: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

fn is_country_code(geo: &str) -> bool {
    geo.len() == 2 && geo.chars().all(|c| c.is_ascii_uppercase())
}

pub fn select(table: &Table, filter: &EurostatFilter) -> Result<Selection> {
    let bad = |m: String| StudyError::validation(Stage::Ingest, m);
    if filter.start > filter.end {
        return Err(bad(format!("window {}..{} is empty", filter.start, filter.end)));
    }
    let geo = table
        .dimension_index(&filter.geo_dimension)
        .ok_or_else(|| bad(format!("no `{}` dimension in table", filter.geo_dimension)))?;
    let mut fixed = Vec::new();
    for (name, value) in &filter.dimensions {
        let idx = table.dimension_index(name).ok_or_else(|| bad(format!("no `{name}` dimension in table")))?;
        fixed.push((idx, value.as_str()));
    }
    let window: Vec<usize> = (0..table.periods.len())
        .filter(|&c| (filter.start..=filter.end).contains(&table.periods[c]))
        .collect();
    for year in filter.start..=filter.end {
        if !table.periods.contains(&year) {
            return Err(bad(format!("year {year} is not in the table")));
        }
    }

    let mut by_geo: BTreeMap<&str, &Row> = BTreeMap::new();
    for row in &table.rows {
        if !fixed.iter().all(|&(i, v)| row.key[i] == v) {
            continue;
        }
        if let Some(prev) = by_geo.insert(row.key[geo].as_str(), row) {
            return Err(bad(format!(
                "filter is ambiguous: `{}` matches lines {} and {}",
                row.key[geo], prev.line, row.line
            )));
        }
    }

    let mut out = Selection { records: Vec::new(), dropped: Vec::new(), warnings: Vec::new() };
    let reject = |out: &mut Selection, g: &str, reason: String| {
        out.warnings.push(format!("eurostat: dropped {g}: {reason}"));
        out.dropped.push((g.to_string(), reason));
    };
    for (g, row) in by_geo {
        if filter.countries_only && !is_country_code(g) {
            continue;
        }
        if filter.exclude.iter().any(|e| e == g) {
            reject(&mut out, g, "excluded by configuration".to_string());
            continue;
        }
        let missing: Vec<i32> = window.iter().filter(|&&c| row.cells[c].value.is_none()).map(|&c| table.periods[c]).collect();
        if !missing.is_empty() {
            let years: Vec<String> = missing.iter().map(i32::to_string).collect();
            reject(&mut out, g, format!("missing values in {}", years.join(", ")));
            continue;
        }
        if let Some(min) = filter.min_value {
            let low: Vec<String> = window
                .iter()
                .filter(|&&c| row.cells[c].value.is_some_and(|v| v <= min))
                .map(|&c| table.periods[c].to_string())
                .collect();
            if !low.is_empty() {
                reject(&mut out, g, format!("not above {min} in {}", low.join(", ")));
                continue;
            }
        }
        for &c in &window {
            if let Some(v) = row.cells[c].value {
                out.records.push(Record::new(g, table.periods[c], v));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "freq,unit,geo\\TIME_PERIOD\t2015 \t2016 \t2017 \n\
A,THS_PAS,AT\t100.0 \t110.5 p\t120 \n\
A,THS_PAS,BE\t: \t200 \t210 e\n\
A,THS_PAS,CH\t5 \t6 \t7 \n\
A,THS_PAS,EU27_2020\t1000 \t1100 \t1200 \n\
A,MIO_PKM,AT\t9 \t9 \t9 \n";

    #[test]
    fn cells() {
        assert_eq!(parse_cell("12345.0 p").unwrap(), Cell { value: Some(12345.0), flags: "p".into() });
        assert_eq!(parse_cell(":").unwrap(), Cell { value: None, flags: String::new() });
        assert_eq!(parse_cell(": c").unwrap(), Cell { value: None, flags: "c".into() });
        assert_eq!(parse_cell("7 ").unwrap(), Cell { value: Some(7.0), flags: String::new() });
        assert_eq!(parse_cell("7.5bep").unwrap(), Cell { value: Some(7.5), flags: "bep".into() });
        assert!(parse_cell("abc").is_err());
    }

    #[test]
    fn parses_table() {
        let t = parse_eurostat_str(SAMPLE).unwrap();
        assert_eq!(t.dimensions, ["freq", "unit", "geo"]);
        assert_eq!(t.periods, [2015, 2016, 2017]);
        assert_eq!(t.rows.len(), 5);
        assert_eq!(t.cell(&["A", "THS_PAS", "AT"], 2016).unwrap().value, Some(110.5));
        assert_eq!(t.cell(&["A", "THS_PAS", "AT"], 2016).unwrap().flags, "p");
    }

    #[test]
    fn bad_key_reports_line() {
        let text = "freq,unit,geo\\TIME_PERIOD\t2015 \nA,THS_PAS\t1 \n";
        let err = parse_eurostat_str(text).unwrap_err();
        assert!(err.message.starts_with("line 2: unparseable dimension key"), "{}", err.message);
    }

    #[test]
    fn selection_balances_and_filters() {
        let t = parse_eurostat_str(SAMPLE).unwrap();
        let filter = EurostatFilter {
            dimensions: BTreeMap::from([("unit".to_string(), "THS_PAS".to_string())]),
            geo_dimension: "geo".into(),
            start: 2015,
            end: 2017,
            min_value: Some(10.0),
            countries_only: true,
            exclude: vec![],
        };
        let s = select(&t, &filter).unwrap();
        let geos: Vec<&str> = s.records.iter().map(|r| r.unit.as_str()).collect();
        assert_eq!(geos, ["AT", "AT", "AT"]);
        assert_eq!(s.dropped.len(), 2);
        assert!(s.warnings[0].contains("BE") && s.warnings[0].contains("2015"));
        assert!(s.warnings[1].contains("CH"));

        let narrow = EurostatFilter { start: 2016, min_value: None, ..filter.clone() };
        let s = select(&t, &narrow).unwrap();
        assert_eq!(s.records.len(), 6);

        let ambiguous = EurostatFilter { dimensions: BTreeMap::new(), ..filter };
        assert!(select(&t, &ambiguous).unwrap_err().message.contains("ambiguous"));
    }
}
