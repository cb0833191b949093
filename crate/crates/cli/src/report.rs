use serde::Serialize;

use crate::args::Format;
use crate::{runtime, CliError};

/// A rectangular report rendered as CSV or a markdown table. JSON output
/// serializes the command's own report struct instead.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) {
        let row: Vec<String> = row.into_iter().map(Into::into).collect();
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(&self.headers).map_err(runtime)?;
        for row in &self.rows {
            writer.write_record(row).map_err(runtime)?;
        }
        let bytes = writer.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
        String::from_utf8(bytes).map_err(runtime)
    }

    pub fn to_markdown(&self) -> String {
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|c| {
                self.rows
                    .iter()
                    .map(|r| r[c].chars().count())
                    .chain([self.headers[c].chars().count(), 3])
                    .max()
                    .unwrap_or(3)
            })
            .collect();
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect();
            format!("| {} |\n", padded.join(" | "))
        };
        let mut out = line(&self.headers);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        out.push_str(&line(&rule));
        for row in &self.rows {
            out.push_str(&line(row));
        }
        out
    }
}

/// Renders `table` or, for JSON, `value` pretty-printed.
pub fn render<T: Serialize>(format: Format, table: &Table, value: &T) -> Result<String, CliError> {
    match format {
        Format::Csv => table.to_csv(),
        Format::Md => Ok(table.to_markdown()),
        Format::Json => {
            let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
            text.push('\n');
            Ok(text)
        }
    }
}

/// Fixed four-decimal rendering for report cells.
pub fn num(v: f64) -> String {
    format!("{v:.4}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "NA".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Table {
        let mut t = Table::new(["name", "value"]);
        t.push(["accuracy", "0.8000"]);
        t.push(["note", "a, b"]);
        t
    }

    #[test]
    fn csv_quotes_commas() {
        assert_eq!(table().to_csv().unwrap(), "name,value\naccuracy,0.8000\nnote,\"a, b\"\n");
    }

    #[test]
    fn markdown_columns_line_up() {
        let md = table().to_markdown();
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines[0], "| name     | value  |");
        assert_eq!(lines[1], "| -------- | ------ |");
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
    }

    #[test]
    fn missing_values_print_na() {
        assert_eq!(opt(None), "NA");
        assert_eq!(opt(Some(0.5)), "0.5000");
    }
}
