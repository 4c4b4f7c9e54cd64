//! Result tables on disk: CSV and JSON with six significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{CateError, Result};
use crate::metalearners::Learner;
use crate::metrics::{MetricsSummary, PredictionPanel};
use crate::splitting::ProcedureKind;

pub const CSV_COLUMNS: [&str; 18] = [
    "design",
    "learner",
    "procedure",
    "n_train",
    "replications",
    "rmse_mean",
    "abs_bias_mean",
    "bias_mean",
    "sd_mean",
    "skew_mean",
    "kurt_mean",
    "jb_mean",
    "jb_reject_share",
    "corr",
    "varr",
    "se_rmse",
    "runtime_s",
    "warnings",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = CateError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(CateError::invalid(format!("unknown output format `{other}`"))),
        }
    }
}

impl OutputFormat {
    /// Format implied by a file extension, CSV unless it ends in `.json`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => OutputFormat::Json,
            _ => OutputFormat::Csv,
        }
    }
}

/// Event counters of one cell.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warnings {
    /// Replications redrawn because this cell hit an extreme or degenerate
    /// estimated propensity.
    pub propensity_redraws: usize,
    /// Whole-sample redraws made by the design's treated-share guard.
    pub dgp_redraws: usize,
    pub oob_fallbacks: usize,
    /// Why the cell was aborted, if it was.
    pub error: Option<String>,
}

impl Warnings {
    /// `key=value` pairs joined by `;`, zero counters omitted, error last.
    pub fn encode(&self) -> String {
        let mut parts = Vec::new();
        for (key, v) in [
            ("propensity_redraws", self.propensity_redraws),
            ("dgp_redraws", self.dgp_redraws),
            ("oob_fallbacks", self.oob_fallbacks),
        ] {
            if v > 0 {
                parts.push(format!("{key}={v}"));
            }
        }
        if let Some(e) = &self.error {
            parts.push(format!("error={e}"));
        }
        parts.join(";")
    }

    pub fn decode(text: &str) -> Result<Self> {
        let mut out = Warnings::default();
        let mut rest = text;
        while !rest.is_empty() {
            if let Some(msg) = rest.strip_prefix("error=") {
                out.error = Some(msg.to_string());
                break;
            }
            let (item, tail) = rest.split_once(';').unwrap_or((rest, ""));
            rest = tail;
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| CateError::invalid(format!("malformed warning `{item}`")))?;
            let value: usize = value
                .parse()
                .map_err(|_| CateError::invalid(format!("malformed warning `{item}`")))?;
            match key {
                "propensity_redraws" => out.propensity_redraws = value,
                "dgp_redraws" => out.dgp_redraws = value,
                "oob_fallbacks" => out.oob_fallbacks = value,
                other => return Err(CateError::invalid(format!("unknown warning `{other}`"))),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub design: String,
    pub learner: Learner,
    pub procedure: ProcedureKind,
    pub n_train: usize,
    pub replications: usize,
    /// Absent for aborted cells.
    pub summary: Option<MetricsSummary>,
    pub runtime_s: Option<f64>,
    pub warnings: Warnings,
}

impl ResultRow {
    pub fn cell(&self) -> String {
        if self.learner.uses_full_sample_only() {
            self.learner.label().to_string()
        } else {
            format!("{}-{}", self.learner, self.procedure.suffix())
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn find(&self, learner: Learner, procedure: ProcedureKind, n_train: usize) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.learner == learner && r.procedure == procedure && r.n_train == n_train)
    }

    pub fn aborted(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.warnings.error.is_some())
    }
}

/// `%g`-style rendering with six significant digits.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    strip_zeros(&format!("{v:.decimals$}")).to_string()
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `v` rounded to six significant digits.
pub fn round_sig6(v: f64) -> f64 {
    format_sig6(v).parse().unwrap_or(v)
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(format_sig6).unwrap_or_default()
}

fn summary_cells(s: Option<&MetricsSummary>) -> [Option<f64>; 11] {
    match s {
        None => [None; 11],
        Some(s) => [
            Some(s.rmse_mean),
            Some(s.abs_bias_mean),
            Some(s.bias_mean),
            Some(s.sd_mean),
            Some(s.skew_mean),
            Some(s.kurt_mean),
            Some(s.jb_mean),
            Some(s.jb_reject_share),
            s.corr,
            s.varr,
            Some(s.se_rmse),
        ],
    }
}

pub fn results_to_csv(table: &ResultTable) -> String {
    let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
    wtr.write_record(CSV_COLUMNS).expect("in-memory write");
    for row in &table.rows {
        let mut record = vec![
            row.design.clone(),
            row.learner.label().to_string(),
            row.procedure.label().to_string(),
            row.n_train.to_string(),
            row.replications.to_string(),
        ];
        record.extend(summary_cells(row.summary.as_ref()).iter().map(|v| opt_cell(*v)));
        record.push(opt_cell(row.runtime_s));
        record.push(row.warnings.encode());
        wtr.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

pub fn results_to_json(table: &ResultTable) -> String {
    let rows: Vec<Value> = table
        .rows
        .iter()
        .map(|row| {
            let mut obj = Map::new();
            obj.insert("design".into(), json!(row.design));
            obj.insert("learner".into(), json!(row.learner.label()));
            obj.insert("procedure".into(), json!(row.procedure.label()));
            obj.insert("n_train".into(), json!(row.n_train));
            obj.insert("replications".into(), json!(row.replications));
            for (name, v) in CSV_COLUMNS[5..16].iter().zip(summary_cells(row.summary.as_ref())) {
                obj.insert((*name).into(), json!(v.map(round_sig6)));
            }
            obj.insert("runtime_s".into(), json!(row.runtime_s.map(round_sig6)));
            obj.insert("warnings".into(), json!(row.warnings.encode()));
            Value::Object(obj)
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&Value::Array(rows)).expect("json values serialize");
    text.push('\n');
    text
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| CateError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CateError::io(path, e))
}

pub fn write_results(table: &ResultTable, path: &Path, format: OutputFormat) -> Result<()> {
    let text = match format {
        OutputFormat::Csv => results_to_csv(table),
        OutputFormat::Json => results_to_json(table),
    };
    write_text(path, &text)
}

struct RawRow {
    fields: Vec<Option<String>>,
}

fn parse_opt(path: &Path, column: &str, raw: Option<&str>, row: usize) -> Result<Option<f64>> {
    match raw {
        None | Some("") => Ok(None),
        Some(s) => s.parse::<f64>().map(Some).map_err(|_| CateError::ParseError {
            row,
            column: column.to_string(),
            value: format!("{s} in {}", path.display()),
        }),
    }
}

fn row_from_raw(path: &Path, raw: RawRow, row: usize) -> Result<ResultRow> {
    let get = |k: usize| raw.fields[k].as_deref();
    let text = |k: usize| -> Result<&str> {
        get(k).ok_or_else(|| CateError::SchemaError {
            column: CSV_COLUMNS[k].to_string(),
            path: path.display().to_string(),
        })
    };
    let count = |k: usize| -> Result<usize> {
        let s = text(k)?;
        s.parse().map_err(|_| CateError::ParseError {
            row,
            column: CSV_COLUMNS[k].to_string(),
            value: s.to_string(),
        })
    };
    let mut values = [None; 12];
    for (slot, k) in (5..17).enumerate() {
        values[slot] = parse_opt(path, CSV_COLUMNS[k], get(k), row)?;
    }
    let replications = count(4)?;
    let summary = match (values[0], values[1], values[2], values[3]) {
        (Some(rmse), Some(abs), Some(bias), Some(sd)) => Some(MetricsSummary {
            rmse_mean: rmse,
            abs_bias_mean: abs,
            bias_mean: bias,
            sd_mean: sd,
            skew_mean: values[4].unwrap_or(f64::NAN),
            kurt_mean: values[5].unwrap_or(f64::NAN),
            jb_mean: values[6].unwrap_or(f64::NAN),
            jb_reject_share: values[7].unwrap_or(f64::NAN),
            corr: values[8],
            varr: values[9],
            se_rmse: values[10].unwrap_or(f64::NAN),
            replications,
            points: 0,
            degenerate_points: 0,
            constant_replications: 0,
        }),
        _ => None,
    };
    Ok(ResultRow {
        design: text(0)?.to_string(),
        learner: text(1)?.parse()?,
        procedure: text(2)?.parse()?,
        n_train: count(3)?,
        replications,
        summary,
        runtime_s: values[11],
        warnings: Warnings::decode(get(17).unwrap_or(""))?,
    })
}

/// Reads a table written by [`write_results`]. Fields that are not written
/// (validation point counts) come back as zero.
pub fn read_results(path: &Path) -> Result<ResultTable> {
    let text = std::fs::read_to_string(path).map_err(|e| CateError::io(path, e))?;
    let raws: Vec<RawRow> = match OutputFormat::from_path(path) {
        OutputFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(text.as_bytes());
            let headers = rdr
                .headers()
                .map_err(|e| CateError::Format {
                    path: path.to_path_buf(),
                    reason: e.to_string(),
                })?
                .clone();
            let index: Vec<Option<usize>> = CSV_COLUMNS
                .iter()
                .map(|c| headers.iter().position(|h| h == *c))
                .collect();
            let mut out = Vec::new();
            for record in rdr.records() {
                let record = record.map_err(|e| CateError::Format {
                    path: path.to_path_buf(),
                    reason: e.to_string(),
                })?;
                out.push(RawRow {
                    fields: index
                        .iter()
                        .map(|k| k.and_then(|k| record.get(k)).map(str::to_string))
                        .collect(),
                });
            }
            out
        }
        OutputFormat::Json => {
            let value: Value = serde_json::from_str(&text).map_err(|e| CateError::Format {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
            let rows = value.as_array().ok_or_else(|| CateError::Format {
                path: path.to_path_buf(),
                reason: "expected a JSON array of rows".into(),
            })?;
            rows.iter()
                .map(|row| RawRow {
                    fields: CSV_COLUMNS
                        .iter()
                        .map(|c| match row.get(*c) {
                            None | Some(Value::Null) => None,
                            Some(Value::String(s)) => Some(s.clone()),
                            Some(other) => Some(other.to_string()),
                        })
                        .collect(),
                })
                .collect()
        }
    };
    let rows = raws
        .into_iter()
        .enumerate()
        .map(|(i, raw)| row_from_raw(path, raw, i + 1))
        .collect::<Result<Vec<_>>>()?;
    Ok(ResultTable { rows })
}

/// Prediction panel of one cell, as saved for later re-analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedPanel {
    pub design: String,
    pub learner: Learner,
    pub procedure: ProcedureKind,
    pub n_train: usize,
    pub panel: PredictionPanel,
}

pub fn write_panels(panels: &[SavedPanel], path: &Path) -> Result<()> {
    let text = serde_json::to_string(panels).map_err(|e| CateError::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    write_text(path, &text)
}

pub fn read_panels(path: &Path) -> Result<Vec<SavedPanel>> {
    let text = std::fs::read_to_string(path).map_err(|e| CateError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CateError::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Long-format rows `design,learner,procedure,cell,n_train,metric,value`,
/// one per metric and cell, for plotting summaries against `n_train`.
pub fn plot_data_csv(table: &ResultTable) -> String {
    let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
    wtr.write_record(["design", "learner", "procedure", "cell", "n_train", "metric", "value"])
        .expect("in-memory write");
    let mut rows: Vec<&ResultRow> = table.rows.iter().collect();
    rows.sort_by(|a, b| {
        (&a.design, a.learner, a.procedure, a.n_train).cmp(&(&b.design, b.learner, b.procedure, b.n_train))
    });
    for row in rows {
        for (metric, v) in CSV_COLUMNS[5..16].iter().zip(summary_cells(row.summary.as_ref())) {
            let Some(v) = v else { continue };
            wtr.write_record([
                row.design.as_str(),
                row.learner.label(),
                row.procedure.label(),
                &row.cell(),
                &row.n_train.to_string(),
                metric,
                &format_sig6(v),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

pub fn write_plot_data(table: &ResultTable, path: &Path) -> Result<()> {
    write_text(path, &plot_data_csv(table))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_matches_printf_g() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (0.1, "0.1"),
            (1.234_567_89, "1.23457"),
            (-0.000_123_456_7, "-0.000123457"),
            (0.000_012_345_67, "1.23457e-05"),
            (123_456.7, "123457"),
            (999_999.5, "1e+06"),
            (1.0e10, "1e+10"),
            (0.634, "0.634"),
            (20.833_333_333, "20.8333"),
        ];
        for (v, s) in cases {
            assert_eq!(format_sig6(v), s, "{v}");
        }
    }

    #[test]
    fn warnings_round_trip() {
        let w = Warnings {
            propensity_redraws: 2,
            dgp_redraws: 0,
            oob_fallbacks: 7,
            error: Some("fold 2 is too small; a=b".into()),
        };
        assert_eq!(Warnings::decode(&w.encode()).unwrap(), w);
        assert_eq!(Warnings::decode("").unwrap(), Warnings::default());
    }

    #[test]
    fn empty_table_is_header_only() {
        let csv = results_to_csv(&ResultTable::default());
        assert_eq!(csv, format!("{}\n", CSV_COLUMNS.join(",")));
    }
}
