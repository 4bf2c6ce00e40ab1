//! CSV ingestion and report emission.
//!
//! Data files are written at full precision. Reports in CSV use six
//! significant digits unless asked otherwise; JSON always carries full
//! precision with keys in sorted order.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::neurosim::SimTrace;
use crate::scalar::Scalar;
use crate::separability::{SeparabilityTable, TableBlock};

/// Significant digits used for CSV reports by default.
pub const CSV_DIGITS: usize = 6;

/// Which column of a data file carries class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    /// Zero-based position.
    Index(usize),
    /// Header name; needs a header row.
    Name(String),
    Last,
}

impl FromStr for LabelColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::InvalidParameter("empty label column".into()));
        }
        if s == "last" {
            return Ok(LabelColumn::Last);
        }
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    /// CSV rounded to the given significant digits; `None` keeps full precision.
    Csv(Option<usize>),
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv(Some(CSV_DIGITS))),
            other => Err(Error::InvalidParameter(format!(
                "unknown format {other:?}, expected json or csv"
            ))),
        }
    }
}

/// Reads a rectangular numeric CSV file.
pub fn ingest_csv<T: Scalar>(
    path: &Path,
    has_header: bool,
    label_column: Option<&LabelColumn>,
) -> Result<PointCloud<T>> {
    read_csv(File::open(path)?, has_header, label_column)
}

/// Reads a point cloud from CSV text. Lines are counted from 1, columns from 1.
pub fn read_csv<T: Scalar, R: Read>(
    reader: R,
    has_header: bool,
    label_column: Option<&LabelColumn>,
) -> Result<PointCloud<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header_label = match (label_column, has_header) {
        (Some(LabelColumn::Name(name)), true) => {
            let headers = rdr.headers().map_err(csv_error)?;
            Some(headers.iter().position(|h| h == name).ok_or_else(|| {
                Error::InvalidInput(format!("no column named {name:?} in the header"))
            })?)
        }
        (Some(LabelColumn::Name(_)), false) => {
            return Err(Error::InvalidParameter(
                "a label column given by name needs a header row".into(),
            ))
        }
        _ => None,
    };

    let mut width: Option<usize> = None;
    let mut values: Vec<T> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    line,
                    column: None,
                    message: format!("expected {w} fields, found {}", record.len()),
                })
            }
            _ => {}
        }
        let label_at = match label_column {
            None => None,
            Some(LabelColumn::Index(i)) => {
                if *i >= record.len() {
                    return Err(Error::InvalidParameter(format!(
                        "label column {i} is beyond the {} columns of the file",
                        record.len()
                    )));
                }
                Some(*i)
            }
            Some(LabelColumn::Last) => Some(record.len() - 1),
            Some(LabelColumn::Name(_)) => header_label,
        };
        for (col, cell) in record.iter().enumerate() {
            if Some(col) == label_at {
                labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                column: Some(col + 1),
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: Some(col + 1),
                    message: format!("non-finite value {cell:?}"),
                });
            }
            values.push(T::of(v));
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::InvalidInput("no data rows".into()))?;
    let dim = width - usize::from(label_column.is_some());
    if dim == 0 {
        return Err(Error::InvalidInput("no numeric columns".into()));
    }
    let cloud = PointCloud::from_row_slice(rows, dim, &values)?;
    if label_column.is_some() {
        cloud.with_labels(labels)
    } else {
        Ok(cloud)
    }
}

/// One label per line, taken from the first field.
pub fn read_labels<R: Read>(reader: R, has_header: bool) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        match record.get(0) {
            Some(l) if !l.is_empty() => labels.push(l.to_string()),
            _ => {
                return Err(Error::Parse {
                    line: record.position().map_or(0, |p| p.line()),
                    column: Some(1),
                    message: "empty label".into(),
                })
            }
        }
    }
    Ok(labels)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        column: None,
        message: e.to_string(),
    }
}

/// Writes one point per row at full precision; labels, if any, go last.
/// The optional header names columns `c0..c{n-1}` and `label`.
pub fn write_csv<T: Scalar, W: Write>(cloud: &PointCloud<T>, writer: W, header: bool) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_writer(writer);
    let labels = cloud.labels();
    if header {
        let mut names: Vec<String> = (0..cloud.dim()).map(|i| format!("c{i}")).collect();
        if labels.is_some() {
            names.push("label".into());
        }
        wtr.write_record(&names).map_err(csv_write_error)?;
    }
    for (i, row) in cloud.rows().enumerate() {
        let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(l) = labels {
            fields.push(l[i].clone());
        }
        wtr.write_record(&fields).map_err(csv_write_error)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_write_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidInput(format!("{other:?}")),
    }
}

/// Formats `v` with `digits` significant digits, dropping trailing zeros.
pub fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let digits = digits.max(1);
    let exp = v.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        let s = format!("{v:.prec$e}", prec = digits - 1);
        match s.split_once('e') {
            Some((mantissa, e)) => format!("{}e{e}", trim_zeros(mantissa.to_string())),
            None => s,
        }
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn format_number(v: f64, digits: Option<usize>) -> String {
    match digits {
        Some(d) => format_significant(v, d),
        None => v.to_string(),
    }
}

/// Serializes with keys in sorted order, full precision.
pub fn to_canonical_json<S: Serialize>(report: &S) -> Result<Vec<u8>> {
    // serde_json's Map keeps keys sorted, so a trip through Value canonicalizes
    let value = serde_json::to_value(report)?;
    let mut out = serde_json::to_vec_pretty(&value)?;
    out.push(b'\n');
    Ok(out)
}

/// Emits a serializable report. In CSV, nested fields are flattened into
/// dotted column names and a top-level array becomes one row per element.
pub fn emit_report<S: Serialize>(report: &S, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => to_canonical_json(report),
        ReportFormat::Csv(digits) => {
            let value = serde_json::to_value(report)?;
            let rows: Vec<Value> = match value {
                Value::Array(items) => items,
                other => vec![other],
            };
            let flat: Vec<Vec<(String, String)>> = rows
                .iter()
                .map(|row| {
                    let mut cells = Vec::new();
                    flatten("", row, digits, &mut cells);
                    cells
                })
                .collect();
            let mut columns: Vec<String> = Vec::new();
            for row in &flat {
                for (k, _) in row {
                    if !columns.contains(k) {
                        columns.push(k.clone());
                    }
                }
            }
            let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
            wtr.write_record(&columns).map_err(csv_write_error)?;
            for row in &flat {
                let record: Vec<&str> = columns
                    .iter()
                    .map(|c| row.iter().find(|(k, _)| k == c).map_or("", |(_, v)| v.as_str()))
                    .collect();
                wtr.write_record(&record).map_err(csv_write_error)?;
            }
            wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
        }
    }
}

fn flatten(prefix: &str, value: &Value, digits: Option<usize>, out: &mut Vec<(String, String)>) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(&key(k), v, digits, out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&key(&i.to_string()), v, digits, out);
            }
        }
        Value::Number(n) => {
            let text = match (n.as_i64(), n.as_u64(), n.as_f64()) {
                (Some(i), _, _) => i.to_string(),
                (_, Some(u), _) => u.to_string(),
                (_, _, Some(f)) => format_number(f, digits),
                _ => n.to_string(),
            };
            out.push((prefix.to_string(), text));
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Bool(b) => out.push((prefix.to_string(), b.to_string())),
        Value::Null => out.push((prefix.to_string(), String::new())),
    }
}

/// Thresholds as columns, three statistic rows per block.
pub fn table_csv(table: &SeparabilityTable, digits: Option<usize>) -> Result<Vec<u8>> {
    let mut wtr = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    let mut header = vec!["block".to_string(), "statistic".to_string()];
    header.extend(table.alphas.iter().map(|a| format!("alpha={a}")));
    wtr.write_record(&header).map_err(csv_write_error)?;
    for block in &table.blocks {
        let rows: [(&str, Vec<String>); 3] = [
            ("N_alpha", block.n_alpha.iter().map(|v| v.to_string()).collect()),
            ("nu_alpha", block.nu_alpha.iter().map(|v| format_number(*v, digits)).collect()),
            ("p_bar", block.p_bar.iter().map(|v| format_number(*v, digits)).collect()),
        ];
        for (name, cells) in rows {
            let mut record = vec![block.title.clone(), name.to_string()];
            record.extend(cells);
            wtr.write_record(&record).map_err(csv_write_error)?;
        }
    }
    wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Emits a separability table as JSON or in the threshold-column CSV layout.
pub fn emit_table(table: &SeparabilityTable, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => to_canonical_json(table),
        ReportFormat::Csv(digits) => table_csv(table, digits),
    }
}

/// Reads back the CSV table layout; point count and dimension are not part of it.
pub fn parse_table_csv(text: &str) -> Result<(Vec<f64>, Vec<TableBlock>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(csv_error)?.clone();
    let alphas = header
        .iter()
        .skip(2)
        .map(|h| {
            h.strip_prefix("alpha=")
                .and_then(|a| a.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: 1,
                    column: None,
                    message: format!("bad threshold column {h:?}"),
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut blocks: Vec<TableBlock> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let title = record.get(0).unwrap_or_default().to_string();
        if blocks.last().map(|b| &b.title) != Some(&title) {
            blocks.push(TableBlock {
                title: title.clone(),
                n_alpha: Vec::new(),
                nu_alpha: Vec::new(),
                p_bar: Vec::new(),
            });
        }
        let block = blocks.last_mut().expect("just pushed");
        let number = |(i, cell): (usize, &str)| {
            cell.parse::<f64>().map_err(|_| Error::Parse {
                line,
                column: Some(i + 3),
                message: format!("not a number: {cell:?}"),
            })
        };
        let cells: Vec<f64> = record.iter().skip(2).enumerate().map(number).collect::<Result<_>>()?;
        match record.get(1) {
            Some("N_alpha") => block.n_alpha = cells.iter().map(|v| *v as usize).collect(),
            Some("nu_alpha") => block.nu_alpha = cells,
            Some("p_bar") => block.p_bar = cells,
            other => {
                return Err(Error::Parse {
                    line,
                    column: Some(2),
                    message: format!("unknown statistic {other:?}"),
                })
            }
        }
    }
    Ok((alphas, blocks))
}

/// Plot-ready trace: one row per recorded time.
pub fn trace_csv<T: Scalar>(trace: &SimTrace<T>, digits: Option<usize>) -> Result<Vec<u8>> {
    let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header: Vec<String> = ["t", "theta", "y", "v", "w_norm", "nr_time"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..trace.responses.len()).map(|i| format!("response_{i}")));
    wtr.write_record(&header).map_err(csv_write_error)?;
    for k in 0..trace.t.len() {
        let mut row = vec![
            format_number(trace.t[k], digits),
            format_number(trace.theta[k], digits),
            format_number(trace.y[k], digits),
            format_number(trace.v[k], digits),
            format_number(trace.w_norm[k], digits),
            format_number(trace.nr_time[k], digits),
        ];
        row.extend(trace.responses.iter().map(|r| format_number(r[k], digits)));
        wtr.write_record(&row).map_err(csv_write_error)?;
    }
    wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Adds `key: value` to the top level of a JSON object report.
pub fn with_metadata<S: Serialize>(report: &S, key: &str, value: Value) -> Result<Value> {
    let mut v = serde_json::to_value(report)?;
    match &mut v {
        Value::Object(map) => {
            map.insert(key.to_string(), value);
        }
        _ => {
            let mut map = Map::new();
            map.insert("result".into(), v);
            map.insert(key.to_string(), value);
            v = Value::Object(map);
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::separability::{analyze, AnalyzeOptions};

    fn cloud(text: &str) -> Result<PointCloud<f64>> {
        read_csv(text.as_bytes(), false, None)
    }

    #[test]
    fn reads_the_three_point_file() {
        let c = cloud("1,0\n0.9,0.3\n0,1").unwrap();
        assert_eq!((c.len(), c.dim()), (3, 2));
        assert_eq!(c.row(1), vec![0.9, 0.3]);
        assert!(c.labels().is_none());
    }

    #[test]
    fn reads_labels_by_index_name_and_position() {
        let text = "x,y,class\n1,0,a\n0,1,b\n";
        let by_name: PointCloud<f64> =
            read_csv(text.as_bytes(), true, Some(&"class".parse().unwrap())).unwrap();
        assert_eq!(by_name.labels().unwrap(), ["a", "b"]);
        assert_eq!(by_name.dim(), 2);
        let first: PointCloud<f64> =
            read_csv("a,1,2\nb,3,4".as_bytes(), false, Some(&LabelColumn::Index(0))).unwrap();
        assert_eq!(first.labels().unwrap().len(), 2);
        assert_eq!(first.row(1), vec![3.0, 4.0]);
        let last: PointCloud<f64> =
            read_csv("1,2,a\n3,4,b".as_bytes(), false, Some(&LabelColumn::Last)).unwrap();
        assert_eq!(last.labels().unwrap(), ["a", "b"]);
    }

    #[test]
    fn ragged_rows_name_the_line() {
        let err = cloud("1,0\n0.9\n0,1").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, column: None, .. }), "{err:?}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn non_numeric_cells_name_line_and_column() {
        let err = cloud("1,0\n0.9,abc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, column: Some(2), .. }), "{err:?}");
        let err = cloud("1,NaN\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, column: Some(2), .. }));
        assert!(cloud("").is_err());
    }

    #[test]
    fn write_then_read_is_exact() {
        let c = crate::sampling::sample_ball::<f64>(7, 20, crate::Seed(3))
            .unwrap()
            .with_labels((0..20).map(|i| format!("c{}", i % 3)).collect())
            .unwrap();
        let mut buf = Vec::new();
        write_csv(&c, &mut buf, false).unwrap();
        let back: PointCloud<f64> = read_csv(buf.as_slice(), false, Some(&LabelColumn::Last)).unwrap();
        assert_eq!(back, c);
        let mut buf = Vec::new();
        write_csv(&c, &mut buf, true).unwrap();
        assert!(buf.starts_with(b"c0,c1,c2,c3,c4,c5,c6,label\n"));
        let back: PointCloud<f64> = read_csv(buf.as_slice(), true, Some(&"label".parse().unwrap())).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn labels_file() {
        assert_eq!(read_labels("a\nb\n a \n".as_bytes(), false).unwrap(), ["a", "b", "a"]);
        assert!(read_labels("a\n\"\"\n".as_bytes(), false).is_err());
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_significant(0.280_112_345, 6), "0.280112");
        assert_eq!(format_significant(1234.5678, 6), "1234.57");
        assert_eq!(format_significant(7.58e-5, 6), "0.0000758");
        assert_eq!(format_significant(1.0, 6), "1");
        assert_eq!(format_significant(-2.5e-9, 6), "-2.5e-9");
        assert_eq!(format_significant(3.0e20, 6), "3e20");
        assert_eq!(format_significant(0.0, 6), "0");
    }

    fn docs_table() -> SeparabilityTable {
        let c = PointCloud::from_rows(&[vec![1.0, 0.0], vec![0.9, 0.3], vec![0.0, 1.0]])
            .unwrap()
            .with_labels(vec!["a".into(), "a".into(), "b".into()])
            .unwrap();
        let alphas = [0.8, 0.9, 0.99];
        let opts = AnalyzeOptions { class_aware: true, ..Default::default() };
        let reports = analyze(&c, &alphas, opts).unwrap();
        let mut t = SeparabilityTable::new(3, 2, &alphas);
        t.push_reports("raw", &reports);
        t.push_reports("sphere", &reports);
        t
    }

    #[test]
    fn table_json_to_csv_round_trip() {
        let t = docs_table();
        let json = emit_table(&t, ReportFormat::Json).unwrap();
        let from_json: SeparabilityTable = serde_json::from_slice(&json).unwrap();
        assert_eq!(from_json, t);
        let csv = emit_table(&from_json, ReportFormat::Csv(None)).unwrap();
        let (alphas, blocks) = parse_table_csv(std::str::from_utf8(&csv).unwrap()).unwrap();
        assert_eq!(alphas, t.alphas);
        assert_eq!(blocks, t.blocks);
    }

    #[test]
    fn starred_table_has_four_blocks() {
        let t = docs_table();
        let csv = String::from_utf8(table_csv(&t, Some(6)).unwrap()).unwrap();
        let (_, blocks) = parse_table_csv(&csv).unwrap();
        assert_eq!(blocks.len(), 4);
        assert_eq!(csv.lines().count(), 1 + 4 * 3);
        assert!(csv.starts_with("block,statistic,alpha=0.8,alpha=0.9,alpha=0.99\n"));
    }

    #[test]
    fn empty_alpha_list_gives_header_only_columns() {
        let t = SeparabilityTable::new(0, 0, &[]);
        let csv = String::from_utf8(table_csv(&t, Some(6)).unwrap()).unwrap();
        assert_eq!(csv, "block,statistic\n");
    }

    #[test]
    fn json_keys_are_sorted() {
        #[derive(Serialize)]
        struct R {
            zeta: f64,
            alpha: f64,
        }
        let out = String::from_utf8(to_canonical_json(&R { zeta: 0.1, alpha: 1.0 / 3.0 }).unwrap()).unwrap();
        assert!(out.find("alpha").unwrap() < out.find("zeta").unwrap());
        let back: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(back["alpha"].as_f64(), Some(1.0 / 3.0));
    }

    #[test]
    fn flattened_csv_reports() {
        #[derive(Serialize)]
        struct Inner {
            a: f64,
        }
        #[derive(Serialize)]
        struct R {
            name: &'static str,
            inner: Inner,
            list: Vec<u32>,
        }
        let rows = vec![
            R { name: "x", inner: Inner { a: 0.123_456_789 }, list: vec![1, 2] },
            R { name: "y", inner: Inner { a: 2.0 }, list: vec![3] },
        ];
        let out = String::from_utf8(emit_report(&rows, ReportFormat::Csv(Some(6))).unwrap()).unwrap();
        assert_eq!(out, "inner.a,list.0,list.1,name\n0.123457,1,2,x\n2,3,,y\n");
    }
}
