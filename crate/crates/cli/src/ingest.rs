//! CSV input and output of bivariate series.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use mixtsql::{BivariateSeries, Equation, SeriesDomain};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Date column; when `None` a column named `date` is used if present.
    pub col_date: Option<String>,
    pub col_y1: String,
    pub col_y2: String,
    pub domains: [SeriesDomain; 2],
    /// Min-max standardize this column to [0, 1] and replace x by 1 - x.
    pub standardize_flip: Option<Equation>,
    /// Aggregate daily rows to weeks: mean for bounded or real columns, sum for counts.
    pub weekly: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            col_date: None,
            col_y1: "y1".into(),
            col_y2: "y2".into(),
            domains: [SeriesDomain::UnitInterval, SeriesDomain::NonnegativeCount],
            standardize_flip: None,
            weekly: false,
        }
    }
}

pub fn ingest_csv(path: &Path, opts: &IngestOptions) -> CliResult<BivariateSeries> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_series(file, opts)
}

struct Rows {
    labels: Option<Vec<String>>,
    cols: [Vec<f64>; 2],
    lines: Vec<usize>,
}

fn parse_rows<R: Read>(reader: R, opts: &IngestOptions) -> CliResult<Rows> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| CliError::Csv(e.to_string()))?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let i1 = find(&opts.col_y1).ok_or_else(|| CliError::MissingColumn(opts.col_y1.clone()))?;
    let i2 = find(&opts.col_y2).ok_or_else(|| CliError::MissingColumn(opts.col_y2.clone()))?;
    let idate = match &opts.col_date {
        Some(c) => Some(find(c).ok_or_else(|| CliError::MissingColumn(c.clone()))?),
        None => find("date"),
    };
    let names = [&opts.col_y1, &opts.col_y2];
    let mut rows = Rows { labels: idate.map(|_| Vec::new()), cols: [Vec::new(), Vec::new()], lines: Vec::new() };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Csv(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        for (k, idx) in [i1, i2].into_iter().enumerate() {
            let raw = rec.get(idx).unwrap_or("");
            let v: f64 = raw
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| CliError::Parse { row: line, column: names[k].clone(), value: raw.into() })?;
            let flipped = opts.standardize_flip.is_some_and(|e| e.index() == k);
            if !flipped && !opts.domains[k].contains(v) {
                return Err(CliError::DomainViolation {
                    row: line,
                    column: names[k].clone(),
                    value: v,
                    domain: opts.domains[k].to_string(),
                });
            }
            rows.cols[k].push(v);
        }
        if let (Some(labels), Some(i)) = (rows.labels.as_mut(), idate) {
            labels.push(rec.get(i).unwrap_or("").to_string());
        }
        rows.lines.push(line);
    }
    Ok(rows)
}

/// `1 - (x - min) / (max - min)`.
pub fn standardize_flip(x: &[f64]) -> CliResult<Vec<f64>> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(CliError::Config("cannot standardize a constant column".into()));
    }
    Ok(x.iter().map(|v| 1.0 - (v - lo) / (hi - lo)).collect())
}

/// Groups of consecutive row indices with their labels: ISO weeks when every
/// label is a `YYYY-MM-DD` date, otherwise complete blocks of 7 rows.
pub fn weekly_groups(labels: Option<&[String]>, n: usize) -> Vec<(String, std::ops::Range<usize>)> {
    let dates: Option<Vec<NaiveDate>> = labels.and_then(|l| {
        l.iter().map(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()).collect()
    });
    match dates {
        Some(dates) if !dates.is_empty() => {
            let mut groups: Vec<(String, std::ops::Range<usize>)> = Vec::new();
            let mut key = None;
            for (i, d) in dates.iter().enumerate() {
                let w = d.iso_week();
                let k = (w.year(), w.week());
                if key == Some(k) {
                    groups.last_mut().unwrap().1.end = i + 1;
                } else {
                    groups.push((format!("{}-W{:02}", k.0, k.1), i..i + 1));
                    key = Some(k);
                }
            }
            groups
        }
        _ => (0..n / 7)
            .map(|b| {
                let r = 7 * b..7 * b + 7;
                let label = labels.map_or_else(|| format!("week{}", b + 1), |l| l[r.start].clone());
                (label, r)
            })
            .collect(),
    }
}

fn aggregate(x: &[f64], domain: SeriesDomain) -> f64 {
    let s: f64 = x.iter().sum();
    if domain == SeriesDomain::NonnegativeCount {
        s
    } else {
        s / x.len() as f64
    }
}

pub fn read_series<R: Read>(reader: R, opts: &IngestOptions) -> CliResult<BivariateSeries> {
    let Rows { mut labels, mut cols, lines } = parse_rows(reader, opts)?;
    if let Some(e) = opts.standardize_flip {
        cols[e.index()] = standardize_flip(&cols[e.index()])?;
    }
    if opts.weekly {
        let groups = weekly_groups(labels.as_deref(), lines.len());
        cols = [0, 1].map(|k| groups.iter().map(|(_, r)| aggregate(&cols[k][r.clone()], opts.domains[k])).collect());
        labels = Some(groups.into_iter().map(|(l, _)| l).collect());
    } else if let Some(e) = opts.standardize_flip {
        // flipped values are checked only after preprocessing
        let k = e.index();
        if let Some(i) = cols[k].iter().position(|&v| !opts.domains[k].contains(v)) {
            let column = if k == 0 { &opts.col_y1 } else { &opts.col_y2 };
            return Err(CliError::DomainViolation {
                row: lines[i],
                column: column.clone(),
                value: cols[k][i],
                domain: opts.domains[k].to_string(),
            });
        }
    }
    let [y1, y2] = cols;
    let series = BivariateSeries::new(y1, y2, opts.domains[0], opts.domains[1])?;
    Ok(match labels {
        Some(l) => series.with_labels(l)?,
        None => series,
    })
}

/// Writes `date,y1,y2` (date only when labels exist) after `#` comment lines.
/// Values use the shortest representation that parses back to the same `f64`.
pub fn write_series<W: Write>(series: &BivariateSeries, comments: &[String], mut out: W) -> CliResult<()> {
    let mut text = String::new();
    for c in comments {
        text.push_str(&format!("# {c}\n"));
    }
    let labels = series.labels();
    text.push_str(if labels.is_some() { "date,y1,y2\n" } else { "y1,y2\n" });
    for t in 0..series.len() {
        if let Some(l) = labels {
            text.push_str(&l[t]);
            text.push(',');
        }
        text.push_str(&format!("{},{}\n", series.y1()[t], series.y2()[t]));
    }
    out.write_all(text.as_bytes()).map_err(|e| CliError::io("<series>", e))
}
