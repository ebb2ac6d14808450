use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{InflationSeries, PricePanel, SeriesKind, Transform, YearMonth};
use crate::{Error, Result};

/// Column arrangement of an input CSV.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsvLayout {
    /// `date,series_id,value`, one observation per row.
    Long,
    /// `date,<series 1>,<series 2>,...`, one month per row.
    Wide,
}

/// Reads a raw price-index panel and aligns all series on their common dates.
pub fn ingest_csv(path: impl AsRef<Path>, layout: CsvLayout) -> Result<PricePanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let series = match layout {
        CsvLayout::Long => read_long(&mut reader)?,
        CsvLayout::Wide => read_wide(&mut reader)?,
    };
    align(series)
}

type SeriesMap = Vec<(String, BTreeMap<YearMonth, f64>)>;

fn read_long<R: std::io::Read>(reader: &mut csv::Reader<R>) -> Result<SeriesMap> {
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::input(format!("long layout is missing a '{name}' column")))
    };
    let (di, si, vi) = (find("date")?, find("series_id")?, find("value")?);

    let mut by_series: BTreeMap<String, BTreeMap<YearMonth, f64>> = BTreeMap::new();
    let mut duplicates = Vec::new();
    let mut bad_rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let date: YearMonth = rec.get(di).unwrap_or("").parse().map_err(|e: Error| {
            Error::input(format!("line {line}: {e}"))
        })?;
        let id = rec.get(si).unwrap_or("").to_string();
        let raw = rec.get(vi).unwrap_or("");
        if raw.is_empty() {
            continue;
        }
        let value: f64 = match raw.parse() {
            Ok(v) if f64::is_finite(v) => v,
            _ => {
                bad_rows.push(line);
                continue;
            }
        };
        let entry = by_series.entry(id.clone()).or_default();
        if entry.insert(date, value).is_some() {
            duplicates.push(format!("({date}, {id})"));
        }
    }
    if !duplicates.is_empty() {
        return Err(Error::input(format!(
            "duplicate (date, series) pairs: {}",
            duplicates.join(", ")
        )));
    }
    if !bad_rows.is_empty() {
        return Err(unparseable(&bad_rows));
    }
    Ok(by_series.into_iter().collect())
}

fn read_wide<R: std::io::Read>(reader: &mut csv::Reader<R>) -> Result<SeriesMap> {
    let headers = reader.headers()?.clone();
    if headers.len() < 2 || !headers[0].eq_ignore_ascii_case("date") {
        return Err(Error::input(
            "wide layout needs a 'date' first column followed by series columns",
        ));
    }
    let ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut seen = BTreeSet::new();
    for id in &ids {
        if !seen.insert(id) {
            return Err(Error::input(format!("duplicate series column '{id}'")));
        }
    }
    let mut series: SeriesMap = ids.into_iter().map(|id| (id, BTreeMap::new())).collect();
    let mut duplicates = Vec::new();
    let mut bad_rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let date: YearMonth = rec.get(0).unwrap_or("").parse().map_err(|e: Error| {
            Error::input(format!("line {line}: {e}"))
        })?;
        let mut row_bad = false;
        for (j, (id, map)) in series.iter_mut().enumerate() {
            let raw = rec.get(j + 1).unwrap_or("");
            if raw.is_empty() {
                continue;
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    if map.insert(date, v).is_some() {
                        duplicates.push(format!("({date}, {id})"));
                    }
                }
                _ => row_bad = true,
            }
        }
        if row_bad {
            bad_rows.push(line);
        }
    }
    if !duplicates.is_empty() {
        return Err(Error::input(format!(
            "duplicate (date, series) pairs: {}",
            duplicates.join(", ")
        )));
    }
    if !bad_rows.is_empty() {
        return Err(unparseable(&bad_rows));
    }
    Ok(series)
}

fn unparseable(lines: &[usize]) -> Error {
    let list: Vec<String> = lines.iter().map(usize::to_string).collect();
    Error::input(format!("unparseable numeric values on lines {}", list.join(", ")))
}

fn align(series: SeriesMap) -> Result<PricePanel> {
    if series.is_empty() {
        return Err(Error::input("no series found"));
    }
    let mut common: BTreeSet<YearMonth> = series[0].1.keys().copied().collect();
    for (_, map) in &series[1..] {
        common.retain(|d| map.contains_key(d));
    }
    let dates: Vec<YearMonth> = common.into_iter().collect();
    if dates.is_empty() {
        return Err(Error::input("series share no common dates"));
    }
    super::check_monthly(&dates)?;
    let values = DMatrix::from_fn(dates.len(), series.len(), |r, c| series[c].1[&dates[r]]);
    let ids = series.into_iter().map(|(id, _)| id).collect();
    PricePanel::new(dates, ids, values, Transform::RawIndex)
}

/// Reads one raw index series (e.g. headline CPI) from a wide CSV.
///
/// `column` selects the series by header name; by default the first series
/// column is used. The result is returned as an index-level series; callers
/// convert it with the same transform as the panel.
pub fn read_inflation_series(
    path: impl AsRef<Path>,
    column: Option<&str>,
) -> Result<(Vec<YearMonth>, Vec<f64>)> {
    let panel = ingest_csv(path, CsvLayout::Wide)?;
    let j = match column {
        None => 0,
        Some(name) => panel
            .series_ids()
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::input(format!("no column named '{name}'")))?,
    };
    Ok((panel.dates().to_vec(), panel.column(j)))
}

impl InflationSeries {
    /// Builds a headline series from an index-level series with the given
    /// percent-change lag (12 for year-over-year, 1 for month-over-month).
    pub fn headline_from_index(dates: &[YearMonth], index: &[f64], lag: usize) -> Result<Self> {
        if index.len() < lag + 1 || dates.len() != index.len() {
            return Err(Error::arg("headline index too short for the requested transform"));
        }
        if let Some(i) = index.iter().position(|v| *v <= 0.0) {
            return Err(Error::input(format!(
                "non-positive headline index value at {}",
                dates[i]
            )));
        }
        let values = (lag..index.len())
            .map(|t| 100.0 * (index[t] / index[t - lag] - 1.0))
            .collect();
        Self::new(dates[lag..].to_vec(), values, SeriesKind::Headline)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn wide_fixture(n: usize, t: usize) -> String {
        let mut s = String::from("date");
        for j in 0..n {
            s.push_str(&format!(",c{j}"));
        }
        s.push('\n');
        for (r, d) in YearMonth::range("2001-01".parse().unwrap(), t).iter().enumerate() {
            s.push_str(&d.to_string());
            for j in 0..n {
                s.push_str(&format!(",{}", 100.0 + r as f64 + j as f64 * 0.5));
            }
            s.push('\n');
        }
        s
    }

    #[test]
    fn wide_csv_round_trips() {
        let f = write(&wide_fixture(3, 24));
        let p = ingest_csv(f.path(), CsvLayout::Wide).unwrap();
        let yoy = crate::panel::to_yoy(&p).unwrap();
        let g = write(&yoy.to_csv());
        let back = ingest_csv(g.path(), CsvLayout::Wide).unwrap();
        assert_eq!(back.values(), yoy.values());
        assert_eq!(back.dates(), yoy.dates());
        assert_eq!(back.series_ids(), yoy.series_ids());
    }

    #[test]
    fn wide_three_series_two_years() {
        let f = write(&wide_fixture(3, 24));
        let p = ingest_csv(f.path(), CsvLayout::Wide).unwrap();
        assert_eq!(p.n_series(), 3);
        assert_eq!(p.n_periods(), 24);
        assert_eq!(p.values()[(5, 2)], 106.0);
        assert_eq!(p.transform(), Transform::RawIndex);
    }

    #[test]
    fn long_duplicate_is_named() {
        let f = write(
            "date,series_id,value\n2000-01,a,1\n2000-02,a,2\n2000-01,b,3\n2000-02,b,4\n2000-02,a,5\n",
        );
        let err = ingest_csv(f.path(), CsvLayout::Long).unwrap_err();
        assert!(err.to_string().contains("(2000-02, a)"), "{err}");
    }

    #[test]
    fn long_aligns_on_intersection() {
        let f = write(
            "date,series_id,value\n2000-01,a,1\n2000-02,a,2\n2000-03,a,3\n2000-02,b,4\n2000-03,b,5\n2000-04,b,6\n",
        );
        let p = ingest_csv(f.path(), CsvLayout::Long).unwrap();
        assert_eq!(p.n_periods(), 2);
        assert_eq!(p.dates()[0].to_string(), "2000-02");
        assert_eq!(p.series_ids(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn gapped_calendar_rejected() {
        let f = write("date,a\n2000-01,1\n2000-02,2\n2000-04,3\n");
        let err = ingest_csv(f.path(), CsvLayout::Wide).unwrap_err();
        assert!(err.to_string().contains("contiguous"), "{err}");
    }

    #[test]
    fn unparseable_rows_are_listed() {
        let f = write("date,a,b\n2000-01,1,2\n2000-02,x,2\n2000-03,3,y\n");
        let err = ingest_csv(f.path(), CsvLayout::Wide).unwrap_err();
        assert!(err.to_string().contains("lines 3, 4"), "{err}");
    }

    #[test]
    fn headline_from_index_matches_panel_transform() {
        let dates = YearMonth::range("2000-01".parse().unwrap(), 14);
        let idx: Vec<f64> = (0..14).map(|t| 100.0 * 1.01f64.powi(t)).collect();
        let h = InflationSeries::headline_from_index(&dates, &idx, 12).unwrap();
        assert_eq!(h.values.len(), 2);
        assert!((h.values[0] - 100.0 * (1.01f64.powi(12) - 1.0)).abs() < 1e-9);
    }
}
