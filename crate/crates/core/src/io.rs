//! CSV and JSON input and output.
//!
//! Matrix files have a header row `node,<t_start>,<t_start+1>,...` and one
//! row per node with the node id in the first column.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use faer::Mat;
use serde::Serialize;

use crate::detection::{IndicatorSeries, SeriesPoint};
use crate::error::{Error, Result};
use crate::matrix::MeasurementWindow;
use crate::sensitivity::{FactorMatrix, FactorScore, ShiftScore};

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<f64> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Err(Error::Parse { row, col, msg: "blank cell".into() });
    }
    let v: f64 = cell
        .parse()
        .map_err(|e| Error::Parse { row, col, msg: format!("`{cell}`: {e}") })?;
    if !v.is_finite() {
        return Err(Error::Parse { row, col, msg: format!("non-finite value `{cell}`") });
    }
    Ok(v)
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?)
}

/// Row ids, first sample index and numeric rows of a matrix file.
fn read_table(path: &Path) -> Result<(Vec<String>, usize, Vec<Vec<f64>>)> {
    let mut records = reader(path)?.into_records();
    let header = records.next().ok_or(Error::EmptySample)??;
    let width = header.len();
    if width < 2 {
        return Err(Error::Parse { row: 1, col: 2, msg: "header has no sample columns".into() });
    }
    let mut times = Vec::with_capacity(width - 1);
    for (c, cell) in header.iter().enumerate().skip(1) {
        let t: usize = cell
            .trim()
            .parse()
            .map_err(|_| Error::Parse { row: 1, col: c + 1, msg: format!("sample index `{cell}`") })?;
        times.push(t);
    }
    if let Some(k) = times.windows(2).position(|w| w[1] != w[0] + 1) {
        return Err(Error::Parse {
            row: 1,
            col: k + 3,
            msg: "sample indices must be consecutive".into(),
        });
    }

    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (r, record) in records.enumerate() {
        let record = record?;
        let line = r + 2;
        if record.len() != width {
            return Err(Error::NonRectangular { row: line, expected: width, found: record.len() });
        }
        ids.push(record[0].trim().to_string());
        let values = record
            .iter()
            .enumerate()
            .skip(1)
            .map(|(c, cell)| parse_cell(cell, line, c + 1))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok((ids, times[0], rows))
}

/// Reads a node-by-sample matrix. Row and column numbers in errors are
/// 1-based file coordinates.
pub fn ingest_csv(path: &Path) -> Result<MeasurementWindow> {
    let (ids, t_start, rows) = read_table(path)?;
    let values = Mat::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
    MeasurementWindow::new(values, ids, t_start)
}

/// Reads factors in the matrix format: one factor per row when `per_row`,
/// otherwise a single factor named `id` holding every row.
pub fn ingest_factors(path: &Path, per_row: bool, id: &str) -> Result<Vec<FactorMatrix>> {
    let (ids, _, rows) = read_table(path)?;
    if per_row {
        ids.into_iter()
            .zip(&rows)
            .map(|(id, row)| FactorMatrix::from_rows(id, std::slice::from_ref(row)))
            .collect()
    } else {
        Ok(vec![FactorMatrix::from_rows(id, &rows)?])
    }
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

/// Writes `w` in the format read by [`ingest_csv`]. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_matrix_csv(path: &Path, w: &MeasurementWindow) -> Result<()> {
    let mut out = writer(path)?;
    let mut header = vec!["node".to_string()];
    header.extend((w.t_start()..=w.t_end()).map(|t| t.to_string()));
    out.write_record(&header)?;
    for (i, id) in w.node_ids().iter().enumerate() {
        let mut record = vec![id.clone()];
        record.extend((0..w.n_samples()).map(|j| w.values()[(i, j)].to_string()));
        out.write_record(&record)?;
    }
    out.flush()?;
    Ok(())
}

/// One row per window and indicator: `t_end,indicator,value,sigma_magnitude`.
pub fn write_series_csv(path: &Path, series: &[IndicatorSeries]) -> Result<()> {
    let mut out = writer(path)?;
    out.write_record(["t_end", "indicator", "value", "sigma_magnitude"])?;
    for s in series {
        let name = s.name();
        for p in &s.points {
            let z = s.sigma_magnitude(p.value)?;
            out.write_record([p.t_end.to_string(), name.clone(), p.value.to_string(), z.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads the points written by [`write_series_csv`], grouped by indicator
/// name in order of first appearance.
pub fn read_series_csv(path: &Path) -> Result<Vec<(String, Vec<SeriesPoint>)>> {
    let mut groups: Vec<(String, Vec<SeriesPoint>)> = Vec::new();
    for (r, record) in reader(path)?.into_records().enumerate().skip(1) {
        let record = record?;
        let line = r + 1;
        if record.len() != 4 {
            return Err(Error::NonRectangular { row: line, expected: 4, found: record.len() });
        }
        let t_end = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse { row: line, col: 1, msg: format!("t_end `{}`", &record[0]) })?;
        let point = SeriesPoint { t_end, value: parse_cell(&record[2], line, 3)? };
        match groups.iter_mut().find(|(n, _)| n == &record[1]) {
            Some((_, points)) => points.push(point),
            None => groups.push((record[1].to_string(), vec![point])),
        }
    }
    Ok(groups)
}

pub fn write_scores_csv(path: &Path, scores: &[FactorScore]) -> Result<()> {
    let mut out = writer(path)?;
    out.write_record(["factor_id", "score", "rank"])?;
    for s in scores {
        out.write_record([s.factor_id.clone(), s.score.to_string(), s.rank.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_delay_csv(path: &Path, profile: &[ShiftScore]) -> Result<()> {
    let mut out = writer(path)?;
    out.write_record(["shift", "score"])?;
    for p in profile {
        out.write_record([p.shift.to_string(), p.score.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{calibrate_config, indicator_curve, WindowConfig};
    use crate::indicators::Indicator;
    use crate::laws::gaussian_window;
    use proptest::prelude::*;
    use std::fs;

    #[test]
    fn reads_well_formed_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "node,5,6,7,8\na,1,2,3,4\nb,0.5,0.25,-1,2e3\nc,1,1,1,2\n").unwrap();
        let w = ingest_csv(&path).unwrap();
        assert_eq!((w.n_nodes(), w.n_samples()), (3, 4));
        assert_eq!(w.node_ids(), ["a", "b", "c"]);
        assert_eq!((w.t_start(), w.t_end()), (5, 8));
        assert_eq!(w.values()[(1, 3)], 2000.0);
    }

    #[test]
    fn blank_and_bad_cells_are_located() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "node,1,2,3\na,1,2,3\nb,4,,6\n").unwrap();
        match ingest_csv(&path) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (3, 3)),
            other => panic!("{other:?}"),
        }
        fs::write(&path, "node,1,2,3\na,1,NaN,3\nb,4,5,6\n").unwrap();
        assert!(matches!(ingest_csv(&path), Err(Error::Parse { row: 2, col: 3, .. })));
        fs::write(&path, "node,1,2,3\na,1,2,3\nb,4,5\n").unwrap();
        assert!(matches!(ingest_csv(&path), Err(Error::NonRectangular { row: 3, .. })));
        fs::write(&path, "node,1,3\na,1,2\nb,4,5\n").unwrap();
        assert!(matches!(ingest_csv(&path), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn factor_files_accept_single_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        fs::write(&path, "node,1,2,3\nload7,1,2,4\n").unwrap();
        let per_row = ingest_factors(&path, true, "").unwrap();
        assert_eq!(per_row.len(), 1);
        assert_eq!(per_row[0].id(), "load7");
        fs::write(&path, "node,1,2,3\na,1,2,4\nb,0,1,0\n").unwrap();
        let whole = ingest_factors(&path, false, "f").unwrap();
        assert_eq!((whole.len(), whole[0].n_rows(), whole[0].id()), (1, 2, "f"));
    }

    #[test]
    fn series_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = WindowConfig { stride: 7, ..WindowConfig::new(20, vec![Indicator::msr()]) };
        let refs = calibrate_config(&cfg, 6, 100, 0).unwrap();
        let series = indicator_curve(&gaussian_window(6, 80, 1).unwrap(), &cfg, &refs, 0).unwrap();
        let path = dir.path().join("s.csv");
        write_series_csv(&path, &series).unwrap();
        let back = read_series_csv(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].0, "MSR");
        assert_eq!(back[0].1, series[0].points);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn matrix_round_trip(
            seed in 0u64..10_000,
            n in 2usize..6,
            t in 2usize..12,
            t_start in 1usize..1000,
            scale in -1e6f64..1e6,
        ) {
            let g = gaussian_window(n, t, seed).unwrap();
            let values = g.values() * faer::Scale(scale);
            let ids = (0..n).map(|i| format!("bus {i}")).collect();
            let w = MeasurementWindow::new(values, ids, t_start).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.csv");
            write_matrix_csv(&path, &w).unwrap();
            prop_assert_eq!(ingest_csv(&path).unwrap(), w);
        }
    }
}
