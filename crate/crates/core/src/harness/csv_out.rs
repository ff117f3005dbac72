use std::io::Write;
use std::path::Path;

use crate::det_ngd::{cond_recurrence_path, predict_cond_upper_bound};
use crate::error::{Error, Result};

use super::batch::AggregateRow;

pub const AGGREGATE_HEADER: [&str; 7] = [
    "iter",
    "mean_cond",
    "std_cond",
    "mean_J",
    "std_J",
    "survivors",
    "theory_cond",
];

/// Seventeen significant digits: enough to round-trip every `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io {
            path: Default::default(),
            source: io,
        },
        other => Error::Internal(format!("csv: {other:?}")),
    }
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("no rows to write"));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            fmt_f64(r.mean_cond),
            fmt_f64(r.std_cond),
            fmt_f64(r.mean_j),
            fmt_f64(r.std_j),
            r.survivors.to_string(),
            r.theory_cond.map(fmt_f64).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: Default::default(),
        source: e,
    })
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn emit_csv(rows: &[AggregateRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("no rows to write"));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    with_path(path, write_aggregate_csv(rows, std::io::BufWriter::new(file)))
}

/// Parses the output of [`emit_csv`].
pub fn parse_aggregate_csv(text: &str) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(AGGREGATE_HEADER) {
        return Err(Error::invalid(format!("unexpected header {header:?}")));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::invalid(format!("bad number `{s}`")))
    };
    let int = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::invalid(format!("bad integer `{s}`")))
    };
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(AggregateRow {
                iteration: int(&rec[0])?,
                mean_cond: num(&rec[1])?,
                std_cond: num(&rec[2])?,
                mean_j: num(&rec[3])?,
                std_j: num(&rec[4])?,
                survivors: int(&rec[5])?,
                theory_cond: if rec[6].is_empty() { None } else { Some(num(&rec[6])?) },
            })
        })
        .collect()
}

/// `iter,theory_cond,upper_bound` for `t = 0..=iters`: the exact
/// condition-number recurrence and the closed-form rate bound with `γ = α`.
pub fn write_theory_csv<W: Write>(cond0: f64, alpha: f64, iters: usize, out: W) -> Result<()> {
    let path = cond_recurrence_path(cond0, alpha, iters)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "theory_cond", "upper_bound"])
        .map_err(csv_err)?;
    for (t, c) in path.iter().enumerate() {
        let bound = predict_cond_upper_bound(cond0, alpha, t)?;
        w.write_record([t.to_string(), fmt_f64(*c), fmt_f64(bound)])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: Default::default(),
        source: e,
    })
}

pub fn emit_theory_csv(cond0: f64, alpha: f64, iters: usize, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    with_path(path, write_theory_csv(cond0, alpha, iters, std::io::BufWriter::new(file)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row() -> AggregateRow {
        AggregateRow {
            iteration: 0,
            mean_cond: 1e6,
            std_cond: 0.0,
            mean_j: 1935331.9441744157,
            std_j: 0.1 + 0.2,
            survivors: 50,
            theory_cond: None,
        }
    }

    #[test]
    fn one_row_gives_two_lines() {
        let mut buf = Vec::new();
        write_aggregate_csv(&[sample_row()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "iter,mean_cond,std_cond,mean_J,std_J,survivors,theory_cond");
        assert!(lines[1].ends_with(",50,"), "{}", lines[1]);
        // every real field carries at least 12 significant digits
        let mantissa = lines[1].split(',').nth(3).unwrap().split('e').next().unwrap();
        assert!(mantissa.chars().filter(char::is_ascii_digit).count() >= 12);
    }

    #[test]
    fn parse_round_trips_exactly() {
        let mut rows = vec![sample_row()];
        rows.push(AggregateRow {
            iteration: 1,
            theory_cond: Some(std::f64::consts::PI * 1e5),
            mean_cond: 1.0 + f64::EPSILON,
            ..sample_row()
        });
        let mut buf = Vec::new();
        write_aggregate_csv(&rows, &mut buf).unwrap();
        assert_eq!(parse_aggregate_csv(std::str::from_utf8(&buf).unwrap()).unwrap(), rows);
    }

    #[test]
    fn empty_rows_and_bad_paths_are_errors() {
        assert!(write_aggregate_csv(&[], Vec::new()).is_err());
        let err = emit_csv(&[sample_row()], Path::new("/nonexistent/dir/out.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { ref path, .. } if path.ends_with("out.csv")));
    }

    #[test]
    fn theory_rows() {
        let mut buf = Vec::new();
        write_theory_csv(1e6, 0.1, 50, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 52);
        assert_eq!(lines[0], "iter,theory_cond,upper_bound");
        let last: Vec<f64> = lines[51].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(last[0], 50.0);
        assert!((last[2] - 2770.32).abs() < 0.01);
        assert!(write_theory_csv(1e6, 0.7, 5, Vec::new()).is_err());
    }
}
