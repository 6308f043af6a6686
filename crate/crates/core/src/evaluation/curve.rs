use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward_training::{AggregationObjective, Method};

/// One evaluation snapshot of a PPO run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub kl: f64,
    pub kl_stderr: f64,
    pub proxy_reward: f64,
    pub gold_reward: f64,
    pub seed: u64,
    pub method: Method,
    pub objective: AggregationObjective,
}

pub const CURVE_COLUMNS: &str = "step,kl,kl_stderr,proxy_reward,gold_reward,seed,method,objective";

/// Streams curve rows as CSV, flushing after every row so a run that aborts
/// leaves every point it emitted on disk.
pub struct CurveWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> CurveWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            inner: csv::WriterBuilder::new().has_headers(true).from_writer(out),
        }
    }

    pub fn write(&mut self, point: &CurvePoint) -> Result<()> {
        self.inner.serialize(point).map_err(csv_err)?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

pub fn write_curve_csv(points: &[CurvePoint], out: impl Write) -> Result<()> {
    let mut w = CurveWriter::new(out);
    if points.is_empty() {
        w.inner
            .write_record(CURVE_COLUMNS.split(','))
            .map_err(csv_err)?;
    }
    for p in points {
        w.write(p)?;
    }
    w.into_inner()?;
    Ok(())
}

pub fn curve_to_csv(points: &[CurvePoint]) -> Result<String> {
    let mut buf = Vec::new();
    write_curve_csv(points, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn read_curve_csv(input: impl Read) -> Result<Vec<CurvePoint>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != CURVE_COLUMNS {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "expected columns `{CURVE_COLUMNS}`, found `{}`",
                header.join(",")
            ),
        });
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Splits a concatenated table into runs keyed by `(method, seed)`, keeping
/// first-appearance order.
pub fn split_runs(points: &[CurvePoint]) -> Vec<Vec<CurvePoint>> {
    let mut runs: Vec<Vec<CurvePoint>> = Vec::new();
    for p in points {
        match runs.iter_mut().find(|r| {
            r[0].method == p.method && r[0].seed == p.seed && r[0].objective == p.objective
        }) {
            Some(r) => r.push(p.clone()),
            None => runs.push(vec![p.clone()]),
        }
    }
    runs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(step: u64, gold: f64) -> CurvePoint {
        CurvePoint {
            step,
            kl: 0.1 * step as f64,
            kl_stderr: 0.01,
            proxy_reward: 1.0 / 3.0,
            gold_reward: gold,
            seed: 2,
            method: Method::Multihead,
            objective: AggregationObjective::Min,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let pts = vec![
            point(0, 0.1 + 0.2),
            point(20, -1e-300),
            point(40, 12345.678901234567),
        ];
        let text = curve_to_csv(&pts).unwrap();
        assert!(text.starts_with(CURVE_COLUMNS));
        assert_eq!(read_curve_csv(text.as_bytes()).unwrap(), pts);
        assert_eq!(
            curve_to_csv(&read_curve_csv(text.as_bytes()).unwrap()).unwrap(),
            text
        );
    }

    #[test]
    fn empty_table_keeps_header() {
        let text = curve_to_csv(&[]).unwrap();
        assert_eq!(text.trim(), CURVE_COLUMNS);
        assert!(read_curve_csv(text.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn bad_header_and_rows_are_rejected() {
        assert!(read_curve_csv("a,b\n1,2\n".as_bytes()).is_err());
        let bad = format!("{CURVE_COLUMNS}\n0,x,0,0,0,1,single,min\n");
        assert!(matches!(
            read_curve_csv(bad.as_bytes()),
            Err(Error::Parse { .. })
        ));
    }
}
