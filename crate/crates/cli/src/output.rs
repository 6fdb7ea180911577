use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use optdesign::theory::GrowthRow;
use serde::Serialize;

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = sink(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Plain two-column text, one `a b` pair per line.
pub fn write_columns(path: &Path, rows: &[(f64, f64)]) -> Result<()> {
    let mut w = sink(Some(path))?;
    for (a, b) in rows {
        writeln!(w, "{a:e} {b:e}")?;
    }
    w.flush()?;
    Ok(())
}

/// One column per `B`; leading rows hold the count, criterion value and
/// certificate, then alternating point and weight rows.
pub fn write_growth_csv(path: Option<&Path>, rows: &[GrowthRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink(path)?);
    let mut header = vec!["row".to_string()];
    header.extend(rows.iter().map(|r| format!("B={}", r.b)));
    w.write_record(&header)?;

    let cell = |f: &dyn Fn(&GrowthRow) -> Option<String>| -> Vec<String> {
        rows.iter().map(|r| f(r).unwrap_or_default()).collect()
    };
    let mut emit = |name: String, cells: Vec<String>| -> Result<()> {
        let mut rec = vec![name];
        rec.extend(cells);
        w.write_record(&rec)?;
        Ok(())
    };
    emit("support_count".into(), cell(&|r| r.support_count.map(|c| c.to_string())))?;
    emit("value".into(), cell(&|r| r.value.map(|v| v.to_string())))?;
    emit("certificate".into(), cell(&|r| Some(if r.passed { "pass" } else { "fail" }.into())))?;
    let depth = rows.iter().filter_map(|r| r.design.as_ref().map(|d| d.len())).max().unwrap_or(0);
    for k in 0..depth {
        let point = |r: &GrowthRow| r.design.as_ref().and_then(|d| d.sorted().points().get(k).map(|x| x.to_string()));
        let weight =
            |r: &GrowthRow| r.design.as_ref().and_then(|d| d.sorted().weights().get(k).map(|x| x.to_string()));
        emit(format!("x_{}", k + 1), cell(&point))?;
        emit(format!("w_{}", k + 1), cell(&weight))?;
    }
    if rows.iter().any(|r| r.error.is_some()) {
        emit("error".into(), cell(&|r| r.error.clone()))?;
    }
    w.flush()?;
    Ok(())
}
