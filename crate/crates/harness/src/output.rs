//! CSV series files: `#`-prefixed metadata lines, then
//! `k,mean_sq_dist,stderr,envelope,beta_k`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::experiment::{Row, Series};

pub const HEADER: [&str; 5] = ["k", "mean_sq_dist", "stderr", "envelope", "beta_k"];

/// Writes `series` to `path`. Floats use Rust's shortest round-trip form.
pub fn write_csv(series: &Series, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    for (k, v) in &series.metadata {
        writeln!(out, "# {k}: {}", v.replace(['\n', '\r'], " "))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in &series.rows {
        w.write_record([r.k.to_string(), r.mean_sq_dist.to_string(), r.stderr.to_string(), r.envelope.map(|e| e.to_string()).unwrap_or_default(), r.beta_k.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a series file back: metadata and rows. Rejects any other header.
pub fn read_csv(path: &Path) -> Result<Series> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut metadata = Vec::new();
    let mut body = String::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim_start();
            let (k, v) = rest.split_once(':').unwrap_or((rest, ""));
            metadata.push((k.trim().to_string(), v.trim().to_string()));
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != HEADER {
        bail!("unexpected header {:?} in {}", header, path.display());
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> { rec[i].parse::<f64>().with_context(|| format!("column {} in {}", HEADER[i], path.display())) };
        rows.push(Row {
            k: rec[0].parse()?,
            mean_sq_dist: f(1)?,
            stderr: f(2)?,
            envelope: if rec[3].is_empty() { None } else { Some(f(3)?) },
            beta_k: f(4)?,
        });
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Series { name, metadata, rows })
}

/// Writes one CSV per series into `dir` and returns the paths.
pub fn write_all(series: &[Series], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    series
        .iter()
        .map(|s| {
            let path = dir.join(format!("{}.csv", s.name));
            write_csv(s, &path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(rows: Vec<Row>) -> Series {
        Series {
            name: "t".into(),
            metadata: Vec::new(),
            rows,
        }
    }

    #[test]
    fn empty_series_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        write_csv(&series(Vec::new()), &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "k,mean_sq_dist,stderr,envelope,beta_k\n");
    }

    #[test]
    fn single_row_and_exact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let rows = vec![Row {
            k: 0,
            mean_sq_dist: 0.1 + 0.2,
            stderr: 1e-300,
            envelope: None,
            beta_k: 1.0,
        }];
        write_csv(&series(rows.clone()), &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 2);
        let back = read_csv(&p).unwrap();
        assert_eq!(back.rows, rows);

        let mut s = series(vec![
            Row {
                k: 3,
                mean_sq_dist: std::f64::consts::PI,
                stderr: 2.5e-17,
                envelope: Some(1.0 / 3.0),
                beta_k: 0.8,
            };
            2
        ]);
        s.metadata.push(("preset".into(), "custom".into()));
        write_csv(&s, &p).unwrap();
        let back = read_csv(&p).unwrap();
        assert_eq!(back.rows, s.rows);
        assert_eq!(back.metadata, s.metadata);
    }

    #[test]
    fn foreign_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "k,mean,stderr\n0,1,0\n").unwrap();
        assert!(read_csv(&p).is_err());
    }
}
