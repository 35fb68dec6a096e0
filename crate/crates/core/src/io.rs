//! File formats: trajectory CSV, snapshot blocks (CSV or JSON) and dataset
//! directories of trajectories.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::data::{average_snapshots, build_snapshots, SnapshotMatrices};
use crate::error::{Error, Result};
use crate::lti::ExperimentRecord;
use crate::scalar::Real;

fn fmt<T: Real>(v: T) -> String {
    format!("{v:.16e}")
}

fn parse_num<T: Real>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse::<T>()
        .map_err(|_| Error::Parse(format!("bad number `{s}` in {what}")))
}

/// Write a trajectory: header `t,u_1..u_m,x_1..x_n[,xo_1..xo_n,v_1..v_n]`,
/// one row per time step `0..=T`, `u` left empty on the final row.
/// Oracle columns are written only when `oracle` is set and available.
pub fn write_trajectory_csv<T: Real, W: Write>(
    rec: &ExperimentRecord<T>,
    oracle: bool,
    out: W,
) -> Result<()> {
    rec.validate()?;
    let (n, m, tt) = (rec.n(), rec.m(), rec.horizon());
    let extra = match (&rec.states_clean, &rec.noise) {
        (Some(c), Some(v)) if oracle => Some((c, v)),
        _ => None,
    };
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|j| format!("u_{j}")));
    header.extend((1..=n).map(|j| format!("x_{j}")));
    if extra.is_some() {
        header.extend((1..=n).map(|j| format!("xo_{j}")));
        header.extend((1..=n).map(|j| format!("v_{j}")));
    }
    w.write_record(&header)?;
    for t in 0..=tt {
        let mut row = vec![t.to_string()];
        for j in 0..m {
            row.push(if t < tt {
                fmt(rec.inputs[(j, t)])
            } else {
                String::new()
            });
        }
        row.extend((0..n).map(|j| fmt(rec.states_measured[(j, t)])));
        if let Some((c, v)) = extra {
            row.extend((0..n).map(|j| fmt(c[(j, t)])));
            row.extend((0..n).map(|j| fmt(v[(j, t)])));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_trajectory_csv`].
pub fn read_trajectory_csv<T: Real, R: Read>(input: R) -> Result<ExperimentRecord<T>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(Error::Parse(
            "trajectory CSV must start with a `t` column".into(),
        ));
    }
    let count = |prefix: &str| {
        header
            .iter()
            .filter(|h| {
                h.strip_prefix(prefix)
                    .is_some_and(|s| s.parse::<usize>().is_ok())
            })
            .count()
    };
    let (m, n, no, nv) = (count("u_"), count("x_"), count("xo_"), count("v_"));
    let oracle = no > 0 || nv > 0;
    if n == 0 || (oracle && (no != n || nv != n)) || header.len() != 1 + m + n + no + nv {
        return Err(Error::Parse(format!(
            "unexpected trajectory header `{}`",
            header.join(",")
        )));
    }
    let expect = |idx: usize, name: String| -> Result<()> {
        if header[idx] != name {
            return Err(Error::Parse(format!(
                "expected column `{name}`, found `{}`",
                header[idx]
            )));
        }
        Ok(())
    };
    for j in 0..m {
        expect(1 + j, format!("u_{}", j + 1))?;
    }
    for j in 0..n {
        expect(1 + m + j, format!("x_{}", j + 1))?;
        if oracle {
            expect(1 + m + n + j, format!("xo_{}", j + 1))?;
            expect(1 + m + 2 * n + j, format!("v_{}", j + 1))?;
        }
    }

    let rows: Vec<csv::StringRecord> = r.records().collect::<std::result::Result<_, _>>()?;
    if rows.len() < 2 {
        return Err(Error::Parse("trajectory needs at least two rows".into()));
    }
    let tt = rows.len() - 1;
    let mut inputs = DMatrix::zeros(m, tt);
    let mut states = DMatrix::zeros(n, tt + 1);
    let mut clean = DMatrix::zeros(n, tt + 1);
    let mut noise = DMatrix::zeros(n, tt + 1);
    for (t, row) in rows.iter().enumerate() {
        let stamp: usize = row[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad time index `{}`", &row[0])))?;
        if stamp != t {
            return Err(Error::Parse(format!("time index {stamp} on row {t}")));
        }
        for j in 0..m {
            let cell = row[1 + j].trim();
            if t < tt {
                inputs[(j, t)] = parse_num(cell, "inputs")?;
            } else if !cell.is_empty() {
                return Err(Error::Parse("final row must not carry an input".into()));
            }
        }
        for j in 0..n {
            states[(j, t)] = parse_num(&row[1 + m + j], "states")?;
            if oracle {
                clean[(j, t)] = parse_num(&row[1 + m + n + j], "clean states")?;
                noise[(j, t)] = parse_num(&row[1 + m + 2 * n + j], "noise")?;
            }
        }
    }
    let mut rec = ExperimentRecord::from_measurements(inputs, states)?;
    if oracle {
        rec.states_clean = Some(clean);
        rec.noise = Some(noise);
    }
    Ok(rec)
}

pub fn save_trajectory<T: Real>(
    rec: &ExperimentRecord<T>,
    oracle: bool,
    path: &Path,
) -> Result<()> {
    write_trajectory_csv(rec, oracle, fs::File::create(path)?)
}

pub fn load_trajectory<T: Real>(path: &Path) -> Result<ExperimentRecord<T>> {
    read_trajectory_csv(fs::File::open(path)?)
}

/// Headerless numeric CSV, one matrix row per line.
pub fn write_matrix_csv<T: Real, W: Write>(m: &DMatrix<T>, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|&v| fmt(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv<T: Real, R: Read>(input: R) -> Result<DMatrix<T>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows: Vec<Vec<T>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|s| parse_num(s, "matrix CSV"))
                .collect::<Result<_>>()?,
        );
    }
    crate::serde_matrix::from_rows(&rows).map_err(Error::Parse)
}

const BLOCK_NAMES: [&str; 7] = ["U0", "X0", "X1", "V0", "V1", "X0_clean", "X1_clean"];

/// One CSV file per block (`U0.csv`, `X0.csv`, ...). Oracle blocks are
/// written only when `oracle` is set.
pub fn save_snapshots_csv<T: Real>(
    snap: &SnapshotMatrices<T>,
    dir: &Path,
    oracle: bool,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let blocks = [
        Some(&snap.u0),
        Some(&snap.x0),
        Some(&snap.x1),
        snap.v0.as_ref(),
        snap.v1.as_ref(),
        snap.x0_clean.as_ref(),
        snap.x1_clean.as_ref(),
    ];
    for (k, (name, blk)) in BLOCK_NAMES.iter().zip(blocks).enumerate() {
        if let Some(b) = blk {
            if k < 3 || oracle {
                write_matrix_csv(b, fs::File::create(dir.join(format!("{name}.csv")))?)?;
            }
        }
    }
    Ok(())
}

pub fn load_snapshots_csv<T: Real>(dir: &Path) -> Result<SnapshotMatrices<T>> {
    let read = |name: &str| -> Result<Option<DMatrix<T>>> {
        let p = dir.join(format!("{name}.csv"));
        if p.exists() {
            Ok(Some(read_matrix_csv(fs::File::open(p)?)?))
        } else {
            Ok(None)
        }
    };
    let need = |name: &str| -> Result<DMatrix<T>> {
        read(name)?.ok_or_else(|| Error::Parse(format!("missing {name}.csv in {}", dir.display())))
    };
    let mut snap = SnapshotMatrices::new(need("U0")?, need("X0")?, need("X1")?)?;
    snap.v0 = read("V0")?;
    snap.v1 = read("V1")?;
    snap.x0_clean = read("X0_clean")?;
    snap.x1_clean = read("X1_clean")?;
    snap.validate()?;
    Ok(snap)
}

pub fn save_snapshots_json<T: Real>(
    snap: &SnapshotMatrices<T>,
    path: &Path,
    oracle: bool,
) -> Result<()> {
    let s = if oracle {
        snap.clone()
    } else {
        snap.without_oracle()
    };
    fs::write(path, serde_json::to_string_pretty(&s)?)?;
    Ok(())
}

pub fn load_snapshots_json<T: Real>(path: &Path) -> Result<SnapshotMatrices<T>> {
    let snap: SnapshotMatrices<T> = serde_json::from_str(&fs::read_to_string(path)?)?;
    snap.validate()?;
    Ok(snap)
}

/// Trajectory CSV files of a dataset directory, sorted by file name.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .filter(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            !BLOCK_NAMES.contains(&stem)
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Snapshots from any supported source:
/// a snapshot JSON file, a single trajectory CSV, a directory of block CSVs
/// (`U0.csv`, ...), or a dataset directory of repeated-experiment
/// trajectories (averaged). Returns the snapshots and the experiment count.
pub fn load_snapshot_source<T: Real>(path: &Path) -> Result<(SnapshotMatrices<T>, usize)> {
    if path.is_dir() {
        if path.join("U0.csv").exists() {
            return Ok((load_snapshots_csv(path)?, 1));
        }
        let files = dataset_files(path)?;
        if files.is_empty() {
            return Err(Error::Empty(format!(
                "no trajectory CSV files in {}",
                path.display()
            )));
        }
        let snaps = files
            .iter()
            .map(|f| build_snapshots(&load_trajectory::<T>(f)?))
            .collect::<Result<Vec<_>>>()?;
        let count = snaps.len();
        return Ok((average_snapshots(&snaps)?, count));
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Ok((load_snapshots_json(path)?, 1)),
        Some("csv") => Ok((build_snapshots(&load_trajectory::<T>(path)?)?, 1)),
        _ => Err(Error::Parse(format!(
            "cannot infer data format of {} (expected .json, .csv or a directory)",
            path.display()
        ))),
    }
}
