use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ddmatch::Result;
use serde::{Deserialize, Serialize};

use crate::metrics::{mean_std, median};
use crate::monte_carlo::{tracking_response, RunRecord};
use crate::scenario::ScenarioConfig;
use crate::serde_float;

/// Aggregates of one `(noise level, experiment count)` group.
///
/// Means and standard deviations use the runs with a stable closed loop;
/// medians use every run that returned gains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub target_index: usize,
    #[serde(with = "serde_float")]
    pub snr_target_db: f64,
    pub sigma: f64,
    pub experiments: usize,
    pub runs: usize,
    pub stable_runs: usize,
    /// Runs without a stabilizing controller, failed solves included.
    pub unstable: usize,
    /// Runs where synthesis returned no gains.
    pub failed: usize,
    #[serde(with = "serde_float")]
    pub snr_db_mean: f64,
    #[serde(with = "serde_float")]
    pub snr_db_min: f64,
    #[serde(with = "serde_float")]
    pub snr_db_max: f64,
    pub err_kx_mean: Option<f64>,
    pub err_kx_std: Option<f64>,
    pub err_kr_mean: Option<f64>,
    pub err_kr_std: Option<f64>,
    pub err_kx_median: Option<f64>,
    pub err_kr_median: Option<f64>,
}

/// Group rows by noise level and experiment count, in that order.
pub fn summarize(rows: &[RunRecord]) -> Vec<GroupSummary> {
    let mut groups: BTreeMap<(usize, usize), Vec<&RunRecord>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.target_index, r.experiments))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((target_index, experiments), g)| {
            let stable: Vec<&RunRecord> = g.iter().copied().filter(|r| r.stable).collect();
            let pick = |rs: &[&RunRecord], f: fn(&RunRecord) -> Option<f64>| -> Vec<f64> {
                rs.iter().filter_map(|r| f(r)).collect()
            };
            let kx_stable = mean_std(&pick(&stable, |r| r.err_kx));
            let kr_stable = mean_std(&pick(&stable, |r| r.err_kr));
            let snr: Vec<f64> = g.iter().map(|r| r.snr_db).collect();
            GroupSummary {
                target_index,
                snr_target_db: g[0].snr_target_db,
                sigma: g[0].sigma,
                experiments,
                runs: g.len(),
                stable_runs: stable.len(),
                unstable: g.len() - stable.len(),
                failed: g.iter().filter(|r| r.gains.is_none()).count(),
                snr_db_mean: snr.iter().sum::<f64>() / snr.len() as f64,
                snr_db_min: snr.iter().copied().fold(f64::INFINITY, f64::min),
                snr_db_max: snr.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                err_kx_mean: kx_stable.map(|s| s.0),
                err_kx_std: kx_stable.map(|s| s.1),
                err_kr_mean: kr_stable.map(|s| s.0),
                err_kr_std: kr_stable.map(|s| s.1),
                err_kx_median: median(&pick(&g, |r| r.err_kx)),
                err_kr_median: median(&pick(&g, |r| r.err_kr)),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub scenario: String,
    pub seed: u64,
    pub runs: usize,
    /// Calibrated noise level per SNR target.
    pub sigmas: Vec<f64>,
    pub rows: Vec<RunRecord>,
    pub summary: Vec<GroupSummary>,
}

/// One line of the long-format report CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run: usize,
    pub sigma: f64,
    pub snr_db: f64,
    #[serde(rename = "N")]
    pub experiments: usize,
    #[serde(rename = "err_Kx")]
    pub err_kx: Option<f64>,
    #[serde(rename = "err_Kr")]
    pub err_kr: Option<f64>,
    pub rho_cl: Option<f64>,
    pub stable: bool,
    pub status: String,
    pub ms: f64,
}

impl From<&RunRecord> for CsvRow {
    fn from(r: &RunRecord) -> Self {
        Self {
            run: r.run,
            sigma: r.sigma,
            snr_db: r.snr_db,
            experiments: r.experiments,
            err_kx: r.err_kx,
            err_kr: r.err_kr,
            rho_cl: r.rho_cl,
            stable: r.stable,
            status: r.status.clone(),
            ms: r.ms,
        }
    }
}

/// Report without the per-run rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub scenario: String,
    pub seed: u64,
    pub runs: usize,
    pub sigmas: Vec<f64>,
    pub summary: Vec<GroupSummary>,
}

pub fn read_rows_csv<R: Read>(input: R) -> Result<Vec<CsvRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

impl BenchmarkReport {
    pub fn group(&self, target_index: usize, experiments: usize) -> Option<&GroupSummary> {
        self.summary
            .iter()
            .find(|g| g.target_index == target_index && g.experiments == experiments)
    }

    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(CsvRow::from(r))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn summary_file(&self) -> SummaryFile {
        SummaryFile {
            scenario: self.scenario.clone(),
            seed: self.seed,
            runs: self.runs,
            sigmas: self.sigmas.clone(),
            summary: self.summary.clone(),
        }
    }

    /// Mean and standard deviation of the gain errors against the achieved
    /// SNR, one line per noise level and experiment count.
    pub fn write_figure_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "N",
            "snr_target_db",
            "snr_db_mean",
            "sigma",
            "stable_runs",
            "err_Kx_mean",
            "err_Kx_std",
            "err_Kr_mean",
            "err_Kr_std",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut groups: Vec<&GroupSummary> = self.summary.iter().collect();
        groups.sort_by_key(|g| (g.experiments, g.target_index));
        for g in groups {
            w.write_record([
                g.experiments.to_string(),
                g.snr_target_db.to_string(),
                g.snr_db_mean.to_string(),
                g.sigma.to_string(),
                g.stable_runs.to_string(),
                opt(g.err_kx_mean),
                opt(g.err_kx_std),
                opt(g.err_kr_mean),
                opt(g.err_kr_std),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Unstable-instance counts per achieved SNR band and experiment count.
    pub fn write_table_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "snr_db_min",
            "snr_db_max",
            "snr_target_db",
            "N",
            "runs",
            "unstable",
            "failed",
        ])?;
        for g in &self.summary {
            w.write_record([
                g.snr_db_min.to_string(),
                g.snr_db_max.to_string(),
                g.snr_target_db.to_string(),
                g.experiments.to_string(),
                g.runs.to_string(),
                g.unstable.to_string(),
                g.failed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Tracking traces of every stable run of one group, long format
    /// `run,t,channel,reference,desired,achieved`.
    pub fn write_tracking_csv<W: Write>(
        &self,
        cfg: &ScenarioConfig,
        target_index: usize,
        experiments: usize,
        out: W,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["run", "t", "channel", "reference", "desired", "achieved"])?;
        let selected = self
            .rows
            .iter()
            .filter(|r| r.target_index == target_index && r.experiments == experiments && r.stable);
        for row in selected {
            let Some(gains) = &row.gains else { continue };
            let trace = tracking_response(cfg, gains)?;
            for t in 0..trace.references.ncols() {
                for j in 0..trace.references.nrows() {
                    w.write_record([
                        row.run.to_string(),
                        t.to_string(),
                        j.to_string(),
                        trace.references[(j, t)].to_string(),
                        trace.desired[(j, t)].to_string(),
                        trace.achieved[(j, t)].to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Write every artifact into `dir` and return the paths written:
    /// `rows.csv`, `report.json`, `summary.json`, `figure_errors.csv`,
    /// `table_unstable.csv` and one `tracking_snr<k>_N<count>.csv` per noise
    /// level at the largest experiment count.
    pub fn write_all(&self, cfg: &ScenarioConfig, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut create = |name: String| -> Result<BufWriter<File>> {
            let path = dir.join(name);
            let f = File::create(&path)?;
            written.push(path);
            Ok(BufWriter::new(f))
        };
        self.write_rows_csv(create("rows.csv".into())?)?;
        create("report.json".into())?.write_all(self.to_json()?.as_bytes())?;
        let summary = serde_json::to_string_pretty(&self.summary_file())?;
        create("summary.json".into())?.write_all(summary.as_bytes())?;
        self.write_figure_csv(create("figure_errors.csv".into())?)?;
        self.write_table_csv(create("table_unstable.csv".into())?)?;
        let max_n = cfg.max_experiments();
        for k in 0..cfg.snr_targets_db.len() {
            let out = create(format!("tracking_snr{k}_N{max_n}.csv"))?;
            self.write_tracking_csv(cfg, k, max_n, out)?;
        }
        Ok(written)
    }
}
