//! Experiment reports and their on-disk form: `report.json` (everything),
//! `roc.csv` (one row per ROC point) and `scores.csv` (one row per set).

use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LengthBucket};
use crate::attacks::AttackKind;
use crate::error::{Error, Result};
use crate::oracle::QueryCounters;
use crate::statistics::{auc, classification_metrics, roc_curve, RocPoint};

pub const REPORT_FORMAT: &str = "setaudit-report v1";
pub const REPORT_FILE: &str = "report.json";
pub const ROC_FILE: &str = "roc.csv";
pub const SCORES_FILE: &str = "scores.csv";

/// Outcome of the attack on one set. A failed set keeps its error and has
/// no signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetRecord {
    pub set_id: String,
    /// Membership of the set's majority source, taken from the dataset.
    pub label: bool,
    pub granularity: usize,
    pub contaminants: usize,
    pub signal: Option<f64>,
    /// Signal oriented so that larger means more member-like.
    pub member_score: Option<f64>,
    pub verdict: Option<bool>,
    pub error: Option<String>,
}

/// Metrics over the sets that produced a verdict. Undefined values are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub member_sets: usize,
    pub nonmember_sets: usize,
    pub failed_sets: usize,
    pub auc: Option<f64>,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

fn split_scores(records: &[SetRecord]) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for r in records {
        if let Some(s) = r.member_score {
            if r.label {
                pos.push(s);
            } else {
                neg.push(s);
            }
        }
    }
    (pos, neg)
}

impl Aggregates {
    pub fn from_records(records: &[SetRecord]) -> Self {
        let (pos, neg) = split_scores(records);
        let auc = if pos.is_empty() || neg.is_empty() {
            None
        } else {
            auc(&pos, &neg).ok()
        };
        let (predicted, actual): (Vec<bool>, Vec<bool>) = records
            .iter()
            .filter_map(|r| r.verdict.map(|v| (v, r.label)))
            .unzip();
        let metrics = classification_metrics(&predicted, &actual).ok();
        Aggregates {
            member_sets: records.iter().filter(|r| r.label).count(),
            nonmember_sets: records.iter().filter(|r| !r.label).count(),
            failed_sets: records.iter().filter(|r| r.error.is_some()).count(),
            auc,
            accuracy: metrics.map(|m| m.accuracy),
            precision: metrics.and_then(|m| m.precision),
            recall: metrics.and_then(|m| m.recall),
        }
    }
}

pub fn roc_from_records(records: &[SetRecord]) -> Vec<RocPoint> {
    let (pos, neg) = split_scores(records);
    roc_curve(&pos, &neg).unwrap_or_default()
}

/// Records and metrics of the sets drawn from one response-length bucket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub bucket: LengthBucket,
    pub member_pool: usize,
    pub nonmember_pool: usize,
    /// Why no sets could be drawn, e.g. a pool smaller than the granularity.
    pub error: Option<String>,
    pub records: Vec<SetRecord>,
    pub aggregates: Aggregates,
    pub roc: Vec<RocPoint>,
}

impl BucketReport {
    pub fn new(
        bucket: LengthBucket,
        member_pool: usize,
        nonmember_pool: usize,
        error: Option<String>,
        records: Vec<SetRecord>,
    ) -> Self {
        BucketReport {
            bucket,
            member_pool,
            nonmember_pool,
            error,
            aggregates: Aggregates::from_records(&records),
            roc: roc_from_records(&records),
            records,
        }
    }

    pub fn scope(&self) -> String {
        format!("length[{},{})", self.bucket.0, self.bucket.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format: String,
    pub attack: AttackKind,
    pub config: ExperimentConfig,
    pub records: Vec<SetRecord>,
    pub aggregates: Aggregates,
    pub roc: Vec<RocPoint>,
    /// Oracle queries issued by this run.
    pub counters: QueryCounters,
    pub buckets: Vec<BucketReport>,
}

impl ExperimentReport {
    pub fn new(
        config: ExperimentConfig,
        records: Vec<SetRecord>,
        counters: QueryCounters,
        buckets: Vec<BucketReport>,
    ) -> Self {
        ExperimentReport {
            format: REPORT_FORMAT.to_string(),
            attack: config.attack,
            config,
            aggregates: Aggregates::from_records(&records),
            roc: roc_from_records(&records),
            records,
            counters,
            buckets,
        }
    }

    /// Recomputes every aggregate and ROC curve from the per-set records.
    pub fn check_consistency(&self) -> Result<()> {
        let check = |scope: &str, records: &[SetRecord], aggregates: &Aggregates, roc: &[RocPoint]| {
            if Aggregates::from_records(records) != *aggregates {
                return Err(Error::Invariant(format!("{scope}: aggregates disagree with per-set records")));
            }
            if roc_from_records(records) != roc {
                return Err(Error::Invariant(format!("{scope}: ROC points disagree with per-set records")));
            }
            Ok(())
        };
        if self.format != REPORT_FORMAT {
            return Err(Error::Invariant(format!("unsupported report format `{}`", self.format)));
        }
        check("all", &self.records, &self.aggregates, &self.roc)?;
        for b in &self.buckets {
            check(&b.scope(), &b.records, &b.aggregates, &b.roc)?;
        }
        Ok(())
    }

    /// The same report with aggregates and ROC points recomputed.
    pub fn recomputed(&self) -> Self {
        let mut out = self.clone();
        out.aggregates = Aggregates::from_records(&out.records);
        out.roc = roc_from_records(&out.records);
        for b in &mut out.buckets {
            b.aggregates = Aggregates::from_records(&b.records);
            b.roc = roc_from_records(&b.records);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn scopes(&self) -> impl Iterator<Item = (String, &[SetRecord], &[RocPoint])> {
        std::iter::once(("all".to_string(), &self.records[..], &self.roc[..]))
            .chain(self.buckets.iter().map(|b| (b.scope(), &b.records[..], &b.roc[..])))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocRow {
    pub scope: String,
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub scope: String,
    pub set_id: String,
    pub label: bool,
    pub granularity: usize,
    pub contaminants: usize,
    pub signal: Option<f64>,
    pub member_score: Option<f64>,
    pub verdict: Option<bool>,
    pub error: Option<String>,
}

impl ScoreRow {
    pub fn record(&self) -> SetRecord {
        SetRecord {
            set_id: self.set_id.clone(),
            label: self.label,
            granularity: self.granularity,
            contaminants: self.contaminants,
            signal: self.signal,
            member_score: self.member_score,
            verdict: self.verdict,
            error: self.error.clone(),
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let to_err = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for row in rows {
        w.serialize(row).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes the three report files into `dir`, creating it if needed.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_path = dir.join(REPORT_FILE);
    fs::write(&json_path, report.to_json()).map_err(|e| Error::io(&json_path, e))?;
    let roc_rows = report.scopes().flat_map(|(scope, _, roc)| {
        roc.iter().map(move |p| RocRow {
            scope: scope.clone(),
            threshold: p.threshold,
            fpr: p.fpr,
            tpr: p.tpr,
        })
    });
    write_csv(&dir.join(ROC_FILE), roc_rows)?;
    let score_rows = report.scopes().flat_map(|(scope, records, _)| {
        records.iter().map(move |r| ScoreRow {
            scope: scope.clone(),
            set_id: r.set_id.clone(),
            label: r.label,
            granularity: r.granularity,
            contaminants: r.contaminants,
            signal: r.signal,
            member_score: r.member_score,
            verdict: r.verdict,
            error: r.error.clone(),
        })
    });
    write_csv(&dir.join(SCORES_FILE), score_rows)
}

/// Reads `report.json` and checks its aggregates against its records.
pub fn load_report(dir: &Path) -> Result<ExperimentReport> {
    let path = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let report: ExperimentReport = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    report.check_consistency()?;
    Ok(report)
}

pub fn read_roc_table(path: &Path) -> Result<Vec<RocRow>> {
    read_csv(path)
}

pub fn read_score_table(path: &Path) -> Result<Vec<ScoreRow>> {
    read_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statistics::trapezoid_auc;

    fn record(i: usize, label: bool, score: Option<f64>) -> SetRecord {
        SetRecord {
            set_id: format!("{}-{i:04}", if label { "m" } else { "n" }),
            label,
            granularity: 10,
            contaminants: 0,
            signal: score.map(|s| 1.0 - s),
            member_score: score,
            verdict: score.map(|s| s > 0.5),
            error: score.is_none().then(|| "oracle refused".to_string()),
        }
    }

    fn report() -> ExperimentReport {
        let scores = [0.9, 0.8, 0.8, 0.3, 0.55, 0.1, 0.8, 0.2];
        let mut records: Vec<_> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| record(i, i % 2 == 0, Some(s)))
            .collect();
        records.push(record(9, true, None));
        let bucket = BucketReport::new(LengthBucket(0, 50), 10, 10, None, records[..4].to_vec());
        ExperimentReport::new(
            ExperimentConfig::new(AttackKind::RefNonmember),
            records,
            QueryCounters::default(),
            vec![bucket],
        )
    }

    #[test]
    fn empty_records_leave_aggregates_undefined() {
        let a = Aggregates::from_records(&[]);
        assert_eq!((a.auc, a.accuracy, a.precision, a.recall), (None, None, None, None));
        assert!(roc_from_records(&[]).is_empty());
    }

    #[test]
    fn failed_sets_are_counted_but_not_scored() {
        let r = report();
        assert_eq!(r.aggregates.failed_sets, 1);
        assert_eq!(r.aggregates.member_sets, 5);
        // distinct scores 0.9, 0.8, 0.55, 0.3, 0.2, 0.1 plus both endpoints
        assert_eq!(r.roc.len(), 8);
    }

    #[test]
    fn emit_and_reload_round_trip() {
        let r = report();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&r, dir.path()).unwrap();
        let loaded = load_report(dir.path()).unwrap();
        assert_eq!(loaded, r);
        assert_eq!(loaded.recomputed(), r);

        let roc = read_roc_table(&dir.path().join(ROC_FILE)).unwrap();
        let main: Vec<RocPoint> = roc
            .iter()
            .filter(|row| row.scope == "all")
            .map(|row| RocPoint {
                threshold: row.threshold,
                fpr: row.fpr,
                tpr: row.tpr,
            })
            .collect();
        assert_eq!(main, r.roc);
        assert!((trapezoid_auc(&main) - r.aggregates.auc.unwrap()).abs() <= 1e-9);

        let scores = read_score_table(&dir.path().join(SCORES_FILE)).unwrap();
        let records: Vec<_> = scores.iter().filter(|s| s.scope == "all").map(ScoreRow::record).collect();
        assert_eq!(records, r.records);
        assert_eq!(scores.len(), r.records.len() + 4);
    }

    #[test]
    fn tampered_aggregates_are_rejected() {
        let mut r = report();
        r.aggregates.auc = Some(0.99);
        let dir = tempfile::tempdir().unwrap();
        emit_report(&r, dir.path()).unwrap();
        assert!(matches!(load_report(dir.path()), Err(Error::Invariant(_))));
    }
}
