//! Relative RMSE, melt-pool IoU and their aggregation.

mod report;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{emit_report, emit_slice_image, parse_report, slice_image, write_report, Axis, REPORT_HEADER};

use crate::dataset::{percentile, Dataset, Split};
use crate::error::{Error, Result};
use crate::physics::MaterialProperties;
use crate::surrogate::{predict_composite, Surrogate};

fn same_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::dim(op, "voxel count", a, b));
    }
    Ok(())
}

/// `100 · sqrt(mean((pred - truth)²))` on normalized fields.
pub fn relative_rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    same_len("relative_rmse", pred.len(), truth.len())?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(100.0 * (sum / pred.len() as f64).sqrt())
}

/// Cells strictly above the mean of liquidus and solidus.
pub fn melt_mask(kelvin: &[f64], material: &MaterialProperties) -> Vec<bool> {
    let tm = material.melting_temperature();
    kelvin.iter().map(|&t| t > tm).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskCounts {
    pub pred: usize,
    pub truth: usize,
    pub intersection: usize,
    pub union: usize,
}

impl MaskCounts {
    pub fn of(pred: &[bool], truth: &[bool]) -> Result<Self> {
        same_len("iou", pred.len(), truth.len())?;
        let mut c = MaskCounts::default();
        for (&p, &t) in pred.iter().zip(truth) {
            c.pred += usize::from(p);
            c.truth += usize::from(t);
            c.intersection += usize::from(p && t);
            c.union += usize::from(p || t);
        }
        Ok(c)
    }

    /// Percent; two empty masks count as a perfect match.
    pub fn iou(&self) -> f64 {
        if self.union == 0 {
            100.0
        } else {
            100.0 * self.intersection as f64 / self.union as f64
        }
    }
}

pub fn iou(a: &[bool], b: &[bool]) -> Result<f64> {
    Ok(MaskCounts::of(a, b)?.iou())
}

/// One line of the CSV report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub case_id: String,
    pub frame: usize,
    pub power: f64,
    pub velocity: f64,
    pub time: f64,
    pub rmse_pct: f64,
    pub iou_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub row: ReportRow,
    pub split: Split,
    pub melt: MaskCounts,
}

/// Composite predictions against every sample of `split`, scored in
/// parallel and sorted by (case, frame).
pub fn evaluate(dataset: &Dataset, split: Split, mt: &Surrogate, m: &Surrogate) -> Result<Vec<MetricsRecord>> {
    let records: Vec<_> = dataset.split(split).collect();
    let material = dataset.material()?;
    let norm = dataset.manifest.normalization;
    if mt.meta.crop != dataset.manifest.crop || mt.meta.normalization != norm {
        return Err(Error::Config("checkpoints were trained on a different crop or normalization".into()));
    }
    let mut out = records
        .par_iter()
        .map(|r| {
            let pred = predict_composite(&[r.meta.point], mt, m)?.pop().expect("one point in, one field out");
            let truth: Vec<f64> = r.field.iter().map(|&v| f64::from(v)).collect();
            let rmse_pct = relative_rmse(&pred, &truth)?;
            let kelvin = |v: &[f64]| v.iter().map(|&n| norm.denormalize(n)).collect::<Vec<_>>();
            let melt = MaskCounts::of(&melt_mask(&kelvin(&pred), material), &melt_mask(&kelvin(&truth), material))?;
            Ok(MetricsRecord {
                row: ReportRow {
                    case_id: r.meta.case_id.clone(),
                    frame: r.meta.frame,
                    power: r.meta.point.power,
                    velocity: r.meta.point.velocity,
                    time: r.meta.point.time,
                    rmse_pct,
                    iou_pct: melt.iou(),
                },
                split,
                melt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| (&a.row.case_id, a.row.frame).cmp(&(&b.row.case_id, b.row.frame)));
    Ok(out)
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case_id: String,
    pub power: f64,
    pub velocity: f64,
    pub frames: usize,
    pub rmse_mean: f64,
    pub iou_mean: f64,
}

/// Median and interquartile range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        Quartiles {
            q1: percentile(values, 25.0),
            median: percentile(values, 50.0),
            q3: percentile(values, 75.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub frame: usize,
    pub cases: usize,
    pub rmse: Quartiles,
    pub iou: Quartiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub records: usize,
    pub rmse: MeanStd,
    pub iou: MeanStd,
    pub cases: Vec<CaseSummary>,
    pub frames: Vec<FrameSummary>,
}

/// Per-case means, sorted by case id.
pub fn aggregate_by_case(rows: &[ReportRow]) -> Vec<CaseSummary> {
    let mut groups: BTreeMap<&str, Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(&r.case_id).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(id, rs)| {
            let n = rs.len() as f64;
            CaseSummary {
                case_id: id.to_string(),
                power: rs[0].power,
                velocity: rs[0].velocity,
                frames: rs.len(),
                rmse_mean: rs.iter().map(|r| r.rmse_pct).sum::<f64>() / n,
                iou_mean: rs.iter().map(|r| r.iou_pct).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Per-frame quartiles across cases.
pub fn aggregate_by_timestep(rows: &[ReportRow]) -> Vec<FrameSummary> {
    let mut groups: BTreeMap<usize, Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.frame).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(frame, rs)| {
            let rmse: Vec<f64> = rs.iter().map(|r| r.rmse_pct).collect();
            let iou: Vec<f64> = rs.iter().map(|r| r.iou_pct).collect();
            FrameSummary {
                frame,
                cases: rs.len(),
                rmse: Quartiles::of(&rmse),
                iou: Quartiles::of(&iou),
            }
        })
        .collect()
}

pub fn build_report(rows: &[ReportRow]) -> ReportTable {
    let rmse: Vec<f64> = rows.iter().map(|r| r.rmse_pct).collect();
    let iou: Vec<f64> = rows.iter().map(|r| r.iou_pct).collect();
    ReportTable {
        records: rows.len(),
        rmse: MeanStd::of(&rmse),
        iou: MeanStd::of(&iou),
        cases: aggregate_by_case(rows),
        frames: aggregate_by_timestep(rows),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(case: &str, frame: usize, rmse: f64, iou: f64) -> ReportRow {
        ReportRow {
            case_id: case.into(),
            frame,
            power: 100.0,
            velocity: 800.0,
            time: 5.0 * (frame + 1) as f64,
            rmse_pct: rmse,
            iou_pct: iou,
        }
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(relative_rmse(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
        let truth = vec![0.1; 10];
        let pred: Vec<f64> = truth.iter().map(|t| t + 0.025).collect();
        assert!((relative_rmse(&pred, &truth).unwrap() - 2.5).abs() < 1e-12);
        assert!(relative_rmse(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn melt_thresholds() {
        let ti = MaterialProperties::ti64();
        assert_eq!(melt_mask(&[1898.0, 1898.01, 293.0], &ti), vec![false, true, false]);
        assert!(melt_mask(&[293.0; 5], &MaterialProperties::ss316l()).iter().all(|&m| !m));
        assert_eq!(melt_mask(&[1705.6], &MaterialProperties::ss316l()), vec![true]);
    }

    #[test]
    fn iou_examples() {
        let a = [true, true, false, false];
        assert_eq!(iou(&a, &a).unwrap(), 100.0);
        assert_eq!(iou(&a, &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(iou(&[false; 3], &[false; 3]).unwrap(), 100.0);
        // |A| = |B| = 8 with 4 shared: 4 / 12.
        let a: Vec<bool> = (0..16).map(|i| i < 8).collect();
        let b: Vec<bool> = (0..16).map(|i| (4..12).contains(&i)).collect();
        let c = MaskCounts::of(&a, &b).unwrap();
        assert_eq!((c.pred, c.truth, c.intersection, c.union), (8, 8, 4, 12));
        assert!((c.iou() - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn timestep_quartiles() {
        let rows: Vec<_> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| row(&format!("c{i}"), 0, v, v))
            .collect();
        let f = &aggregate_by_timestep(&rows)[0];
        assert_eq!((f.rmse.median, f.rmse.q1, f.rmse.q3), (2.5, 1.75, 3.25));
        assert_eq!(f.cases, 4);
    }

    #[test]
    fn single_record_and_case_means() {
        let one = [row("a", 3, 1.5, 90.0)];
        let t = build_report(&one);
        assert_eq!((t.rmse.mean, t.iou.mean, t.rmse.std), (1.5, 90.0, 0.0));
        let rows = [row("b", 0, 1.0, 80.0), row("a", 0, 2.0, 60.0), row("b", 1, 3.0, 100.0)];
        let cases = aggregate_by_case(&rows);
        assert_eq!(cases[0].case_id, "a");
        assert_eq!((cases[1].rmse_mean, cases[1].iou_mean, cases[1].frames), (2.0, 90.0, 2));
        assert!(aggregate_by_case(&[]).is_empty());
        assert_eq!(build_report(&[]).records, 0);
    }

    #[test]
    fn population_std() {
        let s = MeanStd::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!((s.mean, s.std), (5.0, 2.0));
    }
}
