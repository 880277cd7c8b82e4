use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detection::DetectionMetrics;
use super::views::IouReport;
use crate::error::{Error, Result};
use crate::fsutil::write_json_atomic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationMetrics {
    pub ra: IouReport,
    pub rd: IouReport,
    /// Mean per-frame fraction of range rows whose RA and RD rows agree.
    pub view_consistency: f64,
}

/// Region-growing statistics for one (distance budget, intensity fraction)
/// setting, averaged over frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiStats {
    pub max_distance: u32,
    /// `None` for an absolute threshold.
    pub intensity_fraction: Option<f64>,
    /// `ground_truth` or `detector`.
    pub seeds: String,
    /// Pooled over the split: covered annotated cells / annotated cells.
    pub recall: f64,
    pub mean_points: f64,
    pub mean_visited: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeCounters {
    pub frames: usize,
    pub detect_seconds: f64,
    pub grow_seconds: f64,
    pub segment_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub split: String,
    pub detection: Option<DetectionMetrics>,
    pub segmentation: Option<SegmentationMetrics>,
    /// Seed-region class fill scored like `segmentation`.
    pub baseline: Option<SegmentationMetrics>,
    pub roi: Vec<RoiStats>,
    pub runtime: RuntimeCounters,
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Validation(format!("{name} = {v} is outside [0, 1]")));
    }
    Ok(())
}

fn check_iou(view: &str, r: &IouReport) -> Result<()> {
    for (class, v) in &r.per_class {
        if let Some(v) = v {
            check_rate(&format!("{view} IoU[{class}]"), *v)?;
        }
    }
    if let Some(m) = r.miou {
        check_rate(&format!("{view} mIoU"), m)?;
    }
    Ok(())
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        if let Some(d) = &self.detection {
            for (k, ap) in &d.ap {
                if let Some(ap) = ap {
                    check_rate(&format!("AP@{k}"), *ap)?;
                }
            }
            if let Some(m) = d.map {
                check_rate("mAP", m)?;
            }
        }
        for s in self.segmentation.iter().chain(&self.baseline) {
            check_iou("RA", &s.ra)?;
            check_iou("RD", &s.rd)?;
            check_rate("view consistency", s.view_consistency)?;
        }
        for r in &self.roi {
            check_rate(&format!("ROI recall at distance {}", r.max_distance), r.recall)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_json_atomic(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::views::iou_report;

    #[test]
    fn out_of_range_rate_rejected() {
        let mut r = MetricsReport {
            split: "test".into(),
            ..Default::default()
        };
        r.roi.push(RoiStats {
            max_distance: 6,
            intensity_fraction: Some(0.5),
            seeds: "ground_truth".into(),
            recall: 1.2,
            mean_points: 0.0,
            mean_visited: 0.0,
        });
        assert!(matches!(r.validate(), Err(Error::Validation(_))));
        r.roi[0].recall = 0.9;
        r.validate().unwrap();
    }

    #[test]
    fn json_round_trip() {
        let iou = iou_report(&[0, 1, 2], &[0, 1, 1]).unwrap();
        let r = MetricsReport {
            split: "val".into(),
            segmentation: Some(SegmentationMetrics {
                ra: iou.clone(),
                rd: iou,
                view_consistency: 1.0,
            }),
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        r.save(&p).unwrap();
        let back: MetricsReport = crate::fsutil::read_json(&p).unwrap();
        assert_eq!(back, r);
    }
}
