use std::fmt::Write as _;

use rayon::prelude::*;

use crate::bdm::BinaryMask;
use crate::Result;

use super::{binarize, dice, e_measure_max, f_beta_weighted, iou, mae, s_measure, PredictionMap};

/// Column header of the CSV report, in table order.
pub const CSV_HEADER: &str = "image_id,dice,iou,fbw,smeasure,emeasure,mae";

/// Metrics of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub image_id: String,
    pub dice: f64,
    pub iou: f64,
    pub fbw: f64,
    pub smeasure: f64,
    pub emeasure: f64,
    pub mae: f64,
    /// The weighted F-measure is undefined (empty ground truth) and was set to 0.
    pub flagged: bool,
}

impl MetricsRow {
    pub fn values(&self) -> [f64; 6] {
        [self.dice, self.iou, self.fbw, self.smeasure, self.emeasure, self.mae]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    /// Arithmetic means of each column, in [`MetricsRow::values`] order.
    pub means: [f64; 6],
}

/// Metrics of a single prediction. The prediction is resampled to the ground
/// truth's resolution first when the sizes differ.
pub fn evaluate_pair(image_id: &str, pred: &PredictionMap, gt: &BinaryMask, threshold: f64) -> Result<MetricsRow> {
    let pred = pred.resized(gt.height(), gt.width());
    let bin = binarize(&pred, threshold);
    let fbw = f_beta_weighted(&pred, gt)?;
    Ok(MetricsRow {
        image_id: image_id.to_string(),
        dice: dice(&bin, gt)?,
        iou: iou(&bin, gt)?,
        fbw: fbw.unwrap_or(0.0),
        smeasure: s_measure(&pred, gt)?,
        emeasure: e_measure_max(&pred, gt)?,
        mae: mae(&pred, gt)?,
        flagged: fbw.is_none(),
    })
}

/// Per-image metrics (computed in parallel) and their unweighted means.
/// Rows keep the input order; means are reduced sequentially in that order.
pub fn evaluate_dataset(pairs: &[(String, PredictionMap, BinaryMask)], threshold: f64) -> Result<MetricsReport> {
    let rows = pairs.par_iter().map(|(id, p, g)| evaluate_pair(id, p, g, threshold)).collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_rows(rows))
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<MetricsRow>) -> Self {
        let mut means = [0.0; 6];
        for row in &rows {
            for (m, v) in means.iter_mut().zip(row.values()) {
                *m += v;
            }
        }
        if !rows.is_empty() {
            means.iter_mut().for_each(|m| *m /= rows.len() as f64);
        }
        Self { rows, means }
    }

    pub fn count(&self) -> usize {
        self.rows.len()
    }

    /// CSV with one row per image and a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let mut line = |id: &str, v: [f64; 6]| {
            out.push_str(id);
            for x in v {
                let _ = write!(out, ",{x:.6}");
            }
            out.push('\n');
        };
        for row in &self.rows {
            line(&row.image_id, row.values());
        }
        line("mean", self.means);
        out
    }

    /// Aligned text table of the dataset means, `*` marking flagged rows.
    pub fn to_table(&self, title: &str) -> String {
        let names = ["mDice", "mIoU", "Fw_b", "S_a", "E_max", "MAE"];
        let mut out = String::new();
        let _ = writeln!(out, "{:<16}{}", "dataset", names.map(|n| format!("{n:>9}")).concat());
        let _ = writeln!(out, "{:<16}{}", title, self.means.map(|m| format!("{m:>9.4}")).concat());
        let flagged = self.rows.iter().filter(|r| r.flagged).count();
        if flagged > 0 {
            let _ = writeln!(out, "({flagged} image(s) with empty ground truth scored 0 on Fw_b)");
        }
        out
    }
}
