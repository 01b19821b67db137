//! Per-step loss logging and the CSV training report.

use crate::error::{Error, Result};
use std::path::Path;

pub const REPORT_COLUMNS: [&str; 13] = [
    "step",
    "L_mse_c",
    "L_sys",
    "L_id_c",
    "L_adv_c",
    "L_T",
    "L_mse_f",
    "L_id_f",
    "L_h",
    "L_adv_f",
    "L_D_coarse",
    "L_D_fine",
    "L_G",
];

/// One training step's loss components. Absent entries mean the term was
/// not part of this stage/configuration; their CSV cells stay empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub l_mse_c: Option<f64>,
    pub l_sys: Option<f64>,
    pub l_id_c: Option<f64>,
    pub l_adv_c: Option<f64>,
    pub l_t: Option<f64>,
    pub l_mse_f: Option<f64>,
    pub l_id_f: Option<f64>,
    pub l_h: Option<f64>,
    pub l_adv_f: Option<f64>,
    pub l_d_coarse: Option<f64>,
    pub l_d_fine: Option<f64>,
    pub l_g: Option<f64>,
}

impl StepLog {
    pub fn values(&self) -> [Option<f64>; 12] {
        [
            self.l_mse_c,
            self.l_sys,
            self.l_id_c,
            self.l_adv_c,
            self.l_t,
            self.l_mse_f,
            self.l_id_f,
            self.l_h,
            self.l_adv_f,
            self.l_d_coarse,
            self.l_d_fine,
            self.l_g,
        ]
    }

    /// Names of every present (non-empty) loss column.
    pub fn present_columns(&self) -> Vec<&'static str> {
        REPORT_COLUMNS[1..]
            .iter()
            .zip(self.values())
            .filter_map(|(name, v)| v.map(|_| *name))
            .collect()
    }

    /// First non-finite component, if any, by column name.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        REPORT_COLUMNS[1..]
            .iter()
            .zip(self.values())
            .find_map(|(name, v)| match v {
                Some(x) if !x.is_finite() => Some(*name),
                _ => None,
            })
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub rows: Vec<StepLog>,
}

impl TrainReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = REPORT_COLUMNS.join(",");
        text.push('\n');
        for row in &self.rows {
            text.push_str(&row.step.to_string());
            for v in row.values() {
                text.push(',');
                if let Some(x) = v {
                    text.push_str(&format!("{x}"));
                }
            }
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
