//! Human and automated evaluation.

pub mod acs;
pub mod adapter;
pub mod matrix;
pub mod sheet;

pub use acs::{compute_acs, AcsError, AcsScore, AcsWeights};
pub use adapter::{builtin_overlap_adapter, MetricAdapter, MetricError, OverlapAdapter};
pub use matrix::{run_config_matrix, MatrixEntry, MatrixEnv, MatrixReport};
pub use sheet::{make_eval_sheet, score_eval_sheet, EvalSheet, EvalSheetRow, RuleSentenceSplitter, SentenceSplitter};

/// Relative change of `value` over `baseline` in percent, rendered as `+4.60%`.
pub fn percent_delta(value: f64, baseline: f64) -> Option<String> {
    if baseline == 0.0 {
        return None;
    }
    Some(format!("{:+.2}%", (value - baseline) / baseline * 100.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_delta_format() {
        assert_eq!(percent_delta(9.32, 8.91).unwrap(), "+4.60%");
        assert_eq!(percent_delta(8.0, 10.0).unwrap(), "-20.00%");
        assert_eq!(percent_delta(1.0, 0.0), None);
    }
}
