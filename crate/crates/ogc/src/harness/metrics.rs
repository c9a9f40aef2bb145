//! Per-epoch training metrics and their CSV serialization.

use std::io::{self, Write};

/// Header of the metrics CSV, fixed so runs are byte-comparable.
pub const METRICS_HEADER: &str =
    "step,epoch,train_acc,test_acc,tau,ratio,mu_c,sigma_c,mu_n,sigma_n,clip_frac";

/// One epoch of diagnostics. Mixture fields are NaN until the first fit; the
/// ground-truth ratio is populated only on synthetic runs with flip masks and
/// never enters the CSV schema.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: usize,
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub tau: f64,
    pub ratio: f64,
    pub mu_c: f64,
    pub sigma_c: f64,
    pub mu_n: f64,
    pub sigma_n: f64,
    pub clip_frac: f64,
    pub true_ratio: Option<f64>,
}

/// Writes the fixed-schema CSV. Floats use Rust's shortest round-trip
/// formatting, so identical runs produce identical bytes.
pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.epoch,
            r.train_acc,
            r.test_acc,
            r.tau,
            r.ratio,
            r.mu_c,
            r.sigma_c,
            r.mu_n,
            r.sigma_n,
            r.clip_frac
        )?;
    }
    Ok(())
}

/// Mean test accuracy over the last `k` epochs (or all of them if fewer).
pub fn last_k_epoch_mean_test_acc(records: &[MetricsRecord], k: usize) -> f64 {
    let tail = &records[records.len().saturating_sub(k)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|r| r.test_acc).sum::<f64>() / tail.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize, test_acc: f64) -> MetricsRecord {
        MetricsRecord {
            step: epoch * 4,
            epoch,
            train_acc: 0.5,
            test_acc,
            tau: 10.0,
            ratio: f64::NAN,
            mu_c: f64::NAN,
            sigma_c: f64::NAN,
            mu_n: f64::NAN,
            sigma_n: f64::NAN,
            clip_frac: 0.0,
            true_ratio: None,
        }
    }

    #[test]
    fn csv_has_the_fixed_schema() {
        let mut buf = Vec::new();
        write_metrics_csv(&[record(0, 0.5), record(1, 0.625)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].split(',').count(), 11);
        assert!(lines[1].contains("NaN"));
    }

    #[test]
    fn trailing_mean_uses_the_last_k_epochs() {
        let records: Vec<MetricsRecord> = (0..20).map(|e| record(e, e as f64 / 100.0)).collect();
        let mean = last_k_epoch_mean_test_acc(&records, 10);
        let expected = (10..20).map(|e| e as f64 / 100.0).sum::<f64>() / 10.0;
        assert!((mean - expected).abs() < 1e-12);
        assert!(
            (last_k_epoch_mean_test_acc(&records[..5], 10)
                - records[..5].iter().map(|r| r.test_acc).sum::<f64>() / 5.0)
                .abs()
                < 1e-12
        );
    }
}
