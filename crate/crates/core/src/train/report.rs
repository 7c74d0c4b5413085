//! Metric reports as `key=value` text and JSON.

use serde::Serialize;

use crate::metrics::{ConfusionCounts, MetricSummary};

fn metric_pairs(m: &MetricSummary, suffix: &str) -> Vec<String> {
    MetricSummary::KEYS
        .iter()
        .zip(m.values())
        .map(|(k, v)| format!("{k}{suffix}={v}"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub metrics: MetricSummary,
    pub counts: ConfusionCounts,
    pub samples: usize,
    pub params_total: usize,
}

impl EvalReport {
    /// One `key=value` pair per line.
    pub fn to_kv(&self) -> String {
        let mut lines = metric_pairs(&self.metrics, "");
        let c = &self.counts;
        lines.extend([
            format!("params_total={}", self.params_total),
            format!("samples={}", self.samples),
            format!("tp={}", c.tp),
            format!("fp={}", c.fp),
            format!("tn={}", c.tn),
            format!("fn={}", c.fn_),
        ]);
        lines.join("\n") + "\n"
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "dice": self.metrics.dice,
            "iou": self.metrics.iou,
            "sensitivity_paper": self.metrics.sensitivity_paper,
            "recall": self.metrics.recall,
            "accuracy": self.metrics.accuracy,
            "params_total": self.params_total,
            "samples": self.samples,
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "tn": self.counts.tn,
            "fn": self.counts.fn_,
        })
        .to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldRow {
    pub fold: usize,
    pub validation_patients: Vec<String>,
    pub train_samples: usize,
    pub validation_samples: usize,
    /// Epoch whose snapshot produced `metrics`; `None` if nothing trained.
    pub best_epoch: Option<usize>,
    pub metrics: MetricSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvReport {
    pub folds: Vec<FoldRow>,
    pub mean: MetricSummary,
    /// Sample standard deviation across folds.
    pub std: MetricSummary,
    pub params_total: usize,
}

impl CvReport {
    pub fn from_folds(folds: Vec<FoldRow>, params_total: usize) -> Self {
        let n = folds.len() as f64;
        let mut mean = [0.0; 5];
        for f in &folds {
            for (m, v) in mean.iter_mut().zip(f.metrics.values()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; 5];
        for f in &folds {
            for ((s, v), m) in var.iter_mut().zip(f.metrics.values()).zip(mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.map(|s| if folds.len() > 1 { (s / (n - 1.0)).sqrt() } else { 0.0 });
        CvReport {
            folds,
            mean: MetricSummary::from_values(mean),
            std: MetricSummary::from_values(std),
            params_total,
        }
    }

    /// One line per fold plus an aggregate line, each of space-separated
    /// `key=value` pairs.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for f in &self.folds {
            let mut pairs = vec![format!("row=fold{}", f.fold)];
            pairs.extend(metric_pairs(&f.metrics, ""));
            pairs.push(format!(
                "best_epoch={}",
                f.best_epoch.map_or("none".to_string(), |e| e.to_string())
            ));
            pairs.push(format!("validation_patients={}", f.validation_patients.join(",")));
            out.push_str(&pairs.join(" "));
            out.push('\n');
        }
        let mut pairs = vec!["row=aggregate".to_string()];
        pairs.extend(metric_pairs(&self.mean, ""));
        pairs.extend(metric_pairs(&self.std, "_std"));
        pairs.push(format!("params_total={}", self.params_total));
        out.push_str(&pairs.join(" "));
        out.push('\n');
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(fold: usize, dice: f64) -> FoldRow {
        FoldRow {
            fold,
            validation_patients: vec![format!("p{fold}")],
            train_samples: 6,
            validation_samples: 2,
            best_epoch: Some(0),
            metrics: MetricSummary::from_values([dice, 0.5, 0.5, 0.5, 0.9]),
        }
    }

    #[test]
    fn aggregate_is_mean_and_sample_std() {
        let r = CvReport::from_folds((0..4).map(|i| row(i, 0.1 * i as f64)).collect(), 10);
        assert!((r.mean.dice - 0.15).abs() < 1e-12);
        let expect = ((0.0225 + 0.0025 + 0.0025 + 0.0225) / 3.0f64).sqrt();
        assert!((r.std.dice - expect).abs() < 1e-12);
        assert_eq!(r.std.iou, 0.0);
        let text = r.to_kv();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().last().unwrap().starts_with("row=aggregate"));
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["folds"].as_array().unwrap().len(), 4);
    }
}
