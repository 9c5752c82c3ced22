use std::fmt::Write;

/// One metric value, as written to the metric CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub task: String,
    pub dataset: String,
    pub direction_or_label: String,
    pub metric: String,
    pub value: f64,
    pub k_or_fraction: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        task: &str,
        dataset: &str,
        direction_or_label: &str,
        metric: &str,
        value: f64,
        k_or_fraction: impl ToString,
        seed: u64,
    ) {
        self.rows.push(MetricRow {
            task: task.into(),
            dataset: dataset.into(),
            direction_or_label: direction_or_label.into(),
            metric: metric.into(),
            value,
            k_or_fraction: k_or_fraction.to_string(),
            seed,
        });
    }

    /// First row matching `(direction_or_label, metric, k_or_fraction)`.
    pub fn find(&self, direction_or_label: &str, metric: &str, k_or_fraction: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.direction_or_label == direction_or_label && r.metric == metric && r.k_or_fraction == k_or_fraction)
            .map(|r| r.value)
    }

    /// Values use Rust's shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,dataset,direction_or_label,metric,value,k_or_fraction,seed\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.task, r.dataset, r.direction_or_label, r.metric, r.value, r.k_or_fraction, r.seed
            );
        }
        out
    }
}
