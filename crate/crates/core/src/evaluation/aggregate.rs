use std::fmt::{self, Write as _};

use crate::error::{Error, Result};

/// One repetition's metrics for a named scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub metrics: Vec<(String, f64)>,
}

/// Mean and standard error of one metric across repetitions.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary {
    pub scenario: String,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl fmt::Display for MetricSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.stderr)
    }
}

/// `(mean, sd/√n)` with the sample standard deviation.
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Summaries per metric, in first-seen metric order.
pub fn aggregate_runs(reports: &[RunReport]) -> Result<Vec<MetricSummary>> {
    if reports.len() < 2 {
        return Err(Error::Argument(format!(
            "aggregation needs at least 2 reports, got {}",
            reports.len()
        )));
    }
    let scenario = &reports[0].scenario;
    if let Some(other) = reports.iter().find(|r| &r.scenario != scenario) {
        return Err(Error::Argument(format!(
            "mixed scenarios {scenario:?} and {:?}",
            other.scenario
        )));
    }
    let mut names: Vec<&str> = Vec::new();
    for r in reports {
        for (m, _) in &r.metrics {
            if !names.contains(&m.as_str()) {
                names.push(m);
            }
        }
    }
    Ok(names
        .into_iter()
        .map(|name| {
            let values: Vec<f64> = reports
                .iter()
                .flat_map(|r| r.metrics.iter().filter(|(m, _)| m == name).map(|(_, v)| *v))
                .collect();
            let (mean, stderr) = mean_sem(&values);
            MetricSummary {
                scenario: scenario.clone(),
                metric: name.to_string(),
                mean,
                stderr,
                n: values.len(),
            }
        })
        .collect())
}

pub fn summaries_csv(rows: &[MetricSummary]) -> String {
    let mut s = String::from("scenario,metric,value,stderr,seeds\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.scenario, r.metric, r.mean, r.stderr, r.n);
    }
    s
}

/// Scenarios as rows, metrics as columns, cells as `mean ± stderr`.
pub fn summaries_table(rows: &[MetricSummary]) -> String {
    let mut scenarios: Vec<&str> = Vec::new();
    let mut metrics: Vec<&str> = Vec::new();
    for r in rows {
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
        if !metrics.contains(&r.metric.as_str()) {
            metrics.push(&r.metric);
        }
    }
    let cell = |sc: &str, m: &str| {
        rows.iter()
            .find(|r| r.scenario == sc && r.metric == m)
            .map_or_else(|| "-".to_string(), |r| r.to_string())
    };
    let first = scenarios.iter().map(|s| s.len()).max().unwrap_or(0).max(8);
    let widths: Vec<usize> = metrics
        .iter()
        .map(|m| {
            scenarios
                .iter()
                .map(|s| cell(s, m).chars().count())
                .max()
                .unwrap_or(0)
                .max(m.len())
        })
        .collect();
    let mut out = format!("{:first$}", "scenario");
    for (m, w) in metrics.iter().zip(&widths) {
        let _ = write!(out, " | {m:>w$}");
    }
    out.push('\n');
    out.push_str(&"-".repeat(out.chars().count() - 1));
    out.push('\n');
    for sc in &scenarios {
        let _ = write!(out, "{sc:first$}");
        for (m, w) in metrics.iter().zip(&widths) {
            let _ = write!(out, " | {:>w$}", cell(sc, m));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn reports(scenario: &str, values: &[f64]) -> Vec<RunReport> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| RunReport {
                scenario: scenario.into(),
                seed: i as u64,
                metrics: vec![("accuracy".into(), v)],
            })
            .collect()
    }

    #[test]
    fn hand_values() {
        let s = aggregate_runs(&reports("a", &[0.5, 0.5, 0.5])).unwrap();
        assert_eq!((s[0].mean, s[0].stderr), (0.5, 0.0));
        let s = aggregate_runs(&reports("a", &[0.0, 1.0])).unwrap();
        assert_eq!((s[0].mean, s[0].stderr), (0.5, 0.5));
        assert_eq!(s[0].to_string(), "0.5000 ± 0.5000");
    }

    #[test]
    fn matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..10).map(|_| rng.gen()).collect();
        let m = v.iter().sum::<f64>() / 10.0;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 9.0).sqrt();
        let s = aggregate_runs(&reports("a", &v)).unwrap();
        assert_relative_eq!(s[0].mean, m, epsilon = 1e-15);
        assert_relative_eq!(s[0].stderr, sd / 10f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn rejects_mixed_or_single() {
        let mut r = reports("a", &[0.1, 0.2]);
        r[1].scenario = "b".into();
        assert!(matches!(aggregate_runs(&r), Err(Error::Argument(_))));
        assert!(aggregate_runs(&reports("a", &[0.1])).is_err());
    }

    #[test]
    fn table_and_csv() {
        let mut rows = aggregate_runs(&reports("SS_D", &[0.9, 0.92])).unwrap();
        rows.extend(aggregate_runs(&reports("ES_D", &[0.8, 0.8])).unwrap());
        let csv = summaries_csv(&rows);
        assert!(csv.starts_with("scenario,metric,value,stderr,seeds\nSS_D,accuracy,0.91,"));
        let table = summaries_table(&rows);
        assert!(table.contains("ES_D     | 0.8000 ± 0.0000"), "{table}");
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
