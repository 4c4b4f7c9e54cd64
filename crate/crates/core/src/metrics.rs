//! Across-replication performance measures.
//!
//! All moments use the population divisor `1/R`, so the per-observation
//! identity `rmse^2 = sd^2 + bias^2` holds up to rounding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CateError, Result};

/// 5% critical value of the chi-square distribution with two degrees of
/// freedom.
pub const JB_CRITICAL_5: f64 = 5.991;
/// 1% critical value.
pub const JB_CRITICAL_1: f64 = 9.210;

/// True CATEs on the validation set and the `R x m` matrix of estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionPanel {
    pub truth: Vec<f64>,
    /// One row of `m` predictions per replication.
    pub preds: Vec<Vec<f64>>,
}

impl PredictionPanel {
    pub fn new(truth: Vec<f64>, preds: Vec<Vec<f64>>) -> Result<Self> {
        let panel = Self { truth, preds };
        panel.validate()?;
        Ok(panel)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.truth.len();
        if let Some((r, row)) = self.preds.iter().enumerate().find(|(_, p)| p.len() != m) {
            return Err(CateError::invalid(format!(
                "replication {r} has {} predictions, expected {m}",
                row.len()
            )));
        }
        let finite = self.truth.iter().chain(self.preds.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(CateError::invalid("prediction panel contains non-finite values"));
        }
        Ok(())
    }

    pub fn n_replications(&self) -> usize {
        self.preds.len()
    }

    pub fn n_points(&self) -> usize {
        self.truth.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JarqueBera {
    pub skew: f64,
    pub kurt: f64,
    pub jb: f64,
    /// Zero-variance sample: skewness and kurtosis are undefined and reported
    /// as 0 and 3, making the statistic 0.
    pub degenerate: bool,
}

/// Jarque-Bera statistic `(R/6) (S^2 + (K - 3)^2 / 4)` of a sample.
pub fn jarque_bera(sample: &[f64]) -> Result<JarqueBera> {
    let r = sample.len();
    if r < 2 {
        return Err(CateError::InsufficientReplications { needed: 2, got: r });
    }
    Ok(moments(sample).1)
}

/// JB from already-computed skewness and kurtosis.
#[inline]
pub fn jb_from_moments(r: usize, skew: f64, kurt: f64) -> f64 {
    r as f64 / 6.0 * (skew * skew + 0.25 * (kurt - 3.0) * (kurt - 3.0))
}

/// Population standard deviation together with the JB components.
fn moments(sample: &[f64]) -> (f64, JarqueBera) {
    let rf = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / rf;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for &v in sample {
        let d = v - mean;
        m2 += d.powi(2);
        m3 += d.powi(3);
        m4 += d.powi(4);
    }
    m2 /= rf;
    m3 /= rf;
    m4 /= rf;
    let constant = sample.iter().all(|&v| v == sample[0]);
    if constant || m2 == 0.0 {
        return (
            0.0,
            JarqueBera {
                skew: 0.0,
                kurt: 3.0,
                jb: 0.0,
                degenerate: true,
            },
        );
    }
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / m2.powi(2);
    (
        m2.sqrt(),
        JarqueBera {
            skew,
            kurt,
            jb: jb_from_moments(sample.len(), skew, kurt),
            degenerate: false,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsMetrics {
    pub rmse: f64,
    pub abs_bias: f64,
    /// Mean of `tau - tau_hat`.
    pub bias: f64,
    pub sd: f64,
    pub skew: f64,
    pub kurt: f64,
    pub jb: f64,
    pub degenerate: bool,
}

fn obs_metrics(truth: f64, sample: &[f64]) -> ObsMetrics {
    let rf = sample.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut signed = 0.0;
    for &p in sample {
        let e = truth - p;
        sq += e.powi(2);
        abs += e.abs();
        signed += e;
    }
    let (sd, jb) = moments(sample);
    ObsMetrics {
        rmse: (sq / rf).sqrt(),
        abs_bias: abs / rf,
        bias: signed / rf,
        sd,
        skew: jb.skew,
        kurt: jb.kurt,
        jb: jb.jb,
        degenerate: jb.degenerate,
    }
}

/// Metrics of every validation point across replications.
pub fn per_obs_metrics(panel: &PredictionPanel) -> Result<Vec<ObsMetrics>> {
    panel.validate()?;
    let r = panel.n_replications();
    if r < 2 {
        return Err(CateError::InsufficientReplications { needed: 2, got: r });
    }
    Ok((0..panel.n_points())
        .into_par_iter()
        .map(|i| {
            let sample: Vec<f64> = panel.preds.iter().map(|row| row[i]).collect();
            obs_metrics(panel.truth[i], &sample)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub rmse_mean: f64,
    pub abs_bias_mean: f64,
    pub bias_mean: f64,
    pub sd_mean: f64,
    pub skew_mean: f64,
    pub kurt_mean: f64,
    pub jb_mean: f64,
    pub jb_reject_share: f64,
    /// Not applicable when the true CATE is constant on the validation set.
    pub corr: Option<f64>,
    pub varr: Option<f64>,
    pub se_rmse: f64,
    pub replications: usize,
    pub points: usize,
    /// Validation points whose estimates did not vary across replications.
    pub degenerate_points: usize,
    /// Replications with constant predictions, left out of CORR.
    pub constant_replications: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn population_variance(v: &[f64]) -> f64 {
    let mu = mean(v);
    v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / v.len() as f64
}

/// Pearson correlation, `None` if either series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let ma = mean(a);
    let mb = mean(b);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    let constant = |s: &[f64]| s.iter().all(|&v| v == s[0]);
    if va == 0.0 || vb == 0.0 || constant(a) || constant(b) {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// Averages per-observation rows and adds the replication-level measures.
pub fn aggregate(rows: &[ObsMetrics], panel: &PredictionPanel) -> Result<MetricsSummary> {
    if rows.is_empty() {
        return Err(CateError::invalid("no validation points to aggregate"));
    }
    if rows.len() != panel.n_points() {
        return Err(CateError::invalid(format!(
            "{} metric rows for a panel with {} points",
            rows.len(),
            panel.n_points()
        )));
    }
    let m = rows.len() as f64;
    let avg = |f: fn(&ObsMetrics) -> f64| rows.iter().map(f).sum::<f64>() / m;
    let rmse_mean = avg(|o| o.rmse);

    let truth_var = population_variance(&panel.truth);
    let truth_constant = panel.truth.iter().all(|&t| t == panel.truth[0]) || truth_var == 0.0;
    let (corr, varr, constant_replications) = if truth_constant {
        (None, None, 0)
    } else {
        let mut corr_sum = 0.0;
        let mut corr_n = 0usize;
        let mut varr_sum = 0.0;
        for row in &panel.preds {
            if let Some(c) = pearson(&panel.truth, row) {
                corr_sum += c;
                corr_n += 1;
            }
            varr_sum += population_variance(row) / truth_var;
        }
        let r = panel.n_replications();
        let corr = (corr_n > 0).then(|| corr_sum / corr_n as f64);
        (corr, Some(varr_sum / r as f64), r - corr_n)
    };

    let mut se_acc = 0.0;
    for row in &panel.preds {
        let mse = panel
            .truth
            .iter()
            .zip(row)
            .map(|(t, p)| (t - p) * (t - p))
            .sum::<f64>()
            / m;
        se_acc += (mse - rmse_mean) * (mse - rmse_mean);
    }
    let se_rmse = (se_acc / panel.n_replications() as f64).sqrt();

    Ok(MetricsSummary {
        rmse_mean,
        abs_bias_mean: avg(|o| o.abs_bias),
        bias_mean: avg(|o| o.bias),
        sd_mean: avg(|o| o.sd),
        skew_mean: avg(|o| o.skew),
        kurt_mean: avg(|o| o.kurt),
        jb_mean: avg(|o| o.jb),
        jb_reject_share: rows.iter().filter(|o| o.jb > JB_CRITICAL_5).count() as f64 / m,
        corr,
        varr,
        se_rmse,
        replications: panel.n_replications(),
        points: rows.len(),
        degenerate_points: rows.iter().filter(|o| o.degenerate).count(),
        constant_replications,
    })
}

/// `per_obs_metrics` followed by `aggregate`.
pub fn summarize(panel: &PredictionPanel) -> Result<MetricsSummary> {
    let rows = per_obs_metrics(panel)?;
    aggregate(&rows, panel)
}
