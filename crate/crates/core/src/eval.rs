//! Scoring of fitted models: ROC curves and AUC against true labels,
//! switch counts, implied dwell times and density grids for plotting.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::emissions::{mode_count, Emission};
use crate::error::{Error, Result};
use crate::hmm::{stationary_distribution, HmmModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// Decreasing thresholds; the first is `+inf` (nothing classified positive).
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub auc: f64,
}

/// ROC curve of `scores` as predictors of `truth`, sweeping every distinct
/// score as a threshold; the area uses the trapezoid rule, so ties count
/// one half.
pub fn auc(scores: &[f64], truth: &[bool]) -> Result<RocResult> {
    if scores.len() != truth.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::InvalidData {
            index: i,
            reason: "NaN score".into(),
        });
    }
    let n_pos = truth.iter().filter(|t| **t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut thresholds = vec![f64::INFINITY];
    let mut tpr = vec![0.0];
    let mut fpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x0, y0) = (*fpr.last().unwrap(), *tpr.last().unwrap());
        let (x1, y1) = (fp as f64 / n_neg as f64, tp as f64 / n_pos as f64);
        area += (x1 - x0) * (y0 + y1) * 0.5;
        thresholds.push(s);
        tpr.push(y1);
        fpr.push(x1);
    }
    Ok(RocResult {
        thresholds,
        tpr,
        fpr,
        auc: area,
    })
}

/// Number of time points whose state differs from the previous one.
pub fn switch_count(states: &[usize]) -> usize {
    states.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Expected sojourn `1 / (1 - gamma_ii)` under a Markov chain.
pub fn implied_dwell(gamma: &DMatrix<f64>, state: usize) -> Result<f64> {
    if state >= gamma.nrows() {
        return Err(Error::invalid(format!("state {} out of range", state + 1)));
    }
    let g = gamma[(state, state)];
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::invalid(format!("need 0 < gamma_ii < 1, got {g}")));
    }
    Ok(1.0 / (1.0 - g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityGridRow {
    pub x: f64,
    /// 1-based state label.
    pub state: usize,
    pub density: f64,
    pub weighted_density: f64,
}

/// Densities on a uniform grid, weighted by the stationary distribution of
/// the fitted Gamma. Spline models use their knot range; parametric models
/// use `range`, which is required for them.
pub fn density_grid(model: &HmmModel, grid_size: usize, range: Option<(f64, f64)>) -> Result<Vec<DensityGridRow>> {
    if grid_size < 2 {
        return Err(Error::invalid("grid_size must be at least 2"));
    }
    let (lo, hi) = match (&model.emission, range) {
        (Emission::Spline(e), _) => e.basis.knot_range(),
        (Emission::Parametric(_), Some(r)) => r,
        (Emission::Parametric(_), None) => {
            return Err(Error::invalid("parametric density grids need an explicit range"))
        }
    };
    if !(hi > lo) {
        return Err(Error::invalid("empty grid range"));
    }
    let weights = stationary_distribution(&model.transition.gamma());
    let mut rows = Vec::with_capacity(grid_size * model.n_states());
    for i in 0..model.n_states() {
        for g in 0..grid_size {
            let x = lo + (hi - lo) * g as f64 / (grid_size - 1) as f64;
            let density = model.emission.density(i, x);
            rows.push(DensityGridRow {
                x,
                state: i + 1,
                density,
                weighted_density: weights[i] * density,
            });
        }
    }
    Ok(rows)
}

/// One line of the per-replicate summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub replicate: usize,
    pub model_kind: String,
    pub loglik: f64,
    pub auc: Option<f64>,
    /// Gamma entries, row-major.
    pub gamma: Vec<f64>,
    pub mode_counts: Vec<Option<usize>>,
    pub switch_count: usize,
    pub converged: bool,
}

impl SummaryRow {
    pub fn n_states(&self) -> usize {
        (self.gamma.len() as f64).sqrt().round() as usize
    }

    pub fn gamma_entry(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * self.n_states() + j]
    }
}

/// Mode counts on the verification grid; `None` for parametric states.
pub fn mode_counts(model: &HmmModel, grid_size: usize) -> Vec<Option<usize>> {
    match &model.emission {
        Emission::Spline(e) => (0..e.n_states())
            .map(|i| mode_count(e, i, grid_size).ok())
            .collect(),
        Emission::Parametric(p) => vec![None; p.states.len()],
    }
}

fn fmt_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_else(|| "NA".into())
}

/// Writes `replicate,model_kind,loglik,auc,gamma_11..gamma_NN,mode_count_1..N,switch_count,converged`.
pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let n = rows.iter().map(SummaryRow::n_states).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["replicate".to_string(), "model_kind".into(), "loglik".into(), "auc".into()];
    for i in 1..=n {
        for j in 1..=n {
            header.push(format!("gamma_{i}{j}"));
        }
    }
    for i in 1..=n {
        header.push(format!("mode_count_{i}"));
    }
    header.push("switch_count".into());
    header.push("converged".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.replicate.to_string(),
            r.model_kind.clone(),
            r.loglik.to_string(),
            fmt_opt(&r.auc),
        ];
        for k in 0..n * n {
            rec.push(r.gamma.get(k).map(ToString::to_string).unwrap_or_else(|| "NA".into()));
        }
        for k in 0..n {
            rec.push(r.mode_counts.get(k).map(fmt_opt).unwrap_or_else(|| "NA".into()));
        }
        rec.push(r.switch_count.to_string());
        rec.push(r.converged.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_roc(path: &Path, roc: &RocResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "fpr", "tpr"])?;
    for k in 0..roc.thresholds.len() {
        w.write_record([
            roc.thresholds[k].to_string(),
            roc.fpr[k].to_string(),
            roc.tpr[k].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_density_grid(path: &Path, rows: &[DensityGridRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emissions::{init_from_target, ParametricDensity, ParametricEmission, SplineEmission, TargetFamily};
    use crate::hmm::{DeltaMode, TransitionModel};
    use crate::splines::SplineBasis;

    #[test]
    fn auc_examples() {
        let s = [0.9, 0.8, 0.3, 0.1];
        assert_eq!(auc(&s, &[true, true, false, false]).unwrap().auc, 1.0);
        assert!((auc(&s, &[true, false, true, false]).unwrap().auc - 0.75).abs() < 1e-15);
        assert_eq!(auc(&[0.4; 6], &[true, false, true, false, false, true]).unwrap().auc, 0.5);
    }

    #[test]
    fn auc_single_class_is_undefined() {
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedAuc)));
    }

    #[test]
    fn roc_is_monotone() {
        let s = [0.3, 0.3, 0.9, 0.1, 0.5, 0.5, 0.7];
        let t = [true, false, true, false, true, false, false];
        let r = auc(&s, &t).unwrap();
        assert!(r.tpr.windows(2).all(|w| w[0] <= w[1]));
        assert!(r.fpr.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!((*r.fpr.last().unwrap(), *r.tpr.last().unwrap()), (1.0, 1.0));
    }

    #[test]
    fn switch_examples() {
        assert_eq!(switch_count(&[2; 7]), 0);
        let alt: Vec<usize> = (0..10).map(|i| i % 2).collect();
        assert_eq!(switch_count(&alt), 9);
        assert_eq!(switch_count(&[1, 1, 2, 2, 3, 1]), 3);
    }

    #[test]
    fn dwell_examples() {
        let g = |v: f64| DMatrix::from_row_slice(2, 2, &[v, 1.0 - v, 0.5, 0.5]);
        assert!((implied_dwell(&g(0.9), 0).unwrap() - 10.0).abs() < 1e-12);
        assert!((implied_dwell(&g(0.966), 0).unwrap() - 29.411764705882).abs() < 1e-9);
        assert!((implied_dwell(&g(0.5), 0).unwrap() - 2.0).abs() < 1e-12);
        assert!(implied_dwell(&g(1.0), 0).is_err());
    }

    fn trapezoid(rows: &[DensityGridRow], state: usize) -> f64 {
        let r: Vec<&DensityGridRow> = rows.iter().filter(|r| r.state == state).collect();
        r.windows(2)
            .map(|w| 0.5 * (w[1].x - w[0].x) * (w[0].weighted_density + w[1].weighted_density))
            .sum()
    }

    #[test]
    fn grid_integrates_to_stationary_weights() {
        let basis = SplineBasis::new((0.0, 10.0), 20).unwrap();
        let beta = vec![
            init_from_target(&basis, TargetFamily::Normal, 3.0, 1.0).unwrap(),
            init_from_target(&basis, TargetFamily::Normal, 7.0, 1.5).unwrap(),
        ];
        let g = DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.4, 0.6]);
        let model = HmmModel::new(
            TransitionModel::from_gamma(&g, DeltaMode::Stationary).unwrap(),
            Emission::Spline(SplineEmission::new(basis, beta).unwrap()),
        )
        .unwrap();
        let rows = density_grid(&model, 2001, None).unwrap();
        assert!(rows.iter().all(|r| r.density >= 0.0));
        // Stationary distribution of g is (2/3, 1/3).
        assert!((trapezoid(&rows, 1) - 2.0 / 3.0).abs() < 1e-3);
        assert!((trapezoid(&rows, 2) - 1.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn single_state_grid_is_unweighted() {
        let model = HmmModel::new(
            TransitionModel::persistent(1, 0.9, DeltaMode::Stationary).unwrap(),
            Emission::Parametric(ParametricEmission::new(vec![ParametricDensity::Normal { mean: 0.0, sd: 1.0 }]).unwrap()),
        )
        .unwrap();
        let rows = density_grid(&model, 50, Some((-4.0, 4.0))).unwrap();
        assert!(rows.iter().all(|r| (r.density - r.weighted_density).abs() < 1e-15));
        assert!(density_grid(&model, 50, None).is_err());
    }

    #[test]
    fn median_and_mean() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        let (m, s) = mean_sd(&[1.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
