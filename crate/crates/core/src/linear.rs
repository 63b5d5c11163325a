//! L1-regularized logistic regression with class-balanced weighting.
//!
//! The solver is a proximal Newton method: each outer step builds a
//! curvature-weighted quadratic model of the weighted logistic loss,
//! solves it by cyclic coordinate descent with soft-thresholding, and
//! accepts the step through a backtracking line search, so the penalized
//! objective never increases and the KKT conditions are directly
//! checkable at the solution. The bias is never penalized.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::features::{DesignMatrix, DesignTransform, Family, FeatureModality};
use crate::stats;

#[derive(Debug, thiserror::Error)]
pub enum LinearError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("non-finite value in design matrix at row {0}")]
    NonFinite(usize),
    #[error("column count mismatch: model has {model}, input has {input}")]
    ColumnMismatch { model: usize, input: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Regularization strength, either absolute or relative to the smallest
/// value that zeroes every weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSpec {
    Fixed(f64),
    RelativeToMax(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LassoConfig {
    pub lambda: LambdaSpec,
    pub max_sweeps: usize,
    /// KKT residual tolerance declaring convergence.
    pub tol: f64,
    /// Per-class loss weights [negative, positive]; derived from the
    /// label counts as N/(2 N_c) when absent.
    pub class_weights: Option<[f64; 2]>,
    /// Recorded into the model file for provenance; the fit itself is
    /// deterministic.
    pub seed: u64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            lambda: LambdaSpec::RelativeToMax(0.01),
            max_sweeps: 20_000,
            tol: 1e-6,
            class_weights: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LassoLogitModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub class_weights: [f64; 2],
    pub column_metadata_hash: String,
    pub seed: u64,
    pub n_sweeps: usize,
    pub kkt_residual: f64,
    pub converged: bool,
    /// Objective value after each sweep; non-increasing by construction.
    pub objective_history: Vec<f64>,
}

/// Hash of the design-column names, binding a model to its schema.
pub fn column_hash(names: &[String]) -> String {
    let mut hasher = Sha256::new();
    for n in names {
        hasher.update(n.as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

struct Problem<'a> {
    x: &'a DesignMatrix,
    y: &'a [u8],
    c: Vec<f64>, // per-sample class weight
}

impl Problem<'_> {
    fn n(&self) -> f64 {
        self.x.n_rows as f64
    }

    /// Weighted mean logistic loss at margins `z`, plus the L1 penalty.
    fn objective(&self, z: &[f64], w: &[f64], lambda: f64) -> f64 {
        let loss: f64 = z
            .iter()
            .zip(self.y)
            .zip(&self.c)
            .map(|((&zi, &yi), &ci)| ci * (softplus(zi) - f64::from(yi) * zi))
            .sum::<f64>()
            / self.n();
        loss + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Gradient of the smooth part for every coordinate plus the bias,
    /// from scratch.
    fn gradient(&self, z: &[f64]) -> (Vec<f64>, f64) {
        let n = self.n();
        let resid: Vec<f64> = z
            .iter()
            .zip(self.y)
            .zip(&self.c)
            .map(|((&zi, &yi), &ci)| ci * (stats::logistic(zi) - f64::from(yi)))
            .collect();
        let mut g = vec![0.0; self.x.n_cols];
        for (i, r) in resid.iter().enumerate() {
            for (j, v) in self.x.row(i).iter().enumerate() {
                g[j] += r * v;
            }
        }
        g.iter_mut().for_each(|v| *v /= n);
        (g, resid.iter().sum::<f64>() / n)
    }
}

/// Largest KKT residual over all coordinates and the bias: how far the
/// current point is from satisfying the subgradient optimality
/// conditions.
fn kkt_residual(g: &[f64], g_bias: f64, w: &[f64], lambda: f64) -> f64 {
    let mut worst = g_bias.abs();
    for (gj, wj) in g.iter().zip(w) {
        let r = if *wj == 0.0 {
            (gj.abs() - lambda).max(0.0)
        } else {
            (gj + lambda * wj.signum()).abs()
        };
        worst = worst.max(r);
    }
    worst
}

fn derive_class_weights(y: &[u8]) -> [f64; 2] {
    let n = y.len() as f64;
    let n_pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let n_neg = n - n_pos;
    [n / (2.0 * n_neg), n / (2.0 * n_pos)]
}

/// Smallest lambda for which the all-zero weight vector is optimal, with
/// the bias at its unpenalized optimum.
pub fn lambda_max(x: &DesignMatrix, y: &[u8], class_weights: Option<[f64; 2]>) -> Result<f64, LinearError> {
    let cw = class_weights.unwrap_or_else(|| derive_class_weights(y));
    let problem = Problem {
        x,
        y,
        c: y.iter().map(|&yi| cw[yi as usize]).collect(),
    };
    let mut bias = 0.0;
    let h_bias = 0.25 * problem.c.iter().sum::<f64>() / problem.n();
    for _ in 0..100 {
        let g: f64 = problem
            .y
            .iter()
            .zip(&problem.c)
            .map(|(&yi, &ci)| ci * (stats::logistic(bias) - f64::from(yi)))
            .sum::<f64>()
            / problem.n();
        if g.abs() < 1e-12 {
            break;
        }
        bias -= g / h_bias;
    }
    let z = vec![bias; x.n_rows];
    let (g, _) = problem.gradient(&z);
    Ok(g.iter().fold(0.0f64, |a, v| a.max(v.abs())))
}

/// Fits the model by proximal Newton steps, each solved by cyclic
/// coordinate descent with soft-thresholding. The objective is
/// non-increasing across accepted steps (asserted); convergence is
/// declared when every KKT residual falls below `tol`, and exhausting
/// `max_sweeps` inner sweeps first is reported, not an error.
pub fn fit_lasso_logit(
    x: &DesignMatrix,
    y: &[u8],
    column_names: &[String],
    config: &LassoConfig,
) -> Result<LassoLogitModel, LinearError> {
    if x.n_rows != y.len() {
        return Err(LinearError::Dimension(format!(
            "{} rows vs {} labels",
            x.n_rows,
            y.len()
        )));
    }
    if column_names.len() != x.n_cols {
        return Err(LinearError::Dimension(format!(
            "{} names vs {} columns",
            column_names.len(),
            x.n_cols
        )));
    }
    if y.iter().all(|&v| v == 1) || y.iter().all(|&v| v == 0) {
        return Err(LinearError::SingleClass);
    }
    for i in 0..x.n_rows {
        if x.row(i).iter().any(|v| !v.is_finite()) {
            return Err(LinearError::NonFinite(i));
        }
    }
    let cw = config.class_weights.unwrap_or_else(|| derive_class_weights(y));
    let lambda = match config.lambda {
        LambdaSpec::Fixed(l) => l,
        LambdaSpec::RelativeToMax(f) => f * lambda_max(x, y, Some(cw))?,
    };
    let problem = Problem {
        x,
        y,
        c: y.iter().map(|&yi| cw[yi as usize]).collect(),
    };
    let n = problem.n();
    let d = x.n_cols;

    // column-major copy so coordinate updates stream one column
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(x.n_rows); d];
    for i in 0..x.n_rows {
        for (j, v) in x.row(i).iter().enumerate() {
            cols[j].push(*v);
        }
    }

    let mut w = vec![0.0; d];
    let mut bias = 0.0;
    let mut history = Vec::new();
    let mut prev_obj = f64::INFINITY;
    let mut residual; // always set at the top of the loop below
    let mut sweeps = 0usize;
    let mut outer = 0usize;
    let mut converged = false;

    let mut z = vec![0.0; x.n_rows];
    let mut s = vec![0.0; x.n_rows]; // x·dw + db for the candidate step
    let mut h = vec![0.0; x.n_rows]; // per-sample curvature, floored
    let mut hj = vec![0.0; d];
    let mut dw = vec![0.0; d];
    let mut w_try = vec![0.0; d];
    let mut z_try = vec![0.0; x.n_rows];

    const MAX_OUTER: usize = 100;
    loop {
        // margins rebuilt from scratch so incremental drift cannot accumulate
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = x.row(i).iter().zip(&w).map(|(v, wj)| v * wj).sum::<f64>() + bias;
        }
        let (g, g_bias) = problem.gradient(&z);
        residual = kkt_residual(&g, g_bias, &w, lambda);
        if residual <= config.tol {
            converged = true;
            break;
        }
        if sweeps >= config.max_sweeps || outer >= MAX_OUTER {
            break;
        }
        outer += 1;

        // quadratic model with the true logistic curvature (floored to
        // keep the subproblem strongly convex under saturation)
        for ((hi, &zi), &ci) in h.iter_mut().zip(&z).zip(&problem.c) {
            let p = stats::logistic(zi);
            *hi = ci * (p * (1.0 - p)).max(1e-5);
        }
        let h_bar = h.iter().sum::<f64>() / n;
        for (hv, col) in hj.iter_mut().zip(&cols) {
            *hv = col.iter().zip(&h).map(|(v, hi)| hi * v * v).sum::<f64>() / n;
        }

        // inner cyclic coordinate descent with soft-thresholding on the
        // model, solved only as tightly as the current residual warrants
        dw.iter_mut().for_each(|v| *v = 0.0);
        s.iter_mut().for_each(|v| *v = 0.0);
        let mut db = 0.0;
        let inner_tol = (0.1 * residual).max(0.1 * config.tol);
        let budget = (config.max_sweeps - sweeps).min(5_000);
        let mut inner = 0;
        while inner < budget {
            let mut worst = 0.0f64;
            for j in 0..d {
                if hj[j] == 0.0 {
                    continue;
                }
                let gq: f64 = g[j]
                    + cols[j]
                        .iter()
                        .zip(&s)
                        .zip(&h)
                        .map(|((&v, &si), &hi)| hi * si * v)
                        .sum::<f64>()
                        / n;
                let v_old = w[j] + dw[j];
                let viol = if v_old == 0.0 {
                    (gq.abs() - lambda).max(0.0)
                } else {
                    (gq + lambda * v_old.signum()).abs()
                };
                worst = worst.max(viol);
                let u = v_old * hj[j] - gq;
                let v_new = u.signum() * (u.abs() - lambda).max(0.0) / hj[j];
                if v_new != v_old {
                    let delta = v_new - v_old;
                    dw[j] = v_new - w[j];
                    for (si, &v) in s.iter_mut().zip(&cols[j]) {
                        *si += delta * v;
                    }
                }
            }
            let gqb = g_bias + h.iter().zip(&s).map(|(&hi, &si)| hi * si).sum::<f64>() / n;
            worst = worst.max(gqb.abs());
            if h_bar > 0.0 && gqb != 0.0 {
                let delta = -gqb / h_bar;
                db += delta;
                s.iter_mut().for_each(|si| *si += delta);
            }
            inner += 1;
            if worst <= inner_tol {
                break;
            }
        }
        sweeps += inner;

        // backtracking line search keeps the penalized objective monotone
        let base_obj = problem.objective(&z, &w, lambda);
        let penalty_old: f64 = w.iter().map(|v| v.abs()).sum();
        let penalty_new: f64 = w.iter().zip(&dw).map(|(wj, dj)| (wj + dj).abs()).sum();
        let descent: f64 = g.iter().zip(&dw).map(|(gj, dj)| gj * dj).sum::<f64>()
            + g_bias * db
            + lambda * (penalty_new - penalty_old);
        if descent >= 0.0 {
            break; // no usable direction at this precision
        }
        let mut alpha = 1.0f64;
        let mut accepted = None;
        for _ in 0..60 {
            for ((wt, wj), dj) in w_try.iter_mut().zip(&w).zip(&dw) {
                *wt = wj + alpha * dj;
            }
            for ((zt, zi), si) in z_try.iter_mut().zip(&z).zip(&s) {
                *zt = zi + alpha * si;
            }
            let obj = problem.objective(&z_try, &w_try, lambda);
            if obj <= base_obj + 0.25 * alpha * descent + 1e-12 * (1.0 + base_obj.abs()) {
                accepted = Some(obj);
                break;
            }
            alpha *= 0.5;
        }
        let Some(obj) = accepted else { break };
        w.copy_from_slice(&w_try);
        bias += alpha * db;
        assert!(
            obj <= prev_obj + 1e-10 * (1.0 + prev_obj.abs()),
            "objective increased: {prev_obj} -> {obj} at outer step {outer}"
        );
        history.push(obj);
        prev_obj = obj;
    }

    Ok(LassoLogitModel {
        weights: w,
        bias,
        lambda,
        class_weights: cw,
        column_metadata_hash: column_hash(column_names),
        seed: config.seed,
        n_sweeps: sweeps,
        kkt_residual: residual,
        converged,
        objective_history: history,
    })
}

/// Per-row probability logistic(w.x + b).
pub fn predict_proba(model: &LassoLogitModel, x: &DesignMatrix) -> Result<Vec<f64>, LinearError> {
    if x.n_cols != model.weights.len() {
        return Err(LinearError::ColumnMismatch {
            model: model.weights.len(),
            input: x.n_cols,
        });
    }
    Ok((0..x.n_rows)
        .map(|i| {
            let z: f64 = x
                .row(i)
                .iter()
                .zip(&model.weights)
                .map(|(v, w)| v * w)
                .sum::<f64>()
                + model.bias;
            stats::logistic(z)
        })
        .collect())
}

/// Mean absolute coefficient per (modality, family), summarized across
/// folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyCoefficientRow {
    pub modality: FeatureModality,
    pub family: Family,
    pub n_columns: usize,
    /// Mean across folds of the per-fold mean |w| within the family.
    pub mean_abs: f64,
    /// Std (population) across folds.
    pub std_abs: f64,
    /// True when the design kept no column of this family.
    pub missing: bool,
}

pub fn coefficient_family_report(
    models: &[&LassoLogitModel],
    transform: &DesignTransform,
) -> Vec<FamilyCoefficientRow> {
    use std::collections::BTreeMap;
    // group design columns by (modality, family); BTreeMap keyed by debug
    // strings keeps the output order stable
    let mut groups: BTreeMap<(String, String), (FeatureModality, Family, Vec<usize>)> =
        BTreeMap::new();
    for (idx, col) in transform.columns.iter().enumerate() {
        groups
            .entry((format!("{:?}", col.modality), format!("{:?}", col.family)))
            .or_insert((col.modality, col.family, Vec::new()))
            .2
            .push(idx);
    }
    // families that exist in the catalog but kept no columns
    let all_families = [
        Family::Spectral,
        Family::Quantiles,
        Family::Wavelet,
        Family::Trend,
        Family::Autocorrelation,
        Family::Counts,
        Family::Entropy,
        Family::Summary,
        Family::Autoregressive,
        Family::NonlinearDynamics,
        Family::Peaks,
        Family::Boolean,
        Family::Stationarity,
        Family::Other,
        Family::Similarity,
    ];
    let mut rows = Vec::new();
    for &modality in &transform.modalities {
        for family in all_families {
            let key = (format!("{modality:?}"), format!("{family:?}"));
            match groups.get(&key) {
                Some((_, _, idxs)) => {
                    let per_fold: Vec<f64> = models
                        .iter()
                        .map(|m| {
                            idxs.iter().map(|&i| m.weights[i].abs()).sum::<f64>() / idxs.len() as f64
                        })
                        .collect();
                    rows.push(FamilyCoefficientRow {
                        modality,
                        family,
                        n_columns: idxs.len(),
                        mean_abs: stats::mean(&per_fold),
                        std_abs: stats::std_dev(&per_fold, 0),
                        missing: false,
                    });
                }
                None => rows.push(FamilyCoefficientRow {
                    modality,
                    family,
                    n_columns: 0,
                    mean_abs: f64::NAN,
                    std_abs: f64::NAN,
                    missing: true,
                }),
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: Vec<Vec<f64>>) -> DesignMatrix {
        let n_rows = rows.len();
        let n_cols = rows[0].len();
        DesignMatrix {
            n_rows,
            n_cols,
            data: rows.into_iter().flatten().collect(),
        }
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("col{i}")).collect()
    }

    #[test]
    fn huge_lambda_zeroes_everything() {
        let x = matrix(vec![
            vec![1.0, -0.5],
            vec![0.5, 0.2],
            vec![-1.0, 0.8],
            vec![-0.2, -1.0],
        ]);
        let y = [1, 1, 0, 0];
        let config = LassoConfig {
            lambda: LambdaSpec::Fixed(1e6),
            ..Default::default()
        };
        let m = fit_lasso_logit(&x, &y, &names(2), &config).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        // balanced class weights make the weighted prevalence 1/2
        assert!(m.bias.abs() < 1e-6, "bias {}", m.bias);
    }

    #[test]
    fn lambda_at_max_is_zero_solution_and_below_is_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|i| {
                let signal = if i < 30 { 1.0 } else { -1.0 };
                vec![signal + 0.3 * rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
            })
            .collect();
        let y: Vec<u8> = (0..60).map(|i| u8::from(i < 30)).collect();
        let x = matrix(rows);
        let at_max = fit_lasso_logit(
            &x,
            &y,
            &names(2),
            &LassoConfig { lambda: LambdaSpec::RelativeToMax(1.0), ..Default::default() },
        )
        .unwrap();
        assert!(at_max.weights.iter().all(|&w| w.abs() < 1e-9), "{:?}", at_max.weights);
        let below = fit_lasso_logit(
            &x,
            &y,
            &names(2),
            &LassoConfig { lambda: LambdaSpec::RelativeToMax(0.5), ..Default::default() },
        )
        .unwrap();
        assert!(below.weights.iter().any(|&w| w != 0.0));
    }

    #[test]
    fn separable_pair_ranks_correctly_without_penalty() {
        let x = matrix(vec![vec![1.0], vec![-1.0]]);
        let y = [1, 0];
        let config = LassoConfig {
            lambda: LambdaSpec::Fixed(0.0),
            max_sweeps: 50,
            ..Default::default()
        };
        let m = fit_lasso_logit(&x, &y, &names(1), &config).unwrap();
        // separable: the optimum is at infinity, so the fit ends either on
        // the sweep budget or when the gradient underflows the tolerance;
        // both leave finite weights that rank the points correctly
        assert!(m.weights[0].is_finite() && m.weights[0] > 0.0);
        for pair in m.objective_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
        let p = predict_proba(&m, &x).unwrap();
        assert!(p[0] > 0.9 && p[1] < 0.1);
    }

    #[test]
    fn kkt_conditions_hold_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for trial in 0..10 {
            let n = 20;
            let d = 5;
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            if y.iter().all(|&v| v == y[0]) {
                continue;
            }
            let x = matrix(rows);
            let m = fit_lasso_logit(
                &x,
                &y,
                &names(d),
                &LassoConfig { lambda: LambdaSpec::RelativeToMax(0.1), ..Default::default() },
            )
            .unwrap();
            assert!(m.converged, "trial {trial} did not converge");

            // independent KKT verification from scratch
            let cw = m.class_weights;
            let margins: Vec<f64> = (0..n)
                .map(|i| {
                    x.row(i).iter().zip(&m.weights).map(|(a, b)| a * b).sum::<f64>() + m.bias
                })
                .collect();
            for j in 0..d {
                let g: f64 = (0..n)
                    .map(|i| {
                        let ci = cw[y[i] as usize];
                        ci * (crate::stats::logistic(margins[i]) - f64::from(y[i])) * x.row(i)[j]
                    })
                    .sum::<f64>()
                    / n as f64;
                if m.weights[j] == 0.0 {
                    assert!(g.abs() <= m.lambda + 1e-6, "trial {trial} col {j}: |g|={}", g.abs());
                } else {
                    let r = (g + m.lambda * m.weights[j].signum()).abs();
                    assert!(r <= 1e-6, "trial {trial} col {j}: r={r}");
                }
            }
        }
    }

    #[test]
    fn predict_reference_values() {
        let m = LassoLogitModel {
            weights: vec![0.0, 0.0],
            bias: 0.0,
            lambda: 0.0,
            class_weights: [1.0, 1.0],
            column_metadata_hash: String::new(),
            seed: 0,
            n_sweeps: 0,
            kkt_residual: 0.0,
            converged: true,
            objective_history: vec![],
        };
        let x = matrix(vec![vec![3.0, -2.0]]);
        assert_eq!(predict_proba(&m, &x).unwrap()[0], 0.5);

        let m2 = LassoLogitModel { weights: vec![1.0, 0.0], bias: 0.0, ..m.clone() };
        let x2 = matrix(vec![vec![3.0f64.ln(), 0.0]]);
        let p = predict_proba(&m2, &x2).unwrap()[0];
        assert!((p - 0.75).abs() < 1e-12);

        // monotone in a positive-weight feature
        let x3 = matrix(vec![vec![0.2, 0.0], vec![0.8, 0.0]]);
        let p3 = predict_proba(&m2, &x3).unwrap();
        assert!(p3[1] > p3[0]);

        let bad = matrix(vec![vec![1.0]]);
        assert!(predict_proba(&m2, &bad).is_err());
    }

    #[test]
    fn positive_class_weight_raises_recall() {
        // two overlapping clusters
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..200 {
            let pos = i % 2 == 0;
            let center: f64 = if pos { 0.4 } else { -0.4 };
            rows.push(vec![center + rng.random_range(-1.0..1.0)]);
            y.push(u8::from(pos));
        }
        let x = matrix(rows.clone());
        let base_cfg = LassoConfig {
            lambda: LambdaSpec::Fixed(0.0),
            class_weights: Some([1.0, 1.0]),
            max_sweeps: 500,
            ..Default::default()
        };
        let heavy_cfg = LassoConfig {
            class_weights: Some([1.0, 2.0]),
            ..base_cfg.clone()
        };
        let base = fit_lasso_logit(&x, &y, &names(1), &base_cfg).unwrap();
        let heavy = fit_lasso_logit(&x, &y, &names(1), &heavy_cfg).unwrap();
        let rate = |m: &LassoLogitModel| {
            predict_proba(m, &x)
                .unwrap()
                .iter()
                .filter(|&&p| p >= 0.5)
                .count()
        };
        assert!(rate(&heavy) >= rate(&base));
    }

    #[test]
    fn duplicated_columns_share_weight_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let feats: Vec<f64> = (0..80)
            .map(|i| if i < 40 { 0.8 } else { -0.8 } + 0.2 * rng.random_range(-1.0..1.0))
            .collect();
        let y: Vec<u8> = (0..80).map(|i| u8::from(i < 40)).collect();
        let single = matrix(feats.iter().map(|&v| vec![v]).collect());
        let doubled = matrix(feats.iter().map(|&v| vec![v, v]).collect());
        let cfg = LassoConfig {
            lambda: LambdaSpec::Fixed(0.02),
            max_sweeps: 5000,
            ..Default::default()
        };
        let m1 = fit_lasso_logit(&single, &y, &names(1), &cfg).unwrap();
        let m2 = fit_lasso_logit(&doubled, &y, &names(2), &cfg).unwrap();
        assert!(m1.converged && m2.converged);
        let total1: f64 = m1.weights.iter().sum();
        let total2: f64 = m2.weights.iter().sum();
        assert!((total1 - total2).abs() < 1e-4, "{total1} vs {total2}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = matrix(vec![vec![1.0], vec![2.0]]);
        assert!(matches!(
            fit_lasso_logit(&x, &[1, 1], &names(1), &LassoConfig::default()),
            Err(LinearError::SingleClass)
        ));
        let nan = matrix(vec![vec![f64::NAN], vec![1.0]]);
        assert!(matches!(
            fit_lasso_logit(&nan, &[1, 0], &names(1), &LassoConfig::default()),
            Err(LinearError::NonFinite(0))
        ));
    }

    #[test]
    fn family_report_groups_columns() {
        use crate::features::{ColumnStats, DesignTransform, MissingPolicy};
        let transform = DesignTransform {
            policy: MissingPolicy::Median,
            modalities: vec![FeatureModality::Accel],
            columns: vec![
                ColumnStats {
                    name: "accel__mean".into(),
                    family: Family::Summary,
                    modality: FeatureModality::Accel,
                    index: 0,
                    missing_frac: 0.0,
                    median: 0.0,
                    mean: 0.0,
                    std: 1.0,
                },
                ColumnStats {
                    name: "accel__sample_entropy".into(),
                    family: Family::Entropy,
                    modality: FeatureModality::Accel,
                    index: 1,
                    missing_frac: 0.0,
                    median: 0.0,
                    mean: 0.0,
                    std: 1.0,
                },
            ],
            dropped: vec![],
        };
        let base = LassoLogitModel {
            weights: vec![0.0, 0.4],
            bias: 0.0,
            lambda: 0.0,
            class_weights: [1.0, 1.0],
            column_metadata_hash: String::new(),
            seed: 0,
            n_sweeps: 1,
            kkt_residual: 0.0,
            converged: true,
            objective_history: vec![],
        };
        let fold2 = base.clone();
        let rows = coefficient_family_report(&[&base, &fold2], &transform);
        let entropy = rows
            .iter()
            .find(|r| matches!(r.family, Family::Entropy))
            .unwrap();
        assert_eq!(entropy.mean_abs, 0.4);
        assert_eq!(entropy.std_abs, 0.0);
        assert!(!entropy.missing);
        let summary = rows.iter().find(|r| matches!(r.family, Family::Summary)).unwrap();
        assert_eq!(summary.mean_abs, 0.0);
        // families with no kept columns are flagged, not fabricated
        let wavelet = rows.iter().find(|r| matches!(r.family, Family::Wavelet)).unwrap();
        assert!(wavelet.missing);
        assert_eq!(wavelet.n_columns, 0);
    }
}
