//! Signal cleaning and derived streams: outlier removal, z-score
//! normalization, accelerometer magnitude, and the windowed arousal
//! estimate that feeds both model families.

use serde::{Deserialize, Serialize};

use crate::data::{DataError, DrivingPhase, Modality, Sample, SampleSeries};
use crate::stats;

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("series has zero variance, cannot z-score")]
    DegenerateStd,
    #[error("series is empty")]
    Empty,
    #[error("accelerometer axes disagree: {0}")]
    AxisMismatch(String),
    #[error("arousal model: {0}")]
    Model(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Cleaning thresholds. The defaults bound inter-beat intervals to the
/// physiologically plausible band and drop beats that jump more than 50%
/// relative to the last accepted beat, which removes most missed- and
/// double-detection artifacts of wrist PPG.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CleanConfig {
    pub ibi_min_ms: f64,
    pub ibi_max_ms: f64,
    /// Max allowed |ibi - prev| as a fraction of the previously kept beat.
    pub ibi_max_rel_step: f64,
    pub hr_min_bpm: f64,
    pub hr_max_bpm: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            ibi_min_ms: 300.0,
            ibi_max_ms: 2000.0,
            ibi_max_rel_step: 0.5,
            hr_min_bpm: 30.0,
            hr_max_bpm: 220.0,
        }
    }
}

/// Counts of what the cleaning pass removed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlierStats {
    pub kept: usize,
    pub dropped_range: usize,
    pub dropped_step: usize,
}

/// Removes implausible inter-beat intervals: first by absolute range,
/// then by relative step against the last kept sample.
pub fn remove_ibi_outliers(
    series: &SampleSeries,
    config: &CleanConfig,
) -> (SampleSeries, OutlierStats) {
    let mut kept: Vec<Sample> = Vec::with_capacity(series.len());
    let mut st = OutlierStats::default();
    for &s in series.samples() {
        if s.value < config.ibi_min_ms || s.value > config.ibi_max_ms {
            st.dropped_range += 1;
            continue;
        }
        if let Some(prev) = kept.last() {
            if (s.value - prev.value).abs() > config.ibi_max_rel_step * prev.value {
                st.dropped_step += 1;
                continue;
            }
        }
        kept.push(s);
    }
    st.kept = kept.len();
    (series.with_samples(Modality::IbiMs, kept), st)
}

/// Removes heart-rate readings outside the plausible range.
pub fn remove_hr_outliers(
    series: &SampleSeries,
    config: &CleanConfig,
) -> (SampleSeries, OutlierStats) {
    let mut kept: Vec<Sample> = Vec::with_capacity(series.len());
    let mut st = OutlierStats::default();
    for &s in series.samples() {
        if s.value < config.hr_min_bpm || s.value > config.hr_max_bpm {
            st.dropped_range += 1;
        } else {
            kept.push(s);
        }
    }
    st.kept = kept.len();
    (series.with_samples(Modality::HrBpm, kept), st)
}

/// Mean and standard deviation used for normalization, kept so the same
/// transform can be replayed on other data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

/// Computes per-series normalization statistics (population std).
pub fn norm_stats(series: &SampleSeries) -> Result<NormStats, PreprocessError> {
    if series.is_empty() {
        return Err(PreprocessError::Empty);
    }
    let values: Vec<f64> = series.samples().iter().map(|s| s.value).collect();
    let std = stats::std_dev(&values, 0);
    if !(std > 0.0) {
        return Err(PreprocessError::DegenerateStd);
    }
    Ok(NormStats {
        mean: stats::mean(&values),
        std,
    })
}

/// Applies `(x - mean) / std` to every sample.
pub fn apply_zscore(series: &SampleSeries, st: NormStats) -> SampleSeries {
    let samples = series
        .samples()
        .iter()
        .map(|s| Sample {
            t_s: s.t_s,
            value: (s.value - st.mean) / st.std,
        })
        .collect();
    series.with_samples(series.modality, samples)
}

/// Z-scores a series against its own statistics. This is the standard
/// per-participant normalization: it removes individual baselines so that
/// only within-person change is left for the models.
pub fn zscore(series: &SampleSeries) -> Result<(SampleSeries, NormStats), PreprocessError> {
    let st = norm_stats(series)?;
    Ok((apply_zscore(series, st), st))
}

/// Z-scores each driving phase against its own within-phase statistics,
/// discarding samples outside every phase.
///
/// This deliberately removes any between-phase level shift; it exists as
/// a control to show how much of a model's signal is mean shift versus
/// within-window dynamics.
pub fn zscore_per_phase(
    series: &SampleSeries,
    phases: &[DrivingPhase],
) -> Result<SampleSeries, PreprocessError> {
    let mut out: Vec<Sample> = Vec::with_capacity(series.len());
    for phase in phases {
        let slice = series.slice_closed(phase.start_s, phase.end_s);
        if slice.is_empty() {
            continue;
        }
        let values: Vec<f64> = slice.iter().map(|s| s.value).collect();
        let std = stats::std_dev(&values, 0);
        if !(std > 0.0) {
            return Err(PreprocessError::DegenerateStd);
        }
        let m = stats::mean(&values);
        out.extend(slice.iter().map(|s| Sample {
            t_s: s.t_s,
            value: (s.value - m) / std,
        }));
    }
    if out.is_empty() {
        return Err(PreprocessError::Empty);
    }
    Ok(series.with_samples(series.modality, out))
}

/// Combines the three accelerometer axes into the orientation-free
/// magnitude sqrt(x^2 + y^2 + z^2). Axes must share timestamps exactly,
/// which holds for anything read from a single accelerometer file.
pub fn accel_magnitude(
    x: &SampleSeries,
    y: &SampleSeries,
    z: &SampleSeries,
) -> Result<SampleSeries, PreprocessError> {
    if x.len() != y.len() || x.len() != z.len() {
        return Err(PreprocessError::AxisMismatch(format!(
            "lengths {}/{}/{}",
            x.len(),
            y.len(),
            z.len()
        )));
    }
    let mut samples = Vec::with_capacity(x.len());
    for ((sx, sy), sz) in x.samples().iter().zip(y.samples()).zip(z.samples()) {
        if sx.t_s != sy.t_s || sx.t_s != sz.t_s {
            return Err(PreprocessError::AxisMismatch(format!(
                "timestamps diverge at t={}",
                sx.t_s
            )));
        }
        samples.push(Sample {
            t_s: sx.t_s,
            value: (sx.value * sx.value + sy.value * sy.value + sz.value * sz.value).sqrt(),
        });
    }
    Ok(x.with_samples(Modality::AccelMagG, samples))
}

// ---------------------------------------------------------------------------
// Arousal estimation
// ---------------------------------------------------------------------------

/// Canonical order of the short-window heart features the arousal
/// surrogate consumes.
pub const AROUSAL_FEATURE_NAMES: [&str; 13] = [
    "ibi_mean",
    "ibi_std",
    "ibi_median",
    "ibi_min",
    "ibi_max",
    "ibi_p20",
    "ibi_p80",
    "ibi_rmssd",
    "hr_mean",
    "hr_std",
    "hr_median",
    "hr_p20",
    "hr_p80",
];

/// Logistic model mapping the 13 short-window heart features to an
/// arousal probability. Shipped as a small JSON file so the estimator can
/// be swapped without touching code.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArousalModel {
    pub feature_order: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ArousalModel {
    pub fn from_json(json: &str) -> Result<Self, PreprocessError> {
        let model: ArousalModel = serde_json::from_str(json)?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.weights.len() != self.feature_order.len() {
            return Err(PreprocessError::Model(format!(
                "{} weights for {} features",
                self.weights.len(),
                self.feature_order.len()
            )));
        }
        let canonical: std::collections::HashSet<&str> =
            AROUSAL_FEATURE_NAMES.iter().copied().collect();
        for name in &self.feature_order {
            if !canonical.contains(name.as_str()) {
                return Err(PreprocessError::Model(format!("unknown feature {name}")));
            }
        }
        if self.feature_order.len() != canonical.len() {
            return Err(PreprocessError::Model(format!(
                "expected {} distinct features, got {}",
                canonical.len(),
                self.feature_order.len()
            )));
        }
        Ok(())
    }

    /// A deterministic default: arousal rises with heart rate and with
    /// reduced beat-to-beat variability, the two strongest short-window
    /// correlates of sympathetic activation.
    pub fn bundled() -> Self {
        let mut weights = vec![0.0; 13];
        let idx = |name: &str| {
            AROUSAL_FEATURE_NAMES
                .iter()
                .position(|n| *n == name)
                .unwrap()
        };
        weights[idx("ibi_mean")] = -0.9;
        weights[idx("ibi_rmssd")] = -0.6;
        weights[idx("ibi_std")] = -0.3;
        weights[idx("hr_mean")] = 0.9;
        weights[idx("hr_std")] = 0.2;
        Self {
            feature_order: AROUSAL_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            weights,
            bias: 0.0,
        }
    }

    fn score(&self, by_name: &dyn Fn(&str) -> f64) -> f64 {
        let z: f64 = self
            .feature_order
            .iter()
            .zip(&self.weights)
            .map(|(name, w)| w * by_name(name))
            .sum::<f64>()
            + self.bias;
        stats::logistic(z)
    }
}

/// Windowing parameters for the arousal estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArousalConfig {
    pub window_s: f64,
    pub step_s: f64,
    /// Minimum beats (and heart-rate readings) a window needs before the
    /// features are considered meaningful.
    pub min_samples: usize,
}

impl Default for ArousalConfig {
    fn default() -> Self {
        Self {
            window_s: 60.0,
            step_s: 1.0,
            min_samples: 2,
        }
    }
}

/// The 13 short-window features in canonical order.
pub fn arousal_features(ibi: &[f64], hr: &[f64]) -> [f64; 13] {
    let rmssd = {
        if ibi.len() < 2 {
            f64::NAN
        } else {
            let ss: f64 = ibi.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
            (ss / (ibi.len() - 1) as f64).sqrt()
        }
    };
    let mut sorted_ibi = ibi.to_vec();
    sorted_ibi.sort_by(f64::total_cmp);
    let mut sorted_hr = hr.to_vec();
    sorted_hr.sort_by(f64::total_cmp);
    [
        stats::mean(ibi),
        stats::std_dev(ibi, 0),
        stats::quantile_sorted(&sorted_ibi, 0.5),
        sorted_ibi.first().copied().unwrap_or(f64::NAN),
        sorted_ibi.last().copied().unwrap_or(f64::NAN),
        stats::quantile_sorted(&sorted_ibi, 0.2),
        stats::quantile_sorted(&sorted_ibi, 0.8),
        rmssd,
        stats::mean(hr),
        stats::std_dev(hr, 0),
        stats::quantile_sorted(&sorted_hr, 0.5),
        stats::quantile_sorted(&sorted_hr, 0.2),
        stats::quantile_sorted(&sorted_hr, 0.8),
    ]
}

/// Produces a 1 Hz arousal-probability series from cleaned, z-scored IBI
/// and HR streams. Each output sample at time t summarizes the trailing
/// `window_s` seconds; windows with too few beats are skipped, so gaps in
/// the input propagate to gaps in the output.
pub fn estimate_arousal(
    ibi: &SampleSeries,
    hr: &SampleSeries,
    model: &ArousalModel,
    config: &ArousalConfig,
) -> Result<SampleSeries, PreprocessError> {
    model.validate()?;
    if ibi.is_empty() && hr.is_empty() {
        return Err(PreprocessError::Empty);
    }
    let t0 = ibi
        .samples()
        .first()
        .map(|s| s.t_s)
        .into_iter()
        .chain(hr.samples().first().map(|s| s.t_s))
        .fold(f64::INFINITY, f64::min);
    let t1 = ibi
        .samples()
        .last()
        .map(|s| s.t_s)
        .into_iter()
        .chain(hr.samples().last().map(|s| s.t_s))
        .fold(f64::NEG_INFINITY, f64::max);

    let mut out = Vec::new();
    let mut t = (t0 + config.window_s).ceil();
    while t <= t1 {
        let ibi_vals: Vec<f64> = ibi
            .slice(t - config.window_s, t + 1e-9)
            .iter()
            .map(|s| s.value)
            .collect();
        let hr_vals: Vec<f64> = hr
            .slice(t - config.window_s, t + 1e-9)
            .iter()
            .map(|s| s.value)
            .collect();
        if ibi_vals.len() >= config.min_samples && hr_vals.len() >= config.min_samples {
            let feats = arousal_features(&ibi_vals, &hr_vals);
            let p = model.score(&|name| {
                let i = AROUSAL_FEATURE_NAMES.iter().position(|n| *n == name).unwrap();
                feats[i]
            });
            out.push(Sample { t_s: t, value: p });
        }
        t += config.step_s;
    }
    Ok(SampleSeries::new(Modality::ArousalProb, out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Modality;

    fn series(modality: Modality, pairs: &[(f64, f64)]) -> SampleSeries {
        SampleSeries::new(
            modality,
            pairs.iter().map(|&(t, v)| Sample { t_s: t, value: v }).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ibi_filter_applies_range_then_step() {
        let s = series(
            Modality::IbiMs,
            &[
                (0.0, 800.0),
                (0.8, 810.0),
                (1.6, 1300.0), // jumps 490ms from 810 -> dropped (limit 405)
                (2.4, 820.0),  // compared against 810, kept
                (3.2, 250.0),  // below absolute range
                (4.0, 2100.0), // above absolute range
                (4.8, 900.0),
            ],
        );
        let (clean, st) = remove_ibi_outliers(&s, &CleanConfig::default());
        let vals: Vec<f64> = clean.samples().iter().map(|x| x.value).collect();
        assert_eq!(vals, vec![800.0, 810.0, 820.0, 900.0]);
        assert_eq!(st.dropped_range, 2);
        assert_eq!(st.dropped_step, 1);
        assert_eq!(st.kept, 4);
    }

    #[test]
    fn ibi_step_filter_compares_against_last_kept() {
        // After dropping the spike, the next normal beat must survive.
        let s = series(Modality::IbiMs, &[(0.0, 600.0), (0.6, 1000.0), (1.2, 620.0)]);
        let (clean, st) = remove_ibi_outliers(&s, &CleanConfig::default());
        let vals: Vec<f64> = clean.samples().iter().map(|x| x.value).collect();
        assert_eq!(vals, vec![600.0, 620.0]);
        assert_eq!(st.dropped_step, 1);
    }

    #[test]
    fn hr_filter_bounds() {
        let s = series(
            Modality::HrBpm,
            &[(0.0, 25.0), (1.0, 60.0), (2.0, 180.0), (3.0, 230.0)],
        );
        let (clean, st) = remove_hr_outliers(&s, &CleanConfig::default());
        let vals: Vec<f64> = clean.samples().iter().map(|x| x.value).collect();
        assert_eq!(vals, vec![60.0, 180.0]);
        assert_eq!(st.dropped_range, 2);
    }

    #[test]
    fn zscore_normalizes_to_unit_stats() {
        let s = series(
            Modality::HrBpm,
            &[(0.0, 60.0), (1.0, 70.0), (2.0, 80.0), (3.0, 90.0)],
        );
        let (z, st) = zscore(&s).unwrap();
        let vals: Vec<f64> = z.samples().iter().map(|x| x.value).collect();
        let m = crate::stats::mean(&vals);
        let sd = crate::stats::std_dev(&vals, 0);
        assert!(m.abs() < 1e-12);
        assert!((sd - 1.0).abs() < 1e-12);
        assert_eq!(st.mean, 75.0);
        // replaying the stats on new data uses the same affine map
        let applied = apply_zscore(&s, st);
        assert_eq!(applied.samples(), z.samples());
    }

    #[test]
    fn zscore_rejects_constant_series() {
        let s = series(Modality::HrBpm, &[(0.0, 60.0), (1.0, 60.0)]);
        assert!(matches!(zscore(&s), Err(PreprocessError::DegenerateStd)));
    }

    #[test]
    fn per_phase_zscore_removes_level_shift() {
        let phases = vec![
            crate::data::DrivingPhase {
                participant_id: "p".into(),
                phase_index: 1,
                start_s: 0.0,
                end_s: 10.0,
                scenario_sequence: vec![],
            },
            crate::data::DrivingPhase {
                participant_id: "p".into(),
                phase_index: 2,
                start_s: 20.0,
                end_s: 30.0,
                scenario_sequence: vec![],
            },
        ];
        // phase 2 shifted by +100 but same shape; also a sample in the gap
        let s = series(
            Modality::HrBpm,
            &[
                (0.0, 60.0),
                (5.0, 70.0),
                (10.0, 80.0),
                (15.0, 500.0),
                (20.0, 160.0),
                (25.0, 170.0),
                (30.0, 180.0),
            ],
        );
        let z = zscore_per_phase(&s, &phases).unwrap();
        assert_eq!(z.len(), 6); // gap sample dropped
        let v: Vec<f64> = z.samples().iter().map(|x| x.value).collect();
        for i in 0..3 {
            assert!((v[i] - v[i + 3]).abs() < 1e-12, "phases differ: {v:?}");
        }
    }

    #[test]
    fn magnitude_of_unit_axes() {
        let x = series(Modality::AccelXG, &[(0.0, 1.0), (0.04, 3.0)]);
        let y = series(Modality::AccelYG, &[(0.0, 1.0), (0.04, 0.0)]);
        let z = series(Modality::AccelZG, &[(0.0, 1.0), (0.04, 4.0)]);
        let m = accel_magnitude(&x, &y, &z).unwrap();
        assert!((m.samples()[0].value - 1.7320508).abs() < 1e-6);
        assert!((m.samples()[1].value - 5.0).abs() < 1e-12);
        assert_eq!(m.modality, Modality::AccelMagG);
    }

    #[test]
    fn magnitude_rejects_mismatched_axes() {
        let x = series(Modality::AccelXG, &[(0.0, 1.0), (0.04, 1.0)]);
        let y = series(Modality::AccelYG, &[(0.0, 1.0)]);
        let z = series(Modality::AccelZG, &[(0.0, 1.0), (0.04, 1.0)]);
        assert!(accel_magnitude(&x, &y, &z).is_err());
        let y2 = series(Modality::AccelYG, &[(0.01, 1.0), (0.04, 1.0)]);
        assert!(accel_magnitude(&x, &y2, &z).is_err());
    }

    #[test]
    fn window_features_reference_values() {
        let ibi = [800.0, 810.0, 790.0, 830.0];
        let hr: Vec<f64> = (1..=10).map(f64::from).collect();
        let f = arousal_features(&ibi, &hr);
        assert!((f[0] - 807.5).abs() < 1e-12); // ibi_mean
        assert_eq!(f[3], 790.0); // ibi_min
        assert_eq!(f[4], 830.0); // ibi_max
        assert!((f[10] - 5.5).abs() < 1e-12); // hr_median
        assert!((f[11] - 2.8).abs() < 1e-12); // hr_p20
        assert!((f[12] - 8.2).abs() < 1e-12); // hr_p80
    }

    #[test]
    fn rmssd_reference_value() {
        // successive diffs 10 and 20 -> sqrt((100+400)/2)
        let f = arousal_features(&[800.0, 810.0, 830.0], &[70.0, 71.0]);
        assert!((f[7] - 15.8113883).abs() < 1e-6);
    }

    #[test]
    fn arousal_series_is_probability_at_one_hz() {
        let model = ArousalModel::bundled();
        let cfg = ArousalConfig::default();
        let ibi_samples: Vec<(f64, f64)> = (0..200)
            .map(|i| (i as f64 * 0.8, 800.0 + (i % 7) as f64 * 5.0))
            .collect();
        let hr_samples: Vec<(f64, f64)> = (0..160)
            .map(|i| (i as f64, 72.0 + (i % 5) as f64))
            .collect();
        let ibi = series(Modality::IbiMs, &ibi_samples);
        let hr = series(Modality::HrBpm, &hr_samples);
        let (ibi_z, _) = zscore(&ibi).unwrap();
        let (hr_z, _) = zscore(&hr).unwrap();
        let arousal = estimate_arousal(&ibi_z, &hr_z, &model, &cfg).unwrap();
        assert!(!arousal.is_empty());
        for w in arousal.samples().windows(2) {
            assert!((w[1].t_s - w[0].t_s - 1.0).abs() < 1e-9);
        }
        for s in arousal.samples() {
            assert!((0.0..=1.0).contains(&s.value));
        }
        // first window ends one full window after the stream starts
        assert!(arousal.samples()[0].t_s >= cfg.window_s);
    }

    #[test]
    fn arousal_skips_gappy_windows() {
        let model = ArousalModel::bundled();
        let cfg = ArousalConfig::default();
        // beats for 70s, a 120s dropout, then more beats
        let mut pairs: Vec<(f64, f64)> = (0..87).map(|i| (i as f64 * 0.8, 800.0)).collect();
        pairs.extend((0..87).map(|i| (190.0 + i as f64 * 0.8, 820.0)));
        let ibi = series(Modality::IbiMs, &pairs);
        let hr = series(
            Modality::HrBpm,
            &pairs.iter().map(|&(t, _)| (t, 75.0)).collect::<Vec<_>>(),
        );
        let arousal = estimate_arousal(&ibi, &hr, &model, &cfg).unwrap();
        let times: Vec<f64> = arousal.samples().iter().map(|s| s.t_s).collect();
        // windows fully inside the dropout produce nothing
        assert!(times.iter().any(|&t| t < 130.0));
        assert!(!times.iter().any(|&t| t > 130.0 && t < 190.0));
        assert!(times.iter().any(|&t| t > 250.0));
    }

    #[test]
    fn arousal_model_json_roundtrip_and_validation() {
        let model = ArousalModel::bundled();
        let json = serde_json::to_string(&model).unwrap();
        let back = ArousalModel::from_json(&json).unwrap();
        assert_eq!(back.weights, model.weights);

        let bad = r#"{"feature_order":["ibi_mean"],"weights":[0.5,0.2],"bias":0}"#;
        assert!(ArousalModel::from_json(bad).is_err());
        let unknown = r#"{"feature_order":["nope"],"weights":[0.5],"bias":0}"#;
        assert!(ArousalModel::from_json(unknown).is_err());
    }
}
