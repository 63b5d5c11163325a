//! Per-window feature catalog for the linear pipeline.
//!
//! Each window yields one vector per modality (arousal, acceleration
//! magnitude). The catalog fixes which features exist and with which
//! parameters; names and computation are emitted from a single generator
//! so the schema cannot drift from the numbers.

pub mod calc;

use serde::{Deserialize, Serialize};

use crate::data::{Group, Task, TaskLabel};
use crate::stats;
use crate::window::WindowSegment;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("no feature rows")]
    Empty,
    #[error("feature schemas differ between rows")]
    SchemaMismatch,
    #[error("catalog: {0}")]
    Catalog(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Which stream a feature was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureModality {
    Arousal,
    Accel,
}

impl FeatureModality {
    pub fn prefix(self) -> &'static str {
        match self {
            FeatureModality::Arousal => "arousal",
            FeatureModality::Accel => "accel",
        }
    }
}

/// Feature families; every family contributes at least one catalog entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Spectral,
    Quantiles,
    Wavelet,
    Trend,
    Autocorrelation,
    Counts,
    Entropy,
    Summary,
    Autoregressive,
    NonlinearDynamics,
    Peaks,
    Boolean,
    Stationarity,
    Other,
    Similarity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub family: Family,
}

/// The versioned feature schema. `entropy_max_samples` caps the quadratic
/// entropy estimators: longer inputs are strided down to at most this many
/// samples before matching templates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureCatalog {
    pub version: u32,
    pub entropy_max_samples: usize,
    pub entries: Vec<FeatureDef>,
}

impl FeatureCatalog {
    pub fn standard() -> Self {
        let mut entries = Vec::new();
        emit(None, 1, 1000, &mut |name, family, _| {
            entries.push(FeatureDef { name: name.to_string(), family });
        });
        Self {
            version: 1,
            entropy_max_samples: 1000,
            entries,
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_json(json: &str) -> Result<Self, FeatureError> {
        let cat: FeatureCatalog = serde_json::from_str(json)?;
        let standard = FeatureCatalog::standard();
        if cat.entries != standard.entries {
            return Err(FeatureError::Catalog(
                "entry list does not match this build's feature set".into(),
            ));
        }
        Ok(cat)
    }
}

fn fin(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Emits every feature in catalog order. With `input = None` only the
/// names are produced (used to build the catalog); otherwise values are
/// computed on the signal.
fn emit(
    input: Option<&[f64]>,
    agg_chunk: usize,
    entropy_cap: usize,
    sink: &mut dyn FnMut(&str, Family, Option<f64>),
) {
    use Family::*;
    let x = input.unwrap_or(&[]);
    let computing = input.is_some();
    let n = x.len();

    // shared intermediates, computed once
    let mean = if computing { stats::mean(x) } else { f64::NAN };
    let sd = if computing { stats::std_dev(x, 0) } else { f64::NAN };
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let spec = if computing { calc::fft(x) } else { Vec::new() };
    let mags: Vec<f64> = spec.iter().take(n / 2 + 1).map(|c| c.norm()).collect();
    let psd = if computing { calc::welch_psd(x, 256) } else { Vec::new() };

    // spectral ------------------------------------------------------------
    for k in 0..8 {
        let c = if computing && k < spec.len() { Some(spec[k]) } else { None };
        sink(&format!("fft_coeff_{k}_abs"), Spectral, c.and_then(|c| fin(c.norm())));
        sink(&format!("fft_coeff_{k}_real"), Spectral, c.and_then(|c| fin(c.re)));
        sink(&format!("fft_coeff_{k}_imag"), Spectral, c.and_then(|c| fin(c.im)));
    }
    let moments = if computing { calc::spectrum_moments(&mags) } else { [f64::NAN; 4] };
    for (i, label) in ["centroid", "variance", "skew", "kurtosis"].iter().enumerate() {
        sink(&format!("spectral_{label}"), Spectral, fin(moments[i]));
    }
    sink(
        "fourier_entropy",
        Spectral,
        computing.then(|| calc::binned_entropy(&psd, 10)).and_then(fin),
    );
    {
        let total: f64 = psd.iter().sum();
        for b in 0..4 {
            let v = if computing && total > 0.0 {
                let lo = b * psd.len() / 4;
                let hi = (b + 1) * psd.len() / 4;
                fin(psd[lo..hi].iter().sum::<f64>() / total)
            } else {
                None
            };
            sink(&format!("band_power_{b}"), Spectral, v);
        }
    }
    {
        let ratios = if computing { calc::energy_ratio_by_chunks(x, 4) } else { vec![f64::NAN; 4] };
        for (c, r) in ratios.iter().enumerate() {
            sink(&format!("energy_ratio_chunk_{c}"), Spectral, fin(*r));
        }
    }

    // quantiles -------------------------------------------------------------
    for q in [0.10, 0.20, 0.25, 0.50, 0.75, 0.80, 0.90] {
        let v = computing.then(|| stats::quantile_sorted(&sorted, q)).and_then(fin);
        sink(&format!("quantile_{:02}", (q * 100.0) as u32), Quantiles, v);
    }
    for q in [0.25, 0.50, 0.75] {
        let v = computing.then(|| calc::index_mass_quantile(x, q)).and_then(fin);
        sink(&format!("index_mass_quantile_{:02}", (q * 100.0) as u32), Quantiles, v);
    }
    sink(
        "binned_entropy_10",
        Quantiles,
        computing.then(|| calc::binned_entropy(x, 10)).and_then(fin),
    );

    // wavelet ---------------------------------------------------------------
    for w in [2.0, 5.0, 10.0, 20.0] {
        let row = if computing { calc::cwt_row(x, w) } else { Vec::new() };
        let absmax = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mean_c = stats::mean(&row);
        sink(
            &format!("cwt_absmax_w{}", w as u32),
            Wavelet,
            computing.then_some(absmax).and_then(fin),
        );
        sink(
            &format!("cwt_mean_w{}", w as u32),
            Wavelet,
            computing.then_some(mean_c).and_then(fin),
        );
    }
    sink(
        "cwt_peaks_w5",
        Wavelet,
        computing
            .then(|| calc::number_peaks(&calc::cwt_row(x, 5.0), 3) as f64)
            .and_then(fin),
    );

    // trend -----------------------------------------------------------------
    let trend = if computing { calc::linear_trend(x) } else { [f64::NAN; 4] };
    let agg = if computing { calc::aggregate_chunks(x, agg_chunk) } else { Vec::new() };
    let agg_trend = if computing { calc::linear_trend(&agg) } else { [f64::NAN; 4] };
    for (i, label) in ["slope", "intercept", "r", "stderr"].iter().enumerate() {
        sink(&format!("trend_{label}"), Trend, fin(trend[i]));
    }
    for (i, label) in ["slope", "intercept", "r", "stderr"].iter().enumerate() {
        sink(&format!("agg_trend_{label}"), Trend, fin(agg_trend[i]));
    }

    // autocorrelation ---------------------------------------------------------
    let acfs: Vec<f64> = if computing {
        (1..=10).map(|lag| calc::autocorrelation(x, lag)).collect()
    } else {
        vec![f64::NAN; 10]
    };
    for (lag, v) in acfs.iter().enumerate() {
        sink(&format!("autocorr_lag{}", lag + 1), Autocorrelation, fin(*v));
    }
    let acf_clean: Vec<f64> = acfs.iter().copied().filter(|v| v.is_finite()).collect();
    let (acf_mean, acf_var) = if acf_clean.len() == acfs.len() {
        (fin(stats::mean(&acf_clean)), fin(stats::variance(&acf_clean, 0)))
    } else {
        (None, None)
    };
    sink("autocorr_mean", Autocorrelation, if computing { acf_mean } else { None });
    sink("autocorr_var", Autocorrelation, if computing { acf_var } else { None });
    let pacfs = if computing { calc::pacf(x, 5) } else { vec![f64::NAN; 5] };
    for (lag, v) in pacfs.iter().enumerate() {
        sink(&format!("pacf_lag{}", lag + 1), Autocorrelation, fin(*v));
    }

    // counts and crossings ------------------------------------------------------
    sink(
        "count_above_mean",
        Counts,
        computing.then(|| x.iter().filter(|&&v| v > mean).count() as f64),
    );
    sink(
        "count_below_mean",
        Counts,
        computing.then(|| x.iter().filter(|&&v| v < mean).count() as f64),
    );
    sink(
        "range_count_1sigma",
        Counts,
        computing.then(|| calc::range_count(x, mean - sd, mean + sd) as f64),
    );
    sink(
        "range_count_2sigma",
        Counts,
        computing.then(|| calc::range_count(x, mean - 2.0 * sd, mean + 2.0 * sd) as f64),
    );
    sink(
        "range_count_above_1sigma",
        Counts,
        computing.then(|| calc::range_count(x, mean + sd, f64::INFINITY) as f64),
    );
    sink("zero_crossings", Counts, computing.then(|| calc::crossings(x, 0.0) as f64));
    sink("mean_crossings", Counts, computing.then(|| calc::crossings(x, mean) as f64));
    for r in [0.5, 1.0, 2.0] {
        sink(
            &format!("ratio_beyond_{}sigma", r),
            Counts,
            computing.then(|| calc::ratio_beyond_r_sigma(x, r)).and_then(fin),
        );
    }

    // entropy and complexity --------------------------------------------------
    {
        // quadratic estimators run on a strided subsample
        let stride = n.div_ceil(entropy_cap).max(1);
        let dec: Vec<f64> = x.iter().step_by(stride).copied().collect();
        let r = 0.2 * stats::std_dev(&dec, 0);
        sink(
            "approximate_entropy",
            Entropy,
            computing.then(|| calc::approximate_entropy(&dec, 2, r)).and_then(fin),
        );
        let se = if computing { calc::sample_entropy(&dec, 2, r) } else { f64::NAN };
        sink("sample_entropy", Entropy, fin(se));
    }
    sink(
        "permutation_entropy",
        Entropy,
        computing.then(|| calc::permutation_entropy(x, 3)).and_then(fin),
    );
    sink(
        "lempel_ziv_complexity",
        Entropy,
        computing.then(|| calc::lempel_ziv_complexity(x)).and_then(fin),
    );
    sink("cid_ce_normalized", Entropy, computing.then(|| calc::cid_ce(x, true)).and_then(fin));
    sink("cid_ce_raw", Entropy, computing.then(|| calc::cid_ce(x, false)).and_then(fin));

    // summary statistics -------------------------------------------------------
    sink("mean", Summary, computing.then_some(mean).and_then(fin));
    sink(
        "median",
        Summary,
        computing.then(|| stats::quantile_sorted(&sorted, 0.5)).and_then(fin),
    );
    sink("variance", Summary, computing.then(|| sd * sd).and_then(fin));
    sink("std", Summary, computing.then_some(sd).and_then(fin));
    sink("skewness", Summary, computing.then(|| calc::skewness(x)).and_then(fin));
    sink("kurtosis", Summary, computing.then(|| calc::kurtosis(x)).and_then(fin));
    sink("min", Summary, sorted.first().copied().and_then(fin));
    sink("max", Summary, sorted.last().copied().and_then(fin));
    sink(
        "abs_energy",
        Summary,
        computing.then(|| x.iter().map(|v| v * v).sum::<f64>()).and_then(fin),
    );
    sink("mean_abs_change", Summary, computing.then(|| calc::mean_abs_change(x)).and_then(fin));

    // autoregressive -----------------------------------------------------------
    {
        let coef = if computing { calc::ar_coefficients(x, 5) } else { None };
        sink(
            "ar_intercept",
            Autoregressive,
            coef.as_ref().and_then(|c| fin(c[0])),
        );
        for k in 1..=5 {
            sink(
                &format!("ar_coeff_{k}"),
                Autoregressive,
                coef.as_ref().and_then(|c| fin(c[k])),
            );
        }
    }

    // nonlinear dynamics ---------------------------------------------------------
    {
        let coef = if computing { calc::friedrich_coefficients(x, 30, 3) } else { None };
        for k in 0..4 {
            sink(
                &format!("friedrich_c{k}"),
                NonlinearDynamics,
                coef.as_ref().and_then(|c| fin(c[k])),
            );
        }
        sink(
            "max_langevin_fixed_point",
            NonlinearDynamics,
            computing.then(|| calc::max_langevin_fixed_point(x, 30, 3)).and_then(fin),
        );
    }

    // peaks ----------------------------------------------------------------------
    for support in [1usize, 3, 5, 10] {
        sink(
            &format!("num_peaks_support{support}"),
            Peaks,
            computing.then(|| calc::number_peaks(x, support) as f64),
        );
    }

    // boolean indicators ------------------------------------------------------------
    {
        let dup = computing.then(|| sorted.windows(2).any(|w| w[0] == w[1]));
        let dup_max = computing.then(|| n >= 2 && sorted[n - 1] == sorted[n - 2]);
        let dup_min = computing.then(|| n >= 2 && sorted[0] == sorted[1]);
        sink("has_duplicate", Boolean, dup.map(f64::from));
        sink("has_duplicate_max", Boolean, dup_max.map(f64::from));
        sink("has_duplicate_min", Boolean, dup_min.map(f64::from));
    }

    // stationarity ---------------------------------------------------------------
    {
        let (stat, p) = if computing { calc::adf_stat(x) } else { (f64::NAN, f64::NAN) };
        sink("adf_stat", Stationarity, fin(stat));
        sink("adf_p", Stationarity, fin(p));
    }

    // other ---------------------------------------------------------------------
    sink(
        "longest_strike_above_mean",
        Other,
        computing.then(|| calc::longest_strike(x, true) as f64),
    );
    sink(
        "longest_strike_below_mean",
        Other,
        computing.then(|| calc::longest_strike(x, false) as f64),
    );
    sink(
        "mean_second_derivative_central",
        Other,
        computing.then(|| calc::mean_second_derivative_central(x)).and_then(fin),
    );
    sink(
        "time_reversal_asymmetry_lag1",
        Other,
        computing.then(|| calc::time_reversal_asymmetry(x, 1)).and_then(fin),
    );

    // similarity ------------------------------------------------------------------
    // Counting matches against an external query series needs a query; this
    // catalog ships none, so the value is always missing. Downstream column
    // dropping must cope with a 100%-missing feature, and this keeps that
    // path exercised on every run.
    sink("query_similarity_count", Similarity, None);
}

/// Computes the full catalog on one signal. `agg_chunk` is the number of
/// samples per 30 s of signal (30 on the 1 Hz grid, 750 on the 25 Hz
/// grid).
pub fn compute_features(x: &[f64], catalog: &FeatureCatalog, agg_chunk: usize) -> Vec<Option<f64>> {
    let mut values = Vec::with_capacity(catalog.len());
    emit(Some(x), agg_chunk, catalog.entropy_max_samples, &mut |_, _, v| values.push(v));
    debug_assert_eq!(values.len(), catalog.len());
    values
}

/// Feature vectors for both modalities of one window, plus everything
/// needed to label and trace it downstream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowFeatures {
    pub participant_id: String,
    pub group: Group,
    pub phase_index: u8,
    pub start_s: f64,
    /// Seconds from phase start to window end.
    pub elapsed_s: f64,
    pub labels: Vec<(Task, TaskLabel)>,
    pub arousal: Vec<Option<f64>>,
    pub accel: Vec<Option<f64>>,
}

impl WindowFeatures {
    pub fn label(&self, task: Task) -> Option<TaskLabel> {
        self.labels.iter().find(|(t, _)| *t == task).map(|(_, l)| *l)
    }

    pub fn by_modality(&self, m: FeatureModality) -> &[Option<f64>] {
        match m {
            FeatureModality::Arousal => &self.arousal,
            FeatureModality::Accel => &self.accel,
        }
    }
}

/// Extracts the catalog for both modalities of a window. The group is
/// carried in rather than looked up so feature rows stay self-contained.
pub fn extract_features(
    window: &WindowSegment,
    group: Group,
    catalog: &FeatureCatalog,
) -> WindowFeatures {
    let arousal = compute_features(&window.arousal_grid, catalog, 30);
    let accel = compute_features(&window.accel_grid, catalog, 750);
    WindowFeatures {
        participant_id: window.participant_id.clone(),
        group,
        phase_index: window.phase_index,
        start_s: window.start_s,
        elapsed_s: window.elapsed_in_phase_s(),
        labels: window.labels.clone(),
        arousal,
        accel,
    }
}

// ---------------------------------------------------------------------------
// Design matrix
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    /// Drop columns >50% missing on the training fold, median-impute the
    /// rest.
    Median,
    /// Drop every column with any training-fold missing value.
    Drop,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub family: Family,
    pub modality: FeatureModality,
    /// Index into the per-modality feature vector.
    pub index: usize,
    pub missing_frac: f64,
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub missing_frac: f64,
    pub zero_variance: bool,
}

/// Column selection, imputation values, and standardization statistics,
/// all fitted on the training fold and replayed verbatim on later folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignTransform {
    pub policy: MissingPolicy,
    pub modalities: Vec<FeatureModality>,
    pub columns: Vec<ColumnStats>,
    pub dropped: Vec<DroppedColumn>,
}

/// Row-major dense matrix.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<f64>,
}

impl DesignMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }
}

impl DesignTransform {
    /// Fits column selection and statistics on training rows. Columns are
    /// ordered (modality, catalog index); restricting `modalities` is how
    /// the single-modality ablations are run.
    pub fn fit(
        rows: &[WindowFeatures],
        catalog: &FeatureCatalog,
        policy: MissingPolicy,
        modalities: &[FeatureModality],
    ) -> Result<Self, FeatureError> {
        if rows.is_empty() {
            return Err(FeatureError::Empty);
        }
        for r in rows {
            if r.arousal.len() != catalog.len() || r.accel.len() != catalog.len() {
                return Err(FeatureError::SchemaMismatch);
            }
        }
        let mut columns = Vec::new();
        let mut dropped = Vec::new();
        for &modality in modalities {
            for (index, def) in catalog.entries.iter().enumerate() {
                let name = format!("{}__{}", modality.prefix(), def.name);
                let vals: Vec<Option<f64>> =
                    rows.iter().map(|r| r.by_modality(modality)[index]).collect();
                let present: Vec<f64> = vals.iter().flatten().copied().collect();
                let missing_frac = 1.0 - present.len() as f64 / vals.len() as f64;
                let keep = match policy {
                    MissingPolicy::Median => missing_frac <= 0.5,
                    MissingPolicy::Drop => missing_frac == 0.0,
                };
                if !keep {
                    dropped.push(DroppedColumn { name, missing_frac, zero_variance: false });
                    continue;
                }
                let median = stats::median(&present);
                // statistics over the imputed training column
                let imputed: Vec<f64> = vals.iter().map(|v| v.unwrap_or(median)).collect();
                let mean = stats::mean(&imputed);
                let std = stats::std_dev(&imputed, 0);
                if !(std > 0.0) {
                    dropped.push(DroppedColumn { name, missing_frac, zero_variance: true });
                    continue;
                }
                columns.push(ColumnStats {
                    name,
                    family: def.family,
                    modality,
                    index,
                    missing_frac,
                    median,
                    mean,
                    std,
                });
            }
        }
        if columns.is_empty() {
            return Err(FeatureError::Catalog("every column was dropped".into()));
        }
        Ok(Self {
            policy,
            modalities: modalities.to_vec(),
            columns,
            dropped,
        })
    }

    /// Applies the fitted imputation and standardization to any rows.
    pub fn transform(&self, rows: &[WindowFeatures]) -> DesignMatrix {
        let n_cols = self.columns.len();
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            for c in &self.columns {
                let raw = r.by_modality(c.modality)[c.index].unwrap_or(c.median);
                data.push((raw - c.mean) / c.std);
            }
        }
        DesignMatrix {
            n_rows: rows.len(),
            n_cols,
            data,
        }
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }
}
