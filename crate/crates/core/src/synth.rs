//! Synthetic cohort generator with planted, configurable impairment
//! effects.
//!
//! The generator is the ground truth for end-to-end checks: a fixed
//! config yields byte-identical files, and each effect knob maps to one
//! causal pathway (arousal level, heart-rhythm dynamics, accelerometer
//! dynamics) so pipeline behavior can be probed per mechanism. Effects
//! scale with the instantaneous planted BAC, so treatment phases differ
//! while control participants stay at zero everywhere.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    BacMeasurement, Cohort, CohortManifest, DrivingPhase, Group, ManifestParticipant,
    ManifestPhase, Modality, Participant, ParticipantData, Sample, SampleSeries, Scenario,
    SignalFiles,
};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// Planted effect sizes. Each component is zero-centered: 0 disables the
/// pathway entirely, and all pathways scale with instantaneous BAC
/// normalized by a 0.07 g/dL reference peak.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EffectConfig {
    /// Fractional drop of mean IBI at the reference BAC (level pathway;
    /// also raises HR). 0.08 means an 8% shorter inter-beat interval.
    pub arousal_shift_z: f64,
    /// Fractional shrink of IBI successive variability at reference BAC
    /// (rhythm-dynamics pathway).
    pub ibi_variability_shrink: f64,
    /// Shift of accelerometer energy from the steering band into the
    /// tremor band at reference BAC, preserving total variance
    /// (movement-dynamics pathway).
    pub accel_roughness: f64,
    /// Seconds over which the effect ramps in at the start of each
    /// recorded segment.
    pub onset_ramp_s: f64,
}

impl EffectConfig {
    pub fn large() -> Self {
        EffectConfig {
            arousal_shift_z: 0.08,
            ibi_variability_shrink: 0.5,
            accel_roughness: 1.0,
            onset_ramp_s: 60.0,
        }
    }

    pub fn zero() -> Self {
        EffectConfig {
            arousal_shift_z: 0.0,
            ibi_variability_shrink: 0.0,
            accel_roughness: 0.0,
            onset_ramp_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BacProfile {
    /// Severe-phase starting BAC range, g/dL.
    pub phase2_range: (f64, f64),
    /// Moderate-phase starting BAC range, g/dL.
    pub phase3_range: (f64, f64),
    /// Linear within-phase decay, g/dL per hour.
    pub decay_per_hour: f64,
}

impl Default for BacProfile {
    fn default() -> Self {
        BacProfile {
            phase2_range: (0.054, 0.086),
            phase3_range: (0.014, 0.044),
            decay_per_hour: 0.015,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Sober mean inter-beat interval, ms.
    pub ibi_base_ms: f64,
    /// AR(1) coefficient of the IBI fluctuation process.
    pub ibi_ar: f64,
    /// Stationary std of the IBI fluctuations, ms.
    pub ibi_noise_ms: f64,
    /// Probability of a merged-beat artifact per beat (cleaned by the
    /// successive-difference filter downstream).
    pub ibi_artifact_rate: f64,
    /// Measurement noise on the 1 Hz heart-rate channel, bpm.
    pub hr_noise_bpm: f64,
    /// Steering-band (0.05-0.3 Hz) amplitude on the x/y axes, g.
    pub accel_lf_g: f64,
    /// Tremor-band (1.2-2.2 Hz) amplitude on the x/y axes, g.
    pub accel_hf_g: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            ibi_base_ms: 850.0,
            ibi_ar: 0.95,
            ibi_noise_ms: 25.0,
            ibi_artifact_rate: 0.004,
            hr_noise_bpm: 1.0,
            accel_lf_g: 0.10,
            accel_hf_g: 0.035,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_treatment: usize,
    pub n_placebo: usize,
    pub n_reference: usize,
    /// Driving-phase duration, s.
    pub phase_duration_s: f64,
    /// Idle gap between phases, s.
    pub phase_gap_s: f64,
    /// Sensor lead-in recorded before each phase starts, s.
    pub lead_in_s: f64,
    pub effect: EffectConfig,
    pub bac: BacProfile,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_treatment: 12,
            n_placebo: 5,
            n_reference: 5,
            phase_duration_s: 2400.0,
            phase_gap_s: 300.0,
            lead_in_s: 120.0,
            effect: EffectConfig::large(),
            bac: BacProfile::default(),
            noise: NoiseConfig::default(),
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// The CI-sized cohort: full group structure, 10-minute phases.
    pub fn desk_default() -> Self {
        SynthConfig {
            phase_duration_s: 600.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.phase_duration_s <= 0.0 || self.phase_gap_s < 0.0 || self.lead_in_s < 0.0 {
            return Err(SynthError::InvalidConfig("durations must be positive".into()));
        }
        if self.lead_in_s > self.phase_gap_s + 1e-9 {
            return Err(SynthError::InvalidConfig(
                "lead-in cannot exceed the inter-phase gap".into(),
            ));
        }
        let (a2, b2) = self.bac.phase2_range;
        let (a3, b3) = self.bac.phase3_range;
        if !(0.0 < a3 && a3 <= b3 && b3 < a2 && a2 <= b2) {
            return Err(SynthError::InvalidConfig(
                "BAC ranges must satisfy 0 < phase3 <= phase2".into(),
            ));
        }
        if self.noise.ibi_base_ms <= 0.0 || !(0.0..1.0).contains(&self.noise.ibi_ar) {
            return Err(SynthError::InvalidConfig("bad IBI process parameters".into()));
        }
        Ok(())
    }

    pub fn phase_start(&self, phase_index: u8) -> f64 {
        self.lead_in_s + f64::from(phase_index - 1) * (self.phase_duration_s + self.phase_gap_s)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Round to `d` decimals; generated values pass through this so the
/// in-memory cohort equals a written-then-parsed one exactly.
fn q(v: f64, d: u32) -> f64 {
    let scale = 10f64.powi(d as i32);
    (v * scale).round() / scale
}

/// Everything generated for one participant, already quantized to the
/// on-disk precision.
struct ParticipantRows {
    id: String,
    group: Group,
    phases: Vec<(u8, f64, f64)>,
    scenarios: Vec<Scenario>,
    ibi: Vec<(f64, f64)>,
    hr: Vec<(f64, f64)>,
    accel: Vec<(f64, f64, f64, f64)>,
    bac: Vec<(f64, f64)>,
}

/// Sum of K random-phase sinusoids confined to a frequency band,
/// normalized to unit variance.
struct SinBank {
    freqs: Vec<f64>,
    phases: Vec<f64>,
    scale: f64,
}

impl SinBank {
    fn new(lo_hz: f64, hi_hz: f64, k: usize, rng: &mut ChaCha8Rng) -> Self {
        SinBank {
            freqs: (0..k).map(|_| rng.random_range(lo_hz..hi_hz)).collect(),
            phases: (0..k).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect(),
            scale: (2.0 / k as f64).sqrt(),
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.scale
            * self
                .freqs
                .iter()
                .zip(&self.phases)
                .map(|(&f, &p)| (std::f64::consts::TAU * f * t + p).sin())
                .sum::<f64>()
    }
}

const REFERENCE_PEAK_BAC: f64 = 0.07;

fn generate_participant(config: &SynthConfig, index: usize, group: Group) -> ParticipantRows {
    let id = format!("p{index:02}");
    let seed = splitmix64(config.seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut structure_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ibi_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 1));
    let mut hr_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 2));
    let mut accel_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 3));

    let phases: Vec<(u8, f64, f64)> = (1..=3u8)
        .map(|i| {
            let start = config.phase_start(i);
            (i, start, start + config.phase_duration_s)
        })
        .collect();

    // counterbalanced scenario order, rotated by participant index
    let base = [Scenario::Highway, Scenario::Rural, Scenario::Urban];
    let scenarios: Vec<Scenario> = (0..3).map(|k| base[(k + index) % 3]).collect();

    // starting BAC per phase; controls stay sober with matched schedules
    let start_bac: [f64; 3] = if group == Group::Treatment {
        [
            0.0,
            structure_rng.random_range(config.bac.phase2_range.0..=config.bac.phase2_range.1),
            structure_rng.random_range(config.bac.phase3_range.0..=config.bac.phase3_range.1),
        ]
    } else {
        // burn the draws so schedules stay aligned across groups
        let _ = structure_rng.random_range(0.0..1.0);
        let _ = structure_rng.random_range(0.0..1.0);
        [0.0, 0.0, 0.0]
    };

    let bac_at = |phase_idx: usize, t: f64| -> f64 {
        let (_, start, _) = phases[phase_idx];
        (start_bac[phase_idx] - config.bac.decay_per_hour * (t - start) / 3600.0).max(0.0)
    };
    let mut bac_rows = Vec::new();
    for (phase_idx, &(_, start, end)) in phases.iter().enumerate() {
        bac_rows.push((q(start, 1), q(bac_at(phase_idx, start), 4)));
        bac_rows.push((q(end, 1), q(bac_at(phase_idx, end), 4)));
    }

    // effect gate: instantaneous BAC over the reference peak, ramped in
    // from the segment start
    let effect_gate = |phase_idx: usize, seg_start: f64, t: f64| -> f64 {
        let ramp = if config.effect.onset_ramp_s > 0.0 {
            ((t - seg_start) / config.effect.onset_ramp_s).clamp(0.0, 1.0)
        } else {
            1.0
        };
        ramp * bac_at(phase_idx, t) / REFERENCE_PEAK_BAC
    };

    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut ibi_rows = Vec::new();
    let mut hr_rows = Vec::new();
    let mut accel_rows = Vec::new();

    for (phase_idx, &(_, start, end)) in phases.iter().enumerate() {
        let seg_start = start - config.lead_in_s;

        // IBI: AR(1) fluctuations around a BAC-driven mean, with the
        // innovation scaled so the configured std is the stationary one
        let ar = config.noise.ibi_ar;
        let innov = config.noise.ibi_noise_ms * (1.0 - ar * ar).sqrt();
        let mut fluct = config.noise.ibi_noise_ms * normal.sample(&mut ibi_rng);
        let mut t = seg_start;
        while t < end {
            let g = effect_gate(phase_idx, seg_start, t);
            let mean = config.noise.ibi_base_ms * (1.0 - config.effect.arousal_shift_z * g);
            let shrink = 1.0 - (config.effect.ibi_variability_shrink * g).clamp(0.0, 0.9);
            fluct = ar * fluct + innov * normal.sample(&mut ibi_rng);
            let ibi = mean + shrink * fluct;
            let artifact = ibi_rng.random_range(0.0..1.0) < config.noise.ibi_artifact_rate;
            let written = if artifact { 2.0 * ibi } else { ibi };
            ibi_rows.push((q(t, 3), q(written, 1)));
            t += written / 1000.0;
        }

        // HR at 1 Hz, consistent with the instantaneous IBI mean
        let mut n = 0u64;
        loop {
            let t = seg_start + n as f64;
            if t >= end {
                break;
            }
            let g = effect_gate(phase_idx, seg_start, t);
            let mean_ibi = config.noise.ibi_base_ms * (1.0 - config.effect.arousal_shift_z * g);
            let hr = 60000.0 / mean_ibi + config.noise.hr_noise_bpm * normal.sample(&mut hr_rng);
            hr_rows.push((q(t, 1), q(hr, 2)));
            n += 1;
        }

        // accel: per-phase sinusoid banks; roughness moves variance from
        // the steering band to the tremor band without changing the total
        let banks: Vec<(SinBank, SinBank)> = (0..2)
            .map(|_| {
                (
                    SinBank::new(0.05, 0.3, 16, &mut accel_rng),
                    SinBank::new(1.2, 2.2, 16, &mut accel_rng),
                )
            })
            .collect();
        let total_power = config.noise.accel_lf_g.powi(2) + config.noise.accel_hf_g.powi(2);
        let base_hf_frac = config.noise.accel_hf_g.powi(2) / total_power;
        let mut n = 0u64;
        loop {
            let t = seg_start + n as f64 * 0.04;
            if t >= end {
                break;
            }
            let g = effect_gate(phase_idx, seg_start, t);
            let hf_frac = (base_hf_frac + 0.55 * config.effect.accel_roughness * g).clamp(0.0, 0.95);
            let a_hf = (total_power * hf_frac).sqrt();
            let a_lf = (total_power * (1.0 - hf_frac)).sqrt();
            let x = 0.35 + a_lf * banks[0].0.at(t) + a_hf * banks[0].1.at(t);
            let y = 0.10 + a_lf * banks[1].0.at(t) + a_hf * banks[1].1.at(t);
            let z = 0.9309 + 0.008 * normal.sample(&mut accel_rng);
            accel_rows.push((q(t, 3), q(x, 5), q(y, 5), q(z, 5)));
            n += 1;
        }
    }

    ParticipantRows {
        id,
        group,
        phases,
        scenarios,
        ibi: ibi_rows,
        hr: hr_rows,
        accel: accel_rows,
        bac: bac_rows,
    }
}

fn all_participants(config: &SynthConfig) -> Vec<(usize, Group)> {
    let mut out = Vec::new();
    let mut idx = 0;
    for _ in 0..config.n_treatment {
        out.push((idx, Group::Treatment));
        idx += 1;
    }
    for _ in 0..config.n_placebo {
        out.push((idx, Group::Placebo));
        idx += 1;
    }
    for _ in 0..config.n_reference {
        out.push((idx, Group::Reference));
        idx += 1;
    }
    out
}

fn build_manifest(rows: &[ParticipantRows]) -> CohortManifest {
    CohortManifest {
        participants: rows
            .iter()
            .map(|r| ManifestParticipant {
                id: r.id.clone(),
                group: r.group,
                phases: r
                    .phases
                    .iter()
                    .map(|&(index, start_s, end_s)| ManifestPhase {
                        index,
                        start_s,
                        end_s,
                        scenarios: r.scenarios.clone(),
                    })
                    .collect(),
                files: SignalFiles {
                    ibi: format!("{}_ibi.csv", r.id),
                    hr: format!("{}_hr.csv", r.id),
                    accel: format!("{}_accel.csv", r.id),
                },
            })
            .collect(),
        bac_file: "bac.csv".into(),
    }
}

fn generate_rows(config: &SynthConfig) -> Result<Vec<ParticipantRows>, SynthError> {
    config.validate()?;
    Ok(crate::par::map_collect(all_participants(config), |(idx, group)| {
        generate_participant(config, idx, group)
    }))
}

/// Writes manifest.json, per-participant signal CSVs, and bac.csv into
/// `out_dir`. Same config, same bytes.
pub fn generate_cohort(config: &SynthConfig, out_dir: &Path) -> Result<CohortManifest, SynthError> {
    let rows = generate_rows(config)?;
    fs::create_dir_all(out_dir)?;
    for r in &rows {
        let mut ibi = String::with_capacity(r.ibi.len() * 16);
        ibi.push_str("t_s,ibi_ms\n");
        for &(t, v) in &r.ibi {
            ibi.push_str(&format!("{t:.3},{v:.1}\n"));
        }
        fs::write(out_dir.join(format!("{}_ibi.csv", r.id)), ibi)?;

        let mut hr = String::with_capacity(r.hr.len() * 12);
        hr.push_str("t_s,hr_bpm\n");
        for &(t, v) in &r.hr {
            hr.push_str(&format!("{t:.1},{v:.2}\n"));
        }
        fs::write(out_dir.join(format!("{}_hr.csv", r.id)), hr)?;

        let mut accel = String::with_capacity(r.accel.len() * 32);
        accel.push_str("t_s,x_g,y_g,z_g\n");
        for &(t, x, y, z) in &r.accel {
            accel.push_str(&format!("{t:.3},{x:.5},{y:.5},{z:.5}\n"));
        }
        fs::write(out_dir.join(format!("{}_accel.csv", r.id)), accel)?;
    }
    let mut bac = String::from("participant_id,t_s,bac_g_per_dl\n");
    for r in &rows {
        for &(t, v) in &r.bac {
            bac.push_str(&format!("{},{t:.1},{v:.4}\n", r.id));
        }
    }
    fs::write(out_dir.join("bac.csv"), bac)?;

    let manifest = build_manifest(&rows);
    let mut f = fs::File::create(out_dir.join("manifest.json"))?;
    f.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(manifest)
}

/// In-memory equivalent of writing and re-ingesting a cohort; values are
/// quantized to the on-disk precision, so both paths agree exactly.
pub fn generate_cohort_in_memory(config: &SynthConfig) -> Result<Cohort, SynthError> {
    let rows = generate_rows(config)?;
    let mut participants = Vec::with_capacity(rows.len());
    for r in rows {
        let series = |modality: Modality, data: &[(f64, f64)]| {
            SampleSeries::new(
                modality,
                data.iter().map(|&(t_s, value)| Sample { t_s, value }).collect(),
            )
        };
        let accel_axis = |modality: Modality, pick: fn(&(f64, f64, f64, f64)) -> f64| {
            SampleSeries::new(
                modality,
                r.accel
                    .iter()
                    .map(|row| Sample { t_s: row.0, value: pick(row) })
                    .collect(),
            )
        };
        participants.push(ParticipantData {
            participant: Participant { id: r.id.clone(), group: r.group },
            phases: r
                .phases
                .iter()
                .map(|&(phase_index, start_s, end_s)| DrivingPhase {
                    participant_id: r.id.clone(),
                    phase_index,
                    start_s,
                    end_s,
                    scenario_sequence: r.scenarios.clone(),
                })
                .collect(),
            ibi: series(Modality::IbiMs, &r.ibi)?,
            hr: series(Modality::HrBpm, &r.hr)?,
            accel_x: accel_axis(Modality::AccelXG, |row| row.1)?,
            accel_y: accel_axis(Modality::AccelYG, |row| row.2)?,
            accel_z: accel_axis(Modality::AccelZG, |row| row.3)?,
            bac: r
                .bac
                .iter()
                .map(|&(t_s, bac_g_per_dl)| BacMeasurement {
                    participant_id: r.id.clone(),
                    t_s,
                    brac_mg_per_l: None,
                    bac_g_per_dl,
                })
                .collect(),
        });
    }
    Ok(Cohort { participants })
}
