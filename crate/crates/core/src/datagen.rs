//! Synthetic labeled dataset calibrated to the reference statistics.
//!
//! The source data behind the reference description is not available,
//! so training and acceptance run on a generator fitted to its marginal
//! statistics. Samples are drawn label-first: a base label with
//! probability chosen so the final (noise-flipped) prevalence matches
//! the reference mean, then glucose conditioned on the label — below 70
//! for base-positive samples, at or above 70 otherwise — so that the
//! base label equals `glucose < 70` exactly. Symptom probabilities and
//! the vitals shifts during base-positive samples are fitted so the
//! marginals land on the reference means while the features still carry
//! signal.
//!
//! Generation is serial and seed-driven: identical configs produce
//! byte-identical datasets.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta, Distribution, LogNormal, Normal};
use thiserror::Error;

use crate::fog::{FeatureStats, ReferenceStats, VitalsSample};

#[derive(Debug, Error, PartialEq)]
pub enum DatagenError {
    #[error("noise must be < 0.5")]
    InvalidNoise,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

/// Generator configuration. Defaults reproduce the reference dataset's
/// shape: 16,969 samples, seed 42, 5% label flips.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Probability that a sample's final label is flipped from its base
    /// (glucose-threshold) label. Must be in [0, 0.5).
    pub label_noise: f64,
    pub target: ReferenceStats,
}

impl Default for GeneratorConfig {
    fn default() -> GeneratorConfig {
        GeneratorConfig {
            n_samples: 16_969,
            seed: 42,
            label_noise: 0.05,
            target: ReferenceStats::default_reference(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(DatagenError::InvalidNoise);
        }
        Ok(())
    }
}

// Fitted sampling constants. The hypoglycemic glucose cluster is
// 70 − 20·Beta(1, 6.58) (median ≈ 68); the normoglycemic cluster is
// 70 + LogNormal(3.72, 0.75) clipped so the mixture lands on the
// reference mean/std/quartiles. Vitals shifts under the base-positive
// label follow the direction reported for hypoglycemia: R-R interval
// down, systolic pressure up.
const GLUCOSE_HYPO_BETA: (f64, f64) = (1.0, 6.58);
const GLUCOSE_NORMAL_LOGNORMAL: (f64, f64) = (3.69, 0.84);
const SYSTOLIC_MEAN: (f64, f64) = (115.5, 121.0); // (normal, hypo)
const SYSTOLIC_STD: f64 = 7.19;
const HEART_RATE_MEAN: (f64, f64) = (695.0, 630.0); // (normal, hypo), ms
const HEART_RATE_STD: f64 = 60.0;
const P_SWEATING: (f64, f64) = (0.043, 0.20); // (normal, hypo)
const P_SHIVERING: (f64, f64) = (0.045, 0.26);
/// Seconds between consecutive generated samples.
const SAMPLE_SPACING_S: u32 = 300;

/// Draws `config.n_samples` labeled samples. Every glucose value lies
/// in [50, 250], systolic in [95, 145], heart rate in [461, 769]; with
/// zero label noise the label equals `glucose < 70` exactly.
pub fn generate_dataset(config: &GeneratorConfig) -> Result<Vec<VitalsSample>, DatagenError> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);

    // Base rate chosen so the flipped prevalence matches the target:
    // prevalence = p(1 - 2e) + e.
    let p_base = ((config.target.label.mean - config.label_noise)
        / (1.0 - 2.0 * config.label_noise))
        .clamp(0.0, 1.0);

    let hypo_glucose = Beta::new(GLUCOSE_HYPO_BETA.0, GLUCOSE_HYPO_BETA.1).unwrap();
    let normal_glucose =
        LogNormal::new(GLUCOSE_NORMAL_LOGNORMAL.0, GLUCOSE_NORMAL_LOGNORMAL.1).unwrap();
    let systolic_normal = Normal::new(SYSTOLIC_MEAN.0, SYSTOLIC_STD).unwrap();
    let systolic_hypo = Normal::new(SYSTOLIC_MEAN.1, SYSTOLIC_STD).unwrap();
    let hr_normal = Normal::new(HEART_RATE_MEAN.0, HEART_RATE_STD).unwrap();
    let hr_hypo = Normal::new(HEART_RATE_MEAN.1, HEART_RATE_STD).unwrap();

    let mut out = Vec::with_capacity(config.n_samples);
    for i in 0..config.n_samples {
        let base_hypo = rng.gen::<f64>() < p_base;

        let glucose = if base_hypo {
            (70.0 - 20.0 * hypo_glucose.sample(&mut rng)).clamp(50.0, 70.0 - f64::EPSILON * 64.0)
        } else {
            (70.0 + normal_glucose.sample(&mut rng)).clamp(70.0, 250.0)
        };
        let systolic_bp = if base_hypo {
            systolic_hypo.sample(&mut rng)
        } else {
            systolic_normal.sample(&mut rng)
        }
        .clamp(95.0, 145.0);
        let heart_rate = if base_hypo {
            hr_hypo.sample(&mut rng)
        } else {
            hr_normal.sample(&mut rng)
        }
        .clamp(461.0, 769.0);
        let p_sweat = if base_hypo { P_SWEATING.1 } else { P_SWEATING.0 };
        let p_shiver = if base_hypo { P_SHIVERING.1 } else { P_SHIVERING.0 };
        let sweating = if rng.gen::<f64>() < p_sweat { 1.0 } else { 0.0 };
        let shivering = if rng.gen::<f64>() < p_shiver { 1.0 } else { 0.0 };

        let flipped = rng.gen::<f64>() < config.label_noise;
        let label = (base_hypo ^ flipped) as u8;

        out.push(VitalsSample {
            glucose,
            systolic_bp,
            heart_rate,
            sweating,
            shivering,
            timestamp: i as u32 * SAMPLE_SPACING_S,
            label: Some(label),
        });
    }
    Ok(out)
}

fn column(samples: &[VitalsSample], idx: usize) -> Vec<f64> {
    samples
        .iter()
        .map(|s| match idx {
            0 => s.glucose,
            1 => s.systolic_bp,
            2 => s.heart_rate,
            3 => s.sweating,
            4 => s.shivering,
            _ => s.label.unwrap_or(0) as f64,
        })
        .collect()
}

fn feature_stats(values: &[f64]) -> FeatureStats {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        (ss / (n - 1) as f64).sqrt()
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    FeatureStats {
        count: n as u64,
        mean,
        std,
        min: sorted[0],
        q25: quantile(&sorted, 0.25),
        q50: quantile(&sorted, 0.50),
        q75: quantile(&sorted, 0.75),
        max: sorted[n - 1],
    }
}

/// Linear-interpolation quantile over a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Exact descriptive statistics per feature plus the label. Quartiles
/// use linear interpolation; std uses the n−1 denominator (0 for a
/// single sample). The two non-model means are not summarized and are
/// set to NaN.
pub fn summarize(samples: &[VitalsSample]) -> Result<ReferenceStats, DatagenError> {
    if samples.is_empty() {
        return Err(DatagenError::EmptyDataset);
    }
    Ok(ReferenceStats {
        glucose: feature_stats(&column(samples, 0)),
        systolic_bp: feature_stats(&column(samples, 1)),
        heart_rate: feature_stats(&column(samples, 2)),
        sweating: feature_stats(&column(samples, 3)),
        shivering: feature_stats(&column(samples, 4)),
        label: feature_stats(&column(samples, 5)),
        diastolic_bp_mean: f64::NAN,
        body_temp_mean: f64::NAN,
    })
}

pub const CSV_HEADER: &str = "glucose,systolic_bp,heart_rate,sweating,shivering,hypoglycemia";

/// Formats with (up to) six significant digits, trailing zeros trimmed.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn to_csv(samples: &[VitalsSample]) -> String {
    let mut out = String::with_capacity(samples.len() * 48 + 64);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in samples {
        out.push_str(&fmt_sig6(s.glucose));
        out.push(',');
        out.push_str(&fmt_sig6(s.systolic_bp));
        out.push(',');
        out.push_str(&fmt_sig6(s.heart_rate));
        out.push(',');
        out.push_str(&fmt_sig6(s.sweating));
        out.push(',');
        out.push_str(&fmt_sig6(s.shivering));
        out.push(',');
        out.push_str(&s.label.unwrap_or(0).to_string());
        out.push('\n');
    }
    out
}

pub fn from_csv(text: &str) -> Result<Vec<VitalsSample>, DatagenError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == CSV_HEADER => {}
        _ => {
            return Err(DatagenError::Csv {
                line: 1,
                reason: format!("expected header `{CSV_HEADER}`"),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(DatagenError::Csv {
                line: i + 1,
                reason: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let parse = |j: usize| -> Result<f64, DatagenError> {
            fields[j].trim().parse::<f64>().map_err(|e| DatagenError::Csv {
                line: i + 1,
                reason: e.to_string(),
            })
        };
        out.push(VitalsSample {
            glucose: parse(0)?,
            systolic_bp: parse(1)?,
            heart_rate: parse(2)?,
            sweating: parse(3)?,
            shivering: parse(4)?,
            timestamp: (out.len() as u32) * SAMPLE_SPACING_S,
            label: Some(if parse(5)? >= 0.5 { 1 } else { 0 }),
        });
    }
    Ok(out)
}

pub fn write_csv(path: &Path, samples: &[VitalsSample]) -> std::io::Result<()> {
    fs::write(path, to_csv(samples))
}

pub fn read_csv(path: &Path) -> Result<Vec<VitalsSample>, DatagenError> {
    let text = fs::read_to_string(path).map_err(|e| DatagenError::Csv {
        line: 0,
        reason: e.to_string(),
    })?;
    from_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_samples_is_empty() {
        let config = GeneratorConfig {
            n_samples: 0,
            ..Default::default()
        };
        assert!(generate_dataset(&config).unwrap().is_empty());
    }

    #[test]
    fn invalid_noise_is_rejected() {
        let config = GeneratorConfig {
            label_noise: 0.7,
            ..Default::default()
        };
        assert_eq!(generate_dataset(&config).unwrap_err(), DatagenError::InvalidNoise);
    }

    #[test]
    fn default_dataset_matches_reference_marginals() {
        let config = GeneratorConfig::default();
        let data = generate_dataset(&config).unwrap();
        assert_eq!(data.len(), 16_969);
        let stats = summarize(&data).unwrap();

        assert!((stats.glucose.mean - 95.74).abs() <= 2.0, "glucose mean {}", stats.glucose.mean);
        assert!((stats.glucose.std - 42.99).abs() <= 3.0, "glucose std {}", stats.glucose.std);
        assert!(stats.glucose.min >= 50.0 && stats.glucose.max <= 250.0);
        assert!((stats.systolic_bp.mean - 118.19).abs() <= 1.0, "systolic mean {}", stats.systolic_bp.mean);
        assert!((stats.heart_rate.mean - 662.85).abs() <= 10.0, "hr mean {}", stats.heart_rate.mean);
        assert!((stats.sweating.mean - 0.12).abs() <= 0.02, "sweating mean {}", stats.sweating.mean);
        assert!((stats.shivering.mean - 0.15).abs() <= 0.02, "shivering mean {}", stats.shivering.mean);
        assert!((stats.label.mean - 0.49).abs() <= 0.03, "prevalence {}", stats.label.mean);
    }

    #[test]
    fn quartiles_land_near_reference() {
        let data = generate_dataset(&GeneratorConfig::default()).unwrap();
        let stats = summarize(&data).unwrap();
        assert!((stats.glucose.q25 - 68.0).abs() < 3.0, "q25 {}", stats.glucose.q25);
        assert!((stats.glucose.q50 - 83.0).abs() < 6.0, "q50 {}", stats.glucose.q50);
        assert!((stats.glucose.q75 - 108.0).abs() < 8.0, "q75 {}", stats.glucose.q75);
    }

    #[test]
    fn identical_configs_are_byte_identical() {
        let config = GeneratorConfig {
            n_samples: 2_000,
            ..Default::default()
        };
        let a = generate_dataset(&config).unwrap();
        let b = generate_dataset(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(to_csv(&a), to_csv(&b));
    }

    #[test]
    fn every_sample_is_clipped_to_reference_ranges() {
        let data = generate_dataset(&GeneratorConfig::default()).unwrap();
        for s in &data {
            assert!((50.0..=250.0).contains(&s.glucose));
            assert!((95.0..=145.0).contains(&s.systolic_bp));
            assert!((461.0..=769.0).contains(&s.heart_rate));
            assert!(s.sweating == 0.0 || s.sweating == 1.0);
            assert!(s.shivering == 0.0 || s.shivering == 1.0);
        }
    }

    #[test]
    fn noiseless_labels_equal_glucose_threshold() {
        let config = GeneratorConfig {
            n_samples: 5_000,
            label_noise: 0.0,
            ..Default::default()
        };
        for s in generate_dataset(&config).unwrap() {
            assert_eq!(s.label.unwrap() == 1, s.glucose < 70.0);
        }
    }

    #[test]
    fn summarize_single_sample() {
        let data = generate_dataset(&GeneratorConfig {
            n_samples: 1,
            ..Default::default()
        })
        .unwrap();
        let stats = summarize(&data).unwrap();
        assert_eq!(stats.glucose.mean, data[0].glucose);
        assert_eq!(stats.glucose.min, data[0].glucose);
        assert_eq!(stats.glucose.max, data[0].glucose);
        assert_eq!(stats.glucose.std, 0.0);
    }

    #[test]
    fn summarize_constant_feature() {
        let mut data = generate_dataset(&GeneratorConfig {
            n_samples: 50,
            ..Default::default()
        })
        .unwrap();
        for s in &mut data {
            s.systolic_bp = 120.0;
        }
        let stats = summarize(&data).unwrap();
        assert_eq!(stats.systolic_bp.std, 0.0);
        assert_eq!(stats.systolic_bp.q25, 120.0);
        assert_eq!(stats.systolic_bp.q50, 120.0);
        assert_eq!(stats.systolic_bp.q75, 120.0);
    }

    #[test]
    fn summarize_empty_errors() {
        assert_eq!(summarize(&[]).unwrap_err(), DatagenError::EmptyDataset);
    }

    #[test]
    fn min_max_within_reference_bounds_by_scan() {
        let data = generate_dataset(&GeneratorConfig::default()).unwrap();
        let reference = ReferenceStats::default_reference();
        // Direct scan oracle, independent of summarize.
        let (mut gmin, mut gmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in &data {
            gmin = gmin.min(s.glucose);
            gmax = gmax.max(s.glucose);
        }
        assert!(gmin >= reference.glucose.min && gmax <= reference.glucose.max);
        let stats = summarize(&data).unwrap();
        assert_eq!(stats.glucose.min, gmin);
        assert_eq!(stats.glucose.max, gmax);
    }

    #[test]
    fn csv_round_trip_within_six_significant_digits() {
        let data = generate_dataset(&GeneratorConfig {
            n_samples: 200,
            ..Default::default()
        })
        .unwrap();
        let text = to_csv(&data);
        assert!(text.starts_with(CSV_HEADER));
        let back = from_csv(&text).unwrap();
        assert_eq!(back.len(), data.len());
        for (a, b) in data.iter().zip(&back) {
            assert!((a.glucose - b.glucose).abs() / a.glucose < 1e-5);
            assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn csv_rejects_bad_input() {
        assert!(from_csv("nope\n1,2,3").is_err());
        let bad = format!("{CSV_HEADER}\n1,2,3\n");
        assert!(matches!(from_csv(&bad), Err(DatagenError::Csv { line: 2, .. })));
    }

    #[test]
    fn six_significant_digit_formatting() {
        assert_eq!(fmt_sig6(95.7432189), "95.7432");
        assert_eq!(fmt_sig6(0.12), "0.12");
        assert_eq!(fmt_sig6(662.8473), "662.847");
        assert_eq!(fmt_sig6(250.0), "250");
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(1.0), "1");
        assert_eq!(fmt_sig6(-68.125), "-68.125");
    }
}
