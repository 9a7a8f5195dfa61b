//! Preprocessing between device readings and the ledger.
//!
//! Raw readings arrive as loosely-typed feature/value pairs. This stage
//! coerces values to finite 64-bit floats, converts heart rate from
//! beats per minute to the mean R-R interval in milliseconds, imputes
//! anything missing from per-feature reference means (binary features
//! take their mode, 0), and groups readings into per-timestamp samples.
//! Diastolic blood pressure and body temperature ride along into the
//! stored payload but are excluded from the five model features.
//!
//! Everything here is a pure function over batches.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FogError {
    #[error("heart rate must be positive")]
    NonPositiveRate,
    #[error("no reference mean for feature `{0}`")]
    NoReferenceMean(&'static str),
}

/// The seven collected features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Glucose,
    DiastolicBp,
    SystolicBp,
    HeartRate,
    BodyTemp,
    Sweating,
    Shivering,
}

impl Feature {
    pub const ALL: [Feature; 7] = [
        Feature::Glucose,
        Feature::DiastolicBp,
        Feature::SystolicBp,
        Feature::HeartRate,
        Feature::BodyTemp,
        Feature::Sweating,
        Feature::Shivering,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Glucose => "glucose",
            Feature::DiastolicBp => "diastolic_bp",
            Feature::SystolicBp => "systolic_bp",
            Feature::HeartRate => "heart_rate",
            Feature::BodyTemp => "body_temp",
            Feature::Sweating => "sweating",
            Feature::Shivering => "shivering",
        }
    }

    fn is_binary(self) -> bool {
        matches!(self, Feature::Sweating | Feature::Shivering)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Cgm,
    Smartwatch,
    Manual,
}

/// A value as received from a device: already numeric or free text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Number(f64),
    Text(String),
}

/// One feature reading as received by the gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawReading {
    #[serde(with = "crate::identity::hex32")]
    pub patient_id: [u8; 32],
    pub source: Source,
    pub feature: Feature,
    pub value: RawValue,
    /// Device timestamp, seconds.
    pub t: u32,
}

/// A complete preprocessed observation: the five model features plus
/// timestamp and an optional class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalsSample {
    pub glucose: f64,
    pub systolic_bp: f64,
    /// Mean R-R interval in milliseconds.
    pub heart_rate: f64,
    pub sweating: f64,
    pub shivering: f64,
    pub timestamp: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<u8>,
}

/// Fixed model-feature order used everywhere downstream.
pub const MODEL_FEATURES: [&str; 5] = [
    "glucose",
    "systolic_bp",
    "heart_rate",
    "sweating",
    "shivering",
];

impl VitalsSample {
    pub fn features(&self) -> [f64; 5] {
        [
            self.glucose,
            self.systolic_bp,
            self.heart_rate,
            self.sweating,
            self.shivering,
        ]
    }

    /// Canonical sample bytes: five 8-byte big-endian floats in model
    /// order, then the 4-byte timestamp.
    pub fn canonical_bytes(&self) -> [u8; 44] {
        let mut out = [0u8; 44];
        for (i, v) in self.features().iter().enumerate() {
            out[i * 8..(i + 1) * 8].copy_from_slice(&v.to_bits().to_be_bytes());
        }
        out[40..44].copy_from_slice(&self.timestamp.to_be_bytes());
        out
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Option<VitalsSample> {
        if bytes.len() < 44 {
            return None;
        }
        let f = |i: usize| {
            f64::from_bits(u64::from_be_bytes(
                bytes[i * 8..(i + 1) * 8].try_into().unwrap(),
            ))
        };
        Some(VitalsSample {
            glucose: f(0),
            systolic_bp: f(1),
            heart_rate: f(2),
            sweating: f(3),
            shivering: f(4),
            timestamp: u32::from_be_bytes(bytes[40..44].try_into().unwrap()),
            label: None,
        })
    }
}

/// A preprocessed sample together with the two stored-but-not-modeled
/// features.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedSample {
    pub patient_id: [u8; 32],
    pub vitals: VitalsSample,
    pub diastolic_bp: f64,
    pub body_temp: f64,
}

impl PreprocessedSample {
    /// Ledger payload: the 44 canonical sample bytes followed by
    /// diastolic BP and body temperature as 8-byte big-endian floats.
    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(60);
        out.extend_from_slice(&self.vitals.canonical_bytes());
        out.extend_from_slice(&self.diastolic_bp.to_bits().to_be_bytes());
        out.extend_from_slice(&self.body_temp.to_bits().to_be_bytes());
        out
    }
}

/// Descriptive statistics for one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub count: u64,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: f64,
}

/// Per-feature reference statistics, used both as imputation defaults
/// and as the calibration target for the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub glucose: FeatureStats,
    pub systolic_bp: FeatureStats,
    pub heart_rate: FeatureStats,
    pub sweating: FeatureStats,
    pub shivering: FeatureStats,
    pub label: FeatureStats,
    /// Imputation-only means for the two non-model features.
    pub diastolic_bp_mean: f64,
    pub body_temp_mean: f64,
}

impl ReferenceStats {
    /// The reference description of the source dataset (16,969 samples).
    /// Diastolic BP and body temperature carry plain means only; the
    /// source description does not cover them.
    pub fn default_reference() -> ReferenceStats {
        let stats = |mean, std, min, q25, q50, q75, max| FeatureStats {
            count: 16_969,
            mean,
            std,
            min,
            q25,
            q50,
            q75,
            max,
        };
        ReferenceStats {
            glucose: stats(95.74, 42.99, 50.0, 68.0, 83.0, 108.0, 250.0),
            systolic_bp: stats(118.19, 7.70, 95.0, 113.0, 119.0, 124.0, 145.0),
            heart_rate: stats(662.85, 68.68, 461.0, 631.0, 674.0, 714.0, 769.0),
            sweating: stats(0.12, 0.33, 0.0, 0.0, 0.0, 0.0, 1.0),
            shivering: stats(0.15, 0.35, 0.0, 0.0, 0.0, 1.0, 1.0),
            label: stats(0.49, 0.50, 0.0, 0.0, 0.0, 1.0, 1.0),
            diastolic_bp_mean: 78.0,
            body_temp_mean: 36.8,
        }
    }

    pub fn mean_of(&self, feature: Feature) -> f64 {
        match feature {
            Feature::Glucose => self.glucose.mean,
            Feature::DiastolicBp => self.diastolic_bp_mean,
            Feature::SystolicBp => self.systolic_bp.mean,
            Feature::HeartRate => self.heart_rate.mean,
            Feature::BodyTemp => self.body_temp_mean,
            Feature::Sweating => self.sweating.mean,
            Feature::Shivering => self.shivering.mean,
        }
    }
}

/// Plausibility bounds applied during coercion, wide enough never to
/// clip the reference ranges.
fn in_physical_range(feature: Feature, v: f64) -> bool {
    match feature {
        Feature::Glucose => (20.0..=600.0).contains(&v),
        Feature::SystolicBp => (60.0..=250.0).contains(&v),
        Feature::HeartRate => v > 0.0,
        Feature::Sweating | Feature::Shivering => v == 0.0 || v == 1.0,
        Feature::DiastolicBp | Feature::BodyTemp => true,
    }
}

/// Coerces one raw value to a finite float, or `None` when the value is
/// non-numeric, non-finite, or outside the feature's physical range.
pub fn coerce_numeric(feature: Feature, value: &RawValue) -> Option<f64> {
    let v = match value {
        RawValue::Number(n) => *n,
        RawValue::Text(s) => s.trim().parse::<f64>().ok()?,
    };
    if !v.is_finite() || !in_physical_range(feature, v) {
        return None;
    }
    Some(v)
}

/// Beats per minute to mean R-R interval in milliseconds.
pub fn convert_heart_rate(rate_bpm: f64) -> Result<f64, FogError> {
    if !rate_bpm.is_finite() || rate_bpm <= 0.0 {
        return Err(FogError::NonPositiveRate);
    }
    Ok(60_000.0 / rate_bpm)
}

/// A per-timestamp group of coerced readings, possibly incomplete.
#[derive(Debug, Clone, Default)]
pub struct PartialSample {
    pub values: [Option<f64>; 7],
}

impl PartialSample {
    fn set(&mut self, feature: Feature, v: Option<f64>) {
        self.values[feature as usize] = v;
    }

    fn get(&self, feature: Feature) -> Option<f64> {
        self.values[feature as usize]
    }
}

/// Replaces every missing entry with the feature's reference mean;
/// binary features take their mode, 0.
pub fn impute(partial: &PartialSample, stats: &ReferenceStats) -> Result<[f64; 7], FogError> {
    let mut out = [0.0; 7];
    for feature in Feature::ALL {
        out[feature as usize] = match partial.get(feature) {
            Some(v) => v,
            None if feature.is_binary() => 0.0,
            None => {
                let mean = stats.mean_of(feature);
                if !mean.is_finite() {
                    return Err(FogError::NoReferenceMean(feature.name()));
                }
                mean
            }
        };
    }
    Ok(out)
}

/// Groups raw readings by (patient, timestamp), coerces and converts
/// them, and imputes whatever is missing. Groups appear in first-seen
/// order; within a group the last reading of a feature wins.
pub fn preprocess_batch(
    readings: &[RawReading],
    stats: &ReferenceStats,
) -> Result<Vec<PreprocessedSample>, FogError> {
    let mut keys: Vec<([u8; 32], u32)> = Vec::new();
    let mut groups: Vec<PartialSample> = Vec::new();
    for reading in readings {
        let key = (reading.patient_id, reading.t);
        let slot = match keys.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                keys.push(key);
                groups.push(PartialSample::default());
                groups.len() - 1
            }
        };
        let coerced = coerce_numeric(reading.feature, &reading.value);
        let value = if reading.feature == Feature::HeartRate {
            coerced.and_then(|bpm| convert_heart_rate(bpm).ok())
        } else {
            coerced
        };
        groups[slot].set(reading.feature, value);
    }

    let mut out = Vec::with_capacity(groups.len());
    for ((patient_id, t), partial) in keys.into_iter().zip(groups) {
        let v = impute(&partial, stats)?;
        out.push(PreprocessedSample {
            patient_id,
            vitals: VitalsSample {
                glucose: v[Feature::Glucose as usize],
                systolic_bp: v[Feature::SystolicBp as usize],
                heart_rate: v[Feature::HeartRate as usize],
                sweating: v[Feature::Sweating as usize],
                shivering: v[Feature::Shivering as usize],
                timestamp: t,
                label: None,
            },
            diastolic_bp: v[Feature::DiastolicBp as usize],
            body_temp: v[Feature::BodyTemp as usize],
        });
    }
    Ok(out)
}
