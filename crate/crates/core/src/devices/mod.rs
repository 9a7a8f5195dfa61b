//! Deterministic device and physiology simulation.
//!
//! A virtual clock drives scripted CGM/smartwatch emitters over a
//! piecewise-linear glucose trajectory; a toy kinetics model ramps each
//! dose's effect in linearly over the 15-minute recheck horizon. The
//! simulation core is single-threaded and event-ordered: events at
//! equal times fire in insertion order, so full runs are byte-identical
//! for fixed seeds.

pub mod sim;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fog::{Feature, RawReading, RawValue, Source};
use crate::identity::AgeClass;

pub use sim::{run_scenario, EventLog, LogEntry, LogEvent};

#[derive(Debug, Error, PartialEq)]
pub enum DeviceError {
    #[error("cannot advance the clock from t={now} back to t={until}")]
    TimeReversal { now: u32, until: u32 },
    #[error("t={t} is outside the scenario (duration {duration_s}s)")]
    OutsideScenario { t: u32, duration_s: u32 },
    #[error("scenario: {0}")]
    BadScenario(String),
}

/// Simulated clock with an event queue ordered by (due time, insertion
/// sequence).
#[derive(Debug)]
pub struct VirtualClock<E> {
    now: u32,
    seq: u64,
    queue: BTreeMap<(u32, u64), E>,
}

impl<E> VirtualClock<E> {
    pub fn new() -> VirtualClock<E> {
        VirtualClock {
            now: 0,
            seq: 0,
            queue: BTreeMap::new(),
        }
    }

    pub fn now(&self) -> u32 {
        self.now
    }

    pub fn schedule(&mut self, due: u32, event: E) {
        self.queue.insert((due, self.seq), event);
        self.seq += 1;
    }

    /// Fires every event due at or before `until`, in deterministic
    /// order, leaving the clock at `until`.
    pub fn advance(&mut self, until: u32) -> Result<Vec<(u32, E)>, DeviceError> {
        if until < self.now {
            return Err(DeviceError::TimeReversal {
                now: self.now,
                until,
            });
        }
        let mut fired = Vec::new();
        while let Some(entry) = self.queue.first_entry() {
            let (due, _) = *entry.key();
            if due > until {
                break;
            }
            self.now = due;
            fired.push((due, entry.remove()));
        }
        self.now = until;
        Ok(fired)
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}

impl<E> Default for VirtualClock<E> {
    fn default() -> Self {
        VirtualClock::new()
    }
}

/// Bernoulli rates for the two symptom features, conditioned on the
/// true glucose being below the hypo threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymptomPolicy {
    pub sweating_hypo: f64,
    pub sweating_normal: f64,
    pub shivering_hypo: f64,
    pub shivering_normal: f64,
}

impl Default for SymptomPolicy {
    fn default() -> SymptomPolicy {
        SymptomPolicy {
            sweating_hypo: 0.20,
            sweating_normal: 0.043,
            shivering_hypo: 0.26,
            shivering_normal: 0.045,
        }
    }
}

fn default_interval() -> u32 {
    300
}

fn default_noise() -> f64 {
    2.0
}

fn default_kinetics_scale() -> f64 {
    1.0
}

fn default_reservoir() -> f64 {
    1.2
}

fn default_symptom_policy() -> SymptomPolicy {
    SymptomPolicy::default()
}

/// Patient described by a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioProfile {
    pub age_class: AgeClass,
    #[serde(default = "default_reservoir")]
    pub reservoir_ml: f64,
}

/// A scripted episode: who the patient is, how often samples arrive,
/// the true glucose trajectory, symptom rates, and the run length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub profile: ScenarioProfile,
    #[serde(default = "default_interval")]
    pub interval_s: u32,
    /// Piecewise-linear control points [t_seconds, mg_dl], strictly
    /// increasing in time.
    pub trajectory: Vec<(u32, f64)>,
    #[serde(default = "default_symptom_policy")]
    pub symptom_policy: SymptomPolicy,
    pub duration_s: u32,
    pub seed: u64,
    /// Sensor noise sigma in mg/dl.
    #[serde(default = "default_noise")]
    pub noise_sigma_mg_dl: f64,
    /// Scales the per-dose kinetics increment (1.0 = full effect).
    #[serde(default = "default_kinetics_scale")]
    pub kinetics_scale: f64,
}

impl ScenarioScript {
    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.trajectory.is_empty() {
            return Err(DeviceError::BadScenario("trajectory is empty".into()));
        }
        for w in self.trajectory.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(DeviceError::BadScenario(
                    "trajectory control points must be strictly increasing in time".into(),
                ));
            }
        }
        if let Some(&(_, v)) = self
            .trajectory
            .iter()
            .find(|(_, v)| !(20.0..=600.0).contains(v))
        {
            return Err(DeviceError::BadScenario(format!(
                "trajectory value {v} outside [20, 600]"
            )));
        }
        if self.interval_s == 0 {
            return Err(DeviceError::BadScenario("interval_s must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ScenarioScript, DeviceError> {
        let text = fs::read_to_string(path).map_err(|e| DeviceError::BadScenario(e.to_string()))?;
        let script: ScenarioScript =
            serde_json::from_str(&text).map_err(|e| DeviceError::BadScenario(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    /// Linear interpolation along the control points; flat before the
    /// first and after the last.
    pub fn glucose_at(&self, t: u32) -> f64 {
        let points = &self.trajectory;
        if t <= points[0].0 {
            return points[0].1;
        }
        for w in points.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t <= t1 {
                let frac = (t - t0) as f64 / (t1 - t0) as f64;
                return v0 + frac * (v1 - v0);
            }
        }
        points[points.len() - 1].1
    }
}

/// Accumulated dose effects: each dose adds its increment linearly over
/// the recheck horizon and holds at full strength afterwards.
#[derive(Debug, Clone, Default)]
pub struct GlucoseKinetics {
    doses: Vec<(u32, f64)>,
}

impl GlucoseKinetics {
    /// Full per-dose increment, before scenario scaling: +40 mg/dl for
    /// the adult preset, +20 for the child preset.
    pub fn increment_for(age_class: AgeClass) -> f64 {
        match age_class {
            AgeClass::Adult => 40.0,
            AgeClass::Child => 20.0,
        }
    }

    pub fn record_dose(&mut self, at: u32, increment: f64) {
        self.doses.push((at, increment));
    }

    /// Sum of active dose effects at time `t`.
    pub fn effect_at(&self, t: u32) -> f64 {
        let ramp = crate::dosing::RECHECK_INTERVAL_S as f64;
        self.doses
            .iter()
            .map(|&(at, increment)| {
                if t < at {
                    0.0
                } else {
                    let elapsed = (t - at) as f64;
                    increment * (elapsed / ramp).min(1.0)
                }
            })
            .sum()
    }
}

/// Deterministic per-patient sensor emitter.
pub struct SensorRig {
    pub script: ScenarioScript,
    pub kinetics: GlucoseKinetics,
    patient_id: [u8; 32],
    rng: ChaCha20Rng,
}

impl SensorRig {
    pub fn new(script: ScenarioScript, patient_id: [u8; 32]) -> SensorRig {
        let rng = ChaCha20Rng::seed_from_u64(script.seed);
        SensorRig {
            script,
            kinetics: GlucoseKinetics::default(),
            patient_id,
            rng,
        }
    }

    /// True glucose at `t`: trajectory plus accumulated dose effects.
    pub fn true_glucose(&self, t: u32) -> f64 {
        self.script.glucose_at(t) + self.kinetics.effect_at(t)
    }

    /// One noisy glucose observation (sensor noise only; used by the
    /// recheck probe as well as the CGM emitter).
    pub fn sample_glucose(&mut self, t: u32) -> f64 {
        let noise = if self.script.noise_sigma_mg_dl > 0.0 {
            Normal::new(0.0, self.script.noise_sigma_mg_dl)
                .unwrap()
                .sample(&mut self.rng)
        } else {
            0.0
        };
        (self.true_glucose(t) + noise).clamp(20.0, 600.0)
    }

    /// Emits the full seven-feature reading set for one sampling tick.
    pub fn next_reading(&mut self, t: u32) -> Result<Vec<RawReading>, DeviceError> {
        if t > self.script.duration_s {
            return Err(DeviceError::OutsideScenario {
                t,
                duration_s: self.script.duration_s,
            });
        }
        let glucose = self.sample_glucose(t);
        let hypo = glucose < crate::dosing::HYPO_THRESHOLD_MG_DL;
        let policy = self.script.symptom_policy;

        // Vitals around the reference operating point, shifted the same
        // direction the generator shifts them during hypo samples.
        let mut draw = |mean: f64, std: f64, lo: f64, hi: f64| -> f64 {
            Normal::new(mean, std)
                .unwrap()
                .sample(&mut self.rng)
                .clamp(lo, hi)
        };
        let systolic = draw(if hypo { 121.0 } else { 115.5 }, 3.0, 95.0, 145.0);
        let rr_ms = draw(if hypo { 630.0 } else { 695.0 }, 20.0, 461.0, 769.0);
        let heart_rate_bpm = 60_000.0 / rr_ms;
        let diastolic = draw(78.0, 4.0, 50.0, 110.0);
        let body_temp = draw(36.8, 0.2, 35.0, 39.0);
        let p_sweat = if hypo { policy.sweating_hypo } else { policy.sweating_normal };
        let p_shiver = if hypo { policy.shivering_hypo } else { policy.shivering_normal };
        let sweating = (self.rng.gen::<f64>() < p_sweat) as u8 as f64;
        let shivering = (self.rng.gen::<f64>() < p_shiver) as u8 as f64;

        let reading = |source, feature, value: f64| RawReading {
            patient_id: self.patient_id,
            source,
            feature,
            value: RawValue::Number(value),
            t,
        };
        Ok(vec![
            reading(Source::Cgm, Feature::Glucose, glucose),
            reading(Source::Smartwatch, Feature::DiastolicBp, diastolic),
            reading(Source::Smartwatch, Feature::SystolicBp, systolic),
            reading(Source::Smartwatch, Feature::HeartRate, heart_rate_bpm),
            reading(Source::Smartwatch, Feature::BodyTemp, body_temp),
            reading(Source::Smartwatch, Feature::Sweating, sweating),
            reading(Source::Manual, Feature::Shivering, shivering),
        ])
    }
}
