//! Closed-loop scenario runner.
//!
//! Drives a scripted patient tick by tick through the full system:
//! sensor readings are ingested through the gateway core (fog → ledger
//! → detector → dosing) and dose rechecks fire as scheduled events on
//! the virtual clock. Ticks are scheduled up front, so at equal due
//! times a sampling tick ingests before the recheck runs — the recheck
//! therefore reads the freshest sample. The whole run is a pure
//! function of (script, seeds, model).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::{DeviceError, ScenarioScript, SensorRig, VirtualClock};
use crate::gateway::{
    Credentials, DoseView, GatewayError, IngestBatch, IngestReading, NotificationEvent,
    RegistrationRequest, System,
};
use crate::identity::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SimEvent {
    SampleTick,
    Recheck,
}

/// One logged simulation event.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum LogEvent {
    Reading {
        glucose: f64,
        true_glucose: f64,
    },
    Detection {
        probability: f64,
        label: u8,
        vitals_block: u64,
        detection_block: u64,
    },
    Dose {
        ordinal: u8,
        volume_ml: f64,
        reservoir_ml_after: f64,
    },
    Recheck {
        glucose: f64,
        resolved: bool,
    },
    Notification {
        event: NotificationEvent,
    },
    Escalation,
    Error {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub t: u32,
    #[serde(flatten)]
    pub event: LogEvent,
}

/// Ordered event log of one scenario run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub entries: Vec<LogEntry>,
}

impl EventLog {
    fn push(&mut self, t: u32, event: LogEvent) {
        self.entries.push(LogEntry { t, event });
    }

    /// JSON-lines export, one event per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("log entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut file = fs::File::create(path)?;
        file.write_all(self.to_jsonl().as_bytes())
    }

    pub fn doses(&self) -> Vec<&LogEntry> {
        self.entries
            .iter()
            .filter(|e| matches!(e.event, LogEvent::Dose { .. }))
            .collect()
    }

    pub fn detections(&self) -> Vec<&LogEntry> {
        self.entries
            .iter()
            .filter(|e| matches!(e.event, LogEvent::Detection { .. }))
            .collect()
    }
}

fn register_cast(system: &mut System, script: &ScenarioScript) -> Result<Credentials, GatewayError> {
    // The scripted patient plus one relative miner, so the approval
    // majority is an actual quorum (patient + relative of 2).
    let relative = system.register(RegistrationRequest {
        role: Some(Role::Patient),
        name: Some("Scripted Relative".into()),
        date_of_birth: Some("1975-06-01".into()),
        email: Some("relative@scenario.local".into()),
        phone: Some("555-0001".into()),
        address: Some("Scenario Lane 1".into()),
        age_class: Some(crate::identity::AgeClass::Adult),
        ..Default::default()
    })?;
    system.register(RegistrationRequest {
        role: Some(Role::Patient),
        name: Some("Scripted Patient".into()),
        date_of_birth: Some("1980-01-01".into()),
        email: Some("patient@scenario.local".into()),
        phone: Some("555-0002".into()),
        address: Some("Scenario Lane 2".into()),
        age_class: Some(script.profile.age_class),
        relative_ids: vec![hex::encode(relative.user_id)],
        reservoir_ml: Some(script.profile.reservoir_ml),
        ..Default::default()
    })
}

fn ingest_batch(patient: &Credentials, readings: Vec<crate::fog::RawReading>) -> IngestBatch {
    IngestBatch {
        patient_id: hex::encode(patient.user_id),
        readings: readings
            .into_iter()
            .map(|r| IngestReading {
                feature: r.feature,
                value: r.value,
                source: r.source,
                t: r.t,
            })
            .collect(),
    }
}

fn log_dose(log: &mut EventLog, t: u32, dose: &DoseView) {
    log.push(
        t,
        LogEvent::Dose {
            ordinal: dose.ordinal,
            volume_ml: dose.volume_ml,
            reservoir_ml_after: dose.reservoir_ml_after,
        },
    );
}

fn log_notifications(log: &mut EventLog, t: u32, notifications: &[NotificationEvent]) {
    for event in notifications {
        log.push(
            t,
            LogEvent::Notification {
                event: event.clone(),
            },
        );
    }
}

/// Runs `script` against a fresh closed loop inside `system` and
/// returns the complete ordered event log. Module failures land in the
/// log as a terminal `Error` entry.
pub fn run_scenario(script: &ScenarioScript, system: &mut System) -> Result<EventLog, DeviceError> {
    script.validate()?;
    let mut log = EventLog::default();

    let patient = match register_cast(system, script) {
        Ok(c) => c,
        Err(e) => {
            log.push(0, LogEvent::Error { message: e.to_string() });
            return Ok(log);
        }
    };
    let mut rig = SensorRig::new(script.clone(), patient.user_id);
    let mut clock: VirtualClock<SimEvent> = VirtualClock::new();
    let mut t = 0u32;
    while t <= script.duration_s {
        clock.schedule(t, SimEvent::SampleTick);
        t += script.interval_s;
    }

    let kinetics_increment = super::GlucoseKinetics::increment_for(script.profile.age_class)
        * script.kinetics_scale;

    let fired = match clock.advance(script.duration_s) {
        Ok(f) => f,
        Err(e) => {
            log.push(0, LogEvent::Error { message: e.to_string() });
            return Ok(log);
        }
    };
    let mut queue: std::collections::VecDeque<(u32, SimEvent)> = fired.into();
    let reinsert = |queue: &mut std::collections::VecDeque<(u32, SimEvent)>, due: u32| {
        // Rechecks spawned mid-run keep (time, insertion) order.
        let at = queue.partition_point(|&(t, _)| t <= due);
        queue.insert(at, (due, SimEvent::Recheck));
    };

    while let Some((now, event)) = queue.pop_front() {
        match event {
            SimEvent::SampleTick => {
                let readings = match rig.next_reading(now) {
                    Ok(r) => r,
                    Err(e) => {
                        log.push(now, LogEvent::Error { message: e.to_string() });
                        break;
                    }
                };
                let glucose = readings
                    .iter()
                    .find_map(|r| match (&r.feature, &r.value) {
                        (crate::fog::Feature::Glucose, crate::fog::RawValue::Number(v)) => Some(*v),
                        _ => None,
                    })
                    .unwrap_or(f64::NAN);
                log.push(
                    now,
                    LogEvent::Reading {
                        glucose,
                        true_glucose: rig.true_glucose(now),
                    },
                );
                let summary = match system.ingest(&patient, &ingest_batch(&patient, readings), now)
                {
                    Ok(s) => s,
                    Err(e) => {
                        log.push(now, LogEvent::Error { message: e.to_string() });
                        break;
                    }
                };
                for d in &summary.detections {
                    log.push(
                        now,
                        LogEvent::Detection {
                            probability: d.probability,
                            label: d.label,
                            vitals_block: summary.block_index,
                            detection_block: summary.detection_block_index,
                        },
                    );
                }
                if let Some(dose) = &summary.dose_summary {
                    log_dose(&mut log, now, dose);
                    rig.kinetics.record_dose(dose.t, kinetics_increment);
                }
                log_notifications(&mut log, now, &summary.notifications);
                if let Some(due) = summary.recheck_due {
                    if due <= script.duration_s {
                        reinsert(&mut queue, due);
                    }
                }
            }
            SimEvent::Recheck => {
                let report = match system.recheck_patient(patient.user_id, now) {
                    Ok(r) => r,
                    Err(e) => {
                        log.push(now, LogEvent::Error { message: e.to_string() });
                        break;
                    }
                };
                log.push(
                    now,
                    LogEvent::Recheck {
                        glucose: report.glucose,
                        resolved: report.resolved,
                    },
                );
                if let Some(dose) = &report.dose_summary {
                    log_dose(&mut log, now, dose);
                    rig.kinetics.record_dose(dose.t, kinetics_increment);
                }
                if report.escalated {
                    log.push(now, LogEvent::Escalation);
                }
                log_notifications(&mut log, now, &report.notifications);
                if let Some(due) = report.recheck_due {
                    if due <= script.duration_s {
                        reinsert(&mut queue, due);
                    }
                }
            }
        }
    }
    Ok(log)
}
