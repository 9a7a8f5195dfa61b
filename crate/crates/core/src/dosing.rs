//! Rescue-protocol state machine and simulated medicine pump.
//!
//! On a positive detection an idle controller dispenses the first dose
//! and schedules a recheck 15 simulated minutes out. If glucose is
//! still strictly below 70 mg/dl at the recheck the cycle re-arms with
//! a second dose; at or above 70 the episode resolves. Dose volumes are
//! the two fixed presets (0.2 ml adult, 0.1 ml child) and all volume
//! accounting runs in integer microliters, so reservoir conservation is
//! exact.
//!
//! One controller per patient; transitions must be serialized by the
//! caller (the simulation event queue or the gateway).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::AgeClass;

/// Glucose level (mg/dl) below which an episode is ongoing.
pub const HYPO_THRESHOLD_MG_DL: f64 = 70.0;

/// Seconds between a dose and its recheck.
pub const RECHECK_INTERVAL_S: u32 = 15 * 60;

/// Consecutive dose cycles after which the controller stands down and
/// escalates instead of dosing again.
pub const DEFAULT_MAX_CYCLES: u32 = 4;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum DosingError {
    #[error("reservoir holds {reservoir_ul} ul, dose needs {dose_ul} ul")]
    InsufficientReservoir { reservoir_ul: u32, dose_ul: u32 },
    #[error("dispense volume must be positive")]
    ZeroVolume,
    #[error("recheck due at t={due}, invoked at t={now}")]
    RecheckTooEarly { due: u32, now: u32 },
}

/// Dosing presets per age class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatientProfile {
    pub patient_id: [u8; 32],
    pub age_class: AgeClass,
}

impl PatientProfile {
    /// 0.2 ml for adults, 0.1 ml for children.
    pub fn dose_volume_ul(&self) -> u32 {
        match self.age_class {
            AgeClass::Adult => 200,
            AgeClass::Child => 100,
        }
    }

    /// 1 mg for adults, 0.5 mg for children.
    pub fn dose_mass_mg(&self) -> f64 {
        match self.age_class {
            AgeClass::Adult => 1.0,
            AgeClass::Child => 0.5,
        }
    }
}

/// Reservoir state, in microliters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PumpState {
    pub reservoir_ul: u32,
    pub last_dispense: Option<u32>,
}

impl PumpState {
    pub fn new(reservoir_ul: u32) -> PumpState {
        PumpState {
            reservoir_ul,
            last_dispense: None,
        }
    }

    pub fn reservoir_ml(&self) -> f64 {
        self.reservoir_ul as f64 / 1000.0
    }

    /// Whole doses left at the profile's preset volume.
    pub fn doses_remaining(&self, profile: &PatientProfile) -> u32 {
        self.reservoir_ul / profile.dose_volume_ul()
    }
}

/// Removes exactly `volume_ul` from the reservoir; no partial doses.
pub fn dispense(pump: &mut PumpState, volume_ul: u32, now: u32) -> Result<(), DosingError> {
    if volume_ul == 0 {
        return Err(DosingError::ZeroVolume);
    }
    if pump.reservoir_ul < volume_ul {
        return Err(DosingError::InsufficientReservoir {
            reservoir_ul: pump.reservoir_ul,
            dose_ul: volume_ul,
        });
    }
    pump.reservoir_ul -= volume_ul;
    pump.last_dispense = Some(now);
    Ok(())
}

/// Protocol phase. `FirstDoseGiven` is the momentary state between a
/// dispense and its recheck arming; controllers at rest sit in `Idle`,
/// `AwaitingRecheck`, or `ReservoirEmpty`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "phase")]
pub enum DosingPhase {
    Idle,
    FirstDoseGiven { at: u32 },
    AwaitingRecheck { due: u32 },
    Resolved,
    ReservoirEmpty,
}

impl DosingPhase {
    pub fn name(&self) -> &'static str {
        match self {
            DosingPhase::Idle => "Idle",
            DosingPhase::FirstDoseGiven { .. } => "FirstDoseGiven",
            DosingPhase::AwaitingRecheck { .. } => "AwaitingRecheck",
            DosingPhase::Resolved => "Resolved",
            DosingPhase::ReservoirEmpty => "ReservoirEmpty",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoseOrdinal {
    First = 1,
    Second = 2,
}

/// One administered dose, as recorded on the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DoseEvent {
    pub patient_id: [u8; 32],
    pub ordinal: DoseOrdinal,
    pub volume_ul: u32,
    pub at: u32,
    pub reservoir_after_ul: u32,
}

impl DoseEvent {
    /// Ledger payload: ordinal (1) || volume ul (4, BE) ||
    /// reservoir-after ul (4, BE).
    pub fn payload_bytes(&self) -> [u8; 9] {
        let mut out = [0u8; 9];
        out[0] = self.ordinal as u8;
        out[1..5].copy_from_slice(&self.volume_ul.to_be_bytes());
        out[5..9].copy_from_slice(&self.reservoir_after_ul.to_be_bytes());
        out
    }

    pub fn from_payload_bytes(patient_id: [u8; 32], at: u32, bytes: &[u8]) -> Option<DoseEvent> {
        if bytes.len() != 9 {
            return None;
        }
        let ordinal = match bytes[0] {
            1 => DoseOrdinal::First,
            2 => DoseOrdinal::Second,
            _ => return None,
        };
        Some(DoseEvent {
            patient_id,
            ordinal,
            volume_ul: u32::from_be_bytes(bytes[1..5].try_into().unwrap()),
            at,
            reservoir_after_ul: u32::from_be_bytes(bytes[5..9].try_into().unwrap()),
        })
    }
}

/// Alerts the controller raises; the gateway turns these into
/// notifications.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DosingAlert {
    /// First dose given for a detected episode.
    Hypo,
    /// Recheck found glucose still below threshold; second dose given.
    SecondDose,
    /// Doses remaining crossed the refill margin.
    Refill,
    /// Dispense failed for lack of medicine.
    ReservoirEmpty,
    /// Cycle cap reached without resolution; humans must take over.
    Escalation,
}

/// What a controller step produced.
#[derive(Debug, Clone, PartialEq)]
pub enum DosingOutcome {
    Dosed {
        event: DoseEvent,
        alerts: Vec<DosingAlert>,
        recheck_due: u32,
    },
    NoAction {
        reason: NoActionReason,
    },
    Resolved,
    ReservoirEmpty {
        alerts: Vec<DosingAlert>,
    },
    /// Cap reached; episode abandoned to human care.
    Escalated {
        alerts: Vec<DosingAlert>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoActionReason {
    AlreadyInCycle,
}

/// Per-patient rescue-protocol state machine.
#[derive(Debug, Clone, PartialEq)]
pub struct DosingController {
    pub profile: PatientProfile,
    pub pump: PumpState,
    pub phase: DosingPhase,
    /// Doses given in the current episode.
    cycles: u32,
    pub max_cycles: u32,
    /// Edge trigger for the refill alert; re-armed by a refill.
    refill_alerted: bool,
}

impl DosingController {
    pub fn new(profile: PatientProfile, reservoir_ul: u32) -> DosingController {
        DosingController {
            profile,
            pump: PumpState::new(reservoir_ul),
            phase: DosingPhase::Idle,
            cycles: 0,
            max_cycles: DEFAULT_MAX_CYCLES,
            refill_alerted: false,
        }
    }

    /// Refill alert, edge-triggered at doses_remaining <= 5.
    pub fn refill_check(&mut self) -> Option<DosingAlert> {
        if self.pump.doses_remaining(&self.profile) <= 5
            && !self.refill_alerted {
                self.refill_alerted = true;
                return Some(DosingAlert::Refill);
            }
        None
    }

    /// Adds medicine and re-arms the refill alert.
    pub fn refill(&mut self, volume_ul: u32) {
        self.pump.reservoir_ul += volume_ul;
        if self.pump.doses_remaining(&self.profile) > 5 {
            self.refill_alerted = false;
        }
        if self.phase == DosingPhase::ReservoirEmpty {
            self.phase = DosingPhase::Idle;
        }
    }

    fn dose(&mut self, ordinal: DoseOrdinal, now: u32) -> Result<DosingOutcome, DosingError> {
        let volume = self.profile.dose_volume_ul();
        match dispense(&mut self.pump, volume, now) {
            Err(DosingError::InsufficientReservoir { .. }) => {
                self.phase = DosingPhase::ReservoirEmpty;
                Ok(DosingOutcome::ReservoirEmpty {
                    alerts: vec![DosingAlert::ReservoirEmpty],
                })
            }
            Err(e) => Err(e),
            Ok(()) => {
                self.cycles += 1;
                let event = DoseEvent {
                    patient_id: self.profile.patient_id,
                    ordinal,
                    volume_ul: volume,
                    at: now,
                    reservoir_after_ul: self.pump.reservoir_ul,
                };
                // FirstDoseGiven, then immediately armed for recheck.
                self.phase = DosingPhase::FirstDoseGiven { at: now };
                let due = now + RECHECK_INTERVAL_S;
                self.phase = DosingPhase::AwaitingRecheck { due };
                let mut alerts = vec![match ordinal {
                    DoseOrdinal::First => DosingAlert::Hypo,
                    DoseOrdinal::Second => DosingAlert::SecondDose,
                }];
                if let Some(alert) = self.refill_check() {
                    alerts.push(alert);
                }
                Ok(DosingOutcome::Dosed {
                    event,
                    alerts,
                    recheck_due: due,
                })
            }
        }
    }

    /// A positive detection: doses only from Idle; anywhere else the
    /// cycle is already running.
    pub fn on_detection(&mut self, now: u32) -> Result<DosingOutcome, DosingError> {
        match self.phase {
            DosingPhase::Idle => {
                self.cycles = 0;
                self.dose(DoseOrdinal::First, now)
            }
            _ => Ok(DosingOutcome::NoAction {
                reason: NoActionReason::AlreadyInCycle,
            }),
        }
    }

    /// The scheduled recheck: strictly below 70 re-doses (up to the
    /// cycle cap); at or exactly 70 resolves back to Idle.
    pub fn on_recheck(&mut self, glucose_mg_dl: f64, now: u32) -> Result<DosingOutcome, DosingError> {
        let due = match self.phase {
            DosingPhase::AwaitingRecheck { due } => due,
            // A recheck landing after the phase moved on does nothing.
            _ => {
                return Ok(DosingOutcome::NoAction {
                    reason: NoActionReason::AlreadyInCycle,
                })
            }
        };
        if now < due {
            return Err(DosingError::RecheckTooEarly { due, now });
        }
        if glucose_mg_dl < HYPO_THRESHOLD_MG_DL {
            if self.cycles >= self.max_cycles {
                self.phase = DosingPhase::Idle;
                self.cycles = 0;
                return Ok(DosingOutcome::Escalated {
                    alerts: vec![DosingAlert::Escalation],
                });
            }
            self.dose(DoseOrdinal::Second, now)
        } else {
            self.phase = DosingPhase::Resolved;
            self.phase = DosingPhase::Idle;
            self.cycles = 0;
            Ok(DosingOutcome::Resolved)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adult() -> PatientProfile {
        PatientProfile {
            patient_id: [7; 32],
            age_class: AgeClass::Adult,
        }
    }

    fn child() -> PatientProfile {
        PatientProfile {
            patient_id: [8; 32],
            age_class: AgeClass::Child,
        }
    }

    #[test]
    fn presets_are_exact() {
        assert_eq!(adult().dose_volume_ul(), 200);
        assert_eq!(adult().dose_mass_mg(), 1.0);
        assert_eq!(child().dose_volume_ul(), 100);
        assert_eq!(child().dose_mass_mg(), 0.5);
    }

    #[test]
    fn adult_first_dose_from_idle() {
        let mut c = DosingController::new(adult(), 1200);
        match c.on_detection(0).unwrap() {
            DosingOutcome::Dosed {
                event,
                recheck_due,
                alerts,
            } => {
                assert_eq!(event.volume_ul, 200);
                assert_eq!(event.ordinal, DoseOrdinal::First);
                assert_eq!(event.reservoir_after_ul, 1000);
                assert_eq!(recheck_due, 900);
                assert!(alerts.contains(&DosingAlert::Hypo));
            }
            other => panic!("expected a dose, got {other:?}"),
        }
        assert_eq!(c.phase, DosingPhase::AwaitingRecheck { due: 900 });
        assert_eq!(c.pump.reservoir_ml(), 1.0);
        assert_eq!(c.pump.doses_remaining(&adult()), 5);
    }

    #[test]
    fn child_dose_is_100_ul() {
        let mut c = DosingController::new(child(), 1200);
        match c.on_detection(0).unwrap() {
            DosingOutcome::Dosed { event, .. } => assert_eq!(event.volume_ul, 100),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn detection_mid_cycle_is_no_action() {
        let mut c = DosingController::new(adult(), 1200);
        c.on_detection(0).unwrap();
        assert_eq!(
            c.on_detection(300).unwrap(),
            DosingOutcome::NoAction {
                reason: NoActionReason::AlreadyInCycle
            }
        );
    }

    #[test]
    fn recheck_below_threshold_re_doses() {
        let mut c = DosingController::new(adult(), 1200);
        c.on_detection(0).unwrap();
        match c.on_recheck(65.0, 900).unwrap() {
            DosingOutcome::Dosed {
                event,
                recheck_due,
                alerts,
            } => {
                assert_eq!(event.ordinal, DoseOrdinal::Second);
                assert_eq!(event.volume_ul, 200);
                assert_eq!(recheck_due, 1800);
                assert!(alerts.contains(&DosingAlert::SecondDose));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn recheck_at_or_above_threshold_resolves() {
        let mut c = DosingController::new(adult(), 1200);
        c.on_detection(0).unwrap();
        assert_eq!(c.on_recheck(85.0, 900).unwrap(), DosingOutcome::Resolved);
        assert_eq!(c.phase, DosingPhase::Idle);

        // Exactly 70.0 resolves: the protocol doses strictly below 70.
        c.on_detection(1000).unwrap();
        assert_eq!(c.on_recheck(70.0, 1900).unwrap(), DosingOutcome::Resolved);
    }

    #[test]
    fn early_recheck_is_deferred_without_state_change() {
        let mut c = DosingController::new(adult(), 1200);
        c.on_detection(0).unwrap();
        let before = c.clone();
        assert_eq!(
            c.on_recheck(60.0, 600).unwrap_err(),
            DosingError::RecheckTooEarly { due: 900, now: 600 }
        );
        assert_eq!(c, before);
    }

    #[test]
    fn dispense_arithmetic_is_exact() {
        let mut pump = PumpState::new(1200);
        dispense(&mut pump, 200, 5).unwrap();
        assert_eq!(pump.reservoir_ul, 1000);
        assert_eq!(pump.doses_remaining(&adult()), 5);
        assert_eq!(pump.last_dispense, Some(5));

        let mut low = PumpState::new(100);
        assert_eq!(
            dispense(&mut low, 200, 6).unwrap_err(),
            DosingError::InsufficientReservoir {
                reservoir_ul: 100,
                dose_ul: 200
            }
        );
        assert_eq!(low.reservoir_ul, 100);

        let mut exact = PumpState::new(200);
        dispense(&mut exact, 200, 7).unwrap();
        assert_eq!(exact.reservoir_ul, 0);
        assert_eq!(exact.doses_remaining(&adult()), 0);
    }

    #[test]
    fn empty_reservoir_transitions_and_alerts() {
        let mut c = DosingController::new(adult(), 100);
        match c.on_detection(0).unwrap() {
            DosingOutcome::ReservoirEmpty { alerts } => {
                assert_eq!(alerts, vec![DosingAlert::ReservoirEmpty]);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(c.phase, DosingPhase::ReservoirEmpty);
        // Still empty: further detections keep reporting the cycle.
        assert!(matches!(
            c.on_detection(300).unwrap(),
            DosingOutcome::NoAction { .. }
        ));
    }

    #[test]
    fn refill_alert_is_edge_triggered() {
        let mut c = DosingController::new(adult(), 1200); // 6 doses
        assert_eq!(c.refill_check(), None);
        match c.on_detection(0).unwrap() {
            DosingOutcome::Dosed { alerts, .. } => {
                // 5 doses remain: the dose itself raises the alert.
                assert!(alerts.contains(&DosingAlert::Refill));
            }
            other => panic!("{other:?}"),
        }
        // Re-checking at the same level stays quiet.
        assert_eq!(c.refill_check(), None);
        assert_eq!(c.refill_check(), None);

        // A refill above the margin re-arms the trigger.
        c.refill(1000); // back to 10 doses
        assert_eq!(c.refill_check(), None);
        c.pump.reservoir_ul = 1000; // force back to 5 doses
        assert_eq!(c.refill_check(), Some(DosingAlert::Refill));
    }

    #[test]
    fn plenty_of_reservoir_is_ok() {
        let mut c = DosingController::new(adult(), 10_000); // 50 doses
        assert_eq!(c.refill_check(), None);
    }

    #[test]
    fn persistent_hypo_doses_every_cycle_until_empty() {
        let mut c = DosingController::new(adult(), 600); // 3 doses
        let mut dosed_at = Vec::new();
        match c.on_detection(0).unwrap() {
            DosingOutcome::Dosed { event, .. } => dosed_at.push(event.at),
            other => panic!("{other:?}"),
        }
        let mut t = 900;
        loop {
            match c.on_recheck(55.0, t).unwrap() {
                DosingOutcome::Dosed { event, .. } => dosed_at.push(event.at),
                DosingOutcome::ReservoirEmpty { .. } => break,
                other => panic!("{other:?}"),
            }
            t += 900;
        }
        assert_eq!(dosed_at, vec![0, 900, 1800]);
        assert_eq!(c.pump.reservoir_ul, 0);
        assert_eq!(c.phase, DosingPhase::ReservoirEmpty);
    }

    #[test]
    fn cycle_cap_escalates_instead_of_dosing_forever() {
        let mut c = DosingController::new(adult(), 10_000);
        c.on_detection(0).unwrap();
        let mut doses = 1;
        let mut t = 900;
        loop {
            match c.on_recheck(50.0, t).unwrap() {
                DosingOutcome::Dosed { .. } => doses += 1,
                DosingOutcome::Escalated { alerts } => {
                    assert_eq!(alerts, vec![DosingAlert::Escalation]);
                    break;
                }
                other => panic!("{other:?}"),
            }
            t += 900;
        }
        assert_eq!(doses, DEFAULT_MAX_CYCLES);
        assert_eq!(c.phase, DosingPhase::Idle);
    }

    #[test]
    fn conservation_over_a_random_walk() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(17);
        let initial = 2_000u32;
        let mut c = DosingController::new(adult(), initial);
        let mut dispensed = 0u64;
        let mut t = 0u32;
        for _ in 0..200 {
            t += 900;
            let glucose = rng.gen_range(40.0..120.0);
            let outcome = match c.phase {
                DosingPhase::AwaitingRecheck { .. } => c.on_recheck(glucose, t).unwrap(),
                _ => {
                    if glucose < HYPO_THRESHOLD_MG_DL {
                        c.on_detection(t).unwrap()
                    } else {
                        continue;
                    }
                }
            };
            if let DosingOutcome::Dosed { event, .. } = outcome {
                dispensed += event.volume_ul as u64;
            }
        }
        assert_eq!(initial as u64, c.pump.reservoir_ul as u64 + dispensed);
    }

    #[test]
    fn dose_payload_round_trip() {
        let e = DoseEvent {
            patient_id: [7; 32],
            ordinal: DoseOrdinal::Second,
            volume_ul: 200,
            at: 1800,
            reservoir_after_ul: 800,
        };
        let bytes = e.payload_bytes();
        assert_eq!(bytes.len(), 9);
        assert_eq!(DoseEvent::from_payload_bytes([7; 32], 1800, &bytes), Some(e));
        assert_eq!(DoseEvent::from_payload_bytes([7; 32], 0, &bytes[..8]), None);
    }
}
