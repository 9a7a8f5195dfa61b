//! The service core binding identity, fog, ledger, detector, and dosing
//! into one request surface.
//!
//! [`System`] is transport-agnostic: the HTTP layer in [`http`] and the
//! device simulator both drive the same methods, so the closed loop is
//! testable in-process and byte-deterministic under the virtual clock.
//! Time always arrives as an explicit parameter.
//!
//! An accepted ingest appends exactly two blocks: one carrying the
//! vitals transactions, one carrying the detection results plus any
//! dose fired by them. Doses triggered by scheduled rechecks append
//! their own single block.

pub mod config;
pub mod http;
pub mod notify;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{DetectionResult, RandomForest};
use crate::dosing::{
    DoseEvent, DosingAlert, DosingController, DosingOutcome, DosingPhase, PatientProfile,
};
use crate::fog::{self, PreprocessedSample, RawReading, ReferenceStats, VitalsSample};
use crate::identity::{
    Action, AgeClass, DenialReason, DoctorRegistration, Effect, IdentityError,
    PatientRegistration, Registry, RegistryApprovals, Role,
};
use crate::ledger::{
    hash_transaction, merkle_root, Chain, Digest32, IntegrityError, MinerApproval,
    TransactionRecord, TxKind,
};

pub use config::ServiceConfig;
pub use notify::{NotificationBody, NotificationEvent, NotificationKind, Notifier, Recipient};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("authentication failed")]
    Unauthenticated(DenialReason),
    #[error("not authorized")]
    Forbidden,
    #[error("{0} not found")]
    NotFound(&'static str),
    #[error("an identity with this email and role already exists")]
    Duplicate,
    #[error("missing required field `{0}`")]
    MissingField(String),
    #[error("linked patient credentials do not verify")]
    UnknownLinkedPatient,
    #[error("insufficient miner approvals")]
    InsufficientApprovals,
    #[error("no detection model is loaded")]
    NoModel,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl GatewayError {
    pub fn http_status(&self) -> u16 {
        match self {
            GatewayError::Unauthenticated(_) => 401,
            GatewayError::Forbidden => 403,
            GatewayError::NotFound(_) => 404,
            GatewayError::Duplicate => 409,
            GatewayError::MissingField(_) => 400,
            GatewayError::UnknownLinkedPatient => 422,
            GatewayError::InsufficientApprovals => 503,
            GatewayError::NoModel => 503,
            GatewayError::BadRequest(_) => 400,
            GatewayError::Internal(_) => 500,
        }
    }
}

impl From<IdentityError> for GatewayError {
    fn from(e: IdentityError) -> GatewayError {
        match e {
            IdentityError::DuplicateRegistration => GatewayError::Duplicate,
            IdentityError::MissingField(f) => GatewayError::MissingField(f.to_string()),
            IdentityError::UnknownLinkedPatient | IdentityError::UnknownRelative => {
                GatewayError::UnknownLinkedPatient
            }
            IdentityError::UnknownMiner => GatewayError::BadRequest("unknown miner".into()),
        }
    }
}

fn parse_id(hex_id: &str) -> Result<[u8; 32], GatewayError> {
    let bytes = hex::decode(hex_id)
        .map_err(|_| GatewayError::BadRequest(format!("`{hex_id}` is not hex")))?;
    bytes
        .try_into()
        .map_err(|_| GatewayError::BadRequest("ids are 32 bytes (64 hex chars)".into()))
}

/// Credentials issued at registration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Credentials {
    pub user_id: [u8; 32],
    pub public_key: [u8; 32],
}

/// Registration request body (both roles share one schema).
#[derive(Debug, Clone, Default, Deserialize)]
pub struct RegistrationRequest {
    pub role: Option<Role>,
    pub name: Option<String>,
    pub date_of_birth: Option<String>,
    pub email: Option<String>,
    pub phone: Option<String>,
    pub address: Option<String>,
    pub age_class: Option<AgeClass>,
    /// Patient option: already-registered relative ids (hex).
    #[serde(default)]
    pub relative_ids: Vec<String>,
    /// Pump fill at registration, child/adult default 1.2 ml.
    pub reservoir_ml: Option<f64>,
    pub qualification: Option<String>,
    pub job_details: Option<String>,
    /// Doctor requirement: linked patients' credentials.
    #[serde(default)]
    pub patients: Vec<PatientCredential>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PatientCredential {
    pub id: String,
    pub key: String,
}

/// One batch of raw readings for a patient.
#[derive(Debug, Clone, Deserialize)]
pub struct IngestBatch {
    pub patient_id: String,
    pub readings: Vec<IngestReading>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct IngestReading {
    pub feature: fog::Feature,
    pub value: fog::RawValue,
    pub source: fog::Source,
    pub t: u32,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DetectionView {
    pub probability: f64,
    pub label: u8,
    pub t: u32,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DoseView {
    pub ordinal: u8,
    pub volume_ml: f64,
    pub reservoir_ml_after: f64,
    pub t: u32,
}

impl DoseView {
    fn from_event(e: &DoseEvent) -> DoseView {
        DoseView {
            ordinal: e.ordinal as u8,
            volume_ml: e.volume_ul as f64 / 1000.0,
            reservoir_ml_after: e.reservoir_after_ul as f64 / 1000.0,
            t: e.at,
        }
    }
}

/// Everything one accepted ingest did.
#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    /// Index of the vitals block (the spec-facing `block_index`).
    pub block_index: u64,
    pub detection_block_index: u64,
    pub detections: Vec<DetectionView>,
    pub dose_summary: Option<DoseView>,
    pub notifications: Vec<NotificationEvent>,
    /// When a dose armed a recheck, its due time.
    pub recheck_due: Option<u32>,
}

/// Outcome of a scheduled recheck.
#[derive(Debug, Clone, Serialize)]
pub struct RecheckReport {
    pub patient_id: String,
    pub glucose: f64,
    pub resolved: bool,
    pub dose_summary: Option<DoseView>,
    pub dose_block_index: Option<u64>,
    pub notifications: Vec<NotificationEvent>,
    pub recheck_due: Option<u32>,
    pub escalated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PumpView {
    pub reservoir_ml: f64,
    pub doses_remaining: u32,
    pub phase: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransactionView {
    pub kind: &'static str,
    pub patient_id: String,
    pub created_at: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload_hex: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decoded: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockView {
    pub index: u64,
    pub version: u32,
    pub prev_hash: String,
    pub merkle_root: String,
    pub timestamp: u32,
    pub nonce: u32,
    pub user_id: String,
    pub approval_digest: String,
    pub block_hash: String,
    pub transactions: Vec<TransactionView>,
    pub approvals: Vec<ApprovalView>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ApprovalView {
    pub miner_id: String,
    pub signature: String,
}

/// The in-process system behind the gateway.
pub struct System {
    pub registry: Registry,
    pub chain: Chain,
    pub controllers: HashMap<[u8; 32], DosingController>,
    pub model: Option<RandomForest>,
    pub stats: ReferenceStats,
    pub notifier: Notifier,
    config: ServiceConfig,
    /// Interactive approvals stashed per candidate Merkle root.
    pending_approvals: HashMap<Digest32, Vec<MinerApproval>>,
    /// Latest preprocessed sample per patient; rechecks read this.
    last_vitals: HashMap<[u8; 32], VitalsSample>,
}

impl System {
    pub fn new(config: ServiceConfig) -> Result<System, GatewayError> {
        let registry = match &config.identity_store {
            Some(path) if path.exists() => Registry::load(path, config.registry_seed)
                .map_err(|e| GatewayError::Internal(e.to_string()))?,
            _ => Registry::new(config.registry_seed),
        };
        let chain = match &config.chain_store {
            Some(path) if path.exists() => {
                let blocks = crate::ledger::store::read_store(path)
                    .map_err(|e| GatewayError::Internal(e.to_string()))?;
                Chain::from_blocks(blocks)
            }
            _ => Chain::new(),
        };
        let model = match &config.model_path {
            Some(path) => Some(
                crate::detector::load_model(path)
                    .map_err(|e| GatewayError::Internal(e.to_string()))?,
            ),
            None => None,
        };
        let notifier = Notifier::new(config.notification_log.clone(), config.webhook_url.clone());
        let mut system = System {
            registry,
            chain,
            controllers: HashMap::new(),
            model,
            stats: ReferenceStats::default_reference(),
            notifier,
            config,
            pending_approvals: HashMap::new(),
            last_vitals: HashMap::new(),
        };
        system.registry.block_threshold = system.config.violation_block_threshold;
        system.rebuild_controllers();
        Ok(system)
    }

    /// Fresh in-memory system for simulations and tests.
    pub fn in_memory(registry_seed: u64) -> System {
        let config = ServiceConfig {
            registry_seed,
            ..Default::default()
        };
        System::new(config).expect("in-memory system has no IO to fail")
    }

    pub fn with_model(mut self, model: RandomForest) -> System {
        self.model = Some(model);
        self
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    /// Controllers for patients reloaded from the identity store.
    fn rebuild_controllers(&mut self) {
        let patients: Vec<([u8; 32], AgeClass)> = self
            .registry
            .iter()
            .filter(|i| i.role == Role::Patient)
            .map(|i| (i.user_id, i.profile.age_class.unwrap_or(AgeClass::Adult)))
            .collect();
        for (patient_id, age_class) in patients {
            self.controllers
                .entry(patient_id)
                .or_insert_with(|| default_controller(patient_id, age_class, None));
        }
    }

    fn persist(&self) -> Result<(), GatewayError> {
        if let Some(path) = &self.config.identity_store {
            self.registry
                .save(path)
                .map_err(|e| GatewayError::Internal(e.to_string()))?;
        }
        if let Some(path) = &self.config.chain_store {
            crate::ledger::store::write_store(path, self.chain.blocks())
                .map_err(|e| GatewayError::Internal(e.to_string()))?;
        }
        Ok(())
    }

    // ---- registration -------------------------------------------------

    pub fn register(&mut self, req: RegistrationRequest) -> Result<Credentials, GatewayError> {
        let role = req
            .role
            .ok_or_else(|| GatewayError::MissingField("role".into()))?;
        let field = |v: &Option<String>| v.clone().unwrap_or_default();
        let credentials = match role {
            Role::Patient => {
                let mut relative_ids = Vec::new();
                for hex_id in &req.relative_ids {
                    relative_ids.push(parse_id(hex_id)?);
                }
                let (user_id, public_key) = self.registry.register_patient(PatientRegistration {
                    name: field(&req.name),
                    date_of_birth: field(&req.date_of_birth),
                    email: field(&req.email),
                    phone: field(&req.phone),
                    address: field(&req.address),
                    age_class: req.age_class,
                    relative_ids,
                })?;
                let age_class = req.age_class.unwrap_or(AgeClass::Adult);
                self.controllers.insert(
                    user_id,
                    default_controller(user_id, age_class, req.reservoir_ml),
                );
                Credentials {
                    user_id,
                    public_key,
                }
            }
            Role::Doctor => {
                let mut patients = Vec::new();
                for credential in &req.patients {
                    patients.push((parse_id(&credential.id)?, parse_id(&credential.key)?));
                }
                let (user_id, public_key) = self.registry.register_doctor(DoctorRegistration {
                    name: field(&req.name),
                    date_of_birth: field(&req.date_of_birth),
                    email: field(&req.email),
                    phone: field(&req.phone),
                    address: field(&req.address),
                    qualification: field(&req.qualification),
                    job_details: field(&req.job_details),
                    patients,
                })?;
                Credentials {
                    user_id,
                    public_key,
                }
            }
        };
        self.persist()?;
        Ok(credentials)
    }

    // ---- auth plumbing -------------------------------------------------

    fn authenticate(&mut self, actor: &Credentials) -> Result<(), GatewayError> {
        let result = self
            .registry
            .authenticate(&actor.user_id, &actor.public_key)
            .map_err(GatewayError::Unauthenticated);
        if result.is_err() {
            let _ = self.persist();
        }
        result
    }

    fn authorize(
        &mut self,
        actor: &Credentials,
        action: Action,
        target: &[u8; 32],
    ) -> Result<(), GatewayError> {
        let effect = self.registry.authorize(&actor.user_id, action, target);
        if effect == Effect::Deny {
            let _ = self.persist();
            return Err(GatewayError::Forbidden);
        }
        Ok(())
    }

    // ---- approvals ------------------------------------------------------

    /// All active miners of `patient` sign `root` with their registered
    /// keys (the simulation holds those identities).
    fn auto_approvals(&self, patient: &[u8; 32], root: &Digest32) -> Vec<MinerApproval> {
        self.registry
            .miners(patient)
            .into_iter()
            .filter_map(|miner_id| {
                let key = self.registry.get(&miner_id)?.public_key;
                Some(MinerApproval {
                    miner_id,
                    signature: Registry::sign_approval(&key, root),
                })
            })
            .collect()
    }

    /// Stashes an interactive approval for a candidate root; returns the
    /// signature produced with the approver's registered key.
    pub fn submit_approval(
        &mut self,
        actor: &Credentials,
        patient_hex: &str,
        merkle_root_hex: &str,
    ) -> Result<Digest32, GatewayError> {
        self.authenticate(actor)?;
        let patient = parse_id(patient_hex)?;
        self.authorize(actor, Action::ApproveBlock, &patient)?;
        let root = parse_id(merkle_root_hex)?;
        let key = self
            .registry
            .get(&actor.user_id)
            .ok_or(GatewayError::NotFound("user"))?
            .public_key;
        let signature = Registry::sign_approval(&key, &root);
        self.pending_approvals.entry(root).or_default().push(MinerApproval {
            miner_id: actor.user_id,
            signature,
        });
        Ok(signature)
    }

    fn approvals_for(&mut self, patient: &[u8; 32], root: &Digest32, system_block: bool) -> Vec<MinerApproval> {
        // Detection/dose blocks are system-generated and always
        // auto-approved; data blocks honor the configured mode.
        if self.config.auto_approve || system_block {
            self.auto_approvals(patient, root)
        } else {
            self.pending_approvals.remove(root).unwrap_or_default()
        }
    }

    fn append_block(
        &mut self,
        txs: Vec<TransactionRecord>,
        patient: [u8; 32],
        now: u32,
        system_block: bool,
    ) -> Result<u64, GatewayError> {
        let leaves: Vec<Digest32> = txs.iter().map(hash_transaction).collect();
        let root = merkle_root(&leaves).map_err(|e| GatewayError::Internal(e.to_string()))?;
        let approvals = self.approvals_for(&patient, &root, system_block);
        for tx in &txs {
            self.chain.pool_mut().push(tx.clone());
        }
        let policy = RegistryApprovals {
            registry: &self.registry,
            threshold: self.config.approval_threshold,
        };
        let index = self
            .chain
            .append_block(txs, approvals, patient, now, &policy)
            .map_err(|e| match e {
                crate::ledger::LedgerError::InsufficientApprovals { .. } => {
                    GatewayError::InsufficientApprovals
                }
                other => GatewayError::Internal(other.to_string()),
            })?
            .header
            .index;
        Ok(index)
    }

    // ---- ingest ---------------------------------------------------------

    pub fn ingest(
        &mut self,
        actor: &Credentials,
        batch: &IngestBatch,
        now: u32,
    ) -> Result<IngestSummary, GatewayError> {
        self.authenticate(actor)?;
        let patient = parse_id(&batch.patient_id)?;
        self.authorize(actor, Action::IngestVitals, &patient)?;
        let identity = self
            .registry
            .get(&patient)
            .ok_or(GatewayError::NotFound("patient"))?;
        if identity.role != Role::Patient {
            return Err(GatewayError::BadRequest("target is not a patient".into()));
        }
        if self.model.is_none() {
            return Err(GatewayError::NoModel);
        }

        let readings: Vec<RawReading> = batch
            .readings
            .iter()
            .map(|r| RawReading {
                patient_id: patient,
                source: r.source,
                feature: r.feature,
                value: r.value.clone(),
                t: r.t,
            })
            .collect();
        let samples = fog::preprocess_batch(&readings, &self.stats)
            .map_err(|e| GatewayError::BadRequest(e.to_string()))?;
        if samples.is_empty() {
            return Err(GatewayError::BadRequest("batch holds no readings".into()));
        }

        // Block A: the vitals transactions.
        let vitals_txs: Vec<TransactionRecord> = samples
            .iter()
            .map(|s| TransactionRecord {
                kind: TxKind::VitalsData,
                patient_id: patient,
                payload: s.payload_bytes(),
                created_at: s.vitals.timestamp,
            })
            .collect();
        let block_index = self.append_block(vitals_txs, patient, now, false)?;
        self.check_stored_samples(block_index, &samples)?;

        // Detection on the in-flight cleaned samples.
        let model = self.model.as_ref().expect("checked above");
        let model_id = model.model_id();
        let mut detections = Vec::with_capacity(samples.len());
        let mut any_positive = false;
        for sample in &samples {
            let probability = model
                .predict_proba(&sample.vitals.features())
                .map_err(|e| GatewayError::Internal(e.to_string()))?;
            let label = (probability >= 0.5) as u8;
            any_positive |= label == 1;
            detections.push(DetectionResult {
                probability,
                label,
                timestamp: sample.vitals.timestamp,
                model_id,
            });
        }
        let mut block_b_txs: Vec<TransactionRecord> = detections
            .iter()
            .map(|d| TransactionRecord {
                kind: TxKind::DetectionResult,
                patient_id: patient,
                payload: d.payload_bytes().to_vec(),
                created_at: d.timestamp,
            })
            .collect();

        let latest = samples.last().expect("non-empty").vitals.clone();
        self.last_vitals.insert(patient, latest.clone());

        // Dosing rides in the detection block.
        let mut dose_summary = None;
        let mut recheck_due = None;
        let mut notifications = Vec::new();
        if any_positive {
            let controller = self
                .controllers
                .get_mut(&patient)
                .ok_or(GatewayError::NotFound("pump"))?;
            let outcome = controller
                .on_detection(now)
                .map_err(|e| GatewayError::Internal(e.to_string()))?;
            let (dose, alerts, due) = split_outcome(outcome);
            if let Some(event) = dose {
                block_b_txs.push(TransactionRecord {
                    kind: TxKind::DoseEvent,
                    patient_id: patient,
                    payload: event.payload_bytes().to_vec(),
                    created_at: event.at,
                });
                dose_summary = Some(DoseView::from_event(&event));
            }
            recheck_due = due;
            notifications = self.emit_alerts(&patient, &alerts, Some(&latest), dose_summary.as_ref(), now);
        }

        let detection_block_index = self.append_block(block_b_txs, patient, now, true)?;
        self.persist()?;

        Ok(IngestSummary {
            block_index,
            detection_block_index,
            detections: detections
                .iter()
                .map(|d| DetectionView {
                    probability: d.probability,
                    label: d.label,
                    t: d.timestamp,
                })
                .collect(),
            dose_summary,
            notifications,
            recheck_due,
        })
    }

    /// The chain-stored payloads must reproduce the in-flight samples.
    fn check_stored_samples(
        &self,
        block_index: u64,
        samples: &[PreprocessedSample],
    ) -> Result<(), GatewayError> {
        let block = self
            .chain
            .block(block_index)
            .ok_or(GatewayError::Internal("vitals block vanished".into()))?;
        for (tx, sample) in block.transactions.iter().zip(samples) {
            let stored = VitalsSample::from_canonical_bytes(&tx.payload)
                .ok_or(GatewayError::Internal("stored payload unreadable".into()))?;
            if stored != sample.vitals {
                return Err(GatewayError::Internal(
                    "stored vitals diverge from the in-flight sample".into(),
                ));
            }
        }
        Ok(())
    }

    // ---- rechecks ---------------------------------------------------------

    /// Runs the scheduled recheck for one patient against their latest
    /// preprocessed glucose. Doses append their own block.
    pub fn recheck_patient(&mut self, patient: [u8; 32], now: u32) -> Result<RecheckReport, GatewayError> {
        let glucose = self
            .last_vitals
            .get(&patient)
            .map(|v| v.glucose)
            .ok_or(GatewayError::NotFound("vitals"))?;
        let controller = self
            .controllers
            .get_mut(&patient)
            .ok_or(GatewayError::NotFound("pump"))?;
        let outcome = controller
            .on_recheck(glucose, now)
            .map_err(|e| GatewayError::Internal(e.to_string()))?;

        let resolved = outcome == DosingOutcome::Resolved;
        let escalated = matches!(outcome, DosingOutcome::Escalated { .. });
        let (dose, alerts, recheck_due) = split_outcome(outcome);
        let latest = self.last_vitals.get(&patient).cloned();

        let mut dose_block_index = None;
        let mut dose_summary = None;
        if let Some(event) = dose {
            let tx = TransactionRecord {
                kind: TxKind::DoseEvent,
                patient_id: patient,
                payload: event.payload_bytes().to_vec(),
                created_at: event.at,
            };
            dose_block_index = Some(self.append_block(vec![tx], patient, now, true)?);
            dose_summary = Some(DoseView::from_event(&event));
        }
        let notifications =
            self.emit_alerts(&patient, &alerts, latest.as_ref(), dose_summary.as_ref(), now);
        self.persist()?;
        Ok(RecheckReport {
            patient_id: hex::encode(patient),
            glucose,
            resolved,
            dose_summary,
            dose_block_index,
            notifications,
            recheck_due,
            escalated,
        })
    }

    /// Controllers whose recheck is due at or before `now`, in patient
    /// id order (the live server's lazy scheduler).
    pub fn due_rechecks(&self, now: u32) -> Vec<[u8; 32]> {
        let mut due: Vec<[u8; 32]> = self
            .controllers
            .iter()
            .filter(|(_, c)| matches!(c.phase, DosingPhase::AwaitingRecheck { due } if due <= now))
            .map(|(id, _)| *id)
            .collect();
        due.sort();
        due
    }

    // ---- notifications ------------------------------------------------------

    fn emit_alerts(
        &mut self,
        patient: &[u8; 32],
        alerts: &[DosingAlert],
        vitals: Option<&VitalsSample>,
        dose: Option<&DoseView>,
        now: u32,
    ) -> Vec<NotificationEvent> {
        let recipients = self.notification_recipients(patient);
        let reservoir_ml = self
            .controllers
            .get(patient)
            .map(|c| c.pump.reservoir_ml());
        let mut events = Vec::with_capacity(alerts.len());
        for alert in alerts {
            let kind = match alert {
                DosingAlert::Hypo => NotificationKind::HypoAlert,
                DosingAlert::SecondDose => NotificationKind::SecondDoseAlert,
                DosingAlert::Refill => NotificationKind::RefillAlert,
                DosingAlert::ReservoirEmpty => NotificationKind::ReservoirEmpty,
                DosingAlert::Escalation => NotificationKind::Escalation,
            };
            let body = match kind {
                // Dose alerts always carry the full body.
                NotificationKind::HypoAlert | NotificationKind::SecondDoseAlert => {
                    NotificationBody {
                        vitals: vitals.cloned(),
                        pushed_ml: dose.map(|d| d.volume_ml),
                        remaining_ml: dose.map(|d| d.reservoir_ml_after),
                    }
                }
                _ => NotificationBody {
                    vitals: None,
                    pushed_ml: None,
                    remaining_ml: reservoir_ml,
                },
            };
            let event = NotificationEvent {
                recipients: recipients.clone(),
                kind,
                body,
                t: now,
            };
            self.notifier.notify(&event);
            events.push(event);
        }
        events
    }

    /// The patient plus every registered miner, with their roles.
    fn notification_recipients(&self, patient: &[u8; 32]) -> Vec<Recipient> {
        let mut ids = vec![*patient];
        for miner in self.registry.miners(patient) {
            if !ids.contains(&miner) {
                ids.push(miner);
            }
        }
        ids.into_iter()
            .filter_map(|id| {
                let identity = self.registry.get(&id)?;
                Some(Recipient {
                    user_id: hex::encode(id),
                    role: identity.role,
                })
            })
            .collect()
    }

    // ---- queries ---------------------------------------------------------

    pub fn history(
        &mut self,
        actor: &Credentials,
        patient_hex: &str,
        kind: Option<TxKind>,
        from: Option<u32>,
        to: Option<u32>,
        now: u32,
    ) -> Result<Vec<TransactionView>, GatewayError> {
        self.authenticate(actor)?;
        let patient = parse_id(patient_hex)?;
        self.authorize(actor, Action::ReadHistory, &patient)?;
        let records = self.chain.query_transactions(&patient, kind, from, to);
        let views = records.iter().map(|tx| transaction_view(tx, true)).collect();
        if self.config.record_retrievals {
            let grant = TransactionRecord {
                kind: TxKind::RetrievalGrant,
                patient_id: patient,
                payload: actor.user_id.to_vec(),
                created_at: now,
            };
            self.append_block(vec![grant], patient, now, true)?;
            self.persist()?;
        }
        Ok(views)
    }

    pub fn pump_status(
        &mut self,
        actor: &Credentials,
        patient_hex: &str,
    ) -> Result<PumpView, GatewayError> {
        self.authenticate(actor)?;
        let patient = parse_id(patient_hex)?;
        if self.registry.get(&patient).is_none() {
            return Err(GatewayError::NotFound("patient"));
        }
        self.authorize(actor, Action::ReadPumpStatus, &patient)?;
        let controller = self
            .controllers
            .get(&patient)
            .ok_or(GatewayError::NotFound("pump"))?;
        Ok(PumpView {
            reservoir_ml: controller.pump.reservoir_ml(),
            doses_remaining: controller.pump.doses_remaining(&controller.profile),
            phase: controller.phase.name().to_string(),
        })
    }

    pub fn verify_chain(&mut self, actor: &Credentials) -> Result<Result<(), IntegrityError>, GatewayError> {
        self.authenticate(actor)?;
        Ok(self.chain.validate())
    }

    pub fn block_view(&mut self, actor: &Credentials, index: u64) -> Result<BlockView, GatewayError> {
        self.authenticate(actor)?;
        let can_read_payload = |tx: &TransactionRecord| {
            if actor.user_id == tx.patient_id {
                return true;
            }
            self.registry
                .get(&actor.user_id)
                .map(|i| i.role == Role::Doctor && i.links.contains(&tx.patient_id))
                .unwrap_or(false)
        };
        let block = self.chain.block(index).ok_or(GatewayError::NotFound("block"))?;
        Ok(BlockView {
            index: block.header.index,
            version: block.header.version,
            prev_hash: hex::encode(block.header.prev_hash),
            merkle_root: hex::encode(block.header.merkle_root),
            timestamp: block.header.timestamp,
            nonce: block.header.nonce,
            user_id: hex::encode(block.header.user_id),
            approval_digest: hex::encode(block.header.approval_digest),
            block_hash: hex::encode(block.block_hash),
            transactions: block
                .transactions
                .iter()
                .map(|tx| transaction_view(tx, can_read_payload(tx)))
                .collect(),
            approvals: block
                .approvals
                .iter()
                .map(|a| ApprovalView {
                    miner_id: hex::encode(a.miner_id),
                    signature: hex::encode(a.signature),
                })
                .collect(),
        })
    }

    pub fn last_vitals(&self, patient: &[u8; 32]) -> Option<&VitalsSample> {
        self.last_vitals.get(patient)
    }
}

fn default_controller(
    patient_id: [u8; 32],
    age_class: AgeClass,
    reservoir_ml: Option<f64>,
) -> DosingController {
    let reservoir_ul = (reservoir_ml.unwrap_or(1.2).max(0.0) * 1000.0).round() as u32;
    DosingController::new(
        PatientProfile {
            patient_id,
            age_class,
        },
        reservoir_ul,
    )
}

fn split_outcome(outcome: DosingOutcome) -> (Option<DoseEvent>, Vec<DosingAlert>, Option<u32>) {
    match outcome {
        DosingOutcome::Dosed {
            event,
            alerts,
            recheck_due,
        } => (Some(event), alerts, Some(recheck_due)),
        DosingOutcome::ReservoirEmpty { alerts } | DosingOutcome::Escalated { alerts } => {
            (None, alerts, None)
        }
        DosingOutcome::NoAction { .. } | DosingOutcome::Resolved => (None, Vec::new(), None),
    }
}

fn transaction_view(tx: &TransactionRecord, include_payload: bool) -> TransactionView {
    let decoded = if include_payload {
        decode_payload(tx)
    } else {
        None
    };
    TransactionView {
        kind: tx.kind.as_str(),
        patient_id: hex::encode(tx.patient_id),
        created_at: tx.created_at,
        payload_hex: include_payload.then(|| hex::encode(&tx.payload)),
        decoded,
    }
}

fn decode_payload(tx: &TransactionRecord) -> Option<serde_json::Value> {
    match tx.kind {
        TxKind::VitalsData => {
            let sample = VitalsSample::from_canonical_bytes(&tx.payload)?;
            let mut value = serde_json::to_value(&sample).ok()?;
            if tx.payload.len() == 60 {
                let f = |at: usize| {
                    f64::from_bits(u64::from_be_bytes(tx.payload[at..at + 8].try_into().unwrap()))
                };
                value["diastolic_bp"] = serde_json::json!(f(44));
                value["body_temp"] = serde_json::json!(f(52));
            }
            Some(value)
        }
        TxKind::DetectionResult => {
            let d = DetectionResult::from_payload_bytes(&tx.payload)?;
            Some(serde_json::json!({
                "probability": d.probability,
                "label": d.label,
                "t": d.timestamp,
                "model_id": hex::encode(d.model_id),
            }))
        }
        TxKind::DoseEvent => {
            let d = DoseEvent::from_payload_bytes(tx.patient_id, tx.created_at, &tx.payload)?;
            Some(serde_json::json!({
                "ordinal": d.ordinal as u8,
                "volume_ml": d.volume_ul as f64 / 1000.0,
                "reservoir_ml_after": d.reservoir_after_ul as f64 / 1000.0,
            }))
        }
        TxKind::RetrievalGrant => Some(serde_json::json!({
            "granted_to": hex::encode(&tx.payload),
        })),
    }
}
