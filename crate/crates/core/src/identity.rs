//! Registration, authentication, and policy-based authorization.
//!
//! The registry plays both the registration center (issuing 32-byte ids
//! and keys from a seedable generator) and the administration unit
//! (scrutinizing every interaction against a total policy list, counting
//! violations, and blocking repeat offenders). It also produces and
//! verifies miner approval signatures — keyed SHA-256 digests standing
//! in for real public-key cryptography.
//!
//! Registration and violation updates must be serialized by the owner;
//! lookups are read-only.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ledger::{ApprovalPolicy, Digest32};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdentityError {
    #[error("an identity with this email and role already exists")]
    DuplicateRegistration,
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("linked patient credentials do not verify")]
    UnknownLinkedPatient,
    #[error("unknown miner")]
    UnknownMiner,
    #[error("unknown relative id")]
    UnknownRelative,
}

/// Why an authentication attempt was denied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenialReason {
    UnknownId,
    KeyMismatch,
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Patient,
    Doctor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeClass {
    Adult,
    Child,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Blocked,
}

/// Actions the policy list rules on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    IngestVitals,
    ReadHistory,
    ReadPumpStatus,
    ApproveBlock,
    Register,
}

/// Relation between an actor and the patient a request targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    SelfTarget,
    LinkedPatient,
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Effect {
    Allow,
    Deny,
}

/// One row of the policy list.
#[derive(Debug, Clone, Copy)]
pub struct PolicyRule {
    pub role: Role,
    pub action: Action,
    pub relation: Relation,
    pub effect: Effect,
}

/// Total policy list: every (role, action, relation) triple resolves to
/// exactly one effect; triples without an explicit rule are denied.
#[derive(Debug, Clone)]
pub struct PolicyList {
    rules: Vec<PolicyRule>,
}

impl PolicyList {
    pub fn new(rules: Vec<PolicyRule>) -> PolicyList {
        PolicyList { rules }
    }

    /// Policy used throughout the system: patients act on themselves,
    /// doctors read and approve for linked patients, registration is
    /// open, and block approval is open at the policy layer because the
    /// ledger only counts registered miners toward its threshold.
    pub fn standard() -> PolicyList {
        use Action::*;
        use Effect::*;
        use Relation::*;
        use Role::*;
        let allow = |role, action, relation| PolicyRule {
            role,
            action,
            relation,
            effect: Allow,
        };
        PolicyList::new(vec![
            allow(Patient, IngestVitals, SelfTarget),
            allow(Patient, ReadHistory, SelfTarget),
            allow(Patient, ReadPumpStatus, SelfTarget),
            allow(Patient, ApproveBlock, SelfTarget),
            allow(Patient, ApproveBlock, Any),
            allow(Patient, Register, Any),
            allow(Doctor, ReadHistory, LinkedPatient),
            allow(Doctor, ReadPumpStatus, LinkedPatient),
            allow(Doctor, ApproveBlock, LinkedPatient),
            allow(Doctor, Register, Any),
        ])
    }

    /// First matching rule wins; no match is a deny.
    pub fn resolve(&self, role: Role, action: Action, relation: Relation) -> Effect {
        self.rules
            .iter()
            .find(|r| r.role == role && r.action == action && r.relation == relation)
            .map(|r| r.effect)
            .unwrap_or(Effect::Deny)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contact {
    pub email: String,
    pub phone: String,
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    pub date_of_birth: String,
    pub contact: Contact,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub qualification: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub job_details: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub age_class: Option<AgeClass>,
}

pub(crate) mod hex32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let raw = String::deserialize(d)?;
        let bytes = hex::decode(&raw).map_err(serde::de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("expected 32 bytes"))
    }
}

mod hex32vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[[u8; 32]], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(hex::encode))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<[u8; 32]>, D::Error> {
        let raw: Vec<String> = Vec::deserialize(d)?;
        raw.into_iter()
            .map(|s| {
                hex::decode(&s)
                    .map_err(serde::de::Error::custom)?
                    .try_into()
                    .map_err(|_| serde::de::Error::custom("expected 32 bytes"))
            })
            .collect()
    }
}

/// A registered user. `links` holds linked patient ids for doctors and
/// registered relative ids for patients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserIdentity {
    #[serde(with = "hex32")]
    pub user_id: [u8; 32],
    #[serde(with = "hex32")]
    pub public_key: [u8; 32],
    pub role: Role,
    pub profile: Profile,
    pub status: Status,
    pub violation_count: u32,
    #[serde(with = "hex32vec")]
    pub links: Vec<[u8; 32]>,
}

/// A patient registration request.
#[derive(Debug, Clone, Default)]
pub struct PatientRegistration {
    pub name: String,
    pub date_of_birth: String,
    pub email: String,
    pub phone: String,
    pub address: String,
    pub age_class: Option<AgeClass>,
    /// Already-registered identities acting as this patient's relatives.
    pub relative_ids: Vec<[u8; 32]>,
}

/// A doctor registration request; must present at least one linked
/// patient's id and key.
#[derive(Debug, Clone, Default)]
pub struct DoctorRegistration {
    pub name: String,
    pub date_of_birth: String,
    pub email: String,
    pub phone: String,
    pub address: String,
    pub qualification: String,
    pub job_details: String,
    pub patients: Vec<([u8; 32], [u8; 32])>,
}

/// Registration center + administration unit state.
pub struct Registry {
    identities: HashMap<[u8; 32], UserIdentity>,
    /// Insertion order, for deterministic persistence and iteration.
    order: Vec<[u8; 32]>,
    by_email: HashMap<(String, u8), [u8; 32]>,
    keys_in_use: HashSet<[u8; 32]>,
    policy: PolicyList,
    rng: ChaCha20Rng,
    /// Violations at which a user flips to Blocked (1 = block on first).
    pub block_threshold: u32,
}

fn keyed_digest(key: &[u8; 32], data: &[u8; 32]) -> Digest32 {
    let mut hasher = Sha256::new();
    hasher.update(key);
    hasher.update(data);
    hasher.finalize().into()
}

impl Registry {
    pub fn new(seed: u64) -> Registry {
        Registry {
            identities: HashMap::new(),
            order: Vec::new(),
            by_email: HashMap::new(),
            keys_in_use: HashSet::new(),
            policy: PolicyList::standard(),
            rng: ChaCha20Rng::seed_from_u64(seed),
            block_threshold: 3,
        }
    }

    pub fn with_policy(mut self, policy: PolicyList) -> Registry {
        self.policy = policy;
        self
    }

    pub fn get(&self, user_id: &[u8; 32]) -> Option<&UserIdentity> {
        self.identities.get(user_id)
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &UserIdentity> {
        self.order.iter().filter_map(|id| self.identities.get(id))
    }

    fn fresh_pair(&mut self) -> ([u8; 32], [u8; 32]) {
        loop {
            let mut id = [0u8; 32];
            let mut key = [0u8; 32];
            self.rng.fill(&mut id);
            self.rng.fill(&mut key);
            let taken =
                |v: &[u8; 32]| self.identities.contains_key(v) || self.keys_in_use.contains(v);
            if id != key && !taken(&id) && !taken(&key) {
                return (id, key);
            }
        }
    }

    fn insert(&mut self, identity: UserIdentity) {
        self.by_email.insert(
            (identity.profile.contact.email.clone(), identity.role as u8),
            identity.user_id,
        );
        self.keys_in_use.insert(identity.public_key);
        self.order.push(identity.user_id);
        self.identities.insert(identity.user_id, identity);
    }

    fn check_duplicate(&self, email: &str, role: Role) -> Result<(), IdentityError> {
        if self.by_email.contains_key(&(email.to_string(), role as u8)) {
            return Err(IdentityError::DuplicateRegistration);
        }
        Ok(())
    }

    pub fn register_patient(
        &mut self,
        req: PatientRegistration,
    ) -> Result<([u8; 32], [u8; 32]), IdentityError> {
        required(&req.name, "name")?;
        required(&req.date_of_birth, "date_of_birth")?;
        required(&req.email, "email")?;
        required(&req.phone, "phone")?;
        required(&req.address, "address")?;
        let age_class = req
            .age_class
            .ok_or(IdentityError::MissingField("age_class"))?;
        self.check_duplicate(&req.email, Role::Patient)?;
        for rel in &req.relative_ids {
            if !self.identities.contains_key(rel) {
                return Err(IdentityError::UnknownRelative);
            }
        }

        let (user_id, public_key) = self.fresh_pair();
        self.insert(UserIdentity {
            user_id,
            public_key,
            role: Role::Patient,
            profile: Profile {
                name: req.name,
                date_of_birth: req.date_of_birth,
                contact: Contact {
                    email: req.email,
                    phone: req.phone,
                    address: req.address,
                },
                qualification: None,
                job_details: None,
                age_class: Some(age_class),
            },
            status: Status::Active,
            violation_count: 0,
            links: req.relative_ids,
        });
        Ok((user_id, public_key))
    }

    pub fn register_doctor(
        &mut self,
        req: DoctorRegistration,
    ) -> Result<([u8; 32], [u8; 32]), IdentityError> {
        required(&req.name, "name")?;
        required(&req.date_of_birth, "date_of_birth")?;
        required(&req.email, "email")?;
        required(&req.phone, "phone")?;
        required(&req.address, "address")?;
        required(&req.qualification, "qualification")?;
        required(&req.job_details, "job_details")?;
        if req.patients.is_empty() {
            return Err(IdentityError::UnknownLinkedPatient);
        }
        // Each linked patient must be presented with a matching key.
        for (pid, pkey) in &req.patients {
            match self.identities.get(pid) {
                Some(p) if p.role == Role::Patient && p.public_key == *pkey => {}
                _ => return Err(IdentityError::UnknownLinkedPatient),
            }
        }
        self.check_duplicate(&req.email, Role::Doctor)?;

        let (user_id, public_key) = self.fresh_pair();
        self.insert(UserIdentity {
            user_id,
            public_key,
            role: Role::Doctor,
            profile: Profile {
                name: req.name,
                date_of_birth: req.date_of_birth,
                contact: Contact {
                    email: req.email,
                    phone: req.phone,
                    address: req.address,
                },
                qualification: Some(req.qualification),
                job_details: Some(req.job_details),
                age_class: None,
            },
            status: Status::Active,
            violation_count: 0,
            links: req.patients.iter().map(|(id, _)| *id).collect(),
        });
        Ok((user_id, public_key))
    }

    /// Exact id + key match of an Active identity. A key mismatch counts
    /// as a violation against the claimed identity.
    pub fn authenticate(
        &mut self,
        user_id: &[u8; 32],
        public_key: &[u8; 32],
    ) -> Result<(), DenialReason> {
        let identity = match self.identities.get(user_id) {
            Some(i) => i,
            None => return Err(DenialReason::UnknownId),
        };
        if identity.status == Status::Blocked {
            return Err(DenialReason::Blocked);
        }
        if identity.public_key != *public_key {
            self.record_violation(user_id);
            return Err(DenialReason::KeyMismatch);
        }
        Ok(())
    }

    fn record_violation(&mut self, user_id: &[u8; 32]) {
        let threshold = self.block_threshold;
        if let Some(identity) = self.identities.get_mut(user_id) {
            identity.violation_count += 1;
            if identity.violation_count >= threshold {
                identity.status = Status::Blocked;
            }
        }
    }

    /// Relation of `actor` to the patient a request targets.
    fn relation(&self, actor: &UserIdentity, target_patient_id: &[u8; 32]) -> Relation {
        if actor.user_id == *target_patient_id {
            Relation::SelfTarget
        } else if actor.role == Role::Doctor && actor.links.contains(target_patient_id) {
            Relation::LinkedPatient
        } else {
            Relation::Any
        }
    }

    /// Resolves the policy list for an authenticated actor. A deny is a
    /// recorded violation; reaching the block threshold flips the actor
    /// to Blocked.
    pub fn authorize(
        &mut self,
        actor_id: &[u8; 32],
        action: Action,
        target_patient_id: &[u8; 32],
    ) -> Effect {
        let (role, relation) = match self.identities.get(actor_id) {
            Some(actor) => (actor.role, self.relation(actor, target_patient_id)),
            None => return Effect::Deny,
        };
        let effect = self.policy.resolve(role, action, relation);
        if effect == Effect::Deny {
            self.record_violation(actor_id);
        }
        effect
    }

    /// Keyed approval signature over a candidate Merkle root.
    pub fn sign_approval(miner_key: &[u8; 32], merkle_root: &Digest32) -> Digest32 {
        keyed_digest(miner_key, merkle_root)
    }

    /// Recomputes the approval with the miner's registered key.
    pub fn verify_approval_sig(
        &self,
        miner_id: &[u8; 32],
        signature: &Digest32,
        merkle_root: &Digest32,
    ) -> Result<bool, IdentityError> {
        let miner = self
            .identities
            .get(miner_id)
            .filter(|m| m.status == Status::Active)
            .ok_or(IdentityError::UnknownMiner)?;
        Ok(keyed_digest(&miner.public_key, merkle_root) == *signature)
    }

    /// Miners of a patient: the patient, registered relatives, and
    /// linked doctors, deduplicated, Active only.
    pub fn miners(&self, patient_id: &[u8; 32]) -> Vec<[u8; 32]> {
        let patient = match self.identities.get(patient_id) {
            Some(p) if p.role == Role::Patient => p,
            _ => return Vec::new(),
        };
        let mut out = Vec::new();
        let mut push = |id: [u8; 32]| {
            let active = self
                .identities
                .get(&id)
                .is_some_and(|i| i.status == Status::Active);
            if active && !out.contains(&id) {
                out.push(id);
            }
        };
        push(*patient_id);
        for rel in &patient.links {
            push(*rel);
        }
        for identity in self.order.iter().filter_map(|id| self.identities.get(id)) {
            if identity.role == Role::Doctor && identity.links.contains(patient_id) {
                push(identity.user_id);
            }
        }
        out
    }

    /// Persists identities as one JSON object per line, insertion order.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut file = fs::File::create(path)?;
        for identity in self.iter() {
            let line = serde_json::to_string(identity).expect("identity serializes");
            writeln!(file, "{line}")?;
        }
        Ok(())
    }

    /// Reloads a JSON-lines identity store written by [`Registry::save`].
    pub fn load(path: &Path, seed: u64) -> std::io::Result<Registry> {
        let mut registry = Registry::new(seed);
        let data = fs::read_to_string(path)?;
        for line in data.lines().filter(|l| !l.trim().is_empty()) {
            let identity: UserIdentity = serde_json::from_str(line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            registry.insert(identity);
        }
        Ok(registry)
    }
}

fn required<'a>(v: &'a str, name: &'static str) -> Result<&'a str, IdentityError> {
    if v.trim().is_empty() {
        Err(IdentityError::MissingField(name))
    } else {
        Ok(v)
    }
}

/// How many approvals a block needs: strict majority of the patient's
/// registered miners, or a fixed count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApprovalThreshold {
    #[default]
    Majority,
    Fixed(usize),
}

/// Adapter giving the ledger its approval checks from a registry.
pub struct RegistryApprovals<'a> {
    pub registry: &'a Registry,
    pub threshold: ApprovalThreshold,
}

impl ApprovalPolicy for RegistryApprovals<'_> {
    fn verify_approval(&self, miner_id: &[u8; 32], signature: &Digest32, root: &Digest32) -> bool {
        self.registry
            .verify_approval_sig(miner_id, signature, root)
            .unwrap_or(false)
    }

    fn miners_of(&self, patient_id: &[u8; 32]) -> Vec<[u8; 32]> {
        self.registry.miners(patient_id)
    }

    fn required_approvals(&self, patient_id: &[u8; 32]) -> usize {
        match self.threshold {
            ApprovalThreshold::Majority => self.registry.miners(patient_id).len() / 2 + 1,
            ApprovalThreshold::Fixed(n) => n,
        }
    }
}
