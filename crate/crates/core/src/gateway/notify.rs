//! Notification sink: JSON-lines log plus an optional webhook.
//!
//! Delivery is fire-and-forget. The log append happens inline; webhook
//! posts run on a dedicated thread with a 2-second timeout and no
//! retries, so an unreachable receiver never blocks the dosing path.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::fog::VitalsSample;
use crate::identity::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NotificationKind {
    HypoAlert,
    SecondDoseAlert,
    RefillAlert,
    ReservoirEmpty,
    Escalation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipient {
    pub user_id: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotificationBody {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub vitals: Option<VitalsSample>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pushed_ml: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub remaining_ml: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotificationEvent {
    pub recipients: Vec<Recipient>,
    pub kind: NotificationKind,
    pub body: NotificationBody,
    pub t: u32,
}

pub struct Notifier {
    log: Vec<NotificationEvent>,
    file: Option<PathBuf>,
    webhook: Option<mpsc::Sender<NotificationEvent>>,
}

impl Notifier {
    pub fn new(file: Option<PathBuf>, webhook_url: Option<String>) -> Notifier {
        let webhook = webhook_url.map(|url| {
            let (tx, rx) = mpsc::channel::<NotificationEvent>();
            let failure_log = file.clone();
            std::thread::spawn(move || deliver_webhooks(rx, url, failure_log));
            tx
        });
        Notifier {
            log: Vec::new(),
            file,
            webhook,
        }
    }

    pub fn notify(&mut self, event: &NotificationEvent) {
        self.log.push(event.clone());
        if let Some(path) = &self.file {
            if let Ok(line) = serde_json::to_string(event) {
                let _ = append_line(path, &line);
            }
        }
        if let Some(sender) = &self.webhook {
            let _ = sender.send(event.clone());
        }
    }

    pub fn log(&self) -> &[NotificationEvent] {
        &self.log
    }
}

fn append_line(path: &PathBuf, line: &str) -> std::io::Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(file, "{line}")
}

fn deliver_webhooks(
    rx: mpsc::Receiver<NotificationEvent>,
    url: String,
    failure_log: Option<PathBuf>,
) {
    let client = reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(2))
        .build();
    let client = match client {
        Ok(c) => c,
        Err(e) => {
            eprintln!("webhook client unavailable: {e}");
            return;
        }
    };
    while let Ok(event) = rx.recv() {
        let result = client.post(&url).json(&event).send();
        let failed = match result {
            Ok(response) if response.status().is_success() => None,
            Ok(response) => Some(format!("status {}", response.status())),
            Err(e) => Some(e.to_string()),
        };
        if let Some(reason) = failed {
            eprintln!("webhook delivery to {url} failed: {reason}");
            if let Some(path) = &failure_log {
                let note = serde_json::json!({
                    "webhook_delivery_failed": reason,
                    "t": event.t,
                });
                let _ = append_line(path, &note.to_string());
            }
        }
    }
}
