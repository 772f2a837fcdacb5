//! Sessions, their cursor rules, and the append-only event log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use whodunit_core::bench::AccuracyCurve;
use whodunit_core::rng;

use crate::suite::{Suite, CHECKPOINTS};
use crate::StudyError;

pub const SESSION_TRIALS: usize = 50;
pub const HABITUATION_TRIALS: usize = 2;
pub const PAYLOAD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub trial: usize,
    pub checkpoint: usize,
    pub slider: u8,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub participant: String,
    pub seed: u64,
    /// Suite indices in presentation order.
    pub order: Vec<usize>,
    pub habituation: usize,
    /// Current trial position in `order`.
    pub trial: usize,
    /// Furthest display step revealed in the current trial.
    pub step: usize,
    pub responses: Vec<Response>,
}

/// One line of the durable log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        id: String,
        participant: String,
        seed: u64,
        order: Vec<usize>,
        habituation: usize,
    },
    Viewed {
        id: String,
        trial: usize,
        step: usize,
    },
    Responded {
        id: String,
        response: Response,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepPayload {
    pub schema_version: u32,
    pub session: String,
    pub trial: usize,
    pub step: usize,
    pub last_step: usize,
    pub habituation: bool,
    pub question: String,
    /// Checkpoints to answer before moving past this step.
    pub checkpoints: Vec<usize>,
    pub agent_a: whodunit_core::world::Grid,
    pub agent_b: whodunit_core::world::Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub trial: usize,
    pub checkpoint: usize,
    pub slider: u8,
    /// False when the same response had already been stored.
    pub stored: bool,
    pub trial_complete: bool,
    pub session_complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub trial: usize,
    pub trial_id: String,
    pub checkpoint: usize,
    pub slider: u8,
    /// Probability assigned to agent A, the culprit.
    pub p_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Export {
    pub schema_version: u32,
    pub session: String,
    pub participant: String,
    /// Set when some scored trial is unfinished; only finished trials count.
    pub partial: bool,
    pub trials_scored: usize,
    pub records: Vec<ExportRecord>,
    /// Mean P(correct agent) per checkpoint over finished scored trials.
    pub curve: Option<AccuracyCurve>,
}

impl Session {
    pub fn status(&self) -> Status {
        if self.trial >= self.order.len() {
            Status::Complete
        } else {
            Status::Active
        }
    }

    fn answered(&self, trial: usize) -> usize {
        self.responses.iter().filter(|r| r.trial == trial).count()
    }

    /// Checkpoints of the current trial still owed at the revealed step.
    fn pending(&self, suite: &Suite) -> Vec<usize> {
        let Some(&idx) = self.order.get(self.trial) else {
            return Vec::new();
        };
        let t = &suite.trials[idx];
        (self.answered(self.trial)..CHECKPOINTS)
            .take_while(|c| t.checkpoint_step(*c) <= self.step)
            .collect()
    }

    /// Check a step request; returns whether it reveals a new step.
    pub fn check_view(&self, suite: &Suite, trial: usize, step: usize) -> Result<bool, StudyError> {
        if trial >= self.order.len() {
            return Err(StudyError::NotFound(format!("trial {trial}")));
        }
        let t = &suite.trials[self.order[trial]];
        if step > t.last_step() {
            return Err(StudyError::NotFound(format!("step {step} of trial {trial}")));
        }
        if trial < self.trial {
            return Ok(false);
        }
        if trial > self.trial {
            return Err(StudyError::Forbidden(format!("trial {trial} is not open yet")));
        }
        if step <= self.step {
            return Ok(false);
        }
        if step > self.step + 1 {
            return Err(StudyError::Forbidden(format!("step {step} is ahead of the cursor at {}", self.step)));
        }
        if !self.pending(suite).is_empty() {
            return Err(StudyError::Forbidden(format!("checkpoint response pending at step {}", self.step)));
        }
        Ok(true)
    }

    pub fn payload(&self, suite: &Suite, trial: usize, step: usize) -> StepPayload {
        let t = &suite.trials[self.order[trial]];
        let (a, b) = t.frames_at(step);
        StepPayload {
            schema_version: PAYLOAD_SCHEMA_VERSION,
            session: self.id.clone(),
            trial,
            step,
            last_step: t.last_step(),
            habituation: trial < self.habituation,
            question: t.question.clone(),
            checkpoints: (0..CHECKPOINTS).filter(|c| t.checkpoint_step(*c) == step).collect(),
            agent_a: a.clone(),
            agent_b: b.clone(),
        }
    }

    /// Validate a response. `Ok(None)` means an identical retry.
    pub fn check_response(&self, suite: &Suite, trial: usize, checkpoint: usize, slider: i64) -> Result<Option<u8>, StudyError> {
        if !(0..=100).contains(&slider) {
            return Err(StudyError::Invalid(format!("slider {slider} outside 0..=100")));
        }
        let slider = slider as u8;
        if checkpoint >= CHECKPOINTS {
            return Err(StudyError::Invalid(format!("checkpoint {checkpoint} outside 0..{CHECKPOINTS}")));
        }
        if let Some(r) = self.responses.iter().find(|r| r.trial == trial && r.checkpoint == checkpoint) {
            return if r.slider == slider {
                Ok(None)
            } else {
                Err(StudyError::Conflict(format!("checkpoint {checkpoint} of trial {trial} already answered")))
            };
        }
        if trial != self.trial {
            return Err(StudyError::Conflict(format!("trial {trial} is not the current trial")));
        }
        match self.pending(suite).first() {
            Some(&c) if c == checkpoint => Ok(Some(slider)),
            Some(&c) => Err(StudyError::Conflict(format!("expected checkpoint {c}, got {checkpoint}"))),
            None => Err(StudyError::Conflict(format!("checkpoint {checkpoint} has not been reached"))),
        }
    }

    pub fn apply(&mut self, event: &Event) {
        match event {
            Event::Created { .. } => {}
            Event::Viewed { trial, step, .. } => {
                if *trial == self.trial {
                    self.step = self.step.max(*step);
                }
            }
            Event::Responded { response, .. } => {
                self.responses.push(response.clone());
                if self.answered(self.trial) == CHECKPOINTS {
                    self.trial += 1;
                    self.step = 0;
                }
            }
        }
    }

    pub fn export(&self, suite: &Suite) -> Export {
        let mut records = Vec::new();
        let mut scores = Vec::new();
        let mut partial = false;
        for pos in self.habituation..self.order.len() {
            let mut rs: Vec<&Response> = self.responses.iter().filter(|r| r.trial == pos).collect();
            if rs.len() < CHECKPOINTS {
                partial = true;
                continue;
            }
            rs.sort_by_key(|r| r.checkpoint);
            let id = &suite.trials[self.order[pos]].id;
            let mut row = Vec::with_capacity(CHECKPOINTS);
            for r in rs {
                let p_a = 1.0 - f64::from(r.slider) / 100.0;
                row.push(p_a);
                records.push(ExportRecord {
                    trial: pos,
                    trial_id: id.clone(),
                    checkpoint: r.checkpoint,
                    slider: r.slider,
                    p_a,
                });
            }
            scores.push(row);
        }
        Export {
            schema_version: PAYLOAD_SCHEMA_VERSION,
            session: self.id.clone(),
            participant: self.participant.clone(),
            partial,
            trials_scored: scores.len(),
            curve: AccuracyCurve::from_scores(&scores).ok(),
            records,
        }
    }
}

/// Deterministic trial order for a seed.
pub fn trial_order(suite_len: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..suite_len).collect();
    order.shuffle(&mut rng::rng(seed));
    order.truncate(SESSION_TRIALS.min(suite_len));
    order
}

/// All sessions plus the file they are journaled to.
#[derive(Debug)]
pub struct Store {
    path: Option<PathBuf>,
    file: Option<File>,
    pub sessions: BTreeMap<String, Session>,
}

impl Store {
    pub fn in_memory() -> Store {
        Store {
            path: None,
            file: None,
            sessions: BTreeMap::new(),
        }
    }

    /// Open (or create) a log and replay it.
    pub fn open(path: &Path) -> Result<Store, StudyError> {
        let io = |e: std::io::Error| StudyError::Store(format!("{}: {e}", path.display()));
        let mut store = Store {
            path: Some(path.to_path_buf()),
            file: None,
            sessions: BTreeMap::new(),
        };
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let ev: Event = serde_json::from_str(&line)
                    .map_err(|e| StudyError::Store(format!("{} line {}: {e}", path.display(), n + 1)))?;
                store.replay(&ev);
            }
        }
        store.file = Some(OpenOptions::new().create(true).append(true).open(path).map_err(io)?);
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn replay(&mut self, ev: &Event) {
        match ev {
            Event::Created {
                id,
                participant,
                seed,
                order,
                habituation,
            } => {
                self.sessions.insert(
                    id.clone(),
                    Session {
                        id: id.clone(),
                        participant: participant.clone(),
                        seed: *seed,
                        order: order.clone(),
                        habituation: *habituation,
                        trial: 0,
                        step: 0,
                        responses: Vec::new(),
                    },
                );
            }
            Event::Viewed { id, .. } | Event::Responded { id, .. } => {
                if let Some(s) = self.sessions.get_mut(id) {
                    s.apply(ev);
                }
            }
        }
    }

    /// Journal then apply.
    pub fn record(&mut self, ev: Event) -> Result<(), StudyError> {
        if let Some(f) = self.file.as_mut() {
            let mut line = serde_json::to_string(&ev).map_err(|e| StudyError::Store(e.to_string()))?;
            line.push('\n');
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| StudyError::Store(e.to_string()))?;
        }
        self.replay(&ev);
        Ok(())
    }

    pub fn next_id(&self) -> String {
        format!("s{:06}", self.sessions.len() + 1)
    }
}
