//! Trials as participants see them: paired per-step grids and checkpoints.

use std::path::Path;

use serde::Serialize;
use whodunit_core::behavior::scenario;
use whodunit_core::inference::InferenceTrial;
use whodunit_core::procgen::load_dataset;
use whodunit_core::world::{encode_array, Grid};

use crate::StudyError;

pub const CHECKPOINTS: usize = 11;

/// One trial prepared for display. Mission names and the query never leave
/// this struct except through the question text.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyTrial {
    pub id: String,
    pub question: String,
    pub frames_a: Vec<Grid>,
    pub frames_b: Vec<Grid>,
}

impl StudyTrial {
    pub fn from_inference(t: &InferenceTrial) -> Self {
        StudyTrial {
            id: t.id.clone(),
            question: t.question.clone(),
            frames_a: t.a.states.iter().map(encode_array).collect(),
            frames_b: t.b.states.iter().map(encode_array).collect(),
        }
    }

    /// Last display step. The longer trajectory sets the pace and the shorter
    /// one is stretched to match.
    pub fn last_step(&self) -> usize {
        (self.frames_a.len() - 1).max(self.frames_b.len() - 1)
    }

    /// Frame index of an agent at display step `k`.
    pub fn agent_step(frames: usize, last: usize, k: usize) -> usize {
        if last == 0 {
            return 0;
        }
        k * (frames - 1) / last
    }

    /// Display step of checkpoint `c` (0..=10).
    pub fn checkpoint_step(&self, c: usize) -> usize {
        c * self.last_step() / (CHECKPOINTS - 1)
    }

    /// Checkpoint index shown at display step `k`, if any. When two
    /// checkpoints share a step, the earliest is reported.
    pub fn checkpoint_at(&self, k: usize) -> Option<usize> {
        (0..CHECKPOINTS).find(|c| self.checkpoint_step(*c) == k)
    }

    pub fn frames_at(&self, k: usize) -> (&Grid, &Grid) {
        let last = self.last_step();
        (
            &self.frames_a[Self::agent_step(self.frames_a.len(), last, k)],
            &self.frames_b[Self::agent_step(self.frames_b.len(), last, k)],
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct Suite {
    pub trials: Vec<StudyTrial>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteSummary {
    pub trials: usize,
}

impl Suite {
    pub fn from_trials(trials: &[InferenceTrial]) -> Self {
        Suite {
            trials: trials.iter().map(StudyTrial::from_inference).collect(),
        }
    }

    /// Load a dataset directory, or a directory whose subdirectories are
    /// datasets, keeping instances that form valid trials.
    pub fn load(dir: &Path) -> Result<Suite, StudyError> {
        let mut roots = Vec::new();
        if dir.join("manifest.json").is_file() {
            roots.push(dir.to_path_buf());
        } else {
            let entries = std::fs::read_dir(dir).map_err(|e| StudyError::Suite(format!("{}: {e}", dir.display())))?;
            for e in entries.flatten() {
                if e.path().join("manifest.json").is_file() {
                    roots.push(e.path());
                }
            }
            roots.sort();
        }
        let mut trials = Vec::new();
        for root in roots {
            let (m, instances) = load_dataset(&root)?;
            let sc = scenario(&m.spec.scenario)
                .ok_or_else(|| StudyError::Suite(format!("unknown scenario {}", m.spec.scenario)))?;
            for inst in &instances {
                if let Ok(t) = InferenceTrial::from_instance(inst, &sc) {
                    trials.push(StudyTrial::from_inference(&t));
                }
            }
        }
        if trials.is_empty() {
            return Err(StudyError::Suite(format!("no trials under {}", dir.display())));
        }
        Ok(Suite { trials })
    }
}
