//! Per-step observations: the visual grid, a symbolic audio token and an
//! optional intent utterance.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::behavior::{Subgoal, SubgoalAction};
use crate::world::{encode_array, Action, ActionKind, Grid, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioToken {
    Step,
    Door,
    Toggle,
    Pickup,
    Drop,
    Silence,
}

impl AudioToken {
    pub const ALL: [AudioToken; 6] = [
        AudioToken::Step,
        AudioToken::Door,
        AudioToken::Toggle,
        AudioToken::Pickup,
        AudioToken::Drop,
        AudioToken::Silence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AudioToken::Step => "step",
            AudioToken::Door => "door",
            AudioToken::Toggle => "toggle",
            AudioToken::Pickup => "pickup",
            AudioToken::Drop => "drop",
            AudioToken::Silence => "silence",
        }
    }
}

impl fmt::Display for AudioToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Many-to-one map from action kinds to the sound they make.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioMap {
    tokens: [AudioToken; ActionKind::COUNT],
}

impl Default for AudioMap {
    fn default() -> Self {
        let tokens = ActionKind::ALL.map(|k| match k {
            ActionKind::TurnLeft | ActionKind::TurnRight | ActionKind::Forward => AudioToken::Step,
            ActionKind::Open | ActionKind::Close => AudioToken::Door,
            ActionKind::ToggleOn | ActionKind::ToggleOff => AudioToken::Toggle,
            ActionKind::Pickup => AudioToken::Pickup,
            ActionKind::Drop => AudioToken::Drop,
            ActionKind::Idle => AudioToken::Silence,
        });
        AudioMap { tokens }
    }
}

impl AudioMap {
    pub fn token(&self, kind: ActionKind) -> AudioToken {
        self.tokens[kind.index()]
    }

    /// P(token | action): 1 when the action makes that sound, else 0.
    pub fn likelihood(&self, token: AudioToken, kind: ActionKind) -> f64 {
        if self.token(kind) == token {
            1.0
        } else {
            0.0
        }
    }
}

pub fn audio_of_action(a: &Action, map: &AudioMap) -> AudioToken {
    map.token(a.kind)
}

pub fn audio_likelihood(token: AudioToken, a: ActionKind, map: &AudioMap) -> f64 {
    map.likelihood(token, a)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
    /// Name of the subgoal being announced.
    pub subgoal: String,
}

/// "I am going to {verb} the {target} in the {room}."
pub fn language_of_subgoal(g: &Subgoal) -> Utterance {
    let fur = g.fur.map(|f| f.name());
    let obj = g.obj.map(|o| o.name());
    let body = match g.action {
        SubgoalAction::Toggle => {
            let dir = if g.state.1 { "on" } else { "off" };
            format!("toggle {dir} the {}", fur.or(obj).unwrap_or("thing"))
        }
        SubgoalAction::Open => format!("open the {}", fur.or(obj).unwrap_or("thing")),
        SubgoalAction::Close => format!("close the {}", fur.or(obj).unwrap_or("thing")),
        SubgoalAction::Pickup => format!("pick up the {}", obj.unwrap_or("thing")),
        SubgoalAction::Drop => format!("drop the {} on the {}", obj.unwrap_or("thing"), fur.unwrap_or("floor")),
    };
    Utterance {
        text: format!("I am going to {body} in the {}.", g.room),
        subgoal: g.name.clone(),
    }
}

/// Evidence available at one time step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub visual: Grid,
    pub audio: AudioToken,
    pub language: Option<Utterance>,
}

/// Bundle the evidence for `state`. `action` is the action taken from this
/// state (`None` at the terminal step, which is silent).
pub fn observe(state: &WorldState, action: Option<&Action>, new_subgoal: Option<&Subgoal>, map: &AudioMap) -> Observation {
    Observation {
        visual: encode_array(state),
        audio: action.map_or(AudioToken::Silence, |a| audio_of_action(a, map)),
        language: new_subgoal.map(language_of_subgoal),
    }
}
