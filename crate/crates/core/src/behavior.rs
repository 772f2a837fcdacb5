//! Missions, subgoals and the five inference scenarios.
//!
//! Mission definitions ship as JSON data files (one per mission) and are
//! embedded at compile time. A subgoal names an action on a typed target in a
//! room and the flag value that action produces.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::codebook::{AssetType, Flag, FurnitureType, ObjectType, RoomType};
use crate::world::{ActionKind, GridPos, ObjectLocation, StatePredicate, WorldState};

pub const MISSION_LIBRARY_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum BehaviorError {
    #[error("unknown mission {0:?}")]
    UnknownMission(String),
    #[error("mission {mission}: {reason}")]
    InvalidMission { mission: String, reason: String },
    #[error("mission file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Subgoal verb as written in mission files. Toggle direction comes from the
/// subgoal's target state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgoalAction {
    Toggle,
    Open,
    Close,
    Pickup,
    Drop,
}

impl SubgoalAction {
    fn name(self) -> &'static str {
        match self {
            SubgoalAction::Toggle => "toggle",
            SubgoalAction::Open => "open",
            SubgoalAction::Close => "close",
            SubgoalAction::Pickup => "pickup",
            SubgoalAction::Drop => "drop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Subgoal {
    pub name: String,
    pub obj: Option<ObjectType>,
    pub fur: Option<FurnitureType>,
    pub room: RoomType,
    pub pos: Option<GridPos>,
    pub action: SubgoalAction,
    pub state: (Flag, bool),
    pub can_skip: bool,
    pub end_state: bool,
}

impl Subgoal {
    /// Primitive action that completes the subgoal.
    pub fn action_kind(&self) -> ActionKind {
        match self.action {
            SubgoalAction::Toggle if self.state.1 => ActionKind::ToggleOn,
            SubgoalAction::Toggle => ActionKind::ToggleOff,
            SubgoalAction::Open => ActionKind::Open,
            SubgoalAction::Close => ActionKind::Close,
            SubgoalAction::Pickup => ActionKind::Pickup,
            SubgoalAction::Drop => ActionKind::Drop,
        }
    }

    /// `action-qualifier-obj-fur-room`, `*` for absent parts.
    pub fn canonical_name(&self) -> String {
        let qual = match self.action {
            SubgoalAction::Toggle => {
                if self.state.1 {
                    "on"
                } else {
                    "off"
                }
            }
            _ => "*",
        };
        format!(
            "{}-{}-{}-{}-{}",
            self.action.name(),
            qual,
            self.obj.map_or("*", |o| o.name()),
            self.fur.map_or("*", |f| f.name()),
            self.room
        )
    }

    /// Entity type the action is applied to.
    pub fn target_type(&self) -> AssetType {
        match (self.action, self.obj, self.fur) {
            (SubgoalAction::Pickup | SubgoalAction::Drop, Some(o), _) => AssetType::Object(o),
            (_, _, Some(f)) => AssetType::Furniture(f),
            (_, Some(o), None) => AssetType::Object(o),
            (_, None, None) => unreachable!("validated subgoal has a target"),
        }
    }

    /// Whether the subgoal's target state currently holds. Any matching
    /// entity counts.
    pub fn satisfied(&self, state: &WorldState) -> bool {
        let room_kind = |r| state.layout().room(r).map(|room| room.kind);
        match self.action {
            SubgoalAction::Pickup => {
                let obj = self.obj.expect("validated");
                state
                    .objects()
                    .iter()
                    .any(|o| o.kind == obj && matches!(o.location, ObjectLocation::CarriedBy(_)))
            }
            SubgoalAction::Drop => {
                let obj = self.obj.expect("validated");
                state.objects().iter().any(|o| {
                    let ObjectLocation::In(f) = o.location else {
                        return false;
                    };
                    if o.kind != obj {
                        return false;
                    }
                    if let Some(p) = self.pos {
                        return o.pos == p;
                    }
                    let slot = &state.layout().furniture()[usize::from(f.0)];
                    Some(slot.kind) == self.fur && room_kind(slot.room) == Some(self.room)
                })
            }
            SubgoalAction::Toggle | SubgoalAction::Open | SubgoalAction::Close => {
                let (flag, value) = self.state;
                match self.target_type() {
                    AssetType::Furniture(kind) => state.furniture().any(|f| {
                        f.kind() == kind
                            && room_kind(f.slot.room) == Some(self.room)
                            && (self.pos.is_none() || self.pos.is_some_and(|p| f.slot.rect.contains(p)))
                            && f.flags.get(flag) == value
                    }),
                    AssetType::Object(kind) => state.objects().iter().any(|o| {
                        o.kind == kind
                            && state.object_room(o).and_then(room_kind) == Some(self.room)
                            && o.flags.get(flag) == value
                    }),
                }
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        let (flag, value) = self.state;
        let expected_flag = match self.action {
            SubgoalAction::Toggle => Flag::ToggledOn,
            SubgoalAction::Open | SubgoalAction::Close => Flag::Open,
            SubgoalAction::Pickup | SubgoalAction::Drop => Flag::Carried,
        };
        if flag != expected_flag {
            return Err(format!("{}: state flag {flag} does not match action", self.name));
        }
        let value_ok = match self.action {
            SubgoalAction::Open | SubgoalAction::Pickup => value,
            SubgoalAction::Close | SubgoalAction::Drop => !value,
            SubgoalAction::Toggle => true,
        };
        if !value_ok {
            return Err(format!("{}: state value contradicts action", self.name));
        }
        match self.action {
            SubgoalAction::Pickup | SubgoalAction::Drop if self.obj.is_none() || self.fur.is_none() => {
                return Err(format!("{}: needs both obj and fur", self.name));
            }
            _ if self.obj.is_none() && self.fur.is_none() => {
                return Err(format!("{}: no target", self.name));
            }
            _ => {}
        }
        if let AssetType::Furniture(f) = self.target_type() {
            if !f.flags_allowed().get(flag) && !matches!(self.action, SubgoalAction::Drop | SubgoalAction::Pickup) {
                return Err(format!("{}: {f} cannot be {flag}", self.name));
            }
        }
        if self.canonical_name() != self.name {
            return Err(format!("name {:?} should be {:?}", self.name, self.canonical_name()));
        }
        Ok(())
    }
}

impl fmt::Display for Subgoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mission {
    pub name: String,
    #[serde(default)]
    pub version: u32,
    pub subgoals: Vec<Subgoal>,
}

impl Mission {
    pub fn from_json(text: &str) -> Result<Mission, BehaviorError> {
        let m: Mission = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<(), BehaviorError> {
        let err = |reason: String| BehaviorError::InvalidMission {
            mission: self.name.clone(),
            reason,
        };
        if self.subgoals.is_empty() {
            return Err(err("no subgoals".into()));
        }
        for (i, g) in self.subgoals.iter().enumerate() {
            g.validate().map_err(err)?;
            if g.end_state != (i + 1 == self.subgoals.len()) {
                return Err(err(format!("end_state must mark only the last subgoal (at {})", g.name)));
            }
        }
        Ok(())
    }

    pub fn action_set(&self) -> BTreeSet<ActionKind> {
        self.subgoals.iter().map(Subgoal::action_kind).collect()
    }

    pub fn room_set(&self) -> BTreeSet<RoomType> {
        self.subgoals.iter().map(|g| g.room).collect()
    }

    pub fn subgoal_index(&self, name: &str) -> Option<usize> {
        self.subgoals.iter().position(|g| g.name == name)
    }
}

macro_rules! missions {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../data/missions/", $name, ".json")))),*]
    };
}

static MISSION_FILES: &[(&str, &str)] = missions![
    "change_outfit",
    "clean_living_room_table",
    "do_laundry",
    "feed_dog",
    "get_night_snack",
    "get_snack",
    "move_plant_at_night",
    "take_shower",
    "watch_movie_cozily",
    "watch_news_on_tv",
];

/// The ten shipped missions, sorted by name.
pub fn all_missions() -> &'static [Mission] {
    static LIB: OnceLock<Vec<Mission>> = OnceLock::new();
    LIB.get_or_init(|| {
        MISSION_FILES
            .iter()
            .map(|(name, text)| {
                let m = Mission::from_json(text).unwrap_or_else(|e| panic!("shipped mission {name} invalid: {e}"));
                assert_eq!(&m.name, name, "mission file name mismatch");
                m
            })
            .collect()
    })
}

pub fn mission(name: &str) -> Result<&'static Mission, BehaviorError> {
    all_missions()
        .iter()
        .find(|m| m.name == name)
        .ok_or_else(|| BehaviorError::UnknownMission(name.to_owned()))
}

fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Weighted Jaccard overlap of subgoal action kinds and subgoal rooms.
pub fn similarity(m1: &Mission, m2: &Mission) -> f64 {
    let actions = jaccard(&m1.action_set(), &m2.action_set());
    let rooms = jaccard(&m1.room_set(), &m2.room_set());
    (actions + 0.5 * rooms) / 1.5
}

/// "Which agent is more likely to have [verb] the [thing]?"
pub fn render_question(q: &StatePredicate) -> String {
    use crate::world::PredicateTest;
    let verb = match q.test {
        PredicateTest::Carried => "picked-up",
        PredicateTest::Flag {
            flag: Flag::ToggledOn,
            value: true,
        } => "toggled-on",
        PredicateTest::Flag {
            flag: Flag::ToggledOn,
            value: false,
        } => "toggled-off",
        PredicateTest::Flag {
            flag: Flag::Open,
            value: true,
        } => "opened",
        PredicateTest::Flag {
            flag: Flag::Open,
            value: false,
        } => "closed",
        PredicateTest::Flag {
            flag: Flag::Carried,
            value,
        } => {
            if value {
                "picked-up"
            } else {
                "put-down"
            }
        }
    };
    format!("Which agent is more likely to have {verb} the {}?", q.subject.name())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Short id, e.g. `laundry`.
    pub id: String,
    pub title: String,
    pub question: String,
    pub mission_a: String,
    pub mission_b: String,
    pub query: StatePredicate,
    pub avg_horizon_ref: f64,
    pub similarity_ref: f64,
}

impl Scenario {
    pub fn missions(&self) -> (&'static Mission, &'static Mission) {
        (
            mission(&self.mission_a).expect("builtin mission"),
            mission(&self.mission_b).expect("builtin mission"),
        )
    }

    pub fn similarity(&self) -> f64 {
        let (a, b) = self.missions();
        similarity(a, b)
    }

    /// The query must be produced by some subgoal of A and by none of B.
    pub fn check_invariant(&self) -> Result<(), String> {
        let (a, b) = self.missions();
        let produces = |m: &Mission| {
            m.subgoals.iter().any(|g| {
                g.target_type() == self.query.subject
                    && match self.query.test {
                        crate::world::PredicateTest::Carried => g.action == SubgoalAction::Pickup,
                        crate::world::PredicateTest::Flag { flag, value } => g.state == (flag, value),
                    }
            })
        };
        if !produces(a) {
            return Err(format!("{}: query {} not produced by {}", self.id, self.query, a.name));
        }
        if produces(b) {
            return Err(format!("{}: query {} also produced by {}", self.id, self.query, b.name));
        }
        Ok(())
    }
}

pub fn builtin_scenarios() -> Vec<Scenario> {
    let row = |id: &str, title: &str, a: &str, b: &str, query: StatePredicate, horizon: f64, sim: f64| Scenario {
        id: id.into(),
        title: title.into(),
        question: render_question(&query),
        mission_a: a.into(),
        mission_b: b.into(),
        query,
        avg_horizon_ref: horizon,
        similarity_ref: sim,
    };
    let obj = |n: &str| AssetType::Object(n.parse().expect("asset"));
    let fur = |n: &str| AssetType::Furniture(n.parse().expect("asset"));
    vec![
        row(
            "pillow",
            "Who picked up the pillow?",
            "watch_movie_cozily",
            "watch_news_on_tv",
            StatePredicate::carried(obj("pillow")),
            15.0,
            0.19,
        ),
        row(
            "shower",
            "Who turned on the shower?",
            "take_shower",
            "feed_dog",
            StatePredicate::flag(fur("shower"), Flag::ToggledOn, true),
            26.4,
            0.30,
        ),
        row(
            "snack",
            "Who picked up the snack?",
            "get_snack",
            "clean_living_room_table",
            StatePredicate::carried(obj("snack")),
            36.8,
            0.46,
        ),
        row(
            "plant",
            "Who picked up the plant?",
            "move_plant_at_night",
            "get_night_snack",
            StatePredicate::carried(obj("plant")),
            43.9,
            0.61,
        ),
        row(
            "laundry",
            "Who turned on the laundry?",
            "do_laundry",
            "change_outfit",
            StatePredicate::flag(fur("laundry"), Flag::ToggledOn, true),
            51.3,
            0.87,
        ),
    ]
}

/// Pairing used to study mixed preferences: two dissimilar missions in one
/// house. Not part of the five-scenario suite.
pub fn sweep_scenario() -> Scenario {
    let query = StatePredicate::flag(AssetType::Furniture("laundry".parse().expect("asset")), Flag::ToggledOn, true);
    Scenario {
        id: "sweep".into(),
        title: "Who turned on the laundry?".into(),
        question: render_question(&query),
        mission_a: "do_laundry".into(),
        mission_b: "feed_dog".into(),
        query,
        avg_horizon_ref: f64::NAN,
        similarity_ref: f64::NAN,
    }
}

/// Builtin scenario by id, including `sweep`.
pub fn scenario(id: &str) -> Option<Scenario> {
    if id == "sweep" {
        return Some(sweep_scenario());
    }
    builtin_scenarios().into_iter().find(|s| s.id == id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_loads_ten_missions() {
        assert_eq!(all_missions().len(), 10);
        for m in all_missions() {
            assert!(m.subgoals.last().unwrap().end_state);
        }
    }

    #[test]
    fn night_snack_matches_reference_listing() {
        let m = mission("get_night_snack").unwrap();
        let names: Vec<_> = m.subgoals.iter().map(|g| g.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "toggle-on-*-light-Kitchen",
                "open-*-*-electric_refrigerator-Kitchen",
                "pickup-*-sandwich-electric_refrigerator-Kitchen",
                "close-*-*-electric_refrigerator-Kitchen",
                "toggle-off-*-light-Kitchen",
                "drop-*-sandwich-table-Bedroom",
            ]
        );
    }

    #[test]
    fn self_similarity_is_one() {
        for m in all_missions() {
            assert!((similarity(m, m) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn questions_follow_template() {
        let s = builtin_scenarios();
        assert_eq!(s[0].question, "Which agent is more likely to have picked-up the pillow?");
        assert_eq!(s[4].question, "Which agent is more likely to have toggled-on the laundry?");
        assert_eq!(s[1].question, "Which agent is more likely to have toggled-on the shower?");
    }

    #[test]
    fn scenarios_satisfy_invariant() {
        for s in builtin_scenarios() {
            s.check_invariant().unwrap();
        }
    }

    #[test]
    fn bad_end_state_is_rejected() {
        let mut m = mission("feed_dog").unwrap().clone();
        m.subgoals[0].end_state = true;
        let text = serde_json::to_string(&m).unwrap();
        assert!(Mission::from_json(&text).is_err());
    }
}
