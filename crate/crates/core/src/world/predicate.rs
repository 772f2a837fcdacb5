//! Query predicates over world states.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ObjectLocation, WorldState};
use crate::codebook::{AssetType, Flag, RoomType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PredicateTest {
    Flag { flag: Flag, value: bool },
    /// Held by some agent.
    Carried,
}

/// "Some entity of type `subject` (optionally in `room`) passes `test`".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StatePredicate {
    pub subject: AssetType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<RoomType>,
    pub test: PredicateTest,
}

impl StatePredicate {
    pub fn flag(subject: AssetType, flag: Flag, value: bool) -> Self {
        StatePredicate {
            subject,
            room: None,
            test: PredicateTest::Flag { flag, value },
        }
    }

    pub fn carried(subject: AssetType) -> Self {
        StatePredicate {
            subject,
            room: None,
            test: PredicateTest::Carried,
        }
    }

    pub fn in_room(mut self, room: RoomType) -> Self {
        self.room = Some(room);
        self
    }

    pub fn check(&self, state: &WorldState) -> bool {
        let room_ok = |r: Option<super::RoomId>| match self.room {
            None => true,
            Some(want) => r.and_then(|id| state.layout().room(id)).is_some_and(|room| room.kind == want),
        };
        match self.subject {
            AssetType::Furniture(kind) => state.furniture().any(|f| {
                f.kind() == kind
                    && room_ok(Some(f.slot.room))
                    && match self.test {
                        PredicateTest::Flag { flag, value } => f.flags.get(flag) == value,
                        PredicateTest::Carried => false,
                    }
            }),
            AssetType::Object(kind) => state.objects().iter().any(|o| {
                o.kind == kind
                    && room_ok(state.object_room(o))
                    && match self.test {
                        PredicateTest::Flag { flag, value } => o.flags.get(flag) == value,
                        PredicateTest::Carried => matches!(o.location, ObjectLocation::CarriedBy(_)),
                    }
            }),
        }
    }
}

impl fmt::Display for StatePredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.test {
            PredicateTest::Flag { flag, value } => write!(f, "{}({})={}", flag, self.subject.name(), value)?,
            PredicateTest::Carried => write!(f, "carried({})", self.subject.name())?,
        }
        if let Some(r) = self.room {
            write!(f, "@{r}")?;
        }
        Ok(())
    }
}
