//! Primitive actions and the ground-truth transition function.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AgentId, EntityRef, FurnitureId, ObjectId, ObjectLocation, WorldError, WorldState};
use crate::codebook::Flag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    TurnLeft,
    TurnRight,
    Forward,
    Pickup,
    Drop,
    ToggleOn,
    ToggleOff,
    Open,
    Close,
    Idle,
}

impl ActionKind {
    pub const COUNT: usize = 10;

    pub const ALL: [ActionKind; Self::COUNT] = [
        ActionKind::TurnLeft,
        ActionKind::TurnRight,
        ActionKind::Forward,
        ActionKind::Pickup,
        ActionKind::Drop,
        ActionKind::ToggleOn,
        ActionKind::ToggleOff,
        ActionKind::Open,
        ActionKind::Close,
        ActionKind::Idle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::TurnLeft => "turn_left",
            ActionKind::TurnRight => "turn_right",
            ActionKind::Forward => "forward",
            ActionKind::Pickup => "pickup",
            ActionKind::Drop => "drop",
            ActionKind::ToggleOn => "toggle_on",
            ActionKind::ToggleOff => "toggle_off",
            ActionKind::Open => "open",
            ActionKind::Close => "close",
            ActionKind::Idle => "idle",
        }
    }

    pub fn is_navigation(self) -> bool {
        matches!(self, ActionKind::TurnLeft | ActionKind::TurnRight | ActionKind::Forward)
    }

    /// Kinds that must name a target entity.
    pub fn needs_target(self) -> bool {
        !self.is_navigation() && self != ActionKind::Idle
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionKind {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| WorldError::MalformedAction(format!("unknown action kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<EntityRef>,
}

impl Action {
    pub const fn nav(kind: ActionKind) -> Self {
        Action { kind, target: None }
    }

    pub const fn on(kind: ActionKind, target: EntityRef) -> Self {
        Action {
            kind,
            target: Some(target),
        }
    }

    pub const IDLE: Action = Action::nav(ActionKind::Idle);

    fn well_formed(&self) -> Result<(), WorldError> {
        match (self.kind.needs_target(), self.target) {
            (true, None) => Err(WorldError::MalformedAction(format!("{} needs a target", self.kind))),
            (false, Some(t)) => Err(WorldError::MalformedAction(format!("{} takes no target, got {t}", self.kind))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.target {
            Some(t) => write!(f, "{}({t})", self.kind),
            None => f.write_str(self.kind.name()),
        }
    }
}

/// Outcome marker of a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    Applied,
    /// The action was legal to issue but had no effect (blocked move, out of
    /// reach, wrong state). The state is unchanged.
    NoOp,
}

/// Successor state of `state` after `agent` performs `action`.
pub fn apply_action(state: &WorldState, agent: AgentId, action: Action) -> Result<(WorldState, Transition), WorldError> {
    let mut next = state.clone();
    let t = next.step(agent, action)?;
    Ok((next, t))
}

impl WorldState {
    /// In-place transition. On [`Transition::NoOp`] and on error the state is
    /// left untouched.
    pub fn step(&mut self, agent: AgentId, action: Action) -> Result<Transition, WorldError> {
        action.well_formed()?;
        let pose = *self.agent(agent).ok_or(WorldError::UnknownAgent(agent))?;
        if let Some(target) = action.target {
            self.check_entity(target)?;
        }
        let applied = match action.kind {
            ActionKind::TurnLeft => {
                self.agents_mut().get_mut(&agent).expect("agent checked").dir = pose.dir.left();
                true
            }
            ActionKind::TurnRight => {
                self.agents_mut().get_mut(&agent).expect("agent checked").dir = pose.dir.right();
                true
            }
            ActionKind::Forward => self.forward(agent),
            ActionKind::Idle => true,
            ActionKind::Pickup => match action.target {
                Some(EntityRef::Object(o)) => self.pickup(agent, o),
                _ => false,
            },
            ActionKind::Drop => match action.target {
                Some(EntityRef::Object(o)) => self.drop_object(agent, o),
                _ => false,
            },
            ActionKind::ToggleOn => self.set_flag(agent, action.target.expect("checked"), Flag::ToggledOn, true),
            ActionKind::ToggleOff => self.set_flag(agent, action.target.expect("checked"), Flag::ToggledOn, false),
            ActionKind::Open => self.set_flag(agent, action.target.expect("checked"), Flag::Open, true),
            ActionKind::Close => self.set_flag(agent, action.target.expect("checked"), Flag::Open, false),
        };
        Ok(if applied { Transition::Applied } else { Transition::NoOp })
    }

    /// Bind an action kind to whatever the agent is facing, the way a learned
    /// policy's sampled kind is executed during rollouts. Returns `None` when
    /// the kind needs a target and nothing suitable is in front.
    pub fn resolve(&self, agent: AgentId, kind: ActionKind) -> Option<Action> {
        if !kind.needs_target() {
            return Some(Action::nav(kind));
        }
        let pose = self.agent(agent)?;
        if kind == ActionKind::Drop {
            return pose.carrying.map(|o| Action::on(kind, EntityRef::Object(o)));
        }
        let front = pose.front()?;
        if kind == ActionKind::Pickup {
            return self
                .contained_object_at(front)
                .map(|o| Action::on(kind, EntityRef::Object(o.id)));
        }
        if let Some(f) = self.layout().furniture_at(front) {
            return Some(Action::on(kind, EntityRef::Furniture(f.id)));
        }
        self.contained_object_at(front)
            .map(|o| Action::on(kind, EntityRef::Object(o.id)))
    }

    /// Resolve and apply a bare action kind; unresolvable kinds are no-ops.
    pub fn step_kind(&mut self, agent: AgentId, kind: ActionKind) -> Result<Transition, WorldError> {
        match self.resolve(agent, kind) {
            Some(a) => self.step(agent, a),
            None => {
                if self.agent(agent).is_none() {
                    return Err(WorldError::UnknownAgent(agent));
                }
                Ok(Transition::NoOp)
            }
        }
    }

    fn check_entity(&self, e: EntityRef) -> Result<(), WorldError> {
        let known = match e {
            EntityRef::Furniture(FurnitureId(i)) => usize::from(i) < self.layout().furniture().len(),
            EntityRef::Object(o) => self.object(o).is_some(),
        };
        if known {
            Ok(())
        } else {
            Err(WorldError::UnknownEntity(e))
        }
    }

    fn forward(&mut self, agent: AgentId) -> bool {
        let pose = self.agents()[&agent];
        let Some(next) = pose.front().filter(|p| self.layout().walkable(*p)) else {
            return false;
        };
        if self.agents().iter().any(|(id, p)| *id != agent && p.pos == next) {
            return false;
        }
        self.agents_mut().get_mut(&agent).expect("agent exists").pos = next;
        if let Some(c) = pose.carrying {
            let i = self.object_index(c).expect("carried object exists");
            self.objects_mut()[i].pos = next;
        }
        true
    }

    fn pickup(&mut self, agent: AgentId, id: ObjectId) -> bool {
        let pose = self.agents()[&agent];
        if pose.carrying.is_some() {
            return false;
        }
        let i = self.object_index(id).expect("object checked");
        let obj = self.objects()[i];
        let ObjectLocation::In(container) = obj.location else {
            return false;
        };
        if pose.front() != Some(obj.pos) {
            return false;
        }
        let cont = self.furniture_by_id(container).expect("container exists");
        if cont.kind().spec().openable && !cont.flags.get(Flag::Open) {
            return false;
        }
        let o = &mut self.objects_mut()[i];
        o.location = ObjectLocation::CarriedBy(agent);
        o.pos = pose.pos;
        o.flags.set(Flag::Carried, true);
        self.agents_mut().get_mut(&agent).expect("agent exists").carrying = Some(id);
        true
    }

    fn drop_object(&mut self, agent: AgentId, id: ObjectId) -> bool {
        let pose = self.agents()[&agent];
        if pose.carrying != Some(id) {
            return false;
        }
        let Some(front) = pose.front() else {
            return false;
        };
        let Some(slot) = self.layout().furniture_at(front).copied() else {
            return false;
        };
        let spec = slot.kind.spec();
        if !spec.receptacle || self.contained_object_at(front).is_some() {
            return false;
        }
        if spec.openable && !self.furniture_flags()[usize::from(slot.id.0)].get(Flag::Open) {
            return false;
        }
        let i = self.object_index(id).expect("object checked");
        let o = &mut self.objects_mut()[i];
        o.location = ObjectLocation::In(slot.id);
        o.pos = front;
        o.flags.set(Flag::Carried, false);
        self.agents_mut().get_mut(&agent).expect("agent exists").carrying = None;
        true
    }

    fn set_flag(&mut self, agent: AgentId, target: EntityRef, flag: Flag, value: bool) -> bool {
        let Some(front) = self.agents()[&agent].front() else {
            return false;
        };
        match target {
            EntityRef::Furniture(fid) => {
                let i = usize::from(fid.0);
                let slot = self.layout().furniture()[i];
                if !slot.rect.contains(front) || !slot.kind.flags_allowed().get(flag) {
                    return false;
                }
                let flags = &mut self.furniture_flags_mut()[i];
                if flags.get(flag) == value {
                    return false;
                }
                flags.set(flag, value);
                true
            }
            EntityRef::Object(oid) => {
                let i = self.object_index(oid).expect("object checked");
                let obj = self.objects()[i];
                if obj.pos != front
                    || !matches!(obj.location, ObjectLocation::In(_))
                    || !obj.kind.flags_allowed().get(flag)
                    || flag == Flag::Carried
                    || obj.flags.get(flag) == value
                {
                    return false;
                }
                self.objects_mut()[i].flags.set(flag, value);
                true
            }
        }
    }
}
