//! Symbolic grid environment.
//!
//! A [`WorldState`] splits into a static [`Layout`] (walls, doors, rooms and
//! furniture footprints, shared behind an `Arc`) and the small dynamic part
//! that actions mutate: furniture flags, objects and agent poses. Cloning a
//! state therefore copies a few short vectors and bumps one refcount.

mod action;
mod builder;
mod encode;
mod predicate;
mod scene_graph;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::codebook::{FurnitureType, ObjectType, RoomType, StateFlags};

pub use action::{apply_action, Action, ActionKind, Transition};
pub use builder::WorldBuilder;
pub use encode::{decode_array, encode_array, DecodeError, Grid, CHANNELS, CH_AGENT, CH_DIR};
pub use predicate::{PredicateTest, StatePredicate};
pub use scene_graph::{to_scene_graph, Edge, Node, NodeKind, Relation, SceneGraph};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorldError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("unknown entity {0}")]
    UnknownEntity(EntityRef),
    #[error("malformed action: {0}")]
    MalformedAction(String),
    #[error("invalid world: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridPos {
    pub x: u16,
    pub y: u16,
}

impl GridPos {
    pub const fn new(x: u16, y: u16) -> Self {
        GridPos { x, y }
    }

    /// Neighbouring cell in `dir`, if it does not underflow.
    pub fn step(self, dir: Direction) -> Option<GridPos> {
        let (dx, dy) = dir.delta();
        let x = i32::from(self.x) + dx;
        let y = i32::from(self.y) + dy;
        (x >= 0 && y >= 0).then(|| GridPos::new(x as u16, y as u16))
    }

    pub fn manhattan(self, other: GridPos) -> u32 {
        u32::from(self.x.abs_diff(other.x)) + u32::from(self.y.abs_diff(other.y))
    }
}

impl fmt::Display for GridPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.x, self.y)
    }
}

/// Heading, encoded 0..=3 clockwise from north. Rows grow southwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    North = 0,
    East = 1,
    South = 2,
    West = 3,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::North, Direction::East, Direction::South, Direction::West];

    pub fn from_code(code: i16) -> Option<Self> {
        usize::try_from(code).ok().and_then(|i| Self::ALL.get(i).copied())
    }

    pub fn code(self) -> i16 {
        self as i16
    }

    pub fn right(self) -> Self {
        Self::ALL[(self as usize + 1) % 4]
    }

    pub fn left(self) -> Self {
        Self::ALL[(self as usize + 3) % 4]
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::North => (0, -1),
            Direction::East => (1, 0),
            Direction::South => (0, 1),
            Direction::West => (-1, 0),
        }
    }
}

impl Serialize for Direction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Direction::from_code(i16::from(v)).ok_or_else(|| serde::de::Error::custom("direction out of range"))
    }
}

/// Axis-aligned rectangle of cells, `[x, x+w) × [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u16,
    pub y: u16,
    pub w: u16,
    pub h: u16,
}

impl Rect {
    pub const fn new(x: u16, y: u16, w: u16, h: u16) -> Self {
        Rect { x, y, w, h }
    }

    pub fn contains(&self, p: GridPos) -> bool {
        p.x >= self.x && p.x < self.x + self.w && p.y >= self.y && p.y < self.y + self.h
    }

    pub fn cells(&self) -> impl Iterator<Item = GridPos> + '_ {
        (self.y..self.y + self.h).flat_map(move |y| (self.x..self.x + self.w).map(move |x| GridPos::new(x, y)))
    }

    pub fn top_left(&self) -> GridPos {
        GridPos::new(self.x, self.y)
    }

    pub fn area(&self) -> usize {
        usize::from(self.w) * usize::from(self.h)
    }
}

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u16);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(RoomId, "room_");
id_type!(FurnitureId, "furniture_");
id_type!(ObjectId, "object_");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u8);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent_{}", self.0)
    }
}

/// Target of a manipulation action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityRef {
    Furniture(FurnitureId),
    Object(ObjectId),
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityRef::Furniture(id) => write!(f, "furniture:{}", id.0),
            EntityRef::Object(id) => write!(f, "object:{}", id.0),
        }
    }
}

impl FromStr for EntityRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, num) = s.split_once(':').ok_or_else(|| format!("bad entity ref {s:?}"))?;
        let n: u16 = num.parse().map_err(|_| format!("bad entity ref {s:?}"))?;
        match kind {
            "furniture" => Ok(EntityRef::Furniture(FurnitureId(n))),
            "object" => Ok(EntityRef::Object(ObjectId(n))),
            _ => Err(format!("bad entity ref {s:?}")),
        }
    }
}

impl Serialize for EntityRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EntityRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// What occupies a grid cell in the static layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Wall,
    Door,
    Floor(RoomId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Room {
    pub id: RoomId,
    pub kind: RoomType,
    pub rect: Rect,
}

/// Static part of a furniture entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FurnitureSlot {
    pub id: FurnitureId,
    pub kind: FurnitureType,
    pub rect: Rect,
    pub room: RoomId,
}

const NO_FURNITURE: u16 = u16::MAX;

/// Walls, doors, rooms and furniture footprints. Never changes after
/// construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Layout {
    width: u16,
    height: u16,
    cells: Vec<Cell>,
    rooms: Vec<Room>,
    furniture: Vec<FurnitureSlot>,
    furniture_at: Vec<u16>,
}

impl Layout {
    /// Build a layout. Rooms and furniture are renumbered in raster order of
    /// their top-left cell, which makes ids recoverable from the array
    /// encoding. Returns the permutation applied to `furniture`
    /// (`perm[new] = old`).
    pub fn new(
        width: u16,
        height: u16,
        cells: Vec<Cell>,
        rooms: Vec<(RoomType, Rect)>,
        furniture: Vec<(FurnitureType, Rect)>,
    ) -> Result<(Layout, Vec<usize>), WorldError> {
        let n = usize::from(width) * usize::from(height);
        if cells.len() != n || width == 0 || height == 0 {
            return Err(WorldError::Invalid("cell vector does not match dimensions".into()));
        }
        let in_bounds = |r: &Rect| r.w > 0 && r.h > 0 && r.x + r.w <= width && r.y + r.h <= height;

        let mut room_order: Vec<usize> = (0..rooms.len()).collect();
        room_order.sort_by_key(|&i| (rooms[i].1.y, rooms[i].1.x));
        let mut remap = vec![0u16; rooms.len()];
        let mut sorted_rooms = Vec::with_capacity(rooms.len());
        for (new, &old) in room_order.iter().enumerate() {
            let (kind, rect) = rooms[old];
            if !in_bounds(&rect) {
                return Err(WorldError::Invalid(format!("room {kind} out of bounds")));
            }
            remap[old] = new as u16;
            sorted_rooms.push(Room {
                id: RoomId(new as u16),
                kind,
                rect,
            });
        }
        let cells: Vec<Cell> = cells
            .into_iter()
            .map(|c| match c {
                Cell::Floor(RoomId(r)) => remap
                    .get(usize::from(r))
                    .map(|&nr| Cell::Floor(RoomId(nr)))
                    .ok_or_else(|| WorldError::Invalid(format!("cell references missing room {r}"))),
                other => Ok(other),
            })
            .collect::<Result<_, _>>()?;
        for (i, c) in cells.iter().enumerate() {
            if let Cell::Floor(r) = c {
                let p = GridPos::new((i % usize::from(width)) as u16, (i / usize::from(width)) as u16);
                if !sorted_rooms[usize::from(r.0)].rect.contains(p) {
                    return Err(WorldError::Invalid(format!("floor cell {p} outside its room")));
                }
            }
        }
        for room in &sorted_rooms {
            for p in room.rect.cells() {
                if cells[usize::from(p.y) * usize::from(width) + usize::from(p.x)] != Cell::Floor(room.id) {
                    return Err(WorldError::Invalid(format!("room {} rect not all floor", room.kind)));
                }
            }
        }

        let mut perm: Vec<usize> = (0..furniture.len()).collect();
        perm.sort_by_key(|&i| (furniture[i].1.y, furniture[i].1.x));
        let mut furniture_at = vec![NO_FURNITURE; n];
        let mut slots = Vec::with_capacity(furniture.len());
        for (new, &old) in perm.iter().enumerate() {
            let (kind, rect) = furniture[old];
            if !in_bounds(&rect) {
                return Err(WorldError::Invalid(format!("{kind} out of bounds")));
            }
            let mut room = None;
            for p in rect.cells() {
                let idx = usize::from(p.y) * usize::from(width) + usize::from(p.x);
                let Cell::Floor(r) = cells[idx] else {
                    return Err(WorldError::Invalid(format!("{kind} placed off the floor at {p}")));
                };
                if room.is_some_and(|prev| prev != r) {
                    return Err(WorldError::Invalid(format!("{kind} spans two rooms")));
                }
                room = Some(r);
                if furniture_at[idx] != NO_FURNITURE {
                    return Err(WorldError::Invalid(format!("{kind} overlaps other furniture at {p}")));
                }
                furniture_at[idx] = new as u16;
            }
            slots.push(FurnitureSlot {
                id: FurnitureId(new as u16),
                kind,
                rect,
                room: room.expect("non-empty rect"),
            });
        }
        Ok((
            Layout {
                width,
                height,
                cells,
                rooms: sorted_rooms,
                furniture: slots,
                furniture_at,
            },
            perm,
        ))
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn rooms(&self) -> &[Room] {
        &self.rooms
    }

    pub fn furniture(&self) -> &[FurnitureSlot] {
        &self.furniture
    }

    pub fn in_bounds(&self, p: GridPos) -> bool {
        p.x < self.width && p.y < self.height
    }

    pub(crate) fn index(&self, p: GridPos) -> usize {
        usize::from(p.y) * usize::from(self.width) + usize::from(p.x)
    }

    pub fn cell(&self, p: GridPos) -> Option<Cell> {
        self.in_bounds(p).then(|| self.cells[self.index(p)])
    }

    pub fn room_at(&self, p: GridPos) -> Option<&Room> {
        match self.cell(p)? {
            Cell::Floor(r) => self.rooms.get(usize::from(r.0)),
            _ => None,
        }
    }

    pub fn furniture_at(&self, p: GridPos) -> Option<&FurnitureSlot> {
        if !self.in_bounds(p) {
            return None;
        }
        let f = self.furniture_at[self.index(p)];
        (f != NO_FURNITURE).then(|| &self.furniture[usize::from(f)])
    }

    /// Floor or door cell without furniture.
    pub fn walkable(&self, p: GridPos) -> bool {
        match self.cell(p) {
            Some(Cell::Floor(_)) => self.furniture_at[self.index(p)] == NO_FURNITURE,
            Some(Cell::Door) => true,
            _ => false,
        }
    }

    pub fn room(&self, id: RoomId) -> Option<&Room> {
        self.rooms.get(usize::from(id.0))
    }
}

/// Where an object currently is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectLocation {
    In(FurnitureId),
    CarriedBy(AgentId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Object {
    pub id: ObjectId,
    pub kind: ObjectType,
    pub pos: GridPos,
    pub flags: StateFlags,
    pub location: ObjectLocation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentPose {
    pub pos: GridPos,
    pub dir: Direction,
    pub carrying: Option<ObjectId>,
}

impl AgentPose {
    pub fn front(&self) -> Option<GridPos> {
        self.pos.step(self.dir)
    }
}

/// Read-only view of one furniture entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FurnitureView<'a> {
    pub slot: &'a FurnitureSlot,
    pub flags: StateFlags,
}

impl FurnitureView<'_> {
    pub fn id(&self) -> FurnitureId {
        self.slot.id
    }

    pub fn kind(&self) -> FurnitureType {
        self.slot.kind
    }
}

/// Full symbolic snapshot of an environment.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WorldState {
    layout: Arc<Layout>,
    furniture_flags: Vec<StateFlags>,
    objects: Vec<Object>,
    agents: BTreeMap<AgentId, AgentPose>,
}

impl WorldState {
    /// Assemble and validate a state. `objects` may be given in any order.
    pub fn new(
        layout: Arc<Layout>,
        furniture_flags: Vec<StateFlags>,
        mut objects: Vec<Object>,
        agents: BTreeMap<AgentId, AgentPose>,
    ) -> Result<Self, WorldError> {
        objects.sort_by_key(|o| o.id);
        let state = WorldState {
            layout,
            furniture_flags,
            objects,
            agents,
        };
        state.validate()?;
        Ok(state)
    }

    fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::Invalid(m));
        let layout = &self.layout;
        if self.furniture_flags.len() != layout.furniture.len() {
            return bad("furniture flag count mismatch".into());
        }
        for (slot, flags) in layout.furniture.iter().zip(&self.furniture_flags) {
            if !flags.is_subset_of(slot.kind.flags_allowed()) {
                return bad(format!("{} carries illegal flags", slot.kind));
            }
        }
        let mut occupied = std::collections::HashSet::new();
        for w in self.objects.windows(2) {
            if w[0].id == w[1].id {
                return bad(format!("duplicate object id {}", w[0].id));
            }
        }
        for o in &self.objects {
            if o.id.0 == 0 {
                return bad("object id 0 is reserved".into());
            }
            if !o.flags.is_subset_of(o.kind.flags_allowed()) {
                return bad(format!("{} carries illegal flags", o.kind));
            }
            match o.location {
                ObjectLocation::In(f) => {
                    let Some(slot) = layout.furniture.get(usize::from(f.0)) else {
                        return bad(format!("{} inside missing furniture {f}", o.kind));
                    };
                    if !slot.rect.contains(o.pos) {
                        return bad(format!("{} not inside its container footprint", o.kind));
                    }
                    if o.flags.get(crate::codebook::Flag::Carried) {
                        return bad(format!("{} contained but flagged carried", o.kind));
                    }
                    if !occupied.insert(o.pos) {
                        return bad(format!("two objects share cell {}", o.pos));
                    }
                }
                ObjectLocation::CarriedBy(a) => {
                    let Some(pose) = self.agents.get(&a) else {
                        return bad(format!("{} carried by missing agent", o.kind));
                    };
                    if pose.carrying != Some(o.id) || pose.pos != o.pos {
                        return bad(format!("{} carry bookkeeping inconsistent", o.kind));
                    }
                    if !o.flags.get(crate::codebook::Flag::Carried) {
                        return bad(format!("{} carried but not flagged", o.kind));
                    }
                }
            }
        }
        for (id, pose) in &self.agents {
            if !layout.walkable(pose.pos) {
                return bad(format!("{id} stands on a blocked cell {}", pose.pos));
            }
            if let Some(c) = pose.carrying {
                match self.object(c) {
                    Some(o) if o.location == ObjectLocation::CarriedBy(*id) => {}
                    _ => return bad(format!("{id} carrying inconsistent object {c}")),
                }
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn layout_arc(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn width(&self) -> u16 {
        self.layout.width
    }

    pub fn height(&self) -> u16 {
        self.layout.height
    }

    pub fn rooms(&self) -> &[Room] {
        &self.layout.rooms
    }

    pub fn furniture(&self) -> impl Iterator<Item = FurnitureView<'_>> + '_ {
        self.layout
            .furniture
            .iter()
            .zip(&self.furniture_flags)
            .map(|(slot, &flags)| FurnitureView { slot, flags })
    }

    pub fn furniture_by_id(&self, id: FurnitureId) -> Option<FurnitureView<'_>> {
        let i = usize::from(id.0);
        Some(FurnitureView {
            slot: self.layout.furniture.get(i)?,
            flags: self.furniture_flags[i],
        })
    }

    pub fn furniture_flags(&self) -> &[StateFlags] {
        &self.furniture_flags
    }

    pub fn objects(&self) -> &[Object] {
        &self.objects
    }

    pub fn object(&self, id: ObjectId) -> Option<&Object> {
        self.objects
            .binary_search_by_key(&id, |o| o.id)
            .ok()
            .map(|i| &self.objects[i])
    }

    pub(crate) fn object_index(&self, id: ObjectId) -> Option<usize> {
        self.objects.binary_search_by_key(&id, |o| o.id).ok()
    }

    /// Object resting in or carried at `p` (carried objects sit on the
    /// carrier's cell).
    pub fn object_at(&self, p: GridPos) -> Option<&Object> {
        self.objects.iter().find(|o| o.pos == p)
    }

    pub(crate) fn contained_object_at(&self, p: GridPos) -> Option<&Object> {
        self.objects
            .iter()
            .find(|o| o.pos == p && matches!(o.location, ObjectLocation::In(_)))
    }

    pub fn agents(&self) -> &BTreeMap<AgentId, AgentPose> {
        &self.agents
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentPose> {
        self.agents.get(&id)
    }

    /// Room an object is in: its container's room, or the carrier's room.
    pub fn object_room(&self, o: &Object) -> Option<RoomId> {
        match o.location {
            ObjectLocation::In(f) => self.layout.furniture.get(usize::from(f.0)).map(|s| s.room),
            ObjectLocation::CarriedBy(_) => self.layout.room_at(o.pos).map(|r| r.id),
        }
    }

    /// Same world with a different set of agents. Objects carried by agents
    /// being removed make this fail.
    pub fn with_agents(&self, agents: BTreeMap<AgentId, AgentPose>) -> Result<WorldState, WorldError> {
        let mut s = self.clone();
        s.agents = agents;
        s.validate()?;
        Ok(s)
    }

    pub(crate) fn furniture_flags_mut(&mut self) -> &mut [StateFlags] {
        &mut self.furniture_flags
    }

    pub(crate) fn objects_mut(&mut self) -> &mut [Object] {
        &mut self.objects
    }

    pub(crate) fn agents_mut(&mut self) -> &mut BTreeMap<AgentId, AgentPose> {
        &mut self.agents
    }
}

/// Per-cell channel values as seen in the array encoding. Implemented both by
/// [`WorldState`] and by an encoded [`Grid`] so featurisers can work on either.
pub trait CellSource {
    fn dims(&self) -> (u16, u16);
    /// Channel values at `p`; callers only pass in-bounds positions.
    fn channels(&self, p: GridPos) -> [i16; CHANNELS];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn turning_is_cyclic() {
        for d in Direction::ALL {
            assert_eq!(d.left().right(), d);
            assert_eq!(d.right().right().right().right(), d);
        }
        assert_eq!(Direction::North.right(), Direction::East);
        assert_eq!(Direction::North.left(), Direction::West);
    }

    #[test]
    fn entity_ref_round_trips() {
        for e in [EntityRef::Furniture(FurnitureId(3)), EntityRef::Object(ObjectId(12))] {
            assert_eq!(e.to_string().parse::<EntityRef>().unwrap(), e);
        }
        assert!("chair:1".parse::<EntityRef>().is_err());
    }
}
