//! Incremental construction of worlds for the generator and for tests.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{
    AgentId, AgentPose, Cell, Direction, GridPos, Layout, Object, ObjectId, ObjectLocation, Rect, RoomId, WorldError,
    WorldState,
};
use crate::codebook::{Flag, FurnitureType, ObjectType, RoomType, StateFlags};

/// Starts from an all-wall grid. Rooms carve floor, doors punch through walls.
#[derive(Debug, Clone)]
pub struct WorldBuilder {
    width: u16,
    height: u16,
    cells: Vec<Cell>,
    rooms: Vec<(RoomType, Rect)>,
    furniture: Vec<(FurnitureType, Rect, StateFlags)>,
    objects: Vec<(ObjectType, usize, Option<GridPos>, StateFlags)>,
    agents: BTreeMap<AgentId, (GridPos, Direction)>,
}

impl WorldBuilder {
    pub fn new(width: u16, height: u16) -> Self {
        WorldBuilder {
            width,
            height,
            cells: vec![Cell::Wall; usize::from(width) * usize::from(height)],
            rooms: Vec::new(),
            furniture: Vec::new(),
            objects: Vec::new(),
            agents: BTreeMap::new(),
        }
    }

    fn idx(&self, p: GridPos) -> usize {
        usize::from(p.y) * usize::from(self.width) + usize::from(p.x)
    }

    pub fn room(&mut self, kind: RoomType, rect: Rect) -> &mut Self {
        let id = RoomId(self.rooms.len() as u16);
        self.rooms.push((kind, rect));
        for p in rect.cells() {
            if p.x < self.width && p.y < self.height {
                let i = self.idx(p);
                self.cells[i] = Cell::Floor(id);
            }
        }
        self
    }

    pub fn door(&mut self, p: GridPos) -> &mut Self {
        if p.x < self.width && p.y < self.height {
            let i = self.idx(p);
            self.cells[i] = Cell::Door;
        }
        self
    }

    /// Adds furniture and returns its builder-local index.
    pub fn furniture(&mut self, kind: FurnitureType, rect: Rect, flags: StateFlags) -> usize {
        self.furniture.push((kind, rect, flags));
        self.furniture.len() - 1
    }

    pub fn furniture_kind(&self, index: usize) -> FurnitureType {
        self.furniture[index].0
    }

    /// Places an object inside furniture `container` (a builder index), at
    /// `pos` or the first free footprint cell. Object ids are assigned 1, 2, …
    /// in insertion order.
    pub fn object(&mut self, kind: ObjectType, container: usize, pos: Option<GridPos>, flags: StateFlags) -> ObjectId {
        self.objects.push((kind, container, pos, flags));
        ObjectId(self.objects.len() as u16)
    }

    pub fn agent(&mut self, id: AgentId, pos: GridPos, dir: Direction) -> &mut Self {
        self.agents.insert(id, (pos, dir));
        self
    }

    pub fn build(&self) -> Result<WorldState, WorldError> {
        let (layout, perm) = Layout::new(
            self.width,
            self.height,
            self.cells.clone(),
            self.rooms.clone(),
            self.furniture.iter().map(|(k, r, _)| (*k, *r)).collect(),
        )?;
        let mut new_index = vec![0usize; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            new_index[old] = new;
        }
        let flags: Vec<StateFlags> = perm.iter().map(|&old| self.furniture[old].2).collect();
        let mut taken = std::collections::HashSet::new();
        let mut objects = Vec::with_capacity(self.objects.len());
        for (i, (kind, container, pos, flags)) in self.objects.iter().enumerate() {
            let Some(&fid) = new_index.get(*container) else {
                return Err(WorldError::Invalid(format!("{kind} placed in missing furniture")));
            };
            let slot = layout.furniture()[fid];
            let pos = match pos {
                Some(p) => *p,
                None => slot
                    .rect
                    .cells()
                    .find(|p| !taken.contains(p) && !self.objects.iter().any(|o| o.2 == Some(*p)))
                    .ok_or_else(|| WorldError::Invalid(format!("no room for {kind} in {}", slot.kind)))?,
            };
            taken.insert(pos);
            objects.push(Object {
                id: ObjectId(i as u16 + 1),
                kind: *kind,
                pos,
                flags: flags.with(Flag::Carried, false),
                location: ObjectLocation::In(slot.id),
            });
        }
        let agents = self
            .agents
            .iter()
            .map(|(id, (pos, dir))| {
                (
                    *id,
                    AgentPose {
                        pos: *pos,
                        dir: *dir,
                        carrying: None,
                    },
                )
            })
            .collect();
        WorldState::new(Arc::new(layout), flags, objects, agents)
    }
}
