//! The h × w × 8 integer array encoding and its inverse.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    AgentId, AgentPose, Cell, CellSource, Direction, GridPos, Layout, Object, ObjectId, ObjectLocation, Rect,
    WorldError, WorldState,
};
use crate::codebook::{
    Flag, FurnitureType, ObjectType, RoomType, StateFlags, CELL_DOOR, CELL_NONE, CELL_WALL, DIRECTION_SENTINEL,
};

pub const CHANNELS: usize = 8;

const CH_ROOM: usize = 0;
const CH_FUR: usize = 1;
const CH_FUR_STATE: usize = 2;
const CH_OBJ: usize = 3;
const CH_OBJ_STATE: usize = 4;
const CH_OBJ_ID: usize = 5;
pub const CH_AGENT: usize = 6;
pub const CH_DIR: usize = 7;

/// Row-major `height × width × CHANNELS` array.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub height: u16,
    pub width: u16,
    pub data: Vec<i16>,
}

impl Grid {
    pub fn zeros(height: u16, width: u16) -> Self {
        let mut data = vec![0; usize::from(height) * usize::from(width) * CHANNELS];
        for cell in data.chunks_mut(CHANNELS) {
            cell[CH_DIR] = DIRECTION_SENTINEL;
        }
        Grid { height, width, data }
    }

    fn offset(&self, p: GridPos) -> usize {
        (usize::from(p.y) * usize::from(self.width) + usize::from(p.x)) * CHANNELS
    }

    pub fn get(&self, p: GridPos, channel: usize) -> i16 {
        self.data[self.offset(p) + channel]
    }

    pub fn set(&mut self, p: GridPos, channel: usize, v: i16) {
        let o = self.offset(p);
        self.data[o + channel] = v;
    }

    pub fn cell(&self, p: GridPos) -> &[i16] {
        let o = self.offset(p);
        &self.data[o..o + CHANNELS]
    }

    fn positions(&self) -> impl Iterator<Item = GridPos> {
        let (w, h) = (self.width, self.height);
        (0..h).flat_map(move |y| (0..w).map(move |x| GridPos::new(x, y)))
    }
}

impl CellSource for Grid {
    fn dims(&self) -> (u16, u16) {
        (self.width, self.height)
    }

    fn channels(&self, p: GridPos) -> [i16; CHANNELS] {
        self.cell(p).try_into().expect("cell has CHANNELS values")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("grid data has {got} values, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("unknown code {code} in channel {channel} at {pos}")]
    UnknownCode { channel: usize, pos: GridPos, code: i16 },
    #[error("{what} at {pos} is not a rectangle")]
    NotRectangular { what: &'static str, pos: GridPos },
    #[error("inconsistent cell at {pos}: {reason}")]
    Inconsistent { pos: GridPos, reason: &'static str },
    #[error(transparent)]
    World(#[from] WorldError),
}

fn room_code(layout: &Layout, p: GridPos) -> i16 {
    match layout.cell(p) {
        Some(Cell::Wall) => CELL_WALL,
        Some(Cell::Door) => CELL_DOOR,
        Some(Cell::Floor(r)) => layout.room(r).map_or(CELL_NONE, |room| room.kind.code()),
        None => CELL_NONE,
    }
}

impl CellSource for WorldState {
    fn dims(&self) -> (u16, u16) {
        (self.width(), self.height())
    }

    fn channels(&self, p: GridPos) -> [i16; CHANNELS] {
        let mut c = [0i16; CHANNELS];
        c[CH_DIR] = DIRECTION_SENTINEL;
        let layout = self.layout();
        c[CH_ROOM] = room_code(layout, p);
        if let Some(f) = layout.furniture_at(p) {
            c[CH_FUR] = f.kind.code();
            c[CH_FUR_STATE] = self.furniture_flags()[usize::from(f.id.0)].bits() as i16;
        }
        if let Some(o) = self.object_at(p) {
            c[CH_OBJ] = o.kind.code();
            c[CH_OBJ_STATE] = o.flags.bits() as i16;
            c[CH_OBJ_ID] = o.id.0 as i16;
        }
        if let Some((id, pose)) = self.agents().iter().find(|(_, a)| a.pos == p) {
            c[CH_AGENT] = i16::from(id.0) + 1;
            c[CH_DIR] = pose.dir.code();
        }
        c
    }
}

pub fn encode_array(state: &WorldState) -> Grid {
    let mut g = Grid::zeros(state.height(), state.width());
    let layout = state.layout();
    for p in g.positions().collect::<Vec<_>>() {
        g.set(p, CH_ROOM, room_code(layout, p));
    }
    for f in state.furniture() {
        for p in f.slot.rect.cells() {
            g.set(p, CH_FUR, f.kind().code());
            g.set(p, CH_FUR_STATE, f.flags.bits() as i16);
        }
    }
    for o in state.objects() {
        g.set(o.pos, CH_OBJ, o.kind.code());
        g.set(o.pos, CH_OBJ_STATE, o.flags.bits() as i16);
        g.set(o.pos, CH_OBJ_ID, o.id.0 as i16);
    }
    for (id, pose) in state.agents() {
        g.set(pose.pos, CH_AGENT, i16::from(id.0) + 1);
        g.set(pose.pos, CH_DIR, pose.dir.code());
    }
    g
}

/// 4-connected component of cells with channel value `code`, starting at `start`.
fn component(g: &Grid, start: GridPos, channel: usize, seen: &mut [bool]) -> Vec<GridPos> {
    let code = g.get(start, channel);
    let idx = |p: GridPos| usize::from(p.y) * usize::from(g.width) + usize::from(p.x);
    let mut out = vec![start];
    seen[idx(start)] = true;
    let mut i = 0;
    while i < out.len() {
        let p = out[i];
        i += 1;
        for d in Direction::ALL {
            if let Some(q) = p.step(d) {
                if q.x < g.width && q.y < g.height && !seen[idx(q)] && g.get(q, channel) == code {
                    seen[idx(q)] = true;
                    out.push(q);
                }
            }
        }
    }
    out
}

fn bounding_rect(cells: &[GridPos], what: &'static str) -> Result<Rect, DecodeError> {
    let x0 = cells.iter().map(|p| p.x).min().expect("non-empty");
    let x1 = cells.iter().map(|p| p.x).max().expect("non-empty");
    let y0 = cells.iter().map(|p| p.y).min().expect("non-empty");
    let y1 = cells.iter().map(|p| p.y).max().expect("non-empty");
    let r = Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1);
    if r.area() != cells.len() {
        return Err(DecodeError::NotRectangular {
            what,
            pos: GridPos::new(x0, y0),
        });
    }
    Ok(r)
}

/// Rebuild the state an array was encoded from. Rooms and furniture are
/// recovered as connected components of equal codes, so same-type furniture
/// must never touch (the generator guarantees this).
pub fn decode_array(g: &Grid) -> Result<WorldState, DecodeError> {
    let expected = usize::from(g.height) * usize::from(g.width) * CHANNELS;
    if g.data.len() != expected || g.height == 0 || g.width == 0 {
        return Err(DecodeError::Shape {
            expected,
            got: g.data.len(),
        });
    }
    let n = usize::from(g.height) * usize::from(g.width);
    let unknown = |channel, pos, code| DecodeError::UnknownCode { channel, pos, code };

    for p in g.positions() {
        let c = g.cell(p);
        if c[CH_ROOM] > CELL_DOOR && RoomType::from_code(c[CH_ROOM]).is_none() || c[CH_ROOM] < CELL_NONE {
            return Err(unknown(CH_ROOM, p, c[CH_ROOM]));
        }
        if c[CH_FUR] != 0 && FurnitureType::from_code(c[CH_FUR]).is_none() {
            return Err(unknown(CH_FUR, p, c[CH_FUR]));
        }
        if c[CH_OBJ] != 0 && ObjectType::from_code(c[CH_OBJ]).is_none() {
            return Err(unknown(CH_OBJ, p, c[CH_OBJ]));
        }
        if c[CH_AGENT] < 0 || c[CH_AGENT] > i16::from(u8::MAX) + 1 {
            return Err(unknown(CH_AGENT, p, c[CH_AGENT]));
        }
        let dir_ok = if c[CH_AGENT] == 0 {
            c[CH_DIR] == DIRECTION_SENTINEL
        } else {
            Direction::from_code(c[CH_DIR]).is_some()
        };
        if !dir_ok {
            return Err(unknown(CH_DIR, p, c[CH_DIR]));
        }
    }

    let mut seen = vec![false; n];
    let mut cells = vec![Cell::Wall; n];
    let mut rooms = Vec::new();
    for p in g.positions() {
        let i = usize::from(p.y) * usize::from(g.width) + usize::from(p.x);
        let code = g.get(p, CH_ROOM);
        match code {
            CELL_WALL | CELL_NONE => {}
            CELL_DOOR => cells[i] = Cell::Door,
            _ if !seen[i] => {
                let comp = component(g, p, CH_ROOM, &mut seen);
                let rect = bounding_rect(&comp, "room")?;
                let id = super::RoomId(rooms.len() as u16);
                for q in &comp {
                    cells[usize::from(q.y) * usize::from(g.width) + usize::from(q.x)] = Cell::Floor(id);
                }
                rooms.push((RoomType::from_code(code).expect("validated"), rect));
            }
            _ => {}
        }
    }

    let mut seen = vec![false; n];
    let mut furniture = Vec::new();
    let mut fur_flags = Vec::new();
    for p in g.positions() {
        let i = usize::from(p.y) * usize::from(g.width) + usize::from(p.x);
        let code = g.get(p, CH_FUR);
        if code == 0 || seen[i] {
            continue;
        }
        let comp = component(g, p, CH_FUR, &mut seen);
        let rect = bounding_rect(&comp, "furniture")?;
        let flags = g.get(p, CH_FUR_STATE);
        if comp.iter().any(|q| g.get(*q, CH_FUR_STATE) != flags) || flags < 0 {
            return Err(DecodeError::Inconsistent {
                pos: p,
                reason: "furniture state differs across footprint",
            });
        }
        furniture.push((FurnitureType::from_code(code).expect("validated"), rect));
        fur_flags.push(StateFlags::from_bits(flags as u32));
    }
    let (layout, perm) = Layout::new(g.width, g.height, cells, rooms, furniture)?;
    let fur_flags: Vec<StateFlags> = perm.iter().map(|&old| fur_flags[old]).collect();

    let mut agents = BTreeMap::new();
    for p in g.positions() {
        let a = g.get(p, CH_AGENT);
        if a > 0 {
            let id = AgentId((a - 1) as u8);
            let pose = AgentPose {
                pos: p,
                dir: Direction::from_code(g.get(p, CH_DIR)).expect("validated"),
                carrying: None,
            };
            if agents.insert(id, pose).is_some() {
                return Err(DecodeError::Inconsistent {
                    pos: p,
                    reason: "agent appears twice",
                });
            }
        }
    }

    let mut objects = Vec::new();
    for p in g.positions() {
        let code = g.get(p, CH_OBJ);
        if code == 0 {
            continue;
        }
        let bits = g.get(p, CH_OBJ_STATE);
        let id = g.get(p, CH_OBJ_ID);
        if bits < 0 || id <= 0 {
            return Err(DecodeError::Inconsistent {
                pos: p,
                reason: "bad object state or id",
            });
        }
        let flags = StateFlags::from_bits(bits as u32);
        let oid = ObjectId(id as u16);
        let location = if flags.get(Flag::Carried) {
            let Some((aid, pose)) = agents.iter_mut().find(|(_, a)| a.pos == p) else {
                return Err(DecodeError::Inconsistent {
                    pos: p,
                    reason: "carried object without an agent",
                });
            };
            pose.carrying = Some(oid);
            ObjectLocation::CarriedBy(*aid)
        } else {
            let Some(f) = layout.furniture_at(p) else {
                return Err(DecodeError::Inconsistent {
                    pos: p,
                    reason: "object outside any furniture",
                });
            };
            ObjectLocation::In(f.id)
        };
        objects.push(Object {
            id: oid,
            kind: ObjectType::from_code(code).expect("validated"),
            pos: p,
            flags,
            location,
        });
    }
    Ok(WorldState::new(Arc::new(layout), fur_flags, objects, agents)?)
}
