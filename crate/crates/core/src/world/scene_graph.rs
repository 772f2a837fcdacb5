//! Scene-graph view of a state, used by the LLM prompt and the dataset.

use serde::{Deserialize, Serialize};

use super::{ObjectLocation, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Agent,
    Furniture,
    Object,
    Room,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    #[serde(rename = "type")]
    pub type_name: String,
    pub states: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<[u16; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "onTop")]
    OnTop,
    #[serde(rename = "inRoom")]
    InRoom,
    #[serde(rename = "carriedBy")]
    CarriedBy,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub relation: Relation,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SceneGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl SceneGraph {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scene graph serializes")
    }
}

pub fn to_scene_graph(state: &WorldState) -> SceneGraph {
    let layout = state.layout();
    let room_id = |r: super::RoomId| {
        let room = layout.room(r).expect("room exists");
        format!("{}_{}", room.kind, r.0)
    };
    let fur_id = |f: super::FurnitureId| {
        let slot = &layout.furniture()[usize::from(f.0)];
        format!("{}_{}", slot.kind, f.0)
    };
    let mut nodes = Vec::new();
    let mut edges = Vec::new();

    for room in layout.rooms() {
        nodes.push(Node {
            id: room_id(room.id),
            kind: NodeKind::Room,
            type_name: room.kind.to_string(),
            states: Vec::new(),
            pos: None,
            dir: None,
        });
    }
    for f in state.furniture() {
        let id = fur_id(f.id());
        nodes.push(Node {
            id: id.clone(),
            kind: NodeKind::Furniture,
            type_name: f.kind().to_string(),
            states: f.flags.iter().map(|s| s.name().to_owned()).collect(),
            pos: Some([f.slot.rect.x, f.slot.rect.y]),
            dir: None,
        });
        edges.push(Edge {
            from: id,
            relation: Relation::InRoom,
            to: room_id(f.slot.room),
        });
    }
    for o in state.objects() {
        let id = format!("{}_{}", o.kind, o.id.0);
        nodes.push(Node {
            id: id.clone(),
            kind: NodeKind::Object,
            type_name: o.kind.to_string(),
            states: o.flags.iter().map(|s| s.name().to_owned()).collect(),
            pos: Some([o.pos.x, o.pos.y]),
            dir: None,
        });
        match o.location {
            ObjectLocation::In(f) => edges.push(Edge {
                from: id.clone(),
                relation: Relation::OnTop,
                to: fur_id(f),
            }),
            ObjectLocation::CarriedBy(a) => edges.push(Edge {
                from: id.clone(),
                relation: Relation::CarriedBy,
                to: a.to_string(),
            }),
        }
        if let Some(r) = state.object_room(o) {
            edges.push(Edge {
                from: id,
                relation: Relation::InRoom,
                to: room_id(r),
            });
        }
    }
    for (aid, pose) in state.agents() {
        nodes.push(Node {
            id: aid.to_string(),
            kind: NodeKind::Agent,
            type_name: "agent".into(),
            states: Vec::new(),
            pos: Some([pose.pos.x, pose.pos.y]),
            dir: Some(pose.dir as u8),
        });
        if let Some(room) = layout.room_at(pose.pos) {
            edges.push(Edge {
                from: aid.to_string(),
                relation: Relation::InRoom,
                to: room_id(room.id),
            });
        }
    }
    nodes.sort();
    edges.sort();
    SceneGraph { nodes, edges }
}
