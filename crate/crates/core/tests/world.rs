use std::sync::OnceLock;

use proptest::prelude::*;
use whodunit_core::codebook::{Flag, FurnitureType, RoomType, StateFlags};
use whodunit_core::procgen::{generate_instances, DatasetSpec, EnvConfig, Instance, Split, AGENT_A, AGENT_B};
use whodunit_core::world::{
    decode_array, encode_array, ActionKind, AgentId, Direction, GridPos, ObjectLocation, Rect, Transition, WorldBuilder,
    WorldState,
};

fn instances() -> &'static Vec<Instance> {
    static I: OnceLock<Vec<Instance>> = OnceLock::new();
    I.get_or_init(|| {
        let mut out = Vec::new();
        for sc in ["pillow", "snack"] {
            let spec = DatasetSpec {
                n_envs: 2,
                per_env: 1,
                ..DatasetSpec::for_split(sc, Split::Test, 11)
            };
            out.extend(generate_instances(&spec, &EnvConfig::builtin(sc).unwrap()).unwrap());
        }
        out
    })
}

/// A two-agent start state built from a generated instance.
fn start(i: usize) -> WorldState {
    let inst = &instances()[i % instances().len()];
    let mut agents = inst.a.states[0].agents().clone();
    agents.extend(inst.b.states[0].agents().clone());
    inst.a.states[0].with_agents(agents).unwrap()
}

fn check_invariants(s: &WorldState) {
    let mut cells: Vec<GridPos> = s.agents().values().map(|p| p.pos).collect();
    for p in &cells {
        assert!(s.layout().walkable(*p), "agent on blocked cell {p:?}");
    }
    cells.sort();
    cells.dedup();
    assert_eq!(cells.len(), s.agents().len(), "agents share a cell");
    for (id, pose) in s.agents() {
        let held: Vec<_> = s
            .objects()
            .iter()
            .filter(|o| o.location == ObjectLocation::CarriedBy(*id))
            .collect();
        assert_eq!(held.len(), usize::from(pose.carrying.is_some()));
        if let Some(o) = held.first() {
            assert_eq!(Some(o.id), pose.carrying);
            assert_eq!(o.pos, pose.pos, "carried object follows its carrier");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_action_sequences_keep_state_consistent(
        env in 0usize..4,
        moves in prop::collection::vec((0usize..ActionKind::COUNT, any::<bool>()), 1..60),
    ) {
        let mut s = start(env);
        let layout = s.layout().clone();
        let n_objects = s.objects().len();
        check_invariants(&s);
        for (k, second) in moves {
            let agent = if second { AGENT_B } else { AGENT_A };
            let before = s.clone();
            let tr = s.step_kind(agent, ActionKind::ALL[k]).unwrap();
            if tr == Transition::NoOp {
                prop_assert_eq!(&s, &before);
            }
            let other = if second { AGENT_A } else { AGENT_B };
            prop_assert_eq!(s.agent(other), before.agent(other), "only the acting agent moves");
            prop_assert_eq!(s.layout(), &layout);
            prop_assert_eq!(s.objects().len(), n_objects);
            check_invariants(&s);
            prop_assert_eq!(decode_array(&encode_array(&s)).unwrap(), s.clone());
        }
    }
}

#[test]
fn generated_trajectories_round_trip_through_arrays() {
    for inst in instances() {
        for t in [&inst.a, &inst.b] {
            for s in &t.states {
                assert_eq!(&decode_array(&encode_array(s)).unwrap(), s);
            }
        }
    }
}

/// Corridor of four floor cells with a lamp at the east end.
fn corridor() -> WorldState {
    let mut b = WorldBuilder::new(7, 3);
    b.room(RoomType::Kitchen, Rect::new(1, 1, 5, 1));
    b.furniture("light".parse::<FurnitureType>().unwrap(), Rect::new(5, 1, 1, 1), StateFlags::EMPTY);
    b.agent(AgentId(0), GridPos::new(1, 1), Direction::East);
    b.build().unwrap()
}

#[test]
fn corridor_transitions() {
    let mut s = corridor();
    let a = AgentId(0);
    assert_eq!(s.step_kind(a, ActionKind::ToggleOn).unwrap(), Transition::NoOp, "lamp is out of reach");
    for x in 2..=4 {
        assert_eq!(s.step_kind(a, ActionKind::Forward).unwrap(), Transition::Applied);
        assert_eq!(s.agent(a).unwrap().pos, GridPos::new(x, 1));
    }
    assert_eq!(s.step_kind(a, ActionKind::Forward).unwrap(), Transition::NoOp, "lamp blocks the way");
    assert_eq!(s.step_kind(a, ActionKind::ToggleOn).unwrap(), Transition::Applied);
    assert!(s.furniture_flags()[0].get(Flag::ToggledOn));
    assert_eq!(s.step_kind(a, ActionKind::ToggleOn).unwrap(), Transition::NoOp, "already on");
    assert_eq!(s.step_kind(a, ActionKind::ToggleOff).unwrap(), Transition::Applied);
    assert!(!s.furniture_flags()[0].get(Flag::ToggledOn));
    s.step_kind(a, ActionKind::TurnLeft).unwrap();
    assert_eq!(s.agent(a).unwrap().dir, Direction::North);
    assert_eq!(s.step_kind(a, ActionKind::Forward).unwrap(), Transition::NoOp, "wall to the north");
    assert!(s.step_kind(AgentId(9), ActionKind::Idle).is_err());
}

#[test]
fn array_encoding_of_corridor() {
    let s = corridor();
    let g = encode_array(&s);
    assert_eq!((g.width, g.height), (7, 3));
    let agent = g.cell(GridPos::new(1, 1));
    assert_eq!(agent[whodunit_core::world::CH_AGENT], 1, "agent 0 is coded 1");
    assert_eq!(agent[whodunit_core::world::CH_DIR], Direction::East.code());
    assert_eq!(g.cell(GridPos::new(3, 1))[whodunit_core::world::CH_AGENT], 0);
    assert_eq!(decode_array(&g).unwrap(), s);
}
