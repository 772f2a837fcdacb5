//! Asset vocabulary and the stable integer codebook used by the array encoding.
//!
//! Codes are part of the on-disk format. Appending new names is allowed;
//! renumbering existing ones requires bumping [`CODEBOOK_VERSION`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::evidence::{AudioMap, AudioToken};
use crate::world::ActionKind;

pub const CODEBOOK_VERSION: u32 = 1;

/// Reserved slot counts (room / furniture / object / state types).
pub const ROOM_SLOTS: usize = 6;
pub const FURNITURE_SLOTS: usize = 22;
pub const OBJECT_SLOTS: usize = 82;
pub const STATE_SLOTS: usize = 18;

/// Channel-0 codes that are not rooms.
pub const CELL_NONE: i16 = 0;
pub const CELL_WALL: i16 = 1;
pub const CELL_DOOR: i16 = 2;
const ROOM_CODE_BASE: i16 = 3;

/// Channel-7 value for cells without an agent.
pub const DIRECTION_SENTINEL: i16 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RoomType {
    Bathroom,
    Bedroom,
    Corridor,
    DiningRoom,
    Kitchen,
    LivingRoom,
}

impl RoomType {
    pub const ALL: [RoomType; ROOM_SLOTS] = [
        RoomType::Bathroom,
        RoomType::Bedroom,
        RoomType::Corridor,
        RoomType::DiningRoom,
        RoomType::Kitchen,
        RoomType::LivingRoom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RoomType::Bathroom => "Bathroom",
            RoomType::Bedroom => "Bedroom",
            RoomType::Corridor => "Corridor",
            RoomType::DiningRoom => "DiningRoom",
            RoomType::Kitchen => "Kitchen",
            RoomType::LivingRoom => "LivingRoom",
        }
    }

    pub fn code(self) -> i16 {
        ROOM_CODE_BASE + self as i16
    }

    pub fn from_code(code: i16) -> Option<Self> {
        let idx = code.checked_sub(ROOM_CODE_BASE)?;
        Self::ALL.get(usize::try_from(idx).ok()?).copied()
    }
}

impl fmt::Display for RoomType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RoomType {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|r| r.name() == s)
            .ok_or_else(|| UnknownName::new("room", s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} type {name:?}")]
pub struct UnknownName {
    pub kind: &'static str,
    pub name: String,
}

impl UnknownName {
    fn new(kind: &'static str, name: &str) -> Self {
        Self {
            kind,
            name: name.to_owned(),
        }
    }
}

/// Static description of a furniture asset.
#[derive(Debug, Clone, Copy)]
pub struct FurnitureSpec {
    pub name: &'static str,
    /// Footprint (width, height) before optional rotation.
    pub size: (u16, u16),
    pub toggleable: bool,
    pub openable: bool,
    pub receptacle: bool,
    /// Rooms this asset may be sampled into as an extra.
    pub rooms: &'static [RoomType],
}

use RoomType::*;

const ANY_ROOM: &[RoomType] = &[Bathroom, Bedroom, Corridor, DiningRoom, Kitchen, LivingRoom];

macro_rules! fur {
    ($name:literal, $w:literal x $h:literal, toggle=$t:literal, open=$o:literal, recv=$r:literal, $rooms:expr) => {
        FurnitureSpec {
            name: $name,
            size: ($w, $h),
            toggleable: $t,
            openable: $o,
            receptacle: $r,
            rooms: $rooms,
        }
    };
}

/// Furniture library, indexed by `code - 1`.
pub static FURNITURE: [FurnitureSpec; FURNITURE_SLOTS] = [
    fur!("bathtub", 2 x 1, toggle = false, open = false, recv = false, &[Bathroom]),
    fur!("bed", 2 x 2, toggle = false, open = false, recv = true, &[Bedroom]),
    fur!("bookshelf", 2 x 1, toggle = false, open = false, recv = true, &[LivingRoom, Bedroom, Corridor]),
    fur!("bowl", 1 x 1, toggle = false, open = false, recv = true, &[Kitchen, LivingRoom]),
    fur!("cabinet", 1 x 1, toggle = false, open = true, recv = true, &[Kitchen, LivingRoom, Bathroom, DiningRoom]),
    fur!("chair", 1 x 1, toggle = false, open = false, recv = true, &[DiningRoom, LivingRoom, Kitchen, Bedroom]),
    fur!("closet", 2 x 1, toggle = false, open = true, recv = true, &[Bedroom, Corridor]),
    fur!("counter", 2 x 1, toggle = false, open = false, recv = true, &[Kitchen]),
    fur!("desk", 2 x 1, toggle = false, open = false, recv = true, &[Bedroom, LivingRoom]),
    fur!("dishwasher", 1 x 1, toggle = true, open = true, recv = true, &[Kitchen]),
    fur!("dresser", 2 x 1, toggle = false, open = true, recv = true, &[Bedroom]),
    fur!("electric_refrigerator", 1 x 1, toggle = false, open = true, recv = true, &[Kitchen]),
    fur!("laundry", 1 x 1, toggle = true, open = true, recv = true, &[Bathroom]),
    fur!("light", 1 x 1, toggle = true, open = false, recv = false, ANY_ROOM),
    fur!("shelf", 1 x 1, toggle = false, open = false, recv = true, &[Kitchen, DiningRoom, Corridor]),
    fur!("shower", 1 x 1, toggle = true, open = false, recv = false, &[Bathroom]),
    fur!("sink", 1 x 1, toggle = true, open = false, recv = true, &[Kitchen, Bathroom]),
    fur!("sofa", 2 x 1, toggle = false, open = false, recv = true, &[LivingRoom]),
    fur!("stove", 1 x 1, toggle = true, open = false, recv = true, &[Kitchen]),
    fur!("table", 2 x 2, toggle = false, open = false, recv = true, &[Kitchen, DiningRoom, LivingRoom, Bedroom]),
    fur!("toilet", 1 x 1, toggle = false, open = false, recv = false, &[Bathroom]),
    fur!("tv", 1 x 1, toggle = true, open = false, recv = false, &[LivingRoom, Bedroom]),
];

/// Static description of an object asset.
#[derive(Debug, Clone, Copy)]
pub struct ObjectSpec {
    pub name: &'static str,
    pub toggleable: bool,
}

const fn obj(name: &'static str) -> ObjectSpec {
    ObjectSpec {
        name,
        toggleable: false,
    }
}

/// Object library, indexed by `code - 1`. The codebook reserves
/// [`OBJECT_SLOTS`] codes; only the assets the missions and distractors need
/// are defined.
pub static OBJECTS: [ObjectSpec; 20] = [
    obj("apple"),
    obj("book"),
    obj("bottle"),
    obj("clothes"),
    obj("cup"),
    obj("dog_food"),
    obj("hat"),
    obj("keys"),
    obj("magazine"),
    obj("pillow"),
    obj("plant"),
    obj("plate"),
    ObjectSpec {
        name: "radio",
        toggleable: true,
    },
    obj("remote"),
    obj("sandwich"),
    obj("shoe"),
    obj("snack"),
    obj("soap"),
    obj("towel"),
    obj("toy"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FurnitureType(u8);

impl FurnitureType {
    pub fn all() -> impl Iterator<Item = FurnitureType> {
        (0..FURNITURE.len() as u8).map(FurnitureType)
    }

    pub fn spec(self) -> &'static FurnitureSpec {
        &FURNITURE[self.0 as usize]
    }

    pub fn name(self) -> &'static str {
        self.spec().name
    }

    pub fn code(self) -> i16 {
        self.0 as i16 + 1
    }

    pub fn from_code(code: i16) -> Option<Self> {
        let idx = usize::try_from(code.checked_sub(1)?).ok()?;
        (idx < FURNITURE.len()).then_some(FurnitureType(idx as u8))
    }

    pub fn flags_allowed(self) -> StateFlags {
        let spec = self.spec();
        let mut f = StateFlags::EMPTY;
        if spec.toggleable {
            f = f.with(Flag::ToggledOn, true);
        }
        if spec.openable {
            f = f.with(Flag::Open, true);
        }
        f
    }
}

impl FromStr for FurnitureType {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FURNITURE
            .iter()
            .position(|f| f.name == s)
            .map(|i| FurnitureType(i as u8))
            .ok_or_else(|| UnknownName::new("furniture", s))
    }
}

impl fmt::Display for FurnitureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectType(u8);

impl ObjectType {
    pub fn all() -> impl Iterator<Item = ObjectType> {
        (0..OBJECTS.len() as u8).map(ObjectType)
    }

    pub fn spec(self) -> &'static ObjectSpec {
        &OBJECTS[self.0 as usize]
    }

    pub fn name(self) -> &'static str {
        self.spec().name
    }

    pub fn code(self) -> i16 {
        self.0 as i16 + 1
    }

    pub fn from_code(code: i16) -> Option<Self> {
        let idx = usize::try_from(code.checked_sub(1)?).ok()?;
        (idx < OBJECTS.len()).then_some(ObjectType(idx as u8))
    }

    pub fn flags_allowed(self) -> StateFlags {
        let mut f = StateFlags::EMPTY.with(Flag::Carried, true);
        if self.spec().toggleable {
            f = f.with(Flag::ToggledOn, true);
        }
        f
    }
}

impl FromStr for ObjectType {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OBJECTS
            .iter()
            .position(|o| o.name == s)
            .map(|i| ObjectType(i as u8))
            .ok_or_else(|| UnknownName::new("object", s))
    }
}

impl fmt::Display for ObjectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

macro_rules! serde_by_name {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.name())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

serde_by_name!(RoomType);
serde_by_name!(FurnitureType);
serde_by_name!(ObjectType);

/// Either kind of asset a predicate or subgoal can name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AssetType {
    Furniture(FurnitureType),
    Object(ObjectType),
}

impl AssetType {
    pub fn name(self) -> &'static str {
        match self {
            AssetType::Furniture(f) => f.name(),
            AssetType::Object(o) => o.name(),
        }
    }
}

impl FromStr for AssetType {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(f) = s.parse() {
            return Ok(AssetType::Furniture(f));
        }
        if let Ok(o) = s.parse() {
            return Ok(AssetType::Object(o));
        }
        Err(UnknownName::new("asset", s))
    }
}

serde_by_name!(AssetType);

/// Entity state flags in use. Bits 3..18 are reserved codebook slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Flag {
    ToggledOn,
    Open,
    Carried,
}

impl Flag {
    pub const ALL: [Flag; 3] = [Flag::ToggledOn, Flag::Open, Flag::Carried];

    pub fn bit(self) -> u32 {
        1 << (self as u32)
    }

    pub fn name(self) -> &'static str {
        match self {
            Flag::ToggledOn => "toggled_on",
            Flag::Open => "open",
            Flag::Carried => "carried",
        }
    }
}

impl FromStr for Flag {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Flag::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| UnknownName::new("state", s))
    }
}

serde_by_name!(Flag);

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Bitmask over [`Flag`]s, as stored in the furniture/object state channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateFlags(u32);

impl StateFlags {
    pub const EMPTY: StateFlags = StateFlags(0);

    pub fn from_bits(bits: u32) -> Self {
        StateFlags(bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn get(self, flag: Flag) -> bool {
        self.0 & flag.bit() != 0
    }

    pub fn with(self, flag: Flag, value: bool) -> Self {
        if value {
            StateFlags(self.0 | flag.bit())
        } else {
            StateFlags(self.0 & !flag.bit())
        }
    }

    pub fn set(&mut self, flag: Flag, value: bool) {
        *self = self.with(flag, value);
    }

    pub fn is_subset_of(self, other: StateFlags) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Flag> {
        Flag::ALL.into_iter().filter(move |f| self.get(*f))
    }
}

/// Serializable form of the codebook, written next to every dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub version: u32,
    pub channels: Vec<String>,
    pub cell_codes: BTreeMap<String, i16>,
    pub room_codes: BTreeMap<String, i16>,
    pub furniture_codes: BTreeMap<String, i16>,
    pub object_codes: BTreeMap<String, i16>,
    pub state_bits: BTreeMap<String, u32>,
    pub slots: BTreeMap<String, usize>,
    pub direction_codes: BTreeMap<String, i16>,
    pub audio_tokens: Vec<AudioToken>,
    pub audio_map: BTreeMap<String, AudioToken>,
}

impl Codebook {
    pub fn current() -> Self {
        let cell_codes = [("none", CELL_NONE), ("wall", CELL_WALL), ("door", CELL_DOOR)]
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect();
        let room_codes = RoomType::ALL
            .iter()
            .map(|r| (r.name().to_owned(), r.code()))
            .collect();
        let furniture_codes = FurnitureType::all()
            .map(|f| (f.name().to_owned(), f.code()))
            .collect();
        let object_codes = ObjectType::all()
            .map(|o| (o.name().to_owned(), o.code()))
            .collect();
        let state_bits = Flag::ALL
            .iter()
            .map(|f| (f.name().to_owned(), f.bit()))
            .collect();
        let slots = [
            ("room_types", ROOM_SLOTS),
            ("furniture_types", FURNITURE_SLOTS),
            ("object_types", OBJECT_SLOTS),
            ("state_types", STATE_SLOTS),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect();
        let direction_codes = [("north", 0), ("east", 1), ("south", 2), ("west", 3), ("none", DIRECTION_SENTINEL)]
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect();
        let map = AudioMap::default();
        let audio_map = ActionKind::ALL
            .iter()
            .map(|k| (k.name().to_owned(), map.token(*k)))
            .collect();
        Codebook {
            version: CODEBOOK_VERSION,
            channels: [
                "room_type",
                "furniture_type",
                "furniture_states",
                "object_type",
                "object_states",
                "object_id",
                "agent_position",
                "agent_direction",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            cell_codes,
            room_codes,
            furniture_codes,
            object_codes,
            state_bits,
            slots,
            direction_codes,
            audio_tokens: AudioToken::ALL.to_vec(),
            audio_map,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("codebook serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn names_are_unique_across_asset_kinds() {
        let mut seen = HashSet::new();
        for n in FURNITURE.iter().map(|f| f.name).chain(OBJECTS.iter().map(|o| o.name)) {
            assert!(seen.insert(n), "duplicate asset name {n}");
        }
        for r in RoomType::ALL {
            assert!(seen.insert(r.name()));
        }
    }

    #[test]
    fn codes_round_trip() {
        for f in FurnitureType::all() {
            assert_eq!(FurnitureType::from_code(f.code()), Some(f));
            assert_eq!(f.name().parse::<FurnitureType>().unwrap(), f);
        }
        for o in ObjectType::all() {
            assert_eq!(ObjectType::from_code(o.code()), Some(o));
        }
        for r in RoomType::ALL {
            assert_eq!(RoomType::from_code(r.code()), Some(r));
        }
        assert_eq!(FurnitureType::from_code(0), None);
        assert_eq!(FurnitureType::from_code(23), None);
        assert_eq!(RoomType::from_code(CELL_WALL), None);
    }

    #[test]
    fn slot_counts_cover_library() {
        assert_eq!(FURNITURE.len(), FURNITURE_SLOTS);
        assert!(OBJECTS.len() <= OBJECT_SLOTS);
        assert!(Flag::ALL.len() <= STATE_SLOTS);
    }

    #[test]
    fn codebook_json_is_stable() {
        let a = Codebook::current().to_json();
        let b = Codebook::current().to_json();
        assert_eq!(a, b);
        let back: Codebook = serde_json::from_str(&a).unwrap();
        assert_eq!(back, Codebook::current());
    }
}
