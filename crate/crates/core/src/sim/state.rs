use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cell, ObjectId, SubgoalId};
use crate::util::fnv1a64;

/// Bumped whenever the serialized layout of [`SimState`] changes.
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectState {
    pub position: Cell,
    pub container: Option<ObjectId>,
    /// Knocked off-centre within its cell. Looks the same; grasps slip.
    #[serde(default)]
    pub askew: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GripperState {
    pub position: Cell,
    pub holding: Option<ObjectId>,
    pub open: bool,
}

/// Position of the simulator's private random stream.
///
/// The stream is a ChaCha8 generator identified by `seed`; `word_pos` is the
/// number of 32-bit words already consumed. Storing the cursor rather than the
/// generator keeps the state plain data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngCursor {
    pub seed: u64,
    pub word_pos_hi: u64,
    pub word_pos_lo: u64,
}

impl RngCursor {
    pub fn new(seed: u64) -> Self {
        RngCursor { seed, word_pos_hi: 0, word_pos_lo: 0 }
    }

    pub fn word_pos(&self) -> u128 {
        ((self.word_pos_hi as u128) << 64) | self.word_pos_lo as u128
    }

    /// Runs `f` against the stream positioned at this cursor, then advances.
    pub fn draw<T>(&mut self, f: impl FnOnce(&mut ChaCha8Rng) -> T) -> T {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(self.word_pos());
        let out = f(&mut rng);
        let pos = rng.get_word_pos();
        self.word_pos_hi = (pos >> 64) as u64;
        self.word_pos_lo = pos as u64;
        out
    }
}

/// Full ground-truth world state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimState {
    pub objects: BTreeMap<ObjectId, ObjectState>,
    pub gripper: GripperState,
    /// Completed subgoals with the simulator timestep of completion.
    pub completed_subgoals: BTreeMap<SubgoalId, u64>,
    pub timestep: u64,
    pub rng: RngCursor,
}

impl SimState {
    /// Stable content hash, used by traces and replay checks.
    pub fn content_hash(&self) -> u64 {
        fnv1a64(&serde_json::to_vec(self).expect("state serializes"))
    }

    /// Non-held, non-contained object standing on `cell`, or a container there.
    pub fn occupant(&self, cell: Cell) -> Option<ObjectId> {
        self.objects
            .iter()
            .find(|(id, o)| o.container.is_none() && self.gripper.holding != Some(**id) && o.position == cell)
            .map(|(id, _)| *id)
    }
}

/// Opaque captured state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: u64,
    pub timestep: u64,
    pub version: u32,
    bytes: Vec<u8>,
}

impl Snapshot {
    pub fn capture(state: &SimState, id: u64) -> Snapshot {
        Snapshot {
            id,
            timestep: state.timestep,
            version: SNAPSHOT_VERSION,
            bytes: serde_json::to_vec(state).expect("state serializes"),
        }
    }

    pub fn restore(&self) -> Result<SimState> {
        if self.version != SNAPSHOT_VERSION {
            return Err(Error::SnapshotVersion { expected: SNAPSHOT_VERSION, found: self.version });
        }
        Ok(serde_json::from_slice(&self.bytes)?)
    }

    pub fn content_hash(&self) -> u64 {
        fnv1a64(&self.bytes)
    }

    /// Re-stamps the format version; only useful to exercise the mismatch path.
    #[doc(hidden)]
    pub fn with_version(mut self, version: u32) -> Snapshot {
        self.version = version;
        self
    }
}
