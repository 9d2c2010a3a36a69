use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::features::{SceneView, GRIPPER_OFFSET, MAX_OBJECTS, OBJECT_FIELDS, RAW_DIM};
use crate::model::{Observation, ObjectKind, Task};
use crate::util::normalize;

use super::state::SimState;
use super::GRID;

/// Stand-in for an image encoder: a fixed seeded Gaussian projection of the
/// centred raw features followed by L2 normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    dim: usize,
    seed: u64,
    /// Row-major `dim x (RAW_DIM + LOCAL_FIELDS)`.
    projection: Vec<f64>,
}

pub const DEFAULT_ENCODER_SEED: u64 = 0x5eed_c0de;

const GRIPPER_WEIGHT: f64 = 6.0;
/// Close-up channels about the gripper itself.
const LOCAL_FIELDS: usize = 1;
const LOCAL_WEIGHT: f64 = 10.0;
const INPUT_DIM: usize = RAW_DIM + LOCAL_FIELDS;

impl Encoder {
    pub fn new(dim: usize, seed: u64) -> Encoder {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let projection = (0..dim * INPUT_DIM)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * scale
            })
            .collect();
        Encoder { dim, seed, projection }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Simulator-native features, laid out per [`features`].
    pub fn raw_features(task: &Task, state: &SimState) -> Vec<f64> {
        let mut raw = vec![0.0; RAW_DIM];
        for spec in &task.objects {
            let Some(o) = state.objects.get(&spec.id) else { continue };
            let base = spec.id as usize * OBJECT_FIELDS;
            let held = state.gripper.holding == Some(spec.id);
            raw[base] = 1.0;
            raw[base + 1] = if spec.kind == ObjectKind::Container { 1.0 } else { 0.0 };
            raw[base + 2] = o.position.x as f64;
            raw[base + 3] = o.position.y as f64;
            raw[base + 4] = o.position.z as f64;
            raw[base + 5] = o.container.map_or(0.0, |c| c as f64 + 1.0);
            raw[base + 6] = if held { 1.0 } else { 0.0 };
        }
        let g = &state.gripper;
        raw[GRIPPER_OFFSET] = g.position.x as f64;
        raw[GRIPPER_OFFSET + 1] = g.position.y as f64;
        raw[GRIPPER_OFFSET + 2] = g.position.z as f64;
        raw[GRIPPER_OFFSET + 3] = if g.open { 1.0 } else { 0.0 };
        raw[GRIPPER_OFFSET + 4] = g.holding.map_or(0.0, |h| h as f64 + 1.0);
        raw
    }

    /// Centres coordinates and scales references so no field dominates the projection.
    fn conditioned(raw: &[f64]) -> Vec<f64> {
        let cx = (GRID.x - 1) as f64 / 2.0;
        let cy = (GRID.y - 1) as f64 / 2.0;
        let cz = (GRID.z - 1) as f64 / 2.0;
        let refs = MAX_OBJECTS as f64;
        let mut v = raw.to_vec();
        for slot in 0..MAX_OBJECTS {
            let b = slot * OBJECT_FIELDS;
            if raw[b] < 0.5 {
                continue;
            }
            v[b + 2] -= cx;
            v[b + 3] -= cy;
            v[b + 4] -= cz;
            v[b + 5] = raw[b + 5] / refs * 4.0;
            v[b + 6] = 2.0 * raw[b + 6] - 1.0;
        }
        // egocentric view: where the gripper is dominates the picture
        let g = GRIPPER_OFFSET;
        v[g] = (raw[g] - cx) * GRIPPER_WEIGHT;
        v[g + 1] = (raw[g + 1] - cy) * GRIPPER_WEIGHT;
        v[g + 2] = (raw[g + 2] - cz) * GRIPPER_WEIGHT;
        v[g + 3] = 2.0 * raw[g + 3] - 1.0;
        v[g + 4] = raw[g + 4] / refs * 4.0;
        v.extend(Self::local(raw).map(|x| x * LOCAL_WEIGHT));
        v
    }

    /// What a wrist camera would see: fingers shut on nothing.
    fn local(raw: &[f64]) -> [f64; LOCAL_FIELDS] {
        let Some(view) = SceneView::decode(raw) else {
            return [0.0; LOCAL_FIELDS];
        };
        let g = view.gripper;
        let shut_empty = g.holding.is_none() && !g.open;
        [if shut_empty { 1.0 } else { -1.0 }]
    }

    /// Projects raw features to a unit embedding.
    pub fn embed(&self, raw: &[f64]) -> Vec<f64> {
        let x = Self::conditioned(raw);
        let mut out: Vec<f64> = self
            .projection
            .chunks_exact(INPUT_DIM)
            .map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum())
            .collect();
        normalize(&mut out);
        out
    }

    pub fn encode(&self, task: &Task, state: &SimState) -> Observation {
        let raw_features = Self::raw_features(task, state);
        Observation { embedding: self.embed(&raw_features), raw_features, timestep: state.timestep }
    }
}
