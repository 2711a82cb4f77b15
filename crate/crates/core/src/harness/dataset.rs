use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blob::{self, Array};
use super::{HarnessError, RunConfig};
use crate::dynamics::ActionSequence;
use crate::features::{
    compress, extract_oracle, fit_reference_stats, pad_history, GoalEncoding, NormStats,
    RawFeatureMap, CELLS,
};
use crate::geometry::Pose4;
use crate::planner::{
    assemble_supervision, generate_velocity_plan, plan_waypoints, refine_altitude, AStarConfig,
    VelocityPlan, WaypointPath,
};
use crate::policy::{PolicyInput, PolicyParams, TrainingSample, ACTION_DIM};
use crate::runtime::{mix_seed, update_goal_signals};
use crate::world::{
    generate_scenario, raycast_depth, render, ClearImage, DepthImage, Scenario, ScenarioKind,
};

pub const DATASET_VERSION: u32 = 1;
pub const EPISODE_VERSION: u32 = 1;
const EPISODE_MAGIC: &[u8; 8] = b"SNAVEPIS";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFrame {
    pub altitude: f64,
    pub features: RawFeatureMap,
    pub goal: GoalEncoding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Plan step of the current frame.
    pub tau: usize,
    /// Altitude above the seabed at which the history was rendered.
    pub altitude: f64,
    pub reference: usize,
    /// Frame indices, oldest first, padded to `P`.
    pub history: Vec<usize>,
    #[serde(skip)]
    pub actions: ActionSequence,
    /// Expert segment before altitude refinement.
    #[serde(skip)]
    pub unrefined: ActionSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub terrain: usize,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub split: Split,
    /// Plan length before stop padding.
    pub plan_len: usize,
    pub references: Vec<ReferenceFrame>,
    pub frames: Vec<RawFeatureMap>,
    /// Goal signals aligned with `frames`.
    pub goals: Vec<GoalEncoding>,
    /// Aligned with `frames` when images are stored, empty otherwise.
    pub depth: Vec<DepthImage>,
    pub clear: Vec<ClearImage>,
    pub observations: Vec<Observation>,
}

#[derive(Serialize, Deserialize)]
struct EpisodeHeader {
    terrain: usize,
    kind: ScenarioKind,
    seed: u64,
    split: Split,
    plan_len: usize,
    channels: usize,
    q: usize,
    reference_altitudes: Vec<f64>,
    observations: Vec<Observation>,
    image: Option<(usize, usize, f64)>,
}

fn flat_goals(goals: impl Iterator<Item = GoalEncoding>) -> Vec<f64> {
    goals.flat_map(|g| g.to_array()).collect()
}

fn goals_from(a: &Array) -> Result<Vec<GoalEncoding>, HarnessError> {
    if a.shape.len() != 2 || a.shape[1] != 3 {
        return Err(HarnessError::Format(format!(
            "goal array '{}' has shape {:?}",
            a.name, a.shape
        )));
    }
    Ok(a.data
        .chunks_exact(3)
        .map(|c| GoalEncoding {
            sin: c[0],
            cos: c[1],
            s: c[2],
        })
        .collect())
}

fn maps_from(a: &Array, channels: usize) -> Vec<RawFeatureMap> {
    let width = CELLS * channels;
    if width == 0 {
        return Vec::new();
    }
    a.data
        .chunks_exact(width)
        .map(|c| RawFeatureMap {
            channels,
            data: c.to_vec(),
        })
        .collect()
}

impl EpisodeRecord {
    pub fn channels(&self) -> usize {
        self.frames
            .first()
            .or(self.references.first().map(|r| &r.features))
            .map_or(0, |f| f.channels)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let channels = self.channels();
        let q = self.observations.first().map_or(0, |o| o.actions.len());
        let image = self.depth.first().map(|d| (d.height, d.width, d.max_range));
        let header = EpisodeHeader {
            terrain: self.terrain,
            kind: self.kind,
            seed: self.seed,
            split: self.split,
            plan_len: self.plan_len,
            channels,
            q,
            reference_altitudes: self.references.iter().map(|r| r.altitude).collect(),
            observations: self.observations.clone(),
            image,
        };
        let width = CELLS * channels;
        let (nr, nf, no) = (
            self.references.len(),
            self.frames.len(),
            self.observations.len(),
        );
        let mut arrays = vec![
            Array::new(
                "ref_features",
                &[nr, width],
                self.references
                    .iter()
                    .flat_map(|r| r.features.data.iter().copied())
                    .collect(),
            ),
            Array::new(
                "ref_goals",
                &[nr, 3],
                flat_goals(self.references.iter().map(|r| r.goal)),
            ),
            Array::new(
                "frames",
                &[nf, width],
                self.frames
                    .iter()
                    .flat_map(|f| f.data.iter().copied())
                    .collect(),
            ),
            Array::new("goals", &[nf, 3], flat_goals(self.goals.iter().copied())),
            Array::new(
                "actions",
                &[no, q, ACTION_DIM],
                self.observations
                    .iter()
                    .flat_map(|o| o.actions.to_flat())
                    .collect(),
            ),
            Array::new(
                "unrefined",
                &[no, q, ACTION_DIM],
                self.observations
                    .iter()
                    .flat_map(|o| o.unrefined.to_flat())
                    .collect(),
            ),
        ];
        if let Some((h, w, _)) = image {
            arrays.push(Array::new(
                "depth",
                &[nf, h, w],
                self.depth
                    .iter()
                    .flat_map(|d| d.data.iter().copied())
                    .collect(),
            ));
            arrays.push(Array::new(
                "clear",
                &[nf, h, w, 3],
                self.clear
                    .iter()
                    .flat_map(|c| c.data.iter().copied())
                    .collect(),
            ));
        }
        let header = serde_json::to_vec(&header).expect("header serializes");
        blob::encode(EPISODE_MAGIC, EPISODE_VERSION, &header, &arrays)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, HarnessError> {
        let (header, arrays) = blob::decode(buf, EPISODE_MAGIC, EPISODE_VERSION)?;
        let h: EpisodeHeader = serde_json::from_slice(header)?;
        let get = |name: &str| {
            arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| HarnessError::Format(format!("missing array '{name}'")))
        };
        let (nr, no) = (h.reference_altitudes.len(), h.observations.len());
        let ref_maps = maps_from(get("ref_features")?, h.channels);
        let ref_goals = goals_from(get("ref_goals")?)?;
        let frames = maps_from(get("frames")?, h.channels);
        let goals = goals_from(get("goals")?)?;
        let actions = get("actions")?;
        let unrefined = get("unrefined")?;
        if ref_maps.len() != nr || ref_goals.len() != nr || frames.len() != goals.len() {
            return Err(HarnessError::Format(
                "reference or frame counts disagree".into(),
            ));
        }
        if actions.shape != [no, h.q, ACTION_DIM] || unrefined.shape != actions.shape {
            return Err(HarnessError::Format(format!(
                "action array shape {:?}",
                actions.shape
            )));
        }
        let seq_len = h.q * ACTION_DIM;
        let mut observations = h.observations;
        for (i, o) in observations.iter_mut().enumerate() {
            if o.reference >= nr || o.history.iter().any(|f| *f >= frames.len()) {
                return Err(HarnessError::Format(format!(
                    "observation {i} indexes past the stored frames"
                )));
            }
            o.actions = ActionSequence::from_flat(&actions.data[i * seq_len..(i + 1) * seq_len]);
            o.unrefined =
                ActionSequence::from_flat(&unrefined.data[i * seq_len..(i + 1) * seq_len]);
        }
        let (mut depth, mut clear) = (Vec::new(), Vec::new());
        if let Some((ih, iw, max_range)) = h.image {
            let d = get("depth")?;
            let c = get("clear")?;
            if d.shape != [frames.len(), ih, iw] || c.shape != [frames.len(), ih, iw, 3] {
                return Err(HarnessError::Format("image array shapes disagree".into()));
            }
            depth = d
                .data
                .chunks_exact((ih * iw).max(1))
                .map(|px| DepthImage {
                    width: iw,
                    height: ih,
                    max_range,
                    data: px.to_vec(),
                })
                .collect();
            clear = c
                .data
                .chunks_exact((ih * iw * 3).max(1))
                .map(|px| ClearImage {
                    width: iw,
                    height: ih,
                    data: px.to_vec(),
                })
                .collect();
        }
        Ok(Self {
            terrain: h.terrain,
            kind: h.kind,
            seed: h.seed,
            split: h.split,
            plan_len: h.plan_len,
            references: h
                .reference_altitudes
                .into_iter()
                .zip(ref_maps.into_iter().zip(ref_goals))
                .map(|(altitude, (features, goal))| ReferenceFrame {
                    altitude,
                    features,
                    goal,
                })
                .collect(),
            frames,
            goals,
            depth,
            clear,
            observations,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub terrain: usize,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub split: Split,
    pub observations: usize,
    pub references: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTerrain {
    pub terrain: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub p: usize,
    pub q: usize,
    pub frame_spacing: usize,
    /// Water and extractor the stored features were produced with.
    pub water: String,
    pub extractor: String,
    pub episodes: Vec<ManifestEntry>,
    pub skipped: Vec<SkippedTerrain>,
    pub train_observations: usize,
    pub val_observations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub episodes: Vec<EpisodeRecord>,
}

impl Dataset {
    pub fn observations(&self, split: Split) -> usize {
        self.episodes
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.observations.len())
            .sum()
    }
}

/// Expert plan for one terrain.
#[derive(Debug, Clone)]
pub struct TerrainPlan {
    pub scenario: Scenario,
    pub path: WaypointPath,
    /// Padded with `Q` stop commands.
    pub plan: VelocityPlan,
    pub plan_len: usize,
}

fn terrain_kind(index: usize, cfg: &RunConfig) -> ScenarioKind {
    let t = cfg.data.terrains;
    let hills = ((1.0 - cfg.data.pillars_fraction) * t as f64).round() as usize;
    if (index + 1) * hills / t > index * hills / t {
        ScenarioKind::Hills
    } else {
        ScenarioKind::Pillars
    }
}

fn terrain_split(index: usize, cfg: &RunConfig) -> Split {
    let t = cfg.data.terrains;
    let val = (cfg.data.val_fraction * t as f64).round() as usize;
    if index >= t - val.min(t) {
        Split::Val
    } else {
        Split::Train
    }
}

pub fn terrain_seed(cfg: &RunConfig, index: usize) -> u64 {
    mix_seed(cfg.seed, index as u64)
}

/// Scenario, waypoints and padded velocity plan for terrain `index`.
pub fn plan_terrain(cfg: &RunConfig, index: usize) -> Result<TerrainPlan, HarnessError> {
    let seed = terrain_seed(cfg, index);
    let scenario = generate_scenario(terrain_kind(index, cfg), seed, &cfg.world)?;
    let astar = AStarConfig {
        seed,
        ..cfg.astar.clone()
    };
    let path = plan_waypoints(&scenario, &astar)?;
    let mut plan = generate_velocity_plan(&path, &scenario.start, &cfg.mpc1)?;
    let plan_len = plan.len();
    plan.pad_with_stop(cfg.policy.q);
    Ok(TerrainPlan {
        scenario,
        path,
        plan,
        plan_len,
    })
}

fn at_altitude(sc: &Scenario, p: &Pose4, altitude: f64) -> Pose4 {
    Pose4 {
        z: sc.terrain.height_clamped(p.x, p.y) + altitude,
        ..*p
    }
}

struct Frame {
    features: RawFeatureMap,
    depth: Option<(DepthImage, ClearImage)>,
}

fn capture(sc: &Scenario, pose: &Pose4, cfg: &RunConfig) -> Frame {
    if cfg.data.store_frames {
        let (d, c) = render(sc, &pose.to_pose(), &cfg.camera);
        Frame {
            features: extract_oracle(&d),
            depth: Some((d, c)),
        }
    } else {
        let d = raycast_depth(sc, &pose.to_pose(), &cfg.camera);
        Frame {
            features: extract_oracle(&d),
            depth: None,
        }
    }
}

fn build_episode(cfg: &RunConfig, index: usize) -> Result<EpisodeRecord, HarnessError> {
    let tp = plan_terrain(cfg, index)?;
    let sc = &tp.scenario;
    let (p, q) = (cfg.policy.p, cfg.policy.q);
    let spacing = cfg.frame_spacing();
    let total = (sc.goal[0] - sc.start.x).hypot(sc.goal[1] - sc.start.y);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(terrain_seed(cfg, index), 0xda7a));
    let (lo, hi) = (cfg.data.altitude_min, cfg.data.altitude_max);

    let mut depth = Vec::new();
    let mut clear = Vec::new();

    let mut references = Vec::new();
    for _ in 0..cfg.data.references_per_terrain {
        let altitude = rng.gen_range(lo..=hi);
        let pose = at_altitude(sc, &sc.start, altitude);
        references.push(ReferenceFrame {
            altitude,
            features: capture(sc, &pose, cfg).features,
            goal: update_goal_signals(&pose, sc.goal, total),
        });
    }

    let mut frames = Vec::new();
    let mut goals = Vec::new();
    let mut observations = Vec::new();
    for tau in (0..tp.plan_len).step_by(cfg.data.obs_stride) {
        for _ in 0..cfg.data.draws_per_step {
            let altitude = rng.gen_range(lo..=hi);
            let reference = rng.gen_range(0..references.len());
            let steps: Vec<usize> = (0..p)
                .filter_map(|j| tau.checked_sub(spacing * (p - 1 - j)))
                .collect();
            let mut observed = Vec::with_capacity(steps.len());
            for step in steps {
                let pose = at_altitude(sc, &tp.plan.poses[step], altitude);
                let f = capture(sc, &pose, cfg);
                if let Some((d, c)) = f.depth {
                    depth.push(d);
                    clear.push(c);
                }
                frames.push(f.features);
                goals.push(update_goal_signals(&pose, sc.goal, total));
                observed.push(frames.len() - 1);
            }
            let vz: Vec<f64> = tp.plan.commands[tau..tau + q]
                .iter()
                .map(|c| c.vz)
                .collect();
            let refined =
                refine_altitude(&vz, altitude, references[reference].altitude, &cfg.mpc2)?;
            observations.push(Observation {
                tau,
                altitude,
                reference,
                history: pad_history(&observed, p),
                actions: assemble_supervision(&tp.plan, &refined, tau, q)?,
                unrefined: assemble_supervision(&tp.plan, &vz, tau, q)?,
            });
        }
    }
    Ok(EpisodeRecord {
        terrain: index,
        kind: sc.kind,
        seed: sc.seed,
        split: terrain_split(index, cfg),
        plan_len: tp.plan_len,
        references,
        frames,
        goals,
        depth,
        clear,
        observations,
    })
}

/// Builds every terrain in parallel. Terrains whose scene or expert plan
/// fails are listed in the manifest and left out.
pub fn gen_dataset(cfg: &RunConfig) -> Result<Dataset, HarnessError> {
    cfg.validate()?;
    let n = cfg.data.terrains;
    let results: Vec<Mutex<Option<Result<EpisodeRecord, HarnessError>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism()
        .map_or(1, |w| w.get())
        .min(n);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = build_episode(cfg, i);
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    let mut episodes = Vec::new();
    let mut skipped = Vec::new();
    for (i, slot) in results.into_iter().enumerate() {
        match slot
            .into_inner()
            .expect("result slot")
            .expect("every terrain ran")
        {
            Ok(e) => episodes.push(e),
            Err(e @ (HarnessError::World(_) | HarnessError::Planner(_))) => {
                skipped.push(SkippedTerrain {
                    terrain: i,
                    seed: terrain_seed(cfg, i),
                    reason: e.to_string(),
                })
            }
            Err(e) => return Err(e),
        }
    }
    let manifest = manifest_for(cfg, &episodes, skipped);
    Ok(Dataset { manifest, episodes })
}

fn manifest_for(
    cfg: &RunConfig,
    episodes: &[EpisodeRecord],
    skipped: Vec<SkippedTerrain>,
) -> DatasetManifest {
    let count = |s: Split| {
        episodes
            .iter()
            .filter(|e| e.split == s)
            .map(|e| e.observations.len())
            .sum()
    };
    DatasetManifest {
        version: DATASET_VERSION,
        seed: cfg.seed,
        p: cfg.policy.p,
        q: cfg.policy.q,
        frame_spacing: cfg.frame_spacing(),
        water: "none".into(),
        extractor: "oracle".into(),
        episodes: episodes
            .iter()
            .map(|e| ManifestEntry {
                file: format!("episode_{:04}.bin", e.terrain),
                terrain: e.terrain,
                kind: e.kind,
                seed: e.seed,
                split: e.split,
                observations: e.observations.len(),
                references: e.references.len(),
            })
            .collect(),
        skipped,
        train_observations: count(Split::Train),
        val_observations: count(Split::Val),
    }
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    for (entry, ep) in dataset.manifest.episodes.iter().zip(&dataset.episodes) {
        std::fs::write(dir.join(&entry.file), ep.to_bytes())?;
    }
    let text = serde_json::to_string_pretty(&dataset.manifest)?;
    std::fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

/// Reads a dataset directory and checks every episode against the manifest.
pub fn load_dataset(dir: &Path) -> Result<Dataset, HarnessError> {
    let manifest: DatasetManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST))?)?;
    if manifest.version != DATASET_VERSION {
        return Err(HarnessError::Version {
            found: manifest.version,
            expected: DATASET_VERSION,
        });
    }
    let mut episodes = Vec::with_capacity(manifest.episodes.len());
    for entry in &manifest.episodes {
        let ep = EpisodeRecord::from_bytes(&std::fs::read(dir.join(&entry.file))?)?;
        if ep.terrain != entry.terrain
            || ep.split != entry.split
            || ep.observations.len() != entry.observations
            || ep.references.len() != entry.references
        {
            return Err(HarnessError::Manifest(format!(
                "{} does not match its manifest entry",
                entry.file
            )));
        }
        if ep
            .observations
            .iter()
            .any(|o| o.history.len() != manifest.p || o.actions.len() != manifest.q)
        {
            return Err(HarnessError::Manifest(format!(
                "{} has observations of the wrong shape",
                entry.file
            )));
        }
        episodes.push(ep);
    }
    let ds = Dataset { manifest, episodes };
    if ds.observations(Split::Train) != ds.manifest.train_observations
        || ds.observations(Split::Val) != ds.manifest.val_observations
    {
        return Err(HarnessError::Manifest("observation totals disagree".into()));
    }
    Ok(ds)
}

/// Population statistics of the compressed training references.
pub fn fit_stats(dataset: &Dataset, params: &PolicyParams) -> Result<NormStats, HarnessError> {
    let (w, b) = params.compressor();
    let feats = dataset
        .episodes
        .iter()
        .filter(|e| e.split == Split::Train)
        .flat_map(|e| &e.references)
        .map(|r| compress(&r.features, &w, b))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(fit_reference_stats(&feats)?)
}

/// Training samples of one split with refined or unrefined heave targets.
pub fn build_samples(
    dataset: &Dataset,
    split: Split,
    refined: bool,
    p: usize,
) -> Result<Vec<TrainingSample>, HarnessError> {
    let mut out = Vec::new();
    for ep in dataset.episodes.iter().filter(|e| e.split == split) {
        for o in &ep.observations {
            if o.history.len() != p {
                return Err(HarnessError::Manifest(format!(
                    "history of {} frames, policy expects {p}",
                    o.history.len()
                )));
            }
            let r = &ep.references[o.reference];
            let mut frames = vec![r.features.clone()];
            let mut goals = vec![r.goal];
            for &f in &o.history {
                frames.push(ep.frames[f].clone());
                goals.push(ep.goals[f]);
            }
            out.push(TrainingSample {
                input: PolicyInput { frames, goals },
                actions: if refined {
                    o.actions.clone()
                } else {
                    o.unrefined.clone()
                },
            });
        }
    }
    Ok(out)
}
