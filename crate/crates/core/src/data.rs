//! Trajectory storage, the binary dataset container, triplet sampling and the
//! rollout replay buffer.

use std::collections::{BTreeMap, VecDeque};
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{self, Action, EnvConfig, Observation};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"PRDS";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Expert,
    Rollout,
    NoisyDemo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub frames: Vec<Observation>,
    /// `None` for action-free (video-only) data.
    pub actions: Option<Vec<Action>>,
    /// Evaluation metadata: whether the success oracle fired.
    pub success: bool,
    pub source: Source,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Dimension(format!(
                "trajectory {} has no frames",
                self.id
            )));
        }
        let dim = self.frames[0].len();
        if let Some(bad) = self.frames.iter().find(|f| f.len() != dim) {
            return Err(Error::Dimension(format!(
                "trajectory {} mixes frame lengths {dim} and {}",
                self.id,
                bad.len()
            )));
        }
        if let Some(actions) = &self.actions {
            if actions.len() + 1 != self.frames.len() {
                return Err(Error::Dimension(format!(
                    "trajectory {} has {} frames but {} actions",
                    self.id,
                    self.frames.len(),
                    actions.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.frames.first().map_or(0, Observation::len)
    }
}

impl AsRef<Trajectory> for Trajectory {
    fn as_ref(&self) -> &Trajectory {
        self
    }
}

/// Immutable collection of trajectories sharing one observation size.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, metadata: BTreeMap<String, String>) -> Result<Self> {
        let dim = trajectories.first().map_or(0, Trajectory::obs_dim);
        for t in &trajectories {
            t.validate()?;
            if t.obs_dim() != dim {
                return Err(Error::Dimension(format!(
                    "trajectory {} has observation size {}, dataset uses {dim}",
                    t.id,
                    t.obs_dim()
                )));
            }
        }
        Ok(Self {
            trajectories,
            metadata,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::obs_dim)
    }

    pub fn success_count(&self) -> usize {
        self.trajectories.iter().filter(|t| t.success).count()
    }

    /// Splits off trajectories for which `keep` is false into a second set.
    pub fn partition(&self, keep: impl Fn(&Trajectory) -> bool) -> (Dataset, Dataset) {
        let (a, b): (Vec<_>, Vec<_>) = self.trajectories.iter().cloned().partition(|t| keep(t));
        (
            Dataset {
                trajectories: a,
                metadata: self.metadata.clone(),
            },
            Dataset {
                trajectories: b,
                metadata: self.metadata.clone(),
            },
        )
    }
}

/// Anything triplets can be drawn from.
pub trait TrajectorySource {
    fn count(&self) -> usize;
    fn trajectory(&self, index: usize) -> &Trajectory;
}

impl TrajectorySource for Dataset {
    fn count(&self) -> usize {
        self.trajectories.len()
    }

    fn trajectory(&self, index: usize) -> &Trajectory {
        &self.trajectories[index]
    }
}

impl TrajectorySource for [Trajectory] {
    fn count(&self) -> usize {
        self.len()
    }

    fn trajectory(&self, index: usize) -> &Trajectory {
        &self[index]
    }
}

/// Demonstration generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoOptions {
    pub count: usize,
    /// Random-action probability for demos selected as failed.
    pub p_noise: f64,
    /// Share of demos that are deliberately failed.
    pub failed_fraction: f64,
    /// Failed demos end once this fraction of the initial task distance is
    /// covered.
    pub early_stop_fraction: f64,
    /// Episode seed of the first demo; demo `k` uses `first_episode + k`.
    pub first_episode: u64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            count: 100,
            p_noise: 0.0,
            failed_fraction: 0.0,
            early_stop_fraction: 0.5,
            first_episode: 0,
        }
    }
}

impl DemoOptions {
    /// 50/50 success/failed split with noisy, early-stopped failures.
    pub fn noisy(count: usize) -> Self {
        Self {
            count,
            p_noise: 0.2,
            failed_fraction: 0.5,
            ..Self::default()
        }
    }

    fn is_failed(&self, k: usize) -> bool {
        let f = self.failed_fraction;
        ((k + 1) as f64 * f).floor() > (k as f64 * f).floor()
    }
}

/// Rolls out the scripted expert `count` times.
pub fn record_demonstrations(config: &EnvConfig, options: &DemoOptions) -> Result<Dataset> {
    if options.count == 0 {
        return Err(Error::InvalidConfig("demo count must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&options.p_noise)
        || !(0.0..=1.0).contains(&options.failed_fraction)
        || !(0.0..=1.0).contains(&options.early_stop_fraction)
    {
        return Err(Error::InvalidConfig(
            "p_noise, failed_fraction and early_stop_fraction must lie in [0, 1]".into(),
        ));
    }
    config.validate()?;
    let mut trajectories = Vec::with_capacity(options.count);
    for k in 0..options.count {
        let episode = options.first_episode + k as u64;
        let failed = options.is_failed(k);
        trajectories.push(record_one(config, episode, failed, options)?);
    }
    let mut metadata = BTreeMap::new();
    metadata.insert(
        "variant".into(),
        format!("{:?}", config.variant).to_lowercase(),
    );
    metadata.insert("env_seed".into(), config.seed.to_string());
    metadata.insert("horizon".into(), config.horizon.to_string());
    metadata.insert("count".into(), options.count.to_string());
    metadata.insert("p_noise".into(), options.p_noise.to_string());
    metadata.insert(
        "failed_fraction".into(),
        options.failed_fraction.to_string(),
    );
    metadata.insert(
        "early_stop_fraction".into(),
        options.early_stop_fraction.to_string(),
    );
    metadata.insert("first_episode".into(), options.first_episode.to_string());
    Dataset::new(trajectories, metadata)
}

fn record_one(
    config: &EnvConfig,
    episode: u64,
    failed: bool,
    options: &DemoOptions,
) -> Result<Trajectory> {
    let (mut state, obs) = env::reset(config, episode)?;
    let mut noise =
        ChaCha8Rng::seed_from_u64(config.seed ^ episode.wrapping_mul(0xD1B5_4A32_D192_ED03));
    let initial_distance = env::task_distance(&state, config);
    // Stop far enough out that a stopped demo can never register success.
    let stop_distance =
        ((1.0 - options.early_stop_fraction) * initial_distance).max(2.0 * config.goal_tolerance);
    let p_noise = if failed { options.p_noise } else { 0.0 };
    let mut frames = vec![obs];
    let mut actions = Vec::new();
    loop {
        // A stopped demonstrator ends the recording; at least one move is kept.
        if failed && !actions.is_empty() && env::task_distance(&state, config) <= stop_distance {
            break;
        }
        let action = env::scripted_expert_action(&state, config, p_noise, &mut noise);
        let out = env::step(&state, action, config)?;
        state = out.state;
        frames.push(out.observation);
        actions.push(action);
        if out.done {
            break;
        }
    }
    Ok(Trajectory {
        id: episode,
        frames,
        actions: Some(actions),
        success: env::is_success(&state, config),
        source: if failed {
            Source::NoisyDemo
        } else {
            Source::Expert
        },
    })
}

/// Frame indices into one trajectory, plus an optional distractor frame
/// drawn from a different trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub trajectory: usize,
    pub i: usize,
    /// Index into `negative_source` when the triplet is negative.
    pub j: usize,
    pub g: usize,
    pub is_negative: bool,
    pub negative_source: Option<usize>,
}

impl Triplet {
    pub fn frames<'a, S: TrajectorySource + ?Sized>(
        &self,
        source: &'a S,
    ) -> (&'a Observation, &'a Observation, &'a Observation) {
        let anchor = source.trajectory(self.trajectory);
        let middle = match self.negative_source {
            Some(other) => &source.trajectory(other).frames[self.j],
            None => &anchor.frames[self.j],
        };
        (&anchor.frames[self.i], middle, &anchor.frames[self.g])
    }
}

/// Frames `i < g` are at least this far apart so a strictly intermediate
/// frame exists.
const MIN_GAP: usize = 2;

fn eligible<S: TrajectorySource + ?Sized>(source: &S) -> Vec<usize> {
    (0..source.count())
        .filter(|&k| source.trajectory(k).len() > MIN_GAP)
        .collect()
}

fn sample_span<R: Rng + ?Sized>(len: usize, rng: &mut R, max_gap: Option<usize>) -> (usize, usize) {
    let max_gap = max_gap.unwrap_or(len).clamp(MIN_GAP, len - 1);
    loop {
        let i = rng.gen_range(0..len);
        let g = rng.gen_range(0..len);
        if g >= i + MIN_GAP && g - i <= max_gap {
            return (i, g);
        }
    }
}

/// Uniform over eligible trajectories, then uniform over `(i, g)` pairs with
/// `2 <= g - i <= max_gap`, then `j` uniform on `[i, g]`.
pub fn sample_positive_triplet<S: TrajectorySource + ?Sized, R: Rng + ?Sized>(
    source: &S,
    rng: &mut R,
    max_gap: Option<usize>,
) -> Result<Triplet> {
    let candidates = eligible(source);
    if candidates.is_empty() {
        return Err(Error::EmptyDataset(
            "no trajectory with at least 3 frames".into(),
        ));
    }
    let trajectory = candidates[rng.gen_range(0..candidates.len())];
    let len = source.trajectory(trajectory).len();
    let (i, g) = sample_span(len, rng, max_gap);
    let j = rng.gen_range(i..=g);
    Ok(Triplet {
        trajectory,
        i,
        j,
        g,
        is_negative: false,
        negative_source: None,
    })
}

/// As [`sample_positive_triplet`], but the middle frame comes from a
/// different trajectory.
pub fn sample_negative_triplet<S: TrajectorySource + ?Sized, R: Rng + ?Sized>(
    source: &S,
    rng: &mut R,
    max_gap: Option<usize>,
) -> Result<Triplet> {
    if source.count() < 2 {
        return Err(Error::EmptyDataset(
            "negative triplets need at least two trajectories".into(),
        ));
    }
    let mut t = sample_positive_triplet(source, rng, max_gap)?;
    let mut other = rng.gen_range(0..source.count() - 1);
    if other >= t.trajectory {
        other += 1;
    }
    t.j = rng.gen_range(0..source.trajectory(other).len());
    t.is_negative = true;
    t.negative_source = Some(other);
    Ok(t)
}

/// Draws `batch` triplets, making `round(batch * negative_fraction)` of them
/// negatives (placed last).
pub fn sample_triplet_batch<S: TrajectorySource + ?Sized, R: Rng + ?Sized>(
    source: &S,
    rng: &mut R,
    batch: usize,
    negative_fraction: f64,
    max_gap: Option<usize>,
) -> Result<Vec<Triplet>> {
    let negatives = if source.count() >= 2 {
        (batch as f64 * negative_fraction).round() as usize
    } else {
        0
    };
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch - negatives.min(batch) {
        out.push(sample_positive_triplet(source, rng, max_gap)?);
    }
    for _ in 0..negatives.min(batch) {
        out.push(sample_negative_triplet(source, rng, max_gap)?);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    version: u32,
    obs_dim: usize,
    trajectory_count: usize,
    metadata: BTreeMap<String, String>,
    trajectories: Vec<TrajectoryHeader>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryHeader {
    id: u64,
    frames: usize,
    has_actions: bool,
    success: bool,
    source: Source,
}

pub fn encode_dataset(dataset: &Dataset) -> Vec<u8> {
    let header = FileHeader {
        version: DATASET_VERSION,
        obs_dim: dataset.obs_dim(),
        trajectory_count: dataset.len(),
        metadata: dataset.metadata.clone(),
        trajectories: dataset
            .trajectories
            .iter()
            .map(|t| TrajectoryHeader {
                id: t.id,
                frames: t.frames.len(),
                has_actions: t.actions.is_some(),
                success: t.success,
                source: t.source,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serialization cannot fail");
    let mut out = Vec::with_capacity(8 + json.len());
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &dataset.trajectories {
        for frame in &t.frames {
            for v in frame.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(actions) = &t.actions {
            out.extend(actions.iter().map(|a| *a as u8));
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Malformed(format!("truncated while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != DATASET_MAGIC {
        return Err(Error::Malformed("bad magic, not a dataset file".into()));
    }
    let header_len = u32::from_le_bytes(cur.take(4, "header length")?.try_into().unwrap()) as usize;
    let header: FileHeader = serde_json::from_slice(cur.take(header_len, "header")?)
        .map_err(|e| Error::Malformed(format!("header: {e}")))?;
    if header.version != DATASET_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: DATASET_VERSION,
        });
    }
    if header.trajectory_count != header.trajectories.len() {
        return Err(Error::Malformed(format!(
            "header announces {} trajectories but lists {}",
            header.trajectory_count,
            header.trajectories.len()
        )));
    }
    if header.obs_dim == 0 && header.trajectory_count > 0 {
        return Err(Error::Dimension(
            "zero observation size with trajectories present".into(),
        ));
    }
    let mut trajectories = Vec::with_capacity(header.trajectory_count);
    for th in &header.trajectories {
        if th.frames == 0 {
            return Err(Error::Dimension(format!(
                "trajectory {} has no frames",
                th.id
            )));
        }
        let mut frames = Vec::with_capacity(th.frames);
        for _ in 0..th.frames {
            let raw = cur.take(4 * header.obs_dim, "frame payload")?;
            frames.push(Observation(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ));
        }
        let actions = if th.has_actions {
            let raw = cur.take(th.frames - 1, "action payload")?;
            Some(
                raw.iter()
                    .map(|&b| Action::from_index(b as usize))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|_| {
                        Error::Malformed(format!("bad action byte in trajectory {}", th.id))
                    })?,
            )
        } else {
            None
        };
        trajectories.push(Trajectory {
            id: th.id,
            frames,
            actions,
            success: th.success,
            source: th.source,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after payload",
            bytes.len() - cur.pos
        )));
    }
    Dataset::new(trajectories, header.metadata)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_dataset(dataset))
        .map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

/// Bounded FIFO of rollout episodes.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T = Trajectory> {
    capacity: usize,
    entries: VecDeque<T>,
    /// Cumulative transition counts, for uniform transition sampling.
    offsets: Vec<usize>,
}

impl<T: AsRef<Trajectory>> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
            offsets: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> &T {
        &self.entries[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut T {
        &mut self.entries[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.entries.iter()
    }

    /// Appends an episode, evicting the oldest when over capacity.
    pub fn push_rollout(&mut self, entry: T) -> Result<()> {
        let dim = entry.as_ref().obs_dim();
        if let Some(first) = self.entries.front() {
            if first.as_ref().obs_dim() != dim {
                return Err(Error::ShapeMismatch {
                    expected: first.as_ref().obs_dim(),
                    actual: dim,
                });
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
        self.offsets.clear();
        let mut total = 0;
        for e in &self.entries {
            total += e.as_ref().len().saturating_sub(1);
            self.offsets.push(total);
        }
        Ok(())
    }

    pub fn transition_count(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0)
    }

    /// Uniform over stored transitions: returns `(entry, t)` for the
    /// transition from frame `t` to `t + 1`.
    pub fn sample_transition<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(usize, usize)> {
        let total = self.transition_count();
        if total == 0 {
            return None;
        }
        let u = rng.gen_range(0..total);
        let entry = self.offsets.partition_point(|&end| end <= u);
        let start = if entry == 0 {
            0
        } else {
            self.offsets[entry - 1]
        };
        Some((entry, u - start))
    }
}

impl<T: AsRef<Trajectory>> TrajectorySource for ReplayBuffer<T> {
    fn count(&self) -> usize {
        self.entries.len()
    }

    fn trajectory(&self, index: usize) -> &Trajectory {
        self.entries[index].as_ref()
    }
}
