//! Multi-agent scenes and the windowing that turns them into forecasting samples.
//!
//! A [`Scene`] is a dense `T x M` grid of optional agent positions (time-major).
//! Absence is explicit; a present state is always finite. Each agent is present
//! over exactly one contiguous run of frames.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position of one agent at one frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
}

impl AgentState {
    pub const ORIGIN: AgentState = AgentState { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn offset(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    /// `self - other`, as a displacement.
    pub fn relative_to(&self, other: &AgentState) -> Self {
        Self::new(self.x - other.x, self.y - other.y)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &AgentState) -> f64 {
        self.relative_to(other).norm()
    }
}

/// One observation: agent `agent` at frame `frame` is at `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub frame: usize,
    pub agent: usize,
    pub x: f64,
    pub y: f64,
}

impl Record {
    pub fn new(frame: usize, agent: usize, x: f64, y: f64) -> Self {
        Self { frame, agent, x, y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    id: String,
    frame_interval: f64,
    n_frames: usize,
    n_agents: usize,
    cells: Vec<Option<AgentState>>,
    /// Inclusive `(first, last)` frame of presence per agent.
    spans: Vec<(usize, usize)>,
}

impl Scene {
    /// Build from a time-major grid: `grid[frame][agent]`.
    pub fn from_grid(id: impl Into<String>, frame_interval: f64, grid: Vec<Vec<Option<AgentState>>>) -> Result<Self> {
        let n_frames = grid.len();
        let n_agents = grid.first().map_or(0, Vec::len);
        for row in &grid {
            if row.len() != n_agents {
                return Err(Error::DimensionMismatch {
                    context: "scene grid row",
                    expected: n_agents,
                    actual: row.len(),
                });
            }
        }
        let cells = grid.into_iter().flatten().collect();
        Self::new(id, frame_interval, n_frames, n_agents, cells)
    }

    pub fn new(
        id: impl Into<String>,
        frame_interval: f64,
        n_frames: usize,
        n_agents: usize,
        cells: Vec<Option<AgentState>>,
    ) -> Result<Self> {
        if !(frame_interval.is_finite() && frame_interval > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "frame interval must be positive, got {frame_interval}"
            )));
        }
        if n_frames < 2 {
            return Err(Error::TooFewFrames(n_frames));
        }
        if n_agents < 2 {
            return Err(Error::TooFewAgents(n_agents));
        }
        if cells.len() != n_frames * n_agents {
            return Err(Error::DimensionMismatch {
                context: "scene cells",
                expected: n_frames * n_agents,
                actual: cells.len(),
            });
        }
        let mut spans = Vec::with_capacity(n_agents);
        for agent in 0..n_agents {
            let mut first = None;
            let mut last = None;
            for frame in 0..n_frames {
                if let Some(s) = cells[frame * n_agents + agent] {
                    if !s.is_finite() {
                        return Err(Error::NonFiniteCoordinate { frame, agent });
                    }
                    if let Some(l) = last {
                        if l + 1 != frame {
                            return Err(Error::NonContiguousPresence { agent, frame: l + 1 });
                        }
                    }
                    first.get_or_insert(frame);
                    last = Some(frame);
                }
            }
            match (first, last) {
                (Some(f), Some(l)) => spans.push((f, l)),
                _ => return Err(Error::AgentWithoutObservations(agent)),
            }
        }
        Ok(Self {
            id: id.into(),
            frame_interval,
            n_frames,
            n_agents,
            cells,
            spans,
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Dataset label: the part of the id before the first `/`.
    pub fn dataset(&self) -> &str {
        self.id.split('/').next().unwrap_or("")
    }

    pub fn frame_interval(&self) -> f64 {
        self.frame_interval
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn state(&self, frame: usize, agent: usize) -> Option<AgentState> {
        if frame >= self.n_frames || agent >= self.n_agents {
            return None;
        }
        self.cells[frame * self.n_agents + agent]
    }

    /// Inclusive frame range over which `agent` is present.
    pub fn presence(&self, agent: usize) -> (usize, usize) {
        self.spans[agent]
    }

    /// Whether `agent` is present at every frame in `first..first + len`.
    pub fn present_throughout(&self, agent: usize, first: usize, len: usize) -> bool {
        let (a, b) = self.spans[agent];
        len > 0 && a <= first && first + len - 1 <= b
    }

    /// Present states in frame-major, agent-ascending order.
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = Vec::new();
        for frame in 0..self.n_frames {
            for agent in 0..self.n_agents {
                if let Some(s) = self.state(frame, agent) {
                    out.push(Record::new(frame, agent, s.x, s.y));
                }
            }
        }
        out
    }

    /// All positions of `agent` over `first..first + len`; `None` if any is absent.
    pub fn track(&self, agent: usize, first: usize, len: usize) -> Option<Vec<AgentState>> {
        (first..first + len).map(|f| self.state(f, agent)).collect()
    }
}

/// Build a scene whose time grid spans the minimum to maximum record frame.
///
/// Agent indices are taken as given; `M` is one past the largest index.
pub fn build_scene(records: &[Record], frame_interval: f64) -> Result<Scene> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let min_frame = records.iter().map(|r| r.frame).min().unwrap_or(0);
    let max_frame = records.iter().map(|r| r.frame).max().unwrap_or(0);
    let n_agents = records.iter().map(|r| r.agent).max().unwrap_or(0) + 1;
    let n_frames = max_frame - min_frame + 1;

    let mut seen: HashMap<(usize, usize), usize> = HashMap::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if let Some(&j) = seen.get(&(r.frame, r.agent)) {
            let prev = records[j];
            return Err(Error::DuplicateRecord {
                frame: r.frame,
                agent: r.agent,
                x1: prev.x,
                y1: prev.y,
                x2: r.x,
                y2: r.y,
            });
        }
        if !(r.x.is_finite() && r.y.is_finite()) {
            return Err(Error::NonFiniteCoordinate {
                frame: r.frame,
                agent: r.agent,
            });
        }
        seen.insert((r.frame, r.agent), i);
    }
    if n_agents < 2 {
        return Err(Error::TooFewAgents(n_agents));
    }

    let mut cells = vec![None; n_frames * n_agents];
    for r in records {
        cells[(r.frame - min_frame) * n_agents + r.agent] = Some(AgentState::new(r.x, r.y));
    }
    Scene::new("", frame_interval, n_frames, n_agents, cells)
}

/// One forecasting instance: observe `obs_len` frames of the primary agent
/// starting at `start_frame`, then predict the following `pred_len` frames.
#[derive(Debug, Clone)]
pub struct Sample {
    scene: Arc<Scene>,
    primary: usize,
    obs_len: usize,
    pred_len: usize,
    start_frame: usize,
}

impl Sample {
    pub fn new(scene: Arc<Scene>, primary: usize, obs_len: usize, pred_len: usize, start_frame: usize) -> Result<Self> {
        if obs_len == 0 || pred_len == 0 {
            return Err(Error::InvalidSample(format!(
                "obs_len and pred_len must be at least 1 (got {obs_len}, {pred_len})"
            )));
        }
        if primary >= scene.n_agents() {
            return Err(Error::InvalidSample(format!(
                "primary agent {primary} out of range for {} agents",
                scene.n_agents()
            )));
        }
        if start_frame + obs_len + pred_len > scene.n_frames() {
            return Err(Error::InvalidSample(format!(
                "window {start_frame}..{} exceeds {} frames",
                start_frame + obs_len + pred_len,
                scene.n_frames()
            )));
        }
        if !scene.present_throughout(primary, start_frame, obs_len + pred_len) {
            return Err(Error::InvalidSample(format!(
                "primary agent {primary} not present throughout window starting at {start_frame}"
            )));
        }
        Ok(Self {
            scene,
            primary,
            obs_len,
            pred_len,
            start_frame,
        })
    }

    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn primary(&self) -> usize {
        self.primary
    }

    pub fn obs_len(&self) -> usize {
        self.obs_len
    }

    pub fn pred_len(&self) -> usize {
        self.pred_len
    }

    pub fn start_frame(&self) -> usize {
        self.start_frame
    }

    pub fn window_len(&self) -> usize {
        self.obs_len + self.pred_len
    }

    /// Scene frame of the last observation (time `t`).
    pub fn current_frame(&self) -> usize {
        self.start_frame + self.obs_len - 1
    }

    /// Primary agent's position at window offset `offset`.
    pub fn primary_at(&self, offset: usize) -> AgentState {
        assert!(offset < self.window_len(), "offset {offset} outside window");
        self.scene
            .state(self.start_frame + offset, self.primary)
            .expect("primary agent present throughout its window")
    }

    /// Last observed position of the primary agent; the egocentric origin.
    pub fn anchor(&self) -> AgentState {
        self.primary_at(self.obs_len - 1)
    }

    pub fn observed(&self) -> Vec<AgentState> {
        (0..self.obs_len).map(|k| self.primary_at(k)).collect()
    }

    pub fn future(&self) -> Vec<AgentState> {
        (self.obs_len..self.window_len()).map(|k| self.primary_at(k)).collect()
    }

    /// Other agents present at window offset `offset`, ascending by index.
    pub fn neighbors_at(&self, offset: usize) -> Vec<(usize, AgentState)> {
        assert!(offset < self.window_len(), "offset {offset} outside window");
        let frame = self.start_frame + offset;
        (0..self.scene.n_agents())
            .filter(|&j| j != self.primary)
            .filter_map(|j| self.scene.state(frame, j).map(|s| (j, s)))
            .collect()
    }

    /// Ground-truth positions of every other agent over the prediction window.
    /// Entry `[j][k]` is neighbor `j` (in ascending index order) at future step `k`.
    pub fn neighbor_futures(&self) -> Vec<Vec<Option<AgentState>>> {
        (0..self.scene.n_agents())
            .filter(|&j| j != self.primary)
            .map(|j| {
                (self.obs_len..self.window_len())
                    .map(|k| self.scene.state(self.start_frame + k, j))
                    .collect()
            })
            .collect()
    }
}

/// One sample per (window start, agent) with the agent present throughout.
/// Ordering is frame-major, then agent-ascending.
pub fn slice_samples(scene: &Arc<Scene>, obs_len: usize, pred_len: usize, stride: usize) -> Result<Vec<Sample>> {
    if stride == 0 {
        return Err(Error::InvalidConfig("window stride must be at least 1".into()));
    }
    if obs_len == 0 || pred_len == 0 {
        return Err(Error::InvalidConfig("obs_len and pred_len must be at least 1".into()));
    }
    let window = obs_len + pred_len;
    if window > scene.n_frames() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for start in (0..=scene.n_frames() - window).step_by(stride) {
        for agent in 0..scene.n_agents() {
            if scene.present_throughout(agent, start, window) {
                out.push(Sample {
                    scene: Arc::clone(scene),
                    primary: agent,
                    obs_len,
                    pred_len,
                    start_frame: start,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_scene(n_frames: usize, n_agents: usize) -> Arc<Scene> {
        let grid = (0..n_frames)
            .map(|t| {
                (0..n_agents)
                    .map(|a| Some(AgentState::new(t as f64, a as f64)))
                    .collect()
            })
            .collect();
        Arc::new(Scene::from_grid("test", 0.4, grid).unwrap())
    }

    #[test]
    fn single_agent_is_rejected() {
        let recs = [Record::new(0, 0, 0.0, 0.0), Record::new(1, 0, 1.0, 0.0)];
        assert!(matches!(build_scene(&recs, 0.4), Err(Error::TooFewAgents(1))));
    }

    #[test]
    fn minimal_valid_scene() {
        let recs = [
            Record::new(0, 0, 0.0, 0.0),
            Record::new(0, 1, 5.0, 5.0),
            Record::new(1, 0, 1.0, 0.0),
            Record::new(1, 1, 5.0, 4.0),
        ];
        let s = build_scene(&recs, 0.4).unwrap();
        assert_eq!((s.n_frames(), s.n_agents()), (2, 2));
        for f in 0..2 {
            for a in 0..2 {
                assert!(s.state(f, a).is_some());
            }
        }
        assert_eq!(s.state(1, 1), Some(AgentState::new(5.0, 4.0)));
    }

    #[test]
    fn gapped_presence_is_rejected() {
        let recs = [
            Record::new(0, 0, 0.0, 0.0),
            Record::new(1, 0, 0.0, 0.0),
            Record::new(2, 0, 0.0, 0.0),
            Record::new(0, 1, 1.0, 0.0),
            Record::new(2, 1, 1.0, 0.0),
        ];
        assert!(matches!(
            build_scene(&recs, 0.4),
            Err(Error::NonContiguousPresence { agent: 1, frame: 1 })
        ));
    }

    #[test]
    fn duplicate_record_names_both() {
        let recs = [
            Record::new(0, 0, 0.0, 0.0),
            Record::new(0, 1, 1.0, 0.0),
            Record::new(0, 0, 2.0, 3.0),
        ];
        match build_scene(&recs, 0.4) {
            Err(Error::DuplicateRecord {
                frame: 0,
                agent: 0,
                x1,
                x2,
                ..
            }) => assert_eq!((x1, x2), (0.0, 2.0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_record_is_located() {
        let recs = [Record::new(0, 0, 0.0, 0.0), Record::new(3, 1, f64::NAN, 0.0)];
        assert!(matches!(
            build_scene(&recs, 0.4),
            Err(Error::NonFiniteCoordinate { frame: 3, agent: 1 })
        ));
    }

    #[test]
    fn window_counts() {
        assert_eq!(slice_samples(&full_scene(10, 2), 4, 4, 1).unwrap().len(), 6);
        assert_eq!(slice_samples(&full_scene(8, 2), 4, 4, 1).unwrap().len(), 2);
        assert_eq!(slice_samples(&full_scene(10, 2), 4, 4, 2).unwrap().len(), 4);
        assert!(slice_samples(&full_scene(6, 2), 4, 4, 1).unwrap().is_empty());
        assert!(slice_samples(&full_scene(6, 2), 4, 4, 0).is_err());
    }

    #[test]
    fn partial_agent_yields_no_samples() {
        let grid = (0..10)
            .map(|t| {
                vec![
                    Some(AgentState::new(t as f64, 0.0)),
                    (t <= 5).then(|| AgentState::new(t as f64, 1.0)),
                ]
            })
            .collect();
        let scene = Arc::new(Scene::from_grid("p", 0.4, grid).unwrap());
        let samples = slice_samples(&scene, 4, 4, 1).unwrap();
        assert_eq!(samples.len(), 3);
        assert!(samples.iter().all(|s| s.primary() == 0));
    }

    #[test]
    fn ordering_is_frame_major() {
        let samples = slice_samples(&full_scene(10, 2), 4, 4, 1).unwrap();
        let keys: Vec<_> = samples.iter().map(|s| (s.start_frame(), s.primary())).collect();
        assert_eq!(keys, vec![(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)]);
    }

    #[test]
    fn neighbors() {
        let s = &slice_samples(&full_scene(8, 5), 4, 4, 1).unwrap()[0];
        let n = s.neighbors_at(3);
        assert_eq!(n.len(), 4);
        assert_eq!(n.iter().map(|p| p.0).collect::<Vec<_>>(), vec![1, 2, 3, 4]);

        let grid = (0..8)
            .map(|t| {
                vec![
                    Some(AgentState::new(t as f64, 0.0)),
                    (t <= 2).then(|| AgentState::new(t as f64, 1.0)),
                ]
            })
            .collect();
        let scene = Arc::new(Scene::from_grid("p", 0.4, grid).unwrap());
        let s = Sample::new(scene, 0, 4, 4, 0).unwrap();
        assert_eq!(s.neighbors_at(1), vec![(1, AgentState::new(1.0, 1.0))]);
        assert!(s.neighbors_at(3).is_empty());
    }

    #[test]
    fn sample_validation() {
        let scene = full_scene(8, 2);
        assert!(Sample::new(scene.clone(), 0, 4, 4, 0).is_ok());
        assert!(Sample::new(scene.clone(), 0, 4, 4, 1).is_err());
        assert!(Sample::new(scene.clone(), 2, 4, 4, 0).is_err());
        assert!(Sample::new(scene, 0, 0, 4, 0).is_err());
    }
}
