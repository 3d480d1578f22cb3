//! Planar reaching and pushing with a kinematic point effector.
//!
//! The workspace is the unit square. The effector visits the trajectory's
//! samples in order. The cube is modelled as a round puck whose radius is the
//! cube's half-extent and it only moves when pushed (see [`push_step`]).
//! Pushes run along +x: under per-dimension force scaling the final stroke of
//! a digit-2 trajectory stays horizontal, so the stroke line carries the
//! effector through the pre-push point and straight into the cube.

mod contact;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cvae::CvaeModel;
use crate::dataset::CsvStamp;
use crate::dmp::Trajectory;
use crate::error::{Error, Result};
use crate::generator::{finetune, generate, FinetuneConfig, TaskSpec};

pub use contact::{push_step, segment_distance};

pub const CONTACT_RADIUS: f64 = 0.03;
pub const CUBE_HALF_EXTENT: f64 = 0.025;
pub const HOME: [f64; 2] = [0.1, 0.9];
/// Cubes and goals are drawn from `[MARGIN, 1 - MARGIN]^2`.
pub const MARGIN: f64 = 0.2;
pub const MAX_RESAMPLES: usize = 100;
pub const REACH_TASK: u32 = 1;
pub const PUSH_TASK: u32 = 2;

const MIN_PUSH: f64 = 0.1;
/// Free run along the stroke before the pre-push point, so the rounded
/// corner of the stroke is behind the effector when it reaches the cube.
const RUN_UP: f64 = 0.1;
/// Height of the stroke line below home. A flatter digit 2 sweeps its
/// diagonal through the cube before the push starts.
const MIN_DROP: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimTask {
    Reach,
    Push,
}

impl std::str::FromStr for SimTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reach" => Ok(SimTask::Reach),
            "push" => Ok(SimTask::Push),
            _ => Err(Error::Config(format!("unknown simulator task {s:?}; expected reach or push"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: Vec<f64>,
    pub half_extent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub task: SimTask,
    pub bounds_min: Vec<f64>,
    pub bounds_max: Vec<f64>,
    pub cube: Cube,
    /// For reaching this is the cube centre.
    pub goal_marker: Vec<f64>,
    pub contact_radius: f64,
    pub rng_seed: u64,
}

impl Workspace {
    pub fn new(task: SimTask, cube: Vec<f64>, goal_marker: Vec<f64>, seed: u64) -> Result<Self> {
        let ws = Self {
            task,
            bounds_min: vec![0.0, 0.0],
            bounds_max: vec![1.0, 1.0],
            cube: Cube {
                center: cube,
                half_extent: CUBE_HALF_EXTENT,
            },
            goal_marker,
            contact_radius: CONTACT_RADIUS,
            rng_seed: seed,
        };
        if !(ws.inside(&ws.cube.center) && ws.inside(&ws.goal_marker)) {
            return Err(Error::Config("cube and goal marker must lie inside the workspace".into()));
        }
        Ok(ws)
    }

    pub fn inside(&self, p: &[f64]) -> bool {
        p.len() == 2 && (0..2).all(|k| p[k] >= self.bounds_min[k] && p[k] <= self.bounds_max[k])
    }

    fn clamp(&self, p: &[f64]) -> Vec<f64> {
        (0..2).map(|k| p[k].clamp(self.bounds_min[k], self.bounds_max[k])).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub final_effector: Vec<f64>,
    pub final_cube: Vec<f64>,
    /// Closest effector approach to the cube centre.
    pub min_distance: f64,
    /// Final cube-to-goal distance.
    pub goal_error: f64,
    pub effector_trace: Vec<Vec<f64>>,
    pub cube_trace: Vec<Vec<f64>>,
    /// Some trajectory samples lay outside the workspace and were clipped.
    pub clipped: bool,
    /// The cube was pushed into a wall and clamped.
    pub hit_wall: bool,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Pre-push point behind the cube on the cube-to-goal line.
pub fn pre_push_point(ws: &Workspace) -> Vec<f64> {
    let (c, g) = (&ws.cube.center, &ws.goal_marker);
    let len = dist(c, g);
    let offset = ws.cube.half_extent + ws.contact_radius;
    if len == 0.0 {
        return c.clone();
    }
    (0..2).map(|k| c[k] - offset * (g[k] - c[k]) / len).collect()
}

/// Where the effector must stop so the pushed cube rests on the goal.
pub fn push_target(ws: &Workspace) -> Vec<f64> {
    let (c, g) = (&ws.cube.center, &ws.goal_marker);
    let len = dist(c, g);
    if len == 0.0 {
        return g.clone();
    }
    (0..2).map(|k| g[k] - ws.cube.half_extent * (g[k] - c[k]) / len).collect()
}

fn sample_point(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..2).map(|_| rng.gen_range(MARGIN..=1.0 - MARGIN)).collect()
}

pub fn make_reach_episode(seed: u64) -> Result<(Workspace, TaskSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cube = sample_point(&mut rng);
    let ws = Workspace::new(SimTask::Reach, cube.clone(), cube.clone(), seed)?;
    Ok((ws, TaskSpec::new(REACH_TASK, HOME.to_vec(), cube)))
}

pub fn make_push_episode(seed: u64) -> Result<(Workspace, TaskSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_RESAMPLES {
        let cube = sample_point(&mut rng);
        let goal_x = rng.gen_range(MARGIN..=1.0 - MARGIN);
        let ws = Workspace::new(SimTask::Push, cube.clone(), vec![goal_x, cube[1]], seed)?;
        let via = pre_push_point(&ws);
        if goal_x - cube[0] < MIN_PUSH
            || via[0] - HOME[0] < RUN_UP
            || HOME[1] - cube[1] < MIN_DROP
            || !ws.inside(&via)
        {
            continue;
        }
        let spec = TaskSpec::new(PUSH_TASK, HOME.to_vec(), push_target(&ws)).with_via_points(vec![via]);
        return Ok((ws, spec));
    }
    Err(Error::Data(format!(
        "no feasible push geometry after {MAX_RESAMPLES} samples (seed {seed})"
    )))
}

/// Moves the effector through `traj` and applies contact at every step.
pub fn run_episode(ws: &Workspace, traj: &Trajectory) -> EpisodeResult {
    let mut cube = ws.cube.center.clone();
    let mut clipped = false;
    let mut hit_wall = false;
    let mut effector_trace = Vec::with_capacity(traj.len());
    let mut cube_trace = Vec::with_capacity(traj.len());
    let mut min_distance = f64::INFINITY;
    let mut reached = false;
    let mut prev: Option<Vec<f64>> = None;
    for p in traj.points() {
        let e = ws.clamp(p);
        clipped |= e != p;
        if let Some(from) = &prev {
            if let Some(next) = push_step(from, &e, &cube, ws.cube.half_extent) {
                let held = ws.clamp(&next);
                hit_wall |= held != next;
                cube = held;
            }
        }
        let d = dist(&e, &cube);
        min_distance = min_distance.min(d);
        reached |= d <= ws.contact_radius;
        effector_trace.push(e.clone());
        cube_trace.push(cube.clone());
        prev = Some(e);
    }
    let goal_error = dist(&cube, &ws.goal_marker);
    let success = match ws.task {
        SimTask::Reach => reached,
        SimTask::Push => goal_error <= ws.contact_radius,
    };
    EpisodeResult {
        success,
        final_effector: effector_trace.last().cloned().unwrap_or_default(),
        final_cube: cube,
        min_distance,
        goal_error,
        effector_trace,
        cube_trace,
        clipped,
        hit_wall,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub workspace: Workspace,
    pub spec: TaskSpec,
    pub result: Option<EpisodeResult>,
    /// Set when the episode could not be generated; counted as a failure.
    pub error: Option<String>,
    pub via_error: Option<f64>,
}

impl EpisodeSummary {
    pub fn success(&self) -> bool {
        self.result.as_ref().is_some_and(|r| r.success)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub task: SimTask,
    pub episodes: Vec<EpisodeSummary>,
    /// `None` for zero episodes.
    pub success_rate: Option<f64>,
    pub mean_goal_error: Option<f64>,
    pub mean_min_distance: Option<f64>,
}

impl SimReport {
    pub fn from_episodes(task: SimTask, episodes: Vec<EpisodeSummary>) -> Self {
        let n = episodes.len();
        let done: Vec<&EpisodeResult> = episodes.iter().filter_map(|e| e.result.as_ref()).collect();
        let mean = |f: fn(&EpisodeResult) -> f64| (!done.is_empty()).then(|| done.iter().map(|r| f(r)).sum::<f64>() / done.len() as f64);
        Self {
            task,
            success_rate: (n > 0).then(|| episodes.iter().filter(|e| e.success()).count() as f64 / n as f64),
            mean_goal_error: mean(|r| r.goal_error),
            mean_min_distance: mean(|r| r.min_distance),
            episodes,
        }
    }
}

fn stationary(at: &[f64], model: &CvaeModel) -> Result<Trajectory> {
    Trajectory::from_flat(at.repeat(model.dmp.n_steps), at.len(), model.dmp.dt)
}

/// One seeded episode: build, generate, fine-tune through the pre-push point
/// for pushes, then simulate.
pub fn run_trial(model: &CvaeModel, task: SimTask, seed: u64, fcfg: &FinetuneConfig) -> EpisodeSummary {
    let built = match task {
        SimTask::Reach => make_reach_episode(seed),
        SimTask::Push => make_push_episode(seed),
    };
    let (workspace, spec) = match built {
        Ok(b) => b,
        Err(e) => {
            return EpisodeSummary {
                seed,
                workspace: Workspace::new(task, HOME.to_vec(), HOME.to_vec(), seed).expect("home is inside"),
                spec: TaskSpec::new(0, HOME.to_vec(), HOME.to_vec()),
                result: None,
                error: Some(e.to_string()),
                via_error: None,
            }
        }
    };
    let outcome = (|| -> Result<(Trajectory, Option<f64>)> {
        if spec.start == spec.goal {
            return Ok((stationary(&spec.start, model)?, None));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = generate(model, &spec, &mut rng)?;
        if !spec.via_points.is_empty() {
            g = finetune(model, &g, fcfg)?;
        }
        let via = g.diagnostics.via_errors.first().copied();
        Ok((g.trajectory, via))
    })();
    match outcome {
        Ok((traj, via_error)) => EpisodeSummary {
            seed,
            result: Some(run_episode(&workspace, &traj)),
            workspace,
            spec,
            error: None,
            via_error,
        },
        Err(e) => EpisodeSummary {
            seed,
            workspace,
            spec,
            result: None,
            error: Some(e.to_string()),
            via_error: None,
        },
    }
}

/// Runs `episodes` trials with seeds `base_seed..base_seed + episodes`.
pub fn evaluate(model: &CvaeModel, task: SimTask, episodes: usize, base_seed: u64, fcfg: &FinetuneConfig) -> SimReport {
    let runs = (0..episodes as u64).map(|i| run_trial(model, task, base_seed + i, fcfg)).collect();
    SimReport::from_episodes(task, runs)
}

/// Trace CSV: `step,effector_x,effector_y,cube_x,cube_y`.
pub fn write_trace_csv(result: &EpisodeResult, path: &Path, stamp: Option<&CsvStamp>) -> Result<()> {
    let mut out = String::new();
    if let Some(s) = stamp {
        out.push_str(&format!("# seed={} config_hash={}\n", s.seed, s.config_hash));
    }
    out.push_str("step,effector_x,effector_y,cube_x,cube_y\n");
    for (i, (e, c)) in result.effector_trace.iter().zip(&result.cube_trace).enumerate() {
        out.push_str(&format!("{i},{:?},{:?},{:?},{:?}\n", e[0], e[1], c[0], c[1]));
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[[f64; 2]]) -> Trajectory {
        let v: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
        Trajectory::from_points(&v, 0.01).unwrap()
    }

    #[test]
    fn episodes_are_reproducible_and_inside() {
        let mut cubes = Vec::new();
        for seed in 0..20 {
            let (a, sa) = make_reach_episode(seed).unwrap();
            let (b, sb) = make_reach_episode(seed).unwrap();
            assert_eq!((&a, &sa), (&b, &sb));
            assert!(a.inside(&a.cube.center));
            assert_eq!(sa.task_id, REACH_TASK);
            assert_eq!(sa.goal, a.cube.center);
            cubes.push(a.cube.center);
            assert_eq!(make_push_episode(seed).unwrap(), make_push_episode(seed).unwrap());
        }
        cubes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cubes.dedup();
        assert_eq!(cubes.len(), 20);
    }

    #[test]
    fn pre_push_point_is_behind_the_cube() {
        for seed in 0..20 {
            let (ws, spec) = make_push_episode(seed).unwrap();
            let v = &spec.via_points[0];
            let (c, g) = (&ws.cube.center, &ws.goal_marker);
            let cross = (c[0] - v[0]) * (g[1] - v[1]) - (c[1] - v[1]) * (g[0] - v[0]);
            assert!(cross.abs() < 1e-12);
            assert!((dist(v, c) - (CUBE_HALF_EXTENT + CONTACT_RADIUS)).abs() < 1e-12);
            assert!(dist(v, g) > dist(c, g));
        }
    }

    #[test]
    fn degenerate_episodes_succeed_at_step_zero() {
        let ws = Workspace::new(SimTask::Reach, HOME.to_vec(), HOME.to_vec(), 0).unwrap();
        let r = run_episode(&ws, &line(&[HOME, [0.5, 0.5]]));
        assert!(r.success && r.min_distance == 0.0);
        let ws = Workspace::new(SimTask::Push, vec![0.5, 0.5], vec![0.5, 0.5], 0).unwrap();
        let r = run_episode(&ws, &line(&[[0.1, 0.1], [0.1, 0.2]]));
        assert!(r.success && r.final_cube == vec![0.5, 0.5]);
    }

    #[test]
    fn reaching_through_the_cube() {
        let ws = Workspace::new(SimTask::Reach, vec![0.5, 0.5], vec![0.5, 0.5], 0).unwrap();
        let r = run_episode(&ws, &line(&[[0.2, 0.2], [0.5, 0.5], [0.8, 0.8]]));
        assert!(r.success);
        let r = run_episode(&ws, &line(&[[0.2, 0.8], [0.3, 0.9]]));
        assert!(!r.success && r.min_distance > CONTACT_RADIUS);
    }

    #[test]
    fn missing_the_shell_leaves_the_cube() {
        let ws = Workspace::new(SimTask::Push, vec![0.5, 0.5], vec![0.7, 0.5], 0).unwrap();
        let r = run_episode(&ws, &line(&[[0.1, 0.6], [0.9, 0.6]]));
        assert!(r.cube_trace.iter().all(|c| c == &vec![0.5, 0.5]));
        assert!(!r.success);
    }

    #[test]
    fn hand_traced_l_push() {
        // Down to the pre-push point, then right to the push target.
        let ws = Workspace::new(SimTask::Push, vec![0.4, 0.3], vec![0.6, 0.3], 0).unwrap();
        let via = pre_push_point(&ws);
        assert_eq!(via, vec![0.4 - 0.055, 0.3]);
        let traj = line(&[[0.345, 0.7], [0.345, 0.5], via.clone().try_into().unwrap(), [0.5, 0.3], [0.575, 0.3]]);
        let r = run_episode(&ws, &traj);
        // Step 3 pushes the cube to 0.5 + 0.025; step 4 to 0.575 + 0.025.
        assert_eq!(r.cube_trace[2], vec![0.4, 0.3]);
        assert!((r.cube_trace[3][0] - 0.525).abs() < 1e-12);
        assert!((r.final_cube[0] - 0.6).abs() < 1e-12 && r.final_cube[1] == 0.3);
        assert!(r.success);
        for w in r.cube_trace.windows(2).zip(r.effector_trace.windows(2)) {
            assert!(dist(&w.0[0], &w.0[1]) <= dist(&w.1[0], &w.1[1]) + 1e-15);
        }
    }

    #[test]
    fn walls_clamp_the_cube() {
        let ws = Workspace::new(SimTask::Push, vec![0.95, 0.5], vec![0.99, 0.5], 0).unwrap();
        let r = run_episode(&ws, &line(&[[0.8, 0.5], [1.2, 0.5]]));
        assert!(r.clipped && r.hit_wall);
        assert!(r.final_cube[0] <= 1.0);
    }

    #[test]
    fn empty_evaluation_has_no_rate() {
        let r = SimReport::from_episodes(SimTask::Reach, Vec::new());
        assert_eq!(r.success_rate, None);
    }
}
