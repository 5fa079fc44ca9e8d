//! Scenario configuration and world generators: the antipodal circle (with
//! or without central obstacles), the orthogonal junction with its spawner,
//! and fully custom layouts.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::CommConfig;
use crate::factors::{FactorParams, RobotState};
use crate::planner::HorizonMode;
use crate::sdf::{Bounds, Polygon, SdfGrid};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid scenario file: {0}")]
    Parse(String),
    #[error("override `{0}` must look like key=value")]
    OverrideSyntax(String),
    #[error("override key `{key}`: {reason}")]
    OverrideKey { key: String, reason: String },
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("cannot serialize config: {0}")]
    Serialize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Circle,
    CircleWithObstacles,
    Junction,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotsConfig {
    /// Number of robots in circle scenarios.
    pub count: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Initial (circle) or cruising (junction) speed, m/s.
    pub initial_speed: f64,
}

impl Default for RobotsConfig {
    fn default() -> Self {
        Self {
            count: 10,
            radius_min: 2.0,
            radius_max: 3.0,
            initial_speed: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Number of planned states.
    pub k: usize,
    /// Lookahead of the last state, seconds. Derived from the scenario when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub internal_iterations: usize,
    pub interrobot_iterations: usize,
    pub damping: f64,
    /// With a stationary horizon, shrink the lookahead every tick so the
    /// horizon state keeps its original arrival time.
    pub countdown: bool,
    /// Smallest lookahead the countdown may reach, seconds.
    pub min_horizon: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            k: 10,
            horizon: None,
            internal_iterations: 50,
            interrobot_iterations: 10,
            damping: 0.4,
            countdown: true,
            min_horizon: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorsConfig {
    pub sigma_p: f64,
    pub sigma_d: f64,
    pub sigma_o: f64,
    pub sigma_r: f64,
    pub epsilon: f64,
}

impl Default for FactorsConfig {
    fn default() -> Self {
        Self {
            sigma_p: 1e-15,
            sigma_d: 1.0,
            sigma_o: 0.005,
            sigma_r: 0.005,
            epsilon: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommSection {
    pub radius: f64,
    pub gamma: f64,
}

impl Default for CommSection {
    fn default() -> Self {
        Self {
            radius: 50.0,
            gamma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircleConfig {
    pub radius: f64,
}

impl Default for CircleConfig {
    fn default() -> Self {
        Self { radius: 50.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JunctionConfig {
    pub channel_width: f64,
    /// Total spawn rate over all arms, robots/second.
    pub inflow_rate: f64,
    /// Entry arms in use: 2 (west, south) or 4 (all sides).
    pub arms: usize,
    /// Distance from the junction center to the end of each arm, meters.
    pub half_length: f64,
    /// Maximum lateral offset of a spawn from the lane center, meters.
    pub lateral_jitter: f64,
    /// Ticks excluded from flow measurement at the start of a run.
    pub warmup_ticks: u64,
}

impl Default for JunctionConfig {
    fn default() -> Self {
        Self {
            channel_width: 16.0,
            inflow_rate: 2.0,
            arms: 2,
            half_length: 50.0,
            lateral_jitter: 1.0,
            warmup_ticks: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdfConfig {
    pub cell: f64,
}

impl Default for SdfConfig {
    fn default() -> Self {
        Self { cell: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub vertices: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomRobot {
    pub start: [f64; 2],
    #[serde(default)]
    pub velocity: [f64; 2],
    pub goal: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub max_ticks: u64,
    /// Simulation timestep, seconds.
    pub dt: f64,
    /// Worker threads; 0 uses all available cores. Results do not depend on it.
    pub threads: usize,
    pub robots: RobotsConfig,
    pub planner: PlannerConfig,
    pub factors: FactorsConfig,
    pub comm: CommSection,
    pub circle: CircleConfig,
    pub junction: JunctionConfig,
    pub sdf: SdfConfig,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub obstacles: Vec<ObstacleConfig>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub custom_robots: Vec<CustomRobot>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Circle,
            seed: 0,
            max_ticks: 2000,
            dt: 0.1,
            threads: 0,
            robots: RobotsConfig::default(),
            planner: PlannerConfig::default(),
            factors: FactorsConfig::default(),
            comm: CommSection::default(),
            circle: CircleConfig::default(),
            junction: JunctionConfig::default(),
            sdf: SdfConfig::default(),
            obstacles: Vec::new(),
            custom_robots: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Parses `text` and applies `key=value` overrides before validation of
    /// field names and types.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        // validate the file itself first so errors point at its own lines
        let parsed = Self::from_toml_str(text)?;
        if overrides.is_empty() {
            return Ok(parsed);
        }
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let rendered = toml::to_string(&table).map_err(|e| ConfigError::Serialize(e.to_string()))?;
        Self::from_toml_str(&rendered)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Serialize(e.to_string()))
    }

    /// Lookahead of the last planned state: configured, or derived from the
    /// scenario (twice the constant-deceleration crossing time for circles).
    pub fn horizon(&self) -> f64 {
        if let Some(h) = self.planner.horizon {
            return h;
        }
        match self.kind {
            ScenarioKind::Circle | ScenarioKind::CircleWithObstacles => {
                2.0 * (2.0 * self.circle.radius) / self.robots.initial_speed
            }
            ScenarioKind::Junction => 2.0,
            ScenarioKind::Custom => 2.0 * self.dt * self.planner.k as f64,
        }
    }

    /// The configuration with every derived value made explicit.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.planner.horizon = Some(self.horizon());
        out
    }

    pub fn comm_config(&self) -> CommConfig {
        CommConfig {
            radius: self.comm.radius,
            gamma: self.comm.gamma,
            seed: self.seed,
        }
    }

    /// Factor parameters for a robot of the given radius.
    pub fn factor_params(&self, robot_radius: f64) -> FactorParams {
        FactorParams {
            sigma_p: self.factors.sigma_p,
            sigma_d: self.factors.sigma_d,
            sigma_o: self.factors.sigma_o,
            sigma_r: self.factors.sigma_r,
            robot_radius,
            epsilon: self.factors.epsilon,
            comm_radius: self.comm.radius,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::Invalid {
                    key,
                    reason: format!("must be positive, got {v}"),
                })
            }
        };
        positive("dt", self.dt)?;
        positive("robots.radius_min", self.robots.radius_min)?;
        positive("robots.initial_speed", self.robots.initial_speed)?;
        positive("sdf.cell", self.sdf.cell)?;
        positive("planner.horizon", self.horizon())?;
        positive("planner.min_horizon", self.planner.min_horizon)?;
        if self.robots.radius_max < self.robots.radius_min {
            return Err(ConfigError::Invalid {
                key: "robots.radius_max",
                reason: "must not be below robots.radius_min".into(),
            });
        }
        if self.planner.k < 2 {
            return Err(ConfigError::Invalid {
                key: "planner.k",
                reason: "needs at least 2 states".into(),
            });
        }
        if !(0.0..1.0).contains(&self.planner.damping) {
            return Err(ConfigError::Invalid {
                key: "planner.damping",
                reason: "must lie in [0, 1)".into(),
            });
        }
        self.comm_config().validate().map_err(|e| ConfigError::Invalid {
            key: "comm",
            reason: e.to_string(),
        })?;
        self.factor_params(self.robots.radius_min)
            .validate()
            .map_err(|e| ConfigError::Invalid {
                key: "factors",
                reason: e.to_string(),
            })?;
        match self.kind {
            ScenarioKind::Circle | ScenarioKind::CircleWithObstacles => {
                if self.robots.count == 0 {
                    return Err(ConfigError::Invalid {
                        key: "robots.count",
                        reason: "needs at least one robot".into(),
                    });
                }
                positive("circle.radius", self.circle.radius)?;
            }
            ScenarioKind::Junction => {
                positive("junction.channel_width", self.junction.channel_width)?;
                positive("junction.half_length", self.junction.half_length)?;
                if self.junction.inflow_rate.is_nan() || self.junction.inflow_rate < 0.0 {
                    return Err(ConfigError::Invalid {
                        key: "junction.inflow_rate",
                        reason: "must be non-negative".into(),
                    });
                }
                if !matches!(self.junction.arms, 1..=4) {
                    return Err(ConfigError::Invalid {
                        key: "junction.arms",
                        reason: "must be between 1 and 4".into(),
                    });
                }
            }
            ScenarioKind::Custom => {
                if self.custom_robots.is_empty() {
                    return Err(ConfigError::Invalid {
                        key: "custom_robots",
                        reason: "custom scenarios need at least one robot".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Applies one `dotted.key=value` override to a parsed TOML table. Values
/// are read as TOML literals, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::OverrideSyntax(assignment.to_string()))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(ConfigError::OverrideSyntax(assignment.to_string()));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry.as_table_mut().ok_or_else(|| ConfigError::OverrideKey {
            key: key.to_string(),
            reason: format!("`{part}` is not a section"),
        })?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Everything needed to place one robot in the world.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotSpec {
    pub id: u32,
    pub radius: f64,
    pub start: RobotState,
    pub goal: RobotState,
    pub mode: HorizonMode,
    /// Entry arm for junction robots.
    pub arm: Option<usize>,
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Region {
    pub fn contains(&self, p: Vector2<f64>) -> bool {
        p.x >= self.min[0] && p.x <= self.max[0] && p.y >= self.min[1] && p.y <= self.max[1]
    }
}

/// Cross-shaped junction of two perpendicular channels centered on the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JunctionGeometry {
    pub channel_width: f64,
    pub half_length: f64,
}

/// Distance from the arm end at which robots are spawned.
const SPAWN_INSET: f64 = 6.0;
/// Distance from the arm end beyond which robots have left the junction.
const EXIT_INSET: f64 = 4.0;
const WALL_THICKNESS: f64 = 2.0;

impl JunctionGeometry {
    /// Travel direction of robots entering on `arm`: 0 eastwards from the
    /// west end, 1 northwards from the south, 2 westwards, 3 southwards.
    pub fn direction(arm: usize) -> Vector2<f64> {
        match arm % 4 {
            0 => Vector2::new(1.0, 0.0),
            1 => Vector2::new(0.0, 1.0),
            2 => Vector2::new(-1.0, 0.0),
            _ => Vector2::new(0.0, -1.0),
        }
    }

    pub fn spawn_point(&self, arm: usize, lateral: f64) -> Vector2<f64> {
        let d = Self::direction(arm);
        let normal = Vector2::new(-d.y, d.x);
        -d * (self.half_length - SPAWN_INSET) + normal * lateral
    }

    /// The side a robot at `p` has left through, as the arm index whose
    /// direction points out of that side, or `None` while still inside.
    pub fn exit_side(&self, p: Vector2<f64>) -> Option<usize> {
        let limit = self.half_length - EXIT_INSET;
        if p.x.abs() <= limit && p.y.abs() <= limit {
            return None;
        }
        Some(if p.x.abs() >= p.y.abs() {
            if p.x > 0.0 {
                0
            } else {
                2
            }
        } else if p.y > 0.0 {
            1
        } else {
            3
        })
    }

    /// Central crossing area used for flow measurement.
    pub fn central_region(&self) -> Region {
        let h = self.channel_width / 2.0;
        Region {
            min: [-h, -h],
            max: [h, h],
        }
    }

    /// Four L-shaped walls lining the inner corners of the cross.
    pub fn walls(&self) -> Vec<Polygon> {
        let h = self.channel_width / 2.0;
        let l = self.half_length;
        let t = WALL_THICKNESS;
        [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
            .iter()
            .map(|&(sx, sy)| {
                let v = |x: f64, y: f64| [sx * x, sy * y];
                Polygon::new(vec![
                    v(h, h),
                    v(l, h),
                    v(l, h + t),
                    v(h + t, h + t),
                    v(h + t, l),
                    v(h, l),
                ])
            })
            .collect()
    }

    pub fn bounds(&self) -> Bounds {
        let e = self.half_length + 10.0;
        Bounds {
            min: [-e, -e],
            max: [e, e],
        }
    }
}

/// Deterministic-interval spawner: robot `n` is due at `n / inflow_rate`
/// seconds on arm `n mod arms`, with seeded radius and lateral offset.
#[derive(Debug, Clone)]
pub struct JunctionSpawner {
    geometry: JunctionGeometry,
    rate: f64,
    arms: usize,
    jitter: f64,
    speed: f64,
    radius_range: (f64, f64),
    seed: u64,
    scheduled: u64,
    pending: VecDeque<RobotSpec>,
    deferrals: u64,
}

impl JunctionSpawner {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        Self {
            geometry: JunctionGeometry {
                channel_width: cfg.junction.channel_width,
                half_length: cfg.junction.half_length,
            },
            rate: cfg.junction.inflow_rate,
            arms: cfg.junction.arms,
            jitter: cfg.junction.lateral_jitter,
            speed: cfg.robots.initial_speed,
            radius_range: (cfg.robots.radius_min, cfg.robots.radius_max),
            seed: cfg.seed,
            scheduled: 0,
            pending: VecDeque::new(),
            deferrals: 0,
        }
    }

    pub fn geometry(&self) -> &JunctionGeometry {
        &self.geometry
    }

    /// Spawns that had to wait because their entry point was occupied.
    pub fn deferrals(&self) -> u64 {
        self.deferrals
    }

    /// Robots released so far, including those still waiting.
    pub fn scheduled(&self) -> u64 {
        self.scheduled
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    fn make(&self, n: u64) -> RobotSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ n.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17));
        let radius = sample_radius(&mut rng, self.radius_range);
        let lateral = if self.jitter > 0.0 {
            rng.gen_range(-self.jitter..=self.jitter)
        } else {
            0.0
        };
        let arm = (n % self.arms as u64) as usize;
        let dir = JunctionGeometry::direction(arm);
        let start = self.geometry.spawn_point(arm, lateral);
        // far beyond the arm end, so the horizon keeps moving until exit
        let normal = Vector2::new(-dir.y, dir.x);
        let goal_pos = dir * (self.geometry.half_length + 100.0) + normal * lateral;
        RobotSpec {
            id: n as u32,
            radius,
            start: RobotState {
                pos: start,
                vel: dir * self.speed,
            },
            goal: RobotState {
                pos: goal_pos,
                vel: dir * self.speed,
            },
            mode: HorizonMode::Moving { max_speed: self.speed },
            arm: Some(arm),
        }
    }

    /// Robots to add at `tick`. `is_free(spec)` reports whether the entry
    /// point is clear; blocked robots wait in order for a later tick.
    pub fn spawn<F>(&mut self, tick: u64, dt: f64, is_free: F) -> Vec<RobotSpec>
    where
        F: Fn(&RobotSpec, &[RobotSpec]) -> bool,
    {
        if self.rate > 0.0 {
            let due = ((tick as f64 * dt * self.rate) + 1e-9).floor() as u64 + 1;
            while self.scheduled < due {
                let spec = self.make(self.scheduled);
                self.pending.push_back(spec);
                self.scheduled += 1;
            }
        }
        let mut out: Vec<RobotSpec> = Vec::new();
        let mut waiting = VecDeque::new();
        while let Some(spec) = self.pending.pop_front() {
            // a blocked arm keeps later robots of the same arm queued behind it
            let arm_blocked = waiting.iter().any(|w: &RobotSpec| w.arm == spec.arm);
            if !arm_blocked && is_free(&spec, &out) {
                out.push(spec);
            } else {
                self.deferrals += 1;
                waiting.push_back(spec);
            }
        }
        self.pending = waiting;
        out
    }
}

fn sample_radius(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Five regular pentagons around the center of the circle scenario.
pub fn circle_obstacles() -> Vec<Polygon> {
    const RING: f64 = 16.0;
    const SIZE: f64 = 6.0;
    (0..5)
        .map(|i| {
            let a = (18.0 + 72.0 * i as f64).to_radians();
            Polygon::regular([RING * a.cos(), RING * a.sin()], SIZE, 5, a)
        })
        .collect()
}

/// Static content of a scenario plus its initial robots.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub polygons: Vec<Polygon>,
    pub sdf: Arc<SdfGrid>,
    pub robots: Vec<RobotSpec>,
    pub spawner: Option<JunctionSpawner>,
    pub junction: Option<JunctionGeometry>,
}

impl Scenario {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let extra: Vec<Polygon> = cfg.obstacles.iter().map(|o| Polygon::new(o.vertices.clone())).collect();
        match cfg.kind {
            ScenarioKind::Circle | ScenarioKind::CircleWithObstacles => Ok(make_circle_scenario(cfg, extra)),
            ScenarioKind::Junction => Ok(make_junction_scenario(cfg, extra)),
            ScenarioKind::Custom => Ok(make_custom_scenario(cfg, extra)),
        }
    }
}

/// Robots evenly spaced on a circle, each heading for the antipodal point
/// at the configured initial speed, with the horizon anchored on the goal.
pub fn make_circle_scenario(cfg: &ScenarioConfig, mut polygons: Vec<Polygon>) -> Scenario {
    if cfg.kind == ScenarioKind::CircleWithObstacles {
        polygons.extend(circle_obstacles());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.robots.count;
    let r = cfg.circle.radius;
    let robots = (0..n)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / n as f64;
            let pos = Vector2::new(r * a.cos(), r * a.sin());
            let goal = -pos;
            let vel = (goal - pos).normalize() * cfg.robots.initial_speed;
            RobotSpec {
                id: i as u32,
                radius: sample_radius(&mut rng, (cfg.robots.radius_min, cfg.robots.radius_max)),
                start: RobotState { pos, vel },
                goal: RobotState::at_rest(goal),
                mode: HorizonMode::Stationary,
                arm: None,
            }
        })
        .collect();
    let e = r + 20.0;
    let bounds = Bounds {
        min: [-e, -e],
        max: [e, e],
    };
    Scenario {
        sdf: Arc::new(SdfGrid::build(&polygons, bounds, cfg.sdf.cell)),
        polygons,
        robots,
        spawner: None,
        junction: None,
    }
}

pub fn make_junction_scenario(cfg: &ScenarioConfig, mut polygons: Vec<Polygon>) -> Scenario {
    let spawner = JunctionSpawner::new(cfg);
    let geometry = *spawner.geometry();
    polygons.extend(geometry.walls());
    Scenario {
        sdf: Arc::new(SdfGrid::build(&polygons, geometry.bounds(), cfg.sdf.cell)),
        polygons,
        robots: Vec::new(),
        spawner: Some(spawner),
        junction: Some(geometry),
    }
}

pub fn make_custom_scenario(cfg: &ScenarioConfig, polygons: Vec<Polygon>) -> Scenario {
    let robots: Vec<RobotSpec> = cfg
        .custom_robots
        .iter()
        .enumerate()
        .map(|(i, r)| RobotSpec {
            id: i as u32,
            radius: r.radius,
            start: RobotState::new(r.start[0], r.start[1], r.velocity[0], r.velocity[1]),
            goal: RobotState::new(r.goal[0], r.goal[1], 0.0, 0.0),
            mode: HorizonMode::Stationary,
            arm: None,
        })
        .collect();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let points = robots
        .iter()
        .flat_map(|r| [[r.start.pos.x, r.start.pos.y], [r.goal.pos.x, r.goal.pos.y]])
        .chain(polygons.iter().flat_map(|p| p.vertices.iter().copied()));
    for p in points {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let bounds = Bounds {
        min: [lo[0] - 20.0, lo[1] - 20.0],
        max: [hi[0] + 20.0, hi[1] + 20.0],
    };
    Scenario {
        sdf: Arc::new(SdfGrid::build(&polygons, bounds, cfg.sdf.cell)),
        polygons,
        robots,
        spawner: None,
        junction: None,
    }
}
