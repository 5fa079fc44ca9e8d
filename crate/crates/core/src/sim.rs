//! World clock and orchestration. Each tick runs global phases: spawn and
//! despawn, anchor advance, neighbour discovery, internal GBP, inter-robot
//! GBP through the transport, ground-truth update, collision checks and
//! trace recording.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::comm::{self, CommStats, NeighborMap, SimTransport, Transport};
use crate::factors::RobotState;
use crate::planner::{HorizonMode, PeerSnapshot, PlanError, RobotFragment, TrajectorySchedule};
use crate::scenario::{
    ConfigError, JunctionGeometry, JunctionSpawner, RobotSpec, Scenario, ScenarioConfig, ScenarioKind,
};
use crate::sdf::{Polygon, SdfGrid};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("robot {robot} reached a non-finite state at tick {tick}; last trace records:\n{dump}")]
    NonFinite { tick: u64, robot: u32, dump: String },
    #[error("cannot start worker pool: {0}")]
    Pool(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One record per live robot per tick.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub tick: u64,
    pub robot: u32,
    pub state: RobotState,
    /// Planned means of all states, `[x, y, ẋ, ẏ]`.
    pub planned: Vec<[f64; 4]>,
    pub collision: bool,
    /// Envelopes addressed to this robot during the tick.
    pub messages_in: u64,
    /// Of those, how many were dropped.
    pub messages_dropped: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case", tag = "with")]
pub enum Contact {
    Robot { a: u32, b: u32 },
    Obstacle { robot: u32 },
}

impl Contact {
    pub fn involves(&self, id: u32) -> bool {
        match *self {
            Contact::Robot { a, b } => a == id || b == id,
            Contact::Obstacle { robot } => robot == id,
        }
    }
}

/// Start of a contiguous contact episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollisionEvent {
    pub tick: u64,
    pub contact: Contact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Active,
    /// Reached the goal region.
    Completed,
    /// Left the junction through the side with arm index `side`.
    Exited {
        side: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotRecord {
    pub id: u32,
    pub radius: f64,
    pub start: RobotState,
    pub goal: RobotState,
    pub arm: Option<usize>,
    pub spawn_tick: u64,
    pub finish_tick: Option<u64>,
    pub outcome: Outcome,
    pub collisions: u64,
}

impl RobotRecord {
    /// Whether a junction robot left in its direction of travel without
    /// colliding. `None` while it is still inside or for other scenarios.
    pub fn correct_exit(&self) -> Option<bool> {
        match (self.outcome, self.arm) {
            (Outcome::Exited { side }, Some(arm)) => Some(side == arm && self.collisions == 0),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Every robot reached its goal.
    Complete,
    /// The tick budget ran out before every robot finished.
    Incomplete,
    /// Open-ended scenario stopped at the tick budget.
    Finished,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub config: ScenarioConfig,
    pub status: RunStatus,
    pub ticks: u64,
    pub dt: f64,
    pub trace: Vec<TraceEvent>,
    pub robots: Vec<RobotRecord>,
    pub collisions: Vec<CollisionEvent>,
    pub comm: CommStats,
    pub spawn_deferrals: u64,
    pub junction: Option<JunctionGeometry>,
}

impl RunResult {
    pub fn is_complete(&self) -> bool {
        self.status != RunStatus::Incomplete
    }

    /// Flat CSV: `tick,id,x,y,vx,vy,collision`.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "tick,id,x,y,vx,vy,collision")?;
        for e in &self.trace {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                e.tick,
                e.robot,
                e.state.pos.x,
                e.state.pos.y,
                e.state.vel.x,
                e.state.vel.y,
                u8::from(e.collision)
            )?;
        }
        Ok(())
    }

    pub fn trace_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_trace_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// JSON sidecar with the full effective config and run-level facts.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "config_toml": self.config.to_toml_string().unwrap_or_default(),
            "status": self.status,
            "ticks": self.ticks,
            "dt": self.dt,
            "robots": self.robots,
            "collision_episodes": self.collisions,
            "comm": self.comm,
            "spawn_deferrals": self.spawn_deferrals,
        })
    }
}

struct LiveRobot {
    fragment: RobotFragment,
    truth: RobotState,
    colliding: bool,
    messages_in: u64,
    messages_dropped: u64,
}

pub struct World {
    cfg: ScenarioConfig,
    sdf: Arc<SdfGrid>,
    polygons: Vec<Polygon>,
    schedule: TrajectorySchedule,
    tick: u64,
    robots: BTreeMap<u32, LiveRobot>,
    records: BTreeMap<u32, RobotRecord>,
    spawner: Option<JunctionSpawner>,
    junction: Option<JunctionGeometry>,
    transport: Box<dyn Transport>,
    contacts: BTreeSet<Contact>,
    collisions: Vec<CollisionEvent>,
    trace: Vec<TraceEvent>,
    pool: rayon::ThreadPool,
}

impl World {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        let transport = Box::new(SimTransport::new(cfg.comm_config()));
        Self::with_transport(cfg, transport)
    }

    /// Builds the world and runs the planning phases once so that tick 0
    /// already carries a plan.
    pub fn with_transport(cfg: &ScenarioConfig, transport: Box<dyn Transport>) -> Result<Self, SimError> {
        let cfg = cfg.resolved();
        cfg.validate()?;
        let scenario = Scenario::build(&cfg)?;
        let schedule = TrajectorySchedule::geometric(cfg.planner.k, cfg.dt, cfg.horizon())?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| SimError::Pool(e.to_string()))?;
        let mut world = Self {
            sdf: scenario.sdf,
            polygons: scenario.polygons,
            schedule,
            tick: 0,
            robots: BTreeMap::new(),
            records: BTreeMap::new(),
            spawner: scenario.spawner,
            junction: scenario.junction,
            transport,
            contacts: BTreeSet::new(),
            collisions: Vec::new(),
            trace: Vec::new(),
            pool,
            cfg,
        };
        for spec in scenario.robots {
            world.add_robot(spec)?;
        }
        world.spawn_phase()?;
        world.planning_phases()?;
        world.finish_tick()?;
        Ok(world)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.cfg.dt
    }

    pub fn sdf(&self) -> &Arc<SdfGrid> {
        &self.sdf
    }

    pub fn polygons(&self) -> &[Polygon] {
        &self.polygons
    }

    pub fn live_robots(&self) -> impl Iterator<Item = (u32, &RobotFragment, &RobotState)> {
        self.robots.iter().map(|(id, r)| (*id, &r.fragment, &r.truth))
    }

    pub fn fragment(&self, id: u32) -> Option<&RobotFragment> {
        self.robots.get(&id).map(|r| &r.fragment)
    }

    pub fn records(&self) -> impl Iterator<Item = &RobotRecord> {
        self.records.values()
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn collisions(&self) -> &[CollisionEvent] {
        &self.collisions
    }

    /// Whether every robot that ever existed has finished.
    pub fn all_finished(&self) -> bool {
        self.robots.is_empty() && self.records.values().all(|r| r.outcome != Outcome::Active)
    }

    fn add_robot(&mut self, spec: RobotSpec) -> Result<(), SimError> {
        let fragment = RobotFragment::build(
            spec.id,
            spec.radius,
            spec.start,
            spec.goal,
            self.schedule.clone(),
            self.cfg.factor_params(spec.radius),
            spec.mode,
            self.cfg.planner.damping,
            self.sdf.clone(),
        )?;
        let fragment = if spec.mode == HorizonMode::Stationary && self.cfg.planner.countdown {
            fragment.with_countdown(self.cfg.dt, self.cfg.planner.min_horizon)?
        } else {
            fragment
        };
        self.records.insert(
            spec.id,
            RobotRecord {
                id: spec.id,
                radius: spec.radius,
                start: spec.start,
                goal: spec.goal,
                arm: spec.arm,
                spawn_tick: self.tick,
                finish_tick: None,
                outcome: Outcome::Active,
                collisions: 0,
            },
        );
        self.robots.insert(
            spec.id,
            LiveRobot {
                fragment,
                truth: spec.start,
                colliding: false,
                messages_in: 0,
                messages_dropped: 0,
            },
        );
        Ok(())
    }

    /// Advances the world by one timestep.
    pub fn step(&mut self) -> Result<(), SimError> {
        self.tick += 1;
        // phase 1: despawn finished robots, spawn new ones
        let done: Vec<u32> = self
            .records
            .values()
            .filter(|r| r.outcome != Outcome::Active && self.robots.contains_key(&r.id))
            .map(|r| r.id)
            .collect();
        for id in done {
            self.robots.remove(&id);
        }
        self.contacts.retain(|c| match *c {
            Contact::Robot { a, b } => self.robots.contains_key(&a) && self.robots.contains_key(&b),
            Contact::Obstacle { robot } => self.robots.contains_key(&robot),
        });
        let spawned = self.spawn_phase()?;

        // phase 2: anchors advance along the current plans
        let dt = self.cfg.dt;
        let results: Vec<Result<(), PlanError>> = self.pool.install(|| {
            self.robots
                .par_iter_mut()
                .filter(|(id, _)| !spawned.contains(id))
                .map(|(_, r)| r.fragment.tick(dt))
                .collect()
        });
        results.into_iter().collect::<Result<Vec<_>, _>>()?;

        self.planning_phases()?;
        self.finish_tick()
    }

    fn spawn_phase(&mut self) -> Result<BTreeSet<u32>, SimError> {
        let Some(mut spawner) = self.spawner.take() else {
            return Ok(BTreeSet::new());
        };
        let occupied: Vec<(Vector2<f64>, f64)> = self
            .robots
            .values()
            .map(|r| (r.truth.pos, r.fragment.radius()))
            .collect();
        let is_free = |spec: &RobotSpec, admitted: &[RobotSpec]| {
            let clear = |p: Vector2<f64>, r: f64| (spec.start.pos - p).norm() >= spec.radius + r;
            occupied.iter().all(|(p, r)| clear(*p, *r)) && admitted.iter().all(|a| clear(a.start.pos, a.radius))
        };
        let specs = spawner.spawn(self.tick, self.cfg.dt, is_free);
        self.spawner = Some(spawner);
        let mut ids = BTreeSet::new();
        for spec in specs {
            ids.insert(spec.id);
            self.add_robot(spec)?;
        }
        Ok(ids)
    }

    /// Phases 3-5: neighbour discovery, internal and inter-robot GBP.
    fn planning_phases(&mut self) -> Result<(), SimError> {
        let positions: BTreeMap<u32, Vector2<f64>> = self.robots.iter().map(|(id, r)| (*id, r.truth.pos)).collect();
        let neighbors = comm::neighbors(&positions, self.cfg.comm.radius);
        let m_i = self.cfg.planner.internal_iterations;
        let m_r = self.cfg.planner.interrobot_iterations;
        let tick = self.tick;
        let robots = &mut self.robots;
        let transport = &mut self.transport;

        self.pool.install(|| -> Result<(), SimError> {
            // phase 3: separation factors follow the neighbour relation
            let snapshots: BTreeMap<u32, PeerSnapshot> =
                robots.par_iter().map(|(id, r)| (*id, r.fragment.snapshot())).collect();
            let updates: Vec<Result<(), PlanError>> = robots
                .par_iter_mut()
                .map(|(id, r)| {
                    let empty = BTreeSet::new();
                    let n = neighbors.get(id).unwrap_or(&empty);
                    r.fragment.update_interrobot_factors(n, |j| snapshots.get(&j))
                })
                .collect();
            updates.into_iter().collect::<Result<Vec<_>, _>>()?;

            // phase 4: internal iterations
            robots
                .par_iter_mut()
                .for_each(|(_, r)| r.fragment.internal_iterations(m_i));

            // phase 5: synchronized inter-robot sweeps
            let connected: NeighborMap = robots.iter().map(|(id, r)| (*id, r.fragment.connected())).collect();
            transport.begin_tick(tick, &connected);
            for r in robots.values_mut() {
                r.messages_in = 0;
                r.messages_dropped = 0;
            }
            for sweep in 0..m_r {
                let outgoing: Vec<_> = robots
                    .par_iter()
                    .flat_map_iter(|(_, r)| r.fragment.outbound_envelopes(tick, sweep as u32))
                    .collect();
                let mut addressed: BTreeMap<u32, u64> = BTreeMap::new();
                for e in &outgoing {
                    *addressed.entry(e.to.robot).or_default() += 1;
                }
                let delivered = transport.deliver(outgoing);
                let mut inbox: BTreeMap<u32, Vec<comm::Envelope>> = BTreeMap::new();
                for e in delivered {
                    inbox.entry(e.to.robot).or_default().push(e);
                }
                for (id, n) in addressed {
                    if let Some(r) = robots.get_mut(&id) {
                        let got = inbox.get(&id).map_or(0, |v| v.len() as u64);
                        r.messages_in += n;
                        r.messages_dropped += n - got;
                    }
                }
                let received: Vec<Result<(), PlanError>> = robots
                    .par_iter_mut()
                    .map(|(id, r)| {
                        if let Some(envs) = inbox.get(id) {
                            for e in envs {
                                r.fragment.receive(e)?;
                            }
                        }
                        r.fragment.interrobot_sweep();
                        Ok(())
                    })
                    .collect();
                received.into_iter().collect::<Result<Vec<_>, _>>()?;
            }
            Ok(())
        })
    }

    /// Phases 6-8: ground truth, collisions, completion and trace.
    fn finish_tick(&mut self) -> Result<(), SimError> {
        // phase 6: perfect execution of the plan
        for (id, r) in self.robots.iter_mut() {
            let s = r.fragment.current_state();
            if !s.is_finite() {
                return Err(SimError::NonFinite {
                    tick: self.tick,
                    robot: *id,
                    dump: self.dump_tail(),
                });
            }
            r.truth = s;
        }

        // phase 7: collisions
        let live: Vec<(u32, Vector2<f64>, f64)> = self
            .robots
            .iter()
            .map(|(id, r)| (*id, r.truth.pos, r.fragment.radius()))
            .collect();
        let now = detect_collisions(&live, &self.sdf);
        for c in now.difference(&self.contacts) {
            self.collisions.push(CollisionEvent {
                tick: self.tick,
                contact: *c,
            });
            for rec in self.records.values_mut().filter(|rec| c.involves(rec.id)) {
                rec.collisions += 1;
            }
        }
        for (id, r) in self.robots.iter_mut() {
            r.colliding = now.iter().any(|c| c.involves(*id));
        }
        self.contacts = now;

        // completion and exits
        for (id, r) in &self.robots {
            let rec = self.records.get_mut(id).expect("live robot has a record");
            if let Some(geom) = &self.junction {
                if let Some(side) = geom.exit_side(r.truth.pos) {
                    rec.outcome = Outcome::Exited { side };
                    rec.finish_tick = Some(self.tick);
                }
            } else if (r.truth.pos - rec.goal.pos).norm() <= rec.radius {
                rec.outcome = Outcome::Completed;
                rec.finish_tick = Some(self.tick);
            }
        }

        // phase 8: trace
        for (id, r) in &self.robots {
            self.trace.push(TraceEvent {
                tick: self.tick,
                robot: *id,
                state: r.truth,
                planned: r
                    .fragment
                    .planned_states()
                    .iter()
                    .map(|s| [s.pos.x, s.pos.y, s.vel.x, s.vel.y])
                    .collect(),
                collision: r.colliding,
                messages_in: r.messages_in,
                messages_dropped: r.messages_dropped,
            });
        }
        Ok(())
    }

    fn dump_tail(&self) -> String {
        let start = self.trace.len().saturating_sub(20);
        self.trace[start..]
            .iter()
            .map(|e| format!("{} {} {:?}", e.tick, e.robot, e.state))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn status(&self) -> RunStatus {
        match self.cfg.kind {
            ScenarioKind::Junction => RunStatus::Finished,
            _ if self.all_finished() => RunStatus::Complete,
            _ => RunStatus::Incomplete,
        }
    }

    /// Consumes the world into a result.
    pub fn into_result(self) -> RunResult {
        let status = self.status();
        RunResult {
            status,
            ticks: self.tick,
            dt: self.cfg.dt,
            trace: self.trace,
            robots: self.records.into_values().collect(),
            collisions: self.collisions,
            comm: self.transport.total_stats(),
            spawn_deferrals: self.spawner.as_ref().map_or(0, |s| s.deferrals()),
            junction: self.junction,
            config: self.cfg,
        }
    }
}

/// Contacts at one instant: robot pairs closer than the sum of their radii
/// and robots whose center is closer than their radius to an obstacle.
pub fn detect_collisions(robots: &[(u32, Vector2<f64>, f64)], sdf: &SdfGrid) -> BTreeSet<Contact> {
    let mut out = BTreeSet::new();
    for (i, (a, pa, ra)) in robots.iter().enumerate() {
        for (b, pb, rb) in &robots[i + 1..] {
            if (pa - pb).norm() < ra + rb {
                let (a, b) = if a < b { (*a, *b) } else { (*b, *a) };
                out.insert(Contact::Robot { a, b });
            }
        }
        if sdf.sample(*pa).distance < *ra {
            out.insert(Contact::Obstacle { robot: *a });
        }
    }
    out
}

/// Runs a scenario until every robot has finished or the tick budget is
/// spent. Junction scenarios always run the full budget.
pub fn run(cfg: &ScenarioConfig) -> Result<RunResult, SimError> {
    let mut world = World::new(cfg)?;
    run_world(&mut world)?;
    Ok(world.into_result())
}

/// Steps `world` to the end of its run.
pub fn run_world(world: &mut World) -> Result<(), SimError> {
    let open_ended = world.cfg.kind == ScenarioKind::Junction;
    while world.tick < world.cfg.max_ticks {
        if !open_ended && world.all_finished() {
            break;
        }
        world.step()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf::Bounds;

    fn empty_sdf() -> SdfGrid {
        SdfGrid::build(
            &[],
            Bounds {
                min: [-10.0, -10.0],
                max: [10.0, 10.0],
            },
            1.0,
        )
    }

    #[test]
    fn touching_robots_do_not_collide() {
        let robots = [(0, Vector2::new(0.0, 0.0), 2.0), (1, Vector2::new(4.5, 0.0), 2.5)];
        assert!(detect_collisions(&robots, &empty_sdf()).is_empty());
        let robots = [(0, Vector2::new(0.0, 0.0), 2.0), (1, Vector2::new(4.49, 0.0), 2.5)];
        assert_eq!(
            detect_collisions(&robots, &empty_sdf()),
            BTreeSet::from([Contact::Robot { a: 0, b: 1 }])
        );
    }

    #[test]
    fn obstacle_contact() {
        let sdf = SdfGrid::build(
            &[Polygon::rect([-1.0, -1.0], [1.0, 1.0])],
            Bounds {
                min: [-10.0, -10.0],
                max: [10.0, 10.0],
            },
            0.25,
        );
        let near = [(3, Vector2::new(2.5, 0.0), 2.0)];
        assert_eq!(
            detect_collisions(&near, &sdf),
            BTreeSet::from([Contact::Obstacle { robot: 3 }])
        );
        let far = [(3, Vector2::new(5.0, 0.0), 2.0)];
        assert!(detect_collisions(&far, &sdf).is_empty());
    }
}
