//! Per-robot planning fragment: a chain of future states with pose anchors
//! at both ends, dynamics between neighbours, obstacle costs on every state
//! and separation factors towards robots currently in range.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::{Envelope, NodeAddr};
use crate::factors::{
    dynamics_factor, interrobot_factor, obstacle_factor, pose_factor, FactorDef, FactorParams, ParamError, RobotState,
    STATE_DIM,
};
use crate::gauss::CanonicalGaussian;
use crate::gbp::{FactorId, FactorKind, GbpDiagnostics, GbpError, GbpGraph, VarSlot, VariableId};
use crate::sdf::SdfGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("schedule needs at least 2 states, got {0}")]
    TooFewStates(usize),
    #[error("schedule times must start at 0 and strictly increase with non-decreasing gaps")]
    BadTimes,
    #[error("horizon {horizon} s is shorter than {steps} steps of {dt} s")]
    HorizonTooShort { horizon: f64, steps: usize, dt: f64 },
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Graph(#[from] GbpError),
}

/// Relative timestamps of the planned states; `times[0]` is always "now".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySchedule {
    times: Vec<f64>,
}

impl TrajectorySchedule {
    /// `k` states whose gaps grow geometrically from `dt` so that the last
    /// state sits exactly at `horizon`. With `k = 2` the single gap spans the
    /// whole horizon.
    pub fn geometric(k: usize, dt: f64, horizon: f64) -> Result<Self, PlanError> {
        if k < 2 {
            return Err(PlanError::TooFewStates(k));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(PlanError::BadTimeStep(dt));
        }
        if k == 2 {
            return Self::from_times(vec![0.0, horizon]);
        }
        let steps = k - 1;
        if horizon < steps as f64 * dt * (1.0 - 1e-12) {
            return Err(PlanError::HorizonTooShort { horizon, steps, dt });
        }
        let total = |rho: f64| -> f64 { (0..steps).map(|i| dt * rho.powi(i as i32)).sum() };
        let (mut lo, mut hi) = (1.0_f64, 2.0_f64);
        while total(hi) < horizon {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(mid) < horizon {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let rho = 0.5 * (lo + hi);
        let mut times = Vec::with_capacity(k);
        let mut t = 0.0;
        times.push(t);
        for i in 0..steps {
            t += dt * rho.powi(i as i32);
            times.push(t);
        }
        times[steps] = horizon;
        Self::from_times(times)
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self, PlanError> {
        if times.len() < 2 {
            return Err(PlanError::TooFewStates(times.len()));
        }
        if times[0] != 0.0 || times.iter().any(|t| !t.is_finite()) {
            return Err(PlanError::BadTimes);
        }
        let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        if gaps.iter().any(|g| *g <= 0.0) {
            return Err(PlanError::BadTimes);
        }
        if gaps.windows(2).any(|g| g[1] < g[0] * (1.0 - 1e-9)) {
            return Err(PlanError::BadTimes);
        }
        Ok(Self { times })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("schedule is non-empty")
    }
}

/// How the last planned state is anchored over time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum HorizonMode {
    /// The horizon anchor sits on the goal for the whole run.
    Stationary,
    /// The horizon anchor travels towards the goal at up to `max_speed`.
    Moving { max_speed: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PlannerDiagnostics {
    /// Ticks where the next state had no usable mean and the anchor was held.
    pub held_anchors: u64,
    /// Inbound envelopes addressed to a factor that no longer exists.
    pub orphan_envelopes: u64,
}

/// What a robot publishes about its own trajectory for peers to read.
#[derive(Debug, Clone)]
pub struct PeerSnapshot {
    pub robot: u32,
    pub means: Vec<DVector<f64>>,
    beliefs: Vec<CanonicalGaussian>,
    /// Messages this robot currently receives from its separation factor
    /// towards each peer, per state.
    mirrors: BTreeMap<u32, BTreeMap<usize, CanonicalGaussian>>,
}

impl PeerSnapshot {
    /// Message for the peer `to` about state `k`: the belief without the
    /// contribution of the factor that mirrors the receiver's own.
    pub fn payload_for(&self, to: u32, k: usize) -> CanonicalGaussian {
        let belief = &self.beliefs[k];
        match self.mirrors.get(&to).and_then(|m| m.get(&k)) {
            Some(own) => belief.divide(own).unwrap_or_else(|_| belief.clone()),
            None => belief.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RobotFragment {
    id: u32,
    radius: f64,
    goal: RobotState,
    schedule: TrajectorySchedule,
    params: FactorParams,
    mode: HorizonMode,
    graph: GbpGraph,
    vars: Vec<VariableId>,
    start_anchor: RobotState,
    horizon_anchor: RobotState,
    pose_factors: [FactorId; 2],
    dynamics: Vec<FactorId>,
    obstacles: Vec<FactorId>,
    /// Separation factors per peer, indexed by state `k - 1`.
    interrobot: BTreeMap<u32, Vec<FactorId>>,
    /// Lookahead countdown towards a fixed arrival time, if enabled.
    countdown: Option<Countdown>,
    diagnostics: PlannerDiagnostics,
}

/// Shrinks the lookahead as time passes so that the horizon state keeps a
/// fixed arrival time, never going below `floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Countdown {
    arrival: f64,
    floor: f64,
    elapsed: f64,
    dt: f64,
}

impl RobotFragment {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        id: u32,
        radius: f64,
        start: RobotState,
        goal: RobotState,
        schedule: TrajectorySchedule,
        params: FactorParams,
        mode: HorizonMode,
        damping: f64,
        sdf: Arc<SdfGrid>,
    ) -> Result<Self, PlanError> {
        params.validate()?;
        let horizon_anchor = match mode {
            HorizonMode::Stationary => goal,
            HorizonMode::Moving { max_speed } => advance_towards(start.pos, &goal, max_speed, schedule.horizon()),
        };
        let mut graph = GbpGraph::new(damping);
        let horizon = schedule.horizon();
        let mut vars = Vec::with_capacity(schedule.len());
        for &t in schedule.times() {
            let frac = t / horizon;
            let pos = start.pos + (horizon_anchor.pos - start.pos) * frac;
            let init = RobotState { pos, vel: start.vel };
            vars.push(graph.add_variable(init.to_vector(), None)?);
        }
        let k = vars.len();
        let add = |graph: &mut GbpGraph, def: FactorDef, slots: Vec<VarSlot>| {
            graph.add_factor(def.kind, slots, def.model, def.z, def.precision, &[])
        };
        let first = add(
            &mut graph,
            pose_factor(&start, params.sigma_p),
            vec![VarSlot::Local(vars[0])],
        )?;
        let last = add(
            &mut graph,
            pose_factor(&horizon_anchor, params.sigma_p),
            vec![VarSlot::Local(vars[k - 1])],
        )?;
        let mut dynamics = Vec::with_capacity(k - 1);
        for (i, gap) in schedule.gaps().into_iter().enumerate() {
            let slots = vec![VarSlot::Local(vars[i]), VarSlot::Local(vars[i + 1])];
            dynamics.push(add(&mut graph, dynamics_factor(gap, params.sigma_d), slots)?);
        }
        let mut obstacles = Vec::with_capacity(k);
        for v in &vars {
            let def = obstacle_factor(sdf.clone(), radius, params.sigma_o);
            obstacles.push(add(&mut graph, def, vec![VarSlot::Local(*v)])?);
        }
        Ok(Self {
            id,
            radius,
            goal,
            schedule,
            params,
            mode,
            graph,
            vars,
            start_anchor: start,
            horizon_anchor,
            pose_factors: [first, last],
            dynamics,
            obstacles,
            interrobot: BTreeMap::new(),
            countdown: None,
            diagnostics: PlannerDiagnostics::default(),
        })
    }

    /// Makes the lookahead count down by `dt` every tick, from its initial
    /// value to `floor`, so the horizon state keeps its arrival time. The
    /// floor is raised to what the schedule needs for one `dt` per gap.
    pub fn with_countdown(mut self, dt: f64, floor: f64) -> Result<Self, PlanError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(PlanError::BadTimeStep(dt));
        }
        let min_floor = dt * (self.vars.len() - 1) as f64;
        self.countdown = Some(Countdown {
            arrival: self.schedule.horizon(),
            floor: floor.max(min_floor).min(self.schedule.horizon()),
            elapsed: 0.0,
            dt,
        });
        Ok(self)
    }

    /// Rebuilds the time-dependent factors after the schedule changed.
    fn apply_schedule(&mut self, schedule: TrajectorySchedule) -> Result<(), PlanError> {
        for (fid, gap) in self.dynamics.iter().zip(schedule.gaps()) {
            let def = dynamics_factor(gap, self.params.sigma_d);
            self.graph
                .factor_mut(*fid)
                .expect("dynamics factor exists")
                .set_measurement(def.model, def.precision)?;
        }
        for fids in self.interrobot.values() {
            for (i, fid) in fids.iter().enumerate() {
                let def = interrobot_factor(schedule.times()[i + 1], &self.params);
                self.graph
                    .factor_mut(*fid)
                    .expect("separation factor exists")
                    .set_measurement(def.model, def.precision)?;
            }
        }
        self.schedule = schedule;
        Ok(())
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn goal(&self) -> &RobotState {
        &self.goal
    }

    pub fn schedule(&self) -> &TrajectorySchedule {
        &self.schedule
    }

    pub fn params(&self) -> &FactorParams {
        &self.params
    }

    pub fn mode(&self) -> HorizonMode {
        self.mode
    }

    pub fn graph(&self) -> &GbpGraph {
        &self.graph
    }

    pub fn variables(&self) -> &[VariableId] {
        &self.vars
    }

    pub fn start_anchor(&self) -> &RobotState {
        &self.start_anchor
    }

    pub fn horizon_anchor(&self) -> &RobotState {
        &self.horizon_anchor
    }

    pub fn pose_factors(&self) -> [FactorId; 2] {
        self.pose_factors
    }

    pub fn dynamics_factors(&self) -> &[FactorId] {
        &self.dynamics
    }

    pub fn obstacle_factors(&self) -> &[FactorId] {
        &self.obstacles
    }

    pub fn diagnostics(&self) -> PlannerDiagnostics {
        self.diagnostics
    }

    pub fn gbp_diagnostics(&self) -> GbpDiagnostics {
        self.graph.diagnostics()
    }

    /// Robots this fragment currently holds separation factors towards.
    pub fn connected(&self) -> BTreeSet<u32> {
        self.interrobot.keys().copied().collect()
    }

    pub fn interrobot_factors(&self, peer: u32) -> Option<&[FactorId]> {
        self.interrobot.get(&peer).map(|v| v.as_slice())
    }

    /// Mean of state `k`, falling back to the last known linearization point.
    pub fn planned_state(&self, k: usize) -> RobotState {
        RobotState::from_slice(self.graph.variables()[self.vars[k].0].linearization_point().as_slice())
    }

    pub fn planned_states(&self) -> Vec<RobotState> {
        (0..self.vars.len()).map(|k| self.planned_state(k)).collect()
    }

    /// Current state: the mean of `x_0`.
    pub fn current_state(&self) -> RobotState {
        self.planned_state(0)
    }

    /// Number of factors of `kind` in the graph.
    pub fn count_factors(&self, kind: FactorKind) -> usize {
        self.graph.factors().filter(|f| f.kind == kind).count()
    }

    /// Whether the current position is within the robot radius of the goal.
    pub fn reached_goal(&self) -> bool {
        (self.start_anchor.pos - self.goal.pos).norm() <= self.radius
    }

    /// Advances the plan by `dt`: the start anchor moves to the plan evaluated
    /// `dt` ahead, and in moving-horizon mode the horizon anchor moves
    /// towards the goal.
    pub fn tick(&mut self, dt: f64) -> Result<(), PlanError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(PlanError::BadTimeStep(dt));
        }
        let nodes = self.graph.variables();
        let x0 = &nodes[self.vars[0].0];
        let x1 = &nodes[self.vars[1].0];
        match (x0.mean(), x1.mean()) {
            (Some(m0), Some(m1)) => {
                let t1 = self.schedule.times()[1];
                let frac = (dt / t1).min(1.0);
                let s0 = RobotState::from_slice(m0.as_slice());
                let s1 = RobotState::from_slice(m1.as_slice());
                self.start_anchor = s0.lerp(&s1, frac);
            }
            _ => self.diagnostics.held_anchors += 1,
        }
        let def = pose_factor(&self.start_anchor, self.params.sigma_p);
        self.graph
            .factor_mut(self.pose_factors[0])
            .expect("start pose factor exists")
            .set_observation(def.z);

        if let HorizonMode::Moving { max_speed } = self.mode {
            self.horizon_anchor = advance_towards(self.horizon_anchor.pos, &self.goal, max_speed, dt);
            let def = pose_factor(&self.horizon_anchor, self.params.sigma_p);
            self.graph
                .factor_mut(self.pose_factors[1])
                .expect("horizon pose factor exists")
                .set_observation(def.z);
        }

        if let Some(c) = &mut self.countdown {
            c.elapsed += dt;
            let remaining = (c.arrival - c.elapsed).max(c.floor);
            let step = c.dt;
            if (remaining - self.schedule.horizon()).abs() > 1e-12 {
                let schedule = TrajectorySchedule::geometric(self.vars.len(), step, remaining)?;
                self.apply_schedule(schedule)?;
            }
        }
        Ok(())
    }

    /// Runs `n` sweeps over the pose, dynamics and obstacle factors.
    pub fn internal_iterations(&mut self, n: usize) {
        self.graph.iterate(n, |f| f.kind != FactorKind::InterRobot);
    }

    /// Runs one sweep over the separation factors.
    pub fn interrobot_sweep(&mut self) {
        if !self.interrobot.is_empty() {
            self.graph.iterate(1, |f| f.kind == FactorKind::InterRobot);
        }
    }

    /// States that carry separation factors: all but the two anchored ends.
    pub fn interrobot_states(&self) -> std::ops::Range<usize> {
        1..self.vars.len().saturating_sub(1)
    }

    pub fn snapshot(&self) -> PeerSnapshot {
        let nodes = self.graph.variables();
        let means = self
            .vars
            .iter()
            .map(|v| nodes[v.0].linearization_point().clone())
            .collect();
        let beliefs = self.vars.iter().map(|v| nodes[v.0].belief().clone()).collect();
        let mut mirrors = BTreeMap::new();
        for (&peer, fids) in &self.interrobot {
            let mut per_state = BTreeMap::new();
            for (i, fid) in fids.iter().enumerate() {
                let k = i + 1;
                if let Some(msg) = nodes[self.vars[k].0].inbox().get(fid) {
                    per_state.insert(k, msg.clone());
                }
            }
            mirrors.insert(peer, per_state);
        }
        PeerSnapshot {
            robot: self.id,
            means,
            beliefs,
            mirrors,
        }
    }

    /// Creates separation factors towards new neighbours and deletes those
    /// towards robots that left. Neighbours whose snapshot is unavailable
    /// are treated as out of range.
    pub fn update_interrobot_factors<'a, F>(&mut self, neighbors: &BTreeSet<u32>, peers: F) -> Result<(), PlanError>
    where
        F: Fn(u32) -> Option<&'a PeerSnapshot>,
    {
        let stale: Vec<u32> = self
            .interrobot
            .keys()
            .filter(|j| !neighbors.contains(j) || peers(**j).is_none())
            .copied()
            .collect();
        for j in stale {
            for fid in self.interrobot.remove(&j).unwrap_or_default() {
                self.graph.remove_factor(fid)?;
            }
        }
        for &j in neighbors {
            if j == self.id || self.interrobot.contains_key(&j) {
                continue;
            }
            let Some(peer) = peers(j) else { continue };
            if peer.means.len() != self.vars.len() {
                continue;
            }
            let mut fids = Vec::new();
            for k in self.interrobot_states() {
                let def = interrobot_factor(self.schedule.times()[k], &self.params);
                let slots = vec![VarSlot::Local(self.vars[k]), VarSlot::Remote { owner: j, index: k }];
                let fid = self.graph.add_factor(
                    def.kind,
                    slots,
                    def.model,
                    def.z,
                    def.precision,
                    std::slice::from_ref(&peer.means[k]),
                )?;
                self.graph
                    .set_remote_message(fid, 1, peer.payload_for(self.id, k), &peer.means[k])?;
                fids.push(fid);
            }
            self.interrobot.insert(j, fids);
        }
        Ok(())
    }

    /// Envelopes carrying this robot's state information to every connected
    /// peer, one per shared state.
    pub fn outbound_envelopes(&self, tick: u64, sweep: u32) -> Vec<Envelope> {
        if self.interrobot.is_empty() {
            return Vec::new();
        }
        let nodes = self.graph.variables();
        let mut out = Vec::new();
        // State-major order keeps the output sorted by (from, to).
        for k in 1..self.vars.len() - 1 {
            let node = &nodes[self.vars[k].0];
            let belief = node.belief();
            for (&peer, fids) in &self.interrobot {
                let fid = &fids[k - 1];
                let payload = match node.inbox().get(fid) {
                    Some(own) => belief.divide(own).unwrap_or_else(|_| belief.clone()),
                    None => belief.clone(),
                };
                out.push(Envelope {
                    from: NodeAddr {
                        robot: self.id,
                        node: k,
                    },
                    to: NodeAddr { robot: peer, node: k },
                    payload,
                    sender_mean: node.linearization_point().clone(),
                    tick,
                    sweep,
                });
            }
        }
        out
    }

    /// Stores a delivered envelope on the matching separation factor.
    pub fn receive(&mut self, envelope: &Envelope) -> Result<(), PlanError> {
        let k = envelope.to.node;
        let fid = self
            .interrobot
            .get(&envelope.from.robot)
            .and_then(|fids| k.checked_sub(1).and_then(|i| fids.get(i)))
            .copied();
        match fid {
            Some(fid) if envelope.payload.dim() == STATE_DIM => {
                self.graph
                    .set_remote_message(fid, 1, envelope.payload.clone(), &envelope.sender_mean)?;
            }
            _ => self.diagnostics.orphan_envelopes += 1,
        }
        Ok(())
    }

    /// Perpendicular offset of each planned position from the straight line
    /// between the start and horizon anchors (positive to the left).
    pub fn lateral_deviations(&self) -> Vec<f64> {
        let a = self.start_anchor.pos;
        let b = self.horizon_anchor.pos;
        let dir = b - a;
        let len = dir.norm();
        if len == 0.0 {
            return vec![0.0; self.vars.len()];
        }
        let normal = Vector2::new(-dir.y, dir.x) / len;
        self.planned_states().iter().map(|s| (s.pos - a).dot(&normal)).collect()
    }
}

/// A state `max_speed · dt` further along the straight line from `from` to
/// the goal, stopping on the goal.
fn advance_towards(from: Vector2<f64>, goal: &RobotState, max_speed: f64, dt: f64) -> RobotState {
    let delta = goal.pos - from;
    let remaining = delta.norm();
    let step = max_speed * dt;
    if remaining <= step || remaining == 0.0 {
        return *goal;
    }
    let dir = delta / remaining;
    RobotState {
        pos: from + dir * step,
        vel: dir * max_speed,
    }
}
