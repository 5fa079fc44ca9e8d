//! Loopy Gaussian belief propagation over a factor graph.
//!
//! Variables hold their incoming factor messages and a belief equal to the
//! product of those messages. Factors hold a measurement model, linearize it
//! at the current variable means, and send marginalized messages back.
//!
//! A factor may reference variables that live in another graph (a peer
//! robot's fragment). Those [`VarSlot::Remote`] slots only ever receive
//! messages, through [`GbpGraph::set_remote_message`]; the engine never sends
//! to them.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::gauss::{CanonicalGaussian, GaussError, SMALL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VariableId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FactorId(pub u64);

impl fmt::Display for FactorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0)
    }
}

/// One end of a factor's edge list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarSlot {
    Local(VariableId),
    /// Variable `index` owned by graph `owner`; receive-only.
    Remote {
        owner: u32,
        index: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Pose,
    Dynamics,
    Obstacle,
    InterRobot,
    /// Generic linear measurement, used by tests and custom graphs.
    Linear,
}

/// Measurement function `h(X)` and its Jacobian, evaluated on the stacked
/// state of the factor's variables.
pub trait MeasurementModel: fmt::Debug + Send + Sync {
    fn measure(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Linear models have a likelihood that does not depend on the
    /// linearization point, so it is computed once and cached.
    fn is_linear(&self) -> bool {
        false
    }
}

/// `h(X) = J X + offset`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub jacobian: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl LinearModel {
    pub fn new(jacobian: DMatrix<f64>) -> Self {
        let offset = DVector::zeros(jacobian.nrows());
        Self { jacobian, offset }
    }
}

impl MeasurementModel for LinearModel {
    fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.jacobian * x + &self.offset
    }
    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.jacobian.clone()
    }
    fn is_linear(&self) -> bool {
        true
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GbpError {
    #[error(transparent)]
    Gauss(#[from] GaussError),
    #[error("factor {0} produced non-finite measurement or jacobian")]
    NonFiniteFactor(FactorId),
    #[error("unknown variable {0:?}")]
    UnknownVariable(VariableId),
    #[error("unknown factor {0}")]
    UnknownFactor(FactorId),
    #[error("variable {variable:?} is not connected to factor {factor}")]
    NotConnected { variable: VariableId, factor: FactorId },
    #[error("factor {factor} slot {slot} is not a remote slot")]
    NotRemote { factor: FactorId, slot: usize },
    #[error("factor shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone)]
pub struct VariableNode {
    pub id: VariableId,
    pub dim: usize,
    belief: CanonicalGaussian,
    inbox: BTreeMap<FactorId, CanonicalGaussian>,
    prior: Option<CanonicalGaussian>,
    /// Mean of the latest belief, or the last known one when the belief
    /// carries no usable mean.
    lin_point: DVector<f64>,
    has_mean: bool,
}

impl VariableNode {
    pub fn belief(&self) -> &CanonicalGaussian {
        &self.belief
    }

    pub fn inbox(&self) -> &BTreeMap<FactorId, CanonicalGaussian> {
        &self.inbox
    }

    pub fn prior(&self) -> Option<&CanonicalGaussian> {
        self.prior.as_ref()
    }

    /// The latest belief mean, if the belief has one.
    pub fn mean(&self) -> Option<&DVector<f64>> {
        self.has_mean.then_some(&self.lin_point)
    }

    /// Current linearization point: the latest mean, or the last known one.
    pub fn linearization_point(&self) -> &DVector<f64> {
        &self.lin_point
    }

    fn recompute_belief(&mut self) {
        match &self.prior {
            Some(p) => self.belief.assign(p),
            None => self.belief.clear(),
        }
        for msg in self.inbox.values() {
            // Inbox entries are validated to the variable's dimension on insert.
            self.belief
                .product_assign(msg)
                .expect("inbox message dimension checked on insert");
        }
        match self.belief.mean() {
            Ok(mu) => {
                self.lin_point = mu;
                self.has_mean = true;
            }
            Err(_) => self.has_mean = false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FactorNode {
    pub id: FactorId,
    pub kind: FactorKind,
    slots: Vec<VarSlot>,
    dims: Vec<usize>,
    model: Arc<dyn MeasurementModel>,
    z: DVector<f64>,
    meas_precision: DMatrix<f64>,
    linearization_point: DVector<f64>,
    /// Incoming variable-to-factor messages, one per slot.
    inbox: Vec<CanonicalGaussian>,
    /// Last factor-to-variable message sent on each slot.
    outbox: Vec<CanonicalGaussian>,
    cached_likelihood: Option<CanonicalGaussian>,
}

impl FactorNode {
    pub fn slots(&self) -> &[VarSlot] {
        &self.slots
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn meas_precision(&self) -> &DMatrix<f64> {
        &self.meas_precision
    }

    pub fn linearization_point(&self) -> &DVector<f64> {
        &self.linearization_point
    }

    pub fn model(&self) -> &Arc<dyn MeasurementModel> {
        &self.model
    }

    pub fn inbox(&self) -> &[CanonicalGaussian] {
        &self.inbox
    }

    pub fn outbox(&self) -> &[CanonicalGaussian] {
        &self.outbox
    }

    pub fn slot_of(&self, slot: VarSlot) -> Option<usize> {
        self.slots.iter().position(|s| *s == slot)
    }

    fn offset(&self, slot: usize) -> usize {
        self.dims[..slot].iter().sum()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Replaces the observation, e.g. when a pose anchor moves.
    pub fn set_observation(&mut self, z: DVector<f64>) {
        self.z = z;
        self.cached_likelihood = None;
    }

    /// Replaces the measurement model and its precision, e.g. when the time
    /// gap of a dynamics factor changes. The measurement dimension must stay
    /// the same.
    pub fn set_measurement(
        &mut self,
        model: Arc<dyn MeasurementModel>,
        meas_precision: DMatrix<f64>,
    ) -> Result<(), GbpError> {
        if meas_precision.shape() != self.meas_precision.shape() {
            return Err(GbpError::Shape(format!(
                "precision {}x{} replacing {}x{}",
                meas_precision.nrows(),
                meas_precision.ncols(),
                self.meas_precision.nrows(),
                self.meas_precision.ncols()
            )));
        }
        self.model = model;
        self.meas_precision = meas_precision;
        self.cached_likelihood = None;
        Ok(())
    }

    /// Gaussian likelihood over the stacked variables, linearized at the
    /// current linearization point:
    /// `η = Jᵀ Λ (J X⁰ + z − h(X⁰))`, `Λ_f = Jᵀ Λ J`.
    pub fn likelihood(&self) -> Result<CanonicalGaussian, GbpError> {
        if let Some(l) = &self.cached_likelihood {
            return Ok(l.clone());
        }
        self.compute_likelihood()
    }

    fn compute_likelihood(&self) -> Result<CanonicalGaussian, GbpError> {
        let x0 = &self.linearization_point;
        let h0 = self.model.measure(x0);
        let jac = self.model.jacobian(x0);
        if h0.iter().chain(jac.iter()).any(|v| !v.is_finite()) {
            return Err(GbpError::NonFiniteFactor(self.id));
        }
        let n = self.total_dim();
        if jac.iter().all(|v| *v == 0.0) {
            return Ok(CanonicalGaussian::zeros(n));
        }
        let jt_lam = jac.transpose() * &self.meas_precision;
        let residual = &jac * x0 + &self.z - h0;
        let eta = &jt_lam * residual;
        let lam = jt_lam * jac;
        Ok(CanonicalGaussian::new(eta, lam)?)
    }

    /// Makes `cached_likelihood` current: linear factors keep theirs until the
    /// observation or model changes, non-linear ones relinearize every call.
    fn refresh_likelihood(&mut self) -> Result<(), GbpError> {
        if !self.model.is_linear() || self.cached_likelihood.is_none() {
            self.cached_likelihood = Some(self.compute_likelihood()?);
        }
        Ok(())
    }

    /// Undamped message to `slot`: the likelihood times the inbound messages
    /// of every other slot, marginalized onto `slot`'s block.
    pub fn message_to(&self, slot: usize, likelihood: &CanonicalGaussian) -> Result<CanonicalGaussian, GbpError> {
        if self.slots.len() == 1 {
            return Ok(likelihood.clone());
        }
        let offset = self.offset(slot);
        let dim = self.dims[slot];
        if likelihood.is_zero_information() {
            return Ok(CanonicalGaussian::zeros(dim));
        }
        let n = self.total_dim();
        if n <= SMALL {
            let mut eta = [0.0; SMALL];
            let mut lam = [0.0; SMALL * SMALL];
            eta[..n].copy_from_slice(likelihood.eta().as_slice());
            lam[..n * n].copy_from_slice(likelihood.lam().as_slice());
            for (other, msg) in self.inbox.iter().enumerate() {
                if other == slot {
                    continue;
                }
                let (o, d) = (self.offset(other), self.dims[other]);
                let (me, ml) = (msg.eta().as_slice(), msg.lam().as_slice());
                for i in 0..d {
                    eta[o + i] += me[i];
                    for j in 0..d {
                        lam[(o + i) * n + o + j] += ml[i * d + j];
                    }
                }
            }
            return Ok(CanonicalGaussian::marginal_of_small_joint(&eta, &lam, n, offset, dim)?);
        }
        let mut joint = likelihood.clone();
        for (other, msg) in self.inbox.iter().enumerate() {
            if other != slot {
                joint.add_block(self.offset(other), msg)?;
            }
        }
        let keep: Vec<usize> = (offset..offset + dim).collect();
        Ok(joint.marginalize(&keep)?)
    }
}

/// Counters for messages the engine refused to store.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct GbpDiagnostics {
    /// Messages with a negative precision direction, replaced by the previous one.
    pub rejected_messages: u64,
    /// Factor computations that failed (marginalization or non-finite model).
    pub failed_messages: u64,
}

#[derive(Debug, Clone)]
pub struct GbpGraph {
    variables: Vec<VariableNode>,
    factors: BTreeMap<FactorId, FactorNode>,
    damping: f64,
    next_factor: u64,
    diagnostics: GbpDiagnostics,
}

impl GbpGraph {
    pub fn new(damping: f64) -> Self {
        assert!((0.0..1.0).contains(&damping), "damping must be in [0, 1)");
        Self {
            variables: Vec::new(),
            factors: BTreeMap::new(),
            damping,
            next_factor: 0,
            diagnostics: GbpDiagnostics::default(),
        }
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn diagnostics(&self) -> GbpDiagnostics {
        self.diagnostics
    }

    /// Adds a variable whose linearization point starts at `initial`.
    pub fn add_variable(
        &mut self,
        initial: DVector<f64>,
        prior: Option<CanonicalGaussian>,
    ) -> Result<VariableId, GbpError> {
        let dim = initial.len();
        if let Some(p) = &prior {
            if p.dim() != dim {
                return Err(GbpError::Shape(format!("prior dim {} for variable dim {dim}", p.dim())));
            }
        }
        let id = VariableId(self.variables.len());
        let mut node = VariableNode {
            id,
            dim,
            belief: CanonicalGaussian::zeros(dim),
            inbox: BTreeMap::new(),
            prior,
            lin_point: initial,
            has_mean: false,
        };
        node.recompute_belief();
        self.variables.push(node);
        Ok(id)
    }

    /// Adds a factor. `remote_dims` and `remote_points` give the dimension
    /// and initial linearization point of each remote slot, in slot order.
    pub fn add_factor(
        &mut self,
        kind: FactorKind,
        slots: Vec<VarSlot>,
        model: Arc<dyn MeasurementModel>,
        z: DVector<f64>,
        meas_precision: DMatrix<f64>,
        remote_points: &[DVector<f64>],
    ) -> Result<FactorId, GbpError> {
        if slots.is_empty() {
            return Err(GbpError::Shape("factor without variables".into()));
        }
        let mut dims = Vec::with_capacity(slots.len());
        let mut lin = Vec::new();
        let mut remote_iter = remote_points.iter();
        for slot in &slots {
            match *slot {
                VarSlot::Local(v) => {
                    let var = self.variables.get(v.0).ok_or(GbpError::UnknownVariable(v))?;
                    dims.push(var.dim);
                    lin.extend(var.lin_point.iter().copied());
                }
                VarSlot::Remote { .. } => {
                    let p = remote_iter
                        .next()
                        .ok_or_else(|| GbpError::Shape("missing remote linearization point".into()))?;
                    dims.push(p.len());
                    lin.extend(p.iter().copied());
                }
            }
        }
        if meas_precision.nrows() != z.len() || meas_precision.ncols() != z.len() {
            return Err(GbpError::Shape(format!(
                "precision {}x{} for measurement of dim {}",
                meas_precision.nrows(),
                meas_precision.ncols(),
                z.len()
            )));
        }
        let id = FactorId(self.next_factor);
        self.next_factor += 1;
        let inbox = dims.iter().map(|d| CanonicalGaussian::zeros(*d)).collect::<Vec<_>>();
        let factor = FactorNode {
            id,
            kind,
            outbox: inbox.clone(),
            inbox,
            dims: dims.clone(),
            slots: slots.clone(),
            model,
            z,
            meas_precision,
            linearization_point: DVector::from_vec(lin),
            cached_likelihood: None,
        };
        for (slot, d) in slots.iter().zip(&dims) {
            if let VarSlot::Local(v) = slot {
                self.variables[v.0].inbox.insert(id, CanonicalGaussian::zeros(*d));
            }
        }
        self.factors.insert(id, factor);
        Ok(id)
    }

    /// Deletes a factor and its inbox slots on local variables; beliefs are
    /// recomputed without its messages.
    pub fn remove_factor(&mut self, id: FactorId) -> Result<FactorNode, GbpError> {
        let factor = self.factors.remove(&id).ok_or(GbpError::UnknownFactor(id))?;
        for slot in &factor.slots {
            if let VarSlot::Local(v) = slot {
                let var = &mut self.variables[v.0];
                var.inbox.remove(&id);
                var.recompute_belief();
            }
        }
        Ok(factor)
    }

    pub fn variable(&self, id: VariableId) -> Option<&VariableNode> {
        self.variables.get(id.0)
    }

    pub fn variables(&self) -> &[VariableNode] {
        &self.variables
    }

    pub fn factor(&self, id: FactorId) -> Option<&FactorNode> {
        self.factors.get(&id)
    }

    pub fn factor_mut(&mut self, id: FactorId) -> Option<&mut FactorNode> {
        self.factors.get_mut(&id)
    }

    pub fn factors(&self) -> impl Iterator<Item = &FactorNode> {
        self.factors.values()
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    pub fn set_prior(&mut self, id: VariableId, prior: Option<CanonicalGaussian>) -> Result<(), GbpError> {
        let var = self.variables.get_mut(id.0).ok_or(GbpError::UnknownVariable(id))?;
        var.prior = prior;
        var.recompute_belief();
        Ok(())
    }

    /// Overrides a variable's linearization point (used before any belief exists).
    pub fn set_linearization_point(&mut self, id: VariableId, point: DVector<f64>) -> Result<(), GbpError> {
        let var = self.variables.get_mut(id.0).ok_or(GbpError::UnknownVariable(id))?;
        if point.len() != var.dim {
            return Err(GbpError::Shape("linearization point dimension".into()));
        }
        var.lin_point = point;
        Ok(())
    }

    /// Stores an inbound message for a remote slot along with the sender's
    /// current mean of that variable.
    pub fn set_remote_message(
        &mut self,
        factor: FactorId,
        slot: usize,
        message: CanonicalGaussian,
        sender_mean: &DVector<f64>,
    ) -> Result<(), GbpError> {
        let f = self.factors.get_mut(&factor).ok_or(GbpError::UnknownFactor(factor))?;
        if !matches!(f.slots.get(slot), Some(VarSlot::Remote { .. })) {
            return Err(GbpError::NotRemote { factor, slot });
        }
        let d = f.dims[slot];
        if message.dim() != d || sender_mean.len() != d {
            return Err(GbpError::Shape(format!(
                "remote payload dim {} for slot dim {d}",
                message.dim()
            )));
        }
        let offset = f.offset(slot);
        f.linearization_point.rows_mut(offset, d).copy_from(sender_mean);
        f.inbox[slot] = message;
        Ok(())
    }

    /// Recomputes and returns the belief of `id`: prior × Π inbox.
    pub fn variable_belief_update(&mut self, id: VariableId) -> Result<&CanonicalGaussian, GbpError> {
        let var = self.variables.get_mut(id.0).ok_or(GbpError::UnknownVariable(id))?;
        var.recompute_belief();
        Ok(&var.belief)
    }

    /// Message from variable `id` to factor `factor`: the current belief with
    /// that factor's own contribution divided out.
    pub fn variable_to_factor_message(&self, id: VariableId, factor: FactorId) -> Result<CanonicalGaussian, GbpError> {
        let var = self.variables.get(id.0).ok_or(GbpError::UnknownVariable(id))?;
        let incoming = var
            .inbox
            .get(&factor)
            .ok_or(GbpError::NotConnected { variable: id, factor })?;
        Ok(var.belief.divide(incoming)?)
    }

    /// Linearized likelihood of `factor` at its stored linearization point.
    pub fn factor_likelihood(&self, factor: FactorId) -> Result<CanonicalGaussian, GbpError> {
        self.factors
            .get(&factor)
            .ok_or(GbpError::UnknownFactor(factor))?
            .likelihood()
    }

    /// Damped factor-to-variable message for local variable `id`, computed
    /// from the factor's current inbox. Nothing is stored.
    pub fn factor_to_variable_message(&self, factor: FactorId, id: VariableId) -> Result<CanonicalGaussian, GbpError> {
        let f = self.factors.get(&factor).ok_or(GbpError::UnknownFactor(factor))?;
        let slot = f
            .slot_of(VarSlot::Local(id))
            .ok_or(GbpError::NotConnected { variable: id, factor })?;
        let likelihood = f.likelihood()?;
        let msg = f.message_to(slot, &likelihood)?;
        self.damp(f, slot, msg)
    }

    fn damp(&self, f: &FactorNode, slot: usize, msg: CanonicalGaussian) -> Result<CanonicalGaussian, GbpError> {
        if f.slots.len() < 2 || self.damping == 0.0 {
            return Ok(msg);
        }
        Ok(msg.damped(&f.outbox[slot], self.damping)?)
    }

    /// Runs `n` synchronous sweeps over the factors accepted by `filter`.
    ///
    /// Each sweep: every variable sends to its accepted factors, then every
    /// accepted factor relinearizes at the current means and sends to its
    /// local variables, then every variable updates its belief.
    pub fn iterate<F>(&mut self, n: usize, filter: F)
    where
        F: Fn(&FactorNode) -> bool,
    {
        let active: Vec<FactorId> = self.factors.values().filter(|f| filter(f)).map(|f| f.id).collect();
        for _ in 0..n {
            self.sweep(&active);
        }
    }

    fn sweep(&mut self, active: &[FactorId]) {
        let mut diag = self.diagnostics;

        // variables -> factors
        let mut scratch: Option<CanonicalGaussian> = None;
        for fid in active {
            let f = self.factors.get_mut(fid).expect("active factor exists");
            for slot in 0..f.slots.len() {
                let VarSlot::Local(v) = f.slots[slot] else { continue };
                let var = &self.variables[v.0];
                let incoming = &var.inbox[fid];
                let msg = scratch.get_or_insert_with(|| CanonicalGaussian::zeros(incoming.dim()));
                match msg.assign_quotient(&var.belief, incoming) {
                    Ok(()) if msg.is_finite() && msg.is_psd() => std::mem::swap(&mut f.inbox[slot], msg),
                    Ok(()) => diag.rejected_messages += 1,
                    Err(_) => diag.failed_messages += 1,
                }
            }
        }

        // factors -> variables
        for fid in active {
            let f = self.factors.get_mut(fid).expect("active factor exists");
            if !f.model.is_linear() {
                for slot in 0..f.slots.len() {
                    if let VarSlot::Local(v) = f.slots[slot] {
                        let offset = f.offset(slot);
                        let d = f.dims[slot];
                        let point = &self.variables[v.0].lin_point;
                        f.linearization_point.rows_mut(offset, d).copy_from(point);
                    }
                }
            }
            if f.refresh_likelihood().is_err() {
                diag.failed_messages += 1;
                continue;
            }
            let likelihood = f.cached_likelihood.take().expect("likelihood refreshed");
            // An inactive factor whose last messages were already empty would
            // send empty messages again (damping included): nothing to do.
            if likelihood.is_zero_information()
                && f.slots
                    .iter()
                    .zip(&f.outbox)
                    .all(|(s, m)| matches!(s, VarSlot::Remote { .. }) || m.is_zero_information())
            {
                if f.model.is_linear() {
                    f.cached_likelihood = Some(likelihood);
                }
                continue;
            }
            for slot in 0..f.slots.len() {
                let VarSlot::Local(v) = f.slots[slot] else { continue };
                let msg = f.message_to(slot, &likelihood).and_then(|mut m| {
                    if f.slots.len() >= 2 && self.damping != 0.0 {
                        m.damp_assign(&f.outbox[slot], self.damping)?;
                    }
                    Ok(m)
                });
                match msg {
                    Ok(m) if m.is_finite() && m.is_psd() => {
                        f.outbox[slot].assign(&m);
                        self.variables[v.0].inbox.insert(*fid, m);
                    }
                    Ok(_) => diag.rejected_messages += 1,
                    Err(_) => diag.failed_messages += 1,
                }
            }
            if f.model.is_linear() {
                f.cached_likelihood = Some(likelihood);
            }
        }

        for var in &mut self.variables {
            var.recompute_belief();
        }
        self.diagnostics = diag;
    }
}
