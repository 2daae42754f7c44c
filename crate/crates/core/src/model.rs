//! Latent world model: representation `h`, dynamics `g` and prediction `f`,
//! plus the multi-term training loss.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{softmax, Activation, DenseNet, Gradient, Layout, Matrix, ParamVector, Tape, Var};

/// Default loss coefficients.
pub const DEFAULT_POLICY_COEFF: f64 = 1.0;
pub const DEFAULT_VALUE_COEFF: f64 = 0.25;
pub const DEFAULT_CONSISTENCY_COEFF: f64 = 2.0;
/// Default unroll length.
pub const DEFAULT_UNROLL_STEPS: usize = 5;
/// Backward scaling applied to the latent after every dynamics step.
pub const DYNAMICS_GRAD_SCALE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    /// Width of a stacked observation.
    pub obs_dim: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub action_count: usize,
}

/// The three networks of the world model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    /// `h`: observation → latent.
    Representation,
    /// `g`: (latent, action) → (latent, reward).
    Dynamics,
    /// `f`: latent → (policy, value).
    Prediction,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Representation, Component::Dynamics, Component::Prediction];

    /// Segment-name prefix of this component's parameters.
    pub fn prefix(self) -> &'static str {
        match self {
            Component::Representation => "repr.",
            Component::Dynamics => "dyn.",
            Component::Prediction => "pred.",
        }
    }

    pub fn letter(self) -> char {
        match self {
            Component::Representation => 'h',
            Component::Dynamics => 'g',
            Component::Prediction => 'f',
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "h" | "repr" | "representation" => Ok(Component::Representation),
            "g" | "dyn" | "dynamics" => Ok(Component::Dynamics),
            "f" | "pred" | "prediction" => Ok(Component::Prediction),
            other => Err(Error::Config(format!("unknown model component {other:?}"))),
        }
    }
}

/// Parses `"h,g"` style component lists; the empty string is the empty set.
pub fn parse_components(s: &str) -> Result<Vec<Component>> {
    let mut out: Vec<Component> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

pub fn format_components(cs: &[Component]) -> String {
    cs.iter().map(|c| c.letter().to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub policy: Vec<f64>,
    pub value: f64,
}

/// One position of an unrolled trajectory in latent space. `reward` is `None`
/// at the root, which is produced by `h` rather than `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnrollStep {
    pub latent: LatentState,
    pub reward: Option<f64>,
    pub policy: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldModel {
    shape: ModelShape,
    params: ParamVector,
    repr: DenseNet,
    dynamics: DenseNet,
    prediction: DenseNet,
}

impl WorldModel {
    fn architecture(shape: ModelShape) -> Result<(DenseNet, DenseNet, DenseNet, std::sync::Arc<Layout>)> {
        let ModelShape {
            obs_dim,
            latent_dim,
            hidden_dim,
            action_count,
        } = shape;
        if obs_dim == 0 || latent_dim == 0 || hidden_dim == 0 || action_count == 0 {
            return Err(Error::Config(format!("degenerate model shape {shape:?}")));
        }
        let mut b = Layout::builder();
        let repr = DenseNet::register(
            &mut b,
            "repr",
            &[obs_dim, hidden_dim, latent_dim],
            &[Activation::Relu, Activation::Tanh],
        )?;
        let dynamics = DenseNet::register(
            &mut b,
            "dyn",
            &[latent_dim + action_count, hidden_dim, latent_dim + 1],
            &[Activation::Relu, Activation::Identity],
        )?;
        let prediction = DenseNet::register(
            &mut b,
            "pred",
            &[latent_dim, hidden_dim, action_count + 1],
            &[Activation::Relu, Activation::Identity],
        )?;
        Ok((repr, dynamics, prediction, b.build()))
    }

    /// All-zero parameters.
    pub fn zeros(shape: ModelShape) -> Result<Self> {
        let (repr, dynamics, prediction, layout) = Self::architecture(shape)?;
        Ok(Self {
            shape,
            params: ParamVector::zeros(layout),
            repr,
            dynamics,
            prediction,
        })
    }

    pub fn random<R: Rng + ?Sized>(shape: ModelShape, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(shape)?;
        m.repr.init(&mut m.params, rng);
        m.dynamics.init(&mut m.params, rng);
        m.prediction.init(&mut m.params, rng);
        Ok(m)
    }

    /// Wraps existing parameters; their layout must match `shape` exactly.
    pub fn from_params(shape: ModelShape, params: ParamVector) -> Result<Self> {
        let (repr, dynamics, prediction, layout) = Self::architecture(shape)?;
        if **params.layout() != *layout {
            return Err(Error::Config(format!(
                "checkpoint segments do not match model shape {shape:?}"
            )));
        }
        Ok(Self {
            shape,
            params,
            repr,
            dynamics,
            prediction,
        })
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn action_count(&self) -> usize {
        self.shape.action_count
    }

    pub fn latent_dim(&self) -> usize {
        self.shape.latent_dim
    }

    /// Flat parameter ranges owned by `component`.
    pub fn component_ranges(&self, component: Component) -> Vec<std::ops::Range<usize>> {
        self.params
            .layout()
            .with_prefix(component.prefix())
            .map(|s| s.range())
            .collect()
    }

    /// Zeroes the gradient of every frozen component.
    pub fn mask_gradient(grad: &mut Gradient, frozen: &[Component]) {
        for c in frozen {
            grad.zero_prefix(c.prefix());
        }
    }

    pub fn represent_batch(&self, obs: &Matrix) -> Result<Matrix> {
        self.repr.forward(&self.params, obs)
    }

    pub fn represent(&self, obs: &[f64]) -> Result<LatentState> {
        let out = self.represent_batch(&Matrix::row_vector(obs))?;
        Ok(LatentState { z: out.into_data() })
    }

    pub fn dynamics(&self, z: &LatentState, action: usize) -> Result<(LatentState, f64)> {
        if action >= self.shape.action_count {
            return Err(Error::Argument(format!(
                "action {action} out of range for {} actions",
                self.shape.action_count
            )));
        }
        self.check_latent(z)?;
        let mut input = Vec::with_capacity(self.shape.latent_dim + self.shape.action_count);
        input.extend_from_slice(&z.z);
        input.extend((0..self.shape.action_count).map(|a| if a == action { 1.0 } else { 0.0 }));
        let out = self.dynamics.forward(&self.params, &Matrix::row_vector(&input))?;
        let out = out.data();
        let l = self.shape.latent_dim;
        let next = out[..l].iter().map(|x| x.tanh()).collect();
        Ok((LatentState { z: next }, out[l]))
    }

    pub fn predict(&self, z: &LatentState) -> Result<Prediction> {
        self.check_latent(z)?;
        let out = self.prediction.forward(&self.params, &Matrix::row_vector(&z.z))?;
        let out = out.data();
        let a = self.shape.action_count;
        Ok(Prediction {
            policy: softmax(&out[..a]),
            value: out[a],
        })
    }

    /// Batched `f`: returns (policies `[B × A]`, values `[B]`).
    pub fn predict_batch(&self, latents: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        let out = self.prediction.forward(&self.params, latents)?;
        let a = self.shape.action_count;
        let mut policies = Matrix::zeros(out.rows(), a);
        let mut values = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            policies.row_mut(r).copy_from_slice(&softmax(&out.row(r)[..a]));
            values.push(out.row(r)[a]);
        }
        Ok((policies, values))
    }

    /// `h` then `f`.
    pub fn initial_inference(&self, obs: &[f64]) -> Result<(LatentState, Prediction)> {
        let z = self.represent(obs)?;
        let p = self.predict(&z)?;
        Ok((z, p))
    }

    /// Predicted values of a batch of observations.
    pub fn values_batch(&self, obs: &Matrix) -> Result<Vec<f64>> {
        let z = self.represent_batch(obs)?;
        Ok(self.predict_batch(&z)?.1)
    }

    pub fn unroll(&self, obs: &[f64], actions: &[usize]) -> Result<Vec<UnrollStep>> {
        let (mut z, p) = self.initial_inference(obs)?;
        let mut steps = vec![UnrollStep {
            latent: z.clone(),
            reward: None,
            policy: p.policy,
            value: p.value,
        }];
        for &a in actions {
            let (next, r) = self.dynamics(&z, a)?;
            let p = self.predict(&next)?;
            steps.push(UnrollStep {
                latent: next.clone(),
                reward: Some(r),
                policy: p.policy,
                value: p.value,
            });
            z = next;
        }
        Ok(steps)
    }

    fn check_latent(&self, z: &LatentState) -> Result<()> {
        if z.z.len() != self.shape.latent_dim {
            return Err(Error::Config(format!(
                "latent has {} entries, model expects {}",
                z.z.len(),
                self.shape.latent_dim
            )));
        }
        Ok(())
    }
}

/// Training targets for `B` sampled positions unrolled `K` steps.
///
/// Per-step fields are stored step-major: `target_policies[k]` holds the
/// `[B × A]` policy targets for unroll step `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnrollBatch {
    /// `[B × obs_dim]` stacked observations at the sampled positions.
    pub observations: Matrix,
    /// `actions[b][k]`, `k < K`.
    pub actions: Vec<Vec<usize>>,
    /// `[B × K]` environment rewards `u`.
    pub target_rewards: Matrix,
    /// `K + 1` matrices of `[B × A]` policy targets `π`.
    pub target_policies: Vec<Matrix>,
    /// `[B × (K+1)]` value targets `z`.
    pub target_values: Matrix,
    /// `K` matrices of `[B × obs_dim]` stacked observations at `t + k + 1`.
    pub next_observations: Vec<Matrix>,
    /// `[B]` importance-sampling weights.
    pub importance_weights: Vec<f64>,
}

impl UnrollBatch {
    pub fn len(&self) -> usize {
        self.observations.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn unroll_steps(&self) -> usize {
        self.next_observations.len()
    }

    pub fn validate(&self, shape: &ModelShape) -> Result<()> {
        let b = self.len();
        let k = self.unroll_steps();
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.observations.cols() != shape.obs_dim {
            return fail(format!(
                "observation width {} != model input {}",
                self.observations.cols(),
                shape.obs_dim
            ));
        }
        if self.actions.len() != b || self.actions.iter().any(|a| a.len() != k) {
            return fail("actions must be B x K".into());
        }
        if self.actions.iter().flatten().any(|&a| a >= shape.action_count) {
            return fail("action id out of range".into());
        }
        if (self.target_rewards.rows(), self.target_rewards.cols()) != (b, k) {
            return fail("target rewards must be B x K".into());
        }
        if (self.target_values.rows(), self.target_values.cols()) != (b, k + 1) {
            return fail("target values must be B x (K+1)".into());
        }
        if self.target_policies.len() != k + 1 {
            return fail("need K+1 policy target blocks".into());
        }
        for (step, p) in self.target_policies.iter().enumerate() {
            if (p.rows(), p.cols()) != (b, shape.action_count) {
                return fail(format!("policy targets at step {step} must be B x A"));
            }
            for r in 0..b {
                let s: f64 = p.row(r).iter().sum();
                if (s - 1.0).abs() > 1e-9 || p.row(r).iter().any(|&x| x < 0.0) {
                    return fail(format!("policy target row {r} at step {step} is not a distribution (sum {s})"));
                }
            }
        }
        for n in &self.next_observations {
            if (n.rows(), n.cols()) != (b, shape.obs_dim) {
                return fail("next observations must be B x obs_dim".into());
            }
        }
        if self.importance_weights.len() != b {
            return fail("need one importance weight per sample".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossCoefficients {
    /// λ1
    pub policy: f64,
    /// λ2
    pub value: f64,
    /// λ3
    pub consistency: f64,
}

impl Default for LossCoefficients {
    fn default() -> Self {
        Self {
            policy: DEFAULT_POLICY_COEFF,
            value: DEFAULT_VALUE_COEFF,
            consistency: DEFAULT_CONSISTENCY_COEFF,
        }
    }
}

/// Per-term batch losses. `total = reward + λ1·policy + λ2·value + λ3·consistency`;
/// the weight-decay term lives in the optimizer.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LossBreakdown {
    pub reward_loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub consistency_loss: f64,
    pub total: f64,
    /// Root value predictions `v̂_0`, one per sample (used for priorities).
    pub value_predictions: Vec<f64>,
}

fn one_hot_rows(actions: &[Vec<usize>], step: usize, n: usize) -> Matrix {
    let mut m = Matrix::zeros(actions.len(), n);
    for (r, a) in actions.iter().enumerate() {
        m.row_mut(r)[a[step]] = 1.0;
    }
    m
}

fn column(m: &Matrix, c: usize) -> Matrix {
    m.slice_cols(c, c + 1)
}

struct Recorded {
    total: Var,
    breakdown: LossBreakdown,
}

fn record_loss(tape: &mut Tape<'_>, model: &WorldModel, batch: &UnrollBatch, coeffs: LossCoefficients) -> Result<Recorded> {
    batch.validate(&model.shape)?;
    let n = batch.len();
    if n == 0 {
        return Err(Error::Validation("empty batch".into()));
    }
    let k_steps = batch.unroll_steps();
    let a_count = model.shape.action_count;
    let l = model.shape.latent_dim;
    let w = &batch.importance_weights;
    let per_sample = 1.0 / n as f64;
    let per_step = if k_steps > 0 { per_sample / k_steps as f64 } else { 0.0 };

    let obs = tape.constant(batch.observations.clone());
    let mut latent = model.repr.record(tape, obs);

    let mut reward_terms = Vec::new();
    let mut policy_terms = Vec::new();
    let mut value_terms = Vec::new();
    let mut consistency_terms = Vec::new();
    let mut value_predictions = Vec::new();

    for k in 0..=k_steps {
        if k > 0 {
            let action = tape.constant(one_hot_rows(&batch.actions, k - 1, a_count));
            let input = tape.concat(&[latent, action]);
            let out = model.dynamics.record(tape, input);
            let pre = tape.slice(out, 0, l);
            let next = tape.tanh(pre);
            let reward = tape.slice(out, l, l + 1);
            reward_terms.push(tape.squared_error(reward, column(&batch.target_rewards, k - 1), w, per_step));
            // stop-gradient target: encoder output on the true next observation
            let target = model.repr.forward(&model.params, &batch.next_observations[k - 1])?;
            consistency_terms.push(tape.squared_error(next, target, w, per_step / l as f64));
            latent = next;
        }
        let out = model.prediction.record(tape, latent);
        let logits = tape.slice(out, 0, a_count);
        let value = tape.slice(out, a_count, a_count + 1);
        if k == 0 {
            value_predictions = tape.value(value).data().to_vec();
        }
        let scale = if k == 0 { per_sample } else { per_step };
        policy_terms.push(tape.cross_entropy(logits, batch.target_policies[k].clone(), w, scale));
        value_terms.push(tape.squared_error(value, column(&batch.target_values, k), w, scale));
        if k > 0 {
            latent = tape.scale_grad(latent, DYNAMICS_GRAD_SCALE);
        }
    }

    let sum = |tape: &mut Tape<'_>, terms: &[Var]| -> Option<Var> {
        if terms.is_empty() {
            None
        } else {
            let t: Vec<(Var, f64)> = terms.iter().map(|&v| (v, 1.0)).collect();
            Some(tape.linear_combination(&t))
        }
    };
    let reward = sum(tape, &reward_terms);
    let policy = sum(tape, &policy_terms).expect("root step always present");
    let value = sum(tape, &value_terms).expect("root step always present");
    let consistency = sum(tape, &consistency_terms);

    let scalar = |tape: &Tape<'_>, v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
    let breakdown = LossBreakdown {
        reward_loss: scalar(tape, reward),
        policy_loss: tape.scalar(policy),
        value_loss: tape.scalar(value),
        consistency_loss: scalar(tape, consistency),
        total: 0.0,
        value_predictions,
    };
    for (name, v) in [
        ("reward", breakdown.reward_loss),
        ("policy", breakdown.policy_loss),
        ("value", breakdown.value_loss),
        ("consistency", breakdown.consistency_loss),
    ] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("{name} loss")));
        }
    }

    let mut terms = vec![(policy, coeffs.policy), (value, coeffs.value)];
    if let Some(r) = reward {
        terms.push((r, 1.0));
    }
    if let Some(c) = consistency {
        terms.push((c, coeffs.consistency));
    }
    let total = tape.linear_combination(&terms);
    let breakdown = LossBreakdown {
        total: tape.scalar(total),
        ..breakdown
    };
    Ok(Recorded { total, breakdown })
}

/// The full unrolled loss and its gradient with respect to every parameter.
pub fn ez_loss(model: &WorldModel, batch: &UnrollBatch, coeffs: LossCoefficients) -> Result<(LossBreakdown, Gradient)> {
    let mut tape = Tape::new(&model.params);
    let rec = record_loss(&mut tape, model, batch, coeffs)?;
    let grad = tape.backward(rec.total)?;
    Ok((rec.breakdown, grad))
}

/// Loss value only, no backward pass.
pub fn ez_loss_value(model: &WorldModel, batch: &UnrollBatch, coeffs: LossCoefficients) -> Result<LossBreakdown> {
    let mut tape = Tape::new(&model.params);
    Ok(record_loss(&mut tape, model, batch, coeffs)?.breakdown)
}

/// Behavioral-cloning loss through `h` then `f` only: mean cross-entropy of
/// the predicted policy against the logged actions.
pub fn bc_loss(model: &WorldModel, observations: &Matrix, actions: &[usize]) -> Result<(f64, Gradient)> {
    let n = observations.rows();
    if n == 0 || actions.len() != n {
        return Err(Error::Validation(format!("{n} observations but {} actions", actions.len())));
    }
    let a_count = model.shape.action_count;
    if let Some(a) = actions.iter().find(|&&a| a >= a_count) {
        return Err(Error::Validation(format!("action {a} out of range")));
    }
    let mut tape = Tape::new(&model.params);
    let obs = tape.constant(observations.clone());
    let latent = model.repr.record(&mut tape, obs);
    let out = model.prediction.record(&mut tape, latent);
    let logits = tape.slice(out, 0, a_count);
    let targets = one_hot_rows(&actions.iter().map(|&a| vec![a]).collect::<Vec<_>>(), 0, a_count);
    let loss = tape.cross_entropy(logits, targets, &vec![1.0; n], 1.0 / n as f64);
    let value = tape.scalar(loss);
    let grad = tape.backward(loss)?;
    Ok((value, grad))
}
