//! Fully connected sigmoid networks trained by per-example backpropagation on
//! squared error, with momentum.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outputs are kept strictly inside (0, 1) even when the logistic saturates
/// in floating point.
const OUT_MIN: f64 = f64::EPSILON;
const OUT_MAX: f64 = 1.0 - f64::EPSILON;

#[inline]
fn sigmoid(z: f64) -> f64 {
    (1.0 / (1.0 + (-z).exp())).clamp(OUT_MIN, OUT_MAX)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl Layout {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        Layout {
            input,
            hidden: hidden.to_vec(),
            output,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid(format!("layer sizes must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// `(inputs, outputs)` of every weight layer.
    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut sizes = vec![self.input];
        sizes.extend(&self.hidden);
        sizes.push(self.output);
        sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One affine layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkRepr {
    layout: Layout,
    layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkRepr", into = "NetworkRepr")]
pub struct Network {
    layout: Layout,
    layers: Vec<Layer>,
}

impl TryFrom<NetworkRepr> for Network {
    type Error = Error;

    fn try_from(r: NetworkRepr) -> Result<Self> {
        Network::from_layers(r.layout, r.layers)
    }
}

impl From<Network> for NetworkRepr {
    fn from(n: Network) -> Self {
        NetworkRepr {
            layout: n.layout,
            layers: n.layers,
        }
    }
}

/// Weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
pub fn init_network(layout: &Layout, seed: u64) -> Result<Network> {
    layout.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = layout
        .shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Layer {
                weights: (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect(),
                biases: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(Network {
        layout: layout.clone(),
        layers,
    })
}

impl Network {
    pub fn from_layers(layout: Layout, layers: Vec<Layer>) -> Result<Self> {
        layout.validate()?;
        let shapes = layout.shapes();
        if shapes.len() != layers.len() {
            return Err(Error::invalid(format!(
                "layout needs {} layers, found {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (i, ((fan_in, fan_out), layer)) in shapes.iter().zip(&layers).enumerate() {
            if layer.weights.len() != fan_in * fan_out || layer.biases.len() != *fan_out {
                return Err(Error::invalid(format!("layer {i} does not match the layout")));
            }
            if !layer.weights.iter().chain(&layer.biases).all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Network { layout, layers })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut acts = self.activation_buffers();
        self.forward_into(x, &mut acts);
        Ok(acts.pop().expect("at least one layer"))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.layout.input {
            return Err(Error::DimensionMismatch {
                expected: self.layout.input,
                found: x.len(),
            });
        }
        Ok(())
    }

    fn activation_buffers(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect()
    }

    /// Fills `acts[i]` with the output of layer `i`.
    fn forward_into(&self, x: &[f64], acts: &mut [Vec<f64>]) {
        for (i, layer) in self.layers.iter().enumerate() {
            let (done, rest) = acts.split_at_mut(i);
            let input: &[f64] = if i == 0 { x } else { &done[i - 1] };
            let out = &mut rest[0];
            let fan_in = input.len();
            for (o, slot) in out.iter_mut().enumerate() {
                let row = &layer.weights[o * fan_in..(o + 1) * fan_in];
                let z = layer.biases[o] + row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>();
                *slot = sigmoid(z);
            }
        }
    }

    /// Half squared error of one example.
    pub fn loss(&self, x: &[f64], target: &[f64]) -> Result<f64> {
        let y = self.forward(x)?;
        if y.len() != target.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                found: target.len(),
            });
        }
        Ok(0.5 * y.iter().zip(target).map(|(a, t)| (a - t) * (a - t)).sum::<f64>())
    }

    /// Gradient of [`Network::loss`] with respect to every parameter, in the
    /// same shape as [`Network::layers`].
    pub fn gradient(&self, x: &[f64], target: &[f64]) -> Result<Vec<Layer>> {
        self.check_input(x)?;
        if target.len() != self.layout.output {
            return Err(Error::DimensionMismatch {
                expected: self.layout.output,
                found: target.len(),
            });
        }
        let mut scratch = Scratch::new(self);
        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer {
                weights: vec![0.0; l.weights.len()],
                biases: vec![0.0; l.biases.len()],
            })
            .collect();
        scratch.backprop(self, x, target, |layer, w_idx, g| match w_idx {
            Param::Weight(i) => grads[layer].weights[i] = g,
            Param::Bias(i) => grads[layer].biases[i] = g,
        });
        Ok(grads)
    }
}

enum Param {
    Weight(usize),
    Bias(usize),
}

/// Reusable forward/backward buffers.
struct Scratch {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(net: &Network) -> Self {
        Scratch {
            acts: net.activation_buffers(),
            deltas: net.activation_buffers(),
        }
    }

    /// Computes the loss gradient and hands each component to `sink`.
    fn backprop(&mut self, net: &Network, x: &[f64], target: &[f64], mut sink: impl FnMut(usize, Param, f64)) {
        net.forward_into(x, &mut self.acts);
        let last = net.layers.len() - 1;
        for ((d, &y), &t) in self.deltas[last].iter_mut().zip(&self.acts[last]).zip(target) {
            *d = (y - t) * y * (1.0 - y);
        }
        for l in (1..=last).rev() {
            let fan_in = self.acts[l - 1].len();
            let (lower, upper) = self.deltas.split_at_mut(l);
            let below = &mut lower[l - 1];
            below.iter_mut().for_each(|d| *d = 0.0);
            for (o, &d) in upper[0].iter().enumerate() {
                let row = &net.layers[l].weights[o * fan_in..(o + 1) * fan_in];
                for (b, w) in below.iter_mut().zip(row) {
                    *b += w * d;
                }
            }
            for (b, &a) in below.iter_mut().zip(&self.acts[l - 1]) {
                *b *= a * (1.0 - a);
            }
        }
        for l in 0..=last {
            let input: &[f64] = if l == 0 { x } else { &self.acts[l - 1] };
            let fan_in = input.len();
            for (o, &d) in self.deltas[l].iter().enumerate() {
                for (i, &a) in input.iter().enumerate() {
                    sink(l, Param::Weight(o * fan_in + i), d * a);
                }
                sink(l, Param::Bias(o), d);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Epoch budget of one training run (one ladder rung).
    pub max_epochs: usize,
    /// Give up early once this many epochs pass without fewer training
    /// errors than the best so far.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            learning_rate: 0.1,
            momentum: 0.9,
            max_epochs: 500,
            patience: None,
            seed: 0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be >= 1"));
        }
        if self.patience == Some(0) {
            return Err(Error::invalid("patience must be >= 1"));
        }
        Ok(())
    }
}

/// Output threshold separating the two classes of an islet network.
pub const SUCCESS_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub network: Network,
    pub converged: bool,
    pub epochs: usize,
    /// Training examples still misclassified at return time.
    pub errors: usize,
}

/// Supervised examples with per-example targets and a correctness test.
struct Task<'a, F> {
    inputs: Vec<&'a [f64]>,
    targets: Vec<Vec<f64>>,
    correct: F,
}

impl<F: Fn(&[f64], &[f64]) -> bool> Task<'_, F> {
    fn count_errors(&self, net: &Network, acts: &mut [Vec<f64>]) -> usize {
        self.inputs
            .iter()
            .zip(&self.targets)
            .filter(|(x, t)| {
                net.forward_into(x, acts);
                !(self.correct)(acts.last().expect("non-empty"), t)
            })
            .count()
    }

    fn run(&self, mut net: Network, params: &TrainParams) -> Result<TrainOutcome> {
        params.validate()?;
        for x in &self.inputs {
            net.check_input(x)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut scratch = Scratch::new(&net);
        let mut velocity: Vec<Layer> = net
            .layers
            .iter()
            .map(|l| Layer {
                weights: vec![0.0; l.weights.len()],
                biases: vec![0.0; l.biases.len()],
            })
            .collect();
        let mut order: Vec<usize> = (0..self.inputs.len()).collect();
        let mut errors = self.count_errors(&net, &mut scratch.acts);
        let mut epochs = 0;
        let (eta, mu) = (params.learning_rate, params.momentum);
        let (mut best_errors, mut best_epoch) = (errors, 0);
        while errors > 0 && epochs < params.max_epochs {
            if params.patience.is_some_and(|p| epochs - best_epoch >= p) {
                break;
            }
            order.shuffle(&mut rng);
            for &s in &order {
                // Gradient first (reads weights), then the momentum step.
                scratch.backprop(&net, self.inputs[s], &self.targets[s], |l, p, g| match p {
                    Param::Weight(i) => {
                        let v = &mut velocity[l].weights[i];
                        *v = mu * *v - eta * g;
                    }
                    Param::Bias(i) => {
                        let v = &mut velocity[l].biases[i];
                        *v = mu * *v - eta * g;
                    }
                });
                for (layer, v) in net.layers.iter_mut().zip(&velocity) {
                    layer.weights.iter_mut().zip(&v.weights).for_each(|(w, d)| *w += d);
                    layer.biases.iter_mut().zip(&v.biases).for_each(|(b, d)| *b += d);
                }
            }
            epochs += 1;
            errors = self.count_errors(&net, &mut scratch.acts);
            if errors < best_errors {
                best_errors = errors;
                best_epoch = epochs;
            }
        }
        if net.layers.iter().any(|l| !l.weights.iter().all(|w| w.is_finite())) {
            return Err(Error::Invariant("training diverged to non-finite weights".into()));
        }
        Ok(TrainOutcome {
            network: net,
            converged: errors == 0,
            epochs,
            errors,
        })
    }
}

/// Trains a single-output network to answer >= 0.5 on `positives` and < 0.5
/// on `negatives`. Stops as soon as every example is on the right side.
pub fn train(
    network: Network,
    positives: &[&[f64]],
    negatives: &[&[f64]],
    params: &TrainParams,
) -> Result<TrainOutcome> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Empty(
            "two-class training needs positive and negative examples".into(),
        ));
    }
    if network.layout.output != 1 {
        return Err(Error::invalid("two-class networks have one output"));
    }
    let task = Task {
        inputs: positives.iter().chain(negatives).copied().collect(),
        targets: std::iter::repeat_n(vec![1.0], positives.len())
            .chain(std::iter::repeat_n(vec![0.0], negatives.len()))
            .collect(),
        correct: |y: &[f64], t: &[f64]| (y[0] >= SUCCESS_THRESHOLD) == (t[0] >= 0.5),
    };
    task.run(network, params)
}

/// Trains a one-output-per-class network on one-hot targets; an example
/// counts as learned when its class has the largest output.
pub fn train_classifier(
    network: Network,
    inputs: &[&[f64]],
    classes: &[usize],
    params: &TrainParams,
) -> Result<TrainOutcome> {
    let outputs = network.layout.output;
    if inputs.is_empty() || inputs.len() != classes.len() {
        return Err(Error::invalid("need one class per training input"));
    }
    if let Some(c) = classes.iter().find(|&&c| c >= outputs) {
        return Err(Error::invalid(format!("class {c} has no output unit")));
    }
    let task = Task {
        inputs: inputs.to_vec(),
        targets: classes
            .iter()
            .map(|&c| (0..outputs).map(|o| if o == c { 1.0 } else { 0.0 }).collect())
            .collect(),
        correct: |y: &[f64], t: &[f64]| argmax(y) == argmax(t),
    };
    task.run(network, params)
}

/// Index of the largest value; the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Hidden-layer sizes tried in order: 2 to 100 units, then two layers 50-20.
pub fn default_ladder() -> Vec<Vec<usize>> {
    let mut ladder: Vec<Vec<usize>> = [2, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 100]
        .iter()
        .map(|&h| vec![h])
        .collect();
    ladder.push(vec![50, 20]);
    ladder
}

#[derive(Debug, Clone, PartialEq)]
pub struct Escalation {
    pub network: Network,
    pub converged: bool,
    /// Ladder index of the returned network.
    pub rung: usize,
    pub epochs: usize,
    pub errors: usize,
}

fn rung_seed(seed: u64, rung: usize) -> u64 {
    seed ^ (rung as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Tries each hidden layout of `ladder` in turn and keeps the first that
/// learns every example within the epoch budget. If none does, the rung with
/// the fewest remaining errors is returned, flagged as not converged.
pub fn escalate_architecture(
    positives: &[&[f64]],
    negatives: &[&[f64]],
    ladder: &[Vec<usize>],
    params: &TrainParams,
) -> Result<Escalation> {
    let input = positives
        .first()
        .ok_or_else(|| Error::Empty("no positive examples".into()))?
        .len();
    if ladder.is_empty() {
        return Err(Error::invalid("empty architecture ladder"));
    }
    let mut best: Option<Escalation> = None;
    for (rung, hidden) in ladder.iter().enumerate() {
        let seed = rung_seed(params.seed, rung);
        let net = init_network(&Layout::new(input, hidden, 1), seed)?;
        let out = train(net, positives, negatives, &TrainParams { seed, ..*params })?;
        let candidate = Escalation {
            network: out.network,
            converged: out.converged,
            rung,
            epochs: out.epochs,
            errors: out.errors,
        };
        if candidate.converged {
            return Ok(candidate);
        }
        if best.as_ref().is_none_or(|b| candidate.errors < b.errors) {
            best = Some(candidate);
        }
    }
    Ok(best.expect("ladder is non-empty"))
}
