use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::encoding::cosine_slices;
use crate::simulator::{DialogMode, Observation, SCALAR_FEATURES};
use crate::Scalar;

/// Layer widths. The state encoder is `3·embedding_dim + 4 -> hidden1 -> hidden2`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub embedding_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    /// Width of the projected action text.
    pub action_dim: usize,
    /// Hidden width of the per-action scoring head.
    pub head_hidden: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            embedding_dim: 256,
            hidden1: 512,
            hidden2: 512,
            action_dim: 64,
            head_hidden: 128,
        }
    }
}

/// Per-action similarity inputs: cos(last, text), cos(initial, text), is-ask.
pub const SIM_FEATURES: usize = 3;

pub(crate) const W1: usize = 0;
pub(crate) const B1: usize = 1;
pub(crate) const W2: usize = 2;
pub(crate) const B2: usize = 3;
pub(crate) const WM: usize = 4;
pub(crate) const BM: usize = 5;
pub(crate) const P: usize = 6;
pub(crate) const ASK: usize = 7;
pub(crate) const WG: usize = 8;
pub(crate) const BG: usize = 9;
pub(crate) const WQ: usize = 10;
pub(crate) const BQ: usize = 11;

/// Named parameter tensor. Weight matrices are stored input-major:
/// element `(i, j)` of an `in x out` matrix sits at `i * out + j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    fn zeros(name: &str, shape: &[usize]) -> Self {
        Tensor {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    fn uniform(name: &str, shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let mut t = Self::zeros(name, shape);
        t.data.iter_mut().for_each(|v| *v = T::of(rng.gen_range(-bound..=bound)));
        t
    }
}

/// Gradient buffers shaped like the parameters.
pub type Grads<T> = Vec<Vec<T>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QNetwork<T> {
    pub config: NetworkConfig,
    pub params: Vec<Tensor<T>>,
}

/// Activations of the state encoder for one observation.
#[derive(Clone, Debug)]
pub struct StateForward<T> {
    pub(crate) x: Vec<T>,
    pub(crate) h1: Vec<T>,
    pub(crate) phi: Vec<T>,
    pub logits: [T; 2],
}

/// Activations of the scoring head for one action.
#[derive(Clone, Debug)]
pub struct ActionForward<T> {
    pub(crate) action: usize,
    pub(crate) z: Vec<T>,
    pub(crate) u: Vec<T>,
    pub q: T,
}

/// `y = b + x W` for an input-major `W`, skipping zero inputs.
fn affine<T: Scalar>(w: &[T], b: &[T], x: &[T], y: &mut Vec<T>) {
    let out = b.len();
    y.clear();
    y.extend_from_slice(b);
    for (i, &xi) in x.iter().enumerate() {
        if xi == T::zero() {
            continue;
        }
        let row = &w[i * out..(i + 1) * out];
        for (yj, &wij) in y.iter_mut().zip(row) {
            *yj = *yj + xi * wij;
        }
    }
}

/// Accumulates `dW += x dyᵀ`, `db += dy` and, when asked, returns `W dy`.
fn affine_back<T: Scalar>(
    w: &[T],
    x: &[T],
    dy: &[T],
    dw: &mut [T],
    db: Option<&mut [T]>,
    want_dx: bool,
) -> Vec<T> {
    let out = dy.len();
    if let Some(db) = db {
        for (g, &d) in db.iter_mut().zip(dy) {
            *g = *g + d;
        }
    }
    let mut dx = if want_dx { vec![T::zero(); x.len()] } else { Vec::new() };
    for (i, &xi) in x.iter().enumerate() {
        if xi != T::zero() {
            let grow = &mut dw[i * out..(i + 1) * out];
            for (g, &d) in grow.iter_mut().zip(dy) {
                *g = *g + xi * d;
            }
        }
        if want_dx {
            let row = &w[i * out..(i + 1) * out];
            dx[i] = row.iter().zip(dy).fold(T::zero(), |acc, (&wij, &d)| acc + wij * d);
        }
    }
    dx
}

fn relu_in_place<T: Scalar>(v: &mut [T]) {
    v.iter_mut().for_each(|x| *x = x.max(T::zero()));
}

fn relu_mask<T: Scalar>(d: &mut [T], activation: &[T]) {
    for (g, &a) in d.iter_mut().zip(activation) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

impl<T: Scalar> QNetwork<T> {
    /// He-uniform initialization for ReLU layers, zero biases.
    pub fn new(config: NetworkConfig, rng: &mut impl Rng) -> Self {
        let d = config.embedding_dim;
        let input = 3 * d + SCALAR_FEATURES;
        let (h1, h2, k, g) = (config.hidden1, config.hidden2, config.action_dim, config.head_hidden);
        let z = h2 + k + SIM_FEATURES;
        let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
        let glorot = |a: usize, b: usize| (6.0 / (a + b) as f64).sqrt();
        let params = vec![
            Tensor::uniform("encoder.w1", &[input, h1], he(input), rng),
            Tensor::zeros("encoder.b1", &[h1]),
            Tensor::uniform("encoder.w2", &[h1, h2], he(h1), rng),
            Tensor::zeros("encoder.b2", &[h2]),
            Tensor::uniform("mode.w", &[h2, 2], glorot(h2, 2), rng),
            Tensor::zeros("mode.b", &[2]),
            Tensor::uniform("action.proj", &[d, k], glorot(d, k), rng),
            Tensor::uniform("action.ask", &[d], (3.0 / d as f64).sqrt(), rng),
            Tensor::uniform("head.w", &[z, g], he(z), rng),
            Tensor::zeros("head.b", &[g]),
            Tensor::uniform("head.q", &[g], glorot(g, 1), rng),
            Tensor::zeros("head.q_bias", &[1]),
        ];
        QNetwork { config, params }
    }

    /// Wraps existing tensors after checking their shapes.
    pub fn from_params(config: NetworkConfig, params: Vec<Tensor<T>>) -> Result<Self, AgentError> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let template = Self::new(config.clone(), &mut rng);
        if template.params.len() != params.len()
            || template
                .params
                .iter()
                .zip(&params)
                .any(|(a, b)| a.shape != b.shape || b.data.len() != a.data.len())
        {
            return Err(AgentError::ShapeMismatch);
        }
        Ok(QNetwork { config, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        self.params.iter().map(|t| vec![T::zero(); t.data.len()]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> QNetwork<U> {
        QNetwork {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    fn p(&self, i: usize) -> &[T] {
        &self.params[i].data
    }

    pub fn state_forward(&self, obs: &Observation<T>) -> StateForward<T> {
        let mut x = Vec::with_capacity(3 * self.config.embedding_dim + SCALAR_FEATURES);
        x.extend_from_slice(obs.initial.as_slice());
        x.extend_from_slice(obs.last.as_slice());
        x.extend_from_slice(obs.node.as_slice());
        x.extend_from_slice(&obs.scalars());
        let mut h1 = Vec::new();
        affine(self.p(W1), self.p(B1), &x, &mut h1);
        relu_in_place(&mut h1);
        let mut phi = Vec::new();
        affine(self.p(W2), self.p(B2), &h1, &mut phi);
        relu_in_place(&mut phi);
        let mut logits = Vec::new();
        affine(self.p(WM), self.p(BM), &phi, &mut logits);
        StateForward {
            x,
            h1,
            phi,
            logits: [logits[0], logits[1]],
        }
    }

    fn action_text<'a>(&'a self, obs: &'a Observation<T>, action: usize) -> &'a [T] {
        if action == 0 {
            self.p(ASK)
        } else {
            obs.answers[action - 1].as_slice()
        }
    }

    fn sims(obs: &Observation<T>, action: usize) -> [T; SIM_FEATURES] {
        let text = if action == 0 { &obs.node } else { &obs.answers[action - 1] };
        let cos = |a: &[T]| cosine_slices(a, text.as_slice()).unwrap_or(T::zero());
        [
            cos(obs.last.as_slice()),
            cos(obs.initial.as_slice()),
            if action == 0 { T::one() } else { T::zero() },
        ]
    }

    pub fn action_forward(&self, obs: &Observation<T>, sf: &StateForward<T>, action: usize) -> ActionForward<T> {
        let k = self.config.action_dim;
        let mut psi = Vec::new();
        affine(self.p(P), &vec![T::zero(); k], self.action_text(obs, action), &mut psi);
        let mut z = Vec::with_capacity(sf.phi.len() + k + SIM_FEATURES);
        z.extend_from_slice(&sf.phi);
        z.extend_from_slice(&psi);
        z.extend_from_slice(&Self::sims(obs, action));
        let mut u = Vec::new();
        affine(self.p(WG), self.p(BG), &z, &mut u);
        relu_in_place(&mut u);
        let q = u.iter().zip(self.p(WQ)).fold(self.p(BQ)[0], |acc, (&a, &w)| acc + a * w);
        ActionForward { action, z, u, q }
    }

    /// Q for every unmasked action, in action order.
    pub fn q_values(&self, obs: &Observation<T>) -> Result<Vec<(usize, T)>, AgentError> {
        let sf = self.state_forward(obs);
        self.q_values_with(obs, &sf)
    }

    pub fn q_values_with(&self, obs: &Observation<T>, sf: &StateForward<T>) -> Result<Vec<(usize, T)>, AgentError> {
        let qs: Vec<(usize, T)> = obs
            .legal_actions()
            .map(|a| (a, self.action_forward(obs, sf, a).q))
            .collect();
        if qs.is_empty() {
            return Err(AgentError::AllMasked);
        }
        Ok(qs)
    }

    /// Greedy action (first index on ties) and predicted mode.
    pub fn act_greedy(&self, obs: &Observation<T>) -> Result<(usize, DialogMode), AgentError> {
        let sf = self.state_forward(obs);
        let qs = self.q_values_with(obs, &sf)?;
        Ok((argmax(&qs), predicted_mode(&sf.logits)))
    }

    /// Backpropagates `dq` through the chosen action's score and `dlogits`
    /// through the mode head, accumulating into `grads`.
    pub fn backward(
        &self,
        obs: &Observation<T>,
        sf: &StateForward<T>,
        af: &ActionForward<T>,
        dq: T,
        dlogits: [T; 2],
        grads: &mut Grads<T>,
    ) {
        let h2 = sf.phi.len();
        let k = self.config.action_dim;

        // scoring head
        grads[BQ][0] = grads[BQ][0] + dq;
        let mut du: Vec<T> = self.p(WQ).iter().map(|&w| w * dq).collect();
        for (g, &u) in grads[WQ].iter_mut().zip(&af.u) {
            *g = *g + u * dq;
        }
        relu_mask(&mut du, &af.u);
        let (wg, bg) = split_two(grads, WG, BG);
        let dz = affine_back(self.p(WG), &af.z, &du, wg, Some(bg), true);
        let mut dphi = dz[..h2].to_vec();
        let dpsi = &dz[h2..h2 + k];
        let text = self.action_text(obs, af.action);
        let want_ask = af.action == 0;
        let dtext = affine_back(self.p(P), text, dpsi, &mut grads[P], None, want_ask);
        if want_ask {
            for (g, d) in grads[ASK].iter_mut().zip(dtext) {
                *g = *g + d;
            }
        }

        // mode head
        let (wm, bm) = split_two(grads, WM, BM);
        let dphi_mode = affine_back(self.p(WM), &sf.phi, &dlogits, wm, Some(bm), true);
        for (a, b) in dphi.iter_mut().zip(dphi_mode) {
            *a = *a + b;
        }

        // state encoder
        relu_mask(&mut dphi, &sf.phi);
        let (w2, b2) = split_two(grads, W2, B2);
        let mut dh1 = affine_back(self.p(W2), &sf.h1, &dphi, w2, Some(b2), true);
        relu_mask(&mut dh1, &sf.h1);
        let (w1, b1) = split_two(grads, W1, B1);
        affine_back(self.p(W1), &sf.x, &dh1, w1, Some(b1), false);
    }
}

fn split_two<T>(grads: &mut Grads<T>, a: usize, b: usize) -> (&mut [T], &mut [T]) {
    debug_assert!(a < b);
    let (lo, hi) = grads.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

/// Index of the largest Q; the earliest action wins ties.
pub fn argmax<T: Scalar>(qs: &[(usize, T)]) -> usize {
    let mut best = qs[0];
    for &(a, q) in &qs[1..] {
        if q > best.1 {
            best = (a, q);
        }
    }
    best.0
}

pub fn predicted_mode<T: Scalar>(logits: &[T; 2]) -> DialogMode {
    if logits[1] > logits[0] {
        DialogMode::Free
    } else {
        DialogMode::Guided
    }
}
