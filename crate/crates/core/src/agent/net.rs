use std::io::{self, Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::AgentError;

/// Dense layer, weights row-major `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, w: vec![0.0; inputs * outputs], b: vec![0.0; outputs] }
    }

    /// He-normal weights, zero biases.
    fn he<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("finite std");
        let mut d = Self::zeros(inputs, outputs);
        d.w.iter_mut().for_each(|w| *w = normal.sample(rng));
        d
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.b.iter().enumerate().map(|(o, b)| {
            let row = &self.w[o * self.inputs..(o + 1) * self.inputs];
            b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
        }));
    }

    /// Accumulates parameter gradients for upstream `dy` at input `x` and
    /// returns the gradient with respect to `x`.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.b[o] += g;
            let row = &self.w[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grad.w[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().chain(self.b.iter())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.iter_mut().chain(self.b.iter_mut())
    }
}

/// Dueling Q-network: a two-layer ReLU trunk shared by a scalar value head
/// and a per-action advantage head, combined as `Q = V + A − mean(A)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    pub l1: Dense,
    pub l2: Dense,
    pub value: Dense,
    pub advantage: Dense,
}

struct Activations {
    h1: Vec<f64>,
    h2: Vec<f64>,
    adv: Vec<f64>,
    q: Vec<f64>,
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

impl QNetwork {
    pub fn new<R: Rng>(input: usize, hidden: [usize; 2], actions: usize, rng: &mut R) -> Self {
        Self {
            l1: Dense::he(input, hidden[0], rng),
            l2: Dense::he(hidden[0], hidden[1], rng),
            value: Dense::he(hidden[1], 1, rng),
            advantage: Dense::he(hidden[1], actions, rng),
        }
    }

    pub fn zeros(input: usize, hidden: [usize; 2], actions: usize) -> Self {
        Self {
            l1: Dense::zeros(input, hidden[0]),
            l2: Dense::zeros(hidden[0], hidden[1]),
            value: Dense::zeros(hidden[1], 1),
            advantage: Dense::zeros(hidden[1], actions),
        }
    }

    pub fn input_len(&self) -> usize {
        self.l1.inputs
    }

    pub fn actions(&self) -> usize {
        self.advantage.outputs
    }

    fn layers(&self) -> [&Dense; 4] {
        [&self.l1, &self.l2, &self.value, &self.advantage]
    }

    fn layers_mut(&mut self) -> [&mut Dense; 4] {
        [&mut self.l1, &mut self.l2, &mut self.value, &mut self.advantage]
    }

    fn run(&self, s: &[f64]) -> Activations {
        let mut h1 = Vec::new();
        self.l1.forward(s, &mut h1);
        relu(&mut h1);
        let mut h2 = Vec::new();
        self.l2.forward(&h1, &mut h2);
        relu(&mut h2);
        let mut v = Vec::new();
        self.value.forward(&h2, &mut v);
        let mut adv = Vec::new();
        self.advantage.forward(&h2, &mut adv);
        let mean = adv.iter().sum::<f64>() / adv.len() as f64;
        let q = adv.iter().map(|a| v[0] + a - mean).collect();
        Activations { h1, h2, adv, q }
    }

    pub fn forward(&self, s: &[f64]) -> Result<Vec<f64>, AgentError> {
        if s.len() != self.input_len() {
            return Err(AgentError::Shape { expected: self.input_len(), got: s.len() });
        }
        Ok(self.run(s).q)
    }

    /// Raw advantage head output, before aggregation.
    pub fn advantages(&self, s: &[f64]) -> Result<Vec<f64>, AgentError> {
        if s.len() != self.input_len() {
            return Err(AgentError::Shape { expected: self.input_len(), got: s.len() });
        }
        Ok(self.run(s).adv)
    }

    /// Mean squared TD error over `(state, action, target)` samples and its
    /// gradient with respect to every parameter.
    pub fn loss_and_grad(&self, samples: &[(&[f64], usize, f64)]) -> (f64, QNetwork) {
        let (i, h) = (self.l1.inputs, [self.l1.outputs, self.l2.outputs]);
        let mut grad = QNetwork::zeros(i, h, self.actions());
        let n = samples.len() as f64;
        let k = self.actions() as f64;
        let mut loss = 0.0;
        for &(s, a, y) in samples {
            let act = self.run(s);
            let err = act.q[a] - y;
            loss += err * err / n;
            let dq = 2.0 * err / n;
            // dQ_a/dV = 1, dQ_a/dA_j = [j == a] − 1/k
            let dv = [dq];
            let da: Vec<f64> =
                (0..self.actions()).map(|j| dq * (f64::from(u8::from(j == a)) - 1.0 / k)).collect();
            let mut dh2 = self.value.backward(&act.h2, &dv, &mut grad.value);
            let dh2a = self.advantage.backward(&act.h2, &da, &mut grad.advantage);
            for (d, x) in dh2.iter_mut().zip(dh2a) {
                *d += x;
            }
            for (d, h) in dh2.iter_mut().zip(&act.h2) {
                if *h <= 0.0 {
                    *d = 0.0;
                }
            }
            let mut dh1 = self.l2.backward(&act.h1, &dh2, &mut grad.l2);
            for (d, h) in dh1.iter_mut().zip(&act.h1) {
                if *h <= 0.0 {
                    *d = 0.0;
                }
            }
            self.l1.backward(s, &dh1, &mut grad.l1);
        }
        (loss, grad)
    }

    /// θ ← θ − lr·g
    pub fn apply_gradient(&mut self, grad: &QNetwork, lr: f64) {
        for (l, g) in self.layers_mut().into_iter().zip(grad.layers()) {
            for (p, d) in l.params_mut().zip(g.params()) {
                *p -= lr * d;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers().iter().flat_map(|l| l.params().copied().collect::<Vec<_>>()).collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut it = flat.iter();
        for l in self.layers_mut() {
            for p in l.params_mut() {
                *p = *it.next().expect("length checked");
            }
        }
    }

    const MAGIC: &'static [u8; 4] = b"NMPQ";

    /// Writes `NMPQ`, then u32 little-endian input, hidden0, hidden1 and
    /// action counts, then every parameter as f64 little-endian in
    /// [`QNetwork::params`] order.
    pub fn save<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(Self::MAGIC)?;
        for d in [self.l1.inputs, self.l1.outputs, self.l2.outputs, self.actions()] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for p in self.params() {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> io::Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "not a Q-network checkpoint"));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let mut net = QNetwork::zeros(dims[0], [dims[1], dims[2]], dims[3]);
        let mut flat = vec![0.0; net.param_count()];
        for p in &mut flat {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *p = f64::from_le_bytes(b);
        }
        net.set_params(&flat);
        Ok(net)
    }
}
