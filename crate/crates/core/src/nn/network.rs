use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Activation, ConvLayer, Padding, Tensor};
use crate::error::{Error, Result};

/// Feed-forward stack of convolutions with additive skips.
///
/// Layer outputs are numbered from 1; output 0 is the network input. A skip
/// `(src, dst)` adds output `src` to output `dst` after `dst`'s activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<ConvLayer>,
    pub activations: Vec<Activation>,
    pub skips: Vec<(usize, usize)>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `outputs[0]` is the input; `outputs[l]` is layer `l` after activation and skips.
    pub outputs: Vec<Tensor>,
    /// Pre-activation values of each layer (index `l - 1`).
    pub pre: Vec<Tensor>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.outputs.last().expect("non-empty trace")
    }
}

impl Network {
    pub fn new(layers: Vec<ConvLayer>, activations: Vec<Activation>, skips: Vec<(usize, usize)>) -> Result<Self> {
        if layers.is_empty() || layers.len() != activations.len() {
            return Err(Error::invalid("one activation per layer is required"));
        }
        for w in layers.windows(2) {
            if w[0].out_channels != w[1].in_channels {
                return Err(Error::shape(format!(
                    "layer emits {} channels, next expects {}",
                    w[0].out_channels, w[1].in_channels
                )));
            }
        }
        let channels = |l: usize| if l == 0 { layers[0].in_channels } else { layers[l - 1].out_channels };
        for &(src, dst) in &skips {
            if src >= dst || dst > layers.len() || dst == 0 {
                return Err(Error::invalid(format!("skip ({src}, {dst}) must point forward")));
            }
            if channels(src) != channels(dst) {
                return Err(Error::shape(format!(
                    "skip ({src}, {dst}) joins {} and {} channels",
                    channels(src),
                    channels(dst)
                )));
            }
        }
        Ok(Self {
            layers,
            activations,
            skips,
        })
    }

    /// Six same-padded layers, `in → h → h → in (+input) → h → h → out`, ReLU.
    pub fn net2d(in_channels: usize, hidden: usize, out_channels: usize) -> Result<Self> {
        let k = [3, 3, 1];
        let dims = [in_channels, hidden, hidden, in_channels, hidden, hidden, out_channels];
        Self::chain(&dims, k, Activation::Relu, vec![(0, 3)])
    }

    /// Nine same-padded 3x3x3 layers with skips input → 3 and 3 → 6,
    /// custom nonlinearity.
    pub fn net3d(in_channels: usize, hidden: usize, out_channels: usize) -> Result<Self> {
        let k = [3, 3, 3];
        let (c, h) = (in_channels, hidden);
        let dims = [c, h, h, c, h, h, c, h, h, out_channels];
        Self::chain(&dims, k, Activation::CustomNl, vec![(0, 3), (3, 6)])
    }

    /// Same-padded chain through `dims`, `act` after all but the last layer.
    pub fn chain(dims: &[usize], kernel: [usize; 3], act: Activation, skips: Vec<(usize, usize)>) -> Result<Self> {
        let mut layers = Vec::new();
        let mut acts = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            layers.push(ConvLayer::new(w[0], w[1], kernel, Padding::Same)?);
            acts.push(if i + 2 == dims.len() { Activation::Identity } else { act });
        }
        Self::new(layers, acts, skips)
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().unwrap().out_channels
    }

    /// Per-axis radius over which an output depends on its input.
    pub fn receptive_radius(&self) -> [usize; 3] {
        let mut r = [0; 3];
        for l in &self.layers {
            for a in 0..3 {
                r[a] += l.kernel[a] - 1;
            }
        }
        match self.layers[0].padding {
            Padding::Same => r.map(|v| v.div_ceil(2)),
            Padding::Valid => r,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    /// Initialise every layer from one seeded stream.
    pub fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut self.layers {
            l.init_uniform(&mut rng);
        }
    }

    pub fn zero_weights(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(x)?.outputs.pop().expect("non-empty"))
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<Trace> {
        let mut outputs = vec![x.clone()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, (layer, act)) in self.layers.iter().zip(&self.activations).enumerate() {
            let z = layer.forward(&outputs[l])?;
            let mut a = z.clone();
            if *act != Activation::Identity {
                a.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            for &(src, dst) in &self.skips {
                if dst == l + 1 {
                    if outputs[src].spatial() != a.spatial() {
                        return Err(Error::shape(format!("skip ({src}, {dst}) joins different spatial shapes")));
                    }
                    a.add_assign(&outputs[src]);
                }
            }
            pre.push(z);
            outputs.push(a);
        }
        Ok(Trace { outputs, pre })
    }

    /// Parameter gradients (one vector per layer) and the input gradient.
    pub fn backward(&self, trace: &Trace, d_out: &Tensor) -> (Vec<Vec<f64>>, Tensor) {
        let n = self.layers.len();
        let mut grads: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
        let mut g: Vec<Option<Tensor>> = vec![None; n + 1];
        g[n] = Some(d_out.clone());
        for l in (1..=n).rev() {
            let gl = g[l].take().unwrap_or_else(|| Tensor::zeros(trace.outputs[l].channels(), trace.outputs[l].spatial()));
            for &(src, dst) in &self.skips {
                if dst == l {
                    accumulate(&mut g[src], &gl);
                }
            }
            let act = self.activations[l - 1];
            let mut dz = gl;
            if act != Activation::Identity {
                for (d, z) in dz.data_mut().iter_mut().zip(trace.pre[l - 1].data()) {
                    *d *= act.derivative(*z);
                }
            }
            let dx = self.layers[l - 1].backward(&trace.outputs[l - 1], &dz, &mut grads[l - 1]);
            accumulate(&mut g[l - 1], &dx);
        }
        let dx = g[0].take().expect("input gradient");
        (grads, dx)
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().map(|l| l.weights.as_slice()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers.iter_mut().map(|l| &mut l.weights).collect()
    }
}

fn accumulate(slot: &mut Option<Tensor>, t: &Tensor) {
    match slot {
        Some(acc) => acc.add_assign(t),
        None => *slot = Some(t.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mse_loss;
    use rand::Rng;

    fn random_tensor(c: usize, s: [usize; 3], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = c * s.iter().product::<usize>();
        Tensor::new(c, s, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn builders_chain_channels() {
        let n2 = Network::net2d(16, 8, 2).unwrap();
        assert_eq!(n2.layers.len(), 6);
        assert_eq!(n2.layers[2].out_channels, 16);
        assert_eq!(n2.receptive_radius(), [6, 6, 0]);
        let n3 = Network::net3d(4, 3, 2).unwrap();
        assert_eq!(n3.layers.len(), 9);
        assert_eq!(n3.skips, vec![(0, 3), (3, 6)]);
        assert_eq!(n3.activations[8], Activation::Identity);
        assert_eq!(n3.receptive_radius(), [9, 9, 9]);
    }

    #[test]
    fn rejects_bad_skips() {
        let l = |i, o| ConvLayer::new(i, o, [1, 1, 1], Padding::Same).unwrap();
        let acts = vec![Activation::Relu, Activation::Identity];
        assert!(Network::new(vec![l(2, 3), l(3, 2)], acts.clone(), vec![(0, 1)]).is_err());
        assert!(Network::new(vec![l(2, 3), l(3, 2)], acts.clone(), vec![(2, 1)]).is_err());
        assert!(Network::new(vec![l(2, 3), l(4, 2)], acts, vec![]).is_err());
    }

    #[test]
    fn single_identity_layer() {
        let mut net = Network::chain(&[1, 1], [3, 3, 1], Activation::Relu, vec![]).unwrap();
        net.layers[0].weights[4] = 1.0;
        let x = random_tensor(1, [4, 5, 1], 1);
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn skip_into_zero_layer_passes_input() {
        let mut net = Network::chain(&[2, 3, 3, 2], [3, 3, 1], Activation::Relu, vec![(0, 3)]).unwrap();
        net.init(3);
        net.layers[2].weights.iter_mut().for_each(|w| *w = 0.0);
        let x = random_tensor(2, [4, 4, 1], 2);
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn matches_manual_composition() {
        let mut net = Network::chain(&[2, 3, 2], [3, 3, 1], Activation::Relu, vec![]).unwrap();
        net.init(4);
        let x = random_tensor(2, [5, 4, 1], 5);
        let mut h = net.layers[0].forward(&x).unwrap();
        h.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let y = net.layers[1].forward(&h).unwrap();
        assert_eq!(net.forward(&x).unwrap(), y);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let layers = vec![
            ConvLayer::new(2, 3, [3, 3, 1], Padding::Same).unwrap(),
            ConvLayer::new(3, 2, [3, 3, 1], Padding::Same).unwrap(),
            ConvLayer::new(2, 2, [3, 3, 1], Padding::Same).unwrap(),
        ];
        let acts = vec![Activation::Relu, Activation::CustomNl, Activation::Identity];
        let mut net = Network::new(layers, acts, vec![(0, 2)]).unwrap();
        net.init(6);
        let x = random_tensor(2, [5, 4, 1], 7);
        let target = random_tensor(2, [5, 4, 1], 8);
        let loss = |n: &Network| mse_loss(n.forward(&x).unwrap().data(), target.data()).0;
        let trace = net.forward_trace(&x).unwrap();
        let (_, g) = mse_loss(trace.output().data(), target.data());
        let d_out = Tensor::new(2, [5, 4, 1], g).unwrap();
        let (grads, _) = net.backward(&trace, &d_out);
        let h = 1e-6;
        for l in 0..3 {
            for i in 0..net.layers[l].weights.len() {
                let mut p = net.clone();
                p.layers[l].weights[i] += h;
                let mut m = net.clone();
                m.layers[l].weights[i] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                let an = grads[l][i];
                let err = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);
                assert!(err < 1e-5, "layer {l} weight {i}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn zero_loss_gradient_gives_zero_grads() {
        let mut net = Network::net2d(2, 3, 2).unwrap();
        net.init(9);
        let x = random_tensor(2, [4, 4, 1], 10);
        let trace = net.forward_trace(&x).unwrap();
        let (grads, dx) = net.backward(&trace, &Tensor::zeros(2, [4, 4, 1]));
        assert!(grads.iter().flatten().all(|&g| g == 0.0));
        assert!(dx.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut net = Network::net3d(2, 2, 2).unwrap();
        net.init(11);
        let x = random_tensor(2, [4, 3, 3], 12);
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
    }
}
