//! Minimal RAKI baseline: per coil, a three-layer network of valid
//! convolutions maps acquired lattice lines to the missing lines between them.
//!
//! Inputs are the acquired lines gathered into a dense `(readout, line)` grid.
//! An output at line index `j` predicts the `R − 1` lines between acquired
//! lines `j + a` and `j + a + 1`, where `a` is the phase anchor derived from
//! the phase receptive field.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::data::KspaceData;
use crate::error::{Error, Result};
use crate::nn::{mse_loss, Activation, AdamState, ConvLayer, Network, Padding, Tensor};
use crate::phantom::mix_seed;
use crate::sampling::SamplingMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RakiConfig {
    /// Widths of the two hidden layers.
    pub hidden: [usize; 2],
    /// Per-layer `(readout, line)` kernel extents.
    pub kernels: [[usize; 2]; 3],
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for RakiConfig {
    fn default() -> Self {
        Self {
            hidden: [32, 8],
            kernels: [[5, 3], [1, 1], [3, 2]],
            epochs: 500,
            lr: 3e-3,
            seed: 0,
        }
    }
}

impl RakiConfig {
    fn build(&self, n_coils: usize, r: usize) -> Result<Network> {
        let chans = [2 * n_coils, self.hidden[0], self.hidden[1], 2 * (r - 1)];
        let mut layers = Vec::new();
        for (i, k) in self.kernels.iter().enumerate() {
            layers.push(ConvLayer::new(chans[i], chans[i + 1], [k[0], k[1], 1], Padding::Valid)?);
        }
        Network::new(layers, vec![Activation::Relu, Activation::Relu, Activation::Identity], vec![])
    }

    /// Receptive extents `(readout, lines)` of the composed network.
    pub fn receptive(&self) -> [usize; 2] {
        let r: usize = self.kernels.iter().map(|k| k[0] - 1).sum();
        let l: usize = self.kernels.iter().map(|k| k[1] - 1).sum();
        [r + 1, l + 1]
    }
}

/// Gather every `r`-th phase line starting at `start` into a packed tensor.
fn gather_lines(ksp: &KspaceData, start: isize, r: usize, n_lines: usize, scale: f64) -> Tensor {
    let [nro, npe, _, nc] = ksp.dims();
    let mut t = Tensor::zeros(2 * nc, [nro, n_lines, 1]);
    let plane = nro * n_lines;
    for j in 0..n_lines {
        let pe = start + (j * r) as isize;
        if pe < 0 || pe >= npe as isize {
            continue;
        }
        for ro in 0..nro {
            for c in 0..nc {
                let v = ksp.at(ro, pe as usize, 0, c) / scale;
                let p = ro * n_lines + j;
                t.data_mut()[2 * c * plane + p] = v.re;
                t.data_mut()[(2 * c + 1) * plane + p] = v.im;
            }
        }
    }
    t
}

struct Example {
    input: Tensor,
    /// Flattened `(channel, readout, line)` targets matching the output layout.
    target: Vec<f64>,
}

/// Reconstruct a 1D-undersampled acquisition with the RAKI baseline.
pub fn raki_reconstruct(ksp_under: &KspaceData, mask: &SamplingMask, cfg: &RakiConfig) -> Result<KspaceData> {
    let [nro, npe, npa, nc] = ksp_under.dims();
    if npa != 1 || mask.n_pa() != 1 || mask.accel.1 != 1 || mask.shift != 0 {
        return Err(Error::invalid("RAKI supports uniform 1D undersampling only"));
    }
    if mask.n_pe() != npe {
        return Err(Error::shape("mask does not match the k-space grid"));
    }
    let r = mask.accel.0;
    if r == 1 {
        return Ok(ksp_under.clone());
    }
    let acs = mask.acs.ok_or_else(|| Error::AcsTooSmall("mask has no ACS block".into()))?;
    let [rf_ro, rf_lines] = cfg.receptive();
    let anchor = (rf_lines - 1) / 2;
    let (lo, hi) = acs.pe;
    let acs_len = hi + 1 - lo;
    // Shifts s whose `rf_lines` lattice lines fit inside the ACS.
    let span = (rf_lines - 1) * r;
    if acs_len <= span || nro < rf_ro {
        return Err(Error::AcsTooSmall(format!(
            "{acs_len} ACS lines cannot hold a receptive field of {rf_lines} lines at R={r}"
        )));
    }
    let scale = {
        let s = ksp_under.max_abs();
        if s > 0.0 {
            s
        } else {
            1.0
        }
    };
    let out_ro = nro - rf_ro + 1;
    let ro_off = (rf_ro - 1) / 2;

    let mut out = ksp_under.clone();
    let lattice: Vec<usize> = (0..npe).filter(|&pe| pe % r == 0).collect();
    for c in 0..nc {
        // Training examples: one per lattice shift inside the ACS.
        let mut examples = Vec::new();
        for s in 0..r {
            let first = lo + s;
            if first + span > hi {
                continue;
            }
            let n_lines = (hi - first) / r + 1;
            let n_out = n_lines + 1 - rf_lines;
            let input = gather_lines(ksp_under, first as isize, r, n_lines, scale);
            let mut target = vec![0.0; 2 * (r - 1) * out_ro * n_out];
            let plane = out_ro * n_out;
            for d in 1..r {
                for j in 0..n_out {
                    let pe = first + (j + anchor) * r + d;
                    for i in 0..out_ro {
                        let v = ksp_under.at(i + ro_off, pe, 0, c) / scale;
                        target[2 * (d - 1) * plane + i * n_out + j] = v.re;
                        target[(2 * (d - 1) + 1) * plane + i * n_out + j] = v.im;
                    }
                }
            }
            examples.push(Example { input, target });
        }
        let mut net = cfg.build(nc, r)?;
        net.init(mix_seed(cfg.seed, c as u64));
        let sizes: Vec<usize> = net.layers.iter().map(|l| l.weights.len()).collect();
        let mut adam = AdamState::new(&sizes, cfg.lr);
        let n_ex = examples.len() as f64;
        for _ in 0..cfg.epochs {
            let mut total: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
            for ex in &examples {
                let trace = net.forward_trace(&ex.input)?;
                let out_t = trace.output();
                let (_, g) = mse_loss(out_t.data(), &ex.target);
                let d_out = Tensor::new(out_t.channels(), out_t.spatial(), g)?;
                let (grads, _) = net.backward(&trace, &d_out);
                for (t, g) in total.iter_mut().zip(grads) {
                    for (a, b) in t.iter_mut().zip(g) {
                        *a += b / n_ex;
                    }
                }
            }
            adam.step(&mut net.params_mut(), &total);
        }

        // Inference over the whole lattice, zero-padded so every gap is covered.
        let n_lat = lattice.len();
        let pad_before = anchor;
        let pad_after = rf_lines - 1 - anchor;
        let n_lines = n_lat + pad_before + pad_after;
        let input = gather_lines(ksp_under, -((pad_before * r) as isize), r, n_lines, scale)
            .pad([ro_off, 0, 0], [rf_ro - 1 - ro_off, 0, 0]);
        let pred = net.forward(&input)?;
        let n_out = pred.spatial()[1];
        let plane = nro * n_out;
        let dst = out.tensor_mut().data_mut();
        for d in 1..r {
            for j in 0..n_out {
                // Output j sits between gathered lines j + anchor and j + anchor + 1.
                let pe = (j as isize + anchor as isize - pad_before as isize) * r as isize + d as isize;
                if pe < 0 || pe >= npe as isize || mask.is_sampled(pe as usize, 0) {
                    continue;
                }
                for ro in 0..nro {
                    let p = ro * n_out + j;
                    let v = Complex64::new(pred.data()[2 * (d - 1) * plane + p], pred.data()[(2 * (d - 1) + 1) * plane + p]);
                    dst[((ro * npe + pe as usize) * npa) * nc + c] = v * scale;
                }
            }
        }
    }
    Ok(out)
}
