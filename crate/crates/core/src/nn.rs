//! A single-layer LSTM with a dense head and hand-written backpropagation
//! through time. Shared by the recurrent predictor, the actor and the critic.
//!
//! All parameters live in one flat vector so optimizers, gradient clipping
//! and finite-difference checks can treat a network as a plain `[f64]`.
//! Layout: gate weights `4H x (I + H)` (row-major, gate order i, f, g, o),
//! gate biases `4H`, head weights `O x H`, head biases `O`.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentNet {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub params: Vec<f64>,
}

/// Recurrent state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Hidden {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// Activations recorded by [`RecurrentNet::forward_sequence`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    len: usize,
    xh: Vec<f64>,
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl RecurrentNet {
    /// Uniform(-1/sqrt(H), 1/sqrt(H)) gate weights, forget-gate bias 1, and
    /// head weights scaled by `head_scale`.
    pub fn new<R: Rng>(
        n_in: usize,
        n_hidden: usize,
        n_out: usize,
        head_scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut net = Self {
            n_in,
            n_hidden,
            n_out,
            params: vec![0.0; Self::param_count(n_in, n_hidden, n_out)],
        };
        let bound = 1.0 / (n_hidden as f64).sqrt();
        let w_len = 4 * n_hidden * (n_in + n_hidden);
        for p in &mut net.params[..w_len] {
            *p = rng.random_range(-bound..bound);
        }
        let b = net.gate_bias_offset();
        for j in 0..n_hidden {
            net.params[b + n_hidden + j] = 1.0;
        }
        let ho = net.head_weight_offset();
        for p in &mut net.params[ho..ho + n_out * n_hidden] {
            *p = head_scale * rng.random_range(-bound..bound);
        }
        net
    }

    pub fn param_count(n_in: usize, n_hidden: usize, n_out: usize) -> usize {
        4 * n_hidden * (n_in + n_hidden) + 4 * n_hidden + n_out * n_hidden + n_out
    }

    #[inline]
    fn gate_bias_offset(&self) -> usize {
        4 * self.n_hidden * (self.n_in + self.n_hidden)
    }

    #[inline]
    fn head_weight_offset(&self) -> usize {
        self.gate_bias_offset() + 4 * self.n_hidden
    }

    #[inline]
    pub fn head_bias_offset(&self) -> usize {
        self.head_weight_offset() + self.n_out * self.n_hidden
    }

    pub fn head_bias_mut(&mut self) -> &mut [f64] {
        let o = self.head_bias_offset();
        &mut self.params[o..]
    }

    pub fn initial_hidden(&self) -> Hidden {
        Hidden {
            h: vec![0.0; self.n_hidden],
            c: vec![0.0; self.n_hidden],
        }
    }

    /// Gate activations for input `xh = [x; h_prev]`, written into `gates`.
    #[inline]
    fn gates_into(&self, xh: &[f64], gates: &mut [f64]) {
        let hd = self.n_hidden;
        let width = self.n_in + hd;
        let w = &self.params[..self.gate_bias_offset()];
        let b = &self.params[self.gate_bias_offset()..self.head_weight_offset()];
        for (r, g) in gates.iter_mut().enumerate() {
            let row = &w[r * width..(r + 1) * width];
            let z = b[r] + row.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
            *g = if (2 * hd..3 * hd).contains(&r) {
                z.tanh()
            } else {
                sigmoid(z)
            };
        }
    }

    #[inline]
    fn head_into(&self, h: &[f64], out: &mut [f64]) {
        let hd = self.n_hidden;
        let wo = self.head_weight_offset();
        let bo = self.head_bias_offset();
        for (o, v) in out.iter_mut().enumerate() {
            let row = &self.params[wo + o * hd..wo + (o + 1) * hd];
            *v = self.params[bo + o] + row.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// One inference step; updates `hidden` and writes the head output.
    pub fn step(&self, hidden: &mut Hidden, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_in);
        let hd = self.n_hidden;
        let mut xh = Vec::with_capacity(self.n_in + hd);
        xh.extend_from_slice(x);
        xh.extend_from_slice(&hidden.h);
        let mut gates = vec![0.0; 4 * hd];
        self.gates_into(&xh, &mut gates);
        for j in 0..hd {
            let c = gates[hd + j] * hidden.c[j] + gates[j] * gates[2 * hd + j];
            hidden.c[j] = c;
            hidden.h[j] = gates[3 * hd + j] * c.tanh();
        }
        self.head_into(&hidden.h, out);
    }

    /// Runs a whole sequence from a zero state. Returns the head outputs
    /// (`T x O`, flat) and the tape needed by [`Self::backward`].
    pub fn forward_sequence<'a, I>(&self, inputs: I) -> (Vec<f64>, Tape)
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let hd = self.n_hidden;
        let width = self.n_in + hd;
        let mut tape = Tape::default();
        let mut outputs = Vec::new();
        let mut h = vec![0.0; hd];
        let mut c_prev = vec![0.0; hd];
        let mut out = vec![0.0; self.n_out];
        let mut gates = vec![0.0; 4 * hd];
        for x in inputs {
            debug_assert_eq!(x.len(), self.n_in);
            let start = tape.xh.len();
            tape.xh.extend_from_slice(x);
            tape.xh.extend_from_slice(&h);
            self.gates_into(&tape.xh[start..start + width], &mut gates);
            for j in 0..hd {
                let c = gates[hd + j] * c_prev[j] + gates[j] * gates[2 * hd + j];
                let tc = c.tanh();
                c_prev[j] = c;
                h[j] = gates[3 * hd + j] * tc;
                tape.c.push(c);
                tape.tanh_c.push(tc);
            }
            tape.gates.extend_from_slice(&gates);
            tape.h.extend_from_slice(&h);
            self.head_into(&h, &mut out);
            outputs.extend_from_slice(&out);
            tape.len += 1;
        }
        (outputs, tape)
    }

    /// Accumulates parameter gradients into `grads` given the loss gradient
    /// with respect to every head output (`T x O`, flat).
    pub fn backward(&self, tape: &Tape, d_out: &[f64], grads: &mut [f64]) {
        let hd = self.n_hidden;
        let n_in = self.n_in;
        let width = n_in + hd;
        let n_out = self.n_out;
        assert_eq!(d_out.len(), tape.len * n_out, "output gradient shape");
        assert_eq!(grads.len(), self.params.len(), "gradient buffer shape");

        let gb = self.gate_bias_offset();
        let wo = self.head_weight_offset();
        let bo = self.head_bias_offset();
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut dz = vec![0.0; 4 * hd];
        let mut dh = vec![0.0; hd];

        for t in (0..tape.len).rev() {
            let h_t = &tape.h[t * hd..(t + 1) * hd];
            let g = &tape.gates[t * 4 * hd..(t + 1) * 4 * hd];
            let tc = &tape.tanh_c[t * hd..(t + 1) * hd];
            let xh = &tape.xh[t * width..(t + 1) * width];
            let dout = &d_out[t * n_out..(t + 1) * n_out];

            dh.copy_from_slice(&dh_next);
            for (o, &d) in dout.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &self.params[wo + o * hd..wo + (o + 1) * hd];
                let grow = &mut grads[wo + o * hd..wo + (o + 1) * hd];
                for j in 0..hd {
                    dh[j] += row[j] * d;
                    grow[j] += d * h_t[j];
                }
                grads[bo + o] += d;
            }

            for j in 0..hd {
                let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                let c_prev = if t > 0 { tape.c[(t - 1) * hd + j] } else { 0.0 };
                let d_o = dh[j] * tc[j];
                let dc = dh[j] * o * (1.0 - tc[j] * tc[j]) + dc_next[j];
                let d_i = dc * gg;
                let d_g = dc * i;
                let d_f = dc * c_prev;
                dc_next[j] = dc * f;
                dz[j] = d_i * i * (1.0 - i);
                dz[hd + j] = d_f * f * (1.0 - f);
                dz[2 * hd + j] = d_g * (1.0 - gg * gg);
                dz[3 * hd + j] = d_o * o * (1.0 - o);
            }

            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (r, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &self.params[r * width..(r + 1) * width];
                let grow = &mut grads[r * width..(r + 1) * width];
                for j in 0..width {
                    grow[j] += d * xh[j];
                }
                for j in 0..hd {
                    dh_next[j] += row[n_in + j] * d;
                }
                grads[gb + r] += d;
            }
        }
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
