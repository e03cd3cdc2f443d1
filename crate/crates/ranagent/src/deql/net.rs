//! Fully connected network with SiLU hidden activations and a linear head,
//! parameters stored in one flat vector (per layer: weights row-major, then bias).

use crate::exec::Exec;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Rows per work unit. Fixed so the reduction order does not depend on the pool size.
pub const CHUNK_ROWS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

fn silu_grad(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Per-layer activations kept for the backward pass.
pub struct Cache {
    rows: usize,
    /// `inputs[l]` is the input to layer l (rows × sizes[l]).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// He-style uniform init scaled for SiLU, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let n: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let mut params = Vec::with_capacity(n);
        for (l, w) in sizes.windows(2).enumerate() {
            let last = l + 2 == sizes.len();
            let bound = if last { (1.0 / w[0] as f64).sqrt() } else { (6.0 / w[0] as f64).sqrt() };
            let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            params.extend((0..w[0] * w[1]).map(|_| u.sample(rng)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Mlp { sizes: sizes.to_vec(), params }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let n: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Mlp { sizes: sizes.to_vec(), params: vec![0.0; n] }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("sizes")
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, fan_in, fan_out)
        let mut off = 0;
        self.sizes.windows(2).map(move |w| {
            let o = off;
            off += w[0] * w[1] + w[1];
            (o, w[0], w[1])
        })
    }

    fn forward_rows(&self, x: &[f64], rows: usize, keep: bool) -> (Vec<f64>, Option<Cache>) {
        let n_layers = self.sizes.len() - 1;
        let mut cur = x.to_vec();
        let mut cache = Cache { rows, inputs: Vec::new(), pre: Vec::new() };
        for (l, (off, fin, fout)) in self.layers().enumerate() {
            let w = &self.params[off..off + fin * fout];
            let b = &self.params[off + fin * fout..off + fin * fout + fout];
            let mut z = vec![0.0; rows * fout];
            let mut nz = Vec::new();
            for r in 0..rows {
                let xr = &cur[r * fin..(r + 1) * fin];
                let zr = &mut z[r * fout..(r + 1) * fout];
                // One-hot style inputs: touch only the nonzero columns.
                nz.clear();
                nz.extend((0..fin).filter(|&i| xr[i] != 0.0));
                if 4 * nz.len() < fin {
                    for o in 0..fout {
                        let wo = &w[o * fin..(o + 1) * fin];
                        zr[o] = nz.iter().map(|&i| wo[i] * xr[i]).sum::<f64>() + b[o];
                    }
                } else {
                    for o in 0..fout {
                        zr[o] = dot(xr, &w[o * fin..(o + 1) * fin]) + b[o];
                    }
                }
            }
            let out = if l + 1 < n_layers { z.iter().map(|&v| silu(v)).collect() } else { z.clone() };
            if keep {
                cache.inputs.push(std::mem::replace(&mut cur, out));
                cache.pre.push(z);
            } else {
                cur = out;
            }
        }
        (cur, keep.then_some(cache))
    }

    /// Batched forward; `x` is rows × input_dim, row-major.
    pub fn forward(&self, x: &[f64], exec: Exec) -> Vec<f64> {
        let d = self.input_dim();
        let rows = x.len() / d;
        if rows <= CHUNK_ROWS || !exec.is_parallel() {
            return self.forward_rows(x, rows, false).0;
        }
        let parts = exec.map_range(rows.div_ceil(CHUNK_ROWS), |c| {
            let lo = c * CHUNK_ROWS;
            let hi = (lo + CHUNK_ROWS).min(rows);
            self.forward_rows(&x[lo * d..hi * d], hi - lo, false).0
        });
        parts.concat()
    }

    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        self.forward_rows(x, 1, false).0
    }

    pub fn forward_cached(&self, x: &[f64], rows: usize) -> (Vec<f64>, Cache) {
        let (y, c) = self.forward_rows(x, rows, true);
        (y, c.expect("kept"))
    }

    /// Accumulate parameter gradients for output gradients `gy` (rows × output_dim).
    pub fn backward(&self, cache: &Cache, gy: &[f64], grad: &mut [f64]) {
        let layers: Vec<(usize, usize, usize)> = self.layers().collect();
        let rows = cache.rows;
        let mut gz = gy.to_vec();
        for l in (0..layers.len()).rev() {
            let (off, fin, fout) = layers[l];
            let x = &cache.inputs[l];
            let w = &self.params[off..off + fin * fout];
            {
                let (gw, gb) = grad[off..off + fin * fout + fout].split_at_mut(fin * fout);
                let mut nz = Vec::new();
                for r in 0..rows {
                    let xr = &x[r * fin..(r + 1) * fin];
                    nz.clear();
                    nz.extend((0..fin).filter(|&i| xr[i] != 0.0));
                    let sparse = 4 * nz.len() < fin;
                    for o in 0..fout {
                        let g = gz[r * fout + o];
                        if g != 0.0 {
                            let gwo = &mut gw[o * fin..(o + 1) * fin];
                            if sparse {
                                for &i in &nz {
                                    gwo[i] += g * xr[i];
                                }
                            } else {
                                axpy(gwo, g, xr);
                            }
                            gb[o] += g;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let mut gx = vec![0.0; rows * fin];
            for r in 0..rows {
                let gxr = &mut gx[r * fin..(r + 1) * fin];
                for o in 0..fout {
                    let g = gz[r * fout + o];
                    if g != 0.0 {
                        axpy(gxr, g, &w[o * fin..(o + 1) * fin]);
                    }
                }
            }
            let zp = &cache.pre[l - 1];
            for (g, &z) in gx.iter_mut().zip(zp) {
                *g *= silu_grad(z);
            }
            gz = gx;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for s in &self.sizes {
            h.update((*s as u64).to_le_bytes());
        }
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        h.finalize().into()
    }

    /// θ⁻ ← (1-τ)θ⁻ + τθ; τ = 1 is an exact copy.
    pub fn soft_update(&mut self, online: &Mlp, tau: f64) {
        assert_eq!(self.sizes, online.sizes, "structurally identical networks");
        if tau >= 1.0 {
            self.params.copy_from_slice(&online.params);
            return;
        }
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = (1.0 - tau) * *t + tau * o;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// Scale `grad` so its Euclidean norm is at most `max_norm`. Returns the pre-clip norm.
pub fn clip_grad(grad: &mut [f64], max_norm: f64) -> f64 {
    let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if n > max_norm && n > 0.0 {
        let s = max_norm / n;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batched_matches_single_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[5, 7, 7, 3], &mut rng);
        let x: Vec<f64> = (0..5 * 150).map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.5).collect();
        let a = net.forward(&x, Exec::Parallel);
        let b = net.forward(&x, Exec::Sequential);
        assert_eq!(a, b);
        for r in 0..150 {
            assert_eq!(net.forward_one(&x[r * 5..(r + 1) * 5]), a[r * 3..(r + 1) * 3].to_vec());
        }
    }

    #[test]
    fn soft_update_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let online = Mlp::new(&[3, 4, 2], &mut rng);
        let mut target = Mlp::new(&[3, 4, 2], &mut rng);
        let dist = |a: &Mlp, b: &Mlp| a.params.iter().zip(&b.params).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let d0 = dist(&online, &target);
        for _ in 0..1000 {
            target.soft_update(&online, 0.001);
        }
        let ratio = dist(&online, &target) / d0;
        assert!((ratio - 0.999f64.powi(1000)).abs() < 1e-9);
        assert!((ratio - 0.368).abs() < 1e-3);
        target.soft_update(&online, 1.0);
        assert_eq!(target.params, online.params);
    }
}
