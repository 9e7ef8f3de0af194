//! Forward pass with cached activations and backpropagation through time.
//!
//! Both directions take a batch of independent sequences. At each time step
//! the recurrent products of all sequences still running are done as one
//! matrix product, which is where batching pays off.

use super::scalar::{axpy, dot, gemm, sigmoid_in_place, tanh_in_place, Mat};
use super::{ModelParams, NetShape, Scalar, LAYERS};
use crate::error::{Error, Result};

/// Below this many live sequences the recurrent step uses plain dot
/// products; packing the weights for a matrix product costs more.
const GEMM_MIN_BATCH: usize = 4;

#[derive(Debug, Clone)]
struct LayerCache<T> {
    /// Post-activation gates per step: `i f g o`, each `H` wide.
    gates: Vec<T>,
    c: Vec<T>,
    tanh_c: Vec<T>,
    h: Vec<T>,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    ids: Vec<u32>,
    embedded: Vec<T>,
    layers: Vec<LayerCache<T>>,
    pooled: Vec<T>,
    logits: Vec<T>,
    probs: Vec<T>,
    value: T,
}

impl<T: Scalar> Forward<T> {
    pub fn policy(&self) -> &[T] {
        &self.probs
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    pub fn value(&self) -> T {
        self.value
    }

    /// Mean of the top layer's outputs: the state embedding.
    pub fn embedding(&self) -> &[T] {
        &self.pooled
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Top-layer output at step `t`.
    pub fn output(&self, t: usize) -> &[T] {
        let h = self.pooled.len();
        &self.layers[LAYERS - 1].h[t * h..(t + 1) * h]
    }
}

pub fn forward<T: Scalar>(params: &ModelParams<T>, ids: &[u32]) -> Result<Forward<T>> {
    let mut out = forward_batch(params, &[ids])?;
    Ok(out.pop().expect("one sequence in, one out"))
}

/// Runs every sequence in `batch` through the network.
pub fn forward_batch<T: Scalar>(params: &ModelParams<T>, batch: &[&[u32]]) -> Result<Vec<Forward<T>>> {
    let s = *params.shape();
    for ids in batch {
        if ids.is_empty() {
            return Err(Error::contract("forward on an empty sequence"));
        }
        if let Some(bad) = ids.iter().find(|&&id| id as usize >= s.vocab) {
            return Err(Error::contract(format!(
                "token id {bad} outside a vocabulary of {}",
                s.vocab
            )));
        }
    }
    let p = params.as_slice();
    let (e, h) = (s.embed, s.hidden);

    let table = &p[s.embedding()];
    let embedded: Vec<Vec<T>> = batch
        .iter()
        .map(|ids| {
            let mut out = Vec::with_capacity(ids.len() * e);
            for &id in *ids {
                let id = id as usize;
                out.extend_from_slice(&table[id * e..(id + 1) * e]);
            }
            out
        })
        .collect();

    let mut layers: Vec<Vec<LayerCache<T>>> = Vec::with_capacity(LAYERS);
    for l in 0..LAYERS {
        let inputs: Vec<&[T]> = if l == 0 {
            embedded.iter().map(Vec::as_slice).collect()
        } else {
            layers[l - 1].iter().map(|c| c.h.as_slice()).collect()
        };
        let caches = layer_forward(&s, p, l, &inputs);
        layers.push(caches);
    }

    let wp = &p[s.policy_weights()];
    let bp = &p[s.policy_bias()];
    let wv = &p[s.value_weights()];
    let bv = p[s.value_bias()][0];
    let mut per_seq: Vec<Vec<LayerCache<T>>> = (0..batch.len()).map(|_| Vec::with_capacity(LAYERS)).collect();
    for layer in layers {
        for (k, cache) in layer.into_iter().enumerate() {
            per_seq[k].push(cache);
        }
    }
    let out = batch
        .iter()
        .zip(embedded)
        .zip(per_seq)
        .map(|((ids, embedded), layers)| {
            let n = ids.len();
            let inv_n = T::one() / T::of(n as f64);
            let mut pooled = vec![T::zero(); h];
            for row in layers[LAYERS - 1].h.chunks_exact(h) {
                for (acc, &x) in pooled.iter_mut().zip(row) {
                    *acc += x;
                }
            }
            for x in &mut pooled {
                *x *= inv_n;
            }
            let logits: Vec<T> = (0..s.actions)
                .map(|a| dot(&wp[a * h..(a + 1) * h], &pooled) + bp[a])
                .collect();
            let probs = softmax(&logits);
            let value = dot(wv, &pooled) + bv;
            Forward {
                ids: ids.to_vec(),
                embedded,
                layers,
                pooled,
                logits,
                probs,
                value,
            }
        })
        .collect();
    Ok(out)
}

pub(crate) fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|x| x / total).collect()
}

fn layer_forward<T: Scalar>(s: &NetShape, p: &[T], l: usize, inputs: &[&[T]]) -> Vec<LayerCache<T>> {
    let h = s.hidden;
    let n_in = s.layer_input(l);
    let cols = n_in + h;
    let w = &p[s.lstm_weights(l)];
    let b = &p[s.lstm_bias(l)];

    // input contributions for all steps at once, on top of the bias
    let mut caches: Vec<LayerCache<T>> = inputs
        .iter()
        .map(|input| {
            let n = input.len() / n_in;
            let mut gates = Vec::with_capacity(n * 4 * h);
            for _ in 0..n {
                gates.extend_from_slice(b);
            }
            gemm(
                Mat::rows(input, n, n_in, n_in),
                Mat::rows(w, 4 * h, n_in, cols).t(),
                T::one(),
                &mut gates,
                4 * h,
            );
            LayerCache {
                gates,
                c: vec![T::zero(); n * h],
                tanh_c: vec![T::zero(); n * h],
                h: vec![T::zero(); n * h],
            }
        })
        .collect();

    let lens: Vec<usize> = caches.iter().map(|c| c.h.len() / h).collect();
    let max_len = lens.iter().copied().max().unwrap_or(0);
    let mut active = Vec::with_capacity(caches.len());
    let (mut hb, mut zb) = (Vec::new(), Vec::new());
    for t in 0..max_len {
        active.clear();
        active.extend((0..caches.len()).filter(|&k| lens[k] > t));
        if t > 0 && active.len() >= GEMM_MIN_BATCH {
            hb.clear();
            for &k in &active {
                hb.extend_from_slice(&caches[k].h[(t - 1) * h..t * h]);
            }
            zb.clear();
            zb.resize(active.len() * 4 * h, T::zero());
            gemm(
                Mat::rows(&hb, active.len(), h, h),
                Mat::rows(&w[n_in..], 4 * h, h, cols).t(),
                T::zero(),
                &mut zb,
                4 * h,
            );
            for (row, &k) in zb.chunks_exact(4 * h).zip(&active) {
                for (z, &r) in caches[k].gates[t * 4 * h..(t + 1) * 4 * h].iter_mut().zip(row) {
                    *z += r;
                }
            }
        } else if t > 0 {
            for &k in &active {
                let LayerCache { gates, h: hs, .. } = &mut caches[k];
                let h_prev = &hs[(t - 1) * h..t * h];
                for (r, zr) in gates[t * 4 * h..(t + 1) * 4 * h].iter_mut().enumerate() {
                    *zr += dot(&w[r * cols + n_in..(r + 1) * cols], h_prev);
                }
            }
        }
        for &k in &active {
            cell_forward(&mut caches[k], t, h);
        }
    }
    caches
}

/// Applies the gate nonlinearities at step `t` and updates the cell.
fn cell_forward<T: Scalar>(cache: &mut LayerCache<T>, t: usize, h: usize) {
    let z = &mut cache.gates[t * 4 * h..(t + 1) * 4 * h];
    sigmoid_in_place(&mut z[..2 * h]);
    tanh_in_place(&mut z[2 * h..3 * h]);
    sigmoid_in_place(&mut z[3 * h..]);
    let (before, rest) = cache.c.split_at_mut(t * h);
    let ct = &mut rest[..h];
    let (i_g, rest) = z.split_at(h);
    let (f_g, rest) = rest.split_at(h);
    let (g_g, o_g) = rest.split_at(h);
    if t > 0 {
        let c_prev = &before[(t - 1) * h..];
        for j in 0..h {
            ct[j] = f_g[j] * c_prev[j] + i_g[j] * g_g[j];
        }
    } else {
        for j in 0..h {
            ct[j] = i_g[j] * g_g[j];
        }
    }
    let tc = &mut cache.tanh_c[t * h..(t + 1) * h];
    tc.copy_from_slice(ct);
    tanh_in_place(tc);
    for ((hv, &o), &c) in cache.h[t * h..(t + 1) * h].iter_mut().zip(o_g).zip(tc.iter()) {
        *hv = o * c;
    }
}

/// Adds the gradient of a loss whose derivatives with respect to the logits
/// and the value are `dlogits` and `dvalue` into `grads`.
#[cfg(test)]
pub(crate) fn backward<T: Scalar>(
    params: &ModelParams<T>,
    fwd: &Forward<T>,
    dlogits: &[T],
    dvalue: T,
    grads: &mut [T],
) {
    backward_batch(params, &[(fwd, dlogits, dvalue)], grads);
}

/// [`backward`] summed over several forward evaluations.
pub(crate) fn backward_batch<T: Scalar>(
    params: &ModelParams<T>,
    items: &[(&Forward<T>, &[T], T)],
    grads: &mut [T],
) {
    let s = *params.shape();
    let p = params.as_slice();
    let h = s.hidden;
    assert_eq!(grads.len(), p.len());

    let wp = &p[s.policy_weights()];
    let mut dh_outs: Vec<Vec<T>> = Vec::with_capacity(items.len());
    for &(fwd, dlogits, dvalue) in items {
        assert_eq!(dlogits.len(), s.actions);
        let mut dpooled = vec![T::zero(); h];
        {
            let gw = &mut grads[s.policy_weights()];
            for (a, &d) in dlogits.iter().enumerate() {
                axpy(d, &fwd.pooled, &mut gw[a * h..(a + 1) * h]);
                axpy(d, &wp[a * h..(a + 1) * h], &mut dpooled);
            }
        }
        for (g, &d) in grads[s.policy_bias()].iter_mut().zip(dlogits) {
            *g += d;
        }
        axpy(dvalue, &fwd.pooled, &mut grads[s.value_weights()]);
        grads[s.value_bias()][0] += dvalue;
        axpy(dvalue, &p[s.value_weights()], &mut dpooled);

        // the mean spreads the pooled gradient evenly over the steps
        let n = fwd.len();
        let inv_n = T::one() / T::of(n as f64);
        let mut dh_out = Vec::with_capacity(n * h);
        for _ in 0..n {
            dh_out.extend(dpooled.iter().map(|&x| x * inv_n));
        }
        dh_outs.push(dh_out);
    }

    for l in (0..LAYERS).rev() {
        let inputs: Vec<&[T]> = items
            .iter()
            .map(|(fwd, _, _)| {
                if l == 0 {
                    fwd.embedded.as_slice()
                } else {
                    fwd.layers[l - 1].h.as_slice()
                }
            })
            .collect();
        let caches: Vec<&LayerCache<T>> = items.iter().map(|(fwd, _, _)| &fwd.layers[l]).collect();
        dh_outs = layer_backward(&s, p, l, &inputs, &caches, &dh_outs, grads);
    }

    let e = s.embed;
    let gtable = &mut grads[s.embedding()];
    for ((fwd, _, _), d_emb) in items.iter().zip(&dh_outs) {
        for (t, &id) in fwd.ids.iter().enumerate() {
            let id = id as usize;
            for (g, &d) in gtable[id * e..(id + 1) * e].iter_mut().zip(&d_emb[t * e..(t + 1) * e]) {
                *g += d;
            }
        }
    }
}

/// Backpropagates `dh_outs` (gradients w.r.t. this layer's outputs) through
/// layer `l`, accumulating weight gradients; returns the input gradients.
fn layer_backward<T: Scalar>(
    s: &NetShape,
    p: &[T],
    l: usize,
    inputs: &[&[T]],
    caches: &[&LayerCache<T>],
    dh_outs: &[Vec<T>],
    grads: &mut [T],
) -> Vec<Vec<T>> {
    let h = s.hidden;
    let n_in = s.layer_input(l);
    let cols = n_in + h;
    let w = &p[s.lstm_weights(l)];
    let one = T::one();

    let lens: Vec<usize> = dh_outs.iter().map(|d| d.len() / h).collect();
    let max_len = lens.iter().copied().max().unwrap_or(0);
    let mut dz: Vec<Vec<T>> = lens.iter().map(|&n| vec![T::zero(); n * 4 * h]).collect();
    let mut dh_next: Vec<Vec<T>> = lens.iter().map(|_| vec![T::zero(); h]).collect();
    let mut dc_next: Vec<Vec<T>> = lens.iter().map(|_| vec![T::zero(); h]).collect();
    let mut active = Vec::with_capacity(lens.len());
    let (mut db, mut hb) = (Vec::new(), Vec::new());
    for t in (0..max_len).rev() {
        active.clear();
        active.extend((0..lens.len()).filter(|&k| lens[k] > t));
        for &k in &active {
            let cache = caches[k];
            let g = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
            let d = &mut dz[k][t * 4 * h..(t + 1) * 4 * h];
            let dh_out = &dh_outs[k][t * h..(t + 1) * h];
            let tanh_c = &cache.tanh_c[t * h..(t + 1) * h];
            let (dhn, dcn) = (&dh_next[k], &mut dc_next[k]);
            for j in 0..h {
                let (i_g, f_g, g_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = tanh_c[j];
                let c_prev = if t > 0 { cache.c[(t - 1) * h + j] } else { T::zero() };
                let dh = dh_out[j] + dhn[j];
                let dc = dh * o_g * (one - tc * tc) + dcn[j];
                d[j] = dc * g_g * i_g * (one - i_g);
                d[h + j] = dc * c_prev * f_g * (one - f_g);
                d[2 * h + j] = dc * i_g * (one - g_g * g_g);
                d[3 * h + j] = dh * tc * o_g * (one - o_g);
                dcn[j] = dc * f_g;
            }
        }
        if t == 0 {
            break;
        }
        if active.len() >= GEMM_MIN_BATCH {
            db.clear();
            for &k in &active {
                db.extend_from_slice(&dz[k][t * 4 * h..(t + 1) * 4 * h]);
            }
            hb.clear();
            hb.resize(active.len() * h, T::zero());
            gemm(
                Mat::rows(&db, active.len(), 4 * h, 4 * h),
                Mat::rows(&w[n_in..], 4 * h, h, cols),
                T::zero(),
                &mut hb,
                h,
            );
            for (row, &k) in hb.chunks_exact(h).zip(&active) {
                dh_next[k].copy_from_slice(row);
            }
        } else {
            for &k in &active {
                let dhn = &mut dh_next[k];
                dhn.iter_mut().for_each(|x| *x = T::zero());
                for (r, &dr) in dz[k][t * 4 * h..(t + 1) * 4 * h].iter().enumerate() {
                    axpy(dr, &w[r * cols + n_in..(r + 1) * cols], dhn);
                }
            }
        }
    }

    let mut d_inputs = Vec::with_capacity(lens.len());
    for (k, &n) in lens.iter().enumerate() {
        let dz = &dz[k];
        let gw = &mut grads[s.lstm_weights(l)];
        // input weights: dZᵀ · U
        gemm(
            Mat::rows(dz, n, 4 * h, 4 * h).t(),
            Mat::rows(inputs[k], n, n_in, n_in),
            T::one(),
            gw,
            cols,
        );
        // recurrent weights: dZ[1..]ᵀ · H[..n-1]
        if n > 1 {
            gemm(
                Mat::rows(&dz[4 * h..], n - 1, 4 * h, 4 * h).t(),
                Mat::rows(&caches[k].h, n - 1, h, h),
                T::one(),
                &mut gw[n_in..],
                cols,
            );
        }
        let gb = &mut grads[s.lstm_bias(l)];
        for row in dz.chunks_exact(4 * h) {
            for (g, &d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut d_input = vec![T::zero(); n * n_in];
        gemm(
            Mat::rows(dz, n, 4 * h, 4 * h),
            Mat::rows(w, 4 * h, n_in, cols),
            T::zero(),
            &mut d_input,
            n_in,
        );
        d_inputs.push(d_input);
    }
    d_inputs
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64) -> ModelParams<f64> {
        ModelParams::init(NetShape::paper(104), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn policy_is_a_distribution() {
        let p = params(0);
        let f = forward(&p, &[3, 40, 99, 5]).unwrap();
        let sum: f64 = f.policy().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(f.policy().iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn single_token_embedding_is_its_output() {
        let p = params(1);
        let f = forward(&p, &[17]).unwrap();
        assert_eq!(f.embedding(), f.output(0));
    }

    #[test]
    fn order_matters() {
        let p = params(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        let mut differ = 0;
        for _ in 0..20 {
            let mut ids: Vec<u32> = (0..10).map(|_| rng.gen_range(0..104)).collect();
            ids[0] = 1;
            ids[1] = 2;
            let a = forward(&p, &ids).unwrap();
            ids.swap(0, 1);
            let b = forward(&p, &ids).unwrap();
            if a.embedding() != b.embedding() {
                differ += 1;
            }
        }
        assert!(differ >= 19);
    }

    #[test]
    fn bad_ids() {
        let p = params(0);
        assert!(forward(&p, &[]).is_err());
        assert!(forward(&p, &[104]).is_err());
    }

    #[test]
    fn batch_matches_single() {
        let p = params(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        use rand::Rng;
        let seqs: Vec<Vec<u32>> = (0..7)
            .map(|k| (0..3 + 5 * k).map(|_| rng.gen_range(0..104)).collect())
            .collect();
        let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
        let batch = forward_batch(&p, &refs).unwrap();
        let mut single_grads = p.zeros_like();
        let mut items = Vec::new();
        let dl: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..p.shape().actions).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        for (k, ids) in refs.iter().enumerate() {
            let f = forward(&p, ids).unwrap();
            for (a, b) in f.policy().iter().zip(batch[k].policy()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((f.value() - batch[k].value()).abs() < 1e-12);
            backward(&p, &f, &dl[k], 0.3, &mut single_grads);
            items.push((&batch[k], dl[k].as_slice(), 0.3));
        }
        let mut batch_grads = p.zeros_like();
        backward_batch(&p, &items, &mut batch_grads);
        for (a, b) in single_grads.iter().zip(&batch_grads) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn deterministic() {
        let p = params(4).cast::<f32>();
        let a = forward(&p, &[1, 2, 3]).unwrap();
        let b = forward(&p, &[1, 2, 3]).unwrap();
        assert_eq!(a.policy(), b.policy());
        assert_eq!(a.value().to_bits(), b.value().to_bits());
    }
}
