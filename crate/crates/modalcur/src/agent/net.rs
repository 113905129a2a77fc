//! Recurrent actor-critic network: a gated recurrent cell feeding two
//! categorical heads and a scalar value head. All parameters live in one
//! flat `f64` vector so the optimiser, gradient clipping and the
//! finite-difference checks can treat them uniformly.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Network dimensions. `dirs` is fixed by the action space but kept explicit
/// so toy instances in tests can shrink it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub obs: usize,
    pub hidden: usize,
    pub sensors: usize,
    pub dirs: usize,
}

/// Flat-parameter slices, in declaration order.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub wz: Range<usize>,
    pub uz: Range<usize>,
    pub bz: Range<usize>,
    pub wr: Range<usize>,
    pub ur: Range<usize>,
    pub br: Range<usize>,
    pub wn: Range<usize>,
    pub un: Range<usize>,
    pub bn: Range<usize>,
    pub ws: Range<usize>,
    pub bs: Range<usize>,
    pub wd: Range<usize>,
    pub bd: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub total: usize,
}

impl NetDims {
    pub fn validate(&self) -> Result<()> {
        if self.obs == 0 || self.hidden == 0 || self.sensors == 0 || self.dirs == 0 {
            return Err(Error::InvalidConfig(format!(
                "network dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub(crate) fn layout(&self) -> Layout {
        let (o, h, s, d) = (self.obs, self.hidden, self.sensors, self.dirs);
        let mut at = 0usize;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        Layout {
            wz: take(h * o),
            uz: take(h * h),
            bz: take(h),
            wr: take(h * o),
            ur: take(h * h),
            br: take(h),
            wn: take(h * o),
            un: take(h * h),
            bn: take(h),
            ws: take(s * h),
            bs: take(s),
            wd: take(d * h),
            bd: take(d),
            wv: take(h),
            bv: take(1),
            total: at,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().total
    }
}

/// `out = W x + b`, `W` row-major `rows × cols`.
fn affine(w: &[f64], b: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for c in 0..cols {
            acc += row[c] * x[c];
        }
        out[r] = acc;
    }
}

/// `out += W x` without a bias.
fn matvec_add(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for c in 0..cols {
            acc += row[c] * x[c];
        }
        out[r] += acc;
    }
}

/// `out += Wᵀ g` for row-major `W`.
fn matvec_t_add(w: &[f64], rows: usize, cols: usize, g: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let gr = g[r];
        for c in 0..cols {
            out[c] += row[c] * gr;
        }
    }
}

/// Rank-one accumulation `Gw += g xᵀ`, `Gb += g`.
fn outer_add(gw: &mut [f64], gb: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &gr) in g.iter().enumerate() {
        let row = &mut gw[r * cols..(r + 1) * cols];
        for c in 0..cols {
            row[c] += gr * x[c];
        }
        gb[r] += gr;
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= s);
    out
}

/// `log softmax(logits)[idx]`.
pub fn log_softmax_at(logits: &[f64], idx: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    logits[idx] - lse
}

/// Per-step forward cache for backpropagation through time.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub rh: Vec<f64>,
    pub n: Vec<f64>,
    pub h: Vec<f64>,
    pub sensor_logits: Vec<f64>,
    pub dir_logits: Vec<f64>,
    pub sensor_probs: Vec<f64>,
    pub dir_probs: Vec<f64>,
    pub value: f64,
}

/// The policy network. Parameters are finite by construction; `validate`
/// re-checks after deserialisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruNet {
    pub dims: NetDims,
    pub params: Vec<f64>,
}

impl GruNet {
    pub fn zeros(dims: NetDims) -> Result<GruNet> {
        dims.validate()?;
        let n = dims.n_params();
        Ok(GruNet {
            dims,
            params: vec![0.0; n],
        })
    }

    /// Seeded initialisation: recurrent-core weights uniform in
    /// `±1/sqrt(fan_in)`, heads zero so the initial policy is exactly
    /// uniform and the initial value is 0.
    pub fn init(dims: NetDims, seed: u64) -> Result<GruNet> {
        let mut net = GruNet::zeros(dims)?;
        let lay = dims.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |range: Range<usize>, fan_in: usize, params: &mut [f64]| {
            let a = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-a..a);
            }
        };
        fill(lay.wz, dims.obs, &mut net.params);
        fill(lay.uz, dims.hidden, &mut net.params);
        fill(lay.wr, dims.obs, &mut net.params);
        fill(lay.ur, dims.hidden, &mut net.params);
        fill(lay.wn, dims.obs, &mut net.params);
        fill(lay.un, dims.hidden, &mut net.params);
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.params.len() != self.dims.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "parameter vector length {} does not match dims {:?}",
                self.params.len(),
                self.dims
            )));
        }
        if !self.params.iter().all(|p| p.is_finite()) {
            return Err(Error::InvalidConfig("non-finite network parameter".into()));
        }
        Ok(())
    }

    pub fn zero_hidden(&self) -> Vec<f64> {
        vec![0.0; self.dims.hidden]
    }

    /// One recurrent step plus heads, with the full cache.
    pub fn forward_step(&self, obs: &[f64], h_prev: &[f64]) -> Result<StepCache> {
        let d = self.dims;
        if obs.len() != d.obs {
            return Err(Error::DimensionMismatch(format!(
                "observation length {} != {}",
                obs.len(),
                d.obs
            )));
        }
        if h_prev.len() != d.hidden {
            return Err(Error::DimensionMismatch(format!(
                "hidden length {} != {}",
                h_prev.len(),
                d.hidden
            )));
        }
        let lay = d.layout();
        let p = &self.params;
        let h = d.hidden;

        let mut za = vec![0.0; h];
        affine(&p[lay.wz], &p[lay.bz], h, d.obs, obs, &mut za);
        matvec_add(&p[lay.uz], h, h, h_prev, &mut za);
        let z: Vec<f64> = za.iter().map(|&a| sigmoid(a)).collect();

        let mut ra = vec![0.0; h];
        affine(&p[lay.wr], &p[lay.br], h, d.obs, obs, &mut ra);
        matvec_add(&p[lay.ur], h, h, h_prev, &mut ra);
        let r: Vec<f64> = ra.iter().map(|&a| sigmoid(a)).collect();

        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(ri, hi)| ri * hi).collect();
        let mut na = vec![0.0; h];
        affine(&p[lay.wn], &p[lay.bn], h, d.obs, obs, &mut na);
        matvec_add(&p[lay.un], h, h, &rh, &mut na);
        let n: Vec<f64> = na.iter().map(|&a| a.tanh()).collect();

        let h_new: Vec<f64> = z
            .iter()
            .zip(&n)
            .zip(h_prev)
            .map(|((zi, ni), hi)| (1.0 - zi) * ni + zi * hi)
            .collect();

        let mut sensor_logits = vec![0.0; d.sensors];
        affine(&p[lay.ws], &p[lay.bs], d.sensors, h, &h_new, &mut sensor_logits);
        let mut dir_logits = vec![0.0; d.dirs];
        affine(&p[lay.wd], &p[lay.bd], d.dirs, h, &h_new, &mut dir_logits);
        let mut value = p[lay.bv.start];
        for (wi, hi) in p[lay.wv.clone()].iter().zip(&h_new) {
            value += wi * hi;
        }

        let sensor_probs = softmax(&sensor_logits);
        let dir_probs = softmax(&dir_logits);
        Ok(StepCache {
            h_prev: h_prev.to_vec(),
            z,
            r,
            rh,
            n,
            h: h_new,
            sensor_logits,
            dir_logits,
            sensor_probs,
            dir_probs,
            value,
        })
    }

    /// Backpropagate one step. `d_sensor`/`d_dir` are loss gradients w.r.t.
    /// head logits, `d_value` w.r.t. the value output, `dh_next` w.r.t.
    /// `h` flowing in from the following step. Accumulates into `grad` and
    /// returns the gradient w.r.t. `h_prev`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_step(
        &self,
        obs: &[f64],
        cache: &StepCache,
        d_sensor: &[f64],
        d_dir: &[f64],
        d_value: f64,
        dh_next: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let d = self.dims;
        let lay = d.layout();
        let p = &self.params;
        let h = d.hidden;

        // Head gradients and their contribution to dL/dh.
        let mut dh: Vec<f64> = dh_next.to_vec();
        // sensor head
        {
            let (gws, gbs) = ranges_mut(grad, lay.ws.clone(), lay.bs.clone());
            outer_add(gws, gbs, d_sensor, &cache.h);
        }
        matvec_t_add(&p[lay.ws.clone()], d.sensors, h, d_sensor, &mut dh);
        // direction head
        {
            let (gwd, gbd) = ranges_mut(grad, lay.wd.clone(), lay.bd.clone());
            outer_add(gwd, gbd, d_dir, &cache.h);
        }
        matvec_t_add(&p[lay.wd.clone()], d.dirs, h, d_dir, &mut dh);
        // value head
        {
            let (gwv, gbv) = ranges_mut(grad, lay.wv.clone(), lay.bv.clone());
            for (g, hi) in gwv.iter_mut().zip(&cache.h) {
                *g += d_value * hi;
            }
            gbv[0] += d_value;
        }
        for (dhi, wi) in dh.iter_mut().zip(&p[lay.wv.clone()]) {
            *dhi += d_value * wi;
        }

        // Through the cell: h = (1-z)∘n + z∘h_prev.
        let dn: Vec<f64> = dh
            .iter()
            .zip(&cache.z)
            .map(|(d, z)| d * (1.0 - z))
            .collect();
        let dz: Vec<f64> = dh
            .iter()
            .zip(&cache.h_prev)
            .zip(&cache.n)
            .map(|((d, hp), n)| d * (hp - n))
            .collect();
        let dna: Vec<f64> = dn
            .iter()
            .zip(&cache.n)
            .map(|(d, n)| d * (1.0 - n * n))
            .collect();

        let mut dh_prev: Vec<f64> = dh
            .iter()
            .zip(&cache.z)
            .map(|(d, z)| d * z)
            .collect();

        {
            let (gwn, gbn) = ranges_mut(grad, lay.wn.clone(), lay.bn.clone());
            outer_add(gwn, gbn, &dna, obs);
        }
        {
            let gun = &mut grad[lay.un.clone()];
            for (r, &g) in dna.iter().enumerate() {
                let row = &mut gun[r * h..(r + 1) * h];
                for c in 0..h {
                    row[c] += g * cache.rh[c];
                }
            }
        }
        let mut drh = vec![0.0; h];
        matvec_t_add(&p[lay.un.clone()], h, h, &dna, &mut drh);
        let dr: Vec<f64> = drh
            .iter()
            .zip(&cache.h_prev)
            .map(|(d, hp)| d * hp)
            .collect();
        for i in 0..h {
            dh_prev[i] += drh[i] * cache.r[i];
        }

        let dza: Vec<f64> = dz
            .iter()
            .zip(&cache.z)
            .map(|(d, z)| d * z * (1.0 - z))
            .collect();
        let dra: Vec<f64> = dr
            .iter()
            .zip(&cache.r)
            .map(|(d, r)| d * r * (1.0 - r))
            .collect();

        {
            let (gwz, gbz) = ranges_mut(grad, lay.wz.clone(), lay.bz.clone());
            outer_add(gwz, gbz, &dza, obs);
        }
        {
            let guz = &mut grad[lay.uz.clone()];
            for (r, &g) in dza.iter().enumerate() {
                let row = &mut guz[r * h..(r + 1) * h];
                for c in 0..h {
                    row[c] += g * cache.h_prev[c];
                }
            }
        }
        {
            let (gwr, gbr) = ranges_mut(grad, lay.wr.clone(), lay.br.clone());
            outer_add(gwr, gbr, &dra, obs);
        }
        {
            let gur = &mut grad[lay.ur.clone()];
            for (r, &g) in dra.iter().enumerate() {
                let row = &mut gur[r * h..(r + 1) * h];
                for c in 0..h {
                    row[c] += g * cache.h_prev[c];
                }
            }
        }
        matvec_t_add(&p[lay.uz.clone()], h, h, &dza, &mut dh_prev);
        matvec_t_add(&p[lay.ur.clone()], h, h, &dra, &mut dh_prev);

        dh_prev
    }

    /// Inference-facing step: the two action distributions, the value
    /// estimate and the next hidden state.
    #[allow(clippy::type_complexity)]
    pub fn policy_step(
        &self,
        obs: &[f64],
        hidden: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, f64, Vec<f64>)> {
        let cache = self.forward_step(obs, hidden)?;
        Ok((cache.sensor_probs, cache.dir_probs, cache.value, cache.h))
    }
}

/// Two disjoint mutable subslices of the flat gradient. The layout is
/// ordered, so `a` always precedes `b`.
fn ranges_mut(
    grad: &mut [f64],
    a: Range<usize>,
    b: Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (left, right) = grad.split_at_mut(b.start);
    (&mut left[a], &mut right[..b.end - b.start])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dims() -> NetDims {
        NetDims {
            obs: 5,
            hidden: 4,
            sensors: 3,
            dirs: 4,
        }
    }

    #[test]
    fn zero_network_is_uniform_with_zero_value() {
        let net = GruNet::zeros(dims()).unwrap();
        let obs = vec![0.3, -1.0, 0.7, 0.0, 2.0];
        let (ps, pd, v, h) = net.policy_step(&obs, &net.zero_hidden()).unwrap();
        for p in &ps {
            assert_relative_eq!(*p, 1.0 / 3.0, epsilon = 1e-15);
        }
        for p in &pd {
            assert_relative_eq!(*p, 0.25, epsilon = 1e-15);
        }
        assert_eq!(v, 0.0);
        assert!(h.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn deterministic_and_normalised() {
        let net = GruNet::init(dims(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut hidden = net.zero_hidden();
        for _ in 0..1000 {
            let obs: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (ps, pd, v, h) = net.policy_step(&obs, &hidden).unwrap();
            let (ps2, pd2, v2, h2) = net.policy_step(&obs, &hidden).unwrap();
            assert_eq!(ps, ps2);
            assert_eq!(pd, pd2);
            assert_eq!(v, v2);
            assert_eq!(h, h2);
            assert!((ps.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!((pd.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(ps.iter().all(|&p| p >= 0.0));
            assert!(pd.iter().all(|&p| p >= 0.0));
            hidden = h;
        }
    }

    #[test]
    fn heads_start_uniform_after_init() {
        let net = GruNet::init(dims(), 4).unwrap();
        let obs = vec![1.0, 0.0, -1.0, 0.5, 0.2];
        let (ps, pd, v, _) = net.policy_step(&obs, &net.zero_hidden()).unwrap();
        for p in ps {
            assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-12);
        }
        for p in pd {
            assert_relative_eq!(p, 0.25, epsilon = 1e-12);
        }
        assert_eq!(v, 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = GruNet::zeros(dims()).unwrap();
        assert!(net.policy_step(&[1.0; 4], &net.zero_hidden()).is_err());
        assert!(net.policy_step(&[1.0; 5], &[0.0; 3]).is_err());
    }

    #[test]
    fn log_softmax_matches_softmax() {
        let logits = [0.3, -2.0, 1.4, 0.0];
        let probs = softmax(&logits);
        for (i, &p) in probs.iter().enumerate() {
            assert_relative_eq!(log_softmax_at(&logits, i), p.ln(), epsilon = 1e-12);
        }
    }

    /// Finite-difference check of one recurrent step: d(sum of outputs)/dθ.
    #[test]
    fn single_step_backward_matches_finite_differences() {
        let d = dims();
        let mut net = GruNet::init(d, 21).unwrap();
        // give the heads nonzero weights too
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for p in &mut net.params {
            if *p == 0.0 {
                *p = rng.random_range(-0.5..0.5);
            }
        }
        let obs: Vec<f64> = (0..d.obs).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h0: Vec<f64> = (0..d.hidden).map(|_| rng.random_range(-0.5..0.5)).collect();

        // scalar objective: sum of all logits + value + sum of h
        let objective = |net: &GruNet| -> f64 {
            let c = net.forward_step(&obs, &h0).unwrap();
            c.sensor_logits.iter().sum::<f64>()
                + c.dir_logits.iter().sum::<f64>()
                + c.value
                + c.h.iter().sum::<f64>()
        };
        let cache = net.forward_step(&obs, &h0).unwrap();
        let mut grad = vec![0.0; net.params.len()];
        let ones_h = vec![1.0; d.hidden];
        net.backward_step(
            &obs,
            &cache,
            &vec![1.0; d.sensors],
            &vec![1.0; d.dirs],
            1.0,
            &ones_h,
            &mut grad,
        );
        let eps = 1e-6;
        for i in (0..net.params.len()).step_by(7) {
            let orig = net.params[i];
            net.params[i] = orig + eps;
            let up = objective(&net);
            net.params[i] = orig - eps;
            let dn = objective(&net);
            net.params[i] = orig;
            let fd = (up - dn) / (2.0 * eps);
            let denom = fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(
                ((fd - grad[i]) / denom).abs() < 1e-4,
                "param {i}: fd {fd} vs analytic {}",
                grad[i]
            );
        }
    }
}
