//! Actor-critic network with hand-written backpropagation.
//!
//! All computations are batched: inputs are `B × state_len` matrices. The
//! trunk is shared by the action-mean head, the state-independent log-std and
//! the value head.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::params::ParamLayout;
use crate::config::{EncoderKind, Scenario};
use crate::rng::Rng;
use crate::state::{SegmentMask, StateDims, StateLayout};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Architecture of a policy; stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub encoder: EncoderKind,
    pub hidden: usize,
    /// Hidden layers (MLP) or attention blocks (sequence encoder).
    pub layers: usize,
    pub scenario: Scenario,
    pub action_dim: usize,
    pub dims: StateDims,
    pub mask: SegmentMask,
}

impl NetworkSpec {
    pub fn state_layout(&self) -> StateLayout {
        self.dims.layout(&self.mask)
    }

    pub fn state_len(&self) -> usize {
        self.state_layout().len()
    }
}

#[derive(Debug, Clone)]
struct BlockIdx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    fw: usize,
    fb: usize,
}

#[derive(Debug, Clone)]
enum EncoderIdx {
    Mlp(Vec<(usize, usize)>),
    Sequence {
        tokens: Vec<(usize, Range<usize>)>,
        segment: usize,
        blocks: Vec<BlockIdx>,
    },
}

#[derive(Debug, Clone)]
struct HeadIdx {
    obs_mean: usize,
    obs_std: usize,
    mean_w: usize,
    mean_b: usize,
    log_std: usize,
    value_w: usize,
    value_b: usize,
}

/// Parameter layout plus the structure needed to run it.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    layout: ParamLayout,
    encoder: EncoderIdx,
    head: HeadIdx,
}

/// Outputs of a batched forward pass, with the activations backprop needs.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `B × A` action means.
    pub mean: Array2<f64>,
    /// Clamped log standard deviations (shared by every row).
    pub log_std: Array1<f64>,
    /// `B` value estimates.
    pub value: Array1<f64>,
    cache: Cache,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Vec<Array2<f64>>,
    q: Vec<Array2<f64>>,
    k: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    att: Vec<Vec<Array1<f64>>>,
    ctx: Vec<Array2<f64>>,
    mid: Vec<Array2<f64>>,
    ff: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
enum EncoderCache {
    Mlp(Vec<Array2<f64>>),
    Sequence {
        blocks: Vec<BlockCache>,
    },
}

#[derive(Debug, Clone)]
struct Cache {
    x: Array2<f64>,
    encoder: EncoderCache,
    h: Array2<f64>,
}

fn view2<'a>(layout: &ParamLayout, p: &'a [f64], idx: usize) -> ArrayView2<'a, f64> {
    let e = layout.entry(idx);
    ArrayView2::from_shape((e.shape[0], e.shape[1]), &p[e.range()]).expect("layout shape")
}

fn view1<'a>(layout: &ParamLayout, p: &'a [f64], idx: usize) -> ArrayView1<'a, f64> {
    ArrayView1::from(&p[layout.entry(idx).range()])
}

fn grad2<'a>(layout: &ParamLayout, g: &'a mut [f64], idx: usize) -> ArrayViewMut2<'a, f64> {
    let e = layout.entry(idx);
    ArrayViewMut2::from_shape((e.shape[0], e.shape[1]), &mut g[e.range()]).expect("layout shape")
}

fn grad1<'a>(layout: &ParamLayout, g: &'a mut [f64], idx: usize) -> ArrayViewMut1<'a, f64> {
    ArrayViewMut1::from(&mut g[layout.entry(idx).range()])
}

fn tanh_grad(d: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    d * &y.mapv(|t| 1.0 - t * t)
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Self {
        let mut layout = ParamLayout::default();
        let state_layout = spec.state_layout();
        let l = state_layout.len();
        let h = spec.hidden;
        let a = spec.action_dim;
        let obs_mean = layout.push("obs.mean", &[l], false);
        let obs_std = layout.push("obs.std", &[l], false);
        let encoder = match spec.encoder {
            EncoderKind::Mlp => {
                let mut layers = Vec::with_capacity(spec.layers);
                let mut fan_in = l;
                for n in 0..spec.layers {
                    let w = layout.push(format!("enc.l{n}.w"), &[h, fan_in], true);
                    let b = layout.push(format!("enc.l{n}.b"), &[h], true);
                    layers.push((w, b));
                    fan_in = h;
                }
                EncoderIdx::Mlp(layers)
            }
            EncoderKind::Sequence => {
                let tokens: Vec<(usize, Range<usize>)> = state_layout
                    .spans()
                    .iter()
                    .map(|(seg, r)| {
                        let w = layout.push(format!("enc.tok.{seg}.w"), &[h, r.len()], true);
                        (w, r.clone())
                    })
                    .collect();
                let segment = layout.push("enc.segment", &[tokens.len(), h], true);
                let blocks = (0..spec.layers)
                    .map(|n| BlockIdx {
                        wq: layout.push(format!("enc.b{n}.wq"), &[h, h], true),
                        wk: layout.push(format!("enc.b{n}.wk"), &[h, h], true),
                        wv: layout.push(format!("enc.b{n}.wv"), &[h, h], true),
                        wo: layout.push(format!("enc.b{n}.wo"), &[h, h], true),
                        fw: layout.push(format!("enc.b{n}.ff.w"), &[h, h], true),
                        fb: layout.push(format!("enc.b{n}.ff.b"), &[h], true),
                    })
                    .collect();
                EncoderIdx::Sequence {
                    tokens,
                    segment,
                    blocks,
                }
            }
        };
        let head = HeadIdx {
            obs_mean,
            obs_std,
            mean_w: layout.push("pi.mean.w", &[a, h], true),
            mean_b: layout.push("pi.mean.b", &[a], true),
            log_std: layout.push("pi.log_std", &[a], true),
            value_w: layout.push("v.w", &[1, h], true),
            value_b: layout.push("v.b", &[1], true),
        };
        Self {
            spec,
            layout,
            encoder,
            head,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Fresh parameters: scaled Gaussian weights, zero biases, a near-zero
    /// action-mean head and identity observation normalization.
    pub fn init(&self, init_log_std: f64, rng: &mut Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.layout.total()];
        for e in self.layout.entries() {
            let std = match e.name.as_str() {
                "obs.std" => {
                    p[e.range()].fill(1.0);
                    continue;
                }
                "pi.log_std" => {
                    p[e.range()].fill(init_log_std);
                    continue;
                }
                "pi.mean.w" => 0.01,
                "enc.segment" => 0.1,
                _ if e.shape.len() == 2 => 1.0 / (e.shape[1] as f64).sqrt(),
                _ => continue,
            };
            for v in &mut p[e.range()] {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        p
    }

    pub fn log_std(&self, p: &[f64]) -> Array1<f64> {
        view1(&self.layout, p, self.head.log_std).mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
    }

    pub fn obs_stats<'a>(&self, p: &'a [f64]) -> (ArrayView1<'a, f64>, ArrayView1<'a, f64>) {
        (
            view1(&self.layout, p, self.head.obs_mean),
            view1(&self.layout, p, self.head.obs_std),
        )
    }

    pub(crate) fn obs_ranges(&self) -> (Range<usize>, Range<usize>) {
        (
            self.layout.entry(self.head.obs_mean).range(),
            self.layout.entry(self.head.obs_std).range(),
        )
    }

    pub fn forward(&self, p: &[f64], states: ArrayView2<'_, f64>) -> Forward {
        let (m, sd) = self.obs_stats(p);
        let x = (&states - &m) / sd;
        let (encoder, h) = match &self.encoder {
            EncoderIdx::Mlp(layers) => {
                let mut hs = vec![x.clone()];
                for &(w, b) in layers {
                    let z = hs.last().unwrap().dot(&view2(&self.layout, p, w).t())
                        + view1(&self.layout, p, b);
                    hs.push(z.mapv(f64::tanh));
                }
                let h = hs.last().unwrap().clone();
                (EncoderCache::Mlp(hs), h)
            }
            EncoderIdx::Sequence {
                tokens,
                segment,
                blocks,
            } => {
                let seg = view2(&self.layout, p, *segment);
                let mut t: Vec<Array2<f64>> = tokens
                    .iter()
                    .enumerate()
                    .map(|(i, (w, r))| {
                        x.slice(s![.., r.clone()]).dot(&view2(&self.layout, p, *w).t()) + seg.row(i)
                    })
                    .collect();
                let mut caches = Vec::with_capacity(blocks.len());
                for b in blocks {
                    let (next, cache) = self.block_forward(p, b, t);
                    caches.push(cache);
                    t = next;
                }
                let n = t.len() as f64;
                let mut pooled = Array2::zeros(t[0].raw_dim());
                for ti in &t {
                    pooled += ti;
                }
                let h = (pooled / n).mapv(f64::tanh);
                (EncoderCache::Sequence { blocks: caches }, h)
            }
        };
        let mean = h.dot(&view2(&self.layout, p, self.head.mean_w).t())
            + view1(&self.layout, p, self.head.mean_b);
        let value = h
            .dot(&view1(&self.layout, p, self.head.value_w))
            .mapv(|v| v + p[self.layout.entry(self.head.value_b).offset]);
        Forward {
            mean,
            log_std: self.log_std(p),
            value,
            cache: Cache { x, encoder, h },
        }
    }

    fn block_forward(&self, p: &[f64], b: &BlockIdx, input: Vec<Array2<f64>>) -> (Vec<Array2<f64>>, BlockCache) {
        let lay = &self.layout;
        let (wq, wk, wv, wo, fw) = (
            view2(lay, p, b.wq),
            view2(lay, p, b.wk),
            view2(lay, p, b.wv),
            view2(lay, p, b.wo),
            view2(lay, p, b.fw),
        );
        let fb = view1(lay, p, b.fb);
        let scale = 1.0 / (self.spec.hidden as f64).sqrt();
        let q: Vec<_> = input.iter().map(|t| t.dot(&wq.t())).collect();
        let k: Vec<_> = input.iter().map(|t| t.dot(&wk.t())).collect();
        let v: Vec<_> = input.iter().map(|t| t.dot(&wv.t())).collect();
        let n = input.len();
        let batch = input[0].nrows();
        let mut att = Vec::with_capacity(n);
        let mut ctx = Vec::with_capacity(n);
        for qi in &q {
            let scores: Vec<Array1<f64>> = k
                .iter()
                .map(|kj| (qi * kj).sum_axis(Axis(1)) * scale)
                .collect();
            let mut max = Array1::from_elem(batch, f64::NEG_INFINITY);
            for s in &scores {
                max.zip_mut_with(s, |m, &x| *m = m.max(x));
            }
            let exps: Vec<Array1<f64>> = scores.iter().map(|s| (s - &max).mapv(f64::exp)).collect();
            let mut total = Array1::zeros(batch);
            for e in &exps {
                total += e;
            }
            let weights: Vec<Array1<f64>> = exps.into_iter().map(|e| e / &total).collect();
            let mut c = Array2::zeros(input[0].raw_dim());
            for (a, vj) in weights.iter().zip(&v) {
                c += &(vj * &a.view().insert_axis(Axis(1)));
            }
            att.push(weights);
            ctx.push(c);
        }
        let mid: Vec<_> = input
            .iter()
            .zip(&ctx)
            .map(|(t, c)| t + &c.dot(&wo.t()))
            .collect();
        let ff: Vec<_> = mid
            .iter()
            .map(|u| (u.dot(&fw.t()) + fb).mapv(f64::tanh))
            .collect();
        let out = mid.iter().zip(&ff).map(|(u, f)| u + f).collect();
        (
            out,
            BlockCache {
                input,
                q,
                k,
                v,
                att,
                ctx,
                mid,
                ff,
            },
        )
    }

    /// Gradient of a loss with respect to every parameter, given the loss
    /// gradients at the outputs. `d_log_std` is taken with respect to the
    /// clamped log-std; it is passed through only where the clamp is inactive.
    pub fn backward(
        &self,
        p: &[f64],
        fwd: &Forward,
        d_mean: &Array2<f64>,
        d_log_std: &Array1<f64>,
        d_value: &Array1<f64>,
    ) -> Vec<f64> {
        let lay = &self.layout;
        let mut g = vec![0.0; lay.total()];
        let h = &fwd.cache.h;

        grad2(lay, &mut g, self.head.mean_w).assign(&d_mean.t().dot(h));
        grad1(lay, &mut g, self.head.mean_b).assign(&d_mean.sum_axis(Axis(0)));
        grad2(lay, &mut g, self.head.value_w)
            .row_mut(0)
            .assign(&d_value.dot(h));
        g[lay.entry(self.head.value_b).offset] = d_value.sum();
        let raw = view1(lay, p, self.head.log_std);
        let mut gl = grad1(lay, &mut g, self.head.log_std);
        for ((gi, &r), &d) in gl.iter_mut().zip(raw.iter()).zip(d_log_std.iter()) {
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&r) {
                *gi = d;
            }
        }

        let mut dh = d_mean.dot(&view2(lay, p, self.head.mean_w));
        let wv = view1(lay, p, self.head.value_w);
        for (mut row, &dv) in dh.rows_mut().into_iter().zip(d_value.iter()) {
            row.scaled_add(dv, &wv);
        }

        match (&self.encoder, &fwd.cache.encoder) {
            (EncoderIdx::Mlp(layers), EncoderCache::Mlp(hs)) => {
                for (n, &(w, b)) in layers.iter().enumerate().rev() {
                    let dz = tanh_grad(&dh, &hs[n + 1]);
                    grad2(lay, &mut g, w).assign(&dz.t().dot(&hs[n]));
                    grad1(lay, &mut g, b).assign(&dz.sum_axis(Axis(0)));
                    if n > 0 {
                        dh = dz.dot(&view2(lay, p, w));
                    }
                }
            }
            (
                EncoderIdx::Sequence {
                    tokens,
                    segment,
                    blocks,
                },
                EncoderCache::Sequence { blocks: caches },
            ) => {
                let n = tokens.len();
                let dpool = tanh_grad(&dh, h) / n as f64;
                let mut dt: Vec<Array2<f64>> = vec![dpool; n];
                for (b, cache) in blocks.iter().zip(caches).rev() {
                    dt = self.block_backward(p, b, cache, dt, &mut g);
                }
                let x = &fwd.cache.x;
                for (i, (w, r)) in tokens.iter().enumerate() {
                    grad2(lay, &mut g, *w).assign(&dt[i].t().dot(&x.slice(s![.., r.clone()])));
                    grad2(lay, &mut g, *segment)
                        .row_mut(i)
                        .assign(&dt[i].sum_axis(Axis(0)));
                }
            }
            _ => unreachable!("cache matches encoder"),
        }
        g
    }

    fn block_backward(
        &self,
        p: &[f64],
        b: &BlockIdx,
        c: &BlockCache,
        d_out: Vec<Array2<f64>>,
        g: &mut [f64],
    ) -> Vec<Array2<f64>> {
        let lay = &self.layout;
        let (wq, wk, wv, wo, fw) = (
            view2(lay, p, b.wq),
            view2(lay, p, b.wk),
            view2(lay, p, b.wv),
            view2(lay, p, b.wo),
            view2(lay, p, b.fw),
        );
        let scale = 1.0 / (self.spec.hidden as f64).sqrt();
        let n = c.input.len();
        let hdim = self.spec.hidden;
        let mut d_fw = Array2::<f64>::zeros((hdim, hdim));
        let mut d_fb = Array1::<f64>::zeros(hdim);
        let mut d_wo = Array2::<f64>::zeros((hdim, hdim));
        let mut d_in = Vec::with_capacity(n);
        let mut d_ctx = Vec::with_capacity(n);
        for i in 0..n {
            let dz = tanh_grad(&d_out[i], &c.ff[i]);
            d_fw += &dz.t().dot(&c.mid[i]);
            d_fb += &dz.sum_axis(Axis(0));
            let du = &d_out[i] + &dz.dot(&fw);
            d_wo += &du.t().dot(&c.ctx[i]);
            d_ctx.push(du.dot(&wo));
            d_in.push(du);
        }
        let zeros = Array2::<f64>::zeros(c.input[0].raw_dim());
        let mut dq = vec![zeros.clone(); n];
        let mut dk = vec![zeros.clone(); n];
        let mut dv = vec![zeros; n];
        for i in 0..n {
            let da: Vec<Array1<f64>> = c.v.iter().map(|vj| (&d_ctx[i] * vj).sum_axis(Axis(1))).collect();
            let mut inner = Array1::<f64>::zeros(da[0].len());
            for (a, d) in c.att[i].iter().zip(&da) {
                inner += &(a * d);
            }
            for j in 0..n {
                let a = &c.att[i][j];
                dv[j] += &(&d_ctx[i] * &a.view().insert_axis(Axis(1)));
                let ds = (a * &(&da[j] - &inner)) * scale;
                let ds = ds.insert_axis(Axis(1));
                dq[i] += &(&c.k[j] * &ds);
                dk[j] += &(&c.q[i] * &ds);
            }
        }
        let mut d_wq = Array2::<f64>::zeros((hdim, hdim));
        let mut d_wk = Array2::<f64>::zeros((hdim, hdim));
        let mut d_wv = Array2::<f64>::zeros((hdim, hdim));
        for i in 0..n {
            d_wq += &dq[i].t().dot(&c.input[i]);
            d_wk += &dk[i].t().dot(&c.input[i]);
            d_wv += &dv[i].t().dot(&c.input[i]);
            d_in[i] += &dq[i].dot(&wq);
            d_in[i] += &dk[i].dot(&wk);
            d_in[i] += &dv[i].dot(&wv);
        }
        grad2(lay, g, b.wq).assign(&d_wq);
        grad2(lay, g, b.wk).assign(&d_wk);
        grad2(lay, g, b.wv).assign(&d_wv);
        grad2(lay, g, b.wo).assign(&d_wo);
        grad2(lay, g, b.fw).assign(&d_fw);
        grad1(lay, g, b.fb).assign(&d_fb);
        d_in
    }
}
