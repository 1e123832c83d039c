//! Small encoder-decoder feature network with skip connections.
//!
//! ```text
//! x ─ enc1a ─ enc1b ─┬────────────────────────────── cat ─ dec1 ─ out ─ l2norm
//!                    └ pool ─ enc2 ─┬──────── cat ─ dec2 ─ up ┘
//!                                   └ pool ─ mid ─ up ┘
//! ```
//! Every conv is 3x3 and followed by a leaky rectifier except `out`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::*;
use super::params::{NamedTensor, ParamSet};
use crate::error::{Error, Result};

/// Channel widths of the three resolutions, output feature count and the
/// leaky-rectifier slope. Fully determines the parameter shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Topology {
    pub widths: [usize; 3],
    pub features: usize,
    pub slope: f64,
}

impl Default for Topology {
    fn default() -> Self {
        Topology {
            widths: [4, 8, 8],
            features: 8,
            slope: 0.125,
        }
    }
}

impl Topology {
    /// `(name, cin, cout)` for every conv in forward order.
    pub fn layers(&self) -> [(&'static str, usize, usize); 7] {
        let [c1, c2, c3] = self.widths;
        [
            ("enc1a", 1, c1),
            ("enc1b", c1, c1),
            ("enc2", c1, c2),
            ("mid", c2, c3),
            ("dec2", c3 + c2, c2),
            ("dec1", c2 + c1, c1),
            ("out", c1, self.features),
        ]
    }

    fn to_tensor(self) -> NamedTensor {
        NamedTensor {
            name: "topology".into(),
            dims: vec![5],
            data: vec![
                self.widths[0] as f32,
                self.widths[1] as f32,
                self.widths[2] as f32,
                self.features as f32,
                self.slope as f32,
            ],
        }
    }

    fn from_tensor(t: &NamedTensor) -> Result<Topology> {
        if t.dims != [5] {
            return Err(Error::WeightTopologyMismatch("malformed topology tensor".into()));
        }
        let u = |v: f32| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::WeightTopologyMismatch(format!("bad channel count {v}")))
            }
        };
        Ok(Topology {
            widths: [u(t.data[0])?, u(t.data[1])?, u(t.data[2])?],
            features: u(t.data[3])?,
            slope: t.data[4] as f64,
        })
    }
}

/// Parameters of the feature network.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNetWeights {
    pub topology: Topology,
    pub params: ParamSet,
    pub version: u32,
}

/// Incremented whenever the forward computation changes meaning.
pub const CONVNET_VERSION: u32 = 1;

impl ConvNetWeights {
    /// All-zero parameters with the shapes implied by `topology`.
    pub fn zeros(topology: Topology) -> Self {
        let mut params = ParamSet::new();
        for (name, cin, cout) in topology.layers() {
            params.push(format!("{name}.w"), &[cout, cin, 3, 3], vec![0.0; cout * cin * 9]);
            params.push(format!("{name}.b"), &[cout], vec![0.0; cout]);
        }
        ConvNetWeights {
            topology,
            params,
            version: CONVNET_VERSION,
        }
    }

    /// He-style uniform initialization; biases start at a small positive
    /// value so fewer units begin on the flat side of the rectifier.
    pub fn random(topology: Topology, seed: u64) -> Self {
        let mut w = Self::zeros(topology);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, cin, _) in topology.layers() {
            let bound = (6.0 / (9.0 * cin as f64)).sqrt();
            for v in w.params.get_mut(&format!("{name}.w")) {
                *v = rng.gen_range(-bound..bound);
            }
            for v in w.params.get_mut(&format!("{name}.b")) {
                *v = 0.01;
            }
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        let expect = Self::zeros(self.topology);
        let same_layout = expect.params.names().eq(self.params.names())
            && expect
                .params
                .names()
                .all(|n| expect.params.dims(n) == self.params.dims(n));
        if !same_layout {
            return Err(Error::WeightTopologyMismatch(
                "parameter tensors do not match the topology".into(),
            ));
        }
        if !self.params.is_finite() {
            return Err(Error::WeightTopologyMismatch("non-finite weights".into()));
        }
        Ok(())
    }

    pub fn to_named(&self, prefix: &str) -> Vec<NamedTensor> {
        let mut t = vec![NamedTensor {
            name: format!("{prefix}topology"),
            ..self.topology.to_tensor()
        }];
        t.extend(self.params.to_named(prefix));
        t
    }

    pub fn from_named(prefix: &str, tensors: &[NamedTensor]) -> Result<Self> {
        let topo = NamedTensor::find(tensors, &format!("{prefix}topology"))
            .ok_or_else(|| Error::WeightTopologyMismatch(format!("missing {prefix}topology")))?;
        let mut w = Self::zeros(Topology::from_tensor(topo)?);
        w.params.load_named(prefix, tensors)?;
        Ok(w)
    }

    fn conv(&self, name: &str, x: &Tensor3, cout: usize) -> Tensor3 {
        conv3x3_forward(
            x,
            self.params.get(&format!("{name}.w")),
            self.params.get(&format!("{name}.b")),
            cout,
        )
    }

    /// Inference forward pass on a `1 x h x w` input.
    pub fn forward(&self, input: &Tensor3) -> Result<Tensor3> {
        Ok(self.forward_cached(input)?.0)
    }

    /// Forward pass keeping every intermediate needed by [`Self::backward`].
    pub fn forward_cached(&self, input: &Tensor3) -> Result<(Tensor3, ConvNetCache)> {
        if input.c != 1 {
            return Err(Error::ShapeMismatch(format!(
                "network input has 1 channel, got {}",
                input.c
            )));
        }
        let s = self.topology.slope;
        let [c1, c2, c3] = self.topology.widths;
        let f = self.topology.features;

        let p1a = self.conv("enc1a", input, c1);
        let a1a = leaky_forward(&p1a, s);
        let p1b = self.conv("enc1b", &a1a, c1);
        let a1b = leaky_forward(&p1b, s);
        let pool1 = avgpool2_forward(&a1b);
        let p2 = self.conv("enc2", &pool1, c2);
        let a2 = leaky_forward(&p2, s);
        let pool2 = avgpool2_forward(&a2);
        let pm = self.conv("mid", &pool2, c3);
        let am = leaky_forward(&pm, s);
        let up2 = upsample2_forward(&am, a2.h, a2.w);
        let cat2 = concat(&up2, &a2);
        let pd2 = self.conv("dec2", &cat2, c2);
        let ad2 = leaky_forward(&pd2, s);
        let up1 = upsample2_forward(&ad2, a1b.h, a1b.w);
        let cat1 = concat(&up1, &a1b);
        let pd1 = self.conv("dec1", &cat1, c1);
        let ad1 = leaky_forward(&pd1, s);
        let po = self.conv("out", &ad1, f);
        let out = l2norm_forward(&po);
        let cache = ConvNetCache {
            input: input.clone(),
            p1a,
            a1a,
            p1b,
            a1b,
            pool1,
            p2,
            a2,
            pool2,
            pm,
            am,
            cat2,
            pd2,
            ad2,
            cat1,
            pd1,
            ad1,
            po,
        };
        Ok((out, cache))
    }

    /// Exact reverse-mode gradients given `dL/d output`. Returns the weight
    /// gradient (aligned with `params.data()`) and `dL/d input`.
    pub fn backward(&self, cache: &ConvNetCache, grad_out: &Tensor3) -> (Vec<f64>, Tensor3) {
        let s = self.topology.slope;
        let [c1, c2, c3] = self.topology.widths;
        let mut gw = vec![0.0; self.params.len()];
        let mut conv_back = |name: &str, x: &Tensor3, g: &Tensor3| -> Tensor3 {
            let (gin, w, b) = conv3x3_backward(x, self.params.get(&format!("{name}.w")), g);
            gw[self.params.range(&format!("{name}.w"))].copy_from_slice(&w);
            gw[self.params.range(&format!("{name}.b"))].copy_from_slice(&b);
            gin
        };
        let c = cache;
        let g_po = l2norm_backward(&c.po, grad_out);
        let g_ad1 = conv_back("out", &c.ad1, &g_po);
        let g_pd1 = leaky_backward(&c.pd1, &g_ad1, s);
        let g_cat1 = conv_back("dec1", &c.cat1, &g_pd1);
        let (g_up1, g_a1b_skip) = split(&g_cat1, c2);
        let g_ad2 = upsample2_backward((c2, c.ad2.h, c.ad2.w), &g_up1);
        let g_pd2 = leaky_backward(&c.pd2, &g_ad2, s);
        let g_cat2 = conv_back("dec2", &c.cat2, &g_pd2);
        let (g_up2, g_a2_skip) = split(&g_cat2, c3);
        let g_am = upsample2_backward((c3, c.am.h, c.am.w), &g_up2);
        let g_pm = leaky_backward(&c.pm, &g_am, s);
        let g_pool2 = conv_back("mid", &c.pool2, &g_pm);
        let mut g_a2 = avgpool2_backward((c2, c.a2.h, c.a2.w), &g_pool2);
        add_into(&mut g_a2, &g_a2_skip);
        let g_p2 = leaky_backward(&c.p2, &g_a2, s);
        let g_pool1 = conv_back("enc2", &c.pool1, &g_p2);
        let mut g_a1b = avgpool2_backward((c1, c.a1b.h, c.a1b.w), &g_pool1);
        add_into(&mut g_a1b, &g_a1b_skip);
        let g_p1b = leaky_backward(&c.p1b, &g_a1b, s);
        let g_a1a = conv_back("enc1b", &c.a1a, &g_p1b);
        let g_p1a = leaky_backward(&c.p1a, &g_a1a, s);
        let g_in = conv_back("enc1a", &c.input, &g_p1a);
        (gw, g_in)
    }

    /// Smallest distance of any pre-activation to the rectifier kink.
    pub fn min_kink_distance(cache: &ConvNetCache) -> f64 {
        [&cache.p1a, &cache.p1b, &cache.p2, &cache.pm, &cache.pd2, &cache.pd1]
            .iter()
            .flat_map(|t| t.data.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

fn add_into(a: &mut Tensor3, b: &Tensor3) {
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
}

/// Intermediates of one forward pass (`p*` pre-activations, `a*` activations).
#[derive(Debug, Clone)]
pub struct ConvNetCache {
    input: Tensor3,
    p1a: Tensor3,
    a1a: Tensor3,
    p1b: Tensor3,
    a1b: Tensor3,
    pool1: Tensor3,
    p2: Tensor3,
    a2: Tensor3,
    pool2: Tensor3,
    pm: Tensor3,
    am: Tensor3,
    cat2: Tensor3,
    pd2: Tensor3,
    ad2: Tensor3,
    cat1: Tensor3,
    pd1: Tensor3,
    ad1: Tensor3,
    po: Tensor3,
}

/// Gradients of the network output contracted with `upstream`:
/// `(dL/d weights, dL/d input)`.
pub fn convnet_backward(
    weights: &ConvNetWeights,
    input: &Tensor3,
    upstream: &Tensor3,
) -> Result<(Vec<f64>, Tensor3)> {
    let (out, cache) = weights.forward_cached(input)?;
    if !out.same_shape(upstream) {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient {}x{}x{} vs output {}x{}x{}",
            upstream.c, upstream.h, upstream.w, out.c, out.h, out.w
        )));
    }
    Ok(weights.backward(&cache, upstream))
}
