//! Trainable head over the cost volume.
//!
//! Per pixel, a small MLP over the correlation vector gives a visibility
//! logit `z` (`m = sigmoid(z)`) and a reliability logit `r`
//! (`s = sigmoid(r)`), and a windowed soft-argmax gives a flow vector `u`.
//! The corner displacements come from the `m * s`-weighted least squares
//! fit of `u` onto bilinear corner bases, followed by a learned per-output
//! gain and offset. Only `m` is supervised as visibility; `s` lets the fit
//! discount visible pixels whose flow is ambiguous.

use nalgebra::{Matrix4, Vector4};

use super::{IncrementEstimate, VisibilityMask};
use crate::correlation::{windowed_softmax_into, CostVolume};
use crate::error::{Error, Result};
use crate::features::layers::leaky;
use crate::features::{NamedTensor, ParamSet};
use crate::geometry::FourPointDisplacement;

const SLOPE: f64 = 0.125;
const RIDGE: f64 = 1e-6;
/// Stand-in for `-inf` correlations in the MLP input.
const OUT_OF_BOUNDS: f64 = -1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedHead {
    pub d_max: usize,
    pub hidden: usize,
    pub temperature: f64,
    pub params: ParamSet,
}

impl LearnedHead {
    /// All parameters zero: zero displacement, visibility and reliability
    /// 0.5 everywhere.
    pub fn zeros(d_max: usize, hidden: usize, temperature: f64) -> Self {
        let k = (2 * d_max + 1).pow(2);
        let mut params = ParamSet::new();
        params.push("mlp1.w", &[hidden, k], vec![0.0; hidden * k]);
        params.push("mlp1.b", &[hidden], vec![0.0; hidden]);
        params.push("mlp2.w", &[2, hidden], vec![0.0; 2 * hidden]);
        params.push("mlp2.b", &[2], vec![0.0; 2]);
        params.push("gain", &[8], vec![0.0; 8]);
        params.push("bias", &[8], vec![0.0; 8]);
        LearnedHead {
            d_max,
            hidden,
            temperature,
            params,
        }
    }

    /// Training start point: unit gain and a small random MLP leaning
    /// towards "visible" and "reliable".
    pub fn init(d_max: usize, hidden: usize, temperature: f64, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut h = Self::zeros(d_max, hidden, temperature);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let k = (2 * d_max + 1).pow(2) as f64;
        let b1 = (3.0 / k).sqrt();
        for v in h.params.get_mut("mlp1.w") {
            *v = rng.gen_range(-b1..b1);
        }
        let b2 = (3.0 / hidden as f64).sqrt();
        for v in h.params.get_mut("mlp2.w") {
            *v = rng.gen_range(-b2..b2);
        }
        h.params.get_mut("mlp2.b").copy_from_slice(&[1.0, 2.0]);
        h.params.get_mut("gain").fill(1.0);
        h
    }

    pub fn channels(&self) -> usize {
        (2 * self.d_max + 1).pow(2)
    }

    pub fn to_named(&self, prefix: &str) -> Vec<NamedTensor> {
        let mut t = vec![NamedTensor {
            name: format!("{prefix}topology"),
            dims: vec![3],
            data: vec![self.d_max as f32, self.hidden as f32, self.temperature as f32],
        }];
        t.extend(self.params.to_named(prefix));
        t
    }

    pub fn from_named(prefix: &str, tensors: &[NamedTensor]) -> Result<Self> {
        let topo = NamedTensor::find(tensors, &format!("{prefix}topology"))
            .filter(|t| t.dims == [3])
            .ok_or_else(|| Error::WeightTopologyMismatch(format!("missing {prefix}topology")))?;
        let (d, hdn) = (topo.data[0], topo.data[1]);
        if d < 1.0 || hdn < 1.0 || d.fract() != 0.0 || hdn.fract() != 0.0 || topo.data[2] <= 0.0 {
            return Err(Error::WeightTopologyMismatch("bad head topology".into()));
        }
        let mut h = Self::zeros(d as usize, hdn as usize, topo.data[2] as f64);
        h.params.load_named(prefix, tensors)?;
        Ok(h)
    }

    /// Forward pass keeping what [`LearnedHead::backward`] needs.
    pub fn forward(&self, cv: &CostVolume) -> Result<(IncrementEstimate, HeadCache)> {
        if cv.d_max != self.d_max {
            return Err(Error::WeightTopologyMismatch(format!(
                "head expects d_max {}, cost volume has {}",
                self.d_max, cv.d_max
            )));
        }
        let (w, h) = (cv.width, cv.height);
        let n = w * h;
        let k = self.channels();
        let hd = self.hidden;
        let w1 = self.params.get("mlp1.w");
        let b1 = self.params.get("mlp1.b");
        let w2 = self.params.get("mlp2.w");
        let b2 = self.params.get("mlp2.b");

        let mut pre = vec![0.0; n * hd];
        let mut z = vec![0.0; n];
        let mut m = vec![0.0; n];
        let mut s = vec![0.0; n];
        let mut omega = vec![0.0; n];
        let mut p = vec![0.0; n * k];
        let mut u = vec![[0.0; 2]; n];
        let mut input = vec![0.0; k];
        for i in 0..n {
            let c = &cv.values[i * k..(i + 1) * k];
            for (d, &v) in input.iter_mut().zip(c) {
                *d = if v.is_finite() { v } else { OUT_OF_BOUNDS };
            }
            let hp = &mut pre[i * hd..(i + 1) * hd];
            let (mut zi, mut ri) = (b2[0], b2[1]);
            for j in 0..hd {
                let row = &w1[j * k..(j + 1) * k];
                hp[j] = b1[j] + row.iter().zip(&input).map(|(a, b)| a * b).sum::<f64>();
                let a = leaky(hp[j], SLOPE);
                zi += w2[j] * a;
                ri += w2[hd + j] * a;
            }
            z[i] = zi;
            m[i] = sigmoid(zi);
            s[i] = sigmoid(ri);
            omega[i] = m[i] * s[i];
            let pi = &mut p[i * k..(i + 1) * k];
            windowed_softmax_into(cv, c, self.temperature, pi);
            let mut ui = [0.0; 2];
            for (j, &pj) in pi.iter().enumerate() {
                if pj != 0.0 {
                    let (ox, oy) = cv.offset(j);
                    ui[0] += pj * ox as f64;
                    ui[1] += pj * oy as f64;
                }
            }
            u[i] = ui;
        }

        let mut mat = Matrix4::<f64>::identity() * RIDGE;
        let mut rhs = [Vector4::<f64>::zeros(); 2];
        for i in 0..n {
            let b = basis(i % w, i / w, w, h);
            mat += b * b.transpose() * omega[i];
            for a in 0..2 {
                rhs[a] += b * (omega[i] * u[i][a]);
            }
        }
        let minv = mat
            .try_inverse()
            .ok_or_else(|| Error::Singular(mat.determinant()))?;
        let e = [minv * rhs[0], minv * rhs[1]];
        let gain = self.params.get("gain");
        let bias = self.params.get("bias");
        let mut d = [[0.0; 2]; 4];
        for (c, dc) in d.iter_mut().enumerate() {
            for a in 0..2 {
                dc[a] = gain[2 * c + a] * e[a][c] + bias[2 * c + a];
            }
        }
        let (mut ss, mut sw) = (0.0, 0.0);
        for i in 0..n {
            let b = basis(i % w, i / w, w, h);
            for a in 0..2 {
                ss += omega[i] * (u[i][a] - b.dot(&e[a])).powi(2);
            }
            sw += omega[i];
        }
        let est = IncrementEstimate {
            disp: FourPointDisplacement { d },
            vis: VisibilityMask {
                width: w,
                height: h,
                values: m.iter().map(|&v| v as f32).collect(),
            },
            inlier_rms: if sw > 0.0 { (ss / sw).sqrt() } else { 0.0 },
        };
        Ok((
            est,
            HeadCache {
                pre,
                z,
                m,
                s,
                p,
                u,
                minv,
                e,
            },
        ))
    }

    /// Reverse pass given `dL/dd` for the eight outputs (corner-major,
    /// x then y) and optionally `dL/dz` for the per-pixel logits.
    pub fn backward(
        &self,
        cv: &CostVolume,
        cache: &HeadCache,
        d_disp: &[f64; 8],
        d_logits: Option<&[f64]>,
    ) -> HeadGrads {
        let (w, h) = (cv.width, cv.height);
        let n = w * h;
        let k = self.channels();
        let hd = self.hidden;
        let w1 = self.params.get("mlp1.w");
        let w2 = self.params.get("mlp2.w");
        let gain = self.params.get("gain");
        let mut gp = vec![0.0; self.params.len()];
        let mut d_cv = vec![0.0; cv.values.len()];

        let mut de = [Vector4::<f64>::zeros(); 2];
        {
            let rg = self.params.range("gain");
            let rb = self.params.range("bias");
            for c in 0..4 {
                for a in 0..2 {
                    let j = 2 * c + a;
                    gp[rg.start + j] = d_disp[j] * cache.e[a][c];
                    gp[rb.start + j] = d_disp[j];
                    de[a][c] = gain[j] * d_disp[j];
                }
            }
        }
        let lambda = [cache.minv * de[0], cache.minv * de[1]];

        let r_w1 = self.params.range("mlp1.w");
        let r_b1 = self.params.range("mlp1.b");
        let r_w2 = self.params.range("mlp2.w");
        let r_b2 = self.params.range("mlp2.b");
        let tau = self.temperature;
        let mut input = vec![0.0; k];
        for i in 0..n {
            let b = basis(i % w, i / w, w, h);
            let (mi, si) = (cache.m[i], cache.s[i]);
            let mut du = [0.0; 2];
            let mut domega = 0.0;
            for a in 0..2 {
                let bl = b.dot(&lambda[a]);
                du[a] = mi * si * bl;
                domega += bl * (cache.u[i][a] - b.dot(&cache.e[a]));
            }
            let c = &cv.values[i * k..(i + 1) * k];
            let dc = &mut d_cv[i * k..(i + 1) * k];

            // Soft-argmax path.
            if du[0] != 0.0 || du[1] != 0.0 {
                let pi = &cache.p[i * k..(i + 1) * k];
                for j in 0..k {
                    if pi[j] != 0.0 {
                        let (ox, oy) = cv.offset(j);
                        let proj = (ox as f64 - cache.u[i][0]) * du[0]
                            + (oy as f64 - cache.u[i][1]) * du[1];
                        dc[j] += pi[j] * proj / tau;
                    }
                }
            }

            // Visibility and reliability MLP path.
            let mut dz = domega * si * mi * (1.0 - mi);
            if let Some(g) = d_logits {
                dz += g[i];
            }
            let dr = domega * mi * si * (1.0 - si);
            if dz == 0.0 && dr == 0.0 {
                continue;
            }
            for (d, &v) in input.iter_mut().zip(c) {
                *d = if v.is_finite() { v } else { OUT_OF_BOUNDS };
            }
            gp[r_b2.start] += dz;
            gp[r_b2.start + 1] += dr;
            let hp = &cache.pre[i * hd..(i + 1) * hd];
            for j in 0..hd {
                let a = leaky(hp[j], SLOPE);
                gp[r_w2.start + j] += dz * a;
                gp[r_w2.start + hd + j] += dr * a;
                let dh = (dz * w2[j] + dr * w2[hd + j]) * if hp[j] > 0.0 { 1.0 } else { SLOPE };
                if dh == 0.0 {
                    continue;
                }
                gp[r_b1.start + j] += dh;
                let row = &w1[j * k..(j + 1) * k];
                let grow = &mut gp[r_w1.start + j * k..r_w1.start + (j + 1) * k];
                for q in 0..k {
                    grow[q] += dh * input[q];
                    if c[q].is_finite() {
                        dc[q] += dh * row[q];
                    }
                }
            }
        }
        HeadGrads {
            params: gp,
            cost_volume: d_cv,
        }
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Bilinear weights of the TL, TR, BR, BL corners at pixel `(x, y)`.
#[inline]
fn basis(x: usize, y: usize, w: usize, h: usize) -> Vector4<f64> {
    let tx = x as f64 / (w as f64 - 1.0);
    let ty = y as f64 / (h as f64 - 1.0);
    Vector4::new((1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), tx * ty, (1.0 - tx) * ty)
}

/// Intermediates of [`LearnedHead::forward`].
#[derive(Debug, Clone)]
pub struct HeadCache {
    pre: Vec<f64>,
    /// Visibility logits.
    pub z: Vec<f64>,
    m: Vec<f64>,
    /// Fit reliabilities.
    s: Vec<f64>,
    p: Vec<f64>,
    u: Vec<[f64; 2]>,
    minv: Matrix4<f64>,
    e: [Vector4<f64>; 2],
}

/// Gradients w.r.t. head parameters and the cost volume.
#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub params: Vec<f64>,
    pub cost_volume: Vec<f64>,
}

/// Learned-head increment for one level.
pub fn estimate_increment_learned(cv: &CostVolume, head: &LearnedHead) -> Result<IncrementEstimate> {
    Ok(head.forward(cv)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::build_cost_volume;
    use crate::features::FeatureMap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cv(seed: u64, size: usize, d_max: usize) -> CostVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = |rng: &mut ChaCha8Rng| {
            let data: Vec<f64> = (0..size * size * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            FeatureMap::new(size, size, 4, data, false).unwrap()
        };
        let a = f(&mut rng);
        let b = f(&mut rng);
        build_cost_volume(&a, &b, d_max).unwrap()
    }

    #[test]
    fn zero_head_outputs() {
        let cv = random_cv(1, 12, 4);
        let head = LearnedHead::zeros(4, 8, 0.1);
        let est = estimate_increment_learned(&cv, &head).unwrap();
        assert_eq!(est.disp, FourPointDisplacement::zero());
        assert!(est.vis.values.iter().all(|&v| v == 0.5));
        assert_eq!(est.vis.values.len(), 144);
        assert!(matches!(
            estimate_increment_learned(&random_cv(1, 12, 3), &head),
            Err(Error::WeightTopologyMismatch(_))
        ));
    }

    #[test]
    fn unit_gain_recovers_uniform_flow() {
        // Every pixel peaks at (1, -2) with a symmetric falloff.
        let (size, d_max) = (20usize, 4usize);
        let k = (2 * d_max + 1).pow(2);
        let mut cv = CostVolume {
            width: size,
            height: size,
            d_max,
            values: vec![0.0; size * size * k],
        };
        for i in 0..size * size {
            for j in 0..k {
                let (ox, oy) = cv.offset(j);
                let r2 = ((ox - 1).pow(2) + (oy + 2).pow(2)) as f64;
                cv.values[i * k + j] = 1.0 - 0.05 * r2;
            }
        }
        let mut head = LearnedHead::zeros(d_max, 4, 0.05);
        head.params.get_mut("gain").fill(1.0);
        let est = head.forward(&cv).unwrap().0;
        for c in est.disp.d {
            assert!((c[0] - 1.0).abs() < 1e-6 && (c[1] + 2.0).abs() < 1e-6, "{c:?}");
        }
        assert!(est.inlier_rms < 1e-6);
        head.params.get_mut("bias")[3] = 0.5;
        let est = head.forward(&cv).unwrap().0;
        assert!((est.disp.d[1][1] + 1.5).abs() < 1e-6);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..5 {
            let d_max = 2;
            let cv = random_cv(10 + seed, 7, d_max);
            let mut head = LearnedHead::init(d_max, 3, 0.3, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
            for v in head.params.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
            let dd: [f64; 8] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let dz: Vec<f64> = (0..49).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let loss = |head: &LearnedHead, cv: &CostVolume| -> f64 {
                let (est, cache) = head.forward(cv).unwrap();
                let a = est.disp.to_array();
                (0..8).map(|j| a[j] * dd[j]).sum::<f64>()
                    + cache.z.iter().zip(&dz).map(|(a, b)| a * b).sum::<f64>()
            };
            let (_, cache) = head.forward(&cv).unwrap();
            let g = head.backward(&cv, &cache, &dd, Some(&dz));
            // Skip instantiations with hidden units next to the kink.
            if cache.pre.iter().any(|v| v.abs() < 1e-3) {
                continue;
            }
            let h = 1e-5;
            for i in 0..head.params.len() {
                let mut hp = head.clone();
                hp.params.data_mut()[i] += h;
                let mut hm = head.clone();
                hm.params.data_mut()[i] -= h;
                let num = (loss(&hp, &cv) - loss(&hm, &cv)) / (2.0 * h);
                let err = (num - g.params[i]).abs() / num.abs().max(g.params[i].abs()).max(1e-4);
                assert!(err < 1e-5, "param {i}: {} vs {num}", g.params[i]);
            }
            for i in 0..cv.values.len() {
                if !cv.values[i].is_finite() {
                    continue;
                }
                let mut cp = cv.clone();
                cp.values[i] += h;
                let mut cm = cv.clone();
                cm.values[i] -= h;
                let num = (loss(&head, &cp) - loss(&head, &cm)) / (2.0 * h);
                let err = (num - g.cost_volume[i]).abs()
                    / num.abs().max(g.cost_volume[i].abs()).max(1e-4);
                assert!(err < 1e-5, "cv {i}: {} vs {num}", g.cost_volume[i]);
            }
        }
    }

    #[test]
    fn named_roundtrip() {
        let head = LearnedHead::init(4, 8, 0.1, 3);
        let back = LearnedHead::from_named("head.", &head.to_named("head.")).unwrap();
        assert_eq!(back.d_max, 4);
        assert_eq!(back.hidden, 8);
        assert!((back.temperature - 0.1).abs() < 1e-7);
        assert!(LearnedHead::from_named("x.", &head.to_named("head.")).is_err());
    }
}
