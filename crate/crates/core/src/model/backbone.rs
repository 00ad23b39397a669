//! Four-stream multi-resolution backbone.
//!
//! A strided stem reaches stride 4, strided convolutions spawn the stride
//! 8/16/32 streams, then each fusion stage runs a 3x3 conv per stream and
//! exchanges information between every pair of streams (1x1 conv plus
//! bilinear upsampling or average pooling). Each stream ends the stage with
//! channel dropout, which makes two training-mode passes differ.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{BackboneConfig, FeaturePyramid};
use crate::nn::{
    apply_channel_scale, avg_pool, avg_pool_backward, bilinear_resize, bilinear_resize_backward, channel_dropout_mask,
    relu, relu_backward, Conv2d, ConvCache, Param, Tensor,
};

#[derive(Clone, Debug)]
struct FusionStage {
    branch: Vec<Conv2d>,
    /// `cross[i][j]` maps stream `j` into stream `i` (`None` on the diagonal).
    cross: Vec<Vec<Option<Conv2d>>>,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    stem1: Conv2d,
    stem2: Conv2d,
    down: Vec<Conv2d>,
    stages: Vec<FusionStage>,
}

/// Forward state retained for [`Backbone::backward`].
#[derive(Clone, Debug)]
pub struct BackboneCache {
    stem1: (ConvCache, Tensor),
    stem2: (ConvCache, Tensor),
    down: Vec<(ConvCache, Tensor)>,
    stages: Vec<StageCache>,
}

#[derive(Clone, Debug)]
struct StageCache {
    branch: Vec<(ConvCache, Tensor)>,
    cross: Vec<Vec<Option<ConvCache>>>,
    fused: Vec<Tensor>,
    dropout: Vec<Option<Vec<f32>>>,
}

impl Backbone {
    pub fn new<R: Rng>(cfg: &BackboneConfig, rng: &mut R) -> Self {
        let c = cfg.channels;
        let stem1 = Conv2d::new(3, cfg.stem_channels, 3, 2, rng);
        let stem2 = Conv2d::new(cfg.stem_channels, c[0], 3, 2, rng);
        let down = (0..3).map(|i| Conv2d::new(c[i], c[i + 1], 3, 2, rng)).collect();
        let stages = (0..cfg.fusion_stages)
            .map(|_| FusionStage {
                branch: (0..4).map(|i| Conv2d::new(c[i], c[i], 3, 1, rng)).collect(),
                cross: (0..4)
                    .map(|i| {
                        (0..4)
                            .map(|j| {
                                (i != j).then(|| {
                                    let mut conv = Conv2d::new(c[j], c[i], 1, 1, rng);
                                    // Keep the summed cross-stream input at unit scale.
                                    conv.weight.value.iter_mut().for_each(|w| *w /= 3f32.sqrt());
                                    conv
                                })
                            })
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        Backbone {
            cfg: cfg.clone(),
            stem1,
            stem2,
            down,
            stages,
        }
    }

    /// `dropout_rng = None` disables dropout (eval mode).
    pub fn forward(&self, image: &Tensor, mut dropout_rng: Option<&mut ChaCha8Rng>) -> (FeaturePyramid, BackboneCache) {
        let x: Tensor = Tensor::from_vec(image.c, image.h, image.w, image.data.iter().map(|v| 2.0 * v - 1.0).collect());
        let (s1, c1) = self.stem1.forward(&x);
        let s1 = relu(s1);
        let (s2, c2) = self.stem2.forward(&s1);
        let s2 = relu(s2);
        let mut streams = vec![s2.clone()];
        let mut down_cache = Vec::with_capacity(3);
        for conv in &self.down {
            let (o, c) = conv.forward(streams.last().expect("nonempty"));
            let o = relu(o);
            down_cache.push((c, o.clone()));
            streams.push(o);
        }

        let rate = self.cfg.dropout_rate as f32;
        let mut stage_caches = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let mut branch_cache = Vec::with_capacity(4);
            let mut ys = Vec::with_capacity(4);
            for (i, conv) in stage.branch.iter().enumerate() {
                let (y, c) = conv.forward(&streams[i]);
                let y = relu(y);
                branch_cache.push((c, y.clone()));
                ys.push(y);
            }
            let mut cross_cache: Vec<Vec<Option<ConvCache>>> = vec![vec![None, None, None, None]; 4];
            let mut next = Vec::with_capacity(4);
            let mut fused_all = Vec::with_capacity(4);
            let mut masks = Vec::with_capacity(4);
            for i in 0..4 {
                let mut fused = streams[i].clone();
                fused.add_assign(&ys[i]);
                for j in 0..4 {
                    let Some(conv) = &stage.cross[i][j] else { continue };
                    let contrib = if j > i {
                        let (m, c) = conv.forward(&ys[j]);
                        cross_cache[i][j] = Some(c);
                        bilinear_resize(&m, streams[i].h, streams[i].w)
                    } else {
                        let pooled = avg_pool(&ys[j], 1 << (i - j));
                        let (m, c) = conv.forward(&pooled);
                        cross_cache[i][j] = Some(c);
                        m
                    };
                    fused.add_assign(&contrib);
                }
                let fused = relu(fused);
                let mut out = fused.clone();
                let mask = match dropout_rng.as_deref_mut() {
                    Some(rng) if rate > 0.0 => {
                        let m = channel_dropout_mask(out.c, rate, rng);
                        apply_channel_scale(&mut out, &m);
                        Some(m)
                    }
                    _ => None,
                };
                fused_all.push(fused);
                masks.push(mask);
                next.push(out);
            }
            stage_caches.push(StageCache {
                branch: branch_cache,
                cross: cross_cache,
                fused: fused_all,
                dropout: masks,
            });
            streams = next;
        }

        let levels: [Tensor; 4] = streams.try_into().expect("four streams");
        (
            FeaturePyramid { levels },
            BackboneCache {
                stem1: (c1, s1),
                stem2: (c2, s2),
                down: down_cache,
                stages: stage_caches,
            },
        )
    }

    /// Accumulates parameter gradients given the gradient of each pyramid level.
    pub fn backward(&mut self, cache: &BackboneCache, grads: [Tensor; 4]) {
        let mut g: Vec<Tensor> = grads.into();
        for (stage, sc) in self.stages.iter_mut().zip(&cache.stages).rev() {
            let mut gy: Vec<Tensor> = sc.branch.iter().map(|(_, y)| Tensor::zeros(y.c, y.h, y.w)).collect();
            let mut g_in: Vec<Tensor> = Vec::with_capacity(4);
            for i in 0..4 {
                let mut gf = g[i].clone();
                if let Some(mask) = &sc.dropout[i] {
                    apply_channel_scale(&mut gf, mask);
                }
                relu_backward(&sc.fused[i], &mut gf);
                gy[i].add_assign(&gf);
                for j in 0..4 {
                    let (Some(conv), Some(cc)) = (stage.cross[i][j].as_mut(), sc.cross[i][j].as_ref()) else {
                        continue;
                    };
                    let yj = &sc.branch[j].1;
                    if j > i {
                        let gm = bilinear_resize_backward(&gf, yj.h, yj.w);
                        let gyj = conv.backward(cc, &gm, true).expect("input grad");
                        gy[j].add_assign(&gyj);
                    } else {
                        let gp = conv.backward(cc, &gf, true).expect("input grad");
                        gy[j].add_assign(&avg_pool_backward(&gp, 1 << (i - j), yj.h, yj.w));
                    }
                }
                g_in.push(gf);
            }
            for i in 0..4 {
                let (bc, y) = &sc.branch[i];
                relu_backward(y, &mut gy[i]);
                let gb = stage.branch[i].backward(bc, &gy[i], true).expect("input grad");
                g_in[i].add_assign(&gb);
            }
            g = g_in;
        }

        for k in (0..3).rev() {
            let (dc, out) = &cache.down[k];
            let mut go = g[k + 1].clone();
            relu_backward(out, &mut go);
            let gi = self.down[k].backward(dc, &go, true).expect("input grad");
            g[k].add_assign(&gi);
        }
        let mut gs2 = g.swap_remove(0);
        relu_backward(&cache.stem2.1, &mut gs2);
        let mut gs1 = self.stem2.backward(&cache.stem2.0, &gs2, true).expect("input grad");
        relu_backward(&cache.stem1.1, &mut gs1);
        self.stem1.backward(&cache.stem1.0, &gs1, false);
    }

    /// Convolutions in canonical order with their parameter-name prefixes.
    fn convs(&self) -> Vec<(String, &Conv2d)> {
        let mut out = vec![("stem1".to_string(), &self.stem1), ("stem2".to_string(), &self.stem2)];
        out.extend(self.down.iter().enumerate().map(|(k, c)| (format!("down{k}"), c)));
        for (s, st) in self.stages.iter().enumerate() {
            out.extend(st.branch.iter().enumerate().map(|(i, c)| (format!("stage{s}.branch{i}"), c)));
            for (i, row) in st.cross.iter().enumerate() {
                for (j, c) in row.iter().enumerate() {
                    if let Some(c) = c {
                        out.push((format!("stage{s}.cross{i}_{j}"), c));
                    }
                }
            }
        }
        out
    }

    /// Same order as [`Backbone::convs`].
    fn convs_mut(&mut self) -> Vec<&mut Conv2d> {
        let mut out = vec![&mut self.stem1, &mut self.stem2];
        out.extend(self.down.iter_mut());
        for st in &mut self.stages {
            out.extend(st.branch.iter_mut());
            for row in &mut st.cross {
                out.extend(row.iter_mut().flatten());
            }
        }
        out
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        self.convs()
            .into_iter()
            .flat_map(|(n, c)| [(format!("{n}.weight"), &c.weight), (format!("{n}.bias"), &c.bias)])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.convs_mut()
            .into_iter()
            .flat_map(|c| [&mut c.weight, &mut c.bias])
            .collect()
    }
}
