use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{batch_norm, init_batch_norm, kaiming, BnObservation, Mode};
use crate::descriptors::DescriptorSet;
use crate::diffmath::{Bound, Graph, Matrix, NodeId, ParamStore, LEAKY_SLOPE};
use crate::error::{Error, Result};

/// Grid shape `(h, w, channels)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl GridDims {
    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    pub fn of(set: &DescriptorSet) -> Self {
        Self {
            h: set.height(),
            w: set.width(),
            c: set.dim(),
        }
    }
}

impl std::fmt::Display for GridDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackboneKind {
    /// Inputs are already descriptor grids.
    #[default]
    Identity,
    /// Non-overlapping `patch×patch` cells, each mapped linearly to `out_dim`
    /// features followed by LeakyReLU.
    PatchLinear { patch: usize, out_dim: usize },
    /// Two blocks of 3×3 conv, batch norm, LeakyReLU and 2×2 max-pool.
    TinyConv { hidden: usize, out_dim: usize },
}

impl BackboneKind {
    pub fn name(&self) -> &'static str {
        match self {
            BackboneKind::Identity => "identity",
            BackboneKind::PatchLinear { .. } => "patch-linear",
            BackboneKind::TinyConv { .. } => "tiny-conv",
        }
    }
}

/// Feature extractor bound to one input grid shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    kind: BackboneKind,
    input: GridDims,
}

impl Backbone {
    pub fn new(kind: BackboneKind, input: GridDims) -> Result<Self> {
        if input.h == 0 || input.w == 0 || input.c == 0 {
            return Err(Error::invalid(format!("input grid {input} has an empty axis")));
        }
        match kind {
            BackboneKind::Identity => {}
            BackboneKind::PatchLinear { patch, out_dim } => {
                if patch == 0 || out_dim == 0 {
                    return Err(Error::invalid("patch-linear needs patch ≥ 1 and out_dim ≥ 1"));
                }
                if !input.h.is_multiple_of(patch) || !input.w.is_multiple_of(patch) {
                    return Err(Error::invalid(format!(
                        "patch {patch} does not tile a {}x{} grid",
                        input.h, input.w
                    )));
                }
            }
            BackboneKind::TinyConv { hidden, out_dim } => {
                if hidden == 0 || out_dim == 0 {
                    return Err(Error::invalid("tiny-conv needs nonzero channel counts"));
                }
                if input.h < 4 || input.w < 4 {
                    return Err(Error::invalid(format!(
                        "tiny-conv pools twice and needs at least 4x4 inputs, got {}x{}",
                        input.h, input.w
                    )));
                }
            }
        }
        Ok(Self { kind, input })
    }

    pub fn kind(&self) -> &BackboneKind {
        &self.kind
    }

    pub fn input_dims(&self) -> GridDims {
        self.input
    }

    pub fn output_dims(&self) -> GridDims {
        let i = self.input;
        match self.kind {
            BackboneKind::Identity => i,
            BackboneKind::PatchLinear { patch, out_dim } => GridDims {
                h: i.h / patch,
                w: i.w / patch,
                c: out_dim,
            },
            BackboneKind::TinyConv { out_dim, .. } => GridDims {
                h: i.h / 4,
                w: i.w / 4,
                c: out_dim,
            },
        }
    }

    pub fn init(&self, params: &mut ParamStore, buffers: &mut ParamStore, rng: &mut impl Rng) {
        match self.kind {
            BackboneKind::Identity => {}
            BackboneKind::PatchLinear { patch, out_dim } => {
                let fan_in = patch * patch * self.input.c;
                params.insert("backbone.patch.weight".into(), kaiming(rng, fan_in, out_dim));
                params.insert("backbone.patch.bias".into(), Matrix::zeros((1, out_dim)));
            }
            BackboneKind::TinyConv { hidden, out_dim } => {
                params.insert("backbone.conv1.weight".into(), kaiming(rng, 9 * self.input.c, hidden));
                init_batch_norm(params, buffers, "backbone.bn1", hidden);
                params.insert("backbone.conv2.weight".into(), kaiming(rng, 9 * hidden, out_dim));
                init_batch_norm(params, buffers, "backbone.bn2", out_dim);
            }
        }
    }

    /// Embeds `n_images` stacked raw grids (`n_images·h·w` rows of `c` channels)
    /// into stacked descriptor grids of [`Backbone::output_dims`].
    #[allow(clippy::too_many_arguments)]
    pub fn embed_batch(
        &self,
        g: &mut Graph,
        bound: &Bound,
        buffers: &ParamStore,
        x: NodeId,
        n_images: usize,
        mode: Mode,
        observations: &mut Vec<BnObservation>,
    ) -> Result<NodeId> {
        let i = self.input;
        if g.value(x).dim() != (n_images * i.cells(), i.c) {
            return Err(Error::invalid(format!(
                "backbone expects {n_images} grids of {i}, got a {:?} stack",
                g.value(x).dim()
            )));
        }
        match self.kind {
            BackboneKind::Identity => Ok(x),
            BackboneKind::PatchLinear { patch, .. } => {
                let sources = patch_sources(n_images, i.h, i.w, patch);
                let cols = g.unfold(x, sources);
                let y = g.matmul(cols, bound.get("backbone.patch.weight")?);
                let y = g.add_row(y, bound.get("backbone.patch.bias")?);
                Ok(g.leaky_relu(y, LEAKY_SLOPE))
            }
            BackboneKind::TinyConv { .. } => {
                let mut cur = x;
                let (mut h, mut w) = (i.h, i.w);
                for block in 1..=2 {
                    let cols = g.unfold(cur, conv3x3_sources(n_images, h, w));
                    let y = g.matmul(cols, bound.get(&format!("backbone.conv{block}.weight"))?);
                    let y = batch_norm(g, bound, buffers, &format!("backbone.bn{block}"), y, mode, observations)?;
                    let y = g.leaky_relu(y, LEAKY_SLOPE);
                    cur = g.max_pool_rows(y, &pool2x2_groups(n_images, h, w));
                    h /= 2;
                    w /= 2;
                }
                Ok(cur)
            }
        }
    }

    /// Evaluation-mode embedding of a single grid.
    pub fn embed(&self, params: &ParamStore, buffers: &ParamStore, raw: &DescriptorSet) -> Result<DescriptorSet> {
        if GridDims::of(raw) != self.input {
            return Err(Error::invalid(format!(
                "backbone expects {} input, got {}",
                self.input,
                GridDims::of(raw)
            )));
        }
        let mut g = Graph::new();
        let bound = Bound::all(&mut g, params);
        let x = g.constant(raw.descriptors().clone());
        let y = self.embed_batch(&mut g, &bound, buffers, x, 1, Mode::Eval, &mut Vec::new())?;
        let o = self.output_dims();
        DescriptorSet::new(g.value(y).clone(), o.h, o.w)
    }
}

fn patch_sources(n: usize, h: usize, w: usize, p: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = Vec::with_capacity(n * (h / p) * (w / p));
    for b in 0..n {
        for pr in 0..h / p {
            for pc in 0..w / p {
                let taps = (0..p)
                    .flat_map(|dr| (0..p).map(move |dc| (dr, dc)))
                    .map(|(dr, dc)| Some(b * h * w + (pr * p + dr) * w + pc * p + dc))
                    .collect();
                out.push(taps);
            }
        }
    }
    out
}

fn conv3x3_sources(n: usize, h: usize, w: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = Vec::with_capacity(n * h * w);
    for b in 0..n {
        for r in 0..h {
            for c in 0..w {
                let mut taps = Vec::with_capacity(9);
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        let inside = rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w;
                        taps.push(inside.then(|| b * h * w + rr as usize * w + cc as usize));
                    }
                }
                out.push(taps);
            }
        }
    }
    out
}

fn pool2x2_groups(n: usize, h: usize, w: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(n * (h / 2) * (w / 2));
    for b in 0..n {
        for r in 0..h / 2 {
            for c in 0..w / 2 {
                let base = b * h * w;
                out.push(vec![
                    base + 2 * r * w + 2 * c,
                    base + 2 * r * w + 2 * c + 1,
                    base + (2 * r + 1) * w + 2 * c,
                    base + (2 * r + 1) * w + 2 * c + 1,
                ]);
            }
        }
    }
    out
}
