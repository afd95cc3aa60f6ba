use super::{Block, Construction, ConstructionKind, ConstructionSpec, InputFormat};
use crate::error::{Error, Result};
use crate::models::{init_params, Arch, BaseConvLayerParams, InitScheme, ModelSpec, PositionalEncoding, ReadRows};
use crate::numerics::{SeededRng, Tensor};

/// Dispatch on the construction kind.
pub fn build(spec: &ConstructionSpec) -> Result<Construction> {
    let c = match &spec.construction {
        ConstructionKind::Read { n, d, i, j, a, b } => build_read(*i, *j, a.unwrap_or(0), b.unwrap_or(*d), *n, *d)?,
        ConstructionKind::Linear { n, h } => {
            let rows = h.len();
            let cols = h.first().map_or(0, Vec::len);
            if rows == 0 || cols == 0 || h.iter().any(|r| r.len() != cols) {
                return Err(Error::Config(
                    "linear map must be a non-empty rectangular matrix".into(),
                ));
            }
            build_linear(&Tensor::new(&[rows, cols], h.concat())?, *n)?
        }
        ConstructionKind::Multiply { n, d, a, b, d_out } => build_multiply(*a, *b, *d_out, *n, *d)?,
        ConstructionKind::GdNoncausal {
            n,
            d,
            eta,
            k,
            normalized,
        } => build_gd_noncausal(*eta, *k, *n, *d, *normalized)?,
        ConstructionKind::GdCausal {
            n,
            d,
            eta,
            k,
            normalized,
        } => build_gd_causal(*eta, *k, *n, *d, *normalized)?,
        ConstructionKind::GradientModel { n, d, normalized } => build_gradient_model(*n, *d, *normalized)?,
    };
    match spec.emb {
        Some(e) if e < c.spec.emb => Err(Error::Capacity {
            required: c.spec.emb,
            available: e,
        }),
        Some(e) if e > c.spec.emb => widen(c, e),
        _ => Ok(c),
    }
}

/// Zero-pad every weight to a wider embedding; the extra channels stay zero.
fn widen(mut c: Construction, e: usize) -> Result<Construction> {
    let old = c.spec.emb;
    let pos = c.spec.pos_width();
    let mut spec = c.spec.clone();
    spec.emb = e;
    // One-hot positions sit at the right edge, so they move with the width.
    let shift = |ch: usize| if ch >= old - pos { ch + e - old } else { ch };
    let mut fresh = init_params::<f64>(&spec, &mut SeededRng::new(0, 0), InitScheme::Zeros)?;
    for (name, t) in c.params.iter() {
        let dst = fresh.get_mut(name)?;
        let row_channels = name == "readout.w" || [".w_gate", ".w_in", ".w_out"].iter().any(|s| name.ends_with(s));
        let col_channels = name != "readout.w";
        for r in 0..t.rows() {
            for col in 0..t.cols() {
                let rr = if row_channels { shift(r) } else { r };
                let cc = if col_channels { shift(col) } else { col };
                dst.set2(rr, cc, t.at2(r, col));
            }
        }
    }
    for b in &mut c.layout {
        b.start = shift(b.start);
    }
    c.spec = spec;
    c.params = fresh;
    Ok(c)
}

/// Mutable view of one layer's weights with offset-aware filter access.
struct Layer {
    p: BaseConvLayerParams<f64>,
    n: usize,
    causal: bool,
}

impl Layer {
    fn new(n: usize, e: usize, causal: bool) -> Self {
        Self {
            p: BaseConvLayerParams::zeros(n, e, causal),
            n,
            causal,
        }
    }

    /// Filter tap coupling each position to the one `offset` steps earlier.
    fn tap(&mut self, ch: usize, offset: isize, v: f64) {
        let row = if self.causal {
            assert!(offset >= 0, "causal filters have no look-ahead");
            offset as usize
        } else {
            (self.n as isize - 1 + offset) as usize
        };
        self.p.h.set2(row, ch, v);
    }

    fn gate_const(&mut self, ch: usize, v: f64) {
        for r in 0..self.n {
            self.p.b_gate.set2(r, ch, v);
        }
    }

    fn conv_const(&mut self, ch: usize, v: f64) {
        for r in 0..self.n {
            self.p.b_conv.set2(r, ch, v);
        }
    }
}

struct Builder {
    spec: ModelSpec,
    layers: Vec<Layer>,
    layout: Vec<Block>,
}

impl Builder {
    fn new(spec: ModelSpec, layout: Vec<Block>) -> Self {
        Self {
            spec,
            layers: Vec::new(),
            layout,
        }
    }

    fn layer(&mut self) -> &mut Layer {
        self.layers
            .push(Layer::new(self.spec.seq_len, self.spec.emb, self.spec.causal));
        self.layers.last_mut().unwrap()
    }

    /// Readout copies the channels of `block` into the output columns.
    fn finish(
        mut self,
        kind: ConstructionKind,
        out: &str,
        input: InputFormat,
        rows: ReadRows,
        prep_layers: usize,
        layers_per_iterate: usize,
    ) -> Result<Construction> {
        self.spec.layers = self.layers.len();
        self.spec.validate()?;
        let mut params = init_params::<f64>(&self.spec, &mut SeededRng::new(0, 0), InitScheme::Zeros)?;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.p.write_into(&mut params, &format!("l{l}."))?;
        }
        let blk = self
            .layout
            .iter()
            .find(|b| b.name == out)
            .cloned()
            .ok_or_else(|| Error::Contract(format!("no block {out}")))?;
        let mut w = Tensor::zeros(&[self.spec.emb, self.spec.out_dim]);
        for (o, ch) in blk.range().enumerate() {
            w.set2(ch, o, 1.0);
        }
        params.set("readout.w", w)?;
        Ok(Construction {
            kind,
            spec: self.spec,
            params,
            layout: self.layout,
            input,
            rows,
            layers_per_iterate,
            prep_layers,
        })
    }
}

fn blocks(parts: &[(&str, usize)]) -> Vec<Block> {
    let mut start = 0;
    parts
        .iter()
        .map(|&(name, len)| {
            let b = Block {
                name: name.to_string(),
                start,
                len,
            };
            start += len;
            b
        })
        .collect()
}

fn width(layout: &[Block]) -> usize {
    layout.last().map_or(0, |b| b.start + b.len)
}

fn base_spec(layout: &[Block], causal: bool, seq_len: usize, in_dim: usize, out_dim: usize) -> ModelSpec {
    let mut spec = ModelSpec::new(Arch::Baseconv, 0, width(layout), seq_len, in_dim, out_dim);
    spec.causal = causal;
    spec
}

fn check_step(eta: f64) -> Result<()> {
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::Config(format!(
            "step size must be finite and non-negative, got {eta}"
        )));
    }
    Ok(())
}

/// One layer copying columns `[a, b)` of row `i` into row `j`. The gate is the
/// one-hot position channel of row `j`; the filter forms `u[k+i-j] - u[k]`, so
/// the residual turns row `j` into row `i`. Two-sided when `i > j`.
pub fn build_read(i: usize, j: usize, a: usize, b: usize, n: usize, d: usize) -> Result<Construction> {
    if i >= n || j >= n || i == j || a >= b || b > d {
        return Err(Error::Config(format!(
            "read needs distinct i, j < {n} and 0 <= a < b <= {d}; got i={i} j={j} a={a} b={b}"
        )));
    }
    let layout = blocks(&[("data", d), ("pos", n)]);
    let mut spec = base_spec(&layout, i < j, n, d, d);
    spec.positional_encoding = PositionalEncoding::OneHot;
    let mut bld = Builder::new(spec, layout);
    let l = bld.layer();
    let shift = j as isize - i as isize;
    for c in a..b {
        l.p.w_gate.set2(d + j, c, 1.0);
        l.p.w_in.set2(c, c, 1.0);
        l.tap(c, shift, 1.0);
        l.tap(c, 0, -1.0);
        l.p.w_out.set2(c, c, 1.0);
    }
    let kind = ConstructionKind::Read {
        n,
        d,
        i,
        j,
        a: Some(a),
        b: Some(b),
    };
    bld.finish(kind, "data", InputFormat::Data, ReadRows::All, 0, 0)
}

/// One layer computing `u·H`: gate is the identity on the data, the
/// convolution path is the constant 1, and the output projection is `H`.
pub fn build_linear(h: &Tensor<f64>, n: usize) -> Result<Construction> {
    if h.rank() != 2 || !h.is_finite() || n == 0 {
        return Err(Error::Config("linear map must be a finite matrix".into()));
    }
    let (d, d_out) = (h.rows(), h.cols());
    let layout = blocks(&[("data", d), ("out", d_out)]);
    let mut bld = Builder::new(base_spec(&layout, true, n, d, d_out), layout);
    let l = bld.layer();
    for c in 0..d {
        l.p.w_gate.set2(c, c, 1.0);
        l.conv_const(c, 1.0);
        for o in 0..d_out {
            l.p.w_out.set2(c, d + o, h.at2(c, o));
        }
    }
    let kind = ConstructionKind::Linear {
        n,
        h: (0..d).map(|r| h.row(r).data().to_vec()).collect(),
    };
    bld.finish(kind, "out", InputFormat::Data, ReadRows::All, 0, 0)
}

/// One layer computing `u[:, a:a+d_out] ⊙ u[:, b:b+d_out]`.
pub fn build_multiply(a: usize, b: usize, d_out: usize, n: usize, d: usize) -> Result<Construction> {
    if d_out == 0 || a + d_out > d || b + d_out > d || n == 0 {
        return Err(Error::Config(format!(
            "multiply ranges a={a}, b={b}, d_out={d_out} exceed d={d}"
        )));
    }
    let layout = blocks(&[("data", d), ("out", d_out)]);
    let mut bld = Builder::new(base_spec(&layout, true, n, d, d_out), layout);
    let l = bld.layer();
    for o in 0..d_out {
        l.p.w_in.set2(a + o, d + o, 1.0);
        l.p.w_gate.set2(b + o, d + o, 1.0);
        l.tap(d + o, 0, 1.0);
        l.p.w_out.set2(d + o, d + o, 1.0);
    }
    bld.finish(
        ConstructionKind::Multiply { n, d, a, b, d_out },
        "out",
        InputFormat::Data,
        ReadRows::All,
        0,
        0,
    )
}

/// `k` gradient-descent iterates on the broadcast input `aᵢ | bᵢ | x0`,
/// three two-sided layers per iterate:
/// residual `rᵢ = x·aᵢ − bᵢ`, then `gᵢ = rᵢ·aᵢ`, then `x −= η Σᵢ gᵢ` while
/// clearing both scratch blocks.
pub fn build_gd_noncausal(eta: f64, k: usize, n: usize, d: usize, normalized: bool) -> Result<Construction> {
    check_step(eta)?;
    if k == 0 || n == 0 || d == 0 {
        return Err(Error::Config("need k, n, d >= 1".into()));
    }
    let step = if normalized { eta / n as f64 } else { eta };
    let layout = blocks(&[("a", d), ("b", 1), ("x", d), ("resid", d), ("grad", d)]);
    let (xa, xb, xx, xr, xg) = (0, d, d + 1, 2 * d + 1, 3 * d + 1);
    let mut bld = Builder::new(base_spec(&layout, false, n, 2 * d + 1, d), layout);
    for _ in 0..k {
        let l = bld.layer();
        for c in 0..d {
            l.p.w_gate.set2(xx + c, xr + c, 1.0);
            l.p.w_in.set2(xa + c, xr + c, 1.0);
            l.tap(xr + c, 0, 1.0);
            for o in 0..d {
                l.p.w_out.set2(xr + c, xr + o, 1.0);
            }
        }
        l.gate_const(xb, 1.0);
        l.p.w_in.set2(xb, xb, 1.0);
        l.tap(xb, 0, 1.0);
        for o in 0..d {
            l.p.w_out.set2(xb, xr + o, -1.0);
        }

        let l = bld.layer();
        for c in 0..d {
            l.p.w_gate.set2(xa + c, xg + c, 1.0);
            l.p.w_in.set2(xr + c, xg + c, 1.0);
            l.tap(xg + c, 0, 1.0);
            l.p.w_out.set2(xg + c, xg + c, 1.0);
        }

        let l = bld.layer();
        for c in 0..d {
            l.gate_const(xx + c, 1.0);
            l.p.w_in.set2(xg + c, xx + c, 1.0);
            for s in -(n as isize - 1)..n as isize {
                l.tap(xx + c, s, 1.0);
            }
            l.p.w_out.set2(xx + c, xx + c, -step);
            for blk in [xr, xg] {
                l.gate_const(blk + c, 1.0);
                l.p.w_in.set2(blk + c, blk + c, 1.0);
                l.tap(blk + c, 0, 1.0);
                l.p.w_out.set2(blk + c, blk + c, -1.0);
            }
        }
    }
    let kind = ConstructionKind::GdNoncausal {
        n,
        d,
        eta,
        k,
        normalized,
    };
    bld.finish(kind, "x", InputFormat::Broadcast, ReadRows::Last, 0, 3)
}

/// Layout and the two causal preparation layers shared by the causal
/// gradient-descent and explicit-gradient models. After them every
/// position `t` holds `Σ_{i<t} bᵢaᵢ` and `flatten(Σ_{i<t} aᵢaᵢᵀ)`.
fn causal_prep(n: usize, d: usize, extra: &[(&str, usize)]) -> Builder {
    let mut parts = vec![
        ("x", d),
        ("b", 1),
        ("ba", d),
        ("aa", d * d),
        ("sum_ba", d),
        ("gram", d * d),
    ];
    parts.extend_from_slice(extra);
    let layout = blocks(&parts);
    let (xb, pb, pg, sb, sg) = (d, d + 1, 2 * d + 1, 2 * d + 1 + d * d, 3 * d + 1 + d * d);
    let l_seq = n + 1;
    let mut bld = Builder::new(base_spec(&layout, true, l_seq, d + 1, d), layout);

    let l = bld.layer();
    for p in 0..d {
        l.p.w_gate.set2(xb, pb + p, 1.0);
        l.p.w_in.set2(p, pb + p, 1.0);
        l.tap(pb + p, 0, 1.0);
        l.p.w_out.set2(pb + p, pb + p, 1.0);
        for q in 0..d {
            let ch = pg + p * d + q;
            l.p.w_gate.set2(p, ch, 1.0);
            l.p.w_in.set2(q, ch, 1.0);
            l.tap(ch, 0, 1.0);
            l.p.w_out.set2(ch, ch, 1.0);
        }
    }

    let l = bld.layer();
    for (src, dst, len) in [(pb, sb, d), (pg, sg, d * d)] {
        for c in 0..len {
            l.gate_const(dst + c, 1.0);
            l.p.w_in.set2(src + c, dst + c, 1.0);
            for s in 1..l_seq {
                l.tap(dst + c, s as isize, 1.0);
            }
            l.p.w_out.set2(dst + c, dst + c, 1.0);
        }
    }
    bld
}

/// Adds `scale · (gram·x − sum_ba)` into the channels starting at `dst`.
fn gradient_layer(bld: &mut Builder, d: usize, dst: usize, scale: f64) {
    let (sb, sg) = (2 * d + 1 + d * d, 3 * d + 1 + d * d);
    let l = bld.layer();
    for p in 0..d {
        l.gate_const(sb + p, 1.0);
        l.p.w_in.set2(sb + p, sb + p, 1.0);
        l.tap(sb + p, 0, 1.0);
        l.p.w_out.set2(sb + p, dst + p, -scale);
        for q in 0..d {
            let ch = sg + p * d + q;
            l.p.w_gate.set2(q, ch, 1.0);
            l.p.w_in.set2(ch, ch, 1.0);
            l.tap(ch, 0, 1.0);
            l.p.w_out.set2(ch, dst + p, scale);
        }
    }
}

/// Causal gradient descent on the standard prompt: two preparation layers,
/// then one layer per iterate updating `x` at the final position.
pub fn build_gd_causal(eta: f64, k: usize, n: usize, d: usize, normalized: bool) -> Result<Construction> {
    check_step(eta)?;
    if k == 0 || n == 0 || d == 0 {
        return Err(Error::Config("need k, n, d >= 1".into()));
    }
    let step = if normalized { eta / n as f64 } else { eta };
    let mut bld = causal_prep(n, d, &[]);
    for _ in 0..k {
        gradient_layer(&mut bld, d, 0, -step);
    }
    let kind = ConstructionKind::GdCausal {
        n,
        d,
        eta,
        k,
        normalized,
    };
    bld.finish(kind, "x", InputFormat::Prompt, ReadRows::Last, 2, 1)
}

/// Three causal layers reading out `Aᵀ(A·x0 − b)` (divided by `N` when
/// `normalized`) from the standard prompt.
pub fn build_gradient_model(n: usize, d: usize, normalized: bool) -> Result<Construction> {
    if n == 0 || d == 0 {
        return Err(Error::Config("need n, d >= 1".into()));
    }
    let scale = if normalized { 1.0 / n as f64 } else { 1.0 };
    let mut bld = causal_prep(n, d, &[("out", d)]);
    let out = 3 * d + 1 + 2 * d * d;
    gradient_layer(&mut bld, d, out, scale);
    bld.finish(
        ConstructionKind::GradientModel { n, d, normalized },
        "out",
        InputFormat::Prompt,
        ReadRows::Last,
        0,
        0,
    )
}
