//! Reverse-mode differentiation over an explicit tape.
//!
//! Every operation is recorded eagerly: recording computes the forward
//! value immediately and stores it, so the tape doubles as the forward
//! pass. `backward` walks the ops in reverse, accumulating adjoints per
//! node and per parameter in a fixed (recording) order, which keeps
//! gradient reductions deterministic.
//!
//! Folding ops (`wrap_st`, `centered_mod_st`) use straight-through
//! gradients: the forward applies the fold, the backward passes the
//! adjoint unchanged, since the fold has unit slope away from its jumps.

use crate::dct::{dct2_plane, idct2_plane};
use crate::denoise::{conv_layer, reflect, ConvArch, Tensor};
use crate::error::{Error, Result};
use crate::grad::{divergence_buf, forward_diff_buf, GradientField};
use crate::image::{BitDepth, Image};
use crate::modulo::{centered_mod_scalar, wrap_scalar};

pub type Id = usize;

/// Value shapes carried on the tape. `Grad` packs the horizontal then
/// vertical difference planes into one buffer of `2 * h * w * c` samples.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Shape {
    Img { h: usize, w: usize, c: usize },
    Grad { h: usize, w: usize, c: usize },
    Scalar,
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Img { h, w, c } => h * w * c,
            Shape::Grad { h, w, c } => 2 * h * w * c,
            Shape::Scalar => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A tape value: shape plus flat storage.
#[derive(Clone, Debug)]
pub struct Buf {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Buf {
    pub fn scalar(v: f64) -> Buf {
        Buf { shape: Shape::Scalar, data: vec![v] }
    }

    pub fn from_image(x: &Image) -> Buf {
        let (h, w, c) = x.dims();
        Buf { shape: Shape::Img { h, w, c }, data: x.data().to_vec() }
    }

    pub fn from_field(g: &GradientField) -> Buf {
        let (h, w, c) = g.dims();
        let mut data = Vec::with_capacity(2 * h * w * c);
        data.extend_from_slice(g.dh());
        data.extend_from_slice(g.dv());
        Buf { shape: Shape::Grad { h, w, c }, data }
    }

    /// Converts an image-shaped value back to an [`Image`].
    pub fn to_image(&self) -> Result<Image> {
        match self.shape {
            Shape::Img { h, w, c } => Image::from_vec(h, w, c, self.data.clone()),
            other => Err(Error::ShapeMismatch {
                expected: "image-shaped value".into(),
                got: format!("{other:?}"),
            }),
        }
    }

    pub fn value(&self) -> f64 {
        debug_assert_eq!(self.shape, Shape::Scalar);
        self.data[0]
    }
}

/// Named trainable tensors addressed by index from tape ops.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new(tensors: Vec<Tensor>) -> ParamStore {
        ParamStore { tensors }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| vec![0.0; t.len()]).collect()
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    by_node: Vec<Vec<f64>>,
    by_param: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn wrt_param(&self, idx: usize) -> &[f64] {
        &self.by_param[idx]
    }

    pub fn wrt_node(&self, id: Id) -> &[f64] {
        &self.by_node[id]
    }

    pub fn take_params(self) -> Vec<Vec<f64>> {
        self.by_param
    }
}

#[derive(Clone, Debug)]
enum Op {
    Const,
    /// One element of a parameter tensor, exposed as a scalar node.
    ParamElem { idx: usize, elem: usize },
    Add { a: Id, b: Id },
    Sub { a: Id, b: Id },
    Scale { a: Id, k: f64 },
    Relu { a: Id },
    Conv { input: Id, widx: usize, bidx: usize, cin: usize, cout: usize, relu: bool },
    Dct2 { a: Id },
    Idct2 { a: Id },
    /// `idct2(dct2(data + (rho/2) xt) / denom(rho))` per channel.
    SpectralSolve { data: Id, xt: Id, rho: Id },
    Softplus { a: Id },
    ForwardDiff { a: Id },
    Divergence { a: Id },
    WrapSt { a: Id, modulus: f64 },
    CenteredModSt { a: Id, modulus: f64 },
    /// `[img / s planes, (sigma / s) plane]`.
    DenoiseInput { img: Id, sigma: Id, scale: f64 },
    /// `base + scale * net`.
    ResidualAdd { base: Id, net: Id, scale: f64 },
    MeanSq { a: Id, b: Id },
    MeanAbs { a: Id, b: Id },
}

/// Recorded computation graph; node index doubles as value id.
pub struct Tape {
    ops: Vec<Op>,
    vals: Vec<Buf>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn img_dims(shape: Shape) -> (usize, usize, usize) {
    match shape {
        Shape::Img { h, w, c } | Shape::Grad { h, w, c } => (h, w, c),
        Shape::Scalar => panic!("expected tensor-shaped tape value, found scalar"),
    }
}

fn spectral_denom(h: usize, w: usize, rho: f64) -> Vec<f64> {
    let mut denom = vec![0.0; h * w];
    for m in 0..h {
        let cm = (std::f64::consts::PI * m as f64 / h as f64).cos();
        for n in 0..w {
            let cn = (std::f64::consts::PI * n as f64 / w as f64).cos();
            denom[m * w + n] = 2.0 * (2.0 + rho / 4.0 - cm - cn);
        }
    }
    denom
}

impl Tape {
    pub fn new() -> Tape {
        Tape { ops: Vec::new(), vals: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn val(&self, id: Id) -> &Buf {
        &self.vals[id]
    }

    fn push(&mut self, op: Op, val: Buf) -> Id {
        self.ops.push(op);
        self.vals.push(val);
        self.vals.len() - 1
    }

    pub fn constant(&mut self, b: Buf) -> Id {
        self.push(Op::Const, b)
    }

    pub fn constant_image(&mut self, x: &Image) -> Id {
        self.constant(Buf::from_image(x))
    }

    pub fn scalar(&mut self, v: f64) -> Id {
        self.constant(Buf::scalar(v))
    }

    pub fn param_elem(&mut self, store: &ParamStore, idx: usize, elem: usize) -> Id {
        let val = store.tensors[idx].data[elem];
        self.push(Op::ParamElem { idx, elem }, Buf::scalar(val))
    }

    fn same_shape(&self, a: Id, b: Id) -> Shape {
        let sa = self.vals[a].shape;
        assert_eq!(sa, self.vals[b].shape, "tape op on mismatched shapes");
        sa
    }

    pub fn add(&mut self, a: Id, b: Id) -> Id {
        let shape = self.same_shape(a, b);
        let data = self.vals[a]
            .data
            .iter()
            .zip(self.vals[b].data.iter())
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::Add { a, b }, Buf { shape, data })
    }

    pub fn sub(&mut self, a: Id, b: Id) -> Id {
        let shape = self.same_shape(a, b);
        let data = self.vals[a]
            .data
            .iter()
            .zip(self.vals[b].data.iter())
            .map(|(x, y)| x - y)
            .collect();
        self.push(Op::Sub { a, b }, Buf { shape, data })
    }

    pub fn scale(&mut self, a: Id, k: f64) -> Id {
        let shape = self.vals[a].shape;
        let data = self.vals[a].data.iter().map(|x| k * x).collect();
        self.push(Op::Scale { a, k }, Buf { shape, data })
    }

    pub fn relu(&mut self, a: Id) -> Id {
        let shape = self.vals[a].shape;
        let data = self.vals[a].data.iter().map(|x| x.max(0.0)).collect();
        self.push(Op::Relu { a }, Buf { shape, data })
    }

    /// 3x3 conv layer reading weight/bias tensors from the store.
    pub fn conv(&mut self, store: &ParamStore, input: Id, widx: usize, bidx: usize, relu: bool) -> Id {
        let (h, w, cin) = img_dims(self.vals[input].shape);
        let wt = &store.tensors[widx];
        assert_eq!(wt.shape.len(), 4, "conv weight must be [out, in, 3, 3]");
        assert_eq!(wt.shape[1], cin, "conv weight fan-in mismatch");
        let cout = wt.shape[0];
        let bt = &store.tensors[bidx];
        assert_eq!(bt.len(), cout, "conv bias length mismatch");
        let data = conv_layer(&self.vals[input].data, h, w, cin, cout, &wt.data, &bt.data, relu);
        self.push(
            Op::Conv { input, widx, bidx, cin, cout, relu },
            Buf { shape: Shape::Img { h, w, c: cout }, data },
        )
    }

    pub fn dct2(&mut self, a: Id) -> Id {
        let shape = self.vals[a].shape;
        let (h, w, c) = img_dims(shape);
        assert!(matches!(shape, Shape::Img { .. }), "dct2 expects an image-shaped value");
        let mut data = self.vals[a].data.clone();
        for ch in 0..c {
            dct2_plane(&mut data[ch * h * w..(ch + 1) * h * w], h, w);
        }
        self.push(Op::Dct2 { a }, Buf { shape, data })
    }

    pub fn idct2(&mut self, a: Id) -> Id {
        let shape = self.vals[a].shape;
        let (h, w, c) = img_dims(shape);
        assert!(matches!(shape, Shape::Img { .. }), "idct2 expects an image-shaped value");
        let mut data = self.vals[a].data.clone();
        for ch in 0..c {
            idct2_plane(&mut data[ch * h * w..(ch + 1) * h * w], h, w);
        }
        self.push(Op::Idct2 { a }, Buf { shape, data })
    }

    /// The gradient data-term solve with its `rho` dependence recorded:
    /// differentiates through the spectral numerator and denominator.
    pub fn spectral_solve(&mut self, data: Id, xt: Id, rho: Id) -> Id {
        let shape = self.same_shape(data, xt);
        assert!(matches!(shape, Shape::Img { .. }), "spectral_solve expects image-shaped values");
        assert_eq!(self.vals[rho].shape, Shape::Scalar, "rho must be a scalar node");
        let (h, w, c) = img_dims(shape);
        let rho_v = self.vals[rho].value();
        assert!(rho_v > 0.0 && rho_v.is_finite(), "spectral_solve needs positive finite rho");
        let denom = spectral_denom(h, w, rho_v);
        let half = rho_v / 2.0;
        let mut out = vec![0.0; h * w * c];
        for ch in 0..c {
            let lo = ch * h * w;
            let hi = lo + h * w;
            let plane = &mut out[lo..hi];
            for (idx, p) in plane.iter_mut().enumerate() {
                *p = self.vals[data].data[lo + idx] + half * self.vals[xt].data[lo + idx];
            }
            dct2_plane(plane, h, w);
            for (p, d) in plane.iter_mut().zip(denom.iter()) {
                *p /= d;
            }
            idct2_plane(plane, h, w);
        }
        self.push(Op::SpectralSolve { data, xt, rho }, Buf { shape, data: out })
    }

    pub fn softplus(&mut self, a: Id) -> Id {
        assert_eq!(self.vals[a].shape, Shape::Scalar, "softplus is recorded on scalars");
        let v = softplus(self.vals[a].value());
        self.push(Op::Softplus { a }, Buf::scalar(v))
    }

    pub fn forward_diff(&mut self, a: Id) -> Id {
        let shape = self.vals[a].shape;
        assert!(matches!(shape, Shape::Img { .. }), "forward_diff expects an image-shaped value");
        let (h, w, c) = img_dims(shape);
        let n = h * w * c;
        let mut data = vec![0.0; 2 * n];
        let (dh, dv) = data.split_at_mut(n);
        forward_diff_buf(&self.vals[a].data, h, w, c, dh, dv);
        self.push(Op::ForwardDiff { a }, Buf { shape: Shape::Grad { h, w, c }, data })
    }

    pub fn divergence(&mut self, a: Id) -> Id {
        let shape = self.vals[a].shape;
        assert!(matches!(shape, Shape::Grad { .. }), "divergence expects a gradient-shaped value");
        let (h, w, c) = img_dims(shape);
        let n = h * w * c;
        let mut out = vec![0.0; n];
        divergence_buf(&self.vals[a].data[..n], &self.vals[a].data[n..], h, w, c, &mut out);
        self.push(Op::Divergence { a }, Buf { shape: Shape::Img { h, w, c }, data: out })
    }

    pub fn wrap_st(&mut self, a: Id, b: BitDepth) -> Id {
        let shape = self.vals[a].shape;
        let data = self.vals[a].data.iter().map(|&v| wrap_scalar(v, b)).collect();
        self.push(Op::WrapSt { a, modulus: b.modulus() }, Buf { shape, data })
    }

    pub fn centered_mod_st(&mut self, a: Id, b: BitDepth) -> Id {
        let shape = self.vals[a].shape;
        let data = self.vals[a].data.iter().map(|&v| centered_mod_scalar(v, b)).collect();
        self.push(Op::CenteredModSt { a, modulus: b.modulus() }, Buf { shape, data })
    }

    pub fn denoise_input(&mut self, img: Id, sigma: Id, scale: f64) -> Id {
        let shape = self.vals[img].shape;
        assert!(matches!(shape, Shape::Img { .. }), "denoise_input expects an image-shaped value");
        assert_eq!(self.vals[sigma].shape, Shape::Scalar, "sigma must be a scalar node");
        let (h, w, c) = img_dims(shape);
        let mut data = vec![0.0; (c + 1) * h * w];
        for (dst, src) in data.iter_mut().zip(self.vals[img].data.iter()) {
            *dst = src / scale;
        }
        let sv = self.vals[sigma].value() / scale;
        data[c * h * w..].fill(sv);
        self.push(
            Op::DenoiseInput { img, sigma, scale },
            Buf { shape: Shape::Img { h, w, c: c + 1 }, data },
        )
    }

    pub fn residual_add(&mut self, base: Id, net: Id, scale: f64) -> Id {
        let shape = self.same_shape(base, net);
        let data = self.vals[base]
            .data
            .iter()
            .zip(self.vals[net].data.iter())
            .map(|(x, y)| x + scale * y)
            .collect();
        self.push(Op::ResidualAdd { base, net, scale }, Buf { shape, data })
    }

    pub fn mean_sq(&mut self, a: Id, b: Id) -> Id {
        let shape = self.same_shape(a, b);
        let n = shape.len() as f64;
        let v = self.vals[a]
            .data
            .iter()
            .zip(self.vals[b].data.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        self.push(Op::MeanSq { a, b }, Buf::scalar(v))
    }

    pub fn mean_abs(&mut self, a: Id, b: Id) -> Id {
        let shape = self.same_shape(a, b);
        let n = shape.len() as f64;
        let v = self.vals[a]
            .data
            .iter()
            .zip(self.vals[b].data.iter())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / n;
        self.push(Op::MeanAbs { a, b }, Buf::scalar(v))
    }

    /// Adjoints of a scalar root with seed 1, with respect to every node
    /// and every parameter tensor.
    pub fn backward(&self, root: Id, store: &ParamStore) -> Gradients {
        assert_eq!(self.vals[root].shape, Shape::Scalar, "backward seeds a scalar root");
        self.backward_seeded(root, vec![1.0], store)
    }

    /// General vector-Jacobian product with an explicit seed adjoint.
    pub fn backward_seeded(&self, root: Id, seed: Vec<f64>, store: &ParamStore) -> Gradients {
        assert_eq!(seed.len(), self.vals[root].shape.len(), "seed length mismatch");
        let mut by_node: Vec<Vec<f64>> = self.vals.iter().map(|v| vec![0.0; v.data.len()]).collect();
        let mut by_param = store.zero_grads();
        by_node[root] = seed;
        for id in (0..self.ops.len()).rev() {
            if by_node[id].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut by_node[id]);
            self.accumulate(id, &g, &mut by_node, &mut by_param, store);
            by_node[id] = g;
        }
        Gradients { by_node, by_param }
    }

    fn accumulate(
        &self,
        id: Id,
        g: &[f64],
        by_node: &mut [Vec<f64>],
        by_param: &mut [Vec<f64>],
        store: &ParamStore,
    ) {
        match &self.ops[id] {
            Op::Const => {}
            Op::ParamElem { idx, elem } => by_param[*idx][*elem] += g[0],
            Op::Add { a, b } => {
                axpy(&mut by_node[*a], g, 1.0);
                axpy(&mut by_node[*b], g, 1.0);
            }
            Op::Sub { a, b } => {
                axpy(&mut by_node[*a], g, 1.0);
                axpy(&mut by_node[*b], g, -1.0);
            }
            Op::Scale { a, k } => axpy(&mut by_node[*a], g, *k),
            Op::Relu { a } => {
                let src = &self.vals[*a].data;
                let ga = &mut by_node[*a];
                for i in 0..g.len() {
                    if src[i] > 0.0 {
                        ga[i] += g[i];
                    }
                }
            }
            Op::Conv { input, widx, bidx, cin, cout, relu } => {
                self.conv_backward(id, *input, *widx, *bidx, *cin, *cout, *relu, g, by_node, by_param, store);
            }
            Op::Dct2 { a } => {
                // Orthonormal: the adjoint of the forward transform is the
                // inverse transform.
                let (h, w, c) = img_dims(self.vals[*a].shape);
                let mut adj = g.to_vec();
                for ch in 0..c {
                    idct2_plane(&mut adj[ch * h * w..(ch + 1) * h * w], h, w);
                }
                axpy(&mut by_node[*a], &adj, 1.0);
            }
            Op::Idct2 { a } => {
                let (h, w, c) = img_dims(self.vals[*a].shape);
                let mut adj = g.to_vec();
                for ch in 0..c {
                    dct2_plane(&mut adj[ch * h * w..(ch + 1) * h * w], h, w);
                }
                axpy(&mut by_node[*a], &adj, 1.0);
            }
            Op::SpectralSolve { data, xt, rho } => {
                self.spectral_backward(id, *data, *xt, *rho, g, by_node);
            }
            Op::Softplus { a } => {
                let x = self.vals[*a].value();
                by_node[*a][0] += g[0] * sigmoid(x);
            }
            Op::ForwardDiff { a } => {
                let (h, w, c) = img_dims(self.vals[*a].shape);
                let n = h * w * c;
                let mut adj = vec![0.0; n];
                divergence_buf(&g[..n], &g[n..], h, w, c, &mut adj);
                axpy(&mut by_node[*a], &adj, 1.0);
            }
            Op::Divergence { a } => {
                let (h, w, c) = img_dims(self.vals[*a].shape);
                let n = h * w * c;
                let mut adj = vec![0.0; 2 * n];
                let (dh, dv) = adj.split_at_mut(n);
                forward_diff_buf(g, h, w, c, dh, dv);
                axpy(&mut by_node[*a], &adj, 1.0);
            }
            Op::WrapSt { a, .. } | Op::CenteredModSt { a, .. } => {
                axpy(&mut by_node[*a], g, 1.0);
            }
            Op::DenoiseInput { img, sigma, scale } => {
                let (h, w, c) = img_dims(self.vals[*img].shape);
                let n = h * w * c;
                axpy(&mut by_node[*img], &g[..n], 1.0 / scale);
                by_node[*sigma][0] += g[n..].iter().sum::<f64>() / scale;
            }
            Op::ResidualAdd { base, net, scale } => {
                axpy(&mut by_node[*base], g, 1.0);
                axpy(&mut by_node[*net], g, *scale);
            }
            Op::MeanSq { a, b } => {
                let n = self.vals[*a].data.len() as f64;
                let k = 2.0 * g[0] / n;
                let (va, vb) = (&self.vals[*a].data, &self.vals[*b].data);
                let diff: Vec<f64> = va.iter().zip(vb.iter()).map(|(x, y)| k * (x - y)).collect();
                axpy(&mut by_node[*a], &diff, 1.0);
                axpy(&mut by_node[*b], &diff, -1.0);
            }
            Op::MeanAbs { a, b } => {
                // Subgradient 0 at exact ties.
                let n = self.vals[*a].data.len() as f64;
                let k = g[0] / n;
                let (va, vb) = (&self.vals[*a].data, &self.vals[*b].data);
                let diff: Vec<f64> = va
                    .iter()
                    .zip(vb.iter())
                    .map(|(x, y)| {
                        if x > y {
                            k
                        } else if x < y {
                            -k
                        } else {
                            0.0
                        }
                    })
                    .collect();
                axpy(&mut by_node[*a], &diff, 1.0);
                axpy(&mut by_node[*b], &diff, -1.0);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        id: Id,
        input: Id,
        widx: usize,
        bidx: usize,
        cin: usize,
        cout: usize,
        relu: bool,
        g: &[f64],
        by_node: &mut [Vec<f64>],
        by_param: &mut [Vec<f64>],
        store: &ParamStore,
    ) {
        let (h, w, _) = img_dims(self.vals[input].shape);
        let src = &self.vals[input].data;
        let out = &self.vals[id].data;
        // Gate the adjoint through the ReLU applied at the output.
        let gated: Vec<f64> = if relu {
            g.iter().zip(out.iter()).map(|(gv, ov)| if *ov > 0.0 { *gv } else { 0.0 }).collect()
        } else {
            g.to_vec()
        };
        let weight = &store.tensors[widx].data;
        let gw = &mut by_param[widx];
        for o in 0..cout {
            let gplane = &gated[o * h * w..(o + 1) * h * w];
            for ic in 0..cin {
                let iplane = &src[ic * h * w..(ic + 1) * h * w];
                let kbase = (o * cin + ic) * 9;
                for (t, gk) in gw[kbase..kbase + 9].iter_mut().enumerate() {
                    let (di, dj) = ((t / 3) as isize - 1, (t % 3) as isize - 1);
                    let mut acc = 0.0;
                    for i in 0..h {
                        let ri = reflect(i as isize + di, h) * w;
                        for j in 0..w {
                            let rj = reflect(j as isize + dj, w);
                            acc += gplane[i * w + j] * iplane[ri + rj];
                        }
                    }
                    *gk += acc;
                }
            }
        }
        let gb = &mut by_param[bidx];
        for o in 0..cout {
            gb[o] += gated[o * h * w..(o + 1) * h * w].iter().sum::<f64>();
        }
        let gi = &mut by_node[input];
        for o in 0..cout {
            let gplane = &gated[o * h * w..(o + 1) * h * w];
            for ic in 0..cin {
                let k = &weight[(o * cin + ic) * 9..(o * cin + ic + 1) * 9];
                let giplane = &mut gi[ic * h * w..(ic + 1) * h * w];
                for i in 0..h {
                    for j in 0..w {
                        let gv = gplane[i * w + j];
                        if gv == 0.0 {
                            continue;
                        }
                        for (t, kv) in k.iter().enumerate() {
                            let ri = reflect(i as isize + (t / 3) as isize - 1, h);
                            let rj = reflect(j as isize + (t % 3) as isize - 1, w);
                            giplane[ri * w + rj] += kv * gv;
                        }
                    }
                }
            }
        }
    }

    fn spectral_backward(&self, id: Id, data: Id, xt: Id, rho: Id, g: &[f64], by_node: &mut [Vec<f64>]) {
        let (h, w, c) = img_dims(self.vals[data].shape);
        let rho_v = self.vals[rho].value();
        let denom = spectral_denom(h, w, rho_v);
        let mut g_rho = 0.0;
        for ch in 0..c {
            let lo = ch * h * w;
            let hi = lo + h * w;
            // G = dct2(g); adjoint through the diagonal divide and the
            // orthonormal pair gives g_num = idct2(G / denom).
            let mut gs = g[lo..hi].to_vec();
            dct2_plane(&mut gs, h, w);
            // d out / d rho couples the numerator's rho/2 factor and the
            // denominator's rho/4 term: 0.5 * <G, (dct(xt) - dct(out)) / denom>.
            let mut xs = self.vals[xt].data[lo..hi].to_vec();
            dct2_plane(&mut xs, h, w);
            let mut os = self.vals[id].data[lo..hi].to_vec();
            dct2_plane(&mut os, h, w);
            for idx in 0..h * w {
                g_rho += 0.5 * gs[idx] * (xs[idx] - os[idx]) / denom[idx];
            }
            let mut gnum = gs;
            for (p, d) in gnum.iter_mut().zip(denom.iter()) {
                *p /= d;
            }
            idct2_plane(&mut gnum, h, w);
            axpy(&mut by_node[data][lo..hi], &gnum, 1.0);
            axpy(&mut by_node[xt][lo..hi], &gnum, rho_v / 2.0);
        }
        by_node[rho][0] += g_rho;
    }

    /// Recomputes every node value in recording order with the given
    /// parameters. With unchanged parameters the values reproduce bit for
    /// bit; after an optimizer step this re-evaluates the same graph at the
    /// new point.
    pub fn replay(&mut self, store: &ParamStore) {
        for id in 0..self.ops.len() {
            match self.ops[id].clone() {
                Op::Const => {}
                Op::ParamElem { idx, elem } => self.vals[id].data[0] = store.tensors[idx].data[elem],
                Op::Add { a, b } => {
                    for i in 0..self.vals[id].data.len() {
                        self.vals[id].data[i] = self.vals[a].data[i] + self.vals[b].data[i];
                    }
                }
                Op::Sub { a, b } => {
                    for i in 0..self.vals[id].data.len() {
                        self.vals[id].data[i] = self.vals[a].data[i] - self.vals[b].data[i];
                    }
                }
                Op::Scale { a, k } => {
                    for i in 0..self.vals[id].data.len() {
                        self.vals[id].data[i] = k * self.vals[a].data[i];
                    }
                }
                Op::Relu { a } => {
                    for i in 0..self.vals[id].data.len() {
                        self.vals[id].data[i] = self.vals[a].data[i].max(0.0);
                    }
                }
                Op::Conv { input, widx, bidx, cin, cout, relu } => {
                    let (h, w, _) = img_dims(self.vals[input].shape);
                    self.vals[id].data = conv_layer(
                        &self.vals[input].data,
                        h,
                        w,
                        cin,
                        cout,
                        &store.tensors[widx].data,
                        &store.tensors[bidx].data,
                        relu,
                    );
                }
                Op::Dct2 { a } => {
                    let (h, w, c) = img_dims(self.vals[a].shape);
                    let mut data = self.vals[a].data.clone();
                    for ch in 0..c {
                        dct2_plane(&mut data[ch * h * w..(ch + 1) * h * w], h, w);
                    }
                    self.vals[id].data = data;
                }
                Op::Idct2 { a } => {
                    let (h, w, c) = img_dims(self.vals[a].shape);
                    let mut data = self.vals[a].data.clone();
                    for ch in 0..c {
                        idct2_plane(&mut data[ch * h * w..(ch + 1) * h * w], h, w);
                    }
                    self.vals[id].data = data;
                }
                Op::SpectralSolve { data, xt, rho } => {
                    let (h, w, c) = img_dims(self.vals[data].shape);
                    let rho_v = self.vals[rho].value();
                    let denom = spectral_denom(h, w, rho_v);
                    let half = rho_v / 2.0;
                    let mut out = vec![0.0; h * w * c];
                    for ch in 0..c {
                        let lo = ch * h * w;
                        let plane = &mut out[lo..lo + h * w];
                        for (idx, p) in plane.iter_mut().enumerate() {
                            *p = self.vals[data].data[lo + idx] + half * self.vals[xt].data[lo + idx];
                        }
                        dct2_plane(plane, h, w);
                        for (p, d) in plane.iter_mut().zip(denom.iter()) {
                            *p /= d;
                        }
                        idct2_plane(plane, h, w);
                    }
                    self.vals[id].data = out;
                }
                Op::Softplus { a } => self.vals[id].data[0] = softplus(self.vals[a].value()),
                Op::ForwardDiff { a } => {
                    let (h, w, c) = img_dims(self.vals[a].shape);
                    let n = h * w * c;
                    let mut data = vec![0.0; 2 * n];
                    let (dh, dv) = data.split_at_mut(n);
                    forward_diff_buf(&self.vals[a].data, h, w, c, dh, dv);
                    self.vals[id].data = data;
                }
                Op::Divergence { a } => {
                    let (h, w, c) = img_dims(self.vals[a].shape);
                    let n = h * w * c;
                    let mut out = vec![0.0; n];
                    divergence_buf(&self.vals[a].data[..n], &self.vals[a].data[n..], h, w, c, &mut out);
                    self.vals[id].data = out;
                }
                Op::WrapSt { a, modulus } => {
                    for i in 0..self.vals[id].data.len() {
                        let t = self.vals[a].data[i];
                        self.vals[id].data[i] = t - modulus * (t / modulus).floor();
                    }
                }
                Op::CenteredModSt { a, modulus } => {
                    for i in 0..self.vals[id].data.len() {
                        let t = self.vals[a].data[i];
                        self.vals[id].data[i] = t - modulus * (t / modulus + 0.5).floor();
                    }
                }
                Op::DenoiseInput { img, sigma, scale } => {
                    let (h, w, c) = img_dims(self.vals[img].shape);
                    let n = h * w * c;
                    for i in 0..n {
                        self.vals[id].data[i] = self.vals[img].data[i] / scale;
                    }
                    let sv = self.vals[sigma].value() / scale;
                    self.vals[id].data[n..].fill(sv);
                }
                Op::ResidualAdd { base, net, scale } => {
                    for i in 0..self.vals[id].data.len() {
                        self.vals[id].data[i] = self.vals[base].data[i] + scale * self.vals[net].data[i];
                    }
                }
                Op::MeanSq { a, b } => {
                    let n = self.vals[a].data.len() as f64;
                    self.vals[id].data[0] = self.vals[a]
                        .data
                        .iter()
                        .zip(self.vals[b].data.iter())
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        / n;
                }
                Op::MeanAbs { a, b } => {
                    let n = self.vals[a].data.len() as f64;
                    self.vals[id].data[0] = self.vals[a]
                        .data
                        .iter()
                        .zip(self.vals[b].data.iter())
                        .map(|(x, y)| (x - y).abs())
                        .sum::<f64>()
                        / n;
                }
            }
        }
    }
}

/// Records the residual conv denoiser on the tape: `zt + s * cnn([zt/s,
/// sigma/s])`. `first_tensor` indexes the `conv0.weight` tensor in the
/// store; layers alternate weight/bias from there.
pub fn record_conv_denoiser(
    tape: &mut Tape,
    store: &ParamStore,
    arch: &ConvArch,
    zt: Id,
    sigma: Id,
    first_tensor: usize,
) -> Id {
    let mut cur = tape.denoise_input(zt, sigma, arch.sigma_scale);
    for (idx, (_, _, relu)) in arch.layers().into_iter().enumerate() {
        cur = tape.conv(store, cur, first_tensor + 2 * idx, first_tensor + 2 * idx + 1, relu);
    }
    tape.residual_add(zt, cur, arch.sigma_scale)
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0, "softplus is positive");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn axpy(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += k * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::init_weights;
    use crate::testutil::Mix64;

    /// Central finite differences of a scalar-valued rebuild function with
    /// respect to one parameter tensor.
    fn fd_param(
        store: &ParamStore,
        idx: usize,
        eval: &dyn Fn(&ParamStore) -> f64,
        h: f64,
    ) -> Vec<f64> {
        let mut grads = vec![0.0; store.tensors[idx].len()];
        for e in 0..grads.len() {
            let mut plus = store.clone();
            plus.tensors[idx].data[e] += h;
            let mut minus = store.clone();
            minus.tensors[idx].data[e] -= h;
            grads[e] = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        grads
    }

    fn assert_close(got: &[f64], want: &[f64], tol: f64, what: &str) {
        for (i, (g, w)) in got.iter().zip(want.iter()).enumerate() {
            let rel = (g - w).abs() / w.abs().max(1e-6);
            assert!(rel < tol, "{what}[{i}]: ad {g} vs fd {w} (rel {rel})");
        }
    }

    fn random_image(rng: &mut Mix64, h: usize, w: usize, c: usize) -> Image {
        Image::from_fn(h, w, c, |_, _, _| rng.next_f64() * 4.0 - 2.0).unwrap()
    }

    #[test]
    fn scale_gradient_is_the_constant() {
        let mut tape = Tape::new();
        let store = ParamStore::new(vec![Tensor { name: "p".into(), shape: vec![1], data: vec![2.0] }]);
        let p = tape.param_elem(&store, 0, 0);
        let y = tape.scale(p, 3.0);
        let g = tape.backward(y, &store);
        assert_eq!(g.wrt_param(0), &[3.0]);
    }

    #[test]
    fn softplus_matches_finite_differences() {
        for x0 in [-2.0, 0.0, 0.5, 4.0] {
            let store = ParamStore::new(vec![Tensor { name: "p".into(), shape: vec![1], data: vec![x0] }]);
            let eval = |s: &ParamStore| {
                let mut t = Tape::new();
                let p = t.param_elem(s, 0, 0);
                let y = t.softplus(p);
                t.val(y).value()
            };
            let mut t = Tape::new();
            let p = t.param_elem(&store, 0, 0);
            let y = t.softplus(p);
            let g = t.backward(y, &store);
            let fd = fd_param(&store, 0, &eval, 1e-6);
            assert_close(g.wrt_param(0), &fd, 1e-6, "softplus");
        }
    }

    #[test]
    fn conv_stack_gradients_match_finite_differences() {
        let mut rng = Mix64::new(31);
        let arch = ConvArch { channels: 1, base_channels: 3, num_blocks: 1, sigma_scale: 16.0 };
        let weights = init_weights(arch, 5).unwrap();
        let store = ParamStore::new(weights.tensors.clone());
        let x = random_image(&mut rng, 6, 5, 1);
        let target = random_image(&mut rng, 6, 5, 1);

        let build = |s: &ParamStore| -> (Tape, Id) {
            let mut t = Tape::new();
            let xin = t.constant_image(&x);
            let sig = t.scalar(8.0);
            let out = record_conv_denoiser(&mut t, s, &arch, xin, sig, 0);
            let tgt = t.constant_image(&target);
            let loss = t.mean_sq(out, tgt);
            (t, loss)
        };
        let (tape, loss) = build(&store);
        let grads = tape.backward(loss, &store);
        let eval = |s: &ParamStore| {
            let (t, l) = build(s);
            t.val(l).value()
        };
        for idx in 0..store.tensors.len() {
            let fd = fd_param(&store, idx, &eval, 1e-5);
            assert_close(grads.wrt_param(idx), &fd, 1e-4, &store.tensors[idx].name);
        }
    }

    #[test]
    fn spectral_solve_gradients_match_finite_differences() {
        let mut rng = Mix64::new(33);
        let data = random_image(&mut rng, 5, 4, 1);
        let xt = random_image(&mut rng, 5, 4, 1);
        let target = random_image(&mut rng, 5, 4, 1);
        let store = ParamStore::new(vec![Tensor { name: "rho_raw".into(), shape: vec![1], data: vec![0.3] }]);

        let eval = |s: &ParamStore| {
            let mut t = Tape::new();
            let d = t.constant_image(&data);
            let x = t.constant_image(&xt);
            let raw = t.param_elem(s, 0, 0);
            let rho = t.softplus(raw);
            let out = t.spectral_solve(d, x, rho);
            let tgt = t.constant_image(&target);
            let l = t.mean_sq(out, tgt);
            t.val(l).value()
        };
        let mut t = Tape::new();
        let d = t.constant_image(&data);
        let x = t.constant_image(&xt);
        let raw = t.param_elem(&store, 0, 0);
        let rho = t.softplus(raw);
        let out = t.spectral_solve(d, x, rho);
        let tgt = t.constant_image(&target);
        let l = t.mean_sq(out, tgt);
        let g = t.backward(l, &store);
        let fd = fd_param(&store, 0, &eval, 1e-6);
        assert_close(g.wrt_param(0), &fd, 1e-4, "rho_raw");

        // Gradient with respect to the prior input x_tilde.
        let gx = g.wrt_node(x).to_vec();
        let mut fd_x = vec![0.0; gx.len()];
        for e in 0..fd_x.len() {
            let pert = |delta: f64| {
                let mut xi = xt.clone();
                xi.data_mut()[e] += delta;
                let mut t = Tape::new();
                let d = t.constant_image(&data);
                let x = t.constant_image(&xi);
                let raw = t.param_elem(&store, 0, 0);
                let rho = t.softplus(raw);
                let out = t.spectral_solve(d, x, rho);
                let tgt = t.constant_image(&target);
                let l = t.mean_sq(out, tgt);
                t.val(l).value()
            };
            fd_x[e] = (pert(1e-6) - pert(-1e-6)) / 2e-6;
        }
        assert_close(&gx, &fd_x, 1e-4, "x_tilde");
    }

    #[test]
    fn diff_and_divergence_ops_are_adjoint_on_tape() {
        let mut rng = Mix64::new(34);
        let x = random_image(&mut rng, 6, 7, 1);
        let target = random_image(&mut rng, 6, 7, 1);
        let eval = |xi: &Image| {
            let mut t = Tape::new();
            let a = t.constant_image(xi);
            let f = t.forward_diff(a);
            let d = t.divergence(f);
            let tgt = t.constant_image(&target);
            let l = t.mean_sq(d, tgt);
            (t, a, l)
        };
        let (t, a, l) = eval(&x);
        let store = ParamStore::new(vec![]);
        let g = t.backward(l, &store);
        let ga = g.wrt_node(a).to_vec();
        for e in [0, 5, 17, 41] {
            let pert = |delta: f64| {
                let mut xi = x.clone();
                xi.data_mut()[e] += delta;
                let (t, _, l) = eval(&xi);
                t.val(l).value()
            };
            let fd = (pert(1e-6) - pert(-1e-6)) / 2e-6;
            assert!((ga[e] - fd).abs() / fd.abs().max(1e-6) < 1e-4, "elem {e}: {} vs {fd}", ga[e]);
        }
    }

    #[test]
    fn fold_ops_pass_gradients_straight_through() {
        let b = BitDepth::new(8).unwrap();
        let x = Image::from_fn(3, 3, 1, |i, j, _| 300.0 + (i * 3 + j) as f64 * 40.0).unwrap();
        let mut t = Tape::new();
        let a = t.constant_image(&x);
        let wrapped = t.wrap_st(a, b);
        let target = t.constant_image(&Image::new(3, 3, 1).unwrap());
        let l = t.mean_sq(wrapped, target);
        let store = ParamStore::new(vec![]);
        let g = t.backward(l, &store);
        // d loss / d a == d loss / d wrapped elementwise (unit slope).
        let n = 9.0;
        for (idx, ga) in g.wrt_node(a).iter().enumerate() {
            let want = 2.0 / n * t.val(wrapped).data[idx];
            assert!((ga - want).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_abs_gradient_matches_sign() {
        let a_img = Image::from_vec(1, 4, 1, vec![2.0, -3.0, 0.5, 1.0]).unwrap();
        let b_img = Image::from_vec(1, 4, 1, vec![1.0, 0.0, 1.5, 1.0]).unwrap();
        let mut t = Tape::new();
        let a = t.constant_image(&a_img);
        let b = t.constant_image(&b_img);
        let l = t.mean_abs(a, b);
        let store = ParamStore::new(vec![]);
        let g = t.backward(l, &store);
        assert_eq!(g.wrt_node(a), &[0.25, -0.25, -0.25, 0.0]);
    }

    #[test]
    fn replay_reproduces_values_bit_for_bit() {
        let mut rng = Mix64::new(35);
        let arch = ConvArch { channels: 1, base_channels: 4, num_blocks: 1, sigma_scale: 64.0 };
        let weights = init_weights(arch, 2).unwrap();
        let store = ParamStore::new(weights.tensors.clone());
        let x = random_image(&mut rng, 8, 8, 1);
        let mut t = Tape::new();
        let a = t.constant_image(&x);
        let sig = t.scalar(10.0);
        let out = record_conv_denoiser(&mut t, &store, &arch, a, sig, 0);
        let before: Vec<Vec<f64>> = (0..t.len()).map(|i| t.val(i).data.clone()).collect();
        t.replay(&store);
        for i in 0..t.len() {
            assert_eq!(t.val(i).data, before[i], "node {i} changed under replay");
        }
        let _ = out;
    }
}
