//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! replays it in reverse to accumulate gradients. The tape also counts
//! multiply-accumulate operations per named scope, which is what the
//! efficiency profiler reads out.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type NodeId = usize;

type BackFn = Box<dyn Fn(&Tape, &Tensor) -> Vec<(NodeId, Tensor)>>;

struct Node {
    value: Tensor,
    backward: Option<BackFn>,
    param: Option<usize>,
}

/// Operation tape: forward values plus backward closures.
pub struct Tape {
    nodes: Vec<Node>,
    scope: String,
    /// (scope, multiply-accumulate count) in first-touch order.
    pub mac_ledger: Vec<(String, u64)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar output with respect to every tape node.
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn of(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node.get(id).and_then(|g| g.as_ref())
    }

    /// Gradients of all parameter leaves, keyed by parameter id. A parameter
    /// loaded onto the tape more than once (weight sharing, reuse across
    /// temporal passes) gets its leaf gradients summed.
    pub fn params(&self, tape: &Tape) -> Vec<(usize, Tensor)> {
        let mut out: Vec<(usize, Tensor)> = Vec::new();
        for (id, node) in tape.nodes.iter().enumerate() {
            if let Some(pid) = node.param {
                if let Some(g) = &self.by_node[id] {
                    match out.iter_mut().find(|(p, _)| *p == pid) {
                        Some((_, acc)) => {
                            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                                *a += b;
                            }
                        }
                        None => out.push((pid, g.clone())),
                    }
                }
            }
        }
        out
    }
}

#[inline]
fn bcast_idx(shape: &[usize; 4], n: usize, c: usize, h: usize, w: usize) -> usize {
    ((n % shape[0] * shape[1] + c % shape[1]) * shape[2] + h % shape[2]) * shape[3] + w % shape[3]
}

fn check_broadcast(x: &[usize; 4], s: &[usize; 4]) -> Result<()> {
    for d in 0..4 {
        if s[d] != 1 && s[d] != x[d] {
            return Err(Error::Shape(format!(
                "cannot broadcast {:?} onto {:?}",
                s, x
            )));
        }
    }
    Ok(())
}

/// Sums `grad` (shaped like `x`) down to `shape` along broadcast dims.
fn reduce_to(grad: &Tensor, shape: [usize; 4]) -> Tensor {
    if grad.shape == shape {
        return grad.clone();
    }
    let mut out = Tensor::zeros(shape);
    let [n, c, h, w] = grad.shape;
    for in_ in 0..n {
        for ic in 0..c {
            for ih in 0..h {
                for iw in 0..w {
                    out.data[bcast_idx(&shape, in_, ic, ih, iw)] += grad.at(in_, ic, ih, iw);
                }
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            scope: String::new(),
            mac_ledger: Vec::new(),
        }
    }

    /// Sets the scope name MACs are attributed to from here on.
    pub fn set_scope(&mut self, name: &str) {
        self.scope = name.to_string();
    }

    fn add_macs(&mut self, count: u64) {
        if let Some(entry) = self.mac_ledger.iter_mut().find(|(s, _)| *s == self.scope) {
            entry.1 += count;
        } else {
            self.mac_ledger.push((self.scope.clone(), count));
        }
    }

    pub fn total_macs(&self) -> u64 {
        self.mac_ledger.iter().map(|(_, m)| m).sum()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor, backward: Option<BackFn>) -> NodeId {
        self.nodes.push(Node {
            value,
            backward,
            param: None,
        });
        self.nodes.len() - 1
    }

    /// A constant leaf: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, None)
    }

    /// A trainable leaf tied to a parameter store entry.
    pub fn param(&mut self, param_id: usize, value: Tensor) -> NodeId {
        let id = self.push(value, None);
        self.nodes[id].param = Some(param_id);
        id
    }

    pub fn backward(&self, loss: NodeId) -> Gradients {
        let mut by_node: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        by_node[loss] = Some(Tensor::filled(self.nodes[loss].value.shape, 1.0));
        for id in (0..=loss).rev() {
            let Some(grad) = by_node[id].clone() else {
                continue;
            };
            let Some(back) = &self.nodes[id].backward else {
                continue;
            };
            for (pid, g) in back(self, &grad) {
                debug_assert_eq!(g.shape, self.nodes[pid].value.shape);
                match &mut by_node[pid] {
                    Some(acc) => {
                        for (a, b) in acc.data.iter_mut().zip(&g.data) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(g),
                }
            }
        }
        Gradients { by_node }
    }

    // ---- elementwise and broadcast arithmetic ----

    /// `x + s`, with `s` broadcast along any dim of size 1.
    pub fn add(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        self.bcast_op(x, s, |a, b| a + b, |_, _| (1.0, 1.0))
    }

    /// `x - s`, with broadcasting as in [`Tape::add`].
    pub fn sub(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        self.bcast_op(x, s, |a, b| a - b, |_, _| (1.0, -1.0))
    }

    /// `x * s`, with broadcasting as in [`Tape::add`].
    pub fn mul(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        self.bcast_op(x, s, |a, b| a * b, |a, b| (b, a))
    }

    fn bcast_op(
        &mut self,
        x: NodeId,
        s: NodeId,
        f: fn(f64, f64) -> f64,
        df: fn(f64, f64) -> (f64, f64),
    ) -> Result<NodeId> {
        let xs = self.value(x).shape;
        let ss = self.value(s).shape;
        check_broadcast(&xs, &ss)?;
        let [n, c, h, w] = xs;
        let mut out = Tensor::zeros(xs);
        {
            let xv = self.value(x);
            let sv = self.value(s);
            let mut i = 0;
            for in_ in 0..n {
                for ic in 0..c {
                    for ih in 0..h {
                        for iw in 0..w {
                            out.data[i] = f(xv.data[i], sv.data[bcast_idx(&ss, in_, ic, ih, iw)]);
                            i += 1;
                        }
                    }
                }
            }
        }
        self.add_macs(out.len() as u64);
        Ok(self.push(
            out,
            Some(Box::new(move |tape, gy| {
                let xv = tape.value(x);
                let sv = tape.value(s);
                let mut gx = Tensor::zeros(xs);
                let mut gs_full = Tensor::zeros(xs);
                let mut i = 0;
                for in_ in 0..n {
                    for ic in 0..c {
                        for ih in 0..h {
                            for iw in 0..w {
                                let (da, db) =
                                    df(xv.data[i], sv.data[bcast_idx(&ss, in_, ic, ih, iw)]);
                                gx.data[i] = da * gy.data[i];
                                gs_full.data[i] = db * gy.data[i];
                                i += 1;
                            }
                        }
                    }
                }
                vec![(x, gx), (s, reduce_to(&gs_full, ss))]
            })),
        ))
    }

    /// `|a - b|` elementwise; same shapes required.
    pub fn abs_diff(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.value(a).shape;
        if sa != self.value(b).shape {
            return Err(Error::Shape("abs_diff operands differ".to_string()));
        }
        let out = Tensor {
            shape: sa,
            data: self
                .value(a)
                .data
                .iter()
                .zip(&self.value(b).data)
                .map(|(&x, &y)| libm::fabs(x - y))
                .collect(),
        };
        self.add_macs(out.len() as u64);
        Ok(self.push(
            out,
            Some(Box::new(move |tape, gy| {
                let av = tape.value(a);
                let bv = tape.value(b);
                let mut ga = Tensor::zeros(sa);
                let mut gb = Tensor::zeros(sa);
                for i in 0..gy.len() {
                    let s = (av.data[i] - bv.data[i]).signum();
                    let s = if av.data[i] == bv.data[i] { 0.0 } else { s };
                    ga.data[i] = s * gy.data[i];
                    gb.data[i] = -s * gy.data[i];
                }
                vec![(a, ga), (b, gb)]
            })),
        ))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let shape = self.value(x).shape;
        let out = Tensor {
            shape,
            data: self.value(x).data.iter().map(|&v| v * k).collect(),
        };
        self.add_macs(out.len() as u64);
        self.push(
            out,
            Some(Box::new(move |_, gy| {
                let g = Tensor {
                    shape,
                    data: gy.data.iter().map(|&v| v * k).collect(),
                };
                vec![(x, g)]
            })),
        )
    }

    pub fn add_const(&mut self, x: NodeId, k: f64) -> NodeId {
        let shape = self.value(x).shape;
        let out = Tensor {
            shape,
            data: self.value(x).data.iter().map(|&v| v + k).collect(),
        };
        self.add_macs(out.len() as u64);
        self.push(
            out,
            Some(Box::new(move |_, gy| vec![(x, gy.clone())])),
        )
    }

    /// `1 / sqrt(x + eps)` elementwise.
    pub fn rsqrt(&mut self, x: NodeId, eps: f64) -> NodeId {
        let shape = self.value(x).shape;
        let out = Tensor {
            shape,
            data: self
                .value(x)
                .data
                .iter()
                .map(|&v| 1.0 / libm::sqrt(v + eps))
                .collect(),
        };
        self.add_macs(out.len() as u64);
        let out_id = self.push(
            out,
            Some(Box::new(move |tape, gy| {
                let xv = tape.value(x);
                let mut g = Tensor::zeros(shape);
                for i in 0..g.len() {
                    let r = 1.0 / libm::sqrt(xv.data[i] + eps);
                    g.data[i] = -0.5 * r * r * r * gy.data[i];
                }
                vec![(x, g)]
            })),
        );
        out_id
    }

    // ---- activations ----

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let shape = self.value(x).shape;
        let out = Tensor {
            shape,
            data: self.value(x).data.iter().map(|&v| v.max(0.0)).collect(),
        };
        self.add_macs(out.len() as u64);
        self.push(
            out,
            Some(Box::new(move |tape, gy| {
                let xv = tape.value(x);
                let mut g = Tensor::zeros(shape);
                for i in 0..g.len() {
                    g.data[i] = if xv.data[i] > 0.0 { gy.data[i] } else { 0.0 };
                }
                vec![(x, g)]
            })),
        )
    }

    /// `x * clamp(x + 3, 0, 6) / 6` (the MobileNetV3 h-swish).
    pub fn hardswish(&mut self, x: NodeId) -> NodeId {
        let shape = self.value(x).shape;
        let out = Tensor {
            shape,
            data: self
                .value(x)
                .data
                .iter()
                .map(|&v| v * (v + 3.0).clamp(0.0, 6.0) / 6.0)
                .collect(),
        };
        self.add_macs(out.len() as u64);
        self.push(
            out,
            Some(Box::new(move |tape, gy| {
                let xv = tape.value(x);
                let mut g = Tensor::zeros(shape);
                for i in 0..g.len() {
                    let v = xv.data[i];
                    let d = if v <= -3.0 {
                        0.0
                    } else if v >= 3.0 {
                        1.0
                    } else {
                        (2.0 * v + 3.0) / 6.0
                    };
                    g.data[i] = d * gy.data[i];
                }
                vec![(x, g)]
            })),
        )
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let shape = self.value(x).shape;
        let out = Tensor {
            shape,
            data: self
                .value(x)
                .data
                .iter()
                .map(|&v| 1.0 / (1.0 + libm::exp(-v)))
                .collect(),
        };
        self.add_macs(out.len() as u64);
        let out_id = self.push(out, None);
        self.nodes[out_id].backward = Some(Box::new(move |tape, gy| {
            let yv = tape.value(out_id);
            let mut g = Tensor::zeros(shape);
            for i in 0..g.len() {
                g.data[i] = yv.data[i] * (1.0 - yv.data[i]) * gy.data[i];
            }
            vec![(x, g)]
        }));
        out_id
    }

    // ---- reductions ----

    /// Mean over N, H and W per channel -> shape [1, C, 1, 1].
    pub fn channel_mean(&mut self, x: NodeId) -> NodeId {
        let [n, c, h, w] = self.value(x).shape;
        let count = (n * h * w) as f64;
        let mut out = Tensor::zeros([1, c, 1, 1]);
        {
            let xv = self.value(x);
            for in_ in 0..n {
                for ic in 0..c {
                    for ih in 0..h {
                        for iw in 0..w {
                            out.data[ic] += xv.at(in_, ic, ih, iw);
                        }
                    }
                }
            }
        }
        for v in out.data.iter_mut() {
            *v /= count;
        }
        self.add_macs((n * c * h * w) as u64);
        self.push(
            out,
            Some(Box::new(move |_, gy| {
                let mut g = Tensor::zeros([n, c, h, w]);
                for in_ in 0..n {
                    for ic in 0..c {
                        let gv = gy.data[ic] / count;
                        for ih in 0..h {
                            for iw in 0..w {
                                *g.at_mut(in_, ic, ih, iw) = gv;
                            }
                        }
                    }
                }
                vec![(x, g)]
            })),
        )
    }

    /// Mean over H and W per (N, C) -> shape [N, C, 1, 1].
    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let [n, c, h, w] = self.value(x).shape;
        let count = (h * w) as f64;
        let mut out = Tensor::zeros([n, c, 1, 1]);
        {
            let xv = self.value(x);
            for in_ in 0..n {
                for ic in 0..c {
                    let mut acc = 0.0;
                    for ih in 0..h {
                        for iw in 0..w {
                            acc += xv.at(in_, ic, ih, iw);
                        }
                    }
                    out.data[in_ * c + ic] = acc / count;
                }
            }
        }
        self.add_macs((n * c * h * w) as u64);
        self.push(
            out,
            Some(Box::new(move |_, gy| {
                let mut g = Tensor::zeros([n, c, h, w]);
                for in_ in 0..n {
                    for ic in 0..c {
                        let gv = gy.data[in_ * c + ic] / count;
                        for ih in 0..h {
                            for iw in 0..w {
                                *g.at_mut(in_, ic, ih, iw) = gv;
                            }
                        }
                    }
                }
                vec![(x, g)]
            })),
        )
    }

    // ---- structural ops ----

    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::Contract("concat of zero inputs".to_string()));
        }
        let [n, _, h, w] = self.value(inputs[0]).shape;
        let mut c_total = 0;
        for &id in inputs {
            let s = self.value(id).shape;
            if s[0] != n || s[2] != h || s[3] != w {
                return Err(Error::Shape(format!(
                    "concat input {:?} incompatible with [{},_,{},{}]",
                    s, n, h, w
                )));
            }
            c_total += s[1];
        }
        let mut out = Tensor::zeros([n, c_total, h, w]);
        let mut offsets = Vec::with_capacity(inputs.len());
        {
            let mut c0 = 0;
            for &id in inputs {
                let xv = self.value(id);
                offsets.push((id, c0, xv.c()));
                for in_ in 0..n {
                    for ic in 0..xv.c() {
                        for ih in 0..h {
                            for iw in 0..w {
                                *out.at_mut(in_, c0 + ic, ih, iw) = xv.at(in_, ic, ih, iw);
                            }
                        }
                    }
                }
                c0 += xv.c();
            }
        }
        self.add_macs(out.len() as u64);
        Ok(self.push(
            out,
            Some(Box::new(move |_, gy| {
                offsets
                    .iter()
                    .map(|&(id, c0, ci)| {
                        let mut g = Tensor::zeros([n, ci, h, w]);
                        for in_ in 0..n {
                            for ic in 0..ci {
                                for ih in 0..h {
                                    for iw in 0..w {
                                        *g.at_mut(in_, ic, ih, iw) = gy.at(in_, c0 + ic, ih, iw);
                                    }
                                }
                            }
                        }
                        (id, g)
                    })
                    .collect()
            })),
        ))
    }

    /// Keeps channels `[c0, c1)`.
    pub fn channel_slice(&mut self, x: NodeId, c0: usize, c1: usize) -> Result<NodeId> {
        let [n, c, h, w] = self.value(x).shape;
        if c0 >= c1 || c1 > c {
            return Err(Error::Shape(format!("slice {}..{} of {} channels", c0, c1, c)));
        }
        let mut out = Tensor::zeros([n, c1 - c0, h, w]);
        {
            let xv = self.value(x);
            for in_ in 0..n {
                for ic in c0..c1 {
                    for ih in 0..h {
                        for iw in 0..w {
                            *out.at_mut(in_, ic - c0, ih, iw) = xv.at(in_, ic, ih, iw);
                        }
                    }
                }
            }
        }
        self.add_macs(out.len() as u64);
        Ok(self.push(
            out,
            Some(Box::new(move |_, gy| {
                let mut g = Tensor::zeros([n, c, h, w]);
                for in_ in 0..n {
                    for ic in c0..c1 {
                        for ih in 0..h {
                            for iw in 0..w {
                                *g.at_mut(in_, ic, ih, iw) = gy.at(in_, ic - c0, ih, iw);
                            }
                        }
                    }
                }
                vec![(x, g)]
            })),
        ))
    }

    // ---- convolution ----

    /// Grouped 2D convolution. `weight` is [Cout, Cin/groups, K, K]; `bias`
    /// (if any) is [1, Cout, 1, 1]; padding is symmetric.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<NodeId> {
        let [n, cin, h, w] = self.value(x).shape;
        let [cout, cin_g, kh, kw] = self.value(weight).shape;
        if kh != kw {
            return Err(Error::Config("only square kernels supported".to_string()));
        }
        if cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
            return Err(Error::Shape(format!(
                "conv groups {}: x has {} channels, weight {:?}",
                groups,
                cin,
                self.value(weight).shape
            )));
        }
        if let Some(b) = bias {
            if self.value(b).shape != [1, cout, 1, 1] {
                return Err(Error::Shape("conv bias must be [1,Cout,1,1]".to_string()));
            }
        }
        let k = kh;
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::Shape(format!(
                "conv kernel {} exceeds padded input {}x{}",
                k,
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let oc_g = cout / groups;
        let mut out = Tensor::zeros([n, cout, oh, ow]);
        {
            let xv = self.value(x);
            let wv = self.value(weight);
            for in_ in 0..n {
                for g in 0..groups {
                    for ocg in 0..oc_g {
                        let oc = g * oc_g + ocg;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = 0.0;
                                for icg in 0..cin_g {
                                    let ic = g * cin_g + icg;
                                    for ky in 0..k {
                                        let iy = oy * stride + ky;
                                        if iy < pad || iy - pad >= h {
                                            continue;
                                        }
                                        let iy = iy - pad;
                                        for kx in 0..k {
                                            let ix = ox * stride + kx;
                                            if ix < pad || ix - pad >= w {
                                                continue;
                                            }
                                            acc += xv.at(in_, ic, iy, ix - pad)
                                                * wv.at(oc, icg, ky, kx);
                                        }
                                    }
                                }
                                *out.at_mut(in_, oc, oy, ox) = acc;
                            }
                        }
                    }
                }
            }
            if let Some(b) = bias {
                let bv = self.value(b);
                for in_ in 0..n {
                    for oc in 0..cout {
                        let bval = bv.data[oc];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                *out.at_mut(in_, oc, oy, ox) += bval;
                            }
                        }
                    }
                }
            }
        }
        self.add_macs((n * cout * oh * ow * cin_g * k * k) as u64);
        if bias.is_some() {
            self.add_macs((n * cout * oh * ow) as u64);
        }
        Ok(self.push(
            out,
            Some(Box::new(move |tape, gy| {
                let xv = tape.value(x);
                let wv = tape.value(weight);
                let mut gx = Tensor::zeros([n, cin, h, w]);
                let mut gw = Tensor::zeros([cout, cin_g, k, k]);
                for in_ in 0..n {
                    for g in 0..groups {
                        for ocg in 0..oc_g {
                            let oc = g * oc_g + ocg;
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let gv = gy.at(in_, oc, oy, ox);
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    for icg in 0..cin_g {
                                        let ic = g * cin_g + icg;
                                        for ky in 0..k {
                                            let iy = oy * stride + ky;
                                            if iy < pad || iy - pad >= h {
                                                continue;
                                            }
                                            let iy = iy - pad;
                                            for kx in 0..k {
                                                let ix = ox * stride + kx;
                                                if ix < pad || ix - pad >= w {
                                                    continue;
                                                }
                                                let ix = ix - pad;
                                                *gx.at_mut(in_, ic, iy, ix) +=
                                                    wv.at(oc, icg, ky, kx) * gv;
                                                *gw.at_mut(oc, icg, ky, kx) +=
                                                    xv.at(in_, ic, iy, ix) * gv;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                let mut grads = vec![(x, gx), (weight, gw)];
                if let Some(b) = bias {
                    let mut gb = Tensor::zeros([1, cout, 1, 1]);
                    for in_ in 0..n {
                        for oc in 0..cout {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    gb.data[oc] += gy.at(in_, oc, oy, ox);
                                }
                            }
                        }
                    }
                    grads.push((b, gb));
                }
                grads
            })),
        ))
    }

    // ---- resampling ----

    /// Bilinear resample of the normalized window `[y0,y1] x [x0,x1]` of the
    /// input onto an `out_h x out_w` grid. Plain resize uses the full window
    /// (0,1,0,1). Sampling is pixel-center based with edge clamping.
    pub fn bilinear_window(
        &mut self,
        x: NodeId,
        out_h: usize,
        out_w: usize,
        window: (f64, f64, f64, f64),
    ) -> Result<NodeId> {
        let [n, c, h, w] = self.value(x).shape;
        let (wy0, wy1, wx0, wx1) = window;
        if !(wy0 < wy1 && wx0 < wx1) || out_h == 0 || out_w == 0 {
            return Err(Error::InvalidGeometry(format!(
                "bad resample window {:?} or size {}x{}",
                window, out_h, out_w
            )));
        }
        // Precompute per-axis source indices and interpolation weights.
        let axis = |out_n: usize, w0: f64, w1: f64, in_n: usize| -> Vec<(usize, usize, f64)> {
            (0..out_n)
                .map(|j| {
                    let u = w0 + (j as f64 + 0.5) / out_n as f64 * (w1 - w0);
                    let s = (u * in_n as f64 - 0.5).clamp(0.0, in_n as f64 - 1.0);
                    let i0 = libm::floor(s) as usize;
                    let i1 = (i0 + 1).min(in_n - 1);
                    (i0, i1, s - i0 as f64)
                })
                .collect()
        };
        let ys = axis(out_h, wy0, wy1, h);
        let xs = axis(out_w, wx0, wx1, w);
        let mut out = Tensor::zeros([n, c, out_h, out_w]);
        {
            let xv = self.value(x);
            for in_ in 0..n {
                for ic in 0..c {
                    for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
                        for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                            let v = xv.at(in_, ic, y0, x0) * (1.0 - ty) * (1.0 - tx)
                                + xv.at(in_, ic, y0, x1) * (1.0 - ty) * tx
                                + xv.at(in_, ic, y1, x0) * ty * (1.0 - tx)
                                + xv.at(in_, ic, y1, x1) * ty * tx;
                            *out.at_mut(in_, ic, oy, ox) = v;
                        }
                    }
                }
            }
        }
        self.add_macs(out.len() as u64);
        let ys_b = ys.clone();
        let xs_b = xs.clone();
        Ok(self.push(
            out,
            Some(Box::new(move |_, gy| {
                let mut g = Tensor::zeros([n, c, h, w]);
                for in_ in 0..n {
                    for ic in 0..c {
                        for (oy, &(y0, y1, ty)) in ys_b.iter().enumerate() {
                            for (ox, &(x0, x1, tx)) in xs_b.iter().enumerate() {
                                let gv = gy.at(in_, ic, oy, ox);
                                *g.at_mut(in_, ic, y0, x0) += gv * (1.0 - ty) * (1.0 - tx);
                                *g.at_mut(in_, ic, y0, x1) += gv * (1.0 - ty) * tx;
                                *g.at_mut(in_, ic, y1, x0) += gv * ty * (1.0 - tx);
                                *g.at_mut(in_, ic, y1, x1) += gv * ty * tx;
                            }
                        }
                    }
                }
                vec![(x, g)]
            })),
        ))
    }

    // ---- classification ----

    /// Channel-wise softmax.
    pub fn softmax_channels(&mut self, x: NodeId) -> NodeId {
        let [n, c, h, w] = self.value(x).shape;
        let mut out = Tensor::zeros([n, c, h, w]);
        {
            let xv = self.value(x);
            for in_ in 0..n {
                for ih in 0..h {
                    for iw in 0..w {
                        let mut m = f64::NEG_INFINITY;
                        for ic in 0..c {
                            m = m.max(xv.at(in_, ic, ih, iw));
                        }
                        let mut z = 0.0;
                        for ic in 0..c {
                            let e = libm::exp(xv.at(in_, ic, ih, iw) - m);
                            *out.at_mut(in_, ic, ih, iw) = e;
                            z += e;
                        }
                        for ic in 0..c {
                            *out.at_mut(in_, ic, ih, iw) /= z;
                        }
                    }
                }
            }
        }
        self.add_macs(out.len() as u64);
        let out_id = self.push(out, None);
        self.nodes[out_id].backward = Some(Box::new(move |tape, gy| {
            let yv = tape.value(out_id);
            let mut g = Tensor::zeros([n, c, h, w]);
            for in_ in 0..n {
                for ih in 0..h {
                    for iw in 0..w {
                        let mut dot = 0.0;
                        for ic in 0..c {
                            dot += gy.at(in_, ic, ih, iw) * yv.at(in_, ic, ih, iw);
                        }
                        for ic in 0..c {
                            let y = yv.at(in_, ic, ih, iw);
                            *g.at_mut(in_, ic, ih, iw) = y * (gy.at(in_, ic, ih, iw) - dot);
                        }
                    }
                }
            }
            vec![(x, g)]
        }));
        out_id
    }

    /// Mean per-pixel negative log-likelihood of `labels` under the channel
    /// softmax of `logits`. Labels hold class indices.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[u8]) -> Result<NodeId> {
        let [n, c, h, w] = self.value(logits).shape;
        if labels.len() != n * h * w {
            return Err(Error::Shape(format!(
                "labels length {} != {}x{}x{}",
                labels.len(),
                n,
                h,
                w
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= c) {
            return Err(Error::InvalidInput(format!(
                "label value {} outside 0..{}",
                bad, c
            )));
        }
        let count = (n * h * w) as f64;
        let mut loss = 0.0;
        let mut probs = Tensor::zeros([n, c, h, w]);
        {
            let xv = self.value(logits);
            let mut li = 0;
            for in_ in 0..n {
                for ih in 0..h {
                    for iw in 0..w {
                        let mut m = f64::NEG_INFINITY;
                        for ic in 0..c {
                            m = m.max(xv.at(in_, ic, ih, iw));
                        }
                        let mut z = 0.0;
                        for ic in 0..c {
                            let e = libm::exp(xv.at(in_, ic, ih, iw) - m);
                            *probs.at_mut(in_, ic, ih, iw) = e;
                            z += e;
                        }
                        let y = labels[li] as usize;
                        loss -= libm::log(probs.at(in_, y, ih, iw) / z);
                        for ic in 0..c {
                            *probs.at_mut(in_, ic, ih, iw) /= z;
                        }
                        li += 1;
                    }
                }
            }
        }
        loss /= count;
        self.add_macs((n * c * h * w) as u64);
        let labels: Vec<u8> = labels.to_vec();
        Ok(self.push(
            Tensor::scalar(loss),
            Some(Box::new(move |_, gy| {
                let gscale = gy.item() / count;
                let mut g = probs.clone();
                let mut li = 0;
                for in_ in 0..n {
                    for ih in 0..h {
                        for iw in 0..w {
                            let y = labels[li] as usize;
                            *g.at_mut(in_, y, ih, iw) -= 1.0;
                            li += 1;
                        }
                    }
                }
                for v in g.data.iter_mut() {
                    *v *= gscale;
                }
                vec![(logits, g)]
            })),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand_tensor(rng: &mut Rng, shape: [usize; 4]) -> Tensor {
        Tensor {
            shape,
            data: (0..shape.iter().product()).map(|_| rng.normal()).collect(),
        }
    }

    /// Finite-difference check of d(sum of f(x)·proj)/dx for one input leaf.
    fn check_grad<F>(shape_x: [usize; 4], build: F)
    where
        F: Fn(&mut Tape, NodeId) -> NodeId,
    {
        let mut rng = Rng::seed(42);
        let x0 = rand_tensor(&mut rng, shape_x);
        // random linear projection to a scalar so all outputs matter
        let mut tape = Tape::new();
        let x = tape.constant(x0.clone());
        let y = build(&mut tape, x);
        let proj = rand_tensor(&mut rng, tape.value(y).shape);
        let loss_of = |xt: &Tensor| -> f64 {
            let mut t = Tape::new();
            let xi = t.constant(xt.clone());
            let yi = build(&mut t, xi);
            t.value(yi)
                .data
                .iter()
                .zip(&proj.data)
                .map(|(a, b)| a * b)
                .sum()
        };
        // backward() seeds ones, so backward(y*proj) differentiates
        // sum(y*proj), which is exactly what loss_of computes
        let pid = tape.constant(proj.clone());
        let prod = tape.mul(y, pid).unwrap();
        let grads = tape.backward(prod);
        let gx = grads.of(x).expect("gradient missing");

        let mut worst = 0.0f64;
        let eps = 1e-5;
        for i in (0..x0.data.len()).step_by((x0.data.len() / 24).max(1)) {
            let mut xp = x0.clone();
            xp.data[i] += eps;
            let mut xm = x0.clone();
            xm.data[i] -= eps;
            let num = (loss_of(&xp) - loss_of(&xm)) / (2.0 * eps);
            let ana = gx.data[i];
            let denom = num.abs().max(ana.abs()).max(1e-6);
            worst = worst.max((num - ana).abs() / denom);
        }
        assert!(worst < 1e-6, "gradient mismatch: {}", worst);
    }

    #[test]
    fn conv2d_gradients() {
        let mut rng = Rng::seed(7);
        let w0 = rand_tensor(&mut rng, [4, 3, 3, 3]);
        let b0 = rand_tensor(&mut rng, [1, 4, 1, 1]);
        check_grad([2, 3, 5, 6], move |t, x| {
            let w = t.constant(w0.clone());
            let b = t.constant(b0.clone());
            t.conv2d(x, w, Some(b), 2, 1, 1).unwrap()
        });
    }

    #[test]
    fn depthwise_conv_gradients() {
        let mut rng = Rng::seed(8);
        let w0 = rand_tensor(&mut rng, [4, 1, 3, 3]);
        check_grad([1, 4, 6, 6], move |t, x| {
            let w = t.constant(w0.clone());
            t.conv2d(x, w, None, 1, 1, 4).unwrap()
        });
    }

    #[test]
    fn conv2d_weight_gradients() {
        let mut rng = Rng::seed(9);
        let x0 = rand_tensor(&mut rng, [1, 2, 5, 5]);
        check_grad([3, 2, 3, 3], move |t, w| {
            let x = t.constant(x0.clone());
            t.conv2d(x, w, None, 1, 1, 1).unwrap()
        });
    }

    #[test]
    fn activation_gradients() {
        check_grad([1, 3, 4, 4], |t, x| t.sigmoid(x));
        check_grad([1, 3, 4, 4], |t, x| {
            let y = t.hardswish(x);
            t.relu(y)
        });
    }

    #[test]
    fn broadcast_and_reduction_gradients() {
        let mut rng = Rng::seed(11);
        let s0 = rand_tensor(&mut rng, [1, 3, 1, 1]);
        check_grad([2, 3, 4, 4], move |t, x| {
            let s = t.constant(s0.clone());
            let y = t.mul(x, s).unwrap();
            let m = t.channel_mean(y);
            let z = t.sub(y, m).unwrap();
            t.global_avg_pool(z)
        });
    }

    #[test]
    fn resample_and_softmax_gradients() {
        check_grad([1, 2, 6, 6], |t, x| {
            let y = t
                .bilinear_window(x, 4, 4, (1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0))
                .unwrap();
            t.softmax_channels(y)
        });
    }

    #[test]
    fn abs_diff_and_slice_gradients() {
        let mut rng = Rng::seed(13);
        let b0 = rand_tensor(&mut rng, [1, 4, 3, 3]);
        check_grad([1, 4, 3, 3], move |t, x| {
            let b = t.constant(b0.clone());
            let d = t.abs_diff(x, b).unwrap();
            t.channel_slice(d, 1, 3).unwrap()
        });
    }

    #[test]
    fn cross_entropy_matches_oracle_and_gradient() {
        let mut rng = Rng::seed(17);
        let x0 = rand_tensor(&mut rng, [1, 2, 2, 2]);
        let labels = [0u8, 1, 1, 0];
        // hand-computed oracle
        let mut expect = 0.0;
        for px in 0..4 {
            let (h, w) = (px / 2, px % 2);
            let a = x0.at(0, 0, h, w);
            let b = x0.at(0, 1, h, w);
            let m = a.max(b);
            let z = libm::exp(a - m) + libm::exp(b - m);
            let logit_y = if labels[px] == 0 { a } else { b };
            expect -= (logit_y - m) - libm::log(z);
        }
        expect /= 4.0;
        let mut tape = Tape::new();
        let x = tape.constant(x0.clone());
        let loss = tape.softmax_cross_entropy(x, &labels).unwrap();
        assert!((tape.value(loss).item() - expect).abs() < 1e-10);

        // finite-difference gradient
        let grads = tape.backward(loss);
        let gx = grads.of(x).unwrap();
        let eps = 1e-6;
        for i in 0..x0.data.len() {
            let mut xp = x0.clone();
            xp.data[i] += eps;
            let mut xm = x0.clone();
            xm.data[i] -= eps;
            let f = |xt: &Tensor| {
                let mut t = Tape::new();
                let xi = t.constant(xt.clone());
                let l = t.softmax_cross_entropy(xi, &labels).unwrap();
                t.value(l).item()
            };
            let num = (f(&xp) - f(&xm)) / (2.0 * eps);
            assert!((num - gx.data[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn uniform_logits_loss_is_ln2() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 2, 4, 4]));
        let labels = [1u8; 16];
        let loss = tape.softmax_cross_entropy(x, &labels).unwrap();
        assert!((tape.value(loss).item() - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn invalid_label_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 2, 1, 1]));
        assert!(tape.softmax_cross_entropy(x, &[2u8]).is_err());
    }

    #[test]
    fn conv_mac_count_matches_analytic() {
        let mut tape = Tape::new();
        tape.set_scope("stem");
        let x = tape.constant(Tensor::zeros([1, 3, 256, 256]));
        let w = tape.constant(Tensor::zeros([16, 3, 3, 3]));
        tape.conv2d(x, w, None, 2, 1, 1).unwrap();
        assert_eq!(tape.total_macs(), 7_077_888);
    }
}
