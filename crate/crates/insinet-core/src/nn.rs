//! Parameter storage and the layer vocabulary the network is built from:
//! convolutions, batch norm, squeeze-excitation and inverted-residual
//! bottleneck blocks.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::autodiff::{NodeId, Tape};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub type ParamId = usize;

/// One named tensor: a trainable weight or a running-statistics buffer.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Flat store of every parameter and buffer in a model. Weight sharing is
/// structural: shared encoders hold the same `ParamId`s, so there is exactly
/// one storage slot no matter how many passes use it.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: Vec<Param>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        self.params.push(Param {
            name: name.to_string(),
            value,
            trainable,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) {
        debug_assert_eq!(self.params[id].value.shape, value.shape);
        self.params[id].value = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate()
    }

    /// Number of trainable scalars; shared groups count once by construction.
    pub fn trainable_scalars(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Group name = prefix up to the first '/'.
    pub fn group_of(&self, id: ParamId) -> &str {
        let name = &self.params[id].name;
        name.split('/').next().unwrap_or(name)
    }
}

/// Loads a parameter onto the tape (trainable leaf or constant buffer).
fn load(tape: &mut Tape, store: &ParameterStore, id: ParamId) -> NodeId {
    let p = store.get(id);
    if p.trainable {
        tape.param(id, p.value.clone())
    } else {
        tape.constant(p.value.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    HardSwish,
    None,
}

fn activate(tape: &mut Tape, x: NodeId, act: Activation) -> NodeId {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::HardSwish => tape.hardswish(x),
        Activation::None => x,
    }
}

/// Kaiming-normal init for a conv weight.
fn conv_init(rng: &mut Rng, cout: usize, cin_g: usize, k: usize) -> Tensor {
    let fan_in = (cin_g * k * k) as f64;
    let std = libm::sqrt(2.0 / fan_in);
    Tensor {
        shape: [cout, cin_g, k, k],
        data: (0..cout * cin_g * k * k).map(|_| rng.normal() * std).collect(),
    }
}

/// 2D convolution layer.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        groups: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(
            &format!("{name}/w"),
            conv_init(rng, cout, cin / groups, k),
            true,
        );
        let bias = bias.then(|| store.add(&format!("{name}/b"), Tensor::zeros([1, cout, 1, 1]), true));
        Conv2d {
            weight,
            bias,
            stride,
            pad: k / 2,
            groups,
        }
    }

    /// Same as [`Conv2d::new`] but with weights and bias at zero, so the
    /// layer is an exact no-op at initialization.
    #[allow(clippy::too_many_arguments)]
    pub fn new_zeroed(
        store: &mut ParameterStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
    ) -> Self {
        let weight = store.add(&format!("{name}/w"), Tensor::zeros([cout, cin, k, k]), true);
        let bias = Some(store.add(&format!("{name}/b"), Tensor::zeros([1, cout, 1, 1]), true));
        Conv2d {
            weight,
            bias,
            stride: 1,
            pad: k / 2,
            groups: 1,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: NodeId) -> Result<NodeId> {
        let w = load(tape, store, self.weight);
        let b = self.bias.map(|id| load(tape, store, id));
        tape.conv2d(x, w, b, self.stride, self.pad, self.groups)
    }
}

/// Batch normalization with train/inference mode switch. Training mode uses
/// batch statistics and updates the running buffers; inference uses the
/// frozen buffers.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub run_mean: ParamId,
    pub run_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParameterStore, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.add(
                &format!("{name}/gamma"),
                Tensor::filled([1, channels, 1, 1], 1.0),
                true,
            ),
            beta: store.add(&format!("{name}/beta"), Tensor::zeros([1, channels, 1, 1]), true),
            run_mean: store.add(
                &format!("{name}/run_mean"),
                Tensor::zeros([1, channels, 1, 1]),
                false,
            ),
            run_var: store.add(
                &format!("{name}/run_var"),
                Tensor::filled([1, channels, 1, 1], 1.0),
                false,
            ),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParameterStore,
        x: NodeId,
        train: bool,
    ) -> Result<NodeId> {
        let gamma = load(tape, store, self.gamma);
        let beta = load(tape, store, self.beta);
        let (xc, istd) = if train {
            let mu = tape.channel_mean(x);
            let xc = tape.sub(x, mu)?;
            let sq = tape.mul(xc, xc)?;
            let var = tape.channel_mean(sq);
            // fold batch stats into the running buffers
            let mu_v = tape.value(mu).clone();
            let var_v = tape.value(var).clone();
            let m = self.momentum;
            let mut rm = store.value(self.run_mean).clone();
            let mut rv = store.value(self.run_var).clone();
            for i in 0..rm.data.len() {
                rm.data[i] = (1.0 - m) * rm.data[i] + m * mu_v.data[i];
                rv.data[i] = (1.0 - m) * rv.data[i] + m * var_v.data[i];
            }
            store.set_value(self.run_mean, rm);
            store.set_value(self.run_var, rv);
            (xc, tape.rsqrt(var, self.eps))
        } else {
            let mu = tape.constant(store.value(self.run_mean).clone());
            let var = tape.constant(store.value(self.run_var).clone());
            let xc = tape.sub(x, mu)?;
            (xc, tape.rsqrt(var, self.eps))
        };
        let xhat = tape.mul(xc, istd)?;
        let scaled = tape.mul(xhat, gamma)?;
        tape.add(scaled, beta)
    }
}

/// Conv + BN + activation.
#[derive(Debug, Clone)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub act: Activation,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        groups: usize,
        act: Activation,
    ) -> Self {
        ConvBn {
            conv: Conv2d::new(store, rng, name, cin, cout, k, stride, groups, false),
            bn: BatchNorm::new(store, &format!("{name}/bn"), cout),
            act,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParameterStore,
        x: NodeId,
        train: bool,
    ) -> Result<NodeId> {
        let y = self.conv.forward(tape, store, x)?;
        let y = self.bn.forward(tape, store, y, train)?;
        Ok(activate(tape, y, self.act))
    }
}

/// Squeeze-excitation: global pool, bottlenecked MLP, sigmoid channel gate.
#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub reduce: Conv2d,
    pub expand: Conv2d,
}

impl SqueezeExcite {
    pub fn new(store: &mut ParameterStore, rng: &mut Rng, name: &str, channels: usize) -> Self {
        let hidden = (channels / 4).max(1);
        SqueezeExcite {
            reduce: Conv2d::new(store, rng, &format!("{name}/reduce"), channels, hidden, 1, 1, 1, true),
            expand: Conv2d::new(store, rng, &format!("{name}/expand"), hidden, channels, 1, 1, 1, true),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: NodeId) -> Result<NodeId> {
        let pooled = tape.global_avg_pool(x);
        let h = self.reduce.forward(tape, store, pooled)?;
        let h = tape.relu(h);
        let h = self.expand.forward(tape, store, h)?;
        let gate = tape.sigmoid(h);
        tape.mul(x, gate)
    }
}

/// Inverted-residual bottleneck: 1x1 expand, depthwise, optional SE, 1x1
/// project, residual when shapes allow.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    pub expand: Option<ConvBn>,
    pub depthwise: ConvBn,
    pub se: Option<SqueezeExcite>,
    pub project: ConvBn,
    pub residual: bool,
}

impl Bottleneck {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut Rng,
        name: &str,
        cin: usize,
        hidden: usize,
        cout: usize,
        k: usize,
        stride: usize,
        se: bool,
        act: Activation,
    ) -> Self {
        let expand = (hidden != cin).then(|| {
            ConvBn::new(store, rng, &format!("{name}/expand"), cin, hidden, 1, 1, 1, act)
        });
        let depthwise = ConvBn::new(
            store,
            rng,
            &format!("{name}/dw"),
            hidden,
            hidden,
            k,
            stride,
            hidden,
            act,
        );
        let se = se.then(|| SqueezeExcite::new(store, rng, &format!("{name}/se"), hidden));
        let project = ConvBn::new(
            store,
            rng,
            &format!("{name}/project"),
            hidden,
            cout,
            1,
            1,
            1,
            Activation::None,
        );
        Bottleneck {
            expand,
            depthwise,
            se,
            project,
            residual: stride == 1 && cin == cout,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParameterStore,
        x: NodeId,
        train: bool,
    ) -> Result<NodeId> {
        let mut h = x;
        if let Some(expand) = &self.expand {
            h = expand.forward(tape, store, h, train)?;
        }
        h = self.depthwise.forward(tape, store, h, train)?;
        if let Some(se) = &self.se {
            h = se.forward(tape, store, h)?;
        }
        h = self.project.forward(tape, store, h, train)?;
        if self.residual {
            h = tape.add(h, x)?;
        }
        Ok(h)
    }
}

/// Collects the distinct group names of a store, in first-seen order.
pub fn group_names(store: &ParameterStore) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for (id, _) in store.iter() {
        let g = store.group_of(id).to_string();
        if !names.contains(&g) {
            names.push(g);
        }
    }
    names
}

/// Asserts a well-formed error when two ids unexpectedly diverge; used by
/// weight-sharing tests and the trainer's post-run invariant check.
pub fn params_identical(store: &ParameterStore, a: ParamId, b: ParamId) -> bool {
    store.value(a) == store.value(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn stem_param_count() {
        // 3x3 conv 3->16 without bias plus BN scale/shift: 432 + 32.
        let mut store = ParameterStore::new();
        let mut rng = Rng::seed(1);
        let _ = ConvBn::new(&mut store, &mut rng, "stem", 3, 16, 3, 2, 1, Activation::HardSwish);
        assert_eq!(store.trainable_scalars(), 432 + 32);
    }

    #[test]
    fn batchnorm_normalizes_in_train_mode() {
        let mut store = ParameterStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        let mut tape = Tape::new();
        let mut rng = Rng::seed(5);
        let x = Tensor {
            shape: [2, 2, 3, 3],
            data: (0..36).map(|_| rng.normal() * 3.0 + 1.0).collect(),
        };
        let xid = tape.constant(x);
        let y = bn.forward(&mut tape, &mut store, xid, true).unwrap();
        let yv = tape.value(y);
        // per-channel mean ~0, var ~1
        for c in 0..2 {
            let mut mean = 0.0;
            let mut var = 0.0;
            for n in 0..2 {
                for h in 0..3 {
                    for w in 0..3 {
                        mean += yv.at(n, c, h, w);
                    }
                }
            }
            mean /= 18.0;
            for n in 0..2 {
                for h in 0..3 {
                    for w in 0..3 {
                        var += (yv.at(n, c, h, w) - mean) * (yv.at(n, c, h, w) - mean);
                    }
                }
            }
            var /= 18.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3);
        }
        // running stats moved away from init
        assert!(store.value(bn.run_mean).data.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn batchnorm_eval_uses_frozen_stats() {
        let mut store = ParameterStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled([1, 1, 2, 2], 3.0));
        // run_mean 0, run_var 1 -> y = 3/sqrt(1+eps)
        let y = bn.forward(&mut tape, &mut store, x, false).unwrap();
        let expect = 3.0 / libm::sqrt(1.0 + 1e-5);
        for &v in &tape.value(y).data {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn bottleneck_shapes_and_residual() {
        let mut store = ParameterStore::new();
        let mut rng = Rng::seed(2);
        let block = Bottleneck::new(
            &mut store,
            &mut rng,
            "b",
            8,
            16,
            8,
            3,
            1,
            true,
            Activation::Relu,
        );
        assert!(block.residual);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled([1, 8, 6, 6], 0.1));
        let y = block.forward(&mut tape, &mut store, x, true).unwrap();
        assert_eq!(tape.value(y).shape, [1, 8, 6, 6]);

        let strided = Bottleneck::new(
            &mut store,
            &mut rng,
            "b2",
            8,
            16,
            12,
            3,
            2,
            false,
            Activation::HardSwish,
        );
        assert!(!strided.residual);
        let y2 = strided.forward(&mut tape, &mut store, x, true).unwrap();
        assert_eq!(tape.value(y2).shape, [1, 12, 3, 3]);
    }

    #[test]
    fn zero_init_conv_is_identity_residual() {
        let mut store = ParameterStore::new();
        let conv = Conv2d::new_zeroed(&mut store, "fb", 4, 4, 1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled([1, 4, 3, 3], 0.7));
        let y = conv.forward(&mut tape, &store, x).unwrap();
        assert!(tape.value(y).data.iter().all(|&v| v == 0.0));
    }
}
