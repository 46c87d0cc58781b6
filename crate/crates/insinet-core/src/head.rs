//! Decoder and multi-scale aggregation head: branch predictions, attention
//! reinforcement of the main path, and the final logits.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::network::{CnfOutput, NetworkConfig};
use crate::nn::{Activation, Bottleneck, Conv2d, ParameterStore};
use crate::rng::Rng;

/// Gates the CNF's deep-supervised attention map by the branch prediction's
/// change-class probability. Both factors live in [0,1], so the result does
/// too.
pub fn mdsa_attention(tape: &mut Tape, cnf: &CnfOutput, branch_logits: NodeId) -> Result<NodeId> {
    let att_shape = tape.value(cnf.attention).shape;
    let b_shape = tape.value(branch_logits).shape;
    if att_shape[2] != b_shape[2] || att_shape[3] != b_shape[3] {
        return Err(Error::Shape(format!(
            "attention {:?} vs branch {:?}",
            att_shape, b_shape
        )));
    }
    let probs = tape.softmax_channels(branch_logits);
    let change_prob = tape.channel_slice(probs, 1, 2)?;
    tape.mul(cnf.attention, change_prob)
}

/// Residual attention gating: `skip * (1 + a)`, broadcast over channels.
/// Zero attention leaves the skip feature exactly unchanged.
pub fn reinforce(tape: &mut Tape, skip: NodeId, attention: NodeId) -> Result<NodeId> {
    let s = tape.value(skip).shape;
    let a = tape.value(attention).shape;
    if a[1] != 1 || a[0] != s[0] || a[2] != s[2] || a[3] != s[3] {
        return Err(Error::Shape(format!(
            "attention {:?} does not gate skip {:?}",
            a, s
        )));
    }
    let gate = tape.add_const(attention, 1.0);
    tape.mul(skip, gate)
}

/// U-shaped decoder over the reinforced skip features: starting from the
/// deepest scale, repeat {x2 bilinear upsample, concat skip, bottleneck}
/// up to the finest scale, then a 1x1 head to 2 classes and a final x2
/// upsample to patch resolution.
pub struct Decoder {
    blocks: Vec<Bottleneck>,
    head: Conv2d,
    patch_size: usize,
}

impl Decoder {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut Rng,
        name: &str,
        config: &NetworkConfig,
    ) -> Self {
        let widths = &config.channels;
        let n = widths.len();
        let mut blocks = Vec::new();
        let mut carried = widths[n - 1];
        for i in (0..n.saturating_sub(1)).rev() {
            let cin = carried + widths[i];
            blocks.push(Bottleneck::new(
                store,
                rng,
                &format!("{name}/up{i}"),
                cin,
                cin,
                widths[i],
                3,
                1,
                false,
                Activation::Relu,
            ));
            carried = widths[i];
        }
        Decoder {
            blocks,
            head: Conv2d::new(store, rng, &format!("{name}/head"), carried, 2, 1, 1, 1, true),
            patch_size: config.patch_size,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParameterStore,
        skips: &[NodeId],
        train: bool,
    ) -> Result<NodeId> {
        if skips.is_empty() {
            return Err(Error::Contract("decoder needs at least one skip".to_string()));
        }
        tape.set_scope("decoder");
        let n = skips.len();
        let mut x = skips[n - 1];
        for (bi, i) in (0..n - 1).rev().enumerate() {
            let [_, _, h, w] = tape.value(skips[i]).shape;
            let up = tape.bilinear_window(x, h, w, (0.0, 1.0, 0.0, 1.0))?;
            let cat = tape.concat_channels(&[up, skips[i]])?;
            x = self.blocks[bi].forward(tape, store, cat, train)?;
        }
        let logits = self.head.forward(tape, store, x)?;
        tape.bilinear_window(logits, self.patch_size, self.patch_size, (0.0, 1.0, 0.0, 1.0))
    }
}

/// Multi-scale aggregation: upsample every branch prediction to patch
/// resolution, concat with the main-path logits, then 1x1 and 3x3
/// convolutions down to the final 2-class logits.
pub struct Msa {
    mix: Conv2d,
    refine: Conv2d,
    num_branches: usize,
}

/// Hidden width between the two aggregation convolutions.
const MSA_HIDDEN: usize = 16;

impl Msa {
    pub fn new(store: &mut ParameterStore, rng: &mut Rng, name: &str, num_branches: usize) -> Self {
        let cin = 2 * (num_branches + 1);
        Msa {
            mix: Conv2d::new(store, rng, &format!("{name}/mix"), cin, MSA_HIDDEN, 1, 1, 1, true),
            refine: Conv2d::new(store, rng, &format!("{name}/refine"), MSA_HIDDEN, 2, 3, 1, 1, true),
            num_branches,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParameterStore,
        main_logits: NodeId,
        branch_logits: &[NodeId],
    ) -> Result<NodeId> {
        if branch_logits.len() != self.num_branches {
            return Err(Error::Contract(format!(
                "expected {} branch predictions, got {}",
                self.num_branches,
                branch_logits.len()
            )));
        }
        tape.set_scope("msa");
        let [_, _, h, w] = tape.value(main_logits).shape;
        let mut inputs = Vec::with_capacity(branch_logits.len() + 1);
        inputs.push(main_logits);
        for &b in branch_logits {
            inputs.push(tape.bilinear_window(b, h, w, (0.0, 1.0, 0.0, 1.0))?);
        }
        let cat = tape.concat_channels(&inputs)?;
        let hme = self.mix.forward(tape, store, cat)?;
        let hme = tape.relu(hme);
        self.refine.forward(tape, store, hme)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn reinforce_identity_and_doubling() {
        let mut tape = Tape::new();
        let skip = tape.constant(Tensor::filled([1, 3, 4, 4], 2.5));
        let zero = tape.constant(Tensor::zeros([1, 1, 4, 4]));
        let one = tape.constant(Tensor::filled([1, 1, 4, 4], 1.0));
        let same = reinforce(&mut tape, skip, zero).unwrap();
        assert_eq!(tape.value(same).data, tape.value(skip).data);
        let doubled = reinforce(&mut tape, skip, one).unwrap();
        assert!(tape.value(doubled).data.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn reinforce_matches_elementwise_oracle() {
        let mut rng = Rng::seed(3);
        let skip_t = Tensor {
            shape: [1, 2, 3, 3],
            data: (0..18).map(|_| rng.normal()).collect(),
        };
        let att_t = Tensor {
            shape: [1, 1, 3, 3],
            data: (0..9).map(|_| rng.uniform()).collect(),
        };
        let mut tape = Tape::new();
        let skip = tape.constant(skip_t.clone());
        let att = tape.constant(att_t.clone());
        let out = reinforce(&mut tape, skip, att).unwrap();
        for c in 0..2 {
            for h in 0..3 {
                for w in 0..3 {
                    let expect = skip_t.at(0, c, h, w) * (1.0 + att_t.at(0, 0, h, w));
                    assert!((tape.value(out).at(0, c, h, w) - expect).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn mdsa_product_bound() {
        let mut rng = Rng::seed(6);
        let mut tape = Tape::new();
        let att_t = Tensor {
            shape: [1, 1, 4, 4],
            data: (0..16).map(|_| rng.uniform()).collect(),
        };
        let att = tape.constant(att_t.clone());
        let cnf = CnfOutput {
            fused: att,
            attention: att,
        };
        let branch_t = Tensor {
            shape: [1, 2, 4, 4],
            data: (0..32).map(|_| rng.normal()).collect(),
        };
        let branch = tape.constant(branch_t.clone());
        let a = mdsa_attention(&mut tape, &cnf, branch).unwrap();
        for px in 0..16 {
            let (h, w) = (px / 4, px % 4);
            let l0 = branch_t.at(0, 0, h, w);
            let l1 = branch_t.at(0, 1, h, w);
            let p1 = 1.0 / (1.0 + libm::exp(l0 - l1));
            let v = tape.value(a).at(0, 0, h, w);
            assert!(v <= att_t.at(0, 0, h, w).min(p1) + 1e-12);
            assert!((v - att_t.at(0, 0, h, w) * p1).abs() < 1e-12);
        }
    }

    #[test]
    fn msa_rejects_wrong_branch_count() {
        let mut store = ParameterStore::new();
        let mut rng = Rng::seed(1);
        let msa = Msa::new(&mut store, &mut rng, "msa", 4);
        let mut tape = Tape::new();
        let main = tape.constant(Tensor::zeros([1, 2, 8, 8]));
        let b = tape.constant(Tensor::zeros([1, 2, 4, 4]));
        assert!(matches!(
            msa.forward(&mut tape, &mut store, main, &[b]),
            Err(Error::Contract(_))
        ));
    }
}
