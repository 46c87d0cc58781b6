//! Efficiency accounting: trainable parameter counts from the parameter
//! store (shared tensors count once by construction) and multiply-accumulate
//! counts read from the tape ledger of an actual inference pass — so the
//! totals describe the implementation as it runs, not a separate formula.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::network::{BatchInput, Model};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfficiencyReport {
    /// Trainable scalars.
    pub params: u64,
    /// Multiply-accumulates of one inference forward pass at the probed
    /// input size, batch 1.
    pub macs: u64,
    pub input_size: usize,
    pub params_by_group: Vec<(String, u64)>,
    pub macs_by_scope: Vec<(String, u64)>,
}

/// Counts trainable scalars, total and per top-level module group.
pub fn count_params(model: &Model) -> (u64, Vec<(String, u64)>) {
    let mut by_group: Vec<(String, u64)> = Vec::new();
    for (id, p) in model.store.iter() {
        if !p.trainable {
            continue;
        }
        let group = model.store.group_of(id).to_string();
        let n = p.value.len() as u64;
        match by_group.iter_mut().find(|(g, _)| *g == group) {
            Some(entry) => entry.1 += n,
            None => by_group.push((group, n)),
        }
    }
    let total = by_group.iter().map(|(_, n)| n).sum();
    (total, by_group)
}

/// Runs one batch-1 inference forward pass at `input_size` and reads the
/// multiply-accumulate ledger off the tape.
pub fn count_macs(model: &mut Model, input_size: usize) -> Result<(u64, Vec<(String, u64)>)> {
    let zeros = || Tensor::zeros([1, 3, input_size, input_size]);
    let input = BatchInput {
        center_t1: zeros(),
        center_t2: zeros(),
        neigh_t1: model.components.quadruple.then(zeros),
        neigh_t2: model.components.quadruple.then(zeros),
    };
    let (tape, _) = model.forward(&input, false)?;
    Ok((tape.total_macs(), tape.mac_ledger.clone()))
}

/// Full efficiency report at a probe input size.
pub fn profile(model: &mut Model, input_size: usize) -> Result<EfficiencyReport> {
    let (params, params_by_group) = count_params(model);
    let (macs, macs_by_scope) = count_macs(model, input_size)?;
    Ok(EfficiencyReport {
        params,
        macs,
        input_size,
        params_by_group,
        macs_by_scope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Components, NetworkConfig};

    #[test]
    fn tiny_model_params_match_store() {
        let model = Model::new(NetworkConfig::tiny(16), Components::full()).unwrap();
        let (total, by_group) = count_params(&model);
        assert_eq!(total, model.store.trainable_scalars() as u64);
        assert_eq!(total, by_group.iter().map(|(_, n)| n).sum::<u64>());
        assert!(by_group.len() > 1);
    }

    #[test]
    fn macs_scale_quadratically_with_input() {
        let mut model = Model::new(NetworkConfig::tiny(16), Components::full()).unwrap();
        let (m16, _) = count_macs(&mut model, 16).unwrap();
        let mut model32 = Model::new(NetworkConfig::tiny(32), Components::full()).unwrap();
        let (m32, _) = count_macs(&mut model32, 32).unwrap();
        assert!(m16 > 0);
        // doubling the side roughly quadruples the conv work
        let ratio = m32 as f64 / m16 as f64;
        assert!((3.0..5.0).contains(&ratio), "ratio {}", ratio);
    }

    #[test]
    fn removing_components_reduces_both_counters() {
        let mut full = Model::new(NetworkConfig::tiny(16), Components::full()).unwrap();
        let mut base = Model::new(NetworkConfig::tiny(16), Components::baseline()).unwrap();
        let full_report = profile(&mut full, 16).unwrap();
        let base_report = profile(&mut base, 16).unwrap();
        assert!(base_report.params < full_report.params);
        assert!(base_report.macs < full_report.macs);
    }
}
