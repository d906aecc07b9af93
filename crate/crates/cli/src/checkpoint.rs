//! Checkpoint format: genotype + network configuration + every store entry
//! as JSON. Rebuilding constructs the same store layout and overwrites the
//! tensors, so a reloaded network is value-identical to the saved one.

use std::path::Path;

use serde::{Deserialize, Serialize};

use bnas_core::evalnet::{build_eval_network, EvalNetConfig, EvalNetwork};
use bnas_core::genotype::Genotype;
use bnas_core::tape::ParamKind;
use bnas_core::tensor::Tensor;

use crate::Failure;

#[derive(Serialize, Deserialize)]
struct StoredParam {
    shape: Vec<usize>,
    kind: String,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub genotype: Genotype,
    pub net: EvalNetConfig,
    pub seed: u64,
    params: Vec<StoredParam>,
}

fn kind_tag(kind: ParamKind) -> &'static str {
    match kind {
        ParamKind::Weight => "weight",
        ParamKind::Arch => "arch",
        ParamKind::Buffer => "buffer",
    }
}

impl Checkpoint {
    pub fn capture(net: &EvalNetwork, seed: u64) -> Checkpoint {
        let params = net
            .store
            .entries()
            .map(|(_, tensor, kind)| StoredParam {
                shape: tensor.shape().to_vec(),
                kind: kind_tag(kind).into(),
                data: tensor.data().to_vec(),
            })
            .collect();
        Checkpoint { genotype: net.genotype.clone(), net: net.config, seed, params }
    }

    pub fn save(&self, path: &Path) -> Result<(), Failure> {
        let text = serde_json::to_string(self)
            .map_err(|e| Failure::Runtime(format!("checkpoint serialization: {}", e)))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Runtime(format!("cannot read {}: {}", path.display(), e)))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::Runtime(format!("malformed checkpoint {}: {}", path.display(), e)))
    }

    /// Rebuilds the network and restores every parameter.
    pub fn restore(&self) -> Result<EvalNetwork, Failure> {
        let mut rng = bnas_core::seed_rng(self.seed);
        let mut net = build_eval_network(&self.genotype, &self.net, &mut rng)?;
        let ids: Vec<_> = net.store.entries().map(|(id, _, _)| id).collect();
        if ids.len() != self.params.len() {
            return Err(Failure::Runtime(format!(
                "checkpoint has {} entries, network expects {}",
                self.params.len(),
                ids.len()
            )));
        }
        for (id, stored) in ids.into_iter().zip(&self.params) {
            if net.store.get(id).shape() != stored.shape.as_slice() {
                return Err(Failure::Runtime(format!(
                    "checkpoint entry shape {:?} does not match network shape {:?}",
                    stored.shape,
                    net.store.get(id).shape()
                )));
            }
            let tensor = Tensor::new(stored.shape.clone(), stored.data.clone())?;
            let keep_flag = net.store.get(id).requires_grad();
            *net.store.get_mut(id) = tensor;
            net.store.get_mut(id).set_requires_grad(keep_flag);
        }
        Ok(net)
    }
}
