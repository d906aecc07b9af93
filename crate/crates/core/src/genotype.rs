//! Discrete architecture description and its extraction from the logits.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cell::{edge_list, ArchParams, EdgeAlpha};
use crate::error::{Error, Result};
use crate::space::OpKind;

/// A searched cell pair: `(op, input_node)` edges, two per intermediate
/// node, for the normal and reduction cells, plus the concatenated nodes.
///
/// The serialized form is JSON, e.g.
/// `{"normal": [["gconv_5x5", 0], ...], "reduce": [...], "concat": [2,3,4,5]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genotype {
    pub normal: Vec<(OpKind, usize)>,
    pub reduce: Vec<(OpKind, usize)>,
    pub concat: Vec<usize>,
}

impl Genotype {
    /// Intermediate nodes per cell.
    pub fn n_nodes(&self) -> usize {
        self.normal.len() / 2
    }

    /// Structural validation: two incoming edges per node, inputs strictly
    /// before the node, no zero ops, a sane concat list.
    pub fn validate(&self) -> Result<()> {
        if self.normal.is_empty() || self.reduce.is_empty() {
            return Err(Error::Genotype("empty cell description".into()));
        }
        if self.normal.len() % 2 != 0 || self.reduce.len() != self.normal.len() {
            return Err(Error::Genotype(format!(
                "cells need two edges per node and matching sizes, got {} and {}",
                self.normal.len(),
                self.reduce.len()
            )));
        }
        let n_nodes = self.n_nodes();
        for (name, table) in [("normal", &self.normal), ("reduce", &self.reduce)] {
            for (pair_idx, (op, input)) in table.iter().enumerate() {
                let node = 2 + pair_idx / 2;
                if *op == OpKind::Zero {
                    return Err(Error::Genotype(format!(
                        "{} cell carries a zero op at node {}",
                        name, node
                    )));
                }
                if *input >= node {
                    return Err(Error::Genotype(format!(
                        "{} cell node {} reads from node {}, inputs must come earlier",
                        name, node, input
                    )));
                }
            }
        }
        if self.concat.is_empty() {
            return Err(Error::Genotype("empty concat list".into()));
        }
        for &c in &self.concat {
            if c < 2 || c >= 2 + n_nodes {
                return Err(Error::Genotype(format!(
                    "concat node {} outside 2..{}",
                    c,
                    2 + n_nodes
                )));
            }
        }
        Ok(())
    }

    /// Fraction of edge slots holding one of the listed kinds.
    pub fn fraction_of(&self, kinds: &[OpKind]) -> f64 {
        let total = self.normal.len() + self.reduce.len();
        let hits = self
            .normal
            .iter()
            .chain(&self.reduce)
            .filter(|(op, _)| kinds.contains(op))
            .count();
        hits as f64 / total as f64
    }

    /// A bundled reference cell pair in the style the search settles on at
    /// scale: 5x5-dominated shallow normal cell, wider reduction cell with
    /// one parameter-free path.
    pub fn reference() -> Genotype {
        use OpKind::*;
        Genotype {
            normal: vec![
                (GConv5, 0),
                (GConv5, 1),
                (GConv5, 1),
                (DilGConv5, 0),
                (GConv5, 0),
                (GConv5, 2),
                (DilGConv5, 1),
                (GConv5, 3),
            ],
            reduce: vec![
                (GConv5, 0),
                (GConv5, 1),
                (GConv5, 0),
                (GConv5, 1),
                (GConv5, 1),
                (Identity, 2),
                (GConv5, 0),
                (GConv5, 1),
            ],
            concat: vec![2, 3, 4, 5],
        }
    }
}

/// Serializes a genotype to its JSON text form.
pub fn serialize(genotype: &Genotype) -> String {
    serde_json::to_string_pretty(genotype).expect("genotype serialization cannot fail")
}

/// Parses and validates genotype text; errors carry position information
/// from the JSON parser or the offending token/field.
pub fn parse(text: &str) -> Result<Genotype> {
    let genotype: Genotype =
        serde_json::from_str(text).map_err(|e| Error::Genotype(format!("{}", e)))?;
    genotype.validate()?;
    Ok(genotype)
}

/// Extracts the discrete cells: per node, keep the two incoming edges whose
/// best non-zero op probability is highest, each with that op.
///
/// Ties break on the lower edge index, then on op enumeration order. The
/// ranking uses `softmax(alpha / T)` per edge, so it is invariant both to a
/// per-edge logit shift and to jointly scaling all logits and T.
pub fn derive_genotype(arch: &ArchParams) -> Result<Genotype> {
    arch.validate()?;
    let normal = derive_cell(&arch.normal, arch.t_normal)?;
    let reduce = derive_cell(&arch.reduce, arch.t_reduce)?;
    let n_nodes = normal.len() / 2;
    let genotype = Genotype { normal, reduce, concat: (2..2 + n_nodes).collect() };
    genotype.validate()?;
    Ok(genotype)
}

fn derive_cell(table: &[EdgeAlpha], temp: f64) -> Result<Vec<(OpKind, usize)>> {
    let n_nodes = (0..=8usize)
        .find(|n| crate::cell::edge_count(*n) == table.len())
        .ok_or_else(|| Error::Invalid(format!("{} edges is not a cell topology", table.len())))?;
    let edges = edge_list(n_nodes);
    let mut out = Vec::with_capacity(2 * n_nodes);
    let mut edge_idx = 0usize;
    for node in 0..n_nodes {
        let incoming = 2 + node;
        if incoming < 2 {
            return Err(Error::Invalid("a node needs at least two candidate edges".into()));
        }
        // (score, edge index within cell, input node, best op)
        let mut ranked: Vec<(f64, usize, usize, OpKind)> = Vec::with_capacity(incoming);
        for k in 0..incoming {
            let edge = &table[edge_idx + k];
            let probs = crate::cell::softmax_scaled(&edge.logits, temp);
            let mut best: Option<(f64, OpKind)> = None;
            for (op, &p) in edge.ops.iter().zip(&probs) {
                if *op == OpKind::Zero {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bp, bop)) => p > bp || (p == bp && op.index() < bop.index()),
                };
                if better {
                    best = Some((p, *op));
                }
            }
            let (score, op) = best.ok_or_else(|| {
                Error::Invalid("an edge offers no non-zero candidate op".into())
            })?;
            ranked.push((score, edge_idx + k, edges[edge_idx + k].0, op));
        }
        ranked.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).expect("finite scores").then(a.1.cmp(&b.1))
        });
        let mut chosen: Vec<(usize, usize, OpKind)> =
            ranked[..2].iter().map(|&(_, e, input, op)| (e, input, op)).collect();
        chosen.sort_by_key(|&(e, _, _)| e);
        for (_, input, op) in chosen {
            out.push((op, input));
        }
        edge_idx += incoming;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::edge_count;
    use rand::Rng;
    use rand::SeedableRng;

    fn flat_arch(n_nodes: usize) -> ArchParams {
        let edges = edge_count(n_nodes);
        let edge = EdgeAlpha { ops: OpKind::ALL.to_vec(), logits: vec![0.0; 8] };
        ArchParams {
            normal: vec![edge.clone(); edges],
            reduce: vec![edge; edges],
            t_normal: 0.2,
            t_reduce: 0.15,
        }
    }

    #[test]
    fn engineered_winner_appears_in_the_genotype() {
        let mut arch = flat_arch(4);
        // Edge 0 is (0 -> 2); push gconv_5x5 to a 0.9 mixing weight there.
        let idx = OpKind::GConv5.index();
        arch.normal[0].logits[idx] = 3.0 * arch.t_normal;
        let g = derive_genotype(&arch).unwrap();
        assert!(g.normal[..2].contains(&(OpKind::GConv5, 0)));
    }

    #[test]
    fn identity_mass_yields_all_skip_cells() {
        let mut arch = flat_arch(4);
        for edge in arch.normal.iter_mut().chain(arch.reduce.iter_mut()) {
            for (op, logit) in edge.ops.iter().zip(edge.logits.iter_mut()) {
                *logit = match op {
                    OpKind::Zero => 50.0,
                    OpKind::Identity => 40.0,
                    _ => 0.0,
                };
            }
        }
        // Zero dominates the mixture but never enters the genotype; identity
        // is the best non-zero op everywhere.
        let g = derive_genotype(&arch).unwrap();
        assert!(g.normal.iter().all(|(op, _)| *op == OpKind::Identity));
        assert!(g.reduce.iter().all(|(op, _)| *op == OpKind::Identity));
    }

    #[test]
    fn derivation_is_shift_and_joint_scale_invariant() {
        let mut rng = crate::SeedRng::seed_from_u64(12);
        let mut arch = flat_arch(4);
        for edge in arch.normal.iter_mut().chain(arch.reduce.iter_mut()) {
            for logit in edge.logits.iter_mut() {
                *logit = rng.random_range(-1.0..1.0);
            }
        }
        let base = derive_genotype(&arch).unwrap();

        let mut shifted = arch.clone();
        for edge in shifted.normal.iter_mut().chain(shifted.reduce.iter_mut()) {
            for logit in edge.logits.iter_mut() {
                *logit += 7.5;
            }
        }
        assert_eq!(derive_genotype(&shifted).unwrap(), base);

        let mut scaled = arch.clone();
        let c = 3.0;
        for edge in scaled.normal.iter_mut().chain(scaled.reduce.iter_mut()) {
            for logit in edge.logits.iter_mut() {
                *logit *= c;
            }
        }
        scaled.t_normal *= c;
        scaled.t_reduce *= c;
        assert_eq!(derive_genotype(&scaled).unwrap(), base);
    }

    #[test]
    fn serialize_parse_round_trip() {
        let mut rng = crate::SeedRng::seed_from_u64(33);
        for _ in 0..50 {
            let mut arch = flat_arch(4);
            for edge in arch.normal.iter_mut().chain(arch.reduce.iter_mut()) {
                for logit in edge.logits.iter_mut() {
                    *logit = rng.random_range(-2.0..2.0);
                }
            }
            let g = derive_genotype(&arch).unwrap();
            assert_eq!(parse(&serialize(&g)).unwrap(), g);
        }
    }

    #[test]
    fn unknown_token_is_named_in_the_error() {
        let text = r#"{"normal": [["conv_7x7", 0], ["gconv_3x3", 1]], "reduce": [["gconv_3x3", 0], ["gconv_3x3", 1]], "concat": [2]}"#;
        let err = parse(text).unwrap_err();
        let msg = format!("{}", err);
        assert!(msg.contains("conv_7x7"), "{}", msg);
    }

    #[test]
    fn empty_normal_list_is_rejected() {
        let text = r#"{"normal": [], "reduce": [], "concat": [2]}"#;
        assert!(parse(text).is_err());
    }

    #[test]
    fn zero_token_is_rejected() {
        let text = r#"{"normal": [["zero", 0], ["gconv_3x3", 1]], "reduce": [["gconv_3x3", 0], ["gconv_3x3", 1]], "concat": [2]}"#;
        let err = parse(text).unwrap_err();
        assert!(format!("{}", err).contains("zero"));
    }

    #[test]
    fn reference_genotype_is_valid_and_conv_heavy() {
        let g = Genotype::reference();
        g.validate().unwrap();
        assert!(g.fraction_of(&[OpKind::GConv5, OpKind::DilGConv5]) > 0.8);
        assert_eq!(parse(&serialize(&g)).unwrap(), g);
    }
}
