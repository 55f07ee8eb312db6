//! Species dependency graph and decomposition into subsystems.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{ModelError, OdeModel};

/// Directed graph with an edge `x -> y` whenever species `x` appears in the
/// right-hand side of species `y`. Self-loops are kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    nodes: Vec<String>,
    edges: BTreeSet<(usize, usize)>,
}

impl DependencyGraph {
    pub fn of(model: &OdeModel) -> Self {
        let mut edges = BTreeSet::new();
        for (y, e) in model.rhs().iter().enumerate() {
            for sym in e.symbols() {
                if let Some(x) = model.species_index(sym) {
                    edges.insert((x, y));
                }
            }
        }
        Self {
            nodes: model.species_names(),
            edges,
        }
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    /// Edges as `(from, to)` name pairs, ordered by index.
    pub fn edges(&self) -> Vec<(&str, &str)> {
        self.edges
            .iter()
            .map(|&(a, b)| (self.nodes[a].as_str(), self.nodes[b].as_str()))
            .collect()
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        match (
            self.nodes.iter().position(|n| n == from),
            self.nodes.iter().position(|n| n == to),
        ) {
            (Some(a), Some(b)) => self.edges.contains(&(a, b)),
            _ => false,
        }
    }

    pub fn is_weakly_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(a, b) in &self.edges {
                let next = if a == v {
                    b
                } else if b == v {
                    a
                } else {
                    continue;
                };
                if !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// One unit of a decomposition: the species it simulates, the parameters it
/// estimates and the species it reads as exogenous inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsystemSpec {
    pub owned_species: Vec<String>,
    pub local_parameters: Vec<String>,
    pub input_species: Vec<String>,
    #[serde(skip)]
    pub(crate) owned_idx: Vec<usize>,
    #[serde(skip)]
    pub(crate) param_idx: Vec<usize>,
    #[serde(skip)]
    pub(crate) input_idx: Vec<usize>,
}

impl SubsystemSpec {
    fn build(model: &OdeModel, mut owned: Vec<usize>) -> Self {
        owned.sort_unstable();
        let mut params = BTreeSet::new();
        let mut inputs = BTreeSet::new();
        for &y in &owned {
            for sym in model.rhs()[y].symbols() {
                if let Some(i) = model.parameter_index(sym) {
                    params.insert(i);
                } else if let Some(x) = model.species_index(sym) {
                    if !owned.contains(&x) {
                        inputs.insert(x);
                    }
                }
            }
        }
        let species = model.species();
        let parameters = model.parameters();
        Self {
            owned_species: owned.iter().map(|&i| species[i].name.clone()).collect(),
            local_parameters: params.iter().map(|&i| parameters[i].name.clone()).collect(),
            input_species: inputs.iter().map(|&i| species[i].name.clone()).collect(),
            owned_idx: owned,
            param_idx: params.into_iter().collect(),
            input_idx: inputs.into_iter().collect(),
        }
    }

    /// The whole model as a single subsystem with no inputs.
    pub fn whole(model: &OdeModel) -> Self {
        Self::build(model, (0..model.species().len()).collect())
    }

    /// Restore index caches after deserialization.
    pub fn bind(&self, model: &OdeModel) -> Result<Self, ModelError> {
        let owned = self
            .owned_species
            .iter()
            .map(|s| model.species_index(s).ok_or_else(|| ModelError::UnknownSpecies(s.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::build(model, owned))
    }

    pub fn owned_indices(&self) -> &[usize] {
        &self.owned_idx
    }

    pub fn parameter_indices(&self) -> &[usize] {
        &self.param_idx
    }

    pub fn input_indices(&self) -> &[usize] {
        &self.input_idx
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecomposeError {
    #[error("unknown species `{0}` in grouping")]
    UnknownSpecies(String),
    #[error("species `{0}` appears in more than one group")]
    Overlap(String),
    #[error("species `{0}` is not covered by the grouping")]
    Uncovered(String),
    #[error("grouping contains an empty group")]
    EmptyGroup,
}

/// Split `model` into subsystems. Without a grouping every species forms its
/// own subsystem; a grouping must partition the species set.
pub fn decompose(
    model: &OdeModel,
    grouping: Option<&[Vec<String>]>,
) -> Result<Vec<SubsystemSpec>, DecomposeError> {
    let n = model.species().len();
    let groups: Vec<Vec<usize>> = match grouping {
        None => (0..n).map(|i| vec![i]).collect(),
        Some(groups) => {
            let mut owner = vec![false; n];
            let mut out = Vec::with_capacity(groups.len());
            for g in groups {
                if g.is_empty() {
                    return Err(DecomposeError::EmptyGroup);
                }
                let mut idx = Vec::with_capacity(g.len());
                for s in g {
                    let i = model
                        .species_index(s)
                        .ok_or_else(|| DecomposeError::UnknownSpecies(s.clone()))?;
                    if owner[i] {
                        return Err(DecomposeError::Overlap(s.clone()));
                    }
                    owner[i] = true;
                    idx.push(i);
                }
                out.push(idx);
            }
            if let Some(i) = owner.iter().position(|o| !o) {
                return Err(DecomposeError::Uncovered(model.species()[i].name.clone()));
            }
            out
        }
    };
    Ok(groups
        .into_iter()
        .map(|g| SubsystemSpec::build(model, g))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_model;

    fn fig1() -> OdeModel {
        parse_model(
            "species A = 1; species B = 0; species C = 0; species D = 0; species E = 0;\n\
             param a in [0,1]; param b in [0,1]; param c in [0,1]; param d in [0,1]; param e in [0,1];\n\
             d(A) = -a;\n\
             d(B) = b*A;\n\
             d(C) = c*A;\n\
             d(D) = d*A;\n\
             d(E) = e*C*D;\n",
        )
        .unwrap()
    }

    #[test]
    fn figure_one_edges() {
        let g = DependencyGraph::of(&fig1());
        let edges: BTreeSet<_> = g.edges().into_iter().collect();
        let expected: BTreeSet<_> = [("A", "B"), ("A", "C"), ("A", "D"), ("C", "E"), ("D", "E")]
            .into_iter()
            .collect();
        assert_eq!(edges, expected);
        assert!(g.is_weakly_connected());
    }

    #[test]
    fn decoupled_model_has_only_self_loops() {
        let m = parse_model(
            "species X = 1; species Y = 1; param k in [0,1]; param c in [0,1]; d(X) = -k*X; d(Y) = -c*Y;",
        )
        .unwrap();
        let g = DependencyGraph::of(&m);
        assert_eq!(g.edges(), vec![("X", "X"), ("Y", "Y")]);
        assert!(!g.is_weakly_connected());
    }

    #[test]
    fn figure_one_subsystem_inputs() {
        let subs = decompose(&fig1(), None).unwrap();
        assert_eq!(subs.len(), 5);
        assert!(subs[0].input_species.is_empty());
        assert_eq!(subs[1].input_species, vec!["A"]);
        assert_eq!(subs[4].input_species, vec!["C", "D"]);
        assert_eq!(subs[4].local_parameters, vec!["e"]);
    }

    #[test]
    fn isolated_species_has_no_inputs() {
        let m = parse_model("species X = 1; param k in [0,1]; d(X) = -k*X;").unwrap();
        let subs = decompose(&m, None).unwrap();
        assert_eq!(subs.len(), 1);
        assert!(subs[0].input_species.is_empty());
        assert_eq!(subs[0].owned_species, vec!["X"]);
    }

    #[test]
    fn grouping_must_partition() {
        let m = fig1();
        let g = |v: &[&[&str]]| -> Vec<Vec<String>> {
            v.iter().map(|g| g.iter().map(|s| s.to_string()).collect()).collect()
        };
        assert!(matches!(
            decompose(&m, Some(&g(&[&["A", "B"], &["B", "C", "D", "E"]]))),
            Err(DecomposeError::Overlap(_))
        ));
        assert!(matches!(
            decompose(&m, Some(&g(&[&["A", "B"], &["C", "D"]]))),
            Err(DecomposeError::Uncovered(s)) if s == "E"
        ));
        assert!(matches!(
            decompose(&m, Some(&g(&[&["A", "Q"]]))),
            Err(DecomposeError::UnknownSpecies(_))
        ));
        let subs = decompose(&m, Some(&g(&[&["A", "B"], &["C", "D", "E"]]))).unwrap();
        assert_eq!(subs[1].input_species, vec!["A"]);
        assert_eq!(subs[1].owned_species, vec!["C", "D", "E"]);
    }
}
