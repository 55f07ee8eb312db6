//! ODE model intermediate representation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::expr::{EvalFault, Expr, Program};

/// Name of the free time variable usable in any right-hand side.
pub const TIME_SYMBOL: &str = "t";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub name: String,
    pub initial: f64,
}

/// A free parameter with its uniform prior box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDecl {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub true_value: Option<f64>,
}

impl ParameterDecl {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    pub(crate) fn check_bounds(&self) -> Result<(), String> {
        if !(self.lower.is_finite() && self.upper.is_finite()) {
            return Err("bounds must be finite".into());
        }
        if self.lower >= self.upper {
            return Err(format!("lower {} >= upper {}", self.lower, self.upper));
        }
        if let Some(v) = self.true_value {
            if !self.contains(v) {
                return Err(format!(
                    "true value {v} outside [{}, {}]",
                    self.lower, self.upper
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("duplicate declaration of `{0}`")]
    Duplicate(String),
    #[error("undefined symbol `{symbol}` in equation for `{species}`")]
    UndefinedSymbol { species: String, symbol: String },
    #[error("no equation given for species `{0}`")]
    MissingEquation(String),
    #[error("{count} equations for {species} species")]
    EquationCount { count: usize, species: usize },
    #[error("invalid bounds for `{name}`: {message}")]
    Bound { name: String, message: String },
    #[error("initial value of `{name}` must be finite and non-negative, got {value}")]
    InitialValue { name: String, value: f64 },
    #[error("division by zero in equation for `{0}`")]
    DivisionByZero(String),
    #[error("no value supplied for symbol `{0}`")]
    MissingSymbol(String),
    #[error("unknown species `{0}`")]
    UnknownSpecies(String),
    #[error("expression too deep in equation for `{0}`")]
    TooDeep(String),
}

/// A validated kinetic model. Immutable after construction.
///
/// Evaluation uses a flat slot buffer laid out as
/// `[species..., parameters..., t]`.
#[derive(Debug, Clone)]
pub struct OdeModel {
    name: String,
    species: Vec<Species>,
    parameters: Vec<ParameterDecl>,
    rhs: Vec<Expr>,
    programs: Vec<Program>,
}

impl PartialEq for OdeModel {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.species == other.species
            && self.parameters == other.parameters
            && self.rhs == other.rhs
    }
}

impl OdeModel {
    pub fn new(
        name: String,
        species: Vec<Species>,
        parameters: Vec<ParameterDecl>,
        rhs: Vec<Expr>,
    ) -> Result<Self, ModelError> {
        if rhs.len() != species.len() {
            return Err(ModelError::EquationCount {
                count: rhs.len(),
                species: species.len(),
            });
        }
        let mut names: Vec<&str> = Vec::with_capacity(species.len() + parameters.len());
        for n in species
            .iter()
            .map(|s| s.name.as_str())
            .chain(parameters.iter().map(|p| p.name.as_str()))
        {
            if n == TIME_SYMBOL || names.contains(&n) {
                return Err(ModelError::Duplicate(n.to_string()));
            }
            names.push(n);
        }
        for s in &species {
            if !(s.initial.is_finite() && s.initial >= 0.0) {
                return Err(ModelError::InitialValue {
                    name: s.name.clone(),
                    value: s.initial,
                });
            }
        }
        for p in &parameters {
            p.check_bounds().map_err(|message| ModelError::Bound {
                name: p.name.clone(),
                message,
            })?;
        }
        let time_slot = names.len();
        let resolve = |s: &str| {
            if s == TIME_SYMBOL {
                Some(time_slot)
            } else {
                names.iter().position(|n| *n == s)
            }
        };
        let mut programs = Vec::with_capacity(rhs.len());
        for (e, s) in rhs.iter().zip(&species) {
            let prog = e.compile(&resolve).map_err(|err| match err {
                crate::expr::CompileError::Unresolved(symbol) => ModelError::UndefinedSymbol {
                    species: s.name.clone(),
                    symbol,
                },
                crate::expr::CompileError::TooDeep => ModelError::TooDeep(s.name.clone()),
            })?;
            programs.push(prog);
        }
        Ok(Self {
            name,
            species,
            parameters,
            rhs,
            programs,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn species(&self) -> &[Species] {
        &self.species
    }

    pub fn parameters(&self) -> &[ParameterDecl] {
        &self.parameters
    }

    pub fn rhs(&self) -> &[Expr] {
        &self.rhs
    }

    pub fn species_names(&self) -> Vec<String> {
        self.species.iter().map(|s| s.name.clone()).collect()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.parameters.iter().map(|p| p.name.clone()).collect()
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s.name == name)
    }

    pub fn parameter_index(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.species.iter().map(|s| s.initial).collect()
    }

    /// True parameter values, when every parameter declares one.
    pub fn true_parameters(&self) -> Option<Vec<f64>> {
        self.parameters.iter().map(|p| p.true_value).collect()
    }

    pub(crate) fn slot_count(&self) -> usize {
        self.species.len() + self.parameters.len() + 1
    }

    pub(crate) fn param_slot(&self, i: usize) -> usize {
        self.species.len() + i
    }

    pub(crate) fn time_slot(&self) -> usize {
        self.species.len() + self.parameters.len()
    }

    /// Evaluate the derivative of species `idx` from a filled slot buffer.
    #[inline]
    pub(crate) fn eval_species(&self, idx: usize, slots: &[f64]) -> Result<f64, ModelError> {
        self.programs[idx].eval(slots).map_err(|e| match e {
            EvalFault::DivisionByZero => ModelError::DivisionByZero(self.species[idx].name.clone()),
        })
    }

    /// Derivatives of the species in `state`, with other referenced species
    /// read from `inputs`. Returned in model species order.
    pub fn eval_rhs(
        &self,
        state: &BTreeMap<String, f64>,
        inputs: &BTreeMap<String, f64>,
        params: &BTreeMap<String, f64>,
        t: f64,
    ) -> Result<Vec<(String, f64)>, ModelError> {
        for k in state.keys().chain(inputs.keys()) {
            if self.species_index(k).is_none() {
                return Err(ModelError::UnknownSpecies(k.clone()));
            }
        }
        let mut slots = vec![f64::NAN; self.slot_count()];
        let mut filled = vec![false; self.slot_count()];
        for (i, s) in self.species.iter().enumerate() {
            if let Some(v) = state.get(&s.name).or_else(|| inputs.get(&s.name)) {
                slots[i] = *v;
                filled[i] = true;
            }
        }
        for (i, p) in self.parameters.iter().enumerate() {
            if let Some(v) = params.get(&p.name) {
                slots[self.param_slot(i)] = *v;
                filled[self.param_slot(i)] = true;
            }
        }
        slots[self.time_slot()] = t;
        filled[self.time_slot()] = true;

        let mut out = Vec::with_capacity(state.len());
        for (i, s) in self.species.iter().enumerate() {
            if !state.contains_key(&s.name) {
                continue;
            }
            for sym in self.rhs[i].symbols() {
                let slot = if sym == TIME_SYMBOL {
                    self.time_slot()
                } else if let Some(j) = self.species_index(sym) {
                    j
                } else {
                    self.param_slot(self.parameter_index(sym).expect("validated symbol"))
                };
                if !filled[slot] {
                    return Err(ModelError::MissingSymbol(sym.to_string()));
                }
            }
            out.push((s.name.clone(), self.eval_species(i, &slots)?));
        }
        Ok(out)
    }
}

/// Prints the model in the text format accepted by [`crate::parse::parse_model`].
impl fmt::Display for OdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model {};", self.name)?;
        for s in &self.species {
            writeln!(f, "species {} = {};", s.name, s.initial)?;
        }
        for p in &self.parameters {
            write!(f, "param {} in [{}, {}]", p.name, p.lower, p.upper)?;
            if let Some(v) = p.true_value {
                write!(f, " = {v}")?;
            }
            writeln!(f, ";")?;
        }
        for (s, e) in self.species.iter().zip(&self.rhs) {
            writeln!(f, "d({}) = {};", s.name, e)?;
        }
        Ok(())
    }
}
