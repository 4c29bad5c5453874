//! Petri nets of reaction networks and their siphons.
//!
//! A siphon is a nonempty place set `P` such that every transition that
//! deposits into `P` also draws from `P`. Generic enumeration is exponential
//! and capped; for strongly connected compartmental graphs the minimal
//! siphons are known in closed form (`{N}`, `{S}`, and every `{N_i, S_i}`).

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

use crate::crn::{particle_species, space_species, Crn};
use crate::graph::{strong_components, CompartmentalGraph};

/// Default limit on the number of places for generic enumeration.
pub const DEFAULT_PLACE_CAP: usize = 24;
/// Hard limit imposed by the bitset representation.
pub const MAX_PLACE_CAP: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PetriError {
    #[error("siphon candidate is empty")]
    EmptySet,
    #[error("place index {0} out of range")]
    PlaceOutOfRange(usize),
    #[error(
        "net has {places} places, above the enumeration cap of {cap}; \
         use the closed-form catalogue for strongly connected compartmental graphs"
    )]
    PlaceCapExceeded { places: usize, cap: usize },
    #[error("compartmental graph is not strongly connected; fall back to generic enumeration")]
    NotStronglyConnected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    /// `(place, weight)` with weight > 0, sorted by place.
    pub inputs: Vec<(usize, u32)>,
    pub outputs: Vec<(usize, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PetriNet {
    places: Vec<String>,
    transitions: Vec<Transition>,
}

/// A sorted, nonempty set of place indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Siphon(Vec<usize>);

impl Siphon {
    pub fn new(mut places: Vec<usize>) -> Self {
        places.sort_unstable();
        places.dedup();
        Siphon(places)
    }

    pub fn places(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self, place_names: &[String]) -> Vec<String> {
        self.0.iter().map(|&p| place_names[p].clone()).collect()
    }

    fn from_mask(mask: u64) -> Self {
        Siphon((0..64).filter(|p| mask >> p & 1 == 1).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SiphonMethod {
    ClosedForm,
    Enumeration,
}

/// `{"minimal_siphons":[["N1","S1"],...],"method":"closed_form"|"enumeration"}`
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SiphonReport {
    pub minimal_siphons: Vec<Vec<String>>,
    pub method: SiphonMethod,
}

impl SiphonReport {
    pub fn new(siphons: &[Siphon], place_names: &[String], method: SiphonMethod) -> Self {
        SiphonReport {
            minimal_siphons: siphons.iter().map(|s| s.names(place_names)).collect(),
            method,
        }
    }
}

impl PetriNet {
    pub fn from_crn(crn: &Crn) -> Self {
        let weighted = |y: &[u32]| -> Vec<(usize, u32)> {
            y.iter()
                .enumerate()
                .filter_map(|(j, &w)| (w > 0).then_some((j, w)))
                .collect()
        };
        PetriNet {
            places: crn.species().to_vec(),
            transitions: crn
                .reactions()
                .iter()
                .map(|r| Transition {
                    inputs: weighted(&r.reactants),
                    outputs: weighted(&r.products),
                })
                .collect(),
        }
    }

    pub fn new(places: Vec<String>, transitions: Vec<Transition>) -> Self {
        PetriNet { places, transitions }
    }

    pub fn places(&self) -> &[String] {
        &self.places
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Places as vertices `0..P`, transitions as `P..P+T`.
    pub fn digraph(&self) -> Vec<Vec<usize>> {
        let p = self.places.len();
        let mut adj = vec![Vec::new(); p + self.transitions.len()];
        for (t, tr) in self.transitions.iter().enumerate() {
            for &(place, _) in &tr.inputs {
                adj[place].push(p + t);
            }
            for &(place, _) in &tr.outputs {
                adj[p + t].push(place);
            }
        }
        adj
    }

    pub fn is_strongly_connected(&self) -> bool {
        strong_components(&self.digraph()).len() == 1
    }

    pub fn is_siphon(&self, places: &[usize]) -> Result<bool, PetriError> {
        if places.is_empty() {
            return Err(PetriError::EmptySet);
        }
        let mut member = vec![false; self.places.len()];
        for &p in places {
            *member
                .get_mut(p)
                .ok_or(PetriError::PlaceOutOfRange(p))? = true;
        }
        Ok(self.transitions.iter().all(|t| {
            !t.outputs.iter().any(|&(p, _)| member[p]) || t.inputs.iter().any(|&(p, _)| member[p])
        }))
    }

    /// All inclusion-minimal siphons, sorted lexicographically by place
    /// indices. Errors if the net has more than `cap` places.
    pub fn minimal_siphons(&self, cap: usize) -> Result<Vec<Siphon>, PetriError> {
        let n = self.places.len();
        let cap = cap.min(MAX_PLACE_CAP);
        if n > cap {
            return Err(PetriError::PlaceCapExceeded { places: n, cap });
        }
        let input_masks: Vec<u64> = self
            .transitions
            .iter()
            .map(|t| t.inputs.iter().fold(0u64, |acc, &(p, _)| acc | 1 << p))
            .collect();
        let output_masks: Vec<u64> = self
            .transitions
            .iter()
            .map(|t| t.outputs.iter().fold(0u64, |acc, &(p, _)| acc | 1 << p))
            .collect();

        let mut found: Vec<u64> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        for seed in 0..n {
            let mut stack = vec![1u64 << seed];
            while let Some(set) = stack.pop() {
                if !visited.insert(set) {
                    continue;
                }
                if found.iter().any(|&f| f & set == f) {
                    // supersets of a known siphon cannot lead to a new minimal one
                    continue;
                }
                let violated = (0..input_masks.len())
                    .find(|&t| output_masks[t] & set != 0 && input_masks[t] & set == 0);
                match violated {
                    None => {
                        found.retain(|&f| f & set != set);
                        found.push(set);
                    }
                    Some(t) => {
                        // the siphon must contain one of t's input places
                        let mut choices = input_masks[t];
                        let mut branch = Vec::new();
                        while choices != 0 {
                            let bit = choices & choices.wrapping_neg();
                            choices ^= bit;
                            branch.push(set | bit);
                        }
                        // keep DFS order deterministic: lowest place explored first
                        stack.extend(branch.into_iter().rev());
                    }
                }
            }
        }
        let mut minimal: Vec<Siphon> = found
            .iter()
            .filter(|&&s| !found.iter().any(|&o| o != s && o & s == o))
            .map(|&s| Siphon::from_mask(s))
            .collect();
        minimal.sort();
        Ok(minimal)
    }
}

/// Minimal siphons of the compartmental network of `g` without search:
/// `{N}`, `{S}`, and each `{N_i, S_i}` when `g` is strongly connected.
/// A single compartment has no transitions, leaving the singletons
/// `{N1}` and `{S1}`.
pub fn closed_form_siphons(g: &CompartmentalGraph) -> Result<Vec<Siphon>, PetriError> {
    let m = g.m();
    if m == 1 {
        return Ok(vec![Siphon::new(vec![0]), Siphon::new(vec![1])]);
    }
    if !g.is_strongly_connected() {
        return Err(PetriError::NotStronglyConnected);
    }
    let mut out = Vec::with_capacity(m + 2);
    out.push(Siphon::new((0..m).map(particle_species).collect()));
    out.push(Siphon::new((0..m).map(|i| space_species(m, i)).collect()));
    for i in 0..m {
        out.push(Siphon::new(vec![particle_species(i), space_species(m, i)]));
    }
    out.sort();
    Ok(out)
}
