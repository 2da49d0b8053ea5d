//! Forward closure under modus ponens (→E), universal instantiation (∀E)
//! and conjunction introduction (∧I), restricted to the cited premises.

use std::collections::{BTreeSet, HashMap};

use super::formula::Formula;

const MAX_KNOWN: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Judgement {
    /// Rules used, in order of first use.
    Valid(Vec<&'static str>),
    Invalid,
    Unchecked,
}

struct Closure {
    known: Vec<(Formula, Vec<&'static str>)>,
    lookup: HashMap<Formula, usize>,
}

impl Closure {
    fn insert(&mut self, f: Formula, trail: Vec<&'static str>) -> bool {
        if self.lookup.contains_key(&f) || self.known.len() >= MAX_KNOWN {
            return false;
        }
        self.lookup.insert(f.clone(), self.known.len());
        self.known.push((f, trail));
        true
    }

    fn provable(&self, f: &Formula) -> Option<Vec<&'static str>> {
        if let Some(&i) = self.lookup.get(f) {
            return Some(self.known[i].1.clone());
        }
        if let Formula::And(a, b) = f {
            let mut trail = self.provable(a)?;
            extend_unique(&mut trail, &self.provable(b)?);
            extend_unique(&mut trail, &["∧I"]);
            return Some(trail);
        }
        None
    }
}

fn extend_unique(trail: &mut Vec<&'static str>, more: &[&'static str]) {
    for r in more {
        if !trail.contains(r) {
            trail.push(r);
        }
    }
}

pub fn judge_step(premises: &[Formula], conclusion: &Formula) -> Judgement {
    let mut closure = Closure {
        known: Vec::new(),
        lookup: HashMap::new(),
    };
    for p in premises {
        closure.insert(p.clone(), Vec::new());
    }
    let premise_count = closure.known.len();

    let mut constants = BTreeSet::new();
    for f in premises.iter().chain(std::iter::once(conclusion)) {
        constants.extend(f.free_terms());
    }

    loop {
        let mut fresh = Vec::new();
        for (f, trail) in &closure.known {
            match f {
                Formula::Forall(var, body) => {
                    for c in &constants {
                        let mut t = trail.clone();
                        extend_unique(&mut t, &["∀E"]);
                        fresh.push((body.substitute(var, c), t));
                    }
                }
                Formula::Implies(antecedent, consequent) => {
                    if let Some(proof) = closure.provable(antecedent) {
                        let mut t = trail.clone();
                        extend_unique(&mut t, &proof);
                        extend_unique(&mut t, &["→E"]);
                        fresh.push(((**consequent).clone(), t));
                    }
                }
                _ => {}
            }
        }
        let mut grew = false;
        for (f, t) in fresh {
            grew |= closure.insert(f, t);
        }
        if !grew {
            break;
        }
    }

    let derived_anything = closure.known.len() > premise_count;
    match closure.provable(conclusion) {
        Some(trail) if !trail.is_empty() => Judgement::Valid(trail),
        // restating a cited premise is not one of the checked rules
        Some(_) => Judgement::Unchecked,
        None if derived_anything || matches!(conclusion, Formula::And(..)) => Judgement::Invalid,
        None => Judgement::Unchecked,
    }
}
