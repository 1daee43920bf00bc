//! Exact and Monte-Carlo evaluation of grounded programs.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::relations::{prob_threshold, DistributionParams, ThresholdOp};
use crate::stream::RandomStream;

use super::{
    Atom, InferenceMode, Literal, LogicError, Program, QueryMethod, QueryResult, Statement,
};

enum FactKind {
    Bernoulli(f64),
    Normal { mean: f64, stddev: f64 },
}

/// A literal resolved to slot indices. Heads are numbered in dependency
/// order, so a single forward pass evaluates them.
#[derive(Clone, Copy)]
enum Slot {
    Fact(usize),
    Cmp {
        fact: usize,
        op: ThresholdOp,
        threshold: f64,
    },
    Head(usize),
}

/// A program lowered to slot arrays: facts in statement order, rule heads
/// in topological order. Building it proves the grounding invariant that
/// every referenced atom is defined.
pub(super) struct Compiled {
    fact_kinds: Vec<FactKind>,
    fact_atoms: Vec<Atom>,
    fact_ids: HashMap<Atom, usize>,
    head_ids: HashMap<Atom, usize>,
    /// bodies[h] holds the alternative rule bodies of head h.
    bodies: Vec<Vec<Vec<Slot>>>,
}

impl Compiled {
    pub(super) fn build(program: &Program) -> Result<Compiled, LogicError> {
        let mut fact_kinds = Vec::new();
        let mut fact_atoms = Vec::new();
        let mut fact_ids = HashMap::new();
        let mut heads: Vec<Atom> = Vec::new();
        let mut group_ids: HashMap<Atom, usize> = HashMap::new();
        let mut groups: Vec<Vec<&[Literal]>> = Vec::new();

        for statement in program.statements() {
            match statement {
                Statement::Distributional(f) => {
                    fact_ids.insert(f.atom.clone(), fact_kinds.len());
                    fact_atoms.push(f.atom.clone());
                    fact_kinds.push(FactKind::Normal {
                        mean: f.mean,
                        stddev: f.stddev,
                    });
                }
                Statement::Probabilistic(f) => {
                    fact_ids.insert(f.atom.clone(), fact_kinds.len());
                    fact_atoms.push(f.atom.clone());
                    fact_kinds.push(FactKind::Bernoulli(f.probability));
                }
                Statement::Rule(rule) => {
                    let id = *group_ids.entry(rule.head.clone()).or_insert_with(|| {
                        heads.push(rule.head.clone());
                        groups.push(Vec::new());
                        heads.len() - 1
                    });
                    groups[id].push(&rule.body);
                }
            }
        }

        // Resolve literals against facts and heads, in group order.
        let mut group_bodies: Vec<Vec<Vec<Slot>>> = Vec::with_capacity(groups.len());
        let mut group_edges: Vec<Vec<usize>> = vec![Vec::new(); groups.len()];
        for (gid, group) in groups.iter().enumerate() {
            let mut bodies = Vec::with_capacity(group.len());
            for body in group {
                let mut slots = Vec::with_capacity(body.len());
                for literal in *body {
                    let slot = match literal {
                        Literal::Atom(atom) => match fact_ids.get(atom) {
                            Some(&i) => match fact_kinds[i] {
                                FactKind::Bernoulli(_) => Slot::Fact(i),
                                FactKind::Normal { .. } => {
                                    return Err(LogicError::NotBoolean(atom.clone()))
                                }
                            },
                            None => match group_ids.get(atom) {
                                Some(&target) => {
                                    group_edges[gid].push(target);
                                    Slot::Head(target)
                                }
                                None => return Err(LogicError::UndefinedAtom(atom.clone())),
                            },
                        },
                        Literal::Comparison(cmp) => match fact_ids.get(&cmp.atom) {
                            Some(&i) => match fact_kinds[i] {
                                FactKind::Normal { .. } => Slot::Cmp {
                                    fact: i,
                                    op: cmp.op,
                                    threshold: cmp.threshold,
                                },
                                FactKind::Bernoulli(_) => {
                                    return Err(LogicError::NotDistributional(cmp.atom.clone()))
                                }
                            },
                            None if group_ids.contains_key(&cmp.atom) => {
                                return Err(LogicError::NotDistributional(cmp.atom.clone()))
                            }
                            None => return Err(LogicError::UndefinedAtom(cmp.atom.clone())),
                        },
                    };
                    slots.push(slot);
                }
                bodies.push(slots);
            }
            group_bodies.push(bodies);
        }

        // Dependency-first head order. Program validation rejected recursion,
        // so the edge graph is acyclic.
        let mut order = Vec::with_capacity(groups.len());
        let mut state = vec![0u8; groups.len()];
        for start in 0..groups.len() {
            if state[start] != 0 {
                continue;
            }
            let mut stack = vec![(start, 0usize)];
            state[start] = 1;
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                if *next < group_edges[node].len() {
                    let child = group_edges[node][*next];
                    *next += 1;
                    if state[child] == 0 {
                        state[child] = 1;
                        stack.push((child, 0));
                    }
                } else {
                    state[node] = 2;
                    order.push(node);
                    stack.pop();
                }
            }
        }
        let mut topo_pos = vec![0usize; groups.len()];
        for (pos, &gid) in order.iter().enumerate() {
            topo_pos[gid] = pos;
        }

        let mut bodies = vec![Vec::new(); groups.len()];
        for (gid, group) in group_bodies.into_iter().enumerate() {
            bodies[topo_pos[gid]] = group
                .into_iter()
                .map(|body| {
                    body.into_iter()
                        .map(|slot| match slot {
                            Slot::Head(g) => Slot::Head(topo_pos[g]),
                            other => other,
                        })
                        .collect()
                })
                .collect();
        }
        let head_ids = heads
            .into_iter()
            .enumerate()
            .map(|(gid, atom)| (atom, topo_pos[gid]))
            .collect();

        Ok(Compiled {
            fact_kinds,
            fact_atoms,
            fact_ids,
            head_ids,
            bodies,
        })
    }

    fn target(&self, atom: &Atom) -> Result<Slot, LogicError> {
        if let Some(&i) = self.fact_ids.get(atom) {
            return match self.fact_kinds[i] {
                FactKind::Bernoulli(_) => Ok(Slot::Fact(i)),
                FactKind::Normal { .. } => Err(LogicError::NotBoolean(atom.clone())),
            };
        }
        if let Some(&h) = self.head_ids.get(atom) {
            return Ok(Slot::Head(h));
        }
        Err(LogicError::UndefinedAtom(atom.clone()))
    }

    /// How often each fact occurs in the fully expanded proof structure of
    /// `target`. Exact inference multiplies literal probabilities, which is
    /// only sound when every count is at most one.
    fn fact_use_counts(&self, target: Slot) -> Vec<usize> {
        let mut counts = vec![0usize; self.fact_kinds.len()];
        let mut stack = vec![target];
        while let Some(slot) = stack.pop() {
            match slot {
                Slot::Fact(i) | Slot::Cmp { fact: i, .. } => counts[i] += 1,
                Slot::Head(h) => {
                    for body in &self.bodies[h] {
                        stack.extend(body.iter().copied());
                    }
                }
            }
        }
        counts
    }

    fn shared_fact(&self, target: Slot) -> Option<&Atom> {
        let counts = self.fact_use_counts(target);
        counts
            .iter()
            .position(|&c| c > 1)
            .map(|i| &self.fact_atoms[i])
    }

    fn slot_probability(&self, slot: Slot, head_p: &[f64]) -> Result<f64, LogicError> {
        Ok(match slot {
            Slot::Fact(i) => match self.fact_kinds[i] {
                FactKind::Bernoulli(p) => p,
                FactKind::Normal { .. } => unreachable!("rejected at compile"),
            },
            Slot::Cmp {
                fact,
                op,
                threshold,
            } => {
                let FactKind::Normal { mean, stddev } = self.fact_kinds[fact] else {
                    unreachable!("rejected at compile")
                };
                let params = DistributionParams::Gaussian {
                    mean,
                    variance: stddev * stddev,
                };
                prob_threshold(&params, op, threshold)?
            }
            Slot::Head(h) => head_p[h],
        })
    }

    /// Closed-form probability: conjunction = product, alternative rules =
    /// noisy-or. Sound when no fact is used twice (checked by the caller).
    fn exact(&self, target: Slot) -> Result<f64, LogicError> {
        let mut head_p = Vec::with_capacity(self.bodies.len());
        for bodies in &self.bodies {
            let mut all_fail = 1.0;
            for body in bodies {
                let mut holds = 1.0;
                for slot in body {
                    holds *= self.slot_probability(*slot, &head_p)?;
                }
                all_fail *= 1.0 - holds;
            }
            head_p.push(1.0 - all_fail);
        }
        self.slot_probability(target, &head_p)
    }

    /// Samples every fact jointly per iteration: one uniform draw per
    /// Bernoulli fact, one standard-normal draw per distributional fact, in
    /// statement order.
    fn monte_carlo(&self, target: Slot, samples: usize, rng: &mut RandomStream) -> (f64, f64) {
        let mut bern = vec![false; self.fact_kinds.len()];
        let mut gauss = vec![0.0f64; self.fact_kinds.len()];
        let mut heads = vec![false; self.bodies.len()];
        let mut hits = 0usize;
        for _ in 0..samples {
            for (i, kind) in self.fact_kinds.iter().enumerate() {
                match kind {
                    FactKind::Bernoulli(p) => bern[i] = rng.random::<f64>() < *p,
                    FactKind::Normal { mean, stddev } => {
                        let z: f64 = rng.sample(StandardNormal);
                        gauss[i] = mean + stddev * z;
                    }
                }
            }
            for h in 0..self.bodies.len() {
                let value = self.bodies[h]
                    .iter()
                    .any(|body| body.iter().all(|s| eval_slot(*s, &bern, &gauss, &heads)));
                heads[h] = value;
            }
            if eval_slot(target, &bern, &gauss, &heads) {
                hits += 1;
            }
        }
        let p = hits as f64 / samples as f64;
        let stderr = (p * (1.0 - p) / samples as f64).sqrt();
        (p, stderr)
    }

    pub(super) fn run(
        &self,
        atom: &Atom,
        mode: InferenceMode,
        mc_samples: usize,
        rng: &mut RandomStream,
    ) -> Result<QueryResult, LogicError> {
        let target = self.target(atom)?;
        let exact_requested = match mode {
            InferenceMode::MonteCarlo => false,
            InferenceMode::Exact => match self.shared_fact(target) {
                Some(shared) => return Err(LogicError::SharedFacts(shared.clone())),
                None => true,
            },
            // Shared facts make the closed form unsound, so fall back to
            // sampling.
            InferenceMode::Auto => self.shared_fact(target).is_none(),
        };
        if exact_requested {
            return Ok(QueryResult {
                atom: atom.clone(),
                probability: self.exact(target)?,
                method: QueryMethod::Exact,
                mc_samples: 0,
                mc_stderr: None,
            });
        }
        if mc_samples == 0 {
            return Err(LogicError::NoSamples);
        }
        let (probability, stderr) = self.monte_carlo(target, mc_samples, rng);
        Ok(QueryResult {
            atom: atom.clone(),
            probability,
            method: QueryMethod::MonteCarlo,
            mc_samples,
            mc_stderr: Some(stderr),
        })
    }
}

/// Comparisons mirror the closed form: `<` is the complement of `>`, so a
/// value exactly at the threshold sides with `<`. Visible only for
/// zero-stddev facts.
fn eval_slot(slot: Slot, bern: &[bool], gauss: &[f64], heads: &[bool]) -> bool {
    match slot {
        Slot::Fact(i) => bern[i],
        Slot::Cmp {
            fact,
            op,
            threshold,
        } => match op {
            ThresholdOp::Greater => gauss[fact] > threshold,
            ThresholdOp::Less => gauss[fact] <= threshold,
        },
        Slot::Head(h) => heads[h],
    }
}
