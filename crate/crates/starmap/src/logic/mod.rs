//! A small probabilistic logic language over map relations.
//!
//! Programs combine three statement forms:
//!
//! ```text
//! distance(x, road) ~ normal(10, 2).      % distributional fact (mean, stddev)
//! 0.3::over(x, park).                     % probabilistic fact
//! airspace(X) :- distance(X, road) < 15.  % rule
//! ```
//!
//! `%` starts a comment. Uppercase or underscore-initial terms are
//! variables; grounding binds every variable to the query location, written
//! as the constant `x`. Atoms of the form `distance(x, tag)` or
//! `over(x, tag)` that the program does not define itself are read from a
//! [`StarMap`]'s fitted fields; explicit facts shadow the fields.
//!
//! Semantics: all facts are mutually independent, a rule body is the
//! product of its literals' probabilities, alternative rules for one head
//! combine by noisy-or, and a comparison on a normal fact has the
//! closed-form CDF probability. Those formulas are exact as long as no
//! fact enters a query's proof structure twice; queries where one does are
//! answered by Monte-Carlo sampling instead.
//!
//! The language is deliberately small: no negation, no recursion, `normal`
//! as the only distribution, comparisons only against numeric literals.

mod infer;
mod parser;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{FieldError, RasterGrid, StarMap};
use crate::geometry::{Point, Tag};
use crate::relations::{RelationError, RelationKind, ThresholdOp};
use crate::stream;

use infer::Compiled;

/// Name of the constant that grounding substitutes for every variable.
pub const LOCATION_CONSTANT: &str = "x";

#[derive(Debug, Error)]
pub enum LogicError {
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("recursion through predicate `{0}`")]
    Recursion(String),
    #[error("fact `{0}` is defined more than once")]
    DuplicateFact(Atom),
    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("standard deviation {0} must be finite and non-negative")]
    InvalidStddev(f64),
    #[error("atom `{0}` is not defined by any fact or rule")]
    UndefinedAtom(Atom),
    #[error("`{0}` follows a distribution; compare it with `<` or `>` instead of using it as a boolean literal")]
    NotBoolean(Atom),
    #[error("`{0}` is not a distributional fact, so it cannot be compared against a number")]
    NotDistributional(Atom),
    #[error("fact `{0}` enters the proof structure more than once; exact inference is unsound here, use monte_carlo")]
    SharedFacts(Atom),
    #[error("monte-carlo inference needs at least one sample")]
    NoSamples,
    #[error("unknown inference mode `{0}`, expected auto, exact or monte_carlo")]
    UnknownMode(String),
    #[error("at node {point}: {source}")]
    AtNode {
        point: Point,
        #[source]
        source: Box<LogicError>,
    },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Relation(#[from] RelationError),
}

impl LogicError {
    fn at_node(point: Point, source: LogicError) -> LogicError {
        LogicError::AtNode {
            point,
            source: Box::new(source),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Variable(String),
    Constant(String),
}

impl Term {
    pub fn name(&self) -> &str {
        match self {
            Term::Variable(s) | Term::Constant(s) => s,
        }
    }

    fn grounded(&self) -> Term {
        match self {
            Term::Variable(_) => Term::Constant(LOCATION_CONSTANT.to_string()),
            constant => constant.clone(),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub predicate: String,
    pub terms: Vec<Term>,
}

impl Atom {
    fn grounded(&self) -> Atom {
        Atom {
            predicate: self.predicate.clone(),
            terms: self.terms.iter().map(Term::grounded).collect(),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.predicate)?;
        for (i, term) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{term}")?;
        }
        write!(f, ")")
    }
}

impl FromStr for Atom {
    type Err = LogicError;

    fn from_str(s: &str) -> Result<Atom, LogicError> {
        parser::parse_atom(s)
    }
}

impl Serialize for Atom {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Atom {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Atom, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionalFact {
    pub atom: Atom,
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilisticFact {
    pub probability: f64,
    pub atom: Atom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub atom: Atom,
    pub op: ThresholdOp,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Atom(Atom),
    Comparison(Comparison),
}

impl Literal {
    fn atom(&self) -> &Atom {
        match self {
            Literal::Atom(atom) => atom,
            Literal::Comparison(cmp) => &cmp.atom,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Atom(atom) => write!(f, "{atom}"),
            Literal::Comparison(cmp) => write!(f, "{} {} {}", cmp.atom, cmp.op, cmp.threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub head: Atom,
    pub body: Vec<Literal>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    Distributional(DistributionalFact),
    Probabilistic(ProbabilisticFact),
    Rule(Rule),
}

impl Statement {
    /// The atom a fact statement defines, if it is a fact.
    fn fact_atom(&self) -> Option<&Atom> {
        match self {
            Statement::Distributional(f) => Some(&f.atom),
            Statement::Probabilistic(f) => Some(&f.atom),
            Statement::Rule(_) => None,
        }
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::Distributional(fact) => {
                write!(f, "{} ~ normal({}, {}).", fact.atom, fact.mean, fact.stddev)
            }
            Statement::Probabilistic(fact) => {
                write!(f, "{}::{}.", fact.probability, fact.atom)
            }
            Statement::Rule(rule) => {
                write!(f, "{} :- ", rule.head)?;
                for (i, literal) in rule.body.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{literal}")?;
                }
                write!(f, ".")
            }
        }
    }
}

/// A validated program: non-recursive, with every fact defined once.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    statements: Vec<Statement>,
}

impl Program {
    pub fn new(statements: Vec<Statement>) -> Result<Program, LogicError> {
        let mut facts: HashSet<&Atom> = HashSet::new();
        for statement in &statements {
            match statement {
                Statement::Probabilistic(f) => {
                    if !(f.probability.is_finite() && (0.0..=1.0).contains(&f.probability)) {
                        return Err(LogicError::InvalidProbability(f.probability));
                    }
                }
                Statement::Distributional(f) => {
                    if !(f.stddev.is_finite() && f.stddev >= 0.0) {
                        return Err(LogicError::InvalidStddev(f.stddev));
                    }
                }
                Statement::Rule(_) => {}
            }
            if let Some(atom) = statement.fact_atom() {
                if !facts.insert(atom) {
                    return Err(LogicError::DuplicateFact(atom.clone()));
                }
            }
        }
        check_recursion(&statements)?;
        Ok(Program { statements })
    }

    /// Parses and validates program text; see the module docs for the
    /// grammar.
    pub fn parse(text: &str) -> Result<Program, LogicError> {
        parser::parse_program(text)
    }

    pub fn statements(&self) -> &[Statement] {
        &self.statements
    }
}

impl FromStr for Program {
    type Err = LogicError;

    fn from_str(s: &str) -> Result<Program, LogicError> {
        Program::parse(s)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for statement in &self.statements {
            writeln!(f, "{statement}")?;
        }
        Ok(())
    }
}

/// Rejects rules whose head predicate (transitively) occurs in their own
/// body, at predicate granularity.
fn check_recursion(statements: &[Statement]) -> Result<(), LogicError> {
    fn intern<'a>(
        name: &'a str,
        id_of: &mut std::collections::HashMap<&'a str, usize>,
        predicates: &mut Vec<&'a str>,
        adjacency: &mut Vec<Vec<usize>>,
    ) -> usize {
        *id_of.entry(name).or_insert_with(|| {
            predicates.push(name);
            adjacency.push(Vec::new());
            predicates.len() - 1
        })
    }

    let mut id_of = std::collections::HashMap::new();
    let mut predicates: Vec<&str> = Vec::new();
    let mut adjacency: Vec<Vec<usize>> = Vec::new();
    for statement in statements {
        if let Statement::Rule(rule) = statement {
            let head = intern(&rule.head.predicate, &mut id_of, &mut predicates, &mut adjacency);
            for literal in &rule.body {
                let body = intern(
                    &literal.atom().predicate,
                    &mut id_of,
                    &mut predicates,
                    &mut adjacency,
                );
                adjacency[head].push(body);
            }
        }
    }
    // Three-color DFS for a cycle.
    let mut state = vec![0u8; predicates.len()];
    for start in 0..predicates.len() {
        if state[start] != 0 {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        state[start] = 1;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if *next < adjacency[node].len() {
                let child = adjacency[node][*next];
                *next += 1;
                match state[child] {
                    0 => {
                        state[child] = 1;
                        stack.push((child, 0));
                    }
                    1 => return Err(LogicError::Recursion(predicates[child].to_string())),
                    _ => {}
                }
            } else {
                state[node] = 2;
                stack.pop();
            }
        }
    }
    Ok(())
}

/// Requested inference strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Exact when admissible, Monte-Carlo otherwise.
    Auto,
    /// Exact or error.
    Exact,
    MonteCarlo,
}

impl FromStr for InferenceMode {
    type Err = LogicError;

    fn from_str(s: &str) -> Result<InferenceMode, LogicError> {
        match s {
            "auto" => Ok(InferenceMode::Auto),
            "exact" => Ok(InferenceMode::Exact),
            "monte_carlo" => Ok(InferenceMode::MonteCarlo),
            other => Err(LogicError::UnknownMode(other.to_string())),
        }
    }
}

/// Strategy that actually answered a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMethod {
    Exact,
    MonteCarlo,
}

impl fmt::Display for QueryMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryMethod::Exact => "exact",
            QueryMethod::MonteCarlo => "monte_carlo",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub atom: Atom,
    pub probability: f64,
    pub method: QueryMethod,
    /// 0 for exact answers.
    pub mc_samples: usize,
    /// `sqrt(p(1-p)/samples)`; only Monte-Carlo answers carry one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_stderr: Option<f64>,
}

/// A program bound to one location: variables substituted, map relations
/// turned into facts.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedProgram {
    program: Program,
    location: Point,
}

impl GroundedProgram {
    /// Grounds a program that defines all of its atoms explicitly, with no
    /// map behind it.
    pub fn from_explicit(program: &Program, location: Point) -> Result<GroundedProgram, LogicError> {
        ground_with(program, None, location)
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn location(&self) -> Point {
        self.location
    }

    /// Probability that `atom` holds. Monte-Carlo draws come from a
    /// dedicated substream of `seed`, so results are reproducible and
    /// independent of map sampling.
    pub fn query(
        &self,
        atom: &Atom,
        mode: InferenceMode,
        mc_samples: usize,
        seed: u64,
    ) -> Result<QueryResult, LogicError> {
        let compiled = Compiled::build(&self.program)?;
        let mut rng = stream::substream_for(seed, stream::PURPOSE_MC_QUERY, 0);
        compiled.run(atom, mode, mc_samples, &mut rng)
    }
}

/// Binds `program` to `location`: every variable becomes the constant `x`,
/// and every undefined `distance`/`over` atom is replaced by a fact read
/// from the map's fitted fields (mean/variance fields for `distance`, the
/// p field for `over`). Facts already present in the program shadow the
/// fields. Grounding an already-ground program is the identity.
pub fn ground_program(
    program: &Program,
    map: &StarMap,
    location: Point,
) -> Result<GroundedProgram, LogicError> {
    ground_with(program, Some(map), location)
}

fn ground_with(
    program: &Program,
    map: Option<&StarMap>,
    location: Point,
) -> Result<GroundedProgram, LogicError> {
    let mut statements: Vec<Statement> = program
        .statements()
        .iter()
        .map(|statement| match statement {
            Statement::Distributional(f) => Statement::Distributional(DistributionalFact {
                atom: f.atom.grounded(),
                ..f.clone()
            }),
            Statement::Probabilistic(f) => Statement::Probabilistic(ProbabilisticFact {
                probability: f.probability,
                atom: f.atom.grounded(),
            }),
            Statement::Rule(rule) => Statement::Rule(Rule {
                head: rule.head.grounded(),
                body: rule
                    .body
                    .iter()
                    .map(|literal| match literal {
                        Literal::Atom(atom) => Literal::Atom(atom.grounded()),
                        Literal::Comparison(cmp) => Literal::Comparison(Comparison {
                            atom: cmp.atom.grounded(),
                            ..cmp.clone()
                        }),
                    })
                    .collect(),
            }),
        })
        .collect();

    let mut defined: HashSet<Atom> = statements
        .iter()
        .filter_map(|s| s.fact_atom().cloned())
        .collect();
    for statement in &statements {
        if let Statement::Rule(rule) = statement {
            defined.insert(rule.head.clone());
        }
    }

    let mut appended: Vec<Statement> = Vec::new();
    if let Some(map) = map {
        for statement in &statements {
            let Statement::Rule(rule) = statement else {
                continue;
            };
            for literal in &rule.body {
                let atom = literal.atom();
                if defined.contains(atom) {
                    continue;
                }
                let Some(fact) = field_fact(map, atom, location)? else {
                    continue; // not a map relation; compile reports it
                };
                defined.insert(atom.clone());
                appended.push(fact);
            }
        }
    }
    statements.extend(appended);

    let program = Program::new(statements)?;
    let grounded = GroundedProgram { program, location };
    // Grounding invariant: every atom referenced in any body is defined.
    Compiled::build(&grounded.program)?;
    Ok(grounded)
}

/// Reads `distance(x, tag)` or `over(x, tag)` from the fitted fields.
/// Returns `None` for atoms that are not map relations.
fn field_fact(
    map: &StarMap,
    atom: &Atom,
    location: Point,
) -> Result<Option<Statement>, LogicError> {
    let Ok(relation) = atom.predicate.parse::<RelationKind>() else {
        return Ok(None);
    };
    let [Term::Constant(loc), Term::Constant(tag)] = atom.terms.as_slice() else {
        return Ok(None);
    };
    if loc != LOCATION_CONSTANT {
        return Ok(None);
    }
    let tag = Tag::from(tag.as_str());
    Ok(Some(match relation {
        RelationKind::Over => Statement::Probabilistic(ProbabilisticFact {
            probability: map.evaluate_field(relation, &tag, 0, location)?,
            atom: atom.clone(),
        }),
        RelationKind::Distance => {
            let mean = map.evaluate_field(relation, &tag, 0, location)?;
            let variance = map.evaluate_field(relation, &tag, 1, location)?;
            Statement::Distributional(DistributionalFact {
                atom: atom.clone(),
                mean,
                stddev: variance.sqrt(),
            })
        }
    }))
}

/// Evaluates `atom` independently at every node of a `rows`×`cols` grid
/// over the map extent. Monte-Carlo nodes draw from per-node substreams,
/// so the raster is reproducible and independent of scheduling.
pub fn query_field(
    program: &Program,
    map: &StarMap,
    atom: &Atom,
    rows: usize,
    cols: usize,
    mode: InferenceMode,
    mc_samples: usize,
    seed: u64,
) -> Result<(RasterGrid, QueryMethod), LogicError> {
    if rows < 2 || cols < 2 {
        return Err(FieldError::ResolutionTooSmall { rows, cols }.into());
    }
    let points = crate::fields::grid_points(map.extent(), rows, cols);
    let results: Vec<Result<QueryResult, LogicError>> = points
        .par_iter()
        .enumerate()
        .map(|(index, point)| {
            let grounded = ground_program(program, map, *point)
                .map_err(|e| LogicError::at_node(*point, e))?;
            let compiled =
                Compiled::build(grounded.program()).map_err(|e| LogicError::at_node(*point, e))?;
            let mut rng = stream::substream_for(seed, stream::PURPOSE_MC_FIELD, index as u64);
            compiled
                .run(atom, mode, mc_samples, &mut rng)
                .map_err(|e| LogicError::at_node(*point, e))
        })
        .collect();

    let mut values = Vec::with_capacity(results.len());
    let mut method = QueryMethod::Exact;
    for result in results {
        let result = result?;
        method = result.method;
        values.push(result.probability);
    }
    let raster = RasterGrid::new(map.extent(), rows, cols, values)?;
    Ok((raster, method))
}
