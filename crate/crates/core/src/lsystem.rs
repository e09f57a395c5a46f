//! Deterministic context-free (D0L) L-systems: grammar parsing, parallel
//! rewriting, and turtle interpretation into a branching [`Skeleton`].
//!
//! Grammar text holds one declaration per line (`vars:`, `consts:`, `axiom:`,
//! `rule:`); declarations may also be separated by `;` on a single line, and
//! `#` starts a comment.
//!
//! ```text
//! vars: g
//! consts: d
//! axiom: g
//! rule: g -> d(d)+d)[d(d)+d)
//! ```
//!
//! Turtle semantics: every `d` emits one branch off the current parent axis.
//! A `[` with a matching `]` opens a child scope whose branches hang off the
//! most recently emitted branch; a `[` left open until the end of the string
//! only separates sibling groups on the same parent. `(`, `)`, `+` and `-` do
//! not move the turtle; sibling azimuths come from the [`AzimuthPolicy`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use crate::geometry::perpendicular_frame;
use crate::rng::SeedStream;

/// `(`, `)`, `+`, `-`, `[`, `]`.
pub const CONTROL_SYMBOLS: [char; 6] = ['(', ')', '+', '-', '[', ']'];

/// The symbol that the turtle turns into a branch.
pub const BRANCH_SYMBOL: char = 'd';

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LSystemError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: invalid symbol {symbol:?}")]
    InvalidSymbol { line: usize, symbol: char },
    #[error("line {line}: symbol {symbol:?} declared both as variable and constant")]
    ConflictingDeclaration { line: usize, symbol: char },
    #[error("line {line}: duplicate production for {symbol:?}")]
    DuplicateProduction { line: usize, symbol: char },
    #[error("line {line}: constant {symbol:?} cannot have a production")]
    ConstantProduction { line: usize, symbol: char },
    #[error("line {line}: undeclared symbol {symbol:?}")]
    UndeclaredSymbol { line: usize, symbol: char },
    #[error("line {line}: empty successor for {symbol:?}")]
    EmptySuccessor { line: usize, symbol: char },
    #[error("line {line}: unbalanced square brackets (']' at column {column} closes nothing)")]
    UnbalancedBrackets { line: usize, column: usize },
    #[error("axiom is empty")]
    EmptyAxiom,
    #[error("no axiom declared")]
    MissingAxiom,
    #[error("line {line}: axiom declared twice")]
    DuplicateAxiom { line: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TurtleError {
    #[error("']' at position {position} closes no open '['")]
    BracketUnderflow { position: usize },
    #[error("trunk height must be positive and finite, got {0}")]
    InvalidTrunk(f64),
    #[error("invalid turtle configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SymbolKind {
    Replaceable,
    Constant,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Symbol {
    pub id: char,
    pub kind: SymbolKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Production {
    pub predecessor: char,
    pub successor: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LSystem {
    variables: BTreeSet<char>,
    constants: BTreeSet<char>,
    axiom: String,
    productions: BTreeMap<char, String>,
}

pub fn is_control(c: char) -> bool {
    CONTROL_SYMBOLS.contains(&c)
}

fn is_valid_symbol(c: char) -> bool {
    c.is_ascii_graphic() && !is_control(c) && !matches!(c, ',' | ';' | '#' | ':')
}

/// Checks that every `]` closes an earlier `[`. Unclosed `[` are allowed.
/// Returns the 1-based column of the first offending `]`.
fn bracket_underflow(s: &str) -> Option<usize> {
    let mut open = 0usize;
    for (i, c) in s.chars().enumerate() {
        match c {
            '[' => open += 1,
            ']' if open == 0 => return Some(i + 1),
            ']' => open -= 1,
            _ => {}
        }
    }
    None
}

impl LSystem {
    /// Builds a system from parts, enforcing the same invariants as the parser.
    pub fn new(
        variables: impl IntoIterator<Item = char>,
        constants: impl IntoIterator<Item = char>,
        axiom: &str,
        productions: impl IntoIterator<Item = Production>,
    ) -> Result<Self, LSystemError> {
        let mut text = String::new();
        let vars: Vec<String> = variables.into_iter().map(String::from).collect();
        let consts: Vec<String> = constants.into_iter().map(String::from).collect();
        text.push_str(&format!("vars: {}\n", vars.join(" ")));
        text.push_str(&format!("consts: {}\n", consts.join(" ")));
        text.push_str(&format!("axiom: {axiom}\n"));
        for p in productions {
            text.push_str(&format!("rule: {} -> {}\n", p.predecessor, p.successor));
        }
        parse_lsystem(&text)
    }

    pub fn axiom(&self) -> &str {
        &self.axiom
    }

    pub fn variables(&self) -> &BTreeSet<char> {
        &self.variables
    }

    pub fn constants(&self) -> &BTreeSet<char> {
        &self.constants
    }

    /// Declared symbols (variables and constants).
    pub fn alphabet(&self) -> BTreeSet<char> {
        self.variables.union(&self.constants).copied().collect()
    }

    pub fn productions(&self) -> impl Iterator<Item = Production> + '_ {
        self.productions.iter().map(|(&predecessor, successor)| Production {
            predecessor,
            successor: successor.clone(),
        })
    }

    pub fn production(&self, predecessor: char) -> Option<&str> {
        self.productions.get(&predecessor).map(String::as_str)
    }

    /// Classifies `c`; `None` when it is neither declared nor a control symbol.
    pub fn symbol(&self, c: char) -> Option<Symbol> {
        let kind = if is_control(c) {
            SymbolKind::Control
        } else if self.productions.contains_key(&c) {
            SymbolKind::Replaceable
        } else if self.variables.contains(&c) || self.constants.contains(&c) {
            SymbolKind::Constant
        } else {
            return None;
        };
        Some(Symbol { id: c, kind })
    }
}

impl fmt::Display for LSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |set: &BTreeSet<char>| set.iter().map(char::to_string).collect::<Vec<_>>().join(" ");
        writeln!(f, "vars: {}", join(&self.variables))?;
        writeln!(f, "consts: {}", join(&self.constants))?;
        writeln!(f, "axiom: {}", self.axiom)?;
        for (p, s) in &self.productions {
            writeln!(f, "rule: {p} -> {s}")?;
        }
        Ok(())
    }
}

fn parse_symbol_list(value: &str, line: usize) -> Result<Vec<char>, LSystemError> {
    let mut out = Vec::new();
    for token in value.split(|c: char| c == ',' || c.is_whitespace()) {
        if token.is_empty() {
            continue;
        }
        let mut chars = token.chars();
        let c = chars.next().unwrap();
        if chars.next().is_some() {
            return Err(LSystemError::Syntax {
                line,
                message: format!("symbols are single characters, got {token:?}"),
            });
        }
        if !is_valid_symbol(c) {
            return Err(LSystemError::InvalidSymbol { line, symbol: c });
        }
        out.push(c);
    }
    Ok(out)
}

fn strip_whitespace(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Parses grammar text into an [`LSystem`].
pub fn parse_lsystem(spec_text: &str) -> Result<LSystem, LSystemError> {
    let mut variables = BTreeSet::new();
    let mut constants = BTreeSet::new();
    let mut axiom: Option<(String, usize)> = None;
    let mut rules: Vec<(char, String, usize)> = Vec::new();

    for (idx, raw) in spec_text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        for decl in content.split(';') {
            let decl = decl.trim();
            if decl.is_empty() {
                continue;
            }
            let Some((key, value)) = decl.split_once(':') else {
                return Err(LSystemError::Syntax {
                    line,
                    message: format!("expected `key: value`, got {decl:?}"),
                });
            };
            match key.trim() {
                "vars" | "variables" => {
                    for c in parse_symbol_list(value, line)? {
                        if constants.contains(&c) {
                            return Err(LSystemError::ConflictingDeclaration { line, symbol: c });
                        }
                        variables.insert(c);
                    }
                }
                "consts" | "constants" => {
                    for c in parse_symbol_list(value, line)? {
                        if variables.contains(&c) {
                            return Err(LSystemError::ConflictingDeclaration { line, symbol: c });
                        }
                        constants.insert(c);
                    }
                }
                "axiom" => {
                    if axiom.is_some() {
                        return Err(LSystemError::DuplicateAxiom { line });
                    }
                    axiom = Some((strip_whitespace(value), line));
                }
                "rule" => {
                    let Some((lhs, rhs)) = value.split_once("->") else {
                        return Err(LSystemError::Syntax {
                            line,
                            message: "rule must have the form `X -> successor`".into(),
                        });
                    };
                    let lhs = lhs.trim();
                    let mut chars = lhs.chars();
                    let pred = match (chars.next(), chars.next()) {
                        (Some(c), None) => c,
                        _ => {
                            return Err(LSystemError::Syntax {
                                line,
                                message: format!("predecessor must be a single symbol, got {lhs:?}"),
                            })
                        }
                    };
                    rules.push((pred, strip_whitespace(rhs), line));
                }
                other => {
                    return Err(LSystemError::Syntax {
                        line,
                        message: format!("unknown declaration {other:?}"),
                    })
                }
            }
        }
    }

    let check_string = |s: &str, line: usize| -> Result<(), LSystemError> {
        for c in s.chars() {
            if !(is_control(c) || variables.contains(&c) || constants.contains(&c)) {
                return Err(LSystemError::UndeclaredSymbol { line, symbol: c });
            }
        }
        if let Some(column) = bracket_underflow(s) {
            return Err(LSystemError::UnbalancedBrackets { line, column });
        }
        Ok(())
    };

    let (axiom, axiom_line) = axiom.ok_or(LSystemError::MissingAxiom)?;
    if axiom.is_empty() {
        return Err(LSystemError::EmptyAxiom);
    }
    check_string(&axiom, axiom_line)?;

    let mut productions = BTreeMap::new();
    for (pred, succ, line) in rules {
        if constants.contains(&pred) {
            return Err(LSystemError::ConstantProduction { line, symbol: pred });
        }
        if !variables.contains(&pred) {
            return Err(LSystemError::UndeclaredSymbol { line, symbol: pred });
        }
        if succ.is_empty() {
            return Err(LSystemError::EmptySuccessor { line, symbol: pred });
        }
        check_string(&succ, line)?;
        if productions.insert(pred, succ).is_some() {
            return Err(LSystemError::DuplicateProduction { line, symbol: pred });
        }
    }

    Ok(LSystem {
        variables,
        constants,
        axiom,
        productions,
    })
}

/// A string produced by `level` parallel rewrites of an axiom.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DerivationString {
    pub symbols: String,
    pub level: usize,
}

impl DerivationString {
    pub fn new(symbols: impl Into<String>, level: usize) -> Self {
        Self {
            symbols: symbols.into(),
            level,
        }
    }

    pub fn as_str(&self) -> &str {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

impl fmt::Display for DerivationString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.symbols)
    }
}

/// Applies one simultaneous rewrite to `s`.
pub fn rewrite_once(ls: &LSystem, s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match ls.productions.get(&c) {
            Some(succ) => out.push_str(succ),
            None => out.push(c),
        }
    }
    out
}

/// Rewrites the axiom `iterations` times in parallel.
pub fn rewrite(ls: &LSystem, iterations: usize) -> DerivationString {
    let mut s = ls.axiom.clone();
    for _ in 0..iterations {
        s = rewrite_once(ls, &s);
    }
    DerivationString::new(s, iterations)
}

/// Number of branch symbols (`d`) in the string.
pub fn count_branch_symbols(s: &DerivationString) -> usize {
    s.symbols.chars().filter(|&c| c == BRANCH_SYMBOL).count()
}

/// Derivation with exactly `branch_count` first-level branches, each carrying
/// `subbranches` children: `d[d[d…` when there are no children, otherwise
/// `d[dd…]d[dd…]…`.
pub fn synthesize_derivation(branch_count: usize, subbranches: usize) -> DerivationString {
    let mut s = String::new();
    for i in 0..branch_count {
        if subbranches == 0 {
            if i > 0 {
                s.push('[');
            }
            s.push(BRANCH_SYMBOL);
        } else {
            s.push(BRANCH_SYMBOL);
            s.push('[');
            s.extend(std::iter::repeat_n(BRANCH_SYMBOL, subbranches));
            s.push(']');
        }
    }
    DerivationString::new(s, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AzimuthPolicy {
    /// Sibling `i` of `k` sits at `i * yaw` degrees.
    UniformSpacing,
    /// As `UniformSpacing`, plus uniform azimuth jitter of `±jitter_range` and
    /// a small jitter of the attachment station.
    JitteredUniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurtleConfig {
    /// Length of a first-level branch.
    pub step_length: f64,
    /// Azimuth step between consecutive siblings, degrees; `None` spaces
    /// `k` siblings by `360 / k`.
    pub yaw_angle: Option<f64>,
    /// Tilt of a child branch off its parent axis, degrees.
    pub branch_pitch: f64,
    pub azimuth_policy: AzimuthPolicy,
    /// Degrees.
    pub jitter_range: f64,
    /// Length ratio between a branch and its parent branch.
    pub length_decay: f64,
}

impl Default for TurtleConfig {
    fn default() -> Self {
        Self {
            step_length: 1.0,
            yaw_angle: None,
            branch_pitch: 40.0,
            azimuth_policy: AzimuthPolicy::UniformSpacing,
            jitter_range: 10.0,
            length_decay: 0.5,
        }
    }
}

impl TurtleConfig {
    pub fn validate(&self) -> Result<(), TurtleError> {
        if !(self.step_length.is_finite() && self.step_length > 0.0) {
            return Err(TurtleError::InvalidConfig("step_length must be positive"));
        }
        if !(0.0..=180.0).contains(&self.branch_pitch) {
            return Err(TurtleError::InvalidConfig("branch_pitch must lie in [0, 180]"));
        }
        if !(self.jitter_range.is_finite() && self.jitter_range >= 0.0) {
            return Err(TurtleError::InvalidConfig("jitter_range must be non-negative"));
        }
        if let Some(yaw) = self.yaw_angle {
            if !yaw.is_finite() {
                return Err(TurtleError::InvalidConfig("yaw_angle must be finite"));
            }
        }
        if !(self.length_decay.is_finite() && self.length_decay > 0.0) {
            return Err(TurtleError::InvalidConfig("length_decay must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrunkSpec {
    pub height: f64,
    pub base: Point3<f64>,
}

impl TrunkSpec {
    pub fn new(height: f64, base: Point3<f64>) -> Self {
        Self { height, base }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonNode {
    pub attachment: Point3<f64>,
    pub direction: Vector3<f64>,
    pub depth: u32,
    pub length: f64,
    pub parent: Option<usize>,
    /// Fraction of the parent axis at which the node attaches.
    pub station: f64,
    /// Degrees around the parent axis, in `[0, 360)`.
    pub azimuth: f64,
}

impl SkeletonNode {
    pub fn tip(&self) -> Point3<f64> {
        self.attachment + self.direction * self.length
    }
}

/// Attachment frames of a tree. Node 0 is the trunk; parents precede children.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub nodes: Vec<SkeletonNode>,
}

impl Skeleton {
    pub fn trunk(&self) -> &SkeletonNode {
        &self.nodes[0]
    }

    pub fn nodes_at_depth(&self, depth: u32) -> impl Iterator<Item = (usize, &SkeletonNode)> {
        self.nodes.iter().enumerate().filter(move |(_, n)| n.depth == depth)
    }

    pub fn count_at_depth(&self, depth: u32) -> usize {
        self.nodes_at_depth(depth).count()
    }

    pub fn children(&self, parent: usize) -> impl Iterator<Item = (usize, &SkeletonNode)> {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.parent == Some(parent))
    }

    pub fn max_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }
}

/// First and last station of a sibling fan along its parent axis.
pub const STATION_RANGE: (f64, f64) = (0.30, 0.95);

/// Evenly spaced station of sibling `i` of `k`.
pub fn sibling_station(i: usize, k: usize) -> f64 {
    let (lo, hi) = STATION_RANGE;
    if k <= 1 {
        0.5 * (lo + hi)
    } else {
        lo + (hi - lo) * i as f64 / (k - 1) as f64
    }
}

/// Direction tilted `pitch_deg` off `axis` toward azimuth `azimuth_deg`
/// measured in the axis' perpendicular frame.
pub fn child_direction(axis: &Vector3<f64>, pitch_deg: f64, azimuth_deg: f64) -> Vector3<f64> {
    let (e1, e2) = perpendicular_frame(axis);
    let (sp, cp) = pitch_deg.to_radians().sin_cos();
    let (sa, ca) = azimuth_deg.to_radians().sin_cos();
    (axis * cp + (e1 * ca + e2 * sa) * sp).normalize()
}

/// Interprets a derivation string as a skeleton rooted at a vertical trunk.
pub fn interpret_turtle(
    s: &DerivationString,
    cfg: &TurtleConfig,
    trunk: &TrunkSpec,
    rng: &mut SeedStream,
) -> Result<Skeleton, TurtleError> {
    if !(trunk.height.is_finite() && trunk.height > 0.0) {
        return Err(TurtleError::InvalidTrunk(trunk.height));
    }
    cfg.validate()?;

    let chars: Vec<char> = s.symbols.chars().collect();

    // Match brackets; '[' left on the stack at the end never closes.
    let mut closes = vec![false; chars.len()];
    let mut stack = Vec::new();
    for (i, &c) in chars.iter().enumerate() {
        match c {
            '[' => stack.push(i),
            ']' => {
                let open = stack.pop().ok_or(TurtleError::BracketUnderflow { position: i })?;
                closes[open] = true;
            }
            _ => {}
        }
    }

    // Topology: parent and depth per node, in emission order.
    struct Scope {
        parent: usize,
        depth: u32,
        last: Option<usize>,
    }
    let mut topo: Vec<(usize, u32)> = Vec::new(); // (parent, depth), node index = i + 1
    let mut scopes = vec![Scope {
        parent: 0,
        depth: 1,
        last: None,
    }];
    for (i, &c) in chars.iter().enumerate() {
        match c {
            BRANCH_SYMBOL => {
                let scope = scopes.last_mut().unwrap();
                topo.push((scope.parent, scope.depth));
                scope.last = Some(topo.len());
            }
            '[' if closes[i] => {
                let scope = scopes.last().unwrap();
                let (parent, depth) = match scope.last {
                    Some(last) => (last, scope.depth + 1),
                    None => (scope.parent, scope.depth),
                };
                scopes.push(Scope {
                    parent,
                    depth,
                    last: None,
                });
            }
            ']' => {
                scopes.pop();
            }
            _ => {}
        }
    }

    let total = topo.len() + 1;
    let mut sibling_count = vec![0usize; total];
    let mut sibling_index = vec![0usize; total];
    for (k, &(parent, _)) in topo.iter().enumerate() {
        sibling_index[k + 1] = sibling_count[parent];
        sibling_count[parent] += 1;
    }

    let mut nodes = Vec::with_capacity(total);
    nodes.push(SkeletonNode {
        attachment: trunk.base,
        direction: Vector3::z(),
        depth: 0,
        length: trunk.height,
        parent: None,
        station: 0.0,
        azimuth: 0.0,
    });

    for (k, &(parent, depth)) in topo.iter().enumerate() {
        let idx = k + 1;
        let count = sibling_count[parent];
        let i = sibling_index[idx];
        let yaw = cfg.yaw_angle.unwrap_or(360.0 / count as f64);
        let mut station = sibling_station(i, count);
        let mut azimuth = i as f64 * yaw;
        if cfg.azimuth_policy == AzimuthPolicy::JitteredUniform {
            let spacing = (STATION_RANGE.1 - STATION_RANGE.0) / count as f64;
            station = (station + rng.symmetric(0.25 * spacing)).clamp(STATION_RANGE.0, STATION_RANGE.1);
            azimuth += rng.symmetric(cfg.jitter_range);
        }
        let azimuth = azimuth.rem_euclid(360.0);
        let p: &SkeletonNode = &nodes[parent];
        let attachment = p.attachment + p.direction * (station * p.length);
        let direction = child_direction(&p.direction, cfg.branch_pitch, azimuth);
        let length = cfg.step_length * cfg.length_decay.powi(depth as i32 - 1);
        nodes.push(SkeletonNode {
            attachment,
            direction,
            depth,
            length,
            parent: Some(parent),
            station,
            azimuth,
        });
    }

    Ok(Skeleton { nodes })
}
