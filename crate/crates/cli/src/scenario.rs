//! Strict scenario-file parsing.
//!
//! A scenario is a line-oriented sectioned document:
//!
//! ```text
//! # measurement of a qubit by a pointer qubit
//! [spaces]
//! dims = 2 2            # tensor factors; `dims = fock` defers to [fock]
//!
//! [initial]
//! basis = 0             # or: amplitudes = 0.6 (0, 0.8) 0 0
//!
//! [subsystem S]
//! family = {0, 1} {2, 3}
//!
//! [subsystem A]
//! op = controlled-flip 0 1
//! family = {0, 2} {1, 3}
//! map = 0 1 2
//! ```
//!
//! Sections: `[spaces]`, `[initial]`, `[tolerances]`, `[lattice]`,
//! `[fock]`, `[mixing]`, `[step NAME]`, `[subsystem NAME]`. Entries are
//! `key = value`; `#` starts a comment. Values are words, complex pairs
//! `(re, im)`, basis-index sets `{0, 1}`, or matrices `[a, b; c, d]` —
//! there is no expression language beyond these literals and the named
//! operator constructors (`identity`, `controlled-flip`, `phase`,
//! `permutation`, `matrix`).
//!
//! Parsing is strict: unknown sections or keys, duplicate keys, and
//! duplicate section names are errors with line/column positions, so a
//! misspelling can never silently fall back to a default.

use std::fmt;

use ndarray::Array2;

use conhist::branches::{OutcomeFamily, Subsystem, SubsystemModel};
use conhist::fock::{FieldOperators, FockModel, HypervolumeMask, LegKind, VertexSpec};
use conhist::hilbert::{
    controlled_shift, Amplitude, LinearOperator, ProjectorFamily, StateVector, DEFAULT_DIM_CAP,
};
use conhist::histories::{EvolutionSchedule, HistoryFamily};
use conhist::propagators::{feynman_propagator, LatticeSpec};

/// Scenario syntax or validation failure. `line == 0` marks document-level
/// errors (a missing section, a cross-section inconsistency discovered
/// while building core objects).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    /// Dotted path to the offending field, e.g. `subsystem 'A'.map`.
    pub path: String,
    pub msg: String,
}

impl ParseError {
    fn at(line: usize, col: usize, msg: impl Into<String>) -> ParseError {
        ParseError {
            line,
            col,
            path: String::new(),
            msg: msg.into(),
        }
    }

    fn document(msg: impl Into<String>) -> ParseError {
        ParseError {
            line: 0,
            col: 0,
            path: String::new(),
            msg: msg.into(),
        }
    }

    fn field(path: impl Into<String>, msg: impl Into<String>) -> ParseError {
        ParseError {
            line: 0,
            col: 0,
            path: path.into(),
            msg: msg.into(),
        }
    }

}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "line {}, column {}: ", self.line, self.col)?;
        }
        if !self.path.is_empty() {
            write!(f, "{}: ", self.path)?;
        }
        write!(f, "{}", self.msg)
    }
}

impl std::error::Error for ParseError {}

type PResult<T> = std::result::Result<T, ParseError>;

// ---------------------------------------------------------------------------
// Value tokens
// ---------------------------------------------------------------------------

/// One value token with the 1-based column where it starts.
#[derive(Debug, Clone, PartialEq)]
enum Token {
    Word(String, usize),
    Tuple(Vec<Token>, usize),
    Set(Vec<Token>, usize),
    Matrix(Vec<Vec<Token>>, usize),
}

impl Token {
    fn col(&self) -> usize {
        match self {
            Token::Word(_, c) | Token::Tuple(_, c) | Token::Set(_, c) | Token::Matrix(_, c) => *c,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Token::Word(..) => "word",
            Token::Tuple(..) => "tuple",
            Token::Set(..) => "index set",
            Token::Matrix(..) => "matrix",
        }
    }
}

fn is_word_char(c: char) -> bool {
    !c.is_whitespace() && !matches!(c, ',' | '(' | ')' | '{' | '}' | '[' | ']' | ';')
}

struct Tokenizer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    /// 0-based column of `chars[0]` within the full line.
    offset: usize,
}

impl Tokenizer {
    fn col(&self) -> usize {
        self.offset + self.pos + 1
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_separators(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() || c == ',' {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn word(&mut self) -> Token {
        let col = self.col();
        let start = self.pos;
        while self.peek().map(is_word_char).unwrap_or(false) {
            self.pos += 1;
        }
        Token::Word(self.chars[start..self.pos].iter().collect(), col)
    }

    fn token(&mut self) -> PResult<Token> {
        let col = self.col();
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                Ok(Token::Tuple(self.items_until(')', '(')?, col))
            }
            Some('{') => {
                self.pos += 1;
                Ok(Token::Set(self.items_until('}', '{')?, col))
            }
            Some('[') => {
                self.pos += 1;
                self.matrix(col)
            }
            Some(c @ (')' | '}' | ']' | ';')) => {
                Err(ParseError::at(self.line, col, format!("unexpected `{c}`")))
            }
            Some(_) => Ok(self.word()),
            None => Err(ParseError::at(self.line, col, "expected a value")),
        }
    }

    fn items_until(&mut self, close: char, open: char) -> PResult<Vec<Token>> {
        let mut items = Vec::new();
        loop {
            self.skip_separators();
            match self.peek() {
                Some(c) if c == close => {
                    self.pos += 1;
                    return Ok(items);
                }
                Some(_) => items.push(self.token()?),
                None => {
                    return Err(ParseError::at(
                        self.line,
                        self.col(),
                        format!("unclosed `{open}`"),
                    ))
                }
            }
        }
    }

    fn matrix(&mut self, col: usize) -> PResult<Token> {
        let mut rows: Vec<Vec<Token>> = vec![Vec::new()];
        loop {
            self.skip_separators();
            match self.peek() {
                Some(']') => {
                    self.pos += 1;
                    if rows.len() > 1 && rows.last().map(Vec::is_empty).unwrap_or(false) {
                        return Err(ParseError::at(self.line, self.col(), "empty matrix row"));
                    }
                    return Ok(Token::Matrix(rows, col));
                }
                Some(';') => {
                    self.pos += 1;
                    if rows.last().map(Vec::is_empty).unwrap_or(true) {
                        return Err(ParseError::at(self.line, self.col(), "empty matrix row"));
                    }
                    rows.push(Vec::new());
                }
                Some(_) => rows.last_mut().expect("rows non-empty").push(self.token()?),
                None => {
                    return Err(ParseError::at(self.line, self.col(), "unclosed `[`"));
                }
            }
        }
    }
}

/// Tokenize one value string. `offset` is the 0-based column of `text`
/// within its line, so token columns point into the original line.
fn tokenize(text: &str, line: usize, offset: usize) -> PResult<Vec<Token>> {
    let mut t = Tokenizer {
        chars: text.chars().collect(),
        pos: 0,
        line,
        offset,
    };
    let mut out = Vec::new();
    loop {
        t.skip_separators();
        if t.peek().is_none() {
            return Ok(out);
        }
        out.push(t.token()?);
    }
}

// ---------------------------------------------------------------------------
// Raw sections
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct RawEntry {
    key: String,
    line: usize,
    key_col: usize,
    tokens: Vec<Token>,
}

#[derive(Debug)]
struct RawSection {
    kind: String,
    name: Option<String>,
    line: usize,
    col: usize,
    entries: Vec<RawEntry>,
}

const SECTION_KINDS: [&str; 8] = [
    "spaces",
    "initial",
    "tolerances",
    "lattice",
    "fock",
    "mixing",
    "step",
    "subsystem",
];

fn split_sections(text: &str) -> PResult<Vec<RawSection>> {
    let mut sections: Vec<RawSection> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let stripped = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let trimmed = stripped.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent_col = stripped.chars().take_while(|c| c.is_whitespace()).count() + 1;

        if let Some(rest) = trimmed.strip_prefix('[') {
            let inner = rest.strip_suffix(']').ok_or_else(|| {
                ParseError::at(line_no, indent_col, "section header must end with `]`")
            })?;
            let parts: Vec<&str> = inner.split_whitespace().collect();
            if parts.is_empty() {
                return Err(ParseError::at(line_no, indent_col, "empty section header"));
            }
            let kind = parts[0].to_string();
            if !SECTION_KINDS.contains(&kind.as_str()) {
                return Err(ParseError::at(
                    line_no,
                    indent_col,
                    format!("unknown section `[{kind}]`"),
                ));
            }
            let named = matches!(kind.as_str(), "step" | "subsystem");
            let name = match (named, parts.len()) {
                (true, 2) => Some(parts[1].to_string()),
                (true, _) => {
                    return Err(ParseError::at(
                        line_no,
                        indent_col,
                        format!("section [{kind}] needs exactly one name"),
                    ))
                }
                (false, 1) => None,
                (false, _) => {
                    return Err(ParseError::at(
                        line_no,
                        indent_col,
                        format!("section [{kind}] does not take a name"),
                    ))
                }
            };
            if !named && sections.iter().any(|s| s.kind == kind) {
                return Err(ParseError::at(
                    line_no,
                    indent_col,
                    format!("duplicate section [{kind}]"),
                ));
            }
            if let Some(n) = &name {
                if sections
                    .iter()
                    .any(|s| s.kind == kind && s.name.as_deref() == Some(n))
                {
                    return Err(ParseError::at(
                        line_no,
                        indent_col,
                        format!("duplicate {kind} name `{n}`"),
                    ));
                }
            }
            sections.push(RawSection {
                kind,
                name,
                line: line_no,
                col: indent_col,
                entries: Vec::new(),
            });
            continue;
        }

        let section = sections.last_mut().ok_or_else(|| {
            ParseError::at(line_no, indent_col, "entry outside any section")
        })?;
        let eq = stripped.find('=').ok_or_else(|| {
            ParseError::at(line_no, indent_col, "expected `key = value`")
        })?;
        let key = stripped[..eq].trim().to_string();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
            return Err(ParseError::at(
                line_no,
                indent_col,
                format!("invalid key `{key}` (lowercase identifiers only)"),
            ));
        }
        if section.entries.iter().any(|e| e.key == key) {
            return Err(ParseError::at(
                line_no,
                indent_col,
                format!("duplicate key `{key}`"),
            ));
        }
        let value = &stripped[eq + 1..];
        let value_offset = stripped[..eq + 1].chars().count();
        let tokens = tokenize(value, line_no, value_offset)?;
        if tokens.is_empty() {
            return Err(ParseError::at(
                line_no,
                indent_col,
                format!("key `{key}` has no value"),
            ));
        }
        section.entries.push(RawEntry {
            key,
            line: line_no,
            key_col: indent_col,
            tokens,
        });
    }
    Ok(sections)
}

// ---------------------------------------------------------------------------
// Typed configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpacesSpec {
    /// Tensor-factor dimensions, most significant first.
    Factors(Vec<usize>),
    /// The ambient space is the truncated Fock space from `[fock]`.
    Fock,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Basis(usize),
    Amplitudes(Vec<Amplitude>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSection {
    pub extents: Vec<usize>,
    pub spacing: f64,
    pub mass: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FockSection {
    pub types: usize,
    pub n_max: u32,
    pub sites: Vec<Vec<i64>>,
    pub coupling: Amplitude,
    /// `(type index, true = creation)`, in application order right-to-left.
    pub legs: Vec<(usize, bool)>,
    pub primed: bool,
    pub masks: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpSpec {
    Identity,
    /// `(control factor, target factor)`: target shifts by the control
    /// digit (the CNOT when both factors are qubits).
    ControlledFlip(usize, usize),
    /// Diagonal `e^{iθ_k}`, one angle per basis state.
    Phase(Vec<f64>),
    /// Basis images: `U|j⟩ = |images[j]⟩`.
    Permutation(Vec<usize>),
    Matrix(Vec<Vec<Amplitude>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSection {
    pub name: String,
    pub op: OpSpec,
    /// Breakpoint projector family: disjoint basis-index sets covering the
    /// whole space.
    pub family: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemSection {
    pub name: String,
    /// Absent on the first (in-state) subsystem.
    pub op: Option<OpSpec>,
    /// Outcome sets for labels `1..=K`; label 0 is the complement.
    pub family: Vec<Vec<usize>>,
    /// Supplied correlation map (entry per predecessor label, including 0).
    pub map: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub spaces: SpacesSpec,
    pub initial: Option<InitialSpec>,
    pub tolerances: Vec<(String, f64)>,
    pub lattice: Option<LatticeSection>,
    pub fock: Option<FockSection>,
    pub mixing: Option<Vec<Vec<Amplitude>>>,
    pub steps: Vec<StepSection>,
    pub subsystems: Vec<SubsystemSection>,
}

const TOLERANCE_KEYS: [&str; 4] = [
    "consistency",
    "cross_term",
    "reconstruction",
    "orthogonality",
];

// --- token converters -------------------------------------------------------

fn expect_word<'t>(t: &'t Token, line: usize) -> PResult<&'t str> {
    match t {
        Token::Word(w, _) => Ok(w),
        other => Err(ParseError::at(
            line,
            other.col(),
            format!("expected a plain value, got a {}", other.kind()),
        )),
    }
}

fn parse_usize(t: &Token, line: usize) -> PResult<usize> {
    let w = expect_word(t, line)?;
    w.parse::<usize>().map_err(|_| {
        ParseError::at(line, t.col(), format!("expected a non-negative integer, got `{w}`"))
    })
}

fn parse_i64(t: &Token, line: usize) -> PResult<i64> {
    let w = expect_word(t, line)?;
    w.parse::<i64>()
        .map_err(|_| ParseError::at(line, t.col(), format!("expected an integer, got `{w}`")))
}

fn parse_f64(t: &Token, line: usize) -> PResult<f64> {
    let w = expect_word(t, line)?;
    let v = w
        .parse::<f64>()
        .map_err(|_| ParseError::at(line, t.col(), format!("expected a number, got `{w}`")))?;
    if !v.is_finite() {
        return Err(ParseError::at(line, t.col(), "number must be finite"));
    }
    Ok(v)
}

fn parse_bool(t: &Token, line: usize) -> PResult<bool> {
    match expect_word(t, line)? {
        "true" => Ok(true),
        "false" => Ok(false),
        w => Err(ParseError::at(
            line,
            t.col(),
            format!("expected `true` or `false`, got `{w}`"),
        )),
    }
}

/// A scalar amplitude: a bare real or a `(re, im)` pair.
fn parse_scalar(t: &Token, line: usize) -> PResult<Amplitude> {
    match t {
        Token::Word(..) => Ok(Amplitude::new(parse_f64(t, line)?, 0.0)),
        Token::Tuple(items, col) => {
            if items.len() != 2 {
                return Err(ParseError::at(
                    line,
                    *col,
                    format!("complex literal needs `(re, im)`, got {} components", items.len()),
                ));
            }
            Ok(Amplitude::new(
                parse_f64(&items[0], line)?,
                parse_f64(&items[1], line)?,
            ))
        }
        other => Err(ParseError::at(
            line,
            other.col(),
            format!("expected a number or `(re, im)`, got a {}", other.kind()),
        )),
    }
}

/// A `{i, j, ...}` set of distinct basis indices.
fn parse_index_set(t: &Token, line: usize) -> PResult<Vec<usize>> {
    match t {
        Token::Set(items, col) => {
            if items.is_empty() {
                return Err(ParseError::at(line, *col, "index set cannot be empty"));
            }
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                let i = parse_usize(item, line)?;
                if out.contains(&i) {
                    return Err(ParseError::at(
                        line,
                        item.col(),
                        format!("index {i} repeated in set"),
                    ));
                }
                out.push(i);
            }
            Ok(out)
        }
        other => Err(ParseError::at(
            line,
            other.col(),
            format!("expected an index set `{{..}}`, got a {}", other.kind()),
        )),
    }
}

fn parse_matrix(t: &Token, line: usize) -> PResult<Vec<Vec<Amplitude>>> {
    match t {
        Token::Matrix(rows, col) => {
            if rows.iter().all(Vec::is_empty) {
                return Err(ParseError::at(line, *col, "matrix cannot be empty"));
            }
            let width = rows[0].len();
            let mut out = Vec::with_capacity(rows.len());
            for row in rows {
                if row.len() != width {
                    return Err(ParseError::at(
                        line,
                        *col,
                        format!(
                            "ragged matrix: row with {} entries after a row with {width}",
                            row.len()
                        ),
                    ));
                }
                out.push(row.iter().map(|e| parse_scalar(e, line)).collect::<PResult<_>>()?);
            }
            Ok(out)
        }
        other => Err(ParseError::at(
            line,
            other.col(),
            format!("expected a matrix `[..; ..]`, got a {}", other.kind()),
        )),
    }
}

/// `+T` (creation) or `-T` (annihilation) for particle-type index `T`.
fn parse_leg(t: &Token, line: usize) -> PResult<(usize, bool)> {
    let w = expect_word(t, line)?;
    let (create, rest) = match w.split_at_checked(1) {
        Some(("+", rest)) => (true, rest),
        Some(("-", rest)) => (false, rest),
        _ => {
            return Err(ParseError::at(
                line,
                t.col(),
                format!("leg must be `+TYPE` or `-TYPE`, got `{w}`"),
            ))
        }
    };
    let ty = rest.parse::<usize>().map_err(|_| {
        ParseError::at(line, t.col(), format!("leg type in `{w}` is not an integer"))
    })?;
    Ok((ty, create))
}

fn single<'t>(e: &'t RawEntry) -> PResult<&'t Token> {
    if e.tokens.len() != 1 {
        return Err(ParseError::at(
            e.line,
            e.key_col,
            format!("key `{}` takes a single value, got {}", e.key, e.tokens.len()),
        ));
    }
    Ok(&e.tokens[0])
}

// --- section assembly --------------------------------------------------------

fn unknown_key(section: &str, e: &RawEntry) -> ParseError {
    ParseError::at(
        e.line,
        e.key_col,
        format!("unknown key `{}` in [{section}]", e.key),
    )
}

fn require<'s, T>(opt: &'s Option<T>, section: &RawSection, key: &str) -> PResult<&'s T> {
    opt.as_ref().ok_or_else(|| {
        ParseError::at(
            section.line,
            section.col,
            format!("section [{}] is missing required key `{key}`", section.kind),
        )
    })
}

fn parse_op(e: &RawEntry, section_path: &str) -> PResult<OpSpec> {
    let head = expect_word(&e.tokens[0], e.line)?;
    let args = &e.tokens[1..];
    let need = |n: usize, what: &str| -> PResult<()> {
        if args.len() != n {
            Err(ParseError::at(
                e.line,
                e.tokens[0].col(),
                format!("`{head}` takes {what}, got {} arguments", args.len()),
            ))
        } else {
            Ok(())
        }
    };
    match head {
        "identity" => {
            need(0, "no arguments")?;
            Ok(OpSpec::Identity)
        }
        "controlled-flip" => {
            need(2, "control and target factor indices")?;
            Ok(OpSpec::ControlledFlip(
                parse_usize(&args[0], e.line)?,
                parse_usize(&args[1], e.line)?,
            ))
        }
        "phase" => {
            if args.is_empty() {
                return Err(ParseError::at(
                    e.line,
                    e.tokens[0].col(),
                    "`phase` needs one angle per basis state",
                ));
            }
            Ok(OpSpec::Phase(
                args.iter().map(|t| parse_f64(t, e.line)).collect::<PResult<_>>()?,
            ))
        }
        "permutation" => {
            if args.is_empty() {
                return Err(ParseError::at(
                    e.line,
                    e.tokens[0].col(),
                    "`permutation` needs one image per basis state",
                ));
            }
            Ok(OpSpec::Permutation(
                args.iter().map(|t| parse_usize(t, e.line)).collect::<PResult<_>>()?,
            ))
        }
        "matrix" => {
            need(1, "one matrix literal")?;
            Ok(OpSpec::Matrix(parse_matrix(&args[0], e.line)?))
        }
        other => Err(ParseError::at(
            e.line,
            e.tokens[0].col(),
            format!(
                "unknown operator `{other}` in {section_path} \
                 (expected identity, controlled-flip, phase, permutation, or matrix)"
            ),
        )),
    }
}

/// Parse and fully validate a scenario document.
pub fn parse_scenario(text: &str) -> PResult<ScenarioConfig> {
    let sections = split_sections(text)?;

    let mut spaces: Option<(SpacesSpec, usize, usize)> = None;
    let mut initial: Option<InitialSpec> = None;
    let mut initial_pos = (0usize, 0usize);
    let mut tolerances: Vec<(String, f64)> = Vec::new();
    let mut lattice: Option<LatticeSection> = None;
    let mut fock: Option<FockSection> = None;
    let mut fock_pos = (0usize, 0usize);
    let mut mixing: Option<Vec<Vec<Amplitude>>> = None;
    let mut mixing_pos = (0usize, 0usize);
    let mut steps: Vec<StepSection> = Vec::new();
    let mut step_pos: Vec<(usize, usize)> = Vec::new();
    let mut subsystems: Vec<SubsystemSection> = Vec::new();
    let mut subsystem_pos: Vec<(usize, usize)> = Vec::new();

    for section in &sections {
        match section.kind.as_str() {
            "spaces" => {
                let mut dims: Option<(SpacesSpec, usize, usize)> = None;
                for e in &section.entries {
                    match e.key.as_str() {
                        "dims" => {
                            let spec = if e.tokens.len() == 1
                                && matches!(&e.tokens[0], Token::Word(w, _) if w == "fock")
                            {
                                SpacesSpec::Fock
                            } else {
                                let mut out = Vec::with_capacity(e.tokens.len());
                                for t in &e.tokens {
                                    let d = parse_usize(t, e.line)?;
                                    if d == 0 {
                                        return Err(ParseError::at(
                                            e.line,
                                            t.col(),
                                            "factor dimension must be at least 1",
                                        ));
                                    }
                                    out.push(d);
                                }
                                SpacesSpec::Factors(out)
                            };
                            dims = Some((spec, e.line, e.key_col));
                        }
                        _ => return Err(unknown_key("spaces", e)),
                    }
                }
                spaces = Some(match dims {
                    Some(d) => d,
                    None => {
                        return Err(ParseError::at(
                            section.line,
                            section.col,
                            "section [spaces] is missing required key `dims`",
                        ))
                    }
                });
            }
            "initial" => {
                let mut basis: Option<usize> = None;
                let mut amplitudes: Option<Vec<Amplitude>> = None;
                initial_pos = (section.line, section.col);
                for e in &section.entries {
                    match e.key.as_str() {
                        "basis" => basis = Some(parse_usize(single(e)?, e.line)?),
                        "amplitudes" => {
                            amplitudes = Some(
                                e.tokens
                                    .iter()
                                    .map(|t| parse_scalar(t, e.line))
                                    .collect::<PResult<_>>()?,
                            )
                        }
                        _ => return Err(unknown_key("initial", e)),
                    }
                }
                initial = Some(match (basis, amplitudes) {
                    (Some(b), None) => InitialSpec::Basis(b),
                    (None, Some(a)) => InitialSpec::Amplitudes(a),
                    _ => {
                        return Err(ParseError::at(
                            section.line,
                            section.col,
                            "section [initial] needs exactly one of `basis` or `amplitudes`",
                        ))
                    }
                });
            }
            "tolerances" => {
                for e in &section.entries {
                    if !TOLERANCE_KEYS.contains(&e.key.as_str()) {
                        return Err(unknown_key("tolerances", e));
                    }
                    let v = parse_f64(single(e)?, e.line)?;
                    if v <= 0.0 {
                        return Err(ParseError::at(
                            e.line,
                            e.key_col,
                            format!("tolerance `{}` must be positive", e.key),
                        ));
                    }
                    tolerances.push((e.key.clone(), v));
                }
            }
            "lattice" => {
                let mut extents: Option<Vec<usize>> = None;
                let mut spacing = None;
                let mut mass = None;
                let mut epsilon = None;
                for e in &section.entries {
                    match e.key.as_str() {
                        "extents" => {
                            extents = Some(
                                e.tokens
                                    .iter()
                                    .map(|t| parse_usize(t, e.line))
                                    .collect::<PResult<_>>()?,
                            )
                        }
                        "spacing" => spacing = Some(parse_f64(single(e)?, e.line)?),
                        "mass" => mass = Some(parse_f64(single(e)?, e.line)?),
                        "epsilon" => epsilon = Some(parse_f64(single(e)?, e.line)?),
                        _ => return Err(unknown_key("lattice", e)),
                    }
                }
                lattice = Some(LatticeSection {
                    extents: require(&extents, section, "extents")?.clone(),
                    spacing: *require(&spacing, section, "spacing")?,
                    mass: *require(&mass, section, "mass")?,
                    epsilon: *require(&epsilon, section, "epsilon")?,
                });
            }
            "fock" => {
                let mut types = None;
                let mut n_max = None;
                let mut sites: Option<Vec<Vec<i64>>> = None;
                let mut coupling = None;
                let mut legs: Option<Vec<(usize, bool)>> = None;
                let mut primed = None;
                let mut masks: Vec<Vec<usize>> = Vec::new();
                fock_pos = (section.line, section.col);
                for e in &section.entries {
                    match e.key.as_str() {
                        "types" => types = Some(parse_usize(single(e)?, e.line)?),
                        "n_max" => n_max = Some(parse_usize(single(e)?, e.line)? as u32),
                        "sites" => {
                            let mut out = Vec::with_capacity(e.tokens.len());
                            for t in &e.tokens {
                                match t {
                                    Token::Tuple(items, _) => out.push(
                                        items
                                            .iter()
                                            .map(|i| parse_i64(i, e.line))
                                            .collect::<PResult<Vec<i64>>>()?,
                                    ),
                                    other => {
                                        return Err(ParseError::at(
                                            e.line,
                                            other.col(),
                                            "each site is a coordinate tuple `(t, x, ...)`",
                                        ))
                                    }
                                }
                            }
                            sites = Some(out);
                        }
                        "coupling" => coupling = Some(parse_scalar(single(e)?, e.line)?),
                        "legs" => {
                            legs = Some(
                                e.tokens
                                    .iter()
                                    .map(|t| parse_leg(t, e.line))
                                    .collect::<PResult<_>>()?,
                            )
                        }
                        "primed" => primed = Some(parse_bool(single(e)?, e.line)?),
                        "masks" => {
                            for t in &e.tokens {
                                masks.push(parse_index_set(t, e.line)?);
                            }
                        }
                        _ => return Err(unknown_key("fock", e)),
                    }
                }
                fock = Some(FockSection {
                    types: *require(&types, section, "types")?,
                    n_max: *require(&n_max, section, "n_max")?,
                    sites: require(&sites, section, "sites")?.clone(),
                    coupling: *require(&coupling, section, "coupling")?,
                    legs: require(&legs, section, "legs")?.clone(),
                    primed: *require(&primed, section, "primed")?,
                    masks,
                });
            }
            "mixing" => {
                mixing_pos = (section.line, section.col);
                let mut matrix = None;
                for e in &section.entries {
                    match e.key.as_str() {
                        "matrix" => matrix = Some(parse_matrix(single(e)?, e.line)?),
                        _ => return Err(unknown_key("mixing", e)),
                    }
                }
                let m = require(&matrix, section, "matrix")?.clone();
                if m.len() != m[0].len() {
                    return Err(ParseError::at(
                        section.line,
                        section.col,
                        format!("mixing matrix must be square, got {}×{}", m.len(), m[0].len()),
                    ));
                }
                mixing = Some(m);
            }
            "step" => {
                let name = section.name.clone().expect("named section");
                let path = format!("step '{name}'");
                let mut op = None;
                let mut family: Option<Vec<Vec<usize>>> = None;
                for e in &section.entries {
                    match e.key.as_str() {
                        "op" => op = Some(parse_op(e, &path)?),
                        "family" => {
                            family = Some(
                                e.tokens
                                    .iter()
                                    .map(|t| parse_index_set(t, e.line))
                                    .collect::<PResult<_>>()?,
                            )
                        }
                        _ => return Err(unknown_key("step", e)),
                    }
                }
                steps.push(StepSection {
                    name,
                    op: require(&op, section, "op")?.clone(),
                    family: require(&family, section, "family")?.clone(),
                });
                step_pos.push((section.line, section.col));
            }
            "subsystem" => {
                let name = section.name.clone().expect("named section");
                let path = format!("subsystem '{name}'");
                let mut op = None;
                let mut family: Option<Vec<Vec<usize>>> = None;
                let mut map: Option<Vec<usize>> = None;
                for e in &section.entries {
                    match e.key.as_str() {
                        "op" => op = Some(parse_op(e, &path)?),
                        "family" => {
                            family = Some(
                                e.tokens
                                    .iter()
                                    .map(|t| parse_index_set(t, e.line))
                                    .collect::<PResult<_>>()?,
                            )
                        }
                        "map" => {
                            map = Some(
                                e.tokens
                                    .iter()
                                    .map(|t| parse_usize(t, e.line))
                                    .collect::<PResult<_>>()?,
                            )
                        }
                        _ => return Err(unknown_key("subsystem", e)),
                    }
                }
                subsystems.push(SubsystemSection {
                    name,
                    op,
                    family: require(&family, section, "family")?.clone(),
                    map,
                });
                subsystem_pos.push((section.line, section.col));
            }
            _ => unreachable!("section kinds are vetted in split_sections"),
        }
    }

    let (spaces, spaces_line, spaces_col) = spaces.ok_or_else(|| {
        ParseError::document("missing required section: spaces")
    })?;

    let config = ScenarioConfig {
        spaces,
        initial,
        tolerances,
        lattice,
        fock,
        mixing,
        steps,
        subsystems,
    };
    cross_validate(
        &config,
        (spaces_line, spaces_col),
        initial_pos,
        fock_pos,
        mixing_pos,
        &step_pos,
        &subsystem_pos,
    )?;
    Ok(config)
}

/// Cross-section consistency: everything that needs more than one section.
#[allow(clippy::too_many_arguments)]
fn cross_validate(
    c: &ScenarioConfig,
    spaces_pos: (usize, usize),
    initial_pos: (usize, usize),
    fock_pos: (usize, usize),
    mixing_pos: (usize, usize),
    step_pos: &[(usize, usize)],
    subsystem_pos: &[(usize, usize)],
) -> PResult<()> {
    let dim = match &c.spaces {
        SpacesSpec::Factors(dims) => {
            let mut product = 1usize;
            for &d in dims {
                product = product.checked_mul(d).unwrap_or(usize::MAX);
            }
            if product > DEFAULT_DIM_CAP {
                return Err(ParseError::at(
                    spaces_pos.0,
                    spaces_pos.1,
                    format!("total dimension {product} exceeds the cap of {DEFAULT_DIM_CAP}"),
                ));
            }
            Some(product)
        }
        SpacesSpec::Fock => {
            if c.fock.is_none() {
                return Err(ParseError::at(
                    spaces_pos.0,
                    spaces_pos.1,
                    "`dims = fock` needs a [fock] section",
                ));
            }
            None
        }
    };

    if let Some(initial) = &c.initial {
        let dim = dim.ok_or_else(|| {
            ParseError::at(
                initial_pos.0,
                initial_pos.1,
                "[initial] needs factor dims in [spaces]",
            )
        })?;
        match initial {
            InitialSpec::Basis(b) => {
                if *b >= dim {
                    return Err(ParseError::at(
                        initial_pos.0,
                        initial_pos.1,
                        format!("basis index {b} out of range for dimension {dim}"),
                    ));
                }
            }
            InitialSpec::Amplitudes(a) => {
                if a.len() != dim {
                    return Err(ParseError::at(
                        initial_pos.0,
                        initial_pos.1,
                        format!("{} amplitudes for dimension {dim}", a.len()),
                    ));
                }
                let norm: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(ParseError::at(
                        initial_pos.0,
                        initial_pos.1,
                        format!("initial amplitudes have norm {norm:.12}, expected 1"),
                    ));
                }
            }
        }
    }

    if (!c.steps.is_empty() || !c.subsystems.is_empty()) && dim.is_none() {
        let pos = step_pos.first().or(subsystem_pos.first()).expect("non-empty");
        return Err(ParseError::at(
            pos.0,
            pos.1,
            "[step]/[subsystem] sections need factor dims in [spaces]",
        ));
    }

    for (step, pos) in c.steps.iter().zip(step_pos) {
        let dim = dim.expect("checked above");
        let path = format!("step '{}'", step.name);
        check_op(&step.op, c, dim, *pos, &path)?;
        check_family_sets(&step.family, dim, true, *pos, &path)?;
    }

    if c.subsystems.len() == 1 {
        return Err(ParseError::at(
            subsystem_pos[0].0,
            subsystem_pos[0].1,
            "a chain needs at least two subsystems (in-state plus one link)",
        ));
    }
    for (i, (sub, pos)) in c.subsystems.iter().zip(subsystem_pos).enumerate() {
        let dim = dim.expect("checked above");
        let path = format!("subsystem '{}'", sub.name);
        check_family_sets(&sub.family, dim, false, *pos, &path)?;
        if i == 0 {
            if sub.op.is_some() {
                return Err(ParseError::at(
                    pos.0,
                    pos.1,
                    format!("{path}: the first subsystem is the in-state slot and takes no `op`"),
                ));
            }
            if sub.map.is_some() {
                return Err(ParseError::at(
                    pos.0,
                    pos.1,
                    format!("{path}: the first subsystem has no predecessor and takes no `map`"),
                ));
            }
        } else {
            let op = sub.op.as_ref().ok_or_else(|| {
                ParseError::at(pos.0, pos.1, format!("{path} is missing required key `op`"))
            })?;
            check_op(op, c, dim, *pos, &path)?;
            if let Some(map) = &sub.map {
                let prev_labels = c.subsystems[i - 1].family.len() + 1;
                if map.len() != prev_labels {
                    return Err(ParseError::at(
                        pos.0,
                        pos.1,
                        format!(
                            "{path}: map has {} entries for {prev_labels} predecessor labels \
                             (label 0 included)",
                            map.len()
                        ),
                    ));
                }
                let cur_labels = sub.family.len() + 1;
                if let Some(bad) = map.iter().find(|&&l| l >= cur_labels) {
                    return Err(ParseError::at(
                        pos.0,
                        pos.1,
                        format!("{path}: map target {bad} outside 0..{cur_labels}"),
                    ));
                }
            }
        }
    }

    if let Some(m) = &c.mixing {
        if let Some(first) = c.subsystems.first() {
            if m.len() != first.family.len() {
                return Err(ParseError::at(
                    mixing_pos.0,
                    mixing_pos.1,
                    format!(
                        "mixing is {}×{} but the in-state family has {} outcomes",
                        m.len(),
                        m.len(),
                        first.family.len()
                    ),
                ));
            }
        }
        for (i, row) in m.iter().enumerate() {
            let row_sum: Amplitude = row.iter().sum();
            let col_sum: Amplitude = m.iter().map(|r| r[i]).sum();
            let one = Amplitude::new(1.0, 0.0);
            if (row_sum - one).norm() > 1e-12 || (col_sum - one).norm() > 1e-12 {
                return Err(ParseError::at(
                    mixing_pos.0,
                    mixing_pos.1,
                    format!("mixing rows and columns must sum to 1; row/column {i} do not"),
                ));
            }
        }
    }

    if let Some(f) = &c.fock {
        let lattice = c.lattice.as_ref().ok_or_else(|| {
            ParseError::at(
                fock_pos.0,
                fock_pos.1,
                "[fock] needs a [lattice] section for the smearing table",
            )
        })?;
        if f.types == 0 {
            return Err(ParseError::at(fock_pos.0, fock_pos.1, "types must be at least 1"));
        }
        if f.n_max == 0 {
            return Err(ParseError::at(fock_pos.0, fock_pos.1, "n_max must be at least 1"));
        }
        for site in &f.sites {
            if site.len() != lattice.extents.len() {
                return Err(ParseError::at(
                    fock_pos.0,
                    fock_pos.1,
                    format!(
                        "site {:?} has {} coordinates for a {}-axis lattice",
                        site,
                        site.len(),
                        lattice.extents.len()
                    ),
                ));
            }
        }
        if f.legs.is_empty() {
            return Err(ParseError::at(fock_pos.0, fock_pos.1, "legs cannot be empty"));
        }
        if let Some(bad) = f.legs.iter().find(|(ty, _)| *ty >= f.types) {
            return Err(ParseError::at(
                fock_pos.0,
                fock_pos.1,
                format!("leg type {} out of range for {} types", bad.0, f.types),
            ));
        }
        for mask in &f.masks {
            if let Some(bad) = mask.iter().find(|&&s| s >= f.sites.len()) {
                return Err(ParseError::at(
                    fock_pos.0,
                    fock_pos.1,
                    format!("mask site {bad} out of range for {} sites", f.sites.len()),
                ));
            }
        }
    }

    Ok(())
}

fn check_op(
    op: &OpSpec,
    c: &ScenarioConfig,
    dim: usize,
    pos: (usize, usize),
    path: &str,
) -> PResult<()> {
    let fail = |msg: String| ParseError::at(pos.0, pos.1, format!("{path}: {msg}"));
    match op {
        OpSpec::Identity => Ok(()),
        OpSpec::ControlledFlip(control, target) => {
            let n = match &c.spaces {
                SpacesSpec::Factors(dims) => dims.len(),
                SpacesSpec::Fock => unreachable!("factor dims checked before ops"),
            };
            if *control >= n || *target >= n {
                return Err(fail(format!(
                    "controlled-flip factors ({control}, {target}) out of range for {n} factors"
                )));
            }
            if control == target {
                return Err(fail("controlled-flip control and target must differ".into()));
            }
            Ok(())
        }
        OpSpec::Phase(angles) => {
            if angles.len() != dim {
                return Err(fail(format!(
                    "phase has {} angles for dimension {dim}",
                    angles.len()
                )));
            }
            Ok(())
        }
        OpSpec::Permutation(images) => {
            if images.len() != dim {
                return Err(fail(format!(
                    "permutation has {} images for dimension {dim}",
                    images.len()
                )));
            }
            Ok(())
        }
        OpSpec::Matrix(rows) => {
            if rows.len() != dim || rows[0].len() != dim {
                return Err(fail(format!(
                    "matrix is {}×{} for dimension {dim}",
                    rows.len(),
                    rows[0].len()
                )));
            }
            Ok(())
        }
    }
}

fn check_family_sets(
    sets: &[Vec<usize>],
    dim: usize,
    require_cover: bool,
    pos: (usize, usize),
    path: &str,
) -> PResult<()> {
    let fail = |msg: String| ParseError::at(pos.0, pos.1, format!("{path}: {msg}"));
    let mut seen = vec![false; dim];
    for set in sets {
        for &i in set {
            if i >= dim {
                return Err(fail(format!("family index {i} out of range for dimension {dim}")));
            }
            if seen[i] {
                return Err(fail(format!("family sets overlap at index {i}")));
            }
            seen[i] = true;
        }
    }
    if require_cover {
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(fail(format!(
                "family sets must cover every basis index; index {missing} is unassigned"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Builders: scenario → core objects
// ---------------------------------------------------------------------------

fn core_err(path: &str) -> impl Fn(conhist::Error) -> ParseError + '_ {
    move |e| ParseError::field(path, e.to_string())
}

impl ScenarioConfig {
    pub fn factor_dims(&self) -> PResult<&[usize]> {
        match &self.spaces {
            SpacesSpec::Factors(dims) => Ok(dims),
            SpacesSpec::Fock => Err(ParseError::field(
                "spaces",
                "this command needs factor dims, not a fock space",
            )),
        }
    }

    pub fn total_dim(&self) -> PResult<usize> {
        Ok(self.factor_dims()?.iter().product())
    }

    /// The named tolerance, or the command default when absent.
    pub fn tolerance(&self, name: &str, default: f64) -> f64 {
        self.tolerances
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .unwrap_or(default)
    }

    pub fn initial_state(&self) -> PResult<StateVector> {
        let dim = self.total_dim()?;
        match &self.initial {
            Some(InitialSpec::Basis(b)) => {
                StateVector::basis_state(dim, *b).map_err(core_err("initial.basis"))
            }
            Some(InitialSpec::Amplitudes(a)) => Ok(StateVector::from_amplitudes(a.clone())),
            None => Err(ParseError::field(
                "initial",
                "this command needs an [initial] section",
            )),
        }
    }

    fn operator(&self, op: &OpSpec, path: &str) -> PResult<LinearOperator> {
        let dims = self.factor_dims()?;
        let dim = dims.iter().product();
        let fail = core_err(path);
        match op {
            OpSpec::Identity => Ok(LinearOperator::identity(dim)),
            OpSpec::ControlledFlip(control, target) => {
                controlled_shift(dims, *control, *target).map_err(fail)
            }
            OpSpec::Phase(angles) => {
                let entries: Vec<Amplitude> = angles
                    .iter()
                    .map(|&a| Amplitude::new(a.cos(), a.sin()))
                    .collect();
                Ok(LinearOperator::diagonal(&entries))
            }
            OpSpec::Permutation(images) => LinearOperator::permutation(images).map_err(fail),
            OpSpec::Matrix(rows) => {
                let mut arr = Array2::zeros((rows.len(), rows[0].len()));
                for (i, row) in rows.iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        arr[[i, j]] = v;
                    }
                }
                LinearOperator::from_array(arr).map_err(fail)
            }
        }
    }

    /// Evolution schedule and breakpoint families from the `[step]`
    /// sections, with implicit unit-spaced times.
    pub fn history_model(&self) -> PResult<(EvolutionSchedule, HistoryFamily)> {
        if self.steps.is_empty() {
            return Err(ParseError::field(
                "step",
                "this command needs at least one [step] section",
            ));
        }
        let dim = self.total_dim()?;
        let mut ops = Vec::with_capacity(self.steps.len());
        let mut slots = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            let path = format!("step '{}'", step.name);
            ops.push(self.operator(&step.op, &path)?);
            slots.push(
                ProjectorFamily::from_basis_sets(dim, &step.family)
                    .map_err(|e| ParseError::field(format!("{path}.family"), e.to_string()))?,
            );
        }
        let times: Vec<f64> = (0..=self.steps.len()).map(|k| k as f64).collect();
        let schedule =
            EvolutionSchedule::new(times, ops).map_err(|e| ParseError::field("step", e.to_string()))?;
        let family =
            HistoryFamily::new(slots).map_err(|e| ParseError::field("step", e.to_string()))?;
        Ok((schedule, family))
    }

    fn outcome_family(&self, sets: &[Vec<usize>], path: &str) -> PResult<OutcomeFamily> {
        let dim = self.total_dim()?;
        let mut projectors = Vec::with_capacity(sets.len() + 1);
        let mut complement = LinearOperator::identity(dim);
        for set in sets {
            let entries: Vec<Amplitude> = (0..dim)
                .map(|i| Amplitude::new(if set.contains(&i) { 1.0 } else { 0.0 }, 0.0))
                .collect();
            let p = LinearOperator::diagonal(&entries);
            complement = complement.sub(&p);
            projectors.push(p);
        }
        projectors.insert(0, complement);
        OutcomeFamily::new(projectors).map_err(core_err(path))
    }

    /// Measurement chain from the `[subsystem]` sections: the first section
    /// is the in-state slot, the rest are interaction links.
    pub fn subsystem_model(&self) -> PResult<SubsystemModel> {
        if self.subsystems.len() < 2 {
            return Err(ParseError::field(
                "subsystem",
                "this command needs at least two [subsystem] sections",
            ));
        }
        let first = &self.subsystems[0];
        let initial_family =
            self.outcome_family(&first.family, &format!("subsystem '{}'.family", first.name))?;
        let mut links = Vec::with_capacity(self.subsystems.len() - 1);
        let mut maps = Vec::with_capacity(self.subsystems.len() - 1);
        for sub in &self.subsystems[1..] {
            let path = format!("subsystem '{}'", sub.name);
            let op = sub.op.as_ref().expect("validated at parse");
            links.push(Subsystem {
                name: sub.name.clone(),
                interaction: self.operator(op, &path)?,
                outcomes: self.outcome_family(&sub.family, &format!("{path}.family"))?,
            });
            maps.push(sub.map.clone());
        }
        SubsystemModel::new(initial_family, links, maps).map_err(core_err("subsystem"))
    }

    pub fn lattice_spec(&self) -> PResult<LatticeSpec> {
        let l = self.lattice.as_ref().ok_or_else(|| {
            ParseError::field("lattice", "this command needs a [lattice] section")
        })?;
        LatticeSpec::new(l.extents.clone(), l.spacing, l.mass, l.epsilon)
            .map_err(core_err("lattice"))
    }

    /// Field operators, vertex recipe, and hypervolume masks from the
    /// `[fock]` section, smeared through the `[lattice]` Feynman table.
    pub fn fock_setup(&self) -> PResult<(FieldOperators, VertexSpec, Vec<HypervolumeMask>)> {
        let f = self.fock.as_ref().ok_or_else(|| {
            ParseError::field("fock", "this command needs a [fock] section")
        })?;
        let lattice = self.lattice_spec()?;
        let table = feynman_propagator(&lattice).map_err(core_err("lattice"))?;
        let model = FockModel::new(f.types, f.sites.clone(), f.n_max, &table)
            .map_err(core_err("fock"))?;
        let fields = FieldOperators::new(model);
        let spec = VertexSpec {
            coupling: f.coupling,
            legs: f
                .legs
                .iter()
                .map(|&(ty, create)| {
                    (ty, if create { LegKind::Creation } else { LegKind::Annihilation })
                })
                .collect(),
            primed: f.primed,
        };
        let masks = f
            .masks
            .iter()
            .map(|m| HypervolumeMask::new(m.clone()).map_err(core_err("fock.masks")))
            .collect::<PResult<Vec<_>>>()?;
        Ok((fields, spec, masks))
    }

    pub fn mixing_matrix(&self) -> PResult<Array2<Amplitude>> {
        let m = self.mixing.as_ref().ok_or_else(|| {
            ParseError::field("mixing", "this command needs a [mixing] section")
        })?;
        let k = m.len();
        let mut arr = Array2::zeros((k, k));
        for (i, row) in m.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                arr[[i, j]] = v;
            }
        }
        Ok(arr)
    }
}

// ---------------------------------------------------------------------------
// Rendering (the round-trip inverse of parsing)
// ---------------------------------------------------------------------------

fn render_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn render_scalar(z: &Amplitude) -> String {
    if z.im == 0.0 {
        render_f64(z.re)
    } else {
        format!("({}, {})", render_f64(z.re), render_f64(z.im))
    }
}

fn render_sets(sets: &[Vec<usize>]) -> String {
    sets.iter()
        .map(|s| {
            let inner: Vec<String> = s.iter().map(usize::to_string).collect();
            format!("{{{}}}", inner.join(", "))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn render_matrix(rows: &[Vec<Amplitude>]) -> String {
    let body: Vec<String> = rows
        .iter()
        .map(|r| r.iter().map(render_scalar).collect::<Vec<_>>().join(", "))
        .collect();
    format!("[{}]", body.join("; "))
}

fn render_op(op: &OpSpec) -> String {
    match op {
        OpSpec::Identity => "identity".into(),
        OpSpec::ControlledFlip(c, t) => format!("controlled-flip {c} {t}"),
        OpSpec::Phase(angles) => {
            let a: Vec<String> = angles.iter().map(|&v| render_f64(v)).collect();
            format!("phase {}", a.join(" "))
        }
        OpSpec::Permutation(images) => {
            let a: Vec<String> = images.iter().map(usize::to_string).collect();
            format!("permutation {}", a.join(" "))
        }
        OpSpec::Matrix(rows) => format!("matrix {}", render_matrix(rows)),
    }
}

/// Serialize a configuration back to scenario text. `parse_scenario` of the
/// result equals the input configuration.
pub fn render_scenario(c: &ScenarioConfig) -> String {
    let mut out = String::new();
    out.push_str("[spaces]\n");
    match &c.spaces {
        SpacesSpec::Factors(dims) => {
            let d: Vec<String> = dims.iter().map(usize::to_string).collect();
            out.push_str(&format!("dims = {}\n", d.join(" ")));
        }
        SpacesSpec::Fock => out.push_str("dims = fock\n"),
    }
    if let Some(initial) = &c.initial {
        out.push_str("\n[initial]\n");
        match initial {
            InitialSpec::Basis(b) => out.push_str(&format!("basis = {b}\n")),
            InitialSpec::Amplitudes(a) => {
                let body: Vec<String> = a.iter().map(render_scalar).collect();
                out.push_str(&format!("amplitudes = {}\n", body.join(" ")));
            }
        }
    }
    if !c.tolerances.is_empty() {
        out.push_str("\n[tolerances]\n");
        for (name, v) in &c.tolerances {
            out.push_str(&format!("{name} = {}\n", render_f64(*v)));
        }
    }
    if let Some(l) = &c.lattice {
        out.push_str("\n[lattice]\n");
        let e: Vec<String> = l.extents.iter().map(usize::to_string).collect();
        out.push_str(&format!("extents = {}\n", e.join(" ")));
        out.push_str(&format!("spacing = {}\n", render_f64(l.spacing)));
        out.push_str(&format!("mass = {}\n", render_f64(l.mass)));
        out.push_str(&format!("epsilon = {}\n", render_f64(l.epsilon)));
    }
    if let Some(f) = &c.fock {
        out.push_str("\n[fock]\n");
        out.push_str(&format!("types = {}\n", f.types));
        out.push_str(&format!("n_max = {}\n", f.n_max));
        let sites: Vec<String> = f
            .sites
            .iter()
            .map(|s| {
                let inner: Vec<String> = s.iter().map(i64::to_string).collect();
                format!("({})", inner.join(", "))
            })
            .collect();
        out.push_str(&format!("sites = {}\n", sites.join(" ")));
        out.push_str(&format!("coupling = {}\n", render_scalar(&f.coupling)));
        let legs: Vec<String> = f
            .legs
            .iter()
            .map(|&(ty, create)| format!("{}{ty}", if create { "+" } else { "-" }))
            .collect();
        out.push_str(&format!("legs = {}\n", legs.join(" ")));
        out.push_str(&format!("primed = {}\n", f.primed));
        if !f.masks.is_empty() {
            out.push_str(&format!("masks = {}\n", render_sets(&f.masks)));
        }
    }
    if let Some(m) = &c.mixing {
        out.push_str("\n[mixing]\n");
        out.push_str(&format!("matrix = {}\n", render_matrix(m)));
    }
    for step in &c.steps {
        out.push_str(&format!("\n[step {}]\n", step.name));
        out.push_str(&format!("op = {}\n", render_op(&step.op)));
        out.push_str(&format!("family = {}\n", render_sets(&step.family)));
    }
    for sub in &c.subsystems {
        out.push_str(&format!("\n[subsystem {}]\n", sub.name));
        if let Some(op) = &sub.op {
            out.push_str(&format!("op = {}\n", render_op(op)));
        }
        out.push_str(&format!("family = {}\n", render_sets(&sub.family)));
        if let Some(map) = &sub.map {
            let body: Vec<String> = map.iter().map(usize::to_string).collect();
            out.push_str(&format!("map = {}\n", body.join(" ")));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_QUBIT: &str = "\
# pointer measurement
[spaces]
dims = 2 2

[initial]
amplitudes = 0.6 0 0.8 0

[subsystem S]
family = {0, 1} {2, 3}

[subsystem A]
op = controlled-flip 0 1
family = {0, 2} {1, 3}
map = 0 1 2
";

    #[test]
    fn minimal_two_qubit_scenario_parses() {
        let c = parse_scenario(TWO_QUBIT).unwrap();
        assert_eq!(c.spaces, SpacesSpec::Factors(vec![2, 2]));
        assert_eq!(c.subsystems.len(), 2);
        assert_eq!(c.subsystems[1].map, Some(vec![0, 1, 2]));
        let model = c.subsystem_model().unwrap();
        assert_eq!(model.dim(), 4);
        assert_eq!(model.link_count(), 1);
    }

    #[test]
    fn round_trip_preserves_the_config() {
        let c = parse_scenario(TWO_QUBIT).unwrap();
        let rendered = render_scenario(&c);
        let reparsed = parse_scenario(&rendered).unwrap();
        assert_eq!(c, reparsed);
    }

    #[test]
    fn empty_document_names_the_missing_section() {
        let err = parse_scenario("").unwrap_err();
        assert_eq!(err.to_string(), "missing required section: spaces");
        let err = parse_scenario("# only comments\n\n").unwrap_err();
        assert_eq!(err.to_string(), "missing required section: spaces");
    }

    #[test]
    fn unknown_key_is_rejected_with_position() {
        let text = "[spaces]\ndims = 2\n\n[initial]\n  basys = 0\n";
        let err = parse_scenario(text).unwrap_err();
        assert_eq!((err.line, err.col), (5, 3));
        assert!(err.msg.contains("unknown key `basys`"), "{err}");
    }

    #[test]
    fn unknown_section_and_bad_headers_are_rejected() {
        assert!(parse_scenario("[space]\n").unwrap_err().msg.contains("unknown section"));
        assert!(parse_scenario("[spaces\n").unwrap_err().msg.contains("end with `]`"));
        assert!(parse_scenario("[spaces extra]\n")
            .unwrap_err()
            .msg
            .contains("does not take a name"));
        assert!(parse_scenario("[subsystem]\n")
            .unwrap_err()
            .msg
            .contains("needs exactly one name"));
    }

    #[test]
    fn duplicate_subsystem_name_is_named() {
        let text = "\
[spaces]
dims = 2

[subsystem A]
family = {0}

[subsystem A]
op = identity
family = {1}
";
        let err = parse_scenario(text).unwrap_err();
        assert_eq!(err.line, 7);
        assert!(err.msg.contains("duplicate subsystem name `A`"), "{err}");
    }

    #[test]
    fn duplicate_keys_and_stray_entries_are_rejected() {
        let err = parse_scenario("[spaces]\ndims = 2\ndims = 2\n").unwrap_err();
        assert!(err.msg.contains("duplicate key `dims`"));
        let err = parse_scenario("dims = 2\n").unwrap_err();
        assert!(err.msg.contains("entry outside any section"));
        let err = parse_scenario("[spaces]\ndims\n").unwrap_err();
        assert!(err.msg.contains("expected `key = value`"));
    }

    #[test]
    fn tokenizer_handles_nested_literals() {
        let tokens = tokenize("(1, 2) {0, 1} [1, 0; 0, (0, 1)] word", 1, 0).unwrap();
        assert_eq!(tokens.len(), 4);
        assert!(matches!(&tokens[0], Token::Tuple(items, 1) if items.len() == 2));
        assert!(matches!(&tokens[1], Token::Set(items, _) if items.len() == 2));
        match &tokens[2] {
            Token::Matrix(rows, _) => {
                assert_eq!(rows.len(), 2);
                assert!(matches!(rows[1][1], Token::Tuple(..)));
            }
            other => panic!("expected matrix, got {other:?}"),
        }
        assert!(matches!(&tokens[3], Token::Word(w, _) if w == "word"));
    }

    #[test]
    fn tokenizer_rejects_unclosed_and_ragged_forms() {
        assert!(tokenize("(1, 2", 1, 0).unwrap_err().msg.contains("unclosed `(`"));
        assert!(tokenize("{0,", 1, 0).unwrap_err().msg.contains("unclosed `{`"));
        let err = parse_scenario("[spaces]\ndims = 2\n[mixing]\nmatrix = [1, 0; 1]\n").unwrap_err();
        assert!(err.msg.contains("ragged matrix"), "{err}");
    }

    #[test]
    fn family_coverage_rules_differ_between_steps_and_subsystems() {
        let step_text = "\
[spaces]
dims = 2

[initial]
basis = 0

[step u]
op = identity
family = {0}
";
        let err = parse_scenario(step_text).unwrap_err();
        assert!(err.msg.contains("index 1 is unassigned"), "{err}");

        // Subsystem families may leave a complement (label 0).
        let sub_text = "\
[spaces]
dims = 2

[subsystem S]
family = {0}

[subsystem A]
op = identity
family = {1}
";
        let c = parse_scenario(sub_text).unwrap();
        assert_eq!(c.subsystems[0].family, vec![vec![0]]);
    }

    #[test]
    fn map_length_is_checked_against_the_predecessor() {
        let text = "\
[spaces]
dims = 2 2

[subsystem S]
family = {0, 1} {2, 3}

[subsystem A]
op = controlled-flip 0 1
family = {0, 2} {1, 3}
map = 0 1
";
        let err = parse_scenario(text).unwrap_err();
        assert!(err.msg.contains("2 entries for 3 predecessor labels"), "{err}");
    }

    #[test]
    fn initial_norm_and_arity_are_validated() {
        let bad_norm = "[spaces]\ndims = 2\n[initial]\namplitudes = 1 1\n";
        assert!(parse_scenario(bad_norm).unwrap_err().msg.contains("norm"));
        let bad_len = "[spaces]\ndims = 2\n[initial]\namplitudes = 1\n";
        assert!(parse_scenario(bad_len).unwrap_err().msg.contains("1 amplitudes"));
        let bad_basis = "[spaces]\ndims = 2\n[initial]\nbasis = 5\n";
        assert!(parse_scenario(bad_basis).unwrap_err().msg.contains("out of range"));
    }

    #[test]
    fn controlled_flip_builds_the_cnot() {
        let text = "\
[spaces]
dims = 2 2

[initial]
basis = 2

[step u]
op = controlled-flip 0 1
family = {0} {1} {2} {3}
";
        let c = parse_scenario(text).unwrap();
        let (schedule, family) = c.history_model().unwrap();
        assert_eq!(schedule.slot_count(), 1);
        assert_eq!(family.history_count(), 4);
        let cnot = schedule.step(0);
        // |10⟩ → |11⟩ in the most-significant-first convention.
        let hit = cnot.apply(&StateVector::basis_state(4, 2).unwrap());
        assert_eq!(hit.get(3), Amplitude::new(1.0, 0.0));
    }

    #[test]
    fn fock_section_builds_fields_and_masks() {
        let text = "\
[spaces]
dims = fock

[lattice]
extents = 8 8
spacing = 0.5
mass = 1.0
epsilon = 1e-3

[fock]
types = 2
n_max = 2
sites = (0, 0) (0, 1)
coupling = 0.3
legs = +0 -0
primed = true
masks = {0} {1}
";
        let c = parse_scenario(text).unwrap();
        let (fields, spec, masks) = c.fock_setup().unwrap();
        assert_eq!(fields.model().dim(), 45);
        assert_eq!(spec.legs.len(), 2);
        assert_eq!(masks.len(), 2);
        let rendered = render_scenario(&c);
        assert_eq!(parse_scenario(&rendered).unwrap(), c);
    }

    #[test]
    fn fock_space_rejects_state_sections() {
        let text = "\
[spaces]
dims = fock

[initial]
basis = 0

[lattice]
extents = 4 4
spacing = 0.5
mass = 1.0
epsilon = 1e-3

[fock]
types = 1
n_max = 1
sites = (0, 0)
coupling = 0.1
legs = +0
primed = false
";
        let err = parse_scenario(text).unwrap_err();
        assert!(err.msg.contains("factor dims"), "{err}");
        let err = parse_scenario("[spaces]\ndims = fock\n").unwrap_err();
        assert!(err.msg.contains("needs a [fock] section"), "{err}");
    }

    #[test]
    fn mixing_must_be_stochastic_like() {
        let text = "\
[spaces]
dims = 2

[mixing]
matrix = [0.5, 0.5; 0.6, 0.4]
";
        let err = parse_scenario(text).unwrap_err();
        assert!(err.msg.contains("sum to 1"), "{err}");
    }

    #[test]
    fn first_subsystem_rejects_op_and_map() {
        let text = "\
[spaces]
dims = 2

[subsystem S]
op = identity
family = {0}

[subsystem A]
op = identity
family = {1}
";
        let err = parse_scenario(text).unwrap_err();
        assert!(err.msg.contains("takes no `op`"), "{err}");
    }
}
