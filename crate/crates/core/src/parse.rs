//! Text format for Lagrangian problems.
//!
//! A problem file is line oriented: `key: value` pairs, `#` comments, and two
//! optional block introducers (`solver:`, `section:`) that switch which table
//! subsequent keys land in. Expressions never span lines.
//!
//! Identifier resolution is deliberately order sensitive. A name is tried as
//! an exact coordinate, then an exact constant, then an exact field; only
//! when all three fail is it split at the first underscore to look for a jet
//! suffix. So with `gamma_x` declared as a constant, `gamma_x` is that
//! constant, while `u_x` (u a field) is a derivative. Writing `gamma_x` with
//! only `gamma` declared is rejected as a derivative of a constant rather
//! than silently treated as a fresh symbol.

use std::collections::BTreeMap;
use std::fmt;

use crate::coeff::Coeff;
use crate::expr::{Atom, Expr, Func};
use crate::jet::{LagrangianSpec, SpecError};

/// Position-carrying parse failure. `line` and `col` are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.col, self.message)
    }
}

impl std::error::Error for ParseError {}

fn err<T>(line: usize, col: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { line, col, message: message.into() })
}

/// Which PDE integrator a problem asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Mechanics,
    String,
    Kdv,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Mechanics => "mechanics",
            Scheme::String => "string",
            Scheme::Kdv => "kdv",
        }
    }
}

/// Spatial boundary handling for field problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bc {
    Fixed,
    Periodic,
}

impl Bc {
    pub fn name(self) -> &'static str {
        match self {
            Bc::Fixed => "fixed",
            Bc::Periodic => "periodic",
        }
    }
}

/// Numeric settings from a `solver:` block. Everything is optional at parse
/// time; each integrator demands what it needs and defaults the rest.
#[derive(Debug, Clone, Default)]
pub struct SolverConfig {
    pub scheme: Option<Scheme>,
    pub t_range: Option<(f64, f64)>,
    pub x_range: Option<(f64, f64)>,
    pub dt: Option<f64>,
    pub nt: Option<usize>,
    pub nx: Option<usize>,
    pub bc: Option<Bc>,
    /// Mechanics initial positions, one per coordinate field.
    pub q0: Vec<f64>,
    /// Mechanics initial velocities.
    pub v0: Vec<f64>,
    /// Initial action value.
    pub z0: Option<f64>,
    /// Initial-condition expressions keyed by their full key (`ic_u`,
    /// `ic_ut`, `ic_v`). Values are functions of the coordinates.
    pub ic: BTreeMap<String, Expr>,
}

/// A candidate solution section from a `section:` block. Field values are
/// expressions in the coordinates; `z` maps a component name like `t` to the
/// expression for `z^t`.
#[derive(Debug, Clone, Default)]
pub struct SectionSpec {
    pub fields: BTreeMap<String, Expr>,
    pub z: BTreeMap<String, Expr>,
}

/// Parsed problem file: the variational data plus optional numeric and
/// analytic-section blocks.
#[derive(Debug, Clone)]
pub struct ProblemFile {
    pub spec: LagrangianSpec,
    pub solver: Option<SolverConfig>,
    pub section: Option<SectionSpec>,
}

// ---------------------------------------------------------------------------
// Tokens

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num { value: Coeff, text: String },
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    Equals,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num { text, .. } => format!("number `{text}`"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Equals => "`=`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

/// Tokenize one line fragment. `col0` is the 1-based column of `src`'s first
/// character within its line, so reported positions point into the original
/// file.
fn tokenize(src: &str, line: usize, col0: usize) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = col0 + i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let simple = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '=' => Some(Tok::Equals),
            _ => None,
        };
        if let Some(tok) = simple {
            out.push(Token { tok, line, col });
            i += 1;
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            let mut is_float = false;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                is_float = true;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                // Exponent only when digits (with optional sign) follow, so
                // `2e` in `2*exp(x)` stays two tokens.
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    is_float = true;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = if is_float {
                match text.parse::<f64>() {
                    Ok(v) if v.is_finite() => Coeff::float(v),
                    _ => return err(line, col, format!("numeric literal `{text}` out of range")),
                }
            } else {
                match text.parse::<i64>() {
                    Ok(n) => Coeff::int(n),
                    // Too big for exact arithmetic; keep the value as a float.
                    Err(_) => match text.parse::<f64>() {
                        Ok(v) if v.is_finite() => Coeff::float(v),
                        _ => {
                            return err(line, col, format!("numeric literal `{text}` out of range"))
                        }
                    },
                }
            };
            out.push(Token { tok: Tok::Num { value, text }, line, col });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Token { tok: Tok::Ident(text), line, col });
            continue;
        }
        return err(line, col, format!("unexpected character `{c}`"));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Expression parsing

/// Declared names an expression may reference.
#[derive(Debug, Clone, Default)]
pub struct Symbols {
    pub coords: Vec<String>,
    pub fields: Vec<String>,
    pub constants: Vec<String>,
}

impl Symbols {
    fn is_coord(&self, s: &str) -> bool {
        self.coords.iter().any(|c| c == s)
    }
    fn is_field(&self, s: &str) -> bool {
        self.fields.iter().any(|f| f == s)
    }
    fn is_constant(&self, s: &str) -> bool {
        s == "pi" || self.constants.iter().any(|c| c == s)
    }
}

/// What classes of atoms the surrounding context admits.
#[derive(Debug, Clone, Copy)]
struct ExprContext {
    /// Jets and action variables are meaningful (Lagrangian position).
    /// Section and initial-condition expressions are functions of the
    /// coordinates alone.
    allow_jets: bool,
}

struct ExprParser<'a> {
    tokens: &'a [Token],
    pos: usize,
    syms: &'a Symbols,
    ctx: ExprContext,
    line: usize,
    end_col: usize,
}

impl<'a> ExprParser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn advance(&mut self) -> Option<&Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> (usize, usize) {
        match self.tokens.get(self.pos) {
            Some(t) => (t.line, t.col),
            None => (self.line, self.end_col),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek().map(|t| t.tok.clone()) {
                Some(Tok::Plus) => {
                    self.advance();
                    acc = acc + self.term()?;
                }
                Some(Tok::Minus) => {
                    self.advance();
                    acc = acc - self.term()?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek().map(|t| t.tok.clone()) {
                Some(Tok::Star) => {
                    self.advance();
                    acc = acc * self.factor()?;
                }
                Some(Tok::Slash) => {
                    self.advance();
                    // Division is only defined by numeric literals; general
                    // quotients have no polynomial normal form here.
                    let (dl, dc) = self.here();
                    match self.advance().map(|t| t.tok.clone()) {
                        Some(Tok::Num { value, .. }) => match value.recip() {
                            Some(r) => acc = acc * Expr::Num(r),
                            None => return err(dl, dc, "division by zero"),
                        },
                        _ => {
                            return err(
                                dl,
                                dc,
                                "division requires a numeric literal divisor, like x/2",
                            )
                        }
                    }
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if matches!(self.peek().map(|t| &t.tok), Some(Tok::Minus)) {
            self.advance();
            return Ok(-self.factor()?);
        }
        let mut base = self.primary()?;
        while matches!(self.peek().map(|t| &t.tok), Some(Tok::Caret)) {
            self.advance();
            let (el, ec) = self.here();
            match self.advance().map(|t| t.tok.clone()) {
                Some(Tok::Num { value, text }) => match value.as_u32() {
                    Some(k) => base = Expr::Pow(Box::new(base), k),
                    None => {
                        return err(
                            el,
                            ec,
                            format!("exponent must be a non-negative integer, found `{text}`"),
                        )
                    }
                },
                _ => return err(el, ec, "exponent must be a non-negative integer"),
            }
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let (line, col) = self.here();
        let tok = match self.advance() {
            Some(t) => t.tok.clone(),
            None => return err(line, col, "expected an expression"),
        };
        match tok {
            Tok::Num { value, .. } => Ok(Expr::Num(value)),
            Tok::LParen => {
                let inner = self.expr()?;
                match self.advance().map(|t| t.tok.clone()) {
                    Some(Tok::RParen) => Ok(inner),
                    Some(other) => self.fail_at_prev(format!(
                        "expected `)`, found {}",
                        other.describe()
                    )),
                    None => err(self.line, self.end_col, "missing closing `)`"),
                }
            }
            Tok::Ident(name) => self.resolve_ident(&name, line, col),
            other => err(line, col, format!("expected an expression, found {}", other.describe())),
        }
    }

    fn fail_at_prev<T>(&self, message: String) -> Result<T, ParseError> {
        let t = &self.tokens[self.pos - 1];
        err(t.line, t.col, message)
    }

    fn resolve_ident(&mut self, name: &str, line: usize, col: usize) -> Result<Expr, ParseError> {
        if name == "z" {
            if !self.ctx.allow_jets {
                return err(line, col, "the action density is not allowed here");
            }
            if matches!(self.peek().map(|t| &t.tok), Some(Tok::Caret)) {
                self.advance();
                let (cl, cc) = self.here();
                let comp_tok = match self.advance().map(|t| t.tok.clone()) {
                    Some(Tok::Ident(s)) => s,
                    _ => return err(cl, cc, "expected a coordinate component after `z^`"),
                };
                return self.z_component(&comp_tok, cl, cc);
            }
            // Bare `z` only reads unambiguously with a single coordinate.
            if self.syms.coords.len() == 1 {
                return Ok(Expr::action_jet(&self.syms.coords[0], ""));
            }
            return err(line, col, "the action density needs a component here, like z^t");
        }
        if let Some(func) = Func::from_name(name) {
            if !matches!(self.peek().map(|t| &t.tok), Some(Tok::LParen)) {
                let (l, c) = self.here();
                return err(l, c, format!("expected `(` after function name `{name}`"));
            }
            self.advance();
            let arg = self.expr()?;
            return match self.advance().map(|t| t.tok.clone()) {
                Some(Tok::RParen) => Ok(Expr::Atom(Atom::Func(func, Box::new(arg)))),
                Some(other) => self.fail_at_prev(format!(
                    "expected `)` to close {name}(...), found {}",
                    other.describe()
                )),
                None => err(
                    self.line,
                    self.end_col,
                    format!("missing closing `)` for {name}(...)"),
                ),
            };
        }
        if self.syms.is_coord(name) {
            return Ok(Expr::coord(name));
        }
        if self.syms.is_constant(name) {
            return Ok(Expr::constant(name));
        }
        if self.syms.is_field(name) {
            if !self.ctx.allow_jets {
                return err(line, col, format!("field `{name}` is not allowed here"));
            }
            return Ok(Expr::field_jet(name, ""));
        }
        // Jet form: first underscore splits base from derivative suffix.
        if let Some((base, suffix)) = name.split_once('_') {
            if self.syms.is_field(base) {
                if !self.ctx.allow_jets {
                    return err(line, col, format!("field `{name}` is not allowed here"));
                }
                if suffix.is_empty() {
                    return err(line, col, format!("empty derivative suffix on `{name}`"));
                }
                for ch in suffix.chars() {
                    let s = ch.to_string();
                    if !self.syms.is_coord(&s) {
                        return err(
                            line,
                            col,
                            format!("`{ch}` in `{name}` is not a declared coordinate"),
                        );
                    }
                }
                return Ok(Expr::field_jet(base, suffix));
            }
            if base == "z" {
                return err(
                    line,
                    col,
                    format!(
                        "`{name}` differentiates the action density; its components appear \
                         undifferentiated, as z^{suffix}"
                    ),
                );
            }
            if self.syms.is_constant(base) || self.syms.is_coord(base) {
                return err(
                    line,
                    col,
                    format!(
                        "`{name}` looks like a derivative of `{base}`, which is not a field; \
                         declare `{name}` as a constant if that is what it is"
                    ),
                );
            }
        }
        err(line, col, format!("unknown symbol `{name}`"))
    }

    fn z_component(&mut self, comp_tok: &str, line: usize, col: usize) -> Result<Expr, ParseError> {
        // `z^t_x` lexes the component and suffix as one identifier.
        let (comp, suffix) = match comp_tok.split_once('_') {
            Some((c, s)) => (c, s),
            None => (comp_tok, ""),
        };
        if !self.syms.is_coord(comp) {
            return err(line, col, format!("`{comp}` is not a declared coordinate"));
        }
        for ch in suffix.chars() {
            let s = ch.to_string();
            if !self.syms.is_coord(&s) {
                return err(line, col, format!("`{ch}` in `z^{comp_tok}` is not a coordinate"));
            }
        }
        Ok(Expr::action_jet(comp, suffix))
    }
}

fn parse_expr_tokens(
    tokens: &[Token],
    syms: &Symbols,
    ctx: ExprContext,
    line: usize,
    end_col: usize,
) -> Result<Expr, ParseError> {
    let mut p = ExprParser { tokens, pos: 0, syms, ctx, line, end_col };
    if p.peek().is_none() {
        return err(line, end_col, "expected an expression");
    }
    let e = p.expr()?;
    if let Some(t) = p.peek() {
        return err(t.line, t.col, format!("unexpected {} after expression", t.tok.describe()));
    }
    Ok(e)
}

/// Parse a single expression against a symbol table. Positions are reported
/// as line 1 of the given source.
pub fn parse_expression(src: &str, syms: &Symbols) -> Result<Expr, ParseError> {
    let tokens = tokenize(src, 1, 1)?;
    parse_expr_tokens(&tokens, syms, ExprContext { allow_jets: true }, 1, src.chars().count() + 1)
}

/// Render an expression in canonical text form. Output parses back to an
/// equal expression under the same symbol table.
pub fn print_expression(e: &Expr) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// Problem files

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Top,
    Solver,
    Section,
}

struct Line<'a> {
    no: usize,
    key: &'a str,
    key_col: usize,
    value: &'a str,
    value_col: usize,
}

/// Split the meaningful lines of a file into `key`, `value` pairs with
/// column positions. Comments run from `#` to end of line.
fn split_lines(src: &str) -> Result<Vec<Line<'_>>, ParseError> {
    let mut out = Vec::new();
    for (idx, raw) in src.lines().enumerate() {
        let no = idx + 1;
        let content = match raw.find('#') {
            Some(h) => &raw[..h],
            None => raw,
        };
        if content.trim().is_empty() {
            continue;
        }
        let colon = match content.find(':') {
            Some(c) => c,
            None => {
                let col = content.len() - content.trim_start().len() + 1;
                return err(no, col, "expected `key: value`");
            }
        };
        let key_part = &content[..colon];
        let key = key_part.trim();
        if key.is_empty() {
            return err(no, colon + 1, "missing key before `:`");
        }
        let key_col = key_part.find(key).unwrap() + 1;
        let value_part = &content[colon + 1..];
        let value = value_part.trim();
        let value_col = match value_part.find(value) {
            Some(off) if !value.is_empty() => colon + 2 + off,
            _ => colon + 2,
        };
        out.push(Line { no, key, key_col, value, value_col });
    }
    Ok(out)
}

fn parse_f64(text: &str, line: usize, col: usize, what: &str) -> Result<f64, ParseError> {
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => err(line, col, format!("expected a number for {what}, found `{text}`")),
    }
}

fn parse_usize(text: &str, line: usize, col: usize, what: &str) -> Result<usize, ParseError> {
    match text.parse::<usize>() {
        Ok(v) => Ok(v),
        Err(_) => err(line, col, format!("expected a positive integer for {what}, found `{text}`")),
    }
}

/// Split a value on commas or whitespace, keeping 1-based columns.
fn split_list(value: &str, value_col: usize) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut cur_col = 0usize;
    for (i, ch) in value.chars().enumerate() {
        if ch == ',' || ch.is_whitespace() {
            if !cur.is_empty() {
                out.push((std::mem::take(&mut cur), cur_col));
            }
        } else {
            if cur.is_empty() {
                cur_col = value_col + i;
            }
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        out.push((cur, cur_col));
    }
    out
}

fn parse_float_list(
    value: &str,
    line: usize,
    value_col: usize,
    what: &str,
) -> Result<Vec<f64>, ParseError> {
    let mut out = Vec::new();
    for (item, col) in split_list(value, value_col) {
        out.push(parse_f64(&item, line, col, what)?);
    }
    if out.is_empty() {
        return err(line, value_col, format!("expected at least one number for {what}"));
    }
    Ok(out)
}

fn parse_range(
    value: &str,
    line: usize,
    value_col: usize,
    what: &str,
) -> Result<(f64, f64), ParseError> {
    let items = parse_float_list(value, line, value_col, what)?;
    if items.len() != 2 {
        return err(line, value_col, format!("{what} takes two numbers: start and end"));
    }
    if items[1] <= items[0] {
        return err(line, value_col, format!("{what} end must exceed its start"));
    }
    Ok((items[0], items[1]))
}

/// Map a spec-construction failure onto the lagrangian line, which is where
/// the offending content textually lives for every `SpecError` we can still
/// hit after name-level checks (declaration errors are caught earlier with
/// their own positions).
fn spec_error_message(e: &SpecError) -> String {
    e.to_string()
}

/// Constant declarations as written: name, optional bound value.
type ConstDecls = Vec<(String, Option<f64>)>;

/// Parse a complete problem file.
pub fn parse_problem(src: &str) -> Result<ProblemFile, ParseError> {
    let lines = split_lines(src)?;

    let mut coords: Option<(Vec<String>, usize)> = None;
    let mut fields: Option<(Vec<String>, usize)> = None;
    let mut order: Option<(u32, usize)> = None;
    let mut constants: Option<(ConstDecls, usize)> = None;
    let mut lagrangian: Option<(Expr, usize)> = None;
    let mut solver: Option<SolverConfig> = None;
    let mut section: Option<SectionSpec> = None;

    let mut block = Block::Top;
    let mut syms = Symbols::default();

    for line in &lines {
        let Line { no, key, key_col, value, value_col } = *line;
        // Block introducers: a key with an empty value.
        if value.is_empty() {
            match key {
                "solver" => {
                    if solver.is_some() {
                        return err(no, key_col, "duplicate `solver:` block");
                    }
                    solver = Some(SolverConfig::default());
                    block = Block::Solver;
                    continue;
                }
                "section" => {
                    if section.is_some() {
                        return err(no, key_col, "duplicate `section:` block");
                    }
                    if lagrangian.is_none() {
                        return err(no, key_col, "`section:` must follow the lagrangian");
                    }
                    section = Some(SectionSpec::default());
                    block = Block::Section;
                    continue;
                }
                _ => return err(no, value_col, format!("missing value for `{key}`")),
            }
        }

        match block {
            Block::Top => match key {
                "coords" => {
                    if coords.is_some() {
                        return err(no, key_col, "duplicate `coords`");
                    }
                    let items = split_list(value, value_col);
                    if items.is_empty() {
                        return err(no, value_col, "expected coordinate names");
                    }
                    let names: Vec<String> = items.iter().map(|(s, _)| s.clone()).collect();
                    coords = Some((names.clone(), no));
                    syms.coords = names;
                }
                "fields" => {
                    if fields.is_some() {
                        return err(no, key_col, "duplicate `fields`");
                    }
                    let items = split_list(value, value_col);
                    if items.is_empty() {
                        return err(no, value_col, "expected field names");
                    }
                    let names: Vec<String> = items.iter().map(|(s, _)| s.clone()).collect();
                    fields = Some((names.clone(), no));
                    syms.fields = names;
                }
                "order" => {
                    if order.is_some() {
                        return err(no, key_col, "duplicate `order`");
                    }
                    let r = parse_usize(value, no, value_col, "order")?;
                    if r == 0 {
                        return err(no, value_col, "order must be at least 1");
                    }
                    order = Some((r as u32, no));
                }
                "constants" => {
                    if constants.is_some() {
                        return err(no, key_col, "duplicate `constants`");
                    }
                    let mut entries = Vec::new();
                    for (item, col) in split_list(value, value_col) {
                        match item.split_once('=') {
                            Some((name, val)) => {
                                if name.is_empty() {
                                    return err(no, col, "missing constant name before `=`");
                                }
                                let v = parse_f64(
                                    val,
                                    no,
                                    col + name.len() + 1,
                                    &format!("constant `{name}`"),
                                )?;
                                entries.push((name.to_string(), Some(v)));
                            }
                            None => entries.push((item, None)),
                        }
                    }
                    if entries.is_empty() {
                        return err(no, value_col, "expected constant declarations");
                    }
                    syms.constants = entries.iter().map(|(n, _)| n.clone()).collect();
                    constants = Some((entries, no));
                }
                "lagrangian" => {
                    if lagrangian.is_some() {
                        return err(no, key_col, "duplicate `lagrangian`");
                    }
                    if coords.is_none() {
                        return err(no, key_col, "`coords` must be declared before the lagrangian");
                    }
                    if fields.is_none() {
                        return err(no, key_col, "`fields` must be declared before the lagrangian");
                    }
                    let tokens = tokenize(value, no, value_col)?;
                    let e = parse_expr_tokens(
                        &tokens,
                        &syms,
                        ExprContext { allow_jets: true },
                        no,
                        value_col + value.chars().count(),
                    )?;
                    lagrangian = Some((e, no));
                }
                other => {
                    return err(
                        no,
                        key_col,
                        format!(
                            "unknown key `{other}`; expected coords, fields, order, constants, \
                             lagrangian, solver, or section"
                        ),
                    )
                }
            },
            Block::Solver => {
                let cfg = solver.as_mut().unwrap();
                match key {
                    "scheme" => {
                        if cfg.scheme.is_some() {
                            return err(no, key_col, "duplicate `scheme`");
                        }
                        cfg.scheme = Some(match value {
                            "mechanics" => Scheme::Mechanics,
                            "string" => Scheme::String,
                            "kdv" => Scheme::Kdv,
                            other => {
                                return err(
                                    no,
                                    value_col,
                                    format!(
                                        "unknown scheme `{other}`; expected mechanics, string, \
                                         or kdv"
                                    ),
                                )
                            }
                        });
                    }
                    "t" => {
                        if cfg.t_range.is_some() {
                            return err(no, key_col, "duplicate `t`");
                        }
                        cfg.t_range = Some(parse_range(value, no, value_col, "t range")?);
                    }
                    "x" => {
                        if cfg.x_range.is_some() {
                            return err(no, key_col, "duplicate `x`");
                        }
                        cfg.x_range = Some(parse_range(value, no, value_col, "x range")?);
                    }
                    "dt" => {
                        if cfg.dt.is_some() {
                            return err(no, key_col, "duplicate `dt`");
                        }
                        let v = parse_f64(value, no, value_col, "dt")?;
                        if v <= 0.0 {
                            return err(no, value_col, "dt must be positive");
                        }
                        cfg.dt = Some(v);
                    }
                    "nt" => {
                        if cfg.nt.is_some() {
                            return err(no, key_col, "duplicate `nt`");
                        }
                        let v = parse_usize(value, no, value_col, "nt")?;
                        if v < 2 {
                            return err(no, value_col, "nt must be at least 2");
                        }
                        cfg.nt = Some(v);
                    }
                    "nx" => {
                        if cfg.nx.is_some() {
                            return err(no, key_col, "duplicate `nx`");
                        }
                        let v = parse_usize(value, no, value_col, "nx")?;
                        if v < 3 {
                            return err(no, value_col, "nx must be at least 3");
                        }
                        cfg.nx = Some(v);
                    }
                    "bc" => {
                        if cfg.bc.is_some() {
                            return err(no, key_col, "duplicate `bc`");
                        }
                        cfg.bc = Some(match value {
                            "fixed" => Bc::Fixed,
                            "periodic" => Bc::Periodic,
                            other => {
                                return err(
                                    no,
                                    value_col,
                                    format!("unknown bc `{other}`; expected fixed or periodic"),
                                )
                            }
                        });
                    }
                    "q0" => {
                        if !cfg.q0.is_empty() {
                            return err(no, key_col, "duplicate `q0`");
                        }
                        cfg.q0 = parse_float_list(value, no, value_col, "q0")?;
                    }
                    "v0" => {
                        if !cfg.v0.is_empty() {
                            return err(no, key_col, "duplicate `v0`");
                        }
                        cfg.v0 = parse_float_list(value, no, value_col, "v0")?;
                    }
                    "z0" => {
                        if cfg.z0.is_some() {
                            return err(no, key_col, "duplicate `z0`");
                        }
                        cfg.z0 = Some(parse_f64(value, no, value_col, "z0")?);
                    }
                    ic if ic.starts_with("ic_") => {
                        let rest = &ic[3..];
                        let valid = rest == "v"
                            || syms.is_field(rest)
                            || rest
                                .strip_suffix('t')
                                .map(|base| syms.is_field(base))
                                .unwrap_or(false);
                        if !valid {
                            return err(
                                no,
                                key_col,
                                format!(
                                    "unknown initial condition `{ic}`; expected ic_<field>, \
                                     ic_<field>t, or ic_v"
                                ),
                            );
                        }
                        if cfg.ic.contains_key(ic) {
                            return err(no, key_col, format!("duplicate `{ic}`"));
                        }
                        if lagrangian.is_none() {
                            return err(no, key_col, "initial conditions must follow the lagrangian");
                        }
                        let tokens = tokenize(value, no, value_col)?;
                        let e = parse_expr_tokens(
                            &tokens,
                            &syms,
                            ExprContext { allow_jets: false },
                            no,
                            value_col + value.chars().count(),
                        )?;
                        cfg.ic.insert(ic.to_string(), e);
                    }
                    other => {
                        return err(
                            no,
                            key_col,
                            format!(
                                "unknown solver key `{other}`; expected scheme, t, x, dt, nt, nx, \
                                 bc, q0, v0, z0, or ic_*"
                            ),
                        )
                    }
                }
            }
            Block::Section => {
                let sec = section.as_mut().unwrap();
                let tokens = tokenize(value, no, value_col)?;
                let e = parse_expr_tokens(
                    &tokens,
                    &syms,
                    ExprContext { allow_jets: false },
                    no,
                    value_col + value.chars().count(),
                )?;
                if let Some(comp) = key.strip_prefix("z^") {
                    if !syms.is_coord(comp) {
                        return err(
                            no,
                            key_col,
                            format!("`{comp}` in `{key}` is not a declared coordinate"),
                        );
                    }
                    if sec.z.contains_key(comp) {
                        return err(no, key_col, format!("duplicate `{key}`"));
                    }
                    sec.z.insert(comp.to_string(), e);
                } else if key == "z" && syms.coords.len() == 1 {
                    let comp = syms.coords[0].clone();
                    if sec.z.contains_key(&comp) {
                        return err(no, key_col, "duplicate `z`");
                    }
                    sec.z.insert(comp, e);
                } else if syms.is_field(key) {
                    if sec.fields.contains_key(key) {
                        return err(no, key_col, format!("duplicate `{key}`"));
                    }
                    sec.fields.insert(key.to_string(), e);
                } else {
                    return err(
                        no,
                        key_col,
                        format!("`{key}` is not a declared field or action component"),
                    );
                }
            }
        }
    }

    let (coords, coords_line) = match coords {
        Some(v) => v,
        None => return err(lines.len() + 1, 1, "missing `coords` declaration"),
    };
    let (fields, _) = match fields {
        Some(v) => v,
        None => return err(lines.len() + 1, 1, "missing `fields` declaration"),
    };
    let (lagrangian, lag_line) = match lagrangian {
        Some(v) => v,
        None => return err(lines.len() + 1, 1, "missing `lagrangian`"),
    };

    // Order defaults to the highest derivative the Lagrangian actually uses.
    let inferred = lagrangian.max_field_jet_order().max(1) as u32;
    let order_val = match order {
        Some((r, _)) => r,
        None => inferred,
    };

    let mut const_map: BTreeMap<String, Option<f64>> = BTreeMap::new();
    if let Some((entries, cline)) = constants {
        for (name, val) in entries {
            if const_map.insert(name.clone(), val).is_some() {
                return err(cline, 1, format!("constant `{name}` declared twice"));
            }
        }
    }

    let spec = LagrangianSpec::new(coords, fields, order_val, None, const_map, lagrangian)
        .map_err(|e| {
            // Name-level problems point at the declarations; everything else
            // (order too small, bad action component) lives in the
            // lagrangian text.
            let line = match &e {
                SpecError::NoCoords
                | SpecError::NoFields
                | SpecError::BadName { .. }
                | SpecError::Duplicate { .. }
                | SpecError::ShadowsJet { .. } => coords_line,
                _ => lag_line,
            };
            ParseError { line, col: 1, message: spec_error_message(&e) }
        })?;

    // Section expressions must cover every field; partial sections are a
    // recipe for silent zeros.
    if let Some(sec) = &section {
        for f in spec.fields() {
            if !sec.fields.contains_key(f) {
                return err(
                    lines.len() + 1,
                    1,
                    format!("section is missing an expression for field `{f}`"),
                );
            }
        }
    }

    Ok(ProblemFile { spec, solver, section })
}

/// Symbols visible to expressions of an existing spec, for reparsing printed
/// equations and similar round trips.
pub fn symbols_of(spec: &LagrangianSpec) -> Symbols {
    Symbols {
        coords: spec.coords().to_vec(),
        fields: spec.fields().to_vec(),
        constants: spec.constants().keys().cloned().collect(),
    }
}
