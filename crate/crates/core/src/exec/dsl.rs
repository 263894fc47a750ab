//! Line-based kernel language.
//!
//! ```text
//! # comment
//! kernel rw_bsync
//! geometry blocks=1 warps=1 lanes=4
//! monitor data[0..4]
//! read data[0]
//! syncblock
//! when tid==1 write data[0]
//! ```

use std::fmt;

use super::program::{AffineExpr, Guard, InstrKind, Instruction, Program, ProgramError};
use crate::shadow::GridGeometry;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum DslError {
    #[error("parse error at {0}")]
    Parse(ParseError),
    #[error("invalid program: {0}")]
    Validation(ProgramError),
}

impl From<ParseError> for DslError {
    fn from(e: ParseError) -> Self {
        Self::Parse(e)
    }
}

impl From<ProgramError> for DslError {
    fn from(e: ProgramError) -> Self {
        Self::Validation(e)
    }
}

struct Line<'a> {
    number: usize,
    text: &'a str,
}

impl Line<'_> {
    fn error(&self, token: &str, message: impl Into<String>) -> ParseError {
        let column = self
            .text
            .find(token)
            .filter(|_| !token.is_empty())
            .map_or(1, |i| i + 1);
        ParseError {
            line: self.number,
            column,
            message: message.into(),
        }
    }
}

pub fn parse_program(text: &str) -> Result<Program, DslError> {
    let mut name = None;
    let mut geometry = None;
    let mut monitor = None;
    let mut body = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let line = Line {
            number: i + 1,
            text: raw,
        };
        let mut tokens = content.split_whitespace();
        let head = tokens.next().unwrap_or_default();
        match head {
            "kernel" => {
                let n = tokens.next().ok_or_else(|| line.error(head, "kernel needs a name"))?;
                name = Some(n.to_string());
            }
            "geometry" => geometry = Some(parse_geometry(&line, tokens)?),
            "monitor" => {
                let rest: String = tokens.collect();
                let n = rest
                    .strip_prefix("data[0..")
                    .and_then(|r| r.strip_suffix(']'))
                    .and_then(|n| n.parse::<u64>().ok())
                    .ok_or_else(|| line.error(&rest, "expected `monitor data[0..<n>]`"))?;
                monitor = Some(n);
            }
            _ => body.push(parse_instruction(&line, content)?),
        }
    }
    let geometry = geometry.ok_or_else(|| ParseError {
        line: 1,
        column: 1,
        message: "missing `geometry` line".into(),
    })?;
    let monitor = monitor.ok_or_else(|| ParseError {
        line: 1,
        column: 1,
        message: "missing `monitor` line".into(),
    })?;
    Ok(Program::new(
        name.unwrap_or_else(|| "kernel".to_string()),
        geometry,
        monitor,
        body,
    )?)
}

fn parse_geometry<'a>(line: &Line, tokens: impl Iterator<Item = &'a str>) -> Result<GridGeometry, ParseError> {
    let (mut blocks, mut warps, mut lanes) = (None, None, None);
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| line.error(tok, "expected key=value"))?;
        let v: u32 = value
            .parse()
            .map_err(|_| line.error(tok, format!("bad number {value:?}")))?;
        match key {
            "blocks" => blocks = Some(v),
            "warps" => warps = Some(v),
            "lanes" => lanes = Some(v),
            _ => return Err(line.error(tok, format!("unknown geometry key {key:?}"))),
        }
    }
    match (blocks, warps, lanes) {
        (Some(b), Some(w), Some(l)) => {
            GridGeometry::new(b, w, l).map_err(|e| line.error("geometry", e.to_string()))
        }
        _ => Err(line.error("geometry", "geometry needs blocks=, warps= and lanes=")),
    }
}

fn parse_instruction(line: &Line, content: &str) -> Result<Instruction, ParseError> {
    let tokens: Vec<&str> = content.split_whitespace().collect();
    let mut guard = None;
    let mut rest = &tokens[..];
    if tokens[0] == "when" {
        let op_at = tokens
            .iter()
            .position(|t| InstrKind::from_keyword(t).is_some())
            .ok_or_else(|| line.error("when", "guard without an instruction"))?;
        let pred: String = tokens[1..op_at].concat();
        guard = Some(parse_guard(&pred).ok_or_else(|| {
            line.error(tokens.get(1).copied().unwrap_or("when"), format!("bad guard {pred:?}"))
        })?);
        rest = &tokens[op_at..];
    }
    let kind = InstrKind::from_keyword(rest[0])
        .ok_or_else(|| line.error(rest[0], format!("unknown instruction {:?}", rest[0])))?;
    let operand: String = rest[1..].concat();
    if kind.barrier().is_some() {
        if !operand.is_empty() {
            return Err(line.error(rest[1], "barriers take no operand"));
        }
        return Ok(Instruction {
            kind,
            address: None,
            guard,
        });
    }
    let inner = operand
        .strip_prefix("data[")
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| line.error(rest.get(1).copied().unwrap_or(rest[0]), "expected data[<expr>]"))?;
    let address = parse_expr(inner)
        .ok_or_else(|| line.error(rest.get(1).copied().unwrap_or(rest[0]), format!("bad address expression {inner:?}")))?;
    Ok(Instruction {
        kind,
        address: Some(address),
        guard,
    })
}

fn parse_guard(pred: &str) -> Option<Guard> {
    if let Some(k) = pred.strip_prefix("tid==") {
        return k.parse().ok().map(Guard::TidEq);
    }
    if let Some(k) = pred.strip_prefix("tid>=") {
        return k.parse().ok().map(Guard::TidGe);
    }
    if let Some(k) = pred.strip_prefix("block==") {
        return k.parse().ok().map(Guard::BlockEq);
    }
    None
}

/// Sum of signed terms `c`, `c*var`, `var`, `var*c` over `tid` and `block`.
fn parse_expr(text: &str) -> Option<AffineExpr> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return None;
    }
    let mut expr = AffineExpr::default();
    let mut rest = s.as_str();
    let mut first = true;
    while !rest.is_empty() {
        let sign = match rest.as_bytes()[0] {
            b'+' => {
                rest = &rest[1..];
                1
            }
            b'-' => {
                rest = &rest[1..];
                -1
            }
            _ if first => 1,
            _ => return None,
        };
        first = false;
        let end = rest.find(['+', '-']).unwrap_or(rest.len());
        let term = &rest[..end];
        rest = &rest[end..];
        let (coef, var) = match term.split_once('*') {
            Some((a, b)) => match (a.parse::<i64>(), b.parse::<i64>()) {
                (Ok(c), Err(_)) => (c, b),
                (Err(_), Ok(c)) => (c, a),
                _ => return None,
            },
            None => match term.parse::<i64>() {
                Ok(c) => (c, ""),
                Err(_) => (1, term),
            },
        };
        let slot = match var {
            "" => &mut expr.constant,
            "tid" => &mut expr.tid,
            "block" => &mut expr.block,
            _ => return None,
        };
        *slot += sign * coef;
    }
    Some(expr)
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms = [(self.tid, "tid"), (self.block, "block"), (self.constant, "")];
        let mut wrote = false;
        for (coef, var) in terms {
            if coef == 0 {
                continue;
            }
            let mag = coef.unsigned_abs();
            let body = match (mag, var) {
                (m, "") => m.to_string(),
                (1, v) => v.to_string(),
                (m, v) => format!("{m}*{v}"),
            };
            match (wrote, coef < 0) {
                (false, false) => write!(f, "{body}")?,
                (false, true) => write!(f, "-{body}")?,
                (true, false) => write!(f, " + {body}")?,
                (true, true) => write!(f, " - {body}")?,
            }
            wrote = true;
        }
        if !wrote {
            write!(f, "0")?;
        }
        Ok(())
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Guard::TidEq(k) => write!(f, "tid=={k}"),
            Guard::TidGe(k) => write!(f, "tid>={k}"),
            Guard::BlockEq(b) => write!(f, "block=={b}"),
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(g) = &self.guard {
            write!(f, "when {g} ")?;
        }
        write!(f, "{}", self.kind.keyword())?;
        if let Some(a) = &self.address {
            write!(f, " data[{a}]")?;
        }
        Ok(())
    }
}

/// Normalized program text; `parse_program(&p.to_string()) == Ok(p)`.
impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = &self.geometry;
        writeln!(f, "kernel {}", self.name)?;
        writeln!(
            f,
            "geometry blocks={} warps={} lanes={}",
            g.blocks, g.warps_per_block, g.lanes_per_warp
        )?;
        writeln!(f, "monitor data[0..{}]", self.monitor)?;
        for instr in &self.body {
            writeln!(f, "{instr}")?;
        }
        Ok(())
    }
}
