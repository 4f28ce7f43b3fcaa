//! Reader and writer for discrete Bayesian networks in BIF format.
//!
//! Supported grammar:
//!
//! ```text
//! network NAME { }
//! variable NAME { type discrete [ K ] { s1, s2, ... }; }
//! probability ( CHILD ) { table p1, p2, ...; }
//! probability ( CHILD | P1, P2, ... ) { (v1, v2, ...) p1, p2, ...; ... }
//! ```
//!
//! `property` lines inside blocks are skipped. `//` and `/* */` comments are
//! allowed anywhere.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BifVariable {
    pub name: String,
    pub states: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BifProbability {
    pub child: String,
    pub parents: Vec<String>,
    /// One row per parent configuration; the last parent varies fastest.
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BifDocument {
    pub name: String,
    pub variables: Vec<BifVariable>,
    pub probabilities: Vec<BifProbability>,
}

#[derive(Clone, Debug, PartialEq)]
struct Token {
    text: String,
    line: usize,
    column: usize,
}

const PUNCT: &[char] = &['{', '}', '(', ')', '[', ']', ',', ';', '|'];

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let advance = |c: char, line: &mut usize, col: &mut usize| {
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(c, &mut line, &mut col);
            i += 1;
        } else if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
                col += 1;
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            let (l0, c0) = (line, col);
            i += 2;
            col += 2;
            loop {
                if i + 1 >= chars.len() {
                    return Err(Error::parse(l0, c0, "unterminated comment"));
                }
                if chars[i] == '*' && chars[i + 1] == '/' {
                    i += 2;
                    col += 2;
                    break;
                }
                advance(chars[i], &mut line, &mut col);
                i += 1;
            }
        } else if PUNCT.contains(&c) {
            out.push(Token {
                text: c.to_string(),
                line,
                column: col,
            });
            i += 1;
            col += 1;
        } else {
            let (l0, c0) = (line, col);
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() && !PUNCT.contains(&chars[i]) {
                i += 1;
                col += 1;
            }
            out.push(Token {
                text: chars[start..i].iter().collect(),
                line: l0,
                column: c0,
            });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn location(&self) -> (usize, usize) {
        self.peek().map_or(self.end, |t| (t.line, t.column))
    }

    fn error<T>(&self, msg: impl Into<String>) -> Result<T> {
        let (l, c) = self.location();
        Err(Error::parse(l, c, msg))
    }

    fn next(&mut self) -> Result<Token> {
        match self.tokens.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(t.clone())
            }
            None => self.error("unexpected end of input"),
        }
    }

    fn expect(&mut self, text: &str) -> Result<Token> {
        match self.peek() {
            Some(t) if t.text == text => self.next(),
            Some(t) => {
                let found = t.text.clone();
                self.error(format!("expected `{text}`, found `{found}`"))
            }
            None => self.error(format!("expected `{text}`, found end of input")),
        }
    }

    fn is(&self, text: &str) -> bool {
        self.peek().is_some_and(|t| t.text == text)
    }

    fn word(&mut self) -> Result<Token> {
        match self.peek() {
            Some(t) if !PUNCT.iter().any(|p| t.text == p.to_string()) => self.next(),
            Some(t) => {
                let found = t.text.clone();
                self.error(format!("expected a name, found `{found}`"))
            }
            None => self.error("expected a name, found end of input"),
        }
    }

    fn number(&mut self) -> Result<f64> {
        let (l, c) = self.location();
        let t = self.word()?;
        match t.text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::parse(l, c, format!("expected a probability, found `{}`", t.text))),
        }
    }

    /// Skips `property ... ;`.
    fn skip_property(&mut self) -> Result<()> {
        self.expect("property")?;
        while !self.is(";") {
            self.next()?;
        }
        self.expect(";")?;
        Ok(())
    }

    /// Comma-separated list of names closed by `close`.
    fn names_until(&mut self, close: &str) -> Result<Vec<String>> {
        let mut out = vec![self.word()?.text];
        while self.is(",") {
            self.next()?;
            out.push(self.word()?.text);
        }
        self.expect(close)?;
        Ok(out)
    }

    fn numbers_until_semicolon(&mut self) -> Result<Vec<f64>> {
        let mut out = vec![self.number()?];
        while self.is(",") {
            self.next()?;
            out.push(self.number()?);
        }
        self.expect(";")?;
        Ok(out)
    }
}

/// Parses BIF text; errors carry the line and column of the offending token.
pub fn parse_bif(text: &str) -> Result<BifDocument> {
    let tokens = tokenize(text)?;
    let end = {
        let lines = text.lines().count().max(1);
        (lines, text.lines().last().map_or(1, |l| l.chars().count() + 1))
    };
    let mut p = Parser { tokens, pos: 0, end };
    let mut name = String::new();
    let mut variables: Vec<BifVariable> = Vec::new();
    let mut raw_probs: Vec<(Token, Vec<Token>, Vec<(Option<Vec<Token>>, Vec<f64>, (usize, usize))>)> = Vec::new();

    while let Some(t) = p.peek().cloned() {
        match t.text.as_str() {
            "network" => {
                p.next()?;
                name = p.word()?.text;
                p.expect("{")?;
                while !p.is("}") {
                    p.skip_property()?;
                }
                p.expect("}")?;
            }
            "variable" => {
                p.next()?;
                let vname = p.word()?;
                p.expect("{")?;
                let mut states = None;
                while !p.is("}") {
                    if p.is("property") {
                        p.skip_property()?;
                        continue;
                    }
                    p.expect("type")?;
                    let kind = p.word()?;
                    if kind.text != "discrete" {
                        return Err(Error::parse(kind.line, kind.column, "only discrete variables are supported"));
                    }
                    p.expect("[")?;
                    let (l, c) = p.location();
                    let k = p.word()?;
                    let arity: usize = k
                        .text
                        .parse()
                        .map_err(|_| Error::parse(l, c, format!("invalid arity `{}`", k.text)))?;
                    p.expect("]")?;
                    p.expect("{")?;
                    let s = p.names_until("}")?;
                    p.expect(";")?;
                    if s.len() != arity {
                        return Err(Error::parse(l, c, format!("arity {arity} but {} states listed", s.len())));
                    }
                    let mut seen = std::collections::HashSet::new();
                    if let Some(d) = s.iter().find(|x| !seen.insert(*x)) {
                        return Err(Error::parse(l, c, format!("state `{d}` repeated")));
                    }
                    states = Some(s);
                }
                p.expect("}")?;
                let states =
                    states.ok_or_else(|| Error::parse(vname.line, vname.column, "variable without a type"))?;
                if variables.iter().any(|v| v.name == vname.text) {
                    return Err(Error::parse(vname.line, vname.column, format!("variable `{}` declared twice", vname.text)));
                }
                variables.push(BifVariable {
                    name: vname.text,
                    states,
                });
            }
            "probability" => {
                p.next()?;
                p.expect("(")?;
                let child = p.word()?;
                let mut parents = Vec::new();
                if p.is("|") {
                    p.next()?;
                    parents.push(p.word()?);
                    while p.is(",") {
                        p.next()?;
                        parents.push(p.word()?);
                    }
                }
                p.expect(")")?;
                p.expect("{")?;
                let mut entries = Vec::new();
                while !p.is("}") {
                    let loc = p.location();
                    if p.is("property") {
                        p.skip_property()?;
                    } else if p.is("table") {
                        p.next()?;
                        entries.push((None, p.numbers_until_semicolon()?, loc));
                    } else if p.is("(") {
                        p.next()?;
                        let mut cfg = vec![p.word()?];
                        while p.is(",") {
                            p.next()?;
                            cfg.push(p.word()?);
                        }
                        p.expect(")")?;
                        entries.push((Some(cfg), p.numbers_until_semicolon()?, loc));
                    } else {
                        return p.error("expected `table` or a parent configuration");
                    }
                }
                p.expect("}")?;
                raw_probs.push((child, parents, entries));
            }
            other => {
                let other = other.to_string();
                return p.error(format!("unexpected `{other}`"));
            }
        }
    }

    let index: HashMap<&str, usize> = variables.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
    let lookup = |t: &Token| -> Result<usize> {
        index
            .get(t.text.as_str())
            .copied()
            .ok_or_else(|| Error::parse(t.line, t.column, format!("undeclared variable `{}`", t.text)))
    };
    let mut probabilities = Vec::new();
    let mut defined = vec![false; variables.len()];
    for (child, parents, entries) in raw_probs {
        let ci = lookup(&child)?;
        if defined[ci] {
            return Err(Error::parse(child.line, child.column, format!("`{}` has two probability blocks", child.text)));
        }
        defined[ci] = true;
        let pis: Vec<usize> = parents.iter().map(&lookup).collect::<Result<_>>()?;
        let arity = variables[ci].states.len();
        let n_cfg: usize = pis.iter().map(|&i| variables[i].states.len()).product();
        let mut rows: Vec<Option<Vec<f64>>> = vec![None; n_cfg];
        for (cfg, values, (l, c)) in entries {
            match cfg {
                None => {
                    if values.len() != arity * n_cfg {
                        return Err(Error::parse(
                            l,
                            c,
                            format!("table for `{}` has {} entries, expected {}", child.text, values.len(), arity * n_cfg),
                        ));
                    }
                    // With parents, a flat table lists the child state slowest.
                    for (k, slot) in rows.iter_mut().enumerate() {
                        *slot = Some((0..arity).map(|s| values[s * n_cfg + k]).collect());
                    }
                }
                Some(cfg) => {
                    if cfg.len() != pis.len() {
                        return Err(Error::parse(l, c, "parent configuration has the wrong length"));
                    }
                    let mut k = 0;
                    for (t, &pi) in cfg.iter().zip(&pis) {
                        let s = variables[pi].states.iter().position(|x| *x == t.text).ok_or_else(|| {
                            Error::parse(t.line, t.column, format!("`{}` is not a state of `{}`", t.text, variables[pi].name))
                        })?;
                        k = k * variables[pi].states.len() + s;
                    }
                    if values.len() != arity {
                        return Err(Error::parse(
                            l,
                            c,
                            format!("row has {} probabilities, `{}` has {arity} states", values.len(), child.text),
                        ));
                    }
                    rows[k] = Some(values);
                }
            }
        }
        let mut full = Vec::with_capacity(n_cfg);
        for (k, r) in rows.into_iter().enumerate() {
            let r = r.ok_or_else(|| {
                Error::parse(child.line, child.column, format!("`{}` is missing parent configuration {k}", child.text))
            })?;
            let s: f64 = r.iter().sum();
            if r.iter().any(|&v| v < 0.0) || (s - 1.0).abs() > 1e-6 {
                return Err(Error::parse(
                    child.line,
                    child.column,
                    format!("row {k} of `{}` sums to {s}", child.text),
                ));
            }
            full.push(r);
        }
        probabilities.push(BifProbability {
            child: child.text,
            parents: parents.into_iter().map(|t| t.text).collect(),
            rows: full,
        });
    }
    if let Some(i) = defined.iter().position(|d| !d) {
        return Err(Error::parse(p.end.0, p.end.1, format!("no probability block for `{}`", variables[i].name)));
    }
    Ok(BifDocument {
        name,
        variables,
        probabilities,
    })
}

/// Writes a document back to BIF text; parsing the output yields the same document.
pub fn write_bif(doc: &BifDocument) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "network {} {{\n}}", if doc.name.is_empty() { "unknown" } else { &doc.name });
    for v in &doc.variables {
        let _ = writeln!(
            s,
            "variable {} {{\n  type discrete [ {} ] {{ {} }};\n}}",
            v.name,
            v.states.len(),
            v.states.join(", ")
        );
    }
    let states: HashMap<&str, &[String]> = doc.variables.iter().map(|v| (v.name.as_str(), v.states.as_slice())).collect();
    for p in &doc.probabilities {
        let fmt_row = |r: &[f64]| r.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", ");
        if p.parents.is_empty() {
            let _ = writeln!(s, "probability ( {} ) {{\n  table {};\n}}", p.child, fmt_row(&p.rows[0]));
            continue;
        }
        let _ = writeln!(s, "probability ( {} | {} ) {{", p.child, p.parents.join(", "));
        let arities: Vec<usize> = p.parents.iter().map(|q| states[q.as_str()].len()).collect();
        for (k, row) in p.rows.iter().enumerate() {
            let mut rem = k;
            let mut cfg = vec![""; arities.len()];
            for j in (0..arities.len()).rev() {
                cfg[j] = &states[p.parents[j].as_str()][rem % arities[j]];
                rem /= arities[j];
            }
            let _ = writeln!(s, "  ({}) {};", cfg.join(", "), fmt_row(row));
        }
        s.push_str("}\n");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "network toy {\n}\n\
        variable a {\n  type discrete [ 2 ] { yes, no };\n}\n\
        variable b {\n  type discrete [ 3 ] { <5, 5-12, 12+ };\n}\n\
        probability ( a ) {\n  table 0.3, 0.7;\n}\n\
        probability ( b | a ) {\n  (no) 0.2, 0.3, 0.5;\n  (yes) 0.1, 0.1, 0.8;\n}\n";

    #[test]
    fn parses_toy_network() {
        let d = parse_bif(TOY).unwrap();
        assert_eq!(d.name, "toy");
        assert_eq!(d.variables[1].states, vec!["<5", "5-12", "12+"]);
        assert_eq!(d.probabilities[1].rows, vec![vec![0.1, 0.1, 0.8], vec![0.2, 0.3, 0.5]]);
    }

    #[test]
    fn round_trips() {
        let d = parse_bif(TOY).unwrap();
        assert_eq!(parse_bif(&write_bif(&d)).unwrap(), d);
    }

    #[test]
    fn located_errors() {
        let bad = TOY.replace("(no) 0.2, 0.3, 0.5;", "(no) 0.2, 0.8;");
        match parse_bif(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 13),
            other => panic!("{other:?}"),
        }
        let undeclared = TOY.replace("probability ( b | a )", "probability ( b | c )");
        assert!(matches!(parse_bif(&undeclared), Err(Error::Parse { line: 12, .. })));
        let unnormalized = TOY.replace("0.3, 0.7", "0.3, 0.6");
        assert!(parse_bif(&unnormalized).is_err());
        assert!(matches!(parse_bif("variable x {"), Err(Error::Parse { .. })));
    }

    #[test]
    fn comments_and_properties_are_skipped() {
        let t = format!("// header\n/* block\n comment */{}", TOY.replace("network toy {\n}", "network toy {\n property x y;\n}"));
        assert_eq!(parse_bif(&t).unwrap(), parse_bif(TOY).unwrap());
    }
}
