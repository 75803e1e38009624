//! Text formats for reaction networks (`.crn`) and protocols (`.pp`).
//!
//! Reaction network grammar, one reaction per line:
//!
//! ```text
//! file     := (line NEWLINE)*
//! line     := reaction | comment | blank
//! comment  := '#' any*
//! species  := [A-Za-z_][A-Za-z0-9_]*
//! side     := term ('+' term)?
//! term     := ('2' '*'?)? species        # coefficient 1 or 2 only
//! reaction := side ('->' | '<->') side rates?
//! rates    := '@' number (',' number)?   # k, optionally k_rev
//! ```
//!
//! The reverse rate is required for `<->` and forbidden for `->`; a missing
//! `@` clause means `k = 1`. Species are declared implicitly.
//!
//! Protocol grammar, one rule per line:
//!
//! ```text
//! A B -> C D [: p]    # unordered rule, applied to both orders
//! A B => C D [: p]    # ordered rule, applied as written
//! ```
//!
//! Multiple lines with the same left side accumulate a randomized
//! distribution; the probabilities for one left side may sum to at most 1
//! and the remainder is null. Header comments of the form `# m = ...` and
//! `# states = A B C` are written by [`emit_protocol`] and recognized by
//! [`parse_protocol`], so emitted files round-trip including the time-scale
//! constant and rule-less states.

use std::collections::HashMap;
use std::fmt;

use crate::error::Result;
use crate::model::{
    Crn, OutputDistribution, Protocol, Reaction, ReactionSide, StateId, StateNames,
    PROB_OVERFLOW_SLACK,
};

/// Location of a token inside the source text (1-based line, 1-based
/// inclusive column range).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SourceSpan {
    pub line: usize,
    pub col_start: usize,
    pub col_end: usize,
}

/// What went wrong, beyond the message, so callers can match on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    BadCoefficient,
    SideTooLarge,
    ArityMismatch,
    MissingReverseRate,
    UnexpectedReverseRate,
    NonPositiveRate,
    InvalidProbability,
    ProbabilityOverflow,
    ConflictingOrderedRules,
}

/// Parse failure with the offending span and the token set that would have
/// been accepted there.
#[derive(Clone, Debug)]
pub struct ParseError {
    pub span: SourceSpan,
    pub message: String,
    pub expected: Vec<&'static str>,
    pub kind: ParseErrorKind,
}

impl ParseError {
    fn new(kind: ParseErrorKind, span: SourceSpan, message: impl Into<String>) -> Self {
        Self {
            span,
            message: message.into(),
            expected: Vec::new(),
            kind,
        }
    }

    fn expecting(mut self, expected: Vec<&'static str>) -> Self {
        self.expected = expected;
        self
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}, cols {}-{}: {}",
            self.span.line, self.span.col_start, self.span.col_end, self.message
        )?;
        if !self.expected.is_empty() {
            write!(f, " (expected {})", self.expected.join(" | "))?;
        }
        Ok(())
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Plus,
    Star,
    Arrow,       // ->
    BiArrow,     // <->
    OrderedArrow, // =>
    At,
    Comma,
    Colon,
}

impl Tok {
    fn describe(&self) -> &'static str {
        match self {
            Tok::Ident(_) => "species name",
            Tok::Number(_) => "number",
            Tok::Plus => "'+'",
            Tok::Star => "'*'",
            Tok::Arrow => "'->'",
            Tok::BiArrow => "'<->'",
            Tok::OrderedArrow => "'=>'",
            Tok::At => "'@'",
            Tok::Comma => "','",
            Tok::Colon => "':'",
        }
    }
}

fn tokenize_line(line: &str, line_no: usize) -> std::result::Result<Vec<(Tok, SourceSpan)>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        let span1 = SourceSpan { line: line_no, col_start: col, col_end: col };
        match c {
            ' ' | '\t' | '\r' => i += 1,
            '+' => {
                out.push((Tok::Plus, span1));
                i += 1;
            }
            '*' => {
                out.push((Tok::Star, span1));
                i += 1;
            }
            '@' => {
                out.push((Tok::At, span1));
                i += 1;
            }
            ',' => {
                out.push((Tok::Comma, span1));
                i += 1;
            }
            ':' => {
                out.push((Tok::Colon, span1));
                i += 1;
            }
            '-' => {
                if chars.get(i + 1) == Some(&'>') {
                    out.push((Tok::Arrow, SourceSpan { line: line_no, col_start: col, col_end: col + 1 }));
                    i += 2;
                } else {
                    return Err(ParseError::new(ParseErrorKind::Syntax, span1, "unexpected `-`")
                        .expecting(vec!["'->'"]));
                }
            }
            '<' => {
                if chars.get(i + 1) == Some(&'-') && chars.get(i + 2) == Some(&'>') {
                    out.push((Tok::BiArrow, SourceSpan { line: line_no, col_start: col, col_end: col + 2 }));
                    i += 3;
                } else {
                    return Err(ParseError::new(ParseErrorKind::Syntax, span1, "unexpected `<`")
                        .expecting(vec!["'<->'"]));
                }
            }
            '=' => {
                if chars.get(i + 1) == Some(&'>') {
                    out.push((Tok::OrderedArrow, SourceSpan { line: line_no, col_start: col, col_end: col + 1 }));
                    i += 2;
                } else {
                    return Err(ParseError::new(ParseErrorKind::Syntax, span1, "unexpected `=`")
                        .expecting(vec!["'=>'"]));
                }
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                out.push((
                    Tok::Ident(word),
                    SourceSpan { line: line_no, col_start: start + 1, col_end: i },
                ));
            }
            _ if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || chars[i] == 'e'
                        || chars[i] == 'E'
                        || ((chars[i] == '+' || chars[i] == '-')
                            && matches!(chars[i - 1], 'e' | 'E')))
                {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let span = SourceSpan { line: line_no, col_start: start + 1, col_end: i };
                // Plain "2" directly before a species name is the coefficient
                // form `2X`; emit it as a number token and let the parser
                // decide.
                let value: f64 = word.parse().map_err(|_| {
                    ParseError::new(ParseErrorKind::Syntax, span, format!("malformed number `{word}`"))
                })?;
                out.push((Tok::Number(value), span));
            }
            _ => {
                return Err(ParseError::new(
                    ParseErrorKind::Syntax,
                    span1,
                    format!("unexpected character `{c}`"),
                ));
            }
        }
    }
    Ok(out)
}

fn line_span(line_no: usize, line: &str) -> SourceSpan {
    SourceSpan { line: line_no, col_start: 1, col_end: line.chars().count().max(1) }
}

struct LineParser<'a> {
    toks: &'a [(Tok, SourceSpan)],
    pos: usize,
    end_span: SourceSpan,
}

impl<'a> LineParser<'a> {
    fn new(toks: &'a [(Tok, SourceSpan)], end_span: SourceSpan) -> Self {
        Self { toks, pos: 0, end_span }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn next(&mut self) -> Option<&(Tok, SourceSpan)> {
        let t = self.toks.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> SourceSpan {
        self.toks
            .get(self.pos)
            .map(|(_, s)| *s)
            .unwrap_or(self.end_span)
    }

    fn expect_ident(&mut self, what: &'static str) -> std::result::Result<(String, SourceSpan), ParseError> {
        match self.next() {
            Some((Tok::Ident(s), span)) => Ok((s.clone(), *span)),
            Some((t, span)) => Err(ParseError::new(
                ParseErrorKind::Syntax,
                *span,
                format!("found {}", t.describe()),
            )
            .expecting(vec![what])),
            None => Err(ParseError::new(ParseErrorKind::Syntax, self.end_span, "line ended early")
                .expecting(vec![what])),
        }
    }

    fn expect_end(&mut self) -> std::result::Result<(), ParseError> {
        if let Some((t, span)) = self.toks.get(self.pos) {
            return Err(ParseError::new(
                ParseErrorKind::Syntax,
                *span,
                format!("trailing {}", t.describe()),
            )
            .expecting(vec!["end of line"]));
        }
        Ok(())
    }
}

fn is_comment_or_blank(line: &str) -> bool {
    let trimmed = line.trim_start();
    trimmed.is_empty() || trimmed.starts_with('#')
}

/// Parses the reaction-network format. The returned network has volume 1;
/// set the real volume with [`Crn::with_volume`].
pub fn parse_crn(text: &str) -> Result<Crn> {
    let mut names = StateNames::new();
    let mut reactions = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if is_comment_or_blank(raw_line) {
            continue;
        }
        let toks = tokenize_line(raw_line, line_no)?;
        let mut p = LineParser::new(&toks, line_span(line_no, raw_line));
        let reaction = parse_reaction_line(&mut p, &mut names)?;
        reactions.push(reaction);
    }
    Ok(Crn::new(names, reactions, 1.0)?)
}

fn parse_side(
    p: &mut LineParser<'_>,
    names: &mut StateNames,
) -> std::result::Result<(Vec<StateId>, SourceSpan), ParseError> {
    let start = p.here();
    let mut species = Vec::new();
    parse_term(p, names, &mut species)?;
    if matches!(p.peek(), Some(Tok::Plus)) {
        p.next();
        parse_term(p, names, &mut species)?;
    }
    let end = if p.pos > 0 { p.toks[p.pos - 1].1 } else { start };
    let span = SourceSpan { line: start.line, col_start: start.col_start, col_end: end.col_end };
    if species.len() > 2 {
        return Err(ParseError::new(
            ParseErrorKind::SideTooLarge,
            span,
            format!("side lists {} molecules; at most 2 are supported", species.len()),
        ));
    }
    Ok((species, span))
}

fn parse_term(
    p: &mut LineParser<'_>,
    names: &mut StateNames,
    out: &mut Vec<StateId>,
) -> std::result::Result<(), ParseError> {
    match p.peek() {
        Some(Tok::Number(_)) => {
            let (tok, span) = {
                let (t, s) = &p.toks[p.pos];
                (t.clone(), *s)
            };
            p.pos += 1;
            let Tok::Number(value) = tok else { unreachable!() };
            if value != 2.0 {
                return Err(ParseError::new(
                    ParseErrorKind::BadCoefficient,
                    span,
                    format!("coefficient {value} is not supported; only 2 (write the species once for coefficient 1)"),
                ));
            }
            if matches!(p.peek(), Some(Tok::Star)) {
                p.next();
            }
            let (name, _) = p.expect_ident("species name")?;
            let id = names.intern(&name);
            out.push(id);
            out.push(id);
            Ok(())
        }
        _ => {
            let (name, _) = p.expect_ident("species name")?;
            out.push(names.intern(&name));
            Ok(())
        }
    }
}

fn parse_reaction_line(
    p: &mut LineParser<'_>,
    names: &mut StateNames,
) -> std::result::Result<Reaction, ParseError> {
    let (reactants, r_span) = parse_side(p, names)?;
    let (reversible, arrow_span) = match p.next() {
        Some((Tok::Arrow, span)) => (false, *span),
        Some((Tok::BiArrow, span)) => (true, *span),
        Some((t, span)) => {
            return Err(ParseError::new(
                ParseErrorKind::Syntax,
                *span,
                format!("found {}", t.describe()),
            )
            .expecting(vec!["'->'", "'<->'", "'+'"]));
        }
        None => {
            return Err(ParseError::new(ParseErrorKind::Syntax, p.end_span, "line ended early")
                .expecting(vec!["'->'", "'<->'"]));
        }
    };
    let (products, pr_span) = parse_side(p, names)?;

    let mut rate = 1.0f64;
    let mut reverse_rate: Option<f64> = None;
    if matches!(p.peek(), Some(Tok::At)) {
        p.next();
        let span = p.here();
        match p.next() {
            Some((Tok::Number(k), kspan)) => {
                if !(*k > 0.0) {
                    return Err(ParseError::new(
                        ParseErrorKind::NonPositiveRate,
                        *kspan,
                        format!("rate {k} must be strictly positive"),
                    ));
                }
                rate = *k;
            }
            _ => {
                return Err(ParseError::new(ParseErrorKind::Syntax, span, "missing rate after `@`")
                    .expecting(vec!["number"]));
            }
        }
        if matches!(p.peek(), Some(Tok::Comma)) {
            p.next();
            let span = p.here();
            match p.next() {
                Some((Tok::Number(k), kspan)) => {
                    if !(*k > 0.0) {
                        return Err(ParseError::new(
                            ParseErrorKind::NonPositiveRate,
                            *kspan,
                            format!("rate {k} must be strictly positive"),
                        ));
                    }
                    reverse_rate = Some(*k);
                }
                _ => {
                    return Err(ParseError::new(ParseErrorKind::Syntax, span, "missing reverse rate after `,`")
                        .expecting(vec!["number"]));
                }
            }
        }
    }
    p.expect_end()?;

    if reactants.len() != products.len() {
        let span = SourceSpan {
            line: r_span.line,
            col_start: r_span.col_start,
            col_end: pr_span.col_end,
        };
        return Err(ParseError::new(
            ParseErrorKind::ArityMismatch,
            span,
            format!(
                "{} reactant(s) but {} product(s); arities must match",
                reactants.len(),
                products.len()
            ),
        ));
    }
    if reversible && reverse_rate.is_none() {
        return Err(ParseError::new(
            ParseErrorKind::MissingReverseRate,
            arrow_span,
            "reversible reaction needs `@ k, k_rev`",
        ));
    }
    if !reversible && reverse_rate.is_some() {
        return Err(ParseError::new(
            ParseErrorKind::UnexpectedReverseRate,
            arrow_span,
            "irreversible reaction takes a single rate",
        ));
    }

    let side = |v: &[StateId]| match v {
        [x] => ReactionSide::Uni(*x),
        [x, y] => ReactionSide::Bi(*x, *y),
        _ => unreachable!(),
    };
    Ok(Reaction {
        reactants: side(&reactants),
        products: side(&products),
        rate,
        reverse_rate,
    })
}

#[derive(Clone)]
struct RuleLine {
    output: (StateId, StateId),
    prob: f64,
    span: SourceSpan,
}

/// Parses the protocol format.
pub fn parse_protocol(text: &str) -> Result<Protocol> {
    let mut names = StateNames::new();
    let mut m = 1.0f64;
    // Contributions per ordered pair, separated by rule form so conflicts
    // between unordered and explicit ordered rules can be detected.
    let mut unordered: HashMap<(StateId, StateId), Vec<RuleLine>> = HashMap::new();
    let mut ordered: HashMap<(StateId, StateId), Vec<RuleLine>> = HashMap::new();
    let mut pair_order: Vec<(StateId, StateId)> = Vec::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = raw_line.trim_start();
        if trimmed.starts_with('#') {
            parse_header_comment(trimmed, &mut m, &mut names);
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let toks = tokenize_line(raw_line, line_no)?;
        let mut p = LineParser::new(&toks, line_span(line_no, raw_line));

        let (a_name, _) = p.expect_ident("state name")?;
        let (b_name, _) = p.expect_ident("state name")?;
        let arrow = match p.next() {
            Some((Tok::Arrow, _)) => false,
            Some((Tok::OrderedArrow, _)) => true,
            Some((t, span)) => {
                return Err(ParseError::new(
                    ParseErrorKind::Syntax,
                    *span,
                    format!("found {}", t.describe()),
                )
                .expecting(vec!["'->'", "'=>'"])
                .into());
            }
            None => {
                return Err(ParseError::new(ParseErrorKind::Syntax, p.end_span, "line ended early")
                    .expecting(vec!["'->'", "'=>'"])
                    .into());
            }
        };
        let (c_name, _) = p.expect_ident("state name")?;
        let (d_name, dspan) = p.expect_ident("state name")?;
        let mut prob = 1.0f64;
        let mut prob_span = dspan;
        if matches!(p.peek(), Some(Tok::Colon)) {
            p.next();
            match p.next() {
                Some((Tok::Number(v), span)) => {
                    if !(*v > 0.0 && *v <= 1.0) {
                        return Err(ParseError::new(
                            ParseErrorKind::InvalidProbability,
                            *span,
                            format!("probability {v} must lie in (0, 1]"),
                        )
                        .into());
                    }
                    prob = *v;
                    prob_span = *span;
                }
                _ => {
                    return Err(ParseError::new(ParseErrorKind::Syntax, p.here(), "missing probability after `:`")
                        .expecting(vec!["number"])
                        .into());
                }
            }
        }
        p.expect_end()?;

        let a = names.intern(&a_name);
        let b = names.intern(&b_name);
        let c = names.intern(&c_name);
        let d = names.intern(&d_name);

        let mut destinations: Vec<(bool, (StateId, StateId), (StateId, StateId))> = Vec::new();
        if arrow {
            destinations.push((true, (a, b), (c, d)));
        } else {
            destinations.push((false, (a, b), (c, d)));
            if a != b {
                destinations.push((false, (b, a), (d, c)));
            }
        }
        for (is_ordered, input, output) in destinations {
            if !unordered.contains_key(&input) && !ordered.contains_key(&input) {
                pair_order.push(input);
            }
            let map = if is_ordered { &mut ordered } else { &mut unordered };
            map.entry(input).or_default().push(RuleLine { output, prob, span: prob_span });
        }
    }

    let mut delta: HashMap<(StateId, StateId), OutputDistribution> = HashMap::new();
    for input in pair_order {
        let u = unordered.remove(&input);
        let o = ordered.remove(&input);
        let chosen = match (u, o) {
            (Some(u), None) => u,
            (None, Some(o)) => o,
            (Some(u), Some(o)) => {
                let du = build_distribution(&names, input, &u)?;
                let d_o = build_distribution(&names, input, &o)?;
                if !du.same_distribution(&d_o, PROB_OVERFLOW_SLACK) {
                    let span = o[0].span;
                    return Err(ParseError::new(
                        ParseErrorKind::ConflictingOrderedRules,
                        span,
                        format!(
                            "pair ({}, {}) is defined by both an unordered rule and a disagreeing ordered rule",
                            names.name(input.0),
                            names.name(input.1)
                        ),
                    )
                    .into());
                }
                o
            }
            (None, None) => unreachable!(),
        };
        let dist = build_distribution(&names, input, &chosen)?;
        if !dist.is_null() {
            delta.insert(input, dist);
        }
    }
    Protocol::new(names, delta, m)
}

fn build_distribution(
    names: &StateNames,
    input: (StateId, StateId),
    lines: &[RuleLine],
) -> std::result::Result<OutputDistribution, ParseError> {
    let mut entries = Vec::new();
    let mut sum = 0.0f64;
    for l in lines {
        sum += l.prob;
        if sum > 1.0 + PROB_OVERFLOW_SLACK {
            return Err(ParseError::new(
                ParseErrorKind::ProbabilityOverflow,
                l.span,
                format!(
                    "probabilities for pair ({}, {}) sum to {sum}, which exceeds 1",
                    names.name(input.0),
                    names.name(input.1)
                ),
            ));
        }
        // Null stays explicit: a rule mapping a pair to itself contributes
        // null mass, not a self-loop entry.
        if l.output != input {
            entries.push((l.output, l.prob));
        }
    }
    OutputDistribution::from_entries(entries).map_err(|_| {
        ParseError::new(
            ParseErrorKind::ProbabilityOverflow,
            lines[0].span,
            "probabilities overflow 1",
        )
    })
}

fn parse_header_comment(trimmed: &str, m: &mut f64, names: &mut StateNames) {
    let body = trimmed.trim_start_matches('#').trim();
    if let Some((key, value)) = body.split_once('=') {
        match key.trim() {
            "m" => {
                if let Ok(v) = value.trim().parse::<f64>() {
                    if v > 0.0 {
                        *m = v;
                    }
                }
            }
            "states" => {
                for name in value.trim().split_whitespace() {
                    names.intern(name);
                }
            }
            _ => {}
        }
    }
}

/// Canonical text form of a protocol: a header recording `m` and the state
/// set, then one ordered rule per non-null entry. States are emitted in
/// name order, so `parse_protocol(emit_protocol(p))` reproduces `p` with
/// normalized state ids.
pub fn emit_protocol(protocol: &Protocol) -> String {
    emit_protocol_with_header(protocol, &[])
}

/// [`emit_protocol`] with extra header lines (`# key = value`) prepended,
/// e.g. the `n` and `v` a compiled protocol was built for.
pub fn emit_protocol_with_header(protocol: &Protocol, extra: &[(&str, String)]) -> String {
    let names = protocol.names();
    let sorted = names.sorted_ids();
    let mut out = String::new();
    out.push_str(&format!("# m = {}\n", protocol.m()));
    for (key, value) in extra {
        out.push_str(&format!("# {key} = {value}\n"));
    }
    let state_list: Vec<&str> = sorted.iter().map(|&id| names.name(id)).collect();
    out.push_str(&format!("# states = {}\n", state_list.join(" ")));
    for &a in &sorted {
        for &b in &sorted {
            let dist = protocol.delta(a, b);
            for &((c, d), p) in dist.entries() {
                out.push_str(&format!(
                    "{} {} => {} {} : {}\n",
                    names.name(a),
                    names.name(b),
                    names.name(c),
                    names.name(d),
                    p
                ));
            }
        }
    }
    out
}

/// Structural equality of protocols modulo state renaming by name: same
/// state names, same `m`, and the same distribution for every ordered pair.
pub fn protocols_equivalent(a: &Protocol, b: &Protocol, tol: f64) -> bool {
    if a.q() != b.q() || (a.m() - b.m()).abs() > tol {
        return false;
    }
    let map: Option<Vec<StateId>> = (0..a.q() as u32)
        .map(|i| b.names().get(a.names().name(StateId(i))))
        .collect();
    let Some(map) = map else {
        return false;
    };
    for x in 0..a.q() as u32 {
        for y in 0..a.q() as u32 {
            let da = a.delta(StateId(x), StateId(y));
            let remapped = OutputDistribution::from_entries(
                da.entries()
                    .iter()
                    .map(|&((c, d), p)| ((map[c.index()], map[d.index()]), p))
                    .collect(),
            )
            .expect("valid distribution");
            let db = b.delta(map[x as usize], map[y as usize]);
            if !remapped.same_distribution(db, tol) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::model::StateId;

    fn crn_species(crn: &Crn) -> Vec<&str> {
        crn.names.iter().map(|(_, n)| n).collect()
    }

    #[test]
    fn parses_approximate_majority_crn() {
        let crn = parse_crn("A + B -> 2U\nA + U -> 2A @ 3\nB + U <-> 2B @ 4, 5\n").unwrap();
        assert_eq!(crn_species(&crn), vec!["A", "B", "U"]);
        assert_eq!(crn.reactions.len(), 3);
        let r0 = &crn.reactions[0];
        assert_eq!(r0.rate, 1.0);
        assert_eq!(r0.reverse_rate, None);
        let u = crn.names.get("U").unwrap();
        assert_eq!(r0.products, ReactionSide::Bi(u, u));
        assert_eq!(crn.reactions[1].rate, 3.0);
        assert_eq!(crn.reactions[2].rate, 4.0);
        assert_eq!(crn.reactions[2].reverse_rate, Some(5.0));
    }

    #[test]
    fn parses_rock_paper_scissors() {
        let crn = parse_crn("B + A -> 2B\nC + B -> 2C\nA + C -> 2A\n").unwrap();
        assert_eq!(crn.reactions.len(), 3);
        assert!(crn.reactions.iter().all(|r| r.rate == 1.0 && r.reverse_rate.is_none()));
    }

    #[test]
    fn arity_mismatch_is_rejected() {
        let err = parse_crn("A -> B + C\n").unwrap_err();
        let Error::Parse(err) = err else { panic!("expected parse error") };
        assert_eq!(err.kind, ParseErrorKind::ArityMismatch);
        assert_eq!(err.span.line, 1);
    }

    #[test]
    fn reverse_rate_rules() {
        let err = parse_crn("A + B <-> 2A @ 3\n").unwrap_err();
        let Error::Parse(err) = err else { panic!() };
        assert_eq!(err.kind, ParseErrorKind::MissingReverseRate);

        let err = parse_crn("A + B <-> 2A\n").unwrap_err();
        let Error::Parse(err) = err else { panic!() };
        assert_eq!(err.kind, ParseErrorKind::MissingReverseRate);

        let err = parse_crn("A + B -> 2A @ 3, 4\n").unwrap_err();
        let Error::Parse(err) = err else { panic!() };
        assert_eq!(err.kind, ParseErrorKind::UnexpectedReverseRate);
    }

    #[test]
    fn coefficient_and_size_limits() {
        let err = parse_crn("3A -> 3B\n").unwrap_err();
        let Error::Parse(err) = err else { panic!() };
        assert_eq!(err.kind, ParseErrorKind::BadCoefficient);

        let err = parse_crn("2A + B -> 2A + B\n").unwrap_err();
        let Error::Parse(err) = err else { panic!() };
        assert_eq!(err.kind, ParseErrorKind::SideTooLarge);
    }

    #[test]
    fn star_coefficient_and_comments() {
        let crn = parse_crn("# a comment\n\n2*A -> B + C @ 0.5\n").unwrap();
        assert_eq!(crn.reactions.len(), 1);
        let a = crn.names.get("A").unwrap();
        assert_eq!(crn.reactions[0].reactants, ReactionSide::Bi(a, a));
        assert_eq!(crn.reactions[0].rate, 0.5);
    }

    #[test]
    fn parse_error_span_is_inside_line() {
        let err = parse_crn("A + B -> 2U\nA + ? -> 2A\n").unwrap_err();
        let Error::Parse(err) = err else { panic!() };
        assert_eq!(err.span.line, 2);
        assert!(err.span.col_start >= 1 && err.span.col_end <= 11);
    }

    #[test]
    fn parses_unordered_protocol_symmetrized() {
        let p = parse_protocol("A B -> U U\nA U -> A A\nB U -> B B\n").unwrap();
        assert_eq!(p.q(), 3);
        assert!(p.is_symmetric());
        let id = |s: &str| p.names().get(s).unwrap();
        let d = p.delta(id("U"), id("A"));
        assert!(d.is_deterministic());
        assert_eq!(d.entries()[0].0, (id("A"), id("A")));
        assert_eq!(p.nonnull_pairs().len(), 6);
        assert_eq!(p.m(), 1.0);
    }

    #[test]
    fn ordered_randomized_rule() {
        let p = parse_protocol("A A => B C : 0.5\n").unwrap();
        let id = |s: &str| p.names().get(s).unwrap();
        let d = p.delta(id("A"), id("A"));
        assert_eq!(d.entries().len(), 1);
        assert!((d.null_prob() - 0.5).abs() < 1e-15);
        // Ordered rule applies as written only.
        assert!(p.delta(id("B"), id("C")).is_null());
    }

    #[test]
    fn probability_overflow_detected() {
        let err = parse_protocol("A B -> U U : 0.7\nA B -> A A : 0.6\n").unwrap_err();
        let Error::Parse(err) = err else { panic!() };
        assert_eq!(err.kind, ParseErrorKind::ProbabilityOverflow);
        assert_eq!(err.span.line, 2);
    }

    #[test]
    fn conflicting_ordered_rules_detected() {
        let err = parse_protocol("A B -> U U\nB A => A A\n").unwrap_err();
        let Error::Parse(err) = err else { panic!() };
        assert_eq!(err.kind, ParseErrorKind::ConflictingOrderedRules);

        // Agreement between the two forms is tolerated.
        let p = parse_protocol("A B -> U U\nB A => U U\n").unwrap();
        assert!(p.is_symmetric());
    }

    #[test]
    fn self_loop_rule_becomes_null() {
        let p = parse_protocol("A B => A B : 0.5\n").unwrap();
        let id = |s: &str| p.names().get(s).unwrap();
        assert!(p.delta(id("A"), id("B")).is_null());
    }

    #[test]
    fn round_trips_parse_examples() {
        let sources = [
            "A B -> U U\nA U -> A A\nB U -> B B\n",
            "A A => B C : 0.5\n",
            "A B -> U U : 0.25\nA B -> A A : 0.25\n",
        ];
        for src in sources {
            let p = parse_protocol(src).unwrap();
            let emitted = emit_protocol(&p);
            let p2 = parse_protocol(&emitted).unwrap();
            assert!(protocols_equivalent(&p, &p2, 1e-12), "round trip failed for {src:?}");
        }
    }

    #[test]
    fn round_trip_preserves_m_and_ruleless_states() {
        let mut names = StateNames::new();
        let a = names.intern("A");
        names.intern("Idle");
        let mut delta = HashMap::new();
        delta.insert(
            (a, a),
            OutputDistribution::from_entries(vec![((a, a), 0.0)].into_iter().filter(|_| false).collect())
                .unwrap(),
        );
        let p = Protocol::new(names, delta, 1.9).unwrap();
        let text = emit_protocol(&p);
        assert!(text.starts_with("# m = 1.9\n"));
        let p2 = parse_protocol(&text).unwrap();
        assert_eq!(p2.q(), 2);
        assert_eq!(p2.m(), 1.9);
    }

    #[test]
    fn empty_text_gives_empty_protocol() {
        let p = parse_protocol("").unwrap();
        assert_eq!(p.q(), 0);
        let emitted = emit_protocol(&p);
        let p2 = parse_protocol(&emitted).unwrap();
        assert_eq!(p2.q(), 0);
    }

    #[test]
    fn line_order_independent_for_disjoint_left_sides() {
        let p1 = parse_protocol("A B -> U U\nA U -> A A\n").unwrap();
        let p2 = parse_protocol("A U -> A A\nA B -> U U\n").unwrap();
        assert!(protocols_equivalent(&p1, &p2, 0.0));
    }

    #[test]
    fn mirrored_unordered_lines_accumulate() {
        let p = parse_protocol("A B -> U U : 0.5\nB A -> A A : 0.25\n").unwrap();
        let id = |s: &str| p.names().get(s).unwrap();
        let d = p.delta(id("A"), id("B"));
        assert_eq!(d.entries().len(), 2);
        assert!((d.null_prob() - 0.25).abs() < 1e-12);
        assert!(p.is_symmetric());
    }

    #[test]
    fn trailing_garbage_rejected() {
        let err = parse_protocol("A B -> U U extra\n").unwrap_err();
        let Error::Parse(err) = err else { panic!() };
        assert_eq!(err.kind, ParseErrorKind::Syntax);
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        fn arb_protocol() -> impl Strategy<Value = Protocol> {
            // Up to 20 states; a handful of randomized entries per pair.
            (2usize..=20).prop_flat_map(|q| {
                let pair = (0..q as u32, 0..q as u32);
                let entry = (pair, (0..q as u32, 0..q as u32), 1u32..=100);
                proptest::collection::vec(entry, 0..12).prop_map(move |raw| {
                    let mut names = StateNames::new();
                    for i in 0..q {
                        names.intern(&format!("S{i}"));
                    }
                    let mut per_pair: HashMap<(StateId, StateId), Vec<((StateId, StateId), u32)>> =
                        HashMap::new();
                    for ((a, b), (c, d), w) in raw {
                        per_pair
                            .entry((StateId(a), StateId(b)))
                            .or_default()
                            .push(((StateId(c), StateId(d)), w));
                    }
                    let mut delta = HashMap::new();
                    for (input, entries) in per_pair {
                        let total: u32 = entries.iter().map(|e| e.1).sum();
                        // Probabilities scaled to sum to at most 1/2 so
                        // accumulation can never overflow.
                        let ents: Vec<((StateId, StateId), f64)> = entries
                            .iter()
                            .filter(|(out, _)| *out != input)
                            .map(|&(out, w)| (out, w as f64 / (2.0 * total as f64)))
                            .collect();
                        if !ents.is_empty() {
                            delta.insert(input, OutputDistribution::from_entries(ents).unwrap());
                        }
                    }
                    Protocol::new(names, delta, 1.0).unwrap()
                })
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn emit_parse_round_trip(p in arb_protocol()) {
                let text = emit_protocol(&p);
                let p2 = parse_protocol(&text).unwrap();
                prop_assert!(protocols_equivalent(&p, &p2, 1e-12));
                // Emission of the re-parsed protocol is a fixpoint.
                prop_assert_eq!(text, emit_protocol(&p2));
            }
        }
    }
}
