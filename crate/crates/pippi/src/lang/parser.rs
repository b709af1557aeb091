//! Recursive-descent parser for protocol specification documents.
//!
//! Layout matters in exactly two places, both inside parameter expressions:
//!   - a run of comma-separated bare names on one line shares the adornment,
//!     qualifiers, and trailing constraints of its group;
//!   - a line break after a complete clause may stand in for a comma.

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use super::SyntaxError;
use std::collections::BTreeSet;

/// Prefixes accepted without a preamble declaration.
pub const RECOGNIZED_SCHEMES: &[&str] =
    &["http", "https", "urn", "ftp", "file", "mailto", "tag", "did"];

fn adornment_keyword(word: &str) -> Option<Adornment> {
    match word {
        "in" => Some(Adornment::In),
        "nil" => Some(Adornment::Nil),
        "out" => Some(Adornment::Out),
        "any" => Some(Adornment::Any),
        "opt" => Some(Adornment::Opt),
        _ => None,
    }
}

fn qualifier_keyword(word: &str) -> bool {
    matches!(word, "key" | "local" | "set")
}

fn reserved(word: &str) -> bool {
    adornment_keyword(word).is_some() || qualifier_keyword(word) || word == "private" || word == "or"
}

/// Parse a whole document.
pub fn parse(text: &str) -> Result<Specification, SyntaxError> {
    let tokens = lex(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        prefixes: BTreeSet::new(),
    };
    p.specification()
}

#[derive(Clone, Copy, PartialEq)]
enum Site {
    /// Declaration position: unadorned parameters default to `in`.
    Decl,
    /// Reference position: unadorned parameters stay unspecified.
    Reference,
}

/// Pending shared-adornment group while parsing a comma run.
struct GroupState {
    adornment: Adornment,
    defaulted: bool,
    qualifiers: Qualifiers,
    line: u32,
    /// Clause indexes of members already appended, for backward constraint
    /// distribution.
    members: Vec<usize>,
}

/// One parsed unit: a single parameter or a parenthesized expression.
enum Unit {
    Param(Parameter),
    Expr(ParamExpr),
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    prefixes: BTreeSet<String>,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, offset: usize) -> Option<&Token> {
        self.tokens.get(self.pos + offset)
    }

    fn peek_word(&self) -> Option<&str> {
        match self.peek().map(|t| &t.tok) {
            Some(Tok::Word(w)) => Some(w.as_str()),
            _ => None,
        }
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn last_line(&self) -> u32 {
        self.tokens
            .get(self.pos.saturating_sub(1))
            .map(|t| t.line)
            .unwrap_or(0)
    }

    fn here(&self) -> Span {
        match self.peek() {
            Some(t) => Span::new(t.line, t.col),
            None => self
                .tokens
                .last()
                .map(|t| Span::new(t.line, t.col))
                .unwrap_or_default(),
        }
    }

    fn err(&self, expected: &str) -> SyntaxError {
        let span = self.here();
        let found = match self.peek() {
            Some(t) => t.tok.describe(),
            None => "end of input".into(),
        };
        SyntaxError::new(span.line, span.col, format!("expected {expected}, found {found}"))
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<Token, SyntaxError> {
        match self.peek() {
            Some(t) if t.tok == tok => Ok(self.next().unwrap()),
            _ => Err(self.err(expected)),
        }
    }

    fn take_word(&mut self, expected: &str) -> Result<(String, Span, bool), SyntaxError> {
        match self.peek() {
            Some(t) => {
                if let Tok::Word(w) = &t.tok {
                    let out = (w.clone(), Span::new(t.line, t.col), t.glued);
                    self.pos += 1;
                    Ok(out)
                } else {
                    Err(self.err(expected))
                }
            }
            None => Err(self.err(expected)),
        }
    }

    // ------------------------------------------------------------------
    // Document structure
    // ------------------------------------------------------------------

    fn specification(&mut self) -> Result<Specification, SyntaxError> {
        let mut spec = Specification::default();
        while self.is_preamble_entry() {
            let (name, _, _) = self.take_word("preamble name")?;
            self.expect(Tok::Colon, "`:`")?;
            let value = self.preamble_value()?;
            self.prefixes.insert(name.clone());
            spec.preamble.push((name, value));
        }
        while self.peek().is_some() {
            spec.declarations.push(self.declaration()?);
        }
        if spec.declarations.is_empty() {
            let span = self.here();
            return Err(SyntaxError::new(
                span.line,
                span.col,
                "expected at least one protocol or message declaration",
            ));
        }
        Ok(spec)
    }

    fn is_preamble_entry(&self) -> bool {
        matches!(self.peek().map(|t| &t.tok), Some(Tok::Word(w)) if !reserved(w))
            && matches!(self.peek_at(1).map(|t| &t.tok), Some(Tok::Colon))
    }

    fn preamble_value(&mut self) -> Result<String, SyntaxError> {
        match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Str(s)) => {
                self.next();
                Ok(s)
            }
            Some(Tok::Word(w)) => {
                self.next();
                let mut value = w;
                // IRI values keep their scheme separators: `http` `:` `//...`.
                while matches!(self.peek(), Some(t) if t.glued && t.tok == Tok::Colon)
                    && matches!(self.peek_at(1), Some(t) if t.glued && matches!(t.tok, Tok::Word(_)))
                {
                    self.next();
                    if let Some(Tok::Word(w)) = self.peek().map(|t| t.tok.clone()) {
                        self.next();
                        value.push(':');
                        value.push_str(&w);
                    }
                }
                Ok(value)
            }
            _ => Err(self.err("preamble value")),
        }
    }

    fn declaration(&mut self) -> Result<ProtocolDecl, SyntaxError> {
        if self.at_message_head() {
            self.message_decl(Site::Decl)
        } else {
            self.protocol_decl()
        }
    }

    /// A message starts `[ad] Role -> ...`.
    fn at_message_head(&self) -> bool {
        match self.peek_word() {
            Some(w) if adornment_keyword(w).is_some() => true,
            Some(_) => matches!(self.peek_at(1).map(|t| &t.tok), Some(Tok::Arrow)),
            None => false,
        }
    }

    fn protocol_decl(&mut self) -> Result<ProtocolDecl, SyntaxError> {
        let (name, span) = self.qualified_name("protocol name")?;
        self.expect(Tok::LParen, "`(`")?;
        let public = self.param_expr(Site::Decl, &Tok::RParen)?;
        self.expect(Tok::RParen, "`)`")?;
        self.expect(Tok::LBrace, "`{`")?;
        let privates = if self.peek_word() == Some("private") {
            self.next();
            self.private_params()?
        } else {
            Vec::new()
        };
        let mut body = Vec::new();
        while !matches!(self.peek().map(|t| &t.tok), Some(Tok::RBrace)) {
            if self.peek().is_none() {
                return Err(self.err("`}`"));
            }
            body.push(self.reference()?);
        }
        self.expect(Tok::RBrace, "`}`")?;
        if body.is_empty() {
            return Err(SyntaxError::new(
                span.line,
                span.col,
                format!("protocol {} must contain at least one reference or message", name.text()),
            ));
        }
        Ok(ProtocolDecl {
            name,
            public,
            privates,
            body,
            is_message: false,
            sender: None,
            recipients: Vec::new(),
            span,
        })
    }

    fn message_decl(&mut self, payload_site: Site) -> Result<ProtocolDecl, SyntaxError> {
        let sender = self.role_ref()?;
        let span = sender.span;
        self.expect(Tok::Arrow, "`->`")?;
        let mut recipients = vec![self.role_ref()?];
        while matches!(self.peek().map(|t| &t.tok), Some(Tok::Comma)) {
            self.next();
            recipients.push(self.role_ref()?);
        }
        self.expect(Tok::Colon, "`:`")?;
        let (name, _) = self.qualified_name("message name")?;
        self.expect(Tok::LBracket, "`[`")?;
        let public = self.param_expr(payload_site, &Tok::RBracket)?;
        self.expect(Tok::RBracket, "`]`")?;
        Ok(ProtocolDecl {
            name,
            public,
            privates: Vec::new(),
            body: Vec::new(),
            is_message: true,
            sender: Some(sender),
            recipients,
            span,
        })
    }

    fn role_ref(&mut self) -> Result<RoleRef, SyntaxError> {
        let (adornment, defaulted) = match self.peek_word().and_then(adornment_keyword) {
            Some(ad) => {
                self.next();
                (ad, false)
            }
            None => (Adornment::In, true),
        };
        let (name, span) = self.qualified_name("role name")?;
        Ok(RoleRef {
            adornment,
            defaulted,
            name,
            span,
        })
    }

    fn reference(&mut self) -> Result<Reference, SyntaxError> {
        if self.at_message_head() {
            return Ok(Reference::Message(Box::new(self.message_decl(Site::Reference)?)));
        }
        let (target, span) = self.qualified_name("reference target")?;
        self.expect(Tok::LParen, "`(`")?;
        let arguments = self.param_expr(Site::Reference, &Tok::RParen)?;
        self.expect(Tok::RParen, "`)`")?;
        Ok(Reference::Call {
            target,
            arguments,
            span,
        })
    }

    fn private_params(&mut self) -> Result<Vec<Parameter>, SyntaxError> {
        let parenthesized = matches!(self.peek().map(|t| &t.tok), Some(Tok::LParen))
            && !self.abbrev_leading_lookahead();
        let expr = if parenthesized {
            self.next();
            let expr = self.param_expr(Site::Decl, &Tok::RParen)?;
            self.expect(Tok::RParen, "`)`")?;
            expr
        } else {
            // Unparenthesized: strictly comma-chained.
            let mut clauses = Vec::new();
            let mut group: Option<GroupState> = None;
            loop {
                let unit = self.param_unit(Site::Decl, &mut clauses, &mut group)?;
                self.push_unit(unit, &mut clauses, &mut group);
                if matches!(self.peek().map(|t| &t.tok), Some(Tok::Comma)) {
                    self.next();
                } else {
                    break;
                }
            }
            ParamExpr { clauses }
        };
        let span = self.here();
        let mut params = Vec::new();
        for clause in expr.clauses {
            match clause {
                Clause::Param(p) => params.push(p),
                Clause::Or(_) => {
                    return Err(SyntaxError::new(
                        span.line,
                        span.col,
                        "disjunctions are not allowed in private parameter lists",
                    ));
                }
            }
        }
        Ok(params)
    }

    // ------------------------------------------------------------------
    // Parameter expressions
    // ------------------------------------------------------------------

    fn param_expr(&mut self, site: Site, terminator: &Tok) -> Result<ParamExpr, SyntaxError> {
        let mut clauses = Vec::new();
        let mut group: Option<GroupState> = None;
        loop {
            match self.peek() {
                None => return Err(self.err(&terminator.describe())),
                Some(t) if t.tok == *terminator => break,
                _ => {}
            }
            let unit = self.param_unit(site, &mut clauses, &mut group)?;
            if self.peek_word() == Some("or") {
                let left = match unit {
                    Unit::Param(p) => ParamExpr {
                        clauses: vec![Clause::Param(p)],
                    },
                    Unit::Expr(e) => e,
                };
                let mut operands = vec![left];
                while self.peek_word() == Some("or") {
                    self.next();
                    operands.push(self.or_operand(site)?);
                }
                clauses.push(Clause::Or(operands));
                group = None;
            } else {
                self.push_unit(unit, &mut clauses, &mut group);
            }
            match self.peek() {
                Some(t) if t.tok == *terminator => break,
                Some(t) if t.tok == Tok::Comma => {
                    self.next();
                }
                Some(t) if t.line > self.last_line() => {
                    // Implicit separator at the line break.
                }
                _ => return Err(self.err(&format!("`,` or {}", terminator.describe()))),
            }
        }
        Ok(ParamExpr { clauses })
    }

    fn push_unit(&self, unit: Unit, clauses: &mut Vec<Clause>, group: &mut Option<GroupState>) {
        match unit {
            Unit::Param(p) => {
                if let Some(g) = group {
                    g.members.push(clauses.len());
                }
                clauses.push(Clause::Param(p));
            }
            Unit::Expr(e) => {
                // A bare parenthesized expression is just a grouped
                // conjunction; splice its clauses in.
                clauses.extend(e.clauses);
                *group = None;
            }
        }
    }

    /// One operand of an `or` chain: a parenthesized expression or a single
    /// adorned parameter.
    fn or_operand(&mut self, site: Site) -> Result<ParamExpr, SyntaxError> {
        let mut clauses = Vec::new();
        let mut group: Option<GroupState> = None;
        let unit = self.param_unit(site, &mut clauses, &mut group)?;
        match unit {
            Unit::Param(p) => Ok(ParamExpr {
                clauses: vec![Clause::Param(p)],
            }),
            Unit::Expr(e) => Ok(e),
        }
    }

    /// Parse one unit. Constraint lists distribute backwards over the pending
    /// group (mutating already-pushed clauses) and close it.
    fn param_unit(
        &mut self,
        site: Site,
        clauses: &mut [Clause],
        group: &mut Option<GroupState>,
    ) -> Result<Unit, SyntaxError> {
        if matches!(self.peek().map(|t| &t.tok), Some(Tok::LParen))
            && !self.abbrev_leading_lookahead()
        {
            self.next();
            let inner = self.param_expr(site, &Tok::RParen)?;
            self.expect(Tok::RParen, "`)`")?;
            *group = None;
            return Ok(Unit::Expr(inner));
        }

        let start = self.here();
        let mut adornment = None;
        let mut quals = Qualifiers::default();
        while let Some(w) = self.peek_word() {
            if adornment.is_none() && !quals.any() {
                if let Some(ad) = adornment_keyword(w) {
                    self.next();
                    adornment = Some(ad);
                    continue;
                }
            }
            if qualifier_keyword(w) {
                match w {
                    "key" => quals.key = true,
                    "local" => quals.local = true,
                    "set" => quals.set = true,
                    _ => unreachable!(),
                }
                self.next();
                continue;
            }
            break;
        }
        let (name, abbreviation, span) = self.param_name(site)?;
        let bare = adornment.is_none() && !quals.any();

        let (effective_ad, defaulted, eff_quals) = match group {
            Some(g) if bare && span.line == g.line => (g.adornment, g.defaulted, g.qualifiers),
            _ => {
                let (ad, defaulted) = match adornment {
                    Some(ad) => (ad, false),
                    None => match site {
                        Site::Decl => (Adornment::In, true),
                        Site::Reference => (Adornment::Unspecified, false),
                    },
                };
                *group = Some(GroupState {
                    adornment: ad,
                    defaulted,
                    qualifiers: quals,
                    line: span.line,
                    members: Vec::new(),
                });
                (ad, defaulted, quals)
            }
        };

        let mut param = Parameter {
            name,
            abbreviation,
            adornment: effective_ad,
            defaulted,
            qualifiers: eff_quals,
            constraints: Vec::new(),
            span: start,
        };

        if matches!(self.peek().map(|t| &t.tok), Some(Tok::Colon)) {
            self.next();
            let constraints = self.constraints()?;
            if constraints
                .iter()
                .filter(|c| matches!(c, Constraint::Type(_)))
                .count()
                > 1
            {
                return Err(SyntaxError::new(
                    span.line,
                    span.col,
                    format!("parameter {} has more than one type constraint", param.name.text()),
                ));
            }
            if let Some(g) = group {
                for idx in &g.members {
                    if let Clause::Param(p) = &mut clauses[*idx] {
                        p.constraints = constraints.clone();
                    }
                }
            }
            param.constraints = constraints;
            *group = None;
        }

        Ok(Unit::Param(param))
    }

    fn constraints(&mut self) -> Result<Vec<Constraint>, SyntaxError> {
        let mut out = Vec::new();
        loop {
            let mut matched = false;
            if let Some(w) = self.peek_word() {
                if !reserved(w) {
                    let ty = match w {
                        "role" => {
                            self.next();
                            TypeName::Role
                        }
                        "protocol" => {
                            self.next();
                            TypeName::Protocol
                        }
                        _ => {
                            let (name, _) = self.qualified_name("type name")?;
                            TypeName::Name(name)
                        }
                    };
                    out.push(Constraint::Type(ty));
                    matched = true;
                }
            }
            if let Some(op) = self.rel_op() {
                self.next();
                let target = self.constraint_target()?;
                out.push(Constraint::Relation { op, target });
                matched = true;
            }
            if !matched {
                return Err(self.err("constraint"));
            }
            if matches!(self.peek().map(|t| &t.tok), Some(Tok::Semicolon)) {
                self.next();
                continue;
            }
            break;
        }
        Ok(out)
    }

    fn rel_op(&self) -> Option<RelOp> {
        match self.peek().map(|t| &t.tok) {
            Some(Tok::Eq) => Some(RelOp::Eq),
            Some(Tok::Lt) => Some(RelOp::Lt),
            Some(Tok::Gt) => Some(RelOp::Gt),
            Some(Tok::SubsetEq) => Some(RelOp::SubsetEq),
            Some(Tok::ElementOf) => Some(RelOp::ElementOf),
            _ => None,
        }
    }

    fn constraint_target(&mut self) -> Result<ConstraintTarget, SyntaxError> {
        match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Str(s)) => {
                self.next();
                Ok(ConstraintTarget::Str(s))
            }
            Some(Tok::Word(w)) => {
                if let Ok(i) = w.parse::<i64>() {
                    self.next();
                    return Ok(ConstraintTarget::Int(i));
                }
                if w.contains('.') {
                    if let Ok(d) = w.parse::<f64>() {
                        self.next();
                        return Ok(ConstraintTarget::Dec(d));
                    }
                }
                let (name, _) = self.qualified_name("constraint target")?;
                Ok(ConstraintTarget::Name(name))
            }
            _ => Err(self.err("constraint target")),
        }
    }

    // ------------------------------------------------------------------
    // Names
    // ------------------------------------------------------------------

    /// True when the upcoming tokens are `(` Word `)` Word with the trailing
    /// word glued: an abbreviation-led parameter name such as `(W)itness`.
    fn abbrev_leading_lookahead(&self) -> bool {
        matches!(self.peek().map(|t| &t.tok), Some(Tok::LParen))
            && matches!(self.peek_at(1).map(|t| &t.tok), Some(Tok::Word(_)))
            && matches!(self.peek_at(2).map(|t| &t.tok), Some(Tok::RParen))
            && matches!(self.peek_at(3), Some(t) if t.glued && matches!(t.tok, Tok::Word(_)))
    }

    /// A parameter name, with abbreviation forms at declaration sites:
    /// `(W)itness`, `colo(u)r`, and the trailing alias `Propose(R)`.
    fn param_name(
        &mut self,
        site: Site,
    ) -> Result<(QualifiedName, Option<Abbrev>, Span), SyntaxError> {
        if site == Site::Decl && self.abbrev_leading_lookahead() {
            let open = self.next().unwrap();
            let (abbr, _, _) = self.take_word("abbreviation")?;
            self.expect(Tok::RParen, "`)`")?;
            let (rest, _, _) = self.take_word("name")?;
            let full = format!("{abbr}{rest}");
            return Ok((
                QualifiedName::plain(full),
                Some(Abbrev {
                    text: abbr,
                    offset: Some(0),
                }),
                Span::new(open.line, open.col),
            ));
        }
        let (name, span) = self.qualified_name("parameter name")?;
        if site == Site::Decl
            && matches!(self.peek(), Some(t) if t.glued && t.tok == Tok::LParen)
            && matches!(self.peek_at(1).map(|t| &t.tok), Some(Tok::Word(_)))
            && matches!(self.peek_at(2).map(|t| &t.tok), Some(Tok::RParen))
        {
            self.next();
            let (abbr, _, _) = self.take_word("abbreviation")?;
            self.expect(Tok::RParen, "`)`")?;
            if matches!(self.peek(), Some(t) if t.glued && matches!(t.tok, Tok::Word(_))) {
                // Mid-name abbreviation: colo(u)r.
                let (rest, _, _) = self.take_word("name")?;
                let offset = name.local.len();
                let full = format!("{}{}{}", name.local, abbr, rest);
                return Ok((
                    QualifiedName {
                        prefix: name.prefix,
                        local: full,
                    },
                    Some(Abbrev {
                        text: abbr,
                        offset: Some(offset),
                    }),
                    span,
                ));
            }
            // Trailing alias: the abbreviation names the parameter in the
            // body but is not part of the declared name.
            return Ok((
                name,
                Some(Abbrev {
                    text: abbr,
                    offset: None,
                }),
                span,
            ));
        }
        Ok((name, None, span))
    }

    /// A possibly prefixed name. A glued colon joins `prefix:local` only when
    /// the prefix is declared in the preamble or is a recognized IRI scheme;
    /// otherwise the colon is left for the caller (constraint separator).
    fn qualified_name(&mut self, expected: &str) -> Result<(QualifiedName, Span), SyntaxError> {
        let (word, span, _) = match self.peek() {
            Some(t) if matches!(t.tok, Tok::Word(_)) => self.take_word(expected)?,
            _ => return Err(self.err(expected)),
        };
        if reserved(&word) {
            return Err(SyntaxError::new(
                span.line,
                span.col,
                format!("reserved word `{word}` cannot be used as a name"),
            ));
        }
        let joinable = self.prefixes.contains(&word) || RECOGNIZED_SCHEMES.contains(&word.as_str());
        if joinable && matches!(self.peek(), Some(t) if t.glued && t.tok == Tok::Colon) {
            self.next();
            let mut local = match self.peek() {
                Some(t) if t.glued => match t.tok.clone() {
                    Tok::Word(w) => {
                        self.next();
                        w
                    }
                    _ => return Err(self.err("name after prefix")),
                },
                _ => return Err(self.err("name after prefix")),
            };
            while matches!(self.peek(), Some(t) if t.glued && t.tok == Tok::Colon)
                && matches!(self.peek_at(1), Some(t) if t.glued && matches!(t.tok, Tok::Word(_)))
            {
                self.next();
                if let Some(Tok::Word(w)) = self.peek().map(|t| t.tok.clone()) {
                    self.next();
                    local.push(':');
                    local.push_str(&w);
                }
            }
            if RECOGNIZED_SCHEMES.contains(&word.as_str()) {
                // Absolute IRI: keep the whole text as the local part.
                return Ok((QualifiedName::plain(format!("{word}:{local}")), span));
            }
            return Ok((QualifiedName::prefixed(word, local), span));
        }
        Ok((QualifiedName::plain(word), span))
    }
}
